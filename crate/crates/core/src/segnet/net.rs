use crate::dtc::{dtc_backward, dtc_forward_traced, BaseUpsampler, DtcTrace};
use crate::error::{Error, Result};
use crate::ops::layers::{
    concat_channels, max_pool2, max_pool2_backward, nearest_upsample2, nearest_upsample2_backward, relu,
    relu_backward, split_channels, Pooled,
};
use crate::ops::{conv_backward, conv_forward, interp_upsample, interp_upsample_backward, tconv_backward, tconv_forward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{ConvBlock, UNetConfig, UNetParams, UpParams};

#[derive(Clone, Debug)]
struct BlockTrace<T> {
    input: Tensor<T>,
    pre1: Tensor<T>,
    act1: Tensor<T>,
    pre2: Tensor<T>,
}

#[derive(Clone, Debug)]
enum UpTrace<T> {
    Resample(Vec<usize>),
    TransposedConv(Tensor<T>),
    Dtc(Box<DtcTrace<T>>),
}

/// Intermediates of [`unet_forward_traced`].
#[derive(Clone, Debug)]
pub struct UNetTrace<T> {
    encoder: Vec<BlockTrace<T>>,
    pools: Vec<Pooled<T>>,
    /// Indexed by decoder level.
    ups: Vec<UpTrace<T>>,
    up_channels: Vec<usize>,
    decoder: Vec<BlockTrace<T>>,
    head_input: Tensor<T>,
}

impl<T: Scalar> UNetTrace<T> {
    /// DTC traces by decoder level (level 0 is the last upsampling).
    pub fn dtc(&self, level: usize) -> Option<&DtcTrace<T>> {
        match self.ups.get(level)? {
            UpTrace::Dtc(t) => Some(t),
            _ => None,
        }
    }

    /// Pre-activations of every rectifier.
    pub fn relu_inputs(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|b| [&b.pre1, &b.pre2])
    }

    /// Gap between the selected maximum and the runner-up of every pooling
    /// window.
    pub fn min_pool_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for (p, b) in self.pools.iter().zip(&self.encoder) {
            let x = relu(&b.pre2);
            let g = x.rank() - 2;
            let spatial = x.spatial().to_vec();
            let (w, h) = (spatial[g - 1], spatial[g - 2]);
            let iv: usize = spatial.iter().product();
            let ov = iv >> g;
            for (o, &arg) in p.argmax.iter().enumerate() {
                let plane = o / ov;
                let src = &x.data()[plane * iv..(plane + 1) * iv];
                let best = src[arg as usize];
                let a = arg as usize;
                let (x0, y0) = ((a % w) & !1, ((a / w) % h) & !1);
                let z0 = if g == 3 { (a / (w * h)) & !1 } else { 0 };
                let kd = if g == 3 { 2 } else { 1 };
                for dz in 0..kd {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((z0 + dz) * h + y0 + dy) * w + x0 + dx;
                            if i != a {
                                gap = gap.min((best - src[i]).as_f64());
                            }
                        }
                    }
                }
            }
        }
        gap
    }
}

fn block_forward<T: Scalar>(b: &ConvBlock<T>, input: Tensor<T>) -> Result<(Tensor<T>, BlockTrace<T>)> {
    let pre1 = conv_forward(&input, &b.conv1)?;
    let act1 = relu(&pre1);
    let pre2 = conv_forward(&act1, &b.conv2)?;
    let out = relu(&pre2);
    Ok((out, BlockTrace { input, pre1, act1, pre2 }))
}

fn block_backward<T: Scalar>(b: &ConvBlock<T>, t: &BlockTrace<T>, grad: &Tensor<T>, out: &mut ConvBlock<T>) -> Result<Tensor<T>> {
    let g2 = conv_backward(&t.act1, &b.conv2, &relu_backward(&t.pre2, grad)?)?;
    let g1 = conv_backward(&t.input, &b.conv1, &relu_backward(&t.pre1, &g2.input)?)?;
    out.conv2.kernel = g2.kernel;
    out.conv2.bias = g2.bias;
    out.conv1.kernel = g1.kernel;
    out.conv1.bias = g1.bias;
    Ok(g1.input)
}

fn up_forward<T: Scalar>(up: &UpParams<T>, x: &Tensor<T>) -> Result<(Tensor<T>, UpTrace<T>)> {
    Ok(match up {
        UpParams::Nearest => (nearest_upsample2(x)?, UpTrace::Resample(x.dims().to_vec())),
        UpParams::Linear => (interp_upsample(x, 2)?, UpTrace::Resample(x.dims().to_vec())),
        UpParams::TransposedConv(spec) => (tconv_forward(x, spec)?, UpTrace::TransposedConv(x.clone())),
        UpParams::Dtc(p) => {
            let (y, t) = dtc_forward_traced(x, p)?;
            (y, UpTrace::Dtc(Box::new(t)))
        }
    })
}

fn up_backward<T: Scalar>(up: &UpParams<T>, t: &UpTrace<T>, grad: &Tensor<T>, out: &mut UpParams<T>) -> Result<Tensor<T>> {
    match (up, t, out) {
        (UpParams::Nearest, UpTrace::Resample(dims), _) => nearest_upsample2_backward(dims, grad),
        (UpParams::Linear, UpTrace::Resample(dims), _) => interp_upsample_backward(dims, 2, grad),
        (UpParams::TransposedConv(spec), UpTrace::TransposedConv(x), UpParams::TransposedConv(o)) => {
            let g = tconv_backward(x, spec, grad)?;
            o.kernel = g.kernel;
            o.bias = g.bias;
            Ok(g.input)
        }
        (UpParams::Dtc(p), UpTrace::Dtc(tr), UpParams::Dtc(o)) => {
            let g = dtc_backward(p, tr, grad)?;
            o.mix.kernel = g.mix_kernel;
            o.gen.kernel = g.gen_kernel;
            o.gen.bias = g.gen_bias;
            if let (BaseUpsampler::TransposedConv(b), Some(k)) = (&mut o.base, g.base_kernel) {
                b.kernel = k;
                b.bias = g.base_bias;
            }
            Ok(g.input)
        }
        _ => Err(Error::contract("unet_backward", "trace does not match parameters")),
    }
}

fn check_input<T: Scalar>(params: &UNetParams<T>, cfg: &UNetConfig, input: &Tensor<T>) -> Result<()> {
    if input.rank() != cfg.spatial_rank + 2 || input.channels() != cfg.in_channels {
        return Err(Error::contract(
            "unet_forward",
            format!(
                "expected [B, {}, {} spatial axes], got {}",
                cfg.in_channels,
                cfg.spatial_rank,
                input.shape()
            ),
        ));
    }
    if params.encoder.len() != cfg.depth || params.decoder.len() + 1 != cfg.depth {
        return Err(Error::contract("unet_forward", "parameters do not match the configured depth"));
    }
    cfg.validate_input(input.spatial())
}

pub fn unet_forward_traced<T: Scalar>(
    params: &UNetParams<T>,
    cfg: &UNetConfig,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, UNetTrace<T>)> {
    check_input(params, cfg, input)?;
    let depth = cfg.depth;
    let mut encoder = Vec::with_capacity(depth);
    let mut pools = Vec::with_capacity(depth - 1);
    let mut skips = Vec::with_capacity(depth - 1);
    let mut x = input.clone();
    for (l, block) in params.encoder.iter().enumerate() {
        let (y, t) = block_forward(block, x)?;
        encoder.push(t);
        if l + 1 < depth {
            let p = max_pool2(&y)?;
            x = p.output.clone();
            pools.push(p);
            skips.push(y);
        } else {
            x = y;
        }
    }
    let mut ups: Vec<Option<UpTrace<T>>> = vec![None; depth - 1];
    let mut decoder: Vec<Option<BlockTrace<T>>> = vec![None; depth - 1];
    let mut up_channels = vec![0; depth - 1];
    for l in (0..depth - 1).rev() {
        let d = &params.decoder[l];
        let (u, ut) = up_forward(&d.up, &x)?;
        up_channels[l] = u.channels();
        let (y, bt) = block_forward(&d.block, concat_channels(&u, &skips[l])?)?;
        ups[l] = Some(ut);
        decoder[l] = Some(bt);
        x = y;
    }
    let logits = conv_forward(&x, &params.head)?;
    logits.ensure_finite("unet_forward")?;
    Ok((
        logits,
        UNetTrace {
            encoder,
            pools,
            ups: ups.into_iter().map(Option::unwrap).collect(),
            up_channels,
            decoder: decoder.into_iter().map(Option::unwrap).collect(),
            head_input: x,
        },
    ))
}

/// `[B, in, S...]` -> logits `[B, out, S...]`.
pub fn unet_forward<T: Scalar>(params: &UNetParams<T>, cfg: &UNetConfig, input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(unet_forward_traced(params, cfg, input)?.0)
}

/// Gradients of every parameter (same structure as `params`) and of the input.
pub fn unet_backward<T: Scalar>(
    params: &UNetParams<T>,
    trace: &UNetTrace<T>,
    grad_logits: &Tensor<T>,
) -> Result<(UNetParams<T>, Tensor<T>)> {
    let depth = params.encoder.len();
    let mut grads = params.clone();
    let h = conv_backward(&trace.head_input, &params.head, grad_logits)?;
    grads.head.kernel = h.kernel;
    grads.head.bias = h.bias;
    let mut g = h.input;
    let mut skip_grads = Vec::with_capacity(depth - 1);
    for l in 0..depth - 1 {
        let d = &params.decoder[l];
        let out = &mut grads.decoder[l];
        let g_cat = block_backward(&d.block, &trace.decoder[l], &g, &mut out.block)?;
        let (g_up, g_skip) = split_channels(&g_cat, trace.up_channels[l])?;
        skip_grads.push(g_skip);
        g = up_backward(&d.up, &trace.ups[l], &g_up, &mut out.up)?;
    }
    for l in (0..depth).rev() {
        if l + 1 < depth {
            let mut gy = max_pool2_backward(trace.encoder[l].pre2.dims(), &trace.pools[l], &g)?;
            gy.add_assign(&skip_grads[l])?;
            g = gy;
        }
        g = block_backward(&params.encoder[l], &trace.encoder[l], &g, &mut grads.encoder[l])?;
    }
    Ok((grads, g))
}
