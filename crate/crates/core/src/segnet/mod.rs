//! Miniature U-Net with a pluggable upsampler at every decoder level.
//!
//! Level `l` runs at `1 / 2^l` resolution with `base * 2^l` channels. Each
//! encoder level is two 3x3(x3) convolutions with rectifiers, followed by a
//! 2x max pool on all but the deepest level. Decoder level `l` upsamples the
//! level `l + 1` features, concatenates the level `l` skip connection and
//! applies two more convolutions. A 1x1 convolution produces the logit.

mod checkpoint;
mod count;
mod net;

use std::fmt;
use std::str::FromStr;

use crate::dtc::{init_dtc, AblationSwitches, BaseKind, BaseUpsampler, DtcParams, ReceptiveField};
use crate::error::{Error, Result};
use crate::ops::{ConvSpec, TConvSpec};
use crate::rng::{stream_id, SplitMix64};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE, PARAMS_FILE};
pub use count::{count_params_flops, Cost};
pub use net::{unet_backward, unet_forward, unet_forward_traced, UNetTrace};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Upsampler {
    Nearest,
    LinearInterp,
    TransposedConv,
    DtcOverLinear(ReceptiveField, AblationSwitches),
    DtcOverTransposed(ReceptiveField, AblationSwitches),
}

impl Upsampler {
    pub const NAMES: [&'static str; 5] = ["nearest", "linear", "tc", "dtc_over_linear", "dtc_over_tc"];

    pub fn name(&self) -> &'static str {
        match self {
            Upsampler::Nearest => "nearest",
            Upsampler::LinearInterp => "linear",
            Upsampler::TransposedConv => "tc",
            Upsampler::DtcOverLinear(..) => "dtc_over_linear",
            Upsampler::DtcOverTransposed(..) => "dtc_over_tc",
        }
    }

    /// Parse a variant name, attaching `r` and `switches` to DTC variants.
    pub fn parse(name: &str, r: ReceptiveField, switches: AblationSwitches) -> Result<Self> {
        Ok(match name {
            "nearest" => Upsampler::Nearest,
            "linear" => Upsampler::LinearInterp,
            "tc" | "transposed_conv" => Upsampler::TransposedConv,
            "dtc_over_linear" | "dtc_linear" => Upsampler::DtcOverLinear(r, switches),
            "dtc_over_tc" | "dtc_tc" => Upsampler::DtcOverTransposed(r, switches),
            other => {
                return Err(Error::Config(format!(
                    "unknown upsampler {other:?} (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn is_dtc(&self) -> bool {
        matches!(self, Upsampler::DtcOverLinear(..) | Upsampler::DtcOverTransposed(..))
    }

    pub fn dtc_settings(&self) -> Option<(ReceptiveField, AblationSwitches)> {
        match *self {
            Upsampler::DtcOverLinear(r, s) | Upsampler::DtcOverTransposed(r, s) => Some((r, s)),
            _ => None,
        }
    }

    /// The same variant without the deformable branch.
    pub fn base_variant(&self) -> Upsampler {
        match self {
            Upsampler::DtcOverLinear(..) => Upsampler::LinearInterp,
            Upsampler::DtcOverTransposed(..) => Upsampler::TransposedConv,
            other => *other,
        }
    }

    fn default_up_channels(&self) -> UpChannels {
        match self {
            Upsampler::TransposedConv | Upsampler::DtcOverTransposed(..) => UpChannels::Half,
            _ => UpChannels::Same,
        }
    }
}

impl fmt::Display for Upsampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Channels produced by an upsampler relative to its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpChannels {
    Same,
    Half,
}

impl FromStr for UpChannels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(UpChannels::Same),
            "half" => Ok(UpChannels::Half),
            other => Err(Error::Config(format!("up_channels must be same or half, got {other:?}"))),
        }
    }
}

impl fmt::Display for UpChannels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpChannels::Same => "same",
            UpChannels::Half => "half",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UNetConfig {
    pub spatial_rank: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub upsampler: Upsampler,
    /// `None` picks the variant default: `Half` for transposed-convolution
    /// bases, `Same` otherwise.
    pub up_channels: Option<UpChannels>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UNetConfig {
    pub fn new(spatial_rank: usize, upsampler: Upsampler) -> Self {
        Self {
            spatial_rank,
            depth: 3,
            base_channels: 8,
            upsampler,
            up_channels: None,
            in_channels: 1,
            out_channels: 1,
        }
    }

    pub fn with_upsampler(self, upsampler: Upsampler) -> Self {
        Self { upsampler, ..self }
    }

    pub fn up_channels(&self) -> UpChannels {
        self.up_channels.unwrap_or_else(|| self.upsampler.default_up_channels())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Channels leaving the upsampler of decoder level `level`.
    pub fn up_out_channels(&self, level: usize) -> usize {
        match self.up_channels() {
            UpChannels::Same => self.level_channels(level + 1),
            UpChannels::Half => self.level_channels(level),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.spatial_rank) {
            return Err(Error::Config(format!(
                "spatial rank must be 2 or 3, got {}",
                self.spatial_rank
            )));
        }
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.up_channels() == UpChannels::Half {
            match self.upsampler {
                Upsampler::DtcOverLinear(..) => {
                    return Err(Error::ChannelConstraint(
                        "dtc_over_linear sums with a linear interpolation that keeps the channel count; \
                         up_channels = half would need M != N"
                            .into(),
                    ))
                }
                Upsampler::Nearest | Upsampler::LinearInterp => {
                    return Err(Error::Config(format!(
                        "{} upsampling cannot change the channel count; use up_channels = same",
                        self.upsampler
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Input extents must be divisible by `2^(depth - 1)`.
    pub fn validate_input(&self, spatial: &[usize]) -> Result<()> {
        let f = 1usize << (self.depth - 1);
        if spatial.len() != self.spatial_rank || spatial.iter().any(|&s| s == 0 || s % f != 0) {
            return Err(Error::contract(
                "unet",
                format!(
                    "input extents {spatial:?} must have {} axes divisible by {f} (depth {})",
                    self.spatial_rank, self.depth
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    pub conv1: ConvSpec<T>,
    pub conv2: ConvSpec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum UpParams<T> {
    Nearest,
    Linear,
    TransposedConv(TConvSpec<T>),
    Dtc(Box<DtcParams<T>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLevel<T> {
    pub up: UpParams<T>,
    pub block: ConvBlock<T>,
}

/// Parameters of the network. `decoder[l]` produces level `l`; `decoder[0]`
/// holds the last (full-resolution) upsampler. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams<T> {
    pub encoder: Vec<ConvBlock<T>>,
    pub decoder: Vec<DecoderLevel<T>>,
    pub head: ConvSpec<T>,
}

fn conv_names(prefix: &str) -> [String; 2] {
    [format!("{prefix}.weight"), format!("{prefix}.bias")]
}

fn push_conv<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, c: &'a ConvSpec<T>) {
    let [w, b] = conv_names(prefix);
    out.push((w, &c.kernel));
    if let Some(bias) = &c.bias {
        out.push((b, bias));
    }
}

fn push_tconv<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, c: &'a TConvSpec<T>) {
    let [w, b] = conv_names(prefix);
    out.push((w, &c.kernel));
    if let Some(bias) = &c.bias {
        out.push((b, bias));
    }
}

fn push_conv_mut<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, prefix: &str, c: &'a mut ConvSpec<T>) {
    let [w, b] = conv_names(prefix);
    out.push((w, &mut c.kernel));
    if let Some(bias) = &mut c.bias {
        out.push((b, bias));
    }
}

fn push_tconv_mut<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, prefix: &str, c: &'a mut TConvSpec<T>) {
    let [w, b] = conv_names(prefix);
    out.push((w, &mut c.kernel));
    if let Some(bias) = &mut c.bias {
        out.push((b, bias));
    }
}

impl<T: Scalar> UNetParams<T> {
    /// Named tensors in a fixed order, e.g. `enc0.conv1.weight`,
    /// `dec1.up.mix`, `dec0.up.gen.weight`, `head.bias`.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (l, b) in self.encoder.iter().enumerate() {
            push_conv(&mut out, &format!("enc{l}.conv1"), &b.conv1);
            push_conv(&mut out, &format!("enc{l}.conv2"), &b.conv2);
        }
        for (l, d) in self.decoder.iter().enumerate() {
            match &d.up {
                UpParams::Nearest | UpParams::Linear => {}
                UpParams::TransposedConv(t) => push_tconv(&mut out, &format!("dec{l}.up"), t),
                UpParams::Dtc(p) => {
                    out.push((format!("dec{l}.up.mix"), &p.mix.kernel));
                    push_tconv(&mut out, &format!("dec{l}.up.gen"), &p.gen);
                    if let BaseUpsampler::TransposedConv(t) = &p.base {
                        push_tconv(&mut out, &format!("dec{l}.up.base"), t);
                    }
                }
            }
            push_conv(&mut out, &format!("dec{l}.conv1"), &d.block.conv1);
            push_conv(&mut out, &format!("dec{l}.conv2"), &d.block.conv2);
        }
        push_conv(&mut out, "head", &self.head);
        out
    }

    /// Mutable view in the same order as [`UNetParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (l, b) in self.encoder.iter_mut().enumerate() {
            push_conv_mut(&mut out, &format!("enc{l}.conv1"), &mut b.conv1);
            push_conv_mut(&mut out, &format!("enc{l}.conv2"), &mut b.conv2);
        }
        for (l, d) in self.decoder.iter_mut().enumerate() {
            match &mut d.up {
                UpParams::Nearest | UpParams::Linear => {}
                UpParams::TransposedConv(t) => push_tconv_mut(&mut out, &format!("dec{l}.up"), t),
                UpParams::Dtc(p) => {
                    let p = &mut **p;
                    out.push((format!("dec{l}.up.mix"), &mut p.mix.kernel));
                    push_tconv_mut(&mut out, &format!("dec{l}.up.gen"), &mut p.gen);
                    if let BaseUpsampler::TransposedConv(t) = &mut p.base {
                        push_tconv_mut(&mut out, &format!("dec{l}.up.base"), t);
                    }
                }
            }
            push_conv_mut(&mut out, &format!("dec{l}.conv1"), &mut d.block.conv1);
            push_conv_mut(&mut out, &format!("dec{l}.conv2"), &mut d.block.conv2);
        }
        push_conv_mut(&mut out, "head", &mut self.head);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Same structure with every tensor set to zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.named_mut().into_iter().for_each(|(_, t)| t.fill(T::zero()));
        z
    }

    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        let conv = |c: &ConvSpec<T>| ConvSpec {
            kernel: c.kernel.cast(),
            bias: c.bias.as_ref().map(Tensor::cast),
            stride: c.stride.clone(),
            padding: c.padding.clone(),
        };
        let tconv = |c: &TConvSpec<T>| TConvSpec {
            kernel: c.kernel.cast(),
            bias: c.bias.as_ref().map(Tensor::cast),
            stride: c.stride.clone(),
            padding: c.padding.clone(),
        };
        let block = |b: &ConvBlock<T>| ConvBlock {
            conv1: conv(&b.conv1),
            conv2: conv(&b.conv2),
        };
        UNetParams {
            encoder: self.encoder.iter().map(block).collect(),
            decoder: self
                .decoder
                .iter()
                .map(|d| DecoderLevel {
                    up: match &d.up {
                        UpParams::Nearest => UpParams::Nearest,
                        UpParams::Linear => UpParams::Linear,
                        UpParams::TransposedConv(t) => UpParams::TransposedConv(tconv(t)),
                        UpParams::Dtc(p) => UpParams::Dtc(Box::new(DtcParams {
                            mix: conv(&p.mix),
                            gen: tconv(&p.gen),
                            receptive_field: p.receptive_field,
                            scale: p.scale,
                            base: match &p.base {
                                BaseUpsampler::LinearInterp => BaseUpsampler::LinearInterp,
                                BaseUpsampler::TransposedConv(t) => BaseUpsampler::TransposedConv(tconv(t)),
                            },
                            switches: p.switches,
                        })),
                    },
                    block: block(&d.block),
                })
                .collect(),
            head: conv(&self.head),
        }
    }

    /// DTC units by decoder level.
    pub fn dtc_units(&self) -> Vec<(usize, &DtcParams<T>)> {
        self.decoder
            .iter()
            .enumerate()
            .filter_map(|(l, d)| match &d.up {
                UpParams::Dtc(p) => Some((l, &**p)),
                _ => None,
            })
            .collect()
    }
}

fn stream(seed: u64, name: &str) -> SplitMix64 {
    SplitMix64::keyed(seed, 0, stream_id(name))
}

/// `U(-a, a)` with `a = sqrt(1 / fan_in)` for kernel and bias.
fn uniform_fan_in<T: Scalar>(dims: &[usize], fan_in: usize, rng: &mut SplitMix64) -> Tensor<T> {
    let a = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(dims, |_| T::of(rng.range(-a, a)))
}

fn init_conv<T: Scalar>(name: &str, cin: usize, cout: usize, k: usize, g: usize, seed: u64) -> Result<ConvSpec<T>> {
    let mut dims = vec![cout, cin];
    dims.extend(std::iter::repeat_n(k, g));
    let fan_in = cin * k.pow(g as u32);
    let mut rng = stream(seed, name);
    let kernel = uniform_fan_in(&dims, fan_in, &mut rng);
    let bias = uniform_fan_in(&[cout], fan_in, &mut rng);
    ConvSpec::new(kernel, vec![1; g], vec![k / 2; g])?.with_bias(bias)
}

/// 2x transposed convolution, kernel 2, stride 2.
fn init_up_tconv<T: Scalar>(name: &str, cin: usize, cout: usize, g: usize, seed: u64) -> Result<TConvSpec<T>> {
    let mut dims = vec![cin, cout];
    dims.extend(std::iter::repeat_n(2, g));
    let fan_in = cin << g;
    let mut rng = stream(seed, name);
    let kernel = uniform_fan_in(&dims, fan_in, &mut rng);
    let bias = uniform_fan_in(&[cout], fan_in, &mut rng);
    TConvSpec::new(kernel, vec![2; g], vec![0; g])?.with_bias(bias)
}

fn init_block<T: Scalar>(prefix: &str, cin: usize, cout: usize, g: usize, seed: u64) -> Result<ConvBlock<T>> {
    Ok(ConvBlock {
        conv1: init_conv(&format!("{prefix}.conv1"), cin, cout, 3, g, seed)?,
        conv2: init_conv(&format!("{prefix}.conv2"), cout, cout, 3, g, seed)?,
    })
}

/// Deterministic initialization. Every tensor draws from its own stream keyed
/// by its name, so layers shared between variants start identical. DTC
/// generators start at zero.
pub fn build_unet<T: Scalar>(cfg: &UNetConfig, seed: u64) -> Result<UNetParams<T>> {
    cfg.validate()?;
    let g = cfg.spatial_rank;
    let mut encoder = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let cin = if l == 0 { cfg.in_channels } else { cfg.level_channels(l - 1) };
        encoder.push(init_block(&format!("enc{l}"), cin, cfg.level_channels(l), g, seed)?);
    }
    let mut decoder = Vec::with_capacity(cfg.depth - 1);
    for l in 0..cfg.depth - 1 {
        let (n, m) = (cfg.level_channels(l + 1), cfg.up_out_channels(l));
        let base_name = format!("dec{l}.up");
        let up = match cfg.upsampler {
            Upsampler::Nearest => UpParams::Nearest,
            Upsampler::LinearInterp => UpParams::Linear,
            Upsampler::TransposedConv => UpParams::TransposedConv(init_up_tconv(&base_name, n, m, g, seed)?),
            Upsampler::DtcOverLinear(r, sw) | Upsampler::DtcOverTransposed(r, sw) => {
                let kind = if matches!(cfg.upsampler, Upsampler::DtcOverLinear(..)) {
                    BaseKind::LinearInterp
                } else {
                    BaseKind::TransposedConv
                };
                let mut p = init_dtc::<T>(n, m, g, 2, r, kind, sw, seed)?;
                let a = (1.0 / n as f64).sqrt();
                let mut rng = stream(seed, &format!("{base_name}.mix"));
                p.mix.kernel = Tensor::from_fn(p.mix.kernel.dims(), |_| T::of(rng.range(-a, a)));
                if kind == BaseKind::TransposedConv {
                    p.base = BaseUpsampler::TransposedConv(init_up_tconv(&base_name, n, m, g, seed)?);
                }
                UpParams::Dtc(Box::new(DtcParams::new(
                    p.mix,
                    p.gen,
                    p.receptive_field,
                    p.scale,
                    p.base,
                    p.switches,
                )?))
            }
        };
        let block = init_block(&format!("dec{l}"), m + cfg.level_channels(l), cfg.level_channels(l), g, seed)?;
        decoder.push(DecoderLevel { up, block });
    }
    let head = init_conv("head", cfg.base_channels, cfg.out_channels, 1, g, seed)?;
    Ok(UNetParams { encoder, decoder, head })
}
