//! Registered gradient checks: every reverse pass in the crate against
//! central differences on small randomized 64-bit instances.

use crate::dtc::{
    coordinate_gen, coordinate_gen_backward, deformed_coords, dtc_backward, dtc_forward, dtc_forward_traced,
    AblationSwitches, BaseUpsampler, DtcParams, ReceptiveField,
};
use crate::error::{Error, Result};
use crate::ops::grid::continuous_index;
use crate::ops::{
    conv_backward, conv_forward, grid_sample, grid_sample_backward, make_base_grid, tconv_backward, tconv_forward,
    ConvSpec, SampleGrid, TConvSpec,
};
use crate::rng::{stream_id, SplitMix64};
use crate::segnet::{build_unet, unet_backward, unet_forward, unet_forward_traced, UNetConfig, UNetTrace, Upsampler};
use crate::tensor::Tensor;
use crate::train::soft_dice_loss;

use super::{
    check_op, finite_diff_grad, finite_diff_vjp, GradCheckReport, GradSample, KINK_MARGIN, STEP, TOL_COMPOSITE,
    TOL_PRIMITIVE,
};

/// Rejection-sampling budget per trial.
const ATTEMPTS: usize = 200;
/// Minimum distance of rectifier inputs from 0 and of pooling maxima from the
/// runner-up in the network check.
const ACTIVATION_MARGIN: f64 = 1e-4;

type Trial = fn(usize, &mut SplitMix64) -> Result<Option<GradSample>>;

pub struct GradCase {
    pub name: &'static str,
    pub tol: f64,
    trial: Trial,
}

/// Every registered check, in report order.
pub fn registry() -> Vec<GradCase> {
    vec![
        GradCase { name: "conv", tol: TOL_PRIMITIVE, trial: conv_trial },
        GradCase { name: "tconv", tol: TOL_PRIMITIVE, trial: tconv_trial },
        GradCase { name: "grid_sample", tol: TOL_PRIMITIVE, trial: grid_sample_trial },
        GradCase { name: "coordinate_gen", tol: TOL_PRIMITIVE, trial: coordinate_gen_trial },
        GradCase { name: "dtc_2d", tol: TOL_COMPOSITE, trial: dtc2_trial },
        GradCase { name: "dtc_3d", tol: TOL_COMPOSITE, trial: dtc3_trial },
        GradCase { name: "soft_dice", tol: TOL_PRIMITIVE, trial: soft_dice_trial },
        GradCase { name: "unet", tol: TOL_COMPOSITE, trial: unet_trial },
    ]
}

pub fn op_names() -> Vec<&'static str> {
    registry().iter().map(|c| c.name).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOptions {
    pub trials: usize,
    /// Overrides every case's tolerance.
    pub tol: Option<f64>,
    /// Exact names or prefixes before `_` (`dtc` selects `dtc_2d` and `dtc_3d`).
    pub filter: Vec<String>,
    pub seed: u64,
    /// Test hook: flip the sign of every analytic gradient.
    pub inject_sign_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            tol: None,
            filter: Vec::new(),
            seed: 0,
            inject_sign_fault: false,
        }
    }
}

fn selected(name: &str, filter: &[String]) -> bool {
    filter.is_empty()
        || filter
            .iter()
            .any(|f| name == f || name.strip_prefix(f.as_str()).is_some_and(|r| r.starts_with('_')))
}

/// Run the selected checks. Unknown filter entries are an error.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let cases = registry();
    for f in &opts.filter {
        if !cases.iter().any(|c| selected(c.name, std::slice::from_ref(f))) {
            return Err(Error::Config(format!(
                "unknown gradcheck op {f:?} (known: {})",
                op_names().join(", ")
            )));
        }
    }
    Ok(cases
        .iter()
        .filter(|c| selected(c.name, &opts.filter))
        .map(|c| run_case(c, opts))
        .collect())
}

pub fn run_case(case: &GradCase, opts: &SuiteOptions) -> GradCheckReport {
    let tol = opts.tol.unwrap_or(case.tol);
    check_op(case.name, opts.trials, tol, |t| {
        let mut rng = SplitMix64::keyed(opts.seed, t as u64, stream_id(case.name));
        for _ in 0..ATTEMPTS {
            if let Some(mut s) = (case.trial)(t, &mut rng)? {
                if opts.inject_sign_fault {
                    s.analytic.iter_mut().for_each(|v| *v = -*v);
                }
                return Ok(s);
            }
        }
        Err(Error::contract("gradcheck", "no kink-free instance found"))
    })
}

fn normal(dims: &[usize], scale: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| scale * rng.normal())
}

fn between(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn feature_dims(b: usize, c: usize, spatial: &[usize]) -> Vec<usize> {
    let mut d = vec![b, c];
    d.extend_from_slice(spatial);
    d
}

fn kernel_dims(a: usize, b: usize, k: usize, g: usize) -> Vec<usize> {
    let mut d = vec![a, b];
    d.extend(std::iter::repeat_n(k, g));
    d
}

fn conv_trial(_: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    let g = between(rng, 2, 3);
    let (b, cin, cout) = (between(rng, 1, 2), between(rng, 1, 3), between(rng, 1, 3));
    let k = between(rng, 1, 3);
    let stride: Vec<usize> = (0..g).map(|_| between(rng, 1, 2)).collect();
    let pad: Vec<usize> = (0..g).map(|_| rng.below(2)).collect();
    let hi = if g == 2 { 6 } else { 4 };
    let spatial: Vec<usize> = (0..g).map(|_| between(rng, k.max(2), hi)).collect();
    let x = normal(&feature_dims(b, cin, &spatial), 1.0, rng);
    let spec = ConvSpec::new(normal(&kernel_dims(cout, cin, k, g), 1.0, rng), stride, pad)?
        .with_bias(normal(&[cout], 1.0, rng))?;
    let y = conv_forward(&x, &spec)?;
    let r = normal(y.dims(), 1.0, rng);
    let grads = conv_backward(&x, &spec, &r)?;

    let mut s = GradSample::default();
    s.push(&grads.input, &finite_diff_vjp(|t| conv_forward(t, &spec), &x, &r, STEP)?);
    let with_kernel = |k: &Tensor<f64>| ConvSpec { kernel: k.clone(), ..spec.clone() };
    s.push(
        &grads.kernel,
        &finite_diff_vjp(|k| conv_forward(&x, &with_kernel(k)), &spec.kernel, &r, STEP)?,
    );
    let bias = spec.bias.clone().unwrap();
    let with_bias = |v: &Tensor<f64>| ConvSpec { bias: Some(v.clone()), ..spec.clone() };
    s.push(
        grads.bias.as_ref().unwrap(),
        &finite_diff_vjp(|v| conv_forward(&x, &with_bias(v)), &bias, &r, STEP)?,
    );
    Ok(Some(s))
}

fn tconv_trial(_: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    let g = between(rng, 2, 3);
    let (b, cin, cout) = (between(rng, 1, 2), between(rng, 1, 3), between(rng, 1, 3));
    let k = between(rng, 1, 4);
    let stride: Vec<usize> = (0..g).map(|_| between(rng, 1, 2)).collect();
    let pad: Vec<usize> = (0..g).map(|_| rng.below(k.div_ceil(2))).collect();
    let hi = if g == 2 { 5 } else { 3 };
    let spatial: Vec<usize> = (0..g).map(|_| between(rng, 1, hi)).collect();
    let spec = TConvSpec::new(normal(&kernel_dims(cin, cout, k, g), 1.0, rng), stride, pad)?
        .with_bias(normal(&[cout], 1.0, rng))?;
    if spec.output_spatial(&spatial).is_err() {
        return Ok(None);
    }
    let x = normal(&feature_dims(b, cin, &spatial), 1.0, rng);
    let y = tconv_forward(&x, &spec)?;
    let r = normal(y.dims(), 1.0, rng);
    let grads = tconv_backward(&x, &spec, &r)?;

    let mut s = GradSample::default();
    s.push(&grads.input, &finite_diff_vjp(|t| tconv_forward(t, &spec), &x, &r, STEP)?);
    let with_kernel = |k: &Tensor<f64>| TConvSpec { kernel: k.clone(), ..spec.clone() };
    s.push(
        &grads.kernel,
        &finite_diff_vjp(|k| tconv_forward(&x, &with_kernel(k)), &spec.kernel, &r, STEP)?,
    );
    let bias = spec.bias.clone().unwrap();
    let with_bias = |v: &Tensor<f64>| TConvSpec { bias: Some(v.clone()), ..spec.clone() };
    s.push(
        grads.bias.as_ref().unwrap(),
        &finite_diff_vjp(|v| tconv_forward(&x, &with_bias(v)), &bias, &r, STEP)?,
    );
    Ok(Some(s))
}

/// Distance of a continuous index from the nearest interpolation kink
/// (integers inside `[0, n - 1]`).
fn kink_distance(u: f64, n: usize) -> f64 {
    let nearest = u.round().clamp(0.0, (n - 1) as f64);
    (u - nearest).abs()
}

/// True when every (clamped) grid coordinate stays clear of kinks on an
/// input with spatial extents `extents`.
fn grid_clear_of_kinks(grid: &SampleGrid<f64>, extents: &[usize]) -> bool {
    let g = grid.rank();
    grid.coords()
        .data()
        .iter()
        .enumerate()
        .all(|(i, &c)| kink_distance(continuous_index(c, extents[i % g]), extents[i % g]) >= KINK_MARGIN)
}

fn grid_sample_trial(_: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    let g = between(rng, 2, 3);
    let (b, c) = (between(rng, 1, 2), between(rng, 1, 3));
    let hi = if g == 2 { 6 } else { 4 };
    let spatial: Vec<usize> = (0..g).map(|_| between(rng, 1, hi)).collect();
    let out: Vec<usize> = (0..g).map(|_| between(rng, 1, hi)).collect();
    let x = normal(&feature_dims(b, c, &spatial), 1.0, rng);
    let positions: usize = out.iter().product();
    let mut coords = Vec::with_capacity(b * positions * g);
    for _ in 0..b * positions {
        for &n in &spatial {
            let u = loop {
                let u = rng.range(-0.7, n as f64 - 0.3);
                if kink_distance(u, n) >= KINK_MARGIN {
                    break u;
                }
            };
            coords.push((2.0 * u + 1.0) / n as f64 - 1.0);
        }
    }
    let mut gdims = vec![b];
    gdims.extend(&out);
    gdims.push(g);
    let grid = SampleGrid::new(Tensor::from_vec(&gdims, coords)?)?;
    let y = grid_sample(&x, &grid)?;
    let r = normal(y.dims(), 1.0, rng);
    let (gx, gg) = grid_sample_backward(&x, &grid, &r)?;

    let mut s = GradSample::default();
    s.push(&gx, &finite_diff_vjp(|t| grid_sample(t, &grid), &x, &r, STEP)?);
    let numeric = finite_diff_vjp(
        |c| grid_sample(&x, &SampleGrid::new(c.clone())?),
        grid.coords(),
        &r,
        STEP,
    )?;
    s.push(&gg, &numeric);
    Ok(Some(s))
}

fn switches_for(trial: usize) -> AblationSwitches {
    AblationSwitches::ablation_rows()[trial % 6]
}

fn coordinate_gen_trial(trial: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    let g = between(rng, 2, 3);
    let b = between(rng, 1, 2);
    let hi = if g == 2 { 6 } else { 4 };
    let out: Vec<usize> = (0..g).map(|_| between(rng, 1, hi)).collect();
    let lambda: Vec<f64> = (0..g).map(|_| rng.range(0.05, 1.0)).collect();
    let sw = switches_for(trial);
    let base = make_base_grid::<f64>(b, &out, g)?;
    let raw_dims = feature_dims(b, g, &out);
    let off = normal(&raw_dims, 1.0, rng);
    let w = normal(&raw_dims, 1.0, rng);
    let coords = deformed_coords(&off, &w, &lambda, &base, sw)?;
    if coords.data().iter().any(|c| (c.abs() - 1.0).abs() < KINK_MARGIN) {
        return Ok(None);
    }
    let r = normal(coords.dims(), 1.0, rng);
    let (g_off, g_w) = coordinate_gen_backward(&off, &w, &lambda, sw, &coords, &r)?;
    let gen = |o: &Tensor<f64>, w: &Tensor<f64>| Ok(coordinate_gen(o, w, &lambda, &base, sw)?.into_coords());

    let mut s = GradSample::default();
    s.push(&g_off, &finite_diff_vjp(|o| gen(o, &w), &off, &r, STEP)?);
    s.push(&g_w, &finite_diff_vjp(|v| gen(&off, v), &w, &r, STEP)?);
    Ok(Some(s))
}

fn random_dtc(g: usize, trial: usize, rng: &mut SplitMix64) -> Result<(DtcParams<f64>, Vec<usize>, usize)> {
    let (n, b) = (between(rng, 1, 3), between(rng, 1, 2));
    let over_tc = trial % 2 == 1;
    let m = if over_tc { between(rng, 1, 3) } else { n };
    let s = if g == 2 { between(rng, 1, 3) } else { between(rng, 1, 2) };
    let hi = if g == 2 { 4 } else { 3 };
    let spatial: Vec<usize> = (0..g).map(|_| between(rng, 2, hi)).collect();
    let r = match rng.below(4) {
        0 => ReceptiveField::Infinite,
        1 => ReceptiveField::Finite(1.0),
        2 => ReceptiveField::Finite(2.0),
        _ => ReceptiveField::Finite(0.5),
    };
    let (k, stride, pad) = crate::dtc::generator_geometry(s);
    let mix = ConvSpec::new(normal(&kernel_dims(m, n, 1, g), 1.0, rng), vec![1; g], vec![0; g])?;
    let gen = TConvSpec::new(normal(&kernel_dims(n, 2 * g, k, g), 0.7, rng), vec![stride; g], vec![pad; g])?
        .with_bias(normal(&[2 * g], 0.5, rng))?;
    let base = if over_tc {
        BaseUpsampler::TransposedConv(
            TConvSpec::new(normal(&kernel_dims(n, m, s, g), 1.0, rng), vec![s; g], vec![0; g])?
                .with_bias(normal(&[m], 1.0, rng))?,
        )
    } else {
        BaseUpsampler::LinearInterp
    };
    let p = DtcParams::new(mix, gen, r, s, base, switches_for(trial / 2))?;
    Ok((p, spatial, b))
}

fn dtc_trial(g: usize, trial: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    let (p, spatial, b) = random_dtc(g, trial, rng)?;
    let x = normal(&feature_dims(b, p.in_channels(), &spatial), 1.0, rng);
    let (y, tr) = dtc_forward_traced(&x, &p)?;
    if !grid_clear_of_kinks(&tr.grid, &spatial) {
        return Ok(None);
    }
    let r = normal(y.dims(), 1.0, rng);
    let grads = dtc_backward(&p, &tr, &r)?;
    let fwd = |x: &Tensor<f64>, p: &DtcParams<f64>| Ok(dtc_forward(x, p)?.0);

    let mut s = GradSample::default();
    s.push(&grads.input, &finite_diff_vjp(|t| fwd(t, &p), &x, &r, STEP)?);
    let numeric = finite_diff_vjp(
        |k| {
            let mut q = p.clone();
            q.mix.kernel = k.clone();
            fwd(&x, &q)
        },
        &p.mix.kernel,
        &r,
        STEP,
    )?;
    s.push(&grads.mix_kernel, &numeric);
    let numeric = finite_diff_vjp(
        |k| {
            let mut q = p.clone();
            q.gen.kernel = k.clone();
            fwd(&x, &q)
        },
        &p.gen.kernel,
        &r,
        STEP,
    )?;
    s.push(&grads.gen_kernel, &numeric);
    let numeric = finite_diff_vjp(
        |v| {
            let mut q = p.clone();
            q.gen.bias = Some(v.clone());
            fwd(&x, &q)
        },
        p.gen.bias.as_ref().unwrap(),
        &r,
        STEP,
    )?;
    s.push(grads.gen_bias.as_ref().unwrap(), &numeric);
    if let BaseUpsampler::TransposedConv(spec) = &p.base {
        let with = |k: Option<&Tensor<f64>>, v: Option<&Tensor<f64>>| {
            let mut q = p.clone();
            if let BaseUpsampler::TransposedConv(t) = &mut q.base {
                if let Some(k) = k {
                    t.kernel = k.clone();
                }
                if let Some(v) = v {
                    t.bias = Some(v.clone());
                }
            }
            q
        };
        let numeric = finite_diff_vjp(|k| fwd(&x, &with(Some(k), None)), &spec.kernel, &r, STEP)?;
        s.push(grads.base_kernel.as_ref().unwrap(), &numeric);
        let bias = spec.bias.as_ref().unwrap();
        let numeric = finite_diff_vjp(|v| fwd(&x, &with(None, Some(v))), bias, &r, STEP)?;
        s.push(grads.base_bias.as_ref().unwrap(), &numeric);
    }
    Ok(Some(s))
}

fn dtc2_trial(trial: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    dtc_trial(2, trial, rng)
}

fn dtc3_trial(trial: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    dtc_trial(3, trial, rng)
}

fn soft_dice_trial(_: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    let g = between(rng, 2, 3);
    let hi = if g == 2 { 6 } else { 4 };
    let spatial: Vec<usize> = (0..g).map(|_| between(rng, 2, hi)).collect();
    let dims = feature_dims(between(rng, 1, 2), 1, &spatial);
    let logits = normal(&dims, 2.0, rng);
    let target = Tensor::from_fn(&dims, |_| (rng.uniform() < 0.4) as u8 as f64);
    let (_, grad) = soft_dice_loss(&logits, &target)?;
    let numeric = finite_diff_grad(|t| Ok(soft_dice_loss(t, &target)?.0), &logits, STEP)?;
    let mut s = GradSample::default();
    s.push(&grad, &numeric);
    Ok(Some(s))
}

/// Tiny network used by the whole-network check: extent 8, depth 2, base 2.
pub fn tiny_unet_config(upsampler: Upsampler) -> UNetConfig {
    let mut cfg = UNetConfig::new(2, upsampler);
    cfg.depth = 2;
    cfg.base_channels = 2;
    cfg
}

pub fn unet_variants() -> [Upsampler; 5] {
    let (r, s) = (ReceptiveField::default(), AblationSwitches::FULL);
    [
        Upsampler::Nearest,
        Upsampler::LinearInterp,
        Upsampler::TransposedConv,
        Upsampler::DtcOverLinear(r, s),
        Upsampler::DtcOverTransposed(r, s),
    ]
}

fn unet_clear_of_kinks(trace: &UNetTrace<f64>, depth: usize) -> bool {
    let relu_ok = trace
        .relu_inputs()
        .all(|t| t.data().iter().all(|v| v.abs() >= ACTIVATION_MARGIN));
    let grid_ok = (0..depth - 1).all(|l| match trace.dtc(l) {
        Some(t) => grid_clear_of_kinks(&t.grid, t.mixed.spatial()),
        None => true,
    });
    relu_ok && grid_ok && trace.min_pool_gap() >= ACTIVATION_MARGIN
}

fn unet_trial(trial: usize, rng: &mut SplitMix64) -> Result<Option<GradSample>> {
    let up = unet_variants()[trial % 5];
    let cfg = tiny_unet_config(up);
    let mut params = build_unet::<f64>(&cfg, rng.next_u64())?;
    for (name, t) in params.named_mut() {
        if name.contains(".up.gen.") {
            *t = normal(t.dims(), 0.5, rng);
        }
    }
    let x = normal(&[1, 1, 8, 8], 1.0, rng);
    let (y, trace) = unet_forward_traced(&params, &cfg, &x)?;
    if !unet_clear_of_kinks(&trace, cfg.depth) {
        return Ok(None);
    }
    let r = normal(y.dims(), 1.0, rng);
    let (grads, _) = unet_backward(&params, &trace, &r)?;
    let mut s = GradSample::default();
    for (k, (_, analytic)) in grads.named().into_iter().enumerate() {
        let current = params.named()[k].1.clone();
        let numeric = finite_diff_vjp(
            |t| {
                let mut q = params.clone();
                *q.named_mut()[k].1 = t.clone();
                unet_forward(&q, &cfg, &x)
            },
            &current,
            &r,
            STEP,
        )?;
        s.push(analytic, &numeric);
    }
    Ok(Some(s))
}
