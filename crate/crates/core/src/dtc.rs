//! Deformable transposed convolution (DTC) upsampling unit.
//!
//! The unit has two branches whose outputs are summed:
//!
//! * the base upsampler, either linear interpolation or a transposed
//!   convolution;
//! * the deformable branch: a 1x1 convolution mixes channels (`N -> M`) at the
//!   input resolution, while a transposed convolution predicts `2g` channels at
//!   `s`x resolution, `g` raw offsets followed by `g` raw weights (axis order
//!   depth, height, width). Per output position and axis `a` the sampling
//!   coordinate is
//!
//!   ```text
//!   coord_a = lambda_a * tanh(offset_a) * sigmoid(weight_a) + base_a
//!   ```
//!
//!   clamped to `[-1, 1]`, and the mixed features are sampled there with
//!   linear interpolation.
//!
//! `lambda_a = min(1, r / S_a)` bounds how many input pixel-widths a sample may
//! move; `r = 1` allows one pixel, `r = inf` the whole map.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ops::conv::{conv_backward, conv_forward, tconv_backward, tconv_forward, ConvSpec, TConvSpec};
use crate::ops::grid::{grid_sample, grid_sample_backward, interp_upsample, interp_upsample_backward, make_base_grid, SampleGrid};
use crate::ops::layers::{concat_channels, split_channels};
use crate::rng::{stream_id, SplitMix64};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid, sigmoid_grad_from_output, tanh, tanh_grad_from_output, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReceptiveField {
    Finite(f64),
    Infinite,
}

impl ReceptiveField {
    pub fn finite(r: f64) -> Result<Self> {
        if r.is_finite() && r > 0.0 {
            Ok(ReceptiveField::Finite(r))
        } else {
            Err(Error::contract("receptive_field", format!("r must be positive, got {r}")))
        }
    }
}

impl Default for ReceptiveField {
    fn default() -> Self {
        ReceptiveField::Finite(1.0)
    }
}

impl fmt::Display for ReceptiveField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReceptiveField::Finite(r) => write!(f, "{r}"),
            ReceptiveField::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for ReceptiveField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinite" | "∞" => Ok(ReceptiveField::Infinite),
            v => {
                let r: f64 = v
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid receptive field {v:?}")))?;
                ReceptiveField::finite(r)
            }
        }
    }
}

pub fn receptive_field_to_lambda(r: ReceptiveField, in_extent: usize) -> Result<f64> {
    if in_extent == 0 {
        return Err(Error::contract("receptive_field_to_lambda", "extent must be >= 1"));
    }
    match r {
        ReceptiveField::Infinite => Ok(1.0),
        ReceptiveField::Finite(r) if r > 0.0 && r.is_finite() => Ok((r / in_extent as f64).min(1.0)),
        ReceptiveField::Finite(r) => Err(Error::contract(
            "receptive_field_to_lambda",
            format!("r must be positive, got {r}"),
        )),
    }
}

/// Which parts of the coordinate generator are active. The offset path is
/// always present; a sigmoid gate requires the weight path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AblationSwitches {
    use_weight: bool,
    use_sigmoid: bool,
    use_tanh: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationSwitches {
    pub const FULL: AblationSwitches = AblationSwitches {
        use_weight: true,
        use_sigmoid: true,
        use_tanh: true,
    };

    pub fn new(use_weight: bool, use_sigmoid: bool, use_tanh: bool) -> Result<Self> {
        if use_sigmoid && !use_weight {
            return Err(Error::Config("the sigmoid gate requires the weight path".into()));
        }
        Ok(Self {
            use_weight,
            use_sigmoid,
            use_tanh,
        })
    }

    pub fn use_weight(&self) -> bool {
        self.use_weight
    }

    pub fn use_sigmoid(&self) -> bool {
        self.use_sigmoid
    }

    pub fn use_tanh(&self) -> bool {
        self.use_tanh
    }

    /// The six reachable settings, in ablation-table order.
    pub fn ablation_rows() -> [AblationSwitches; 6] {
        let row = |w, s, t| AblationSwitches {
            use_weight: w,
            use_sigmoid: s,
            use_tanh: t,
        };
        [
            row(false, false, false),
            row(false, false, true),
            row(true, false, false),
            row(true, false, true),
            row(true, true, false),
            row(true, true, true),
        ]
    }

    /// Short label such as `weight+sigmoid+offset+tanh`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_weight {
            parts.push("weight");
        }
        if self.use_sigmoid {
            parts.push("sigmoid");
        }
        parts.push("offset");
        if self.use_tanh {
            parts.push("tanh");
        }
        parts.join("+")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseKind {
    LinearInterp,
    TransposedConv,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaseUpsampler<T> {
    LinearInterp,
    /// Kernel `[N, M, k...]` producing exactly `s`x output.
    TransposedConv(TConvSpec<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtcParams<T> {
    /// 1x1 channel mixing, kernel `[M, N, 1...]`.
    pub mix: ConvSpec<T>,
    /// Offset/weight generator, kernel `[N, 2g, k...]`.
    pub gen: TConvSpec<T>,
    pub receptive_field: ReceptiveField,
    pub scale: usize,
    pub base: BaseUpsampler<T>,
    pub switches: AblationSwitches,
}

/// True when a transposed convolution with this geometry maps `S` to `s * S`.
fn exact_upsampling<T: Scalar>(spec: &TConvSpec<T>, s: usize) -> bool {
    spec.stride.iter().all(|&st| st == s)
        && spec.kernel.dims()[2..]
            .iter()
            .zip(&spec.padding)
            .all(|(&k, &p)| k >= 2 * p && k - 2 * p == s)
}

impl<T: Scalar> DtcParams<T> {
    pub fn new(
        mix: ConvSpec<T>,
        gen: TConvSpec<T>,
        receptive_field: ReceptiveField,
        scale: usize,
        base: BaseUpsampler<T>,
        switches: AblationSwitches,
    ) -> Result<Self> {
        let p = Self {
            mix,
            gen,
            receptive_field,
            scale,
            base,
            switches,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let g = self.spatial_rank();
        let (n, m) = (self.in_channels(), self.out_channels());
        if self.scale == 0 {
            return Err(Error::contract("dtc", "scale must be >= 1"));
        }
        if let ReceptiveField::Finite(r) = self.receptive_field {
            ReceptiveField::finite(r)?;
        }
        if self.mix.kernel.dims()[2..].iter().any(|&k| k != 1)
            || self.mix.stride.iter().any(|&s| s != 1)
            || self.mix.padding.iter().any(|&p| p != 0)
        {
            return Err(Error::contract("dtc", "mixing kernel must be a 1x1 convolution"));
        }
        if self.gen.spatial_rank() != g || self.gen.in_channels() != n || self.gen.out_channels() != 2 * g {
            return Err(Error::contract(
                "dtc",
                format!(
                    "generator kernel must be [{n}, {}, k...] with rank {}, got {}",
                    2 * g,
                    g + 2,
                    self.gen.kernel.shape()
                ),
            ));
        }
        if !exact_upsampling(&self.gen, self.scale) {
            return Err(Error::contract(
                "dtc",
                format!("generator does not upsample exactly by {}", self.scale),
            ));
        }
        match &self.base {
            BaseUpsampler::LinearInterp if m != n => Err(Error::ChannelConstraint(format!(
                "linear-interpolation base keeps {n} channels but the deformable branch produces {m}; \
                 fusion by sum requires M = N"
            ))),
            BaseUpsampler::TransposedConv(spec)
                if spec.in_channels() != n || spec.out_channels() != m || spec.spatial_rank() != g =>
            {
                Err(Error::ChannelConstraint(format!(
                    "transposed-convolution base must map {n} -> {m} channels, got {}",
                    spec.kernel.shape()
                )))
            }
            BaseUpsampler::TransposedConv(spec) if !exact_upsampling(spec, self.scale) => Err(Error::contract(
                "dtc",
                format!("base transposed convolution does not upsample exactly by {}", self.scale),
            )),
            _ => Ok(()),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.mix.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.mix.out_channels()
    }

    pub fn spatial_rank(&self) -> usize {
        self.mix.spatial_rank()
    }

    /// Per-axis deformation bound for an input of the given spatial extents.
    pub fn lambda(&self, in_spatial: &[usize]) -> Result<Vec<f64>> {
        in_spatial
            .iter()
            .map(|&s| receptive_field_to_lambda(self.receptive_field, s))
            .collect()
    }

    /// Parameters of the deformable branch only (mix + generator).
    pub fn branch_params(&self) -> usize {
        self.mix.kernel.numel() + self.gen.kernel.numel() + self.gen.bias.as_ref().map_or(0, |b| b.numel())
    }

    pub fn num_params(&self) -> usize {
        self.branch_params()
            + match &self.base {
                BaseUpsampler::LinearInterp => 0,
                BaseUpsampler::TransposedConv(s) => s.kernel.numel() + s.bias.as_ref().map_or(0, |b| b.numel()),
            }
    }
}

/// Generator geometry `(kernel, stride, padding)` giving exact `s`x output:
/// `(2s, s, s/2)` for even `s`, `(s, s, 0)` otherwise.
pub fn generator_geometry(s: usize) -> (usize, usize, usize) {
    if s.is_multiple_of(2) {
        (2 * s, s, s / 2)
    } else {
        (s, s, 0)
    }
}

fn uniform_tensor<T: Scalar>(dims: &[usize], bound: f64, rng: &mut SplitMix64) -> Tensor<T> {
    Tensor::from_fn(dims, |_| T::of(rng.range(-bound, bound)))
}

#[allow(clippy::too_many_arguments)]
pub fn init_dtc<T: Scalar>(
    n: usize,
    m: usize,
    g: usize,
    s: usize,
    r: ReceptiveField,
    base_kind: BaseKind,
    switches: AblationSwitches,
    seed: u64,
) -> Result<DtcParams<T>> {
    if !(2..=3).contains(&g) || n == 0 || m == 0 || s == 0 {
        return Err(Error::contract("init_dtc", format!("invalid sizes n={n} m={m} g={g} s={s}")));
    }
    if base_kind == BaseKind::LinearInterp && m != n {
        return Err(Error::ChannelConstraint(format!(
            "linear-interpolation base keeps {n} channels but the deformable branch would produce {m}; \
             fusion by sum requires M = N"
        )));
    }
    let ones = vec![1usize; g];
    let mut mix_dims = vec![m, n];
    mix_dims.extend(&ones);
    let mut rng = SplitMix64::keyed(seed, 0, stream_id("dtc.mix"));
    let mix = ConvSpec::new(
        uniform_tensor(&mix_dims, (1.0 / n as f64).sqrt(), &mut rng),
        ones.clone(),
        vec![0; g],
    )?;

    let (k, stride, pad) = generator_geometry(s);
    let mut gen_dims = vec![n, 2 * g];
    gen_dims.extend(std::iter::repeat_n(k, g));
    let gen = TConvSpec::new(Tensor::zeros(&gen_dims), vec![stride; g], vec![pad; g])?
        .with_bias(Tensor::zeros(&[2 * g]))?;

    let base = match base_kind {
        BaseKind::LinearInterp => BaseUpsampler::LinearInterp,
        BaseKind::TransposedConv => {
            let mut rng = SplitMix64::keyed(seed, 0, stream_id("dtc.base"));
            let mut dims = vec![n, m];
            dims.extend(std::iter::repeat_n(s, g));
            let bound = (1.0 / (n * s.pow(g as u32)) as f64).sqrt();
            let kernel = uniform_tensor(&dims, bound, &mut rng);
            let bias = uniform_tensor(&[m], bound, &mut rng);
            BaseUpsampler::TransposedConv(TConvSpec::new(kernel, vec![s; g], vec![0; g])?.with_bias(bias)?)
        }
    };
    DtcParams::new(mix, gen, r, s, base, switches)
}

fn check_coord_inputs<T: Scalar>(
    offset_raw: &Tensor<T>,
    weight_raw: &Tensor<T>,
    lambda: &[f64],
    base: &SampleGrid<T>,
) -> Result<()> {
    offset_raw.expect_shape("coordinate_gen", weight_raw.shape())?;
    let g = base.rank();
    if offset_raw.rank() != g + 2
        || offset_raw.channels() != g
        || offset_raw.batch() != base.batch()
        || offset_raw.spatial() != base.out_spatial()
        || lambda.len() != g
    {
        return Err(Error::contract(
            "coordinate_gen",
            format!(
                "offsets {} / lambda {:?} do not match base grid {}",
                offset_raw.shape(),
                lambda,
                base.coords().shape()
            ),
        ));
    }
    Ok(())
}

#[inline]
fn activate<T: Scalar>(o: T, w: T, sw: AblationSwitches) -> (T, T) {
    let off = if sw.use_tanh { tanh(o) } else { o };
    let wt = match (sw.use_weight, sw.use_sigmoid) {
        (false, _) => T::one(),
        (true, true) => sigmoid(w),
        (true, false) => w,
    };
    (off, wt)
}

/// Deformed sampling coordinates before clamping, `[B, S_out..., g]`.
pub fn deformed_coords<T: Scalar>(
    offset_raw: &Tensor<T>,
    weight_raw: &Tensor<T>,
    lambda: &[f64],
    base: &SampleGrid<T>,
    switches: AblationSwitches,
) -> Result<Tensor<T>> {
    check_coord_inputs(offset_raw, weight_raw, lambda, base)?;
    let g = base.rank();
    let positions: usize = base.out_spatial().iter().product();
    let lam: Vec<T> = lambda.iter().map(|&l| T::of(l)).collect();
    let mut coords = base.coords().clone();
    let bounded = switches.use_tanh && (switches.use_sigmoid || !switches.use_weight);
    let (o, w) = (offset_raw.data(), weight_raw.data());
    for (i, c) in coords.data_mut().iter_mut().enumerate() {
        let (a, p, b) = (i % g, (i / g) % positions, i / (g * positions));
        let j = (b * g + a) * positions + p;
        let (off, wt) = activate(o[j], w[j], switches);
        let center = *c;
        *c += lam[a] * off * wt;
        // Rounding of the sum may overshoot |c - center| <= lambda by an ulp.
        while bounded && (c.as_f64() - center.as_f64()).abs() > lambda[a] {
            let step = (c.abs() * T::epsilon()).max(T::min_positive_value());
            *c = *c - (*c - center).signum() * step;
        }
    }
    Ok(coords)
}

fn clamp_unit<T: Scalar>(coords: &Tensor<T>) -> Result<SampleGrid<T>> {
    SampleGrid::new(coords.map(|v| v.max(-T::one()).min(T::one())))
}

pub fn coordinate_gen<T: Scalar>(
    offset_raw: &Tensor<T>,
    weight_raw: &Tensor<T>,
    lambda: &[f64],
    base: &SampleGrid<T>,
    switches: AblationSwitches,
) -> Result<SampleGrid<T>> {
    clamp_unit(&deformed_coords(offset_raw, weight_raw, lambda, base, switches)?)
}

/// Gradients of the clamped coordinates with respect to the raw offsets and
/// weights. `coords` are the unclamped coordinates; positions outside
/// `[-1, 1]` pass no gradient. Disabled weight channels get exact zeros.
pub fn coordinate_gen_backward<T: Scalar>(
    offset_raw: &Tensor<T>,
    weight_raw: &Tensor<T>,
    lambda: &[f64],
    switches: AblationSwitches,
    coords: &Tensor<T>,
    grad_grid: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    coords.expect_shape("coordinate_gen_backward", grad_grid.shape())?;
    offset_raw.expect_shape("coordinate_gen_backward", weight_raw.shape())?;
    let g = *coords.dims().last().unwrap();
    let positions = coords.numel() / (g * offset_raw.batch());
    if offset_raw.numel() != coords.numel() || lambda.len() != g {
        return Err(Error::contract(
            "coordinate_gen_backward",
            format!("offsets {} do not match coords {}", offset_raw.shape(), coords.shape()),
        ));
    }
    let lam: Vec<T> = lambda.iter().map(|&l| T::of(l)).collect();
    let mut g_off = offset_raw.zeros_like();
    let mut g_w = weight_raw.zeros_like();
    let (o, w) = (offset_raw.data(), weight_raw.data());
    for (i, (&c, &gc)) in coords.data().iter().zip(grad_grid.data()).enumerate() {
        if gc == T::zero() || c < -T::one() || c > T::one() {
            continue;
        }
        let (a, p, b) = (i % g, (i / g) % positions, i / (g * positions));
        let j = (b * g + a) * positions + p;
        let (off, wt) = activate(o[j], w[j], switches);
        let d_off = if switches.use_tanh {
            tanh_grad_from_output(off)
        } else {
            T::one()
        };
        g_off.data_mut()[j] = gc * lam[a] * wt * d_off;
        if switches.use_weight {
            let d_w = if switches.use_sigmoid {
                sigmoid_grad_from_output(wt)
            } else {
                T::one()
            };
            g_w.data_mut()[j] = gc * lam[a] * off * d_w;
        }
    }
    Ok((g_off, g_w))
}

/// Intermediates of a forward pass, consumed by [`dtc_backward`].
#[derive(Clone, Debug)]
pub struct DtcTrace<T> {
    pub input: Tensor<T>,
    pub mixed: Tensor<T>,
    pub offset_raw: Tensor<T>,
    pub weight_raw: Tensor<T>,
    pub lambda: Vec<f64>,
    /// Deformed coordinates before clamping.
    pub coords: Tensor<T>,
    pub grid: SampleGrid<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtcGrads<T> {
    pub input: Tensor<T>,
    pub mix_kernel: Tensor<T>,
    pub gen_kernel: Tensor<T>,
    pub gen_bias: Option<Tensor<T>>,
    pub base_kernel: Option<Tensor<T>>,
    pub base_bias: Option<Tensor<T>>,
}

pub fn base_upsample<T: Scalar>(input: &Tensor<T>, p: &DtcParams<T>) -> Result<Tensor<T>> {
    match &p.base {
        BaseUpsampler::LinearInterp => interp_upsample(input, p.scale),
        BaseUpsampler::TransposedConv(spec) => tconv_forward(input, spec),
    }
}

/// `[B, N, S...]` -> `([B, M, s*S...], sampling grid)`.
pub fn dtc_forward<T: Scalar>(input: &Tensor<T>, p: &DtcParams<T>) -> Result<(Tensor<T>, SampleGrid<T>)> {
    let (out, trace) = dtc_forward_traced(input, p)?;
    Ok((out, trace.grid))
}

pub fn dtc_forward_traced<T: Scalar>(input: &Tensor<T>, p: &DtcParams<T>) -> Result<(Tensor<T>, DtcTrace<T>)> {
    let g = p.spatial_rank();
    if input.rank() != g + 2 || input.channels() != p.in_channels() {
        return Err(Error::contract(
            "dtc_forward",
            format!(
                "expected [B, {}, {} spatial axes], got {}",
                p.in_channels(),
                g,
                input.shape()
            ),
        ));
    }
    let mixed = conv_forward(input, &p.mix)?;
    let raw = tconv_forward(input, &p.gen)?;
    let out_spatial: Vec<usize> = input.spatial().iter().map(|&s| s * p.scale).collect();
    debug_assert_eq!(raw.spatial(), out_spatial.as_slice());
    let (offset_raw, weight_raw) = split_channels(&raw, g)?;
    let base = make_base_grid(input.batch(), &out_spatial, g)?;
    let lambda = p.lambda(input.spatial())?;
    let coords = deformed_coords(&offset_raw, &weight_raw, &lambda, &base, p.switches)?;
    let grid = clamp_unit(&coords)?;
    let sampled = grid_sample(&mixed, &grid)?;
    let output = sampled.add(&base_upsample(input, p)?)?;
    Ok((
        output,
        DtcTrace {
            input: input.clone(),
            mixed,
            offset_raw,
            weight_raw,
            lambda,
            coords,
            grid,
        },
    ))
}

pub fn dtc_backward<T: Scalar>(p: &DtcParams<T>, trace: &DtcTrace<T>, grad_out: &Tensor<T>) -> Result<DtcGrads<T>> {
    let (g_mixed, g_grid) = grid_sample_backward(&trace.mixed, &trace.grid, grad_out)?;
    let (g_off, g_w) = coordinate_gen_backward(
        &trace.offset_raw,
        &trace.weight_raw,
        &trace.lambda,
        p.switches,
        &trace.coords,
        &g_grid,
    )?;
    let gen = tconv_backward(&trace.input, &p.gen, &concat_channels(&g_off, &g_w)?)?;
    let mix = conv_backward(&trace.input, &p.mix, &g_mixed)?;
    let (base_input, base_kernel, base_bias) = match &p.base {
        BaseUpsampler::LinearInterp => (
            interp_upsample_backward(trace.input.dims(), p.scale, grad_out)?,
            None,
            None,
        ),
        BaseUpsampler::TransposedConv(spec) => {
            let g = tconv_backward(&trace.input, spec, grad_out)?;
            (g.input, Some(g.kernel), g.bias)
        }
    };
    let mut input = mix.input;
    input.add_assign(&gen.input)?;
    input.add_assign(&base_input)?;
    Ok(DtcGrads {
        input,
        mix_kernel: mix.kernel,
        gen_kernel: gen.kernel,
        gen_bias: gen.bias,
        base_kernel,
        base_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_mapping() {
        assert_eq!(receptive_field_to_lambda(ReceptiveField::Finite(1.0), 16).unwrap(), 1.0 / 16.0);
        assert_eq!(receptive_field_to_lambda(ReceptiveField::Infinite, 7).unwrap(), 1.0);
        assert_eq!(receptive_field_to_lambda(ReceptiveField::Finite(2.0), 32).unwrap(), 0.0625);
        assert_eq!(receptive_field_to_lambda(ReceptiveField::Finite(10.0), 4).unwrap(), 1.0);
        assert!(receptive_field_to_lambda(ReceptiveField::Finite(0.0), 4).is_err());
        assert!(receptive_field_to_lambda(ReceptiveField::Finite(-1.0), 4).is_err());
        assert!(ReceptiveField::finite(-2.0).is_err());
        assert_eq!("inf".parse::<ReceptiveField>().unwrap(), ReceptiveField::Infinite);
        assert_eq!("2".parse::<ReceptiveField>().unwrap(), ReceptiveField::Finite(2.0));
        assert!("0".parse::<ReceptiveField>().is_err());
    }

    #[test]
    fn switches_require_weight_for_sigmoid() {
        assert!(AblationSwitches::new(false, true, true).is_err());
        let rows = AblationSwitches::ablation_rows();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[5], AblationSwitches::FULL);
        assert_eq!(rows[5].label(), "weight+sigmoid+offset+tanh");
        assert_eq!(rows[0].label(), "offset");
    }

    fn base_point() -> SampleGrid<f64> {
        make_base_grid(1, &[1, 1], 2).unwrap()
    }

    #[test]
    fn coordinate_examples() {
        let zero = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let grid = coordinate_gen(&zero, &zero, &[0.5, 0.5], &base_point(), AblationSwitches::FULL).unwrap();
        assert_eq!(grid.coords().data(), base_point().coords().data());

        let big = Tensor::<f64>::full(&[1, 2, 1, 1], 40.0);
        let grid = coordinate_gen(&big, &big, &[0.1, 0.1], &base_point(), AblationSwitches::FULL).unwrap();
        for &c in grid.coords().data() {
            assert!((c - 0.1).abs() < 1e-15);
        }

        let grid = coordinate_gen(&big, &big, &[0.0, 0.0], &base_point(), AblationSwitches::FULL).unwrap();
        assert_eq!(grid.coords().data(), &[0.0, 0.0]);
    }

    #[test]
    fn coordinates_clamp_to_unit_range() {
        let base = make_base_grid::<f64>(1, &[1, 2], 2).unwrap();
        let off = Tensor::full(&[1, 2, 1, 2], 3.0);
        let w = Tensor::full(&[1, 2, 1, 2], 1.0);
        let sw = AblationSwitches::new(true, false, false).unwrap();
        let raw = deformed_coords(&off, &w, &[1.0, 1.0], &base, sw).unwrap();
        assert_eq!(raw.data(), &[3.0, 2.5, 3.0, 3.5]);
        let grid = coordinate_gen(&off, &w, &[1.0, 1.0], &base, sw).unwrap();
        assert_eq!(grid.coords().data(), &[1.0; 4]);
    }

    #[test]
    fn init_geometry() {
        let p = init_dtc::<f64>(1, 1, 2, 2, ReceptiveField::default(), BaseKind::LinearInterp, AblationSwitches::FULL, 3)
            .unwrap();
        assert_eq!(p.gen.kernel.dims(), &[1, 4, 4, 4]);
        assert!(p.gen.kernel.data().iter().all(|&v| v == 0.0));
        assert_eq!(p.gen.stride, [2, 2]);
        assert_eq!(p.gen.padding, [1, 1]);
        let p1 = init_dtc::<f64>(2, 2, 3, 1, ReceptiveField::default(), BaseKind::LinearInterp, AblationSwitches::FULL, 3)
            .unwrap();
        assert_eq!(p1.gen.kernel.dims(), &[2, 6, 1, 1, 1]);
        let q = init_dtc::<f64>(1, 1, 2, 2, ReceptiveField::default(), BaseKind::LinearInterp, AblationSwitches::FULL, 3)
            .unwrap();
        assert_eq!(p, q);
        let bound = 1.0f64;
        assert!(p.mix.kernel.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn linear_base_requires_matching_channels() {
        let e = init_dtc::<f32>(4, 2, 2, 2, ReceptiveField::default(), BaseKind::LinearInterp, AblationSwitches::FULL, 0);
        assert!(matches!(e, Err(Error::ChannelConstraint(_))));
        let ok = init_dtc::<f32>(4, 2, 2, 2, ReceptiveField::default(), BaseKind::TransposedConv, AblationSwitches::FULL, 0);
        assert!(ok.is_ok());
    }

    #[test]
    fn zero_generator_reduces_to_interpolation() {
        let mut p = init_dtc::<f64>(2, 2, 2, 2, ReceptiveField::default(), BaseKind::LinearInterp, AblationSwitches::FULL, 9)
            .unwrap();
        p.mix.kernel = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_fn(&[1, 2, 3, 4], |i| (i as f64 * 0.41).sin());
        let (y, grid) = dtc_forward(&x, &p).unwrap();
        let up = interp_upsample(&x, 2).unwrap();
        assert_eq!(y, up.add(&up).unwrap());
        assert_eq!(grid, make_base_grid(1, &[6, 8], 2).unwrap());

        p.mix.kernel.fill(0.0);
        let (y, _) = dtc_forward(&x, &p).unwrap();
        assert_eq!(y, up);
    }

    #[test]
    fn disabled_weight_channels_get_zero_gradient() {
        let sw = AblationSwitches::new(false, false, true).unwrap();
        let mut p = init_dtc::<f64>(2, 2, 2, 2, ReceptiveField::Finite(2.0), BaseKind::LinearInterp, sw, 1).unwrap();
        let mut rng = SplitMix64::new(5);
        p.gen.kernel = Tensor::from_fn(p.gen.kernel.dims(), |_| rng.range(-1.0, 1.0));
        let x = Tensor::from_fn(&[1, 2, 3, 3], |i| (i as f64 * 0.7).cos());
        let (y, trace) = dtc_forward_traced(&x, &p).unwrap();
        let g = dtc_backward(&p, &trace, &Tensor::full(y.dims(), 1.0)).unwrap();
        let per_out = 4 * 4;
        for ci in 0..2 {
            for co in 2..4 {
                let start = (ci * 4 + co) * per_out;
                assert!(g.gen_kernel.data()[start..start + per_out].iter().all(|&v| v == 0.0));
            }
        }
        assert_eq!(&g.gen_bias.unwrap().data()[2..], &[0.0, 0.0]);
    }
}
