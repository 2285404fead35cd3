//! Convolution, sampling and DTC forward passes against direct loop
//! implementations.

use dtc_core::dtc::{dtc_forward_traced, init_dtc, AblationSwitches, BaseKind, ReceptiveField};
use dtc_core::ops::{
    conv_backward, conv_forward, grid_sample, grid_sample_backward, make_base_grid, tconv_backward, tconv_forward,
    ConvSpec, SampleGrid, TConvSpec,
};
use dtc_core::rng::SplitMix64;
use dtc_core::Tensor;
use proptest::prelude::*;

fn all_indices(ext: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in ext {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

fn flat(ext: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(ext).fold(0, |acc, (&i, &n)| acc * n + i)
}

fn random(dims: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(dims, |_| rng.range(-1.0, 1.0))
}

/// Direct cross-correlation; kernel `[O, C, K...]`.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>, s: usize, p: usize) -> Tensor<f64> {
    let (b, c, sp) = (x.dims()[0], x.dims()[1], &x.dims()[2..]);
    let (o, kk) = (w.dims()[0], &w.dims()[2..]);
    let out_sp: Vec<usize> = sp.iter().zip(kk).map(|(&n, &k)| (n + 2 * p - k) / s + 1).collect();
    let mut dims = vec![b, o];
    dims.extend(&out_sp);
    let mut out = Tensor::zeros(&dims);
    for bi in 0..b {
        for oi in 0..o {
            for y in all_indices(&out_sp) {
                let mut acc = bias.map_or(0.0, |t| t.data()[oi]);
                for ci in 0..c {
                    for k in all_indices(kk) {
                        let pos: Vec<i64> = y
                            .iter()
                            .zip(&k)
                            .map(|(&yi, &ki)| (yi * s + ki) as i64 - p as i64)
                            .collect();
                        if pos.iter().zip(sp).all(|(&q, &n)| q >= 0 && (q as usize) < n) {
                            let q: Vec<usize> = pos.iter().map(|&v| v as usize).collect();
                            let xi = (bi * c + ci) * sp.iter().product::<usize>() + flat(sp, &q);
                            let wi = (oi * c + ci) * kk.iter().product::<usize>() + flat(kk, &k);
                            acc += x.data()[xi] * w.data()[wi];
                        }
                    }
                }
                out.data_mut()[(bi * o + oi) * out_sp.iter().product::<usize>() + flat(&out_sp, &y)] = acc;
            }
        }
    }
    out
}

/// Scatter-add transposed convolution; kernel `[C, O, K...]`.
fn naive_tconv(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>, s: usize, p: usize) -> Tensor<f64> {
    let (b, c, sp) = (x.dims()[0], x.dims()[1], &x.dims()[2..]);
    let (o, kk) = (w.dims()[1], &w.dims()[2..]);
    let out_sp: Vec<usize> = sp.iter().zip(kk).map(|(&n, &k)| (n - 1) * s + k - 2 * p).collect();
    let vol: usize = out_sp.iter().product();
    let mut dims = vec![b, o];
    dims.extend(&out_sp);
    let mut out = Tensor::zeros(&dims);
    for bi in 0..b {
        for oi in 0..o {
            let v = bias.map_or(0.0, |t| t.data()[oi]);
            out.data_mut()[(bi * o + oi) * vol..(bi * o + oi + 1) * vol].fill(v);
        }
        for ci in 0..c {
            for i in all_indices(sp) {
                let xv = x.data()[(bi * c + ci) * sp.iter().product::<usize>() + flat(sp, &i)];
                for k in all_indices(kk) {
                    let pos: Vec<i64> = i.iter().zip(&k).map(|(&a, &b)| (a * s + b) as i64 - p as i64).collect();
                    if pos.iter().zip(&out_sp).all(|(&q, &n)| q >= 0 && (q as usize) < n) {
                        let q: Vec<usize> = pos.iter().map(|&v| v as usize).collect();
                        for oi in 0..o {
                            let wi = (ci * o + oi) * kk.iter().product::<usize>() + flat(kk, &k);
                            out.data_mut()[(bi * o + oi) * vol + flat(&out_sp, &q)] += xv * w.data()[wi];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Multilinear sampling written as a sum of tent functions over every
/// input voxel, with border clamping in index space.
fn tent_sample(x: &Tensor<f64>, coords: &Tensor<f64>) -> Tensor<f64> {
    let (b, c, sp) = (x.dims()[0], x.dims()[1], x.dims()[2..].to_vec());
    let g = sp.len();
    let out_sp = coords.dims()[1..=g].to_vec();
    let (vin, vout) = (sp.iter().product::<usize>(), out_sp.iter().product::<usize>());
    let mut dims = vec![b, c];
    dims.extend(&out_sp);
    let mut out = Tensor::zeros(&dims);
    for bi in 0..b {
        for p in 0..vout {
            let cv = &coords.data()[(bi * vout + p) * g..(bi * vout + p + 1) * g];
            let u: Vec<f64> = cv
                .iter()
                .zip(&sp)
                .map(|(&v, &n)| {
                    let v = v.clamp(-1.0, 1.0);
                    ((v + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64)
                })
                .collect();
            for q in all_indices(&sp) {
                let wgt: f64 = q.iter().zip(&u).map(|(&i, &ua)| (1.0 - (ua - i as f64).abs()).max(0.0)).product();
                if wgt == 0.0 {
                    continue;
                }
                for ci in 0..c {
                    out.data_mut()[(bi * c + ci) * vout + p] += wgt * x.data()[(bi * c + ci) * vin + flat(&sp, &q)];
                }
            }
        }
    }
    out
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
    assert_eq!(a.dims(), b.dims());
    let d = a.max_abs_diff(b).unwrap();
    assert!(d <= tol, "max abs diff {d:e} > {tol:e}");
}

fn random_grid(b: usize, out: &[usize], g: usize, spread: f64, seed: u64) -> SampleGrid<f64> {
    let mut dims = vec![b];
    dims.extend(out);
    dims.push(g);
    let mut rng = SplitMix64::new(seed);
    SampleGrid::new(Tensor::from_fn(&dims, |_| rng.range(-spread, spread))).unwrap()
}

#[test]
fn padded_all_ones_convolution() {
    let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
    let spec = ConvSpec::new(Tensor::full(&[1, 1, 3, 3], 1.0), vec![1, 1], vec![1, 1]).unwrap();
    let y = conv_forward(&x, &spec).unwrap();
    assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
}

#[test]
fn conv_matches_direct_loops() {
    let mut seed = 0;
    for (sp, k, s, p) in [
        (vec![5, 6], 3, 1, 1),
        (vec![7, 5], 3, 2, 1),
        (vec![4, 4], 2, 2, 0),
        (vec![6, 3], 1, 1, 0),
        (vec![4, 5, 3], 3, 1, 1),
        (vec![6, 4, 4], 2, 2, 0),
    ] {
        seed += 1;
        let g = sp.len();
        let mut xd = vec![2, 3];
        xd.extend(&sp);
        let mut kd = vec![4, 3];
        kd.extend(std::iter::repeat_n(k, g));
        let x = random(&xd, seed);
        let w = random(&kd, seed + 100);
        let bias = random(&[4], seed + 200);
        let spec = ConvSpec::new(w.clone(), vec![s; g], vec![p; g])
            .unwrap()
            .with_bias(bias.clone())
            .unwrap();
        close(&conv_forward(&x, &spec).unwrap(), &naive_conv(&x, &w, Some(&bias), s, p), 1e-12);
    }
}

#[test]
fn strided_padded_tconv_doubles_extent() {
    let x = random(&[1, 2, 3, 3], 7);
    let w = random(&[2, 3, 4, 4], 8);
    let spec = TConvSpec::new(w.clone(), vec![2, 2], vec![1, 1]).unwrap();
    let y = tconv_forward(&x, &spec).unwrap();
    assert_eq!(y.dims(), &[1, 3, 6, 6]);
    close(&y, &naive_tconv(&x, &w, None, 2, 1), 1e-12);
}

#[test]
fn tconv_matches_scatter_add() {
    let mut seed = 50;
    for (sp, k, s, p) in [
        (vec![3, 4], 2, 2, 0),
        (vec![3, 3], 3, 1, 1),
        (vec![2, 5], 3, 3, 0),
        (vec![2, 3, 2], 4, 2, 1),
        (vec![3, 2, 2], 2, 2, 0),
    ] {
        seed += 1;
        let g = sp.len();
        let mut xd = vec![2, 3];
        xd.extend(&sp);
        let mut kd = vec![3, 2];
        kd.extend(std::iter::repeat_n(k, g));
        let x = random(&xd, seed);
        let w = random(&kd, seed + 100);
        let bias = random(&[2], seed + 200);
        let spec = TConvSpec::new(w.clone(), vec![s; g], vec![p; g])
            .unwrap()
            .with_bias(bias.clone())
            .unwrap();
        close(&tconv_forward(&x, &spec).unwrap(), &naive_tconv(&x, &w, Some(&bias), s, p), 1e-12);
    }
}

#[test]
fn sampling_matches_tent_sum() {
    for (sp, out, seed) in [(vec![5, 4], vec![6, 3], 1u64), (vec![3, 4, 2], vec![2, 3, 4], 2)] {
        let g = sp.len();
        let mut xd = vec![2, 3];
        xd.extend(&sp);
        let x = random(&xd, seed);
        let grid = random_grid(2, &out, g, 1.3, seed + 9);
        close(&grid_sample(&x, &grid).unwrap(), &tent_sample(&x, grid.coords()), 1e-12);
    }
}

#[test]
fn unit_depth_volume_matches_image() {
    let x2 = random(&[1, 2, 5, 6], 3);
    let x3 = x2.clone().reshape(&[1, 2, 1, 5, 6]).unwrap();
    let g2 = random_grid(1, &[4, 7], 2, 1.0, 4);
    let mut rng = SplitMix64::new(5);
    let mut c3 = Vec::new();
    for c in g2.coords().data().chunks(2) {
        c3.extend([rng.range(-1.0, 1.0), c[0], c[1]]);
    }
    let g3 = SampleGrid::new(Tensor::from_vec(&[1, 1, 4, 7, 3], c3).unwrap()).unwrap();
    let y2 = grid_sample(&x2, &g2).unwrap();
    let y3 = grid_sample(&x3, &g3).unwrap();
    assert_eq!(y3.data(), y2.data());
}

#[test]
fn identity_grid_reproduces_input() {
    for dims in [vec![2, 3, 5, 4], vec![1, 2, 3, 4, 2]] {
        let x = random(&dims, 11);
        let grid = make_base_grid::<f64>(dims[0], &dims[2..], dims.len() - 2).unwrap();
        close(&grid_sample(&x, &grid).unwrap(), &x, 1e-14);
    }
}

/// Direct composition of mixing, generator, bounded deformation, sampling
/// and the interpolation base.
#[test]
fn dtc_matches_direct_composition() {
    let x = random(&[1, 2, 4, 4], 21);
    let mut p = init_dtc::<f64>(2, 2, 2, 2, ReceptiveField::Finite(1.0), BaseKind::LinearInterp, AblationSwitches::FULL, 3)
        .unwrap();
    p.mix.kernel = random(&[2, 2, 1, 1], 22);
    p.gen.kernel = random(&[2, 4, 4, 4], 23).scale(2.0);
    p.gen.bias = Some(random(&[4], 24));
    let (y, trace) = dtc_forward_traced(&x, &p).unwrap();

    let mixed = naive_conv(&x, &p.mix.kernel, None, 1, 0);
    let raw = naive_tconv(&x, &p.gen.kernel, p.gen.bias.as_ref(), 2, 1);
    assert_eq!(raw.dims(), &[1, 4, 8, 8]);
    let lambda = 1.0 / 4.0;
    let mut coords = Tensor::zeros(&[1, 8, 8, 2]);
    let mut base = Tensor::zeros(&[1, 8, 8, 2]);
    for i in 0..8 {
        for j in 0..8 {
            for (a, idx) in [i, j].into_iter().enumerate() {
                let center = -1.0 + (2 * idx + 1) as f64 / 8.0;
                let off = raw.data()[a * 64 + i * 8 + j].tanh();
                let wt = 1.0 / (1.0 + (-raw.data()[(2 + a) * 64 + i * 8 + j]).exp());
                coords.data_mut()[(i * 8 + j) * 2 + a] = center + lambda * off * wt;
                base.data_mut()[(i * 8 + j) * 2 + a] = center;
            }
        }
    }
    close(&trace.coords, &coords, 1e-14);
    let expected = tent_sample(&mixed, &coords).add(&tent_sample(&x, &base)).unwrap();
    close(&y, &expected, 1e-12);
}

fn dims_strategy() -> impl Strategy<Value = (usize, Vec<usize>, usize, usize, usize, u64)> {
    (2usize..=3, 1usize..=3, 1usize..=2, 0usize..=1, any::<u64>()).prop_flat_map(|(g, k, s, p, seed)| {
        let p = p.min(k / 2);
        (
            Just(g),
            prop::collection::vec(k.max(2)..=5usize, g),
            Just(k),
            Just(s),
            Just(p),
            Just(seed),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_and_its_reverse_are_adjoint((g, sp, k, s, p, seed) in dims_strategy()) {
        let mut xd = vec![2, 2];
        xd.extend(&sp);
        let mut kd = vec![3, 2];
        kd.extend(std::iter::repeat_n(k, g));
        let x = random(&xd, seed);
        let spec = ConvSpec::new(random(&kd, seed ^ 1), vec![s; g], vec![p; g]).unwrap();
        let y = conv_forward(&x, &spec).unwrap();
        let r = random(y.dims(), seed ^ 2);
        let grads = conv_backward(&x, &spec, &r).unwrap();
        let lhs = y.dot(&r).unwrap();
        prop_assert!((lhs - x.dot(&grads.input).unwrap()).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert!((lhs - spec.kernel.dot(&grads.kernel).unwrap()).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn tconv_and_its_reverse_are_adjoint((g, sp, k, s, p, seed) in dims_strategy()) {
        let mut xd = vec![1, 3];
        xd.extend(&sp);
        let mut kd = vec![3, 2];
        kd.extend(std::iter::repeat_n(k.max(2 * p + 1), g));
        let x = random(&xd, seed);
        let spec = TConvSpec::new(random(&kd, seed ^ 1), vec![s; g], vec![p; g]).unwrap();
        let y = tconv_forward(&x, &spec).unwrap();
        let r = random(y.dims(), seed ^ 2);
        let grads = tconv_backward(&x, &spec, &r).unwrap();
        let lhs = y.dot(&r).unwrap();
        prop_assert!((lhs - x.dot(&grads.input).unwrap()).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert!((lhs - spec.kernel.dot(&grads.kernel).unwrap()).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn samples_are_convex_combinations(g in 2usize..=3, n in 1usize..=5, spread in 0.1f64..2.0, seed in any::<u64>()) {
        let mut xd = vec![1, 2];
        xd.extend(std::iter::repeat_n(n + 1, g));
        let x = random(&xd, seed);
        let grid = random_grid(1, &vec![3; g], g, spread, seed ^ 7);
        let y = grid_sample(&x, &grid).unwrap();
        let vin = x.numel() / 2;
        let vout = y.numel() / 2;
        for c in 0..2 {
            let plane = &x.data()[c * vin..(c + 1) * vin];
            let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &v in &y.data()[c * vout..(c + 1) * vout] {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn sampling_reverse_is_adjoint_in_input(g in 2usize..=3, seed in any::<u64>()) {
        let mut xd = vec![2, 2];
        xd.extend(std::iter::repeat_n(4, g));
        let x = random(&xd, seed);
        let grid = random_grid(2, &vec![3; g], g, 1.2, seed ^ 3);
        let y = grid_sample(&x, &grid).unwrap();
        let r = random(y.dims(), seed ^ 5);
        let (gin, _) = grid_sample_backward(&x, &grid, &r).unwrap();
        let lhs = y.dot(&r).unwrap();
        prop_assert!((lhs - x.dot(&gin).unwrap()).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn bounded_deformation(g in 2usize..=3, s in 1usize..=3, r in prop_oneof![Just(f64::INFINITY), 0.25f64..6.0],
                           tanh_only in any::<bool>(), seed in any::<u64>()) {
        let rf = if r.is_finite() { ReceptiveField::Finite(r) } else { ReceptiveField::Infinite };
        let sw = if tanh_only { AblationSwitches::new(false, false, true).unwrap() } else { AblationSwitches::FULL };
        let mut p = init_dtc::<f64>(2, 2, g, s, rf, BaseKind::LinearInterp, sw, seed).unwrap();
        p.gen.kernel = random(p.gen.kernel.dims(), seed ^ 9).scale(20.0);
        let mut xd = vec![1, 2];
        xd.extend(std::iter::repeat_n(3, g));
        let (_, trace) = dtc_forward_traced(&random(&xd, seed ^ 4), &p).unwrap();
        let out: Vec<usize> = vec![3 * s; g];
        let base = make_base_grid::<f64>(1, &out, g).unwrap();
        for (i, (c, b)) in trace.coords.data().iter().zip(base.coords().data()).enumerate() {
            prop_assert!((c - b).abs() <= trace.lambda[i % g], "{c} {b} {}", trace.lambda[i % g]);
        }
    }
}
