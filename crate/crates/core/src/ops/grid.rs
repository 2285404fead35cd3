//! Grid sampling with linear interpolation.
//!
//! Normalized coordinates live in `[-1, 1]` with half-pixel centers: along an
//! axis of extent `S`, coordinate `c` maps to the continuous index
//! `u = ((c + 1) * S - 1) / 2`, which is then clamped to `[0, S - 1]`
//! (border policy). Grid components follow the spatial axis order, so
//! component 0 is depth for 3D maps and height for 2D maps.

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Normalized sampling coordinates `[B, out_spatial..., g]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid<T> {
    coords: Tensor<T>,
}

impl<T: Scalar> SampleGrid<T> {
    pub fn new(coords: Tensor<T>) -> Result<Self> {
        let g = *coords.dims().last().unwrap();
        if !(2..=3).contains(&g) || coords.rank() != g + 2 {
            return Err(Error::contract(
                "sample_grid",
                format!("coords must be [B, spatial(g)..., g] with g in {{2, 3}}, got {}", coords.shape()),
            ));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &Tensor<T> {
        &self.coords
    }

    pub fn into_coords(self) -> Tensor<T> {
        self.coords
    }

    pub fn rank(&self) -> usize {
        *self.coords.dims().last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.coords.dims()[0]
    }

    pub fn out_spatial(&self) -> &[usize] {
        let d = self.coords.dims();
        &d[1..d.len() - 1]
    }

    fn positions(&self) -> usize {
        self.out_spatial().iter().product()
    }
}

/// Normalized coordinate of the center of cell `i` out of `n`.
#[inline]
pub fn cell_center(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

/// Continuous index of normalized coordinate `c` on an axis of extent `n`,
/// before border clamping.
#[inline]
pub fn continuous_index(c: f64, n: usize) -> f64 {
    ((c + 1.0) * n as f64 - 1.0) / 2.0
}

/// Regular grid of output-cell centers.
pub fn make_base_grid<T: Scalar>(batch: usize, out_spatial: &[usize], g: usize) -> Result<SampleGrid<T>> {
    if out_spatial.len() != g || !(2..=3).contains(&g) {
        return Err(Error::contract(
            "make_base_grid",
            format!("g = {g} must equal the rank of {out_spatial:?} and be 2 or 3"),
        ));
    }
    let mut dims = vec![batch];
    dims.extend_from_slice(out_spatial);
    dims.push(g);
    let mut coords = Tensor::zeros(&dims);
    let positions: usize = out_spatial.iter().product();
    let axis_centers: Vec<Vec<T>> = out_spatial
        .iter()
        .map(|&n| (0..n).map(|i| T::of(cell_center(i, n))).collect())
        .collect();
    for (p, cell) in coords.data_mut().chunks_mut(g).enumerate() {
        let mut rem = p % positions;
        for a in (0..g).rev() {
            let n = out_spatial[a];
            cell[a] = axis_centers[a][rem % n];
            rem /= n;
        }
    }
    SampleGrid::new(coords)
}

/// Interpolation stencil of one sampling point.
struct Stencil<T> {
    taps: usize,
    offsets: [usize; 8],
    weights: [T; 8],
    /// d weight_k / d u_a
    dweights: [[T; 8]; 3],
    /// d u_a / d c_a, zero where the coordinate is clamped
    du_dc: [T; 3],
}

impl<T: Scalar> Stencil<T> {
    fn new(coord: &[T], extents: &[usize]) -> Self {
        let g = coord.len();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [T::zero(); 3];
        let mut du_dc = [T::zero(); 3];
        for a in 0..g {
            let n = extents[a];
            let c = coord[a].max(-T::one()).min(T::one());
            let u_raw = ((c + T::one()) * T::of(n as f64) - T::one()) / T::of(2.0);
            let upper = T::of((n - 1) as f64);
            let clamped = u_raw < T::zero() || u_raw > upper;
            let u = u_raw.max(T::zero()).min(upper);
            let f = u.floor();
            lo[a] = f.as_f64() as usize;
            hi[a] = (lo[a] + 1).min(n - 1);
            frac[a] = u - f;
            du_dc[a] = if clamped {
                T::zero()
            } else {
                T::of(n as f64 / 2.0)
            };
        }

        let taps = 1usize << g;
        let mut offsets = [0usize; 8];
        let mut weights = [T::zero(); 8];
        let mut dweights = [[T::zero(); 8]; 3];
        for k in 0..taps {
            let mut off = 0usize;
            let mut w = T::one();
            for a in 0..g {
                let bit = (k >> (g - 1 - a)) & 1 == 1;
                off = off * extents[a] + if bit { hi[a] } else { lo[a] };
                w *= if bit { frac[a] } else { T::one() - frac[a] };
            }
            offsets[k] = off;
            weights[k] = w;
            for a in 0..g {
                let mut d = T::one();
                for b in 0..g {
                    let bit = (k >> (g - 1 - b)) & 1 == 1;
                    d *= match (a == b, bit) {
                        (true, true) => T::one(),
                        (true, false) => -T::one(),
                        (false, true) => frac[b],
                        (false, false) => T::one() - frac[b],
                    };
                }
                dweights[a][k] = d;
            }
        }
        Stencil {
            taps,
            offsets,
            weights,
            dweights,
            du_dc,
        }
    }
}

fn check_pair<T: Scalar>(input: &Tensor<T>, grid: &SampleGrid<T>) -> Result<()> {
    let g = grid.rank();
    if input.rank() != g + 2 {
        return Err(Error::contract(
            "grid_sample",
            format!("grid rank {g} does not match input {}", input.shape()),
        ));
    }
    if grid.batch() != input.batch() {
        return Err(Error::contract(
            "grid_sample",
            format!("grid batch {} vs input batch {}", grid.batch(), input.batch()),
        ));
    }
    Ok(())
}

fn output_dims<T: Scalar>(input: &Tensor<T>, grid: &SampleGrid<T>) -> Vec<usize> {
    let mut d = vec![input.batch(), input.channels()];
    d.extend_from_slice(grid.out_spatial());
    d
}

/// `[B, C, S_in...]` sampled at `grid` -> `[B, C, S_out...]`.
pub fn grid_sample<T: Scalar>(input: &Tensor<T>, grid: &SampleGrid<T>) -> Result<Tensor<T>> {
    check_pair(input, grid)?;
    let g = grid.rank();
    let c = input.channels();
    let extents = input.spatial();
    let iv: usize = extents.iter().product();
    let positions = grid.positions();
    let mut out = Tensor::zeros(&output_dims(input, grid));
    par::for_each_chunk_mut(out.data_mut(), c * positions, |b, dst| {
        let src = &input.data()[b * c * iv..(b + 1) * c * iv];
        let coords = &grid.coords.data()[b * positions * g..(b + 1) * positions * g];
        for (p, coord) in coords.chunks(g).enumerate() {
            let st = Stencil::new(coord, extents);
            for ch in 0..c {
                let plane = &src[ch * iv..(ch + 1) * iv];
                let mut acc = T::zero();
                for k in 0..st.taps {
                    acc += st.weights[k] * plane[st.offsets[k]];
                }
                dst[ch * positions + p] = acc;
            }
        }
    });
    Ok(out)
}

pub fn grid_sample_backward<T: Scalar>(
    input: &Tensor<T>,
    grid: &SampleGrid<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_pair(input, grid)?;
    let expected = output_dims(input, grid);
    if grad_out.dims() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "grid_sample_backward",
            left: grad_out.shape().clone(),
            right: crate::tensor::Shape::new(&expected)?,
        });
    }
    let g = grid.rank();
    let c = input.channels();
    let extents = input.spatial();
    let iv: usize = extents.iter().product();
    let positions = grid.positions();

    let per_item = par::map_range(input.batch(), |b| {
        let src = &input.data()[b * c * iv..(b + 1) * c * iv];
        let gout = &grad_out.data()[b * c * positions..(b + 1) * c * positions];
        let coords = &grid.coords.data()[b * positions * g..(b + 1) * positions * g];
        let mut gin = vec![T::zero(); c * iv];
        let mut ggrid = vec![T::zero(); positions * g];
        for (p, coord) in coords.chunks(g).enumerate() {
            let st = Stencil::new(coord, extents);
            let mut du = [T::zero(); 3];
            for ch in 0..c {
                let go = gout[ch * positions + p];
                if go == T::zero() {
                    continue;
                }
                let plane = &src[ch * iv..(ch + 1) * iv];
                let gplane = &mut gin[ch * iv..(ch + 1) * iv];
                for k in 0..st.taps {
                    gplane[st.offsets[k]] += st.weights[k] * go;
                }
                for (a, d) in du.iter_mut().enumerate().take(g) {
                    let mut dv = T::zero();
                    for k in 0..st.taps {
                        dv += st.dweights[a][k] * plane[st.offsets[k]];
                    }
                    *d += dv * go;
                }
            }
            for a in 0..g {
                ggrid[p * g + a] = du[a] * st.du_dc[a];
            }
        }
        (gin, ggrid)
    });

    let mut grad_input = input.zeros_like();
    let mut grad_grid = grid.coords.zeros_like();
    for (b, (gin, ggrid)) in per_item.into_iter().enumerate() {
        grad_input.data_mut()[b * c * iv..(b + 1) * c * iv].copy_from_slice(&gin);
        grad_grid.data_mut()[b * positions * g..(b + 1) * positions * g].copy_from_slice(&ggrid);
    }
    Ok((grad_input, grad_grid))
}

/// Gradient of [`grid_sample`] with respect to its input only.
pub fn grid_sample_input_grad<T: Scalar>(
    input_dims: &[usize],
    grid: &SampleGrid<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = grid.rank();
    if input_dims.len() != g + 2 || input_dims[0] != grid.batch() {
        return Err(Error::contract(
            "grid_sample_input_grad",
            format!("input dims {input_dims:?} do not match grid {}", grid.coords.shape()),
        ));
    }
    let (c, extents) = (input_dims[1], &input_dims[2..]);
    let iv: usize = extents.iter().product();
    let positions = grid.positions();
    let mut expected = vec![input_dims[0], c];
    expected.extend_from_slice(grid.out_spatial());
    if grad_out.dims() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "grid_sample_input_grad",
            left: grad_out.shape().clone(),
            right: crate::tensor::Shape::new(&expected)?,
        });
    }
    let mut grad_input = Tensor::zeros(input_dims);
    par::for_each_chunk_mut(grad_input.data_mut(), c * iv, |b, gin| {
        let gout = &grad_out.data()[b * c * positions..(b + 1) * c * positions];
        let coords = &grid.coords.data()[b * positions * g..(b + 1) * positions * g];
        for (p, coord) in coords.chunks(g).enumerate() {
            let st = Stencil::new(coord, extents);
            for ch in 0..c {
                let go = gout[ch * positions + p];
                let gplane = &mut gin[ch * iv..(ch + 1) * iv];
                for k in 0..st.taps {
                    gplane[st.offsets[k]] += st.weights[k] * go;
                }
            }
        }
    });
    Ok(grad_input)
}

fn upsample_grid<T: Scalar>(input_dims: &[usize], scale: usize) -> Result<SampleGrid<T>> {
    if scale == 0 {
        return Err(Error::contract("interp_upsample", "scale must be >= 1"));
    }
    let out: Vec<usize> = input_dims[2..].iter().map(|&s| s * scale).collect();
    make_base_grid(input_dims[0], &out, out.len())
}

/// Linear-interpolation upsampling by an integer factor on every spatial axis;
/// identical to sampling the input at the base grid of the enlarged map.
pub fn interp_upsample<T: Scalar>(input: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    if !(4..=5).contains(&input.rank()) {
        return Err(Error::contract(
            "interp_upsample",
            format!("expected a rank-4 or rank-5 feature map, got {}", input.shape()),
        ));
    }
    grid_sample(input, &upsample_grid(input.dims(), scale)?)
}

pub fn interp_upsample_backward<T: Scalar>(
    input_dims: &[usize],
    scale: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    grid_sample_input_grad(input_dims, &upsample_grid(input_dims, scale)?, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(dims, v.to_vec()).unwrap()
    }

    fn point(c: &[f64]) -> SampleGrid<f64> {
        let mut d = vec![1, 1, 1];
        d.push(c.len());
        if c.len() == 3 {
            d.insert(1, 1);
        }
        SampleGrid::new(t(&d, c)).unwrap()
    }

    #[test]
    fn base_grid_centers() {
        let g = make_base_grid::<f64>(1, &[1, 4], 2).unwrap();
        let c = g.coords().data();
        assert_eq!(c.iter().skip(1).step_by(2).copied().collect::<Vec<_>>(), [-0.75, -0.25, 0.25, 0.75]);
        assert!(c.iter().step_by(2).all(|&v| v == 0.0));
        let g = make_base_grid::<f64>(2, &[2, 2], 2).unwrap();
        assert_eq!(g.coords().dims(), &[2, 2, 2, 2]);
        assert_eq!(&g.coords().data()[..8], &[-0.5, -0.5, -0.5, 0.5, 0.5, -0.5, 0.5, 0.5]);
        assert!(make_base_grid::<f64>(1, &[2, 2], 3).is_err());
    }

    #[test]
    fn sample_center_and_corner() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(grid_sample(&x, &point(&[0.0, 0.0])).unwrap().data(), &[2.5]);
        assert_eq!(grid_sample(&x, &point(&[-1.0, -1.0])).unwrap().data(), &[1.0]);
        assert_eq!(grid_sample(&x, &point(&[5.0, 1.0])).unwrap().data(), &[4.0]);
    }

    #[test]
    fn identity_grid_is_identity() {
        let x = Tensor::from_fn(&[2, 3, 3, 5], |i| (i as f64).sin());
        let grid = make_base_grid(2, &[3, 5], 2).unwrap();
        assert_eq!(grid_sample(&x, &grid).unwrap(), x);
    }

    #[test]
    fn interp_examples() {
        let x = t(&[1, 1, 1, 2], &[1.0, 3.0]);
        let y = interp_upsample(&x, 2).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 4]);
        assert_eq!(&y.data()[..4], &[1.0, 1.5, 2.5, 3.0]);
        assert_eq!(&y.data()[4..], &[1.0, 1.5, 2.5, 3.0]);
        let z = Tensor::from_fn(&[1, 2, 2, 3], |i| i as f64);
        assert_eq!(interp_upsample(&z, 1).unwrap(), z);
        let k = Tensor::<f64>::full(&[1, 1, 2, 2, 2], 0.7);
        assert!(interp_upsample(&k, 2).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn backward_zero_and_one_hot() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let grid = point(&[0.3, -0.2]);
        let (gi, gg) = grid_sample_backward(&x, &grid, &Tensor::zeros(&[1, 1, 1, 1])).unwrap();
        assert!(gi.data().iter().chain(gg.data()).all(|&v| v == 0.0));
        // texel (1, 0) center: u = (1, 0) -> c = (0.5, -0.5)
        let (gi, _) = grid_sample_backward(&x, &point(&[0.5, -0.5]), &t(&[1, 1, 1, 1], &[3.0])).unwrap();
        assert_eq!(gi.data(), &[0.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn clamped_axis_has_zero_grid_gradient() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (_, gg) = grid_sample_backward(&x, &point(&[-0.9, 0.1]), &t(&[1, 1, 1, 1], &[1.0])).unwrap();
        assert_eq!(gg.data()[0], 0.0);
        assert!(gg.data()[1] != 0.0);
    }

    #[test]
    fn rejects_mismatched_rank_and_batch() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2, 2]);
        assert!(grid_sample(&x, &point(&[0.0, 0.0])).is_err());
        let x = Tensor::<f64>::zeros(&[2, 1, 2, 2]);
        assert!(grid_sample(&x, &point(&[0.0, 0.0])).is_err());
    }
}
