//! Parameter-free layers used by the segmentation network.

use crate::error::{Error, Result};
use crate::ops::geometry::lift;
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of `max(0, x)` given the pre-activation `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_shape("relu_backward", grad_out.shape())?;
    let mut g = grad_out.clone();
    g.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(g, &v)| {
            if v <= T::zero() {
                *g = T::zero();
            }
        });
    Ok(g)
}

/// Result of a 2x(2x2) max pool: the pooled map and, per output element, the
/// flat index of the selected input element within its plane.
#[derive(Clone, Debug)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

/// Stride-2, window-2 max pooling on every spatial axis. Ties select the
/// first element in row-major window order.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Pooled<T>> {
    let g = x.rank().checked_sub(2).filter(|g| (2..=3).contains(g)).ok_or_else(|| {
        Error::contract("max_pool2", format!("expected rank-4 or rank-5 map, got {}", x.shape()))
    })?;
    if x.spatial().iter().any(|s| s % 2 != 0) {
        return Err(Error::contract(
            "max_pool2",
            format!("spatial extents {:?} must be even", x.spatial()),
        ));
    }
    let [d, h, w] = lift(x.spatial(), 1);
    let [od, oh, ow] = [if g == 3 { d / 2 } else { 1 }, h / 2, w / 2];
    let (iv, ov) = (d * h * w, od * oh * ow);
    let kd = if g == 3 { 2 } else { 1 };
    let mut dims = x.dims().to_vec();
    dims[2..].iter_mut().for_each(|s| *s /= 2);
    let mut output = Tensor::zeros(&dims);
    let mut argmax = vec![0u32; output.numel()];
    let planes = x.batch() * x.channels();
    for p in 0..planes {
        let src = &x.data()[p * iv..(p + 1) * iv];
        let dst = &mut output.data_mut()[p * ov..(p + 1) * ov];
        let arg = &mut argmax[p * ov..(p + 1) * ov];
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let o = (z * oh + y) * ow + xo;
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for dz in 0..kd {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((z * kd + dz) * h + 2 * y + dy) * w + 2 * xo + dx;
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    dst[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
    }
    Ok(Pooled { output, argmax })
}

pub fn max_pool2_backward<T: Scalar>(
    input_dims: &[usize],
    pooled: &Pooled<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    grad_out.expect_shape("max_pool2_backward", pooled.output.shape())?;
    let mut g = Tensor::zeros(input_dims);
    let iv: usize = input_dims[2..].iter().product();
    let ov: usize = grad_out.spatial().iter().product();
    par::for_each_chunk_mut(g.data_mut(), iv, |p, dst| {
        let go = &grad_out.data()[p * ov..(p + 1) * ov];
        let arg = &pooled.argmax[p * ov..(p + 1) * ov];
        for (o, &i) in arg.iter().enumerate() {
            dst[i as usize] += go[o];
        }
    });
    Ok(g)
}

/// Nearest-neighbour upsampling by 2 on every spatial axis.
pub fn nearest_upsample2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let g = x.rank() - 2;
    let [d, h, w] = lift(x.spatial(), 1);
    let kd = if g == 3 { 2 } else { 1 };
    let mut dims = x.dims().to_vec();
    dims[2..].iter_mut().for_each(|s| *s *= 2);
    let mut out = Tensor::zeros(&dims);
    let (iv, ov) = (d * h * w, d * kd * h * 4 * w);
    par::for_each_chunk_mut(out.data_mut(), ov, |p, dst| {
        let src = &x.data()[p * iv..(p + 1) * iv];
        for (o, v) in dst.iter_mut().enumerate() {
            let xo = o % (2 * w);
            let yo = (o / (2 * w)) % (2 * h);
            let zo = o / (4 * w * h);
            *v = src[((zo / kd) * h + yo / 2) * w + xo / 2];
        }
    });
    Ok(out)
}

pub fn nearest_upsample2_backward<T: Scalar>(input_dims: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let g = input_dims.len() - 2;
    let [d, h, w] = lift(&input_dims[2..], 1);
    let kd = if g == 3 { 2 } else { 1 };
    let (iv, ov) = (d * h * w, d * kd * h * 4 * w);
    if grad_out.numel() != input_dims[0] * input_dims[1] * ov {
        return Err(Error::contract(
            "nearest_upsample2_backward",
            format!("grad {} does not match input {input_dims:?}", grad_out.shape()),
        ));
    }
    let mut gin = Tensor::zeros(input_dims);
    par::for_each_chunk_mut(gin.data_mut(), iv, |p, dst| {
        let src = &grad_out.data()[p * ov..(p + 1) * ov];
        for (o, &v) in src.iter().enumerate() {
            let xo = o % (2 * w);
            let yo = (o / (2 * w)) % (2 * h);
            let zo = o / (4 * w * h);
            dst[((zo / kd) * h + yo / 2) * w + xo / 2] += v;
        }
    });
    Ok(gin)
}

/// Concatenate two feature maps along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.batch() != b.batch() || a.spatial() != b.spatial() {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape().clone(),
            right: b.shape().clone(),
        });
    }
    let plane: usize = a.spatial().iter().product();
    let (ca, cb) = (a.channels() * plane, b.channels() * plane);
    let mut dims = a.dims().to_vec();
    dims[1] += b.channels();
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..a.batch() {
        out.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
        out.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
    }
    Tensor::from_vec(&dims, out)
}

/// Inverse of [`concat_channels`]: split off the first `first` channels.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if first == 0 || first >= x.channels() {
        return Err(Error::contract(
            "split_channels",
            format!("cannot split {first} channels off {}", x.shape()),
        ));
    }
    let plane: usize = x.spatial().iter().product();
    let (ca, cb) = (first * plane, (x.channels() - first) * plane);
    let mut a = Vec::with_capacity(x.batch() * ca);
    let mut b = Vec::with_capacity(x.batch() * cb);
    for item in x.data().chunks(ca + cb) {
        a.extend_from_slice(&item[..ca]);
        b.extend_from_slice(&item[ca..]);
    }
    let mut da = x.dims().to_vec();
    da[1] = first;
    let mut db = x.dims().to_vec();
    db[1] = x.channels() - first;
    Ok((Tensor::from_vec(&da, a)?, Tensor::from_vec(&db, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_and_unpool() {
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 3.0, 0.0, 9.0, 2.0]).unwrap();
        let p = max_pool2(&x).unwrap();
        assert_eq!(p.output.data(), &[5.0, 9.0]);
        let g = max_pool2_backward(x.dims(), &p, &Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        // ties go to the first element
        let p = max_pool2(&Tensor::<f64>::full(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(p.argmax, [0]);
    }

    #[test]
    fn pool3d_reduces_depth() {
        let x = Tensor::from_fn(&[1, 1, 2, 2, 2], |i| i as f64);
        let p = max_pool2(&x).unwrap();
        assert_eq!(p.output.dims(), &[1, 1, 1, 1, 1]);
        assert_eq!(p.output.data(), &[7.0]);
    }

    #[test]
    fn nearest_adjoint() {
        let x = Tensor::from_fn(&[1, 2, 2, 2, 3], |i| (i as f64 * 0.3).cos());
        let y = nearest_upsample2(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 4, 4, 6]);
        let g = Tensor::from_fn(y.dims(), |i| (i as f64 * 0.7).sin());
        let gx = nearest_upsample2_backward(x.dims(), &g).unwrap();
        let lhs = y.dot(&g).unwrap();
        let rhs = x.dot(&gx).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64);
        let b = Tensor::from_fn(&[2, 3, 2, 2], |i| -(i as f64));
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), &[2, 4, 2, 2]);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn relu_gradient_masks_non_positive() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }
}
