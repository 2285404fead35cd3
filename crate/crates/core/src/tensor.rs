//! Dense row-major tensors.
//!
//! Feature maps use the axis order `[batch, channels, (depth,) height, width]`.
//! Every operation in the crate documents its shapes in that convention.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered list of positive extents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "rank must be at least 1".into(),
            });
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "every extent must be >= 1".into(),
            });
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "element count overflows usize".into(),
            })?;
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    /// # Panics
    /// If `dims` is not a valid [`Shape`].
    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let shape = Shape::new(dims).unwrap_or_else(|e| panic!("{e}"));
        let data = vec![value; shape.numel()];
        Tensor { shape, data }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: format!("expects {} elements, got {}", shape.numel(), data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(dims);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Batch extent of a feature map.
    pub fn batch(&self) -> usize {
        self.dims()[0]
    }

    /// Channel extent of a feature map.
    pub fn channels(&self) -> usize {
        self.dims()[1]
    }

    /// Spatial extents of a feature map (everything after `[B, C]`).
    pub fn spatial(&self) -> &[usize] {
        &self.dims()[2..]
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn expect_shape(&self, op: &'static str, other: &Shape) -> Result<()> {
        if &self.shape == other {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.clone(),
            })
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(op, &other.shape)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape("add_assign", &other.shape)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_shape("dot", &other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_shape("max_abs_diff", &other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Elementwise hyperbolic tangent, kept strictly inside (-1, 1).
    pub fn tanh(&self) -> Result<Self> {
        self.ensure_finite("tanh")?;
        Ok(self.map(tanh))
    }

    /// `1 - tanh(x)^2`.
    pub fn tanh_derivative(&self) -> Result<Self> {
        self.ensure_finite("tanh_derivative")?;
        Ok(self.map(|x| tanh_grad_from_output(tanh(x))))
    }

    /// Elementwise logistic sigmoid, kept strictly inside (0, 1).
    pub fn sigmoid(&self) -> Result<Self> {
        self.ensure_finite("sigmoid")?;
        Ok(self.map(sigmoid))
    }

    /// `sigmoid(x) * (1 - sigmoid(x))`.
    pub fn sigmoid_derivative(&self) -> Result<Self> {
        self.ensure_finite("sigmoid_derivative")?;
        Ok(self.map(|x| sigmoid_grad_from_output(sigmoid(x))))
    }
}

/// Largest value strictly below one.
#[inline]
fn below_one<T: Scalar>() -> T {
    T::one() - T::epsilon() / T::of(2.0)
}

#[inline]
pub fn tanh<T: Scalar>(x: T) -> T {
    let hi = below_one::<T>();
    x.tanh().max(-hi).min(hi)
}

#[inline]
pub fn tanh_grad_from_output<T: Scalar>(t: T) -> T {
    T::one() - t * t
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    s.max(T::min_positive_value()).min(below_one::<T>())
}

#[inline]
pub fn sigmoid_grad_from_output<T: Scalar>(s: T) -> T {
    s * (T::one() - s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn add_small_vectors() {
        let s = t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
        let x = t(&[2, 2], &[0.5, -1.0, 2.0, 3.5]);
        assert_eq!(x.add(&x.zeros_like()).unwrap(), x);
    }

    #[test]
    fn add_reports_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 2]);
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn shape_rejects_empty_and_zero_extents() {
        assert!(Shape::new(&[]).is_err());
        assert!(Shape::new(&[2, 0]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn tanh_examples() {
        let y = t(&[3], &[0.0, 20.0, -20.0]).tanh().unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!(y.data()[1] < 1.0 && (1.0 - y.data()[1]) < 1e-8);
        assert!(y.data()[2] > -1.0);
        let d = t(&[1], &[0.0]).tanh_derivative().unwrap();
        assert_eq!(d.data()[0], 1.0);
    }

    #[test]
    fn sigmoid_examples() {
        let y = t(&[3], &[0.0, -20.0, 800.0]).sigmoid().unwrap();
        assert_eq!(y.data()[0], 0.5);
        assert!(y.data()[1] > 0.0 && y.data()[1] < 1e-8);
        assert!(y.data()[2] < 1.0);
        let d = t(&[1], &[0.0]).sigmoid_derivative().unwrap();
        assert_eq!(d.data()[0], 0.25);
        assert!(sigmoid(-1000.0f64) > 0.0);
    }

    #[test]
    fn activations_reject_non_finite() {
        assert!(matches!(
            t(&[2], &[0.0, f64::NAN]).tanh(),
            Err(Error::NonFinite(_))
        ));
        assert!(t(&[1], &[f64::INFINITY]).sigmoid().is_err());
    }

    fn tensor_pair(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        let v = || proptest::collection::vec(-1e3f64..1e3, n);
        (v(), v(), v())
    }

    proptest! {
        #[test]
        fn add_commutes_and_associates((a, b, c) in tensor_pair(12)) {
            let (a, b, c) = (t(&[3, 4], &a), t(&[3, 4], &b), t(&[3, 4], &c));
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            let l = a.add(&b).unwrap().add(&c).unwrap();
            let r = a.add(&b.add(&c).unwrap()).unwrap();
            // relative to operand magnitude (1e3)
            prop_assert!(l.max_abs_diff(&r).unwrap() <= 1e-12 * 1e3);
        }

        #[test]
        fn activation_derivatives_match_central_differences(x in -6.0f64..6.0) {
            let h = 1e-5;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            let fd_t = (tanh(x + h) - tanh(x - h)) / (2.0 * h);
            let fd_s = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
            prop_assert!(rel(tanh_grad_from_output(tanh(x)), fd_t) < 1e-6);
            prop_assert!(rel(sigmoid_grad_from_output(sigmoid(x)), fd_s) < 1e-6);
        }
    }
}
