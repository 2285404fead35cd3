//! Floating-point element types and the dense matrix product the
//! convolution kernels are lowered onto.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::Float;

/// Element type of the on-disk format and of tensors in general.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

pub trait Scalar:
    Float
    + LinalgScalar
    + Default
    + Debug
    + Display
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major operand of [`gemm`]: `rows x cols` after the optional transpose.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T: Scalar> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// View `data`, stored row-major as `cols x rows`, as its transpose.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: true,
        }
    }

    fn view(&self) -> ArrayView2<'a, T> {
        if self.transposed {
            ArrayView2::from_shape((self.cols, self.rows), self.data)
                .expect("matrix operand size")
                .reversed_axes()
        } else {
            ArrayView2::from_shape((self.rows, self.cols), self.data).expect("matrix operand size")
        }
    }
}

/// `c = a * b + beta * c`, with `c` row-major `a.rows x b.cols`.
pub(crate) fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let mut out = ArrayViewMut2::from_shape((a.rows, b.cols), c).expect("gemm output size");
    general_mat_mul(T::one(), &a.view(), &b.view(), beta, &mut out);
}
