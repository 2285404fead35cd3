//! Convolution (cross-correlation, no kernel flip) and transposed convolution
//! for spatial rank 2 and 3, lowered to im2col + GEMM per batch item.

use crate::error::{Error, Result};
use crate::ops::geometry::{conv_extent, lift, tconv_extent, Window};
use crate::par;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Kernel `[Cout, Cin, k...]`, optional bias `[Cout]`, per-axis stride and
/// zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

/// Kernel `[Cin, Cout, k...]`, optional bias `[Cout]`. Output extent per axis
/// is `(S - 1) * stride - 2 * pad + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TConvSpec<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

/// Gradients of a (transposed) convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

fn validate_kernel<T: Scalar>(
    op: &'static str,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    bias_len: usize,
    stride: &[usize],
    padding: &[usize],
) -> Result<()> {
    let g = kernel.rank().saturating_sub(2);
    if !(2..=3).contains(&g) {
        return Err(Error::contract(
            op,
            format!("kernel rank must be 4 or 5, got {}", kernel.shape()),
        ));
    }
    if stride.len() != g || padding.len() != g {
        return Err(Error::contract(
            op,
            format!("stride/padding need {g} entries, got {stride:?}/{padding:?}"),
        ));
    }
    if stride.contains(&0) {
        return Err(Error::contract(op, "stride must be >= 1"));
    }
    if let Some(b) = bias {
        if b.dims() != [bias_len] {
            return Err(Error::contract(
                op,
                format!("bias must be [{bias_len}], got {}", b.shape()),
            ));
        }
    }
    Ok(())
}

fn check_feature_map<T: Scalar>(op: &'static str, input: &Tensor<T>, g: usize, channels: usize) -> Result<()> {
    if input.rank() != g + 2 {
        return Err(Error::contract(
            op,
            format!("expected rank-{} feature map, got {}", g + 2, input.shape()),
        ));
    }
    if input.channels() != channels {
        return Err(Error::contract(
            op,
            format!("expected {channels} input channels, got {}", input.channels()),
        ));
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (row, &v) in out.chunks_mut(plane).zip(b.data()) {
            row.iter_mut().for_each(|x| *x += v);
        }
    }
}

fn bias_grad<T: Scalar>(grad_out: &Tensor<T>, channels: usize) -> Tensor<T> {
    let plane: usize = grad_out.spatial().iter().product();
    let mut g = Tensor::zeros(&[channels]);
    for item in grad_out.data().chunks(channels * plane) {
        for (c, row) in item.chunks(plane).enumerate() {
            g.data_mut()[c] += row.iter().copied().sum::<T>();
        }
    }
    g
}

/// Sum per-item partial kernel gradients in batch order.
fn reduce_in_order<T: Scalar>(partials: Vec<Vec<T>>, dims: &[usize]) -> Tensor<T> {
    let mut acc = Tensor::zeros(dims);
    for p in partials {
        acc.data_mut().iter_mut().zip(&p).for_each(|(a, &b)| *a += b);
    }
    acc
}

impl<T: Scalar> ConvSpec<T> {
    pub fn new(kernel: Tensor<T>, stride: Vec<usize>, padding: Vec<usize>) -> Result<Self> {
        validate_kernel("conv", &kernel, None, 0, &stride, &padding)?;
        Ok(Self {
            kernel,
            bias: None,
            stride,
            padding,
        })
    }

    pub fn with_bias(mut self, bias: Tensor<T>) -> Result<Self> {
        validate_kernel("conv", &self.kernel, Some(&bias), self.out_channels(), &self.stride, &self.padding)?;
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims()[1]
    }

    pub fn spatial_rank(&self) -> usize {
        self.kernel.rank() - 2
    }

    pub fn output_spatial(&self, input: &[usize]) -> Result<Vec<usize>> {
        let k = &self.kernel.dims()[2..];
        (0..input.len())
            .map(|a| {
                conv_extent(input[a], k[a], self.stride[a], self.padding[a]).ok_or_else(|| {
                    Error::contract(
                        "conv",
                        format!("non-positive output extent on axis {a} for input {input:?}"),
                    )
                })
            })
            .collect()
    }

    fn window(&self, input: &Tensor<T>) -> Result<Window> {
        check_feature_map("conv", input, self.spatial_rank(), self.in_channels())?;
        let out = self.output_spatial(input.spatial())?;
        Ok(Window {
            input: lift(input.spatial(), 1),
            output: lift(&out, 1),
            kernel: lift(&self.kernel.dims()[2..], 1),
            stride: lift(&self.stride, 1),
            pad: lift(&self.padding, 0),
        })
    }
}

impl<T: Scalar> TConvSpec<T> {
    pub fn new(kernel: Tensor<T>, stride: Vec<usize>, padding: Vec<usize>) -> Result<Self> {
        validate_kernel("tconv", &kernel, None, 0, &stride, &padding)?;
        Ok(Self {
            kernel,
            bias: None,
            stride,
            padding,
        })
    }

    pub fn with_bias(mut self, bias: Tensor<T>) -> Result<Self> {
        validate_kernel("tconv", &self.kernel, Some(&bias), self.out_channels(), &self.stride, &self.padding)?;
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims()[1]
    }

    pub fn spatial_rank(&self) -> usize {
        self.kernel.rank() - 2
    }

    pub fn output_spatial(&self, input: &[usize]) -> Result<Vec<usize>> {
        let k = &self.kernel.dims()[2..];
        (0..input.len())
            .map(|a| {
                tconv_extent(input[a], k[a], self.stride[a], self.padding[a]).ok_or_else(|| {
                    Error::contract(
                        "tconv",
                        format!("non-positive output extent on axis {a} for input {input:?}"),
                    )
                })
            })
            .collect()
    }

    /// Window of the equivalent correlation: its dense side is the transposed
    /// convolution's output.
    fn window(&self, input: &Tensor<T>) -> Result<Window> {
        check_feature_map("tconv", input, self.spatial_rank(), self.in_channels())?;
        let out = self.output_spatial(input.spatial())?;
        Ok(Window {
            input: lift(&out, 1),
            output: lift(input.spatial(), 1),
            kernel: lift(&self.kernel.dims()[2..], 1),
            stride: lift(&self.stride, 1),
            pad: lift(&self.padding, 0),
        })
    }
}

fn feature_dims(batch: usize, channels: usize, spatial: &[usize; 3], g: usize) -> Vec<usize> {
    let mut d = vec![batch, channels];
    d.extend_from_slice(&spatial[3 - g..]);
    d
}

/// `[B, Cin, S...]` -> `[B, Cout, S'...]`.
pub fn conv_forward<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>> {
    let w = spec.window(input)?;
    let (b, cin, cout) = (input.batch(), spec.in_channels(), spec.out_channels());
    let (iv, ov, kv) = (w.input_volume(), w.output_volume(), w.kernel_volume());
    let mut out = Tensor::zeros(&feature_dims(b, cout, &w.output, spec.spatial_rank()));
    let kernel = MatRef::new(spec.kernel.data(), cout, cin * kv);
    par::for_each_chunk_mut(out.data_mut(), cout * ov, |i, dst| {
        let src = &input.data()[i * cin * iv..(i + 1) * cin * iv];
        if w.is_pointwise() {
            gemm(kernel, MatRef::new(src, cin, ov), T::zero(), dst);
        } else {
            let mut cols = vec![T::zero(); cin * kv * ov];
            w.im2col(src, cin, &mut cols);
            gemm(kernel, MatRef::new(&cols, cin * kv, ov), T::zero(), dst);
        }
        add_bias(dst, spec.bias.as_ref(), ov);
    });
    Ok(out)
}

pub fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let w = spec.window(input)?;
    let (b, cin, cout) = (input.batch(), spec.in_channels(), spec.out_channels());
    let (iv, ov, kv) = (w.input_volume(), w.output_volume(), w.kernel_volume());
    let expected = feature_dims(b, cout, &w.output, spec.spatial_rank());
    if grad_out.dims() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "conv_backward",
            left: grad_out.shape().clone(),
            right: crate::tensor::Shape::new(&expected)?,
        });
    }

    let kernel_t = MatRef::transposed(spec.kernel.data(), cin * kv, cout);
    let mut grad_input = input.zeros_like();
    par::for_each_chunk_mut(grad_input.data_mut(), cin * iv, |i, dst| {
        let g = &grad_out.data()[i * cout * ov..(i + 1) * cout * ov];
        if w.is_pointwise() {
            gemm(kernel_t, MatRef::new(g, cout, ov), T::zero(), dst);
        } else {
            let mut cols = vec![T::zero(); cin * kv * ov];
            gemm(kernel_t, MatRef::new(g, cout, ov), T::zero(), &mut cols);
            w.col2im(&cols, cin, dst);
        }
    });

    let partials = par::map_range(b, |i| {
        let src = &input.data()[i * cin * iv..(i + 1) * cin * iv];
        let g = &grad_out.data()[i * cout * ov..(i + 1) * cout * ov];
        let mut part = vec![T::zero(); cout * cin * kv];
        if w.is_pointwise() {
            gemm(MatRef::new(g, cout, ov), MatRef::transposed(src, ov, cin), T::zero(), &mut part);
        } else {
            let mut cols = vec![T::zero(); cin * kv * ov];
            w.im2col(src, cin, &mut cols);
            gemm(
                MatRef::new(g, cout, ov),
                MatRef::transposed(&cols, ov, cin * kv),
                T::zero(),
                &mut part,
            );
        }
        part
    });

    Ok(ConvGrads {
        input: grad_input,
        kernel: reduce_in_order(partials, spec.kernel.dims()),
        bias: spec.bias.as_ref().map(|_| bias_grad(grad_out, cout)),
    })
}

/// `[B, Cin, S...]` -> `[B, Cout, (S-1)*stride - 2*pad + k ...]`.
pub fn tconv_forward<T: Scalar>(input: &Tensor<T>, spec: &TConvSpec<T>) -> Result<Tensor<T>> {
    let w = spec.window(input)?;
    let (b, cin, cout) = (input.batch(), spec.in_channels(), spec.out_channels());
    let (sv, ov, kv) = (w.output_volume(), w.input_volume(), w.kernel_volume());
    let mut out = Tensor::zeros(&feature_dims(b, cout, &w.input, spec.spatial_rank()));
    let kernel_t = MatRef::transposed(spec.kernel.data(), cout * kv, cin);
    par::for_each_chunk_mut(out.data_mut(), cout * ov, |i, dst| {
        let src = &input.data()[i * cin * sv..(i + 1) * cin * sv];
        if w.is_pointwise() {
            gemm(kernel_t, MatRef::new(src, cin, sv), T::zero(), dst);
        } else {
            let mut cols = vec![T::zero(); cout * kv * sv];
            gemm(kernel_t, MatRef::new(src, cin, sv), T::zero(), &mut cols);
            w.col2im(&cols, cout, dst);
        }
        add_bias(dst, spec.bias.as_ref(), ov);
    });
    Ok(out)
}

pub fn tconv_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &TConvSpec<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let w = spec.window(input)?;
    let (b, cin, cout) = (input.batch(), spec.in_channels(), spec.out_channels());
    let (sv, ov, kv) = (w.output_volume(), w.input_volume(), w.kernel_volume());
    let expected = feature_dims(b, cout, &w.input, spec.spatial_rank());
    if grad_out.dims() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "tconv_backward",
            left: grad_out.shape().clone(),
            right: crate::tensor::Shape::new(&expected)?,
        });
    }

    let kernel = MatRef::new(spec.kernel.data(), cin, cout * kv);
    let unfold = |i: usize| -> Vec<T> {
        let g = &grad_out.data()[i * cout * ov..(i + 1) * cout * ov];
        if w.is_pointwise() {
            g.to_vec()
        } else {
            let mut cols = vec![T::zero(); cout * kv * sv];
            w.im2col(g, cout, &mut cols);
            cols
        }
    };

    let mut grad_input = input.zeros_like();
    par::for_each_chunk_mut(grad_input.data_mut(), cin * sv, |i, dst| {
        let cols = unfold(i);
        gemm(kernel, MatRef::new(&cols, cout * kv, sv), T::zero(), dst);
    });

    let partials = par::map_range(b, |i| {
        let cols = unfold(i);
        let src = &input.data()[i * cin * sv..(i + 1) * cin * sv];
        let mut part = vec![T::zero(); cin * cout * kv];
        gemm(
            MatRef::new(src, cin, sv),
            MatRef::transposed(&cols, sv, cout * kv),
            T::zero(),
            &mut part,
        );
        part
    });

    Ok(ConvGrads {
        input: grad_input,
        kernel: reduce_in_order(partials, spec.kernel.dims()),
        bias: spec.bias.as_ref().map(|_| bias_grad(grad_out, cout)),
    })
}
