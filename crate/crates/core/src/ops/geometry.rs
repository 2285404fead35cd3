//! Sliding-window geometry shared by convolution and transposed convolution.
//! Rank-2 problems are lifted to rank 3 with a unit depth axis so a single
//! set of loops serves both.

use crate::scalar::Scalar;

/// One sliding window: `input` is the dense side of the correlation,
/// `output` the strided side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

pub(crate) fn lift(v: &[usize], fill: usize) -> [usize; 3] {
    match *v {
        [h, w] => [fill, h, w],
        [d, h, w] => [d, h, w],
        _ => unreachable!("spatial rank must be 2 or 3"),
    }
}

/// Output extent of a correlation along one axis, if it is at least one.
pub(crate) fn conv_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Output extent of a transposed correlation along one axis.
pub(crate) fn tconv_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (input - 1) * stride + kernel;
    (full > 2 * pad).then(|| full - 2 * pad)
}

impl Window {
    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_volume(&self) -> usize {
        self.output.iter().product()
    }

    /// Kernel that reads each input element exactly once at the same position.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Range of output indices `o` along `axis` for which `o * stride + k - pad`
    /// lands inside the input.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let (s, p, n, out) = (
            self.stride[axis],
            self.pad[axis],
            self.input[axis],
            self.output[axis],
        );
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if n + p > k {
            ((n + p - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Visit every (input offset, output offset) pair touched by kernel tap
    /// `(kz, ky, kx)`, one contiguous-in-output run at a time:
    /// `f(input_start, output_start, len)`; consecutive input elements of a run
    /// are `stride[2]` apart.
    #[inline]
    fn for_each_run(&self, tap: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let (z0, z1) = self.valid(0, tap[0]);
        let (y0, y1) = self.valid(1, tap[1]);
        let (x0, x1) = self.valid(2, tap[2]);
        if x1 <= x0 {
            return;
        }
        for oz in z0..z1 {
            let iz = oz * self.stride[0] + tap[0] - self.pad[0];
            for oy in y0..y1 {
                let iy = oy * self.stride[1] + tap[1] - self.pad[1];
                let ix = x0 * self.stride[2] + tap[2] - self.pad[2];
                f((iz * ih + iy) * iw + ix, (oz * oh + oy) * ow + x0, x1 - x0);
            }
        }
    }

    fn taps(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [kd, kh, kw] = self.kernel;
        (0..kd).flat_map(move |z| (0..kh).flat_map(move |y| (0..kw).map(move |x| [z, y, x])))
    }

    /// Unfold `input` (`channels x input_volume`) into columns
    /// (`channels * kernel_volume x output_volume`).
    pub fn im2col<T: Scalar>(&self, input: &[T], channels: usize, cols: &mut [T]) {
        let (iv, ov, kv) = (self.input_volume(), self.output_volume(), self.kernel_volume());
        debug_assert_eq!(input.len(), channels * iv);
        debug_assert_eq!(cols.len(), channels * kv * ov);
        cols.fill(T::zero());
        let sx = self.stride[2];
        for c in 0..channels {
            let src = &input[c * iv..(c + 1) * iv];
            for (t, tap) in self.taps().enumerate() {
                let row = &mut cols[(c * kv + t) * ov..(c * kv + t + 1) * ov];
                self.for_each_run(tap, |i0, o0, len| {
                    let dst = &mut row[o0..o0 + len];
                    if sx == 1 {
                        dst.copy_from_slice(&src[i0..i0 + len]);
                    } else {
                        dst.iter_mut()
                            .enumerate()
                            .for_each(|(j, d)| *d = src[i0 + j * sx]);
                    }
                });
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: accumulate columns back into `input`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], channels: usize, input: &mut [T]) {
        let (iv, ov, kv) = (self.input_volume(), self.output_volume(), self.kernel_volume());
        debug_assert_eq!(input.len(), channels * iv);
        debug_assert_eq!(cols.len(), channels * kv * ov);
        let sx = self.stride[2];
        for c in 0..channels {
            let dst = &mut input[c * iv..(c + 1) * iv];
            for (t, tap) in self.taps().enumerate() {
                let row = &cols[(c * kv + t) * ov..(c * kv + t + 1) * ov];
                self.for_each_run(tap, |i0, o0, len| {
                    let src = &row[o0..o0 + len];
                    if sx == 1 {
                        dst[i0..i0 + len]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &s)| *d += s);
                    } else {
                        src.iter()
                            .enumerate()
                            .for_each(|(j, &s)| dst[i0 + j * sx] += s);
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(input: usize, k: usize, s: usize, p: usize) -> Window {
        let out = conv_extent(input, k, s, p).unwrap();
        Window {
            input: [1, input, input],
            output: [1, out, out],
            kernel: [1, k, k],
            stride: [1, s, s],
            pad: [0, p, p],
        }
    }

    #[test]
    fn extents() {
        assert_eq!(conv_extent(2, 2, 1, 0), Some(1));
        assert_eq!(conv_extent(2, 2, 1, 1), Some(3));
        assert_eq!(conv_extent(1, 3, 1, 0), None);
        assert_eq!(tconv_extent(3, 4, 2, 1), Some(6));
        assert_eq!(tconv_extent(1, 1, 1, 1), None);
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        for &(n, k, s, p) in &[(5, 3, 1, 1), (6, 4, 2, 1), (4, 2, 2, 0), (3, 3, 2, 2)] {
            let w = window(n, k, s, p);
            let ch = 2;
            let x: Vec<f64> = (0..ch * w.input_volume()).map(|i| (i as f64 * 0.37).sin()).collect();
            let y: Vec<f64> = (0..ch * w.kernel_volume() * w.output_volume())
                .map(|i| (i as f64 * 0.11).cos())
                .collect();
            let mut cols = vec![0.0; y.len()];
            w.im2col(&x, ch, &mut cols);
            let mut back = vec![0.0; x.len()];
            w.col2im(&y, ch, &mut back);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{n} {k} {s} {p}: {lhs} {rhs}");
        }
    }
}
