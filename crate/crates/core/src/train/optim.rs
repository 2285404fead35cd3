use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// AdamW with decoupled weight decay:
///
/// ```text
/// m = b1 m + (1 - b1) g        v = b2 v + (1 - b2) g^2
/// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// ```
#[derive(Clone, Debug)]
pub struct AdamWState<T> {
    pub config: AdamWConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(
                "adamw_step",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| p.zeros_like()).collect();
            self.v = self.m.clone();
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            p.expect_shape("adamw_step", g.shape())?;
            p.expect_shape("adamw_step", m.shape())?;
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &gi), (mi, vi)) in it {
                let gi = gi.as_f64();
                let mn = c.beta1 * mi.as_f64() + (1.0 - c.beta1) * gi;
                let vn = c.beta2 * vi.as_f64() + (1.0 - c.beta2) * gi * gi;
                *mi = T::of(mn);
                *vi = T::of(vn);
                let th = theta.as_f64();
                let upd = (mn / bc1) / ((vn / bc2).sqrt() + c.eps) + c.weight_decay * th;
                *theta = T::of(th - c.lr * upd);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_applies_only_decay() {
        let mut st = AdamWState::<f64>::new(AdamWConfig::default());
        let mut p = Tensor::from_vec(&[2], vec![2.0, -1.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        st.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.data()[0] - (2.0 - 1e-4 * 1e-5 * 2.0)).abs() < 1e-15);
        assert!((p.data()[1] - (-1.0 + 1e-4 * 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_lr_over_one_plus_eps() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = AdamWState::<f64>::new(cfg);
        let mut p = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        st.step(&mut [&mut p], &[&Tensor::full(&[1], 1.0)]).unwrap();
        assert!((p.data()[0] - (0.5 - 1e-4 / (1.0 + 1e-8))).abs() < 1e-16);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut st = AdamWState::<f64>::new(AdamWConfig::default());
        let mut p = Tensor::zeros(&[2]);
        assert!(st.step(&mut [&mut p], &[&Tensor::zeros(&[3])]).is_err());
    }
}
