use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{sigmoid, Tensor};

pub const DICE_EPS: f64 = 1e-5;

/// Soft Dice loss over the whole tensor and its gradient with respect to the
/// logits:
///
/// ```text
/// p = sigmoid(logits)
/// loss = 1 - (2 * sum(p * g) + eps) / (sum(p) + sum(g) + eps)
/// ```
pub fn soft_dice_loss<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    logits.expect_shape("soft_dice_loss", target.shape())?;
    logits.ensure_finite("soft_dice_loss")?;
    let p: Vec<f64> = logits.data().iter().map(|&x| sigmoid(x.as_f64())).collect();
    let (mut inter, mut union) = (0.0, 0.0);
    for (&pi, &gi) in p.iter().zip(target.data()) {
        let gi = gi.as_f64();
        inter += pi * gi;
        union += pi + gi;
    }
    let num = 2.0 * inter + DICE_EPS;
    let den = union + DICE_EPS;
    let loss = 1.0 - num / den;
    let mut grad = logits.zeros_like();
    for ((gr, &pi), &gi) in grad.data_mut().iter_mut().zip(&p).zip(target.data()) {
        let d_p = -(2.0 * gi.as_f64() * den - num) / (den * den);
        *gr = T::of(d_p * pi * (1.0 - pi));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_empty_predictions() {
        let g = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let logits = g.map(|v| if v > 0.5 { 40.0 } else { -40.0 });
        let (l, _) = soft_dice_loss(&logits, &g).unwrap();
        assert!(l.abs() < 1e-9);
        let empty = Tensor::<f64>::zeros(&[4]);
        let (l, _) = soft_dice_loss(&Tensor::full(&[4], -40.0), &empty).unwrap();
        assert!(l.abs() < 1e-6);
    }

    #[test]
    fn loss_in_unit_interval() {
        let g = Tensor::from_fn(&[16], |i| (i % 3 == 0) as u8 as f64);
        for k in 0..10 {
            let x = Tensor::from_fn(&[16], |i| ((i * 31 + k * 7) % 17) as f64 - 8.0);
            let (l, _) = soft_dice_loss(&x, &g).unwrap();
            assert!((0.0..1.0).contains(&l));
        }
    }
}
