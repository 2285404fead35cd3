//! Overlap and surface metrics on binary masks. Masks are tensors whose
//! every axis is spatial (rank 1 to 3); a value above 0.5 is foreground.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check<T: Scalar>(op: &'static str, p: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    p.expect_shape(op, g.shape())?;
    if p.rank() > 3 {
        return Err(Error::contract(op, format!("masks must have at most 3 axes, got {}", p.shape())));
    }
    Ok(())
}

fn fg<T: Scalar>(v: T) -> bool {
    v.as_f64() > 0.5
}

/// `2 |P and G| / (|P| + |G|)`, 1 when both are empty.
pub fn dice_score<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check("dice_score", pred, gt)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (fg(p), fg(g));
        inter += (p && g) as usize;
        total += p as usize + g as usize;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Coordinates of foreground voxels with at least one face-adjacent
/// background neighbour; outside the image counts as background.
pub fn boundary<T: Scalar>(mask: &Tensor<T>) -> Vec<[i64; 3]> {
    let dims = mask.dims();
    let rank = dims.len();
    let mut ext = [1usize; 3];
    ext[3 - rank..].copy_from_slice(dims);
    let at = |z: i64, y: i64, x: i64| -> bool {
        if z < 0 || y < 0 || x < 0 || z >= ext[0] as i64 || y >= ext[1] as i64 || x >= ext[2] as i64 {
            return false;
        }
        fg(mask.data()[((z as usize) * ext[1] + y as usize) * ext[2] + x as usize])
    };
    let mut out = Vec::new();
    for z in 0..ext[0] as i64 {
        for y in 0..ext[1] as i64 {
            for x in 0..ext[2] as i64 {
                if !at(z, y, x) {
                    continue;
                }
                let mut nbrs = vec![(z, y, x - 1), (z, y, x + 1)];
                if rank >= 2 {
                    nbrs.extend([(z, y - 1, x), (z, y + 1, x)]);
                }
                if rank == 3 {
                    nbrs.extend([(z - 1, y, x), (z + 1, y, x)]);
                }
                if nbrs.into_iter().any(|(a, b, c)| !at(a, b, c)) {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

fn within(points: &[[i64; 3]], other: &[[i64; 3]], tau2: f64) -> usize {
    points
        .iter()
        .filter(|p| {
            other.iter().any(|q| {
                let d2: i64 = (0..3).map(|a| (p[a] - q[a]) * (p[a] - q[a])).sum();
                d2 as f64 <= tau2
            })
        })
        .count()
}

/// Normalized surface Dice at tolerance `tau` voxels, by brute force over
/// boundary pairs.
pub fn nsd_score<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, tau: f64) -> Result<f64> {
    check("nsd_score", pred, gt)?;
    if !(tau >= 0.0) {
        return Err(Error::contract("nsd_score", format!("tau must be >= 0, got {tau}")));
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    Ok(match (bp.is_empty(), bg.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let tau2 = tau * tau;
            (within(&bp, &bg, tau2) + within(&bg, &bp, tau2)) as f64 / (bp.len() + bg.len()) as f64
        }
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricResult {
    pub dice: f64,
    pub nsd: f64,
    /// `(dice, nsd)` per sample.
    pub per_sample: Vec<(f64, f64)>,
}

impl MetricResult {
    pub fn from_samples(per_sample: Vec<(f64, f64)>) -> Self {
        let n = per_sample.len().max(1) as f64;
        Self {
            dice: per_sample.iter().map(|s| s.0).sum::<f64>() / n,
            nsd: per_sample.iter().map(|s| s.1).sum::<f64>() / n,
            per_sample,
        }
    }
}
