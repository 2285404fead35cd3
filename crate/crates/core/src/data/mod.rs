//! Synthetic segmentation data: one rotated ellipse (2D) or ellipsoid (3D)
//! target per sample, distractor blobs outside it and additive noise.

pub mod io;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{stream_id, SplitMix64};
use crate::tensor::Tensor;

pub use io::{decode_tensor, encode_tensor, export_pgm, read_tensor, write_tensor};

/// Blobs drawn per sample at `clutter_level = 1`.
const MAX_BLOBS: f64 = 12.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub rank: usize,
    /// Extent of every spatial axis.
    pub extent: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub clutter_level: f64,
    pub noise_sigma: f64,
}

impl DatasetSpec {
    /// 64x64 (2D) or 32^3 (3D), 200/50 split, clutter 0.5, noise 0.15.
    pub fn default_for(rank: usize) -> Self {
        Self {
            rank,
            extent: if rank == 3 { 32 } else { 64 },
            n_train: 200,
            n_val: 50,
            seed: 0,
            clutter_level: 0.5,
            noise_sigma: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.rank) {
            return Err(Error::Config(format!("data.rank must be 2 or 3, got {}", self.rank)));
        }
        if self.extent < 4 {
            return Err(Error::Config(format!("data.extent must be >= 4, got {}", self.extent)));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config("data.n_train and data.n_val must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.clutter_level) {
            return Err(Error::Config(format!(
                "data.clutter must lie in [0, 1], got {}",
                self.clutter_level
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "data.noise must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn spatial(&self) -> Vec<usize> {
        vec![self.extent; self.rank]
    }

    pub fn len(&self) -> usize {
        self.n_train + self.n_val
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indices `0..n_train` are training samples, the rest validation.
    pub fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else {
            Split::Val
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Image `[1, S...]` in `[0, 1]` and binary mask `[1, S...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

/// Rows of a 3x3 rotation (2D uses the leading 2x2 block on the last two axes).
fn random_rotation(rank: usize, rng: &mut SplitMix64) -> [[f64; 3]; 3] {
    if rank == 2 {
        let t = rng.range(0.0, std::f64::consts::PI);
        let (s, c) = t.sin_cos();
        return [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
    }
    let mut q = [rng.normal(), rng.normal(), rng.normal(), rng.normal()];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Pixel-center coordinates of flat index `i` on a cube of side `e`.
fn position(i: usize, rank: usize, e: usize) -> [f64; 3] {
    let mut p = [0.0; 3];
    let mut r = i;
    for a in (0..rank).rev() {
        p[a] = (r % e) as f64 + 0.5;
        r /= e;
    }
    p
}

/// Deterministic sample `index` of `spec`.
pub fn gen_sample(spec: &DatasetSpec, index: usize) -> Sample {
    let (g, e) = (spec.rank, spec.extent);
    let ef = e as f64;
    let n: usize = (0..g).map(|_| e).product();
    let mut rng = SplitMix64::keyed(spec.seed, index as u64, stream_id("data.sample"));

    let center: Vec<f64> = (0..g).map(|_| rng.range(ef / 4.0, 3.0 * ef / 4.0)).collect();
    let radii: Vec<f64> = (0..g).map(|_| rng.range(ef / 8.0, ef / 4.0)).collect();
    let rot = random_rotation(g, &mut rng);
    let background = rng.range(0.15, 0.35);
    let foreground = background + rng.range(0.3, 0.5);

    let mut mask = vec![0f32; n];
    let mut image = vec![background; n];
    for i in 0..n {
        let p = position(i, g, e);
        let mut q = 0.0;
        for (a, r) in radii.iter().enumerate() {
            let d: f64 = (0..g).map(|b| rot[a][b] * (p[b] - center[b])).sum();
            q += (d / r) * (d / r);
        }
        if q <= 1.0 {
            mask[i] = 1.0;
            image[i] = foreground;
        }
    }

    let blobs = (spec.clutter_level * MAX_BLOBS).round() as usize;
    for _ in 0..blobs {
        let c: Vec<f64> = (0..g).map(|_| rng.range(0.0, ef)).collect();
        let r = rng.range(ef / 32.0, ef / 12.0).max(1.0);
        let level = background + rng.range(0.2, 0.55);
        for (i, v) in image.iter_mut().enumerate() {
            if mask[i] > 0.0 {
                continue;
            }
            let p = position(i, g, e);
            let d2: f64 = (0..g).map(|a| (p[a] - c[a]) * (p[a] - c[a])).sum();
            if d2 <= r * r {
                *v = level;
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let mut noise = SplitMix64::keyed(spec.seed, index as u64, stream_id("data.noise"));
        image
            .iter_mut()
            .for_each(|v| *v = (*v + spec.noise_sigma * noise.normal()).clamp(0.0, 1.0));
    }

    let mut dims = vec![1];
    dims.extend(spec.spatial());
    Sample {
        image: Tensor::from_vec(&dims, image.into_iter().map(|v| v as f32).collect()).expect("valid dims"),
        mask: Tensor::from_vec(&dims, mask).expect("valid dims"),
    }
}

/// Every sample of the dataset, training split first.
pub fn gen_dataset(spec: &DatasetSpec) -> Vec<Sample> {
    par::map_range(spec.len(), |i| gen_sample(spec, i))
}

/// Write every sample as `.dtct` files plus `manifest.txt` with one
/// `index split path_image path_mask` line per sample.
pub fn write_dataset(spec: &DatasetSpec, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in gen_dataset(spec).iter().enumerate() {
        let (img, msk) = (format!("image_{i:05}.dtct"), format!("mask_{i:05}.dtct"));
        write_tensor(dir.join(&img), &s.image)?;
        write_tensor(dir.join(&msk), &s.mask)?;
        let _ = writeln!(manifest, "{i} {} {img} {msk}", spec.split_of(i).as_str());
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_binary() {
        let spec = DatasetSpec::default_for(2);
        let a = gen_sample(&spec, 3);
        assert_eq!(a, gen_sample(&spec, 3));
        assert_ne!(a, gen_sample(&spec, 4));
        assert!(a.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a.image.dims(), &[1, 64, 64]);
    }

    #[test]
    fn clean_images_are_two_level() {
        let spec = DatasetSpec {
            clutter_level: 0.0,
            noise_sigma: 0.0,
            ..DatasetSpec::default_for(2)
        };
        for i in 0..10 {
            let s = gen_sample(&spec, i);
            let mut levels: Vec<f32> = s.image.data().to_vec();
            levels.sort_by(f32::total_cmp);
            levels.dedup();
            assert_eq!(levels.len(), 2);
            for (v, m) in s.image.data().iter().zip(s.mask.data()) {
                assert_eq!(*v == levels[1], *m == 1.0);
            }
        }
    }

    #[test]
    fn clutter_stays_outside_mask() {
        let clean = DatasetSpec {
            clutter_level: 0.0,
            noise_sigma: 0.0,
            ..DatasetSpec::default_for(2)
        };
        let busy = DatasetSpec {
            clutter_level: 1.0,
            ..clean.clone()
        };
        for i in 0..5 {
            let (a, b) = (gen_sample(&clean, i), gen_sample(&busy, i));
            assert_eq!(a.mask, b.mask);
            for ((x, y), m) in a.image.data().iter().zip(b.image.data()).zip(a.mask.data()) {
                if *m == 1.0 {
                    assert_eq!(x, y);
                }
            }
        }
    }
}
