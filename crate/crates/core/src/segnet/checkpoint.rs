//! Checkpoints: `params.bin` holds the named tensors back to back as `.dtct`
//! records; `manifest.txt` lists `name offset shape` per record, with the
//! byte offset into `params.bin` and the shape written as `AxBxC`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::io::{decode_prefix, encode_tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{build_unet, UNetConfig, UNetParams};

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn save_checkpoint<T: Scalar>(dir: impl AsRef<Path>, params: &UNetParams<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut manifest = String::new();
    for (name, t) in params.named() {
        let shape: Vec<String> = t.dims().iter().map(usize::to_string).collect();
        let _ = writeln!(manifest, "{name} {} {}", blob.len(), shape.join("x"));
        blob.extend(encode_tensor(t));
    }
    let p = dir.join(PARAMS_FILE);
    fs::write(&p, blob).map_err(|e| Error::io(&p, e))?;
    let m = dir.join(MANIFEST_FILE);
    fs::write(&m, manifest).map_err(|e| Error::io(&m, e))
}

/// Load into the structure implied by `cfg`; names and shapes must match.
pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>, cfg: &UNetConfig) -> Result<UNetParams<T>> {
    let dir = dir.as_ref();
    let p = dir.join(PARAMS_FILE);
    let blob = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let m = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    let entries: Vec<(&str, usize)> = manifest
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut f = l.split_whitespace();
            match (f.next(), f.next().and_then(|o| o.parse().ok())) {
                (Some(n), Some(o)) => Ok((n, o)),
                _ => Err(Error::Config(format!("malformed manifest line {l:?}"))),
            }
        })
        .collect::<Result<_>>()?;

    let mut params = build_unet::<T>(cfg, 0)?;
    let slots = params.named_mut();
    if slots.len() != entries.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, configuration expects {}",
            entries.len(),
            slots.len()
        )));
    }
    for ((name, slot), (entry, offset)) in slots.into_iter().zip(entries) {
        if name != entry {
            return Err(Error::Config(format!("checkpoint tensor {entry:?} where {name:?} was expected")));
        }
        let bytes = blob.get(offset..).ok_or(Error::TruncatedPayload {
            expected: offset,
            found: blob.len(),
        })?;
        let (t, _) = decode_prefix(bytes)?;
        if t.dims() != slot.dims() {
            return Err(Error::ShapeMismatch {
                op: "load_checkpoint",
                left: slot.shape().clone(),
                right: t.shape().clone(),
            });
        }
        *slot = t.cast();
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::super::Upsampler;
    use super::*;
    use crate::dtc::{AblationSwitches, ReceptiveField};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = UNetConfig::new(2, Upsampler::DtcOverLinear(ReceptiveField::default(), AblationSwitches::FULL));
        let p = build_unet::<f32>(&cfg, 11).unwrap();
        save_checkpoint(dir.path(), &p).unwrap();
        assert_eq!(load_checkpoint::<f32>(dir.path(), &cfg).unwrap(), p);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.starts_with("enc0.conv1.weight 0 8x1x3x3\n"));
        let lin = UNetConfig::new(2, Upsampler::LinearInterp);
        assert!(load_checkpoint::<f32>(dir.path(), &lin).is_err());
    }
}
