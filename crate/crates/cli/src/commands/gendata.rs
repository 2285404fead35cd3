use dtc_core::data::{export_pgm, gen_dataset, write_dataset};
use dtc_core::Tensor;

use crate::error::{CliError, CliResult};
use crate::Common;

/// `[1, S...]` -> 2D plane (middle slice of a volume).
fn plane(t: &Tensor<f32>) -> CliResult<Tensor<f32>> {
    let s = &t.dims()[1..];
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let start = if s.len() == 3 { s[0] / 2 * h * w } else { 0 };
    Ok(Tensor::from_vec(&[h, w], t.data()[start..start + h * w].to_vec())?)
}

pub fn gen_data(common: &Common) -> CliResult<()> {
    let mut cfg = common.load()?;
    if let Some(seed) = common.seed {
        cfg.data_seed = seed;
    }
    let spec = cfg.dataset();
    spec.validate()?;
    write_dataset(&spec, &common.out)?;
    let preview = common.out.join("preview");
    std::fs::create_dir_all(&preview).map_err(|e| CliError::Core(dtc_core::Error::io(&preview, e)))?;
    for (i, s) in gen_dataset(&spec).iter().enumerate() {
        export_pgm(preview.join(format!("image_{i:05}.pgm")), &plane(&s.image)?)?;
        export_pgm(preview.join(format!("mask_{i:05}.pgm")), &plane(&s.mask)?)?;
    }
    println!(
        "{} samples ({} train, {} val) written to {}",
        spec.len(),
        spec.n_train,
        spec.n_val,
        common.out.display()
    );
    Ok(())
}
