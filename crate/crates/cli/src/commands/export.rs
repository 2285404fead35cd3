use std::path::Path;

use dtc_core::data::{gen_sample, io::write_pgm_bytes};
use dtc_core::ops::grid::continuous_index;
use dtc_core::segnet::{load_checkpoint, unet_forward_traced};
use dtc_core::train::stack;
use dtc_core::Tensor;

use super::{require_dtc, CHECKPOINT_DIR, CONFIG_FILE};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::Common;

/// Hit map of a sampling grid `[1, out..., g]` over an input of extent
/// `in_spatial`: each coordinate marks its nearest input pixel. 3D maps are
/// projected along the first axis. Returns `(height, width, pixels)`.
pub fn rasterize(coords: &Tensor<f32>, in_spatial: &[usize]) -> (usize, usize, Vec<u8>) {
    let g = in_spatial.len();
    let (h, w) = (in_spatial[g - 2], in_spatial[g - 1]);
    let mut img = vec![0u8; h * w];
    for c in coords.data().chunks(g) {
        let idx: Vec<usize> = c
            .iter()
            .zip(in_spatial)
            .map(|(&v, &n)| {
                let u = continuous_index((v as f64).clamp(-1.0, 1.0), n).round();
                u.clamp(0.0, (n - 1) as f64) as usize
            })
            .collect();
        img[idx[g - 2] * w + idx[g - 1]] = 255;
    }
    (h, w, img)
}

/// Load a `train` output directory and render one DTC layer's scatter.
pub fn coords_image(run_dir: &Path, sample: Option<usize>, level: usize) -> CliResult<(usize, usize, Vec<u8>)> {
    let cfg_path = run_dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", cfg_path.display())))?;
    let cfg = ExperimentConfig::from_text(&text)?;
    require_dtc(&cfg, "export-coords")?;
    let model = cfg.model()?;
    let levels = model.depth - 1;
    if level >= levels {
        return Err(CliError::Usage(format!("level {level} out of range (model has {levels} upsampling levels)")));
    }
    let data = cfg.dataset();
    let index = sample.unwrap_or(data.n_train);
    if index >= data.len() {
        return Err(CliError::Usage(format!("sample {index} out of range (dataset has {})", data.len())));
    }
    let params = load_checkpoint::<f32>(run_dir.join(CHECKPOINT_DIR), &model)?;
    let s = gen_sample(&data, index);
    let (_, trace) = unet_forward_traced(&params, &model, &stack::<f32>(&[&s.image])?)?;
    let dtc = trace
        .dtc(level)
        .ok_or_else(|| CliError::Usage(format!("decoder level {level} has no DTC unit")))?;
    Ok(rasterize(dtc.grid.coords(), dtc.mixed.spatial()))
}

pub fn export_coords(common: &Common, run_dir: &Path, sample: Option<usize>, level: usize) -> CliResult<()> {
    let (h, w, img) = coords_image(run_dir, sample, level)?;
    std::fs::create_dir_all(&common.out).map_err(|e| CliError::Core(dtc_core::Error::io(&common.out, e)))?;
    let path = common.out.join(format!("coords_level{level}.pgm"));
    write_pgm_bytes(&path, w, h, &img)?;
    let hit = img.iter().filter(|&&p| p != 0).count();
    println!(
        "{}: {hit} of {} input pixels sampled ({:.1}%)",
        path.display(),
        img.len(),
        100.0 * hit as f64 / img.len() as f64
    );
    Ok(())
}
