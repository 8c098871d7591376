use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::augment::resize_sample;
use crate::data::index::{file_stem, list_images};
use crate::data::{io, Sample};
use crate::error::{Result, TvnetError};
use crate::map::Map;
use crate::model::{ParamStore, TvNet};
use crate::tensor::{resize_bilinear, Tensor};

/// Resizes every sample to `size x size`.
pub fn prepare_samples(samples: &[Sample], size: usize) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| resize_sample(s, size, size))
        .collect()
}

/// Probability map for a `[1, 3, H, W]` image: the image is resized to
/// the network input size and the prediction back to `H x W`.
pub fn predict_sample(
    net: &TvNet,
    params: &ParamStore,
    image: &Tensor,
    input_size: usize,
) -> Result<Map> {
    let (h, w) = image.spatial();
    let x = resize_bilinear(image, input_size, input_size)?;
    let out = net.predict(params, &x)?;
    let prob = resize_bilinear(&out.final_prob, h, w)?;
    Ok(Map::from_tensor_plane(&prob, 0, 0).map(|v| v.clamp(0.0, 1.0)))
}

/// Predictions for several samples, in input order.
pub fn predict_samples(
    net: &TvNet,
    params: &ParamStore,
    samples: &[Sample],
    input_size: usize,
) -> Result<Vec<Map>> {
    samples
        .par_iter()
        .map(|s| predict_sample(net, params, &s.image, input_size))
        .collect()
}

/// Writes `<out_dir>/<stem>.png` (8-bit gray) for every image in
/// `image_dir` and returns the written paths in name order.
pub fn predict_directory(
    net: &TvNet,
    params: &ParamStore,
    input_size: usize,
    image_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if !image_dir.is_dir() {
        return Err(TvnetError::Data(format!(
            "{} is not a directory",
            image_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| TvnetError::io(out_dir, e))?;
    let inputs = list_images(image_dir)?;
    inputs
        .par_iter()
        .map(|path| {
            let image = io::read_rgb(path)?;
            let prob = predict_sample(net, params, &image, input_size)?;
            let out = out_dir.join(format!("{}.png", file_stem(path)));
            io::write_gray(&out, &prob)?;
            Ok(out)
        })
        .collect()
}
