//! 8-bit image reading and writing.

use std::path::Path;

use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage};

use crate::error::{Result, TvnetError};
use crate::map::Map;
use crate::tensor::Tensor;

fn open(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| TvnetError::io(path, e))?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| TvnetError::io(path, e))?;
    reader.decode().map_err(|source| TvnetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| TvnetError::io(parent, e))?;
        }
    }
    Ok(())
}

/// Reads an image as `[1, 3, H, W]` with values in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0;
        }
    }
    Tensor::from_vec([1, 3, h, w], data)
}

/// Reads an 8-bit grayscale map scaled to `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Map> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Map::new(
        h,
        w,
        img.into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
    )
}

/// Reads a mask, binarised at 128.
pub fn read_binary(path: &Path) -> Result<Map> {
    Ok(read_gray(path)?.binarize(128.0 / 255.0))
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[0, 1]` map as 8-bit grayscale PNG.
pub fn write_gray(path: &Path, map: &Map) -> Result<()> {
    ensure_parent(path)?;
    let img = GrayImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        Luma([to_u8(map.get(y as usize, x as usize))])
    });
    img.save(path).map_err(|source| TvnetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes item 0 of a `[N, 3, H, W]` tensor as 8-bit RGB PNG.
pub fn write_rgb(path: &Path, image: &Tensor) -> Result<()> {
    if image.channels() != 3 {
        return Err(TvnetError::Shape(format!(
            "expected 3 channels, got {:?}",
            image.shape()
        )));
    }
    ensure_parent(path)?;
    let (h, w) = image.spatial();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([0, 1, 2].map(|c| to_u8(image.at(0, c, y, x))))
    });
    img.save(path).map_err(|source| TvnetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Quantises a `[0, 1]` map to the 8-bit grid, as a write/read round trip would.
pub fn quantize(map: &Map) -> Map {
    map.map(|v| to_u8(v) as f64 / 255.0)
}
