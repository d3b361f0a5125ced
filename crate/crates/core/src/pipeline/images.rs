use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;

use super::manifest::{resolve, DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

fn open_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

/// Loads an image as `(1, 3, H, W)` with values in `[0, 1]`, resizing to
/// `(height, width)` when needed.
pub fn load_image<T: Scalar>(path: &Path, height: usize, width: usize) -> Result<Tensor<T>> {
    let mut img = open_rgb(path)?;
    if (img.height() as usize, img.width() as usize) != (height, width) {
        img = image::imageops::resize(&img, width as u32, height as u32, FilterType::Triangle);
    }
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn([1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        T::of(raw[p * 3 + c] as f64 / 255.0)
    })
}

/// First item of `t` as an 8-bit RGB image; values are clamped to `[0, 1]`.
pub fn tensor_to_rgb<T: Scalar>(t: &Tensor<T>) -> RgbImage {
    let [_, _, h, w] = t.shape();
    let d = t.item(0);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        let px = |c: usize| (d[c * h * w + p].f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Stacks every image of `split` into one `(N, 3, H, W)` tensor, in
/// manifest order.
pub fn load_split<'m, T: Scalar>(
    manifest: &'m DatasetManifest,
    manifest_path: &Path,
    split: Split,
) -> Result<(Tensor<T>, Vec<&'m ImageRecord>)> {
    let [_, h, w] = manifest.header.image_shape;
    let records: Vec<&ImageRecord> = manifest.split(split).collect();
    let mut data = Vec::with_capacity(records.len() * 3 * h * w);
    for r in &records {
        data.extend_from_slice(load_image::<T>(&resolve(manifest_path, r), h, w)?.data());
    }
    Ok((Tensor::from_vec([records.len(), 3, h, w], data)?, records))
}
