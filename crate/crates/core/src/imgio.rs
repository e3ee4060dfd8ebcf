//! PNG image I/O. Images are exchanged with the rest of the crate as
//! unit-interval `f64` arrays: `(1, H, W)` for grayscale, `(3, H, W)` for
//! color, `(H, W)` strictly-binary masks.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Loads a PNG as a unit-interval array, `(1, H, W)` or `(3, H, W)`
/// depending on the file's color type.
pub fn load_image(path: &Path) -> Result<Array3<f64>> {
    let img = ImageReader::open(path)?.decode()?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Ok(Array3::from_shape_fn((1, h as usize, w as usize), |(_, i, j)| {
                g.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
            }))
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, i, j)| {
                rgb.get_pixel(j as u32, i as u32)[c] as f64 / 255.0
            }))
        }
    }
}

/// Loads a grayscale PNG as a binary mask; any value above one half maps
/// to 1.0.
pub fn load_mask(path: &Path) -> Result<Array2<f64>> {
    let img = load_image(path)?;
    let (c, h, w) = img.dim();
    if c != 1 {
        return Err(Error::ShapeMismatch(format!(
            "mask {} has {c} channels, expected grayscale",
            path.display()
        )));
    }
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        if img[[0, i, j]] > 0.5 {
            1.0
        } else {
            0.0
        }
    }))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `(H, W)` unit-interval map as an 8-bit grayscale PNG.
pub fn save_gray(map: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for (i, j) in (0..h).flat_map(|i| (0..w).map(move |j| (i, j))) {
        img.put_pixel(j as u32, i as u32, image::Luma([quantize(map[[i, j]])]));
    }
    img.save(path)?;
    Ok(())
}

/// Writes a `(3, H, W)` unit-interval image as a 24-bit RGB PNG.
pub fn save_rgb(image: &Array3<f64>, path: &Path) -> Result<()> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!("save_rgb needs 3 channels, got {c}")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            img.put_pixel(
                j as u32,
                i as u32,
                image::Rgb([
                    quantize(image[[0, i, j]]),
                    quantize(image[[1, i, j]]),
                    quantize(image[[2, i, j]]),
                ]),
            );
        }
    }
    img.save(path)?;
    Ok(())
}

/// Bilinear resize of a `(H, W)` map (no gradient; evaluation plumbing).
pub fn resize_map(map: &Array2<f64>, oh: usize, ow: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    if (h, w) == (oh, ow) {
        return map.clone();
    }
    let plan = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                (i0, (i0 + 1).min(n_in - 1), src - i0 as f64)
            })
            .collect()
    };
    let rows = plan(h, oh);
    let cols = plan(w, ow);
    Array2::from_shape_fn((oh, ow), |(i, j)| {
        let (r0, r1, fr) = rows[i];
        let (c0, c1, fc) = cols[j];
        map[[r0, c0]] * (1.0 - fr) * (1.0 - fc)
            + map[[r0, c1]] * (1.0 - fr) * fc
            + map[[r1, c0]] * fr * (1.0 - fc)
            + map[[r1, c1]] * fr * fc
    })
}

/// Bilinear resize of a `(C, H, W)` image.
pub fn resize_image(image: &Array3<f64>, oh: usize, ow: usize) -> Array3<f64> {
    let (c, h, w) = image.dim();
    if (h, w) == (oh, ow) {
        return image.clone();
    }
    let mut out = Array3::zeros((c, oh, ow));
    for ch in 0..c {
        let plane = image.index_axis(ndarray::Axis(0), ch).to_owned();
        out.index_axis_mut(ndarray::Axis(0), ch)
            .assign(&resize_map(&plane, oh, ow));
    }
    out
}
