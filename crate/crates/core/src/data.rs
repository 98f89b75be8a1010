//! Image loading and preprocessing.
//!
//! A [`DatasetManifest`] lists grayscale images and the preprocessing stages
//! to apply. Images are tiled first, then every tile goes through contrast
//! normalization, rescaling to `[0, 1]` and mean subtraction, in that order,
//! so each stage's property holds on the tiles handed to training.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdl::TrainingSet;
use crate::error::{check_len, Error, Result};
use crate::signal_ops::{Geometry, Mask};

/// Local statistics window for [`contrast_normalize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastParams {
    pub radius: usize,
    pub std: f64,
    /// Divisive floor as a fraction of the global standard deviation.
    pub floor_ratio: f64,
}

impl Default for ContrastParams {
    fn default() -> Self {
        ContrastParams { radius: 4, std: 2.0, floor_ratio: 1e-2 }
    }
}

/// Normalized Gaussian weights on `[-radius, radius]²`, row-major.
fn gaussian_window(radius: usize, std: f64) -> Vec<f64> {
    let side = 2 * radius + 1;
    let r = radius as f64;
    let mut w: Vec<f64> = (0..side * side)
        .map(|i| {
            let dy = (i / side) as f64 - r;
            let dx = (i % side) as f64 - r;
            (-(dx * dx + dy * dy) / (2.0 * std * std)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Periodic weighted average of `x` over the window.
fn local_average(x: &[f64], height: usize, width: usize, window: &[f64], radius: usize) -> Vec<f64> {
    let side = 2 * radius + 1;
    (0..height * width)
        .map(|i| {
            let (r, c) = (i / width, i % width);
            window
                .iter()
                .enumerate()
                .map(|(j, wt)| {
                    let rr = (r + height * side + j / side - radius) % height;
                    let cc = (c + width * side + j % side - radius) % width;
                    wt * x[rr * width + cc]
                })
                .sum()
        })
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Subtracts the Gaussian local mean, then divides by the local deviation
/// floored at `floor_ratio` times the global deviation. Boundaries wrap.
pub fn contrast_normalize(image: &[f64], height: usize, width: usize, params: &ContrastParams) -> Result<Vec<f64>> {
    check_len("image", height * width, image.len())?;
    if params.radius == 0 || !(params.std > 0.0) || !(params.floor_ratio > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "contrast normalization needs radius >= 1 and positive std and floor, got {params:?}"
        )));
    }
    let spread = std_dev(image);
    let scale = image.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if spread <= 1e-12 * scale {
        return Ok(vec![0.0; image.len()]);
    }
    let window = gaussian_window(params.radius, params.std);
    let local_mean = local_average(image, height, width, &window, params.radius);
    let centered: Vec<f64> = image.iter().zip(&local_mean).map(|(x, m)| x - m).collect();
    let squares: Vec<f64> = centered.iter().map(|v| v * v).collect();
    let local_var = local_average(&squares, height, width, &window, params.radius);
    let floor = params.floor_ratio * spread;
    Ok(centered.iter().zip(&local_var).map(|(v, s2)| v / s2.sqrt().max(floor)).collect())
}

/// Affine map of `[min, max]` onto `[0, 1]`; a constant image becomes 0.5.
pub fn rescale_unit(image: &[f64]) -> Vec<f64> {
    let lo = image.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; image.len()];
    }
    image.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

pub fn subtract_mean(image: &[f64]) -> Vec<f64> {
    let m = mean(image);
    image.iter().map(|v| v - m).collect()
}

/// Splits into `tile_h x tile_w` tiles in row-major tile order.
pub fn tile<T: Copy>(image: &[T], height: usize, width: usize, tile_h: usize, tile_w: usize) -> Result<Vec<Vec<T>>> {
    check_len("image", height * width, image.len())?;
    if tile_h == 0 || tile_w == 0 || !height.is_multiple_of(tile_h) || !width.is_multiple_of(tile_w) {
        return Err(Error::InvalidGeometry(format!(
            "{height}x{width} image does not split into {tile_h}x{tile_w} tiles"
        )));
    }
    let (rows, cols) = (height / tile_h, width / tile_w);
    Ok((0..rows * cols)
        .map(|t| {
            let (tr, tc) = (t / cols, t % cols);
            (0..tile_h)
                .flat_map(|r| {
                    let start = (tr * tile_h + r) * width + tc * tile_w;
                    image[start..start + tile_w].iter().copied()
                })
                .collect()
        })
        .collect())
}

/// Inverse of [`tile`].
pub fn untile(tiles: &[Vec<f64>], height: usize, width: usize, tile_h: usize, tile_w: usize) -> Result<Vec<f64>> {
    if tile_h == 0 || tile_w == 0 || !height.is_multiple_of(tile_h) || !width.is_multiple_of(tile_w) {
        return Err(Error::InvalidGeometry(format!(
            "{height}x{width} image does not split into {tile_h}x{tile_w} tiles"
        )));
    }
    let cols = width / tile_w;
    check_len("tile count", (height / tile_h) * cols, tiles.len())?;
    let mut out = vec![0.0; height * width];
    for (t, data) in tiles.iter().enumerate() {
        check_len("tile", tile_h * tile_w, data.len())?;
        let (tr, tc) = (t / cols, t % cols);
        for r in 0..tile_h {
            let start = (tr * tile_h + r) * width + tc * tile_w;
            out[start..start + tile_w].copy_from_slice(&data[r * tile_w..(r + 1) * tile_w]);
        }
    }
    Ok(out)
}

/// A grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

/// Loads 8- or 16-bit grayscale (color is converted to luma), scaled to `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        other => other.into_luma16().pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
    };
    Ok(GrayImage { height, width, pixels })
}

/// Writes a 16-bit grayscale PNG, clamping to `[0, 1]`.
pub fn save_gray(path: &Path, image: &GrayImage) -> Result<()> {
    check_len("image", image.height * image.width, image.pixels.len())?;
    let data: Vec<u16> = image.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(image.width as u32, image.height as u32, data)
        .ok_or_else(|| Error::Format("image buffer has the wrong size".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Dataset description, stored as TOML. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub images: Vec<PathBuf>,
    #[serde(default)]
    pub contrast_normalize: bool,
    #[serde(default = "yes")]
    pub rescale: bool,
    #[serde(default)]
    pub subtract_mean: bool,
    /// `[tile_h, tile_w]`; whole images when absent.
    #[serde(default)]
    pub tile: Option<[usize; 2]>,
    /// One sampling mask per image; nonzero pixels are observed.
    #[serde(default)]
    pub masks: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub contrast: ContrastParams,
}

fn yes() -> bool {
    true
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut manifest = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            manifest.rebase(dir);
        }
        Ok(manifest)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        self.images.iter_mut().for_each(fix);
        if let Some(masks) = &mut self.masks {
            masks.iter_mut().for_each(fix);
        }
    }
}

/// Preprocessed tiles of equal size, with optional per-pixel observation flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<f64>>,
    pub observed: Option<Vec<Vec<bool>>>,
}

impl Dataset {
    /// Training set for `filter_h x filter_w` filters. Unobserved pixels are
    /// dropped from the valid-region mask.
    pub fn training_set(&self, filter_h: usize, filter_w: usize) -> Result<TrainingSet> {
        let g = Geometry::new(self.height, self.width, filter_h, filter_w)?;
        match &self.observed {
            None => TrainingSet::from_images(g, self.images.clone()),
            Some(flags) => {
                let valid = g.default_mask();
                let (obs, masks): (Vec<Vec<f64>>, Vec<Mask>) = self
                    .images
                    .iter()
                    .zip(flags)
                    .map(|(img, seen)| {
                        let keep: Vec<usize> = (0..img.len()).filter(|&i| seen[i]).collect();
                        let samples = keep.iter().map(|&i| img[i]).collect();
                        let idx = keep.iter().map(|&i| valid.indices()[i]).collect();
                        Ok((samples, Mask::new(idx, g.padded_len())?))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip();
                TrainingSet::with_masks(g, obs, masks)
            }
        }
    }
}

/// Applies the enabled per-tile stages.
pub fn preprocess(tile: &[f64], height: usize, width: usize, manifest: &DatasetManifest) -> Result<Vec<f64>> {
    let mut x = tile.to_vec();
    if manifest.contrast_normalize {
        x = contrast_normalize(&x, height, width, &manifest.contrast)?;
    }
    if manifest.rescale {
        x = rescale_unit(&x);
    }
    if manifest.subtract_mean {
        x = subtract_mean(&x);
    }
    Ok(x)
}

/// Loads, tiles and preprocesses every image in the manifest.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    if manifest.images.is_empty() {
        return Err(Error::InvalidConfig("manifest lists no images".into()));
    }
    if let Some(masks) = &manifest.masks {
        check_len("mask list", manifest.images.len(), masks.len())?;
    }
    let loaded = manifest.images.iter().map(|p| load_gray(p)).collect::<Result<Vec<_>>>()?;
    let (h, w) = (loaded[0].height, loaded[0].width);
    if loaded.iter().any(|im| (im.height, im.width) != (h, w)) {
        return Err(Error::InvalidGeometry("dataset images differ in size".into()));
    }
    let [th, tw] = manifest.tile.unwrap_or([h, w]);
    let mut tiles = Vec::new();
    for im in &loaded {
        tiles.extend(tile(&im.pixels, h, w, th, tw)?);
    }
    let images = tiles.par_iter().map(|t| preprocess(t, th, tw, manifest)).collect::<Result<Vec<_>>>()?;
    let observed = match &manifest.masks {
        None => None,
        Some(paths) => {
            let mut flags = Vec::new();
            for p in paths {
                let m = load_gray(p)?;
                if (m.height, m.width) != (h, w) {
                    return Err(Error::InvalidGeometry(format!("mask {} does not match the image size", p.display())));
                }
                let seen: Vec<bool> = m.pixels.iter().map(|v| *v > 0.0).collect();
                flags.extend(tile(&seen, h, w, th, tw)?);
            }
            Some(flags)
        }
    };
    Ok(Dataset { height: th, width: tw, images, observed })
}
