//! Gaussian pyramid: octaves by 2x decimation, layers by progressive blur.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, GrayImage};
use crate::io::save_image;

/// Blur applied before every 2x decimation.
const ANTI_ALIAS_SIGMA: f64 = 1.0;
/// Smallest side an octave may have and still host a descriptor window.
const MIN_OCTAVE_SIDE: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidConfig {
    pub num_octaves: usize,
    pub num_layers: usize,
    pub base_sigma: f64,
    pub sigma_ratio: f64,
}

impl PyramidConfig {
    /// Geometric schedule spanning one doubling of sigma per octave.
    pub fn new(num_octaves: usize, num_layers: usize) -> Self {
        let sigma_ratio = if num_layers > 1 { 2f64.powf(1.0 / (num_layers - 1) as f64) } else { 2.0 };
        PyramidConfig { num_octaves, num_layers, base_sigma: 1.6, sigma_ratio }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_octaves == 0 || self.num_layers == 0 {
            return Err(Error::InvalidConfig("octave and layer counts must be at least 1".into()));
        }
        if !(self.base_sigma > 0.0) || !(self.sigma_ratio > 1.0) {
            return Err(Error::InvalidConfig("base_sigma must be > 0 and sigma_ratio > 1".into()));
        }
        Ok(())
    }

    pub fn layer_sigma(&self, layer: usize) -> f64 {
        self.base_sigma * self.sigma_ratio.powi(layer as i32)
    }

    /// Minimum side length an input needs for this many octaves.
    pub fn min_side(&self) -> usize {
        MIN_OCTAVE_SIDE << (self.num_octaves - 1)
    }
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig::new(3, 4)
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub image: GrayImage,
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct Octave {
    pub downsample_factor: usize,
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug)]
pub struct Pyramid {
    pub octaves: Vec<Octave>,
}

impl Pyramid {
    pub fn num_octaves(&self) -> usize {
        self.octaves.len()
    }

    pub fn level(&self, octave: usize, layer: usize) -> &Layer {
        &self.octaves[octave].layers[layer]
    }

    pub fn map_to_level(&self, pt: (f64, f64), octave: usize) -> Result<(f64, f64)> {
        map_to_level(pt, octave, self.num_octaves())
    }

    /// Writes every level as `pyr_o<octave>_l<layer>.pgm` into `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        for (o, oct) in self.octaves.iter().enumerate() {
            for (l, layer) in oct.layers.iter().enumerate() {
                save_image(&layer.image, dir.as_ref().join(format!("pyr_o{o}_l{l}.pgm")))?;
            }
        }
        Ok(())
    }
}

/// Base-image coordinates to the pixel grid of `octave`.
pub fn map_to_level(pt: (f64, f64), octave: usize, num_octaves: usize) -> Result<(f64, f64)> {
    if octave >= num_octaves {
        return Err(Error::OctaveOutOfRange { octave, count: num_octaves });
    }
    let f = (1u64 << octave) as f64;
    Ok((pt.0 / f, pt.1 / f))
}

fn decimate(img: &GrayImage) -> GrayImage {
    let w = img.width().div_ceil(2);
    let h = img.height().div_ceil(2);
    GrayImage::from_fn(w, h, |x, y| img.get(2 * x, 2 * y))
}

pub fn build_pyramid(img: &GrayImage, cfg: &PyramidConfig) -> Result<Pyramid> {
    cfg.validate()?;
    let required = cfg.min_side();
    let actual = img.width().min(img.height());
    if actual < required {
        return Err(Error::ImageTooSmallForOctaves { required, actual });
    }

    let mut bases = Vec::with_capacity(cfg.num_octaves);
    bases.push(gaussian_blur(img, cfg.base_sigma)?);
    for o in 1..cfg.num_octaves {
        let smoothed = gaussian_blur(&bases[o - 1], ANTI_ALIAS_SIGMA)?;
        bases.push(decimate(&smoothed));
    }

    let s0 = cfg.base_sigma;
    let octaves = bases
        .into_par_iter()
        .enumerate()
        .map(|(o, base)| -> Result<Octave> {
            let mut layers = Vec::with_capacity(cfg.num_layers);
            for j in 1..cfg.num_layers {
                let target = cfg.layer_sigma(j);
                let inc = (target * target - s0 * s0).sqrt();
                layers.push(Layer { image: gaussian_blur(&base, inc)?, sigma: target });
            }
            layers.insert(0, Layer { image: base, sigma: s0 });
            Ok(Octave { downsample_factor: 1 << o, layers })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pyramid { octaves })
}
