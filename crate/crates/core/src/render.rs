//! Alignment visualizations.

use crate::error::{Error, Result};
use crate::image::GrayImage;

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Tiles alternate between `fixed` (even tile parity) and `warped`.
pub fn render_checkerboard(fixed: &GrayImage, warped: &GrayImage, tile: usize) -> Result<GrayImage> {
    same_dims(fixed, warped)?;
    let tile = tile.max(1);
    Ok(GrayImage::from_fn(fixed.width(), fixed.height(), |x, y| {
        if (x / tile + y / tile).is_multiple_of(2) { fixed.get(x, y) } else { warped.get(x, y) }
    }))
}

/// `alpha * fixed + (1 - alpha) * warped`.
pub fn render_fusion(fixed: &GrayImage, warped: &GrayImage, alpha: f64) -> Result<GrayImage> {
    same_dims(fixed, warped)?;
    let data = fixed.data().iter().zip(warped.data()).map(|(f, w)| alpha * f + (1.0 - alpha) * w).collect();
    GrayImage::new(fixed.width(), fixed.height(), data)
}
