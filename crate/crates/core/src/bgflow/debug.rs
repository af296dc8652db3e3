use std::path::Path;

use super::superpixel::SuperpixelGraph;
use super::vz::VzRatioField;
use crate::error::{Error, Result};
use crate::imgproc::{save_gray16, save_rgb8, Image};

/// Writes `omega * 2^16`, clamped to 16 bits, as a grayscale PNG; invalid
/// pixels are 0.
pub fn save_omega_png(field: &VzRatioField, path: impl AsRef<Path>) -> Result<()> {
    let img = Image::from_fn(field.width(), field.height(), |x, y| {
        field.get(x, y).map_or(0.0, |w| w * 65536.0 / 65535.0)
    });
    save_gray16(&img, path)
}

/// Writes `guide` with superpixel boundaries drawn in red.
pub fn save_superpixel_overlay(graph: &SuperpixelGraph, guide: &Image<f64>, path: impl AsRef<Path>) -> Result<()> {
    if guide.width() != graph.width() || guide.height() != graph.height() {
        return Err(Error::DimensionMismatch("guide and superpixels differ in size".into()));
    }
    let mut rgb = Vec::with_capacity(graph.width() * graph.height());
    for y in 0..graph.height() {
        for x in 0..graph.width() {
            if graph.is_boundary(x, y) {
                rgb.push([255, 0, 0]);
            } else {
                let g = (guide.get(x, y) * 255.0).round().clamp(0.0, 255.0) as u8;
                rgb.push([g, g, g]);
            }
        }
    }
    save_rgb8(graph.width(), graph.height(), &rgb, path)
}
