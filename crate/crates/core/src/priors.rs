//! Text-shaped prior boxes tiled over every cell of a feature grid.
//!
//! A prior of scale `s` and aspect ratio `a = h / w` has area `s²`, so
//! `w = s / √a` and `h = s·√a`. Ratios below one describe wide boxes, which
//! is the usual shape of a word.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Square root of the prior area, in pixels.
    pub scales: Vec<f64>,
    /// Height over width.
    pub aspect_ratios: Vec<f64>,
    /// Pixels per feature cell.
    pub stride: f64,
    /// Mark priors crossing the image border so that label assignment skips them.
    pub drop_cross_boundary: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            scales: vec![32.0, 48.0, 64.0, 80.0],
            aspect_ratios: vec![0.2, 0.5, 0.8, 1.0, 1.2, 1.5],
            stride: 16.0,
            drop_cross_boundary: false,
        }
    }
}

impl PriorConfig {
    /// Priors per grid cell.
    pub fn k(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.aspect_ratios.is_empty() {
            return Err(Error::invalid(
                "prior scales and aspect ratios must be non-empty",
            ));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.scales.iter().all(positive) {
            return Err(Error::invalid(format!(
                "prior scales must be > 0: {:?}",
                self.scales
            )));
        }
        if !self.aspect_ratios.iter().all(positive) {
            return Err(Error::invalid(format!(
                "aspect ratios must be > 0: {:?}",
                self.aspect_ratios
            )));
        }
        if !positive(&self.stride) {
            return Err(Error::invalid(format!(
                "stride must be > 0, got {}",
                self.stride
            )));
        }
        Ok(())
    }

    /// `(width, height)` of every prior shape, scale-major.
    pub fn shapes(&self) -> Vec<(f64, f64)> {
        self.scales
            .iter()
            .flat_map(|&s| {
                self.aspect_ratios.iter().map(move |&a| {
                    let r = a.sqrt();
                    (s / r, s * r)
                })
            })
            .collect()
    }
}

/// Priors laid out row-major over `(row, column, shape)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorLattice {
    pub grid_m: usize,
    pub grid_n: usize,
    pub k: usize,
    pub boxes: Vec<BBox>,
    /// Set for priors that cross the image border when the config asks to
    /// drop them. They stay in `boxes` so indices remain stable.
    pub excluded: Vec<bool>,
}

impl PriorLattice {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn index(&self, row: usize, col: usize, shape: usize) -> usize {
        (row * self.grid_n + col) * self.k + shape
    }

    pub fn get(&self, row: usize, col: usize, shape: usize) -> &BBox {
        &self.boxes[self.index(row, col, shape)]
    }
}

/// Tiles `config.k()` priors over an `grid_m x grid_n` feature grid.
///
/// Cell `(i, j)` is centered at `((j + 0.5)·stride, (i + 0.5)·stride)`.
pub fn generate_priors(
    grid_m: usize,
    grid_n: usize,
    image_w: f64,
    image_h: f64,
    config: &PriorConfig,
) -> Result<PriorLattice> {
    config.validate()?;
    if grid_m == 0 || grid_n == 0 {
        return Err(Error::invalid(format!(
            "grid must be at least 1x1, got {grid_m}x{grid_n}"
        )));
    }
    if !(image_w > 0.0 && image_h > 0.0) {
        return Err(Error::invalid(format!(
            "image dimensions must be > 0, got {image_w}x{image_h}"
        )));
    }

    let shapes = config.shapes();
    let k = shapes.len();
    let mut boxes = Vec::with_capacity(grid_m * grid_n * k);
    for i in 0..grid_m {
        let cy = (i as f64 + 0.5) * config.stride;
        for j in 0..grid_n {
            let cx = (j as f64 + 0.5) * config.stride;
            boxes.extend(shapes.iter().map(|&(w, h)| BBox {
                x1: cx - w / 2.0,
                y1: cy - h / 2.0,
                x2: cx + w / 2.0,
                y2: cy + h / 2.0,
            }));
        }
    }
    let excluded = boxes
        .iter()
        .map(|b| config.drop_cross_boundary && !b.inside(image_w, image_h))
        .collect();
    Ok(PriorLattice {
        grid_m,
        grid_n,
        k,
        boxes,
        excluded,
    })
}

/// Grid size covering an image at the given stride.
pub fn grid_for_image(image_w: f64, image_h: f64, stride: f64) -> (usize, usize) {
    (
        (image_h / stride).ceil().max(1.0) as usize,
        (image_w / stride).ceil().max(1.0) as usize,
    )
}
