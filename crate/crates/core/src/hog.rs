//! Histogram of Oriented Gradients.
//!
//! Pipeline: centered `[-1, 0, 1]` differences with edge replication, the
//! dominant-magnitude channel per pixel for color input, per-cell orientation
//! histograms with linear interpolation between the two nearest bin centers,
//! then overlapping blocks normalized with L2-Hys. Only the top-left
//! `floor(h / cell) × floor(w / cell)` cells are covered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Orientation bins.
    pub bins: usize,
    /// Block side in cells.
    pub block_size: usize,
    /// Block step in cells.
    pub block_stride: usize,
    /// `false` folds orientations to `[0°, 180°)`.
    pub signed_orientation: bool,
    /// L2-Hys clip threshold.
    pub clip: f64,
    /// Convert to luma before differentiating instead of picking the
    /// dominant channel.
    pub grayscale: bool,
    /// Also spread each pixel's vote bilinearly over the four nearest cell
    /// centers.
    pub soft_spatial: bool,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 128,
            bins: 9,
            block_size: 2,
            block_stride: 1,
            signed_orientation: false,
            clip: 0.2,
            grayscale: false,
            soft_spatial: false,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size < 2 {
            return Err(Error::invalid("hog cell size must be at least 2"));
        }
        if self.bins < 2 {
            return Err(Error::invalid("hog needs at least 2 bins"));
        }
        if self.block_size < 1 || self.block_stride < 1 {
            return Err(Error::invalid("hog block size and stride must be positive"));
        }
        if !(self.clip > 0.0 && self.clip <= 1.0) {
            return Err(Error::invalid("hog clip must lie in (0, 1]"));
        }
        Ok(())
    }

    fn range_degrees(&self) -> f64 {
        if self.signed_orientation {
            360.0
        } else {
            180.0
        }
    }
}

/// Cell and block counts for an image size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HogLayout {
    pub cells_y: usize,
    pub cells_x: usize,
    pub blocks_y: usize,
    pub blocks_x: usize,
    pub bins: usize,
    pub block_size: usize,
}

impl HogLayout {
    pub fn new(cfg: &HogConfig, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        let cells_y = height / cfg.cell_size;
        let cells_x = width / cfg.cell_size;
        if cells_y == 0 || cells_x == 0 {
            return Err(Error::invalid(format!(
                "{height}x{width} image is smaller than one {0}x{0} cell",
                cfg.cell_size
            )));
        }
        if cells_y < cfg.block_size || cells_x < cfg.block_size {
            return Err(Error::invalid(format!(
                "{cells_y}x{cells_x} cells cannot hold a {0}x{0} block",
                cfg.block_size
            )));
        }
        Ok(Self {
            cells_y,
            cells_x,
            blocks_y: (cells_y - cfg.block_size) / cfg.block_stride + 1,
            blocks_x: (cells_x - cfg.block_size) / cfg.block_stride + 1,
            bins: cfg.bins,
            block_size: cfg.block_size,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_size * self.block_size * self.bins
    }

    pub fn dim(&self) -> usize {
        self.blocks_y * self.blocks_x * self.block_len()
    }
}

/// Descriptor length for an image of the given size.
pub fn hog_dim(cfg: &HogConfig, height: usize, width: usize) -> Result<usize> {
    HogLayout::new(cfg, height, width).map(|l| l.dim())
}

/// Per-pixel gradient components, row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub height: usize,
    pub width: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

/// Centered differences with edge replication. For multi-channel images the
/// channel with the largest gradient magnitude wins at each pixel (lowest
/// channel on ties).
pub fn gradient(image: &ImageTensor) -> Result<Gradient> {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "gradient needs at least 3x3 pixels, got {h}x{w}"
        )));
    }
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        let (up, down) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (left, right) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let mut best = (0.0, 0.0, -1.0);
            for k in 0..ch {
                let dx = image.get(r, right, k) - image.get(r, left, k);
                let dy = image.get(down, c, k) - image.get(up, c, k);
                let mag = dx * dx + dy * dy;
                if mag > best.2 {
                    best = (dx, dy, mag);
                }
            }
            gx[r * w + c] = best.0;
            gy[r * w + c] = best.1;
        }
    }
    Ok(Gradient {
        height: h,
        width: w,
        gx,
        gy,
    })
}

fn to_luma(image: &ImageTensor) -> ImageTensor {
    if image.channels() == 1 {
        return image.clone();
    }
    let data = image
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    ImageTensor::from_parts_unchecked(image.height(), image.width(), 1, data)
}

/// Unnormalized orientation histograms, `cells_y × cells_x × bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    pub cells_y: usize,
    pub cells_x: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

impl CellGrid {
    pub fn cell(&self, cy: usize, cx: usize) -> &[f64] {
        let start = (cy * self.cells_x + cx) * self.bins;
        &self.values[start..start + self.bins]
    }

    fn add(&mut self, cy: usize, cx: usize, bin: usize, v: f64) {
        self.values[(cy * self.cells_x + cx) * self.bins + bin] += v;
    }
}

/// Splits `1` between the two bin centers nearest to `theta`.
#[inline]
fn bin_weights(theta: f64, bins: usize, bin_width: f64) -> (usize, usize, f64) {
    let pos = theta / bin_width - 0.5;
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = (lo as i64).rem_euclid(bins as i64) as usize;
    (lo, (lo + 1) % bins, frac)
}

/// Orientation in degrees folded into `[0, range)`.
#[inline]
fn orientation(gx: f64, gy: f64, range: f64) -> f64 {
    let mut theta = gy.atan2(gx).to_degrees();
    if theta < 0.0 {
        theta += range;
    }
    if theta >= range {
        theta -= range;
    }
    theta
}

pub fn cell_histograms(image: &ImageTensor, cfg: &HogConfig) -> Result<CellGrid> {
    let layout = HogLayout::new(cfg, image.height(), image.width())?;
    let luma;
    let src = if cfg.grayscale {
        luma = to_luma(image);
        &luma
    } else {
        image
    };
    let grad = gradient(src)?;
    let range = cfg.range_degrees();
    let bin_width = range / cfg.bins as f64;
    let cell = cfg.cell_size;
    let mut grid = CellGrid {
        cells_y: layout.cells_y,
        cells_x: layout.cells_x,
        bins: cfg.bins,
        values: vec![0.0; layout.cells_y * layout.cells_x * cfg.bins],
    };
    for r in 0..layout.cells_y * cell {
        for c in 0..layout.cells_x * cell {
            let i = r * grad.width + c;
            let (gx, gy) = (grad.gx[i], grad.gy[i]);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let (b0, b1, frac) = bin_weights(orientation(gx, gy, range), cfg.bins, bin_width);
            if cfg.soft_spatial {
                for (cy, wy) in spatial_weights(r, cell, layout.cells_y) {
                    for (cx, wx) in spatial_weights(c, cell, layout.cells_x) {
                        let m = mag * wy * wx;
                        grid.add(cy, cx, b0, m * (1.0 - frac));
                        grid.add(cy, cx, b1, m * frac);
                    }
                }
            } else {
                grid.add(r / cell, c / cell, b0, mag * (1.0 - frac));
                grid.add(r / cell, c / cell, b1, mag * frac);
            }
        }
    }
    Ok(grid)
}

/// Neighboring cells along one axis and their bilinear weights, measured from
/// cell centers; cells outside the grid are dropped.
fn spatial_weights(p: usize, cell: usize, n: usize) -> impl Iterator<Item = (usize, f64)> {
    let y = (p as f64 + 0.5) / cell as f64 - 0.5;
    let lo = y.floor();
    let f = y - lo;
    let lo = lo as i64;
    [(lo, 1.0 - f), (lo + 1, f)]
        .into_iter()
        .filter(move |&(i, w)| i >= 0 && (i as usize) < n && w > 0.0)
        .map(|(i, w)| (i as usize, w))
}

/// L2 normalize, clip, renormalize. All-zero input stays all-zero.
fn l2_hys(block: &mut [f64], clip: f64) {
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for v in block.iter_mut() {
        *v = (*v / norm).min(clip);
    }
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in block.iter_mut() {
            *v /= norm;
        }
    }
}

/// Full HOG descriptor of length [`hog_dim`].
pub fn hog(image: &ImageTensor, cfg: &HogConfig) -> Result<FeatureVector> {
    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("hog input contains non-finite pixels"));
    }
    let layout = HogLayout::new(cfg, image.height(), image.width())?;
    let grid = cell_histograms(image, cfg)?;
    let mut out = Vec::with_capacity(layout.dim());
    let mut block = Vec::with_capacity(layout.block_len());
    for by in 0..layout.blocks_y {
        for bx in 0..layout.blocks_x {
            block.clear();
            for cy in 0..cfg.block_size {
                for cx in 0..cfg.block_size {
                    block.extend_from_slice(
                        grid.cell(by * cfg.block_stride + cy, bx * cfg.block_stride + cx),
                    );
                }
            }
            l2_hys(&mut block, cfg.clip);
            out.extend(block.iter().map(|&v| v as f32));
        }
    }
    debug_assert_eq!(out.len(), layout.dim());
    Ok(FeatureVector {
        kind: FeatureKind::Hog,
        values: out,
    })
}
