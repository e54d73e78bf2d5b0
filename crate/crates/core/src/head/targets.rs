//! Center heatmap and regression targets.

use cvcp_numerics::Tensor;

use super::boxes::{normalize_yaw, Box3D};
use crate::pillars::BevGrid;

/// Regression channels: column offset, row offset, z, log l, log w, log h,
/// sin yaw, cos yaw, vx, vy.
pub const REG_CHANNELS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// `[K×H×W]`
    pub heatmap: Tensor<f32>,
    /// `[10×H×W]`
    pub regression: Tensor<f32>,
    /// `H·W` cells carrying a regression target.
    pub mask: Vec<bool>,
    /// Boxes whose center fell outside the grid or whose class is out of range.
    pub skipped: usize,
}

impl Targets {
    pub fn positives(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn gaussian_sigma(b: &Box3D, grid: &BevGrid) -> f64 {
    (b.size[0].max(b.size[1]) / (6.0 * grid.cell)).max(1.0)
}

/// Regression vector of `b` relative to its center cell.
pub fn encode_box(b: &Box3D, grid: &BevGrid, row: usize, col: usize) -> [f32; REG_CHANNELS] {
    let fc = (b.center[0] - grid.x_min) / grid.cell - col as f64;
    let fr = (b.center[1] - grid.y_min) / grid.cell - row as f64;
    let (s, c) = normalize_yaw(b.yaw).sin_cos();
    [fc, fr, b.center[2], b.size[0].ln(), b.size[1].ln(), b.size[2].ln(), s, c, b.velocity[0], b.velocity[1]].map(|v| v as f32)
}

pub fn render_targets(gt: &[Box3D], grid: &BevGrid, num_classes: usize) -> Targets {
    let (h, w) = (grid.rows(), grid.cols());
    let plane = h * w;
    let mut heat = vec![0.0f32; num_classes * plane];
    let mut reg = vec![0.0f32; REG_CHANNELS * plane];
    let mut mask = vec![false; plane];
    let mut skipped = 0;
    for b in gt {
        let Some((row, col)) = grid.cell_of(b.center[0], b.center[1]) else {
            skipped += 1;
            continue;
        };
        if b.class_id >= num_classes {
            skipped += 1;
            continue;
        }
        let sigma = gaussian_sigma(b, grid);
        let radius = (3.0 * sigma).ceil() as isize;
        let chan = &mut heat[b.class_id * plane..(b.class_id + 1) * plane];
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let (r, c) = (row as isize + dr, col as isize + dc);
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                let v = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp() as f32;
                let cell = &mut chan[r as usize * w + c as usize];
                *cell = cell.max(v);
            }
        }
        let idx = row * w + col;
        if !mask[idx] {
            mask[idx] = true;
            for (k, v) in encode_box(b, grid, row, col).into_iter().enumerate() {
                reg[k * plane + idx] = v;
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} ground-truth boxes skipped while rendering targets");
    }
    Targets {
        heatmap: Tensor::new([num_classes, h, w], heat).expect("sized"),
        regression: Tensor::new([REG_CHANNELS, h, w], reg).expect("sized"),
        mask,
        skipped,
    }
}
