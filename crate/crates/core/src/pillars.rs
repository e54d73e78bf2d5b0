//! LiDAR branch: pillarization, the per-pillar point network, scatter onto
//! the BEV lattice, and the convolutional up-scaling block.

use cvcp_numerics::{Bound, Init, Padding, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, SpecList};

/// Decorated per-point features:
/// `x, y, z, intensity, x−x̄, y−ȳ, z−z̄, x−x_c, y−y_c`.
pub const POINT_FEATURES: usize = 9;

/// Metric BEV lattice. Column index grows with x, row index with y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BevGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell: f64,
}

impl Default for BevGrid {
    fn default() -> Self {
        BevGrid { x_min: -32.0, x_max: 32.0, y_min: -32.0, y_max: 32.0, cell: 1.0 }
    }
}

impl BevGrid {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.x_min, self.x_max, self.y_min, self.y_max, self.cell];
        if !vals.iter().all(|v| v.is_finite()) || self.cell <= 0.0 || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Config(format!("invalid BEV grid {self:?}")));
        }
        for (lo, hi) in [(self.x_min, self.x_max), (self.y_min, self.y_max)] {
            let n = (hi - lo) / self.cell;
            if n.fract() != 0.0 {
                return Err(Error::Config(format!("BEV extent {lo}..{hi} is not a whole number of {} m cells", self.cell)));
            }
        }
        Ok(())
    }

    pub fn cols(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell) as usize
    }

    pub fn rows(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell) as usize
    }

    /// Half-open cell lookup: `floor((v − min) / cell)`.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.x_min) / self.cell).floor();
        let r = ((y - self.y_min) / self.cell).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols() as f64 || r >= self.rows() as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (self.x_min + (col as f64 + 0.5) * self.cell, self.y_min + (row as f64 + 0.5) * self.cell)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some()
    }

    /// Continuous `(row, col)` feature-map coordinates of a metric point,
    /// with integer values at cell centers.
    pub fn to_map(&self, x: f64, y: f64) -> (f64, f64) {
        ((y - self.y_min) / self.cell - 0.5, (x - self.x_min) / self.cell - 0.5)
    }
}

/// Points as `(x, y, z, intensity)` in the ego frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 4]>,
}

impl PointCloud {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Geometry(format!("point {i} is not finite")));
        }
        Ok(())
    }
}

/// Non-empty pillars with their decorated points.
#[derive(Clone, Debug, PartialEq)]
pub struct PillarBuffer {
    pub max_points: usize,
    /// `[P·N_max·9]`, unused slots zero.
    pub features: Vec<f32>,
    pub coords: Vec<(usize, usize)>,
    pub counts: Vec<usize>,
}

impl PillarBuffer {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn point(&self, pillar: usize, slot: usize) -> &[f32] {
        let o = (pillar * self.max_points + slot) * POINT_FEATURES;
        &self.features[o..o + POINT_FEATURES]
    }

    pub fn tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.features.iter().map(|&v| T::lit(v as f64)).collect();
        Tensor::new([self.len(), self.max_points, POINT_FEATURES], data).expect("buffer length is P·N·9")
    }

    pub fn flat_cells(&self, cols: usize) -> Vec<usize> {
        self.coords.iter().map(|&(r, c)| r * cols + c).collect()
    }
}

/// Groups points into cells, keeping the first `max_points` per cell in input
/// order. Pillars are ordered by first appearance.
pub fn pillarize(cloud: &PointCloud, grid: &BevGrid, z_range: (f64, f64), max_points: usize) -> PillarBuffer {
    let cols = grid.cols();
    let mut slot_of = vec![usize::MAX; grid.rows() * cols];
    let mut coords = Vec::new();
    let mut members: Vec<Vec<[f64; 4]>> = Vec::new();
    for p in &cloud.points {
        let [x, y, z, i] = p.map(|v| v as f64);
        if z < z_range.0 || z > z_range.1 {
            continue;
        }
        let Some((r, c)) = grid.cell_of(x, y) else { continue };
        let cell = r * cols + c;
        if slot_of[cell] == usize::MAX {
            slot_of[cell] = coords.len();
            coords.push((r, c));
            members.push(Vec::new());
        }
        let m = &mut members[slot_of[cell]];
        if m.len() < max_points {
            m.push([x, y, z, i]);
        }
    }
    let mut features = vec![0.0f32; coords.len() * max_points * POINT_FEATURES];
    let mut counts = Vec::with_capacity(coords.len());
    for (pi, (pts, &(r, c))) in members.iter().zip(&coords).enumerate() {
        let n = pts.len() as f64;
        let mean = [0, 1, 2].map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / n);
        let (cx, cy) = grid.cell_center(r, c);
        for (si, p) in pts.iter().enumerate() {
            let o = (pi * max_points + si) * POINT_FEATURES;
            let f = [p[0], p[1], p[2], p[3], p[0] - mean[0], p[1] - mean[1], p[2] - mean[2], p[0] - cx, p[1] - cy];
            for (dst, v) in features[o..o + POINT_FEATURES].iter_mut().zip(f) {
                *dst = v as f32;
            }
        }
        counts.push(pts.len());
    }
    PillarBuffer { max_points, features, coords, counts }
}

pub fn param_specs(specs: &mut SpecList, c_pillar: usize, c_lidar: usize) {
    specs.linear("lidar.pfn", POINT_FEATURES, c_pillar, Init::HeNormal { fan_in: POINT_FEATURES });
    specs.conv("lidar.up.a", c_pillar, c_lidar, 3);
    specs.conv("lidar.up.down", c_lidar, c_lidar, 3);
    specs.conv_transpose("lidar.up.up", c_lidar, c_lidar);
    specs.conv("lidar.up.out", 2 * c_lidar, c_lidar, 1);
}

/// Shared linear + relu per point, then max over each pillar's points: `[P×C]`.
pub fn pillar_feature_net<T: Scalar>(tape: &Tape<T>, p: &Bound, points: Var, counts: &[usize]) -> Result<Var> {
    let s = tape.shape(points);
    let (np, n) = (s[0], s[1]);
    let flat = tape.reshape(points, &[np * n, POINT_FEATURES])?;
    let h = tape.relu(layers::linear(tape, p, "lidar.pfn", flat)?)?;
    let c = tape.shape(h)[1];
    let h = tape.reshape(h, &[np, n, c])?;
    Ok(tape.masked_max(h, counts)?)
}

/// Pillar features scattered onto the grid, `[C_pillar×H×W]`.
pub fn pillar_bev<T: Scalar>(tape: &Tape<T>, p: &Bound, buf: &PillarBuffer, grid: &BevGrid, c_pillar: usize) -> Result<Var> {
    let (h, w) = (grid.rows(), grid.cols());
    if buf.is_empty() {
        return Ok(tape.constant(Tensor::zeros([c_pillar, h, w]))?);
    }
    let points = tape.constant(buf.tensor())?;
    let feats = pillar_feature_net(tape, p, points, &buf.counts)?;
    Ok(tape.scatter_to_grid(feats, &buf.flat_cells(w), h, w)?)
}

/// Full-resolution conv, a stride-2 detour and back, fused by a 1×1 conv.
pub fn lidar_bev_upscale<T: Scalar>(tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
    let a = layers::conv3_relu(tape, p, "lidar.up.a", x, 1)?;
    let down = layers::conv3_relu(tape, p, "lidar.up.down", a, 2)?;
    let up = tape.conv_transpose2x2(down, p.var("lidar.up.up.w")?)?;
    let up = tape.relu(tape.add_bias_channels(up, p.var("lidar.up.up.b")?)?)?;
    let cat = tape.concat(&[a, up])?;
    let out = layers::conv(tape, p, "lidar.up.out", cat, 1, Padding::symmetric(0))?;
    Ok(tape.relu(out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f32; 4]]) -> PointCloud {
        PointCloud { points: pts.to_vec() }
    }

    #[test]
    fn empty_cloud_gives_no_pillars() {
        let b = pillarize(&PointCloud::default(), &BevGrid::default(), (-3.0, 3.0), 32);
        assert!(b.is_empty());
    }

    #[test]
    fn mean_offsets_cancel() {
        let pts: Vec<[f32; 4]> = (0..5).map(|i| [0.1 + 0.15 * i as f32, 0.3, 0.2 * i as f32, 0.5]).collect();
        let b = pillarize(&cloud(&pts), &BevGrid::default(), (-3.0, 3.0), 32);
        assert_eq!((b.len(), b.counts[0]), (1, 5));
        for k in 4..7 {
            let s: f32 = (0..5).map(|i| b.point(0, i)[k]).sum();
            assert!(s.abs() < 1e-6);
        }
        assert!(b.point(0, 5).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_points_use_half_open_cells() {
        let g = BevGrid::default();
        assert_eq!(g.cell_of(0.0, 0.0), Some((32, 32)));
        assert_eq!(g.cell_of(-0.0001, 0.0), Some((32, 31)));
        assert_eq!(g.cell_of(-32.0, -32.0), Some((0, 0)));
        assert_eq!(g.cell_of(32.0, 0.0), None);
        let b = pillarize(&cloud(&[[1.0, 2.0, 0.0, 0.0]]), &g, (-3.0, 3.0), 4);
        assert_eq!(b.coords, vec![(34, 33)]);
    }

    #[test]
    fn truncates_in_input_order_and_filters_z() {
        let pts: Vec<[f32; 4]> = (0..6).map(|i| [0.5, 0.5, i as f32 * 0.1, 0.0]).chain([[0.5, 0.5, 5.0, 0.0]]).collect();
        let b = pillarize(&cloud(&pts), &BevGrid::default(), (-3.0, 3.0), 4);
        assert_eq!(b.counts, vec![4]);
        assert_eq!(b.point(0, 3)[2], 0.3);
    }

    #[test]
    fn grid_validation() {
        assert!(BevGrid { cell: 0.7, ..BevGrid::default() }.validate().is_err());
        assert_eq!(BevGrid::default().rows(), 64);
        assert_eq!(BevGrid::default().to_map(-31.5, -31.5), (0.0, 0.0));
    }
}
