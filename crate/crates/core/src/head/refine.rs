//! Second stage: face-point features from the fused map → IoU score and box deltas.

use cvcp_numerics::{Bound, Init, Scalar, Tape, Tensor, Var};

use super::boxes::{normalize_yaw, Box3D};
use crate::error::Result;
use crate::layers::{self, SpecList};
use crate::pillars::BevGrid;

pub const FACE_POINTS: usize = 5;
pub const DELTAS: usize = 7;

pub fn param_specs(specs: &mut SpecList, c_fused: usize, hidden: usize) {
    let din = FACE_POINTS * c_fused;
    specs.linear("refine.fc", din, hidden, Init::HeNormal { fan_in: din });
    specs.linear("refine.iou", hidden, 1, Init::Normal(0.01));
    specs.linear("refine.delta", hidden, DELTAS, Init::Normal(0.01));
}

/// Feature-map sampling locations of each box's five BEV face points.
pub fn sample_points(rois: &[Box3D], grid: &BevGrid) -> Vec<(f64, f64)> {
    rois.iter().flat_map(|b| b.face_points().map(|[x, y]| grid.to_map(x, y))).collect()
}

pub struct RefineVars {
    /// `[R×1]` in (0, 1).
    pub iou: Var,
    /// `[R×7]`
    pub delta: Var,
}

pub fn refine_forward<T: Scalar>(tape: &Tape<T>, p: &Bound, fused: Var, rois: &[Box3D], grid: &BevGrid) -> Result<RefineVars> {
    let c = tape.shape(fused)[0];
    let sampled = tape.bilinear_sample(fused, &sample_points(rois, grid))?;
    let x = tape.reshape(sampled, &[rois.len(), FACE_POINTS * c])?;
    let h = tape.relu(layers::linear(tape, p, "refine.fc", x)?)?;
    let iou = tape.sigmoid(layers::linear(tape, p, "refine.iou", h)?)?;
    let delta = layers::linear(tape, p, "refine.delta", h)?;
    Ok(RefineVars { iou, delta })
}

/// Additive deltas (log-space for sizes) and score `sqrt(s1 · iou)`.
pub fn apply_refinement<T: Scalar>(rois: &[Box3D], iou: &Tensor<T>, delta: &Tensor<T>) -> Vec<Box3D> {
    rois.iter()
        .enumerate()
        .map(|(i, b)| {
            let d: [f64; DELTAS] = std::array::from_fn(|k| delta.data()[i * DELTAS + k].as_f64());
            let q = iou.data()[i].as_f64();
            Box3D {
                center: [b.center[0] + d[0], b.center[1] + d[1], b.center[2] + d[2]],
                size: [b.size[0] * d[3].exp(), b.size[1] * d[4].exp(), b.size[2] * d[5].exp()],
                yaw: normalize_yaw(b.yaw + d[6]),
                velocity: b.velocity,
                class_id: b.class_id,
                score: (b.score * q).sqrt().clamp(0.0, 1.0),
            }
        })
        .collect()
}

/// Delta targets that carry `roi` onto `gt`.
pub fn delta_target(roi: &Box3D, gt: &Box3D) -> [f64; DELTAS] {
    [
        gt.center[0] - roi.center[0],
        gt.center[1] - roi.center[1],
        gt.center[2] - roi.center[2],
        (gt.size[0] / roi.size[0]).ln(),
        (gt.size[1] / roi.size[1]).ln(),
        (gt.size[2] / roi.size[2]).ln(),
        normalize_yaw(gt.yaw - roi.yaw),
    ]
}
