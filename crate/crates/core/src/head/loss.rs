//! Training objectives of both stages.

use cvcp_numerics::{Scalar, Tape, Tensor, Var};

use super::boxes::Box3D;
use super::refine::{delta_target, RefineVars, DELTAS};
use crate::error::Result;
use crate::eval::geometry::iou3d;

pub struct StageOneLoss {
    pub total: Var,
    pub focal: Var,
    pub regression: Var,
}

/// `focal(heatmap) + reg_weight · L1(regression at target cells)`.
pub fn compute_loss<T: Scalar>(
    tape: &Tape<T>,
    heat: Var,
    reg: Var,
    heat_target: &Tensor<T>,
    reg_target: &Tensor<T>,
    mask: &[bool],
    reg_weight: f64,
) -> Result<StageOneLoss> {
    let focal = tape.focal_loss(heat, heat_target)?;
    let regression = tape.l1_masked(reg, reg_target, mask)?;
    let total = tape.add(focal, tape.scale(regression, T::lit(reg_weight))?)?;
    Ok(StageOneLoss { total, focal, regression })
}

/// Per-proposal supervision: the IoU with the assigned ground truth (0 when
/// none lies within `radius`) and, for assigned proposals, the corrective deltas.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineTargets {
    pub iou: Vec<f64>,
    pub delta: Vec<[f64; DELTAS]>,
    pub assigned: Vec<bool>,
}

pub fn refine_targets(rois: &[Box3D], gts: &[Box3D], radius: f64) -> RefineTargets {
    let mut t = RefineTargets { iou: Vec::new(), delta: Vec::new(), assigned: Vec::new() };
    for roi in rois {
        let nearest = gts
            .iter()
            .filter(|g| g.class_id == roi.class_id)
            .map(|g| (roi.bev_distance(g), g))
            .filter(|(d, _)| *d <= radius)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match nearest {
            Some((_, g)) => {
                t.iou.push(iou3d(roi, g));
                t.delta.push(delta_target(roi, g));
                t.assigned.push(true);
            }
            None => {
                t.iou.push(0.0);
                t.delta.push([0.0; DELTAS]);
                t.assigned.push(false);
            }
        }
    }
    t
}

/// `L1(iou) + L1(deltas of assigned proposals)`.
pub fn refine_loss<T: Scalar>(tape: &Tape<T>, out: &RefineVars, targets: &RefineTargets) -> Result<Var> {
    let r = targets.iou.len();
    let iou_t = Tensor::new([1, r], targets.iou.iter().map(|&v| T::lit(v)).collect())?;
    let mut delta_t = vec![T::zero(); DELTAS * r];
    for (i, d) in targets.delta.iter().enumerate() {
        for k in 0..DELTAS {
            delta_t[k * r + i] = T::lit(d[k]);
        }
    }
    let delta_t = Tensor::new([DELTAS, r], delta_t)?;
    let iou_loss = tape.l1_masked(tape.transpose(out.iou)?, &iou_t, &vec![true; r])?;
    let delta_loss = tape.l1_masked(tape.transpose(out.delta)?, &delta_t, &targets.assigned)?;
    Ok(tape.add(iou_loss, delta_loss)?)
}
