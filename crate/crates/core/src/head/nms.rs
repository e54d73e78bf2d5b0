//! Greedy class-aware suppression with rotated BEV IoU.

use super::boxes::Box3D;
use crate::eval::geometry::bev_iou;

/// Indices of the survivors in score order (ties keep input order).
pub fn nms_indices(boxes: &[Box3D], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let b = &boxes[i];
        if kept.iter().all(|&k| boxes[k].class_id != b.class_id || bev_iou(&boxes[k], b) < iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn rotated_nms(boxes: &[Box3D], iou_threshold: f64) -> Vec<Box3D> {
    nms_indices(boxes, iou_threshold).into_iter().map(|i| boxes[i]).collect()
}
