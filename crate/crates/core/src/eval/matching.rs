use serde::{Deserialize, Serialize};

use super::geometry::iou3d;
use crate::error::{Error, Result};
use crate::head::boxes::Box3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    CenterDistance,
    Iou,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center_distance" => Ok(MatchMode::CenterDistance),
            "iou" => Ok(MatchMode::Iou),
            _ => Err(Error::Usage(format!("unknown match mode {s:?}, expected center_distance or iou"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub mode: MatchMode,
    pub distance_thresholds: Vec<f64>,
    pub iou_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { mode: MatchMode::CenterDistance, distance_thresholds: vec![0.5, 1.0, 2.0, 4.0], iou_threshold: 0.7 }
    }
}

impl MatchConfig {
    pub fn with_mode(mode: MatchMode) -> Self {
        MatchConfig { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.distance_thresholds;
        if d.is_empty() || d.iter().any(|t| !(t.is_finite() && *t > 0.0)) || d.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("distance thresholds must be positive and ascending, got {d:?}")));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!("iou threshold must lie in (0, 1], got {}", self.iou_threshold)));
        }
        Ok(())
    }

    /// Criteria averaged into mAP under the configured mode.
    pub fn criteria(&self) -> Vec<Criterion> {
        match self.mode {
            MatchMode::CenterDistance => self.distance_thresholds.iter().map(|&t| Criterion::Distance(t)).collect(),
            MatchMode::Iou => vec![Criterion::Iou(self.iou_threshold)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    /// BEV center distance at most this many meters.
    Distance(f64),
    /// 3D IoU at least this value.
    Iou(f64),
}

impl Criterion {
    pub fn label(&self) -> String {
        match self {
            Criterion::Distance(t) => format!("dist_{t}"),
            Criterion::Iou(t) => format!("iou3d_{t}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matching {
    /// `(prediction, ground truth)` index pairs in claim order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

impl Matching {
    pub fn is_tp(&self, n_preds: usize) -> Vec<bool> {
        let mut tp = vec![false; n_preds];
        for &(p, _) in &self.pairs {
            tp[p] = true;
        }
        tp
    }
}

/// Greedy one-to-one matching of a single class: predictions in descending
/// score order each claim the best unclaimed ground truth that passes `crit`.
pub fn match_detections(preds: &[Box3D], gts: &[Box3D], crit: Criterion) -> Matching {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut claimed = vec![false; gts.len()];
    let mut m = Matching::default();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            // Lower cost is better in both modes.
            let cost = match crit {
                Criterion::Distance(t) => Some(preds[p].bev_distance(gt)).filter(|d| *d <= t),
                Criterion::Iou(t) => Some(iou3d(&preds[p], gt)).filter(|v| *v >= t).map(|v| -v),
            };
            if let Some(c) = cost {
                if best.is_none_or(|(_, bc)| c < bc) {
                    best = Some((g, c));
                }
            }
        }
        match best {
            Some((g, _)) => {
                claimed[g] = true;
                m.pairs.push((p, g));
            }
            None => m.unmatched_preds.push(p),
        }
    }
    m.unmatched_gts = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    m
}
