use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ap::average_precision;
use super::matching::{match_detections, Criterion, MatchConfig, MatchMode};
use crate::error::{Error, Result};
use crate::harness::predictions::{self, Record};
use crate::head::boxes::Box3D;

/// Matching radius behind the per-axis error breakdown and the TP/FP counts
/// in center-distance mode.
pub const ERROR_RADIUS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub n_gt: usize,
    pub n_pred: usize,
    /// `(criterion label, AP)`; empty when the class has no ground truth.
    pub ap: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MatchMode,
    pub criteria: Vec<String>,
    pub map: f64,
    /// Mean absolute center error per axis (x, y, z) over 2 m matches.
    pub translation_error: [f64; 3],
    pub matched_pairs: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Usage(format!("cannot serialize report: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

type Groups<'a> = BTreeMap<(&'a str, usize), (Vec<Box3D>, Vec<Box3D>)>;

fn group<'a>(preds: &'a [Record], gts: &'a [Record]) -> Groups<'a> {
    let mut g: Groups = BTreeMap::new();
    for r in preds {
        g.entry((&r.scene, r.det.class_id)).or_default().0.push(r.det);
    }
    for r in gts {
        g.entry((&r.scene, r.det.class_id)).or_default().1.push(r.det);
    }
    g
}

fn class_ap(groups: &Groups, class_id: usize, crit: Criterion, n_gt: usize) -> Option<f64> {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    for ((_, c), (p, g)) in groups {
        if *c != class_id {
            continue;
        }
        let tp = match_detections(p, g, crit).is_tp(p.len());
        ranked.extend(p.iter().zip(tp).map(|(b, t)| (b.score, t)));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let flags: Vec<bool> = ranked.into_iter().map(|(_, t)| t).collect();
    average_precision(&flags, n_gt)
}

pub fn evaluate(preds: &[Record], gts: &[Record], cfg: &MatchConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let groups = group(preds, gts);
    let classes: BTreeSet<usize> = groups.keys().map(|k| k.1).collect();
    let criteria = cfg.criteria();
    let count_crit = match cfg.mode {
        MatchMode::CenterDistance => Criterion::Distance(ERROR_RADIUS),
        MatchMode::Iou => Criterion::Iou(cfg.iou_threshold),
    };

    let mut reports = Vec::new();
    let mut ap_values = Vec::new();
    for &class_id in &classes {
        let n_gt = gts.iter().filter(|r| r.det.class_id == class_id).count();
        let n_pred = preds.iter().filter(|r| r.det.class_id == class_id).count();
        let mut ap = BTreeMap::new();
        for crit in &criteria {
            if let Some(v) = class_ap(&groups, class_id, *crit, n_gt) {
                ap_values.push(v);
                ap.insert(crit.label(), v);
            }
        }
        reports.push(ClassReport { class_id, n_gt, n_pred, ap });
    }

    let (mut tp, mut fp, mut misses) = (0, 0, 0);
    let mut err = [0.0f64; 3];
    let mut pairs = 0usize;
    for (p, g) in groups.values() {
        let m = match_detections(p, g, count_crit);
        tp += m.pairs.len();
        fp += m.unmatched_preds.len();
        misses += m.unmatched_gts.len();
        for (pi, gi) in match_detections(p, g, Criterion::Distance(ERROR_RADIUS)).pairs {
            for (axis, e) in err.iter_mut().enumerate() {
                *e += (p[pi].center[axis] - g[gi].center[axis]).abs();
            }
            pairs += 1;
        }
    }
    if pairs > 0 {
        err.iter_mut().for_each(|e| *e /= pairs as f64);
    }
    let map = if ap_values.is_empty() { 0.0 } else { ap_values.iter().sum::<f64>() / ap_values.len() as f64 };
    Ok(EvalReport {
        mode: cfg.mode,
        criteria: criteria.iter().map(Criterion::label).collect(),
        map: map.clamp(0.0, 1.0),
        translation_error: err,
        matched_pairs: pairs,
        true_positives: tp,
        false_positives: fp,
        misses,
        classes: reports,
    })
}

pub fn evaluate_files(pred: &Path, gt: &Path, cfg: &MatchConfig) -> Result<EvalReport> {
    evaluate(&predictions::load(pred)?, &predictions::load(gt)?, cfg)
}
