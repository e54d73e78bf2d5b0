const RECALL_POINTS: usize = 101;
const MIN_RECALL: f64 = 0.1;
const MIN_PRECISION: f64 = 0.1;

/// AP from a score-ranked true-positive sequence over `n_gt` ground truths.
///
/// Precision is taken as the envelope (best precision at any recall at or
/// above the sample point) on a 101-point recall grid; only recall above 0.1
/// contributes, precision is shifted down by 0.1, and the result is
/// renormalized to `[0, 1]`. `None` when there are no ground truths.
pub fn average_precision(ranked_tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut curve = Vec::with_capacity(ranked_tp.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // Suffix maximum of precision.
    let mut envelope = vec![0.0; curve.len()];
    let mut best = 0.0f64;
    for i in (0..curve.len()).rev() {
        best = best.max(curve[i].1);
        envelope[i] = best;
    }
    let first = (MIN_RECALL * 100.0).round() as usize + 1;
    let mut sum = 0.0;
    let mut j = 0;
    for k in first..RECALL_POINTS {
        let r = k as f64 / 100.0;
        while j < curve.len() && curve[j].0 + 1e-12 < r {
            j += 1;
        }
        let p = if j < curve.len() { envelope[j] } else { 0.0 };
        sum += (p - MIN_PRECISION).max(0.0);
    }
    let mean = sum / (RECALL_POINTS - first) as f64;
    Some((mean / (1.0 - MIN_PRECISION)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        assert_eq!(average_precision(&[true, true, true], 3), Some(1.0));
        assert_eq!(average_precision(&[], 2), Some(0.0));
        assert_eq!(average_precision(&[true], 0), None);
    }

    #[test]
    fn hand_computed_curve() {
        // Envelope is 1 up to recall 0.5 and 2/3 beyond:
        // (40·0.9 + 50·(2/3 − 0.1)) / 90 / 0.9.
        let expected = (40.0 * 0.9 + 50.0 * (2.0 / 3.0 - 0.1)) / 90.0 / 0.9;
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert!((ap - expected).abs() < 1e-12);
        assert!((ap - 0.79424).abs() < 1e-5);
    }
}
