//! Peak extraction from the center heatmap.

use cvcp_numerics::{Scalar, Tensor};

use super::boxes::{normalize_yaw, Box3D};
use super::targets::REG_CHANNELS;
use crate::pillars::BevGrid;

/// Cells that are `>=` all of their (in-bounds) 8 neighbors, as `(class, row, col)`.
pub fn local_maxima<T: Scalar>(heat: &Tensor<T>) -> Vec<(usize, usize, usize)> {
    let s = heat.shape();
    let (k, h, w) = (s[0], s[1], s[2]);
    let d = heat.data();
    let mut out = Vec::new();
    for ci in 0..k {
        let plane = &d[ci * h * w..(ci + 1) * h * w];
        for r in 0..h {
            for c in 0..w {
                let v = plane[r * w + c];
                let mut peak = true;
                'nb: for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        if plane[rr as usize * w + cc as usize] > v {
                            peak = false;
                            break 'nb;
                        }
                    }
                }
                if peak {
                    out.push((ci, r, c));
                }
            }
        }
    }
    out
}

/// Box regressed at cell `(row, col)` with the given class and score.
pub fn decode_cell<T: Scalar>(reg: &Tensor<T>, grid: &BevGrid, class_id: usize, row: usize, col: usize, score: f64) -> Box3D {
    let plane = grid.rows() * grid.cols();
    let idx = row * grid.cols() + col;
    let v: [f64; REG_CHANNELS] = std::array::from_fn(|k| reg.data()[k * plane + idx].as_f64());
    Box3D {
        center: [grid.x_min + (col as f64 + v[0]) * grid.cell, grid.y_min + (row as f64 + v[1]) * grid.cell, v[2]],
        size: [v[3].exp(), v[4].exp(), v[5].exp()],
        yaw: normalize_yaw(v[6].atan2(v[7])),
        velocity: [v[8], v[9]],
        class_id,
        score,
    }
}

/// Local maxima scoring at least `threshold`, best first (ties by class, row,
/// col), truncated to `top_k` and decoded to boxes.
pub fn detect_decode<T: Scalar>(heat: &Tensor<T>, reg: &Tensor<T>, grid: &BevGrid, threshold: f64, top_k: usize) -> Vec<Box3D> {
    let w = grid.cols();
    let plane = grid.rows() * w;
    let mut peaks: Vec<(f64, (usize, usize, usize))> = local_maxima(heat)
        .into_iter()
        .map(|(k, r, c)| (heat.data()[k * plane + r * w + c].as_f64(), (k, r, c)))
        .filter(|&(s, _)| s >= threshold)
        .collect();
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    peaks.truncate(top_k);
    peaks.into_iter().map(|(s, (k, r, c))| decode_cell(reg, grid, k, r, c, s)).collect()
}
