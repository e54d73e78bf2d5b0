use crate::error::{NumericsError, Result};
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Writes row `p` of `x: [P×C]` into cell `cells[p]` (flattened `row·W+col`)
    /// of a zero `[C×H×W]` map. Cells must be distinct.
    pub fn scatter_to_grid(&self, x: Var, cells: &[usize], height: usize, width: usize) -> Result<Var> {
        let plane = height * width;
        let out = {
            let xv = self.value(x);
            let s = xv.shape();
            if s.len() != 2 || s[0] != cells.len() {
                return Err(NumericsError::Usage(format!(
                    "scatter needs [P×C] with P cells, got {s:?} and {} cells",
                    cells.len()
                )));
            }
            let c = s[1];
            let mut seen = vec![false; plane];
            let mut data = vec![T::zero(); c * plane];
            for (p, &cell) in cells.iter().enumerate() {
                if cell >= plane {
                    return Err(NumericsError::Usage(format!("scatter cell {cell} outside {height}×{width} grid")));
                }
                if std::mem::replace(&mut seen[cell], true) {
                    return Err(NumericsError::Usage(format!("scatter cell {cell} assigned twice")));
                }
                for ci in 0..c {
                    data[ci * plane + cell] = xv.data()[p * c + ci];
                }
            }
            Tensor::new([c, height, width], data)?
        };
        self.push(out, Op::Scatter { x, cells: cells.to_vec(), plane }, &[x], "scatter_to_grid")
    }

    /// Bilinear interpolation of `fmap: [C×H×W]` at continuous `(row, col)`
    /// points, clamped to the map border. Returns `[P×C]`.
    pub fn bilinear_sample(&self, fmap: Var, points: &[(f64, f64)]) -> Result<Var> {
        let (out, taps, channels, plane) = {
            let fv = self.value(fmap);
            let s = fv.shape();
            if s.len() != 3 || s[1] == 0 || s[2] == 0 {
                return Err(NumericsError::Usage(format!("bilinear_sample needs a non-empty [C×H×W], got {s:?}")));
            }
            let (c, h, w) = (s[0], s[1], s[2]);
            let plane = h * w;
            let taps: Vec<[(usize, T); 4]> = points.iter().map(|&(r, col)| bilinear_taps(r, col, h, w)).collect();
            let mut data = vec![T::zero(); points.len() * c];
            for (p, tap) in taps.iter().enumerate() {
                for ci in 0..c {
                    let chan = &fv.data()[ci * plane..(ci + 1) * plane];
                    let mut acc = T::zero();
                    for &(idx, wt) in tap {
                        acc += wt * chan[idx];
                    }
                    data[p * c + ci] = acc;
                }
            }
            (Tensor::new([points.len(), c], data)?, taps, c, plane)
        };
        self.push(out, Op::BilinearSample { x: fmap, taps, channels, plane }, &[fmap], "bilinear_sample")
    }
}

/// Four flattened corner indices and weights of a clamped bilinear lookup.
pub fn bilinear_taps<T: Scalar>(row: f64, col: f64, h: usize, w: usize) -> [(usize, T); 4] {
    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let v = v.clamp(0.0, (n - 1) as f64);
        let i0 = (v.floor() as usize).min(n - 2);
        (i0, i0 + 1, v - i0 as f64)
    };
    let (r0, r1, fr) = axis(row, h);
    let (c0, c1, fc) = axis(col, w);
    [
        (r0 * w + c0, T::lit((1.0 - fr) * (1.0 - fc))),
        (r0 * w + c1, T::lit((1.0 - fr) * fc)),
        (r1 * w + c0, T::lit(fr * (1.0 - fc))),
        (r1 * w + c1, T::lit(fr * fc)),
    ]
}

pub(super) fn scatter_backward<T: Scalar>(x: Var, cells: &[usize], plane: usize, g: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(x) {
        return;
    }
    let slot = sink.slot(x);
    let c = if cells.is_empty() { 0 } else { slot.len() / cells.len() };
    for (p, &cell) in cells.iter().enumerate() {
        for ci in 0..c {
            slot[p * c + ci] += g[ci * plane + cell];
        }
    }
}

pub(super) fn bilinear_backward<T: Scalar>(
    x: Var,
    taps: &[[(usize, T); 4]],
    channels: usize,
    plane: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(x) {
        return;
    }
    let slot = sink.slot(x);
    for (p, tap) in taps.iter().enumerate() {
        for ci in 0..channels {
            let gg = g[p * channels + ci];
            for &(idx, wt) in tap {
                slot[ci * plane + idx] += wt * gg;
            }
        }
    }
}
