use crate::error::{NumericsError, Result};
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Penalty-reduced pixel-wise focal loss with α = 2, β = 4.
    ///
    /// Cells where the target equals exactly 1 are positives; the sum is
    /// normalized by the positive count (at least 1).
    pub fn focal_loss(&self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let (out, norm) = {
            let pv = self.value(pred);
            if pv.shape() != target.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "focal_loss",
                    lhs: pv.shape().to_vec(),
                    rhs: target.shape().to_vec(),
                });
            }
            let one = T::one();
            let positives = target.data().iter().filter(|&&t| t == one).count();
            let norm = T::lit(positives.max(1) as f64);
            let mut total = T::zero();
            for (&p, &t) in pv.data().iter().zip(target.data()) {
                total += if t == one {
                    -(one - p).powi(2) * p.ln()
                } else {
                    -(one - t).powi(4) * p.powi(2) * (one - p).ln()
                };
            }
            (Tensor::scalar(total / norm), norm)
        };
        self.push(out, Op::FocalLoss { pred, target: target.data().to_vec(), norm }, &[pred], "focal_loss")
    }

    /// L1 loss over masked columns of `pred: [C×...]`.
    ///
    /// `mask` covers the trailing (flattened) axes; the sum over all channels
    /// of masked columns is divided by the number of masked columns (at least 1).
    pub fn l1_masked(&self, pred: Var, target: &Tensor<T>, mask: &[bool]) -> Result<Var> {
        let (out, channels, norm) = {
            let pv = self.value(pred);
            let s = pv.shape();
            if s != target.shape() || s.is_empty() {
                return Err(NumericsError::ShapeMismatch {
                    op: "l1_masked",
                    lhs: s.to_vec(),
                    rhs: target.shape().to_vec(),
                });
            }
            let channels = s[0];
            let cols: usize = s[1..].iter().product();
            if mask.len() != cols {
                return Err(NumericsError::Usage(format!("l1_masked mask has {} entries, need {cols}", mask.len())));
            }
            let count = mask.iter().filter(|&&m| m).count();
            let norm = T::lit(count.max(1) as f64);
            let mut total = T::zero();
            for ci in 0..channels {
                for (j, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    let k = ci * cols + j;
                    total += (pv.data()[k] - target.data()[k]).abs();
                }
            }
            (Tensor::scalar(total / norm), channels, norm)
        };
        self.push(
            out,
            Op::L1Masked { pred, target: target.data().to_vec(), mask: mask.to_vec(), channels, norm },
            &[pred],
            "l1_masked",
        )
    }
}

pub(super) fn focal_backward<T: Scalar>(pred: Var, target: &[T], norm: T, g: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(pred) {
        return;
    }
    let pv = sink.value(pred).data();
    let slot = sink.slot(pred);
    let one = T::one();
    let two = T::lit(2.0);
    let scale = g[0] / norm;
    for ((s, &p), &t) in slot.iter_mut().zip(pv).zip(target) {
        let d = if t == one {
            // d/dp [-(1-p)² ln p]
            two * (one - p) * p.ln() - (one - p).powi(2) / p
        } else {
            // d/dp [-(1-t)⁴ p² ln(1-p)]
            -(one - t).powi(4) * (two * p * (one - p).ln() - p.powi(2) / (one - p))
        };
        *s += scale * d;
    }
}

pub(super) fn l1_backward<T: Scalar>(
    pred: Var,
    target: &[T],
    mask: &[bool],
    channels: usize,
    norm: T,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(pred) {
        return;
    }
    let pv = sink.value(pred).data();
    let slot = sink.slot(pred);
    let cols = mask.len();
    let scale = g[0] / norm;
    for ci in 0..channels {
        for (j, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let k = ci * cols + j;
            let diff = pv[k] - target[k];
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            slot[k] += scale * sign;
        }
    }
}
