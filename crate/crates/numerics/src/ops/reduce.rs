use crate::error::{NumericsError, Result};
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Sum of all elements, as a scalar.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x }, &[x], "sum")
    }

    /// Mean of all elements (zero for an empty tensor).
    pub fn mean(&self, x: Var) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            let n = xv.numel().max(1);
            Tensor::scalar(xv.sum() / T::lit(n as f64))
        };
        self.push(out, Op::Mean { x }, &[x], "mean")
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (out, outer, len, inner) = {
            let xv = self.value(x);
            let s = xv.shape();
            if axis >= s.len() {
                return Err(NumericsError::Usage(format!("softmax axis {axis} out of range for {s:?}")));
            }
            let outer: usize = s[..axis].iter().product();
            let len = s[axis];
            let inner: usize = s[axis + 1..].iter().product();
            let src = xv.data();
            let mut data = vec![T::zero(); src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut mx = T::neg_infinity();
                    for j in 0..len {
                        mx = mx.max(src[base + j * inner]);
                    }
                    let mut total = T::zero();
                    for j in 0..len {
                        let e = (src[base + j * inner] - mx).exp();
                        data[base + j * inner] = e;
                        total += e;
                    }
                    for j in 0..len {
                        data[base + j * inner] = data[base + j * inner] / total;
                    }
                }
            }
            (Tensor::new(s.to_vec(), data)?, outer, len, inner)
        };
        self.push(out, Op::Softmax { x, outer, len, inner }, &[x], "softmax")
    }

    /// Layer normalization over the last axis of `x: [N×D]` with gain and bias `[D]`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, xhat, rstd) = {
            let xv = self.value(x);
            let gv = self.value(gamma);
            let bv = self.value(beta);
            let s = xv.shape();
            if s.len() != 2 || gv.shape() != [s[1]] || bv.shape() != [s[1]] {
                return Err(NumericsError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: s.to_vec(),
                    rhs: gv.shape().to_vec(),
                });
            }
            let (n, d) = (s[0], s[1]);
            let dd = T::lit(d.max(1) as f64);
            let mut xhat = vec![T::zero(); n * d];
            let mut rstd = vec![T::zero(); n];
            let mut data = vec![T::zero(); n * d];
            for r in 0..n {
                let row = &xv.data()[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dd;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dd;
                let rs = T::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for c in 0..d {
                    let h = (row[c] - mean) * rs;
                    xhat[r * d + c] = h;
                    data[r * d + c] = h * gv.data()[c] + bv.data()[c];
                }
            }
            (Tensor::new(s.to_vec(), data)?, xhat, rstd)
        };
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta], "layer_norm")
    }

    /// Concatenation along axis 0 (channels for `[C×H×W]`, rows for `[N×D]`).
    pub fn concat(&self, inputs: &[Var]) -> Result<Var> {
        let out = {
            let first = inputs
                .first()
                .ok_or_else(|| NumericsError::Usage("concat of zero tensors".into()))?;
            let tail = self.value(*first).shape()[1..].to_vec();
            let mut lead = 0;
            let mut data = Vec::new();
            for &v in inputs {
                let vv = self.value(v);
                if vv.shape().is_empty() || vv.shape()[1..] != tail[..] {
                    return Err(NumericsError::ShapeMismatch {
                        op: "concat",
                        lhs: self.value(*first).shape().to_vec(),
                        rhs: vv.shape().to_vec(),
                    });
                }
                lead += vv.shape()[0];
                data.extend_from_slice(vv.data());
            }
            let mut shape = vec![lead];
            shape.extend_from_slice(&tail);
            Tensor::new(shape, data)?
        };
        self.push(out, Op::Concat { inputs: inputs.to_vec() }, inputs, "concat")
    }

    /// Max over axis 1 of `x: [P×N×C]`, using only the first `counts[p]` rows of
    /// each group. Ties resolve to the earliest row.
    pub fn masked_max(&self, x: Var, counts: &[usize]) -> Result<Var> {
        let (out, argmax) = {
            let xv = self.value(x);
            let s = xv.shape();
            if s.len() != 3 || counts.len() != s[0] {
                return Err(NumericsError::Usage(format!(
                    "masked_max needs [P×N×C] with P counts, got {s:?} and {} counts",
                    counts.len()
                )));
            }
            let (p, n, c) = (s[0], s[1], s[2]);
            let mut data = vec![T::zero(); p * c];
            let mut argmax = vec![0usize; p * c];
            for (pi, &cnt) in counts.iter().enumerate() {
                if cnt == 0 || cnt > n {
                    return Err(NumericsError::Usage(format!("masked_max count {cnt} outside [1, {n}]")));
                }
                for ci in 0..c {
                    let mut best = pi * n * c + ci;
                    for ni in 1..cnt {
                        let idx = (pi * n + ni) * c + ci;
                        if xv.data()[idx] > xv.data()[best] {
                            best = idx;
                        }
                    }
                    data[pi * c + ci] = xv.data()[best];
                    argmax[pi * c + ci] = best;
                }
            }
            (Tensor::new([p, c], data)?, argmax)
        };
        self.push(out, Op::MaskedMax { x, argmax }, &[x], "masked_max")
    }
}

pub(super) fn softmax_backward<T: Scalar>(
    x: Var,
    y: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(x) {
        return;
    }
    let slot = sink.slot(x);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                let k = base + j * inner;
                dot += g[k] * y[k];
            }
            for j in 0..len {
                let k = base + j * inner;
                slot[k] += y[k] * (g[k] - dot);
            }
        }
    }
}

pub(super) fn layer_norm_backward<T: Scalar>(
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    rstd: &[T],
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let n = rstd.len();
    let d = xhat.len().checked_div(n).unwrap_or(0);
    if sink.wants(beta) {
        let slot = sink.slot(beta);
        for r in 0..n {
            for c in 0..d {
                slot[c] += g[r * d + c];
            }
        }
    }
    if sink.wants(gamma) {
        let slot = sink.slot(gamma);
        for r in 0..n {
            for c in 0..d {
                slot[c] += g[r * d + c] * xhat[r * d + c];
            }
        }
    }
    if sink.wants(x) {
        let gv = sink.value(gamma).data();
        let slot = sink.slot(x);
        let dd = T::lit(d.max(1) as f64);
        for r in 0..n {
            let mut mean_dh = T::zero();
            let mut mean_dh_h = T::zero();
            for c in 0..d {
                let dh = g[r * d + c] * gv[c];
                mean_dh += dh;
                mean_dh_h += dh * xhat[r * d + c];
            }
            mean_dh = mean_dh / dd;
            mean_dh_h = mean_dh_h / dd;
            for c in 0..d {
                let dh = g[r * d + c] * gv[c];
                slot[r * d + c] += rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
            }
        }
    }
}

pub(super) fn concat_backward<T: Scalar>(inputs: &[Var], g: &[T], sink: &mut GradSink<'_, T>) {
    let mut off = 0;
    for &v in inputs {
        let len = sink.value(v).numel();
        sink.add(v, &g[off..off + len]);
        off += len;
    }
}

pub(super) fn masked_max_backward<T: Scalar>(x: Var, argmax: &[usize], g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(x) {
        let slot = sink.slot(x);
        for (&idx, &gg) in argmax.iter().zip(g) {
            slot[idx] += gg;
        }
    }
}
