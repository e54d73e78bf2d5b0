use crate::error::{NumericsError, Result};
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(NumericsError::ShapeMismatch { op: name, lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() });
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add { a, b }, &[a, b], "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub { a, b }, &[a, b], "sub")
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul { a, b }, &[a, b], "mul")
    }

    pub fn scale(&self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c }, &[x], "scale")
    }

    /// `x: [N×D] + b: [D]`, broadcasting the bias over rows.
    pub fn add_bias_rows(&self, x: Var, b: Var) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            let bv = self.value(b);
            let s = xv.shape();
            if s.len() != 2 || bv.shape() != [s[1]] {
                return Err(NumericsError::ShapeMismatch {
                    op: "add_bias_rows",
                    lhs: s.to_vec(),
                    rhs: bv.shape().to_vec(),
                });
            }
            let d = s[1];
            let mut data = xv.data().to_vec();
            for row in data.chunks_mut(d.max(1)) {
                for (v, &bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
            Tensor::new(s.to_vec(), data)?
        };
        self.push(out, Op::AddBiasRows { x, b }, &[x, b], "add_bias_rows")
    }

    /// `x: [C×...] + b: [C]`, broadcasting each bias over its channel plane.
    pub fn add_bias_channels(&self, x: Var, b: Var) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            let bv = self.value(b);
            let s = xv.shape();
            if s.is_empty() || bv.shape() != [s[0]] {
                return Err(NumericsError::ShapeMismatch {
                    op: "add_bias_channels",
                    lhs: s.to_vec(),
                    rhs: bv.shape().to_vec(),
                });
            }
            let plane: usize = s[1..].iter().product();
            let mut data = xv.data().to_vec();
            if plane > 0 {
                for (chan, &bb) in data.chunks_mut(plane).zip(bv.data()) {
                    for v in chan {
                        *v += bb;
                    }
                }
            }
            Tensor::new(s.to_vec(), data)?
        };
        self.push(out, Op::AddBiasChannels { x, b }, &[x, b], "add_bias_channels")
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu { x }, &[x], "relu")
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid { x }, &[x], "sigmoid")
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(NumericsError::Usage(format!("clamp bounds reversed: {lo} > {hi}")));
        }
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { x, lo, hi }, &[x], "clamp")
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(super) fn mul_backward<T: Scalar>(a: Var, b: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(a) {
        let bv = sink.value(b).data();
        let slot = sink.slot(a);
        for ((s, &gg), &y) in slot.iter_mut().zip(g).zip(bv) {
            *s += gg * y;
        }
    }
    if sink.wants(b) {
        let av = sink.value(a).data();
        let slot = sink.slot(b);
        for ((s, &gg), &x) in slot.iter_mut().zip(g).zip(av) {
            *s += gg * x;
        }
    }
}

pub(super) fn bias_rows_backward<T: Scalar>(x: Var, b: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    sink.add(x, g);
    if sink.wants(b) {
        let slot = sink.slot(b);
        let d = slot.len();
        if d == 0 {
            return;
        }
        for row in g.chunks(d) {
            for (s, &gg) in slot.iter_mut().zip(row) {
                *s += gg;
            }
        }
    }
}

pub(super) fn bias_channels_backward<T: Scalar>(x: Var, b: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    sink.add(x, g);
    if sink.wants(b) {
        let slot = sink.slot(b);
        let c = slot.len();
        if c == 0 || g.is_empty() {
            return;
        }
        let plane = g.len() / c;
        for (s, chan) in slot.iter_mut().zip(g.chunks(plane)) {
            *s += chan.iter().copied().sum::<T>();
        }
    }
}

pub(super) fn relu_backward<T: Scalar>(x: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(x) {
        let xv = sink.value(x).data();
        let slot = sink.slot(x);
        for ((s, &gg), &v) in slot.iter_mut().zip(g).zip(xv) {
            if v > T::zero() {
                *s += gg;
            }
        }
    }
}

pub(super) fn sigmoid_backward<T: Scalar>(x: Var, out: &[T], g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(x) {
        let slot = sink.slot(x);
        for ((s, &gg), &y) in slot.iter_mut().zip(g).zip(out) {
            *s += gg * y * (T::one() - y);
        }
    }
}

pub(super) fn clamp_backward<T: Scalar>(x: Var, lo: T, hi: T, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(x) {
        let xv = sink.value(x).data();
        let slot = sink.slot(x);
        for ((s, &gg), &v) in slot.iter_mut().zip(g).zip(xv) {
            if v > lo && v < hi {
                *s += gg;
            }
        }
    }
}
