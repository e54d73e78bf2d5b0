use crate::error::{NumericsError, Result};
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::{gemm, Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Matrix product of `a: [M×K]` and `b: [K×N]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, m, k, n) = {
            let av = self.value(a);
            let bv = self.value(b);
            let (sa, sb) = (av.shape(), bv.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(NumericsError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![T::zero(); m * n];
            gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
            (Tensor::new([m, n], out)?, m, k, n)
        };
        self.push(out, Op::MatMul { a, b, m, k, n }, &[a, b], "matmul")
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        let (out, rows, cols) = {
            let xv = self.value(x);
            let s = xv.shape();
            if s.len() != 2 {
                return Err(NumericsError::Usage(format!("transpose needs a 2-D tensor, got {s:?}")));
            }
            let (rows, cols) = (s[0], s[1]);
            (Tensor::new([cols, rows], transpose_buf(xv.data(), rows, cols))?, rows, cols)
        };
        self.push(out, Op::Transpose { x, rows, cols }, &[x], "transpose")
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            if shape.iter().product::<usize>() != xv.numel() {
                return Err(NumericsError::ShapeMismatch {
                    op: "reshape",
                    lhs: xv.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Tensor::new(shape.to_vec(), xv.data().to_vec())?
        };
        self.push(out, Op::Reshape { x }, &[x], "reshape")
    }
}

pub(crate) fn transpose_buf<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

pub(super) fn matmul_backward<T: Scalar>(
    a: Var,
    b: Var,
    m: usize,
    k: usize,
    n: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if sink.wants(a) {
        // dA = G · Bᵀ
        let bv = sink.value(b).data();
        let slot = sink.slot(a);
        gemm(m, n, k, g, false, bv, true, slot, true);
    }
    if sink.wants(b) {
        // dB = Aᵀ · G
        let av = sink.value(a).data();
        let slot = sink.slot(b);
        gemm(k, m, n, av, true, g, false, slot, true);
    }
}

pub(super) fn transpose_backward<T: Scalar>(x: Var, rows: usize, cols: usize, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(x) {
        // g is [cols×rows]
        let back = transpose_buf(g, cols, rows);
        sink.add(x, &back);
    }
}
