//! Forward implementations (as `Tape` methods) and their backward rules.

pub mod conv;
pub mod elementwise;
mod linalg;
mod loss;
mod reduce;
pub mod sample;

use crate::tape::{GradSink, Node, Op};
use crate::tensor::Scalar;

pub use conv::Padding;

pub(crate) fn backward_node<T: Scalar>(op: &Op<T>, node: &Node<T>, g: &[T], sink: &mut GradSink<'_, T>) {
    let out = node.value.data();
    match op {
        Op::Leaf | Op::Const => {}
        Op::MatMul { a, b, m, k, n } => linalg::matmul_backward(*a, *b, *m, *k, *n, g, sink),
        Op::Transpose { x, rows, cols } => linalg::transpose_backward(*x, *rows, *cols, g, sink),
        Op::Reshape { x } => sink.add(*x, g),
        Op::Add { a, b } => {
            sink.add(*a, g);
            sink.add(*b, g);
        }
        Op::Sub { a, b } => {
            sink.add(*a, g);
            if sink.wants(*b) {
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                sink.add(*b, &neg);
            }
        }
        Op::Mul { a, b } => elementwise::mul_backward(*a, *b, g, sink),
        Op::Scale { x, c } => {
            let scaled: Vec<T> = g.iter().map(|&v| v * *c).collect();
            sink.add(*x, &scaled);
        }
        Op::AddBiasRows { x, b } => elementwise::bias_rows_backward(*x, *b, g, sink),
        Op::AddBiasChannels { x, b } => elementwise::bias_channels_backward(*x, *b, g, sink),
        Op::Relu { x } => elementwise::relu_backward(*x, g, sink),
        Op::Sigmoid { x } => elementwise::sigmoid_backward(*x, out, g, sink),
        Op::Clamp { x, lo, hi } => elementwise::clamp_backward(*x, *lo, *hi, g, sink),
        Op::Sum { x } => {
            if sink.wants(*x) {
                let g0 = g[0];
                for s in sink.slot(*x) {
                    *s += g0;
                }
            }
        }
        Op::Mean { x } => {
            if sink.wants(*x) {
                let n = T::lit(sink.value(*x).numel().max(1) as f64);
                let g0 = g[0] / n;
                for s in sink.slot(*x) {
                    *s += g0;
                }
            }
        }
        Op::Softmax { x, outer, len, inner } => reduce::softmax_backward(*x, out, *outer, *len, *inner, g, sink),
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            reduce::layer_norm_backward(*x, *gamma, *beta, xhat, rstd, g, sink)
        }
        Op::Concat { inputs } => reduce::concat_backward(inputs, g, sink),
        Op::MaskedMax { x, argmax } => reduce::masked_max_backward(*x, argmax, g, sink),
        Op::Scatter { x, cells, plane } => sample::scatter_backward(*x, cells, *plane, g, sink),
        Op::Conv2d { x, w, geom, cols } => conv::conv2d_backward(*x, *w, geom, cols, g, sink),
        Op::ConvTranspose2x2 { x, w, c, f, h, w_in } => {
            conv::conv_transpose_backward(*x, *w, *c, *f, *h, *w_in, g, sink)
        }
        Op::Upsample2x { x, c, h, w } => conv::upsample_backward(*x, *c, *h, *w, g, sink),
        Op::BilinearSample { x, taps, channels, plane } => {
            sample::bilinear_backward(*x, taps, *channels, *plane, g, sink)
        }
        Op::FocalLoss { pred, target, norm } => loss::focal_backward(*pred, target, *norm, g, sink),
        Op::L1Masked { pred, target, mask, channels, norm } => {
            loss::l1_backward(*pred, target, mask, *channels, *norm, g, sink)
        }
    }
}
