//! Central finite-difference verification of backward rules, in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::Padding;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, max_rel_error: f64) -> Self {
        CheckResult { name: name.into(), max_rel_error, passed: max_rel_error < TOLERANCE }
    }
}

type BuildFn = Box<dyn Fn(&Tape<f64>, &[Var]) -> Result<Var>>;

/// One differentiable op exercised on small seeded inputs.
pub struct OpCase {
    pub kind: OpKind,
    pub inputs: Vec<Tensor<f64>>,
    build: BuildFn,
}

impl OpCase {
    fn new(kind: OpKind, inputs: Vec<Tensor<f64>>, build: impl Fn(&Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Self {
        OpCase { kind, inputs, build: Box::new(build) }
    }

    /// Max relative error between tape gradients and central differences of
    /// `⟨seed, op(inputs)⟩` over every input element.
    pub fn check(&self, fault: Option<OpKind>) -> Result<f64> {
        let tape = Tape::<f64>::new();
        tape.inject_fault(fault);
        let vars = self
            .inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let out = (self.build)(&tape, &vars)?;
        let out_shape = tape.shape(out);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let seed = Tensor::from_fn(out_shape, |_| rng.random_range(-1.0..1.0));
        let grads = tape.backward_with_seed(out, seed.clone())?;

        let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
            let t = Tape::<f64>::inference();
            let vs = inputs.iter().map(|x| t.constant(x.clone())).collect::<Result<Vec<_>>>()?;
            let o = (self.build)(&t, &vs)?;
            let val = t.value(o);
            Ok(val.data().iter().zip(seed.data()).map(|(a, b)| a * b).sum())
        };

        let mut worst: f64 = 0.0;
        let mut work = self.inputs.clone();
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(self.inputs[i].shape().to_vec()));
            for j in 0..self.inputs[i].numel() {
                let orig = work[i].data()[j];
                work[i].data_mut()[j] = orig + FD_STEP;
                let fp = eval(&work)?;
                work[i].data_mut()[j] = orig - FD_STEP;
                let fm = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let numeric = (fp - fm) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(analytic.data()[j], numeric));
            }
        }
        Ok(worst)
    }
}

/// Values in `±[0.1, 1]`, away from the kinks of relu/clamp/L1 at zero.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// One case per entry of [`OpKind::ALL`], in that order.
pub fn op_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let r = &mut rng;
    let mut cases = Vec::new();
    for kind in OpKind::ALL {
        let case = match kind {
            OpKind::MatMul => OpCase::new(kind, vec![uniform(&[3, 4], -1.0, 1.0, r), uniform(&[4, 2], -1.0, 1.0, r)], |t, v| {
                t.matmul(v[0], v[1])
            }),
            OpKind::Transpose => OpCase::new(kind, vec![uniform(&[3, 4], -1.0, 1.0, r)], |t, v| t.transpose(v[0])),
            OpKind::Reshape => OpCase::new(kind, vec![uniform(&[2, 6], -1.0, 1.0, r)], |t, v| t.reshape(v[0], &[3, 4])),
            OpKind::Add => OpCase::new(kind, vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)], |t, v| {
                t.add(v[0], v[1])
            }),
            OpKind::Sub => OpCase::new(kind, vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)], |t, v| {
                t.sub(v[0], v[1])
            }),
            OpKind::Mul => OpCase::new(kind, vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)], |t, v| {
                t.mul(v[0], v[1])
            }),
            OpKind::Scale => OpCase::new(kind, vec![uniform(&[5], -1.0, 1.0, r)], |t, v| t.scale(v[0], -1.7)),
            OpKind::AddBiasRows => {
                OpCase::new(kind, vec![uniform(&[3, 4], -1.0, 1.0, r), uniform(&[4], -1.0, 1.0, r)], |t, v| {
                    t.add_bias_rows(v[0], v[1])
                })
            }
            OpKind::AddBiasChannels => {
                OpCase::new(kind, vec![uniform(&[2, 3, 3], -1.0, 1.0, r), uniform(&[2], -1.0, 1.0, r)], |t, v| {
                    t.add_bias_channels(v[0], v[1])
                })
            }
            OpKind::Relu => OpCase::new(kind, vec![away_from_zero(&[12], r)], |t, v| t.relu(v[0])),
            OpKind::Sigmoid => OpCase::new(kind, vec![uniform(&[2, 3], -3.0, 3.0, r)], |t, v| t.sigmoid(v[0])),
            OpKind::Clamp => {
                // Keep samples off the bounds.
                let x = away_from_zero(&[12], r).map(|v| if (v.abs() - 0.55).abs() < 0.02 { v * 1.1 } else { v });
                OpCase::new(kind, vec![x], |t, v| t.clamp(v[0], -0.55, 0.55))
            }
            OpKind::Sum => OpCase::new(kind, vec![uniform(&[2, 3], -1.0, 1.0, r)], |t, v| t.sum(v[0])),
            OpKind::Mean => OpCase::new(kind, vec![uniform(&[2, 3], -1.0, 1.0, r)], |t, v| t.mean(v[0])),
            OpKind::Softmax => OpCase::new(kind, vec![uniform(&[2, 3, 4], -2.0, 2.0, r)], |t, v| t.softmax(v[0], 1)),
            OpKind::LayerNorm => OpCase::new(
                kind,
                vec![uniform(&[3, 5], -1.0, 1.0, r), uniform(&[5], 0.5, 1.5, r), uniform(&[5], -0.5, 0.5, r)],
                |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
            ),
            OpKind::Concat => OpCase::new(kind, vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[1, 3], -1.0, 1.0, r)], |t, v| {
                t.concat(&[v[0], v[1]])
            }),
            OpKind::MaskedMax => {
                // Distinct, well-separated values so no perturbation flips an argmax.
                let mut vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
                for i in (1..vals.len()).rev() {
                    let j = r.random_range(0..=i);
                    vals.swap(i, j);
                }
                let x = Tensor::new([2, 3, 2], vals).expect("12 values");
                OpCase::new(kind, vec![x], |t, v| t.masked_max(v[0], &[3, 2]))
            }
            OpKind::Scatter => {
                OpCase::new(kind, vec![uniform(&[3, 2], -1.0, 1.0, r)], |t, v| t.scatter_to_grid(v[0], &[0, 5, 7], 3, 3))
            }
            OpKind::Conv2d => OpCase::new(
                kind,
                vec![uniform(&[2, 6, 6], -1.0, 1.0, r), uniform(&[3, 2, 3, 3], -0.5, 0.5, r), uniform(&[2, 3, 3, 3], -0.5, 0.5, r)],
                |t, v| {
                    let y = t.conv2d(v[0], v[1], 1, Padding::symmetric(1))?;
                    t.conv2d(y, v[2], 2, Padding::same(3, 2))
                },
            ),
            OpKind::ConvTranspose2x2 => {
                OpCase::new(kind, vec![uniform(&[2, 2, 3], -1.0, 1.0, r), uniform(&[2, 3, 2, 2], -1.0, 1.0, r)], |t, v| {
                    t.conv_transpose2x2(v[0], v[1])
                })
            }
            OpKind::Upsample2x => OpCase::new(kind, vec![uniform(&[2, 2, 3], -1.0, 1.0, r)], |t, v| t.upsample_nearest2x(v[0])),
            OpKind::BilinearSample => OpCase::new(kind, vec![uniform(&[2, 4, 5], -1.0, 1.0, r)], |t, v| {
                t.bilinear_sample(v[0], &[(0.3, 1.7), (2.5, 3.25), (3.0, 4.0), (-1.0, 6.2), (1.9, 0.1)])
            }),
            OpKind::FocalLoss => {
                let target = Tensor::new([1, 3, 4], vec![1.0, 0.6, 0.2, 0.0, 0.4, 0.0, 1.0, 0.9, 0.1, 0.0, 0.3, 0.0])
                    .expect("12 values");
                let pred = uniform(&[1, 3, 4], 0.05, 0.95, r);
                OpCase::new(kind, vec![pred], move |t, v| t.focal_loss(v[0], &target))
            }
            OpKind::L1Masked => {
                let pred = uniform(&[3, 4], -1.0, 1.0, r);
                let target = Tensor::from_fn([3, 4], |i| pred.data()[i] + if i % 2 == 0 { 0.3 } else { -0.2 });
                let mask = [true, false, true, true];
                OpCase::new(kind, vec![pred], move |t, v| t.l1_masked(v[0], &target, &mask))
            }
        };
        cases.push(case);
    }
    cases
}

/// Runs every op case; `fault` corrupts one backward rule (negative control).
pub fn run_op_suite(fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    op_cases()
        .iter()
        .map(|case| Ok(CheckResult::new(case.kind.name(), case.check(fault)?)))
        .collect()
}

/// Directional finite-difference check of a scalar function of several
/// parameter tensors: for each tensor, `∇f·d` against `(f(θ+hd) − f(θ−hd)) / 2h`
/// along a seeded random unit direction `d`.
pub fn directional_check(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let n = params[i].numel();
        let mut dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
        dir.iter_mut().for_each(|d| *d /= norm);
        let predicted: f64 = analytic[i].data().iter().zip(&dir).map(|(g, d)| g * d).sum();
        for (w, (p, d)) in work[i].data_mut().iter_mut().zip(params[i].data().iter().zip(&dir)) {
            *w = p + FD_STEP * d;
        }
        let fp = f(&work)?;
        for (w, (p, d)) in work[i].data_mut().iter_mut().zip(params[i].data().iter().zip(&dir)) {
            *w = p - FD_STEP * d;
        }
        let fm = f(&work)?;
        work[i] = params[i].clone();
        errors.push(relative_error(predicted, (fp - fm) / (2.0 * FD_STEP)));
    }
    Ok(errors)
}
