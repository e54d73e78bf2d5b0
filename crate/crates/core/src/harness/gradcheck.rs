//! Finite-difference verification: every registered op, then a tiny
//! end-to-end pipeline in 64-bit precision.

use std::fmt::Write as _;

use cvcp_numerics::gradcheck::{directional_check, run_op_suite, CheckResult};
use cvcp_numerics::{OpKind, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Config;
use super::synth::generate_scene;
use crate::error::Result;
use crate::pillars::BevGrid;
use crate::pipeline::{forward, init_params, sample_loss, SceneInputs, SceneTargets};

pub const END_TO_END: &str = "end_to_end";
const JITTER: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub ops: Vec<CheckResult>,
    pub end_to_end: CheckResult,
    /// Relative error per parameter tensor of the end-to-end check.
    pub per_param: Vec<(String, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|r| r.passed) && self.end_to_end.passed
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        for r in self.ops.iter().chain(std::iter::once(&self.end_to_end)) {
            let _ = writeln!(out, "{:<20} max_rel_error {:.3e} {}", r.name, r.max_rel_error, if r.passed { "PASS" } else { "FAIL" });
        }
        for (name, e) in &self.per_param {
            let _ = writeln!(out, "  {name:<24} {e:.3e}");
        }
        out
    }
}

/// Configuration of the tiny end-to-end check: an 8×8 BEV grid.
pub fn tiny_config() -> Config {
    let mut c = Config::default();
    let m = &mut c.model;
    m.grid = BevGrid { x_min: -4.0, x_max: 4.0, y_min: -4.0, y_max: 4.0, cell: 1.0 };
    m.max_points_per_pillar = 4;
    m.image_height = 16;
    m.image_width = 16;
    m.image_channels_stem = 4;
    m.image_channels = 4;
    m.embed_dim = 4;
    m.query_height = 4;
    m.query_width = 4;
    m.ff_hidden = 6;
    m.camera_bev_channels = 4;
    m.pillar_channels = 4;
    m.lidar_channels = 4;
    m.fused_channels = 4;
    m.head_channels = 4;
    m.refine_hidden = 6;
    let d = &mut c.data;
    d.min_boxes = 1;
    d.max_boxes = 2;
    d.length = [1.5, 2.0];
    d.width = [0.8, 1.2];
    d.height = [1.0, 1.4];
    d.points_per_box = 24;
    d.ground_points = 40;
    d.min_range = 1.0;
    d.edge_margin = 1.0;
    d.focal = 4.0;
    c
}

fn store(names: &[String], tensors: &[Tensor<f64>]) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::default();
    for (n, t) in names.iter().zip(tensors) {
        s.insert(n, t.clone())?;
    }
    Ok(s)
}

/// Directional check of the full training loss (both stages, ground-truth
/// boxes as refinement proposals) with respect to every parameter tensor.
pub fn end_to_end_check(seed: u64, fault: Option<OpKind>) -> Result<(CheckResult, Vec<(String, f64)>)> {
    let cfg = tiny_config();
    cfg.validate()?;
    let scene = generate_scene("gradcheck", seed, &cfg)?;
    let inputs = SceneInputs::<f64>::new(&scene, &cfg.model)?;
    let targets = SceneTargets::<f64>::new(&scene.boxes, &cfg.model);
    let mut params: ParamStore<f64> = init_params(&cfg.model, seed)?.cast();
    // Zero biases over empty cells put relus exactly on their kink; move off it.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-JITTER..JITTER));
    }
    let names = params.names().to_vec();

    let analytic = {
        let tape = Tape::<f64>::new();
        tape.inject_fault(fault);
        let p = params.bind(&tape, |_| true)?;
        let fwd = forward(&tape, &p, &inputs, &cfg.model, None)?;
        let loss = sample_loss(&tape, &p, &fwd, &targets, &cfg.model, &cfg.train, Some(&scene.boxes))?;
        let mut grads = tape.backward(loss.total)?;
        let collected = p.collect(&mut grads);
        collected
            .into_iter()
            .zip(params.tensors())
            .map(|(g, t)| g.unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect::<Vec<_>>()
    };
    let f = |ts: &[Tensor<f64>]| -> cvcp_numerics::Result<f64> {
        let s = store(&names, ts).map_err(|e| cvcp_numerics::NumericsError::Usage(e.to_string()))?;
        let tape = Tape::<f64>::inference();
        let run = || -> Result<f64> {
            let p = s.bind(&tape, |_| false)?;
            let fwd = forward(&tape, &p, &inputs, &cfg.model, None)?;
            let loss = sample_loss(&tape, &p, &fwd, &targets, &cfg.model, &cfg.train, Some(&scene.boxes))?;
            Ok(tape.value(loss.total).item())
        };
        run().map_err(|e| cvcp_numerics::NumericsError::Usage(e.to_string()))
    };
    let errors = directional_check(params.tensors(), &analytic, f, seed)?;
    let worst = errors.iter().copied().fold(0.0, f64::max);
    Ok((CheckResult::new(END_TO_END, worst), names.into_iter().zip(errors).collect()))
}

pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let ops = run_op_suite(None)?;
    let (end_to_end, per_param) = end_to_end_check(seed, None)?;
    Ok(GradcheckReport { ops, end_to_end, per_param })
}
