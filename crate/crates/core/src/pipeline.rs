//! The full detector: both branches, fusion, two-stage head, and NMS.

use cvcp_numerics::{Bound, ParamSpec, ParamStore, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cvt::{self, CameraGeometry};
use crate::error::Result;
use crate::harness::config::{InferConfig, ModelConfig, TrainConfig};
use crate::harness::scene::SceneRecord;
use crate::head::boxes::Box3D;
use crate::head::decode::detect_decode;
use crate::head::loss::{compute_loss, refine_loss, refine_targets};
use crate::head::nms::rotated_nms;
use crate::head::refine::{apply_refinement, refine_forward};
use crate::head::targets::{render_targets, Targets};
use crate::head::{self, center_head};
use crate::layers::SpecList;
use crate::pillars::{self, pillarize, PillarBuffer};

/// Camera-branch parameters, excluded from updates when the branch is frozen.
pub fn is_camera_param(name: &str) -> bool {
    name.starts_with("cvt.") || name.starts_with("cam.")
}

pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = SpecList::default();
    cvt::param_specs(&mut s, cfg);
    if !cfg.camera_only {
        pillars::param_specs(&mut s, cfg.pillar_channels, cfg.lidar_channels);
    }
    head::param_specs(&mut s, cfg);
    s.0
}

pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ParamStore::from_specs(&param_specs(cfg), &mut rng)?)
}

/// Everything the network reads from one scene, in the tape's precision.
pub struct SceneInputs<T: Scalar> {
    pub images: Vec<Tensor<T>>,
    pub geometry: CameraGeometry<T>,
    pub pillars: PillarBuffer,
}

impl<T: Scalar> SceneInputs<T> {
    pub fn new(scene: &SceneRecord, cfg: &ModelConfig) -> Result<Self> {
        let geometry = CameraGeometry::new(&scene.rig, cfg)?;
        let pillars = pillarize(&scene.cloud, &cfg.grid, (cfg.z_min, cfg.z_max), cfg.max_points_per_pillar);
        Ok(SceneInputs { images: scene.images.iter().map(Tensor::cast).collect(), geometry, pillars })
    }
}

pub struct Forward {
    pub camera_bev: Var,
    pub fused: Var,
    pub heat: Var,
    pub reg: Var,
}

/// Stage-one forward pass. `camera_bev` substitutes a precomputed camera map.
pub fn forward<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound,
    inputs: &SceneInputs<T>,
    cfg: &ModelConfig,
    camera_bev: Option<&Tensor<T>>,
) -> Result<Forward> {
    let cam = match camera_bev {
        Some(t) => tape.constant(t.clone())?,
        None => cvt::camera_bev(tape, p, &inputs.images, &inputs.geometry, cfg)?,
    };
    let lidar = if cfg.camera_only {
        None
    } else {
        let raw = pillars::pillar_bev(tape, p, &inputs.pillars, &cfg.grid, cfg.pillar_channels)?;
        Some(pillars::lidar_bev_upscale(tape, p, raw)?)
    };
    let fused = head::fuse(tape, p, cam, lidar, cfg.camera_only)?;
    let out = center_head(tape, p, fused)?;
    Ok(Forward { camera_bev: cam, fused, heat: out.heat, reg: out.reg })
}

/// Camera BEV map evaluated without gradients.
pub fn camera_bev_value<T: Scalar>(params: &ParamStore<T>, inputs: &SceneInputs<T>, cfg: &ModelConfig) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    let p = params.bind(&tape, |_| false)?;
    let v = cvt::camera_bev(&tape, &p, &inputs.images, &inputs.geometry, cfg)?;
    Ok(tape.snapshot(v))
}

/// Ground truth rendered for training.
pub struct SceneTargets<T: Scalar> {
    pub heatmap: Tensor<T>,
    pub regression: Tensor<T>,
    pub mask: Vec<bool>,
    pub boxes: Vec<Box3D>,
}

impl<T: Scalar> SceneTargets<T> {
    pub fn new(boxes: &[Box3D], cfg: &ModelConfig) -> Self {
        let Targets { heatmap, regression, mask, .. } = render_targets(boxes, &cfg.grid, cfg.num_classes);
        SceneTargets { heatmap: heatmap.cast(), regression: regression.cast(), mask, boxes: boxes.to_vec() }
    }
}

pub struct SampleLoss {
    pub total: Var,
    pub focal: f64,
    pub regression: f64,
    pub refine: f64,
}

/// Refinement proposals: confident stage-one peaks plus every ground truth.
pub fn training_proposals<T: Scalar>(tape: &Tape<T>, fwd: &Forward, gts: &[Box3D], cfg: &ModelConfig, train: &TrainConfig) -> Vec<Box3D> {
    let heat = tape.value(fwd.heat);
    let reg = tape.value(fwd.reg);
    let mut rois = detect_decode(&heat, &reg, &cfg.grid, train.proposal_threshold, train.proposals);
    rois.retain(|b| b.size.iter().all(|s| s.is_finite() && *s > 0.0) && b.center.iter().all(|v| v.is_finite()));
    rois.extend(gts.iter().copied());
    rois
}

/// Weighted sum of both stages' losses. `rois` defaults to
/// [`training_proposals`].
pub fn sample_loss<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound,
    fwd: &Forward,
    targets: &SceneTargets<T>,
    cfg: &ModelConfig,
    train: &TrainConfig,
    rois: Option<&[Box3D]>,
) -> Result<SampleLoss> {
    let s1 = compute_loss(tape, fwd.heat, fwd.reg, &targets.heatmap, &targets.regression, &targets.mask, train.reg_weight)?;
    let proposals = match rois {
        Some(r) => r.to_vec(),
        None => training_proposals(tape, fwd, &targets.boxes, cfg, train),
    };
    let (total, refine) = if proposals.is_empty() || train.stage2_weight == 0.0 {
        (s1.total, 0.0)
    } else {
        let out = refine_forward(tape, p, fwd.fused, &proposals, &cfg.grid)?;
        let rt = refine_targets(&proposals, &targets.boxes, train.proposal_match_radius);
        let l2 = refine_loss(tape, &out, &rt)?;
        let refine = tape.value(l2).item().as_f64();
        (tape.add(s1.total, tape.scale(l2, T::lit(train.stage2_weight))?)?, refine)
    };
    Ok(SampleLoss {
        total,
        focal: tape.value(s1.focal).item().as_f64(),
        regression: tape.value(s1.regression).item().as_f64(),
        refine,
    })
}

/// Both stages and NMS, without gradients.
pub fn detect<T: Scalar>(params: &ParamStore<T>, inputs: &SceneInputs<T>, cfg: &ModelConfig, infer: &InferConfig) -> Result<Vec<Box3D>> {
    let tape = Tape::inference();
    let p = params.bind(&tape, |_| false)?;
    let fwd = forward(&tape, &p, inputs, cfg, None)?;
    let stage1 = {
        let heat = tape.value(fwd.heat);
        let reg = tape.value(fwd.reg);
        detect_decode(&heat, &reg, &cfg.grid, infer.threshold, infer.top_k)
    };
    if stage1.is_empty() {
        return Ok(stage1);
    }
    let out = refine_forward(&tape, &p, fwd.fused, &stage1, &cfg.grid)?;
    let refined = apply_refinement(&stage1, &tape.value(out.iou), &tape.value(out.delta));
    Ok(rotated_nms(&refined, infer.nms_iou))
}
