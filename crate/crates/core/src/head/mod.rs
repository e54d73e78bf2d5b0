//! Fusion of the BEV maps and the center-based detection head.

pub mod boxes;
pub mod decode;
pub mod loss;
pub mod nms;
pub mod refine;
pub mod targets;

use cvcp_numerics::{Bound, Init, Scalar, Tape, Var};

use crate::error::{Error, Result};
use crate::harness::config::ModelConfig;
use crate::layers::{self, SpecList};
use targets::REG_CHANNELS;

pub const HEAT_MIN: f64 = 1e-4;
const OUTPUT_INIT: Init = Init::Normal(0.01);

pub fn param_specs(specs: &mut SpecList, cfg: &ModelConfig) {
    let cin = if cfg.camera_only { cfg.camera_bev_channels } else { cfg.camera_bev_channels + cfg.lidar_channels };
    specs.conv("fuse", cin, cfg.fused_channels, 3);
    let c = cfg.head_channels;
    specs.conv("head.shared", cfg.fused_channels, c, 3);
    specs.conv("head.heat.hidden", c, c, 3);
    specs.conv_init("head.heat.out", c, cfg.num_classes, 1, OUTPUT_INIT, cfg.heatmap_bias);
    specs.conv("head.reg.hidden", c, c, 3);
    specs.conv_init("head.reg.out", c, REG_CHANNELS, 1, OUTPUT_INIT, 0.0);
    refine::param_specs(specs, cfg.fused_channels, cfg.refine_hidden);
}

/// Channel concat of both maps followed by 3×3 conv + relu. With
/// `camera_only` the LiDAR map is ignored even when supplied.
pub fn fuse<T: Scalar>(tape: &Tape<T>, p: &Bound, camera: Var, lidar: Option<Var>, camera_only: bool) -> Result<Var> {
    let input = match (camera_only, lidar) {
        (true, _) => camera,
        (false, Some(l)) => {
            let (cs, ls) = (tape.shape(camera), tape.shape(l));
            if cs[1..] != ls[1..] {
                return Err(Error::Config(format!("camera BEV {cs:?} and LiDAR BEV {ls:?} differ spatially")));
            }
            tape.concat(&[camera, l])?
        }
        (false, None) => return Err(Error::Config("fusion needs a LiDAR map unless camera_only is set".into())),
    };
    layers::conv3_relu(tape, p, "fuse", input, 1)
}

pub struct HeadVars {
    /// `[K×H×W]` in `[1e-4, 1−1e-4]`.
    pub heat: Var,
    /// `[10×H×W]`
    pub reg: Var,
}

pub fn center_head<T: Scalar>(tape: &Tape<T>, p: &Bound, fused: Var) -> Result<HeadVars> {
    let shared = layers::conv3_relu(tape, p, "head.shared", fused, 1)?;
    let h = layers::conv3_relu(tape, p, "head.heat.hidden", shared, 1)?;
    let heat = tape.sigmoid(layers::conv1(tape, p, "head.heat.out", h)?)?;
    let heat = tape.clamp(heat, T::lit(HEAT_MIN), T::lit(1.0 - HEAT_MIN))?;
    let r = layers::conv3_relu(tape, p, "head.reg.hidden", shared, 1)?;
    let reg = layers::conv1(tape, p, "head.reg.out", r)?;
    Ok(HeadVars { heat, reg })
}
