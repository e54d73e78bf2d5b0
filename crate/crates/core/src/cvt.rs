//! Camera branch: strided image encoder with two taps, cross-view attention
//! from BEV queries into every camera's features, and the BEV decoder.

use cvcp_numerics::{Bound, Init, Scalar, Tape, Tensor, Var};

use crate::camgeo::{self, CameraRig};
use crate::error::{Error, Result};
use crate::harness::config::ModelConfig;
use crate::layers::{self, SpecList};

/// Feature strides of the two encoder taps, coarse first in attention order.
pub const STRIDES: [usize; 2] = [4, 8];

/// One camera's feature taps: `[C×H/4×W/4]` then `[C×H/8×W/8]`.
pub struct MultiScaleFeatures {
    pub taps: [Var; 2],
}

/// Per-camera, per-scale descriptors `[H_f·W_f × 6]` fed to the camera embedding.
pub struct CameraGeometry<T: Scalar> {
    pub descriptors: Vec<[Tensor<T>; 2]>,
}

impl<T: Scalar> CameraGeometry<T> {
    pub fn new(rig: &CameraRig, cfg: &ModelConfig) -> Result<Self> {
        check_rig(rig, cfg)?;
        let descriptors = rig
            .cameras
            .iter()
            .map(|cam| STRIDES.map(|s| cam.descriptor_tensor(s, cfg.image_height / s, cfg.image_width / s)))
            .collect();
        Ok(CameraGeometry { descriptors })
    }
}

pub fn check_rig(rig: &CameraRig, cfg: &ModelConfig) -> Result<()> {
    rig.validate()?;
    if rig.len() != cfg.num_cameras {
        return Err(Error::Config(format!("scene has {} cameras, model expects {}", rig.len(), cfg.num_cameras)));
    }
    for (i, cam) in rig.cameras.iter().enumerate() {
        if (cam.height, cam.width) != (cfg.image_height, cfg.image_width) {
            return Err(Error::Config(format!(
                "camera {i} image is {}×{}, model expects {}×{}",
                cam.height, cam.width, cfg.image_height, cfg.image_width
            )));
        }
    }
    Ok(())
}

fn attn_name(layer: usize) -> String {
    format!("cvt.attn{layer}")
}

pub fn param_specs(specs: &mut SpecList, cfg: &ModelConfig) {
    let (c0, c) = (cfg.image_channels_stem, cfg.image_channels);
    specs.conv("cvt.enc1", 3, c0, 3);
    specs.conv("cvt.enc2", c0, c, 3);
    specs.conv("cvt.enc3", c, c, 3);
    specs.conv("cvt.enc4", c, c, 3);
    let d = cfg.embed_dim;
    camgeo::param_specs(specs, STRIDES.len(), d, cfg.query_height, cfg.query_width);
    let proj = Init::Normal(1.0 / (d as f64).sqrt());
    for l in 0..STRIDES.len() {
        let n = attn_name(l);
        specs.layer_norm(&format!("{n}.ln_q"), d);
        for m in ["q", "k", "v"] {
            specs.push(cvcp_numerics::ParamSpec::new(format!("{n}.w{m}"), [d, d], proj));
        }
        specs.layer_norm(&format!("{n}.ln_ff"), d);
        specs.linear(&format!("{n}.ff1"), d, cfg.ff_hidden, Init::HeNormal { fan_in: d });
        specs.linear(&format!("{n}.ff2"), cfg.ff_hidden, d, Init::HeNormal { fan_in: cfg.ff_hidden });
    }
    let mut cin = d;
    for b in 0..cfg.upsample_blocks() {
        specs.conv(&format!("cvt.dec{b}"), cin, cfg.camera_bev_channels, 3);
        cin = cfg.camera_bev_channels;
    }
}

pub fn encode_image<T: Scalar>(tape: &Tape<T>, p: &Bound, image: Var, cfg: &ModelConfig) -> Result<MultiScaleFeatures> {
    let s = tape.shape(image);
    if s != [3, cfg.image_height, cfg.image_width] {
        return Err(Error::Config(format!("image shape {s:?}, expected [3, {}, {}]", cfg.image_height, cfg.image_width)));
    }
    let x = layers::conv3_relu(tape, p, "cvt.enc1", image, 2)?;
    let x = layers::conv3_relu(tape, p, "cvt.enc2", x, 2)?;
    let tap4 = layers::conv3_relu(tape, p, "cvt.enc3", x, 1)?;
    let tap8 = layers::conv3_relu(tape, p, "cvt.enc4", tap4, 2)?;
    Ok(MultiScaleFeatures { taps: [tap4, tap8] })
}

/// `[C×H×W]` → `[H·W × C]`.
fn tokens<T: Scalar>(tape: &Tape<T>, fmap: Var) -> Result<Var> {
    let s = tape.shape(fmap);
    let flat = tape.reshape(fmap, &[s[0], s[1] * s[2]])?;
    Ok(tape.transpose(flat)?)
}

/// Keys and values for one scale over the union of all cameras.
pub struct KeyValues {
    /// `[N_keys × D]` features plus camera embedding.
    pub keys: Var,
    /// `[N_keys × D]` features.
    pub values: Var,
}

pub fn gather_keys<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound,
    feats: &[MultiScaleFeatures],
    geometry: &CameraGeometry<T>,
    scale: usize,
) -> Result<KeyValues> {
    let mut keys = Vec::with_capacity(feats.len());
    let mut values = Vec::with_capacity(feats.len());
    for (f, desc) in feats.iter().zip(&geometry.descriptors) {
        let v = tokens(tape, f.taps[scale])?;
        let d = tape.constant(desc[scale].clone())?;
        let emb = camgeo::camera_embedding(tape, p, scale, d)?;
        let (vs, es) = (tape.shape(v), tape.shape(emb));
        if vs != es {
            return Err(Error::Config(format!("feature tokens {vs:?} and camera embedding {es:?} widths differ")));
        }
        keys.push(tape.add(v, emb)?);
        values.push(v);
    }
    Ok(KeyValues { keys: tape.concat(&keys)?, values: tape.concat(&values)? })
}

/// Attention weights `[N_q × N_keys]` and the attended values.
pub fn attend<T: Scalar>(tape: &Tape<T>, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let d = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let logits = tape.scale(tape.matmul(q, kt)?, T::lit(1.0 / (d as f64).sqrt()))?;
    let a = tape.softmax(logits, 1)?;
    Ok((a, tape.matmul(a, v)?))
}

/// One pre-norm cross-attention layer with a residual feed-forward block.
pub fn cross_view_attention<T: Scalar>(tape: &Tape<T>, p: &Bound, layer: usize, x: Var, pos: Var, kv: &KeyValues) -> Result<Var> {
    let n = attn_name(layer);
    let (xs, ks) = (tape.shape(x), tape.shape(kv.keys));
    if xs[1] != ks[1] {
        return Err(Error::Config(format!("query width {} differs from key width {}", xs[1], ks[1])));
    }
    let qin = layers::layer_norm(tape, p, &format!("{n}.ln_q"), tape.add(x, pos)?)?;
    let q = tape.matmul(qin, p.var(&format!("{n}.wq"))?)?;
    let k = tape.matmul(kv.keys, p.var(&format!("{n}.wk"))?)?;
    let v = tape.matmul(kv.values, p.var(&format!("{n}.wv"))?)?;
    let (_, attended) = attend(tape, q, k, v)?;
    let y = tape.add(x, attended)?;
    let h = layers::layer_norm(tape, p, &format!("{n}.ln_ff"), y)?;
    let h = tape.relu(layers::linear(tape, p, &format!("{n}.ff1"), h)?)?;
    let h = layers::linear(tape, p, &format!("{n}.ff2"), h)?;
    Ok(tape.add(y, h)?)
}

/// Query tokens `[H_q·W_q × D]` → `[C_cam×H_bev×W_bev]`.
pub fn decode_bev<T: Scalar>(tape: &Tape<T>, p: &Bound, x: Var, cfg: &ModelConfig) -> Result<Var> {
    let (hq, wq) = (cfg.query_height, cfg.query_width);
    let d = tape.shape(x)[1];
    let mut m = tape.reshape(tape.transpose(x)?, &[d, hq, wq])?;
    for b in 0..cfg.upsample_blocks() {
        m = tape.upsample_nearest2x(m)?;
        m = layers::conv3_relu(tape, p, &format!("cvt.dec{b}"), m, 1)?;
    }
    Ok(m)
}

/// Images (one `[3×H×W]` constant per camera) → camera BEV map.
pub fn camera_bev<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound,
    images: &[Tensor<T>],
    geometry: &CameraGeometry<T>,
    cfg: &ModelConfig,
) -> Result<Var> {
    if images.len() != geometry.descriptors.len() {
        return Err(Error::Config(format!("{} images for {} cameras", images.len(), geometry.descriptors.len())));
    }
    let feats = images
        .iter()
        .map(|im| {
            let v = tape.constant(im.clone())?;
            encode_image(tape, p, v, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let pos = camgeo::bev_positional_tokens(tape, p)?;
    let mut x = pos;
    // Coarse (stride 8) first, then fine.
    for (layer, scale) in [1usize, 0].into_iter().enumerate() {
        let kv = gather_keys(tape, p, &feats, geometry, scale)?;
        x = cross_view_attention(tape, p, layer, x, pos, &kv)?;
    }
    decode_bev(tape, p, x, cfg)
}
