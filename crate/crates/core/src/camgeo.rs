//! Pinhole cameras, ego-frame rays, and the calibration-derived embeddings.
//!
//! Ego frame: x forward, y left, z up (meters). Camera frame: x right,
//! y down, z forward.

use cvcp_numerics::{Bound, Init, ParamSpec, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::SpecList;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Height of every synthetic camera above the ground plane.
pub const MOUNT_HEIGHT: f64 = 1.6;

/// Width of the raw per-pixel geometric descriptor: ray (3) and center (3).
pub const DESCRIPTOR_DIM: usize = 6;

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

pub fn mat_t_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| m[0][i] * v[0] + m[1][i] * v[1] + m[2][i] * v[2])
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Rotation by `angle` about +z.
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Geometry(format!("focal lengths must be positive and finite, got {self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }
}

/// Camera-from-ego rigid transform: `p_cam = R·p_ego + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = CameraPose { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if !(worst <= 1e-9 && (det - 1.0).abs() <= 1e-9) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Geometry(format!(
                "camera rotation is not a proper rotation (orthogonality error {worst:e}, det {det})"
            )));
        }
        Ok(())
    }

    /// A level camera at ego-frame position `center` looking along heading `yaw`.
    pub fn looking(yaw: f64, center: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
        let rc = mat_vec(&rotation, &center);
        CameraPose { rotation, translation: [-rc[0], -rc[1], -rc[2]] }
    }

    /// Optical center in the ego frame, `−Rᵀ·t`.
    pub fn center(&self) -> Vec3 {
        let c = mat_t_vec(&self.rotation, &self.translation);
        [-c[0], -c[1], -c[2]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Pixel coordinates and depth of an ego-frame point.
    pub fn project_point(&self, p: &Vec3) -> Result<(f64, f64, f64)> {
        let pc = mat_vec(&self.pose.rotation, p);
        let pc = [pc[0] + self.pose.translation[0], pc[1] + self.pose.translation[1], pc[2] + self.pose.translation[2]];
        let depth = pc[2];
        if depth <= 1e-6 {
            return Err(Error::Geometry(format!("point {p:?} is behind the camera (depth {depth})")));
        }
        let k = &self.intrinsics;
        Ok((k.fx * pc[0] / depth + k.cx, k.fy * pc[1] / depth + k.cy, depth))
    }

    /// Unit ego-frame direction of the ray through pixel `(u, v)`.
    pub fn unproject_direction(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        let d = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
        let n = norm(&d);
        mat_t_vec(&self.pose.rotation, &[d[0] / n, d[1] / n, d[2] / n])
    }

    pub fn center(&self) -> Vec3 {
        self.pose.center()
    }

    /// Row-major `[H_f·W_f × 6]` descriptors sampled at feature-cell centers
    /// of a map with the given stride.
    pub fn geometric_descriptor(&self, stride: usize, hf: usize, wf: usize) -> Vec<[f64; DESCRIPTOR_DIM]> {
        let c = self.center();
        let s = stride as f64;
        let mut out = Vec::with_capacity(hf * wf);
        for i in 0..hf {
            for j in 0..wf {
                let r = self.unproject_direction((j as f64 + 0.5) * s, (i as f64 + 0.5) * s);
                out.push([r[0], r[1], r[2], c[0], c[1], c[2]]);
            }
        }
        out
    }

    pub fn descriptor_tensor<T: Scalar>(&self, stride: usize, hf: usize, wf: usize) -> Tensor<T> {
        let rows = self.geometric_descriptor(stride, hf, wf);
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::lit(v))).collect();
        Tensor::new([hf * wf, DESCRIPTOR_DIM], data).expect("descriptor rows have fixed width")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        let rig = CameraRig { cameras };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::Geometry("camera rig needs at least one camera".into()));
        }
        for (i, cam) in self.cameras.iter().enumerate() {
            if cam.width == 0 || cam.height == 0 {
                return Err(Error::Geometry(format!("camera {i} has an empty image")));
            }
            cam.intrinsics.validate()?;
            cam.pose.validate()?;
        }
        Ok(())
    }

    /// `n` level cameras evenly spaced in heading, the first facing forward,
    /// with principal points at the image centers.
    pub fn ring(n: usize, width: usize, height: usize, focal: f64) -> Result<Self> {
        let cameras = (0..n)
            .map(|i| {
                let yaw = std::f64::consts::TAU * i as f64 / n as f64;
                Ok(Camera {
                    intrinsics: CameraIntrinsics::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0)?,
                    pose: CameraPose::looking(yaw, [0.0, 0.0, MOUNT_HEIGHT]),
                    width,
                    height,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CameraRig::new(cameras)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

pub const BEV_POS: &str = "cam.bev_pos";

pub fn embed_name(scale: usize) -> String {
    format!("cam.embed{scale}")
}

/// Parameters: one descriptor projection per feature scale and the BEV query embedding.
pub fn param_specs(specs: &mut SpecList, scales: usize, d: usize, hq: usize, wq: usize) {
    for s in 0..scales {
        specs.push(ParamSpec::new(format!("{}.w", embed_name(s)), [DESCRIPTOR_DIM, d], Init::Normal(1.0 / (DESCRIPTOR_DIM as f64).sqrt())));
    }
    specs.push(ParamSpec::new(BEV_POS, [d, hq, wq], Init::Normal(1.0)));
}

/// Learned camera-aware embedding `[N×D]` from descriptors `[N×6]`. No bias:
/// a shift shared by every key cancels in the attention softmax.
pub fn camera_embedding<T: Scalar>(tape: &Tape<T>, p: &Bound, scale: usize, descriptor: Var) -> Result<Var> {
    Ok(tape.matmul(descriptor, p.var(&format!("{}.w", embed_name(scale)))?)?)
}

/// The BEV query embedding laid out as tokens, `[H_q·W_q × D]`.
pub fn bev_positional_tokens<T: Scalar>(tape: &Tape<T>, p: &Bound) -> Result<Var> {
    let pos = p.var(BEV_POS)?;
    let shape = tape.shape(pos);
    let flat = tape.reshape(pos, &[shape[0], shape[1] * shape[2]])?;
    Ok(tape.transpose(flat)?)
}
