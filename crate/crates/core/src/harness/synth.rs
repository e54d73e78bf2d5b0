//! Seeded synthetic scenes: car-sized boxes on a ground plane, a LiDAR-like
//! point cloud, and flat-shaded camera renderings.

use std::f64::consts::PI;
use std::path::Path;

use cvcp_numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::Config;
use super::predictions::{self, Record};
use super::scene::SceneRecord;
use crate::camgeo::{Camera, CameraRig, Vec3};
use crate::error::{Error, Result};
use crate::eval::geometry::bev_iou;
use crate::head::boxes::Box3D;
use crate::pillars::PointCloud;

const BACKGROUND: [f32; 3] = [0.35, 0.4, 0.45];
const PALETTE: [[f32; 3]; 4] = [[0.95, 0.2, 0.15], [0.15, 0.8, 0.25], [0.2, 0.35, 0.95], [0.9, 0.85, 0.1]];
const MAX_ATTEMPTS: usize = 200;

/// Independent per-scene seed.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

pub fn class_color(class_id: usize) -> [f32; 3] {
    PALETTE[class_id % PALETTE.len()]
}

fn sample_boxes(rng: &mut ChaCha8Rng, cfg: &Config) -> Vec<Box3D> {
    let d = &cfg.data;
    let g = &cfg.model.grid;
    let n = rng.random_range(d.min_boxes..=d.max_boxes);
    let mut boxes: Vec<Box3D> = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..MAX_ATTEMPTS {
            let x = rng.random_range(g.x_min + d.edge_margin..g.x_max - d.edge_margin);
            let y = rng.random_range(g.y_min + d.edge_margin..g.y_max - d.edge_margin);
            if x.hypot(y) < d.min_range {
                continue;
            }
            let l = rng.random_range(d.length[0]..=d.length[1]);
            let w = rng.random_range(d.width[0]..=d.width[1]);
            let h = rng.random_range(d.height[0]..=d.height[1]);
            let yaw = PI - rng.random_range(0.0..2.0 * PI);
            let class_id = rng.random_range(0..cfg.model.num_classes);
            let b = Box3D::new([x, y, h / 2.0], [l, w, h], yaw, class_id).quantized();
            if boxes.iter().all(|o| bev_iou(o, &b) < d.max_overlap_iou) && g.contains(b.center[0], b.center[1]) {
                boxes.push(b);
                break;
            }
        }
    }
    boxes
}

fn box_to_world(b: &Box3D, local: Vec3) -> Vec3 {
    let (c, s) = b.heading();
    [b.center[0] + local[0] * c - local[1] * s, b.center[1] + local[0] * s + local[1] * c, b.center[2] + local[2]]
}

fn sample_surface(rng: &mut ChaCha8Rng, b: &Box3D, n: usize, out: &mut Vec<[f32; 4]>) {
    let [l, w, h] = b.size;
    // Faces as (axis held fixed, sign, face area).
    let faces = [(2, 1.0, l * w), (2, -1.0, l * w), (0, 1.0, w * h), (0, -1.0, w * h), (1, 1.0, l * h), (1, -1.0, l * h)];
    let total: f64 = faces.iter().map(|f| f.2).sum();
    let half = [l / 2.0, w / 2.0, h / 2.0];
    for _ in 0..n {
        let mut pick = rng.random_range(0.0..total);
        let mut face = faces[faces.len() - 1];
        for f in faces {
            if pick < f.2 {
                face = f;
                break;
            }
            pick -= f.2;
        }
        let mut local = [0.0; 3];
        for (axis, v) in local.iter_mut().enumerate() {
            *v = if axis == face.0 { face.1 * half[axis] } else { rng.random_range(-half[axis]..half[axis]) };
        }
        let p = box_to_world(b, local);
        let intensity = rng.random_range(0.6..=1.0);
        out.push([p[0] as f32, p[1] as f32, p[2] as f32, intensity]);
    }
}

fn sample_cloud(rng: &mut ChaCha8Rng, boxes: &[Box3D], cfg: &Config) -> PointCloud {
    let d = &cfg.data;
    let g = &cfg.model.grid;
    let mut points = Vec::with_capacity(boxes.len() * d.points_per_box + d.ground_points);
    for b in boxes {
        sample_surface(rng, b, d.points_per_box, &mut points);
    }
    let noise = Normal::new(0.0, d.ground_noise).expect("non-negative noise");
    let (cx, cy) = ((g.x_min + g.x_max) / 2.0, (g.y_min + g.y_max) / 2.0);
    let (hx, hy) = (1.1 * (g.x_max - g.x_min) / 2.0, 1.1 * (g.y_max - g.y_min) / 2.0);
    for _ in 0..d.ground_points {
        let x = rng.random_range(cx - hx..cx + hx);
        let y = rng.random_range(cy - hy..cy + hy);
        let z = noise.sample(rng);
        let intensity = rng.random_range(0.0..=0.3);
        points.push([x as f32, y as f32, z as f32, intensity]);
    }
    PointCloud { points }
}

/// Ray parameter of the nearest entry into `b`, if any, for `origin + t·dir`, `t > 0`.
pub fn ray_box_hit(origin: Vec3, dir: Vec3, b: &Box3D) -> Option<f64> {
    let (c, s) = b.heading();
    let rel = [origin[0] - b.center[0], origin[1] - b.center[1], origin[2] - b.center[2]];
    let o = [rel[0] * c + rel[1] * s, -rel[0] * s + rel[1] * c, rel[2]];
    let d = [dir[0] * c + dir[1] * s, -dir[0] * s + dir[1] * c, dir[2]];
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        let half = b.size[axis] / 2.0;
        if d[axis].abs() < 1e-12 {
            if o[axis].abs() > half {
                return None;
            }
            continue;
        }
        let (a, bb) = ((-half - o[axis]) / d[axis], (half - o[axis]) / d[axis]);
        t0 = t0.max(a.min(bb));
        t1 = t1.min(a.max(bb));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Whether `b` is drawn in `cam`: its center must project inside the image.
pub fn box_visible(cam: &Camera, b: &Box3D) -> bool {
    match cam.project_point(&b.center) {
        Ok((u, v, _)) => u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64,
        Err(_) => false,
    }
}

/// `[3×H×W]` image and a per-pixel box index mask (`-1` for background).
pub fn render(cam: &Camera, boxes: &[Box3D]) -> (Tensor<f32>, Vec<i32>) {
    let (h, w) = (cam.height, cam.width);
    let visible: Vec<usize> = (0..boxes.len()).filter(|&i| box_visible(cam, &boxes[i])).collect();
    let origin = cam.center();
    let mut img = vec![0.0f32; 3 * h * w];
    let mut ids = vec![-1i32; h * w];
    for r in 0..h {
        for c in 0..w {
            let dir = cam.unproject_direction(c as f64 + 0.5, r as f64 + 0.5);
            let mut best: Option<(f64, usize)> = None;
            for &i in &visible {
                if let Some(t) = ray_box_hit(origin, dir, &boxes[i]) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                }
            }
            let px = r * w + c;
            let color = match best {
                Some((t, i)) => {
                    ids[px] = i as i32;
                    let shade = (5.0 / t).min(1.0) as f32;
                    class_color(boxes[i].class_id).map(|v| v * shade)
                }
                None => BACKGROUND,
            };
            for ch in 0..3 {
                img[ch * h * w + px] = color[ch];
            }
        }
    }
    (Tensor::new([3, h, w], img).expect("sized"), ids)
}

pub fn generate_scene(id: &str, seed: u64, cfg: &Config) -> Result<SceneRecord> {
    let m = &cfg.model;
    let rig = CameraRig::ring(m.num_cameras, m.image_width, m.image_height, cfg.data.focal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = sample_boxes(&mut rng, cfg);
    let cloud = sample_cloud(&mut rng, &boxes, cfg);
    let images = rig.cameras.iter().map(|cam| render(cam, &boxes).0).collect();
    Ok(SceneRecord { id: id.to_string(), rig, images, cloud, boxes })
}

pub fn generate_dataset(cfg: &Config, count: usize, seed: u64) -> Result<Vec<SceneRecord>> {
    (0..count).map(|i| generate_scene(&scene_id(i), scene_seed(seed, i as u64), cfg)).collect()
}

pub fn gt_records(scenes: &[SceneRecord]) -> Vec<Record> {
    scenes.iter().flat_map(|s| s.boxes.iter().map(|b| Record { scene: s.id.clone(), det: *b })).collect()
}

/// Writes `out/scene_XXXXX/…` for every scene plus `out/gt.txt`.
pub fn write_dataset(scenes: &[SceneRecord], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for s in scenes {
        s.save(&out.join(&s.id))?;
    }
    predictions::save(&out.join("gt.txt"), &gt_records(scenes))
}
