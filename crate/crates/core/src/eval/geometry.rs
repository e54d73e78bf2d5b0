//! Rotated-rectangle intersection by convex clipping.

use crate::head::boxes::Box3D;

pub type Point = [f64; 2];

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        twice += p[0] * q[1] - q[0] * p[1];
    }
    twice.abs() / 2.0
}

/// Sutherland–Hodgman: `subject` clipped by the convex counter-clockwise `clip`.
pub fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (e0, e1) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(e0, e1, cur), cross(e0, e1, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(intersect(prev, cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    out
}

/// Point on segment `p→q` where the signed distance crosses zero.
fn intersect(p: Point, q: Point, dp: f64, dq: f64) -> Point {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn same_footprint(a: &Box3D, b: &Box3D) -> bool {
    a.center[..2] == b.center[..2] && a.size[..2] == b.size[..2] && a.yaw == b.yaw
}

pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    if same_footprint(a, b) {
        return a.size[0] * a.size[1];
    }
    let reach = |x: &Box3D| x.size[0].hypot(x.size[1]) / 2.0;
    if a.bev_distance(b) > reach(a) + reach(b) {
        return 0.0;
    }
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()))
}

pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    let union = a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn z_overlap(a: &Box3D, b: &Box3D) -> f64 {
    if a.center[2] == b.center[2] && a.size[2] == b.size[2] {
        return a.size[2];
    }
    let ((a0, a1), (b0, b1)) = (a.z_range(), b.z_range());
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b) * z_overlap(a, b);
    let vol = |x: &Box3D| x.size[0] * x.size[1] * x.size[2];
    let union = vol(a) + vol(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
