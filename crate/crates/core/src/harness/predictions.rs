//! Line-oriented detection files:
//! `scene class x y z l w h yaw vx vy score`, 9 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::head::boxes::Box3D;

/// A box tagged with its scene id.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub scene: String,
    pub det: Box3D,
}

fn num(v: f64) -> String {
    format!("{:.8e}", v as f32)
}

pub fn format_records(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        let b = &r.det;
        let fields = [b.center[0], b.center[1], b.center[2], b.size[0], b.size[1], b.size[2], b.yaw, b.velocity[0], b.velocity[1], b.score];
        let _ = write!(out, "{} {}", r.scene, b.class_id);
        for f in fields {
            out.push(' ');
            out.push_str(&num(f));
        }
        out.push('\n');
    }
    out
}

pub fn parse_records(text: &str, origin: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 12 {
            return Err(Error::parse(origin, line_no, format!("expected 12 fields, found {}", toks.len())));
        }
        let class_id = toks[1].parse::<usize>().map_err(|e| Error::parse(origin, line_no, format!("class id {:?}: {e}", toks[1])))?;
        let mut v = [0.0f64; 10];
        for (k, tok) in toks[2..].iter().enumerate() {
            let x = tok.parse::<f32>().map_err(|e| Error::parse(origin, line_no, format!("field {} {tok:?}: {e}", k + 3)))?;
            if !x.is_finite() {
                return Err(Error::parse(origin, line_no, format!("field {} is not finite", k + 3)));
            }
            v[k] = x as f64;
        }
        let det = Box3D {
            center: [v[0], v[1], v[2]],
            size: [v[3], v[4], v[5]],
            yaw: v[6],
            velocity: [v[7], v[8]],
            class_id,
            score: v[9],
        };
        det.validate().map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        out.push(Record { scene: toks[0].to_string(), det });
    }
    Ok(out)
}

pub fn save(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::write(path, format_records(records)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, &path.display().to_string())
}
