use std::path::Path;

use super::checkpoint::Checkpoint;
use super::config::InferConfig;
use super::predictions::Record;
use super::scene::{load_scenes, SceneRecord};
use crate::error::Result;
use crate::pipeline::{detect, SceneInputs};

pub fn infer_scene(ckpt: &Checkpoint, scene: &SceneRecord, infer: &InferConfig) -> Result<Vec<Record>> {
    infer.validate()?;
    let inputs = SceneInputs::new(scene, &ckpt.config.model)?;
    let dets = detect(&ckpt.params, &inputs, &ckpt.config.model, infer)?;
    Ok(dets.into_iter().map(|det| Record { scene: scene.id.clone(), det }).collect())
}

/// Predictions for one scene or for every scene under a dataset directory.
pub fn infer_path(ckpt: &Checkpoint, path: &Path, infer: &InferConfig) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for s in load_scenes(path)? {
        out.extend(infer_scene(ckpt, &s, infer)?);
    }
    Ok(out)
}
