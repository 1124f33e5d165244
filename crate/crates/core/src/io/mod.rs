//! File formats and the on-disk scene layout.
//!
//! A scene directory holds:
//!
//! ```text
//! cloud.ply
//! frames/frame_000010.json        camera (intrinsics + world-to-camera pose)
//! frames/frame_000010.depth.png   16-bit depth, millimeters
//! gt.json, classes.json           optional annotations
//! class_features.bin              optional DPFV class embeddings, ascending class id
//! ```

pub mod depth;
pub mod formats;
pub mod fvec;
pub mod ply;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::projection::FrameMasks;
use crate::scene::{CameraFrame, ClassTable, FeatureVector, Scene};

pub use formats::{load_proposals, save_proposals};

pub const CLOUD_FILE: &str = "cloud.ply";
pub const FRAMES_DIR: &str = "frames";
pub const GT_FILE: &str = "gt.json";
pub const CLASSES_FILE: &str = "classes.json";
pub const CLASS_FEATURES_FILE: &str = "class_features.bin";

pub fn camera_path(dir: &Path, frame_id: u32) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("frame_{frame_id:06}.json"))
}

pub fn depth_path(dir: &Path, frame_id: u32) -> PathBuf {
    dir.join(FRAMES_DIR)
        .join(format!("frame_{frame_id:06}.depth.png"))
}

pub fn masks_path(dir: &Path, frame_id: u32) -> PathBuf {
    dir.join(format!("frame_{frame_id:06}.json"))
}

fn list_json(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    out.sort();
    Ok(out)
}

/// Loads a scene directory. Annotations are attached when both `gt.json`
/// and `classes.json` exist.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    let cloud = ply::read_ply(&dir.join(CLOUD_FILE))?;
    let mut frames = Vec::new();
    for cam in list_json(&dir.join(FRAMES_DIR))? {
        let depth_file = cam.with_extension("depth.png");
        let depth = depth::read_depth_png(&depth_file)?;
        frames.push(formats::load_camera(&cam, depth)?);
    }
    frames.sort_by_key(CameraFrame::frame_id);
    if let Some(w) = frames.windows(2).find(|w| w[0].frame_id() == w[1].frame_id()) {
        return Err(Error::InvalidValue(format!("duplicate frame id {}", w[0].frame_id())));
    }
    let (gt_path, classes_path) = (dir.join(GT_FILE), dir.join(CLASSES_FILE));
    let ground_truth = if gt_path.exists() && classes_path.exists() {
        let classes = formats::load_class_table(&classes_path)?;
        let gt = formats::load_ground_truth(&gt_path, classes)?;
        if gt.point_count() != cloud.len() {
            return Err(Error::DimensionMismatch {
                expected: cloud.len(),
                found: gt.point_count(),
            });
        }
        Some(gt)
    } else {
        None
    };
    Ok(Scene {
        cloud,
        frames,
        ground_truth,
    })
}

pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir.join(FRAMES_DIR)).map_err(|e| Error::io(dir, e))?;
    ply::write_ply(&dir.join(CLOUD_FILE), &scene.cloud, None)?;
    for f in &scene.frames {
        formats::write_text(&camera_path(dir, f.frame_id()), &formats::camera_to_json(f))?;
        depth::write_depth_png(&depth_path(dir, f.frame_id()), f.depth())?;
    }
    if let Some(gt) = &scene.ground_truth {
        formats::save_ground_truth(gt, &dir.join(GT_FILE))?;
        formats::save_class_table(gt.classes(), &dir.join(CLASSES_FILE))?;
    }
    Ok(())
}

pub fn save_class_features(dir: &Path, features: &BTreeMap<u32, FeatureVector>) -> Result<()> {
    let dim = features.values().next().map_or(0, FeatureVector::dim);
    let v: Vec<FeatureVector> = features.values().cloned().collect();
    fvec::write_features(&dir.join(CLASS_FEATURES_FILE), &v, dim)
}

pub fn load_class_features(path: &Path, classes: &ClassTable) -> Result<BTreeMap<u32, FeatureVector>> {
    let (_, v) = fvec::read_features(path)?;
    formats::class_features_in_order(classes, v)
}

/// Loads every per-frame mask file in a directory, ordered by frame id.
pub fn load_masks_dir(dir: &Path) -> Result<Vec<FrameMasks>> {
    let mut out = list_json(dir)?
        .iter()
        .map(|p| formats::load_frame_masks(p))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|m| m.frame_id);
    Ok(out)
}

pub fn save_masks_dir(dir: &Path, masks: &[FrameMasks]) -> Result<()> {
    for fm in masks {
        formats::write_text(&masks_path(dir, fm.frame_id), &formats::frame_masks_to_json(fm))?;
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
