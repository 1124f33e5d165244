//! JSON file schemas: proposals, ground truth, class tables, cameras,
//! per-frame 2D masks and crop requests.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mask::InstanceMask;
use crate::projection::{CropBox, FrameMasks, Mask2D};
use crate::scene::{
    CameraFrame, ClassTable, DepthMap, FeatureVector, GroundTruth, GtInstance, Intrinsics, Proposal,
    ProposalSet, Source,
};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRecord {
    id: String,
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point_indices: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rle: Option<Vec<u64>>,
    #[serde(default)]
    feature: Option<Vec<f32>>,
    #[serde(default)]
    score: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames_seen: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point_indices: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rle: Option<Vec<u64>>,
    class_id: u32,
}

/// Picks the shorter of the explicit and run-length encodings.
fn encode_mask(mask: &InstanceMask) -> (Option<Vec<u64>>, Option<Vec<u64>>) {
    let runs = mask.to_runs();
    if runs.len() * 2 < mask.len() {
        let flat = runs.iter().flat_map(|&(s, l)| [s as u64, l as u64]).collect();
        (None, Some(flat))
    } else {
        (Some(mask.indices().iter().map(|&i| i as u64).collect()), None)
    }
}

fn decode_mask(
    id: &str,
    indices: Option<Vec<u64>>,
    rle: Option<Vec<u64>>,
    n: u64,
) -> Result<InstanceMask> {
    let indices: Vec<u64> = match (indices, rle) {
        (Some(idx), None) => idx,
        (None, Some(rle)) => {
            if rle.len() % 2 != 0 {
                return Err(Error::InvalidValue(format!(
                    "proposal {id:?}: rle has odd length"
                )));
            }
            let mut out = Vec::new();
            for (k, pair) in rle.chunks_exact(2).enumerate() {
                if pair[1] == 0 {
                    return Err(Error::InvalidValue(format!(
                        "proposal {id:?}: rle run {k} is empty"
                    )));
                }
                let end = pair[0].checked_add(pair[1]).filter(|&e| e <= n).ok_or(
                    Error::IndexOutOfRange {
                        index: pair[0].saturating_add(pair[1]) - 1,
                        limit: n,
                    },
                )?;
                out.extend(pair[0]..end);
            }
            out
        }
        _ => {
            return Err(Error::InvalidValue(format!(
                "proposal {id:?}: exactly one of point_indices or rle is required"
            )))
        }
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, limit: n });
    }
    InstanceMask::new(indices.into_iter().map(|i| i as u32).collect())
}

fn header_u64(obj: &serde_json::Map<String, Value>, key: &str) -> Result<u64> {
    obj.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::MalformedHeader(format!("{key:?} missing or not an unsigned integer")))
}

fn parse_header(text: &str, path: &Path, list_key: &str) -> Result<(u64, Option<u64>, Value)> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
    let Value::Object(mut obj) = v else {
        return Err(Error::MalformedHeader("top level is not an object".into()));
    };
    let n = header_u64(&obj, "num_points")?;
    if n == 0 || n > u32::MAX as u64 + 1 {
        return Err(Error::MalformedHeader(format!("num_points {n} out of range")));
    }
    let dim = match obj.get("feature_dim") {
        None | Some(Value::Null) => None,
        Some(_) => Some(header_u64(&obj, "feature_dim")?),
    };
    let list = obj
        .remove(list_key)
        .filter(Value::is_array)
        .ok_or_else(|| Error::MalformedHeader(format!("{list_key:?} missing or not a list")))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "num_points" | "feature_dim") {
            return Err(Error::MalformedHeader(format!("unknown key {key:?}")));
        }
    }
    Ok((n, dim, list))
}

/// A proposal together with the memory-bank observation count, when the
/// file is a fusion checkpoint.
pub type CheckpointEntry = (Proposal, Option<u32>);

pub fn proposals_to_json(set: &ProposalSet) -> String {
    proposals_to_json_with(set, &[])
}

/// `frames_seen` is emitted per proposal when non-empty (bank checkpoints).
pub fn proposals_to_json_with(set: &ProposalSet, frames_seen: &[u32]) -> String {
    let records: Vec<ProposalRecord> = set
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (point_indices, rle) = encode_mask(&p.mask);
            ProposalRecord {
                id: p.id.clone(),
                source: p.source,
                point_indices,
                rle,
                feature: p.feature.as_ref().map(|f| f.values().to_vec()),
                score: p.score,
                frames_seen: frames_seen.get(k).copied(),
            }
        })
        .collect();
    let doc = serde_json::json!({
        "num_points": set.point_count(),
        "feature_dim": set.feature_dim(),
        "proposals": records,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("proposal json");
    s.push('\n');
    s
}

pub fn proposals_from_json(text: &str, path: &Path) -> Result<ProposalSet> {
    Ok(checkpoint_from_json(text, path)?.0)
}

pub fn checkpoint_from_json(text: &str, path: &Path) -> Result<(ProposalSet, Vec<Option<u32>>)> {
    let (n, dim, list) = parse_header(text, path, "proposals")?;
    let records: Vec<ProposalRecord> = serde_json::from_value(list).map_err(|e| Error::json(path, e))?;
    let mut proposals = Vec::with_capacity(records.len());
    let mut seen = Vec::with_capacity(records.len());
    for r in records {
        let mask = decode_mask(&r.id, r.point_indices, r.rle, n)?;
        let feature = match r.feature {
            None => None,
            Some(values) => {
                if let Some(d) = dim {
                    if values.len() as u64 != d {
                        return Err(Error::DimensionMismatch {
                            expected: d as usize,
                            found: values.len(),
                        });
                    }
                }
                Some(FeatureVector::new(values)?)
            }
        };
        proposals.push(Proposal {
            id: r.id,
            mask,
            feature,
            source: r.source,
            score: r.score,
        });
        seen.push(r.frames_seen);
    }
    Ok((ProposalSet::new(n as usize, proposals)?, seen))
}

pub fn save_proposals(set: &ProposalSet, path: &Path) -> Result<()> {
    write_text(path, &proposals_to_json(set))
}

pub fn load_proposals(path: &Path) -> Result<ProposalSet> {
    proposals_from_json(&read_text(path)?, path)
}

pub fn ground_truth_to_json(gt: &GroundTruth) -> String {
    let records: Vec<GtRecord> = gt
        .instances()
        .iter()
        .map(|g| {
            let (point_indices, rle) = encode_mask(&g.mask);
            GtRecord {
                id: g.id.clone(),
                point_indices,
                rle,
                class_id: g.class_id,
            }
        })
        .collect();
    let doc = serde_json::json!({
        "num_points": gt.point_count(),
        "instances": records,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("gt json");
    s.push('\n');
    s
}

pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    write_text(path, &ground_truth_to_json(gt))
}

pub fn save_class_table(classes: &ClassTable, path: &Path) -> Result<()> {
    write_json(path, classes)
}

pub fn load_class_table(path: &Path) -> Result<ClassTable> {
    read_json(path)
}

pub fn load_ground_truth(path: &Path, classes: ClassTable) -> Result<GroundTruth> {
    let (n, _, list) = parse_header(&read_text(path)?, path, "instances")?;
    let records: Vec<GtRecord> = serde_json::from_value(list).map_err(|e| Error::json(path, e))?;
    let instances = records
        .into_iter()
        .map(|r| {
            Ok(GtInstance {
                mask: decode_mask(&r.id, r.point_indices, r.rle, n)?,
                id: r.id,
                class_id: r.class_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GroundTruth::new(n as usize, instances, classes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr<const R: usize> {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl<const R: usize> MatrixRepr<R> {
    fn row_major(&self) -> Result<Vec<f64>> {
        let flat: Vec<f64> = match self {
            MatrixRepr::Nested(rows) => {
                if rows.len() != R || rows.iter().any(|r| r.len() != R) {
                    return Err(Error::DimensionMismatch {
                        expected: R * R,
                        found: rows.iter().map(Vec::len).sum(),
                    });
                }
                rows.iter().flatten().copied().collect()
            }
            MatrixRepr::Flat(v) => v.clone(),
        };
        if flat.len() != R * R {
            return Err(Error::DimensionMismatch {
                expected: R * R,
                found: flat.len(),
            });
        }
        Ok(flat)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    frame_id: u32,
    width: u32,
    height: u32,
    intrinsics: MatrixRepr<3>,
    extrinsics_world_to_camera: MatrixRepr<4>,
}

pub fn camera_to_json(frame: &CameraFrame) -> String {
    let k = frame.intrinsics().matrix();
    let e = frame.world_to_camera();
    let rec = CameraRecord {
        frame_id: frame.frame_id(),
        width: frame.width(),
        height: frame.height(),
        intrinsics: MatrixRepr::Nested((0..3).map(|r| (0..3).map(|c| k[(r, c)]).collect()).collect()),
        extrinsics_world_to_camera: MatrixRepr::Nested(
            (0..4).map(|r| (0..4).map(|c| e[(r, c)]).collect()).collect(),
        ),
    };
    let mut s = serde_json::to_string_pretty(&rec).expect("camera json");
    s.push('\n');
    s
}

/// Reads a camera JSON and attaches its depth map.
pub fn load_camera(path: &Path, depth: DepthMap) -> Result<CameraFrame> {
    let rec: CameraRecord = read_json(path)?;
    if depth.width() != rec.width || depth.height() != rec.height {
        return Err(Error::DimensionMismatch {
            expected: rec.width as usize * rec.height as usize,
            found: depth.width() as usize * depth.height() as usize,
        });
    }
    let k = rec.intrinsics.row_major()?;
    if k[1] != 0.0 || k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0 {
        return Err(Error::InvalidValue(format!(
            "{}: intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]",
            path.display()
        )));
    }
    let e = rec.extrinsics_world_to_camera.row_major()?;
    let pose = Matrix4::from_row_slice(&e);
    CameraFrame::new(
        rec.frame_id,
        Intrinsics {
            fx: k[0],
            fy: k[4],
            cx: k[2],
            cy: k[5],
        },
        pose,
        depth,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Mask2DRecord {
    id: String,
    rle: Vec<u32>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    confidence: Option<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameMasksRecord {
    frame_id: u32,
    width: u32,
    height: u32,
    masks: Vec<Mask2DRecord>,
}

pub fn frame_masks_to_json(fm: &FrameMasks) -> String {
    let rec = FrameMasksRecord {
        frame_id: fm.frame_id,
        width: fm.width,
        height: fm.height,
        masks: fm
            .masks
            .iter()
            .map(|m| Mask2DRecord {
                id: m.id.clone(),
                rle: m.runs().iter().flat_map(|&(s, l)| [s, l]).collect(),
                label: m.label.clone(),
                confidence: m.confidence,
            })
            .collect(),
    };
    let mut s = serde_json::to_string(&rec).expect("mask json");
    s.push('\n');
    s
}

pub fn load_frame_masks(path: &Path) -> Result<FrameMasks> {
    let rec: FrameMasksRecord = read_json(path)?;
    let masks = rec
        .masks
        .into_iter()
        .map(|m| {
            if m.rle.len() % 2 != 0 {
                return Err(Error::InvalidValue(format!("2D mask {:?}: rle has odd length", m.id)));
            }
            let runs = m.rle.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            Ok(Mask2D::new(m.id, rec.frame_id, rec.width, rec.height, runs)?
                .with_label(m.label, m.confidence))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameMasks {
        frame_id: rec.frame_id,
        width: rec.width,
        height: rec.height,
        masks,
    })
}

/// One crop to be encoded by an external feature extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRequest {
    pub proposal_id: String,
    pub frame_id: u32,
    pub level: u32,
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl CropRequest {
    pub fn new(proposal_id: impl Into<String>, crop: &CropBox) -> Self {
        Self {
            proposal_id: proposal_id.into(),
            frame_id: crop.frame_id,
            level: crop.level,
            u_min: crop.u_min,
            v_min: crop.v_min,
            u_max: crop.u_max,
            v_max: crop.v_max,
        }
    }

    pub fn crop(&self) -> CropBox {
        CropBox {
            frame_id: self.frame_id,
            level: self.level,
            u_min: self.u_min,
            v_min: self.v_min,
            u_max: self.u_max,
            v_max: self.v_max,
        }
    }
}

pub fn crops_to_jsonl(requests: &[CropRequest]) -> String {
    let mut out = String::new();
    for r in requests {
        out.push_str(&serde_json::to_string(r).expect("crop json"));
        out.push('\n');
    }
    out
}

pub fn crops_from_jsonl(text: &str, path: &Path) -> Result<Vec<CropRequest>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

/// Class id -> feature, in ascending id order.
pub fn class_features_in_order(
    classes: &ClassTable,
    vectors: Vec<FeatureVector>,
) -> Result<BTreeMap<u32, FeatureVector>> {
    if vectors.len() != classes.len() {
        return Err(Error::DimensionMismatch {
            expected: classes.len(),
            found: vectors.len(),
        });
    }
    Ok(classes.keys().copied().zip(vectors).collect())
}
