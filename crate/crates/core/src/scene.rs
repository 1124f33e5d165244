//! Core domain types: point clouds, features, proposals, camera frames and
//! ground truth.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::InstanceMask;

/// Tolerance on the unit-norm invariant of normalized features.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidValue("point cloud is empty".into()));
        }
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidValue(format!("point {i} is not finite")));
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn point(&self, i: usize) -> Point3<f64> {
        let p = self.positions[i];
        Point3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }
}

/// Real-valued feature vector. Stored as provided; `normalized` records
/// whether unit norm has been enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f32>,
    normalized: bool,
}

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidValue("feature vector has no components".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "feature component {i} is not finite"
            )));
        }
        let normalized = (norm64(&values) - 1.0).abs() <= UNIT_NORM_TOL;
        Ok(Self { values, normalized })
    }

    /// Scales `values` to unit length.
    pub fn normalized_from(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-9 {
            return Err(Error::ZeroVector);
        }
        let values: Vec<f32> = values.iter().map(|v| (v / norm) as f32).collect();
        Self::new(values).map(|mut f| {
            f.normalized = true;
            f
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        norm64(&self.values)
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        let d = self.dot(other);
        if self.normalized && other.normalized {
            d
        } else {
            let n = self.norm() * other.norm();
            if n == 0.0 {
                0.0
            } else {
                d / n
            }
        }
    }

    pub fn to_unit(&self) -> Result<FeatureVector> {
        if self.normalized {
            return Ok(self.clone());
        }
        let v: Vec<f64> = self.values.iter().map(|&x| x as f64).collect();
        Self::normalized_from(&v)
    }
}

fn norm64(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "3d")]
    Path3D,
    #[serde(rename = "2d")]
    Path2D,
    #[serde(rename = "merged")]
    Merged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub id: String,
    pub mask: InstanceMask,
    pub feature: Option<FeatureVector>,
    pub source: Source,
    pub score: Option<f32>,
}

impl Proposal {
    pub fn new(id: impl Into<String>, mask: InstanceMask, source: Source) -> Self {
        Self {
            id: id.into(),
            mask,
            feature: None,
            source,
            score: None,
        }
    }

    pub fn with_feature(mut self, feature: FeatureVector) -> Self {
        self.feature = Some(feature);
        self
    }
}

/// Ordered proposals over a cloud of `point_count` points.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    point_count: usize,
    feature_dim: Option<usize>,
    proposals: Vec<Proposal>,
}

impl ProposalSet {
    pub fn new(point_count: usize, proposals: Vec<Proposal>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut feature_dim = None;
        for p in &proposals {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::DuplicateId(p.id.clone()));
            }
            p.mask.check_bounds(point_count)?;
            if let Some(score) = p.score {
                if !(0.0..=1.0).contains(&score) {
                    return Err(Error::InvalidValue(format!(
                        "score {score} of proposal {:?} outside [0,1]",
                        p.id
                    )));
                }
            }
            if let Some(f) = &p.feature {
                match feature_dim {
                    None => feature_dim = Some(f.dim()),
                    Some(d) if d != f.dim() => {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            found: f.dim(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            point_count,
            feature_dim,
            proposals,
        })
    }

    pub fn empty(point_count: usize) -> Self {
        Self {
            point_count,
            feature_dim: None,
            proposals: Vec::new(),
        }
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    pub fn proposals(&self) -> &[Proposal] {
        &self.proposals
    }

    pub fn into_proposals(self) -> Vec<Proposal> {
        self.proposals
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Proposal> {
        self.proposals.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Proposal> {
        self.proposals.iter().find(|p| p.id == id)
    }
}

/// Depth image in meters, row-major; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    meters: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, meters: Vec<f32>) -> Result<Self> {
        if meters.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch {
                expected: width as usize * height as usize,
                found: meters.len(),
            });
        }
        if meters.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidValue("depth values must be finite and >= 0".into()));
        }
        Ok(Self {
            width,
            height,
            meters,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            meters: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn at(&self, u: u32, v: u32) -> f32 {
        self.meters[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, d: f32) {
        self.meters[v as usize * self.width as usize + u as usize] = d;
    }

    pub fn values(&self) -> &[f32] {
        &self.meters
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Tolerance on the orthonormality of the pose rotation block.
pub const ROTATION_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    frame_id: u32,
    width: u32,
    height: u32,
    intrinsics: Intrinsics,
    world_to_camera: Matrix4<f64>,
    depth: DepthMap,
}

impl CameraFrame {
    pub fn new(
        frame_id: u32,
        intrinsics: Intrinsics,
        world_to_camera: Matrix4<f64>,
        depth: DepthMap,
    ) -> Result<Self> {
        let (w, h) = (depth.width(), depth.height());
        if w == 0 || h == 0 {
            return Err(Error::InvalidValue("frame has zero size".into()));
        }
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidValue(format!(
                "frame {frame_id}: focal lengths must be positive"
            )));
        }
        if !(0.0..w as f64).contains(&cx) || !(0.0..h as f64).contains(&cy) {
            return Err(Error::InvalidValue(format!(
                "frame {frame_id}: principal point ({cx}, {cy}) outside the image"
            )));
        }
        if world_to_camera.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("frame {frame_id}: pose not finite")));
        }
        let r = world_to_camera.fixed_view::<3, 3>(0, 0);
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ROTATION_TOL {
            return Err(Error::InvalidValue(format!(
                "frame {frame_id}: pose rotation not orthonormal (error {err:.3e})"
            )));
        }
        let last = world_to_camera.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::InvalidValue(format!(
                "frame {frame_id}: pose last row must be [0 0 0 1]"
            )));
        }
        Ok(Self {
            frame_id,
            width: w,
            height: h,
            intrinsics,
            world_to_camera,
            depth,
        })
    }

    pub fn frame_id(&self) -> u32 {
        self.frame_id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn world_to_camera(&self) -> &Matrix4<f64> {
        &self.world_to_camera
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        let m = &self.world_to_camera;
        let r = m.fixed_view::<3, 3>(0, 0);
        let t = m.fixed_view::<3, 1>(0, 3);
        r * p.coords + t
    }

    pub fn to_world(&self, q: &Vector3<f64>) -> Point3<f64> {
        let m = &self.world_to_camera;
        let r = m.fixed_view::<3, 3>(0, 0);
        let t = m.fixed_view::<3, 1>(0, 3);
        Point3::from(r.transpose() * (q - t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Head,
    Common,
    Tail,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Head, Subset::Common, Subset::Tail];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Head => "head",
            Subset::Common => "common",
            Subset::Tail => "tail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassInfo {
    pub name: String,
    pub subset: Subset,
}

pub type ClassTable = BTreeMap<u32, ClassInfo>;

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub id: String,
    pub mask: InstanceMask,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    point_count: usize,
    instances: Vec<GtInstance>,
    classes: ClassTable,
}

impl GroundTruth {
    pub fn new(point_count: usize, instances: Vec<GtInstance>, classes: ClassTable) -> Result<Self> {
        let mut ids = HashSet::new();
        for inst in &instances {
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::DuplicateId(inst.id.clone()));
            }
            inst.mask.check_bounds(point_count)?;
            if !classes.contains_key(&inst.class_id) {
                return Err(Error::InvalidValue(format!(
                    "instance {:?} has class {} missing from the class table",
                    inst.id, inst.class_id
                )));
            }
        }
        Ok(Self {
            point_count,
            instances,
            classes,
        })
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn instances(&self) -> &[GtInstance] {
        &self.instances
    }

    pub fn classes(&self) -> &ClassTable {
        &self.classes
    }

    pub fn subset_of(&self, class_id: u32) -> Option<Subset> {
        self.classes.get(&class_id).map(|c| c.subset)
    }
}

/// A point cloud with its posed RGB-D frames and optional annotations.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: PointCloud,
    pub frames: Vec<CameraFrame>,
    pub ground_truth: Option<GroundTruth>,
}

impl Scene {
    pub fn frame(&self, frame_id: u32) -> Option<&CameraFrame> {
        self.frames.iter().find(|f| f.frame_id() == frame_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_normalization_flag() {
        let f = FeatureVector::new(vec![3.0, 4.0]).unwrap();
        assert!(!f.is_normalized());
        assert!((f.norm() - 5.0).abs() < 1e-12);
        let u = f.to_unit().unwrap();
        assert!(u.is_normalized());
        assert!((u.norm() - 1.0).abs() < UNIT_NORM_TOL);
        assert!(FeatureVector::new(vec![f32::NAN]).is_err());
        assert!(matches!(
            FeatureVector::normalized_from(&[0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn proposal_set_validates() {
        let m = InstanceMask::range(0, 5).unwrap();
        let a = Proposal::new("a", m.clone(), Source::Path3D);
        let dup = ProposalSet::new(10, vec![a.clone(), a.clone()]);
        assert!(matches!(dup, Err(Error::DuplicateId(_))));
        let oob = ProposalSet::new(4, vec![a.clone()]);
        assert!(matches!(oob, Err(Error::IndexOutOfRange { index: 4, limit: 4 })));
        let f2 = FeatureVector::new(vec![1.0, 0.0]).unwrap();
        let f3 = FeatureVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let b = Proposal::new("b", m.clone(), Source::Path2D).with_feature(f2);
        let c = Proposal::new("c", m, Source::Path2D).with_feature(f3);
        assert!(matches!(
            ProposalSet::new(10, vec![b, c]),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn frame_validation() {
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
        };
        let d = DepthMap::filled(100, 100, 1.0);
        assert!(CameraFrame::new(0, k, Matrix4::identity(), d.clone()).is_ok());
        let mut skew = Matrix4::identity();
        skew[(0, 1)] = 0.1;
        assert!(CameraFrame::new(0, k, skew, d.clone()).is_err());
        let bad = Intrinsics { cx: 100.0, ..k };
        assert!(CameraFrame::new(0, bad, Matrix4::identity(), d).is_err());
    }
}
