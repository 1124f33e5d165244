//! Pinhole camera geometry: projection, 2D-mask lifting, visibility and
//! bounding-box crops.
//!
//! Every cloud point is rasterized into a frame: it projects to pixel
//! `(floor(u), floor(v))` and is *visible* there when the depth sampled at
//! that pixel is valid and within the depth tolerance of the point's camera
//! depth. Lifting a 2D mask and counting visibility share this one
//! predicate, captured per frame by [`FrameVisibility`].

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BitMask, InstanceMask};
use crate::scene::{CameraFrame, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionParams {
    /// Maximum |z_cam - depth| for a point to count as visible (meters).
    pub depth_tolerance: f64,
    /// Points at or nearer than this camera depth are dropped (meters).
    pub z_near: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            depth_tolerance: 0.05,
            z_near: 1e-4,
        }
    }
}

impl ProjectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_tolerance > 0.0 && self.depth_tolerance.is_finite()) {
            return Err(Error::Config("projection.depth_tolerance must be > 0".into()));
        }
        if !(self.z_near > 0.0 && self.z_near.is_finite()) {
            return Err(Error::Config("projection.z_near must be > 0".into()));
        }
        Ok(())
    }
}

/// Continuous image coordinates plus camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl Projected {
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.floor() as u32, self.v.floor() as u32)
    }
}

/// Projects without an image-bounds check; `None` only behind `z_near`.
pub fn project_unbounded(p: &Point3<f64>, frame: &CameraFrame, z_near: f64) -> Option<Projected> {
    let q = frame.to_camera(p);
    if q.z <= z_near {
        return None;
    }
    let k = frame.intrinsics();
    Some(Projected {
        u: k.fx * q.x / q.z + k.cx,
        v: k.fy * q.y / q.z + k.cy,
        z: q.z,
    })
}

/// World point to `(u, v, z_cam)`, or `None` when behind the camera or
/// outside the image.
pub fn project_point(p: &Point3<f64>, frame: &CameraFrame, z_near: f64) -> Option<Projected> {
    project_unbounded(p, frame, z_near).filter(|pr| {
        pr.u >= 0.0 && pr.v >= 0.0 && pr.u < frame.width() as f64 && pr.v < frame.height() as f64
    })
}

/// Inverse of [`project_point`] for a known camera depth.
pub fn unproject(u: f64, v: f64, z: f64, frame: &CameraFrame) -> Point3<f64> {
    let k = frame.intrinsics();
    let q = Vector3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
    frame.to_world(&q)
}

/// The visibility predicate: the row-major pixel index a point is visible
/// at, if any.
pub fn visible_pixel(p: &Point3<f64>, frame: &CameraFrame, params: &ProjectionParams) -> Option<u32> {
    let pr = project_point(p, frame, params.z_near)?;
    let (px, py) = pr.pixel();
    let d = frame.depth().at(px, py) as f64;
    (d > 0.0 && (pr.z - d).abs() <= params.depth_tolerance).then_some(py * frame.width() + px)
}

const NOT_VISIBLE: u32 = u32::MAX;

/// Rasterization of a whole cloud into one frame.
#[derive(Debug, Clone)]
pub struct FrameVisibility {
    frame_id: u32,
    width: u32,
    height: u32,
    pixel_of: Vec<u32>,
}

impl FrameVisibility {
    pub fn compute(cloud: &PointCloud, frame: &CameraFrame, params: &ProjectionParams) -> Self {
        let pixel_of = (0..cloud.len())
            .map(|i| visible_pixel(&cloud.point(i), frame, params).unwrap_or(NOT_VISIBLE))
            .collect();
        Self {
            frame_id: frame.frame_id(),
            width: frame.width(),
            height: frame.height(),
            pixel_of,
        }
    }

    pub fn frame_id(&self) -> u32 {
        self.frame_id
    }

    pub fn pixel(&self, point: u32) -> Option<u32> {
        let p = self.pixel_of[point as usize];
        (p != NOT_VISIBLE).then_some(p)
    }

    pub fn is_visible(&self, point: u32) -> bool {
        self.pixel_of[point as usize] != NOT_VISIBLE
    }

    /// Points passing the predicate, ascending.
    pub fn visible_points(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.pixel_of
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != NOT_VISIBLE)
            .map(|(i, &p)| (i as u32, p))
    }

    pub fn visibility_count(&self, mask: &InstanceMask) -> usize {
        mask.indices().iter().filter(|&&i| self.is_visible(i)).count()
    }

    /// Cloud points visible at a pixel covered by `pixels`.
    pub fn lift(&self, pixels: &BitMask) -> Option<InstanceMask> {
        let indices: Vec<u32> = self
            .visible_points()
            .filter(|&(_, px)| pixels.contains(px as usize))
            .map(|(i, _)| i)
            .collect();
        InstanceMask::new(indices).ok()
    }

    pub fn lift_mask(&self, mask: &Mask2D) -> Result<InstanceMask> {
        if mask.frame_id != self.frame_id || mask.width != self.width || mask.height != self.height {
            return Err(Error::InvalidValue(format!(
                "2D mask {:?} (frame {}, {}x{}) does not match frame {} ({}x{})",
                mask.id, mask.frame_id, mask.width, mask.height, self.frame_id, self.width, self.height
            )));
        }
        self.lift(&mask.bitmap()).ok_or_else(|| Error::EmptyLift {
            frame_id: self.frame_id,
            mask_id: mask.id.clone(),
        })
    }
}

/// A per-frame 2D mask as run-length encoded row-major pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2D {
    pub id: String,
    pub frame_id: u32,
    pub width: u32,
    pub height: u32,
    runs: Vec<(u32, u32)>,
    pub label: Option<String>,
    pub confidence: Option<f32>,
}

impl Mask2D {
    pub fn new(
        id: impl Into<String>,
        frame_id: u32,
        width: u32,
        height: u32,
        runs: Vec<(u32, u32)>,
    ) -> Result<Self> {
        let id = id.into();
        let total = width as u64 * height as u64;
        let mut prev_end = 0u64;
        for (k, &(start, len)) in runs.iter().enumerate() {
            if len == 0 {
                return Err(Error::InvalidValue(format!("mask {id:?}: run {k} is empty")));
            }
            if k > 0 && (start as u64) < prev_end {
                return Err(Error::NonMonotone { position: k });
            }
            prev_end = start as u64 + len as u64;
            if prev_end > total {
                return Err(Error::IndexOutOfRange {
                    index: prev_end - 1,
                    limit: total,
                });
            }
        }
        Ok(Self {
            id,
            frame_id,
            width,
            height,
            runs,
            label: None,
            confidence: None,
        })
    }

    /// Builds a mask from pixel indices in any order.
    pub fn from_pixels(
        id: impl Into<String>,
        frame_id: u32,
        width: u32,
        height: u32,
        pixels: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        let runs = match InstanceMask::from_unsorted(pixels) {
            Ok(m) => m.to_runs(),
            Err(Error::EmptyMask) => Vec::new(),
            Err(e) => return Err(e),
        };
        Self::new(id, frame_id, width, height, runs)
    }

    pub fn with_label(mut self, label: Option<String>, confidence: Option<f32>) -> Self {
        self.label = label;
        self.confidence = confidence;
        self
    }

    pub fn runs(&self) -> &[(u32, u32)] {
        &self.runs
    }

    pub fn pixel_count(&self) -> usize {
        self.runs.iter().map(|r| r.1 as usize).sum()
    }

    pub fn pixels(&self) -> impl Iterator<Item = u32> + '_ {
        self.runs.iter().flat_map(|&(s, l)| s..s + l)
    }

    pub fn bitmap(&self) -> BitMask {
        let mut bits = BitMask::new(self.width as usize * self.height as usize);
        for p in self.pixels() {
            bits.insert(p as usize);
        }
        bits
    }

    /// Whole-image mask.
    pub fn full(id: impl Into<String>, frame_id: u32, width: u32, height: u32) -> Self {
        Self::new(id, frame_id, width, height, vec![(0, width * height)]).unwrap()
    }

    /// Tight pixel box `(u_min, v_min, u_max, v_max)`, max exclusive.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        let first = self.pixels().next()?;
        let (mut u0, mut v0) = (first % self.width, first / self.width);
        let (mut u1, mut v1) = (u0, v0);
        for p in self.pixels() {
            let (u, v) = (p % self.width, p / self.width);
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        Some((u0, v0, u1 + 1, v1 + 1))
    }
}

/// All 2D masks detected in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMasks {
    pub frame_id: u32,
    pub width: u32,
    pub height: u32,
    pub masks: Vec<Mask2D>,
}

/// Lifts a 2D mask to the cloud points visible inside it.
pub fn lift_mask2d(
    mask: &Mask2D,
    frame: &CameraFrame,
    cloud: &PointCloud,
    params: &ProjectionParams,
) -> Result<InstanceMask> {
    FrameVisibility::compute(cloud, frame, params).lift_mask(mask)
}

pub fn visibility_count(
    mask: &InstanceMask,
    frame: &CameraFrame,
    cloud: &PointCloud,
    params: &ProjectionParams,
) -> usize {
    mask.indices()
        .iter()
        .filter(|&&i| visible_pixel(&cloud.point(i as usize), frame, params).is_some())
        .count()
}

/// Frames ranked by visibility of `mask`, as `(frame_id, count)`.
pub fn rank_frames(mask: &InstanceMask, visibility: &[FrameVisibility], k: usize) -> Result<Vec<(u32, usize)>> {
    if k == 0 {
        return Err(Error::InvalidValue("k must be >= 1".into()));
    }
    let mut counts: Vec<(u32, usize)> = visibility
        .iter()
        .map(|fv| (fv.frame_id(), fv.visibility_count(mask)))
        .filter(|&(_, c)| c > 0)
        .collect();
    if counts.is_empty() {
        return Err(Error::NoVisibleFrame);
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts.truncate(k);
    Ok(counts)
}

/// The `k` frames that see most of `mask`; ties go to the lower frame id.
pub fn top_k_frames(
    mask: &InstanceMask,
    frames: &[CameraFrame],
    cloud: &PointCloud,
    k: usize,
    params: &ProjectionParams,
) -> Result<Vec<u32>> {
    let vis: Vec<FrameVisibility> = frames
        .iter()
        .map(|f| FrameVisibility::compute(cloud, f, params))
        .collect();
    Ok(rank_frames(mask, &vis, k)?.into_iter().map(|(f, _)| f).collect())
}

/// Image crop with exclusive max bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CropBox {
    pub frame_id: u32,
    pub level: u32,
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl CropBox {
    pub fn width(&self) -> u32 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> u32 {
        self.v_max - self.v_min
    }

    pub fn contains(&self, other: &CropBox) -> bool {
        self.u_min <= other.u_min
            && self.v_min <= other.v_min
            && self.u_max >= other.u_max
            && self.v_max >= other.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropParams {
    /// Number of crop levels; level 0 is the tight box.
    pub levels: u32,
    /// Per-level expansion of each side, as a fraction of the base size.
    pub expansion: f64,
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            levels: 3,
            expansion: 0.1,
        }
    }
}

impl CropParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("features.crops.levels must be >= 1".into()));
        }
        if !(self.expansion >= 0.0 && self.expansion.is_finite()) {
            return Err(Error::Config("features.crops.expansion must be >= 0".into()));
        }
        Ok(())
    }
}

/// Multi-level crops around the projection of the mask's world-space
/// axis-aligned bounding box.
pub fn bbox3d_to_crop(
    mask: &InstanceMask,
    cloud: &PointCloud,
    frame: &CameraFrame,
    crop: &CropParams,
    params: &ProjectionParams,
) -> Result<Vec<CropBox>> {
    crop.validate()?;
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in mask.indices() {
        let p = cloud.point(i as usize);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut uv_lo = [f64::INFINITY; 2];
    let mut uv_hi = [f64::NEG_INFINITY; 2];
    let mut corner_in_frame = false;
    for c in 0..8 {
        let corner = Point3::new(
            if c & 1 == 0 { lo[0] } else { hi[0] },
            if c & 2 == 0 { lo[1] } else { hi[1] },
            if c & 4 == 0 { lo[2] } else { hi[2] },
        );
        if let Some(pr) = project_unbounded(&corner, frame, params.z_near) {
            corner_in_frame |= pr.u >= 0.0 && pr.v >= 0.0 && pr.u < w && pr.v < h;
            uv_lo = [uv_lo[0].min(pr.u), uv_lo[1].min(pr.v)];
            uv_hi = [uv_hi[0].max(pr.u), uv_hi[1].max(pr.v)];
        }
    }
    let point_in_frame = || {
        mask.indices()
            .iter()
            .any(|&i| project_point(&cloud.point(i as usize), frame, params.z_near).is_some())
    };
    if !corner_in_frame && !point_in_frame() {
        return Err(Error::NoProjection {
            frame_id: frame.frame_id(),
        });
    }
    let clamp = |x: f64, max: f64| x.clamp(0.0, max);
    let base = [
        clamp(uv_lo[0].floor(), w),
        clamp(uv_lo[1].floor(), h),
        clamp(uv_hi[0].floor() + 1.0, w),
        clamp(uv_hi[1].floor() + 1.0, h),
    ];
    if base[2] <= base[0] || base[3] <= base[1] {
        return Err(Error::NoProjection {
            frame_id: frame.frame_id(),
        });
    }
    Ok(level_crops(frame.frame_id(), base, frame.width(), frame.height(), crop))
}

/// Expands a base box `[u_min, v_min, u_max, v_max]` into `crop.levels`
/// nested crops clamped to the image.
pub fn level_crops(frame_id: u32, base: [f64; 4], width: u32, height: u32, crop: &CropParams) -> Vec<CropBox> {
    let (w, h) = (width as f64, height as f64);
    let clamp = |x: f64, max: f64| x.clamp(0.0, max);
    let (bw, bh) = (base[2] - base[0], base[3] - base[1]);
    (0..crop.levels)
        .map(|level| {
            let ex = level as f64 * crop.expansion * bw;
            let ey = level as f64 * crop.expansion * bh;
            CropBox {
                frame_id,
                level,
                u_min: clamp((base[0] - ex).floor(), w) as u32,
                v_min: clamp((base[1] - ey).floor(), h) as u32,
                u_max: clamp((base[2] + ex).ceil(), w) as u32,
                v_max: clamp((base[3] + ey).ceil(), h) as u32,
            }
        })
        .collect()
}

/// Multi-level crops around a 2D mask's pixel bounding box.
pub fn mask2d_crops(mask: &Mask2D, crop: &CropParams) -> Vec<CropBox> {
    match mask.bounding_box() {
        Some((u0, v0, u1, v1)) => level_crops(
            mask.frame_id,
            [u0 as f64, v0 as f64, u1 as f64, v1 as f64],
            mask.width,
            mask.height,
            crop,
        ),
        None => Vec::new(),
    }
}
