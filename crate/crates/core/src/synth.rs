//! Synthetic rooms of box-shaped instances, a camera ring with rendered
//! depth, and pathway-specific corruptions of the ground truth.
//!
//! The 3D pathway misses instances at a per-subset rate, swaps a fraction
//! of each mask's points with nearby floor points, and occasionally fuses
//! two neighboring instances. The 2D pathway sees every class but detects
//! instances per view, split into overlapping vertical strips.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{hash_embed, FeatureProvider};
use crate::io::depth::{quantize_mm, DEPTH_SCALE};
use crate::io::formats::CropRequest;
use crate::mask::InstanceMask;
use crate::projection::{project_point, FrameMasks, Mask2D};
use crate::scene::{
    CameraFrame, ClassInfo, ClassTable, DepthMap, FeatureVector, GroundTruth, GtInstance, Intrinsics, PointCloud,
    Proposal, ProposalSet, Scene, Source, Subset,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_points: usize,
    pub n_instances: usize,
    /// Split evenly into head, common and tail, in that id order.
    pub n_classes: usize,
    /// Relative sampling weight of a head, common and tail class.
    pub class_weights: [f64; 3],
    pub room_extent: f64,
    /// Fraction of all points that lie on instances.
    pub instance_fraction: f64,
    pub n_cameras: usize,
    pub frame_step: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
    pub camera_radius: f64,
    pub camera_height: f64,
    pub miss_rate_head: f64,
    pub miss_rate_common: f64,
    pub miss_rate_tail: f64,
    /// Chance that a kept 3D instance is fused with its nearest neighbor.
    pub merge_rate_3d: f64,
    /// Fraction of each 3D mask's points swapped for adjacent floor points.
    pub boundary_noise: f64,
    /// Fraction of each 3D mask dropped as a slab on one random side.
    pub partial_3d: f64,
    /// Upper bound on the fraction of each instance's lowest points that no
    /// 2D view ever segments; drawn per instance.
    pub partial_2d: f64,
    /// Per-view chance that the 2D pathway misses a visible instance.
    pub miss_rate_2d: f64,
    pub fragment_count: usize,
    /// Overlap between neighboring strips, as a fraction of strip width.
    pub fragment_overlap: f64,
    pub min_mask_pixels: usize,
    /// Angular perturbation of crop features, radians.
    pub feature_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_points: 20_000,
            n_instances: 16,
            n_classes: 6,
            class_weights: [3.0, 2.0, 1.0],
            room_extent: 6.0,
            instance_fraction: 0.6,
            n_cameras: 12,
            frame_step: 10,
            image_width: 160,
            image_height: 120,
            focal: 120.0,
            camera_radius: 4.5,
            camera_height: 2.5,
            miss_rate_head: 0.05,
            miss_rate_common: 0.2,
            miss_rate_tail: 0.6,
            merge_rate_3d: 0.1,
            boundary_noise: 0.01,
            partial_3d: 0.0,
            partial_2d: 0.08,
            miss_rate_2d: 0.45,
            fragment_count: 1,
            fragment_overlap: 0.2,
            min_mask_pixels: 8,
            feature_noise: 0.25,
        }
    }
}

impl SynthConfig {
    /// No corruption on either pathway.
    pub fn clean(self) -> Self {
        Self {
            miss_rate_head: 0.0,
            miss_rate_common: 0.0,
            miss_rate_tail: 0.0,
            merge_rate_3d: 0.0,
            boundary_noise: 0.0,
            partial_3d: 0.0,
            partial_2d: 0.0,
            miss_rate_2d: 0.0,
            fragment_count: 1,
            fragment_overlap: 0.0,
            feature_noise: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("miss_rate_head", self.miss_rate_head),
            ("miss_rate_common", self.miss_rate_common),
            ("miss_rate_tail", self.miss_rate_tail),
            ("merge_rate_3d", self.merge_rate_3d),
            ("boundary_noise", self.boundary_noise),
            ("partial_3d", self.partial_3d),
            ("partial_2d", self.partial_2d),
            ("miss_rate_2d", self.miss_rate_2d),
            ("fragment_overlap", self.fragment_overlap),
            ("instance_fraction", self.instance_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("synth.{name} = {v} outside [0,1]"));
            }
        }
        if self.n_points == 0 {
            return bad("synth.n_points must be >= 1".into());
        }
        if self.n_instances > 0 && self.n_classes < 3 {
            return bad("synth.n_classes must be >= 3 to cover head, common and tail".into());
        }
        if self.fragment_count == 0 || self.n_cameras == 0 || self.frame_step == 0 {
            return bad("synth.fragment_count, n_cameras and frame_step must be >= 1".into());
        }
        if self.image_width == 0 || self.image_height == 0 || !(self.focal > 0.0) {
            return bad("synth image size and focal must be positive".into());
        }
        if !(self.room_extent > 0.0) || !(self.feature_noise >= 0.0) || self.class_weights.iter().any(|w| !(*w > 0.0)) {
            return bad("synth.room_extent, feature_noise and class_weights must be positive".into());
        }
        Ok(())
    }

    fn miss_rate(&self, s: Subset) -> f64 {
        match s {
            Subset::Head => self.miss_rate_head,
            Subset::Common => self.miss_rate_common,
            Subset::Tail => self.miss_rate_tail,
        }
    }
}

/// Axis-aligned box resting on the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSpec {
    pub center: [f64; 2],
    pub size: [f64; 3],
    pub class_id: u32,
}

impl BoxSpec {
    fn footprint_distance(&self, x: f64, y: f64) -> f64 {
        let dx = ((x - self.center[0]).abs() - self.size[0] / 2.0).max(0.0);
        let dy = ((y - self.center[1]).abs() - self.size[1] / 2.0).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    /// Carries the ground truth.
    pub scene: Scene,
    pub class_features: BTreeMap<u32, FeatureVector>,
    pub boxes: Vec<BoxSpec>,
}

impl SynthScene {
    pub fn ground_truth(&self) -> &GroundTruth {
        self.scene.ground_truth.as_ref().expect("synthetic scenes carry ground truth")
    }
}

pub fn class_subset(class_id: u32, n_classes: usize) -> Subset {
    match 3 * class_id as usize / n_classes.max(1) {
        0 => Subset::Head,
        1 => Subset::Common,
        _ => Subset::Tail,
    }
}

pub fn class_table(n_classes: usize) -> ClassTable {
    (0..n_classes as u32)
        .map(|c| {
            let subset = class_subset(c, n_classes);
            (
                c,
                ClassInfo {
                    name: format!("{}_{c:02}", subset.name()),
                    subset,
                },
            )
        })
        .collect()
}

pub fn class_embeddings(classes: &ClassTable, dim: usize, seed: u64) -> BTreeMap<u32, FeatureVector> {
    classes
        .iter()
        .map(|(&c, info)| (c, hash_embed(&info.name, dim, seed)))
        .collect()
}

pub fn background_embedding(dim: usize, seed: u64) -> FeatureVector {
    hash_embed("background", dim, seed)
}

fn sample_classes(cfg: &SynthConfig, classes: &ClassTable, rng: &mut ChaCha20Rng) -> Vec<u32> {
    let ids: Vec<u32> = classes.keys().copied().collect();
    let weight = |c: u32| cfg.class_weights[class_subset(c, cfg.n_classes) as usize];
    let total: f64 = ids.iter().map(|&c| weight(c)).sum();
    let mut out: Vec<u32> = Vec::with_capacity(cfg.n_instances);
    // one instance per subset first, so every subset is represented
    for s in Subset::ALL.into_iter().take(cfg.n_instances) {
        let pool: Vec<u32> = ids.iter().copied().filter(|&c| class_subset(c, cfg.n_classes) == s).collect();
        out.push(*pool.choose(rng).expect("each subset has a class"));
    }
    while out.len() < cfg.n_instances {
        let mut x = rng.gen::<f64>() * total;
        let mut pick = *ids.last().unwrap();
        for &c in &ids {
            x -= weight(c);
            if x < 0.0 {
                pick = c;
                break;
            }
        }
        out.push(pick);
    }
    out.shuffle(rng);
    out
}

fn place_boxes(cfg: &SynthConfig, class_ids: &[u32], rng: &mut ChaCha20Rng) -> Result<Vec<BoxSpec>> {
    const MARGIN: f64 = 0.2;
    const ATTEMPTS: usize = 2000;
    let half = cfg.room_extent / 2.0;
    let mut boxes: Vec<BoxSpec> = Vec::with_capacity(class_ids.len());
    for &class_id in class_ids {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let size = [rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0), rng.gen_range(0.3..1.2)];
            let lim = [half - size[0] / 2.0 - MARGIN, half - size[1] / 2.0 - MARGIN];
            if lim[0] <= 0.0 || lim[1] <= 0.0 {
                continue;
            }
            let center = [rng.gen_range(-lim[0]..lim[0]), rng.gen_range(-lim[1]..lim[1])];
            let clear = boxes.iter().all(|b| {
                (b.center[0] - center[0]).abs() >= (b.size[0] + size[0]) / 2.0 + MARGIN
                    || (b.center[1] - center[1]).abs() >= (b.size[1] + size[1]) / 2.0 + MARGIN
            });
            if clear {
                boxes.push(BoxSpec { center, size, class_id });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleScene(format!(
                "cannot place {} boxes in a {} m room",
                class_ids.len(),
                cfg.room_extent
            )));
        }
    }
    Ok(boxes)
}

fn sample_box_surface(b: &BoxSpec, n: usize, rng: &mut ChaCha20Rng) -> Vec<[f32; 3]> {
    let [sx, sy, sz] = b.size;
    let faces = [sx * sy, sx * sz, sx * sz, sy * sz, sy * sz];
    let total: f64 = faces.iter().sum();
    let (x0, y0) = (b.center[0] - sx / 2.0, b.center[1] - sy / 2.0);
    (0..n)
        .map(|_| {
            let mut pick = rng.gen::<f64>() * total;
            let mut face = 4;
            for (k, a) in faces.iter().enumerate() {
                if pick < *a {
                    face = k;
                    break;
                }
                pick -= a;
            }
            let (s, t) = (rng.gen::<f64>(), rng.gen::<f64>());
            let p = match face {
                0 => [x0 + s * sx, y0 + t * sy, sz],
                1 => [x0 + s * sx, y0, t * sz],
                2 => [x0 + s * sx, y0 + sy, t * sz],
                3 => [x0, y0 + s * sy, t * sz],
                _ => [x0 + sx, y0 + s * sy, t * sz],
            };
            [p[0] as f32, p[1] as f32, p[2] as f32]
        })
        .collect()
}

/// World-to-camera pose looking from `eye` at `target`, z up.
pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> Matrix4<f64> {
    let f = (target - eye).normalize();
    let r = f.cross(&Vector3::z()).normalize();
    let d = f.cross(&r);
    let t = Vector3::new(-r.dot(&eye.coords), -d.dot(&eye.coords), -f.dot(&eye.coords));
    Matrix4::new(
        r.x, r.y, r.z, t.x, d.x, d.y, d.z, t.y, f.x, f.y, f.z, t.z, 0.0, 0.0, 0.0, 1.0,
    )
}

/// Nearest point per pixel, as `(camera depth, point index)`.
pub fn zbuffer(cloud: &PointCloud, frame: &CameraFrame, z_near: f64) -> Vec<Option<(f64, u32)>> {
    let w = frame.width();
    let mut buf: Vec<Option<(f64, u32)>> = vec![None; (w * frame.height()) as usize];
    for i in 0..cloud.len() {
        if let Some(pr) = project_point(&cloud.point(i), frame, z_near) {
            let (u, v) = pr.pixel();
            let slot = &mut buf[(v * w + u) as usize];
            if slot.is_none_or(|(z, _)| pr.z < z) {
                *slot = Some((pr.z, i as u32));
            }
        }
    }
    buf
}

fn render_depth(cloud: &PointCloud, frame: &CameraFrame) -> Result<DepthMap> {
    let meters = zbuffer(cloud, frame, 1e-4)
        .into_iter()
        .map(|s| s.map_or(0.0, |(z, _)| quantize_mm(z as f32) as f32 / DEPTH_SCALE))
        .collect();
    DepthMap::new(frame.width(), frame.height(), meters)
}

pub fn camera_ring(cfg: &SynthConfig) -> Result<Vec<CameraFrame>> {
    let k = Intrinsics {
        fx: cfg.focal,
        fy: cfg.focal,
        cx: cfg.image_width as f64 / 2.0,
        cy: cfg.image_height as f64 / 2.0,
    };
    (0..cfg.n_cameras)
        .map(|c| {
            let a = std::f64::consts::TAU * c as f64 / cfg.n_cameras as f64;
            let eye = Point3::new(cfg.camera_radius * a.cos(), cfg.camera_radius * a.sin(), cfg.camera_height);
            let pose = look_at(eye, Point3::new(0.0, 0.0, 0.3));
            CameraFrame::new(
                c as u32 * cfg.frame_step,
                k,
                pose,
                DepthMap::filled(cfg.image_width, cfg.image_height, 0.0),
            )
        })
        .collect()
}

/// Generates cloud, cameras with rendered depth, ground truth and class
/// embeddings of dimension `dim`.
pub fn generate_scene(cfg: &SynthConfig, dim: usize) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let classes = class_table(cfg.n_classes);
    let class_ids = if cfg.n_instances == 0 {
        Vec::new()
    } else {
        sample_classes(cfg, &classes, &mut rng)
    };
    let boxes = place_boxes(cfg, &class_ids, &mut rng)?;

    let n_inst_points = if boxes.is_empty() {
        0
    } else {
        (cfg.n_points as f64 * cfg.instance_fraction).round() as usize
    };
    let areas: Vec<f64> = boxes
        .iter()
        .map(|b| b.size[0] * b.size[1] + 2.0 * b.size[2] * (b.size[0] + b.size[1]))
        .collect();
    let total_area: f64 = areas.iter().sum();
    let mut counts: Vec<usize> = areas
        .iter()
        .map(|a| ((a / total_area) * n_inst_points as f64).floor() as usize)
        .collect();
    let short = n_inst_points - counts.iter().sum::<usize>();
    let n_boxes = counts.len();
    for k in 0..short {
        counts[k % n_boxes] += 1;
    }
    let n_bg = cfg.n_points - n_inst_points;
    let half = cfg.room_extent / 2.0;
    let mut positions: Vec<[f32; 3]> = Vec::with_capacity(cfg.n_points);
    while positions.len() < n_bg {
        let (x, y) = (rng.gen_range(-half..half), rng.gen_range(-half..half));
        if boxes.iter().all(|b| b.footprint_distance(x, y) > 0.0) {
            positions.push([x as f32, y as f32, 0.0]);
        }
    }
    let mut instances = Vec::with_capacity(boxes.len());
    for (k, (b, &n)) in boxes.iter().zip(&counts).enumerate() {
        let start = positions.len() as u32;
        positions.extend(sample_box_surface(b, n, &mut rng));
        if n > 0 {
            instances.push(GtInstance {
                id: format!("gt_{k:03}"),
                mask: InstanceMask::range(start, positions.len() as u32)?,
                class_id: b.class_id,
            });
        }
    }
    let cloud = PointCloud::new(positions)?;
    let frames = camera_ring(cfg)?
        .into_par_iter()
        .map(|f| {
            let depth = render_depth(&cloud, &f)?;
            CameraFrame::new(f.frame_id(), *f.intrinsics(), *f.world_to_camera(), depth)
        })
        .collect::<Result<Vec<_>>>()?;
    let class_features = class_embeddings(&classes, dim, cfg.seed);
    let gt = GroundTruth::new(cloud.len(), instances, classes)?;
    Ok(SynthScene {
        scene: Scene {
            cloud,
            frames,
            ground_truth: Some(gt),
        },
        class_features,
        boxes,
    })
}

pub const LABEL_BACKGROUND: u32 = u32::MAX - 1;
pub const LABEL_EMPTY: u32 = u32::MAX;

/// Per-point GT instance index, or [`LABEL_BACKGROUND`].
pub fn point_labels(gt: &GroundTruth) -> Vec<u32> {
    let mut labels = vec![LABEL_BACKGROUND; gt.point_count()];
    for (k, inst) in gt.instances().iter().enumerate() {
        for &i in inst.mask.indices() {
            labels[i as usize] = k as u32;
        }
    }
    labels
}

/// Instance label of the nearest point in each pixel.
pub fn label_image(cloud: &PointCloud, frame: &CameraFrame, labels: &[u32]) -> Vec<u32> {
    zbuffer(cloud, frame, 1e-4)
        .into_iter()
        .map(|s| s.map_or(LABEL_EMPTY, |(_, i)| labels[i as usize]))
        .collect()
}

/// Both pathways' inputs derived from one synthetic scene.
#[derive(Debug, Clone)]
pub struct Pathways {
    pub set3d: ProposalSet,
    pub masks2d: Vec<FrameMasks>,
}

fn corrupt_3d(synth: &SynthScene, cfg: &SynthConfig, rng: &mut ChaCha20Rng) -> Result<ProposalSet> {
    let gt = synth.ground_truth();
    let cloud = &synth.scene.cloud;
    let kept: Vec<usize> = (0..gt.instances().len())
        .filter(|&k| {
            let s = gt.subset_of(gt.instances()[k].class_id).unwrap_or(Subset::Tail);
            rng.gen::<f64>() >= cfg.miss_rate(s)
        })
        .collect();

    let labels = point_labels(gt);
    let background: Vec<u32> = (0..cloud.len() as u32)
        .filter(|&i| labels[i as usize] == LABEL_BACKGROUND)
        .collect();
    let mut masks: Vec<InstanceMask> = Vec::with_capacity(kept.len());
    for &k in &kept {
        let inst = &gt.instances()[k];
        let b = synth.boxes[k];
        let pos = |i: u32| cloud.positions()[i as usize];
        let mut own: Vec<u32> = inst.mask.indices().to_vec();
        let n_cut = ((cfg.partial_3d * own.len() as f64).round() as usize).min(own.len() - 1);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        if n_cut > 0 {
            let (dx, dy) = (angle.cos(), angle.sin());
            let along = |i: u32| pos(i)[0] as f64 * dx + pos(i)[1] as f64 * dy;
            own.sort_by(|&a, &c| along(c).total_cmp(&along(a)).then(a.cmp(&c)));
            own.drain(..n_cut);
        }
        let n_swap = ((cfg.boundary_noise * inst.mask.len() as f64).round() as usize).min(own.len() - 1);
        if n_swap == 0 {
            masks.push(InstanceMask::from_unsorted(own)?);
            continue;
        }
        // drop the lowest points, add the floor points closest to the footprint
        own.sort_by(|&a, &c| pos(a)[2].total_cmp(&pos(c)[2]).then(a.cmp(&c)));
        let mut near: Vec<(f64, u32)> = background
            .iter()
            .map(|&i| (b.footprint_distance(pos(i)[0] as f64, pos(i)[1] as f64), i))
            .collect();
        let n_add = n_swap.min(near.len());
        if n_add > 0 {
            near.select_nth_unstable_by(n_add - 1, |a, c| a.0.total_cmp(&c.0).then(a.1.cmp(&c.1)));
        }
        let keep = own[n_swap..].iter().copied();
        masks.push(InstanceMask::from_unsorted(keep.chain(near[..n_add].iter().map(|x| x.1)))?);
    }

    let mut fused = vec![false; masks.len()];
    let mut out: Vec<InstanceMask> = Vec::with_capacity(masks.len());
    for a in 0..masks.len() {
        if fused[a] {
            continue;
        }
        fused[a] = true;
        let mut m = masks[a].clone();
        if rng.gen::<f64>() < cfg.merge_rate_3d {
            let ca = synth.boxes[kept[a]].center;
            let partner = (0..masks.len()).filter(|&c| !fused[c]).min_by(|&x, &y| {
                let d = |c: usize| {
                    let cc = synth.boxes[kept[c]].center;
                    (cc[0] - ca[0]).hypot(cc[1] - ca[1])
                };
                d(x).total_cmp(&d(y))
            });
            if let Some(c) = partner {
                fused[c] = true;
                m = m.union(&masks[c]);
            }
        }
        out.push(m);
    }
    ProposalSet::new(
        cloud.len(),
        out.into_iter()
            .enumerate()
            .map(|(k, m)| Proposal::new(format!("3d_{k:04}"), m, Source::Path3D))
            .collect(),
    )
}

fn strips(pixels: &[u32], width: u32, count: usize, overlap: f64) -> Vec<Vec<u32>> {
    if count <= 1 {
        return vec![pixels.to_vec()];
    }
    let (lo, hi) = pixels
        .iter()
        .fold((u32::MAX, 0), |(lo, hi), &p| (lo.min(p % width), hi.max(p % width + 1)));
    let span = (hi - lo) as f64;
    let w = span / count as f64;
    (0..count)
        .map(|k| {
            let a = lo as f64 + k as f64 * w - overlap * w / 2.0;
            let b = lo as f64 + (k + 1) as f64 * w + overlap * w / 2.0;
            pixels
                .iter()
                .copied()
                .filter(|&p| {
                    let u = (p % width) as f64 + 0.5;
                    u >= a && u < b
                })
                .collect()
        })
        .filter(|s: &Vec<u32>| !s.is_empty())
        .collect()
}

fn corrupt_2d(synth: &SynthScene, cfg: &SynthConfig, rng: &mut ChaCha20Rng) -> Result<Vec<FrameMasks>> {
    let gt = synth.ground_truth();
    let cloud = &synth.scene.cloud;
    let mut labels = point_labels(gt);
    if cfg.partial_2d > 0.0 {
        for inst in gt.instances() {
            let frac = rng.gen_range(0.0..=cfg.partial_2d);
            let mut own = inst.mask.indices().to_vec();
            let n_cut = ((frac * own.len() as f64).round() as usize).min(own.len() - 1);
            let z = |i: u32| cloud.positions()[i as usize][2];
            own.sort_by(|&a, &c| z(a).total_cmp(&z(c)).then(a.cmp(&c)));
            for &i in &own[..n_cut] {
                labels[i as usize] = LABEL_BACKGROUND;
            }
        }
    }
    let images: Vec<Vec<u32>> = synth
        .scene
        .frames
        .par_iter()
        .map(|f| label_image(cloud, f, &labels))
        .collect();
    let mut out = Vec::with_capacity(images.len());
    for (frame, image) in synth.scene.frames.iter().zip(&images) {
        let mut per_instance: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (p, &l) in image.iter().enumerate() {
            if l != LABEL_BACKGROUND && l != LABEL_EMPTY {
                per_instance.entry(l).or_default().push(p as u32);
            }
        }
        let mut masks = Vec::new();
        for (inst, pixels) in per_instance {
            let missed = rng.gen::<f64>() < cfg.miss_rate_2d;
            if missed || pixels.len() < cfg.min_mask_pixels {
                continue;
            }
            let name = gt
                .classes()
                .get(&gt.instances()[inst as usize].class_id)
                .map(|c| c.name.clone());
            for s in strips(&pixels, frame.width(), cfg.fragment_count, cfg.fragment_overlap) {
                let id = format!("f{:06}_m{:03}", frame.frame_id(), masks.len());
                masks.push(
                    Mask2D::from_pixels(id, frame.frame_id(), frame.width(), frame.height(), s)?
                        .with_label(name.clone(), Some(1.0)),
                );
            }
        }
        out.push(FrameMasks {
            frame_id: frame.frame_id(),
            width: frame.width(),
            height: frame.height(),
            masks,
        });
    }
    Ok(out)
}

/// Corrupted 3D proposals and per-frame 2D masks.
pub fn corrupt_to_pathways(synth: &SynthScene, cfg: &SynthConfig) -> Result<Pathways> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_c0_2277);
    let set3d = corrupt_3d(synth, cfg, &mut rng)?;
    let masks2d = corrupt_2d(synth, cfg, &mut rng)?;
    Ok(Pathways { set3d, masks2d })
}

/// Feature provider that looks at the rendered GT labels inside each crop:
/// the pixel-weighted mix of class and background embeddings, rotated by
/// `noise` radians in a direction seeded by the crop.
pub struct SceneCropProvider {
    dim: usize,
    seed: u64,
    noise: f64,
    frames: BTreeMap<u32, (u32, Vec<u32>)>,
    instance_features: Vec<FeatureVector>,
    background: FeatureVector,
}

impl SceneCropProvider {
    pub fn new(
        scene: &Scene,
        class_features: &BTreeMap<u32, FeatureVector>,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let gt = scene
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::Config("the synthetic provider needs ground truth".into()))?;
        let dim = class_features
            .values()
            .next()
            .map(FeatureVector::dim)
            .ok_or_else(|| Error::Config("the synthetic provider needs class features".into()))?;
        let instance_features = gt
            .instances()
            .iter()
            .map(|i| {
                class_features
                    .get(&i.class_id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidValue(format!("no feature for class {}", i.class_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = point_labels(gt);
        let frames = scene
            .frames
            .par_iter()
            .map(|f| (f.frame_id(), (f.width(), label_image(&scene.cloud, f, &labels))))
            .collect();
        Ok(Self {
            dim,
            seed,
            noise,
            frames,
            instance_features,
            background: background_embedding(dim, 0),
        })
    }

    fn crop_feature(&self, r: &CropRequest) -> Result<FeatureVector> {
        let (width, image) = self.frames.get(&r.frame_id).ok_or_else(|| Error::Provider {
            proposal_id: r.proposal_id.clone(),
            frame_id: r.frame_id,
            level: r.level,
            message: "unknown frame".into(),
        })?;
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for v in r.v_min..r.v_max {
            for u in r.u_min..r.u_max {
                let l = image[(v * width + u) as usize];
                if l != LABEL_EMPTY {
                    *counts.entry(l).or_default() += 1;
                }
            }
        }
        let mut mix = vec![0.0f64; self.dim];
        for (l, n) in &counts {
            let f = if *l == LABEL_BACKGROUND {
                &self.background
            } else {
                &self.instance_features[*l as usize]
            };
            for (m, x) in mix.iter_mut().zip(f.values()) {
                *m += *n as f64 * *x as f64;
            }
        }
        let base = FeatureVector::normalized_from(&mix).unwrap_or_else(|_| self.background.clone());
        if self.noise == 0.0 {
            return Ok(base);
        }
        let key = format!(
            "noise:{}:{}:{},{},{},{}",
            r.frame_id, r.level, r.u_min, r.v_min, r.u_max, r.v_max
        );
        let g = hash_embed(&key, self.dim, self.seed);
        let along = g.dot(&base);
        let ortho: Vec<f64> = g
            .values()
            .iter()
            .zip(base.values())
            .map(|(a, b)| *a as f64 - along * *b as f64)
            .collect();
        let Ok(n) = FeatureVector::normalized_from(&ortho) else {
            return Ok(base);
        };
        let (c, s) = (self.noise.cos(), self.noise.sin());
        let rotated: Vec<f64> = base
            .values()
            .iter()
            .zip(n.values())
            .map(|(a, b)| c * *a as f64 + s * *b as f64)
            .collect();
        FeatureVector::normalized_from(&rotated)
    }
}

impl FeatureProvider for SceneCropProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, requests: &[CropRequest]) -> Result<Vec<FeatureVector>> {
        requests.par_iter().map(|r| self.crop_feature(r)).collect()
    }
}
