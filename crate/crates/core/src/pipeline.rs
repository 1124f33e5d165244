//! Stage functions shared by the command line and the test harness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PipelineConfig, ProviderConfig};
use crate::error::{Error, Result};
use crate::eval::{assign_classes, evaluate, EvalResult};
use crate::features::{
    assemble_set_features, fetch, pool_features, AssembledSet, CommandProvider, FeatureProvider, HashProvider,
    ResponseFileProvider, SceneViews,
};
use crate::fusion::MemoryBank;
use crate::integration::{conditional_integrate, simple_integrate, IntegrationConfig, IntegrationReport};
use crate::io::formats::CropRequest;
use crate::mask::InstanceMask;
use crate::projection::{mask2d_crops, FrameMasks, FrameVisibility};
use crate::scene::{CameraFrame, FeatureVector, GroundTruth, Proposal, ProposalSet, Scene, Source};
use crate::synth::SceneCropProvider;

/// Frames on the configured sampling stride.
pub fn selected_frames<'a>(scene: &'a Scene, cfg: &PipelineConfig) -> Vec<&'a CameraFrame> {
    scene
        .frames
        .iter()
        .filter(|f| cfg.fusion.selects_frame(f.frame_id()))
        .collect()
}

pub fn build_provider(
    cfg: &PipelineConfig,
    scene: &Scene,
    class_features: Option<&BTreeMap<u32, FeatureVector>>,
) -> Result<Box<dyn FeatureProvider>> {
    let hash = || {
        Box::new(HashProvider {
            dim: cfg.feature_dim,
            seed: cfg.seed,
        }) as Box<dyn FeatureProvider>
    };
    let synthetic = |cf: &BTreeMap<u32, FeatureVector>| -> Result<Box<dyn FeatureProvider>> {
        Ok(Box::new(SceneCropProvider::new(scene, cf, cfg.synth.feature_noise, cfg.seed)?))
    };
    match &cfg.features.provider {
        ProviderConfig::Auto => match class_features {
            Some(cf) if scene.ground_truth.is_some() => synthetic(cf),
            _ => Ok(hash()),
        },
        ProviderConfig::Hash => Ok(hash()),
        ProviderConfig::Synthetic => synthetic(
            class_features.ok_or_else(|| Error::Config("the synthetic provider needs class features".into()))?,
        ),
        ProviderConfig::Command { program, args } => Ok(Box::new(CommandProvider {
            program: program.clone(),
            args: args.clone(),
            dim: cfg.feature_dim,
        })),
        ProviderConfig::Response { path } => Ok(Box::new(ResponseFileProvider::load(path)?)),
    }
}

/// One frame's lifted 2D masks with their crop features.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedFrame {
    pub frame_id: u32,
    pub instances: Vec<(String, InstanceMask, FeatureVector)>,
}

impl LiftedFrame {
    pub fn to_proposals(&self, point_count: usize) -> Result<ProposalSet> {
        ProposalSet::new(
            point_count,
            self.instances
                .iter()
                .map(|(id, m, f)| Proposal::new(id.clone(), m.clone(), Source::Path2D).with_feature(f.clone()))
                .collect(),
        )
    }

    pub fn from_proposals(frame_id: u32, set: &ProposalSet) -> Result<Self> {
        let instances = set
            .iter()
            .map(|p| {
                let f = p
                    .feature
                    .clone()
                    .ok_or_else(|| Error::InvalidValue(format!("lifted instance {} has no feature", p.id)))?;
                Ok((p.id.clone(), p.mask.clone(), f))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frame_id, instances })
    }
}

/// Crop requests for every 2D mask on a selected frame, grouped per mask.
pub fn mask2d_requests(masks: &[FrameMasks], cfg: &PipelineConfig) -> Vec<Vec<CropRequest>> {
    masks
        .iter()
        .filter(|fm| cfg.fusion.selects_frame(fm.frame_id))
        .flat_map(|fm| fm.masks.iter())
        .map(|m| {
            mask2d_crops(m, &cfg.features.crops)
                .iter()
                .map(|c| CropRequest::new(m.id.clone(), c))
                .collect()
        })
        .collect()
}

/// Lifts every 2D mask of the selected frames into the cloud and attaches
/// its crop feature. Masks that lift to no point are dropped.
pub fn lift_frames(
    scene: &Scene,
    masks: &[FrameMasks],
    cfg: &PipelineConfig,
    provider: &dyn FeatureProvider,
) -> Result<Vec<LiftedFrame>> {
    let selected: Vec<&FrameMasks> = masks.iter().filter(|fm| cfg.fusion.selects_frame(fm.frame_id)).collect();
    for fm in &selected {
        let frame = scene
            .frame(fm.frame_id)
            .ok_or_else(|| Error::InvalidValue(format!("masks reference unknown frame {}", fm.frame_id)))?;
        if (fm.width, fm.height) != (frame.width(), frame.height()) {
            return Err(Error::InvalidValue(format!(
                "masks of frame {} are {}x{}, the camera is {}x{}",
                fm.frame_id,
                fm.width,
                fm.height,
                frame.width(),
                frame.height()
            )));
        }
    }
    let per_mask = mask2d_requests(masks, cfg);
    let flat: Vec<CropRequest> = per_mask.iter().flatten().cloned().collect();
    let vectors = fetch(provider, &flat)?;
    let mut pooled = Vec::with_capacity(per_mask.len());
    let mut offset = 0;
    for reqs in &per_mask {
        pooled.push(pool_features(&vectors[offset..offset + reqs.len()])?);
        offset += reqs.len();
    }

    let mut feature_iter = pooled.into_iter();
    let mut jobs = Vec::with_capacity(selected.len());
    for fm in &selected {
        let feats: Vec<FeatureVector> = feature_iter.by_ref().take(fm.masks.len()).collect();
        jobs.push((*fm, feats));
    }
    jobs.into_par_iter()
        .map(|(fm, feats)| {
            let frame = scene.frame(fm.frame_id).expect("checked above");
            let vis = FrameVisibility::compute(&scene.cloud, frame, &cfg.projection);
            let mut instances = Vec::with_capacity(fm.masks.len());
            for (m, f) in fm.masks.iter().zip(feats) {
                match vis.lift_mask(m) {
                    Ok(mask) => instances.push((m.id.clone(), mask, f)),
                    Err(Error::EmptyLift { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(LiftedFrame {
                frame_id: fm.frame_id,
                instances,
            })
        })
        .collect()
}

/// Feeds lifted frames through the memory bank in frame order.
pub fn fuse(lifted: &[LiftedFrame], point_count: usize, cfg: &PipelineConfig) -> Result<ProposalSet> {
    let mut bank = MemoryBank::new(point_count, cfg.fusion)?;
    let mut order: Vec<&LiftedFrame> = lifted.iter().collect();
    order.sort_by_key(|f| f.frame_id);
    for f in order {
        let items = f.instances.iter().map(|(_, m, v)| (m.clone(), v.clone())).collect();
        bank.ingest_frame(items, f.frame_id)?;
    }
    bank.finalize()
}

pub fn assemble_features(
    set: &ProposalSet,
    scene: &Scene,
    cfg: &PipelineConfig,
    provider: &dyn FeatureProvider,
) -> Result<AssembledSet> {
    let views = SceneViews::new(&scene.cloud, selected_frames(scene, cfg), cfg.projection);
    assemble_set_features(set, &views, provider, &cfg.features.params())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Conditional,
    Simple,
    #[serde(rename = "3d-only")]
    Only3d,
    #[serde(rename = "2d-only")]
    Only2d,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Only3d, Mode::Only2d, Mode::Simple, Mode::Conditional];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Conditional => "conditional",
            Mode::Simple => "simple",
            Mode::Only3d => "3d-only",
            Mode::Only2d => "2d-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown integration mode {s:?}")))
    }
}

/// Combines the two pathways; only the conditional mode yields a report.
pub fn integrate(
    mode: Mode,
    set3d: &ProposalSet,
    set2d: &ProposalSet,
    config: &IntegrationConfig,
) -> Result<(ProposalSet, Option<IntegrationReport>)> {
    match mode {
        Mode::Conditional => {
            let out = conditional_integrate(set3d, set2d, config)?;
            Ok((out.proposals, Some(out.report)))
        }
        Mode::Simple => Ok((simple_integrate(set3d, set2d)?, None)),
        Mode::Only3d => Ok((set3d.clone(), None)),
        Mode::Only2d => Ok((set2d.clone(), None)),
    }
}

pub fn evaluate_set(
    set: &ProposalSet,
    gt: &GroundTruth,
    class_features: &BTreeMap<u32, FeatureVector>,
    cfg: &PipelineConfig,
) -> Result<EvalResult> {
    let preds = assign_classes(set, class_features)?;
    evaluate(&preds, gt, &cfg.eval)
}

/// Everything one scene produces, from pathway inputs to evaluations.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub lifted: Vec<LiftedFrame>,
    pub set3d: ProposalSet,
    pub set2d: ProposalSet,
    pub outputs: BTreeMap<Mode, ProposalSet>,
    pub report: IntegrationReport,
    pub evals: BTreeMap<Mode, EvalResult>,
}

/// Lift, fuse, assemble 3D features, integrate in every mode and, with
/// annotations, evaluate.
pub fn run_scene(
    scene: &Scene,
    set3d: &ProposalSet,
    masks2d: &[FrameMasks],
    class_features: Option<&BTreeMap<u32, FeatureVector>>,
    cfg: &PipelineConfig,
) -> Result<SceneRun> {
    let provider = build_provider(cfg, scene, class_features)?;
    let lifted = lift_frames(scene, masks2d, cfg, provider.as_ref())?;
    let set2d = fuse(&lifted, scene.cloud.len(), cfg)?;
    let set3d = assemble_features(set3d, scene, cfg, provider.as_ref())?.set;
    let mut outputs = BTreeMap::new();
    let mut report = None;
    for mode in Mode::ALL {
        let (set, r) = integrate(mode, &set3d, &set2d, &cfg.integration)?;
        if r.is_some() {
            report = r;
        }
        outputs.insert(mode, set);
    }
    let mut evals = BTreeMap::new();
    if let (Some(gt), Some(cf)) = (&scene.ground_truth, class_features) {
        for (mode, set) in &outputs {
            evals.insert(*mode, evaluate_set(set, gt, cf, cfg)?);
        }
    }
    Ok(SceneRun {
        lifted,
        set3d,
        set2d,
        outputs,
        report: report.expect("conditional mode always runs"),
        evals,
    })
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub theta_3d: f64,
    pub theta_2d: f64,
    pub proposals: usize,
    pub merges: usize,
    pub eval: Option<EvalResult>,
}

pub const SWEEP_GRID: [f64; 3] = [0.25, 0.5, 0.9];

/// Conditional integration over every `(theta_3d, theta_2d)` pair.
pub fn sweep(
    set3d: &ProposalSet,
    set2d: &ProposalSet,
    grid: &[(f64, f64)],
    base: &IntegrationConfig,
    eval: Option<(&GroundTruth, &BTreeMap<u32, FeatureVector>, &PipelineConfig)>,
) -> Result<Vec<SweepRow>> {
    grid.par_iter()
        .map(|&(theta_3d, theta_2d)| {
            let cfg = IntegrationConfig {
                theta_3d,
                theta_2d,
                ..*base
            };
            let out = conditional_integrate(set3d, set2d, &cfg)?;
            let merges = out
                .report
                .decisions_2d
                .iter()
                .filter(|d| d.scenario == crate::integration::Scenario::S1Merge)
                .count();
            let eval = match eval {
                Some((gt, cf, pc)) => Some(evaluate_set(&out.proposals, gt, cf, pc)?),
                None => None,
            };
            Ok(SweepRow {
                theta_3d,
                theta_2d,
                proposals: out.proposals.len(),
                merges,
                eval,
            })
        })
        .collect()
}

pub fn default_grid() -> Vec<(f64, f64)> {
    SWEEP_GRID
        .iter()
        .flat_map(|&a| SWEEP_GRID.iter().map(move |&b| (a, b)))
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    use std::fmt::Write as _;
    let mut out = format!(
        "{:>8} {:>8} {:>9} {:>6} {:>6} {:>6} {:>6}\n",
        "theta3d", "theta2d", "proposals", "merges", "AP", "AP50", "AP25"
    );
    for r in rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let e = r.eval.as_ref().map(|e| e.overall);
        let _ = writeln!(
            out,
            "{:>8.2} {:>8.2} {:>9} {:>6} {:>6} {:>6} {:>6}",
            r.theta_3d,
            r.theta_2d,
            r.proposals,
            r.merges,
            f(e.map(|m| m.ap)),
            f(e.map(|m| m.ap50)),
            f(e.map(|m| m.ap25))
        );
    }
    out
}
