//! The `dualpath` command line: one subcommand per stage plus `run-all`.
//!
//! Every command writes its outputs under `--out` together with a
//! `manifest_<command>.json` that echoes the config and hashes inputs and
//! outputs. Wall-clock fields live under `volatile`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{hash_embed, rank_by_query, set_crop_requests, SceneViews};
use crate::io::formats::{crops_to_jsonl, load_proposals, proposals_from_json, read_text, write_text, CropRequest};
use crate::io::{self, fvec, ply};
use crate::pipeline::{
    assemble_features, build_provider, default_grid, evaluate_set, fuse, integrate, lift_frames, mask2d_requests,
    selected_frames, sweep, sweep_table, LiftedFrame, Mode,
};
use crate::projection::FrameMasks;
use crate::scene::{FeatureVector, ProposalSet, Scene};
use crate::synth::{corrupt_to_pathways, generate_scene};

pub const SCENE_DIR: &str = "scene";
pub const MASKS_DIR: &str = "masks2d";
pub const LIFTED_DIR: &str = "lifted";
pub const PROPOSALS_3D: &str = "proposals_3d.json";
pub const PROPOSALS_2D: &str = "proposals_2d.json";
pub const FEATURES_3D: &str = "proposals_3d_features.json";
pub const CROPS: &str = "crops.jsonl";

pub fn integrated_file(mode: Mode) -> String {
    format!("integrated_{}.json", mode.name())
}

pub const REPORT: &str = "report_conditional.json";

#[derive(Debug, Parser)]
#[command(name = "dualpath", version, about = "Dual-pathway 3D instance proposal fusion")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `integration.theta_3d=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Sets both `seed` and `synth.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with both pathways' raw proposals.
    Synth,
    /// Lift the 2D masks of the sampled frames into the cloud.
    Lift {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        masks: PathBuf,
    },
    /// Fuse lifted frames into scene-level 2D-pathway proposals.
    Fuse {
        #[arg(long)]
        lifted: PathBuf,
        /// Only consulted for the point count when no lifted frame exists.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Write the crop requests a feature provider must answer.
    ExportCrops {
        #[arg(long)]
        scene: PathBuf,
        /// Crops for 3D proposals.
        #[arg(long, conflicts_with = "masks", required_unless_present = "masks")]
        proposals: Option<PathBuf>,
        /// Crops for per-frame 2D masks.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Attach multi-view crop features to 3D proposals.
    Features {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
    },
    /// Combine the two proposal sets.
    Integrate {
        #[arg(long = "proposals-3d")]
        proposals_3d: PathBuf,
        #[arg(long = "proposals-2d")]
        proposals_2d: PathBuf,
        #[arg(long, default_value = "conditional")]
        mode: Mode,
    },
    /// Rank proposals by cosine similarity to a query feature.
    Query {
        #[arg(long)]
        proposals: PathBuf,
        /// DPFV file holding one vector.
        #[arg(long, group = "q")]
        vector: Option<PathBuf>,
        /// Text embedded with the hash encoder.
        #[arg(long, group = "q")]
        text: Option<String>,
        /// Class name looked up in the scene's class features.
        #[arg(long, group = "q", requires = "scene")]
        class: Option<String>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Score proposals against the scene's ground truth.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
    },
    /// Conditional integration over the threshold grid.
    Sweep {
        #[arg(long = "proposals-3d")]
        proposals_3d: PathBuf,
        #[arg(long = "proposals-2d")]
        proposals_2d: PathBuf,
        /// Evaluate each row when the scene is annotated.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Write the cloud as PLY colored by proposal.
    ExportColored {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
    },
    /// Every stage in sequence; synthesizes a scene unless inputs are given.
    RunAll {
        #[arg(long, requires_all = ["proposals_3d", "masks"])]
        scene: Option<PathBuf>,
        #[arg(long = "proposals-3d", requires = "scene")]
        proposals_3d: Option<PathBuf>,
        #[arg(long, requires = "scene")]
        masks: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Lift { .. } => "lift",
            Command::Fuse { .. } => "fuse",
            Command::ExportCrops { .. } => "export-crops",
            Command::Features { .. } => "features",
            Command::Integrate { .. } => "integrate",
            Command::Query { .. } => "query",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::ExportColored { .. } => "export-colored",
            Command::RunAll { .. } => "run-all",
        }
    }
}

/// Parses the process arguments, runs, and maps errors to exit code 1.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dualpath {}: {e}", cli.command.name());
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = PipelineConfig::load(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::fs::create_dir_all(&g.out).map_err(|e| Error::io(&g.out, e))?;
    let mut m = Manifest::new(cli.command.name(), &cfg, &g.out);
    execute(&cli.command, &cfg, &mut m)?;
    m.write()
}

fn execute(cmd: &Command, cfg: &PipelineConfig, m: &mut Manifest) -> Result<()> {
    match cmd {
        Command::Synth => synth(cfg, m).map(|_| ()),
        Command::Lift { scene, masks } => {
            let sc = load_scene_with(scene, m)?;
            let cf = load_class_features(scene, &sc, m)?;
            m.input(masks)?;
            lift(&sc, &io::load_masks_dir(masks)?, cf.as_ref(), cfg, m).map(|_| ())
        }
        Command::Fuse { lifted, scene } => {
            m.input(lifted)?;
            let frames = load_lifted(lifted)?;
            let point_count = match (frames.first(), scene) {
                (Some((_, set)), _) => set.point_count(),
                (None, Some(s)) => load_scene_with(s, m)?.cloud.len(),
                (None, None) => {
                    return Err(Error::InvalidValue(format!(
                        "{} holds no lifted frame; pass --scene for the point count",
                        lifted.display()
                    )))
                }
            };
            let lifted = frames
                .iter()
                .map(|(f, set)| LiftedFrame::from_proposals(*f, set))
                .collect::<Result<Vec<_>>>()?;
            let set = fuse(&lifted, point_count, cfg)?;
            m.save_proposals(PROPOSALS_2D, &set)
        }
        Command::ExportCrops { scene, proposals, masks } => {
            let sc = load_scene_with(scene, m)?;
            let requests: Vec<CropRequest> = match (proposals, masks) {
                (Some(p), _) => {
                    let set = load_proposals_with(p, m)?;
                    let views = SceneViews::new(&sc.cloud, selected_frames(&sc, cfg), cfg.projection);
                    let (per, skipped) = set_crop_requests(&set, &views, &cfg.features.params())?;
                    m.note("skipped", json!(skipped));
                    per.into_iter().flatten().collect()
                }
                (None, Some(d)) => {
                    m.input(d)?;
                    mask2d_requests(&io::load_masks_dir(d)?, cfg).into_iter().flatten().collect()
                }
                (None, None) => unreachable!("clap requires one of --proposals/--masks"),
            };
            m.note("requests", json!(requests.len()));
            m.write_text(CROPS, &crops_to_jsonl(&requests))
        }
        Command::Features { scene, proposals } => {
            let sc = load_scene_with(scene, m)?;
            let cf = load_class_features(scene, &sc, m)?;
            let set = load_proposals_with(proposals, m)?;
            features(&sc, &set, cf.as_ref(), cfg, m).map(|_| ())
        }
        Command::Integrate {
            proposals_3d,
            proposals_2d,
            mode,
        } => {
            let set3d = load_proposals_with(proposals_3d, m)?;
            let set2d = load_proposals_with(proposals_2d, m)?;
            integrate_one(*mode, &set3d, &set2d, cfg, m).map(|_| ())
        }
        Command::Query {
            proposals,
            vector,
            text,
            class,
            scene,
            top,
        } => {
            let set = load_proposals_with(proposals, m)?;
            let q = match (vector, text, class) {
                (Some(v), _, _) => {
                    m.input(v)?;
                    let (_, mut vs) = fvec::read_features(v)?;
                    if vs.len() != 1 {
                        return Err(Error::InvalidValue(format!(
                            "{}: a query file holds exactly one vector, found {}",
                            v.display(),
                            vs.len()
                        )));
                    }
                    vs.remove(0).to_unit()?
                }
                (None, Some(t), _) => hash_embed(t, cfg.feature_dim, cfg.seed),
                (None, None, Some(name)) => {
                    let dir = scene.as_ref().expect("clap requires --scene with --class");
                    let sc = load_scene_with(dir, m)?;
                    class_query(dir, &sc, name, m)?
                }
                _ => return Err(Error::Config("pass one of --vector, --text or --class".into())),
            };
            let ranking = rank_by_query(&set, &q, *top)?;
            let hits: Vec<Value> = ranking
                .hits
                .iter()
                .map(|(id, s)| json!({"id": id, "similarity": s}))
                .collect();
            for (k, (id, s)) in ranking.hits.iter().enumerate() {
                println!("{:>3} {s:>8.4} {id}", k + 1);
            }
            m.write_json("query.json", &json!({"hits": hits, "skipped": ranking.skipped}))
        }
        Command::Eval { scene, proposals } => {
            let sc = load_scene_with(scene, m)?;
            let cf = load_class_features(scene, &sc, m)?;
            let set = load_proposals_with(proposals, m)?;
            let (gt, cf) = annotations(&sc, cf.as_ref(), scene)?;
            let result = evaluate_set(&set, gt, cf, cfg)?;
            print!("{}", result.to_table());
            m.write_text("eval.json", &result.to_json())
        }
        Command::Sweep {
            proposals_3d,
            proposals_2d,
            scene,
        } => {
            let set3d = load_proposals_with(proposals_3d, m)?;
            let set2d = load_proposals_with(proposals_2d, m)?;
            let annotated = match scene {
                Some(dir) => {
                    let sc = load_scene_with(dir, m)?;
                    let cf = load_class_features(dir, &sc, m)?;
                    Some((sc, cf, dir))
                }
                None => None,
            };
            let eval = match &annotated {
                Some((sc, cf, dir)) => {
                    let (gt, cf) = annotations(sc, cf.as_ref(), dir)?;
                    Some((gt, cf, cfg))
                }
                None => None,
            };
            run_sweep(&set3d, &set2d, eval, cfg, m)
        }
        Command::ExportColored { scene, proposals } => {
            let sc = load_scene_with(scene, m)?;
            let set = load_proposals_with(proposals, m)?;
            export_colored(&sc, &set, m)
        }
        Command::RunAll {
            scene,
            proposals_3d,
            masks,
        } => run_all(scene.as_deref(), proposals_3d.as_deref(), masks.as_deref(), cfg, m),
    }
}

fn synth(cfg: &PipelineConfig, m: &mut Manifest) -> Result<(Scene, ProposalSet, Vec<FrameMasks>)> {
    let s = generate_scene(&cfg.synth, cfg.feature_dim)?;
    let p = corrupt_to_pathways(&s, &cfg.synth)?;
    let dir = m.out.join(SCENE_DIR);
    io::save_scene(&dir, &s.scene)?;
    io::save_class_features(&dir, &s.class_features)?;
    m.output(&dir)?;
    m.save_proposals(PROPOSALS_3D, &p.set3d)?;
    let masks = m.out.join(MASKS_DIR);
    io::save_masks_dir(&masks, &p.masks2d)?;
    m.output(&masks)?;
    Ok((s.scene, p.set3d, p.masks2d))
}

fn lift(
    scene: &Scene,
    masks: &[FrameMasks],
    cf: Option<&BTreeMap<u32, FeatureVector>>,
    cfg: &PipelineConfig,
    m: &mut Manifest,
) -> Result<Vec<LiftedFrame>> {
    let provider = build_provider(cfg, scene, cf)?;
    let lifted = lift_frames(scene, masks, cfg, provider.as_ref())?;
    let dir = m.out.join(LIFTED_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for f in &lifted {
        io::save_proposals(&f.to_proposals(scene.cloud.len())?, &io::masks_path(&dir, f.frame_id))?;
    }
    m.output(&dir)?;
    m.note("lifted_instances", json!(lifted.iter().map(|f| f.instances.len()).sum::<usize>()));
    Ok(lifted)
}

fn features(
    scene: &Scene,
    set: &ProposalSet,
    cf: Option<&BTreeMap<u32, FeatureVector>>,
    cfg: &PipelineConfig,
    m: &mut Manifest,
) -> Result<ProposalSet> {
    let provider = build_provider(cfg, scene, cf)?;
    let assembled = assemble_features(set, scene, cfg, provider.as_ref())?;
    m.note("skipped", json!(assembled.skipped));
    m.save_proposals(FEATURES_3D, &assembled.set)?;
    Ok(assembled.set)
}

fn integrate_one(
    mode: Mode,
    set3d: &ProposalSet,
    set2d: &ProposalSet,
    cfg: &PipelineConfig,
    m: &mut Manifest,
) -> Result<ProposalSet> {
    let (out, report) = integrate(mode, set3d, set2d, &cfg.integration)?;
    m.save_proposals(&integrated_file(mode), &out)?;
    if let Some(r) = report {
        m.write_text(REPORT, &r.to_json(set3d, set2d, &out))?;
    }
    Ok(out)
}

fn run_sweep(
    set3d: &ProposalSet,
    set2d: &ProposalSet,
    eval: Option<(&crate::scene::GroundTruth, &BTreeMap<u32, FeatureVector>, &PipelineConfig)>,
    cfg: &PipelineConfig,
    m: &mut Manifest,
) -> Result<()> {
    let rows = sweep(set3d, set2d, &default_grid(), &cfg.integration, eval)?;
    let table = sweep_table(&rows);
    print!("{table}");
    m.write_text("sweep.txt", &table)?;
    m.write_json("sweep.json", &json!(rows))
}

fn export_colored(scene: &Scene, set: &ProposalSet, m: &mut Manifest) -> Result<()> {
    let mut colors = vec![[128u8, 128, 128]; scene.cloud.len()];
    let mut painted = vec![false; scene.cloud.len()];
    for p in set.iter() {
        let c = proposal_color(&p.id);
        for &i in p.mask.indices() {
            if !painted[i as usize] {
                painted[i as usize] = true;
                colors[i as usize] = c;
            }
        }
    }
    let path = m.out.join("colored.ply");
    ply::write_ply(&path, &scene.cloud, Some(colors.as_slice()))?;
    m.output(&path)
}

/// A saturated color derived from the id, stable across runs.
pub fn proposal_color(id: &str) -> [u8; 3] {
    let h = io::sha256_hex(id.as_bytes());
    let hue = u32::from_str_radix(&h[..4], 16).unwrap_or(0) as f64 / 65536.0 * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let q = |v: f64| (40.0 + 215.0 * v).round() as u8;
    [q(r), q(g), q(b)]
}

fn run_all(
    scene: Option<&Path>,
    proposals_3d: Option<&Path>,
    masks: Option<&Path>,
    cfg: &PipelineConfig,
    m: &mut Manifest,
) -> Result<()> {
    let (sc, raw3d, masks2d, cf) = match (scene, proposals_3d, masks) {
        (Some(s), Some(p), Some(d)) => {
            let sc = load_scene_with(s, m)?;
            let cf = load_class_features(s, &sc, m)?;
            let raw = load_proposals_with(p, m)?;
            m.input(d)?;
            (sc, raw, io::load_masks_dir(d)?, cf)
        }
        _ => {
            let (sc, raw, masks) = synth(cfg, m)?;
            let dir = m.out.join(SCENE_DIR);
            let cf = load_class_features(&dir, &sc, &mut Manifest::sink())?;
            (sc, raw, masks, cf)
        }
    };
    let lifted = lift(&sc, &masks2d, cf.as_ref(), cfg, m)?;
    let set2d = fuse(&lifted, sc.cloud.len(), cfg)?;
    m.save_proposals(PROPOSALS_2D, &set2d)?;
    let set3d = features(&sc, &raw3d, cf.as_ref(), cfg, m)?;
    let mut outputs = Vec::new();
    for mode in Mode::ALL {
        outputs.push((mode, integrate_one(mode, &set3d, &set2d, cfg, m)?));
    }
    let annotated = match (&sc.ground_truth, &cf) {
        (Some(gt), Some(cf)) => Some((gt, cf)),
        _ => None,
    };
    if let Some((gt, cf)) = annotated {
        let mut evals = serde_json::Map::new();
        for (mode, set) in &outputs {
            let r = evaluate_set(set, gt, cf, cfg)?;
            println!("== {mode}");
            print!("{}", r.to_table());
            evals.insert(mode.name().into(), serde_json::from_str(&r.to_json()).expect("eval json"));
        }
        m.write_json("eval.json", &Value::Object(evals))?;
    }
    run_sweep(&set3d, &set2d, annotated.map(|(g, c)| (g, c, cfg)), cfg, m)?;
    let (_, conditional) = outputs.last().expect("modes ran");
    export_colored(&sc, conditional, m)
}

fn load_scene_with(dir: &Path, m: &mut Manifest) -> Result<Scene> {
    m.input(dir)?;
    io::load_scene(dir)
}

fn load_proposals_with(path: &Path, m: &mut Manifest) -> Result<ProposalSet> {
    m.input(path)?;
    load_proposals(path)
}

fn load_class_features(
    dir: &Path,
    scene: &Scene,
    m: &mut Manifest,
) -> Result<Option<BTreeMap<u32, FeatureVector>>> {
    let path = dir.join(io::CLASS_FEATURES_FILE);
    match (&scene.ground_truth, path.exists()) {
        (Some(gt), true) => {
            m.input(&path)?;
            Ok(Some(io::load_class_features(&path, gt.classes())?))
        }
        _ => Ok(None),
    }
}

fn annotations<'a>(
    scene: &'a Scene,
    cf: Option<&'a BTreeMap<u32, FeatureVector>>,
    dir: &Path,
) -> Result<(&'a crate::scene::GroundTruth, &'a BTreeMap<u32, FeatureVector>)> {
    match (&scene.ground_truth, cf) {
        (Some(gt), Some(cf)) => Ok((gt, cf)),
        _ => Err(Error::InvalidValue(format!(
            "{} lacks {}, {} or {}",
            dir.display(),
            io::GT_FILE,
            io::CLASSES_FILE,
            io::CLASS_FEATURES_FILE
        ))),
    }
}

fn class_query(dir: &Path, scene: &Scene, name: &str, m: &mut Manifest) -> Result<FeatureVector> {
    let cf = load_class_features(dir, scene, m)?;
    let (gt, cf) = annotations(scene, cf.as_ref(), dir)?;
    let id = gt
        .classes()
        .iter()
        .find(|(_, c)| c.name == name)
        .map(|(id, _)| *id)
        .ok_or_else(|| Error::InvalidValue(format!("unknown class {name:?}")))?;
    Ok(cf[&id].clone())
}

/// Lifted frame files, keyed by the frame id in their names.
fn load_lifted(dir: &Path) -> Result<Vec<(u32, ProposalSet)>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(id) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".json")) else {
            continue;
        };
        let frame: u32 = id
            .parse()
            .map_err(|_| Error::InvalidValue(format!("{}: no frame id in the file name", path.display())))?;
        out.push((frame, proposals_from_json(&read_text(&path)?, &path)?));
    }
    out.sort_by_key(|x| x.0);
    Ok(out)
}

/// Run record: command, config echo, hashed inputs and outputs.
pub struct Manifest {
    command: String,
    config: Value,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    notes: BTreeMap<String, Value>,
    started: f64,
    enabled: bool,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl Manifest {
    fn new(command: &str, cfg: &PipelineConfig, out: &Path) -> Self {
        Self {
            command: command.into(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            out: out.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: BTreeMap::new(),
            started: unix_now(),
            enabled: true,
        }
    }

    fn sink() -> Self {
        Self {
            enabled: false,
            ..Self::new("", &PipelineConfig::default(), Path::new("."))
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        if self.enabled {
            hash_into(path, &path.display().to_string(), &mut self.inputs)?;
        }
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(&self.out).unwrap_or(path).display().to_string();
        hash_into(path, &rel, &mut self.outputs)
    }

    fn note(&mut self, key: &str, value: Value) {
        self.notes.insert(key.into(), value);
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        write_text(&path, text)?;
        self.output(&path)
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("json value");
        s.push('\n');
        self.write_text(name, &s)
    }

    fn save_proposals(&mut self, name: &str, set: &ProposalSet) -> Result<()> {
        let path = self.out.join(name);
        io::save_proposals(set, &path)?;
        self.output(&path)
    }

    fn write(self) -> Result<()> {
        let doc = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "notes": self.notes,
            "volatile": {"started_unix": self.started, "finished_unix": unix_now()},
        });
        let path = self.out.join(format!("manifest_{}.json", self.command));
        let mut s = serde_json::to_string_pretty(&doc).expect("manifest json");
        s.push('\n');
        write_text(&path, &s)
    }
}

/// Hashes a file, or every file below a directory, into `into`.
fn hash_into(path: &Path, label: &str, into: &mut BTreeMap<String, String>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            let name = e.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            hash_into(&e, &format!("{label}/{name}"), into)?;
        }
        Ok(())
    } else {
        into.insert(label.to_string(), io::sha256_file(path)?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_modes_and_globals() {
        let cli = Cli::try_parse_from([
            "dualpath",
            "integrate",
            "--proposals-3d",
            "a.json",
            "--proposals-2d",
            "b.json",
            "--mode",
            "3d-only",
            "--set",
            "seed=3",
            "--out",
            "x",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Integrate { mode: Mode::Only3d, .. }));
        assert_eq!(cli.global.overrides, vec!["seed=3".to_string()]);
        assert!(Cli::try_parse_from(["dualpath", "integrate", "--mode", "bogus"]).is_err());
    }

    #[test]
    fn colors_are_stable_and_bright() {
        assert_eq!(proposal_color("a"), proposal_color("a"));
        let c = proposal_color("3d_0001");
        assert!(c.iter().any(|&v| v == 255) && c.iter().all(|&v| v >= 40));
    }
}
