//! Conditional integration of 3D-pathway and 2D-pathway proposals.
//!
//! Two stages:
//!
//! 1. **Matching.** The symmetric IoU matrix between every 3D and 2D
//!    proposal is computed. Proposals whose best cross-modality IoU is at
//!    most `eps_unique` (zero by default) pass straight to the output.
//! 2. **Adaptive integration.** Each remaining 2D proposal, largest first,
//!    is paired with its highest-IoU remaining 3D proposal and the pair is
//!    dispatched on the two directional IoUs (intersection over the 3D mask,
//!    intersection over the 2D mask):
//!
//!    | 2D-directional ≥ θ2d | 3D-directional ≥ θ3d | outcome                       |
//!    |----------------------|----------------------|-------------------------------|
//!    | yes                  | yes                  | merge into the union          |
//!    | no                   | no                   | keep both                     |
//!    | yes                  | no                   | keep the 2D proposal          |
//!    | no                   | yes                  | keep the 3D proposal          |
//!
//! A merge consumes its 3D partner. The other outcomes leave the partner
//! available to later 2D proposals. After the sweep every remaining 3D
//! proposal is emitted once unless it was merged, or was only ever
//! displaced by a 2D subgroup.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::PreparedMask;
use crate::scene::{FeatureVector, Proposal, ProposalSet, Source};

/// Intersection counts between every 3D proposal `i` and 2D proposal `j`,
/// from which the symmetric and both directional IoUs derive.
#[derive(Debug, Clone, PartialEq)]
pub struct IoUMatrix {
    rows: usize,
    cols: usize,
    inter: Vec<u32>,
    size3d: Vec<u32>,
    size2d: Vec<u32>,
}

impl IoUMatrix {
    pub fn compute(set3d: &ProposalSet, set2d: &ProposalSet) -> Result<Self> {
        if set3d.point_count() != set2d.point_count() {
            return Err(Error::DimensionMismatch {
                expected: set3d.point_count(),
                found: set2d.point_count(),
            });
        }
        let n = set3d.point_count();
        let cols = set2d.len();
        let inter: Vec<u32> = set3d
            .proposals()
            .par_iter()
            .flat_map_iter(|a| {
                let prepared = PreparedMask::new(&a.mask, n);
                set2d
                    .iter()
                    .map(move |b| prepared.intersection_count(&b.mask) as u32)
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Self {
            rows: set3d.len(),
            cols,
            inter,
            size3d: set3d.iter().map(|p| p.mask.len() as u32).collect(),
            size2d: set2d.iter().map(|p| p.mask.len() as u32).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn intersection(&self, i: usize, j: usize) -> u32 {
        self.inter[i * self.cols + j]
    }

    /// `|A ∩ B| / |A ∪ B|`.
    pub fn sym(&self, i: usize, j: usize) -> f64 {
        let n = self.intersection(i, j) as f64;
        n / (self.size3d[i] as f64 + self.size2d[j] as f64 - n)
    }

    /// `|A ∩ B| / |A|`, A the 3D mask.
    pub fn dir3d(&self, i: usize, j: usize) -> f64 {
        self.intersection(i, j) as f64 / self.size3d[i] as f64
    }

    /// `|A ∩ B| / |B|`, B the 2D mask.
    pub fn dir2d(&self, i: usize, j: usize) -> f64 {
        self.intersection(i, j) as f64 / self.size2d[j] as f64
    }

    pub fn triple(&self, i: usize, j: usize) -> IoUTriple {
        IoUTriple {
            iou: self.sym(i, j),
            iou_3d: self.dir3d(i, j),
            iou_2d: self.dir2d(i, j),
        }
    }

    pub fn row_max(&self, i: usize) -> f64 {
        (0..self.cols).map(|j| self.sym(i, j)).fold(0.0, f64::max)
    }

    pub fn col_max(&self, j: usize) -> f64 {
        (0..self.rows).map(|i| self.sym(i, j)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUTriple {
    pub iou: f64,
    pub iou_3d: f64,
    pub iou_2d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub theta_3d: f64,
    pub theta_2d: f64,
    pub eps_unique: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            theta_3d: 0.9,
            theta_2d: 0.5,
            eps_unique: 0.0,
        }
    }
}

impl IntegrationConfig {
    pub fn new(theta_3d: f64, theta_2d: f64) -> Self {
        Self {
            theta_3d,
            theta_2d,
            eps_unique: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_3d", self.theta_3d),
            ("theta_2d", self.theta_2d),
            ("eps_unique", self.eps_unique),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("integration.{name} = {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Unique,
    S1Merge,
    S2KeepBoth,
    S3Keep2d,
    S4Keep3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Disposition {
    Unique,
    MergedInto(usize),
    SuppressedBy(usize),
    Retained,
    KeptViaS4(usize),
}

impl Disposition {
    pub fn name(&self) -> &'static str {
        match self {
            Disposition::Unique => "unique",
            Disposition::MergedInto(_) => "merged_into",
            Disposition::SuppressedBy(_) => "suppressed_by",
            Disposition::Retained => "retained",
            Disposition::KeptViaS4(_) => "kept_via_s4",
        }
    }

    pub fn partner(&self) -> Option<usize> {
        match *self {
            Disposition::MergedInto(j) | Disposition::SuppressedBy(j) | Disposition::KeptViaS4(j) => Some(j),
            _ => None,
        }
    }

    /// Whether the 3D proposal itself appears in the output.
    pub fn emitted(&self) -> bool {
        matches!(
            self,
            Disposition::Unique | Disposition::Retained | Disposition::KeptViaS4(_)
        )
    }
}

/// Decision for one 2D proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision2d {
    pub scenario: Scenario,
    pub partner: Option<usize>,
    pub iou: Option<IoUTriple>,
}

/// Where an output proposal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Unique3d(usize),
    Unique2d(usize),
    Merged { i: usize, j: usize },
    From2d { j: usize, scenario: Scenario },
    From3d { i: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationReport {
    pub config: IntegrationConfig,
    pub decisions_2d: Vec<Decision2d>,
    pub dispositions_3d: Vec<Disposition>,
    pub origins: Vec<Origin>,
    /// Merges whose averaged feature was degenerate; the 3D feature was kept.
    pub feature_fallbacks: Vec<(usize, usize)>,
}

/// Result of the matching stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    pub unique_3d: Vec<usize>,
    pub unique_2d: Vec<usize>,
    pub remaining_3d: Vec<usize>,
    pub remaining_2d: Vec<usize>,
}

/// Splits both sets into cross-modality-unique and overlapping proposals.
pub fn match_unique(matrix: &IoUMatrix, eps_unique: f64) -> Matching {
    let (unique_3d, remaining_3d) = (0..matrix.rows()).partition(|&i| matrix.row_max(i) <= eps_unique);
    let (unique_2d, remaining_2d) = (0..matrix.cols()).partition(|&j| matrix.col_max(j) <= eps_unique);
    Matching {
        unique_3d,
        unique_2d,
        remaining_3d,
        remaining_2d,
    }
}

/// Component-wise mean of two features, renormalized.
pub fn merge_features(f3d: &FeatureVector, f2d: &FeatureVector) -> Result<FeatureVector> {
    if f3d.dim() != f2d.dim() {
        return Err(Error::DimensionMismatch {
            expected: f3d.dim(),
            found: f2d.dim(),
        });
    }
    let mean: Vec<f64> = f3d
        .values()
        .iter()
        .zip(f2d.values())
        .map(|(a, b)| 0.5 * (*a as f64 + *b as f64))
        .collect();
    FeatureVector::normalized_from(&mean)
}

/// The sweep's decisions before any proposal is materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub decisions_2d: Vec<Decision2d>,
    pub dispositions_3d: Vec<Disposition>,
    /// Output order after the unique proposals.
    pub emissions: Vec<Origin>,
}

/// Runs the adaptive sweep over the proposals left by [`match_unique`].
pub fn plan_adaptive(
    matrix: &IoUMatrix,
    sizes_2d: &[usize],
    matching: &Matching,
    config: &IntegrationConfig,
) -> SweepPlan {
    let unique_decision = Decision2d {
        scenario: Scenario::Unique,
        partner: None,
        iou: None,
    };
    let mut decisions_2d = vec![unique_decision; matrix.cols()];
    let mut dispositions_3d = vec![Disposition::Unique; matrix.rows()];

    let mut order = matching.remaining_2d.clone();
    order.sort_by(|&a, &b| sizes_2d[b].cmp(&sizes_2d[a]).then(a.cmp(&b)));

    #[derive(Default, Clone, Copy)]
    struct Events {
        consumed: Option<usize>,
        kept: Option<usize>,
        retained: bool,
        suppressed: Option<usize>,
    }
    let mut events = vec![Events::default(); matrix.rows()];
    let mut emissions = Vec::new();

    for &j in &order {
        let mut best: Option<(usize, f64)> = None;
        for &i in &matching.remaining_3d {
            if events[i].consumed.is_some() {
                continue;
            }
            let s = matrix.sym(i, j);
            if s > 0.0 && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let Some((i, _)) = best else {
            decisions_2d[j] = Decision2d {
                scenario: Scenario::S2KeepBoth,
                partner: None,
                iou: None,
            };
            emissions.push(Origin::From2d {
                j,
                scenario: Scenario::S2KeepBoth,
            });
            continue;
        };
        let t = matrix.triple(i, j);
        let high_2d = t.iou_2d >= config.theta_2d;
        let high_3d = t.iou_3d >= config.theta_3d;
        let scenario = match (high_2d, high_3d) {
            (true, true) => Scenario::S1Merge,
            (false, false) => Scenario::S2KeepBoth,
            (true, false) => Scenario::S3Keep2d,
            (false, true) => Scenario::S4Keep3d,
        };
        match scenario {
            Scenario::S1Merge => {
                events[i].consumed = Some(j);
                emissions.push(Origin::Merged { i, j });
            }
            Scenario::S2KeepBoth => {
                events[i].retained = true;
                emissions.push(Origin::From2d { j, scenario });
            }
            Scenario::S3Keep2d => {
                events[i].suppressed.get_or_insert(j);
                emissions.push(Origin::From2d { j, scenario });
            }
            Scenario::S4Keep3d => {
                events[i].kept.get_or_insert(j);
            }
            Scenario::Unique => unreachable!(),
        }
        decisions_2d[j] = Decision2d {
            scenario,
            partner: Some(i),
            iou: Some(t),
        };
    }

    for &i in &matching.remaining_3d {
        let e = events[i];
        dispositions_3d[i] = if let Some(j) = e.consumed {
            Disposition::MergedInto(j)
        } else if let Some(j) = e.kept {
            Disposition::KeptViaS4(j)
        } else if e.retained {
            Disposition::Retained
        } else if let Some(j) = e.suppressed {
            Disposition::SuppressedBy(j)
        } else {
            Disposition::Retained
        };
        if dispositions_3d[i].emitted() {
            emissions.push(Origin::From3d { i });
        }
    }

    SweepPlan {
        decisions_2d,
        dispositions_3d,
        emissions,
    }
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub proposals: ProposalSet,
    pub report: IntegrationReport,
}

fn claim_id(used: &mut HashSet<String>, id: &str, suffix: &str) -> String {
    let mut candidate = id.to_string();
    let mut n = 1;
    while used.contains(&candidate) {
        candidate = if n == 1 {
            format!("{id}#{suffix}")
        } else {
            format!("{id}#{suffix}{n}")
        };
        n += 1;
    }
    used.insert(candidate.clone());
    candidate
}

/// Matching followed by adaptive integration.
pub fn conditional_integrate(
    set3d: &ProposalSet,
    set2d: &ProposalSet,
    config: &IntegrationConfig,
) -> Result<Integration> {
    config.validate()?;
    let matrix = IoUMatrix::compute(set3d, set2d)?;
    let matching = match_unique(&matrix, config.eps_unique);
    let sizes: Vec<usize> = set2d.iter().map(|p| p.mask.len()).collect();
    let plan = plan_adaptive(&matrix, &sizes, &matching, config);

    let p3 = set3d.proposals();
    let p2 = set2d.proposals();
    let mut origins: Vec<Origin> = matching
        .unique_3d
        .iter()
        .map(|&i| Origin::Unique3d(i))
        .chain(matching.unique_2d.iter().map(|&j| Origin::Unique2d(j)))
        .collect();
    origins.extend(plan.emissions.iter().copied());

    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(origins.len());
    let mut feature_fallbacks = Vec::new();
    for origin in &origins {
        let proposal = match *origin {
            Origin::Unique3d(i) | Origin::From3d { i } => Proposal {
                id: claim_id(&mut used, &p3[i].id, "3d"),
                ..p3[i].clone()
            },
            Origin::Unique2d(j) | Origin::From2d { j, .. } => Proposal {
                id: claim_id(&mut used, &p2[j].id, "2d"),
                ..p2[j].clone()
            },
            Origin::Merged { i, j } => {
                let (a, b) = (&p3[i], &p2[j]);
                let feature = match (&a.feature, &b.feature) {
                    (Some(fa), Some(fb)) => match merge_features(fa, fb) {
                        Ok(f) => Some(f),
                        Err(Error::ZeroVector) => {
                            feature_fallbacks.push((i, j));
                            Some(fa.clone())
                        }
                        Err(e) => return Err(e),
                    },
                    (fa, fb) => fa.clone().or_else(|| fb.clone()),
                };
                let score = match (a.score, b.score) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                };
                Proposal {
                    id: claim_id(&mut used, &format!("{}+{}", a.id, b.id), "m"),
                    mask: a.mask.union(&b.mask),
                    feature,
                    source: Source::Merged,
                    score,
                }
            }
        };
        out.push(proposal);
    }

    Ok(Integration {
        proposals: ProposalSet::new(set3d.point_count(), out)?,
        report: IntegrationReport {
            config: *config,
            decisions_2d: plan.decisions_2d,
            dispositions_3d: plan.dispositions_3d,
            origins,
            feature_fallbacks,
        },
    })
}

/// Baseline: every proposal from both pathways, 3D first.
pub fn simple_integrate(set3d: &ProposalSet, set2d: &ProposalSet) -> Result<ProposalSet> {
    if set3d.point_count() != set2d.point_count() {
        return Err(Error::DimensionMismatch {
            expected: set3d.point_count(),
            found: set2d.point_count(),
        });
    }
    let mut used = HashSet::new();
    let mut out: Vec<Proposal> = Vec::with_capacity(set3d.len() + set2d.len());
    for p in set3d.iter() {
        out.push(Proposal {
            id: claim_id(&mut used, &p.id, "3d"),
            ..p.clone()
        });
    }
    for p in set2d.iter() {
        out.push(Proposal {
            id: claim_id(&mut used, &p.id, "2d"),
            ..p.clone()
        });
    }
    ProposalSet::new(set3d.point_count(), out)
}

#[derive(Serialize)]
struct ReportEntry2d<'a> {
    proposal_2d: &'a str,
    scenario: Scenario,
    partner_3d: Option<&'a str>,
    iou: Option<f64>,
    iou_3d: Option<f64>,
    iou_2d: Option<f64>,
}

#[derive(Serialize)]
struct ReportEntry3d<'a> {
    proposal_3d: &'a str,
    disposition: &'static str,
    partner_2d: Option<&'a str>,
}

#[derive(Serialize)]
struct ReportOutput<'a> {
    id: &'a str,
    origin: &'static str,
    inputs: Vec<&'a str>,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    config: IntegrationConfig,
    proposals_2d: Vec<ReportEntry2d<'a>>,
    proposals_3d: Vec<ReportEntry3d<'a>>,
    outputs: Vec<ReportOutput<'a>>,
    feature_fallbacks: Vec<[&'a str; 2]>,
}

impl IntegrationReport {
    /// JSON audit document keyed by proposal ids.
    pub fn to_json(&self, set3d: &ProposalSet, set2d: &ProposalSet, output: &ProposalSet) -> String {
        let p3 = set3d.proposals();
        let p2 = set2d.proposals();
        let doc = ReportDoc {
            config: self.config,
            proposals_2d: self
                .decisions_2d
                .iter()
                .enumerate()
                .map(|(j, d)| ReportEntry2d {
                    proposal_2d: &p2[j].id,
                    scenario: d.scenario,
                    partner_3d: d.partner.map(|i| p3[i].id.as_str()),
                    iou: d.iou.map(|t| t.iou),
                    iou_3d: d.iou.map(|t| t.iou_3d),
                    iou_2d: d.iou.map(|t| t.iou_2d),
                })
                .collect(),
            proposals_3d: self
                .dispositions_3d
                .iter()
                .enumerate()
                .map(|(i, d)| ReportEntry3d {
                    proposal_3d: &p3[i].id,
                    disposition: d.name(),
                    partner_2d: d.partner().map(|j| p2[j].id.as_str()),
                })
                .collect(),
            outputs: self
                .origins
                .iter()
                .zip(output.iter())
                .map(|(o, p)| {
                    let (origin, inputs) = match *o {
                        Origin::Unique3d(i) => ("unique_3d", vec![p3[i].id.as_str()]),
                        Origin::Unique2d(j) => ("unique_2d", vec![p2[j].id.as_str()]),
                        Origin::Merged { i, j } => ("s1_merge", vec![p3[i].id.as_str(), p2[j].id.as_str()]),
                        Origin::From2d { j, scenario } => (
                            if scenario == Scenario::S3Keep2d {
                                "s3_keep_2d"
                            } else {
                                "s2_keep_both"
                            },
                            vec![p2[j].id.as_str()],
                        ),
                        Origin::From3d { i } => ("retained_3d", vec![p3[i].id.as_str()]),
                    };
                    ReportOutput {
                        id: &p.id,
                        origin,
                        inputs,
                    }
                })
                .collect(),
            feature_fallbacks: self
                .feature_fallbacks
                .iter()
                .map(|&(i, j)| [p3[i].id.as_str(), p2[j].id.as_str()])
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report json");
        s.push('\n');
        s
    }
}
