//! Instance segmentation evaluation: AP over mask-IoU thresholds, recall,
//! and head/common/tail breakdowns.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::InstanceMask;
use crate::scene::{FeatureVector, GroundTruth, ProposalSet, Subset};

/// A class-labeled, scored prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub mask: InstanceMask,
    pub class_id: u32,
    pub score: f64,
}

/// Labels each featured proposal with its highest-cosine class; the score
/// is that cosine mapped to `[0, 1]`. Ties go to the lower class id.
pub fn assign_classes(set: &ProposalSet, class_features: &BTreeMap<u32, FeatureVector>) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(set.len());
    for p in set.iter() {
        let Some(f) = &p.feature else { continue };
        let mut best: Option<(u32, f64)> = None;
        for (&c, cf) in class_features {
            if cf.dim() != f.dim() {
                return Err(Error::DimensionMismatch {
                    expected: cf.dim(),
                    found: f.dim(),
                });
            }
            let s = f.cosine(cf);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        if let Some((class_id, s)) = best {
            out.push(Prediction {
                id: p.id.clone(),
                mask: p.mask.clone(),
                class_id,
                score: ((s + 1.0) / 2.0).clamp(0.0, 1.0),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Thresholds averaged into the headline AP and RC.
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: (10..20).map(|k| k as f64 / 20.0).collect(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("eval.thresholds must be non-empty".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::Config(format!("eval threshold {t} outside (0,1]")));
        }
        Ok(())
    }
}

/// TP flags of score-ordered predictions plus the GT count.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub tp: Vec<bool>,
    pub n_gt: usize,
}

impl MatchOutcome {
    pub fn true_positives(&self) -> usize {
        self.tp.iter().filter(|t| **t).count()
    }

    /// Area under the precision envelope, summed over recall steps.
    pub fn average_precision(&self) -> f64 {
        if self.n_gt == 0 {
            return 0.0;
        }
        let mut precision = Vec::with_capacity(self.tp.len());
        let mut hits = 0usize;
        for (k, &t) in self.tp.iter().enumerate() {
            hits += t as usize;
            precision.push(hits as f64 / (k + 1) as f64);
        }
        for k in (0..precision.len().saturating_sub(1)).rev() {
            precision[k] = precision[k].max(precision[k + 1]);
        }
        let step = 1.0 / self.n_gt as f64;
        self.tp
            .iter()
            .zip(&precision)
            .filter(|(t, _)| **t)
            .map(|(_, p)| p * step)
            .sum()
    }

    pub fn recall(&self) -> f64 {
        if self.n_gt == 0 {
            0.0
        } else {
            self.true_positives() as f64 / self.n_gt as f64
        }
    }
}

/// Greedy matching of one class: predictions by descending score (stable),
/// each to the unmatched GT with the highest IoU (ties to the lower GT
/// index), a hit when that IoU reaches `tau`.
///
/// `iou[p][g]` is the IoU of prediction `p` and GT `g`.
pub fn greedy_match(scores: &[f64], iou: &[Vec<f64>], n_gt: usize, tau: f64) -> MatchOutcome {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut taken = vec![false; n_gt];
    let mut tp = Vec::with_capacity(order.len());
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..n_gt {
            if !taken[g] && best.is_none_or(|(_, b)| iou[p][g] > b) {
                best = Some((g, iou[p][g]));
            }
        }
        match best {
            Some((g, v)) if v >= tau => {
                taken[g] = true;
                tp.push(true);
            }
            _ => tp.push(false),
        }
    }
    MatchOutcome { tp, n_gt }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub rc: f64,
    pub rc50: f64,
    pub rc25: f64,
}

impl Metrics {
    fn mean<'a>(items: impl Iterator<Item = &'a Metrics>) -> Option<Metrics> {
        let mut acc = Metrics::default();
        let mut n = 0usize;
        for m in items {
            acc.ap += m.ap;
            acc.ap50 += m.ap50;
            acc.ap25 += m.ap25;
            acc.rc += m.rc;
            acc.rc50 += m.rc50;
            acc.rc25 += m.rc25;
            n += 1;
        }
        (n > 0).then(|| {
            let k = n as f64;
            Metrics {
                ap: acc.ap / k,
                ap50: acc.ap50 / k,
                ap25: acc.ap25 / k,
                rc: acc.rc / k,
                rc50: acc.rc50 / k,
                rc25: acc.rc25 / k,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub name: String,
    pub subset: Subset,
    pub n_gt: usize,
    pub n_pred: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean over classes with GT instances; zero when there are none.
    #[serde(flatten)]
    pub overall: Metrics,
    pub head: Option<Metrics>,
    pub common: Option<Metrics>,
    pub tail: Option<Metrics>,
    pub per_class: Vec<ClassMetrics>,
}

impl EvalResult {
    pub fn subset(&self, s: Subset) -> Option<&Metrics> {
        match s {
            Subset::Head => self.head.as_ref(),
            Subset::Common => self.common.as_ref(),
            Subset::Tail => self.tail.as_ref(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("eval json");
        s.push('\n');
        s
    }

    /// Aligned text table: overall columns then per-subset AP and RC.
    pub fn to_table(&self) -> String {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let opt = |m: Option<&Metrics>, f: fn(&Metrics) -> f64| m.map_or("-".to_string(), |m| pct(f(m)));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6} {:>6} {:>6} {:>6} {:>6} {:>6} | {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
            "AP", "AP50", "AP25", "RC", "RC50", "RC25", "AP_head", "AP_comm", "AP_tail", "RC_head", "RC_comm", "RC_tail"
        );
        let o = &self.overall;
        let _ = writeln!(
            out,
            "{:>6} {:>6} {:>6} {:>6} {:>6} {:>6} | {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
            pct(o.ap),
            pct(o.ap50),
            pct(o.ap25),
            pct(o.rc),
            pct(o.rc50),
            pct(o.rc25),
            opt(self.head.as_ref(), |m| m.ap),
            opt(self.common.as_ref(), |m| m.ap),
            opt(self.tail.as_ref(), |m| m.ap),
            opt(self.head.as_ref(), |m| m.rc),
            opt(self.common.as_ref(), |m| m.rc),
            opt(self.tail.as_ref(), |m| m.rc),
        );
        out
    }
}

fn class_metrics(preds: &[&Prediction], gts: &[&InstanceMask], config: &EvalConfig) -> Metrics {
    let iou: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| gts.iter().map(|g| p.mask.iou(g)).collect())
        .collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let at = |tau: f64| greedy_match(&scores, &iou, gts.len(), tau);
    let (mut ap, mut rc) = (0.0, 0.0);
    for &t in &config.thresholds {
        let m = at(t);
        ap += m.average_precision();
        rc += m.recall();
    }
    let k = config.thresholds.len() as f64;
    let (m50, m25) = (at(0.5), at(0.25));
    Metrics {
        ap: ap / k,
        ap50: m50.average_precision(),
        ap25: m25.average_precision(),
        rc: rc / k,
        rc50: m50.recall(),
        rc25: m25.recall(),
    }
}

/// Full evaluation. Classes without GT instances are listed but excluded
/// from every mean.
pub fn evaluate(preds: &[Prediction], gt: &GroundTruth, config: &EvalConfig) -> Result<EvalResult> {
    config.validate()?;
    for p in preds {
        p.mask.check_bounds(gt.point_count())?;
    }
    let per_class: Vec<ClassMetrics> = gt
        .classes()
        .par_iter()
        .map(|(&class_id, info)| {
            let ps: Vec<&Prediction> = preds.iter().filter(|p| p.class_id == class_id).collect();
            let gs: Vec<&InstanceMask> = gt
                .instances()
                .iter()
                .filter(|g| g.class_id == class_id)
                .map(|g| &g.mask)
                .collect();
            ClassMetrics {
                class_id,
                name: info.name.clone(),
                subset: info.subset,
                n_gt: gs.len(),
                n_pred: ps.len(),
                metrics: if gs.is_empty() {
                    Metrics::default()
                } else {
                    class_metrics(&ps, &gs, config)
                },
            }
        })
        .collect();
    let scored = |s: Option<Subset>| {
        Metrics::mean(
            per_class
                .iter()
                .filter(|c| c.n_gt > 0 && s.is_none_or(|s| c.subset == s))
                .map(|c| &c.metrics),
        )
    };
    Ok(EvalResult {
        overall: scored(None).unwrap_or_default(),
        head: scored(Some(Subset::Head)),
        common: scored(Some(Subset::Common)),
        tail: scored(Some(Subset::Tail)),
        per_class,
    })
}

/// Percentile bootstrap interval of the mean of `samples`.
pub fn bootstrap_mean_ci(samples: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| samples[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let idx = |q: f64| ((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1);
    (means[idx(alpha)], means[idx(1.0 - alpha)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ClassInfo, ClassTable, GtInstance};

    fn r(a: u32, b: u32) -> InstanceMask {
        InstanceMask::range(a, b).unwrap()
    }

    fn classes(subsets: &[Subset]) -> ClassTable {
        subsets
            .iter()
            .enumerate()
            .map(|(k, s)| {
                (
                    k as u32,
                    ClassInfo {
                        name: format!("c{k}"),
                        subset: *s,
                    },
                )
            })
            .collect()
    }

    fn gt(instances: &[(InstanceMask, u32)], table: ClassTable) -> GroundTruth {
        GroundTruth::new(
            1000,
            instances
                .iter()
                .enumerate()
                .map(|(k, (m, c))| GtInstance {
                    id: k.to_string(),
                    mask: m.clone(),
                    class_id: *c,
                })
                .collect(),
            table,
        )
        .unwrap()
    }

    fn pred(id: &str, mask: InstanceMask, class_id: u32, score: f64) -> Prediction {
        Prediction {
            id: id.into(),
            mask,
            class_id,
            score,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let g = gt(
            &[(r(0, 10), 0), (r(10, 30), 1), (r(50, 60), 2)],
            classes(&[Subset::Head, Subset::Common, Subset::Tail]),
        );
        let preds: Vec<_> = g
            .instances()
            .iter()
            .map(|i| pred(&i.id, i.mask.clone(), i.class_id, 1.0))
            .collect();
        let res = evaluate(&preds, &g, &EvalConfig::default()).unwrap();
        let one = Metrics {
            ap: 1.0,
            ap50: 1.0,
            ap25: 1.0,
            rc: 1.0,
            rc50: 1.0,
            rc25: 1.0,
        };
        assert_eq!(res.overall, one);
        assert_eq!((res.head, res.common, res.tail), (Some(one), Some(one), Some(one)));

        let res = evaluate(&[], &g, &EvalConfig::default()).unwrap();
        assert_eq!(res.overall, Metrics::default());
        assert_eq!(res.tail, Some(Metrics::default()));
    }

    #[test]
    fn one_of_two_matched() {
        let g = gt(&[(r(0, 10), 0), (r(100, 110), 0)], classes(&[Subset::Tail]));
        let six = r(0, 6);
        assert!((six.iou(&r(0, 10)) - 0.6).abs() < 1e-12);
        let res = evaluate(&[pred("p", six, 0, 0.9)], &g, &EvalConfig::default()).unwrap();
        assert!((res.overall.ap50 - 0.5).abs() < 1e-9);
        assert!((res.tail.unwrap().rc50 - 0.5).abs() < 1e-9);
        assert!(res.overall.ap < res.overall.ap50);
    }

    #[test]
    fn mean_over_two_classes() {
        let g = gt(&[(r(0, 10), 0), (r(20, 30), 1)], classes(&[Subset::Head, Subset::Tail]));
        let res = evaluate(&[pred("p", r(0, 10), 0, 0.9)], &g, &EvalConfig::default()).unwrap();
        assert_eq!(res.per_class[0].metrics.ap50, 1.0);
        assert_eq!(res.per_class[1].metrics.ap50, 0.0);
        assert_eq!(res.overall.ap50, 0.5);
        assert_eq!(res.common, None);
    }

    #[test]
    fn envelope_interpolation() {
        // TP, FP, TP over 2 GT: precision 1, 1/2, 2/3; envelope 1, 2/3, 2/3
        let m = MatchOutcome {
            tp: vec![true, false, true],
            n_gt: 2,
        };
        assert!((m.average_precision() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn assign_examples() {
        let a = FeatureVector::new(vec![1.0, 0.0]).unwrap();
        let b = FeatureVector::new(vec![0.0, 1.0]).unwrap();
        let table: BTreeMap<u32, FeatureVector> = [(3, b.clone()), (7, a.clone())].into();
        let set = ProposalSet::new(
            10,
            vec![
                crate::scene::Proposal::new("x", r(0, 2), crate::scene::Source::Path3D).with_feature(a.clone()),
                crate::scene::Proposal::new(
                    "tie",
                    r(0, 2),
                    crate::scene::Source::Path3D,
                )
                .with_feature(FeatureVector::new(vec![std::f32::consts::FRAC_1_SQRT_2; 2]).unwrap()),
                crate::scene::Proposal::new("bare", r(0, 2), crate::scene::Source::Path3D),
            ],
        )
        .unwrap();
        let p = assign_classes(&set, &table).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].class_id, p[0].score), (7, 1.0));
        assert_eq!(p[1].class_id, 3);
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let xs: Vec<f64> = (0..20).map(|k| 1.0 + 0.1 * (k % 5) as f64).collect();
        let (lo, hi) = bootstrap_mean_ci(&xs, 2000, 0.95, 1);
        let mean = xs.iter().sum::<f64>() / 20.0;
        assert!(lo <= mean && mean <= hi && lo > 1.0);
        assert_eq!((lo, hi), bootstrap_mean_ci(&xs, 2000, 0.95, 1));
    }
}
