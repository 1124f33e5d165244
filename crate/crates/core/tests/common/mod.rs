//! Random proposal populations and brute-force oracles shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use dualpath::mask::InstanceMask;
use dualpath::scene::{FeatureVector, Proposal, ProposalSet, Source};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn mask(points: impl IntoIterator<Item = u32>) -> InstanceMask {
    InstanceMask::from_unsorted(points).unwrap()
}

pub fn range(a: u32, b: u32) -> InstanceMask {
    InstanceMask::range(a, b).unwrap()
}

fn random_feature<R: Rng>(rng: &mut R, dim: usize) -> FeatureVector {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..1.0)).collect();
    FeatureVector::normalized_from(&v).unwrap()
}

fn random_subset<R: Rng>(rng: &mut R, n: u32) -> InstanceMask {
    let a = rng.gen_range(0..n);
    let len = rng.gen_range(1..=(n / 4).max(1));
    let b = (a + len).min(n);
    let mut pts: Vec<u32> = (a..b).collect();
    // punch a few holes
    let holes = rng.gen_range(0..=pts.len() / 8);
    for _ in 0..holes {
        if pts.len() > 1 {
            let k = rng.gen_range(0..pts.len());
            pts.remove(k);
        }
    }
    mask(pts)
}

/// A variant of `base`: near copy, subset, superset, shifted or unrelated.
fn related<R: Rng>(rng: &mut R, base: &InstanceMask, n: u32) -> InstanceMask {
    let pts = base.indices();
    match rng.gen_range(0..6) {
        0 => {
            // near copy: drop a few, add a few neighbors
            let mut v: Vec<u32> = pts.iter().copied().filter(|_| rng.gen::<f64>() > 0.05).collect();
            let hi = base.last();
            for k in 1..=rng.gen_range(0..4u32) {
                if hi + k < n {
                    v.push(hi + k);
                }
            }
            if v.is_empty() {
                v.push(pts[0]);
            }
            mask(v)
        }
        1 => {
            let len = rng.gen_range(1..=pts.len());
            let start = rng.gen_range(0..=pts.len() - len);
            mask(pts[start..start + len].iter().copied())
        }
        2 => {
            let extra = rng.gen_range(1..=pts.len() * 2);
            let lo = base.first().saturating_sub(extra as u32 / 2);
            let hi = (base.last() + 1 + extra as u32 / 2).min(n);
            mask((lo..hi).chain(pts.iter().copied()))
        }
        3 => {
            let shift = rng.gen_range(1..=pts.len() as u32);
            let v: Vec<u32> = pts.iter().map(|&p| p + shift).filter(|&p| p < n).collect();
            if v.is_empty() {
                base.clone()
            } else {
                mask(v)
            }
        }
        4 => base.clone(),
        _ => random_subset(rng, n),
    }
}

/// Two proposal sets over `n` points with up to `max` proposals a side;
/// many 2D proposals are derived from 3D ones so every scenario occurs.
pub fn population<R: Rng>(rng: &mut R, n: u32, max: usize, dim: usize) -> (ProposalSet, ProposalSet) {
    let n3 = rng.gen_range(0..=max);
    let n2 = rng.gen_range(0..=max);
    let m3: Vec<InstanceMask> = (0..n3).map(|_| random_subset(rng, n)).collect();
    let m2: Vec<InstanceMask> = (0..n2)
        .map(|_| match m3.choose(rng) {
            Some(b) if rng.gen::<f64>() < 0.7 => related(rng, b, n),
            _ => random_subset(rng, n),
        })
        .collect();
    let set = |masks: Vec<InstanceMask>, prefix: &str, source: Source, rng: &mut R| {
        ProposalSet::new(
            n as usize,
            masks
                .into_iter()
                .enumerate()
                .map(|(k, m)| Proposal::new(format!("{prefix}{k}"), m, source).with_feature(random_feature(rng, dim)))
                .collect(),
        )
        .unwrap()
    };
    let a = set(m3, "a", Source::Path3D, rng);
    let b = set(m2, "b", Source::Path2D, rng);
    (a, b)
}

/// Counts through plain boolean bitmaps.
pub fn bitmap_counts(a: &InstanceMask, b: &InstanceMask, n: usize) -> (usize, usize) {
    let mut x = vec![false; n];
    let mut y = vec![false; n];
    for &i in a.indices() {
        x[i as usize] = true;
    }
    for &i in b.indices() {
        y[i as usize] = true;
    }
    let inter = (0..n).filter(|&k| x[k] && y[k]).count();
    let union = (0..n).filter(|&k| x[k] || y[k]).count();
    (inter, union)
}

/// What the rules say should happen, written out without shortcuts.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub masks: Vec<Vec<u32>>,
    pub scenarios_2d: Vec<&'static str>,
    pub dispositions_3d: Vec<&'static str>,
}

pub fn oracle_integrate(set3d: &ProposalSet, set2d: &ProposalSet, theta_3d: f64, theta_2d: f64, eps: f64) -> OracleOutcome {
    let a: Vec<BTreeSet<u32>> = set3d.iter().map(|p| p.mask.indices().iter().copied().collect()).collect();
    let b: Vec<BTreeSet<u32>> = set2d.iter().map(|p| p.mask.indices().iter().copied().collect()).collect();
    let inter = |i: usize, j: usize| a[i].intersection(&b[j]).count() as f64;
    let sym = |i: usize, j: usize| {
        let x = inter(i, j);
        x / (a[i].len() as f64 + b[j].len() as f64 - x)
    };
    let dir3d = |i: usize, j: usize| inter(i, j) / a[i].len() as f64;
    let dir2d = |i: usize, j: usize| inter(i, j) / b[j].len() as f64;

    let unique3: Vec<bool> = (0..a.len())
        .map(|i| (0..b.len()).all(|j| sym(i, j) <= eps))
        .collect();
    let unique2: Vec<bool> = (0..b.len())
        .map(|j| (0..a.len()).all(|i| sym(i, j) <= eps))
        .collect();

    let mut out: Vec<Vec<u32>> = Vec::new();
    for i in 0..a.len() {
        if unique3[i] {
            out.push(a[i].iter().copied().collect());
        }
    }
    for j in 0..b.len() {
        if unique2[j] {
            out.push(b[j].iter().copied().collect());
        }
    }

    let mut scenarios = vec!["unique"; b.len()];
    let mut consumed = vec![false; a.len()];
    let mut kept = vec![false; a.len()];
    let mut retained = vec![false; a.len()];
    let mut suppressed = vec![false; a.len()];

    let mut order: Vec<usize> = (0..b.len()).filter(|&j| !unique2[j]).collect();
    order.sort_by(|&x, &y| b[y].len().cmp(&b[x].len()).then(x.cmp(&y)));
    for j in order {
        // highest sym among unconsumed overlapping 3D proposals, lowest i on ties
        let mut partner: Option<usize> = None;
        for i in 0..a.len() {
            if unique3[i] || consumed[i] || sym(i, j) <= 0.0 {
                continue;
            }
            match partner {
                Some(p) if sym(p, j) >= sym(i, j) => {}
                _ => partner = Some(i),
            }
        }
        let Some(i) = partner else {
            scenarios[j] = "s2_keep_both";
            out.push(b[j].iter().copied().collect());
            continue;
        };
        let h2 = dir2d(i, j) >= theta_2d;
        let h3 = dir3d(i, j) >= theta_3d;
        if h2 && h3 {
            scenarios[j] = "s1_merge";
            consumed[i] = true;
            out.push(a[i].union(&b[j]).copied().collect());
        } else if !h2 && !h3 {
            scenarios[j] = "s2_keep_both";
            retained[i] = true;
            out.push(b[j].iter().copied().collect());
        } else if h2 {
            scenarios[j] = "s3_keep_2d";
            suppressed[i] = true;
            out.push(b[j].iter().copied().collect());
        } else {
            scenarios[j] = "s4_keep_3d";
            kept[i] = true;
        }
    }

    let mut dispositions = vec!["unique"; a.len()];
    for i in 0..a.len() {
        if unique3[i] {
            continue;
        }
        dispositions[i] = if consumed[i] {
            "merged_into"
        } else if kept[i] {
            "kept_via_s4"
        } else if retained[i] || !suppressed[i] {
            "retained"
        } else {
            "suppressed_by"
        };
        if matches!(dispositions[i], "kept_via_s4" | "retained") {
            out.push(a[i].iter().copied().collect());
        }
    }
    OracleOutcome {
        masks: out,
        scenarios_2d: scenarios,
        dispositions_3d: dispositions,
    }
}

pub fn scenario_name(s: dualpath::integration::Scenario) -> &'static str {
    use dualpath::integration::Scenario::*;
    match s {
        Unique => "unique",
        S1Merge => "s1_merge",
        S2KeepBoth => "s2_keep_both",
        S3Keep2d => "s3_keep_2d",
        S4Keep3d => "s4_keep_3d",
    }
}
