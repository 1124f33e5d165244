//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{bitmap_counts, mask, oracle_integrate, population, range, scenario_name};
use dualpath::config::PipelineConfig;
use dualpath::eval::{bootstrap_mean_ci, evaluate, EvalConfig, Prediction};
use dualpath::fusion::{FusionConfig, MemoryBank};
use dualpath::integration::{conditional_integrate, IntegrationConfig, IoUMatrix, Scenario};
use dualpath::mask::BitMask;
use dualpath::pipeline::{default_grid, run_scene, sweep, Mode};
use dualpath::projection::{project_point, unproject, visible_pixel, FrameVisibility, Mask2D};
use dualpath::scene::{ClassInfo, FeatureVector, GroundTruth, GtInstance, Proposal, ProposalSet, Source, Subset};
use dualpath::synth::{corrupt_to_pathways, generate_scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: impl Into<String>, bad: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(bad.into())
    }
}

fn c1_set_algebra() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..1000 {
        let n: u32 = rng.gen_range(1..=10_000);
        let draw = |rng: &mut ChaCha8Rng| {
            let p = rng.gen_range(0.001..0.9);
            let v: Vec<u32> = (0..n).filter(|_| rng.gen::<f64>() < p).collect();
            if v.is_empty() {
                mask([rng.gen_range(0..n)])
            } else {
                mask(v)
            }
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let (inter, union) = bitmap_counts(&a, &b, n as usize);
        let set3d = ProposalSet::new(n as usize, vec![Proposal::new("a", a.clone(), Source::Path3D)]).unwrap();
        let set2d = ProposalSet::new(n as usize, vec![Proposal::new("b", b.clone(), Source::Path2D)]).unwrap();
        let m = IoUMatrix::compute(&set3d, &set2d).unwrap();
        let t3 = m.triple(0, 0);
        let ok = a.intersection_count(&b) == inter
            && a.union_count(&b) == union
            && a.union(&b).len() == union
            && a.intersection(&b).map_or(0, |x| x.len()) == inter
            && a.iou(&b) == inter as f64 / union as f64
            && t3.iou == inter as f64 / union as f64
            && t3.iou_3d == inter as f64 / a.len() as f64
            && t3.iou_2d == inter as f64 / b.len() as f64
            && m.intersection(0, 0) as usize == inter;
        if !ok {
            return Err(format!("pair {trial} (N={n}) disagrees with the bitmap oracle"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        secs < 5.0,
        format!("1000 pairs exact, {secs:.2}s"),
        format!("exact but took {secs:.2}s (limit 5s)"),
    )
}

fn c2_scenarios() -> Outcome {
    let cfg = IntegrationConfig::default();
    let run = |m3: InstanceMaskPair| {
        let set3d = ProposalSet::new(300, vec![Proposal::new("a", m3.0, Source::Path3D)]).unwrap();
        let set2d = ProposalSet::new(300, vec![Proposal::new("b", m3.1, Source::Path2D)]).unwrap();
        let out = conditional_integrate(&set3d, &set2d, &cfg).unwrap();
        let masks: Vec<Vec<u32>> = out.proposals.iter().map(|p| p.mask.indices().to_vec()).collect();
        (masks, out.report.decisions_2d[0].scenario)
    };
    let fixtures: Vec<(&str, InstanceMaskPair, Vec<Vec<u32>>, Scenario)> = vec![
        (
            "significant overlap",
            (range(0, 100), mask((0..95).chain(100..105))),
            vec![(0..105).collect()],
            Scenario::S1Merge,
        ),
        (
            "slight overlap",
            (range(0, 100), range(90, 200)),
            vec![(90..200).collect(), (0..100).collect()],
            Scenario::S2KeepBoth,
        ),
        ("2D inside 3D", (range(0, 100), range(0, 10)), vec![(0..10).collect()], Scenario::S3Keep2d),
        ("3D inside 2D", (range(0, 10), range(0, 100)), vec![(0..10).collect()], Scenario::S4Keep3d),
    ];
    for (name, pair, want, scenario) in fixtures {
        let (masks, got) = run(pair);
        if masks != want || got != scenario {
            return Err(format!("{name}: got {got:?} with {} masks", masks.len()));
        }
    }
    Ok("4 fixtures exact".into())
}

type InstanceMaskPair = (dualpath::mask::InstanceMask, dualpath::mask::InstanceMask);

fn c3_uniqueness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for trial in 0..200 {
        let (a, b) = population(&mut rng, 400, 20, 8);
        let out = conditional_integrate(&a, &b, &IntegrationConfig::default()).unwrap();
        let m = IoUMatrix::compute(&a, &b).unwrap();
        let present = |p: &Proposal| out.proposals.iter().any(|q| q == p);
        for (i, p) in a.iter().enumerate() {
            if m.row_max(i) == 0.0 {
                checked += 1;
                if !present(p) {
                    return Err(format!("trial {trial}: unique 3D {} altered or missing", p.id));
                }
            }
        }
        for (j, p) in b.iter().enumerate() {
            if m.col_max(j) == 0.0 {
                checked += 1;
                if !present(p) {
                    return Err(format!("trial {trial}: unique 2D {} altered or missing", p.id));
                }
            }
        }
    }
    Ok(format!("200 populations, {checked} unique proposals verbatim"))
}

fn c4_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for trial in 0..500 {
        let (a, b) = population(&mut rng, 300, 20, 8);
        let (t3, t2) = match trial % 3 {
            0 => (0.9, 0.5),
            1 => (0.5, 0.9),
            _ => (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
        };
        let cfg = IntegrationConfig::new(t3, t2);
        let out = conditional_integrate(&a, &b, &cfg).unwrap();
        let want = oracle_integrate(&a, &b, t3, t2, 0.0);
        let mut got_masks: Vec<Vec<u32>> = out.proposals.iter().map(|p| p.mask.indices().to_vec()).collect();
        let mut want_masks = want.masks.clone();
        got_masks.sort();
        want_masks.sort();
        let scen: Vec<&str> = out.report.decisions_2d.iter().map(|d| scenario_name(d.scenario)).collect();
        let disp: Vec<&str> = out.report.dispositions_3d.iter().map(|d| d.name()).collect();
        if got_masks != want_masks || scen != want.scenarios_2d || disp != want.dispositions_3d {
            return Err(format!("trial {trial} differs from the rule transcription"));
        }
        for s in scen {
            *seen.entry(s).or_default() += 1;
        }
    }
    let all = ["s1_merge", "s2_keep_both", "s3_keep_2d", "s4_keep_3d", "unique"];
    let covered = all.iter().all(|s| seen.get(s).copied().unwrap_or(0) > 0);
    check(
        covered,
        format!("500 trials exact; scenario counts {seen:?}"),
        format!("exact, but some scenario never occurred: {seen:?}"),
    )
}

fn c5_projection() -> Outcome {
    let cfg = PipelineConfig::default();
    let s = generate_scene(&cfg.synth, 16).map_err(|e| e.to_string())?;
    let cloud = &s.scene.cloud;
    let mut worst: f64 = 0.0;
    let mut visible = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for frame in &s.scene.frames {
        let vis = FrameVisibility::compute(cloud, frame, &cfg.projection);
        for (i, _) in vis.visible_points() {
            let p = cloud.point(i as usize);
            let pr = project_point(&p, frame, cfg.projection.z_near).ok_or("visible point does not project")?;
            let q = unproject(pr.u, pr.v, pr.z, frame);
            worst = worst.max((q - p).norm());
            visible += 1;
        }
        // lifting a pixel set returns exactly the points whose predicate pixel lies in it
        for _ in 0..5 {
            let (w, h) = (frame.width(), frame.height());
            let (u0, v0) = (rng.gen_range(0..w), rng.gen_range(0..h));
            let (u1, v1) = (rng.gen_range(u0 + 1..=w), rng.gen_range(v0 + 1..=h));
            let pixels: Vec<u32> = (v0..v1).flat_map(|v| (u0..u1).map(move |u| v * w + u)).collect();
            let m2 = Mask2D::from_pixels("r", frame.frame_id(), w, h, pixels).map_err(|e| e.to_string())?;
            let bits: BitMask = m2.bitmap();
            let oracle: Vec<u32> = (0..cloud.len() as u32)
                .filter(|&i| {
                    visible_pixel(&cloud.point(i as usize), frame, &cfg.projection)
                        .is_some_and(|px| bits.contains(px as usize))
                })
                .collect();
            let lifted = vis.lift(&bits).map(|m| m.indices().to_vec()).unwrap_or_default();
            if lifted != oracle {
                return Err(format!("lift disagrees with the predicate on frame {}", frame.frame_id()));
            }
        }
    }
    check(
        worst <= 1e-4 && visible > 0,
        format!("{visible} visible points, max round-trip error {worst:.2e} m; lift matches predicate"),
        format!("max round-trip error {worst:.2e} m"),
    )
}

fn c6_fusion() -> Outcome {
    let unit = FeatureVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let cfg = FusionConfig {
        iou_merge: 0.15,
        min_points: 1,
        min_frames: 1,
        ..FusionConfig::default()
    };
    let mut bank = MemoryBank::new(1000, cfg).map_err(|e| e.to_string())?;
    for m in [range(0, 100), range(200, 300), range(50, 250)] {
        bank.push_entry(m, unit.clone(), 0).map_err(|e| e.to_string())?;
    }
    if bank.entries()[0].mask.iou(&bank.entries()[1].mask) != 0.0 {
        return Err("fixture ends are not disjoint".into());
    }
    bank.compact(false);
    let once: Vec<_> = bank.entries().to_vec();
    bank.compact(false);
    let twice: Vec<_> = bank.entries().to_vec();
    check(
        once.len() == 1 && once[0].mask == range(0, 300) && once == twice,
        "3-entry chain collapses to {0..299}; second compaction is a no-op",
        format!("{} entries after compaction, idempotent={}", once.len(), once == twice),
    )
}

fn c7_eval() -> Outcome {
    let classes = BTreeMap::from([(
        0u32,
        ClassInfo {
            name: "c".into(),
            subset: Subset::Head,
        },
    )]);
    let gt = GroundTruth::new(
        100,
        vec![
            GtInstance {
                id: "g0".into(),
                mask: range(0, 10),
                class_id: 0,
            },
            GtInstance {
                id: "g1".into(),
                mask: range(20, 30),
                class_id: 0,
            },
        ],
        classes,
    )
    .map_err(|e| e.to_string())?;
    let pred = |id: &str, m| Prediction {
        id: id.into(),
        mask: m,
        class_id: 0,
        score: 0.9,
    };
    let cfg = EvalConfig::default();
    let perfect = evaluate(&[pred("p0", range(0, 10)), pred("p1", range(20, 30))], &gt, &cfg).unwrap();
    let empty = evaluate(&[], &gt, &cfg).unwrap();
    let one = evaluate(&[pred("p0", range(0, 10))], &gt, &cfg).unwrap();
    let o = perfect.overall;
    let ok_perfect = [o.ap, o.ap50, o.ap25, o.rc, o.rc50, o.rc25].iter().all(|&v| v == 1.0);
    let e = empty.overall;
    let ok_empty = [e.ap, e.ap50, e.ap25, e.rc, e.rc50, e.rc25].iter().all(|&v| v == 0.0);
    let ok_one = (one.overall.ap50 - 0.5).abs() <= 1e-9;
    check(
        ok_perfect && ok_empty && ok_one,
        format!("perfect=1, empty=0, 2-GT/1-match AP50={}", one.overall.ap50),
        format!("perfect={ok_perfect} empty={ok_empty} AP50={}", one.overall.ap50),
    )
}

struct SeedRow {
    ap: [f64; 4],
    tail_rc_3d: f64,
    tail_rc_dual: f64,
}

fn ablation(overrides: &[&str]) -> Result<Vec<SeedRow>, String> {
    let base = PipelineConfig::default()
        .with_overrides(&overrides.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        .map_err(|e| e.to_string())?;
    (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.synth.seed = seed;
            let s = generate_scene(&cfg.synth, cfg.feature_dim).map_err(|e| e.to_string())?;
            let p = corrupt_to_pathways(&s, &cfg.synth).map_err(|e| e.to_string())?;
            let run = run_scene(&s.scene, &p.set3d, &p.masks2d, Some(&s.class_features), &cfg)
                .map_err(|e| e.to_string())?;
            let ap = Mode::ALL.map(|m| run.evals[&m].overall.ap);
            let tail = |m: Mode| run.evals[&m].subset(Subset::Tail).map_or(0.0, |t| t.rc);
            Ok(SeedRow {
                ap,
                tail_rc_3d: tail(Mode::Only3d),
                tail_rc_dual: tail(Mode::Conditional),
            })
        })
        .collect()
}

fn c8_ablation() -> Outcome {
    let t = Instant::now();
    let rows = ablation(&[])?;
    let secs = t.elapsed().as_secs_f64();
    let mean = |k: usize| rows.iter().map(|r| r.ap[k]).sum::<f64>() / rows.len() as f64;
    let means: Vec<f64> = (0..4).map(mean).collect();
    let mut lows = Vec::new();
    for (k, name) in [(0, "3d-only"), (1, "2d-only"), (2, "simple")] {
        let d: Vec<f64> = rows.iter().map(|r| r.ap[3] - r.ap[k]).collect();
        let (lo, _) = bootstrap_mean_ci(&d, 10_000, 0.95, 8);
        lows.push((name, lo));
    }
    let summary = format!(
        "mean AP 3d={:.3} 2d={:.3} simple={:.3} dual={:.3}; dual-minus CI95 lower bounds {}; {secs:.1}s",
        means[0],
        means[1],
        means[2],
        means[3],
        lows.iter()
            .map(|(n, lo)| format!("{n}:{lo:+.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let ordered = means[3] >= means[2] && means[2] >= means[0].max(means[1]);
    check(
        lows.iter().all(|(_, lo)| *lo > 0.0) && ordered && secs < 120.0,
        summary.clone(),
        summary,
    )
}

fn c9_tail_recall() -> Outcome {
    let rows = ablation(&["synth.miss_rate_tail=0.9"])?;
    let wins = rows.iter().filter(|r| r.tail_rc_dual > r.tail_rc_3d).count();
    let msg = format!("tail miss rate 0.9: dual tail RC > 3D tail RC in {wins}/20 seeds");
    check(wins >= 18, msg.clone(), msg)
}

fn c10_sweep() -> Outcome {
    let cfg = PipelineConfig::default();
    let s = generate_scene(&cfg.synth, cfg.feature_dim).map_err(|e| e.to_string())?;
    let p = corrupt_to_pathways(&s, &cfg.synth).map_err(|e| e.to_string())?;
    let run = run_scene(&s.scene, &p.set3d, &p.masks2d, Some(&s.class_features), &cfg).map_err(|e| e.to_string())?;
    let gt = s.scene.ground_truth.as_ref().unwrap();
    let rows = sweep(
        &run.set3d,
        &run.set2d,
        &default_grid(),
        &cfg.integration,
        Some((gt, &s.class_features, &cfg)),
    )
    .map_err(|e| e.to_string())?;
    if rows.len() != 9 || rows.iter().any(|r| r.eval.is_none()) {
        return Err(format!("{} sweep rows", rows.len()));
    }

    let strict = IntegrationConfig {
        theta_3d: 1.0,
        theta_2d: 1.0,
        eps_unique: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut cases: Vec<(ProposalSet, ProposalSet)> = (0..200).map(|_| population(&mut rng, 300, 20, 8)).collect();
    cases.push((run.set3d.clone(), run.set2d.clone()));
    for (k, (a, b)) in cases.iter().enumerate() {
        let out = conditional_integrate(a, b, &strict).map_err(|e| e.to_string())?;
        let inputs: Vec<_> = a.iter().chain(b.iter()).map(|p| &p.mask).collect();
        if let Some(bad) = out.proposals.iter().find(|q| !inputs.contains(&&q.mask)) {
            return Err(format!("case {k}: output {} is not an input mask", bad.id));
        }
    }
    Ok(format!("9 rows; thresholds 1.0 on {} populations never create a new mask", cases.len()))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_dualpath");
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = Command::new(bin)
            .args(["run-all", "--seed", "11", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run-all failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        dirs.push(out);
    }
    let (fa, fb) = (files_under(&dirs[0]), files_under(&dirs[1]));
    if fa != fb {
        return Err("the two runs wrote different file sets".into());
    }
    let mut compared = 0;
    for f in &fa {
        if f.to_string_lossy().starts_with("manifest_") {
            continue;
        }
        let (x, y) = (std::fs::read(dirs[0].join(f)).unwrap(), std::fs::read(dirs[1].join(f)).unwrap());
        if x != y {
            return Err(format!("{} differs between runs", f.display()));
        }
        compared += 1;
    }
    let has = |name: &str| fa.iter().any(|f| f == Path::new(name));
    check(
        has("integrated_conditional.json") && has("report_conditional.json"),
        format!("{compared} output files byte-identical across two run-all invocations"),
        "run-all did not write the proposal and report files",
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("set algebra vs bitmap oracle", c1_set_algebra),
        ("scenario dispatch fixtures", c2_scenarios),
        ("uniqueness preservation", c3_uniqueness),
        ("brute-force integration equivalence", c4_brute_force),
        ("projection round trip and lift identity", c5_projection),
        ("fusion fixed point", c6_fusion),
        ("eval golden cases", c7_eval),
        ("ablation ordering", c8_ablation),
        ("tail recall", c9_tail_recall),
        ("threshold sweep harness", c10_sweep),
        ("end-to-end determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match res {
            Ok(msg) => println!("criterion {:>2} PASS  {name}: {msg}", k + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {msg}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
