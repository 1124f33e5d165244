//! Runs the four integration modes over seeded synthetic scenes and prints
//! mean AP per mode.
//!
//! ```text
//! cargo run --release --example ablation -- [SEEDS] [KEY=VALUE ...]
//! ```

use dualpath::config::PipelineConfig;
use dualpath::eval::bootstrap_mean_ci;
use dualpath::pipeline::{run_scene, Mode};
use dualpath::scene::Subset;
use dualpath::synth::{corrupt_to_pathways, generate_scene};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(Ok(20), |s| s.parse())?;
    let overrides: Vec<String> = args.collect();
    let base = PipelineConfig::default().with_overrides(&overrides)?;
    println!("{:>4} {:>7} {:>7} {:>7} {:>7} | {:>6} {:>6}", "seed", "3d", "2d", "simple", "dual", "tail3d", "tailD");
    let mut sums = [0.0; 4];
    let mut diffs: [Vec<f64>; 3] = Default::default();
    let mut tail_wins = 0;
    for seed in 0..seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.synth.seed = seed;
        let synth = generate_scene(&cfg.synth, cfg.feature_dim)?;
        let paths = corrupt_to_pathways(&synth, &cfg.synth)?;
        let run = run_scene(&synth.scene, &paths.set3d, &paths.masks2d, Some(&synth.class_features), &cfg)?;
        let ap: Vec<f64> = Mode::ALL.iter().map(|m| run.evals[m].overall.ap).collect();
        for (s, a) in sums.iter_mut().zip(&ap) {
            *s += a;
        }
        for (k, d) in diffs.iter_mut().enumerate() {
            d.push(ap[3] - ap[k]);
        }
        let tail = |m: Mode| run.evals[&m].subset(Subset::Tail).map_or(f64::NAN, |t| t.rc);
        if tail(Mode::Conditional) > tail(Mode::Only3d) {
            tail_wins += 1;
        }
        println!(
            "{seed:>4} {:>7.3} {:>7.3} {:>7.3} {:>7.3} | {:>6.3} {:>6.3}",
            ap[0], ap[1], ap[2], ap[3], tail(Mode::Only3d), tail(Mode::Conditional)
        );
    }
    let n = seeds as f64;
    println!("mean {:>7.3} {:>7.3} {:>7.3} {:>7.3}", sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n);
    for (name, d) in ["3d", "2d", "simple"].iter().zip(&diffs) {
        let (lo, hi) = bootstrap_mean_ci(d, 2000, 0.95, 0);
        println!("dual - {name:<6} ci95 [{lo:+.4}, {hi:+.4}]");
    }
    println!("tail rc wins {tail_wins}/{seeds}");
    Ok(())
}
