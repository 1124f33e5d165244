//! Wall-clock time of each pipeline stage on the default synthetic scene.

use std::time::Instant;

use dualpath::config::PipelineConfig;
use dualpath::pipeline::*;
use dualpath::synth::{corrupt_to_pathways, generate_scene};

fn main() -> anyhow::Result<()> {
    let cfg = PipelineConfig::default();
    let t = Instant::now();
    let synth = generate_scene(&cfg.synth, cfg.feature_dim)?;
    println!("generate {:?}", t.elapsed());
    let t = Instant::now();
    let paths = corrupt_to_pathways(&synth, &cfg.synth)?;
    println!("corrupt {:?} masks={}", t.elapsed(), paths.masks2d.iter().map(|f| f.masks.len()).sum::<usize>());
    let t = Instant::now();
    let provider = build_provider(&cfg, &synth.scene, Some(&synth.class_features))?;
    println!("provider {:?}", t.elapsed());
    let t = Instant::now();
    let lifted = lift_frames(&synth.scene, &paths.masks2d, &cfg, provider.as_ref())?;
    println!("lift {:?}", t.elapsed());
    let t = Instant::now();
    let set2d = fuse(&lifted, synth.scene.cloud.len(), &cfg)?;
    println!("fuse {:?} -> {}", t.elapsed(), set2d.len());
    let t = Instant::now();
    let set3d = assemble_features(&paths.set3d, &synth.scene, &cfg, provider.as_ref())?.set;
    println!("features3d {:?}", t.elapsed());
    let t = Instant::now();
    for mode in Mode::ALL {
        let (s, _) = integrate(mode, &set3d, &set2d, &cfg.integration)?;
        let t2 = Instant::now();
        let e = evaluate_set(&s, synth.ground_truth(), &synth.class_features, &cfg)?;
        println!("  {mode} eval {:?} ap={:.3}", t2.elapsed(), e.overall.ap);
    }
    println!("integrate+eval {:?}", t.elapsed());
    Ok(())
}
