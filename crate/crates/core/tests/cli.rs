use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dualpath(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualpath"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SET_3D: &str = r#"{"num_points": 40, "proposals": [
  {"id": "a", "source": "3d", "point_indices": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]},
  {"id": "b", "source": "3d", "point_indices": [20, 21, 22]}
]}"#;

const SET_2D: &str = r#"{"num_points": 40, "proposals": [
  {"id": "x", "source": "2d", "point_indices": [0, 1, 2, 3, 4, 5, 6, 7, 8]},
  {"id": "y", "source": "2d", "point_indices": [30, 31]},
  {"id": "z", "source": "2d", "point_indices": [35]}
]}"#;

#[test]
fn integrate_modes_on_hand_made_sets() {
    let dir = tempfile::tempdir().unwrap();
    let (p3, p2) = (dir.path().join("p3.json"), dir.path().join("p2.json"));
    write(&p3, SET_3D);
    write(&p2, SET_2D);
    let run = |mode: &str| {
        let o = dualpath(
            dir.path(),
            &["integrate", "--proposals-3d", p3.to_str().unwrap(), "--proposals-2d", p2.to_str().unwrap(), "--mode", mode],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        json(&dir.path().join(format!("integrated_{mode}.json")))["proposals"].as_array().unwrap().len()
    };
    assert_eq!(run("simple"), 5);
    assert_eq!(run("3d-only"), 2);
    assert_eq!(run("2d-only"), 3);
    // a and x merge; b, y, z are unique
    assert_eq!(run("conditional"), 4);
    let report = json(&dir.path().join("report_conditional.json"));
    assert_eq!(report["proposals_2d"][0]["scenario"], "s1_merge");
    let manifest = json(&dir.path().join("manifest_integrate.json"));
    assert_eq!(manifest["command"], "integrate");
}

#[test]
fn bad_inputs_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let p3 = dir.path().join("p3.json");
    write(&p3, SET_3D);

    let missing = dualpath(dir.path(), &["integrate", "--proposals-3d", p3.to_str().unwrap(), "--proposals-2d", "/nonexistent.json"]);
    assert_eq!(missing.status.code(), Some(1));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(err.contains("dualpath integrate") && err.contains("/nonexistent.json"), "{err}");

    let bad = dir.path().join("bad.json");
    write(&bad, r#"{"num_points": 5, "proposals": [{"id": "q", "source": "2d", "point_indices": [3, 2]}]}"#);
    let o = dualpath(dir.path(), &["integrate", "--proposals-3d", p3.to_str().unwrap(), "--proposals-2d", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = dualpath(
        dir.path(),
        &["--set", "integration.theta_3d=2", "integrate", "--proposals-3d", p3.to_str().unwrap(), "--proposals-2d", p3.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("theta_3d"));

    // usage errors come from the argument parser
    let o = dualpath(dir.path(), &["integrate", "--mode", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn clean_scene_scores_near_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["--seed", "5"];
    let knobs = [
        "synth.miss_rate_head=0",
        "synth.miss_rate_common=0",
        "synth.miss_rate_tail=0",
        "synth.merge_rate_3d=0",
        "synth.boundary_noise=0",
        "synth.partial_3d=0",
        "synth.partial_2d=0",
        "synth.miss_rate_2d=0",
        "synth.feature_noise=0",
    ];
    for k in &knobs {
        args.extend(["--set", k]);
    }
    args.push("run-all");
    let o = dualpath(dir.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = json(&dir.path().join("eval.json"));
    for mode in ["3d-only", "conditional"] {
        let ap25 = eval[mode]["ap25"].as_f64().unwrap();
        assert!(ap25 >= 0.99, "{mode} AP25 {ap25}");
    }
    for name in ["colored.ply", "sweep.txt", "proposals_3d_features.json", "report_conditional.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn query_ranks_by_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualpath(dir.path(), &["--seed", "2", "run-all"]);
    assert!(o.status.success());
    let props = dir.path().join("integrated_conditional.json");
    let scene = dir.path().join("scene");
    let o = dualpath(
        dir.path(),
        &["query", "--proposals", props.to_str().unwrap(), "--scene", scene.to_str().unwrap(), "--class", "head_00", "--top", "3"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hits = json(&dir.path().join("query.json"))["hits"].as_array().unwrap().clone();
    assert_eq!(hits.len(), 3);
    let sims: Vec<f64> = hits.iter().map(|h| h["similarity"].as_f64().unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]), "{sims:?}");

    let o = dualpath(dir.path(), &["query", "--proposals", props.to_str().unwrap(), "--class", "head_00"]);
    assert_eq!(o.status.code(), Some(2));
}
