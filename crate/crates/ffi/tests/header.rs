use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

/// Directory holding the library artifacts of this build profile.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    // target/<profile>/deps/header-<hash>
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(manifest_dir().join("include/dualpath.h")).unwrap();
    for name in [
        "dp_version",
        "dp_last_error_message",
        "dp_proposal_set_new",
        "dp_proposal_set_push",
        "dp_proposal_set_finish",
        "dp_proposal_set_load",
        "dp_proposal_set_save",
        "dp_proposal_set_len",
        "dp_proposal_set_free",
        "dp_iou",
        "dp_integrate",
        "dp_string_free",
        "typedef struct DpProposalSet DpProposalSet;",
        "DP_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    let include = manifest_dir().join("include");
    let smoke = manifest_dir().join("tests/c/smoke.c");
    let status = Command::new(&cc)
        .args(["-std=c11", "-Wall", "-Wextra", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&smoke)
        .status()
        .unwrap();
    assert!(status.success(), "smoke.c does not compile as C");
    let status = Command::new(&cc)
        .args(["-x", "c++", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(manifest_dir().join("include/dualpath.h"))
        .status()
        .unwrap();
    assert!(status.success(), "header does not compile as C++");
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    let lib = artifact_dir().join("libdualpath_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipped", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c11", "-I"])
        .arg(manifest_dir().join("include"))
        .arg(manifest_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "linking against {} failed", lib.display());
    let out = Command::new(Path::new(&exe)).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "smoke failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("3 proposals"), "{stdout}");
}
