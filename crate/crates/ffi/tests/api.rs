use std::ffi::{CStr, CString};
use std::ptr;

use dualpath_ffi::*;

struct Set(*mut DpProposalSet);

impl Drop for Set {
    fn drop(&mut self) {
        unsafe { dp_proposal_set_free(self.0) }
    }
}

fn last_error() -> String {
    let p = dp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn build(n: usize, source: DpSource, masks: &[(&str, Vec<u32>)]) -> Set {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(dp_proposal_set_new(n, &mut h), DpStatus::Ok);
        let set = Set(h);
        let f = [0.6f32, 0.8];
        for (id, m) in masks {
            let id = CString::new(*id).unwrap();
            let s = dp_proposal_set_push(set.0, id.as_ptr(), m.as_ptr(), m.len(), source, f.as_ptr(), 2);
            assert_eq!(s, DpStatus::Ok, "{}", last_error());
        }
        assert_eq!(dp_proposal_set_finish(set.0), DpStatus::Ok);
        set
    }
}

fn len(set: &Set) -> usize {
    let mut n = usize::MAX;
    assert_eq!(unsafe { dp_proposal_set_len(set.0, &mut n) }, DpStatus::Ok);
    n
}

fn integrate(a: &Set, b: &Set, mode: DpMode, cfg: Option<&DpIntegrationConfig>) -> (DpStatus, Option<Set>, Option<String>) {
    unsafe {
        let mut out = ptr::null_mut();
        let mut report = ptr::null_mut();
        let s = dp_integrate(a.0, b.0, mode, cfg.map_or(ptr::null(), |c| c as *const _), &mut out, &mut report);
        let report_text = if report.is_null() {
            None
        } else {
            let t = CStr::from_ptr(report).to_string_lossy().into_owned();
            dp_string_free(report);
            Some(t)
        };
        (s, (!out.is_null()).then_some(Set(out)), report_text)
    }
}

fn pair() -> (Set, Set) {
    let a = build(100, DpSource::Path3d, &[("a0", (0..10).collect()), ("a1", (50..60).collect())]);
    let b = build(
        100,
        DpSource::Path2d,
        &[("b0", (0..9).collect()), ("b1", (80..85).collect()), ("b2", vec![50, 51])],
    );
    (a, b)
}

#[test]
fn default_config_matches_core() {
    let mut c = DpIntegrationConfig {
        theta_3d: 0.0,
        theta_2d: 0.0,
        eps_unique: 1.0,
    };
    assert_eq!(unsafe { dp_integration_config_default(&mut c) }, DpStatus::Ok);
    assert_eq!((c.theta_3d, c.theta_2d, c.eps_unique), (0.9, 0.5, 0.0));
}

#[test]
fn modes_produce_expected_counts() {
    let (a, b) = pair();
    let (s, out, report) = integrate(&a, &b, DpMode::Simple, None);
    assert_eq!(s, DpStatus::Ok);
    assert_eq!(len(&out.unwrap()), 5);
    assert!(report.is_none());

    assert_eq!(len(&integrate(&a, &b, DpMode::Only3d, None).1.unwrap()), 2);
    assert_eq!(len(&integrate(&a, &b, DpMode::Only2d, None).1.unwrap()), 3);

    // a0~b0 merge (S1), b1 unique, b2 is a subset of a1: S3 keeps b2, drops a1
    let (s, out, report) = integrate(&a, &b, DpMode::Conditional, None);
    assert_eq!(s, DpStatus::Ok);
    let out = out.unwrap();
    assert_eq!(len(&out), 3);
    let report = report.unwrap();
    assert!(report.contains("s1_merge") && report.contains("s3_keep_2d"), "{report}");

    let mut idx = ptr::null();
    let mut count = 0;
    let mut ids = Vec::new();
    for k in 0..3 {
        unsafe {
            assert_eq!(dp_proposal_set_mask(out.0, k, &mut idx, &mut count), DpStatus::Ok);
            let mut id = ptr::null_mut();
            assert_eq!(dp_proposal_set_id(out.0, k, &mut id), DpStatus::Ok);
            ids.push((CStr::from_ptr(id).to_string_lossy().into_owned(), count));
            dp_string_free(id);
        }
    }
    assert!(ids.contains(&("a0+b0".to_string(), 10)), "{ids:?}");
}

#[test]
fn iou_triple() {
    let (a, b) = pair();
    let mut t = DpIoU::default();
    assert_eq!(unsafe { dp_iou(a.0, 0, b.0, 0, &mut t) }, DpStatus::Ok);
    assert!((t.iou - 0.9).abs() < 1e-12);
    assert!((t.iou_3d - 0.9).abs() < 1e-12);
    assert_eq!(t.iou_2d, 1.0);
    assert_eq!(unsafe { dp_iou(a.0, 1, b.0, 1, &mut t) }, DpStatus::Ok);
    assert_eq!(t, DpIoU::default());
    assert_eq!(unsafe { dp_iou(a.0, 5, b.0, 0, &mut t) }, DpStatus::OutOfRange);
    assert!(last_error().contains("5"));
}

#[test]
fn save_and_load_round_trip() {
    let (a, _) = pair();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("p.json").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(dp_proposal_set_save(a.0, path.as_ptr()), DpStatus::Ok);
        let mut h = ptr::null_mut();
        assert_eq!(dp_proposal_set_load(path.as_ptr(), &mut h), DpStatus::Ok);
        let back = Set(h);
        assert_eq!(len(&back), 2);
        let mut n = 0;
        assert_eq!(dp_proposal_set_point_count(back.0, &mut n), DpStatus::Ok);
        assert_eq!(n, 100);

        let mut ja = ptr::null_mut();
        let mut jb = ptr::null_mut();
        assert_eq!(dp_proposal_set_to_json(a.0, &mut ja), DpStatus::Ok);
        assert_eq!(dp_proposal_set_to_json(back.0, &mut jb), DpStatus::Ok);
        assert_eq!(CStr::from_ptr(ja), CStr::from_ptr(jb));
        dp_string_free(ja);
        dp_string_free(jb);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut h = ptr::null_mut();
        let missing = CString::new("/nonexistent/dir/p.json").unwrap();
        assert_eq!(dp_proposal_set_load(missing.as_ptr(), &mut h), DpStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("/nonexistent"));

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{ not json").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(dp_proposal_set_load(bad.as_ptr(), &mut h), DpStatus::Parse);

        assert_eq!(dp_proposal_set_load(ptr::null(), &mut h), DpStatus::NullPointer);
        assert_eq!(dp_proposal_set_len(ptr::null(), &mut 0), DpStatus::NullPointer);
        assert_eq!(dp_proposal_set_new(0, &mut h), DpStatus::InvalidArgument);
        dp_proposal_set_free(ptr::null_mut());
        dp_string_free(ptr::null_mut());
    }

    let (a, b) = pair();
    let c = build(50, DpSource::Path2d, &[("c", vec![1])]);
    assert_eq!(integrate(&a, &c, DpMode::Conditional, None).0, DpStatus::DimensionMismatch);
    let cfg = DpIntegrationConfig {
        theta_3d: 1.5,
        theta_2d: 0.5,
        eps_unique: 0.0,
    };
    let (s, out, _) = integrate(&a, &b, DpMode::Conditional, Some(&cfg));
    assert_eq!(s, DpStatus::Config);
    assert!(out.is_none());
    assert!(last_error().contains("theta_3d"));
}

#[test]
fn push_validates_input() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(dp_proposal_set_new(10, &mut h), DpStatus::Ok);
        let set = Set(h);
        let id = CString::new("x").unwrap();
        let f = [1.0f32, 0.0];
        assert_eq!(
            dp_proposal_set_push(set.0, id.as_ptr(), [3u32, 12].as_ptr(), 2, DpSource::Path3d, ptr::null(), 0),
            DpStatus::OutOfRange
        );
        assert_eq!(
            dp_proposal_set_push(set.0, id.as_ptr(), [3u32, 3].as_ptr(), 2, DpSource::Path3d, ptr::null(), 0),
            DpStatus::InvalidArgument
        );
        assert_eq!(
            dp_proposal_set_push(set.0, id.as_ptr(), ptr::null(), 0, DpSource::Path3d, ptr::null(), 0),
            DpStatus::InvalidArgument
        );
        // unsorted input is accepted and sorted
        assert_eq!(
            dp_proposal_set_push(set.0, id.as_ptr(), [7u32, 2, 5].as_ptr(), 3, DpSource::Path3d, f.as_ptr(), 2),
            DpStatus::Ok
        );
        // pending proposals are invisible until finished
        assert_eq!(len(&set), 0);
        let mut out = ptr::null_mut();
        assert_eq!(dp_proposal_set_to_json(set.0, &mut out), DpStatus::InvalidArgument);
        assert_eq!(dp_proposal_set_finish(set.0), DpStatus::Ok);
        assert_eq!(len(&set), 1);
        let mut idx = ptr::null();
        let mut n = 0;
        assert_eq!(dp_proposal_set_mask(set.0, 0, &mut idx, &mut n), DpStatus::Ok);
        assert_eq!(std::slice::from_raw_parts(idx, n), &[2, 5, 7]);

        // duplicate id and mismatched feature dimension are rejected at finish
        assert_eq!(
            dp_proposal_set_push(set.0, id.as_ptr(), [1u32].as_ptr(), 1, DpSource::Path3d, f.as_ptr(), 2),
            DpStatus::Ok
        );
        assert_eq!(dp_proposal_set_finish(set.0), DpStatus::InvalidArgument);
        assert!(last_error().contains("duplicate"));
        assert_eq!(len(&set), 1);
    }
}
