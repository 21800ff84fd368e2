use super::*;
use crate::formats::read_hair;
use crate::pipeline::demo_sketch;

fn sketched() -> Session {
    let mut s = Session::new("default", Backend::Diffusion, SessionConfig::default(), Models::default()).unwrap();
    s.submit_sketch(&demo_sketch(32)).unwrap();
    s
}

#[test]
fn unknown_bust_is_not_found() {
    let e = Session::new("nope", Backend::Diffusion, SessionConfig::default(), Models::default()).unwrap_err();
    assert!(matches!(e, Error::NotFound(_)));
}

#[test]
fn sketch_fills_mask() {
    let s = sketched();
    let (dense, mask) = (s.dense.as_ref().unwrap(), s.mask.as_ref().unwrap());
    assert_eq!(dense.valid_count(), mask.count());
}

#[test]
fn sketch_size_must_match() {
    let mut s = sketched();
    assert!(matches!(s.submit_sketch(&demo_sketch(16)), Err(Error::Dimension(_))));
    assert_eq!(s.history().len(), 1);
}

#[test]
fn synthesize_needs_a_sketch() {
    let mut s = Session::new("default", Backend::Diffusion, SessionConfig::default(), Models::default()).unwrap();
    assert!(s.synthesize().is_err());
    assert!(s.history().is_empty());
}

#[test]
fn neural_without_weights_fails_cleanly() {
    let mut s = Session::new("default", Backend::Neural, SessionConfig::default(), Models::default()).unwrap();
    assert!(s.submit_sketch(&demo_sketch(32)).is_err());
}

#[test]
fn synthesis_is_deterministic_and_replayable() {
    let mut s = sketched();
    let a = s.synthesize().unwrap();
    assert!(a.strands >= 1000, "{} strands", a.strands);
    let b = s.synthesize().unwrap();
    assert_eq!(a.hash, b.hash);
    s.rotate_view(ViewPose::yaw(30.0)).unwrap();
    let c = s.synthesize().unwrap();
    s.apply_edit(&EditRequest::Cut { stroke: vec![[4.0, 14.0], [28.0, 14.0]] }).unwrap();
    let r = Session::replay("default", Backend::Diffusion, SessionConfig::default(), Models::default(), s.history()).unwrap();
    assert_eq!(strand_hash(r.strands.as_ref().unwrap()), strand_hash(s.strands.as_ref().unwrap()));
    assert_ne!(c.hash, a.hash);
}

#[test]
fn identity_view_is_a_noop_and_round_trip_keeps_geometry() {
    let mut s = sketched();
    s.synthesize().unwrap();
    let before = s.strands.clone().unwrap();
    let f = s.field.clone().unwrap();
    s.rotate_view(ViewPose::IDENTITY).unwrap();
    assert_eq!(s.field.as_ref().unwrap(), &f);
    s.rotate_view(ViewPose::yaw(45.0)).unwrap();
    s.rotate_view(ViewPose::IDENTITY).unwrap();
    assert_eq!(s.strands.as_ref().unwrap(), &before);
}

#[test]
fn zero_displacement_deform_keeps_hash() {
    let mut s = sketched();
    let a = s.synthesize().unwrap();
    let h = Handle { strand: 0, vertex: 1, displacement: [0.0; 3] };
    let b = s.apply_edit(&EditRequest::Deform { selection: None, handles: vec![h] }).unwrap();
    assert_eq!(a.hash, b.hash);
}

#[test]
fn enlarged_mask_resynthesizes() {
    let mut s = sketched();
    s.synthesize().unwrap();
    let full = vec![[0.5, 0.5], [31.5, 0.5], [31.5, 31.5], [1.0, 31.5], [0.5, 0.5]];
    let out = s.apply_edit(&EditRequest::Trim { contour: full }).unwrap();
    assert!(out.resynthesized);
    assert!(s.history().last().unwrap().resynthesized);
    // A smaller mask only trims.
    let small = vec![[8.0, 12.0], [24.0, 12.0], [24.0, 30.0], [8.0, 30.0], [8.0, 12.0]];
    let out = s.apply_edit(&EditRequest::Trim { contour: small }).unwrap();
    assert!(!out.resynthesized);
}

#[test]
fn exports() {
    let mut s = sketched();
    s.synthesize().unwrap();
    let strands = s.strands.clone().unwrap();
    assert_eq!(read_hair(&s.export(ExportFormat::Hair).unwrap()).unwrap(), strands);
    let obj = String::from_utf8(s.export(ExportFormat::Obj).unwrap()).unwrap();
    let lines = obj.lines().filter(|l| l.starts_with("l ")).count();
    assert_eq!(lines, strands.strands.iter().map(|s| s.len() - 1).sum::<usize>());
    assert!(ExportFormat::parse("ply").is_err());
    let f = s.export_field().unwrap();
    assert!(f.data.iter().flatten().all(|c| c.abs() <= 1.0));
}

#[test]
fn history_serializes() {
    let mut s = sketched();
    s.synthesize().unwrap();
    let json = serde_json::to_string(s.history()).unwrap();
    let back: Vec<HistoryEntry> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, s.history());
}
