//! Frozen outputs on the bundled fixtures. A change to any of these hashes
//! means a pipeline stage changed its output; refreeze only after reviewing
//! the new result.

use sha2::{Digest, Sha256};
use strandforge::datagen::{raster_for, render_mask, render_orientation_map, synth_procedural_hair, StyleParams};
use strandforge::edit::cut_by_stroke;
use strandforge::formats::{write_hair, write_orientation_fmap, write_vfld, FloatRaster};
use strandforge::pipeline::{demo_sketch, Backend, EditRequest, Models, Session, SessionConfig};
use strandforge::{BustModel, GridSpec, StrandSet, ViewPose};

const RENDER_FMAP: &str = "5de9c8b753a71a5975862aeb414116f099beeee29b07cad4f5de61ead9363c4f";
const RENDER_MASK: &str = "7380687ead137c6f12eff43ca97db5cc7bee5b522861294d7e30689534dcb8e8";
const CUT_HAIR: &str = "00dff08d0428eda0260f753ff1add2175c9d4f88f851738e1590101fa9d78da2";
const SKETCH_RESPONSE: &str = "96123ab418cd5ce0faa76430da5a027a28653fcec3df0cd156f3411dfa49f1b3";
const YAW45_FIELD: &str = "4fdec16533c8c2413b2e095b7063c6b72e2ff7b75a72a1358943550f86ab2274";
const SESSION_CUT: &str = "1068fc7578b4d59cc2c984af71226a0cdafe9553f4a170dd1b2067a7e2f94863";

fn sha(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn fixture_hair() -> StrandSet {
    synth_procedural_hair(&BustModel::default_bust(), &StyleParams::default(), 0).unwrap()
}

fn fixture_stroke() -> Vec<[f32; 2]> {
    vec![[2.0, 14.0], [30.0, 12.0]]
}

fn fixture_session() -> Session {
    let mut s = Session::new("default", Backend::Diffusion, SessionConfig::default(), Models::default()).unwrap();
    s.submit_sketch(&demo_sketch(32)).unwrap();
    s.synthesize().unwrap();
    s
}

fn check(name: &str, got: String, want: &str) {
    assert_eq!(got, want, "{name} changed");
}

#[test]
fn fixture_render() {
    let spec = raster_for(&GridSpec::desk());
    let hair = fixture_hair();
    check("orientation render", sha(&write_orientation_fmap(&render_orientation_map(&hair, &ViewPose::IDENTITY, &spec))), RENDER_FMAP);
    let mask = render_mask(&hair, &ViewPose::IDENTITY, &spec);
    check("mask render", sha(&FloatRaster::from(&mask).to_bytes()), RENDER_MASK);
}

#[test]
fn fixture_cut() {
    let spec = raster_for(&GridSpec::desk());
    let hair = fixture_hair();
    let cut = cut_by_stroke(&hair, &fixture_stroke(), &ViewPose::IDENTITY, &spec).unwrap();
    assert!(cut.vertex_count() < hair.vertex_count());
    check("cut output", sha(&write_hair(&cut)), CUT_HAIR);
}

#[test]
fn fixture_sketch_response() {
    let mut s = Session::new("default", Backend::Diffusion, SessionConfig::default(), Models::default()).unwrap();
    let dense = s.submit_sketch(&demo_sketch(32)).unwrap();
    check("sketch response", sha(&write_orientation_fmap(dense)), SKETCH_RESPONSE);
}

#[test]
fn fixture_session_goldens() {
    let mut s = fixture_session();
    let field = s.rotate_view(ViewPose::new(0.0, 45.0, 0.0).unwrap()).unwrap();
    check("45 degree yaw field", sha(&write_vfld(field)), YAW45_FIELD);
    let mut s = fixture_session();
    let before = s.strands.as_ref().unwrap().vertex_count();
    s.apply_edit(&EditRequest::Cut { stroke: fixture_stroke() }).unwrap();
    assert!(s.strands.as_ref().unwrap().vertex_count() < before);
    check("session cut", sha(&s.export(strandforge::pipeline::ExportFormat::Hair).unwrap()), SESSION_CUT);
}
