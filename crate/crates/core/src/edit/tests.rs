use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::formats::{read_hair, write_hair};

fn spec() -> RasterSpec {
    RasterSpec::square(32)
}

fn vertical(x: f32, n: usize) -> Strand {
    Strand::new((0..n).map(|i| [x, 0.5 - 0.1 * i as f32, 0.0]).collect(), true)
}

fn world_to_px(p: [f32; 2]) -> Vec2 {
    spec().to_pixel([p[0], p[1], 0.0])
}

#[test]
fn stroke_missing_everything_changes_nothing() {
    let h = StrandSet::new(vec![vertical(0.01, 11), vertical(0.3, 11)]);
    let stroke = vec![world_to_px([-0.9, 0.9]), world_to_px([-0.8, 0.95])];
    assert_eq!(cut_by_stroke(&h, &stroke, &ViewPose::IDENTITY, &spec()).unwrap(), h);
}

#[test]
fn horizontal_stroke_truncates_vertical_strand() {
    let h = StrandSet::new(vec![vertical(0.01, 11)]);
    let stroke = vec![world_to_px([-0.5, 0.05]), world_to_px([0.5, 0.05])];
    let c = cut_by_stroke(&h, &stroke, &ViewPose::IDENTITY, &spec()).unwrap();
    let s = &c.strands[0];
    assert_eq!(s.len(), 6);
    assert_eq!(&s.vertices[..5], &h.strands[0].vertices[..5]);
    let end = s.vertices[5];
    assert!((end[1] - 0.05).abs() < 1e-5 && (end[0] - 0.01).abs() < 1e-6);
    assert!(s.rooted);
}

#[test]
fn cut_at_root_drops_strand() {
    let h = StrandSet::new(vec![vertical(0.01, 11)]);
    let stroke = vec![world_to_px([-0.5, 0.5]), world_to_px([0.5, 0.5])];
    assert!(cut_by_stroke(&h, &stroke, &ViewPose::IDENTITY, &spec()).unwrap().is_empty());
}

fn arb_hair() -> impl Strategy<Value = StrandSet> {
    prop::collection::vec(
        prop::collection::vec((-0.9f32..0.9, -0.9f32..0.9, -0.7f32..0.7), 2..12),
        1..6,
    )
    .prop_map(|ss| {
        StrandSet::new(
            ss.into_iter()
                .map(|v| {
                    let mut verts: Vec<Vec3> = v.into_iter().map(|(x, y, z)| [x, y, z]).collect();
                    verts.dedup();
                    if verts.len() < 2 {
                        verts.push([0.95, 0.95, 0.0]);
                    }
                    Strand::new(verts, true)
                })
                .collect(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cut_is_idempotent(h in arb_hair(), pts in prop::collection::vec((0f32..32.0, 0f32..32.0), 2..5), yaw in -40.0f64..40.0) {
        let stroke: Vec<Vec2> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        let pose = ViewPose::yaw(yaw);
        let once = cut_by_stroke(&h, &stroke, &pose, &spec()).unwrap();
        let twice = cut_by_stroke(&once, &stroke, &pose, &spec()).unwrap();
        prop_assert_eq!(&once, &twice);
        for s in &once.strands {
            prop_assert!(s.len() >= 2);
            prop_assert!(s.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())));
        }
    }

    #[test]
    fn trim_is_idempotent(h in arb_hair(), bits in prop::collection::vec(any::<bool>(), 1024)) {
        let mask = MaskMap::from_data(32, 32, bits.iter().map(|&b| b as u8).collect()).unwrap();
        let (once, _) = trim_by_mask(&h, &mask, &mask, &ViewPose::IDENTITY, &spec()).unwrap();
        let (twice, _) = trim_by_mask(&once, &mask, &mask, &ViewPose::IDENTITY, &spec()).unwrap();
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn trim_full_empty_and_enlarged() {
    let h = StrandSet::new(vec![vertical(0.01, 11), vertical(0.3, 6)]);
    let full = MaskMap::full(32, 32);
    let old = crate::datagen::render_mask(&h, &ViewPose::IDENTITY, &spec());
    let (same, flag) = trim_by_mask(&h, &full, &old, &ViewPose::IDENTITY, &spec()).unwrap();
    assert_eq!(same, h);
    assert!(!flag);
    let empty = MaskMap::new(32, 32);
    let (gone, flag) = trim_by_mask(&h, &empty, &old, &ViewPose::IDENTITY, &spec()).unwrap();
    assert!(gone.is_empty());
    assert!(!flag);
    let mut bigger = old.clone();
    bigger.set(0, 0, true);
    let (kept, flag) = trim_by_mask(&h, &bigger, &old, &ViewPose::IDENTITY, &spec()).unwrap();
    assert_eq!(kept, h);
    assert!(flag);
}

#[test]
fn trim_keeps_prefix_inside_mask() {
    let h = StrandSet::new(vec![vertical(0.01, 11)]);
    let mut m = MaskMap::new(32, 32);
    // Rows covering world y in [0.0, 0.5].
    for y in 16..25 {
        m.set(16, y, true);
    }
    let (t, _) = trim_by_mask(&h, &m, &m, &ViewPose::IDENTITY, &spec()).unwrap();
    assert_eq!(t.strands[0].vertices, h.strands[0].vertices[..6].to_vec());
}

#[test]
fn scalp_selection_covers_all_rooted() {
    let bust = BustModel::default_bust();
    let roots = crate::strands::sample_roots(&bust, 30, 2).unwrap();
    let mut strands: Vec<Strand> = roots
        .points
        .iter()
        .zip(&roots.normals)
        .map(|(p, n)| Strand::new(vec![*p, geom::add(*p, geom::scale(*n, 0.1))], true))
        .collect();
    strands.push(Strand::new(vec![[0.0; 3], [0.1, 0.0, 0.0]], false));
    let h = StrandSet::new(strands);
    let q = WispQuery::ScalpRegion { faces: bust.scalp_faces.clone() };
    let sel = select_wisp(&h, &bust, &q, &ViewPose::IDENTITY, &spec()).unwrap();
    assert_eq!(sel.items.len(), 30);
    let q = WispQuery::ScalpRegion { faces: scalp_faces_near(&bust, roots.points[0], 0.05) };
    let sel = select_wisp(&h, &bust, &q, &ViewPose::IDENTITY, &spec()).unwrap();
    assert!(sel.items.iter().any(|(i, _)| *i == 0));
    assert!(sel.items.len() < 30);
}

fn wavy(x0: f32) -> Strand {
    Strand::new(
        (0..30).map(|i| [x0 + 0.08 * (i as f32 * 0.5).sin(), 0.7 - 0.05 * i as f32, 0.0]).collect(),
        true,
    )
}

#[test]
fn sketch_selection_self_match_and_orthogonal_miss() {
    let bust = BustModel::default_bust();
    let h = StrandSet::new(vec![wavy(-0.5), wavy(0.0), wavy(0.5)]);
    let curve: Vec<Vec2> = h.strands[1].vertices.iter().map(|v| spec().to_pixel(*v)).collect();
    let q = WispQuery::SketchMatch { curve, max_distance_px: 2.0 };
    let sel = select_wisp(&h, &bust, &q, &ViewPose::IDENTITY, &spec()).unwrap();
    assert_eq!(sel.items.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1]);
    let across = vec![world_to_px([-0.9, -0.5]), world_to_px([0.9, -0.5])];
    let q = WispQuery::SketchMatch { curve: across, max_distance_px: 2.0 };
    assert!(select_wisp(&h, &bust, &q, &ViewPose::IDENTITY, &spec()).unwrap().is_empty());
}

/// Oracle: equality-constrained least squares through the KKT system.
fn kkt(verts: &[Vec3], fixed: &[(usize, Vec3)]) -> Vec<Vec3> {
    let n = verts.len();
    let m = fixed.len();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let nb: Vec<usize> = [i.wrapping_sub(1), i + 1].into_iter().filter(|&j| j < n).collect();
        l[(i, i)] = 1.0;
        for &j in &nb {
            l[(i, j)] -= 1.0 / nb.len() as f64;
        }
    }
    let ltl = l.transpose() * &l;
    let mut k = DMatrix::<f64>::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&ltl);
    for (r, (i, _)) in fixed.iter().enumerate() {
        k[(n + r, *i)] = 1.0;
        k[(*i, n + r)] = 1.0;
    }
    let lu = k.lu();
    let mut out = vec![[0.0f32; 3]; n];
    for c in 0..3 {
        let v = DVector::from_fn(n, |i, _| verts[i][c] as f64);
        let top = l.transpose() * (&l * v);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&top);
        for (r, (_, p)) in fixed.iter().enumerate() {
            rhs[n + r] = p[c] as f64;
        }
        let x = lu.solve(&rhs).unwrap();
        for i in 0..n {
            out[i][c] = x[i] as f32;
        }
    }
    out
}

#[test]
fn deform_matches_kkt_oracle() {
    let s = vertical(0.0, 15);
    let h = StrandSet::new(vec![s.clone()]);
    let sel = EditSelection::all(&h);
    let handle = Handle { strand: 0, vertex: 7, displacement: [0.2, 0.05, -0.1] };
    let d = laplacian_deform(&h, &sel, &[handle]).unwrap();
    let want = kkt(&s.vertices, &[(0, s.vertices[0]), (7, geom::add(s.vertices[7], handle.displacement))]);
    for (a, b) in d.strands[0].vertices.iter().zip(&want) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-6, "{a:?} vs {b:?}");
        }
    }
    assert_eq!(d.strands[0].vertices[0], s.vertices[0]);
}

#[test]
fn deform_zero_and_rigid() {
    let h = StrandSet::new(vec![wavy(0.1)]);
    let sel = EditSelection::all(&h);
    let zero = laplacian_deform(&h, &sel, &[Handle { strand: 0, vertex: 10, displacement: [0.0; 3] }]).unwrap();
    for (a, b) in zero.strands[0].vertices.iter().zip(&h.strands[0].vertices) {
        assert!(geom::dist(*a, *b) < 1e-6);
    }
    let t = [0.1, -0.2, 0.05];
    let hs = [Handle { strand: 0, vertex: 0, displacement: t }, Handle { strand: 0, vertex: 29, displacement: t }];
    let moved = laplacian_deform(&h, &sel, &hs).unwrap();
    for (a, b) in moved.strands[0].vertices.iter().zip(&h.strands[0].vertices) {
        let e = geom::add(*b, t);
        for c in 0..3 {
            assert!((a[c] - e[c]).abs() < 1e-5);
        }
    }
}

#[test]
fn deform_without_anchor_fails() {
    let mut s = vertical(0.0, 5);
    s.rooted = false;
    let h = StrandSet::new(vec![s]);
    assert!(laplacian_deform(&h, &EditSelection::all(&h), &[]).is_err());
}

#[test]
fn unselected_strands_untouched() {
    let h = StrandSet::new(vec![vertical(0.0, 8), vertical(0.5, 8)]);
    let sel = EditSelection { items: vec![(0, 0..8)], source: SelectionSource::ScalpRegion };
    let d = laplacian_deform(&h, &sel, &[Handle { strand: 0, vertex: 7, displacement: [0.1, 0.0, 0.0] }]).unwrap();
    assert_eq!(d.strands[1], h.strands[1]);
    let bad = Handle { strand: 1, vertex: 3, displacement: [0.1, 0.0, 0.0] };
    assert!(laplacian_deform(&h, &sel, &[bad]).is_err());
}

#[test]
fn scale_and_recolor() {
    let h = StrandSet::new(vec![wavy(0.0)]);
    let sel = EditSelection::all(&h);
    assert_eq!(scale_length(&h, &sel, 1.0).unwrap(), h);
    let d = scale_length(&h, &sel, 2.0).unwrap();
    for (a, b) in d.strands[0].vertices.windows(2).zip(h.strands[0].vertices.windows(2)) {
        assert!((geom::dist(a[0], a[1]) - 2.0 * geom::dist(b[0], b[1])).abs() < 1e-6);
    }
    assert!(scale_length(&h, &sel, 0.0).is_err());
    let c = recolor(&h, &sel, [0.8, 0.4, 0.1]).unwrap();
    let back = read_hair(&write_hair(&c)).unwrap();
    assert_eq!(back.strands[0].color, Some([0.8, 0.4, 0.1]));
    assert!(recolor(&h, &sel, [2.0, 0.0, 0.0]).is_err());
}

