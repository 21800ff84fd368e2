//! Synthetic training data: rendered maps, traced sketches, procedural hair
//! and multi-view tuples.

mod io;
mod render;
mod synth;
mod trace;

pub use io::{read_sample_dir, write_sample_dir, SampleMeta};
pub use render::{
    projected_tangent, raster_segment, render_bust_depth, render_mask, render_orientation_map, RasterSpec,
};
pub use synth::{synth_procedural_hair, StyleParams};
pub use trace::{bucketed_seed_order, trace_curve, trace_sketch_map, TraceParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    build_visibility_index, DepthMap, GridSpec, MaskMap, OrientationMap2D, VectorField3D, ViewPose,
};
use crate::strands::{grow_hair, rotate_strands, sample_roots, voxelize_strands, BustModel, GrowParams, StrandSet};

/// Pose augmentation ranges, degrees (half widths).
pub const AUG_Y_RANGE: f64 = 30.0;
pub const AUG_XZ_RANGE: f64 = 15.0;

/// Single-view pair for the 2D and 2D-to-3D networks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSampleSV {
    pub sketch: OrientationMap2D,
    pub mask: MaskMap,
    pub depth: DepthMap,
    pub dense: OrientationMap2D,
    pub field: VectorField3D,
}

impl TrainingSampleSV {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.dense.width, self.dense.height);
        let same = |a: usize, b: usize| a == w && b == h;
        if !same(self.sketch.width, self.sketch.height)
            || !same(self.mask.width, self.mask.height)
            || !same(self.depth.width, self.depth.height)
            || self.field.grid.nx != w
            || self.field.grid.ny != h
        {
            return Err(Error::Dimension("sample rasters disagree in size".into()));
        }
        for i in 0..w * h {
            if (self.sketch.is_valid_at(i) || self.dense.is_valid_at(i)) && self.mask.data[i] == 0 {
                return Err(Error::Invalid(format!("pixel {i} is valid outside the mask")));
            }
        }
        Ok(())
    }
}

/// Multi-view tuple: a prior field seen from a new view plus the new view's
/// ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSampleMV {
    /// Prior field rotated into the new view, possibly cropped.
    pub rotated: VectorField3D,
    pub dense: OrientationMap2D,
    /// Strokes traced from `dense`.
    pub sketch: OrientationMap2D,
    pub depth: DepthMap,
    pub target: VectorField3D,
    pub pose: ViewPose,
    /// Fraction of the rotated field's valid cells removed by cropping.
    pub crop_fraction: f32,
}

/// Uniform poses within +-30 degrees about Y and +-15 degrees about X and Z.
pub fn augment_pose_samples(count: usize, seed: u64) -> Result<Vec<ViewPose>> {
    if count == 0 {
        return Err(Error::Invalid("pose count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = rng.gen_range(-AUG_XZ_RANGE..=AUG_XZ_RANGE);
            let y = rng.gen_range(-AUG_Y_RANGE..=AUG_Y_RANGE);
            let z = rng.gen_range(-AUG_XZ_RANGE..=AUG_XZ_RANGE);
            ViewPose::new(x, y, z)
        })
        .collect()
}

/// Independent PRNG seed for item `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rasters share the grid's XY extent and resolution.
pub fn raster_for(grid: &GridSpec) -> RasterSpec {
    RasterSpec { width: grid.nx, height: grid.ny, bbox: grid.bbox }
}

/// Renders every channel of a single-view sample of `strands` seen from `pose`.
pub fn make_sv_sample(
    strands: &StrandSet,
    bust: &BustModel,
    pose: &ViewPose,
    grid: GridSpec,
    trace: &TraceParams,
) -> Result<TrainingSampleSV> {
    if strands.is_empty() {
        return Err(Error::Empty("no strands to render".into()));
    }
    let spec = raster_for(&grid);
    let dense = render_orientation_map(strands, pose, &spec);
    let mask = render_mask(strands, pose, &spec);
    let depth = render_bust_depth(bust, pose, &spec);
    let view = rotate_strands(strands, pose, &grid.bbox);
    let field = voxelize_strands(&view, grid)?;
    let sketch = trace_sketch_map(&dense, trace)?;
    Ok(TrainingSampleSV { sketch, mask, depth, dense, field })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetParams {
    pub count: usize,
    pub res: usize,
    pub style: String,
    pub seed: u64,
    pub curves_min: usize,
    pub curves_max: usize,
    /// Apply pose augmentation; otherwise every sample is a front view.
    pub augment: bool,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            count: 8,
            res: 32,
            style: "straight".into(),
            seed: 0,
            curves_min: 5,
            curves_max: 15,
            augment: true,
        }
    }
}

/// One generated sample with its metadata and source strands.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub sample: TrainingSampleSV,
    pub strands: StrandSet,
    pub meta: SampleMeta,
}

/// Generates `params.count` single-view samples in parallel; sample `i`
/// depends only on `(params.seed, i)`.
pub fn generate_sv_dataset(bust: &BustModel, params: &DatasetParams) -> Result<Vec<GeneratedSample>> {
    let base = StyleParams::preset(&params.style)?;
    if params.curves_min == 0 || params.curves_max < params.curves_min {
        return Err(Error::Invalid("curve count range must be positive and ordered".into()));
    }
    let grid = GridSpec::for_resolution(params.res);
    (0..params.count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(params.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let style = base.clone();
            let strands = synth_procedural_hair(bust, &style, seed)?;
            let pose = if params.augment {
                augment_pose_samples(1, rng.gen())?[0]
            } else {
                ViewPose::IDENTITY
            };
            let curves = rng.gen_range(params.curves_min..=params.curves_max);
            let trace = TraceParams { curve_count: curves, seed: rng.gen(), ..Default::default() };
            let sample = make_sv_sample(&strands, bust, &pose, grid, &trace)?;
            let meta = SampleMeta {
                id: format!("{i:05}"),
                seed,
                pose,
                style: params.style.clone(),
                style_params: style,
                curve_count: curves,
            };
            Ok(GeneratedSample { sample, strands, meta })
        })
        .collect()
}

/// Zeroes an axis-aligned box of cells around a random valid cell, growing
/// it until at least `fraction` of the valid cells are removed. Returns the
/// fraction actually removed.
pub fn crop_field(field: &mut VectorField3D, fraction: f32, rng: &mut impl Rng) -> f32 {
    let valid: Vec<usize> = field.valid_cells().collect();
    if fraction <= 0.0 || valid.is_empty() {
        return 0.0;
    }
    let g = field.grid;
    let (cx, cy, cz) = g.coords(valid[rng.gen_range(0..valid.len())]);
    let want = (fraction * valid.len() as f32).ceil() as usize;
    let max_half = g.nx.max(g.ny).max(g.nz);
    let mut half = 0usize;
    let in_box = |i: usize, h: usize| {
        let (x, y, z) = g.coords(i);
        x.abs_diff(cx) <= h && y.abs_diff(cy) <= h && z.abs_diff(cz) <= h
    };
    while half < max_half && valid.iter().filter(|&&i| in_box(i, half)).count() < want {
        half += 1;
    }
    let mut removed = 0;
    for &i in &valid {
        if in_box(i, half) {
            field.data[i] = [0.0; 3];
            removed += 1;
        }
    }
    removed as f32 / valid.len() as f32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvParams {
    pub seed: u64,
    /// Probability that a sample is cropped.
    pub crop_probability: f32,
    pub crop_min: f32,
    pub crop_max: f32,
    /// Use identity poses instead of augmented ones.
    pub identity_pose: bool,
    pub root_count: usize,
    pub grow: GrowParams,
}

impl Default for MvParams {
    fn default() -> Self {
        MvParams {
            seed: 0,
            crop_probability: 0.5,
            crop_min: 0.1,
            crop_max: 0.4,
            identity_pose: false,
            root_count: 2000,
            grow: GrowParams::default(),
        }
    }
}

/// Builds multi-view tuples. For each source model the front-view sample is
/// lifted by `backend`, strands are grown from the result, rotated into a
/// random view and re-voxelized; the new view's ground truth comes from the
/// source strands.
pub fn build_mv_dataset<F>(
    sources: &[GeneratedSample],
    bust: &BustModel,
    backend: F,
    params: &MvParams,
) -> Result<Vec<TrainingSampleMV>>
where
    F: Fn(&TrainingSampleSV) -> Result<VectorField3D> + Sync,
{
    if !(0.0..=1.0).contains(&params.crop_min) || params.crop_max < params.crop_min || params.crop_max > 1.0 {
        return Err(Error::Invalid("crop range must lie in [0, 1]".into()));
    }
    let roots = sample_roots(bust, params.root_count, params.seed)?;
    sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, i as u64));
            let grid = src.sample.field.grid;
            let front = if src.meta.pose.is_identity() {
                src.sample.clone()
            } else {
                let trace = TraceParams { curve_count: src.meta.curve_count, ..Default::default() };
                make_sv_sample(&src.strands, bust, &ViewPose::IDENTITY, grid, &trace)?
            };
            let prior = backend(&front)?;
            let grown = grow_hair(&prior, &roots, &GrowParams { seed: rng.gen(), ..params.grow })?;
            let pose = if params.identity_pose {
                ViewPose::IDENTITY
            } else {
                augment_pose_samples(1, rng.gen())?[0]
            };
            let mut rotated = voxelize_strands(&rotate_strands(&grown, &pose, &grid.bbox), grid)?;
            let crop = if params.crop_max > 0.0 && rng.gen::<f32>() < params.crop_probability {
                let f = rng.gen_range(params.crop_min..=params.crop_max);
                crop_field(&mut rotated, f, &mut rng)
            } else {
                0.0
            };
            let spec = raster_for(&grid);
            let target = voxelize_strands(&rotate_strands(&src.strands, &pose, &grid.bbox), grid)?;
            let dense = render_orientation_map(&src.strands, &pose, &spec);
            let trace = TraceParams { curve_count: src.meta.curve_count, seed: rng.gen(), ..Default::default() };
            let sketch = trace_sketch_map(&dense, &trace)?;
            Ok(TrainingSampleMV {
                rotated,
                dense,
                sketch,
                depth: render_bust_depth(bust, &pose, &spec),
                target,
                pose,
                crop_fraction: crop,
            })
        })
        .collect()
}

/// Valid cells of `field` that no pixel sees from the front.
pub fn invisible_cells(field: &VectorField3D) -> Vec<usize> {
    let vis = build_visibility_index(field, &ViewPose::IDENTITY);
    let mut seen = vec![false; field.data.len()];
    for (_, c) in vis.pairs() {
        seen[c] = true;
    }
    field.valid_cells().filter(|&i| !seen[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::project_field;
    use crate::geom;

    #[test]
    fn poses_in_range_and_reproducible() {
        let p = augment_pose_samples(500, 3).unwrap();
        for v in &p {
            assert!(v.y_deg.abs() <= 30.0);
            assert!(v.x_deg.abs() <= 15.0 && v.z_deg.abs() <= 15.0);
        }
        assert_eq!(p, augment_pose_samples(500, 3).unwrap());
        assert!(augment_pose_samples(0, 3).is_err());
    }

    #[test]
    fn generated_samples_satisfy_invariants() {
        let bust = BustModel::default_bust();
        let params = DatasetParams { count: 3, seed: 8, ..Default::default() };
        let set = generate_sv_dataset(&bust, &params).unwrap();
        assert_eq!(set.len(), 3);
        for g in &set {
            g.sample.validate().unwrap();
            assert!(g.sample.sketch.valid_count() > 0);
            let vis = build_visibility_index(&g.sample.field, &ViewPose::IDENTITY);
            let proj = project_field(&g.sample.field, &vis).unwrap();
            let (mut ok, mut n) = (0, 0);
            for i in 0..proj.data.len() {
                if proj.is_valid_at(i) && g.sample.dense.is_valid_at(i) {
                    n += 1;
                    if geom::angle_between_2d(proj.data[i], g.sample.dense.data[i]).to_degrees() <= 15.0 {
                        ok += 1;
                    }
                }
            }
            assert!(n > 50 && ok as f64 >= 0.9 * n as f64, "{ok}/{n}");
        }
        assert_eq!(set, generate_sv_dataset(&bust, &params).unwrap());
    }

    #[test]
    fn crop_zero_is_identity_and_crop_hits_fraction() {
        let bust = BustModel::default_bust();
        let h = synth_procedural_hair(&bust, &StyleParams { root_count: 200, ..Default::default() }, 1).unwrap();
        let f = voxelize_strands(&h, GridSpec::desk()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = f.clone();
        assert_eq!(crop_field(&mut g, 0.0, &mut rng), 0.0);
        assert_eq!(g, f);
        let got = crop_field(&mut g, 0.25, &mut rng);
        assert!(got >= 0.25 && got < 0.9, "{got}");
        assert!(g.valid_count() < f.valid_count());
    }

    #[test]
    fn mv_identity_without_crop_keeps_field() {
        let bust = BustModel::default_bust();
        let params = DatasetParams { count: 1, augment: false, seed: 2, ..Default::default() };
        let src = generate_sv_dataset(&bust, &params).unwrap();
        let mv = MvParams { crop_max: 0.0, crop_min: 0.0, identity_pose: true, ..Default::default() };
        let out = build_mv_dataset(&src, &bust, |s| Ok(s.field.clone()), &mv).unwrap();
        let m = &out[0];
        assert_eq!(m.crop_fraction, 0.0);
        let (mut sum, mut n) = (0.0f64, 0usize);
        for i in 0..m.target.data.len() {
            if m.target.is_valid_at(i) && m.rotated.is_valid_at(i) {
                sum += geom::angle_between(m.target.data[i], m.rotated.data[i]).to_degrees() as f64;
                n += 1;
            }
        }
        assert!(n > 50);
        assert!(sum / (n as f64) < 10.0, "mean angle {}", sum / n as f64);
    }
}
