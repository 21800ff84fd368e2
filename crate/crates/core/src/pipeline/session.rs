use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::infer::{clamp_field, infer_o2v, infer_s2o, infer_v2v};
use super::sketch::{boundary_defaults, rasterize_contour, validate_contour, StrokeSet};
use crate::baseline::{diffuse_field_3d, diffuse_orientation_2d, update_field_diffusion, ShellParams};
use crate::datagen::{raster_for, render_bust_depth, RasterSpec};
use crate::edit::{cut_by_stroke, laplacian_deform, recolor, scale_length, select_wisp, trim_by_mask, EditSelection, Handle, WispQuery};
use crate::error::{Error, Result};
use crate::field::{DepthMap, GridSpec, MaskMap, OrientationMap2D, VectorField3D, ViewPose};
use crate::formats::{write_hair, write_obj};
use crate::geom::{Vec2, Vec3};
use crate::neural::{NetKind, WeightStore};
use crate::strands::{grow_hair, rotate_strands, sample_roots, unrotate_strands, voxelize_strands, BustModel, GrowParams, StrandSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Neural,
    #[default]
    Diffusion,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Backend> {
        match s {
            "neural" => Ok(Backend::Neural),
            "diffusion" => Ok(Backend::Diffusion),
            _ => Err(Error::Invalid(format!("unknown backend '{s}'"))),
        }
    }
}

/// Trained generators for the neural backend. Read-only once loaded.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub s2o: Option<Arc<WeightStore>>,
    pub o2v: Option<Arc<WeightStore>>,
    pub v2v: Option<Arc<WeightStore>>,
}

impl Models {
    fn get(&self, kind: NetKind, res: usize) -> Result<&WeightStore> {
        let slot = match kind {
            NetKind::S2o => &self.s2o,
            NetKind::O2v => &self.o2v,
            NetKind::V2v => &self.v2v,
        };
        let store = slot
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("neural backend has no {} weights loaded", kind.as_str())))?;
        if store.meta.res != res {
            return Err(Error::Dimension(format!(
                "{} weights are for resolution {}, session uses {res}",
                kind.as_str(),
                store.meta.res
            )));
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Image resolution; the grid is `res x res x 3res/4`.
    pub res: usize,
    pub root_count: usize,
    pub seed: u64,
    pub grow: GrowParams,
    pub shell: ShellParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { res: 32, root_count: 3000, seed: 0, grow: GrowParams::default(), shell: ShellParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EditRequest {
    /// Cut every strand crossed by the stroke (current-view pixels).
    Cut { stroke: Vec<Vec2> },
    /// Trim strands to a new mask contour; an enlarged mask re-synthesizes.
    Trim { contour: Vec<Vec2> },
    /// Move handle vertices (world-space displacements) of the selection.
    Deform {
        #[serde(default)]
        selection: Option<WispQuery>,
        handles: Vec<Handle>,
    },
    ScaleLength {
        #[serde(default)]
        selection: Option<WispQuery>,
        factor: f32,
    },
    Recolor {
        #[serde(default)]
        selection: Option<WispQuery>,
        color: [f32; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Operation {
    Sketch { strokes: StrokeSet },
    Synthesize,
    View { pose: ViewPose },
    Edit { edit: EditRequest },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    #[serde(flatten)]
    pub op: Operation,
    /// The operation re-synthesized the field and regrew the strands.
    #[serde(default)]
    pub resynthesized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Hair,
    Obj,
    Json,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<ExportFormat> {
        match s {
            "hair" => Ok(ExportFormat::Hair),
            "obj" => Ok(ExportFormat::Obj),
            "json" => Ok(ExportFormat::Json),
            _ => Err(Error::Invalid(format!("unknown export format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrandSummary {
    pub strands: usize,
    pub rooted: usize,
    pub vertices: usize,
    pub bounds: Option<(Vec3, Vec3)>,
    /// SHA-256 of the HAIR encoding.
    pub hash: String,
    pub version: u64,
    pub resynthesized: bool,
}

/// Result of [`Session::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Dense(OrientationMap2D),
    Strands(StrandSummary),
    View(VectorField3D),
}

/// Hex SHA-256 of the HAIR encoding of `strands`.
pub fn strand_hash(strands: &StrandSet) -> String {
    crate::neural::spec::hex(&Sha256::digest(write_hair(strands)))
}

/// Grows strands through a field expressed in view `pose`, from roots
/// sampled on the rotated bust, and returns them in world space.
pub fn grow_in_view(
    bust: &BustModel,
    field: &VectorField3D,
    pose: &ViewPose,
    root_count: usize,
    params: &GrowParams,
) -> Result<StrandSet> {
    let bbox = field.grid.bbox;
    let mut view_bust = bust.clone();
    if !pose.is_identity() {
        let m = pose.matrix();
        let c = bbox.center();
        for v in &mut view_bust.vertices {
            *v = m.apply_about(*v, c);
        }
    }
    let roots = sample_roots(&view_bust, root_count, params.seed)?;
    let view = grow_hair(field, &roots, params)?;
    Ok(unrotate_strands(&view, pose, &bbox))
}

/// State of one modeling session. Strands are kept in world space; maps and
/// the field live in the current view.
#[derive(Debug, Clone)]
pub struct Session {
    pub bust_id: String,
    pub backend: Backend,
    pub config: SessionConfig,
    pub pose: ViewPose,
    pub strokes: Option<StrokeSet>,
    pub mask: Option<MaskMap>,
    pub sketch: Option<OrientationMap2D>,
    pub dense: Option<OrientationMap2D>,
    pub field: Option<VectorField3D>,
    pub strands: Option<StrandSet>,
    /// Bumped whenever the strands change.
    pub version: u64,
    history: Vec<HistoryEntry>,
    bust: Arc<BustModel>,
    models: Models,
    /// The field was re-voxelized after a view change and awaits an update.
    rotated_prior: bool,
}

impl Session {
    pub fn new(bust_id: &str, backend: Backend, config: SessionConfig, models: Models) -> Result<Session> {
        let bust = BustModel::by_id(bust_id).ok_or_else(|| Error::NotFound(format!("unknown bust '{bust_id}'")))?;
        if config.res == 0 || config.root_count == 0 {
            return Err(Error::Invalid("resolution and root count must be positive".into()));
        }
        Ok(Session {
            bust_id: bust_id.to_string(),
            backend,
            config,
            pose: ViewPose::IDENTITY,
            strokes: None,
            mask: None,
            sketch: None,
            dense: None,
            field: None,
            strands: None,
            version: 0,
            history: Vec::new(),
            bust: Arc::new(bust),
            models,
            rotated_prior: false,
        })
    }

    /// Rebuilds a session by re-running `history` from an empty state.
    pub fn replay(
        bust_id: &str,
        backend: Backend,
        config: SessionConfig,
        models: Models,
        history: &[HistoryEntry],
    ) -> Result<Session> {
        let mut s = Session::new(bust_id, backend, config, models)?;
        for e in history {
            s.apply(&e.op)?;
        }
        Ok(s)
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::for_resolution(self.config.res)
    }

    pub fn raster(&self) -> RasterSpec {
        raster_for(&self.grid())
    }

    pub fn apply(&mut self, op: &Operation) -> Result<Outcome> {
        match op {
            Operation::Sketch { strokes } => self.submit_sketch(strokes).map(|m| Outcome::Dense(m.clone())),
            Operation::Synthesize => self.synthesize().map(Outcome::Strands),
            Operation::View { pose } => self.rotate_view(*pose).map(|f| Outcome::View(f.clone())),
            Operation::Edit { edit } => self.apply_edit(edit).map(Outcome::Strands),
        }
    }

    fn dense_from(&self, sketch: &OrientationMap2D, mask: &MaskMap) -> Result<OrientationMap2D> {
        match self.backend {
            Backend::Diffusion => diffuse_orientation_2d(sketch, mask),
            Backend::Neural => infer_s2o(self.models.get(NetKind::S2o, self.config.res)?, sketch, mask),
        }
    }

    /// Rasterizes the sketch in the current view and fills the mask with a
    /// dense orientation map.
    pub fn submit_sketch(&mut self, strokes: &StrokeSet) -> Result<&OrientationMap2D> {
        let r = self.raster();
        if strokes.width != r.width || strokes.height != r.height {
            return Err(Error::Dimension(format!(
                "sketch is {}x{}, session raster is {}x{}",
                strokes.width, strokes.height, r.width, r.height
            )));
        }
        let (sketch, mask) = strokes.rasterize()?;
        let dense = self.dense_from(&sketch, &mask)?;
        self.strokes = Some(strokes.clone());
        self.sketch = Some(sketch);
        self.mask = Some(mask);
        self.dense = Some(dense);
        self.history.push(HistoryEntry { op: Operation::Sketch { strokes: strokes.clone() }, resynthesized: false });
        Ok(self.dense.as_ref().unwrap())
    }

    fn depth(&self) -> DepthMap {
        render_bust_depth(&self.bust, &self.pose, &self.raster())
    }

    /// Field for the current view: fresh, or an update of the rotated prior.
    fn solve_field(&self, dense: &OrientationMap2D, mask: &MaskMap, prior: Option<&VectorField3D>) -> Result<VectorField3D> {
        let depth = self.depth();
        let grid = self.grid();
        match (self.backend, prior) {
            (Backend::Diffusion, None) => diffuse_field_3d(dense, mask, &depth, grid, &self.config.shell),
            (Backend::Diffusion, Some(p)) => update_field_diffusion(p, dense, mask, &depth, &self.config.shell),
            (Backend::Neural, None) => infer_o2v(self.models.get(NetKind::O2v, self.config.res)?, dense, &depth, grid),
            (Backend::Neural, Some(p)) => infer_v2v(self.models.get(NetKind::V2v, self.config.res)?, p, dense, &depth),
        }
    }

    fn grow(&self, field: &VectorField3D) -> Result<StrandSet> {
        let params = GrowParams { seed: self.config.seed, ..self.config.grow };
        grow_in_view(&self.bust, field, &self.pose, self.config.root_count, &params)
    }

    fn summary(&self, resynthesized: bool) -> StrandSummary {
        let s = self.strands.as_ref().expect("summary needs strands");
        StrandSummary {
            strands: s.len(),
            rooted: s.rooted_count(),
            vertices: s.vertex_count(),
            bounds: s.bounds(),
            hash: strand_hash(s),
            version: self.version,
            resynthesized,
        }
    }

    /// Lifts the dense map to a field and grows strands. After a view change
    /// the rotated prior field is updated instead of solved from scratch.
    pub fn synthesize(&mut self) -> Result<StrandSummary> {
        let (dense, mask) = match (&self.dense, &self.mask) {
            (Some(d), Some(m)) => (d, m),
            _ => return Err(Error::Invalid("session has no dense orientation map".into())),
        };
        if mask.count() == 0 {
            return Err(Error::Empty("mask is empty".into()));
        }
        let prior = if self.rotated_prior { self.field.as_ref() } else { None };
        let field = self.solve_field(dense, mask, prior)?;
        let strands = self.grow(&field)?;
        self.field = Some(field);
        self.strands = Some(strands);
        self.rotated_prior = false;
        self.version += 1;
        self.history.push(HistoryEntry { op: Operation::Synthesize, resynthesized: true });
        Ok(self.summary(true))
    }

    /// Moves to view `pose`: the strands are rotated into the new view and
    /// re-voxelized as the prior for the next synthesis.
    pub fn rotate_view(&mut self, pose: ViewPose) -> Result<&VectorField3D> {
        let pose = ViewPose::new(pose.x_deg, pose.y_deg, pose.z_deg)?;
        let strands = self.strands.as_ref().ok_or_else(|| Error::Invalid("session has no strands to rotate".into()))?;
        if pose != self.pose {
            let grid = self.grid();
            let field = voxelize_strands(&rotate_strands(strands, &pose, &grid.bbox), grid)?;
            self.pose = pose;
            self.field = Some(field);
            self.rotated_prior = true;
        }
        self.history.push(HistoryEntry { op: Operation::View { pose }, resynthesized: false });
        Ok(self.field.as_ref().expect("strands imply a field"))
    }

    fn selection(&self, strands: &StrandSet, q: &Option<WispQuery>) -> Result<EditSelection> {
        match q {
            None => Ok(EditSelection::all(strands)),
            Some(q) => select_wisp(strands, &self.bust, q, &self.pose, &self.raster()),
        }
    }

    pub fn apply_edit(&mut self, edit: &EditRequest) -> Result<StrandSummary> {
        let strands = self.strands.as_ref().ok_or_else(|| Error::Invalid("session has no strands to edit".into()))?;
        let spec = self.raster();
        let mut resynth = None;
        let edited = match edit {
            EditRequest::Cut { stroke } => cut_by_stroke(strands, stroke, &self.pose, &spec)?,
            EditRequest::Trim { contour } => {
                validate_contour(contour)?;
                let new_mask = rasterize_contour(contour, spec.width, spec.height);
                let old_mask = self.mask.clone().unwrap_or_else(|| MaskMap::new(spec.width, spec.height));
                let (trimmed, grows) = trim_by_mask(strands, &new_mask, &old_mask, &self.pose, &spec)?;
                if grows {
                    resynth = Some(new_mask);
                }
                trimmed
            }
            EditRequest::Deform { selection, handles } => {
                let sel = self.selection(strands, selection)?;
                laplacian_deform(strands, &sel, handles)?
            }
            EditRequest::ScaleLength { selection, factor } => {
                let sel = self.selection(strands, selection)?;
                scale_length(strands, &sel, *factor)?
            }
            EditRequest::Recolor { selection, color } => {
                let sel = self.selection(strands, selection)?;
                recolor(strands, &sel, *color)?
            }
        };
        let resynthesized = resynth.is_some();
        match resynth {
            Some(mask) => self.resynthesize(edited, mask)?,
            None => {
                self.strands = Some(edited);
                self.version += 1;
            }
        }
        self.history.push(HistoryEntry { op: Operation::Edit { edit: edit.clone() }, resynthesized });
        Ok(self.summary(resynthesized))
    }

    /// An enlarged mask: the trimmed strands become the prior and the field
    /// is updated against the previous sketch under the new mask.
    fn resynthesize(&mut self, trimmed: StrandSet, mask: MaskMap) -> Result<()> {
        let mut sketch = match &self.sketch {
            Some(s) => s.masked(&mask)?,
            None => OrientationMap2D::new(mask.width, mask.height),
        };
        if sketch.valid_count() == 0 {
            sketch = boundary_defaults(&mask);
        }
        let dense = self.dense_from(&sketch, &mask)?;
        let grid = self.grid();
        let prior = voxelize_strands(&rotate_strands(&trimmed, &self.pose, &grid.bbox), grid)?;
        let field = self.solve_field(&dense, &mask, Some(&prior))?;
        let strands = self.grow(&field)?;
        self.sketch = Some(sketch);
        self.mask = Some(mask);
        self.dense = Some(dense);
        self.field = Some(field);
        self.strands = Some(strands);
        self.rotated_prior = false;
        self.version += 1;
        Ok(())
    }

    pub fn export(&self, format: ExportFormat) -> Result<Vec<u8>> {
        let s = self.strands.as_ref().ok_or_else(|| Error::Invalid("session has no strands to export".into()))?;
        Ok(match format {
            ExportFormat::Hair => write_hair(s),
            ExportFormat::Obj => write_obj(s),
            ExportFormat::Json => serde_json::to_vec(s)?,
        })
    }

    /// Current field with components clamped for export.
    pub fn export_field(&self) -> Result<VectorField3D> {
        self.field.as_ref().map(clamp_field).ok_or_else(|| Error::Invalid("session has no field".into()))
    }
}

#[cfg(test)]
mod tests;
