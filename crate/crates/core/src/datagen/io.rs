//! On-disk dataset layout: `samples/<id>/` holding FMAP rasters, the VFLD
//! target field, source strands and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GeneratedSample, StyleParams, TrainingSampleSV};
use crate::error::Result;
use crate::field::ViewPose;
use crate::formats::{read_hair, read_vfld, write_hair, write_vfld, FloatRaster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub seed: u64,
    pub pose: ViewPose,
    pub style: String,
    pub style_params: StyleParams,
    pub curve_count: usize,
}

fn sample_dir(root: &Path, id: &str) -> PathBuf {
    root.join("samples").join(id)
}

/// Writes one sample under `root/samples/<id>/`.
pub fn write_sample_dir(root: &Path, g: &GeneratedSample) -> Result<PathBuf> {
    let dir = sample_dir(root, &g.meta.id);
    fs::create_dir_all(&dir)?;
    let s = &g.sample;
    fs::write(dir.join("sketch.fmap"), FloatRaster::from(&s.sketch).to_bytes())?;
    fs::write(dir.join("mask.fmap"), FloatRaster::from(&s.mask).to_bytes())?;
    fs::write(dir.join("depth.fmap"), FloatRaster::from(&s.depth).to_bytes())?;
    fs::write(dir.join("dense.fmap"), FloatRaster::from(&s.dense).to_bytes())?;
    fs::write(dir.join("field.vfld"), write_vfld(&s.field))?;
    fs::write(dir.join("strands.hair"), write_hair(&g.strands))?;
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&g.meta)?)?;
    Ok(dir)
}

fn read_raster(p: &Path) -> Result<FloatRaster> {
    FloatRaster::from_bytes(&fs::read(p)?)
}

/// Reads every sample under `root/samples/`, ordered by id.
pub fn read_sample_dir(root: &Path) -> Result<Vec<GeneratedSample>> {
    let mut ids: Vec<String> = fs::read_dir(root.join("samples"))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    ids.iter()
        .map(|id| {
            let dir = sample_dir(root, id);
            let sample = TrainingSampleSV {
                sketch: read_raster(&dir.join("sketch.fmap"))?.to_orientation()?,
                mask: read_raster(&dir.join("mask.fmap"))?.to_mask()?,
                depth: read_raster(&dir.join("depth.fmap"))?.to_depth()?,
                dense: read_raster(&dir.join("dense.fmap"))?.to_orientation()?,
                field: read_vfld(&fs::read(dir.join("field.vfld"))?)?,
            };
            sample.validate()?;
            let strands = read_hair(&fs::read(dir.join("strands.hair"))?)?;
            let meta: SampleMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
            Ok(GeneratedSample { sample, strands, meta })
        })
        .collect()
}
