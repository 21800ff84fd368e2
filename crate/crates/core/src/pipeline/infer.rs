use crate::error::{Error, Result};
use crate::field::{DepthMap, GridSpec, MaskMap, OrientationMap2D, VectorField3D};
use crate::neural::{field_to_tensor, image_input, map_channels, tensor_to_field, tensor_to_map, NetKind, WeightStore};

fn expect_kind(store: &WeightStore, kind: NetKind) -> Result<()> {
    if store.pair.kind != kind {
        return Err(Error::Invalid(format!("expected {} weights, got {}", kind.as_str(), store.pair.kind.as_str())));
    }
    Ok(())
}

fn mask_channel(mask: &MaskMap) -> Vec<Vec<f32>> {
    vec![mask.data.iter().map(|&m| if m != 0 { 1.0 } else { 0.0 }).collect()]
}

/// Dense map from a sketch channel and mask. The output is restricted to the
/// mask and normalized.
pub fn infer_s2o(store: &WeightStore, sketch: &OrientationMap2D, mask: &MaskMap) -> Result<OrientationMap2D> {
    expect_kind(store, NetKind::S2o)?;
    if sketch.width != mask.width || sketch.height != mask.height {
        return Err(Error::Dimension("sketch and mask sizes differ".into()));
    }
    let input = image_input(&[map_channels(sketch), mask_channel(mask)], mask.width, mask.height)?;
    let out = tensor_to_map(&store.generate(&[input])?, 0)?;
    out.masked(mask).map(|m| m.normalized())
}

fn cond2d(dense: &OrientationMap2D, depth: &DepthMap) -> Result<crate::neural::Tensor<f32>> {
    if dense.width != depth.width || dense.height != depth.height {
        return Err(Error::Dimension("dense and depth sizes differ".into()));
    }
    image_input(&[map_channels(dense), vec![depth.data.clone()]], dense.width, dense.height)
}

/// Raw field from a dense map and bust depth; not clamped.
pub fn infer_o2v(store: &WeightStore, dense: &OrientationMap2D, depth: &DepthMap, grid: GridSpec) -> Result<VectorField3D> {
    expect_kind(store, NetKind::O2v)?;
    let out = store.generate(&[cond2d(dense, depth)?])?;
    tensor_to_field(&out, 0, grid)
}

/// Updated field from the prior field rotated into the current view.
pub fn infer_v2v(
    store: &WeightStore,
    rotated: &VectorField3D,
    dense: &OrientationMap2D,
    depth: &DepthMap,
) -> Result<VectorField3D> {
    expect_kind(store, NetKind::V2v)?;
    let out = store.generate(&[field_to_tensor(rotated), cond2d(dense, depth)?])?;
    tensor_to_field(&out, 0, rotated.grid)
}

/// Componentwise clamp to `[-1, 1]`, applied when a field leaves the engine.
pub fn clamp_field(field: &VectorField3D) -> VectorField3D {
    let mut f = field.clone();
    for v in &mut f.data {
        for c in v.iter_mut() {
            *c = c.clamp(-1.0, 1.0);
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::WorldBox;

    #[test]
    fn s2o_output_is_masked_and_unit() {
        let store = WeightStore::init(NetKind::S2o, 0.25, 16, 12, 3).unwrap();
        let mut mask = MaskMap::new(16, 16);
        for y in 4..12 {
            for x in 3..13 {
                mask.set(x, y, true);
            }
        }
        let mut sketch = OrientationMap2D::new(16, 16);
        sketch.set(6, 6, [0.0, -1.0]);
        let out = infer_s2o(&store, &sketch, &mask).unwrap();
        for i in 0..out.data.len() {
            if mask.data[i] == 0 {
                assert_eq!(out.data[i], [0.0, 0.0]);
            } else if out.is_valid_at(i) {
                let n = out.data[i][0].hypot(out.data[i][1]);
                assert!((n - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn wrong_kind_rejected() {
        let store = WeightStore::init(NetKind::O2v, 0.25, 16, 16, 3).unwrap();
        let m = MaskMap::full(16, 16);
        assert!(infer_s2o(&store, &OrientationMap2D::new(16, 16), &m).is_err());
    }

    #[test]
    fn o2v_and_v2v_shapes() {
        let grid = GridSpec::new(16, 16, 16, WorldBox::standard()).unwrap();
        let o2v = WeightStore::init(NetKind::O2v, 0.25, 16, 16, 3).unwrap();
        let dense = OrientationMap2D::new(16, 16);
        let depth = DepthMap::new(16, 16);
        let f = infer_o2v(&o2v, &dense, &depth, grid).unwrap();
        assert_eq!(f.data.len(), grid.len());
        let v2v = WeightStore::init(NetKind::V2v, 0.25, 16, 16, 4).unwrap();
        let g = infer_v2v(&v2v, &f, &dense, &depth).unwrap();
        assert_eq!(g.grid, grid);
    }

    #[test]
    fn clamp_bounds_components() {
        let grid = GridSpec::new(2, 1, 1, WorldBox::standard()).unwrap();
        let f = VectorField3D::from_data(grid, vec![[2.0, -3.0, 0.5], [0.0, 1.5, -1.0]]).unwrap();
        assert_eq!(clamp_field(&f).data, vec![[1.0, -1.0, 0.5], [0.0, 1.0, -1.0]]);
    }
}
