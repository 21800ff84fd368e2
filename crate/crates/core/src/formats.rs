//! Binary and text interchange formats.
//!
//! All binary formats are little-endian and start with a 4-byte magic.
//!
//! * `FMAP`: `u32 width, u32 height, u32 channels`, then `f32` samples,
//!   row-major and channel-interleaved.
//! * `VFLD`: `u32 nx, ny, nz`, six `f32` box bounds (`b_min`, `b_max`), then
//!   `f32` xyz triples, x-fastest.
//! * `HAIR`: `u32` strand count, then per strand a `u32` vertex count and
//!   `f32` xyz per vertex. Optional tagged blocks may follow: `FLAG`
//!   (`u32 n`, one byte per strand: bit 0 rooted, bit 1 seeded phase) and
//!   `COLR` (`u32 n`, per strand one presence byte and three `f32`). Readers
//!   that only know the base layout can stop after the strand data.
//! * `WTS1`: `u32` entry count, then per entry a `u32` name length, the
//!   UTF-8 name, `u32` rank, `u32` dims and `f32` data. Entries are written
//!   in name order.

use std::io::Write;

use crate::error::{Error, Result};
use std::collections::BTreeMap;

use crate::field::{DepthMap, GridSpec, MaskMap, OrientationMap2D, VectorField3D, WorldBox};
use crate::neural::Tensor;
use crate::strands::{Phase, Strand, StrandSet};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const VFLD_MAGIC: &[u8; 4] = b"VFLD";
pub const HAIR_MAGIC: &[u8; 4] = b"HAIR";
pub const WTS_MAGIC: &[u8; 4] = b"WTS1";

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated input: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, m: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != m {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(m)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn count(&mut self, elem_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_bytes) > self.remaining() {
            return Err(Error::Format(format!("count {n} exceeds remaining input")));
        }
        Ok(n)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Raw multi-channel float raster as stored in `FMAP` files.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatRaster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(FloatRaster { width, height, channels, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(FMAP_MAGIC);
        put_u32(&mut out, self.width as u32);
        put_u32(&mut out, self.height as u32);
        put_u32(&mut out, self.channels as u32);
        for &v in &self.data {
            put_f32(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(FMAP_MAGIC)?;
        let (w, h, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n = w
            .checked_mul(h)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Format("raster size overflows".into()))?;
        if n * 4 != r.remaining() {
            return Err(Error::Format(format!("expected {} data bytes, found {}", n * 4, r.remaining())));
        }
        let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        FloatRaster::new(w, h, c, data)
    }

    fn expect_channels(&self, c: usize) -> Result<()> {
        if self.channels != c {
            return Err(Error::Dimension(format!("expected {c} channels, found {}", self.channels)));
        }
        Ok(())
    }
}

impl From<&OrientationMap2D> for FloatRaster {
    fn from(m: &OrientationMap2D) -> Self {
        FloatRaster {
            width: m.width,
            height: m.height,
            channels: 2,
            data: m.data.iter().flat_map(|v| [v[0], v[1]]).collect(),
        }
    }
}

impl From<&MaskMap> for FloatRaster {
    fn from(m: &MaskMap) -> Self {
        FloatRaster { width: m.width, height: m.height, channels: 1, data: m.data.iter().map(|&v| v as f32).collect() }
    }
}

impl From<&DepthMap> for FloatRaster {
    fn from(m: &DepthMap) -> Self {
        FloatRaster { width: m.width, height: m.height, channels: 1, data: m.data.clone() }
    }
}

impl FloatRaster {
    pub fn to_orientation(&self) -> Result<OrientationMap2D> {
        self.expect_channels(2)?;
        OrientationMap2D::from_data(self.width, self.height, self.data.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn to_mask(&self) -> Result<MaskMap> {
        self.expect_channels(1)?;
        MaskMap::from_data(self.width, self.height, self.data.iter().map(|&v| (v > 0.5) as u8).collect())
    }

    pub fn to_depth(&self) -> Result<DepthMap> {
        self.expect_channels(1)?;
        Ok(DepthMap { width: self.width, height: self.height, data: self.data.clone() })
    }
}

pub fn write_orientation_fmap(m: &OrientationMap2D) -> Vec<u8> {
    FloatRaster::from(m).to_bytes()
}

pub fn read_orientation_fmap(bytes: &[u8]) -> Result<OrientationMap2D> {
    FloatRaster::from_bytes(bytes)?.to_orientation()
}

pub fn write_vfld(field: &VectorField3D) -> Vec<u8> {
    let g = &field.grid;
    let mut out = Vec::with_capacity(40 + 12 * field.data.len());
    out.extend_from_slice(VFLD_MAGIC);
    put_u32(&mut out, g.nx as u32);
    put_u32(&mut out, g.ny as u32);
    put_u32(&mut out, g.nz as u32);
    for v in g.bbox.min.iter().chain(g.bbox.max.iter()) {
        put_f32(&mut out, *v);
    }
    for v in &field.data {
        for c in v {
            put_f32(&mut out, *c);
        }
    }
    out
}

pub fn read_vfld(bytes: &[u8]) -> Result<VectorField3D> {
    let mut r = Reader::new(bytes);
    r.magic(VFLD_MAGIC)?;
    let (nx, ny, nz) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let mut b = [0f32; 6];
    for v in b.iter_mut() {
        *v = r.f32()?;
    }
    let grid = GridSpec::new(nx, ny, nz, WorldBox::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])?)?;
    if grid.len() * 12 != r.remaining() {
        return Err(Error::Format(format!("expected {} cell bytes, found {}", grid.len() * 12, r.remaining())));
    }
    let data = (0..grid.len())
        .map(|_| Ok([r.f32()?, r.f32()?, r.f32()?]))
        .collect::<Result<Vec<_>>>()?;
    VectorField3D::from_data(grid, data)
}

pub fn write_hair(set: &StrandSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 12 * set.vertex_count() + 4 * set.len());
    out.extend_from_slice(HAIR_MAGIC);
    put_u32(&mut out, set.len() as u32);
    for s in &set.strands {
        put_u32(&mut out, s.vertices.len() as u32);
        for v in &s.vertices {
            for c in v {
                put_f32(&mut out, *c);
            }
        }
    }
    out.extend_from_slice(b"FLAG");
    put_u32(&mut out, set.len() as u32);
    for s in &set.strands {
        out.push(s.rooted as u8 | (((s.phase == Phase::Seeded) as u8) << 1));
    }
    if set.strands.iter().any(|s| s.color.is_some()) {
        out.extend_from_slice(b"COLR");
        put_u32(&mut out, set.len() as u32);
        for s in &set.strands {
            let c = s.color.unwrap_or([0.0; 3]);
            out.push(s.color.is_some() as u8);
            for v in c {
                put_f32(&mut out, v);
            }
        }
    }
    out
}

/// Reads a `HAIR` stream. Strands without a `FLAG` block are treated as
/// rooted.
pub fn read_hair(bytes: &[u8]) -> Result<StrandSet> {
    let mut r = Reader::new(bytes);
    r.magic(HAIR_MAGIC)?;
    let n = r.count(4)?;
    let mut strands = Vec::with_capacity(n);
    for _ in 0..n {
        let m = r.count(12)?;
        let vertices = (0..m)
            .map(|_| Ok([r.f32()?, r.f32()?, r.f32()?]))
            .collect::<Result<Vec<_>>>()?;
        strands.push(Strand::new(vertices, true));
    }
    while r.remaining() >= 8 {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let count = r.u32()? as usize;
        if count != n {
            return Err(Error::Format(format!("block {:?} has {count} entries for {n} strands", tag)));
        }
        match &tag {
            b"FLAG" => {
                for s in strands.iter_mut() {
                    let f = r.u8()?;
                    s.rooted = f & 1 != 0;
                    s.phase = if f & 2 != 0 { Phase::Seeded } else { Phase::Rooted };
                }
            }
            b"COLR" => {
                for s in strands.iter_mut() {
                    let present = r.u8()? != 0;
                    let c = [r.f32()?, r.f32()?, r.f32()?];
                    s.color = present.then_some(c);
                }
            }
            other => {
                return Err(Error::Format(format!("unknown block {:?}", String::from_utf8_lossy(other))));
            }
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Format("trailing bytes after strand data".into()));
    }
    Ok(StrandSet::new(strands))
}

pub fn write_wts(entries: &BTreeMap<String, Tensor<f32>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WTS_MAGIC);
    put_u32(&mut out, entries.len() as u32);
    for (name, t) in entries {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape.len() as u32);
        for d in &t.shape {
            put_u32(&mut out, *d as u32);
        }
        for v in &t.data {
            put_f32(&mut out, *v);
        }
    }
    out
}

pub fn read_wts(bytes: &[u8]) -> Result<BTreeMap<String, Tensor<f32>>> {
    let mut r = Reader::new(bytes);
    r.magic(WTS_MAGIC)?;
    let n = r.count(8)?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let len = r.count(1)?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("weight name is not UTF-8".into()))?
            .to_string();
        let rank = r.count(4)?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        match numel {
            Some(k) if k.saturating_mul(4) <= r.remaining() => {
                let mut data = Vec::with_capacity(k);
                for _ in 0..k {
                    data.push(r.f32()?);
                }
                if out.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
                    return Err(Error::Format(format!("duplicate weight entry {name:?}")));
                }
            }
            _ => return Err(Error::Format(format!("weight entry {name:?} exceeds remaining input"))),
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Format("trailing bytes after weight data".into()));
    }
    Ok(out)
}

/// Wavefront OBJ with one `l` element per segment.
pub fn write_obj(set: &StrandSet) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "# {} strands", set.len()).unwrap();
    for s in &set.strands {
        for v in &s.vertices {
            writeln!(out, "v {} {} {}", v[0], v[1], v[2]).unwrap();
        }
    }
    let mut base = 1usize;
    for s in &set.strands {
        for k in 0..s.vertices.len().saturating_sub(1) {
            writeln!(out, "l {} {}", base + k, base + k + 1).unwrap();
        }
        base += s.vertices.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_strands() -> impl Strategy<Value = StrandSet> {
        let v = prop::array::uniform3(-10.0f32..10.0);
        let strand = (prop::collection::vec(v, 2..12), any::<bool>(), any::<bool>(), prop::option::of(prop::array::uniform3(0.0f32..1.0)))
            .prop_map(|(vertices, rooted, seeded, color)| Strand {
                vertices,
                rooted,
                phase: if seeded { Phase::Seeded } else { Phase::Rooted },
                color,
            });
        prop::collection::vec(strand, 0..8).prop_map(StrandSet::new)
    }

    proptest! {
        #[test]
        fn hair_round_trip(set in arb_strands()) {
            prop_assert_eq!(read_hair(&write_hair(&set)).unwrap(), set);
        }

        #[test]
        fn fmap_round_trip(w in 1usize..6, h in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = (0..w * h * c).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect();
            let r = FloatRaster::new(w, h, c, data).unwrap();
            let back = FloatRaster::from_bytes(&r.to_bytes()).unwrap();
            prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            r.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn vfld_round_trip(nx in 1usize..5, ny in 1usize..5, nz in 1usize..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let grid = GridSpec::new(nx, ny, nz, WorldBox::standard()).unwrap();
            let data = (0..grid.len()).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let f = VectorField3D::from_data(grid, data).unwrap();
            prop_assert_eq!(read_vfld(&write_vfld(&f)).unwrap(), f);
        }

        #[test]
        fn wts_round_trip(
            entries in prop::collection::btree_map(
                "[a-z./_0-9]{1,12}",
                (prop::collection::vec(1usize..4, 0..5), any::<u64>()),
                0..6,
            )
        ) {
            use rand::{Rng, SeedableRng};
            let mut map = BTreeMap::new();
            for (name, (shape, seed)) in entries {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| f32::from_bits(rng.gen::<u32>() & 0x7f7f_ffff)).collect();
                map.insert(name, Tensor::from_vec(&shape, data).unwrap());
            }
            let bytes = write_wts(&map);
            let back = read_wts(&bytes).unwrap();
            prop_assert_eq!(back.len(), map.len());
            for (k, t) in &map {
                let b = &back[k];
                prop_assert_eq!(&b.shape, &t.shape);
                prop_assert_eq!(b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                                t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
            prop_assert_eq!(write_wts(&back), bytes);
        }
    }

    #[test]
    fn base_layout_without_blocks_reads() {
        let mut b = Vec::new();
        b.extend_from_slice(b"HAIR");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        for v in [0f32, 1.0, 2.0, 3.0, 4.0, 5.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let s = read_hair(&b).unwrap();
        assert_eq!(s.strands[0].vertices, vec![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
        assert!(s.strands[0].rooted);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(read_hair(b"HAIX\0\0\0\0").is_err());
        assert!(read_hair(b"HAIR\xff\xff\xff\x7f").is_err());
        assert!(read_vfld(b"VFLD").is_err());
        assert!(FloatRaster::from_bytes(b"FMAP\x01\0\0\0\x01\0\0\0\x01\0\0\0").is_err());
    }

    #[test]
    fn obj_line_count() {
        let set = StrandSet::new(vec![
            Strand::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], true),
            Strand::new(vec![[0.0; 3], [0.0, 1.0, 0.0]], true),
        ]);
        let text = String::from_utf8(write_obj(&set)).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("l ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 5);
    }
}
