use serde::{Deserialize, Serialize};

use super::OrientationMap2D;
use crate::error::{dim_err, Result};

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return dim_err(format!("{} bytes for a {width}x{height} RGB raster", data.len()));
        }
        Ok(RgbRaster { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (x + self.width * y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

// [-1, 1] -> [0, 255], ties rounded down.
fn quantize(v: f32) -> u8 {
    let q = 255.0 * (v.clamp(-1.0, 1.0) as f64 + 1.0) / 2.0;
    (q - 0.5).ceil().clamp(0.0, 255.0) as u8
}

fn dequantize(b: u8) -> f32 {
    (b as f64 * 2.0 / 255.0 - 1.0) as f32
}

/// R and G carry the direction, B is 255 on valid pixels and 0 on background.
pub fn encode_orientation_rgb(map: &OrientationMap2D) -> RgbRaster {
    let mut data = Vec::with_capacity(map.data.len() * 3);
    for (i, v) in map.data.iter().enumerate() {
        if map.is_valid_at(i) {
            data.extend_from_slice(&[quantize(v[0]), quantize(v[1]), 255]);
        } else {
            data.extend_from_slice(&[0, 0, 0]);
        }
    }
    RgbRaster { width: map.width, height: map.height, data }
}

pub fn decode_orientation_rgb(raster: &RgbRaster) -> OrientationMap2D {
    let data = raster
        .data
        .chunks_exact(3)
        .map(|px| {
            if px[2] == 0 {
                [0.0, 0.0]
            } else {
                [dequantize(px[0]), dequantize(px[1])]
            }
        })
        .collect();
    OrientationMap2D { width: raster.width, height: raster.height, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: [f32; 2]) -> OrientationMap2D {
        OrientationMap2D::from_data(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn unit_x_endpoint() {
        let r = encode_orientation_rgb(&single([1.0, 0.0]));
        assert_eq!(r.pixel(0, 0), [255, 127, 255]);
    }

    #[test]
    fn background_is_black() {
        let r = encode_orientation_rgb(&single([0.0, 0.0]));
        assert_eq!(r.pixel(0, 0), [0, 0, 0]);
    }

    #[test]
    fn diagonal_quantizes_to_37() {
        let s = -1.0 / 2f32.sqrt();
        // round(255 * (1 - 1/sqrt 2) / 2) = round(37.34)
        let expected = (255.0 * (1.0 - 1.0 / 2f64.sqrt()) / 2.0).round() as u8;
        assert_eq!(expected, 37);
        let r = encode_orientation_rgb(&single([s, s]));
        assert_eq!(r.pixel(0, 0), [37, 37, 255]);
    }

    #[test]
    fn black_raster_decodes_to_background() {
        let r = RgbRaster::new(4, 3, vec![0; 36]).unwrap();
        let m = decode_orientation_rgb(&r);
        assert_eq!(m.valid_count(), 0);
        assert!(m.data.iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn unit_y_round_trip() {
        let m = decode_orientation_rgb(&encode_orientation_rgb(&single([0.0, 1.0])));
        let v = m.get(0, 0);
        assert!(v[0].abs() <= 1.0 / 255.0 && (v[1] - 1.0).abs() <= 1.0 / 255.0, "{v:?}");
    }

    #[test]
    fn every_quantization_level_round_trips_within_bound() {
        // Exhaustive over the 256 levels: values at and between level centers.
        for b in 0..=255u8 {
            for off in [-0.49f64, 0.0, 0.49] {
                let v = ((b as f64 + off) * 2.0 / 255.0 - 1.0).clamp(-1.0, 1.0) as f32;
                let back = dequantize(quantize(v));
                assert!((back - v).abs() <= 1.0 / 255.0 + 1e-7, "b={b} v={v} back={back}");
            }
        }
    }

    #[test]
    fn wrong_length_raster_rejected() {
        assert!(RgbRaster::new(2, 2, vec![0; 11]).is_err());
    }
}
