//! Procedural strand models: a down-combed flow over the head with optional
//! sinusoidal waves and helical curls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::strands::{sample_roots, BustModel, Strand, StrandSet, HEAD_CENTER, HEAD_RADIUS, TORSO_CENTER, TORSO_RADII};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleParams {
    pub root_count: usize,
    pub length_min: f32,
    pub length_max: f32,
    pub segment_length: f32,
    /// Turn limit per segment of the underlying flow, degrees.
    pub max_turn_deg: f32,
    /// Gap kept between strands and the head surface.
    pub clearance: f32,
    pub wave_amplitude: f32,
    /// Wave cycles per unit arc length.
    pub wave_frequency: f32,
    pub curl_radius: f32,
    /// Curl turns per unit arc length.
    pub curl_frequency: f32,
}

impl Default for StyleParams {
    fn default() -> Self {
        StyleParams {
            root_count: 400,
            length_min: 0.6,
            length_max: 1.0,
            segment_length: 0.025,
            max_turn_deg: 4.0,
            clearance: 0.02,
            wave_amplitude: 0.0,
            wave_frequency: 2.5,
            curl_radius: 0.0,
            curl_frequency: 0.0,
        }
    }
}

impl StyleParams {
    /// Named presets: `straight`, `short`, `long`, `wavy`, `curly`.
    pub fn preset(name: &str) -> Result<StyleParams> {
        let d = StyleParams::default();
        Ok(match name {
            "straight" => d,
            "short" => StyleParams { length_min: 0.25, length_max: 0.45, ..d },
            "long" => StyleParams { length_min: 0.9, length_max: 1.5, ..d },
            "wavy" => StyleParams { wave_amplitude: 0.04, wave_frequency: 2.5, ..d },
            "curly" => StyleParams { curl_radius: 0.025, curl_frequency: 3.0, ..d },
            _ => return Err(Error::Invalid(format!("unknown hair style '{name}'"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.length_min,
            self.length_max,
            self.segment_length,
            self.max_turn_deg,
            self.clearance,
            self.wave_amplitude,
            self.wave_frequency,
            self.curl_radius,
            self.curl_frequency,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("style parameters must be finite".into()));
        }
        if self.root_count == 0 {
            return Err(Error::Invalid("root count must be positive".into()));
        }
        if !(self.length_min > 0.0 && self.length_max >= self.length_min) {
            return Err(Error::Invalid("length range must be positive and ordered".into()));
        }
        if self.segment_length <= 0.0 || self.max_turn_deg <= 0.0 || self.clearance < 0.0 {
            return Err(Error::Invalid("segment length and turn limit must be positive".into()));
        }
        if self.wave_amplitude < 0.0 || self.wave_frequency < 0.0 {
            return Err(Error::Invalid("wave amplitude and frequency must be non-negative".into()));
        }
        if self.curl_radius < 0.0 || self.curl_frequency < 0.0 {
            return Err(Error::Invalid("curl radius and frequency must be non-negative".into()));
        }
        // Keep the phase advance per segment well below a half turn so the
        // polyline still resolves the oscillation.
        let max_phase = 1.0 / 6.0;
        if self.wave_frequency * self.segment_length > max_phase
            || self.curl_frequency * self.segment_length > max_phase
        {
            return Err(Error::Invalid("wave or curl frequency too high for the segment length".into()));
        }
        Ok(())
    }
}

fn tangent_part(v: Vec3, n: Vec3) -> Vec3 {
    geom::sub(v, geom::scale(n, geom::dot(v, n)))
}

/// Rotates unit `dir` toward unit `target` by at most `max_angle` radians.
fn turn_toward(dir: Vec3, target: Vec3, max_angle: f32) -> Vec3 {
    let ang = geom::angle_between(dir, target);
    if ang <= max_angle {
        return target;
    }
    let axis_in_plane = tangent_part(target, dir);
    let Some(u) = geom::normalize(axis_in_plane) else {
        // Opposite directions: turn about any perpendicular.
        let p = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = geom::normalize(tangent_part(p, dir)).unwrap();
        return geom::add(geom::scale(dir, max_angle.cos()), geom::scale(u, max_angle.sin()));
    };
    let r = geom::add(geom::scale(dir, max_angle.cos()), geom::scale(u, max_angle.sin()));
    geom::normalize(r).unwrap_or(dir)
}

fn inside_torso(p: Vec3) -> bool {
    let mut s = 0.0;
    for c in 0..3 {
        let d = (p[c] - TORSO_CENTER[c]) / TORSO_RADII[c];
        s += d * d;
    }
    s < 1.0
}

fn base_path(root: Vec3, normal: Vec3, length: f32, style: &StyleParams, bbox: &crate::field::WorldBox) -> Vec<Vec3> {
    let down = [0.0, -1.0, 0.0];
    let shell = HEAD_RADIUS + style.clearance;
    let n0 = geom::normalize(geom::sub(root, HEAD_CENTER)).unwrap_or(normal);
    // Side bias parts the hair toward the side the root sits on.
    let side = if n0[0] >= 0.0 { [1.0, 0.0, 0.0] } else { [-1.0, 0.0, 0.0] };
    let flow_target = |p: Vec3| -> Vec3 {
        let q = geom::sub(p, HEAD_CENTER);
        let r = geom::norm(q);
        if r > shell + 4.0 * style.segment_length || q[1] < -0.2 {
            return down;
        }
        let n = geom::scale(q, 1.0 / r);
        let t = geom::add(tangent_part(down, n), geom::scale(tangent_part(side, n), 0.3));
        geom::normalize(t).unwrap_or(down)
    };
    let mut dir = geom::normalize(geom::add(flow_target(root), geom::scale(n0, 0.35))).unwrap_or(down);
    let max_turn = style.max_turn_deg.to_radians();
    let steps = (length / style.segment_length).ceil() as usize;
    let mut pts = vec![root];
    let mut p = root;
    for k in 0..steps {
        if k > 0 {
            dir = turn_toward(dir, flow_target(p), max_turn);
        }
        let next = geom::add(p, geom::scale(dir, style.segment_length));
        let r = geom::dist(next, HEAD_CENTER);
        if r < HEAD_RADIUS || inside_torso(next) || !bbox.contains(next) {
            break;
        }
        pts.push(next);
        p = next;
    }
    pts
}

/// Adds wave and curl offsets perpendicular to the path, ramped in from the
/// root so the first vertex stays on the scalp.
fn decorate(path: &[Vec3], style: &StyleParams, wave_phase: f32, curl_phase: f32) -> Vec<Vec3> {
    if style.wave_amplitude == 0.0 && (style.curl_radius == 0.0 || style.curl_frequency == 0.0) {
        return path.to_vec();
    }
    let tau = std::f32::consts::TAU;
    let mut out = Vec::with_capacity(path.len());
    let mut s = 0.0f32;
    for i in 0..path.len() {
        if i > 0 {
            s += geom::dist(path[i - 1], path[i]);
        }
        let a = path[i.saturating_sub(1)];
        let b = path[(i + 1).min(path.len() - 1)];
        let t = geom::normalize(geom::sub(b, a)).unwrap_or([0.0, -1.0, 0.0]);
        let side = geom::normalize(geom::cross(t, [0.0, 0.0, 1.0]))
            .or_else(|| geom::normalize(geom::cross(t, [1.0, 0.0, 0.0])))
            .unwrap();
        let bin = geom::cross(t, side);
        let w = (s / 0.1).min(1.0);
        let wave = style.wave_amplitude * w * (tau * style.wave_frequency * s + wave_phase).sin();
        let ca = tau * style.curl_frequency * s + curl_phase;
        let cr = style.curl_radius * w;
        let off = geom::add(
            geom::scale(side, wave + cr * (ca.cos() - curl_phase.cos())),
            geom::scale(bin, cr * (ca.sin() - curl_phase.sin())),
        );
        let mut q = geom::add(path[i], off);
        let r = geom::dist(q, HEAD_CENTER);
        if i > 0 && r < HEAD_RADIUS + 0.5 * style.clearance {
            let n = geom::scale(geom::sub(q, HEAD_CENTER), 1.0 / r.max(1e-6));
            q = geom::add(HEAD_CENTER, geom::scale(n, HEAD_RADIUS + 0.5 * style.clearance));
        }
        out.push(q);
    }
    out
}

/// Deterministic procedural hair over `bust`.
pub fn synth_procedural_hair(bust: &BustModel, style: &StyleParams, seed: u64) -> Result<StrandSet> {
    style.validate()?;
    let roots = sample_roots(bust, style.root_count, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f10a);
    let mut strands = Vec::with_capacity(roots.len());
    for (p, n) in roots.points.iter().zip(&roots.normals) {
        let length = if style.length_max > style.length_min {
            rng.gen_range(style.length_min..=style.length_max)
        } else {
            style.length_min
        };
        let wave_phase = rng.gen_range(0.0..std::f32::consts::TAU);
        let curl_phase = rng.gen_range(0.0..std::f32::consts::TAU);
        let path = base_path(*p, *n, length, style, &bust.bbox);
        let mut verts = decorate(&path, style, wave_phase, curl_phase);
        verts.dedup_by(|a, b| geom::dist(*a, *b) < 1e-6);
        verts.retain(|v| bust.bbox.contains(*v));
        if verts.len() >= 2 {
            strands.push(Strand::new(verts, true));
        }
    }
    Ok(StrandSet::new(strands))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strands::{strand_curvature, turning_angles};

    fn small(style: StyleParams) -> StyleParams {
        StyleParams { root_count: 120, ..style }
    }

    #[test]
    fn straight_style_has_small_turns() {
        let b = BustModel::default_bust();
        let h = synth_procedural_hair(&b, &small(StyleParams::default()), 3).unwrap();
        assert!(h.len() > 100);
        h.validate().unwrap();
        let max = h.strands.iter().flat_map(|s| turning_angles(&s.vertices)).fold(0.0f32, f32::max);
        assert!(max.to_degrees() < 5.0, "max turn {}", max.to_degrees());
        for s in &h.strands {
            assert!(b.distance_to_scalp(s.root()) <= 1e-4);
            assert!(s.vertices.iter().all(|v| b.bbox.contains(*v)));
        }
    }

    #[test]
    fn same_seed_same_hair() {
        let b = BustModel::default_bust();
        let st = small(StyleParams::preset("wavy").unwrap());
        assert_eq!(synth_procedural_hair(&b, &st, 11).unwrap(), synth_procedural_hair(&b, &st, 11).unwrap());
        assert_ne!(synth_procedural_hair(&b, &st, 11).unwrap(), synth_procedural_hair(&b, &st, 12).unwrap());
    }

    fn mean_curvature(h: &StrandSet) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in &h.strands {
            if let Ok(k) = strand_curvature(s) {
                sum += k.iter().map(|&v| v as f64).sum::<f64>();
                n += k.len();
            }
        }
        sum / n as f64
    }

    #[test]
    fn doubling_curl_frequency_increases_curvature() {
        let b = BustModel::default_bust();
        let base = small(StyleParams { curl_radius: 0.03, curl_frequency: 2.0, ..Default::default() });
        let double = StyleParams { curl_frequency: 4.0, ..base.clone() };
        let k1 = mean_curvature(&synth_procedural_hair(&b, &base, 5).unwrap());
        let k2 = mean_curvature(&synth_procedural_hair(&b, &double, 5).unwrap());
        assert!(k2 > k1, "{k1} vs {k2}");
    }

    #[test]
    fn invalid_styles_rejected() {
        let b = BustModel::default_bust();
        for st in [
            StyleParams { wave_amplitude: -0.1, ..Default::default() },
            StyleParams { curl_frequency: -1.0, ..Default::default() },
            StyleParams { length_min: 0.0, ..Default::default() },
            StyleParams { length_min: 0.8, length_max: 0.5, ..Default::default() },
            StyleParams { curl_frequency: 100.0, ..Default::default() },
        ] {
            assert!(synth_procedural_hair(&b, &st, 0).is_err());
        }
        assert!(StyleParams::preset("mohawk").is_err());
    }
}
