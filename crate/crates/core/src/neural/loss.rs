//! Generator and critic losses. Every loss returns a one-element node.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::field::{OrientationMap2D, VisibilityIndex};
use crate::scalar::Scalar;

use super::graph::{Graph, Var};
use super::model::{forward, ParamVars};
use super::spec::{NetKind, NetSpec};
use super::tensor::Tensor;

/// Loss weights and feature layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub iota: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub content_layers: Vec<usize>,
    pub style_layers: Vec<usize>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.01,
            beta: 5.0,
            lambda: 10.0,
            iota: 0.01,
            kappa: 5.0,
            gamma: 0.1,
            delta: 0.5,
            epsilon: 2e-5,
            zeta: 0.1,
            content_layers: vec![0, 2],
            style_layers: vec![0, 1, 2, 3, 4],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.lambda, self.iota, self.kappa, self.gamma, self.delta, self.epsilon, self.zeta];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Invalid("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Per-term generator losses. Terms a network does not use stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub content: f64,
    pub style: f64,
    pub proj1: f64,
    pub proj2: f64,
    pub lap: f64,
    pub ori: f64,
}

/// Term coefficients of the generator objective. With `deferred` the
/// projection and Laplacian terms are switched off (first training stage).
pub fn term_weights(kind: NetKind, w: &LossWeights, deferred: bool) -> LossParts {
    let on = if deferred { 0.0 } else { 1.0 };
    match kind {
        NetKind::S2o => LossParts { content: w.alpha, style: w.beta, ..Default::default() },
        NetKind::O2v | NetKind::V2v => LossParts {
            content: w.iota,
            style: w.kappa,
            proj1: on * w.gamma,
            proj2: on * w.delta,
            lap: on * w.epsilon,
            ori: if kind == NetKind::V2v { w.zeta } else { 0.0 },
        },
    }
}

/// Weighted sum of already evaluated parts.
pub fn total_generator_loss(kind: NetKind, parts: &LossParts, w: &LossWeights) -> f64 {
    let k = term_weights(kind, w, false);
    k.content * parts.content
        + k.style * parts.style
        + k.proj1 * parts.proj1
        + k.proj2 * parts.proj2
        + k.lap * parts.lap
        + k.ori * parts.ori
}

/// Critic evaluation: output node plus exposed feature layers.
pub struct CriticOut {
    pub score: Var,
    pub features: Vec<Var>,
}

pub fn critic<T: Scalar>(
    g: &mut Graph<T>,
    spec: &NetSpec,
    vars: &ParamVars,
    image: Var,
    conds: &[Var],
) -> Result<CriticOut> {
    let mut inputs = vec![image];
    inputs.extend_from_slice(conds);
    let outs = forward(g, spec, vars, &inputs)?;
    Ok(CriticOut { score: outs[spec.output], features: spec.features.iter().map(|&i| outs[i]).collect() })
}

fn feature(feats: &[Var], l: usize) -> Result<Var> {
    feats
        .get(l)
        .copied()
        .ok_or_else(|| Error::Invalid(format!("feature layer {l} out of range (have {})", feats.len())))
}

fn half_sq_dist<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let s = g.square(d);
    let s = g.sum(s);
    Ok(g.scale(s, 0.5))
}

fn zero<T: Scalar>(g: &mut Graph<T>) -> Var {
    g.constant(Tensor::scalar(T::ZERO))
}

/// `sum_l 1/2 |F_l(fake) - F_l(real)|^2`. Layer 0 is the critic input, so
/// it reduces to the per-pixel loss between the images.
pub fn loss_content<T: Scalar>(g: &mut Graph<T>, fake: &[Var], real: &[Var], layers: &[usize]) -> Result<Var> {
    let mut acc = zero(g);
    for &l in layers {
        let t = half_sq_dist(g, feature(fake, l)?, feature(real, l)?)?;
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Per-sample Gram matrices `[N, C, C]` of a `[N, C, ...]` feature map.
pub fn gram<T: Scalar>(g: &mut Graph<T>, f: Var) -> Result<Var> {
    let s = g.shape(f).to_vec();
    let m: usize = s[2..].iter().product();
    let flat = g.reshape(f, &[s[0], s[1], m])?;
    g.matmul(flat, flat, false, true)
}

/// `sum_l 1/(4 N_l^2 M_l^2) |A_l(fake) - A_l(real)|^2` with `N_l` channels
/// and `M_l` spatial positions per sample.
pub fn loss_style<T: Scalar>(g: &mut Graph<T>, fake: &[Var], real: &[Var], layers: &[usize]) -> Result<Var> {
    let mut acc = zero(g);
    for &l in layers {
        let (f, r) = (feature(fake, l)?, feature(real, l)?);
        let s = g.shape(f).to_vec();
        let (n, m) = (s[1] as f64, s[2..].iter().product::<usize>() as f64);
        let (af, ar) = (gram(g, f)?, gram(g, r)?);
        let d = g.sub(af, ar)?;
        let sq = g.square(d);
        let t = g.sum(sq);
        let t = g.scale(t, 1.0 / (4.0 * n * n * m * m));
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Mean over the batch of `(|grad_x D(x, cond)| - 1)^2` at
/// `x = eps * real + (1 - eps) * fake`, one `eps` per sample.
pub fn loss_gp<T: Scalar>(
    g: &mut Graph<T>,
    spec: &NetSpec,
    vars: &ParamVars,
    real: Var,
    fake: Var,
    conds: &[Var],
    eps: &[f64],
) -> Result<Var> {
    let shape = g.shape(real).to_vec();
    let n = shape[0];
    if eps.len() != n || eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Invalid("need one eps in [0, 1] per sample".into()));
    }
    let mut eshape = vec![1; shape.len()];
    eshape[0] = n;
    let e = g.constant(Tensor::from_vec(&eshape, eps.iter().map(|v| T::from_f64(*v)).collect())?);
    let om = g.constant(Tensor::from_vec(&eshape, eps.iter().map(|v| T::from_f64(1.0 - v)).collect())?);
    let (eb, ob) = (g.broadcast(e, &shape)?, g.broadcast(om, &shape)?);
    let a = g.mul(eb, real)?;
    let b = g.mul(ob, fake)?;
    let xhat = g.add(a, b)?;
    let out = critic(g, spec, vars, xhat, conds)?;
    let total = g.sum(out.score);
    let gx = g.grad(total, &[xhat])?[0];
    let sq = g.square(gx);
    let per = g.reduce_to(sq, &eshape)?;
    let norm = g.sqrt(per);
    let one = g.constant(Tensor::full(&eshape, T::ONE));
    let dev = g.sub(norm, one)?;
    let pen = g.square(dev);
    let s = g.sum(pen);
    Ok(g.scale(s, 1.0 / n as f64))
}

/// Critic objective `mean D(real) - mean D(fake) + lambda * gp`.
pub fn critic_loss<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var, gp: Var, lambda: f64) -> Result<Var> {
    let n = g.shape(d_real)[0] as f64;
    let r = g.sum(d_real);
    let f = g.sum(d_fake);
    let diff = g.sub(r, f)?;
    let diff = g.scale(diff, 1.0 / n);
    let pen = g.scale(gp, lambda);
    g.add(diff, pen)
}

/// Squared difference between the projected field and `targets` over the
/// targets' valid pixels. A pixel whose ray sees no cell projects to zero.
/// `field` is `[N, 3, D, H, W]`; one target and visibility index per item.
pub fn loss_proj<T: Scalar>(
    g: &mut Graph<T>,
    field: Var,
    targets: &[&OrientationMap2D],
    vis: &[&VisibilityIndex],
) -> Result<Var> {
    let s = g.shape(field).to_vec();
    if s.len() != 5 || s[1] != 3 || targets.len() != s[0] || vis.len() != s[0] {
        return dim_err("projection loss needs a [N, 3, D, H, W] field and one target per item");
    }
    let cells = s[2] * s[3] * s[4];
    let mut idx = Vec::new();
    let mut want = Vec::new();
    let mut fixed = 0.0f64;
    for (n, (t, v)) in targets.iter().zip(vis).enumerate() {
        if (t.width, t.height) != (s[4], s[3]) || v.dims != (s[4], s[3], s[2]) {
            return dim_err("projection target does not match the field grid");
        }
        for p in 0..t.data.len() {
            if !t.is_valid_at(p) {
                continue;
            }
            let tv = t.data[p];
            match v.cells[p] {
                Some(c) => {
                    for ch in 0..2 {
                        idx.push((n * 3 + ch) * cells + c as usize);
                        want.push(T::from_f64(tv[ch] as f64));
                    }
                }
                None => fixed += (tv[0] as f64).powi(2) + (tv[1] as f64).powi(2),
            }
        }
    }
    let c = g.constant(Tensor::scalar(T::from_f64(fixed)));
    if idx.is_empty() {
        return Ok(c);
    }
    let k = idx.len();
    let got = g.gather(field, Rc::new(idx), &[k])?;
    let want = g.constant(Tensor::from_vec(&[k], want)?);
    let d = g.sub(got, want)?;
    let sq = g.square(d);
    let sum = g.sum(sq);
    g.add(sum, c)
}

/// Projection loss against the dense orientation map.
pub fn loss_proj1<T: Scalar>(g: &mut Graph<T>, field: Var, dense: &[&OrientationMap2D], vis: &[&VisibilityIndex]) -> Result<Var> {
    loss_proj(g, field, dense, vis)
}

/// Projection loss against the sparse sketch.
pub fn loss_proj2<T: Scalar>(g: &mut Graph<T>, field: Var, sketch: &[&OrientationMap2D], vis: &[&VisibilityIndex]) -> Result<Var> {
    loss_proj(g, field, sketch, vis)
}

/// `sum (L(field) - L(target))^2` with the per-channel umbrella Laplacian.
pub fn loss_lap<T: Scalar>(g: &mut Graph<T>, field: Var, target: Var) -> Result<Var> {
    if g.shape(field) != g.shape(target) {
        return dim_err("Laplacian loss needs fields on the same grid");
    }
    let a = g.laplacian(field, false)?;
    let b = g.laplacian(target, false)?;
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    Ok(g.sum(sq))
}

/// `sum_{i in gamma} |field_i - rotated_i|^2`, `gamma` listing cell indices
/// per batch item.
pub fn loss_ori<T: Scalar>(g: &mut Graph<T>, field: Var, rotated: Var, gamma: &[Vec<usize>]) -> Result<Var> {
    let s = g.shape(field).to_vec();
    if g.shape(rotated) != s.as_slice() || s.len() != 5 || gamma.len() != s[0] {
        return dim_err("orientation loss needs matching fields and one index set per item");
    }
    let cells = s[2] * s[3] * s[4];
    let mut idx = Vec::new();
    for (n, set) in gamma.iter().enumerate() {
        for &c in set {
            if c >= cells {
                return dim_err(format!("cell {c} outside the grid"));
            }
            for ch in 0..s[1] {
                idx.push((n * s[1] + ch) * cells + c);
            }
        }
    }
    if idx.is_empty() {
        return Ok(zero(g));
    }
    let idx = Rc::new(idx);
    let k = idx.len();
    let a = g.gather(field, idx.clone(), &[k])?;
    let b = g.gather(rotated, idx, &[k])?;
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    Ok(g.sum(sq))
}

/// Weighted generator objective from part nodes; absent parts count as zero.
pub fn combine_parts<T: Scalar>(
    g: &mut Graph<T>,
    kind: NetKind,
    parts: &[(Term, Var)],
    w: &LossWeights,
    deferred: bool,
) -> Result<Var> {
    let k = term_weights(kind, w, deferred);
    let mut acc = zero(g);
    for &(term, v) in parts {
        let c = match term {
            Term::Content => k.content,
            Term::Style => k.style,
            Term::Proj1 => k.proj1,
            Term::Proj2 => k.proj2,
            Term::Lap => k.lap,
            Term::Ori => k.ori,
        };
        if c == 0.0 {
            continue;
        }
        let t = g.scale(v, c);
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Content,
    Style,
    Proj1,
    Proj2,
    Lap,
    Ori,
}
