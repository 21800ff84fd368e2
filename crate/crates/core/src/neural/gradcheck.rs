//! Central finite-difference verification of the autodiff gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::field::{build_visibility_index, GridSpec, OrientationMap2D, VectorField3D, ViewPose, WorldBox};

use super::graph::{Graph, Var};
use super::kernels::ConvGeom;
use super::loss::{critic, loss_content, loss_gp, loss_lap, loss_ori, loss_proj1, loss_proj2, loss_style};
use super::model::{bind, forward, ParamMap, ParamVars};
use super::spec::{self, Layer, LayerSpec, NetSpec};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Coordinates sampled per parameter tensor.
    pub per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-5, per_tensor: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose perturbation changed a ReLU or pooling decision.
    pub skipped: usize,
    /// Checked coordinates whose analytic and numeric values are both below
    /// the resolution of the difference quotient, so only their absence is
    /// verified.
    pub at_noise: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

// Relative error with a floor so that coordinates whose true gradient is
// zero compare on an absolute scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

// Rounding bound of a central difference: each evaluation carries a relative
// error of a few ulps per accumulation level, amplified by 1/(2h). The factor
// 100 covers sums over ~1e4 terms.
fn fd_noise(plus: f64, minus: f64, h: f64) -> f64 {
    100.0 * f64::EPSILON * plus.abs().max(minus.abs()) / (2.0 * h)
}

struct Eval {
    value: f64,
    relu: Vec<bool>,
    pool: Vec<usize>,
}

fn eval<F>(f: &F, params: &ParamMap<f64>) -> Result<Eval>
where
    F: Fn(&mut Graph<f64>, &ParamVars) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = bind(&mut g, params, false);
    let y = f(&mut g, &vars)?;
    Ok(Eval { value: g.item(y), relu: g.relu_masks().to_vec(), pool: g.pool_choices().to_vec() })
}

/// Compares analytic gradients of the scalar `f` with central differences
/// on sampled coordinates of every parameter. Coordinates where either
/// perturbation flips a ReLU or changes a pooling choice are skipped, since
/// the finite difference then straddles a kink.
pub fn grad_check<F>(name: &str, f: F, params: &ParamMap<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamVars) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = bind(&mut g, params, true);
    let y = f(&mut g, &vars)?;
    let names: Vec<&String> = params.keys().collect();
    let wrt: Vec<Var> = names.iter().map(|n| vars[*n]).collect();
    let grads = g.grad(y, &wrt)?;
    let base_relu = g.relu_masks()[..].to_vec();
    let base_pool = g.pool_choices().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { name: name.into(), checked: 0, skipped: 0, at_noise: 0, max_rel_err: 0.0, worst: String::new() };
    let mut work = params.clone();
    for (k, pname) in names.iter().enumerate() {
        let n = params[*pname].len();
        let coords: Vec<usize> = if n <= opts.per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let analytic = g.value(grads[k]).data.clone();
        for c in coords {
            let orig = params[*pname].data[c];
            work.get_mut(*pname).unwrap().data[c] = orig + opts.h;
            let plus = eval(&f, &work)?;
            work.get_mut(*pname).unwrap().data[c] = orig - opts.h;
            let minus = eval(&f, &work)?;
            work.get_mut(*pname).unwrap().data[c] = orig;
            if plus.relu != base_relu || minus.relu != base_relu || plus.pool != base_pool || minus.pool != base_pool {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * opts.h);
            report.checked += 1;
            let e = if analytic[c].abs().max(numeric.abs()) <= fd_noise(plus.value, minus.value, opts.h) {
                report.at_noise += 1;
                0.0
            } else {
                rel_err(analytic[c], numeric)
            };
            if e > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = format!("{pname}[{c}]: analytic {:.6e}, numeric {:.6e}", analytic[c], numeric);
            }
        }
    }
    Ok(report)
}

fn rand_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Random parameters for `spec` with non-zero biases, in double precision.
pub fn random_params(spec: &NetSpec, rng: &mut ChaCha8Rng) -> Result<ParamMap<f64>> {
    let mut out = BTreeMap::new();
    for p in spec.params()? {
        let bound = if p.gain == 0.0 { 0.1 } else { p.gain.max(1.0).sqrt() * (3.0 / p.fan_in as f64).sqrt() };
        out.insert(p.name.clone(), rand_tensor(&p.shape, bound, rng));
    }
    Ok(out)
}

fn prefixed(prefix: &str, m: ParamMap<f64>) -> ParamMap<f64> {
    m.into_iter().map(|(k, v)| (format!("{prefix}{k}"), v)).collect()
}

fn strip(prefix: &str, vars: &ParamVars) -> ParamVars {
    vars.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), *v))).collect()
}

/// Conv (stride 2, ReLU) plus linear critic over `(image, condition)`.
pub fn two_layer_critic(h: usize, w: usize, image_ch: usize, cond_ch: usize) -> NetSpec {
    let ls = |name: &str, layer| LayerSpec { name: name.into(), layer };
    NetSpec {
        name: "two_layer_critic".into(),
        scale: 1.0,
        inputs: vec![[image_ch, 1, h, w], [cond_ch, 1, h, w]],
        layers: vec![
            ls("in0", Layer::Input { index: 0 }),
            ls("in1", Layer::Input { index: 1 }),
            ls("cat", Layer::Concat { a: 0, b: 1 }),
            ls(
                "conv1",
                Layer::Conv {
                    src: 2,
                    out: 4,
                    kernel: [1, 4, 4],
                    geom: ConvGeom { stride: [1, 2, 2], pad: [0, 1, 1] },
                    relu: true,
                },
            ),
            ls("linear", Layer::Linear { src: 3, out: 1 }),
        ],
        output: 4,
        features: vec![2, 3],
    }
}

fn random_map(w: usize, h: usize, density: f64, rng: &mut ChaCha8Rng) -> OrientationMap2D {
    let mut m = OrientationMap2D::new(w, h);
    for v in m.data.iter_mut() {
        if rng.gen_bool(density) {
            let a: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
            *v = [a.cos(), a.sin()];
        }
    }
    m
}

fn random_field(grid: GridSpec, density: f64, rng: &mut ChaCha8Rng) -> VectorField3D {
    let mut f = VectorField3D::zeros(grid);
    for v in f.data.iter_mut() {
        if rng.gen_bool(density) {
            let d = [rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0)];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-3);
            *v = [d[0] / n, d[1] / n, d[2] / n];
        }
    }
    f
}

/// Gradient checks for all seven loss terms and every layer type, on
/// small random networks in double precision.
pub fn gradient_suite(seed: u64, opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let res = 16;

    // Image losses through a sketch-to-orientation generator and its critic.
    let gen = spec::s2o_generator(0.125, res, res)?;
    let disc = spec::s2o_discriminator(0.125, res, res)?;
    let mut params = prefixed("g/", random_params(&gen, &mut rng)?);
    params.extend(prefixed("d/", random_params(&disc, &mut rng)?));
    let x = rand_tensor(&[2, 3, 1, res, res], 1.0, &mut rng);
    let real = rand_tensor(&[2, 2, 1, res, res], 1.0, &mut rng);
    for (name, style) in [("content", false), ("style", true)] {
        let f = |g: &mut Graph<f64>, vars: &ParamVars| {
            let (gv, dv) = (strip("g/", vars), strip("d/", vars));
            let xin = g.constant(x.clone());
            let fake = forward(g, &gen, &gv, &[xin])?[gen.output];
            let r = g.constant(real.clone());
            let fo = critic(g, &disc, &dv, fake, &[xin])?;
            let ro = critic(g, &disc, &dv, r, &[xin])?;
            if style {
                loss_style(g, &fo.features, &ro.features, &[0, 1, 2, 3, 4])
            } else {
                loss_content(g, &fo.features, &ro.features, &[0, 2])
            }
        };
        out.push(grad_check(name, f, &params, opts)?);
    }

    // Gradient penalty: second-order gradients through a two-layer critic
    // and through the full image critic.
    let small = two_layer_critic(8, 8, 2, 3);
    let sp = random_params(&small, &mut rng)?;
    let (r8, f8, c8) = (
        rand_tensor(&[2, 2, 1, 8, 8], 1.0, &mut rng),
        rand_tensor(&[2, 2, 1, 8, 8], 1.0, &mut rng),
        rand_tensor(&[2, 3, 1, 8, 8], 1.0, &mut rng),
    );
    let gp = |spec: &NetSpec, r: &Tensor<f64>, fk: &Tensor<f64>, c: &Tensor<f64>| {
        let (spec, r, fk, c) = (spec.clone(), r.clone(), fk.clone(), c.clone());
        move |g: &mut Graph<f64>, vars: &ParamVars| {
            let (rv, fv, cv) = (g.constant(r.clone()), g.constant(fk.clone()), g.constant(c.clone()));
            loss_gp(g, &spec, vars, rv, fv, &[cv], &[0.3, 0.8])
        }
    };
    out.push(grad_check("gp", gp(&small, &r8, &f8, &c8), &sp, opts)?);
    let dp = random_params(&disc, &mut rng)?;
    out.push(grad_check("gp_critic", gp(&disc, &real, &rand_tensor(&[2, 2, 1, res, res], 1.0, &mut rng), &x), &dp, opts)?);

    // Volume losses through the orientation-to-volume generator.
    let (vr, vd) = (8, 4);
    let grid = GridSpec::new(vr, vr, vd, WorldBox::standard())?;
    let o2v = spec::o2v_generator(0.125, vr, vr, vd)?;
    let op = random_params(&o2v, &mut rng)?;
    let xin = rand_tensor(&[2, 3, 1, vr, vr], 1.0, &mut rng);
    let truth: Vec<VectorField3D> = (0..2).map(|_| random_field(grid, 0.4, &mut rng)).collect();
    let vis: Vec<_> = truth.iter().map(|f| build_visibility_index(f, &ViewPose::IDENTITY)).collect();
    let dense: Vec<_> = (0..2).map(|_| random_map(vr, vr, 0.8, &mut rng)).collect();
    let sketch: Vec<_> = (0..2).map(|_| random_map(vr, vr, 0.2, &mut rng)).collect();
    let target = rand_tensor(&[2, 3, vd, vr, vr], 1.0, &mut rng);
    for name in ["proj1", "proj2", "lap"] {
        let f = |g: &mut Graph<f64>, vars: &ParamVars| {
            let i = g.constant(xin.clone());
            let y = forward(g, &o2v, vars, &[i])?[o2v.output];
            let vr: Vec<_> = vis.iter().collect();
            match name {
                "proj1" => loss_proj1(g, y, &dense.iter().collect::<Vec<_>>(), &vr),
                "proj2" => loss_proj2(g, y, &sketch.iter().collect::<Vec<_>>(), &vr),
                _ => {
                    let t = g.constant(target.clone());
                    loss_lap(g, y, t)
                }
            }
        };
        out.push(grad_check(name, f, &op, opts)?);
    }

    // Orientation preservation through the view-update generator.
    let v2v = spec::v2v_generator(0.125, vr, vr, vd)?;
    let vp = random_params(&v2v, &mut rng)?;
    let rot = rand_tensor(&[2, 3, vd, vr, vr], 1.0, &mut rng);
    let cond = rand_tensor(&[2, 3, 1, vr, vr], 1.0, &mut rng);
    let gamma: Vec<Vec<usize>> = (0..2).map(|_| (0..grid.len()).filter(|_| rng.gen_bool(0.3)).collect()).collect();
    let f = |g: &mut Graph<f64>, vars: &ParamVars| {
        let (r, c) = (g.constant(rot.clone()), g.constant(cond.clone()));
        let y = forward(g, &v2v, vars, &[r, c])?[v2v.output];
        loss_ori(g, y, r, &gamma)
    };
    out.push(grad_check("ori", f, &vp, opts)?);

    // Volumetric critic features.
    let fd = spec::field_discriminator(0.125, 16, 16, 16, 0)?;
    let fp = random_params(&fd, &mut rng)?;
    let (fake3, real3, cond3) = (
        rand_tensor(&[1, 3, 16, 16, 16], 1.0, &mut rng),
        rand_tensor(&[1, 3, 16, 16, 16], 1.0, &mut rng),
        rand_tensor(&[1, 3, 1, 16, 16], 1.0, &mut rng),
    );
    let f = |g: &mut Graph<f64>, vars: &ParamVars| {
        let (a, b, c) = (g.constant(fake3.clone()), g.constant(real3.clone()), g.constant(cond3.clone()));
        let fo = critic(g, &fd, vars, a, &[c])?;
        let ro = critic(g, &fd, vars, b, &[c])?;
        let s = loss_style(g, &fo.features, &ro.features, &[1, 2, 3, 4])?;
        let ct = loss_content(g, &fo.features, &ro.features, &[2, 3])?;
        let d = g.sub(fo.score, ro.score)?;
        let d = g.sum(d);
        let t = g.add(s, ct)?;
        g.add(t, d)
    };
    out.push(grad_check("field_critic", f, &fp, opts)?);
    Ok(out)
}
