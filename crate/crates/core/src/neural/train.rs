//! WGAN-GP training with alternating critic and generator updates.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::ops::ControlFlow;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{invisible_cells, TrainingSampleMV, TrainingSampleSV};
use crate::error::{Error, Result};
use crate::field::{build_visibility_index, OrientationMap2D, ViewPose, VisibilityIndex};

use super::convert::{field_to_tensor, image_input, map_channels};
use super::graph::{Graph, Var};
use super::loss::{
    combine_parts, critic, critic_loss, loss_content, loss_gp, loss_lap, loss_ori, loss_proj1, loss_proj2, loss_style,
    LossParts, LossWeights, Term,
};
use super::model::{bind, forward, ParamMap, ParamVars, WeightStore};
use super::spec::NetKind;
use super::tensor::Tensor;

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Adam {
        Adam { lr, beta1, beta2, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamMap<f32>, grads: &BTreeMap<String, Vec<f32>>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("gradient for a known parameter");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                let gi = g[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let step = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p.data[i] -= step as f32;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Fraction of iterations trained without projection and Laplacian terms.
    pub deferred_fraction: f64,
    pub weights: LossWeights,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100,
            batch_size: 8,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            seed: 0,
            deferred_fraction: 0.5,
            weights: LossWeights::default(),
            checkpoint_every: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    /// Iterations for `epochs` passes over `n` examples.
    pub fn iterations_for_epochs(epochs: usize, n: usize, batch: usize) -> usize {
        epochs * n.div_ceil(batch.max(1))
    }
}

/// Losses of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub critic: f64,
    pub generator: f64,
    pub parts: LossParts,
    /// Half squared output error per output pixel (or cell), `1/2 |G(x) - y|^2 / (N * spatial)`.
    pub pixel: f64,
    pub deferred: bool,
}

/// One training pair with everything the losses need.
#[derive(Debug, Clone)]
pub struct Example {
    /// Generator inputs, unit batch.
    pub inputs: Vec<Tensor<f32>>,
    /// Ground-truth output, unit batch.
    pub target: Tensor<f32>,
    /// Critic conditions, unit batch.
    pub conds: Vec<Tensor<f32>>,
    pub volume: Option<VolumeTerms>,
}

/// Supervision specific to the volumetric generators.
#[derive(Debug, Clone)]
pub struct VolumeTerms {
    pub dense: OrientationMap2D,
    pub sketch: OrientationMap2D,
    /// Visible cells of the ground-truth field.
    pub vis: VisibilityIndex,
    /// Invisible cells of the rotated prior (view updates only).
    pub gamma: Vec<usize>,
}

pub fn s2o_example(s: &TrainingSampleSV) -> Result<Example> {
    let input = image_input(&[map_channels(&s.sketch), mask_channel(s)], s.dense.width, s.dense.height)?;
    let target = image_input(&[map_channels(&s.dense)], s.dense.width, s.dense.height)?;
    Ok(Example { inputs: vec![input.clone()], target, conds: vec![input], volume: None })
}

fn mask_channel(s: &TrainingSampleSV) -> Vec<Vec<f32>> {
    vec![s.mask.data.iter().map(|&m| if m != 0 { 1.0 } else { 0.0 }).collect()]
}

pub fn o2v_example(s: &TrainingSampleSV) -> Result<Example> {
    let (w, h) = (s.dense.width, s.dense.height);
    let input = image_input(&[map_channels(&s.dense), vec![s.depth.data.clone()]], w, h)?;
    let vis = build_visibility_index(&s.field, &ViewPose::IDENTITY);
    Ok(Example {
        inputs: vec![input.clone()],
        target: field_to_tensor(&s.field),
        conds: vec![input],
        volume: Some(VolumeTerms { dense: s.dense.clone(), sketch: s.sketch.clone(), vis, gamma: vec![] }),
    })
}

pub fn v2v_example(s: &TrainingSampleMV) -> Result<Example> {
    let (w, h) = (s.dense.width, s.dense.height);
    let cond2d = image_input(&[map_channels(&s.dense), vec![s.depth.data.clone()]], w, h)?;
    let rotated = field_to_tensor(&s.rotated);
    let vis = build_visibility_index(&s.target, &ViewPose::IDENTITY);
    Ok(Example {
        inputs: vec![rotated.clone(), cond2d.clone()],
        target: field_to_tensor(&s.target),
        conds: vec![rotated, cond2d],
        volume: Some(VolumeTerms {
            dense: s.dense.clone(),
            sketch: s.sketch.clone(),
            vis,
            gamma: invisible_cells(&s.rotated),
        }),
    })
}

struct Batch {
    inputs: Vec<Tensor<f32>>,
    target: Tensor<f32>,
    conds: Vec<Tensor<f32>>,
    items: Vec<usize>,
}

fn make_batch(examples: &[Example], items: &[usize]) -> Result<Batch> {
    let stack = |f: &dyn Fn(&Example) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        Tensor::stack(&items.iter().map(|&i| f(&examples[i]).clone()).collect::<Vec<_>>())
    };
    let first = &examples[items[0]];
    let mut inputs = Vec::new();
    for k in 0..first.inputs.len() {
        inputs.push(stack(&|e| &e.inputs[k])?);
    }
    let mut conds = Vec::new();
    for k in 0..first.conds.len() {
        conds.push(stack(&|e| &e.conds[k])?);
    }
    Ok(Batch { inputs, target: stack(&|e| &e.target)?, conds, items: items.to_vec() })
}

fn constants(g: &mut Graph<f32>, ts: &[Tensor<f32>]) -> Vec<Var> {
    ts.iter().map(|t| g.constant(t.clone())).collect()
}

fn collect_grads(g: &mut Graph<f32>, y: Var, vars: &ParamVars) -> Result<BTreeMap<String, Vec<f32>>> {
    let names: Vec<String> = vars.keys().cloned().collect();
    let wrt: Vec<Var> = names.iter().map(|n| vars[n]).collect();
    let grads = g.grad(y, &wrt)?;
    Ok(names.into_iter().zip(grads).map(|(n, v)| (n, g.value(v).data.clone())).collect())
}

fn finite(iteration: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged { iteration, detail: format!("{what} loss is {v}") })
    }
}

/// Generator loss graph for one batch. Returns the total, the parts and the
/// generator output.
pub fn generator_objective(
    g: &mut Graph<f32>,
    store: &WeightStore,
    gvars: &ParamVars,
    dvars: &ParamVars,
    examples: &[Example],
    batch_items: &[usize],
    weights: &LossWeights,
    deferred: bool,
) -> Result<(Var, Vec<(Term, Var)>, Var)> {
    let b = make_batch(examples, batch_items)?;
    let (gen, disc) = (&store.pair.generator, &store.pair.discriminator);
    let ins = constants(g, &b.inputs);
    let conds = constants(g, &b.conds);
    let fake = forward(g, gen, gvars, &ins)?[gen.output];
    let real = g.constant(b.target.clone());
    let fo = critic(g, disc, dvars, fake, &conds)?;
    let ro = critic(g, disc, dvars, real, &conds)?;
    let mut parts = vec![
        (Term::Content, loss_content(g, &fo.features, &ro.features, &weights.content_layers)?),
        (Term::Style, loss_style(g, &fo.features, &ro.features, &weights.style_layers)?),
    ];
    if store.pair.kind != NetKind::S2o {
        let vt: Vec<&VolumeTerms> = b
            .items
            .iter()
            .map(|&i| examples[i].volume.as_ref().ok_or_else(|| Error::Invalid("volume example lacks supervision".into())))
            .collect::<Result<_>>()?;
        let vis: Vec<&VisibilityIndex> = vt.iter().map(|v| &v.vis).collect();
        let dense: Vec<&OrientationMap2D> = vt.iter().map(|v| &v.dense).collect();
        let sketch: Vec<&OrientationMap2D> = vt.iter().map(|v| &v.sketch).collect();
        parts.push((Term::Proj1, loss_proj1(g, fake, &dense, &vis)?));
        parts.push((Term::Proj2, loss_proj2(g, fake, &sketch, &vis)?));
        parts.push((Term::Lap, loss_lap(g, fake, real)?));
        if store.pair.kind == NetKind::V2v {
            let gamma: Vec<Vec<usize>> = vt.iter().map(|v| v.gamma.clone()).collect();
            parts.push((Term::Ori, loss_ori(g, fake, conds[0], &gamma)?));
        }
    }
    let total = combine_parts(g, store.pair.kind, &parts, weights, deferred)?;
    Ok((total, parts, fake))
}

/// Half squared error per sample and spatial position.
pub fn pixel_error(fake: &Tensor<f32>, real: &Tensor<f32>) -> f64 {
    let sse: f64 = fake.data.iter().zip(&real.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    let per = fake.shape[0] * fake.shape[2..].iter().product::<usize>();
    0.5 * sse / per.max(1) as f64
}

fn record_parts(g: &Graph<f32>, parts: &[(Term, Var)]) -> LossParts {
    let mut p = LossParts::default();
    for &(t, v) in parts {
        let x = g.item(v) as f64;
        match t {
            Term::Content => p.content = x,
            Term::Style => p.style = x,
            Term::Proj1 => p.proj1 = x,
            Term::Proj2 => p.proj2 = x,
            Term::Lap => p.lap = x,
            Term::Ori => p.ori = x,
        }
    }
    p
}

/// Trains `store` in place on `examples` and returns the loss history.
pub fn train(store: &mut WeightStore, examples: &[Example], cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    train_with(store, examples, cfg, |_| ControlFlow::Continue(()))
}

/// [`train`] with a per-iteration callback for progress reporting. Returning
/// `Break` ends training after that iteration.
pub fn train_with(
    store: &mut WeightStore,
    examples: &[Example],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord) -> ControlFlow<()>,
) -> Result<Vec<LossRecord>> {
    store.validate()?;
    cfg.weights.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gopt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut dopt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
    let deferred_until = (cfg.deferred_fraction.clamp(0.0, 1.0) * cfg.iterations as f64).round() as usize;
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(cfg.iterations);
    let batch = cfg.batch_size.min(examples.len());
    let per_epoch = examples.len().div_ceil(batch);
    for it in 0..cfg.iterations {
        let mut items = Vec::with_capacity(batch);
        while items.len() < batch {
            if order.is_empty() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
            }
            let i = order.pop().unwrap();
            if !items.contains(&i) {
                items.push(i);
            }
        }
        let eps: Vec<f64> = (0..batch).map(|_| rng.gen::<f64>()).collect();
        let b = make_batch(examples, &items)?;

        // Critic step with the generator frozen.
        let critic_value = {
            let mut g = Graph::<f32>::new();
            let gv = bind(&mut g, &store.generator, false);
            let dv = bind(&mut g, &store.discriminator, true);
            let ins = constants(&mut g, &b.inputs);
            let conds = constants(&mut g, &b.conds);
            let fake = forward(&mut g, &store.pair.generator, &gv, &ins)?[store.pair.generator.output];
            let fake = g.detach(fake);
            let real = g.constant(b.target.clone());
            let dr = critic(&mut g, &store.pair.discriminator, &dv, real, &conds)?.score;
            let df = critic(&mut g, &store.pair.discriminator, &dv, fake, &conds)?.score;
            let gp = loss_gp(&mut g, &store.pair.discriminator, &dv, real, fake, &conds, &eps)?;
            let loss = critic_loss(&mut g, dr, df, gp, cfg.weights.lambda)?;
            let value = finite(it, "critic", g.item(loss) as f64)?;
            let grads = collect_grads(&mut g, loss, &dv)?;
            dopt.step(&mut store.discriminator, &grads);
            value
        };

        // Generator step with the critic frozen.
        let deferred = it < deferred_until;
        let mut g = Graph::<f32>::new();
        let gv = bind(&mut g, &store.generator, true);
        let dv = bind(&mut g, &store.discriminator, false);
        let (total, parts, fake) =
            generator_objective(&mut g, store, &gv, &dv, examples, &items, &cfg.weights, deferred)?;
        let pixel = pixel_error(g.value(fake), &b.target);
        let gen_value = finite(it, "generator", g.item(total) as f64)?;
        let grads = collect_grads(&mut g, total, &gv)?;
        gopt.step(&mut store.generator, &grads);

        let rec = LossRecord { iteration: it, critic: critic_value, generator: gen_value, parts: record_parts(&g, &parts), pixel, deferred };
        if it % 100 == 0 {
            info!("iteration {it}: critic {critic_value:.5}, generator {gen_value:.5}");
        }
        let flow = on_step(&rec);
        history.push(rec);
        store.meta.iterations += 1;
        store.meta.epochs = store.meta.iterations / per_epoch;
        if let (Some(path), k) = (&cfg.checkpoint_path, cfg.checkpoint_every) {
            if k > 0 && (it + 1) % k == 0 {
                store.save(path)?;
            }
        }
        if flow.is_break() {
            break;
        }
    }
    store.meta.seed = cfg.seed;
    if let Some(path) = &cfg.checkpoint_path {
        store.save(path)?;
    }
    Ok(history)
}

/// Mean of `values` over consecutive windows of `window` entries.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values.chunks(window.max(1)).filter(|c| c.len() == window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}
