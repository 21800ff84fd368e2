use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{grad_check, random_params, GradCheckOptions};
use super::graph::Graph;
use super::loss::*;
use super::model::{bind, init_params, ParamVars, WeightStore};
use super::spec::{Layer, LayerSpec, NetKind, NetSpec};
use super::tensor::Tensor;
use super::train::{generator_objective, train, Example, TrainConfig, VolumeTerms};
use crate::field::{build_visibility_index, GridSpec, OrientationMap2D, VectorField3D, ViewPose, WorldBox};
use crate::Error;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// Critic that is a single dense layer over (image, condition).
fn linear_critic(h: usize, w: usize) -> NetSpec {
    let ls = |name: &str, layer| LayerSpec { name: name.into(), layer };
    NetSpec {
        name: "linear".into(),
        scale: 1.0,
        inputs: vec![[2, 1, h, w], [1, 1, h, w]],
        layers: vec![
            ls("in0", Layer::Input { index: 0 }),
            ls("in1", Layer::Input { index: 1 }),
            ls("cat", Layer::Concat { a: 0, b: 1 }),
            ls("linear", Layer::Linear { src: 2, out: 1 }),
        ],
        output: 3,
        features: vec![2],
    }
}

fn gp_with_linear_weight(scale: f64) -> f64 {
    let (h, w) = (3, 3);
    let spec = linear_critic(h, w);
    let mut wt = vec![0.0; 27];
    // Image part holds a vector of norm `scale`; the condition part is
    // ignored by the penalty.
    wt[0] = 0.6 * scale;
    wt[10] = 0.8 * scale;
    wt[20] = 5.0;
    let params: BTreeMap<String, Tensor<f64>> = [
        ("linear.w".to_string(), Tensor::from_vec(&[1, 27, 1, 1, 1], wt).unwrap()),
        ("linear.b".to_string(), Tensor::scalar(0.3)),
    ]
    .into_iter()
    .map(|(k, mut v)| {
        if k == "linear.b" {
            v.shape = vec![1, 1, 1, 1, 1];
        }
        (k, v)
    })
    .collect();
    let mut g = Graph::<f64>::new();
    let vars = bind(&mut g, &params, true);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let real = g.constant(rand_tensor(&[2, 2, 1, h, w], &mut rng));
    let fake = g.constant(rand_tensor(&[2, 2, 1, h, w], &mut rng));
    let cond = g.constant(rand_tensor(&[2, 1, 1, h, w], &mut rng));
    let gp = loss_gp(&mut g, &spec, &vars, real, fake, &[cond], &[0.25, 0.9]).unwrap();
    g.item(gp)
}

#[test]
fn gradient_penalty_closed_forms() {
    assert_eq!(gp_with_linear_weight(1.0), 0.0);
    let one = gp_with_linear_weight(2.0);
    assert_eq!(one, 1.0);
    assert_eq!(LossWeights::default().lambda * one, 10.0);
}

#[test]
fn gradient_penalty_rejects_bad_eps() {
    let spec = linear_critic(2, 2);
    let mut g = Graph::<f64>::new();
    let params = init_params(&spec, 0).unwrap().into_iter().map(|(k, v)| (k, v.cast::<f64>())).collect();
    let vars = bind(&mut g, &params, true);
    let x = g.constant(Tensor::zeros(&[1, 2, 1, 2, 2]));
    let c = g.constant(Tensor::zeros(&[1, 1, 1, 2, 2]));
    assert!(loss_gp(&mut g, &spec, &vars, x, x, &[c], &[1.5]).is_err());
    assert!(loss_gp(&mut g, &spec, &vars, x, x, &[c], &[0.5, 0.5]).is_err());
}

#[test]
fn content_closed_forms() {
    let mut g = Graph::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = g.constant(rand_tensor(&[2, 2, 1, 4, 4], &mut rng));
    let ones = g.constant(Tensor::full(&[2, 2, 1, 4, 4], 1.0));
    let b = g.add(a, ones).unwrap();
    let same = loss_content(&mut g, &[a], &[a], &[0]).unwrap();
    assert_eq!(g.item(same), 0.0);
    let l = loss_content(&mut g, &[b], &[a], &[0]).unwrap();
    assert!((g.item(l) - 32.0).abs() < 1e-12, "N/2 with N = 64");
    assert!(matches!(loss_content(&mut g, &[a], &[a], &[3]), Err(Error::Invalid(_))));
}

#[test]
fn style_zero_and_gram_properties() {
    let mut g = Graph::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = g.constant(rand_tensor(&[2, 5, 1, 3, 4], &mut rng));
    let l = loss_style(&mut g, &[f], &[f], &[0]).unwrap();
    assert_eq!(g.item(l), 0.0);
    let a = g.gram(f);
    let gram = g.value(a).clone();
    assert_eq!(gram.shape, vec![2, 5, 5]);
    for b in 0..2 {
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(gram.data[b * 25 + i * 5 + j], gram.data[b * 25 + j * 5 + i]);
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(5, 5, &gram.data[b * 25..(b + 1) * 25]);
        let eig = m.symmetric_eigenvalues();
        assert!(eig.iter().all(|e| *e >= -1e-8), "{eig:?}");
    }
    let h = g.constant(rand_tensor(&[2, 5, 1, 3, 4], &mut rng));
    let l = loss_style(&mut g, &[h], &[f], &[0]).unwrap();
    assert!(g.item(l) > 0.0);
}

trait GramExt {
    fn gram(&mut self, f: super::graph::Var) -> super::graph::Var;
}

impl GramExt for Graph<f64> {
    fn gram(&mut self, f: super::graph::Var) -> super::graph::Var {
        gram(self, f).unwrap()
    }
}

fn grid(n: usize, d: usize) -> GridSpec {
    GridSpec::new(n, n, d, WorldBox::standard()).unwrap()
}

#[test]
fn projection_closed_forms_and_locality() {
    let gr = grid(4, 3);
    let mut truth = VectorField3D::zeros(gr);
    truth.set(1, 2, 1, [0.0, 1.0, 0.0]);
    truth.set(1, 2, 0, [1.0, 0.0, 0.0]);
    truth.set(3, 0, 2, [0.0, 0.0, 1.0]);
    let vis = build_visibility_index(&truth, &ViewPose::IDENTITY);
    let y = super::field_to_tensor(&truth).cast::<f64>();
    let projected = crate::field::project_field(&truth, &vis).unwrap();
    let mut g = Graph::<f64>::new();
    let yv = g.leaf(y);
    for f in [loss_proj1::<f64>, loss_proj2::<f64>] {
        let l = f(&mut g, yv, &[&projected], &[&vis]).unwrap();
        assert_eq!(g.item(l), 0.0);
    }
    // One valid pixel whose target differs by (1, 0).
    let mut one = OrientationMap2D::new(4, 4);
    one.set(1, 2, [1.0, 1.0]);
    let l = loss_proj1(&mut g, yv, &[&one], &[&vis]).unwrap();
    assert_eq!(g.item(l), 1.0);
    // Gradient support is exactly the visible cells of valid pixels.
    let mut dense = OrientationMap2D::new(4, 4);
    for v in dense.data.iter_mut() {
        *v = [0.3, -0.2];
    }
    let l = loss_proj2(&mut g, yv, &[&dense], &[&vis]).unwrap();
    let d = g.grad(l, &[yv]).unwrap()[0];
    let grad = g.value(d).data.clone();
    let visible: Vec<usize> = vis.pairs().map(|(_, c)| c).collect();
    let cells = gr.len();
    for (i, v) in grad.iter().enumerate() {
        let cell = i % cells;
        if !visible.contains(&cell) || i / cells == 2 {
            assert_eq!(*v, 0.0, "index {i}");
        }
    }
    assert!(grad.iter().any(|v| *v != 0.0));
    // Uncovered valid pixels count against an empty projection.
    let l = loss_proj1(&mut g, yv, &[&dense], &[&vis]).unwrap();
    let uncovered = (16 - visible.len()) as f64 * (0.09 + 0.04);
    assert!(g.item(l) >= uncovered - 1e-12);
}

#[test]
fn laplacian_loss_zero_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::<f64>::new();
    let a = rand_tensor(&[1, 3, 3, 4, 5], &mut rng);
    let av = g.leaf(a.clone());
    let same = g.constant(a.clone());
    let l = loss_lap(&mut g, av, same).unwrap();
    assert_eq!(g.item(l), 0.0);
    let shifted = Tensor::from_vec(&a.shape, a.data.iter().map(|v| v + 0.37).collect()).unwrap();
    let s = g.constant(shifted);
    let l = loss_lap(&mut g, av, s).unwrap();
    assert!(g.item(l).abs() < 1e-24);
    let other = g.constant(rand_tensor(&[1, 3, 3, 4, 5], &mut rng));
    let l = loss_lap(&mut g, av, other).unwrap();
    assert!(g.item(l) > 0.0);
}

#[test]
fn orientation_loss_is_local_to_gamma() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::<f64>::new();
    let rot = rand_tensor(&[2, 3, 2, 3, 3], &mut rng);
    let r = g.constant(rot.clone());
    let mut out = rot.clone();
    let gamma = vec![vec![0, 4, 17], vec![3]];
    // Differ from the rotated input only outside gamma.
    for (n, set) in gamma.iter().enumerate() {
        for c in 0..18 {
            if !set.contains(&c) {
                for ch in 0..3 {
                    out.data[(n * 3 + ch) * 18 + c] += 1.0;
                }
            }
        }
    }
    let y = g.leaf(out);
    let l = loss_ori(&mut g, y, r, &gamma).unwrap();
    assert_eq!(g.item(l), 0.0);
    let l = loss_ori(&mut g, y, r, &[vec![], vec![]]).unwrap();
    assert_eq!(g.item(l), 0.0);
    let l = loss_ori(&mut g, y, r, &[vec![1], vec![3]]).unwrap();
    assert_eq!(g.item(l), 3.0);
    let d = g.grad(l, &[y]).unwrap()[0];
    for (i, v) in g.value(d).data.iter().enumerate() {
        let (n, c) = (i / 54, i % 18);
        let inside = (n == 0 && c == 1) || (n == 1 && c == 3);
        if !inside {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn generator_totals() {
    let w = LossWeights::default();
    let ones = LossParts { content: 1.0, style: 1.0, proj1: 1.0, proj2: 1.0, lap: 1.0, ori: 1.0 };
    let o2v = total_generator_loss(NetKind::O2v, &ones, &w);
    assert!((o2v - 5.61002).abs() < 1e-12, "{o2v}");
    let v2v = total_generator_loss(NetKind::V2v, &ones, &w);
    assert!((v2v - o2v - 0.1).abs() < 1e-12);
    assert!((total_generator_loss(NetKind::S2o, &ones, &w) - 5.01).abs() < 1e-12);
    assert_eq!(total_generator_loss(NetKind::V2v, &LossParts::default(), &w), 0.0);
    let mut bad = w.clone();
    bad.beta = -1.0;
    assert!(bad.validate().is_err());
}

#[test]
fn losses_are_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::<f64>::new();
    for _ in 0..5 {
        let a = g.constant(rand_tensor(&[1, 3, 2, 3, 3], &mut rng));
        let b = g.constant(rand_tensor(&[1, 3, 2, 3, 3], &mut rng));
        for l in [
            loss_content(&mut g, &[a], &[b], &[0]).unwrap(),
            loss_style(&mut g, &[a], &[b], &[0]).unwrap(),
            loss_lap(&mut g, a, b).unwrap(),
            loss_ori(&mut g, a, b, &[vec![0, 5, 9]]).unwrap(),
        ] {
            assert!(g.item(l) >= 0.0);
        }
    }
}

#[test]
fn quadratic_grad_check_is_tight() {
    let mut params = BTreeMap::new();
    params.insert("x".to_string(), Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap());
    let c = Tensor::from_vec(&[4], vec![1.0, 2.5, 0.5, 3.0]).unwrap();
    let f = |g: &mut Graph<f64>, v: &ParamVars| {
        let cv = g.constant(c.clone());
        let sq = g.square(v["x"]);
        let w = g.mul(sq, cv)?;
        Ok(g.sum(w))
    };
    let r = grad_check("quadratic", f, &params, &GradCheckOptions::default()).unwrap();
    assert_eq!(r.checked, 4);
    assert!(r.max_rel_err < 1e-8, "{r:?}");
}

#[test]
fn grad_check_skips_kinks() {
    let mut params = BTreeMap::new();
    // 5e-6 sits within h of the ReLU kink.
    params.insert("x".to_string(), Tensor::from_vec(&[2], vec![5e-6, 1.0]).unwrap());
    let f = |g: &mut Graph<f64>, v: &ParamVars| {
        let r = g.relu(v["x"]);
        Ok(g.sum(r))
    };
    let r = grad_check("relu", f, &params, &GradCheckOptions::default()).unwrap();
    assert_eq!((r.checked, r.skipped), (1, 1));
}

#[test]
fn gp_second_order_check_on_two_layer_critic() {
    let spec = super::gradcheck::two_layer_critic(6, 6, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = random_params(&spec, &mut rng).unwrap();
    let (r, fk, c) = (
        rand_tensor(&[2, 2, 1, 6, 6], &mut rng),
        rand_tensor(&[2, 2, 1, 6, 6], &mut rng),
        rand_tensor(&[2, 1, 1, 6, 6], &mut rng),
    );
    let f = |g: &mut Graph<f64>, v: &ParamVars| {
        let (a, b, cc) = (g.constant(r.clone()), g.constant(fk.clone()), g.constant(c.clone()));
        loss_gp(g, &spec, v, a, b, &[cc], &[0.1, 0.6])
    };
    let rep = grad_check("gp", f, &params, &GradCheckOptions { per_tensor: 50, ..Default::default() }).unwrap();
    assert!(rep.checked > 20);
    assert!(rep.max_rel_err < 1e-3, "{rep:?}");
}

// Random volume example for an O2V pair at res 16, depth 16.
fn volume_example(rng: &mut ChaCha8Rng, res: usize, depth: usize) -> Example {
    let gr = GridSpec::new(res, res, depth, WorldBox::standard()).unwrap();
    let mut truth = VectorField3D::zeros(gr);
    for v in truth.data.iter_mut() {
        if rng.gen_bool(0.3) {
            *v = [0.0, -1.0, 0.0];
        }
    }
    let mut dense = OrientationMap2D::new(res, res);
    let mut sketch = OrientationMap2D::new(res, res);
    for p in 0..res * res {
        let a: f32 = rng.gen_range(0.0..6.28);
        dense.data[p] = [a.cos(), a.sin()];
        if p % 5 == 0 {
            sketch.data[p] = [a.cos(), a.sin()];
        }
    }
    let input: Tensor<f32> = rand_tensor(&[1, 3, 1, res, res], rng).cast();
    Example {
        inputs: vec![input.clone()],
        target: super::field_to_tensor(&truth),
        conds: vec![input],
        volume: Some(VolumeTerms { dense, sketch, vis: build_visibility_index(&truth, &ViewPose::IDENTITY), gamma: vec![] }),
    }
}

#[test]
fn deferred_stage_ignores_projection_and_laplacian() {
    let store = WeightStore::init(NetKind::O2v, 0.125, 16, 16, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = volume_example(&mut rng, 16, 16);
    let mut b = a.clone();
    // Same inputs and target, different projection supervision.
    let other = volume_example(&mut rng, 16, 16).volume.unwrap();
    b.volume = Some(VolumeTerms { dense: other.dense, sketch: other.sketch, ..a.volume.clone().unwrap() });
    let grads = |ex: &Example, deferred: bool| {
        let mut g = Graph::<f32>::new();
        let gv = bind(&mut g, &store.generator, true);
        let dv = bind(&mut g, &store.discriminator, false);
        let (total, _, _) = generator_objective(
            &mut g,
            &store,
            &gv,
            &dv,
            std::slice::from_ref(ex),
            &[0],
            &LossWeights::default(),
            deferred,
        )
        .unwrap();
        let names: Vec<_> = gv.keys().cloned().collect();
        let wrt: Vec<_> = names.iter().map(|n| gv[n]).collect();
        let gs = g.grad(total, &wrt).unwrap();
        names.into_iter().zip(gs.iter().map(|v| g.value(*v).data.clone())).collect::<HashMap<_, _>>()
    };
    assert_eq!(grads(&a, true), grads(&b, true));
    assert_ne!(grads(&a, false), grads(&b, false));
}

fn tiny_s2o_examples(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: Tensor<f32> = rand_tensor(&[1, 3, 1, 16, 16], &mut rng).cast();
            Example { inputs: vec![x.clone()], target: rand_tensor(&[1, 2, 1, 16, 16], &mut rng).cast(), conds: vec![x], volume: None }
        })
        .collect()
}

#[test]
fn zero_iterations_leave_weights_unchanged() {
    let init = WeightStore::init(NetKind::S2o, 0.125, 16, 16, 4).unwrap();
    let mut ws = init.clone();
    let hist = train(&mut ws, &tiny_s2o_examples(2, 1), &TrainConfig { iterations: 0, ..Default::default() }).unwrap();
    assert!(hist.is_empty());
    assert_eq!(ws.generator, init.generator);
    assert_eq!(ws.discriminator, init.discriminator);
}

#[test]
fn training_is_deterministic_and_moves_weights() {
    let ex = tiny_s2o_examples(3, 2);
    let cfg = TrainConfig { iterations: 3, batch_size: 2, seed: 5, ..Default::default() };
    let mut a = WeightStore::init(NetKind::S2o, 0.125, 16, 16, 4).unwrap();
    let init = a.clone();
    let mut b = a.clone();
    let ha = train(&mut a, &ex, &cfg).unwrap();
    let hb = train(&mut b, &ex, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.generator, b.generator);
    assert_ne!(a.generator, init.generator);
    assert_ne!(a.discriminator, init.discriminator);
    assert_eq!(a.meta.iterations, 3);
}

#[test]
fn callback_can_stop_training() {
    let mut ws = WeightStore::init(NetKind::S2o, 0.125, 16, 16, 4).unwrap();
    let cfg = TrainConfig { iterations: 10, batch_size: 2, ..Default::default() };
    let hist = super::train::train_with(&mut ws, &tiny_s2o_examples(2, 3), &cfg, |r| {
        if r.iteration == 1 {
            std::ops::ControlFlow::Break(())
        } else {
            std::ops::ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(hist.len(), 2);
    assert_eq!(ws.meta.iterations, 2);
}

#[test]
fn nan_weights_abort_training() {
    let mut ws = WeightStore::init(NetKind::S2o, 0.125, 16, 16, 4).unwrap();
    ws.generator.get_mut("head.b").unwrap().data[0] = f32::NAN;
    let err = train(&mut ws, &tiny_s2o_examples(2, 1), &TrainConfig { iterations: 2, ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::Diverged { iteration: 0, .. }), "{err}");
}

#[test]
fn empty_training_set_rejected() {
    let mut ws = WeightStore::init(NetKind::S2o, 0.125, 16, 16, 4).unwrap();
    assert!(matches!(train(&mut ws, &[], &TrainConfig::default()), Err(Error::Empty(_))));
}

#[test]
fn init_is_seeded() {
    let spec = super::spec::s2o_generator(0.25, 16, 16).unwrap();
    assert_eq!(init_params(&spec, 1).unwrap(), init_params(&spec, 1).unwrap());
    assert_ne!(init_params(&spec, 1).unwrap(), init_params(&spec, 2).unwrap());
}

#[test]
fn gradient_suite_passes() {
    let reports = super::gradient_suite(0, &GradCheckOptions::default()).unwrap();
    assert_eq!(reports.len(), 9);
    for r in &reports {
        println!("{:<14} checked {:>4} skipped {:>3} max rel err {:.3e}  ({})", r.name, r.checked, r.skipped, r.max_rel_err, r.worst);
    }
    for r in &reports {
        assert!(r.passes(1e-4), "{r:?}");
    }
}
