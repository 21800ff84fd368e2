//! Spec interpreter, parameter initialization and weight storage.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::formats::{read_wts, write_wts};
use crate::scalar::Scalar;

use super::graph::{Graph, Var};
use super::kernels::ConvGeom;
use super::spec::{Layer, NetKind, NetPair, NetSpec};
use super::tensor::Tensor;

pub type ParamMap<T> = BTreeMap<String, Tensor<T>>;
pub type ParamVars = HashMap<String, Var>;

/// Uniform fan-in initialization: `U(-b, b)` with `b = gain * sqrt(3 / fan_in)`,
/// biases zero.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<ParamMap<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for p in spec.params()? {
        let n: usize = p.shape.iter().product();
        let bound = p.gain.sqrt() * (3.0 / p.fan_in as f64).sqrt();
        let data = if p.gain == 0.0 {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
        };
        out.insert(p.name, Tensor::from_vec(&p.shape, data)?);
    }
    Ok(out)
}

/// Every parameter zero; generators then output exactly zero.
pub fn zero_params(spec: &NetSpec) -> Result<ParamMap<f32>> {
    Ok(spec.params()?.into_iter().map(|p| (p.name, Tensor::zeros(&p.shape))).collect())
}

/// Checks that `params` holds exactly the spec's parameters with matching shapes.
pub fn check_params<T: Scalar>(spec: &NetSpec, params: &ParamMap<T>) -> Result<()> {
    let want = spec.params()?;
    if want.len() != params.len() {
        return dim_err(format!("{} expects {} parameters, got {}", spec.name, want.len(), params.len()));
    }
    for p in want {
        match params.get(&p.name) {
            Some(t) if t.shape == p.shape => {}
            Some(t) => return dim_err(format!("parameter {} has shape {:?}, expected {:?}", p.name, t.shape, p.shape)),
            None => return dim_err(format!("parameter {} is missing", p.name)),
        }
    }
    Ok(())
}

/// Adds parameters to the graph, as leaves when `trainable`.
pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &ParamMap<T>, trainable: bool) -> ParamVars {
    params
        .iter()
        .map(|(k, t)| (k.clone(), if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) }))
        .collect()
}

fn param(vars: &ParamVars, name: &str) -> Result<Var> {
    vars.get(name).copied().ok_or_else(|| Error::Dimension(format!("parameter {name} is not bound")))
}

fn bias_add<T: Scalar>(g: &mut Graph<T>, y: Var, b: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let bb = g.broadcast(b, &shape)?;
    g.add(y, bb)
}

fn conv_layer<T: Scalar>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    name: &str,
    x: Var,
    geom: ConvGeom,
    relu: bool,
) -> Result<Var> {
    let w = param(vars, &format!("{name}.w"))?;
    let b = param(vars, &format!("{name}.b"))?;
    let y = g.conv(x, w, geom)?;
    let y = bias_add(g, y, b)?;
    Ok(if relu { g.relu(y) } else { y })
}

const SAME3: ConvGeom = ConvGeom { stride: [1; 3], pad: [1; 3] };
const SAME2: ConvGeom = ConvGeom { stride: [1; 3], pad: [0, 1, 1] };
const POINT: ConvGeom = ConvGeom { stride: [1; 3], pad: [0; 3] };

/// Runs `spec` on batched `inputs` and returns every layer's output.
pub fn forward<T: Scalar>(g: &mut Graph<T>, spec: &NetSpec, vars: &ParamVars, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.len() != spec.inputs.len() {
        return dim_err(format!("{} takes {} inputs, got {}", spec.name, spec.inputs.len(), inputs.len()));
    }
    let batch = g.shape(inputs[0]).first().copied().unwrap_or(0);
    for (k, (&v, want)) in inputs.iter().zip(&spec.inputs).enumerate() {
        let s = g.shape(v);
        if s.len() != 5 || s[0] != batch || s[1..] != want[..] {
            return dim_err(format!("{} input {k} has shape {:?}, expected [N, {:?}]", spec.name, s, want));
        }
    }
    let mut outs: Vec<Var> = Vec::with_capacity(spec.layers.len());
    for ls in &spec.layers {
        let name = ls.name.as_str();
        let v = match ls.layer {
            Layer::Input { index } => inputs[index],
            Layer::Conv { src, geom, relu, .. } => conv_layer(g, vars, name, outs[src], geom, relu)?,
            Layer::Deconv { src, out, kernel, geom, relu } => {
                let x = outs[src];
                let s = g.shape(x).to_vec();
                let mut sp = [0; 3];
                for a in 0..3 {
                    sp[a] = (s[a + 2] - 1) * geom.stride[a] + kernel[a] - 2 * geom.pad[a];
                }
                let w = param(vars, &format!("{name}.w"))?;
                let b = param(vars, &format!("{name}.b"))?;
                let y = g.conv_data(x, w, geom, sp)?;
                debug_assert_eq!(g.shape(y)[1], out);
                let y = bias_add(g, y, b)?;
                if relu {
                    g.relu(y)
                } else {
                    y
                }
            }
            Layer::ResBlock { src, out, volumetric } => {
                let x = outs[src];
                let geom = if volumetric { SAME3 } else { SAME2 };
                let h = conv_layer(g, vars, &format!("{name}.c1"), x, geom, true)?;
                let h = conv_layer(g, vars, &format!("{name}.c2"), h, geom, false)?;
                let skip = if g.shape(x)[1] != out {
                    conv_layer(g, vars, &format!("{name}.skip"), x, POINT, false)?
                } else {
                    x
                };
                let s = g.add(h, skip)?;
                g.relu(s)
            }
            Layer::MaxPool { src, window } => g.max_pool(outs[src], window)?,
            Layer::TileAdd { volume, plane } => {
                let shape = g.shape(outs[volume]).to_vec();
                let t = g.broadcast(outs[plane], &shape)?;
                g.add(outs[volume], t)?
            }
            Layer::Tile { src, like } => {
                let mut shape = g.shape(outs[src]).to_vec();
                shape[2] = g.shape(outs[like])[2];
                g.broadcast(outs[src], &shape)?
            }
            Layer::DepthToVolume { src } => {
                let s = g.shape(outs[src]).to_vec();
                g.reshape(outs[src], &[s[0], 1, s[1], s[3], s[4]])?
            }
            Layer::Concat { a, b } => g.concat(outs[a], outs[b])?,
            Layer::Linear { src, .. } => {
                let s = g.shape(outs[src]).to_vec();
                let flat = g.reshape(outs[src], &[s[0], s[1..].iter().product(), 1, 1, 1])?;
                conv_layer(g, vars, name, flat, POINT, false)?
            }
            Layer::Relu { src } => g.relu(outs[src]),
        };
        outs.push(v);
    }
    Ok(outs)
}

/// Runs a network and returns only its output.
pub fn run<T: Scalar>(spec: &NetSpec, params: &ParamMap<T>, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
    check_params(spec, params)?;
    let mut g = Graph::new();
    let vars = bind(&mut g, params, false);
    let ins: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let outs = forward(&mut g, spec, &vars, &ins)?;
    Ok(g.value(outs[spec.output]).clone())
}

/// Training metadata stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMeta {
    pub net: NetKind,
    pub scale: f64,
    pub res: usize,
    pub depth: usize,
    pub spec_hash: String,
    pub iterations: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// Generator and discriminator weights of one network pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub pair: NetPair,
    pub generator: ParamMap<f32>,
    pub discriminator: ParamMap<f32>,
    pub meta: WeightMeta,
}

const GEN_PREFIX: &str = "gen/";
const DISC_PREFIX: &str = "disc/";

impl WeightStore {
    /// Freshly initialized weights.
    pub fn init(kind: NetKind, scale: f64, res: usize, depth: usize, seed: u64) -> Result<WeightStore> {
        let pair = NetPair::new(kind, scale, res, depth)?;
        let generator = init_params(&pair.generator, seed)?;
        let discriminator = init_params(&pair.discriminator, seed.wrapping_add(1))?;
        let meta = WeightMeta { net: kind, scale, res, depth, spec_hash: pair.hash(), iterations: 0, epochs: 0, seed };
        Ok(WeightStore { pair, generator, discriminator, meta })
    }

    pub fn validate(&self) -> Result<()> {
        check_params(&self.pair.generator, &self.generator)?;
        check_params(&self.pair.discriminator, &self.discriminator)?;
        if self.meta.spec_hash != self.pair.hash() {
            return Err(Error::Format("weight metadata does not match the network spec".into()));
        }
        Ok(())
    }

    /// WTS1 bytes with `gen/` and `disc/` name prefixes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut all = BTreeMap::new();
        for (k, v) in &self.generator {
            all.insert(format!("{GEN_PREFIX}{k}"), v.clone());
        }
        for (k, v) in &self.discriminator {
            all.insert(format!("{DISC_PREFIX}{k}"), v.clone());
        }
        write_wts(&all)
    }

    pub fn from_parts(bytes: &[u8], meta: WeightMeta) -> Result<WeightStore> {
        let pair = NetPair::new(meta.net, meta.scale, meta.res, meta.depth)?;
        let mut generator = BTreeMap::new();
        let mut discriminator = BTreeMap::new();
        for (k, v) in read_wts(bytes)? {
            if let Some(n) = k.strip_prefix(GEN_PREFIX) {
                generator.insert(n.to_string(), v);
            } else if let Some(n) = k.strip_prefix(DISC_PREFIX) {
                discriminator.insert(n.to_string(), v);
            } else {
                return Err(Error::Format(format!("unexpected weight entry {k:?}")));
            }
        }
        let ws = WeightStore { pair, generator, discriminator, meta };
        ws.validate()?;
        Ok(ws)
    }

    /// Writes `path` (WTS1) and `path.json` (metadata).
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes())?;
        std::fs::write(sidecar(path), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<WeightStore> {
        let meta: WeightMeta = serde_json::from_slice(&std::fs::read(sidecar(path))?)?;
        Self::from_parts(&std::fs::read(path)?, meta)
    }

    /// Generator output for batched inputs.
    pub fn generate(&self, inputs: &[Tensor<f32>]) -> Result<Tensor<f32>> {
        run(&self.pair.generator, &self.generator, inputs)
    }
}

pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
