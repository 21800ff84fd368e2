//! Declarative network descriptions and shape propagation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};

use super::kernels::ConvGeom;

/// One node of a network graph. `src`-style fields index earlier layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Layer {
    /// Network input `k`.
    Input { index: usize },
    /// Convolution plus bias.
    Conv { src: usize, out: usize, kernel: [usize; 3], geom: ConvGeom, relu: bool },
    /// Transposed convolution plus bias.
    Deconv { src: usize, out: usize, kernel: [usize; 3], geom: ConvGeom, relu: bool },
    /// Two 3-wide convs with a skip (1x1 projection when widths differ),
    /// then ReLU.
    ResBlock { src: usize, out: usize, volumetric: bool },
    MaxPool { src: usize, window: [usize; 3] },
    /// Repeats a `D = 1` feature map along depth to match `volume` and adds.
    TileAdd { volume: usize, plane: usize },
    /// Repeats a `D = 1` feature map along depth to match `like`.
    Tile { src: usize, like: usize },
    /// `[N, D, 1, H, W]` to `[N, 1, D, H, W]`.
    DepthToVolume { src: usize },
    Concat { a: usize, b: usize },
    /// Flatten plus dense layer.
    Linear { src: usize, out: usize },
    Relu { src: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub layer: Layer,
}

/// Input and layer list of a network. Input shapes exclude the batch axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub name: String,
    pub scale: f64,
    pub inputs: Vec<[usize; 4]>,
    pub layers: Vec<LayerSpec>,
    pub output: usize,
    /// Feature layers exposed to the content and style losses.
    pub features: Vec<usize>,
}

/// Which generator/discriminator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    S2o,
    O2v,
    V2v,
}

impl NetKind {
    pub fn parse(s: &str) -> Result<NetKind> {
        match s {
            "s2o" => Ok(NetKind::S2o),
            "o2v" => Ok(NetKind::O2v),
            "v2v" => Ok(NetKind::V2v),
            _ => Err(Error::Invalid(format!("unknown network {s:?}; expected s2o, o2v or v2v"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NetKind::S2o => "s2o",
            NetKind::O2v => "o2v",
            NetKind::V2v => "v2v",
        }
    }
}

/// Channel width `base * scale`, at least 4.
pub fn width(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(4)
}

const fn g2(stride: usize, pad: usize) -> ConvGeom {
    ConvGeom { stride: [1, stride, stride], pad: [0, pad, pad] }
}

const fn g3(stride: usize, pad: usize) -> ConvGeom {
    ConvGeom { stride: [stride; 3], pad: [pad; 3] }
}

const K2_3: [usize; 3] = [1, 3, 3];
const K2_4: [usize; 3] = [1, 4, 4];
const K3_3: [usize; 3] = [3, 3, 3];
const K3_4: [usize; 3] = [4, 4, 4];

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new(n_inputs: usize) -> Builder {
        let layers = (0..n_inputs)
            .map(|i| LayerSpec { name: format!("in{i}"), layer: Layer::Input { index: i } })
            .collect();
        Builder { layers }
    }

    fn add(&mut self, name: impl Into<String>, layer: Layer) -> usize {
        self.layers.push(LayerSpec { name: name.into(), layer });
        self.layers.len() - 1
    }

    fn conv(&mut self, name: &str, src: usize, out: usize, kernel: [usize; 3], geom: ConvGeom, relu: bool) -> usize {
        self.add(name, Layer::Conv { src, out, kernel, geom, relu })
    }

    fn down2(&mut self, name: &str, src: usize, out: usize) -> usize {
        self.conv(name, src, out, K2_4, g2(2, 1), true)
    }

    fn up2(&mut self, name: &str, src: usize, out: usize) -> usize {
        self.add(name, Layer::Deconv { src, out, kernel: K2_4, geom: g2(2, 1), relu: true })
    }

    fn down3(&mut self, name: &str, src: usize, out: usize) -> usize {
        self.conv(name, src, out, K3_4, g3(2, 1), true)
    }

    fn up3(&mut self, name: &str, src: usize, out: usize) -> usize {
        self.add(name, Layer::Deconv { src, out, kernel: K3_4, geom: g3(2, 1), relu: true })
    }

    fn rb(&mut self, name: &str, src: usize, out: usize, volumetric: bool) -> usize {
        self.add(name, Layer::ResBlock { src, out, volumetric })
    }

    fn pool(&mut self, name: &str, src: usize) -> usize {
        self.add(name, Layer::MaxPool { src, window: [1, 2, 2] })
    }

    fn finish(self, name: &str, scale: f64, inputs: Vec<[usize; 4]>, features: Vec<usize>) -> NetSpec {
        let output = self.layers.len() - 1;
        NetSpec { name: name.into(), scale, inputs, layers: self.layers, output, features }
    }
}

fn check_res(h: usize, w: usize, d: usize, div: usize) -> Result<()> {
    if h == 0 || w == 0 || h % div != 0 || w % div != 0 || d % div.min(4) != 0 {
        return Err(Error::Invalid(format!("resolution {h}x{w}x{d} must be divisible by {div}")));
    }
    Ok(())
}

/// Sketch-to-orientation generator: three stride-2 convs, eight residual
/// blocks, three transposed convs and a linear 2-channel head.
/// Input `[3, 1, H, W]` (sketch xy, mask); output `[2, 1, H, W]`.
pub fn s2o_generator(scale: f64, h: usize, w: usize) -> Result<NetSpec> {
    check_res(h, w, 4, 8)?;
    let mut b = Builder::new(1);
    let mut x = b.down2("down1", 0, width(32, scale));
    x = b.down2("down2", x, width(64, scale));
    x = b.down2("down3", x, width(128, scale));
    for i in 0..8 {
        x = b.rb(&format!("res{}", i + 1), x, width(128, scale), false);
    }
    x = b.up2("up1", x, width(64, scale));
    x = b.up2("up2", x, width(32, scale));
    x = b.up2("up3", x, width(16, scale));
    b.conv("head", x, 2, K2_3, g2(1, 1), false);
    Ok(b.finish("s2o_generator", scale, vec![[3, 1, h, w]], vec![]))
}

/// Conditional critic over `(image, condition)` pairs: four stride-2 convs
/// and a linear layer. Feature layer 0 is the concatenated input, layers
/// 1 to 4 the conv activations.
pub fn s2o_discriminator(scale: f64, h: usize, w: usize) -> Result<NetSpec> {
    check_res(h, w, 4, 16)?;
    let mut b = Builder::new(2);
    let cat = b.add("cat", Layer::Concat { a: 0, b: 1 });
    let mut feats = vec![cat];
    let mut x = cat;
    for (i, base) in [32, 64, 128, 256].into_iter().enumerate() {
        x = b.down2(&format!("conv{}", i + 1), x, width(base, scale));
        feats.push(x);
    }
    b.add("linear", Layer::Linear { src: x, out: 1 });
    Ok(b.finish("s2o_discriminator", scale, vec![[2, 1, h, w], [3, 1, h, w]], feats))
}

// 2D encoder shared by the field generators: residual blocks of width
// 16/32/64 separated by two max pools.
fn encoder_2d(b: &mut Builder, src: usize, scale: f64) -> [usize; 3] {
    let e0 = b.rb("enc0", src, width(16, scale), false);
    let p0 = b.pool("pool0", e0);
    let e1 = b.rb("enc1", p0, width(32, scale), false);
    let p1 = b.pool("pool1", e1);
    let e2 = b.rb("enc2", p1, width(64, scale), false);
    [e0, e1, e2]
}

/// Orientation-to-volume generator. Input `[3, 1, H, W]` (dense xy, depth);
/// output `[3, D, H, W]`.
///
/// Three axis decoders each emit `D` channels that are read as a depth
/// stack and concatenated into the coarse field; a 3D U-Net refines it,
/// adding the tiled encoder features at matching resolutions.
pub fn o2v_generator(scale: f64, h: usize, w: usize, d: usize) -> Result<NetSpec> {
    check_res(h, w, d, 4)?;
    let mut b = Builder::new(1);
    let [e0, e1, e2] = encoder_2d(&mut b, 0, scale);
    let mut axes = Vec::new();
    for axis in ["x", "y", "z"] {
        let r = b.rb(&format!("dec_{axis}.res"), e2, width(64, scale), false);
        let u = b.up2(&format!("dec_{axis}.up1"), r, width(128, scale));
        let u = b.up2(&format!("dec_{axis}.up2"), u, width(128, scale));
        let o = b.conv(&format!("dec_{axis}.out"), u, d, K2_3, g2(1, 1), false);
        axes.push(b.add(format!("dec_{axis}.vol"), Layer::DepthToVolume { src: o }));
    }
    let xy = b.add("stack_xy", Layer::Concat { a: axes[0], b: axes[1] });
    let coarse = b.add("stack", Layer::Concat { a: xy, b: axes[2] });
    unet_3d(&mut b, coarse, [e0, e1, e2], scale, false);
    Ok(b.finish("o2v_generator", scale, vec![[3, 1, h, w]], vec![]))
}

/// View-update generator. Inputs: rotated field `[3, D, H, W]` and
/// `[3, 1, H, W]` (dense xy, depth in the new view); output `[3, D, H, W]`.
pub fn v2v_generator(scale: f64, h: usize, w: usize, d: usize) -> Result<NetSpec> {
    check_res(h, w, d, 4)?;
    let mut b = Builder::new(2);
    let enc = encoder_2d(&mut b, 1, scale);
    unet_3d(&mut b, 0, enc, scale, true);
    Ok(b.finish("v2v_generator", scale, vec![[3, d, h, w], [3, 1, h, w]], vec![]))
}

// Two-level 3D U-Net of widths 16/32/64 with tile-and-add fusion of the 2D
// encoder features. `residual` inserts 3D residual blocks at every level.
fn unet_3d(b: &mut Builder, src: usize, enc: [usize; 3], scale: f64, residual: bool) -> usize {
    let (c16, c32, c64) = (width(16, scale), width(32, scale), width(64, scale));
    let v0 = b.conv("vol0", src, c16, K3_3, g3(1, 1), true);
    let mut f0 = b.add("fuse0", Layer::TileAdd { volume: v0, plane: enc[0] });
    if residual {
        f0 = b.rb("vres0", f0, c16, true);
    }
    let v1 = b.down3("vdown1", f0, c32);
    let mut f1 = b.add("fuse1", Layer::TileAdd { volume: v1, plane: enc[1] });
    if residual {
        f1 = b.rb("vres1", f1, c32, true);
    }
    let v2 = b.down3("vdown2", f1, c64);
    let mut f2 = b.add("fuse2", Layer::TileAdd { volume: v2, plane: enc[2] });
    if residual {
        f2 = b.rb("vres2a", f2, c64, true);
        f2 = b.rb("vres2b", f2, c64, true);
    }
    let u1 = b.up3("vup1", f2, c32);
    let s1 = b.add("skip1", Layer::Concat { a: u1, b: f1 });
    let mut m1 = b.conv("vmerge1", s1, c32, K3_3, g3(1, 1), true);
    if residual {
        m1 = b.rb("vres3", m1, c32, true);
    }
    let u2 = b.up3("vup2", m1, c16);
    let s2 = b.add("skip2", Layer::Concat { a: u2, b: f0 });
    let mut m2 = b.conv("vmerge2", s2, c16, K3_3, g3(1, 1), true);
    if residual {
        m2 = b.rb("vres4", m2, c16, true);
    }
    b.conv("head", m2, 3, K3_3, g3(1, 1), false)
}

/// Volumetric critic: field plus optional extra volume condition plus a
/// tiled 2D condition, four stride-2 3D convs and a linear layer.
pub fn field_discriminator(scale: f64, h: usize, w: usize, d: usize, volume_cond: usize) -> Result<NetSpec> {
    check_res(h, w, d, 16)?;
    let mut inputs = vec![[3, d, h, w]];
    if volume_cond > 0 {
        inputs.push([volume_cond, d, h, w]);
    }
    let plane = inputs.len();
    inputs.push([3, 1, h, w]);
    let mut b = Builder::new(inputs.len());
    let tiled = b.add("tile_cond", Layer::Tile { src: plane, like: 0 });
    let mut cat = 0;
    if volume_cond > 0 {
        cat = b.add("cat_vol", Layer::Concat { a: 0, b: 1 });
    }
    let cat = b.add("cat", Layer::Concat { a: cat, b: tiled });
    let mut feats = vec![cat];
    let mut x = cat;
    for (i, base) in [16, 32, 64, 128].into_iter().enumerate() {
        x = b.down3(&format!("conv{}", i + 1), x, width(base, scale));
        feats.push(x);
    }
    b.add("linear", Layer::Linear { src: x, out: 1 });
    Ok(b.finish("field_discriminator", scale, inputs, feats))
}

/// Generator and discriminator specs of a network pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetPair {
    pub kind: NetKind,
    pub generator: NetSpec,
    pub discriminator: NetSpec,
}

impl NetPair {
    /// Specs at channel scale `scale` for images of `res x res` and volumes
    /// `res x res x depth`.
    pub fn new(kind: NetKind, scale: f64, res: usize, depth: usize) -> Result<NetPair> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Invalid(format!("scale must be positive, got {scale}")));
        }
        let (generator, discriminator) = match kind {
            NetKind::S2o => (s2o_generator(scale, res, res)?, s2o_discriminator(scale, res, res)?),
            NetKind::O2v => (o2v_generator(scale, res, res, depth)?, field_discriminator(scale, res, res, depth, 0)?),
            NetKind::V2v => (v2v_generator(scale, res, res, depth)?, field_discriminator(scale, res, res, depth, 3)?),
        };
        Ok(NetPair { kind, generator, discriminator })
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A named parameter and its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    /// Inputs feeding one output value, for initialization.
    pub fan_in: usize,
    /// Init gain: larger ahead of a ReLU, smaller on residual branches.
    pub gain: f64,
}

impl NetSpec {
    /// Output shape (without batch) of every layer. Fails if the graph is
    /// not topologically ordered or shapes do not chain.
    pub fn layer_shapes(&self) -> Result<Vec<[usize; 4]>> {
        Ok(self.walk()?.0)
    }

    pub fn params(&self) -> Result<Vec<ParamShape>> {
        Ok(self.walk()?.1)
    }

    pub fn output_shape(&self) -> Result<[usize; 4]> {
        Ok(self.layer_shapes()?[self.output])
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    fn walk(&self) -> Result<(Vec<[usize; 4]>, Vec<ParamShape>)> {
        let mut shapes: Vec<[usize; 4]> = Vec::with_capacity(self.layers.len());
        let mut params = Vec::new();
        for (i, spec) in self.layers.iter().enumerate() {
            let get = |j: usize| -> Result<[usize; 4]> {
                if j >= i {
                    return dim_err(format!("layer {} reads layer {j}, which is not earlier", spec.name));
                }
                Ok(shapes[j])
            };
            let name = &spec.name;
            let shape = match spec.layer {
                Layer::Input { index } => *self
                    .inputs
                    .get(index)
                    .ok_or_else(|| Error::Dimension(format!("input {index} is not declared")))?,
                Layer::Conv { src, out, kernel, geom, relu } => {
                    let s = get(src)?;
                    let o = geom.out_len([s[1], s[2], s[3]], kernel)?;
                    push_conv(&mut params, name, [out, s[0]], kernel, s[0] * kvol(kernel), if relu { 2.0 } else { 1.0 });
                    [out, o[0], o[1], o[2]]
                }
                Layer::Deconv { src, out, kernel, geom, relu } => {
                    let s = get(src)?;
                    let mut o = [0; 3];
                    for a in 0..3 {
                        let full = (s[a + 1] - 1) * geom.stride[a] + kernel[a];
                        if full < 2 * geom.pad[a] {
                            return dim_err(format!("layer {name}: padding exceeds output"));
                        }
                        o[a] = full - 2 * geom.pad[a];
                    }
                    let taps = s[0] * kvol(kernel) / geom.stride.iter().product::<usize>();
                    push_conv(&mut params, name, [s[0], out], kernel, taps.max(1), if relu { 2.0 } else { 1.0 });
                    // Bias is per output channel.
                    params.last_mut().unwrap().shape = vec![1, out, 1, 1, 1];
                    [out, o[0], o[1], o[2]]
                }
                Layer::ResBlock { src, out, volumetric } => {
                    let s = get(src)?;
                    let k = if volumetric { K3_3 } else { K2_3 };
                    push_conv(&mut params, &format!("{name}.c1"), [out, s[0]], k, s[0] * kvol(k), 2.0);
                    push_conv(&mut params, &format!("{name}.c2"), [out, out], k, out * kvol(k), 0.1);
                    if s[0] != out {
                        push_conv(&mut params, &format!("{name}.skip"), [out, s[0]], [1, 1, 1], s[0], 1.0);
                    }
                    [out, s[1], s[2], s[3]]
                }
                Layer::MaxPool { src, window } => {
                    let s = get(src)?;
                    if (0..3).any(|a| window[a] == 0 || s[a + 1] % window[a] != 0) {
                        return dim_err(format!("layer {name}: pool window does not divide {s:?}"));
                    }
                    [s[0], s[1] / window[0], s[2] / window[1], s[3] / window[2]]
                }
                Layer::TileAdd { volume, plane } => {
                    let (v, p) = (get(volume)?, get(plane)?);
                    if p[1] != 1 || p[0] != v[0] || p[2..] != v[2..] {
                        return dim_err(format!("layer {name}: cannot tile {p:?} onto {v:?}"));
                    }
                    v
                }
                Layer::Tile { src, like } => {
                    let (p, v) = (get(src)?, get(like)?);
                    if p[1] != 1 || p[2..] != v[2..] {
                        return dim_err(format!("layer {name}: cannot tile {p:?} like {v:?}"));
                    }
                    [p[0], v[1], p[2], p[3]]
                }
                Layer::DepthToVolume { src } => {
                    let s = get(src)?;
                    if s[1] != 1 {
                        return dim_err(format!("layer {name}: expected a 2D feature map"));
                    }
                    [1, s[0], s[2], s[3]]
                }
                Layer::Concat { a, b } => {
                    let (x, y) = (get(a)?, get(b)?);
                    if x[1..] != y[1..] {
                        return dim_err(format!("layer {name}: cannot concatenate {x:?} and {y:?}"));
                    }
                    [x[0] + y[0], x[1], x[2], x[3]]
                }
                Layer::Linear { src, out } => {
                    let s = get(src)?;
                    let n: usize = s.iter().product();
                    push_conv(&mut params, name, [out, n], [1, 1, 1], n, 1.0);
                    [out, 1, 1, 1]
                }
                Layer::Relu { src } => get(src)?,
            };
            shapes.push(shape);
        }
        if self.output >= shapes.len() || self.features.iter().any(|&f| f >= shapes.len()) {
            return dim_err("output or feature layer out of range");
        }
        Ok((shapes, params))
    }
}

fn kvol(k: [usize; 3]) -> usize {
    k.iter().product()
}

fn push_conv(params: &mut Vec<ParamShape>, name: &str, io: [usize; 2], k: [usize; 3], fan_in: usize, gain: f64) {
    params.push(ParamShape {
        name: format!("{name}.w"),
        shape: vec![io[0], io[1], k[0], k[1], k[2]],
        fan_in,
        gain,
    });
    params.push(ParamShape { name: format!("{name}.b"), shape: vec![1, io[0], 1, 1, 1], fan_in, gain: 0.0 });
}
