//! Layer definitions, shape checking and the recording forward pass.
//!
//! Conv layers are addressed by a 1-based index that counts conv layers only,
//! so "layer 3" is the third convolution regardless of the relu/pool layers
//! between them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub mod conv;
pub mod train;

pub use conv::{conv2d, conv2d_adjoint, conv_out_extent, ConvGeom};
pub use train::{accuracy, loss_and_gradients, train, Checkpoint, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Squash {
    Softmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    weights: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
}

impl ConvLayer {
    /// `weights` is `[out_c, in_c, kh, kw]`, `bias` is `[out_c]`.
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, pad: usize) -> Result<Self> {
        if weights.shape().len() != 4 {
            return Err(Error::InvalidNetwork(format!(
                "conv weights must be rank 4, got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::ShapeMismatch {
                expected: vec![weights.shape()[0]],
                found: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidNetwork("conv stride must be >= 1".into()));
        }
        Ok(Self {
            weights,
            bias,
            stride,
            pad,
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn pad(&self) -> usize {
        self.pad
    }
    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }
    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }
    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    pub(crate) fn geom(&self, in_shape: [usize; 3]) -> Option<ConvGeom> {
        let (kh, kw) = self.kernel();
        ConvGeom::new(in_shape, self.out_channels(), kh, kw, self.stride, self.pad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
}

impl DenseLayer {
    /// `weights` is `[out, in]`, `bias` is `[out]`.
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::InvalidNetwork(format!(
                "dense weights must be rank 2, got {:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::ShapeMismatch {
                expected: vec![weights.shape()[0]],
                found: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }
    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv(ConvLayer),
    Relu,
    MaxPool { window: usize, stride: usize },
    Flatten,
    Dense(DenseLayer),
    Output { classes: usize, squash: Squash },
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv(_) => LayerKind::Conv,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::MaxPool { .. } => LayerKind::MaxPool,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::Dense(_) => LayerKind::Dense,
            LayerSpec::Output { .. } => LayerKind::Output,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            LayerSpec::Conv(c) => vec![&c.weights, &c.bias],
            LayerSpec::Dense(d) => vec![&d.weights, &d.bias],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerSpec::Conv(c) => vec![&mut c.weights, &mut c.bias],
            LayerSpec::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Parameter-free description of this layer.
    pub fn plan(&self) -> LayerPlan {
        match self {
            LayerSpec::Conv(c) => LayerPlan::Conv {
                out_channels: c.out_channels(),
                kernel: c.kernel(),
                stride: c.stride,
                pad: c.pad,
            },
            LayerSpec::Relu => LayerPlan::Relu,
            LayerSpec::MaxPool { window, stride } => LayerPlan::MaxPool {
                window: *window,
                stride: *stride,
            },
            LayerSpec::Flatten => LayerPlan::Flatten,
            LayerSpec::Dense(d) => LayerPlan::Dense {
                out_features: d.out_features(),
            },
            LayerSpec::Output { classes, .. } => LayerPlan::Output { classes: *classes },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool,
    Flatten,
    Dense,
    Output,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::Relu => 1,
            LayerKind::MaxPool => 2,
            LayerKind::Flatten => 3,
            LayerKind::Dense => 4,
            LayerKind::Output => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => LayerKind::Conv,
            1 => LayerKind::Relu,
            2 => LayerKind::MaxPool,
            3 => LayerKind::Flatten,
            4 => LayerKind::Dense,
            5 => LayerKind::Output,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::Output => "output",
        }
    }

    /// Shapes of the parameter tensors a layer of this kind carries.
    pub fn param_count(self) -> usize {
        match self {
            LayerKind::Conv | LayerKind::Dense => 2,
            _ => 0,
        }
    }
}

/// Layer topology without parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerPlan {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
    Output {
        classes: usize,
    },
}

impl LayerPlan {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerPlan::Conv { .. } => LayerKind::Conv,
            LayerPlan::Relu => LayerKind::Relu,
            LayerPlan::MaxPool { .. } => LayerKind::MaxPool,
            LayerPlan::Flatten => LayerKind::Flatten,
            LayerPlan::Dense { .. } => LayerKind::Dense,
            LayerPlan::Output { .. } => LayerKind::Output,
        }
    }
}

/// Conv layer with `out` channels, square `k x k` kernel, stride 1 and
/// "same" padding.
pub fn conv_same(out: usize, k: usize) -> LayerPlan {
    LayerPlan::Conv {
        out_channels: out,
        kernel: (k, k),
        stride: 1,
        pad: k / 2,
    }
}

pub const REFERENCE_INPUT: [usize; 3] = [3, 32, 32];

/// Desk-scale reference classifier: seven 3x3 conv layers in blocks of
/// 2/3/2 with 2x2 max-pooling after each block, dense(128), dense(2),
/// softmax.
pub fn reference_architecture() -> Vec<LayerPlan> {
    let pool = LayerPlan::MaxPool { window: 2, stride: 2 };
    vec![
        conv_same(16, 3),
        LayerPlan::Relu,
        conv_same(16, 3),
        LayerPlan::Relu,
        pool,
        conv_same(32, 3),
        LayerPlan::Relu,
        conv_same(32, 3),
        LayerPlan::Relu,
        conv_same(32, 3),
        LayerPlan::Relu,
        pool,
        conv_same(64, 3),
        LayerPlan::Relu,
        conv_same(64, 3),
        LayerPlan::Relu,
        pool,
        LayerPlan::Flatten,
        LayerPlan::Dense { out_features: 128 },
        LayerPlan::Relu,
        LayerPlan::Dense { out_features: 2 },
        LayerPlan::Output { classes: 2 },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    /// Output shape of every layer.
    shapes: Vec<Vec<usize>>,
    /// Position in `layers` of each conv layer (index 0 = conv layer 1).
    conv_positions: Vec<usize>,
    /// Ordinal of each max-pool among max-pools, by layer position.
    pool_ordinals: Vec<Option<usize>>,
}

impl NetworkSpec {
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidShape(input_shape.to_vec()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut conv_positions = Vec::new();
        let mut pool_ordinals = Vec::with_capacity(layers.len());
        let mut pools = 0;
        let mut shape = input_shape.to_vec();
        for (pos, layer) in layers.iter().enumerate() {
            let bad = |msg: &str| Error::InvalidNetwork(format!("layer {pos} ({}): {msg}", layer.kind().name()));
            pool_ordinals.push(None);
            shape = match layer {
                LayerSpec::Conv(c) => {
                    let s3 = as_chw(&shape).ok_or_else(|| bad("expects a [C, H, W] input"))?;
                    if c.in_channels() != s3[0] {
                        return Err(bad(&format!(
                            "weights read {} channels but input has {}",
                            c.in_channels(),
                            s3[0]
                        )));
                    }
                    let g = c.geom(s3).ok_or_else(|| bad("kernel larger than padded input"))?;
                    conv_positions.push(pos);
                    vec![g.out_c, g.out_h, g.out_w]
                }
                LayerSpec::Relu => shape,
                LayerSpec::MaxPool { window, stride } => {
                    let s3 = as_chw(&shape).ok_or_else(|| bad("expects a [C, H, W] input"))?;
                    if *window < 2 || *stride == 0 {
                        return Err(bad("window must be >= 2 and stride >= 1"));
                    }
                    let h = conv_out_extent(s3[1], *window, *stride, 0).ok_or_else(|| bad("window larger than input"))?;
                    let w = conv_out_extent(s3[2], *window, *stride, 0).ok_or_else(|| bad("window larger than input"))?;
                    pool_ordinals[pos] = Some(pools);
                    pools += 1;
                    vec![s3[0], h, w]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense(d) => {
                    if shape.len() != 1 || shape[0] != d.in_features() {
                        return Err(bad(&format!(
                            "expects a flat input of {} features, got {:?}",
                            d.in_features(),
                            shape
                        )));
                    }
                    vec![d.out_features()]
                }
                LayerSpec::Output { classes, .. } => {
                    if pos + 1 != layers.len() {
                        return Err(bad("output layer must be last"));
                    }
                    if *classes < 2 || shape.len() != 1 || shape[0] != *classes {
                        return Err(bad(&format!("expects {classes} logits, got {shape:?}")));
                    }
                    shape
                }
            };
            shapes.push(shape.clone());
        }
        if !matches!(layers.last(), Some(LayerSpec::Output { .. })) {
            return Err(Error::InvalidNetwork("network must end with exactly one output layer".into()));
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            conv_positions,
            pool_ordinals,
        })
    }

    /// Builds a network from a topology with He-normal weights and zero
    /// biases.
    pub fn init(input_shape: [usize; 3], plans: &[LayerPlan], rng: &mut Rng) -> Result<Self> {
        let mut params = Vec::new();
        let mut shape = input_shape.to_vec();
        for plan in plans {
            match *plan {
                LayerPlan::Conv {
                    out_channels,
                    kernel: (kh, kw),
                    stride,
                    pad,
                } => {
                    let in_c = *shape.first().unwrap_or(&0);
                    let fan_in = in_c * kh * kw;
                    params.push(he_normal(rng, vec![out_channels, in_c, kh, kw], fan_in)?);
                    params.push(Tensor::zeros(vec![out_channels])?);
                    if shape.len() == 3 {
                        let g = ConvGeom::new([shape[0], shape[1], shape[2]], out_channels, kh, kw, stride, pad)
                            .ok_or_else(|| Error::InvalidNetwork("conv kernel larger than padded input".into()))?;
                        shape = vec![out_channels, g.out_h, g.out_w];
                    }
                }
                LayerPlan::MaxPool { window, stride } if shape.len() == 3 => {
                    let h = conv_out_extent(shape[1], window, stride, 0).unwrap_or(0);
                    let w = conv_out_extent(shape[2], window, stride, 0).unwrap_or(0);
                    shape = vec![shape[0], h, w];
                }
                LayerPlan::Flatten => shape = vec![shape.iter().product()],
                LayerPlan::Dense { out_features } => {
                    let fan_in = shape.iter().product();
                    params.push(he_normal(rng, vec![out_features, fan_in], fan_in)?);
                    params.push(Tensor::zeros(vec![out_features])?);
                    shape = vec![out_features];
                }
                _ => {}
            }
        }
        Self::from_plans(input_shape, plans, params)
    }

    /// Assembles a network from a topology plus its parameter tensors in
    /// layer order (weights then bias for each conv/dense layer).
    pub fn from_plans(input_shape: [usize; 3], plans: &[LayerPlan], params: Vec<Tensor>) -> Result<Self> {
        let expected: usize = plans.iter().map(|p| p.kind().param_count()).sum();
        if params.len() != expected {
            return Err(Error::InvalidNetwork(format!(
                "topology needs {expected} parameter tensors, got {}",
                params.len()
            )));
        }
        let mut params = params.into_iter();
        let mut layers = Vec::with_capacity(plans.len());
        for (pos, plan) in plans.iter().enumerate() {
            let layer = match *plan {
                LayerPlan::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    let w = params.next().expect("counted");
                    let b = params.next().expect("counted");
                    let c = ConvLayer::new(w, b, stride, pad)?;
                    if c.out_channels() != out_channels || c.kernel() != kernel {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {pos}: conv weights {:?} disagree with declared {out_channels} channels, kernel {kernel:?}",
                            c.weights.shape()
                        )));
                    }
                    LayerSpec::Conv(c)
                }
                LayerPlan::Relu => LayerSpec::Relu,
                LayerPlan::MaxPool { window, stride } => LayerSpec::MaxPool { window, stride },
                LayerPlan::Flatten => LayerSpec::Flatten,
                LayerPlan::Dense { out_features } => {
                    let w = params.next().expect("counted");
                    let b = params.next().expect("counted");
                    let d = DenseLayer::new(w, b)?;
                    if d.out_features() != out_features {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {pos}: dense weights {:?} disagree with declared {out_features} outputs",
                            d.weights.shape()
                        )));
                    }
                    LayerSpec::Dense(d)
                }
                LayerPlan::Output { classes } => LayerSpec::Output {
                    classes,
                    squash: Squash::Softmax,
                },
            };
            layers.push(layer);
        }
        Self::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn plans(&self) -> Vec<LayerPlan> {
        self.layers.iter().map(LayerSpec::plan).collect()
    }

    /// Every parameter tensor in layer order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Output shape of the layer at `pos`.
    pub fn layer_output_shape(&self, pos: usize) -> &[usize] {
        &self.shapes[pos]
    }

    pub fn layer_input_shape(&self, pos: usize) -> &[usize] {
        if pos == 0 {
            &self.input_shape
        } else {
            &self.shapes[pos - 1]
        }
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn conv_layer_count(&self) -> usize {
        self.conv_positions.len()
    }

    /// Conv layer `l` (1-based).
    pub fn conv_layer(&self, l: usize) -> Option<&ConvLayer> {
        let pos = *self.conv_positions.get(l.checked_sub(1)?)?;
        match &self.layers[pos] {
            LayerSpec::Conv(c) => Some(c),
            _ => None,
        }
    }

    /// Position in the layer list of conv layer `l` (1-based).
    pub fn conv_position(&self, l: usize) -> Option<usize> {
        self.conv_positions.get(l.checked_sub(1)?).copied()
    }

    /// Shape `[C, H, W]` of conv layer `l`'s recorded activation.
    pub fn conv_output_shape(&self, l: usize) -> Option<[usize; 3]> {
        let s = &self.shapes[self.conv_position(l)?];
        Some([s[0], s[1], s[2]])
    }

    /// The next layer that reads conv layer `l`'s channels, when it is a conv
    /// layer directly downstream (only relu in between).
    pub fn next_conv_reader(&self, l: usize) -> Option<&ConvLayer> {
        let pos = self.conv_position(l)?;
        for layer in &self.layers[pos + 1..] {
            match layer {
                LayerSpec::Relu => continue,
                LayerSpec::Conv(c) => return Some(c),
                _ => return None,
            }
        }
        None
    }

    pub(crate) fn pool_ordinal(&self, pos: usize) -> Option<usize> {
        self.pool_ordinals[pos]
    }

    pub fn pool_count(&self) -> usize {
        self.pool_ordinals.iter().flatten().count()
    }

    pub fn forward(&self, image: &Tensor, record: bool) -> Result<ActivationTrace> {
        forward(self, image, record)
    }
}

fn he_normal(rng: &mut Rng, shape: Vec<usize>, fan_in: usize) -> Result<Tensor> {
    let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
    crate::tensor::gaussian_sample(rng, 0.0, std, shape)
}

fn as_chw(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

/// Max-pool argmax locations for one pooling layer and one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolSwitches {
    /// Position of the pooling layer in the network.
    pub layer: usize,
    pub pre_shape: [usize; 3],
    pub pooled_shape: [usize; 3],
    /// Flat index into the pre-pool tensor, one per pooled cell.
    pub indices: Vec<u32>,
}

/// Everything one forward pass records about one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub sample_id: usize,
    /// Post-nonlinearity activation of each conv layer (index 0 = conv layer
    /// 1). Empty when recording was off.
    pub conv_activations: Vec<Tensor>,
    /// One entry per max-pool layer, in network order. Empty when recording
    /// was off.
    pub switches: Vec<PoolSwitches>,
    /// Class probabilities.
    pub output: Tensor,
    /// Pre-softmax scores.
    pub logits: Tensor,
}

impl ActivationTrace {
    pub fn predicted_class(&self) -> usize {
        argmax(self.output.data())
    }

    pub fn probability(&self, class: usize) -> f32 {
        self.output.data()[class]
    }

    /// Probability mass on every class except `class`, from the logits in
    /// `f64`. Stays resolvable when `probability(class)` rounds to 1.
    pub fn complement_probability(&self, class: usize) -> f64 {
        let z = self.logits.data();
        let zt = z[class] as f64;
        let others: f64 = z
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != class)
            .map(|(_, &v)| libm::exp(v as f64 - zt))
            .sum();
        others / (1.0 + others)
    }

    pub fn is_recorded(&self) -> bool {
        !self.conv_activations.is_empty()
    }

    /// Activation map of conv layer `l` (1-based), as `[C, H, W]`.
    pub fn conv_activation(&self, l: usize) -> Option<&Tensor> {
        self.conv_activations.get(l.checked_sub(1)?)
    }
}

/// Index of the first maximum.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn maxpool(input: &[f32], shape: [usize; 3], window: usize, stride: usize) -> (Vec<f32>, Vec<u32>, [usize; 3]) {
    let [c, h, w] = shape;
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut sw = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..window {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for idx in row..row + window {
                        // strict: first cell in row-major order wins ties
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input[best]);
                sw.push(best as u32);
            }
        }
    }
    (out, sw, [c, oh, ow])
}

pub(crate) fn dense_forward(d: &DenseLayer, x: &[f32]) -> Vec<f32> {
    let n_in = d.in_features();
    d.weights
        .data()
        .chunks_exact(n_in)
        .zip(d.bias.data())
        .map(|(row, &b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b)
        .collect()
}

/// Softmax evaluated in `f64` with the max subtracted.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z as f64 - m)).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total) as f32).collect()
}

fn relu_in_place(xs: &mut [f32]) {
    for v in xs {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn forward(net: &NetworkSpec, image: &Tensor, record: bool) -> Result<ActivationTrace> {
    if image.shape() != net.input_shape {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape.to_vec(),
            found: image.shape().to_vec(),
        });
    }
    let mut x: Vec<f32> = image.data().to_vec();
    let mut conv_activations = Vec::new();
    let mut switches = Vec::new();
    let mut output = None;
    let mut logits = None;
    let layers = &net.layers;
    for (pos, layer) in layers.iter().enumerate() {
        let in_shape = net.layer_input_shape(pos);
        match layer {
            LayerSpec::Conv(c) => {
                let g = c.geom([in_shape[0], in_shape[1], in_shape[2]]).expect("validated at build");
                x = conv2d(&x, c.weights.data(), Some(c.bias.data()), &g);
            }
            LayerSpec::Relu => relu_in_place(&mut x),
            LayerSpec::MaxPool { window, stride } => {
                let pre = [in_shape[0], in_shape[1], in_shape[2]];
                let (pooled, sw, pooled_shape) = maxpool(&x, pre, *window, *stride);
                if record {
                    switches.push(PoolSwitches {
                        layer: pos,
                        pre_shape: pre,
                        pooled_shape,
                        indices: sw,
                    });
                }
                x = pooled;
            }
            LayerSpec::Flatten => {}
            LayerSpec::Dense(d) => x = dense_forward(d, &x),
            LayerSpec::Output { .. } => {
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("logits"));
                }
                output = Some(Tensor::from_parts(vec![x.len()], softmax(&x), "output probabilities")?);
                logits = Some(Tensor::from_parts(vec![x.len()], x.clone(), "logits")?);
                continue;
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer activation"));
        }
        if record && records_conv_activation(layers, pos) {
            conv_activations.push(Tensor::from_parts(net.shapes[pos].clone(), x.clone(), "conv activation")?);
        }
    }
    Ok(ActivationTrace {
        sample_id: 0,
        conv_activations,
        switches,
        output: output.expect("validated: output layer is last"),
        logits: logits.expect("validated: output layer is last"),
    })
}

/// True when the output of layer `pos` is a conv layer's post-nonlinearity
/// activation: a relu right after a conv, or a conv not followed by relu.
fn records_conv_activation(layers: &[LayerSpec], pos: usize) -> bool {
    match layers[pos] {
        LayerSpec::Relu => pos > 0 && matches!(layers[pos - 1], LayerSpec::Conv(_)),
        LayerSpec::Conv(_) => !matches!(layers.get(pos + 1), Some(LayerSpec::Relu)),
        _ => false,
    }
}

/// Forward pass over a batch without threading. `sample_id` is the index in
/// `images`.
pub fn forward_batch_serial(net: &NetworkSpec, images: &[Tensor]) -> Result<Vec<ActivationTrace>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut t = net.forward(img, true).map_err(|e| e.at_sample(i))?;
            t.sample_id = i;
            Ok(t)
        })
        .collect()
}

/// Recording forward pass over a batch. With the `parallel` feature samples
/// fan out across threads; results are identical to
/// [`forward_batch_serial`].
pub fn forward_batch(net: &NetworkSpec, images: &[Tensor]) -> Result<Vec<ActivationTrace>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        images
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let mut t = net.forward(img, true).map_err(|e| e.at_sample(i))?;
                t.sample_id = i;
                Ok(t)
            })
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        forward_batch_serial(net, images)
    }
}
