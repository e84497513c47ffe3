use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Dense};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Shape4, WeightTensor};

/// A convolution layer. Conv layers carry no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: WeightTensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Stride 1 with "same" zero padding.
    pub fn same(weight: WeightTensor) -> Self {
        let padding = (weight.shape().kh - 1) / 2;
        Conv2d {
            weight,
            stride: 1,
            padding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv2d,
    Dense,
    Relu,
    MaxPool2,
    Flatten,
    ResidualAdd,
    SoftmaxCeHead,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::Flatten => "flatten",
            LayerKind::ResidualAdd => "residual-add",
            LayerKind::SoftmaxCeHead => "softmax-ce-head",
        }
    }
}

/// One step of a network.
///
/// Activations are numbered as nodes: node 0 is the network input and node
/// `i + 1` is the output of layer `i`. Every layer reads node `i`;
/// `ResidualAdd` additionally reads the earlier node `from`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    MaxPool2,
    Flatten,
    ResidualAdd {
        from: usize,
    },
    /// Marks the logits; the loss is applied by the trainer.
    SoftmaxCeHead,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2 => LayerKind::MaxPool2,
            Layer::Flatten => LayerKind::Flatten,
            Layer::ResidualAdd { .. } => LayerKind::ResidualAdd,
            Layer::SoftmaxCeHead => LayerKind::SoftmaxCeHead,
        }
    }
}

/// Spatial and channel dims of one activation node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Dims { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter gradient of one layer, laid out like the layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer parameter gradients; `None` for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => Some(ParamGrad {
                    weight: vec![0.0; c.weight.values().len()],
                    bias: Vec::new(),
                }),
                Layer::Dense(d) => Some(ParamGrad {
                    weight: vec![0.0; d.weight.len()],
                    bias: vec![0.0; d.bias.len()],
                }),
                _ => None,
            })
            .collect();
        Gradients { layers }
    }

    /// Adds `k · w` to the weight gradient of layer `layer`.
    pub fn add_to_weight(&mut self, layer: usize, w: &[f64], k: f64) {
        if let Some(g) = self.layers[layer].as_mut() {
            for (a, b) in g.weight.iter_mut().zip(w) {
                *a += k * b;
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (i, g) in self.layers.iter().enumerate() {
            if let Some(g) = g {
                if g.weight.iter().chain(&g.bias).any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient { layer: i });
                }
            }
        }
        Ok(())
    }
}

/// A feed-forward CNN with optional residual connections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

fn in_layer(i: usize, kind: LayerKind, e: Error) -> Error {
    match e {
        Error::Shape { layer, detail } => Error::Shape {
            layer: format!("layer {i} ({}, {layer})", kind.name()),
            detail,
        },
        other => other,
    }
}

impl Network {
    /// Validates the layer graph. Shape compatibility is checked against a
    /// concrete input by [`Network::infer_dims`].
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let heads = layers
            .iter()
            .filter(|l| matches!(l, Layer::SoftmaxCeHead))
            .count();
        if heads != 1 || !matches!(layers.last(), Some(Layer::SoftmaxCeHead)) {
            return Err(Error::InvalidNetwork(
                "exactly one softmax-ce-head is required, as the last layer".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if let Layer::ResidualAdd { from } = *l {
                if from >= i {
                    return Err(Error::InvalidNetwork(format!(
                        "residual-add at layer {i} references node {from}, which is not earlier than its input node {i}"
                    )));
                }
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Indices of the convolution layers, in order.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv2d(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn conv(&self, layer: usize) -> Option<&Conv2d> {
        match self.layers.get(layer) {
            Some(Layer::Conv2d(c)) => Some(c),
            _ => None,
        }
    }

    /// Convolution weights, in layer order.
    pub fn conv_weights(&self) -> Vec<&WeightTensor> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv2d(c) => Some(&c.weight),
                _ => None,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.weight.values().len(),
                Layer::Dense(d) => d.weight.len() + d.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Dims of every node for an input of the given dims.
    pub fn infer_dims(&self, input: Dims) -> Result<Vec<Dims>> {
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        dims.push(input);
        for (i, l) in self.layers.iter().enumerate() {
            let d = dims[i];
            let err = |detail: String| in_layer(i, l.kind(), Error::shape(l.kind().name(), detail));
            let next = match l {
                Layer::Conv2d(c) => {
                    let s = c.weight.shape();
                    if d.c != s.c {
                        return Err(err(format!(
                            "input has {} channels, kernel expects {}",
                            d.c, s.c
                        )));
                    }
                    let oh = layers::conv_out_dim(d.h, s.kh, c.stride, c.padding);
                    let ow = layers::conv_out_dim(d.w, s.kw, c.stride, c.padding);
                    match (oh, ow) {
                        (Some(h), Some(w)) => Dims::new(h, w, s.n),
                        _ => return Err(err(format!("{}x{} input too small", d.h, d.w))),
                    }
                }
                Layer::Dense(dl) => {
                    if d.len() != dl.inputs {
                        return Err(err(format!(
                            "input has {} features, layer expects {}",
                            d.len(),
                            dl.inputs
                        )));
                    }
                    Dims::new(1, 1, dl.outputs)
                }
                Layer::Relu | Layer::SoftmaxCeHead => d,
                Layer::MaxPool2 => {
                    if d.h < 2 || d.w < 2 {
                        return Err(err(format!("{}x{} input too small", d.h, d.w)));
                    }
                    Dims::new(d.h / 2, d.w / 2, d.c)
                }
                Layer::Flatten => Dims::new(1, 1, d.len()),
                Layer::ResidualAdd { from } => {
                    if dims[*from] != d {
                        let o = dims[*from];
                        return Err(err(format!(
                            "operands {}x{}x{} (node {i}) and {}x{}x{} (node {from}) differ",
                            d.h, d.w, d.c, o.h, o.w, o.c
                        )));
                    }
                    d
                }
            };
            dims.push(next);
        }
        Ok(dims)
    }

    /// Runs the network and keeps every node's activation.
    pub fn forward_trace(&self, input: &FeatureMap) -> Result<Vec<FeatureMap>> {
        let mut nodes: Vec<FeatureMap> = Vec::with_capacity(self.layers.len() + 1);
        nodes.push(input.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let x = &nodes[i];
            let y = match l {
                Layer::Conv2d(c) => layers::conv2d_forward(x, &c.weight, c.stride, c.padding),
                Layer::Dense(d) => layers::dense_forward(x, d),
                Layer::Relu => Ok(layers::relu_forward(x)),
                Layer::MaxPool2 => layers::maxpool2_forward(x),
                Layer::Flatten => Ok(layers::flatten_forward(x)),
                Layer::ResidualAdd { from } => layers::residual_add_forward(x, &nodes[*from]),
                Layer::SoftmaxCeHead => Ok(x.clone()),
            }
            .map_err(|e| in_layer(i, l.kind(), e))?;
            nodes.push(y);
        }
        Ok(nodes)
    }

    /// Class scores, one row per sample.
    pub fn logits(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let mut nodes = self.forward_trace(input)?;
        Ok(nodes.pop().expect("network has at least the head"))
    }

    pub fn predict(&self, input: &FeatureMap) -> Result<Vec<usize>> {
        let logits = self.logits(input)?;
        Ok((0..logits.batch)
            .map(|b| argmax(logits.sample(b)))
            .collect())
    }

    /// Mean cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_gradients(
        &self,
        input: &FeatureMap,
        labels: &[usize],
    ) -> Result<(f64, Gradients)> {
        let nodes = self.forward_trace(input)?;
        let n = self.layers.len();
        let (loss, head_grad) = layers::softmax_cross_entropy(&nodes[n], labels)?;
        let mut node_grads: Vec<Option<FeatureMap>> = vec![None; n + 1];
        node_grads[n - 1] = Some(head_grad);
        let mut grads = Gradients::zeros_like(self);

        fn accumulate(slot: &mut Option<FeatureMap>, g: FeatureMap) {
            match slot {
                Some(acc) => {
                    for (a, b) in acc.values.iter_mut().zip(&g.values) {
                        *a += b;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for i in (0..n - 1).rev() {
            let Some(g) = node_grads[i + 1].take() else {
                continue;
            };
            let l = &self.layers[i];
            let x = &nodes[i];
            let wrap = |e| in_layer(i, l.kind(), e);
            match l {
                Layer::Conv2d(c) => {
                    let (gi, gw) = layers::conv2d_backward(&g, x, &c.weight, c.stride, c.padding)
                        .map_err(wrap)?;
                    grads.layers[i] = Some(ParamGrad {
                        weight: gw.into_values(),
                        bias: Vec::new(),
                    });
                    accumulate(&mut node_grads[i], gi);
                }
                Layer::Dense(d) => {
                    let (gi, gw, gb) = layers::dense_backward(&g, x, d).map_err(wrap)?;
                    grads.layers[i] = Some(ParamGrad {
                        weight: gw,
                        bias: gb,
                    });
                    accumulate(&mut node_grads[i], gi);
                }
                Layer::Relu => {
                    let gi = layers::relu_backward(&g, x).map_err(wrap)?;
                    accumulate(&mut node_grads[i], gi);
                }
                Layer::MaxPool2 => {
                    let gi = layers::maxpool2_backward(&g, x).map_err(wrap)?;
                    accumulate(&mut node_grads[i], gi);
                }
                Layer::Flatten => {
                    let gi = layers::flatten_backward(&g, x).map_err(wrap)?;
                    accumulate(&mut node_grads[i], gi);
                }
                Layer::ResidualAdd { from } => {
                    let (ga, gb) = layers::residual_add_backward(&g);
                    accumulate(&mut node_grads[i], ga);
                    accumulate(&mut node_grads[*from], gb);
                }
                Layer::SoftmaxCeHead => unreachable!("head is the last layer"),
            }
        }
        Ok((loss, grads))
    }

    /// Applies `w ← w − lr·g` to every parameter in place.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape(
                "sgd",
                format!(
                    "{} gradient slots for {} layers",
                    grads.layers.len(),
                    self.layers.len()
                ),
            ));
        }
        grads.check_finite()?;
        for (i, (l, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            let (w, b): (&mut [f64], &mut [f64]) = match l {
                Layer::Conv2d(c) => (c.weight.values_mut(), &mut []),
                Layer::Dense(d) => (&mut d.weight, &mut d.bias),
                _ => continue,
            };
            let Some(g) = g else {
                return Err(Error::shape(format!("layer {i}"), "missing gradient"));
            };
            if g.weight.len() != w.len() || g.bias.len() != b.len() {
                return Err(Error::shape(
                    format!("layer {i}"),
                    "gradient shape mismatch",
                ));
            }
            for (wv, gv) in w.iter_mut().zip(&g.weight) {
                *wv -= lr * gv;
            }
            for (bv, gv) in b.iter_mut().zip(&g.bias) {
                *bv -= lr * gv;
            }
        }
        Ok(())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One plain SGD step, `w ← w − lr·g`.
pub fn sgd_step(net: &Network, grads: &Gradients, lr: f64) -> Result<Network> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    let mut next = net.clone();
    next.apply_gradients(grads, lr)?;
    Ok(next)
}

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) -> Result<()> {
        grads.check_finite()?;
        if self.momentum == 0.0 {
            return net.apply_gradients(grads, lr);
        }
        let v = match self.velocity.as_mut() {
            Some(v) if v.layers.len() == grads.layers.len() => {
                for (vl, gl) in v.layers.iter_mut().zip(&grads.layers) {
                    if let (Some(vl), Some(gl)) = (vl.as_mut(), gl) {
                        for (a, b) in vl.weight.iter_mut().zip(&gl.weight) {
                            *a = self.momentum * *a + b;
                        }
                        for (a, b) in vl.bias.iter_mut().zip(&gl.bias) {
                            *a = self.momentum * *a + b;
                        }
                    }
                }
                v
            }
            _ => self.velocity.insert(grads.clone()),
        };
        net.apply_gradients(v, lr)
    }

    /// Drops the velocity, e.g. after the parameter shapes change.
    pub fn reset(&mut self) {
        self.velocity = None;
    }
}

/// Uniform Glorot initialisation, `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, len: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
}

/// Incrementally assembles a network while tracking activation dims.
pub struct NetworkBuilder {
    layers: Vec<Layer>,
    dims: Vec<Dims>,
    rng: ChaCha8Rng,
}

impl NetworkBuilder {
    pub fn new(input: Dims, seed: u64) -> Self {
        NetworkBuilder {
            layers: Vec::new(),
            dims: vec![input],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Index of the node the next layer will read.
    pub fn node(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Dims {
        *self.dims.last().unwrap()
    }

    fn push(&mut self, layer: Layer, out: Dims) -> &mut Self {
        self.layers.push(layer);
        self.dims.push(out);
        self
    }

    /// `k×k` convolution, stride 1, same padding.
    pub fn conv(&mut self, k: usize, filters: usize) -> Result<&mut Self> {
        let d = self.dims();
        let shape = Shape4::new(k, k, d.c, filters)?;
        let values = glorot(&mut self.rng, shape.len(), k * k * d.c, k * k * filters);
        let conv = Conv2d::same(WeightTensor::from_vec(shape, values)?);
        let h = layers::conv_out_dim(d.h, k, 1, conv.padding).unwrap_or(0);
        let w = layers::conv_out_dim(d.w, k, 1, conv.padding).unwrap_or(0);
        Ok(self.push(Layer::Conv2d(conv), Dims::new(h, w, filters)))
    }

    pub fn relu(&mut self) -> &mut Self {
        let d = self.dims();
        self.push(Layer::Relu, d)
    }

    pub fn maxpool(&mut self) -> &mut Self {
        let d = self.dims();
        self.push(Layer::MaxPool2, Dims::new(d.h / 2, d.w / 2, d.c))
    }

    pub fn flatten(&mut self) -> &mut Self {
        let d = self.dims();
        self.push(Layer::Flatten, Dims::new(1, 1, d.len()))
    }

    pub fn dense(&mut self, outputs: usize) -> Result<&mut Self> {
        let inputs = self.dims().len();
        let weight = glorot(&mut self.rng, inputs * outputs, inputs, outputs);
        let d = Dense::new(inputs, outputs, weight, vec![0.0; outputs])?;
        Ok(self.push(Layer::Dense(d), Dims::new(1, 1, outputs)))
    }

    pub fn residual_add(&mut self, from: usize) -> &mut Self {
        let d = self.dims();
        self.push(Layer::ResidualAdd { from }, d)
    }

    pub fn finish(mut self) -> Result<Network> {
        self.layers.push(Layer::SoftmaxCeHead);
        let net = Network::new(self.layers)?;
        net.infer_dims(self.dims[0])?;
        Ok(net)
    }
}
