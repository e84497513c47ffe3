//! Filter pruning: plans, residual union, physical shrinking and FLOPs.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::filter_3d_norms;
use crate::nn::{Dims, Layer, LayerKind, Network};

/// How a layer's kept filters were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Keep filter `j` iff `norm_j > tau · mean(norms)`.
    MeanRelative { tau: f64 },
    /// Keep filter `j` iff `norm_j > threshold`.
    Absolute { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    /// Index of the conv layer in the network.
    pub layer: usize,
    pub channels: usize,
    pub filters: usize,
    pub keep_filters: Vec<usize>,
    /// Input channels kept, mirroring the producer's kept filters.
    pub keep_channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub rule: ThresholdRule,
    pub layers: Vec<LayerPlan>,
}

/// Where a node's channels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Producer {
    Input,
    Conv(usize),
}

/// Channel producers of every node; empty for flattened nodes.
fn node_producers(net: &Network) -> Vec<BTreeSet<Producer>> {
    let mut nodes = vec![BTreeSet::from([Producer::Input])];
    for (i, l) in net.layers().iter().enumerate() {
        let p = match l {
            Layer::Conv2d(_) => BTreeSet::from([Producer::Conv(i)]),
            Layer::Relu | Layer::MaxPool2 | Layer::SoftmaxCeHead => nodes[i].clone(),
            Layer::ResidualAdd { from } => nodes[i].union(&nodes[*from]).copied().collect(),
            Layer::Flatten | Layer::Dense(_) => BTreeSet::new(),
        };
        nodes.push(p);
    }
    nodes
}

impl PrunePlan {
    fn entry(&self, layer: usize) -> Option<&LayerPlan> {
        self.layers.iter().find(|p| p.layer == layer)
    }

    /// Channels surviving at a node, or `None` when all survive.
    fn node_channels(&self, producers: &BTreeSet<Producer>) -> Option<BTreeSet<usize>> {
        if producers.is_empty() || producers.contains(&Producer::Input) {
            return None;
        }
        let mut set = BTreeSet::new();
        for p in producers {
            if let Producer::Conv(l) = p {
                if let Some(e) = self.entry(*l) {
                    set.extend(e.keep_filters.iter().copied());
                }
            }
        }
        Some(set)
    }

    /// Recomputes every `keep_channels` from the producers' kept filters.
    fn derive_channels(&mut self, net: &Network) {
        let producers = node_producers(net);
        let derived: Vec<Vec<usize>> = self
            .layers
            .iter()
            .map(|p| match self.node_channels(&producers[p.layer]) {
                Some(set) => set.into_iter().collect(),
                None => (0..p.channels).collect(),
            })
            .collect();
        for (p, d) in self.layers.iter_mut().zip(derived) {
            p.keep_channels = d;
        }
    }

    pub fn kept_filters(&self, layer: usize) -> Option<&[usize]> {
        self.entry(layer).map(|e| e.keep_filters.as_slice())
    }

    /// Checks the plan against `net`, including equal operand channel sets
    /// at every residual-add.
    pub fn validate(&self, net: &Network) -> Result<()> {
        let convs = net.conv_indices();
        if convs.len() != self.layers.len() {
            return Err(Error::InvalidPlan(format!(
                "plan covers {} conv layers, network has {}",
                self.layers.len(),
                convs.len()
            )));
        }
        for (p, &l) in self.layers.iter().zip(&convs) {
            let s = net.conv(l).expect("conv index").weight.shape();
            if p.layer != l || p.channels != s.c || p.filters != s.n {
                return Err(Error::InvalidPlan(format!(
                    "entry for layer {} does not match conv layer {l} ({}x{})",
                    p.layer, s.c, s.n
                )));
            }
            for (name, keep, bound) in [
                ("filters", &p.keep_filters, s.n),
                ("channels", &p.keep_channels, s.c),
            ] {
                if keep.is_empty() {
                    return Err(Error::InvalidPlan(format!("layer {l} keeps no {name}")));
                }
                if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= bound) {
                    return Err(Error::InvalidPlan(format!(
                        "layer {l} {name} must be strictly increasing and < {bound}"
                    )));
                }
            }
        }
        let producers = node_producers(net);
        for p in &self.layers {
            let expect: Vec<usize> = match self.node_channels(&producers[p.layer]) {
                Some(set) => set.into_iter().collect(),
                None => (0..p.channels).collect(),
            };
            if expect != p.keep_channels {
                return Err(Error::InvalidPlan(format!(
                    "layer {} keep_channels do not mirror its producer's filters",
                    p.layer
                )));
            }
        }
        for (i, l) in net.layers().iter().enumerate() {
            if let Layer::ResidualAdd { from } = l {
                let a = self.node_channels(&producers[i]);
                let b = self.node_channels(&producers[*from]);
                let all = |s: &Option<BTreeSet<usize>>| s.is_none();
                let equal = match (&a, &b) {
                    (Some(x), Some(y)) => x == y,
                    _ => all(&a) && all(&b) || self.covers_all(&producers[i], &producers[*from]),
                };
                if !equal {
                    return Err(Error::InvalidPlan(format!(
                        "residual-add at layer {i} joins operands with different channel sets"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when every conv producer among `a ∪ b` keeps all its filters.
    fn covers_all(&self, a: &BTreeSet<Producer>, b: &BTreeSet<Producer>) -> bool {
        a.union(b).all(|p| match p {
            Producer::Input => true,
            Producer::Conv(l) => self
                .entry(*l)
                .is_some_and(|e| e.keep_filters.len() == e.filters),
        })
    }

    /// Channel count of each residual-add's two operands after pruning.
    pub fn residual_operand_channels(&self, net: &Network) -> Vec<(usize, usize, usize)> {
        let producers = node_producers(net);
        let full = |ps: &BTreeSet<Producer>, plan: &PrunePlan| -> usize {
            match plan.node_channels(ps) {
                Some(s) => s.len(),
                None => ps
                    .iter()
                    .find_map(|p| match p {
                        Producer::Conv(l) => plan.entry(*l).map(|e| e.filters),
                        Producer::Input => None,
                    })
                    .unwrap_or(0),
            }
        };
        net.layers()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::ResidualAdd { from } => {
                    Some((i, full(&producers[i], self), full(&producers[*from], self)))
                }
                _ => None,
            })
            .collect()
    }
}

fn keep_by_rule(norms: &[f64], rule: ThresholdRule) -> Vec<usize> {
    let cut = match rule {
        ThresholdRule::MeanRelative { tau } => tau * norms.iter().sum::<f64>() / norms.len() as f64,
        ThresholdRule::Absolute { threshold } => threshold,
    };
    let keep: Vec<usize> = (0..norms.len()).filter(|&j| norms[j] > cut).collect();
    if !keep.is_empty() {
        return keep;
    }
    let mut best = 0;
    for (j, &v) in norms.iter().enumerate() {
        if v > norms[best] {
            best = j;
        }
    }
    vec![best]
}

/// Plan keeping filter `j` of each conv layer iff its 3D norm exceeds
/// `tau` times the layer's mean filter norm. A layer that would lose every
/// filter keeps its largest one.
pub fn compute_prune_plan(net: &Network, tau: f64) -> Result<PrunePlan> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "tau must be in [0, 1), got {tau}"
        )));
    }
    plan_with_rule(net, ThresholdRule::MeanRelative { tau })
}

pub fn plan_with_rule(net: &Network, rule: ThresholdRule) -> Result<PrunePlan> {
    let convs = net.conv_indices();
    if convs.is_empty() {
        return Err(Error::InvalidNetwork(
            "network has no conv layers to prune".into(),
        ));
    }
    let layers = convs
        .into_iter()
        .map(|l| {
            let w = &net.conv(l).expect("conv index").weight;
            let s = w.shape();
            LayerPlan {
                layer: l,
                channels: s.c,
                filters: s.n,
                keep_filters: keep_by_rule(&filter_3d_norms(l, w).norms, rule),
                keep_channels: Vec::new(),
            }
        })
        .collect();
    let mut plan = PrunePlan { rule, layers };
    plan.derive_channels(net);
    Ok(plan)
}

/// Makes both operands of every residual-add keep the same filters by
/// replacing the keep sets of all layers feeding a sum with their union.
/// Sums that include the network input keep every channel.
pub fn resnet_union_adjust(plan: &PrunePlan, net: &Network) -> PrunePlan {
    let producers = node_producers(net);
    let mut elems: Vec<Producer> = vec![Producer::Input];
    elems.extend(plan.layers.iter().map(|p| Producer::Conv(p.layer)));
    let id = |p: &Producer| elems.iter().position(|e| e == p);
    let mut parent: Vec<usize> = (0..elems.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, l) in net.layers().iter().enumerate() {
        if let Layer::ResidualAdd { from } = l {
            let members: Vec<usize> = producers[i]
                .union(&producers[*from])
                .filter_map(&id)
                .collect();
            for w in members.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..elems.len()).map(|x| find(&mut parent, x)).collect();
    let mut out = plan.clone();
    for k in 0..out.layers.len() {
        let root = roots[k + 1];
        let keep: Vec<usize> = if roots[0] == root {
            (0..out.layers[k].filters).collect()
        } else {
            let mut set = BTreeSet::new();
            for (m, p) in plan.layers.iter().enumerate() {
                if roots[m + 1] == root {
                    set.extend(p.keep_filters.iter().copied());
                }
            }
            set.into_iter().collect()
        };
        out.layers[k].keep_filters = keep;
    }
    out.derive_channels(net);
    out
}

/// Copy of `net` with every filter the plan removes set to zero.
pub fn mask_filters(net: &Network, plan: &PrunePlan) -> Result<Network> {
    plan.validate(net)?;
    let mut masked = net.clone();
    for p in &plan.layers {
        if let Layer::Conv2d(c) = &mut masked.layers_mut()[p.layer] {
            let n = p.filters;
            let keep: BTreeSet<usize> = p.keep_filters.iter().copied().collect();
            for (i, v) in c.weight.values_mut().iter_mut().enumerate() {
                if !keep.contains(&(i % n)) {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(masked)
}

/// Physically removes pruned filters and the matching input channels of
/// their consumers, including the rows of a dense layer fed through
/// `Flatten`.
pub fn apply_prune(net: &Network, plan: &PrunePlan) -> Result<Network> {
    plan.validate(net)?;
    let producers = node_producers(net);
    let mut layers = net.layers().to_vec();
    for p in &plan.layers {
        if let Layer::Conv2d(c) = &mut layers[p.layer] {
            c.weight = c.weight.select(&p.keep_channels, &p.keep_filters)?;
        }
    }
    for i in 0..layers.len() {
        let Layer::Dense(d) = &layers[i] else {
            continue;
        };
        if i == 0 || !matches!(net.layers()[i - 1], Layer::Flatten) {
            continue;
        }
        let flat_in = &producers[i - 1];
        let Some(kept) = plan.node_channels(flat_in) else {
            continue;
        };
        let original = flat_in
            .iter()
            .find_map(|p| match p {
                Producer::Conv(l) => plan.entry(*l).map(|e| e.filters),
                Producer::Input => None,
            })
            .ok_or_else(|| Error::InvalidPlan("flatten input has no conv producer".into()))?;
        if d.inputs % original != 0 {
            return Err(Error::InvalidPlan(format!(
                "dense layer {i} has {} inputs, not a multiple of {original} channels",
                d.inputs
            )));
        }
        let positions = d.inputs / original;
        let rows: Vec<usize> = (0..positions)
            .flat_map(|pos| kept.iter().map(move |&ch| pos * original + ch))
            .collect();
        layers[i] = Layer::Dense(d.select_inputs(&rows)?);
    }
    Network::new(layers)
}

/// Cost of one parametric layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub kind: LayerKind,
    pub flops: u64,
    pub params: u64,
}

/// Per-layer FLOPs and parameter counts of a network, one
/// multiply-accumulate counted as 2 FLOPs. Pooling and activations are
/// not counted.
pub fn count_flops(net: &Network, input_hw: (usize, usize)) -> Result<Vec<LayerCost>> {
    let c = match net.layers().first() {
        Some(Layer::Conv2d(conv)) => conv.weight.shape().c,
        Some(Layer::Dense(d)) => d.inputs / (input_hw.0 * input_hw.1).max(1),
        _ => {
            return Err(Error::InvalidNetwork(
                "cannot infer input channels: first layer is not parametric".into(),
            ))
        }
    };
    let dims = net.infer_dims(Dims::new(input_hw.0, input_hw.1, c))?;
    let mut out = Vec::new();
    for (i, l) in net.layers().iter().enumerate() {
        match l {
            Layer::Conv2d(conv) => {
                let s = conv.weight.shape();
                let o = dims[i + 1];
                let params = s.len() as u64;
                out.push(LayerCost {
                    layer: i,
                    kind: LayerKind::Conv2d,
                    flops: 2 * params * (o.h * o.w) as u64,
                    params,
                });
            }
            Layer::Dense(d) => out.push(LayerCost {
                layer: i,
                kind: LayerKind::Dense,
                flops: 2 * (d.inputs * d.outputs) as u64,
                params: (d.inputs * d.outputs + d.outputs) as u64,
            }),
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: usize,
    pub kind: LayerKind,
    pub flops_before: u64,
    pub flops_after: u64,
    pub params_before: u64,
    pub params_after: u64,
}

pub const FLOPS_CONVENTION: &str =
    "1 multiply-accumulate = 2 FLOPs; pooling and activations excluded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub convention: String,
    pub input_hw: (usize, usize),
    pub layers: Vec<LayerFlops>,
    pub total_flops_before: u64,
    pub total_flops_after: u64,
    pub total_params_before: u64,
    pub total_params_after: u64,
    /// `100 · (1 − after / before)`.
    pub pruned_flops_pct: f64,
}

impl FlopsReport {
    /// Compares an original network with its pruned counterpart.
    pub fn compare(original: &Network, pruned: &Network, input_hw: (usize, usize)) -> Result<Self> {
        let before = count_flops(original, input_hw)?;
        let after = count_flops(pruned, input_hw)?;
        if before.len() != after.len() || before.iter().zip(&after).any(|(a, b)| a.layer != b.layer)
        {
            return Err(Error::InvalidArgument(
                "pruned network does not have the original's parametric layers".into(),
            ));
        }
        let layers: Vec<LayerFlops> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| LayerFlops {
                layer: b.layer,
                kind: b.kind,
                flops_before: b.flops,
                flops_after: a.flops,
                params_before: b.params,
                params_after: a.params,
            })
            .collect();
        let sum = |f: fn(&LayerFlops) -> u64| layers.iter().map(f).sum::<u64>();
        let total_flops_before = sum(|l| l.flops_before);
        let total_flops_after = sum(|l| l.flops_after);
        let pruned_flops_pct = if total_flops_before == 0 {
            0.0
        } else {
            100.0 * (1.0 - total_flops_after as f64 / total_flops_before as f64)
        };
        Ok(FlopsReport {
            convention: FLOPS_CONVENTION.to_string(),
            input_hw,
            total_params_before: sum(|l| l.params_before),
            total_params_after: sum(|l| l.params_after),
            layers,
            total_flops_before,
            total_flops_after,
            pruned_flops_pct,
        })
    }

    /// One-line summary, e.g. `Pruned FLOPs 66.86%, accuracy 93.31%`.
    pub fn summary(&self, accuracy_pct: f64) -> String {
        format!(
            "Pruned FLOPs {:.2}%, accuracy {:.2}%",
            self.pruned_flops_pct, accuracy_pct
        )
    }

    /// CSV with a `#` convention line, one row per layer and a total row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {}", self.convention).map_err(|e| Error::io("<csv>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "layer",
            "flops_before",
            "flops_after",
            "params_before",
            "params_after",
        ])?;
        for l in &self.layers {
            w.write_record([
                l.layer.to_string(),
                l.flops_before.to_string(),
                l.flops_after.to_string(),
                l.params_before.to_string(),
                l.params_after.to_string(),
            ])?;
        }
        w.write_record([
            "total".to_string(),
            self.total_flops_before.to_string(),
            self.total_flops_after.to_string(),
            self.total_params_before.to_string(),
            self.total_params_after.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}
