//! Validated model graphs and per-frame-logit forward execution.

pub mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::atr::slowfast_merge;
use crate::error::{Error, Result};
use crate::format::{self, RawTensor, WEIGHT_MAGIC};
use crate::layer::{ChannelAffine, Conv, Dense, Layer, LayerKind, Pool2d, TemporalDepthwise};
use crate::tensor::{uniform_indices, ClipTensor, Tensor};

pub use manifest::{BranchManifest, InputBounds, InputManifest, Manifest, NodeManifest};
use manifest::*;

/// Reserved input id referring to the clip (or a branch's view of it).
pub const INPUT_ID: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Input,
    Node(usize),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: String,
    pub layer: Layer,
    pub inputs: Vec<Source>,
    pub branch: usize,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub name: String,
    pub frame_stride: usize,
    /// Index of the branch's `PerFrameHead`.
    pub head: usize,
}

#[derive(Debug, Clone)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub low: Vec<f32>,
    pub high: Vec<f32>,
}

/// An immutable, shape-checked DAG of layers in topological order.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub name: String,
    pub num_classes: usize,
    pub expected_frames: usize,
    pub input: InputSpec,
    nodes: Vec<Node>,
    branches: Vec<Branch>,
    shapes: Vec<Vec<usize>>,
}

/// Outputs of every node for one forward pass, plus the input view each
/// branch consumed.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) outputs: Vec<Tensor>,
}

impl ActivationCache {
    pub fn output(&self, node: usize) -> &Tensor {
        &self.outputs[node]
    }

    pub fn branch_input(&self, branch: usize) -> &Tensor {
        &self.inputs[branch]
    }

    pub(crate) fn source(&self, branch: usize, src: Source) -> &Tensor {
        match src {
            Source::Input => &self.inputs[branch],
            Source::Node(i) => &self.outputs[i],
        }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// `[N, K]` per-frame class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLogits(Tensor);

impl FrameLogits {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "frame logits are [N, K], got {:?}",
                t.shape()
            )));
        }
        t.ensure_finite("frame logits")?;
        Ok(Self(t))
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn get(&self, frame: usize, class: usize) -> f32 {
        self.0.data()[frame * self.classes() + class]
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        self.0.row(frame)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// Logits of `class` for every frame.
    pub fn column(&self, class: usize) -> Vec<f32> {
        (0..self.frames()).map(|i| self.get(i, class)).collect()
    }
}

impl ModelGraph {
    /// Loads a manifest and the weight blobs it references.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path).map_err(|e| {
            Error::ManifestParse(format!("cannot read {}: {e}", manifest_path.display()))
        })?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::ManifestParse(format!("{}: {e}", manifest_path.display())))?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, |blob| {
            let path = dir.join(blob);
            if !path.is_file() {
                return Err(Error::MissingWeightBlob { path });
            }
            format::decode_raw(WEIGHT_MAGIC, &format::read_bytes(&path)?, &path)
        })
    }

    /// Builds a graph, resolving blob references through `blobs`.
    pub fn from_manifest(
        manifest: &Manifest,
        mut blobs: impl FnMut(&str) -> Result<RawTensor>,
    ) -> Result<Self> {
        if manifest.num_classes == 0 || manifest.expected_frames == 0 {
            return Err(Error::ManifestParse(
                "num_classes and expected_frames must be positive".into(),
            ));
        }
        let input = input_spec(&manifest.input)?;
        let branch_specs = branch_specs(manifest)?;

        let order = topological_order(&manifest.nodes)?;
        let index_of: HashMap<&str, usize> = order
            .iter()
            .enumerate()
            .map(|(pos, &i)| (manifest.nodes[i].id.as_str(), pos))
            .collect();

        let mut nodes = Vec::with_capacity(order.len());
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(order.len());
        for &mi in &order {
            let spec = &manifest.nodes[mi];
            let branch = match &spec.branch {
                None if branch_specs.len() == 1 => 0,
                None => {
                    return Err(Error::ManifestParse(format!(
                        "node {} must name its branch",
                        spec.id
                    )))
                }
                Some(name) => branch_specs
                    .iter()
                    .position(|b| &b.name == name)
                    .ok_or_else(|| {
                        Error::ManifestParse(format!("node {} names unknown branch {name}", spec.id))
                    })?,
            };
            let layer = build_layer(spec, manifest.num_classes, &mut blobs)?;
            let inputs: Vec<Source> = spec
                .inputs
                .iter()
                .map(|name| {
                    if name == INPUT_ID {
                        Source::Input
                    } else {
                        Source::Node(index_of[name.as_str()])
                    }
                })
                .collect();
            let frames = manifest.expected_frames / branch_specs[branch].frame_stride;
            let input_shape = vec![frames, input.channels, input.height, input.width];
            let mut in_shapes: Vec<&[usize]> = Vec::with_capacity(inputs.len());
            for src in &inputs {
                match *src {
                    Source::Input => in_shapes.push(&input_shape),
                    Source::Node(p) => {
                        let producer: &Node = &nodes[p];
                        if producer.branch != branch {
                            return Err(Error::ManifestParse(format!(
                                "node {} reads {} across branches",
                                spec.id, producer.id
                            )));
                        }
                        if producer.layer.kind() == LayerKind::PerFrameHead {
                            return Err(Error::ManifestParse(format!(
                                "head {} must be terminal",
                                producer.id
                            )));
                        }
                        in_shapes.push(&shapes[p]);
                    }
                }
            }
            let out = layer.output_shape(&in_shapes).map_err(|e| {
                Error::ShapeMismatch(format!("node {}: {e}", spec.id))
            })?;
            shapes.push(out);
            nodes.push(Node {
                id: spec.id.clone(),
                layer,
                inputs,
                branch,
            });
        }

        let mut branches = Vec::with_capacity(branch_specs.len());
        for (b, spec) in branch_specs.iter().enumerate() {
            let heads: Vec<usize> = (0..nodes.len())
                .filter(|&i| nodes[i].branch == b && nodes[i].layer.kind() == LayerKind::PerFrameHead)
                .collect();
            if heads.len() != 1 {
                return Err(Error::ManifestParse(format!(
                    "branch {} needs exactly one PerFrameHead, found {}",
                    spec.name,
                    heads.len()
                )));
            }
            let head = heads[0];
            let frames = manifest.expected_frames / spec.frame_stride;
            if shapes[head] != [frames, manifest.num_classes] {
                return Err(Error::ShapeMismatch(format!(
                    "head {} emits {:?}, expected [{frames}, {}]",
                    nodes[head].id, shapes[head], manifest.num_classes
                )));
            }
            branches.push(Branch {
                name: spec.name.clone(),
                frame_stride: spec.frame_stride,
                head,
            });
        }

        Ok(Self {
            name: manifest.name.clone(),
            num_classes: manifest.num_classes,
            expected_frames: manifest.expected_frames,
            input,
            nodes,
            branches,
            shapes,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn output_shape(&self, node: usize) -> &[usize] {
        &self.shapes[node]
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn is_dual_branch(&self) -> bool {
        self.branches.len() == 2
    }

    /// Frame rate ratio between the slow and fast branch (1 for single-branch
    /// models).
    pub fn slowfast_rate(&self) -> usize {
        self.branches.iter().map(|b| b.frame_stride).max().unwrap_or(1)
    }

    pub fn temporal_layer_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.layer.temporal_kernel().is_some())
            .count()
    }

    /// `1 + max over input-to-head paths of sum((kt - 1) * stride)`, in input
    /// frames. Slow-branch kernels span `frame_stride` input frames per tap.
    pub fn theoretical_temporal_rf(&self) -> usize {
        let mut reach = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let upstream = node
                .inputs
                .iter()
                .map(|s| match *s {
                    Source::Input => 0,
                    Source::Node(p) => reach[p],
                })
                .max()
                .unwrap_or(0);
            let own = node
                .layer
                .temporal_kernel()
                .map_or(0, |k| (k - 1) * self.branches[node.branch].frame_stride);
            reach[i] = upstream + own;
        }
        1 + self.branches.iter().map(|b| reach[b.head]).max().unwrap_or(0)
    }

    pub fn check_clip(&self, clip: &ClipTensor) -> Result<()> {
        let expected = [
            self.expected_frames,
            self.input.channels,
            self.input.height,
            self.input.width,
        ];
        if clip.tensor().shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "clip {} is {:?}, model expects {expected:?}",
                clip.clip_id,
                clip.tensor().shape()
            )));
        }
        Ok(())
    }

    /// Runs every node and returns per-frame logits with the activation
    /// cache. Dual-branch models return the slow logits merged into the fast
    /// frame grid.
    pub fn forward(&self, clip: &ClipTensor) -> Result<(FrameLogits, ActivationCache)> {
        self.check_clip(clip)?;
        clip.tensor().ensure_finite("input clip")?;
        let mut inputs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let frames: Vec<usize> = (0..self.expected_frames).step_by(b.frame_stride).collect();
            inputs.push(if b.frame_stride == 1 {
                clip.tensor().clone()
            } else {
                clip.select_frames(&frames)?.tensor().clone()
            });
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let args: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|s| match *s {
                    Source::Input => &inputs[node.branch],
                    Source::Node(p) => &outputs[p],
                })
                .collect();
            let out = node
                .layer
                .forward(&args)
                .map_err(|e| match e {
                    Error::NonFiniteValue(_) => Error::NonFiniteValue(format!("node {}", node.id)),
                    other => other,
                })?;
            outputs.push(out);
        }
        let cache = ActivationCache { inputs, outputs };
        let logits = self.merged_logits(&cache)?;
        Ok((logits, cache))
    }

    pub fn branch_logits(&self, cache: &ActivationCache, branch: usize) -> Result<FrameLogits> {
        FrameLogits::new(cache.outputs[self.branches[branch].head].clone())
    }

    fn merged_logits(&self, cache: &ActivationCache) -> Result<FrameLogits> {
        match self.branches.as_slice() {
            [only] => FrameLogits::new(cache.outputs[only.head].clone()),
            [a, b] => {
                let (slow, fast) = if a.frame_stride > b.frame_stride { (a, b) } else { (b, a) };
                let merged = slowfast_merge(
                    &cache.outputs[slow.head],
                    &cache.outputs[fast.head],
                    slow.frame_stride,
                )?;
                FrameLogits::new(merged)
            }
            _ => unreachable!("validated at load"),
        }
    }

    /// Softmax of the mean logit row over `frames_used` uniformly spaced
    /// frames.
    pub fn ensemble_prediction(logits: &FrameLogits, frames_used: usize) -> Result<Vec<f64>> {
        let idx = uniform_indices(logits.frames(), frames_used)?;
        let rows: Vec<&[f32]> = idx.iter().map(|&i| logits.row(i)).collect();
        Ok(ensemble_rows(&rows))
    }
}

/// Softmax of the elementwise mean of `rows`, summed in row order.
pub fn ensemble_rows(rows: &[&[f32]]) -> Vec<f64> {
    let k = rows[0].len();
    let mut mean = vec![0.0f64; k];
    for row in rows {
        for (m, &v) in mean.iter_mut().zip(*row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= rows.len() as f64;
    }
    softmax(&mean)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the first one on ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

fn input_spec(m: &InputManifest) -> Result<InputSpec> {
    if m.channels == 0 || m.height == 0 || m.width == 0 {
        return Err(Error::ManifestParse("input dimensions must be positive".into()));
    }
    let (low, high) = match &m.bounds {
        None => (vec![-1.0; m.channels], vec![1.0; m.channels]),
        Some(b) => {
            let expand = |v: &Vec<f32>, what: &str| match v.len() {
                1 => Ok(vec![v[0]; m.channels]),
                n if n == m.channels => Ok(v.clone()),
                n => Err(Error::ManifestParse(format!(
                    "input bounds {what} has {n} entries for {} channels",
                    m.channels
                ))),
            };
            (expand(&b.low, "low")?, expand(&b.high, "high")?)
        }
    };
    if low.iter().zip(&high).any(|(l, h)| !(l < h)) {
        return Err(Error::ManifestParse("input bounds need low < high".into()));
    }
    Ok(InputSpec {
        channels: m.channels,
        height: m.height,
        width: m.width,
        low,
        high,
    })
}

fn branch_specs(m: &Manifest) -> Result<Vec<BranchManifest>> {
    let specs = match &m.branches {
        None => vec![BranchManifest {
            name: "main".into(),
            frame_stride: 1,
        }],
        Some(b) => b.clone(),
    };
    match specs.as_slice() {
        [one] if one.frame_stride == 1 => {}
        [a, b] if a.name != b.name && a.frame_stride.min(b.frame_stride) == 1 && a.frame_stride.max(b.frame_stride) > 1 => {}
        _ => {
            return Err(Error::ManifestParse(
                "expected one stride-1 branch, or a stride-1 fast branch plus a slower branch".into(),
            ))
        }
    }
    for s in &specs {
        if m.expected_frames % s.frame_stride != 0 {
            return Err(Error::ManifestParse(format!(
                "branch {} stride {} does not divide {} frames",
                s.name, s.frame_stride, m.expected_frames
            )));
        }
    }
    Ok(specs)
}

/// Stable Kahn ordering; manifest order is kept wherever dependencies allow.
fn topological_order(nodes: &[NodeManifest]) -> Result<Vec<usize>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if n.id == INPUT_ID {
            return Err(Error::ManifestParse(format!("node id {INPUT_ID:?} is reserved")));
        }
        if index.insert(n.id.as_str(), i).is_some() {
            return Err(Error::ManifestParse(format!("duplicate node id {}", n.id)));
        }
    }
    let mut indegree = vec![0usize; nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for name in &n.inputs {
            if name == INPUT_ID {
                continue;
            }
            let &p = index.get(name.as_str()).ok_or_else(|| {
                Error::ManifestParse(format!("node {} reads unknown node {name}", n.id))
            })?;
            indegree[i] += 1;
            consumers[p].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len()).find(|&i| indegree[i] > 0).unwrap();
        return Err(Error::CyclicGraph(nodes[stuck].id.clone()));
    }
    Ok(order)
}

fn parse_params<T: DeserializeOwned>(spec: &NodeManifest) -> Result<T> {
    let value = match &spec.params {
        serde_json::Value::Null => serde_json::Value::Object(Default::default()),
        v => v.clone(),
    };
    serde_json::from_value(value)
        .map_err(|e| Error::ManifestParse(format!("params of node {}: {e}", spec.id)))
}

struct WeightReader<'a, F> {
    spec: &'a NodeManifest,
    blobs: &'a mut F,
    used: Vec<&'static str>,
}

impl<F: FnMut(&str) -> Result<RawTensor>> WeightReader<'_, F> {
    fn optional(&mut self, name: &'static str, dims: &[usize]) -> Result<Option<Tensor>> {
        self.used.push(name);
        let Some(blob) = self.spec.weights.get(name) else {
            return Ok(None);
        };
        let raw = (self.blobs)(blob)?;
        let mismatch = |detail: String| Error::WeightShapeMismatch {
            node: self.spec.id.clone(),
            weight: name.to_string(),
            detail,
        };
        if raw.dims != dims {
            return Err(mismatch(format!("declared {dims:?}, blob has {:?}", raw.dims)));
        }
        let len: usize = dims.iter().product();
        if raw.payload.len() != len {
            return Err(mismatch(format!(
                "expected {len} values, blob holds {}",
                raw.payload.len()
            )));
        }
        let t = Tensor::new(raw.dims, raw.payload).map_err(|e| mismatch(e.to_string()))?;
        t.ensure_finite(&format!("weight {}.{name}", self.spec.id))?;
        Ok(Some(t))
    }

    fn required(&mut self, name: &'static str, dims: &[usize]) -> Result<Tensor> {
        self.optional(name, dims)?.ok_or_else(|| {
            Error::ManifestParse(format!("node {} lacks weight {name}", self.spec.id))
        })
    }

    fn vector(&mut self, name: &'static str, len: usize) -> Result<Option<Vec<f32>>> {
        Ok(self.optional(name, &[len])?.map(Tensor::into_data))
    }

    fn finish(self) -> Result<()> {
        for name in self.spec.weights.keys() {
            if !self.used.contains(&name.as_str()) {
                return Err(Error::ManifestParse(format!(
                    "node {} has unexpected weight {name}",
                    self.spec.id
                )));
            }
        }
        Ok(())
    }
}

fn build_layer<F: FnMut(&str) -> Result<RawTensor>>(
    spec: &NodeManifest,
    num_classes: usize,
    blobs: &mut F,
) -> Result<Layer> {
    let kind = LayerKind::from_name(&spec.kind)
        .ok_or_else(|| Error::ManifestParse(format!("node {} has unknown kind {}", spec.id, spec.kind)))?;
    if spec.inputs.len() != kind.arity() {
        return Err(Error::ManifestParse(format!(
            "node {} ({kind}) needs {} inputs, has {}",
            spec.id,
            kind.arity(),
            spec.inputs.len()
        )));
    }
    let mut w = WeightReader {
        spec,
        blobs,
        used: Vec::new(),
    };
    let positive = |v: &[usize]| {
        if v.contains(&0) {
            Err(Error::ManifestParse(format!("node {} has a zero-sized parameter", spec.id)))
        } else {
            Ok(())
        }
    };
    let layer = match kind {
        LayerKind::Conv3D => {
            let p: Conv3dParams = parse_params(spec)?;
            positive(&[p.in_channels, p.out_channels, p.kernel[0], p.kernel[1], p.kernel[2]])?;
            let [kt, kh, kw] = p.kernel;
            let stride = p.stride.unwrap_or([1, 1]);
            positive(&stride)?;
            Layer::Conv3d(Conv {
                weight: w.required("weight", &[p.out_channels, p.in_channels, kt, kh, kw])?,
                bias: w.vector("bias", p.out_channels)?,
                padding: p.padding.unwrap_or([kt / 2, kh / 2, kw / 2]),
                stride,
            })
        }
        LayerKind::Conv2DPerFrame => {
            let p: Conv2dParams = parse_params(spec)?;
            positive(&[p.in_channels, p.out_channels, p.kernel[0], p.kernel[1]])?;
            let [kh, kw] = p.kernel;
            let stride = p.stride.unwrap_or([1, 1]);
            positive(&stride)?;
            let weight = w.required("weight", &[p.out_channels, p.in_channels, kh, kw])?;
            let [ph, pw] = p.padding.unwrap_or([kh / 2, kw / 2]);
            Layer::Conv2dPerFrame(Conv {
                weight: weight.reshape(vec![p.out_channels, p.in_channels, 1, kh, kw])?,
                bias: w.vector("bias", p.out_channels)?,
                padding: [0, ph, pw],
                stride,
            })
        }
        LayerKind::TemporalDepthwiseConv => {
            let p: TemporalParams = parse_params(spec)?;
            positive(&[p.channels, p.kernel_t])?;
            Layer::TemporalDepthwise(TemporalDepthwise {
                weight: w.required("weight", &[p.channels, p.kernel_t])?,
                bias: w.vector("bias", p.channels)?,
                padding: p.padding_t.unwrap_or(p.kernel_t / 2),
            })
        }
        LayerKind::Linear => {
            let p: LinearParams = parse_params(spec)?;
            positive(&[p.in_features, p.out_features])?;
            Layer::Linear(Dense {
                weight: w.required("weight", &[p.out_features, p.in_features])?,
                bias: w.vector("bias", p.out_features)?,
            })
        }
        LayerKind::PerFrameHead => {
            let p: HeadParams = parse_params(spec)?;
            positive(&[p.in_features])?;
            Layer::PerFrameHead(Dense {
                weight: w.required("weight", &[num_classes, p.in_features])?,
                bias: w.vector("bias", num_classes)?,
            })
        }
        LayerKind::ReLU => {
            parse_params::<NoParams>(spec)?;
            Layer::Relu
        }
        LayerKind::BatchNorm => {
            let p: BatchNormParams = parse_params(spec)?;
            positive(&[p.channels])?;
            let c = p.channels;
            let gamma = w.vector("gamma", c)?.unwrap_or_else(|| vec![1.0; c]);
            let beta = w.vector("beta", c)?.unwrap_or_else(|| vec![0.0; c]);
            let mean = w.vector("running_mean", c)?.unwrap_or_else(|| vec![0.0; c]);
            let var = w.vector("running_var", c)?.unwrap_or_else(|| vec![1.0; c]);
            let eps = p.eps.unwrap_or(1e-5);
            if var.iter().any(|&v| v as f64 + eps as f64 <= 0.0) {
                return Err(Error::ManifestParse(format!(
                    "node {} has a non-positive variance",
                    spec.id
                )));
            }
            Layer::BatchNorm(ChannelAffine::from_batch_norm(&gamma, &beta, &mean, &var, eps))
        }
        LayerKind::SpatialMaxPool | LayerKind::SpatialAvgPool => {
            let p: PoolParams = parse_params(spec)?;
            positive(&p.kernel)?;
            let pool = Pool2d {
                kernel: p.kernel,
                stride: p.stride.unwrap_or(p.kernel),
            };
            positive(&pool.stride)?;
            if kind == LayerKind::SpatialMaxPool {
                Layer::SpatialMaxPool(pool)
            } else {
                Layer::SpatialAvgPool(pool)
            }
        }
        LayerKind::GlobalSpatialAvgPool => {
            parse_params::<NoParams>(spec)?;
            Layer::GlobalSpatialAvgPool
        }
        LayerKind::ResidualAdd => {
            parse_params::<NoParams>(spec)?;
            Layer::ResidualAdd
        }
    };
    w.finish()?;
    Ok(layer)
}

/// Weight blobs keyed by file name, for building graphs without touching
/// the filesystem.
pub fn memory_blobs(blobs: &BTreeMap<String, Tensor>) -> impl FnMut(&str) -> Result<RawTensor> + '_ {
    move |name| {
        let t = blobs.get(name).ok_or_else(|| Error::MissingWeightBlob { path: name.into() })?;
        Ok(RawTensor {
            dims: t.shape().to_vec(),
            payload: t.data().to_vec(),
        })
    }
}
