//! Layer-wise relevance propagation over a [`ModelGraph`].
//!
//! A backward pass seeds the head unit `(i, k)` with the logit `l_ik`,
//! propagates relevance node by node in reverse topological order, and sums
//! the relevance that reaches the input over channels and pixels of every
//! frame. The contrastive variant repeats the pass with the class-`k` head
//! weights negated and keeps `max(0, R - R_bar)`.
//!
//! Biases never enter a denominator; relevance a bias would have absorbed
//! is simply not redistributed.

pub mod rules;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atr::RelevanceMatrix;
use crate::error::{Error, Result};
use crate::graph::{ActivationCache, ModelGraph, Source};
use crate::layer::{Conv, Dense, Layer, Pool2d, TemporalDepthwise};
use crate::tensor::{ClipTensor, Tensor};

pub use rules::{PropagationRuleSet, Rule};

/// Stabilizer of the proportional residual split.
pub const RESIDUAL_STABILIZER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lrp,
    Clrp,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lrp" => Ok(Mode::Lrp),
            "clrp" => Ok(Mode::Clrp),
            other => Err(format!("unknown mode {other:?} (expected lrp or clrp)")),
        }
    }
}

/// Seed of the negated-head pass in contrastive propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastSeed {
    /// Seed with `l_ik`, the regular contrastive pass.
    Logit,
    /// Seed with zero, which reduces the contrast to `max(0, R)`.
    Zero,
}

/// Frame-summed relevance of every input frame for one target frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRow {
    pub per_frame: Vec<f64>,
    pub target_frame: usize,
    pub target_class: usize,
    pub mode: Mode,
}

/// Redistributes `relevance` (shaped like the layer output) onto each of the
/// layer's inputs.
///
/// `ZBeta` without explicit bounds uses `[-1, 1]` for every channel.
pub fn apply_rule(
    rule: &Rule,
    layer: &Layer,
    inputs: &[&Tensor],
    output: &Tensor,
    relevance: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if relevance.len() != output.len() {
        return Err(Error::ShapeMismatch(format!(
            "relevance has {} entries for an output of {}",
            relevance.len(),
            output.len()
        )));
    }
    let unsupported = || Error::UnsupportedRuleForLayer {
        rule: rule.name().to_string(),
        kind: layer.kind().to_string(),
    };
    let x = inputs[0];
    let result = match (rule, layer) {
        (Rule::Identity, Layer::Relu | Layer::BatchNorm(_)) => vec![relevance.to_vec()],
        (Rule::WinnerTakeAll, Layer::SpatialMaxPool(pool)) => vec![max_pool(pool, x, relevance, None)],
        (Rule::Epsilon { epsilon }, Layer::SpatialMaxPool(pool)) => {
            vec![max_pool(pool, x, relevance, Some(*epsilon))]
        }
        (Rule::ProportionalSplit, Layer::ResidualAdd) => split_sum(inputs, relevance, None),
        (Rule::Epsilon { epsilon }, Layer::ResidualAdd) => split_sum(inputs, relevance, Some(*epsilon)),
        (Rule::ZPlus | Rule::Epsilon { .. } | Rule::ZBeta { .. }, _) => {
            let view = LinearView::of(layer, x.shape(), output.shape()).ok_or_else(unsupported)?;
            if matches!(layer, Layer::BatchNorm(_)) && matches!(rule, Rule::ZBeta { .. }) {
                return Err(unsupported());
            }
            vec![linear_rule(rule, &view, x, relevance)?]
        }
        _ => return Err(unsupported()),
    };
    for r in &result {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("{} relevance", layer.kind())));
        }
    }
    Ok(result)
}

/// The connection structure of a layer that computes weighted sums.
enum LinearView<'a> {
    Conv {
        conv: &'a Conv,
        input: [usize; 4],
        output: [usize; 4],
    },
    Temporal {
        layer: &'a TemporalDepthwise,
        input: [usize; 4],
        output: [usize; 4],
    },
    Dense {
        dense: &'a Dense,
    },
    AvgPool {
        pool: Pool2d,
        input: [usize; 4],
        output: [usize; 4],
    },
    GlobalAvg {
        plane: usize,
    },
    Diagonal {
        scale: &'a [f32],
        channels: usize,
        inner: usize,
    },
}

impl<'a> LinearView<'a> {
    fn of(layer: &'a Layer, input: &[usize], output: &[usize]) -> Option<Self> {
        let four = |s: &[usize]| [s[0], s[1], s[2], s[3]];
        Some(match layer {
            Layer::Conv3d(conv) | Layer::Conv2dPerFrame(conv) => LinearView::Conv {
                conv,
                input: four(input),
                output: four(output),
            },
            Layer::TemporalDepthwise(layer) => LinearView::Temporal {
                layer,
                input: four(input),
                output: four(output),
            },
            Layer::Linear(dense) | Layer::PerFrameHead(dense) => LinearView::Dense { dense },
            Layer::SpatialAvgPool(pool) => LinearView::AvgPool {
                pool: *pool,
                input: four(input),
                output: four(output),
            },
            Layer::GlobalSpatialAvgPool => LinearView::GlobalAvg {
                plane: input[2] * input[3],
            },
            Layer::BatchNorm(bn) => LinearView::Diagonal {
                scale: &bn.scale,
                channels: input[1],
                inner: input[2..].iter().product(),
            },
            _ => return None,
        })
    }

    /// Calls `f(input_index, weight)` for every input feeding output `out`.
    #[inline]
    fn for_each_input(&self, out: usize, mut f: impl FnMut(usize, f64)) {
        match *self {
            LinearView::Conv { conv, input, output } => {
                let [n, cin, h, w] = input;
                let [_, cout, ho, wo] = output;
                let [kt, kh, kw] = conv.kernel();
                let [pt, ph, pw] = conv.padding;
                let [sh, sw] = conv.stride;
                let ow = out % wo;
                let oh = (out / wo) % ho;
                let co = (out / (wo * ho)) % cout;
                let t = out / (wo * ho * cout);
                let wt = conv.weight.data();
                let (dt0, dt1) = crate::layer::valid_taps(t, 1, pt, kt, n);
                let (dh0, dh1) = crate::layer::valid_taps(oh, sh, ph, kh, h);
                let (dw0, dw1) = crate::layer::valid_taps(ow, sw, pw, kw, w);
                for dt in dt0..dt1 {
                    let it = t + dt - pt;
                    for ci in 0..cin {
                        for dh in dh0..dh1 {
                            let ih = oh * sh + dh - ph;
                            for dw in dw0..dw1 {
                                let iw = ow * sw + dw - pw;
                                let wi = (((co * cin + ci) * kt + dt) * kh + dh) * kw + dw;
                                f(((it * cin + ci) * h + ih) * w + iw, wt[wi] as f64);
                            }
                        }
                    }
                }
            }
            LinearView::Temporal { layer, input, output } => {
                let n = input[0];
                let [_, c, h, w] = output;
                let plane = h * w;
                let kt = layer.kernel_t();
                let p = out % plane;
                let ch = (out / plane) % c;
                let t = out / (plane * c);
                let (dt0, dt1) = crate::layer::valid_taps(t, 1, layer.padding, kt, n);
                for dt in dt0..dt1 {
                    let it = t + dt - layer.padding;
                    f((it * c + ch) * plane + p, layer.weight.data()[ch * kt + dt] as f64);
                }
            }
            LinearView::Dense { dense } => {
                let din = dense.in_features();
                let dout = dense.out_features();
                let (t, o) = (out / dout, out % dout);
                for (d, &wv) in dense.weight.row(o).iter().enumerate() {
                    f(t * din + d, wv as f64);
                }
            }
            LinearView::AvgPool { pool, input, output } => {
                let [_, _, h, w] = input;
                let [_, _, ho, wo] = output;
                let ow = out % wo;
                let oh = (out / wo) % ho;
                let nc = out / (wo * ho);
                let weight = 1.0 / (pool.kernel[0] * pool.kernel[1]) as f64;
                for dh in 0..pool.kernel[0] {
                    for dw in 0..pool.kernel[1] {
                        let ih = oh * pool.stride[0] + dh;
                        let iw = ow * pool.stride[1] + dw;
                        f((nc * h + ih) * w + iw, weight);
                    }
                }
            }
            LinearView::GlobalAvg { plane } => {
                let weight = 1.0 / plane as f64;
                for p in 0..plane {
                    f(out * plane + p, weight);
                }
            }
            LinearView::Diagonal {
                scale,
                channels,
                inner,
            } => f(out, scale[(out / inner) % channels] as f64),
        }
    }
}

fn linear_rule(rule: &Rule, view: &LinearView<'_>, x: &Tensor, relevance: &[f64]) -> Result<Vec<f64>> {
    let xd = x.data();
    let mut out = vec![0.0f64; xd.len()];
    match rule {
        Rule::ZPlus => redistribute(view, relevance, &mut out, |i, w| xd[i] as f64 * w.max(0.0), |z| z),
        Rule::Epsilon { epsilon } => redistribute(
            view,
            relevance,
            &mut out,
            |i, w| xd[i] as f64 * w,
            |z| z + epsilon * if z >= 0.0 { 1.0 } else { -1.0 },
        ),
        Rule::ZBeta { low, high } => {
            let shape = x.shape();
            let channels = if shape.len() > 1 { shape[1] } else { 1 };
            let inner: usize = shape.iter().skip(2).product();
            let expand = |b: &Option<Vec<f32>>, default: f32, what: &str| -> Result<Vec<f64>> {
                match b {
                    None => Ok(vec![default as f64; channels]),
                    Some(v) if v.len() == 1 => Ok(vec![v[0] as f64; channels]),
                    Some(v) if v.len() == channels => Ok(v.iter().map(|&b| b as f64).collect()),
                    Some(v) => Err(Error::RuleConfig(format!(
                        "zbeta {what} bound has {} entries for {channels} channels",
                        v.len()
                    ))),
                }
            };
            let lo = expand(low, -1.0, "low")?;
            let hi = expand(high, 1.0, "high")?;
            let channel = |i: usize| (i / inner.max(1)) % channels;
            redistribute(
                view,
                relevance,
                &mut out,
                |i, w| {
                    let c = channel(i);
                    xd[i] as f64 * w - lo[c] * w.max(0.0) - hi[c] * w.min(0.0)
                },
                |z| z,
            )
        }
        _ => unreachable!("non-linear rule"),
    }
    Ok(out)
}

/// Generic two-sweep redistribution: for every output unit with nonzero
/// relevance, sum its contributions, then hand each input its share.
/// Units whose stabilized denominator is zero pass nothing on.
#[inline]
fn redistribute(
    view: &LinearView<'_>,
    relevance: &[f64],
    out: &mut [f64],
    contribution: impl Fn(usize, f64) -> f64,
    denominator: impl Fn(f64) -> f64,
) {
    for (j, &r) in relevance.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let mut z = 0.0f64;
        view.for_each_input(j, |i, w| z += contribution(i, w));
        let d = denominator(z);
        if d == 0.0 {
            continue;
        }
        let share = r / d;
        view.for_each_input(j, |i, w| out[i] += contribution(i, w) * share);
    }
}

fn max_pool(pool: &Pool2d, x: &Tensor, relevance: &[f64], epsilon: Option<f64>) -> Vec<f64> {
    let xd = x.data();
    let mut out = vec![0.0f64; xd.len()];
    pool.for_each_window(x.shape(), |o, window| {
        let r = relevance[o];
        let mut best: Option<usize> = None;
        for i in window {
            if best.map_or(true, |b| xd[i] > xd[b]) {
                best = Some(i);
            }
        }
        if r == 0.0 {
            return;
        }
        let b = best.expect("non-empty pooling window");
        out[b] += match epsilon {
            None => r,
            Some(eps) => {
                let z = xd[b] as f64;
                let d = z + eps * if z >= 0.0 { 1.0 } else { -1.0 };
                z / d * r
            }
        };
    });
    out
}

fn split_sum(inputs: &[&Tensor], relevance: &[f64], epsilon: Option<f64>) -> Vec<Vec<f64>> {
    let (a, b) = (inputs[0].data(), inputs[1].data());
    let mut ra = vec![0.0f64; a.len()];
    let mut rb = vec![0.0f64; b.len()];
    for (j, &r) in relevance.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let (x, y) = (a[j] as f64, b[j] as f64);
        let (x, y, d) = match epsilon {
            None => {
                let (x, y) = (x.max(0.0), y.max(0.0));
                (x, y, x + y + RESIDUAL_STABILIZER)
            }
            Some(eps) => {
                let z = x + y;
                (x, y, z + eps * if z >= 0.0 { 1.0 } else { -1.0 })
            }
        };
        ra[j] = x / d * r;
        rb[j] = y / d * r;
    }
    vec![ra, rb]
}

/// Seeds for one backward pass: relevance placed on each branch head.
struct Seed {
    branch: usize,
    frame: usize,
    value: f64,
}

fn seeds_for(model: &ModelGraph, cache: &ActivationCache, frame: usize, class: usize) -> Result<Vec<Seed>> {
    if frame >= model.expected_frames {
        return Err(Error::IndexOutOfRange(format!(
            "frame {frame} of {}",
            model.expected_frames
        )));
    }
    if class >= model.num_classes {
        return Err(Error::IndexOutOfRange(format!(
            "class {class} of {}",
            model.num_classes
        )));
    }
    let k = model.num_classes;
    let mut seeds = Vec::new();
    for (b, branch) in model.branches().iter().enumerate() {
        if frame % branch.frame_stride != 0 {
            continue;
        }
        let local = frame / branch.frame_stride;
        let logit = cache.output(branch.head).data()[local * k + class];
        seeds.push(Seed {
            branch: b,
            frame: local,
            value: logit as f64,
        });
    }
    Ok(seeds)
}

/// One full backward pass; returns relevance per input frame.
fn propagate(
    model: &ModelGraph,
    cache: &ActivationCache,
    seeds: &[Seed],
    class: usize,
    negate_head: bool,
    rules: &PropagationRuleSet,
) -> Result<Vec<f64>> {
    let nodes = model.nodes();
    if cache.len() != nodes.len() {
        return Err(Error::ShapeMismatch(format!(
            "activation cache holds {} nodes, model has {}",
            cache.len(),
            nodes.len()
        )));
    }
    let mut relevance: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    for seed in seeds {
        let head = model.branches()[seed.branch].head;
        let mut r = vec![0.0f64; cache.output(head).len()];
        r[seed.frame * model.num_classes + class] = seed.value;
        relevance[head] = Some(r);
    }
    let mut input_relevance: Vec<Option<Vec<f64>>> = vec![None; model.branches().len()];

    for idx in (0..nodes.len()).rev() {
        let Some(r) = relevance[idx].take() else {
            continue;
        };
        if r.iter().all(|&v| v == 0.0) {
            continue;
        }
        let node = &nodes[idx];
        let negated;
        let layer = match &node.layer {
            Layer::PerFrameHead(dense) if negate_head => {
                negated = Layer::PerFrameHead(negate_class(dense, class));
                &negated
            }
            other => other,
        };
        // Only layers reading the clip inherit the model's input bounds.
        let rule = if node.inputs.contains(&Source::Input) {
            model_rule(model, rules.rule_for(node))
        } else {
            rules.rule_for(node).clone()
        };
        let args: Vec<&Tensor> = node.inputs.iter().map(|&s| cache.source(node.branch, s)).collect();
        let shares = apply_rule(&rule, layer, &args, cache.output(idx), &r).map_err(|e| match e {
            Error::NonFiniteValue(what) => Error::NonFiniteValue(format!("{what} at node {}", node.id)),
            other => other,
        })?;
        for (src, share) in node.inputs.iter().zip(shares) {
            let slot = match *src {
                Source::Input => &mut input_relevance[node.branch],
                Source::Node(p) => &mut relevance[p],
            };
            match slot {
                Some(acc) => acc.iter_mut().zip(&share).for_each(|(a, s)| *a += s),
                None => *slot = Some(share),
            }
        }
    }

    let mut per_frame = vec![0.0f64; model.expected_frames];
    for (b, branch) in model.branches().iter().enumerate() {
        let Some(r) = &input_relevance[b] else {
            continue;
        };
        let frame_len = cache.branch_input(b).row_len();
        for (t, chunk) in r.chunks_exact(frame_len).enumerate() {
            per_frame[t * branch.frame_stride] += chunk.iter().sum::<f64>();
        }
    }
    Ok(per_frame)
}

/// Fills unset ZBeta bounds from the model's input normalization.
fn model_rule(model: &ModelGraph, rule: &Rule) -> Rule {
    match rule {
        Rule::ZBeta { low, high } => Rule::ZBeta {
            low: Some(low.clone().unwrap_or_else(|| model.input.low.clone())),
            high: Some(high.clone().unwrap_or_else(|| model.input.high.clone())),
        },
        other => other.clone(),
    }
}

fn negate_class(dense: &Dense, class: usize) -> Dense {
    let mut weight = dense.weight.clone();
    let din = dense.in_features();
    for v in &mut weight.data_mut()[class * din..(class + 1) * din] {
        *v = -*v;
    }
    Dense {
        weight,
        bias: dense.bias.clone(),
    }
}

/// Relevance of every input frame for the logit of `frame` and `class`.
pub fn lrp_backward(
    model: &ModelGraph,
    cache: &ActivationCache,
    frame: usize,
    class: usize,
    rules: &PropagationRuleSet,
) -> Result<RelevanceRow> {
    let seeds = seeds_for(model, cache, frame, class)?;
    let per_frame = propagate(model, cache, &seeds, class, false, rules)?;
    Ok(RelevanceRow {
        per_frame,
        target_frame: frame,
        target_class: class,
        mode: Mode::Lrp,
    })
}

/// Contrastive relevance `max(0, R - R_bar)`.
pub fn clrp_backward(
    model: &ModelGraph,
    cache: &ActivationCache,
    frame: usize,
    class: usize,
    rules: &PropagationRuleSet,
) -> Result<RelevanceRow> {
    clrp_backward_with(model, cache, frame, class, rules, ContrastSeed::Logit)
}

pub fn clrp_backward_with(
    model: &ModelGraph,
    cache: &ActivationCache,
    frame: usize,
    class: usize,
    rules: &PropagationRuleSet,
    contrast: ContrastSeed,
) -> Result<RelevanceRow> {
    let positive = lrp_backward(model, cache, frame, class, rules)?.per_frame;
    let negative = match contrast {
        ContrastSeed::Zero => vec![0.0; positive.len()],
        ContrastSeed::Logit => {
            let seeds = seeds_for(model, cache, frame, class)?;
            propagate(model, cache, &seeds, class, true, rules)?
        }
    };
    let per_frame = positive
        .iter()
        .zip(&negative)
        .map(|(r, rb)| (r - rb).max(0.0))
        .collect();
    Ok(RelevanceRow {
        per_frame,
        target_frame: frame,
        target_class: class,
        mode: Mode::Clrp,
    })
}

pub fn backward(
    model: &ModelGraph,
    cache: &ActivationCache,
    frame: usize,
    class: usize,
    mode: Mode,
    rules: &PropagationRuleSet,
) -> Result<RelevanceRow> {
    match mode {
        Mode::Lrp => lrp_backward(model, cache, frame, class, rules),
        Mode::Clrp => clrp_backward(model, cache, frame, class, rules),
    }
}

/// The `N x N` frame-to-frame relevance matrix for class `class`; row `i`
/// explains the logit of frame `i`. Rows are computed in parallel on the
/// current rayon pool and assembled in frame order.
pub fn relevance_matrix(
    model: &ModelGraph,
    clip: &ClipTensor,
    class: usize,
    mode: Mode,
    rules: &PropagationRuleSet,
) -> Result<RelevanceMatrix> {
    if class >= model.num_classes {
        return Err(Error::IndexOutOfRange(format!(
            "class {class} of {}",
            model.num_classes
        )));
    }
    let (logits, cache) = model.forward(clip)?;
    let rows = (0..model.expected_frames)
        .into_par_iter()
        .map(|i| backward(model, &cache, i, class, mode, rules).map(|row| row.per_frame))
        .collect::<Result<Vec<_>>>()?;
    Ok(RelevanceMatrix {
        clip_id: clip.clip_id.clone(),
        class,
        mode,
        logits: logits.column(class).into_iter().map(f64::from).collect(),
        a: rows,
    })
}
