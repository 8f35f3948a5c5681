//! Small seeded models with known temporal structure.
//!
//! The standard fixtures have zero biases and batch norms with zero shift, so LRP is
//! exactly conservative on them. Weights lean positive to keep activations
//! alive through the ReLUs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::format::{write_json, write_weight};
use crate::graph::{memory_blobs, BranchManifest, InputManifest, Manifest, ModelGraph, NodeManifest, INPUT_ID};
use crate::synth::class_channel_pairs;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const SIZE: usize = 6;
pub const CLASSES: usize = 4;
pub const FRAMES: usize = 8;

const DETECTOR_GAIN: f32 = 40.0;

/// A manifest with its weight blobs held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub manifest: Manifest,
    pub blobs: BTreeMap<String, Tensor>,
}

impl Fixture {
    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn model(&self) -> Result<ModelGraph> {
        ModelGraph::from_manifest(&self.manifest, memory_blobs(&self.blobs))
    }

    /// Writes `<name>.json` and its blobs into `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for (file, tensor) in &self.blobs {
            write_weight(&dir.join(file), tensor)?;
        }
        let path = dir.join(format!("{}.json", self.name()));
        write_json(&path, &self.manifest)?;
        Ok(path)
    }
}

struct Builder {
    manifest: Manifest,
    blobs: BTreeMap<String, Tensor>,
    rng: ChaCha8Rng,
    branch: Option<String>,
}

impl Builder {
    fn new(name: &str, frames: usize, seed: u64) -> Self {
        Self::with_input(name, frames, CHANNELS, SIZE, CLASSES, seed)
    }

    fn with_input(name: &str, frames: usize, channels: usize, size: usize, classes: usize, seed: u64) -> Self {
        Self {
            manifest: Manifest {
                name: name.into(),
                num_classes: classes,
                expected_frames: frames,
                input: InputManifest {
                    channels,
                    height: size,
                    width: size,
                    bounds: None,
                },
                nodes: Vec::new(),
                branches: None,
            },
            blobs: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            branch: None,
        }
    }

    fn random(&mut self, shape: &[usize], fan_in: usize, low: f32) -> Tensor {
        let scale = 1.0 / (fan_in as f32).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.gen_range(low..1.0) * scale)
    }

    fn node(&mut self, id: &str, kind: &str, params: Value, inputs: &[&str], weights: Vec<(&str, Tensor)>) -> String {
        let mut refs = BTreeMap::new();
        for (name, tensor) in weights {
            let file = format!("{}.{id}.{name}.twgt", self.manifest.name);
            refs.insert(name.to_string(), file.clone());
            self.blobs.insert(file, tensor);
        }
        self.manifest.nodes.push(NodeManifest {
            id: id.into(),
            kind: kind.into(),
            params,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            weights: refs,
            branch: self.branch.clone(),
        });
        id.into()
    }

    fn conv3d(&mut self, id: &str, input: &str, cin: usize, cout: usize, kernel: [usize; 3]) -> String {
        let [kt, kh, kw] = kernel;
        let w = self.random(&[cout, cin, kt, kh, kw], cin * kt * kh * kw, -0.5);
        let params = json!({"in_channels": cin, "out_channels": cout, "kernel": kernel});
        self.node(id, "Conv3D", params, &[input], vec![("weight", w)])
    }

    fn conv2d(&mut self, id: &str, input: &str, cin: usize, cout: usize, k: usize) -> String {
        let w = self.random(&[cout, cin, k, k], cin * k * k, -0.5);
        let params = json!({"in_channels": cin, "out_channels": cout, "kernel": [k, k]});
        self.node(id, "Conv2DPerFrame", params, &[input], vec![("weight", w)])
    }

    fn temporal(&mut self, id: &str, input: &str, channels: usize, k: usize) -> String {
        let w = self.random(&[channels, k], k, -0.5);
        let params = json!({"channels": channels, "kernel_t": k});
        self.node(id, "TemporalDepthwiseConv", params, &[input], vec![("weight", w)])
    }

    fn batch_norm(&mut self, id: &str, input: &str, channels: usize) -> String {
        let gamma = self.random(&[channels], 1, 0.5);
        let params = json!({"channels": channels});
        self.node(id, "BatchNorm", params, &[input], vec![("gamma", gamma)])
    }

    fn plain(&mut self, id: &str, kind: &str, inputs: &[&str]) -> String {
        self.node(id, kind, json!({}), inputs, Vec::new())
    }

    fn pool(&mut self, id: &str, kind: &str, input: &str, k: usize) -> String {
        self.node(id, kind, json!({"kernel": [k, k]}), &[input], Vec::new())
    }

    /// `low` bounds the head weights from below; 0 keeps every class row
    /// nonnegative.
    fn head(&mut self, id: &str, input: &str, features: usize, low: f32) -> String {
        let w = self.random(&[self.manifest.num_classes, features], features, low);
        self.node(id, "PerFrameHead", json!({"in_features": features}), &[input], vec![("weight", w)])
    }

    fn finish(self) -> Fixture {
        Fixture {
            manifest: self.manifest,
            blobs: self.blobs,
        }
    }
}

/// Frame-wise 2D CNN: no layer mixes frames. Head rows are nonnegative, so
/// the contrastive pathway finds no positive evidence to subtract.
pub fn per_frame_2d(frames: usize) -> Fixture {
    let mut b = Builder::new("perframe2d", frames, 11);
    b.conv2d("conv1", INPUT_ID, CHANNELS, 6, 3);
    b.batch_norm("bn1", "conv1", 6);
    b.plain("relu1", "ReLU", &["bn1"]);
    b.pool("pool1", "SpatialMaxPool", "relu1", 2);
    b.conv2d("conv2", "pool1", 6, 8, 3);
    b.plain("relu2", "ReLU", &["conv2"]);
    b.plain("gap", "GlobalSpatialAvgPool", &["relu2"]);
    b.head("head", "gap", 8, 0.0);
    b.finish()
}

/// 2D features followed by one temporal depthwise conv of width `k` (odd).
pub fn temporal_diff_net(k: usize, frames: usize) -> Fixture {
    assert!(k % 2 == 1, "temporal kernel must be odd to keep the frame count");
    let mut b = Builder::new(&format!("temporal_diff_k{k}"), frames, 20 + k as u64);
    b.conv2d("conv1", INPUT_ID, CHANNELS, 6, 3);
    b.plain("relu1", "ReLU", &["conv1"]);
    b.temporal("tconv", "relu1", 6, k);
    b.plain("relu2", "ReLU", &["tconv"]);
    b.plain("gap", "GlobalSpatialAvgPool", &["relu2"]);
    b.head("head", "gap", 6, -0.5);
    b.finish()
}

/// Two 3x3x3 convolution blocks.
pub fn tiny_i3d(frames: usize) -> Fixture {
    let mut b = Builder::new("tiny_i3d", frames, 31);
    b.conv3d("conv1", INPUT_ID, CHANNELS, 6, [3, 3, 3]);
    b.batch_norm("bn1", "conv1", 6);
    b.plain("relu1", "ReLU", &["bn1"]);
    b.pool("pool1", "SpatialMaxPool", "relu1", 2);
    b.conv3d("conv2", "pool1", 6, 8, [3, 3, 3]);
    b.plain("relu2", "ReLU", &["conv2"]);
    b.plain("gap", "GlobalSpatialAvgPool", &["relu2"]);
    b.head("head", "gap", 8, -0.5);
    b.finish()
}

/// 2D backbone with a residual temporal module.
pub fn tiny_tam(frames: usize) -> Fixture {
    let mut b = Builder::new("tiny_tam", frames, 41);
    b.conv2d("conv1", INPUT_ID, CHANNELS, 6, 3);
    b.plain("relu1", "ReLU", &["conv1"]);
    b.temporal("tam", "relu1", 6, 3);
    // z+ below assumes nonnegative inputs.
    b.plain("tam_relu", "ReLU", &["tam"]);
    b.conv2d("proj", "tam_relu", 6, 6, 1);
    b.plain("relu2", "ReLU", &["proj"]);
    b.plain("add", "ResidualAdd", &["relu1", "relu2"]);
    b.plain("relu3", "ReLU", &["add"]);
    b.pool("pool", "SpatialAvgPool", "relu3", 2);
    b.plain("gap", "GlobalSpatialAvgPool", &["pool"]);
    b.head("head", "gap", 6, -0.5);
    b.finish()
}

/// Slow branch on every `rate`-th frame, fast branch on all
/// `slow_frames * rate` frames.
pub fn tiny_slowfast(rate: usize, slow_frames: usize) -> Fixture {
    let mut b = Builder::new(&format!("tiny_slowfast_r{rate}"), slow_frames * rate, 50 + rate as u64);
    b.manifest.branches = Some(vec![
        BranchManifest {
            name: "slow".into(),
            frame_stride: rate,
        },
        BranchManifest {
            name: "fast".into(),
            frame_stride: 1,
        },
    ]);
    b.branch = Some("slow".into());
    b.conv3d("slow_conv", INPUT_ID, CHANNELS, 6, [3, 3, 3]);
    b.plain("slow_relu", "ReLU", &["slow_conv"]);
    b.plain("slow_gap", "GlobalSpatialAvgPool", &["slow_relu"]);
    b.head("slow_head", "slow_gap", 6, -0.5);
    b.branch = Some("fast".into());
    b.conv2d("fast_conv", INPUT_ID, CHANNELS, 8, 3);
    b.plain("fast_relu1", "ReLU", &["fast_conv"]);
    b.temporal("fast_tconv", "fast_relu1", 8, 3);
    b.plain("fast_relu2", "ReLU", &["fast_tconv"]);
    b.plain("fast_gap", "GlobalSpatialAvgPool", &["fast_relu2"]);
    b.head("fast_head", "fast_gap", 8, -0.5);
    b.finish()
}

/// Hand-built detector for `TemporalPattern { k }` clips: unit `c` fires
/// only when channel `p_c` is hot at the first frame of a `k`-frame span and
/// channel `q_c` at its last, and the head copies units to class logits.
/// The head gain makes detections confident after averaging over frames.
pub fn pattern_detector(k: usize, frames: usize, channels: usize, size: usize, classes: usize) -> Result<Fixture> {
    if k % 2 == 0 || k > frames {
        return Err(Error::InvalidSpec(format!("detector span {k} must be odd and at most {frames}")));
    }
    let pairs = class_channel_pairs(channels, k);
    if classes > pairs.len() {
        return Err(Error::InvalidSpec(format!("{channels} channels cannot separate {classes} classes")));
    }
    let mut b = Builder::with_input(&format!("pattern_k{k}"), frames, channels, size, classes, 0);
    let mut w = Tensor::zeros(&[classes, channels, k, 1, 1]);
    for (c, &(p, q)) in pairs.iter().take(classes).enumerate() {
        let data = w.data_mut();
        data[(c * channels + p) * k] = 1.0;
        data[(c * channels + q) * k + k - 1] = 1.0;
    }
    let bias = Tensor::new(vec![classes], vec![-1.5; classes])?;
    let params = json!({
        "in_channels": channels,
        "out_channels": classes,
        "kernel": [k, 1, 1],
        "padding": [k / 2, 0, 0],
    });
    b.node("detect", "Conv3D", params, &[INPUT_ID], vec![("weight", w), ("bias", bias)]);
    b.plain("relu", "ReLU", &["detect"]);
    b.plain("gap", "GlobalSpatialAvgPool", &["relu"]);
    let gain = Tensor::from_fn(&[classes, classes], |i| if i / classes == i % classes { DETECTOR_GAIN } else { 0.0 });
    b.node("head", "PerFrameHead", json!({"in_features": classes}), &["gap"], vec![("weight", gain)]);
    Ok(b.finish())
}

/// The standard fixture set at default sizes.
pub fn standard_fixtures() -> Vec<Fixture> {
    vec![
        per_frame_2d(FRAMES),
        temporal_diff_net(3, FRAMES),
        temporal_diff_net(5, FRAMES),
        temporal_diff_net(7, FRAMES),
        tiny_i3d(FRAMES),
        tiny_tam(FRAMES),
        tiny_slowfast(4, 4),
    ]
}

/// Writes every standard fixture plus the 3-frame pattern detector.
pub fn generate_fixture_models(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut all = standard_fixtures();
    all.push(pattern_detector(3, FRAMES, CHANNELS, SIZE, CLASSES)?);
    all.iter().map(|f| f.write(dir)).collect()
}
