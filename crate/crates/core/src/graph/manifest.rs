//! JSON model manifests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Top-level manifest document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub num_classes: usize,
    pub expected_frames: usize,
    pub input: InputManifest,
    pub nodes: Vec<NodeManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branches: Option<Vec<BranchManifest>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputManifest {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Per-channel value range of the input domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<InputBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    pub low: Vec<f32>,
    pub high: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeManifest {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub inputs: Vec<String>,
    /// Weight name to blob file, relative to the manifest directory.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub weights: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchManifest {
    pub name: String,
    /// The branch sees input frames `0, s, 2s, ...`.
    pub frame_stride: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Conv3dParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub padding: Option<[usize; 3]>,
    pub stride: Option<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Conv2dParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub padding: Option<[usize; 2]>,
    pub stride: Option<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TemporalParams {
    pub channels: usize,
    pub kernel_t: usize,
    pub padding_t: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct LinearParams {
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct HeadParams {
    pub in_features: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct BatchNormParams {
    pub channels: usize,
    pub eps: Option<f32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct PoolParams {
    pub kernel: [usize; 2],
    pub stride: Option<[usize; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct NoParams {}
