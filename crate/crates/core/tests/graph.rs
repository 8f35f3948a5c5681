//! Graph construction, receptive fields, ensembles and load failures.

mod common;

use std::collections::BTreeMap;

use serde_json::json;
use temporal_relevance::fixtures::{per_frame_2d, tiny_i3d};
use temporal_relevance::graph::{memory_blobs, InputManifest, Manifest, NodeManifest};
use temporal_relevance::{relevance_matrix, ClipTensor, Error, FrameLogits, ModelGraph, Mode, PropagationRuleSet, Tensor};

fn node(id: &str, kind: &str, params: serde_json::Value, inputs: &[&str], weights: &[(&str, &str)]) -> NodeManifest {
    NodeManifest {
        id: id.into(),
        kind: kind.into(),
        params,
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        weights: weights.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        branch: None,
    }
}

/// Single-channel 1x1 clips through a stack of temporal depthwise layers,
/// global pooling and an identity head.
fn temporal_stack(kernels: &[(usize, Vec<f32>)], frames: usize) -> (Manifest, BTreeMap<String, Tensor>) {
    let mut nodes = Vec::new();
    let mut blobs = BTreeMap::new();
    let mut prev = "input".to_string();
    for (i, (k, w)) in kernels.iter().enumerate() {
        let id = format!("t{i}");
        let blob = format!("{id}.twgt");
        blobs.insert(blob.clone(), Tensor::new(vec![1, *k], w.clone()).unwrap());
        nodes.push(node(&id, "TemporalDepthwiseConv", json!({"channels": 1, "kernel_t": k}), &[&prev], &[("weight", &blob)]));
        prev = id;
    }
    nodes.push(node("gap", "GlobalSpatialAvgPool", json!({}), &[&prev], &[]));
    blobs.insert("head.twgt".into(), Tensor::new(vec![1, 1], vec![1.0]).unwrap());
    nodes.push(node("head", "PerFrameHead", json!({"in_features": 1}), &["gap"], &[("weight", "head.twgt")]));
    let manifest = Manifest {
        name: "stack".into(),
        num_classes: 1,
        expected_frames: frames,
        input: InputManifest {
            channels: 1,
            height: 1,
            width: 1,
            bounds: None,
        },
        nodes,
        branches: None,
    };
    (manifest, blobs)
}

fn build(manifest: &Manifest, blobs: &BTreeMap<String, Tensor>) -> Result<ModelGraph, Error> {
    ModelGraph::from_manifest(manifest, memory_blobs(blobs))
}

#[test]
fn receptive_field_grows_by_kernel_minus_one() {
    let (m, b) = temporal_stack(&[(3, vec![1.0; 3]), (3, vec![1.0; 3])], 8);
    assert_eq!(build(&m, &b).unwrap().theoretical_temporal_rf(), 5);
    let (m, b) = temporal_stack(&[(7, vec![1.0; 7]), (3, vec![1.0; 3])], 12);
    assert_eq!(build(&m, &b).unwrap().theoretical_temporal_rf(), 9);
    assert_eq!(per_frame_2d(8).model().unwrap().theoretical_temporal_rf(), 1);
}

#[test]
fn averaging_kernel_splits_relevance_between_equal_frames() {
    // Output t = 0.5 x[t-1] + 0.5 x[t]; frame 0 only sees itself.
    let (m, b) = temporal_stack(&[(3, vec![0.5, 0.5, 0.0])], 2);
    let model = build(&m, &b).unwrap();
    let clip = ClipTensor::new(Tensor::new(vec![2, 1, 1, 1], vec![0.6, 0.6]).unwrap(), "eq", None).unwrap();
    let r = relevance_matrix(&model, &clip, 0, Mode::Lrp, &PropagationRuleSet::default()).unwrap();
    assert!((r.logits[1] - 0.6).abs() < 1e-6);
    assert!((r.a[1][0] - 0.3).abs() < 1e-6 && (r.a[1][1] - 0.3).abs() < 1e-6);
    assert!((r.a[0][0] - 0.3).abs() < 1e-6 && r.a[0][1] == 0.0);
}

#[test]
fn ensemble_uses_uniformly_spaced_rows() {
    let rows: Vec<f32> = (0..8).flat_map(|i| [i as f32, 0.0]).collect();
    let logits = FrameLogits::new(Tensor::new(vec![8, 2], rows).unwrap()).unwrap();
    let one = ModelGraph::ensemble_prediction(&logits, 1).unwrap();
    let want = temporal_relevance::graph::softmax(&[3.0, 0.0]);
    assert_eq!(one, want);
    let all = ModelGraph::ensemble_prediction(&logits, 8).unwrap();
    assert_eq!(all, temporal_relevance::graph::softmax(&[3.5, 0.0]));
    assert!(matches!(ModelGraph::ensemble_prediction(&logits, 9), Err(Error::InvalidFrameCount(_))));
}

#[test]
fn identical_frames_give_identical_rows_on_per_frame_models() {
    let model = per_frame_2d(8).model().unwrap();
    let clip = common::random_clip(&model, 3);
    let frame = clip.frame(0).to_vec();
    let same = Tensor::new(clip.tensor().shape().to_vec(), frame.repeat(8)).unwrap();
    let (logits, _) = model.forward(&ClipTensor::new(same, "same", None).unwrap()).unwrap();
    for t in 1..8 {
        assert_eq!(logits.row(t), logits.row(0));
    }
}

#[test]
fn forward_is_deterministic() {
    let model = tiny_i3d(8).model().unwrap();
    let clip = common::random_clip(&model, 5);
    let (a, _) = model.forward(&clip).unwrap();
    let (b, _) = model.forward(&clip).unwrap();
    assert_eq!(a.tensor().data(), b.tensor().data());
}

#[test]
fn wrong_frame_count_is_rejected() {
    let model = tiny_i3d(8).model().unwrap();
    let clip = ClipTensor::new(Tensor::zeros(&[4, 3, 6, 6]), "short", None).unwrap();
    assert!(model.forward(&clip).is_err());
}

#[test]
fn weight_shape_mismatch_is_reported() {
    let (m, mut b) = temporal_stack(&[(3, vec![1.0; 3])], 4);
    b.insert("t0.twgt".into(), Tensor::new(vec![1, 2], vec![1.0; 2]).unwrap());
    assert!(matches!(build(&m, &b), Err(Error::WeightShapeMismatch { .. })));
}

#[test]
fn cycles_are_rejected() {
    let (mut m, b) = temporal_stack(&[(3, vec![1.0; 3]), (3, vec![1.0; 3])], 4);
    m.nodes[0].inputs = vec!["t1".into()];
    assert!(matches!(build(&m, &b), Err(Error::CyclicGraph(_))));
}

#[test]
fn files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = tiny_i3d(8);
    let path = fixture.write(dir.path()).unwrap();
    let loaded = ModelGraph::load(&path).unwrap();
    let clip = common::random_clip(&loaded, 1);
    let (a, _) = loaded.forward(&clip).unwrap();
    let (b, _) = fixture.model().unwrap().forward(&clip).unwrap();
    assert_eq!(a.tensor().data(), b.tensor().data());

    let missing = ModelGraph::load(&dir.path().join("nope.json")).unwrap_err();
    assert_eq!(missing.kind(), "ManifestParseError");

    std::fs::remove_file(dir.path().join("tiny_i3d.conv2.weight.twgt")).unwrap();
    assert!(matches!(ModelGraph::load(&path), Err(Error::MissingWeightBlob { .. })));
}
