//! Partial uniform sampling: evaluate each frame's logits with only a window
//! of the clip visible, then ensemble the kept rows.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::write_atomic;
use crate::graph::{argmax, ensemble_rows, ModelGraph};
use crate::tensor::{ClipTensor, Tensor};

/// How frames outside the window are filled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Frames before `l` copy `f_l`, frames after `r` copy `f_r`.
    #[default]
    Replicate,
    Zero,
}

pub fn build_partial_input(clip: &ClipTensor, i: usize, l: usize, r: usize) -> Result<ClipTensor> {
    build_partial_input_with(clip, i, l, r, FillMode::Replicate)
}

pub fn build_partial_input_with(
    clip: &ClipTensor,
    i: usize,
    l: usize,
    r: usize,
    fill: FillMode,
) -> Result<ClipTensor> {
    let n = clip.frames();
    if !(l <= i && i <= r && r < n) {
        return Err(Error::WindowOutOfRange { i, l, r, n });
    }
    if l == 0 && r == n - 1 {
        return Ok(clip.clone());
    }
    let frame_len = clip.tensor().row_len();
    let mut data = Vec::with_capacity(n * frame_len);
    for t in 0..n {
        match fill {
            FillMode::Replicate => data.extend_from_slice(clip.frame(t.clamp(l, r))),
            FillMode::Zero if t < l || t > r => data.resize(data.len() + frame_len, 0.0),
            FillMode::Zero => data.extend_from_slice(clip.frame(t)),
        }
    }
    ClipTensor::new(
        Tensor::new(clip.tensor().shape().to_vec(), data)?,
        clip.clip_id.clone(),
        clip.label,
    )
}

/// Window of `size` frames around `i` in an `n`-frame clip. Even sizes put
/// the extra frame before `i`; windows crossing a clip boundary shift inward.
pub fn place_window(n: usize, i: usize, size: usize) -> Result<(usize, usize)> {
    if size == 0 || size > n || i >= n {
        return Err(Error::WindowOutOfRange {
            i,
            l: i.saturating_sub(size / 2),
            r: (i + size).saturating_sub(size / 2 + 1),
            n,
        });
    }
    let l = i.saturating_sub(size / 2).min(n - size);
    Ok((l, l + size - 1))
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowPolicy {
    FixedWindow(usize),
    /// Per-clip frame ATRs; a 0 (undefined) entry uses the whole clip.
    PerFrameAtr(BTreeMap<String, Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialSamplingConfig {
    pub policy: WindowPolicy,
    pub fill: FillMode,
}

impl PartialSamplingConfig {
    pub fn fixed(size: usize) -> Self {
        Self {
            policy: WindowPolicy::FixedWindow(size),
            fill: FillMode::Replicate,
        }
    }

    pub fn per_frame_atr(atrs: BTreeMap<String, Vec<usize>>) -> Self {
        Self {
            policy: WindowPolicy::PerFrameAtr(atrs),
            fill: FillMode::Replicate,
        }
    }

    /// Window size for every frame of a clip.
    fn sizes(&self, clip: &ClipTensor) -> Result<Vec<usize>> {
        let n = clip.frames();
        match &self.policy {
            WindowPolicy::FixedWindow(s) => {
                if *s == 0 || *s > n {
                    return Err(Error::InvalidSpec(format!("window size {s} outside [1, {n}]")));
                }
                Ok(vec![*s; n])
            }
            WindowPolicy::PerFrameAtr(atrs) => {
                let atr = atrs.get(&clip.clip_id).ok_or_else(|| {
                    Error::InvalidSpec(format!("no ATR report for clip {}", clip.clip_id))
                })?;
                // Reports on a coarser (slow) frame grid scale up to input frames.
                if atr.is_empty() || n % atr.len() != 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "{} ATR entries for the {n} frames of clip {}",
                        atr.len(),
                        clip.clip_id
                    )));
                }
                let rate = n / atr.len();
                Ok((0..n)
                    .map(|i| match atr[i / rate] {
                        0 => n,
                        r => (r * rate).min(n),
                    })
                    .collect())
            }
        }
    }
}

/// Point label on an accuracy curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowLabel {
    Size(usize),
    Atr,
}

impl fmt::Display for WindowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowLabel::Size(s) => write!(f, "{s}"),
            WindowLabel::Atr => f.write_str("ATR"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub label: Option<usize>,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
    pub window_sizes: Vec<usize>,
    /// Frame `i`'s logit row from the forward pass over its own window.
    pub kept_rows: Vec<Vec<f32>>,
}

impl ClipPrediction {
    pub fn correct(&self) -> bool {
        self.label == Some(self.predicted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub window: WindowLabel,
    pub accuracy: f64,
    pub clip_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialRun {
    pub window: WindowLabel,
    pub clips: Vec<ClipPrediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialEvalResult {
    pub points: Vec<CurvePoint>,
    pub runs: Vec<PartialRun>,
}

/// Predicts every clip from per-frame windowed forward passes. Frames that
/// share a window share one forward pass.
pub fn sliding_eval(
    model: &ModelGraph,
    clips: &[ClipTensor],
    config: &PartialSamplingConfig,
) -> Result<PartialEvalResult> {
    let window = match config.policy {
        WindowPolicy::FixedWindow(s) => WindowLabel::Size(s),
        WindowPolicy::PerFrameAtr(_) => WindowLabel::Atr,
    };
    let run = run_policy(model, clips, config)?;
    Ok(PartialEvalResult {
        points: vec![point(window, &run)?],
        runs: vec![PartialRun { window, clips: run }],
    })
}

/// Accuracy at each fixed window size, plus the per-frame ATR policy when
/// ATRs are supplied.
pub fn window_curve(
    model: &ModelGraph,
    clips: &[ClipTensor],
    sizes: &[usize],
    atrs: Option<&BTreeMap<String, Vec<usize>>>,
    fill: FillMode,
) -> Result<PartialEvalResult> {
    if clips.is_empty() {
        return Err(Error::EmptyInput("no clips to evaluate".into()));
    }
    if sizes.is_empty() && atrs.is_none() {
        return Err(Error::EmptyInput("no window sizes".into()));
    }
    let mut configs: Vec<(WindowLabel, PartialSamplingConfig)> = sizes
        .iter()
        .map(|&s| {
            (
                WindowLabel::Size(s),
                PartialSamplingConfig {
                    policy: WindowPolicy::FixedWindow(s),
                    fill,
                },
            )
        })
        .collect();
    if let Some(atrs) = atrs {
        configs.push((
            WindowLabel::Atr,
            PartialSamplingConfig {
                policy: WindowPolicy::PerFrameAtr(atrs.clone()),
                fill,
            },
        ));
    }
    let mut result = PartialEvalResult {
        points: Vec::new(),
        runs: Vec::new(),
    };
    for (window, config) in configs {
        let run = run_policy(model, clips, &config)?;
        result.points.push(point(window, &run)?);
        result.runs.push(PartialRun { window, clips: run });
    }
    Ok(result)
}

fn point(window: WindowLabel, clips: &[ClipPrediction]) -> Result<CurvePoint> {
    if clips.is_empty() {
        return Err(Error::EmptyInput("no clips to evaluate".into()));
    }
    if let Some(c) = clips.iter().find(|c| c.label.is_none()) {
        return Err(Error::InvalidSpec(format!("clip {} has no label", c.clip_id)));
    }
    let correct = clips.iter().filter(|c| c.correct()).count();
    Ok(CurvePoint {
        window,
        accuracy: correct as f64 / clips.len() as f64,
        clip_count: clips.len(),
    })
}

fn run_policy(
    model: &ModelGraph,
    clips: &[ClipTensor],
    config: &PartialSamplingConfig,
) -> Result<Vec<ClipPrediction>> {
    if clips.is_empty() {
        return Err(Error::EmptyInput("no clips to evaluate".into()));
    }
    struct Job {
        clip: usize,
        window: (usize, usize),
        frames: Vec<usize>,
    }
    let mut sizes = Vec::with_capacity(clips.len());
    let mut jobs = Vec::new();
    for (c, clip) in clips.iter().enumerate() {
        model.check_clip(clip)?;
        let s = config.sizes(clip)?;
        let mut windows: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, &size) in s.iter().enumerate() {
            windows.entry(place_window(clip.frames(), i, size)?).or_default().push(i);
        }
        jobs.extend(windows.into_iter().map(|(window, frames)| Job {
            clip: c,
            window,
            frames,
        }));
        sizes.push(s);
    }

    let rows: Vec<Vec<(usize, Vec<f32>)>> = jobs
        .par_iter()
        .map(|job| {
            let clip = &clips[job.clip];
            let (l, r) = job.window;
            let input = build_partial_input_with(clip, job.frames[0], l, r, config.fill)?;
            let (logits, _) = model.forward(&input)?;
            Ok(job.frames.iter().map(|&i| (i, logits.row(i).to_vec())).collect())
        })
        .collect::<Result<_>>()?;

    let mut kept: Vec<Vec<Vec<f32>>> = clips.iter().map(|c| vec![Vec::new(); c.frames()]).collect();
    for (job, rows) in jobs.iter().zip(rows) {
        for (i, row) in rows {
            kept[job.clip][i] = row;
        }
    }

    Ok(clips
        .iter()
        .zip(kept)
        .zip(sizes)
        .map(|((clip, kept_rows), window_sizes)| {
            let refs: Vec<&[f32]> = kept_rows.iter().map(Vec::as_slice).collect();
            let probabilities = ensemble_rows(&refs);
            ClipPrediction {
                clip_id: clip.clip_id.clone(),
                label: clip.label,
                predicted: argmax(&probabilities),
                probabilities,
                window_sizes,
                kept_rows,
            }
        })
        .collect())
}

/// Fraction of clips whose full-clip ensemble prediction matches the label.
pub fn plain_accuracy(model: &ModelGraph, clips: &[ClipTensor]) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::EmptyInput("no clips to evaluate".into()));
    }
    let correct = clips
        .par_iter()
        .map(|clip| {
            let label = clip
                .label
                .ok_or_else(|| Error::InvalidSpec(format!("clip {} has no label", clip.clip_id)))?;
            let (logits, _) = model.forward(clip)?;
            let p = ModelGraph::ensemble_prediction(&logits, logits.frames())?;
            Ok(argmax(&p) == label)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / clips.len() as f64)
}

/// Writes `window_size,accuracy,clip_count` rows, one per curve point.
pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let invalid = |e: csv::Error| Error::InvalidFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    writer
        .write_record(["window_size", "accuracy", "clip_count"])
        .map_err(invalid)?;
    for p in points {
        writer
            .write_record([p.window.to_string(), p.accuracy.to_string(), p.clip_count.to_string()])
            .map_err(invalid)?;
    }
    let bytes = writer.into_inner().map_err(|e| invalid(e.into_error().into()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Frame `t` holds the single value `t`.
    fn ramp(n: usize) -> ClipTensor {
        let t = Tensor::from_fn(&[n, 1, 1, 1], |i| i as f32);
        ClipTensor::new(t, "ramp", None).unwrap()
    }

    fn values(c: &ClipTensor) -> Vec<f32> {
        c.tensor().data().to_vec()
    }

    #[test]
    fn replaces_frames_outside_the_window() {
        let c = ramp(4);
        assert_eq!(values(&build_partial_input(&c, 2, 1, 3).unwrap()), [1.0, 1.0, 2.0, 3.0]);
        assert_eq!(values(&build_partial_input(&c, 2, 2, 2).unwrap()), [2.0; 4]);
        assert_eq!(build_partial_input(&c, 0, 0, 3).unwrap(), c);
    }

    #[test]
    fn zero_fill_blanks_outside_frames() {
        let c = ramp(4);
        let out = build_partial_input_with(&c, 1, 1, 2, FillMode::Zero).unwrap();
        assert_eq!(values(&out), [0.0, 1.0, 2.0, 0.0]);
    }

    #[test]
    fn window_must_contain_target() {
        let c = ramp(4);
        assert!(matches!(
            build_partial_input(&c, 0, 1, 2),
            Err(Error::WindowOutOfRange { .. })
        ));
        assert!(build_partial_input(&c, 3, 1, 4).is_err());
    }

    #[test]
    fn windows_shift_inward_at_boundaries() {
        assert_eq!(place_window(8, 4, 3).unwrap(), (3, 5));
        assert_eq!(place_window(8, 4, 2).unwrap(), (3, 4));
        assert_eq!(place_window(8, 0, 3).unwrap(), (0, 2));
        assert_eq!(place_window(8, 7, 3).unwrap(), (5, 7));
        assert_eq!(place_window(8, 5, 8).unwrap(), (0, 7));
        assert!(place_window(8, 0, 9).is_err());
        assert!(place_window(8, 0, 0).is_err());
    }

    #[test]
    fn atr_policy_falls_back_to_full_clip() {
        let mut clip = ramp(4);
        clip.clip_id = "v".into();
        let cfg = PartialSamplingConfig::per_frame_atr(BTreeMap::from([("v".into(), vec![1, 0, 3, 2])]));
        assert_eq!(cfg.sizes(&clip).unwrap(), vec![1, 4, 3, 2]);
        let coarse = PartialSamplingConfig::per_frame_atr(BTreeMap::from([("v".into(), vec![1, 2])]));
        assert_eq!(coarse.sizes(&clip).unwrap(), vec![2, 2, 4, 4]);
    }

    proptest! {
        #[test]
        fn partial_input_is_idempotent(n in 1usize..10, a in 0usize..10, b in 0usize..10, c in 0usize..10) {
            let mut idx = [a % n, b % n, c % n];
            idx.sort();
            let [l, i, r] = idx;
            let clip = ramp(n);
            let once = build_partial_input(&clip, i, l, r).unwrap();
            let twice = build_partial_input(&once, i, l, r).unwrap();
            prop_assert_eq!(&once, &twice);
            for t in 0..n {
                prop_assert_eq!(once.frame(t)[0], t.clamp(l, r) as f32);
            }
        }

        #[test]
        fn placed_windows_keep_size_and_target(n in 1usize..20, i in 0usize..20, s in 1usize..20) {
            prop_assume!(i < n && s <= n);
            let (l, r) = place_window(n, i, s).unwrap();
            prop_assert!(l <= i && i <= r && r < n);
            prop_assert_eq!(r - l + 1, s);
        }
    }
}
