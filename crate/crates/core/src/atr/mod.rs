//! Action temporal relevance (ATR) metrics derived from relevance matrices.
//!
//! The ATR of a target frame `i` is the length of the shortest contiguous
//! window `[l, r]` containing `i` whose relevance holds at least a fraction
//! `sigma` of row `i`'s total. Videos are summarized by the positive-logit
//! weighted mean of frame ATRs (avg-ATR) and their maximum (max-ATR).

mod heatmap;
mod slowfast;
mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrp::Mode;

pub use heatmap::{heatmap_export, read_matrix_csv, HeatmapOutcome};
pub use slowfast::{block_sum, slowfast_merge};
pub use stats::{pearson, topk_overlap};

/// Default mass fraction a frame's ATR window must hold.
pub const DEFAULT_SIGMA: f64 = 0.975;

/// Report flag set when no frame with a defined ATR has a positive logit.
pub const FLAG_NO_POSITIVE_LOGIT: &str = "NoPositiveLogit";

/// Frame-to-frame relevance for one clip and class. `a[i][j]` is the
/// relevance of input frame `j` to the logit of frame `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMatrix {
    pub clip_id: String,
    pub class: usize,
    pub mode: Mode,
    /// `l_ik` for every frame `i`.
    pub logits: Vec<f64>,
    pub a: Vec<Vec<f64>>,
}

impl RelevanceMatrix {
    pub fn frames(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(Error::EmptyInput("relevance matrix has no rows".into()));
        }
        if self.logits.len() != n || self.a.iter().any(|row| row.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "relevance matrix for {} is not {n}x{n} with {n} logits",
                self.clip_id
            )));
        }
        if self.a.iter().flatten().chain(&self.logits).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("relevance matrix {}", self.clip_id)));
        }
        if self.mode == Mode::Clrp {
            for row in &self.a {
                if let Some((index, &value)) = row.iter().enumerate().find(|(_, v)| **v < 0.0) {
                    return Err(Error::NegativeRelevance { index, value });
                }
            }
        }
        Ok(())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.a.iter().flatten().sum()
    }

    /// Sums `rate x rate` blocks of a dual-branch matrix onto the slow frame
    /// grid. Logits of each block's `rate` frames are summed too, so LRP rows
    /// stay conservative.
    pub fn block_sum(&self, rate: usize) -> Result<RelevanceMatrix> {
        let a = block_sum(&self.a, rate)?;
        let logits = self
            .logits
            .chunks_exact(rate)
            .map(|c| c.iter().sum())
            .collect();
        Ok(RelevanceMatrix {
            clip_id: self.clip_id.clone(),
            class: self.class,
            mode: self.mode,
            logits,
            a,
        })
    }
}

/// Shortest window `[l, r]` containing `i` with at least `sigma` of the row's
/// mass; `None` when the row total is not positive. Ties in length go to the
/// window whose center is closest to `i`, then to the leftmost one.
pub fn atr_window(row: &[f64], i: usize, sigma: f64) -> Result<Option<(usize, usize)>> {
    let n = row.len();
    if i >= n {
        return Err(Error::IndexOutOfRange(format!("frame {i} of a {n}-frame row")));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::DegenerateInput(format!("sigma {sigma} outside (0, 1]")));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("relevance row".into()));
    }
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return Ok(None);
    }
    let needed = sigma * total;
    for len in 1..=n {
        let first = i.saturating_sub(len - 1);
        let last = i.min(n - len);
        let mut best: Option<(usize, usize)> = None;
        for l in first..=last {
            let r = l + len - 1;
            let mass: f64 = row[l..=r].iter().sum();
            if mass < needed {
                continue;
            }
            // Twice the center offset keeps the comparison integral.
            let offset = (l + r).abs_diff(2 * i);
            if best.map_or(true, |(_, o)| offset < o) {
                best = Some((l, offset));
            }
        }
        if let Some((l, _)) = best {
            return Ok(Some((l, l + len - 1)));
        }
    }
    // The full window always holds the total; reached only through rounding
    // in the sums above.
    Ok(Some((0, n - 1)))
}

/// ATR of frame `i` for a nonnegative (contrastive) relevance row; 0 when
/// the row carries no relevance.
pub fn frame_atr(row: &[f64], i: usize, sigma: f64) -> Result<usize> {
    if let Some((index, &value)) = row.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeRelevance { index, value });
    }
    frame_atr_signed(row, i, sigma)
}

/// ATR for rows that may carry negative relevance, as plain LRP produces.
pub fn frame_atr_signed(row: &[f64], i: usize, sigma: f64) -> Result<usize> {
    Ok(atr_window(row, i, sigma)?.map_or(0, |(l, r)| r - l + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtrReport {
    pub clip_id: String,
    pub class: usize,
    pub sigma: f64,
    /// Frame ATRs; 0 marks frames whose row carries no relevance.
    pub per_frame_atr: Vec<usize>,
    pub weights: Vec<f64>,
    pub avg_atr: Option<f64>,
    pub max_atr: usize,
    pub flags: Vec<String>,
}

impl AtrReport {
    pub fn require_avg(&self) -> Result<f64> {
        self.avg_atr.ok_or(Error::NoPositiveLogit)
    }
}

/// Frame ATRs plus avg-ATR and max-ATR for one clip.
///
/// Weights are `l_i^+` normalized over frames with a defined ATR. When no
/// such frame has a positive logit, avg-ATR is left undefined and the report
/// is flagged; max-ATR is still reported over every defined frame.
pub fn video_atr(matrix: &RelevanceMatrix, sigma: f64) -> Result<AtrReport> {
    matrix.validate()?;
    let n = matrix.frames();
    let per_frame_atr = (0..n)
        .map(|i| match matrix.mode {
            Mode::Clrp => frame_atr(&matrix.a[i], i, sigma),
            Mode::Lrp => frame_atr_signed(&matrix.a[i], i, sigma),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut flags = Vec::new();
    let undefined: Vec<String> = (0..n)
        .filter(|&i| per_frame_atr[i] == 0)
        .map(|i| i.to_string())
        .collect();
    if !undefined.is_empty() {
        flags.push(format!("UndefinedFrames:{}", undefined.join(",")));
    }

    let positive: Vec<f64> = (0..n)
        .map(|i| {
            if per_frame_atr[i] > 0 {
                matrix.logits[i].max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let mass: f64 = positive.iter().sum();
    let (weights, avg_atr) = if mass > 0.0 {
        let w: Vec<f64> = positive.iter().map(|p| p / mass).collect();
        // Dividing once keeps uniform ATRs exact.
        let weighted: f64 = positive.iter().zip(&per_frame_atr).map(|(p, &r)| p * r as f64).sum();
        (w, Some(weighted / mass))
    } else {
        flags.push(FLAG_NO_POSITIVE_LOGIT.to_string());
        (vec![0.0; n], None)
    };

    Ok(AtrReport {
        clip_id: matrix.clip_id.clone(),
        class: matrix.class,
        sigma,
        max_atr: per_frame_atr.iter().copied().max().unwrap_or(0),
        per_frame_atr,
        weights,
        avg_atr,
        flags,
    })
}

/// Clip-level prediction used to select videos for analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub clip_id: String,
    pub probabilities: Vec<f64>,
    pub label: usize,
}

/// Clips predicted correctly with a top score above 0.5.
pub fn select_analysis_videos(predictions: &[Prediction]) -> Vec<String> {
    predictions
        .iter()
        .filter(|p| {
            let top = crate::graph::argmax(&p.probabilities);
            top == p.label && p.probabilities[top] > 0.5
        })
        .map(|p| p.clip_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAtrSummary {
    pub class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mean_avg_atr: f64,
    /// Population standard deviation of the videos' avg-ATR.
    pub std_avg_atr: f64,
    pub mean_max_atr: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub mean_avg_atr: f64,
    pub mean_max_atr: f64,
    pub per_class: Vec<ClassAtrSummary>,
}

/// Unweighted means over videos with a defined avg-ATR, overall and per
/// label. Summation runs in clip-id order.
pub fn aggregate(reports: &[(AtrReport, usize)]) -> Result<DatasetSummary> {
    let mut kept: Vec<&(AtrReport, usize)> = reports.iter().filter(|(r, _)| r.avg_atr.is_some()).collect();
    if kept.is_empty() {
        return Err(Error::EmptyInput("no report with a defined avg-ATR".into()));
    }
    kept.sort_by(|a, b| a.0.clip_id.cmp(&b.0.clip_id));

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let avg: Vec<f64> = kept.iter().map(|(r, _)| r.avg_atr.unwrap()).collect();
    let max: Vec<f64> = kept.iter().map(|(r, _)| r.max_atr as f64).collect();

    let mut by_class: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (r, label) in &kept {
        let entry = by_class.entry(*label).or_default();
        entry.0.push(r.avg_atr.unwrap());
        entry.1.push(r.max_atr as f64);
    }
    let per_class = by_class
        .into_iter()
        .map(|(class, (avgs, maxes))| {
            let m = mean(&avgs);
            let var = avgs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / avgs.len() as f64;
            ClassAtrSummary {
                class,
                name: None,
                mean_avg_atr: m,
                std_avg_atr: var.sqrt(),
                mean_max_atr: mean(&maxes),
                count: avgs.len(),
            }
        })
        .collect();

    Ok(DatasetSummary {
        mean_avg_atr: mean(&avg),
        mean_max_atr: mean(&max),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(a: Vec<Vec<f64>>, logits: Vec<f64>) -> RelevanceMatrix {
        RelevanceMatrix {
            clip_id: "v".into(),
            class: 0,
            mode: Mode::Clrp,
            logits,
            a,
        }
    }

    fn report(id: &str, avg: Option<f64>, max: usize) -> AtrReport {
        AtrReport {
            clip_id: id.into(),
            class: 0,
            sigma: DEFAULT_SIGMA,
            per_frame_atr: vec![],
            weights: vec![],
            avg_atr: avg,
            max_atr: max,
            flags: vec![],
        }
    }

    #[test]
    fn concentrated_row_has_unit_atr() {
        assert_eq!(frame_atr(&[0.0, 0.0, 10.0, 0.0], 2, 0.975).unwrap(), 1);
    }

    #[test]
    fn uniform_row_needs_whole_clip() {
        assert_eq!(frame_atr(&[1.0, 1.0, 1.0, 1.0], 1, 0.975).unwrap(), 4);
    }

    #[test]
    fn decaying_row_needs_three_frames() {
        assert_eq!(frame_atr(&[0.9, 0.05, 0.03, 0.02], 0, 0.975).unwrap(), 3);
    }

    #[test]
    fn empty_row_is_undefined() {
        assert_eq!(frame_atr(&[0.0, 0.0], 0, 0.975).unwrap(), 0);
    }

    #[test]
    fn negative_entries_rejected_for_contrastive_rows() {
        assert!(matches!(
            frame_atr(&[1.0, -0.5], 0, 0.975),
            Err(Error::NegativeRelevance { index: 1, .. })
        ));
        assert_eq!(frame_atr_signed(&[1.0, -0.5], 0, 0.975).unwrap(), 1);
    }

    #[test]
    fn out_of_range_target_frame() {
        assert!(matches!(
            frame_atr(&[1.0], 1, 0.975),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn tie_prefers_centered_then_leftmost() {
        // Windows [0,1], [1,2] and [2,3] all qualify for frame 1 or 2 with
        // sigma 0.5; centering picks the one around the target.
        let row = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(atr_window(&row, 1, 0.5).unwrap(), Some((0, 1)));
        assert_eq!(atr_window(&row, 2, 0.5).unwrap(), Some((1, 2)));
        assert_eq!(atr_window(&row, 0, 0.25).unwrap(), Some((0, 0)));
    }

    #[test]
    fn weighted_average_uses_positive_logits() {
        // Rows give r = [3, 1, 1]; the middle logit is negative.
        let m = matrix(
            vec![
                vec![1.0, 1.0, 1.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            vec![2.0, -1.0, 2.0],
        );
        let r = video_atr(&m, 0.975).unwrap();
        assert_eq!(r.per_frame_atr, vec![3, 1, 1]);
        assert_eq!(r.weights, vec![0.5, 0.0, 0.5]);
        assert_eq!(r.avg_atr, Some(2.0));
        assert_eq!(r.max_atr, 3);
    }

    #[test]
    fn diagonal_matrix_has_unit_atrs() {
        let n = 5;
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.5 } else { 0.0 }).collect())
            .collect();
        let r = video_atr(&matrix(a, vec![1.0; n]), 0.975).unwrap();
        assert_eq!(r.avg_atr, Some(1.0));
        assert_eq!(r.max_atr, 1);
    }

    #[test]
    fn no_positive_logit_is_flagged() {
        let m = matrix(vec![vec![1.0, 1.0], vec![0.0, 1.0]], vec![-1.0, 0.0]);
        let r = video_atr(&m, 0.975).unwrap();
        assert_eq!(r.avg_atr, None);
        assert!(r.flags.iter().any(|f| f == FLAG_NO_POSITIVE_LOGIT));
        assert_eq!(r.max_atr, 2);
        assert!(matches!(r.require_avg(), Err(Error::NoPositiveLogit)));
    }

    #[test]
    fn undefined_frames_drop_out_of_the_weights() {
        let m = matrix(vec![vec![0.0, 0.0], vec![0.0, 1.0]], vec![3.0, 1.0]);
        let r = video_atr(&m, 0.975).unwrap();
        assert_eq!(r.per_frame_atr, vec![0, 1]);
        assert_eq!(r.weights, vec![0.0, 1.0]);
        assert_eq!(r.avg_atr, Some(1.0));
        assert_eq!(r.flags, vec!["UndefinedFrames:0".to_string()]);
    }

    #[test]
    fn selection_requires_correct_confident_predictions() {
        let p = |id: &str, probs: Vec<f64>, label| Prediction {
            clip_id: id.into(),
            probabilities: probs,
            label,
        };
        let kept = select_analysis_videos(&[
            p("a", vec![0.9, 0.1], 0),
            p("b", vec![0.4, 0.3, 0.3], 0),
            p("c", vec![0.01, 0.99], 0),
        ]);
        assert_eq!(kept, vec!["a".to_string()]);
    }

    #[test]
    fn aggregate_means_and_class_spread() {
        let s = aggregate(&[(report("x", Some(2.0), 3), 0), (report("y", Some(4.0), 5), 0)]).unwrap();
        assert_eq!(s.mean_avg_atr, 3.0);
        assert_eq!(s.mean_max_atr, 4.0);
        assert_eq!(s.per_class[0].std_avg_atr, 1.0);

        let s = aggregate(&[
            (report("a", Some(3.0), 3), 7),
            (report("b", Some(3.0), 3), 7),
            (report("c", Some(3.0), 3), 7),
        ])
        .unwrap();
        assert_eq!(s.per_class[0].std_avg_atr, 0.0);
        assert_eq!(s.per_class[0].count, 3);

        let s = aggregate(&[
            (report("a", Some(2.0), 2), 0),
            (report("b", Some(4.0), 4), 1),
            (report("c", Some(6.0), 6), 1),
        ])
        .unwrap();
        assert_eq!(s.per_class[0].mean_avg_atr, 2.0);
        assert_eq!(s.per_class[1].mean_avg_atr, 5.0);
    }

    #[test]
    fn aggregate_skips_undefined_and_rejects_empty() {
        let s = aggregate(&[(report("a", None, 4), 0), (report("b", Some(2.0), 2), 0)]).unwrap();
        assert_eq!(s.per_class[0].count, 1);
        assert!(matches!(
            aggregate(&[(report("a", None, 4), 0)]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn matrix_validation() {
        let mut m = matrix(vec![vec![1.0, -1.0], vec![0.0, 1.0]], vec![1.0, 1.0]);
        assert!(matches!(m.validate(), Err(Error::NegativeRelevance { .. })));
        m.mode = Mode::Lrp;
        assert!(m.validate().is_ok());
        m.a.pop();
        assert!(matches!(m.validate(), Err(Error::ShapeMismatch(_))));
    }
}
