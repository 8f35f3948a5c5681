use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use temporal_relevance::atr::{
    aggregate, heatmap_export, select_analysis_videos, slowfast_merge, DatasetSummary, Prediction,
};
use temporal_relevance::format::{read_clip, write_json};
use temporal_relevance::graph::argmax;
use temporal_relevance::partial::{plain_accuracy, window_curve, write_curve_csv};
use temporal_relevance::synth::{write_synthetic, Generator, Labeling, SyntheticSpec};
use temporal_relevance::{
    fixtures, relevance_matrix, video_atr, AtrReport, ClipTensor, Error, ModelGraph, Mode, PropagationRuleSet,
    RelevanceMatrix, Result, Tensor,
};

use crate::args::{Cli, Command, GeneratorArg, Global, SynthArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.workers as usize)
        .build()
        .map_err(|e| Error::InvalidSpec(format!("cannot start {} workers: {e}", cli.global.workers)))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Relevance { all_clips, heatmaps } => relevance(g, *all_clips, *heatmaps),
        Command::PartialEval {
            sizes,
            atr_policy,
            fill,
            dump,
        } => partial_eval(g, sizes, *atr_policy, (*fill).into(), *dump),
        Command::Atr { matrices } => atr(g, matrices),
        Command::Heatmap { matrix } => heatmap(g, matrix),
        Command::GenSynth(args) => gen_synth(g, args),
        Command::GenFixtures => {
            let written = fixtures::generate_fixture_models(&g.out)?;
            log::info!("wrote {} fixture manifests to {}", written.len(), g.out.display());
            Ok(())
        }
        Command::MergeSlowfast {
            slow,
            fast,
            matrix,
            rate,
        } => merge_slowfast(g, slow.as_deref().zip(fast.as_deref()), matrix.as_deref(), *rate as usize),
        Command::Eval => eval(g),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidSpec(format!("--{flag} is required for this command")))
}

fn load_model(g: &Global) -> Result<(ModelGraph, PropagationRuleSet)> {
    let model = ModelGraph::load(required(&g.model, "model")?)?;
    let rules = match &g.rules {
        Some(path) => PropagationRuleSet::load(path)?,
        None => PropagationRuleSet::default(),
    };
    rules.check_against(&model)?;
    Ok((model, rules))
}

/// An explicit path, or `<clips>/<name>` when that file exists.
fn side_file(explicit: &Option<PathBuf>, clips: &Path, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| Some(clips.join(name)).filter(|p| p.is_file()))
}

/// Clips sorted by file name, labeled when a label map is available.
fn load_clips(g: &Global) -> Result<(Vec<ClipTensor>, bool)> {
    let dir = required(&g.clips, "clips")?;
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tclp"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!("no .tclp clips in {}", dir.display())));
    }
    let labels: Option<BTreeMap<String, usize>> = match side_file(&g.labels, dir, "labels.json") {
        Some(p) => Some(read_json(&p)?),
        None => None,
    };
    let clips = paths
        .par_iter()
        .map(|path| {
            let mut clip = read_clip(path, None)?;
            clip.label = match &labels {
                Some(map) => Some(*map.get(&clip.clip_id).ok_or_else(|| {
                    Error::InvalidSpec(format!("no label for clip {}", clip.clip_id))
                })?),
                None => None,
            };
            Ok(clip)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((clips, labels.is_some()))
}

fn class_names(g: &Global) -> Result<Option<Vec<String>>> {
    let found = match &g.clips {
        Some(dir) => side_file(&g.class_map, dir, "classes.json"),
        None => g.class_map.clone(),
    };
    found.map(|p| read_json(&p)).transpose()
}

fn predict(model: &ModelGraph, clip: &ClipTensor) -> Result<Vec<f64>> {
    let (logits, _) = model.forward(clip)?;
    ModelGraph::ensemble_prediction(&logits, logits.frames())
}

/// Relevance matrix for `class`, on the slow frame grid for dual-branch
/// models.
fn analysis_matrix(
    model: &ModelGraph,
    rules: &PropagationRuleSet,
    clip: &ClipTensor,
    class: usize,
    mode: Mode,
) -> Result<(RelevanceMatrix, RelevanceMatrix)> {
    let full = relevance_matrix(model, clip, class, mode, rules)?;
    let coarse = if model.is_dual_branch() {
        full.block_sum(model.slowfast_rate())?
    } else {
        full.clone()
    };
    Ok((full, coarse))
}

#[derive(Serialize)]
struct VideoEntry {
    clip_id: String,
    class: usize,
    label: Option<usize>,
    avg_atr: Option<f64>,
    max_atr: usize,
    flags: Vec<String>,
}

#[derive(Serialize)]
struct RelevanceSummary {
    model: String,
    mode: Mode,
    sigma: f64,
    seed: u64,
    /// Frames per ATR step; above 1 for dual-branch models.
    frame_block: usize,
    clips_total: usize,
    clips_analyzed: usize,
    videos: Vec<VideoEntry>,
    dataset: Option<DatasetSummary>,
}

fn dataset_summary(reports: &[(AtrReport, usize)], names: Option<&[String]>) -> Result<Option<DatasetSummary>> {
    match aggregate(reports) {
        Ok(mut summary) => {
            if let Some(names) = names {
                for c in &mut summary.per_class {
                    c.name = names.get(c.class).cloned();
                }
            }
            Ok(Some(summary))
        }
        Err(Error::EmptyInput(why)) => {
            log::warn!("no dataset summary: {why}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn relevance(g: &Global, all_clips: bool, heatmaps: bool) -> Result<()> {
    let (model, rules) = load_model(g)?;
    let (clips, labeled) = load_clips(g)?;
    let names = class_names(g)?;
    let mode: Mode = g.mode.into();

    let probabilities = clips.par_iter().map(|c| predict(&model, c)).collect::<Result<Vec<_>>>()?;
    let selected: Vec<usize> = if labeled && !all_clips {
        let predictions: Vec<Prediction> = clips
            .iter()
            .zip(&probabilities)
            .map(|(c, p)| Prediction {
                clip_id: c.clip_id.clone(),
                probabilities: p.clone(),
                label: c.label.unwrap(),
            })
            .collect();
        let keep = select_analysis_videos(&predictions);
        (0..clips.len()).filter(|&i| keep.contains(&clips[i].clip_id)).collect()
    } else {
        (0..clips.len()).collect()
    };
    log::info!("analyzing {} of {} clips", selected.len(), clips.len());

    let results = selected
        .par_iter()
        .map(|&i| {
            let clip = &clips[i];
            let class = clip.label.unwrap_or_else(|| argmax(&probabilities[i]));
            let (full, coarse) = analysis_matrix(&model, &rules, clip, class, mode)?;
            let report = video_atr(&coarse, g.sigma)?;
            Ok((full, coarse, report))
        })
        .collect::<Result<Vec<_>>>()?;

    // Everything is computed before the first file is written.
    let clip_dir = g.out.join("clips");
    let mut videos = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    for (&i, (full, coarse, report)) in selected.iter().zip(&results) {
        let dir = clip_dir.join(&clips[i].clip_id);
        write_json(&dir.join("relevance.json"), full)?;
        write_json(&dir.join("atr.json"), report)?;
        if heatmaps {
            heatmap_export(coarse, &dir.join("heatmap"))?;
        }
        videos.push(VideoEntry {
            clip_id: report.clip_id.clone(),
            class: report.class,
            label: clips[i].label,
            avg_atr: report.avg_atr,
            max_atr: report.max_atr,
            flags: report.flags.clone(),
        });
        reports.push((report.clone(), report.class));
    }
    let summary = RelevanceSummary {
        model: model.name.clone(),
        mode,
        sigma: g.sigma,
        seed: g.seed,
        frame_block: if model.is_dual_branch() { model.slowfast_rate() } else { 1 },
        clips_total: clips.len(),
        clips_analyzed: selected.len(),
        videos,
        dataset: dataset_summary(&reports, names.as_deref())?,
    };
    write_json(&g.out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct ClipDump<'a> {
    clip_id: &'a str,
    label: Option<usize>,
    predicted: usize,
    probabilities: &'a [f64],
    window_sizes: &'a [usize],
    kept_rows: &'a [Vec<f32>],
}

fn partial_eval(
    g: &Global,
    sizes: &[u32],
    atr_policy: bool,
    fill: temporal_relevance::partial::FillMode,
    dump: bool,
) -> Result<()> {
    let (model, rules) = load_model(g)?;
    let (clips, labeled) = load_clips(g)?;
    if !labeled {
        return Err(Error::InvalidSpec("partial-eval needs clip labels".into()));
    }
    let atrs = if atr_policy {
        let mode: Mode = g.mode.into();
        let entries = clips
            .par_iter()
            .map(|clip| {
                let (_, coarse) = analysis_matrix(&model, &rules, clip, clip.label.unwrap(), mode)?;
                Ok((clip.clip_id.clone(), video_atr(&coarse, g.sigma)?.per_frame_atr))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(entries.into_iter().collect::<BTreeMap<_, _>>())
    } else {
        None
    };
    let sizes: Vec<usize> = sizes.iter().map(|&s| s as usize).collect();
    let result = window_curve(&model, &clips, &sizes, atrs.as_ref(), fill)?;

    if dump {
        for run in &result.runs {
            for c in &run.clips {
                let path = g.out.join("partial").join(run.window.to_string()).join(format!("{}.json", c.clip_id));
                write_json(
                    &path,
                    &ClipDump {
                        clip_id: &c.clip_id,
                        label: c.label,
                        predicted: c.predicted,
                        probabilities: &c.probabilities,
                        window_sizes: &c.window_sizes,
                        kept_rows: &c.kept_rows,
                    },
                )?;
            }
        }
    }
    write_curve_csv(&g.out.join("curve.csv"), &result.points)
}

#[derive(Serialize)]
struct EvalClip {
    clip_id: String,
    label: usize,
    predicted: usize,
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct EvalSummary {
    model: String,
    accuracy: f64,
    clip_count: usize,
    clips: Vec<EvalClip>,
}

fn eval(g: &Global) -> Result<()> {
    let (model, _) = load_model(g)?;
    let (clips, labeled) = load_clips(g)?;
    if !labeled {
        return Err(Error::InvalidSpec("eval needs clip labels".into()));
    }
    let accuracy = plain_accuracy(&model, &clips)?;
    let rows = clips
        .par_iter()
        .map(|c| {
            let p = predict(&model, c)?;
            Ok(EvalClip {
                clip_id: c.clip_id.clone(),
                label: c.label.unwrap(),
                predicted: argmax(&p),
                probabilities: p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = EvalSummary {
        model: model.name.clone(),
        accuracy,
        clip_count: clips.len(),
        clips: rows,
    };
    write_json(&g.out.join("eval.json"), &summary)
}

#[derive(Serialize)]
struct AtrSummary {
    sigma: f64,
    reports: Vec<AtrReport>,
    dataset: Option<DatasetSummary>,
}

fn atr(g: &Global, matrices: &[PathBuf]) -> Result<()> {
    let names = class_names(g)?;
    let reports = matrices
        .par_iter()
        .map(|path| {
            let m: RelevanceMatrix = read_json(path)?;
            video_atr(&m, g.sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    let labeled: Vec<(AtrReport, usize)> = reports.iter().map(|r| (r.clone(), r.class)).collect();
    let summary = AtrSummary {
        sigma: g.sigma,
        dataset: dataset_summary(&labeled, names.as_deref())?,
        reports,
    };
    write_json(&g.out.join("atr_summary.json"), &summary)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "matrix".into())
}

fn heatmap(g: &Global, path: &Path) -> Result<()> {
    let m: RelevanceMatrix = read_json(path)?;
    m.validate()?;
    let outcome = heatmap_export(&m, &g.out.join(stem(path)))?;
    log::info!("wrote {} and {}", outcome.csv.display(), outcome.pgm.display());
    Ok(())
}

fn rows_to_tensor(rows: Vec<Vec<f32>>, path: &Path) -> Result<Tensor> {
    let k = rows.first().map_or(0, Vec::len);
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidFormat {
            path: path.to_path_buf(),
            detail: "logits must be a non-empty array of equal-length rows".into(),
        });
    }
    Tensor::new(vec![rows.len(), k], rows.concat())
}

fn merge_slowfast(g: &Global, logits: Option<(&Path, &Path)>, matrix: Option<&Path>, rate: usize) -> Result<()> {
    if logits.is_none() && matrix.is_none() {
        return Err(Error::InvalidSpec("merge-slowfast needs --slow and --fast, or --matrix".into()));
    }
    let mut outputs: Vec<(PathBuf, serde_json::Value)> = Vec::new();
    if let Some((slow, fast)) = logits {
        let s = rows_to_tensor(read_json(slow)?, slow)?;
        let f = rows_to_tensor(read_json(fast)?, fast)?;
        let merged = slowfast_merge(&s, &f, rate)?;
        let k = merged.shape()[1];
        let rows: Vec<&[f32]> = merged.data().chunks(k).collect();
        outputs.push((g.out.join("merged_logits.json"), serde_json::json!(rows)));
    }
    if let Some(path) = matrix {
        let m: RelevanceMatrix = read_json(path)?;
        let blocks = m.block_sum(rate)?;
        outputs.push((
            g.out.join(format!("{}_blocks.json", stem(path))),
            serde_json::to_value(&blocks).expect("serializable matrix"),
        ));
    }
    for (path, value) in outputs {
        write_json(&path, &value)?;
    }
    Ok(())
}

fn gen_synth(g: &Global, a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        generator: match a.generator {
            GeneratorArg::Static => Generator::StaticClip,
            GeneratorArg::Pattern => Generator::TemporalPattern { k: a.k },
            GeneratorArg::Noise => Generator::SeededNoise,
        },
        frames: a.frames,
        channels: a.channels,
        height: a.height,
        width: a.width,
        classes: a.classes,
        count: a.count,
        seed: g.seed,
        labeling: if a.seeded_labels { Labeling::Seeded } else { Labeling::RoundRobin },
    };
    let written = write_synthetic(&spec, &g.out)?;
    log::info!("wrote {} clips to {}", written.len(), g.out.display());
    Ok(())
}
