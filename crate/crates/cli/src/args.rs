use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use temporal_relevance::partial::FillMode;
use temporal_relevance::Mode;

#[derive(Debug, Parser)]
#[command(name = "trel", version, about = "Temporal relevance analysis for video-action CNNs")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Model manifest (JSON).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,

    /// Directory of `.tclp` clips.
    #[arg(long, global = true)]
    pub clips: Option<PathBuf>,

    /// Clip labels (JSON map of clip id to class); defaults to
    /// `<clips>/labels.json` when that file exists.
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,

    /// Class names (JSON array indexed by class id); defaults to
    /// `<clips>/classes.json` when that file exists.
    #[arg(long, global = true)]
    pub class_map: Option<PathBuf>,

    /// Fraction of a frame's relevance its ATR window must hold.
    #[arg(long, global = true, default_value_t = 0.975, value_parser = parse_sigma)]
    pub sigma: f64,

    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Clrp)]
    pub mode: ModeArg,

    /// Rule overrides (JSON map of layer kind or node id to rule).
    #[arg(long, global = true)]
    pub rules: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "trel-out")]
    pub out: PathBuf,

    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub workers: u32,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Lrp,
    Clrp,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Lrp => Mode::Lrp,
            ModeArg::Clrp => Mode::Clrp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FillArg {
    Replicate,
    Zero,
}

impl From<FillArg> for FillMode {
    fn from(f: FillArg) -> Self {
        match f {
            FillArg::Replicate => FillMode::Replicate,
            FillArg::Zero => FillMode::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GeneratorArg {
    Static,
    Pattern,
    Noise,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relevance matrices and ATR reports for every analyzed clip.
    Relevance {
        /// Analyze every clip, skipping the correct-and-confident filter.
        #[arg(long)]
        all_clips: bool,
        /// Also write CSV and PGM heatmaps per clip.
        #[arg(long)]
        heatmaps: bool,
    },
    /// Accuracy when each frame only sees a window around itself.
    PartialEval {
        /// Window sizes, comma separated.
        #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u32).range(1..))]
        sizes: Vec<u32>,
        /// Add a point where each frame's window is its own ATR.
        #[arg(long)]
        atr_policy: bool,
        #[arg(long, value_enum, default_value_t = FillArg::Replicate)]
        fill: FillArg,
        /// Write per-clip predictions with their kept logit rows.
        #[arg(long)]
        dump: bool,
    },
    /// ATR reports and aggregates for saved relevance matrices.
    Atr {
        #[arg(long = "matrix", required = true, num_args = 1..)]
        matrices: Vec<PathBuf>,
    },
    /// CSV and PGM renderings of a saved relevance matrix.
    Heatmap {
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Writes a synthetic clip set with labels and class names.
    GenSynth(SynthArgs),
    /// Writes the fixture models.
    GenFixtures,
    /// Merges slow-branch logits into fast-branch logits, or block-sums a
    /// fast-frame relevance matrix.
    MergeSlowfast {
        /// Slow logits (JSON array of rows).
        #[arg(long, requires = "fast")]
        slow: Option<PathBuf>,
        /// Fast logits (JSON array of rows).
        #[arg(long, requires = "slow")]
        fast: Option<PathBuf>,
        /// Saved relevance matrix on the fast frame grid.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        rate: u32,
    },
    /// Plain full-clip accuracy.
    Eval,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = GeneratorArg::Pattern)]
    pub generator: GeneratorArg,
    /// Span of the class pattern.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 6)]
    pub height: usize,
    #[arg(long, default_value_t = 6)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Draw labels from the seed instead of round robin.
    #[arg(long)]
    pub seeded_labels: bool,
}

fn parse_sigma(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("sigma must lie in (0, 1], got {v}"))
    }
}
