//! Seeded synthetic clips for exercising models with known temporal structure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{write_clip, write_json};
use crate::tensor::{ClipTensor, Tensor};

/// Upper bound of the background noise in pattern clips.
pub const PATTERN_NOISE: f32 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// One random frame repeated across the clip.
    StaticClip,
    /// Class signal spanning exactly `k` consecutive frames over `[0, 0.2]`
    /// noise: channel `p` is 1 on the first span frame and channel `q` on the
    /// last, where `(p, q)` is the class's channel pair.
    TemporalPattern { k: usize },
    /// Independent uniform values in `[-1, 1]`.
    SeededNoise,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Clip `j` gets class `j % classes`.
    #[default]
    RoundRobin,
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub labeling: Labeling,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.frames, self.channels, self.height, self.width, self.classes, self.count];
        if dims.contains(&0) {
            return Err(Error::InvalidSpec("dimensions, classes and count must be positive".into()));
        }
        if let Generator::TemporalPattern { k } = self.generator {
            if k == 0 || k > self.frames {
                return Err(Error::InvalidSpec(format!("span {k} outside [1, {}]", self.frames)));
            }
            let pairs = class_channel_pairs(self.channels, k).len();
            if self.classes > pairs {
                return Err(Error::InvalidSpec(format!(
                    "{} channels give {pairs} distinct patterns for span {k}, {} classes requested",
                    self.channels, self.classes
                )));
            }
        }
        Ok(())
    }
}

/// Channel pairs identifying each class of a pattern dataset, in class order.
/// Spans of one frame put both channels on the same frame, so only unordered
/// pairs stay distinct.
pub fn class_channel_pairs(channels: usize, k: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for p in 0..channels {
        for q in 0..channels {
            if p < q || (k > 1 && p > q) {
                pairs.push((p, q));
            }
        }
    }
    pairs
}

pub fn clip_id(index: usize) -> String {
    format!("clip_{index:04}")
}

/// Generates the clips; each clip draws from its own stream of the seed, so
/// output does not depend on generation order.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<ClipTensor>> {
    spec.validate()?;
    let shape = [spec.frames, spec.channels, spec.height, spec.width];
    let frame_len = spec.channels * spec.height * spec.width;
    let plane = spec.height * spec.width;
    (0..spec.count)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(j as u64);
            let label = match spec.labeling {
                Labeling::RoundRobin => j % spec.classes,
                Labeling::Seeded => rng.gen_range(0..spec.classes),
            };
            let data = match spec.generator {
                Generator::StaticClip => {
                    let frame: Vec<f32> = (0..frame_len).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    frame.repeat(spec.frames)
                }
                Generator::SeededNoise => (0..spec.frames * frame_len)
                    .map(|_| rng.gen_range(-1.0..=1.0))
                    .collect(),
                Generator::TemporalPattern { k } => {
                    let mut data: Vec<f32> = (0..spec.frames * frame_len)
                        .map(|_| rng.gen_range(0.0..=PATTERN_NOISE))
                        .collect();
                    let start = rng.gen_range(0..=spec.frames - k);
                    let (p, q) = class_channel_pairs(spec.channels, k)[label];
                    for (t, c) in [(start, p), (start + k - 1, q)] {
                        let at = t * frame_len + c * plane;
                        data[at..at + plane].fill(1.0);
                    }
                    data
                }
            };
            ClipTensor::new(Tensor::new(shape.to_vec(), data)?, clip_id(j), Some(label))
        })
        .collect()
}

/// Writes `<clip_id>.tclp` files, `labels.json` (clip id to class) and
/// `classes.json` (class names by id) into `dir`.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    let clips = generate(spec)?;
    let mut labels = BTreeMap::new();
    let mut paths = Vec::with_capacity(clips.len());
    for clip in &clips {
        let path = dir.join(format!("{}.tclp", clip.clip_id));
        write_clip(&path, clip)?;
        labels.insert(clip.clip_id.clone(), clip.label);
        paths.push(path);
    }
    write_json(&dir.join("labels.json"), &labels)?;
    let names: Vec<String> = (0..spec.classes).map(|c| format!("class_{c}")).collect();
    write_json(&dir.join("classes.json"), &names)?;
    Ok(paths)
}
