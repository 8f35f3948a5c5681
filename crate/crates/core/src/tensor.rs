//! Dense tensors and video clips.

use crate::error::{Error, Result};

/// Dense row-major array of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {len} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "zero-sized tensor {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Number of elements in one slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteValue(context.to_string()))
        }
    }
}

/// A clip of `N` frames stored as a `[N, C, H, W]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    data: Tensor,
    pub clip_id: String,
    pub label: Option<usize>,
}

impl ClipTensor {
    pub fn new(data: Tensor, clip_id: impl Into<String>, label: Option<usize>) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "clip tensors are [N, C, H, W], got {:?}",
                data.shape()
            )));
        }
        Ok(Self {
            data,
            clip_id: clip_id.into(),
            label,
        })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        self.data.row(index)
    }

    /// Builds a clip of the same id and label from frame indices of this clip.
    pub fn select_frames(&self, indices: &[usize]) -> Result<ClipTensor> {
        if indices.is_empty() {
            return Err(Error::InvalidFrameCount("no frames selected".into()));
        }
        let n = self.frames();
        let mut data = Vec::with_capacity(indices.len() * self.data.row_len());
        for &index in indices {
            if index >= n {
                return Err(Error::IndexOutOfRange(format!(
                    "frame {index} of a {n}-frame clip"
                )));
            }
            data.extend_from_slice(self.frame(index));
        }
        let mut shape = self.data.shape().to_vec();
        shape[0] = indices.len();
        ClipTensor::new(Tensor::new(shape, data)?, self.clip_id.clone(), self.label)
    }

    pub fn check_label(&self, num_classes: usize) -> Result<()> {
        match self.label {
            Some(label) if label >= num_classes => Err(Error::IndexOutOfRange(format!(
                "label {label} of clip {} with {num_classes} classes",
                self.clip_id
            ))),
            _ => Ok(()),
        }
    }
}

/// Center-frame indices for `segments` equal segments over `frames` frames.
///
/// Segment `i` spans `[floor(i*N/F), floor((i+1)*N/F) - 1]` and contributes
/// its lower center.
pub fn uniform_indices(frames: usize, segments: usize) -> Result<Vec<usize>> {
    if segments == 0 || segments > frames {
        return Err(Error::InvalidFrameCount(format!(
            "cannot take {segments} segments from {frames} frames"
        )));
    }
    Ok((0..segments)
        .map(|i| {
            let start = i * frames / segments;
            let end = (i + 1) * frames / segments - 1;
            (start + end) / 2
        })
        .collect())
}

/// Picks one center frame per segment.
pub fn uniform_sample(video: &ClipTensor, segments: usize) -> Result<ClipTensor> {
    let indices = uniform_indices(video.frames(), segments)?;
    video.select_frames(&indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(frames: usize) -> ClipTensor {
        let t = Tensor::from_fn(&[frames, 1, 1, 1], |i| i as f32);
        ClipTensor::new(t, "c", None).unwrap()
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn uniform_sixteen_into_four() {
        assert_eq!(uniform_indices(16, 4).unwrap(), vec![1, 5, 9, 13]);
    }

    #[test]
    fn uniform_identity_and_single_segment() {
        assert_eq!(uniform_indices(7, 7).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(uniform_indices(8, 1).unwrap(), vec![3]);
    }

    #[test]
    fn uniform_rejects_bad_counts() {
        assert!(matches!(
            uniform_indices(4, 5),
            Err(Error::InvalidFrameCount(_))
        ));
        assert!(matches!(
            uniform_indices(4, 0),
            Err(Error::InvalidFrameCount(_))
        ));
    }

    #[test]
    fn uniform_sample_keeps_center_frames() {
        let sampled = uniform_sample(&clip(16), 4).unwrap();
        assert_eq!(sampled.tensor().data(), &[1.0, 5.0, 9.0, 13.0]);
        assert_eq!(sampled.clip_id, "c");
    }

    proptest::proptest! {
        #[test]
        fn uniform_indices_strictly_increasing(frames in 1usize..200, seg in 1usize..200) {
            proptest::prop_assume!(seg <= frames);
            let idx = uniform_indices(frames, seg).unwrap();
            proptest::prop_assert_eq!(idx.len(), seg);
            proptest::prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            proptest::prop_assert!(idx.iter().all(|&i| i < frames));
        }
    }
}
