//! Layer definitions and their forward kernels.
//!
//! Activations are time-major: convolutional feature maps are `[N, C, H, W]`
//! and per-frame feature vectors are `[N, D]`. No layer mixes information
//! across frames except `Conv3D` and `TemporalDepthwiseConv`, both of which
//! run at stride 1 in time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Conv3D,
    Conv2DPerFrame,
    TemporalDepthwiseConv,
    Linear,
    ReLU,
    BatchNorm,
    SpatialMaxPool,
    SpatialAvgPool,
    GlobalSpatialAvgPool,
    ResidualAdd,
    PerFrameHead,
}

impl LayerKind {
    pub const ALL: [LayerKind; 11] = [
        LayerKind::Conv3D,
        LayerKind::Conv2DPerFrame,
        LayerKind::TemporalDepthwiseConv,
        LayerKind::Linear,
        LayerKind::ReLU,
        LayerKind::BatchNorm,
        LayerKind::SpatialMaxPool,
        LayerKind::SpatialAvgPool,
        LayerKind::GlobalSpatialAvgPool,
        LayerKind::ResidualAdd,
        LayerKind::PerFrameHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv3D => "Conv3D",
            LayerKind::Conv2DPerFrame => "Conv2DPerFrame",
            LayerKind::TemporalDepthwiseConv => "TemporalDepthwiseConv",
            LayerKind::Linear => "Linear",
            LayerKind::ReLU => "ReLU",
            LayerKind::BatchNorm => "BatchNorm",
            LayerKind::SpatialMaxPool => "SpatialMaxPool",
            LayerKind::SpatialAvgPool => "SpatialAvgPool",
            LayerKind::GlobalSpatialAvgPool => "GlobalSpatialAvgPool",
            LayerKind::ResidualAdd => "ResidualAdd",
            LayerKind::PerFrameHead => "PerFrameHead",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn arity(self) -> usize {
        if self == LayerKind::ResidualAdd {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Spatio-temporal convolution. Weight is `[C_out, C_in, kt, kh, kw]`;
/// per-frame 2D convolutions use `kt == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    /// Zero padding along (t, h, w).
    pub padding: [usize; 3],
    /// Spatial stride along (h, w); time is always stride 1.
    pub stride: [usize; 2],
}

impl Conv {
    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Kernel extent along (t, h, w).
    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [n, c, h, w] = expect_rank4(input, "convolution")?;
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let [kt, kh, kw] = self.kernel();
        let [pt, ph, pw] = self.padding;
        let nt = spatial_out(n, kt, pt, 1)?;
        let ho = spatial_out(h, kh, ph, self.stride[0])?;
        let wo = spatial_out(w, kw, pw, self.stride[1])?;
        Ok(vec![nt, self.out_channels(), ho, wo])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let [n, cin, h, w] = shape4(x.shape());
        let [nt, cout, ho, wo] = shape4(&out_shape);
        let [kt, kh, kw] = self.kernel();
        let [pt, ph, pw] = self.padding;
        let [sh, sw] = self.stride;
        let wt = self.weight.data();
        let xd = x.data();
        let mut out = vec![0.0f32; out_shape.iter().product()];
        for t in 0..nt {
            let (dt0, dt1) = valid_taps(t, 1, pt, kt, n);
            for co in 0..cout {
                let b = self.bias.as_ref().map_or(0.0, |b| b[co] as f64);
                for oh in 0..ho {
                    let (dh0, dh1) = valid_taps(oh, sh, ph, kh, h);
                    for ow in 0..wo {
                        let (dw0, dw1) = valid_taps(ow, sw, pw, kw, w);
                        let mut acc = b;
                        for dt in dt0..dt1 {
                            let it = t + dt - pt;
                            for ci in 0..cin {
                                let wbase = (((co * cin + ci) * kt + dt) * kh) * kw;
                                let xbase = (it * cin + ci) * h * w;
                                for dh in dh0..dh1 {
                                    let ih = oh * sh + dh - ph;
                                    let wrow = wbase + dh * kw;
                                    let xrow = xbase + ih * w;
                                    for dw in dw0..dw1 {
                                        let iw = ow * sw + dw - pw;
                                        acc += wt[wrow + dw] as f64 * xd[xrow + iw] as f64;
                                    }
                                }
                            }
                        }
                        out[((t * cout + co) * ho + oh) * wo + ow] = acc as f32;
                    }
                }
            }
        }
        Tensor::new(out_shape, out)
    }
}

/// Per-channel temporal convolution (3D depthwise with a `kt x 1 x 1`
/// kernel). Weight is `[C, kt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalDepthwise {
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    pub padding: usize,
}

impl TemporalDepthwise {
    pub fn channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel_t(&self) -> usize {
        self.weight.shape()[1]
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [n, c, _, _] = expect_rank4(input, "temporal depthwise convolution")?;
        if c != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "temporal depthwise convolution expects {} channels, got {c}",
                self.channels()
            )));
        }
        let nt = spatial_out(n, self.kernel_t(), self.padding, 1)?;
        let mut out = input.to_vec();
        out[0] = nt;
        Ok(out)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(x.shape())?;
        let [nt, c, h, w] = shape4(&shape);
        let n = x.shape()[0];
        let (kt, pt) = (self.kernel_t(), self.padding);
        let plane = h * w;
        let wt = self.weight.data();
        let xd = x.data();
        let mut out = vec![0.0f32; shape.iter().product()];
        for t in 0..nt {
            let (dt0, dt1) = valid_taps(t, 1, pt, kt, n);
            for ch in 0..c {
                let b = self.bias.as_ref().map_or(0.0, |b| b[ch] as f64);
                for p in 0..plane {
                    let mut acc = b;
                    for dt in dt0..dt1 {
                        let it = t + dt - pt;
                        acc += wt[ch * kt + dt] as f64 * xd[(it * c + ch) * plane + p] as f64;
                    }
                    out[(t * c + ch) * plane + p] = acc as f32;
                }
            }
        }
        Tensor::new(shape, out)
    }
}

/// Fully connected map applied to every frame independently. Weight is
/// `[D_out, D_in]`; inputs `[N, ...]` are flattened per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
}

impl Dense {
    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "dense layer needs a [N, ...] input, got {input:?}"
            )));
        }
        let d: usize = input[1..].iter().product();
        if d != self.in_features() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} features per frame, got {d}",
                self.in_features()
            )));
        }
        Ok(vec![input[0], self.out_features()])
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(x.shape())?;
        let (n, dout, din) = (shape[0], shape[1], self.in_features());
        let wt = self.weight.data();
        let mut out = vec![0.0f32; n * dout];
        for t in 0..n {
            let row = x.row(t);
            for o in 0..dout {
                let mut acc = self.bias.as_ref().map_or(0.0, |b| b[o] as f64);
                for (wv, xv) in wt[o * din..(o + 1) * din].iter().zip(row) {
                    acc += *wv as f64 * *xv as f64;
                }
                out[t * dout + o] = acc as f32;
            }
        }
        Tensor::new(shape, out)
    }
}

/// Inference-mode batch norm folded to `y = scale[c] * x + shift[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl ChannelAffine {
    /// Folds running statistics into a per-channel affine map.
    pub fn from_batch_norm(gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Self {
        let mut scale = Vec::with_capacity(gamma.len());
        let mut shift = Vec::with_capacity(gamma.len());
        for c in 0..gamma.len() {
            let s = gamma[c] as f64 / (var[c] as f64 + eps as f64).sqrt();
            scale.push(s as f32);
            shift.push((beta[c] as f64 - mean[c] as f64 * s) as f32);
        }
        Self { scale, shift }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() < 2 || input[1] != self.scale.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {} channels cannot take {input:?}",
                self.scale.len()
            )));
        }
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(x.shape())?;
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / inner) % c;
                (self.scale[ch] as f64 * v as f64 + self.shift[ch] as f64) as f32
            })
            .collect();
        Tensor::new(shape, data)
    }
}

/// Unpadded 2D pooling window applied to every frame and channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2d {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
}

impl Pool2d {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [n, c, h, w] = expect_rank4(input, "spatial pooling")?;
        let ho = spatial_out(h, self.kernel[0], 0, self.stride[0])?;
        let wo = spatial_out(w, self.kernel[1], 0, self.stride[1])?;
        Ok(vec![n, c, ho, wo])
    }

    /// Calls `f(output_index, input_indices)` for every pooling window.
    pub fn for_each_window(&self, input: &[usize], mut f: impl FnMut(usize, &mut dyn Iterator<Item = usize>)) {
        let [n, c, h, w] = shape4(input);
        let [kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let ho = (h - kh) / sh + 1;
        let wo = (w - kw) / sw + 1;
        for nc in 0..n * c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let out = (nc * ho + oh) * wo + ow;
                    let base = nc * h * w;
                    let mut it = (0..kh).flat_map(move |dh| {
                        (0..kw).map(move |dw| base + (oh * sh + dh) * w + ow * sw + dw)
                    });
                    f(out, &mut it);
                }
            }
        }
    }

    fn forward(&self, x: &Tensor, max: bool) -> Result<Tensor> {
        let shape = self.output_shape(x.shape())?;
        let mut out = vec![0.0f32; shape.iter().product()];
        let xd = x.data();
        let area = (self.kernel[0] * self.kernel[1]) as f64;
        self.for_each_window(x.shape(), |o, window| {
            out[o] = if max {
                window.map(|i| xd[i]).fold(f32::NEG_INFINITY, f32::max)
            } else {
                (window.map(|i| xd[i] as f64).sum::<f64>() / area) as f32
            };
        });
        Tensor::new(shape, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv3d(Conv),
    Conv2dPerFrame(Conv),
    TemporalDepthwise(TemporalDepthwise),
    Linear(Dense),
    Relu,
    BatchNorm(ChannelAffine),
    SpatialMaxPool(Pool2d),
    SpatialAvgPool(Pool2d),
    GlobalSpatialAvgPool,
    ResidualAdd,
    PerFrameHead(Dense),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv3d(_) => LayerKind::Conv3D,
            Layer::Conv2dPerFrame(_) => LayerKind::Conv2DPerFrame,
            Layer::TemporalDepthwise(_) => LayerKind::TemporalDepthwiseConv,
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Relu => LayerKind::ReLU,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::SpatialMaxPool(_) => LayerKind::SpatialMaxPool,
            Layer::SpatialAvgPool(_) => LayerKind::SpatialAvgPool,
            Layer::GlobalSpatialAvgPool => LayerKind::GlobalSpatialAvgPool,
            Layer::ResidualAdd => LayerKind::ResidualAdd,
            Layer::PerFrameHead(_) => LayerKind::PerFrameHead,
        }
    }

    /// Temporal kernel length of layers that mix frames.
    pub fn temporal_kernel(&self) -> Option<usize> {
        match self {
            Layer::Conv3d(c) if c.kernel()[0] > 1 => Some(c.kernel()[0]),
            Layer::TemporalDepthwise(t) if t.kernel_t() > 1 => Some(t.kernel_t()),
            _ => None,
        }
    }

    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let kind = self.kind();
        if inputs.len() != kind.arity() {
            return Err(Error::ShapeMismatch(format!(
                "{kind} takes {} inputs, got {}",
                kind.arity(),
                inputs.len()
            )));
        }
        let x = inputs[0];
        match self {
            Layer::Conv3d(c) | Layer::Conv2dPerFrame(c) => c.output_shape(x),
            Layer::TemporalDepthwise(t) => t.output_shape(x),
            Layer::Linear(d) | Layer::PerFrameHead(d) => d.output_shape(x),
            Layer::Relu => Ok(x.to_vec()),
            Layer::BatchNorm(bn) => bn.output_shape(x),
            Layer::SpatialMaxPool(p) | Layer::SpatialAvgPool(p) => p.output_shape(x),
            Layer::GlobalSpatialAvgPool => {
                let [n, c, _, _] = expect_rank4(x, "global pooling")?;
                Ok(vec![n, c])
            }
            Layer::ResidualAdd => {
                if x != inputs[1] {
                    return Err(Error::ShapeMismatch(format!(
                        "residual addends differ: {x:?} vs {:?}",
                        inputs[1]
                    )));
                }
                Ok(x.to_vec())
            }
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
        self.output_shape(&shapes)?;
        let x = inputs[0];
        let out = match self {
            Layer::Conv3d(c) | Layer::Conv2dPerFrame(c) => c.forward(x)?,
            Layer::TemporalDepthwise(t) => t.forward(x)?,
            Layer::Linear(d) | Layer::PerFrameHead(d) => d.forward(x)?,
            Layer::Relu => relu(x),
            Layer::BatchNorm(bn) => bn.forward(x)?,
            Layer::SpatialMaxPool(p) => p.forward(x, true)?,
            Layer::SpatialAvgPool(p) => p.forward(x, false)?,
            Layer::GlobalSpatialAvgPool => global_avg_pool(x)?,
            Layer::ResidualAdd => {
                let data = x
                    .data()
                    .iter()
                    .zip(inputs[1].data())
                    .map(|(a, b)| a + b)
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
        };
        out.ensure_finite(self.kind().name())?;
        Ok(out)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |i| x.data()[i].max(0.0))
}

fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = expect_rank4(x.shape(), "global pooling")?;
    let plane = h * w;
    let data = x
        .data()
        .chunks_exact(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    Tensor::new(vec![n, c], data)
}

fn expect_rank4(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects a [N, C, H, W] input, got {shape:?}"
        )));
    }
    Ok(shape4(shape))
}

fn shape4(shape: &[usize]) -> [usize; 4] {
    [shape[0], shape[1], shape[2], shape[3]]
}

fn spatial_out(size: usize, kernel: usize, pad: usize, stride: usize) -> Result<usize> {
    if stride == 0 || size + 2 * pad < kernel {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kernel} (pad {pad}, stride {stride}) does not fit extent {size}"
        )));
    }
    Ok((size + 2 * pad - kernel) / stride + 1)
}

/// Range of kernel taps `d` for which `out * stride + d - pad` lands inside
/// `[0, size)`.
pub(crate) fn valid_taps(out: usize, stride: usize, pad: usize, kernel: usize, size: usize) -> (usize, usize) {
    let origin = out * stride;
    let lo = pad.saturating_sub(origin);
    let hi = (size + pad).saturating_sub(origin).min(kernel);
    (lo, hi.max(lo))
}
