//! Four-stage convolutional encoder–decoder with skip connections.
//!
//! Encoder stage `k` (1..=4) halves the resolution with a stride-2 3×3
//! convolution and refines with a second 3×3 convolution; its output, with
//! `width_base · 2^(k-1)` channels at `H/2^k × W/2^k`, is exposed as encoder
//! feature level `k`. The decoder upsamples bilinearly, concatenates the
//! matching skip (the input image at full resolution) and applies a 3×3
//! convolution. Every hidden convolution is followed by group normalization
//! ([`NORM_GROUPS`] groups, no batch statistics) and a ReLU. A 1×1 head and a
//! logistic squash give the probability map. Inputs are shifted by −0.5
//! before the first layer.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of encoder levels; inputs must be divisible by `2^LEVELS`.
pub const LEVELS: usize = 4;
pub const SIZE_MULTIPLE: usize = 1 << LEVELS;
pub const NORM_GROUPS: usize = 4;

const CHECKPOINT_MAGIC: &[u8; 8] = b"SSEGCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub width_base: usize,
    pub in_channels: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct ConvSpec {
    name: &'static str,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    norm: bool,
}

impl ConvSpec {
    fn param_len(&self) -> usize {
        if self.norm {
            4
        } else {
            2
        }
    }
}

fn conv_specs(arch: &Architecture) -> Vec<ConvSpec> {
    let w = arch.width_base;
    let c = |name, c_in, c_out, k, stride| ConvSpec {
        name,
        c_in,
        c_out,
        k,
        stride,
        norm: k > 1,
    };
    vec![
        c("enc1.down", arch.in_channels, w, 3, 2),
        c("enc1.conv", w, w, 3, 1),
        c("enc2.down", w, 2 * w, 3, 2),
        c("enc2.conv", 2 * w, 2 * w, 3, 1),
        c("enc3.down", 2 * w, 4 * w, 3, 2),
        c("enc3.conv", 4 * w, 4 * w, 3, 1),
        c("enc4.down", 4 * w, 8 * w, 3, 2),
        c("enc4.conv", 8 * w, 8 * w, 3, 1),
        c("dec3", 8 * w + 4 * w, 4 * w, 3, 1),
        c("dec2", 4 * w + 2 * w, 2 * w, 3, 1),
        c("dec1", 2 * w + w, w, 3, 1),
        c("dec0", w + arch.in_channels, w, 3, 1),
        c("head", w, 1, 1, 1),
    ]
}

/// Per-pixel foreground probabilities, shape `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    probs: Tensor<T>,
}

impl<T: Scalar> Prediction<T> {
    pub fn new(probs: Tensor<T>) -> Result<Self> {
        if probs.shape().len() != 2 {
            return Err(Error::Shape(format!("prediction must be [H, W], got {:?}", probs.shape())));
        }
        if let Some(v) = probs.data().iter().find(|v| !(v.is_finite() && **v >= T::zero() && **v <= T::one())) {
            return Err(Error::Argument(format!("probability {v} outside [0, 1]")));
        }
        Ok(Prediction { probs })
    }

    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.probs
    }

    pub fn hw(&self) -> (usize, usize) {
        self.probs.hw()
    }
}

/// Encoder outputs ordered shallow → deep; level `k` (1-based) has stride `2^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFeatures<T> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Scalar> EncoderFeatures<T> {
    /// Level by 1-based index.
    pub fn level(&self, k: usize) -> Option<&Tensor<T>> {
        k.checked_sub(1).and_then(|i| self.levels.get(i))
    }
}

/// Graph handles produced by [`SegmentationModel::forward_graph`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[H, W]` probabilities.
    pub probs: Var,
    pub features: [Var; LEVELS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationModel<T> {
    arch: Architecture,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> SegmentationModel<T> {
    /// He-normal weights and zero biases drawn from a stream seeded by `seed`.
    pub fn init(width_base: usize, in_channels: usize, seed: u64) -> Result<Self> {
        if width_base < 4 {
            return Err(Error::Argument(format!("width_base must be at least 4, got {width_base}")));
        }
        if in_channels == 0 {
            return Err(Error::Argument("in_channels must be positive".into()));
        }
        let arch = Architecture { width_base, in_channels, seed };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for spec in conv_specs(&arch) {
            let fan_in = spec.c_in * spec.k * spec.k;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let n = spec.c_out * fan_in;
            let w: Vec<T> = (0..n).map(|_| T::of(normal.sample(&mut rng))).collect();
            names.push(format!("{}.weight", spec.name));
            params.push(Tensor::from_vec(&[spec.c_out, spec.c_in, spec.k, spec.k], w)?);
            names.push(format!("{}.bias", spec.name));
            params.push(Tensor::zeros(&[spec.c_out]));
            if spec.norm {
                names.push(format!("{}.norm.gamma", spec.name));
                params.push(Tensor::full(&[spec.c_out], T::one()));
                names.push(format!("{}.norm.beta", spec.name));
                params.push(Tensor::zeros(&[spec.c_out]));
            }
        }
        Ok(SegmentationModel { arch, names, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone())).collect()
    }

    /// Places every parameter on `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "expected [{}, H, W] input, got {shape:?}",
                self.arch.in_channels
            )));
        }
        if shape[1] % SIZE_MULTIPLE != 0 || shape[2] % SIZE_MULTIPLE != 0 || shape[1] == 0 || shape[2] == 0 {
            return Err(Error::Shape(format!(
                "input {}x{} must have height and width that are positive multiples of {SIZE_MULTIPLE}",
                shape[1], shape[2]
            )));
        }
        Ok(())
    }

    /// Forward pass on `g` using parameter handles from [`Self::bind`].
    pub fn forward_graph(&self, g: &mut Graph<T>, params: &[Var], image: Var) -> Result<ForwardVars> {
        self.check_input(g.shape(image))?;
        let specs = conv_specs(&self.arch);
        let offsets: Vec<usize> = specs
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.param_len();
                Some(o)
            })
            .collect();
        // conv (+ group norm + ReLU for hidden layers)
        let layer = |g: &mut Graph<T>, i: usize, x: Var| -> Result<Var> {
            let (s, o) = (&specs[i], offsets[i]);
            let y = g.conv2d(x, params[o], params[o + 1], s.stride, s.k / 2)?;
            if !s.norm {
                return Ok(y);
            }
            let y = g.group_norm(y, params[o + 2], params[o + 3], NORM_GROUPS)?;
            Ok(g.relu(y))
        };
        if params.len() != self.params.len() {
            return Err(Error::Argument(format!(
                "expected {} parameter handles, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let image = g.add_scalar(image, T::of(-0.5));
        let mut x = image;
        let mut features = Vec::with_capacity(LEVELS);
        for level in 0..LEVELS {
            let d = layer(g, 2 * level, x)?;
            x = layer(g, 2 * level + 1, d)?;
            features.push(x);
        }
        // decoder: dec3 (idx 8) .. dec0 (idx 11)
        let skips = [features[2], features[1], features[0], image];
        for (j, &skip) in skips.iter().enumerate() {
            let (h, w) = {
                let s = g.shape(skip);
                (s[1], s[2])
            };
            let up = g.resize(x, h, w)?;
            let cat = g.concat(up, skip)?;
            x = layer(g, 2 * LEVELS + j, cat)?;
        }
        let logits = layer(g, 2 * LEVELS + 4, x)?;
        let (h, w) = {
            let s = g.shape(image);
            (s[1], s[2])
        };
        let logits = g.reshape(logits, &[h, w])?;
        let probs = g.sigmoid(logits);
        Ok(ForwardVars {
            probs,
            features: [features[0], features[1], features[2], features[3]],
        })
    }

    /// Inference forward pass. The network has no stochastic layers, so
    /// `training` does not change the output.
    pub fn forward(&self, image: &Tensor<T>, training: bool) -> Result<(Prediction<T>, EncoderFeatures<T>)> {
        let _ = training;
        let mut g = Graph::new();
        let params = self.bind_frozen(&mut g);
        let x = g.constant(image.clone());
        let out = self.forward_graph(&mut g, &params, x)?;
        let pred = Prediction::new(g.value(out.probs).clone())?;
        let levels = out.features.iter().map(|&v| g.value(v).clone()).collect();
        Ok((pred, EncoderFeatures { levels }))
    }

    pub fn predict(&self, image: &Tensor<T>) -> Result<Prediction<T>> {
        self.forward(image, false).map(|(p, _)| p)
    }

    /// Serialized checkpoint: architecture followed by named `f64` arrays.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arch.width_base as u32).to_le_bytes());
        out.extend_from_slice(&(self.arch.in_channels as u32).to_le_bytes());
        out.extend_from_slice(&self.arch.seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.names.iter().zip(&self.params) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.data() {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::decode(bytes).map_err(Error::Argument)
    }

    fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let width_base = r.u32()? as usize;
        let in_channels = r.u32()? as usize;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let mut model = Self::init(width_base, in_channels, seed).map_err(|e| e.to_string())?;
        let count = r.u32()? as usize;
        if count != model.params.len() {
            return Err(format!("expected {} parameter arrays, found {count}", model.params.len()));
        }
        for i in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?;
            if name != model.names[i] {
                return Err(format!("parameter {i} is `{name}`, expected `{}`", model.names[i]));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            if shape != model.params[i].shape() {
                return Err(format!("parameter `{name}` has shape {shape:?}, expected {:?}", model.params[i].shape()));
            }
            for v in model.params[i].data_mut() {
                *v = T::of(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after checkpoint".into());
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|msg| Error::format(path, msg))
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn checkpoint_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
