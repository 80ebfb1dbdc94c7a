//! Dropout + stacked 1D convolutions producing per-step CRF potentials.
//!
//! Input at each position is `[embedding ‖ 5 token features]`. Each conv layer
//! is `SiLU(conv(x) + b)` with same-length zero padding (`(width - 1) / 2`
//! positions on the left, the rest on the right). A position-wise linear head
//! maps the last layer to 20 numbers per step, read as 16 transition scores
//! (`[to][from]`) followed by 4 unary potentials.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::StepPotentials;
use crate::embeddings::EmbeddedSequence;
use crate::error::{Error, Result};
use crate::features::{TokenFeatures, FEATURE_DIM};

pub const OUTPUT_DIM: usize = StepPotentials::WIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    pub conv_channels: Vec<usize>,
    pub conv_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub keep_embedding: f64,
    pub keep_features: f64,
}

impl EncoderConfig {
    /// From-scratch subword embeddings: d=32, channels (100,100,100), widths (8,4,1).
    pub fn vanilla() -> Self {
        EncoderConfig {
            embedding_dim: 32,
            conv_channels: vec![100, 100, 100],
            conv_widths: vec![8, 4, 1],
            activation: Activation::Silu,
            keep_embedding: 0.5,
            keep_features: 0.5,
        }
    }

    /// Fixed pretrained vectors of width `dim`: channels (128,64), widths (1,5).
    pub fn precomputed(dim: usize) -> Self {
        EncoderConfig {
            embedding_dim: dim,
            conv_channels: vec![128, 64],
            conv_widths: vec![1, 5],
            activation: Activation::Silu,
            keep_embedding: 0.5,
            keep_features: 0.6,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embedding_dim + FEATURE_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.conv_widths.len() {
            return Err(Error::Config(format!(
                "conv channels {:?} and widths {:?} must be non-empty and of equal length",
                self.conv_channels, self.conv_widths
            )));
        }
        if self.conv_channels.contains(&0) || self.conv_widths.contains(&0) {
            return Err(Error::Config("conv channels and widths must be positive".into()));
        }
        for (name, p) in [("keep_embedding", self.keep_embedding), ("keep_features", self.keep_features)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// 1D convolution; `weight` is laid out `[out][tap][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    fn zeros(in_channels: usize, out_channels: usize, width: usize) -> Self {
        Conv1d {
            in_channels,
            out_channels,
            width,
            weight: vec![0.0; out_channels * width * in_channels],
            bias: vec![0.0; out_channels],
        }
    }

    fn left_pad(&self) -> usize {
        (self.width - 1) / 2
    }

    fn forward(&self, x: &[f64], len: usize) -> Vec<f64> {
        let (ci, co, w) = (self.in_channels, self.out_channels, self.width);
        let left = self.left_pad();
        let mut y = vec![0.0; len * co];
        for t in 0..len {
            let out = &mut y[t * co..(t + 1) * co];
            out.copy_from_slice(&self.bias);
            for k in 0..w {
                let Some(src) = (t + k).checked_sub(left).filter(|&s| s < len) else {
                    continue;
                };
                let xin = &x[src * ci..(src + 1) * ci];
                for (o, acc) in out.iter_mut().enumerate() {
                    let wrow = &self.weight[(o * w + k) * ci..(o * w + k + 1) * ci];
                    *acc += wrow.iter().zip(xin).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], len: usize, grad: &mut Conv1d) -> Vec<f64> {
        let (ci, co, w) = (self.in_channels, self.out_channels, self.width);
        let left = self.left_pad();
        let mut dx = vec![0.0; len * ci];
        for t in 0..len {
            let g = &dy[t * co..(t + 1) * co];
            for (b, d) in grad.bias.iter_mut().zip(g) {
                *b += d;
            }
            for k in 0..w {
                let Some(src) = (t + k).checked_sub(left).filter(|&s| s < len) else {
                    continue;
                };
                let xin = &x[src * ci..(src + 1) * ci];
                let dxin = &mut dx[src * ci..(src + 1) * ci];
                for (o, &d) in g.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let base = (o * w + k) * ci;
                    let wrow = &self.weight[base..base + ci];
                    let grow = &mut grad.weight[base..base + ci];
                    for i in 0..ci {
                        grow[i] += d * xin[i];
                        dxin[i] += d * wrow[i];
                    }
                }
            }
        }
        dx
    }
}

/// Position-wise affine map; `weight` is `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// All trainable encoder tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub convs: Vec<Conv1d>,
    pub head: Linear,
}

/// Intermediate values of one forward pass, needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    len: usize,
    /// Post-dropout input, `len x input_dim`.
    input: Vec<f64>,
    /// Per-element dropout scale (`0` or `1/keep`); empty when dropout was off.
    dropout_scale: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Dropout scale applied to input element `(t, i)`; 1 when dropout was off.
    pub fn dropout_scale(&self, t: usize, i: usize, input_dim: usize) -> f64 {
        self.dropout_scale.get(t * input_dim + i).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradients {
    pub weights: EncoderWeights,
    /// `len x embedding_dim`, gradient with respect to the (pre-dropout) embeddings.
    pub embeddings: Vec<f64>,
}

impl EncoderWeights {
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.conv_channels.len());
        let mut in_ch = config.input_dim();
        for (&out, &w) in config.conv_channels.iter().zip(&config.conv_widths) {
            convs.push(Conv1d::zeros(in_ch, out, w));
            in_ch = out;
        }
        Ok(EncoderWeights {
            config: config.clone(),
            convs,
            head: Linear::zeros(in_ch, OUTPUT_DIM),
        })
    }

    /// Uniform fan-in init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights; zero biases.
    pub fn random<R: Rng>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        for conv in &mut w.convs {
            let bound = 1.0 / ((conv.in_channels * conv.width) as f64).sqrt();
            conv.weight.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
        }
        let bound = 1.0 / (w.head.in_features as f64).sqrt();
        w.head.weight.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
        Ok(w)
    }

    pub fn zeros_like(&self) -> Self {
        EncoderWeights {
            config: self.config.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| Conv1d::zeros(c.in_channels, c.out_channels, c.width))
                .collect(),
            head: Linear::zeros(self.head.in_features, self.head.out_features),
        }
    }

    /// Every tensor in a fixed order, with its name.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.convs.len() + 2);
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), c.weight.as_slice()));
            out.push((format!("conv.{i}.bias"), c.bias.as_slice()));
        }
        out.push(("head.weight".into(), self.head.weight.as_slice()));
        out.push(("head.bias".into(), self.head.bias.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(2 * self.convs.len() + 2);
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Shapes matching [`tensors`](Self::tensors).
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(vec![c.out_channels, c.width, c.in_channels]);
            out.push(vec![c.out_channels]);
        }
        out.push(vec![self.head.out_features, self.head.in_features]);
        out.push(vec![self.head.out_features]);
        out
    }

    /// Rebuilds weights from named tensors, rejecting any shape or name mismatch.
    pub fn from_tensors(config: &EncoderConfig, mut named: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(w.tensors_mut()) {
            let data = named
                .remove(name)
                .ok_or_else(|| Error::Shape(format!("missing tensor '{name}'")))?;
            if data.len() != slot.len() {
                return Err(Error::Shape(format!(
                    "tensor '{name}' has {} values, config needs {}",
                    data.len(),
                    slot.len()
                )));
            }
            *slot = data;
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Shape(format!("unexpected tensor '{extra}'")));
        }
        Ok(w)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &EncoderWeights, scale: f64) {
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|(_, t)| t).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    fn check_inputs(&self, embedded: &EmbeddedSequence, features: &[TokenFeatures]) -> Result<usize> {
        let len = features.len();
        if len == 0 {
            return Err(Error::EmptySequence);
        }
        if embedded.len() != len {
            return Err(Error::Shape(format!(
                "{} embeddings for {len} feature rows",
                embedded.len()
            )));
        }
        if embedded.dim != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding width {} but encoder expects {}",
                embedded.dim, self.config.embedding_dim
            )));
        }
        Ok(len)
    }

    /// Runs the encoder. Dropout (inverted, seeded by `seed`) is applied only when `training`.
    pub fn forward(
        &self,
        embedded: &EmbeddedSequence,
        features: &[TokenFeatures],
        training: bool,
        seed: u64,
    ) -> Result<(Vec<StepPotentials>, ForwardTrace)> {
        let len = self.check_inputs(embedded, features)?;
        let d = self.config.embedding_dim;
        let din = self.config.input_dim();
        let mut input = Vec::with_capacity(len * din);
        for (t, f) in features.iter().enumerate() {
            input.extend_from_slice(embedded.row(t));
            input.extend_from_slice(&f.to_vector());
        }
        let mut dropout_scale = Vec::new();
        let dropout_active = training && (self.config.keep_embedding < 1.0 || self.config.keep_features < 1.0);
        if dropout_active {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            dropout_scale.reserve(len * din);
            for _ in 0..len {
                for i in 0..din {
                    let keep = if i < d {
                        self.config.keep_embedding
                    } else {
                        self.config.keep_features
                    };
                    let s = if keep >= 1.0 {
                        1.0
                    } else if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    };
                    dropout_scale.push(s);
                }
            }
            input.iter_mut().zip(&dropout_scale).for_each(|(x, s)| *x *= s);
        }

        let mut pre = Vec::with_capacity(self.convs.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let x = post.last().unwrap_or(&input);
            let z = conv.forward(x, len);
            let a: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
            pre.push(z);
            post.push(a);
        }

        let h = post.last().expect("at least one conv layer");
        let hin = self.head.in_features;
        let mut out = Vec::with_capacity(len);
        let mut row = [0.0; OUTPUT_DIM];
        for t in 0..len {
            let x = &h[t * hin..(t + 1) * hin];
            for (o, r) in row.iter_mut().enumerate() {
                let w = &self.head.weight[o * hin..(o + 1) * hin];
                *r = self.head.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            out.push(StepPotentials::from_slice(&row));
        }
        let trace = ForwardTrace {
            len,
            input,
            dropout_scale,
            pre,
            post,
        };
        Ok((out, trace))
    }

    /// Inference-mode forward pass (no dropout).
    pub fn encode(&self, embedded: &EmbeddedSequence, features: &[TokenFeatures]) -> Result<Vec<StepPotentials>> {
        Ok(self.forward(embedded, features, false, 0)?.0)
    }

    /// Exact gradients of `sum_t <upstream_t, potentials_t>` for the pass recorded in `trace`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[StepPotentials]) -> Result<EncoderGradients> {
        let len = trace.len;
        if upstream.len() != len {
            return Err(Error::Shape(format!(
                "{} upstream gradients for a {len}-step forward pass",
                upstream.len()
            )));
        }
        if trace.post.len() != self.convs.len() {
            return Err(Error::Shape("trace does not belong to these weights".into()));
        }
        let mut grads = self.zeros_like();
        let hin = self.head.in_features;
        let h = trace.post.last().expect("at least one conv layer");
        let mut dh = vec![0.0; len * hin];
        let mut g = [0.0; OUTPUT_DIM];
        for t in 0..len {
            upstream[t].write_to(&mut g);
            let x = &h[t * hin..(t + 1) * hin];
            let dx = &mut dh[t * hin..(t + 1) * hin];
            for (o, &d) in g.iter().enumerate() {
                grads.head.bias[o] += d;
                if d == 0.0 {
                    continue;
                }
                let w = &self.head.weight[o * hin..(o + 1) * hin];
                let gw = &mut grads.head.weight[o * hin..(o + 1) * hin];
                for i in 0..hin {
                    gw[i] += d * x[i];
                    dx[i] += d * w[i];
                }
            }
        }

        let mut dpost = dh;
        for l in (0..self.convs.len()).rev() {
            let dpre: Vec<f64> = dpost
                .iter()
                .zip(&trace.pre[l])
                .map(|(d, &z)| d * silu_grad(z))
                .collect();
            let x = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            dpost = self.convs[l].backward(x, &dpre, len, &mut grads.convs[l]);
        }

        let din = self.config.input_dim();
        let d = self.config.embedding_dim;
        let mut demb = Vec::with_capacity(len * d);
        for t in 0..len {
            for i in 0..d {
                demb.push(dpost[t * din + i] * trace.dropout_scale(t, i, din));
            }
        }
        Ok(EncoderGradients {
            weights: grads,
            embeddings: demb,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> Vec<TokenFeatures> {
        (0..n)
            .map(|t| TokenFeatures {
                is_alphanumeric: t % 2 == 0,
                is_numeric: t % 3 == 0,
                is_word_start: t % 2 == 1,
                char_length: t + 1,
                slot_requested: true,
            })
            .collect()
    }

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            embedding_dim: 4,
            conv_channels: vec![3, 2],
            conv_widths: vec![1, 3],
            activation: Activation::Silu,
            keep_embedding: 0.5,
            keep_features: 0.6,
        }
    }

    fn emb(n: usize, d: usize, rng: &mut ChaCha8Rng) -> EmbeddedSequence {
        EmbeddedSequence {
            dim: d,
            data: (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_network_outputs_bias() {
        let cfg = tiny();
        let mut w = EncoderWeights::zeros(&cfg).unwrap();
        w.head.bias = (0..20).map(|i| i as f64).collect();
        let e = EmbeddedSequence { dim: 4, data: vec![0.3; 4] };
        let out = w.encode(&e, &feats(1)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].unary, [16.0, 17.0, 18.0, 19.0]);
        assert_eq!(out[0].transition[1], [4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn output_shape_for_any_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = EncoderWeights::random(&EncoderConfig::vanilla(), &mut rng).unwrap();
        for n in [1, 2, 7, 13] {
            let e = emb(n, 32, &mut rng);
            assert_eq!(w.encode(&e, &feats(n)).unwrap().len(), n);
        }
    }

    #[test]
    fn width_one_is_position_wise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = EncoderConfig {
            conv_channels: vec![6],
            conv_widths: vec![1],
            ..tiny()
        };
        let w = EncoderWeights::random(&cfg, &mut rng).unwrap();
        let e = emb(5, 4, &mut rng);
        let f = feats(5);
        let all = w.encode(&e, &f).unwrap();
        for t in 0..5 {
            let single = EmbeddedSequence { dim: 4, data: e.row(t).to_vec() };
            assert_eq!(w.encode(&single, &f[t..t + 1]).unwrap()[0], all[t]);
        }
    }

    #[test]
    fn translation_equivariance_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = EncoderConfig {
            conv_channels: vec![4, 3],
            conv_widths: vec![3, 3],
            ..tiny()
        };
        let w = EncoderWeights::random(&cfg, &mut rng).unwrap();
        let n = 9;
        let e = emb(n, 4, &mut rng);
        let f = feats(n);
        // Shift right by one, padding with a zero vector / zero features.
        let mut shifted = vec![0.0; 4];
        shifted.extend_from_slice(&e.data[..(n - 1) * 4]);
        let es = EmbeddedSequence { dim: 4, data: shifted };
        let zero_f = TokenFeatures {
            is_alphanumeric: false,
            is_numeric: false,
            is_word_start: false,
            char_length: 0,
            slot_requested: false,
        };
        let mut fs = vec![zero_f];
        fs.extend_from_slice(&f[..n - 1]);
        let a = w.encode(&e, &f).unwrap();
        let b = w.encode(&es, &fs).unwrap();
        // Receptive field radius is 2; positions 2..n-3 of the original are unaffected by either boundary.
        for t in 2..n - 3 {
            for (x, y) in a[t].unary.iter().zip(&b[t + 1].unary) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_only_in_training_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = EncoderWeights::random(&tiny(), &mut rng).unwrap();
        let e = emb(6, 4, &mut rng);
        let f = feats(6);
        let infer = w.encode(&e, &f).unwrap();
        assert_eq!(infer, w.forward(&e, &f, false, 99).unwrap().0);
        let (a, _) = w.forward(&e, &f, true, 7).unwrap();
        let (b, _) = w.forward(&e, &f, true, 7).unwrap();
        let (c, _) = w.forward(&e, &f, true, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, infer);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = EncoderWeights::random(&tiny(), &mut rng).unwrap();
        let e = emb(5, 4, &mut rng);
        let (out, trace) = w.forward(&e, &feats(5), true, 1).unwrap();
        let g = w.backward(&trace, &vec![StepPotentials::default(); out.len()]).unwrap();
        assert!(g.weights.tensors().iter().all(|(_, t)| t.iter().all(|&x| x == 0.0)));
        assert!(g.embeddings.iter().all(|&x| x == 0.0));
        assert!(w.backward(&trace, &[StepPotentials::default()]).is_err());
    }

    #[test]
    fn dropped_coordinates_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = EncoderWeights::random(&tiny(), &mut rng).unwrap();
        let e = emb(5, 4, &mut rng);
        let (out, trace) = w.forward(&e, &feats(5), true, 3).unwrap();
        let up: Vec<StepPotentials> = out.iter().map(|_| StepPotentials::from_slice(&[1.0; 20])).collect();
        let g = w.backward(&trace, &up).unwrap();
        let mut dropped = 0;
        for t in 0..5 {
            for i in 0..4 {
                if trace.dropout_scale(t, i, 9) == 0.0 {
                    dropped += 1;
                    assert_eq!(g.embeddings[t * 4 + i], 0.0);
                }
            }
        }
        assert!(dropped > 0);
    }

    #[test]
    fn tensor_round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = EncoderWeights::random(&tiny(), &mut rng).unwrap();
        let named: BTreeMap<String, Vec<f64>> = w.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
        assert_eq!(EncoderWeights::from_tensors(&tiny(), named.clone()).unwrap(), w);
        let other = EncoderConfig {
            conv_channels: vec![3, 3],
            ..tiny()
        };
        assert!(EncoderWeights::from_tensors(&other, named).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig { conv_widths: vec![1], ..tiny() }.validate().is_err());
        assert!(EncoderConfig { keep_embedding: 0.0, ..tiny() }.validate().is_err());
        assert!(EncoderConfig::vanilla().validate().is_ok());
        assert_eq!(EncoderConfig::precomputed(512).input_dim(), 517);
    }
}
