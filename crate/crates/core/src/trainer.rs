//! Per-slot SGD training with early stopping, and few-shot train subsampling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf;
use crate::data::{Dataset, Utterance};
use crate::embeddings::{EmbeddingGrad, EmbeddingProvider, EmbeddingTable};
use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::eval::score_slot;
use crate::features::{featurize, TokenFeatures};
use crate::model::{DecodeMask, SlotExtractor};
use crate::tagging::{span_to_tags, TagSequence};
use crate::tokenizer::{fold, split_words, TokenSequence, Vocabulary};

/// Examples per unit of parallel work. Fixed so the summation order, and
/// therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev-F1 or dev-NLL improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Heavy-ball momentum on the encoder weights; 0 is plain SGD.
    pub momentum: f64,
    /// Target subword vocabulary size for induction (scratch mode).
    pub vocab_size: usize,
    pub decode_mask: DecodeMask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            momentum: 0.0,
            vocab_size: 1000,
            decode_mask: DecodeMask::Grammar,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Partial overrides of the training and encoder defaults, as read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv_channels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv_widths: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep_embedding: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep_features: Option<f64>,
}

impl ConfigOverrides {
    pub fn apply(&self, train: &mut TrainConfig, encoder: &mut EncoderConfig) {
        macro_rules! set {
            ($target:ident . $field:ident) => {
                if let Some(v) = &self.$field {
                    $target.$field = v.clone();
                }
            };
        }
        set!(train.learning_rate);
        set!(train.batch_size);
        set!(train.max_epochs);
        set!(train.patience);
        set!(train.momentum);
        set!(train.vocab_size);
        set!(encoder.embedding_dim);
        set!(encoder.conv_channels);
        set!(encoder.conv_widths);
        set!(encoder.keep_embedding);
        set!(encoder.keep_features);
    }
}

/// SplitMix64 finaliser over the combination of two words.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable per-slot seed, independent of slot order and platform.
pub fn slot_seed(seed: u64, slot: &str) -> u64 {
    // FNV-1a
    let h = slot
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    mix_seed(seed, h)
}

/// Induces a vocabulary from `texts`, raising `target` to the character
/// inventory when the corpus has more distinct positional characters.
pub fn build_vocabulary<S: AsRef<str>>(texts: &[S], target: usize) -> Result<Vocabulary> {
    let mut inventory = std::collections::HashSet::new();
    for t in texts {
        let chars: Vec<char> = t.as_ref().chars().map(fold).collect();
        for (s, e) in split_words(&chars) {
            for (i, c) in chars[s..e].iter().enumerate() {
                inventory.insert((i == 0, *c));
            }
        }
    }
    if inventory.len() > target {
        log::warn!(
            "vocabulary target {target} is below the character inventory; using {}",
            inventory.len()
        );
    }
    Vocabulary::induce(texts, target.max(inventory.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub tokens: TokenSequence,
    pub features: Vec<TokenFeatures>,
    pub tags: TagSequence,
}

pub fn make_training_example(u: &Utterance, slot: &str, vocab: &Vocabulary) -> Result<TrainingExample> {
    let tokens = vocab.tokenize(&u.text);
    let tags = span_to_tags(&tokens, u.span_for(slot)).map_err(|e| Error::validation(&u.id, e.to_string()))?;
    let features = featurize(&tokens, u.is_requested(slot));
    Ok(TrainingExample {
        id: u.id.clone(),
        tokens,
        features,
        tags,
    })
}

/// Summed loss and gradients over a set of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub loss: f64,
    pub encoder: EncoderWeights,
    pub embeddings: EmbeddingGrad,
}

impl BatchGradients {
    fn zeros(encoder: &EncoderWeights) -> Self {
        BatchGradients {
            loss: 0.0,
            encoder: encoder.zeros_like(),
            embeddings: EmbeddingGrad::default(),
        }
    }

    fn add(&mut self, other: BatchGradients) {
        self.loss += other.loss;
        self.encoder.add_scaled(&other.encoder, 1.0);
        self.embeddings.merge(other.embeddings);
    }
}

/// NLL of one example and its gradients with respect to the encoder weights
/// and (trainable providers only) the embedding rows. `dropout_seed = None`
/// runs without dropout.
pub fn example_gradients(
    encoder: &EncoderWeights,
    provider: &EmbeddingProvider,
    example: &TrainingExample,
    dropout_seed: Option<u64>,
) -> Result<BatchGradients> {
    let ids = example.tokens.ids();
    let emb = provider.embed(&example.id, &ids)?;
    let (potentials, trace) = encoder.forward(&emb, &example.features, dropout_seed.is_some(), dropout_seed.unwrap_or(0))?;
    let (loss, upstream) = crf::nll_and_gradients(&potentials, &example.tags)?;
    let grads = encoder.backward(&trace, &upstream)?;
    let mut embeddings = EmbeddingGrad::default();
    if provider.is_trainable() {
        embeddings.accumulate(&ids, &grads.embeddings, encoder.config.embedding_dim)?;
    }
    Ok(BatchGradients {
        loss,
        encoder: grads.weights,
        embeddings,
    })
}

/// Sum over `batch`, computed in parallel with a fixed reduction order.
/// `seeds[i]` is the dropout seed for `batch[i]`.
pub fn batch_gradients(
    encoder: &EncoderWeights,
    provider: &EmbeddingProvider,
    batch: &[&TrainingExample],
    seeds: Option<&[u64]>,
) -> Result<BatchGradients> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let partials: Vec<Result<BatchGradients>> = idx
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = BatchGradients::zeros(encoder);
            for &i in chunk {
                acc.add(example_gradients(encoder, provider, batch[i], seeds.map(|s| s[i]))?);
            }
            Ok(acc)
        })
        .collect();
    let mut total = BatchGradients::zeros(encoder);
    for p in partials {
        total.add(p?);
    }
    Ok(total)
}

/// Parameters being trained plus optimiser state.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub encoder: EncoderWeights,
    pub embeddings: EmbeddingProvider,
    velocity: Option<EncoderWeights>,
}

impl TrainingState {
    pub fn new(encoder: EncoderWeights, embeddings: EmbeddingProvider) -> Self {
        TrainingState {
            encoder,
            embeddings,
            velocity: None,
        }
    }

    /// One SGD step on the mean of `grads` over `batch_len` examples.
    pub fn step(&mut self, mut grads: BatchGradients, batch_len: usize, lr: f64, momentum: f64) -> Result<()> {
        let inv = 1.0 / batch_len as f64;
        grads.encoder.scale(inv);
        if momentum > 0.0 {
            let v = self.velocity.get_or_insert_with(|| grads.encoder.zeros_like());
            v.scale(momentum);
            v.add_scaled(&grads.encoder, 1.0);
            self.encoder.add_scaled(v, -lr);
        } else {
            self.encoder.add_scaled(&grads.encoder, -lr);
        }
        if self.embeddings.is_trainable() {
            grads.embeddings.scale(inv);
            self.embeddings.accumulate_gradient(&grads.embeddings, lr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example NLL over the epoch (with dropout active).
    pub train_nll: f64,
    /// `None` when the dev set is empty.
    pub dev_f1: Option<f64>,
    /// Mean per-example dev NLL without dropout; breaks dev-F1 ties.
    pub dev_nll: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_nll,dev_f1,dev_nll\n");
        let cell = |v: Option<f64>| v.map(|f| f.to_string()).unwrap_or_default();
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_nll, cell(r.dev_f1), cell(r.dev_nll)));
        }
        out
    }
}

/// Dev F1 and mean dev NLL of the current weights.
fn dev_scores(extractor: &SlotExtractor, dev: &[Utterance], dev_examples: &[TrainingExample]) -> Result<(f64, f64)> {
    let preds: Vec<_> = dev
        .par_iter()
        .map(|u| extractor.predict(&u.id, &u.text, u.is_requested(&extractor.slot)).map(|p| p.span))
        .collect::<Result<_>>()?;
    let golds: Vec<_> = dev.iter().map(|u| u.span_for(&extractor.slot)).collect();
    let f1 = score_slot(&preds, &golds)?.f1;
    let losses: Vec<f64> = dev_examples
        .par_iter()
        .map(|ex| {
            let pots = extractor.potentials(&ex.id, &ex.tokens, ex.features.first().is_some_and(|f| f.slot_requested))?;
            Ok(crf::nll_and_gradients(&pots, &ex.tags)?.0)
        })
        .collect::<Result<_>>()?;
    let nll = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
    Ok((f1, nll))
}

/// Initial weights for `slot`: encoder from `rng`, and for scratch mode an
/// embedding table drawn after the encoder.
pub fn initial_provider_and_encoder(
    slot: &str,
    seed: u64,
    encoder_config: &EncoderConfig,
    vocab: &Vocabulary,
    precomputed: Option<Arc<crate::embeddings::PrecomputedEmbeddings>>,
) -> Result<(EncoderWeights, EmbeddingProvider)> {
    let mut rng = ChaCha8Rng::seed_from_u64(slot_seed(seed, slot));
    let encoder = EncoderWeights::random(encoder_config, &mut rng)?;
    let provider = match precomputed {
        Some(p) => EmbeddingProvider::Precomputed(p),
        None => EmbeddingProvider::Trainable(EmbeddingTable::random(vocab.len(), encoder_config.embedding_dim, &mut rng)),
    };
    Ok((encoder, provider))
}

/// Trains one slot's extractor on `ds.train`, early-stopping on `ds.dev`.
pub fn train_slot(
    ds: &Dataset,
    slot: &str,
    config: &TrainConfig,
    encoder: EncoderWeights,
    vocab: Arc<Vocabulary>,
    provider: EmbeddingProvider,
) -> Result<(SlotExtractor, TrainLog)> {
    config.validate()?;
    if provider.dim() != encoder.config.embedding_dim {
        return Err(Error::Config(format!(
            "embedding width {} does not match encoder input width {}",
            provider.dim(),
            encoder.config.embedding_dim
        )));
    }
    if ds.train.is_empty() {
        return Err(Error::Config(format!("no training examples for slot '{slot}'")));
    }
    let mut examples = Vec::with_capacity(ds.train.len());
    for u in &ds.train {
        let ex = make_training_example(u, slot, &vocab)?;
        if ex.tokens.is_empty() {
            log::warn!("utterance {} has no tokens; skipped", u.id);
            continue;
        }
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::Config(format!("no non-empty training examples for slot '{slot}'")));
    }

    let mut dev_examples = Vec::with_capacity(ds.dev.len());
    for u in &ds.dev {
        let ex = make_training_example(u, slot, &vocab)?;
        if !ex.tokens.is_empty() {
            dev_examples.push(ex);
        }
    }

    let snapshot = |state: &TrainingState| SlotExtractor {
        slot: slot.to_string(),
        vocab: Arc::clone(&vocab),
        embeddings: state.embeddings.clone(),
        encoder: state.encoder.clone(),
        decode_mask: config.decode_mask,
    };
    let mut state = TrainingState::new(encoder, provider);
    let mut best = snapshot(&state);
    let mut best_score = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut lowest_nll = f64::INFINITY;
    let mut log = TrainLog::default();
    let mut since_best = 0;
    let base = slot_seed(config.seed, slot);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=config.max_epochs {
        let epoch_seed = mix_seed(base, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| mix_seed(epoch_seed, i as u64 + 1)).collect();
            let grads = batch_gradients(&state.encoder, &state.embeddings, &batch, Some(&seeds))?;
            if !grads.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += grads.loss;
            state.step(grads, batch.len(), config.learning_rate, config.momentum)?;
            if !state.encoder.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
        }
        let train_nll = loss_sum / examples.len() as f64;
        let current = snapshot(&state);
        let dev = if ds.dev.is_empty() {
            None
        } else {
            Some(dev_scores(&current, &ds.dev, &dev_examples)?)
        };
        log::debug!("slot {slot} epoch {epoch}: train_nll {train_nll:.4} dev (f1, nll) {dev:?}");
        log.epochs.push(EpochRecord {
            epoch,
            train_nll,
            dev_f1: dev.map(|d| d.0),
            dev_nll: dev.map(|d| d.1),
        });
        // The kept checkpoint is the best by F1, lower dev NLL breaking ties.
        // Patience resets on a new best checkpoint or a new lowest dev NLL, so
        // a lucky early F1 spike does not end training while the fit improves.
        match dev {
            None => {
                best = current;
                log.best_epoch = epoch;
            }
            Some((f1, nll)) if (f1, -nll) > best_score || nll < lowest_nll => {
                if (f1, -nll) > best_score {
                    best_score = (f1, -nll);
                    best = current;
                    log.best_epoch = epoch;
                }
                lowest_nll = lowest_nll.min(nll);
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok((best, log))
}

/// A training-set fraction `numerator/denominator` in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl Fraction {
    pub const ONE: Fraction = Fraction {
        numerator: 1,
        denominator: 1,
    };

    pub fn new(numerator: u64, denominator: u64) -> Result<Self> {
        if numerator == 0 || denominator == 0 || numerator > denominator {
            return Err(Error::Config(format!("fraction {numerator}/{denominator} outside (0, 1]")));
        }
        Ok(Fraction {
            numerator,
            denominator,
        })
    }

    /// `1, 1/2, .., 1/2^k`.
    pub fn halvings(k: u32) -> Vec<Fraction> {
        (0..=k).map(|i| Fraction::new(1, 1 << i).expect("valid")).collect()
    }

    /// Rounded down, but never below one example.
    pub fn size_of(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        ((n as u128 * self.numerator as u128 / self.denominator as u128) as usize).max(1)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.numerator == self.denominator {
            write!(f, "1")
        } else {
            write!(f, "{}/{}", self.numerator, self.denominator)
        }
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse fraction '{s}'"));
        match s.trim().split_once('/') {
            Some((a, b)) => Fraction::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => Fraction::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

/// Keeps a seeded subset of `ds.train` of size [`Fraction::size_of`]; dev is untouched.
///
/// The subset is a prefix of one seeded permutation, so for a fixed seed a
/// smaller fraction always selects a subset of a larger one. Kept examples
/// stay in their original order.
pub fn sample_fraction(ds: &Dataset, fraction: Fraction, seed: u64) -> Result<Dataset> {
    let n = ds.train.len();
    let k = fraction.size_of(n);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x66726163)));
    let mut keep = perm[..k].to_vec();
    keep.sort_unstable();
    Ok(Dataset {
        name: ds.name.clone(),
        train: keep.into_iter().map(|i| ds.train[i].clone()).collect(),
        dev: ds.dev.clone(),
        slot_names: ds.slot_names.clone(),
    })
}
