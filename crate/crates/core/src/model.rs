//! A trained per-slot extractor and its on-disk container.
//!
//! The container is a JSON document:
//!
//! ```json
//! {
//!   "format": "spanslot-extractor", "version": 1,
//!   "slot": "time", "mode": "scratch", "decode_mask": "grammar",
//!   "vocabulary": "../vocab.txt",
//!   "encoder": {"config": {..}, "tensors": {"conv.0.weight": {"shape": [..], "data": [..]}, ..}},
//!   "embedding_table": {"shape": [rows, dim], "data": [..]}
//! }
//! ```
//!
//! `vocabulary` is resolved relative to the container's directory.
//! `embedding_table` is `null` for extractors over precomputed vectors; those
//! need the embeddings file supplied at load time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crf::{self, StepPotentials};
use crate::data::CharSpan;
use crate::embeddings::{EmbeddingMode, EmbeddingProvider, EmbeddingTable, PrecomputedEmbeddings};
use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::eval::SpanPrediction;
use crate::features::featurize;
use crate::tagging::{tags_to_span, valid_transitions, TagSequence};
use crate::tokenizer::{TokenSequence, Vocabulary};

pub const CONTAINER_FORMAT: &str = "spanslot-extractor";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMask {
    #[default]
    Grammar,
    None,
}

impl FromStr for DecodeMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grammar" => Ok(DecodeMask::Grammar),
            "none" => Ok(DecodeMask::None),
            other => Err(Error::Config(format!("unknown decode mask '{other}'"))),
        }
    }
}

/// Result of decoding one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: TokenSequence,
    pub tags: TagSequence,
    /// `None` when the tags are ill-formed (possible only with `DecodeMask::None`) or all `Bef`.
    pub span: Option<CharSpan>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotExtractor {
    pub slot: String,
    pub vocab: Arc<Vocabulary>,
    pub embeddings: EmbeddingProvider,
    pub encoder: EncoderWeights,
    pub decode_mask: DecodeMask,
}

impl SlotExtractor {
    pub fn potentials(&self, utterance_id: &str, tokens: &TokenSequence, requested: bool) -> Result<Vec<StepPotentials>> {
        let emb = self.embeddings.embed(utterance_id, &tokens.ids())?;
        let feats = featurize(tokens, requested);
        self.encoder.encode(&emb, &feats)
    }

    /// Tokenizes, encodes and Viterbi-decodes one utterance.
    pub fn decode(&self, utterance_id: &str, text: &str, requested: bool) -> Result<Decoded> {
        let tokens = self.vocab.tokenize(text);
        if tokens.is_empty() {
            return Ok(Decoded {
                tokens,
                tags: TagSequence::default(),
                span: None,
                confidence: 1.0,
            });
        }
        let potentials = self.potentials(utterance_id, &tokens, requested)?;
        let mask = valid_transitions();
        let mask = match self.decode_mask {
            DecodeMask::Grammar => Some(&mask),
            DecodeMask::None => None,
        };
        let tags = crf::viterbi(&potentials, mask)?;
        let confidence = crf::sequence_probability(&potentials, tags.tags())?;
        let span = tags_to_span(&tokens, &tags).unwrap_or(None);
        Ok(Decoded {
            tokens,
            tags,
            span,
            confidence,
        })
    }

    pub fn predict(&self, utterance_id: &str, text: &str, requested: bool) -> Result<SpanPrediction> {
        let d = self.decode(utterance_id, text, requested)?;
        Ok(SpanPrediction {
            id: utterance_id.to_string(),
            slot: self.slot.clone(),
            span: d.span,
            confidence: d.confidence,
        })
    }

    /// Writes the container to `path`; `vocab_path` is recorded relative to its directory.
    pub fn save(&self, path: &Path, vocab_path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let vocabulary = relative_path(dir, vocab_path);
        let tensors = self
            .encoder
            .tensors()
            .into_iter()
            .zip(self.encoder.shapes())
            .map(|((name, data), shape)| {
                (
                    name,
                    TensorRecord {
                        shape,
                        data: data.to_vec(),
                    },
                )
            })
            .collect();
        let embedding_table = match &self.embeddings {
            EmbeddingProvider::Trainable(t) => Some(TensorRecord {
                shape: vec![t.rows(), t.dim()],
                data: t.data().to_vec(),
            }),
            EmbeddingProvider::Precomputed(_) => None,
        };
        let record = ContainerRecord {
            format: CONTAINER_FORMAT.into(),
            version: CONTAINER_VERSION,
            slot: self.slot.clone(),
            mode: self.embeddings.mode(),
            decode_mask: self.decode_mask,
            vocabulary: vocabulary.to_string_lossy().into_owned(),
            encoder: EncoderRecord {
                config: self.encoder.config.clone(),
                tensors,
            },
            embedding_table,
        };
        let json = serde_json::to_string(&record).expect("container serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads a container. Precomputed-mode containers need `precomputed`.
    pub fn load(path: &Path, precomputed: Option<Arc<PrecomputedEmbeddings>>) -> Result<Self> {
        Self::load_expecting(path, precomputed, None)
    }

    /// Like [`load`](Self::load) but fails unless the stored encoder config equals `expected`.
    pub fn load_expecting(
        path: &Path,
        precomputed: Option<Arc<PrecomputedEmbeddings>>,
        expected: Option<&EncoderConfig>,
    ) -> Result<Self> {
        let ckpt_err = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let record: ContainerRecord = serde_json::from_str(&body).map_err(|e| Error::parse(path, None, e))?;
        if record.format != CONTAINER_FORMAT || record.version != CONTAINER_VERSION {
            return Err(ckpt_err(format!(
                "unsupported container {} v{}",
                record.format, record.version
            )));
        }
        let config = record.encoder.config;
        if let Some(expected) = expected {
            if expected != &config {
                return Err(ckpt_err(format!(
                    "encoder config {config:?} does not match expected {expected:?}"
                )));
            }
        }
        for (name, t) in &record.encoder.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(ckpt_err(format!("tensor '{name}' data does not match shape {:?}", t.shape)));
            }
        }
        let named = record
            .encoder
            .tensors
            .into_iter()
            .map(|(n, t)| (n, t.data))
            .collect();
        let encoder = EncoderWeights::from_tensors(&config, named).map_err(|e| ckpt_err(e.to_string()))?;

        let dir = path.parent().unwrap_or(Path::new("."));
        let vocab = Arc::new(Vocabulary::load(&dir.join(&record.vocabulary))?);
        let embeddings = match (record.mode, record.embedding_table, precomputed) {
            (EmbeddingMode::Scratch, Some(t), _) => {
                let [rows, dim] = t.shape[..] else {
                    return Err(ckpt_err("embedding table must be 2-D".into()));
                };
                if rows != vocab.len() {
                    return Err(ckpt_err(format!(
                        "embedding table has {rows} rows for a vocabulary of {}",
                        vocab.len()
                    )));
                }
                EmbeddingProvider::Trainable(EmbeddingTable::from_data(rows, dim, t.data)?)
            }
            (EmbeddingMode::Scratch, None, _) => return Err(ckpt_err("scratch-mode container lacks embedding_table".into())),
            (EmbeddingMode::Precomputed, _, Some(p)) => EmbeddingProvider::Precomputed(p),
            (EmbeddingMode::Precomputed, _, None) => {
                return Err(ckpt_err("precomputed-mode extractor needs an embeddings file".into()))
            }
        };
        if embeddings.dim() != config.embedding_dim {
            return Err(ckpt_err(format!(
                "embedding width {} does not match encoder input width {}",
                embeddings.dim(),
                config.embedding_dim
            )));
        }
        Ok(SlotExtractor {
            slot: record.slot,
            vocab,
            embeddings,
            encoder,
            decode_mask: record.decode_mask,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EncoderRecord {
    config: EncoderConfig,
    tensors: BTreeMap<String, TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct ContainerRecord {
    format: String,
    version: u32,
    slot: String,
    mode: EmbeddingMode,
    decode_mask: DecodeMask,
    vocabulary: String,
    encoder: EncoderRecord,
    embedding_table: Option<TensorRecord>,
}

/// `target` expressed relative to `base` when both share a prefix, else unchanged.
fn relative_path(base: &Path, target: &Path) -> PathBuf {
    let base: Vec<_> = base.components().collect();
    let tgt: Vec<_> = target.components().collect();
    let common = base.iter().zip(&tgt).take_while(|(a, b)| a == b).count();
    if common == 0 && (target.is_absolute() || base.is_empty()) {
        return target.to_path_buf();
    }
    let mut out = PathBuf::new();
    for _ in common..base.len() {
        out.push("..");
    }
    for c in &tgt[common..] {
        out.push(c.as_os_str());
    }
    out
}
