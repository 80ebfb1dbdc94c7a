//! Batch commands behind the `spanslot` binary.
//!
//! A run is fully described by a [`RunManifest`]. Training writes:
//!
//! ```text
//! <out>/manifest.json
//! <out>/vocab.txt
//! <out>/<slot>/model.json
//! <out>/<slot>/train_log.csv
//! ```
//!
//! Evaluation adds `predictions.jsonl`, `metrics.csv` and `error_counts.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, load_split, Dataset, DatasetFormat, EndConvention, LoadOptions, Utterance};
use crate::embeddings::{EmbeddingMode, PrecomputedEmbeddings};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{
    categorize_errors, error_counts_csv, exclusive_error_report, fraction_table_csv, metrics_csv, read_predictions,
    score_predictions, write_predictions, ErrorCounts, EvalItem, MetricsRow, SpanPrediction,
};
use crate::model::{DecodeMask, SlotExtractor};
use crate::tokenizer::Vocabulary;
use crate::trainer::{
    build_vocabulary, initial_provider_and_encoder, sample_fraction, train_slot, ConfigOverrides, Fraction, TrainConfig,
    TrainLog,
};

pub const OUT_ENV: &str = "SPANSLOT_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub data: PathBuf,
    pub format: DatasetFormat,
    #[serde(default)]
    pub end_convention: EndConvention,
    /// `None` trains every slot found in the data; an empty list trains nothing.
    #[serde(default)]
    pub slots: Option<Vec<String>>,
    pub mode: EmbeddingMode,
    #[serde(default)]
    pub embeddings_file: Option<PathBuf>,
    /// Existing vocabulary to use instead of inducing one from the train split.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    #[serde(default = "default_fraction")]
    pub fraction: String,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub decode_mask: DecodeMask,
    #[serde(default)]
    pub config: ConfigOverrides,
}

fn default_fraction() -> String {
    "1".into()
}

impl RunManifest {
    pub fn new(data: PathBuf, format: DatasetFormat, out: PathBuf) -> Self {
        RunManifest {
            data,
            format,
            end_convention: EndConvention::Exclusive,
            slots: None,
            mode: EmbeddingMode::Scratch,
            embeddings_file: None,
            vocab: None,
            fraction: default_fraction(),
            seed: 0,
            out,
            decode_mask: DecodeMask::Grammar,
            config: ConfigOverrides::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::parse(path, None, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn fraction(&self) -> Result<Fraction> {
        self.fraction.parse()
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            format: self.format,
            end_convention: self.end_convention,
        }
    }

    /// Training and encoder configuration after overrides.
    pub fn resolve(&self, embedding_dim: Option<usize>) -> Result<(TrainConfig, EncoderConfig)> {
        let mut train = TrainConfig {
            seed: self.seed,
            decode_mask: self.decode_mask,
            ..TrainConfig::default()
        };
        let mut encoder = match self.mode {
            EmbeddingMode::Scratch => EncoderConfig::vanilla(),
            EmbeddingMode::Precomputed => EncoderConfig::precomputed(embedding_dim.unwrap_or(0)),
        };
        self.config.apply(&mut train, &mut encoder);
        if let (EmbeddingMode::Precomputed, Some(d)) = (self.mode, embedding_dim) {
            if encoder.embedding_dim != d {
                return Err(Error::Config(format!(
                    "embedding_dim override {} conflicts with the embeddings file width {d}",
                    encoder.embedding_dim
                )));
            }
        }
        train.validate()?;
        encoder.validate()?;
        Ok((train, encoder))
    }

    fn precomputed(&self) -> Result<Option<Arc<PrecomputedEmbeddings>>> {
        match (self.mode, &self.embeddings_file) {
            (EmbeddingMode::Scratch, _) => Ok(None),
            (EmbeddingMode::Precomputed, Some(p)) => Ok(Some(Arc::new(PrecomputedEmbeddings::load(p)?))),
            (EmbeddingMode::Precomputed, None) => {
                Err(Error::Config("precomputed mode needs --embeddings-file".into()))
            }
        }
    }

    fn slot_list(&self, ds: &Dataset) -> Vec<String> {
        match &self.slots {
            Some(s) => s.clone(),
            None => ds.slot_names.clone(),
        }
    }
}

/// Directory name for a slot's artifacts.
pub fn slot_dir_name(slot: &str) -> String {
    slot.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

pub fn model_path(out: &Path, slot: &str) -> PathBuf {
    out.join(slot_dir_name(slot)).join("model.json")
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub train_size: usize,
    pub logs: Vec<(String, TrainLog)>,
}

/// Trains one extractor per slot and writes checkpoints and logs under `manifest.out`.
///
/// `workers` bounds the thread pool (0 = one per core). Outputs do not depend on it.
pub fn cmd_train(manifest: &RunManifest, workers: usize) -> Result<TrainSummary> {
    let full = load_dataset(&manifest.data, manifest.load_options())?;
    let ds = sample_fraction(&full, manifest.fraction()?, manifest.seed)?;
    train_on(manifest, &ds, workers)
}

fn train_on(manifest: &RunManifest, ds: &Dataset, workers: usize) -> Result<TrainSummary> {
    let slots = manifest.slot_list(ds);
    if slots.is_empty() {
        log::warn!("no slots to train; nothing to do");
        return Ok(TrainSummary {
            train_size: ds.train.len(),
            logs: Vec::new(),
        });
    }
    let precomputed = manifest.precomputed()?;
    let (train_cfg, enc_cfg) = manifest.resolve(precomputed.as_ref().map(|p| p.dim()))?;
    let vocab = match &manifest.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => {
            let texts: Vec<&str> = ds.train.iter().map(|u| u.text.as_str()).collect();
            build_vocabulary(&texts, train_cfg.vocab_size)?
        }
    };
    let vocab = Arc::new(vocab);
    let out = &manifest.out;
    create_dir(out)?;
    manifest.save(&out.join("manifest.json"))?;
    let vocab_path = out.join("vocab.txt");
    vocab.save(&vocab_path)?;

    let results: Vec<Result<(String, TrainLog)>> = with_workers(workers, || {
        use rayon::prelude::*;
        slots
            .par_iter()
            .map(|slot| {
                log::info!("training slot '{slot}' on {} utterances", ds.train.len());
                let (encoder, provider) =
                    initial_provider_and_encoder(slot, train_cfg.seed, &enc_cfg, &vocab, precomputed.clone())?;
                let (extractor, log) = train_slot(ds, slot, &train_cfg, encoder, Arc::clone(&vocab), provider)?;
                let path = model_path(out, slot);
                create_dir(path.parent().expect("slot dir"))?;
                extractor.save(&path, &vocab_path)?;
                write_file(&path.with_file_name("train_log.csv"), &log.to_csv())?;
                log::info!(
                    "slot '{slot}': best epoch {} of {}",
                    log.best_epoch,
                    log.epochs.len()
                );
                Ok((slot.clone(), log))
            })
            .collect()
    })?;
    Ok(TrainSummary {
        train_size: ds.train.len(),
        logs: results.into_iter().collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotEvaluation {
    pub slot: String,
    pub predictions: Vec<SpanPrediction>,
    pub row: MetricsRow,
    pub errors: ErrorCounts,
}

/// Predicts `slot` for every utterance with a loaded extractor.
pub fn predict_all(extractor: &SlotExtractor, utterances: &[Utterance]) -> Result<Vec<SpanPrediction>> {
    use rayon::prelude::*;
    utterances
        .par_iter()
        .map(|u| extractor.predict(&u.id, &u.text, u.is_requested(&extractor.slot)))
        .collect()
}

fn load_extractor(manifest: &RunManifest, slot: &str, precomputed: Option<Arc<PrecomputedEmbeddings>>) -> Result<SlotExtractor> {
    let mut ex = SlotExtractor::load(&model_path(&manifest.out, slot), precomputed)?;
    ex.decode_mask = manifest.decode_mask;
    Ok(ex)
}

fn evaluate_on(manifest: &RunManifest, ds: &Dataset, train_size: usize) -> Result<Vec<SlotEvaluation>> {
    let slots = manifest.slot_list(ds);
    let precomputed = manifest.precomputed()?;
    let fraction = manifest.fraction()?.to_string();
    let mut evals = Vec::with_capacity(slots.len());
    for slot in &slots {
        let extractor = load_extractor(manifest, slot, precomputed.clone())?;
        let predictions = predict_all(&extractor, &ds.dev)?;
        let golds: Vec<_> = ds.dev.iter().map(|u| u.span_for(slot)).collect();
        let score = score_predictions(&predictions, &golds)?;
        let spans: Vec<_> = predictions.iter().map(|p| p.span).collect();
        let errors = categorize_errors(&spans, &golds)?;
        if errors.total() != ds.dev.len() {
            return Err(Error::Eval(format!(
                "error partition for slot '{slot}' covers {} of {} utterances",
                errors.total(),
                ds.dev.len()
            )));
        }
        if score.vacuous {
            log::warn!("slot '{slot}': no gold or predicted spans; F1 reported as 1");
        }
        evals.push(SlotEvaluation {
            slot: slot.clone(),
            predictions,
            row: MetricsRow {
                slot: slot.clone(),
                fraction: fraction.clone(),
                train_size,
                score,
            },
            errors,
        });
    }
    let out = &manifest.out;
    create_dir(out)?;
    let all: Vec<SpanPrediction> = evals.iter().flat_map(|e| e.predictions.iter().cloned()).collect();
    write_predictions(&out.join("predictions.jsonl"), &all)?;
    let rows: Vec<MetricsRow> = evals.iter().map(|e| e.row.clone()).collect();
    write_file(&out.join("metrics.csv"), &metrics_csv(&rows))?;
    let counts: Vec<(String, ErrorCounts)> = evals.iter().map(|e| (e.slot.clone(), e.errors)).collect();
    write_file(&out.join("error_counts.csv"), &error_counts_csv(&counts))?;
    Ok(evals)
}

/// Scores trained checkpoints on the dev split.
pub fn cmd_eval(manifest: &RunManifest) -> Result<Vec<SlotEvaluation>> {
    let full = load_dataset(&manifest.data, manifest.load_options())?;
    if full.dev.is_empty() {
        log::warn!("dataset has no dev/test split; nothing to evaluate");
    }
    let train_size = manifest.fraction()?.size_of(full.train.len());
    evaluate_on(manifest, &full, train_size)
}

/// Trains and evaluates at each fraction; writes `<out>/fewshot.csv` (one row
/// per fraction) and `<out>/fewshot_metrics.csv` (one row per slot and fraction).
/// Each fraction's artifacts go to `<out>/fraction_<n>_<d>`.
pub fn cmd_fewshot(manifest: &RunManifest, fractions: &[Fraction], workers: usize) -> Result<Vec<MetricsRow>> {
    let full = load_dataset(&manifest.data, manifest.load_options())?;
    let mut rows = Vec::new();
    for &f in fractions {
        let sub = RunManifest {
            fraction: f.to_string(),
            out: manifest.out.join(format!("fraction_{}_{}", f.numerator, f.denominator)),
            ..manifest.clone()
        };
        let ds = sample_fraction(&full, f, manifest.seed)?;
        log::info!("fraction {f}: {} training utterances", ds.train.len());
        train_on(&sub, &ds, workers)?;
        rows.extend(evaluate_on(&sub, &ds, ds.train.len())?.into_iter().map(|e| e.row));
    }
    create_dir(&manifest.out)?;
    write_file(&manifest.out.join("fewshot.csv"), &fraction_table_csv(&rows))?;
    write_file(&manifest.out.join("fewshot_metrics.csv"), &metrics_csv(&rows))?;
    Ok(rows)
}

/// Runs the given checkpoints over an input split file (texts plus requested
/// slots; gold labels are ignored) and writes predictions as JSON lines.
pub fn cmd_predict(
    models: &[PathBuf],
    input: &Path,
    output: &Path,
    embeddings_file: Option<&Path>,
    decode_mask: Option<DecodeMask>,
) -> Result<Vec<SpanPrediction>> {
    let utterances = load_split(input, "input", EndConvention::Exclusive)?;
    let precomputed = embeddings_file
        .map(|p| PrecomputedEmbeddings::load(p).map(Arc::new))
        .transpose()?;
    let mut preds = Vec::new();
    for m in models {
        let mut ex = SlotExtractor::load(m, precomputed.clone())?;
        if let Some(mask) = decode_mask {
            ex.decode_mask = mask;
        }
        preds.extend(predict_all(&ex, &utterances)?);
    }
    write_predictions(output, &preds)?;
    Ok(preds)
}

/// Lists errors exclusive to each of two prediction files against the gold dev split.
pub fn cmd_error_report(
    data: &Path,
    options: LoadOptions,
    file_a: &Path,
    file_b: &Path,
    sample: Option<(usize, u64)>,
) -> Result<String> {
    let ds = load_dataset(data, options)?;
    let a = read_predictions(file_a)?;
    let b = read_predictions(file_b)?;
    let by_id: BTreeMap<&str, &Utterance> = ds.dev.iter().map(|u| (u.id.as_str(), u)).collect();
    let mut slots: Vec<&str> = Vec::new();
    for p in &a {
        if !slots.contains(&p.slot.as_str()) {
            slots.push(&p.slot);
        }
    }
    let mut out = String::new();
    for slot in slots {
        let ia = gold_items(&a, slot, &by_id, file_a)?;
        let ib = gold_items(&b, slot, &by_id, file_b)?;
        out.push_str(&format!("## slot {slot}\n"));
        out.push_str(&exclusive_error_report(
            &file_a.display().to_string(),
            &ia,
            &file_b.display().to_string(),
            &ib,
            sample,
        )?);
    }
    Ok(out)
}

fn gold_items<'a>(
    preds: &'a [SpanPrediction],
    slot: &str,
    by_id: &BTreeMap<&str, &'a Utterance>,
    file: &Path,
) -> Result<Vec<EvalItem<'a>>> {
    preds
        .iter()
        .filter(|p| p.slot == slot)
        .map(|p| {
            let u = by_id.get(p.id.as_str()).ok_or_else(|| {
                Error::Eval(format!("{}: utterance '{}' is not in the gold split", file.display(), p.id))
            })?;
            Ok(EvalItem {
                prediction: p,
                gold: u.span_for(slot),
                text: &u.text,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("data".into(), DatasetFormat::Restaurants8k, dir.path().into());
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(RunManifest::load(&p).unwrap(), m);
        let minimal: RunManifest =
            serde_json::from_str(r#"{"data": "d", "format": "restaurants8k", "mode": "scratch", "out": "o"}"#).unwrap();
        assert_eq!(minimal.fraction, "1");
        assert_eq!(minimal.slots, None);
        let (t, e) = minimal.resolve(None).unwrap();
        assert_eq!(t.learning_rate, 0.1);
        assert_eq!(e, EncoderConfig::vanilla());
    }

    #[test]
    fn precomputed_dim_conflict() {
        let mut m = RunManifest::new("d".into(), DatasetFormat::Restaurants8k, "o".into());
        m.mode = EmbeddingMode::Precomputed;
        assert_eq!(m.resolve(Some(16)).unwrap().1.embedding_dim, 16);
        m.config.embedding_dim = Some(8);
        assert!(m.resolve(Some(16)).is_err());
    }

    #[test]
    fn slot_dirs_are_sanitised() {
        assert_eq!(slot_dir_name("first_name"), "first_name");
        assert_eq!(slot_dir_name("a/b c"), "a_b_c");
    }
}
