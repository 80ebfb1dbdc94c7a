//! Generated datasets with known gold spans, for smoke tests and demos.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, SpanLabel, Utterance};
use crate::embeddings::PrecomputedEmbeddings;
use crate::error::Result;
use crate::tokenizer::Vocabulary;
use crate::trainer::mix_seed;

pub const DIGIT_SLOT: &str = "number";

const WORDS: &[&str] = &[
    "table", "for", "people", "please", "at", "book", "me", "a", "the", "tonight", "call", "room", "around", "we", "are",
    "need", "seats", "party", "of", "on", "floor", "maybe", "about", "thanks", "ok",
];

fn digit_utterance(id: String, rng: &mut ChaCha8Rng) -> Utterance {
    let n_words = rng.gen_range(1..=6);
    let mut words: Vec<String> = (0..n_words).map(|_| WORDS.choose(rng).expect("non-empty").to_string()).collect();
    let has_number = rng.gen_bool(0.8);
    let mut labels = Vec::new();
    if has_number {
        let len = rng.gen_range(1..=4);
        let digits: String = (0..len).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect();
        let at = rng.gen_range(0..=words.len());
        words.insert(at, digits.clone());
        let start: usize = words[..at].iter().map(|w| w.chars().count() + 1).sum();
        labels.push(SpanLabel {
            slot: DIGIT_SLOT.into(),
            start,
            end: start + digits.chars().count(),
        });
    }
    let mut requested = BTreeSet::new();
    if rng.gen_bool(0.5) {
        requested.insert(DIGIT_SLOT.to_string());
    }
    Utterance {
        id,
        text: words.join(" "),
        requested_slots: requested,
        labels,
    }
}

/// Short word sequences where the slot is the single maximal digit run, if any
/// (about 80% of utterances carry one).
pub fn digit_dataset(n_train: usize, n_dev: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = (0..n_train).map(|i| digit_utterance(format!("train-{i}"), &mut rng)).collect();
    let dev = (0..n_dev).map(|i| digit_utterance(format!("dev-{i}"), &mut rng)).collect();
    let mut ds = Dataset::new("synthetic-digits", train, dev)?;
    if ds.slot_names.is_empty() {
        ds.slot_names.push(DIGIT_SLOT.into());
    }
    Ok(ds)
}

/// Stand-in for an external contextual encoder: each token gets a fixed
/// random vector for its piece plus half the mean of its neighbours' vectors.
pub fn synthetic_precomputed(
    utterances: &[Utterance],
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<PrecomputedEmbeddings> {
    let mut table: HashMap<String, Vec<f64>> = HashMap::new();
    let mut store = PrecomputedEmbeddings::new(dim);
    for u in utterances {
        let tokens = vocab.tokenize(&u.text);
        let base: Vec<Vec<f64>> = tokens
            .tokens
            .iter()
            .map(|t| {
                table
                    .entry(t.piece.clone())
                    .or_insert_with(|| {
                        let h = t.piece.bytes().fold(seed, |h, b| mix_seed(h, b as u64));
                        let mut rng = ChaCha8Rng::seed_from_u64(h);
                        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
                    })
                    .clone()
            })
            .collect();
        let vectors: Vec<Vec<f64>> = (0..base.len())
            .map(|t| {
                let neighbours: Vec<&Vec<f64>> = [t.checked_sub(1), Some(t + 1)]
                    .into_iter()
                    .flatten()
                    .filter_map(|j| base.get(j))
                    .collect();
                (0..dim)
                    .map(|k| {
                        let ctx = if neighbours.is_empty() {
                            0.0
                        } else {
                            neighbours.iter().map(|v| v[k]).sum::<f64>() / neighbours.len() as f64
                        };
                        base[t][k] + 0.5 * ctx
                    })
                    .collect()
            })
            .collect();
        store.insert(u.id.clone(), &vectors)?;
    }
    Ok(store)
}
