//! Span-annotated dialog turns and the dataset adapters.
//!
//! All spans are half-open ranges of Unicode scalar values (`char`s) over the
//! original utterance text, never byte offsets.
//!
//! Two released layouts are understood, both normalised into the canonical
//! record shape
//! `{"id": str, "text": str, "requested_slots": [str], "labels": [{"slot": str, "start": int, "end": int}]}`:
//!
//! * the restaurant-booking release, whose records look like
//!   `{"userInput": {"text": ..}, "context": {"requestedSlots": [..]}, "labels": [{"slot": .., "valueSpan": {"startIndex": .., "endIndex": ..}}]}`
//!   (a missing `startIndex` means 0, as emitted by protobuf JSON);
//! * the filtered single-domain schema-guided dialog files, which use the
//!   same record layout.
//!
//! Canonical records are accepted by both adapters.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open character span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True when the two spans share at least one character.
    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// The covered substring of `text`, counted in chars.
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
        let begin = indices.by_ref().nth(self.start).unwrap_or(text.len());
        let end = if self.end > self.start {
            indices.nth(self.end - self.start - 1).unwrap_or(text.len())
        } else {
            begin
        };
        &text[begin..end]
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanLabel {
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

impl SpanLabel {
    pub fn span(&self) -> CharSpan {
        CharSpan::new(self.start, self.end)
    }
}

/// One user turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub requested_slots: BTreeSet<String>,
    pub labels: Vec<SpanLabel>,
}

impl Utterance {
    pub fn span_for(&self, slot: &str) -> Option<CharSpan> {
        self.labels.iter().find(|l| l.slot == slot).map(SpanLabel::span)
    }

    pub fn is_requested(&self, slot: &str) -> bool {
        self.requested_slots.contains(slot)
    }

    /// Checks span bounds, non-emptiness and the single-span-per-slot rule.
    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() {
            return Err(Error::validation(&self.id, "empty text"));
        }
        let len = self.text.chars().count();
        let mut seen = HashSet::new();
        for label in &self.labels {
            if !seen.insert(label.slot.as_str()) {
                return Err(Error::validation(
                    &self.id,
                    format!("more than one span for slot '{}'", label.slot),
                ));
            }
            if label.start >= label.end || label.end > len {
                return Err(Error::validation(
                    &self.id,
                    format!(
                        "span {} for slot '{}' out of bounds for text of {len} chars",
                        label.span(),
                        label.slot
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    /// Sorted names of every slot carrying a span somewhere in the data.
    pub slot_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, deriving `slot_names` and validating every invariant.
    pub fn new(name: impl Into<String>, train: Vec<Utterance>, dev: Vec<Utterance>) -> Result<Self> {
        let slot_names: BTreeSet<String> = train
            .iter()
            .chain(&dev)
            .flat_map(|u| u.labels.iter().map(|l| l.slot.clone()))
            .collect();
        let ds = Dataset {
            name: name.into(),
            train,
            dev,
            slot_names: slot_names.into_iter().collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let slots: HashSet<&str> = self.slot_names.iter().map(String::as_str).collect();
        let mut train_ids = HashSet::new();
        for u in &self.train {
            u.validate()?;
            if !train_ids.insert(u.id.as_str()) {
                return Err(Error::validation(&u.id, "duplicate id in train split"));
            }
        }
        let mut dev_ids = HashSet::new();
        for u in &self.dev {
            u.validate()?;
            if !dev_ids.insert(u.id.as_str()) {
                return Err(Error::validation(&u.id, "duplicate id in dev split"));
            }
            if train_ids.contains(u.id.as_str()) {
                return Err(Error::validation(&u.id, "id appears in both train and dev"));
            }
        }
        for u in self.train.iter().chain(&self.dev) {
            if let Some(l) = u.labels.iter().find(|l| !slots.contains(l.slot.as_str())) {
                return Err(Error::validation(&u.id, format!("unknown slot '{}'", l.slot)));
            }
        }
        Ok(())
    }
}

/// Per-slot statistics: utterances with a span, utterances where the slot was requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlotCount {
    pub with_span: usize,
    pub requested: usize,
}

/// Counts spans and requests per slot over a list of utterances.
///
/// Every slot in `slot_names` appears in the result, even with zero counts.
pub fn slot_counts(utterances: &[Utterance], slot_names: &[String]) -> BTreeMap<String, SlotCount> {
    let mut counts: BTreeMap<String, SlotCount> =
        slot_names.iter().map(|s| (s.clone(), SlotCount::default())).collect();
    for u in utterances {
        for l in &u.labels {
            counts.entry(l.slot.clone()).or_default().with_span += 1;
        }
        for s in &u.requested_slots {
            if let Some(c) = counts.get_mut(s) {
                c.requested += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Restaurants8k,
    Dstc8SingleDomain,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "restaurants8k" | "restaurants_8k" => Ok(DatasetFormat::Restaurants8k),
            "dstc8" | "dstc8_single_domain" => Ok(DatasetFormat::Dstc8SingleDomain),
            other => Err(Error::Config(format!("unknown dataset format '{other}'"))),
        }
    }
}

/// How a source encodes the end index of its spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndConvention {
    #[default]
    Exclusive,
    Inclusive,
}

impl FromStr for EndConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclusive" => Ok(EndConvention::Exclusive),
            "inclusive" => Ok(EndConvention::Inclusive),
            other => Err(Error::Config(format!("unknown end convention '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub format: DatasetFormat,
    pub end_convention: EndConvention,
}

impl LoadOptions {
    pub fn new(format: DatasetFormat) -> Self {
        LoadOptions {
            format,
            end_convention: EndConvention::Exclusive,
        }
    }
}

#[derive(Deserialize)]
struct RawUserInput {
    #[serde(default)]
    text: String,
}

#[derive(Deserialize)]
struct RawContext {
    #[serde(default, rename = "requestedSlots", alias = "requested_slots")]
    requested_slots: Vec<String>,
}

#[derive(Deserialize)]
struct RawValueSpan {
    #[serde(default, rename = "startIndex", alias = "start_index")]
    start_index: i64,
    #[serde(rename = "endIndex", alias = "end_index")]
    end_index: Option<i64>,
}

#[derive(Deserialize)]
struct RawLabel {
    slot: String,
    start: Option<i64>,
    end: Option<i64>,
    #[serde(rename = "valueSpan", alias = "value_span")]
    value_span: Option<RawValueSpan>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
    #[serde(rename = "userInput", alias = "user_input")]
    user_input: Option<RawUserInput>,
    requested_slots: Option<Vec<String>>,
    context: Option<RawContext>,
    #[serde(default)]
    labels: Vec<RawLabel>,
}

fn to_index(v: i64, what: &str) -> std::result::Result<usize, String> {
    usize::try_from(v).map_err(|_| format!("negative {what} index {v}"))
}

impl RawRecord {
    fn into_utterance(self, default_id: String, ends: EndConvention) -> std::result::Result<Utterance, String> {
        let id = self.id.unwrap_or(default_id);
        let text = self
            .text
            .or(self.user_input.map(|u| u.text))
            .ok_or_else(|| "record has no text".to_string())?;
        let requested_slots = self
            .requested_slots
            .or(self.context.map(|c| c.requested_slots))
            .unwrap_or_default()
            .into_iter()
            .collect();
        let mut labels = Vec::with_capacity(self.labels.len());
        for raw in self.labels {
            let (start, end) = match (raw.start, raw.end, raw.value_span) {
                (Some(s), Some(e), _) => (s, e),
                (_, _, Some(vs)) => (
                    vs.start_index,
                    vs.end_index
                        .ok_or_else(|| format!("label for slot '{}' has no end index", raw.slot))?,
                ),
                _ => return Err(format!("label for slot '{}' has no span", raw.slot)),
            };
            let start = to_index(start, "start")?;
            let mut end = to_index(end, "end")?;
            if ends == EndConvention::Inclusive {
                end += 1;
            }
            labels.push(SpanLabel {
                slot: raw.slot,
                start,
                end,
            });
        }
        Ok(Utterance {
            id,
            text,
            requested_slots,
            labels,
        })
    }
}

/// Reads one split file. Records without an `id` get `"{prefix}-{index}"`.
pub fn load_split(path: &Path, id_prefix: &str, ends: EndConvention) -> Result<Vec<Utterance>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<serde_json::Value> =
        serde_json::from_str(&raw).map_err(|e| Error::parse(path, None, e))?;
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        let record: RawRecord = serde_json::from_value(v).map_err(|e| Error::parse(path, Some(i), e))?;
        let utt = record
            .into_utterance(format!("{id_prefix}-{i}"), ends)
            .map_err(|m| Error::parse(path, Some(i), m))?;
        utt.validate()?;
        out.push(utt);
    }
    Ok(out)
}

/// Writes utterances in the canonical schema.
pub fn save_split(path: &Path, utterances: &[Utterance]) -> Result<()> {
    let json = serde_json::to_string_pretty(utterances).expect("utterances serialize");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Split files in `dir` whose stem is `name` or `name_<n>`, ordered by `n`.
fn split_files(dir: &Path, names: &[&str]) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        for name in names {
            if stem == *name {
                found.push((0, path.clone()));
            } else if let Some(n) = stem
                .strip_prefix(name)
                .and_then(|rest| rest.strip_prefix('_'))
                .and_then(|n| n.parse::<u64>().ok())
            {
                found.push((n + 1, path.clone()));
            }
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Loads a dataset from a directory of split files or from a single file.
///
/// A directory must contain `train.json` (or `train_<n>.json` shards) and may
/// contain `dev.json` / `test.json` (or shards); the first of dev/test found
/// is the evaluation split. A single file is loaded as the train split with an
/// empty dev split.
pub fn load_dataset(path: &Path, options: LoadOptions) -> Result<Dataset> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let ends = options.end_convention;
    if path.is_file() {
        let train = load_split(path, "train", ends)?;
        return Dataset::new(name, train, Vec::new());
    }
    if !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such dataset file or directory"),
        ));
    }
    let train_files = split_files(path, &["train"])?;
    if train_files.is_empty() {
        return Err(Error::parse(path, None, "no train.json or train_<n>.json in directory"));
    }
    let mut train = Vec::new();
    for f in &train_files {
        let offset = train.len();
        let mut part = load_split(f, "train", ends)?;
        reindex_defaults(&mut part, "train", offset);
        train.extend(part);
    }
    let mut dev = Vec::new();
    for names in [&["dev"][..], &["test"][..]] {
        let files = split_files(path, names)?;
        if files.is_empty() {
            continue;
        }
        for f in &files {
            let offset = dev.len();
            let mut part = load_split(f, names[0], ends)?;
            reindex_defaults(&mut part, names[0], offset);
            dev.extend(part);
        }
        break;
    }
    log::debug!(
        "loaded {} ({:?}): {} train / {} dev",
        path.display(),
        options.format,
        train.len(),
        dev.len()
    );
    Dataset::new(name, train, dev)
}

/// Shifts generated ids of a shard so that ids stay unique across shards.
fn reindex_defaults(part: &mut [Utterance], prefix: &str, offset: usize) {
    if offset == 0 {
        return;
    }
    for (i, u) in part.iter_mut().enumerate() {
        if u.id == format!("{prefix}-{i}") {
            u.id = format!("{prefix}-{}", offset + i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn utt(id: &str, text: &str, req: &[&str], labels: &[(&str, usize, usize)]) -> Utterance {
        Utterance {
            id: id.into(),
            text: text.into(),
            requested_slots: req.iter().map(|s| s.to_string()).collect(),
            labels: labels
                .iter()
                .map(|&(s, a, b)| SpanLabel {
                    slot: s.into(),
                    start: a,
                    end: b,
                })
                .collect(),
        }
    }

    fn write_tmp(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(dir.path(), "train.json", "[]");
        let ds = load_dataset(&p, LoadOptions::new(DatasetFormat::Restaurants8k)).unwrap();
        assert!(ds.train.is_empty() && ds.dev.is_empty());
        assert!(ds.slot_names.is_empty());
    }

    #[test]
    fn minimal_canonical_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            dir.path(),
            "one.json",
            r#"[{"text":"7","requested_slots":["people"],"labels":[{"slot":"people","start":0,"end":1}]}]"#,
        );
        let ds = load_dataset(&p, LoadOptions::new(DatasetFormat::Restaurants8k)).unwrap();
        assert_eq!(ds.train.len(), 1);
        let u = &ds.train[0];
        assert_eq!(u.span_for("people").unwrap().slice(&u.text), "7");
        assert!(u.is_requested("people"));
        assert_eq!(ds.slot_names, vec!["people".to_string()]);
    }

    #[test]
    fn released_restaurant_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_tmp(
            dir.path(),
            "train_0.json",
            r#"[{"userInput":{"text":"for 4 people"},"context":{"requestedSlots":["people"]},
                 "labels":[{"slot":"people","valueSpan":{"startIndex":4,"endIndex":12}}],"extra":1},
                {"userInput":{"text":"Joe"},"labels":[{"slot":"first_name","valueSpan":{"endIndex":3}}]}]"#,
        );
        write_tmp(
            dir.path(),
            "train_1.json",
            r#"[{"userInput":{"text":"tomorrow"},"labels":[{"slot":"date","valueSpan":{"endIndex":8}}]}]"#,
        );
        write_tmp(dir.path(), "test.json", r#"[{"userInput":{"text":"hi"}}]"#);
        let ds = load_dataset(dir.path(), LoadOptions::new(DatasetFormat::Restaurants8k)).unwrap();
        assert_eq!(ds.train.len(), 3);
        assert_eq!(ds.dev.len(), 1);
        assert_eq!(ds.train[0].span_for("people").unwrap().slice(&ds.train[0].text), "4 people");
        assert_eq!(ds.train[1].span_for("first_name"), Some(CharSpan::new(0, 3)));
        let ids: Vec<_> = ds.train.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["train-0", "train-1", "train-2"]);
        assert_eq!(ds.dev[0].id, "test-0");
        assert_eq!(ds.slot_names, ["date", "first_name", "people"]);
    }

    #[test]
    fn inclusive_end_convention_is_shifted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            dir.path(),
            "train.json",
            r#"[{"text":"at 8pm","labels":[{"slot":"time","start":3,"end":5}]}]"#,
        );
        let opts = LoadOptions {
            format: DatasetFormat::Dstc8SingleDomain,
            end_convention: EndConvention::Inclusive,
        };
        let ds = load_dataset(&p, opts).unwrap();
        assert_eq!(ds.train[0].span_for("time").unwrap().slice("at 8pm"), "8pm");
    }

    #[test]
    fn out_of_bounds_span_names_utterance() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            dir.path(),
            "train.json",
            r#"[{"id":"u9","text":"abc","labels":[{"slot":"x","start":1,"end":4}]}]"#,
        );
        let err = load_dataset(&p, LoadOptions::new(DatasetFormat::Restaurants8k)).unwrap_err();
        assert!(matches!(err, Error::Validation { ref utterance, .. } if utterance == "u9"), "{err}");
    }

    #[test]
    fn duplicate_slot_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            dir.path(),
            "train.json",
            r#"[{"id":"d","text":"5pm not 6pm","labels":[{"slot":"time","start":0,"end":3},{"slot":"time","start":8,"end":11}]}]"#,
        );
        let err = load_dataset(&p, LoadOptions::new(DatasetFormat::Restaurants8k)).unwrap_err();
        assert!(err.to_string().contains("more than one span"), "{err}");
    }

    #[test]
    fn malformed_json_reports_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(dir.path(), "train.json", r#"[{"text":"ok"},{"text":5}]"#);
        let err = load_dataset(&p, LoadOptions::new(DatasetFormat::Restaurants8k)).unwrap_err();
        assert!(matches!(err, Error::Parse { record: Some(1), .. }), "{err}");
    }

    #[test]
    fn train_dev_overlap_rejected() {
        let a = utt("same", "x", &[], &[]);
        let err = Dataset::new("d", vec![a.clone()], vec![a]).unwrap_err();
        assert!(err.to_string().contains("both train and dev"));
    }

    #[test]
    fn counts_direct() {
        let us = vec![
            utt("a", "today", &["date"], &[("date", 0, 5)]),
            utt("b", "tomorrow", &[], &[("date", 0, 8)]),
            utt("c", "no", &[], &[]),
        ];
        let c = slot_counts(&us, &["date".to_string()]);
        assert_eq!(c["date"], SlotCount { with_span: 2, requested: 1 });

        let empty = slot_counts(&[utt("z", "x", &[], &[])], &["date".to_string()]);
        assert_eq!(empty["date"], SlotCount::default());
    }

    #[test]
    fn char_spans_are_not_bytes() {
        let text = "café at 8pm";
        assert_eq!(CharSpan::new(8, 11).slice(text), "8pm");
        assert_eq!(CharSpan::new(0, 4).slice(text), "café");
    }

    #[test]
    fn canonical_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let us = vec![
            utt("a", "table for 2 at 8pm", &["people"], &[("people", 10, 11), ("time", 15, 18)]),
            utt("b", "hello", &[], &[]),
        ];
        let p = dir.path().join("train.json");
        save_split(&p, &us).unwrap();
        let back = load_split(&p, "train", EndConvention::Exclusive).unwrap();
        assert_eq!(back, us);
    }
}
