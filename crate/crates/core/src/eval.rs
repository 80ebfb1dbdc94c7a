//! Exact-match span scoring, the four-way error taxonomy and report writers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CharSpan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    pub id: String,
    pub slot: String,
    pub span: Option<CharSpan>,
    /// Probability of the decoded tag sequence under the model.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorCategory {
    /// No span predicted, gold has one.
    MissedSpan = 1,
    /// Span predicted, gold has none.
    SpuriousSpan = 2,
    NonOverlapping = 3,
    Overlapping = 4,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::MissedSpan,
        ErrorCategory::SpuriousSpan,
        ErrorCategory::NonOverlapping,
        ErrorCategory::Overlapping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::MissedSpan => "missed_span",
            ErrorCategory::SpuriousSpan => "spurious_span",
            ErrorCategory::NonOverlapping => "non_overlapping",
            ErrorCategory::Overlapping => "overlapping",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    ExactMatch,
    TrueNegative,
    Error(ErrorCategory),
}

pub fn classify(pred: Option<CharSpan>, gold: Option<CharSpan>) -> Outcome {
    match (pred, gold) {
        (None, None) => Outcome::TrueNegative,
        (Some(p), Some(g)) if p == g => Outcome::ExactMatch,
        (None, Some(_)) => Outcome::Error(ErrorCategory::MissedSpan),
        (Some(_), None) => Outcome::Error(ErrorCategory::SpuriousSpan),
        (Some(p), Some(g)) if p.overlaps(&g) => Outcome::Error(ErrorCategory::Overlapping),
        (Some(_), Some(_)) => Outcome::Error(ErrorCategory::NonOverlapping),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No gold and no predicted spans at all; P, R and F1 are reported as 1.
    pub vacuous: bool,
}

fn check_aligned(preds: usize, golds: usize) -> Result<()> {
    if preds != golds {
        return Err(Error::Eval(format!("{preds} predictions for {golds} gold entries")));
    }
    Ok(())
}

/// Exact-match precision, recall and F1.
///
/// A predicted span that differs from a present gold span counts as both a
/// false positive and a false negative.
pub fn score_slot(preds: &[Option<CharSpan>], golds: &[Option<CharSpan>]) -> Result<SlotScore> {
    check_aligned(preds.len(), golds.len())?;
    let mut s = SlotScore::default();
    for (p, g) in preds.iter().zip(golds) {
        match (p, g) {
            (Some(p), Some(g)) if p == g => s.true_positives += 1,
            _ => {
                s.false_positives += p.is_some() as usize;
                s.false_negatives += g.is_some() as usize;
            }
        }
    }
    let (tp, fp, fnn) = (s.true_positives, s.false_positives, s.false_negatives);
    if tp + fp + fnn == 0 {
        s.vacuous = true;
        s.precision = 1.0;
        s.recall = 1.0;
        s.f1 = 1.0;
        return Ok(s);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    s.precision = ratio(tp, tp + fp);
    s.recall = ratio(tp, tp + fnn);
    s.f1 = if s.precision + s.recall == 0.0 {
        0.0
    } else {
        2.0 * s.precision * s.recall / (s.precision + s.recall)
    };
    Ok(s)
}

pub fn score_predictions(preds: &[SpanPrediction], golds: &[Option<CharSpan>]) -> Result<SlotScore> {
    let spans: Vec<_> = preds.iter().map(|p| p.span).collect();
    score_slot(&spans, golds)
}

/// Unweighted mean over slots.
pub fn average_f1(per_slot: &BTreeMap<String, f64>) -> Result<f64> {
    if per_slot.is_empty() {
        return Err(Error::Eval("no slots to average".into()));
    }
    Ok(per_slot.values().sum::<f64>() / per_slot.len() as f64)
}

/// Full partition of one slot's utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ErrorCounts {
    pub exact_match: usize,
    pub true_negative: usize,
    pub missed_span: usize,
    pub spurious_span: usize,
    pub non_overlapping: usize,
    pub overlapping: usize,
}

impl ErrorCounts {
    pub fn get(&self, c: ErrorCategory) -> usize {
        match c {
            ErrorCategory::MissedSpan => self.missed_span,
            ErrorCategory::SpuriousSpan => self.spurious_span,
            ErrorCategory::NonOverlapping => self.non_overlapping,
            ErrorCategory::Overlapping => self.overlapping,
        }
    }

    pub fn errors(&self) -> usize {
        ErrorCategory::ALL.iter().map(|&c| self.get(c)).sum()
    }

    pub fn total(&self) -> usize {
        self.exact_match + self.true_negative + self.errors()
    }
}

pub fn categorize_errors(preds: &[Option<CharSpan>], golds: &[Option<CharSpan>]) -> Result<ErrorCounts> {
    check_aligned(preds.len(), golds.len())?;
    let mut c = ErrorCounts::default();
    for (&p, &g) in preds.iter().zip(golds) {
        match classify(p, g) {
            Outcome::ExactMatch => c.exact_match += 1,
            Outcome::TrueNegative => c.true_negative += 1,
            Outcome::Error(ErrorCategory::MissedSpan) => c.missed_span += 1,
            Outcome::Error(ErrorCategory::SpuriousSpan) => c.spurious_span += 1,
            Outcome::Error(ErrorCategory::NonOverlapping) => c.non_overlapping += 1,
            Outcome::Error(ErrorCategory::Overlapping) => c.overlapping += 1,
        }
    }
    debug_assert_eq!(c.total(), preds.len());
    Ok(c)
}

/// One utterance under evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem<'a> {
    pub prediction: &'a SpanPrediction,
    pub gold: Option<CharSpan>,
    pub text: &'a str,
}

fn render_span(text: &str, span: Option<CharSpan>) -> String {
    match span {
        Some(s) => format!("\"{}\"{}", s.slice(text), s),
        None => "-".into(),
    }
}

fn report_line(out: &mut String, item: &EvalItem<'_>, category: ErrorCategory) {
    let p = item.prediction;
    let confidence = if p.span.is_some() {
        format!("{:.4}", p.confidence)
    } else {
        "N/A".into()
    };
    let _ = writeln!(
        out,
        "{confidence}\t{category}\t{}\tpred={}\tgold={}\t{}",
        p.id,
        render_span(item.text, p.span),
        render_span(item.text, item.gold),
        item.text
    );
}

/// One line per error: confidence, category, id, predicted span, gold span, text.
///
/// Errors are listed in input order, or as a seeded random sample of at most
/// `n` errors (still in input order) when `sample = Some((n, seed))`. Missed
/// spans show `N/A` for confidence.
pub fn error_report(items: &[EvalItem<'_>], sample: Option<(usize, u64)>) -> String {
    let mut errors: Vec<(usize, ErrorCategory)> = items
        .iter()
        .enumerate()
        .filter_map(|(i, it)| match classify(it.prediction.span, it.gold) {
            Outcome::Error(c) => Some((i, c)),
            _ => None,
        })
        .collect();
    if let Some((n, seed)) = sample {
        if errors.len() > n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            errors.shuffle(&mut rng);
            errors.truncate(n);
            errors.sort();
        }
    }
    let mut out = String::new();
    for (i, c) in errors {
        report_line(&mut out, &items[i], c);
    }
    out
}

/// Indices where model A errs and model B gets the utterance right.
pub fn exclusive_errors(a: &[Option<CharSpan>], b: &[Option<CharSpan>], golds: &[Option<CharSpan>]) -> Result<Vec<usize>> {
    check_aligned(a.len(), golds.len())?;
    check_aligned(b.len(), golds.len())?;
    let wrong = |p: Option<CharSpan>, g: Option<CharSpan>| matches!(classify(p, g), Outcome::Error(_));
    Ok((0..golds.len())
        .filter(|&i| wrong(a[i], golds[i]) && !wrong(b[i], golds[i]))
        .collect())
}

/// Errors exclusive to each of two models, each listing optionally sampled.
pub fn exclusive_error_report(
    label_a: &str,
    items_a: &[EvalItem<'_>],
    label_b: &str,
    items_b: &[EvalItem<'_>],
    sample: Option<(usize, u64)>,
) -> Result<String> {
    check_aligned(items_a.len(), items_b.len())?;
    for (a, b) in items_a.iter().zip(items_b) {
        if a.prediction.id != b.prediction.id || a.gold != b.gold {
            return Err(Error::Eval(format!(
                "prediction files misaligned at '{}' / '{}'",
                a.prediction.id, b.prediction.id
            )));
        }
    }
    let golds: Vec<_> = items_a.iter().map(|i| i.gold).collect();
    let pa: Vec<_> = items_a.iter().map(|i| i.prediction.span).collect();
    let pb: Vec<_> = items_b.iter().map(|i| i.prediction.span).collect();
    let mut out = String::new();
    for (label, only, items) in [
        (label_a, exclusive_errors(&pa, &pb, &golds)?, items_a),
        (label_b, exclusive_errors(&pb, &pa, &golds)?, items_b),
    ] {
        let _ = writeln!(out, "# errors exclusive to {label}: {}", only.len());
        let subset: Vec<EvalItem<'_>> = only.iter().map(|&i| items[i].clone()).collect();
        out.push_str(&error_report(&subset, sample));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    slot: String,
    start: Option<usize>,
    end: Option<usize>,
    confidence: f64,
}

pub fn write_predictions(path: &Path, preds: &[SpanPrediction]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for p in preds {
        let rec = PredictionRecord {
            id: p.id.clone(),
            slot: p.slot.clone(),
            start: p.span.map(|s| s.start),
            end: p.span.map(|s| s.end),
            confidence: p.confidence,
        };
        writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<SpanPrediction>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, Some(i), e))?;
        let span = match (r.start, r.end) {
            (Some(s), Some(e)) if s < e => Some(CharSpan::new(s, e)),
            (None, None) => None,
            _ => return Err(Error::parse(path, Some(i), "start/end must both be null or form a non-empty span")),
        };
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(Error::parse(path, Some(i), "confidence outside [0, 1]"));
        }
        out.push(SpanPrediction {
            id: r.id,
            slot: r.slot,
            span,
            confidence: r.confidence,
        });
    }
    Ok(out)
}

/// Groups predictions by slot, then indexes them by utterance id.
pub fn index_predictions(preds: &[SpanPrediction]) -> HashMap<(&str, &str), &SpanPrediction> {
    preds.iter().map(|p| ((p.slot.as_str(), p.id.as_str()), p)).collect()
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub slot: String,
    pub fraction: String,
    pub train_size: usize,
    pub score: SlotScore,
}

/// `slot,fraction,train_size,precision,recall,f1,tp,fp,fn,vacuous` rows plus
/// an `average` row per fraction.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("slot,fraction,train_size,precision,recall,f1,tp,fp,fn,vacuous\n");
    let mut fractions: Vec<(&str, usize)> = Vec::new();
    for r in rows {
        if !fractions.iter().any(|(f, _)| *f == r.fraction) {
            fractions.push((&r.fraction, r.train_size));
        }
    }
    for (fraction, size) in fractions {
        let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.fraction == fraction).collect();
        for r in &group {
            let s = &r.score;
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.4},{},{},{},{}",
                r.slot,
                r.fraction,
                r.train_size,
                s.precision,
                s.recall,
                s.f1,
                s.true_positives,
                s.false_positives,
                s.false_negatives,
                s.vacuous
            );
        }
        let mean = |f: fn(&SlotScore) -> f64| group.iter().map(|r| f(&r.score)).sum::<f64>() / group.len() as f64;
        let _ = writeln!(
            out,
            "average,{fraction},{size},{:.4},{:.4},{:.4},,,,",
            mean(|s| s.precision),
            mean(|s| s.recall),
            mean(|s| s.f1)
        );
    }
    out
}

/// Wide table: one row per fraction, `fraction,train_size,<slot..>,average` F1 columns.
pub fn fraction_table_csv(rows: &[MetricsRow]) -> String {
    let mut slots: Vec<&str> = Vec::new();
    let mut fractions: Vec<(&str, usize)> = Vec::new();
    for r in rows {
        if !slots.contains(&r.slot.as_str()) {
            slots.push(&r.slot);
        }
        if !fractions.iter().any(|(f, _)| *f == r.fraction) {
            fractions.push((&r.fraction, r.train_size));
        }
    }
    let mut out = format!("fraction,train_size,{},average\n", slots.join(","));
    for (fraction, size) in fractions {
        let mut per_slot = BTreeMap::new();
        let mut cells = Vec::new();
        for slot in &slots {
            match rows.iter().find(|r| r.fraction == fraction && r.slot == *slot) {
                Some(r) => {
                    per_slot.insert(slot.to_string(), r.score.f1);
                    cells.push(format!("{:.4}", r.score.f1));
                }
                None => cells.push(String::new()),
            }
        }
        let avg = average_f1(&per_slot).map(|a| format!("{a:.4}")).unwrap_or_default();
        let _ = writeln!(out, "{fraction},{size},{},{avg}", cells.join(","));
    }
    out
}

/// `slot,exact_match,true_negative,missed_span,spurious_span,non_overlapping,overlapping,total`
pub fn error_counts_csv(counts: &[(String, ErrorCounts)]) -> String {
    let mut out = String::from("slot,exact_match,true_negative,missed_span,spurious_span,non_overlapping,overlapping,total\n");
    for (slot, c) in counts {
        let _ = writeln!(
            out,
            "{slot},{},{},{},{},{},{},{}",
            c.exact_match,
            c.true_negative,
            c.missed_span,
            c.spurious_span,
            c.non_overlapping,
            c.overlapping,
            c.total()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(a: usize, b: usize) -> Option<CharSpan> {
        Some(CharSpan::new(a, b))
    }

    #[test]
    fn exact_vs_longer() {
        let sc = score_slot(&[s(0, 3)], &[s(0, 3)]).unwrap();
        assert_eq!((sc.true_positives, sc.false_positives, sc.false_negatives), (1, 0, 0));
        let sc = score_slot(&[s(0, 4)], &[s(0, 3)]).unwrap();
        assert_eq!((sc.true_positives, sc.false_positives, sc.false_negatives), (0, 1, 1));
        assert_eq!(sc.f1, 0.0);
    }

    #[test]
    fn vacuous_case() {
        let sc = score_slot(&[None, None], &[None, None]).unwrap();
        assert!(sc.vacuous);
        assert_eq!((sc.precision, sc.recall, sc.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_thirds() {
        let preds = [s(0, 1), s(2, 3), s(4, 5), None];
        let golds = [s(0, 1), s(2, 3), None, s(6, 7)];
        let sc = score_slot(&preds, &golds).unwrap();
        for v in [sc.precision, sc.recall, sc.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
        assert!(score_slot(&preds, &golds[..3]).is_err());
    }

    #[test]
    fn averages() {
        let m: BTreeMap<String, f64> = [("a".into(), 1.0), ("b".into(), 0.0)].into();
        assert_eq!(average_f1(&m).unwrap(), 0.5);
        let one: BTreeMap<String, f64> = [("a".into(), 0.7)].into();
        assert_eq!(average_f1(&one).unwrap(), 0.7);
        assert!(average_f1(&BTreeMap::new()).is_err());
        // Per-slot full-data values of the from-scratch baseline: date, first_name, last_name, people, time.
        let table: BTreeMap<String, f64> = [
            ("date", 0.95),
            ("first_name", 0.92),
            ("last_name", 0.91),
            ("people", 0.94),
            ("time", 0.95),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let avg = average_f1(&table).unwrap();
        assert!((avg - 0.934).abs() < 1e-12);
        assert_eq!(format!("{avg:.2}"), "0.93");
        assert!((avg - 0.94).abs() <= 0.01);
    }

    #[test]
    fn categories() {
        assert_eq!(classify(None, s(0, 3)), Outcome::Error(ErrorCategory::MissedSpan));
        assert_eq!(classify(s(0, 3), None), Outcome::Error(ErrorCategory::SpuriousSpan));
        assert_eq!(classify(s(5, 8), s(0, 3)), Outcome::Error(ErrorCategory::NonOverlapping));
        assert_eq!(classify(s(0, 5), s(0, 3)), Outcome::Error(ErrorCategory::Overlapping));
        assert_eq!(classify(s(3, 5), s(0, 3)), Outcome::Error(ErrorCategory::NonOverlapping));
    }

    fn pred(id: &str, span: Option<CharSpan>, confidence: f64) -> SpanPrediction {
        SpanPrediction {
            id: id.into(),
            slot: "time".into(),
            span,
            confidence,
        }
    }

    #[test]
    fn report_lines() {
        let p = pred("u1", s(12, 28), 0.8);
        let text = "a table for 8pm this evening";
        let item = EvalItem {
            prediction: &p,
            gold: s(12, 15),
            text,
        };
        let r = error_report(&[item], None);
        assert_eq!(r.lines().count(), 1);
        assert!(r.contains("overlapping") && r.contains("\"8pm\"") && r.contains("\"8pm this evening\""), "{r}");

        let ok = pred("u2", s(12, 15), 0.9);
        let good = EvalItem {
            prediction: &ok,
            gold: s(12, 15),
            text,
        };
        assert_eq!(error_report(&[good], None), "");
    }

    #[test]
    fn report_sampling_is_seeded() {
        let preds: Vec<_> = (0..20).map(|i| pred(&format!("u{i}"), s(0, 1), 0.5)).collect();
        let items: Vec<_> = preds
            .iter()
            .map(|p| EvalItem {
                prediction: p,
                gold: None,
                text: "x",
            })
            .collect();
        let a = error_report(&items, Some((5, 3)));
        assert_eq!(a.lines().count(), 5);
        assert_eq!(a, error_report(&items, Some((5, 3))));
    }

    #[test]
    fn exclusive_diff() {
        let golds = [s(0, 3), None, s(4, 6)];
        let a = [s(0, 3), s(1, 2), None];
        let b = [None, None, None];
        assert_eq!(exclusive_errors(&a, &b, &golds).unwrap(), vec![1]);
        assert_eq!(exclusive_errors(&b, &a, &golds).unwrap(), vec![0]);
    }

    #[test]
    fn predictions_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let preds = vec![pred("a", s(1, 4), 0.25), pred("b", None, 1.0)];
        write_predictions(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);
        write_predictions(&path, &[]).unwrap();
        assert!(read_predictions(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_layouts() {
        let sc = score_slot(&[s(0, 1)], &[s(0, 1)]).unwrap();
        let rows = vec![
            MetricsRow { slot: "a".into(), fraction: "1".into(), train_size: 10, score: sc },
            MetricsRow { slot: "b".into(), fraction: "1".into(), train_size: 10, score: SlotScore::default() },
        ];
        let m = metrics_csv(&rows);
        assert!(m.lines().last().unwrap().starts_with("average,1,10,0.5000,0.5000,0.5000"), "{m}");
        let t = fraction_table_csv(&rows);
        assert_eq!(t.lines().nth(1).unwrap(), "1,10,1.0000,0.0000,0.5000");
    }

    fn arb_span() -> impl Strategy<Value = Option<CharSpan>> {
        prop_oneof![Just(None), (0usize..10, 1usize..5).prop_map(|(a, l)| Some(CharSpan::new(a, a + l)))]
    }

    proptest! {
        #[test]
        fn partition_is_complete(pairs in proptest::collection::vec((arb_span(), arb_span()), 0..40)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let c = categorize_errors(&p, &g).unwrap();
            prop_assert_eq!(c.total(), p.len());
            let sc = score_slot(&p, &g).unwrap();
            prop_assert_eq!(sc.true_positives, c.exact_match);
        }

        #[test]
        fn self_consistency_and_order_invariance(preds in proptest::collection::vec(arb_span(), 1..30), seed in 0u64..1000) {
            prop_assert_eq!(score_slot(&preds, &preds).unwrap().f1, 1.0);
            let golds: Vec<_> = preds.iter().rev().cloned().collect();
            let a = score_slot(&preds, &golds).unwrap();
            let mut idx: Vec<usize> = (0..preds.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let p2: Vec<_> = idx.iter().map(|&i| preds[i]).collect();
            let g2: Vec<_> = idx.iter().map(|&i| golds[i]).collect();
            prop_assert_eq!(a, score_slot(&p2, &g2).unwrap());
        }
    }
}
