//! Subword embedding providers.
//!
//! [`EmbeddingTable`] is a trainable, context-free lookup table.
//! [`PrecomputedEmbeddings`] serves fixed contextual vectors exported by an
//! external encoder, keyed by utterance id. The file is JSON lines, one
//! record per utterance: `{"id": str, "dim": int, "vectors": [[float, ..], ..]}`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One vector per token, all of width `dim`; stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSequence {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddedSequence {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    /// Uniform init in `[-1/sqrt(dim), 1/sqrt(dim)]`.
    pub fn random<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let s = 1.0 / (dim as f64).sqrt();
        let data = (0..rows * dim).map(|_| rng.gen_range(-s..=s)).collect();
        EmbeddingTable { dim, rows, data }
    }

    pub fn from_data(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "embedding table {rows}x{dim} needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        Ok(EmbeddingTable { dim, rows, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let i = id as usize;
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lookup(&self, ids: &[u32]) -> Result<EmbeddedSequence> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id as usize >= self.rows {
                return Err(Error::Embedding(format!(
                    "token id {id} out of range for table with {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(id));
        }
        Ok(EmbeddedSequence { dim: self.dim, data })
    }

    /// Plain SGD on the rows present in `grad`: `row -= lr * grad_row`.
    pub fn apply_sgd(&mut self, grad: &EmbeddingGrad, lr: f64) {
        for (&id, g) in &grad.rows {
            for (w, d) in self.row_mut(id).iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
    }
}

/// Sparse table gradient: row id -> summed upstream gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingGrad {
    pub rows: BTreeMap<u32, Vec<f64>>,
}

impl EmbeddingGrad {
    /// Adds per-position gradients (`ids.len()` rows of width `dim`) onto their rows.
    pub fn accumulate(&mut self, ids: &[u32], upstream: &[f64], dim: usize) -> Result<()> {
        if upstream.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} upstream values for {} positions of width {dim}",
                upstream.len(),
                ids.len()
            )));
        }
        for (t, &id) in ids.iter().enumerate() {
            let row = self.rows.entry(id).or_insert_with(|| vec![0.0; dim]);
            for (r, g) in row.iter_mut().zip(&upstream[t * dim..(t + 1) * dim]) {
                *r += g;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: EmbeddingGrad) {
        for (id, g) in other.rows {
            match self.rows.get_mut(&id) {
                Some(row) => row.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    self.rows.insert(id, g);
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.rows.values_mut() {
            row.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PrecomputedRecord {
    id: String,
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Frozen per-utterance contextual vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    by_id: HashMap<String, EmbeddedSequence>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize) -> Self {
        PrecomputedEmbeddings {
            dim,
            by_id: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vectors: &[Vec<f64>]) -> Result<()> {
        let id = id.into();
        let mut data = Vec::with_capacity(vectors.len() * self.dim);
        for (t, v) in vectors.iter().enumerate() {
            if v.len() != self.dim {
                return Err(Error::Embedding(format!(
                    "utterance {id}: vector {t} has width {}, expected {}",
                    v.len(),
                    self.dim
                )));
            }
            data.extend_from_slice(v);
        }
        self.by_id.insert(id, EmbeddedSequence { dim: self.dim, data });
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out: Option<PrecomputedEmbeddings> = None;
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PrecomputedRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, Some(line_no), e))?;
            let store = out.get_or_insert_with(|| PrecomputedEmbeddings::new(rec.dim));
            if rec.dim != store.dim {
                return Err(Error::parse(
                    path,
                    Some(line_no),
                    format!("dim {} differs from file dim {}", rec.dim, store.dim),
                ));
            }
            if store.by_id.contains_key(&rec.id) {
                return Err(Error::parse(path, Some(line_no), format!("duplicate id '{}'", rec.id)));
            }
            store
                .insert(rec.id, &rec.vectors)
                .map_err(|e| Error::parse(path, Some(line_no), e))?;
        }
        Ok(out.unwrap_or_default())
    }

    /// Writes records sorted by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ids: Vec<&String> = self.by_id.keys().collect();
        ids.sort();
        let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for id in ids {
            let seq = &self.by_id[id];
            let rec = PrecomputedRecord {
                id: id.clone(),
                dim: self.dim,
                vectors: seq.data.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect(),
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        file.flush().map_err(|e| Error::io(path, e))
    }

    pub fn lookup(&self, utterance_id: &str, token_count: usize) -> Result<EmbeddedSequence> {
        let seq = self
            .by_id
            .get(utterance_id)
            .ok_or_else(|| Error::Embedding(format!("no precomputed vectors for utterance '{utterance_id}'")))?;
        if seq.len() != token_count {
            return Err(Error::Embedding(format!(
                "utterance '{utterance_id}' has {} precomputed vectors but {token_count} tokens",
                seq.len()
            )));
        }
        Ok(seq.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Scratch,
    Precomputed,
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(EmbeddingMode::Scratch),
            "precomputed" => Ok(EmbeddingMode::Precomputed),
            other => Err(Error::Config(format!("unknown embedding mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingProvider {
    Trainable(EmbeddingTable),
    Precomputed(Arc<PrecomputedEmbeddings>),
}

impl EmbeddingProvider {
    pub fn mode(&self) -> EmbeddingMode {
        match self {
            EmbeddingProvider::Trainable(_) => EmbeddingMode::Scratch,
            EmbeddingProvider::Precomputed(_) => EmbeddingMode::Precomputed,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Trainable(t) => t.dim(),
            EmbeddingProvider::Precomputed(p) => p.dim(),
        }
    }

    pub fn embed(&self, utterance_id: &str, token_ids: &[u32]) -> Result<EmbeddedSequence> {
        match self {
            EmbeddingProvider::Trainable(t) => t.lookup(token_ids),
            EmbeddingProvider::Precomputed(p) => p.lookup(utterance_id, token_ids.len()),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, EmbeddingProvider::Trainable(_))
    }

    /// SGD update of the rows touched by `grad`. Fails on the frozen kind.
    pub fn accumulate_gradient(&mut self, grad: &EmbeddingGrad, lr: f64) -> Result<()> {
        match self {
            EmbeddingProvider::Trainable(t) => {
                t.apply_sgd(grad, lr);
                Ok(())
            }
            EmbeddingProvider::Precomputed(_) => Err(Error::Embedding(
                "precomputed embeddings are frozen and take no gradient".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = EmbeddingTable::random(50, 32, &mut rng);
        let s = 1.0 / 32f64.sqrt();
        assert!(t.data().iter().all(|&x| (-s..=s).contains(&x)));
        assert!(t.data().iter().any(|&x| x.abs() > s * 0.9));
    }

    #[test]
    fn same_id_same_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::random(10, 32, &mut rng);
        let e = t.lookup(&[4, 2, 4]).unwrap();
        assert_eq!(e.row(0), e.row(2));
        assert_ne!(e.row(0), e.row(1));
        assert!(t.lookup(&[10]).is_err());
    }

    #[test]
    fn sgd_routing() {
        let mut t = EmbeddingTable::from_data(3, 2, vec![0.0; 6]).unwrap();
        let mut g = EmbeddingGrad::default();
        g.accumulate(&[1, 2, 1], &[1.0, 2.0, 10.0, 20.0, 3.0, 4.0], 2).unwrap();
        let mut p = EmbeddingProvider::Trainable(t.clone());
        p.accumulate_gradient(&g, 0.5).unwrap();
        t.apply_sgd(&g, 0.5);
        let EmbeddingProvider::Trainable(pt) = &p else { unreachable!() };
        assert_eq!(pt, &t);
        assert_eq!(t.row(0), &[0.0, 0.0]);
        assert_eq!(t.row(1), &[-2.0, -3.0]);
        assert_eq!(t.row(2), &[-5.0, -10.0]);
    }

    #[test]
    fn precomputed_is_frozen() {
        let mut p = EmbeddingProvider::Precomputed(Arc::new(PrecomputedEmbeddings::new(4)));
        assert!(p.accumulate_gradient(&EmbeddingGrad::default(), 0.1).is_err());
    }

    #[test]
    fn precomputed_file_round_trip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let mut store = PrecomputedEmbeddings::new(512);
        let vectors: Vec<Vec<f64>> = (0..8).map(|t| (0..512).map(|k| (t * 512 + k) as f64 * 1e-3).collect()).collect();
        store.insert("u1", &vectors).unwrap();
        store.save(&path).unwrap();
        let back = PrecomputedEmbeddings::load(&path).unwrap();
        assert_eq!(back, store);
        let p = EmbeddingProvider::Precomputed(Arc::new(back));
        let a = p.embed("u1", &[0; 8]).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a.row(3), vectors[3].as_slice());
        assert_eq!(a, p.embed("u1", &[0; 8]).unwrap());
        assert!(p.embed("u1", &[0; 7]).is_err());
        assert!(p.embed("u2", &[0; 8]).is_err());
    }

    #[test]
    fn precomputed_rejects_ragged_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"dim\":2,\"vectors\":[[1.0,2.0],[3.0]]}\n").unwrap();
        assert!(matches!(PrecomputedEmbeddings::load(&path), Err(Error::Parse { record: Some(0), .. })));
    }
}
