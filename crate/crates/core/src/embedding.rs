//! Text embeddings and cosine similarity.
//!
//! The engine never runs a neural model. Callers inject an [`Embedder`]: either
//! the deterministic [`HashEmbedder`] (tests, simulation) or an
//! [`EmbeddingTable`] of vectors precomputed by any external model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stable_hash;

/// A dense embedding. Stored unnormalized; [`cosine`] normalizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("embedding entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn expect_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "embedding has dimension {}, expected {dim}",
                self.dim()
            )))
        }
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::invalid(format!(
            "cosine of vectors with lengths {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine of a zero-norm vector"));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Maps text to vectors of a fixed dimension.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding>;
}

/// Deterministic bag-of-tokens embedder.
///
/// Each lowercase whitespace token hashes (with the seed) to a pseudo-random
/// unit vector; the text embedding is the renormalized mean of its token
/// vectors, so texts that share tokens land closer together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        Ok(Self { dim, seed })
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(token) ^ self.seed.rotate_left(17));
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        embed_text(text, self.dim, self.seed)
    }
}

/// Embed `text` with the deterministic token-hash construction.
pub fn embed_text(text: &str, dim: usize, seed: u64) -> Result<Embedding> {
    let embedder = HashEmbedder::new(dim, seed)?;
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return Err(Error::invalid("cannot embed empty text"));
    }
    let mut acc = vec![0.0; dim];
    for token in &tokens {
        for (a, t) in acc.iter_mut().zip(embedder.token_vector(token)) {
            *a += t;
        }
    }
    let mut norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        // Tokens cancelled out exactly; fall back to the first token alone.
        acc = embedder.token_vector(&tokens[0]);
        norm = 1.0;
    }
    Embedding::new(acc.into_iter().map(|x| x / norm).collect())
}

/// Precomputed vectors keyed by text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Embedding>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Embedding> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Embedding) -> Result<()> {
        let key = key.into();
        if key.contains('\t') || key.contains('\n') || key.starts_with('#') {
            return Err(Error::invalid(format!("key {key:?} cannot be stored in a table file")));
        }
        if self.entries.is_empty() && self.dim == 0 {
            self.dim = value.dim();
        }
        value.expect_dim(self.dim)?;
        if self.entries.contains_key(&key) {
            return Err(Error::Conflict(format!("duplicate key {key:?}")));
        }
        self.entries.insert(key, value);
        Ok(())
    }

    /// Parse `key<TAB>v1,v2,...` records; `#` lines and blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = EmbeddingTable::new(0);
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected key<TAB>values"))?;
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let emb = Embedding::new(values).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            if table.dim != 0 && emb.dim() != table.dim {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("dimension {} differs from {}", emb.dim(), table.dim),
                ));
            }
            if table.entries.contains_key(key) {
                return Err(Error::parse(path, lineno, format!("duplicate key {key:?}")));
            }
            table.insert(key, emb).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (key, emb) in &self.entries {
            out.push_str(key);
            out.push('\t');
            for (i, v) in emb.as_slice().iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                // `{:?}` on f64 prints the shortest representation that parses back exactly.
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl Embedder for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        self.get(text)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("no embedding for {text:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn embed_is_deterministic() {
        let a = embed_text("bracket with holes", 64, 7).unwrap();
        let b = embed_text("bracket with holes", 64, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 64);
        assert!(a.norm() > 0.0);
    }

    #[test]
    fn shared_tokens_are_closer() {
        let abc = embed_text("a b c", 64, 7).unwrap();
        let abcd = embed_text("a b c d", 64, 7).unwrap();
        let xyz = embed_text("x y z", 64, 7).unwrap();
        assert!(cosine(&abc, &abcd).unwrap() > cosine(&abc, &xyz).unwrap());
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(embed_text("", 64, 7), Err(Error::InvalidInput(_))));
        assert!(matches!(embed_text("  \t", 64, 7), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn cosine_reference_values() {
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[-1.0, 0.0])).unwrap(), -1.0);
    }

    #[test]
    fn cosine_contract_errors() {
        assert!(cosine(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])).is_err());
        assert!(cosine(&e(&[1.0, 0.0, 0.0]), &e(&[1.0, 0.0])).is_err());
        assert!(Embedding::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn table_load_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("ok.tsv");
        std::fs::write(&ok, "# comment\nfoo\t1,2,3,4\nbar\t0.5,-1,2e-3,4\n").unwrap();
        let t = EmbeddingTable::load(&ok).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 4);
        assert_eq!(t.get("bar").unwrap().as_slice(), &[0.5, -1.0, 2e-3, 4.0]);

        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "foo\t1,2,3,4\nbar\t1,2,3\n").unwrap();
        match EmbeddingTable::load(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let dup = dir.path().join("dup.tsv");
        std::fs::write(&dup, "foo\t1,2\nfoo\t3,4\n").unwrap();
        assert!(matches!(EmbeddingTable::load(&dup), Err(Error::Parse { line: 2, .. })));

        assert!(matches!(
            EmbeddingTable::load(dir.path().join("missing.tsv")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn cosine_self_and_symmetry(u in prop::collection::vec(-10.0f64..10.0, 8),
                                    v in prop::collection::vec(-10.0f64..10.0, 8)) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let (u, v) = (e(&u), e(&v));
            prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() <= 1e-12);
            prop_assert!((cosine(&u, &v).unwrap() - cosine(&v, &u).unwrap()).abs() <= 1e-15);
        }

        #[test]
        fn table_round_trips_bit_exactly(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..6)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.tsv");
            let mut t = EmbeddingTable::new(5);
            for (i, r) in rows.iter().enumerate() {
                t.insert(format!("key {i}"), e(r)).unwrap();
            }
            t.save(&path).unwrap();
            let back = EmbeddingTable::load(&path).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
