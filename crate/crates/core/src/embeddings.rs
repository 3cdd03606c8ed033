//! Pretrained word vectors, label anchors and the anchor regularizer.
//!
//! A label name is split into word tokens. Each in-vocabulary token maps to its
//! pretrained vector; each out-of-vocabulary token gets a seeded Gaussian draw
//! whose per-dimension mean and standard deviation come from the
//! in-vocabulary label tokens of the same label set. The label's anchor is the
//! mean of its token vectors. Trainable label embeddings start at the anchors
//! and are pulled back toward them by `Σ (current − anchor)²`.

use std::collections::HashMap;
use std::io::BufRead;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Token → vector map, all vectors of length `dim`.
#[derive(Debug, Clone)]
pub struct WordEmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl WordEmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Looks up a token, lowercasing it first.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        let i = *self.index.get(&token.to_lowercase())?;
        Some(&self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Builds a table from explicit entries; later duplicates replace earlier ones.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table = WordEmbeddingTable {
            dim: 0,
            index: HashMap::new(),
            vectors: Vec::new(),
        };
        for (n, (token, vec)) in entries.into_iter().enumerate() {
            table.insert(token.as_ref(), &vec, n + 1)?;
        }
        if table.is_empty() {
            return Err(Error::Data("no embeddings".into()));
        }
        Ok(table)
    }

    fn insert(&mut self, token: &str, vec: &[f64], lineno: usize) -> Result<()> {
        if token.is_empty() {
            return Err(Error::parse(lineno, "empty token"));
        }
        if self.index.is_empty() && self.vectors.is_empty() {
            if vec.is_empty() {
                return Err(Error::parse(lineno, "embedding vector is empty"));
            }
            self.dim = vec.len();
        } else if vec.len() != self.dim {
            return Err(Error::parse(
                lineno,
                format!("vector has {} values, expected {}", vec.len(), self.dim),
            ));
        }
        let token = token.to_lowercase();
        if let Some(&slot) = self.index.get(&token) {
            log::warn!("line {lineno}: duplicate token {token:?}, keeping the later vector");
            self.vectors[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(vec);
        } else {
            self.index.insert(token, self.vectors.len() / self.dim);
            self.vectors.extend_from_slice(vec);
        }
        Ok(())
    }
}

/// Parses GloVe-style text: `token v1 ... vP` per line, no header. The
/// dimension is fixed by the first line.
pub fn parse_word_embeddings<R: BufRead>(reader: R) -> Result<WordEmbeddingTable> {
    let mut table = WordEmbeddingTable {
        dim: 0,
        index: HashMap::new(),
        vectors: Vec::new(),
    };
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        values.clear();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(lineno, format!("value {f:?} is not a number")))?;
            values.push(v);
        }
        table.insert(token, &values, lineno)?;
    }
    if table.is_empty() {
        return Err(Error::Data("no embeddings".into()));
    }
    Ok(table)
}

/// Trainable label embeddings together with their frozen anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddings {
    /// L×P, updated by training.
    pub current: Array2<f64>,
    anchors: Array2<f64>,
}

impl LabelEmbeddings {
    /// `current` starts equal to `anchors`.
    pub fn from_anchors(anchors: Array2<f64>) -> Self {
        LabelEmbeddings {
            current: anchors.clone(),
            anchors,
        }
    }

    pub fn from_parts(current: Array2<f64>, anchors: Array2<f64>) -> Result<Self> {
        if current.dim() != anchors.dim() {
            return Err(Error::Data(format!(
                "current {:?} and anchor {:?} shapes differ",
                current.dim(),
                anchors.dim()
            )));
        }
        Ok(LabelEmbeddings { current, anchors })
    }

    /// Anchors drawn i.i.d. from N(0, scale²), for runs without word vectors.
    pub fn random(num_labels: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).expect("scale must be finite and non-negative");
        let anchors = Array2::from_shape_simple_fn((num_labels, dim), || normal.sample(&mut rng));
        Self::from_anchors(anchors)
    }

    pub fn anchors(&self) -> &Array2<f64> {
        &self.anchors
    }

    pub fn num_labels(&self) -> usize {
        self.current.nrows()
    }

    pub fn dim(&self) -> usize {
        self.current.ncols()
    }

    /// Frobenius norm of `current − anchors`.
    pub fn drift(&self) -> f64 {
        (&self.current - &self.anchors).mapv(|x| x * x).sum().sqrt()
    }

    /// Applies `perm` to the label rows: row `i` of the result is row `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        LabelEmbeddings {
            current: self.current.select(ndarray::Axis(0), perm),
            anchors: self.anchors.select(ndarray::Axis(0), perm),
        }
    }
}

/// Builds anchors for `names` from `table`. Out-of-vocabulary tokens are drawn
/// once each (in order of first appearance) from a ChaCha8 stream seeded with
/// `seed`.
pub fn init_label_embeddings(names: &[String], table: &WordEmbeddingTable, seed: u64) -> Result<LabelEmbeddings> {
    if names.is_empty() {
        return Err(Error::Data("no label names".into()));
    }
    if table.is_empty() {
        return Err(Error::Data("word embedding table is empty".into()));
    }
    let dim = table.dim();
    let tokenized: Vec<Vec<String>> = names
        .iter()
        .map(|n| n.split_whitespace().map(str::to_lowercase).collect())
        .collect();
    if let Some(i) = tokenized.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("label {i} has an empty name")));
    }

    // Distinct tokens in first-appearance order.
    let mut seen = HashMap::new();
    let mut order = Vec::new();
    for tok in tokenized.iter().flatten() {
        if !seen.contains_key(tok) {
            seen.insert(tok.clone(), order.len());
            order.push(tok.clone());
        }
    }

    let in_vocab: Vec<&[f64]> = order.iter().filter_map(|t| table.get(t)).collect();
    let has_oov = in_vocab.len() < order.len();

    let mut token_vecs: HashMap<&str, Vec<f64>> = HashMap::new();
    if has_oov {
        if in_vocab.is_empty() {
            return Err(Error::Data(
                "no label token is in the embedding vocabulary; cannot estimate the out-of-vocabulary distribution"
                    .into(),
            ));
        }
        let count = in_vocab.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in &in_vocab {
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut std = vec![0.0; dim];
        for v in &in_vocab {
            for ((s, x), m) in std.iter_mut().zip(v.iter()).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / count).sqrt());

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).unwrap();
        for tok in order.iter().filter(|t| table.get(t).is_none()) {
            let draw = mean
                .iter()
                .zip(&std)
                .map(|(m, s)| m + s * unit.sample(&mut rng))
                .collect();
            token_vecs.insert(tok.as_str(), draw);
        }
    }

    let mut anchors = Array2::zeros((names.len(), dim));
    for (mut row, tokens) in anchors.rows_mut().into_iter().zip(&tokenized) {
        for tok in tokens {
            let v: &[f64] = match table.get(tok) {
                Some(v) => v,
                None => &token_vecs[tok.as_str()],
            };
            for (r, x) in row.iter_mut().zip(v) {
                *r += x;
            }
        }
        let k = tokens.len() as f64;
        row.mapv_inplace(|x| x / k);
    }
    Ok(LabelEmbeddings::from_anchors(anchors))
}

/// `Σ (current − anchors)²` and its gradient `2 (current − anchors)`.
pub fn context_regularizer(emb: &LabelEmbeddings) -> (f64, Array2<f64>) {
    let diff = &emb.current - &emb.anchors;
    let value = diff.iter().map(|x| x * x).sum();
    (value, diff * 2.0)
}
