//! F1 scores for multi-label predictions and the label-embedding
//! co-occurrence distance.
//!
//! Zero-denominator conventions: a sample whose true and predicted rows are
//! both empty scores 1 in ebF1; a label that is never true and never
//! predicted scores 0 in maF1.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::embeddings::LabelEmbeddings;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn check_shapes(y: &ArrayView2<u8>, yhat: &ArrayView2<u8>) -> Result<()> {
    if y.dim() != yhat.dim() {
        return Err(Error::Data(format!(
            "true labels are {:?} but predictions are {:?}",
            y.dim(),
            yhat.dim()
        )));
    }
    Ok(())
}

/// `1` where the probability is at least `threshold`.
pub fn binarize(probs: ArrayView2<f64>, threshold: f64) -> Array2<u8> {
    probs.mapv(|p| (p >= threshold) as u8)
}

/// Example-based F1: per-sample F1 averaged over samples.
pub fn ebf1(y: ArrayView2<u8>, yhat: ArrayView2<u8>) -> Result<f64> {
    check_shapes(&y, &yhat)?;
    let n = y.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (yr, pr) in y.rows().into_iter().zip(yhat.rows()) {
        let mut both = 0u64;
        let mut denom = 0u64;
        for (&a, &b) in yr.iter().zip(pr.iter()) {
            both += (a & b) as u64;
            denom += a as u64 + b as u64;
        }
        total += if denom == 0 {
            1.0
        } else {
            2.0 * both as f64 / denom as f64
        };
    }
    Ok(total / n as f64)
}

/// Micro F1 over all N·L cells.
pub fn mif1(y: ArrayView2<u8>, yhat: ArrayView2<u8>) -> Result<f64> {
    check_shapes(&y, &yhat)?;
    let c = LabelCounts::tally(y, yhat);
    let (tp, fp, fn_) = (
        c.tp.iter().sum::<u64>(),
        c.fp.iter().sum::<u64>(),
        c.fn_.iter().sum::<u64>(),
    );
    Ok(f1(tp, fp, fn_))
}

/// Macro F1: per-label F1 averaged over labels.
pub fn maf1(y: ArrayView2<u8>, yhat: ArrayView2<u8>) -> Result<f64> {
    check_shapes(&y, &yhat)?;
    let per = LabelCounts::tally(y, yhat).f1();
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-label confusion counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
}

impl LabelCounts {
    fn tally(y: ArrayView2<u8>, yhat: ArrayView2<u8>) -> Self {
        let l = y.ncols();
        let mut c = LabelCounts {
            tp: vec![0; l],
            fp: vec![0; l],
            fn_: vec![0; l],
        };
        for (yr, pr) in y.rows().into_iter().zip(yhat.rows()) {
            for (j, (&a, &b)) in yr.iter().zip(pr.iter()).enumerate() {
                match (a, b) {
                    (1, 1) => c.tp[j] += 1,
                    (0, 1) => c.fp[j] += 1,
                    (1, 0) => c.fn_[j] += 1,
                    _ => {}
                }
            }
        }
        c
    }

    pub fn f1(&self) -> Vec<f64> {
        (0..self.tp.len())
            .map(|j| f1(self.tp[j], self.fp[j], self.fn_[j]))
            .collect()
    }
}

/// All three scores plus per-label detail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ebf1: f64,
    pub mif1: f64,
    pub maf1: f64,
    pub per_label_f1: Vec<f64>,
    pub counts: LabelCounts,
}

impl MetricsReport {
    pub fn compute(y: ArrayView2<u8>, yhat: ArrayView2<u8>) -> Result<Self> {
        check_shapes(&y, &yhat)?;
        let counts = LabelCounts::tally(y, yhat);
        let per_label_f1 = counts.f1();
        let maf1 = if per_label_f1.is_empty() {
            0.0
        } else {
            per_label_f1.iter().sum::<f64>() / per_label_f1.len() as f64
        };
        Ok(MetricsReport {
            ebf1: ebf1(y, yhat)?,
            mif1: mif1(y, yhat)?,
            maf1,
            per_label_f1,
            counts,
        })
    }

    /// Thresholds probabilities, then computes the report.
    pub fn from_probabilities(y: ArrayView2<u8>, probs: ArrayView2<f64>, threshold: f64) -> Result<Self> {
        Self::compute(y, binarize(probs, threshold).view())
    }

    /// Picks one of the three scores by name.
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::EbF1 => self.ebf1,
            Metric::MiF1 => self.mif1,
            Metric::MaF1 => self.maf1,
        }
    }

    /// `label_index,name,tp,fp,fn,f1` rows with a header line.
    pub fn per_label_csv(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("label_index,name,tp,fp,fn,f1\n");
        for j in 0..self.per_label_f1.len() {
            let name = names.and_then(|n| n.get(j)).map(String::as_str).unwrap_or("");
            let name = if name.contains([',', '"']) {
                format!("\"{}\"", name.replace('"', "\"\""))
            } else {
                name.to_string()
            };
            out.push_str(&format!(
                "{j},{name},{},{},{},{}\n",
                self.counts.tp[j], self.counts.fp[j], self.counts.fn_[j], self.per_label_f1[j]
            ));
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ebF1={:.6} miF1={:.6} maF1={:.6}", self.ebf1, self.mif1, self.maf1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
pub enum Metric {
    #[default]
    EbF1,
    MiF1,
    MaF1,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ebf1" => Ok(Metric::EbF1),
            "mif1" => Ok(Metric::MiF1),
            "maf1" => Ok(Metric::MaF1),
            _ => Err(Error::Config(format!(
                "unknown metric {s:?} (expected ebF1, miF1 or maF1)"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::EbF1 => "ebF1",
            Metric::MiF1 => "miF1",
            Metric::MaF1 => "maF1",
        })
    }
}

/// Result of [`top_cooccurrence_distance`].
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceDistance {
    /// Mean distance over the selected pairs divided by the mean over all pairs.
    pub ratio: f64,
    /// Number of pairs actually averaged (≤ the requested k).
    pub pairs_used: usize,
    pub top_mean: f64,
    pub all_mean: f64,
    pub warnings: Vec<String>,
}

/// Mean Euclidean distance between the embeddings of the `k` most frequently
/// co-occurring label pairs, normalized by the mean distance over all pairs.
///
/// Ties in co-occurrence count go to the lexicographically smaller `(i, j)`.
/// Only pairs that co-occur at least once are eligible.
pub fn top_cooccurrence_distance(
    emb: &LabelEmbeddings,
    labels: ArrayView2<u8>,
    k: usize,
) -> Result<CooccurrenceDistance> {
    let l = emb.num_labels();
    if labels.ncols() != l {
        return Err(Error::Data(format!(
            "label matrix has {} columns but there are {l} label embeddings",
            labels.ncols()
        )));
    }
    if l < 2 {
        return Err(Error::Data("need at least two labels to form a pair".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let mut warnings = Vec::new();
    let total_pairs = l * (l - 1) / 2;
    if k > total_pairs {
        warnings.push(format!("k={k} exceeds the {total_pairs} label pairs"));
    }

    let mut counts = vec![0u64; l * l];
    let mut active = Vec::with_capacity(l);
    for row in labels.rows() {
        active.clear();
        active.extend(row.iter().enumerate().filter(|(_, &v)| v == 1).map(|(j, _)| j));
        for (a, &i) in active.iter().enumerate() {
            for &j in &active[a + 1..] {
                counts[i * l + j] += 1;
            }
        }
    }

    let dist = |i: usize, j: usize| -> f64 {
        emb.current
            .row(i)
            .iter()
            .zip(emb.current.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };

    let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
    let mut all_sum = 0.0;
    for i in 0..l {
        for j in i + 1..l {
            all_sum += dist(i, j);
            let c = counts[i * l + j];
            if c > 0 {
                pairs.push((c, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    if pairs.len() < k {
        warnings.push(format!(
            "only {} label pairs co-occur; averaging over those instead of k={k}",
            pairs.len()
        ));
    }
    let used = &pairs[..k.min(pairs.len())];
    if used.is_empty() {
        return Err(Error::Data("no label pair co-occurs in the label matrix".into()));
    }
    let top_mean = used.iter().map(|&(_, i, j)| dist(i, j)).sum::<f64>() / used.len() as f64;
    let all_mean = all_sum / total_pairs as f64;
    let ratio = if all_mean == 0.0 {
        warnings.push("all label embeddings coincide; distance ratio is undefined, reporting 0".into());
        0.0
    } else {
        top_mean / all_mean
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CooccurrenceDistance {
        ratio,
        pairs_used: used.len(),
        top_mean,
        all_mean,
        warnings,
    })
}
