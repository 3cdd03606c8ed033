//! Central-difference verification of the analytic gradients.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_io::{MultiLabelDataset, SparseRow};
use crate::embeddings::LabelEmbeddings;
use crate::losses::LossSpec;
use crate::model::{batch_forward_backward, batch_loss, trainable_arrays_mut, Gradients, ModelConfig, ModelParams};
use crate::par::Execution;
use crate::Result;

pub const GRAD_CHECK_STEP: f64 = 1e-4;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

/// Gradient magnitudes below this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

/// Step divisor for the second look at an entry that fails at the base step.
const REFINE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub size: usize,
    pub max_abs_error: f64,
    /// Max over entries of `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    /// Entries that failed at the base step and were re-measured with a
    /// step `REFINE` times smaller, because the base interval straddled a
    /// ReLU or clamp kink.
    pub refined: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
        for e in &self.entries {
            let flag = if e.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:width$}  n={:<5} max_abs={:.3e} max_rel={:.3e} refined={}  {flag}",
                e.name, e.size, e.max_abs_error, e.max_rel_error, e.refined
            )?;
        }
        write!(
            f,
            "{} arrays, tolerance {:.0e}: {}",
            self.entries.len(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn random_batch(config: &ModelConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<MultiLabelDataset> {
    let features = (0..n)
        .map(|_| {
            let pairs = (0..config.num_features as u32)
                .filter_map(|k| {
                    if rng.random_bool(0.6) {
                        Some((k, rng.random_range(-1.0..1.0)))
                    } else {
                        None
                    }
                })
                .collect();
            SparseRow::from_pairs(pairs).expect("indices are distinct")
        })
        .collect();
    let labels = Array2::from_shape_simple_fn((n, config.num_labels), || rng.random_bool(0.4) as u8);
    MultiLabelDataset::new(config.num_features, features, labels)
}

/// Random model, embeddings displaced from their anchors, and a random batch.
fn setup(
    config: &ModelConfig,
    seed: u64,
    batch_size: usize,
) -> Result<(ModelParams, LabelEmbeddings, MultiLabelDataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(config, seed)?;
    let jitter = Normal::new(0.0, 0.1).unwrap();
    for a in params.arrays_mut() {
        if a.name.contains("norm") || a.name.contains(".b") {
            let mut data = a.data;
            data.mapv_inplace(|v| v + jitter.sample(&mut rng));
        }
    }
    let anchors = LabelEmbeddings::random(config.num_labels, config.label_dim, 1.0, seed ^ 0x5eed);
    let current =
        anchors.anchors() + &Array2::from_shape_simple_fn(anchors.current.dim(), || 3.0 * jitter.sample(&mut rng));
    let emb = LabelEmbeddings::from_parts(current, anchors.anchors().clone())?;
    let data = random_batch(config, batch_size, &mut rng)?;
    Ok((params, emb, data))
}

/// Overwrites one trainable entry, returning its previous value.
fn replace(params: &mut ModelParams, emb: &mut LabelEmbeddings, array: usize, index: usize, value: f64) -> f64 {
    let mut arrays = trainable_arrays_mut(params, emb);
    let slot = arrays[array].data.iter_mut().nth(index).expect("index in range");
    std::mem::replace(slot, value)
}

/// Compares analytic and central-difference gradients for every trainable
/// array on a random batch of `batch_size` samples.
pub fn grad_check(config: &ModelConfig, spec: &LossSpec, seed: u64, batch_size: usize) -> Result<GradCheckReport> {
    grad_check_with_hook(config, spec, seed, batch_size, |_| {})
}

/// As [`grad_check`], with `hook` applied to the analytic gradients before
/// comparison.
pub fn grad_check_with_hook(
    config: &ModelConfig,
    spec: &LossSpec,
    seed: u64,
    batch_size: usize,
    hook: impl FnOnce(&mut Gradients),
) -> Result<GradCheckReport> {
    config.validate()?;
    spec.validate()?;
    let (mut params, mut emb, data) = setup(config, seed, batch_size)?;
    let rows: Vec<usize> = (0..batch_size).collect();
    let analytic = batch_forward_backward(Execution::Sequential, &data, &rows, &emb, &params, config, spec)?;
    let mut grads = analytic.grads;
    hook(&mut grads);

    let mut entries = Vec::new();
    for (a, g) in grads.arrays().into_iter().enumerate() {
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        let mut refined = 0;
        for (i, &exact) in g.data.iter().enumerate() {
            let mut central = |h: f64| -> Result<f64> {
                let x = replace(&mut params, &mut emb, a, i, f64::NAN);
                replace(&mut params, &mut emb, a, i, x + h);
                let plus = batch_loss(&data, &rows, &emb, &params, config, spec)?;
                replace(&mut params, &mut emb, a, i, x - h);
                let minus = batch_loss(&data, &rows, &emb, &params, config, spec)?;
                replace(&mut params, &mut emb, a, i, x);
                Ok((plus - minus) / (2.0 * h))
            };
            let rel = |numeric: f64| (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(REL_FLOOR);
            let mut numeric = central(GRAD_CHECK_STEP)?;
            if rel(numeric) >= GRAD_CHECK_TOLERANCE {
                let fine = central(GRAD_CHECK_STEP / REFINE)?;
                if rel(fine) < rel(numeric) {
                    numeric = fine;
                }
                refined += 1;
            }
            max_abs = max_abs.max((exact - numeric).abs());
            max_rel = max_rel.max(rel(numeric));
        }
        entries.push(GradCheckEntry {
            name: g.name,
            size: g.data.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            refined,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance: GRAD_CHECK_TOLERANCE,
        loss: analytic.loss,
    })
}
