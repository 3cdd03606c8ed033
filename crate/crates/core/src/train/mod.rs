//! Mini-batch training with validation-based model selection.

mod adam;
mod gradcheck;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{
    grad_check, grad_check_with_hook, GradCheckEntry, GradCheckReport, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE,
};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::MultiLabelDataset;
use crate::embeddings::LabelEmbeddings;
use crate::losses::LossSpec;
use crate::metrics::{Metric, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{batch_forward_backward, predict, trainable_arrays_mut, ModelConfig, ModelParams};
use crate::par::Execution;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossSpec,
    pub select_on: Metric,
    pub threshold: f64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossSpec::default(),
            select_on: Metric::EbF1,
            threshold: DEFAULT_THRESHOLD,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(a.weight_decay >= 0.0 && a.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        if !(a.beta1 > 0.0 && a.beta1 < 1.0 && a.beta2 > 0.0 && a.beta2 < 1.0) {
            return fail("adam betas must lie strictly between 0 and 1");
        }
        if !(a.eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold must lie strictly between 0 and 1");
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// `(ebF1, miF1, maF1)` on the validation set, if there is one.
    pub val: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub embeddings: LabelEmbeddings,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// `epoch,train_loss,val_ebF1,val_miF1,val_maF1`, validation fields empty
/// when no validation set was given.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_ebF1,val_miF1,val_maF1\n");
    for r in history {
        match r.val {
            Some((e, mi, ma)) => writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, e, mi, ma),
            None => writeln!(out, "{},{},,,", r.epoch, r.train_loss),
        }
        .unwrap();
    }
    out
}

fn check_compatible(data: &MultiLabelDataset, config: &ModelConfig, what: &str) -> Result<()> {
    if data.num_labels() != config.num_labels {
        return Err(Error::Data(format!(
            "{what} set has {} labels, model has {}",
            data.num_labels(),
            config.num_labels
        )));
    }
    if data.num_features > config.num_features {
        return Err(Error::Data(format!(
            "{what} set has {} features, model accepts {}",
            data.num_features, config.num_features
        )));
    }
    Ok(())
}

fn at_batch(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite { what } => Error::NonFinite {
            what: format!("{what} (epoch {epoch}, batch {batch})"),
        },
        other => other,
    }
}

/// Trains from a seeded initialization. Parameters are returned from the
/// epoch with the highest validation `select_on` score (earliest on ties), or
/// from the last epoch when `val` is absent or empty.
pub fn train(
    train: &MultiLabelDataset,
    val: Option<&MultiLabelDataset>,
    config: &ModelConfig,
    tc: &TrainConfig,
    embeddings: LabelEmbeddings,
) -> Result<TrainOutcome> {
    config.validate()?;
    tc.validate()?;
    check_compatible(train, config, "training")?;
    if train.num_samples() == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let val = val.filter(|v| v.num_samples() > 0);
    if let Some(v) = val {
        check_compatible(v, config, "validation")?;
    }
    if embeddings.num_labels() != config.num_labels || embeddings.dim() != config.label_dim {
        return Err(Error::Data(format!(
            "label embeddings are {}×{}, model expects {}×{}",
            embeddings.num_labels(),
            embeddings.dim(),
            config.num_labels,
            config.label_dim
        )));
    }

    let mut params = ModelParams::init(config, tc.seed)?;
    let mut emb = embeddings;
    let mut state = AdamState::new(&trainable_arrays_mut(&mut params, &mut emb));
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.num_samples()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ModelParams, LabelEmbeddings)> = None;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, rows) in order.chunks(tc.batch_size).enumerate() {
            let out = batch_forward_backward(tc.execution, train, rows, &emb, &params, config, &tc.loss)
                .map_err(|e| at_batch(e, epoch, b + 1))?;
            loss_sum += out.loss * rows.len() as f64;
            let grads = out.grads.arrays();
            let mut slots = trainable_arrays_mut(&mut params, &mut emb);
            adam_step(&mut slots, &grads, &mut state, &tc.adam).map_err(|e| at_batch(e, epoch, b + 1))?;
        }
        let train_loss = loss_sum / train.num_samples() as f64;
        let val_scores = match val {
            Some(v) => {
                let probs = predict(tc.execution, v, &emb, &params, config);
                let report = MetricsReport::from_probabilities(v.labels.view(), probs.view(), tc.threshold)?;
                let score = report.get(tc.select_on);
                if best.as_ref().is_none_or(|(s, ..)| score > *s) {
                    best = Some((score, epoch, params.clone(), emb.clone()));
                }
                log::info!("epoch {epoch}: train_loss={train_loss:.6} val {report}");
                Some((report.ebf1, report.mif1, report.maf1))
            }
            None => {
                log::info!("epoch {epoch}: train_loss={train_loss:.6}");
                None
            }
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val: val_scores,
        });
    }

    let (best_epoch, params, embeddings) = match best {
        Some((_, e, p, m)) => (e, p, m),
        None => (tc.epochs, params, emb),
    };
    Ok(TrainOutcome {
        params,
        embeddings,
        best_epoch,
        history,
    })
}
