use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use mlc_core::data_io::{parse_dataset, parse_label_names, write_dataset, MultiLabelDataset};
use mlc_core::embeddings::{init_label_embeddings, parse_word_embeddings, LabelEmbeddings};
use mlc_core::metrics::{top_cooccurrence_distance, MetricsReport, DEFAULT_THRESHOLD};
use mlc_core::model::{load_checkpoint, predict, save_checkpoint, Checkpoint, LatentInjection, ModelConfig};
use mlc_core::noise::{inject, NoiseKind, NoiseSpec};
use mlc_core::par::Execution;
use mlc_core::train::{grad_check, history_csv, train, AdamConfig, TrainConfig};
use mlc_core::Error;

use crate::config::RunConfig;

/// A failed command: message for stderr plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            Error::NonFinite { .. } => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn at(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
        move |e| {
            let mut f = Failure::from(e);
            f.message = format!("{}: {}", path.display(), f.message);
            f
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::at(path)(e.into()))
}

fn read_dataset(path: &Path) -> Result<MultiLabelDataset, Failure> {
    parse_dataset(open(path)?).map_err(Failure::at(path))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::at(path)(e.into()))
}

fn positives<'a>(labels: impl IntoIterator<Item = &'a u8>) -> usize {
    labels.into_iter().filter(|&&v| v == 1).count()
}

pub fn inject_noise(input: &Path, output: &Path, kind: NoiseKind, rate: f64, seed: u64) -> Outcome {
    let data = read_dataset(input)?;
    let spec = NoiseSpec { kind, rate, seed };
    let noisy = inject(&data.labels, &spec)?;
    let touched = data
        .labels
        .rows()
        .into_iter()
        .zip(noisy.rows())
        .filter(|(a, b)| a != b)
        .count();
    let before = positives(&data.labels);
    let after = positives(&noisy);
    let out = MultiLabelDataset::new(data.num_features, data.features, noisy)?;
    let file = File::create(output).map_err(|e| Failure::at(output)(e.into()))?;
    write_dataset(&out, BufWriter::new(file)).map_err(Failure::at(output))?;
    println!(
        "noise={kind} rows={} rows_touched={touched} positives_before={before} positives_after={after}",
        out.num_samples()
    );
    Ok(())
}

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::usage(format!("configuration must set `{key}`")))
}

fn matching(data: MultiLabelDataset, reference: &MultiLabelDataset, path: &Path) -> Result<MultiLabelDataset, Failure> {
    if data.num_labels() != reference.num_labels() {
        return Err(Failure::at(path)(Error::Data(format!(
            "has {} labels, training set has {}",
            data.num_labels(),
            reference.num_labels()
        ))));
    }
    Ok(data)
}

/// Label embeddings for a run, and the label names if any were given.
fn label_embeddings(
    rc: &RunConfig,
    num_labels: usize,
    lambda: f64,
    seed: u64,
) -> Result<(LabelEmbeddings, Option<Vec<String>>), Failure> {
    let names = match &rc.label_names {
        Some(path) => {
            let names = parse_label_names(open(path)?).map_err(Failure::at(path))?;
            if names.len() != num_labels {
                return Err(Failure::at(path)(Error::Data(format!(
                    "{} label names for {num_labels} labels",
                    names.len()
                ))));
            }
            Some(names)
        }
        None => None,
    };
    match (&rc.word_embeddings, &names) {
        (Some(path), Some(names)) => {
            let table = parse_word_embeddings(open(path)?).map_err(Failure::at(path))?;
            if let Some(d) = rc.label_dim.filter(|&d| d != table.dim()) {
                return Err(Failure::usage(format!(
                    "label_dim = {d} but the word embeddings have dimension {}",
                    table.dim()
                )));
            }
            Ok((init_label_embeddings(names, &table, seed)?, Some(names.clone())))
        }
        _ if lambda > 0.0 => Err(Failure::usage(
            "lambda > 0 needs `label_names` and `word_embeddings`: anchors require word embeddings \
             (set lambda = 0 to train with random anchors)",
        )),
        (Some(_), None) => Err(Failure::usage("`word_embeddings` needs `label_names`")),
        _ => {
            let dim = rc.label_dim.unwrap_or(DEFAULT_LABEL_DIM);
            let scale = rc.anchor_scale.unwrap_or(DEFAULT_ANCHOR_SCALE);
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Failure::usage("anchor_scale must be a finite non-negative number"));
            }
            Ok((LabelEmbeddings::random(num_labels, dim, scale, seed), names))
        }
    }
}

const DEFAULT_LABEL_DIM: usize = 50;
const DEFAULT_ANCHOR_SCALE: f64 = 0.5;

fn model_config(rc: &RunConfig, num_features: usize, num_labels: usize, label_dim: usize) -> ModelConfig {
    ModelConfig {
        num_features,
        num_labels,
        label_dim,
        num_layers: rc.num_layers.unwrap_or(4),
        num_heads: rc.num_heads.unwrap_or(2),
        encoder_hidden: rc.encoder_hidden.unwrap_or(128),
        feedforward_hidden: rc.feedforward_hidden.unwrap_or(2 * label_dim),
        latent_injection: rc.latent_injection.unwrap_or_default(),
    }
}

fn train_config(rc: &RunConfig) -> TrainConfig {
    let d = TrainConfig::default();
    let a = AdamConfig::default();
    TrainConfig {
        epochs: rc.epochs.unwrap_or(d.epochs),
        batch_size: rc.batch_size.unwrap_or(d.batch_size),
        adam: AdamConfig {
            learning_rate: rc.learning_rate.unwrap_or(a.learning_rate),
            beta1: rc.adam_beta1.unwrap_or(a.beta1),
            beta2: rc.adam_beta2.unwrap_or(a.beta2),
            eps: rc.adam_eps.unwrap_or(a.eps),
            weight_decay: rc.weight_decay.unwrap_or(a.weight_decay),
        },
        seed: rc.seed.unwrap_or(d.seed),
        loss: rc.loss_spec(),
        select_on: rc.select_on.unwrap_or(d.select_on),
        threshold: rc.threshold.unwrap_or(d.threshold),
        execution: match rc.parallel {
            Some(false) => Execution::Sequential,
            _ => Execution::default(),
        },
    }
}

fn report_line(prefix: &str, report: &MetricsReport) {
    println!("{prefix}{report}");
}

fn evaluate_on(
    ckpt: &Checkpoint,
    data: &MultiLabelDataset,
    threshold: f64,
    exec: Execution,
) -> Result<MetricsReport, Failure> {
    if data.num_labels() != ckpt.config.num_labels {
        return Err(Error::Data(format!(
            "test set has {} labels, model has {}",
            data.num_labels(),
            ckpt.config.num_labels
        ))
        .into());
    }
    if data.num_features > ckpt.config.num_features {
        return Err(Error::Data(format!(
            "test set has {} features, model accepts {}",
            data.num_features, ckpt.config.num_features
        ))
        .into());
    }
    let probs = predict(exec, data, &ckpt.embeddings, &ckpt.params, &ckpt.config);
    Ok(MetricsReport::from_probabilities(
        data.labels.view(),
        probs.view(),
        threshold,
    )?)
}

pub fn train_cmd(rc: &RunConfig) -> Outcome {
    if rc.num_features.is_some() || rc.num_labels.is_some() {
        return Err(Failure::usage(
            "num_features and num_labels come from the data; they apply only to grad-check",
        ));
    }
    let train_path = require(&rc.train, "train")?;
    let model_out = require(&rc.model_out, "model_out")?;
    let mut data = read_dataset(train_path)?;
    let tc = train_config(rc);
    tc.validate()?;

    if let Some(Some(kind)) = rc.noise {
        let spec = NoiseSpec {
            kind,
            rate: rc.noise_rate.unwrap_or(0.0),
            seed: rc.noise_seed.unwrap_or(tc.seed),
        };
        let before = positives(&data.labels);
        let noisy = inject(&data.labels, &spec)?;
        log::info!(
            "training labels corrupted with {kind}: positives {before} -> {}",
            positives(&noisy)
        );
        data = MultiLabelDataset::new(data.num_features, data.features, noisy)?;
    }
    let val = match &rc.val {
        Some(p) => Some(matching(read_dataset(p)?, &data, p)?),
        None => None,
    };
    let test = match &rc.test {
        Some(p) => Some(matching(read_dataset(p)?, &data, p)?),
        None => None,
    };
    let num_features = [Some(&data), val.as_ref(), test.as_ref()]
        .into_iter()
        .flatten()
        .map(|d| d.num_features)
        .max()
        .unwrap_or(data.num_features);

    let (embeddings, names) = label_embeddings(rc, data.num_labels(), tc.loss.lambda, tc.seed)?;
    let config = model_config(rc, num_features, data.num_labels(), embeddings.dim());
    let outcome = train(&data, val.as_ref(), &config, &tc, embeddings)?;

    let ckpt = Checkpoint {
        config,
        params: outcome.params,
        embeddings: outcome.embeddings,
        loss: tc.loss,
        label_names: names,
    };
    save_checkpoint(&ckpt, model_out).map_err(Failure::at(model_out))?;
    let history_path = rc.history_out.clone().unwrap_or_else(|| {
        let mut p = model_out.as_os_str().to_owned();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    write_text(&history_path, &history_csv(&outcome.history))?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "epochs={} best_epoch={} final_train_loss={:.6} model={} history={}",
        outcome.history.len(),
        outcome.best_epoch,
        last.train_loss,
        model_out.display(),
        history_path.display()
    );
    if let Some(test) = &test {
        report_line("test ", &evaluate_on(&ckpt, test, tc.threshold, tc.execution)?);
    }
    Ok(())
}

pub fn evaluate(model: &Path, test: &Path, threshold: f64, per_label_csv: Option<&Path>) -> Outcome {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Failure::usage("threshold must lie strictly between 0 and 1"));
    }
    let ckpt = load_checkpoint(model).map_err(Failure::at(model))?;
    let data = read_dataset(test)?;
    let report = evaluate_on(&ckpt, &data, threshold, Execution::default())?;
    report_line("", &report);
    if let Some(path) = per_label_csv {
        write_text(path, &report.per_label_csv(ckpt.label_names.as_deref()))?;
    }
    Ok(())
}

pub fn embed_dist(model: &Path, train: &Path, k: usize) -> Outcome {
    let ckpt = load_checkpoint(model).map_err(Failure::at(model))?;
    let data = read_dataset(train)?;
    let d = top_cooccurrence_distance(&ckpt.embeddings, data.labels.view(), k)?;
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "ratio={:.6} pairs={} top_mean={:.6} all_mean={:.6}",
        d.ratio, d.pairs_used, d.top_mean, d.all_mean
    );
    Ok(())
}

pub fn grad_check_cmd(rc: &RunConfig) -> Outcome {
    let label_dim = rc.label_dim.unwrap_or(8);
    let config = ModelConfig {
        num_features: rc.num_features.unwrap_or(10),
        num_labels: rc.num_labels.unwrap_or(5),
        label_dim,
        num_layers: rc.num_layers.unwrap_or(2),
        num_heads: rc.num_heads.unwrap_or(2),
        encoder_hidden: rc.encoder_hidden.unwrap_or(8),
        feedforward_hidden: rc.feedforward_hidden.unwrap_or(label_dim),
        latent_injection: rc.latent_injection.unwrap_or(LatentInjection::EveryBlock),
    };
    let spec = rc.loss_spec();
    let report = grad_check(&config, &spec, rc.seed.unwrap_or(0), rc.batch_size.unwrap_or(4))?;
    println!(
        "L={} d={} T={} H={} lambda={} loss={:.6}",
        config.num_labels, config.label_dim, config.num_layers, config.num_heads, spec.lambda, report.loss
    );
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            message: "gradient check failed".into(),
        })
    }
}

pub fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
