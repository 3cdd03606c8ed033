//! `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment (at line start, or after
//! whitespace), blank lines are ignored. Unknown or repeated keys are errors.
//! Command-line `--set key=value` overrides are applied after the file;
//! `--set key=` removes a key.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mlc_core::losses::LossSpec;
use mlc_core::metrics::Metric;
use mlc_core::model::LatentInjection;
use mlc_core::noise::NoiseKind;
use mlc_core::{Error, Result};

/// Relative paths are resolved against this directory when it is set.
pub const DATA_ROOT_ENV: &str = "MLC_DATA_ROOT";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub label_names: Option<PathBuf>,
    pub word_embeddings: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub history_out: Option<PathBuf>,

    pub num_features: Option<usize>,
    pub num_labels: Option<usize>,
    pub label_dim: Option<usize>,
    pub num_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub encoder_hidden: Option<usize>,
    pub feedforward_hidden: Option<usize>,
    pub latent_injection: Option<LatentInjection>,

    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub seed: Option<u64>,
    pub select_on: Option<Metric>,
    pub threshold: Option<f64>,
    pub parallel: Option<bool>,
    pub anchor_scale: Option<f64>,

    pub lambda: Option<f64>,
    pub gamma_pos: Option<f64>,
    pub gamma_neg: Option<f64>,
    pub shift_m: Option<f64>,
    pub clamp_eps: Option<f64>,

    /// `None` inside means the key was given as `none`.
    pub noise: Option<Option<NoiseKind>>,
    pub noise_rate: Option<f64>,
    pub noise_seed: Option<u64>,
}

fn parse<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn resolve(value: &str) -> PathBuf {
    let path = Path::new(value);
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && i > 0 && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}

macro_rules! setters {
    ($self:ident, $key:ident, $value:ident; paths: $($p:ident),*; values: $($v:ident),*) => {
        match $key {
            $(stringify!($p) => Self::store(&mut $self.$p, $key, resolve($value)),)*
            $(stringify!($v) => Self::store(&mut $self.$v, $key, parse($key, $value)?),)*
            "noise" => {
                let kind = if $value.eq_ignore_ascii_case("none") { None } else { Some(parse($key, $value)?) };
                Self::store(&mut $self.noise, $key, kind)
            }
            _ => Err(Error::Config(format!("unknown key {:?}", $key))),
        }
    };
}

impl RunConfig {
    fn store<T>(slot: &mut Option<T>, key: &str, value: T) -> Result<()> {
        if slot.is_some() {
            return Err(Error::Config(format!("key {key:?} given twice")));
        }
        *slot = Some(value);
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        setters!(self, key, value;
            paths: train, val, test, label_names, word_embeddings, model_out, history_out;
            values: num_features, num_labels, label_dim, num_layers, num_heads, encoder_hidden,
                feedforward_hidden, latent_injection, epochs, batch_size, learning_rate, weight_decay,
                adam_beta1, adam_beta2, adam_eps, seed, select_on, threshold, parallel, anchor_scale,
                lambda, gamma_pos, gamma_neg, shift_m, clamp_eps, noise_rate, noise_seed)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, found {line:?}"),
                });
            };
            config.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides, replacing any value from the file. An
    /// empty value (`key=`) removes the key.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(Error::Config(format!("override {item:?} is not key=value")));
            };
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                if !self.clear(key) {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
                continue;
            }
            let mut fresh = RunConfig::default();
            fresh.set(key, value)?;
            self.merge(fresh, |_| false);
        }
        Ok(())
    }

    fn clear(&mut self, key: &str) -> bool {
        let mut found = false;
        self.merge(RunConfig::default(), |k| {
            found |= k == key;
            k == key
        });
        found
    }

    /// Takes every field set in `other`, and resets fields for which `reset`
    /// returns true.
    fn merge(&mut self, other: RunConfig, mut reset: impl FnMut(&str) -> bool) {
        macro_rules! take {
            ($($f:ident),*) => {
                $(
                    if other.$f.is_some() {
                        self.$f = other.$f;
                    } else if reset(stringify!($f)) {
                        self.$f = None;
                    }
                )*
            };
        }
        take!(
            train,
            val,
            test,
            label_names,
            word_embeddings,
            model_out,
            history_out,
            num_features,
            num_labels,
            label_dim,
            num_layers,
            num_heads,
            encoder_hidden,
            feedforward_hidden,
            latent_injection,
            epochs,
            batch_size,
            learning_rate,
            weight_decay,
            adam_beta1,
            adam_beta2,
            adam_eps,
            seed,
            select_on,
            threshold,
            parallel,
            anchor_scale,
            lambda,
            gamma_pos,
            gamma_neg,
            shift_m,
            clamp_eps,
            noise,
            noise_rate,
            noise_seed
        );
    }

    pub fn loss_spec(&self) -> LossSpec {
        let d = LossSpec::default();
        LossSpec {
            gamma_pos: self.gamma_pos.unwrap_or(d.gamma_pos),
            gamma_neg: self.gamma_neg.unwrap_or(d.gamma_neg),
            shift_m: self.shift_m.unwrap_or(d.shift_m),
            lambda: self.lambda.unwrap_or(d.lambda),
            clamp_eps: self.clamp_eps.unwrap_or(d.clamp_eps),
        }
    }
}
