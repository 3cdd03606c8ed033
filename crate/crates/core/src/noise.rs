//! Seeded label-noise injectors.
//!
//! * uniform: every cell flipped independently with probability `rate`
//!   (error independent of the true label).
//! * positive: every positive cell flipped to 0 with probability `rate`.
//! * single positive: each row keeps exactly one of its positives, chosen
//!   uniformly.
//! * combined: each row gets one of the three types at random, with a
//!   per-row rate drawn from `[0, 0.10]` (uniform) or `[0, 0.50]` (positive).
//!
//! Randomness comes from a counter-based generator: every draw is a
//! SplitMix64 hash of `(seed, row, stream, cell)`, so the output does not
//! depend on the order in which rows or cells are visited.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::{Error, Result};

/// Upper end of the per-row flip rate for uniform noise in the combined protocol.
pub const COMBINED_UNIFORM_MAX_RATE: f64 = 0.10;
/// Upper end of the per-row flip rate for positive noise in the combined protocol.
pub const COMBINED_POSITIVE_MAX_RATE: f64 = 0.50;

const STREAM_FLIP: u64 = 1;
const STREAM_PICK: u64 = 2;
const STREAM_TYPE: u64 = 3;
const STREAM_RATE: u64 = 4;
const STREAM_GATE: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` keyed by `(seed, row, stream, cell)`.
pub fn keyed_uniform(seed: u64, row: u64, stream: u64, cell: u64) -> f64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ row);
    h = splitmix64(h ^ stream.rotate_left(32));
    h = splitmix64(h ^ cell);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One of the three corruption procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseType {
    Uniform,
    Positive,
    SinglePositive,
}

/// How the combined protocol decides whether a row is corrupted at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CombinedMode {
    /// Every row gets one of the three types, each with probability 1/3.
    #[default]
    AlwaysCorrupt,
    /// A row is corrupted with probability 1/3; corrupted rows then pick a
    /// type uniformly.
    OneThirdChance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    Uniform,
    Positive,
    SinglePositive,
    Combined(CombinedMode),
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Positive => "positive",
            NoiseKind::SinglePositive => "single-positive",
            NoiseKind::Combined(CombinedMode::AlwaysCorrupt) => "combined",
            NoiseKind::Combined(CombinedMode::OneThirdChance) => "combined-one-third",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "uniform" | "type1" => NoiseKind::Uniform,
            "positive" | "type2" => NoiseKind::Positive,
            "single-positive" | "type3" => NoiseKind::SinglePositive,
            "combined" => NoiseKind::Combined(CombinedMode::AlwaysCorrupt),
            "combined-one-third" => NoiseKind::Combined(CombinedMode::OneThirdChance),
            other => {
                return Err(Error::Config(format!(
                    "unknown noise kind {other:?} (expected uniform, positive, single-positive, combined, combined-one-third)"
                )))
            }
        })
    }
}

/// A complete description of one corruption run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Used by `Uniform` and `Positive`; ignored otherwise.
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, NoiseKind::Uniform | NoiseKind::Positive) && !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!("noise rate {} is outside [0, 1]", self.rate)));
        }
        Ok(())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("noise rate {rate} is outside [0, 1]")))
    }
}

fn flip_uniform_row(row: &mut [u8], rate: f64, seed: u64, r: u64) {
    for (j, cell) in row.iter_mut().enumerate() {
        if keyed_uniform(seed, r, STREAM_FLIP, j as u64) < rate {
            *cell ^= 1;
        }
    }
}

fn flip_positive_row(row: &mut [u8], rate: f64, seed: u64, r: u64) {
    for (j, cell) in row.iter_mut().enumerate() {
        if *cell == 1 && keyed_uniform(seed, r, STREAM_FLIP, j as u64) < rate {
            *cell = 0;
        }
    }
}

fn single_positive_row(row: &mut [u8], seed: u64, r: u64) {
    let count = row.iter().filter(|&&v| v == 1).count();
    if count <= 1 {
        return;
    }
    let pick = ((keyed_uniform(seed, r, STREAM_PICK, 0) * count as f64) as usize).min(count - 1);
    for (k, cell) in row.iter_mut().filter(|c| **c == 1).enumerate() {
        if k != pick {
            *cell = 0;
        }
    }
}

fn map_rows<F>(labels: &Array2<u8>, f: F) -> Array2<u8>
where
    F: Fn(usize, &mut [u8]) + Sync + Send,
{
    let mut out = labels.as_standard_layout().into_owned();
    let l = out.ncols();
    if l == 0 {
        return out;
    }
    let mut rows: Vec<&mut [u8]> = out.as_slice_mut().unwrap().chunks_mut(l).collect();
    par::for_each_mut(Execution::default(), &mut rows, |r, row| f(r, row));
    out
}

/// Flips every cell with probability `rate`.
pub fn inject_uniform(labels: &Array2<u8>, rate: f64, seed: u64) -> Result<Array2<u8>> {
    check_rate(rate)?;
    Ok(map_rows(labels, |r, row| flip_uniform_row(row, rate, seed, r as u64)))
}

/// Flips every positive cell to 0 with probability `rate`.
pub fn inject_positive(labels: &Array2<u8>, rate: f64, seed: u64) -> Result<Array2<u8>> {
    check_rate(rate)?;
    Ok(map_rows(labels, |r, row| flip_positive_row(row, rate, seed, r as u64)))
}

/// Keeps one uniformly chosen positive per row; rows with at most one
/// positive are unchanged.
pub fn inject_single_positive(labels: &Array2<u8>, seed: u64) -> Array2<u8> {
    map_rows(labels, |r, row| single_positive_row(row, seed, r as u64))
}

/// Per-row choice made by the combined protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowCorruption {
    /// `None` only in [`CombinedMode::OneThirdChance`] for untouched rows.
    pub noise: Option<NoiseType>,
    /// Flip rate drawn for this row (0 for single-positive or untouched rows).
    pub rate: f64,
}

/// The per-row decisions of the combined protocol, without applying them.
pub fn combined_assignment(num_rows: usize, mode: CombinedMode, seed: u64) -> Vec<RowCorruption> {
    (0..num_rows as u64)
        .map(|r| {
            if mode == CombinedMode::OneThirdChance && keyed_uniform(seed, r, STREAM_GATE, 0) >= 1.0 / 3.0 {
                return RowCorruption { noise: None, rate: 0.0 };
            }
            let u = keyed_uniform(seed, r, STREAM_TYPE, 0);
            let noise = if u < 1.0 / 3.0 {
                NoiseType::Uniform
            } else if u < 2.0 / 3.0 {
                NoiseType::Positive
            } else {
                NoiseType::SinglePositive
            };
            let v = keyed_uniform(seed, r, STREAM_RATE, 0);
            let rate = match noise {
                NoiseType::Uniform => v * COMBINED_UNIFORM_MAX_RATE,
                NoiseType::Positive => v * COMBINED_POSITIVE_MAX_RATE,
                NoiseType::SinglePositive => 0.0,
            };
            RowCorruption {
                noise: Some(noise),
                rate,
            }
        })
        .collect()
}

/// Applies the combined protocol and also returns the per-row decisions.
pub fn inject_combined_with_assignment(
    labels: &Array2<u8>,
    mode: CombinedMode,
    seed: u64,
) -> (Array2<u8>, Vec<RowCorruption>) {
    let plan = combined_assignment(labels.nrows(), mode, seed);
    let out = map_rows(labels, |r, row| {
        let c = plan[r];
        match c.noise {
            Some(NoiseType::Uniform) => flip_uniform_row(row, c.rate, seed, r as u64),
            Some(NoiseType::Positive) => flip_positive_row(row, c.rate, seed, r as u64),
            Some(NoiseType::SinglePositive) => single_positive_row(row, seed, r as u64),
            None => {}
        }
    });
    (out, plan)
}

pub fn inject_combined(labels: &Array2<u8>, mode: CombinedMode, seed: u64) -> Array2<u8> {
    inject_combined_with_assignment(labels, mode, seed).0
}

/// Dispatches on `spec.kind`.
pub fn inject(labels: &Array2<u8>, spec: &NoiseSpec) -> Result<Array2<u8>> {
    spec.validate()?;
    match spec.kind {
        NoiseKind::Uniform => inject_uniform(labels, spec.rate, spec.seed),
        NoiseKind::Positive => inject_positive(labels, spec.rate, spec.seed),
        NoiseKind::SinglePositive => Ok(inject_single_positive(labels, spec.seed)),
        NoiseKind::Combined(mode) => Ok(inject_combined(labels, mode, spec.seed)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn uniform_extremes() {
        let y = array![[1u8, 0, 1], [0, 0, 1]];
        assert_eq!(inject_uniform(&y, 0.0, 7).unwrap(), y);
        assert_eq!(inject_uniform(&y, 1.0, 7).unwrap(), y.mapv(|v| 1 - v));
        assert!(inject_uniform(&y, 1.5, 7).is_err());
        assert!(inject_positive(&y, -0.1, 7).is_err());
    }

    #[test]
    fn positive_rate_one_clears_positives() {
        let y = array![[1u8, 0, 1], [0, 1, 1]];
        assert_eq!(inject_positive(&y, 1.0, 3).unwrap(), Array2::<u8>::zeros((2, 3)));
    }

    #[test]
    fn single_positive_cases() {
        let y = array![[0u8, 1, 0, 1], [0, 0, 0, 0], [1, 0, 0, 0]];
        let out = inject_single_positive(&y, 11);
        let r0 = out.row(0);
        assert_eq!(r0.sum(), 1);
        assert!(r0[1] == 1 || r0[3] == 1);
        assert_eq!(out.row(1), y.row(1));
        assert_eq!(out.row(2), y.row(2));
    }

    #[test]
    fn single_positive_choice_is_uniform() {
        // 3 positives per row, 30000 rows: each slot should survive ~1/3 of the time.
        let n = 30_000;
        let y = Array2::from_shape_fn((n, 3), |_| 1u8);
        let out = inject_single_positive(&y, 5);
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for j in 0..3 {
            let c = out.column(j).iter().map(|&v| v as f64).sum::<f64>();
            assert!((c - n as f64 / 3.0).abs() < 4.0 * sigma, "slot {j}: {c}");
        }
    }

    #[test]
    fn output_is_order_independent() {
        let y = Array2::from_shape_fn((50, 7), |(i, j)| ((i * 7 + j) % 3 == 0) as u8);
        let full = inject_combined(&y, CombinedMode::AlwaysCorrupt, 99);
        // Corrupting a row in isolation (same row index) gives the same row.
        let sub = y.select(ndarray::Axis(0), &[0, 1, 2]);
        let part = inject_combined(&sub, CombinedMode::AlwaysCorrupt, 99);
        assert_eq!(part, full.select(ndarray::Axis(0), &[0, 1, 2]));
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("uniform".parse::<NoiseKind>().unwrap(), NoiseKind::Uniform);
        assert_eq!(
            "single_positive".parse::<NoiseKind>().unwrap(),
            NoiseKind::SinglePositive
        );
        assert_eq!(
            "combined-one-third".parse::<NoiseKind>().unwrap(),
            NoiseKind::Combined(CombinedMode::OneThirdChance)
        );
        assert!("gaussian".parse::<NoiseKind>().is_err());
        for k in [
            "uniform",
            "positive",
            "single-positive",
            "combined",
            "combined-one-third",
        ] {
            assert_eq!(k.parse::<NoiseKind>().unwrap().to_string(), k);
        }
    }

    #[test]
    fn one_third_mode_leaves_rows_untouched() {
        let plan = combined_assignment(30_000, CombinedMode::OneThirdChance, 1);
        let untouched = plan.iter().filter(|c| c.noise.is_none()).count() as f64;
        let sigma = (30_000.0 * (2.0 / 3.0) * (1.0 / 3.0f64)).sqrt();
        assert!((untouched - 20_000.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn combined_rates_stay_in_range() {
        for c in combined_assignment(5_000, CombinedMode::AlwaysCorrupt, 2) {
            match c.noise.unwrap() {
                NoiseType::Uniform => assert!((0.0..=COMBINED_UNIFORM_MAX_RATE).contains(&c.rate)),
                NoiseType::Positive => assert!((0.0..=COMBINED_POSITIVE_MAX_RATE).contains(&c.rate)),
                NoiseType::SinglePositive => assert_eq!(c.rate, 0.0),
            }
        }
    }

    fn arb_labels() -> impl Strategy<Value = Array2<u8>> {
        (1usize..12, 1usize..9).prop_flat_map(|(n, l)| {
            proptest::collection::vec(0u8..2, n * l).prop_map(move |v| Array2::from_shape_vec((n, l), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn injectors_preserve_shape_and_binaryness(y in arb_labels(), seed: u64, rate in 0.0f64..=1.0) {
            let outs = [
                inject_uniform(&y, rate, seed).unwrap(),
                inject_positive(&y, rate, seed).unwrap(),
                inject_single_positive(&y, seed),
                inject_combined(&y, CombinedMode::AlwaysCorrupt, seed),
                inject_combined(&y, CombinedMode::OneThirdChance, seed),
            ];
            for out in &outs {
                prop_assert_eq!(out.dim(), y.dim());
                prop_assert!(out.iter().all(|&v| v <= 1));
            }
            // Positive and single-positive noise never add positives.
            for out in &outs[1..3] {
                prop_assert!(out.iter().zip(y.iter()).all(|(&o, &i)| o <= i));
            }
            for (row_out, row_in) in outs[2].rows().into_iter().zip(y.rows()) {
                let k = row_in.iter().filter(|&&v| v == 1).count();
                prop_assert_eq!(row_out.iter().filter(|&&v| v == 1).count(), k.min(1));
            }
        }

        #[test]
        fn injectors_are_deterministic(y in arb_labels(), seed: u64) {
            let spec = NoiseSpec { kind: NoiseKind::Combined(CombinedMode::AlwaysCorrupt), rate: 0.0, seed };
            prop_assert_eq!(inject(&y, &spec).unwrap(), inject(&y, &spec).unwrap());
            let spec = NoiseSpec { kind: NoiseKind::Uniform, rate: 0.3, seed };
            prop_assert_eq!(inject(&y, &spec).unwrap(), inject(&y, &spec).unwrap());
        }
    }
}
