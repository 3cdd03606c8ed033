//! Binary cross entropy, the asymmetric loss, and the regularized objective.
//!
//! The asymmetric loss for one sample is
//!
//! ```text
//! (1/L) Σ_l  −y_l (1−p_l)^γ⁺ log p_l  −  (1−y_l) q_l^γ⁻ log(1−q_l),   q_l = max(p_l − m, 0)
//! ```
//!
//! where `p` is the predicted probability clamped into `[eps, 1−eps]`. The
//! shifted probability `q` is used only in the negative term, so a negative
//! label predicted below `m` contributes exactly zero.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::embeddings::{context_regularizer, LabelEmbeddings};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub shift_m: f64,
    pub lambda: f64,
    pub clamp_eps: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            gamma_pos: 1.0,
            gamma_neg: 4.0,
            shift_m: 0.05,
            lambda: 0.1,
            clamp_eps: 1e-7,
        }
    }
}

impl LossSpec {
    /// Plain BCE settings: no focusing, no shift, no regularizer.
    pub fn bce() -> Self {
        LossSpec {
            gamma_pos: 0.0,
            gamma_neg: 0.0,
            shift_m: 0.0,
            lambda: 0.0,
            clamp_eps: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.gamma_pos >= 0.0 && self.gamma_pos.is_finite()) {
            return bad("gamma_pos must be a finite non-negative number");
        }
        if !(self.gamma_neg >= 0.0 && self.gamma_neg.is_finite()) {
            return bad("gamma_neg must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.shift_m) {
            return bad("shift_m must lie in [0, 1)");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite non-negative number");
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 1e-3) {
            return bad("clamp_eps must lie in (0, 1e-3]");
        }
        if self.gamma_pos > self.gamma_neg {
            log::warn!(
                "gamma_pos ({}) exceeds gamma_neg ({}); focusing usually wants gamma_pos <= gamma_neg",
                self.gamma_pos,
                self.gamma_neg
            );
        }
        Ok(())
    }
}

fn check_lengths(y: usize, yhat: usize) -> Result<()> {
    if y != yhat {
        return Err(Error::Data(format!(
            "label vector has {y} entries, predictions have {yhat}"
        )));
    }
    if y == 0 {
        return Err(Error::Data("empty label vector".into()));
    }
    Ok(())
}

/// Clamped probability and d(clamped)/d(raw).
fn clamp(p: f64, eps: f64) -> (f64, f64) {
    if p < eps {
        (eps, 0.0)
    } else if p > 1.0 - eps {
        (1.0 - eps, 0.0)
    } else {
        (p, 1.0)
    }
}

/// `base^gamma`, `gamma · base^(gamma−1)`; the derivative is taken as 0 when γ = 0.
fn focus(base: f64, gamma: f64) -> (f64, f64) {
    if gamma == 0.0 {
        (1.0, 0.0)
    } else {
        (base.powf(gamma), gamma * base.powf(gamma - 1.0))
    }
}

/// Per-label loss and its derivative with respect to the raw prediction.
fn asl_term(y: u8, yhat: f64, spec: &LossSpec) -> (f64, f64) {
    let (p, dp) = clamp(yhat, spec.clamp_eps);
    if y == 1 {
        let (w, dw) = focus(1.0 - p, spec.gamma_pos);
        let lp = p.ln();
        let value = -w * lp;
        // d/dp [−(1−p)^γ log p] = γ(1−p)^(γ−1) log p − (1−p)^γ / p
        let grad = dw * lp - w / p;
        (value, grad * dp)
    } else {
        let q = p - spec.shift_m;
        if q <= 0.0 {
            return (0.0, 0.0);
        }
        let (w, dw) = focus(q, spec.gamma_neg);
        let l1q = (1.0 - q).ln();
        let value = -w * l1q;
        // d/dq [−q^γ log(1−q)] = −γ q^(γ−1) log(1−q) + q^γ / (1−q)
        let grad = -dw * l1q + w / (1.0 - q);
        (value, grad * dp)
    }
}

/// Mean binary cross entropy over the labels of one sample.
pub fn bce(y: &[u8], yhat: &[f64], clamp_eps: f64) -> Result<f64> {
    check_lengths(y.len(), yhat.len())?;
    let sum: f64 = y
        .iter()
        .zip(yhat)
        .map(|(&yl, &ph)| {
            let (p, _) = clamp(ph, clamp_eps);
            if yl == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / y.len() as f64)
}

/// Asymmetric loss of one sample.
pub fn asl(y: &[u8], yhat: &[f64], spec: &LossSpec) -> Result<f64> {
    check_lengths(y.len(), yhat.len())?;
    let sum: f64 = y.iter().zip(yhat).map(|(&yl, &p)| asl_term(yl, p, spec).0).sum();
    Ok(sum / y.len() as f64)
}

/// Asymmetric loss of one sample and its gradient with respect to `yhat`.
/// At the shift kink `yhat == m` the gradient is 0.
pub fn asl_with_grad(y: ArrayView1<u8>, yhat: ArrayView1<f64>, spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    check_lengths(y.len(), yhat.len())?;
    let inv_l = 1.0 / y.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for (&yl, &p) in y.iter().zip(yhat.iter()) {
        let (v, g) = asl_term(yl, p, spec);
        sum += v;
        grad.push(g * inv_l);
    }
    Ok((sum * inv_l, grad))
}

/// Regularized batch objective.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    /// `mean_asl + λ · regularizer`
    pub value: f64,
    pub mean_asl: f64,
    /// Unweighted anchor regularizer value.
    pub regularizer: f64,
    /// d value / d ŷ, one row per sample (already divided by the batch size).
    pub prob_grad: Array2<f64>,
    /// λ-weighted regularizer gradient with respect to `emb.current`.
    pub embedding_grad: Array2<f64>,
}

pub fn total_loss(
    y: ArrayView2<u8>,
    yhat: ArrayView2<f64>,
    emb: &LabelEmbeddings,
    spec: &LossSpec,
) -> Result<TotalLoss> {
    if y.dim() != yhat.dim() {
        return Err(Error::Data(format!(
            "labels {:?} vs predictions {:?}",
            y.dim(),
            yhat.dim()
        )));
    }
    let n = y.nrows();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let mut prob_grad = Array2::zeros(yhat.dim());
    let mut asl_sum = 0.0;
    for (i, (yr, pr)) in y.rows().into_iter().zip(yhat.rows()).enumerate() {
        let (v, g) = asl_with_grad(yr, pr, spec)?;
        asl_sum += v;
        for (dst, gv) in prob_grad.row_mut(i).iter_mut().zip(g) {
            *dst = gv / n as f64;
        }
    }
    let mean_asl = asl_sum / n as f64;
    let (reg, reg_grad) = regularizer_term(emb, spec.lambda);
    Ok(TotalLoss {
        value: mean_asl + spec.lambda * reg,
        mean_asl,
        regularizer: reg,
        prob_grad,
        embedding_grad: reg_grad,
    })
}

/// Unweighted regularizer value and its λ-weighted gradient. With λ = 0 the
/// gradient is exactly zero.
pub fn regularizer_term(emb: &LabelEmbeddings, lambda: f64) -> (f64, Array2<f64>) {
    let (value, grad) = context_regularizer(emb);
    if lambda == 0.0 {
        return (value, Array2::zeros(grad.dim()));
    }
    (value, grad * lambda)
}
