//! Training objective: Cox partial likelihood plus latent and translation
//! alignment terms.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[cfg(test)]
mod tests;

/// Floor applied to softmax probabilities before taking logs.
pub const KL_PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// KL weight.
    pub lambda1: f64,
    /// Squared Euclidean weight.
    pub lambda2: f64,
    /// Weight of the alignment terms against the Cox loss.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            alpha: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha", self.alpha),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which alignment terms enter the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AlignmentTerms {
    #[default]
    Both,
    LatentOnly,
    TranslationOnly,
}

impl AlignmentTerms {
    pub const ALL: [AlignmentTerms; 3] = [
        AlignmentTerms::LatentOnly,
        AlignmentTerms::TranslationOnly,
        AlignmentTerms::Both,
    ];

    pub fn latent(self) -> bool {
        self != AlignmentTerms::TranslationOnly
    }

    pub fn translation(self) -> bool {
        self != AlignmentTerms::LatentOnly
    }
}

impl fmt::Display for AlignmentTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignmentTerms::Both => "both",
            AlignmentTerms::LatentOnly => "latent",
            AlignmentTerms::TranslationOnly => "translation",
        })
    }
}

impl FromStr for AlignmentTerms {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(AlignmentTerms::Both),
            "latent" => Ok(AlignmentTerms::LatentOnly),
            "translation" => Ok(AlignmentTerms::TranslationOnly),
            other => Err(Error::Config(format!(
                "alignment must be both, latent or translation, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CoxReduction {
    /// Sum over event subjects.
    #[default]
    Sum,
    /// Sum divided by the number of events.
    MeanPerEvent,
}

impl fmt::Display for CoxReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoxReduction::Sum => "sum",
            CoxReduction::MeanPerEvent => "mean",
        })
    }
}

impl FromStr for CoxReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(CoxReduction::Sum),
            "mean" => Ok(CoxReduction::MeanPerEvent),
            other => Err(Error::Config(format!(
                "cox_reduction must be sum or mean, got {other:?}"
            ))),
        }
    }
}

/// Negative Cox partial log-likelihood of `risks` (`[B]`).
///
/// The risk set of subject i is every j with `T_j ≥ T_i`, so tied times
/// share one risk set. Each log-sum-exp is shifted by the largest risk in
/// its own risk set.
pub fn cox_loss(
    tape: &mut Tape,
    risks: Var,
    times: &[f64],
    events: &[bool],
    reduction: CoxReduction,
) -> Result<Var> {
    let b = tape.value(risks).len();
    if times.len() != b || events.len() != b {
        return Err(Error::Shape {
            op: "cox_loss",
            lhs: vec![b],
            rhs: vec![times.len(), events.len()],
        });
    }
    if let Some(t) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::domain(
            "cox_loss",
            format!("survival times must be positive, got {t}"),
        ));
    }
    let event_idx: Vec<usize> = (0..b).filter(|&i| events[i]).collect();
    if event_idx.is_empty() {
        return Err(Error::UninformativeBatch(b));
    }
    let e = event_idx.len();

    let r = tape.value(risks).data().to_vec();
    let mut mask = vec![0.0; e * b];
    let mut shift = vec![0.0; e * b];
    let mut shift_col = vec![0.0; e];
    for (row, &i) in event_idx.iter().enumerate() {
        let c = (0..b)
            .filter(|&j| times[j] >= times[i])
            .map(|j| r[j])
            .fold(f64::NEG_INFINITY, f64::max);
        for j in 0..b {
            // Outside the risk set the shift sends the exponential to exactly
            // zero, so the mask never meets an infinity.
            if times[j] >= times[i] {
                mask[row * b + j] = 1.0;
                shift[row * b + j] = c;
            } else {
                shift[row * b + j] = r[j] + 1000.0;
            }
        }
        shift_col[row] = c;
    }

    let ones = tape.constant(Tensor::full(&[e, 1], 1.0));
    let risk_row = tape.reshape(risks, &[1, b])?;
    let grid = tape.matmul(ones, risk_row)?;
    let shift = tape.constant(Tensor::from_parts(vec![e, b], shift));
    let centered = tape.sub(grid, shift)?;
    let exps = tape.exp(centered);
    let mask = tape.constant(Tensor::from_parts(vec![e, b], mask));
    let masked = tape.mul(exps, mask)?;
    let sums = tape.sum_axis(masked, 1)?;
    let logs = tape.log(sums)?;
    let shift_col = tape.constant(Tensor::from_parts(vec![e], shift_col));
    let lse = tape.add(logs, shift_col)?;
    let lse_total = tape.sum(lse);

    let indicator = tape.constant(Tensor::from_parts(
        vec![b],
        events
            .iter()
            .map(|&ev| if ev { 1.0 } else { 0.0 })
            .collect(),
    ));
    let risk_vec = tape.reshape(risks, &[b])?;
    let picked = tape.mul(risk_vec, indicator)?;
    let picked = tape.sum(picked);
    let loss = tape.sub(lse_total, picked)?;
    Ok(match reduction {
        CoxReduction::Sum => loss,
        CoxReduction::MeanPerEvent => tape.mul_scalar(loss, 1.0 / e as f64),
    })
}

fn check_pair(op: &'static str, tape: &Tape, p: Var, q: Var) -> Result<usize> {
    let (lp, lq) = (tape.value(p).len(), tape.value(q).len());
    if lp != lq || tape.shape(p).len() != 1 || tape.shape(q).len() != 1 {
        return Err(Error::Shape {
            op,
            lhs: tape.shape(p).to_vec(),
            rhs: tape.shape(q).to_vec(),
        });
    }
    Ok(lp)
}

fn to_distribution(tape: &mut Tape, v: Var) -> Result<Var> {
    let soft = tape.softmax(v, 0)?;
    let floored = tape.clamp_min(soft, KL_PROBABILITY_FLOOR);
    let total = tape.sum(floored);
    tape.div(floored, total)
}

/// `KL(softmax(p) ‖ softmax(q))` for two `[D]` vectors.
pub fn kl_embedding(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    check_pair("kl_embedding", tape, p, q)?;
    let pp = to_distribution(tape, p)?;
    let qq = to_distribution(tape, q)?;
    let log_p = tape.log(pp)?;
    let log_q = tape.log(qq)?;
    let ratio = tape.sub(log_p, log_q)?;
    let terms = tape.mul(pp, ratio)?;
    Ok(tape.sum(terms))
}

/// `Σ (pᵢ − qᵢ)²` for two `[D]` vectors.
pub fn sq_euclidean(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    check_pair("sq_euclidean", tape, p, q)?;
    let d = tape.sub(p, q)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.sum(sq))
}

fn weighted_pair(tape: &mut Tape, p: Var, q: Var, w: &LossWeights) -> Result<Var> {
    let kl = kl_embedding(tape, p, q)?;
    let euclid = sq_euclidean(tape, p, q)?;
    let kl = tape.mul_scalar(kl, w.lambda1);
    let euclid = tape.mul_scalar(euclid, w.lambda2);
    tape.add(kl, euclid)
}

/// `λ₁·KL(P_l ‖ G_l) + λ₂·‖P_l − G_l‖²` on the class-token row of P_l.
pub fn latent_loss(tape: &mut Tape, p_l_cls: Var, g_l: Var, w: &LossWeights) -> Result<Var> {
    weighted_pair(tape, p_l_cls, g_l, w)
}

/// `λ₁·KL(G_l ‖ Ĝ_l) + λ₂·‖G_l − Ĝ_l‖²`.
pub fn translation_loss(tape: &mut Tape, g_l: Var, g_l_hat: Var, w: &LossWeights) -> Result<Var> {
    weighted_pair(tape, g_l, g_l_hat, w)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBundle {
    pub cox: f64,
    pub latent: f64,
    pub translation: f64,
    pub total: f64,
}

pub fn total_loss(cox: f64, latent: f64, translation: f64, w: &LossWeights) -> LossBundle {
    LossBundle {
        cox,
        latent,
        translation,
        total: cox + w.alpha * (latent + translation),
    }
}

/// [`total_loss`] on the tape.
pub fn total_loss_var(
    tape: &mut Tape,
    cox: Var,
    latent: Var,
    translation: Var,
    w: &LossWeights,
) -> Result<Var> {
    let align = tape.add(latent, translation)?;
    let align = tape.mul_scalar(align, w.alpha);
    tape.add(cox, align)
}
