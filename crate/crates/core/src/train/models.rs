use rand::Rng;

use super::{Method, TrainConfig};
use crate::data::PatientRecord;
use crate::error::{Error, Result};
use crate::losses::{cox_loss, latent_loss, translation_loss};
use crate::model::{forward_train, ModelConfig, PathoGenX};
use crate::nn::params::join;
use crate::nn::{
    bind_frozen, bind_trainable, linear_forward, mlp_forward, mlp_init, Linear, Mlp, ParamTree,
};
use crate::tensor::{Tape, Tensor, Var};

/// A batch objective on a tape: the bound parameter leaves in visiting
/// order and the loss terms that were built.
pub struct Objective {
    pub leaves: Vec<Var>,
    /// Absent when nothing in the batch carries a training signal.
    pub total: Option<Var>,
    pub cox: Option<Var>,
    pub latent: Option<Var>,
    pub translation: Option<Var>,
}

impl Objective {
    fn compose(
        tape: &mut Tape,
        leaves: Vec<Var>,
        cox: Option<Var>,
        latent: Option<Var>,
        translation: Option<Var>,
        alpha: f64,
    ) -> Result<Self> {
        let align = match (latent, translation) {
            (Some(a), Some(b)) => Some(tape.add(a, b)?),
            (a, b) => a.or(b),
        }
        .map(|a| tape.mul_scalar(a, alpha));
        let total = match (cox, align) {
            (Some(c), Some(a)) => Some(tape.add(c, a)?),
            (c, a) => c.or(a),
        };
        Ok(Self {
            leaves,
            total,
            cox,
            latent,
            translation,
        })
    }
}

pub trait SurvivalModel: ParamTree<Elem = Tensor> + Clone + Sized {
    const METHOD: Method;

    fn init(rng: &mut impl Rng, cfg: &ModelConfig) -> Result<Self>;

    /// Builds the training objective for one batch.
    fn objective(
        &self,
        tape: &mut Tape,
        batch: &[&PatientRecord],
        cfg: &TrainConfig,
    ) -> Result<Objective>;

    /// Risk per record, in order.
    fn predict(&self, records: &[PatientRecord]) -> Result<Vec<f64>>;
}

fn genomic(r: &PatientRecord) -> Result<&Tensor> {
    r.genomic
        .as_ref()
        .ok_or_else(|| Error::MissingGenomic(r.id.clone()))
}

fn batch_cox(
    tape: &mut Tape,
    risks: Var,
    batch: &[&PatientRecord],
    cfg: &TrainConfig,
) -> Result<Option<Var>> {
    if batch.iter().all(|r| !r.outcome.event) {
        return Ok(None);
    }
    let times: Vec<f64> = batch.iter().map(|r| r.outcome.time).collect();
    let events: Vec<bool> = batch.iter().map(|r| r.outcome.event).collect();
    cox_loss(tape, risks, &times, &events, cfg.cox_reduction).map(Some)
}

fn batch_mean(tape: &mut Tape, terms: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(Some(tape.mul_scalar(acc, 1.0 / terms.len() as f64)))
}

impl SurvivalModel for PathoGenX {
    const METHOD: Method = Method::PathoGenX;

    fn init(rng: &mut impl Rng, cfg: &ModelConfig) -> Result<Self> {
        PathoGenX::init(rng, cfg)
    }

    fn objective(
        &self,
        tape: &mut Tape,
        batch: &[&PatientRecord],
        cfg: &TrainConfig,
    ) -> Result<Objective> {
        let p = bind_trainable(self, tape);
        let leaves = p.elems().into_iter().copied().collect();
        let (mut risks, mut latent, mut translation) = (Vec::new(), Vec::new(), Vec::new());
        for r in batch {
            let g0 = tape.constant(genomic(r)?.clone());
            let bag = tape.constant(r.bag.clone());
            let a = forward_train(tape, &p, bag, g0)?;
            risks.push(a.risk);
            if cfg.alignment.latent() {
                latent.push(latent_loss(tape, a.p_l_cls, a.g_l, &cfg.weights)?);
            }
            if cfg.alignment.translation() {
                translation.push(translation_loss(tape, a.g_l, a.g_l_hat, &cfg.weights)?);
            }
        }
        let risks = tape.concat_rows(&risks)?;
        let cox = batch_cox(tape, risks, batch, cfg)?;
        let latent = batch_mean(tape, &latent)?;
        let translation = batch_mean(tape, &translation)?;
        Objective::compose(tape, leaves, cox, latent, translation, cfg.weights.alpha)
    }

    fn predict(&self, records: &[PatientRecord]) -> Result<Vec<f64>> {
        let bags: Vec<&Tensor> = records.iter().map(|r| &r.bag).collect();
        PathoGenX::predict(self, &bags)
    }
}

/// Linear embedding followed by an MLP risk head.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedHead<T = Tensor> {
    pub embed: Linear<T>,
    pub head: Mlp<T>,
}

impl EmbedHead {
    fn init(rng: &mut impl Rng, d_in: usize, cfg: &ModelConfig) -> Self {
        Self {
            embed: Linear::init(rng, d_in, cfg.d_model),
            head: mlp_init(rng, &[cfg.d_model, cfg.head_hidden, 1]),
        }
    }

    /// Risks `[B]` for inputs `[B × d_in]`.
    fn forward(tape: &mut Tape, p: &EmbedHead<Var>, x: Var) -> Result<Var> {
        let b = tape.shape(x)[0];
        let h = linear_forward(tape, &p.embed, x)?;
        let out = mlp_forward(tape, &p.head, h)?;
        tape.reshape(out, &[b])
    }

    fn risks(&self, x: Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = bind_frozen(self, &mut tape);
        let x = tape.constant(x);
        let r = Self::forward(&mut tape, &p, x)?;
        Ok(tape.value(r).data().to_vec())
    }
}

impl<T> ParamTree for EmbedHead<T> {
    type Elem = T;
    type Mapped<U> = EmbedHead<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> EmbedHead<U> {
        EmbedHead {
            embed: self.embed.map(f),
            head: self.head.map(f),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.embed.visit(&join(prefix, "embed"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

fn stack(rows: Vec<Vec<f64>>) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::EmptyBag);
    }
    Tensor::from_rows(&rows)
}

fn mean_pool(bag: &Tensor) -> Vec<f64> {
    let n = bag.rows() as f64;
    let mut out = vec![0.0; bag.row_len()];
    for i in 0..bag.rows() {
        for (o, v) in out.iter_mut().zip(bag.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn embed_head_objective(
    model: &EmbedHead,
    tape: &mut Tape,
    x: Tensor,
    batch: &[&PatientRecord],
    cfg: &TrainConfig,
) -> Result<Objective> {
    let p = bind_trainable(model, tape);
    let leaves = p.elems().into_iter().copied().collect();
    let x = tape.constant(x);
    let risks = EmbedHead::forward(tape, &p, x)?;
    let cox = batch_cox(tape, risks, batch, cfg)?;
    Objective::compose(tape, leaves, cox, None, None, cfg.weights.alpha)
}

/// Image-only baseline: mean-pooled bag, linear embedding, MLP head.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanMil<T = Tensor>(pub EmbedHead<T>);

impl MeanMil {
    fn features(records: &[&PatientRecord]) -> Result<Tensor> {
        stack(records.iter().map(|r| mean_pool(&r.bag)).collect())
    }
}

impl<T> ParamTree for MeanMil<T> {
    type Elem = T;
    type Mapped<U> = MeanMil<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> MeanMil<U> {
        MeanMil(self.0.map(f))
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.0.visit(prefix, f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        self.0.visit_mut(prefix, f);
    }
}

impl SurvivalModel for MeanMil {
    const METHOD: Method = Method::MeanMil;

    fn init(rng: &mut impl Rng, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MeanMil(EmbedHead::init(rng, cfg.d_in, cfg)))
    }

    fn objective(
        &self,
        tape: &mut Tape,
        batch: &[&PatientRecord],
        cfg: &TrainConfig,
    ) -> Result<Objective> {
        embed_head_objective(&self.0, tape, Self::features(batch)?, batch, cfg)
    }

    fn predict(&self, records: &[PatientRecord]) -> Result<Vec<f64>> {
        let refs: Vec<&PatientRecord> = records.iter().collect();
        self.0.risks(Self::features(&refs)?)
    }
}

/// Genomic-only reference: MLP on the expression vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GenomicCox<T = Tensor>(pub EmbedHead<T>);

impl GenomicCox {
    fn features(records: &[&PatientRecord]) -> Result<Tensor> {
        let rows = records
            .iter()
            .map(|r| genomic(r).map(|g| g.data().to_vec()))
            .collect::<Result<_>>()?;
        stack(rows)
    }
}

impl<T> ParamTree for GenomicCox<T> {
    type Elem = T;
    type Mapped<U> = GenomicCox<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> GenomicCox<U> {
        GenomicCox(self.0.map(f))
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.0.visit(prefix, f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        self.0.visit_mut(prefix, f);
    }
}

impl SurvivalModel for GenomicCox {
    const METHOD: Method = Method::GenomicCox;

    fn init(rng: &mut impl Rng, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(GenomicCox(EmbedHead::init(rng, cfg.d_genomic, cfg)))
    }

    fn objective(
        &self,
        tape: &mut Tape,
        batch: &[&PatientRecord],
        cfg: &TrainConfig,
    ) -> Result<Objective> {
        embed_head_objective(&self.0, tape, Self::features(batch)?, batch, cfg)
    }

    fn predict(&self, records: &[PatientRecord]) -> Result<Vec<f64>> {
        let refs: Vec<&PatientRecord> = records.iter().collect();
        self.0.risks(Self::features(&refs)?)
    }
}
