use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::models::SurvivalModel;
use super::{Method, TrainConfig};
use crate::data::PatientRecord;
use crate::error::{Error, Result};
use crate::survival::{c_index, Outcome};
use crate::tensor::{Tape, Tensor, Var};

pub const LOG_HEADER: &str = "epoch,batch,cox,latent,translation,total";

/// Loss values of one optimizer step. Terms that were not built are 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub batch: usize,
    pub cox: f64,
    pub latent: f64,
    pub translation: f64,
    pub total: f64,
}

pub fn write_log_csv(mut w: impl Write, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch, r.batch, r.cox, r.latent, r.translation, r.total
        )?;
    }
    Ok(())
}

/// A model with its optimizer state, shuffling stream and epoch counter.
#[derive(Clone, Debug)]
pub struct Trainer<M> {
    pub config: TrainConfig,
    pub model: M,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub(super) rng: ChaCha8Rng,
}

pub(super) fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

fn check_data(method: Method, data: &[PatientRecord]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::TooFewPatients { have: 0, need: 1 });
    }
    if method != Method::MeanMil {
        if let Some(r) = data.iter().find(|r| r.genomic.is_none()) {
            return Err(Error::MissingGenomic(r.id.clone()));
        }
    }
    Ok(())
}

impl<M: SurvivalModel> Trainer<M> {
    /// Fresh weights for `data`; input widths are taken from the records.
    pub fn new(mut config: TrainConfig, data: &[PatientRecord]) -> Result<Self> {
        config.method = M::METHOD;
        check_data(M::METHOD, data)?;
        config.model.d_in = data[0].bag.row_len();
        if let Some(g) = data.iter().find_map(|r| r.genomic.as_ref()) {
            config.model.d_genomic = g.len();
        }
        config.validate()?;
        let model = M::init(&mut ChaCha8Rng::seed_from_u64(config.seed), &config.model)?;
        Ok(Self {
            adam: AdamState::new(model.elems()),
            rng: shuffle_rng(config.seed),
            epoch: 0,
            model,
            config,
        })
    }

    /// One pass over `data` in a seeded random order.
    pub fn train_epoch(&mut self, data: &[PatientRecord]) -> Result<Vec<LogRow>> {
        check_data(M::METHOD, data)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        self.epoch += 1;
        let size = self.config.batch_size.min(data.len());
        let mut rows = Vec::new();
        for (b, chunk) in order.chunks(size).enumerate() {
            let batch: Vec<&PatientRecord> = chunk.iter().map(|&i| &data[i]).collect();
            rows.push(self.step(&batch, b + 1)?);
        }
        Ok(rows)
    }

    fn step(&mut self, batch: &[&PatientRecord], index: usize) -> Result<LogRow> {
        let mut tape = Tape::new();
        let obj = self.model.objective(&mut tape, batch, &self.config)?;
        let value = |v: Option<Var>| v.map_or(Ok(0.0), |v| tape.value(v).item());
        let row = LogRow {
            epoch: self.epoch,
            batch: index,
            cox: value(obj.cox)?,
            latent: value(obj.latent)?,
            translation: value(obj.translation)?,
            total: value(obj.total)?,
        };
        if let Some(total) = obj.total {
            let grads = tape.backward(total)?;
            let grads: Vec<Tensor> = obj
                .leaves
                .iter()
                .map(|&l| grads.get_or_zeros(l, tape.shape(l)))
                .collect();
            let cfg = &self.config;
            adam_step(
                self.model.elems_mut(),
                &grads,
                &mut self.adam,
                cfg.learning_rate,
                cfg.weight_decay,
                cfg.decay_mode,
            )?;
        }
        Ok(row)
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn fit(&mut self, data: &[PatientRecord]) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        while self.epoch < self.config.epochs {
            rows.extend(self.train_epoch(data)?);
        }
        Ok(rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub c_index: f64,
    pub risks: Vec<f64>,
}

pub fn evaluate<M: SurvivalModel>(model: &M, records: &[PatientRecord]) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::TooFewPatients { have: 0, need: 1 });
    }
    let risks = model.predict(records)?;
    let outcomes: Vec<Outcome> = records.iter().map(|r| r.outcome).collect();
    Ok(Evaluation {
        c_index: c_index(&risks, &outcomes)?,
        risks,
    })
}
