//! PathoGen-X: pathology encoder, genomic projection, genomic decoder and
//! survival head.
//!
//! Training runs [`forward_train`] on paired samples; testing runs
//! [`forward_test`], which takes only the image bag.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::join;
use crate::nn::{
    attention_block_forward, bind_frozen, linear_forward, mlp_forward, mlp_init, normal_init,
    ppeg_forward, AttentionBlock, Linear, Mlp, ParamTree, Ppeg,
};
use crate::tensor::{Tape, Tensor, Var};


/// Which embedding the risk head reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RiskInput {
    /// The decoder output Ĝ_l.
    #[default]
    Translated,
    /// Row 0 of the encoder output P_l.
    ClassToken,
    /// The genomic projection G_l during training and Ĝ_l at test time.
    Genomic,
}

impl fmt::Display for RiskInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskInput::Translated => "translated",
            RiskInput::ClassToken => "class_token",
            RiskInput::Genomic => "genomic",
        })
    }
}

impl FromStr for RiskInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translated" => Ok(RiskInput::Translated),
            "class_token" => Ok(RiskInput::ClassToken),
            "genomic" => Ok(RiskInput::Genomic),
            other => Err(Error::Config(format!(
                "risk_input must be translated, class_token or genomic, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_genomic: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Hidden width of the risk head MLP.
    pub head_hidden: usize,
    pub decoder_depth: usize,
    pub risk_input: RiskInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 1024,
            d_genomic: 746,
            d_model: 256,
            heads: 4,
            head_hidden: 64,
            decoder_depth: 1,
            risk_input: RiskInput::Translated,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_in", self.d_in),
            ("d_genomic", self.d_genomic),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathoGenX<T = Tensor> {
    pub input_embed: Linear<T>,
    /// `[1 × D]`
    pub class_token: T,
    pub encoder1: AttentionBlock<T>,
    pub ppeg: Ppeg<T>,
    pub encoder2: AttentionBlock<T>,
    pub genomic_projection: Linear<T>,
    pub decoder: Vec<AttentionBlock<T>>,
    pub decoder_out: Linear<T>,
    pub risk_head: Mlp<T>,
    pub risk_input: RiskInput,
}

impl PathoGenX {
    pub fn init(rng: &mut impl Rng, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        Ok(Self {
            input_embed: Linear::init(rng, cfg.d_in, d),
            class_token: normal_init(rng, 0.02, &[1, d]),
            encoder1: AttentionBlock::init(rng, d, cfg.heads)?,
            ppeg: Ppeg::init(rng, d),
            encoder2: AttentionBlock::init(rng, d, cfg.heads)?,
            genomic_projection: Linear::init(rng, cfg.d_genomic, d),
            decoder: (0..cfg.decoder_depth)
                .map(|_| AttentionBlock::init(rng, d, cfg.heads))
                .collect::<Result<_>>()?,
            decoder_out: Linear::init(rng, d, d),
            risk_head: mlp_init(rng, &[d, cfg.head_hidden, 1]),
            risk_input: cfg.risk_input,
        })
    }

    pub fn d_model(&self) -> usize {
        self.class_token.shape()[1]
    }

    pub fn d_in(&self) -> usize {
        self.input_embed.in_dim()
    }

    pub fn d_genomic(&self) -> usize {
        self.genomic_projection.in_dim()
    }

    /// Image-only risk for each bag, in order.
    pub fn predict(&self, bags: &[&Tensor]) -> Result<Vec<f64>> {
        Ok(self.infer(bags)?.into_iter().map(|o| o.risk).collect())
    }

    /// Image-only outputs for each bag, in order.
    pub fn infer(&self, bags: &[&Tensor]) -> Result<Vec<Inference>> {
        let mut tape = Tape::new();
        let p = bind_frozen(self, &mut tape);
        let mark = tape.len();
        let mut out = Vec::with_capacity(bags.len());
        for bag in bags {
            let x = tape.constant((*bag).clone());
            let pl = encode_pathology(&mut tape, &p, x)?;
            let cls = class_row(&mut tape, pl)?;
            let translated = decode_to_genomic(&mut tape, &p, pl)?;
            let risk = risk_from(&mut tape, &p, cls, translated)?;
            out.push(Inference {
                class_token: tape.value(cls).clone(),
                translated: tape.value(translated).clone(),
                risk: tape.value(risk).item()?,
            });
            tape.truncate(mark);
        }
        Ok(out)
    }

    /// G_l for each genomic vector, in order.
    pub fn project(&self, genomic: &[&Tensor]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let w = tape.constant(self.genomic_projection.weight.clone());
        let b = tape.constant(self.genomic_projection.bias.clone());
        let proj = Linear { weight: w, bias: b };
        let mark = tape.len();
        let mut out = Vec::with_capacity(genomic.len());
        for g in genomic {
            let x = tape.constant((*g).clone());
            let gl = project_with(&mut tape, &proj, x)?;
            out.push(tape.value(gl).clone());
            tape.truncate(mark);
        }
        Ok(out)
    }
}

/// Image-only forward outputs for one bag.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub class_token: Tensor,
    pub translated: Tensor,
    pub risk: f64,
}

impl<T> ParamTree for PathoGenX<T> {
    type Elem = T;
    type Mapped<U> = PathoGenX<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> PathoGenX<U> {
        PathoGenX {
            input_embed: self.input_embed.map(f),
            class_token: f(&self.class_token),
            encoder1: self.encoder1.map(f),
            ppeg: self.ppeg.map(f),
            encoder2: self.encoder2.map(f),
            genomic_projection: self.genomic_projection.map(f),
            decoder: self.decoder.map(f),
            decoder_out: self.decoder_out.map(f),
            risk_head: self.risk_head.map(f),
            risk_input: self.risk_input,
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.input_embed.visit(&join(prefix, "input_embed"), f);
        f(join(prefix, "class_token"), &self.class_token);
        self.encoder1.visit(&join(prefix, "encoder1"), f);
        self.ppeg.visit(&join(prefix, "ppeg"), f);
        self.encoder2.visit(&join(prefix, "encoder2"), f);
        self.genomic_projection
            .visit(&join(prefix, "genomic_projection"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        self.decoder_out.visit(&join(prefix, "decoder_out"), f);
        self.risk_head.visit(&join(prefix, "risk_head"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        self.input_embed.visit_mut(&join(prefix, "input_embed"), f);
        f(join(prefix, "class_token"), &mut self.class_token);
        self.encoder1.visit_mut(&join(prefix, "encoder1"), f);
        self.ppeg.visit_mut(&join(prefix, "ppeg"), f);
        self.encoder2.visit_mut(&join(prefix, "encoder2"), f);
        self.genomic_projection
            .visit_mut(&join(prefix, "genomic_projection"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        self.decoder_out.visit_mut(&join(prefix, "decoder_out"), f);
        self.risk_head.visit_mut(&join(prefix, "risk_head"), f);
    }
}

/// P_l for a bag `[N × D_in]`: `[(N+1) × D]` with the class token in row 0.
pub fn encode_pathology(tape: &mut Tape, p: &PathoGenX<Var>, bag: Var) -> Result<Var> {
    let d_in = tape.shape(p.input_embed.weight)[0];
    match tape.shape(bag) {
        [0, _] => return Err(Error::EmptyBag),
        [_, d] if *d == d_in => {}
        other => {
            return Err(Error::Shape {
                op: "encode_pathology",
                lhs: other.to_vec(),
                rhs: vec![d_in],
            })
        }
    }
    let embedded = linear_forward(tape, &p.input_embed, bag)?;
    let p0 = tape.concat_rows(&[p.class_token, embedded])?;
    let p1 = attention_block_forward(tape, &p.encoder1, p0)?;
    let p2 = ppeg_forward(tape, &p.ppeg, p1)?;
    attention_block_forward(tape, &p.encoder2, p2)
}

/// G_l = g0·W + b, as a `[D]` vector.
pub fn project_genomic(tape: &mut Tape, p: &PathoGenX<Var>, g0: Var) -> Result<Var> {
    project_with(tape, &p.genomic_projection, g0)
}

fn project_with(tape: &mut Tape, proj: &Linear<Var>, g0: Var) -> Result<Var> {
    let d_g = tape.shape(proj.weight)[0];
    if tape.value(g0).len() != d_g {
        return Err(Error::Shape {
            op: "project_genomic",
            lhs: tape.shape(g0).to_vec(),
            rhs: vec![d_g],
        });
    }
    let row = tape.reshape(g0, &[1, d_g])?;
    let out = linear_forward(tape, proj, row)?;
    let d = tape.shape(out)[1];
    tape.reshape(out, &[d])
}

/// Ĝ_l: the decoder blocks applied to P_l, then the output map on row 0.
pub fn decode_to_genomic(tape: &mut Tape, p: &PathoGenX<Var>, pl: Var) -> Result<Var> {
    let mut z = pl;
    for block in &p.decoder {
        z = attention_block_forward(tape, block, z)?;
    }
    let first = tape.slice_rows(z, 0, 1)?;
    let out = linear_forward(tape, &p.decoder_out, first)?;
    let d = tape.shape(out)[1];
    tape.reshape(out, &[d])
}

/// Risk head on a `[D]` embedding; returns a one-element tensor.
pub fn predict_risk(tape: &mut Tape, p: &PathoGenX<Var>, embedding: Var) -> Result<Var> {
    let d = tape.value(embedding).len();
    let row = tape.reshape(embedding, &[1, d])?;
    let out = mlp_forward(tape, &p.risk_head, row)?;
    tape.reshape(out, &[1])
}

fn class_row(tape: &mut Tape, pl: Var) -> Result<Var> {
    let row = tape.slice_rows(pl, 0, 1)?;
    let d = tape.shape(row)[1];
    tape.reshape(row, &[d])
}

fn risk_from(tape: &mut Tape, p: &PathoGenX<Var>, cls: Var, translated: Var) -> Result<Var> {
    match p.risk_input {
        RiskInput::Translated | RiskInput::Genomic => predict_risk(tape, p, translated),
        RiskInput::ClassToken => predict_risk(tape, p, cls),
    }
}

/// Tape handles for everything the training objective reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardArtifacts {
    /// Row 0 of P_l, `[D]`.
    pub p_l_cls: Var,
    /// `[D]`
    pub g_l: Var,
    /// `[D]`
    pub g_l_hat: Var,
    /// `[1]`
    pub risk: Var,
}

pub fn forward_train(
    tape: &mut Tape,
    p: &PathoGenX<Var>,
    bag: Var,
    g0: Var,
) -> Result<ForwardArtifacts> {
    let pl = encode_pathology(tape, p, bag)?;
    let p_l_cls = class_row(tape, pl)?;
    let g_l = project_genomic(tape, p, g0)?;
    let g_l_hat = decode_to_genomic(tape, p, pl)?;
    let risk = match p.risk_input {
        RiskInput::Genomic => predict_risk(tape, p, g_l)?,
        _ => risk_from(tape, p, p_l_cls, g_l_hat)?,
    };
    Ok(ForwardArtifacts {
        p_l_cls,
        g_l,
        g_l_hat,
        risk,
    })
}

pub fn forward_test(tape: &mut Tape, p: &PathoGenX<Var>, bag: Var) -> Result<Var> {
    let pl = encode_pathology(tape, p, bag)?;
    let cls = class_row(tape, pl)?;
    let translated = decode_to_genomic(tape, p, pl)?;
    risk_from(tape, p, cls, translated)
}
