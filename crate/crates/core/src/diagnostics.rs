//! Finite-difference gradient suite over every differentiable operation,
//! the network blocks, the losses and the composed model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::losses::{
    cox_loss, kl_embedding, latent_loss, sq_euclidean, translation_loss, CoxReduction, LossWeights,
};
use crate::model::{forward_train, ModelConfig, PathoGenX};
use crate::nn::{
    attention_block_forward, layer_norm_forward, linear_forward, mlp_forward, mlp_init,
    msa_forward, ppeg_forward, AttentionBlock, LayerNorm, Linear, Msa, ParamTree, Ppeg,
};
use crate::tensor::{finite_difference_check, GradCheckReport, Tape, Tensor, Var};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

type Case = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Suite {
    rng: ChaCha8Rng,
    entries: Vec<SuiteEntry>,
}

impl Suite {
    fn randn(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("nonzero shape")
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor {
        self.randn(shape).map(|v| v.abs() + 0.5)
    }

    /// Standard normal values pushed at least 0.1 away from zero.
    fn off_kink(&mut self, shape: &[usize]) -> Tensor {
        self.randn(shape)
            .map(|v| if v.abs() < 0.1 { v + 0.3 } else { v })
    }

    fn randomized<P: ParamTree<Elem = Tensor>>(&mut self, template: &P) -> Vec<Tensor> {
        template
            .elems()
            .into_iter()
            .map(|t| self.randn(t.shape()).map(|v| 0.5 * v))
            .collect()
    }

    fn run(&mut self, name: &'static str, inputs: Vec<Tensor>, f: Case) -> Result<()> {
        let weights: Vec<f64> = (0..4096)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        let report = finite_difference_check(
            |t, v| {
                let y = f(t, v)?;
                weighted_sum(t, y, &weights)
            },
            &inputs,
            GRADCHECK_STEP,
        )?;
        self.entries.push(SuiteEntry { name, report });
        Ok(())
    }

    /// Checks a block whose parameters are the leading inputs.
    fn tree<P>(
        &mut self,
        name: &'static str,
        template: P,
        extra: Vec<Tensor>,
        f: impl Fn(&mut Tape, &P::Mapped<Var>, &[Var]) -> Result<Var> + 'static,
    ) -> Result<()>
    where
        P: ParamTree<Elem = Tensor> + 'static,
    {
        let mut inputs = self.randomized(&template);
        let count = inputs.len();
        inputs.extend(extra);
        self.run(
            name,
            inputs,
            Box::new(move |t, v| {
                let mut it = v.iter();
                let p = template.map(&mut |_| *it.next().expect("one var per tensor"));
                f(t, &p, &v[count..])
            }),
        )
    }
}

/// `Σ wᵢ·yᵢ` with fixed pseudo-random weights so every output coordinate
/// contributes a distinct partial.
fn weighted_sum(t: &mut Tape, y: Var, weights: &[f64]) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let n = t.value(y).len();
    let w = Tensor::new(shape, weights.iter().cycle().take(n).copied().collect())?;
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn square_with_wrong_rule(t: &mut Tape, x: Var) -> Var {
    let value = t.value(x).map(|a| a * a);
    t.custom(&[x], value, |g, inputs| {
        vec![Tensor::new(
            g.shape().to_vec(),
            g.data()
                .iter()
                .zip(inputs[0].data())
                .map(|(g, x)| g * x)
                .collect(),
        )
        .expect("same shape")]
    })
}

/// Runs every registered check. `inject_fault` adds an operation whose
/// backward rule is deliberately wrong.
pub fn gradient_suite(seed: u64, inject_fault: bool) -> Result<Vec<SuiteEntry>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        entries: Vec::new(),
    };
    let a = s.randn(&[3, 4]);
    let b = s.randn(&[4, 2]);
    let c = s.randn(&[3, 4]);
    let row = s.randn(&[4]);
    let pos = s.positive(&[3, 4]);
    let scalar = s.randn(&[1]);

    s.run(
        "matmul",
        vec![a.clone(), b],
        Box::new(|t, v| t.matmul(v[0], v[1])),
    )?;
    s.run(
        "add",
        vec![a.clone(), c.clone()],
        Box::new(|t, v| t.add(v[0], v[1])),
    )?;
    s.run(
        "sub",
        vec![a.clone(), c.clone()],
        Box::new(|t, v| t.sub(v[0], v[1])),
    )?;
    s.run(
        "mul",
        vec![a.clone(), c.clone()],
        Box::new(|t, v| t.mul(v[0], v[1])),
    )?;
    s.run(
        "div",
        vec![a.clone(), pos.clone()],
        Box::new(|t, v| t.div(v[0], v[1])),
    )?;
    s.run(
        "row_broadcast",
        vec![a.clone(), row.clone(), row.map(|v| v.abs() + 1.0)],
        Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            let y = t.mul(y, v[1])?;
            t.div(y, v[2])
        }),
    )?;
    s.run(
        "scalar_broadcast",
        vec![a.clone(), scalar],
        Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            t.sub(y, v[1])
        }),
    )?;
    s.run(
        "add_scalar",
        vec![a.clone()],
        Box::new(|t, v| Ok(t.add_scalar(v[0], 0.3))),
    )?;
    s.run(
        "mul_scalar",
        vec![a.clone()],
        Box::new(|t, v| Ok(t.mul_scalar(v[0], -1.7))),
    )?;
    s.run("exp", vec![a.clone()], Box::new(|t, v| Ok(t.exp(v[0]))))?;
    s.run("log", vec![pos.clone()], Box::new(|t, v| t.log(v[0])))?;
    s.run("sqrt", vec![pos], Box::new(|t, v| t.sqrt(v[0])))?;
    s.run("neg", vec![a.clone()], Box::new(|t, v| Ok(t.neg(v[0]))))?;
    let away = s.off_kink(&[3, 4]);
    s.run(
        "relu",
        vec![away.clone()],
        Box::new(|t, v| Ok(t.relu(v[0]))),
    )?;
    s.run(
        "clamp_min",
        vec![away],
        Box::new(|t, v| Ok(t.clamp_min(v[0], 0.0))),
    )?;
    s.run("sum", vec![a.clone()], Box::new(|t, v| Ok(t.sum(v[0]))))?;
    s.run("mean", vec![a.clone()], Box::new(|t, v| Ok(t.mean(v[0]))))?;
    s.run("max", vec![a.clone()], Box::new(|t, v| Ok(t.max(v[0]))))?;
    s.run(
        "sum_axis",
        vec![a.clone()],
        Box::new(|t, v| {
            let x = t.sum_axis(v[0], 0)?;
            let y = t.sum_axis(v[0], 1)?;
            let x = t.sum(x);
            t.mul(y, x)
        }),
    )?;
    s.run(
        "mean_axis",
        vec![a.clone()],
        Box::new(|t, v| {
            let x = t.mean_axis(v[0], 0)?;
            let y = t.mean_axis(v[0], 1)?;
            let x = t.sum(x);
            t.mul(y, x)
        }),
    )?;
    s.run(
        "max_axis",
        vec![a.clone()],
        Box::new(|t, v| {
            let x = t.max_axis(v[0], 0)?;
            let y = t.max_axis(v[0], 1)?;
            let x = t.sum(x);
            t.mul(y, x)
        }),
    )?;
    s.run(
        "softmax",
        vec![a.clone()],
        Box::new(|t, v| {
            let x = t.softmax(v[0], 0)?;
            let y = t.softmax(v[0], 1)?;
            t.mul(x, y)
        }),
    )?;
    s.run(
        "transpose",
        vec![a.clone()],
        Box::new(|t, v| t.transpose(v[0])),
    )?;
    s.run(
        "reshape",
        vec![a.clone()],
        Box::new(|t, v| t.reshape(v[0], &[2, 6])),
    )?;
    s.run(
        "concat_rows",
        vec![a.clone(), c.clone()],
        Box::new(|t, v| t.concat_rows(&[v[0], v[1], v[0]])),
    )?;
    s.run(
        "concat_cols",
        vec![a.clone(), c],
        Box::new(|t, v| t.concat_cols(&[v[1], v[0]])),
    )?;
    s.run(
        "slice_rows",
        vec![a.clone()],
        Box::new(|t, v| t.slice_rows(v[0], 1, 3)),
    )?;
    s.run(
        "gather_rows",
        vec![a.clone()],
        Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 0, 1])),
    )?;
    s.run(
        "pad_rows_cyclic",
        vec![a.clone()],
        Box::new(|t, v| t.pad_rows_cyclic(v[0], 7)),
    )?;
    s.run(
        "normalize_rows",
        vec![a.clone()],
        Box::new(|t, v| t.normalize_rows(v[0], 1e-5)),
    )?;
    let grid = s.randn(&[9, 2]);
    let kernel = s.randn(&[2, 3, 3]);
    s.run(
        "depthwise_conv2d",
        vec![grid, kernel],
        Box::new(|t, v| t.depthwise_conv2d(v[0], v[1], 3)),
    )?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let x = s.randn(&[3, 8]);
    s.tree(
        "linear",
        Linear::init(&mut init_rng, 8, 5),
        vec![x.clone()],
        |t, p, v| linear_forward(t, p, v[0]),
    )?;
    s.tree(
        "layer_norm",
        LayerNorm::init(8),
        vec![x.clone()],
        |t, p, v| layer_norm_forward(t, p, v[0]),
    )?;
    s.tree(
        "mlp",
        mlp_init(&mut init_rng, &[8, 4, 1]),
        vec![x.clone()],
        |t, p, v| mlp_forward(t, p, v[0]),
    )?;
    s.tree(
        "msa",
        Msa::init(&mut init_rng, 8, 2)?,
        vec![x.clone()],
        |t, p, v| msa_forward(t, p, v[0]),
    )?;
    s.tree(
        "attention_block",
        AttentionBlock::init(&mut init_rng, 8, 2)?,
        vec![x],
        |t, p, v| attention_block_forward(t, p, v[0]),
    )?;
    let tokens = s.randn(&[6, 3]);
    s.tree(
        "ppeg",
        Ppeg::init(&mut init_rng, 3),
        vec![tokens],
        |t, p, v| ppeg_forward(t, p, v[0]),
    )?;

    let risks = s.randn(&[6]);
    let times = vec![5.0, 2.0, 2.0, 9.0, 1.0, 7.0];
    let events = vec![true, true, false, true, false, true];
    s.run(
        "cox_loss",
        vec![risks],
        Box::new(move |t, v| cox_loss(t, v[0], &times, &events, CoxReduction::Sum)),
    )?;
    let p = s.randn(&[8]);
    let q = s.randn(&[8]);
    let w = LossWeights {
        lambda1: 0.7,
        lambda2: 0.3,
        alpha: 1.0,
    };
    s.run(
        "kl_embedding",
        vec![p.clone(), q.clone()],
        Box::new(|t, v| kl_embedding(t, v[0], v[1])),
    )?;
    s.run(
        "sq_euclidean",
        vec![p.clone(), q.clone()],
        Box::new(|t, v| sq_euclidean(t, v[0], v[1])),
    )?;
    s.run(
        "alignment_losses",
        vec![p, q.clone(), q.map(|v| 0.5 - v)],
        Box::new(move |t, v| {
            let l = latent_loss(t, v[0], v[1], &w)?;
            let r = translation_loss(t, v[1], v[2], &w)?;
            t.add(l, r)
        }),
    )?;

    let cfg = ModelConfig {
        d_in: 4,
        d_genomic: 5,
        d_model: 8,
        heads: 2,
        head_hidden: 4,
        ..ModelConfig::default()
    };
    let bag = s.randn(&[3, 4]);
    let g0 = s.randn(&[5]);
    s.tree(
        "pathogenx",
        PathoGenX::init(&mut init_rng, &cfg)?,
        vec![bag, g0],
        move |t, p, v| {
            let a = forward_train(t, p, v[0], v[1])?;
            let l = latent_loss(t, a.p_l_cls, a.g_l, &w)?;
            let r = translation_loss(t, a.g_l, a.g_l_hat, &w)?;
            let y = t.add(l, r)?;
            let risk = t.sum(a.risk);
            t.add(y, risk)
        },
    )?;

    if inject_fault {
        let x = s.randn(&[4]);
        s.run(
            "faulty_square",
            vec![x],
            Box::new(|t, v| Ok(square_with_wrong_rule(t, v[0]))),
        )?;
    }
    Ok(s.entries)
}
