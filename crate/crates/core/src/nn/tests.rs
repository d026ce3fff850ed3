use super::*;
use crate::tensor::{finite_difference_check, Tape, Tensor, Var};
use crate::testutil::oracle::{
    affine, assert_close, mat_mul, msa_oracle, ppeg_oracle, to_mat, Mat,
};
use crate::testutil::{randn, rng};

fn forward<P: ParamTree<Elem = Tensor>>(
    params: &P,
    x: &Tensor,
    f: impl FnOnce(&mut Tape, &P::Mapped<Var>, Var) -> crate::Result<Var>,
) -> Tensor {
    let mut tape = Tape::new();
    let bound = bind_frozen(params, &mut tape);
    let vx = tape.constant(x.clone());
    let out = f(&mut tape, &bound, vx).unwrap();
    tape.value(out).clone()
}

#[test]
fn linear_examples() {
    let x = randn(&mut rng(1), &[3, 4]);
    let identity = Linear {
        weight: Tensor::identity(4),
        bias: Tensor::zeros(&[4]),
    };
    assert_eq!(forward(&identity, &x, |t, p, v| linear_forward(t, p, v)), x);

    let bias = Tensor::vector(vec![1.0, -2.0]);
    let constant = Linear {
        weight: Tensor::zeros(&[4, 2]),
        bias: bias.clone(),
    };
    let y = forward(&constant, &x, |t, p, v| linear_forward(t, p, v));
    for i in 0..3 {
        assert_eq!(y.row(i), bias.data());
    }

    let random = Linear::init(&mut rng(2), 4, 5);
    let y = forward(&random, &x, |t, p, v| linear_forward(t, p, v));
    assert_close(
        &y,
        &affine(&to_mat(&x), &random.weight, &random.bias),
        1e-12,
    );
}

#[test]
fn xavier_bounds_and_zero_bias() {
    let l = Linear::init(&mut rng(3), 10, 6);
    let bound = (6.0f64 / 16.0).sqrt();
    assert!(l.weight.data().iter().all(|v| v.abs() <= bound));
    assert!(l.bias.data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_examples() {
    let ln = LayerNorm::init(3);
    let y = forward(&ln, &Tensor::full(&[2, 3], 7.0), |t, p, v| {
        layer_norm_forward(t, p, v)
    });
    assert!(y.data().iter().all(|&v| v == 0.0));

    let mut tight = LayerNorm::init(2);
    tight.eps = 1e-14;
    let x = Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap();
    let y = forward(&tight, &x, |t, p, v| layer_norm_forward(t, p, v));
    assert!(y.max_abs_diff(&x) < 1e-12);

    let mut r = rng(4);
    let mut ln = LayerNorm::init(6);
    ln.gain = Tensor::full(&[6], 1.7);
    ln.offset = randn(&mut r, &[6]);
    let x = randn(&mut r, &[5, 6]).map(|v| 3.0 * v);
    let y = forward(&ln, &x, |t, p, v| layer_norm_forward(t, p, v));
    let offset_mean = ln.offset.sum() / 6.0;
    for i in 0..5 {
        let mean = y.row(i).iter().sum::<f64>() / 6.0;
        assert!((mean - offset_mean).abs() < 1e-9);
    }
}

#[test]
fn layer_norm_with_uniform_gain_has_variance_of_gain_square() {
    let mut ln = LayerNorm::init(16);
    ln.gain = Tensor::full(&[16], 0.6);
    let x = randn(&mut rng(6), &[3, 16]).map(|v| 10.0 * v);
    let y = forward(&ln, &x, |t, p, v| layer_norm_forward(t, p, v));
    for i in 0..3 {
        let mean = y.row(i).iter().sum::<f64>() / 16.0;
        let var = y.row(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!((var - 0.36).abs() < 1e-6, "{var}");
    }
}

#[test]
fn msa_matches_per_head_oracle() {
    let mut r = rng(7);
    let msa = Msa::init(&mut r, 8, 2).unwrap();
    let x = randn(&mut r, &[4, 8]);
    let y = forward(&msa, &x, |t, p, v| msa_forward(t, p, v));
    assert_close(&y, &msa_oracle(&msa, &to_mat(&x)), 1e-10);
}

#[test]
fn msa_single_token_is_value_then_output_projection() {
    let mut r = rng(8);
    let msa = Msa::init(&mut r, 8, 4).unwrap();
    let x = randn(&mut r, &[1, 8]);
    let y = forward(&msa, &x, |t, p, v| msa_forward(t, p, v));
    let mut joined = Vec::new();
    for h in 0..4 {
        joined.extend(mat_mul(&to_mat(&x), &to_mat(&msa.value[h]))[0].clone());
    }
    assert_close(
        &y,
        &affine(&vec![joined], &msa.output.weight, &msa.output.bias),
        1e-12,
    );
}

#[test]
fn msa_duplicate_rows_and_permutation_equivariance() {
    let mut r = rng(9);
    let msa = Msa::init(&mut r, 8, 2).unwrap();
    let base = randn(&mut r, &[3, 8]);
    let mut rows = to_mat(&base);
    rows.push(rows[1].clone());
    let dup = Tensor::from_rows(&rows).unwrap();
    let y = forward(&msa, &dup, |t, p, v| msa_forward(t, p, v));
    assert_eq!(y.row(1), y.row(3));

    let perm = [2usize, 0, 3, 1];
    let permuted: Mat = perm.iter().map(|&i| rows[i].clone()).collect();
    let yp = forward(&msa, &Tensor::from_rows(&permuted).unwrap(), |t, p, v| {
        msa_forward(t, p, v)
    });
    for (k, &i) in perm.iter().enumerate() {
        for (a, b) in yp.row(k).iter().zip(y.row(i)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn msa_rejects_bad_head_count_and_width() {
    assert!(Msa::init(&mut rng(0), 10, 3).is_err());
    let msa = Msa::init(&mut rng(0), 8, 2).unwrap();
    let mut tape = Tape::new();
    let p = bind_frozen(&msa, &mut tape);
    let x = tape.constant(Tensor::zeros(&[3, 6]));
    assert!(msa_forward(&mut tape, &p, x).is_err());
}

#[test]
fn ppeg_zero_kernels_is_identity() {
    let x = randn(&mut rng(10), &[6, 4]);
    let y = forward(&Ppeg::zeros(4), &x, |t, p, v| ppeg_forward(t, p, v));
    assert_eq!(y, x);
}

#[test]
fn ppeg_single_patch_scales_by_center_taps() {
    let mut r = rng(11);
    let ppeg = Ppeg::init(&mut r, 3);
    let x = randn(&mut r, &[2, 3]);
    let y = forward(&ppeg, &x, |t, p, v| ppeg_forward(t, p, v));
    assert_eq!(y.row(0), x.row(0));
    for ch in 0..3 {
        let centre: f64 = ppeg
            .kernels
            .iter()
            .zip(PPEG_KERNEL_SIZES)
            .map(|(k, s)| k.data()[ch * s * s + (s / 2) * s + s / 2])
            .sum();
        assert!((y.row(1)[ch] - x.row(1)[ch] * (1.0 + centre)).abs() < 1e-14);
    }
}

#[test]
fn ppeg_matches_grid_oracle() {
    let mut r = rng(12);
    let mut ppeg = Ppeg::init(&mut r, 4);
    for k in &mut ppeg.kernels {
        *k = k.map(|v| v * 20.0);
    }
    for n in [3usize, 5, 10] {
        let x = randn(&mut r, &[n + 1, 4]);
        let y = forward(&ppeg, &x, |t, p, v| ppeg_forward(t, p, v));
        assert_close(&y, &ppeg_oracle(&ppeg, &to_mat(&x)), 1e-12);
    }
}

#[test]
fn ppeg_injects_position() {
    let mut r = rng(13);
    let ppeg = Ppeg::init(&mut r, 4);
    let x = randn(&mut r, &[5, 4]);
    let y = forward(&ppeg, &x, |t, p, v| ppeg_forward(t, p, v));
    let rows = to_mat(&x);
    let swapped = Tensor::from_rows(&[
        rows[0].clone(),
        rows[2].clone(),
        rows[1].clone(),
        rows[3].clone(),
        rows[4].clone(),
    ])
    .unwrap();
    let ys = forward(&ppeg, &swapped, |t, p, v| ppeg_forward(t, p, v));
    // Permutation equivariance would map row 1 of ys onto row 2 of y.
    assert!(ys
        .row(1)
        .iter()
        .zip(y.row(2))
        .any(|(a, b)| (a - b).abs() > 1e-12));
}

#[test]
fn ppeg_rejects_missing_patches() {
    let mut tape = Tape::new();
    let p = bind_frozen(&Ppeg::zeros(2), &mut tape);
    let x = tape.constant(Tensor::zeros(&[1, 2]));
    assert!(matches!(
        ppeg_forward(&mut tape, &p, x),
        Err(crate::Error::EmptyBag)
    ));
}

#[test]
fn grid_side_is_ceil_sqrt() {
    for (n, s) in [(1, 1), (2, 2), (4, 2), (5, 3), (9, 3), (10, 4), (32, 6)] {
        assert_eq!(grid_side(n), s);
    }
}

#[test]
fn mlp_examples() {
    let mut r = rng(14);
    let x = randn(&mut r, &[3, 5]);
    let single = mlp_init(&mut r, &[5, 2]);
    let y = forward(&single, &x, |t, p, v| mlp_forward(t, p, v));
    let y_lin = forward(&single[0], &x, |t, p, v| linear_forward(t, p, v));
    assert_eq!(y, y_lin);

    let mut zeroed = mlp_init(&mut r, &[5, 4, 1]);
    zeroed[1] = Linear::zeros(4, 1);
    let y = forward(&zeroed, &x, |t, p, v| mlp_forward(t, p, v));
    assert!(y.data().iter().all(|&v| v == 0.0));

    let two = mlp_init(&mut r, &[5, 4, 2]);
    let y = forward(&two, &x, |t, p, v| mlp_forward(t, p, v));
    let mut hidden = affine(&to_mat(&x), &two[0].weight, &two[0].bias);
    hidden.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
    assert_close(&y, &affine(&hidden, &two[1].weight, &two[1].bias), 1e-12);
}

#[test]
fn param_tree_names_are_stable() {
    let block = AttentionBlock::init(&mut rng(15), 4, 2).unwrap();
    let names: Vec<String> = block.named().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "msa.query.0");
    assert!(names.contains(&"msa.output.bias".to_string()));
    assert_eq!(names.last().unwrap(), "norm.offset");
    assert_eq!(parameter_count(&block), 3 * 2 * 4 * 2 + 16 + 4 + 8);
}

#[test]
fn composed_encoder_block_gradcheck() {
    let mut r = rng(16);
    let block = AttentionBlock::init(&mut r, 4, 2).unwrap();
    let ppeg = Ppeg::init(&mut r, 4)
        .kernels
        .iter()
        .map(|k| k.map(|v| v * 10.0))
        .collect::<Vec<_>>();
    let mut inputs: Vec<Tensor> = block.elems().into_iter().cloned().collect();
    let n_block = inputs.len();
    inputs.extend(ppeg);
    inputs.push(randn(&mut r, &[4, 4]));
    let report = finite_difference_check(
        |t, v| {
            let mut it = v[..n_block].iter().copied();
            let p = block.map(&mut |_| it.next().unwrap());
            let pp = Ppeg {
                kernels: v[n_block..n_block + 3].to_vec(),
            };
            let x = v[n_block + 3];
            let h = attention_block_forward(t, &p, x)?;
            let h = ppeg_forward(t, &pp, h)?;
            let h = attention_block_forward(t, &p, h)?;
            let w = t.constant(randn(&mut rng(99), &[4, 4]));
            let prod = t.mul(h, w)?;
            Ok(t.sum(prod))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
