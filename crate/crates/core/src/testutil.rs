use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Straight-line reimplementations on nested vectors, independent of the
/// tape, used as test oracles.
pub(crate) mod oracle {
    use crate::model::PathoGenX;
    use crate::nn::{grid_side, AttentionBlock, LayerNorm, Linear, Msa, Ppeg, PPEG_KERNEL_SIZES};
    use crate::tensor::Tensor;

    pub(crate) type Mat = Vec<Vec<f64>>;

    pub(crate) fn to_mat(t: &Tensor) -> Mat {
        (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
    }

    pub(crate) fn mat_mul(a: &Mat, b: &Mat) -> Mat {
        let (m, k, n) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0; n]; m];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i][j] += a[i][p] * b[p][j];
                }
            }
        }
        out
    }

    pub(crate) fn affine(x: &Mat, w: &Tensor, b: &Tensor) -> Mat {
        let mut out = mat_mul(x, &to_mat(w));
        for row in &mut out {
            for (v, bias) in row.iter_mut().zip(b.data()) {
                *v += bias;
            }
        }
        out
    }

    pub(crate) fn assert_close(actual: &Tensor, expected: &Mat, tol: f64) {
        let flat: Vec<f64> = expected.iter().flatten().copied().collect();
        assert_eq!(actual.len(), flat.len());
        for (a, e) in actual.data().iter().zip(&flat) {
            assert!((a - e).abs() < tol, "{a} vs {e}");
        }
    }

    /// Direct per-head attention oracle on nested vectors.
    pub(crate) fn msa_oracle(p: &Msa, x: &Mat) -> Mat {
        let m = x.len();
        let mut joined = vec![Vec::new(); m];
        for h in 0..p.heads() {
            let q = mat_mul(x, &to_mat(&p.query[h]));
            let k = mat_mul(x, &to_mat(&p.key[h]));
            let v = mat_mul(x, &to_mat(&p.value[h]));
            let dh = q[0].len() as f64;
            for i in 0..m {
                let scores: Vec<f64> = (0..m)
                    .map(|j| (0..q[0].len()).map(|c| q[i][c] * k[j][c]).sum::<f64>() / dh.sqrt())
                    .collect();
                let denom: f64 = scores.iter().map(|s| s.exp()).sum();
                for c in 0..v[0].len() {
                    let val: f64 = (0..m).map(|j| scores[j].exp() / denom * v[j][c]).sum();
                    joined[i].push(val);
                }
            }
        }
        affine(&joined, &p.output.weight, &p.output.bias)
    }

    /// Direct S×S grid convolution oracle for the patch part of PPEG.
    pub(crate) fn ppeg_oracle(p: &Ppeg, tokens: &Mat) -> Mat {
        let n = tokens.len() - 1;
        let d = tokens[0].len();
        let side = grid_side(n);
        let padded: Mat = (0..side * side)
            .map(|i| tokens[1 + i % n].clone())
            .collect();
        let cell = |r: isize, c: isize| -> Option<&Vec<f64>> {
            if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
                None
            } else {
                Some(&padded[r as usize * side + c as usize])
            }
        };
        let mut out = vec![tokens[0].clone()];
        for idx in 0..n {
            let (r, c) = ((idx / side) as isize, (idx % side) as isize);
            let mut v = padded[idx].clone();
            for (kt, &k) in p.kernels.iter().zip(&PPEG_KERNEL_SIZES) {
                let half = (k / 2) as isize;
                for dr in 0..k {
                    for dc in 0..k {
                        if let Some(src) = cell(r + dr as isize - half, c + dc as isize - half) {
                            for ch in 0..d {
                                v[ch] += kt.data()[ch * k * k + dr * k + dc] * src[ch];
                            }
                        }
                    }
                }
            }
            out.push(v);
        }
        out
    }

    pub(crate) fn layer_norm(p: &LayerNorm, x: &Mat) -> Mat {
        x.iter()
            .map(|row| {
                let d = row.len() as f64;
                let mean = row.iter().sum::<f64>() / d;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                row.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        (v - mean) / (var + p.eps).sqrt() * p.gain.data()[j] + p.offset.data()[j]
                    })
                    .collect()
            })
            .collect()
    }

    pub(crate) fn add(a: &Mat, b: &Mat) -> Mat {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
            .collect()
    }

    pub(crate) fn block(p: &AttentionBlock, x: &Mat) -> Mat {
        add(&layer_norm(&p.norm, &msa_oracle(&p.msa, x)), x)
    }

    pub(crate) fn mlp(layers: &[Linear], x: &Mat) -> Mat {
        let mut h = x.clone();
        for (i, l) in layers.iter().enumerate() {
            if i > 0 {
                for v in h.iter_mut().flatten() {
                    *v = v.max(0.0);
                }
            }
            h = affine(&h, &l.weight, &l.bias);
        }
        h
    }

    pub(crate) struct ModelTrace {
        pub(crate) p_l: Mat,
        pub(crate) g_l_hat: Vec<f64>,
        pub(crate) risk: f64,
    }

    /// Straight-line image-only forward pass of the full model.
    pub(crate) fn pathogenx(p: &PathoGenX, bag: &Tensor) -> ModelTrace {
        let mut p0 = vec![p.class_token.data().to_vec()];
        p0.extend(affine(
            &to_mat(bag),
            &p.input_embed.weight,
            &p.input_embed.bias,
        ));
        let p1 = block(&p.encoder1, &p0);
        let p2 = ppeg_oracle(&p.ppeg, &p1);
        let p_l = block(&p.encoder2, &p2);
        let mut z = p_l.clone();
        for b in &p.decoder {
            z = block(b, &z);
        }
        let g_l_hat =
            affine(&z[..1].to_vec(), &p.decoder_out.weight, &p.decoder_out.bias).remove(0);
        let risk_in = match p.risk_input {
            crate::model::RiskInput::Translated | crate::model::RiskInput::Genomic => {
                g_l_hat.clone()
            }
            crate::model::RiskInput::ClassToken => p_l[0].clone(),
        };
        let risk = mlp(&p.risk_head, &vec![risk_in])[0][0];
        ModelTrace { p_l, g_l_hat, risk }
    }
}
