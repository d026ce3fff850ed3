// Row-major dense kernels shared by the tape and the untracked Tensor API.
// All loops run in a fixed order so results are bit-reproducible.

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// out[m×n] += a[k×m]ᵀ · b[k×n]
pub(crate) fn matmul_at(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize without
    // reassociating a single running sum.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn transpose(a: &[f64], out: &mut [f64], m: usize, n: usize) {
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
}

/// Same-padded depthwise cross-correlation over a `side × side` grid of
/// `channels`-wide cells stored row-major (cell `r * side + c`).
/// `kernel` is `[channels × ksize × ksize]`.
pub(crate) fn depthwise_conv(
    input: &[f64],
    kernel: &[f64],
    out: &mut [f64],
    side: usize,
    channels: usize,
    ksize: usize,
) {
    let half = (ksize / 2) as isize;
    let s = side as isize;
    for r in 0..s {
        for c in 0..s {
            let out_cell = &mut out[((r * s + c) as usize) * channels..][..channels];
            for dr in 0..ksize as isize {
                let rr = r + dr - half;
                if rr < 0 || rr >= s {
                    continue;
                }
                for dc in 0..ksize as isize {
                    let cc = c + dc - half;
                    if cc < 0 || cc >= s {
                        continue;
                    }
                    let in_cell = &input[((rr * s + cc) as usize) * channels..][..channels];
                    let tap = (dr as usize) * ksize + dc as usize;
                    for ch in 0..channels {
                        out_cell[ch] += kernel[ch * ksize * ksize + tap] * in_cell[ch];
                    }
                }
            }
        }
    }
}

/// Gradients of [`depthwise_conv`] with respect to its input and kernel,
/// accumulated into `d_input` / `d_kernel` when present.
pub(crate) fn depthwise_conv_backward(
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    mut d_input: Option<&mut [f64]>,
    mut d_kernel: Option<&mut [f64]>,
    side: usize,
    channels: usize,
    ksize: usize,
) {
    let half = (ksize / 2) as isize;
    let s = side as isize;
    for r in 0..s {
        for c in 0..s {
            let g_cell = &d_out[((r * s + c) as usize) * channels..][..channels];
            for dr in 0..ksize as isize {
                let rr = r + dr - half;
                if rr < 0 || rr >= s {
                    continue;
                }
                for dc in 0..ksize as isize {
                    let cc = c + dc - half;
                    if cc < 0 || cc >= s {
                        continue;
                    }
                    let in_off = ((rr * s + cc) as usize) * channels;
                    let tap = (dr as usize) * ksize + dc as usize;
                    if let Some(di) = d_input.as_deref_mut() {
                        for ch in 0..channels {
                            di[in_off + ch] += kernel[ch * ksize * ksize + tap] * g_cell[ch];
                        }
                    }
                    if let Some(dk) = d_kernel.as_deref_mut() {
                        for ch in 0..channels {
                            dk[ch * ksize * ksize + tap] += input[in_off + ch] * g_cell[ch];
                        }
                    }
                }
            }
        }
    }
}
