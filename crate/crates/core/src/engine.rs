//! Blocked evaluation of the classifier and its gradient over a dataset.
//!
//! Samples are processed in chunks so that the token projections and the
//! `W_O` gradient become dense matrix products. Reduction order depends
//! only on the data layout, so repeated runs are bit-identical.

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::gradients::GradSet;
use crate::linalg::{axpy, dot, relu, sigmoid};
use crate::model::{token_gram, ModelParams};

const CHUNK: usize = 32;

/// Stacked tokens, Gram matrices and label signs of a dataset.
///
/// With `W_B = W_C = I` the projected inner products `(W_Bᵀx_s)ᵀ(W_Cᵀx_l)`
/// depend only on the data, so they are computed once per dataset.
#[derive(Debug, Clone)]
pub struct DatasetCache {
    count: usize,
    seq_len: usize,
    dim: usize,
    /// `count · L` rows of length `d`.
    tokens: Vec<f64>,
    /// `count` row-major `L × L` blocks, lower triangle filled.
    grams: Vec<f64>,
    signs: Vec<f64>,
}

impl DatasetCache {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let first = dataset.samples.first().ok_or_else(|| Error::InvalidSize("empty dataset".into()))?;
        let (len, dim) = (first.seq_len(), first.dim());
        let count = dataset.len();
        let mut tokens = Vec::with_capacity(count * len * dim);
        let mut grams = Vec::with_capacity(count * len * len);
        let mut signs = Vec::with_capacity(count);
        for (n, s) in dataset.samples.iter().enumerate() {
            if s.seq_len() != len || s.dim() != dim {
                return Err(Error::Shape(format!("sample {n} is {}×{}, expected {len}×{dim}", s.seq_len(), s.dim())));
            }
            tokens.extend_from_slice(s.tokens().as_slice());
            grams.extend_from_slice(&token_gram(s));
            signs.push(s.label.sign());
        }
        Ok(Self { count, seq_len: len, dim, tokens, grams, signs })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `z_n = ±1` per sample.
    pub fn signs(&self) -> &[f64] {
        &self.signs
    }
}

/// Totals of one pass over a cached dataset.
#[derive(Debug, Clone, Default)]
pub(crate) struct PassTotals {
    pub outputs: Vec<f64>,
    pub loss_sum: f64,
    pub active: usize,
}

/// Evaluates every sample and, when `grads` is given, adds the summed
/// (not averaged) hinge-loss gradient into it. `with_gate = false` skips
/// the `w_Δ` block.
pub(crate) fn run(
    params: &ModelParams,
    cache: &DatasetCache,
    mut grads: Option<&mut GradSet>,
    with_gate: bool,
) -> Result<PassTotals> {
    if cache.dim != params.dim() {
        return Err(Error::Shape(format!(
            "token dimension {} does not match model dimension {}",
            cache.dim,
            params.dim()
        )));
    }
    let (len, d, m) = (cache.seq_len, cache.dim, params.width());
    let w_o = params.w_o().as_slice();
    let w_delta = params.w_delta();
    let v = params.v();
    let inv_len = 1.0 / len as f64;

    let mut proj = vec![0.0; CHUNK * len * m];
    let mut kern = vec![0.0; len * len];
    let mut gates = vec![0.0; len];
    let mut pre = vec![0.0; len * m];
    let mut delta = vec![0.0; CHUNK * len * m];
    let mut ys = vec![0.0; CHUNK * len * d];
    let mut lam = vec![0.0; len * len];
    let mut col = vec![0.0; len];
    let mut cross = vec![0.0; len];

    let mut totals = PassTotals { outputs: Vec::with_capacity(cache.count), ..Default::default() };
    for start in (0..cache.count).step_by(CHUNK) {
        let b = CHUNK.min(cache.count - start);
        let rows = b * len;
        let x_chunk = &cache.tokens[start * len * d..(start + b) * len * d];
        // P = X W_Oᵀ for the whole chunk
        gemm(rows, d, m, x_chunk, d, 1, w_o, 1, d, 0.0, &mut proj, m, 1);

        let mut n_active = 0;
        for j in 0..b {
            let n = start + j;
            let x = &x_chunk[j * len * d..(j + 1) * len * d];
            let p = &proj[j * len * m..(j + 1) * len * m];
            let gram = &cache.grams[n * len * len..(n + 1) * len * len];
            for (t, g) in gates.iter_mut().enumerate() {
                *g = sigmoid(dot(w_delta, &x[t * d..(t + 1) * d]));
            }
            fill_kernel(&gates, gram, &mut kern);
            gemm(len, len, m, &kern, len, 1, p, m, 1, 0.0, &mut pre, m, 1);

            let mut total = 0.0;
            for row in pre.chunks_exact(m) {
                total += row.iter().zip(v).map(|(&h, &vi)| vi * relu(h)).sum::<f64>();
            }
            let output = total * inv_len;
            totals.outputs.push(output);
            let z = cache.signs[n];
            let loss = (1.0 - z * output).max(0.0);
            totals.loss_sum += loss;
            if loss <= 0.0 {
                continue;
            }
            totals.active += 1;
            let Some(acc) = grads.as_deref_mut() else { continue };

            // dℓ/dh[l][i] = −z v_i 1[h > 0] / L
            let scale = -z * inv_len;
            let dl = &mut delta[n_active * len * m..(n_active + 1) * len * m];
            for (out, (h, vi)) in dl.iter_mut().zip(pre.iter().zip(v.iter().cycle())) {
                *out = if *h > 0.0 { scale * vi } else { 0.0 };
            }
            let y = &mut ys[n_active * len * d..(n_active + 1) * len * d];
            gemm(len, len, d, &kern, len, 1, x, d, 1, 0.0, y, d, 1);

            if with_gate {
                // lam[l][s] = K[l][s] · Σ_i delta[l][i] P[s][i]
                gemm(len, m, len, dl, m, 1, p, 1, m, 0.0, &mut lam, len, 1);
                // A_t = Σ_{l≥t} lam[l][t];  B_t = Σ_{l≥t} Σ_{s<t} lam[l][s]
                col.fill(0.0);
                cross.fill(0.0);
                for l in 0..len {
                    let mut prefix = 0.0;
                    for s in 0..=l {
                        cross[s] += prefix;
                        let e = kern[l * len + s] * lam[l * len + s];
                        col[s] += e;
                        prefix += e;
                    }
                }
                for t in 0..len {
                    let g = gates[t];
                    let coef = (1.0 - g) * col[t] - g * cross[t];
                    if coef != 0.0 {
                        axpy(coef, &x[t * d..(t + 1) * d], &mut acc.w_delta);
                    }
                }
            }
            n_active += 1;
        }

        if let Some(acc) = grads.as_deref_mut() {
            if n_active > 0 {
                // ∂/∂W_O = Δᵀ Y over the active samples of the chunk
                let k = n_active * len;
                gemm(m, k, d, &delta, 1, m, &ys, d, 1, 1.0, acc.w_o.as_mut_slice(), d, 1);
            }
        }
    }
    Ok(totals)
}

/// `K[l][s] = σ_s Π_{r=s+1..l} (1 − σ_r) ⟨x_s, x_l⟩` for `s ≤ l`, zero above
/// the diagonal.
pub(crate) fn fill_kernel(gates: &[f64], gram: &[f64], kern: &mut [f64]) {
    let len = gates.len();
    for l in 0..len {
        let row = &mut kern[l * len..(l + 1) * len];
        row[l + 1..].fill(0.0);
        // carry accumulated right to left
        let mut carry = 1.0;
        for s in (0..=l).rev() {
            row[s] = carry * gates[s] * gram[l * len + s];
            carry *= 1.0 - gates[s];
        }
    }
}

/// `C = A B + beta C` for `A: m×k`, `B: k×n`, `C: m×n` with explicit row and
/// column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, c: usize, rs: usize, cs: usize| (r - 1) * rs + (c - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len(), "A out of bounds");
    assert!(k == 0 || last(k, n, rsb, csb) < b.len(), "B out of bounds");
    assert!(last(m, n, rsc, csc) < c.len(), "C out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_transposed_operands() {
        // A = [[1,2],[3,4]], B stored transposed: Bᵀ = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let bt = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, 2, 1, &bt, 1, 2, 0.0, &mut c, 2, 1);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, 2, 1, &bt, 1, 2, 1.0, &mut c, 2, 1);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn kernel_upper_triangle_is_zero() {
        let gates = [0.5, 0.25, 0.75];
        let gram = [1.0; 9];
        let mut k = [9.0; 9];
        fill_kernel(&gates, &gram, &mut k);
        assert_eq!(k[1], 0.0);
        assert_eq!(k[2], 0.0);
        assert_eq!(k[5], 0.0);
        assert_eq!(k[0], 0.5);
        // K[2][0] = σ_0 (1 − σ_1)(1 − σ_2)
        assert_eq!(k[6], 0.5 * 0.75 * 0.25);
    }
}
