//! Selective SSM block with input-dependent gates followed by a two-layer
//! ReLU head.
//!
//! For tokens `x_1..x_L` and gate `σ_t = σ(w_Δᵀ x_t)` the block keeps a state
//! `H_t = (1 − σ_t) H_{t−1} + σ_t (W_Bᵀ x_t) x_tᵀ` and emits
//! `y_t = H_tᵀ W_Cᵀ x_t`. The classifier output is
//! `F(X) = (1/L) Σ_l Σ_i v_i ReLU(W_O[i,·] y_l)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Label, Sample};
use crate::engine::{self, DatasetCache};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, relu, sigmoid, Matrix};

/// Trainable and frozen parameters of the classifier.
///
/// `v`, `W_B` and `W_C` are frozen: `v` has entries `±1/√m` and the
/// projections are the `d × d` identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    v: Vec<f64>,
    w_o: Matrix,
    w_delta: Vec<f64>,
    w_b: Matrix,
    w_c: Matrix,
}

impl ModelParams {
    pub fn new(v: Vec<f64>, w_o: Matrix, w_delta: Vec<f64>) -> Result<Self> {
        let (m, d) = (w_o.rows(), w_o.cols());
        if m == 0 || d == 0 {
            return Err(Error::Shape("W_O must be non-empty".into()));
        }
        if v.len() != m {
            return Err(Error::Shape(format!("v has length {} but W_O has {m} rows", v.len())));
        }
        if w_delta.len() != d {
            return Err(Error::Shape(format!("w_delta has length {} but W_O has {d} columns", w_delta.len())));
        }
        let mag = output_weight(m);
        if let Some(bad) = v.iter().find(|x| x.abs() != mag) {
            return Err(Error::InvalidConfig(format!("v entries must be ±1/√m = ±{mag}, found {bad}")));
        }
        Ok(Self { v, w_o, w_delta, w_b: Matrix::identity(d), w_c: Matrix::identity(d) })
    }

    /// Hidden width `m`.
    pub fn width(&self) -> usize {
        self.w_o.rows()
    }

    /// Token dimension `d`.
    pub fn dim(&self) -> usize {
        self.w_o.cols()
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w_o(&self) -> &Matrix {
        &self.w_o
    }

    pub fn w_o_mut(&mut self) -> &mut Matrix {
        &mut self.w_o
    }

    pub fn w_delta(&self) -> &[f64] {
        &self.w_delta
    }

    pub fn w_delta_mut(&mut self) -> &mut [f64] {
        &mut self.w_delta
    }

    pub fn w_b(&self) -> &Matrix {
        &self.w_b
    }

    pub fn w_c(&self) -> &Matrix {
        &self.w_c
    }

    /// Copy with hidden units reordered: unit `k` of the result is unit
    /// `perm[k]` of `self`.
    pub fn permute_hidden(&self, perm: &[usize]) -> Result<Self> {
        let m = self.width();
        let mut seen = vec![false; m];
        if perm.len() != m || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape("not a permutation of the hidden units".into()));
        }
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| self.w_o.row(p).to_vec()).collect();
        let v = perm.iter().map(|&p| self.v[p]).collect();
        ModelParams::new(v, Matrix::from_rows(&rows).expect("rectangular"), self.w_delta.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ParamsDoc {
            m: self.width(),
            d: self.dim(),
            v: self.v.clone(),
            w_o: self.w_o.as_slice().to_vec(),
            w_delta: self.w_delta.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamsDoc = serde_json::from_str(text)?;
        let w_o = Matrix::from_vec(doc.m, doc.d, doc.w_o)
            .ok_or_else(|| Error::Shape(format!("W_O must have m*d = {} entries", doc.m * doc.d)))?;
        ModelParams::new(doc.v, w_o, doc.w_delta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub(crate) fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "token dimension {} does not match model dimension {}",
                sample.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `1/√m`, the magnitude of every output weight.
pub fn output_weight(m: usize) -> f64 {
    1.0 / (m as f64).sqrt()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsDoc {
    m: usize,
    d: usize,
    v: Vec<f64>,
    /// Row-major `m × d`.
    #[serde(rename = "W_O")]
    w_o: Vec<f64>,
    w_delta: Vec<f64>,
}

/// Per-token outputs of the SSM block.
#[derive(Debug, Clone, PartialEq)]
pub struct MambaOutputs {
    /// Row `l` is `y_l(X)` (i.e. this is `Yᵀ`, `L × d`).
    pub y: Matrix,
    /// `σ(w_Δᵀ x_t)` per position.
    pub gates: Vec<f64>,
}

fn gates(params: &ModelParams, sample: &Sample) -> Vec<f64> {
    (0..sample.seq_len()).map(|t| sigmoid(dot(params.w_delta(), sample.token(t)))).collect()
}

/// Evaluates the block by running the state recurrence from `H_0 = 0`.
pub fn mamba_outputs_recurrent(params: &ModelParams, sample: &Sample) -> Result<MambaOutputs> {
    params.check_sample(sample)?;
    let d = params.dim();
    let gates = gates(params, sample);
    // State H is N × d with N = d (rows indexed by the projected input).
    let mut state = Matrix::zeros(d, d);
    let mut y = Matrix::zeros(sample.seq_len(), d);
    for (t, &g) in gates.iter().enumerate() {
        let x = sample.token(t);
        let b = params.w_b().transpose_mul_vec(x);
        let c = params.w_c().transpose_mul_vec(x);
        state.scale(1.0 - g);
        for (n, &bn) in b.iter().enumerate() {
            axpy(g * bn, x, state.row_mut(n));
        }
        let out = state.transpose_mul_vec(&c);
        y.row_mut(t).copy_from_slice(&out);
    }
    Ok(MambaOutputs { y, gates })
}

/// Evaluates the block by the closed-form double sum
/// `y_t = Σ_{s≤t} [Π_{j=s+1..t} (1 − σ_j)] σ_s (W_Bᵀx_s)ᵀ(W_Cᵀx_t) x_s`.
pub fn mamba_outputs_unrolled(params: &ModelParams, sample: &Sample) -> Result<MambaOutputs> {
    params.check_sample(sample)?;
    let (d, len) = (params.dim(), sample.seq_len());
    let gates = gates(params, sample);
    let b: Vec<Vec<f64>> = (0..len).map(|t| params.w_b().transpose_mul_vec(sample.token(t))).collect();
    let c: Vec<Vec<f64>> = (0..len).map(|t| params.w_c().transpose_mul_vec(sample.token(t))).collect();
    let mut y = Matrix::zeros(len, d);
    for t in 0..len {
        let mut out = vec![0.0; d];
        for s in 0..=t {
            let carry: f64 = (s + 1..=t).map(|j| 1.0 - gates[j]).product();
            axpy(carry * gates[s] * dot(&b[s], &c[t]), sample.token(s), &mut out);
        }
        y.row_mut(t).copy_from_slice(&out);
    }
    Ok(MambaOutputs { y, gates })
}

/// Intermediate quantities of one forward evaluation, kept for the
/// backward pass. Assumes `W_B = W_C = I`.
#[derive(Debug, Clone)]
pub(crate) struct ForwardPass {
    pub len: usize,
    pub width: usize,
    /// `σ_t`
    pub gates: Vec<f64>,
    /// `K[l][s] = c_{l,s} ⟨x_s, x_l⟩` for `s ≤ l`, where
    /// `c_{l,s} = σ_s Π_{r=s+1..l} (1 − σ_r)`; row-major `L × L`.
    pub kernel: Vec<f64>,
    /// `P[s][i] = W_O[i,·] x_s`; row-major `L × m`.
    pub proj: Vec<f64>,
    /// `h[l][i] = W_O[i,·] y_l`; row-major `L × m`.
    pub pre: Vec<f64>,
    pub output: f64,
}

impl ForwardPass {
    pub fn new(params: &ModelParams, sample: &Sample) -> Self {
        let (len, width) = (sample.seq_len(), params.width());
        let gates = gates(params, sample);
        let gram = token_gram(sample);

        let mut kernel = vec![0.0; len * len];
        for l in 0..len {
            // carry = Π_{r=s+1..l} (1 − σ_r), accumulated right to left
            let mut carry = 1.0;
            for s in (0..=l).rev() {
                kernel[l * len + s] = carry * gates[s] * gram[l * len + s];
                carry *= 1.0 - gates[s];
            }
        }

        let w_o = params.w_o();
        let mut proj = vec![0.0; len * width];
        for s in 0..len {
            let xs = sample.token(s);
            for (i, p) in proj[s * width..(s + 1) * width].iter_mut().enumerate() {
                *p = dot(w_o.row(i), xs);
            }
        }

        let mut pre = vec![0.0; len * width];
        for l in 0..len {
            let row = &mut pre[l * width..(l + 1) * width];
            for s in 0..=l {
                let k = kernel[l * len + s];
                if k != 0.0 {
                    axpy(k, &proj[s * width..(s + 1) * width], row);
                }
            }
        }

        let v = params.v();
        let mut total = 0.0;
        for l in 0..len {
            let row = &pre[l * width..(l + 1) * width];
            total += row.iter().zip(v).map(|(&h, &vi)| vi * relu(h)).sum::<f64>();
        }
        let output = total / len as f64;
        Self { len, width, gates, kernel, proj, pre, output }
    }

    /// `y_l = Σ_{s≤l} K[l][s] x_s` for every `l`, as rows.
    pub fn outputs(&self, sample: &Sample) -> Matrix {
        let d = sample.dim();
        let mut y = Matrix::zeros(self.len, d);
        for l in 0..self.len {
            let row = y.row_mut(l);
            for s in 0..=l {
                let k = self.kernel[l * self.len + s];
                if k != 0.0 {
                    axpy(k, sample.token(s), row);
                }
            }
        }
        y
    }

    pub fn pre_row(&self, l: usize) -> &[f64] {
        &self.pre[l * self.width..(l + 1) * self.width]
    }
}

/// Lower triangle of the token Gram matrix, row-major `L × L`.
pub(crate) fn token_gram(sample: &Sample) -> Vec<f64> {
    let len = sample.seq_len();
    let mut gram = vec![0.0; len * len];
    for l in 0..len {
        for s in 0..=l {
            gram[l * len + s] = dot(sample.token(s), sample.token(l));
        }
    }
    gram
}

/// Scalar classifier output `F(X)`.
pub fn forward(params: &ModelParams, sample: &Sample) -> Result<f64> {
    params.check_sample(sample)?;
    Ok(ForwardPass::new(params, sample).output)
}

/// `max(0, 1 − z F)`.
#[inline]
pub fn hinge_loss(output: f64, z: Label) -> f64 {
    (1.0 - z.sign() * output).max(0.0)
}

/// Mean hinge loss over the dataset.
pub fn batch_loss(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidSize("empty dataset".into()));
    }
    batch_loss_cached(params, &DatasetCache::new(dataset)?)
}

pub(crate) fn batch_loss_cached(params: &ModelParams, cache: &DatasetCache) -> Result<f64> {
    let totals = engine::run(params, cache, None, false)?;
    Ok(totals.loss_sum / cache.len() as f64)
}
