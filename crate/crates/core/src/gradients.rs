//! Gradients of the hinge loss with respect to `W_O` and `w_Δ`.
//!
//! Three routes are provided:
//!
//! * [`sample_grads`] / [`batch_grads`]: the production backward pass,
//!   `O(L²(m + d) + mLd)` per sample.
//! * [`gate_grad_decompose`]: materializes every per-`(i, l, s)` term
//!   `I_{l,s} = β_{s,s} x_s − Σ_{j=s+1..l} β_{s,j} x_j` and assembles the
//!   gate gradient from them.
//! * [`fd_gradient`]: central finite differences on the mean loss.
//!
//! The ReLU derivative at zero is taken as 0 and a sample with
//! `1 − zF ≤ 0` contributes nothing.
//!
//! Differentiating `Π_{r=s+1..l} (1 − σ_r)` puts the coefficient
//! `σ_j · base` on `x_j`. The literal variant with `(1 − σ_j) · base` is
//! kept in the decomposition for comparison; both agree at `w_Δ = 0`.

use crate::datagen::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::engine::{self, DatasetCache};
use crate::model::{batch_loss_cached, ForwardPass, ModelParams};

/// Gradient blocks for the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    /// `m × d`
    pub w_o: Matrix,
    /// length `d`
    pub w_delta: Vec<f64>,
}

impl GradSet {
    pub fn zeros(m: usize, d: usize) -> Self {
        Self { w_o: Matrix::zeros(m, d), w_delta: vec![0.0; d] }
    }

    pub fn is_finite(&self) -> bool {
        self.w_o.is_finite() && self.w_delta.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &GradSet) {
        axpy(1.0, other.w_o.as_slice(), self.w_o.as_mut_slice());
        axpy(1.0, &other.w_delta, &mut self.w_delta);
    }

    fn scale(&mut self, s: f64) {
        self.w_o.scale(s);
        self.w_delta.iter_mut().for_each(|v| *v *= s);
    }
}

/// Which parameter blocks a backward pass fills in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Blocks {
    w_o: bool,
    w_delta: bool,
}

/// Accumulates `weight · ∂ℓ/∂Ψ` of one sample into `acc`.
fn accumulate(params: &ModelParams, sample: &Sample, pass: &ForwardPass, weight: f64, blocks: Blocks, acc: &mut GradSet) {
    let z = sample.label.sign();
    if 1.0 - z * pass.output <= 0.0 {
        return;
    }
    let (len, width) = (pass.len, pass.width);
    let v = params.v();
    // dℓ/dh[l][i] = −z v_i 1[h > 0] / L
    let scale = -z * weight / len as f64;
    let mut delta = vec![0.0; len * width];
    for l in 0..len {
        for (i, (&h, dl)) in pass.pre_row(l).iter().zip(&mut delta[l * width..(l + 1) * width]).enumerate() {
            if h > 0.0 {
                *dl = scale * v[i];
            }
        }
    }

    if blocks.w_o {
        let y = pass.outputs(sample);
        for l in 0..len {
            let yl = y.row(l);
            for (i, &dl) in delta[l * width..(l + 1) * width].iter().enumerate() {
                if dl != 0.0 {
                    axpy(dl, yl, acc.w_o.row_mut(i));
                }
            }
        }
    }

    if blocks.w_delta {
        // lambda[l][s] = K[l][s] · Σ_i delta[l][i] P[s][i]
        // A_t = Σ_{l≥t} lambda[l][t];  B_t = Σ_{l≥t} Σ_{s<t} lambda[l][s]
        let mut col = vec![0.0; len];
        let mut cross = vec![0.0; len];
        let mut prefix = vec![0.0; len + 1];
        for l in 0..len {
            let dl = &delta[l * width..(l + 1) * width];
            if dl.iter().all(|&x| x == 0.0) {
                continue;
            }
            prefix[0] = 0.0;
            for s in 0..=l {
                let k = pass.kernel[l * len + s];
                let lam = if k != 0.0 { k * dot(dl, &pass.proj[s * width..(s + 1) * width]) } else { 0.0 };
                col[s] += lam;
                prefix[s + 1] = prefix[s] + lam;
            }
            for t in 0..=l {
                cross[t] += prefix[t];
            }
        }
        for t in 0..len {
            let g = pass.gates[t];
            let coef = (1.0 - g) * col[t] - g * cross[t];
            if coef != 0.0 {
                axpy(coef, sample.token(t), &mut acc.w_delta);
            }
        }
    }
}

const BOTH: Blocks = Blocks { w_o: true, w_delta: true };

/// Per-sample gradient of the hinge loss for both trainable blocks.
pub fn sample_grads(params: &ModelParams, sample: &Sample) -> Result<GradSet> {
    params.check_sample(sample)?;
    let pass = ForwardPass::new(params, sample);
    let mut g = GradSet::zeros(params.width(), params.dim());
    accumulate(params, sample, &pass, 1.0, BOTH, &mut g);
    Ok(g)
}

/// `∂ℓ/∂W_O` for one sample.
pub fn grad_w_o(params: &ModelParams, sample: &Sample) -> Result<Matrix> {
    params.check_sample(sample)?;
    let pass = ForwardPass::new(params, sample);
    let mut g = GradSet::zeros(params.width(), params.dim());
    accumulate(params, sample, &pass, 1.0, Blocks { w_o: true, w_delta: false }, &mut g);
    Ok(g.w_o)
}

/// `∂ℓ/∂w_Δ` for one sample.
pub fn grad_w_delta(params: &ModelParams, sample: &Sample) -> Result<Vec<f64>> {
    params.check_sample(sample)?;
    let pass = ForwardPass::new(params, sample);
    let mut g = GradSet::zeros(params.width(), params.dim());
    accumulate(params, sample, &pass, 1.0, Blocks { w_o: false, w_delta: true }, &mut g);
    Ok(g.w_delta)
}

/// Batch statistics gathered alongside the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub active: usize,
}

/// Gradient of the mean hinge loss and the loss itself at the same point.
/// With `with_gate = false` the `w_Δ` block is left at zero.
pub fn batch_grads_with_loss(params: &ModelParams, cache: &DatasetCache, with_gate: bool) -> Result<(GradSet, BatchStats)> {
    if cache.is_empty() {
        return Err(Error::InvalidSize("empty dataset".into()));
    }
    let mut acc = GradSet::zeros(params.width(), params.dim());
    let totals = engine::run(params, cache, Some(&mut acc), with_gate)?;
    let n = cache.len() as f64;
    acc.scale(1.0 / n);
    Ok((acc, BatchStats { loss: totals.loss_sum / n, active: totals.active }))
}

/// Gradient of the mean hinge loss over `dataset`.
pub fn batch_grads(params: &ModelParams, dataset: &Dataset) -> Result<GradSet> {
    batch_grads_with_loss(params, &DatasetCache::new(dataset)?, true).map(|(g, _)| g)
}

/// Mean of per-sample gradients, each computed separately. Used to check
/// that the batch gradient is the mean of sample gradients.
pub fn mean_of_sample_grads(params: &ModelParams, dataset: &Dataset) -> Result<GradSet> {
    let mut acc = GradSet::zeros(params.width(), params.dim());
    for s in &dataset.samples {
        acc.add_assign(&sample_grads(params, s)?);
    }
    acc.scale(1.0 / dataset.len() as f64);
    Ok(acc)
}

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Kink-rejection margin in units of the step.
pub const KINK_MARGIN: f64 = 10.0;

/// Central finite differences of the mean hinge loss over every entry of `W_O`
/// and `w_Δ`.
///
/// Returns [`Error::KinkProximal`] when any hinge margin `|1 − zF|` or any
/// pre-activation `|W_O[i,·] y_l|` is within `10·h` of its kink.
pub fn fd_gradient(params: &ModelParams, dataset: &Dataset, h: f64) -> Result<GradSet> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h}")));
    }
    check_kinks(params, dataset, KINK_MARGIN * h)?;
    let cache = DatasetCache::new(dataset)?;
    let batch_loss = |p: &ModelParams| batch_loss_cached(p, &cache);
    let (m, d) = (params.width(), params.dim());
    let mut out = GradSet::zeros(m, d);
    let mut probe = params.clone();
    for k in 0..m * d {
        let orig = probe.w_o().as_slice()[k];
        probe.w_o_mut().as_mut_slice()[k] = orig + h;
        let up = batch_loss(&probe)?;
        probe.w_o_mut().as_mut_slice()[k] = orig - h;
        let down = batch_loss(&probe)?;
        probe.w_o_mut().as_mut_slice()[k] = orig;
        out.w_o.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    for k in 0..d {
        let orig = probe.w_delta()[k];
        probe.w_delta_mut()[k] = orig + h;
        let up = batch_loss(&probe)?;
        probe.w_delta_mut()[k] = orig - h;
        let down = batch_loss(&probe)?;
        probe.w_delta_mut()[k] = orig;
        out.w_delta[k] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

fn check_kinks(params: &ModelParams, dataset: &Dataset, margin: f64) -> Result<()> {
    for (n, s) in dataset.samples.iter().enumerate() {
        params.check_sample(s)?;
        let pass = ForwardPass::new(params, s);
        let gap = 1.0 - s.label.sign() * pass.output;
        if gap.abs() < margin {
            return Err(Error::KinkProximal(format!("sample {n}: hinge margin |1 - zF| = {:e}", gap.abs())));
        }
        if let Some(h) = pass.pre.iter().find(|h| h.abs() < margin) {
            return Err(Error::KinkProximal(format!("sample {n}: pre-activation |h| = {:e}", h.abs())));
        }
    }
    Ok(())
}

/// `max_k |a_k − b_k| / max(|a_k|, |b_k|, floor)` over all entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Floor used in relative errors so that entries at round-off level do
/// not dominate.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// One `(i, l, s)` term of the gate-gradient decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTerm {
    pub neuron: usize,
    pub position: usize,
    pub source: usize,
    pub beta_ss: f64,
    /// Product-rule coefficients for `j = s+1..=l`.
    pub beta_sj: Vec<f64>,
    /// Literal coefficients `base·(1 − σ_j)` for `j = s+1..=l`.
    pub beta_sj_literal: Vec<f64>,
    /// `I_{l,s}` with the product-rule coefficients.
    pub i_term: Vec<f64>,
    /// `I_{l,s}` with the literal coefficients.
    pub i_term_literal: Vec<f64>,
}

/// Full decomposition of `∂ℓ/∂w_Δ` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GateGradDecomposition {
    pub terms: Vec<GateTerm>,
    /// Weight `−(z/L) v_i φ'(W_O[i,·] y_l) 1[1 − zF > 0]` for each `(i, l)`,
    /// row-major `m × L`.
    pub weights: Vec<f64>,
    pub total: Vec<f64>,
    pub total_literal: Vec<f64>,
}

/// How the `β_{s,j}` coefficients enter an assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaVariant {
    /// Product-rule coefficients (the exact gradient).
    Derived,
    /// `(1 − σ_j)` coefficients.
    Literal,
    /// Derived coefficients with the sign of the `β_{s,j}` sum flipped.
    /// Only useful as a mutation control for gradient checks.
    SignFlipped,
}

impl GateGradDecomposition {
    /// Sums `weight(i, l) · I_{l,s}` over all terms, recomputing `I_{l,s}`
    /// from the stored coefficients.
    pub fn assemble(&self, sample: &Sample, variant: BetaVariant) -> Vec<f64> {
        let len = sample.seq_len();
        let mut total = vec![0.0; sample.dim()];
        for t in &self.terms {
            let w = self.weights[t.neuron * len + t.position];
            if w == 0.0 {
                continue;
            }
            axpy(w * t.beta_ss, sample.token(t.source), &mut total);
            let (betas, sign) = match variant {
                BetaVariant::Derived => (&t.beta_sj, -1.0),
                BetaVariant::Literal => (&t.beta_sj_literal, -1.0),
                BetaVariant::SignFlipped => (&t.beta_sj, 1.0),
            };
            for (k, &b) in betas.iter().enumerate() {
                axpy(sign * w * b, sample.token(t.source + 1 + k), &mut total);
            }
        }
        total
    }
}

/// Materializes every `β_{s,s}`, `β_{s,j}` and `I_{l,s}` for one sample.
///
/// This route evaluates each term from its definition (no shared kernel or
/// prefix sums) and reads the projections `W_B`, `W_C` from `params`.
pub fn gate_grad_decompose(params: &ModelParams, sample: &Sample) -> Result<GateGradDecomposition> {
    params.check_sample(sample)?;
    let (m, len, d) = (params.width(), sample.seq_len(), params.dim());
    let x = |t: usize| sample.token(t);
    let sig: Vec<f64> = (0..len).map(|t| crate::linalg::sigmoid(dot(params.w_delta(), x(t)))).collect();
    let b: Vec<Vec<f64>> = (0..len).map(|t| params.w_b().transpose_mul_vec(x(t))).collect();
    let c: Vec<Vec<f64>> = (0..len).map(|t| params.w_c().transpose_mul_vec(x(t))).collect();

    // y_l from the definition, for φ'(W_O[i,·] y_l).
    let y: Vec<Vec<f64>> = (0..len)
        .map(|l| {
            let mut out = vec![0.0; d];
            for s in 0..=l {
                let carry: f64 = (s + 1..=l).map(|r| 1.0 - sig[r]).product();
                axpy(carry * sig[s] * dot(&b[s], &c[l]), x(s), &mut out);
            }
            out
        })
        .collect();
    let mut output = 0.0;
    let mut pre = vec![0.0; m * len];
    for i in 0..m {
        for l in 0..len {
            let h = dot(params.w_o().row(i), &y[l]);
            pre[i * len + l] = h;
            output += params.v()[i] * h.max(0.0);
        }
    }
    output /= len as f64;
    let z = sample.label.sign();
    let active = 1.0 - z * output > 0.0;
    let weights: Vec<f64> = (0..m * len)
        .map(|k| {
            let i = k / len;
            if active && pre[k] > 0.0 {
                -z / len as f64 * params.v()[i]
            } else {
                0.0
            }
        })
        .collect();

    let mut terms = Vec::with_capacity(m * len * (len + 1) / 2);
    for i in 0..m {
        let wi = params.w_o().row(i);
        for l in 0..len {
            for s in 0..=l {
                let carry: f64 = (s + 1..=l).map(|r| 1.0 - sig[r]).product();
                let base = dot(&b[s], &c[l]) * dot(wi, x(s)) * sig[s] * carry;
                let beta_ss = base * (1.0 - sig[s]);
                let beta_sj: Vec<f64> = (s + 1..=l).map(|j| base * sig[j]).collect();
                let beta_sj_literal: Vec<f64> = (s + 1..=l).map(|j| base * (1.0 - sig[j])).collect();
                let i_of = |betas: &[f64]| {
                    let mut v: Vec<f64> = x(s).iter().map(|xk| beta_ss * xk).collect();
                    for (k, &bj) in betas.iter().enumerate() {
                        axpy(-bj, x(s + 1 + k), &mut v);
                    }
                    v
                };
                let i_term = i_of(&beta_sj);
                let i_term_literal = i_of(&beta_sj_literal);
                terms.push(GateTerm {
                    neuron: i,
                    position: l,
                    source: s,
                    beta_ss,
                    beta_sj,
                    beta_sj_literal,
                    i_term,
                    i_term_literal,
                });
            }
        }
    }

    let mut total = vec![0.0; d];
    let mut total_literal = vec![0.0; d];
    for t in &terms {
        let w = weights[t.neuron * len + t.position];
        if w != 0.0 {
            axpy(w, &t.i_term, &mut total);
            axpy(w, &t.i_term_literal, &mut total_literal);
        }
    }
    Ok(GateGradDecomposition { terms, weights, total, total_literal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Label;
    use crate::linalg::max_abs_diff;
    use crate::model::{forward, hinge_loss, output_weight};
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn params(m: usize, d: usize, seed: u64, gate_scale: f64) -> ModelParams {
        let mut r = rng::stream(seed, 77);
        let mag = output_weight(m);
        let v = (0..m).map(|i| if i % 2 == 0 { mag } else { -mag }).collect();
        let w: Vec<f64> = (0..m * d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let g = (0..d).map(|_| gate_scale * r.sample::<f64, _>(StandardNormal)).collect();
        ModelParams::new(v, Matrix::from_vec(m, d, w).unwrap(), g).unwrap()
    }

    fn sample(d: usize, len: usize, seed: u64, label: Label) -> Sample {
        let mut r = rng::stream(seed, 78);
        let tokens = (0..len).map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect()).collect();
        Sample::new(tokens, label, vec![0; len]).unwrap()
    }

    /// Picks a label that makes the hinge active.
    fn active_sample(p: &ModelParams, d: usize, len: usize, seed: u64) -> Sample {
        let s = sample(d, len, seed, Label::Positive);
        let f = forward(p, &s).unwrap();
        let label = if f < 0.5 { Label::Positive } else { Label::Negative };
        sample(d, len, seed, label)
    }

    /// Central differences of the single-sample hinge loss, written
    /// independently of `fd_gradient`.
    fn fd_sample(p: &ModelParams, s: &Sample, h: f64) -> GradSet {
        let loss = |q: &ModelParams| hinge_loss(forward(q, s).unwrap(), s.label);
        let mut g = GradSet::zeros(p.width(), p.dim());
        let mut q = p.clone();
        for k in 0..p.width() * p.dim() {
            let o = q.w_o().as_slice()[k];
            q.w_o_mut().as_mut_slice()[k] = o + h;
            let a = loss(&q);
            q.w_o_mut().as_mut_slice()[k] = o - h;
            let b = loss(&q);
            q.w_o_mut().as_mut_slice()[k] = o;
            g.w_o.as_mut_slice()[k] = (a - b) / (2.0 * h);
        }
        for k in 0..p.dim() {
            let o = q.w_delta()[k];
            q.w_delta_mut()[k] = o + h;
            let a = loss(&q);
            q.w_delta_mut()[k] = o - h;
            let b = loss(&q);
            q.w_delta_mut()[k] = o;
            g.w_delta[k] = (a - b) / (2.0 * h);
        }
        g
    }

    #[test]
    fn inactive_hinge_gives_zero() {
        let p = params(4, 6, 1, 0.3);
        let s = sample(6, 5, 2, Label::Positive);
        let f = forward(&p, &s).unwrap();
        // Scale W_O so that z F >= 1.
        let mut q = p.clone();
        let label = if f >= 0.0 { Label::Positive } else { Label::Negative };
        q.w_o_mut().scale(2.0 / f.abs());
        let s = sample(6, 5, 2, label);
        assert!(label.sign() * forward(&q, &s).unwrap() >= 1.0);
        let g = sample_grads(&q, &s).unwrap();
        assert!(g.w_o.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.w_delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_neuron_row_is_zero() {
        // Positive tokens and a row with negative entries: W_O[0,·] y_l < 0.
        let mut p = params(3, 4, 3, 0.0);
        p.w_o_mut().row_mut(0).copy_from_slice(&[-1.0, -1.0, -1.0, -1.0]);
        let tokens = vec![vec![1.0, 0.5, 0.2, 0.1], vec![0.3, 0.3, 0.3, 0.3], vec![0.0, 1.0, 0.0, 2.0]];
        let s = Sample::new(tokens, Label::Positive, vec![0; 3]).unwrap();
        let gw = grad_w_o(&p, &s).unwrap();
        if hinge_loss(forward(&p, &s).unwrap(), s.label) > 0.0 {
            assert!(gw.row(0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn analytic_matches_fd_w_o() {
        let p = params(4, 8, 4, 0.0);
        let s = active_sample(&p, 8, 6, 5);
        let a = grad_w_o(&p, &s).unwrap();
        let f = fd_sample(&p, &s, 1e-5);
        assert!(max_relative_error(a.as_slice(), f.w_o.as_slice(), REL_ERROR_FLOOR) < 1e-4);
    }

    #[test]
    fn analytic_matches_fd_w_delta() {
        let p = params(4, 8, 6, 0.3);
        let s = active_sample(&p, 8, 8, 7);
        let a = grad_w_delta(&p, &s).unwrap();
        let f = fd_sample(&p, &s, 1e-5);
        let err = max_relative_error(&a, &f.w_delta, REL_ERROR_FLOOR);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn decomposition_reassembles_gate_gradient() {
        for seed in 0..5 {
            let p = params(3, 5, 10 + seed, 0.5);
            let s = active_sample(&p, 5, 6, 20 + seed);
            let dec = gate_grad_decompose(&p, &s).unwrap();
            let g = grad_w_delta(&p, &s).unwrap();
            assert!(max_abs_diff(&dec.total, &g) < 1e-10);
            assert!(max_abs_diff(&dec.assemble(&s, BetaVariant::Derived), &g) < 1e-10);
            assert!(max_abs_diff(&dec.assemble(&s, BetaVariant::Literal), &dec.total_literal) < 1e-12);
        }
    }

    #[test]
    fn zero_gate_literal_equals_derived() {
        let p = params(3, 5, 30, 0.0);
        let s = active_sample(&p, 5, 2, 31);
        let dec = gate_grad_decompose(&p, &s).unwrap();
        assert!(max_abs_diff(&dec.total, &dec.total_literal) < 1e-12);
        for t in &dec.terms {
            assert_eq!(t.beta_sj, t.beta_sj_literal);
        }
    }

    #[test]
    fn beta_ss_by_hand_for_repeated_feature() {
        let d = 4;
        let mut p = params(2, d, 40, 0.0);
        p.w_delta_mut().copy_from_slice(&[0.7, -0.2, 0.1, 0.4]);
        let o = vec![1.0, 0.0, 0.0, 0.0];
        let s = Sample::new(vec![o.clone(), o.clone()], Label::Positive, vec![0, 0]).unwrap();
        let dec = gate_grad_decompose(&p, &s).unwrap();
        let g = 0.7f64;
        let sg = 1.0 / (1.0 + (-g).exp());
        for i in 0..2 {
            let t = dec.terms.iter().find(|t| t.neuron == i && t.position == 0 && t.source == 0).unwrap();
            let expected = p.w_o().get(i, 0) * sg * (1.0 - sg);
            assert!((t.beta_ss - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn literal_assembly_deviates_off_zero() {
        let p = params(3, 5, 50, 0.8);
        let s = active_sample(&p, 5, 6, 51);
        let dec = gate_grad_decompose(&p, &s).unwrap();
        let f = fd_sample(&p, &s, 1e-5);
        assert!(max_relative_error(&dec.total, &f.w_delta, REL_ERROR_FLOOR) < 1e-4);
        // Reported, not asserted to any size: just confirm it is computed.
        let dev = max_abs_diff(&dec.total_literal, &f.w_delta);
        assert!(dev.is_finite());
    }

    #[test]
    fn fd_rejects_kinks_and_bad_step() {
        let p = params(2, 4, 60, 0.0);
        let mut w = p.clone();
        w.w_o_mut().as_mut_slice().fill(0.0);
        let ds = tiny_dataset(&w);
        assert!(matches!(fd_gradient(&w, &ds, 1e-5), Err(Error::KinkProximal(_))));
        assert!(matches!(fd_gradient(&p, &ds, 0.0), Err(Error::InvalidConfig(_))));
    }

    fn tiny_dataset(p: &ModelParams) -> Dataset {
        use crate::datagen::{LocalityConfig, RegimeConfig};
        use crate::featurespace::BasisKind;
        let samples = vec![sample(p.dim(), 3, 1, Label::Positive), sample(p.dim(), 3, 2, Label::Negative)];
        Dataset {
            samples,
            config: RegimeConfig::Locality(LocalityConfig { d: p.dim(), seq_len: 3, tau: 1.0, delta_near: 1, delta_far: 2 }),
            basis: BasisKind::Custom,
            seed: 0,
        }
    }

    #[test]
    fn batch_is_mean_of_samples() {
        let p = params(3, 4, 70, 0.4);
        let ds = tiny_dataset(&p);
        let a = batch_grads(&p, &ds).unwrap();
        let b = mean_of_sample_grads(&p, &ds).unwrap();
        assert!(a.w_o.max_abs_diff(&b.w_o) < 1e-12);
        assert!(max_abs_diff(&a.w_delta, &b.w_delta) < 1e-12);
    }
}
