//! Initialization and full-batch gradient descent on the hinge loss.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, RegimeConfig};
use crate::diagnostics::{fmt_f64, lucky_sets, snapshot, AlignmentSnapshot, LuckySets};
use crate::error::{Error, Result};
use crate::featurespace::FeatureBasis;
use crate::gradients::{batch_grads_with_loss, GradSet};
use crate::linalg::{axpy, Matrix};
use crate::engine::{self, DatasetCache};
use crate::model::{output_weight, ModelParams};
use crate::rng;

/// Train loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Step size used when a configuration leaves `eta` unset.
///
/// The output is 1-homogeneous in `W_O`, so `eta` mostly sets the time
/// scale. These values let the default settings converge well inside the
/// iteration budget.
pub fn default_eta(regime: &RegimeConfig) -> f64 {
    match regime {
        RegimeConfig::Majority(_) => 4.0,
        RegimeConfig::Locality(_) => 1.0,
    }
}

/// Full-batch gradient-descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Hidden width `m`.
    pub width: usize,
    pub eta: f64,
    pub max_iters: usize,
    /// Standard deviation of the `W_O` initialization.
    pub c0: f64,
    /// Held-out hinge loss below which training stops.
    pub stop_tol: f64,
    pub eval_every: usize,
    pub gating_enabled: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            width: 50,
            eta: 0.5,
            max_iters: 2000,
            c0: 0.02,
            stop_tol: 1e-3,
            eval_every: 5,
            gating_enabled: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.width < 1 {
            return fail("width >= 1 violated");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail("eta > 0 violated");
        }
        if self.max_iters < 1 {
            return fail("max_iters >= 1 violated");
        }
        if !(self.c0 >= 0.0 && self.c0.is_finite()) {
            return fail("c0 >= 0 violated");
        }
        if !(self.stop_tol > 0.0) {
            return fail("stop_tol > 0 violated");
        }
        if self.eval_every < 1 {
            return fail("eval_every >= 1 violated");
        }
        Ok(())
    }
}

/// Initial parameters: `W_O ~ N(0, c0²)`, `w_Δ = 0`, `v_i = ±1/√m`.
pub fn init_params(m: usize, d: usize, c0: f64, seed: u64) -> Result<ModelParams> {
    if m < 1 {
        return Err(Error::InvalidConfig("m >= 1 violated".into()));
    }
    if d < 3 {
        return Err(Error::InvalidDimension(format!("d >= 3 violated: d = {d}")));
    }
    let mut r = rng::stream(seed, rng::labels::INIT);
    let mag = output_weight(m);
    let v = (0..m).map(|_| if r.random::<bool>() { mag } else { -mag }).collect();
    let w = if c0 > 0.0 {
        let normal = Normal::new(0.0, c0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        (0..m * d).map(|_| normal.sample(&mut r)).collect()
    } else {
        vec![0.0; m * d]
    };
    ModelParams::new(v, Matrix::from_vec(m, d, w).expect("m*d entries"), vec![0.0; d])
}

/// One full-batch step. Returns the train loss at the pre-step parameters
/// and the number of samples with an active hinge.
pub fn gd_step(params: &mut ModelParams, dataset: &Dataset, eta: f64, gating_enabled: bool) -> Result<(f64, usize)> {
    let (g, stats) = batch_grads_with_loss(params, &DatasetCache::new(dataset)?, gating_enabled)?;
    apply_step(params, &g, eta, gating_enabled)?;
    Ok((stats.loss, stats.active))
}

fn apply_step(params: &mut ModelParams, g: &GradSet, eta: f64, gating_enabled: bool) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if eta != 0.0 {
        axpy(-eta, g.w_o.as_slice(), params.w_o_mut().as_mut_slice());
        if gating_enabled {
            axpy(-eta, &g.w_delta, params.w_delta_mut());
        }
    }
    Ok(())
}

/// Mean hinge loss and accuracy, where `F = 0` counts as an error.
pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<(f64, f64)> {
    evaluate_cached(params, &DatasetCache::new(dataset)?)
}

fn evaluate_cached(params: &ModelParams, cache: &DatasetCache) -> Result<(f64, f64)> {
    let totals = engine::run(params, cache, None, false)?;
    let correct = totals.outputs.iter().zip(cache.signs()).filter(|(f, z)| *z * **f > 0.0).count();
    let n = cache.len() as f64;
    Ok((totals.loss_sum / n, correct as f64 / n))
}

/// One evaluation point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iter: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Held-out loss fell below the threshold.
    Converged,
    /// Every training margin is met, so further steps cannot move the
    /// parameters; the held-out loss is still above the threshold.
    Stalled,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: ModelParams,
    pub converged: bool,
    pub epochs_to_converge: Option<usize>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub trajectory: Vec<EvalRecord>,
    pub alignment: Vec<AlignmentSnapshot>,
    pub lucky_initial: LuckySets,
    pub lucky_final: LuckySets,
}

impl TrainResult {
    pub fn final_record(&self) -> &EvalRecord {
        self.trajectory.last().expect("at least the iteration-0 record")
    }

    /// Fraction of neurons whose lucky-set membership is unchanged.
    pub fn lucky_stability(&self) -> f64 {
        self.lucky_initial.agreement(&self.lucky_final, self.params.width())
    }
}

/// Trains from [`init_params`] with full-batch GD, evaluating on `test_set`
/// every `eval_every` iterations and stopping once the held-out loss drops
/// below `stop_tol`.
///
/// Iteration `t` refers to the parameters after `t` updates. A run also
/// ends early when no training sample has an active hinge, since the
/// gradient is then zero and the parameters can no longer change.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, test_set: &Dataset, basis: &FeatureBasis) -> Result<TrainResult> {
    cfg.validate()?;
    let d = train_set.config.dim();
    if test_set.config.dim() != d || basis.dim() != d {
        return Err(Error::Shape("train set, test set and basis must share d".into()));
    }
    let train_cache = DatasetCache::new(train_set)?;
    let test_cache = DatasetCache::new(test_set)?;
    let mut params = init_params(cfg.width, d, cfg.c0, cfg.seed)?;
    let lucky_initial = lucky_sets(&params, basis);
    let mut trajectory = Vec::new();
    let mut alignment = Vec::new();

    let mut t = 0;
    let stop_reason = loop {
        let (g, stats) = batch_grads_with_loss(&params, &train_cache, cfg.gating_enabled)?;
        if !stats.loss.is_finite() || stats.loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged { iter: t, loss: stats.loss });
        }
        let stalled = stats.active == 0;
        if t % cfg.eval_every == 0 || t == cfg.max_iters || stalled {
            let (test_loss, test_acc) = evaluate_cached(&params, &test_cache)?;
            trajectory.push(EvalRecord { iter: t, train_loss: stats.loss, test_loss, test_acc });
            alignment.push(snapshot(&params, basis, &lucky_initial, t));
            if test_loss < cfg.stop_tol {
                break StopReason::Converged;
            }
            if stalled {
                break StopReason::Stalled;
            }
        }
        if t == cfg.max_iters {
            break StopReason::MaxIters;
        }
        apply_step(&mut params, &g, cfg.eta, cfg.gating_enabled)?;
        t += 1;
    };
    let lucky_final = lucky_sets(&params, basis);
    let converged = stop_reason == StopReason::Converged;
    Ok(TrainResult {
        params,
        converged,
        epochs_to_converge: converged.then_some(t),
        stop_reason,
        iterations: t,
        trajectory,
        alignment,
        lucky_initial,
        lucky_final,
    })
}

/// Column order of the trajectory CSV.
pub const TRAJECTORY_COLUMNS: [&str; 4] = ["iter", "train_loss", "test_loss", "test_acc"];

pub fn export_trajectory<W: Write>(records: &[EvalRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in records {
        w.write_record([r.iter.to_string(), fmt_f64(r.train_loss), fmt_f64(r.test_loss), fmt_f64(r.test_acc)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_balanced_dataset, MajorityVotingConfig, Placement, RegimeConfig};
    use crate::featurespace::build_canonical_basis;
    use crate::model::{forward, hinge_loss};

    fn mv_sets(n_train: usize, n_test: usize) -> (FeatureBasis, Dataset, Dataset) {
        let b = build_canonical_basis(16).unwrap();
        let cfg = RegimeConfig::Majority(MajorityVotingConfig {
            d: 16,
            seq_len: 12,
            alpha_r: 0.35,
            alpha_c: 0.1,
            tau: 0.01,
            placement: Placement::Shuffled,
        });
        let tr = gen_balanced_dataset(&cfg, n_train, &b, 1).unwrap();
        let te = gen_balanced_dataset(&cfg, n_test, &b, 2).unwrap();
        (b, tr, te)
    }

    #[test]
    fn zero_c0_gives_zero_weights() {
        let p = init_params(4, 5, 0.0, 1).unwrap();
        assert!(p.w_o().as_slice().iter().all(|&v| v == 0.0));
        assert!(p.w_delta().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn v_has_fixed_magnitude() {
        let p = init_params(50, 32, 0.02, 7).unwrap();
        let mag = 1.0 / 50f64.sqrt();
        assert!(p.v().iter().all(|v| v.abs() == mag));
        assert!(p.v().iter().any(|&v| v > 0.0) && p.v().iter().any(|&v| v < 0.0));
        assert_eq!(p.w_b(), &Matrix::identity(32));
        assert_eq!(p.w_c(), &Matrix::identity(32));
    }

    #[test]
    fn init_std_moment_check() {
        let c0 = 0.02;
        let p = init_params(50, 32, c0, 3).unwrap();
        let xs = p.w_o().as_slice();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        // Standard error of the sample std for Gaussian data: c0 / sqrt(2(n-1)).
        let se = c0 / (2.0 * (n - 1.0)).sqrt();
        assert!((std - c0).abs() < 3.0 * se, "std {std}");
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_params(6, 8, 0.1, 5).unwrap(), init_params(6, 8, 0.1, 5).unwrap());
        assert_ne!(init_params(6, 8, 0.1, 5).unwrap(), init_params(6, 8, 0.1, 6).unwrap());
    }

    #[test]
    fn zero_eta_is_identity() {
        let (_, tr, _) = mv_sets(10, 4);
        let mut p = init_params(6, 16, 0.1, 1).unwrap();
        p.w_delta_mut()[3] = 0.25;
        let before = p.clone();
        gd_step(&mut p, &tr, 0.0, true).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn ungated_steps_keep_w_delta_zero() {
        let (_, tr, _) = mv_sets(10, 4);
        let mut p = init_params(6, 16, 0.1, 1).unwrap();
        for _ in 0..20 {
            gd_step(&mut p, &tr, 0.5, false).unwrap();
        }
        assert!(p.w_delta().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_follows_the_gradient() {
        let (_, mut tr, _) = mv_sets(2, 2);
        tr.samples.truncate(1);
        let mut p = init_params(6, 16, 0.1, 2).unwrap();
        p.w_delta_mut()[0] = 0.3;
        let g = crate::gradients::sample_grads(&p, &tr.samples[0]).unwrap();
        let before = p.clone();
        let eta = 0.7;
        gd_step(&mut p, &tr, eta, true).unwrap();
        for k in 0..before.w_o().as_slice().len() {
            let expected = before.w_o().as_slice()[k] - eta * g.w_o.as_slice()[k];
            assert!((p.w_o().as_slice()[k] - expected).abs() < 1e-14);
        }
        for k in 0..16 {
            assert!((p.w_delta()[k] - (before.w_delta()[k] - eta * g.w_delta[k])).abs() < 1e-14);
        }
        assert_eq!(p.v(), before.v());
    }

    #[test]
    fn evaluate_conventions() {
        let (_, _, te) = mv_sets(2, 20);
        let zero = init_params(4, 16, 0.0, 1).unwrap();
        assert_eq!(evaluate(&zero, &te).unwrap(), (1.0, 0.0));

        let p = init_params(4, 16, 0.5, 1).unwrap();
        let (loss, _) = evaluate(&p, &te).unwrap();
        let naive: f64 =
            te.samples.iter().map(|s| hinge_loss(forward(&p, s).unwrap(), s.label)).sum::<f64>() / te.len() as f64;
        assert!((loss - naive).abs() < 1e-15);
    }

    #[test]
    fn unreachable_threshold_runs_to_the_end() {
        let (b, tr, te) = mv_sets(6, 6);
        // c0 = 0 and eta tiny: F stays near 0, hinge near 1.
        let cfg = TrainConfig { width: 4, c0: 0.0, eta: 1e-9, max_iters: 12, eval_every: 5, ..Default::default() };
        let r = train(&cfg, &tr, &te, &b).unwrap();
        assert!(!r.converged);
        assert_eq!(r.epochs_to_converge, None);
        assert_eq!(r.stop_reason, StopReason::MaxIters);
        let iters: Vec<usize> = r.trajectory.iter().map(|e| e.iter).collect();
        assert_eq!(iters, vec![0, 5, 10, 12]);
    }

    #[test]
    fn training_is_deterministic_and_keeps_frozen_params() {
        let (b, tr, te) = mv_sets(40, 40);
        let cfg = TrainConfig { width: 8, eta: 1.0, max_iters: 200, ..Default::default() };
        let a = train(&cfg, &tr, &te, &b).unwrap();
        let c = train(&cfg, &tr, &te, &b).unwrap();
        assert_eq!(a, c);
        let init = init_params(8, 16, cfg.c0, cfg.seed).unwrap();
        assert_eq!(a.params.v(), init.v());
        assert_eq!(a.params.w_b(), init.w_b());
        assert_eq!(a.params.w_c(), init.w_c());
        assert_eq!(a.alignment[0].gate.cos_plus, 0.0);
        assert!(a.trajectory.iter().all(|r| r.train_loss.is_finite()));
        if a.converged {
            assert!(a.final_record().test_loss < cfg.stop_tol);
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let recs = [EvalRecord { iter: 5, train_loss: 0.5, test_loss: 0.25, test_acc: 1.0 }];
        let mut buf = Vec::new();
        export_trajectory(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,train_loss,test_loss,test_acc"));
        assert_eq!(
            lines.next(),
            Some("5,5.0000000000000000e-1,2.5000000000000000e-1,1.0000000000000000e0")
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (b, tr, te) = mv_sets(4, 4);
        for cfg in [
            TrainConfig { eta: 0.0, ..Default::default() },
            TrainConfig { max_iters: 0, ..Default::default() },
            TrainConfig { c0: -1.0, ..Default::default() },
            TrainConfig { stop_tol: 0.0, ..Default::default() },
        ] {
            assert!(matches!(train(&cfg, &tr, &te, &b), Err(Error::InvalidConfig(_))));
        }
    }
}
