//! Finite-difference verification of the analytic gradients.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use ssm_lab_core::datagen::{gen_balanced_dataset, Dataset, LocalityConfig, MajorityVotingConfig, Placement, RegimeConfig};
use ssm_lab_core::diagnostics::fmt_f64;
use ssm_lab_core::featurespace::build_rotated_basis;
use ssm_lab_core::gradients::{
    batch_grads, fd_gradient, gate_grad_decompose, max_relative_error, BetaVariant, FD_STEP, REL_ERROR_FLOOR,
};
use ssm_lab_core::linalg::{axpy, Matrix};
use ssm_lab_core::model::{output_weight, ModelParams};
use ssm_lab_core::rng::{self, derive_seed, labels};
use ssm_lab_core::Error as CoreError;

use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};

/// Largest accepted relative error between analytic and FD gradients.
pub const GRAD_TOL: f64 = 1e-4;

/// Samples per gradient-check instance.
const INSTANCE_SAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Size {
    pub d: usize,
    #[serde(rename = "L")]
    pub seq_len: usize,
    pub m: usize,
}

/// Configuration of the `grad-check` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    pub schema: u32,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<Size>,
    /// Each size runs this many instances, cycling through both regimes
    /// and zero or random gating vectors.
    #[serde(default = "default_instances")]
    pub instances_per_size: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_sizes() -> Vec<Size> {
    let mut v = Vec::new();
    for d in [4, 8] {
        for seq_len in [4, 8] {
            for m in [2, 6] {
                v.push(Size { d, seq_len, m });
            }
        }
    }
    v
}

fn default_instances() -> usize {
    4
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl GradCheckConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(CliError::Config(format!("schema == {SCHEMA_VERSION} violated: found {}", self.schema)));
        }
        if self.sizes.is_empty() || self.instances_per_size == 0 {
            return Err(CliError::Config("grad-check needs at least one instance".into()));
        }
        for s in &self.sizes {
            if s.d < 3 || s.seq_len < 4 || s.m < 1 {
                return Err(CliError::Config(format!("size {s:?}: need d >= 3, L >= 4, m >= 1")));
            }
        }
        Ok(())
    }
}

/// Verdict on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Accepted,
    /// Too close to a hinge or ReLU kink for finite differences.
    Rejected,
    /// Accepted, but the error exceeds the tolerance.
    Failed,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Accepted => "accepted",
            Status::Rejected => "rejected",
            Status::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub instance: usize,
    pub regime: &'static str,
    pub size: Size,
    pub gate_nonzero: bool,
    pub seed: u64,
    /// Relative errors for `W_O` and `w_Δ`; absent when rejected.
    pub error_w_o: Option<f64>,
    pub error_w_delta: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub instances: Vec<InstanceReport>,
}

impl GradCheckReport {
    pub fn count(&self, status: Status) -> usize {
        self.instances.iter().filter(|r| r.status == status).count()
    }

    pub fn max_error(&self) -> f64 {
        self.instances
            .iter()
            .flat_map(|r| [r.error_w_o, r.error_w_delta])
            .flatten()
            .fold(0.0, f64::max)
    }

    /// True when at least one instance was accepted and none failed.
    pub fn passed(&self) -> bool {
        self.count(Status::Accepted) > 0 && self.count(Status::Failed) == 0
    }
}

/// Data config for an instance. Role counts and separations are the
/// smallest that fit the sequence length.
fn instance_regime(majority: bool, d: usize, len: usize) -> RegimeConfig {
    let tau = 0.1;
    if majority {
        let r = 2 + len / 8;
        RegimeConfig::Majority(MajorityVotingConfig {
            d,
            seq_len: len,
            alpha_r: r as f64 / len as f64,
            alpha_c: 1.0 / len as f64,
            tau,
            placement: Placement::Shuffled,
        })
    } else {
        let far = len / 2 + 1;
        RegimeConfig::Locality(LocalityConfig { d, seq_len: len, tau, delta_near: 1, delta_far: far })
    }
}

fn instance_params(m: usize, d: usize, gate: bool, seed: u64) -> CliResult<ModelParams> {
    let mut r = rng::stream(seed, labels::INIT);
    let mag = output_weight(m);
    let v = (0..m).map(|_| if r.random::<bool>() { mag } else { -mag }).collect();
    let w: Vec<f64> = (0..m * d).map(|_| 0.5 * r.sample::<f64, _>(StandardNormal)).collect();
    let g = (0..d).map(|_| if gate { 0.7 * r.sample::<f64, _>(StandardNormal) } else { 0.0 }).collect();
    Ok(ModelParams::new(v, Matrix::from_vec(m, d, w).expect("m*d entries"), g)?)
}

/// Mean over samples of the decomposition assembled with `variant`.
fn assembled_gate_grad(params: &ModelParams, ds: &Dataset, variant: BetaVariant) -> CliResult<Vec<f64>> {
    let mut acc = vec![0.0; params.dim()];
    for s in &ds.samples {
        let part = gate_grad_decompose(params, s)?.assemble(s, variant);
        axpy(1.0 / ds.len() as f64, &part, &mut acc);
    }
    Ok(acc)
}

/// Runs every instance. `corrupt_beta` replaces the analytic `w_Δ`
/// gradient with the sign-flipped assembly so the check can be shown to
/// catch a wrong formula.
pub fn run_grad_check(cfg: &GradCheckConfig, corrupt_beta: bool) -> CliResult<GradCheckReport> {
    cfg.validate()?;
    let base = derive_seed(cfg.master_seed, labels::GRAD_CHECK);
    let mut instances = Vec::new();
    for size in &cfg.sizes {
        for j in 0..cfg.instances_per_size {
            let id = instances.len();
            let majority = j % 2 == 0;
            let gate_nonzero = (j / 2) % 2 == 1;
            let seed = base.wrapping_add(id as u64);
            let basis = build_rotated_basis(size.d, seed)?;
            let regime = instance_regime(majority, size.d, size.seq_len);
            let ds = gen_balanced_dataset(&regime, INSTANCE_SAMPLES, &basis, seed)?;
            let params = instance_params(size.m, size.d, gate_nonzero, seed)?;
            let mut report = InstanceReport {
                instance: id,
                regime: regime.name(),
                size: *size,
                gate_nonzero,
                seed,
                error_w_o: None,
                error_w_delta: None,
                status: Status::Rejected,
            };
            match fd_gradient(&params, &ds, FD_STEP) {
                Ok(fd) => {
                    let mut an = batch_grads(&params, &ds)?;
                    if corrupt_beta {
                        an.w_delta = assembled_gate_grad(&params, &ds, BetaVariant::SignFlipped)?;
                    }
                    let e_o = max_relative_error(an.w_o.as_slice(), fd.w_o.as_slice(), REL_ERROR_FLOOR);
                    let e_d = max_relative_error(&an.w_delta, &fd.w_delta, REL_ERROR_FLOOR);
                    report.error_w_o = Some(e_o);
                    report.error_w_delta = Some(e_d);
                    report.status = if e_o < GRAD_TOL && e_d < GRAD_TOL { Status::Accepted } else { Status::Failed };
                }
                Err(CoreError::KinkProximal(_)) => {}
                Err(e) => return Err(e.into()),
            }
            instances.push(report);
        }
    }
    Ok(GradCheckReport { instances })
}

pub const GRAD_CHECK_COLUMNS: [&str; 9] = ["instance", "regime", "d", "L", "m", "gate", "block", "max_rel_error", "status"];

/// Runs the check, writes `grad_check.csv` and `manifest.json`, and fails
/// with a verification error unless every accepted instance is within
/// tolerance and at least one was accepted.
pub fn cmd_grad_check(cfg: &GradCheckConfig, corrupt_beta: bool) -> CliResult<GradCheckReport> {
    let report = run_grad_check(cfg, corrupt_beta)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GRAD_CHECK_COLUMNS)?;
    for r in &report.instances {
        for (block, err) in [("w_o", r.error_w_o), ("w_delta", r.error_w_delta)] {
            w.write_record([
                r.instance.to_string(),
                r.regime.to_string(),
                r.size.d.to_string(),
                r.size.seq_len.to_string(),
                r.size.m.to_string(),
                if r.gate_nonzero { "random" } else { "zero" }.to_string(),
                block.to_string(),
                err.map(fmt_f64).unwrap_or_default(),
                r.status.as_str().to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(cfg.output_dir.join("grad_check.csv"), bytes)?;
    let manifest = json!({
        "version": crate::manifest::version_string(),
        "command": "grad-check",
        "config": cfg,
        "details": {
            "accepted": report.count(Status::Accepted),
            "rejected": report.count(Status::Rejected),
            "failed": report.count(Status::Failed),
            "max_rel_error": report.max_error(),
            "tolerance": GRAD_TOL,
            "fd_step": FD_STEP,
            "corrupt_beta": corrupt_beta,
        },
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(cfg.output_dir.join("manifest.json"), text)?;
    if !report.passed() {
        return Err(CliError::Verification(format!(
            "{} accepted, {} rejected, {} failed; max relative error {:e} (tolerance {GRAD_TOL:e})",
            report.count(Status::Accepted),
            report.count(Status::Rejected),
            report.count(Status::Failed),
            report.max_error()
        )));
    }
    Ok(report)
}
