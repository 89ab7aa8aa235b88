//! JSON experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssm_lab_core::datagen::RegimeConfig;
use ssm_lab_core::featurespace::BasisKind;
use ssm_lab_core::trainer::{default_eta, TrainConfig};

use crate::error::{CliError, CliResult};

/// Version of the configuration format understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// A full experiment: data, training settings, trial count and an optional
/// one-parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub data: RegimeConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(rename = "N_train", default = "default_n_train")]
    pub n_train: usize,
    #[serde(rename = "N_test", default = "default_n_test")]
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_basis")]
    pub basis: BasisKind,
}

fn default_trials() -> usize {
    1
}

fn default_n_train() -> usize {
    400
}

fn default_n_test() -> usize {
    1000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_basis() -> BasisKind {
    BasisKind::Canonical
}

/// Training settings as written in a config file. Unset fields take the
/// library defaults; an unset `eta` takes the regime default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gating_enabled: Option<bool>,
}

impl TrainSettings {
    /// Effective training config for `regime` with the given run seed.
    pub fn resolve(&self, regime: &RegimeConfig, seed: u64) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            width: self.width.unwrap_or(base.width),
            eta: self.eta.unwrap_or_else(|| default_eta(regime)),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            c0: self.c0.unwrap_or(base.c0),
            stop_tol: self.stop_tol.unwrap_or(base.stop_tol),
            eval_every: self.eval_every.unwrap_or(base.eval_every),
            gating_enabled: self.gating_enabled.unwrap_or(base.gating_enabled),
            seed,
        }
    }
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "alpha_r")]
    AlphaR,
    #[serde(rename = "alpha_c")]
    AlphaC,
    #[serde(rename = "delta_near")]
    DeltaNear,
    #[serde(rename = "d")]
    Dim,
    #[serde(rename = "N_train")]
    NTrain,
    #[serde(rename = "eta")]
    Eta,
    #[serde(rename = "tau")]
    Tau,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::AlphaR => "alpha_r",
            Self::AlphaC => "alpha_c",
            Self::DeltaNear => "delta_near",
            Self::Dim => "d",
            Self::NTrain => "N_train",
            Self::Eta => "eta",
            Self::Tau => "tau",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl ExperimentConfig {
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
            return Err(CliError::Config(format!(
                "schema == {SCHEMA_VERSION} violated: found {}",
                self.schema
            )));
        }
        if self.trials < 1 {
            return Err(CliError::Config("trials >= 1 violated".into()));
        }
        if self.n_train < 2 || self.n_test < 2 {
            return Err(CliError::Config("N_train >= 2 and N_test >= 2 violated".into()));
        }
        self.data.validate()?;
        self.train.resolve(&self.data, 0).validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(CliError::Config("sweep.values must be non-empty".into()));
            }
            for &v in &sweep.values {
                self.at_sweep_value(sweep.parameter, v)?;
            }
        }
        Ok(())
    }

    /// Copy of the config with `parameter` set to `value`, validated.
    pub fn at_sweep_value(&self, parameter: SweepParameter, value: f64) -> CliResult<ExperimentConfig> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        let bad = |what: &str| CliError::Config(format!("sweep {parameter} = {value}: {what}"));
        let as_count = |v: f64| -> CliResult<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(bad("value must be a nonnegative integer"))
            }
        };
        match (parameter, &mut cfg.data) {
            (SweepParameter::AlphaR, RegimeConfig::Majority(c)) => c.alpha_r = value,
            (SweepParameter::AlphaC, RegimeConfig::Majority(c)) => c.alpha_c = value,
            (SweepParameter::DeltaNear, RegimeConfig::Locality(c)) => c.delta_near = as_count(value)?,
            (SweepParameter::Dim, RegimeConfig::Majority(c)) => c.d = as_count(value)?,
            (SweepParameter::Dim, RegimeConfig::Locality(c)) => c.d = as_count(value)?,
            (SweepParameter::Tau, RegimeConfig::Majority(c)) => c.tau = value,
            (SweepParameter::Tau, RegimeConfig::Locality(c)) => c.tau = value,
            (SweepParameter::NTrain, _) => cfg.n_train = as_count(value)?,
            (SweepParameter::Eta, _) => cfg.train.eta = Some(value),
            (p, data) => {
                return Err(CliError::Config(format!(
                    "sweep parameter {p} does not apply to the {} regime",
                    data.name()
                )))
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MV: &str = r#"{
        "schema": 1,
        "data": {"regime": "majority", "d": 32, "seq_len": 30, "alpha_r": 0.3, "alpha_c": 0.1, "tau": 0.01}
    }"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(MV).unwrap();
        assert_eq!(cfg.trials, 1);
        assert_eq!(cfg.n_train, 400);
        assert_eq!(cfg.n_test, 1000);
        assert_eq!(cfg.basis, BasisKind::Canonical);
        let tc = cfg.train.resolve(&cfg.data, 7);
        assert_eq!(tc.eta, default_eta(&cfg.data));
        assert_eq!(tc.seed, 7);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MV.replace("\"schema\": 1,", "\"schema\": 1, \"trails\": 3,");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(CliError::Config(_))));
        let text = MV.replace("\"schema\": 1,", "\"schema\": 1, \"train\": {\"seed\": 3},");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn unknown_sweep_parameter_is_rejected() {
        let text = MV.replace("\"schema\": 1,", "\"schema\": 1, \"sweep\": {\"parameter\": \"alpha\", \"values\": [0.2]},");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn wrong_schema_and_zero_trials_are_rejected() {
        assert!(ExperimentConfig::from_json(&MV.replace("\"schema\": 1", "\"schema\": 2")).is_err());
        let text = MV.replace("\"schema\": 1,", "\"schema\": 1, \"trials\": 0,");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("trials >= 1"));
    }

    #[test]
    fn sweep_values_are_validated_against_the_regime() {
        let cfg = ExperimentConfig::from_json(MV).unwrap();
        assert!(cfg.at_sweep_value(SweepParameter::AlphaR, 0.2).is_ok());
        // alpha_r below alpha_c breaks the majority invariant.
        let err = cfg.at_sweep_value(SweepParameter::AlphaR, 0.05).unwrap_err();
        assert!(err.to_string().contains("violated"));
        assert!(cfg.at_sweep_value(SweepParameter::DeltaNear, 2.0).is_err());
        assert!(cfg.at_sweep_value(SweepParameter::NTrain, 10.5).is_err());
        assert_eq!(cfg.at_sweep_value(SweepParameter::NTrain, 500.0).unwrap().n_train, 500);
    }
}
