//! Labeled token sequences for the majority-voting and locality-structured
//! regimes.
//!
//! Tokens are stored one per row (`L × d`); the JSON form uses the `d × L`
//! row-major layout where column `l` is token `l`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurespace::{noisy_token, BasisKind, FeatureBasis, FIRST_IRRELEVANT, NEGATIVE, POSITIVE};
use crate::linalg::Matrix;
use crate::rng;

/// Binary class label `z ∈ {+1, -1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    /// Feature index that determines this label.
    pub fn relevant_feature(self) -> usize {
        match self {
            Label::Positive => POSITIVE,
            Label::Negative => NEGATIVE,
        }
    }

    /// Feature index of the opposite class (the confusion feature).
    pub fn confusion_feature(self) -> usize {
        match self {
            Label::Positive => NEGATIVE,
            Label::Negative => POSITIVE,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

/// One labeled sequence with its ground-truth token roles.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    tokens: Matrix,
    pub label: Label,
    pub token_roles: Vec<usize>,
}

impl Sample {
    /// Builds a sample from `L` token vectors of dimension `d`.
    pub fn new(tokens: Vec<Vec<f64>>, label: Label, token_roles: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Shape("a sample needs at least one token".into()));
        }
        if token_roles.len() != tokens.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} roles",
                tokens.len(),
                token_roles.len()
            )));
        }
        let tokens = Matrix::from_rows(&tokens)
            .ok_or_else(|| Error::Shape("tokens have inconsistent dimension".into()))?;
        let d = tokens.cols();
        if let Some(&bad) = token_roles.iter().find(|&&r| r >= d) {
            return Err(Error::InvalidFeature { index: bad, dim: d });
        }
        Ok(Self { tokens, label, token_roles })
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.rows()
    }

    /// Token `l` (column `l` of `X`).
    #[inline]
    pub fn token(&self, l: usize) -> &[f64] {
        self.tokens.row(l)
    }

    /// Tokens as an `L × d` matrix (`Xᵀ`).
    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn count_role(&self, feature: usize) -> usize {
        self.token_roles.iter().filter(|&&r| r == feature).count()
    }

    /// Positions carrying `feature`, ascending.
    pub fn positions_of(&self, feature: usize) -> Vec<usize> {
        self.token_roles
            .iter()
            .enumerate()
            .filter_map(|(l, &r)| (r == feature).then_some(l))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Contiguous,
    #[default]
    Shuffled,
}

/// Majority-voting regime: the label's feature outnumbers the opposite one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MajorityVotingConfig {
    pub d: usize,
    pub seq_len: usize,
    pub alpha_r: f64,
    pub alpha_c: f64,
    pub tau: f64,
    #[serde(default)]
    pub placement: Placement,
}

impl MajorityVotingConfig {
    /// Number of class-relevant tokens, `round(alpha_r · L)`.
    pub fn relevant_count(&self) -> usize {
        (self.alpha_r * self.seq_len as f64).round() as usize
    }

    /// Number of confusion tokens, `round(alpha_c · L)`.
    pub fn confusion_count(&self) -> usize {
        (self.alpha_c * self.seq_len as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        check_common(self.d, self.seq_len, self.tau)?;
        for (name, a) in [("alpha_r", self.alpha_r), ("alpha_c", self.alpha_c)] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {a}")));
            }
        }
        let (r, c) = (self.relevant_count(), self.confusion_count());
        if c < 1 {
            return Err(Error::InvalidConfig(format!(
                "confusion_count >= 1 violated: round(alpha_c * L) = {c}"
            )));
        }
        if r <= c {
            return Err(Error::InvalidConfig(format!(
                "relevant_count > confusion_count violated: round(alpha_r * L) = {r}, round(alpha_c * L) = {c}"
            )));
        }
        if r + c > self.seq_len {
            return Err(Error::InvalidConfig(format!(
                "relevant_count + confusion_count <= L violated: {r} + {c} > {}",
                self.seq_len
            )));
        }
        Ok(())
    }
}

/// Locality-structured regime: the label's two tokens sit `delta_near`
/// apart, the opposite class's two tokens sit `delta_far` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalityConfig {
    pub d: usize,
    pub seq_len: usize,
    pub tau: f64,
    pub delta_near: usize,
    #[serde(default = "default_delta_far")]
    pub delta_far: usize,
}

fn default_delta_far() -> usize {
    10
}

impl LocalityConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.d, self.seq_len, self.tau)?;
        if self.delta_near < 1 {
            return Err(Error::InvalidConfig("delta_near >= 1 violated".into()));
        }
        if self.delta_near >= self.delta_far {
            return Err(Error::InvalidConfig(format!(
                "delta_near < delta_far violated: {} >= {}",
                self.delta_near, self.delta_far
            )));
        }
        if self.delta_far + 1 > self.seq_len {
            return Err(Error::InvalidConfig(format!(
                "delta_far + 1 <= L violated: {} + 1 > {}",
                self.delta_far, self.seq_len
            )));
        }
        if self.placements().is_empty() {
            return Err(Error::InvalidConfig(format!(
                "no collision-free placement of pairs separated by {} and {} in L = {}",
                self.delta_near, self.delta_far, self.seq_len
            )));
        }
        Ok(())
    }

    /// All `(p, q)` such that positions `p, p+delta_near, q, q+delta_far`
    /// are distinct and inside the sequence.
    pub fn placements(&self) -> Vec<(usize, usize)> {
        let l = self.seq_len;
        if self.delta_near >= l || self.delta_far >= l {
            return Vec::new();
        }
        let mut out = Vec::new();
        for p in 0..l - self.delta_near {
            let near = [p, p + self.delta_near];
            for q in 0..l - self.delta_far {
                let far = [q, q + self.delta_far];
                if near.iter().all(|a| !far.contains(a)) {
                    out.push((p, q));
                }
            }
        }
        out
    }
}

fn check_common(d: usize, seq_len: usize, tau: f64) -> Result<()> {
    if d < 3 {
        return Err(Error::InvalidConfig(format!("d >= 3 violated: d = {d}")));
    }
    if seq_len < 1 {
        return Err(Error::InvalidConfig("seq_len >= 1 violated".into()));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig(format!("tau >= 0 violated: tau = {tau}")));
    }
    Ok(())
}

/// Regime-tagged data configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum RegimeConfig {
    Majority(MajorityVotingConfig),
    Locality(LocalityConfig),
}

impl RegimeConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            RegimeConfig::Majority(c) => c.validate(),
            RegimeConfig::Locality(c) => c.validate(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            RegimeConfig::Majority(c) => c.d,
            RegimeConfig::Locality(c) => c.d,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            RegimeConfig::Majority(c) => c.seq_len,
            RegimeConfig::Locality(c) => c.seq_len,
        }
    }

    pub fn tau(&self) -> f64 {
        match self {
            RegimeConfig::Majority(c) => c.tau,
            RegimeConfig::Locality(c) => c.tau,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegimeConfig::Majority(_) => "majority",
            RegimeConfig::Locality(_) => "locality",
        }
    }

    pub fn gen_sample<R: Rng + ?Sized>(&self, z: Label, basis: &FeatureBasis, rng: &mut R) -> Result<Sample> {
        match self {
            RegimeConfig::Majority(c) => gen_majority_sample(c, z, basis, rng),
            RegimeConfig::Locality(c) => gen_locality_sample(c, z, basis, rng),
        }
    }
}

fn check_basis(d: usize, basis: &FeatureBasis) -> Result<()> {
    if basis.dim() != d {
        return Err(Error::Shape(format!("config d = {d} but basis has dimension {}", basis.dim())));
    }
    Ok(())
}

fn random_irrelevant<R: Rng + ?Sized>(d: usize, rng: &mut R) -> usize {
    rng.random_range(FIRST_IRRELEVANT..d)
}

fn realize<R: Rng + ?Sized>(
    roles: Vec<usize>,
    z: Label,
    tau: f64,
    basis: &FeatureBasis,
    rng: &mut R,
) -> Result<Sample> {
    let tokens = roles
        .iter()
        .map(|&r| noisy_token(basis, r, tau, rng))
        .collect::<Result<Vec<_>>>()?;
    Sample::new(tokens, z, roles)
}

/// Draws one majority-voting sample with label `z`.
pub fn gen_majority_sample<R: Rng + ?Sized>(
    cfg: &MajorityVotingConfig,
    z: Label,
    basis: &FeatureBasis,
    rng: &mut R,
) -> Result<Sample> {
    cfg.validate()?;
    check_basis(cfg.d, basis)?;
    let (n_rel, n_conf) = (cfg.relevant_count(), cfg.confusion_count());
    let mut roles = Vec::with_capacity(cfg.seq_len);
    roles.extend(std::iter::repeat_n(z.relevant_feature(), n_rel));
    roles.extend(std::iter::repeat_n(z.confusion_feature(), n_conf));
    for _ in n_rel + n_conf..cfg.seq_len {
        roles.push(random_irrelevant(cfg.d, rng));
    }
    if cfg.placement == Placement::Shuffled {
        roles.shuffle(rng);
    }
    realize(roles, z, cfg.tau, basis, rng)
}

/// Draws one locality-structured sample with label `z`.
pub fn gen_locality_sample<R: Rng + ?Sized>(
    cfg: &LocalityConfig,
    z: Label,
    basis: &FeatureBasis,
    rng: &mut R,
) -> Result<Sample> {
    cfg.validate()?;
    check_basis(cfg.d, basis)?;
    let placements = cfg.placements();
    let (p, q) = placements[rng.random_range(0..placements.len())];
    let mut roles: Vec<usize> = (0..cfg.seq_len).map(|_| random_irrelevant(cfg.d, rng)).collect();
    roles[p] = z.relevant_feature();
    roles[p + cfg.delta_near] = z.relevant_feature();
    roles[q] = z.confusion_feature();
    roles[q + cfg.delta_far] = z.confusion_feature();
    realize(roles, z, cfg.tau, basis, rng)
}

/// A balanced labeled dataset together with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub config: RegimeConfig,
    pub basis: BasisKind,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.label == Label::Positive).count();
        (pos, self.samples.len() - pos)
    }

    /// Dataset with `o_+ ↔ o_-` relabeled: every label flips and roles
    /// 0 and 1 swap. Tokens are rebuilt from `basis` by exchanging the
    /// coordinates along the two class features.
    pub fn swap_classes(&self, basis: &FeatureBasis) -> Dataset {
        let (op, on) = (basis.positive(), basis.negative());
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let tokens: Vec<Vec<f64>> = (0..s.seq_len())
                    .map(|l| {
                        let x = s.token(l);
                        let a = crate::linalg::dot(x, op);
                        let b = crate::linalg::dot(x, on);
                        x.iter()
                            .zip(op.iter().zip(on))
                            .map(|(xi, (pi, ni))| xi + (b - a) * pi + (a - b) * ni)
                            .collect()
                    })
                    .collect();
                let roles = s
                    .token_roles
                    .iter()
                    .map(|&r| match r {
                        POSITIVE => NEGATIVE,
                        NEGATIVE => POSITIVE,
                        other => other,
                    })
                    .collect();
                let label = match s.label {
                    Label::Positive => Label::Negative,
                    Label::Negative => Label::Positive,
                };
                Sample { tokens: Matrix::from_rows(&tokens).expect("same shape"), label, token_roles: roles }
            })
            .collect();
        Dataset { samples, config: self.config.clone(), basis: self.basis, seed: self.seed }
    }

    /// Checks every sample and dataset invariant.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (d, l) = (self.config.dim(), self.config.seq_len());
        let n = self.samples.len();
        if n < 2 {
            return Err(Error::InvalidSize(format!("dataset needs N >= 2, got {n}")));
        }
        let (pos, neg) = self.label_counts();
        if pos != n.div_ceil(2) || neg != n / 2 {
            return Err(Error::InvalidConfig(format!(
                "exact label balance violated: {pos} positive, {neg} negative for N = {n}"
            )));
        }
        let basis = self.basis.build(d)?;
        for (idx, s) in self.samples.iter().enumerate() {
            if s.dim() != d || s.seq_len() != l {
                return Err(Error::Shape(format!(
                    "sample {idx}: expected {d}x{l} tokens, got {}x{}",
                    s.dim(),
                    s.seq_len()
                )));
            }
            check_roles(&self.config, s).map_err(|e| Error::InvalidConfig(format!("sample {idx}: {e}")))?;
            if self.config.tau() == 0.0 {
                if let Some(b) = &basis {
                    for (pos, &r) in s.token_roles.iter().enumerate() {
                        if s.token(pos) != b.vector(r) {
                            return Err(Error::InvalidConfig(format!(
                                "sample {idx}: token {pos} differs from its noiseless feature"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DatasetDoc {
            config: self.config.clone(),
            basis: self.basis,
            seed: self.seed,
            samples: self
                .samples
                .iter()
                .map(|s| SampleDoc {
                    label: s.label,
                    roles: s.token_roles.clone(),
                    tokens: s.tokens.transpose().into_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DatasetDoc = serde_json::from_str(text)?;
        let (d, l) = (doc.config.dim(), doc.config.seq_len());
        let samples = doc
            .samples
            .into_iter()
            .enumerate()
            .map(|(idx, s)| {
                let x = Matrix::from_vec(d, l, s.tokens).ok_or_else(|| {
                    Error::Shape(format!("sample {idx}: token array must have d*L = {} entries", d * l))
                })?;
                let t = x.transpose();
                let rows: Vec<Vec<f64>> = (0..l).map(|i| t.row(i).to_vec()).collect();
                Sample::new(rows, s.label, s.roles)
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset { samples, config: doc.config, basis: doc.basis, seed: doc.seed };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_roles(cfg: &RegimeConfig, s: &Sample) -> std::result::Result<(), String> {
    let z = s.label;
    let rel = s.count_role(z.relevant_feature());
    let conf = s.count_role(z.confusion_feature());
    match cfg {
        RegimeConfig::Majority(c) => {
            if rel != c.relevant_count() || conf != c.confusion_count() {
                return Err(format!(
                    "role counts ({rel}, {conf}) differ from config ({}, {})",
                    c.relevant_count(),
                    c.confusion_count()
                ));
            }
        }
        RegimeConfig::Locality(c) => {
            let near = s.positions_of(z.relevant_feature());
            let far = s.positions_of(z.confusion_feature());
            if near.len() != 2 || far.len() != 2 {
                return Err("locality samples need exactly two tokens of each class feature".into());
            }
            if near[1] - near[0] != c.delta_near || far[1] - far[0] != c.delta_far {
                return Err("locality separations differ from config".into());
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    config: RegimeConfig,
    basis: BasisKind,
    seed: u64,
    samples: Vec<SampleDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleDoc {
    label: Label,
    roles: Vec<usize>,
    /// `d × L`, row-major.
    tokens: Vec<f64>,
}

/// Generates `n` samples with exactly `⌈n/2⌉` positive labels. Labels
/// alternate starting with positive; the stream is seeded by `seed`.
pub fn gen_balanced_dataset(config: &RegimeConfig, n: usize, basis: &FeatureBasis, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("dataset needs N >= 2, got {n}")));
    }
    config.validate()?;
    check_basis(config.dim(), basis)?;
    let mut stream = rng::stream(seed, 0);
    let samples = (0..n)
        .map(|i| {
            let z = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            config.gen_sample(z, basis, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples, config: config.clone(), basis: basis.kind(), seed })
}
