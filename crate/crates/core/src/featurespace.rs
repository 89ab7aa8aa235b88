//! Orthonormal feature dictionary and noisy token realizations.
//!
//! Feature indices are zero-based: index 0 is the class-positive feature
//! `o_+`, index 1 the class-negative feature `o_-`, and indices `2..d` are
//! class-irrelevant.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::rng;

pub const POSITIVE: usize = 0;
pub const NEGATIVE: usize = 1;
pub const FIRST_IRRELEVANT: usize = 2;

/// Orthonormality tolerance for every basis produced here.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

const MAX_RETRIES: u32 = 8;
const PIVOT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    ClassPositive,
    ClassNegative,
    Irrelevant,
}

impl FeatureRole {
    pub fn of_index(index: usize) -> Self {
        match index {
            POSITIVE => FeatureRole::ClassPositive,
            NEGATIVE => FeatureRole::ClassNegative,
            _ => FeatureRole::Irrelevant,
        }
    }
}

/// How a basis was constructed; enough to rebuild it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    Canonical,
    Rotated { seed: u64 },
    Custom,
}

impl BasisKind {
    /// Rebuilds the basis for dimension `d`. `Custom` bases cannot be rebuilt.
    pub fn build(self, d: usize) -> Result<Option<FeatureBasis>> {
        match self {
            BasisKind::Canonical => build_canonical_basis(d).map(Some),
            BasisKind::Rotated { seed } => build_rotated_basis(d, seed).map(Some),
            BasisKind::Custom => Ok(None),
        }
    }
}

/// `d` orthonormal directions in `R^d` with role tags.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBasis {
    kind: BasisKind,
    vectors: Vec<Vec<f64>>,
}

impl FeatureBasis {
    /// Wraps externally supplied vectors after checking orthonormality.
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let d = vectors.len();
        if d < 3 {
            return Err(Error::InvalidDimension(format!("basis needs d >= 3, got {d}")));
        }
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::Shape("basis vectors must have length d".into()));
        }
        let basis = Self { kind: BasisKind::Custom, vectors };
        let err = basis.orthonormality_error();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidConfig(format!(
                "basis is not orthonormal (max Gram deviation {err:e})"
            )));
        }
        Ok(basis)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn role(&self, index: usize) -> FeatureRole {
        FeatureRole::of_index(index)
    }

    pub fn positive(&self) -> &[f64] {
        &self.vectors[POSITIVE]
    }

    pub fn negative(&self) -> &[f64] {
        &self.vectors[NEGATIVE]
    }

    pub fn irrelevant_indices(&self) -> std::ops::Range<usize> {
        FIRST_IRRELEVANT..self.dim()
    }

    /// `max_{i,j} |<o_i, o_j> - δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(&self.vectors[i], &self.vectors[j]) - target).abs());
            }
        }
        worst
    }

    /// Inner products of `x` with every basis vector.
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|o| dot(o, x)).collect()
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.dim() {
            return Err(Error::InvalidFeature { index, dim: self.dim() });
        }
        Ok(())
    }
}

/// Standard coordinate basis of `R^d`.
pub fn build_canonical_basis(d: usize) -> Result<FeatureBasis> {
    if d < 3 {
        return Err(Error::InvalidDimension(format!(
            "need o_+, o_- and at least one irrelevant direction (d >= 3), got {d}"
        )));
    }
    let vectors = (0..d)
        .map(|i| {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            v
        })
        .collect();
    Ok(FeatureBasis { kind: BasisKind::Canonical, vectors })
}

/// Orthonormalizes a seeded Gaussian matrix with modified Gram–Schmidt plus
/// one re-orthogonalization pass.
pub fn build_rotated_basis(d: usize, seed: u64) -> Result<FeatureBasis> {
    if d < 3 {
        return Err(Error::InvalidDimension(format!(
            "need o_+, o_- and at least one irrelevant direction (d >= 3), got {d}"
        )));
    }
    for attempt in 0..=MAX_RETRIES {
        let mut rng = rng::stream(seed, rng::labels::BASIS + ((attempt as u64) << 32));
        let raw: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        if let Some(vectors) = gram_schmidt(raw) {
            let basis = FeatureBasis { kind: BasisKind::Rotated { seed }, vectors };
            if basis.orthonormality_error() <= ORTHONORMAL_TOL {
                return Ok(basis);
            }
        }
    }
    Err(Error::Degenerate { retries: MAX_RETRIES })
}

fn gram_schmidt(mut vs: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    for k in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(k);
        let v = &mut rest[0];
        let original = norm(v);
        for _pass in 0..2 {
            for q in done.iter() {
                let c = dot(q, v);
                axpy(-c, q, v);
            }
        }
        let n = norm(v);
        if !(n > PIVOT_FLOOR * original.max(1.0)) {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= n);
    }
    Some(vs)
}

/// `o_index + ξ` with `ξ ~ N(0, tau² I)`. No renormalization.
pub fn noisy_token<R: Rng + ?Sized>(
    basis: &FeatureBasis,
    feature_index: usize,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    basis.check_index(feature_index)?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!("tau must be a finite nonnegative number, got {tau}")));
    }
    let mut x = basis.vector(feature_index).to_vec();
    if tau > 0.0 {
        for xi in x.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *xi += tau * n;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_d3() {
        let b = build_canonical_basis(3).unwrap();
        assert_eq!(b.vector(0), &[1.0, 0.0, 0.0]);
        assert_eq!(b.vector(1), &[0.0, 1.0, 0.0]);
        assert_eq!(b.vector(2), &[0.0, 0.0, 1.0]);
        assert_eq!(b.role(0), FeatureRole::ClassPositive);
        assert_eq!(b.role(1), FeatureRole::ClassNegative);
        assert_eq!(b.role(2), FeatureRole::Irrelevant);
        assert_eq!(b.orthonormality_error(), 0.0);
    }

    #[test]
    fn canonical_d32() {
        let b = build_canonical_basis(32).unwrap();
        assert_eq!(b.dim(), 32);
        assert!(b.vectors().iter().all(|v| norm(v) == 1.0));
        assert_eq!(b.irrelevant_indices().len(), 30);
    }

    #[test]
    fn dimension_below_three_is_rejected() {
        assert!(matches!(build_canonical_basis(2), Err(Error::InvalidDimension(_))));
        assert!(matches!(build_rotated_basis(2, 0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn rotated_is_deterministic_and_orthonormal() {
        let a = build_rotated_basis(8, 1).unwrap();
        let b = build_rotated_basis(8, 1).unwrap();
        assert_eq!(a, b);
        // Gram matrix computed directly.
        for i in 0..8 {
            for j in 0..8 {
                let g: f64 = (0..8).map(|k| a.vector(i)[k] * a.vector(j)[k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g - target).abs() <= 1e-10, "G[{i}][{j}] = {g}");
            }
        }
    }

    #[test]
    fn rotated_seeds_differ() {
        let a = build_rotated_basis(8, 1).unwrap();
        let b = build_rotated_basis(8, 2).unwrap();
        assert_ne!(a.vector(0), b.vector(0));
    }

    #[test]
    fn zero_noise_token_is_exact() {
        let b = build_canonical_basis(5).unwrap();
        let mut r = rng::stream(3, 0);
        assert_eq!(noisy_token(&b, POSITIVE, 0.0, &mut r).unwrap(), b.positive());
    }

    #[test]
    fn noisy_token_is_reproducible_and_small() {
        let b = build_canonical_basis(32).unwrap();
        let x1 = noisy_token(&b, 2, 0.01, &mut rng::stream(9, 0)).unwrap();
        let x2 = noisy_token(&b, 2, 0.01, &mut rng::stream(9, 0)).unwrap();
        assert_eq!(x1, x2);
        let dev: Vec<f64> = x1.iter().zip(b.vector(2)).map(|(a, o)| a - o).collect();
        assert!(norm(&dev) < 0.01 * 32f64.sqrt() * 2.0);
    }

    #[test]
    fn noise_norm_matches_tau_sqrt_d() {
        // E||ξ|| ≈ tau·sqrt(d) for large d; Monte-Carlo estimate.
        let b = build_canonical_basis(32).unwrap();
        let tau = 0.01;
        let mut r = rng::stream(11, 0);
        let trials = 4000;
        let mean: f64 = (0..trials)
            .map(|_| {
                let x = noisy_token(&b, 3, tau, &mut r).unwrap();
                let dev: Vec<f64> = x.iter().zip(b.vector(3)).map(|(a, o)| a - o).collect();
                norm(&dev)
            })
            .sum::<f64>()
            / trials as f64;
        let expected = tau * 32f64.sqrt();
        assert!((mean - expected).abs() / expected < 0.02, "mean {mean} vs {expected}");
    }

    #[test]
    fn out_of_range_feature() {
        let b = build_canonical_basis(4).unwrap();
        let err = noisy_token(&b, 4, 0.0, &mut rng::stream(0, 0)).unwrap_err();
        assert_eq!(err, Error::InvalidFeature { index: 4, dim: 4 });
    }

    #[test]
    fn from_vectors_checks_orthonormality() {
        let bad = vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert!(FeatureBasis::from_vectors(bad).is_err());
    }
}
