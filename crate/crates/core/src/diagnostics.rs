//! Alignment of the gating vector and hidden neurons with the feature
//! directions, lucky-neuron bookkeeping and CSV export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::featurespace::{FeatureBasis, FIRST_IRRELEVANT, NEGATIVE, POSITIVE};
use crate::linalg::{dot, norm};
use crate::model::ModelParams;

/// Norm below which a vector's cosine with anything is reported as 0.
pub const ZERO_NORM: f64 = 1e-12;

/// Gating-vector alignment with the basis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateAlignment {
    pub inner_plus: f64,
    pub inner_minus: f64,
    pub inner_irr_mean: f64,
    /// Largest `|⟨w_Δ, o_j⟩|` over irrelevant `j`.
    pub inner_irr_maxabs: f64,
    pub cos_plus: f64,
    pub cos_minus: f64,
    pub cos_irr_mean: f64,
    pub cos_irr_maxabs: f64,
}

/// Hidden-neuron alignment with the basis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NeuronAlignment {
    /// Per neuron: `(⟨W_O[i,·], o_+⟩, ⟨W_O[i,·], o_-⟩, ⟨W_O[i,·], o_tracked⟩)`.
    pub per_neuron: Vec<[f64; 3]>,
    /// Mean `⟨W_O[i,·], o_+⟩` over the reference `𝒲` set.
    pub lucky_mean_plus: f64,
    /// Mean `⟨W_O[i,·], o_+⟩` over `v_i > 0` neurons outside `𝒲`.
    pub unlucky_mean_plus: f64,
    /// Mean `⟨W_O[i,·], o_-⟩` over the reference `𝒰` set.
    pub lucky_mean_minus: f64,
    /// Mean `⟨W_O[i,·], o_-⟩` over `v_i < 0` neurons outside `𝒰`.
    pub unlucky_mean_minus: f64,
    /// Mean over all neurons of the projection on the tracked irrelevant feature.
    pub tracked_irr_mean: f64,
    /// Mean over all neurons and all irrelevant features.
    pub irr_mean: f64,
}

/// Lucky neurons: `𝒲 = {i : v_i > 0, W_O[i,·] o_+ > 0}` and
/// `𝒰 = {i : v_i < 0, W_O[i,·] o_- > 0}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LuckySets {
    pub w_set: Vec<usize>,
    pub u_set: Vec<usize>,
}

impl LuckySets {
    /// Fraction of the `m` neurons whose membership (in `𝒲`, in `𝒰`, or in
    /// neither) agrees between `self` and `other`.
    pub fn agreement(&self, other: &LuckySets, m: usize) -> f64 {
        let class = |s: &LuckySets, i: usize| {
            if s.w_set.contains(&i) {
                1
            } else if s.u_set.contains(&i) {
                2
            } else {
                0
            }
        };
        let same = (0..m).filter(|&i| class(self, i) == class(other, i)).count();
        same as f64 / m as f64
    }
}

/// One row of the alignment trace.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentSnapshot {
    pub iter: usize,
    pub gate: GateAlignment,
    pub neurons: NeuronAlignment,
}

fn cosine(inner: f64, vnorm: f64) -> f64 {
    if vnorm < ZERO_NORM {
        0.0
    } else {
        (inner / vnorm).clamp(-1.0, 1.0)
    }
}

/// Alignment of `w_Δ` with each feature. Basis vectors are unit norm, so
/// the cosine is `⟨w_Δ, o_k⟩ / ‖w_Δ‖`.
pub fn gating_alignment(params: &ModelParams, basis: &FeatureBasis) -> GateAlignment {
    let w = params.w_delta();
    let wn = norm(w);
    let inner = basis.coordinates(w);
    let irr = &inner[FIRST_IRRELEVANT..];
    let irr_mean = irr.iter().sum::<f64>() / irr.len() as f64;
    let irr_maxabs = irr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    GateAlignment {
        inner_plus: inner[POSITIVE],
        inner_minus: inner[NEGATIVE],
        inner_irr_mean: irr_mean,
        inner_irr_maxabs: irr_maxabs,
        cos_plus: cosine(inner[POSITIVE], wn),
        cos_minus: cosine(inner[NEGATIVE], wn),
        cos_irr_mean: irr.iter().map(|&v| cosine(v, wn)).sum::<f64>() / irr.len() as f64,
        cos_irr_maxabs: cosine(irr_maxabs, wn),
    }
}

/// Lucky sets with strict inequalities.
pub fn lucky_sets(params: &ModelParams, basis: &FeatureBasis) -> LuckySets {
    let mut sets = LuckySets::default();
    for (i, &vi) in params.v().iter().enumerate() {
        let row = params.w_o().row(i);
        if vi > 0.0 && dot(row, basis.positive()) > 0.0 {
            sets.w_set.push(i);
        } else if vi < 0.0 && dot(row, basis.negative()) > 0.0 {
            sets.u_set.push(i);
        }
    }
    sets
}

fn mean_over<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-neuron projections and group means. Group membership comes from
/// `reference` (normally the lucky sets at iteration 0).
pub fn neuron_alignment(
    params: &ModelParams,
    basis: &FeatureBasis,
    reference: &LuckySets,
    tracked_irrelevant: usize,
) -> NeuronAlignment {
    let m = params.width();
    let per_neuron: Vec<[f64; 3]> = (0..m)
        .map(|i| {
            let row = params.w_o().row(i);
            [dot(row, basis.positive()), dot(row, basis.negative()), dot(row, basis.vector(tracked_irrelevant))]
        })
        .collect();
    let v = params.v();
    let lucky_mean_plus = mean_over(reference.w_set.iter().map(|&i| per_neuron[i][0]));
    let unlucky_mean_plus =
        mean_over((0..m).filter(|i| v[*i] > 0.0 && !reference.w_set.contains(i)).map(|i| per_neuron[i][0]));
    let lucky_mean_minus = mean_over(reference.u_set.iter().map(|&i| per_neuron[i][1]));
    let unlucky_mean_minus =
        mean_over((0..m).filter(|i| v[*i] < 0.0 && !reference.u_set.contains(i)).map(|i| per_neuron[i][1]));
    let tracked_irr_mean = mean_over(per_neuron.iter().map(|p| p[2]));
    let irr_mean = mean_over(
        (0..m).flat_map(|i| basis.irrelevant_indices().map(move |j| (i, j))).map(|(i, j)| dot(params.w_o().row(i), basis.vector(j))),
    );
    NeuronAlignment {
        per_neuron,
        lucky_mean_plus,
        unlucky_mean_plus,
        lucky_mean_minus,
        unlucky_mean_minus,
        tracked_irr_mean,
        irr_mean,
    }
}

/// Full snapshot at iteration `iter`.
pub fn snapshot(params: &ModelParams, basis: &FeatureBasis, reference: &LuckySets, iter: usize) -> AlignmentSnapshot {
    AlignmentSnapshot {
        iter,
        gate: gating_alignment(params, basis),
        neurons: neuron_alignment(params, basis, reference, FIRST_IRRELEVANT),
    }
}

/// Column order of the alignment CSV.
pub const ALIGNMENT_COLUMNS: [&str; 12] = [
    "iter",
    "gate_inner_plus",
    "gate_inner_minus",
    "gate_inner_irr_mean",
    "gate_inner_irr_maxabs",
    "gate_cos_plus",
    "gate_cos_minus",
    "gate_cos_irr_mean",
    "lucky_mean_plus",
    "unlucky_mean_plus",
    "lucky_mean_minus",
    "tracked_irr_mean",
];

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one row per snapshot in [`ALIGNMENT_COLUMNS`] order.
pub fn export_traces<W: Write>(snapshots: &[AlignmentSnapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ALIGNMENT_COLUMNS)?;
    for s in snapshots {
        let g = &s.gate;
        let n = &s.neurons;
        let mut row = vec![s.iter.to_string()];
        row.extend(
            [
                g.inner_plus,
                g.inner_minus,
                g.inner_irr_mean,
                g.inner_irr_maxabs,
                g.cos_plus,
                g.cos_minus,
                g.cos_irr_mean,
                n.lucky_mean_plus,
                n.unlucky_mean_plus,
                n.lucky_mean_minus,
                n.tracked_irr_mean,
            ]
            .iter()
            .map(|&v| fmt_f64(v)),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an alignment CSV back into `(iter, values)` rows.
pub fn parse_traces(text: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != ALIGNMENT_COLUMNS {
        return Err(crate::error::Error::Parse(format!("unexpected alignment header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let iter = rec[0].parse().map_err(|e| crate::error::Error::Parse(format!("{e}")))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|e| crate::error::Error::Parse(format!("{e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((iter, vals));
    }
    Ok(rows)
}
