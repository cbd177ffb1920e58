//! Candidate correspondences and their probabilistic weights.
//!
//! For every source point we keep several nearby target points instead of
//! a single closest one, and let a weight say how much each candidate is
//! trusted. Two weightings are available: a Gaussian kernel on the
//! residual, and a heavier-tailed variant derived from a t-distribution
//! that tolerates wrong associations much better.

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::neighbor_search::SpatialIndex;

/// Ambient dimension; the t-distribution weight formula uses it explicitly.
const DIMENSION: f64 = 3.0;

/// How candidate residuals are turned into weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightModel {
    /// `exp(-r²/2)` per candidate, normalized over each source point's list.
    Gaussian,
    /// t-distribution membership probabilities with `nu` degrees of
    /// freedom, each scaled by the precision factor `(nu+3)/(nu+r²)`.
    /// Small `nu` keeps far-away candidates from dominating; as
    /// `nu -> inf` this approaches the Gaussian model.
    TDistribution { nu: f64 },
}

impl Default for WeightModel {
    fn default() -> Self {
        WeightModel::TDistribution { nu: 5.0 }
    }
}

impl WeightModel {
    pub fn validate(&self) -> Result<()> {
        if let WeightModel::TDistribution { nu } = self {
            if !(nu.is_finite() && *nu > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "degrees of freedom must be positive, got {nu}"
                )));
            }
        }
        Ok(())
    }

    /// Weights for one source point's candidates given their current
    /// squared residuals.
    pub fn weights(&self, squared_residuals: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.weights_into(squared_residuals, &mut out);
        out
    }

    /// In-place variant for the solver's hot loop.
    pub(crate) fn weights_into(&self, squared_residuals: &[f64], out: &mut Vec<f64>) {
        match self {
            WeightModel::Gaussian => gaussian_weights_into(squared_residuals, out),
            WeightModel::TDistribution { nu } => t_weights_into(squared_residuals, *nu, out),
        }
    }
}

/// Normalized Gaussian weights `exp(-r²/2) / Σ exp(-r²/2)`.
///
/// The smallest residual is subtracted before exponentiating: before the
/// clouds are anywhere near each other the raw exponentials all underflow
/// to zero, while the shifted ones always keep the best candidate at 1.
/// The shift cancels in the normalization, so the result is unchanged.
pub fn gaussian_weights(squared_residuals: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    gaussian_weights_into(squared_residuals, &mut out);
    out
}

fn gaussian_weights_into(squared_residuals: &[f64], out: &mut Vec<f64>) {
    assert!(!squared_residuals.is_empty(), "empty residual list");
    let shift = squared_residuals.iter().cloned().fold(f64::INFINITY, f64::min);
    out.clear();
    out.extend(
        squared_residuals
            .iter()
            .map(|r2| (-(r2 - shift) / 2.0).exp()),
    );
    let sum: f64 = out.iter().sum();
    for w in out.iter_mut() {
        *w /= sum;
    }
}

/// t-distribution membership probabilities and weights.
///
/// Returns `(p, w)`: `p` are the normalized membership probabilities
/// `(1 + r²/nu)^(-(nu+3)/2) / Σ(...)`, and `w_k = p_k * (nu+3)/(nu+r²_k)`
/// adds the per-candidate precision factor. Only `p` is normalized; the
/// precision factor deliberately shrinks the total weight of a source
/// point whose candidates are all far away.
pub fn t_weights(squared_residuals: &[f64], nu: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = Vec::new();
    fill_t_probabilities(squared_residuals, nu, &mut p);
    let w = p
        .iter()
        .zip(squared_residuals)
        .map(|(pk, r2)| pk * ((nu + DIMENSION) / (nu + r2)))
        .collect();
    (p, w)
}

fn t_weights_into(squared_residuals: &[f64], nu: f64, out: &mut Vec<f64>) {
    fill_t_probabilities(squared_residuals, nu, out);
    for (w, r2) in out.iter_mut().zip(squared_residuals) {
        *w *= (nu + DIMENSION) / (nu + r2);
    }
}

/// Membership probabilities in log space: `log p̃ = -(nu+3)/2 · ln(1 + r²/nu)`
/// shifted by the maximum before exponentiating, then normalized. ln_1p
/// keeps precision for tiny residuals, the shift prevents underflow for
/// huge ones.
fn fill_t_probabilities(squared_residuals: &[f64], nu: f64, out: &mut Vec<f64>) {
    assert!(!squared_residuals.is_empty(), "empty residual list");
    assert!(nu > 0.0, "degrees of freedom must be positive");
    let exponent = -(nu + DIMENSION) / 2.0;
    out.clear();
    out.extend(
        squared_residuals
            .iter()
            .map(|r2| exponent * (r2 / nu).ln_1p()),
    );
    let shift = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for l in out.iter_mut() {
        *l = (*l - shift).exp();
    }
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
}

/// One weighted candidate correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedCandidate {
    pub target: usize,
    pub squared_residual: f64,
    pub weight: f64,
}

/// Per-source-point candidate lists with weights; the latent assignment
/// state of one outer iteration. Source points that found no neighbor
/// within the radius carry an empty list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssociationSet {
    pub lists: Vec<Vec<WeightedCandidate>>,
}

impl AssociationSet {
    /// Attach weights to raw `(target_index, squared_distance)` lists.
    pub fn from_raw(raw: &[Vec<(usize, f64)>], model: &WeightModel) -> Self {
        let mut scratch = Vec::new();
        let lists = raw
            .iter()
            .map(|list| {
                if list.is_empty() {
                    return Vec::new();
                }
                scratch.clear();
                scratch.extend(list.iter().map(|&(_, d2)| d2));
                let weights = model.weights(&scratch);
                list.iter()
                    .zip(weights)
                    .map(|(&(target, squared_residual), weight)| WeightedCandidate {
                        target,
                        squared_residual,
                        weight,
                    })
                    .collect()
            })
            .collect();
        AssociationSet { lists }
    }
}

/// Raw candidate lists for every source point under the current pose:
/// the k nearest target points within `max_dist` of each moved source
/// point. Fails only when *no* source point found any neighbor.
pub fn associate(
    source: &PointCloud,
    index: &SpatialIndex,
    current: &RigidTransform,
    k: usize,
    max_dist: f64,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let moved = current.apply_cloud(source);
    associate_moved(&moved, index, k, max_dist)
}

/// Same as [`associate`] but for an already-moved source cloud, so the
/// outer loop can reuse the materialized points.
pub(crate) fn associate_moved(
    moved: &PointCloud,
    index: &SpatialIndex,
    k: usize,
    max_dist: f64,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let lists: Vec<Vec<(usize, f64)>> = moved
        .iter()
        .map(|p| index.k_nearest_within(p, k, max_dist))
        .collect();
    if lists.iter().all(|l| l.is_empty()) {
        return Err(Error::NoOverlap);
    }
    Ok(lists)
}
