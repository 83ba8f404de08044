//! The local hidden Potts model.
//!
//! Each voxel is conditioned on its 4-neighbours only:
//!
//! ```text
//! log p(y_i | y_δi, β) = Σ_k β_k y_ik ȳ_ik − log Σ_k exp(β_k ȳ_ik)
//! ```
//!
//! where `ȳ_ik` counts the neighbours of class `k`. The negative sum over
//! voxels is convex in β, so the smoothness parameters of a set of source
//! segmentations are found by projected gradient ascent on the box
//! `[0, β_max]^K`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{neighbor_class_counts, LabelField};
use crate::math;

pub const DEFAULT_BETA_MAX: f64 = 10.0;

/// Smoothness used when no source segmentations are available.
pub const DEFAULT_FIXED_BETA: f64 = 0.1;

/// Per-class Potts interaction strengths, each in `[0, β_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessParams {
    beta: Vec<f64>,
    beta_max: f64,
}

impl SmoothnessParams {
    pub fn new(beta: Vec<f64>, beta_max: f64) -> Result<Self> {
        if !(beta_max > 0.0) || !beta_max.is_finite() {
            return Err(invalid!("beta_max must be positive and finite, got {beta_max}"));
        }
        if beta.is_empty() {
            return Err(invalid!("smoothness parameters need at least one class"));
        }
        if let Some((k, b)) = beta.iter().enumerate().find(|(_, &b)| !(0.0..=beta_max).contains(&b)) {
            return Err(invalid!("beta[{k}] = {b} outside [0, {beta_max}]"));
        }
        Ok(Self { beta, beta_max })
    }

    pub fn zeros(classes: usize) -> Self {
        Self { beta: vec![0.0; classes.max(1)], beta_max: DEFAULT_BETA_MAX }
    }

    /// The same β for every class, with the default cap.
    pub fn uniform(classes: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; classes], DEFAULT_BETA_MAX)
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    #[inline]
    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn is_zero(&self) -> bool {
        self.beta.iter().all(|&b| b == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaFitConfig {
    pub step_size: f64,
    pub max_iter: usize,
    /// Stop once the projected gradient norm falls below this.
    pub tol: f64,
    pub beta_max: f64,
}

impl Default for BetaFitConfig {
    fn default() -> Self {
        Self { step_size: 1e-3, max_iter: 1000, tol: 1e-6, beta_max: DEFAULT_BETA_MAX }
    }
}

impl BetaFitConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.step_size.is_finite()
            && self.max_iter > 0
            && self.tol > 0.0
            && self.beta_max > 0.0
            && self.beta_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(invalid!("beta fit configuration values must be positive: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaFit {
    pub params: SmoothnessParams,
    /// Accepted ascent steps.
    pub iterations: usize,
    /// Summed log-likelihood at the returned β.
    pub objective: f64,
    pub converged: bool,
    /// Objective at β = 0 followed by the objective after each accepted step.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PottsLogProb {
    pub per_voxel: Vec<f64>,
    pub total: f64,
}

/// Labels and neighbour counts of one segmentation, prepared once for
/// repeated likelihood evaluations.
struct PottsData {
    classes: usize,
    labels: Vec<usize>,
    counts: Vec<f64>,
}

impl PottsData {
    fn new(labels: &LabelField) -> Self {
        let counts = neighbor_class_counts(labels);
        Self {
            classes: labels.classes(),
            labels: labels.labels().to_vec(),
            counts: counts.rows().flatten().copied().collect(),
        }
    }

    fn voxels(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.labels.iter().copied().zip(self.counts.chunks_exact(self.classes))
    }

    fn log_prob_into(&self, beta: &[f64], scratch: &mut [f64], mut sink: impl FnMut(f64)) {
        for (label, ybar) in self.voxels() {
            for ((s, &b), &c) in scratch.iter_mut().zip(beta).zip(ybar) {
                *s = b * c;
            }
            sink(scratch[label] - math::log_sum_exp(scratch));
        }
    }

    fn total(&self, beta: &[f64], scratch: &mut [f64]) -> f64 {
        let mut total = 0.0;
        self.log_prob_into(beta, scratch, |v| total += v);
        total
    }

    fn add_gradient(&self, beta: &[f64], scratch: &mut [f64], grad: &mut [f64]) {
        for (label, ybar) in self.voxels() {
            for ((s, &b), &c) in scratch.iter_mut().zip(beta).zip(ybar) {
                *s = b * c;
            }
            math::softmax_in_place(scratch);
            grad[label] += ybar[label];
            for ((g, &p), &c) in grad.iter_mut().zip(scratch.iter()).zip(ybar) {
                *g -= c * p;
            }
        }
    }
}

fn check_classes(labels: &LabelField, beta: &SmoothnessParams) -> Result<()> {
    if labels.classes() != beta.classes() {
        return Err(invalid!(
            "label field has K = {} but beta has {} entries",
            labels.classes(),
            beta.classes()
        ));
    }
    Ok(())
}

/// Per-voxel local Potts log-probabilities and their sum.
pub fn potts_log_prob(labels: &LabelField, beta: &SmoothnessParams) -> Result<PottsLogProb> {
    check_classes(labels, beta)?;
    let data = PottsData::new(labels);
    let mut scratch = vec![0.0; data.classes];
    let mut per_voxel = Vec::with_capacity(labels.len());
    data.log_prob_into(beta.beta(), &mut scratch, |v| per_voxel.push(v));
    let total = per_voxel.iter().sum();
    Ok(PottsLogProb { per_voxel, total })
}

/// Gradient of the total local Potts log-likelihood with respect to β:
/// `∂/∂β_k = Σ_i [y_ik ȳ_ik − ȳ_ik exp(β_k ȳ_ik) / Σ_m exp(β_m ȳ_im)]`.
pub fn potts_gradient(labels: &LabelField, beta: &SmoothnessParams) -> Result<Vec<f64>> {
    check_classes(labels, beta)?;
    let data = PottsData::new(labels);
    let mut scratch = vec![0.0; data.classes];
    let mut grad = vec![0.0; data.classes];
    data.add_gradient(beta.beta(), &mut scratch, &mut grad);
    Ok(grad)
}

const MAX_HALVINGS: usize = 30;

/// Maximum-likelihood β over all `segmentations` (summed objective).
///
/// Projected gradient ascent from β = 0. Each step halves the step size until
/// the objective does not decrease (at most 30 halvings); a step accepted at
/// the first try doubles the step size for the next iteration.
pub fn fit_beta(segmentations: &[LabelField], config: &BetaFitConfig) -> Result<BetaFit> {
    config.validate()?;
    let first = segmentations
        .first()
        .ok_or_else(|| invalid!("fit_beta needs at least one segmentation"))?;
    let k = first.classes();
    if let Some(other) = segmentations.iter().find(|s| s.classes() != k) {
        return Err(invalid!(
            "segmentations disagree on class count: K = {k} and K = {}",
            other.classes()
        ));
    }
    let data: Vec<PottsData> = segmentations.iter().map(PottsData::new).collect();
    let mut scratch = vec![0.0; k];

    let mut objective_at = |beta: &[f64]| -> Result<f64> {
        let v: f64 = data.iter().map(|d| d.total(beta, &mut scratch)).sum();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(alloc::format!("Potts objective at beta = {beta:?}")))
        }
    };

    let cap = config.beta_max;
    let mut beta = vec![0.0; k];
    let mut objective = objective_at(&beta)?;
    let mut trace = vec![objective];
    let mut step = config.step_size;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad = vec![0.0; k];
    let mut work = vec![0.0; k];

    for _ in 0..config.max_iter {
        grad.fill(0.0);
        for d in &data {
            d.add_gradient(&beta, &mut work, &mut grad);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("Potts gradient at beta = {beta:?}")));
        }
        let projected_norm = math::sqrt(
            beta.iter()
                .zip(&grad)
                .map(|(&b, &g)| {
                    let pinned = (b <= 0.0 && g < 0.0) || (b >= cap && g > 0.0);
                    if pinned {
                        0.0
                    } else {
                        g * g
                    }
                })
                .sum(),
        );
        if projected_norm < config.tol {
            // A tiny gradient can still point at a bound (the objective of a
            // perfectly smooth class keeps rising towards the cap), so try
            // jumping there before stopping.
            let at_bound: Vec<f64> = beta
                .iter()
                .zip(&grad)
                .map(|(&b, &g)| if g > 0.0 { cap } else if g < 0.0 { 0.0 } else { b })
                .collect();
            if at_bound != beta {
                let value = objective_at(&at_bound)?;
                if value >= objective {
                    beta = at_bound;
                    objective = value;
                    trace.push(value);
                    iterations += 1;
                    continue;
                }
            }
            converged = true;
            break;
        }

        let mut accepted = None;
        for halvings in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> =
                beta.iter().zip(&grad).map(|(&b, &g)| (b + step * g).clamp(0.0, cap)).collect();
            if candidate == beta {
                break;
            }
            let value = objective_at(&candidate)?;
            if value >= objective {
                accepted = Some((candidate, value, halvings));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, value, halvings)) = accepted else {
            // no ascent direction left at working precision
            converged = true;
            break;
        };
        beta = candidate;
        objective = value;
        trace.push(value);
        iterations += 1;
        if halvings == 0 {
            step *= 2.0;
        }
    }

    Ok(BetaFit {
        params: SmoothnessParams::new(beta, cap)?,
        iterations,
        objective,
        converged,
        objective_trace: trace,
    })
}
