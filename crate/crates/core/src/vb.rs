//! Variational Bayes for a Gaussian mixture under a hidden Potts prior.
//!
//! The posterior factorizes as `q(Y) q(π, μ, Λ)`. The E-step computes
//!
//! ```text
//! log r_ik = E[log π_k] + E[log N(x_i | μ_k, Λ_k⁻¹)] + β_k Σ_{j∈δ_i} ρ_jk
//! ```
//!
//! substituting the previous responsibilities of the neighbours for their
//! latent labels (a synchronous mean-field sweep), then normalizes per voxel.
//! The M-step applies the conjugate Dirichlet / Normal-Wishart updates to the
//! responsibility-weighted sufficient statistics. Observed voxels are clamped
//! to their one-hot label for the entire run.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{argmax_labels, neighbor_class_counts, ImageGrid, LabelField, ResponsibilityField};
use crate::linalg::SquareMatrix;
use crate::math;
use crate::potts::SmoothnessParams;
use crate::special;

/// Dirichlet and Normal-Wishart hyperparameters of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHyperparams {
    /// Dirichlet concentration α.
    pub concentration: f64,
    /// Hypermean υ.
    pub mean: Vec<f64>,
    /// Precision scaling γ of the mean.
    pub precision_scale: f64,
    /// Wishart degrees of freedom ν.
    pub dof: f64,
    /// Wishart scale (hyperprecision) Δ.
    pub scale: SquareMatrix,
}

impl ClassHyperparams {
    fn validate(&self, k: usize, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.scale.dim() != dim {
            return Err(invalid!("class {k}: hyperparameters are not {dim}-dimensional"));
        }
        if !(self.concentration > 0.0) || !self.concentration.is_finite() {
            return Err(Error::Domain(format!("class {k}: concentration {} must be > 0", self.concentration)));
        }
        if !(self.precision_scale > 0.0) || !self.precision_scale.is_finite() {
            return Err(Error::Domain(format!(
                "class {k}: precision scaling {} must be > 0",
                self.precision_scale
            )));
        }
        if !(self.dof > dim as f64 - 1.0) || !self.dof.is_finite() {
            return Err(Error::Domain(format!(
                "class {k}: degrees of freedom {} must exceed {}",
                self.dof,
                dim as f64 - 1.0
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("class {k}: hypermean")));
        }
        self.scale
            .cholesky()
            .map_err(|e| Error::NotPositiveDefinite(format!("class {k} scale: {e}")))?;
        Ok(())
    }
}

fn validate_classes(classes: &[ClassHyperparams]) -> Result<usize> {
    let first = classes.first().ok_or_else(|| invalid!("hyperparameters need at least one class"))?;
    let dim = first.mean.len();
    if dim == 0 {
        return Err(invalid!("hyperparameters need at least one dimension"));
    }
    for (k, c) in classes.iter().enumerate() {
        c.validate(k, dim)?;
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorHyperparams {
    classes: Vec<ClassHyperparams>,
    dim: usize,
}

impl PriorHyperparams {
    pub fn new(classes: Vec<ClassHyperparams>) -> Result<Self> {
        let dim = validate_classes(&classes)?;
        Ok(Self { classes, dim })
    }

    /// Weak data-anchored defaults: α₀ = 1, γ₀ = 1, ν₀ = D + 1,
    /// Δ₀ = I / var(image), and υ₀ at the `(k + ½)/K` quantiles of each channel.
    pub fn weak_default(image: &ImageGrid, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(invalid!("need at least one class"));
        }
        let d = image.channels();
        let n = image.len();
        let mut anchors = vec![vec![0.0; d]; classes];
        let mut mean_var = 0.0;
        let mut column = Vec::with_capacity(n);
        for c in 0..d {
            column.clear();
            column.extend(image.voxels().map(|v| v[c]));
            let mean = column.iter().sum::<f64>() / n as f64;
            mean_var += column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            column.sort_unstable_by(f64::total_cmp);
            for (k, anchor) in anchors.iter_mut().enumerate() {
                let level = (k as f64 + 0.5) / classes as f64;
                let idx = ((level * n as f64) as usize).min(n - 1);
                anchor[c] = column[idx];
            }
        }
        let var = (mean_var / d as f64).max(1e-6);
        let params = anchors
            .into_iter()
            .map(|mean| ClassHyperparams {
                concentration: 1.0,
                mean,
                precision_scale: 1.0,
                dof: d as f64 + 1.0,
                scale: SquareMatrix::scaled_identity(d, 1.0 / var),
            })
            .collect();
        Self::new(params)
    }

    #[inline]
    pub fn classes(&self) -> &[ClassHyperparams] {
        &self.classes
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorHyperparams {
    classes: Vec<ClassHyperparams>,
    dim: usize,
}

impl PosteriorHyperparams {
    pub fn new(classes: Vec<ClassHyperparams>) -> Result<Self> {
        let dim = validate_classes(&classes)?;
        Ok(Self { classes, dim })
    }

    pub fn from_prior(prior: &PriorHyperparams) -> Self {
        Self { classes: prior.classes.clone(), dim: prior.dim }
    }

    #[inline]
    pub fn classes(&self) -> &[ClassHyperparams] {
        &self.classes
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Posterior hypermeans υ_k.
    pub fn means(&self) -> impl Iterator<Item = &[f64]> {
        self.classes.iter().map(|c| c.mean.as_slice())
    }
}

/// Responsibility-weighted statistics `S⁰_k, S¹_k, S²_k` per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Effective counts `S⁰_k = Σ_i ρ_ik`.
    pub counts: Vec<f64>,
    /// Weighted sums `S¹_k = Σ_i ρ_ik x_i`.
    pub sums: Vec<Vec<f64>>,
    /// Weighted scatter `S²_k = Σ_i ρ_ik (x_i − x̄_k)(x_i − x̄_k)ᵀ` about
    /// `x̄_k = S¹_k / S⁰_k`.
    pub scatters: Vec<SquareMatrix>,
}

impl SufficientStats {
    /// Weighted mean `x̄_k`, or `None` for an empty class.
    pub fn mean(&self, k: usize) -> Option<Vec<f64>> {
        let n = self.counts[k];
        (n > 0.0).then(|| self.sums[k].iter().map(|s| s / n).collect())
    }
}

/// Observed voxel labels whose responsibilities stay one-hot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClampSet {
    entries: BTreeMap<usize, usize>,
}

impl ClampSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a clamp set from `(voxel, class)` pairs. A voxel may appear more
    /// than once only with the same class.
    pub fn new<I>(pairs: I, classes: usize, voxels: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut entries = BTreeMap::new();
        for (i, k) in pairs {
            if i >= voxels {
                return Err(invalid!("clamped voxel {i} outside grid of {voxels} voxels"));
            }
            if k >= classes {
                return Err(invalid!("clamped class {k} at voxel {i} is not below K = {classes}"));
            }
            if let Some(prev) = entries.insert(i, k) {
                if prev != k {
                    return Err(invalid!("voxel {i} clamped to both class {prev} and class {k}"));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, voxel: usize) -> Option<usize> {
        self.entries.get(&voxel).copied()
    }

    /// `(voxel, class)` pairs in voxel order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().map(|(&i, &k)| (i, k))
    }

    /// Overwrites clamped rows with their one-hot vectors.
    pub fn apply(&self, resp: &mut ResponsibilityField) {
        for (i, k) in self.iter() {
            resp.set_one_hot(i, k);
        }
    }

    /// True when every clamped row of `resp` is exactly one-hot.
    pub fn holds_in(&self, resp: &ResponsibilityField) -> bool {
        self.iter().all(|(i, k)| {
            resp.row(i).iter().enumerate().all(|(c, &p)| if c == k { p == 1.0 } else { p == 0.0 })
        })
    }

    fn check(&self, resp: &ResponsibilityField) -> Result<()> {
        match self.entries.iter().next_back() {
            Some((&i, _)) if i >= resp.len() => Err(invalid!("clamped voxel {i} outside grid")),
            _ => match self.entries.values().find(|&&k| k >= resp.classes()) {
                Some(k) => Err(invalid!("clamped class {k} is not below K = {}", resp.classes())),
                None => Ok(()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbConfig {
    pub max_iter: usize,
    /// Convergence threshold on the mean absolute responsibility change.
    pub tol: f64,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self { max_iter: 30, tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbFit {
    pub responsibilities: ResponsibilityField,
    pub posterior: PosteriorHyperparams,
    /// Mean absolute responsibility change after each iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl VbFit {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn segmentation(&self) -> LabelField {
        segment(&self.responsibilities)
    }
}

/// Per-class constants of the E-step logit.
struct ClassTerms {
    /// E[log π] + ½ E[log|Λ|] − D/2 log 2π − D/(2γ)
    offset: f64,
    mean: Vec<f64>,
    /// ½ ν Δ
    half_precision: SquareMatrix,
}

fn class_terms(post: &PosteriorHyperparams) -> Result<Vec<ClassTerms>> {
    let alpha: Vec<f64> = post.classes.iter().map(|c| c.concentration).collect();
    let log_weights = special::expect_log_mixture_weights(&alpha)?;
    let d = post.dim as f64;
    post.classes
        .iter()
        .zip(log_weights)
        .enumerate()
        .map(|(k, (c, log_w))| {
            let log_det = special::expect_log_det_precision(c.dof, &c.scale)
                .map_err(|e| Error::NonFinite(format!("E-step, class {k}: {e}")))?;
            let offset = log_w + 0.5 * log_det - 0.5 * d * special::ln_2pi() - 0.5 * d / c.precision_scale;
            if !offset.is_finite() {
                return Err(Error::NonFinite(format!("E-step expectations for class {k}")));
            }
            let half_precision = c.scale.scaled(0.5 * c.dof);
            Ok(ClassTerms { offset, mean: c.mean.clone(), half_precision })
        })
        .collect()
}

/// One synchronous E-step. Neighbour terms read `prev`; the result is a fresh
/// field with clamped rows set one-hot.
pub fn e_step(
    image: &ImageGrid,
    post: &PosteriorHyperparams,
    beta: &SmoothnessParams,
    prev: &ResponsibilityField,
    clamps: &ClampSet,
) -> Result<ResponsibilityField> {
    let k = post.num_classes();
    if prev.classes() != k || beta.classes() != k {
        return Err(invalid!(
            "class counts disagree: posterior {k}, responsibilities {}, beta {}",
            prev.classes(),
            beta.classes()
        ));
    }
    if prev.shape() != image.shape() {
        return Err(invalid!("responsibility field and image have different shapes"));
    }
    if image.channels() != post.dim() {
        return Err(invalid!(
            "image has {} channels but posterior is {}-dimensional",
            image.channels(),
            post.dim()
        ));
    }
    clamps.check(prev)?;

    let terms = class_terms(post)?;
    let smooth = !beta.is_zero();
    let counts = smooth.then(|| neighbor_class_counts(prev));
    let d = image.channels();
    let mut values = vec![0.0; image.len() * k];
    let mut diff = vec![0.0; d];
    for (i, (x, logits)) in image.voxels().zip(values.chunks_exact_mut(k)).enumerate() {
        for (c, (t, logit)) in terms.iter().zip(logits.iter_mut()).enumerate() {
            for ((dv, xv), mv) in diff.iter_mut().zip(x).zip(&t.mean) {
                *dv = xv - mv;
            }
            let mut v = t.offset - t.half_precision.quadratic_form(&diff);
            if let Some(counts) = &counts {
                v += beta.beta()[c] * counts.row(i)[c];
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("E-step logit for class {c} at voxel {i}")));
            }
            *logit = v;
        }
        math::softmax_in_place(logits);
    }
    let mut resp = ResponsibilityField::from_raw(image.height(), image.width(), k, values)?;
    clamps.apply(&mut resp);
    Ok(resp)
}

/// Sufficient statistics of `resp` over `image`, accumulated in row-major order.
pub fn compute_stats(image: &ImageGrid, resp: &ResponsibilityField) -> Result<SufficientStats> {
    if resp.shape() != image.shape() {
        return Err(invalid!("responsibility field and image have different shapes"));
    }
    let k = resp.classes();
    let d = image.channels();
    let mut counts = vec![0.0; k];
    let mut sums = vec![vec![0.0; d]; k];
    for (x, row) in image.voxels().zip(resp.rows()) {
        for c in 0..k {
            let p = row[c];
            counts[c] += p;
            for (s, xv) in sums[c].iter_mut().zip(x) {
                *s += p * xv;
            }
        }
    }
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            if counts[c] > 0.0 {
                sums[c].iter().map(|s| s / counts[c]).collect()
            } else {
                vec![0.0; d]
            }
        })
        .collect();
    let mut scatters = vec![SquareMatrix::zeros(d); k];
    let mut diff = vec![0.0; d];
    for (x, row) in image.voxels().zip(resp.rows()) {
        for c in 0..k {
            if row[c] == 0.0 {
                continue;
            }
            for ((dv, xv), mv) in diff.iter_mut().zip(x).zip(&means[c]) {
                *dv = xv - mv;
            }
            scatters[c].add_outer(&diff, row[c]);
        }
    }
    Ok(SufficientStats { counts, sums, scatters })
}

/// Conjugate posterior update. Empty classes keep their prior.
///
/// ```text
/// α = α₀ + S⁰    γ = γ₀ + S⁰    ν = ν₀ + S⁰
/// υ = (γ₀ υ₀ + S¹) / (γ₀ + S⁰)
/// Δ⁻¹ = Δ₀⁻¹ + S² + γ₀ S⁰ / (γ₀ + S⁰) · (x̄ − υ₀)(x̄ − υ₀)ᵀ
/// ```
pub fn m_step(priors: &PriorHyperparams, stats: &SufficientStats) -> Result<PosteriorHyperparams> {
    let k = priors.num_classes();
    if stats.counts.len() != k || stats.sums.len() != k || stats.scatters.len() != k {
        return Err(invalid!("statistics have a different class count than the priors ({k})"));
    }
    let mut classes = Vec::with_capacity(k);
    for (c, prior) in priors.classes.iter().enumerate() {
        let n = stats.counts[c];
        if !(n >= 0.0) || !n.is_finite() {
            return Err(Error::NonFinite(format!("M-step: effective count of class {c} is {n}")));
        }
        if n == 0.0 {
            classes.push(prior.clone());
            continue;
        }
        let g0 = prior.precision_scale;
        let gamma = g0 + n;
        let mean: Vec<f64> =
            prior.mean.iter().zip(&stats.sums[c]).map(|(m0, s1)| (g0 * m0 + s1) / gamma).collect();
        let xbar: Vec<f64> = stats.sums[c].iter().map(|s| s / n).collect();
        let shift: Vec<f64> = xbar.iter().zip(&prior.mean).map(|(x, m0)| x - m0).collect();
        let mut inv_scale = prior
            .scale
            .cholesky()
            .map_err(|e| Error::NotPositiveDefinite(format!("M-step, prior scale of class {c}: {e}")))?
            .inverse();
        inv_scale.add_assign(&stats.scatters[c]);
        inv_scale.add_outer(&shift, g0 * n / gamma);
        let scale = inv_scale
            .cholesky()
            .map_err(|e| Error::NotPositiveDefinite(format!("M-step, posterior scale of class {c}: {e}")))?
            .inverse();
        scale
            .cholesky()
            .map_err(|e| Error::NotPositiveDefinite(format!("M-step, posterior scale of class {c}: {e}")))?;
        classes.push(ClassHyperparams {
            concentration: prior.concentration + n,
            mean,
            precision_scale: gamma,
            dof: prior.dof + n,
            scale,
        });
    }
    Ok(PosteriorHyperparams { classes, dim: priors.dim })
}

/// State handed to a [`fit_observed`] observer after every E-step.
#[derive(Debug)]
pub struct IterationState<'a> {
    /// Zero-based iteration index.
    pub iteration: usize,
    pub responsibilities: &'a ResponsibilityField,
    pub posterior: &'a PosteriorHyperparams,
    pub change: f64,
}

/// Alternates M- and E-steps starting from `init` until the mean absolute
/// responsibility change drops below `config.tol` or `config.max_iter`
/// iterations have run.
pub fn fit(
    image: &ImageGrid,
    priors: &PriorHyperparams,
    beta: &SmoothnessParams,
    init: &ResponsibilityField,
    clamps: &ClampSet,
    config: &VbConfig,
) -> Result<VbFit> {
    fit_observed(image, priors, beta, init, clamps, config, |_| {})
}

/// [`fit`] with a callback invoked after each E-step.
pub fn fit_observed<F>(
    image: &ImageGrid,
    priors: &PriorHyperparams,
    beta: &SmoothnessParams,
    init: &ResponsibilityField,
    clamps: &ClampSet,
    config: &VbConfig,
    mut observer: F,
) -> Result<VbFit>
where
    F: FnMut(&IterationState<'_>),
{
    if config.max_iter == 0 || !(config.tol > 0.0) {
        return Err(invalid!("VB config needs max_iter >= 1 and tol > 0, got {config:?}"));
    }
    if priors.num_classes() != init.classes() {
        return Err(invalid!(
            "priors have {} classes but initial responsibilities have {}",
            priors.num_classes(),
            init.classes()
        ));
    }
    clamps.check(init)?;
    let mut resp = init.clone();
    clamps.apply(&mut resp);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut posterior = PosteriorHyperparams::from_prior(priors);
    for iteration in 0..config.max_iter {
        let stats = compute_stats(image, &resp)?;
        posterior = m_step(priors, &stats)?;
        let next = e_step(image, &posterior, beta, &resp, clamps)?;
        let change = next.mean_abs_change(&resp);
        if !change.is_finite() {
            return Err(Error::NonFinite(format!("responsibility change at iteration {iteration}")));
        }
        resp = next;
        trace.push(change);
        observer(&IterationState { iteration, responsibilities: &resp, posterior: &posterior, change });
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(VbFit { responsibilities: resp, posterior, trace, converged })
}

/// Argmax decode; ties go to the lowest class index.
pub fn segment(resp: &ResponsibilityField) -> LabelField {
    argmax_labels(resp)
}
