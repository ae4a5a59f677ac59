//! Variance, cost, efficiency and gradient models for a budget vector.

use crate::estimator::{rho, weighted_integrands, EstimatorError, WeightMode};
use crate::problem::MisProblem;
use crate::quadrature::{integrate_vec, QuadratureError, QuadratureOptions};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EfficiencyError {
    #[error("moments of technique {technique}: {source}")]
    Quadrature { technique: usize, source: QuadratureError },
    #[error(transparent)]
    Budget(#[from] EstimatorError),
    #[error(
        "finite-difference step {h} around beta_{technique} = {beta} crosses a kink at {kink}; use a smaller step"
    )]
    Kink {
        technique: usize,
        beta: f64,
        h: f64,
        kink: f64,
    },
    #[error("finite-difference step {h} around beta_{technique} = {beta} leaves the positive budgets")]
    Step { technique: usize, beta: f64, h: f64 },
}

/// Moments and cost of one technique's primary estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TechniqueStats<S> {
    pub first_moment: S,
    pub second_moment: S,
    pub variance: S,
    pub cost: S,
}

impl<S: Real> TechniqueStats<S> {
    /// Builds stats from raw moments; the variance is clamped at zero against round-off.
    pub fn from_moments(first_moment: S, second_moment: S, cost: S) -> Self {
        Self {
            first_moment,
            second_moment,
            variance: (second_moment - first_moment * first_moment).max(S::zero()),
            cost,
        }
    }

    pub fn cast<T: Real>(&self) -> TechniqueStats<T> {
        let c = |v: S| T::lit(v.to_f64_lossy());
        TechniqueStats {
            first_moment: c(self.first_moment),
            second_moment: c(self.second_moment),
            variance: c(self.variance),
            cost: c(self.cost),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceModel {
    /// Stochastic rounding with division by the real-valued budget, including the ρ term.
    ExactStochastic,
    /// Drops the ρ term for splitting (`β > 1`).
    Simplified,
    /// Divide by the realized integer count when splitting.
    NearestRounding,
}

impl VarianceModel {
    /// Budgets where the model is not differentiable.
    fn kink_between(self, lo: f64, hi: f64) -> Option<f64> {
        match self {
            VarianceModel::Simplified => (lo < 1.0 && 1.0 < hi).then_some(1.0),
            _ => {
                let k = lo.floor() + 1.0;
                (k < hi).then_some(k)
            }
        }
    }
}

/// Variance of the secondary estimator of one technique at budget `beta`.
///
/// # Panics
/// If `beta` is not strictly positive.
pub fn secondary_variance<S: Real>(stats: &TechniqueStats<S>, beta: S, model: VarianceModel) -> S {
    assert!(
        beta > S::zero(),
        "secondary_variance requires a positive budget, got {beta}"
    );
    let one = S::one();
    let e2 = stats.first_moment * stats.first_moment;
    match model {
        VarianceModel::ExactStochastic => stats.variance / beta + rho(beta) * e2,
        VarianceModel::Simplified if beta <= one => stats.second_moment / beta - e2,
        VarianceModel::Simplified => stats.variance / beta,
        VarianceModel::NearestRounding if beta <= one => stats.variance / beta + rho(beta) * e2,
        VarianceModel::NearestRounding => {
            let lo = beta.floor();
            let f = beta - lo;
            if f == S::zero() {
                stats.variance / beta
            } else {
                stats.variance * ((one - f) / lo + f / (lo + one))
            }
        }
    }
}

/// `Σ_t V[⟨I_t; β_t⟩] + V_Δ`.
pub fn total_variance<S: Real>(stats: &[TechniqueStats<S>], beta: &[S], v_delta: S, model: VarianceModel) -> S {
    assert_eq!(stats.len(), beta.len());
    stats
        .iter()
        .zip(beta)
        .fold(v_delta, |acc, (s, &b)| acc + secondary_variance(s, b, model))
}

/// `Σ_t β_t C_t + C_Δ`.
pub fn total_cost<S: Real>(stats: &[TechniqueStats<S>], beta: &[S], c_delta: S) -> S {
    assert_eq!(stats.len(), beta.len());
    stats.iter().zip(beta).fold(c_delta, |acc, (s, &b)| acc + b * s.cost)
}

/// Derivative of `V·C` in the proxy model where weights are held fixed.
///
/// Component `t` is `−M_t C_tot / β_t² + V_tot C_t` with `M_t` the second moment when
/// `β_t ≤ 1` and the variance otherwise.
pub fn proxy_gradient<S: Real>(stats: &[TechniqueStats<S>], beta: &[S], v_tot: S, c_tot: S) -> Vec<S> {
    assert_eq!(stats.len(), beta.len());
    stats
        .iter()
        .zip(beta)
        .map(|(s, &b)| {
            let m = if b <= S::one() { s.second_moment } else { s.variance };
            -m * c_tot / (b * b) + v_tot * s.cost
        })
        .collect()
}

/// Exact variance of the estimator under low-discrepancy rounding, excluding `V_Δ`.
///
/// Conditioned on the shared uniform `u`, counts are fixed; the variance splits into the
/// expected conditional variance `Σ V_t/β_t` and the variance over `u` of the conditional mean,
/// which is piecewise constant in `u` and evaluated exactly between its breakpoints.
pub fn low_discrepancy_variance(stats: &[TechniqueStats<f64>], beta: &[f64]) -> f64 {
    assert_eq!(stats.len(), beta.len());
    let within: f64 = stats.iter().zip(beta).map(|(s, b)| s.variance / b).sum();
    let mut cuts = vec![0.0, 1.0];
    let mut prefix = 0.0;
    for &b in beta {
        prefix += b;
        let frac = prefix - prefix.floor();
        if frac > 0.0 {
            cuts.push(1.0 - frac);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (mut mean, mut sq) = (0.0, 0.0);
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let u = 0.5 * (w[0] + w[1]);
        let counts = crate::estimator::low_discrepancy_round(beta, u);
        let m: f64 = counts
            .iter()
            .zip(stats.iter().zip(beta))
            .map(|(&g, (s, b))| g as f64 * s.first_moment / b)
            .sum();
        mean += len * m;
        sq += len * m * m;
    }
    within + (sq - mean * mean).max(0.0)
}

/// First and second moments of every technique's primary estimator by adaptive quadrature.
///
/// `E[⟨I_t⟩] = ∫ Σ_i f_i w_it` and `E[⟨I_t⟩²] = ∫ (Σ_i f_i w_it)² / p_t`.
pub fn technique_moments(
    problem: &MisProblem,
    beta: &[f64],
    mode: WeightMode,
    opts: &QuadratureOptions,
) -> Result<Vec<TechniqueStats<f64>>, EfficiencyError> {
    check_beta(problem, beta)?;
    let n_t = problem.n_techniques();
    let (a, b) = problem.domain();
    let mut pdfs = vec![0.0; n_t];
    let mut g = vec![0.0; n_t];
    let result = integrate_vec(
        |x, out| {
            weighted_integrands(problem, x, mode, beta, &mut pdfs, &mut g);
            for t in 0..n_t {
                out[t] = g[t];
                out[n_t + t] = if pdfs[t] > 0.0 { g[t] * g[t] / pdfs[t] } else { 0.0 };
            }
        },
        a,
        b,
        problem.breakpoints(),
        2 * n_t,
        opts,
    )
    .map_err(|source| {
        let technique = match source {
            QuadratureError::NonConvergence { component, .. } | QuadratureError::NonFinite { component, .. } => {
                component % n_t
            }
            QuadratureError::InvalidInterval { .. } => 0,
        };
        EfficiencyError::Quadrature { technique, source }
    })?;
    Ok((0..n_t)
        .map(|t| TechniqueStats::from_moments(result.values[t], result.values[n_t + t], problem.costs()[t]))
        .collect())
}

fn check_beta(problem: &MisProblem, beta: &[f64]) -> Result<(), EstimatorError> {
    if beta.len() != problem.n_techniques() {
        return Err(EstimatorError::BudgetLength {
            expected: problem.n_techniques(),
            got: beta.len(),
        });
    }
    if let Some((index, &value)) = beta.iter().enumerate().find(|(_, b)| !(b.is_finite() && **b > 0.0)) {
        return Err(EstimatorError::InvalidBudget { index, value });
    }
    Ok(())
}

/// Variance, cost and inverse efficiency at one budget vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub beta: Vec<f64>,
    pub stats: Arc<Vec<TechniqueStats<f64>>>,
    pub variance: f64,
    pub cost: f64,
    pub inv_efficiency: f64,
}

type MomentCache = Mutex<HashMap<Vec<i64>, Arc<Vec<TechniqueStats<f64>>>>>;

/// Evaluates the efficiency model of one problem, caching moments.
///
/// Budget-unaware moments do not depend on the budgets and are computed once. Budget-aware
/// moments only depend on budget ratios, so they are cached under the quantized log-ratios.
pub struct Evaluator<'a> {
    problem: &'a MisProblem,
    mode: WeightMode,
    model: VarianceModel,
    quadrature: QuadratureOptions,
    cache: Option<MomentCache>,
}

const RATIO_QUANTUM: f64 = 1e12;

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a MisProblem, mode: WeightMode, model: VarianceModel) -> Self {
        Self {
            problem,
            mode,
            model,
            quadrature: QuadratureOptions::default(),
            cache: Some(Mutex::new(HashMap::new())),
        }
    }

    pub fn with_quadrature(mut self, opts: QuadratureOptions) -> Self {
        self.quadrature = opts;
        self
    }

    /// Disables the moment cache, so every budget-aware evaluation integrates afresh.
    pub fn uncached(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn problem(&self) -> &'a MisProblem {
        self.problem
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn model(&self) -> VarianceModel {
        self.model
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.lock().unwrap().len())
    }

    fn key(&self, beta: &[f64]) -> Vec<i64> {
        match self.mode {
            WeightMode::BudgetUnaware => Vec::new(),
            WeightMode::BudgetAware => beta[1..]
                .iter()
                .map(|b| ((b / beta[0]).ln() * RATIO_QUANTUM).round() as i64)
                .collect(),
        }
    }

    pub fn moments(&self, beta: &[f64]) -> Result<Arc<Vec<TechniqueStats<f64>>>, EfficiencyError> {
        check_beta(self.problem, beta)?;
        let Some(cache) = &self.cache else {
            return Ok(Arc::new(technique_moments(
                self.problem,
                beta,
                self.mode,
                &self.quadrature,
            )?));
        };
        let key = self.key(beta);
        if let Some(hit) = cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        // Integrate outside the lock; concurrent misses on one key compute identical values.
        let stats = Arc::new(technique_moments(self.problem, beta, self.mode, &self.quadrature)?);
        cache.lock().unwrap().entry(key).or_insert(stats.clone());
        Ok(stats)
    }

    pub fn evaluate(&self, beta: &[f64]) -> Result<Evaluation, EfficiencyError> {
        let stats = self.moments(beta)?;
        let variance = total_variance(&stats, beta, self.problem.overhead_variance(), self.model);
        let cost = total_cost(&stats, beta, self.problem.overhead_cost());
        Ok(Evaluation {
            beta: beta.to_vec(),
            stats,
            variance,
            cost,
            inv_efficiency: variance * cost,
        })
    }

    pub fn inverse_efficiency(&self, beta: &[f64]) -> Result<f64, EfficiencyError> {
        Ok(self.evaluate(beta)?.inv_efficiency)
    }

    /// Proxy gradient at `beta` from freshly evaluated moments.
    pub fn proxy_gradient(&self, beta: &[f64]) -> Result<Vec<f64>, EfficiencyError> {
        let e = self.evaluate(beta)?;
        Ok(proxy_gradient(&e.stats, beta, e.variance, e.cost))
    }

    /// Finite-difference derivative of the inverse efficiency along `β_t` with step `h`.
    pub fn difference(&self, beta: &[f64], t: usize, h: f64, side: Side) -> Result<f64, EfficiencyError> {
        let b = beta[t];
        let (lo, hi) = match side {
            Side::Central => (b - h, b + h),
            Side::Backward => (b - 2.0 * h, b),
            Side::Forward => (b, b + 2.0 * h),
        };
        if !(h > 0.0 && lo > 0.0) {
            return Err(EfficiencyError::Step {
                technique: t,
                beta: b,
                h,
            });
        }
        if let Some(kink) = self.model.kink_between(lo, hi) {
            return Err(EfficiencyError::Kink {
                technique: t,
                beta: b,
                h,
                kink,
            });
        }
        let mut probe = beta.to_vec();
        let mut at = |v: f64| {
            probe[t] = v;
            self.inverse_efficiency(&probe)
        };
        Ok(match side {
            Side::Central => (at(b + h)? - at(b - h)?) / (2.0 * h),
            Side::Forward => (-3.0 * at(b)? + 4.0 * at(b + h)? - at(b + 2.0 * h)?) / (2.0 * h),
            Side::Backward => (3.0 * at(b)? - 4.0 * at(b - h)? + at(b - 2.0 * h)?) / (2.0 * h),
        })
    }

    /// Central-difference gradient with per-component steps `h_t = rel_step · β_t`.
    ///
    /// Budget-aware moments are re-integrated at every probe. Steps that straddle a
    /// non-differentiable budget are refused.
    pub fn true_gradient_fd(&self, beta: &[f64], rel_step: f64) -> Result<Vec<f64>, EfficiencyError> {
        (0..beta.len())
            .map(|t| self.difference(beta, t, rel_step * beta[t], Side::Central))
            .collect()
    }

    /// One-sided gradient, for budgets sitting on a kink.
    pub fn one_sided_gradient(&self, beta: &[f64], rel_step: f64, side: Side) -> Result<Vec<f64>, EfficiencyError> {
        (0..beta.len())
            .map(|t| self.difference(beta, t, rel_step * beta[t], side))
            .collect()
    }

    /// Finite-difference gradient that falls back to one-sided differences near kinks.
    ///
    /// At a kink the side is chosen to match the proxy branch: from below for `β_t ≤ κ`, from
    /// above otherwise.
    pub fn gradient_fd_auto(&self, beta: &[f64], rel_step: f64) -> Result<Vec<f64>, EfficiencyError> {
        (0..beta.len())
            .map(|t| {
                let h = rel_step * beta[t];
                match self.model.kink_between(beta[t] - h, beta[t] + h) {
                    None => self.difference(beta, t, h, Side::Central),
                    Some(k) if beta[t] <= k => self.difference(beta, t, h, Side::Backward),
                    Some(_) => self.difference(beta, t, h, Side::Forward),
                }
            })
            .collect()
    }

    /// Normalized dot product of the proxy gradient and the finite-difference gradient.
    pub fn gradient_agreement(&self, beta: &[f64], rel_step: f64) -> Result<f64, EfficiencyError> {
        let proxy = self.proxy_gradient(beta)?;
        let truth = self.gradient_fd_auto(beta, rel_step)?;
        Ok(normalized_dot(&proxy, &truth))
    }
}

/// Relative finite-difference step used for gradient checks.
pub const FD_REL_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientPoint {
    pub beta: Vec<f64>,
    pub dot_product: f64,
}

/// Agreement between proxy and finite-difference gradients at every grid point.
pub fn gradient_agreement_map(
    eval: &Evaluator,
    grid: &crate::oracle::GridSpec,
    rel_step: f64,
) -> Result<Vec<GradientPoint>, EfficiencyError> {
    use rayon::prelude::*;
    grid.points(eval.problem().n_techniques())
        .into_par_iter()
        .map(|beta| {
            let dot_product = eval.gradient_agreement(&beta, rel_step)?;
            Ok(GradientPoint { beta, dot_product })
        })
        .collect()
}

/// Agreement from below and from above at budgets lying exactly on the `β = 1` kink.
///
/// From below, the proxy uses second moments and backward differences; from above, variances
/// and forward differences. Components off the kink use central differences in both.
pub fn kink_agreement(eval: &Evaluator, beta: &[f64], rel_step: f64) -> Result<(f64, f64), EfficiencyError> {
    let e = eval.evaluate(beta)?;
    let mut below = Vec::with_capacity(beta.len());
    let mut above = Vec::with_capacity(beta.len());
    let mut fd_below = Vec::with_capacity(beta.len());
    let mut fd_above = Vec::with_capacity(beta.len());
    for (t, (s, &b)) in e.stats.iter().zip(beta).enumerate() {
        let h = rel_step * b;
        let lin = e.variance * s.cost;
        if b == 1.0 {
            below.push(-s.second_moment * e.cost + lin);
            above.push(-s.variance * e.cost + lin);
            fd_below.push(eval.difference(beta, t, h, Side::Backward)?);
            fd_above.push(eval.difference(beta, t, h, Side::Forward)?);
        } else {
            let m = if b < 1.0 { s.second_moment } else { s.variance };
            let g = -m * e.cost / (b * b) + lin;
            let fd = eval.difference(beta, t, h, Side::Central)?;
            below.push(g);
            above.push(g);
            fd_below.push(fd);
            fd_above.push(fd);
        }
    }
    Ok((normalized_dot(&below, &fd_below), normalized_dot(&above, &fd_above)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Central,
    Forward,
    Backward,
}

/// Cosine of the angle between two vectors; 1 if both vanish, 0 if only one does.
pub fn normalized_dot(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na * nb)).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}
