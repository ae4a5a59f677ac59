//! Fixed-point iteration for per-technique sample budgets.

use crate::efficiency::{EfficiencyError, Evaluation, Evaluator, TechniqueStats};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FixedPointError {
    #[error("update needs positive total variance and cost, got V = {variance}, C = {cost}")]
    Degenerate { variance: f64, cost: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("initial budget {index} = {value} lies outside the clamp range [{lo}, {hi}]")]
    InitOutsideClamp { index: usize, value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Efficiency(#[from] EfficiencyError),
    #[error("budget changes grew without progress for {streak} consecutive iterations; stopped at iteration {}", trajectory.last().map_or(0, |p| p.iteration))]
    Oscillation { streak: usize, trajectory: Trajectory },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Convergence threshold on `max_t |Δβ_t| / β_t`.
    pub tolerance: f64,
    /// Budget bounds applied after every update.
    pub clamp: Option<(f64, f64)>,
    /// Force one common budget for all techniques.
    pub shared_budget: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-6,
            clamp: Some((DEFAULT_CLAMP.0, DEFAULT_CLAMP.1)),
            shared_budget: false,
        }
    }
}

pub const DEFAULT_CLAMP: (f64, f64) = (0.05, 20.0);

/// Consecutive growing budget changes that count as oscillation.
pub const OSCILLATION_STREAK: usize = 5;

impl SolverConfig {
    pub fn validate(&self) -> Result<(), FixedPointError> {
        if self.max_iterations == 0 {
            return Err(FixedPointError::Config("max_iterations must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(FixedPointError::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo > 0.0 && lo < 1.0 && 1.0 < hi && hi.is_finite()) {
                return Err(FixedPointError::Config(format!(
                    "clamp range must satisfy 0 < lo < 1 < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    fn apply_clamp(&self, b: f64) -> f64 {
        match self.clamp {
            Some((lo, hi)) => b.clamp(lo, hi),
            None => b,
        }
    }
}

/// Three-case budget rule: roulette if the roulette candidate is below one, split if the
/// splitting candidate is above one, a single sample otherwise.
pub fn three_case<S: Real>(scale: S, second_moment: S, variance: S) -> S {
    let one = S::one();
    let rr = (scale * second_moment).sqrt();
    let split = (scale * variance).sqrt();
    if rr < one {
        rr
    } else if split > one {
        split
    } else {
        one
    }
}

fn check_totals<S: Real>(v_tot: S, c_tot: S) -> Result<(), FixedPointError> {
    if !(v_tot > S::zero() && c_tot > S::zero() && v_tot.is_finite() && c_tot.is_finite()) {
        return Err(FixedPointError::Degenerate {
            variance: v_tot.to_f64_lossy(),
            cost: c_tot.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Optimal budget of one technique given the current totals.
pub fn update_budget<S: Real>(stats: &TechniqueStats<S>, v_tot: S, c_tot: S) -> Result<S, FixedPointError> {
    check_totals(v_tot, c_tot)?;
    Ok(three_case(
        c_tot / (stats.cost * v_tot),
        stats.second_moment,
        stats.variance,
    ))
}

/// Common budget for all techniques, treating them as one combined estimator.
pub fn shared_update<S: Real>(stats: &[TechniqueStats<S>], v_tot: S, c_tot: S) -> Result<S, FixedPointError> {
    check_totals(v_tot, c_tot)?;
    let cost = stats.iter().fold(S::zero(), |a, s| a + s.cost);
    let second = stats.iter().fold(S::zero(), |a, s| a + s.second_moment);
    let var = stats.iter().fold(S::zero(), |a, s| a + s.variance);
    Ok(three_case(c_tot / (cost * v_tot), second, var))
}

/// One step of the iteration: new budgets from an evaluation, before clamping.
pub fn step(eval: &Evaluation, shared: bool) -> Result<Vec<f64>, FixedPointError> {
    if shared {
        let b = shared_update(&eval.stats, eval.variance, eval.cost)?;
        Ok(vec![b; eval.beta.len()])
    } else {
        eval.stats
            .iter()
            .map(|s| update_budget(s, eval.variance, eval.cost))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub beta: Vec<f64>,
    pub variance: f64,
    pub cost: f64,
    pub inv_efficiency: f64,
}

pub type Trajectory = Vec<TrajectoryPoint>;

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Iteration 0 is the initialization.
    pub trajectory: Trajectory,
    pub converged: bool,
}

impl Solution {
    pub fn last(&self) -> &TrajectoryPoint {
        self.trajectory.last().expect("trajectory holds the initial point")
    }

    pub fn beta(&self) -> &[f64] {
        &self.last().beta
    }
}

fn point(iteration: usize, e: &Evaluation) -> TrajectoryPoint {
    TrajectoryPoint {
        iteration,
        beta: e.beta.clone(),
        variance: e.variance,
        cost: e.cost,
        inv_efficiency: e.inv_efficiency,
    }
}

/// Iterates the budget update with simultaneous per-technique steps.
///
/// Budget-aware moments are refreshed at every iterate. Stops when the relative budget change
/// drops below the tolerance or after `max_iterations`. Budget changes that grow without
/// improving the inverse efficiency for [`OSCILLATION_STREAK`] iterations in a row abort with
/// the trajectory so far.
pub fn solve(eval: &Evaluator, init: &[f64], config: &SolverConfig) -> Result<Solution, FixedPointError> {
    config.validate()?;
    if let Some((lo, hi)) = config.clamp {
        if let Some((index, &value)) = init.iter().enumerate().find(|(_, b)| !(lo..=hi).contains(*b)) {
            return Err(FixedPointError::InitOutsideClamp { index, value, lo, hi });
        }
    }
    let mut current = eval.evaluate(init)?;
    let mut trajectory = vec![point(0, &current)];
    let mut last_change = f64::INFINITY;
    let mut streak = 0;
    for iteration in 1..=config.max_iterations {
        let next: Vec<f64> = step(&current, config.shared_budget)?
            .into_iter()
            .map(|b| config.apply_clamp(b))
            .collect();
        let change = next
            .iter()
            .zip(&current.beta)
            .map(|(n, o)| (n - o).abs() / o)
            .fold(0.0, f64::max);
        let previous = current.inv_efficiency;
        current = eval.evaluate(&next)?;
        trajectory.push(point(iteration, &current));
        if change < config.tolerance {
            return Ok(Solution {
                trajectory,
                converged: true,
            });
        }
        // Growing steps that still improve the objective are an approach, not a cycle.
        let stalled = current.inv_efficiency >= previous;
        streak = if change > last_change && stalled { streak + 1 } else { 0 };
        if streak >= OSCILLATION_STREAK {
            return Err(FixedPointError::Oscillation { streak, trajectory });
        }
        last_change = change;
    }
    Ok(Solution {
        trajectory,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efficiency::{total_cost, total_variance, VarianceModel};

    fn stats(e: f64, v: f64, c: f64) -> TechniqueStats<f64> {
        TechniqueStats::from_moments(e, v + e * e, c)
    }

    #[test]
    fn zero_mean_has_no_disagreement() {
        let s = stats(0.0, 2.0, 1.0);
        assert_eq!(s.second_moment, s.variance);
        let b = update_budget(&s, 3.0, 7.0).unwrap();
        assert!((b - (7.0 / 3.0 * 2.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn square_root_recurrence() {
        let s = stats(0.0, 1.0, 1.0);
        let mut beta = 4.0;
        let mut trace = Vec::new();
        for _ in 0..40 {
            let v = total_variance(&[s], &[beta], 1.0, VarianceModel::Simplified);
            let c = total_cost(&[s], &[beta], 1.0);
            let next = update_budget(&s, v, c).unwrap();
            // Here V = 1 + 1/β and C = 1 + β, so the update is exactly √β.
            assert!((next - beta.sqrt()).abs() < 1e-14);
            trace.push(next);
            beta = next;
        }
        assert!((trace[0] - 2.0).abs() < 1e-15);
        assert!((beta - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_estimator_is_rouletted_to_the_floor() {
        let s = stats(0.1, 0.0, 1.0);
        let b = update_budget(&s, 10.0, 2.0).unwrap();
        assert!((b - 0.2f64.sqrt() * 0.1).abs() < 1e-15);
        assert_eq!(b.clamp(DEFAULT_CLAMP.0, DEFAULT_CLAMP.1), 0.05);
    }

    #[test]
    fn disagreement_returns_one() {
        // β_RR ≥ 1 but β_S ≤ 1.
        let s = TechniqueStats::from_moments(1.0, 1.5, 1.0);
        assert_eq!(update_budget(&s, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(three_case(1.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn degenerate_totals_are_rejected() {
        let s = stats(0.0, 1.0, 1.0);
        assert!(matches!(
            update_budget(&s, 0.0, 1.0),
            Err(FixedPointError::Degenerate { .. })
        ));
        assert!(matches!(
            update_budget(&s, 1.0, -1.0),
            Err(FixedPointError::Degenerate { .. })
        ));
    }

    #[test]
    fn precisions_agree() {
        let s = TechniqueStats::from_moments(0.4f64, 2.5, 3.0);
        for (v, c) in [(1.0, 2.0), (10.0, 1.5), (0.2, 50.0)] {
            let a = update_budget(&s, v, c).unwrap();
            let b = update_budget(&s.cast::<f32>(), v as f32, c as f32).unwrap() as f64;
            assert!((a - b).abs() <= 1e-6 * a);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            clamp: Some((1.5, 20.0)),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
