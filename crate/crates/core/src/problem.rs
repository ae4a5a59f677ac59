//! Multi-sample MIS integration problems and their JSON definition format.

use crate::density::{Density, DensityError, DensitySpec};
use crate::expr::{Expr, ExprError};
use crate::quadrature::{integrate, QuadratureError, QuadratureOptions};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of stratified probe points used to detect subintegrands no technique can sample.
pub const COVERAGE_PROBES: usize = 10_000;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid JSON problem definition: {0}")]
    Json(#[from] serde_json::Error),
    #[error("domain [{0}, {1}] must be a finite, non-empty interval")]
    Domain(f64, f64),
    #[error("subintegrand {index}: {source}")]
    Subintegrand { index: usize, source: ExprError },
    #[error("technique {index}: {source}")]
    Technique { index: usize, source: DensityError },
    #[error("technique {index} density integrates to {mass} instead of 1")]
    NotNormalized { index: usize, mass: f64 },
    #[error("indicator must be {rows}x{cols} (subintegrands x techniques)")]
    IndicatorShape { rows: usize, cols: usize },
    #[error("subintegrand {0} is not estimated by any technique")]
    Unestimated(usize),
    #[error("subintegrand {subintegrand} is nonzero at x = {x} where none of its techniques has density")]
    Uncovered { subintegrand: usize, x: f64 },
    #[error("cost of technique {index} must be positive and finite, got {cost}")]
    Cost { index: usize, cost: f64 },
    #[error("overhead {name} must be non-negative and finite, got {value}")]
    Overhead { name: &'static str, value: f64 },
    #[error("problem needs at least one subintegrand and one technique")]
    Empty,
}

/// JSON schema of a problem definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub domain: [f64; 2],
    pub subintegrands: Vec<String>,
    pub techniques: Vec<DensitySpec>,
    /// `indicator[i][t]`: technique `t` estimates subintegrand `i`.
    pub indicator: Vec<Vec<bool>>,
    pub costs: Vec<f64>,
    pub overhead_cost: f64,
    pub overhead_variance: f64,
}

/// A validated integration problem `I = ∫ Σ_i f_i(x) dx` with `n_t` sampling techniques.
#[derive(Debug, Clone)]
pub struct MisProblem {
    spec: ProblemSpec,
    domain: (f64, f64),
    subintegrands: Vec<Expr>,
    techniques: Vec<Density>,
    indicator: Vec<Vec<bool>>,
    costs: Vec<f64>,
    overhead_cost: f64,
    overhead_variance: f64,
    breakpoints: Vec<f64>,
}

impl MisProblem {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        Self::from_spec(serde_json::from_str(text)?)
    }

    pub fn from_spec(spec: ProblemSpec) -> Result<Self, ProblemError> {
        let [a, b] = spec.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(ProblemError::Domain(a, b));
        }
        let domain = (a, b);
        if spec.subintegrands.is_empty() || spec.techniques.is_empty() {
            return Err(ProblemError::Empty);
        }
        let subintegrands = spec
            .subintegrands
            .iter()
            .enumerate()
            .map(|(index, s)| Expr::parse(s).map_err(|source| ProblemError::Subintegrand { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        let techniques = spec
            .techniques
            .iter()
            .enumerate()
            .map(|(index, s)| Density::compile(s, domain).map_err(|source| ProblemError::Technique { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        let (n_i, n_t) = (subintegrands.len(), techniques.len());

        if spec.indicator.len() != n_i || spec.indicator.iter().any(|row| row.len() != n_t) {
            return Err(ProblemError::IndicatorShape { rows: n_i, cols: n_t });
        }
        if let Some(i) = spec.indicator.iter().position(|row| !row.iter().any(|&v| v)) {
            return Err(ProblemError::Unestimated(i));
        }
        if spec.costs.len() != n_t {
            return Err(ProblemError::IndicatorShape { rows: n_i, cols: n_t });
        }
        if let Some((index, &cost)) = spec
            .costs
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c > 0.0))
        {
            return Err(ProblemError::Cost { index, cost });
        }
        for (name, value) in [
            ("overhead_cost", spec.overhead_cost),
            ("overhead_variance", spec.overhead_variance),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ProblemError::Overhead { name, value });
            }
        }
        for (index, d) in techniques.iter().enumerate() {
            let mass = d.total_mass();
            if !((mass - 1.0).abs() <= 1e-6) {
                return Err(ProblemError::NotNormalized { index, mass });
            }
        }

        let mut breakpoints: Vec<f64> = subintegrands
            .iter()
            .flat_map(Expr::breakpoints)
            .chain(techniques.iter().flat_map(Density::breakpoints))
            .filter(|p| *p > a && *p < b)
            .collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();

        let problem = Self {
            domain,
            subintegrands,
            techniques,
            indicator: spec.indicator.clone(),
            costs: spec.costs.clone(),
            overhead_cost: spec.overhead_cost,
            overhead_variance: spec.overhead_variance,
            breakpoints,
            spec,
        };
        problem.check_coverage()?;
        Ok(problem)
    }

    fn check_coverage(&self) -> Result<(), ProblemError> {
        let (a, b) = self.domain;
        for k in 0..COVERAGE_PROBES {
            let x = a + (k as f64 + 0.5) / COVERAGE_PROBES as f64 * (b - a);
            for i in 0..self.n_subintegrands() {
                if self.subintegrand(i, x) == 0.0 {
                    continue;
                }
                let covered = (0..self.n_techniques()).any(|t| self.indicator[i][t] && self.techniques[t].pdf(x) > 0.0);
                if !covered {
                    return Err(ProblemError::Uncovered { subintegrand: i, x });
                }
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        self.spec.name.as_deref().unwrap_or("unnamed")
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn n_techniques(&self) -> usize {
        self.techniques.len()
    }

    pub fn n_subintegrands(&self) -> usize {
        self.subintegrands.len()
    }

    #[inline]
    pub fn subintegrand(&self, i: usize, x: f64) -> f64 {
        self.subintegrands[i].eval(x)
    }

    #[inline]
    pub fn integrand(&self, x: f64) -> f64 {
        self.subintegrands.iter().map(|f| f.eval(x)).sum()
    }

    pub fn technique(&self, t: usize) -> &Density {
        &self.techniques[t]
    }

    #[inline]
    pub fn estimates(&self, i: usize, t: usize) -> bool {
        self.indicator[i][t]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn overhead_cost(&self) -> f64 {
        self.overhead_cost
    }

    pub fn overhead_variance(&self) -> f64 {
        self.overhead_variance
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Reference value of `∫ f` by adaptive quadrature.
    pub fn integral(&self) -> Result<f64, QuadratureError> {
        let opts = QuadratureOptions {
            rel_tol: 1e-11,
            abs_tol: 1e-14,
            max_intervals: 20_000,
        };
        integrate(
            |x| self.integrand(x),
            self.domain.0,
            self.domain.1,
            &self.breakpoints,
            &opts,
        )
    }

    /// Same problem with techniques reordered: new technique `k` is old technique `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, ProblemError> {
        let mut spec = self.spec.clone();
        spec.techniques = order.iter().map(|&t| self.spec.techniques[t].clone()).collect();
        spec.costs = order.iter().map(|&t| self.spec.costs[t]).collect();
        spec.indicator = self
            .spec
            .indicator
            .iter()
            .map(|row| order.iter().map(|&t| row[t]).collect())
            .collect();
        Self::from_spec(spec)
    }

    /// Same problem with different costs and overheads.
    pub fn with_costs(
        &self,
        costs: Vec<f64>,
        overhead_cost: f64,
        overhead_variance: f64,
    ) -> Result<Self, ProblemError> {
        let mut spec = self.spec.clone();
        spec.costs = costs;
        spec.overhead_cost = overhead_cost;
        spec.overhead_variance = overhead_variance;
        Self::from_spec(spec)
    }
}
