//! Brute-force references: budget grid search, restricted baselines and Monte Carlo moments.

use crate::efficiency::{EfficiencyError, Evaluator, TechniqueStats};
use crate::estimator::{balance_weights, chunk_rng, primary_estimate, BudgetVector, EstimatorError, SampleStats};
use crate::problem::MisProblem;
use crate::WeightMode;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("grid search over {0} techniques is too expensive; use the fixed-point solver instead")]
    TooManyTechniques(usize),
    #[error("restricted baselines are defined for exactly two techniques, got {0}")]
    NotTwoTechniques(usize),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Efficiency(#[from] EfficiencyError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

pub const MAX_GRID_TECHNIQUES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
    pub spacing: Spacing,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: 0.05,
            hi: 20.0,
            resolution: 128,
            spacing: Spacing::Log,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi.is_finite()) {
            return Err(OracleError::Grid(format!(
                "need 0 < lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.resolution < 2 {
            return Err(OracleError::Grid(format!(
                "resolution must be at least 2, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Grid coordinates along one axis, endpoints included.
    pub fn axis(&self) -> Vec<f64> {
        let n = self.resolution;
        (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Log => (self.lo.ln() + s * (self.hi / self.lo).ln()).exp(),
                    Spacing::Linear => self.lo + s * (self.hi - self.lo),
                }
            })
            .collect()
    }

    /// Every grid point in row-major order (last technique fastest).
    pub fn points(&self, n_t: usize) -> Vec<Vec<f64>> {
        let axis = self.axis();
        let total = axis.len().pow(n_t as u32);
        (0..total)
            .map(|mut k| {
                let mut p = vec![0.0; n_t];
                for slot in p.iter_mut().rev() {
                    *slot = axis[k % axis.len()];
                    k /= axis.len();
                }
                p
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub beta: Vec<f64>,
    pub variance: f64,
    pub cost: f64,
    pub inv_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub beta: Vec<f64>,
    pub inv_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub argmin: Vec<f64>,
    pub min: f64,
    pub landscape: Vec<LandscapePoint>,
}

/// Evaluates the inverse efficiency at every grid point and returns the minimum.
pub fn grid_search(eval: &Evaluator, grid: &GridSpec) -> Result<GridResult, OracleError> {
    grid.validate()?;
    let n_t = eval.problem().n_techniques();
    if n_t > MAX_GRID_TECHNIQUES {
        return Err(OracleError::TooManyTechniques(n_t));
    }
    let landscape = grid
        .points(n_t)
        .into_par_iter()
        .map(|beta| {
            let e = eval.evaluate(&beta)?;
            Ok(LandscapePoint {
                beta,
                variance: e.variance,
                cost: e.cost,
                inv_efficiency: e.inv_efficiency,
            })
        })
        .collect::<Result<Vec<_>, EfficiencyError>>()?;
    // First minimum in grid order, so ties resolve deterministically.
    let best = landscape
        .iter()
        .reduce(|a, b| if b.inv_efficiency < a.inv_efficiency { b } else { a })
        .expect("grid has points");
    Ok(GridResult {
        argmin: best.beta.clone(),
        min: best.inv_efficiency,
        landscape,
    })
}

/// Golden-section minimization of a unimodal-looking function on `[a, b]`.
fn golden<F: FnMut(f64) -> Result<f64, OracleError>>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64), OracleError> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > tol * (a.abs() + b.abs()).max(1e-300) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Minimizes a 1D function by scanning `samples` points then polishing the best bracket.
fn scan_and_polish<F>(f: F, lo: f64, hi: f64, samples: usize, log: bool) -> Result<(f64, f64), OracleError>
where
    F: Fn(f64) -> Result<f64, OracleError> + Sync,
{
    let to = |s: f64| if log { s.exp() } else { s };
    let (a, b) = if log { (lo.ln(), hi.ln()) } else { (lo, hi) };
    let xs: Vec<f64> = (0..samples)
        .map(|k| a + (b - a) * k as f64 / (samples - 1) as f64)
        .collect();
    let vals = xs.par_iter().map(|&s| f(to(s))).collect::<Result<Vec<_>, _>>()?;
    let k = (0..samples).fold(0, |best, k| if vals[k] < vals[best] { k } else { best });
    let left = xs[k.saturating_sub(1)];
    let right = xs[(k + 1).min(samples - 1)];
    let (s, v) = golden(|s| f(to(s)), left, right, 1e-10)?;
    Ok(if v < vals[k] { (to(s), v) } else { (to(xs[k]), vals[k]) })
}

const SLICE_SAMPLES: usize = 1024;

/// Optima restricted to the mixture slice, the equal-budget slice, and the scaled mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Best budgets summing to one.
    #[serde(rename = "OS")]
    pub os: Optimum,
    /// Best common budget `β_1 = β_2`.
    #[serde(rename = "RRS")]
    pub rrs: Optimum,
    /// Best scaling of the mixture optimum.
    #[serde(rename = "O+R")]
    pub o_plus_r: Optimum,
}

pub fn constrained_baselines(eval: &Evaluator, grid: &GridSpec) -> Result<Baselines, OracleError> {
    grid.validate()?;
    let n_t = eval.problem().n_techniques();
    if n_t != 2 {
        return Err(OracleError::NotTwoTechniques(n_t));
    }
    let ie = |b: [f64; 2]| -> Result<f64, OracleError> { Ok(eval.inverse_efficiency(&b)?) };

    let r_lo = grid.lo.min(0.5 - 1e-9);
    let (r, os_val) = scan_and_polish(|r| ie([r, 1.0 - r]), r_lo, 1.0 - r_lo, SLICE_SAMPLES, false)?;
    let (s, rrs_val) = scan_and_polish(|s| ie([s, s]), grid.lo, grid.hi, SLICE_SAMPLES, true)?;
    let mix = [r, 1.0 - r];
    let s_lo = grid.lo / mix[0].min(mix[1]);
    let s_hi = grid.hi / mix[0].max(mix[1]);
    let (k, or_val) = scan_and_polish(|k| ie([k * mix[0], k * mix[1]]), s_lo, s_hi, SLICE_SAMPLES, true)?;
    Ok(Baselines {
        os: Optimum {
            beta: mix.to_vec(),
            inv_efficiency: os_val,
        },
        rrs: Optimum {
            beta: vec![s, s],
            inv_efficiency: rrs_val,
        },
        o_plus_r: Optimum {
            beta: vec![k * mix[0], k * mix[1]],
            inv_efficiency: or_val,
        },
    })
}

/// Pattern search in log-budget space inside the grid bounds, starting from `start`.
pub fn polish(eval: &Evaluator, start: &Optimum, grid: &GridSpec) -> Result<Optimum, OracleError> {
    let (lo, hi) = (grid.lo.ln(), grid.hi.ln());
    let mut x: Vec<f64> = start.beta.iter().map(|b| b.ln().clamp(lo, hi)).collect();
    let f = |x: &[f64]| -> Result<f64, OracleError> {
        let b: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        Ok(eval.inverse_efficiency(&b)?)
    };
    let mut fx = f(&x)?;
    let mut step = (hi - lo) / (grid.resolution.max(2) - 1) as f64;
    while step > 1e-10 {
        let mut improved = false;
        for t in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[t] = (y[t] + dir * step).clamp(lo, hi);
                let fy = f(&y)?;
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let beta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    Ok(if fx < start.inv_efficiency {
        Optimum {
            beta,
            inv_efficiency: fx,
        }
    } else {
        start.clone()
    })
}

/// Summary of a full oracle run, as exported to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub argmin: Vec<f64>,
    pub min: f64,
    /// Grid minimum before polishing.
    pub grid_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Baselines>,
}

/// Grid search, polished minimum and (for two techniques) restricted baselines.
///
/// The polished minimum starts from the best of the grid minimum and the baseline optima, so
/// it is never worse than any of them.
pub fn run_oracle(eval: &Evaluator, grid: &GridSpec) -> Result<(OracleSummary, GridResult), OracleError> {
    let result = grid_search(eval, grid)?;
    let baselines = match eval.problem().n_techniques() {
        2 => Some(constrained_baselines(eval, grid)?),
        _ => None,
    };
    let mut start = Optimum {
        beta: result.argmin.clone(),
        inv_efficiency: result.min,
    };
    if let Some(b) = &baselines {
        for o in [&b.os, &b.rrs, &b.o_plus_r] {
            let inside = o.beta.iter().all(|v| (grid.lo..=grid.hi).contains(v));
            if inside && o.inv_efficiency < start.inv_efficiency {
                start = o.clone();
            }
        }
    }
    let best = polish(eval, &start, grid)?;
    Ok((
        OracleSummary {
            argmin: best.beta,
            min: best.inv_efficiency,
            grid_min: result.min,
            baselines,
        },
        result,
    ))
}

/// Brute-force Monte Carlo estimate of every technique's primary-estimator moments.
///
/// Draws `samples` points from each technique and averages `⟨I_t⟩` and `⟨I_t⟩²`; the result is
/// deterministic in `seed`.
pub fn mc_moments(
    problem: &MisProblem,
    beta: &BudgetVector<f64>,
    mode: WeightMode,
    samples: usize,
    seed: u64,
) -> Result<Vec<(SampleStats, SampleStats)>, OracleError> {
    const CHUNK: usize = 1 << 16;
    (0..problem.n_techniques())
        .map(|t| {
            let chunks = samples.div_ceil(CHUNK);
            let parts = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = chunk_rng(seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), c as u64);
                    let n = CHUNK.min(samples - c * CHUNK);
                    let (mut first, mut second) = (SampleStats::default(), SampleStats::default());
                    for _ in 0..n {
                        let x = problem.technique(t).sample(&mut rng);
                        let w = balance_weights(problem, x, mode, beta)?;
                        let v = primary_estimate(problem, t, x, &w)?;
                        first.push(v);
                        second.push(v * v);
                    }
                    Ok((first, second))
                })
                .collect::<Result<Vec<_>, EstimatorError>>()?;
            Ok(parts
                .iter()
                .fold((SampleStats::default(), SampleStats::default()), |(a, b), (c, d)| {
                    (a.merge(c), b.merge(d))
                }))
        })
        .collect()
}

/// Point estimates of [`mc_moments`] as technique stats.
pub fn mc_technique_stats(moments: &[(SampleStats, SampleStats)], costs: &[f64]) -> Vec<TechniqueStats<f64>> {
    moments
        .iter()
        .zip(costs)
        .map(|((first, second), &c)| TechniqueStats::from_moments(first.mean, second.mean, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_endpoints_and_spacing() {
        let g = GridSpec::default();
        let a = g.axis();
        assert_eq!(a.len(), 128);
        assert!((a[0] - 0.05).abs() < 1e-15);
        assert!((a[127] - 20.0).abs() < 1e-12);
        let r = a[1] / a[0];
        assert!((a[64] / a[63] - r).abs() < 1e-12);
        let lin = GridSpec {
            lo: 1.0,
            hi: 3.0,
            resolution: 3,
            spacing: Spacing::Linear,
        };
        assert_eq!(lin.axis(), vec![1.0, 2.0, 3.0]);
        assert_eq!(lin.points(2)[1], vec![1.0, 2.0]);
        assert_eq!(lin.points(2).len(), 9);
    }

    #[test]
    fn grid_validation() {
        for g in [
            GridSpec {
                lo: 0.0,
                ..Default::default()
            },
            GridSpec {
                resolution: 1,
                ..Default::default()
            },
            GridSpec {
                lo: 3.0,
                hi: 2.0,
                ..Default::default()
            },
        ] {
            assert!(g.validate().is_err());
        }
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, v) = golden(|x| Ok((x - 0.3) * (x - 0.3) + 2.0), 0.0, 1.0, 1e-12).unwrap();
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
