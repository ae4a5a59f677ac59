//! The multi-sample MIS estimator with stochastically rounded, real-valued sample budgets.
//!
//! Each technique `t` draws `r(β_t)` samples, where `r` rounds stochastically so that
//! `E[r(β_t)] = β_t`, and the secondary estimator divides by the real-valued `β_t`. MIS
//! weights follow the balance heuristic, optionally scaled by the budgets.

use crate::problem::MisProblem;
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Deref;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("no admissible technique has density for subintegrand {subintegrand} at x = {x}")]
    Domain { subintegrand: usize, x: f64 },
    #[error("technique {technique} has zero density at its own sample x = {x}")]
    SamplingInconsistency { technique: usize, x: f64 },
    #[error("budget vector has {got} entries, problem has {expected} techniques")]
    BudgetLength { expected: usize, got: usize },
    #[error("budget {index} must be positive and finite, got {value}")]
    InvalidBudget { index: usize, value: f64 },
}

/// Per-technique expected sample counts `β_t > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BudgetVector<S>(Vec<S>);

impl<S: Real> BudgetVector<S> {
    pub fn new(values: Vec<S>) -> Result<Self, EstimatorError> {
        if let Some((index, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > S::zero()))
        {
            return Err(EstimatorError::InvalidBudget {
                index,
                value: v.to_f64_lossy(),
            });
        }
        Ok(Self(values))
    }

    pub fn splat(n: usize, value: S) -> Result<Self, EstimatorError> {
        Self::new(vec![value; n])
    }

    pub fn clamped(&self, lo: S, hi: S) -> Self {
        Self(self.0.iter().map(|b| b.max(lo).min(hi)).collect())
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }
}

impl<S> Deref for BudgetVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Balance heuristic over densities only; weights are constant in the budgets.
    BudgetUnaware,
    /// Balance heuristic over `β_t · p_t`.
    BudgetAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// One independent uniform per technique.
    Naive,
    /// One uniform shared by all techniques.
    LowDiscrepancy,
}

/// How a technique's sample sum is normalized after rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the real-valued budget.
    RealValued,
    /// Divide by the realized count when splitting (`β > 1`), by `β` otherwise.
    RoundedCount,
}

/// Extra relative variance of stochastic rounding: `(β − ⌊β⌋)(⌈β⌉ − β) / β²`.
///
/// # Panics
/// If `beta` is not strictly positive.
pub fn rho<S: Real>(beta: S) -> S {
    assert!(beta > S::zero(), "rho requires a positive budget, got {beta}");
    let lo = beta.floor();
    let hi = beta.ceil();
    (beta - lo) * (hi - beta) / (beta * beta)
}

/// Rounds `beta` up with probability equal to its fractional part, decided by `u ∈ [0, 1)`.
///
/// # Panics
/// If `beta` is not strictly positive.
pub fn stochastic_round<S: Real>(beta: S, u: S) -> u64 {
    assert!(
        beta > S::zero(),
        "stochastic_round requires a positive budget, got {beta}"
    );
    let lo = beta.floor();
    let n = lo.to_u64().expect("budget fits in u64");
    if u < beta - lo {
        n + 1
    } else {
        n
    }
}

/// Rounds all budgets with a single uniform `u`, carrying the fractional remainder forward.
///
/// Each count keeps its expectation `β_t`, while the total never deviates from `Σ β_t` by a
/// full sample.
pub fn low_discrepancy_round<S: Real>(budgets: &[S], u: S) -> Vec<u64> {
    let mut out = Vec::with_capacity(budgets.len());
    low_discrepancy_round_into(budgets, u, &mut out);
    out
}

/// Same as [`low_discrepancy_round`], writing into a reused buffer.
pub fn low_discrepancy_round_into<S: Real>(budgets: &[S], u: S, out: &mut Vec<u64>) {
    out.clear();
    let mut r = u;
    for &b in budgets {
        debug_assert!(b >= S::zero());
        let g = (b + r).floor();
        out.push(g.to_u64().expect("budget fits in u64"));
        // Remainder stays in [0, 1); clamp away accumulated round-off.
        r = (r + b - g).max(S::zero());
    }
}

/// Dense `n_i × n_t` matrix of MIS weights, row-major by subintegrand.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n_techniques: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    #[inline]
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.data[i * self.n_techniques + t]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_techniques..(i + 1) * self.n_techniques]
    }

    pub fn n_subintegrands(&self) -> usize {
        self.data.len() / self.n_techniques
    }
}

fn check_budgets(problem: &MisProblem, budgets: &[f64]) -> Result<(), EstimatorError> {
    if budgets.len() != problem.n_techniques() {
        return Err(EstimatorError::BudgetLength {
            expected: problem.n_techniques(),
            got: budgets.len(),
        });
    }
    Ok(())
}

/// Balance-heuristic weights `w_it(x)`.
pub fn balance_weights(
    problem: &MisProblem,
    x: f64,
    mode: WeightMode,
    budgets: &BudgetVector<f64>,
) -> Result<WeightMatrix, EstimatorError> {
    check_budgets(problem, budgets)?;
    let n_t = problem.n_techniques();
    let pdfs: Vec<f64> = (0..n_t).map(|t| problem.technique(t).pdf(x)).collect();
    let mut data = vec![0.0; problem.n_subintegrands() * n_t];
    for i in 0..problem.n_subintegrands() {
        let scaled = |t: usize| match mode {
            WeightMode::BudgetUnaware => pdfs[t],
            WeightMode::BudgetAware => budgets[t] * pdfs[t],
        };
        let denom: f64 = (0..n_t).filter(|&t| problem.estimates(i, t)).map(scaled).sum();
        if !(denom > 0.0) {
            return Err(EstimatorError::Domain { subintegrand: i, x });
        }
        for t in 0..n_t {
            if problem.estimates(i, t) {
                data[i * n_t + t] = scaled(t) / denom;
            }
        }
    }
    Ok(WeightMatrix {
        n_techniques: n_t,
        data,
    })
}

/// Primary estimate of technique `t` at its sample `x`: `Σ_i f_i(x) w_it(x) / p_t(x)`.
pub fn primary_estimate(problem: &MisProblem, t: usize, x: f64, weights: &WeightMatrix) -> Result<f64, EstimatorError> {
    let p = problem.technique(t).pdf(x);
    if !(p > 0.0) {
        return Err(EstimatorError::SamplingInconsistency { technique: t, x });
    }
    let sum: f64 = (0..problem.n_subintegrands())
        .map(|i| problem.subintegrand(i, x) * weights.get(i, t))
        .sum();
    Ok(sum / p)
}

/// Evaluates `p_t(x)` and the weighted integrand `g_t(x) = Σ_i f_i(x) w_it(x)` for all `t`.
///
/// Subintegrands without an admissible density at `x` get zero weight instead of an error, so
/// this is safe to use inside quadrature.
pub(crate) fn weighted_integrands(
    problem: &MisProblem,
    x: f64,
    mode: WeightMode,
    budgets: &[f64],
    pdfs: &mut [f64],
    out: &mut [f64],
) {
    let n_t = problem.n_techniques();
    for t in 0..n_t {
        pdfs[t] = problem.technique(t).pdf(x);
        out[t] = 0.0;
    }
    for i in 0..problem.n_subintegrands() {
        let f = problem.subintegrand(i, x);
        if f == 0.0 {
            continue;
        }
        let mut denom = 0.0;
        for t in 0..n_t {
            if problem.estimates(i, t) {
                denom += match mode {
                    WeightMode::BudgetUnaware => pdfs[t],
                    WeightMode::BudgetAware => budgets[t] * pdfs[t],
                };
            }
        }
        if !(denom > 0.0) {
            continue;
        }
        for t in 0..n_t {
            if problem.estimates(i, t) {
                let s = match mode {
                    WeightMode::BudgetUnaware => pdfs[t],
                    WeightMode::BudgetAware => budgets[t] * pdfs[t],
                };
                out[t] += f * s / denom;
            }
        }
    }
}

/// Reusable state for drawing many realizations of the secondary estimator.
pub struct Realizer<'a> {
    problem: &'a MisProblem,
    budgets: &'a [f64],
    mode: WeightMode,
    rounding: Rounding,
    normalization: Normalization,
    counts: Vec<u64>,
    pdfs: Vec<f64>,
    weighted: Vec<f64>,
}

impl<'a> Realizer<'a> {
    pub fn new(
        problem: &'a MisProblem,
        budgets: &'a BudgetVector<f64>,
        mode: WeightMode,
        rounding: Rounding,
        normalization: Normalization,
    ) -> Result<Self, EstimatorError> {
        check_budgets(problem, budgets)?;
        let n_t = problem.n_techniques();
        Ok(Self {
            problem,
            budgets,
            mode,
            rounding,
            normalization,
            counts: Vec::with_capacity(n_t),
            pdfs: vec![0.0; n_t],
            weighted: vec![0.0; n_t],
        })
    }

    /// Draws one realization of `⟨I⟩ = Σ_t (1/β_t) Σ_{s ≤ r(β_t)} ⟨I_t(x_{t,s})⟩`.
    pub fn realize<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        match self.rounding {
            Rounding::Naive => {
                self.counts.clear();
                for &b in self.budgets {
                    self.counts.push(stochastic_round(b, rng.random::<f64>()));
                }
            }
            Rounding::LowDiscrepancy => low_discrepancy_round_into(self.budgets, rng.random::<f64>(), &mut self.counts),
        }
        let mut total = 0.0;
        for t in 0..self.problem.n_techniques() {
            let n = self.counts[t];
            if n == 0 {
                continue;
            }
            let density = self.problem.technique(t);
            let mut sum = 0.0;
            for _ in 0..n {
                let x = density.sample(rng);
                weighted_integrands(
                    self.problem,
                    x,
                    self.mode,
                    self.budgets,
                    &mut self.pdfs,
                    &mut self.weighted,
                );
                if self.pdfs[t] > 0.0 {
                    sum += self.weighted[t] / self.pdfs[t];
                }
            }
            let beta = self.budgets[t];
            let divisor = match self.normalization {
                Normalization::RoundedCount if beta > 1.0 => n as f64,
                _ => beta,
            };
            total += sum / divisor;
        }
        total
    }
}

/// One realization of the multi-sample estimator with real-valued normalization.
pub fn run_estimator<R: Rng + ?Sized>(
    problem: &MisProblem,
    budgets: &BudgetVector<f64>,
    mode: WeightMode,
    rounding: Rounding,
    rng: &mut R,
) -> Result<f64, EstimatorError> {
    let mut r = Realizer::new(problem, budgets, mode, rounding, Normalization::RealValued)?;
    Ok(r.realize(rng))
}

/// Streaming mean/variance accumulator with an associative merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl SampleStats {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        Self {
            count: self.count + other.count,
            mean: self.mean + d * other.count as f64 / n,
            m2: self.m2 + other.m2 + d * d * self.count as f64 * other.count as f64 / n,
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count - 1) as f64
    }

    /// `Σ (v - center)²` over the pushed values.
    pub fn squared_deviation(&self, center: f64) -> f64 {
        let d = self.mean - center;
        self.m2 + self.count as f64 * d * d
    }

    pub fn std_err(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Realizations per independently seeded chunk in [`estimate_batch`].
pub const BATCH_CHUNK: usize = 4096;

/// Seeded generator for chunk `stream` of a batch; chunks are independent ChaCha streams.
pub fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `runs` realizations in parallel and returns their statistics.
///
/// The result depends only on `seed`, not on the thread count: chunks have fixed sizes and
/// streams and are merged in chunk order.
pub fn estimate_batch(
    problem: &MisProblem,
    budgets: &BudgetVector<f64>,
    mode: WeightMode,
    rounding: Rounding,
    normalization: Normalization,
    runs: usize,
    seed: u64,
) -> Result<SampleStats, EstimatorError> {
    check_budgets(problem, budgets)?;
    let chunks = runs.div_ceil(BATCH_CHUNK);
    let parts: Vec<SampleStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c as u64);
            let mut realizer =
                Realizer::new(problem, budgets, mode, rounding, normalization).expect("budgets checked above");
            let n = BATCH_CHUNK.min(runs - c * BATCH_CHUNK);
            let mut s = SampleStats::default();
            for _ in 0..n {
                s.push(realizer.realize(&mut rng));
            }
            s
        })
        .collect();
    Ok(parts.iter().fold(SampleStats::default(), |acc, p| acc.merge(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensitySpec;
    use crate::problem::ProblemSpec;
    use proptest::prelude::*;

    fn problem(subs: &[&str], techs: Vec<DensitySpec>, ind: Vec<Vec<bool>>) -> MisProblem {
        let n_t = techs.len();
        MisProblem::from_spec(ProblemSpec {
            name: None,
            description: None,
            domain: [0.0, 1.0],
            subintegrands: subs.iter().map(|s| s.to_string()).collect(),
            techniques: techs,
            indicator: ind,
            costs: vec![1.0; n_t],
            overhead_cost: 0.0,
            overhead_variance: 0.0,
        })
        .unwrap()
    }

    fn uniform() -> DensitySpec {
        DensitySpec::Uniform { lo: None, hi: None }
    }

    fn budgets(v: &[f64]) -> BudgetVector<f64> {
        BudgetVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho(2.0f64), 0.0);
        assert!((rho(2.5f64) - 0.04).abs() < 1e-15);
        assert_eq!(rho(0.5f64), 1.0);
        assert_eq!(rho(2.5f32), 0.04f32);
    }

    #[test]
    #[should_panic]
    fn rho_rejects_nonpositive() {
        rho(0.0f64);
    }

    #[test]
    fn stochastic_round_examples() {
        assert_eq!(stochastic_round(2.0, 0.0), 2);
        assert_eq!(stochastic_round(2.0, 0.999), 2);
        assert_eq!(stochastic_round(1.25, 0.1), 2);
        assert_eq!(stochastic_round(1.25, 0.9), 1);
    }

    #[test]
    fn low_discrepancy_examples() {
        assert_eq!(low_discrepancy_round(&[0.5, 0.5], 0.3), vec![0, 1]);
        assert_eq!(low_discrepancy_round(&[2.0, 3.0], 0.0), vec![2, 3]);
        assert_eq!(low_discrepancy_round(&[2.0, 3.0], 0.77), vec![2, 3]);
        assert_eq!(low_discrepancy_round(&[1.25, 0.75], 0.9), vec![2, 0]);
    }

    #[test]
    fn budget_vector_validation() {
        assert!(BudgetVector::new(vec![1.0, 0.0]).is_err());
        assert!(BudgetVector::new(vec![1.0, f64::NAN]).is_err());
        assert_eq!(
            budgets(&[0.01, 30.0]).clamped(0.05, 20.0).into_inner(),
            vec![0.05, 20.0]
        );
    }

    #[test]
    fn weight_examples() {
        let p = problem(&["1"], vec![uniform(), uniform()], vec![vec![true, true]]);
        let w = balance_weights(&p, 0.3, WeightMode::BudgetUnaware, &budgets(&[2.0, 1.0])).unwrap();
        assert_eq!(w.row(0), &[0.5, 0.5]);
        let w = balance_weights(&p, 0.3, WeightMode::BudgetAware, &budgets(&[2.0, 1.0])).unwrap();
        assert!((w.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);

        let p = problem(
            &["1", "x"],
            vec![uniform(), DensitySpec::Gaussian { mean: 0.5, std: 0.2 }],
            vec![vec![true, false], vec![true, true]],
        );
        let w = balance_weights(&p, 0.5, WeightMode::BudgetAware, &budgets(&[1.0, 3.0])).unwrap();
        assert_eq!(w.get(0, 1), 0.0);
        assert_eq!(w.get(0, 0), 1.0);
    }

    #[test]
    fn weights_without_density_are_a_domain_error() {
        let p = problem(
            &["box(x, 0, 0.5)"],
            vec![DensitySpec::Uniform {
                lo: Some(0.0),
                hi: Some(0.5),
            }],
            vec![vec![true]],
        );
        let err = balance_weights(&p, 0.75, WeightMode::BudgetUnaware, &budgets(&[1.0])).unwrap_err();
        assert!(matches!(err, EstimatorError::Domain { subintegrand: 0, .. }));
    }

    #[test]
    fn primary_estimate_examples() {
        // f = p for a single technique: perfect importance sampling.
        let p = problem(
            &["gauss(x, 0.5, 0.1) / 0.9999994266968563"],
            vec![DensitySpec::Gaussian { mean: 0.5, std: 0.1 }],
            vec![vec![true]],
        );
        let b = budgets(&[1.0]);
        for x in [0.1, 0.5, 0.77] {
            let w = balance_weights(&p, x, WeightMode::BudgetUnaware, &b).unwrap();
            assert!((primary_estimate(&p, 0, x, &w).unwrap() - 1.0).abs() < 1e-12);
        }

        let p = problem(
            &["2"],
            vec![
                DensitySpec::Uniform {
                    lo: Some(0.0),
                    hi: Some(0.5),
                },
                uniform(),
            ],
            vec![vec![false, true]],
        );
        let w = balance_weights(&p, 0.25, WeightMode::BudgetUnaware, &budgets(&[1.0, 1.0])).unwrap();
        assert_eq!(primary_estimate(&p, 0, 0.25, &w).unwrap(), 0.0);
        assert_eq!(primary_estimate(&p, 1, 0.25, &w).unwrap(), 2.0);
        assert!(matches!(
            primary_estimate(&p, 0, 0.75, &w),
            Err(EstimatorError::SamplingInconsistency { technique: 0, .. })
        ));
    }

    #[test]
    fn primary_estimate_direct_ratio() {
        // f1 = 2 and p_t = 0.5 on [0, 2].
        let p = MisProblem::from_spec(ProblemSpec {
            name: None,
            description: None,
            domain: [0.0, 2.0],
            subintegrands: vec!["2".into()],
            techniques: vec![uniform()],
            indicator: vec![vec![true]],
            costs: vec![1.0],
            overhead_cost: 0.0,
            overhead_variance: 0.0,
        })
        .unwrap();
        let w = balance_weights(&p, 1.0, WeightMode::BudgetUnaware, &budgets(&[1.0])).unwrap();
        assert_eq!(primary_estimate(&p, 0, 1.0, &w).unwrap(), 4.0);
    }

    #[test]
    fn zero_variance_and_constant_estimators() {
        let p = problem(&["1"], vec![uniform()], vec![vec![true]]);
        let mut rng = chunk_rng(7, 0);
        for _ in 0..100 {
            let v = run_estimator(&p, &budgets(&[1.0]), WeightMode::BudgetAware, Rounding::Naive, &mut rng).unwrap();
            assert_eq!(v, 1.0);
        }
        let p = MisProblem::from_spec(ProblemSpec {
            name: None,
            description: None,
            domain: [0.0, 3.0],
            subintegrands: vec!["1.5".into()],
            techniques: vec![uniform()],
            indicator: vec![vec![true]],
            costs: vec![1.0],
            overhead_cost: 0.0,
            overhead_variance: 0.0,
        })
        .unwrap();
        for _ in 0..100 {
            let v = run_estimator(
                &p,
                &budgets(&[2.0]),
                WeightMode::BudgetUnaware,
                Rounding::LowDiscrepancy,
                &mut rng,
            )
            .unwrap();
            assert!((v - 4.5).abs() < 1e-12);
        }
    }

    #[test]
    fn batches_are_seed_deterministic() {
        let p = problem(
            &["x^2"],
            vec![uniform(), DensitySpec::Gaussian { mean: 0.8, std: 0.2 }],
            vec![vec![true, true]],
        );
        let b = budgets(&[0.7, 1.6]);
        let a = estimate_batch(
            &p,
            &b,
            WeightMode::BudgetAware,
            Rounding::Naive,
            Normalization::RealValued,
            20_000,
            3,
        )
        .unwrap();
        let c = estimate_batch(
            &p,
            &b,
            WeightMode::BudgetAware,
            Rounding::Naive,
            Normalization::RealValued,
            20_000,
            3,
        )
        .unwrap();
        assert_eq!(a, c);
        assert_eq!(a.count, 20_000);
        let d = estimate_batch(
            &p,
            &b,
            WeightMode::BudgetAware,
            Rounding::Naive,
            Normalization::RealValued,
            20_000,
            4,
        )
        .unwrap();
        assert_ne!(a.mean, d.mean);
    }

    #[test]
    fn stats_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut all = SampleStats::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = SampleStats::default();
        let mut b = SampleStats::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        let m = a.merge(&b);
        assert_eq!(m.count, all.count);
        assert!((m.mean - all.mean).abs() < 1e-12);
        assert!((m.variance() - all.variance()).abs() < 1e-10);
        let m2 = b.merge(&a);
        assert!((m2.variance() - m.variance()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn stochastic_round_expectation(beta in 0.01f64..40.0) {
            // Midpoint rule over a fine u-grid integrates the step function exactly
            // up to one grid cell.
            let n = 1usize << 16;
            let mean = (0..n).map(|k| stochastic_round(beta, (k as f64 + 0.5) / n as f64) as f64).sum::<f64>() / n as f64;
            prop_assert!((mean - beta).abs() <= 1.0 / n as f64 + 1e-12);
        }

        #[test]
        fn low_discrepancy_totals(bs in proptest::collection::vec(0.0f64..5.0, 1..6), u in 0.0f64..1.0) {
            let g = low_discrepancy_round(&bs, u);
            let total: f64 = bs.iter().sum();
            let gt: u64 = g.iter().sum();
            prop_assert!((gt as f64 - total).abs() < 1.0 + 1e-9);
        }

        #[test]
        fn weights_partition_unity(x in 0.0f64..1.0, b0 in 0.05f64..20.0, b1 in 0.05f64..20.0, b2 in 0.05f64..20.0) {
            let p = problem(
                &["1", "x"],
                vec![uniform(), DensitySpec::Gaussian { mean: 0.3, std: 0.2 }, DensitySpec::Gaussian { mean: 0.9, std: 0.1 }],
                vec![vec![true, true, false], vec![true, true, true]],
            );
            let b = budgets(&[b0, b1, b2]);
            for mode in [WeightMode::BudgetUnaware, WeightMode::BudgetAware] {
                let w = balance_weights(&p, x, mode, &b).unwrap();
                for i in 0..2 {
                    prop_assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                prop_assert_eq!(w.get(0, 2), 0.0);
            }
        }

        #[test]
        fn equal_budgets_make_modes_agree(x in 0.0f64..1.0, b in 0.05f64..20.0) {
            let p = problem(&["x"], vec![uniform(), DensitySpec::Gaussian { mean: 0.3, std: 0.2 }], vec![vec![true, true]]);
            let bv = budgets(&[b, b]);
            let a = balance_weights(&p, x, WeightMode::BudgetAware, &bv).unwrap();
            let u = balance_weights(&p, x, WeightMode::BudgetUnaware, &bv).unwrap();
            for t in 0..2 {
                prop_assert!((a.get(0, t) - u.get(0, t)).abs() <= 1e-15);
            }
        }
    }
}
