//! Efficiency-optimal sample budgets for multi-sample multiple importance sampling.
//!
//! The closed-form variance, cost and update formulas are generic over [`Real`]; anything that
//! integrates or samples (moments, landscapes, the estimator itself) works in `f64`.

pub mod corpus;
pub mod density;
pub mod efficiency;
pub mod estimator;
pub mod export;
pub mod expr;
pub mod fixedpoint;
pub mod oracle;
pub mod problem;
pub mod quadrature;
pub mod scalar;

pub use efficiency::{Evaluator, TechniqueStats, VarianceModel};
pub use estimator::{BudgetVector, Normalization, Rounding, WeightMode};
pub use problem::{MisProblem, ProblemSpec};
pub use scalar::Real;

pub type Budgets = BudgetVector<f64>;
pub type Budgets32 = BudgetVector<f32>;
pub type Stats = TechniqueStats<f64>;
pub type Stats32 = TechniqueStats<f32>;
