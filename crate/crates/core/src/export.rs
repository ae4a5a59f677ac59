//! CSV writers for landscapes, gradient maps and solver trajectories.

use crate::efficiency::GradientPoint;
use crate::fixedpoint::TrajectoryPoint;
use crate::oracle::LandscapePoint;
use std::io::Write;

fn beta_columns(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|t| format!("beta_{t}"))
}

fn row(beta: &[f64], rest: &[f64]) -> Vec<String> {
    beta.iter().chain(rest).map(|v| format!("{v:e}")).collect()
}

/// Columns `beta_1..beta_n, variance, cost, inv_efficiency`.
pub fn write_landscape<W: Write>(out: W, n_t: usize, points: &[LandscapePoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(beta_columns(n_t).chain(["variance", "cost", "inv_efficiency"].map(String::from)))?;
    for p in points {
        w.write_record(row(&p.beta, &[p.variance, p.cost, p.inv_efficiency]))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `beta_1..beta_n, dot_product`.
pub fn write_gradient_map<W: Write>(out: W, n_t: usize, points: &[GradientPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(beta_columns(n_t).chain([String::from("dot_product")]))?;
    for p in points {
        w.write_record(row(&p.beta, &[p.dot_product]))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `iteration, beta_1..beta_n, variance, cost, inv_efficiency`.
pub fn write_trajectory<W: Write>(out: W, n_t: usize, points: &[TrajectoryPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(
        std::iter::once(String::from("iteration"))
            .chain(beta_columns(n_t))
            .chain(["variance", "cost", "inv_efficiency"].map(String::from)),
    )?;
    for p in points {
        let mut r = vec![p.iteration.to_string()];
        r.extend(row(&p.beta, &[p.variance, p.cost, p.inv_efficiency]));
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
