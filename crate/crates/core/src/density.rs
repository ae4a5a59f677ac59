//! Technique sampling densities on a closed 1D interval.

use crate::expr::{Expr, ExprError};
use crate::quadrature::{integrate, QuadratureOptions};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub const DEFAULT_TABLE_CELLS: usize = 2048;

fn default_cells() -> usize {
    DEFAULT_TABLE_CELLS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    /// Uniform over `[lo, hi]`, defaulting to the whole domain.
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
    },
    /// Normal distribution truncated to the domain.
    Gaussian {
        mean: f64,
        std: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
    /// Arbitrary non-negative expression, tabulated as a piecewise-constant density.
    Tabulated {
        expr: String,
        #[serde(default = "default_cells")]
        cells: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub density: DensitySpec,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("uniform range [{lo}, {hi}] is empty or outside the domain")]
    BadUniformRange { lo: f64, hi: f64 },
    #[error("gaussian std must be positive, got {0}")]
    BadStd(f64),
    #[error("gaussian has no mass on the domain (mean {mean}, std {std})")]
    NoMass { mean: f64, std: f64 },
    #[error("mixture weights must be non-negative with a positive sum")]
    BadMixture,
    #[error("tabulated density needs at least 2048 cells, got {0}")]
    TooFewCells(usize),
    #[error("tabulated density has no positive mass")]
    TabulatedZero,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone)]
enum Kind {
    Uniform {
        lo: f64,
        hi: f64,
        inv_width: f64,
    },
    Gaussian {
        mean: f64,
        std: f64,
        norm: f64,
        // Standardized bounds, reflected so the truncation window sits in the lower tail.
        flip: bool,
        cdf_lo: f64,
        mass: f64,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<Density>,
    },
    Table {
        lo: f64,
        cell: f64,
        pdf: Vec<f64>,
        cdf: Vec<f64>,
    },
}

/// A normalized density on `[a, b]` with an exact inverse-CDF sampler.
#[derive(Debug, Clone)]
pub struct Density {
    domain: (f64, f64),
    kind: Kind,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl Density {
    pub fn compile(spec: &DensitySpec, domain: (f64, f64)) -> Result<Self, DensityError> {
        let (a, b) = domain;
        let kind = match spec {
            DensitySpec::Uniform { lo, hi } => {
                let lo = lo.unwrap_or(a);
                let hi = hi.unwrap_or(b);
                if !(lo < hi && lo >= a && hi <= b) {
                    return Err(DensityError::BadUniformRange { lo, hi });
                }
                Kind::Uniform {
                    lo,
                    hi,
                    inv_width: 1.0 / (hi - lo),
                }
            }
            DensitySpec::Gaussian { mean, std } => {
                if !(*std > 0.0 && std.is_finite()) {
                    return Err(DensityError::BadStd(*std));
                }
                let za = (a - mean) / std;
                let zb = (b - mean) / std;
                // Keep the window in the lower tail where the CDF has full relative precision.
                let flip = za > 0.0;
                let (lo, hi) = if flip { (-zb, -za) } else { (za, zb) };
                let n = std_normal();
                let cdf_lo = n.cdf(lo);
                let mass = n.cdf(hi) - cdf_lo;
                if !(mass > 0.0) {
                    return Err(DensityError::NoMass { mean: *mean, std: *std });
                }
                Kind::Gaussian {
                    mean: *mean,
                    std: *std,
                    norm: 1.0 / (std * mass),
                    flip,
                    cdf_lo,
                    mass,
                }
            }
            DensitySpec::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if components.is_empty() || components.iter().any(|c| !(c.weight >= 0.0)) || !(total > 0.0) {
                    return Err(DensityError::BadMixture);
                }
                Kind::Mixture {
                    weights: components.iter().map(|c| c.weight / total).collect(),
                    components: components
                        .iter()
                        .map(|c| Density::compile(&c.density, domain))
                        .collect::<Result<_, _>>()?,
                }
            }
            DensitySpec::Tabulated { expr, cells } => {
                if *cells < DEFAULT_TABLE_CELLS {
                    return Err(DensityError::TooFewCells(*cells));
                }
                let e = Expr::parse(expr)?;
                let cell = (b - a) / *cells as f64;
                let opts = QuadratureOptions {
                    rel_tol: 1e-10,
                    ..Default::default()
                };
                let bps = e.breakpoints();
                let mut mass = Vec::with_capacity(*cells);
                for k in 0..*cells {
                    let x0 = a + k as f64 * cell;
                    let m = integrate(|x| e.eval(x).max(0.0), x0, x0 + cell, &bps, &opts).unwrap_or(0.0);
                    mass.push(m.max(0.0));
                }
                let total: f64 = mass.iter().sum();
                if !(total > 0.0 && total.is_finite()) {
                    return Err(DensityError::TabulatedZero);
                }
                let mut cdf = Vec::with_capacity(cells + 1);
                cdf.push(0.0);
                let mut acc = 0.0;
                for m in &mass {
                    acc += m / total;
                    cdf.push(acc);
                }
                *cdf.last_mut().expect("non-empty") = 1.0;
                Kind::Table {
                    lo: a,
                    cell,
                    pdf: mass.iter().map(|m| m / total / cell).collect(),
                    cdf,
                }
            }
        };
        Ok(Self { domain, kind })
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.domain.0 || x > self.domain.1 {
            return 0.0;
        }
        match &self.kind {
            Kind::Uniform { lo, hi, inv_width } => {
                if x >= *lo && x <= *hi {
                    *inv_width
                } else {
                    0.0
                }
            }
            Kind::Gaussian { mean, std, norm, .. } => {
                let z = (x - mean) / std;
                norm * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
            }
            Kind::Mixture { weights, components } => weights.iter().zip(components).map(|(w, c)| w * c.pdf(x)).sum(),
            Kind::Table { lo, cell, pdf, .. } => {
                let k = (((x - lo) / cell) as usize).min(pdf.len() - 1);
                pdf[k]
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            Kind::Mixture { weights, components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w;
                    if u < acc {
                        return c.sample(rng);
                    }
                }
                components.last().expect("non-empty mixture").sample(rng)
            }
            _ => self.invert(rng.random()),
        }
    }

    /// Inverse CDF for the non-mixture kinds.
    fn invert(&self, u: f64) -> f64 {
        let (a, b) = self.domain;
        let x = match &self.kind {
            Kind::Uniform { lo, hi, .. } => lo + u * (hi - lo),
            Kind::Gaussian {
                mean,
                std,
                flip,
                cdf_lo,
                mass,
                ..
            } => {
                let p = (cdf_lo + u * mass).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                let z = std_normal().inverse_cdf(p);
                let z = if *flip { -z } else { z };
                mean + std * z
            }
            Kind::Table { lo, cell, cdf, .. } => {
                // Last k with cdf[k] <= u, so cdf[k] <= u < cdf[k + 1] and the cell has mass.
                let k = (cdf.partition_point(|&c| c <= u) - 1).min(cdf.len() - 2);
                let width = cdf[k + 1] - cdf[k];
                let frac = if width > 0.0 { (u - cdf[k]) / width } else { 0.5 };
                lo + (k as f64 + frac) * cell
            }
            Kind::Mixture { .. } => unreachable!("mixtures sample through their components"),
        };
        x.clamp(a, b)
    }

    /// Points where the density may be discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Uniform { lo, hi, .. } => vec![*lo, *hi],
            Kind::Gaussian { .. } => Vec::new(),
            Kind::Mixture { components, .. } => components.iter().flat_map(Density::breakpoints).collect(),
            Kind::Table { lo, cell, pdf, .. } => (0..=pdf.len()).map(|k| lo + k as f64 * cell).collect(),
        }
    }

    /// Total mass over the domain by adaptive quadrature.
    pub fn total_mass(&self) -> f64 {
        let opts = QuadratureOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_intervals: 20_000,
        };
        integrate(
            |x| self.pdf(x),
            self.domain.0,
            self.domain.1,
            &self.breakpoints(),
            &opts,
        )
        .unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn compile(spec: DensitySpec) -> Density {
        Density::compile(&spec, (0.0, 1.0)).unwrap()
    }

    fn check_sampler(d: &Density, seed: u64) {
        // Kolmogorov–Smirnov style check against the quadrature CDF on a coarse grid.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200_000;
        let mut xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let x = xs[(q * n as f64) as usize];
            let cdf = integrate(|t| d.pdf(t), 0.0, x, &d.breakpoints(), &QuadratureOptions::default()).unwrap();
            assert!((cdf - q).abs() < 5e-3, "q={q} cdf={cdf}");
        }
    }

    #[test]
    fn every_kind_is_normalized() {
        let specs = vec![
            DensitySpec::Uniform { lo: None, hi: None },
            DensitySpec::Uniform {
                lo: Some(0.2),
                hi: Some(0.6),
            },
            DensitySpec::Gaussian { mean: 0.3, std: 0.1 },
            DensitySpec::Gaussian { mean: 1.8, std: 0.2 },
            DensitySpec::Mixture {
                components: vec![
                    MixtureComponent {
                        weight: 1.0,
                        density: DensitySpec::Gaussian { mean: 0.2, std: 0.05 },
                    },
                    MixtureComponent {
                        weight: 3.0,
                        density: DensitySpec::Uniform { lo: None, hi: None },
                    },
                ],
            },
            DensitySpec::Tabulated {
                expr: "1 + sin(6 * x)^2".into(),
                cells: 2048,
            },
        ];
        for s in specs {
            let d = compile(s.clone());
            assert!((d.total_mass() - 1.0).abs() < 1e-6, "{s:?}");
        }
    }

    #[test]
    fn samplers_match_their_densities() {
        check_sampler(&compile(DensitySpec::Gaussian { mean: 0.3, std: 0.1 }), 1);
        check_sampler(&compile(DensitySpec::Gaussian { mean: 1.5, std: 0.3 }), 2);
        check_sampler(
            &compile(DensitySpec::Tabulated {
                expr: "x^2".into(),
                cells: 4096,
            }),
            3,
        );
        check_sampler(
            &compile(DensitySpec::Mixture {
                components: vec![
                    MixtureComponent {
                        weight: 0.5,
                        density: DensitySpec::Uniform {
                            lo: Some(0.0),
                            hi: Some(0.5),
                        },
                    },
                    MixtureComponent {
                        weight: 0.5,
                        density: DensitySpec::Gaussian { mean: 0.7, std: 0.1 },
                    },
                ],
            }),
            4,
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let dom = (0.0, 1.0);
        assert!(Density::compile(&DensitySpec::Gaussian { mean: 0.0, std: 0.0 }, dom).is_err());
        assert!(Density::compile(
            &DensitySpec::Uniform {
                lo: Some(0.5),
                hi: Some(1.5)
            },
            dom
        )
        .is_err());
        assert!(Density::compile(&DensitySpec::Mixture { components: vec![] }, dom).is_err());
        assert!(Density::compile(
            &DensitySpec::Tabulated {
                expr: "x".into(),
                cells: 16
            },
            dom
        )
        .is_err());
        assert!(Density::compile(
            &DensitySpec::Tabulated {
                expr: "0 * x".into(),
                cells: 2048
            },
            dom
        )
        .is_err());
    }

    #[test]
    fn pdf_vanishes_outside_the_domain() {
        let d = compile(DensitySpec::Gaussian { mean: 0.5, std: 1.0 });
        assert_eq!(d.pdf(-0.01), 0.0);
        assert_eq!(d.pdf(1.01), 0.0);
        assert!(d.pdf(0.5) > 0.0);
    }

    #[test]
    fn spec_json_round_trip() {
        let json = r#"{"kind":"mixture","components":[{"weight":1,"density":{"kind":"gaussian","mean":0.5,"std":0.1}},{"weight":1,"density":{"kind":"uniform"}}]}"#;
        let spec: DensitySpec = serde_json::from_str(json).unwrap();
        let back: DensitySpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, back);
    }
}
