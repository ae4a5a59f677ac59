//! Reflection lobes over the local angle θ, measured from the normal on the viewer's side.
//!
//! `eval_cos` returns `f(θ_i, θ_o) |cos θ_i|`, the quantity every estimator multiplies by.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::geometry::wrap_angle;

const LOBE_BINS: usize = 512;

/// Piecewise-constant `cos^n` lobe over `[-π/2, π/2]`.
///
/// The tabulated density is the lobe itself, so sampling and evaluation agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Lobe {
    exponent: f64,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

impl Lobe {
    pub fn new(exponent: f64) -> Self {
        let width = PI / LOBE_BINS as f64;
        let mass: Vec<f64> = (0..LOBE_BINS)
            .map(|k| {
                // Simpson over the bin.
                let lo = -FRAC_PI_2 + k as f64 * width;
                let f = |x: f64| x.cos().max(0.0).powf(exponent);
                width / 6.0 * (f(lo) + 4.0 * f(lo + 0.5 * width) + f(lo + width))
            })
            .collect();
        let total: f64 = mass.iter().sum();
        let mut cdf = Vec::with_capacity(LOBE_BINS + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for m in &mass {
            acc += m / total;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        let density = mass.iter().map(|m| m / total / width).collect();
        Self { exponent, density, cdf }
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    fn bin(phi: f64) -> Option<usize> {
        if !(-FRAC_PI_2..FRAC_PI_2).contains(&phi) {
            return None;
        }
        let k = ((phi + FRAC_PI_2) / PI * LOBE_BINS as f64) as usize;
        Some(k.min(LOBE_BINS - 1))
    }

    pub fn pdf(&self, phi: f64) -> f64 {
        Self::bin(phi).map_or(0.0, |k| self.density[k])
    }

    pub fn sample(&self, u: f64) -> f64 {
        let k = (self.cdf.partition_point(|&c| c <= u) - 1).min(LOBE_BINS - 1);
        let span = self.cdf[k + 1] - self.cdf[k];
        let frac = if span > 0.0 { (u - self.cdf[k]) / span } else { 0.5 };
        -FRAC_PI_2 + (k as f64 + frac.clamp(0.0, 1.0)) * PI / LOBE_BINS as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bsdf {
    Diffuse {
        albedo: f64,
    },
    /// Lobe around the mirror direction; the part below the surface is absorbed.
    Glossy {
        albedo: f64,
        lobe: Lobe,
    },
}

fn above(theta: f64) -> bool {
    theta.abs() < FRAC_PI_2
}

impl Bsdf {
    pub fn albedo(&self) -> f64 {
        match self {
            Bsdf::Diffuse { albedo } | Bsdf::Glossy { albedo, .. } => *albedo,
        }
    }

    pub fn eval_cos(&self, theta_i: f64, theta_o: f64) -> f64 {
        if !above(theta_i) {
            return 0.0;
        }
        match self {
            Bsdf::Diffuse { albedo } => 0.5 * albedo * theta_i.cos(),
            Bsdf::Glossy { albedo, lobe } => albedo * lobe.pdf(wrap_angle(theta_i + theta_o)),
        }
    }

    pub fn pdf(&self, theta_i: f64, theta_o: f64) -> f64 {
        match self {
            Bsdf::Diffuse { .. } => {
                if above(theta_i) {
                    0.5 * theta_i.cos()
                } else {
                    0.0
                }
            }
            Bsdf::Glossy { lobe, .. } => lobe.pdf(wrap_angle(theta_i + theta_o)),
        }
    }

    pub fn sample(&self, theta_o: f64, u: f64) -> f64 {
        match self {
            Bsdf::Diffuse { .. } => (2.0 * u - 1.0).clamp(-1.0, 1.0).asin(),
            Bsdf::Glossy { lobe, .. } => wrap_angle(lobe.sample(u) - theta_o),
        }
    }
}
