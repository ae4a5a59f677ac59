//! Globally adaptive Gauss–Kronrod (G10/K21) quadrature for vector-valued integrands.
//!
//! Every component of the integrand shares one subdivision. An interval is split when its
//! error, measured relative to the tolerance of the worst component, is the largest in the
//! current partition. Breakpoints let callers pre-split at known discontinuities.

use thiserror::Error;

// Tabulated 21-point Gauss-Kronrod nodes and weights, kept at full published precision.

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_926_323_230_534,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the Kronrod nodes at odd indices.
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("quadrature did not converge for component {component}: estimate {estimate:e}, error {error:e}")]
    NonConvergence {
        component: usize,
        estimate: f64,
        error: f64,
    },
    #[error("integrand component {component} is not finite at x = {x}")]
    NonFinite { component: usize, x: f64 },
    #[error("invalid integration interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-13,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureResult {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub intervals: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
}

fn kronrod_panel<F>(f: &mut F, a: f64, b: f64, dim: usize, scratch: &mut [f64]) -> Result<Panel, QuadratureError>
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    let mut eval = |x: f64, scratch: &mut [f64]| -> Result<(), QuadratureError> {
        scratch.iter_mut().for_each(|v| *v = 0.0);
        f(x, scratch);
        if let Some(component) = scratch.iter().position(|v| !v.is_finite()) {
            return Err(QuadratureError::NonFinite { component, x });
        }
        Ok(())
    };

    eval(center, scratch)?;
    for c in 0..dim {
        kronrod[c] += WGK[10] * scratch[c];
    }
    for (j, (&node, &wk)) in XGK[..10].iter().zip(&WGK[..10]).enumerate() {
        let dx = half * node;
        for x in [center - dx, center + dx] {
            eval(x, scratch)?;
            for c in 0..dim {
                kronrod[c] += wk * scratch[c];
                if j % 2 == 1 {
                    gauss[c] += WG[j / 2] * scratch[c];
                }
            }
        }
    }

    let mut value = Vec::with_capacity(dim);
    let mut error = Vec::with_capacity(dim);
    for c in 0..dim {
        let k = kronrod[c] * half;
        let g = gauss[c] * half;
        value.push(k);
        error.push((k - g).abs());
    }
    Ok(Panel { a, b, value, error })
}

/// Integrates a `dim`-component integrand over `[a, b]`, splitting first at `breakpoints`.
///
/// `f(x, out)` must write all components into `out` (which is zeroed before each call).
pub fn integrate_vec<F>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    dim: usize,
    opts: &QuadratureOptions,
) -> Result<QuadratureResult, QuadratureError>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(QuadratureError::InvalidInterval { a, b });
    }
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&p| p > a && p < b).collect();
    cuts.sort_by(f64::total_cmp);
    let min_gap = (b - a) * 1e-12;
    let mut edges = vec![a];
    for c in cuts {
        if c - edges[edges.len() - 1] > min_gap && b - c > min_gap {
            edges.push(c);
        }
    }
    edges.push(b);

    let mut scratch = vec![0.0; dim];
    let mut panels = Vec::with_capacity(edges.len() * 4);
    for w in edges.windows(2) {
        panels.push(kronrod_panel(&mut f, w[0], w[1], dim, &mut scratch)?);
    }

    let mut total = vec![0.0; dim];
    let mut total_err = vec![0.0; dim];
    loop {
        total.iter_mut().for_each(|v| *v = 0.0);
        total_err.iter_mut().for_each(|v| *v = 0.0);
        for p in &panels {
            for c in 0..dim {
                total[c] += p.value[c];
                total_err[c] += p.error[c];
            }
        }
        let tol: Vec<f64> = total
            .iter()
            .map(|v| (opts.rel_tol * v.abs()).max(opts.abs_tol))
            .collect();
        let worst = (0..dim)
            .map(|c| (c, total_err[c] / tol[c]))
            .max_by(|x, y| x.1.total_cmp(&y.1));
        let Some((worst_component, ratio)) = worst else {
            break;
        };
        if ratio <= 1.0 {
            break;
        }
        if panels.len() >= opts.max_intervals {
            return Err(QuadratureError::NonConvergence {
                component: worst_component,
                estimate: total[worst_component],
                error: total_err[worst_component],
            });
        }

        // Split the panel contributing most to the normalized error.
        let (idx, _) = panels
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let score = (0..dim).map(|c| p.error[c] / tol[c]).fold(0.0, f64::max);
                (i, score)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("at least one panel");
        let panel = panels.swap_remove(idx);
        let mid = 0.5 * (panel.a + panel.b);
        if mid <= panel.a || mid >= panel.b {
            return Err(QuadratureError::NonConvergence {
                component: worst_component,
                estimate: total[worst_component],
                error: total_err[worst_component],
            });
        }
        panels.push(kronrod_panel(&mut f, panel.a, mid, dim, &mut scratch)?);
        panels.push(kronrod_panel(&mut f, mid, panel.b, dim, &mut scratch)?);
    }

    Ok(QuadratureResult {
        values: total,
        errors: total_err,
        intervals: panels.len(),
    })
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: &QuadratureOptions,
) -> Result<f64, QuadratureError>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x, out| out[0] = f(x), a, b, breakpoints, 1, opts).map(|r| r.values[0])
}
