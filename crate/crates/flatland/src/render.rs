//! Iterative rendering with a budget update at every iteration barrier.

use mars_core::estimator::{chunk_rng, SampleStats};
use mars_core::WeightMode;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Allocation, CacheStats, LeafBudgets, QuadTree, TreeConfig, N_TECHNIQUES};
use crate::image::{image_statistics, relative_variance, ImageAccumulator, ImageStats, RunningEstimate};
use crate::integrator::{estimate_pixel, BudgetPolicy, PathConfig, PixelContext, PixelSample};
use crate::scene::Scene;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("invalid render configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Per-technique budgets learned per leaf.
    Mars,
    /// One learned budget shared by all techniques.
    Shared,
    /// Every technique gets `fixed_budget` samples at every vertex.
    Fixed1,
    /// Throughput roulette from `rr_depth` on, otherwise one sample per technique.
    ClassicRr,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Mars, Mode::Shared, Mode::Fixed1, Mode::ClassicRr];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Mars => "mars",
            Mode::Shared => "shared",
            Mode::Fixed1 => "fixed1",
            Mode::ClassicRr => "classic-rr",
        }
    }
}

/// Length of iteration `k` is `base · 2^k` in the given unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "unit", rename_all = "kebab-case")]
pub enum Schedule {
    /// Samples per pixel.
    Passes { base: u64 },
    /// Traced rays; passes run until the count is reached.
    Rays { base: u64 },
}

impl Schedule {
    fn target(self, k: usize) -> u64 {
        let scale = 1u64 << k.min(62);
        match self {
            Schedule::Passes { base } | Schedule::Rays { base } => base.saturating_mul(scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub mode: Mode,
    pub weights: WeightMode,
    pub seed: u64,
    pub iterations: usize,
    /// Leading iterations that use throughput roulette before learned budgets take over.
    pub warmup_iterations: usize,
    pub schedule: Schedule,
    pub max_depth: u32,
    pub rr_depth: u32,
    pub clamp: (f64, f64),
    /// Path contributions enter the statistics clamped to this multiple of `Î_px`.
    pub stats_clamp: Option<f64>,
    /// Floor on `Î_px` relative to the mean image brightness.
    pub estimate_floor: f64,
    pub fixed_budget: f64,
    pub ray_cap: u64,
    pub tree: TreeConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mars,
            weights: WeightMode::BudgetAware,
            seed: 0,
            iterations: 9,
            warmup_iterations: 3,
            schedule: Schedule::Passes { base: 4 },
            max_depth: 40,
            rr_depth: 5,
            clamp: (0.05, 20.0),
            stats_clamp: Some(50.0),
            estimate_floor: 1e-4,
            fixed_budget: 1.0,
            ray_cap: 1 << 20,
            tree: TreeConfig::default(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let err = |m: String| Err(RenderError::Config(m));
        if self.iterations == 0 {
            return err("at least one iteration is required".into());
        }
        let base = match self.schedule {
            Schedule::Passes { base } | Schedule::Rays { base } => base,
        };
        if base == 0 {
            return err("schedule base must be positive".into());
        }
        if self.max_depth == 0 {
            return err("max_depth must be positive".into());
        }
        let (lo, hi) = self.clamp;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite()) {
            return err(format!("clamp must satisfy 0 < lo <= 1 <= hi, got [{lo}, {hi}]"));
        }
        if let Some(c) = self.stats_clamp {
            if !(c > 0.0) {
                return err(format!("stats_clamp must be positive, got {c}"));
            }
        }
        if !(self.estimate_floor >= 0.0 && self.estimate_floor.is_finite()) {
            return err(format!(
                "estimate_floor must be finite and non-negative, got {}",
                self.estimate_floor
            ));
        }
        if !(self.fixed_budget >= lo && self.fixed_budget <= hi) {
            return err(format!(
                "fixed_budget {} lies outside the clamp range",
                self.fixed_budget
            ));
        }
        Ok(())
    }

    /// Budget policy used in iteration `k`.
    pub fn policy(&self, k: usize) -> BudgetPolicy {
        let rr = BudgetPolicy::Throughput {
            from_depth: self.rr_depth,
        };
        match self.mode {
            Mode::Mars | Mode::Shared if k < self.warmup_iterations => rr,
            Mode::Mars => BudgetPolicy::Learned {
                allocation: Allocation::PerTechnique,
            },
            Mode::Shared => BudgetPolicy::Learned {
                allocation: Allocation::Shared,
            },
            Mode::Fixed1 => BudgetPolicy::Fixed {
                budget: self.fixed_budget,
            },
            Mode::ClassicRr => rr,
        }
    }

    fn path_config(&self, k: usize) -> PathConfig {
        PathConfig {
            policy: self.policy(k),
            weights: self.weights,
            max_depth: self.max_depth,
            clamp: self.clamp,
            ray_cap: self.ray_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub spp: u64,
    #[serde(rename = "V_I")]
    pub variance: f64,
    #[serde(rename = "C_I")]
    pub cost: f64,
    pub inv_efficiency: f64,
    pub rays_total: u64,
    /// Average budget per shaded vertex.
    pub mean_budgets: [f64; N_TECHNIQUES],
    pub technique_samples: [u64; N_TECHNIQUES],
    pub technique_rays: [u64; N_TECHNIQUES],
    pub leaves: usize,
}

/// Everything one iteration produced, before it is folded into the renderer state.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub image: ImageAccumulator,
    pub cache: CacheStats,
    pub vertices: u64,
    pub budget_sum: [f64; N_TECHNIQUES],
}

/// Passes rendered concurrently before merging; results do not depend on it.
const PASS_BATCH_SAMPLES: usize = 4096;

fn stream(iteration: usize, pass: u64, px: usize) -> u64 {
    ((iteration as u64) << 48) | ((pass & 0xff_ffff) << 24) | (px as u64 & 0xff_ffff)
}

#[derive(Debug, Clone)]
pub struct Renderer<'a> {
    scene: &'a Scene,
    config: RenderConfig,
    tree: QuadTree,
    running: RunningEstimate,
    estimate: Option<Vec<f64>>,
    iteration: usize,
    iteration_images: Vec<(Vec<SampleStats>, f64)>,
    reports: Vec<IterationReport>,
    budget_maps: Vec<Vec<LeafBudgets>>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// Inverse-variance weighted combination of the iteration images.
    pub image: Vec<f64>,
    /// Plain mean over all samples, with its standard error.
    pub sample_mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub reports: Vec<IterationReport>,
    /// Leaf budgets for a unit prefactor after every iteration.
    pub budget_maps: Vec<Vec<LeafBudgets>>,
    pub tree: QuadTree,
}

impl<'a> Renderer<'a> {
    pub fn new(scene: &'a Scene, config: RenderConfig) -> Result<Self, RenderError> {
        config.validate()?;
        let n = scene.pixels();
        if n >= 1 << 24 {
            return Err(RenderError::Config("too many pixels".into()));
        }
        Ok(Self {
            scene,
            config,
            tree: QuadTree::new(scene.bounds()),
            running: RunningEstimate::new(n),
            estimate: None,
            iteration: 0,
            iteration_images: Vec::new(),
            reports: Vec::new(),
            budget_maps: Vec::new(),
        })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.config
    }

    pub fn set_stats_clamp(&mut self, c: Option<f64>) {
        self.config.stats_clamp = c;
    }

    pub fn tree(&self) -> &QuadTree {
        &self.tree
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    fn pixel_context(&self, px: usize) -> PixelContext {
        match &self.estimate {
            Some(est) => PixelContext {
                estimate: est[px],
                stats_limit: self.config.stats_clamp.map(|c| c * est[px]),
            },
            None => PixelContext::default(),
        }
    }

    /// Renders the next iteration against the current state without changing it.
    pub fn render_iteration(&self) -> IterationResult {
        let k = self.iteration;
        let n_px = self.scene.pixels();
        let path = self.config.path_config(k);
        let contexts: Vec<PixelContext> = (0..n_px).map(|px| self.pixel_context(px)).collect();
        let target = self.config.schedule.target(k);
        let batch = PASS_BATCH_SAMPLES.div_ceil(n_px).max(1) as u64;
        let mut result = IterationResult {
            image: ImageAccumulator::new(n_px),
            cache: CacheStats::new(self.tree.n_leaves()),
            vertices: 0,
            budget_sum: [0.0; N_TECHNIQUES],
        };
        let mut pass = 0u64;
        let done = |pass: u64, image: &ImageAccumulator| match self.config.schedule {
            Schedule::Passes { .. } => pass >= target,
            Schedule::Rays { .. } => pass > 0 && image.rays >= target,
        };
        while !done(pass, &result.image) {
            let count = match self.config.schedule {
                Schedule::Passes { .. } => batch.min(target - pass),
                Schedule::Rays { .. } => batch,
            };
            let samples: Vec<PixelSample> = (0..count * n_px as u64)
                .into_par_iter()
                .map(|j| {
                    let (p, px) = (pass + j / n_px as u64, (j % n_px as u64) as usize);
                    let mut rng = chunk_rng(self.config.seed, stream(k, p, px));
                    estimate_pixel(self.scene, &self.tree, &path, contexts[px], px, &mut rng)
                })
                .collect();
            for chunk in samples.chunks(n_px) {
                if done(pass, &result.image) {
                    break;
                }
                for (px, s) in chunk.iter().enumerate() {
                    merge_sample(&mut result, px, s, contexts[px].stats_limit);
                }
                pass += 1;
            }
        }
        result
    }

    /// Renders the next iteration and runs the budget update at its barrier.
    pub fn run_iteration(&mut self) -> &IterationReport {
        let result = self.render_iteration();
        self.finish_iteration(result)
    }

    fn finish_iteration(&mut self, result: IterationResult) -> &IterationReport {
        let IterationResult {
            image,
            cache,
            vertices,
            budget_sum,
        } = result;
        self.running.add(&image);
        self.estimate = self.running.estimate(self.config.estimate_floor);
        let stats: ImageStats = image_statistics(&image, self.estimate.as_deref());
        let totals = cache.totals();
        let report = IterationReport {
            iteration: self.iteration,
            spp: image.spp(),
            variance: stats.variance,
            cost: stats.cost,
            inv_efficiency: stats.inv_efficiency(),
            rays_total: image.rays,
            mean_budgets: budget_sum.map(|b| if vertices > 0 { b / vertices as f64 } else { 0.0 }),
            technique_samples: totals.map(|a| a.count),
            technique_rays: totals.map(|a| a.rays),
            leaves: self.tree.n_leaves(),
        };
        self.tree
            .update(&cache, (stats.variance, stats.cost), &self.config.tree);
        let allocation = match self.config.mode {
            Mode::Shared => Allocation::Shared,
            _ => Allocation::PerTechnique,
        };
        self.budget_maps
            .push(self.tree.budget_map(allocation, self.config.clamp));
        let pixels = image.pixels.iter().map(|p| p.image).collect();
        // Raw deviations, so the clamp cannot reach the combined image.
        let rel_var = if image.spp() > 0 {
            relative_variance(&image, self.estimate.as_deref(), false) / image.spp() as f64
        } else {
            f64::INFINITY
        };
        self.iteration_images.push((pixels, rel_var));
        self.iteration += 1;
        self.reports.push(report);
        self.reports.last().unwrap()
    }

    pub fn finish(self) -> RenderOutput {
        let n_px = self.scene.pixels();
        let zero_var = self.iteration_images.iter().any(|(_, v)| *v <= 0.0);
        let weight = |v: f64| match (zero_var, v <= 0.0) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            (false, _) if v.is_finite() => 1.0 / v,
            _ => 0.0,
        };
        let mut image = vec![0.0; n_px];
        let mut wsum = 0.0;
        for (pixels, v) in &self.iteration_images {
            let w = weight(*v);
            if w == 0.0 {
                continue;
            }
            wsum += w;
            for (o, p) in image.iter_mut().zip(pixels) {
                *o += w * p.mean;
            }
        }
        if wsum > 0.0 {
            image.iter_mut().for_each(|o| *o /= wsum);
        }
        let mut sample_mean = vec![0.0; n_px];
        let mut std_err = vec![0.0; n_px];
        for px in 0..n_px {
            let (mut n, mut sum, mut var_sum) = (0u64, 0.0, 0.0);
            for (pixels, _) in &self.iteration_images {
                let p = &pixels[px];
                n += p.count;
                sum += p.mean * p.count as f64;
                var_sum += p.variance() * p.count as f64;
            }
            if n > 0 {
                sample_mean[px] = sum / n as f64;
                std_err[px] = var_sum.sqrt() / n as f64;
            }
        }
        RenderOutput {
            image,
            sample_mean,
            std_err,
            reports: self.reports,
            budget_maps: self.budget_maps,
            tree: self.tree,
        }
    }
}

fn merge_sample(result: &mut IterationResult, px: usize, s: &PixelSample, limit: Option<f64>) {
    let clamped = limit.map_or(s.value, |l| s.value.min(l));
    result.image.push(px, s.value, clamped, s.rays);
    for r in &s.records {
        result.cache.leaves[r.leaf].techniques[r.technique.index()].push(r.value, r.rays);
    }
    for g in &s.guide {
        result.cache.leaves[g.leaf].guide[g.bin] += g.weight;
    }
    result.vertices += s.vertices;
    for (a, b) in result.budget_sum.iter_mut().zip(&s.budget_sum) {
        *a += b;
    }
}

/// Runs the full schedule.
pub fn render(scene: &Scene, config: RenderConfig) -> Result<RenderOutput, RenderError> {
    let mut r = Renderer::new(scene, config)?;
    while !r.is_done() {
        r.run_iteration();
    }
    Ok(r.finish())
}

/// Relative MSE against a reference, discarding the largest `discard` fraction of
/// per-pixel errors. Each error is normalized by `ref² + eps`.
pub fn rel_mse(image: &[f64], reference: &[f64], discard: f64, eps: f64) -> f64 {
    assert_eq!(image.len(), reference.len());
    let mut err: Vec<f64> = image
        .iter()
        .zip(reference)
        .map(|(x, r)| (x - r) * (x - r) / (r * r + eps))
        .collect();
    err.sort_by(f64::total_cmp);
    let keep = err.len() - (err.len() as f64 * discard).floor() as usize;
    err[..keep].iter().sum::<f64>() / keep.max(1) as f64
}

/// Fraction of pixels dropped by [`rel_mse`] as outliers.
pub const OUTLIER_FRACTION: f64 = 1e-4;
