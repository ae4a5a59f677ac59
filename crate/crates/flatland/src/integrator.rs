//! Recursive multi-sample estimator of reflected radiance.

use mars_core::estimator::low_discrepancy_round_into;
use mars_core::WeightMode;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{Allocation, Guide, QuadTree, Technique, N_TECHNIQUES};
use crate::geometry::{wrap_angle, Ray, Vec2};
use crate::scene::{Hit, Scene};

/// How a path vertex picks its budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BudgetPolicy {
    /// Learned budgets from the cache, scaled by the prefix prefactor.
    Learned {
        allocation: Allocation,
    },
    Fixed {
        budget: f64,
    },
    /// Throughput roulette from `from_depth` on, one sample per technique before.
    Throughput {
        from_depth: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub policy: BudgetPolicy,
    pub weights: WeightMode,
    /// Deepest vertex that is still shaded; the camera hit is depth 1.
    pub max_depth: u32,
    pub clamp: (f64, f64),
    /// Once a pixel sample has traced this many rays, budgets drop to the clamp floor.
    pub ray_cap: u64,
}

/// One primary-estimate value, for the statistics of its leaf and technique.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub leaf: usize,
    pub technique: Technique,
    pub value: f64,
    pub rays: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuideRecord {
    pub leaf: usize,
    pub bin: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelSample {
    pub value: f64,
    pub rays: u64,
    pub records: Vec<Record>,
    pub guide: Vec<GuideRecord>,
    pub vertices: u64,
    pub budget_sum: [f64; N_TECHNIQUES],
}

/// Per-pixel inputs that stay fixed during an iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelContext {
    /// Pixel estimate used in the `T / Î_px` prefactor.
    pub estimate: f64,
    /// Upper bound on a path contribution `T·v` entering the statistics.
    pub stats_limit: Option<f64>,
}

impl Default for PixelContext {
    fn default() -> Self {
        Self {
            estimate: 1.0,
            stats_limit: None,
        }
    }
}

struct Tracer<'a, R: Rng + ?Sized> {
    scene: &'a Scene,
    tree: &'a QuadTree,
    config: &'a PathConfig,
    pixel: PixelContext,
    rng: &'a mut R,
    out: PixelSample,
}

fn mis_weight(
    mode: WeightMode,
    pdfs: &[f64; N_TECHNIQUES],
    betas: &[f64; N_TECHNIQUES],
    t: usize,
    set: &[usize],
) -> f64 {
    let scaled = |k: usize| match mode {
        WeightMode::BudgetAware => betas[k] * pdfs[k],
        WeightMode::BudgetUnaware => pdfs[k],
    };
    let denom: f64 = set.iter().map(|&k| scaled(k)).sum();
    if denom > 0.0 {
        scaled(t) / denom
    } else {
        0.0
    }
}

const DIRECT: [usize; 3] = [0, 1, 2];
const INDIRECT: [usize; 2] = [0, 2];

impl<R: Rng + ?Sized> Tracer<'_, R> {
    fn budgets(&self, leaf: usize, throughput: f64, depth: u32) -> [f64; N_TECHNIQUES] {
        let (lo, hi) = self.config.clamp;
        let b = match self.config.policy {
            BudgetPolicy::Learned { allocation } => {
                self.tree
                    .budgets(leaf, throughput / self.pixel.estimate, allocation, self.config.clamp)
            }
            BudgetPolicy::Fixed { budget } => [budget; N_TECHNIQUES],
            BudgetPolicy::Throughput { from_depth } => {
                if depth >= from_depth {
                    [throughput.clamp(lo, 1.0); N_TECHNIQUES]
                } else {
                    [1.0; N_TECHNIQUES]
                }
            }
        };
        if self.out.rays > self.config.ray_cap {
            b.map(|x| x.min(lo))
        } else {
            b.map(|x| x.min(hi))
        }
    }

    fn trace(&mut self, ray: &Ray, skip: Option<usize>) -> Option<Hit> {
        self.out.rays += 1;
        self.scene.intersect(ray, skip)
    }

    /// Estimate of reflected radiance at `hit` towards `wo`, for a prefix with throughput `t`.
    fn reflected(&mut self, hit: Hit, wo: Vec2, throughput: f64, depth: u32) -> f64 {
        let scene = self.scene;
        let bsdf = scene.bsdf(hit.segment).expect("emitters do not reflect");
        let mut normal = scene.segment(hit.segment).normal();
        if normal.dot(wo) < 0.0 {
            normal = -normal;
        }
        let frame = normal.angle();
        let theta_o = wrap_angle(wo.angle() - frame);
        let leaf = self.tree.leaf_at(hit.point);
        let guide: &Guide = &self.tree.leaf(leaf).guide;
        let betas = self.budgets(leaf, throughput, depth);
        self.out.vertices += 1;
        for (s, b) in self.out.budget_sum.iter_mut().zip(&betas) {
            *s += b;
        }
        let mut counts = Vec::with_capacity(N_TECHNIQUES);
        low_discrepancy_round_into(&betas, self.rng.random::<f64>(), &mut counts);

        let mut total = 0.0;
        for tech in Technique::ALL {
            let t = tech.index();
            for _ in 0..counts[t] {
                let rays_before = self.out.rays;
                let psi = match tech {
                    Technique::Bsdf => frame + bsdf.sample(theta_o, self.rng.random()),
                    Technique::Nee => {
                        let y = scene.sample_emitter(self.rng.random(), self.rng.random());
                        (y - hit.point).angle()
                    }
                    Technique::Guided => guide.sample(self.rng.random(), self.rng.random(), self.rng.random()),
                };
                let theta_i = wrap_angle(psi - frame);
                let fcos = bsdf.eval_cos(theta_i, theta_o);
                let mut value = 0.0;
                if fcos > 0.0 {
                    let dir = Vec2::from_angle(psi);
                    let ray = Ray { origin: hit.point, dir };
                    let next = self.trace(&ray, Some(hit.segment));
                    let pdfs = [bsdf.pdf(theta_i, theta_o), scene.emitter_pdf(&ray), guide.pdf(psi)];
                    let p = pdfs[t];
                    let incident = match next {
                        _ if p <= 0.0 => None,
                        None => None,
                        Some(h) => match scene.radiance(h.segment) {
                            Some(le) => {
                                value = fcos * le * mis_weight(self.config.weights, &pdfs, &betas, t, &DIRECT) / p;
                                Some(le)
                            }
                            None if tech.estimates_indirect() && depth < self.config.max_depth => {
                                let w = mis_weight(self.config.weights, &pdfs, &betas, t, &INDIRECT);
                                let child = throughput * fcos * w / (p * betas[t]);
                                let lr = self.reflected(h, -dir, child, depth + 1);
                                value = fcos * w * lr / p;
                                Some(lr)
                            }
                            None => None,
                        },
                    };
                    if let Some(li) = incident.filter(|&l| l > 0.0) {
                        self.out.guide.push(GuideRecord {
                            leaf,
                            bin: Guide::bin(psi),
                            weight: fcos * li / p,
                        });
                    }
                }
                let stat = match self.pixel.stats_limit {
                    Some(limit) if throughput > 0.0 => value.min(limit / throughput),
                    _ => value,
                };
                self.out.records.push(Record {
                    leaf,
                    technique: tech,
                    value: stat,
                    rays: self.out.rays - rays_before,
                });
                total += value / betas[t];
            }
        }
        total
    }
}

/// One camera sample through pixel `px`.
pub fn estimate_pixel<R: Rng + ?Sized>(
    scene: &Scene,
    tree: &QuadTree,
    config: &PathConfig,
    pixel: PixelContext,
    px: usize,
    rng: &mut R,
) -> PixelSample {
    let camera = scene.camera();
    let (start, width) = camera.pixel_arc(px);
    let ray = camera.ray(start + width * rng.random::<f64>());
    let mut tracer = Tracer {
        scene,
        tree,
        config,
        pixel,
        rng,
        out: PixelSample::default(),
    };
    let value = match tracer.trace(&ray, None) {
        None => 0.0,
        Some(h) => match scene.radiance(h.segment) {
            Some(le) => le,
            None => tracer.reflected(h, -ray.dir, 1.0, 1),
        },
    };
    PixelSample { value, ..tracer.out }
}
