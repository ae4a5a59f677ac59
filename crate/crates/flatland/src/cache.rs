//! Quadtree over the scene with per-leaf, per-technique statistics and guide histograms.

use mars_core::fixedpoint::three_case;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::geometry::{wrap_angle, Vec2};

pub const N_TECHNIQUES: usize = 3;
pub const GUIDE_BINS: usize = 16;
/// Uniform share of the guided density, which keeps it positive everywhere.
pub const GUIDE_UNIFORM: f64 = 0.01;
/// Floor on the per-sample cost proxy, guarding the division in the update.
pub const MIN_TECHNIQUE_COST: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Technique {
    Bsdf,
    Nee,
    Guided,
}

impl Technique {
    pub const ALL: [Technique; N_TECHNIQUES] = [Technique::Bsdf, Technique::Nee, Technique::Guided];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Technique::Bsdf => "bsdf",
            Technique::Nee => "nee",
            Technique::Guided => "guided",
        }
    }

    /// NEE only estimates direct light.
    pub fn estimates_indirect(self) -> bool {
        self != Technique::Nee
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accumulator {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub rays: u64,
}

impl Accumulator {
    pub fn push(&mut self, value: f64, rays: u64) {
        self.count += 1;
        self.sum += value;
        self.sum_sq += value * value;
        self.rays += rays;
    }

    pub fn merge(&mut self, o: &Self) {
        self.count += o.count;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.rays += o.rays;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeafStats {
    pub techniques: [Accumulator; N_TECHNIQUES],
    pub guide: [f64; GUIDE_BINS],
}

impl LeafStats {
    pub fn merge(&mut self, o: &Self) {
        for (a, b) in self.techniques.iter_mut().zip(&o.techniques) {
            a.merge(b);
        }
        for (a, b) in self.guide.iter_mut().zip(&o.guide) {
            *a += b;
        }
    }

    pub fn count(&self) -> u64 {
        self.techniques.iter().map(|a| a.count).sum()
    }
}

/// Statistics of one iteration, indexed by leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheStats {
    pub leaves: Vec<LeafStats>,
}

impl CacheStats {
    pub fn new(n_leaves: usize) -> Self {
        Self {
            leaves: vec![LeafStats::default(); n_leaves],
        }
    }

    pub fn merge(&mut self, o: &Self) {
        for (a, b) in self.leaves.iter_mut().zip(&o.leaves) {
            a.merge(b);
        }
    }

    pub fn totals(&self) -> [Accumulator; N_TECHNIQUES] {
        let mut t = [Accumulator::default(); N_TECHNIQUES];
        for leaf in &self.leaves {
            for (a, b) in t.iter_mut().zip(&leaf.techniques) {
                a.merge(b);
            }
        }
        t
    }
}

/// Prefactor-free moments of one technique's primary estimator in a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Learned {
    pub second_moment: f64,
    pub variance: f64,
    /// Average rays traced per sample, including everything the sample spawned.
    pub cost: f64,
}

impl Learned {
    fn from_accumulator(a: &Accumulator) -> Option<Self> {
        if a.count == 0 {
            return None;
        }
        let n = a.count as f64;
        let mean = a.sum / n;
        let second = a.sum_sq / n;
        Some(Self {
            second_moment: second,
            variance: (second - mean * mean).max(0.0),
            cost: (a.rays as f64 / n).max(MIN_TECHNIQUE_COST),
        })
    }
}

/// Angular histogram mixed with a uniform density.
#[derive(Debug, Clone, PartialEq)]
pub struct Guide {
    probs: [f64; GUIDE_BINS],
    cdf: [f64; GUIDE_BINS + 1],
}

impl Default for Guide {
    fn default() -> Self {
        Self::from_weights(&[1.0; GUIDE_BINS]).unwrap()
    }
}

impl Guide {
    /// `None` when the weights carry no mass.
    pub fn from_weights(w: &[f64; GUIDE_BINS]) -> Option<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        let mut probs = [0.0; GUIDE_BINS];
        let mut cdf = [0.0; GUIDE_BINS + 1];
        for k in 0..GUIDE_BINS {
            probs[k] = w[k] / total;
            cdf[k + 1] = cdf[k] + probs[k];
        }
        cdf[GUIDE_BINS] = 1.0;
        Some(Self { probs, cdf })
    }

    pub fn probabilities(&self) -> &[f64; GUIDE_BINS] {
        &self.probs
    }

    pub fn bin(psi: f64) -> usize {
        let a = wrap_angle(psi) + PI;
        ((a / TAU * GUIDE_BINS as f64) as usize).min(GUIDE_BINS - 1)
    }

    pub fn pdf(&self, psi: f64) -> f64 {
        let width = TAU / GUIDE_BINS as f64;
        (1.0 - GUIDE_UNIFORM) * self.probs[Self::bin(psi)] / width + GUIDE_UNIFORM / TAU
    }

    /// World angle from three uniforms.
    pub fn sample(&self, u_mix: f64, u_bin: f64, u_pos: f64) -> f64 {
        if u_mix < GUIDE_UNIFORM {
            return -PI + u_pos * TAU;
        }
        let k = (self.cdf.partition_point(|&c| c <= u_bin) - 1).min(GUIDE_BINS - 1);
        // Zero-probability bins are never selected by the partition point.
        -PI + (k as f64 + u_pos) * TAU / GUIDE_BINS as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub min: Vec2,
    pub max: Vec2,
    pub depth: u32,
    pub learned: [Option<Learned>; N_TECHNIQUES],
    pub guide: Guide,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Leaf(usize),
    Inner { mid: Vec2, children: [usize; 4] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Allocation {
    PerTechnique,
    /// One budget for all techniques from their pooled statistics.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub split_threshold: u64,
    pub max_depth: u32,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            split_threshold: 2000,
            max_depth: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadTree {
    nodes: Vec<Node>,
    leaf_nodes: Vec<usize>,
    leaves: Vec<Leaf>,
    /// `C_I / V_I` of the last iteration with a usable image variance.
    image_ratio: Option<f64>,
}

/// Budgets of one leaf for a unit prefactor, for visualization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeafBudgets {
    pub min: Vec2,
    pub max: Vec2,
    pub budgets: [f64; N_TECHNIQUES],
}

impl QuadTree {
    pub fn new(bounds: (Vec2, Vec2)) -> Self {
        Self {
            nodes: vec![Node::Leaf(0)],
            leaf_nodes: vec![0],
            leaves: vec![Leaf {
                min: bounds.0,
                max: bounds.1,
                depth: 0,
                learned: [None; N_TECHNIQUES],
                guide: Guide::default(),
            }],
            image_ratio: None,
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf(&self, i: usize) -> &Leaf {
        &self.leaves[i]
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn image_ratio(&self) -> Option<f64> {
        self.image_ratio
    }

    pub fn leaf_at(&self, p: Vec2) -> usize {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                Node::Leaf(i) => return i,
                Node::Inner { mid, children } => {
                    node = children[(p.x >= mid.x) as usize | (((p.y >= mid.y) as usize) << 1)];
                }
            }
        }
    }

    /// Budgets at a path vertex, given the prefix prefactor `T / Î_px`.
    ///
    /// Techniques without statistics, or a tree without a usable image ratio, get one sample.
    pub fn budgets(
        &self,
        leaf: usize,
        prefactor: f64,
        allocation: Allocation,
        clamp: (f64, f64),
    ) -> [f64; N_TECHNIQUES] {
        let Some(ratio) = self.image_ratio else {
            return [1.0; N_TECHNIQUES];
        };
        let learned = &self.leaves[leaf].learned;
        let q2 = prefactor * prefactor * ratio;
        let pick = |b: f64| {
            if b.is_finite() {
                b.clamp(clamp.0, clamp.1)
            } else {
                clamp.1
            }
        };
        match allocation {
            Allocation::PerTechnique => {
                learned.map(|l| l.map_or(1.0, |l| pick(three_case(q2 / l.cost, l.second_moment, l.variance))))
            }
            Allocation::Shared => {
                let known: Vec<&Learned> = learned.iter().flatten().collect();
                if known.is_empty() {
                    return [1.0; N_TECHNIQUES];
                }
                let cost: f64 = known.iter().map(|l| l.cost).sum();
                let second: f64 = known.iter().map(|l| l.second_moment).sum();
                let var: f64 = known.iter().map(|l| l.variance).sum();
                [pick(three_case(q2 / cost, second, var)); N_TECHNIQUES]
            }
        }
    }

    pub fn budget_map(&self, allocation: Allocation, clamp: (f64, f64)) -> Vec<LeafBudgets> {
        (0..self.leaves.len())
            .map(|i| LeafBudgets {
                min: self.leaves[i].min,
                max: self.leaves[i].max,
                budgets: self.budgets(i, 1.0, allocation, clamp),
            })
            .collect()
    }

    /// Folds one iteration's statistics into the tree: refreshes moments and guides, then
    /// splits busy leaves. `image` is `(V_I, C_I)`.
    ///
    /// Techniques without samples in a leaf keep their previous moments. A non-positive or
    /// non-finite image variance leaves the image ratio unchanged.
    pub fn update(&mut self, stats: &CacheStats, image: (f64, f64), config: &TreeConfig) {
        assert_eq!(
            stats.leaves.len(),
            self.leaves.len(),
            "statistics belong to another tree"
        );
        let (v_i, c_i) = image;
        let ratio = c_i / v_i;
        if v_i > 0.0 && c_i > 0.0 && ratio.is_finite() {
            self.image_ratio = Some(ratio);
        }
        for (leaf, s) in self.leaves.iter_mut().zip(&stats.leaves) {
            for (l, a) in leaf.learned.iter_mut().zip(&s.techniques) {
                if let Some(new) = Learned::from_accumulator(a) {
                    *l = Some(new);
                }
            }
            if let Some(g) = Guide::from_weights(&s.guide) {
                leaf.guide = g;
            }
        }
        let busy: Vec<usize> = (0..self.leaves.len())
            .filter(|&i| stats.leaves[i].count() > config.split_threshold && self.leaves[i].depth < config.max_depth)
            .collect();
        for i in busy {
            self.split(i);
        }
    }

    fn split(&mut self, i: usize) {
        let parent = self.leaves[i].clone();
        let mid = (parent.min + parent.max) * 0.5;
        let node = self.leaf_nodes[i];
        let mut children = [0; 4];
        for (q, child) in children.iter_mut().enumerate() {
            let (lo_x, hi_x) = if q & 1 == 0 {
                (parent.min.x, mid.x)
            } else {
                (mid.x, parent.max.x)
            };
            let (lo_y, hi_y) = if q & 2 == 0 {
                (parent.min.y, mid.y)
            } else {
                (mid.y, parent.max.y)
            };
            let leaf = Leaf {
                min: Vec2::new(lo_x, lo_y),
                max: Vec2::new(hi_x, hi_y),
                depth: parent.depth + 1,
                ..parent.clone()
            };
            let index = if q == 0 {
                self.leaves[i] = leaf;
                i
            } else {
                self.leaves.push(leaf);
                self.leaf_nodes.push(0);
                self.leaves.len() - 1
            };
            self.nodes.push(Node::Leaf(index));
            self.leaf_nodes[index] = self.nodes.len() - 1;
            *child = self.nodes.len() - 1;
        }
        self.nodes[node] = Node::Inner { mid, children };
    }
}
