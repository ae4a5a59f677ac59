//! A 2D light transport testbed for spatially varying per-technique budgets.
//!
//! Paths start at a 1D camera and, at every surface hit, combine BSDF sampling, next event
//! estimation and guided sampling with low-discrepancy rounded budgets looked up in a
//! quadtree. Budgets are re-derived from per-leaf statistics after every iteration.

pub mod cache;
pub mod geometry;
pub mod image;
pub mod integrator;
pub mod material;
pub mod output;
pub mod render;
pub mod scene;

pub use cache::{Allocation, QuadTree, Technique};
pub use integrator::{estimate_pixel, BudgetPolicy, PathConfig, PixelContext, PixelSample};
pub use render::{rel_mse, render, IterationReport, Mode, RenderConfig, RenderOutput, Renderer, Schedule};
pub use scene::{Scene, SceneError, SceneSpec};
