//! `mars`: landscapes, solver runs, gradient checks, variance studies and flatland renders.
//!
//! Every command writes its outputs plus a `manifest.json` with the resolved configuration
//! into `--out`. Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
//! numerics fail to converge.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mars_core::efficiency::{gradient_agreement_map, low_discrepancy_variance, secondary_variance, FD_REL_STEP};
use mars_core::estimator::estimate_batch;
use mars_core::fixedpoint::{solve, FixedPointError, SolverConfig, DEFAULT_CLAMP};
use mars_core::oracle::{run_oracle, GridSpec, Spacing};
use mars_core::{corpus, export, Budgets, Evaluator, MisProblem, Normalization, Rounding, VarianceModel, WeightMode};
use mars_flatland::{output, Mode, RenderConfig, Renderer, Scene, Schedule};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "mars",
    version,
    about = "Efficiency-optimal sample budgets for multi-sample MIS"
)]
struct Cli {
    /// Seed for every random stream; required by stochastic commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inverse-efficiency landscape over a budget grid, with restricted baselines.
    Landscape {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Fixed-point iteration from an initial budget vector.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Initial budgets, comma separated (default: all ones).
        #[arg(long, value_delimiter = ',')]
        init: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Disable the budget clamp.
        #[arg(long)]
        no_clamp: bool,
        /// One common budget for all techniques.
        #[arg(long)]
        shared: bool,
    },
    /// Agreement between proxy and finite-difference gradients over a grid.
    Gradcheck {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = FD_REL_STEP)]
        rel_step: f64,
    },
    /// Render a flatland scene.
    Render(RenderArgs),
    /// Variance models against the empirical estimator variance.
    VarianceStudy {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Budget vector, comma separated; repeat for several rows.
        #[arg(long = "beta", value_delimiter = ',', required = true)]
        beta: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        runs: usize,
    },
    /// Grid search plus polished optimum for one or more problems (default: the whole corpus).
    Oracle {
        /// Corpus names or problem files.
        problems: Vec<String>,
        #[arg(long, default_value = "budget-unaware", value_parser = kebab::<WeightMode>)]
        weights: WeightMode,
        #[arg(long, default_value = "simplified", value_parser = kebab::<VarianceModel>)]
        model: VarianceModel,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Corpus name or path to a problem JSON file.
    problem: String,
    /// budget-unaware or budget-aware.
    #[arg(long, default_value = "budget-unaware", value_parser = kebab::<WeightMode>)]
    weights: WeightMode,
    /// exact-stochastic, simplified or nearest-rounding.
    #[arg(long, default_value = "simplified", value_parser = kebab::<VarianceModel>)]
    model: VarianceModel,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, default_value_t = GridSpec::default().lo)]
    lo: f64,
    #[arg(long, default_value_t = GridSpec::default().hi)]
    hi: f64,
    #[arg(long, default_value_t = GridSpec::default().resolution)]
    resolution: usize,
    /// log or linear.
    #[arg(long, default_value = "log", value_parser = kebab::<Spacing>)]
    spacing: Spacing,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        let g = GridSpec {
            lo: self.lo,
            hi: self.hi,
            resolution: self.resolution,
            spacing: self.spacing,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Scene JSON file.
    scene: PathBuf,
    /// Render configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mars, shared, fixed1 or classic-rr.
    #[arg(long, value_parser = kebab::<Mode>)]
    mode: Option<Mode>,
    /// Samples per pixel of the first iteration; doubles every iteration.
    #[arg(long, conflicts_with = "rays")]
    passes: Option<u64>,
    /// Traced rays of the first iteration; doubles every iteration.
    #[arg(long)]
    rays: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// budget-aware or budget-unaware.
    #[arg(long, value_parser = kebab::<WeightMode>)]
    weights: Option<WeightMode>,
    /// Learn budgets from unclamped statistics.
    #[arg(long)]
    no_stats_clamp: bool,
    #[arg(long)]
    max_depth: Option<u32>,
    /// Side length of the per-iteration budget images.
    #[arg(long, default_value_t = 256)]
    budget_resolution: u32,
}

/// Parses a kebab-case value through its serde representation.
fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct NonConvergence(String);

impl std::fmt::Display for NonConvergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NonConvergence {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            if e.downcast_ref::<NonConvergence>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let out = prepare_out(&cli.out)?;
    let ctx = Run {
        out,
        seed: cli.seed,
        workers: cli.workers,
    };
    match cli.command {
        Command::Landscape { problem, grid } => landscape(&ctx, &problem, &grid),
        Command::Solve {
            problem,
            init,
            max_iterations,
            tolerance,
            no_clamp,
            shared,
        } => {
            let config = SolverConfig {
                max_iterations,
                tolerance,
                clamp: (!no_clamp).then_some(DEFAULT_CLAMP),
                shared_budget: shared,
            };
            solve_cmd(&ctx, &problem, init, config)
        }
        Command::Gradcheck {
            problem,
            grid,
            rel_step,
        } => gradcheck(&ctx, &problem, &grid, rel_step),
        Command::Render(args) => render_cmd(&ctx, &args),
        Command::VarianceStudy { problem, beta, runs } => variance_study(&ctx, &problem, &beta, runs),
        Command::Oracle {
            problems,
            weights,
            model,
            grid,
        } => oracle_cmd(&ctx, &problems, weights, model, &grid),
    }
}

struct Run {
    out: PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| anyhow!("`{command}` is stochastic and needs --seed"))
    }

    fn manifest(&self, command: &str, config: serde_json::Value) -> Result<()> {
        let m = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "workers": self.workers,
            "config": config,
        });
        write_json(&self.path("manifest.json"), &m)
    }
}

fn prepare_out(out: &Path) -> Result<PathBuf> {
    if out.exists() && !out.is_dir() {
        bail!("output path {} exists and is not a directory", out.display());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let probe = out.join(".write-test");
    File::create(&probe).with_context(|| format!("{} is not writable", out.display()))?;
    fs::remove_file(&probe)?;
    Ok(out.to_path_buf())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)?;
    Ok(())
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_problem(source: &str) -> Result<MisProblem> {
    let path = Path::new(source);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {source}"))?;
        return MisProblem::from_json(&text).with_context(|| format!("invalid problem file {source}"));
    }
    match corpus::load(source) {
        Some(p) => Ok(p?),
        None => {
            let names: Vec<&str> = corpus::SOURCES.iter().map(|(n, _)| *n).collect();
            bail!(
                "`{source}` is neither a file nor a corpus problem ({})",
                names.join(", ")
            )
        }
    }
}

fn problem_config(p: &MisProblem, args: &ProblemArgs) -> serde_json::Value {
    json!({
        "problem": p.spec(),
        "source": args.problem,
        "weights": args.weights,
        "model": args.model,
    })
}

fn landscape(ctx: &Run, args: &ProblemArgs, grid: &GridArgs) -> Result<()> {
    let p = load_problem(&args.problem)?;
    let grid = grid.spec()?;
    ctx.manifest(
        "landscape",
        json!({ "problem": problem_config(&p, args), "grid": grid }),
    )?;
    let eval = Evaluator::new(&p, args.weights, args.model);
    let (summary, result) = run_oracle(&eval, &grid)?;
    export::write_landscape(
        csv_file(&ctx.path("landscape.csv"))?,
        p.n_techniques(),
        &result.landscape,
    )?;
    let s = json!({
        "problem": p.name(),
        "unconstrained": { "beta": summary.argmin, "inv_efficiency": summary.min },
        "grid_min": summary.grid_min,
        "baselines": summary.baselines,
    });
    write_json(&ctx.path("summary.json"), &s)?;
    println!(
        "{}: optimum {:?} with inverse efficiency {:.6e}",
        p.name(),
        summary.argmin,
        summary.min
    );
    Ok(())
}

fn solve_cmd(ctx: &Run, args: &ProblemArgs, init: Vec<f64>, config: SolverConfig) -> Result<()> {
    let p = load_problem(&args.problem)?;
    let init = if init.is_empty() {
        vec![1.0; p.n_techniques()]
    } else {
        init
    };
    if init.len() != p.n_techniques() {
        bail!(
            "--init has {} budgets but {} has {} techniques",
            init.len(),
            p.name(),
            p.n_techniques()
        );
    }
    config.validate()?;
    ctx.manifest(
        "solve",
        json!({ "problem": problem_config(&p, args), "init": init, "solver": config }),
    )?;
    let eval = Evaluator::new(&p, args.weights, args.model);
    let n_t = p.n_techniques();
    let (trajectory, converged, note) = match solve(&eval, &init, &config) {
        Ok(s) => (s.trajectory, s.converged, None),
        Err(FixedPointError::Oscillation { streak, trajectory }) => {
            (trajectory, false, Some(format!("oscillation over {streak} iterations")))
        }
        Err(e @ FixedPointError::Degenerate { .. }) => return Err(NonConvergence(e.to_string()).into()),
        Err(e) => return Err(e.into()),
    };
    export::write_trajectory(csv_file(&ctx.path("trajectory.csv"))?, n_t, &trajectory)?;
    let last = trajectory.last().expect("trajectory holds the initial point");
    write_json(
        &ctx.path("solution.json"),
        &json!({
            "problem": p.name(),
            "converged": converged,
            "iterations": last.iteration,
            "beta": last.beta,
            "inv_efficiency": last.inv_efficiency,
            "note": note,
        }),
    )?;
    println!(
        "{}: beta {:?}, inverse efficiency {:.6e}",
        p.name(),
        last.beta,
        last.inv_efficiency
    );
    if !converged {
        let why = note.unwrap_or_else(|| format!("no convergence within {} iterations", config.max_iterations));
        return Err(NonConvergence(why).into());
    }
    Ok(())
}

fn gradcheck(ctx: &Run, args: &ProblemArgs, grid: &GridArgs, rel_step: f64) -> Result<()> {
    let p = load_problem(&args.problem)?;
    let grid = grid.spec()?;
    if !(rel_step > 0.0 && rel_step < 0.1) {
        bail!("--rel-step must lie in (0, 0.1), got {rel_step}");
    }
    ctx.manifest(
        "gradcheck",
        json!({ "problem": problem_config(&p, args), "grid": grid, "rel_step": rel_step }),
    )?;
    let eval = Evaluator::new(&p, args.weights, args.model);
    let map = gradient_agreement_map(&eval, &grid, rel_step)?;
    export::write_gradient_map(csv_file(&ctx.path("gradient.csv"))?, p.n_techniques(), &map)?;
    let dots: Vec<f64> = map.iter().map(|g| g.dot_product).collect();
    let positive = dots.iter().filter(|&&d| d > 0.0).count() as f64 / dots.len() as f64;
    let min = dots.iter().copied().fold(f64::INFINITY, f64::min);
    let max = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = dots.iter().sum::<f64>() / dots.len() as f64;
    write_json(
        &ctx.path("summary.json"),
        &json!({
            "problem": p.name(),
            "points": dots.len(),
            "fraction_positive": positive,
            "min": min,
            "max": max,
            "mean": mean,
        }),
    )?;
    println!(
        "{}: {:.1}% positive, dot products in [{min:.6}, {max:.6}]",
        p.name(),
        100.0 * positive
    );
    Ok(())
}

fn parse_betas(values: &[f64], n_t: usize) -> Result<Vec<Vec<f64>>> {
    // clap flattens repeated flags, so rebuild rows of n_t values.
    if !values.len().is_multiple_of(n_t) {
        bail!("--beta values must come in groups of {n_t}, got {}", values.len());
    }
    let rows: Vec<Vec<f64>> = values.chunks(n_t).map(<[f64]>::to_vec).collect();
    for r in &rows {
        Budgets::new(r.clone())?;
    }
    Ok(rows)
}

fn variance_study(ctx: &Run, args: &ProblemArgs, beta: &[f64], runs: usize) -> Result<()> {
    let seed = ctx.seed("variance-study")?;
    let p = load_problem(&args.problem)?;
    let rows = parse_betas(beta, p.n_techniques())?;
    if runs < 2 {
        bail!("--runs must be at least 2");
    }
    ctx.manifest(
        "variance-study",
        json!({ "problem": problem_config(&p, args), "beta": rows, "runs": runs }),
    )?;
    let eval = Evaluator::new(&p, args.weights, VarianceModel::ExactStochastic);
    let mut w = csv::Writer::from_writer(csv_file(&ctx.path("variance.csv"))?);
    w.write_record([
        "beta",
        "exact",
        "simplified",
        "nearest",
        "low_discrepancy",
        "empirical",
        "empirical_nearest",
        "empirical_low_discrepancy",
        "rel_error_exact",
    ])?;
    for (i, b) in rows.iter().enumerate() {
        let stats = eval.moments(b)?;
        // The overhead variance is not part of the estimator, so models cover techniques only.
        let model = |m| {
            stats
                .iter()
                .zip(b)
                .map(|(s, &bt)| secondary_variance(s, bt, m))
                .sum::<f64>()
        };
        let exact = model(VarianceModel::ExactStochastic);
        let budgets = Budgets::new(b.clone())?;
        let stream = seed.wrapping_add(3 * i as u64);
        let run = |rounding, norm, s| estimate_batch(&p, &budgets, args.weights, rounding, norm, runs, s);
        let naive = run(Rounding::Naive, Normalization::RealValued, stream)?;
        let nearest = run(Rounding::Naive, Normalization::RoundedCount, stream + 1)?;
        let ld = run(Rounding::LowDiscrepancy, Normalization::RealValued, stream + 2)?;
        let joined: Vec<String> = b.iter().map(f64::to_string).collect();
        w.write_record([
            joined.join(";"),
            exact.to_string(),
            model(VarianceModel::Simplified).to_string(),
            model(VarianceModel::NearestRounding).to_string(),
            low_discrepancy_variance(&stats, b).to_string(),
            naive.variance().to_string(),
            nearest.variance().to_string(),
            ld.variance().to_string(),
            (naive.variance() / exact - 1.0).to_string(),
        ])?;
    }
    w.flush()?;
    println!("{}: {} budget vectors, {runs} runs each", p.name(), rows.len());
    Ok(())
}

fn oracle_cmd(
    ctx: &Run,
    problems: &[String],
    weights: WeightMode,
    model: VarianceModel,
    grid: &GridArgs,
) -> Result<()> {
    let grid = grid.spec()?;
    let loaded: Vec<MisProblem> = if problems.is_empty() {
        corpus::all()?
    } else {
        problems.iter().map(|s| load_problem(s)).collect::<Result<_>>()?
    };
    let specs: Vec<_> = loaded.iter().map(MisProblem::spec).collect();
    ctx.manifest(
        "oracle",
        json!({ "problems": specs, "weights": weights, "model": model, "grid": grid }),
    )?;
    let mut results = Vec::new();
    for p in &loaded {
        let eval = Evaluator::new(p, weights, model);
        let (summary, _) = run_oracle(&eval, &grid)?;
        println!(
            "{}: optimum {:?} with inverse efficiency {:.6e}",
            p.name(),
            summary.argmin,
            summary.min
        );
        results.push(json!({ "problem": p.name(), "summary": summary }));
    }
    write_json(&ctx.path("summary.json"), &results)
}

fn render_config(args: &RenderArgs, seed: u64) -> Result<RenderConfig> {
    let mut config: RenderConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid render config {}", path.display()))?
        }
        None => RenderConfig::default(),
    };
    config.seed = seed;
    if let Some(m) = args.mode {
        config.mode = m;
    }
    if let Some(base) = args.passes {
        config.schedule = Schedule::Passes { base };
    }
    if let Some(base) = args.rays {
        config.schedule = Schedule::Rays { base };
    }
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if let Some(w) = args.weights {
        config.weights = w;
    }
    if let Some(d) = args.max_depth {
        config.max_depth = d;
    }
    if args.no_stats_clamp {
        config.stats_clamp = None;
    }
    config.validate()?;
    Ok(config)
}

fn render_cmd(ctx: &Run, args: &RenderArgs) -> Result<()> {
    let seed = ctx.seed("render")?;
    let scene = Scene::load(&args.scene).with_context(|| format!("loading scene {}", args.scene.display()))?;
    let config = render_config(args, seed)?;
    if args.budget_resolution == 0 {
        bail!("--budget-resolution must be positive");
    }
    ctx.manifest(
        "render",
        json!({ "scene": scene.spec(), "scene_file": args.scene, "render": config }),
    )?;
    let mut renderer = Renderer::new(&scene, config)?;
    while !renderer.is_done() {
        let r = renderer.run_iteration();
        println!(
            "iteration {}: {} spp, V_I {:.4e}, C_I {:.3}",
            r.iteration, r.spp, r.variance, r.cost
        );
    }
    let result = renderer.finish();
    output::write_pfm(&ctx.path("image.pfm"), &result.image)?;
    output::write_png(&ctx.path("image.png"), &result.image, 32)?;
    write_json(
        &ctx.path("image.json"),
        &json!({ "image": result.image, "sample_mean": result.sample_mean, "std_err": result.std_err }),
    )?;
    output::write_reports(csv_file(&ctx.path("reports.csv"))?, &result.reports)?;
    for (k, map) in result.budget_maps.iter().enumerate() {
        let path = ctx.path(&format!("budgets_{k:02}.png"));
        output::write_budget_png(&path, &scene, map, config.clamp, args.budget_resolution)?;
    }
    Ok(())
}
