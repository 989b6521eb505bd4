//! Command implementations behind the `sinkbary` binary.
//!
//! Every command reads its inputs from files and writes all results into
//! `--out-dir`. Exit codes: 0 success, 1 output failure, 2 invalid input,
//! 3 solver non-convergence (partial outputs are still written), 4 a
//! diagnostics bound was violated.

// `!(x > 0.0)` style checks are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sinkbary_core::analysis::{
    lipschitz_tv_check, mmd_concentration_experiment, sample_complexity_experiment,
    sinkhorn_rate_check, MmdConcentrationConfig, RateCheckConfig, Report,
    SampleComplexityConfig, TvCheckConfig,
};
use sinkbary_core::io::{encode_pgm, read_graph, read_measure, read_points_csv, write_measure, GrayImage};
use sinkbary_core::{
    barycenter, compress, kmeans, propagate, rasterize, rng, sample_empirical, BarycenterProblem,
    CostSpec, DiscreteMeasure, Domain, EdgeWeighting, Error, FwConfig, FwState, GaussianSpec,
    MinimizeMode, Sampler, SinkhornConfig,
};

pub const DEFAULT_SEED: u64 = 20_190_101;

pub const EXIT_OUTPUT: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_BOUND: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "sinkbary", version, about = "Sinkhorn divergence barycenters of discrete measures")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Entropic regularization.
    #[arg(long, global = true, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Sinkhorn tolerance on the potentials, in cost units.
    #[arg(long = "tol", global = true, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long = "max-sink-iters", global = true, default_value_t = 100_000)]
    pub max_sinkhorn_iters: usize,
    /// Frank-Wolfe iterations.
    #[arg(long = "iters", global = true, default_value_t = 100)]
    pub iterations: usize,
    #[arg(long, global = true, env = "SINKBARY_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Minimize::Continuous)]
    pub minimize: Minimize,
    /// CSV of candidate points (header row) for `--minimize grid`.
    /// Without it the grid is the union of the input supports.
    #[arg(long = "grid-file", global = true)]
    pub grid_file: Option<PathBuf>,
    #[arg(long = "merge-radius", global = true, default_value_t = 0.0)]
    pub merge_radius: f64,
    /// Worker threads; 0 uses all available cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    #[arg(long = "out-dir", global = true, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Minimize {
    Grid,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weighting {
    InverseDistance,
    ExpKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Suite {
    SinkhornRate,
    PotentialBounds,
    LipschitzTv,
    MmdConcentration,
    SampleComplexity,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::SinkhornRate => "sinkhorn-rate",
            Suite::PotentialBounds => "potential-bounds",
            Suite::LipschitzTv => "lipschitz-tv",
            Suite::MmdConcentration => "mmd-concentration",
            Suite::SampleComplexity => "sample-complexity",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Barycenter of measure files (JSON, CSV, PGM or PNG).
    Barycenter {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated barycentric weights; uniform when omitted.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Compress one measure into at most `--iters + 1` atoms.
    Compress { input: PathBuf },
    /// k-means clustering of measures.
    Kmeans {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        k: usize,
        #[arg(long = "lloyd-iters", default_value_t = 10)]
        lloyd_iters: usize,
    },
    /// Fill unknown vertices of a graph file with measures.
    Propagate {
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = Weighting::InverseDistance)]
        weighting: Weighting,
        /// Bandwidth for `--weighting exp-kernel`.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 3)]
        sweeps: usize,
    },
    /// Run the diagnostics suites and write one CSV and JSON per suite.
    Bench {
        /// Suites to run; all when omitted.
        #[arg(long, value_enum)]
        suite: Vec<Suite>,
        /// Smaller instances, for smoke tests.
        #[arg(long)]
        quick: bool,
    },
    /// Rasterize a 2-D measure to a binary PGM.
    Render {
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        rows: usize,
        #[arg(long, default_value_t = 64)]
        cols: usize,
        /// Pixel side length; defaults to `1 / max(rows, cols)`.
        #[arg(long)]
        extent: Option<f64>,
        /// Output file name inside the output directory.
        #[arg(long, default_value = "render.pgm")]
        output: String,
    },
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::MaxIterationsExceeded { .. } => EXIT_CONVERGENCE,
            Error::Io(_) => EXIT_OUTPUT,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn out_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_OUTPUT,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| out_err(path, e))
}

fn load(path: &Path) -> std::result::Result<DiscreteMeasure, Failure> {
    read_measure(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

impl Common {
    pub fn sinkhorn(&self) -> std::result::Result<SinkhornConfig, Failure> {
        let cfg = SinkhornConfig {
            epsilon: self.epsilon,
            tolerance: self.tolerance,
            max_iterations: self.max_sinkhorn_iters,
            anchor_index: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn frank_wolfe(&self) -> std::result::Result<FwConfig, Failure> {
        let minimize = match (self.minimize, &self.grid_file) {
            (Minimize::Grid, Some(path)) => MinimizeMode::grid(
                read_points_csv(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?,
            ),
            (Minimize::Grid, None) => MinimizeMode::grid_over_supports(),
            (Minimize::Continuous, Some(_)) => {
                return Err(Failure::input("--grid-file requires --minimize grid"))
            }
            (Minimize::Continuous, None) => MinimizeMode::continuous(),
        };
        if self.iterations == 0 {
            return Err(Failure::input("--iters must be >= 1"));
        }
        if !(self.merge_radius >= 0.0) {
            return Err(Failure::input("--merge-radius must be >= 0"));
        }
        Ok(FwConfig {
            iterations: self.iterations,
            minimize,
            merge_radius: self.merge_radius,
            seed: self.seed,
            ..Default::default()
        })
    }

    fn prepare_out_dir(&self) -> CmdResult {
        fs::create_dir_all(&self.out_dir).map_err(|e| out_err(&self.out_dir, e))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Parses arguments already split into words (the first being the program
/// name) and runs the command. Returns the process exit code.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match run(&config) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(config: &RunConfig) -> CmdResult {
    let c = &config.common;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.workers)
        .build()
        .map_err(|e| Failure::input(format!("thread pool: {e}")))?;
    pool.install(|| match &config.command {
        Command::Barycenter { inputs, weights } => cmd_barycenter(c, inputs, weights.as_deref()),
        Command::Compress { input } => cmd_compress(c, input),
        Command::Kmeans { inputs, k, lloyd_iters } => cmd_kmeans(c, inputs, *k, *lloyd_iters),
        Command::Propagate {
            graph,
            weighting,
            sigma,
            sweeps,
        } => {
            let w = match weighting {
                Weighting::InverseDistance => EdgeWeighting::InverseDistance,
                Weighting::ExpKernel => EdgeWeighting::ExpKernel { sigma: *sigma },
            };
            cmd_propagate(c, graph, w, *sweeps)
        }
        Command::Bench { suite, quick } => cmd_bench(c, suite, *quick),
        Command::Render {
            input,
            rows,
            cols,
            extent,
            output,
        } => cmd_render(c, input, *rows, *cols, *extent, output),
    })
}

/// `k, objective, gap, x1..xd, sinkhorn_iters_total`; the last row holds
/// the objective of the final iterate only.
pub fn trace_csv(state: &FwState, dim: usize) -> String {
    let mut s = String::from("k,objective,gap");
    for i in 1..=dim {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",sinkhorn_iters_total\n");
    let mut total = 0usize;
    for k in 0..state.gap_trace.len() {
        total += state.sinkhorn_iters[k];
        let _ = write!(s, "{k},{},{}", state.objective_trace[k], state.gap_trace[k]);
        for v in &state.selected_points[k] {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{total}");
    }
    if let Some(last) = state.objective_trace.get(state.gap_trace.len()) {
        let _ = write!(s, "{},{last},", state.gap_trace.len());
        for _ in 0..dim {
            s.push(',');
        }
        let _ = writeln!(s, ",{total}");
    }
    s
}

fn write_fw_outputs(c: &Common, name: &str, state: &FwState, extra: serde_json::Value) -> CmdResult {
    let result = state.result();
    write_measure(&c.out(&format!("{name}.json")), result)?;
    write_file(&c.out("trace.csv"), trace_csv(state, result.dim()))?;
    let mut summary = json!({
        "epsilon": c.epsilon,
        "tolerance": c.tolerance,
        "iterations": state.k,
        "seed": c.seed,
        "minimize": match c.minimize { Minimize::Grid => "grid", Minimize::Continuous => "continuous" },
        "merge_radius": c.merge_radius,
        "final_objective": state.objective_trace.last(),
        "iterate_atoms": state.iterate.len(),
        "result_atoms": result.len(),
        "mean": result.mean(),
        "sinkhorn_iters_total": state.sinkhorn_iters.iter().sum::<usize>(),
        "nonconverged_solves": state.nonconverged_solves,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (summary.as_object_mut(), extra) {
        obj.extend(more);
    }
    write_file(
        &c.out("summary.json"),
        serde_json::to_string_pretty(&summary).expect("json values serialize"),
    )?;
    if state.nonconverged_solves > 0 {
        return Err(Failure {
            code: EXIT_CONVERGENCE,
            message: format!(
                "{} Sinkhorn solves hit --max-sink-iters; partial outputs written",
                state.nonconverged_solves
            ),
        });
    }
    Ok(())
}

pub fn cmd_barycenter(c: &Common, inputs: &[PathBuf], weights: Option<&[f64]>) -> CmdResult {
    let scfg = c.sinkhorn()?;
    let fcfg = c.frank_wolfe()?;
    let measures = inputs.iter().map(|p| load(p)).collect::<std::result::Result<Vec<_>, _>>()?;
    let problem = BarycenterProblem::new(measures, weights.map(<[f64]>::to_vec), CostSpec::squared_euclidean())?;
    c.prepare_out_dir()?;
    let state = barycenter(&problem, &scfg, &fcfg)?;
    let inputs: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
    write_fw_outputs(
        c,
        "barycenter",
        &state,
        json!({ "inputs": inputs, "weights": problem.mix_weights() }),
    )
}

pub fn cmd_compress(c: &Common, input: &Path) -> CmdResult {
    let scfg = c.sinkhorn()?;
    let fcfg = c.frank_wolfe()?;
    let beta = load(input)?;
    c.prepare_out_dir()?;
    let state = compress(&beta, c.iterations, &CostSpec::squared_euclidean(), &scfg, &fcfg)?;
    write_fw_outputs(
        c,
        "compressed",
        &state,
        json!({ "input": input.display().to_string(), "input_atoms": beta.len() }),
    )
}

pub fn cmd_kmeans(c: &Common, inputs: &[PathBuf], k: usize, lloyd_iters: usize) -> CmdResult {
    let scfg = c.sinkhorn()?;
    let fcfg = c.frank_wolfe()?;
    let measures = inputs.iter().map(|p| load(p)).collect::<std::result::Result<Vec<_>, _>>()?;
    if k == 0 || k > measures.len() {
        return Err(Failure::input(format!(
            "--k must lie in 1..={} (the number of inputs)",
            measures.len()
        )));
    }
    c.prepare_out_dir()?;
    let model = kmeans(&measures, k, lloyd_iters, &CostSpec::squared_euclidean(), &scfg, &fcfg, c.seed)?;
    for (i, m) in model.centroids.iter().enumerate() {
        write_measure(&c.out(&format!("centroid_{i}.json")), m)?;
    }
    let mut csv = String::from("index,input,cluster\n");
    for (i, (p, l)) in inputs.iter().zip(&model.assignments).enumerate() {
        let _ = writeln!(csv, "{i},{},{l}", p.display());
    }
    write_file(&c.out("assignments.csv"), csv)?;
    let summary = json!({
        "k": k,
        "epsilon": c.epsilon,
        "seed": c.seed,
        "inertia": model.inertia,
        "inertia_trace": model.inertia_trace,
        "lloyd_iterations": model.lloyd_iterations,
    });
    write_file(
        &c.out("summary.json"),
        serde_json::to_string_pretty(&summary).expect("json values serialize"),
    )
}

pub fn cmd_propagate(c: &Common, graph: &Path, weighting: EdgeWeighting, sweeps: usize) -> CmdResult {
    let scfg = c.sinkhorn()?;
    let fcfg = c.frank_wolfe()?;
    let g = read_graph(graph).map_err(|e| match e {
        Error::Io(_) | Error::Json(_) => Failure::input(format!("{}: {e}", graph.display())),
        other => other.into(),
    })?;
    c.prepare_out_dir()?;
    let out = propagate(&g, weighting, sweeps, &CostSpec::squared_euclidean(), &scfg, &fcfg)?;
    for (v, m) in &out.measures {
        write_measure(&c.out(&format!("vertex_{v}.json")), m)?;
    }
    let mut csv = String::from("sweep,objective\n");
    for (i, o) in out.objective_trace.iter().enumerate() {
        let _ = writeln!(csv, "{i},{o}");
    }
    write_file(&c.out("objective.csv"), csv)?;
    let summary = json!({
        "epsilon": c.epsilon,
        "seed": c.seed,
        "sweeps": sweeps,
        "unknown": g.unknown(),
        "final_objective": out.objective_trace.last(),
    });
    write_file(
        &c.out("summary.json"),
        serde_json::to_string_pretty(&summary).expect("json values serialize"),
    )
}

/// Suite settings. `quick` shrinks every instance for smoke runs.
pub fn bench_reports(suites: &[Suite], quick: bool, seed: u64) -> std::result::Result<Vec<Report>, Failure> {
    let all = [
        Suite::SinkhornRate,
        Suite::PotentialBounds,
        Suite::LipschitzTv,
        Suite::MmdConcentration,
        Suite::SampleComplexity,
    ];
    let wanted = |s: Suite| suites.is_empty() || suites.contains(&s);
    let cost = CostSpec::squared_euclidean();
    let mut reports = Vec::new();
    if wanted(Suite::SinkhornRate) || wanted(Suite::PotentialBounds) {
        let cfg = RateCheckConfig {
            trials: if quick { 10 } else { 100 },
            seed,
            ..Default::default()
        };
        let (rate, bounds) = sinkhorn_rate_check(&cfg, &SinkhornConfig::new(1.0).with_tolerance(1e-9), &cost)?;
        if wanted(Suite::SinkhornRate) {
            reports.push(rate);
        }
        if wanted(Suite::PotentialBounds) {
            reports.push(bounds);
        }
    }
    if wanted(Suite::LipschitzTv) {
        let cfg = TvCheckConfig {
            trials: if quick { 20 } else { 200 },
            seed,
            ..Default::default()
        };
        reports.push(lipschitz_tv_check(&cfg, &SinkhornConfig::new(1.0).with_tolerance(1e-10), &cost)?);
    }
    if wanted(Suite::MmdConcentration) {
        let cfg = MmdConcentrationConfig {
            n_list: if quick { vec![25, 100] } else { vec![25, 100, 400] },
            trials: if quick { 20 } else { 50 },
            ref_factor: if quick { 10 } else { 100 },
            seed,
            ..Default::default()
        };
        reports.push(mmd_concentration_experiment(&bench_gaussian(), &cfg, None)?);
    }
    if wanted(Suite::SampleComplexity) {
        let cfg = SampleComplexityConfig {
            n_list: if quick { vec![16, 64, 256] } else { vec![16, 64, 256, 1024] },
            trials: if quick { 8 } else { 30 },
            n_ref: if quick { 2000 } else { 20_000 },
            seed,
            ..Default::default()
        };
        let uniform = Sampler::UniformBox(Domain::new(vec![0.0, 0.0], vec![1.0, 1.0])?);
        let mut r = rng::stream(seed, rng::streams::INSTANCE);
        let alpha = sample_empirical(&uniform, 10, &mut r)?;
        let scfg = SinkhornConfig::new(0.5).with_tolerance(1e-9);
        reports.push(sample_complexity_experiment(&uniform, &alpha, &cfg, &scfg, &cost, -0.35)?.1);
    }
    reports.sort_by_key(|r| all.iter().position(|s| s.name() == r.name));
    Ok(reports)
}

fn bench_gaussian() -> Sampler {
    Sampler::Gaussian(GaussianSpec {
        mean: vec![0.5, 0.5],
        covariance: vec![vec![0.04, 0.01], vec![0.01, 0.02]],
    })
}

pub fn cmd_bench(c: &Common, suites: &[Suite], quick: bool) -> CmdResult {
    c.prepare_out_dir()?;
    let reports = bench_reports(suites, quick, c.seed)?;
    let mut failed = Vec::new();
    for r in &reports {
        write_file(&c.out(&format!("{}.csv", r.name)), r.to_csv_string()?)?;
        write_file(&c.out(&format!("{}.json", r.name)), r.summary_json()?)?;
        if !r.pass {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_BOUND,
            message: format!("bound violated in: {}", failed.join(", ")),
        })
    }
}

pub fn cmd_render(
    c: &Common,
    input: &Path,
    rows: usize,
    cols: usize,
    extent: Option<f64>,
    output: &str,
) -> CmdResult {
    if rows == 0 || cols == 0 {
        return Err(Failure::input("--rows and --cols must be >= 1"));
    }
    let extent = extent.unwrap_or(1.0 / rows.max(cols) as f64);
    if !(extent > 0.0) {
        return Err(Failure::input("--extent must be > 0"));
    }
    let m = load(input)?;
    let pixels = rasterize(&m, rows, cols, extent)?;
    c.prepare_out_dir()?;
    write_file(&c.out(output), encode_pgm(&GrayImage { rows, cols, pixels }))
}
