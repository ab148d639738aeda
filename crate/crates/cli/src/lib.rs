//! `sparsefault` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use sparsefault::dynamics::{builtin_model, default_grid, lorenz_grid, simulate, DynamicModel, DynamicsError};
use sparsefault::gammoid::{GammoidError, NodeId, Spark};
use sparsefault::io::{self, IoError, SystemFile};
use sparsefault::lincoh::{default_eval_grid, LincohError, LinearSystem};
use sparsefault::netgen::{self, NetgenError, ScenarioSpec};
use sparsefault::recover::{self, InputOutputMap, ReconstructionConfig, RecoverError};
use sparsefault::signals::{self, Signal, SignalError, TimeGrid};

pub const OUT_DIR_ENV: &str = "SPARSEFAULT_OUT_DIR";

#[derive(Debug, Parser, Serialize)]
#[command(name = "sparsefault", version, about = "Localize and reconstruct sparse unknown inputs in ODE networks")]
pub struct Cli {
    /// Seed for every random choice; overrides seeds in spec files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "sparsefault-out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Spark, coherence report and localizability verdict of a graph or linear model.
    Analyze(AnalyzeArgs),
    /// Simulate a model, optionally driven by an input signal.
    Simulate(SimulateArgs),
    /// Reconstruct the unknown input from output data.
    Reconstruct(ReconstructArgs),
    /// Generate a random scenario, a cascade, or the Lorenz data set.
    Gen(GenArgs),
    /// Sampled restricted-isometry estimate of a linear model's input-output map.
    RipEstimate(RipArgs),
}

#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    /// Built-in model: lorenz, lorenz-linear, lorenz-classic.
    #[arg(long)]
    pub model: Option<String>,
    /// Graph or linear-model JSON file.
    #[arg(long)]
    pub system: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    /// Time horizon.
    #[arg(long, alias = "T")]
    pub horizon: Option<f64>,
    /// Number of integration steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Graph or linear-model JSON file.
    #[arg(long)]
    pub system: PathBuf,
    /// Largest subset size enumerated for the spark (default card(Z)+1).
    #[arg(long)]
    pub budget: Option<usize>,
    /// Skip the transfer-function coherence report.
    #[arg(long)]
    pub no_coherence: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Input signal CSV (`t,w_<node>...`); its grid is used.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Output data CSV (`t,y_<node>...`).
    #[arg(long)]
    pub data: PathBuf,
    /// Reconstruction config JSON; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Regularization weight.
    #[arg(long, conflicts_with = "discrepancy")]
    pub beta: Option<f64>,
    /// Select the weight by the discrepancy principle for this data misfit.
    #[arg(long)]
    pub discrepancy: Option<f64>,
    /// Prune weak channels and refit on the rest.
    #[arg(long)]
    pub threshold_refit: bool,
    #[arg(long)]
    pub threshold_fraction: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Comma-separated ground set replacing the model's.
    #[arg(long, value_delimiter = ',')]
    pub ground_set: Option<Vec<NodeId>>,
    /// Attach a recovery-bound report of this sparsity (linear models only).
    #[arg(long)]
    pub bound_k: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub rip_samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[command(subcommand)]
    pub kind: GenKind,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum GenKind {
    /// Random stable network with a sparse input and noisy sensor data.
    Linear(GenLinearArgs),
    /// Layered feed-forward system.
    Cascade(GenCascadeArgs),
    /// Lorenz data observed through x and z, with the true model error.
    Lorenz(GridArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenLinearArgs {
    /// Scenario spec JSON; flags given explicitly override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub sensors: Option<usize>,
    #[arg(long)]
    pub edge_probability: Option<f64>,
    /// Comma-separated true support.
    #[arg(long, value_delimiter = ',')]
    pub support: Option<Vec<NodeId>>,
    #[arg(long)]
    pub support_size: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub noise_relative: Option<f64>,
    #[arg(long)]
    pub min_spark: Option<usize>,
    /// Accept the first draw whatever its spark.
    #[arg(long)]
    pub no_spark_check: bool,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GenCascadeArgs {
    /// Comma-separated layer sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub layers: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct RipArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Sparsity order of the estimate.
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
}

/// Stable exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Exit {
    Success = 0,
    Input = 2,
    Numeric = 3,
    Partial = 4,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Budget(String),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Input(_) => Exit::Input,
            CliError::Numeric(_) => Exit::Numeric,
            CliError::Budget(_) => Exit::Partial,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(_) | IoError::Json(_) | IoError::Csv(_) | IoError::Format(_) => CliError::Input(e.to_string()),
            IoError::Graph(g) => g.into(),
            IoError::System(s) => s.into(),
            IoError::Signal(s) => s.into(),
        }
    }
}

impl From<GammoidError> for CliError {
    fn from(e: GammoidError) -> Self {
        match e {
            GammoidError::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<LincohError> for CliError {
    fn from(e: LincohError) -> Self {
        match e {
            LincohError::Graph(g) => g.into(),
            LincohError::PoleProximity { .. }
            | LincohError::NoValidEvalPoint { .. }
            | LincohError::CancellingShortestPaths { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::DegenerateOperator | SignalError::RipPremiseViolated(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::BlowUp { .. } => CliError::Numeric(e.to_string()),
            DynamicsError::Signal(s) => s.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<RecoverError> for CliError {
    fn from(e: RecoverError) -> Self {
        match e {
            RecoverError::Dynamics(d) => d.into(),
            RecoverError::Signal(s) => s.into(),
            RecoverError::Graph(g) => g.into(),
            RecoverError::ToleranceUnreachable { .. } => CliError::Numeric(e.to_string()),
            RecoverError::OperatorTooLarge { .. } => CliError::Budget(e.to_string()),
            RecoverError::InvalidConfig(_) | RecoverError::NotLinear => CliError::Input(e.to_string()),
        }
    }
}

impl From<NetgenError> for CliError {
    fn from(e: NetgenError) -> Self {
        match e {
            NetgenError::SparkNotReached { .. } => CliError::Budget(e.to_string()),
            NetgenError::Graph(g) => g.into(),
            NetgenError::System(s) => s.into(),
            NetgenError::Dynamics(d) => d.into(),
            NetgenError::Signal(s) => s.into(),
            NetgenError::InvalidSpec(_) => CliError::Input(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

/// Record of one run, written as `manifest.json` next to the outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub argv: Vec<String>,
    pub config: &'a Cli,
    pub seed: Option<u64>,
    pub threads: usize,
    pub tool_version: &'static str,
    pub wall_clock_seconds: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub exit_code: i32,
    pub error: Option<String>,
}

/// Files read and written by a command.
#[derive(Debug, Default)]
struct Run {
    out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn read(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.push(path.to_path_buf());
        Ok(text)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &io::to_json_string(value)?)
    }

    fn write_signal(&mut self, name: &str, s: &Signal) -> Result<()> {
        self.write(name, &io::signal_csv_string(s)?)
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Analyze(_) => "analyze",
        Command::Simulate(_) => "simulate",
        Command::Reconstruct(_) => "reconstruct",
        Command::Gen(_) => "gen",
        Command::RipEstimate(_) => "rip-estimate",
    }
}

/// Runs a parsed command and writes its manifest; returns the exit code.
pub fn run(cli: &Cli, argv: Vec<String>) -> i32 {
    let start = Instant::now();
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return Exit::Input as i32;
        }
    };
    if let Err(e) = fs::create_dir_all(&cli.out_dir) {
        eprintln!("error: {}: {e}", cli.out_dir.display());
        return Exit::Input as i32;
    }
    let mut run = Run {
        out_dir: cli.out_dir.clone(),
        ..Default::default()
    };
    let outcome = pool.install(|| dispatch(cli, &mut run));
    let (code, error) = match &outcome {
        Ok(code) => (*code, None),
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit(), Some(e.to_string()))
        }
    };
    let digests = |paths: &[PathBuf]| paths.iter().filter_map(|p| digest_file(p).ok()).collect();
    let manifest = RunManifest {
        command: command_name(&cli.command),
        argv,
        config: cli,
        seed: cli.seed,
        threads,
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        inputs: digests(&run.inputs),
        outputs: digests(&run.outputs),
        exit_code: code as i32,
        error,
    };
    match io::to_json_string(&manifest) {
        Ok(text) => {
            if let Err(e) = fs::write(cli.out_dir.join("manifest.json"), text) {
                eprintln!("error: cannot write manifest: {e}");
            }
        }
        Err(e) => eprintln!("error: cannot serialize manifest: {e}"),
    }
    code as i32
}

fn dispatch(cli: &Cli, run: &mut Run) -> Result<Exit> {
    match &cli.command {
        Command::Analyze(a) => analyze(a, run),
        Command::Simulate(a) => simulate_cmd(a, run),
        Command::Reconstruct(a) => reconstruct(a, run),
        Command::Gen(a) => gen(a, cli.seed, run),
        Command::RipEstimate(a) => rip_estimate(a, cli.seed.unwrap_or(0), run),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct SparkReport {
    pub value: usize,
    /// The spark is at least `value`; enumeration stopped at the budget.
    pub is_lower_bound: bool,
    pub witness: Option<Vec<NodeId>>,
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub nodes: usize,
    pub ground_set: Vec<NodeId>,
    pub output_set: Vec<NodeId>,
    pub spark: SparkReport,
    /// `ceil(spark / 2) - 1`: errors on up to this many nodes are uniquely localizable.
    pub k_max: usize,
    pub verdict: String,
    pub partial: bool,
    pub coherence: Option<sparsefault::lincoh::CoherenceReport>,
    pub coherence_error: Option<String>,
}

pub fn k_max(spark: usize) -> usize {
    spark.div_ceil(2).saturating_sub(1)
}

pub fn verdict(k: usize, lower_bound: bool) -> String {
    match (k, lower_bound) {
        (0, false) => "no error is uniquely localizable".into(),
        (0, true) => "undecided within the enumeration budget".into(),
        (1, false) => "single-node errors localizable".into(),
        (_, false) => format!("errors targeting up to {k} nodes are uniquely localizable"),
        (_, true) => format!("errors targeting up to at least {k} nodes are uniquely localizable"),
    }
}

fn analyze(args: &AnalyzeArgs, run: &mut Run) -> Result<Exit> {
    let text = run.read(&args.system)?;
    let file = SystemFile::parse(&text)?;
    let gammoid = file.gammoid()?;
    let spark = match gammoid.spark(args.budget) {
        Ok(s) => SparkReport {
            value: s.value(),
            is_lower_bound: false,
            witness: match s {
                Spark::Circuit { witness, .. } => Some(witness),
                Spark::ExceedsGroundSet { .. } => None,
            },
        },
        Err(GammoidError::BudgetExceeded { lower_bound, .. }) => {
            warn!("spark budget exhausted; reporting a lower bound");
            SparkReport {
                value: lower_bound,
                is_lower_bound: true,
                witness: None,
            }
        }
        Err(e) => return Err(e.into()),
    };
    let k = k_max(spark.value);
    let (coherence, coherence_error) = if args.no_coherence {
        (None, None)
    } else {
        match file.linear_system().and_then(|sys| Ok(sys.coherence_report(&default_eval_grid())?)) {
            Ok(r) => (Some(r), None),
            Err(e) => {
                warn!("coherence report unavailable: {e}");
                (None, Some(e.to_string()))
            }
        }
    };
    let partial = spark.is_lower_bound;
    let report = AnalysisReport {
        nodes: gammoid.graph().node_count(),
        ground_set: gammoid.ground_set().to_vec(),
        output_set: gammoid.output_set().to_vec(),
        verdict: verdict(k, partial),
        k_max: k,
        spark,
        partial,
        coherence,
        coherence_error,
    };
    println!(
        "spark {}{}  k_max {}  {}",
        if partial { ">= " } else { "" },
        report.spark.value,
        report.k_max,
        report.verdict
    );
    run.write_json("analysis.json", &report)?;
    if let Some(c) = &report.coherence {
        run.write("coherence_min.csv", &io::matrix_csv_string(&c.ground_set, &c.min_coherence_matrix)?)?;
        if let Some(sp) = &c.shortest_path_matrix {
            run.write("coherence_shortest_path.csv", &io::matrix_csv_string(&c.ground_set, sp)?)?;
        }
    }
    Ok(if partial { Exit::Partial } else { Exit::Success })
}

fn load_model(source: &ModelSource, run: &mut Run) -> Result<(DynamicModel, Option<LinearSystem>)> {
    if let Some(name) = &source.model {
        let model = builtin_model(name).ok_or_else(|| {
            CliError::Input(format!("unknown model `{name}` (lorenz, lorenz-linear, lorenz-classic)"))
        })?;
        return Ok((model, None));
    }
    let path = source.system.as_ref().expect("clap requires one model source");
    let sys = SystemFile::parse(&run.read(path)?)?.linear_system()?;
    Ok((DynamicModel::from_linear_system(&sys), Some(sys)))
}

fn resolve_grid(args: &GridArgs, builtin: bool) -> Result<TimeGrid> {
    // built-in models keep the Lorenz step density, others the default one
    let reference = if builtin { lorenz_grid() } else { default_grid(5.0)? };
    let horizon = args.horizon.unwrap_or(reference.horizon());
    let steps = args.steps.unwrap_or_else(|| {
        ((horizon * reference.n_steps() as f64 / reference.horizon()).round() as usize).max(1)
    });
    Ok(TimeGrid::new(horizon, steps)?)
}

fn simulate_cmd(args: &SimulateArgs, run: &mut Run) -> Result<Exit> {
    let (model, _) = load_model(&args.source, run)?;
    let input = match &args.input {
        Some(path) => Some(io::read_signal_csv(run.read(path)?.as_bytes())?),
        None => None,
    };
    let grid = match &input {
        Some(w) => {
            if args.grid.horizon.is_some() || args.grid.steps.is_some() {
                return Err(CliError::Input("the input signal fixes the grid; drop --horizon/--steps".into()));
            }
            *w.grid()
        }
        None => resolve_grid(&args.grid, args.source.model.is_some())?,
    };
    let tr = simulate(&model, input.as_ref(), &grid)?;
    let peak = tr.states.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("simulated {} steps to T = {}; max |x| = {peak:.6e}", grid.n_steps(), grid.horizon());
    run.write_signal("states.csv", &io::trajectory_states(&tr)?)?;
    run.write_signal("outputs.csv", &tr.outputs)?;
    Ok(Exit::Success)
}

#[derive(Debug, Serialize)]
pub struct ReconstructionReport {
    pub support: Vec<recover::SupportEntry>,
    /// Every channel, strongest first.
    pub channels: Vec<recover::SupportEntry>,
    pub strongest_node: Option<NodeId>,
    pub reg_weight: f64,
    pub misfit: f64,
    pub data_tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: Option<f64>,
    pub threshold_refit: bool,
    pub discrepancy_path: Option<Vec<(f64, f64)>>,
    pub discrepancy_monotone: Option<bool>,
    pub bound: Option<recover::BoundReport>,
    pub config: ReconstructionConfig,
}

fn reconstruct(args: &ReconstructArgs, run: &mut Run) -> Result<Exit> {
    let (mut model, _) = load_model(&args.source, run)?;
    if let Some(ground) = &args.ground_set {
        model = model.with_ground_set(ground.clone())?;
    }
    let y = io::read_signal_csv(run.read(&args.data)?.as_bytes())?;
    let mut config = match &args.config {
        Some(path) => parse_json::<ReconstructionConfig>(&run.read(path)?, path)?,
        None => ReconstructionConfig::default(),
    };
    if let Some(b) = args.beta {
        config.reg_weight = b;
    }
    if let Some(f) = args.threshold_fraction {
        config.threshold_fraction = f;
    }
    if let Some(m) = args.max_iterations {
        config.max_iterations = m;
    }
    if let Some(t) = args.tolerance {
        config.tolerance = t;
    }
    if let Some(eps) = args.discrepancy {
        config.data_tolerance = eps;
    }
    config.validate()?;

    let (mut result, path) = match args.discrepancy {
        Some(eps) => {
            let out = recover::select_beta_discrepancy(&model, &y, &config, eps)?;
            info!("discrepancy search chose {:e} after {} solves", out.reg_weight, out.path.len());
            config.reg_weight = out.reg_weight;
            (out.result, Some((out.path, out.monotone)))
        }
        None => (recover::solve(&model, &y, &config)?, None),
    };
    if args.threshold_refit {
        result = recover::threshold_and_refit(&model, &y, &result, &config)?;
    }
    if let Some(k) = args.bound_k {
        recover::attach_bound_report(&model, &mut result, k, args.rip_samples, 0)?;
    }

    let mut channels: Vec<recover::SupportEntry> = result
        .w_hat
        .nodes()
        .iter()
        .zip(&result.underline)
        .map(|(&node, &magnitude)| recover::SupportEntry { node, magnitude })
        .collect();
    channels.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.node.cmp(&b.node)));
    println!("{:>6}  {:>24}  support", "node", "||w_i||_2");
    for c in &channels {
        let mark = if result.support_nodes().contains(&c.node) { "yes" } else { "no" };
        println!("{:>6}  {:>24}  {mark}", c.node, io::fmt_f64(c.magnitude));
    }
    println!(
        "misfit {}  beta {}  iterations {}{}",
        io::fmt_f64(result.misfit),
        io::fmt_f64(result.reg_weight),
        result.iterations,
        if result.converged { "" } else { " (iteration limit)" }
    );

    let report = ReconstructionReport {
        support: result.support.clone(),
        strongest_node: result.strongest_node(),
        channels,
        reg_weight: result.reg_weight,
        misfit: result.misfit,
        data_tolerance: result.data_tolerance,
        iterations: result.iterations,
        converged: result.converged,
        final_objective: result.objective_history.last().copied(),
        threshold_refit: args.threshold_refit,
        discrepancy_monotone: path.as_ref().map(|p| p.1),
        discrepancy_path: path.map(|p| p.0),
        bound: result.bound.clone(),
        config,
    };
    run.write_json("result.json", &report)?;
    run.write_signal("w_hat.csv", &result.w_hat)?;
    let history: String = std::iter::once("iteration,objective\n".to_string())
        .chain(
            result
                .objective_history
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{i},{}\n", io::fmt_f64(*v))),
        )
        .collect();
    run.write("objective.csv", &history)?;
    Ok(if result.converged { Exit::Success } else { Exit::Partial })
}

fn gen(args: &GenArgs, seed: Option<u64>, run: &mut Run) -> Result<Exit> {
    match &args.kind {
        GenKind::Linear(a) => gen_linear(a, seed, run),
        GenKind::Cascade(a) => {
            let sys = netgen::generate_cascade(&a.layers, seed.unwrap_or(0))?;
            run.write_json("system.json", &io::ModelFile::from_system(&sys))?;
            println!("cascade with {} nodes", sys.dimension());
            Ok(Exit::Success)
        }
        GenKind::Lorenz(g) => {
            let grid = resolve_grid(g, true)?;
            let sc = netgen::lorenz_scenario(Some(grid))?;
            run.write_signal("y_data.csv", &sc.y_data)?;
            run.write_signal("w_star.csv", &sc.w_star)?;
            println!("Lorenz data on {} steps to T = {}", grid.n_steps(), grid.horizon());
            Ok(Exit::Success)
        }
    }
}

fn gen_linear(a: &GenLinearArgs, seed: Option<u64>, run: &mut Run) -> Result<Exit> {
    let mut spec = match &a.spec {
        Some(path) => parse_json::<ScenarioSpec>(&run.read(path)?, path)?,
        None => ScenarioSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(v) = a.nodes {
        spec.nodes = v;
    }
    if let Some(v) = a.sensors {
        spec.sensors = v;
    }
    if let Some(v) = a.edge_probability {
        spec.edge_probability = Some(v);
    }
    if let Some(v) = &a.support {
        spec.support = v.clone();
    }
    if let Some(v) = a.support_size {
        spec.support_size = v;
    }
    if let Some(v) = a.noise_std {
        spec.noise_std = Some(v);
    }
    if let Some(v) = a.noise_relative {
        spec.noise_relative = v;
    }
    if let Some(v) = a.min_spark {
        spec.min_spark = Some(v);
    }
    if a.no_spark_check {
        spec.min_spark = None;
    }
    if let Some(h) = a.grid.horizon {
        spec.horizon = h;
    }
    if let Some(n) = a.grid.steps {
        spec.n_steps = Some(n);
    }
    let sc = netgen::generate_linear_scenario(&spec)?;
    run.write_json("scenario.json", &sc.metadata())?;
    run.write_json("system.json", &io::ModelFile::from_system(&sc.system))?;
    run.write_signal("w_true.csv", &sc.w_true)?;
    run.write_signal("y_clean.csv", &sc.y_clean)?;
    run.write_signal("y_data.csv", &sc.y_data)?;
    println!(
        "{} nodes, sensors {:?}, true support {:?}, spark {}, noise sigma {}",
        spec.nodes,
        sc.system.sensors(),
        sc.true_support(),
        sc.spark
            .as_ref()
            .map_or("unchecked".to_string(), |s| format!("{}{}", if s.is_lower_bound { ">= " } else { "" }, s.value)),
        io::fmt_f64(sc.noise_std)
    );
    Ok(Exit::Success)
}

#[derive(Debug, Serialize)]
pub struct RipReport {
    pub estimate: signals::RipEstimate,
    pub seed: u64,
    pub horizon: f64,
    pub steps: usize,
    /// Constants of the recovery bound when the estimate satisfies its premise.
    pub bound_constants: Option<signals::RecoveryBoundConstants>,
    pub note: &'static str,
}

fn rip_estimate(args: &RipArgs, seed: u64, run: &mut Run) -> Result<Exit> {
    let (model, _) = load_model(&args.source, run)?;
    let grid = resolve_grid(&args.grid, args.source.model.is_some())?;
    let map = InputOutputMap::new(&model, grid)?;
    let estimate = signals::estimate_rip_constant(&map, args.order, args.samples, seed)?;
    println!(
        "delta_{} >= {} from {} samples{}",
        args.order,
        io::fmt_f64(estimate.delta),
        estimate.samples_used,
        if estimate.premise_violated { " (recovery-bound premise fails)" } else { "" }
    );
    let report = RipReport {
        bound_constants: signals::RecoveryBoundConstants::new(estimate.delta).ok(),
        estimate,
        seed,
        horizon: grid.horizon(),
        steps: grid.n_steps(),
        note: "sampled estimate; the true constant can only be larger",
    };
    run.write_json("rip.json", &report)?;
    Ok(Exit::Success)
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Input as i32 } else { 0 };
        }
    };
    run(&cli, argv)
}
