//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for bad input (files, types, flags), 3 when
//! an internal invariant is violated.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::distance::DEFAULT_EXPM_TOL;
use crate::hypergraph::{build_hypergraph, DEFAULT_MAX_PRODUCT_LEN};
use crate::inference::{
    fit_variational, posterior_samples, snis_evidence, EnumConfig, FitConfig, HyperSource, InferenceError, Model,
    VariationalParams,
};
use crate::prior::{
    sample_beta, sample_weights, Hyperparams, OperadPrior, PriorError, TraceRecord, DEFAULT_STEP_CAP,
};
use crate::rng::stream_rng;
use crate::signature::{parse_signature, Signature, Ty};
use crate::tasks::{load_task, Task};
use crate::term::evaluate;
use crate::wiring::{parse_diagram, validate_wiring, ValidatedDiagram};

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

impl From<PriorError> for CliError {
    fn from(e: PriorError) -> Self {
        match e {
            PriorError::InconsistentTrace(_) | PriorError::Distance(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NonFiniteGradient { .. } => CliError::Internal(e.to_string()),
            InferenceError::Prior(p) => p.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "freeop", version, about = "Sample and infer typed programs from a free operad prior")]
pub struct Cli {
    /// Worker threads for particle work (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the operad hypergraph and write it as DOT plus a JSON build report.
    Graph(GraphArgs),
    /// Draw morphisms from the prior and write one JSON record per line.
    Sample(SampleArgs),
    /// List every morphism within the caps with its exact prior probability.
    Enumerate(EnumerateArgs),
    /// Estimate the evidence of a task by importance sampling from the prior.
    Evidence(EvidenceArgs),
    /// Fit the variational posterior and write params, ELBO trace and posterior.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct GraphOpts {
    /// Signature JSON file.
    #[arg(long)]
    pub signature: PathBuf,
    /// Longest product type a recursion site may consume.
    #[arg(long, default_value_t = DEFAULT_MAX_PRODUCT_LEN)]
    pub max_product_len: usize,
    /// Truncation tolerance of the matrix exponential.
    #[arg(long, default_value_t = DEFAULT_EXPM_TOL)]
    pub expm_tol: f64,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    /// DOT output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Build report path (default: <out>.report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the distance matrix as CSV.
    #[arg(long)]
    pub dump_distances: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HyperOpts {
    /// Fix the temperature instead of drawing it from Exp(1).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Use uniform weights instead of drawing them from Dirichlet(1).
    #[arg(long)]
    pub uniform_weights: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    #[arg(long)]
    pub dom: String,
    #[arg(long)]
    pub cod: String,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    pub step_cap: usize,
    #[command(flatten)]
    pub hyper: HyperOpts,
    /// JSONL output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    #[arg(long)]
    pub dom: String,
    #[arg(long)]
    pub cod: String,
    /// Transitions allowed per path.
    #[arg(long, default_value_t = 8)]
    pub max_steps: usize,
    /// Nesting depth allowed for recursion sites.
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Comma-separated weights (default: uniform).
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ModelOpts {
    #[command(flatten)]
    pub graph: GraphOpts,
    /// Task JSON file.
    #[arg(long)]
    pub task: PathBuf,
    /// Wiring diagram JSON file.
    #[arg(long)]
    pub diagram: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    pub step_cap: usize,
}

#[derive(Debug, Args)]
pub struct EvidenceArgs {
    #[command(flatten)]
    pub model: ModelOpts,
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub hyper: HyperOpts,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelOpts,
    /// Gradient steps.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Adam step size on the log-parameters.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Monte Carlo samples per gradient step.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Particles for the final posterior.
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn load_signature(path: &Path) -> Result<Arc<Signature>, CliError> {
    let text = read(path)?;
    parse_signature(&text).map(Arc::new).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_prior(opts: &GraphOpts) -> Result<OperadPrior, CliError> {
    let sig = load_signature(&opts.signature)?;
    let graph = build_hypergraph(&sig, opts.max_product_len).map_err(input)?;
    Ok(OperadPrior::new(graph, opts.expm_tol)?)
}

fn parse_ty(prior: &OperadPrior, text: &str) -> Result<Ty, CliError> {
    let ty = prior.graph().signature().parse_ty(text).map_err(input)?;
    prior.vertex(&ty)?;
    Ok(ty)
}

fn json_line<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, value).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(())
}

fn cmd_graph(args: &GraphArgs) -> Result<(), CliError> {
    let sig = load_signature(&args.graph.signature)?;
    let graph = build_hypergraph(&sig, args.graph.max_product_len).map_err(input)?;
    write(&args.out, graph.to_dot().as_bytes())?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    let report = serde_json::to_string_pretty(&graph.report()).map_err(|e| CliError::Internal(e.to_string()))?;
    write(&report_path, format!("{report}\n").as_bytes())?;
    if let Some(path) = &args.dump_distances {
        let prior = OperadPrior::new(graph, args.graph.expm_tol)?;
        let labels: Vec<String> = prior.graph().vertices().iter().map(|v| v.to_string()).collect();
        write(path, prior.distances().to_csv(&labels).as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AbortedRecord {
    aborted: String,
    beta: f64,
    weights: Vec<f64>,
}

fn draw_hyper(opts: &HyperOpts, n_weights: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Hyperparams, CliError> {
    let beta = match opts.beta {
        Some(b) => b,
        None => sample_beta(rng),
    };
    let w = if opts.uniform_weights { vec![1.0 / n_weights as f64; n_weights] } else { sample_weights(rng, n_weights)? };
    Ok(Hyperparams::new(beta, w)?)
}

fn fixed_hyper(opts: &HyperOpts, n_weights: usize) -> Result<Option<Hyperparams>, CliError> {
    match (opts.beta, opts.uniform_weights) {
        (None, false) => Ok(None),
        (Some(b), true) => Ok(Some(Hyperparams::uniform(b, n_weights)?)),
        _ => Err(CliError::Input("fixed hyperparameters need both --beta and --uniform-weights".into())),
    }
}

fn cmd_sample(args: &SampleArgs) -> Result<(), CliError> {
    let prior = load_prior(&args.graph)?;
    let (dom, cod) = (parse_ty(&prior, &args.dom)?, parse_ty(&prior, &args.cod)?);
    if !prior.reachable(&dom, &cod)? {
        return Err(PriorError::Unreachable { from: dom, to: cod }.into());
    }
    let n_weights = prior.graph().weight_len();
    let mut out = Vec::new();
    for i in 0..args.n {
        let mut rng = stream_rng(args.seed, i as u64);
        let hyper = draw_hyper(&args.hyper, n_weights, &mut rng)?;
        match prior.sample_path(&dom, &cod, &hyper, &mut rng, args.step_cap) {
            Ok(trace) => json_line(&mut out, &TraceRecord::new(&trace, &hyper))?,
            Err(e @ PriorError::StepCapExceeded(_)) => json_line(
                &mut out,
                &AbortedRecord { aborted: e.to_string(), beta: hyper.beta(), weights: hyper.weights().to_vec() },
            )?,
            Err(e) => return Err(e.into()),
        }
    }
    write(&args.out, &out)
}

fn cmd_enumerate(args: &EnumerateArgs) -> Result<(), CliError> {
    let prior = load_prior(&args.graph)?;
    let (dom, cod) = (parse_ty(&prior, &args.dom)?, parse_ty(&prior, &args.cod)?);
    let n_weights = prior.graph().weight_len();
    let hyper = match &args.weights {
        Some(w) => Hyperparams::new(args.beta, w.clone())?,
        None => Hyperparams::uniform(args.beta, n_weights)?,
    };
    let cfg = EnumConfig { max_steps: args.max_steps, max_recursion_depth: args.max_depth };
    let mut e = crate::inference::enumerate_morphisms(&prior, &dom, &cod, &hyper, cfg)?;
    e.items.sort_by(|a, b| b.log_prior.total_cmp(&a.log_prior).then_with(|| a.term.to_string().cmp(&b.term.to_string())));
    let mut out = String::from("prob\tlog_prior\tterm\n");
    for item in &e.items {
        out.push_str(&format!("{:.17e}\t{:.17e}\t{}\n", item.log_prior.exp(), item.log_prior, item.term));
    }
    out.push_str(&format!("truncated_mass\t{:.17e}\n", e.truncated_mass));
    std::io::stdout().write_all(out.as_bytes()).map_err(|e| CliError::Internal(e.to_string()))
}

fn load_model_parts(opts: &ModelOpts) -> Result<(OperadPrior, ValidatedDiagram, Task), CliError> {
    let prior = load_prior(&opts.graph)?;
    let task = load_task(&opts.task, prior.graph().signature().clone())
        .map_err(|e| CliError::Input(format!("{}: {e}", opts.task.display())))?;
    let diagram = parse_diagram(&read(&opts.diagram)?).and_then(|d| validate_wiring(&d)).map_err(input)?;
    Ok((prior, diagram, task))
}

fn cmd_evidence(args: &EvidenceArgs) -> Result<(), CliError> {
    let (prior, diagram, task) = load_model_parts(&args.model)?;
    let model = Model::new(&prior, &diagram, &task)?.with_step_cap(args.model.step_cap);
    let fixed = fixed_hyper(&args.hyper, prior.graph().weight_len())?;
    let source = match &fixed {
        Some(h) => HyperSource::Fixed(h),
        None => HyperSource::Prior,
    };
    let report = snis_evidence(&model, source, args.particles, args.seed)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    write(&args.out, format!("{text}\n").as_bytes())
}

#[derive(Serialize)]
struct PosteriorLine<'a> {
    term: String,
    weight: f64,
    /// Outputs on the first dataset record.
    prediction: &'a [f64],
}

fn cmd_infer(args: &InferArgs) -> Result<(), CliError> {
    let (prior, diagram, task) = load_model_parts(&args.model)?;
    let model = Model::new(&prior, &diagram, &task)?.with_step_cap(args.model.step_cap);
    fs::create_dir_all(&args.out).map_err(|e| CliError::Input(format!("cannot create {}: {e}", args.out.display())))?;
    let init = VariationalParams::prior(prior.graph().weight_len());
    let cfg = FitConfig { steps: args.steps, step_size: args.lr, n_samples: args.samples, seed: args.seed };
    let fit = fit_variational(&model, &init, &cfg)?;
    let mut csv = String::from("step,elbo,stderr\n");
    for p in &fit.trajectory {
        eprintln!("step {:>5}  elbo {:.6}  stderr {:.6}", p.step, p.elbo, p.stderr);
        csv.push_str(&format!("{},{:.17e},{:.17e}\n", p.step, p.elbo, p.stderr));
    }
    write(&args.out.join("elbo.csv"), csv.as_bytes())?;
    let params = serde_json::to_string_pretty(&fit.params).map_err(|e| CliError::Internal(e.to_string()))?;
    write(&args.out.join("params.json"), format!("{params}\n").as_bytes())?;

    let post = posterior_samples(&model, &fit.params, args.particles, crate::rng::derive_seed(args.seed, u64::MAX))?;
    let first = &task.dataset().records()[0].inputs;
    let mut out = Vec::new();
    for entry in &post {
        let prediction = evaluate(&entry.term, task.interpreter(), first).map_err(|e| CliError::Internal(e.to_string()))?;
        json_line(&mut out, &PosteriorLine { term: entry.term.to_string(), weight: entry.weight, prediction: &prediction })?;
    }
    write(&args.out.join("posterior.jsonl"), &out)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let go = || match &cli.command {
        Command::Graph(a) => cmd_graph(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Enumerate(a) => cmd_enumerate(a),
        Command::Evidence(a) => cmd_evidence(a),
        Command::Infer(a) => cmd_infer(a),
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?
            .install(go),
        None => go(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
