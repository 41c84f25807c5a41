//! Evidence estimation and posterior inference over wiring diagrams.

mod enumerate;
mod posterior;
mod snis;
mod variational;

pub use enumerate::{enumerate_morphisms, visit_traces, EnumConfig, Enumerated, Enumeration, Visit};
pub use posterior::{posterior_samples, PosteriorEntry};
pub use snis::{snis_evidence, EvidenceReport};
pub use variational::{elbo, fit_variational, ElboEstimate, ElboPoint, FitConfig, FitResult, VariationalParams};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::prior::{
    log_pdf_beta, log_pdf_weights, sample_beta, sample_weights, Hyperparams, OperadPrior, PriorError,
    DEFAULT_STEP_CAP,
};
use crate::rng::stream_rng;
use crate::tasks::{Task, TaskError};
use crate::term::{evaluate, Term, TermError};
use crate::wiring::{check_reachable, compose_diagram, sample_diagram, ValidatedDiagram, WiringError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("all {n} particles failed (last failure: {last})")]
    AllParticlesFailed { n: usize, last: String },
    #[error("non-finite gradient at step {step}: {detail}")]
    NonFiniteGradient { step: usize, detail: String },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Wiring(#[from] WiringError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Term(#[from] TermError),
}

/// `Σ_records log p(y | f(x))`.
pub fn log_likelihood(task: &Task, f: &Term) -> Result<f64, InferenceError> {
    let data = task.dataset();
    let (dom, cod) = (f.dom(), f.cod());
    if &dom != data.input_ty() || &cod != data.output_ty() {
        return Err(TaskError::TypeMismatch {
            expected: format!("{} -> {}", data.input_ty(), data.output_ty()),
            found: format!("{dom} -> {cod}"),
        }
        .into());
    }
    let lik = task.likelihood();
    let mut total = 0.0;
    for r in data.records() {
        let y = evaluate(f, task.interpreter(), &r.inputs)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::Evaluation(format!("non-finite output for inputs {:?}", r.inputs)));
        }
        total += lik.log_density(&y, &r.outputs);
    }
    Ok(total)
}

/// Numerically stable `ln Σ exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Prior, diagram and task checked against each other.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub prior: &'a OperadPrior,
    pub diagram: &'a ValidatedDiagram,
    pub task: &'a Task,
    pub step_cap: usize,
}

impl<'a> Model<'a> {
    pub fn new(prior: &'a OperadPrior, diagram: &'a ValidatedDiagram, task: &'a Task) -> Result<Self, InferenceError> {
        let outer = diagram.outer();
        task.check_types(&outer.dom, &outer.cod)?;
        check_reachable(prior, diagram)?;
        Ok(Model { prior, diagram, task, step_cap: DEFAULT_STEP_CAP })
    }

    pub fn with_step_cap(mut self, step_cap: usize) -> Self {
        self.step_cap = step_cap;
        self
    }
}

/// Where each particle's `(beta, w)` comes from.
#[derive(Debug, Clone, Copy)]
pub enum HyperSource<'a> {
    Prior,
    Fixed(&'a Hyperparams),
    Variational(&'a VariationalParams),
}

/// One joint draw of hyperparameters and box morphisms, scored.
#[derive(Debug, Clone)]
pub(crate) struct Particle {
    pub hyper: Hyperparams,
    pub term: Term,
    pub log_lik: f64,
    /// `log p(beta) + log p(w)`; zero under `HyperSource::Fixed`.
    pub log_p_hyper: f64,
    /// `log q(beta) + log q(w)`; equals `log_p_hyper` unless variational.
    pub log_q_hyper: f64,
}

/// Particles that hit the step cap or fail to evaluate are reported as
/// `Err(reason)`; other errors abort the run.
pub(crate) type ParticleResult = Result<Particle, String>;

fn draw_hyper<R: Rng + ?Sized>(
    source: HyperSource<'_>,
    n_weights: usize,
    rng: &mut R,
) -> Result<(Hyperparams, f64, f64), InferenceError> {
    Ok(match source {
        HyperSource::Prior => {
            let beta = sample_beta(rng);
            let w = sample_weights(rng, n_weights)?;
            let lp = log_pdf_beta(beta)? + log_pdf_weights(&w)?;
            (Hyperparams::new(beta, w)?, lp, lp)
        }
        HyperSource::Fixed(h) => (h.clone(), 0.0, 0.0),
        HyperSource::Variational(q) => {
            let (beta, w) = q.sample(rng)?;
            let lp = log_pdf_beta(beta)? + log_pdf_weights(&w)?;
            let lq = q.log_q_beta(beta) + q.log_q_weights(&w);
            (Hyperparams::new(beta, w)?, lp, lq)
        }
    })
}

pub(crate) fn run_particle<R: Rng + ?Sized>(
    model: &Model<'_>,
    source: HyperSource<'_>,
    rng: &mut R,
) -> Result<ParticleResult, InferenceError> {
    let n_weights = model.prior.graph().weight_len();
    let (hyper, log_p_hyper, log_q_hyper) = draw_hyper(source, n_weights, rng)?;
    let sample = match sample_diagram(model.prior, model.diagram, &hyper, rng, model.step_cap) {
        Ok(s) => s,
        Err(WiringError::Box { index, source: PriorError::StepCapExceeded(cap) }) => {
            return Ok(Err(format!("box {index} exceeded the step cap of {cap}")))
        }
        Err(e) => return Err(e.into()),
    };
    let fs: Vec<Term> = sample.traces.into_iter().map(|t| t.term).collect();
    let term = compose_diagram(model.diagram, &fs)?;
    let log_lik = match log_likelihood(model.task, &term) {
        Ok(l) => l,
        Err(InferenceError::Evaluation(msg)) => return Ok(Err(msg)),
        Err(e) => return Err(e),
    };
    Ok(Ok(Particle { hyper, term, log_lik, log_p_hyper, log_q_hyper }))
}

/// Runs particles `0..n` on streams `(seed, i)`, in parallel, in order.
pub(crate) fn run_particles(
    model: &Model<'_>,
    source: HyperSource<'_>,
    n: usize,
    seed: u64,
) -> Result<Vec<ParticleResult>, InferenceError> {
    (0..n)
        .into_par_iter()
        .map(|i| run_particle(model, source, &mut stream_rng(seed, i as u64)))
        .collect()
}
