//! The free operad prior over morphisms.
//!
//! A morphism between two types is drawn by running an absorbing Markov
//! chain over the operad graph. From the current type, the next hyperedge is
//! chosen by a softmin of the transition distance from its codomain to the
//! target, scaled by the temperature `beta`. Each chosen hyperedge is then
//! filled by one of its inhabitants, picked with probability proportional to
//! the weight vector `w`. Recursion-site weights are divided by `beta`. A
//! recursion site expands into a parallel product of independent sub-paths
//! sampled at `beta + 1`.
//!
//! The density of a trace is the product of every recorded choice.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::distance::{DistanceError, DistanceMatrix};
use crate::hypergraph::{EdgeLabel, OperadGraph};
use crate::signature::Ty;
use crate::term::{compose_seq, par, Term, TermError};

pub const DEFAULT_STEP_CAP: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("type {0} is not a vertex of the operad graph")]
    UnknownVertex(Ty),
    #[error("no path from {from} to {to}")]
    Unreachable { from: Ty, to: Ty },
    #[error("dead end at {from} while heading to {to}")]
    DeadEnd { from: Ty, to: Ty },
    #[error("path exceeded the step cap of {0}")]
    StepCapExceeded(usize),
    #[error("edge {0} has no inhabitant with positive weight")]
    NoCandidates(usize),
    #[error("weight vector has length {found}, expected {expected}")]
    WeightLength { expected: usize, found: usize },
    #[error("inconsistent trace: {0}")]
    InconsistentTrace(String),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
}

/// Temperature and inhabitant weights shared by every path in a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    beta: f64,
    weights: Vec<f64>,
}

impl Hyperparams {
    pub fn new(beta: f64, weights: Vec<f64>) -> Result<Self, PriorError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(PriorError::Domain(format!("beta must be positive, got {beta}")));
        }
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(PriorError::Domain("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(PriorError::Domain(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Hyperparams { beta, weights })
    }

    pub fn uniform(beta: f64, n: usize) -> Result<Self, PriorError> {
        Self::new(beta, vec![1.0 / n.max(1) as f64; n.max(1)])
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `beta ~ Gamma(1, 1)`.
pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let b: f64 = Exp1.sample(rng);
        if b > 0.0 {
            return b;
        }
    }
}

pub fn log_pdf_beta(beta: f64) -> Result<f64, PriorError> {
    if !(beta > 0.0) || beta.is_infinite() {
        return Err(PriorError::Domain(format!("beta must be positive, got {beta}")));
    }
    Ok(-beta)
}

/// Uniform draw from the `n`-simplex (`Dirichlet(1, ..., 1)`).
pub fn sample_weights<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<Vec<f64>, PriorError> {
    if n == 0 {
        return Err(PriorError::Domain("weight vector must be non-empty".into()));
    }
    loop {
        let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            return Ok(raw.into_iter().map(|x| x / total).collect());
        }
    }
}

/// Log density of the uniform Dirichlet: `ln Gamma(n)` on the simplex.
pub fn log_pdf_weights(w: &[f64]) -> Result<f64, PriorError> {
    if w.is_empty() {
        return Err(PriorError::Domain("weight vector must be non-empty".into()));
    }
    let sum: f64 = w.iter().sum();
    if w.iter().any(|x| !(*x >= -1e-9)) || (sum - 1.0).abs() > 1e-9 {
        return Err(PriorError::Domain(format!("weights are off the simplex (sum {sum})")));
    }
    Ok(ln_gamma(w.len() as f64))
}

/// One transition of the chain plus the inhabitant chosen to fill it.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub edge: usize,
    pub log_policy: f64,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    /// Renormalised weights over the edge's inhabitants.
    pub probs: Arc<[f64]>,
    pub index: usize,
    pub log_prob: f64,
    /// One sub-path per pair when a recursion site was chosen.
    pub sub_traces: Vec<PathTrace>,
}

/// A sampled morphism together with every choice that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub dom: Ty,
    pub cod: Ty,
    pub term: Term,
    pub steps: Vec<Step>,
    pub log_prior: f64,
}

impl PathTrace {
    pub fn identity(ty: Ty) -> Self {
        PathTrace { dom: ty.clone(), cod: ty.clone(), term: Term::Id(ty), steps: Vec::new(), log_prior: 0.0 }
    }

    /// Total number of transitions, including those inside sub-paths.
    pub fn total_steps(&self) -> usize {
        self.steps
            .iter()
            .map(|s| 1 + s.choice.sub_traces.iter().map(PathTrace::total_steps).sum::<usize>())
            .sum()
    }
}

/// JSONL record for a sampled trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub term: String,
    pub log_prior: f64,
    pub beta: f64,
    pub weights: Vec<f64>,
    pub steps: Vec<usize>,
}

impl TraceRecord {
    pub fn new(trace: &PathTrace, hyper: &Hyperparams) -> Self {
        TraceRecord {
            term: trace.term.to_string(),
            log_prior: trace.log_prior,
            beta: hyper.beta,
            weights: hyper.weights.clone(),
            steps: trace.steps.iter().map(|s| s.edge).collect(),
        }
    }
}

/// Draws an index from a normalised probability vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// An operad graph with its cached distance matrix.
#[derive(Debug, Clone)]
pub struct OperadPrior {
    graph: OperadGraph,
    distances: DistanceMatrix,
}

impl OperadPrior {
    pub fn new(graph: OperadGraph, tol: f64) -> Result<Self, PriorError> {
        let distances = DistanceMatrix::for_graph(&graph, tol)?;
        Ok(OperadPrior { graph, distances })
    }

    pub fn from_parts(graph: OperadGraph, distances: DistanceMatrix) -> Self {
        OperadPrior { graph, distances }
    }

    pub fn graph(&self) -> &OperadGraph {
        &self.graph
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    pub fn vertex(&self, ty: &Ty) -> Result<usize, PriorError> {
        self.graph.vertex_index(ty).ok_or_else(|| PriorError::UnknownVertex(ty.clone()))
    }

    /// True when a path from `dom` to `cod` has positive probability.
    pub fn reachable(&self, dom: &Ty, cod: &Ty) -> Result<bool, PriorError> {
        let (s, t) = (self.vertex(dom)?, self.vertex(cod)?);
        Ok(self.distances.get(s, t).is_finite())
    }

    fn check_weights(&self, w: &[f64]) -> Result<(), PriorError> {
        let expected = self.graph.weight_len();
        if w.len() != expected {
            return Err(PriorError::WeightLength { expected, found: w.len() });
        }
        Ok(())
    }

    /// Softmin policy over hyperedges leaving `from`, aimed at `to`.
    ///
    /// Returns `(edge, probability)` for every outgoing edge, with zero
    /// probability where the edge's codomain cannot reach the target.
    pub fn policy(&self, from: usize, to: usize, beta: f64) -> Result<Vec<(usize, f64)>, PriorError> {
        let out = self.graph.out_edges(from);
        let logits: Vec<f64> = out
            .iter()
            .map(|&e| -self.distances.get(self.graph.edges()[e].target, to) / beta)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(PriorError::DeadEnd {
                from: self.graph.vertices()[from].clone(),
                to: self.graph.vertices()[to].clone(),
            });
        }
        let unnorm: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        Ok(out.iter().zip(unnorm).map(|(&e, u)| (e, u / total)).collect())
    }

    /// Policy addressed by types rather than vertex indices.
    pub fn policy_for_types(&self, ty1: &Ty, ty2: &Ty, beta: f64) -> Result<Vec<(usize, f64)>, PriorError> {
        self.policy(self.vertex(ty1)?, self.vertex(ty2)?, beta)
    }

    /// Distribution over the inhabitants of `edge`: generator weights taken
    /// as-is, recursion-site weights divided by `beta`, then renormalised.
    pub fn choice_distribution(&self, edge: usize, beta: f64, w: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.check_weights(w)?;
        let labels = &self.graph.edges()[edge].labels;
        let raw: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let x = w[self.graph.weight_index(l)];
                match l {
                    EdgeLabel::Generator(_) => x,
                    EdgeLabel::Site(_) => x / beta,
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(PriorError::NoCandidates(edge));
        }
        Ok(raw.into_iter().map(|x| x / total).collect())
    }

    /// Samples a morphism `dom -> cod`. The step cap counts transitions
    /// across all nested sub-paths.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        dom: &Ty,
        cod: &Ty,
        hyper: &Hyperparams,
        rng: &mut R,
        step_cap: usize,
    ) -> Result<PathTrace, PriorError> {
        self.check_weights(&hyper.weights)?;
        if !self.reachable(dom, cod)? {
            return Err(PriorError::Unreachable { from: dom.clone(), to: cod.clone() });
        }
        let mut budget = step_cap;
        self.path_inner(self.vertex(dom)?, self.vertex(cod)?, hyper.beta, &hyper.weights, rng, &mut budget, step_cap)
    }

    #[allow(clippy::too_many_arguments)]
    fn path_inner<R: Rng + ?Sized>(
        &self,
        from: usize,
        to: usize,
        beta: f64,
        w: &[f64],
        rng: &mut R,
        budget: &mut usize,
        cap: usize,
    ) -> Result<PathTrace, PriorError> {
        let vertices = self.graph.vertices();
        let mut cur = from;
        let mut term = Term::Id(vertices[from].clone());
        let mut steps = Vec::new();
        let mut log_prior = 0.0;
        while cur != to {
            if *budget == 0 {
                return Err(PriorError::StepCapExceeded(cap));
            }
            *budget -= 1;
            let pol = self.policy(cur, to, beta)?;
            let probs: Vec<f64> = pol.iter().map(|&(_, p)| p).collect();
            let k = sample_index(rng, &probs);
            let (edge, p) = pol[k];
            let (piece, choice) = self.fill_inner(edge, beta, w, rng, budget, cap)?;
            log_prior += p.ln() + choice.log_prob + choice.sub_traces.iter().map(|t| t.log_prior).sum::<f64>();
            term = compose_seq(term, piece)?;
            steps.push(Step { edge, log_policy: p.ln(), choice });
            cur = self.graph.edges()[edge].target;
        }
        Ok(PathTrace { dom: vertices[from].clone(), cod: vertices[to].clone(), term, steps, log_prior })
    }

    /// Fills `edge` with one of its inhabitants. A recursion site expands
    /// into a product of sub-paths sampled at `beta + 1`.
    pub fn fill_generator<R: Rng + ?Sized>(
        &self,
        edge: usize,
        hyper: &Hyperparams,
        rng: &mut R,
        step_cap: usize,
    ) -> Result<(Term, Choice), PriorError> {
        self.check_weights(&hyper.weights)?;
        let mut budget = step_cap;
        self.fill_inner(edge, hyper.beta, &hyper.weights, rng, &mut budget, step_cap)
    }

    fn fill_inner<R: Rng + ?Sized>(
        &self,
        edge: usize,
        beta: f64,
        w: &[f64],
        rng: &mut R,
        budget: &mut usize,
        cap: usize,
    ) -> Result<(Term, Choice), PriorError> {
        let probs = self.choice_distribution(edge, beta, w)?;
        let index = sample_index(rng, &probs);
        let log_prob = probs[index].ln();
        match self.graph.edges()[edge].labels[index] {
            EdgeLabel::Generator(i) => {
                let g = self.graph.signature().generators()[i].clone();
                Ok((Term::Gen(g), Choice { probs: probs.into(), index, log_prob, sub_traces: Vec::new() }))
            }
            EdgeLabel::Site(s) => {
                let site = &self.graph.recursion_sites()[s];
                let mut subs = Vec::with_capacity(site.pairs.len());
                for (d, c) in &site.pairs {
                    let (dv, cv) = (self.vertex(d)?, self.vertex(c)?);
                    subs.push(self.path_inner(dv, cv, beta + 1.0, w, rng, budget, cap)?);
                }
                let term = par(subs.iter().map(|t| t.term.clone()).collect())?;
                Ok((term, Choice { probs: probs.into(), index, log_prob, sub_traces: subs }))
            }
        }
    }

    /// Log density of `trace` under `hyper`, recomputed from its recorded
    /// choices (sub-paths at `beta + 1` per nesting level).
    pub fn log_prior(&self, trace: &PathTrace, hyper: &Hyperparams) -> Result<f64, PriorError> {
        self.check_weights(&hyper.weights)?;
        self.rescore(trace, hyper.beta, &hyper.weights)
    }

    fn rescore(&self, trace: &PathTrace, beta: f64, w: &[f64]) -> Result<f64, PriorError> {
        let bad = |msg: String| Err(PriorError::InconsistentTrace(msg));
        let (from, to) = (self.vertex(&trace.dom)?, self.vertex(&trace.cod)?);
        let mut cur = from;
        let mut total = 0.0;
        for (n, step) in trace.steps.iter().enumerate() {
            if cur == to {
                return bad(format!("step {n} taken after reaching the target"));
            }
            let Some(edge) = self.graph.edges().get(step.edge) else {
                return bad(format!("step {n} names unknown edge {}", step.edge));
            };
            if edge.source != cur {
                return bad(format!("step {n} leaves from the wrong vertex"));
            }
            let pol = self.policy(cur, to, beta)?;
            let p = pol.iter().find(|(e, _)| *e == step.edge).map(|&(_, p)| p).unwrap_or(0.0);
            total += p.ln();
            let probs = self.choice_distribution(step.edge, beta, w)?;
            let Some(&q) = probs.get(step.choice.index) else {
                return bad(format!("step {n} chooses a missing inhabitant"));
            };
            total += q.ln();
            match edge.labels[step.choice.index] {
                EdgeLabel::Generator(_) => {
                    if !step.choice.sub_traces.is_empty() {
                        return bad(format!("step {n} has sub-paths for a generator"));
                    }
                }
                EdgeLabel::Site(s) => {
                    let site = &self.graph.recursion_sites()[s];
                    if site.pairs.len() != step.choice.sub_traces.len() {
                        return bad(format!("step {n} has the wrong number of sub-paths"));
                    }
                    for ((d, c), sub) in site.pairs.iter().zip(&step.choice.sub_traces) {
                        if &sub.dom != d || &sub.cod != c {
                            return bad(format!("step {n} sub-path has the wrong type"));
                        }
                        total += self.rescore(sub, beta + 1.0, w)?;
                    }
                }
            }
            cur = edge.target;
        }
        if cur != to {
            return bad("trace ends before reaching the target".into());
        }
        Ok(total)
    }

    /// Checks that the stored log density matches a recomputation.
    pub fn verify_trace(&self, trace: &PathTrace, hyper: &Hyperparams) -> Result<(), PriorError> {
        let recomputed = self.log_prior(trace, hyper)?;
        let tol = 1e-9 * recomputed.abs().max(1.0);
        if (recomputed - trace.log_prior).abs() > tol && !(recomputed.is_infinite() && trace.log_prior == recomputed) {
            return Err(PriorError::InconsistentTrace(format!(
                "stored log prior {} but recomputed {}",
                trace.log_prior, recomputed
            )));
        }
        Ok(())
    }
}
