//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use freeop::distance::DEFAULT_EXPM_TOL;
use freeop::inference::{log_likelihood, visit_traces, EnumConfig, Visit};
use freeop::prior::{sample_weights, Hyperparams, OperadPrior, PathTrace};
use freeop::signature::{parse_signature, Signature};
use freeop::tasks::{load_task, Task};
use freeop::term::Term;
use freeop::wiring::{compose_diagram, parse_diagram, validate_wiring, ValidatedDiagram};
use freeop::{build_hypergraph, Ty};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn signature(name: &str) -> Arc<Signature> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    Arc::new(parse_signature(&text).unwrap())
}

pub fn prior(name: &str) -> OperadPrior {
    OperadPrior::new(build_hypergraph(&signature(name), 4).unwrap(), DEFAULT_EXPM_TOL).unwrap()
}

pub fn diagram(name: &str) -> ValidatedDiagram {
    let text = std::fs::read_to_string(fixture(&format!("diagrams/{name}"))).unwrap();
    validate_wiring(&parse_diagram(&text).unwrap()).unwrap()
}

pub fn task(prior: &OperadPrior, name: &str) -> Task {
    load_task(&fixture(&format!("tasks/{name}")), prior.graph().signature().clone()).unwrap()
}

pub fn ty(s: &str) -> Ty {
    s.parse().unwrap()
}

pub const SIGNATURE_FIXTURES: [&str; 4] = ["arith_small.json", "chain.json", "chain_loop.json", "single.json"];

/// A composite morphism whose likelihood is within `SIGNIFICANCE` nats of
/// the best one found, with the per-box traces that produced it.
#[derive(Clone)]
pub struct Significant {
    pub term: Term,
    pub log_lik: f64,
    pub traces: Vec<PathTrace>,
}

pub const SIGNIFICANCE: f64 = 40.0;

pub struct Oracle {
    /// `Σ_f p(f | beta, w) p(x | f)` over every enumerated combination.
    pub evidence: f64,
    /// Probability mass of box traces cut off by the caps.
    pub truncated_mass: f64,
    pub significant: Vec<Significant>,
}

/// Brute-force conditional evidence: enumerates every box within `cfg`,
/// streaming box 0 and taking the product with the other boxes.
pub fn enumeration_oracle(
    prior: &OperadPrior,
    d: &ValidatedDiagram,
    task: &Task,
    hyper: &Hyperparams,
    cfg: EnumConfig,
) -> Oracle {
    let boxes = d.boxes();
    let mut rest: Vec<Vec<PathTrace>> = Vec::new();
    let mut kept = 1.0;
    for b in &boxes[1..] {
        let mut traces = Vec::new();
        let t = visit_traces(prior, &b.dom, &b.cod, hyper, cfg, &mut |v: &Visit<'_>| traces.push(v.to_trace())).unwrap();
        kept *= 1.0 - t;
        rest.push(traces);
    }
    let mut evidence = 0.0;
    let mut best = f64::NEG_INFINITY;
    let mut significant: Vec<Significant> = Vec::new();
    let t0 = visit_traces(prior, &boxes[0].dom, &boxes[0].cod, hyper, cfg, &mut |v: &Visit<'_>| {
        let mut idx = vec![0usize; rest.len()];
        loop {
            let mut fs = vec![v.term.clone()];
            let mut lp = v.log_prior;
            for (k, &i) in idx.iter().enumerate() {
                fs.push(rest[k][i].term.clone());
                lp += rest[k][i].log_prior;
            }
            let term = compose_diagram(d, &fs).unwrap();
            let ll = log_likelihood(task, &term).unwrap();
            evidence += (lp + ll).exp();
            if ll > best - SIGNIFICANCE {
                best = best.max(ll);
                let mut traces = vec![v.to_trace()];
                traces.extend(idx.iter().enumerate().map(|(k, &i)| rest[k][i].clone()));
                significant.push(Significant { term: term.canonical(), log_lik: ll, traces });
            }
            // advance the odometer over the remaining boxes
            let mut k = idx.len();
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < rest[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    })
    .unwrap();
    kept *= 1.0 - t0;
    significant.retain(|s| s.log_lik > best - SIGNIFICANCE);
    Oracle { evidence, truncated_mass: 1.0 - kept, significant }
}

/// 16 temperatures at Exp(1) quantile midpoints crossed with 16 fixed
/// Dirichlet(1) weight draws, equally weighted.
pub fn hyper_grid(n_weights: usize) -> Vec<Hyperparams> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ws: Vec<Vec<f64>> = (0..16).map(|_| sample_weights(&mut rng, n_weights).unwrap()).collect();
    let mut grid = Vec::with_capacity(256);
    for i in 0..16 {
        let beta = -(1.0 - (i as f64 + 0.5) / 16.0).ln();
        for w in &ws {
            grid.push(Hyperparams::new(beta, w.clone()).unwrap());
        }
    }
    grid
}

pub struct GridPosterior {
    pub log_evidence: f64,
    /// Canonical term string to posterior probability.
    pub posterior: HashMap<String, f64>,
}

/// Marginalises the significant morphisms over the hyperparameter grid.
pub fn grid_posterior(prior: &OperadPrior, significant: &[Significant]) -> GridPosterior {
    let grid = hyper_grid(prior.graph().weight_len());
    let mut mass: HashMap<String, f64> = HashMap::new();
    let mut total = 0.0;
    for h in &grid {
        for s in significant {
            let lp: f64 = s.traces.iter().map(|t| prior.log_prior(t, h).unwrap()).sum();
            let m = (lp + s.log_lik).exp() / grid.len() as f64;
            *mass.entry(s.term.to_string()).or_default() += m;
            total += m;
        }
    }
    for v in mass.values_mut() {
        *v /= total;
    }
    GridPosterior { log_evidence: total.ln(), posterior: mass }
}
