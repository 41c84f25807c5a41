//! Variational family `q(beta) q(w)` with `q(beta) = Gamma(shape, rate)` and
//! `q(w) = Dirichlet(conc)`. Structures are proposed from the prior
//! conditional `p(f | beta, w)`, so the structure terms cancel in the ELBO.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::{run_particles, HyperSource, InferenceError, Model};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub dirichlet_conc: Vec<f64>,
}

impl VariationalParams {
    /// `q` equal to the prior: `Gamma(1, 1)` and `Dirichlet(1, ..., 1)`.
    pub fn prior(n_weights: usize) -> Self {
        VariationalParams { gamma_shape: 1.0, gamma_rate: 1.0, dirichlet_conc: vec![1.0; n_weights] }
    }

    pub fn validate(&self, n_weights: usize) -> Result<(), InferenceError> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if !ok(self.gamma_shape) || !ok(self.gamma_rate) || !self.dirichlet_conc.iter().all(|&c| ok(c)) {
            return Err(InferenceError::Precondition("variational parameters must be positive and finite".into()));
        }
        if self.dirichlet_conc.len() != n_weights {
            return Err(InferenceError::Precondition(format!(
                "dirichlet_conc has length {}, expected {n_weights}",
                self.dirichlet_conc.len()
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(f64, Vec<f64>), InferenceError> {
        let bad = |e: rand_distr::GammaError| InferenceError::Precondition(e.to_string());
        let g = Gamma::new(self.gamma_shape, 1.0 / self.gamma_rate).map_err(bad)?;
        let beta = loop {
            let b: f64 = g.sample(rng);
            if b > 0.0 && b.is_finite() {
                break b;
            }
        };
        let gs: Vec<Gamma<f64>> =
            self.dirichlet_conc.iter().map(|&a| Gamma::new(a, 1.0)).collect::<Result<_, _>>().map_err(bad)?;
        let w = loop {
            // clamp underflowed components so that log q(w) stays finite
            let raw: Vec<f64> = gs.iter().map(|g| g.sample(rng).max(f64::MIN_POSITIVE)).collect();
            let total: f64 = raw.iter().sum();
            if total.is_finite() {
                break raw.into_iter().map(|x| x / total).collect::<Vec<_>>();
            }
        };
        Ok((beta, w))
    }

    pub fn log_q_beta(&self, beta: f64) -> f64 {
        let (a, b) = (self.gamma_shape, self.gamma_rate);
        a * b.ln() - ln_gamma(a) + (a - 1.0) * beta.ln() - b * beta
    }

    pub fn log_q_weights(&self, w: &[f64]) -> f64 {
        let total: f64 = self.dirichlet_conc.iter().sum();
        ln_gamma(total)
            + self
                .dirichlet_conc
                .iter()
                .zip(w)
                .map(|(&a, &x)| -ln_gamma(a) + (a - 1.0) * x.ln())
                .sum::<f64>()
    }

    /// Log-parameters in the order shape, rate, conc.
    fn to_log(&self) -> Vec<f64> {
        let mut v = vec![self.gamma_shape.ln(), self.gamma_rate.ln()];
        v.extend(self.dirichlet_conc.iter().map(|c| c.ln()));
        v
    }

    fn from_log(v: &[f64]) -> Self {
        VariationalParams { gamma_shape: v[0].exp(), gamma_rate: v[1].exp(), dirichlet_conc: v[2..].iter().map(|x| x.exp()).collect() }
    }

    /// Gradient of `log q(beta) + log q(w)` with respect to the log-parameters.
    fn score(&self, beta: f64, w: &[f64]) -> Vec<f64> {
        let (a, b) = (self.gamma_shape, self.gamma_rate);
        let mut g = vec![a * (b.ln() - digamma(a) + beta.ln()), a - b * beta];
        let dt = digamma(self.dirichlet_conc.iter().sum());
        g.extend(self.dirichlet_conc.iter().zip(w).map(|(&c, &x)| c * (dt - digamma(c) + x.ln())));
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Samples that terminated; aborted ones are dropped.
    pub n_used: usize,
}

struct Draw {
    value: f64,
    beta: f64,
    w: Vec<f64>,
}

fn draws(model: &Model<'_>, q: &VariationalParams, n: usize, seed: u64) -> Result<Vec<Draw>, InferenceError> {
    let particles = run_particles(model, HyperSource::Variational(q), n, seed)?;
    let mut out = Vec::with_capacity(n);
    let mut last = String::new();
    for p in particles {
        match p {
            Ok(p) => out.push(Draw {
                value: p.log_lik + p.log_p_hyper - p.log_q_hyper,
                beta: p.hyper.beta(),
                w: p.hyper.weights().to_vec(),
            }),
            Err(msg) => last = msg,
        }
    }
    if out.is_empty() {
        return Err(InferenceError::AllParticlesFailed { n, last });
    }
    Ok(out)
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo ELBO:
/// `E_q[log p(x|f) + log p(beta) + log p(w) - log q(beta) - log q(w)]`.
pub fn elbo(model: &Model<'_>, q: &VariationalParams, n_samples: usize, seed: u64) -> Result<ElboEstimate, InferenceError> {
    q.validate(model.prior.graph().weight_len())?;
    if n_samples == 0 {
        return Err(InferenceError::Precondition("need at least one sample".into()));
    }
    let d = draws(model, q, n_samples, seed)?;
    let values: Vec<f64> = d.iter().map(|d| d.value).collect();
    let (value, stderr) = mean_stderr(&values);
    Ok(ElboEstimate { value, stderr, n_used: d.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub step_size: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboPoint {
    pub step: usize,
    pub elbo: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: VariationalParams,
    pub trajectory: Vec<ElboPoint>,
}

/// Score-function gradient ascent with a leave-one-out baseline, using Adam
/// on the log-parameters. Each step's ELBO estimate is taken before its
/// update, from the same samples as the gradient.
pub fn fit_variational(
    model: &Model<'_>,
    init: &VariationalParams,
    cfg: &FitConfig,
) -> Result<FitResult, InferenceError> {
    init.validate(model.prior.graph().weight_len())?;
    if cfg.steps > 0 && cfg.n_samples < 2 {
        return Err(InferenceError::Precondition("the leave-one-out baseline needs n_samples >= 2".into()));
    }
    if !(cfg.step_size > 0.0 && cfg.step_size.is_finite()) {
        return Err(InferenceError::Precondition(format!("step_size must be positive, got {}", cfg.step_size)));
    }
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut theta = init.to_log();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut q = init.clone();
    let mut trajectory = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let d = draws(model, &q, cfg.n_samples, derive_seed(cfg.seed, step as u64))?;
        let values: Vec<f64> = d.iter().map(|d| d.value).collect();
        let (elbo, stderr) = mean_stderr(&values);
        trajectory.push(ElboPoint { step, elbo, stderr });
        let mut grad = vec![0.0; theta.len()];
        if d.len() >= 2 {
            let n = d.len() as f64;
            let total: f64 = values.iter().sum();
            for draw in &d {
                let baseline = (total - draw.value) / (n - 1.0);
                let s = q.score(draw.beta, &draw.w);
                for (g, si) in grad.iter_mut().zip(s) {
                    *g += (draw.value - baseline) * si / n;
                }
            }
        }
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(InferenceError::NonFiniteGradient {
                step,
                detail: format!("component {k} of the gradient is {}; params {:?}", grad[k], q),
            });
        }
        let t = (step + 1) as i32;
        for i in 0..theta.len() {
            m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
            v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - B1.powi(t));
            let vh = v[i] / (1.0 - B2.powi(t));
            theta[i] += cfg.step_size * mh / (vh.sqrt() + EPS);
        }
        q = VariationalParams::from_log(&theta);
    }
    Ok(FitResult { params: q, trajectory })
}
