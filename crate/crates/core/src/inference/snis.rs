use serde::{Deserialize, Serialize};

use super::{run_particles, HyperSource, InferenceError, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub log_z_hat: f64,
    pub ess: f64,
    pub n_particles: usize,
    pub seed: u64,
    /// Particles that hit the step cap or failed to evaluate (weight zero).
    pub n_failed: usize,
    /// Delta-method standard error of `log_z_hat`.
    pub log_z_stderr: f64,
}

/// Self-normalised importance sampling with the prior as proposal, so each
/// particle's weight is its likelihood. With `HyperSource::Fixed` the
/// estimate is the conditional evidence `p(x | beta, w)`.
pub fn snis_evidence(
    model: &Model<'_>,
    source: HyperSource<'_>,
    n_particles: usize,
    seed: u64,
) -> Result<EvidenceReport, InferenceError> {
    if n_particles < 2 {
        return Err(InferenceError::Precondition(format!("need at least 2 particles, got {n_particles}")));
    }
    if matches!(source, HyperSource::Variational(_)) {
        return Err(InferenceError::Precondition("evidence uses the prior or fixed hyperparameters".into()));
    }
    let particles = run_particles(model, source, n_particles, seed)?;
    let mut log_w = Vec::with_capacity(n_particles);
    let mut last = String::new();
    for p in &particles {
        match p {
            Ok(p) => log_w.push(p.log_lik),
            Err(msg) => {
                last.clone_from(msg);
                log_w.push(f64::NEG_INFINITY);
            }
        }
    }
    let n_failed = particles.iter().filter(|p| p.is_err()).count();
    if n_failed == n_particles {
        return Err(InferenceError::AllParticlesFailed { n: n_particles, last });
    }
    let n = n_particles as f64;
    // moments of w / max(w) to stay in range
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let s1: f64 = scaled.iter().sum();
    let s2: f64 = scaled.iter().map(|x| x * x).sum();
    let ess = s1 * s1 / s2;
    let mean = s1 / n;
    let log_z_hat = max + mean.ln();
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    let log_z_stderr = (var / n).sqrt() / mean;
    Ok(EvidenceReport { log_z_hat, ess, n_particles, seed, n_failed, log_z_stderr })
}
