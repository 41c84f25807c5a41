use std::collections::HashMap;

use serde::Serialize;

use super::{logsumexp, run_particles, HyperSource, InferenceError, Model, VariationalParams};
use crate::term::Term;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorEntry {
    #[serde(serialize_with = "term_as_string")]
    pub term: Term,
    pub weight: f64,
}

fn term_as_string<S: serde::Serializer>(t: &Term, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(t)
}

/// Importance-weighted posterior over composite morphisms.
///
/// Draws `(beta, w) ~ q` and `f ~ p(f | beta, w)`, weights each particle by
/// `p(x | f) p(beta) p(w) / (q(beta) q(w))`, and merges particles whose
/// canonical terms agree. Entries are sorted by weight, heaviest first.
pub fn posterior_samples(
    model: &Model<'_>,
    q: &VariationalParams,
    n: usize,
    seed: u64,
) -> Result<Vec<PosteriorEntry>, InferenceError> {
    q.validate(model.prior.graph().weight_len())?;
    if n == 0 {
        return Err(InferenceError::Precondition("need at least one particle".into()));
    }
    let particles = run_particles(model, HyperSource::Variational(q), n, seed)?;
    let mut kept = Vec::with_capacity(n);
    let mut last = String::new();
    for p in particles {
        match p {
            Ok(p) => {
                let lw = p.log_lik + p.log_p_hyper - p.log_q_hyper;
                kept.push((p.term.canonical(), lw));
            }
            Err(msg) => last = msg,
        }
    }
    if kept.is_empty() {
        return Err(InferenceError::AllParticlesFailed { n, last });
    }
    let log_ws: Vec<f64> = kept.iter().map(|(_, lw)| *lw).collect();
    let norm = logsumexp(&log_ws);
    if !norm.is_finite() {
        return Err(InferenceError::AllParticlesFailed { n, last: "every particle has zero likelihood".into() });
    }

    // first-seen order keeps the merge deterministic
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut entries: Vec<PosteriorEntry> = Vec::new();
    for (term, lw) in kept {
        let weight = (lw - norm).exp();
        let key = term.to_string();
        match slot.get(&key) {
            Some(&i) => entries[i].weight += weight,
            None => {
                slot.insert(key, entries.len());
                entries.push(PosteriorEntry { term, weight });
            }
        }
    }
    entries.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.term.to_string().cmp(&b.term.to_string())));
    Ok(entries)
}
