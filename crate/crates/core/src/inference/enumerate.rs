//! Exhaustive enumeration of prior traces within step and recursion caps.
//!
//! Every trace whose path stays within `max_steps` transitions (per path)
//! and `max_recursion_depth` nested recursion sites is visited with its
//! exact log probability. The probability of every branch cut off by a cap
//! is accumulated as truncated mass, so visited mass plus truncated mass is
//! one.

use std::collections::HashMap;
use std::sync::Arc;

use crate::hypergraph::EdgeLabel;
use crate::prior::{Choice, Hyperparams, OperadPrior, PathTrace, PriorError, Step};
use crate::signature::Ty;
use crate::term::{compose_seq, par, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumConfig {
    pub max_steps: usize,
    pub max_recursion_depth: usize,
}

/// A complete trace handed to the visitor.
pub struct Visit<'a> {
    pub dom: &'a Ty,
    pub cod: &'a Ty,
    pub term: &'a Term,
    pub log_prior: f64,
    steps: &'a [Step],
}

impl Visit<'_> {
    pub fn steps(&self) -> &[Step] {
        self.steps
    }

    pub fn to_trace(&self) -> PathTrace {
        PathTrace {
            dom: self.dom.clone(),
            cod: self.cod.clone(),
            term: self.term.clone(),
            steps: self.steps.to_vec(),
            log_prior: self.log_prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumerated {
    pub term: Term,
    pub log_prior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub items: Vec<Enumerated>,
    pub truncated_mass: f64,
}

impl Enumeration {
    pub fn total_mass(&self) -> f64 {
        self.items.iter().map(|e| e.log_prior.exp()).sum::<f64>()
    }
}

struct SubEnum {
    traces: Vec<PathTrace>,
    truncated: f64,
}

type PolicyCache = HashMap<(usize, usize, usize), Arc<[(usize, f64)]>>;

struct Enumerator<'a> {
    prior: &'a OperadPrior,
    beta: f64,
    w: &'a [f64],
    cfg: EnumConfig,
    /// keyed by (current vertex, target, recursion depth)
    policies: PolicyCache,
    choices: HashMap<(usize, usize), Arc<[f64]>>,
    subs: HashMap<(usize, usize, usize), Arc<SubEnum>>,
}

struct Frame<'v> {
    from: usize,
    to: usize,
    depth: usize,
    visitor: &'v mut dyn FnMut(&Visit<'_>),
}

impl<'a> Enumerator<'a> {
    fn policy(&mut self, cur: usize, to: usize, depth: usize) -> Result<Arc<[(usize, f64)]>, PriorError> {
        if let Some(p) = self.policies.get(&(cur, to, depth)) {
            return Ok(p.clone());
        }
        let p: Arc<[(usize, f64)]> = self
            .prior
            .policy(cur, to, self.beta + depth as f64)?
            .into_iter()
            .filter(|&(_, q)| q > 0.0)
            .collect();
        self.policies.insert((cur, to, depth), p.clone());
        Ok(p)
    }

    fn choice(&mut self, edge: usize, depth: usize) -> Result<Arc<[f64]>, PriorError> {
        if let Some(c) = self.choices.get(&(edge, depth)) {
            return Ok(c.clone());
        }
        let c: Arc<[f64]> = self.prior.choice_distribution(edge, self.beta + depth as f64, self.w)?.into();
        self.choices.insert((edge, depth), c.clone());
        Ok(c)
    }

    fn sub(&mut self, from: usize, to: usize, depth: usize) -> Result<Arc<SubEnum>, PriorError> {
        if let Some(s) = self.subs.get(&(from, to, depth)) {
            return Ok(s.clone());
        }
        let mut traces = Vec::new();
        let truncated = self.walk(from, to, depth, &mut |v: &Visit<'_>| traces.push(v.to_trace()))?;
        let s = Arc::new(SubEnum { traces, truncated });
        self.subs.insert((from, to, depth), s.clone());
        Ok(s)
    }

    fn walk(
        &mut self,
        from: usize,
        to: usize,
        depth: usize,
        visitor: &mut dyn FnMut(&Visit<'_>),
    ) -> Result<f64, PriorError> {
        let ty = self.prior.graph().vertices()[from].clone();
        let mut frame = Frame { from, to, depth, visitor };
        let mut steps = Vec::new();
        self.dfs(&mut frame, from, Term::Id(ty), 0.0, &mut steps)
    }

    fn dfs(
        &mut self,
        frame: &mut Frame<'_>,
        cur: usize,
        term: Term,
        logp: f64,
        steps: &mut Vec<Step>,
    ) -> Result<f64, PriorError> {
        let vertices = self.prior.graph().vertices();
        if cur == frame.to {
            (frame.visitor)(&Visit {
                dom: &vertices[frame.from],
                cod: &vertices[frame.to],
                term: &term,
                log_prior: logp,
                steps,
            });
            return Ok(0.0);
        }
        if steps.len() >= self.cfg.max_steps {
            return Ok(logp.exp());
        }
        let mut truncated = 0.0;
        let policy = self.policy(cur, frame.to, frame.depth)?;
        for &(edge, p) in policy.iter() {
            let probs = self.choice(edge, frame.depth)?;
            let target = self.prior.graph().edges()[edge].target;
            for (index, &q) in probs.iter().enumerate() {
                if q <= 0.0 {
                    continue;
                }
                let base = logp + p.ln() + q.ln();
                match self.prior.graph().edges()[edge].labels[index] {
                    EdgeLabel::Generator(g) => {
                        let piece = Term::Gen(self.prior.graph().signature().generators()[g].clone());
                        let choice = Choice { probs: probs.clone(), index, log_prob: q.ln(), sub_traces: Vec::new() };
                        steps.push(Step { edge, log_policy: p.ln(), choice });
                        truncated += self.dfs(frame, target, compose_seq(term.clone(), piece)?, base, steps)?;
                        steps.pop();
                    }
                    EdgeLabel::Site(s) => {
                        if frame.depth >= self.cfg.max_recursion_depth {
                            truncated += base.exp();
                            continue;
                        }
                        let pairs = self.prior.graph().recursion_sites()[s].pairs.clone();
                        let mut subs = Vec::with_capacity(pairs.len());
                        for (d, c) in &pairs {
                            let (dv, cv) = (self.prior.vertex(d)?, self.prior.vertex(c)?);
                            subs.push(self.sub(dv, cv, frame.depth + 1)?);
                        }
                        let kept: f64 = subs.iter().map(|s| 1.0 - s.truncated).product();
                        truncated += base.exp() * (1.0 - kept);
                        if subs.iter().any(|s| s.traces.is_empty()) {
                            continue;
                        }
                        // odometer over the cartesian product, last factor fastest
                        let mut idx = vec![0usize; subs.len()];
                        'combos: loop {
                            let chosen: Vec<PathTrace> =
                                idx.iter().zip(&subs).map(|(&i, s)| s.traces[i].clone()).collect();
                            let sub_lp: f64 = chosen.iter().map(|t| t.log_prior).sum();
                            let piece = par(chosen.iter().map(|t| t.term.clone()).collect())?;
                            let choice = Choice { probs: probs.clone(), index, log_prob: q.ln(), sub_traces: chosen };
                            steps.push(Step { edge, log_policy: p.ln(), choice });
                            truncated += self.dfs(frame, target, compose_seq(term.clone(), piece)?, base + sub_lp, steps)?;
                            steps.pop();
                            let mut k = idx.len();
                            loop {
                                if k == 0 {
                                    break 'combos;
                                }
                                k -= 1;
                                idx[k] += 1;
                                if idx[k] < subs[k].traces.len() {
                                    break;
                                }
                                idx[k] = 0;
                            }
                        }
                    }
                }
            }
        }
        Ok(truncated)
    }
}

/// Visits every trace `dom -> cod` within the caps and returns the
/// truncated mass.
pub fn visit_traces(
    prior: &OperadPrior,
    dom: &Ty,
    cod: &Ty,
    hyper: &Hyperparams,
    cfg: EnumConfig,
    visitor: &mut dyn FnMut(&Visit<'_>),
) -> Result<f64, PriorError> {
    let (from, to) = (prior.vertex(dom)?, prior.vertex(cod)?);
    if prior.graph().weight_len() != hyper.weights().len() {
        return Err(PriorError::WeightLength { expected: prior.graph().weight_len(), found: hyper.weights().len() });
    }
    if !prior.reachable(dom, cod)? {
        return Ok(1.0);
    }
    let mut e = Enumerator {
        prior,
        beta: hyper.beta(),
        w: hyper.weights(),
        cfg,
        policies: HashMap::new(),
        choices: HashMap::new(),
        subs: HashMap::new(),
    };
    e.walk(from, to, 0, visitor)
}

/// Collects every trace within the caps with its exact conditional log
/// prior, in depth-first order.
pub fn enumerate_morphisms(
    prior: &OperadPrior,
    dom: &Ty,
    cod: &Ty,
    hyper: &Hyperparams,
    cfg: EnumConfig,
) -> Result<Enumeration, PriorError> {
    let mut items = Vec::new();
    let truncated_mass = visit_traces(prior, dom, cod, hyper, cfg, &mut |v: &Visit<'_>| {
        items.push(Enumerated { term: v.term.clone(), log_prior: v.log_prior })
    })?;
    Ok(Enumeration { items, truncated_mass })
}
