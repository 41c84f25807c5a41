//! Wiring diagrams: typed boxes connected acyclically inside an outer box.
//!
//! A wire moves a contiguous run of factor slots from a source (the outer
//! domain or a box codomain) to a target (a box domain or the outer
//! codomain). Every target slot is fed by exactly one wire and every source
//! slot is consumed by exactly one wire. Since terms have no symmetry
//! morphisms, wires may not cross; a layout that would need a permutation is
//! rejected during validation.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::{log_pdf_beta, log_pdf_weights, Hyperparams, OperadPrior, PathTrace, PriorError};
use crate::signature::Ty;
use crate::term::{compose_seq, par, Term, TermError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WiringError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("wire {wire}: {msg}")]
    InvalidWire { wire: usize, msg: String },
    #[error("wire {wire}: slot types {source_ty} and {target_ty} differ")]
    SlotTypeMismatch { wire: usize, source_ty: Ty, target_ty: Ty },
    #[error("{0} is not connected")]
    DanglingSlot(String),
    #[error("{0} is connected more than once")]
    OverlappingWires(String),
    #[error("boxes are wired in a cycle")]
    CyclicWiring,
    #[error("wires cross; the layout needs a permutation")]
    PermutiveWiring,
    #[error("expected {expected} box morphisms, got {found}")]
    BoxCount { expected: usize, found: usize },
    #[error("box {index}: morphism types as {found_dom} -> {found_cod}, box is {dom} -> {cod}")]
    TypeMismatch { index: usize, dom: Ty, cod: Ty, found_dom: Ty, found_cod: Ty },
    #[error("box {index}: {source}")]
    Box { index: usize, source: PriorError },
    #[error(transparent)]
    Term(#[from] TermError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Outer,
    Box(usize),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Outer => write!(f, "outer"),
            Endpoint::Box(i) => write!(f, "box {i}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EndpointRepr {
    Name(String),
    Index(usize),
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Endpoint::Outer => EndpointRepr::Name("outer".into()),
            Endpoint::Box(i) => EndpointRepr::Index(i),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match EndpointRepr::deserialize(d)? {
            EndpointRepr::Name(n) if n == "outer" => Ok(Endpoint::Outer),
            EndpointRepr::Name(n) => Err(serde::de::Error::custom(format!(
                "endpoint must be \"outer\" or a box index, got {n:?}"
            ))),
            EndpointRepr::Index(i) => Ok(Endpoint::Box(i)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxType {
    pub dom: Ty,
    pub cod: Ty,
}

/// Slot ranges `from..from+len` at the source and `to..to+len` at the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotRange {
    pub from: usize,
    pub to: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wire {
    pub from: Endpoint,
    pub to: Endpoint,
    pub slots: SlotRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WiringDiagram {
    pub outer: BoxType,
    pub boxes: Vec<BoxType>,
    pub wires: Vec<Wire>,
}

impl WiringDiagram {
    /// One box equal to the outer box, wired straight through.
    pub fn single(dom: Ty, cod: Ty) -> Self {
        let mut wires = Vec::new();
        if !dom.is_unit() {
            wires.push(Wire { from: Endpoint::Outer, to: Endpoint::Box(0), slots: SlotRange { from: 0, to: 0, len: dom.len() } });
        }
        if !cod.is_unit() {
            wires.push(Wire { from: Endpoint::Box(0), to: Endpoint::Outer, slots: SlotRange { from: 0, to: 0, len: cod.len() } });
        }
        let b = BoxType { dom, cod };
        WiringDiagram { outer: b.clone(), boxes: vec![b], wires }
    }
}

pub fn parse_diagram(text: &str) -> Result<WiringDiagram, WiringError> {
    serde_json::from_str(text).map_err(|e| WiringError::Schema(e.to_string()))
}

/// One horizontal slice of the composite: identities and boxes side by side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Id(Ty),
    Box(usize),
}

/// A diagram that passed validation, with its layer schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedDiagram {
    diagram: WiringDiagram,
    layers: Vec<Vec<Piece>>,
}

impl ValidatedDiagram {
    pub fn diagram(&self) -> &WiringDiagram {
        &self.diagram
    }

    pub fn outer(&self) -> &BoxType {
        &self.diagram.outer
    }

    pub fn boxes(&self) -> &[BoxType] {
        &self.diagram.boxes
    }

    pub fn layers(&self) -> &[Vec<Piece>] {
        &self.layers
    }
}

type Source = (Endpoint, usize);

fn slot_name(e: Endpoint, side: &str, slot: usize) -> String {
    format!("{e} {side} slot {slot}")
}

pub fn validate_wiring(d: &WiringDiagram) -> Result<ValidatedDiagram, WiringError> {
    let nboxes = d.boxes.len();
    let source_ty = |e: Endpoint| match e {
        Endpoint::Outer => Some(&d.outer.dom),
        Endpoint::Box(i) => d.boxes.get(i).map(|b| &b.cod),
    };
    let target_ty = |e: Endpoint| match e {
        Endpoint::Outer => Some(&d.outer.cod),
        Endpoint::Box(i) => d.boxes.get(i).map(|b| &b.dom),
    };

    // feeds[target] = source of each target slot
    let mut box_feeds: Vec<Vec<Option<Source>>> = d.boxes.iter().map(|b| vec![None; b.dom.len()]).collect();
    let mut outer_feeds: Vec<Option<Source>> = vec![None; d.outer.cod.len()];
    let mut consumed: HashMap<Source, usize> = HashMap::new();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); nboxes];

    for (w, wire) in d.wires.iter().enumerate() {
        let invalid = |msg: String| WiringError::InvalidWire { wire: w, msg };
        let sty = source_ty(wire.from).ok_or_else(|| invalid(format!("no such source {}", wire.from)))?;
        let tty = target_ty(wire.to).ok_or_else(|| invalid(format!("no such target {}", wire.to)))?;
        let SlotRange { from, to, len } = wire.slots;
        if len == 0 {
            return Err(invalid("empty slot range".into()));
        }
        if from + len > sty.len() {
            return Err(invalid(format!("source range {from}..{} exceeds {sty}", from + len)));
        }
        if to + len > tty.len() {
            return Err(invalid(format!("target range {to}..{} exceeds {tty}", to + len)));
        }
        let (s, t) = (sty.slice(from, from + len), tty.slice(to, to + len));
        if s != t {
            return Err(WiringError::SlotTypeMismatch { wire: w, source_ty: s, target_ty: t });
        }
        if let (Endpoint::Box(i), Endpoint::Box(j)) = (wire.from, wire.to) {
            if i == j {
                return Err(WiringError::CyclicWiring);
            }
            preds[j].push(i);
        }
        for k in 0..len {
            let src = (wire.from, from + k);
            if consumed.insert(src, w).is_some() {
                return Err(WiringError::OverlappingWires(slot_name(wire.from, "output", from + k)));
            }
            let feed = match wire.to {
                Endpoint::Outer => &mut outer_feeds[to + k],
                Endpoint::Box(j) => &mut box_feeds[j][to + k],
            };
            if feed.replace(src).is_some() {
                return Err(WiringError::OverlappingWires(slot_name(wire.to, "input", to + k)));
            }
        }
    }

    for (j, feeds) in box_feeds.iter().enumerate() {
        if let Some(k) = feeds.iter().position(Option::is_none) {
            return Err(WiringError::DanglingSlot(slot_name(Endpoint::Box(j), "input", k)));
        }
    }
    if let Some(k) = outer_feeds.iter().position(Option::is_none) {
        return Err(WiringError::DanglingSlot(slot_name(Endpoint::Outer, "output", k)));
    }
    for k in 0..d.outer.dom.len() {
        if !consumed.contains_key(&(Endpoint::Outer, k)) {
            return Err(WiringError::DanglingSlot(slot_name(Endpoint::Outer, "input", k)));
        }
    }
    for (i, b) in d.boxes.iter().enumerate() {
        for k in 0..b.cod.len() {
            if !consumed.contains_key(&(Endpoint::Box(i), k)) {
                return Err(WiringError::DanglingSlot(slot_name(Endpoint::Box(i), "output", k)));
            }
        }
    }

    // Kahn's algorithm for acyclicity
    let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); nboxes];
    for (j, ps) in preds.iter().enumerate() {
        for &i in ps {
            succs[i].push(j);
        }
    }
    let mut queue: Vec<usize> = (0..nboxes).filter(|&j| indegree[j] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop() {
        seen += 1;
        for &j in &succs[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                queue.push(j);
            }
        }
    }
    if seen != nboxes {
        return Err(WiringError::CyclicWiring);
    }

    let box_feeds: Vec<Vec<Source>> = box_feeds.into_iter().map(|f| f.into_iter().flatten().collect()).collect();
    let outer_feeds: Vec<Source> = outer_feeds.into_iter().flatten().collect();
    let layers = schedule(d, &box_feeds, &outer_feeds, &preds)?;
    Ok(ValidatedDiagram { diagram: d.clone(), layers })
}

/// Places boxes into layers over a running bundle of live wires. A box
/// fires once its inputs sit next to each other, in order, in the bundle.
fn schedule(
    d: &WiringDiagram,
    box_feeds: &[Vec<Source>],
    outer_feeds: &[Source],
    preds: &[Vec<usize>],
) -> Result<Vec<Vec<Piece>>, WiringError> {
    let mut bundle: Vec<Source> = (0..d.outer.dom.len()).map(|k| (Endpoint::Outer, k)).collect();
    let mut done = vec![false; d.boxes.len()];
    let mut layers = Vec::new();
    while done.iter().any(|x| !x) {
        let ready: Vec<usize> =
            (0..d.boxes.len()).filter(|&j| !done[j] && preds[j].iter().all(|&i| done[i])).collect();
        // start position in the bundle of each ready box that can fire now
        let mut starts: HashMap<usize, usize> = HashMap::new();
        let mut sources: Vec<usize> = Vec::new();
        for &j in &ready {
            let feeds = &box_feeds[j];
            if feeds.is_empty() {
                sources.push(j);
                continue;
            }
            let Some(p) = bundle.iter().position(|s| *s == feeds[0]) else { continue };
            if bundle.len() >= p + feeds.len() && bundle[p..p + feeds.len()] == feeds[..] {
                starts.insert(p, j);
            }
        }
        if starts.is_empty() && sources.is_empty() {
            return Err(WiringError::PermutiveWiring);
        }
        let mut layer = Vec::new();
        let mut next = Vec::new();
        let mut run: Vec<Source> = Vec::new();
        let flush = |run: &mut Vec<Source>, layer: &mut Vec<Piece>| {
            if !run.is_empty() {
                let ty = crate::signature::tensor_all(run.iter().map(|s| source_factor(d, *s)).collect::<Vec<_>>().iter());
                layer.push(Piece::Id(ty));
                run.clear();
            }
        };
        let mut p = 0;
        while p < bundle.len() {
            if let Some(&j) = starts.get(&p) {
                flush(&mut run, &mut layer);
                layer.push(Piece::Box(j));
                next.extend((0..d.boxes[j].cod.len()).map(|k| (Endpoint::Box(j), k)));
                done[j] = true;
                p += box_feeds[j].len();
            } else {
                run.push(bundle[p]);
                next.push(bundle[p]);
                p += 1;
            }
        }
        flush(&mut run, &mut layer);
        for j in sources {
            layer.push(Piece::Box(j));
            next.extend((0..d.boxes[j].cod.len()).map(|k| (Endpoint::Box(j), k)));
            done[j] = true;
        }
        layers.push(layer);
        bundle = next;
    }
    if bundle != outer_feeds {
        return Err(WiringError::PermutiveWiring);
    }
    Ok(layers)
}

fn source_factor(d: &WiringDiagram, (e, k): Source) -> Ty {
    let ty = match e {
        Endpoint::Outer => &d.outer.dom,
        Endpoint::Box(i) => &d.boxes[i].cod,
    };
    ty.slice(k, k + 1)
}

/// Assembles the box morphisms into one morphism of the outer type.
pub fn compose_diagram(d: &ValidatedDiagram, fs: &[Term]) -> Result<Term, WiringError> {
    let boxes = d.boxes();
    if fs.len() != boxes.len() {
        return Err(WiringError::BoxCount { expected: boxes.len(), found: fs.len() });
    }
    for (index, (f, b)) in fs.iter().zip(boxes).enumerate() {
        let (found_dom, found_cod) = (f.dom(), f.cod());
        if found_dom != b.dom || found_cod != b.cod {
            return Err(WiringError::TypeMismatch { index, dom: b.dom.clone(), cod: b.cod.clone(), found_dom, found_cod });
        }
    }
    let mut acc = Term::Id(d.outer().dom.clone());
    for layer in d.layers() {
        let pieces: Vec<Term> = layer
            .iter()
            .map(|p| match p {
                Piece::Id(ty) => Term::Id(ty.clone()),
                Piece::Box(j) => fs[*j].clone(),
            })
            .collect();
        acc = compose_seq(acc, par(pieces)?)?;
    }
    Ok(acc)
}

/// One draw of every box morphism under shared hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagramSample {
    pub traces: Vec<PathTrace>,
    /// `Σ_i log p(f_i | beta, w)`.
    pub log_prior_boxes: f64,
    /// `log p(beta) + log p(w) + Σ_i log p(f_i | beta, w)`.
    pub joint_log_prior: f64,
}

/// Samples each box independently given `hyper`.
pub fn sample_diagram<R: Rng + ?Sized>(
    prior: &OperadPrior,
    d: &ValidatedDiagram,
    hyper: &Hyperparams,
    rng: &mut R,
    step_cap: usize,
) -> Result<DiagramSample, WiringError> {
    let mut traces = Vec::with_capacity(d.boxes().len());
    for (index, b) in d.boxes().iter().enumerate() {
        let t = prior
            .sample_path(&b.dom, &b.cod, hyper, rng, step_cap)
            .map_err(|source| WiringError::Box { index, source })?;
        traces.push(t);
    }
    let log_prior_boxes: f64 = traces.iter().map(|t| t.log_prior).sum();
    let hyper_lp = log_pdf_beta(hyper.beta()).map_err(|source| WiringError::Box { index: 0, source })?
        + log_pdf_weights(hyper.weights()).map_err(|source| WiringError::Box { index: 0, source })?;
    Ok(DiagramSample { traces, log_prior_boxes, joint_log_prior: hyper_lp + log_prior_boxes })
}

/// Checks that every box type is reachable in `prior`'s graph.
pub fn check_reachable(prior: &OperadPrior, d: &ValidatedDiagram) -> Result<(), WiringError> {
    for (index, b) in d.boxes().iter().enumerate() {
        let ok = prior.reachable(&b.dom, &b.cod).map_err(|source| WiringError::Box { index, source })?;
        if !ok {
            return Err(WiringError::Box {
                index,
                source: PriorError::Unreachable { from: b.dom.clone(), to: b.cod.clone() },
            });
        }
    }
    Ok(())
}
