//! Morphisms of the free operad as string-diagram syntax trees.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::signature::{tensor, tensor_all, Generator, Signature, Ty};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TermError {
    #[error("type mismatch: {left} does not match {right}")]
    TypeMismatch { left: Ty, right: Ty },
    #[error("slot {index} out of range for a term with {slots} input slots")]
    IndexOutOfRange { index: usize, slots: usize },
    #[error("empty monoidal product")]
    EmptyProduct,
    #[error("generator {0:?} has no interpreter binding")]
    UnboundGenerator(String),
    #[error("arity error: expected {expected} values, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("unknown generator {0:?}")]
    UnknownGenerator(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// A morphism. Children are reference counted so that terms built by
/// extending a common prefix share it.
#[derive(Clone, PartialEq)]
pub enum Term {
    Id(Ty),
    Gen(Arc<Generator>),
    Seq(Arc<Term>, Arc<Term>),
    Par(Arc<[Term]>),
}

impl Term {
    pub fn id(ty: Ty) -> Term {
        Term::Id(ty)
    }

    pub fn gen(g: Arc<Generator>) -> Term {
        Term::Gen(g)
    }

    pub fn dom(&self) -> Ty {
        match self {
            Term::Id(t) => t.clone(),
            Term::Gen(g) => g.dom.clone(),
            Term::Seq(a, _) => a.dom(),
            Term::Par(fs) => {
                let doms: Vec<Ty> = fs.iter().map(Term::dom).collect();
                tensor_all(&doms)
            }
        }
    }

    pub fn cod(&self) -> Ty {
        match self {
            Term::Id(t) => t.clone(),
            Term::Gen(g) => g.cod.clone(),
            Term::Seq(_, b) => b.cod(),
            Term::Par(fs) => {
                let cods: Vec<Ty> = fs.iter().map(Term::cod).collect();
                tensor_all(&cods)
            }
        }
    }

    fn dom_len(&self) -> usize {
        match self {
            Term::Id(t) => t.len(),
            Term::Gen(g) => g.dom.len(),
            Term::Seq(a, _) => a.dom_len(),
            Term::Par(fs) => fs.iter().map(Term::dom_len).sum(),
        }
    }

    fn cod_len(&self) -> usize {
        match self {
            Term::Id(t) => t.len(),
            Term::Gen(g) => g.cod.len(),
            Term::Seq(_, b) => b.cod_len(),
            Term::Par(fs) => fs.iter().map(Term::cod_len).sum(),
        }
    }

    /// Sequential composition without identity absorption.
    pub fn seq(first: Term, second: Term) -> Result<Term, TermError> {
        let (c, d) = (first.cod(), second.dom());
        if c != d {
            return Err(TermError::TypeMismatch { left: c, right: d });
        }
        Ok(Term::Seq(Arc::new(first), Arc::new(second)))
    }

    pub fn is_id(&self) -> bool {
        matches!(self, Term::Id(_))
    }

    /// Number of generator occurrences.
    pub fn size(&self) -> usize {
        match self {
            Term::Id(_) => 0,
            Term::Gen(_) => 1,
            Term::Seq(a, b) => a.size() + b.size(),
            Term::Par(fs) => fs.iter().map(Term::size).sum(),
        }
    }

    /// Normal form used for deduplication: identities dropped from
    /// sequences, sequences left-nested, products flattened, and adjacent
    /// identities in a product merged into one.
    pub fn canonical(&self) -> Term {
        match self {
            Term::Id(_) | Term::Gen(_) => self.clone(),
            Term::Seq(..) => {
                let mut parts = Vec::new();
                self.collect_seq(&mut parts);
                let parts: Vec<Term> =
                    parts.into_iter().map(|p| p.canonical()).filter(|p| !p.is_id()).collect();
                let mut iter = parts.into_iter();
                match iter.next() {
                    None => Term::Id(self.dom()),
                    Some(first) => iter.fold(first, |acc, t| Term::Seq(Arc::new(acc), Arc::new(t))),
                }
            }
            Term::Par(fs) => {
                let mut flat: Vec<Term> = Vec::new();
                let mut push = |t: Term| match (flat.last_mut(), &t) {
                    (_, Term::Id(ty)) if ty.is_unit() => {}
                    (Some(Term::Id(prev)), Term::Id(ty)) => *prev = tensor(prev, ty),
                    _ => flat.push(t),
                };
                for f in fs.iter() {
                    match f.canonical() {
                        Term::Par(inner) => inner.iter().cloned().for_each(&mut push),
                        other => push(other),
                    }
                }
                match flat.len() {
                    0 => Term::Id(Ty::unit()),
                    1 => flat.pop().unwrap(),
                    _ => Term::Par(flat.into()),
                }
            }
        }
    }

    fn collect_seq<'a>(&'a self, out: &mut Vec<&'a Term>) {
        match self {
            Term::Seq(a, b) => {
                a.collect_seq(out);
                b.collect_seq(out);
            }
            other => out.push(other),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Id(t) => write!(f, "(id {t})"),
            Term::Gen(g) => write!(f, "(gen {})", g.name),
            Term::Seq(a, b) => write!(f, "(seq {a} {b})"),
            Term::Par(fs) => {
                f.write_str("(par")?;
                for t in fs.iter() {
                    write!(f, " {t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// `f ⨟ g`, absorbing identities on either side.
pub fn compose_seq(f: Term, g: Term) -> Result<Term, TermError> {
    let (c, d) = (f.cod(), g.dom());
    if c != d {
        return Err(TermError::TypeMismatch { left: c, right: d });
    }
    if f.is_id() {
        return Ok(g);
    }
    if g.is_id() {
        return Ok(f);
    }
    Ok(Term::Seq(Arc::new(f), Arc::new(g)))
}

/// Monoidal product of a non-empty list; a singleton is returned unchanged.
pub fn par(mut ts: Vec<Term>) -> Result<Term, TermError> {
    match ts.len() {
        0 => Err(TermError::EmptyProduct),
        1 => Ok(ts.pop().unwrap()),
        _ => Ok(Term::Par(ts.into())),
    }
}

/// Operadic substitution `g ∘_i f`: plugs `f` into the `i`-th (1-based)
/// input slot of `g`, padding the other slots with identities.
pub fn compose_indexed(g: Term, i: usize, f: Term) -> Result<Term, TermError> {
    let dom = g.dom();
    if i == 0 || i > dom.len() {
        return Err(TermError::IndexOutOfRange { index: i, slots: dom.len() });
    }
    let slot = dom.slice(i - 1, i);
    let fc = f.cod();
    if fc != slot {
        return Err(TermError::TypeMismatch { left: fc, right: slot });
    }
    if f.is_id() {
        return Ok(g);
    }
    let mut layer = Vec::with_capacity(3);
    if i > 1 {
        layer.push(Term::Id(dom.slice(0, i - 1)));
    }
    layer.push(f);
    if i < dom.len() {
        layer.push(Term::Id(dom.slice(i, dom.len())));
    }
    compose_seq(par(layer)?, g)
}

type Binding = Arc<dyn Fn(&[f64], &mut Vec<f64>) + Send + Sync>;

#[derive(Clone)]
struct BoundFn {
    inputs: usize,
    outputs: usize,
    f: Binding,
}

/// Executable meaning for generators over real values.
#[derive(Clone, Default)]
pub struct Interpreter {
    bindings: HashMap<String, BoundFn>,
}

impl fmt::Debug for Interpreter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<_> = self.bindings.keys().collect();
        names.sort();
        f.debug_struct("Interpreter").field("bindings", &names).finish()
    }
}

impl Interpreter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds `name` to a function reading `inputs` values and appending
    /// `outputs` values to its output buffer.
    pub fn bind<F>(mut self, name: &str, inputs: usize, outputs: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut Vec<f64>) + Send + Sync + 'static,
    {
        self.bindings.insert(name.to_string(), BoundFn { inputs, outputs, f: Arc::new(f) });
        self
    }

    /// Every generator of `sig` must be bound with matching arities.
    pub fn check(&self, sig: &Signature) -> Result<(), TermError> {
        for g in sig.generators() {
            let b = self
                .bindings
                .get(&g.name)
                .ok_or_else(|| TermError::UnboundGenerator(g.name.clone()))?;
            if b.inputs != g.dom.len() {
                return Err(TermError::Arity { expected: g.dom.len(), found: b.inputs });
            }
            if b.outputs != g.cod.len() {
                return Err(TermError::Arity { expected: g.cod.len(), found: b.outputs });
            }
        }
        Ok(())
    }

    fn eval_into(&self, t: &Term, inputs: &[f64], out: &mut Vec<f64>) -> Result<(), TermError> {
        match t {
            Term::Id(_) => out.extend_from_slice(inputs),
            Term::Gen(g) => {
                let b = self
                    .bindings
                    .get(&g.name)
                    .ok_or_else(|| TermError::UnboundGenerator(g.name.clone()))?;
                if inputs.len() != b.inputs {
                    return Err(TermError::Arity { expected: b.inputs, found: inputs.len() });
                }
                let before = out.len();
                (b.f)(inputs, out);
                if out.len() - before != b.outputs {
                    return Err(TermError::Arity { expected: b.outputs, found: out.len() - before });
                }
            }
            Term::Seq(a, b) => {
                let mut mid = Vec::with_capacity(a.cod_len());
                self.eval_into(a, inputs, &mut mid)?;
                self.eval_into(b, &mid, out)?;
            }
            Term::Par(fs) => {
                let mut offset = 0;
                for f in fs.iter() {
                    let n = f.dom_len();
                    if offset + n > inputs.len() {
                        return Err(TermError::Arity { expected: offset + n, found: inputs.len() });
                    }
                    self.eval_into(f, &inputs[offset..offset + n], out)?;
                    offset += n;
                }
            }
        }
        Ok(())
    }
}

/// Runs `t` on `inputs`; Seq pipes values, Par splits them by factor arity.
pub fn evaluate(t: &Term, interp: &Interpreter, inputs: &[f64]) -> Result<Vec<f64>, TermError> {
    let expected = t.dom_len();
    if inputs.len() != expected {
        return Err(TermError::Arity { expected, found: inputs.len() });
    }
    let mut out = Vec::with_capacity(t.cod_len());
    interp.eval_into(t, inputs, &mut out)?;
    Ok(out)
}

const MAX_NESTING: usize = 512;

struct TermParser<'a> {
    src: &'a str,
    pos: usize,
    sig: &'a Signature,
}

impl<'a> TermParser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, TermError> {
        Err(TermError::Parse { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<(), TermError> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            self.err(format!("expected {c:?}"))
        }
    }

    fn word(&mut self) -> Result<&'a str, TermError> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let n = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        if n == 0 {
            return self.err("expected a name");
        }
        self.pos += n;
        Ok(&rest[..n])
    }

    fn ty(&mut self) -> Result<Ty, TermError> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        if !rest.starts_with('[') {
            return self.err("expected a type");
        }
        let end = match rest.find(']') {
            Some(e) => e,
            None => return self.err("unterminated type"),
        };
        let text = &rest[..=end];
        let ty = match self.sig.parse_ty(text) {
            Ok(t) => t,
            Err(e) => return self.err(e.to_string()),
        };
        self.pos += end + 1;
        Ok(ty)
    }

    fn term(&mut self, depth: usize) -> Result<Term, TermError> {
        if depth > MAX_NESTING {
            return self.err("term nested too deeply");
        }
        self.expect('(')?;
        let head = self.word()?;
        let t = match head {
            "id" => Term::Id(self.ty()?),
            "gen" => {
                let name = self.word()?;
                let g = self
                    .sig
                    .generator(name)
                    .ok_or_else(|| TermError::UnknownGenerator(name.to_string()))?;
                Term::Gen(g.clone())
            }
            "seq" => {
                let a = self.term(depth + 1)?;
                let b = self.term(depth + 1)?;
                Term::seq(a, b)?
            }
            "par" => {
                let mut fs = vec![self.term(depth + 1)?];
                while self.peek() == Some('(') {
                    fs.push(self.term(depth + 1)?);
                }
                if fs.len() < 2 {
                    return self.err("par needs at least two factors");
                }
                Term::Par(fs.into())
            }
            other => return self.err(format!("unknown form {other:?}")),
        };
        self.expect(')')?;
        Ok(t)
    }
}

/// Parses the s-expression form produced by `Display`.
pub fn parse_term(text: &str, sig: &Signature) -> Result<Term, TermError> {
    let mut p = TermParser { src: text, pos: 0, sig };
    let t = p.term(0)?;
    if p.peek().is_some() {
        return p.err("trailing input");
    }
    Ok(t)
}

pub fn print_term(t: &Term) -> String {
    t.to_string()
}
