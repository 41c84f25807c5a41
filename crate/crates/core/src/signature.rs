//! Finitary signatures: base types, the monoidal type algebra, and generators.
//!
//! A signature is read from a JSON document of the form
//!
//! ```json
//! {
//!   "base_types": ["R"],
//!   "objects": [["R"], ["R", "R"]],
//!   "generators": [
//!     {"name": "inc", "dom": ["R"], "cod": ["R"]},
//!     {"name": "add", "dom": ["R", "R"], "cod": ["R"]}
//!   ]
//! }
//! ```
//!
//! Every base type is implicitly an object of length one, so the finest
//! factorisation of any product object only mentions declared objects.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name reserved for identities; a generator may not use it as an endomorphism.
pub const IDENTITY_NAME: &str = "id";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignatureError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A named atomic type.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BaseType(Arc<str>);

impl BaseType {
    pub fn new(name: &str) -> Result<Self, SignatureError> {
        if !is_identifier(name) {
            return Err(SignatureError::Validation(format!(
                "base type name {name:?} is not an identifier"
            )));
        }
        Ok(BaseType(Arc::from(name)))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for BaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for BaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A monoidal product of base types. The empty product is the unit `I`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Ty(Vec<BaseType>);

impl Ty {
    pub fn unit() -> Self {
        Ty(Vec::new())
    }

    pub fn new(factors: Vec<BaseType>) -> Self {
        Ty(factors)
    }

    /// Builds a type from factor names without checking them against a signature.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, SignatureError> {
        names
            .iter()
            .map(|n| BaseType::new(n.as_ref()))
            .collect::<Result<Vec<_>, _>>()
            .map(Ty)
    }

    pub fn factors(&self) -> &[BaseType] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Contiguous sub-range of factors as a type.
    pub fn slice(&self, start: usize, end: usize) -> Ty {
        Ty(self.0[start..end].to_vec())
    }

    /// True if `self` occurs as a contiguous run of factors inside `other`.
    pub fn is_sublist_of(&self, other: &Ty) -> bool {
        if self.0.is_empty() {
            return true;
        }
        other.0.windows(self.0.len()).any(|w| w == self.0.as_slice())
    }
}

/// Monoidal product of types: concatenation of factor lists.
pub fn tensor(a: &Ty, b: &Ty) -> Ty {
    let mut factors = Vec::with_capacity(a.len() + b.len());
    factors.extend_from_slice(&a.0);
    factors.extend_from_slice(&b.0);
    Ty(factors)
}

/// Product of a sequence of types.
pub fn tensor_all<'a, I: IntoIterator<Item = &'a Ty>>(tys: I) -> Ty {
    let mut factors = Vec::new();
    for t in tys {
        factors.extend_from_slice(&t.0);
    }
    Ty(factors)
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            f.write_str(b.name())?;
        }
        f.write_str("]")
    }
}

impl fmt::Debug for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Ty {
    type Err = SignatureError;

    /// Parses the printed form `[A*B*C]`; `[]` is the unit.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| SignatureError::Schema(format!("type {s:?} must be written as [A*B]")))?;
        let inner = inner.trim();
        if inner.is_empty() {
            return Ok(Ty::unit());
        }
        inner
            .split('*')
            .map(|n| BaseType::new(n.trim()))
            .collect::<Result<Vec<_>, _>>()
            .map(Ty)
    }
}

impl Serialize for Ty {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|b| b.name()))
    }
}

impl<'de> Deserialize<'de> for Ty {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        Ty::from_names(&names).map_err(serde::de::Error::custom)
    }
}

/// A named primitive morphism.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Generator {
    pub name: String,
    pub dom: Ty,
    pub cod: Ty,
}

/// A validated finitary signature. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    base_types: Vec<BaseType>,
    objects: Vec<Ty>,
    generators: Vec<Arc<Generator>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorDoc {
    name: String,
    dom: Vec<String>,
    cod: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignatureDoc {
    base_types: Vec<String>,
    objects: Vec<Vec<String>>,
    generators: Vec<GeneratorDoc>,
}

impl Signature {
    /// Validates and normalizes a signature. Base types missing from `objects`
    /// are appended as length-one objects.
    pub fn new(
        base_types: Vec<String>,
        objects: Vec<Vec<String>>,
        generators: Vec<(String, Vec<String>, Vec<String>)>,
    ) -> Result<Self, SignatureError> {
        let mut seen = HashSet::new();
        let mut bases = Vec::with_capacity(base_types.len());
        for name in &base_types {
            let b = BaseType::new(name)?;
            if !seen.insert(b.clone()) {
                return Err(SignatureError::Validation(format!("duplicate base type {name:?}")));
            }
            bases.push(b);
        }

        let resolve = |names: &[String], what: &str| -> Result<Ty, SignatureError> {
            names
                .iter()
                .map(|n| {
                    let b = BaseType::new(n)?;
                    if seen.contains(&b) {
                        Ok(b)
                    } else {
                        Err(SignatureError::Validation(format!(
                            "{what} mentions undeclared base type {n:?}"
                        )))
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Ty)
        };

        if objects.is_empty() {
            return Err(SignatureError::Validation("objects must be non-empty".into()));
        }
        let mut objs: Vec<Ty> = Vec::new();
        for o in &objects {
            let ty = resolve(o, "object")?;
            if objs.contains(&ty) {
                return Err(SignatureError::Validation(format!("duplicate object {ty}")));
            }
            objs.push(ty);
        }
        for b in &bases {
            let ty = Ty(vec![b.clone()]);
            if !objs.contains(&ty) {
                objs.push(ty);
            }
        }

        let mut names = HashSet::new();
        let mut gens = Vec::with_capacity(generators.len());
        for (name, dom, cod) in generators {
            if !is_identifier(&name) {
                return Err(SignatureError::Validation(format!(
                    "generator name {name:?} is not an identifier"
                )));
            }
            if !names.insert(name.clone()) {
                return Err(SignatureError::Validation(format!("duplicate generator {name:?}")));
            }
            let dom = resolve(&dom, &format!("generator {name:?} dom"))?;
            let cod = resolve(&cod, &format!("generator {name:?} cod"))?;
            for (ty, which) in [(&dom, "dom"), (&cod, "cod")] {
                if !objs.contains(ty) {
                    return Err(SignatureError::Validation(format!(
                        "generator {name:?} {which} {ty} is not a declared object"
                    )));
                }
            }
            if name == IDENTITY_NAME && dom == cod {
                return Err(SignatureError::Validation(format!(
                    "generator {name:?} would be the identity on {dom}"
                )));
            }
            gens.push(Arc::new(Generator { name, dom, cod }));
        }

        Ok(Signature { base_types: bases, objects: objs, generators: gens })
    }

    pub fn base_types(&self) -> &[BaseType] {
        &self.base_types
    }

    /// Declared objects followed by any implicit length-one objects.
    pub fn objects(&self) -> &[Ty] {
        &self.objects
    }

    /// Generators in declaration order; this order indexes the weight vector.
    pub fn generators(&self) -> &[Arc<Generator>] {
        &self.generators
    }

    pub fn generator(&self, name: &str) -> Option<&Arc<Generator>> {
        self.generators.iter().find(|g| g.name == name)
    }

    pub fn generator_index(&self, name: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.name == name)
    }

    /// Resolves a type against the declared base types.
    pub fn check_ty(&self, ty: &Ty) -> Result<(), SignatureError> {
        for b in ty.factors() {
            if !self.base_types.contains(b) {
                return Err(SignatureError::Validation(format!("unknown base type {b}")));
            }
        }
        Ok(())
    }

    pub fn parse_ty(&self, text: &str) -> Result<Ty, SignatureError> {
        let ty: Ty = text.parse()?;
        self.check_ty(&ty)?;
        Ok(ty)
    }

    pub fn to_json(&self) -> String {
        let doc = SignatureDoc {
            base_types: self.base_types.iter().map(|b| b.name().to_string()).collect(),
            objects: self.objects.iter().map(ty_names).collect(),
            generators: self
                .generators
                .iter()
                .map(|g| GeneratorDoc {
                    name: g.name.clone(),
                    dom: ty_names(&g.dom),
                    cod: ty_names(&g.cod),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("signature documents always serialize")
    }
}

fn ty_names(ty: &Ty) -> Vec<String> {
    ty.factors().iter().map(|b| b.name().to_string()).collect()
}

/// Parses and validates a signature document.
pub fn parse_signature(text: &str) -> Result<Signature, SignatureError> {
    let doc: SignatureDoc =
        serde_json::from_str(text).map_err(|e| SignatureError::Schema(e.to_string()))?;
    Signature::new(
        doc.base_types,
        doc.objects,
        doc.generators.into_iter().map(|g| (g.name, g.dom, g.cod)).collect(),
    )
}
