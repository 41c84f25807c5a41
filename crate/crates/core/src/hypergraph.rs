//! Compilation of a signature into the hypergraph of its free operad.
//!
//! Vertices are (possibly product) types. Each hyperedge is a distinct
//! `(dom, cod)` pair and carries every generator and recursion site that
//! inhabits it, generators first in declaration order, then sites in
//! creation order. The adjacency matrix counts inhabitants, so parallel
//! generators contribute separately to walk counts.
//!
//! Product vertices are processed from a worklist: each one is cut into
//! chunks, and every combination of chunk inhabitants whose combined domain
//! is not already a contiguous piece of the product becomes a recursion site
//! with an induced edge. Combined domains longer than `max_product_len` are
//! dropped and reported as truncations, which bounds the construction.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::signature::{tensor_all, Signature, Ty};

pub const DEFAULT_MAX_PRODUCT_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypergraphError {
    #[error("cannot partition {0} into chunks that are all vertices")]
    Chunking(Ty),
    #[error("max_product_len {max} is shorter than the declared object {object}")]
    ProductLength { max: usize, object: Ty },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeLabel {
    /// Index into the signature's generator list.
    Generator(usize),
    /// Index into the graph's recursion sites.
    Site(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub dom: Ty,
    pub cod: Ty,
    pub source: usize,
    pub target: usize,
    pub labels: Vec<EdgeLabel>,
}

/// A way to realise a product edge as a parallel composite of sub-paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionSite {
    pub pairs: Vec<(Ty, Ty)>,
    pub edge: usize,
}

impl RecursionSite {
    pub fn dom(&self) -> Ty {
        tensor_all(self.pairs.iter().map(|(d, _)| d))
    }

    pub fn cod(&self) -> Ty {
        tensor_all(self.pairs.iter().map(|(_, c)| c))
    }
}

/// A site combination dropped because its domain exceeded the length cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub vertex: Ty,
    pub dom: Ty,
}

#[derive(Debug, Clone)]
pub struct OperadGraph {
    signature: Arc<Signature>,
    vertices: Vec<Ty>,
    index: HashMap<Ty, usize>,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<usize>>,
    sites: Vec<RecursionSite>,
    truncations: Vec<Truncation>,
    max_product_len: usize,
}

impl OperadGraph {
    pub fn signature(&self) -> &Arc<Signature> {
        &self.signature
    }

    pub fn vertices(&self) -> &[Ty] {
        &self.vertices
    }

    pub fn vertex_index(&self, ty: &Ty) -> Option<usize> {
        self.index.get(ty).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn out_edges(&self, vertex: usize) -> &[usize] {
        &self.out_edges[vertex]
    }

    pub fn recursion_sites(&self) -> &[RecursionSite] {
        &self.sites
    }

    pub fn truncations(&self) -> &[Truncation] {
        &self.truncations
    }

    pub fn max_product_len(&self) -> usize {
        self.max_product_len
    }

    /// Length of the weight vector: generators plus recursion sites.
    pub fn weight_len(&self) -> usize {
        self.signature.generators().len() + self.sites.len()
    }

    /// Position of a label in the weight vector.
    pub fn weight_index(&self, label: EdgeLabel) -> usize {
        match label {
            EdgeLabel::Generator(i) => i,
            EdgeLabel::Site(k) => self.signature.generators().len() + k,
        }
    }

    /// `A[i][j]` counts edge inhabitants from vertex `i` to vertex `j`.
    pub fn adjacency_matrix(&self) -> DMatrix<u32> {
        let n = self.vertices.len();
        let mut a = DMatrix::zeros(n, n);
        for e in &self.edges {
            a[(e.source, e.target)] += e.labels.len() as u32;
        }
        a
    }

    pub fn label_name(&self, label: EdgeLabel) -> String {
        match label {
            EdgeLabel::Generator(i) => self.signature.generators()[i].name.clone(),
            EdgeLabel::Site(k) => format!("⊗site#{k}"),
        }
    }

    /// Graphviz rendering: one node per vertex, one arrow per inhabitant.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph {\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(out, "  v{i} [label=\"{v}\"];");
        }
        for e in &self.edges {
            for &l in &e.labels {
                let _ = writeln!(
                    out,
                    "  v{} -> v{} [label=\"{}\"];",
                    e.source,
                    e.target,
                    self.label_name(l)
                );
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn report(&self) -> BuildReport {
        BuildReport {
            max_product_len: self.max_product_len,
            vertices: self.vertices.iter().map(|v| v.to_string()).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeReport {
                    dom: e.dom.to_string(),
                    cod: e.cod.to_string(),
                    labels: e.labels.iter().map(|&l| self.label_name(l)).collect(),
                })
                .collect(),
            recursion_sites: self
                .sites
                .iter()
                .map(|s| SiteReport {
                    pairs: s.pairs.iter().map(|(d, c)| (d.to_string(), c.to_string())).collect(),
                    edge: s.edge,
                })
                .collect(),
            truncations: self
                .truncations
                .iter()
                .map(|t| TruncationReport { vertex: t.vertex.to_string(), dom: t.dom.to_string() })
                .collect(),
        }
    }

    fn add_vertex(&mut self, ty: Ty) -> usize {
        if let Some(&i) = self.index.get(&ty) {
            return i;
        }
        let i = self.vertices.len();
        self.index.insert(ty.clone(), i);
        self.vertices.push(ty);
        self.out_edges.push(Vec::new());
        i
    }

    fn add_label(&mut self, dom: &Ty, cod: &Ty, label: EdgeLabel) -> usize {
        let (s, t) = (self.index[dom], self.index[cod]);
        if let Some(&e) = self.out_edges[s].iter().find(|&&e| self.edges[e].target == t) {
            self.edges[e].labels.push(label);
            return e;
        }
        let e = self.edges.len();
        self.edges.push(Edge { dom: dom.clone(), cod: cod.clone(), source: s, target: t, labels: vec![label] });
        self.out_edges[s].push(e);
        e
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeReport {
    pub dom: String,
    pub cod: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteReport {
    pub pairs: Vec<(String, String)>,
    pub edge: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationReport {
    pub vertex: String,
    pub dom: String,
}

/// Structured summary written next to the DOT file.
#[derive(Debug, Clone, Serialize)]
pub struct BuildReport {
    pub max_product_len: usize,
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeReport>,
    pub recursion_sites: Vec<SiteReport>,
    pub truncations: Vec<TruncationReport>,
}

/// Partitions `ty` into contiguous chunks that are all vertices.
///
/// The finest partition (single factors) is used whenever every factor is a
/// vertex; otherwise the leftmost-longest proper partition is searched with
/// backtracking.
pub fn chunks(ty: &Ty, vertices: &[Ty]) -> Result<Vec<Ty>, HypergraphError> {
    if ty.len() < 2 {
        return Err(HypergraphError::Chunking(ty.clone()));
    }
    let n = ty.len();
    if (0..n).all(|i| vertices.contains(&ty.slice(i, i + 1))) {
        return Ok((0..n).map(|i| ty.slice(i, i + 1)).collect());
    }

    fn search(ty: &Ty, start: usize, vertices: &[Ty], acc: &mut Vec<Ty>) -> bool {
        let n = ty.len();
        if start == n {
            return true;
        }
        let longest = if start == 0 { n - 1 } else { n - start };
        for len in (1..=longest).rev() {
            let piece = ty.slice(start, start + len);
            if vertices.contains(&piece) {
                acc.push(piece);
                if search(ty, start + len, vertices, acc) {
                    return true;
                }
                acc.pop();
            }
        }
        false
    }

    let mut acc = Vec::new();
    if search(ty, 0, vertices, &mut acc) {
        Ok(acc)
    } else {
        Err(HypergraphError::Chunking(ty.clone()))
    }
}

/// Builds the hypergraph of the free operad over `sig`.
pub fn build_hypergraph(sig: &Signature, max_product_len: usize) -> Result<OperadGraph, HypergraphError> {
    if let Some(o) = sig.objects().iter().find(|o| o.len() > max_product_len) {
        return Err(HypergraphError::ProductLength { max: max_product_len, object: o.clone() });
    }
    let mut g = OperadGraph {
        signature: Arc::new(sig.clone()),
        vertices: Vec::new(),
        index: HashMap::new(),
        edges: Vec::new(),
        out_edges: Vec::new(),
        sites: Vec::new(),
        truncations: Vec::new(),
        max_product_len,
    };
    for o in sig.objects() {
        g.add_vertex(o.clone());
    }
    for (i, m) in sig.generators().iter().enumerate() {
        g.add_label(&m.dom, &m.cod, EdgeLabel::Generator(i));
    }

    let mut stack: Vec<Ty> = g.vertices.iter().filter(|v| v.len() > 1).cloned().collect();
    while let Some(ty) = stack.pop() {
        let parts = chunks(&ty, &g.vertices)?;
        let inhabitants: Vec<Vec<(Ty, Ty)>> = parts
            .iter()
            .map(|c| {
                let mut doms: Vec<(Ty, Ty)> = Vec::new();
                for e in g.edges.iter().filter(|e| &e.cod == c) {
                    if !doms.iter().any(|(d, _)| d == &e.dom) {
                        doms.push((e.dom.clone(), c.clone()));
                    }
                }
                doms
            })
            .collect();
        if inhabitants.iter().any(Vec::is_empty) {
            continue;
        }

        // odometer over the product of inhabitant lists, last chunk fastest
        let mut idx = vec![0usize; inhabitants.len()];
        'combos: loop {
            let pairs: Vec<(Ty, Ty)> =
                idx.iter().zip(&inhabitants).map(|(&i, inh)| inh[i].clone()).collect();
            let dom = tensor_all(pairs.iter().map(|(d, _)| d));
            if !dom.is_sublist_of(&ty) {
                if dom.len() > max_product_len {
                    g.truncations.push(Truncation { vertex: ty.clone(), dom });
                } else {
                    if g.vertex_index(&dom).is_none() {
                        g.add_vertex(dom.clone());
                        stack.push(dom.clone());
                    }
                    let site = g.sites.len();
                    let edge = g.add_label(&dom, &ty, EdgeLabel::Site(site));
                    g.sites.push(RecursionSite { pairs, edge });
                }
            }

            let mut k = idx.len();
            loop {
                if k == 0 {
                    break 'combos;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < inhabitants[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::parse_signature;

    fn ty(s: &str) -> Ty {
        s.parse().unwrap()
    }

    fn load(text: &str) -> Signature {
        parse_signature(text).unwrap()
    }

    #[test]
    fn chain_has_no_sites() {
        let g = build_hypergraph(&load(include_str!("../fixtures/chain.json")), 4).unwrap();
        assert_eq!(g.vertices(), &[ty("[X]"), ty("[Y]")]);
        let pairs: Vec<_> = g.edges().iter().map(|e| (e.dom.clone(), e.cod.clone())).collect();
        assert_eq!(pairs, vec![(ty("[X]"), ty("[Y]")), (ty("[Y]"), ty("[Y]"))]);
        assert!(g.recursion_sites().is_empty());
        let a = g.adjacency_matrix();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0, 1, 0, 1]));
    }

    #[test]
    fn empty_generator_set() {
        let g = build_hypergraph(
            &load(r#"{"base_types":["X"],"objects":[["X"]],"generators":[]}"#),
            4,
        )
        .unwrap();
        assert!(g.edges().is_empty());
        assert!(g.recursion_sites().is_empty());
        assert_eq!(g.adjacency_matrix(), DMatrix::zeros(1, 1));
        assert_eq!(g.to_dot(), "digraph {\n  v0 [label=\"[X]\"];\n}\n");
    }

    #[test]
    fn parallel_generators_counted() {
        let g = build_hypergraph(
            &load(
                r#"{"base_types":["X","Y"],"objects":[["X"],["Y"]],"generators":[
                {"name":"a","dom":["X"],"cod":["Y"]},{"name":"b","dom":["X"],"cod":["Y"]}]}"#,
            ),
            4,
        )
        .unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.adjacency_matrix()[(0, 1)], 2);
    }

    #[test]
    fn arith_small_sites() {
        let g = build_hypergraph(&load(include_str!("../fixtures/arith_small.json")), 4).unwrap();
        let expected_vertices = [ty("[R]"), ty("[R*R]"), ty("[R*R*R]"), ty("[R*R*R*R]")];
        assert_eq!(g.vertices(), &expected_vertices);
        let r = ty("[R]");
        let rr = ty("[R*R]");
        let sites: Vec<_> = g.recursion_sites().iter().map(|s| s.pairs.clone()).collect();
        // processing [R*R]: (R,R)x(R,R) is excluded by the sublist guard
        assert!(sites.contains(&vec![(rr.clone(), r.clone()), (r.clone(), r.clone())]));
        assert!(sites.contains(&vec![(r.clone(), r.clone()), (rr.clone(), r.clone())]));
        assert!(sites.contains(&vec![(rr.clone(), r.clone()), (rr.clone(), r.clone())]));
        assert!(!sites.contains(&vec![(r.clone(), r.clone()), (r.clone(), r.clone())]));
        assert_eq!(sites.len(), 6);
        for s in g.recursion_sites() {
            let e = &g.edges()[s.edge];
            assert_eq!(e.dom, s.dom());
            assert_eq!(e.cod, s.cod());
            assert!(!s.dom().is_sublist_of(&s.cod()));
        }
        let edge = g
            .edges()
            .iter()
            .find(|e| e.dom == ty("[R*R*R]") && e.cod == rr)
            .unwrap();
        assert_eq!(edge.labels.len(), 2);
        assert!(!g.truncations().is_empty());
        assert!(g.truncations().iter().all(|t| t.dom.len() > 4));
    }

    #[test]
    fn chunk_examples() {
        let v = [ty("[R]"), ty("[R*R]")];
        assert_eq!(chunks(&ty("[R*R]"), &v).unwrap(), vec![ty("[R]"), ty("[R]")]);
        let v = [ty("[A]"), ty("[B]")];
        assert_eq!(chunks(&ty("[A*B]"), &v).unwrap(), vec![ty("[A]"), ty("[B]")]);
        let v = [ty("[A]")];
        assert_eq!(chunks(&ty("[A*B]"), &v).unwrap_err(), HypergraphError::Chunking(ty("[A*B]")));
        let v = [ty("[A*B]"), ty("[C]"), ty("[A*B*C]")];
        assert_eq!(chunks(&ty("[A*B*C]"), &v).unwrap(), vec![ty("[A*B]"), ty("[C]")]);
    }

    #[test]
    fn product_cap_below_objects() {
        let sig = load(include_str!("../fixtures/arith_small.json"));
        assert!(matches!(build_hypergraph(&sig, 1), Err(HypergraphError::ProductLength { .. })));
    }

    #[test]
    fn deterministic() {
        let sig = load(include_str!("../fixtures/arith_small.json"));
        let a = build_hypergraph(&sig, 4).unwrap();
        let b = build_hypergraph(&sig, 4).unwrap();
        assert_eq!(a.to_dot(), b.to_dot());
        assert_eq!(a.recursion_sites(), b.recursion_sites());
    }
}
