//! Structure learning over free operads.
//!
//! A finitary signature declares base types, product objects and typed
//! generators. [`hypergraph::build_hypergraph`] compiles it into the
//! hypergraph of its free operad, [`distance`] turns the adjacency matrix
//! into transition distances, and [`prior::OperadPrior`] samples well-typed
//! morphisms by walking that graph. [`wiring`] arranges several sampled
//! morphisms into one, and [`inference`] scores them against data.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod distance;
pub mod hypergraph;
pub mod inference;
pub mod prior;
pub mod rng;
pub mod signature;
pub mod tasks;
pub mod term;
pub mod wiring;

pub use hypergraph::{build_hypergraph, OperadGraph};
pub use prior::{Hyperparams, OperadPrior, PathTrace};
pub use signature::{parse_signature, Signature, Ty};
pub use term::{parse_term, Term};
pub use wiring::{parse_diagram, validate_wiring, WiringDiagram};
