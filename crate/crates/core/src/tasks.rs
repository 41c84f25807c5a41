//! Reference DSLs, dataset ingestion and likelihoods.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signature::{Signature, Ty};
use crate::term::{Interpreter, TermError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in row {row}, column {column}")]
    NonFiniteValue { row: usize, column: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch { expected: String, found: String },
    #[error(transparent)]
    Term(#[from] TermError),
}

/// One observation: an input tuple and the output tuple it should map to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    input_ty: Ty,
    output_ty: Ty,
}

impl Dataset {
    pub fn new(records: Vec<Record>, input_ty: Ty, output_ty: Ty) -> Result<Self, TaskError> {
        if records.is_empty() {
            return Err(TaskError::Shape("dataset has no records".into()));
        }
        for (row, r) in records.iter().enumerate() {
            if r.inputs.len() != input_ty.len() || r.outputs.len() != output_ty.len() {
                return Err(TaskError::Shape(format!(
                    "record {row} has {}+{} values, expected {}+{}",
                    r.inputs.len(),
                    r.outputs.len(),
                    input_ty.len(),
                    output_ty.len()
                )));
            }
            let named = r
                .inputs
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("x{}", i + 1), v))
                .chain(r.outputs.iter().enumerate().map(|(i, v)| (format!("y{}", i + 1), v)));
            for (column, v) in named {
                if !v.is_finite() {
                    return Err(TaskError::NonFiniteValue { row, column });
                }
            }
        }
        Ok(Dataset { records, input_ty, output_ty })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn input_ty(&self) -> &Ty {
        &self.input_ty
    }

    pub fn output_ty(&self) -> &Ty {
        &self.output_ty
    }
}

/// Reads a CSV dataset with header `x1..xm,y1..yn`, where `m` and `n` are
/// the lengths of `input_ty` and `output_ty`.
pub fn read_dataset<R: Read>(reader: R, input_ty: &Ty, output_ty: &Ty) -> Result<Dataset, TaskError> {
    let (m, n) = (input_ty.len(), output_ty.len());
    let expected: Vec<String> =
        (1..=m).map(|i| format!("x{i}")).chain((1..=n).map(|i| format!("y{i}"))).collect();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| TaskError::Shape(e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(TaskError::Shape("missing header row".into()));
    }
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(TaskError::Shape(format!(
            "header is {:?}, expected {:?}",
            found.join(","),
            expected.join(",")
        )));
    }
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TaskError::Shape(e.to_string()))?;
        if rec.len() != m + n {
            return Err(TaskError::Shape(format!("row {row} has {} fields, expected {}", rec.len(), m + n)));
        }
        let mut values = Vec::with_capacity(m + n);
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| TaskError::Shape(format!("row {row}, column {}: {field:?} is not a number", expected[col])))?;
            if !v.is_finite() {
                return Err(TaskError::NonFiniteValue { row, column: expected[col].clone() });
            }
            values.push(v);
        }
        let outputs = values.split_off(m);
        records.push(Record { inputs: values, outputs });
    }
    Dataset::new(records, input_ty.clone(), output_ty.clone())
}

pub fn load_dataset(path: &Path, input_ty: &Ty, output_ty: &Ty) -> Result<Dataset, TaskError> {
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    read_dataset(file, input_ty, output_ty)
}

fn io_error(path: &Path, e: std::io::Error) -> TaskError {
    TaskError::Io { path: path.display().to_string(), msg: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodKind {
    Gaussian,
    /// Constant log-likelihood; the posterior equals the prior.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodSpec {
    pub kind: LikelihoodKind,
    #[serde(default)]
    pub sigma: Option<f64>,
}

/// A validated observation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    Gaussian { sigma: f64 },
    Flat,
}

impl Likelihood {
    pub fn gaussian(sigma: f64) -> Result<Self, TaskError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(TaskError::Validation(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Likelihood::Gaussian { sigma })
    }

    pub fn from_spec(spec: &LikelihoodSpec) -> Result<Self, TaskError> {
        match spec.kind {
            LikelihoodKind::Gaussian => {
                let sigma = spec.sigma.ok_or_else(|| TaskError::Validation("gaussian likelihood needs sigma".into()))?;
                Self::gaussian(sigma)
            }
            LikelihoodKind::Flat => Ok(Likelihood::Flat),
        }
    }

    /// Log density of `observed` given the prediction.
    pub fn log_density(&self, predicted: &[f64], observed: &[f64]) -> f64 {
        match *self {
            Likelihood::Gaussian { sigma } => {
                let norm = sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
                predicted
                    .iter()
                    .zip(observed)
                    .map(|(mu, y)| {
                        let z = (y - mu) / sigma;
                        -0.5 * z * z - norm
                    })
                    .sum()
            }
            Likelihood::Flat => 0.0,
        }
    }
}

/// `inc`, `dbl`, `add` and `dup` over the reals.
pub fn arith_interpreter() -> Interpreter {
    Interpreter::new()
        .bind("inc", 1, 1, |x, out| out.push(x[0] + 1.0))
        .bind("dbl", 1, 1, |x, out| out.push(2.0 * x[0]))
        .bind("add", 2, 1, |x, out| out.push(x[0] + x[1]))
        .bind("dup", 1, 2, |x, out| out.extend_from_slice(&[x[0], x[0]]))
}

/// Looks up a bundled interpreter by name.
pub fn interpreter_by_name(name: &str) -> Result<Interpreter, TaskError> {
    match name {
        "arith" => Ok(arith_interpreter()),
        other => Err(TaskError::Validation(format!("unknown interpreter {other:?}"))),
    }
}

/// Dataset, interpreter and likelihood bound to one signature.
#[derive(Clone)]
pub struct Task {
    signature: Arc<Signature>,
    dataset: Dataset,
    likelihood: Likelihood,
    interpreter: Arc<Interpreter>,
}

impl fmt::Debug for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Task")
            .field("records", &self.dataset.len())
            .field("input_ty", &self.dataset.input_ty)
            .field("output_ty", &self.dataset.output_ty)
            .field("likelihood", &self.likelihood)
            .field("interpreter", &self.interpreter)
            .finish()
    }
}

impl Task {
    pub fn signature(&self) -> &Arc<Signature> {
        &self.signature
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn interpreter(&self) -> &Interpreter {
        &self.interpreter
    }

    /// The task's data must map `dom` to `cod`.
    pub fn check_types(&self, dom: &Ty, cod: &Ty) -> Result<(), TaskError> {
        for (want, have) in [(dom, &self.dataset.input_ty), (cod, &self.dataset.output_ty)] {
            if want != have {
                return Err(TaskError::TypeMismatch { expected: want.to_string(), found: have.to_string() });
            }
        }
        Ok(())
    }
}

pub fn make_task(
    signature: Arc<Signature>,
    dataset: Dataset,
    likelihood: Likelihood,
    interpreter: Interpreter,
) -> Result<Task, TaskError> {
    for ty in [&dataset.input_ty, &dataset.output_ty] {
        signature.check_ty(ty).map_err(|e| TaskError::Validation(e.to_string()))?;
    }
    if let Likelihood::Gaussian { sigma } = likelihood {
        Likelihood::gaussian(sigma)?;
    }
    interpreter.check(&signature)?;
    Ok(Task { signature, dataset, likelihood, interpreter: Arc::new(interpreter) })
}

/// On-disk task description. `dataset` is resolved relative to the task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub dataset: PathBuf,
    pub input_ty: Ty,
    pub output_ty: Ty,
    pub likelihood: LikelihoodSpec,
    pub interpreter: String,
}

pub fn load_task(path: &Path, signature: Arc<Signature>) -> Result<Task, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let file: TaskFile = serde_json::from_str(&text).map_err(|e| TaskError::Validation(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let data_path = if file.dataset.is_absolute() { file.dataset.clone() } else { base.join(&file.dataset) };
    let dataset = load_dataset(&data_path, &file.input_ty, &file.output_ty)?;
    let likelihood = Likelihood::from_spec(&file.likelihood)?;
    make_task(signature, dataset, likelihood, interpreter_by_name(&file.interpreter)?)
}
