//! Problem and report files.
//!
//! Both are JSON documents with `schema_version` `"1"`. Matrices are arrays of
//! rows; the weight `M` and the prior covariance may be the string
//! `"identity"`. Sensor indices are 1-based. Floating-point numbers are
//! written in scientific notation with 17 significant digits, which
//! round-trips every `f64` exactly, so write -> read -> write is byte-stable.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::InverseProblem;
use crate::problems::ProblemSpec;
use crate::select::{BoundCertificate, Method, SelectionReport};
use crate::verify::{McEigEstimate, MonotoneReport, SubmodularReport};
use crate::wspace::{Operator, WeightedSpace};

pub const SCHEMA_VERSION: &str = "1";

/// Errors reading or writing files. Positions are 1-based.
#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("field `{field}`, row {row}: {message}")]
    Row { field: String, row: usize, message: String },

    #[error("field `{field}`, row {row}, column {column}: {message}")]
    Entry {
        field: String,
        row: usize,
        column: usize,
        message: String,
    },
}

impl From<serde_json::Error> for FileError {
    fn from(e: serde_json::Error) -> Self {
        FileError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Pretty JSON with every float as `{:.16e}`.
struct ExactFloats(PrettyFormatter<'static>);

impl Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes `value` in the canonical file layout, with a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("serializing to memory cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

fn read_text(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(|source| FileError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), FileError> {
    fs::write(path, text).map_err(|source| FileError::Io {
        path: path.to_owned(),
        source,
    })
}

fn short_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(16)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A square matrix field that may be abbreviated as `"identity"`.
#[derive(Debug, Clone, PartialEq)]
pub enum SquareMatrix {
    Identity,
    Dense(DMatrix<f64>),
}

impl SquareMatrix {
    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        match self {
            SquareMatrix::Identity => DMatrix::identity(n, n),
            SquareMatrix::Dense(m) => m.clone(),
        }
    }

    fn to_value(&self) -> Value {
        match self {
            SquareMatrix::Identity => Value::String("identity".into()),
            SquareMatrix::Dense(m) => matrix_to_value(m),
        }
    }
}

fn matrix_to_value(m: &DMatrix<f64>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|r| Value::Array(r.iter().map(|x| Value::from(*x)).collect()))
            .collect(),
    )
}

fn vector_to_value(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|x| Value::from(*x)).collect())
}

fn parse_number(field: &str, row: usize, column: usize, v: &Value) -> Result<f64, FileError> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(FileError::Entry {
            field: field.into(),
            row,
            column,
            message: format!("expected a finite number, found {v}"),
        }),
    }
}

fn parse_matrix(field: &str, v: &Value, rows: usize, cols: usize) -> Result<DMatrix<f64>, FileError> {
    let arr = v.as_array().ok_or_else(|| FileError::Field {
        field: field.into(),
        message: "expected an array of rows".into(),
    })?;
    if arr.len() != rows {
        return Err(FileError::Field {
            field: field.into(),
            message: format!("expected {rows} rows, found {}", arr.len()),
        });
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (r, row) in arr.iter().enumerate() {
        let entries = row.as_array().ok_or_else(|| FileError::Row {
            field: field.into(),
            row: r + 1,
            message: "expected an array of numbers".into(),
        })?;
        if entries.len() != cols {
            return Err(FileError::Row {
                field: field.into(),
                row: r + 1,
                message: format!("expected {cols} entries, found {}", entries.len()),
            });
        }
        for (c, x) in entries.iter().enumerate() {
            m[(r, c)] = parse_number(field, r + 1, c + 1, x)?;
        }
    }
    Ok(m)
}

fn parse_square(field: &str, v: &Value, n: usize) -> Result<SquareMatrix, FileError> {
    match v {
        Value::String(s) if s == "identity" => Ok(SquareMatrix::Identity),
        Value::String(s) => Err(FileError::Field {
            field: field.into(),
            message: format!("unknown shorthand {s:?}, only \"identity\" is accepted"),
        }),
        _ => Ok(SquareMatrix::Dense(parse_matrix(field, v, n, n)?)),
    }
}

fn parse_vector(field: &str, v: &Value, len: usize) -> Result<DVector<f64>, FileError> {
    let arr = v.as_array().ok_or_else(|| FileError::Field {
        field: field.into(),
        message: "expected an array of numbers".into(),
    })?;
    if arr.len() != len {
        return Err(FileError::Field {
            field: field.into(),
            message: format!("expected {len} entries, found {}", arr.len()),
        });
    }
    let xs = arr
        .iter()
        .enumerate()
        .map(|(i, x)| parse_number(field, 1, i + 1, x))
        .collect::<Result<Vec<f64>, FileError>>()?;
    Ok(DVector::from_vec(xs))
}

/// Layout of a problem file on disk; matrices are checked separately so that
/// errors can point at a row and column.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblemFile {
    schema_version: String,
    n: usize,
    n_s: usize,
    #[serde(rename = "M")]
    weight: Value,
    #[serde(rename = "F")]
    forward: Value,
    sigma: Value,
    m_pr: Value,
    #[serde(rename = "Gamma_pr")]
    prior_cov: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<ProblemSpec>,
}

/// Dense description of an [`InverseProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub n: usize,
    pub n_s: usize,
    pub weight: SquareMatrix,
    pub forward: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: SquareMatrix,
    /// Parameters of the generator that produced the problem, if any.
    pub generator: Option<ProblemSpec>,
}

impl ProblemFile {
    pub fn from_problem(problem: &InverseProblem, generator: Option<ProblemSpec>) -> Self {
        Self {
            n: problem.dim(),
            n_s: problem.n_candidates(),
            weight: SquareMatrix::Dense(problem.space().weight().clone()),
            forward: problem.forward().clone(),
            sigma: problem.sigma().clone(),
            prior_mean: problem.prior_mean().clone(),
            prior_cov: SquareMatrix::Dense(problem.prior_cov().rep().clone()),
            generator,
        }
    }

    pub fn parse(text: &str) -> Result<Self, FileError> {
        let raw: RawProblemFile = serde_json::from_str(text)?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(FileError::Field {
                field: "schema_version".into(),
                message: format!(
                    "unsupported version {:?}, expected {SCHEMA_VERSION:?}",
                    raw.schema_version
                ),
            });
        }
        let (n, n_s) = (raw.n, raw.n_s);
        if n == 0 {
            return Err(FileError::Field {
                field: "n".into(),
                message: "must be positive".into(),
            });
        }
        Ok(Self {
            n,
            n_s,
            weight: parse_square("M", &raw.weight, n)?,
            forward: parse_matrix("F", &raw.forward, n_s, n)?,
            sigma: parse_vector("sigma", &raw.sigma, n_s)?,
            prior_mean: parse_vector("m_pr", &raw.m_pr, n)?,
            prior_cov: parse_square("Gamma_pr", &raw.prior_cov, n)?,
            generator: raw.generator,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, FileError> {
        Self::parse(&read_text(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(&RawProblemFile {
            schema_version: SCHEMA_VERSION.into(),
            n: self.n,
            n_s: self.n_s,
            weight: self.weight.to_value(),
            forward: matrix_to_value(&self.forward),
            sigma: vector_to_value(&self.sigma),
            m_pr: vector_to_value(&self.prior_mean),
            prior_cov: self.prior_cov.to_value(),
            generator: self.generator.clone(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FileError> {
        write_text(path.as_ref(), &self.to_json())
    }

    /// Digest of the canonical serialization.
    pub fn hash(&self) -> String {
        short_sha256(self.to_json().as_bytes())
    }

    /// Validates the data and builds the problem.
    pub fn to_problem(&self) -> crate::Result<InverseProblem> {
        let space = Arc::new(WeightedSpace::new(self.weight.to_dense(self.n))?);
        let prior_cov = Operator::new(&space, self.prior_cov.to_dense(self.n))?;
        InverseProblem::new(
            space,
            self.forward.clone(),
            self.sigma.clone(),
            self.prior_mean.clone(),
            prior_cov,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// 1-based sensor index.
    pub sensor: usize,
    pub gain: f64,
    pub phi: f64,
}

/// File form of a [`SelectionReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub method: Method,
    pub budget: usize,
    /// 1-based, ascending.
    pub chosen: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub phi_final: f64,
    pub eig_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<BoundCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl SelectionRecord {
    /// `wall_time` is only recorded when `timing` is set, so that reports are
    /// reproducible byte for byte by default.
    pub fn from_report(r: &SelectionReport, timing: bool) -> Self {
        Self {
            method: r.method,
            budget: r.budget,
            chosen: r.chosen.one_based(),
            steps: r
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| StepRecord {
                    step: i + 1,
                    sensor: s.index + 1,
                    gain: s.gain,
                    phi: s.phi,
                })
                .collect(),
            phi_final: r.phi_final,
            eig_final: r.eig_final,
            certificate: r.certificate,
            seed: r.seed,
            wall_time: timing.then_some(r.wall_time),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub estimate: McEigEstimate,
    /// 1-based design the estimate refers to.
    pub design: Vec<usize>,
    /// `phi / 2` for the same design.
    pub analytic_eig: f64,
    /// Allowed deviation in standard errors.
    pub z_tolerance: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub monotone: MonotoneReport,
    pub submodular: SubmodularReport,
    pub mc: McRecord,
    pub passed: bool,
}

/// Output of the `greedy`, `exhaustive` and `verify` subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub schema_version: String,
    pub tool_version: String,
    /// [`ProblemFile::hash`] of the input problem.
    pub problem_hash: String,
    /// Seconds since the Unix epoch; only recorded on request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationRecord>,
}

impl ReportFile {
    pub fn new(problem_hash: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            problem_hash,
            timestamp: None,
            selection: None,
            verification: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, FileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, FileError> {
        Self::parse(&read_text(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FileError> {
        write_text(path.as_ref(), &self.to_json())
    }
}
