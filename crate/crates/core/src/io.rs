//! Text file formats and the JSON result document.
//!
//! Tensor files start with a header `tensor N I_1 ... I_N` followed by the
//! entries in first-index-fastest order, whitespace separated. Lines whose
//! first non-blank character is `#` are comments. The writer puts one mode-1
//! fiber per line with 17 significant digits.
//!
//! Point files hold one sample per row, comma or whitespace separated, with
//! an optional header row. Document files hold one document per row as
//! 1-based word ids; an optional first row `vocab <d>` fixes the vocabulary
//! size, which otherwise is the largest id seen.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::SampleMatrix;
use crate::tensor::{DenseTensor, KruskalTensor};
use crate::tucker::TuckerTensor;

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_value(token: &str, line: usize) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => parse_err(line, format!("non-finite value '{token}'")),
        Err(_) => parse_err(line, format!("'{token}' is not a number")),
    }
}

pub fn parse_tensor(text: &str) -> Result<DenseTensor> {
    let mut lines = content_lines(text);
    let Some((header_line, header)) = lines.next() else {
        return parse_err(1, "missing 'tensor' header");
    };
    let mut fields = header.split_whitespace();
    if fields.next() != Some("tensor") {
        return parse_err(header_line, "header must start with 'tensor'");
    }
    let numbers = fields
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .or_else(|_| parse_err(header_line, "header fields must be nonnegative integers"))?;
    let Some((&order, shape)) = numbers.split_first() else {
        return parse_err(header_line, "header is missing the order");
    };
    if order == 0 || shape.len() != order {
        return parse_err(
            header_line,
            format!("order {order} needs {order} extents, found {}", shape.len()),
        );
    }
    if shape.contains(&0) {
        return parse_err(header_line, "extents must be positive");
    }
    let expected: usize = shape.iter().product();
    let mut data = Vec::with_capacity(expected);
    let mut last_line = header_line;
    for (line, body) in lines {
        last_line = line;
        for token in body.split_whitespace() {
            if data.len() == expected {
                return parse_err(line, format!("expected {expected} values, found more"));
            }
            data.push(parse_value(token, line)?);
        }
    }
    if data.len() != expected {
        return parse_err(
            last_line,
            format!("expected {expected} values, found {}", data.len()),
        );
    }
    DenseTensor::new(shape.to_vec(), data)
}

pub fn format_tensor(t: &DenseTensor) -> String {
    let mut out = String::from("tensor");
    write!(out, " {}", t.order()).unwrap();
    for extent in t.shape() {
        write!(out, " {extent}").unwrap();
    }
    out.push('\n');
    for fiber in t.data().chunks(t.shape()[0]) {
        let line: Vec<String> = fiber.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    parse_tensor(&fs::read_to_string(path)?)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Data("refusing to write non-finite tensor entries".into()));
    }
    fs::write(path, format_tensor(t))?;
    Ok(())
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Rectangular real table; a first row with any non-numeric field is a
/// header and is skipped.
pub fn parse_points(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut first = true;
    for (line, body) in content_lines(text) {
        let fields = split_fields(body);
        if first {
            first = false;
            if fields.iter().any(|f| f.parse::<f64>().is_err()) {
                width = Some((fields.len(), line));
                continue;
            }
        }
        let row = fields
            .iter()
            .map(|f| parse_value(f, line))
            .collect::<Result<Vec<_>>>()?;
        match width {
            Some((w, at)) if w != row.len() => {
                return parse_err(
                    line,
                    format!("row has {} values, line {at} has {w}", row.len()),
                )
            }
            None => width = Some((row.len(), line)),
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return parse_err(1, "no sample rows");
    }
    let d = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn format_points(x: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in x.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Word-id rows (1-based in the file, 0-based in the result). Rows with
/// fewer than three words are rejected.
pub fn parse_documents(text: &str) -> Result<SampleMatrix> {
    let mut vocab: Option<usize> = None;
    let mut docs = Vec::new();
    let mut first = true;
    for (line, body) in content_lines(text) {
        let fields = split_fields(body);
        if first {
            first = false;
            if fields.first() == Some(&"vocab") {
                let d = fields
                    .get(1)
                    .and_then(|f| f.parse::<usize>().ok())
                    .filter(|&d| d > 0 && fields.len() == 2);
                match d {
                    Some(d) => vocab = Some(d),
                    None => return parse_err(line, "expected 'vocab <d>' with d >= 1"),
                }
                continue;
            }
        }
        let mut doc = Vec::with_capacity(fields.len());
        for f in fields {
            match f.parse::<usize>() {
                Ok(w) if w >= 1 && vocab.is_none_or(|d| w <= d) => doc.push(w - 1),
                Ok(w) => {
                    return parse_err(
                        line,
                        format!("word id {w} outside 1..={}", vocab.unwrap_or(usize::MAX)),
                    )
                }
                Err(_) => return parse_err(line, format!("'{f}' is not a word id")),
            }
        }
        if doc.len() < 3 {
            return parse_err(
                line,
                format!("document {} has {} words, need at least 3", docs.len() + 1, doc.len()),
            );
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return parse_err(1, "no documents");
    }
    let vocab = vocab.unwrap_or_else(|| docs.iter().flatten().max().map_or(0, |&w| w + 1));
    Ok(SampleMatrix::Documents { vocab, docs })
}

pub fn format_documents(vocab: usize, docs: &[Vec<usize>]) -> String {
    let mut out = format!("vocab {vocab}\n");
    for doc in docs {
        let ids: Vec<String> = doc.iter().map(|w| (w + 1).to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    out
}

pub fn format_samples(samples: &SampleMatrix) -> String {
    match samples {
        SampleMatrix::Points(x) => format_points(x),
        SampleMatrix::Documents { vocab, docs } => format_documents(*vocab, docs),
    }
}

pub fn read_points(path: impl AsRef<Path>) -> Result<SampleMatrix> {
    Ok(SampleMatrix::Points(parse_points(&fs::read_to_string(path)?)?))
}

pub fn read_documents(path: impl AsRef<Path>) -> Result<SampleMatrix> {
    parse_documents(&fs::read_to_string(path)?)
}

pub fn write_samples(path: impl AsRef<Path>, samples: &SampleMatrix) -> Result<()> {
    fs::write(path, format_samples(samples))?;
    Ok(())
}

/// Dense matrix stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.row_iter().map(|r| r.iter().cloned().collect()).collect(),
        }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows || self.data.iter().any(|r| r.len() != self.cols) {
            return Err(Error::Data(format!(
                "matrix record does not match its {}x{} size",
                self.rows, self.cols
            )));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i][j]))
    }
}

/// Dense tensor with its first-index-fastest entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&DenseTensor> for TensorRecord {
    fn from(t: &DenseTensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

impl TensorRecord {
    pub fn to_tensor(&self) -> Result<DenseTensor> {
        DenseTensor::new(self.shape.clone(), self.data.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    NotConverged,
    Failed,
}

/// Everything a run produced, in a form that reloads into library types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Only recorded on request, so that reruns stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub factors: Vec<MatrixRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core: Option<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Relative reconstruction error of the returned model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub diagnostics: serde_json::Value,
}

impl ResultDocument {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            wall_time_seconds: None,
            status: RunStatus::Converged,
            error: None,
            input_shape: None,
            weights: None,
            factors: Vec::new(),
            core: None,
            sigma2: None,
            relative_error: None,
            history: Vec::new(),
            iterations: None,
            diagnostics: serde_json::Value::Null,
        }
    }

    pub fn factor_matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        self.factors.iter().map(MatrixRecord::to_matrix).collect()
    }

    pub fn kruskal(&self) -> Result<KruskalTensor> {
        let weights = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::Data("result document has no weights".into()))?;
        KruskalTensor::new(DVector::from_vec(weights.clone()), self.factor_matrices()?)
    }

    pub fn tucker(&self) -> Result<TuckerTensor> {
        let core = self
            .core
            .as_ref()
            .ok_or_else(|| Error::Data("result document has no core".into()))?;
        TuckerTensor::new(core.to_tensor()?, self.factor_matrices()?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn write_result(path: impl AsRef<Path>, doc: &ResultDocument) -> Result<()> {
    fs::write(path, doc.to_json()?)?;
    Ok(())
}

pub fn load_result(path: impl AsRef<Path>) -> Result<ResultDocument> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
