//! Canonical text format for sparse multi-label datasets.
//!
//! ```text
//! # optional comment lines before the header
//! N L S
//! 0,2<TAB>1:0.5 3:1.0
//! 1<TAB>0:2.0
//! ```
//!
//! Each sample line holds comma-separated 0-based positive label indices
//! (possibly empty), a TAB, then space-separated `feature_index:value` pairs
//! (possibly empty). Label names live in a separate file, one per line.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::{Error, Result};

/// One sample's features, sorted by ascending index with no duplicates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseRow {
    /// Builds a row from unsorted pairs. Fails on a repeated index.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> std::result::Result<Self, u32> {
        pairs.sort_by_key(|&(i, _)| i);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(w[0].0);
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(SparseRow { indices, values })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset {
    pub num_features: usize,
    pub features: Vec<SparseRow>,
    /// N×L, entries 0 or 1.
    pub labels: Array2<u8>,
    /// Set once a label-name file has been attached.
    pub label_names: Option<Vec<String>>,
}

impl MultiLabelDataset {
    /// Validates the invariants and builds a dataset without label names.
    pub fn new(num_features: usize, features: Vec<SparseRow>, labels: Array2<u8>) -> Result<Self> {
        if features.len() != labels.nrows() {
            return Err(Error::Data(format!(
                "{} feature rows but {} label rows",
                features.len(),
                labels.nrows()
            )));
        }
        if labels.ncols() == 0 || num_features == 0 {
            return Err(Error::Data("L and S must be positive".into()));
        }
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::Data("label matrix is not binary".into()));
        }
        for (r, row) in features.iter().enumerate() {
            if row.indices.len() != row.values.len() {
                return Err(Error::Data(format!("row {r}: index/value length mismatch")));
            }
            if row.indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!("row {r}: feature indices not strictly ascending")));
            }
            if row.indices.last().is_some_and(|&i| i as usize >= num_features) {
                return Err(Error::Data(format!("row {r}: feature index out of range")));
            }
        }
        Ok(MultiLabelDataset {
            num_features,
            features,
            labels,
            label_names: None,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.features.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.ncols()
    }

    /// Attaches label names; their count must equal L.
    pub fn with_label_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_labels() {
            return Err(Error::Data(format!(
                "label-name file has {} entries but the dataset has {} labels",
                names.len(),
                self.num_labels()
            )));
        }
        self.label_names = Some(names);
        Ok(self)
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> MultiLabelDataset {
        MultiLabelDataset {
            num_features: self.num_features,
            features: rows.iter().map(|&r| self.features[r].clone()).collect(),
            labels: self.labels.select(ndarray::Axis(0), rows),
            label_names: self.label_names.clone(),
        }
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, usize, usize)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::parse(lineno, format!("header must be `N L S`, got {line:?}")));
    }
    let mut out = [0usize; 3];
    for (slot, (field, name)) in out.iter_mut().zip(fields.iter().zip(["N", "L", "S"])) {
        *slot = field
            .parse()
            .map_err(|_| Error::parse(lineno, format!("header field {name} is not an integer: {field:?}")))?;
    }
    if out[0] == 0 || out[1] == 0 || out[2] == 0 {
        return Err(Error::parse(lineno, "header values must be positive"));
    }
    Ok((out[0], out[1], out[2]))
}

fn parse_sample(
    line: &str,
    lineno: usize,
    num_labels: usize,
    num_features: usize,
    label_row: &mut [u8],
) -> Result<SparseRow> {
    let (label_field, feature_field) = line
        .split_once('\t')
        .ok_or_else(|| Error::parse(lineno, "missing TAB between label and feature fields"))?;

    let label_field = label_field.trim();
    if !label_field.is_empty() {
        for tok in label_field.split(',') {
            let tok = tok.trim();
            let idx: usize = tok
                .parse()
                .map_err(|_| Error::parse(lineno, format!("label token {tok:?} is not a non-negative integer")))?;
            if idx >= num_labels {
                return Err(Error::parse(
                    lineno,
                    format!("label index {idx} out of range (L={num_labels})"),
                ));
            }
            if label_row[idx] == 1 {
                return Err(Error::parse(lineno, format!("duplicate label index {idx}")));
            }
            label_row[idx] = 1;
        }
    }

    let mut pairs = Vec::new();
    for tok in feature_field.split_whitespace() {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| Error::parse(lineno, format!("feature token {tok:?} lacks ':'")))?;
        let idx: u32 = idx
            .parse()
            .map_err(|_| Error::parse(lineno, format!("feature index {idx:?} is not an integer")))?;
        if idx as usize >= num_features {
            return Err(Error::parse(
                lineno,
                format!("feature index {idx} out of range (S={num_features})"),
            ));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| Error::parse(lineno, format!("feature value {val:?} is not a number")))?;
        if !val.is_finite() {
            return Err(Error::parse(lineno, format!("feature value {val} is not finite")));
        }
        pairs.push((idx, val));
    }
    SparseRow::from_pairs(pairs).map_err(|dup| Error::parse(lineno, format!("duplicate feature index {dup}")))
}

/// Parses the canonical dataset format. Feature pairs are stored in
/// ascending index order regardless of their order in the file.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<MultiLabelDataset> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (n, l, s) = loop {
        let Some((lineno, line)) = lines.next() else {
            return Err(Error::parse(1, "missing header"));
        };
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        break parse_header(trimmed, lineno)?;
    };

    let mut labels = Array2::<u8>::zeros((n, l));
    let mut features = Vec::with_capacity(n);
    let mut last_line = 0;
    for (lineno, line) in lines.by_ref() {
        let line = line?;
        last_line = lineno;
        let line = line.trim_end_matches(['\r', '\n']);
        if features.len() == n {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::parse(lineno, format!("more than N={n} sample lines")));
        }
        let row = parse_sample(
            line,
            lineno,
            l,
            s,
            labels.row_mut(features.len()).as_slice_mut().unwrap(),
        )?;
        features.push(row);
    }
    if features.len() != n {
        return Err(Error::parse(
            last_line + 1,
            format!("expected {n} sample lines, found {}", features.len()),
        ));
    }
    MultiLabelDataset::new(s, features, labels)
}

pub fn parse_dataset_str(text: &str) -> Result<MultiLabelDataset> {
    parse_dataset(text.as_bytes())
}

/// One name per line, trimmed. An empty (or whitespace-only) line is an error.
pub fn parse_label_names<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let name = line.trim();
        if name.is_empty() {
            return Err(Error::parse(i + 1, "empty label name"));
        }
        names.push(name.to_string());
    }
    Ok(names)
}

/// Renders the canonical format. `{}` on `f64` prints the shortest string
/// that parses back to the same bits, so values survive a round trip exactly.
pub fn write_dataset<W: Write>(dataset: &MultiLabelDataset, mut out: W) -> Result<()> {
    writeln!(
        out,
        "{} {} {}",
        dataset.num_samples(),
        dataset.num_labels(),
        dataset.num_features
    )?;
    let mut line = String::new();
    for (row, labels) in dataset.features.iter().zip(dataset.labels.rows()) {
        line.clear();
        let mut first = true;
        for (j, &v) in labels.iter().enumerate() {
            if v == 1 {
                if !first {
                    line.push(',');
                }
                first = false;
                write!(line, "{j}").unwrap();
            }
        }
        line.push('\t');
        for (k, (idx, val)) in row.iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            write!(line, "{idx}:{val}").unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_dataset_string(dataset: &MultiLabelDataset) -> String {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("canonical format is ASCII")
}
