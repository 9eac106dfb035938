//! Tabular data: loading, typing, profiling and numeric discretization.
//!
//! A [`Table`] is an immutable grid of optional text cells. `None` is NULL.
//! Attribute kinds route similarity computation and discretization; the
//! active domain of an attribute is the set of its observed non-null values.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of non-null cells that must parse as numbers for a column to be
/// inferred numeric.
pub const NUMERIC_THRESHOLD: f64 = 0.95;

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Categorical,
    Numeric,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: Kind,
    #[serde(default)]
    pub null_token: String,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, kind: Kind) -> Self {
        AttributeSpec {
            name: name.into(),
            kind,
            null_token: String::new(),
        }
    }
}

pub type Cell = Option<String>;
pub type Tuple = Vec<Cell>;

/// Per-attribute kind overrides applied at load time.
pub type SchemaHint = BTreeMap<String, Kind>;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    attributes: Vec<AttributeSpec>,
    rows: Vec<Tuple>,
}

impl Table {
    pub fn new(
        name: impl Into<String>,
        attributes: Vec<AttributeSpec>,
        rows: Vec<Tuple>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &attributes {
            if a.name.is_empty() {
                return Err(Error::InvalidSchema("empty attribute name".into()));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute `{}`",
                    a.name
                )));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != attributes.len() {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: attributes.len(),
                    found: row.len(),
                });
            }
        }
        Ok(Table {
            name: name.into(),
            attributes,
            rows,
        })
    }

    /// Builds a table of text attributes from string literals; `""` is NULL.
    pub fn from_literals(names: &[&str], rows: &[&[&str]]) -> Result<Self> {
        let attributes = names
            .iter()
            .map(|n| AttributeSpec::new(*n, Kind::Text))
            .collect();
        let rows = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|v| (!v.is_empty()).then(|| v.to_string()))
                    .collect()
            })
            .collect();
        Table::new("literal", attributes, rows)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.attributes.len()
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn rows(&self) -> &[Tuple] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Tuple {
        &self.rows[i]
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.rows[row][col].as_deref()
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = Option<&str>> + '_ {
        self.rows.iter().map(move |r| r[col].as_deref())
    }

    /// Same schema, new rows.
    pub fn with_rows(&self, rows: Vec<Tuple>) -> Result<Self> {
        Table::new(self.name.clone(), self.attributes.clone(), rows)
    }

    pub fn with_attributes(&self, attributes: Vec<AttributeSpec>) -> Result<Self> {
        Table::new(self.name.clone(), attributes, self.rows.clone())
    }

    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.rows.is_empty() {
            Err(Error::EmptyTable)
        } else {
            Ok(())
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(file)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        w.write_record(self.attributes.iter().map(|a| a.name.as_str()))?;
        for row in &self.rows {
            w.write_record(
                row.iter()
                    .zip(&self.attributes)
                    .map(|(c, a)| c.as_deref().unwrap_or(a.null_token.as_str())),
            )?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub schema_hint: SchemaHint,
    pub null_token: String,
}

/// Loads a CSV file with a mandatory header row.
pub fn load_csv(path: impl AsRef<Path>, schema_hint: Option<&SchemaHint>) -> Result<Table> {
    let opts = LoadOptions {
        schema_hint: schema_hint.cloned().unwrap_or_default(),
        null_token: String::new(),
    };
    load_csv_with(path, &opts)
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".into());
    read_csv(name, file, opts)
}

pub fn read_csv<R: Read>(name: impl Into<String>, reader: R, opts: &LoadOptions) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyTable);
    }
    for key in opts.schema_hint.keys() {
        if !header.contains(key) {
            return Err(Error::UnknownAttribute(key.clone()));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::RaggedRow {
                row: i + 1,
                expected: header.len(),
                found: rec.len(),
            });
        }
        rows.push(
            rec.iter()
                .map(|v| (v != opts.null_token).then(|| v.to_string()))
                .collect::<Tuple>(),
        );
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    let attributes = header
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let kind = match opts.schema_hint.get(n) {
                Some(k) => *k,
                None => infer_kind(rows.iter().map(|r| r[j].as_deref())),
            };
            AttributeSpec {
                name: n.clone(),
                kind,
                null_token: opts.null_token.clone(),
            }
        })
        .collect();
    Table::new(name, attributes, rows)
}

pub fn parse_number(v: &str) -> Option<f64> {
    v.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Numeric when at least 95% of non-null cells parse as finite numbers.
pub fn infer_kind<'a>(cells: impl Iterator<Item = Option<&'a str>>) -> Kind {
    let (mut total, mut numeric) = (0usize, 0usize);
    for v in cells.flatten() {
        total += 1;
        if parse_number(v).is_some() {
            numeric += 1;
        }
    }
    if total > 0 && numeric as f64 >= NUMERIC_THRESHOLD * total as f64 {
        Kind::Numeric
    } else {
        Kind::Text
    }
}

/// Observed non-null values of one attribute with their occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeDomain {
    pub attribute: String,
    pub values: BTreeMap<String, usize>,
}

impl AttributeDomain {
    pub fn total(&self) -> usize {
        self.values.values().sum()
    }
}

/// Active domains, one per attribute in schema order. NULL is never a member.
pub fn build_domains(table: &Table) -> Vec<AttributeDomain> {
    (0..table.n_cols())
        .map(|j| {
            let mut values = BTreeMap::new();
            for v in table.column(j).flatten() {
                *values.entry(v.to_string()).or_insert(0) += 1;
            }
            let attribute = table.attributes[j].name.clone();
            if values.is_empty() {
                log::warn!("attribute `{attribute}` has an empty active domain");
            }
            AttributeDomain { attribute, values }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub attribute: String,
    pub kind: Kind,
    pub distinct: usize,
    pub null_count: usize,
}

pub fn profile(table: &Table) -> Vec<ProfileRecord> {
    build_domains(table)
        .into_iter()
        .zip(table.attributes())
        .enumerate()
        .map(|(j, (d, a))| ProfileRecord {
            attribute: a.name.clone(),
            kind: a.kind,
            distinct: d.values.len(),
            null_count: table.column(j).filter(Option::is_none).count(),
        })
        .collect()
}

/// Equal-frequency binning of one numeric attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    /// Lower bin edges in ascending order; bin `i` covers `[cuts[i], cuts[i+1])`.
    pub cuts: Vec<f64>,
    pub labels: Vec<String>,
    /// Observed value (lower median) standing in for each bin in repairs.
    pub representatives: Vec<String>,
    /// Fewer distinct values than bins: every distinct value is its own label.
    pub degenerate: bool,
}

impl Binning {
    /// Label for a raw cell. Unparseable cells keep their raw text.
    pub fn label(&self, raw: &str) -> String {
        let Some(x) = parse_number(raw) else {
            return raw.to_string();
        };
        if self.degenerate {
            return match self.cuts.iter().position(|c| *c == x) {
                Some(i) => self.labels[i].clone(),
                None => raw.to_string(),
            };
        }
        let idx = self.cuts.partition_point(|c| *c <= x).saturating_sub(1);
        self.labels[idx].clone()
    }

    pub fn representative(&self, label: &str) -> Option<&str> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.representatives[i].as_str())
    }
}

/// Sidecar produced by [`discretize_numeric`], keyed by attribute name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub columns: BTreeMap<String, Binning>,
}

impl Discretization {
    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Rewrites the binned attributes of `table` into their labels.
    pub fn apply(&self, table: &Table) -> Result<Table> {
        let mut attrs = table.attributes().to_vec();
        let mut binned = Vec::new();
        for (name, b) in &self.columns {
            let j = table.attribute_index(name)?;
            attrs[j].kind = Kind::Categorical;
            binned.push((j, b));
        }
        let rows = table
            .rows()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for (j, b) in &binned {
                    if let Some(v) = &r[*j] {
                        r[*j] = Some(b.label(v));
                    }
                }
                r
            })
            .collect();
        Table::new(table.name.clone(), attrs, rows)
    }
}

fn fmt_edge(x: f64) -> String {
    format!("{x}")
}

/// Replaces every numeric attribute by equal-frequency bin labels `[lo,hi)`.
///
/// Columns with fewer distinct values than `bins` keep their distinct values
/// as labels and are flagged `degenerate`.
pub fn discretize_numeric(table: &Table, bins: usize) -> Result<(Table, Discretization)> {
    if bins < 2 {
        return Err(Error::InvalidParam(format!(
            "bins must be >= 2, got {bins}"
        )));
    }
    let mut disc = Discretization::default();
    for (j, a) in table.attributes().iter().enumerate() {
        if a.kind != Kind::Numeric {
            continue;
        }
        let mut vals: Vec<(f64, &str)> = table
            .column(j)
            .flatten()
            .filter_map(|v| parse_number(v).map(|x| (x, v)))
            .collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut distinct: Vec<(f64, &str)> = vals.clone();
        distinct.dedup_by(|a, b| a.0 == b.0);
        let binning = if distinct.len() < bins {
            log::warn!(
                "attribute `{}`: {} distinct values < {bins} bins, using values as labels",
                a.name,
                distinct.len()
            );
            Binning {
                cuts: distinct.iter().map(|d| d.0).collect(),
                labels: distinct.iter().map(|d| d.1.to_string()).collect(),
                representatives: distinct.iter().map(|d| d.1.to_string()).collect(),
                degenerate: true,
            }
        } else {
            equal_frequency(&vals, bins)
        };
        disc.columns.insert(a.name.clone(), binning);
    }
    let out = disc.apply(table)?;
    Ok((out, disc))
}

fn equal_frequency(sorted: &[(f64, &str)], bins: usize) -> Binning {
    let n = sorted.len();
    let mut cuts = vec![sorted[0].0];
    for k in 1..bins {
        let c = sorted[k * n / bins].0;
        if c > *cuts.last().unwrap() {
            cuts.push(c);
        }
    }
    let max = sorted[n - 1].0;
    let mut labels = Vec::with_capacity(cuts.len());
    let mut representatives = Vec::with_capacity(cuts.len());
    for (i, lo) in cuts.iter().enumerate() {
        let (hi, closed) = match cuts.get(i + 1) {
            Some(h) => (*h, false),
            None => (max, true),
        };
        labels.push(if closed {
            format!("[{},{}]", fmt_edge(*lo), fmt_edge(hi))
        } else {
            format!("[{},{})", fmt_edge(*lo), fmt_edge(hi))
        });
        let start = sorted.partition_point(|v| v.0 < *lo);
        let end = if closed {
            n
        } else {
            sorted.partition_point(|v| v.0 < hi)
        };
        representatives.push(sorted[start + (end - start - 1) / 2].1.to_string());
    }
    Binning {
        cuts,
        labels,
        representatives,
        degenerate: false,
    }
}
