//! User constraints (per-value binary predicates) and tuple confidence.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use regex::Regex;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{parse_number, Table};

/// Declarative form of one attribute's constraint, as found in config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_val: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_val: Option<f64>,
    #[serde(default = "yes")]
    pub allow_null: bool,
    /// Regular expression; always matched against the whole value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    /// Program and arguments of an external predicate. It receives one value
    /// per line on stdin and must answer `1` or `0` per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<Vec<String>>,
}

fn yes() -> bool {
    true
}

/// Config file shape: attribute name to constraint.
pub type ConstraintConfig = BTreeMap<String, ConstraintSpec>;

#[derive(Debug, Clone)]
pub struct UserConstraint {
    pub attribute: String,
    pub spec: ConstraintSpec,
    pattern: Option<Regex>,
    /// Answers of the external predicate, filled by [`ConstraintSet::prepare`].
    external: FxHashMap<String, bool>,
}

impl UserConstraint {
    pub fn new(attribute: impl Into<String>, spec: ConstraintSpec) -> Result<Self> {
        let attribute = attribute.into();
        let bad = |reason: String| Error::InvalidConstraint {
            attribute: attribute.clone(),
            reason,
        };
        if let (Some(lo), Some(hi)) = (spec.min_len, spec.max_len) {
            if lo > hi {
                return Err(bad(format!("min_len {lo} > max_len {hi}")));
            }
        }
        if let (Some(lo), Some(hi)) = (spec.min_val, spec.max_val) {
            if !(lo <= hi) {
                return Err(bad(format!("min_val {lo} > max_val {hi}")));
            }
        }
        if let Some(cmd) = &spec.external {
            if cmd.is_empty() {
                return Err(bad("external predicate needs a program".into()));
            }
        }
        let pattern = spec
            .pattern
            .as_deref()
            .map(|p| Regex::new(&format!("^(?:{p})$")).map_err(|e| bad(e.to_string())))
            .transpose()?;
        Ok(UserConstraint {
            attribute,
            spec,
            pattern,
            external: FxHashMap::default(),
        })
    }

    /// Whether `cell` satisfies every sub-constraint that is present.
    pub fn check(&self, cell: Option<&str>) -> bool {
        let Some(v) = cell else {
            return self.spec.allow_null;
        };
        let len = v.chars().count();
        if self.spec.min_len.is_some_and(|m| len < m) || self.spec.max_len.is_some_and(|m| len > m)
        {
            return false;
        }
        if self.spec.min_val.is_some() || self.spec.max_val.is_some() {
            let Some(x) = parse_number(v) else {
                return false;
            };
            if self.spec.min_val.is_some_and(|m| x < m) || self.spec.max_val.is_some_and(|m| x > m)
            {
                return false;
            }
        }
        if let Some(re) = &self.pattern {
            if !re.is_match(v) {
                return false;
            }
        }
        if self.spec.external.is_some() {
            // values never shown to the predicate are not trusted
            return self.external.get(v).copied().unwrap_or(false);
        }
        true
    }
}

/// Constraints aligned to the columns of one table; unconstrained columns pass.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    by_column: Vec<Option<UserConstraint>>,
    names: Vec<String>,
}

impl ConstraintSet {
    /// No constraints at all for the given columns.
    pub fn unconstrained(attribute_names: &[String]) -> Self {
        ConstraintSet {
            by_column: vec![None; attribute_names.len()],
            names: attribute_names.to_vec(),
        }
    }

    pub fn from_config(config: &ConstraintConfig, attribute_names: &[String]) -> Result<Self> {
        let mut set = Self::unconstrained(attribute_names);
        for (attr, spec) in config {
            let j = attribute_names
                .iter()
                .position(|n| n == attr)
                .ok_or_else(|| Error::UnknownAttribute(attr.clone()))?;
            set.by_column[j] = Some(UserConstraint::new(attr.clone(), spec.clone())?);
        }
        Ok(set)
    }

    pub fn from_json(json: &str, attribute_names: &[String]) -> Result<Self> {
        let config: ConstraintConfig = serde_json::from_str(json)?;
        Self::from_config(&config, attribute_names)
    }

    pub fn load(path: impl AsRef<Path>, attribute_names: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, attribute_names)
    }

    pub fn to_config(&self) -> ConstraintConfig {
        self.by_column
            .iter()
            .flatten()
            .map(|c| (c.attribute.clone(), c.spec.clone()))
            .collect()
    }

    /// Copy without the constraints `keep` rejects (used for ablations).
    pub fn filtered(
        &self,
        keep: impl Fn(&str, &ConstraintSpec) -> Option<ConstraintSpec>,
    ) -> Result<Self> {
        let mut config = ConstraintConfig::new();
        for c in self.by_column.iter().flatten() {
            if let Some(spec) = keep(&c.attribute, &c.spec) {
                config.insert(c.attribute.clone(), spec);
            }
        }
        let mut out = Self::from_config(&config, &self.names)?;
        for (dst, src) in out.by_column.iter_mut().zip(&self.by_column) {
            if let (Some(d), Some(s)) = (dst, src) {
                d.external = s.external.clone();
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.by_column.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_column.is_empty()
    }

    pub fn constraint(&self, col: usize) -> Option<&UserConstraint> {
        self.by_column[col].as_ref()
    }

    pub fn check(&self, col: usize, cell: Option<&str>) -> bool {
        self.by_column[col].as_ref().is_none_or(|c| c.check(cell))
    }

    /// Runs every external predicate once over the distinct values of its
    /// column in `table`, caching the answers.
    pub fn prepare(&mut self, table: &Table) -> Result<()> {
        for (j, slot) in self.by_column.iter_mut().enumerate() {
            let Some(c) = slot else { continue };
            let Some(cmd) = c.spec.external.clone() else {
                continue;
            };
            let mut values: Vec<String> = table.column(j).flatten().map(str::to_string).collect();
            values.sort();
            values.dedup();
            values.retain(|v| !c.external.contains_key(v));
            let answers = run_external(&cmd, &values)?;
            c.external.extend(values.into_iter().zip(answers));
        }
        Ok(())
    }

    pub fn tuple_confidence(&self, tuple: &[Option<&str>], params: &ConfidenceParams) -> f64 {
        let pass = tuple
            .iter()
            .enumerate()
            .filter(|(j, v)| self.check(*j, **v))
            .count();
        confidence(pass, tuple.len() - pass, params.lambda)
    }

    /// Confidence of every row of `table`.
    pub fn confidences(&self, table: &Table, params: &ConfidenceParams) -> Vec<f64> {
        (0..table.n_rows())
            .map(|r| {
                let row: Vec<Option<&str>> =
                    (0..table.n_cols()).map(|j| table.cell(r, j)).collect();
                self.tuple_confidence(&row, params)
            })
            .collect()
    }
}

/// Feeds `values` to the predicate, one per line (newlines and backslashes
/// escaped), and reads one `0`/`1` answer per value.
fn run_external(cmd: &[String], values: &[String]) -> Result<Vec<bool>> {
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let fail = |m: String| Error::ExternalPredicate(format!("{}: {m}", cmd[0]));
    let mut child = Command::new(&cmd[0])
        .args(&cmd[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| fail(e.to_string()))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let payload: String = values
        .iter()
        .map(|v| format!("{}\n", v.replace('\\', "\\\\").replace('\n', "\\n")))
        .collect();
    let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
    let stdout = child.stdout.take().expect("piped stdout");
    let mut answers = Vec::with_capacity(values.len());
    for line in BufReader::new(stdout).lines() {
        let line = line.map_err(|e| fail(e.to_string()))?;
        match line.trim() {
            "1" => answers.push(true),
            "0" => answers.push(false),
            other => return Err(fail(format!("expected 0 or 1, got `{other}`"))),
        }
    }
    writer
        .join()
        .map_err(|_| fail("writer thread panicked".into()))?
        .map_err(|e| fail(e.to_string()))?;
    let status = child.wait().map_err(|e| fail(e.to_string()))?;
    if !status.success() {
        return Err(fail(format!("exited with {status}")));
    }
    if answers.len() != values.len() {
        return Err(fail(format!(
            "{} answers for {} values",
            answers.len(),
            values.len()
        )));
    }
    Ok(answers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    /// Penalty per failing cell.
    pub lambda: f64,
    /// Confidence at or above which a tuple counts as reliable.
    pub tau: f64,
    /// Weight subtracted for co-occurrences in unreliable tuples.
    pub beta: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        ConfidenceParams {
            lambda: 1.0,
            tau: 0.5,
            beta: 2.0,
        }
    }
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParam(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// `max(0, (pass - lambda·fail) / (pass + fail))`.
pub fn confidence(pass: usize, fail: usize, lambda: f64) -> f64 {
    let m = pass + fail;
    if m == 0 {
        return 1.0;
    }
    ((pass as f64 - lambda * fail as f64) / m as f64).max(0.0)
}
