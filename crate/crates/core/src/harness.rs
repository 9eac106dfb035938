//! Error injection, repair scoring and synthetic FD-governed tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{AttributeSpec, Cell, Kind, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Typo,
    Missing,
    Inconsistency,
    Swap,
}

impl ErrorType {
    pub const ALL: [ErrorType; 4] = [
        ErrorType::Typo,
        ErrorType::Missing,
        ErrorType::Inconsistency,
        ErrorType::Swap,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ErrorType::Typo => "T",
            ErrorType::Missing => "M",
            ErrorType::Inconsistency => "I",
            ErrorType::Swap => "S",
        }
    }
}

/// Fraction of all cells to corrupt with each error type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub typo: f64,
    pub missing: f64,
    pub inconsistency: f64,
    pub swap: f64,
    pub seed: u64,
}

impl ErrorSpec {
    pub fn rate(&self, t: ErrorType) -> f64 {
        match t {
            ErrorType::Typo => self.typo,
            ErrorType::Missing => self.missing,
            ErrorType::Inconsistency => self.inconsistency,
            ErrorType::Swap => self.swap,
        }
    }

    pub fn total_rate(&self) -> f64 {
        ErrorType::ALL.iter().map(|&t| self.rate(t)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for t in ErrorType::ALL {
            let r = self.rate(t);
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidParam(format!(
                    "{t:?} rate must be in [0, 1], got {r}"
                )));
            }
        }
        if self.total_rate() > 1.0 + 1e-12 {
            return Err(Error::InvalidParam(format!(
                "error rates sum to {} > 1",
                self.total_rate()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub row: usize,
    pub attribute: String,
    pub clean_value: Option<String>,
    pub dirty_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_type: Option<ErrorType>,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub clean: Table,
    pub mask: Vec<MaskEntry>,
}

impl GroundTruth {
    /// Mask from a clean/dirty pair: every differing cell, type unknown.
    pub fn from_pair(clean: &Table, dirty: &Table) -> Result<Self> {
        check_shape(clean, dirty)?;
        let names = clean.attribute_names();
        let mut mask = Vec::new();
        for r in 0..clean.n_rows() {
            for (j, name) in names.iter().enumerate() {
                if clean.cell(r, j) != dirty.cell(r, j) {
                    mask.push(MaskEntry {
                        row: r,
                        attribute: name.clone(),
                        clean_value: clean.cell(r, j).map(str::to_string),
                        dirty_value: dirty.cell(r, j).map(str::to_string),
                        error_type: None,
                    });
                }
            }
        }
        Ok(GroundTruth {
            clean: clean.clone(),
            mask,
        })
    }
}

fn check_shape(a: &Table, b: &Table) -> Result<()> {
    if a.n_rows() != b.n_rows() || a.attribute_names() != b.attribute_names() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.n_rows(),
            a.n_cols(),
            b.n_rows(),
            b.n_cols()
        )));
    }
    Ok(())
}

fn random_char_like(c: char, rng: &mut impl Rng) -> char {
    if c.is_ascii_digit() {
        char::from(b'0' + rng.random_range(0..10u8))
    } else if c.is_ascii_uppercase() {
        char::from(b'A' + rng.random_range(0..26u8))
    } else {
        char::from(b'a' + rng.random_range(0..26u8))
    }
}

/// Inserts, deletes or replaces one character. The result is always at
/// edit distance exactly 1 from `value`.
pub fn typo(value: &str, rng: &mut impl Rng) -> String {
    let mut chars: Vec<char> = value.chars().collect();
    let op = if chars.is_empty() {
        0
    } else {
        rng.random_range(0..3)
    };
    match op {
        0 => {
            let pos = rng.random_range(0..=chars.len());
            let like = chars.get(pos).or(chars.last()).copied().unwrap_or('a');
            chars.insert(pos, random_char_like(like, rng));
        }
        1 if chars.len() > 1 => {
            let pos = rng.random_range(0..chars.len());
            chars.remove(pos);
        }
        _ => {
            let pos = rng.random_range(0..chars.len());
            let old = chars[pos];
            let mut new = random_char_like(old, rng);
            while new == old {
                new = random_char_like(old, rng);
            }
            chars[pos] = new;
        }
    }
    chars.into_iter().collect()
}

/// Corrupts cells of `clean` according to `spec`. Each type gets
/// `round(rate · cells)` cells; only non-null cells are corrupted and no cell
/// is corrupted twice.
pub fn inject_errors(clean: &Table, spec: &ErrorSpec) -> Result<(Table, GroundTruth)> {
    spec.validate()?;
    let (n, m) = (clean.n_rows(), clean.n_cols());
    let total = n * m;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let domains: Vec<Vec<&str>> = (0..m)
        .map(|j| {
            let set: BTreeSet<&str> = clean.column(j).flatten().collect();
            set.into_iter().collect()
        })
        .collect();
    let mut order: Vec<(usize, usize)> = (0..n)
        .flat_map(|r| (0..m).map(move |j| (r, j)))
        .filter(|&(r, j)| clean.cell(r, j).is_some())
        .collect();
    order.shuffle(&mut rng);

    let mut rows: Vec<Vec<Cell>> = clean.rows().to_vec();
    let mut used = vec![false; total];
    let mut kinds: BTreeMap<(usize, usize), ErrorType> = BTreeMap::new();
    let mut cursor = 0usize;

    for t in ErrorType::ALL {
        let want = (spec.rate(t) * total as f64).round() as usize;
        let mut done = 0usize;
        while done < want && cursor < order.len() {
            let (r, j) = order[cursor];
            cursor += 1;
            if used[r * m + j] {
                continue;
            }
            let old = clean.cell(r, j).expect("only non-null cells are queued");
            match t {
                ErrorType::Typo => {
                    rows[r][j] = Some(typo(old, &mut rng));
                }
                ErrorType::Missing => {
                    rows[r][j] = None;
                }
                ErrorType::Inconsistency => {
                    let other_cols: Vec<usize> = (0..m)
                        .filter(|&k| k != j && !domains[k].is_empty())
                        .collect();
                    let from_other = !other_cols.is_empty() && rng.random_bool(0.5);
                    let pool: Vec<&str> = if from_other {
                        let k = *other_cols.choose(&mut rng).expect("non-empty");
                        domains[k].iter().copied().filter(|v| *v != old).collect()
                    } else {
                        domains[j].iter().copied().filter(|v| *v != old).collect()
                    };
                    let Some(v) = pool.choose(&mut rng) else {
                        continue;
                    };
                    rows[r][j] = Some((*v).to_string());
                }
                ErrorType::Swap => {
                    let partners: Vec<usize> = (0..n)
                        .filter(|&p| p != r && !used[p * m + j])
                        .filter(|&p| clean.cell(p, j).is_some_and(|v| v != old))
                        .collect();
                    let Some(&p) = partners.choose(&mut rng) else {
                        continue;
                    };
                    rows[r][j] = clean.cell(p, j).map(str::to_string);
                    rows[p][j] = Some(old.to_string());
                    used[p * m + j] = true;
                    kinds.insert((p, j), t);
                    done += 1;
                }
            }
            used[r * m + j] = true;
            kinds.insert((r, j), t);
            done += 1;
        }
        if done < want {
            log::warn!("injected {done} of {want} requested {t:?} errors");
        }
    }

    let names = clean.attribute_names();
    let mask = kinds
        .into_iter()
        .filter(|&((r, j), _)| rows[r][j].as_deref() != clean.cell(r, j))
        .map(|((r, j), t)| MaskEntry {
            row: r,
            attribute: names[j].clone(),
            clean_value: clean.cell(r, j).map(str::to_string),
            dirty_value: rows[r][j].clone(),
            error_type: Some(t),
        })
        .collect();
    let dirty = clean.with_rows(rows)?;
    Ok((
        dirty,
        GroundTruth {
            clean: clean.clone(),
            mask,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeRecall {
    pub errors: usize,
    pub repaired: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub modified: usize,
    pub correct: usize,
    pub errors: usize,
    pub per_type: BTreeMap<ErrorType, TypeRecall>,
}

impl Metrics {
    pub fn from_counts(modified: usize, correct: usize, errors: usize) -> Self {
        let precision = if modified == 0 {
            if errors == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            correct as f64 / modified as f64
        };
        let recall = if errors == 0 {
            1.0
        } else {
            correct as f64 / errors as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            f1,
            modified,
            correct,
            errors,
            per_type: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12}{:>10}", "metric", "value");
        for (k, v) in [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            let _ = writeln!(s, "{k:<12}{v:>10.4}");
        }
        for (k, v) in [
            ("modified", self.modified),
            ("correct", self.correct),
            ("errors", self.errors),
        ] {
            let _ = writeln!(s, "{k:<12}{v:>10}");
        }
        for (t, r) in &self.per_type {
            let _ = writeln!(
                s,
                "{:<12}{:>10.4}  ({}/{})",
                format!("recall[{}]", t.code()),
                r.recall,
                r.repaired,
                r.errors
            );
        }
        s
    }
}

/// Precision over modified cells, recall over masked cells.
pub fn score(dirty: &Table, cleaned: &Table, truth: &GroundTruth) -> Result<Metrics> {
    check_shape(dirty, cleaned)?;
    check_shape(dirty, &truth.clean)?;
    let mut modified = 0;
    let mut correct = 0;
    for r in 0..dirty.n_rows() {
        for j in 0..dirty.n_cols() {
            if cleaned.cell(r, j) != dirty.cell(r, j) {
                modified += 1;
                if cleaned.cell(r, j) == truth.clean.cell(r, j) {
                    correct += 1;
                }
            }
        }
    }
    let mut metrics = Metrics::from_counts(modified, correct, truth.mask.len());
    for e in &truth.mask {
        let Some(t) = e.error_type else { continue };
        let j = dirty.attribute_index(&e.attribute)?;
        let entry = metrics.per_type.entry(t).or_insert(TypeRecall {
            errors: 0,
            repaired: 0,
            recall: 0.0,
        });
        entry.errors += 1;
        if cleaned.cell(e.row, j) == truth.clean.cell(e.row, j) {
            entry.repaired += 1;
        }
    }
    for r in metrics.per_type.values_mut() {
        r.recall = r.repaired as f64 / r.errors as f64;
    }
    Ok(metrics)
}

pub fn write_mask(path: &Path, mask: &[MaskEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(mask)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<Vec<MaskEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum Dependence {
    /// A distinct value per determinant value.
    Injective,
    /// At most this many values shared among determinant values.
    Coarse(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dependent {
    pub name: String,
    pub dependence: Dependence,
}

/// A determinant attribute drawing five-digit codes from a pool, and the
/// attributes it functionally determines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdGroup {
    pub determinant: String,
    pub pool: usize,
    pub dependents: Vec<Dependent>,
}

impl FdGroup {
    pub fn new(determinant: &str, pool: usize, dependents: &[(&str, Dependence)]) -> Self {
        FdGroup {
            determinant: determinant.into(),
            pool,
            dependents: dependents
                .iter()
                .map(|(n, d)| Dependent {
                    name: (*n).into(),
                    dependence: *d,
                })
                .collect(),
        }
    }
}

const SYLLABLES: &[&str] = &[
    "ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu", "na", "pe", "ri", "so", "tu", "va",
    "we", "xi", "yo", "zu", "bra", "cle", "dro", "fli", "gra", "pla", "sto", "tri",
];

fn fresh_word(rng: &mut impl Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let len = rng.random_range(3..=4);
        let w: String = (0..len)
            .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
            .collect();
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

/// Deterministic table of `rows` rows, one block of columns per group.
pub fn generate_synthetic(rows: usize, groups: &[FdGroup], seed: u64) -> Result<Table> {
    if groups.is_empty() {
        return Err(Error::InvalidParam("need at least one FD group".into()));
    }
    if rows == 0 {
        return Err(Error::EmptyTable);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let mut attrs = Vec::new();
    let mut columns: Vec<Vec<Cell>> = Vec::new();
    for g in groups {
        if g.pool == 0 || g.pool > 90_000 {
            return Err(Error::InvalidParam(format!(
                "pool of `{}` must be in 1..=90000",
                g.determinant
            )));
        }
        let mut codes = BTreeSet::new();
        while codes.len() < g.pool {
            codes.insert(rng.random_range(10_000..100_000u32).to_string());
        }
        let mut codes: Vec<String> = codes.into_iter().collect();
        codes.shuffle(&mut rng);
        let picks: Vec<usize> = (0..rows).map(|_| rng.random_range(0..g.pool)).collect();
        attrs.push(AttributeSpec::new(g.determinant.clone(), Kind::Categorical));
        columns.push(picks.iter().map(|&i| Some(codes[i].clone())).collect());
        for d in &g.dependents {
            let values: Vec<String> = match d.dependence {
                Dependence::Injective => (0..g.pool)
                    .map(|_| fresh_word(&mut rng, &mut taken))
                    .collect(),
                Dependence::Coarse(k) => {
                    if k == 0 {
                        return Err(Error::InvalidParam(format!(
                            "`{}` needs at least one value",
                            d.name
                        )));
                    }
                    let words: Vec<String> =
                        (0..k).map(|_| fresh_word(&mut rng, &mut taken)).collect();
                    (0..g.pool).map(|i| words[i % k].clone()).collect()
                }
            };
            attrs.push(AttributeSpec::new(d.name.clone(), Kind::Text));
            columns.push(picks.iter().map(|&i| Some(values[i].clone())).collect());
        }
    }
    let table_rows = (0..rows)
        .map(|r| columns.iter().map(|c| c[r].clone()).collect())
        .collect();
    Table::new("synthetic", attrs, table_rows)
}
