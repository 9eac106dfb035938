//! Column-major, dictionary-encoded view of a [`Table`].
//!
//! Dictionary ids are assigned in lexicographic order of the values, so id
//! order doubles as the deterministic tie-break order for repairs.

use rustc_hash::FxHashMap;

use crate::table::Table;

pub type ValueId = u32;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dictionary {
    values: Vec<String>,
    counts: Vec<usize>,
    index: FxHashMap<String, ValueId>,
}

impl Dictionary {
    /// Dictionary over the given values (deduplicated, sorted), with zero counts.
    pub fn from_values<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut values: Vec<String> = values.into_iter().map(Into::into).collect();
        values.sort();
        values.dedup();
        let index = values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as ValueId))
            .collect();
        let counts = vec![0; values.len()];
        Dictionary {
            values,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, value: &str) -> Option<ValueId> {
        self.index.get(value).copied()
    }

    pub fn value(&self, id: ValueId) -> &str {
        &self.values[id as usize]
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    /// Occurrence count of `id` in the table the dictionary was built from.
    pub fn count(&self, id: ValueId) -> usize {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn ids(&self) -> impl Iterator<Item = ValueId> {
        0..self.values.len() as ValueId
    }
}

#[derive(Debug, Clone)]
pub struct EncodedTable {
    n_rows: usize,
    columns: Vec<Vec<Option<ValueId>>>,
    dicts: Vec<Dictionary>,
}

impl EncodedTable {
    pub fn from_table(table: &Table) -> Self {
        let m = table.n_cols();
        let mut dicts = Vec::with_capacity(m);
        let mut columns = Vec::with_capacity(m);
        for j in 0..m {
            let mut dict = Dictionary::from_values(table.column(j).flatten());
            let col: Vec<Option<ValueId>> = table
                .column(j)
                .map(|v| {
                    v.map(|v| {
                        let id = dict.index[v];
                        dict.counts[id as usize] += 1;
                        id
                    })
                })
                .collect();
            dicts.push(dict);
            columns.push(col);
        }
        EncodedTable {
            n_rows: table.n_rows(),
            columns,
            dicts,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<ValueId> {
        self.columns[col][row]
    }

    pub fn column(&self, col: usize) -> &[Option<ValueId>] {
        &self.columns[col]
    }

    pub fn dict(&self, col: usize) -> &Dictionary {
        &self.dicts[col]
    }

    pub fn dicts(&self) -> &[Dictionary] {
        &self.dicts
    }

    pub fn row(&self, row: usize) -> Vec<Option<ValueId>> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn value(&self, row: usize, col: usize) -> Option<&str> {
        self.columns[col][row].map(|id| self.dicts[col].value(id))
    }
}
