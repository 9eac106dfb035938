//! Signed co-occurrence statistics used as the compensatory score.
//!
//! Every tuple adds `+1` (reliable) or `-beta` (unreliable) to the entry of
//! each ordered pair of its non-null cells. Entries are kept as raw counts and
//! divided by `|D|` at query time.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::constraints::{ConfidenceParams, ConstraintSet};
use crate::encoded::{EncodedTable, ValueId};
use crate::error::{Error, Result};
use crate::manifest::sha256_hex;
use crate::table::Table;

pub const DEFAULT_MAX_ENTRIES: usize = 50_000_000;

/// Added to every shifted score so weights stay strictly positive.
pub const WEIGHT_EPSILON: f64 = 1e-9;

const CACHE_MAGIC: &[u8; 8] = b"TCCORR01";

fn key(c: ValueId, e: ValueId) -> u64 {
    (u64::from(c) << 32) | u64::from(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrTable {
    n_cols: usize,
    n_rows: usize,
    /// One map per ordered attribute pair `(j, k)` at index `j·m + k`, keyed
    /// by `(value of j, value of k)` ids.
    pairs: Vec<FxHashMap<u64, f64>>,
    truncated: bool,
}

impl CorrTable {
    pub fn empty(n_cols: usize, n_rows: usize) -> Self {
        CorrTable {
            n_cols,
            n_rows,
            pairs: vec![FxHashMap::default(); n_cols * n_cols],
            truncated: false,
        }
    }

    /// Builds the table from an encoded table and per-row confidences.
    pub fn build(enc: &EncodedTable, conf: &[f64], params: &ConfidenceParams) -> Self {
        let m = enc.n_cols();
        let weights: Vec<f64> = conf
            .iter()
            .map(|&c| if c >= params.tau { 1.0 } else { -params.beta })
            .collect();
        let pairs = (0..m * m)
            .into_par_iter()
            .map(|idx| {
                let (j, k) = (idx / m, idx % m);
                let mut map = FxHashMap::default();
                if j == k {
                    return map;
                }
                let (cj, ck) = (enc.column(j), enc.column(k));
                for r in 0..enc.n_rows() {
                    if let (Some(c), Some(e)) = (cj[r], ck[r]) {
                        *map.entry(key(c, e)).or_insert(0.0) += weights[r];
                    }
                }
                map
            })
            .collect();
        CorrTable {
            n_cols: m,
            n_rows: enc.n_rows(),
            pairs,
            truncated: false,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_entries(&self) -> usize {
        self.pairs.iter().map(FxHashMap::len).sum()
    }

    /// Whether [`cap_entries`](Self::cap_entries) dropped anything.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Raw signed count for value `c` of column `j` next to `e` of column `k`.
    pub fn entry(&self, j: usize, k: usize, c: ValueId, e: ValueId) -> f64 {
        self.pairs[j * self.n_cols + k]
            .get(&key(c, e))
            .copied()
            .unwrap_or(0.0)
    }

    /// `Σ_{k≠j} entry(c, obs[k], j, k) / |D|`, skipping NULL evidence.
    pub fn score(&self, c: ValueId, obs: &[Option<ValueId>], j: usize) -> f64 {
        if self.n_rows == 0 {
            return 0.0;
        }
        let total: f64 = obs
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .filter_map(|(k, e)| e.map(|e| self.entry(j, k, c, e)))
            .sum();
        total / self.n_rows as f64
    }

    /// Keeps, for every ordered pair, only the entries with the largest
    /// magnitude so that the total stays within `max_entries`.
    pub fn cap_entries(&mut self, max_entries: usize) {
        let total = self.n_entries();
        if total <= max_entries {
            return;
        }
        let live = self.pairs.iter().filter(|p| !p.is_empty()).count().max(1);
        let per_pair = (max_entries / live).max(1);
        log::warn!(
            "co-occurrence table has {total} entries (cap {max_entries}); keeping the top {per_pair} per attribute pair"
        );
        for map in &mut self.pairs {
            if map.len() <= per_pair {
                continue;
            }
            let mut items: Vec<(u64, f64)> = map.drain().collect();
            items.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
            items.truncate(per_pair);
            map.extend(items);
        }
        self.truncated = true;
    }

    pub fn write_cache<W: Write>(&self, cache_key: &str, mut w: W) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        let kb = cache_key.as_bytes();
        w.write_all(&(kb.len() as u64).to_le_bytes())?;
        w.write_all(kb)?;
        w.write_all(&(self.n_cols as u64).to_le_bytes())?;
        w.write_all(&(self.n_rows as u64).to_le_bytes())?;
        w.write_all(&[u8::from(self.truncated)])?;
        for map in &self.pairs {
            let mut items: Vec<(&u64, &f64)> = map.iter().collect();
            items.sort_unstable_by_key(|e| *e.0);
            w.write_all(&(items.len() as u64).to_le_bytes())?;
            for (k, v) in items {
                w.write_all(&k.to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a cache written by [`write_cache`](Self::write_cache). Returns
    /// `Ok(None)` when the stored key differs from `cache_key`.
    pub fn read_cache<R: Read>(cache_key: &str, mut r: R) -> std::io::Result<Option<Self>> {
        fn u64_of<R: Read>(r: &mut R) -> std::io::Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Ok(None);
        }
        let klen = u64_of(&mut r)? as usize;
        let mut kb = vec![0u8; klen];
        r.read_exact(&mut kb)?;
        if kb != cache_key.as_bytes() {
            return Ok(None);
        }
        let n_cols = u64_of(&mut r)? as usize;
        let n_rows = u64_of(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut pairs = Vec::with_capacity(n_cols * n_cols);
        for _ in 0..n_cols * n_cols {
            let len = u64_of(&mut r)? as usize;
            let mut map = FxHashMap::default();
            map.reserve(len);
            for _ in 0..len {
                let k = u64_of(&mut r)?;
                let v = f64::from_bits(u64_of(&mut r)?);
                map.insert(k, v);
            }
            pairs.push(map);
        }
        Ok(Some(CorrTable {
            n_cols,
            n_rows,
            pairs,
            truncated: flag[0] != 0,
        }))
    }

    pub fn save_cache(&self, cache_key: &str, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_cache(cache_key, std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(cache_key: &str, path: &Path) -> Result<Option<Self>> {
        let f = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        Self::read_cache(cache_key, std::io::BufReader::new(f)).map_err(|e| Error::io(path, e))
    }
}

/// Content key for the cache: table contents, constraints and parameters.
pub fn cache_key(table: &Table, ucs: &ConstraintSet, params: &ConfidenceParams) -> Result<String> {
    let mut buf = Vec::new();
    table.to_writer(&mut buf)?;
    buf.extend(serde_json::to_vec(&ucs.to_config())?);
    buf.extend(serde_json::to_vec(params)?);
    Ok(sha256_hex(&buf))
}

/// Confidences from `ucs`, then the co-occurrence table over `table`.
pub fn build_corr(
    table: &Table,
    ucs: &ConstraintSet,
    params: &ConfidenceParams,
) -> (CorrTable, EncodedTable) {
    let enc = EncodedTable::from_table(table);
    let conf = ucs.confidences(table, params);
    (CorrTable::build(&enc, &conf, params), enc)
}

/// Shift-and-normalize of scores into strictly positive, order-preserving weights.
pub fn corr_to_weight(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = scores.iter().map(|s| s - min + WEIGHT_EPSILON).collect();
    let z: f64 = shifted.iter().sum();
    shifted.into_iter().map(|s| s / z).collect()
}
