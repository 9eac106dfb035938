//! Per-cell constrained MAP repair.
//!
//! For every cell the engine scores UC-passing candidates by the network's
//! conditional plus the log of the compensatory weight and keeps the best.
//! All cells are scored against the original table, so rows are independent
//! and are processed in parallel; results are merged in (row, column) order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::bayes::{normalize_log, split_composite, BayesNet, UNKNOWN};
use crate::compensatory::{corr_to_weight, CorrTable, DEFAULT_MAX_ENTRIES};
use crate::constraints::{ConfidenceParams, ConstraintSet};
use crate::encoded::{EncodedTable, ValueId};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::table::{Discretization, Table};

pub const DEFAULT_TAU_CLEAN: f64 = 0.6;
pub const DEFAULT_TOP_K: usize = 64;

/// Scores closer than this (in log space) are treated as tied.
pub const TIE_EPSILON: f64 = 1e-9;

/// How candidate domains are ranked when pruning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Term frequency is the co-occurrence of a value with the cell's own
    /// context (the node's network neighbours, or all other attributes for
    /// an isolated node) in the other tuples.
    #[default]
    CellContext,
    /// Term frequency is the number of sub-networks whose member attributes
    /// contain the value; the ranking is the same for every cell of a column.
    SubNetwork,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanParams {
    /// Cells whose filter score reaches this value skip inference.
    pub tau_clean: f64,
    pub top_k: usize,
    pub use_partition: bool,
    pub use_tuple_prune: bool,
    pub use_domain_prune: bool,
    pub prune_mode: PruneMode,
    pub confidence: ConfidenceParams,
    pub max_corr_entries: usize,
}

impl Default for CleanParams {
    fn default() -> Self {
        CleanParams {
            tau_clean: DEFAULT_TAU_CLEAN,
            top_k: DEFAULT_TOP_K,
            use_partition: true,
            use_tuple_prune: true,
            use_domain_prune: true,
            prune_mode: PruneMode::CellContext,
            confidence: ConfidenceParams::default(),
            max_corr_entries: DEFAULT_MAX_ENTRIES,
        }
    }
}

impl CleanParams {
    /// Every cell, every candidate, full-network scoring.
    pub fn basic() -> Self {
        CleanParams {
            use_partition: false,
            use_tuple_prune: false,
            use_domain_prune: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_clean) {
            return Err(Error::InvalidParam(format!(
                "tau_clean must be in [0, 1], got {}",
                self.tau_clean
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidParam("top_k must be >= 1".into()));
        }
        self.confidence.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub row: usize,
    pub attribute: String,
    pub old: Option<String>,
    pub new: String,
    /// Log of the network conditional of the chosen value, normalized over
    /// the candidate set.
    pub bn_logp: f64,
    pub cs_weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<Manifest>,
    pub repairs: Vec<Repair>,
    /// Cells left unchanged because no candidate satisfied the constraints.
    pub skipped_cells: usize,
    /// Cells that skipped inference because they looked reliable.
    pub pruned_cells: usize,
    pub inferred_cells: usize,
    pub candidate_evals: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CleanOutcome {
    pub table: Table,
    pub report: RepairReport,
}

/// `context · ln(|D| / (1 + count))`.
pub fn tfidf_score(context: f64, n_rows: usize, count: usize) -> f64 {
    context * (n_rows as f64 / (1.0 + count as f64)).ln()
}

/// Where a node's values land in the raw table.
#[derive(Debug, Clone)]
enum NodeTarget {
    Base(usize),
    Composite(Vec<usize>),
    /// Node without a counterpart in the table being cleaned (never written).
    Detached,
}

/// Unsigned co-occurrence index over the node columns.
struct Cooccurrence {
    m: usize,
    /// At `j·m + k`: value of `k` → sorted `(value of j, count)`.
    lists: Vec<FxHashMap<ValueId, Vec<(ValueId, u32)>>>,
}

impl Cooccurrence {
    fn build(enc: &EncodedTable) -> Self {
        let m = enc.n_cols();
        let lists = (0..m * m)
            .into_par_iter()
            .map(|idx| {
                let (j, k) = (idx / m, idx % m);
                let mut out = FxHashMap::default();
                if j == k {
                    return out;
                }
                let mut acc: FxHashMap<ValueId, FxHashMap<ValueId, u32>> = FxHashMap::default();
                for r in 0..enc.n_rows() {
                    if let (Some(a), Some(b)) = (enc.get(r, j), enc.get(r, k)) {
                        *acc.entry(b).or_default().entry(a).or_insert(0) += 1;
                    }
                }
                for (b, counts) in acc {
                    let mut v: Vec<(ValueId, u32)> = counts.into_iter().collect();
                    v.sort_unstable();
                    out.insert(b, v);
                }
                out
            })
            .collect();
        Cooccurrence { m, lists }
    }

    fn neighbours(&self, j: usize, k: usize, e: ValueId) -> &[(ValueId, u32)] {
        self.lists[j * self.m + k]
            .get(&e)
            .map_or(&[], Vec::as_slice)
    }

    fn count(&self, j: usize, c: ValueId, k: usize, e: ValueId) -> u32 {
        let list = self.neighbours(j, k, e);
        match list.binary_search_by_key(&c, |x| x.0) {
            Ok(i) => list[i].1,
            Err(_) => 0,
        }
    }
}

/// Everything derived from (table, network, constraints) once per run.
pub struct Cleaner<'a> {
    raw: &'a Table,
    bn: &'a BayesNet,
    disc: &'a Discretization,
    ucs: &'a ConstraintSet,
    enc: EncodedTable,
    to_bn: Vec<Vec<ValueId>>,
    targets: Vec<NodeTarget>,
    uc_value: Vec<Vec<bool>>,
    corr: CorrTable,
    cooc: Cooccurrence,
    context_nodes: Vec<Vec<usize>>,
    subnet_rank: Vec<Vec<ValueId>>,
}

impl<'a> Cleaner<'a> {
    /// `ucs` must be aligned with the columns of `raw`; `disc` is the
    /// discretization the network was learned with.
    pub fn new(
        raw: &'a Table,
        bn: &'a BayesNet,
        disc: &'a Discretization,
        ucs: &'a ConstraintSet,
        confidence: &ConfidenceParams,
        max_corr_entries: usize,
    ) -> Result<Self> {
        let corr_for = |enc: &EncodedTable| {
            let conf = ucs.confidences(raw, confidence);
            let mut corr = CorrTable::build(enc, &conf, confidence);
            corr.cap_entries(max_corr_entries);
            corr
        };
        Self::with_corr(raw, bn, disc, ucs, corr_for)
    }

    /// Like [`new`](Self::new) but lets the caller supply the co-occurrence
    /// table (for example from a cache) given the node-level encoding.
    pub fn with_corr(
        raw: &'a Table,
        bn: &'a BayesNet,
        disc: &'a Discretization,
        ucs: &'a ConstraintSet,
        corr_for: impl FnOnce(&EncodedTable) -> CorrTable,
    ) -> Result<Self> {
        raw.ensure_non_empty()?;
        if ucs.len() != raw.n_cols() {
            return Err(Error::ShapeMismatch(format!(
                "{} constraints for {} columns",
                ucs.len(),
                raw.n_cols()
            )));
        }
        let node_table = bn.node_table(&disc.apply(raw)?)?;
        let enc = EncodedTable::from_table(&node_table);
        let m = bn.n_nodes();

        let to_bn = (0..m)
            .map(|j| {
                enc.dict(j)
                    .values()
                    .iter()
                    .map(|v| bn.domain(j).id(v).unwrap_or(UNKNOWN))
                    .collect()
            })
            .collect();

        let targets: Vec<NodeTarget> = bn
            .nodes()
            .iter()
            .map(|n| match &n.members {
                None => raw
                    .attribute_index(&n.name)
                    .map_or(NodeTarget::Detached, NodeTarget::Base),
                Some(members) => members
                    .iter()
                    .map(|mname| raw.attribute_index(mname))
                    .collect::<Result<Vec<_>>>()
                    .map_or(NodeTarget::Detached, NodeTarget::Composite),
            })
            .collect();

        let mut cleaner = Cleaner {
            raw,
            bn,
            disc,
            ucs,
            to_bn,
            targets,
            uc_value: Vec::new(),
            corr: CorrTable::empty(m, 0),
            cooc: Cooccurrence::build(&enc),
            context_nodes: Vec::new(),
            subnet_rank: Vec::new(),
            enc,
        };
        cleaner.uc_value = (0..m)
            .map(|j| {
                cleaner
                    .enc
                    .dict(j)
                    .values()
                    .iter()
                    .map(|v| cleaner.value_passes(j, v))
                    .collect()
            })
            .collect();
        cleaner.context_nodes = (0..m)
            .map(|j| {
                let mut ctx: Vec<usize> = bn
                    .parents(j)
                    .iter()
                    .chain(bn.children(j))
                    .copied()
                    .collect();
                if ctx.is_empty() {
                    ctx = (0..m).filter(|&k| k != j).collect();
                }
                ctx.sort_unstable();
                ctx.dedup();
                ctx
            })
            .collect();
        cleaner.subnet_rank = cleaner.subnetwork_ranking();
        cleaner.corr = corr_for(&cleaner.enc);
        Ok(cleaner)
    }

    pub fn n_nodes(&self) -> usize {
        self.enc.n_cols()
    }

    pub fn encoded(&self) -> &EncodedTable {
        &self.enc
    }

    pub fn corr(&self) -> &CorrTable {
        &self.corr
    }

    /// Raw-table form of a node value: bin labels become representatives.
    fn raw_value<'v>(&'v self, col: usize, value: &'v str) -> &'v str {
        let name = &self.raw.attributes()[col].name;
        match self.disc.columns.get(name) {
            Some(b) => b.representative(value).unwrap_or(value),
            None => value,
        }
    }

    fn value_passes(&self, node: usize, value: &str) -> bool {
        match &self.targets[node] {
            NodeTarget::Base(col) => self.ucs.check(*col, Some(self.raw_value(*col, value))),
            NodeTarget::Composite(cols) => {
                let parts = split_composite(value);
                parts.len() == cols.len()
                    && cols
                        .iter()
                        .zip(&parts)
                        .all(|(&c, p)| self.ucs.check(c, Some(self.raw_value(c, p))))
            }
            NodeTarget::Detached => true,
        }
    }

    /// Whether the original cell may stay as it is.
    fn original_passes(&self, row: usize, node: usize) -> bool {
        match &self.targets[node] {
            NodeTarget::Base(col) => self.ucs.check(*col, self.raw.cell(row, *col)),
            NodeTarget::Composite(cols) => cols
                .iter()
                .all(|&c| self.ucs.check(c, self.raw.cell(row, c))),
            NodeTarget::Detached => true,
        }
    }

    fn subnetwork_ranking(&self) -> Vec<Vec<ValueId>> {
        let m = self.n_nodes();
        let n = self.enc.n_rows();
        let members: Vec<Vec<usize>> = self.bn.partition().iter().map(|s| s.members()).collect();
        (0..m)
            .map(|j| {
                let dict = self.enc.dict(j);
                let mut scored: Vec<(f64, ValueId)> = dict
                    .ids()
                    .filter_map(|v| {
                        let value = dict.value(v);
                        let context = members
                            .iter()
                            .filter(|s| s.iter().any(|&a| self.enc.dict(a).id(value).is_some()))
                            .count();
                        (context > 0).then(|| (tfidf_score(context as f64, n, dict.count(v)), v))
                    })
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                scored.into_iter().map(|e| e.1).collect()
            })
            .collect()
    }

    /// `mean_{k≠j} count(T[j], T[k]) / count(T[k])` over non-null `T[k]`;
    /// 0 for a NULL cell.
    pub fn filter_score(&self, row: usize, node: usize) -> f64 {
        let Some(c) = self.enc.get(row, node) else {
            return 0.0;
        };
        let mut sum = 0.0;
        let mut terms = 0usize;
        for k in 0..self.n_nodes() {
            if k == node {
                continue;
            }
            if let Some(e) = self.enc.get(row, k) {
                sum += f64::from(self.cooc.count(node, c, k, e)) / self.enc.dict(k).count(e) as f64;
                terms += 1;
            }
        }
        if terms == 0 {
            0.0
        } else {
            sum / terms as f64
        }
    }

    /// Candidates kept by domain pruning for a cell (before constraints and
    /// before adding the original value).
    pub fn retained_candidates(
        &self,
        row: usize,
        node: usize,
        params: &CleanParams,
    ) -> Vec<ValueId> {
        if !params.use_domain_prune {
            return self.enc.dict(node).ids().collect();
        }
        let ranked = match params.prune_mode {
            PruneMode::SubNetwork => None,
            PruneMode::CellContext => self.cell_context_ranking(row, node),
        };
        let ranked = ranked.as_deref().unwrap_or(&self.subnet_rank[node]);
        ranked.iter().take(params.top_k).copied().collect()
    }

    fn cell_context_ranking(&self, row: usize, node: usize) -> Option<Vec<ValueId>> {
        let own = self.enc.get(row, node);
        let mut tf: FxHashMap<ValueId, u64> = FxHashMap::default();
        for &k in &self.context_nodes[node] {
            let Some(e) = self.enc.get(row, k) else {
                continue;
            };
            for &(v, c) in self.cooc.neighbours(node, k, e) {
                // leave the cell's own tuple out of its evidence
                let c = u64::from(c) - u64::from(own == Some(v));
                if c > 0 {
                    *tf.entry(v).or_insert(0) += c;
                }
            }
        }
        if tf.is_empty() {
            return None;
        }
        let n = self.enc.n_rows();
        let dict = self.enc.dict(node);
        let mut scored: Vec<(f64, ValueId)> = tf
            .into_iter()
            .map(|(v, t)| (tfidf_score(t as f64, n, dict.count(v)), v))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Some(scored.into_iter().map(|e| e.1).collect())
    }

    fn bn_row(&self, row: usize) -> Vec<Option<ValueId>> {
        (0..self.n_nodes())
            .map(|j| self.enc.get(row, j).map(|v| self.to_bn[j][v as usize]))
            .collect()
    }

    /// Network log scores, log compensatory weights and their sums for
    /// `candidates` (ids in the node's dictionary) of one cell.
    pub fn candidate_scores(
        &self,
        row: usize,
        node: usize,
        candidates: &[ValueId],
        partition: bool,
    ) -> CandidateScores {
        let obs = self.bn_row(row);
        let bn_cands: Vec<ValueId> = candidates
            .iter()
            .map(|&c| self.to_bn[node][c as usize])
            .collect();
        let bn = if partition {
            self.bn.local_log_scores(&obs, node, &bn_cands)
        } else {
            self.bn.full_log_scores(&obs, node, &bn_cands)
        };
        let enc_row = self.enc.row(row);
        let cs: Vec<f64> = candidates
            .iter()
            .map(|&c| self.corr.score(c, &enc_row, node))
            .collect();
        let weights = corr_to_weight(&cs);
        let total = bn.iter().zip(&weights).map(|(b, w)| b + w.ln()).collect();
        CandidateScores { bn, weights, total }
    }

    fn clean_row(&self, row: usize, params: &CleanParams) -> RowOutcome {
        let mut out = RowOutcome::default();
        for node in 0..self.n_nodes() {
            if matches!(self.targets[node], NodeTarget::Detached) {
                continue;
            }
            let orig = self.enc.get(row, node);
            let orig_ok = orig.is_some() && self.original_passes(row, node);
            if params.use_tuple_prune && orig_ok && self.filter_score(row, node) >= params.tau_clean
            {
                out.pruned += 1;
                continue;
            }
            out.inferred += 1;
            let mut cands = self.retained_candidates(row, node, params);
            cands.retain(|&c| self.uc_value[node][c as usize] && Some(c) != orig);
            if orig_ok {
                cands.extend(orig);
            }
            cands.sort_unstable();
            cands.dedup();
            if cands.is_empty() {
                out.skipped += 1;
                continue;
            }
            if orig_ok && cands.len() == 1 {
                continue;
            }
            out.evals += cands.len();
            let scores = self.candidate_scores(row, node, &cands, params.use_partition);
            let mut best: Option<usize> = if orig_ok {
                cands.iter().position(|&c| Some(c) == orig)
            } else {
                None
            };
            for (i, &c) in cands.iter().enumerate() {
                if Some(c) == orig && orig_ok {
                    continue;
                }
                match best {
                    Some(b) if scores.total[i] <= scores.total[b] + TIE_EPSILON => {}
                    _ => best = Some(i),
                }
            }
            let b = best.expect("non-empty candidate set");
            if Some(cands[b]) != orig {
                let bn_norm = normalize_log(&scores.bn);
                out.repairs.push(NodeRepair {
                    node,
                    value: cands[b],
                    bn_logp: bn_norm[b].ln(),
                    cs_weight: scores.weights[b],
                });
            }
        }
        out
    }

    /// Runs the repair pass over every cell. Parallelism follows the ambient
    /// rayon pool; the result does not depend on it.
    pub fn run(&self, params: &CleanParams) -> Result<CleanOutcome> {
        params.validate()?;
        let rows: Vec<RowOutcome> = (0..self.enc.n_rows())
            .into_par_iter()
            .map(|r| self.clean_row(r, params))
            .collect();

        let mut report = RepairReport::default();
        // composite repairs are applied after, and override, member repairs
        let mut cell: BTreeMap<(usize, usize), (String, f64, f64)> = BTreeMap::new();
        for (r, outcome) in rows.iter().enumerate() {
            report.pruned_cells += outcome.pruned;
            report.inferred_cells += outcome.inferred;
            report.skipped_cells += outcome.skipped;
            report.candidate_evals += outcome.evals;
            if outcome.skipped > 0 {
                report.warnings.push(format!(
                    "row {r}: {} cell(s) had no candidate satisfying the constraints",
                    outcome.skipped
                ));
            }
            for pass in [false, true] {
                for rep in &outcome.repairs {
                    let value = self.enc.dict(rep.node).value(rep.value);
                    match (&self.targets[rep.node], pass) {
                        (NodeTarget::Base(col), false) => {
                            cell.insert(
                                (r, *col),
                                (
                                    self.raw_value(*col, value).to_string(),
                                    rep.bn_logp,
                                    rep.cs_weight,
                                ),
                            );
                        }
                        (NodeTarget::Composite(cols), true) => {
                            for (&col, part) in cols.iter().zip(split_composite(value)) {
                                let v = self.raw_value(col, &part).to_string();
                                cell.insert((r, col), (v, rep.bn_logp, rep.cs_weight));
                            }
                        }
                        _ => {}
                    }
                }
            }
        }

        let mut out_rows = self.raw.rows().to_vec();
        for ((r, col), (new, bn_logp, cs_weight)) in cell {
            let old = self.raw.cell(r, col).map(str::to_string);
            if old.as_deref() == Some(new.as_str()) {
                continue;
            }
            out_rows[r][col] = Some(new.clone());
            report.repairs.push(Repair {
                row: r,
                attribute: self.raw.attributes()[col].name.clone(),
                old,
                new,
                bn_logp,
                cs_weight,
            });
        }
        if report.skipped_cells > 0 {
            log::warn!(
                "{} cell(s) had no candidate satisfying the constraints",
                report.skipped_cells
            );
        }
        if self.corr.is_truncated() {
            report
                .warnings
                .push("co-occurrence table was capped; compensatory scores are approximate".into());
        }
        Ok(CleanOutcome {
            table: self.raw.with_rows(out_rows)?,
            report,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CandidateScores {
    pub bn: Vec<f64>,
    pub weights: Vec<f64>,
    pub total: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct NodeRepair {
    node: usize,
    value: ValueId,
    bn_logp: f64,
    cs_weight: f64,
}

#[derive(Debug, Default)]
struct RowOutcome {
    repairs: Vec<NodeRepair>,
    pruned: usize,
    inferred: usize,
    skipped: usize,
    evals: usize,
}

/// One-shot cleaning pass.
pub fn clean(
    table: &Table,
    bn: &BayesNet,
    disc: &Discretization,
    ucs: &ConstraintSet,
    params: &CleanParams,
) -> Result<CleanOutcome> {
    params.validate()?;
    Cleaner::new(
        table,
        bn,
        disc,
        ucs,
        &params.confidence,
        params.max_corr_entries,
    )?
    .run(params)
}
