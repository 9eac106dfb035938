//! Discrete Bayesian network over table attributes.
//!
//! CPTs are stored as (pseudo-)count tables keyed by observed parent
//! configurations; probabilities are derived with additive smoothing and
//! unseen configurations fall back to the uniform row. Networks are values:
//! every edit returns a new network and refits only the CPTs it touches.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::encoded::{Dictionary, ValueId};
use crate::error::{Error, Result};
use crate::structure::SkeletonGraph;
use crate::table::{AttributeSpec, Discretization, Kind, Table};

/// Lower bound applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Id used for observed values that are not in a node's domain.
pub const UNKNOWN: ValueId = ValueId::MAX;

/// Separator between member values of a composite (merged) attribute.
pub const COMPOSITE_SEPARATOR: char = '\u{1f}';

pub const DEFAULT_ALPHA: f64 = 1.0;

fn floor_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq)]
struct CptRow {
    /// Sparse counts sorted by value id.
    counts: Vec<(ValueId, f64)>,
    total: f64,
}

impl CptRow {
    fn count(&self, v: ValueId) -> f64 {
        match self.counts.binary_search_by_key(&v, |e| e.0) {
            Ok(i) => self.counts[i].1,
            Err(_) => 0.0,
        }
    }
}

/// Conditional probability table of one node given its ordered parents.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    child: usize,
    parents: Vec<usize>,
    card: usize,
    alpha: f64,
    rows: FxHashMap<Vec<ValueId>, CptRow>,
}

impl Cpt {
    /// Builds a CPT from explicit per-configuration weights (dense over the
    /// child domain). Weights are pseudo-counts; `alpha` is added on lookup.
    pub fn from_weights(
        child: usize,
        parents: Vec<usize>,
        card: usize,
        alpha: f64,
        rows: impl IntoIterator<Item = (Vec<ValueId>, Vec<f64>)>,
    ) -> Self {
        let rows = rows
            .into_iter()
            .map(|(cfg, w)| {
                let counts: Vec<(ValueId, f64)> = w
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| **x != 0.0)
                    .map(|(i, x)| (i as ValueId, *x))
                    .collect();
                let total = w.iter().sum();
                (cfg, CptRow { counts, total })
            })
            .collect();
        Cpt {
            child,
            parents,
            card,
            alpha,
            rows,
        }
    }

    pub fn child(&self) -> usize {
        self.child
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn card(&self) -> usize {
        self.card
    }

    pub fn n_configs(&self) -> usize {
        self.rows.len()
    }

    pub fn configs(&self) -> impl Iterator<Item = &Vec<ValueId>> {
        self.rows.keys()
    }

    /// `P(child = value | parents = config)`; 0 for out-of-domain values.
    pub fn prob(&self, value: ValueId, config: &[ValueId]) -> f64 {
        if value as usize >= self.card {
            return 0.0;
        }
        match self.rows.get(config) {
            None => 1.0 / self.card as f64,
            Some(row) => {
                let denom = row.total + self.alpha * self.card as f64;
                if denom == 0.0 {
                    1.0 / self.card as f64
                } else {
                    (row.count(value) + self.alpha) / denom
                }
            }
        }
    }

    pub fn row(&self, config: &[ValueId]) -> Vec<f64> {
        (0..self.card as ValueId)
            .map(|v| self.prob(v, config))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    /// Member attributes of a composite node created by merging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<String>>,
}

impl NodeSpec {
    pub fn attribute(name: impl Into<String>) -> Self {
        NodeSpec {
            name: name.into(),
            members: None,
        }
    }
}

/// A node, its one-hop parents and its one-hop children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubNetwork {
    pub center: usize,
    pub parents: Vec<usize>,
    pub children: Vec<usize>,
}

impl SubNetwork {
    pub fn members(&self) -> Vec<usize> {
        let mut m: Vec<usize> = self.parents.iter().chain(&self.children).copied().collect();
        m.push(self.center);
        m.sort_unstable();
        m.dedup();
        m
    }

    pub fn is_isolated(&self) -> bool {
        self.parents.is_empty() && self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesNet {
    nodes: Vec<NodeSpec>,
    domains: Vec<Dictionary>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    cpts: Vec<Cpt>,
    alpha: f64,
}

/// Escapes a member value so the separator only ever appears between members.
fn escape_member(v: &str) -> String {
    v.replace('\\', "\\\\").replace(COMPOSITE_SEPARATOR, "\\u")
}

fn unescape_member(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('u') => out.push(COMPOSITE_SEPARATOR),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Composite value of member cells; NULL if any member is NULL.
pub fn composite_value(members: &[Option<&str>]) -> Option<String> {
    let parts: Option<Vec<String>> = members.iter().map(|m| m.map(escape_member)).collect();
    parts.map(|p| p.join(&COMPOSITE_SEPARATOR.to_string()))
}

pub fn split_composite(value: &str) -> Vec<String> {
    value
        .split(COMPOSITE_SEPARATOR)
        .map(unescape_member)
        .collect()
}

fn topo_order(n: usize, parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = ready.pop() {
        order.push(u);
        for &c in &children[u] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.push(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

fn children_of(parents: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut ch = vec![Vec::new(); parents.len()];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            ch[p].push(c);
        }
    }
    ch
}

impl BayesNet {
    /// Assembles a network from explicit parts; validates shape and acyclicity.
    pub fn from_parts(
        nodes: Vec<NodeSpec>,
        domains: Vec<Dictionary>,
        edges: &[(usize, usize)],
        cpts: Vec<Cpt>,
        alpha: f64,
    ) -> Result<Self> {
        let n = nodes.len();
        if domains.len() != n || cpts.len() != n {
            return Err(Error::InvalidModel(
                "nodes, domains and CPTs differ in length".into(),
            ));
        }
        let mut parents = vec![Vec::new(); n];
        for &(p, c) in edges {
            if p >= n || c >= n || p == c {
                return Err(Error::InvalidModel(format!("bad edge ({p}, {c})")));
            }
            parents[c].push(p);
        }
        for ps in &mut parents {
            ps.sort_unstable();
            ps.dedup();
        }
        if topo_order(n, &parents).is_none() {
            return Err(Error::InvalidModel("edge set has a cycle".into()));
        }
        for (i, cpt) in cpts.iter().enumerate() {
            if cpt.child != i || cpt.parents != parents[i] || cpt.card != domains[i].len() {
                return Err(Error::InvalidModel(format!(
                    "CPT of node {i} does not match the graph"
                )));
            }
        }
        let children = children_of(&parents);
        Ok(BayesNet {
            nodes,
            domains,
            parents,
            children,
            cpts,
            alpha,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node_names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn node_index(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn domain(&self, node: usize) -> &Dictionary {
        &self.domains[node]
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn cpt(&self, node: usize) -> &Cpt {
        &self.cpts[node]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.parents[child].contains(&parent)
    }

    pub fn is_isolated(&self, node: usize) -> bool {
        self.parents[node].is_empty() && self.children[node].is_empty()
    }

    /// Learns CPTs for the skeleton's structure from `table`.
    pub fn fit(table: &Table, skeleton: &SkeletonGraph, alpha: f64) -> Result<Self> {
        let nodes: Vec<NodeSpec> = table
            .attribute_names()
            .into_iter()
            .map(NodeSpec::attribute)
            .collect();
        let mut edges = Vec::with_capacity(skeleton.edges.len());
        for e in &skeleton.edges {
            edges.push((
                table.attribute_index(&e.from)?,
                table.attribute_index(&e.to)?,
            ));
        }
        Self::fit_structure(table, nodes, &edges, alpha)
    }

    /// Learns CPTs for an explicit node list (composites allowed) and edge set.
    pub fn fit_structure(
        table: &Table,
        nodes: Vec<NodeSpec>,
        edges: &[(usize, usize)],
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must be >= 0, got {alpha}"
            )));
        }
        let n = nodes.len();
        let mut parents = vec![Vec::new(); n];
        for &(p, c) in edges {
            if p >= n || c >= n || p == c {
                return Err(Error::InvalidModel(format!("bad edge ({p}, {c})")));
            }
            parents[c].push(p);
        }
        for ps in &mut parents {
            ps.sort_unstable();
            ps.dedup();
        }
        if topo_order(n, &parents).is_none() {
            return Err(Error::InvalidModel("skeleton has a cycle".into()));
        }
        let raw = node_columns(table, &nodes)?;
        let mut domains = Vec::with_capacity(n);
        for (node, col) in nodes.iter().zip(&raw) {
            let d = Dictionary::from_values(col.iter().flatten().cloned());
            if d.is_empty() {
                return Err(Error::EmptyDomain(node.name.clone()));
            }
            domains.push(d);
        }
        let encoded = encode_columns(&raw, &domains);
        let cpts = (0..n)
            .map(|i| fit_cpt(i, &parents[i], &encoded, domains[i].len(), alpha))
            .collect();
        let children = children_of(&parents);
        Ok(BayesNet {
            nodes,
            domains,
            parents,
            children,
            cpts,
            alpha,
        })
    }

    /// One column per node (composites assembled from their members), in
    /// node order.
    pub fn node_table(&self, table: &Table) -> Result<Table> {
        let raw = node_columns(table, &self.nodes)?;
        let attrs = self
            .nodes
            .iter()
            .map(|n| {
                let kind = match (&n.members, table.attribute_index(&n.name)) {
                    (None, Ok(j)) => table.attributes()[j].kind,
                    _ => Kind::Categorical,
                };
                AttributeSpec::new(n.name.clone(), kind)
            })
            .collect();
        let rows = (0..table.n_rows())
            .map(|r| raw.iter().map(|col| col[r].clone()).collect())
            .collect();
        Table::new(table.name.clone(), attrs, rows)
    }

    /// Values of every node for every row of `table`, as ids in the
    /// network's domains. NULL stays `None`; unseen values map to [`UNKNOWN`].
    pub fn encode(&self, table: &Table) -> Result<Vec<Vec<Option<ValueId>>>> {
        let raw = node_columns(table, &self.nodes)?;
        Ok(encode_columns(&raw, &self.domains))
    }

    fn factor_ln(
        &self,
        node: usize,
        obs: &[Option<ValueId>],
        cfg: &mut Vec<ValueId>,
    ) -> Option<f64> {
        let v = obs[node]?;
        if v == UNKNOWN {
            return None;
        }
        cfg.clear();
        for &p in &self.parents[node] {
            cfg.push(obs[p]?);
        }
        Some(floor_ln(self.cpts[node].prob(v, cfg)))
    }

    /// The target's own factor: an unknown candidate hits the floor rather
    /// than being skipped like unknown evidence.
    fn target_factor_ln(
        &self,
        target: usize,
        obs: &[Option<ValueId>],
        cfg: &mut Vec<ValueId>,
    ) -> f64 {
        if obs[target] == Some(UNKNOWN) {
            return PROB_FLOOR.ln();
        }
        self.factor_ln(target, obs, cfg).unwrap_or(0.0)
    }

    /// `log P(assignment)` as the sum of every node's CPT lookup.
    /// Out-of-domain values hit the probability floor.
    pub fn joint_log_prob(&self, assignment: &[ValueId]) -> f64 {
        let mut cfg = Vec::new();
        let mut total = 0.0;
        for node in 0..self.n_nodes() {
            cfg.clear();
            cfg.extend(self.parents[node].iter().map(|&p| assignment[p]));
            total += floor_ln(self.cpts[node].prob(assignment[node], &cfg));
        }
        total
    }

    /// Unnormalized log scores of `candidates` for `target` using only the
    /// target's own CPT and its children's CPTs (co-parents read from `obs`).
    ///
    /// Factors touching a NULL (or, for child values, unknown) observation are
    /// skipped. Isolated targets score uniformly.
    pub fn local_log_scores(
        &self,
        obs: &[Option<ValueId>],
        target: usize,
        candidates: &[ValueId],
    ) -> Vec<f64> {
        if self.is_isolated(target) {
            return vec![0.0; candidates.len()];
        }
        let mut work = obs.to_vec();
        let mut cfg = Vec::new();
        candidates
            .iter()
            .map(|&c| {
                work[target] = Some(c);
                let mut s = self.target_factor_ln(target, &work, &mut cfg);
                for &ch in &self.children[target] {
                    s += self.factor_ln(ch, &work, &mut cfg).unwrap_or(0.0);
                }
                s
            })
            .collect()
    }

    /// Same contract as [`local_log_scores`](Self::local_log_scores) but sums
    /// the factors of every node in the network.
    pub fn full_log_scores(
        &self,
        obs: &[Option<ValueId>],
        target: usize,
        candidates: &[ValueId],
    ) -> Vec<f64> {
        if self.is_isolated(target) {
            return vec![0.0; candidates.len()];
        }
        let mut work = obs.to_vec();
        let mut cfg = Vec::new();
        candidates
            .iter()
            .map(|&c| {
                work[target] = Some(c);
                (0..self.n_nodes())
                    .map(|node| {
                        if node == target {
                            self.target_factor_ln(target, &work, &mut cfg)
                        } else {
                            self.factor_ln(node, &work, &mut cfg).unwrap_or(0.0)
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// `P(target | observed parents, children and co-parents)` over the
    /// target's whole domain.
    pub fn markov_conditional(&self, obs: &[Option<ValueId>], target: usize) -> Vec<f64> {
        let cands: Vec<ValueId> = self.domains[target].ids().collect();
        normalize_log(&self.local_log_scores(obs, target, &cands))
    }

    /// One sub-network per node: the node with its one-hop parents and children.
    pub fn partition(&self) -> Vec<SubNetwork> {
        (0..self.n_nodes())
            .map(|i| SubNetwork {
                center: i,
                parents: self.parents[i].clone(),
                children: self.children[i].clone(),
            })
            .collect()
    }

    fn refit_nodes(
        &self,
        table: &Table,
        parents: Vec<Vec<usize>>,
        touched: &[usize],
    ) -> Result<Self> {
        if topo_order(self.n_nodes(), &parents).is_none() {
            return Err(Error::InvalidModel("edit produced a cycle".into()));
        }
        let encoded = self.encode(table)?;
        let mut cpts = self.cpts.clone();
        for &i in touched {
            cpts[i] = fit_cpt(i, &parents[i], &encoded, self.domains[i].len(), self.alpha);
        }
        let children = children_of(&parents);
        Ok(BayesNet {
            nodes: self.nodes.clone(),
            domains: self.domains.clone(),
            parents,
            children,
            cpts,
            alpha: self.alpha,
        })
    }

    /// Adds `parent -> child` and refits the child's CPT only.
    pub fn add_edge(&self, table: &Table, parent: &str, child: &str) -> Result<Self> {
        let (p, c) = (self.node_index(parent)?, self.node_index(child)?);
        if self.has_edge(p, c) {
            return Ok(self.clone());
        }
        let mut parents = self.parents.clone();
        parents[c].push(p);
        parents[c].sort_unstable();
        if p == c || topo_order(self.n_nodes(), &parents).is_none() {
            return Err(Error::Cycle {
                parent: parent.into(),
                child: child.into(),
            });
        }
        self.refit_nodes(table, parents, &[c])
    }

    /// Removes `parent -> child` and refits the child's CPT only.
    pub fn remove_edge(&self, table: &Table, parent: &str, child: &str) -> Result<Self> {
        let (p, c) = (self.node_index(parent)?, self.node_index(child)?);
        if !self.has_edge(p, c) {
            return Err(Error::MissingEdge {
                parent: parent.into(),
                child: child.into(),
            });
        }
        let mut parents = self.parents.clone();
        parents[c].retain(|&x| x != p);
        self.refit_nodes(table, parents, &[c])
    }

    /// Merges `names` into one composite node.
    ///
    /// An edge from (to) node `X` that every merged node shares becomes a
    /// single edge from (to) the composite; all other edges incident to the
    /// merged nodes are dropped. The merged nodes stay in the network,
    /// isolated. Returns the new network and `table` with the composite
    /// column appended.
    pub fn merge_nodes(&self, table: &Table, names: &[String]) -> Result<(Self, Table)> {
        if names.len() < 2 {
            return Err(Error::InvalidParam("merge needs at least two nodes".into()));
        }
        let mut members = Vec::with_capacity(names.len());
        for n in names {
            let i = self.node_index(n)?;
            if members.contains(&i) {
                return Err(Error::InvalidParam(format!(
                    "node `{n}` listed twice in merge"
                )));
            }
            members.push(i);
        }
        let name = names.join("⊕");
        if self.node_index(&name).is_ok() {
            return Err(Error::InvalidParam(format!("node `{name}` already exists")));
        }
        let n = self.n_nodes();
        let composite = n;
        let shared_parents: Vec<usize> = (0..n)
            .filter(|x| {
                !members.contains(x) && members.iter().all(|&m| self.parents[m].contains(x))
            })
            .collect();
        let shared_children: Vec<usize> = (0..n)
            .filter(|x| {
                !members.contains(x) && members.iter().all(|&m| self.parents[*x].contains(&m))
            })
            .collect();

        let mut parents = self.parents.clone();
        let mut touched: Vec<usize> = members.clone();
        for (c, ps) in parents.iter_mut().enumerate() {
            if members.contains(&c) {
                ps.clear();
            } else if ps.iter().any(|p| members.contains(p)) {
                ps.retain(|p| !members.contains(p));
                touched.push(c);
            }
        }
        let mut comp_parents = shared_parents;
        comp_parents.sort_unstable();
        parents.push(comp_parents);
        for &c in &shared_children {
            parents[c].push(composite);
            parents[c].sort_unstable();
        }
        touched.push(composite);
        if topo_order(n + 1, &parents).is_none() {
            return Err(Error::Cycle {
                parent: name.clone(),
                child: name,
            });
        }

        // merging a composite flattens it into its base attributes
        let member_names: Vec<String> = members
            .iter()
            .flat_map(|&m| match &self.nodes[m].members {
                Some(inner) => inner.clone(),
                None => vec![self.nodes[m].name.clone()],
            })
            .collect();
        let spec = NodeSpec {
            name: name.clone(),
            members: Some(member_names),
        };
        let mut nodes = self.nodes.clone();
        nodes.push(spec);
        let raw = node_columns(table, &nodes)?;
        let comp_domain = Dictionary::from_values(raw[composite].iter().flatten().cloned());
        if comp_domain.is_empty() {
            return Err(Error::EmptyDomain(name));
        }
        let mut domains = self.domains.clone();
        domains.push(comp_domain);
        let encoded = encode_columns(&raw, &domains);
        let mut cpts = self.cpts.clone();
        cpts.push(Cpt::from_weights(
            composite,
            Vec::new(),
            1,
            self.alpha,
            Vec::new(),
        ));
        touched.sort_unstable();
        touched.dedup();
        for &i in &touched {
            cpts[i] = fit_cpt(i, &parents[i], &encoded, domains[i].len(), self.alpha);
        }
        let children = children_of(&parents);
        let net = BayesNet {
            nodes,
            domains,
            parents,
            children,
            cpts,
            alpha: self.alpha,
        };
        let out = net.with_composites(table)?;
        Ok((net, out))
    }

    /// Appends a column for every composite node not already in `table`.
    pub fn with_composites(&self, table: &Table) -> Result<Table> {
        let mut attrs = table.attributes().to_vec();
        let mut rows: Vec<_> = table.rows().to_vec();
        for node in &self.nodes {
            let Some(members) = &node.members else {
                continue;
            };
            if table.attribute_index(&node.name).is_ok() {
                continue;
            }
            let idx: Vec<usize> = members
                .iter()
                .map(|m| table.attribute_index(m))
                .collect::<Result<_>>()?;
            for (r, row) in rows.iter_mut().enumerate() {
                let cells: Vec<Option<&str>> = idx.iter().map(|&j| table.cell(r, j)).collect();
                row.push(composite_value(&cells));
            }
            attrs.push(AttributeSpec::new(node.name.clone(), Kind::Categorical));
        }
        Table::new(table.name.clone(), attrs, rows)
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph bn {\n");
        for n in &self.nodes {
            let shape = if n.members.is_some() {
                "box"
            } else {
                "ellipse"
            };
            let _ = writeln!(s, "  \"{}\" [shape={shape}];", n.name.replace('"', "\\\""));
        }
        for (p, c) in self.edges() {
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\";",
                self.nodes[p].name.replace('"', "\\\""),
                self.nodes[c].name.replace('"', "\\\"")
            );
        }
        s.push_str("}\n");
        s
    }

    pub fn to_model_file(&self, discretization: &Discretization) -> ModelFile {
        let names = self.node_names();
        let cpts = self
            .cpts
            .iter()
            .enumerate()
            .map(|(i, cpt)| {
                let mut rows: Vec<CptRowFile> = cpt
                    .rows
                    .iter()
                    .map(|(cfg, row)| CptRowFile {
                        config: cfg
                            .iter()
                            .zip(&cpt.parents)
                            .map(|(&v, &p)| self.domains[p].value(v).to_string())
                            .collect(),
                        counts: row
                            .counts
                            .iter()
                            .map(|&(v, c)| (self.domains[i].value(v).to_string(), c))
                            .collect(),
                    })
                    .collect();
                rows.sort_by(|a, b| a.config.cmp(&b.config));
                CptFile {
                    node: names[i].clone(),
                    parents: cpt.parents.iter().map(|&p| names[p].clone()).collect(),
                    domain: self.domains[i].values().to_vec(),
                    rows,
                }
            })
            .collect();
        ModelFile {
            manifest: None,
            nodes: self.nodes.clone(),
            edges: self
                .edges()
                .into_iter()
                .map(|(p, c)| EdgeSpec {
                    parent: names[p].clone(),
                    child: names[c].clone(),
                })
                .collect(),
            alpha: self.alpha,
            discretization: discretization.clone(),
            cpts,
        }
    }

    pub fn from_model_file(model: &ModelFile) -> Result<Self> {
        let names: Vec<String> = model.nodes.iter().map(|n| n.name.clone()).collect();
        let index = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::InvalidModel(format!("unknown node `{n}`")))
        };
        let mut edges = Vec::new();
        for e in &model.edges {
            edges.push((index(&e.parent)?, index(&e.child)?));
        }
        let mut by_node: Vec<Option<&CptFile>> = vec![None; names.len()];
        for c in &model.cpts {
            by_node[index(&c.node)?] = Some(c);
        }
        let domains: Vec<Dictionary> = by_node
            .iter()
            .zip(&names)
            .map(|(c, n)| {
                c.map(|c| Dictionary::from_values(c.domain.iter().cloned()))
                    .ok_or_else(|| Error::InvalidModel(format!("missing CPT for `{n}`")))
            })
            .collect::<Result<_>>()?;
        let mut cpts = Vec::with_capacity(names.len());
        for (i, file) in by_node.iter().enumerate() {
            let file = file.expect("checked above");
            let parents: Vec<usize> = file
                .parents
                .iter()
                .map(|p| index(p))
                .collect::<Result<_>>()?;
            let mut rows = FxHashMap::default();
            for r in &file.rows {
                if r.config.len() != parents.len() {
                    return Err(Error::InvalidModel(format!(
                        "CPT row arity mismatch for `{}`",
                        file.node
                    )));
                }
                let cfg: Vec<ValueId> = r
                    .config
                    .iter()
                    .zip(&parents)
                    .map(|(v, &p)| {
                        domains[p].id(v).ok_or_else(|| {
                            Error::InvalidModel(format!(
                                "value `{v}` not in domain of `{}`",
                                names[p]
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                let mut counts: Vec<(ValueId, f64)> = r
                    .counts
                    .iter()
                    .map(|(v, c)| {
                        domains[i].id(v).map(|id| (id, *c)).ok_or_else(|| {
                            Error::InvalidModel(format!(
                                "value `{v}` not in domain of `{}`",
                                names[i]
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                counts.sort_by_key(|e| e.0);
                let total = counts.iter().map(|e| e.1).sum();
                rows.insert(cfg, CptRow { counts, total });
            }
            let mut sorted_parents = parents.clone();
            sorted_parents.sort_unstable();
            if sorted_parents != parents {
                return Err(Error::InvalidModel(format!(
                    "parents of `{}` are not in node order",
                    file.node
                )));
            }
            cpts.push(Cpt {
                child: i,
                parents,
                card: domains[i].len(),
                alpha: model.alpha,
                rows,
            });
        }
        BayesNet::from_parts(model.nodes.clone(), domains, &edges, cpts, model.alpha)
    }
}

/// Softmax of log scores.
pub fn normalize_log(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Raw string columns for every node; composites are assembled from members.
fn node_columns(table: &Table, nodes: &[NodeSpec]) -> Result<Vec<Vec<Option<String>>>> {
    nodes
        .iter()
        .map(|node| match &node.members {
            None => {
                let j = table.attribute_index(&node.name)?;
                Ok(table.column(j).map(|v| v.map(str::to_string)).collect())
            }
            Some(members) => {
                if let Ok(j) = table.attribute_index(&node.name) {
                    return Ok(table.column(j).map(|v| v.map(str::to_string)).collect());
                }
                let idx: Vec<usize> = members
                    .iter()
                    .map(|m| table.attribute_index(m))
                    .collect::<Result<_>>()?;
                Ok((0..table.n_rows())
                    .map(|r| {
                        let cells: Vec<Option<&str>> =
                            idx.iter().map(|&j| table.cell(r, j)).collect();
                        composite_value(&cells)
                    })
                    .collect())
            }
        })
        .collect()
}

fn encode_columns(
    raw: &[Vec<Option<String>>],
    domains: &[Dictionary],
) -> Vec<Vec<Option<ValueId>>> {
    raw.iter()
        .zip(domains)
        .map(|(col, d)| {
            col.iter()
                .map(|v| v.as_deref().map(|v| d.id(v).unwrap_or(UNKNOWN)))
                .collect()
        })
        .collect()
}

/// Counts child values per observed parent configuration. Rows with a NULL
/// or unknown value in the child or any parent do not contribute.
fn fit_cpt(
    child: usize,
    parents: &[usize],
    encoded: &[Vec<Option<ValueId>>],
    card: usize,
    alpha: f64,
) -> Cpt {
    let n_rows = encoded.first().map_or(0, Vec::len);
    let mut counts: FxHashMap<Vec<ValueId>, BTreeMap<ValueId, f64>> = FxHashMap::default();
    'rows: for r in 0..n_rows {
        let Some(v) = encoded[child][r] else { continue };
        if v == UNKNOWN {
            continue;
        }
        let mut cfg = Vec::with_capacity(parents.len());
        for &p in parents {
            match encoded[p][r] {
                Some(x) if x != UNKNOWN => cfg.push(x),
                _ => continue 'rows,
            }
        }
        *counts.entry(cfg).or_default().entry(v).or_insert(0.0) += 1.0;
    }
    let rows = counts
        .into_iter()
        .map(|(cfg, m)| {
            let counts: Vec<(ValueId, f64)> = m.into_iter().collect();
            let total = counts.iter().map(|e| e.1).sum();
            (cfg, CptRow { counts, total })
        })
        .collect();
    Cpt {
        child,
        parents: parents.to_vec(),
        card,
        alpha,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub parent: String,
    pub child: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptRowFile {
    /// Parent values, in the order of `CptFile::parents`.
    pub config: Vec<String>,
    /// Non-zero child counts for this configuration.
    pub counts: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptFile {
    pub node: String,
    pub parents: Vec<String>,
    pub domain: Vec<String>,
    pub rows: Vec<CptRowFile>,
}

/// On-disk model: structure, smoothing, discretization sidecar and sparse
/// count tables (observed parent configurations only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<crate::manifest::Manifest>,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    pub alpha: f64,
    #[serde(default)]
    pub discretization: Discretization,
    pub cpts: Vec<CptFile>,
}

/// One step of an edit script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    AddEdge { parent: String, child: String },
    RemoveEdge { parent: String, child: String },
    Merge { nodes: Vec<String> },
}

/// Applies edits in order. Failures carry the zero-based index of the step.
pub fn apply_edits(bn: &BayesNet, table: &Table, edits: &[EditOp]) -> Result<BayesNet> {
    let mut cur = bn.clone();
    for (step, op) in edits.iter().enumerate() {
        let res = match op {
            EditOp::AddEdge { parent, child } => cur.add_edge(table, parent, child),
            EditOp::RemoveEdge { parent, child } => cur.remove_edge(table, parent, child),
            EditOp::Merge { nodes } => cur.merge_nodes(table, nodes).map(|(b, _)| b),
        };
        cur = res.map_err(|e| Error::EditStep {
            step,
            source: Box::new(e),
        })?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::WeightedEdge;

    fn skel(nodes: &[&str], edges: &[(&str, &str)]) -> SkeletonGraph {
        SkeletonGraph {
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            edges: edges
                .iter()
                .map(|(a, b)| WeightedEdge {
                    from: a.to_string(),
                    to: b.to_string(),
                    weight: 1.0,
                })
                .collect(),
            omega: vec![1.0; nodes.len()],
        }
    }

    fn fd_table() -> Table {
        Table::from_literals(
            &["A", "B"],
            &[
                &["a1", "b1"],
                &["a1", "b1"],
                &["a2", "b2"],
                &["a3", "b2"],
                &["a3", "b2"],
            ],
        )
        .unwrap()
    }

    #[test]
    fn exact_fd_unsmoothed_rows_are_one_hot() {
        let bn = BayesNet::fit(&fd_table(), &skel(&["A", "B"], &[("A", "B")]), 0.0).unwrap();
        let cpt = bn.cpt(1);
        assert_eq!(cpt.n_configs(), 3);
        for cfg in cpt.configs() {
            let row = cpt.row(cfg);
            assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), row.len() - 1);
        }
    }

    #[test]
    fn laplace_marginal() {
        let t = Table::from_literals(&["X"], &[&["a"], &["a"], &["a"], &["b"]]).unwrap();
        let bn = BayesNet::fit(&t, &skel(&["X"], &[]), 1.0).unwrap();
        let row = bn.cpt(0).row(&[]);
        assert!((row[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((row[1] - 2.0 / 6.0).abs() < 1e-12);
        assert!((bn.joint_log_prob(&[0]) - (4.0f64 / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn unseen_parent_configuration_is_uniform() {
        let t = Table::from_literals(
            &["A", "B"],
            &[&["a1", "b1"], &["a1", "b2"], &["a2", "b3"], &["", "b4"]],
        )
        .unwrap();
        let bn = BayesNet::fit(&t, &skel(&["A", "B"], &[("A", "B")]), 1.0).unwrap();
        assert_eq!(bn.cpt(1).row(&[UNKNOWN]), vec![0.25; 4]);
    }

    #[test]
    fn empty_domain_is_an_error() {
        let t = Table::from_literals(&["A", "B"], &[&["a", ""]]).unwrap();
        assert!(matches!(
            BayesNet::fit(&t, &skel(&["A", "B"], &[]), 1.0),
            Err(Error::EmptyDomain(_))
        ));
    }

    #[test]
    fn chain_consistent_tuple_has_near_zero_log_prob() {
        let t = Table::from_literals(&["A", "B"], &[&["a", "b"][..]; 50]).unwrap();
        let bn = BayesNet::fit(&t, &skel(&["A", "B"], &[("A", "B")]), 1e-6).unwrap();
        assert!(bn.joint_log_prob(&[0, 0]).abs() < 1e-6);
    }

    fn two_node() -> BayesNet {
        let nodes = vec![NodeSpec::attribute("A"), NodeSpec::attribute("B")];
        let domains = vec![
            Dictionary::from_values(["a1", "a2"]),
            Dictionary::from_values(["b1", "b2"]),
        ];
        let cpts = vec![
            Cpt::from_weights(0, vec![], 2, 0.0, [(vec![], vec![0.5, 0.5])]),
            Cpt::from_weights(
                1,
                vec![0],
                2,
                0.0,
                [(vec![0], vec![0.9, 0.1]), (vec![1], vec![0.2, 0.8])],
            ),
        ];
        BayesNet::from_parts(nodes, domains, &[(0, 1)], cpts, 0.0).unwrap()
    }

    #[test]
    fn two_node_posterior_by_bayes_rule() {
        let bn = two_node();
        let p = bn.markov_conditional(&[None, Some(0)], 0);
        assert!((p[0] - 0.9 / 1.1).abs() < 1e-12);
        assert!((p[0] - 0.818).abs() < 1e-3);
    }

    #[test]
    fn isolated_target_is_uniform() {
        let t = Table::from_literals(&["X"], &[&["a"], &["a"], &["b"], &["c"]]).unwrap();
        let bn = BayesNet::fit(&t, &skel(&["X"], &[]), 1.0).unwrap();
        let p = bn.markov_conditional(&[Some(0)], 0);
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn null_evidence_skips_factor() {
        let bn = two_node();
        let p = bn.markov_conditional(&[None, None], 0);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    fn abc() -> Table {
        Table::from_literals(
            &["A", "B", "C"],
            &[
                &["a1", "b1", "c1"],
                &["a2", "b1", "c2"],
                &["a1", "b2", "c1"],
                &["a2", "b2", "c2"],
            ],
        )
        .unwrap()
    }

    #[test]
    fn partition_definitions() {
        let chain = BayesNet::fit(
            &abc(),
            &skel(&["A", "B", "C"], &[("A", "B"), ("B", "C")]),
            1.0,
        )
        .unwrap();
        let parts = chain.partition();
        assert_eq!(parts[1].members(), vec![0, 1, 2]);
        assert_eq!(parts[0].members(), vec![0, 1]);

        let collider = BayesNet::fit(
            &abc(),
            &skel(&["A", "B", "C"], &[("A", "C"), ("B", "C")]),
            1.0,
        )
        .unwrap();
        assert_eq!(collider.partition()[0].members(), vec![0, 2]);

        let none = BayesNet::fit(&abc(), &skel(&["A", "B", "C"], &[]), 1.0).unwrap();
        assert!(none
            .partition()
            .iter()
            .all(|s| s.members() == vec![s.center]));
    }

    #[test]
    fn add_then_remove_restores_network() {
        let t = abc();
        let base = BayesNet::fit(&t, &skel(&["A", "B", "C"], &[("A", "C")]), 1.0).unwrap();
        let added = base.add_edge(&t, "B", "C").unwrap();
        assert!(added.has_edge(1, 2));
        assert_eq!(added.cpt(0), base.cpt(0));
        assert_eq!(added.cpt(1), base.cpt(1));
        let back = added.remove_edge(&t, "B", "C").unwrap();
        assert_eq!(back, base);
    }

    #[test]
    fn edit_errors() {
        let t = abc();
        let bn = BayesNet::fit(&t, &skel(&["A", "B", "C"], &[("A", "B")]), 1.0).unwrap();
        assert!(matches!(
            bn.add_edge(&t, "B", "A"),
            Err(Error::Cycle { .. })
        ));
        assert!(matches!(
            bn.remove_edge(&t, "B", "C"),
            Err(Error::MissingEdge { .. })
        ));
        let script = vec![
            EditOp::AddEdge {
                parent: "B".into(),
                child: "C".into(),
            },
            EditOp::AddEdge {
                parent: "C".into(),
                child: "A".into(),
            },
        ];
        match apply_edits(&bn, &t, &script) {
            Err(Error::EditStep { step, source }) => {
                assert_eq!(step, 1);
                assert!(matches!(*source, Error::Cycle { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn merge_with_shared_child() {
        let t = Table::from_literals(
            &["Jobid", "ZipCode", "InsuranceCode", "Name"],
            &[
                &["j1", "z1", "i1", "n1"],
                &["j1", "z1", "i1", "n2"],
                &["j2", "z2", "i2", "n1"],
                &["j2", "z1", "i3", "n3"],
            ],
        )
        .unwrap();
        let bn = BayesNet::fit(
            &t,
            &skel(
                &["Jobid", "ZipCode", "InsuranceCode", "Name"],
                &[
                    ("Jobid", "InsuranceCode"),
                    ("ZipCode", "InsuranceCode"),
                    ("Name", "Jobid"),
                ],
            ),
            1.0,
        )
        .unwrap();
        let (merged, table) = bn
            .merge_nodes(&t, &["Jobid".into(), "ZipCode".into()])
            .unwrap();
        let comp = merged.node_index("Jobid⊕ZipCode").unwrap();
        assert_eq!(merged.edges(), vec![(comp, 2)]);
        assert_eq!(table.n_cols(), 5);
        assert!(merged.domain(comp).len() <= bn.domain(0).len() * bn.domain(1).len());
        assert_eq!(merged.cpt(2).parents(), &[comp]);
        assert_eq!(merged.cpt(3), bn.cpt(3));
        let v = table.cell(0, 4).unwrap();
        assert_eq!(split_composite(v), vec!["j1", "z1"]);
    }

    #[test]
    fn merge_isolated_nodes() {
        let t = abc();
        let bn = BayesNet::fit(&t, &skel(&["A", "B", "C"], &[]), 1.0).unwrap();
        let (merged, _) = bn.merge_nodes(&t, &["A".into(), "B".into()]).unwrap();
        assert_eq!(merged.n_nodes(), 4);
        assert!(merged.edges().is_empty());
        assert!(merged.is_isolated(3));
    }

    #[test]
    fn separator_is_escaped() {
        let raw = format!("x{COMPOSITE_SEPARATOR}y");
        let v = composite_value(&[Some(raw.as_str()), Some("z\\")]).unwrap();
        assert_eq!(v.matches(COMPOSITE_SEPARATOR).count(), 1);
        assert_eq!(split_composite(&v), vec![raw, "z\\".to_string()]);
        assert_eq!(composite_value(&[Some("a"), None]), None);
    }

    #[test]
    fn model_file_round_trip() {
        let t = abc();
        let bn =
            BayesNet::fit(&t, &skel(&["A", "B", "C"], &[("A", "C"), ("B", "C")]), 1.0).unwrap();
        let file = bn.to_model_file(&Discretization::default());
        let json = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        assert_eq!(BayesNet::from_model_file(&back).unwrap(), bn);
    }
}
