//! Skeleton learning from similarity features.
//!
//! Features are treated as Gaussian observations. A sparse precision matrix
//! is estimated with the graphical lasso, factored as
//! `Θ = (I - B) Ω (I - B)ᵀ` under a variable ordering, and the
//! autoregression matrix `B` is thresholded into directed edges.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{adjacent_pair_features, PairFeatureMatrix};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(pub DMatrix<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix(pub DMatrix<f64>);

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

impl PrecisionMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Centered (maximum-likelihood) sample covariance plus `ridge · I`.
///
/// Constant feature columns are kept; their indices are returned so callers
/// can report them.
pub fn empirical_covariance(
    features: &PairFeatureMatrix,
    ridge: f64,
) -> Result<(CovarianceMatrix, Vec<usize>)> {
    let (n, m) = (features.n_rows(), features.n_cols());
    if n < 2 {
        return Err(Error::InvalidParam("need at least two feature rows".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let mut mean = vec![0.0; m];
    for r in features.rows() {
        for (acc, x) in mean.iter_mut().zip(r) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(m, m);
    let mut centered = vec![0.0; m];
    for r in features.rows() {
        for k in 0..m {
            centered[k] = r[k] - mean[k];
        }
        for a in 0..m {
            for b in a..m {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..m {
        for b in a..m {
            let v = cov[(a, b)] / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let degenerate: Vec<usize> = (0..m).filter(|&k| cov[(k, k)] == 0.0).collect();
    if !degenerate.is_empty() {
        log::warn!("constant feature columns {degenerate:?}; relying on ridge");
    }
    for k in 0..m {
        cov[(k, k)] += ridge;
    }
    Ok((CovarianceMatrix(cov), degenerate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlassoParams {
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlassoParams {
    fn default() -> Self {
        GlassoParams {
            rho: 0.1,
            tol: 1e-4,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlassoFit {
    pub precision: PrecisionMatrix,
    /// Final estimate of the covariance (the dual variable `W`).
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// `log det W` after every sweep; the dual objective, non-decreasing.
    pub dual_objective: Vec<f64>,
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Primal objective `-log det Θ + tr(ΣΘ) + ρ Σ_{i≠j} |Θ_ij|`.
pub fn glasso_objective(
    sigma: &CovarianceMatrix,
    theta: &PrecisionMatrix,
    rho: f64,
) -> Option<f64> {
    let ld = log_det_pd(&theta.0)?;
    let tr = (&sigma.0 * &theta.0).trace();
    let m = theta.dim();
    let mut l1 = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                l1 += theta.0[(i, j)].abs();
            }
        }
    }
    Some(-ld + tr + rho * l1)
}

/// Largest violation of the optimality conditions of the off-diagonal
/// penalized problem, evaluated with the exact inverse of `theta`.
pub fn kkt_residual(sigma: &CovarianceMatrix, theta: &PrecisionMatrix, rho: f64) -> Result<f64> {
    let m = theta.dim();
    let inv = theta
        .0
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            pivot: 0,
            value: f64::NAN,
        })?
        .inverse();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let g = sigma.0[(i, j)] - inv[(i, j)];
            let t = theta.0[(i, j)];
            let v = if i == j {
                g.abs()
            } else if t != 0.0 {
                (g + rho * t.signum()).abs()
            } else {
                (g.abs() - rho).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// Graphical lasso by block coordinate descent over columns; each lasso
/// subproblem is solved by cyclic coordinate descent.
///
/// Stops once the KKT residual is at most `tol`. Hitting `max_iter` is not an
/// error: the fit is returned with `converged = false`.
pub fn graphical_lasso(sigma: &CovarianceMatrix, params: &GlassoParams) -> Result<GlassoFit> {
    let s = &sigma.0;
    let m = s.nrows();
    if m == 0 || s.ncols() != m {
        return Err(Error::InvalidParam(
            "covariance must be a non-empty square matrix".into(),
        ));
    }
    if !(params.rho >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "rho must be >= 0, got {}",
            params.rho
        )));
    }
    if let Some((pivot, value)) = first_bad_pivot(s) {
        return Err(Error::NotPositiveDefinite { pivot, value });
    }
    let rho = params.rho;
    let mut w = s.clone();
    // beta.column(j) holds the lasso coefficients of column j over the other indices
    let mut beta = DMatrix::<f64>::zeros(m.saturating_sub(1).max(1), m);
    let mut dual = Vec::new();
    let inner_tol = 1e-12;

    let idx_without = |j: usize| -> Vec<usize> { (0..m).filter(|&k| k != j).collect() };

    let mut iterations = 0;
    let mut theta = PrecisionMatrix(precision_from_beta(&w, &beta));
    let mut residual = kkt_residual(sigma, &theta, rho)?;
    while residual > params.tol && iterations < params.max_iter && m > 1 {
        iterations += 1;
        for j in 0..m {
            let others = idx_without(j);
            let p = others.len();
            let mut b: Vec<f64> = (0..p).map(|k| beta[(k, j)]).collect();
            for _ in 0..10_000 {
                let mut max_delta: f64 = 0.0;
                for k in 0..p {
                    let wk = others[k];
                    let mut r = s[(wk, j)];
                    for l in 0..p {
                        if l != k {
                            r -= w[(wk, others[l])] * b[l];
                        }
                    }
                    let new = soft_threshold(r, rho) / w[(wk, wk)];
                    max_delta = max_delta.max((new - b[k]).abs());
                    b[k] = new;
                }
                if max_delta < inner_tol {
                    break;
                }
            }
            for k in 0..p {
                let mut acc = 0.0;
                for l in 0..p {
                    acc += w[(others[k], others[l])] * b[l];
                }
                w[(others[k], j)] = acc;
                w[(j, others[k])] = acc;
                beta[(k, j)] = b[k];
            }
        }
        dual.push(log_det_pd(&w).unwrap_or(f64::NAN));
        theta = PrecisionMatrix(precision_from_beta(&w, &beta));
        residual = kkt_residual(sigma, &theta, rho)?;
    }
    let converged = residual <= params.tol;
    if !converged {
        log::warn!(
            "graphical lasso hit the iteration limit ({}) with KKT residual {residual:e}",
            params.max_iter
        );
    }
    Ok(GlassoFit {
        precision: theta,
        covariance: w,
        iterations,
        kkt_residual: residual,
        converged,
        dual_objective: dual,
    })
}

fn first_bad_pivot(s: &DMatrix<f64>) -> Option<(usize, f64)> {
    match ldl(s) {
        Ok(_) => None,
        Err(Error::NotPositiveDefinite { pivot, value }) => Some((pivot, value)),
        Err(_) => Some((0, f64::NAN)),
    }
}

fn precision_from_beta(w: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let m = w.nrows();
    let mut theta = DMatrix::<f64>::zeros(m, m);
    if m == 1 {
        theta[(0, 0)] = 1.0 / w[(0, 0)];
        return theta;
    }
    for j in 0..m {
        let others: Vec<usize> = (0..m).filter(|&k| k != j).collect();
        let mut wb = 0.0;
        for (k, &o) in others.iter().enumerate() {
            wb += w[(o, j)] * beta[(k, j)];
        }
        let tjj = 1.0 / (w[(j, j)] - wb);
        theta[(j, j)] = tjj;
        for (k, &o) in others.iter().enumerate() {
            theta[(o, j)] = -beta[(k, j)] * tjj;
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let (a, b) = (theta[(i, j)], theta[(j, i)]);
            let v = if a == 0.0 || b == 0.0 {
                0.0
            } else {
                (a + b) / 2.0
            };
            theta[(i, j)] = v;
            theta[(j, i)] = v;
        }
    }
    theta
}

/// `LDLᵀ` factorization with unit lower-triangular `L`.
fn ldl(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = a.nrows();
    let mut l = DMatrix::<f64>::identity(m, m);
    let mut d = DVector::<f64>::zeros(m);
    for j in 0..m {
        let mut dj = a[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if !(dj > 0.0) {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: dj,
            });
        }
        d[j] = dj;
        for i in (j + 1)..m {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / dj;
        }
    }
    Ok((l, d))
}

/// Autoregression factorization of a precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Indexed by attribute; `b[(j, k)] != 0` only if `k` precedes `j` in `ordering`.
    pub b: DMatrix<f64>,
    /// Diagonal of `Ω`, indexed by attribute.
    pub omega: DVector<f64>,
    pub ordering: Vec<usize>,
}

impl Decomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let m = self.b.nrows();
        let i_b = DMatrix::<f64>::identity(m, m) - &self.b;
        &i_b * DMatrix::from_diagonal(&self.omega) * i_b.transpose()
    }
}

fn check_ordering(ordering: &[usize], m: usize) -> Result<()> {
    let mut seen = vec![false; m];
    if ordering.len() != m {
        return Err(Error::InvalidParam(format!(
            "ordering has {} entries for {m} variables",
            ordering.len()
        )));
    }
    for &o in ordering {
        if o >= m || std::mem::replace(&mut seen[o], true) {
            return Err(Error::InvalidParam(format!(
                "ordering {ordering:?} is not a permutation"
            )));
        }
    }
    Ok(())
}

/// Factors `Θ = (I - B) Ω (I - B)ᵀ` with `B` strictly lower-triangular under
/// `ordering`, via the `LDLᵀ` (Cholesky) factorization of the permuted `Θ`.
pub fn decompose_precision(theta: &PrecisionMatrix, ordering: &[usize]) -> Result<Decomposition> {
    let m = theta.dim();
    check_ordering(ordering, m)?;
    let permuted = DMatrix::from_fn(m, m, |i, j| theta.0[(ordering[i], ordering[j])]);
    let (l, d) = ldl(&permuted)?;
    let mut b = DMatrix::<f64>::zeros(m, m);
    let mut omega = DVector::<f64>::zeros(m);
    for i in 0..m {
        omega[ordering[i]] = d[i];
        for j in 0..i {
            b[(ordering[i], ordering[j])] = -l[(i, j)];
        }
    }
    Ok(Decomposition {
        b,
        omega,
        ordering: ordering.to_vec(),
    })
}

/// Attributes by decreasing diagonal of `Θ`, ties by index.
pub fn default_ordering(theta: &PrecisionMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..theta.dim()).collect();
    order.sort_by(|&a, &b| theta.0[(b, b)].total_cmp(&theta.0[(a, a)]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<WeightedEdge>,
    /// Per-node noise variances (diagonal of `Ω`), diagnostics only.
    #[serde(default)]
    pub omega: Vec<f64>,
}

impl SkeletonGraph {
    pub fn empty(nodes: Vec<String>) -> Self {
        let omega = vec![1.0; nodes.len()];
        SkeletonGraph {
            nodes,
            edges: Vec::new(),
            omega,
        }
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    pub fn has_link(&self, a: &str, b: &str) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph skeleton {\n");
        for n in &self.nodes {
            let _ = writeln!(s, "  \"{}\";", n.replace('"', "\\\""));
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\" [label=\"{:.3}\"];",
                e.from.replace('"', "\\\""),
                e.to.replace('"', "\\\""),
                e.weight
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Directed edge `k -> j` for every `|B[j,k]| > edge_threshold`; edges always
/// point forward in the ordering, so the result is acyclic.
pub fn skeleton_from_b(
    dec: &Decomposition,
    names: &[String],
    edge_threshold: f64,
) -> SkeletonGraph {
    let mut edges = Vec::new();
    for (pos_j, &j) in dec.ordering.iter().enumerate() {
        for &k in &dec.ordering[..pos_j] {
            let w = dec.b[(j, k)];
            if w.abs() > edge_threshold {
                edges.push(WeightedEdge {
                    from: names[k].clone(),
                    to: names[j].clone(),
                    weight: w,
                });
            }
        }
    }
    SkeletonGraph {
        nodes: names.to_vec(),
        edges,
        omega: dec.omega.iter().copied().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureParams {
    pub ridge: f64,
    pub glasso: GlassoParams,
    pub edge_threshold: f64,
    /// Explicit ordering by attribute name; default is decreasing `diag(Θ)`.
    pub ordering: Option<Vec<String>>,
}

impl Default for StructureParams {
    fn default() -> Self {
        StructureParams {
            ridge: 1e-4,
            glasso: GlassoParams::default(),
            edge_threshold: 0.2,
            ordering: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnedStructure {
    pub skeleton: SkeletonGraph,
    pub fit: GlassoFit,
    pub decomposition: Decomposition,
}

/// Features → covariance → graphical lasso → decomposition → thresholding.
pub fn learn_skeleton(table: &Table, params: &StructureParams) -> Result<LearnedStructure> {
    table.ensure_non_empty()?;
    let names = table.attribute_names();
    let features = adjacent_pair_features(table)?;
    let (cov, _) = empirical_covariance(&features, params.ridge)?;
    let fit = graphical_lasso(&cov, &params.glasso)?;
    let ordering = match &params.ordering {
        Some(order) => order
            .iter()
            .map(|n| table.attribute_index(n))
            .collect::<Result<Vec<_>>>()?,
        None => default_ordering(&fit.precision),
    };
    let decomposition = decompose_precision(&fit.precision, &ordering)?;
    let skeleton = skeleton_from_b(&decomposition, &names, params.edge_threshold);
    Ok(LearnedStructure {
        skeleton,
        fit,
        decomposition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cov(rows: &[&[f64]]) -> CovarianceMatrix {
        let m = rows.len();
        CovarianceMatrix(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
    }

    fn random_pd(m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(m, m) * 0.5
    }

    #[test]
    fn identical_feature_rows_give_ridge_identity() {
        let f = PairFeatureMatrix::new(2, vec![0.5, 1.0, 0.5, 1.0, 0.5, 1.0]).unwrap();
        let (c, degenerate) = empirical_covariance(&f, 1e-4).unwrap();
        assert_eq!(degenerate, vec![0, 1]);
        assert_eq!(c.0, DMatrix::identity(2, 2) * 1e-4);
    }

    #[test]
    fn perfectly_correlated_features() {
        let f = PairFeatureMatrix::new(2, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let (c, _) = empirical_covariance(&f, 0.0).unwrap();
        assert!((c.0[(0, 1)] - 0.25).abs() < 1e-15);
        assert_eq!(c.0[(0, 1)], c.0[(0, 0)]);
    }

    #[test]
    fn sample_covariance_of_known_gaussian() {
        // x1 ~ N(0,1), x2 = 0.6 x1 + 0.8 e2, x3 = e3 * 0.5  => known covariance
        let truth = [[1.0, 0.6, 0.0], [0.6, 1.0, 0.0], [0.0, 0.0, 0.25]];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = |rng: &mut ChaCha8Rng| {
            let u1: f64 = rng.random_range(1e-12..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut data = Vec::new();
        for _ in 0..1000 {
            let (a, b, c) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
            data.extend([a, 0.6 * a + 0.8 * b, 0.5 * c]);
        }
        let f = PairFeatureMatrix::new(3, data).unwrap();
        let (c, _) = empirical_covariance(&f, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (c.0[(i, j)] - truth[i][j]).abs() < 0.1,
                    "({i},{j}) = {}",
                    c.0[(i, j)]
                );
            }
        }
    }

    #[test]
    fn glasso_identity_stays_diagonal() {
        let fit = graphical_lasso(
            &CovarianceMatrix(DMatrix::identity(3, 3)),
            &GlassoParams::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert_eq!(fit.precision.0, DMatrix::identity(3, 3));
    }

    #[test]
    fn glasso_unpenalized_two_by_two() {
        let s = cov(&[&[1.0, 0.8], &[0.8, 1.0]]);
        let fit = graphical_lasso(
            &s,
            &GlassoParams {
                rho: 0.0,
                tol: 1e-10,
                max_iter: 100,
            },
        )
        .unwrap();
        // closed form: det = 0.36
        let expected = [[1.0 / 0.36, -0.8 / 0.36], [-0.8 / 0.36, 1.0 / 0.36]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((fit.precision.0[(i, j)] - expected[i][j]).abs() < 1e-8);
            }
        }
        assert!((expected[0][0] - 2.778).abs() < 1e-3 && (expected[0][1] + 2.222).abs() < 1e-3);
    }

    #[test]
    fn large_rho_zeroes_off_diagonal_and_satisfies_kkt() {
        let s = cov(&[&[1.0, 0.3, -0.2], &[0.3, 2.0, 0.1], &[-0.2, 0.1, 1.5]]);
        let rho = 0.3;
        let fit = graphical_lasso(
            &s,
            &GlassoParams {
                rho,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(fit.precision.0[(i, j)], 0.0);
                    // KKT for a zero entry: |S_ij - W_ij| <= rho, with W = diag(S)
                    assert!(s.0[(i, j)].abs() <= rho + 1e-12);
                }
            }
            assert!((fit.precision.0[(i, i)] - 1.0 / s.0[(i, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn not_positive_definite_input() {
        let s = cov(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(
            graphical_lasso(&s, &GlassoParams::default()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn iteration_limit_is_not_fatal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = CovarianceMatrix(random_pd(6, &mut rng));
        let fit = graphical_lasso(
            &s,
            &GlassoParams {
                rho: 0.05,
                tol: 1e-14,
                max_iter: 1,
            },
        )
        .unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(!fit.converged);
    }

    #[test]
    fn dual_objective_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let s = CovarianceMatrix(random_pd(8, &mut rng));
            let fit = graphical_lasso(
                &s,
                &GlassoParams {
                    rho: 0.2,
                    tol: 1e-9,
                    max_iter: 200,
                },
            )
            .unwrap();
            for w in fit.dual_objective.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{:?}", fit.dual_objective);
            }
        }
    }

    fn off_diagonal_nonzeros(theta: &PrecisionMatrix) -> usize {
        let m = theta.dim();
        (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && theta.0[(i, j)] != 0.0)
            .count()
    }

    fn tight(rho: f64) -> GlassoParams {
        GlassoParams {
            rho,
            tol: 1e-8,
            max_iter: 500,
        }
    }

    #[test]
    fn raising_rho_never_adds_nonzeros() {
        // fixed autoregressive covariance, 0.6^|i-j|
        let s = CovarianceMatrix(DMatrix::from_fn(7, 7, |i, j| {
            0.6f64.powi((i as i32 - j as i32).abs())
        }));
        let mut last = usize::MAX;
        for rho in [0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.6] {
            let nnz = off_diagonal_nonzeros(&graphical_lasso(&s, &tight(rho)).unwrap().precision);
            assert!(nnz <= last, "rho {rho}: {nnz} > {last}");
            last = nnz;
        }
        assert_eq!(last, 0);
    }

    #[test]
    fn support_path_is_not_monotone_for_every_covariance() {
        // both fits are certified optima, so the extra nonzeros are real
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = CovarianceMatrix(random_pd(7, &mut rng));
        let lo = graphical_lasso(&s, &tight(0.1)).unwrap();
        let hi = graphical_lasso(&s, &tight(0.2)).unwrap();
        assert!(kkt_residual(&s, &lo.precision, 0.1).unwrap() <= 1e-8);
        assert!(kkt_residual(&s, &hi.precision, 0.2).unwrap() <= 1e-8);
        assert!(off_diagonal_nonzeros(&hi.precision) > off_diagonal_nonzeros(&lo.precision));
    }

    #[test]
    fn decompose_identity() {
        let d = decompose_precision(&PrecisionMatrix(DMatrix::identity(3, 3)), &[0, 1, 2]).unwrap();
        assert_eq!(d.b, DMatrix::zeros(3, 3));
        assert_eq!(d.omega, DVector::from_element(3, 1.0));
    }

    #[test]
    fn decompose_recovers_regression_coefficient() {
        // x1 ~ N(0,1), x2 = 0.8 x1 + e with var(e) = 0.36: least squares slope of x2 on x1 is 0.8
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let slope = sigma[(1, 0)] / sigma[(0, 0)];
        let theta = PrecisionMatrix(sigma.try_inverse().unwrap());
        let d = decompose_precision(&theta, &[0, 1]).unwrap();
        assert!((d.b[(1, 0)] - slope).abs() < 1e-12);
        assert_eq!(d.b[(0, 1)], 0.0);
        let sk = skeleton_from_b(&d, &["A1".into(), "A2".into()], 0.2);
        assert_eq!(sk.edges.len(), 1);
        assert_eq!(
            (sk.edges[0].from.as_str(), sk.edges[0].to.as_str()),
            ("A1", "A2")
        );
    }

    #[test]
    fn bad_ordering_rejected() {
        let t = PrecisionMatrix(DMatrix::identity(2, 2));
        assert!(decompose_precision(&t, &[0, 0]).is_err());
        assert!(decompose_precision(&t, &[0]).is_err());
    }

    #[test]
    fn empty_b_gives_edgeless_skeleton() {
        let d = decompose_precision(&PrecisionMatrix(DMatrix::identity(3, 3)), &[2, 0, 1]).unwrap();
        let sk = skeleton_from_b(&d, &["a".into(), "b".into(), "c".into()], 0.2);
        assert!(sk.edges.is_empty());
        assert!(sk.to_dot().starts_with("digraph"));
    }

    fn is_acyclic(sk: &SkeletonGraph) -> bool {
        let idx = |n: &str| sk.nodes.iter().position(|x| x == n).unwrap();
        let m = sk.nodes.len();
        let mut indeg = vec![0; m];
        for e in &sk.edges {
            indeg[idx(&e.to)] += 1;
        }
        let mut stack: Vec<usize> = (0..m).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(u) = stack.pop() {
            seen += 1;
            for e in sk.edges.iter().filter(|e| idx(&e.from) == u) {
                let v = idx(&e.to);
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    stack.push(v);
                }
            }
        }
        seen == m
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn decomposition_round_trip(seed in any::<u64>(), m in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = PrecisionMatrix(random_pd(m, &mut rng));
            let mut ordering: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                ordering.swap(i, rng.random_range(0..=i));
            }
            let d = decompose_precision(&theta, &ordering).unwrap();
            let err = (d.reconstruct() - &theta.0).abs().max();
            prop_assert!(err <= 1e-8, "{}", err);
            prop_assert!(d.omega.iter().all(|&w| w > 0.0));
        }

        #[test]
        fn skeleton_acyclic_and_threshold_monotone(seed in any::<u64>(), m in 2usize..8, t in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = PrecisionMatrix(random_pd(m, &mut rng));
            let mut ordering: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                ordering.swap(i, rng.random_range(0..=i));
            }
            let names: Vec<String> = (0..m).map(|i| format!("a{i}")).collect();
            let d = decompose_precision(&theta, &ordering).unwrap();
            let lo = skeleton_from_b(&d, &names, t);
            let hi = skeleton_from_b(&d, &names, t + 0.1);
            prop_assert!(is_acyclic(&lo));
            prop_assert!(hi.edges.iter().all(|e| lo.has_edge(&e.from, &e.to)));
        }
    }
}
