//! Pairwise similarity features over attribute-sorted adjacent tuples.

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{Error, Result};
use crate::table::{parse_number, Kind, Table};

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - 2·ED(a,b) / (len(a) + len(b))`, clamped into `[0, 1]`.
pub fn string_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let total = a.chars().count() + b.chars().count();
    let s = 1.0 - 2.0 * levenshtein(a, b) as f64 / total as f64;
    s.clamp(0.0, 1.0)
}

/// One minus the clamped relative difference `|a-b| / ((|a|+|b|)/2)`.
pub fn numeric_similarity(a: f64, b: f64) -> f64 {
    if a == b {
        return 1.0;
    }
    let mean = (a.abs() + b.abs()) / 2.0;
    let rel = (a - b).abs() / mean;
    1.0 - rel.min(1.0)
}

/// Similarity of two cells of an attribute of the given kind; NULL gives 0.
pub fn cell_similarity(kind: Kind, a: Option<&str>, b: Option<&str>) -> f64 {
    let (Some(a), Some(b)) = (a, b) else {
        return 0.0;
    };
    match kind {
        Kind::Categorical => f64::from(u8::from(a == b)),
        Kind::Numeric => match (parse_number(a), parse_number(b)) {
            (Some(x), Some(y)) => numeric_similarity(x, y),
            _ => string_similarity(a, b),
        },
        Kind::Text => string_similarity(a, b),
    }
}

/// Feature rows (one per adjacent tuple pair) by attribute columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatureMatrix {
    n_cols: usize,
    data: Vec<f64>,
}

impl PairFeatureMatrix {
    pub fn new(n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_cols == 0 || data.len() % n_cols != 0 {
            return Err(Error::InvalidParam(format!(
                "feature data of length {} does not divide into {n_cols} columns",
                data.len()
            )));
        }
        Ok(PairFeatureMatrix { n_cols, data })
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    /// Debug dump with the attribute names as header.
    pub fn write_csv<W: Write>(&self, names: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(names)?;
        for r in self.rows() {
            w.write_record(r.iter().map(|x| format!("{x}")))?;
        }
        w.flush().map_err(|e| Error::io("<feature dump>", e))?;
        Ok(())
    }
}

fn compare_cells(kind: Kind, a: Option<&str>, b: Option<&str>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Greater,
        (Some(_), None) => Ordering::Less,
        (Some(x), Some(y)) => {
            if kind == Kind::Numeric {
                if let (Some(p), Some(q)) = (parse_number(x), parse_number(y)) {
                    return p.total_cmp(&q);
                }
            }
            x.cmp(y)
        }
    }
}

/// For every attribute, sorts tuples by that attribute and emits the
/// similarity vector of each adjacent pair: `m·(n-1)` rows in attribute order.
pub fn adjacent_pair_features(table: &Table) -> Result<PairFeatureMatrix> {
    let (n, m) = (table.n_rows(), table.n_cols());
    if n < 2 {
        return Err(Error::InvalidParam(
            "need at least two rows for pair features".into(),
        ));
    }
    let kinds: Vec<Kind> = table.attributes().iter().map(|a| a.kind).collect();
    let mut data = Vec::with_capacity(m * (n - 1) * m);
    for sort_col in 0..m {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| {
            compare_cells(
                kinds[sort_col],
                table.cell(x, sort_col),
                table.cell(y, sort_col),
            )
            .then(x.cmp(&y))
        });
        for w in order.windows(2) {
            for (k, kind) in kinds.iter().enumerate() {
                data.push(cell_similarity(
                    *kind,
                    table.cell(w[0], k),
                    table.cell(w[1], k),
                ));
            }
        }
    }
    PairFeatureMatrix::new(m, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook full-matrix DP, kept separate from the two-row version.
    fn edit_distance_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let c = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1)
                    .min(d[i][j - 1] + 1)
                    .min(d[i - 1][j - 1] + c);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn address_typo_similarity() {
        let s = string_similarity("315 w hickory st", "315 w hicky st");
        assert!((s - 0.8667).abs() < 5e-4, "{s}");
    }

    #[test]
    fn disjoint_short_strings_clamp_to_zero() {
        assert_eq!(edit_distance_oracle("ab", "xyz"), 3);
        assert_eq!(levenshtein("ab", "xyz"), 3);
        assert_eq!(string_similarity("ab", "xyz"), 0.0);
    }

    #[test]
    fn identity_and_empty() {
        assert_eq!(string_similarity("x", "x"), 1.0);
        assert_eq!(string_similarity("", ""), 1.0);
        assert_eq!(string_similarity("", "abc"), 0.0);
    }

    #[test]
    fn numeric_cases() {
        assert_eq!(numeric_similarity(10.0, 10.0), 1.0);
        assert_eq!(numeric_similarity(10.0, 0.0), 0.0);
        assert!((numeric_similarity(9.0, 11.0) - 0.8).abs() < 1e-12);
        assert_eq!(numeric_similarity(0.0, 0.0), 1.0);
    }

    #[test]
    fn null_gives_zero() {
        assert_eq!(cell_similarity(Kind::Text, None, Some("a")), 0.0);
        assert_eq!(cell_similarity(Kind::Text, None, None), 0.0);
    }

    #[test]
    fn pair_feature_shapes() {
        let t = Table::from_literals(&["a"], &[&["x"], &["x"]]).unwrap();
        let f = adjacent_pair_features(&t).unwrap();
        assert_eq!(f.n_rows(), 1);
        assert_eq!(f.row(0), &[1.0]);

        let t = Table::from_literals(
            &["a", "b"],
            &[&["1", "p"], &["2", "q"], &["3", "r"], &["4", "s"]],
        )
        .unwrap();
        assert_eq!(adjacent_pair_features(&t).unwrap().n_rows(), 6);
    }

    #[test]
    fn customer_rows_adjacent_under_name_sort() {
        // rows 1 and 3 of the customer example, with a different name between them
        let t = Table::from_literals(
            &["Name", "Department"],
            &[
                &["Johnny.R", "315 w hickory st"],
                &["Zed", "elsewhere"],
                &["Johnny.R", "315 w hicky st"],
            ],
        )
        .unwrap();
        let f = adjacent_pair_features(&t).unwrap();
        // first sweep sorts by Name: rows 0 and 2 are adjacent
        assert_eq!(f.row(0)[0], 1.0);
        assert!((f.row(0)[1] - 0.8667).abs() < 5e-4);
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_bounded(a in "[a-c ]{0,8}", b in "[a-c ]{0,8}") {
            let s = string_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, string_similarity(&b, &a));
            prop_assert_eq!(s == 1.0, a == b);
            prop_assert_eq!(levenshtein(&a, &b), edit_distance_oracle(&a, &b));
        }

        #[test]
        fn numeric_similarity_bounded(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let s = numeric_similarity(a, b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, numeric_similarity(b, a));
        }

        #[test]
        fn features_in_unit_interval(rows in prop::collection::vec(("[ab]{0,3}", "[0-9]{1,2}"), 2..12)) {
            let lits: Vec<[String; 2]> = rows.into_iter().map(|(a, b)| [a, b]).collect();
            let refs: Vec<Vec<&str>> = lits.iter().map(|r| vec![r[0].as_str(), r[1].as_str()]).collect();
            let slices: Vec<&[&str]> = refs.iter().map(|r| r.as_slice()).collect();
            let t = Table::from_literals(&["a", "b"], &slices).unwrap();
            let f = adjacent_pair_features(&t).unwrap();
            prop_assert_eq!(f.n_rows(), 2 * (t.n_rows() - 1));
            prop_assert!(f.rows().flatten().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
