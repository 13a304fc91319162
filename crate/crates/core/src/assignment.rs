//! Maximum-weight bipartite matching on complete bipartite graphs.
//!
//! [`km_max_weight`] is an O(n³) Kuhn-Munkres solver; [`brute_force_matching`]
//! enumerates every injection of the smaller side and serves as its oracle.
//! Both saturate the smaller side, so a matching always has
//! `min(rows, cols)` edges.

use crate::error::{Error, Result};

/// Dense row-major weight matrix of a complete bipartite graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidWeights(format!(
                "need at least one row and column, got {rows}x{cols}"
            )));
        }
        if weights.len() != rows * cols {
            return Err(Error::InvalidWeights(format!(
                "{} values for a {rows}x{cols} matrix",
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidWeights(format!(
                "weight at ({}, {}) is not finite",
                i / cols,
                i % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            weights,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidWeights("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        (row < self.rows && col < self.cols).then(|| self.weights[row * self.cols + col])
    }

    pub fn transpose(&self) -> Self {
        let mut weights = Vec::with_capacity(self.weights.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                weights.push(self.weights[r * self.cols + c]);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            weights,
        }
    }

    /// Adds `c` to every weight.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.weights.iter().map(|w| w + c).collect(),
        )
    }

    fn weight(&self, (row, col): (usize, usize)) -> Result<f64> {
        self.get(row, col).ok_or(Error::EdgeOutOfRange {
            row,
            col,
            rows: self.rows,
            cols: self.cols,
        })
    }
}

/// A set of vertex-disjoint `(row, col)` edges with its total weight and
/// confidence (the largest single edge weight).
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub edges: Vec<(usize, usize)>,
    pub total_weight: f64,
    pub confidence: f64,
}

impl Matching {
    fn from_edges(mut edges: Vec<(usize, usize)>, w: &WeightMatrix) -> Result<Self> {
        edges.sort_unstable();
        Ok(Self {
            total_weight: matching_weight(&edges, w)?,
            confidence: matching_confidence(&edges, w)?,
            edges,
        })
    }

    /// Column matched to `row`, if any.
    pub fn partner_of_row(&self, row: usize) -> Option<usize> {
        self.edges.iter().find(|e| e.0 == row).map(|e| e.1)
    }
}

/// Sum of edge weights.
pub fn matching_weight(edges: &[(usize, usize)], w: &WeightMatrix) -> Result<f64> {
    edges.iter().map(|&e| w.weight(e)).sum()
}

/// Largest edge weight; undefined for an empty edge set.
pub fn matching_confidence(edges: &[(usize, usize)], w: &WeightMatrix) -> Result<f64> {
    let mut best: Option<f64> = None;
    for &e in edges {
        let v = w.weight(e)?;
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    }
    best.ok_or(Error::UndefinedConfidence)
}

/// Kuhn-Munkres maximum-weight matching saturating the smaller side.
///
/// Weights are shifted to be non-negative and the matrix is padded to square
/// with dummy entries below every shifted weight; the Hungarian procedure
/// then runs on costs `top - weight`. Dummy edges are dropped and the result
/// is scored with the original weights.
pub fn km_max_weight(w: &WeightMatrix) -> Matching {
    let n = w.rows.max(w.cols);
    let min_w = w.weights.iter().copied().fold(f64::INFINITY, f64::min);
    const DUMMY: f64 = -1.0;

    let mut padded = vec![DUMMY; n * n];
    for r in 0..w.rows {
        for c in 0..w.cols {
            padded[r * n + c] = w.weights[r * w.cols + c] - min_w;
        }
    }
    let top = padded.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cost = |r: usize, c: usize| top - padded[r * n + c];

    // Shortest augmenting path Hungarian with row/column potentials.
    // Index 0 is a virtual column; real rows/columns are 1-based.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let edges: Vec<(usize, usize)> = (1..=n)
        .map(|j| (owner[j] - 1, j - 1))
        .filter(|&(r, c)| r < w.rows && c < w.cols)
        .collect();
    Matching::from_edges(edges, w).expect("solver edges index the matrix")
}

pub const BRUTE_FORCE_LIMIT: usize = 9;

/// Exhaustive maximum-weight matching over all injections of the smaller
/// side. Ties keep the first optimum in lexicographic enumeration order.
pub fn brute_force_matching(w: &WeightMatrix) -> Result<Matching> {
    let small = w.rows.min(w.cols);
    if small > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge {
            limit: BRUTE_FORCE_LIMIT,
            got: small,
        });
    }
    let transposed = w.rows > w.cols;
    let m = if transposed { w.transpose() } else { w.clone() };

    struct Search<'a> {
        m: &'a WeightMatrix,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Vec<usize>,
        best_total: f64,
    }

    impl Search<'_> {
        fn run(&mut self, row: usize, total: f64) {
            if row == self.m.rows {
                if total > self.best_total {
                    self.best_total = total;
                    self.best.clone_from(&self.current);
                }
                return;
            }
            for col in 0..self.m.cols {
                if self.used[col] {
                    continue;
                }
                self.used[col] = true;
                self.current.push(col);
                let wgt = self.m.weights[row * self.m.cols + col];
                self.run(row + 1, total + wgt);
                self.current.pop();
                self.used[col] = false;
            }
        }
    }

    let mut search = Search {
        m: &m,
        used: vec![false; m.cols],
        current: Vec::with_capacity(m.rows),
        best: Vec::new(),
        best_total: f64::NEG_INFINITY,
    };
    search.run(0, 0.0);

    let edges = search
        .best
        .iter()
        .enumerate()
        .map(|(r, &c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    Matching::from_edges(edges, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wm(rows: &[&[f64]]) -> WeightMatrix {
        WeightMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(WeightMatrix::new(0, 3, vec![]).is_err());
        assert!(WeightMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(WeightMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(WeightMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn km_examples() {
        let m = km_max_weight(&wm(&[&[0.6]]));
        assert_eq!(m.edges, vec![(0, 0)]);
        assert_eq!((m.total_weight, m.confidence), (0.6, 0.6));

        let w = wm(&[&[0.5, 0.6], &[0.1, 0.9]]);
        let m = km_max_weight(&w);
        assert_eq!(m.edges, vec![(0, 0), (1, 1)]);
        assert!((m.total_weight - 1.4).abs() < 1e-12);
        assert_eq!(m.confidence, 0.9);
        assert_eq!(brute_force_matching(&w).unwrap(), m);
    }

    #[test]
    fn weight_and_confidence() {
        let w = wm(&[&[0.5, 0.6], &[0.1, 0.9]]);
        assert_eq!(matching_weight(&[], &w).unwrap(), 0.0);
        assert_eq!(matching_weight(&[(0, 1)], &w).unwrap(), 0.6);
        assert!((matching_weight(&[(0, 0), (1, 1)], &w).unwrap() - 1.4).abs() < 1e-15);
        assert!(matches!(
            matching_weight(&[(2, 0)], &w),
            Err(Error::EdgeOutOfRange { row: 2, .. })
        ));

        assert_eq!(matching_confidence(&[(0, 1)], &w).unwrap(), 0.6);
        assert_eq!(matching_confidence(&[(0, 0), (1, 1)], &w).unwrap(), 0.9);
        let neg = wm(&[&[-0.2, 0.3], &[0.4, 0.1]]);
        assert_eq!(matching_confidence(&[(0, 0), (1, 1)], &neg).unwrap(), 0.1);
        assert!(matches!(
            matching_confidence(&[], &w),
            Err(Error::UndefinedConfidence)
        ));
    }

    #[test]
    fn rectangular_saturates_smaller_side() {
        let wide = wm(&[&[0.1, 0.9, 0.3, 0.2], &[0.8, 0.85, 0.0, -0.5]]);
        let m = km_max_weight(&wide);
        assert_eq!(m.edges, vec![(0, 1), (1, 0)]);
        let tall = wide.transpose();
        let mt = km_max_weight(&tall);
        assert_eq!(mt.edges, vec![(0, 1), (1, 0)]);
        assert!((mt.total_weight - 1.7).abs() < 1e-12);
    }

    #[test]
    fn negative_weights_still_saturate() {
        let w = wm(&[&[-0.9, -0.1], &[-0.2, -0.8]]);
        let m = km_max_weight(&w);
        assert_eq!(m.edges, vec![(0, 1), (1, 0)]);
        assert!((m.total_weight + 0.3).abs() < 1e-12);
        assert_eq!(m.confidence, -0.1);
    }

    #[test]
    fn brute_force_limit() {
        let big = WeightMatrix::new(10, 10, vec![0.0; 100]).unwrap();
        assert!(matches!(
            brute_force_matching(&big),
            Err(Error::InstanceTooLarge { got: 10, .. })
        ));
        // a 1x20 instance is cheap regardless of the long side
        assert!(brute_force_matching(&WeightMatrix::new(1, 20, vec![0.0; 20]).unwrap()).is_ok());
    }

    fn arb_matrix() -> impl Strategy<Value = WeightMatrix> {
        (1usize..=7, 1usize..=7).prop_flat_map(|(r, c)| {
            prop::collection::vec(-1.0..1.0f64, r * c)
                .prop_map(move |w| WeightMatrix::new(r, c, w).unwrap())
        })
    }

    fn assert_valid(m: &Matching, w: &WeightMatrix) {
        assert_eq!(m.edges.len(), w.rows().min(w.cols()));
        let mut rows: Vec<_> = m.edges.iter().map(|e| e.0).collect();
        let mut cols: Vec<_> = m.edges.iter().map(|e| e.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(rows.len(), m.edges.len());
        assert_eq!(cols.len(), m.edges.len());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn km_agrees_with_brute_force(w in arb_matrix()) {
            let km = km_max_weight(&w);
            let bf = brute_force_matching(&w).unwrap();
            assert_valid(&km, &w);
            assert_valid(&bf, &w);
            prop_assert!((km.total_weight - bf.total_weight).abs() < 1e-9);
        }

        #[test]
        fn constant_shift_preserves_optimum(w in arb_matrix(), c in -5.0..5.0f64) {
            let base = km_max_weight(&w);
            let shifted = km_max_weight(&w.shifted(c).unwrap());
            let on_original = matching_weight(&shifted.edges, &w).unwrap();
            prop_assert!((on_original - base.total_weight).abs() < 1e-9);
            let k = base.edges.len() as f64;
            prop_assert!((shifted.total_weight - (base.total_weight + c * k)).abs() < 1e-9);
        }

        #[test]
        fn transpose_symmetry(w in arb_matrix()) {
            let m = km_max_weight(&w);
            let t = km_max_weight(&w.transpose());
            prop_assert!((m.total_weight - t.total_weight).abs() < 1e-9);
            let flipped: Vec<_> = t.edges.iter().map(|&(r, c)| (c, r)).collect();
            prop_assert!((matching_weight(&flipped, &w).unwrap() - m.total_weight).abs() < 1e-9);
        }
    }
}
