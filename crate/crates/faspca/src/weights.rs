//! Spatial weight matrices over areal units: nearest-neighbour and lattice
//! contiguity construction, row standardization, and the symmetrized operator
//! used by the spatially informed eigenproblem.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// How a weight matrix was constructed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightKind {
    Knn { k: usize },
    Rook,
    Queen,
    Bishop,
    Custom,
}

/// Contiguity rule on integer lattice cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContiguityRule {
    /// Cells sharing an edge: |Δrow| + |Δcol| = 1.
    Rook,
    /// Cells sharing an edge or corner: max(|Δrow|, |Δcol|) = 1.
    Queen,
    /// Cells sharing only a corner: |Δrow| = |Δcol| = 1.
    Bishop,
}

/// Sparse nonnegative spatial weight matrix with an empty diagonal.
/// Rows are stored as `(column, weight)` pairs sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    n_units: usize,
    rows: Vec<Vec<(usize, f64)>>,
    kind: WeightKind,
    row_standardized: bool,
}

impl SpatialWeights {
    /// Build from explicit `(i, j, w)` entries. Entries with `w = 0` are
    /// dropped; duplicates, diagonal cells, negative weights, and indices
    /// outside `0..n_units` are errors.
    pub fn from_entries(n_units: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_units];
        for &(i, j, w) in entries {
            if i >= n_units || j >= n_units {
                return Err(Error::WeightIndexOutOfRange { i, j, n: n_units });
            }
            if i == j {
                return Err(Error::DiagonalWeight(i));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::NegativeWeight { i, j, w });
            }
            if rows[i].iter().any(|&(col, _)| col == j) {
                return Err(Error::DuplicateCell {
                    row: i as i64,
                    col: j as i64,
                });
            }
            if w > 0.0 {
                rows[i].push((j, w));
            }
        }
        for row in &mut rows {
            row.sort_by_key(|&(col, _)| col);
        }
        Ok(Self {
            n_units,
            rows,
            kind: WeightKind::Custom,
            row_standardized: false,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    /// Sparse row `i` as `(column, weight)` pairs sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Neighbour indices of unit `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.rows[i].iter().map(|&(j, _)| j).collect()
    }

    /// Total weight `s0 = sum_ij w_ij`.
    pub fn total_weight(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(_, w)| w).sum::<f64>())
            .sum()
    }

    /// Number of stored nonzero entries.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// All stored entries as `(i, j, w)` triples in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out.push((i, j, w));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_units, self.n_units);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[(i, j)] = w;
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                let back = self.rows[j]
                    .iter()
                    .find(|&&(col, _)| col == i)
                    .map(|&(_, w)| w);
                if back != Some(w) {
                    return false;
                }
            }
        }
        true
    }

    /// Divide every nonempty row by its sum. Returns the standardized matrix
    /// and the indices of isolated units whose rows stay empty. Idempotent.
    pub fn row_standardize(&self) -> (Self, Vec<usize>) {
        let mut out = self.clone();
        let mut isolated = Vec::new();
        for (i, row) in out.rows.iter_mut().enumerate() {
            let total: f64 = row.iter().map(|&(_, w)| w).sum();
            if total == 0.0 {
                isolated.push(i);
                continue;
            }
            for entry in row.iter_mut() {
                entry.1 /= total;
            }
        }
        out.row_standardized = true;
        (out, isolated)
    }

    /// Sparse product `W * m`.
    pub fn left_multiply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_units, m.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for c in 0..m.ncols() {
                    out[(i, c)] += w * m[(j, c)];
                }
            }
        }
        out
    }

    /// Sparse product `W * v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_units, |i, _| {
            self.rows[i].iter().map(|&(j, w)| w * v[j]).sum()
        })
    }

    /// The symmetric operator `(W + Wᵀ)/2` without materializing a dense sum.
    pub fn symmetrized(&self) -> SymmetrizedWeights<'_> {
        SymmetrizedWeights { weights: self }
    }
}

/// View of a weight matrix as the symmetric operator `(W + Wᵀ)/2`.
#[derive(Debug, Clone, Copy)]
pub struct SymmetrizedWeights<'a> {
    weights: &'a SpatialWeights,
}

impl SymmetrizedWeights<'_> {
    pub fn n_units(&self) -> usize {
        self.weights.n_units
    }

    /// `(W + Wᵀ)v / 2`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.weights.n_units);
        for (i, row) in self.weights.rows.iter().enumerate() {
            for &(j, w) in row {
                out[i] += 0.5 * w * v[j];
                out[j] += 0.5 * w * v[i];
            }
        }
        out
    }

    /// `(W + Wᵀ)M / 2` column by column.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.weights.n_units, m.ncols());
        for (i, row) in self.weights.rows.iter().enumerate() {
            for &(j, w) in row {
                for c in 0..m.ncols() {
                    out[(i, c)] += 0.5 * w * m[(j, c)];
                    out[(j, c)] += 0.5 * w * m[(i, c)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let dense = self.weights.to_dense();
        (&dense + dense.transpose()) * 0.5
    }
}

/// Binary k-nearest-neighbour weights by Euclidean distance. Distance ties
/// are broken by the smaller unit index, so the result is deterministic.
pub fn knn_weights(coords: &[(f64, f64)], k: usize) -> Result<SpatialWeights> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::TooFewUnits(n));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::BadNeighbourCount { k, n });
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (si1, si2) = coords[i];
        let mut candidates: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let (sj1, sj2) = coords[j];
                ((si1 - sj1).powi(2) + (si2 - sj2).powi(2), j)
            })
            .collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut row: Vec<(usize, f64)> = candidates[..k].iter().map(|&(_, j)| (j, 1.0)).collect();
        row.sort_by_key(|&(j, _)| j);
        rows.push(row);
    }
    Ok(SpatialWeights {
        n_units: n,
        rows,
        kind: WeightKind::Knn { k },
        row_standardized: false,
    })
}

/// Binary contiguity weights on integer lattice cells. Unit `i` corresponds
/// to `cells[i]`; cells need not form a full rectangle.
pub fn contiguity_weights(cells: &[(i64, i64)], rule: ContiguityRule) -> Result<SpatialWeights> {
    let n = cells.len();
    for (a, &cell) in cells.iter().enumerate() {
        if cells[..a].contains(&cell) {
            return Err(Error::DuplicateCell {
                row: cell.0,
                col: cell.1,
            });
        }
    }
    let adjacent = |a: (i64, i64), b: (i64, i64)| -> bool {
        let dr = (a.0 - b.0).abs();
        let dc = (a.1 - b.1).abs();
        match rule {
            ContiguityRule::Rook => dr + dc == 1,
            ContiguityRule::Queen => dr.max(dc) == 1,
            ContiguityRule::Bishop => dr == 1 && dc == 1,
        }
    };
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && adjacent(cells[i], cells[j]) {
                rows[i].push((j, 1.0));
            }
        }
    }
    Ok(SpatialWeights {
        n_units: n,
        rows,
        kind: match rule {
            ContiguityRule::Rook => WeightKind::Rook,
            ContiguityRule::Queen => WeightKind::Queen,
            ContiguityRule::Bishop => WeightKind::Bishop,
        },
        row_standardized: false,
    })
}

/// Row-major cells of an `nrows x ncols` rectangular lattice.
pub fn lattice_cells(nrows: usize, ncols: usize) -> Vec<(i64, i64)> {
    let mut out = Vec::with_capacity(nrows * ncols);
    for r in 0..nrows {
        for c in 0..ncols {
            out.push((r as i64, c as i64));
        }
    }
    out
}

/// Symmetric binary weights from an undirected edge list. Each `(i, j)` pair
/// yields entries in both directions; repeated edges are errors.
pub fn edge_list_weights(n_units: usize, edges: &[(usize, usize)]) -> Result<SpatialWeights> {
    let mut entries = Vec::with_capacity(2 * edges.len());
    for &(i, j) in edges {
        entries.push((i, j, 1.0));
        if i != j {
            entries.push((j, i, 1.0));
        }
    }
    let mut weights = SpatialWeights::from_entries(n_units, &entries)?;
    weights.kind = WeightKind::Custom;
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_knn_picks_the_nearest() {
        let w = knn_weights(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)], 1).unwrap();
        assert_eq!(w.neighbors(0), vec![1]);
        assert_eq!(w.neighbors(1), vec![0]);
        assert_eq!(w.neighbors(2), vec![1]);
    }

    #[test]
    fn full_knn_is_complete_graph() {
        let coords: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, (i * i) as f64)).collect();
        let w = knn_weights(&coords, 5).unwrap();
        for i in 0..6 {
            assert_eq!(w.row(i).len(), 5);
            assert!(w.neighbors(i).iter().all(|&j| j != i));
        }
        assert_eq!(w.total_weight(), 30.0);
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        // Oracle: for each i, a neighbor's distance never exceeds any
        // non-neighbor's, and ties resolve to the smaller index.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coords: Vec<(f64, f64)> = (0..100)
            .map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
            .collect();
        let k = 5;
        let w = knn_weights(&coords, k).unwrap();
        let dist2 = |i: usize, j: usize| {
            (coords[i].0 - coords[j].0).powi(2) + (coords[i].1 - coords[j].1).powi(2)
        };
        for i in 0..coords.len() {
            let nb = w.neighbors(i);
            assert_eq!(nb.len(), k);
            let worst = nb
                .iter()
                .map(|&j| (dist2(i, j), j))
                .fold((f64::NEG_INFINITY, 0), |a, b| if b > a { b } else { a });
            for j in 0..coords.len() {
                if j == i || nb.contains(&j) {
                    continue;
                }
                assert!(
                    (dist2(i, j), j) > worst,
                    "unit {j} closer to {i} than chosen neighbor"
                );
            }
        }
    }

    #[test]
    fn knn_ties_resolve_to_smaller_index() {
        // Units 1, 2, 3 all at distance 1 from unit 0.
        let coords = [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)];
        let w = knn_weights(&coords, 2).unwrap();
        assert_eq!(w.neighbors(0), vec![1, 2]);
    }

    #[test]
    fn knn_rejects_bad_arguments() {
        let coords = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        assert!(matches!(
            knn_weights(&coords[..1], 1),
            Err(Error::TooFewUnits(1))
        ));
        assert!(matches!(
            knn_weights(&coords, 0),
            Err(Error::BadNeighbourCount { .. })
        ));
        assert!(matches!(
            knn_weights(&coords, 3),
            Err(Error::BadNeighbourCount { .. })
        ));
    }

    #[test]
    fn knn_can_be_asymmetric() {
        // Unit 2 snaps to 1, but 1's nearest is 0; asymmetry must survive.
        let w = knn_weights(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)], 1).unwrap();
        assert!(!w.is_symmetric());
    }

    #[test]
    fn rook_queen_bishop_neighbor_counts_on_3x3() {
        let cells = lattice_cells(3, 3);
        let center = 4;
        let corner = 0;
        let rook = contiguity_weights(&cells, ContiguityRule::Rook).unwrap();
        let queen = contiguity_weights(&cells, ContiguityRule::Queen).unwrap();
        let bishop = contiguity_weights(&cells, ContiguityRule::Bishop).unwrap();
        assert_eq!(rook.row(center).len(), 4);
        assert_eq!(queen.row(center).len(), 8);
        assert_eq!(bishop.row(corner).len(), 1);
        assert_eq!(bishop.neighbors(corner), vec![center]);
        for w in [&rook, &queen, &bishop] {
            assert!(w.is_symmetric());
        }
    }

    #[test]
    fn queen_is_rook_union_bishop() {
        let cells = lattice_cells(4, 5);
        let rook = contiguity_weights(&cells, ContiguityRule::Rook).unwrap();
        let queen = contiguity_weights(&cells, ContiguityRule::Queen).unwrap();
        let bishop = contiguity_weights(&cells, ContiguityRule::Bishop).unwrap();
        assert_eq!(
            (rook.to_dense() + bishop.to_dense() - queen.to_dense()).amax(),
            0.0
        );
    }

    #[test]
    fn duplicate_cells_are_rejected() {
        assert!(matches!(
            contiguity_weights(&[(0, 0), (0, 1), (0, 0)], ContiguityRule::Rook),
            Err(Error::DuplicateCell { row: 0, col: 0 })
        ));
    }

    #[test]
    fn row_standardize_divides_by_degree() {
        let cells = lattice_cells(3, 3);
        let rook = contiguity_weights(&cells, ContiguityRule::Rook).unwrap();
        let (std, isolated) = rook.row_standardize();
        assert!(isolated.is_empty());
        assert!(std.is_row_standardized());
        for &(_, w) in std.row(4) {
            assert_eq!(w, 0.25);
        }
        // Idempotent, exactly: degree 4 divides binary weights without error.
        let (again, _) = std.row_standardize();
        assert_eq!(again, std);
    }

    #[test]
    fn isolated_units_are_reported_not_fatal() {
        let w = SpatialWeights::from_entries(3, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let (std, isolated) = w.row_standardize();
        assert_eq!(isolated, vec![2]);
        assert!(std.row(2).is_empty());
        assert_eq!(std.row(0), &[(1, 1.0)]);
    }

    #[test]
    fn from_entries_validates() {
        assert!(matches!(
            SpatialWeights::from_entries(2, &[(0, 2, 1.0)]),
            Err(Error::WeightIndexOutOfRange { .. })
        ));
        assert!(matches!(
            SpatialWeights::from_entries(2, &[(1, 1, 1.0)]),
            Err(Error::DiagonalWeight(1))
        ));
        assert!(matches!(
            SpatialWeights::from_entries(2, &[(0, 1, -0.5)]),
            Err(Error::NegativeWeight { .. })
        ));
        assert!(matches!(
            SpatialWeights::from_entries(2, &[(0, 1, 1.0), (0, 1, 2.0)]),
            Err(Error::DuplicateCell { .. })
        ));
        let w = SpatialWeights::from_entries(3, &[(0, 1, 0.0), (1, 2, 3.0)]).unwrap();
        assert_eq!(w.nnz(), 1);
    }

    #[test]
    fn symmetrized_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_range(0.0..1.0) < 0.2 {
                    entries.push((i, j, rng.random_range(0.0..2.0)));
                }
            }
        }
        let w = SpatialWeights::from_entries(n, &entries).unwrap();
        let dense = w.to_dense();
        let oracle = (&dense + dense.transpose()) * 0.5;
        let sym = w.symmetrized();
        assert!((sym.to_dense() - &oracle).amax() < 1e-15);

        let v = nalgebra::DVector::from_fn(n, |i, _| (i as f64).sin());
        assert!((sym.apply(&v) - &oracle * &v).amax() < 1e-14);

        let m = DMatrix::from_fn(n, 4, |i, c| ((i * 7 + c) as f64).cos());
        assert!((sym.apply_matrix(&m) - &oracle * &m).amax() < 1e-14);
    }

    #[test]
    fn symmetrized_single_entry_splits_in_half() {
        let w = SpatialWeights::from_entries(3, &[(1, 2, 1.0)]).unwrap();
        let dense = w.symmetrized().to_dense();
        assert_eq!(dense[(1, 2)], 0.5);
        assert_eq!(dense[(2, 1)], 0.5);
        assert_eq!(dense.sum(), 1.0);
    }

    #[test]
    fn symmetric_weights_commute_with_symmetrization() {
        let cells = lattice_cells(4, 4);
        let rook = contiguity_weights(&cells, ContiguityRule::Rook).unwrap();
        assert!((rook.symmetrized().to_dense() - rook.to_dense()).amax() < 1e-15);
    }

    #[test]
    fn left_multiply_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let w = knn_weights(
            &(0..20)
                .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
                .collect::<Vec<_>>(),
            4,
        )
        .unwrap();
        let m = DMatrix::from_fn(20, 3, |i, c| ((i + c) as f64).sqrt());
        assert!((w.left_multiply(&m) - w.to_dense() * &m).amax() < 1e-13);
    }

    #[test]
    fn edge_list_builds_symmetric_binary_weights() {
        let w = edge_list_weights(4, &[(0, 1), (1, 2), (3, 0)]).unwrap();
        assert!(w.is_symmetric());
        assert_eq!(w.total_weight(), 6.0);
        assert_eq!(w.neighbors(0), vec![1, 3]);
        assert!(matches!(
            edge_list_weights(3, &[(0, 0)]),
            Err(Error::DiagonalWeight(0))
        ));
        assert!(matches!(
            edge_list_weights(3, &[(0, 1), (1, 0)]),
            Err(Error::DuplicateCell { .. })
        ));
    }

    proptest! {
        #[test]
        fn knn_rows_have_exactly_k_entries(
            seed in 0u64..1000,
            n in 6usize..40,
            k in 1usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coords: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let w = knn_weights(&coords, k).unwrap();
            for i in 0..n {
                prop_assert_eq!(w.row(i).len(), k);
                prop_assert!(w.neighbors(i).iter().all(|&j| j != i));
            }
        }

        #[test]
        fn row_standardized_rows_sum_to_one(
            seed in 0u64..1000,
            n in 3usize..25,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut entries = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_range(0.0..1.0) < 0.3 {
                        entries.push((i, j, rng.random_range(0.1..3.0)));
                    }
                }
            }
            let w = SpatialWeights::from_entries(n, &entries).unwrap();
            let (std, isolated) = w.row_standardize();
            for i in 0..n {
                let total: f64 = std.row(i).iter().map(|&(_, w)| w).sum();
                if isolated.contains(&i) {
                    prop_assert_eq!(total, 0.0);
                } else {
                    prop_assert!((total - 1.0).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn contiguity_is_always_symmetric(
            nrows in 1usize..6,
            ncols in 1usize..6,
            rule in prop_oneof![
                Just(ContiguityRule::Rook),
                Just(ContiguityRule::Queen),
                Just(ContiguityRule::Bishop)
            ],
        ) {
            let w = contiguity_weights(&lattice_cells(nrows, ncols), rule).unwrap();
            prop_assert!(w.is_symmetric());
            let dense = w.symmetrized().to_dense();
            prop_assert!((dense - w.to_dense()).amax() < 1e-15);
        }
    }
}
