//! Observation index sets and the maps between matrix and vector views.
//!
//! Vectorization is column-major throughout: entry `(i, j)` of an `N × L`
//! matrix sits at position `j·N + i` of `vec(F)`, which is the ordering under
//! which `K_f = K_h ⊗ K_w` acts on `vec(F)`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;

/// `(row, column)` index of a matrix entry, 0-based.
pub type Entry = (usize, usize);

pub fn vec_index(entry: Entry, n_rows: usize) -> usize {
    entry.1 * n_rows + entry.0
}

pub fn entry_of(vec_index: usize, n_rows: usize) -> Entry {
    (vec_index % n_rows, vec_index / n_rows)
}

/// Column-major `vec(M)`.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &DVector<f64>, n_rows: usize, n_cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != n_rows * n_cols {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} cannot be reshaped to {}x{}",
            v.len(),
            n_rows,
            n_cols
        )));
    }
    Ok(DMatrix::from_column_slice(n_rows, n_cols, v.as_slice()))
}

fn check_bounds(entries: &[Entry], n_rows: usize, n_cols: usize) -> Result<()> {
    match entries.iter().find(|&&(i, j)| i >= n_rows || j >= n_cols) {
        Some(&(row, col)) => Err(Error::IndexOutOfBounds {
            row,
            col,
            n_rows,
            n_cols,
        }),
        None => Ok(()),
    }
}

/// Disjoint training and testing entry lists over an `N × L` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSplit {
    n_rows: usize,
    n_cols: usize,
    train: Vec<Entry>,
    test: Vec<Entry>,
    q: f64,
}

impl SampleSplit {
    /// Validates bounds, uniqueness and disjointness. The test list may be
    /// empty, in which case `q` is infinite.
    pub fn new(n_rows: usize, n_cols: usize, train: Vec<Entry>, test: Vec<Entry>) -> Result<Self> {
        check_bounds(&train, n_rows, n_cols)?;
        check_bounds(&test, n_rows, n_cols)?;
        let mut seen = HashSet::with_capacity(train.len() + test.len());
        for &e in train.iter().chain(test.iter()) {
            if !seen.insert(e) {
                return Err(Error::Precondition(format!(
                    "entry ({}, {}) appears more than once in the split",
                    e.0, e.1
                )));
            }
        }
        let q = 1.0 / train.len() as f64 + 1.0 / test.len() as f64;
        Ok(SampleSplit {
            n_rows,
            n_cols,
            train,
            test,
            q,
        })
    }

    /// Split whose test set is every entry not in `train`, in column-major order.
    pub fn with_complement(n_rows: usize, n_cols: usize, train: Vec<Entry>) -> Result<Self> {
        check_bounds(&train, n_rows, n_cols)?;
        let observed: HashSet<Entry> = train.iter().copied().collect();
        let test = (0..n_rows * n_cols)
            .map(|v| entry_of(v, n_rows))
            .filter(|e| !observed.contains(e))
            .collect();
        Self::new(n_rows, n_cols, train, test)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn train(&self) -> &[Entry] {
        &self.train
    }

    pub fn test(&self) -> &[Entry] {
        &self.test
    }

    pub fn m(&self) -> usize {
        self.train.len()
    }

    pub fn u(&self) -> usize {
        self.test.len()
    }

    pub fn n(&self) -> usize {
        self.m() + self.u()
    }

    /// `1/m + 1/u`.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// `S_n = S_m ∪ S_u`, training entries first.
    pub fn all(&self) -> impl Iterator<Item = Entry> + '_ {
        self.train.iter().chain(self.test.iter()).copied()
    }

    pub fn all_entries(&self) -> Vec<Entry> {
        self.all().collect()
    }
}

/// Draw `m + u` distinct entries uniformly without replacement; the first `m`
/// become the training set and the rest the test set.
pub fn uniform_split(n_rows: usize, n_cols: usize, m: usize, u: usize, seed: u64) -> Result<SampleSplit> {
    uniform_split_with(n_rows, n_cols, m, u, &mut rng::substream(seed, &[]))
}

pub fn uniform_split_with<R: rand::Rng + ?Sized>(
    n_rows: usize,
    n_cols: usize,
    m: usize,
    u: usize,
    rng: &mut R,
) -> Result<SampleSplit> {
    if m == 0 || u == 0 {
        return Err(Error::Precondition(format!(
            "uniform_split needs m >= 1 and u >= 1, got m={m}, u={u}"
        )));
    }
    let capacity = n_rows * n_cols;
    if m + u > capacity {
        return Err(Error::Capacity {
            requested: m + u,
            capacity,
        });
    }
    let picks = index::sample(rng, capacity, m + u).into_vec();
    let mut entries = picks.into_iter().map(|v| entry_of(v, n_rows));
    let train = entries.by_ref().take(m).collect();
    let test = entries.collect();
    SampleSplit::new(n_rows, n_cols, train, test)
}

/// `P_S(M)`: keeps the listed entries and zeroes the rest.
pub fn apply_mask(m: &DMatrix<f64>, indices: &[Entry]) -> Result<DMatrix<f64>> {
    check_bounds(indices, m.nrows(), m.ncols())?;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for &e in indices {
        out[e] = m[e];
    }
    Ok(out)
}

/// `S vec(M)` for the sampling matrix whose rows select `indices` in order.
pub fn gather(m: &DMatrix<f64>, indices: &[Entry]) -> Result<DVector<f64>> {
    check_bounds(indices, m.nrows(), m.ncols())?;
    Ok(DVector::from_iterator(indices.len(), indices.iter().map(|&e| m[e])))
}

/// `unvec(Sᵀ v)`.
pub fn scatter(v: &DVector<f64>, indices: &[Entry], n_rows: usize, n_cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != indices.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {} indices",
            v.len(),
            indices.len()
        )));
    }
    check_bounds(indices, n_rows, n_cols)?;
    let mut out = DMatrix::zeros(n_rows, n_cols);
    for (k, &e) in indices.iter().enumerate() {
        out[e] = v[k];
    }
    Ok(out)
}

/// Observed values `m̄ = S vec(M)` aligned with a split's training order.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationVector {
    values: DVector<f64>,
}

impl ObservationVector {
    pub fn new(split: &SampleSplit, values: DVector<f64>) -> Result<Self> {
        if values.len() != split.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} observations for a training set of size {}",
                values.len(),
                split.m()
            )));
        }
        Ok(ObservationVector { values })
    }

    pub fn from_matrix(split: &SampleSplit, m: &DMatrix<f64>) -> Result<Self> {
        if m.shape() != (split.n_rows(), split.n_cols()) {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but split grid is {}x{}",
                m.nrows(),
                m.ncols(),
                split.n_rows(),
                split.n_cols()
            )));
        }
        Ok(ObservationVector {
            values: gather(m, split.train())?,
        })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check(&self, split: &SampleSplit) -> Result<()> {
        if self.len() != split.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} observations for a training set of size {}",
                self.len(),
                split.m()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m22() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])
    }

    #[test]
    fn vec_is_column_major() {
        assert_eq!(vectorize(&m22()).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec_index((1, 0), 2), 1);
        assert_eq!(entry_of(2, 2), (0, 1));
    }

    #[test]
    fn split_requires_both_sets() {
        assert!(matches!(uniform_split(2, 2, 4, 0, 1), Err(Error::Precondition(_))));
        assert!(matches!(uniform_split(2, 2, 0, 1, 1), Err(Error::Precondition(_))));
        assert!(matches!(
            uniform_split(2, 2, 3, 2, 1),
            Err(Error::Capacity { requested: 5, capacity: 4 })
        ));
    }

    #[test]
    fn exhaustive_split_covers_grid_once() {
        let s = uniform_split(2, 2, 2, 2, 9).unwrap();
        let mut all = s.all_entries();
        all.sort();
        assert_eq!(all, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(s.q(), 1.0);
    }

    #[test]
    fn split_is_deterministic_in_seed() {
        let a = uniform_split(50, 50, 300, 2200, 42).unwrap();
        let b = uniform_split(50, 50, 300, 2200, 42).unwrap();
        let c = uniform_split(50, 50, 300, 2200, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.q() - (1.0 / 300.0 + 1.0 / 2200.0)).abs() == 0.0);
    }

    #[test]
    fn split_rejects_overlap_and_duplicates() {
        assert!(SampleSplit::new(2, 2, vec![(0, 0)], vec![(0, 0)]).is_err());
        assert!(SampleSplit::new(2, 2, vec![(0, 0), (0, 0)], vec![(1, 1)]).is_err());
        assert!(matches!(
            SampleSplit::new(2, 2, vec![(2, 0)], vec![]),
            Err(Error::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn mask_examples() {
        let m = m22();
        let all = [(0, 0), (0, 1), (1, 0), (1, 1)];
        assert_eq!(apply_mask(&m, &all).unwrap(), m);
        assert_eq!(apply_mask(&m, &[]).unwrap(), DMatrix::zeros(2, 2));
        assert_eq!(
            apply_mask(&m, &[(0, 1)]).unwrap(),
            DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0])
        );
    }

    #[test]
    fn scatter_single_value() {
        let out = scatter(&DVector::from_vec(vec![7.0]), &[(1, 0)], 2, 2).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 7.0, 0.0]));
        assert!(scatter(&DVector::from_vec(vec![7.0]), &[(2, 0)], 2, 2).is_err());
        assert!(scatter(&DVector::from_vec(vec![7.0, 1.0]), &[(0, 0)], 2, 2).is_err());
    }

    #[test]
    fn complement_split() {
        let s = SampleSplit::with_complement(2, 2, vec![(1, 1)]).unwrap();
        assert_eq!(s.test(), &[(0, 0), (1, 0), (0, 1)]);
    }
}
