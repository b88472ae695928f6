//! The sparse crossed design: responses, features, and the observation
//! pattern of two crossed grouping factors.
//!
//! The incidence matrices of the two factors are never materialized.
//! Each observation stores its row level and column level as indices, and
//! every product with an incidence matrix is a segmented scatter or gather
//! over those index arrays. That is what keeps all downstream algebra O(N)
//! in both time and memory.

use crate::error::{Error, Result};

/// Which of the two crossed factors an operation acts on.
///
/// Factor A indexes the rows of the observation pattern, factor B the
/// columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    A,
    B,
}

/// One raw observation before index compaction.
#[derive(Debug, Clone)]
pub struct RawObservation {
    pub row_key: String,
    pub col_key: String,
    pub y: f64,
    pub features: Vec<f64>,
}

/// Maps compact level indices back to the original keys.
#[derive(Debug, Clone, Default)]
pub struct LevelMaps {
    pub row_levels: Vec<String>,
    pub col_levels: Vec<String>,
}

/// Immutable sparse crossed design.
///
/// Holds N observations on R row levels crossed with C column levels,
/// a binary response, and a dense N x p feature matrix stored row-major
/// by observation. Index arrays are always in-range, every level appears
/// at least once, and no (row, col) pair appears twice.
#[derive(Debug, Clone)]
pub struct CrossedDesign {
    n_rows: usize,
    n_cols: usize,
    n_features: usize,
    row_of: Vec<u32>,
    col_of: Vec<u32>,
    y: Vec<f64>,
    x: Vec<f64>,
}

/// Observation counts per level of each factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCounts {
    pub row_counts: Vec<usize>,
    pub col_counts: Vec<usize>,
}

impl CrossedDesign {
    /// Builds a design from already-compact indices, checking the
    /// invariants (index ranges, nonempty levels, binary response,
    /// no duplicate pairs).
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        n_features: usize,
        row_of: Vec<u32>,
        col_of: Vec<u32>,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self> {
        let n = row_of.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if n_features == 0 {
            return Err(Error::InvalidConfig(
                "a design needs at least one feature column; supply an explicit \
                 intercept column if there are no covariates"
                    .into(),
            ));
        }
        if col_of.len() != n || y.len() != n || x.len() != n * n_features {
            return Err(Error::InvalidConfig(
                "design arrays have inconsistent lengths".into(),
            ));
        }
        let mut row_seen = vec![false; n_rows];
        let mut col_seen = vec![false; n_cols];
        let mut pairs = std::collections::HashSet::with_capacity(n);
        for i in 0..n {
            let (r, c) = (row_of[i] as usize, col_of[i] as usize);
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidConfig(format!(
                    "observation {i} has level pair ({r}, {c}) outside ({n_rows}, {n_cols})"
                )));
            }
            row_seen[r] = true;
            col_seen[c] = true;
            if y[i] != 0.0 && y[i] != 1.0 {
                return Err(Error::NonBinaryResponse { index: i, value: y[i] });
            }
            if !pairs.insert((row_of[i], col_of[i])) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate (row, col) pair at observation {i}"
                )));
            }
        }
        if !row_seen.iter().all(|&s| s) || !col_seen.iter().all(|&s| s) {
            return Err(Error::InvalidConfig(
                "every row and column level must appear at least once".into(),
            ));
        }
        Ok(Self { n_rows, n_cols, n_features, row_of, col_of, y, x })
    }

    pub fn n_obs(&self) -> usize {
        self.row_of.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_levels(&self, factor: Factor) -> usize {
        match factor {
            Factor::A => self.n_rows,
            Factor::B => self.n_cols,
        }
    }

    pub fn row_of(&self) -> &[u32] {
        &self.row_of
    }

    pub fn col_of(&self) -> &[u32] {
        &self.col_of
    }

    /// Level index array for the given factor.
    pub fn levels_of(&self, factor: Factor) -> &[u32] {
        match factor {
            Factor::A => &self.row_of,
            Factor::B => &self.col_of,
        }
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Full feature matrix, row-major by observation.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Feature vector of one observation.
    #[inline]
    pub fn x_row(&self, n: usize) -> &[f64] {
        &self.x[n * self.n_features..(n + 1) * self.n_features]
    }

    /// Copies feature column `q` into `out`.
    pub fn copy_feature_column(&self, q: usize, out: &mut [f64]) {
        debug_assert!(q < self.n_features);
        debug_assert_eq!(out.len(), self.n_obs());
        for (n, slot) in out.iter_mut().enumerate() {
            *slot = self.x[n * self.n_features + q];
        }
    }

    /// Linear predictor X beta + a_i + b_j for the given parameters.
    pub fn linear_predictor(&self, beta: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut zeta = vec![0.0; self.n_obs()];
        self.linear_predictor_into(beta, a, b, &mut zeta);
        zeta
    }

    pub fn linear_predictor_into(&self, beta: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        assert_eq!(beta.len(), self.n_features);
        assert_eq!(a.len(), self.n_rows);
        assert_eq!(b.len(), self.n_cols);
        for n in 0..self.n_obs() {
            let xr = self.x_row(n);
            let mut eta = 0.0;
            for (xv, bv) in xr.iter().zip(beta) {
                eta += xv * bv;
            }
            out[n] = eta + a[self.row_of[n] as usize] + b[self.col_of[n] as usize];
        }
    }
}

/// Validates raw keyed observations and compacts them into a design with
/// contiguous zero-based indices.
///
/// Levels are numbered in order of first appearance. A repeated
/// (row, col) pair keeps the values of its last occurrence, in the slot
/// where the pair first appeared.
pub fn validate_and_compact(raw: &[RawObservation]) -> Result<(CrossedDesign, LevelMaps)> {
    use std::collections::HashMap;

    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n_features = raw[0].features.len();
    for (i, obs) in raw.iter().enumerate() {
        if obs.features.len() != n_features {
            return Err(Error::FeatureLengthMismatch {
                index: i,
                expected: n_features,
                got: obs.features.len(),
            });
        }
        if obs.y != 0.0 && obs.y != 1.0 {
            return Err(Error::NonBinaryResponse { index: i, value: obs.y });
        }
    }

    let mut row_ids: HashMap<&str, u32> = HashMap::new();
    let mut col_ids: HashMap<&str, u32> = HashMap::new();
    let mut maps = LevelMaps::default();
    let mut pair_slot: HashMap<(u32, u32), usize> = HashMap::new();

    let mut row_of = Vec::with_capacity(raw.len());
    let mut col_of = Vec::with_capacity(raw.len());
    let mut y = Vec::with_capacity(raw.len());
    let mut x = Vec::with_capacity(raw.len() * n_features);

    for obs in raw {
        let r = *row_ids.entry(obs.row_key.as_str()).or_insert_with(|| {
            maps.row_levels.push(obs.row_key.clone());
            (maps.row_levels.len() - 1) as u32
        });
        let c = *col_ids.entry(obs.col_key.as_str()).or_insert_with(|| {
            maps.col_levels.push(obs.col_key.clone());
            (maps.col_levels.len() - 1) as u32
        });
        match pair_slot.get(&(r, c)) {
            Some(&slot) => {
                // last occurrence wins
                y[slot] = obs.y;
                x[slot * n_features..(slot + 1) * n_features].copy_from_slice(&obs.features);
            }
            None => {
                pair_slot.insert((r, c), row_of.len());
                row_of.push(r);
                col_of.push(c);
                y.push(obs.y);
                x.extend_from_slice(&obs.features);
            }
        }
    }

    // Deduplication can only remove repeats of existing pairs, so every
    // assigned level still has at least one observation.
    let design = CrossedDesign::from_parts(
        maps.row_levels.len(),
        maps.col_levels.len(),
        n_features,
        row_of,
        col_of,
        y,
        x,
    )?;
    Ok((design, maps))
}

/// Exact per-level observation counts for both factors.
pub fn group_counts(design: &CrossedDesign) -> GroupCounts {
    let mut row_counts = vec![0usize; design.n_rows()];
    let mut col_counts = vec![0usize; design.n_cols()];
    for n in 0..design.n_obs() {
        row_counts[design.row_of()[n] as usize] += 1;
        col_counts[design.col_of()[n] as usize] += 1;
    }
    GroupCounts { row_counts, col_counts }
}
