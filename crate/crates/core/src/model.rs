//! Input data model: the assay matrix, the assay-to-sample mapping and the
//! negative-control designation.
//!
//! Every type checks its own invariants on construction. [`Dataset`] keeps its
//! parts public so that callers can assemble one by hand; [`validate_dataset`]
//! re-checks the whole bundle and reports every violated invariant at once.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Issue, Result};

/// The m x n data matrix (assays x variables) with row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AssayMatrix {
    pub values: DMatrix<f64>,
    pub assay_ids: Vec<String>,
    pub variable_ids: Vec<String>,
}

impl AssayMatrix {
    pub fn new(
        values: DMatrix<f64>,
        assay_ids: Vec<String>,
        variable_ids: Vec<String>,
    ) -> Result<Self> {
        let matrix = AssayMatrix {
            values,
            assay_ids,
            variable_ids,
        };
        let issues = matrix.issues();
        if issues.is_empty() {
            Ok(matrix)
        } else {
            Err(Error::Invalid(issues))
        }
    }

    /// Labels rows `a0, a1, ...` and columns `g0, g1, ...`.
    pub fn with_generated_ids(values: DMatrix<f64>) -> Result<Self> {
        let assay_ids = (0..values.nrows()).map(|i| format!("a{i}")).collect();
        let variable_ids = (0..values.ncols()).map(|j| format!("g{j}")).collect();
        Self::new(values, assay_ids, variable_ids)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn issues(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let (m, n) = self.values.shape();
        if m < 2 {
            issues.push(Issue::TooFewAssays { rows: m });
        }
        if n < 1 {
            issues.push(Issue::NoVariables);
        }
        if self.assay_ids.len() != m {
            issues.push(Issue::AssayIdCount {
                ids: self.assay_ids.len(),
                rows: m,
            });
        }
        if self.variable_ids.len() != n {
            issues.push(Issue::VariableIdCount {
                ids: self.variable_ids.len(),
                cols: n,
            });
        }
        for (id, first, second) in duplicates(&self.assay_ids) {
            issues.push(Issue::DuplicateAssayId { id, first, second });
        }
        for (id, first, second) in duplicates(&self.variable_ids) {
            issues.push(Issue::DuplicateVariableId { id, first, second });
        }
        // Column-major storage: report the first bad entry in (row, col) order
        // of storage, which is enough to locate the problem.
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % m.max(1), pos / m.max(1));
            issues.push(Issue::NonFinite {
                row,
                col,
                value: self.values[(row, col)],
            });
        }
        issues
    }

    pub fn variable_index(&self) -> HashMap<&str, usize> {
        self.variable_ids
            .iter()
            .enumerate()
            .map(|(j, id)| (id.as_str(), j))
            .collect()
    }
}

fn duplicates(ids: &[String]) -> Vec<(String, usize, usize)> {
    let mut seen: HashMap<&str, usize> = HashMap::with_capacity(ids.len());
    let mut out = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(&first) = seen.get(id.as_str()) {
            out.push((id.clone(), first, i));
        } else {
            seen.insert(id, i);
        }
    }
    out
}

/// Assay-to-sample mapping, the m x s indicator matrix `M` held in index form.
///
/// Samples are indexed in first-appearance order. The replicate sets are the
/// preimages of each sample index and are kept in increasing assay order, so
/// the block-diagonal layout of `M` is realised by indexing rather than by
/// permuting rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix {
    assay_to_sample: Vec<usize>,
    sample_ids: Vec<String>,
    replicate_sets: Vec<Vec<usize>>,
}

impl MappingMatrix {
    /// Builds the mapping from an explicit assignment vector.
    pub fn from_assignment(assay_to_sample: Vec<usize>, sample_ids: Vec<String>) -> Result<Self> {
        let mut issues = Vec::new();
        if assay_to_sample.is_empty() {
            issues.push(Issue::EmptyMapping);
        }
        let s = sample_ids.len();
        let mut replicate_sets = vec![Vec::new(); s];
        for (row, &h) in assay_to_sample.iter().enumerate() {
            if h >= s {
                issues.push(Issue::SampleIndexOutOfRange {
                    row,
                    sample: h,
                    samples: s,
                });
            } else {
                replicate_sets[h].push(row);
            }
        }
        for (h, set) in replicate_sets.iter().enumerate() {
            if set.is_empty() {
                issues.push(Issue::UnassayedSample {
                    sample: sample_ids[h].clone(),
                });
            }
        }
        for (id, _, _) in duplicates(&sample_ids) {
            issues.push(Issue::DuplicateSampleId { id });
        }
        if !issues.is_empty() {
            return Err(Error::Invalid(issues));
        }
        Ok(MappingMatrix {
            assay_to_sample,
            sample_ids,
            replicate_sets,
        })
    }

    /// Every assay its own sample (`M = I_m`); sample ids copy the assay ids.
    pub fn singletons(assay_ids: &[String]) -> Result<Self> {
        Self::from_assignment((0..assay_ids.len()).collect(), assay_ids.to_vec())
    }

    pub fn m(&self) -> usize {
        self.assay_to_sample.len()
    }

    pub fn s(&self) -> usize {
        self.sample_ids.len()
    }

    /// Largest admissible number of unwanted factors, `m - s`.
    pub fn k_max(&self) -> usize {
        self.m() - self.s()
    }

    pub fn assay_to_sample(&self) -> &[usize] {
        &self.assay_to_sample
    }

    pub fn sample_of(&self, assay: usize) -> usize {
        self.assay_to_sample[assay]
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn replicate_sets(&self) -> &[Vec<usize>] {
        &self.replicate_sets
    }

    /// Column sums of the indicator matrix, `m_h`.
    pub fn set_sizes(&self) -> Vec<usize> {
        self.replicate_sets.iter().map(Vec::len).collect()
    }

    /// Dense m x s 0/1 indicator matrix.
    pub fn indicator(&self) -> DMatrix<f64> {
        let mut ind = DMatrix::zeros(self.m(), self.s());
        for (i, &h) in self.assay_to_sample.iter().enumerate() {
            ind[(i, h)] = 1.0;
        }
        ind
    }

    /// Reads back `(assay_id, sample_id)` pairs in assay order.
    pub fn pairs<'a>(&'a self, assay_ids: &'a [String]) -> Vec<(&'a str, &'a str)> {
        assay_ids
            .iter()
            .zip(&self.assay_to_sample)
            .map(|(a, &h)| (a.as_str(), self.sample_ids[h].as_str()))
            .collect()
    }

    /// Rows whose sample has at least two assays.
    pub fn replicated_rows(&self) -> Vec<usize> {
        (0..self.m())
            .filter(|&i| self.replicate_sets[self.assay_to_sample[i]].len() >= 2)
            .collect()
    }

    /// The mapping restricted to `rows`, which must be a union of whole
    /// replicate sets. Samples keep their relative order.
    pub fn restrict(&self, rows: &[usize]) -> Result<Self> {
        let mut new_index: HashMap<usize, usize> = HashMap::new();
        let mut origin = Vec::new();
        let mut assignment = Vec::with_capacity(rows.len());
        for &row in rows {
            if row >= self.m() {
                return Err(Error::Dimension(format!(
                    "row {row} outside mapping of {} assays",
                    self.m()
                )));
            }
            let h = self.assay_to_sample[row];
            let idx = *new_index.entry(h).or_insert_with(|| {
                origin.push(h);
                origin.len() - 1
            });
            assignment.push(idx);
        }
        let sample_ids = origin.iter().map(|&h| self.sample_ids[h].clone()).collect();
        let restricted = Self::from_assignment(assignment, sample_ids)?;
        for (set, &h) in restricted.replicate_sets.iter().zip(&origin) {
            if set.len() != self.replicate_sets[h].len() {
                return Err(Error::Dimension(format!(
                    "rows split the replicate set of sample '{}'",
                    self.sample_ids[h]
                )));
            }
        }
        Ok(restricted)
    }

    /// Block-diagonal stacking `diag(self, other)`.
    pub fn block_diag(&self, other: &MappingMatrix) -> Result<Self> {
        let offset = self.s();
        let assignment = self
            .assay_to_sample
            .iter()
            .copied()
            .chain(other.assay_to_sample.iter().map(|&h| h + offset))
            .collect();
        let sample_ids = self
            .sample_ids
            .iter()
            .chain(&other.sample_ids)
            .cloned()
            .collect();
        Self::from_assignment(assignment, sample_ids)
    }

    fn consistency_issues(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let s = self.s();
        if self.replicate_sets.len() != s {
            issues.push(Issue::Other(format!(
                "{} replicate sets for {s} samples",
                self.replicate_sets.len()
            )));
            return issues;
        }
        let mut rebuilt = vec![Vec::new(); s];
        for (row, &h) in self.assay_to_sample.iter().enumerate() {
            if h >= s {
                issues.push(Issue::SampleIndexOutOfRange {
                    row,
                    sample: h,
                    samples: s,
                });
            } else {
                rebuilt[h].push(row);
            }
        }
        for (h, (a, b)) in rebuilt.iter().zip(&self.replicate_sets).enumerate() {
            if a.is_empty() {
                issues.push(Issue::UnassayedSample {
                    sample: self.sample_ids[h].clone(),
                });
            } else if a != b {
                issues.push(Issue::ReplicateSetsInconsistent { sample: h });
            }
        }
        issues
    }
}

/// Builds the mapping from `(assay_id, sample_id)` pairs. Samples are indexed
/// in order of first appearance.
pub fn build_mapping<A, S>(pairs: &[(A, S)]) -> Result<MappingMatrix>
where
    A: AsRef<str>,
    S: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(Error::Invalid(vec![Issue::EmptyMapping]));
    }
    let assay_ids: Vec<String> = pairs.iter().map(|(a, _)| a.as_ref().to_owned()).collect();
    let dups = duplicates(&assay_ids);
    if !dups.is_empty() {
        return Err(Error::Invalid(
            dups.into_iter()
                .map(|(id, first, second)| Issue::DuplicateAssayId { id, first, second })
                .collect(),
        ));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut sample_ids = Vec::new();
    let mut assignment = Vec::with_capacity(pairs.len());
    for (_, sample) in pairs {
        let sample = sample.as_ref();
        let h = *index.entry(sample).or_insert_with(|| {
            sample_ids.push(sample.to_owned());
            sample_ids.len() - 1
        });
        assignment.push(h);
    }
    MappingMatrix::from_assignment(assignment, sample_ids)
}

/// Sorted, duplicate-free set of negative-control column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMask {
    indices: Vec<usize>,
}

impl ControlMask {
    /// Indices must already be strictly increasing.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Invalid(vec![Issue::NoControls]));
        }
        let mut issues = Vec::new();
        for (pos, w) in indices.windows(2).enumerate() {
            if w[0] == w[1] {
                issues.push(Issue::DuplicateControl { index: w[0] });
            } else if w[0] > w[1] {
                issues.push(Issue::UnsortedControls { position: pos + 1 });
            }
        }
        if issues.is_empty() {
            Ok(ControlMask { indices })
        } else {
            Err(Error::Invalid(issues))
        }
    }

    /// Sorts first; duplicates are still an error.
    pub fn from_unordered(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        Self::new(indices)
    }

    /// The first `n_c` columns.
    pub fn leading(n_c: usize) -> Result<Self> {
        Self::new((0..n_c).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Column indices not in the mask, in increasing order.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n.saturating_sub(self.len()));
        let mut it = self.indices.iter().peekable();
        for j in 0..n {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                out.push(j);
            }
        }
        out
    }

    /// True when the mask is exactly `0..len`.
    pub fn is_leading_block(&self) -> bool {
        self.indices.iter().enumerate().all(|(i, &j)| i == j)
    }
}

/// Splits `Y` into `(Y_c, Y_d)`: control columns in mask order and the
/// remaining columns in original order.
pub fn split_columns(
    y: &DMatrix<f64>,
    controls: &ControlMask,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = y.ncols();
    if let Some(&bad) = controls.indices().iter().find(|&&j| j >= n) {
        return Err(Error::Invalid(vec![Issue::ControlOutOfRange {
            index: bad,
            cols: n,
        }]));
    }
    let yc = select_columns(y, controls.indices());
    let yd = select_columns(y, &controls.complement(n));
    Ok((yc, yd))
}

pub(crate) fn select_columns(y: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    if !cols.is_empty() && cols.iter().enumerate().all(|(i, &j)| j == cols[0] + i) {
        return y.columns(cols[0], cols.len()).into_owned();
    }
    let m = y.nrows();
    let mut out = DMatrix::zeros(m, cols.len());
    for (k, &j) in cols.iter().enumerate() {
        out.column_mut(k).copy_from(&y.column(j));
    }
    out
}

pub(crate) fn select_rows(y: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), y.ncols(), |i, j| y[(rows[i], j)])
}

/// Model inputs bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub matrix: AssayMatrix,
    pub mapping: MappingMatrix,
    pub controls: ControlMask,
}

impl Dataset {
    pub fn new(matrix: AssayMatrix, mapping: MappingMatrix, controls: ControlMask) -> Result<Self> {
        let d = Dataset {
            matrix,
            mapping,
            controls,
        };
        validate_dataset(&d)?;
        Ok(d)
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.matrix.values
    }

    pub fn control_columns(&self) -> DMatrix<f64> {
        select_columns(&self.matrix.values, self.controls.indices())
    }
}

/// Checks every invariant of the bundle and returns all violations together.
pub fn validate_dataset(d: &Dataset) -> Result<()> {
    let mut issues = d.matrix.issues();
    issues.extend(d.mapping.consistency_issues());
    if d.mapping.m() != d.matrix.nrows() {
        issues.push(Issue::MappingLength {
            mapping: d.mapping.m(),
            rows: d.matrix.nrows(),
        });
    }
    if d.controls.is_empty() {
        issues.push(Issue::NoControls);
    }
    for w in d.controls.indices().windows(2) {
        if w[0] >= w[1] {
            issues.push(Issue::DuplicateControl { index: w[1] });
        }
    }
    let n = d.matrix.ncols();
    for &j in d.controls.indices() {
        if j >= n {
            issues.push(Issue::ControlOutOfRange { index: j, cols: n });
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(issues))
    }
}
