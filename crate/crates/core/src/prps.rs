//! Pseudo-replicates of pseudo-samples.
//!
//! When a study has few or no technical replicates, assays sharing a
//! biology label and an unwanted-variation label are averaged into a
//! pseudo-sample; pseudo-samples with the same biology but different
//! unwanted labels are then declared replicates of one another. The
//! extended data stacks the pseudo-assays above the originals:
//!
//! ```text
//! Y = [ A_a Y_0 ]     M = diag(M_pr, M_0)
//!     [   Y_0   ]
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{select_rows, AssayMatrix, Dataset, MappingMatrix};
use crate::projections::{
    gram, replicate_residuals, residual_eigen, spectral_norm, EigenOptions, PowerEstimate,
    SymmetricEigen,
};
use crate::ruv3::{fit_with_eigen, FitOptions, Ruv3Fit};

/// Limits applied when building or validating a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrpsOptions {
    /// Smallest accepted pseudo-sample group, at least 2.
    pub min_group_size: usize,
    /// Largest group; bigger cells are truncated to their first `b1` assays.
    pub b1: usize,
    /// Largest number of groups any one assay may belong to.
    pub b2: usize,
}

impl Default for PrpsOptions {
    fn default() -> Self {
        PrpsOptions {
            min_group_size: 3,
            b1: 32,
            b2: 4,
        }
    }
}

/// One pseudo-sample: the average of `members` (original assay indices),
/// declared a replicate of every other group with the same `set`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoSample {
    pub id: String,
    pub set: String,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrpsPlan {
    /// Number of original assays the plan refers to.
    pub m0: usize,
    pub groups: Vec<PseudoSample>,
    pub options: PrpsOptions,
    /// Human-readable notes on cells left out of the plan.
    pub dropped: Vec<String>,
}

impl PrpsPlan {
    /// Validates an explicit plan.
    pub fn new(
        m0: usize,
        groups: Vec<PseudoSample>,
        options: PrpsOptions,
        dropped: Vec<String>,
    ) -> Result<Self> {
        let plan = PrpsPlan {
            m0,
            groups,
            options,
            dropped,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let o = self.options;
        if o.min_group_size < 2 {
            return Err(Error::Plan(format!(
                "min_group_size {} below 2",
                o.min_group_size
            )));
        }
        if o.b1 < o.min_group_size {
            return Err(Error::Plan(format!(
                "b1 = {} smaller than min_group_size = {}",
                o.b1, o.min_group_size
            )));
        }
        if o.b2 == 0 {
            return Err(Error::Plan("b2 must be positive".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::EmptyPlan("plan has no pseudo-samples".into()));
        }
        let mut problems = Vec::new();
        let mut ids = HashSet::new();
        let mut set_sizes: HashMap<&str, usize> = HashMap::new();
        let mut usage = vec![0usize; self.m0];
        for g in &self.groups {
            if !ids.insert(g.id.as_str()) {
                problems.push(format!("pseudo-sample id '{}' repeated", g.id));
            }
            *set_sizes.entry(g.set.as_str()).or_default() += 1;
            let n = g.members.len();
            if n < o.min_group_size {
                problems.push(format!(
                    "group '{}' has {n} members, minimum is {}",
                    g.id, o.min_group_size
                ));
            }
            if n > o.b1 {
                problems.push(format!("group '{}' has {n} members, cap b1 is {}", g.id, o.b1));
            }
            let mut seen = HashSet::new();
            for &i in &g.members {
                if i >= self.m0 {
                    problems.push(format!(
                        "group '{}' member {i} out of range for {} assays",
                        g.id, self.m0
                    ));
                } else if !seen.insert(i) {
                    problems.push(format!("group '{}' lists assay {i} twice", g.id));
                } else {
                    usage[i] += 1;
                }
            }
        }
        for (i, &u) in usage.iter().enumerate() {
            if u > o.b2 {
                problems.push(format!("assay {i} used in {u} groups, cap b2 is {}", o.b2));
            }
        }
        let mut sets: Vec<_> = set_sizes.into_iter().filter(|&(_, c)| c < 2).collect();
        sets.sort();
        for (set, _) in sets {
            problems.push(format!("pseudo-replicate set '{set}' has a single pseudo-sample"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Plan(problems.join("; ")))
        }
    }

    /// Number of pseudo-assays, `m_pa`.
    pub fn m_pa(&self) -> usize {
        self.groups.len()
    }

    /// Pseudo-replicate set labels in first-appearance order.
    pub fn sets(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.groups
            .iter()
            .filter(|g| seen.insert(g.set.as_str()))
            .map(|g| g.set.as_str())
            .collect()
    }

    /// Number of pseudo-replicate sets, `s_pr`.
    pub fn s_pr(&self) -> usize {
        self.sets().len()
    }

    /// Serializes the plan with members written as assay ids.
    pub fn to_text(&self, assay_ids: &[String]) -> Result<String> {
        if assay_ids.len() != self.m0 {
            return Err(Error::Plan(format!(
                "{} assay ids for a plan over {} assays",
                assay_ids.len(),
                self.m0
            )));
        }
        let bad = |s: &str| s.contains(['\t', '\n', '\r']);
        let mut out = String::from("#prps-plan v1\n");
        let o = self.options;
        let _ = writeln!(out, "m0\t{}", self.m0);
        let _ = writeln!(out, "min_group_size\t{}", o.min_group_size);
        let _ = writeln!(out, "b1\t{}", o.b1);
        let _ = writeln!(out, "b2\t{}", o.b2);
        for g in &self.groups {
            if bad(&g.id) || bad(&g.set) {
                return Err(Error::Plan(format!("label '{}' contains a tab or newline", g.id)));
            }
            let mut line = format!("group\t{}\t{}", g.id, g.set);
            for &i in &g.members {
                let id = &assay_ids[i];
                if bad(id) {
                    return Err(Error::Plan(format!("assay id '{id}' contains a tab or newline")));
                }
                line.push('\t');
                line.push_str(id);
            }
            out.push_str(&line);
            out.push('\n');
        }
        for d in &self.dropped {
            let _ = writeln!(out, "dropped\t{}", d.replace(['\t', '\n', '\r'], " "));
        }
        Ok(out)
    }

    /// Parses the format written by [`PrpsPlan::to_text`] and validates it.
    pub fn from_text(text: &str, assay_ids: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = assay_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut m0 = None;
        let mut options = PrpsOptions::default();
        let mut groups = Vec::new();
        let mut dropped = Vec::new();
        let err = |line: usize, msg: String| Error::Plan(format!("line {line}: {msg}"));
        let num = |line: usize, v: Option<&str>| -> Result<usize> {
            v.and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| err(line, "expected a non-negative integer".into()))
        };
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let mut fields = raw.split('\t');
            match fields.next().unwrap_or("") {
                "m0" => m0 = Some(num(line, fields.next())?),
                "min_group_size" => options.min_group_size = num(line, fields.next())?,
                "b1" => options.b1 = num(line, fields.next())?,
                "b2" => options.b2 = num(line, fields.next())?,
                "group" => {
                    let id = fields.next().ok_or_else(|| err(line, "missing group id".into()))?;
                    let set = fields.next().ok_or_else(|| err(line, "missing set id".into()))?;
                    let members = fields
                        .map(|a| {
                            index
                                .get(a)
                                .copied()
                                .ok_or_else(|| err(line, format!("unknown assay id '{a}'")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    groups.push(PseudoSample {
                        id: id.to_string(),
                        set: set.to_string(),
                        members,
                    });
                }
                "dropped" => dropped.push(fields.collect::<Vec<_>>().join("\t")),
                other => return Err(err(line, format!("unknown record '{other}'"))),
            }
        }
        let m0 = m0.unwrap_or(assay_ids.len());
        if m0 != assay_ids.len() {
            return Err(Error::Plan(format!(
                "plan covers {m0} assays but {} ids were supplied",
                assay_ids.len()
            )));
        }
        PrpsPlan::new(m0, groups, options, dropped)
    }
}

/// Builds one pseudo-sample per (biology, unwanted) cell with at least
/// `min_group_size` assays and groups them into pseudo-replicate sets by
/// biology. Biology labels left with fewer than two pseudo-samples are
/// dropped with a warning.
pub fn build_prps_plan<S: AsRef<str>>(
    biology: &[S],
    unwanted: &[S],
    options: PrpsOptions,
) -> Result<PrpsPlan> {
    if biology.len() != unwanted.len() {
        return Err(Error::Dimension(format!(
            "{} biology labels but {} unwanted labels",
            biology.len(),
            unwanted.len()
        )));
    }
    if options.min_group_size < 2 {
        return Err(Error::Plan(format!(
            "min_group_size {} below 2",
            options.min_group_size
        )));
    }
    let m0 = biology.len();
    let mut bio_order: Vec<&str> = Vec::new();
    let mut cells: HashMap<&str, Vec<(&str, Vec<usize>)>> = HashMap::new();
    for i in 0..m0 {
        let b = biology[i].as_ref();
        let u = unwanted[i].as_ref();
        let entry = cells.entry(b).or_insert_with(|| {
            bio_order.push(b);
            Vec::new()
        });
        match entry.iter_mut().find(|(label, _)| *label == u) {
            Some((_, members)) => members.push(i),
            None => entry.push((u, vec![i])),
        }
    }

    let mut groups = Vec::new();
    let mut dropped = Vec::new();
    for b in bio_order {
        let mut kept = Vec::new();
        for (u, mut members) in cells.remove(b).unwrap_or_default() {
            if members.len() < options.min_group_size {
                let note = format!(
                    "cell ({b}, {u}) has {} assays, below minimum {}",
                    members.len(),
                    options.min_group_size
                );
                log::warn!("{note}");
                dropped.push(note);
                continue;
            }
            if members.len() > options.b1 {
                log::warn!(
                    "cell ({b}, {u}) has {} assays, using the first {}",
                    members.len(),
                    options.b1
                );
                members.truncate(options.b1);
            }
            kept.push(PseudoSample {
                id: format!("{b}|{u}"),
                set: b.to_string(),
                members,
            });
        }
        if kept.len() < 2 {
            let note = format!(
                "biology '{b}' yields {} pseudo-sample(s), no replication possible",
                kept.len()
            );
            log::warn!("{note}");
            dropped.push(note);
            continue;
        }
        groups.extend(kept);
    }
    if groups.is_empty() {
        return Err(Error::EmptyPlan(if dropped.is_empty() {
            "no assays".into()
        } else {
            dropped.join("; ")
        }));
    }
    PrpsPlan::new(m0, groups, options, dropped)
}

/// Splits each label's assays, in index order, into a first and a second
/// half and pairs the two halves as pseudo-replicates.
pub fn halves_plan<S: AsRef<str>>(labels: &[S], options: PrpsOptions) -> Result<PrpsPlan> {
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        let l = l.as_ref();
        members
            .entry(l)
            .or_insert_with(|| {
                order.push(l);
                Vec::new()
            })
            .push(i);
    }
    let mut groups = Vec::with_capacity(2 * order.len());
    for l in order {
        let all = &members[l];
        let half = all.len() / 2;
        groups.push(PseudoSample {
            id: format!("{l}|first"),
            set: l.to_string(),
            members: all[..half].to_vec(),
        });
        groups.push(PseudoSample {
            id: format!("{l}|second"),
            set: l.to_string(),
            members: all[half..].to_vec(),
        });
    }
    PrpsPlan::new(labels.len(), groups, options, Vec::new())
}

/// Sparse row-stochastic matrix `A_a`: row `g` averages the members of
/// pseudo-sample `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingMatrix {
    m0: usize,
    rows: Vec<Vec<usize>>,
}

impl AveragingMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.m0
    }

    pub fn row_members(&self, g: usize) -> &[usize] {
        &self.rows[g]
    }

    /// Sum of the stored weights of each row, `n_g * fl(1/n_g)` rounded once.
    pub fn row_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let n = r.len() as f64;
                n * (1.0 / n)
            })
            .collect()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.m0);
        for (g, r) in self.rows.iter().enumerate() {
            let w = 1.0 / r.len() as f64;
            for &i in r {
                a[(g, i)] = w;
            }
        }
        a
    }

    /// `A_a Y`, each row the arithmetic mean of its member rows.
    pub fn apply(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.m0 {
            return Err(Error::Dimension(format!(
                "averaging matrix has {} columns, data has {} rows",
                self.m0,
                y.nrows()
            )));
        }
        let n = y.ncols();
        let mut out = DMatrix::zeros(self.rows.len(), n);
        for (g, r) in self.rows.iter().enumerate() {
            let w = r.len() as f64;
            for j in 0..n {
                let col = y.column(j);
                out[(g, j)] = r.iter().map(|&i| col[i]).sum::<f64>() / w;
            }
        }
        Ok(out)
    }

    pub fn spectral_norm(&self, tol: f64) -> PowerEstimate {
        spectral_norm(&self.dense(), tol)
    }
}

/// Builds `A_a` for a validated plan; rows follow plan group order.
pub fn averaging_matrix(plan: &PrpsPlan, m0: usize) -> Result<AveragingMatrix> {
    if plan.m0 != m0 {
        return Err(Error::Plan(format!(
            "plan covers {} assays, expected {m0}",
            plan.m0
        )));
    }
    plan.validate()?;
    Ok(AveragingMatrix {
        m0,
        rows: plan.groups.iter().map(|g| g.members.clone()).collect(),
    })
}

/// Dataset enlarged with pseudo-assays.
#[derive(Debug, Clone)]
pub struct ExtendedDataset {
    /// Pseudo-assay rows first, then the originals.
    pub dataset: Dataset,
    pub m_pa: usize,
    /// Rows belonging to a replicate or pseudo-replicate set, increasing.
    pub replicated_rows: Vec<usize>,
    /// Mapping restricted to `replicated_rows`, `M_r`.
    pub reduced_mapping: MappingMatrix,
    /// Original member indices of each pseudo-row.
    pub provenance: Vec<Vec<usize>>,
}

impl ExtendedDataset {
    pub fn m0(&self) -> usize {
        self.dataset.m() - self.m_pa
    }

    /// Rows of `y` that correspond to original assays.
    pub fn original_rows(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        y.rows(self.m_pa, y.nrows() - self.m_pa).into_owned()
    }

    pub fn original_ids(&self) -> &[String] {
        &self.dataset.matrix.assay_ids[self.m_pa..]
    }
}

/// Stacks `A_a Y_0` above `Y_0` and extends the mapping to
/// `diag(M_pr, M_0)`.
pub fn extend_dataset(d0: &Dataset, plan: &PrpsPlan) -> Result<ExtendedDataset> {
    let m0 = d0.m();
    let a = averaging_matrix(plan, m0)?;
    let pseudo = a.apply(d0.y())?;
    let m_pa = pseudo.nrows();
    let n = d0.n();

    let existing: HashSet<&str> = d0.matrix.assay_ids.iter().map(String::as_str).collect();
    let mut pseudo_ids = Vec::with_capacity(m_pa);
    for g in &plan.groups {
        let id = format!("pseudo:{}", g.id);
        if existing.contains(id.as_str()) {
            return Err(Error::Plan(format!("pseudo-assay id '{id}' clashes with an assay id")));
        }
        pseudo_ids.push(id);
    }

    let mut values = DMatrix::zeros(m_pa + m0, n);
    values.rows_mut(0, m_pa).copy_from(&pseudo);
    values.rows_mut(m_pa, m0).copy_from(d0.y());
    let assay_ids = pseudo_ids
        .into_iter()
        .chain(d0.matrix.assay_ids.iter().cloned())
        .collect();
    let matrix = AssayMatrix::new(values, assay_ids, d0.matrix.variable_ids.clone())?;

    let sets = plan.sets();
    let set_index: HashMap<&str, usize> = sets.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let assignment = plan.groups.iter().map(|g| set_index[g.set.as_str()]).collect();
    let set_ids = sets.iter().map(|s| format!("pseudo:{s}")).collect();
    let m_pr = MappingMatrix::from_assignment(assignment, set_ids)?;
    let mapping = m_pr.block_diag(&d0.mapping)?;

    let replicated_rows = mapping.replicated_rows();
    let reduced_mapping = mapping.restrict(&replicated_rows)?;
    let dataset = Dataset::new(matrix, mapping, d0.controls.clone())?;
    Ok(ExtendedDataset {
        dataset,
        m_pa,
        replicated_rows,
        reduced_mapping,
        provenance: plan.groups.iter().map(|g| g.members.clone()).collect(),
    })
}

/// Residual eigendecomposition computed on the replicated rows only and
/// embedded back into all `m` rows with zeros elsewhere.
pub fn reduced_eigen(e: &ExtendedDataset, opts: &EigenOptions) -> Result<SymmetricEigen> {
    let y_r = select_rows(e.dataset.y(), &e.replicated_rows);
    let r = replicate_residuals(&y_r, &e.reduced_mapping)?;
    let s = gram(&r);
    let inner = residual_eigen(&s, &e.reduced_mapping, opts)?;
    let mut vectors = DMatrix::zeros(e.dataset.m(), inner.vectors.ncols());
    for (local, &row) in e.replicated_rows.iter().enumerate() {
        vectors.row_mut(row).copy_from(&inner.vectors.row(local));
    }
    Ok(SymmetricEigen {
        vectors,
        values: inner.values,
        zero_threshold: inner.zero_threshold,
    })
}

/// RUV-III on an extended dataset with the eigen step restricted to the
/// replicated block. Equal to [`crate::ruv3::fit`] on the full data.
pub fn fast_fit(e: &ExtendedDataset, k: usize, opts: &FitOptions) -> Result<Ruv3Fit> {
    let max = e.reduced_mapping.k_max();
    if k == 0 || k > max {
        return Err(Error::KOutOfRange { k, max });
    }
    let eigen = reduced_eigen(e, &opts.eigen)?;
    fit_with_eigen(&e.dataset, &eigen, k, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlMask;
    use crate::ruv3::fit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn singleton_dataset(y: DMatrix<f64>, n_c: usize) -> Dataset {
        let m = AssayMatrix::with_generated_ids(y).unwrap();
        let map = MappingMatrix::singletons(&m.assay_ids).unwrap();
        Dataset::new(m, map, ControlMask::leading(n_c).unwrap()).unwrap()
    }

    #[test]
    fn toy_plan() {
        let bio = labels(&["b", "b", "b", "b", "a", "a", "a", "a"]);
        let unw = labels(&["1", "1", "2", "2", "1", "1", "2", "2"]);
        let opts = PrpsOptions {
            min_group_size: 2,
            ..Default::default()
        };
        let plan = build_prps_plan(&bio, &unw, opts).unwrap();
        assert_eq!(plan.m_pa(), 4);
        assert_eq!(plan.s_pr(), 2);
        assert_eq!(plan.groups[0].members, vec![0, 1]);
        assert_eq!(plan.groups[3].members, vec![6, 7]);
        assert!(plan.dropped.is_empty());
    }

    #[test]
    fn single_cell_is_empty_plan() {
        let bio = labels(&["a"; 6]);
        let unw = labels(&["x"; 6]);
        let err = build_prps_plan(&bio, &unw, PrpsOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyPlan(_)));
    }

    #[test]
    fn small_cells_dropped() {
        let bio = labels(&["a", "a", "a", "a", "a", "a", "b", "b", "b", "b"]);
        let unw = labels(&["1", "1", "1", "2", "2", "2", "1", "1", "1", "2"]);
        let plan = build_prps_plan(&bio, &unw, PrpsOptions::default()).unwrap();
        assert_eq!(plan.m_pa(), 2);
        assert_eq!(plan.dropped.len(), 2);
    }

    #[test]
    fn min_group_size_below_two_rejected() {
        let bio = labels(&["a", "a"]);
        let opts = PrpsOptions {
            min_group_size: 1,
            ..Default::default()
        };
        assert!(matches!(build_prps_plan(&bio, &bio, opts), Err(Error::Plan(_))));
    }

    #[test]
    fn large_cells_truncated() {
        let bio = vec!["a"; 10];
        let unw: Vec<&str> = (0..10).map(|i| if i < 6 { "1" } else { "2" }).collect();
        let opts = PrpsOptions {
            min_group_size: 2,
            b1: 3,
            b2: 4,
        };
        let plan = build_prps_plan(&bio, &unw, opts).unwrap();
        assert_eq!(plan.groups[0].members, vec![0, 1, 2]);
        assert_eq!(plan.groups[1].members, vec![6, 7, 8]);
    }

    #[test]
    fn averaging_example() {
        let plan = PrpsPlan::new(
            4,
            vec![
                PseudoSample { id: "g0".into(), set: "s".into(), members: vec![0, 1] },
                PseudoSample { id: "g1".into(), set: "s".into(), members: vec![2, 3] },
            ],
            PrpsOptions { min_group_size: 2, ..Default::default() },
            vec![],
        )
        .unwrap();
        let a = averaging_matrix(&plan, 4).unwrap();
        let expected =
            DMatrix::from_row_slice(2, 4, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
        assert_eq!(a.dense(), expected);
        assert_eq!(a.row_sums(), vec![1.0, 1.0]);
        assert!(averaging_matrix(&plan, 5).is_err());
    }

    #[test]
    fn invalid_plans_rejected() {
        let opts = PrpsOptions { min_group_size: 2, b1: 4, b2: 1 };
        let g = |id: &str, set: &str, members: Vec<usize>| PseudoSample {
            id: id.into(),
            set: set.into(),
            members,
        };
        assert!(PrpsPlan::new(4, vec![g("x", "s", vec![0, 1]), g("y", "s", vec![1, 2])], opts, vec![]).is_err());
        assert!(PrpsPlan::new(4, vec![g("x", "s", vec![0, 1]), g("y", "t", vec![2, 3])], opts, vec![]).is_err());
        assert!(PrpsPlan::new(4, vec![g("x", "s", vec![0, 9]), g("y", "s", vec![2, 3])], opts, vec![]).is_err());
        assert!(PrpsPlan::new(4, vec![], opts, vec![]).is_err());
        assert!(PrpsPlan::new(4, vec![g("x", "s", vec![0, 1]), g("y", "s", vec![2, 3])], opts, vec![]).is_ok());
    }

    #[test]
    fn extension_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DMatrix::from_fn(4, 6, |_, _| StandardNormal.sample(&mut rng));
        let d0 = singleton_dataset(y.clone(), 3);
        let plan = halves_plan(&["t", "t", "t", "t"], PrpsOptions { min_group_size: 2, ..Default::default() }).unwrap();
        let e = extend_dataset(&d0, &plan).unwrap();
        assert_eq!(e.dataset.m(), 6);
        assert_eq!(e.dataset.mapping.s(), 1 + 4);
        assert_eq!(e.replicated_rows, vec![0, 1]);
        assert_eq!(e.reduced_mapping.m(), 2);
        for j in 0..6 {
            assert_eq!(e.dataset.y()[(0, j)], (y[(0, j)] + y[(1, j)]) / 2.0);
        }
        assert_eq!(e.original_rows(e.dataset.y()), y);
        assert_eq!(e.dataset.matrix.assay_ids[0], "pseudo:t|first");
    }

    #[test]
    fn simulation_layout_rows() {
        let s = 4;
        let m0 = 4 * s;
        let subtypes: Vec<String> = (0..m0).map(|i| format!("t{}", i % s)).collect();
        let plan = halves_plan(&subtypes, PrpsOptions { min_group_size: 2, ..Default::default() }).unwrap();
        assert_eq!(plan.m_pa(), 2 * s);
        let y = DMatrix::from_fn(m0, 5, |i, j| (i * 5 + j) as f64);
        let e = extend_dataset(&singleton_dataset(y, 2), &plan).unwrap();
        assert_eq!(e.dataset.m(), m0 + 2 * s);
    }

    #[test]
    fn text_round_trip() {
        let bio = labels(&["b", "b", "b", "b", "a", "a", "a", "a", "c"]);
        let unw = labels(&["1", "1", "2", "2", "1", "1", "2", "2", "1"]);
        let opts = PrpsOptions { min_group_size: 2, ..Default::default() };
        let plan = build_prps_plan(&bio, &unw, opts).unwrap();
        let ids: Vec<String> = (0..9).map(|i| format!("s{i}")).collect();
        let text = plan.to_text(&ids).unwrap();
        assert_eq!(PrpsPlan::from_text(&text, &ids).unwrap(), plan);
        assert!(PrpsPlan::from_text("group\tg\ts\tnope\n", &ids).is_err());
    }

    fn random_plan(rng: &mut ChaCha8Rng) -> PrpsPlan {
        let b1 = rng.random_range(2..=8);
        let b2 = rng.random_range(1..=4);
        let m0 = rng.random_range(4..=40);
        let opts = PrpsOptions { min_group_size: 2, b1, b2 };
        let mut usage = vec![0usize; m0];
        let mut groups = Vec::new();
        for set in 0..rng.random_range(1..=6) {
            for g in 0..rng.random_range(2..=4) {
                let size = rng.random_range(2..=b1);
                let mut members: Vec<usize> = (0..m0).filter(|&i| usage[i] < b2).collect();
                if members.len() < 2 {
                    break;
                }
                for i in (1..members.len()).rev() {
                    members.swap(i, rng.random_range(0..=i));
                }
                members.truncate(size);
                members.sort_unstable();
                for &i in &members {
                    usage[i] += 1;
                }
                groups.push(PseudoSample { id: format!("{set}.{g}"), set: set.to_string(), members });
            }
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for g in &groups {
            *counts.entry(g.set.clone()).or_default() += 1;
        }
        groups.retain(|g| counts[&g.set] >= 2);
        PrpsPlan { m0, groups, options: opts, dropped: vec![] }
    }

    #[test]
    fn norm_bound_on_random_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 100 {
            let plan = random_plan(&mut rng);
            if plan.validate().is_err() {
                continue;
            }
            let a = averaging_matrix(&plan, plan.m0).unwrap();
            assert!(a.row_sums().iter().all(|&s| s == 1.0));
            let norm = a.spectral_norm(1e-12);
            let svd = a.dense().singular_values().max();
            assert!((norm.value - svd).abs() <= 1e-8 * svd);
            let bound = ((plan.options.b1 * plan.options.b2) as f64).sqrt() / 2.0;
            assert!(svd <= bound + 1e-12, "{svd} > {bound}");
            checked += 1;
        }
    }

    #[test]
    fn fast_fit_matches_full_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let s = rng.random_range(2..=5);
            let m0 = 4 * s;
            let n = rng.random_range(10..=30);
            let y = DMatrix::from_fn(m0, n, |_, _| StandardNormal.sample(&mut rng));
            let d0 = singleton_dataset(y, n / 2);
            let sub: Vec<String> = (0..m0).map(|i| format!("t{}", i % s)).collect();
            let plan = halves_plan(&sub, PrpsOptions { min_group_size: 2, ..Default::default() }).unwrap();
            let e = extend_dataset(&d0, &plan).unwrap();
            let k = rng.random_range(1..=e.reduced_mapping.k_max().min(n / 2));
            let a = fast_fit(&e, k, &FitOptions::default()).unwrap();
            let b = fit(&e.dataset, k, &FitOptions::default()).unwrap();
            assert!((&a.removed - &b.removed).norm() <= 1e-9 * b.removed.norm());
        }
    }

    #[test]
    fn fast_fit_rejects_large_k() {
        let y = DMatrix::from_fn(8, 6, |i, j| ((i + 1) * (j + 2)) as f64 + (i * j) as f64 * 0.1);
        let plan = halves_plan(&["a", "b", "a", "b", "a", "b", "a", "b"], PrpsOptions { min_group_size: 2, ..Default::default() }).unwrap();
        let e = extend_dataset(&singleton_dataset(y, 3), &plan).unwrap();
        assert!(matches!(fast_fit(&e, 3, &FitOptions::default()), Err(Error::KOutOfRange { max: 2, .. })));
    }
}
