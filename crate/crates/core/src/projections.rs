//! Projection operators, Gram matrices, symmetric eigendecomposition and
//! matrix norms.
//!
//! `P_M` and `P_{M^perp}` are applied as replicate-set mean removal in
//! O(mn); `P_{1^perp}` is column centering. No m x m projection matrix is ever
//! formed.
//!
//! Gram products are accumulated over fixed column blocks. Each block is a
//! plain dense product and the block partials are combined in block order with
//! compensated (Neumaier) summation, so results do not depend on the number of
//! worker threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::MappingMatrix;

/// Column block width for Gram accumulation. Fixed so that the reduction tree
/// does not depend on the thread count.
const GRAM_BLOCK: usize = 2048;

/// `P_{1^perp} Y`: subtract each column's mean.
pub fn center_columns(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = y.clone();
    center_columns_mut(&mut out);
    out
}

pub(crate) fn center_columns_mut(y: &mut DMatrix<f64>) {
    let m = y.nrows();
    if m == 0 {
        return;
    }
    for mut col in y.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / m as f64;
        col.add_scalar_mut(-mean);
    }
}

fn check_rows(y: &DMatrix<f64>, mapping: &MappingMatrix) -> Result<()> {
    if y.nrows() != mapping.m() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows but mapping covers {} assays",
            y.nrows(),
            mapping.m()
        )));
    }
    Ok(())
}

/// `P_M Y`: every entry replaced by the mean over its replicate set.
pub fn replicate_means(y: &DMatrix<f64>, mapping: &MappingMatrix) -> Result<DMatrix<f64>> {
    check_rows(y, mapping)?;
    let mut out = y.clone();
    let sets = mapping.replicate_sets();
    for mut col in out.column_iter_mut() {
        for set in sets {
            let mean = set.iter().map(|&i| col[i]).sum::<f64>() / set.len() as f64;
            for &i in set {
                col[i] = mean;
            }
        }
    }
    Ok(out)
}

/// `P_{M^perp} Y`: each row minus the mean of its replicate set. Singleton
/// sets give zero rows.
pub fn replicate_residuals(y: &DMatrix<f64>, mapping: &MappingMatrix) -> Result<DMatrix<f64>> {
    check_rows(y, mapping)?;
    let mut out = y.clone();
    let sets = mapping.replicate_sets();
    for mut col in out.column_iter_mut() {
        for set in sets {
            if set.len() == 1 {
                col[set[0]] = 0.0;
                continue;
            }
            let mean = set.iter().map(|&i| col[i]).sum::<f64>() / set.len() as f64;
            for &i in set {
                col[i] -= mean;
            }
        }
    }
    Ok(out)
}

/// `P_{M^perp} Y Y' P_{M^perp}`, the m x m residual Gram matrix.
pub fn residual_gram(y: &DMatrix<f64>, mapping: &MappingMatrix) -> Result<DMatrix<f64>> {
    let r = replicate_residuals(y, mapping)?;
    Ok(gram(&r))
}

/// `A A'` for a wide matrix, accumulated blockwise with compensation.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let g = cross_gram(a, a);
    symmetrize(g)
}

/// `A B'` for two matrices sharing their column count.
pub fn cross_gram(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "cross_gram: column counts differ");
    let n = a.ncols();
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(GRAM_BLOCK)
        .map(|start| (start, GRAM_BLOCK.min(n - start)))
        .collect();
    if blocks.len() <= 1 {
        return a * b.transpose();
    }
    let partials: Vec<DMatrix<f64>> = blocks
        .par_iter()
        .map(|&(start, len)| {
            let ab = a.columns(start, len);
            let bb = b.columns(start, len);
            ab * bb.transpose()
        })
        .collect();
    compensated_sum(a.nrows(), b.nrows(), &partials)
}

fn compensated_sum(rows: usize, cols: usize, parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut sum = DMatrix::<f64>::zeros(rows, cols);
    let mut comp = DMatrix::<f64>::zeros(rows, cols);
    for part in parts {
        for ((s, c), &x) in sum.iter_mut().zip(comp.iter_mut()).zip(part.iter()) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }
    sum + comp
}

pub(crate) fn symmetrize(mut g: DMatrix<f64>) -> DMatrix<f64> {
    let m = g.nrows();
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Tolerances for the symmetric eigensolver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Required per-pair residual `|S u - lambda u| <= tol * (1 + lambda_max)`.
    pub residual_tol: f64,
    /// QR sweep cap handed to the solver.
    pub max_iter: usize,
    /// Eigenvalues at or below this are reported as structurally zero. `None`
    /// means `m * eps * lambda_max`.
    pub zero_threshold: Option<f64>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            residual_tol: 1e-8,
            max_iter: 100_000,
            zero_threshold: None,
        }
    }
}

/// Leading eigenpairs of a symmetric PSD matrix, in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    /// Orthonormal eigenvectors as columns.
    pub vectors: DMatrix<f64>,
    /// Non-increasing; entries at or below `zero_threshold` are set to 0.
    pub values: Vec<f64>,
    pub zero_threshold: f64,
}

impl SymmetricEigen {
    /// Number of eigenvalues above the zero threshold.
    pub fn rank(&self) -> usize {
        self.values.iter().take_while(|&&v| v > 0.0).count()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The leading `k` eigenvectors, `U_(k)`.
    pub fn leading(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }
}

fn max_asymmetry(s: &DMatrix<f64>) -> f64 {
    let m = s.nrows();
    let mut worst = 0.0f64;
    for j in 0..m {
        for i in (j + 1)..m {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

/// Top-`r` eigenpairs of a symmetric matrix.
///
/// Each eigenvector is signed so that its largest-magnitude entry is positive
/// (lowest index wins ties).
pub fn sym_eigen_desc(s: &DMatrix<f64>, r: usize, opts: &EigenOptions) -> Result<SymmetricEigen> {
    let m = s.nrows();
    if s.ncols() != m {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m,
            s.ncols()
        )));
    }
    if r == 0 || r > m {
        return Err(Error::Dimension(format!(
            "requested {r} eigenpairs of a {m}x{m} matrix"
        )));
    }
    let scale = s.amax().max(1.0);
    let asym = max_asymmetry(s);
    if asym > 1e-8 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let sym = symmetrize(s.clone());
    let eig = nalgebra::SymmetricEigen::try_new(sym.clone(), f64::EPSILON, opts.max_iter).ok_or(
        Error::NoConvergence {
            what: "symmetric eigendecomposition",
            iterations: opts.max_iter,
        },
    )?;

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(r);

    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let zero_threshold = opts
        .zero_threshold
        .unwrap_or(m as f64 * f64::EPSILON * lambda_max);

    let mut vectors = DMatrix::zeros(m, r);
    let mut values = Vec::with_capacity(r);
    for (out, &idx) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        orient(&mut v);
        vectors.column_mut(out).copy_from(&v);
        let lambda = eig.eigenvalues[idx];
        values.push(if lambda > zero_threshold { lambda } else { 0.0 });
    }

    let bound = opts.residual_tol * (1.0 + lambda_max);
    for (out, &idx) in order.iter().enumerate() {
        let u = vectors.column(out);
        let res = (&sym * u - u * eig.eigenvalues[idx]).norm();
        if res > bound {
            return Err(Error::NoConvergence {
                what: "symmetric eigendecomposition (residual check)",
                iterations: opts.max_iter,
            });
        }
    }

    Ok(SymmetricEigen {
        vectors,
        values,
        zero_threshold,
    })
}

fn orient(v: &mut DVector<f64>) {
    let mut best = 0usize;
    let mut best_abs = -1.0f64;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Orthonormal basis of the range of `P_{M^perp}`: Helmert contrasts within
/// each replicate set, `m - s` columns in total.
pub fn residual_basis(mapping: &MappingMatrix) -> DMatrix<f64> {
    let m = mapping.m();
    let mut q = DMatrix::zeros(m, mapping.k_max());
    let mut col = 0;
    for set in mapping.replicate_sets() {
        for t in 1..set.len() {
            let tf = t as f64;
            let norm = (tf * (tf + 1.0)).sqrt();
            for &i in &set[..t] {
                q[(i, col)] = 1.0 / norm;
            }
            q[(set[t], col)] = -tf / norm;
            col += 1;
        }
    }
    q
}

/// Eigendecomposition of a residual Gram matrix `S = P_{M^perp} Y Y' P_{M^perp}`
/// restricted to the range of `P_{M^perp}`.
///
/// Returns all `m - s` eigenpairs. Because the eigenvectors are built inside
/// that subspace, `U'1 = 0` and `U'M = 0` hold for every column, including
/// those with zero eigenvalue.
pub fn residual_eigen(
    s: &DMatrix<f64>,
    mapping: &MappingMatrix,
    opts: &EigenOptions,
) -> Result<SymmetricEigen> {
    if s.nrows() != mapping.m() || s.ncols() != mapping.m() {
        return Err(Error::Dimension(format!(
            "residual Gram is {}x{} but mapping covers {} assays",
            s.nrows(),
            s.ncols(),
            mapping.m()
        )));
    }
    let r = mapping.k_max();
    if r == 0 {
        return Err(Error::KOutOfRange { k: 1, max: 0 });
    }
    let q = residual_basis(mapping);
    let reduced = q.transpose() * s * &q;
    let inner = sym_eigen_desc(&reduced, r, opts)?;
    let mut vectors = &q * &inner.vectors;
    for mut col in vectors.column_iter_mut() {
        let mut v = col.clone_owned();
        orient(&mut v);
        col.copy_from(&v);
    }
    let m = mapping.m();
    let lambda_max = inner.values.first().copied().unwrap_or(0.0);
    let zero_threshold = opts
        .zero_threshold
        .unwrap_or(m as f64 * f64::EPSILON * lambda_max);
    let values = inner
        .values
        .iter()
        .map(|&v| if v > zero_threshold { v } else { 0.0 })
        .collect();
    Ok(SymmetricEigen {
        vectors,
        values,
        zero_threshold,
    })
}

/// Result of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const DEFAULT_POWER_MAX_ITER: usize = 50_000;

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// Rayleigh-quotient estimate. Stops once `|G x - rho x| <= tol * rho`.
pub fn top_eigenvalue(g: &DMatrix<f64>, tol: f64, max_iter: usize) -> PowerEstimate {
    let d = g.nrows();
    if d == 0 {
        return PowerEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    // Deterministic start with distinct entries, so it is not orthogonal to
    // the leading eigenvector of structured inputs.
    let golden = 0.618_033_988_749_894_9_f64;
    let mut x = DVector::from_fn(d, |i, _| 1.0 + ((i as f64 + 1.0) * golden).fract());
    x.normalize_mut();
    let mut rho = 0.0;
    for it in 1..=max_iter {
        let y = g * &x;
        let ynorm = y.norm();
        if ynorm == 0.0 {
            return PowerEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        rho = x.dot(&y);
        let resid = (&y - &x * rho).norm();
        if resid <= tol * rho.abs() {
            return PowerEstimate {
                value: rho,
                iterations: it,
                converged: true,
            };
        }
        x = y / ynorm;
    }
    PowerEstimate {
        value: rho,
        iterations: max_iter,
        converged: false,
    }
}

/// Spectral norm `sqrt(lambda_max(A'A))` by power iteration on the smaller of
/// `A'A` and `AA'`.
pub fn spectral_norm(a: &DMatrix<f64>, tol: f64) -> PowerEstimate {
    if a.is_empty() {
        return PowerEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let g = if a.nrows() <= a.ncols() {
        gram(a)
    } else {
        gram(&a.transpose())
    };
    let est = top_eigenvalue(&g, tol, DEFAULT_POWER_MAX_ITER);
    PowerEstimate {
        value: est.value.max(0.0).sqrt(),
        ..est
    }
}

/// Squared Euclidean (Frobenius) norm with compensated summation.
pub fn euclidean_norm_sq(a: &DMatrix<f64>) -> f64 {
    neumaier_sum(a.iter().map(|x| x * x))
}

pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Both sides of Weyl's inequality:
/// `(max_i |lambda_i(A) - lambda_i(B)|, ||A - B||)`.
pub fn weyl_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, f64)> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "weyl_gap needs equal square matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    for s in [a, b] {
        let asym = max_asymmetry(s);
        if asym > 1e-8 * s.amax().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
    }
    let sorted = |s: &DMatrix<f64>| {
        let mut v: Vec<f64> = symmetrize(s.clone()).symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(|x, y| y.total_cmp(x));
        v
    };
    let la = sorted(a);
    let lb = sorted(b);
    let lhs = la
        .iter()
        .zip(&lb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let rhs = sorted(&(a - b)).iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_mapping;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_mapping(m: usize, seed: u64) -> MappingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (m / 2).max(1);
        let mut assign: Vec<usize> = (0..m).map(|i| if i < s { i } else { rng.random_range(0..s) }).collect();
        // shuffle row order so replicate sets are interleaved
        for i in (1..m).rev() {
            let j = rng.random_range(0..=i);
            assign.swap(i, j);
        }
        let pairs: Vec<(String, String)> =
            assign.iter().enumerate().map(|(i, h)| (format!("a{i}"), format!("s{h}"))).collect();
        build_mapping(&pairs).unwrap()
    }

    /// Dense `M (M'M)^{-1} M'`.
    fn dense_pm(mapping: &MappingMatrix) -> DMatrix<f64> {
        let ind = mapping.indicator();
        let mtm = ind.transpose() * &ind;
        &ind * mtm.try_inverse().unwrap() * ind.transpose()
    }

    fn two_plus_one() -> MappingMatrix {
        build_mapping(&[("a", "x"), ("b", "x"), ("c", "y")]).unwrap()
    }

    #[test]
    fn centering_examples() {
        let y = DMatrix::from_column_slice(2, 2, &[2.0, 4.0, 7.0, 7.0]);
        let c = center_columns(&y);
        assert_eq!(c.column(0).as_slice(), &[-1.0, 1.0]);
        assert_eq!(c.column(1).as_slice(), &[0.0, 0.0]);
        let r = random(6, 5, 1);
        let once = center_columns(&r);
        assert!((center_columns(&once) - &once).amax() < 1e-12);
    }

    #[test]
    fn residual_and_mean_examples() {
        let y = DMatrix::from_column_slice(3, 1, &[2.0, 4.0, 7.0]);
        let map = two_plus_one();
        assert_eq!(replicate_residuals(&y, &map).unwrap().as_slice(), &[-1.0, 1.0, 0.0]);
        assert_eq!(replicate_means(&y, &map).unwrap().as_slice(), &[3.0, 3.0, 7.0]);

        let ids: Vec<String> = (0..4).map(|i| format!("a{i}")).collect();
        let eye = MappingMatrix::singletons(&ids).unwrap();
        let r = random(4, 3, 2);
        assert_eq!(replicate_residuals(&r, &eye).unwrap(), DMatrix::zeros(4, 3));
        assert_eq!(replicate_means(&r, &eye).unwrap(), r);
        assert_eq!(residual_gram(&r, &eye).unwrap(), DMatrix::zeros(4, 4));
        assert!(replicate_residuals(&r, &map).is_err());
    }

    #[test]
    fn projections_match_dense_oracle() {
        for seed in 0..5 {
            let map = random_mapping(8, seed);
            let y = random(8, 5, 100 + seed);
            let pm = dense_pm(&map);
            let pperp = DMatrix::identity(8, 8) - &pm;
            assert!((replicate_means(&y, &map).unwrap() - &pm * &y).amax() < 1e-10);
            assert!((replicate_residuals(&y, &map).unwrap() - &pperp * &y).amax() < 1e-10);
        }
    }

    #[test]
    fn residual_gram_matches_dense_oracle() {
        let map = random_mapping(6, 7);
        let y = random(6, 4, 8);
        let pperp = DMatrix::identity(6, 6) - dense_pm(&map);
        let oracle = &pperp * &y * y.transpose() * &pperp;
        let got = residual_gram(&y, &map).unwrap();
        assert!((got - &oracle).norm() <= 1e-9 * oracle.norm());
    }

    #[test]
    fn residual_gram_rank_bound() {
        for seed in 0..5 {
            let map = random_mapping(10, seed);
            for n in [3, 20] {
                let y = random(10, n, seed + 50);
                let g = residual_gram(&y, &map).unwrap();
                let svd = g.svd(false, false);
                let tol = 1e-10 * svd.singular_values.max();
                let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
                assert!(rank <= map.k_max().min(n));
            }
        }
    }

    #[test]
    fn blocked_gram_matches_plain_product() {
        let a = random(5, 3 * GRAM_BLOCK + 17, 3);
        let plain = &a * a.transpose();
        let blocked = gram(&a);
        assert!((blocked - &plain).amax() <= 1e-11 * plain.amax());
    }

    #[test]
    fn gram_reproducible_across_thread_counts() {
        let a = random(6, 5 * GRAM_BLOCK + 3, 4);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| gram(&a))
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn eigen_diagonal() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, 0.0]));
        let e = sym_eigen_desc(&s, 3, &EigenOptions::default()).unwrap();
        assert_eq!(e.values, vec![5.0, 2.0, 0.0]);
        assert_eq!(e.rank(), 2);
        assert_eq!(e.vectors.column(0).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            sym_eigen_desc(&s, 2, &EigenOptions::default()),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn eigen_rank_one_residual_gram() {
        // Noiseless rank-1 data over duplicate pairs.
        let pairs: Vec<(String, String)> =
            (0..8).map(|i| (format!("a{i}"), format!("s{}", i / 2))).collect();
        let map = build_mapping(&pairs).unwrap();
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.0, 2.0, 1.5]);
        let alpha = DVector::from_fn(30, |j, _| (j as f64 * 0.37).sin());
        let y = &w * alpha.transpose();
        let s = residual_gram(&y, &map).unwrap();
        let e = sym_eigen_desc(&s, 8, &EigenOptions::default()).unwrap();
        assert_eq!(e.rank(), 1);
        let er = residual_eigen(&s, &map, &EigenOptions::default()).unwrap();
        assert_eq!(er.rank(), 1);
        assert_eq!(er.len(), 4);
    }

    #[test]
    fn eigen_reconstruction_and_residuals() {
        let a = random(10, 10, 11);
        let s = &a + a.transpose();
        let e = sym_eigen_desc(&s, 10, &EigenOptions { zero_threshold: Some(f64::NEG_INFINITY), ..Default::default() }).unwrap();
        // values can be negative for an indefinite input when the zero floor is disabled
        let d = DMatrix::from_diagonal(&DVector::from_vec(e.values.clone()));
        let recon = &e.vectors * d * e.vectors.transpose();
        assert!((recon - &s).norm() <= 1e-8 * s.norm());
        let utu = e.vectors.transpose() * &e.vectors;
        assert!((utu - DMatrix::identity(10, 10)).amax() < 1e-10);
        for w in e.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn eigen_sign_convention() {
        let a = random(7, 7, 12);
        let s = &a * a.transpose();
        let e = sym_eigen_desc(&s, 7, &EigenOptions::default()).unwrap();
        for col in e.vectors.column_iter() {
            let (idx, _) = col.iter().enumerate().fold((0, -1.0), |best, (i, v)| {
                if v.abs() > best.1 { (i, v.abs()) } else { best }
            });
            assert!(col[idx] > 0.0);
        }
    }

    #[test]
    fn residual_eigen_orthogonal_to_mapping() {
        let map = random_mapping(12, 5);
        let y = random(12, 9, 6);
        let s = residual_gram(&y, &map).unwrap();
        let e = residual_eigen(&s, &map, &EigenOptions::default()).unwrap();
        assert_eq!(e.len(), map.k_max());
        let ones = DVector::from_element(12, 1.0);
        assert!((e.vectors.transpose() * ones).amax() < 1e-12);
        assert!((e.vectors.transpose() * map.indicator()).amax() < 1e-12);
        let q = residual_basis(&map);
        assert!((q.transpose() * &q - DMatrix::identity(map.k_max(), map.k_max())).amax() < 1e-12);
        // matches the plain decomposition on the non-zero part
        let plain = sym_eigen_desc(&s, e.rank(), &EigenOptions::default()).unwrap();
        for (a, b) in plain.values.iter().zip(&e.values) {
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn spectral_norm_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert_relative_eq!(spectral_norm(&a, 1e-12).value, 4.0, max_relative = 1e-10);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 4), 1e-12).value, 0.0);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        for seed in 0..10 {
            let a = random(7, 9, 20 + seed);
            let oracle = a.clone().svd(false, false).singular_values.max();
            let est = spectral_norm(&a, 1e-10);
            assert!(est.converged);
            assert_relative_eq!(est.value, oracle, max_relative = 1e-8);
            let tall = a.transpose();
            assert_relative_eq!(spectral_norm(&tall, 1e-10).value, oracle, max_relative = 1e-8);
        }
    }

    #[test]
    fn power_iteration_flags_cap() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.999_999, 0.5]));
        let est = top_eigenvalue(&g, 1e-14, 3);
        assert!(!est.converged);
        assert!(est.value > 0.9);
    }

    #[test]
    fn euclidean_norm_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(euclidean_norm_sq(&a), 30.0);
        assert_eq!(euclidean_norm_sq(&DMatrix::zeros(2, 3)), 0.0);
        let r = random(5, 6, 30);
        assert_relative_eq!(euclidean_norm_sq(&r), (r.transpose() * &r).trace(), max_relative = 1e-13);
    }

    #[test]
    fn weyl_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(weyl_gap(&a, &a).unwrap(), (0.0, 0.0));
        let (l, r) = weyl_gap(&a, &DMatrix::zeros(2, 2)).unwrap();
        assert_relative_eq!(l, 1.0);
        assert_relative_eq!(r, 1.0);
        assert!(weyl_gap(&a, &DMatrix::zeros(3, 3)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn residual_basis_is_orthonormal_and_orthogonal_to_m(m in 2usize..30, seed in any::<u64>()) {
                let map = random_mapping(m, seed);
                let q = residual_basis(&map);
                let id = DMatrix::<f64>::identity(q.ncols(), q.ncols());
                prop_assert!((q.transpose() * &q - id).amax() < 1e-12);
                prop_assert!((q.transpose() * map.indicator()).amax() < 1e-12);
            }

            #[test]
            fn weyl_bound_holds(n in 1usize..8, sa in any::<u64>(), sb in any::<u64>()) {
                let a0 = random(n, n, sa);
                let b0 = random(n, n, sb);
                let a = &a0 + a0.transpose();
                let b = &b0 + b0.transpose();
                let (lhs, rhs) = weyl_gap(&a, &b).unwrap();
                prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-14);
            }

            #[test]
            fn residual_gram_is_psd_and_annihilates_m(m in 2usize..20, n in 1usize..15, seed in any::<u64>()) {
                let map = random_mapping(m, seed);
                let y = random(m, n, seed ^ 0x5a5a);
                let g = residual_gram(&y, &map).unwrap();
                let scale = 1.0 + g.amax();
                prop_assert!((map.indicator().transpose() * &g).amax() < 1e-12 * scale);
                let min = g.symmetric_eigenvalues().min();
                prop_assert!(min > -1e-12 * scale);
            }
        }
    }
}
