//! The RUV-III estimator.
//!
//! For a chosen dimension `k`:
//!
//! 1. `U_(k)`: leading eigenvectors of `P_{M^perp} Y Y' P_{M^perp}`;
//! 2. `alpha_hat = U_(k)' Y`;
//! 3. `W_hat` regresses the centred controls `P_{1^perp} Y_c` on
//!    `alpha_hat_c'`, i.e. solves `W_hat (alpha_hat_c alpha_hat_c') =
//!    P_{1^perp} Y_c alpha_hat_c'`;
//! 4. `removed = W_hat alpha_hat`, `adjusted = Y - removed`.
//!
//! Eigen directions whose eigenvalue is structurally zero carry no residual
//! variation (`u' Y = 0` in exact arithmetic). A request for more directions
//! than the residual rank is served with the rank instead, which is the
//! pseudo-inverse reading of step 3; `Ruv3Fit::k_effective` records it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{select_columns, select_rows, validate_dataset, ControlMask, Dataset, MappingMatrix};
use crate::projections::{
    center_columns, cross_gram, gram, neumaier_sum, replicate_residuals, residual_eigen,
    symmetrize, EigenOptions, SymmetricEigen,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub eigen: EigenOptions,
    /// Smallest accepted reciprocal condition number of the k x k control
    /// system.
    pub rcond_guard: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            eigen: EigenOptions::default(),
            rcond_guard: 1e-12,
        }
    }
}

/// A fitted RUV-III adjustment.
#[derive(Debug, Clone)]
pub struct Ruv3Fit {
    /// Requested dimension.
    pub k: usize,
    /// Dimension actually used, `min(k, residual rank)`.
    pub k_effective: usize,
    /// Leading `k_effective` eigenpairs.
    pub eigen: SymmetricEigen,
    /// `k_effective x n`.
    pub alpha_hat: DMatrix<f64>,
    /// `m x k_effective`.
    pub w_hat: DMatrix<f64>,
    /// `W_hat alpha_hat`.
    pub removed: DMatrix<f64>,
    /// `Y - removed`.
    pub adjusted: DMatrix<f64>,
    /// Reciprocal condition number of the control system.
    pub rcond: f64,
}

/// `m - s`, the largest usable `k`.
pub fn k_max(mapping: &MappingMatrix) -> usize {
    mapping.k_max()
}

/// Eigendecomposition of the replicate residual Gram matrix of `d`, all
/// `m - s` pairs.
pub fn residual_eigen_of(d: &Dataset, opts: &EigenOptions) -> Result<SymmetricEigen> {
    let r = replicate_residuals(d.y(), &d.mapping)?;
    let s = gram(&r);
    residual_eigen(&s, &d.mapping, opts)
}

fn check_k(k: usize, max: usize) -> Result<()> {
    if k == 0 || k > max {
        return Err(Error::KOutOfRange { k, max });
    }
    Ok(())
}

/// Fits RUV-III with `k` unwanted factors.
pub fn fit(d: &Dataset, k: usize, opts: &FitOptions) -> Result<Ruv3Fit> {
    validate_dataset(d)?;
    check_k(k, d.mapping.k_max())?;
    let eigen = residual_eigen_of(d, &opts.eigen)?;
    fit_with_eigen(d, &eigen, k, opts)
}

/// Regression and subtraction steps given an already computed
/// eigendecomposition (at least `k` columns).
pub fn fit_with_eigen(
    d: &Dataset,
    eigen: &SymmetricEigen,
    k: usize,
    opts: &FitOptions,
) -> Result<Ruv3Fit> {
    check_k(k, eigen.len())?;
    let k_eff = k.min(eigen.rank());
    if k_eff == 0 {
        return Err(Error::NoResidualVariation);
    }
    let y = d.y();
    let u = eigen.leading(k_eff);
    let alpha_hat = u.tr_mul(y);
    let alpha_c = select_columns(&alpha_hat, d.controls.indices());
    let control_gram = gram(&alpha_c);
    let centered = center_columns(&d.control_columns());
    let rhs = cross_gram(&centered, &alpha_c);
    let (w_hat, rcond) = solve_right_spd(&rhs, &control_gram, k_eff, opts.rcond_guard)?;

    let removed = &w_hat * &alpha_hat;
    let adjusted = y - &removed;
    Ok(Ruv3Fit {
        k,
        k_effective: k_eff,
        eigen: SymmetricEigen {
            vectors: u,
            values: eigen.values[..k_eff].to_vec(),
            zero_threshold: eigen.zero_threshold,
        },
        alpha_hat,
        w_hat,
        removed,
        adjusted,
        rcond,
    })
}

/// Solves `X C = B` for symmetric positive definite `C` by Cholesky, after a
/// reciprocal-condition check on `C`.
fn solve_right_spd(
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    k: usize,
    guard: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let eig = c.symmetric_eigenvalues();
    let hi = eig.max();
    let lo = eig.min();
    let rcond = if hi > 0.0 { (lo / hi).max(0.0) } else { 0.0 };
    let chol = nalgebra::Cholesky::new(c.clone());
    match chol {
        Some(chol) if rcond >= guard => {
            let xt = chol.solve(&b.transpose());
            Ok((xt.transpose(), rcond))
        }
        chol => {
            let smallest_pivot = chol
                .map(|ch| {
                    ch.l_dirty()
                        .diagonal()
                        .iter()
                        .map(|d| d * d)
                        .fold(f64::INFINITY, f64::min)
                })
                .unwrap_or(lo);
            Err(Error::IllConditioned {
                k,
                smallest_pivot,
                rcond,
            })
        }
    }
}

/// `||W_hat alpha_hat||_2^2` evaluated as `tr[(W'W)(alpha alpha')]` in k x k
/// space.
pub fn removed_norm_sq(fit: &Ruv3Fit) -> f64 {
    let ww = fit.w_hat.tr_mul(&fit.w_hat);
    let aa = gram(&fit.alpha_hat);
    trace_of_product(&ww, &aa)
}

/// `tr(A B)` for symmetric `A`, `B`.
fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    neumaier_sum(a.iter().zip(b.iter()).map(|(x, y)| x * y))
}

/// How `alpha_hat = U' Y` is represented inside a [`FactorPath`].
#[derive(Debug, Clone)]
enum AlphaSource {
    /// `alpha_hat` stored explicitly, K x n.
    Direct(DMatrix<f64>),
    /// `alpha_hat = U_r' R_r`, where `R_r` are the replicate residuals of
    /// the rows in `rows` and `U_r` the matching rows of `U`.
    Residual {
        rows: Vec<usize>,
        u_r: DMatrix<f64>,
        residuals: DMatrix<f64>,
    },
}

/// Quantities shared by every `k <= K` for one dataset: the leading `K`
/// eigenvectors and `alpha_hat alpha_hat'`. Fits for nested `k` are leading
/// blocks of these.
#[derive(Debug, Clone)]
pub struct FactorPath {
    pub eigen: SymmetricEigen,
    /// `alpha_hat alpha_hat'`, K x K.
    pub alpha_gram: DMatrix<f64>,
    source: AlphaSource,
}

/// Control-dependent part of a [`FactorPath`].
#[derive(Debug, Clone)]
pub struct ControlPath {
    /// `alpha_hat_c alpha_hat_c'`, K x K.
    pub control_gram: DMatrix<f64>,
    /// `P_{1^perp} Y_c alpha_hat_c'`, m x K.
    pub cross: DMatrix<f64>,
}

fn leading_pairs(eigen: &SymmetricEigen, k_bound: usize) -> Result<SymmetricEigen> {
    check_k(k_bound, eigen.len())?;
    let k_eff = k_bound.min(eigen.rank());
    if k_eff == 0 {
        return Err(Error::NoResidualVariation);
    }
    Ok(SymmetricEigen {
        vectors: eigen.leading(k_eff),
        values: eigen.values[..k_eff].to_vec(),
        zero_threshold: eigen.zero_threshold,
    })
}

impl FactorPath {
    /// Forms `alpha_hat = U_(K)' Y` explicitly. `eigen` must hold at least
    /// `k_bound` columns.
    pub fn new(y: &DMatrix<f64>, eigen: &SymmetricEigen, k_bound: usize) -> Result<Self> {
        let eigen = leading_pairs(eigen, k_bound)?;
        let alpha_hat = eigen.vectors.tr_mul(y);
        let alpha_gram = gram(&alpha_hat);
        Ok(FactorPath {
            eigen,
            alpha_gram,
            source: AlphaSource::Direct(alpha_hat),
        })
    }

    /// Works from the replicate residuals `residuals` of the rows `rows`
    /// (all rows outside `rows` must be singletons). Uses
    /// `U' Y = U_r' R_r` and `alpha_hat alpha_hat' = Lambda`, so nothing of
    /// size K x n is formed.
    pub fn from_residuals(
        rows: Vec<usize>,
        residuals: DMatrix<f64>,
        eigen: &SymmetricEigen,
        k_bound: usize,
    ) -> Result<Self> {
        if residuals.nrows() != rows.len() {
            return Err(Error::Dimension(format!(
                "{} residual rows for {} row indices",
                residuals.nrows(),
                rows.len()
            )));
        }
        let eigen = leading_pairs(eigen, k_bound)?;
        let u_r = select_rows(&eigen.vectors, &rows);
        let alpha_gram = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigen.values.clone()));
        Ok(FactorPath {
            eigen,
            alpha_gram,
            source: AlphaSource::Residual {
                rows,
                u_r,
                residuals,
            },
        })
    }

    /// Number of usable directions (`min(K, residual rank)`).
    pub fn depth(&self) -> usize {
        self.alpha_gram.nrows()
    }

    pub fn controls(&self, y: &DMatrix<f64>, controls: &ControlMask) -> ControlPath {
        let centered = center_columns(&select_columns(y, controls.indices()));
        match &self.source {
            AlphaSource::Direct(alpha_hat) => {
                let alpha_c = select_columns(alpha_hat, controls.indices());
                ControlPath {
                    control_gram: gram(&alpha_c),
                    cross: cross_gram(&centered, &alpha_c),
                }
            }
            AlphaSource::Residual { u_r, residuals, .. } => {
                let r_c = select_columns(residuals, controls.indices());
                let s_c = gram(&r_c);
                let x_c = cross_gram(&centered, &r_c);
                ControlPath {
                    control_gram: symmetrize(u_r.transpose() * s_c * u_r),
                    cross: x_c * u_r,
                }
            }
        }
    }

    /// `alpha_hat b'` for a `p x n` matrix `b`, K x p.
    pub fn alpha_cross(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.source {
            AlphaSource::Direct(alpha_hat) => cross_gram(alpha_hat, b),
            AlphaSource::Residual { u_r, residuals, .. } => u_r.tr_mul(&cross_gram(residuals, b)),
        }
    }

    /// Rows carrying nonzero eigenvector entries, `None` when all rows do.
    pub fn replicated_rows(&self) -> Option<&[usize]> {
        match &self.source {
            AlphaSource::Direct(_) => None,
            AlphaSource::Residual { rows, .. } => Some(rows),
        }
    }

    /// `W_hat_(k)` and the reciprocal condition of its control system.
    /// `k` beyond the residual rank is served at the rank.
    pub fn w_hat(&self, ctl: &ControlPath, k: usize, guard: f64) -> Result<(DMatrix<f64>, f64)> {
        let k = k.min(self.depth());
        let c = ctl.control_gram.view((0, 0), (k, k)).into_owned();
        let b = ctl.cross.columns(0, k).into_owned();
        solve_right_spd(&b, &c, k, guard)
    }

    /// Leading `k x k` block of `alpha_hat alpha_hat'`.
    pub fn alpha_gram(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.depth());
        self.alpha_gram.view((0, 0), (k, k)).into_owned()
    }

    pub fn removed_norm_sq(&self, ctl: &ControlPath, k: usize, guard: f64) -> Result<f64> {
        let (w, _) = self.w_hat(ctl, k, guard)?;
        Ok(trace_of_product(&w.tr_mul(&w), &self.alpha_gram(k)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KStatus {
    Ok,
    Singular { rcond: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KScanResult {
    /// `norms_sq[k - 1] = ||W_hat_(k) alpha_hat_(k)||_2^2`; `-inf` when the
    /// control system at that `k` is singular.
    pub norms_sq: Vec<f64>,
    pub status: Vec<KStatus>,
    /// Smallest maximiser.
    pub k_hat: usize,
    pub k_bound: usize,
}

/// Evaluates `||W_hat_(k) alpha_hat_(k)||^2` for `k = 1..=K` from a single
/// eigendecomposition and returns the smallest maximiser.
pub fn k_scan(d: &Dataset, k_bound: usize, opts: &FitOptions) -> Result<KScanResult> {
    validate_dataset(d)?;
    check_k(k_bound, d.mapping.k_max())?;
    let eigen = residual_eigen_of(d, &opts.eigen)?;
    k_scan_with_eigen(d, &eigen, k_bound, opts)
}

pub fn k_scan_with_eigen(
    d: &Dataset,
    eigen: &SymmetricEigen,
    k_bound: usize,
    opts: &FitOptions,
) -> Result<KScanResult> {
    let path = FactorPath::new(d.y(), eigen, k_bound)?;
    let ctl = path.controls(d.y(), &d.controls);
    let mut norms_sq = Vec::with_capacity(k_bound);
    let mut status = Vec::with_capacity(k_bound);
    for k in 1..=k_bound {
        match path.removed_norm_sq(&ctl, k, opts.rcond_guard) {
            Ok(v) => {
                norms_sq.push(v);
                status.push(KStatus::Ok);
            }
            Err(Error::IllConditioned { rcond, .. }) => {
                log::warn!("k = {k}: singular control system (rcond {rcond:.3e}), excluded");
                norms_sq.push(f64::NEG_INFINITY);
                status.push(KStatus::Singular { rcond });
            }
            Err(e) => return Err(e),
        }
    }
    let mut k_hat = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, &v) in norms_sq.iter().enumerate() {
        if v > best {
            best = v;
            k_hat = i + 1;
        }
    }
    if k_hat == 0 {
        return Err(Error::IllConditioned {
            k: 1,
            smallest_pivot: 0.0,
            rcond: 0.0,
        });
    }
    Ok(KScanResult {
        norms_sq,
        status,
        k_hat,
        k_bound,
    })
}
