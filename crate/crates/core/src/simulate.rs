//! Seeded simulation of `Y = W alpha + epsilon` under replicated designs,
//! the relative error `q = ||W_hat alpha_hat - W alpha||_2 / ||W alpha||_2`,
//! scenario grids and decay-slope estimation.
//!
//! Every dataset is a pure function of `(seed, m, replicate index)`: each
//! draw purpose (factors and noise, mean row, signal, trend) has its own
//! ChaCha stream, so grids run in any order and on any number of threads
//! with identical results.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Issue, Result};
use crate::model::{select_rows, AssayMatrix, ControlMask, Dataset, MappingMatrix};
use crate::prps::{averaging_matrix, extend_dataset, halves_plan, ExtendedDataset, PrpsOptions};
use crate::projections::{
    gram, neumaier_sum, replicate_residuals, residual_eigen, spectral_norm, symmetrize,
    EigenOptions, SymmetricEigen,
};
use crate::ruv3::{FactorPath, FitOptions};

/// Number of negative controls as a function of `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NcRule {
    /// `m^2 / 8`
    MSquaredOver8,
    /// `floor(m^(3/2) / 2)`
    MThreeHalvesOver2,
    /// `2m`
    TwoM,
}

impl NcRule {
    pub const ALL: [NcRule; 3] = [NcRule::MSquaredOver8, NcRule::MThreeHalvesOver2, NcRule::TwoM];

    pub fn n_c(self, m: usize) -> usize {
        match self {
            NcRule::MSquaredOver8 => m * m / 8,
            NcRule::MThreeHalvesOver2 => ((m as f64).powf(1.5) / 2.0).floor() as usize,
            NcRule::TwoM => 2 * m,
        }
    }
}

impl fmt::Display for NcRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NcRule::MSquaredOver8 => "m2_over_8",
            NcRule::MThreeHalvesOver2 => "m1.5_over_2",
            NcRule::TwoM => "2m",
        })
    }
}

impl FromStr for NcRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "m2_over_8" => Ok(NcRule::MSquaredOver8),
            "m1.5_over_2" => Ok(NcRule::MThreeHalvesOver2),
            "2m" => Ok(NcRule::TwoM),
            _ => Err(format!(
                "unknown nc_rule '{s}', expected one of m2_over_8, m1.5_over_2, 2m"
            )),
        }
    }
}

/// How the `m` assays are grouped into samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replication {
    /// `s = m/4` samples of four replicates; assay `i` belongs to sample `i/4`.
    SamplesIncreasing,
    /// `s = 4` samples of `m/4` replicates; assay `i` belongs to sample
    /// `i / (m/4)`.
    ReplicatesIncreasing,
}

impl Replication {
    pub fn s(self, m: usize) -> usize {
        match self {
            Replication::SamplesIncreasing => m / 4,
            Replication::ReplicatesIncreasing => 4,
        }
    }

    pub fn mapping(self, m: usize) -> Result<MappingMatrix> {
        let per = m / self.s(m);
        let assignment = (0..m).map(|i| i / per).collect();
        let ids = (0..self.s(m)).map(|h| format!("s{h}")).collect();
        MappingMatrix::from_assignment(assignment, ids)
    }
}

impl fmt::Display for Replication {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Replication::SamplesIncreasing => "samples_increasing",
            Replication::ReplicatesIncreasing => "replicates_increasing",
        })
    }
}

impl FromStr for Replication {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "samples_increasing" => Ok(Replication::SamplesIncreasing),
            "replicates_increasing" => Ok(Replication::ReplicatesIncreasing),
            _ => Err(format!(
                "unknown replication '{s}', expected samples_increasing or replicates_increasing"
            )),
        }
    }
}

/// Law of the entries of `W`, `alpha` and `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    Normal,
    /// Pareto with scale 1 and shape 5, standardised to mean 0, variance 1.
    ParetoStd,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::Normal => "normal",
            Distribution::ParetoStd => "pareto_std",
        })
    }
}

impl FromStr for Distribution {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normal" => Ok(Distribution::Normal),
            "pareto_std" => Ok(Distribution::ParetoStd),
            _ => Err(format!("unknown distribution '{s}', expected normal or pareto_std")),
        }
    }
}

/// The `k` used to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KChoice {
    Fixed(usize),
    /// `m - s` (or `m_r - s_r` for PRPS scenarios).
    Max,
}

impl KChoice {
    pub fn resolve(self, k_max: usize) -> usize {
        match self {
            KChoice::Fixed(k) => k,
            KChoice::Max => k_max,
        }
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Fixed(k) => write!(f, "{k}"),
            KChoice::Max => f.write_str("max"),
        }
    }
}

impl FromStr for KChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "max" {
            return Ok(KChoice::Max);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(KChoice::Fixed(k)),
            _ => Err(format!("invalid k '{s}', expected a positive integer or 'max'")),
        }
    }
}

/// Piecewise-linear temporal drift added to the mean of `W`.
///
/// For each factor `j` and subtype the run `x = i/m` is cut into `segments`
/// equal pieces; on each piece the trend rises linearly from `-U` to `U`
/// with an independent `U ~ Uniform(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrendSpec {
    pub segments: usize,
}

impl Default for TrendSpec {
    fn default() -> Self {
        TrendSpec { segments: 4 }
    }
}

/// Biological signal `M X beta` with `p` factors; `beta` vanishes on the
/// control columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpec {
    pub factors: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    /// Assay count (`m_0` for trend scenarios). `n = m^2`.
    pub m: usize,
    pub nc_rule: NcRule,
    pub replication: Replication,
    pub distribution: Distribution,
    pub k0: usize,
    pub k_choice: KChoice,
    /// Standard deviation of an added mean row, if any.
    pub mu_scale: Option<f64>,
    pub signal: Option<SignalSpec>,
    /// Presence selects the pseudo-replicate scenario.
    pub trend: Option<TrendSpec>,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            m: 16,
            nc_rule: NcRule::MSquaredOver8,
            replication: Replication::SamplesIncreasing,
            distribution: Distribution::Normal,
            k0: 3,
            k_choice: KChoice::Fixed(3),
            mu_scale: None,
            signal: None,
            trend: None,
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn with_m(&self, m: usize) -> Self {
        SimScenario { m, ..self.clone() }
    }

    pub fn n(&self) -> usize {
        self.m * self.m
    }

    pub fn n_c(&self) -> usize {
        self.nc_rule.n_c(self.m)
    }

    /// Largest usable `k`.
    pub fn k_max(&self) -> usize {
        if self.trend.is_some() {
            self.m / 4
        } else {
            self.m - self.replication.s(self.m)
        }
    }

    pub fn k(&self) -> usize {
        self.k_choice.resolve(self.k_max())
    }

    /// Collects every violated constraint.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let m = self.m;
        if m < 8 || m % 4 != 0 {
            p.push(format!("m = {m} must be a multiple of 4 and at least 8"));
            return p;
        }
        if self.k0 == 0 {
            p.push("k0 must be positive".into());
        }
        if self.n_c() < 1 {
            p.push(format!("nc_rule {} gives no controls at m = {m}", self.nc_rule));
        } else if self.n_c() < self.k0 {
            p.push(format!(
                "nc_rule {} gives n_c = {} < k0 = {} at m = {m}",
                self.nc_rule,
                self.n_c(),
                self.k0
            ));
        }
        let k = self.k();
        if k == 0 || k > self.k_max() {
            p.push(format!("k = {k} outside 1..={} at m = {m}", self.k_max()));
        }
        if let Some(s) = self.mu_scale {
            if !(s.is_finite() && s >= 0.0) {
                p.push(format!("mu_scale {s} must be finite and non-negative"));
            }
        }
        if let Some(sig) = self.signal {
            if sig.factors == 0 {
                p.push("signal.factors must be positive".into());
            }
            if !sig.scale.is_finite() {
                p.push("signal.scale must be finite".into());
            }
        }
        if let Some(t) = self.trend {
            if t.segments == 0 {
                p.push("trend.segments must be positive".into());
            }
            if self.replication != Replication::SamplesIncreasing {
                p.push("trend scenarios use subtypes increasing (s = m/4)".into());
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(p))
        }
    }
}

const STREAM_FACTORS: u64 = 0;
const STREAM_MU: u64 = 1;
const STREAM_SIGNAL: u64 = 2;
const STREAM_TREND: u64 = 3;

fn stream_rng(seed: u64, purpose: u64, m: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 60) ^ ((m as u64) << 30) ^ rep as u64);
    rng
}

/// One standardised Pareto(scale 1, shape 5) draw.
pub fn pareto_std<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    const MEAN: f64 = 5.0 / 4.0;
    let sd = (5.0f64 / 48.0).sqrt();
    let u: f64 = rng.random();
    let x = (1.0 - u).powf(-0.2);
    (x - MEAN) / sd
}

fn draw_matrix(rows: usize, cols: usize, dist: Distribution, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    match dist {
        Distribution::Normal => DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng)),
        Distribution::ParetoStd => DMatrix::from_fn(rows, cols, |_, _| pareto_std(rng)),
    }
}

/// A generated dataset together with its true factors.
#[derive(Debug, Clone)]
pub struct SimDataset {
    /// Controls are the first `n_c` columns for the scenario's rule.
    pub dataset: Dataset,
    /// `W` for every row of `dataset` (pseudo-rows carry `A_a W_0`).
    pub w: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    /// Rows belonging to a replicate set.
    pub replicated_rows: Vec<usize>,
    /// Mapping restricted to `replicated_rows`.
    pub reduced_mapping: MappingMatrix,
    /// Number of leading pseudo-assay rows (0 without a trend).
    pub m_pa: usize,
}

impl SimDataset {
    pub fn truth(&self) -> DMatrix<f64> {
        &self.w * &self.alpha
    }

    /// The same data with the first `n_c` columns as controls.
    pub fn with_controls(&self, n_c: usize) -> Result<Dataset> {
        let mut d = self.dataset.clone();
        d.controls = ControlMask::leading(n_c)?;
        crate::model::validate_dataset(&d)?;
        Ok(d)
    }
}

/// Trend `t_ij` for `m0` runs, `k0` factors and subtype `i mod s`.
pub fn trend_matrix(m0: usize, k0: usize, s: usize, spec: TrendSpec, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let segments = spec.segments;
    // u[(j, h, seg)]
    let ranges: Vec<f64> = (0..k0 * s * segments).map(|_| rng.random::<f64>()).collect();
    DMatrix::from_fn(m0, k0, |i, j| {
        let h = i % s;
        let x = i as f64 / m0 as f64 * segments as f64;
        let seg = (x.floor() as usize).min(segments - 1);
        let p = x - seg as f64;
        let u = ranges[(j * s + h) * segments + seg];
        -u + 2.0 * u * p
    })
}

/// Generates `(W, alpha, Y)` on `m` rows plus the optional mean row and
/// signal. `subtype_of` gives the row-to-sample map used for the signal.
fn gen_core(
    sc: &SimScenario,
    rep: usize,
    sample_of: &[usize],
    s: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let m = sc.m;
    let n = sc.n();
    let mut rng = stream_rng(sc.seed, STREAM_FACTORS, m, rep);
    let mut w = draw_matrix(m, sc.k0, sc.distribution, &mut rng);
    let alpha = draw_matrix(sc.k0, n, sc.distribution, &mut rng);
    let mut y = draw_matrix(m, n, sc.distribution, &mut rng);

    if let Some(spec) = sc.trend {
        let mut trng = stream_rng(sc.seed, STREAM_TREND, m, rep);
        w += trend_matrix(m, sc.k0, s, spec, &mut trng);
    }
    y.gemm(1.0, &w, &alpha, 1.0);

    if let Some(scale) = sc.mu_scale {
        let mut mrng = stream_rng(sc.seed, STREAM_MU, m, rep);
        let mu: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut mrng);
                scale * z
            })
            .collect();
        for (j, mut col) in y.column_iter_mut().enumerate() {
            col.add_scalar_mut(mu[j]);
        }
    }
    if let Some(sig) = sc.signal {
        let mut srng = stream_rng(sc.seed, STREAM_SIGNAL, m, rep);
        let x: DMatrix<f64> = DMatrix::from_fn(s, sig.factors, |_, _| StandardNormal.sample(&mut srng));
        let mut beta =
            DMatrix::from_fn(sig.factors, n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut srng);
            sig.scale * z
        });
        beta.columns_mut(0, sc.n_c().min(n)).fill(0.0);
        let xb: DMatrix<f64> = x * beta;
        for (i, &h) in sample_of.iter().enumerate() {
            let mut row = y.row_mut(i);
            row += xb.row(h);
        }
    }
    (w, alpha, y)
}

/// Generates replicate `rep` of a scenario. Trend scenarios are routed to
/// [`gen_prps_scenario`].
pub fn gen_dataset(sc: &SimScenario, rep: usize) -> Result<SimDataset> {
    sc.validate()?;
    if sc.trend.is_some() {
        return gen_prps_data(sc, rep);
    }
    let m = sc.m;
    let mapping = sc.replication.mapping(m)?;
    let (w, alpha, y) = gen_core(sc, rep, mapping.assay_to_sample(), mapping.s());
    let matrix = AssayMatrix::with_generated_ids(y)?;
    let dataset = Dataset::new(matrix, mapping.clone(), ControlMask::leading(sc.n_c())?)?;
    Ok(SimDataset {
        dataset,
        w,
        alpha,
        replicated_rows: mapping.replicated_rows(),
        reduced_mapping: mapping,
        m_pa: 0,
    })
}

fn gen_prps_data(sc: &SimScenario, rep: usize) -> Result<SimDataset> {
    let (e, w, alpha) = gen_prps_parts(sc, rep)?;
    let ExtendedDataset {
        dataset,
        m_pa,
        replicated_rows,
        reduced_mapping,
        ..
    } = e;
    Ok(SimDataset {
        dataset,
        w,
        alpha,
        replicated_rows,
        reduced_mapping,
        m_pa,
    })
}

fn gen_prps_parts(sc: &SimScenario, rep: usize) -> Result<(ExtendedDataset, DMatrix<f64>, DMatrix<f64>)> {
    let m0 = sc.m;
    let s = m0 / 4;
    let subtype: Vec<usize> = (0..m0).map(|i| i % s).collect();
    let (w0, alpha, y0) = gen_core(sc, rep, &subtype, s);
    let matrix = AssayMatrix::with_generated_ids(y0)?;
    let singletons = MappingMatrix::singletons(&matrix.assay_ids)?;
    let d0 = Dataset::new(matrix, singletons, ControlMask::leading(sc.n_c())?)?;
    let labels: Vec<String> = subtype.iter().map(|h| format!("t{h}")).collect();
    let plan = halves_plan(
        &labels,
        PrpsOptions {
            min_group_size: 2,
            ..PrpsOptions::default()
        },
    )?;
    let e = extend_dataset(&d0, &plan)?;
    let a = averaging_matrix(&plan, m0)?;
    let w_pa = a.apply(&w0)?;
    let mut w = DMatrix::zeros(e.dataset.m(), sc.k0);
    w.rows_mut(0, w_pa.nrows()).copy_from(&w_pa);
    w.rows_mut(w_pa.nrows(), m0).copy_from(&w0);
    Ok((e, w, alpha))
}

/// Pseudo-replicate scenario: `m_0` unreplicated assays in `s = m_0/4`
/// subtypes (assay `i` in subtype `i mod s`) with a temporal trend in `W`,
/// extended by a first-half and a second-half pseudo-assay per subtype.
/// Returns the extended data and the truth `[A_a W_0; W_0] alpha`.
pub fn gen_prps_scenario(sc: &SimScenario, rep: usize) -> Result<(ExtendedDataset, DMatrix<f64>)> {
    if sc.trend.is_none() {
        return Err(Error::Scenario(vec!["pseudo-replicate scenario needs a trend".into()]));
    }
    sc.validate()?;
    let (e, w, alpha) = gen_prps_parts(sc, rep)?;
    Ok((e, w * alpha))
}

/// `||removed - truth||_2 / ||truth||_2` by power iteration.
pub fn rel_error_q(removed: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if removed.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "removed is {:?}, truth is {:?}",
            removed.shape(),
            truth.shape()
        )));
    }
    let denom = spectral_norm(truth, 1e-12);
    if denom.value <= 0.0 {
        return Err(Error::Invalid(vec![Issue::Other("truth has zero norm".into())]));
    }
    let num = spectral_norm(&(removed - truth), 1e-12);
    Ok(num.value / denom.value)
}

/// Per-dataset state shared by every `k` and control rule.
struct QContext<'a> {
    data: &'a SimDataset,
    path: FactorPath,
    /// `alpha_hat alpha'`, K x k0.
    cross: DMatrix<f64>,
    /// `alpha alpha'`.
    alpha_gram: DMatrix<f64>,
    truth_sq: f64,
}

fn top_sym_eigenvalue(mut a: DMatrix<f64>) -> f64 {
    a = symmetrize(a);
    a.symmetric_eigenvalues().max()
}

/// Leading eigenpairs of the replicate residual Gram, computed on the
/// replicated rows only and embedded back.
fn sim_eigen(data: &SimDataset, opts: &EigenOptions) -> Result<(SymmetricEigen, DMatrix<f64>)> {
    let y = data.dataset.y();
    let rows = &data.replicated_rows;
    let r = if rows.len() == y.nrows() {
        replicate_residuals(y, &data.reduced_mapping)?
    } else {
        replicate_residuals(&select_rows(y, rows), &data.reduced_mapping)?
    };
    let inner = residual_eigen(&gram(&r), &data.reduced_mapping, opts)?;
    let mut vectors = DMatrix::zeros(y.nrows(), inner.vectors.ncols());
    for (local, &row) in rows.iter().enumerate() {
        vectors.row_mut(row).copy_from(&inner.vectors.row(local));
    }
    Ok((
        SymmetricEigen {
            vectors,
            values: inner.values,
            zero_threshold: inner.zero_threshold,
        },
        r,
    ))
}

impl<'a> QContext<'a> {
    fn new(data: &'a SimDataset, k_bound: usize, opts: &FitOptions) -> Result<Self> {
        let (eigen, r) = sim_eigen(data, &opts.eigen)?;
        let path = FactorPath::from_residuals(data.replicated_rows.clone(), r, &eigen, k_bound)?;
        let cross = path.alpha_cross(&data.alpha);
        let alpha_gram = gram(&data.alpha);
        let truth_sq = top_sym_eigenvalue(&data.w * &alpha_gram * data.w.transpose());
        if truth_sq <= 0.0 {
            return Err(Error::Invalid(vec![Issue::Other("truth has zero norm".into())]));
        }
        Ok(QContext {
            data,
            path,
            cross,
            alpha_gram,
            truth_sq,
        })
    }

    /// `q` for dimension `k` with the first `n_c` columns as controls, from
    /// `D D'` with `D = W_hat alpha_hat - W alpha` expanded in m x m form.
    fn q(&self, ctl: &crate::ruv3::ControlPath, k: usize, guard: f64) -> Result<f64> {
        let (wh, _) = self.path.w_hat(ctl, k, guard)?;
        let kk = wh.ncols();
        let w = &self.data.w;
        let g = self.path.alpha_gram(kk);
        let t = self.cross.rows(0, kk);
        let a = &wh * g * wh.transpose();
        let b = &wh * t * w.transpose();
        let c = w * &self.alpha_gram * w.transpose();
        let dd = a - &b - b.transpose() + c;
        let top = top_sym_eigenvalue(dd).max(0.0);
        Ok((top / self.truth_sq).sqrt())
    }
}

/// One fitted configuration within a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arm {
    pub nc_rule: NcRule,
    pub k_choice: KChoice,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nc={} k={}", self.nc_rule, self.k_choice)
    }
}

/// Results of one arm at one `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub m: usize,
    /// `(replicate index, q)` for successful runs, in replicate order.
    pub q: Vec<(usize, f64)>,
    /// `(replicate index, error message)` for failed runs.
    pub failures: Vec<(usize, String)>,
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub arm: Arm,
    pub points: Vec<GridPoint>,
    /// Two-point slope on the final two `m` values, with standard error.
    pub slope: Option<(f64, f64)>,
}

impl SimResult {
    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn point(&self, m: usize) -> Option<&GridPoint> {
        self.points.iter().find(|p| p.m == m)
    }
}

/// Mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = neumaier_sum(values.iter().copied()) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

/// Slope of `log2 q` against `log2 m` through the final two points, with a
/// delta-method standard error from the per-point standard errors.
pub fn decay_slope(points: &[(usize, f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Invalid(vec![Issue::Other(
            "slope needs at least two points".into(),
        )]));
    }
    let (m1, q1, se1) = points[points.len() - 2];
    let (m2, q2, se2) = points[points.len() - 1];
    if !(q1 > 0.0 && q2 > 0.0) {
        return Err(Error::Invalid(vec![Issue::Other(format!(
            "slope needs positive means, got {q1} and {q2}"
        ))]));
    }
    let dx = (m2 as f64).log2() - (m1 as f64).log2();
    if dx == 0.0 {
        return Err(Error::Invalid(vec![Issue::Other("final two m values coincide".into())]));
    }
    let slope = (q2.log2() - q1.log2()) / dx;
    let r1 = if se1.is_finite() { se1 / q1 } else { 0.0 };
    let r2 = if se2.is_finite() { se2 / q2 } else { 0.0 };
    let se = (r1 * r1 + r2 * r2).sqrt() / (std::f64::consts::LN_2 * dx.abs());
    Ok((slope, se))
}

/// Runs one scenario over a grid of `m` values.
pub fn run_grid(template: &SimScenario, m_values: &[usize], reps: usize) -> Result<SimResult> {
    let arm = Arm {
        nc_rule: template.nc_rule,
        k_choice: template.k_choice,
    };
    let mut out = run_grid_arms(template, &[arm], m_values, reps, &FitOptions::default())?;
    Ok(out.remove(0))
}

/// Runs several arms on shared datasets: each `(m, rep)` dataset is
/// generated once and fitted for every arm. With a signal, `beta` vanishes
/// on the template's controls, which must cover every arm's controls.
pub fn run_grid_arms(
    template: &SimScenario,
    arms: &[Arm],
    m_values: &[usize],
    reps: usize,
    opts: &FitOptions,
) -> Result<Vec<SimResult>> {
    let mut problems = Vec::new();
    if reps < 2 {
        problems.push(format!("reps = {reps}, need at least 2"));
    }
    if m_values.is_empty() {
        problems.push("no m values".into());
    }
    if arms.is_empty() {
        problems.push("no arms".into());
    }
    for &m in m_values {
        let base = template.with_m(m);
        for p in base.problems() {
            problems.push(p);
        }
        for arm in arms {
            let sc = SimScenario {
                nc_rule: arm.nc_rule,
                k_choice: arm.k_choice,
                ..base.clone()
            };
            for p in sc.problems() {
                if !problems.contains(&p) {
                    problems.push(p);
                }
            }
            if template.signal.is_some() && sc.n_c() > base.n_c() {
                problems.push(format!(
                    "arm {arm} uses more controls than the signal-free columns at m = {m}"
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Scenario(problems));
    }

    let cells: Vec<(usize, usize)> = m_values
        .iter()
        .flat_map(|&m| (0..reps).map(move |r| (m, r)))
        .collect();
    let outcomes: Vec<Vec<std::result::Result<f64, String>>> = cells
        .par_iter()
        .map(|&(m, rep)| run_cell(template, arms, m, rep, opts))
        .collect();

    let mut results: Vec<SimResult> = arms
        .iter()
        .map(|&arm| SimResult {
            arm,
            points: Vec::new(),
            slope: None,
        })
        .collect();
    for (mi, &m) in m_values.iter().enumerate() {
        for (a, res) in results.iter_mut().enumerate() {
            let mut q = Vec::new();
            let mut failures = Vec::new();
            for rep in 0..reps {
                match &outcomes[mi * reps + rep][a] {
                    Ok(v) => q.push((rep, *v)),
                    Err(e) => failures.push((rep, e.clone())),
                }
            }
            if !failures.is_empty() {
                log::warn!("{} failed run(s) for {} at m = {m}", failures.len(), res.arm);
            }
            let values: Vec<f64> = q.iter().map(|p| p.1).collect();
            let (mean, se) = mean_se(&values);
            res.points.push(GridPoint {
                m,
                q,
                failures,
                mean,
                se,
            });
        }
    }
    for res in &mut results {
        let pts: Vec<(usize, f64, f64)> = res.points.iter().map(|p| (p.m, p.mean, p.se)).collect();
        res.slope = decay_slope(&pts).ok();
    }
    Ok(results)
}

fn run_cell(
    template: &SimScenario,
    arms: &[Arm],
    m: usize,
    rep: usize,
    opts: &FitOptions,
) -> Vec<std::result::Result<f64, String>> {
    let sc = template.with_m(m);
    let fail = |e: Error| vec![Err(e.to_string()); arms.len()];
    let data = match gen_dataset(&sc, rep) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let k_max = sc.k_max();
    let k_bound = arms.iter().map(|a| a.k_choice.resolve(k_max)).max().unwrap_or(1);
    let ctx = match QContext::new(&data, k_bound, opts) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mut out = vec![Err(String::new()); arms.len()];
    for rule in NcRule::ALL {
        let users: Vec<usize> = (0..arms.len()).filter(|&a| arms[a].nc_rule == rule).collect();
        if users.is_empty() {
            continue;
        }
        let controls = match ControlMask::leading(rule.n_c(m)) {
            Ok(c) => c,
            Err(e) => {
                for a in users {
                    out[a] = Err(e.to_string());
                }
                continue;
            }
        };
        let ctl = ctx.path.controls(data.dataset.y(), &controls);
        for a in users {
            let k = arms[a].k_choice.resolve(k_max);
            out[a] = ctx.q(&ctl, k, opts.rcond_guard).map_err(|e| e.to_string());
        }
    }
    out
}

/// `q` for one generated dataset computed from a materialised fit; the
/// reference the Gram-form grid path is checked against.
pub fn dense_q(data: &SimDataset, k: usize, opts: &FitOptions) -> Result<f64> {
    let fit = crate::ruv3::fit(&data.dataset, k, opts)?;
    rel_error_q(&fit.removed, &data.truth())
}

/// `q` for one generated dataset via the Gram-form path used by the grids.
pub fn gram_q(data: &SimDataset, n_c: usize, k: usize, opts: &FitOptions) -> Result<f64> {
    let ctx = QContext::new(data, k, opts)?;
    let ctl = ctx.path.controls(data.dataset.y(), &ControlMask::leading(n_c)?);
    ctx.q(&ctl, k, opts.rcond_guard)
}

/// Mean row of a matrix, for diagnostics.
pub fn column_means(y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.mean()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::model::validate_dataset;

    #[test]
    fn nc_rules_at_16() {
        for rule in NcRule::ALL {
            assert_eq!(rule.n_c(16), 32);
        }
        assert_eq!(NcRule::MThreeHalvesOver2.n_c(32), 90);
        assert_eq!("2m".parse::<NcRule>().unwrap(), NcRule::TwoM);
        assert!("m".parse::<NcRule>().is_err());
    }

    #[test]
    fn replication_rules() {
        let a = Replication::SamplesIncreasing.mapping(16).unwrap();
        let b = Replication::ReplicatesIncreasing.mapping(16).unwrap();
        assert_eq!(a.s(), 4);
        assert_eq!(a.set_sizes(), vec![4; 4]);
        assert_eq!(a, b);
        let c = Replication::ReplicatesIncreasing.mapping(32).unwrap();
        assert_eq!(c.set_sizes(), vec![8; 4]);
        assert_eq!(Replication::SamplesIncreasing.mapping(32).unwrap().s(), 8);
    }

    #[test]
    fn generation_is_deterministic() {
        let sc = SimScenario {
            m: 16,
            ..Default::default()
        };
        let a = gen_dataset(&sc, 3).unwrap();
        let b = gen_dataset(&sc, 3).unwrap();
        assert_eq!(a.dataset.y(), b.dataset.y());
        let c = gen_dataset(&sc, 4).unwrap();
        assert_ne!(a.dataset.y(), c.dataset.y());
        validate_dataset(&a.dataset).unwrap();
        let truth = a.truth();
        assert_eq!(truth.clone().svd(false, false).rank(1e-9 * truth.norm()), 3);
        assert_eq!(a.dataset.controls.len(), 32);
        assert_eq!(a.dataset.n(), 256);
    }

    #[test]
    fn pareto_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut min = f64::INFINITY;
        for _ in 0..n {
            let x = pareto_std(&mut rng);
            sum += x;
            sum_sq += x * x;
            min = min.min(x);
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 3e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "var {var}");
        let endpoint = (1.0 - 1.25) / (5.0f64 / 48.0).sqrt();
        assert_relative_eq!(endpoint, -0.7745966692414834, epsilon = 1e-12);
        assert!(min >= endpoint && min < endpoint + 1e-3);
    }

    #[test]
    fn pareto_mean_within_four_se() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<f64> = (0..1_000_000).map(|_| pareto_std(&mut rng)).collect();
        let (mean, se) = mean_se(&draws);
        assert!(mean.abs() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn q_examples() {
        let t = DMatrix::from_fn(4, 5, |i, j| (i as f64 + 1.0) * (j as f64 - 2.0));
        assert_eq!(rel_error_q(&t, &t).unwrap(), 0.0);
        assert_relative_eq!(rel_error_q(&DMatrix::zeros(4, 5), &t).unwrap(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(rel_error_q(&(&t * 2.0), &t).unwrap(), 1.0, epsilon = 1e-10);
        assert!(rel_error_q(&t, &DMatrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn slope_examples() {
        let (s, _) = decay_slope(&[(16, 1.0, 0.1), (64, 0.5, 0.05)]).unwrap();
        assert_relative_eq!(s, -0.5, epsilon = 1e-12);
        let (s, se) = decay_slope(&[(16, 0.3, 0.0), (32, 0.3, 0.0)]).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(se, 0.0);
        assert!(decay_slope(&[(16, 0.3, 0.0)]).is_err());
        assert!(decay_slope(&[(16, 0.0, 0.0), (32, 0.3, 0.0)]).is_err());
        let (_, se) = decay_slope(&[(16, 1.0, 0.1), (32, 0.5, 0.05)]).unwrap();
        let expected = (0.1f64 * 0.1 + 0.1 * 0.1).sqrt() / std::f64::consts::LN_2;
        assert_relative_eq!(se, expected, epsilon = 1e-12);
    }

    #[test]
    fn gram_q_matches_dense_q() {
        for (rep, k) in [(0, 3), (1, 2), (2, 12)] {
            let sc = SimScenario { m: 16, ..Default::default() };
            let data = gen_dataset(&sc, rep).unwrap();
            let a = dense_q(&data, k, &FitOptions::default()).unwrap();
            let b = gram_q(&data, sc.n_c(), k, &FitOptions::default()).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn gram_q_matches_dense_q_prps() {
        let sc = SimScenario {
            m: 16,
            trend: Some(TrendSpec::default()),
            ..Default::default()
        };
        let data = gen_dataset(&sc, 0).unwrap();
        assert_eq!(data.dataset.m(), 24);
        let a = dense_q(&data, 3, &FitOptions::default()).unwrap();
        let b = gram_q(&data, sc.n_c(), 3, &FitOptions::default()).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-8);
        let (e, truth) = gen_prps_scenario(&sc, 0).unwrap();
        assert_eq!(e.dataset.y(), data.dataset.y());
        assert!((&truth - data.truth()).norm() <= 1e-12 * truth.norm());
    }

    #[test]
    fn trend_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = trend_matrix(64, 3, 16, TrendSpec::default(), &mut rng);
        assert!(t.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn signal_does_not_change_q() {
        for rep in 0..10 {
            let base = SimScenario { m: 16, ..Default::default() };
            let with = SimScenario {
                signal: Some(SignalSpec { factors: 2, scale: 3.0 }),
                mu_scale: Some(2.0),
                ..base.clone()
            };
            let a = gen_dataset(&base, rep).unwrap();
            let b = gen_dataset(&with, rep).unwrap();
            let fa = crate::ruv3::fit(&a.dataset, 3, &FitOptions::default()).unwrap();
            let fb = crate::ruv3::fit(&b.dataset, 3, &FitOptions::default()).unwrap();
            assert!((&fa.removed - &fb.removed).norm() <= 1e-10 * fa.removed.norm());
        }
    }

    #[test]
    fn grid_smoke_and_determinism() {
        let sc = SimScenario::default();
        let r = run_grid(&sc, &[16], 2).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.points[0].q.len(), 2);
        assert!(r.points[0].q.iter().all(|&(_, q)| q >= 0.0));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let r3 = pool.install(|| run_grid(&sc, &[16], 2).unwrap());
        assert_eq!(r, r3);
        assert!(run_grid(&sc, &[16], 1).is_err());
    }

    #[test]
    fn scenario_problems_listed() {
        let sc = SimScenario {
            m: 18,
            ..Default::default()
        };
        assert!(matches!(sc.validate(), Err(Error::Scenario(_))));
        let sc = SimScenario {
            m: 16,
            k0: 0,
            k_choice: KChoice::Fixed(20),
            ..Default::default()
        };
        let p = sc.problems();
        assert_eq!(p.len(), 2, "{p:?}");
    }
}
