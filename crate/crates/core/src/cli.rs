//! Command-line driver.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{
    ensure_dir, read_annotation_csv, read_controls, read_mapping_csv, read_matrix_tsv,
    read_sim_config, write_json, write_kscan_csv, write_labeled_tsv, write_mapping_csv,
    write_matrix_tsv, write_sim_outputs, write_text, CORNER,
};
use crate::model::{AssayMatrix, Dataset, MappingMatrix};
use crate::projections::EigenOptions;
use crate::prps::{build_prps_plan, extend_dataset, fast_fit, PrpsOptions, PrpsPlan};
use crate::ruv3::{fit, k_scan, FitOptions, Ruv3Fit};

#[derive(Debug, Parser)]
#[command(name = "ruv3", version, about = "Remove unwanted variation with replicates and negative controls")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "RUV3_THREADS")]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit and write the adjusted matrix.
    Adjust(AdjustArgs),
    /// Evaluate the removed-variation norm for k = 1..=K.
    Kscan(KscanArgs),
    /// Build pseudo-replicates and the extended dataset.
    Prps(PrpsArgs),
    /// Run a simulation grid from a TOML config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct Tolerances {
    /// Eigenpair residual tolerance, relative to 1 + largest eigenvalue.
    #[arg(long, env = "RUV3_EIGEN_TOL", default_value_t = 1e-8)]
    pub eigen_tol: f64,
    /// Smallest accepted reciprocal condition of the control system.
    #[arg(long, env = "RUV3_RCOND_GUARD", default_value_t = 1e-12)]
    pub rcond_guard: f64,
    /// Eigenvalues at or below this are treated as zero (default m * eps * max).
    #[arg(long, env = "RUV3_ZERO_THRESHOLD")]
    pub zero_threshold: Option<f64>,
}

impl Tolerances {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            eigen: EigenOptions {
                residual_tol: self.eigen_tol,
                zero_threshold: self.zero_threshold,
                ..EigenOptions::default()
            },
            rcond_guard: self.rcond_guard,
        }
    }
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Matrix TSV, assays in rows.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Mapping CSV `assay_id,sample_id`.
    #[arg(long)]
    pub mapping: PathBuf,
    /// Negative control ids, one per line.
    #[arg(long)]
    pub controls: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Number of unwanted factors (default m - s).
    #[arg(short, long)]
    pub k: Option<usize>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tol: Tolerances,
}

#[derive(Debug, Args)]
pub struct KscanArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Largest k to scan (default m - s).
    #[arg(long = "k-max")]
    pub k_max: Option<usize>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tol: Tolerances,
}

#[derive(Debug, Args)]
pub struct PrpsArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    /// Annotation CSV `assay_id,biology,unwanted`.
    #[arg(long, required_unless_present = "plan")]
    pub annotation: Option<PathBuf>,
    #[arg(long)]
    pub controls: PathBuf,
    /// Mapping of any real replicates (default: every assay its own sample).
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Use an existing plan file instead of building one from the annotation.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub min_group_size: usize,
    #[arg(long, default_value_t = 32)]
    pub b1: usize,
    #[arg(long, default_value_t = 4)]
    pub b2: usize,
    /// Also fit RUV-III on the extended data.
    #[arg(long)]
    pub adjust: bool,
    /// k for --adjust (default m_r - s_r).
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Keep pseudo-assay rows in adjusted output.
    #[arg(long)]
    pub keep_pseudo: bool,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tol: Tolerances,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tol: Tolerances,
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    version: &'static str,
    m: usize,
    n: usize,
    samples: usize,
    controls: usize,
    k_requested: usize,
    k_default_used: bool,
    k_effective: usize,
    eigenvalues: Vec<f64>,
    rcond: f64,
    eigen_tol: f64,
    rcond_guard: f64,
    zero_threshold: f64,
    pseudo_rows: usize,
    pseudo_rows_in_output: bool,
}

fn load(inputs: &Inputs) -> Result<Dataset> {
    let matrix = read_matrix_tsv(&inputs.matrix)?;
    let mapping = read_mapping_csv(&inputs.mapping, &matrix.assay_ids)?;
    let controls = read_controls(&inputs.controls, &matrix.variable_ids)?;
    Dataset::new(matrix, mapping, controls)
}

fn factor_ids(k: usize, prefix: &str) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

fn write_fit(
    out: &Path,
    d: &Dataset,
    f: &Ruv3Fit,
    rows: std::ops::Range<usize>,
    manifest: Manifest,
) -> Result<()> {
    let ids = &d.matrix.assay_ids;
    let adjusted = f.adjusted.rows(rows.start, rows.len()).into_owned();
    write_labeled_tsv(
        &out.join("adjusted.tsv"),
        CORNER,
        &ids[rows.clone()],
        &d.matrix.variable_ids,
        &adjusted,
    )?;
    write_labeled_tsv(
        &out.join("w_hat.tsv"),
        CORNER,
        ids,
        &factor_ids(f.k_effective, "w"),
        &f.w_hat,
    )?;
    write_labeled_tsv(
        &out.join("alpha_hat.tsv"),
        "factor",
        &factor_ids(f.k_effective, "alpha"),
        &d.matrix.variable_ids,
        &f.alpha_hat,
    )?;
    write_json(&out.join("manifest.json"), &manifest)
}

fn manifest(
    command: &'static str,
    d: &Dataset,
    f: &Ruv3Fit,
    k_default_used: bool,
    opts: &FitOptions,
    pseudo_rows: usize,
    pseudo_rows_in_output: bool,
) -> Manifest {
    Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        m: d.m(),
        n: d.n(),
        samples: d.mapping.s(),
        controls: d.controls.len(),
        k_requested: f.k,
        k_default_used,
        k_effective: f.k_effective,
        eigenvalues: f.eigen.values.clone(),
        rcond: f.rcond,
        eigen_tol: opts.eigen.residual_tol,
        rcond_guard: opts.rcond_guard,
        zero_threshold: f.eigen.zero_threshold,
        pseudo_rows,
        pseudo_rows_in_output,
    }
}

pub fn cmd_adjust(a: &AdjustArgs) -> Result<()> {
    let d = load(&a.inputs)?;
    let opts = a.tol.fit_options();
    let k = a.k.unwrap_or_else(|| d.mapping.k_max());
    let f = fit(&d, k, &opts)?;
    ensure_dir(&a.out)?;
    let mf = manifest("adjust", &d, &f, a.k.is_none(), &opts, 0, false);
    write_fit(&a.out, &d, &f, 0..d.m(), mf)?;
    log::info!("adjusted {}x{} with k = {}", d.m(), d.n(), f.k_effective);
    Ok(())
}

pub fn cmd_kscan(a: &KscanArgs) -> Result<()> {
    let d = load(&a.inputs)?;
    let opts = a.tol.fit_options();
    let k_bound = a.k_max.unwrap_or_else(|| d.mapping.k_max());
    let scan = k_scan(&d, k_bound, &opts)?;
    ensure_dir(&a.out)?;
    write_kscan_csv(&a.out.join("kscan.csv"), &scan)?;
    println!("k_hat = {}", scan.k_hat);
    Ok(())
}

pub fn cmd_prps(a: &PrpsArgs) -> Result<()> {
    let matrix: AssayMatrix = read_matrix_tsv(&a.matrix)?;
    let controls = read_controls(&a.controls, &matrix.variable_ids)?;
    let mapping = match &a.mapping {
        Some(p) => read_mapping_csv(p, &matrix.assay_ids)?,
        None => MappingMatrix::singletons(&matrix.assay_ids)?,
    };
    let options = PrpsOptions {
        min_group_size: a.min_group_size,
        b1: a.b1,
        b2: a.b2,
    };
    let plan = match &a.plan {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            PrpsPlan::from_text(&text, &matrix.assay_ids)?
        }
        None => {
            let path = a.annotation.as_deref().unwrap_or(Path::new(""));
            let (bio, unw) = read_annotation_csv(path, &matrix.assay_ids)?;
            build_prps_plan(&bio, &unw, options)?
        }
    };
    let d0 = Dataset::new(matrix, mapping, controls)?;
    let e = extend_dataset(&d0, &plan)?;
    ensure_dir(&a.out)?;
    write_text(&a.out.join("prps_plan.txt"), &plan.to_text(&d0.matrix.assay_ids)?)?;
    write_matrix_tsv(&a.out.join("extended.tsv"), &e.dataset.matrix)?;
    write_mapping_csv(
        &a.out.join("extended_mapping.csv"),
        &e.dataset.mapping,
        &e.dataset.matrix.assay_ids,
    )?;
    println!(
        "{} pseudo-samples in {} pseudo-replicate sets; {} exclusions recorded",
        plan.m_pa(),
        plan.s_pr(),
        plan.dropped.len()
    );
    if a.adjust {
        let opts = a.tol.fit_options();
        let k = a.k.unwrap_or_else(|| e.reduced_mapping.k_max());
        let f = fast_fit(&e, k, &opts)?;
        let rows = if a.keep_pseudo {
            0..e.dataset.m()
        } else {
            e.m_pa..e.dataset.m()
        };
        let mf = manifest("prps", &e.dataset, &f, a.k.is_none(), &opts, e.m_pa, a.keep_pseudo);
        write_fit(&a.out, &e.dataset, &f, rows, mf)?;
    }
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = read_sim_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.scenario.seed = seed;
    }
    let result = crate::simulate::run_grid_arms(
        &cfg.scenario,
        &[crate::simulate::Arm {
            nc_rule: cfg.scenario.nc_rule,
            k_choice: cfg.scenario.k_choice,
        }],
        &cfg.m_values,
        cfg.reps,
        &a.tol.fit_options(),
    )?
    .remove(0);
    ensure_dir(&a.out)?;
    write_sim_outputs(&a.out, &result)?;
    for p in &result.points {
        println!("m = {:>4}  mean q = {:.4}  se = {:.4}", p.m, p.mean, p.se);
    }
    if let Some((s, se)) = result.slope {
        println!("slope = {s:.3} (se {se:.3})");
    }
    Ok(())
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Invalid(vec![crate::error::Issue::Other(
                "--threads must be positive".into(),
            )]));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match &cli.command {
        Command::Adjust(a) => cmd_adjust(a),
        Command::Kscan(a) => cmd_kscan(a),
        Command::Prps(a) => cmd_prps(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}
