// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line surface. Every subcommand is a thin orchestration of the
//! core library plus file IO; all randomness flows from the manifest or the
//! `--seed` flag, and reruns with identical inputs write identical bytes
//! (timing sidecars excepted).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use taskvec_core::decompose;
use taskvec_core::tensor::combine;
use taskvec_core::{angles, synth, toy, Error as CoreError, TaskVector};
use thiserror::Error;

use crate::manifest::{Manifest, ModeName};
use crate::report;
use crate::tvt::{self, TvtError};

/// Failures split by exit code: bad inputs exit 2, numerical breakdowns
/// exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::ConvergenceFailed(_)
            | CoreError::NotSymmetric { .. }
            | CoreError::DivergedTraining { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TvtError> for CliError {
    fn from(e: TvtError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "taskvec",
    version,
    about = "Decompose task vectors into shared and unique components"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the manifest's task vectors into shared and unique components.
    Decompose {
        manifest: PathBuf,
        /// Eigenvalue threshold override.
        #[arg(long)]
        tau: Option<f64>,
        /// Relative singular-value cutoff override.
        #[arg(long)]
        rank_tol: Option<f64>,
        /// Decomposition mode override.
        #[arg(long)]
        mode: Option<ModeName>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild an edited model from decomposed components.
    Recompose {
        manifest: PathBuf,
        /// Component coefficients as name=value pairs, applied in order.
        #[arg(long, value_delimiter = ',', required = true)]
        coeffs: Vec<String>,
        /// Output file override (default: <output_dir>/recomposed.tvt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Principal angles between the matrix layers of two tensor files.
    Angles {
        file_a: PathBuf,
        file_b: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Planted-subspace recovery sweep over noise levels.
    Synth {
        /// Generator overrides as key=value pairs
        /// (n, m, r, u, k, scale).
        #[arg(long, value_delimiter = ',')]
        spec: Vec<String>,
        /// Noise sigmas to sweep.
        #[arg(long, value_delimiter = ',', required = true)]
        sweep: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = decompose::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the CSV outputs.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train toy models and sweep decomposed components.
    Toylab {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the CSV and summary outputs.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare the chain and QR recovery routes.
    Validate {
        /// Two task-vector files; omit both to run generated trials.
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = decompose::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
#[clap(rename_all = "lowercase")]
pub enum Scenario {
    Transfer,
    Negation,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Decompose { manifest, tau, rank_tol, mode, out } => {
            cmd_decompose(&manifest, tau, rank_tol, mode, out)
        }
        Command::Recompose { manifest, coeffs, out } => cmd_recompose(&manifest, &coeffs, out),
        Command::Angles { file_a, file_b, out } => cmd_angles(&file_a, &file_b, out),
        Command::Synth { spec, sweep, trials, tau, seed, out } => {
            cmd_synth(&spec, &sweep, trials, tau, seed, &out)
        }
        Command::Toylab { scenario, seed, out } => cmd_toylab(scenario, seed, &out),
        Command::Validate { files, trials, tau, seed, out } => {
            cmd_validate(&files, trials, tau, seed, out)
        }
    }
}

fn cmd_decompose(
    manifest_path: &Path,
    tau: Option<f64>,
    rank_tol: Option<f64>,
    mode: Option<ModeName>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = Manifest::load(manifest_path)?;
    if let Some(t) = tau {
        manifest.tau = t;
    }
    if let Some(r) = rank_tol {
        manifest.rank_tol = r;
    }
    if let Some(m) = mode {
        manifest.mode = m;
    }
    if let Some(dir) = out {
        manifest.output_dir = dir;
    }
    if manifest.task_vectors.len() < 2 {
        return Err(CliError::Input(format!(
            "decompose needs at least two task vectors, manifest lists {}",
            manifest.task_vectors.len()
        )));
    }

    let mut vectors = Vec::with_capacity(manifest.task_vectors.len());
    let mut digests = BTreeMap::new();
    for entry in &manifest.task_vectors {
        let bytes = std::fs::read(&entry.path).map_err(|e| {
            CliError::Input(format!("cannot read {}: {e}", entry.path.display()))
        })?;
        digests.insert(entry.name.clone(), report::sha256_hex(&bytes));
        vectors.push(task_vector_from_bytes(&bytes, &entry.path)?);
    }
    let read_inputs_ms = started.elapsed().as_millis();

    let decompose_started = Instant::now();
    let result =
        decompose::decompose_set(&vectors, manifest.tau, manifest.rank_tol, manifest.mode.into())?;
    let decompose_ms = decompose_started.elapsed().as_millis();

    let write_started = Instant::now();
    std::fs::create_dir_all(&manifest.output_dir)?;
    for (i, entry) in manifest.task_vectors.iter().enumerate() {
        let shared = manifest.output_dir.join(format!("shared_{}.tvt", entry.name));
        tvt::write_task_vector(&shared, &result.shared[i])?;
        let unique = manifest.output_dir.join(format!("unique_{}.tvt", entry.name));
        tvt::write_task_vector(&unique, &result.unique[i])?;
    }
    for merged in &result.merged {
        let name = merged_file_name(&manifest, &merged.members);
        tvt::write_task_vector(&manifest.output_dir.join(name), &merged.vector)?;
    }
    let body = report::build(&result, digests);
    std::fs::write(manifest.output_dir.join("report.json"), report::to_json(&body))?;
    let write_outputs_ms = write_started.elapsed().as_millis();

    let timing = report::Timing {
        read_inputs_ms,
        decompose_ms,
        write_outputs_ms,
        total_ms: started.elapsed().as_millis(),
    };
    std::fs::write(manifest.output_dir.join("timing.json"), report::to_json(&timing))?;
    Ok(())
}

/// Chain mode merges everything into one vector; pairwise merges are named
/// by the pair of manifest entries they came from.
fn merged_file_name(manifest: &Manifest, members: &[usize]) -> String {
    if members.len() == manifest.task_vectors.len() {
        "merged_shared.tvt".to_string()
    } else {
        let names: Vec<&str> =
            members.iter().map(|&i| manifest.task_vectors[i].name.as_str()).collect();
        format!("merged_{}.tvt", names.join("_"))
    }
}

fn cmd_recompose(
    manifest_path: &Path,
    coeffs: &[String],
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let manifest = Manifest::load(manifest_path)?;
    let base_path = manifest.base_model.as_ref().ok_or_else(|| {
        CliError::Input("recompose needs base_model in the manifest".to_string())
    })?;
    let base = tvt::read_task_vector(base_path)?;

    let mut terms: Vec<(TaskVector, f64)> = Vec::with_capacity(coeffs.len());
    for spec in coeffs {
        let (name, value) = spec.split_once('=').ok_or_else(|| {
            CliError::Input(format!("coefficient {spec:?} is not name=value"))
        })?;
        let lambda: f64 = value
            .parse()
            .map_err(|_| CliError::Input(format!("coefficient value {value:?} is not a number")))?;
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(CliError::Input(format!(
                "component name {name:?} is not a plain file stem"
            )));
        }
        let path = manifest.output_dir.join(format!("{name}.tvt"));
        let vector = tvt::read_task_vector(&path)
            .map_err(|e| CliError::Input(format!("component {}: {e}", path.display())))?;
        terms.push((vector, lambda));
    }
    let borrowed: Vec<(&TaskVector, f64)> = terms.iter().map(|(v, l)| (v, *l)).collect();
    let edited = combine(&base, &borrowed)?;

    let out_path = out.unwrap_or_else(|| manifest.output_dir.join("recomposed.tvt"));
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    tvt::write_task_vector(&out_path, &edited)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct LayerAngles {
    layer: String,
    dims: (usize, usize),
    mean_rad: f64,
    max_rad: f64,
    angles_rad: Vec<f64>,
}

fn cmd_angles(file_a: &Path, file_b: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let a = tvt::read_tensor_file(file_a)?;
    let b = tvt::read_tensor_file(file_b)?;
    let mut reports = Vec::new();
    for (name, ta) in &a {
        let Some(tb) = b.get(name) else { continue };
        if !(ta.is_decomposable() && tb.is_decomposable()) {
            continue;
        }
        let rep = angles::principal_angles(&ta.as_matrix_2d()?, &tb.as_matrix_2d()?)?;
        reports.push(LayerAngles {
            layer: name.clone(),
            dims: rep.dims,
            mean_rad: rep.mean_rad,
            max_rad: rep.max_rad,
            angles_rad: rep.angles_rad,
        });
    }
    if reports.is_empty() {
        return Err(CliError::Input(
            "the files share no matrix-shaped layer names to compare".to_string(),
        ));
    }
    emit(&reports, out)
}

fn cmd_synth(
    spec_args: &[String],
    sweep: &[f64],
    trials: usize,
    tau: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let spec = parse_plant_spec(spec_args)?;
    let result = synth::noise_sweep(&spec, sweep, trials, tau, seed)?;
    std::fs::create_dir_all(out)?;

    #[derive(Serialize)]
    struct TrialRow {
        sigma: f64,
        trial: usize,
        mean_angle_rad: f64,
        max_angle_rad: f64,
        recovered_dim: usize,
        true_dim: usize,
    }
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for t in &result.trials {
        w.serialize(TrialRow {
            sigma: t.report.sigma,
            trial: t.trial,
            mean_angle_rad: t.report.mean_angle_rad,
            max_angle_rad: t.report.max_angle_rad,
            recovered_dim: t.report.recovered_dim,
            true_dim: t.report.true_dim,
        })?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct SummaryRow {
        sigma: f64,
        mean_angle_rad: f64,
        max_angle_rad: f64,
        mean_recovered_dim: f64,
        trials: usize,
    }
    let mut w = csv::Writer::from_path(out.join("sweep_summary.csv"))?;
    for s in &result.per_sigma {
        w.serialize(SummaryRow {
            sigma: s.sigma,
            mean_angle_rad: s.mean_angle_rad,
            max_angle_rad: s.max_angle_rad,
            mean_recovered_dim: s.mean_recovered_dim,
            trials: s.trials,
        })?;
    }
    w.flush()?;

    // Eigenvalue distribution of each sigma's first trial, using the same
    // per-trial seeding as the sweep itself.
    #[derive(Serialize)]
    struct HistRow {
        sigma: f64,
        bin_lo: f64,
        bin_hi: f64,
        count: usize,
    }
    let mut w = csv::Writer::from_path(out.join("eig_histogram.csv"))?;
    for (si, &sigma) in sweep.iter().enumerate() {
        let trial_seed = seed.wrapping_add(1_000_003u64.wrapping_mul((si * trials) as u64));
        let spectrum = synth::trial_spectrum(&spec, sigma, tau, trial_seed)?;
        let hist = synth::eig_histogram(&spectrum, 20)?;
        for (b, &count) in hist.counts.iter().enumerate() {
            w.serialize(HistRow {
                sigma,
                bin_lo: hist.bin_edges[b],
                bin_hi: hist.bin_edges[b + 1],
                count,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_plant_spec(args: &[String]) -> Result<synth::PlantSpec, CliError> {
    let mut spec = synth::PlantSpec::default();
    for arg in args {
        let (key, value) = arg
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("spec field {arg:?} is not key=value")))?;
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| CliError::Input(format!("spec value {v:?} is not a count")))
        };
        match key {
            "n" => spec.ambient_dim = parse_usize(value)?,
            "m" => spec.cols = parse_usize(value)?,
            "r" => spec.shared_dim = parse_usize(value)?,
            "u" => spec.unique_dim_per_vector = parse_usize(value)?,
            "k" => spec.num_vectors = parse_usize(value)?,
            "scale" => {
                spec.coeff_scale = value.parse::<f64>().map_err(|_| {
                    CliError::Input(format!("spec value {value:?} is not a number"))
                })?
            }
            _ => {
                return Err(CliError::Input(format!(
                    "unknown spec field {key:?} (expected n, m, r, u, k, scale)"
                )))
            }
        }
    }
    Ok(spec)
}

#[derive(Serialize)]
struct SweepRow {
    component_id: usize,
    lambda: f64,
    accuracy: f64,
    loss: f64,
}

fn write_sweep_csv(path: &Path, sweep: &toy::SweepCurve) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for curve in &sweep.curves {
        for p in &curve.points {
            w.serialize(SweepRow {
                component_id: curve.component,
                lambda: p.lambda,
                accuracy: p.accuracy,
                loss: p.loss,
            })?;
        }
    }
    Ok(w.flush()?)
}

fn cmd_toylab(scenario: Scenario, seed: u64, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    match scenario {
        Scenario::Transfer => {
            let trial = toy::transfer_scenario(seed)?;
            write_sweep_csv(&out.join("transfer_clean.csv"), &trial.clean.sweep)?;
            write_sweep_csv(&out.join("transfer_corrupted.csv"), &trial.corrupted.sweep)?;

            #[derive(Serialize)]
            struct Summary<'a> {
                seed: u64,
                source_accuracy: &'a [f64],
                shared_dims: &'a BTreeMap<String, usize>,
                clean: OutcomeSummary<'a>,
                corrupted: OutcomeSummary<'a>,
            }
            #[derive(Serialize)]
            struct OutcomeSummary<'a> {
                task: &'a str,
                base_accuracy: f64,
                shared_best: f64,
                unique_best: &'a [f64],
            }
            fn summarize(o: &toy::TargetOutcome) -> OutcomeSummary<'_> {
                OutcomeSummary {
                    task: &o.task_name,
                    base_accuracy: o.base_accuracy,
                    shared_best: o.shared_best,
                    unique_best: &o.unique_best,
                }
            }
            let summary = Summary {
                seed: trial.seed,
                source_accuracy: &trial.source_accuracy,
                shared_dims: &trial.shared_dims,
                clean: summarize(&trial.clean),
                corrupted: summarize(&trial.corrupted),
            };
            std::fs::write(out.join("transfer_summary.json"), report::to_json(&summary))?;
        }
        Scenario::Negation => {
            let trial = toy::negation_scenario(seed)?;
            write_sweep_csv(&out.join("negation_corrupted.csv"), &trial.corrupted_sweep)?;
            write_sweep_csv(&out.join("negation_clean.csv"), &trial.clean_sweep)?;

            #[derive(Serialize)]
            struct Summary {
                seed: u64,
                tuned_accuracy: f64,
                base_corrupted_accuracy: f64,
                base_clean_accuracy: f64,
            }
            let summary = Summary {
                seed: trial.seed,
                tuned_accuracy: trial.tuned_accuracy,
                base_corrupted_accuracy: trial.base_corrupted_accuracy,
                base_clean_accuracy: trial.base_clean_accuracy,
            };
            std::fs::write(out.join("negation_summary.json"), report::to_json(&summary))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ValidateSummary {
    source: String,
    tau: f64,
    seed: u64,
    reports: Vec<ValidateEntry>,
    max_mean_rad: f64,
    max_max_rad: f64,
}

#[derive(Serialize)]
struct ValidateEntry {
    dims: (usize, usize),
    mean_rad: f64,
    max_rad: f64,
    angles_rad: Vec<f64>,
}

fn cmd_validate(
    files: &[PathBuf],
    trials: usize,
    tau: f64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (vectors, source) = match files {
        [] => (Vec::new(), "generated"),
        [a, b] => (
            vec![tvt::read_task_vector(a)?, tvt::read_task_vector(b)?],
            "provided",
        ),
        _ => {
            return Err(CliError::Input(format!(
                "validate takes no files or exactly two, got {}",
                files.len()
            )))
        }
    };
    let reports = angles::cross_validate(&vectors, tau, trials, seed)?;
    let summary = ValidateSummary {
        source: source.to_string(),
        tau,
        seed,
        max_mean_rad: reports.iter().map(|r| r.mean_rad).fold(0.0, f64::max),
        max_max_rad: reports.iter().map(|r| r.max_rad).fold(0.0, f64::max),
        reports: reports
            .into_iter()
            .map(|r| ValidateEntry {
                dims: r.dims,
                mean_rad: r.mean_rad,
                max_rad: r.max_rad,
                angles_rad: r.angles_rad,
            })
            .collect(),
    };
    emit(&summary, out)
}

/// Prints JSON to stdout or writes it to `--out`.
fn emit<T: Serialize>(value: &T, out: Option<PathBuf>) -> Result<(), CliError> {
    let text = report::to_json(value);
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn task_vector_from_bytes(bytes: &[u8], path: &Path) -> Result<TaskVector, CliError> {
    let mut vector = TaskVector::new();
    for (name, tensor) in tvt::from_bytes(bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
    {
        vector
            .insert(name, tensor)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(vector)
}
