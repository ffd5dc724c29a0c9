use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use speedrisk::dataset::{load_prepared, to_analysis, to_analysis_with_labels, write_prepared_csv, AnalysisData, GroupBy, PreparedRow};
use speedrisk::estimator::{fit, select_m, EstimationConfig, FitResult};
use speedrisk::ingest::{self, cache, read_ais_csv, ColumnMap, PrepareOptions, SegmentParams, WhaleGrid};
use speedrisk::risk::SpeedGrid;
use speedrisk::sample::{generate_raw, write_reports, write_whale_grid, SampleConfig};
use speedrisk::scenarios::{
    ratio_grid, sensitivity_report, validation_report, CellKey, PerturbationSpec, RatioGridConfig, RiskTarget,
};
use speedrisk::synth::{generate_with, SynthConfig};
use speedrisk::uncertainty::{bootstrap, BootstrapConfig};
use speedrisk::ExecMode;

use crate::output::{csv_bytes, sibling, to_json, FileDigest, Manifest, FIT_FORMAT, FIT_VERSION};
use crate::{
    BootstrapArgs, Command, EstimateArgs, FitOptions, PrepareArgs, RatioGridArgs, SampleArgs, SelectMArgs,
    SensitivityArgs, SynthArgs, ValidateArgs,
};

/// The run finished and wrote its outputs, but the optimizer (or too many
/// bootstrap replicates) did not converge.
#[derive(Debug)]
pub struct NotConverged(pub String);

impl fmt::Display for NotConverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NotConverged {}

/// A fit file that is not a supported speedrisk fit.
#[derive(Debug)]
pub struct BadFitFile(pub String);

impl fmt::Display for BadFitFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadFitFile {}

/// Versioned fit document written by `estimate` and `select-m`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitFile {
    pub format: String,
    pub version: u32,
    pub group_by: GroupBy,
    pub group_labels: Vec<String>,
    pub estimation: EstimationConfig,
    pub fit: FitResult,
}

impl FitFile {
    fn new(group_by: GroupBy, group_labels: Vec<String>, estimation: EstimationConfig, fit: FitResult) -> Self {
        FitFile {
            format: FIT_FORMAT.into(),
            version: FIT_VERSION,
            group_by,
            group_labels,
            estimation,
            fit,
        }
    }

    fn load(path: &Path) -> Result<(Self, FileDigest)> {
        let (digest, bytes) = FileDigest::read(path)?;
        let file: FitFile = serde_json::from_slice(&bytes)
            .map_err(|e| BadFitFile(format!("{}: not a fit file: {e}", path.display())))?;
        if file.format != FIT_FORMAT || file.version != FIT_VERSION {
            return Err(BadFitFile(format!(
                "{}: unsupported fit format '{}' version {} (expected '{FIT_FORMAT}' version {FIT_VERSION})",
                path.display(),
                file.format,
                file.version
            ))
            .into());
        }
        if file.fit.weights.n_groups() != file.group_labels.len() {
            return Err(BadFitFile(format!("{}: weights and group labels differ in length", path.display())).into());
        }
        Ok((file, digest))
    }
}

pub fn run(command: Command, mode: ExecMode) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a, mode),
        Command::Estimate(a) => estimate(a, mode),
        Command::SelectM(a) => select_exponent(a, mode),
        Command::Bootstrap(a) => run_bootstrap(a, mode),
        Command::Validate(a) => validate(a, mode),
        Command::Sensitivity(a) => sensitivity(a, mode),
        Command::RatioGrid(a) => grid(a),
        Command::Synth(a) => synth(a, mode),
        Command::Sample(a) => sample(a),
    }
}

fn is_cache_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn prepared_bytes(path: &Path, rows: &[PreparedRow]) -> Result<Vec<u8>> {
    if is_cache_path(path) {
        Ok(cache::encode(rows))
    } else {
        let mut buf = Vec::new();
        write_prepared_csv(&mut buf, rows)?;
        Ok(buf)
    }
}

fn load_rows(path: &Path) -> Result<(Vec<PreparedRow>, FileDigest)> {
    let rows = load_prepared(path).with_context(|| format!("loading {}", path.display()))?;
    let (digest, _) = FileDigest::read(path)?;
    Ok((rows, digest))
}

fn load_analysis(path: &Path, group_by: GroupBy, labels: Option<&[String]>) -> Result<(AnalysisData, FileDigest)> {
    let (rows, digest) = load_rows(path)?;
    let data = match labels {
        Some(l) => to_analysis_with_labels(&rows, group_by, l)?,
        None => to_analysis(&rows, group_by)?,
    };
    if data.observations.is_empty() {
        return Err(speedrisk::Error::Input(format!("{} holds no observations", path.display())).into());
    }
    Ok((data, digest))
}

fn estimation_config(o: &FitOptions, m: u32, n_groups: usize, mode: ExecMode) -> Result<EstimationConfig> {
    Ok(EstimationConfig {
        lambda: o.lambda,
        grid: SpeedGrid::new(o.grid_max, o.grid_step)?,
        m,
        max_evals: o.max_evals,
        rel_tol: o.rel_tol,
        init: None,
        n_groups: Some(n_groups),
        seed: o.seed,
        multistart: o.multistart,
        exec: mode,
    })
}

fn print_weights(labels: &[String], f: &FitResult) {
    println!("{:<24} {:>8} {:>8} {:>10}", "group", "theta_w", "theta_i", "n");
    for (g, label) in labels.iter().enumerate() {
        println!(
            "{:<24} {:>8.4} {:>8.4} {:>10}",
            label, f.weights.theta_w[g], f.weights.theta_i[g], f.per_group_obs_counts[g]
        );
    }
    println!("objective {:.6e} (m = {}, {} evaluations)", f.objective_value, f.m, f.n_evals);
}

fn prepare(a: PrepareArgs, mode: ExecMode) -> Result<()> {
    let columns = match &a.columns {
        Some(p) => ColumnMap::from_toml(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => ColumnMap::default(),
    };
    let opts = PrepareOptions {
        segment: SegmentParams {
            dt_min: a.dt_min,
            d_min: a.d_min,
            v_max: a.v_max,
        },
        ice_unit: a.ice_unit,
    };
    if !(opts.segment.dt_min >= 0.0 && opts.segment.d_min >= 0.0 && opts.segment.v_max > 0.0) {
        return Err(speedrisk::Error::Config("thresholds must be non-negative and v_max positive".into()).into());
    }
    let mut manifest = Manifest::new("prepare", None, json!({ "options": &opts, "columns": &columns }));
    let (ais_digest, ais_bytes) = FileDigest::read(&a.ais)?;
    let (whale_digest, whale_bytes) = FileDigest::read(&a.whale)?;
    manifest.inputs = vec![ais_digest, whale_digest];

    let (records, read_report) = read_ais_csv(ais_bytes.as_slice(), &columns).context("reading position reports")?;
    let grid = WhaleGrid::from_csv(whale_bytes.as_slice()).context("reading whale grid")?;
    let prepared = ingest::prepare(records, &grid, &opts, mode)?;
    let r = &prepared.report;
    log::info!(
        "{} records, {} trajectories, {} segments, {} rows",
        r.records,
        r.trajectories,
        r.segments,
        r.rows
    );
    manifest.emit(&a.out, &prepared_bytes(&a.out, &prepared.rows)?)?;
    manifest.report = json!({ "read": read_report, "prepare": prepared.report });
    manifest.finish(&a.out)?;
    println!(
        "{} rows from {} records ({} segments excluded for missing covariates)",
        r.rows,
        r.records,
        r.excluded.total()
    );
    Ok(())
}

fn estimate(a: EstimateArgs, mode: ExecMode) -> Result<()> {
    let (data, digest) = load_analysis(&a.data.data, a.fit.group_by, None)?;
    let config = estimation_config(&a.fit, a.m, data.n_groups(), mode)?;
    let result = fit(&data.observations, &config)?;
    print_weights(&data.group_labels, &result);
    let converged = result.converged;
    let doc = FitFile::new(a.fit.group_by, data.group_labels, config, result);
    let mut manifest = Manifest::new("estimate", Some(a.fit.seed), json!({ "group_by": a.fit.group_by, "estimation": &doc.estimation }));
    manifest.inputs.push(digest);
    manifest.emit(&a.out, &to_json(&doc)?)?;
    manifest.report = json!({ "converged": converged, "objective_value": doc.fit.objective_value, "n_evals": doc.fit.n_evals });
    manifest.finish(&a.out)?;
    if !converged {
        return Err(NotConverged(format!("optimizer hit the evaluation limit; fit written to {}", a.out.display())).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct ExponentCsvRow<'a> {
    m: u32,
    group: &'a str,
    theta_w: f64,
    theta_i: f64,
    objective_value: f64,
    converged: bool,
    selected: bool,
}

fn select_exponent(a: SelectMArgs, mode: ExecMode) -> Result<()> {
    let (data, digest) = load_analysis(&a.data.data, a.fit.group_by, None)?;
    let config = estimation_config(&a.fit, 1, data.n_groups(), mode)?;
    let sel = select_m(&data.observations, &config, &a.candidates)?;
    let mut rows = Vec::new();
    for f in &sel.fits {
        for (g, label) in data.group_labels.iter().enumerate() {
            rows.push(ExponentCsvRow {
                m: f.m,
                group: label,
                theta_w: f.weights.theta_w[g],
                theta_i: f.weights.theta_i[g],
                objective_value: f.objective_value,
                converged: f.converged,
                selected: f.m == sel.best_m,
            });
        }
    }
    for r in &sel.table {
        println!("m = {}: objective {:.6e}{}", r.m, r.objective_value, if r.m == sel.best_m { "  (selected)" } else { "" });
    }
    let mut manifest = Manifest::new("select-m", Some(a.fit.seed), json!({ "group_by": a.fit.group_by, "candidates": &a.candidates, "estimation": &config }));
    manifest.inputs.push(digest);
    manifest.emit(&a.out, &csv_bytes(&rows)?)?;
    let best = sel.fits.iter().find(|f| f.m == sel.best_m).expect("best is a candidate").clone();
    let converged = best.converged;
    if let Some(p) = &a.fit_out {
        let doc = FitFile::new(a.fit.group_by, data.group_labels.clone(), EstimationConfig { m: best.m, ..config }, best);
        manifest.emit(p, &to_json(&doc)?)?;
    }
    manifest.report = json!({ "best_m": sel.best_m, "table": sel.table });
    manifest.finish(&a.out)?;
    if !converged {
        return Err(NotConverged(format!("the selected fit (m = {}) hit the evaluation limit", sel.best_m)).into());
    }
    Ok(())
}

fn fmt_ci(mean: f64, lo: f64, hi: f64) -> String {
    format!("{mean:.2} [{lo:.2}, {hi:.2}]")
}

#[derive(Serialize)]
struct IntervalCsvRow<'a> {
    group: &'a str,
    fit_theta_w: f64,
    theta_w: f64,
    theta_w_lo: f64,
    theta_w_hi: f64,
    theta_i: f64,
    theta_i_lo: f64,
    theta_i_hi: f64,
    theta_w_ci: String,
    theta_i_ci: String,
}

fn run_bootstrap(a: BootstrapArgs, mode: ExecMode) -> Result<()> {
    let (fit_file, fit_digest) = FitFile::load(&a.fit)?;
    let (data, data_digest) = load_analysis(&a.data.data, fit_file.group_by, Some(&fit_file.group_labels))?;
    let boot = BootstrapConfig {
        b: a.b,
        n_boot: a.n_boot,
        seed: a.seed,
        warm_start: !a.no_warm_start,
        ci_level: a.ci_level,
        freeze_scaling: a.freeze_scaling,
    };
    let est = EstimationConfig {
        exec: mode,
        ..fit_file.estimation.clone()
    };
    let summary = bootstrap(&data.observations, &est, &boot, Some(&fit_file.fit))?;

    let labels = &fit_file.group_labels;
    let mut matrix = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["replicate".to_string()];
    header.extend(labels.iter().cloned());
    matrix.write_record(&header)?;
    for r in &summary.replicates {
        let mut rec = vec![r.index.to_string()];
        rec.extend(r.theta_w.iter().map(|v| v.to_string()));
        matrix.write_record(&rec)?;
    }
    let matrix = matrix.into_inner().context("flushing csv")?;

    let rows: Vec<IntervalCsvRow> = summary
        .groups
        .iter()
        .map(|g| IntervalCsvRow {
            group: &labels[g.group],
            fit_theta_w: fit_file.fit.weights.theta_w[g.group],
            theta_w: g.mean_theta_w,
            theta_w_lo: g.theta_w_lo,
            theta_w_hi: g.theta_w_hi,
            theta_i: g.mean_theta_i,
            theta_i_lo: g.theta_i_lo,
            theta_i_hi: g.theta_i_hi,
            theta_w_ci: fmt_ci(g.mean_theta_w, g.theta_w_lo, g.theta_w_hi),
            theta_i_ci: fmt_ci(g.mean_theta_i, g.theta_i_lo, g.theta_i_hi),
        })
        .collect();
    println!("{:<24} {:<22} {:<22}", "group", "theta_w", "theta_i");
    for r in &rows {
        println!("{:<24} {:<22} {:<22}", r.group, r.theta_w_ci, r.theta_i_ci);
    }
    println!(
        "{} of {} replicates succeeded{}",
        summary.replicates.len(),
        boot.b,
        if summary.unreliable { " (unreliable)" } else { "" }
    );

    let summary_path = a.summary.clone().unwrap_or_else(|| sibling(&a.out, "summary"));
    let mut manifest = Manifest::new("bootstrap", Some(boot.seed), json!({ "bootstrap": &boot, "estimation": &est }));
    manifest.inputs = vec![data_digest, fit_digest];
    manifest.emit(&a.out, &matrix)?;
    manifest.emit(&summary_path, &csv_bytes(&rows)?)?;
    manifest.report = json!({
        "n_boot_effective": summary.n_boot_effective,
        "failures": &summary.failures,
        "unreliable": summary.unreliable,
        "max_share_deviation": summary.max_share_deviation(),
        "warnings": &summary.warnings,
    });
    manifest.finish(&a.out)?;
    if summary.unreliable {
        return Err(NotConverged(format!("{} of {} replicates failed", summary.failures.len(), boot.b)).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct ValidationCsvRow<'a> {
    group: &'a str,
    n: usize,
    correlation: Option<f64>,
    mean_observed: Option<f64>,
    mean_optimal: Option<f64>,
}

fn validate(a: ValidateArgs, mode: ExecMode) -> Result<()> {
    let (fit_file, fit_digest) = FitFile::load(&a.fit)?;
    let (data, data_digest) = load_analysis(&a.data.data, fit_file.group_by, Some(&fit_file.group_labels))?;
    let report = validation_report(&data.observations, &fit_file.fit, &fit_file.estimation.grid, mode)?;
    let rows: Vec<ValidationCsvRow> = report
        .iter()
        .map(|r| ValidationCsvRow {
            group: r.group.map_or("all", |g| fit_file.group_labels[g].as_str()),
            n: r.n,
            correlation: r.correlation,
            mean_observed: r.mean_observed,
            mean_optimal: r.mean_optimal,
        })
        .collect();
    for r in &rows {
        let corr = r.correlation.map_or_else(String::new, |c| format!("{c:.3}"));
        println!("{:<24} n = {:<10} r = {corr}", r.group, r.n);
    }
    let mut manifest = Manifest::new("validate", None, json!({ "grid": &fit_file.estimation.grid }));
    manifest.inputs = vec![data_digest, fit_digest];
    manifest.emit(&a.out, &csv_bytes(&rows)?)?;
    manifest.finish(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct SensitivityCsvRow<'a> {
    target: RiskTarget,
    factor: f64,
    group: &'a str,
    n: usize,
    mean_delta: Option<f64>,
    median_delta: Option<f64>,
}

fn sensitivity(a: SensitivityArgs, mode: ExecMode) -> Result<()> {
    let (fit_file, fit_digest) = FitFile::load(&a.fit)?;
    let (data, data_digest) = load_analysis(&a.data.data, fit_file.group_by, Some(&fit_file.group_labels))?;
    let targets = if a.target.is_empty() {
        vec![RiskTarget::Whale, RiskTarget::Ice]
    } else {
        a.target.clone()
    };
    let specs = targets
        .iter()
        .map(|&t| PerturbationSpec::new(t, a.factor))
        .collect::<speedrisk::Result<Vec<_>>>()?;
    let report = sensitivity_report(&data.observations, &fit_file.fit, &fit_file.estimation.grid, &specs, mode)?;
    let rows: Vec<SensitivityCsvRow> = report
        .iter()
        .map(|r| SensitivityCsvRow {
            target: r.target,
            factor: r.factor,
            group: &fit_file.group_labels[r.group],
            n: r.n,
            mean_delta: r.mean_delta,
            median_delta: r.median_delta,
        })
        .collect();
    for r in &rows {
        let show = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:+.4}"));
        println!(
            "{} x{}: {:<24} mean {:>9} median {:>9}",
            r.target,
            r.factor,
            r.group,
            show(r.mean_delta),
            show(r.median_delta)
        );
    }
    let mut manifest = Manifest::new("sensitivity", None, json!({ "specs": &specs, "grid": &fit_file.estimation.grid }));
    manifest.inputs = vec![data_digest, fit_digest];
    manifest.emit(&a.out, &csv_bytes(&rows)?)?;
    manifest.finish(&a.out)?;
    Ok(())
}

fn grid(a: RatioGridArgs) -> Result<()> {
    let config = RatioGridConfig {
        cell: a.cell_deg.map_or(CellKey::Column, CellKey::Degrees),
        trim_lo: a.trim,
        trim_hi: 1.0 - a.trim,
        min_count: a.min_count,
        epsilon: a.epsilon,
        group_by: a.group_by,
    };
    let (rows, digest) = load_rows(&a.data.data)?;
    let cells = ratio_grid(&rows, &config)?;
    println!("{} cells with at least {} observations", cells.len(), config.min_count);
    let mut manifest = Manifest::new("ratio-grid", None, json!({ "config": &config }));
    manifest.inputs.push(digest);
    manifest.emit(&a.out, &csv_bytes(&cells)?)?;
    manifest.finish(&a.out)?;
    Ok(())
}

fn synth(a: SynthArgs, mode: ExecMode) -> Result<()> {
    let mut manifest = Manifest::new("synth", None, serde_json::Value::Null);
    let mut config = match &a.config {
        Some(p) => {
            let (digest, bytes) = FileDigest::read(p)?;
            manifest.inputs.push(digest);
            let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", p.display()))?;
            SynthConfig::from_toml(&text)?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let data = generate_with(&config, mode)?;
    manifest.seed = Some(config.seed);
    manifest.parameters = json!({ "config": &config });
    manifest.emit(&a.out, &prepared_bytes(&a.out, &data.rows)?)?;
    manifest.emit(&a.truth, &to_json(&data.truth)?)?;
    manifest.report = json!({ "warnings": &data.truth.warnings, "scaling": data.truth.scaling });
    manifest.finish(&a.out)?;
    println!("{} observations in {} groups", data.rows.len(), config.n_groups());
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let config = SampleConfig {
        seed: a.seed,
        vessels: a.vessels,
        pings_per_vessel: a.pings,
        ..SampleConfig::default()
    };
    let s = generate_raw(&config)?;
    let mut ais = Vec::new();
    write_reports(&mut ais, &s.reports)?;
    let mut whale = Vec::new();
    write_whale_grid(&mut whale, &s.whale_grid)?;
    let mut manifest = Manifest::new("sample", Some(config.seed), json!({ "config": &config }));
    manifest.emit(&a.out_ais, &ais)?;
    manifest.emit(&a.out_whale, &whale)?;
    manifest.finish(&a.out_ais)?;
    println!("{} reports, {} whale grid nodes", s.reports.len(), s.whale_grid.len());
    Ok(())
}
