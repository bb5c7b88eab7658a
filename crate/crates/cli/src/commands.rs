use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use misslik::checks::{check_lemma1, check_theorem2_expectation, geometric_schedule};
use misslik::em::{em_fit, em_uncertainty, EmInit};
use misslik::experiments::{
    loglik_cells, make_population, ml_mi_cells, run_sweep_on, trend_tests, write_results_csv, Family, PopulationSource,
    PopulationSpec, SweepResult, CSV_HEADER,
};
use misslik::io::{config_hash, read_csv, write_csv, write_params_json, CsvTable};
use misslik::mi::{imputation_seed, impute_once, mi_run, MiConfig};
use misslik::missingness::{ampute_partial, Pattern};
use misslik::{Error, GaussianParams, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{params_from, theta_grid, CheckKind, Config};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Shared state of one invocation.
pub struct Context {
    pub command: &'static str,
    pub config: Config,
    pub output_dir: PathBuf,
    pub jobs: Option<usize>,
    pub config_hash: String,
    written: Vec<PathBuf>,
}

impl Context {
    pub fn new(command: &'static str, config: Config, output_dir: PathBuf, jobs: Option<usize>) -> Result<Self> {
        fs::create_dir_all(&output_dir)?;
        let config_hash = config_hash(&config);
        Ok(Context {
            command,
            config,
            output_dir,
            jobs,
            config_hash,
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.output_dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn comment(&self) -> String {
        format!(
            "misslik {} {} config_hash={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_hash,
            self.config.seed
        )
    }

    fn provenance(&self, extra: Value) -> Value {
        let mut v = json!({
            "tool": "misslik",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.config.seed,
        });
        if let (Value::Object(base), Value::Object(more)) = (&mut v, extra) {
            base.extend(more);
        }
        v
    }

    /// One-line JSON summary for stdout.
    pub fn summary(&self, extra: Value) -> Value {
        let mut v = json!({
            "command": self.command,
            "config_hash": self.config_hash,
            "outputs": self.written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        if let (Value::Object(base), Value::Object(more)) = (&mut v, extra) {
            base.extend(more);
        }
        v
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut f = BufWriter::new(File::create(p)?);
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    fn write_table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let comment = self.comment();
        let p = self.path(name);
        let mut f = BufWriter::new(File::create(p)?);
        writeln!(f, "# {comment}")?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Names of the stacked parameters: means, then the covariance lower
/// triangle row by row.
pub fn stacked_names(columns: &[String]) -> Vec<String> {
    let mut out: Vec<String> = columns.iter().map(|c| format!("mean[{c}]")).collect();
    for i in 0..columns.len() {
        for j in 0..=i {
            out.push(format!("cov[{},{}]", columns[i], columns[j]));
        }
    }
    out
}

fn estimate_rows(columns: &[String], estimate: &GaussianParams, sd: &[f64]) -> Vec<Vec<String>> {
    stacked_names(columns)
        .into_iter()
        .zip(estimate.stacked())
        .zip(sd)
        .map(|((name, est), sd)| vec![name, est.to_string(), sd.to_string()])
        .collect()
}

pub fn ingest(ctx: &mut Context, csv_path: &Path) -> Result<Value> {
    let spec = PopulationSpec {
        source: PopulationSource::CsvMoments {
            path: csv_path.to_path_buf(),
        },
        population_size: ctx.config.population.population_size,
        seed: ctx.config.population.seed,
    };
    let pop = make_population(&spec)?;
    if pop.dropped_rows > 0 {
        log::warn!("dropped {} incomplete rows before computing moments", pop.dropped_rows);
    }
    let comment = ctx.comment();
    let p = ctx.path("population.csv");
    write_csv(&p, &pop.columns, &pop.data, Some(&comment))?;
    let prov = ctx.provenance(json!({
        "input": csv_path.display().to_string(),
        "dropped_rows": pop.dropped_rows,
        "population_size": spec.population_size,
        "population_seed": spec.seed,
    }));
    let p = ctx.path("truth.json");
    write_params_json(&p, &pop.truth, Some(&pop.columns), Some(prov))?;
    Ok(json!({ "dropped_rows": pop.dropped_rows }))
}

fn read_input(path: &Path) -> Result<CsvTable> {
    let t = read_csv(path)?;
    log::info!("read {} rows x {} columns from {}", t.values.nrows(), t.values.ncols(), path.display());
    Ok(t)
}

pub fn ampute(ctx: &mut Context, csv_path: &Path) -> Result<Value> {
    let table = read_input(csv_path)?;
    let data = table.to_partial()?;
    let mech = ctx.config.ampute.build();
    let (amputed, report) = ampute_partial(&data, &mech, ctx.config.seed)?;
    let comment = ctx.comment();
    let p = ctx.path("amputed.csv");
    write_csv(&p, &table.headers, &amputed.to_dmatrix(), Some(&comment))?;
    let doc = json!({
        "mechanism": mech,
        "achieved_rate": report.achieved_rate,
        "pattern_counts": report.pattern_counts,
        "provenance": ctx.provenance(json!({ "input": csv_path.display().to_string() })),
    });
    ctx.write_json("ampute_report.json", &doc)?;
    Ok(json!({ "achieved_rate": report.achieved_rate }))
}

pub fn fit(ctx: &mut Context, csv_path: &Path) -> Result<Value> {
    let table = read_input(csv_path)?;
    let data = table.to_partial()?;
    let em = ctx.config.em.clone();
    let res = em_fit(&data, &EmInit::Moments, &em)?;
    if !res.converged {
        log::warn!("EM stopped after {} iterations without converging", res.iterations);
    }
    let prov = ctx.provenance(json!({
        "input": csv_path.display().to_string(),
        "iterations": res.iterations,
        "converged": res.converged,
        "final_mean_loglik": res.final_loglik(),
    }));
    let p = ctx.path("params.json");
    write_params_json(&p, &res.params, Some(&table.headers), Some(prov))?;
    let trace: Vec<Vec<String>> = res
        .loglik_trace
        .iter()
        .enumerate()
        .map(|(i, ll)| vec![i.to_string(), ll.to_string()])
        .collect();
    ctx.write_table("loglik_trace.csv", &["iteration", "mean_loglik"], &trace)?;
    let b = ctx.config.fit.uncertainty_resamples;
    if b > 0 {
        let unc = em_uncertainty(&data, b, ctx.config.seed, &em)?;
        let rows = estimate_rows(&table.headers, &res.params, &unc.per_parameter_sd);
        ctx.write_table("uncertainty.csv", &["parameter", "estimate", "bootstrap_sd"], &rows)?;
    }
    Ok(json!({ "iterations": res.iterations, "converged": res.converged }))
}

pub fn impute(ctx: &mut Context, csv_path: &Path) -> Result<Value> {
    let table = read_input(csv_path)?;
    let data = table.to_partial()?;
    let mi = MiConfig {
        num_imputations: ctx.config.impute.num_imputations,
        em: ctx.config.em.clone(),
        seed: ctx.config.seed,
    };
    let res = mi_run(&data, &mi)?;
    let prov = ctx.provenance(json!({
        "input": csv_path.display().to_string(),
        "num_imputations": mi.num_imputations,
        "successful_imputations": res.estimate_cloud.len(),
    }));
    let p = ctx.path("mi_params.json");
    write_params_json(&p, &res.point_estimate, Some(&table.headers), Some(prov))?;
    let rows = estimate_rows(&table.headers, &res.point_estimate, &res.uncertainty.per_parameter_sd);
    ctx.write_table("mi_uncertainty.csv", &["parameter", "estimate", "imputation_sd"], &rows)?;
    let comment = ctx.comment();
    for j in 0..ctx.config.impute.write_completed.min(mi.num_imputations) {
        let (completed, _) = impute_once(&data, imputation_seed(mi.seed, j), &mi.em)?;
        let p = ctx.path(&format!("completed_{}.csv", j + 1));
        write_csv(&p, &table.headers, &completed, Some(&comment))?;
    }
    Ok(json!({ "imputations": res.estimate_cloud.len() }))
}

pub fn sweep(ctx: &mut Context) -> Result<Value> {
    let started = Instant::now();
    let sweep = ctx.config.sweep_config()?;
    let spec = ctx.config.population_spec()?;
    let population = make_population(&spec)?;
    let total = sweep.cells().len();
    log::info!("running {total} {} jobs", sweep.family);

    // rows are appended here as they finish; the canonical table replaces
    // it at the end
    let part_path = ctx.output_dir.join("sweep.csv.part");
    let mut part = csv::Writer::from_path(&part_path).map_err(csv_err)?;
    part.write_record(CSV_HEADER).map_err(csv_err)?;
    let mut done = 0usize;
    let mut sink_err: Option<csv::Error> = None;
    let mut sink = |row: &SweepResult| {
        done += 1;
        if sink_err.is_none() {
            if let Err(e) = part.write_record(row.csv_record()).and_then(|_| part.flush().map_err(Into::into)) {
                sink_err = Some(e);
            }
        }
        if done.is_multiple_of((total / 10).max(1)) {
            log::info!("{done}/{total} jobs done");
        }
    };
    let rows = run_sweep_on(&sweep, &population, ctx.jobs, &mut sink)?;
    if let Some(e) = sink_err {
        return Err(csv_err(e));
    }

    let comment = ctx.comment();
    let p = ctx.path("sweep.csv");
    let mut f = BufWriter::new(File::create(&p)?);
    writeln!(f, "# {comment}")?;
    write_results_csv(&mut f, &rows)?;
    drop(f);
    fs::remove_file(&part_path)?;

    let errors = rows.iter().filter(|r| !r.is_ok()).count();
    let summary = match sweep.family {
        Family::LoglikSup => json!({
            "cells": loglik_cells(&rows),
            "trends": trend_tests(&rows),
        }),
        Family::MlVsMi => json!({ "cells": ml_mi_cells(&rows) }),
    };
    ctx.write_json("sweep_summary.json", &summary)?;
    let meta = json!({
        "config": ctx.config,
        "sweep": sweep,
        "population_truth": population.truth,
        "population_columns": population.columns,
        "rows": rows.len(),
        "error_rows": errors,
        "wall_time_secs": started.elapsed().as_secs_f64(),
        "provenance": ctx.provenance(json!({})),
    });
    ctx.write_json("sweep_meta.json", &meta)?;
    if errors > 0 {
        log::warn!("{errors} of {} jobs failed; see the error column", rows.len());
    }
    Ok(json!({ "rows": rows.len(), "error_rows": errors }))
}

pub fn check(ctx: &mut Context, kind: Option<CheckKind>) -> Result<Value> {
    match kind.unwrap_or(ctx.config.check.kind) {
        CheckKind::Lemma1 => {
            let c = ctx.config.check.lemma1.clone();
            let params = params_from(&c.mean, &c.covariance)?;
            let alt: Pattern = c.alt_pattern.parse()?;
            let models = geometric_schedule(params.dim(), &alt, c.k_max)?;
            let grid = theta_grid(&params, &c.grid_mean_offsets, &c.grid_scales)?;
            let table = check_lemma1(&models, &params, &c.x, &grid)?;
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|r| {
                    vec![
                        r.k.to_string(),
                        r.off_complete_mass.to_string(),
                        r.max_gap.to_string(),
                        r.argmax_theta.to_string(),
                    ]
                })
                .collect();
            ctx.write_table("lemma1.csv", &["k", "off_complete_mass", "max_gap", "argmax_theta"], &rows)?;
            Ok(json!({ "rows": rows.len() }))
        }
        CheckKind::Theorem2 => {
            let c = ctx.config.check.theorem2.clone();
            let truth = params_from(&c.mean, &c.covariance)?;
            let mech = c.build_mechanism();
            let grid = theta_grid(&truth, &c.grid_mean_offsets, &c.grid_scales)?;
            let table = check_theorem2_expectation(&mech, &truth, &grid, c.n, c.replicates, ctx.config.seed)?;
            let labels: Vec<(f64, f64)> = c
                .grid_mean_offsets
                .iter()
                .flat_map(|&o| c.grid_scales.iter().map(move |&s| (o, s)))
                .collect();
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|r| {
                    let (o, s) = labels[r.theta_index];
                    vec![
                        r.theta_index.to_string(),
                        o.to_string(),
                        s.to_string(),
                        r.estimate.to_string(),
                        r.std_error.to_string(),
                    ]
                })
                .collect();
            ctx.write_table(
                "theorem2.csv",
                &["theta_index", "mean_offset", "cov_scale", "estimate", "std_error"],
                &rows,
            )?;
            Ok(json!({ "rows": rows.len() }))
        }
    }
}
