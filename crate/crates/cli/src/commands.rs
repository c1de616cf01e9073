//! The five subcommands. Each returns `Ok(())` or a [`CliError`] whose exit
//! code the binary passes on; `report.json` is written either way once the
//! output directory is known.

use std::path::{Path, PathBuf};

use polykin::characteristics::{self, ParticleEnsemble};
use polykin::diagnostics::{self, RateFitReport};
use polykin::kinetics::{self, TimeSeries};
use polykin::steady::{verify_estimates, ConstructionPath, SteadySolver};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::artifacts::ArtifactSink;
use crate::error::CliError;
use crate::scenario::{config_hash, override_field, LoadedScenario, Prepared, Scenario, SolverKind};
use crate::verify::{self, Suite};

/// Flags shared by the scenario-driven commands.
#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub resolution: Option<usize>,
}

/// Load and validate; on failure write an error-only report so the exit
/// code is backed by a machine-readable block, and nothing else.
fn load(args: &RunArgs, command: &str) -> Result<(LoadedScenario, Prepared, ArtifactSink), CliError> {
    let raw = std::fs::read_to_string(&args.config).unwrap_or_default();
    let fallback = ArtifactSink::new(args.out.clone(), config_hash(&raw), command);
    let loaded = match Scenario::load(&args.config) {
        Ok(mut l) => {
            l.scenario = l.scenario.with_resolution(args.resolution);
            l
        }
        Err(e) => return Err(report_failure(&fallback, e, json!({}))),
    };
    let sink = ArtifactSink::new(args.out.clone(), loaded.hash.clone(), command);
    let prepared = match loaded.scenario.prepare(&loaded.base_dir) {
        Ok(p) => p,
        Err(e) => return Err(report_failure(&sink, e, json!({ "scenario": loaded.scenario.name }))),
    };
    Ok((loaded, prepared, sink))
}

fn report_failure(sink: &ArtifactSink, err: CliError, body: Value) -> CliError {
    if let Err(io) = sink.write_error_report(&err, body) {
        log::error!("could not write report: {io}");
    }
    err
}

fn to_json(v: &impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn conservation_audit(series: &TimeSeries) -> Value {
    let last = series.last();
    json!({
        "m": series.m,
        "max_relative_error": series.max_conservation_error,
        "leaked": last.map(|r| r.leak),
        "clipped": last.map(|r| r.clipped),
        "absorbed_number": series.absorbed_number,
        "steps": series.steps,
    })
}

fn fits_for(loaded: &LoadedScenario, prepared: &Prepared, series: &TimeSeries) -> Option<Result<Vec<RateFitReport>, CliError>> {
    let d = &loaded.scenario.diagnostics;
    d.fit.map(|result| diagnostics::fit_rates(series, &prepared.model, result, d.fit_window).map_err(CliError::from))
}

pub fn simulate(args: &RunArgs) -> Result<(), CliError> {
    let (loaded, p, sink) = load(args, "simulate")?;
    let base = json!({
        "scenario": loaded.scenario.name,
        "solver": loaded.scenario.solver,
        "assumptions": to_json(&p.assumptions),
    });
    let result = match loaded.scenario.solver {
        SolverKind::Eulerian => kinetics::run(p.model, &p.state, p.options, &p.probes).map(|(s, _)| (s, None)),
        SolverKind::Lagrangian => lagrangian(&p).map(|run| {
            let csv = run.trajectory_csv();
            (run.series, Some(csv))
        }),
    };
    let (series, trajectory) = match result {
        Ok(r) => r,
        Err(e) => return Err(report_failure(&sink, e.into(), base)),
    };
    sink.write_csv("series.csv", &series.to_csv())?;
    for (k, snap) in series.snapshots.iter().enumerate() {
        sink.write_csv(&format!("snapshots/snapshot_{k:04}.csv"), &snap.to_snapshot_csv(series.m))?;
    }
    if let Some(csv) = trajectory {
        sink.write_csv("trajectory.csv", &csv)?;
    }
    let mut body = base;
    body["conservation"] = conservation_audit(&series);
    body["final"] = to_json(&series.last());
    match fits_for(&loaded, &p, &series) {
        Some(Ok(fits)) => body["fits"] = to_json(&fits),
        Some(Err(e)) => body["fits_error"] = json!(e.to_string()),
        None => {}
    }
    sink.write_report(body)?;
    Ok(())
}

fn lagrangian(p: &Prepared) -> polykin::Result<characteristics::LagrangianRun> {
    let ensemble = ParticleEnsemble::from_state(&p.state)?;
    characteristics::run(ensemble, &p.model.depoly, p.options.t_end, p.options.output_stride, None, p.probes.w2_target)
}

/// Lagrangian run with the contraction envelope and, for affine `d`, the
/// representation check against an Eulerian run.
pub fn characteristics(args: &RunArgs) -> Result<(), CliError> {
    let (loaded, p, sink) = load(args, "characteristics")?;
    let base = json!({ "scenario": loaded.scenario.name, "assumptions": to_json(&p.assumptions) });
    let run = match lagrangian(&p) {
        Ok(r) => r,
        Err(e) => return Err(report_failure(&sink, e.into(), base)),
    };
    sink.write_csv("series.csv", &run.series.to_csv())?;
    sink.write_csv("trajectory.csv", &run.trajectory_csv())?;
    let alpha = p.model.depoly.derivative(0.0);
    let g0 = run.trajectory.first().map(|r| r.3).unwrap_or(0.0);
    let envelope = run
        .trajectory
        .iter()
        .filter(|_| g0 > 0.0)
        .map(|(t, _, _, g)| g / (g0 * (-2.0 * alpha * t).exp()))
        .fold(0.0, f64::max);
    let mut body = base;
    body["z_ref"] = json!(run.z_ref);
    body["envelope_ratio_max"] = json!(envelope);
    body["conservation"] = conservation_audit(&run.series);
    if p.model.is_pure_ls() && matches!(p.model.depoly, polykin::DepolyProfile::LinearIncreasing { .. }) {
        match kinetics::run(p.model, &p.state, p.options, &p.probes) {
            Ok((_, eulerian)) => {
                body["representation_error"] = json!(run.ensemble.representation_check(&eulerian, &p.model.depoly).ok());
            }
            Err(e) => body["representation_error"] = json!(e.to_string()),
        }
    }
    sink.write_report(body)?;
    Ok(())
}

pub fn steady(args: &RunArgs, path: ConstructionPath) -> Result<(), CliError> {
    let (loaded, p, sink) = load(args, "steady")?;
    let opts = loaded.scenario.steady;
    let base = json!({ "scenario": loaded.scenario.name, "path": path });
    let solved = SteadySolver::new(p.model, opts, path).and_then(|s| s.solve(p.m));
    let report = match solved {
        Ok(r) => r,
        Err(e) => return Err(report_failure(&sink, e.into(), base)),
    };
    let refined = SteadySolver::new(p.model, opts.refined(), path).and_then(|s| s.solve(p.m));
    let checks = verify_estimates(&report, refined.as_ref().ok(), &p.model, opts.k_max);
    sink.write_json("steady_report.json", &report)?;
    sink.write_csv("steady_u.csv", &report.to_snapshot_csv()?)?;
    let mut body = base;
    body["v_bar"] = json!(report.v_bar);
    body["lambda"] = json!(report.lambda);
    body["eigen_residual"] = json!(report.eigen_residual);
    body["estimates"] = to_json(&checks);
    if let Err(e) = &refined {
        body["refinement_error"] = json!(e.to_string());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(report_failure(&sink, CliError::ChecksFailed { failed, total: checks.len() }, body));
    }
    sink.write_report(body)?;
    Ok(())
}

pub fn verify(suite: Suite, out: &Path) -> Result<(), CliError> {
    let sink = ArtifactSink::new(out.to_path_buf(), config_hash(&format!("{suite:?}")), "verify");
    let results = verify::run_suite(suite);
    for r in &results {
        println!("{}", r.summary_line());
    }
    let body = json!({ "suite": suite, "criteria": to_json(&results) });
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(report_failure(&sink, CliError::ChecksFailed { failed, total: results.len() }, body));
    }
    sink.write_report(body)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    value: String,
    v_end: Option<f64>,
    rho_end: Option<f64>,
    m2_end: Option<f64>,
    fits: Vec<RateFitReport>,
    error: Option<String>,
}

/// Run one scenario per value of `axis` in parallel; failures become rows.
pub fn sweep(args: &RunArgs, axis: &str, values: &[String]) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Parse(format!("cannot read {}: {e}", args.config.display())))?;
    let sink = ArtifactSink::new(args.out.clone(), config_hash(&text), "sweep");
    if values.is_empty() {
        return Err(report_failure(&sink, CliError::Validation("empty value list".into()), json!({ "axis": axis })));
    }
    let base_dir = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    // reject bad axes up front rather than once per row
    if let Err(e) = override_field(&text, axis, &values[0]).and_then(|t| Scenario::parse(&t)) {
        return Err(report_failure(&sink, e, json!({ "axis": axis })));
    }
    let rows: Vec<SweepRow> = values
        .par_iter()
        .map(|value| {
            let mut row = SweepRow { value: value.clone(), v_end: None, rho_end: None, m2_end: None, fits: Vec::new(), error: None };
            let run = || -> Result<(TimeSeries, Vec<RateFitReport>), CliError> {
                let t = override_field(&text, axis, value)?;
                let s = Scenario::parse(&t)?.with_resolution(args.resolution);
                let p = s.prepare(&base_dir)?;
                let (series, _) = kinetics::run(p.model, &p.state, p.options, &p.probes)?;
                let fits = match s.diagnostics.fit {
                    Some(r) => diagnostics::fit_rates(&series, &p.model, r, s.diagnostics.fit_window)?,
                    None => Vec::new(),
                };
                Ok((series, fits))
            };
            match run() {
                Ok((series, fits)) => {
                    if let Some(last) = series.last() {
                        row.v_end = Some(last.v);
                        row.rho_end = Some(last.rho);
                        row.m2_end = Some(last.m2);
                    }
                    row.fits = fits;
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    sink.write_csv("sweep.csv", &sweep_csv(axis, &rows))?;
    sink.write_report(json!({ "axis": axis, "rows": to_json(&rows) }))?;
    Ok(())
}

fn sweep_csv(axis: &str, rows: &[SweepRow]) -> String {
    let names: Vec<String> = rows.iter().find(|r| !r.fits.is_empty()).map(|r| r.fits.iter().map(|f| f.estimator.clone()).collect()).unwrap_or_default();
    let mut out = format!("{axis},V_end,rho_end,M2_end");
    for n in &names {
        out.push_str(&format!(",{n},{n}_theory"));
    }
    out.push_str(",error\n");
    let num = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!("{},{},{},{}", r.value, num(r.v_end), num(r.rho_end), num(r.m2_end)));
        for n in &names {
            let f = r.fits.iter().find(|f| &f.estimator == n);
            out.push_str(&format!(",{},{}", num(f.map(|f| f.fitted)), num(f.map(|f| f.theory))));
        }
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&format!(",{err}\n"));
    }
    out
}
