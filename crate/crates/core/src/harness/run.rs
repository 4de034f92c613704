//! Running experiments into artifact directories.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::meanfield::{
    attractivity_scan, bj_coefficients, drift, edge_distances, lyapunov_certificate, spectrum, write_spectrum_scan,
    CertificateConfig,
};
use crate::rate::{build_profile, check_supermartingale, uniform_grid, DEFAULT_GRID_SIZE, DEFAULT_ROOT_TOL};
use crate::seeding::{replica_rng, stage_seed};
use crate::triad::{init_state, run_replicas, InitMode, TrapConfig};
use crate::walk::{
    exact_exit_oracle, importance_exit, mc_exit, naive_excursions, urn_step, BirthDeathChain, UrnState, Walk1DConfig,
};

use super::{fit_rate, CertificateParams, Experiment, ExperimentConfig, MeanFieldParams, NetworkParams, RateParams, UrnParams, WalkParams};

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "REINFORCE_OUT";
pub const FAILED_MARKER: &str = "FAILED";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutSource {
    Cli,
    Env,
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub config: ExperimentConfig,
    pub config_text: String,
    pub out_dir: PathBuf,
    pub out_dir_source: OutSource,
    pub out_env_var: String,
    pub files: Vec<String>,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub summary: Value,
}

/// Output directory precedence: command line, then [`OUT_ENV`], then the config.
pub fn resolve_out_dir(cli: Option<&Path>, config: &ExperimentConfig) -> Result<(PathBuf, OutSource)> {
    resolve_with(cli, std::env::var_os(OUT_ENV), config)
}

fn resolve_with(cli: Option<&Path>, env: Option<OsString>, config: &ExperimentConfig) -> Result<(PathBuf, OutSource)> {
    if let Some(p) = cli {
        return Ok((p.to_path_buf(), OutSource::Cli));
    }
    if let Some(p) = env.filter(|v| !v.is_empty()) {
        return Ok((PathBuf::from(p), OutSource::Env));
    }
    match &config.out {
        Some(p) => Ok((p.clone(), OutSource::Config)),
        None => Err(Error::Config(format!("no output directory: pass --out, set {OUT_ENV} or add `out = DIR`"))),
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Runs `config`, writing data files into `dir` (created if needed). No
/// manifest is written; see [`execute`].
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir)?;
    let mut out = Artifacts { dir: dir.to_path_buf(), files: Vec::new() };
    let summary = match &config.experiment {
        Experiment::Rate(p) => run_rate(p, &mut out)?,
        Experiment::Walk1d(p) => run_walk(p, config, &mut out)?,
        Experiment::Urn(p) => run_urn(p, config, &mut out)?,
        Experiment::Network(p) => run_network(p, config, &mut out)?,
        Experiment::Meanfield(p) => run_meanfield(p, &mut out)?,
        Experiment::Certificate(p) => run_certificate(p, config, &mut out)?,
    };
    out.json("summary.json", &summary)?;
    Ok(RunOutcome { dir: out.dir, files: out.files, summary })
}

/// Resolves the output directory, runs the experiment and writes
/// `manifest.json`. On failure a `FAILED` marker holding the error is left in
/// the directory.
pub fn execute(config: &ExperimentConfig, cli_out: Option<&Path>) -> Result<RunOutcome> {
    let (dir, source) = resolve_out_dir(cli_out, config)?;
    fs::create_dir_all(&dir)?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let start = Instant::now();
    match run_experiment(config, &dir) {
        Ok(outcome) => {
            let manifest = Manifest {
                tool: "reinforce".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                kind: config.kind().as_str().into(),
                config: config.clone(),
                config_text: config.to_text(),
                out_dir: dir.clone(),
                out_dir_source: source,
                out_env_var: OUT_ENV.into(),
                files: outcome.files.clone(),
                wall_time_seconds: start.elapsed().as_secs_f64(),
            };
            let mut w = BufWriter::new(File::create(dir.join(MANIFEST))?);
            serde_json::to_writer_pretty(&mut w, &manifest)?;
            w.write_all(b"\n")?;
            w.flush()?;
            Ok(outcome)
        }
        Err(e) => {
            fs::write(&marker, format!("{e}\n"))?;
            Err(e)
        }
    }
}

fn run_rate(p: &RateParams, out: &mut Artifacts) -> Result<Value> {
    let family = p.family.build()?;
    let profile = build_profile(&family, p.grid_size, p.tol)?;
    profile.write_csv(out.file("profile.csv")?)?;
    out.json("profile.json", &profile.header())?;
    let mut summary = json!({ "family": family.id(), "parameters": family.parameters(), "C": profile.c });
    if let Some(m) = &p.supermartingale {
        let grid = uniform_grid(m.w_lo, m.w_hi, m.resolution);
        let report = check_supermartingale(&family, &profile, m.delta, m.x, &grid)?;
        out.json("supermartingale.json", &report)?;
        summary["supermartingale_holds"] = json!(report.holds);
        summary["supermartingale_worst_ratio"] = json!(report.worst_ratio);
    }
    Ok(summary)
}

fn run_walk(p: &WalkParams, config: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let family = p.family.build()?;
    let profile = build_profile(&family, DEFAULT_GRID_SIZE, DEFAULT_ROOT_TOL)?;
    let mut summaries = Vec::new();
    let mut cells = Vec::new();
    for (k, &x) in p.x.iter().enumerate() {
        let mut cfg = Walk1DConfig::new(family, x)?.with_w0(p.w0);
        if let Some(a) = p.a_x {
            cfg = cfg.with_a_x(a);
        }
        if let Some(m) = p.max_steps {
            cfg = cfg.with_max_steps(m);
        }
        cfg.validate()?;
        let seed = stage_seed(config.master_seed, k as u64);
        let sample = mc_exit(&cfg, config.n_runs, seed)?;
        sample.write_runs_csv(out.file(&format!("exit_{k}.csv"))?)?;
        let oracle = BirthDeathChain::from_walk(&cfg)
            .ok()
            .and_then(|(chain, start)| exact_exit_oracle(&chain).ok().map(|h| h[start]));
        let mut cell = json!({
            "x": x,
            "a_x": cfg.a_x,
            "w0": cfg.w0,
            "max_steps": cfg.max_steps,
            "summary": sample.summary,
            "oracle_mean_T": oracle,
        });
        if let Some(delta) = p.importance_delta {
            let naive = naive_excursions(&cfg, config.n_runs, stage_seed(seed, 1))?;
            let tilted = importance_exit(&cfg, &profile, delta, p.importance_runs, stage_seed(seed, 2))?;
            naive.write_runs_csv(out.file(&format!("excursions_naive_{k}.csv"))?)?;
            tilted.write_runs_csv(out.file(&format!("excursions_tilted_{k}.csv"))?)?;
            let (a, b) = (&naive.estimate, &tilted.estimate);
            let z = (a.exit_probability - b.exit_probability) / (a.se * a.se + b.se * b.se).sqrt();
            cell["naive"] = json!(a);
            cell["tilted"] = json!(b);
            cell["z_difference"] = json!(z);
            cell["tilted_rse_at_naive_budget"] = json!(b.rse_at_budget(a.total_steps));
        }
        summaries.push(sample.summary);
        cells.push(cell);
    }
    out.json("summaries.json", &summaries)?;
    let mut summary = json!({ "C": profile.c, "cells": cells });
    match fit_rate(&summaries, &profile) {
        Ok(fit) => {
            out.json("fit.json", &fit)?;
            summary["fit"] = json!(fit);
        }
        Err(e) => summary["fit_error"] = json!(e.to_string()),
    }
    Ok(summary)
}

fn run_urn(p: &UrnParams, config: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let start = UrnState::new(p.red, p.black)?;
    let mut finals = Vec::with_capacity(config.n_runs as usize);
    let mut traj = csv::Writer::from_writer(out.file("urn_trajectory.csv")?);
    traj.write_record(["t", "red", "black", "w"])?;
    for run in 0..config.n_runs {
        let mut rng = replica_rng(config.master_seed, run);
        let mut s = start;
        for _ in 0..p.steps {
            if run == 0 && s.t % p.stride == 0 {
                traj.write_record([s.t.to_string(), format!("{:e}", s.red), format!("{:e}", s.black), format!("{:e}", s.fraction())])?;
            }
            s = urn_step(&s, p.x, &mut rng);
        }
        if run == 0 {
            traj.write_record([s.t.to_string(), format!("{:e}", s.red), format!("{:e}", s.black), format!("{:e}", s.fraction())])?;
        }
        finals.push(s);
    }
    traj.flush()?;
    drop(traj);
    let mut w = csv::Writer::from_writer(out.file("urn_runs.csv")?);
    w.write_record(["run_id", "red", "black", "w"])?;
    for (i, s) in finals.iter().enumerate() {
        w.write_record([i.to_string(), format!("{:e}", s.red), format!("{:e}", s.black), format!("{:e}", s.fraction())])?;
    }
    w.flush()?;
    let n = finals.len() as f64;
    let near_edge = finals.iter().filter(|s| s.fraction() < 0.01 || s.fraction() > 0.99).count();
    Ok(json!({
        "runs": config.n_runs,
        "steps": p.steps,
        "mean_final_w": finals.iter().map(UrnState::fraction).sum::<f64>() / n,
        "mean_final_total": finals.iter().map(UrnState::total).sum::<f64>() / n,
        "fraction_within_0.01_of_edge": near_edge as f64 / n,
    }))
}

fn run_network(p: &NetworkParams, config: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let mut cells = Vec::new();
    for (k, &x) in p.x.iter().enumerate() {
        let trap = TrapConfig {
            n: p.agents,
            x,
            init: p.init,
            rule: p.rule,
            order: p.order,
            max_steps: p.max_steps,
            threshold: p.threshold,
            persistence: p.persistence,
            log_stride: p.log_stride,
        };
        let seed = stage_seed(config.master_seed, k as u64);
        let s = run_replicas(&trap, config.n_runs, seed)?;
        let mut w = csv::Writer::from_writer(out.file(&format!("trap_{k}.csv"))?);
        w.write_record(["run_id", "trapped", "pattern", "steps_taken", "detected_at", "cross_weight_fraction"])?;
        for r in &s.runs {
            w.write_record([
                r.run_id.to_string(),
                (r.report.trapped as u8).to_string(),
                r.report.pattern(),
                r.steps_taken.to_string(),
                r.report.detected_at.map(|t| t.to_string()).unwrap_or_default(),
                format!("{:e}", r.report.cross_weight_fraction),
            ])?;
        }
        w.flush()?;
        drop(w);
        let reports: Vec<Value> = s
            .runs
            .iter()
            .map(|r| json!({ "run_id": r.run_id, "seed": seed, "report": r.report, "steps_taken": r.steps_taken }))
            .collect();
        out.json(&format!("trap_{k}.json"), &json!({ "config": trap, "seed": seed, "runs": reports }))?;
        if p.log_stride > 0 {
            s.runs[0].write_log_csv(out.file(&format!("trajectory_{k}_run0.csv"))?)?;
        }
        let mut steps: Vec<u64> = s.runs.iter().filter(|r| r.report.trapped).map(|r| r.steps_taken).collect();
        steps.sort_unstable();
        cells.push(json!({
            "x": x,
            "seed": seed,
            "runs": s.n_runs,
            "trapped": s.trapped,
            "patterns": s.patterns,
            "median_trap_step": steps.get(steps.len() / 2),
        }));
    }
    Ok(json!({ "agents": p.agents, "rule": p.rule, "cells": cells }))
}

fn run_meanfield(p: &MeanFieldParams, out: &mut Artifacts) -> Result<Value> {
    write_spectrum_scan(p.n_min..=p.n_max, out.file("spectrum_scan.csv")?)?;
    let lin = (p.n_min..=p.n_max).map(spectrum).collect::<Result<Vec<_>>>()?;
    out.json("linearization.json", &lin)?;
    let mut drifts = Vec::new();
    for &agents in &p.drift_agents {
        let n = agents - 1;
        let base = init_state(agents, 0.1, InitMode::Unit)?.with_rule(p.rule);
        let at_c = drift(&base)?;
        let (b0, b1, b2) = bj_coefficients(n)?;
        let dist = edge_distances(agents, (0, 1));
        let mut pattern = Vec::new();
        for eps in [p.epsilon, p.epsilon / 2.0] {
            let mut s = base.clone();
            s.set_weight(0, 1, 1.0 + eps);
            let ex = drift(&s)?.excess();
            let mut residual = [0.0f64; 3];
            for (e, d) in dist.iter().enumerate() {
                let predicted = 6.0 / n as f64 * [b0, b1, b2][*d] * eps;
                residual[*d] = residual[*d].max((ex[e] - predicted).abs());
            }
            pattern.push(json!({ "epsilon": eps, "max_residual_by_distance": residual }));
        }
        drifts.push(json!({
            "agents": agents,
            "max_abs_drift_at_c": at_c.value.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            "max_reinforcement_error_at_c": at_c.reinforcement.iter().fold(0.0f64, |m, r| m.max((r - 6.0 / n as f64).abs())),
            "pattern": pattern,
        }));
    }
    out.json("drift.json", &drifts)?;
    Ok(json!({
        "n_range": [p.n_min, p.n_max],
        "max_eigenvalue_discrepancy": lin.iter().map(|l| l.eigenvalue_discrepancy).fold(0.0, f64::max),
        "max_left_residual": lin.iter().flat_map(|l| l.left_residuals).fold(0.0, f64::max),
        "all_attracting": lin.iter().all(|l| l.attracting),
        "first_non_attracting_n_up_to_10000": attractivity_scan(10_000),
        "rule": p.rule,
    }))
}

fn run_certificate(p: &CertificateParams, config: &ExperimentConfig, out: &mut Artifacts) -> Result<Value> {
    let cfg = CertificateConfig { seed: config.master_seed, ..CertificateConfig::new(p.agents, p.x, p.radius, p.grid_points) };
    let cert = lyapunov_certificate(&cfg)?;
    out.json("certificate.json", &cert)?;
    let worst = cert.worst_point();
    Ok(json!({
        "verified": cert.verified,
        "lambda": cert.lambda,
        "gamma": cert.gamma,
        "V0": cert.v0,
        "gap": cert.gap,
        "grid_checked": cert.grid_checked,
        "worst_expected_change": worst.map(|w| w.expected_change),
        "worst_norm": worst.map(|w| w.norm),
        "worst_failure": worst.and_then(|w| w.failure.clone()),
    }))
}
