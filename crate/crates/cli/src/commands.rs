//! Implementation of the `design`, `simulate`, `verify` and `report` commands.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use nrfmpc::design::{run_design, DesignArtifacts, ARTIFACT_VERSION};
use nrfmpc::runtime::{run_summary, simulate, SimulationTrace, SolveTimeSummary};

use crate::config::{ConfigError, RunConfig, System};
use crate::verify::{verify_trace, VerifyReport, VerifySettings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Failed(_) | CliError::Io { .. } => 1,
        }
    }
}

/// Outcome of a command: `passed == false` maps to exit code 1.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let f = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn report_path(artifacts: &Path) -> PathBuf {
    artifacts.with_extension("report.txt")
}

/// Parses `N` or `a..b` (both ends included).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| CliError::Usage(format!("invalid seed '{s}'")));
    match text.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(CliError::Usage(format!("empty seed range {text}")));
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![num(text)?]),
    }
}

pub fn cmd_design(cfg: &RunConfig) -> Result<(DesignArtifacts, Outcome), CliError> {
    let sys = System::build(&cfg.system)?;
    let art = run_design(&sys.spec, &sys.layer, &sys.plant, &cfg.design_options(&sys.costs)).map_err(|e| CliError::Failed(e.to_string()))?;
    write_json(&cfg.artifacts, &art)?;
    let rp = report_path(&cfg.artifacts);
    fs::write(&rp, art.report()).map_err(io_err(&rp))?;
    let mut lines = vec![format!("artifacts: {}", cfg.artifacts.display()), format!("report: {}", rp.display())];
    lines.push(match art.certified() {
        Ok(()) => format!("certificate: rho_i >= 1 for all {} areas", art.areas.len()),
        Err(e) => e.to_string(),
    });
    lines.push(format!("design seconds: {:.3}", art.seconds));
    Ok((art.clone(), Outcome { passed: art.certified, lines }))
}

pub fn load_artifacts(path: &Path) -> Result<DesignArtifacts, CliError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let art: DesignArtifacts = serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Failed(format!("cannot parse {}: {e}", path.display())))?;
    if art.version != ARTIFACT_VERSION {
        return Err(CliError::Failed(format!("artifact version {} is not {ARTIFACT_VERSION}", art.version)));
    }
    Ok(art)
}

/// Loads the artifact file if present, otherwise runs the design.
pub fn artifacts_for(cfg: &RunConfig) -> Result<DesignArtifacts, CliError> {
    if cfg.artifacts.exists() {
        load_artifacts(&cfg.artifacts)
    } else {
        Ok(cmd_design(cfg)?.0)
    }
}

pub fn trace_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("trace_seed{seed}.csv"))
}

#[derive(Clone, Debug, Serialize)]
struct SeedRecord {
    seed: u64,
    steps: usize,
    breach: Option<String>,
    trace: PathBuf,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<(Vec<SimulationTrace>, Outcome), CliError> {
    let sys = System::build(&cfg.system)?;
    let art = artifacts_for(cfg)?;
    let scenario = sys.scenario(&cfg.scenario, cfg.steps)?;
    let opts = cfg.runtime_options();
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let traces = cfg
        .seeds
        .par_iter()
        .map(|&seed| simulate(&sys.plant, &sys.layer, &art, &sys.spec, &scenario, &sys.initial, seed, cfg.steps, &opts))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let mut records = Vec::new();
    let mut passed = true;
    for t in &traces {
        let path = trace_path(&cfg.out_dir, t.seed);
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        t.write_csv(BufWriter::new(f)).map_err(|e| CliError::Failed(e.to_string()))?;
        if let Some(b) = &t.breach {
            passed = false;
            write_json(&cfg.out_dir.join(format!("breach_seed{}.json", t.seed)), b)?;
        }
        records.push(SeedRecord {
            seed: t.seed,
            steps: t.steps.len(),
            breach: t.breach.as_ref().map(|b| format!("area {} step {}: {:?}", b.area + 1, b.k, b.status)),
            trace: path,
        });
    }
    let summary = run_summary(&traces.iter().collect::<Vec<_>>());
    write_json(&cfg.out_dir.join("summary.json"), &serde_json::json!({ "seeds": records, "solve_micros": summary }))?;
    let lines = records
        .iter()
        .map(|r| format!("seed {}: {} steps{} -> {}", r.seed, r.steps, r.breach.as_ref().map(|b| format!(", breach at {b}")).unwrap_or_default(), r.trace.display()))
        .collect();
    Ok((traces, Outcome { passed, lines }))
}

pub fn read_trace(path: &Path) -> Result<SimulationTrace, CliError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let seed = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.rsplit("seed").next())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    SimulationTrace::read_csv(BufReader::new(f), seed).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn cmd_verify(cfg: &RunConfig, traces: &[PathBuf]) -> Result<(Vec<VerifyReport>, Outcome), CliError> {
    if traces.is_empty() {
        return Err(CliError::Usage("verify needs at least one trace".into()));
    }
    let sys = System::build(&cfg.system)?;
    let art = load_artifacts(&cfg.artifacts)?;
    let settings = VerifySettings { eps: 1e-9, margin: cfg.runtime.quiescence_margin, tol: cfg.runtime.quiescence_tol };
    let mut reports = Vec::new();
    let mut lines = Vec::new();
    for path in traces {
        let tr = read_trace(path)?;
        let r = verify_trace(&tr, &sys.layer, &sys.spec, &art, &settings);
        for v in &r.violations {
            lines.push(serde_json::to_string(&serde_json::json!({ "trace": path, "violation": v })).expect("serialisable"));
        }
        lines.push(format!(
            "{}: {} steps, {} violations, {} quiescent steps (max |u_s1| {:.3e}, max |u_s2| {:.3e})",
            path.display(),
            r.steps,
            r.violations.len(),
            r.quiescent_steps,
            r.max_quiet_us1,
            r.max_quiet_us2
        ));
        reports.push(r);
    }
    let passed = reports.iter().all(VerifyReport::passed);
    Ok((reports, Outcome { passed, lines }))
}

pub fn cmd_report(traces: &[PathBuf], out: Option<&Path>) -> Result<(Vec<SolveTimeSummary>, Outcome), CliError> {
    if traces.is_empty() {
        return Err(CliError::Usage("report needs at least one trace".into()));
    }
    let loaded = traces.iter().map(|p| read_trace(p)).collect::<Result<Vec<_>, _>>()?;
    let summary = run_summary(&loaded.iter().collect::<Vec<_>>());
    if let Some(out) = out {
        write_json(&out.join("report.json"), &summary)?;
    }
    let mut lines = vec!["area  samples  min_us  max_us  mean_us  median_us  mode_us".to_string()];
    for s in &summary {
        lines.push(format!("{:>4}  {:>7}  {:>6.1}  {:>6.1}  {:>7.1}  {:>9.1}  {:>7.0}", s.area + 1, s.samples, s.min, s.max, s.mean, s.median, s.mode));
    }
    Ok((summary, Outcome { passed: true, lines }))
}
