use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use leadsync::lti::{self, TransferFunction};
use leadsync::matching::solve_ideal_gains;
use leadsync::metrics::{aggregate_table, metrics_csv, per_agent_csv, MetricsRecord};
use leadsync::network::{assemble_matrices, validate_network, Topology};
use leadsync::sim::{Mode, ScenarioConfig, SimError, Simulation};
use leadsync::tuners::TunerKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: &str = concat!("leadsync ", env!("CARGO_PKG_VERSION"));

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub stride: Option<usize>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.stride {
            cfg.stride = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub l2_squared: f64,
    pub l2: f64,
    pub linf: f64,
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedGains {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Artifacts {
    pub trace: Option<String>,
    pub metrics: Option<String>,
    pub per_agent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Full configuration echo in the dotted-key format.
    pub config: String,
    /// `ok`, `non_finite` or `invalid`.
    pub status: String,
    pub error: Option<String>,
    pub last_finite_time: Option<f64>,
    pub gains: Option<ResolvedGains>,
    pub summary: Option<Summary>,
    pub trace_sha256: Option<String>,
    pub artifacts: Artifacts,
    pub duration_seconds: f64,
}

/// Reads a scenario file or the configuration embedded in a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Parse(format!("{}: not a run manifest: {e}", path.display())))?;
        RunConfig::parse(&manifest.config)
    } else {
        RunConfig::parse(&text)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

struct Check {
    ok: bool,
    name: String,
    detail: String,
}

fn plant_checks(agent: usize, plant: &TransferFunction, n: usize) -> Check {
    let name = format!("plant {agent}");
    let problem = if plant.relative_degree() != 1 {
        Some(format!("relative degree {} (must be 1)", plant.relative_degree()))
    } else if plant.order() != n {
        Some(format!("order {} differs from the leader order {n}", plant.order()))
    } else if n > 1 && !lti::is_hurwitz(plant.num()).unwrap_or(false) {
        Some(format!("zeros {:?} are not in the open left half-plane", plant.num().roots()))
    } else {
        None
    };
    match problem {
        Some(detail) => Check { ok: false, name, detail: format!("agent {agent}: {detail}") },
        None => Check { ok: true, name, detail: format!("{plant}") },
    }
}

fn scenario_checks(sc: &ScenarioConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    let n = sc.leader.order();
    for (i, plant) in sc.plants.iter().enumerate() {
        checks.push(plant_checks(i + 1, plant, n));
    }
    let spr = lti::is_spr(&sc.leader);
    checks.push(Check {
        ok: spr,
        name: "leader SPR".into(),
        detail: if spr { format!("{}", sc.leader) } else { format!("{} is not strictly positive real", sc.leader) },
    });
    match assemble_matrices(&sc.network) {
        Ok(mats) => {
            for c in validate_network(&mats).checks {
                checks.push(Check { ok: c.passed, name: format!("network {}", c.name), detail: c.detail });
            }
        }
        Err(e) => checks.push(Check { ok: false, name: "network".into(), detail: e.to_string() }),
    }
    let unsolved: Vec<String> = sc
        .plants
        .iter()
        .enumerate()
        .filter_map(|(i, p)| solve_ideal_gains(p, &sc.leader, &sc.filter).err().map(|e| format!("agent {}: {e}", i + 1)))
        .collect();
    checks.push(Check {
        // ideal gains are only required when the loop is frozen at them
        ok: unsolved.is_empty() || sc.mode != Mode::Matched,
        name: "ideal gains".into(),
        detail: if unsolved.is_empty() { "solvable for every agent".into() } else { unsolved.join("; ") },
    });
    let general = sc.validate();
    checks.push(Check {
        ok: general.is_ok(),
        name: "configuration".into(),
        detail: general.err().map_or_else(|| "consistent".into(), |e| e.to_string()),
    });
    checks
}

/// Prints a check report. Exit 0 iff every check passes.
pub fn cmd_validate(config: &Path) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let sc = match cfg.to_scenario() {
        Ok(sc) => sc,
        Err(e) => {
            println!("FAIL build: {e}");
            return Err(e);
        }
    };
    let checks = scenario_checks(&sc);
    for c in &checks {
        println!("{} {}: {}", if c.ok { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.ok).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(CliError::Validation(format!("failed checks: {}", failed.join(", "))))
    }
}

/// Result of one simulation, before anything is written.
struct Outcome {
    manifest: RunManifest,
    trace: Option<Vec<u8>>,
    record: Option<MetricsRecord>,
}

fn execute(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    let mut manifest = RunManifest {
        version: VERSION.into(),
        config: cfg.to_text(),
        status: "invalid".into(),
        error: None,
        last_finite_time: None,
        gains: None,
        summary: None,
        trace_sha256: None,
        artifacts: Artifacts::default(),
        duration_seconds: 0.0,
    };
    let result = (|| -> Result<(Vec<u8>, MetricsRecord), CliError> {
        let sc = cfg.to_scenario()?;
        let sim = Simulation::new(&sc).map_err(|e| CliError::Validation(e.to_string()))?;
        let g = sim.gains();
        manifest.gains = Some(ResolvedGains { gamma: g.gamma.clone(), beta: g.beta.clone(), mu: g.mu });
        let traj = sim.run().map_err(|e| match e {
            SimError::NonFinite { time } => {
                manifest.last_finite_time = Some(time);
                CliError::Numerical(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        })?;
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).map_err(|e| CliError::Io(e.to_string()))?;
        let record = MetricsRecord::from_trajectory(cfg.topology.name(), cfg.tuner.kind, cfg.seed, &traj)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        manifest.summary = Some(Summary {
            l2_squared: record.l2_squared,
            l2: record.l2,
            linf: record.linf,
            final_error: traj.final_error(),
        });
        Ok((csv, record))
    })();
    manifest.duration_seconds = start.elapsed().as_secs_f64();
    match result {
        Ok((csv, record)) => {
            manifest.status = "ok".into();
            manifest.trace_sha256 = Some(hex::encode(Sha256::digest(&csv)));
            Outcome { manifest, trace: Some(csv), record: Some(record) }
        }
        Err(e) => {
            if matches!(e, CliError::Numerical(_)) {
                manifest.status = "non_finite".into();
            }
            manifest.error = Some(e.to_string());
            Outcome { manifest, trace: None, record: None }
        }
    }
}

fn outcome_error(m: &RunManifest) -> Option<CliError> {
    let msg = m.error.clone()?;
    Some(if m.status == "non_finite" { CliError::Numerical(msg) } else { CliError::Validation(msg) })
}

fn manifest_json(m: &RunManifest) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s.into_bytes()
}

/// Runs one scenario and writes `trace.csv`, `metrics.csv`,
/// `per_agent.csv` and `manifest.json` into `out`.
pub fn cmd_simulate(config: Option<&Path>, out: &Path, overrides: &Overrides) -> Result<RunManifest, CliError> {
    let mut cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    // fail on bad input before touching the output directory
    cfg.to_scenario()?;
    create_dir(out)?;
    let mut outcome = execute(&cfg);
    if let (Some(trace), Some(record)) = (&outcome.trace, &outcome.record) {
        let records = std::slice::from_ref(record);
        write_atomic(&out.join("trace.csv"), trace)?;
        write_atomic(&out.join("metrics.csv"), metrics_csv(records).as_bytes())?;
        write_atomic(&out.join("per_agent.csv"), per_agent_csv(records).as_bytes())?;
        outcome.manifest.artifacts = Artifacts {
            trace: Some("trace.csv".into()),
            metrics: Some("metrics.csv".into()),
            per_agent: Some("per_agent.csv".into()),
        };
    }
    write_atomic(&out.join("manifest.json"), &manifest_json(&outcome.manifest))?;
    let m = &outcome.manifest;
    match &m.summary {
        Some(s) => println!(
            "{} m={} {}: l2^2 = {:.6} l2 = {:.6} linf = {:.6} final = {:.3e} trace sha256 {}",
            cfg.topology,
            cfg.m,
            cfg.tuner.kind,
            s.l2_squared,
            s.l2,
            s.linf,
            s.final_error,
            m.trace_sha256.as_deref().unwrap_or("-")
        ),
        None => println!("run failed: {}", m.error.as_deref().unwrap_or("unknown error")),
    }
    match outcome_error(m) {
        Some(e) => Err(e),
        None => Ok(outcome.manifest),
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub topologies: Option<Vec<Topology>>,
    pub m: Option<Vec<usize>>,
    pub tuners: Option<Vec<TunerKind>>,
    pub workers: Option<usize>,
    pub traces: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub name: String,
    pub topology: String,
    pub m: usize,
    pub tuner: String,
    pub status: String,
    pub error: Option<String>,
    pub trace_sha256: Option<String>,
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub version: String,
    pub config: String,
    pub cells: Vec<CellEntry>,
    pub artifacts: Vec<String>,
    pub duration_seconds: f64,
}

/// Runs the topology x m x tuner grid on a worker pool and merges the
/// results in grid order.
pub fn cmd_sweep(
    config: Option<&Path>,
    out: &Path,
    overrides: &Overrides,
    opts: &SweepOptions,
) -> Result<SweepManifest, CliError> {
    let start = Instant::now();
    let mut base = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut base);
    let topologies = opts.topologies.clone().or(base.sweep_topologies.clone()).unwrap_or(vec![base.topology]);
    let ms = opts.m.clone().or(base.sweep_m.clone()).unwrap_or(vec![base.m]);
    let tuners = opts.tuners.clone().or(base.sweep_tuners.clone()).unwrap_or(vec![base.tuner.kind]);
    let mut cells = Vec::new();
    for &t in &topologies {
        for &m in &ms {
            for &k in &tuners {
                let mut c = base.clone();
                c.topology = t;
                c.m = m;
                c.tuner.kind = k;
                c.sweep_topologies = None;
                c.sweep_m = None;
                c.sweep_tuners = None;
                cells.push((format!("{t}-m{m}-{k}"), c));
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::EmptyGrid);
    }
    let cell_root = out.join("cells");
    create_dir(&cell_root)?;

    let workers = opts.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<(CellEntry, Option<MetricsRecord>), CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(name, cfg)| {
                let mut outcome = execute(cfg);
                let dir = cell_root.join(name);
                create_dir(&dir)?;
                if opts.traces {
                    if let Some(trace) = &outcome.trace {
                        write_atomic(&dir.join("trace.csv"), trace)?;
                        outcome.manifest.artifacts.trace = Some("trace.csv".into());
                    }
                }
                write_atomic(&dir.join("manifest.json"), &manifest_json(&outcome.manifest))?;
                let m = &outcome.manifest;
                let entry = CellEntry {
                    name: name.clone(),
                    topology: cfg.topology.name().into(),
                    m: cfg.m,
                    tuner: cfg.tuner.kind.name().into(),
                    status: m.status.clone(),
                    error: m.error.clone(),
                    trace_sha256: m.trace_sha256.clone(),
                    manifest: PathBuf::from("cells").join(name).join("manifest.json").display().to_string(),
                };
                Ok((entry, outcome.record))
            })
            .collect()
    });

    let mut entries = Vec::with_capacity(outcomes.len());
    let mut records = Vec::new();
    for o in outcomes {
        let (entry, record) = o?;
        entries.push(entry);
        records.extend(record);
    }
    write_atomic(&out.join("metrics.csv"), metrics_csv(&records).as_bytes())?;
    write_atomic(&out.join("per_agent.csv"), per_agent_csv(&records).as_bytes())?;
    write_atomic(&out.join("table.csv"), aggregate_table(&records).to_csv().as_bytes())?;
    let manifest = SweepManifest {
        version: VERSION.into(),
        config: base.to_text(),
        artifacts: vec!["metrics.csv".into(), "per_agent.csv".into(), "table.csv".into()],
        cells: entries,
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(&out.join("sweep.json"), json.as_bytes())?;

    for (e, r) in manifest.cells.iter().filter(|e| e.status == "ok").zip(&records) {
        println!("{:<28} l2^2 = {:>12.6} linf = {:>10.6}", e.name, r.l2_squared, r.linf);
    }
    let failed: Vec<&CellEntry> = manifest.cells.iter().filter(|e| e.status != "ok").collect();
    for e in &failed {
        println!("{:<28} FAILED: {}", e.name, e.error.as_deref().unwrap_or(""));
    }
    if failed.is_empty() {
        Ok(manifest)
    } else if failed.iter().any(|e| e.status == "non_finite") {
        Err(CliError::Numerical(format!("{} of {} cells failed", failed.len(), manifest.cells.len())))
    } else {
        Err(CliError::Validation(format!("{} of {} cells failed", failed.len(), manifest.cells.len())))
    }
}
