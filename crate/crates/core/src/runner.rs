//! Configuration-driven experiment runs.
//!
//! A run reads one TOML file, executes the named experiment and writes
//! payload files (CSV, two-column `.dat`, `summary.json`) followed by
//! `manifest.json`. Payloads depend only on the configuration; the manifest
//! alone carries timestamps and the environment. The manifest is removed
//! when a run starts and written last, so an interrupted run leaves none.
//!
//! Every payload starts with the schema line
//! `# wiener-nlw <experiment>/v1 config_hash=<sha256>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::experiments::{
    exceptional_set_probe, strichartz_tail_scaling, sup_tail_study, truncation_convergence, uniform_energy,
    BaseData, ConvergenceReport, Ensemble, EnsembleSpec, ExceptionalParams, ExperimentError, Level, SweepParams,
    SweepResult, TailCurve,
};
use crate::grid::{sobolev_norm, Cutoff, Field, GridSpec};
use crate::norms::NormRow;
use crate::randomization::DistributionKind;
use crate::solver::{
    evolve_nlw, evolve_perturbed, l2_growth_ratio, EnergyTrace, Forcing, SolverConfig, Trajectory,
};

/// Environment variable overriding the output directory.
pub const OUTPUT_DIR_ENV: &str = "WNLW_OUTPUT_DIR";

pub const SCHEMA_VERSION: &str = "v1";

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration{}: {message}", field.as_ref().map(|f| format!(" at `{f}`")).unwrap_or_default())]
    ConfigInvalid { field: Option<String>, message: String },
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
    #[error("experiment failed: {0}")]
    Experiment(#[from] ExperimentError),
}

impl RunError {
    fn config(field: &str, message: impl Into<String>) -> RunError {
        RunError::ConfigInvalid {
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> RunError {
        RunError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Process exit status: 1 for configuration errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ConfigInvalid { .. } => 1,
            _ => 2,
        }
    }

    /// One-line JSON error record.
    pub fn to_json(&self) -> String {
        let kind = match self {
            RunError::ConfigInvalid { .. } => "config-invalid",
            RunError::Io { .. } => "io-failure",
            RunError::Experiment(_) => "experiment-failure",
        };
        let field = match self {
            RunError::ConfigInvalid { field, .. } => field.clone(),
            _ => None,
        };
        serde_json::json!({ "error": kind, "field": field, "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Tail,
    SupTail,
    UniformEnergy,
    Convergence,
    ExceptionalSet,
    SolverValidate,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::Tail => "tail",
            ExperimentKind::SupTail => "sup-tail",
            ExperimentKind::UniformEnergy => "uniform-energy",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::ExceptionalSet => "exceptional-set",
            ExperimentKind::SolverValidate => "solver-validate",
        }
    }

    /// What the experiment measures.
    pub fn probes(self) -> &'static str {
        match self {
            ExperimentKind::Tail => {
                "sub-Gaussian tail of ‖S(t)(u₀^ω,u₁^ω)‖_{L^q_I L^r_x} and its |I|^{2/q} interval scaling"
            }
            ExperimentKind::SupTail => "sub-Gaussian tail of sup_t ‖S(t)(u₀^ω,u₁^ω)‖_{L^r} for S and S̃ as T grows",
            ExperimentKind::UniformEnergy => "energy of frequency-truncated solutions v_N bounded uniformly in N",
            ExperimentKind::Convergence => "convergence of z_N → z in L⁵L¹⁰ and of v_N → v in L^∞𝓗¹ as N grows",
            ExperimentKind::ExceptionalSet => "probability of the set where the forcing bounds fail",
            ExperimentKind::SolverValidate => "energy conservation and the linear/nonlinear split of the solver",
        }
    }
}

/// Ensemble settings; grid and seed come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub base: BaseData,
    pub distribution: DistributionKind,
    pub members: usize,
    #[serde(default = "smooth_cutoff")]
    pub cutoff: Cutoff,
}

fn smooth_cutoff() -> Cutoff {
    Cutoff::SmoothPsi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSection {
    #[serde(default = "five")]
    pub q: f64,
    #[serde(default = "ten")]
    pub r: f64,
    /// Long interval, then the short interval for the scaling check.
    pub intervals: [[f64; 2]; 2],
}

fn five() -> f64 {
    5.0
}

fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupTailSection {
    pub r: f64,
    pub times: Vec<f64>,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub levels: Vec<Level>,
    pub final_time: f64,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub samples_per_unit: Option<f64>,
    #[serde(default)]
    pub control: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExceptionalSection {
    pub final_time: f64,
    pub alpha: f64,
    pub threshold: f64,
    #[serde(default)]
    pub sweep_thresholds: Vec<f64>,
    pub k: f64,
    pub theta: f64,
    pub tau: f64,
    #[serde(default)]
    pub samples_per_unit: Option<f64>,
    /// Solve the perturbed equation for the good set with `[solver]`.
    #[serde(default)]
    pub solve_good: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub final_time: f64,
    pub data: BaseData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_tail: Option<SupTailSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_energy: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exceptional_set: Option<ExceptionalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_validate: Option<ValidateSection>,
}

fn section<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, RunError> {
    value
        .as_ref()
        .ok_or_else(|| RunError::config(name, format!("section [{name}] is required for this experiment")))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, RunError> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = e.span().and_then(|span| field_path_at(text, span.start));
            RunError::ConfigInvalid { field, message }
        })
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        let config = ExperimentConfig::from_toml(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// TOML text of the configuration. Seeds must fit in `i64`, as every
    /// TOML integer does.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Canonical JSON (sorted keys, shortest round-trip numbers) of the
    /// fields that determine the payloads; output directory and thread
    /// count are excluded.
    pub fn canonical(&self) -> String {
        let mut copy = self.clone();
        copy.output_dir = None;
        copy.threads = None;
        let value = serde_json::to_value(&copy).expect("configuration serializes");
        serde_json::to_string(&sorted(value)).expect("json value serializes")
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn ensemble_spec(&self) -> Result<EnsembleSpec, RunError> {
        let e = section(&self.ensemble, "ensemble")?;
        if e.members == 0 {
            return Err(RunError::config("ensemble.members", "must be positive"));
        }
        Ok(EnsembleSpec {
            grid: self.grid,
            base: e.base.clone(),
            distribution: e.distribution,
            members: e.members,
            seed: self.seed,
            cutoff: e.cutoff,
        })
    }

    fn solver_config(&self) -> Result<SolverConfig, RunError> {
        let config = *section(&self.solver, "solver")?;
        config
            .validate(&self.grid)
            .map_err(|e| RunError::config("solver.dt", e.to_string()))?;
        Ok(config)
    }

    fn sweep_params(&self, s: &SweepSection) -> Result<SweepParams, RunError> {
        Ok(SweepParams {
            levels: s.levels.clone(),
            final_time: s.final_time,
            solver: self.solver_config()?,
            s: s.s,
            alpha: s.alpha,
            samples_per_unit: s.samples_per_unit,
            control: s.control,
        })
    }

    /// Checks the sections and preconditions of the named experiment
    /// without running it.
    pub fn validate(&self) -> Result<(), RunError> {
        if self.threads == Some(0) {
            return Err(RunError::config("threads", "must be positive"));
        }
        let band = self.grid.band_limit();
        match self.experiment {
            ExperimentKind::Tail => {
                self.ensemble_spec()?;
                let t = section(&self.tail, "tail")?;
                if !(t.q.is_finite() && t.r.is_finite() && t.q >= 1.0 && t.r >= 1.0) {
                    return Err(RunError::config("tail.q", "q and r must be finite and at least 1"));
                }
                for (i, [a, b]) in t.intervals.iter().enumerate() {
                    if !(*a >= 0.0 && b > a && b - a <= 10.0) {
                        return Err(RunError::config(&format!("tail.intervals[{i}]"), "need 0 ≤ a < b ≤ a + 10"));
                    }
                }
            }
            ExperimentKind::SupTail => {
                self.ensemble_spec()?;
                let t = section(&self.sup_tail, "sup_tail")?;
                if !(t.r >= 2.0) {
                    return Err(RunError::config("sup_tail.r", "must be at least 2"));
                }
                if t.depth > 14 {
                    return Err(RunError::config("sup_tail.depth", "must be at most 14"));
                }
                if t.times.is_empty() || t.times.iter().any(|&x| !(x > 0.0)) {
                    return Err(RunError::config("sup_tail.times", "need positive final times"));
                }
            }
            ExperimentKind::UniformEnergy | ExperimentKind::Convergence => {
                let spec = self.ensemble_spec()?;
                let (name, s) = if self.experiment == ExperimentKind::UniformEnergy {
                    ("uniform_energy", section(&self.uniform_energy, "uniform_energy")?)
                } else {
                    ("convergence", section(&self.convergence, "convergence")?)
                };
                self.sweep_params(s)?;
                if s.levels.is_empty() || s.levels.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(RunError::config(&format!("{name}.levels"), "must be nonempty and strictly ascending"));
                }
                let top = s.levels.iter().map(|l| l.value()).filter(|v| v.is_finite()).fold(0.0, f64::max);
                if self.experiment == ExperimentKind::Convergence && band < 2.0 * top {
                    return Err(RunError::config(
                        "convergence.levels",
                        format!("grid band limit {band:.3} must be at least 2·max N = {}", 2.0 * top),
                    ));
                }
                if top > band {
                    return Err(RunError::config(
                        &format!("{name}.levels"),
                        format!("N = {top} exceeds the grid band limit {band:.3}"),
                    ));
                }
                let reg = s.s.or(spec.base.regularity());
                match reg {
                    Some(v) if v > 0.5 && v < 1.0 => {}
                    _ => return Err(RunError::config(&format!("{name}.s"), "regularity s in (1/2, 1) is required")),
                }
                if !(s.final_time > 0.0) {
                    return Err(RunError::config(&format!("{name}.final_time"), "must be positive"));
                }
            }
            ExperimentKind::ExceptionalSet => {
                self.ensemble_spec()?;
                let e = section(&self.exceptional_set, "exceptional_set")?;
                if e.solve_good {
                    self.solver_config()?;
                }
                if !(e.final_time > 0.0 && e.threshold > 0.0 && e.k > 0.0 && e.theta > 0.0 && e.tau > 0.0) {
                    return Err(RunError::config(
                        "exceptional_set",
                        "final_time, threshold, k, theta and tau must be positive",
                    ));
                }
            }
            ExperimentKind::SolverValidate => {
                self.solver_config()?;
                let v = section(&self.solver_validate, "solver_validate")?;
                if !(v.final_time > 0.0) {
                    return Err(RunError::config("solver_validate.final_time", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn sorted(value: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let ordered: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sorted(v))).collect();
            Value::Object(ordered.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

/// Dotted key path of the assignment or table header enclosing `offset`.
fn field_path_at(text: &str, offset: usize) -> Option<String> {
    let mut table = String::new();
    let mut key = None;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            table = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key = None;
        } else if let Some((k, _)) = trimmed.split_once('=') {
            if !trimmed.starts_with('#') {
                key = Some(k.trim().to_string());
            }
        }
        if offset < pos + line.len() {
            break;
        }
        pos += line.len();
    }
    match (table.is_empty(), key) {
        (true, Some(k)) => Some(k),
        (false, Some(k)) => Some(format!("{table}.{k}")),
        (false, None) => Some(table),
        (true, None) => None,
    }
}

/// Run-level options outside the hashed configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub validate_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub threads: usize,
    pub dealias_ratio: f64,
    pub padded_points: usize,
    pub filter: bool,
    pub os: String,
    pub arch: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
    pub aborted_samples: usize,
    pub environment: Environment,
}

/// Outcome of [`run`]; `None` manifest for validate-only runs.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub manifest: Option<RunManifest>,
}

/// Output directory: explicit option, then the environment variable, then
/// the configuration, then `wnlw-output`.
pub fn resolve_output_dir(config: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("wnlw-output"))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Collects payload files and writes each atomically.
struct Outputs {
    dir: PathBuf,
    header: String,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        let text = format!("{}\n{body}", self.header);
        atomic_write(&self.dir.join(name), text.as_bytes())?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// `summary.json` with the hash inside the document.
    fn summary<T: Serialize>(&mut self, experiment: &str, hash: &str, seed: u64, body: &T) -> Result<(), RunError> {
        let doc = serde_json::json!({
            "schema": format!("wiener-nlw {experiment}/{SCHEMA_VERSION}"),
            "config_hash": hash,
            "seed": seed,
            "report": body,
        });
        let text = serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n";
        atomic_write(&self.dir.join("summary.json"), text.as_bytes())?;
        self.files.push("summary.json".into());
        Ok(())
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes).map_err(|e| RunError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

fn dat(columns: &str, rows: &[(f64, f64)]) -> String {
    let mut s = format!("# {columns}\n");
    for (x, y) in rows {
        let _ = writeln!(s, "{x} {y}");
    }
    s
}

fn tail_dat(tail: &TailCurve) -> String {
    dat("lambda log_p", &tail.log_points())
}

/// Loads, validates and runs a configuration file.
pub fn run(config_path: &Path, options: &RunOptions) -> Result<RunOutcome, RunError> {
    let config = ExperimentConfig::load(config_path)?;
    run_config(&config, options)
}

/// Runs a validated configuration.
pub fn run_config(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let dir = resolve_output_dir(config, options.output_dir.as_deref());
    if options.validate_only {
        return Ok(RunOutcome {
            output_dir: dir,
            manifest: None,
        });
    }
    let threads = options.threads.or(config.threads);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| RunError::config("threads", e.to_string()))?;
    pool.install(|| execute(config, dir))
}

fn execute(config: &ExperimentConfig, dir: PathBuf) -> Result<RunOutcome, RunError> {
    fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| RunError::io(&manifest_path, e))?;
    }
    let started_unix = unix_now();
    let hash = config.hash();
    let tag = config.experiment.tag();
    let mut out = Outputs {
        dir: dir.clone(),
        header: format!("# wiener-nlw {tag}/{SCHEMA_VERSION} config_hash={hash}"),
        files: Vec::new(),
    };
    let aborted = match config.experiment {
        ExperimentKind::Tail => run_tail(config, &hash, &mut out)?,
        ExperimentKind::SupTail => run_sup_tail(config, &hash, &mut out)?,
        ExperimentKind::UniformEnergy => run_uniform_energy(config, &hash, &mut out)?,
        ExperimentKind::Convergence => run_convergence(config, &hash, &mut out)?,
        ExperimentKind::ExceptionalSet => run_exceptional(config, &hash, &mut out)?,
        ExperimentKind::SolverValidate => run_validate(config, &hash, &mut out)?,
    };
    let manifest = RunManifest {
        experiment: tag.to_string(),
        config_hash: hash,
        seed: config.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        finished_unix: unix_now(),
        outputs: out.files.clone(),
        aborted_samples: aborted,
        environment: Environment {
            threads: rayon::current_num_threads(),
            dealias_ratio: config.grid.dealias_ratio(),
            padded_points: config.grid.padded_points(),
            filter: config.grid.uses_filter(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        },
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    atomic_write(&manifest_path, text.as_bytes())?;
    Ok(RunOutcome {
        output_dir: dir,
        manifest: Some(manifest),
    })
}

fn prepare(config: &ExperimentConfig) -> Result<Ensemble, RunError> {
    Ok(config.ensemble_spec()?.prepare()?)
}

fn run_tail(config: &ExperimentConfig, hash: &str, out: &mut Outputs) -> Result<usize, RunError> {
    let t = section(&config.tail, "tail")?;
    let ensemble = prepare(config)?;
    let [long, short] = t.intervals;
    let report = strichartz_tail_scaling(&ensemble, t.q, t.r, (long[0], long[1]), (short[0], short[1]))?;
    let mut csv = format!("{}\n", NormRow::HEADER);
    for (member, norms) in report.norms.iter().enumerate() {
        for norm in norms {
            let _ = writeln!(csv, "{}", NormRow::from_norm(member as u64, norm).to_csv());
        }
    }
    out.write("tail_norms.csv", &csv)?;
    out.write("tail_long.dat", &tail_dat(&report.tails[0]))?;
    out.write("tail_short.dat", &tail_dat(&report.tails[1]))?;
    out.summary("tail", hash, config.seed, &report)?;
    Ok(0)
}

fn run_sup_tail(config: &ExperimentConfig, hash: &str, out: &mut Outputs) -> Result<usize, RunError> {
    let t = section(&config.sup_tail, "sup_tail")?;
    let ensemble = prepare(config)?;
    let study = sup_tail_study(&ensemble, t.r, &t.times, t.depth)?;
    let mut csv = String::from("member,component,final_time,r,sup,argmax\n");
    for row in &study.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.member, row.component, row.final_time, row.r, row.sup, row.argmax
        );
    }
    out.write("sup_tail.csv", &csv)?;
    for (i, time) in t.times.iter().enumerate() {
        out.write(&format!("sup_tail_S_T{time}.dat"), &tail_dat(&study.s_tails[i]))?;
        out.write(&format!("sup_tail_tilde_T{time}.dat"), &tail_dat(&study.tilde_tails[i]))?;
    }
    out.summary("sup-tail", hash, config.seed, &study)?;
    Ok(0)
}

fn sweep_csv(sweep: &SweepResult) -> String {
    let mut csv = String::from(
        "member,level,sup_h1,nan_time,z_l10,z_linf_l6,z_linf,ztilde_l6,ztilde_bessel_linf,forcing_diff,forcing_bound,solution_diff\n",
    );
    for m in &sweep.members {
        for r in &m.records {
            let s = &r.stats;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                m.member,
                r.level,
                r.sup_h1,
                r.nan_time.map(|t| t.to_string()).unwrap_or_default(),
                s.l10,
                s.linf_l6,
                s.linf,
                s.tilde_l6,
                s.tilde_bessel,
                r.forcing_diff,
                r.forcing_bound,
                r.solution_diff
            );
        }
    }
    csv
}

fn level_axis(level: Level, grid: &GridSpec) -> f64 {
    match level {
        Level::Full => grid.band_limit(),
        other => other.value(),
    }
}

fn run_uniform_energy(config: &ExperimentConfig, hash: &str, out: &mut Outputs) -> Result<usize, RunError> {
    let s = section(&config.uniform_energy, "uniform_energy")?;
    let params = config.sweep_params(s)?;
    let ensemble = prepare(config)?;
    let (envelope, sweep) = uniform_energy(&ensemble, &params)?;
    out.write("uniform_energy.csv", &sweep_csv(&sweep))?;
    let rows: Vec<(f64, f64)> = envelope
        .rows
        .iter()
        .map(|r| (level_axis(r.level, &config.grid), r.median))
        .collect();
    out.write("envelope.dat", &dat("N median_sup_h1", &rows))?;
    out.summary("uniform-energy", hash, config.seed, &envelope)?;
    Ok(sweep.aborted_members())
}

fn run_convergence(config: &ExperimentConfig, hash: &str, out: &mut Outputs) -> Result<usize, RunError> {
    let s = section(&config.convergence, "convergence")?;
    let params = config.sweep_params(s)?;
    let ensemble = prepare(config)?;
    let (report, sweep): (ConvergenceReport, SweepResult) = truncation_convergence(&ensemble, &params)?;
    out.write("convergence.csv", &sweep_csv(&sweep))?;
    let ns: Vec<f64> = report.levels.iter().map(|&n| n as f64).collect();
    let pairs = |ys: &[f64]| ns.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>();
    out.write("convergence_forcing.dat", &dat("N median_forcing_diff", &pairs(&report.median_forcing_diff)))?;
    out.write("convergence_solution.dat", &dat("N median_solution_diff", &pairs(&report.median_solution_diff)))?;
    out.summary("convergence", hash, config.seed, &report)?;
    Ok(sweep.aborted_members())
}

fn run_exceptional(config: &ExperimentConfig, hash: &str, out: &mut Outputs) -> Result<usize, RunError> {
    let e = section(&config.exceptional_set, "exceptional_set")?;
    let params = ExceptionalParams {
        final_time: e.final_time,
        alpha: e.alpha,
        threshold: e.threshold,
        sweep_thresholds: e.sweep_thresholds.clone(),
        k: e.k,
        theta: e.theta,
        tau: e.tau,
        samples_per_unit: e.samples_per_unit,
        solver: if e.solve_good { Some(config.solver_config()?) } else { None },
    };
    let ensemble = prepare(config)?;
    let report = exceptional_set_probe(&ensemble, &params)?;
    let mut csv = String::from("member,bessel_norm,worst_interval_ratio,smallness_pass,solve\n");
    for r in &report.rows {
        let solve = serde_json::to_value(r.solve).expect("status serializes");
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.member,
            r.bessel_norm,
            r.worst_interval_ratio,
            r.smallness_pass,
            solve.as_str().unwrap_or_default()
        );
    }
    out.write("exceptional.csv", &csv)?;
    out.write("tradeoff.dat", &dat("threshold exceptional_fraction", &report.tradeoff))?;
    out.summary("exceptional-set", hash, config.seed, &report)?;
    Ok(report.solves_attempted - report.solves_completed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ValidateSummary {
    energy_drift: f64,
    split_max_relative_h1: f64,
    l2_growth_ratio: f64,
    steps: usize,
}

/// `‖u(t) - z(t) - v(t)‖_{H¹} / ‖u(t)‖_{H¹}` at every snapshot, where `u`
/// solves the equation from the data and `v` the forced equation from zero.
fn split_differences(u: &Trajectory, v: &Trajectory, forcing: &Forcing) -> Result<Vec<f64>, RunError> {
    let to_err = |e: crate::solver::SolverError| RunError::Experiment(e.into());
    let grid = u.grid;
    let mut out = Vec::with_capacity(u.len());
    for (&t, (us, vs)) in u.times.iter().zip(u.snapshots.iter().zip(&v.snapshots)) {
        let z = forcing.position_at(t).map_err(to_err)?.unwrap_or_else(|| vec![Default::default(); grid.len()]);
        let z = Field::from_spectral(grid, z).map_err(|e| RunError::Experiment(e.into()))?;
        let diff = us
            .position
            .minus(&vs.position)
            .and_then(|d| d.minus(&z))
            .map_err(|e| RunError::Experiment(e.into()))?;
        let num = sobolev_norm(&diff, 1.0, false).map_err(|e| RunError::Experiment(e.into()))?;
        let den = sobolev_norm(&us.position, 1.0, false).map_err(|e| RunError::Experiment(e.into()))?;
        out.push(num / den.max(f64::MIN_POSITIVE));
    }
    Ok(out)
}

fn run_validate(config: &ExperimentConfig, hash: &str, out: &mut Outputs) -> Result<usize, RunError> {
    let v = section(&config.solver_validate, "solver_validate")?;
    let solver = config.solver_config()?;
    let data = v.data.build(config.grid)?;
    let to_err = |e: crate::solver::SolverError| RunError::Experiment(e.into());
    let u = evolve_nlw(&data, v.final_time, &solver).map_err(to_err)?;
    let forcing = Forcing::linear(&data);
    let w = evolve_perturbed(&forcing, v.final_time, &solver, None).map_err(to_err)?;
    let trace = EnergyTrace::from_trajectory(&u);
    let split = split_differences(&u, &w, &forcing)?;
    let mut csv = String::from("time,kinetic,gradient,potential,total,split_relative_h1\n");
    for i in 0..trace.times.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            trace.times[i], trace.kinetic[i], trace.gradient[i], trace.potential[i], trace.total[i], split[i]
        );
    }
    out.write("energy_trace.csv", &csv)?;
    let summary = ValidateSummary {
        energy_drift: trace.relative_drift(),
        split_max_relative_h1: split.iter().copied().fold(0.0, f64::max),
        l2_growth_ratio: l2_growth_ratio(&w),
        steps: solver.steps_for(v.final_time).0,
    };
    out.summary("solver-validate", hash, config.seed, &summary)?;
    Ok(0)
}

/// Resolved plan for a configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub experiment: String,
    pub probes: String,
    pub config_hash: String,
    pub members: usize,
    pub grid_points: usize,
    pub padded_points: usize,
    pub perturbed_solves: usize,
    pub steps_per_solve: usize,
    pub free_evolution_samples_per_member: usize,
    pub estimated_ffts: f64,
}

impl Plan {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.experiment);
        let _ = writeln!(s, "probes: {}", self.probes);
        let _ = writeln!(s, "config hash: {}", self.config_hash);
        let _ = writeln!(s, "members: {}", self.members);
        let _ = writeln!(s, "grid points: {} (padded {})", self.grid_points, self.padded_points);
        let _ = writeln!(
            s,
            "perturbed solves: {} x {} steps",
            self.perturbed_solves, self.steps_per_solve
        );
        let _ = writeln!(
            s,
            "free-evolution samples per member: {}",
            self.free_evolution_samples_per_member
        );
        let _ = writeln!(
            s,
            "per-member cost: {} grid points x {} steps",
            self.grid_points,
            self.steps_per_solve * self.perturbed_solves.div_ceil(self.members.max(1)) + self.free_evolution_samples_per_member
        );
        let _ = writeln!(s, "estimated FFTs: {:.3e}", self.estimated_ffts);
        s
    }
}

/// Builds the plan without running anything.
pub fn describe(config: &ExperimentConfig) -> Result<Plan, RunError> {
    config.validate()?;
    let grid = &config.grid;
    let members = config.ensemble.as_ref().map(|e| e.members).unwrap_or(1);
    let per_unit = 8.0 * grid.band_limit();
    let samples = |t: f64, per: Option<f64>| ((t * per.unwrap_or(per_unit)).ceil() as usize).max(2) + 1;
    let (solves, steps, samples_per_member) = match config.experiment {
        ExperimentKind::Tail => {
            let t = section(&config.tail, "tail")?;
            let horizon = t.intervals[0][1].max(t.intervals[1][1]);
            (0, 0, samples(horizon, None))
        }
        ExperimentKind::SupTail => {
            let t = section(&config.sup_tail, "sup_tail")?;
            (0, 0, 2 * t.times.len() * ((1usize << t.depth) + 1))
        }
        ExperimentKind::UniformEnergy | ExperimentKind::Convergence => {
            let s = if config.experiment == ExperimentKind::UniformEnergy {
                section(&config.uniform_energy, "uniform_energy")?
            } else {
                section(&config.convergence, "convergence")?
            };
            let mut levels = s.levels.len();
            if config.experiment == ExperimentKind::Convergence && s.levels.last() != Some(&Level::Full) {
                levels += 1;
            }
            let steps = config.solver_config()?.steps_for(s.final_time).0;
            let solves = members * levels + if s.control { members } else { 0 };
            (solves, steps, 6 * levels * samples(s.final_time, s.samples_per_unit))
        }
        ExperimentKind::ExceptionalSet => {
            let e = section(&config.exceptional_set, "exceptional_set")?;
            let steps = if e.solve_good { config.solver_config()?.steps_for(e.final_time).0 } else { 0 };
            (if e.solve_good { members } else { 0 }, steps, 2 * samples(e.final_time, e.samples_per_unit))
        }
        ExperimentKind::SolverValidate => {
            let v = section(&config.solver_validate, "solver_validate")?;
            (2, config.solver_config()?.steps_for(v.final_time).0, 0)
        }
    };
    let padded = grid.padded_points().pow(grid.dim() as u32);
    let ratio = padded as f64 / grid.len() as f64;
    // Four nonlinear evaluations per step, two padded transforms each; two
    // free-evolution samples share one transform.
    let ffts = solves as f64 * steps as f64 * 8.0 * ratio + members as f64 * samples_per_member as f64 / 2.0;
    Ok(Plan {
        experiment: config.experiment.tag().to_string(),
        probes: config.experiment.probes().to_string(),
        config_hash: config.hash(),
        members,
        grid_points: grid.len(),
        padded_points: padded,
        perturbed_solves: solves,
        steps_per_solve: steps,
        free_evolution_samples_per_member: samples_per_member,
        estimated_ffts: ffts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TAIL: &str = r#"
experiment = "tail"
seed = 7
[grid]
dim = 3
points_per_axis = 16
box_length = 7.853981633974483
[ensemble]
distribution = "rademacher"
members = 200
base = { kind = "gaussian", amplitude = 1.0, width = 1.0 }
[tail]
intervals = [[0.0, 1.0], [0.0, 0.25]]
"#;

    #[test]
    fn hash_ignores_output_dir_and_threads() {
        let a = ExperimentConfig::from_toml(TAIL).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        b.threads = Some(7);
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed += 1;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn canonical_form_has_sorted_keys() {
        let c = ExperimentConfig::from_toml(TAIL).unwrap();
        let text = c.canonical();
        let e = text.find("\"ensemble\"").unwrap();
        let x = text.find("\"experiment\"").unwrap();
        let g = text.find("\"grid\"").unwrap();
        assert!(e < x && x < g, "{text}");
    }

    #[test]
    fn field_path_points_into_tables() {
        let text = "a = 1\n[grid]\ndim = 3\nbad = 2\n";
        assert_eq!(field_path_at(text, 0).as_deref(), Some("a"));
        assert_eq!(field_path_at(text, text.find("bad").unwrap()).as_deref(), Some("grid.bad"));
    }

    #[test]
    fn missing_section_is_reported() {
        let c = ExperimentConfig::from_toml(&TAIL.replace("experiment = \"tail\"", "experiment = \"sup-tail\"")).unwrap();
        match c.validate() {
            Err(RunError::ConfigInvalid { field, .. }) => assert_eq!(field.as_deref(), Some("sup_tail")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_records_are_json() {
        let e = RunError::config("grid.dim", "bad");
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "config-invalid");
        assert_eq!(v["field"], "grid.dim");
        assert_eq!(e.exit_code(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn config_round_trips_through_toml(
            seed in 0..=i64::MAX as u64,
            members in 1usize..10_000,
            length in 0.1f64..100.0,
            ratio in 1.0f64..4.0,
            amplitude in -10.0f64..10.0,
            a in 0.0f64..5.0,
            span in 0.01f64..5.0,
            threads in proptest::option::of(1usize..64),
        ) {
            let mut c = ExperimentConfig::from_toml(TAIL).unwrap();
            c.seed = seed;
            c.threads = threads;
            c.grid = crate::grid::make_grid(3, 16, length, ratio).unwrap();
            let e = c.ensemble.as_mut().unwrap();
            e.members = members;
            e.base = BaseData::Gaussian { amplitude, width: 1.0, velocity_amplitude: 0.5 };
            c.tail.as_mut().unwrap().intervals = [[a, a + span], [a, a + span / 4.0]];
            let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.hash(), c.hash());
        }
    }
}
