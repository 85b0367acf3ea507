use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use wheelleg::estimator::{ContactModel, EstimatorConfig, InitialBody, SensorFrame, TrustMode};
use wheelleg::gait::GaitKind;
use wheelleg::sim::{self, EstimatorRun, MetricsReport, Scenario, TruthRecord};
use wheelleg::trust::phase_trust;

use crate::config::{self, Bounds, Checks, ConfigError, Contrast, RunSetup};
use crate::io;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

pub const SUMMARY_SCHEMA: &str = "wheelleg-summary-v1";

#[derive(Debug, Parser)]
#[command(name = "wheelleg", version, about = "Run the wheel-aware estimator on synthetic or replayed scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one estimator over a scenario and write logs plus a summary.
    Run(RunArgs),
    /// Run two estimator variants on the same stream and compare them.
    Compare(CompareArgs),
    /// Re-run a scenario for each value of one config key.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrustArg {
    Full,
    PhaseOnly,
    Off,
}

impl From<TrustArg> for TrustMode {
    fn from(t: TrustArg) -> Self {
        match t {
            TrustArg::Full => TrustMode::Full,
            TrustArg::PhaseOnly => TrustMode::PhaseOnly,
            TrustArg::Off => TrustMode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    WheelAware,
    Baseline,
}

impl From<ModeArg> for ContactModel {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::WheelAware => ContactModel::WheelAware,
            ModeArg::Baseline => ContactModel::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContrastArg {
    Mode,
    Trust,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file.
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write every n-th estimate row.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub decimate: u64,
    /// Read truth.csv and sensors.csv from this directory instead of generating.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Override the trust mode.
    #[arg(long, value_enum)]
    pub trust: Option<TrustArg>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Enforce the scenario's [check] bounds.
    #[arg(long)]
    pub check: bool,
    /// Override the contact model.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Enforce the scenario's [check.primary], [check.reference] and [check.ratio] bounds.
    #[arg(long)]
    pub check: bool,
    /// What the reference run switches off.
    #[arg(long, value_enum)]
    pub contrast: Option<ContrastArg>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dotted config key, e.g. `trust.window`.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

pub fn execute(cli: &Cli) -> u8 {
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

/// Truth and sensor streams for one scenario.
#[derive(Debug, Clone)]
pub struct Stream {
    pub truth: Vec<TruthRecord>,
    pub sensors: Vec<SensorFrame>,
    pub initial: InitialBody,
}

pub fn load_stream(s: &Scenario, replay: Option<&Path>) -> Result<Stream, Failure> {
    match replay {
        None => {
            let out = sim::generate(s).map_err(|e| match e {
                sim::SimError::InvalidScenario(m) => Failure::Config(m),
                other => runtime(other),
            })?;
            Ok(Stream { truth: out.truth, sensors: out.sensors, initial: out.initial })
        }
        Some(dir) => {
            let open = |name: &str| {
                let p = dir.join(name);
                File::open(&p).map_err(|e| Failure::Config(format!("cannot open {}: {e}", p.display())))
            };
            let truth = io::read_truth(open("truth.csv")?).map_err(|e| Failure::Config(format!("truth.csv: {e}")))?;
            let sensors =
                io::read_sensors(open("sensors.csv")?).map_err(|e| Failure::Config(format!("sensors.csv: {e}")))?;
            let first = truth.first().ok_or_else(|| Failure::Config("truth.csv is empty".into()))?;
            if truth.len() != sensors.len() {
                return Err(Failure::Config(format!(
                    "replay has {} truth rows but {} sensor rows",
                    truth.len(),
                    sensors.len()
                )));
            }
            let initial =
                InitialBody { position: first.position, velocity: first.velocity, drive_velocity: first.drive_velocity };
            Ok(Stream { truth, sensors, initial })
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub run: EstimatorRun,
    pub metrics: MetricsReport,
}

impl Evaluation {
    /// Metrics plus filter health, keyed as in `[check]` tables.
    pub fn values(&self) -> BTreeMap<String, f64> {
        let mut m: BTreeMap<String, f64> = self.metrics.to_pairs().into_iter().collect();
        let h = &self.run.health;
        m.insert("filter_steps".into(), h.steps as f64);
        m.insert("psd_violations".into(), h.psd_violations as f64);
        m.insert("max_asymmetry".into(), h.max_asymmetry);
        m.insert("min_eigenvalue".into(), h.min_eigenvalue);
        m.insert("max_gait_identity_error".into(), h.max_gait_identity_error);
        m
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let h = &self.run.health;
        let mut out: Vec<(String, String)> =
            self.metrics.to_pairs().into_iter().map(|(k, v)| (k, v.to_string())).collect();
        out.push(("filter_steps".into(), h.steps.to_string()));
        out.push(("psd_violations".into(), h.psd_violations.to_string()));
        out.push(("max_asymmetry".into(), h.max_asymmetry.to_string()));
        out.push(("min_eigenvalue".into(), h.min_eigenvalue.to_string()));
        out.push(("max_gait_identity_error".into(), h.max_gait_identity_error.to_string()));
        out
    }
}

pub fn evaluate(s: &Scenario, cfg: EstimatorConfig, stream: &Stream) -> Result<Evaluation, Failure> {
    let run = sim::run_estimator(cfg, &s.robot, &s.gait, &stream.sensors, &stream.initial).map_err(runtime)?;
    let metrics = sim::metrics(&stream.truth, &run.estimates, s.metrics_skip).map_err(runtime)?;
    Ok(Evaluation { run, metrics })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub upper: bool,
    pub pass: bool,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        let op = if self.upper { "<" } else { ">" };
        write!(f, "[{tag}] {} = {} ({op} {})", self.name, compact(self.value), compact(self.bound))
    }
}

fn compact(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-3..1e6).contains(&v.abs()) {
        format!("{v:.4e}")
    } else {
        format!("{}", (v * 1e6).round() / 1e6)
    }
}

pub fn check_bounds(prefix: &str, values: &BTreeMap<String, f64>, bounds: &Bounds) -> Vec<CheckLine> {
    let mut out = Vec::new();
    let name = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    for (k, bound) in &bounds.max {
        let value = values.get(k).copied().unwrap_or(f64::NAN);
        out.push(CheckLine { name: name(k), value, bound: *bound, upper: true, pass: value < *bound });
    }
    for (k, bound) in &bounds.min {
        let value = values.get(k).copied().unwrap_or(f64::NAN);
        out.push(CheckLine { name: name(k), value, bound: *bound, upper: false, pass: value > *bound });
    }
    out
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> Result<(), io::IoError>) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    f(BufWriter::new(file)).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_summary(path: &Path, pairs: &[(String, String)]) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    io::write_summary(&mut w, pairs).and_then(|_| w.flush()).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn trust_name(mode: TrustMode) -> &'static str {
    match mode {
        TrustMode::Full => "full",
        TrustMode::PhaseOnly => "phase-only",
        TrustMode::Off => "off",
    }
}

fn gait_name(kind: GaitKind) -> &'static str {
    match kind {
        GaitKind::Trot => "trot",
        GaitKind::Walk => "walk",
        GaitKind::Pronk => "pronk",
        GaitKind::Bound => "bound",
        GaitKind::Stand => "stand",
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn load_setup(common: &CommonArgs) -> Result<RunSetup, Failure> {
    let mut setup = config::load_scenario(&common.config)?;
    if let Some(seed) = common.seed {
        setup.scenario.seed = seed;
    }
    if let Some(t) = common.trust {
        setup.scenario.estimator.trust_mode = t.into();
    }
    Ok(setup)
}

fn report_checks(lines: &[CheckLine]) -> bool {
    for l in lines {
        println!("{l}");
    }
    lines.iter().all(|l| l.pass)
}

fn write_streams(out: &Path, stream: &Stream) -> Result<(), Failure> {
    write_file(&out.join("truth.csv"), |w| io::write_truth(w, &stream.truth))?;
    write_file(&out.join("sensors.csv"), |w| io::write_sensors(w, &stream.sensors))
}

pub fn cmd_run(a: &RunArgs) -> Result<u8, Failure> {
    let mut setup = load_setup(&a.common)?;
    if let Some(m) = a.mode {
        setup.scenario.estimator.model = m.into();
    }
    let s = &setup.scenario;
    let started = Instant::now();
    let stream = load_stream(s, a.common.replay.as_deref())?;
    let ev = evaluate(s, s.estimator, &stream)?;
    let elapsed = started.elapsed();

    create_out(&a.common.out)?;
    write_streams(&a.common.out, &stream)?;
    write_file(&a.common.out.join("estimate.csv"), |w| {
        io::write_estimates(w, &stream.truth, &ev.run.estimates, a.common.decimate as usize)
    })?;

    let mut pairs = vec![
        kv("schema", SUMMARY_SCHEMA),
        kv("scenario", &s.name),
        kv("seed", s.seed),
        kv("gait", gait_name(s.gait.kind)),
        kv("model", s.estimator.model.name()),
        kv("trust", trust_name(s.estimator.trust_mode)),
        kv("steps", stream.sensors.len()),
    ];
    pairs.extend(ev.pairs());
    let lines = if a.check { check_bounds("", &ev.values(), &setup.checks.run_bounds()) } else { Vec::new() };
    for l in &lines {
        pairs.push((format!("check.{}", l.name), if l.pass { "pass" } else { "fail" }.to_string()));
    }
    write_summary(&a.common.out.join("summary.txt"), &pairs)?;

    println!(
        "{}: {} steps in {:.3} s, position_rmse={} velocity_rmse={} height_max_abs={}",
        s.name,
        stream.sensors.len(),
        elapsed.as_secs_f64(),
        ev.metrics.position_rmse,
        ev.metrics.velocity_rmse,
        ev.metrics.height_max_abs
    );
    if a.check {
        if setup.checks.run_bounds().is_empty() {
            println!("no [check] bounds in {}", a.common.config.display());
        }
        if !report_checks(&lines) {
            return Ok(EXIT_CHECK);
        }
    }
    Ok(EXIT_OK)
}

/// Primary and reference estimator settings for a comparison.
pub fn contrast_configs(base: EstimatorConfig, contrast: Contrast) -> (EstimatorConfig, EstimatorConfig) {
    match contrast {
        Contrast::Mode => (
            EstimatorConfig { model: ContactModel::WheelAware, ..base },
            EstimatorConfig { model: ContactModel::Baseline, ..base },
        ),
        Contrast::Trust => {
            let primary_mode = if base.trust_mode == TrustMode::Off { TrustMode::Full } else { base.trust_mode };
            (EstimatorConfig { trust_mode: primary_mode, ..base }, EstimatorConfig { trust_mode: TrustMode::Off, ..base })
        }
    }
}

fn describe(cfg: &EstimatorConfig) -> String {
    format!("{}/{}", cfg.model.name(), trust_name(cfg.trust_mode))
}

/// Ratio reference / primary for every shared key.
pub fn ratios(primary: &BTreeMap<String, f64>, reference: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    primary
        .iter()
        .filter_map(|(k, p)| reference.get(k).map(|r| (k.clone(), r / p)))
        .collect()
}

pub fn compare_checks(checks: &Checks, primary: &Evaluation, reference: &Evaluation) -> Vec<CheckLine> {
    let p = primary.values();
    let r = reference.values();
    let mut lines = check_bounds("primary", &p, &checks.primary);
    lines.extend(check_bounds("reference", &r, &checks.reference));
    lines.extend(check_bounds("ratio", &ratios(&p, &r), &checks.ratio));
    lines
}

pub fn cmd_compare(a: &CompareArgs) -> Result<u8, Failure> {
    let setup = load_setup(&a.common)?;
    let s = &setup.scenario;
    let contrast = match a.contrast {
        Some(ContrastArg::Mode) => Contrast::Mode,
        Some(ContrastArg::Trust) => Contrast::Trust,
        None => setup.contrast,
    };
    let (pcfg, rcfg) = contrast_configs(s.estimator, contrast);
    let started = Instant::now();
    let stream = load_stream(s, a.common.replay.as_deref())?;
    let (primary, reference) = rayon::join(|| evaluate(s, pcfg, &stream), || evaluate(s, rcfg, &stream));
    let (primary, reference) = (primary?, reference?);
    let elapsed = started.elapsed();

    let out = &a.common.out;
    create_out(out)?;
    write_streams(out, &stream)?;
    let dec = a.common.decimate as usize;
    write_file(&out.join("estimate_primary.csv"), |w| {
        io::write_estimates(w, &stream.truth, &primary.run.estimates, dec)
    })?;
    write_file(&out.join("estimate_reference.csv"), |w| {
        io::write_estimates(w, &stream.truth, &reference.run.estimates, dec)
    })?;

    let pv = primary.values();
    let rv = reference.values();
    let rat = ratios(&pv, &rv);
    let mut pairs = vec![
        kv("schema", SUMMARY_SCHEMA),
        kv("scenario", &s.name),
        kv("seed", s.seed),
        kv("contrast", contrast.name()),
        kv("primary", describe(&pcfg)),
        kv("reference", describe(&rcfg)),
        kv("steps", stream.sensors.len()),
    ];
    for (prefix, ev) in [("primary", &primary), ("reference", &reference)] {
        pairs.extend(ev.pairs().into_iter().map(|(k, v)| (format!("{prefix}.{k}"), v)));
    }
    pairs.extend(rat.iter().map(|(k, v)| (format!("ratio.{k}"), v.to_string())));
    let lines = if a.check { compare_checks(&setup.checks, &primary, &reference) } else { Vec::new() };
    for l in &lines {
        pairs.push((format!("check.{}", l.name), if l.pass { "pass" } else { "fail" }.to_string()));
    }
    write_summary(&out.join("summary.txt"), &pairs)?;

    println!("{}: {} steps, both runs in {:.3} s", s.name, stream.sensors.len(), elapsed.as_secs_f64());
    println!("{:<24} {:>14} {:>14} {:>12}", "metric", describe(&pcfg), describe(&rcfg), "ratio");
    for key in ["position_rmse", "velocity_rmse", "velocity_rmse_x", "height_max_abs", "drive_velocity_rmse"] {
        println!("{:<24} {:>14.6e} {:>14.6e} {:>12.4}", key, pv[key], rv[key], rat[key]);
    }
    if a.check {
        let empty = setup.checks.primary.is_empty() && setup.checks.reference.is_empty() && setup.checks.ratio.is_empty();
        if empty {
            println!("no comparison bounds in {}", a.common.config.display());
        }
        if !report_checks(&lines) {
            return Ok(EXIT_CHECK);
        }
    }
    Ok(EXIT_OK)
}

pub fn split_values(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|v| !v.is_empty()).map(str::to_string).collect()
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<u8, Failure> {
    let values = split_values(&a.values);
    if values.is_empty() {
        return Err(Failure::Config("sweep needs at least one value".into()));
    }
    let (table, stem) = config::load_table(&a.common.config)?;
    let mut setups = Vec::with_capacity(values.len());
    for v in &values {
        let mut t = table.clone();
        config::set_dotted(&mut t, &a.param, config::parse_value(v))?;
        let mut setup = config::from_table(t, &stem)
            .map_err(|e| Failure::Config(format!("{} = {v}: {e}", a.param)))?;
        if let (Some(seed), false) = (a.common.seed, a.param == "seed") {
            setup.scenario.seed = seed;
        }
        if let (Some(tm), false) = (a.common.trust, a.param == "trust.mode") {
            setup.scenario.estimator.trust_mode = tm.into();
        }
        setups.push(setup);
    }

    let out = &a.common.out;
    create_out(out)?;
    let dec = a.common.decimate as usize;
    let replay = a.common.replay.as_deref();
    let results: Vec<Result<Evaluation, Failure>> = setups
        .par_iter()
        .enumerate()
        .map(|(i, setup)| {
            let s = &setup.scenario;
            let stream = load_stream(s, replay)?;
            let ev = evaluate(s, s.estimator, &stream)?;
            let dir = out.join(format!("{i:03}"));
            create_out(&dir)?;
            write_file(&dir.join("estimate.csv"), |w| io::write_estimates(w, &stream.truth, &ev.run.estimates, dec))?;
            let mut pairs = vec![
                kv("schema", SUMMARY_SCHEMA),
                kv("scenario", &s.name),
                kv("param", &a.param),
                kv("value", &values[i]),
            ];
            pairs.extend(ev.pairs());
            write_summary(&dir.join("summary.txt"), &pairs)?;
            Ok(ev)
        })
        .collect();

    let metric_keys = config::metric_names();
    let mut header: Vec<String> = [
        "index", "param", "value", "name", "duration", "dt", "seed", "gait", "period", "duty", "model", "trust_mode",
        "window", "k_plus", "k_minus", "kappa", "mid_stance_trust",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(metric_keys.iter().cloned());
    let sweep_path = out.join("sweep.csv");
    let file = File::create(&sweep_path).map_err(|e| runtime(format!("{}: {e}", sweep_path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| runtime(format!("{}: {e}", sweep_path.display()));
    w.write_record(&header).map_err(csv_err)?;
    let mut failure = None;
    for (i, (setup, res)) in setups.iter().zip(results).enumerate() {
        let ev = match res {
            Ok(ev) => ev,
            Err(f) => {
                eprintln!("error: {} = {}: {f}", a.param, values[i]);
                failure.get_or_insert(f);
                continue;
            }
        };
        let s = &setup.scenario;
        let e = &s.estimator;
        let mut row = vec![
            i.to_string(),
            a.param.clone(),
            values[i].clone(),
            s.name.clone(),
            s.duration.to_string(),
            s.dt.to_string(),
            s.seed.to_string(),
            gait_name(s.gait.kind).to_string(),
            s.gait.period.to_string(),
            s.gait.duty.to_string(),
            e.model.name().to_string(),
            trust_name(e.trust_mode).to_string(),
            e.trust.window.to_string(),
            e.trust.k_plus.to_string(),
            e.trust.k_minus.to_string(),
            e.trust.kappa.to_string(),
            phase_trust(0.5, true, e.trust.window).to_string(),
        ];
        let vals = ev.values();
        row.extend(metric_keys.iter().map(|k| vals[k].to_string()));
        w.write_record(&row).map_err(csv_err)?;
        println!("[{i:03}] {} = {}: position_rmse={} velocity_rmse={}", a.param, values[i], ev.metrics.position_rmse, ev.metrics.velocity_rmse);
    }
    w.flush().map_err(|e| runtime(format!("{}: {e}", sweep_path.display())))?;
    match failure {
        Some(f) => Err(f),
        None => Ok(EXIT_OK),
    }
}
