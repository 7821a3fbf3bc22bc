//! Run configuration documents (TOML) and the commands of the binary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closed_form::{
    ex43_p1, ex43_p1_via_exponential, ex43_value, nontrivial_certificate, p2_closed_ex43,
    p2_closed_general, Example43Params, P2Closed, Scalar1DParams,
};
use crate::dot::{Classification, SwitchTimeProblem};
use crate::error::Error;
use crate::model::{validate_spec, CoeffTable, ProblemSpec, TimeGrid};
use crate::report::fmt_f64;
use crate::riccati::{RiccatiOptions, DEFAULT_STEPS, PD_THRESHOLD};
use crate::simulate::{
    path_traces, simulate_closed_loop, snap_switch_time, write_traces_csv, OptimalFeedback,
    SimConfig, DEFAULT_PATHS, DEFAULT_TRACE_PATHS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Initial stage-1 state.
    pub x1: Vec<f64>,
    /// Switch time for `riccati` (stage 1) and `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_time: Option<f64>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    General(GeneralProblem),
    /// Scalar system with the stage-1 state frozen after the switch.
    Scalar(Scalar1DParams),
    Example43(Example43Params),
}

/// Matrices are arrays of rows. A coefficient is either one matrix or
/// `{ samples = [...] }`, values on a uniform grid of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralProblem {
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub horizon: f64,
    pub delta: f64,
    #[serde(rename = "A1")]
    pub a1: Coeff,
    #[serde(rename = "B1")]
    pub b1: Coeff,
    #[serde(rename = "C1")]
    pub c1: Coeff,
    #[serde(rename = "D1")]
    pub d1: Coeff,
    #[serde(rename = "Q1")]
    pub q1: Coeff,
    #[serde(rename = "R1")]
    pub r1: Coeff,
    #[serde(rename = "G1")]
    pub g1: Coeff,
    #[serde(rename = "A")]
    pub a: Coeff,
    #[serde(rename = "B")]
    pub b: Coeff,
    #[serde(rename = "C")]
    pub c: Coeff,
    #[serde(rename = "D")]
    pub d: Coeff,
    #[serde(rename = "Q")]
    pub q: Coeff,
    #[serde(rename = "R")]
    pub r: Coeff,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Coeff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coeff {
    Constant(Vec<Vec<f64>>),
    Sampled { samples: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub n_steps: usize,
    pub coarse_points: usize,
    /// Filled with `1e-6 T` when absent.
    pub tol_r: Option<f64>,
    pub pd_threshold: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            n_steps: DEFAULT_STEPS,
            coarse_points: crate::dot::DEFAULT_COARSE_POINTS,
            tol_r: None,
            pd_threshold: PD_THRESHOLD,
        }
    }
}

impl Numerics {
    pub fn riccati(&self) -> RiccatiOptions {
        RiccatiOptions {
            n_steps: self.n_steps,
            pd_threshold: self.pd_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Paths written to `traces.csv` and used for the adjoint residuals.
    pub trace_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_paths: DEFAULT_PATHS,
            n_steps: DEFAULT_STEPS,
            seed: 0,
            antithetic: false,
            trace_paths: DEFAULT_TRACE_PATHS,
            workers: None,
        }
    }
}

impl SimulationConfig {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_paths: self.n_paths,
            n_steps: self.n_steps,
            seed: self.seed,
            antithetic: self.antithetic,
            workers: self.workers,
            trace_paths: self.trace_paths,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{key}: {message}")]
    Shape { key: String, message: String },
    #[error(transparent)]
    Model(#[from] Error),
}

fn shape_error(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Shape {
        key: key.to_string(),
        message: message.into(),
    }
}

fn matrix(key: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<DMatrix<f64>, ConfigError> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(shape_error(key, format!("row {} has {} entries, row 1 has {cols}", bad + 1, rows[bad].len())));
    }
    if (rows.len(), cols) != shape {
        return Err(shape_error(
            key,
            format!("expected {}x{}, got {}x{}", shape.0, shape.1, rows.len(), cols),
        ));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

impl GeneralProblem {
    pub fn to_spec(&self) -> Result<ProblemSpec, ConfigError> {
        let (n1, n, m) = (self.n1, self.n1 + self.n2, self.m);
        let entries: [(&str, &Coeff, (usize, usize)); 14] = [
            ("A1", &self.a1, (n1, n1)),
            ("B1", &self.b1, (n1, m)),
            ("C1", &self.c1, (n1, n1)),
            ("D1", &self.d1, (n1, m)),
            ("Q1", &self.q1, (n1, n1)),
            ("R1", &self.r1, (m, m)),
            ("G1", &self.g1, (n1, n1)),
            ("A", &self.a, (n, n)),
            ("B", &self.b, (n, m)),
            ("C", &self.c, (n, n)),
            ("D", &self.d, (n, m)),
            ("Q", &self.q, (n, n)),
            ("R", &self.r, (m, m)),
            ("K", &self.k, (n, n1)),
        ];
        let mut sample_count: Option<(usize, &str)> = None;
        let mut tables = Vec::with_capacity(entries.len());
        for (key, coeff, shape) in entries {
            let table = match coeff {
                Coeff::Constant(rows) => CoeffTable::constant(matrix(key, rows, shape)?),
                Coeff::Sampled { samples } => {
                    match sample_count {
                        Some((count, first)) if count != samples.len() => {
                            return Err(shape_error(
                                key,
                                format!("{} samples, {first} has {count}", samples.len()),
                            ));
                        }
                        _ => sample_count = Some((samples.len(), key)),
                    }
                    if samples.len() < 3 {
                        return Err(shape_error(key, "need at least 3 samples"));
                    }
                    let mats = samples
                        .iter()
                        .map(|s| matrix(key, s, shape))
                        .collect::<Result<Vec<_>, _>>()?;
                    CoeffTable::sampled(mats)?
                }
            };
            tables.push(table);
        }
        let g = matrix("G", &self.g, (n, n))?;
        let steps = sample_count.map_or(DEFAULT_STEPS, |(c, _)| c - 1);
        let horizon = TimeGrid::horizon(self.horizon, steps)?;
        let mut it = tables.into_iter();
        let mut next = || it.next().expect("fourteen tables");
        Ok(ProblemSpec {
            n1: self.n1,
            n2: self.n2,
            m: self.m,
            horizon,
            a1: next(),
            b1: next(),
            c1: next(),
            d1: next(),
            q1: next(),
            r1: next(),
            g1: next(),
            a: next(),
            b: next(),
            c: next(),
            d: next(),
            q: next(),
            r: next(),
            g,
            k: next(),
            delta: self.delta,
        })
    }
}

impl ProblemConfig {
    pub fn horizon(&self) -> f64 {
        match self {
            ProblemConfig::General(g) => g.horizon,
            ProblemConfig::Scalar(p) => p.horizon,
            ProblemConfig::Example43(p) => p.horizon,
        }
    }

    pub fn to_spec(&self) -> Result<ProblemSpec, ConfigError> {
        match self {
            ProblemConfig::General(g) => g.to_spec(),
            ProblemConfig::Scalar(p) => Ok(p.to_spec()?),
            ProblemConfig::Example43(p) => Ok(p.to_spec()?),
        }
    }
}

impl RunConfig {
    pub fn example43() -> Self {
        RunConfig::with_problem(
            ProblemConfig::Example43(Example43Params {
                a: 0.0,
                g: 1.0,
                g1: 1.0,
                horizon: 1.0,
            }),
            vec![1.0, 0.0],
        )
    }

    pub fn certificate_scenario() -> Self {
        RunConfig::with_problem(
            ProblemConfig::Scalar(Scalar1DParams::certificate_scenario()),
            vec![1.0],
        )
    }

    fn with_problem(problem: ProblemConfig, x1: Vec<f64>) -> Self {
        let mut cfg = RunConfig {
            x1,
            switch_time: None,
            problem,
            numerics: Numerics::default(),
            simulation: SimulationConfig::default(),
            output: OutputConfig::default(),
        };
        cfg.fill_defaults();
        cfg
    }

    fn fill_defaults(&mut self) {
        if self.numerics.tol_r.is_none() {
            self.numerics.tol_r = Some(1e-6 * self.problem.horizon());
        }
    }

    pub fn spec(&self) -> Result<ProblemSpec, ConfigError> {
        self.problem.to_spec()
    }

    pub fn tol_r(&self) -> f64 {
        self.numerics
            .tol_r
            .unwrap_or(1e-6 * self.problem.horizon())
    }
}

/// Parse and default a configuration; matrix shapes are checked here,
/// definiteness is left to [`validate_spec`].
pub fn parse_config(document: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = toml::from_str(document)?;
    cfg.fill_defaults();
    cfg.spec()?;
    Ok(cfg)
}

pub fn emit_config(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("configuration is always representable")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Riccati,
    ValueCurve,
    OptimalTime,
    Simulate,
    VerifyExample43,
    Verify1d,
    CheckNontrivial,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Solver {
        context: &'static str,
        #[source]
        source: Error,
    },
    #[error("invalid problem:\n{0}")]
    Invalid(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

trait Context<T> {
    fn ctx(self, context: &'static str) -> Result<T, RunError>;
}

impl<T> Context<T> for Result<T, Error> {
    fn ctx(self, context: &'static str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Solver { context, source })
    }
}

/// Files written by a command and whether its checks passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub passed: bool,
    pub summary: String,
}

fn write_file<F>(dir: &Path, name: &str, f: F) -> Result<PathBuf, RunError>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let path = dir.join(name);
    let io_err = |source| RunError::Io {
        path: path.clone(),
        source,
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut out = BufWriter::new(File::create(&path).map_err(io_err)?);
    f(&mut out).and_then(|_| out.flush()).map_err(io_err)?;
    Ok(path)
}

fn validated_spec(cfg: &RunConfig) -> Result<ProblemSpec, RunError> {
    let spec = cfg.spec()?;
    let report = validate_spec(&spec);
    if !report.ok {
        let mut text = String::new();
        for v in &report.violations {
            let at = v.node.map(|k| format!(" at node {k}")).unwrap_or_default();
            let _ = writeln!(text, "  {}{at}: {}", v.field, v.description);
        }
        return Err(RunError::Invalid(text));
    }
    Ok(spec)
}

pub fn run(cfg: &RunConfig, command: Command) -> Result<Outcome, RunError> {
    let dir = cfg.output.dir.as_path();
    let spec = validated_spec(cfg)?;
    let opts = cfg.numerics.riccati();
    match command {
        Command::Riccati => {
            let problem = SwitchTimeProblem::new(&spec, opts).ctx("stage-2 Riccati solve")?;
            let mut files = vec![write_file(dir, "p_stage2.csv", |o| problem.stage2().write_csv(o))?];
            let mut summary = format!("P(0) = {}", fmt_matrix(&problem.stage2().p()[0]));
            if let Some(r) = cfg.switch_time {
                let stage1 = problem.stage1(r).ctx("stage-1 Riccati solve")?;
                files.push(write_file(dir, "p_stage1.csv", |o| stage1.write_csv(o))?);
                let _ = write!(summary, "\nP1(0) = {}", fmt_matrix(stage1.p_initial()));
            }
            Ok(Outcome {
                files,
                passed: true,
                summary,
            })
        }
        Command::ValueCurve => {
            let problem = SwitchTimeProblem::new(&spec, opts).ctx("stage-2 Riccati solve")?;
            let t = spec.horizon_end();
            let last = cfg.numerics.coarse_points.max(2) - 1;
            let rs: Vec<f64> = (0..=last)
                .map(|i| if i == last { t } else { t * i as f64 / last as f64 })
                .collect();
            let curve = problem.value_curve(&cfg.x1, &rs).ctx("value curve")?;
            let file = write_file(dir, "value_curve.csv", |o| curve.write_csv(o))?;
            let i = curve.argmin();
            Ok(Outcome {
                files: vec![file],
                passed: true,
                summary: format!(
                    "{} switch times, smallest phi = {} at r = {}",
                    rs.len(),
                    curve.phi[i],
                    curve.r_nodes[i]
                ),
            })
        }
        Command::OptimalTime => {
            let problem = SwitchTimeProblem::new(&spec, opts).ctx("stage-2 Riccati solve")?;
            let res = problem
                .find_optimal_time(&cfg.x1, cfg.numerics.coarse_points, cfg.tol_r())
                .ctx("switch-time search")?;
            let doc = res.to_kv();
            let file = write_file(dir, "optimal_time.txt", |o| o.write_all(doc.render().as_bytes()))?;
            Ok(Outcome {
                files: vec![file],
                passed: true,
                summary: doc.render(),
            })
        }
        Command::Simulate => run_simulate(cfg, &spec, &opts, dir),
        Command::VerifyExample43 => {
            let ProblemConfig::Example43(params) = cfg.problem else {
                return Err(ConfigError::Shape {
                    key: "problem.kind".into(),
                    message: "verify-example43 needs kind = \"example43\"".into(),
                }
                .into());
            };
            let x1 = [cfg.x1.first().copied().unwrap_or(1.0), cfg.x1.get(1).copied().unwrap_or(0.0)];
            let report = verify_example43(&params, x1, &cfg.numerics).ctx("example verification")?;
            verification_outcome(dir, "verify_report.txt", report)
        }
        Command::Verify1d => {
            let ProblemConfig::Scalar(params) = cfg.problem else {
                return Err(ConfigError::Shape {
                    key: "problem.kind".into(),
                    message: "verify-1d needs kind = \"scalar\"".into(),
                }
                .into());
            };
            let report = verify_1d(&params, &cfg.numerics).ctx("scalar verification")?;
            verification_outcome(dir, "verify_report.txt", report)
        }
        Command::CheckNontrivial => {
            let ProblemConfig::Scalar(params) = cfg.problem else {
                return Err(ConfigError::Shape {
                    key: "problem.kind".into(),
                    message: "check-nontrivial needs kind = \"scalar\"".into(),
                }
                .into());
            };
            let cert = nontrivial_certificate(&params).ctx("certificate")?;
            let problem = SwitchTimeProblem::new(&spec, opts).ctx("stage-2 Riccati solve")?;
            let res = problem
                .find_optimal_time(&[1.0], cfg.numerics.coarse_points, cfg.tol_r())
                .ctx("switch-time search")?;
            // a certified interior optimum must be found by the search
            let consistent = !cert.nontrivial || res.classification == Classification::Interior;
            let mut doc = cert.to_kv();
            doc.real("r_bar", res.r_bar)
                .text("classification", res.classification.as_str())
                .text("consistent", consistent);
            let file = write_file(dir, "certificate.txt", |o| o.write_all(doc.render().as_bytes()))?;
            Ok(Outcome {
                files: vec![file],
                passed: consistent,
                summary: doc.render(),
            })
        }
    }
}

fn run_simulate(
    cfg: &RunConfig,
    spec: &ProblemSpec,
    opts: &RiccatiOptions,
    dir: &Path,
) -> Result<Outcome, RunError> {
    let sim = cfg.simulation.sim_config();
    let problem = SwitchTimeProblem::new(spec, *opts).ctx("stage-2 Riccati solve")?;
    let r = match cfg.switch_time {
        Some(r) => r,
        None => {
            problem
                .find_optimal_time(&cfg.x1, cfg.numerics.coarse_points, cfg.tol_r())
                .ctx("switch-time search")?
                .r_bar
        }
    };
    let r_used = snap_switch_time(spec, r, sim.n_steps).ctx("simulation grid")?;
    let stage1 = problem.stage1(r_used).ctx("stage-1 Riccati solve")?;
    let mut report = simulate_closed_loop(spec, r_used, problem.stage2(), &stage1, &cfg.x1, &sim)
        .ctx("simulation")?;
    report.r_requested = r;
    let doc = report.to_kv();
    let mut files = vec![write_file(dir, "sim_report.txt", |o| o.write_all(doc.render().as_bytes()))?];
    if sim.trace_paths > 0 {
        let law = OptimalFeedback::new(problem.stage2(), &stage1, sim.n_steps).ctx("feedback")?;
        let traces = path_traces(spec, r_used, &law, &cfg.x1, &sim, sim.trace_paths).ctx("traces")?;
        files.push(write_file(dir, "traces.csv", |o| {
            write_traces_csv(&traces, spec.n(), spec.m, o)
        })?);
    }
    Ok(Outcome {
        files,
        passed: true,
        summary: doc.render(),
    })
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.10}")).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn verification_outcome(dir: &Path, name: &str, report: VerifyReport) -> Result<Outcome, RunError> {
    let text = report.render();
    let file = write_file(dir, name, |o| o.write_all(text.as_bytes()))?;
    Ok(Outcome {
        files: vec![file],
        passed: report.passed(),
        summary: text,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            error,
            tolerance,
        }
    }

    /// NaN errors fail.
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:<24}  {:<24}  status\n", "check", "error", "tolerance");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<width$}  {:<24}  {:<24}  {}",
                c.name,
                fmt_f64(c.error),
                fmt_f64(c.tolerance),
                if c.passed() { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

fn interior_switch_times(horizon: f64) -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0 * horizon).collect()
}

/// Numerical solutions of the double-integrator example against its
/// closed forms.
pub fn verify_example43(
    params: &Example43Params,
    x1: [f64; 2],
    numerics: &Numerics,
) -> Result<VerifyReport, Error> {
    let spec = params.to_spec()?;
    let horizon = params.horizon;
    let problem = SwitchTimeProblem::new(&spec, numerics.riccati())?;
    let mut report = VerifyReport::default();

    let ts: Vec<f64> = (0..100).map(|i| horizon * i as f64 / 99.0).collect();
    let mut errs = Vec::new();
    for &t in &ts {
        errs.push(problem.stage2().p_at(t)?[(2, 2)] - p2_closed_ex43(t, params, 0.0)?);
    }
    report.checks.push(Check::new("stage2_vs_closed_form", max_abs(errs.into_iter()), 1e-6));

    let rs = interior_switch_times(horizon);
    let mut stage1_err = 0.0_f64;
    let mut route_err = 0.0_f64;
    let mut curve_err = 0.0_f64;
    for &r in &rs {
        let numeric = problem.p1_initial(r)?;
        let closed = ex43_p1(0.0, r, params)?;
        stage1_err = stage1_err.max(max_abs(
            (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| numeric[(i, j)] - closed[(i, j)]),
        ));
        for t in [0.0, 0.5 * r] {
            let d = ex43_p1(t, r, params)? - ex43_p1_via_exponential(t, r, params)?;
            route_err = route_err.max(d.amax());
        }
        curve_err = curve_err.max((problem.phi(&x1, r)? - ex43_value(r, x1, params)?).abs());
    }
    report.checks.push(Check::new("stage1_vs_closed_form", stage1_err, 1e-6));
    report.checks.push(Check::new("exponential_vs_rational", route_err, 1e-9));
    report.checks.push(Check::new("value_curve_vs_closed_form", curve_err, 1e-6));

    if x1.iter().any(|v| *v != 0.0) {
        let res = problem.find_optimal_time(&x1, numerics.coarse_points, numerics.tol_r.unwrap_or(1e-6 * horizon))?;
        let brute = (0..=10_000)
            .map(|i| ex43_value(horizon * i as f64 / 10_000.0, x1, params))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        report.checks.push(Check::new(
            "optimal_value_vs_brute_force",
            (res.phi_min - brute).max(0.0),
            1e-6,
        ));
    }
    Ok(report)
}

/// Numerical solutions of a scalar problem against the closed forms and
/// the sign conditions at the optimal switch time.
pub fn verify_1d(params: &Scalar1DParams, numerics: &Numerics) -> Result<VerifyReport, Error> {
    let spec = params.to_spec()?;
    let horizon = params.horizon;
    let tol_r = numerics.tol_r.unwrap_or(1e-6 * horizon);
    let problem = SwitchTimeProblem::new(&spec, numerics.riccati())?;
    let mut report = VerifyReport::default();

    if params.has_lambda_form() {
        let mut errs = Vec::new();
        for i in 0..100 {
            let t = horizon * i as f64 / 99.0;
            let closed = match p2_closed_general(t, params)? {
                P2Closed::Value { value, .. } => value,
                P2Closed::Degenerate { constant, .. } => constant,
            };
            errs.push(problem.stage2().p_at(t)?[(1, 1)] - closed);
        }
        report.checks.push(Check::new("stage2_vs_closed_form", max_abs(errs.into_iter()), 1e-6));
    }

    let mut rel = 0.0_f64;
    for r in interior_switch_times(horizon) {
        let exact = crate::dot::sensitivity_scalar(params, r, problem.stage2())?;
        let fd = problem.sensitivity_fd(&[1.0], r, 1e-4 * horizon)?;
        let scale = exact.abs().max(fd.abs());
        if scale > 1e-12 {
            rel = rel.max((exact - fd).abs() / scale);
        }
    }
    report.checks.push(Check::new("sensitivity_vs_finite_difference", rel, 1e-3));

    let a = problem.find_optimal_time(&[1.0], numerics.coarse_points, tol_r)?;
    let b = problem.find_optimal_time(&[2.5], numerics.coarse_points, tol_r)?;
    report.checks.push(Check::new("optimum_independent_of_x1", (a.r_bar - b.r_bar).abs(), tol_r));
    let sign_ok = a.satisfies_sign_table().unwrap_or(false);
    report.checks.push(Check::new(
        "sign_conditions_at_optimum",
        if sign_ok { 0.0 } else { 1.0 },
        0.0,
    ));
    let rs: Vec<f64> = (0..=1000).map(|i| horizon * i as f64 / 1000.0).collect();
    let brute = problem.value_curve(&[1.0], &rs)?;
    let brute_min = brute.phi[brute.argmin()];
    report.checks.push(Check::new(
        "optimal_value_vs_brute_force",
        (a.phi_min - brute_min).max(0.0),
        1e-9,
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
x1 = [1.0]

[problem]
kind = "scalar"
a1 = 1.0
b1 = 2.0
c1 = 0.0
d1 = 0.0
q1 = 1.0
r1 = 1.0
g1 = 0.0
a2 = 1.0
b2 = 1.0
c2 = 0.0
d2 = 0.0
q2 = 0.0
r2 = 1.0
g2 = 0.5
k = 1.0
horizon = 1.0
"#;

    #[test]
    fn minimal_scalar_config_gets_defaults() {
        let cfg = parse_config(SCALAR).unwrap();
        assert_eq!(cfg.numerics.n_steps, 2000);
        assert_eq!(cfg.numerics.coarse_points, 65);
        assert_eq!(cfg.numerics.tol_r, Some(1e-6));
        assert_eq!(cfg.simulation.n_paths, 100_000);
        assert_eq!(cfg.output.format, OutputFormat::Csv);
        assert_eq!(cfg.problem, ProblemConfig::Scalar(Scalar1DParams::certificate_scenario()));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let doc = SCALAR.replace("k = 1.0", "k = 1.0\nkk = 2.0");
        let err = parse_config(&doc).unwrap_err().to_string();
        assert!(err.contains("kk"), "{err}");
    }

    #[test]
    fn config_round_trip() {
        let cfg = parse_config(SCALAR).unwrap();
        assert_eq!(parse_config(&emit_config(&cfg)).unwrap(), cfg);
        let ex = RunConfig::example43();
        assert_eq!(parse_config(&emit_config(&ex)).unwrap(), ex);
    }

    #[test]
    fn verification_report_table() {
        let report = VerifyReport {
            checks: vec![Check::new("a", 0.5, 1.0), Check::new("b", f64::NAN, 1.0)],
        };
        assert!(!report.passed());
        let text = report.render();
        assert!(text.lines().nth(1).unwrap().ends_with("PASS"));
        assert!(text.lines().nth(2).unwrap().ends_with("FAIL"));
    }
}
