//! Euler–Maruyama simulation of the two-stage system driven by a single
//! Brownian motion, Monte Carlo cost estimates and adjoint residual checks.
//!
//! Each path draws its increments from its own ChaCha stream (stream index =
//! path index, or pair index with antithetic sampling), and per-path costs
//! are summed in path order, so results do not depend on the thread count.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dot::map_ordered;
use crate::error::{Error, Result};
use crate::model::{ProblemSpec, StageCoefficients, TimeGrid};
use crate::report::{fmt_f64, KvDocument};
use crate::riccati::{
    feedback_gain, solve_stage1_with, solve_stage2_with, stitched_terminal, RiccatiOptions,
    RiccatiSolution, Stage1Solution,
};

pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_TRACE_PATHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Pairs of paths share a stream with negated increments; needs an even
    /// path count.
    pub antithetic: bool,
    /// Thread count; `None` uses the global pool. Never affects results.
    pub workers: Option<usize>,
    /// Paths whose adjoints are reconstructed in closed-loop runs.
    pub trace_paths: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: DEFAULT_PATHS,
            n_steps: crate::riccati::DEFAULT_STEPS,
            seed: 0,
            antithetic: false,
            workers: None,
            trace_paths: DEFAULT_TRACE_PATHS,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
        }
        if self.n_steps < 2 {
            return Err(Error::InvalidArgument("n_steps must be at least 2".into()));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::InvalidArgument(
                "antithetic sampling needs an even number of paths".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub mean_cost: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub r_requested: f64,
    /// The grid node actually used as switch time.
    pub r_used: f64,
    pub stationarity_max_residual: Option<f64>,
    pub stage1_stationarity_max_residual: Option<f64>,
    pub terminal_adjoint_residual: Option<f64>,
    pub jump_residual: Option<f64>,
}

impl SimReport {
    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.real("mean_cost", self.mean_cost)
            .real("std_error", self.std_error)
            .text("n_paths", self.n_paths)
            .text("n_steps", self.n_steps)
            .text("seed", self.seed)
            .text("antithetic", self.antithetic)
            .real("r_requested", self.r_requested)
            .real("r_used", self.r_used)
            .opt_real("stationarity_max_residual", self.stationarity_max_residual)
            .opt_real(
                "stage1_stationarity_max_residual",
                self.stage1_stationarity_max_residual,
            )
            .opt_real("terminal_adjoint_residual", self.terminal_adjoint_residual)
            .opt_real("jump_residual", self.jump_residual);
        doc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// `[0, r]`, state `X1` of dimension `n1`.
    Stage1,
    /// `[r, T]`, state `X` of dimension `n`.
    Stage2,
}

/// A feedback law `u = law(t, X)`. The switch node is evaluated in both
/// phases: `Stage1` with the left state, `Stage2` with `K X1`.
pub trait ControlLaw: Sync {
    fn control(&self, t: f64, phase: Phase, state: &[f64], u: &mut [f64]);
}

impl<F> ControlLaw for F
where
    F: Fn(f64, Phase, &[f64], &mut [f64]) + Sync,
{
    fn control(&self, t: f64, phase: Phase, state: &[f64], u: &mut [f64]) {
        self(t, phase, state, u)
    }
}

/// `u = −Ψ(t) X` with the gains sampled on the simulation grid; `t` is
/// rounded to the nearest node.
#[derive(Debug, Clone)]
pub struct OptimalFeedback {
    grid: TimeGrid,
    k_r: usize,
    /// Row-major gains per node.
    stage1: Vec<Vec<f64>>,
    stage2: Vec<Vec<f64>>,
}

impl OptimalFeedback {
    pub fn new(
        stage2: &RiccatiSolution,
        stage1: &Stage1Solution,
        n_steps: usize,
    ) -> Result<Self> {
        let grid = TimeGrid::horizon(stage2.grid().t1(), n_steps)?;
        let k_r = switch_node(&grid, stage1.r())?;
        let stage1_gains = (0..=k_r)
            .map(|k| feedback_gain(stage1, grid.node(k).min(stage1.r())).map(|g| row_major(&g)))
            .collect::<Result<_>>()?;
        let stage2_gains = (k_r..=grid.n_steps())
            .map(|k| feedback_gain(stage2, grid.node(k)).map(|g| row_major(&g)))
            .collect::<Result<_>>()?;
        Ok(OptimalFeedback {
            grid,
            k_r,
            stage1: stage1_gains,
            stage2: stage2_gains,
        })
    }
}

impl ControlLaw for OptimalFeedback {
    fn control(&self, t: f64, phase: Phase, state: &[f64], u: &mut [f64]) {
        let k = self.grid.nearest_node(t);
        let gain = match phase {
            Phase::Stage1 => &self.stage1[k.min(self.k_r)],
            Phase::Stage2 => &self.stage2[k.max(self.k_r) - self.k_r],
        };
        for (ui, row) in u.iter_mut().zip(gain.chunks_exact(state.len().max(1))) {
            *ui = -dot(row, state);
        }
    }
}

/// States and controls of one path at every node. Stage-1 entries cover
/// nodes `0..=k_r`, stage-2 entries nodes `k_r..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub times: Vec<f64>,
    pub k_r: usize,
    pub x1: Vec<Vec<f64>>,
    pub u1: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl PathTrace {
    pub fn max_state_norm(&self) -> f64 {
        self.x1
            .iter()
            .chain(&self.x)
            .map(|v| v.iter().map(|a| a * a).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// CSV with columns `path,t,stage,x_1..x_n,u_1..u_m`; stage-1 rows leave
/// the state columns beyond `n1` empty.
pub fn write_traces_csv<W: Write>(traces: &[PathTrace], n: usize, m: usize, mut out: W) -> io::Result<()> {
    let mut header = vec!["path".to_string(), "t".into(), "stage".into()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for (p, tr) in traces.iter().enumerate() {
        let rows = tr
            .x1
            .iter()
            .zip(&tr.u1)
            .enumerate()
            .map(|(k, (x, u))| (k, 1, x, u))
            .chain(
                tr.x.iter()
                    .zip(&tr.u)
                    .enumerate()
                    .map(|(j, (x, u))| (tr.k_r + j, 2, x, u)),
            );
        for (k, stage, x, u) in rows {
            let mut cells = vec![p.to_string(), fmt_f64(tr.times[k]), stage.to_string()];
            cells.extend((0..n).map(|i| x.get(i).map(|v| fmt_f64(*v)).unwrap_or_default()));
            cells.extend(u.iter().map(|v| fmt_f64(*v)));
            writeln!(out, "{}", cells.join(","))?;
        }
    }
    Ok(())
}

fn switch_node(grid: &TimeGrid, r: f64) -> Result<usize> {
    if !grid.contains(r) {
        return Err(Error::OutOfRange {
            t: r,
            lo: grid.t0(),
            hi: grid.t1(),
        });
    }
    Ok(grid.nearest_node(r))
}

/// Snap `r` to the nearest node of the uniform `n_steps` grid on `[0, T]`.
pub fn snap_switch_time(spec: &ProblemSpec, r: f64, n_steps: usize) -> Result<f64> {
    let grid = TimeGrid::horizon(spec.horizon_end(), n_steps)?;
    Ok(grid.node(switch_node(&grid, r)?))
}

/// Row-major copies of one stage's coefficients at one node.
struct FlatStage {
    dim: usize,
    /// Rows of `[A B]` and `[C D]`, acting on `z = (x, u)`.
    ab: Vec<f64>,
    cd: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn side_by_side(left: &DMatrix<f64>, right: &DMatrix<f64>) -> Vec<f64> {
    let mut joined = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    joined.columns_mut(0, left.ncols()).copy_from(left);
    joined.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    row_major(&joined)
}

impl FlatStage {
    fn new(c: &StageCoefficients) -> Self {
        FlatStage {
            dim: c.a.nrows(),
            ab: side_by_side(&c.a, &c.b),
            cd: side_by_side(&c.c, &c.d),
            q: row_major(&c.q),
            r: row_major(&c.r),
        }
    }

    /// `⟨Qx,x⟩ + ⟨Ru,u⟩` for `z = (x, u)`.
    fn running_cost(&self, z: &[f64]) -> f64 {
        let (x, u) = z.split_at(self.dim);
        quad(&self.q, x) + quad(&self.r, u)
    }

    /// One Euler–Maruyama step `x += (Ax + Bu) h + (Cx + Du) dw`.
    fn step(&self, z: &mut [f64], dx: &mut [f64], h: f64, dw: f64) {
        let width = z.len();
        for i in 0..self.dim {
            let drift = dot(&self.ab[i * width..(i + 1) * width], z);
            let diff = dot(&self.cd[i * width..(i + 1) * width], z);
            dx[i] = drift * h + diff * dw;
        }
        for i in 0..self.dim {
            z[i] += dx[i];
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn quad(m: &[f64], v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    m.chunks_exact(v.len())
        .zip(v)
        .map(|(row, vi)| dot(row, v) * vi)
        .sum()
}

/// Coefficients on the simulation grid. Constant stages keep a single
/// node.
struct Engine<'a> {
    spec: &'a ProblemSpec,
    grid: TimeGrid,
    k_r: usize,
    r_used: f64,
    stage1: Vec<FlatStage>,
    stage2: Vec<FlatStage>,
    g1: Vec<f64>,
    k: DMatrix<f64>,
    g: Vec<f64>,
    cfg: SimConfig,
}

fn check_finite(z: &[f64], path: usize, step: usize) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { path, step })
    }
}

impl<'a> Engine<'a> {
    fn new(spec: &'a ProblemSpec, r: f64, cfg: &SimConfig) -> Result<Self> {
        cfg.check()?;
        spec.check_structure()?;
        let grid = TimeGrid::horizon(spec.horizon_end(), cfg.n_steps)?;
        let k_r = switch_node(&grid, r)?;
        let r_used = grid.node(k_r);
        let stage1_const = [&spec.a1, &spec.b1, &spec.c1, &spec.d1, &spec.q1, &spec.r1]
            .iter()
            .all(|t| t.is_constant());
        let stage2_const = [&spec.a, &spec.b, &spec.c, &spec.d, &spec.q, &spec.r]
            .iter()
            .all(|t| t.is_constant());
        let nodes1 = if stage1_const { k_r..=k_r } else { 0..=k_r };
        let nodes2 = if stage2_const { k_r..=k_r } else { k_r..=cfg.n_steps };
        let stage1 = nodes1
            .map(|k| spec.stage1_at(grid.node(k)).map(|c| FlatStage::new(&c)))
            .collect::<Result<_>>()?;
        let stage2 = nodes2
            .map(|k| spec.stage2_at(grid.node(k)).map(|c| FlatStage::new(&c)))
            .collect::<Result<_>>()?;
        Ok(Engine {
            spec,
            grid,
            k_r,
            r_used,
            stage1,
            stage2,
            g1: row_major(&spec.g1_at(r_used)?),
            k: spec.k_at(r_used)?,
            g: row_major(&spec.g),
            cfg: *cfg,
        })
    }

    fn stage1_at(&self, k: usize) -> &FlatStage {
        &self.stage1[k.min(self.stage1.len() - 1)]
    }

    fn stage2_at(&self, k: usize) -> &FlatStage {
        &self.stage2[(k - self.k_r).min(self.stage2.len() - 1)]
    }

    fn increments(&self, path: usize) -> Vec<f64> {
        let (stream, sign) = if self.cfg.antithetic {
            (path / 2, if path % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            (path, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream as u64);
        let sqrt_h = self.grid.step().sqrt();
        (0..self.cfg.n_steps)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sign * sqrt_h * z
            })
            .collect()
    }

    /// Simulate one path and return its cost, optionally recording it.
    fn run_path<L: ControlLaw + ?Sized>(
        &self,
        law: &L,
        x1: &[f64],
        path: usize,
        dw: &[f64],
        mut trace: Option<&mut PathTrace>,
    ) -> Result<f64> {
        let n1 = self.spec.n1;
        let n = self.spec.n();
        let m = self.spec.m;
        let h = self.grid.step();
        let mut z1 = vec![0.0; n1 + m];
        z1[..n1].copy_from_slice(x1);
        let mut z = vec![0.0; n + m];
        let mut dx = vec![0.0; n.max(n1)];

        let mut integral = 0.0;
        let mut prev = 0.0;
        for k in 0..=self.k_r {
            let c = self.stage1_at(k);
            let (x, u) = z1.split_at_mut(n1);
            law.control(self.grid.node(k), Phase::Stage1, x, u);
            check_finite(&z1, path, k)?;
            let f = c.running_cost(&z1);
            if k > 0 {
                integral += 0.5 * h * (prev + f);
            }
            prev = f;
            if let Some(tr) = trace.as_deref_mut() {
                tr.x1.push(z1[..n1].to_vec());
                tr.u1.push(z1[n1..].to_vec());
            }
            if k < self.k_r {
                c.step(&mut z1, &mut dx, h, dw[k]);
            }
        }

        // X(r) = K(r) X1(r−)
        let x1_r = &z1[..n1];
        let switch_cost = quad(&self.g1, x1_r);
        for i in 0..n {
            z[i] = (0..n1).map(|j| self.k[(i, j)] * x1_r[j]).sum();
        }

        let t_end = self.cfg.n_steps;
        for k in self.k_r..=t_end {
            let c = self.stage2_at(k);
            let (x, u) = z.split_at_mut(n);
            law.control(self.grid.node(k), Phase::Stage2, x, u);
            check_finite(&z, path, k)?;
            let f = c.running_cost(&z);
            if k > self.k_r {
                integral += 0.5 * h * (prev + f);
            }
            prev = f;
            if let Some(tr) = trace.as_deref_mut() {
                tr.x.push(z[..n].to_vec());
                tr.u.push(z[n..].to_vec());
            }
            if k < t_end {
                c.step(&mut z, &mut dx, h, dw[k]);
            }
        }
        let y = &z[..n];
        let terminal = quad(&self.g, y);
        Ok(0.5 * (integral + switch_cost + terminal))
    }

    fn new_trace(&self) -> PathTrace {
        PathTrace {
            times: self.grid.nodes().collect(),
            k_r: self.k_r,
            x1: Vec::new(),
            u1: Vec::new(),
            x: Vec::new(),
            u: Vec::new(),
        }
    }

    fn trace<L: ControlLaw + ?Sized>(&self, law: &L, x1: &[f64], path: usize) -> Result<PathTrace> {
        let mut tr = self.new_trace();
        self.run_path(law, x1, path, &self.increments(path), Some(&mut tr))?;
        Ok(tr)
    }

    fn check_x1(&self, x1: &[f64]) -> Result<()> {
        if x1.len() != self.spec.n1 {
            return Err(Error::dim("x1", self.spec.n1, x1.len()));
        }
        Ok(())
    }

    /// Run `f` for every path index, optionally inside a sized thread pool.
    fn for_paths<U, F>(&self, f: F) -> Result<Vec<U>>
    where
        U: Send,
        F: Fn(&usize) -> Result<U> + Sync,
    {
        let paths: Vec<usize> = (0..self.cfg.n_paths).collect();
        #[cfg(feature = "parallel")]
        if let Some(w) = self.cfg.workers {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            return pool.install(|| map_ordered(&paths, &f));
        }
        map_ordered(&paths, f)
    }

    /// Mean and standard error, using pair means under antithetic sampling.
    fn estimate(&self, samples: &[f64]) -> (f64, f64) {
        let units: Vec<f64> = if self.cfg.antithetic {
            samples.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
        } else {
            samples.to_vec()
        };
        let count = units.len() as f64;
        let mean = units.iter().sum::<f64>() / count;
        if units.len() < 2 {
            return (mean, 0.0);
        }
        let var = units.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
        (mean, (var / count).sqrt())
    }

    fn report(&self, r: f64, costs: &[f64]) -> SimReport {
        let (mean_cost, std_error) = self.estimate(costs);
        SimReport {
            mean_cost,
            std_error,
            n_paths: self.cfg.n_paths,
            n_steps: self.cfg.n_steps,
            seed: self.cfg.seed,
            antithetic: self.cfg.antithetic,
            r_requested: r,
            r_used: self.r_used,
            stationarity_max_residual: None,
            stage1_stationarity_max_residual: None,
            terminal_adjoint_residual: None,
            jump_residual: None,
        }
    }
}

/// Monte Carlo cost of an arbitrary feedback law with the switch at the
/// grid node nearest `r`.
pub fn simulate_with_control<L: ControlLaw + ?Sized>(
    spec: &ProblemSpec,
    r: f64,
    control: &L,
    x1: &[f64],
    cfg: &SimConfig,
) -> Result<SimReport> {
    let engine = Engine::new(spec, r, cfg)?;
    engine.check_x1(x1)?;
    let costs = engine.for_paths(|&p| engine.run_path(control, x1, p, &engine.increments(p), None))?;
    Ok(engine.report(r, &costs))
}

fn check_solutions(
    spec: &ProblemSpec,
    r_used: f64,
    stage2: &RiccatiSolution,
    stage1: &Stage1Solution,
) -> Result<()> {
    let n = spec.n();
    if stage2.p()[0].shape() != (n, n) {
        return Err(Error::dim("stage-2 solution", n, stage2.p()[0].nrows()));
    }
    if stage1.p()[0].shape() != (spec.n1, spec.n1) {
        return Err(Error::dim("stage-1 solution", spec.n1, stage1.p()[0].nrows()));
    }
    if (stage2.grid().t1() - spec.horizon_end()).abs() > 1e-12 * spec.horizon_end() {
        return Err(Error::InvalidArgument(
            "stage-2 solution horizon differs from the spec".into(),
        ));
    }
    if (stage1.r() - r_used).abs() > 1e-12 * spec.horizon_end() {
        return Err(Error::InvalidArgument(format!(
            "stage-1 solution is for r = {}, simulation switches at the node r = {r_used}",
            stage1.r()
        )));
    }
    Ok(())
}

/// Closed-loop run under `u = −ΨX`. `stage1` must be solved at the snapped
/// switch time (see [`snap_switch_time`]). The first `cfg.trace_paths`
/// paths also get their adjoints reconstructed.
pub fn simulate_closed_loop(
    spec: &ProblemSpec,
    r: f64,
    stage2: &RiccatiSolution,
    stage1: &Stage1Solution,
    x1: &[f64],
    cfg: &SimConfig,
) -> Result<SimReport> {
    let engine = Engine::new(spec, r, cfg)?;
    engine.check_x1(x1)?;
    check_solutions(spec, engine.r_used, stage2, stage1)?;
    let law = OptimalFeedback::new(stage2, stage1, cfg.n_steps)?;
    let costs = engine.for_paths(|&p| engine.run_path(&law, x1, p, &engine.increments(p), None))?;
    let mut report = engine.report(r, &costs);

    let traced = cfg.trace_paths.min(cfg.n_paths);
    if traced > 0 {
        let traces = (0..traced)
            .map(|p| engine.trace(&law, x1, p))
            .collect::<Result<Vec<_>>>()?;
        let res = stationarity_check(spec, engine.r_used, stage2, stage1, &traces)?;
        report.stationarity_max_residual = Some(res.stage2);
        report.stage1_stationarity_max_residual = Some(res.stage1);
        report.terminal_adjoint_residual = Some(res.terminal);
        report.jump_residual = Some(res.jump);
    }
    Ok(report)
}

/// Snap `r`, solve both Riccati equations and run the closed loop.
pub fn simulate_optimal(
    spec: &ProblemSpec,
    r: f64,
    x1: &[f64],
    cfg: &SimConfig,
    opts: &RiccatiOptions,
) -> Result<SimReport> {
    let r_used = snap_switch_time(spec, r, cfg.n_steps)?;
    let stage2 = solve_stage2_with(spec, opts)?;
    let stage1 = solve_stage1_with(spec, r_used, &stage2.p_at(r_used)?, opts)?;
    let mut report = simulate_closed_loop(spec, r_used, &stage2, &stage1, x1, cfg)?;
    report.r_requested = r;
    Ok(report)
}

/// Record the first `count` paths under `control`.
pub fn path_traces<L: ControlLaw + ?Sized>(
    spec: &ProblemSpec,
    r: f64,
    control: &L,
    x1: &[f64],
    cfg: &SimConfig,
    count: usize,
) -> Result<Vec<PathTrace>> {
    let engine = Engine::new(spec, r, cfg)?;
    engine.check_x1(x1)?;
    (0..count.min(cfg.n_paths))
        .map(|p| engine.trace(control, x1, p))
        .collect()
}

/// Adjoint processes reconstructed from a path (`Λ = 0`):
/// `p = −PX`, `q = −P(CX + Du)` on `[r, T]` and the stage-1 analogues on
/// `[0, r]`, with the stationarity residual `|Ru − Bᵀp − Dᵀq|` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    pub p1: Vec<DVector<f64>>,
    pub q1: Vec<DVector<f64>>,
    pub residual1: Vec<f64>,
    pub p: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    pub residual: Vec<f64>,
    /// `|p(T) + G X(T)|`.
    pub terminal: f64,
    /// `|p1(r) + [KᵀP(r)K + G1(r)] X1(r)|`.
    pub jump: f64,
}

fn adjoint_stage(
    p_mat: &DMatrix<f64>,
    c: &StageCoefficients,
    x: &[f64],
    u: &[f64],
) -> (DVector<f64>, DVector<f64>, f64) {
    let x = DVector::from_column_slice(x);
    let u = DVector::from_column_slice(u);
    let p = -(p_mat * &x);
    let q = -(p_mat * (&c.c * &x + &c.d * &u));
    let residual = (&c.r * &u - c.b.transpose() * &p - c.d.transpose() * &q).norm();
    (p, q, residual)
}

pub fn reconstruct_adjoint(
    spec: &ProblemSpec,
    stage2: &RiccatiSolution,
    stage1: &Stage1Solution,
    trace: &PathTrace,
) -> Result<AdjointPath> {
    let r = trace.times[trace.k_r];
    check_solutions(spec, r, stage2, stage1)?;
    let mut out = AdjointPath {
        p1: Vec::new(),
        q1: Vec::new(),
        residual1: Vec::new(),
        p: Vec::new(),
        q: Vec::new(),
        residual: Vec::new(),
        terminal: 0.0,
        jump: 0.0,
    };
    for (k, (x, u)) in trace.x1.iter().zip(&trace.u1).enumerate() {
        let t = trace.times[k];
        let (p, q, res) = adjoint_stage(&stage1.p_at(t.min(r))?, &spec.stage1_at(t)?, x, u);
        out.p1.push(p);
        out.q1.push(q);
        out.residual1.push(res);
    }
    for (j, (x, u)) in trace.x.iter().zip(&trace.u).enumerate() {
        let t = trace.times[trace.k_r + j];
        let (p, q, res) = adjoint_stage(&stage2.p_at(t)?, &spec.stage2_at(t)?, x, u);
        out.p.push(p);
        out.q.push(q);
        out.residual.push(res);
    }
    let xt = DVector::from_column_slice(trace.x.last().expect("stage-2 trace is never empty"));
    out.terminal = (out.p.last().expect("nonempty") + &spec.g * &xt).norm();
    let x1r = DVector::from_column_slice(&trace.x1[trace.k_r]);
    let stitched = stitched_terminal(spec, r, &stage2.p_at(r)?)?;
    out.jump = (&out.p1[trace.k_r] + stitched * x1r).norm();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub stage2: f64,
    pub stage1: f64,
    pub terminal: f64,
    pub jump: f64,
    /// Largest state norm seen on the paths.
    pub max_state: f64,
}

/// Maxima of the adjoint residuals over a sample of paths.
pub fn stationarity_check(
    spec: &ProblemSpec,
    r: f64,
    stage2: &RiccatiSolution,
    stage1: &Stage1Solution,
    traces: &[PathTrace],
) -> Result<Residuals> {
    let mut out = Residuals {
        stage2: 0.0,
        stage1: 0.0,
        terminal: 0.0,
        jump: 0.0,
        max_state: 0.0,
    };
    for tr in traces {
        if (tr.times[tr.k_r] - r).abs() > 1e-12 * spec.horizon_end() {
            return Err(Error::InvalidArgument(format!(
                "trace switches at {}, expected {r}",
                tr.times[tr.k_r]
            )));
        }
        let adj = reconstruct_adjoint(spec, stage2, stage1, tr)?;
        let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        out.stage2 = out.stage2.max(max(&adj.residual));
        out.stage1 = out.stage1.max(max(&adj.residual1));
        out.terminal = out.terminal.max(adj.terminal);
        out.jump = out.jump.max(adj.jump);
        out.max_state = out.max_state.max(tr.max_state_norm());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// Mean of `cost_a − cost_b` over paths.
    pub gap: f64,
    pub gap_std_error: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub r_used: f64,
}

/// Cost difference of two laws with common random numbers: each path uses
/// the same increments for both.
pub fn compare_controls<A, B>(
    spec: &ProblemSpec,
    r: f64,
    control_a: &A,
    control_b: &B,
    x1: &[f64],
    cfg: &SimConfig,
) -> Result<Comparison>
where
    A: ControlLaw + ?Sized,
    B: ControlLaw + ?Sized,
{
    let engine = Engine::new(spec, r, cfg)?;
    engine.check_x1(x1)?;
    let pairs = engine.for_paths(|&p| {
        let dw = engine.increments(p);
        Ok((
            engine.run_path(control_a, x1, p, &dw, None)?,
            engine.run_path(control_b, x1, p, &dw, None)?,
        ))
    })?;
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let (gap, gap_std_error) = engine.estimate(&diffs);
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(Comparison {
        gap,
        gap_std_error,
        mean_a: engine.estimate(&a).0,
        mean_b: engine.estimate(&b).0,
        r_used: engine.r_used,
    })
}
