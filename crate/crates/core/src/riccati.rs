//! Backward matrix Riccati solves for both stages.
//!
//! Stage 2 solves
//! `P' + PA + AᵀP + CᵀPC + Q − (PB + CᵀPD)(R + DᵀPD)⁻¹(BᵀP + DᵀPC) = 0`,
//! `P(T) = G` on `[0, T]`; stage 1 solves the same equation with the stage-1
//! coefficients on `[0, r]` from the stitched terminal value
//! `P1(r) = K(r)ᵀ P(r) K(r) + G1(r)`. Both use classical RK4 on a uniform
//! grid with symmetrisation after every stage. The feedback law is
//! `u = −Ψ X` with `Ψ = (R + DᵀPD)⁻¹(BᵀP + DᵀPC)`.

use std::borrow::Cow;
use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{min_eigenvalue, ProblemSpec, StageCoefficients, TimeGrid};
use crate::report::fmt_f64;

/// Smallest admissible eigenvalue of `R + DᵀPD`.
pub const PD_THRESHOLD: f64 = 1e-10;

pub const DEFAULT_STEPS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    pub n_steps: usize,
    pub pd_threshold: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions {
            n_steps: DEFAULT_STEPS,
            pd_threshold: PD_THRESHOLD,
        }
    }
}

impl RiccatiOptions {
    pub fn with_steps(n_steps: usize) -> Self {
        RiccatiOptions {
            n_steps,
            ..Default::default()
        }
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

struct Rhs {
    p_dot: DMatrix<f64>,
    gain: DMatrix<f64>,
}

/// `y <- y + a·k`.
fn shifted(y: &mut DMatrix<f64>, a: f64, k: &DMatrix<f64>) {
    for (yi, ki) in y.iter_mut().zip(k.iter()) {
        *yi += a * ki;
    }
}

/// Scratch matrices for [`evaluate_into`].
struct Workspace {
    pd: DMatrix<f64>,
    s: DMatrix<f64>,
    pc: DMatrix<f64>,
    l: DMatrix<f64>,
    pa: DMatrix<f64>,
}

impl Workspace {
    fn new(n: usize, m: usize) -> Self {
        Workspace {
            pd: DMatrix::zeros(n, m),
            s: DMatrix::zeros(m, m),
            pc: DMatrix::zeros(n, n),
            l: DMatrix::zeros(m, n),
            pa: DMatrix::zeros(n, n),
        }
    }
}

/// Right-hand side `P'` and gain `Ψ` at a given `P`. Fails with the
/// smallest eigenvalue of `R + DᵀPD` when it drops below the threshold.
fn evaluate(
    p: &DMatrix<f64>,
    c: &StageCoefficients,
    threshold: f64,
) -> std::result::Result<Rhs, f64> {
    let (n, m) = c.b.shape();
    let mut ws = Workspace::new(n, m);
    let mut rhs = Rhs {
        p_dot: DMatrix::zeros(n, n),
        gain: DMatrix::zeros(m, n),
    };
    evaluate_into(p, c, threshold, &mut ws, &mut rhs.p_dot, &mut rhs.gain)?;
    Ok(rhs)
}

fn evaluate_into(
    p: &DMatrix<f64>,
    c: &StageCoefficients,
    threshold: f64,
    ws: &mut Workspace,
    p_dot: &mut DMatrix<f64>,
    gain: &mut DMatrix<f64>,
) -> std::result::Result<(), f64> {
    ws.pd.gemm(1.0, p, &c.d, 0.0);
    ws.s.copy_from(&c.r);
    ws.s.gemm_tr(1.0, &c.d, &ws.pd, 1.0);
    let scalar = ws.s.nrows() == 1;
    let min_eig = if scalar { ws.s[(0, 0)] } else { min_eigenvalue(&ws.s) };
    if !(min_eig >= threshold) {
        return Err(min_eig);
    }
    ws.pc.gemm(1.0, p, &c.c, 0.0);
    ws.l.gemm_tr(1.0, &c.b, p, 0.0);
    ws.l.gemm_tr(1.0, &c.d, &ws.pc, 1.0);
    if scalar {
        gain.copy_from(&ws.l);
        *gain /= ws.s[(0, 0)];
    } else {
        let solved = match ws.s.clone().cholesky() {
            Some(ch) => ch.solve(&ws.l),
            None => ws.s.clone().lu().solve(&ws.l).ok_or(min_eig)?,
        };
        gain.copy_from(&solved);
    }
    ws.pa.gemm(1.0, p, &c.a, 0.0);
    let n = p.nrows();
    for j in 0..n {
        for i in 0..n {
            p_dot[(i, j)] = ws.pa[(i, j)] + ws.pa[(j, i)];
        }
    }
    p_dot.gemm_tr(1.0, &c.c, &ws.pc, 1.0);
    *p_dot += &c.q;
    p_dot.gemm_tr(-1.0, &ws.l, gain, 1.0);
    p_dot.neg_mut();
    symmetrize(p_dot);
    Ok(())
}

fn stage1_constant(spec: &ProblemSpec) -> bool {
    [&spec.a1, &spec.b1, &spec.c1, &spec.d1, &spec.q1, &spec.r1]
        .iter()
        .all(|t| t.is_constant())
}

fn stage2_constant(spec: &ProblemSpec) -> bool {
    [&spec.a, &spec.b, &spec.c, &spec.d, &spec.q, &spec.r]
        .iter()
        .all(|t| t.is_constant())
}

/// Backward RK4 from `terminal` at `grid.t1()` down to `grid.t0()`.
/// Returns node values, derivatives and gains in increasing time order.
fn integrate_backward<F>(
    grid: &TimeGrid,
    terminal: DMatrix<f64>,
    coeffs: F,
    constant: bool,
    threshold: f64,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)>
where
    F: Fn(f64) -> Result<StageCoefficients>,
{
    let n = grid.n_steps();
    let h = grid.step();
    let blow_up = |node: usize, t: f64, min_eig: f64| Error::RiccatiBlowUp {
        node,
        t,
        min_eig,
        threshold,
    };

    let mut p = vec![DMatrix::zeros(0, 0); n + 1];
    let mut p_dot = vec![DMatrix::zeros(0, 0); n + 1];
    let mut gain = vec![DMatrix::zeros(0, 0); n + 1];

    let t_end = grid.node(n);
    let fixed = if constant { Some(coeffs(t_end)?) } else { None };
    let at = |t: f64| -> Result<Cow<'_, StageCoefficients>> {
        match &fixed {
            Some(c) => Ok(Cow::Borrowed(c)),
            None => coeffs(t).map(Cow::Owned),
        }
    };
    let end = evaluate(&terminal, at(t_end)?.as_ref(), threshold).map_err(|e| blow_up(n, t_end, e))?;
    p[n] = terminal;
    p_dot[n] = end.p_dot;
    gain[n] = end.gain;

    // compensated accumulation keeps the round-off of long runs at O(eps)
    let (dim, m) = (p[n].nrows(), gain[n].nrows());
    let mut carry = DMatrix::<f64>::zeros(dim, dim);
    let mut ws = Workspace::new(dim, m);
    let mut y = DMatrix::<f64>::zeros(dim, dim);
    let mut k2 = DMatrix::<f64>::zeros(dim, dim);
    let mut k3 = DMatrix::<f64>::zeros(dim, dim);
    let mut k4 = DMatrix::<f64>::zeros(dim, dim);
    let mut scratch_gain = DMatrix::<f64>::zeros(m, dim);
    for k in (0..n).rev() {
        let t_hi = grid.node(k + 1);
        let t_lo = grid.node(k);
        let t_mid = t_hi - 0.5 * h;
        let c_mid = at(t_mid)?;
        let c_lo = at(t_lo)?;
        let fail = |e| blow_up(k, t_lo, e);

        let p_hi = &p[k + 1];
        let k1 = &p_dot[k + 1];
        y.copy_from(p_hi);
        shifted(&mut y, -0.5 * h, k1);
        symmetrize(&mut y);
        evaluate_into(&y, &c_mid, threshold, &mut ws, &mut k2, &mut scratch_gain).map_err(fail)?;
        y.copy_from(p_hi);
        shifted(&mut y, -0.5 * h, &k2);
        symmetrize(&mut y);
        evaluate_into(&y, &c_mid, threshold, &mut ws, &mut k3, &mut scratch_gain).map_err(fail)?;
        y.copy_from(p_hi);
        shifted(&mut y, -h, &k3);
        symmetrize(&mut y);
        evaluate_into(&y, &c_lo, threshold, &mut ws, &mut k4, &mut scratch_gain).map_err(fail)?;

        let mut next = DMatrix::<f64>::zeros(dim, dim);
        for idx in 0..dim * dim {
            let sum = k1[idx] + k2[idx] * 2.0 + k3[idx] * 2.0 + k4[idx];
            let incr = -sum * (h / 6.0) - carry[idx];
            next[idx] = p_hi[idx] + incr;
            carry[idx] = (next[idx] - p_hi[idx]) - incr;
        }
        symmetrize(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(blow_up(k, t_lo, f64::NAN));
        }
        let mut node_dot = DMatrix::<f64>::zeros(dim, dim);
        let mut node_gain = DMatrix::<f64>::zeros(m, dim);
        evaluate_into(&next, &c_lo, threshold, &mut ws, &mut node_dot, &mut node_gain).map_err(fail)?;
        p[k] = next;
        p_dot[k] = node_dot;
        gain[k] = node_gain;
    }
    Ok((p, p_dot, gain))
}

fn hermite(
    grid: &TimeGrid,
    p: &[DMatrix<f64>],
    p_dot: &[DMatrix<f64>],
    t: f64,
) -> Result<DMatrix<f64>> {
    let (k, theta) = grid.locate(t)?;
    if theta == 0.0 {
        return Ok(p[k].clone());
    }
    if theta == 1.0 {
        return Ok(p[k + 1].clone());
    }
    let h = grid.step();
    let (t2, t3) = (theta * theta, theta * theta * theta);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    Ok(&p[k] * h00 + &p_dot[k] * (h10 * h) + &p[k + 1] * h01 + &p_dot[k + 1] * (h11 * h))
}

fn lerp(grid: &TimeGrid, values: &[DMatrix<f64>], t: f64) -> Result<DMatrix<f64>> {
    let (k, theta) = grid.locate(t)?;
    if theta == 0.0 {
        return Ok(values[k].clone());
    }
    if theta == 1.0 {
        return Ok(values[k + 1].clone());
    }
    Ok(&values[k] * (1.0 - theta) + &values[k + 1] * theta)
}

/// Node-sampled gains that can be evaluated anywhere on their span.
pub trait GainSchedule {
    fn span(&self) -> (f64, f64);
    fn gain_at(&self, t: f64) -> Result<DMatrix<f64>>;
}

/// Stage-2 solution on the full horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    grid: TimeGrid,
    p: Vec<DMatrix<f64>>,
    p_dot: Vec<DMatrix<f64>>,
    gain: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn p(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    pub fn p_dot(&self) -> &[DMatrix<f64>] {
        &self.p_dot
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gain
    }

    /// `P(t)` by cubic Hermite interpolation using the node derivatives;
    /// exact at nodes.
    pub fn p_at(&self, t: f64) -> Result<DMatrix<f64>> {
        hermite(&self.grid, &self.p, &self.p_dot, t)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_trajectory_csv(out, self.grid.nodes(), &self.p, &self.gain)
    }
}

impl GainSchedule for RiccatiSolution {
    fn span(&self) -> (f64, f64) {
        (self.grid.t0(), self.grid.t1())
    }

    fn gain_at(&self, t: f64) -> Result<DMatrix<f64>> {
        lerp(&self.grid, &self.gain, t)
    }
}

/// Stage-1 solution on `[0, r]`. For `r = 0` it holds the single stitched
/// terminal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Solution {
    r: f64,
    grid: Option<TimeGrid>,
    p: Vec<DMatrix<f64>>,
    p_dot: Vec<DMatrix<f64>>,
    gain: Vec<DMatrix<f64>>,
}

impl Stage1Solution {
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn grid(&self) -> Option<&TimeGrid> {
        self.grid.as_ref()
    }

    pub fn times(&self) -> Vec<f64> {
        match &self.grid {
            Some(g) => g.nodes().collect(),
            None => vec![0.0],
        }
    }

    pub fn p(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gain
    }

    pub fn p_initial(&self) -> &DMatrix<f64> {
        &self.p[0]
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        self.p.last().expect("stage-1 solution has at least one node")
    }

    pub fn p_at(&self, t: f64) -> Result<DMatrix<f64>> {
        match &self.grid {
            Some(g) => hermite(g, &self.p, &self.p_dot, t),
            None => self.single_node(t).map(|_| self.p[0].clone()),
        }
    }

    fn single_node(&self, t: f64) -> Result<()> {
        if t.abs() > 1e-12 {
            return Err(Error::OutOfRange { t, lo: 0.0, hi: 0.0 });
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_trajectory_csv(out, self.times().into_iter(), &self.p, &self.gain)
    }
}

impl GainSchedule for Stage1Solution {
    fn span(&self) -> (f64, f64) {
        (0.0, self.r)
    }

    fn gain_at(&self, t: f64) -> Result<DMatrix<f64>> {
        match &self.grid {
            Some(g) => lerp(g, &self.gain, t),
            None => self.single_node(t).map(|_| self.gain[0].clone()),
        }
    }
}

fn write_trajectory_csv<W: Write>(
    mut out: W,
    times: impl Iterator<Item = f64>,
    p: &[DMatrix<f64>],
    gain: &[DMatrix<f64>],
) -> io::Result<()> {
    let (n, _) = p[0].shape();
    let (m, _) = gain[0].shape();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).flat_map(|i| (0..n).map(move |j| format!("P_{i}_{j}"))));
    header.extend((0..m).flat_map(|i| (0..n).map(move |j| format!("Psi_{i}_{j}"))));
    writeln!(out, "{}", header.join(","))?;
    for ((t, pk), gk) in times.zip(p).zip(gain) {
        let mut row = vec![fmt_f64(t)];
        row.extend((0..n).flat_map(|i| (0..n).map(move |j| fmt_f64(pk[(i, j)]))));
        row.extend((0..m).flat_map(|i| (0..n).map(move |j| fmt_f64(gk[(i, j)]))));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn solve_stage2(spec: &ProblemSpec, n_steps: usize) -> Result<RiccatiSolution> {
    solve_stage2_with(spec, &RiccatiOptions::with_steps(n_steps))
}

pub fn solve_stage2_with(spec: &ProblemSpec, opts: &RiccatiOptions) -> Result<RiccatiSolution> {
    spec.check_structure()?;
    let grid = TimeGrid::horizon(spec.horizon_end(), opts.n_steps)?;
    let (p, p_dot, gain) =
        integrate_backward(&grid, spec.g.clone(), |t| spec.stage2_at(t), stage2_constant(spec), opts.pd_threshold)?;
    Ok(RiccatiSolution {
        grid,
        p,
        p_dot,
        gain,
    })
}

/// `K(r)ᵀ P(r) K(r) + G1(r)`, symmetrised.
pub fn stitched_terminal(spec: &ProblemSpec, r: f64, p_at_r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = spec.n();
    if p_at_r.shape() != (n, n) {
        return Err(Error::dim(
            "P(r)",
            format!("{n}x{n}"),
            format!("{}x{}", p_at_r.nrows(), p_at_r.ncols()),
        ));
    }
    let k = spec.k_at(r)?;
    let mut out = k.tr_mul(&(p_at_r * &k)) + spec.g1_at(r)?;
    symmetrize(&mut out);
    Ok(out)
}

/// Number of stage-1 steps for a switch at `r`: proportional to `r / T`,
/// at least 2.
pub fn stage1_steps(n_steps: usize, r: f64, horizon: f64) -> usize {
    let scaled = n_steps as f64 * r / horizon;
    ((scaled - 1e-9).ceil().max(0.0) as usize).max(2)
}

pub fn solve_stage1(
    spec: &ProblemSpec,
    r: f64,
    p_at_r: &DMatrix<f64>,
    n_steps: usize,
) -> Result<Stage1Solution> {
    solve_stage1_with(spec, r, p_at_r, &RiccatiOptions::with_steps(n_steps))
}

pub fn solve_stage1_with(
    spec: &ProblemSpec,
    r: f64,
    p_at_r: &DMatrix<f64>,
    opts: &RiccatiOptions,
) -> Result<Stage1Solution> {
    spec.check_structure()?;
    let horizon = spec.horizon_end();
    if !(0.0..=horizon).contains(&r) {
        return Err(Error::OutOfRange {
            t: r,
            lo: 0.0,
            hi: horizon,
        });
    }
    let terminal = stitched_terminal(spec, r, p_at_r)?;
    if r == 0.0 {
        let c = spec.stage1_at(0.0)?;
        let rhs = evaluate(&terminal, &c, opts.pd_threshold).map_err(|e| Error::RiccatiBlowUp {
            node: 0,
            t: 0.0,
            min_eig: e,
            threshold: opts.pd_threshold,
        })?;
        return Ok(Stage1Solution {
            r,
            grid: None,
            p: vec![terminal],
            p_dot: vec![rhs.p_dot],
            gain: vec![rhs.gain],
        });
    }
    let grid = TimeGrid::new(0.0, r, stage1_steps(opts.n_steps, r, horizon))?;
    let (p, p_dot, gain) =
        integrate_backward(&grid, terminal, |t| spec.stage1_at(t), stage1_constant(spec), opts.pd_threshold)?;
    Ok(Stage1Solution {
        r,
        grid: Some(grid),
        p,
        p_dot,
        gain,
    })
}

/// Node gain interpolated linearly; the control law is `u = −Ψ(t) X(t)`.
pub fn feedback_gain<S: GainSchedule + ?Sized>(solution: &S, t: f64) -> Result<DMatrix<f64>> {
    solution.gain_at(t)
}

/// Optimal cost `½ ⟨P1(0) x1, x1⟩`.
pub fn value_at_zero(stage1: &Stage1Solution, x1: &[f64]) -> Result<f64> {
    Ok(0.5 * quadratic_form(stage1.p_initial(), x1)?)
}

pub fn quadratic_form(p: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    if p.nrows() != x.len() {
        return Err(Error::dim("state vector", p.nrows(), x.len()));
    }
    let mut acc = 0.0;
    for i in 0..x.len() {
        let mut row = 0.0;
        for j in 0..x.len() {
            row += p[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{Example43Params, Scalar1DParams};
    use crate::model::CoeffTable;
    use nalgebra::dmatrix;

    fn ex43(a: f64) -> ProblemSpec {
        Example43Params {
            a,
            g: 1.0,
            g1: 1.0,
            horizon: 1.0,
        }
        .to_spec()
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_solution() {
        let mut spec = Scalar1DParams::noisy_example().to_spec().unwrap();
        spec.q = CoeffTable::zeros(2, 2);
        spec.g = DMatrix::zeros(2, 2);
        let sol = solve_stage2(&spec, 50).unwrap();
        assert!(sol.p().iter().all(|p| p.amax() == 0.0));
        assert!(sol.gains().iter().all(|g| g.amax() == 0.0));
    }

    #[test]
    fn example43_stage2_a0() {
        let sol = solve_stage2(&ex43(0.0), 2000).unwrap();
        let p0 = &sol.p()[0];
        assert!((p0[(2, 2)] - 0.5).abs() < 1e-10);
        for i in 0..3 {
            for j in 0..3 {
                if (i, j) != (2, 2) {
                    assert_eq!(p0[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn example43_stage2_a1() {
        let sol = solve_stage2(&ex43(1.0), 2000).unwrap();
        let e2 = 1.0_f64.exp().powi(2);
        assert!((sol.p()[0][(2, 2)] - 2.0 * e2 / (e2 + 1.0)).abs() < 1e-6);
    }

    #[test]
    fn example43_stage1_half() {
        let spec = ex43(0.0);
        let s2 = solve_stage2(&spec, 2000).unwrap();
        let s1 = solve_stage1(&spec, 0.5, &s2.p_at(0.5).unwrap(), 2000).unwrap();
        let c = 3.0 * (5.0 / 3.0) / (3.0 + (5.0 / 3.0) * 0.125);
        let expected = dmatrix![c, 0.5 * c; 0.5 * c, 0.25 * c];
        assert!((s1.p_initial() - expected).amax() < 1e-6);
        assert!((value_at_zero(&s1, &[1.0, 0.0]).unwrap() - 0.5 * c).abs() < 1e-6);
    }

    #[test]
    fn stage1_zero_switch_is_stitched_terminal() {
        let spec = ex43(0.0);
        let s2 = solve_stage2(&spec, 200).unwrap();
        let p0 = s2.p_at(0.0).unwrap();
        let s1 = solve_stage1(&spec, 0.0, &p0, 200).unwrap();
        assert_eq!(s1.p().len(), 1);
        let k = spec.k_at(0.0).unwrap();
        let expected = k.transpose() * &p0 * &k + spec.g1_at(0.0).unwrap();
        assert!((s1.p_initial() - expected).amax() < 1e-15);
    }

    #[test]
    fn stage1_terminal_is_bitwise_stitched() {
        let spec = ex43(0.3);
        let s2 = solve_stage2(&spec, 400).unwrap();
        let pr = s2.p_at(0.37).unwrap();
        let s1 = solve_stage1(&spec, 0.37, &pr, 400).unwrap();
        assert_eq!(s1.terminal(), &stitched_terminal(&spec, 0.37, &pr).unwrap());
    }

    #[test]
    fn stage1_pure_quadrature() {
        let mut p = Scalar1DParams::noisy_example();
        p.a1 = 0.0;
        p.b1 = 0.0;
        p.c1 = 0.0;
        p.d1 = 0.0;
        p.q1 = 2.5;
        p.g1 = 0.0;
        let spec = p.to_spec().unwrap();
        let zero = DMatrix::zeros(2, 2);
        let s1 = solve_stage1(&spec, 1.0, &zero, 100).unwrap();
        assert!((s1.p_initial()[(0, 0)] - 2.5).abs() < 1e-13);
    }

    #[test]
    fn feedback_gain_example43_matches_p2() {
        let sol = solve_stage2(&ex43(0.0), 400).unwrap();
        for (k, t) in sol.grid().nodes().enumerate().step_by(37) {
            let gain = feedback_gain(&sol, t).unwrap();
            assert_eq!(gain.shape(), (1, 3));
            assert_eq!(gain[(0, 2)], sol.p()[k][(2, 2)]);
            assert_eq!(gain, sol.gains()[k]);
        }
        assert!(feedback_gain(&sol, 1.5).is_err());
    }

    #[test]
    fn value_at_zero_identity_weight() {
        let sol = Stage1Solution {
            r: 0.0,
            grid: None,
            p: vec![DMatrix::identity(2, 2)],
            p_dot: vec![DMatrix::zeros(2, 2)],
            gain: vec![DMatrix::zeros(1, 2)],
        };
        assert_eq!(value_at_zero(&sol, &[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(value_at_zero(&sol, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(value_at_zero(&sol, &[1.0]).is_err());
    }

    #[test]
    fn blow_up_is_reported_with_node() {
        let mut spec = Scalar1DParams::noisy_example().to_spec().unwrap();
        spec.r = CoeffTable::scalar(-1.0);
        let err = solve_stage2(&spec, 10).unwrap_err();
        assert!(matches!(err, Error::RiccatiBlowUp { node: 10, .. }), "{err:?}");
    }

    #[test]
    fn hermite_interpolation_is_exact_at_nodes() {
        let sol = solve_stage2(&ex43(1.0), 100).unwrap();
        for (k, t) in sol.grid().nodes().enumerate() {
            assert_eq!(sol.p_at(t).unwrap(), sol.p()[k]);
        }
    }

    #[test]
    fn stage1_step_count() {
        assert_eq!(stage1_steps(2000, 0.3, 1.0), 600);
        assert_eq!(stage1_steps(2000, 1.0, 1.0), 2000);
        assert_eq!(stage1_steps(2000, 1e-6, 1.0), 2);
        assert_eq!(stage1_steps(2000, 0.30001, 1.0), 601);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let sol = solve_stage2(&ex43(0.0), 4).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("t,P_0_0,"));
        assert_eq!(lines[0].split(',').count(), 1 + 9 + 3);
    }
}
