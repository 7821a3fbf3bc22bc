//! Optimal deterministic switch time: minimise `φ(r) = ⟨P1ʳ(0) x1, x1⟩`
//! over `r ∈ [0, T]`.
//!
//! `φ` may be non-convex, so the search evaluates a coarse uniform grid,
//! keeps the best bracket (ties go to the smaller `r`) and refines it by
//! golden-section search. The stage-2 solution is computed once and its
//! value at `r` feeds every stage-1 solve.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::closed_form::{f_eval, f_prime, switch_bracket, Scalar1DParams, Stage};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::report::{fmt_f64, KvDocument};
use crate::riccati::{
    quadratic_form, solve_stage1_with, solve_stage2_with, RiccatiOptions, RiccatiSolution,
    Stage1Solution,
};

pub const DEFAULT_COARSE_POINTS: usize = 65;

/// Relative tolerance of the optimality sign conditions.
pub const SIGN_TABLE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ValueCurve {
    pub r_nodes: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ValueCurve {
    /// Index of the smallest value; ties resolve to the smallest `r`.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.phi.iter().enumerate() {
            if v < self.phi[best] {
                best = i;
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "r,phi")?;
        for (r, phi) in self.r_nodes.iter().zip(&self.phi) {
            writeln!(out, "{},{}", fmt_f64(*r), fmt_f64(*phi))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Interior,
    LeftBoundary,
    RightBoundary,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Interior => "Interior",
            Classification::LeftBoundary => "LeftBoundary",
            Classification::RightBoundary => "RightBoundary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMethod {
    /// Closed-form derivative of the scalar problem.
    Scalar,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalTimeResult {
    pub r_bar: f64,
    pub phi_min: f64,
    pub classification: Classification,
    /// `dφ/dr` at `r̄` for a unit-norm `x1` (one-sided at the boundaries).
    pub sensitivity_at_opt: f64,
    pub sensitivity_method: SensitivityMethod,
    /// Scalar problems: `F1(K²P2(r̄) + G1) − K²F2(P2(r̄))` and
    /// `1 + |F1(..)| + |K²F2(..)|`.
    pub bracket_at_opt: Option<(f64, f64)>,
    pub tol_r: f64,
    pub curve: ValueCurve,
}

impl OptimalTimeResult {
    /// Whether the bracket sign matches the classification (scalar problems
    /// only): `≥ 0` at `r̄ = 0`, `= 0` inside, `≤ 0` at `r̄ = T`.
    pub fn satisfies_sign_table(&self) -> Option<bool> {
        let (bracket, scale) = self.bracket_at_opt?;
        let tol = SIGN_TABLE_TOLERANCE * scale;
        Some(match self.classification {
            Classification::Interior => bracket.abs() <= tol,
            Classification::LeftBoundary => bracket >= -tol,
            Classification::RightBoundary => bracket <= tol,
        })
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.real("r_bar", self.r_bar)
            .real("phi_min", self.phi_min)
            .text("classification", self.classification.as_str())
            .real("sensitivity_at_opt", self.sensitivity_at_opt)
            .text(
                "sensitivity_method",
                match self.sensitivity_method {
                    SensitivityMethod::Scalar => "scalar",
                    SensitivityMethod::FiniteDifference => "finite_difference",
                },
            )
            .opt_real("bracket_at_opt", self.bracket_at_opt.map(|b| b.0))
            .text(
                "sign_table",
                match self.satisfies_sign_table() {
                    Some(true) => "holds",
                    Some(false) => "violated",
                    None => "n/a",
                },
            )
            .real("tol_r", self.tol_r)
            .text("coarse_points", self.curve.r_nodes.len());
        doc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub coarse_points: usize,
    /// Defaults to `1e-6 T`.
    pub tol_r: Option<f64>,
    pub riccati: RiccatiOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            coarse_points: DEFAULT_COARSE_POINTS,
            tol_r: None,
            riccati: RiccatiOptions::default(),
        }
    }
}

/// A spec together with its (shared) stage-2 solution.
#[derive(Debug, Clone)]
pub struct SwitchTimeProblem<'a> {
    spec: &'a ProblemSpec,
    stage2: RiccatiSolution,
    opts: RiccatiOptions,
}

impl<'a> SwitchTimeProblem<'a> {
    pub fn new(spec: &'a ProblemSpec, opts: RiccatiOptions) -> Result<Self> {
        let stage2 = solve_stage2_with(spec, &opts)?;
        Ok(SwitchTimeProblem { spec, stage2, opts })
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    pub fn stage2(&self) -> &RiccatiSolution {
        &self.stage2
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon_end()
    }

    pub fn stage1(&self, r: f64) -> Result<Stage1Solution> {
        let run = || {
            let p_at_r = self.stage2.p_at(r)?;
            solve_stage1_with(self.spec, r, &p_at_r, &self.opts)
        };
        run().map_err(|e| e.at_switch(r))
    }

    pub fn p1_initial(&self, r: f64) -> Result<DMatrix<f64>> {
        Ok(self.stage1(r)?.p_initial().clone())
    }

    /// `⟨P1ʳ(0) x1, x1⟩`, without the factor ½ of the cost.
    pub fn phi(&self, x1: &[f64], r: f64) -> Result<f64> {
        if x1.len() != self.spec.n1 {
            return Err(Error::dim("x1", self.spec.n1, x1.len()));
        }
        quadratic_form(&self.p1_initial(r)?, x1)
    }

    pub fn value_curve(&self, x1: &[f64], r_nodes: &[f64]) -> Result<ValueCurve> {
        if let Some(w) = r_nodes.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "switch times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let phi = map_ordered(r_nodes, |&r| self.phi(x1, r))?;
        Ok(ValueCurve {
            r_nodes: r_nodes.to_vec(),
            phi,
        })
    }

    /// Central difference of `φ`, one-sided when `r ± h` leaves `[0, T]`.
    pub fn sensitivity_fd(&self, x1: &[f64], r: f64, h: f64) -> Result<f64> {
        let horizon = self.horizon();
        if !(h > 0.0 && h < horizon) {
            return Err(Error::InvalidArgument(format!("step h = {h} out of range")));
        }
        if !(0.0..=horizon).contains(&r) {
            return Err(Error::OutOfRange {
                t: r,
                lo: 0.0,
                hi: horizon,
            });
        }
        if r - h < 0.0 {
            Ok((self.phi(x1, r + h)? - self.phi(x1, r)?) / h)
        } else if r + h > horizon {
            Ok((self.phi(x1, r)? - self.phi(x1, r - h)?) / h)
        } else {
            Ok((self.phi(x1, r + h)? - self.phi(x1, r - h)?) / (2.0 * h))
        }
    }

    /// `d/dr P1ʳ(0)` for scalar problems from the closed-form sensitivity,
    /// valid on the closed interval (one-sided at the ends).
    fn scalar_sensitivity(&self, params: &Scalar1DParams, r: f64) -> Result<f64> {
        let run = || {
            let p2 = self.stage2.p_at(r)?[(1, 1)];
            let bracket = switch_bracket(p2, params)?;
            let stage1 = self.stage1(r)?;
            let times = stage1.times();
            let mut integral = 0.0;
            for (w, p) in times.windows(2).zip(stage1.p().windows(2)) {
                let f0 = f_prime(Stage::One, p[0][(0, 0)], params)?;
                let f1 = f_prime(Stage::One, p[1][(0, 0)], params)?;
                integral += 0.5 * (w[1] - w[0]) * (f0 + f1);
            }
            Ok(integral.exp() * bracket)
        };
        run().map_err(|e: Error| e.at_switch(r))
    }

    fn bracket_with_scale(&self, params: &Scalar1DParams, r: f64) -> Result<(f64, f64)> {
        let p2 = self.stage2.p_at(r)?[(1, 1)];
        let k2 = params.k * params.k;
        let lhs = f_eval(Stage::One, k2 * p2 + params.g1, params)?;
        let rhs = k2 * f_eval(Stage::Two, p2, params)?;
        Ok((lhs - rhs, 1.0 + lhs.abs() + rhs.abs()))
    }

    pub fn find_optimal_time(
        &self,
        x1: &[f64],
        coarse_points: usize,
        tol_r: f64,
    ) -> Result<OptimalTimeResult> {
        if x1.len() != self.spec.n1 {
            return Err(Error::dim("x1", self.spec.n1, x1.len()));
        }
        let norm2: f64 = x1.iter().map(|v| v * v).sum();
        if !(norm2 > 0.0) {
            return Err(Error::InvalidArgument("x1 must be nonzero".into()));
        }
        if coarse_points < 2 {
            return Err(Error::InvalidArgument("need at least 2 coarse points".into()));
        }
        if !(tol_r > 0.0) {
            return Err(Error::InvalidArgument(format!("tol_r = {tol_r} must be positive")));
        }
        let horizon = self.horizon();
        // argmin is invariant under scaling of x1; search along the unit direction
        let norm = norm2.sqrt();
        let dir: Vec<f64> = x1.iter().map(|v| v / norm).collect();
        let phi = |r: f64| self.phi(&dir, r);

        let last = coarse_points - 1;
        let r_nodes: Vec<f64> = (0..coarse_points)
            .map(|i| {
                if i == last {
                    horizon
                } else {
                    horizon * i as f64 / last as f64
                }
            })
            .collect();
        let unit_curve = self.value_curve(&dir, &r_nodes)?;
        let i_best = unit_curve.argmin();
        let mut best = (r_nodes[i_best], unit_curve.phi[i_best]);

        let lo = r_nodes[i_best.saturating_sub(1)];
        let hi = r_nodes[(i_best + 1).min(last)];
        let mut consider = |r: f64, v: f64| {
            if v < best.1 || (v == best.1 && r < best.0) {
                best = (r, v);
            }
        };
        golden_section(&phi, lo, hi, tol_r, &mut consider)?;
        let (r_bar, unit_min) = best;

        let classification = if r_bar < tol_r {
            Classification::LeftBoundary
        } else if r_bar > horizon - tol_r {
            Classification::RightBoundary
        } else {
            Classification::Interior
        };

        let scalar = Scalar1DParams::from_spec(self.spec);
        let (sensitivity_at_opt, sensitivity_method, bracket_at_opt) = match &scalar {
            Some(params) => (
                // unit direction in one dimension: dφ/dr = d/dr P1ʳ(0)
                self.scalar_sensitivity(params, r_bar)?,
                SensitivityMethod::Scalar,
                Some(self.bracket_with_scale(params, r_bar)?),
            ),
            None => (
                self.sensitivity_fd(&dir, r_bar, 1e-4 * horizon)?,
                SensitivityMethod::FiniteDifference,
                None,
            ),
        };

        let curve = ValueCurve {
            r_nodes,
            phi: unit_curve.phi.iter().map(|v| v * norm2).collect(),
        };
        Ok(OptimalTimeResult {
            r_bar,
            phi_min: unit_min * norm2,
            classification,
            sensitivity_at_opt,
            sensitivity_method,
            bracket_at_opt,
            tol_r,
            curve,
        })
    }
}

/// Golden-section search on `[lo, hi]` down to width `tol`; every
/// evaluation is reported to `visit`. Ties move towards the left end.
fn golden_section<F, V>(f: &F, mut lo: f64, mut hi: f64, tol: f64, visit: &mut V) -> Result<()>
where
    F: Fn(f64) -> Result<f64>,
    V: FnMut(f64, f64),
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    if !(hi - lo > tol) {
        return Ok(());
    }
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    visit(c, fc);
    visit(d, fd);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c)?;
            visit(c, fc);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d)?;
            visit(d, fd);
        }
    }
    Ok(())
}

/// Evaluate `f` over `items` (concurrently when enabled) and return the
/// results in input order; the first error by position wins.
pub(crate) fn map_ordered<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let results: Vec<Result<U>> = items.par_iter().map(&f).collect();
        results.into_iter().collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

pub fn value_curve(
    spec: &ProblemSpec,
    x1: &[f64],
    r_nodes: &[f64],
    n_steps: usize,
) -> Result<ValueCurve> {
    SwitchTimeProblem::new(spec, RiccatiOptions::with_steps(n_steps))?.value_curve(x1, r_nodes)
}

pub fn find_optimal_time(
    spec: &ProblemSpec,
    x1: &[f64],
    opts: &SearchOptions,
) -> Result<OptimalTimeResult> {
    let problem = SwitchTimeProblem::new(spec, opts.riccati)?;
    let tol_r = opts.tol_r.unwrap_or(1e-6 * spec.horizon_end());
    problem.find_optimal_time(x1, opts.coarse_points, tol_r)
}

/// `Πʳ(0) = exp(∫₀ʳ F1'(P1ʳ(s)) ds) · [F1(K²P2(r) + G1) − K²F2(P2(r))]`
/// for `0 < r < T`, with the integral by the trapezoid rule on the stage-1
/// grid.
pub fn sensitivity_scalar(params: &Scalar1DParams, r: f64, stage2: &RiccatiSolution) -> Result<f64> {
    let horizon = params.horizon;
    if !(r > 0.0 && r < horizon) {
        return Err(Error::Domain(format!(
            "sensitivity needs 0 < r < T, got r = {r}"
        )));
    }
    let spec = params.to_spec()?;
    let problem = SwitchTimeProblem {
        spec: &spec,
        stage2: stage2.clone(),
        opts: RiccatiOptions::with_steps(stage2.grid().n_steps()),
    };
    problem.scalar_sensitivity(params, r)
}

pub fn sensitivity_fd(
    spec: &ProblemSpec,
    x1: &[f64],
    r: f64,
    h: Option<f64>,
    n_steps: usize,
) -> Result<f64> {
    let h = h.unwrap_or(1e-4 * spec.horizon_end());
    SwitchTimeProblem::new(spec, RiccatiOptions::with_steps(n_steps))?.sensitivity_fd(x1, r, h)
}
