//! Analytic solutions for two families of problems:
//!
//! * the scalar constant-coefficient system in which the stage-1 state is
//!   frozen after the switch (`n1 = n2 = m = 1`), and
//! * the double-integrator example with `n1 = 2`, `n2 = 1`, whose stage-1
//!   Riccati equation is solved through a nilpotent Hamiltonian exponential.
//!
//! These serve as oracles for the numerical solvers.

use nalgebra::{dmatrix, DMatrix, Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_stopped_system, CoeffTable, ProblemSpec, Stage1Data, StoppedBlockData, TimeGrid};
use crate::report::KvDocument;
use crate::riccati::{solve_stage2, DEFAULT_STEPS};

/// Relative tolerance for the strict inequalities of the certificate.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-9;

/// Constant scalar data of the frozen-first-component system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scalar1DParams {
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub d1: f64,
    pub q1: f64,
    pub r1: f64,
    pub g1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    pub d2: f64,
    pub q2: f64,
    pub r2: f64,
    pub g2: f64,
    pub k: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

struct StageParams {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    q: f64,
    r: f64,
}

impl Scalar1DParams {
    /// Scenario with an interior optimal switch time.
    pub fn certificate_scenario() -> Self {
        Scalar1DParams {
            a1: 1.0,
            b1: 2.0,
            c1: 0.0,
            d1: 0.0,
            q1: 1.0,
            r1: 1.0,
            g1: 0.0,
            a2: 1.0,
            b2: 1.0,
            c2: 0.0,
            d2: 0.0,
            q2: 0.0,
            r2: 1.0,
            g2: 0.5,
            k: 1.0,
            horizon: 1.0,
        }
    }

    /// Both stages driven by multiplicative noise.
    pub fn noisy_example() -> Self {
        Scalar1DParams {
            a1: 0.0,
            b1: 1.0,
            c1: 0.3,
            d1: 0.0,
            q1: 1.0,
            r1: 1.0,
            g1: 0.0,
            a2: 0.0,
            b2: 1.0,
            c2: 0.2,
            d2: 0.0,
            q2: 1.0,
            r2: 1.0,
            g2: 1.0,
            k: 1.0,
            horizon: 1.0,
        }
    }

    /// Stage 1 is a pure running cost `x1²` and stage 2 costs nothing, so
    /// the switch value grows linearly in `r`.
    pub fn pure_quadrature() -> Self {
        Scalar1DParams {
            a1: 0.0,
            b1: 0.0,
            c1: 0.0,
            d1: 0.0,
            q1: 1.0,
            r1: 1.0,
            g1: 0.0,
            a2: 0.0,
            b2: 1.0,
            c2: 0.0,
            d2: 0.0,
            q2: 0.0,
            r2: 1.0,
            g2: 0.0,
            k: 1.0,
            horizon: 1.0,
        }
    }

    /// Stage 2 copies stage 1, `K = 1`, `G1 = 0`: the switch time does not
    /// matter.
    pub fn identical_stages() -> Self {
        Scalar1DParams {
            a1: 0.5,
            b1: 1.0,
            c1: 0.2,
            d1: 0.1,
            q1: 1.0,
            r1: 1.0,
            g1: 0.0,
            a2: 0.5,
            b2: 1.0,
            c2: 0.2,
            d2: 0.1,
            q2: 1.0,
            r2: 1.0,
            g2: 0.7,
            k: 1.0,
            horizon: 1.0,
        }
    }

    fn stage(&self, stage: Stage) -> StageParams {
        match stage {
            Stage::One => StageParams {
                a: self.a1,
                b: self.b1,
                c: self.c1,
                d: self.d1,
                q: self.q1,
                r: self.r1,
            },
            Stage::Two => StageParams {
                a: self.a2,
                b: self.b2,
                c: self.c2,
                d: self.d2,
                q: self.q2,
                r: self.r2,
            },
        }
    }

    /// Sign and nonzero conditions `R1, R2 > 0`, `Q1, Q2, G1, G2 ≥ 0`,
    /// `K ≠ 0`, `T > 0`.
    pub fn check(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.r1 > 0.0 && self.r2 > 0.0) {
            return fail("R1 and R2 must be positive");
        }
        if !(self.q1 >= 0.0 && self.q2 >= 0.0 && self.g1 >= 0.0 && self.g2 >= 0.0) {
            return fail("Q1, Q2, G1, G2 must be nonnegative");
        }
        if self.k == 0.0 || !self.k.is_finite() {
            return fail("K must be nonzero");
        }
        if !(self.horizon > 0.0) {
            return fail("horizon must be positive");
        }
        Ok(())
    }

    /// The frozen-block system on `[0, horizon]` with `K(·) = (1; K)`.
    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let s = CoeffTable::scalar;
        build_stopped_system(
            Stage1Data {
                a1: s(self.a1),
                b1: s(self.b1),
                c1: s(self.c1),
                d1: s(self.d1),
                q1: s(self.q1),
                r1: s(self.r1),
                g1: s(self.g1),
            },
            StoppedBlockData {
                a2: s(self.a2),
                b2: s(self.b2),
                c2: s(self.c2),
                d2: s(self.d2),
                q2: s(self.q2),
                r2: s(self.r2),
                g2: dmatrix![self.g2],
            },
            s(self.k),
            None,
            TimeGrid::horizon(self.horizon, DEFAULT_STEPS)?,
            self.r1.min(self.r2),
        )
    }

    /// Recognise a spec with the frozen scalar block structure and constant
    /// coefficients.
    pub fn from_spec(spec: &ProblemSpec) -> Option<Self> {
        if (spec.n1, spec.n2, spec.m) != (1, 1, 1) {
            return None;
        }
        let scalar = |t: &CoeffTable| t.constant_value().map(|m| m[(0, 0)]);
        let lower_diag = |t: &CoeffTable| {
            let m = t.constant_value()?;
            (m[(0, 0)] == 0.0 && m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0).then(|| m[(1, 1)])
        };
        let lower_col = |t: &CoeffTable| {
            let m = t.constant_value()?;
            (m[(0, 0)] == 0.0).then(|| m[(1, 0)])
        };
        let g = &spec.g;
        if g[(0, 0)] != 0.0 || g[(0, 1)] != 0.0 || g[(1, 0)] != 0.0 {
            return None;
        }
        let k = spec.k.constant_value()?;
        if k[(0, 0)] != 1.0 {
            return None;
        }
        Some(Scalar1DParams {
            a1: scalar(&spec.a1)?,
            b1: scalar(&spec.b1)?,
            c1: scalar(&spec.c1)?,
            d1: scalar(&spec.d1)?,
            q1: scalar(&spec.q1)?,
            r1: scalar(&spec.r1)?,
            g1: scalar(&spec.g1)?,
            a2: lower_diag(&spec.a)?,
            b2: lower_col(&spec.b)?,
            c2: lower_diag(&spec.c)?,
            d2: lower_col(&spec.d)?,
            q2: lower_diag(&spec.q)?,
            r2: scalar(&spec.r)?,
            g2: g[(1, 1)],
            k: k[(1, 0)],
            horizon: spec.horizon_end(),
        })
    }

    /// `D2 = 0`, `R2 = 1`, `B2 ≠ 0`: the stage-2 equation has the
    /// `λ±` closed form.
    pub fn has_lambda_form(&self) -> bool {
        self.d2 == 0.0 && self.r2 == 1.0 && self.b2 != 0.0
    }

    /// `D2 = G1 = 0`, `R2 = K = 1`, `B2 ≠ 0`.
    pub fn is_theta_case(&self) -> bool {
        self.has_lambda_form() && self.g1 == 0.0 && self.k == 1.0
    }
}

/// `F_i(P) = (2A_i + C_i²)P + Q_i − (B_i + C_i D_i)² P² / (R_i + D_i² P)`.
pub fn f_eval(stage: Stage, p: f64, params: &Scalar1DParams) -> Result<f64> {
    let s = params.stage(stage);
    let den = s.r + s.d * s.d * p;
    if !(den > 0.0) {
        return Err(Error::Domain(format!(
            "R + D²P = {den} must be positive (P = {p})"
        )));
    }
    let beta = s.b + s.c * s.d;
    Ok((2.0 * s.a + s.c * s.c) * p + s.q - beta * beta * p * p / den)
}

/// `F_i'(P) = (2A_i + C_i²) − (B_i + C_i D_i)² P (2R_i + D_i² P) / (R_i + D_i² P)²`.
pub fn f_prime(stage: Stage, p: f64, params: &Scalar1DParams) -> Result<f64> {
    let s = params.stage(stage);
    let d2 = s.d * s.d;
    let den = s.r + d2 * p;
    if !(den > 0.0) {
        return Err(Error::Domain(format!(
            "R + D²P = {den} must be positive (P = {p})"
        )));
    }
    let beta = s.b + s.c * s.d;
    Ok((2.0 * s.a + s.c * s.c) - beta * beta * p * (2.0 * s.r + d2 * p) / (den * den))
}

/// `F1(K²P + G1) − K² F2(P)`: the sign of the switch-time sensitivity.
pub fn switch_bracket(p2: f64, params: &Scalar1DParams) -> Result<f64> {
    let (lhs, rhs) = bracket_terms(p2, params)?;
    Ok(lhs - rhs)
}

fn bracket_terms(p2: f64, params: &Scalar1DParams) -> Result<(f64, f64)> {
    let k2 = params.k * params.k;
    Ok((
        f_eval(Stage::One, k2 * p2 + params.g1, params)?,
        k2 * f_eval(Stage::Two, p2, params)?,
    ))
}

/// Roots `λ+ ≥ λ−` of `B2² P² − (2A2 + C2²) P − Q2`.
pub fn lambda_pm(params: &Scalar1DParams) -> Result<(f64, f64)> {
    let b2 = params.b2 * params.b2;
    if b2 == 0.0 {
        return Err(Error::Domain("B2 must be nonzero".into()));
    }
    let alpha = 2.0 * params.a2 + params.c2 * params.c2;
    let disc = (alpha * alpha + 4.0 * b2 * params.q2).sqrt();
    Ok(((alpha + disc) / (2.0 * b2), (alpha - disc) / (2.0 * b2)))
}

/// Ordering of `P2(0)` relative to `G2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P2Ordering {
    /// `G2 ∈ (λ−, λ+)` and `P2(0) > G2`.
    Above,
    /// `G2 ∉ [λ−, λ+]` and `P2(0) < G2`.
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Root {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum P2Closed {
    Value { value: f64, ordering: P2Ordering },
    /// `G2` equals a root, so `P2 ≡ G2` on the whole horizon.
    Degenerate { constant: f64, root: Root },
}

impl P2Closed {
    pub fn value(&self) -> f64 {
        match *self {
            P2Closed::Value { value, .. } => value,
            P2Closed::Degenerate { constant, .. } => constant,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, P2Closed::Degenerate { .. })
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= CERTIFICATE_TOLERANCE * (1.0 + a.abs().max(b.abs()))
}

/// Closed-form stage-2 solution for `D2 = 0`, `R2 = 1`, `B2 ≠ 0`.
pub fn p2_closed_general(t: f64, params: &Scalar1DParams) -> Result<P2Closed> {
    if !params.has_lambda_form() {
        return Err(Error::Domain(
            "closed form requires D2 = 0, R2 = 1, B2 ≠ 0".into(),
        ));
    }
    let horizon = params.horizon;
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::OutOfRange {
            t,
            lo: 0.0,
            hi: horizon,
        });
    }
    let (lp, lm) = lambda_pm(params)?;
    let g2 = params.g2;
    if near(g2, lp) {
        return Ok(P2Closed::Degenerate {
            constant: g2,
            root: Root::Plus,
        });
    }
    if near(g2, lm) {
        return Ok(P2Closed::Degenerate {
            constant: g2,
            root: Root::Minus,
        });
    }
    let ordering = if g2 > lm && g2 < lp {
        P2Ordering::Above
    } else {
        P2Ordering::Below
    };
    let b2 = params.b2 * params.b2;
    let tau = horizon - t;
    let value = if lp == lm {
        // double root: (P − λ)' = B2² (P − λ)²
        let y = g2 - lp;
        lp + y / (1.0 + b2 * y * tau)
    } else {
        // divide through by exp(B2²(λ+ − λ−)(T − t)) ≥ 1
        let inv = (-b2 * (lp - lm) * tau).exp();
        (lp * (g2 - lm) - lm * (g2 - lp) * inv) / ((g2 - lm) - (g2 - lp) * inv)
    };
    Ok(P2Closed::Value { value, ordering })
}

/// Data of the double-integrator example: stage 1 is `x1' = x2`,
/// `x2' = u`, stage 2 is `y' = a y + u`, with terminal weights `g1` on the
/// position at the switch and `g` on `y(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example43Params {
    pub a: f64,
    pub g: f64,
    pub g1: f64,
    pub horizon: f64,
}

impl Example43Params {
    pub fn check(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g1 > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidArgument(
                "example requires g > 0, g1 > 0, T > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn to_spec(&self) -> Result<ProblemSpec> {
        self.check()?;
        build_stopped_system(
            Stage1Data {
                a1: CoeffTable::constant(dmatrix![0.0, 1.0; 0.0, 0.0]),
                b1: CoeffTable::constant(dmatrix![0.0; 1.0]),
                c1: CoeffTable::zeros(2, 2),
                d1: CoeffTable::zeros(2, 1),
                q1: CoeffTable::zeros(2, 2),
                r1: CoeffTable::scalar(1.0),
                g1: CoeffTable::constant(dmatrix![self.g1, 0.0; 0.0, 0.0]),
            },
            StoppedBlockData {
                a2: CoeffTable::scalar(self.a),
                b2: CoeffTable::scalar(1.0),
                c2: CoeffTable::scalar(0.0),
                d2: CoeffTable::scalar(0.0),
                q2: CoeffTable::scalar(0.0),
                r2: CoeffTable::scalar(1.0),
                g2: dmatrix![self.g],
            },
            CoeffTable::constant(dmatrix![1.0, 0.0]),
            None,
            TimeGrid::horizon(self.horizon, DEFAULT_STEPS)?,
            1.0,
        )
    }
}

/// Stage-2 solution of the example, `P2' + 2a P2 − P2² = 0`, `P2(T) = g`.
pub fn p2_closed_ex43(t: f64, params: &Example43Params, r: f64) -> Result<f64> {
    let horizon = params.horizon;
    if !(r >= 0.0 && r <= t && t <= horizon) {
        return Err(Error::Domain(format!(
            "need 0 ≤ r ≤ t ≤ T, got r = {r}, t = {t}, T = {horizon}"
        )));
    }
    Ok(ex43_p2(t, params))
}

fn ex43_p2(t: f64, params: &Example43Params) -> f64 {
    let (a, g) = (params.a, params.g);
    let tau = params.horizon - t;
    if a == 0.0 {
        g / (1.0 + g * tau)
    } else if a > 0.0 {
        // 2ag e / (g(e − 1) + 2a) with e = exp(2aτ), rescaled by 1/e
        let inv = (-2.0 * a * tau).exp();
        2.0 * a * g / (g * (1.0 - inv) + 2.0 * a * inv)
    } else {
        let e = (2.0 * a * tau).exp();
        2.0 * a * g * e / (g * (e - 1.0) + 2.0 * a)
    }
}

/// Hamiltonian of the shifted stage-1 equation; nilpotent of order 4.
pub fn ex43_hamiltonian(gbar: f64) -> Matrix4<f64> {
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, -1.0, //
        0.0, -gbar, 0.0, 0.0, //
        -gbar, 0.0, -1.0, 0.0,
    )
}

/// `exp(𝒜 s)` from the terminating series `I + s𝒜 + s²𝒜²/2 + s³𝒜³/6`.
pub fn ex43_exponential(gbar: f64, s: f64) -> Matrix4<f64> {
    let h = ex43_hamiltonian(gbar);
    let h2 = h * h;
    let h3 = h2 * h;
    Matrix4::identity() + h * s + h2 * (s * s / 2.0) + h3 * (s * s * s / 6.0)
}

fn ex43_check(t: f64, r: f64, params: &Example43Params) -> Result<()> {
    if !(t >= 0.0 && t <= r && r <= params.horizon) {
        return Err(Error::Domain(format!(
            "need 0 ≤ t ≤ r ≤ T, got t = {t}, r = {r}, T = {}",
            params.horizon
        )));
    }
    Ok(())
}

/// `ḡ1 = g1 + P2(r)`.
pub fn ex43_gbar(r: f64, params: &Example43Params) -> f64 {
    params.g1 + ex43_p2(r, params)
}

/// Stage-1 solution `P1(t) = 3ḡ1/(3 + ḡ1 s³) [[1, s], [s, s²]]`, `s = r − t`.
pub fn ex43_p1(t: f64, r: f64, params: &Example43Params) -> Result<Matrix2<f64>> {
    ex43_check(t, r, params)?;
    let gbar = ex43_gbar(r, params);
    let s = r - t;
    let c = 3.0 * gbar / (3.0 + gbar * s * s * s);
    Ok(Matrix2::new(1.0, s, s, s * s) * c)
}

/// The same matrix computed as `Ḡ1 − Φ22⁻¹ Φ21` from the blocks of the
/// Hamiltonian exponential.
pub fn ex43_p1_via_exponential(t: f64, r: f64, params: &Example43Params) -> Result<Matrix2<f64>> {
    ex43_check(t, r, params)?;
    let gbar = ex43_gbar(r, params);
    let e = ex43_exponential(gbar, r - t);
    let phi21: Matrix2<f64> = e.fixed_view::<2, 2>(2, 0).into_owned();
    let phi22: Matrix2<f64> = e.fixed_view::<2, 2>(2, 2).into_owned();
    let inv = phi22
        .try_inverse()
        .ok_or_else(|| Error::Domain("Φ22 is singular".into()))?;
    let shifted = -(inv * phi21);
    Ok(shifted + Matrix2::new(gbar, 0.0, 0.0, 0.0))
}

/// `det Φ22` of the example, `1 + ḡ1 s³/3`.
pub fn ex43_phi22_det(gbar: f64, s: f64) -> f64 {
    let e = ex43_exponential(gbar, s);
    e.fixed_view::<2, 2>(2, 2).determinant()
}

/// `V(r, x1) = ⟨P1(0) x1, x1⟩ = 3ḡ1/(3 + ḡ1 r³) (x1¹ + r x1²)²`, without the
/// factor ½ carried by the cost.
pub fn ex43_value(r: f64, x1: [f64; 2], params: &Example43Params) -> Result<f64> {
    ex43_check(0.0, r, params)?;
    let gbar = ex43_gbar(r, params);
    let lin = x1[0] + r * x1[1];
    Ok(3.0 * gbar / (3.0 + gbar * r * r * r) * lin * lin)
}

/// Cubic `c0 + c1 P + c2 P² + c3 P³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cubic {
    pub coeffs: [f64; 4],
}

impl Cubic {
    pub fn eval(&self, p: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * p + c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PPlus {
    Root(f64),
    Unavailable(String),
}

impl PPlus {
    pub fn root(&self) -> Option<f64> {
        match self {
            PPlus::Root(v) => Some(*v),
            PPlus::Unavailable(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaAnalysis {
    /// `F1(P) − F2(P) = Θ(P) / (R1 + D1² P)` holds when this is set.
    pub special_case: bool,
    pub theta: Cubic,
    pub p_plus: PPlus,
}

/// The cubic `Θ` whose sign is that of the bracket when
/// `D2 = G1 = 0`, `R2 = K = 1`, and its positive root `P+` when further
/// `D1 = 0`, `R1 = 1`, `Q2 = 0`, `B2² < B1²`.
pub fn theta_and_pplus(params: &Scalar1DParams) -> ThetaAnalysis {
    let p = params;
    let alpha = 2.0 * (p.a1 - p.a2) + p.c1 * p.c1 - p.c2 * p.c2;
    let dq = p.q1 - p.q2;
    let d1s = p.d1 * p.d1;
    let b2s = p.b2 * p.b2;
    let beta1 = p.b1 + p.c1 * p.d1;
    let theta = Cubic {
        coeffs: [
            dq * p.r1,
            alpha * p.r1 + dq * d1s,
            alpha * d1s + p.r1 * b2s - beta1 * beta1,
            d1s * b2s,
        ],
    };
    let special_case = p.is_theta_case();
    let p_plus = if !special_case {
        PPlus::Unavailable("requires D2 = G1 = 0, R2 = K = 1, B2 ≠ 0".into())
    } else if p.d1 != 0.0 || p.r1 != 1.0 || p.q2 != 0.0 {
        PPlus::Unavailable("requires D1 = 0, R1 = 1, Q2 = 0".into())
    } else if b2s >= p.b1 * p.b1 {
        PPlus::Unavailable("requires B2² < B1²".into())
    } else {
        let gap = p.b1 * p.b1 - b2s;
        let lin = (2.0 * p.a1 + p.c1 * p.c1) - (2.0 * p.a2 + p.c2 * p.c2);
        let root = (lin + (lin * lin + 4.0 * gap * p.q1).sqrt()) / (2.0 * gap);
        if root > 0.0 {
            PPlus::Root(root)
        } else {
            PPlus::Unavailable("Θ has no positive root".into())
        }
    };
    ThetaAnalysis {
        special_case,
        theta,
        p_plus,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P2Source {
    ClosedForm,
    Numeric,
    Degenerate,
}

impl P2Source {
    fn as_str(self) -> &'static str {
        match self {
            P2Source::ClosedForm => "closed_form",
            P2Source::Numeric => "numeric",
            P2Source::Degenerate => "degenerate_constant",
        }
    }
}

/// Sign of a quantity compared against zero with relative tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
    Marginal,
}

fn sign_of(value: f64, scale: f64) -> Sign {
    let tol = CERTIFICATE_TOLERANCE * (1.0 + scale);
    if value > tol {
        Sign::Positive
    } else if value < -tol {
        Sign::Negative
    } else {
        Sign::Marginal
    }
}

/// Sufficient conditions for `0 < r̄ < T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub p2_0: f64,
    pub p2_source: P2Source,
    /// `F1(K²G2 + G1) − K²F2(G2)`.
    pub bracket_at_g2: f64,
    /// `F1(K²P2(0) + G1) − K²F2(P2(0))`.
    pub bracket_at_p2_0: f64,
    pub sign_at_g2: Sign,
    pub sign_at_p2_0: Sign,
    pub implies_r_less_t: bool,
    pub implies_r_greater_0: bool,
    pub nontrivial: bool,
    /// `G2 = λ±`: `P2 ≡ G2` and the two brackets coincide.
    pub degenerate: bool,
    pub theta_g2: Option<f64>,
    pub theta_p2_0: Option<f64>,
    pub p_plus: Option<f64>,
    /// `2A2 + C2²`.
    pub growth: f64,
    /// `G2 B2²`.
    pub g2_b2_sq: f64,
    /// `2A2 + C2² > G2 B2²` and `0 < G2 < P+ < P2(0)`, when `P+` exists.
    pub chain_holds: Option<bool>,
}

impl Certificate {
    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        let sign = |s: Sign| match s {
            Sign::Positive => "positive",
            Sign::Negative => "negative",
            Sign::Marginal => "marginal",
        };
        doc.real("p2_0", self.p2_0)
            .text("p2_source", self.p2_source.as_str())
            .real("bracket_at_g2", self.bracket_at_g2)
            .text("sign_at_g2", sign(self.sign_at_g2))
            .real("bracket_at_p2_0", self.bracket_at_p2_0)
            .text("sign_at_p2_0", sign(self.sign_at_p2_0))
            .text("implies_r_less_t", self.implies_r_less_t)
            .text("implies_r_greater_0", self.implies_r_greater_0)
            .text("nontrivial", self.nontrivial)
            .text("degenerate", self.degenerate)
            .opt_real("theta_g2", self.theta_g2)
            .opt_real("theta_p2_0", self.theta_p2_0)
            .opt_real("p_plus", self.p_plus)
            .real("growth_2a2_plus_c2sq", self.growth)
            .real("g2_b2sq", self.g2_b2_sq)
            .text(
                "chain_holds",
                self.chain_holds
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "n/a".into()),
            );
        doc
    }
}

/// Evaluate the bracket-sign conditions at `G2` and at `P2(0)`.
pub fn nontrivial_certificate(params: &Scalar1DParams) -> Result<Certificate> {
    let (p2_0, p2_source) = if params.has_lambda_form() {
        match p2_closed_general(0.0, params)? {
            P2Closed::Value { value, .. } => (value, P2Source::ClosedForm),
            P2Closed::Degenerate { constant, .. } => (constant, P2Source::Degenerate),
        }
    } else {
        let sol = solve_stage2(&params.to_spec()?, DEFAULT_STEPS)?;
        (sol.p()[0][(1, 1)], P2Source::Numeric)
    };
    let (lg, rg) = bracket_terms(params.g2, params)?;
    let (lp, rp) = bracket_terms(p2_0, params)?;
    let bracket_at_g2 = lg - rg;
    let bracket_at_p2_0 = lp - rp;
    let sign_at_g2 = sign_of(bracket_at_g2, lg.abs() + rg.abs());
    let sign_at_p2_0 = sign_of(bracket_at_p2_0, lp.abs() + rp.abs());
    let degenerate = p2_source == P2Source::Degenerate;
    let implies_r_less_t = !degenerate && sign_at_g2 == Sign::Positive;
    let implies_r_greater_0 = !degenerate && sign_at_p2_0 == Sign::Negative;

    let theta = theta_and_pplus(params);
    let (theta_g2, theta_p2_0) = if theta.special_case {
        (Some(theta.theta.eval(params.g2)), Some(theta.theta.eval(p2_0)))
    } else {
        (None, None)
    };
    let p_plus = theta.p_plus.root();
    let growth = 2.0 * params.a2 + params.c2 * params.c2;
    let g2_b2_sq = params.g2 * params.b2 * params.b2;
    let chain_holds = p_plus.map(|pp| {
        growth > g2_b2_sq && 0.0 < params.g2 && params.g2 < pp && pp < p2_0
    });

    Ok(Certificate {
        p2_0,
        p2_source,
        bracket_at_g2,
        bracket_at_p2_0,
        sign_at_g2,
        sign_at_p2_0,
        implies_r_less_t,
        implies_r_greater_0,
        nontrivial: implies_r_less_t && implies_r_greater_0,
        degenerate,
        theta_g2,
        theta_p2_0,
        p_plus,
        growth,
        g2_b2_sq,
        chain_holds,
    })
}

/// Convert a fixed-size matrix into the dynamic form used by the solvers.
pub fn to_dmatrix(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(2, 2, m.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    const E2: f64 = 7.38905609893065;

    fn cert() -> Scalar1DParams {
        Scalar1DParams::certificate_scenario()
    }

    #[test]
    fn f_eval_cases() {
        let p = cert();
        assert_eq!(f_eval(Stage::One, 0.0, &p).unwrap(), p.q1);
        assert_eq!(f_eval(Stage::Two, 0.0, &p).unwrap(), p.q2);
        assert!((f_eval(Stage::Two, 0.5, &p).unwrap() - 0.75).abs() < 1e-15);
        let mut lin = p;
        lin.b1 = 0.0;
        lin.c1 = 0.0;
        assert_eq!(f_eval(Stage::One, 0.3, &lin).unwrap(), 2.0 * lin.a1 * 0.3 + lin.q1);
        let mut bad = p;
        bad.d1 = 1.0;
        bad.r1 = 1.0;
        assert!(f_eval(Stage::One, -2.0, &bad).is_err());
    }

    #[test]
    fn f_prime_matches_central_difference() {
        let mut p = Scalar1DParams::noisy_example();
        p.d1 = 0.4;
        p.c1 = 0.7;
        for x in [0.0, 0.3, 1.2, 4.0] {
            let h = 1e-6;
            let fd = (f_eval(Stage::One, x + h, &p).unwrap() - f_eval(Stage::One, x - h, &p).unwrap())
                / (2.0 * h);
            assert!((fd - f_prime(Stage::One, x, &p).unwrap()).abs() < 1e-7);
        }
    }

    #[test]
    fn lambda_values() {
        let p = cert();
        assert_eq!(lambda_pm(&p).unwrap(), (2.0, 0.0));
        let mut q = p;
        q.a2 = 0.0;
        q.q2 = 1.0;
        assert_eq!(lambda_pm(&q).unwrap(), (1.0, -1.0));
        q.b2 = 0.0;
        assert!(lambda_pm(&q).is_err());
    }

    #[test]
    fn lambda_identity() {
        let mut p = Scalar1DParams::noisy_example();
        p.a2 = -0.4;
        p.q2 = 2.0;
        p.b2 = 1.5;
        let (lp, lm) = lambda_pm(&p).unwrap();
        assert!(lp >= lm);
        let b2 = p.b2 * p.b2;
        let alpha = 2.0 * p.a2 + p.c2 * p.c2;
        for x in [-1.0, 0.0, 0.5, 3.0] {
            let lhs = b2 * (x - lp) * (x - lm);
            let rhs = b2 * x * x - alpha * x - p.q2;
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn p2_general_certificate_value() {
        let p = cert();
        match p2_closed_general(0.0, &p).unwrap() {
            P2Closed::Value { value, ordering } => {
                assert!((value - E2 / (0.5 * E2 + 1.5)).abs() < 1e-12);
                assert!((value - 1.42247).abs() < 1e-5);
                assert_eq!(ordering, P2Ordering::Above);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p2_closed_general(1.0, &p).unwrap().value(), 0.5);
    }

    #[test]
    fn p2_general_degenerate() {
        let mut p = cert();
        p.g2 = 2.0;
        assert_eq!(
            p2_closed_general(0.3, &p).unwrap(),
            P2Closed::Degenerate {
                constant: 2.0,
                root: Root::Plus
            }
        );
    }

    #[test]
    fn p2_general_never_crosses_roots() {
        for (a2, q2, g2) in [(1.0, 0.0, 0.5), (1.0, 0.0, 3.0), (-0.5, 1.0, 0.2), (0.0, 0.0, 0.4)] {
            let mut p = cert();
            p.a2 = a2;
            p.q2 = q2;
            p.g2 = g2;
            let (lp, lm) = lambda_pm(&p).unwrap();
            let mut prev = None;
            for i in 0..=200 {
                let t = i as f64 / 200.0;
                let v = p2_closed_general(t, &p).unwrap().value();
                assert!(v != lp && v != lm);
                if let Some(pv) = prev {
                    // monotone in t: no stationary point
                    assert!(v != pv);
                }
                prev = Some(v);
            }
        }
    }

    #[test]
    fn ex43_p2_values() {
        let p = Example43Params {
            a: 0.0,
            g: 1.0,
            g1: 1.0,
            horizon: 1.0,
        };
        assert_eq!(p2_closed_ex43(0.0, &p, 0.0).unwrap(), 0.5);
        assert_eq!(p2_closed_ex43(1.0, &p, 0.0).unwrap(), 1.0);
        let p1 = Example43Params { a: 1.0, ..p };
        assert!((p2_closed_ex43(0.0, &p1, 0.0).unwrap() - 2.0 * E2 / (E2 + 1.0)).abs() < 1e-12);
        assert_eq!(p2_closed_ex43(1.0, &p1, 0.0).unwrap(), 1.0);
        let pn = Example43Params { a: -0.8, ..p };
        assert!(p2_closed_ex43(0.2, &pn, 0.0).unwrap() > 0.0);
        assert!(p2_closed_ex43(0.2, &p, 0.5).is_err());
    }

    #[test]
    fn ex43_p2_solves_riccati() {
        for a in [-1.3, 0.0, 0.7] {
            let p = Example43Params {
                a,
                g: 0.8,
                g1: 1.0,
                horizon: 1.0,
            };
            let h = 1e-6;
            for i in 1..100 {
                let t = i as f64 / 100.0;
                let v = ex43_p2(t, &p);
                let d = (ex43_p2(t + h, &p) - ex43_p2(t - h, &p)) / (2.0 * h);
                assert!((d + 2.0 * a * v - v * v).abs() < 1e-8, "a = {a}, t = {t}");
            }
        }
    }

    #[test]
    fn theta_certificate() {
        let th = theta_and_pplus(&cert());
        assert!(th.special_case);
        assert_eq!(th.theta.coeffs, [1.0, 0.0, -3.0, 0.0]);
        assert!((th.p_plus.root().unwrap() - 1.0 / 3.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(th.theta.eval(0.5), 0.25);
    }

    #[test]
    fn theta_identical_and_constant_term() {
        let mut p = cert();
        p.b1 = p.b2;
        p.q1 = p.q2;
        let th = theta_and_pplus(&p);
        assert_eq!(th.theta.coeffs, [0.0; 4]);
        let q = Scalar1DParams::noisy_example();
        let tq = theta_and_pplus(&q);
        assert_eq!(tq.theta.eval(0.0), (q.q1 - q.q2) * q.r1);
        assert!(tq.p_plus.root().is_none());
    }

    #[test]
    fn theta_identity_with_bracket() {
        let mut p = cert();
        p.d1 = 0.6;
        p.c1 = 0.3;
        p.r1 = 1.7;
        p.q2 = 0.4;
        let th = theta_and_pplus(&p);
        assert!(th.special_case);
        for i in 0..50 {
            let x = i as f64 * 0.1;
            let diff = f_eval(Stage::One, x, &p).unwrap() - f_eval(Stage::Two, x, &p).unwrap();
            let via = th.theta.eval(x) / (p.r1 + p.d1 * p.d1 * x);
            assert!((diff - via).abs() < 1e-12 * (1.0 + diff.abs()));
        }
    }

    #[test]
    fn ex43_p1_terminal_and_half() {
        let p = Example43Params {
            a: 0.0,
            g: 1.0,
            g1: 1.0,
            horizon: 1.0,
        };
        let gbar = ex43_gbar(0.5, &p);
        assert!((gbar - 5.0 / 3.0).abs() < 1e-15);
        let at_r = ex43_p1(0.5, 0.5, &p).unwrap();
        assert!((at_r - Matrix2::new(gbar, 0.0, 0.0, 0.0)).amax() < 1e-15);
        let m = ex43_p1(0.0, 0.5, &p).unwrap();
        let c = 1.558_441_558_441_558_4;
        assert!((m - Matrix2::new(1.0, 0.5, 0.5, 0.25) * c).amax() < 1e-12);
        let eig = m.symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        assert!(lo.abs() < 1e-12 && hi > 0.0);
        assert!(ex43_p1(0.6, 0.5, &p).is_err());
    }

    #[test]
    fn ex43_two_paths_agree() {
        for a in [-1.0, 0.0, 1.0] {
            let p = Example43Params {
                a,
                g: 1.3,
                g1: 0.7,
                horizon: 1.0,
            };
            for ri in 0..=10 {
                let r = ri as f64 / 10.0;
                for ti in 0..=ri {
                    let t = ti as f64 / 10.0;
                    let x = ex43_p1(t, r, &p).unwrap();
                    let y = ex43_p1_via_exponential(t, r, &p).unwrap();
                    assert!((x - y).amax() < 1e-12, "a={a} r={r} t={t}");
                }
            }
        }
    }

    #[test]
    fn hamiltonian_is_nilpotent() {
        for gbar in [0.1, 1.0, 5.0 / 3.0, 17.0] {
            let h = ex43_hamiltonian(gbar);
            let h2 = h * h;
            assert_eq!(h2 * h2, Matrix4::zeros());
            for s in [0.0, 0.3, 1.0] {
                let det = ex43_phi22_det(gbar, s);
                assert!((det - (1.0 + gbar * s * s * s / 3.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ex43_value_cases() {
        let p = Example43Params {
            a: 0.0,
            g: 1.0,
            g1: 1.0,
            horizon: 1.0,
        };
        assert_eq!(ex43_value(0.4, [0.0, 0.0], &p).unwrap(), 0.0);
        assert!((ex43_value(1.0, [1.0, 0.0], &p).unwrap() - 1.2).abs() < 1e-15);
        for c in [-2.0, 0.5, 3.0] {
            let r = 0.7;
            assert!(ex43_value(r, [-r * c, c], &p).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn certificate_scenario_is_nontrivial() {
        let c = nontrivial_certificate(&cert()).unwrap();
        assert!((c.theta_g2.unwrap() - 0.25).abs() < 1e-15);
        assert!((c.theta_p2_0.unwrap() + 5.070_255_776_313_081).abs() < 1e-9);
        assert!((c.p2_0 - 1.422_469_188_455_187_7).abs() < 1e-12);
        assert!((c.p_plus.unwrap() - 0.577_350_269_189_625_8).abs() < 1e-15);
        assert_eq!(c.growth, 2.0);
        assert_eq!(c.g2_b2_sq, 0.5);
        assert_eq!(c.chain_holds, Some(true));
        assert!(c.implies_r_less_t && c.implies_r_greater_0 && c.nontrivial);
    }

    #[test]
    fn certificate_identical_stages_is_trivial() {
        let c = nontrivial_certificate(&Scalar1DParams::identical_stages()).unwrap();
        assert_eq!(c.p2_source, P2Source::Numeric);
        assert_eq!(c.sign_at_g2, Sign::Marginal);
        assert_eq!(c.sign_at_p2_0, Sign::Marginal);
        assert!(!c.nontrivial);
    }

    #[test]
    fn certificate_degenerate() {
        let mut p = cert();
        p.g2 = 2.0;
        let c = nontrivial_certificate(&p).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.p2_0, 2.0);
        assert_eq!(c.bracket_at_g2, c.bracket_at_p2_0);
        assert!(!c.nontrivial);
        assert_eq!(c.to_kv().get("degenerate"), Some("true"));
    }

    #[test]
    fn spec_round_trip_scalar() {
        let p = Scalar1DParams::noisy_example();
        assert_eq!(Scalar1DParams::from_spec(&p.to_spec().unwrap()), Some(p));
        let ex = Example43Params {
            a: 0.0,
            g: 1.0,
            g1: 1.0,
            horizon: 1.0,
        };
        assert_eq!(Scalar1DParams::from_spec(&ex.to_spec().unwrap()), None);
    }
}
