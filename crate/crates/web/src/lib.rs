//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The plain functions ([`example_curve`], [`scalar_optimum`],
//! [`p2_trajectory`]) do the work and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use switchlq::closed_form::{
    ex43_value, nontrivial_certificate, p2_closed_general, Example43Params, Scalar1DParams,
};
use switchlq::dot::{find_optimal_time, SearchOptions, SwitchTimeProblem};
use switchlq::riccati::RiccatiOptions;
use wasm_bindgen::prelude::*;

/// Number of entries expected by [`scalar_params`].
pub const SCALAR_PARAM_COUNT: usize = 16;

/// Scalar parameters from a flat array in the order
/// `A1 B1 C1 D1 Q1 R1 G1 A2 B2 C2 D2 Q2 R2 G2 K T`.
pub fn scalar_params(values: &[f64]) -> Result<Scalar1DParams, String> {
    let v: &[f64; SCALAR_PARAM_COUNT] = values
        .try_into()
        .map_err(|_| format!("expected {SCALAR_PARAM_COUNT} parameters, got {}", values.len()))?;
    let params = Scalar1DParams {
        a1: v[0],
        b1: v[1],
        c1: v[2],
        d1: v[3],
        q1: v[4],
        r1: v[5],
        g1: v[6],
        a2: v[7],
        b2: v[8],
        c2: v[9],
        d2: v[10],
        q2: v[11],
        r2: v[12],
        g2: v[13],
        k: v[14],
        horizon: v[15],
    };
    params.check().map_err(|e| e.to_string())?;
    Ok(params)
}

fn nodes(horizon: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    let n = (points - 1) as f64;
    Ok((0..points).map(|i| horizon * i as f64 / n).collect())
}

fn riccati_opts(n_steps: usize) -> Result<RiccatiOptions, String> {
    if n_steps < 2 {
        return Err("need at least 2 time steps".into());
    }
    Ok(RiccatiOptions::with_steps(n_steps))
}

/// Switch value `φ(r)` of the double-integrator example, numeric and
/// closed form, for `x1 = (x, v)`.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleCurve {
    r: Vec<f64>,
    numeric: Vec<f64>,
    closed: Vec<f64>,
}

#[wasm_bindgen]
impl ExampleCurve {
    #[wasm_bindgen(getter)]
    pub fn r(&self) -> Vec<f64> {
        self.r.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn numeric(&self) -> Vec<f64> {
        self.numeric.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn closed(&self) -> Vec<f64> {
        self.closed.clone()
    }

    /// Largest gap between the two curves.
    #[wasm_bindgen(getter)]
    pub fn max_error(&self) -> f64 {
        self.numeric
            .iter()
            .zip(&self.closed)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn example_curve(
    a: f64,
    g: f64,
    g1: f64,
    horizon: f64,
    x: f64,
    v: f64,
    points: usize,
    n_steps: usize,
) -> Result<ExampleCurve, String> {
    let params = Example43Params { a, g, g1, horizon };
    params.check().map_err(|e| e.to_string())?;
    let spec = params.to_spec().map_err(|e| e.to_string())?;
    let r = nodes(horizon, points)?;
    let curve = SwitchTimeProblem::new(&spec, riccati_opts(n_steps)?)
        .and_then(|p| p.value_curve(&[x, v], &r))
        .map_err(|e| e.to_string())?;
    let closed = r
        .iter()
        .map(|&ri| ex43_value(ri.min(horizon), [x, v], &params))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(ExampleCurve {
        r,
        numeric: curve.phi,
        closed,
    })
}

/// Value curve, optimal switch time and certificate of a scalar problem
/// for `x1 = 1`.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarOptimum {
    r: Vec<f64>,
    phi: Vec<f64>,
    r_bar: f64,
    phi_min: f64,
    classification: String,
    sensitivity: f64,
    nontrivial: bool,
    bracket_at_g2: f64,
    bracket_at_p2_0: f64,
}

#[wasm_bindgen]
impl ScalarOptimum {
    #[wasm_bindgen(getter)]
    pub fn r(&self) -> Vec<f64> {
        self.r.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn phi(&self) -> Vec<f64> {
        self.phi.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn r_bar(&self) -> f64 {
        self.r_bar
    }

    #[wasm_bindgen(getter)]
    pub fn phi_min(&self) -> f64 {
        self.phi_min
    }

    #[wasm_bindgen(getter)]
    pub fn classification(&self) -> String {
        self.classification.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    #[wasm_bindgen(getter)]
    pub fn nontrivial(&self) -> bool {
        self.nontrivial
    }

    #[wasm_bindgen(getter)]
    pub fn bracket_at_g2(&self) -> f64 {
        self.bracket_at_g2
    }

    #[wasm_bindgen(getter)]
    pub fn bracket_at_p2_0(&self) -> f64 {
        self.bracket_at_p2_0
    }
}

pub fn scalar_optimum(values: &[f64], points: usize, n_steps: usize) -> Result<ScalarOptimum, String> {
    let params = scalar_params(values)?;
    let spec = params.to_spec().map_err(|e| e.to_string())?;
    let opts = SearchOptions {
        coarse_points: points,
        tol_r: None,
        riccati: riccati_opts(n_steps)?,
    };
    let res = find_optimal_time(&spec, &[1.0], &opts).map_err(|e| e.to_string())?;
    let cert = nontrivial_certificate(&params).map_err(|e| e.to_string())?;
    Ok(ScalarOptimum {
        r: res.curve.r_nodes,
        phi: res.curve.phi,
        r_bar: res.r_bar,
        phi_min: res.phi_min,
        classification: res.classification.as_str().to_string(),
        sensitivity: res.sensitivity_at_opt,
        nontrivial: cert.nontrivial,
        bracket_at_g2: cert.bracket_at_g2,
        bracket_at_p2_0: cert.bracket_at_p2_0,
    })
}

/// Stage-2 Riccati solution `P2(t)` of a scalar problem. `closed` is empty
/// unless the problem has `D2 = 0`, `R2 = 1`, `B2 ≠ 0`.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t: Vec<f64>,
    numeric: Vec<f64>,
    closed: Vec<f64>,
}

#[wasm_bindgen]
impl Trajectory {
    #[wasm_bindgen(getter)]
    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn numeric(&self) -> Vec<f64> {
        self.numeric.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn closed(&self) -> Vec<f64> {
        self.closed.clone()
    }
}

pub fn p2_trajectory(values: &[f64], points: usize, n_steps: usize) -> Result<Trajectory, String> {
    let params = scalar_params(values)?;
    let spec = params.to_spec().map_err(|e| e.to_string())?;
    let t = nodes(params.horizon, points)?;
    let problem = SwitchTimeProblem::new(&spec, riccati_opts(n_steps)?).map_err(|e| e.to_string())?;
    let numeric = t
        .iter()
        .map(|&ti| problem.stage2().p_at(ti).map(|p| p[(1, 1)]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let closed = if params.has_lambda_form() {
        t.iter()
            .map(|&ti| p2_closed_general(ti, &params).map(|c| c.value()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?
    } else {
        Vec::new()
    };
    Ok(Trajectory { t, numeric, closed })
}

#[wasm_bindgen(js_name = exampleCurve)]
#[allow(clippy::too_many_arguments)]
pub fn example_curve_js(
    a: f64,
    g: f64,
    g1: f64,
    horizon: f64,
    x: f64,
    v: f64,
    points: usize,
    n_steps: usize,
) -> Result<ExampleCurve, JsError> {
    example_curve(a, g, g1, horizon, x, v, points, n_steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = scalarOptimum)]
pub fn scalar_optimum_js(values: &[f64], points: usize, n_steps: usize) -> Result<ScalarOptimum, JsError> {
    scalar_optimum(values, points, n_steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = p2Trajectory)]
pub fn p2_trajectory_js(values: &[f64], points: usize, n_steps: usize) -> Result<Trajectory, JsError> {
    p2_trajectory(values, points, n_steps).map_err(|e| JsError::new(&e))
}
