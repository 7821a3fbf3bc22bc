//! Problem data for the two-stage system.
//!
//! On `[0, r)` the state `X1` (dimension `n1`) follows
//! `dX1 = (A1 X1 + B1 u) dt + (C1 X1 + D1 u) dW`; at the switch the full state
//! is initialised as `X(r) = K(r) X1(r-)` and then follows the stage-2
//! dynamics `(A, B, C, D)` of dimension `n = n1 + n2` up to the horizon.
//! All coefficients are deterministic and tabulated on a uniform time grid.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for the semidefiniteness checks.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Nodes closer than this (in units of the step) snap to the node.
const SNAP: f64 = 1e-9;

/// Uniform grid `t0 = t_0 < t_1 < ... < t_n = t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite()) || t1 <= t0 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs t1 > t0, got [{t0}, {t1}]"
            )));
        }
        if n_steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs at least 2 steps, got {n_steps}"
            )));
        }
        Ok(TimeGrid { t0, t1, n_steps })
    }

    /// Grid on `[0, horizon]`.
    pub fn horizon(horizon: f64, n_steps: usize) -> Result<Self> {
        Self::new(0.0, horizon, n_steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.t1
        } else {
            self.t0 + k as f64 * (self.t1 - self.t0) / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = 1e-12 * (self.t1 - self.t0);
        t >= self.t0 - slack && t <= self.t1 + slack
    }

    /// Position of `t` as `(k, theta)` with `t = t_k + theta * step`,
    /// `k < n_steps` and `theta` in `[0, 1]`. Times within a relative
    /// `1e-9` of a node are snapped onto it.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !self.contains(t) {
            return Err(Error::OutOfRange {
                t,
                lo: self.t0,
                hi: self.t1,
            });
        }
        let n = self.n_steps as f64;
        let mut s = ((t - self.t0) / (self.t1 - self.t0) * n).clamp(0.0, n);
        let nearest = s.round();
        if (s - nearest).abs() < SNAP {
            s = nearest;
        }
        let k = (s.floor() as usize).min(self.n_steps - 1);
        Ok((k, s - k as f64))
    }

    /// Index of the node nearest to `t` (clamped to the grid).
    pub fn nearest_node(&self, t: f64) -> usize {
        let n = self.n_steps as f64;
        let s = ((t - self.t0) / (self.t1 - self.t0) * n).clamp(0.0, n);
        s.round() as usize
    }
}

/// A matrix-valued function of time stored as node samples. A single sample
/// means the coefficient is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTable {
    rows: usize,
    cols: usize,
    samples: Vec<DMatrix<f64>>,
}

impl CoeffTable {
    pub fn constant(m: DMatrix<f64>) -> Self {
        CoeffTable {
            rows: m.nrows(),
            cols: m.ncols(),
            samples: vec![m],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn sampled(samples: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("coefficient table has no samples".into()))?;
        let (rows, cols) = first.shape();
        if let Some(bad) = samples.iter().find(|s| s.shape() != (rows, cols)) {
            return Err(Error::dim(
                "coefficient sample",
                format!("{rows}x{cols}"),
                format!("{}x{}", bad.nrows(), bad.ncols()),
            ));
        }
        Ok(CoeffTable {
            rows,
            cols,
            samples,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn is_constant(&self) -> bool {
        self.samples.len() == 1
    }

    /// The single sample of a constant table.
    pub fn constant_value(&self) -> Option<&DMatrix<f64>> {
        self.is_constant().then(|| &self.samples[0])
    }

    /// Combine tables sample by sample; constant tables broadcast.
    pub fn zip_map<F>(tables: &[&CoeffTable], f: F) -> Result<CoeffTable>
    where
        F: Fn(&[&DMatrix<f64>]) -> DMatrix<f64>,
    {
        let count = tables.iter().map(|t| t.samples.len()).max().unwrap_or(1);
        if let Some(bad) = tables
            .iter()
            .find(|t| t.samples.len() != 1 && t.samples.len() != count)
        {
            return Err(Error::dim("sample count", count, bad.samples.len()));
        }
        let samples = (0..count)
            .map(|k| {
                let args: Vec<&DMatrix<f64>> = tables
                    .iter()
                    .map(|t| &t.samples[if t.is_constant() { 0 } else { k }])
                    .collect();
                f(&args)
            })
            .collect();
        CoeffTable::sampled(samples)
    }
}

/// Evaluate a coefficient at time `t`: constant tables return their sample,
/// sampled tables interpolate linearly between bracketing nodes.
pub fn coeff_at(table: &CoeffTable, grid: &TimeGrid, t: f64) -> Result<DMatrix<f64>> {
    if !grid.contains(t) {
        return Err(Error::OutOfRange {
            t,
            lo: grid.t0(),
            hi: grid.t1(),
        });
    }
    if table.is_constant() {
        return Ok(table.samples[0].clone());
    }
    if table.samples.len() != grid.len() {
        return Err(Error::dim("coefficient samples", grid.len(), table.samples.len()));
    }
    let (k, theta) = grid.locate(t)?;
    if theta == 0.0 {
        return Ok(table.samples[k].clone());
    }
    if theta == 1.0 {
        return Ok(table.samples[k + 1].clone());
    }
    Ok(&table.samples[k] * (1.0 - theta) + &table.samples[k + 1] * theta)
}

/// Data of the two-stage problem. Dimensions: `n = n1 + n2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub horizon: TimeGrid,
    pub a1: CoeffTable,
    pub b1: CoeffTable,
    pub c1: CoeffTable,
    pub d1: CoeffTable,
    pub a: CoeffTable,
    pub b: CoeffTable,
    pub c: CoeffTable,
    pub d: CoeffTable,
    pub q1: CoeffTable,
    pub r1: CoeffTable,
    pub q: CoeffTable,
    pub r: CoeffTable,
    /// Terminal weight of stage 1, tabulated in the switch time.
    pub g1: CoeffTable,
    pub g: DMatrix<f64>,
    /// Switch coupling `X(r) = K(r) X1(r-)`, tabulated in the switch time.
    pub k: CoeffTable,
    pub delta: f64,
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn horizon_end(&self) -> f64 {
        self.horizon.t1()
    }

    /// Expected `(rows, cols)` per coefficient name.
    pub fn expected_shapes(&self) -> Vec<(&'static str, (usize, usize), (usize, usize))> {
        let (n1, n, m) = (self.n1, self.n(), self.m);
        vec![
            ("A1", (n1, n1), self.a1.shape()),
            ("B1", (n1, m), self.b1.shape()),
            ("C1", (n1, n1), self.c1.shape()),
            ("D1", (n1, m), self.d1.shape()),
            ("A", (n, n), self.a.shape()),
            ("B", (n, m), self.b.shape()),
            ("C", (n, n), self.c.shape()),
            ("D", (n, m), self.d.shape()),
            ("Q1", (n1, n1), self.q1.shape()),
            ("R1", (m, m), self.r1.shape()),
            ("Q", (n, n), self.q.shape()),
            ("R", (m, m), self.r.shape()),
            ("G1", (n1, n1), self.g1.shape()),
            ("G", (n, n), self.g.shape()),
            ("K", (n, n1), self.k.shape()),
        ]
    }

    fn tables(&self) -> [(&'static str, &CoeffTable); 14] {
        [
            ("A1", &self.a1),
            ("B1", &self.b1),
            ("C1", &self.c1),
            ("D1", &self.d1),
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
            ("Q1", &self.q1),
            ("R1", &self.r1),
            ("Q", &self.q),
            ("R", &self.r),
            ("G1", &self.g1),
            ("K", &self.k),
        ]
    }

    /// Structural well-formedness: shapes and sample counts.
    pub fn check_structure(&self) -> Result<()> {
        for (name, expected, got) in self.expected_shapes() {
            if expected != got {
                return Err(Error::dim(
                    name,
                    format!("{}x{}", expected.0, expected.1),
                    format!("{}x{}", got.0, got.1),
                ));
            }
        }
        for (name, table) in self.tables() {
            let count = table.samples().len();
            if count != 1 && count != self.horizon.len() {
                return Err(Error::dim(
                    format!("{name} sample count"),
                    format!("1 or {}", self.horizon.len()),
                    count,
                ));
            }
        }
        Ok(())
    }

    /// Stage-1 coefficients `(A1, B1, C1, D1, Q1, R1)` at time `t`.
    pub fn stage1_at(&self, t: f64) -> Result<StageCoefficients> {
        let g = &self.horizon;
        Ok(StageCoefficients {
            a: coeff_at(&self.a1, g, t)?,
            b: coeff_at(&self.b1, g, t)?,
            c: coeff_at(&self.c1, g, t)?,
            d: coeff_at(&self.d1, g, t)?,
            q: coeff_at(&self.q1, g, t)?,
            r: coeff_at(&self.r1, g, t)?,
        })
    }

    /// Stage-2 coefficients `(A, B, C, D, Q, R)` at time `t`.
    pub fn stage2_at(&self, t: f64) -> Result<StageCoefficients> {
        let g = &self.horizon;
        Ok(StageCoefficients {
            a: coeff_at(&self.a, g, t)?,
            b: coeff_at(&self.b, g, t)?,
            c: coeff_at(&self.c, g, t)?,
            d: coeff_at(&self.d, g, t)?,
            q: coeff_at(&self.q, g, t)?,
            r: coeff_at(&self.r, g, t)?,
        })
    }

    pub fn g1_at(&self, r: f64) -> Result<DMatrix<f64>> {
        coeff_at(&self.g1, &self.horizon, r)
    }

    pub fn k_at(&self, r: f64) -> Result<DMatrix<f64>> {
        coeff_at(&self.k, &self.horizon, r)
    }
}

/// Coefficients of one stage evaluated at a single time.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCoefficients {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    /// `None` for constant tables (the violation holds at every node) and
    /// for structural problems.
    pub node: Option<usize>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn violations_for<'a>(&'a self, field: &'a str) -> impl Iterator<Item = &'a Violation> + 'a {
        self.violations.iter().filter(move |v| v.field == field)
    }
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().collect()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// `Some(reason)` when `m` is not symmetric positive semidefinite.
fn psd_failure(m: &DMatrix<f64>) -> Option<String> {
    let scale = m.amax();
    if asymmetry(m) > PSD_TOLERANCE * (1.0 + scale) {
        return Some("not symmetric".into());
    }
    let eig = eigenvalues(m);
    let largest = eig.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    let smallest = eig.iter().copied().fold(f64::INFINITY, f64::min);
    (smallest < -PSD_TOLERANCE * largest)
        .then(|| format!("not PSD (smallest eigenvalue {smallest:e})"))
}

fn delta_failure(m: &DMatrix<f64>, delta: f64) -> Option<String> {
    let scale = m.amax();
    if asymmetry(m) > PSD_TOLERANCE * (1.0 + scale) {
        return Some("not symmetric".into());
    }
    let eig = eigenvalues(m);
    let largest = eig.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    let smallest = eig.iter().copied().fold(f64::INFINITY, f64::min);
    (smallest < delta - PSD_TOLERANCE * largest)
        .then(|| format!("not ⪰ δI (smallest eigenvalue {smallest:e}, δ = {delta:e})"))
}

/// Check every standing assumption at every sampled node. All violations are
/// collected.
pub fn validate_spec(spec: &ProblemSpec) -> ValidationReport {
    let mut violations = Vec::new();
    for (name, expected, got) in spec.expected_shapes() {
        if expected != got {
            violations.push(Violation {
                field: name.into(),
                node: None,
                description: format!(
                    "shape {}x{}, expected {}x{}",
                    got.0, got.1, expected.0, expected.1
                ),
            });
        }
    }
    for (name, table) in spec.tables() {
        let count = table.samples().len();
        if count != 1 && count != spec.horizon.len() {
            violations.push(Violation {
                field: name.into(),
                node: None,
                description: format!(
                    "{count} samples, expected 1 or {}",
                    spec.horizon.len()
                ),
            });
        }
    }
    if !(spec.delta > 0.0) {
        violations.push(Violation {
            field: "delta".into(),
            node: None,
            description: format!("δ must be positive, got {}", spec.delta),
        });
    }

    let mut per_node = |name: &str, table: &CoeffTable, check: &dyn Fn(&DMatrix<f64>) -> Option<String>| {
        if !table.samples().iter().all(|s| s.is_square()) {
            return;
        }
        for (k, sample) in table.samples().iter().enumerate() {
            if let Some(description) = check(sample) {
                violations.push(Violation {
                    field: name.into(),
                    node: (!table.is_constant()).then_some(k),
                    description,
                });
            }
        }
    };
    let delta = spec.delta;
    per_node("Q1", &spec.q1, &psd_failure);
    per_node("Q", &spec.q, &psd_failure);
    per_node("G1", &spec.g1, &psd_failure);
    per_node("R1", &spec.r1, &|m| delta_failure(m, delta));
    per_node("R", &spec.r, &|m| delta_failure(m, delta));
    if spec.g.is_square() {
        if let Some(description) = psd_failure(&spec.g) {
            violations.push(Violation {
                field: "G".into(),
                node: None,
                description,
            });
        }
    }

    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Stage-1 inputs for [`build_stopped_system`].
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Data {
    pub a1: CoeffTable,
    pub b1: CoeffTable,
    pub c1: CoeffTable,
    pub d1: CoeffTable,
    pub q1: CoeffTable,
    pub r1: CoeffTable,
    pub g1: CoeffTable,
}

/// Inputs of the appended block that runs after the switch.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppedBlockData {
    pub a2: CoeffTable,
    pub b2: CoeffTable,
    pub c2: CoeffTable,
    pub d2: CoeffTable,
    pub q2: CoeffTable,
    pub r2: CoeffTable,
    pub g2: DMatrix<f64>,
}

fn block_diag_zero_upper(n1: usize, lower: &DMatrix<f64>) -> DMatrix<f64> {
    let n2 = lower.nrows();
    let mut out = DMatrix::zeros(n1 + n2, n1 + lower.ncols());
    out.view_mut((n1, n1), (n2, lower.ncols())).copy_from(lower);
    out
}

fn stack_below_zero(n1: usize, lower: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n1 + lower.nrows(), lower.ncols());
    out.view_mut((n1, 0), lower.shape()).copy_from(lower);
    out
}

/// Assemble the system in which the stage-1 state is frozen after the
/// switch: `A = diag(0, A2)`, `B = (0; B2)`, `C = diag(0, C2)`,
/// `D = (0; D2)`, `Q = diag(0, Q2)`, `G = diag(0, G2)`, `R = R2` and
/// `K = (K_upper; K_lower)` with `K_upper = I` unless given.
pub fn build_stopped_system(
    stage1: Stage1Data,
    block: StoppedBlockData,
    k_lower: CoeffTable,
    k_upper: Option<CoeffTable>,
    horizon: TimeGrid,
    delta: f64,
) -> Result<ProblemSpec> {
    let n1 = stage1.a1.rows();
    let m = stage1.b1.cols();
    let n2 = block.a2.rows();
    let square = |name: &str, t: &CoeffTable, size: usize| {
        if t.shape() != (size, size) {
            Err(Error::dim(name, format!("{size}x{size}"), format!("{}x{}", t.rows(), t.cols())))
        } else {
            Ok(())
        }
    };
    let rect = |name: &str, t: &CoeffTable, rows: usize, cols: usize| {
        if t.shape() != (rows, cols) {
            Err(Error::dim(name, format!("{rows}x{cols}"), format!("{}x{}", t.rows(), t.cols())))
        } else {
            Ok(())
        }
    };
    square("A1", &stage1.a1, n1)?;
    rect("B1", &stage1.b1, n1, m)?;
    square("C1", &stage1.c1, n1)?;
    rect("D1", &stage1.d1, n1, m)?;
    square("Q1", &stage1.q1, n1)?;
    square("R1", &stage1.r1, m)?;
    square("G1", &stage1.g1, n1)?;
    square("A2", &block.a2, n2)?;
    rect("B2", &block.b2, n2, m)?;
    square("C2", &block.c2, n2)?;
    rect("D2", &block.d2, n2, m)?;
    square("Q2", &block.q2, n2)?;
    square("R2", &block.r2, m)?;
    if block.g2.shape() != (n2, n2) {
        return Err(Error::dim(
            "G2",
            format!("{n2}x{n2}"),
            format!("{}x{}", block.g2.nrows(), block.g2.ncols()),
        ));
    }
    rect("K_lower", &k_lower, n2, n1)?;
    let k_upper = k_upper.unwrap_or_else(|| CoeffTable::identity(n1));
    square("K_upper", &k_upper, n1)?;

    let diag = |t: &CoeffTable| CoeffTable::zip_map(&[t], |s| block_diag_zero_upper(n1, s[0]));
    let below = |t: &CoeffTable| CoeffTable::zip_map(&[t], |s| stack_below_zero(n1, s[0]));
    let k = CoeffTable::zip_map(&[&k_upper, &k_lower], |s| {
        let mut out = DMatrix::zeros(n1 + n2, n1);
        out.view_mut((0, 0), (n1, n1)).copy_from(s[0]);
        out.view_mut((n1, 0), (n2, n1)).copy_from(s[1]);
        out
    })?;

    let spec = ProblemSpec {
        n1,
        n2,
        m,
        horizon,
        a: diag(&block.a2)?,
        b: below(&block.b2)?,
        c: diag(&block.c2)?,
        d: below(&block.d2)?,
        q: diag(&block.q2)?,
        r: block.r2,
        g: block_diag_zero_upper(n1, &block.g2),
        k,
        a1: stage1.a1,
        b1: stage1.b1,
        c1: stage1.c1,
        d1: stage1.d1,
        q1: stage1.q1,
        r1: stage1.r1,
        g1: stage1.g1,
        delta,
    };
    spec.check_structure()?;
    Ok(spec)
}
