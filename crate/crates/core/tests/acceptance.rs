//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use switchlq::cli::{run, Command, RunConfig};
use switchlq::closed_form::{
    ex43_p1, nontrivial_certificate, p2_closed_ex43, p2_closed_general, switch_bracket,
    theta_and_pplus, to_dmatrix, Example43Params, Scalar1DParams,
};
use switchlq::dot::{sensitivity_scalar, Classification, SensitivityMethod, SwitchTimeProblem};
use switchlq::riccati::{value_at_zero, RiccatiOptions};
use switchlq::simulate::{
    compare_controls, simulate_closed_loop, simulate_optimal, ControlLaw, OptimalFeedback, Phase,
    SimConfig,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn ex43(a: f64) -> Example43Params {
    Example43Params {
        a,
        g: 1.0,
        g1: 1.0,
        horizon: 1.0,
    }
}

fn switch_times() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Largest entrywise error of P1ʳ(0) against the closed form over r = 0.1..0.9.
fn ex43_stage1_error(params: &Example43Params, n_steps: usize) -> Result<f64, String> {
    let spec = params.to_spec().map_err(e)?;
    let problem = SwitchTimeProblem::new(&spec, RiccatiOptions::with_steps(n_steps)).map_err(e)?;
    let mut err = 0.0_f64;
    for r in switch_times() {
        let numeric = problem.p1_initial(r).map_err(e)?;
        let closed = to_dmatrix(&ex43_p1(0.0, r, params).map_err(e)?);
        err = err.max((numeric - closed).amax());
    }
    Ok(err)
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0_f64;
    for a in [0.0, 1.0] {
        worst = worst.max(ex43_stage1_error(&ex43(a), 2000)?);
    }
    ensure(worst <= 1e-6, format!("max error {worst:e} > 1e-6"))?;
    Ok(format!("max |P1 - closed form| = {worst:.3e} (a = 0, 1)"))
}

fn criterion_2() -> Outcome {
    let ts: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
    let mut worst = 0.0_f64;
    for a in [0.7, -0.7, 0.0] {
        let params = ex43(a);
        let spec = params.to_spec().map_err(e)?;
        let problem = SwitchTimeProblem::new(&spec, RiccatiOptions::default()).map_err(e)?;
        for &t in &ts {
            let numeric = problem.stage2().p_at(t).map_err(e)?[(2, 2)];
            worst = worst.max((numeric - p2_closed_ex43(t, &params, 0.0).map_err(e)?).abs());
        }
    }
    let scalar_sets = [
        Scalar1DParams::certificate_scenario(),
        Scalar1DParams {
            a2: -0.8,
            c2: 0.4,
            q2: 0.5,
            g2: 2.0,
            ..Scalar1DParams::certificate_scenario()
        },
        Scalar1DParams {
            a2: 0.0,
            b2: 1.5,
            q2: 1.0,
            g2: 0.1,
            ..Scalar1DParams::certificate_scenario()
        },
    ];
    for params in &scalar_sets {
        ensure(params.has_lambda_form(), "parameter set lacks the closed form")?;
        let spec = params.to_spec().map_err(e)?;
        let problem = SwitchTimeProblem::new(&spec, RiccatiOptions::default()).map_err(e)?;
        for &t in &ts {
            let numeric = problem.stage2().p_at(t).map_err(e)?[(1, 1)];
            let closed = p2_closed_general(t, params).map_err(e)?.value();
            worst = worst.max((numeric - closed).abs());
        }
    }
    ensure(worst <= 1e-6, format!("max error {worst:e} > 1e-6"))?;
    Ok(format!(
        "max |P2 - closed form| = {worst:.3e} over 6 parameter sets x 100 times"
    ))
}

fn criterion_3() -> Outcome {
    let mut ratios = Vec::new();
    for a in [0.0, 1.0] {
        let errs: Vec<f64> = [20, 40, 80]
            .iter()
            .map(|&n| ex43_stage1_error(&ex43(a), n))
            .collect::<Result<_, _>>()?;
        ratios.extend(errs.windows(2).map(|w| w[0] / w[1]));
    }
    ensure(
        ratios.iter().all(|r| (12.0..=20.0).contains(r)),
        format!("ratios {ratios:?} outside [12, 20]"),
    )?;
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    Ok(format!("error ratios on doubling n (20, 40, 80): {}", shown.join(", ")))
}

fn criterion_4() -> Outcome {
    let params = Scalar1DParams::certificate_scenario();
    let spec = params.to_spec().map_err(e)?;
    let problem = SwitchTimeProblem::new(&spec, RiccatiOptions::default()).map_err(e)?;
    let mut worst = 0.0_f64;
    for r in switch_times() {
        let exact = sensitivity_scalar(&params, r, problem.stage2()).map_err(e)?;
        let fd = problem.sensitivity_fd(&[1.0], r, 1e-4).map_err(e)?;
        let rel = (exact - fd).abs() / exact.abs().max(fd.abs());
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-3, format!("relative gap {worst:e} > 1e-3"))?;
    Ok(format!("max relative gap {worst:.3e}"))
}

fn criterion_5() -> Outcome {
    let params = Scalar1DParams::certificate_scenario();
    let cert = nontrivial_certificate(&params).map_err(e)?;
    let theta = theta_and_pplus(&params);
    let theta_g2 = cert.theta_g2.ok_or("Θ unavailable")?;
    let theta_p2 = cert.theta_p2_0.ok_or("Θ unavailable")?;
    let p_plus = theta.p_plus.root().ok_or("P+ unavailable")?;
    ensure((theta_g2 - 0.25).abs() < 1e-12, format!("Θ(G2) = {theta_g2}"))?;
    ensure((theta_p2 + 5.07).abs() < 5e-3, format!("Θ(P2(0)) = {theta_p2}"))?;
    ensure((p_plus - 0.57735).abs() < 1e-5, format!("P+ = {p_plus}"))?;
    ensure((cert.p2_0 - 1.42247).abs() < 1e-5, format!("P2(0) = {}", cert.p2_0))?;
    ensure(cert.nontrivial, "certificate not nontrivial")?;

    let spec = params.to_spec().map_err(e)?;
    let problem = SwitchTimeProblem::new(&spec, RiccatiOptions::default()).map_err(e)?;
    let res = problem.find_optimal_time(&[1.0], 65, 1e-6).map_err(e)?;
    ensure(
        res.classification == Classification::Interior && res.r_bar > 0.0 && res.r_bar < 1.0,
        format!("{:?} at r = {}", res.classification, res.r_bar),
    )?;
    ensure(
        res.sensitivity_at_opt.abs() <= 1e-4,
        format!("|Π(r̄)| = {:e}", res.sensitivity_at_opt),
    )?;

    let grid: Vec<f64> = (0..10_000).map(|i| i as f64 / 9_999.0).collect();
    let curve = problem.value_curve(&[1.0], &grid).map_err(e)?;
    let i = curve.argmin();
    ensure(
        res.phi_min <= curve.phi[i] + 1e-12,
        format!("search {} worse than grid {}", res.phi_min, curve.phi[i]),
    )?;
    ensure(
        (res.r_bar - grid[i]).abs() <= 2.0 / 9_999.0,
        format!("grid argmin {} far from r̄ = {}", grid[i], res.r_bar),
    )?;
    Ok(format!(
        "Θ(G2) = {theta_g2:.6}, Θ(P2(0)) = {theta_p2:.4}, P+ = {p_plus:.6}, P2(0) = {:.6}, \
         r̄ = {:.7} Interior, Π(r̄) = {:.1e}, grid argmin {:.5}",
        cert.p2_0, res.r_bar, res.sensitivity_at_opt, grid[i]
    ))
}

fn criterion_6() -> Outcome {
    let pq = Scalar1DParams::pure_quadrature();
    let spec = pq.to_spec().map_err(e)?;
    let problem = SwitchTimeProblem::new(&spec, RiccatiOptions::default()).map_err(e)?;
    let res = problem.find_optimal_time(&[1.0], 65, 1e-6).map_err(e)?;
    ensure(
        res.classification == Classification::LeftBoundary && res.r_bar == 0.0,
        format!("pure quadrature: {:?} at {}", res.classification, res.r_bar),
    )?;
    let p2 = problem.stage2().p_at(0.0).map_err(e)?[(1, 1)];
    let bracket = switch_bracket(p2, &pq).map_err(e)?;
    ensure(bracket >= 0.0, format!("bracket at r̄ = 0 is {bracket}"))?;

    let params = ex43(0.0);
    let spec = params.to_spec().map_err(e)?;
    let problem = SwitchTimeProblem::new(&spec, RiccatiOptions::default()).map_err(e)?;
    let x1 = [1.0, 0.0];
    let res = problem.find_optimal_time(&x1, 65, 1e-6).map_err(e)?;
    ensure(
        res.classification == Classification::RightBoundary && res.r_bar == 1.0,
        format!("example: {:?} at {}", res.classification, res.r_bar),
    )?;
    ensure(
        res.sensitivity_method == SensitivityMethod::FiniteDifference && res.sensitivity_at_opt <= 0.0,
        format!("one-sided sensitivity {}", res.sensitivity_at_opt),
    )?;
    let phi = |r: f64| problem.phi(&x1, r).map_err(e);
    let (p0, p09, p1) = (phi(0.0)?, phi(0.9)?, phi(1.0)?);
    ensure(
        (p1 - 1.2).abs() < 1e-6 && (p09 - 1.304_104_825_19).abs() < 1e-6 && (p0 - 1.5).abs() < 1e-6,
        format!("φ(0), φ(0.9), φ(1) = {p0}, {p09}, {p1}"),
    )?;
    let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    let curve = problem.value_curve(&x1, &grid).map_err(e)?;
    ensure(curve.argmin() == 1000, "grid minimum is not at r = T")?;
    Ok(format!(
        "bracket(r̄=0) = {bracket:.4} ≥ 0; one-sided Π(T) = {:.4} ≤ 0; φ(1) = {p1:.6} < φ(0.9) = {p09:.6} < φ(0) = {p0:.6}",
        res.sensitivity_at_opt
    ))
}

fn criterion_7() -> Outcome {
    let spec = Scalar1DParams::noisy_example().to_spec().map_err(e)?;
    let opts = RiccatiOptions::default();
    let problem = SwitchTimeProblem::new(&spec, opts).map_err(e)?;
    let stage1 = problem.stage1(0.5).map_err(e)?;
    let value = value_at_zero(&stage1, &[1.0]).map_err(e)?;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let cfg = SimConfig {
            n_paths: 100_000,
            seed,
            trace_paths: 0,
            ..SimConfig::default()
        };
        let rep = simulate_closed_loop(&spec, 0.5, problem.stage2(), &stage1, &[1.0], &cfg).map_err(e)?;
        let z = (rep.mean_cost - value) / rep.std_error;
        ensure(
            z.abs() <= 3.0,
            format!("seed {seed}: mean {} vs {value}, {z:.2} standard errors", rep.mean_cost),
        )?;
        parts.push(format!("seed {seed}: {z:+.2}σ"));
    }
    Ok(format!("½P1(0) = {value:.6}; {}", parts.join(", ")))
}

fn criterion_8() -> Outcome {
    let noisy = Scalar1DParams::noisy_example().to_spec().map_err(e)?;
    let opts = RiccatiOptions::default();
    let cfg = SimConfig {
        n_paths: 20_000,
        seed: 11,
        trace_paths: 0,
        ..SimConfig::default()
    };
    let gap = |spec: &switchlq::ProblemSpec, x1: &[f64], eps: f64, cfg: &SimConfig| {
        let problem = SwitchTimeProblem::new(spec, opts).map_err(e)?;
        let stage1 = problem.stage1(0.5).map_err(e)?;
        let optimal = OptimalFeedback::new(problem.stage2(), &stage1, cfg.n_steps).map_err(e)?;
        let perturbed = |t: f64, ph: Phase, x: &[f64], u: &mut [f64]| {
            optimal.control(t, ph, x, u);
            u.iter_mut().for_each(|v| *v += eps);
        };
        compare_controls(spec, 0.5, &perturbed, &optimal, x1, cfg).map_err(e)
    };
    let mut parts = Vec::new();
    for eps in [0.1, 0.2] {
        let c = gap(&noisy, &[1.0], eps, &cfg)?;
        ensure(
            c.gap > 3.0 * c.gap_std_error,
            format!("ε = {eps}: gap {} with standard error {}", c.gap, c.gap_std_error),
        )?;
        parts.push(format!("ε={eps}: {:.3e} ± {:.1e}", c.gap, c.gap_std_error));
    }
    let det = ex43(0.0).to_spec().map_err(e)?;
    let det_cfg = SimConfig {
        n_paths: 2,
        ..cfg
    };
    let g1 = gap(&det, &[1.0, 0.0], 0.1, &det_cfg)?;
    let g2 = gap(&det, &[1.0, 0.0], 0.2, &det_cfg)?;
    let ratio = g2.gap / g1.gap;
    ensure(
        g1.gap > 0.0 && (3.5..=4.5).contains(&ratio),
        format!("deterministic ratio {ratio}"),
    )?;
    Ok(format!("noisy {}; deterministic gap ratio {ratio:.4}", parts.join(", ")))
}

fn criterion_9() -> Outcome {
    let mut parts = Vec::new();
    let specs = [
        ("noisy", Scalar1DParams::noisy_example().to_spec().map_err(e)?, vec![1.0]),
        ("example", ex43(0.0).to_spec().map_err(e)?, vec![1.0, 0.0]),
    ];
    for (name, spec, x1) in &specs {
        let cfg = SimConfig {
            n_paths: 10,
            trace_paths: 10,
            seed: 3,
            ..SimConfig::default()
        };
        let rep = simulate_optimal(spec, 0.5, x1, &cfg, &RiccatiOptions::default()).map_err(e)?;
        let stat = rep.stationarity_max_residual.ok_or("no residuals")?;
        let term = rep.terminal_adjoint_residual.ok_or("no residuals")?;
        let jump = rep.jump_residual.ok_or("no residuals")?;
        let problem = SwitchTimeProblem::new(spec, RiccatiOptions::default()).map_err(e)?;
        let stage1 = problem.stage1(0.5).map_err(e)?;
        let law = OptimalFeedback::new(problem.stage2(), &stage1, cfg.n_steps).map_err(e)?;
        let traces = switchlq::simulate::path_traces(spec, 0.5, &law, x1, &cfg, 10).map_err(e)?;
        let max_x = traces.iter().map(|t| t.max_state_norm()).fold(0.0, f64::max);
        ensure(
            stat <= 1e-9 * (1.0 + max_x),
            format!("{name}: stationarity residual {stat:e}"),
        )?;
        ensure(term <= 1e-12, format!("{name}: terminal residual {term:e}"))?;
        ensure(jump <= 1e-9, format!("{name}: jump residual {jump:e}"))?;
        parts.push(format!("{name}: {stat:.1e}/{term:.1e}/{jump:.1e}"));
    }
    Ok(format!("stationarity/terminal/jump {}", parts.join(", ")))
}

fn criterion_10() -> Outcome {
    let suite = [
        ("certificate", Scalar1DParams::certificate_scenario()),
        ("noisy", Scalar1DParams::noisy_example()),
        ("pure_quadrature", Scalar1DParams::pure_quadrature()),
        ("identical_stages", Scalar1DParams::identical_stages()),
    ];
    let mut parts = Vec::new();
    for (name, params) in suite {
        let spec = params.to_spec().map_err(e)?;
        let problem = SwitchTimeProblem::new(&spec, RiccatiOptions::default()).map_err(e)?;
        let tol = 1e-6 * params.horizon;
        let a = problem.find_optimal_time(&[1.0], 65, tol).map_err(e)?;
        let b = problem.find_optimal_time(&[2.5], 65, tol).map_err(e)?;
        ensure(
            (a.r_bar - b.r_bar).abs() <= tol,
            format!("{name}: r̄ = {} vs {}", a.r_bar, b.r_bar),
        )?;
        parts.push(format!("{name} r̄={:.6}", a.r_bar));
    }
    Ok(parts.join(", "))
}

fn criterion_11() -> Outcome {
    let base = std::env::temp_dir().join(format!("switchlq-accept-{}", std::process::id()));
    let mut reports = Vec::new();
    for workers in [1, 4] {
        let mut cfg = RunConfig::certificate_scenario();
        cfg.problem = switchlq::cli::ProblemConfig::Scalar(Scalar1DParams::noisy_example());
        cfg.switch_time = Some(0.5);
        cfg.simulation.n_paths = 20_000;
        cfg.simulation.seed = 2024;
        cfg.simulation.workers = Some(workers);
        cfg.output.dir = base.join(format!("w{workers}"));
        let out = run(&cfg, Command::Simulate).map_err(e)?;
        let report = out
            .files
            .iter()
            .find(|f| f.ends_with("sim_report.txt"))
            .ok_or("no sim_report.txt")?;
        reports.push(fs::read(report).map_err(e)?);
    }
    let _ = fs::remove_dir_all(&base);
    ensure(reports[0] == reports[1], "sim_report.txt differs between 1 and 4 workers")?;
    Ok(format!("sim_report.txt identical for 1 and 4 workers ({} bytes)", reports[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("double-integrator stage-1 closed form", criterion_1),
        ("closed-form stage-2 solutions", criterion_2),
        ("RK4 convergence order", criterion_3),
        ("sensitivity vs finite difference", criterion_4),
        ("non-triviality certificate", criterion_5),
        ("boundary sign conditions", criterion_6),
        ("Monte Carlo value identity", criterion_7),
        ("optimality gap", criterion_8),
        ("adjoint residuals", criterion_9),
        ("switch time independent of x1", criterion_10),
        ("simulation determinism", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
