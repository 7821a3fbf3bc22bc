use nalgebra::DMatrix;
use switchlq::closed_form::{p2_closed_general, Scalar1DParams};
use switchlq::model::{CoeffTable, TimeGrid};
use switchlq::riccati::{solve_stage1, solve_stage2, stitched_terminal, value_at_zero};
use switchlq::{Error, ProblemSpec};

fn scalar() -> Scalar1DParams {
    Scalar1DParams::noisy_example()
}

#[test]
fn stage2_matches_closed_form() {
    let params = scalar();
    let spec = params.to_spec().unwrap();
    let sol = solve_stage2(&spec, 1000).unwrap();
    for i in 0..=20 {
        let t = i as f64 / 20.0;
        let numeric = sol.p_at(t).unwrap()[(1, 1)];
        let closed = p2_closed_general(t, &params).unwrap().value();
        assert!((numeric - closed).abs() < 1e-9, "t = {t}");
    }
}

#[test]
fn fourth_order_convergence() {
    let params = scalar();
    let spec = params.to_spec().unwrap();
    let closed = p2_closed_general(0.0, &params).unwrap().value();
    let err = |n| (solve_stage2(&spec, n).unwrap().p()[0][(1, 1)] - closed).abs();
    let (e1, e2) = (err(10), err(20));
    assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
}

#[test]
fn stage1_terminal_is_stitched() {
    let spec = scalar().to_spec().unwrap();
    let stage2 = solve_stage2(&spec, 500).unwrap();
    let r = 0.4;
    let p_r = stage2.p_at(r).unwrap();
    let stage1 = solve_stage1(&spec, r, &p_r, 500).unwrap();
    let expected = stitched_terminal(&spec, r, &p_r).unwrap();
    assert!((stage1.terminal() - &expected).amax() < 1e-14);
    assert_eq!(stage1.r(), r);
}

#[test]
fn zero_switch_time_gives_stitched_terminal_only() {
    let spec = scalar().to_spec().unwrap();
    let stage2 = solve_stage2(&spec, 200).unwrap();
    let p0 = stage2.p_at(0.0).unwrap();
    let stage1 = solve_stage1(&spec, 0.0, &p0, 200).unwrap();
    assert_eq!(stage1.p_initial(), stage1.terminal());
    let v = value_at_zero(&stage1, &[2.0]).unwrap();
    assert!((v - 0.5 * 4.0 * stage1.p_initial()[(0, 0)]).abs() < 1e-14);
}

#[test]
fn csv_header_and_rows() {
    let spec = scalar().to_spec().unwrap();
    let sol = solve_stage2(&spec, 10).unwrap();
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,P_0_0,P_0_1,P_1_0,P_1_1,Psi_0_0,Psi_0_1"
    );
    assert_eq!(lines.count(), 11);
}

fn blow_up_spec() -> ProblemSpec {
    // R = 0 with D = 1 and a negative terminal weight pushes R + DᵀPD below zero
    let s = |v: f64| CoeffTable::scalar(v);
    ProblemSpec {
        n1: 1,
        n2: 0,
        m: 1,
        horizon: TimeGrid::horizon(1.0, 10).unwrap(),
        a1: s(0.0),
        b1: s(0.0),
        c1: s(0.0),
        d1: s(0.0),
        a: s(0.0),
        b: s(0.0),
        c: s(0.0),
        d: s(1.0),
        q1: s(0.0),
        r1: s(1.0),
        q: s(0.0),
        r: s(0.0),
        g1: s(0.0),
        g: DMatrix::from_element(1, 1, -1.0),
        k: s(1.0),
        delta: 0.0,
    }
}

#[test]
fn indefinite_control_weight_is_reported() {
    match solve_stage2(&blow_up_spec(), 10) {
        Err(Error::RiccatiBlowUp { .. }) => {}
        other => panic!("expected blow-up, got {other:?}"),
    }
}
