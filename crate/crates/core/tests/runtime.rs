mod common;

use nalgebra::DVector;

use nrfmpc::design::{run_design, DesignArtifacts, DesignOptions};
use nrfmpc::nrf::stack;
use nrfmpc::optim::{QpStatus, SolverSettings};
use nrfmpc::runtime::*;

use common::{scalar, three_area, two_area, Fixture};

fn design(f: &Fixture, horizon: Option<(usize, usize)>) -> DesignArtifacts {
    let opts = DesignOptions { horizon_override: horizon, costs: Some(f.costs.clone()), ..Default::default() };
    run_design(&f.spec, &f.layer, &f.plant, &opts).unwrap()
}

fn ic_messages(f: &Fixture, x: &DVector<f64>, w: &DVector<f64>, round: usize) -> Vec<AreaMessage> {
    let p = &f.layer.partition;
    (0..p.n_areas())
        .map(|i| AreaMessage {
            sender: i,
            round,
            payload: Payload::Ic { x: x.rows(p.x_offset(i), p.x_sizes[i]).into_owned(), w: w.rows(f.layer.w_range(i).start, f.layer.n_wi(i)).into_owned() },
        })
        .collect()
}

#[test]
fn silent_bus_delivers_verbatim_to_neighborhoods() {
    let f = three_area();
    let x = DVector::from_vec(vec![0.1, -0.2, 0.3]);
    let w = DVector::from_vec(vec![0.01, 0.02, 0.03]);
    let sent = ic_messages(&f, &x, &w, 4);
    let mut streams = NoiseStreams::new(1, 3);
    let d = bus_round(&f.layer, 4, sent.clone(), &BusNoise::silent(&f.layer), &mut streams).unwrap();
    assert_eq!(d.sent, sent);
    assert_eq!(d.inboxes, vec![vec![0], vec![0, 1], vec![1, 2]]);
    assert_eq!(d.inbox(2), vec![&sent[1], &sent[2]]);
}

#[test]
fn bus_corruption_stays_in_noise_box_and_is_shared() {
    let f = three_area();
    let x = DVector::from_vec(vec![0.1, -0.2, 0.3]);
    let w = DVector::zeros(3);
    let noise = BusNoise::from_spec(&f.spec, &f.layer);
    let mut streams = NoiseStreams::new(9, 3);
    for round in 0..200 {
        let d = bus_round(&f.layer, round, ic_messages(&f, &x, &w, round), &noise, &mut streams).unwrap();
        for (i, m) in d.sent.iter().enumerate() {
            let Payload::Ic { x: xm, .. } = &m.payload else { panic!("payload kind") };
            assert!((xm[0] - x[i]).abs() <= 0.01 + 1e-15);
            assert!((d.noise[i][0] - (xm[0] - x[i])).abs() < 1e-15);
        }
        assert_eq!(d.inbox(1)[0], d.inbox(0)[0]);
    }
}

#[test]
fn bus_streams_are_reproducible() {
    let f = two_area(0.01);
    let noise = BusNoise::from_spec(&f.spec, &f.layer);
    let (x, w) = (DVector::zeros(2), DVector::zeros(5));
    let run = |seed| {
        let mut s = NoiseStreams::new(seed, 2);
        bus_round(&f.layer, 0, ic_messages(&f, &x, &w, 0), &noise, &mut s).unwrap().noise
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn bus_rejects_missing_and_duplicate_senders() {
    let f = three_area();
    let (x, w) = (DVector::zeros(3), DVector::zeros(3));
    let noise = BusNoise::silent(&f.layer);
    let mut s = NoiseStreams::new(0, 3);
    let mut msgs = ic_messages(&f, &x, &w, 0);
    msgs.remove(1);
    assert!(matches!(bus_round(&f.layer, 0, msgs, &noise, &mut s), Err(RuntimeError::MissingSender { area: 1, .. })));
    let mut msgs = ic_messages(&f, &x, &w, 0);
    msgs.push(msgs[2].clone());
    assert!(matches!(bus_round(&f.layer, 0, msgs, &noise, &mut s), Err(RuntimeError::DuplicateSender { area: 2, .. })));
}

#[test]
fn scalar_area_problem_is_a_projection() {
    let f = scalar(0.5, 0.01);
    let art = design(&f, Some((1, 0)));
    let ctl = Subcontroller::new(&art.areas[0], &f.layer, 1e-12);
    let mut st = SubcontrollerState { area: 0, warm: vec![], last: None };
    let hi = art.areas[0].step(1).rhs[0];
    let lo = -art.areas[0].step(1).rhs[1];
    for x0 in [-2.6, -1.0, 0.0, 0.3, 1.5, 2.4] {
        let theta = ctl.theta(&|_| stack(&[&DVector::from_element(1, x0), &DVector::zeros(1)]));
        assert!((theta[0][0] - 0.5 * x0).abs() < 1e-15);
        let (u1, u2, stats) = solve_area(&ctl, &mut st, &theta, 0, &SolverSettings::default(), false).unwrap();
        let want = 0.0f64.clamp(lo - 0.5 * x0, hi - 0.5 * x0);
        assert_eq!(stats.status, QpStatus::Optimal);
        assert!(u1[0].abs() < 1e-8, "u_s1 {}", u1[0]);
        assert!((u2[0] - want).abs() < 1e-8, "x0 {x0}: {} vs {want}", u2[0]);
    }
    let theta = ctl.theta(&|_| stack(&[&DVector::from_element(1, 3.2), &DVector::zeros(1)]));
    match solve_area(&ctl, &mut st, &theta, 7, &SolverSettings::default(), false) {
        Err(RuntimeError::FeasibilityBreach { area: 0, k: 7, status, .. }) => assert_eq!(status, QpStatus::Infeasible),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn zero_equilibrium_stays_at_rest() {
    let mut f = scalar(0.5, 0.0);
    f.spec.d = nrfmpc::sets::BoxSet::symmetric(&[0.0]);
    let art = design(&f, None);
    let ic = InitialState { x: DVector::zeros(1), w: DVector::zeros(1) };
    let scen = Scenario::Sequence(vec![DVector::zeros(1); 50]);
    let tr = simulate(&f.plant, &f.layer, &art, &f.spec, &scen, &ic, 3, 50, &RuntimeOptions::default()).unwrap();
    assert_eq!(tr.steps.len(), 50);
    for s in &tr.steps {
        assert!(s.x.amax() < 1e-12 && s.w.amax() < 1e-12 && s.u_s1.amax() < 1e-9 && s.u_s2.amax() < 1e-9);
    }
}

#[test]
fn initial_condition_outside_constraints_is_rejected() {
    let f = scalar(0.5, 0.01);
    let art = design(&f, Some((1, 0)));
    let ic = InitialState { x: DVector::from_element(1, 1.5), w: DVector::zeros(1) };
    let scen = Scenario::Sampled;
    let err = simulate(&f.plant, &f.layer, &art, &f.spec, &scen, &ic, 0, 10, &RuntimeOptions::default()).unwrap_err();
    assert!(matches!(err, RuntimeError::InitialCondition { area: 0, .. }));
    assert!(err.to_string().contains("area 1"));
}

#[test]
fn uncertified_design_needs_explicit_opt_in() {
    let f = scalar(0.0, 0.01);
    let art = design(&f, None);
    let ic = InitialState { x: DVector::zeros(1), w: DVector::zeros(1) };
    let scen = Scenario::Sampled;
    let err = simulate(&f.plant, &f.layer, &art, &f.spec, &scen, &ic, 0, 10, &RuntimeOptions::default()).unwrap_err();
    assert!(matches!(err, RuntimeError::Uncertified { ref areas } if areas == &[0]));
    let opts = RuntimeOptions { allow_uncertified: true, ..Default::default() };
    assert!(simulate(&f.plant, &f.layer, &art, &f.spec, &scen, &ic, 0, 10, &opts).is_ok());
}

fn same_signals(a: &TraceStep, b: &TraceStep, tol: f64) -> bool {
    let close = |x: &DVector<f64>, y: &DVector<f64>| (x - y).amax() <= tol;
    a.k == b.k
        && close(&a.x, &b.x)
        && close(&a.w, &b.w)
        && close(&a.u, &b.u)
        && close(&a.u_s1, &b.u_s1)
        && close(&a.u_s2, &b.u_s2)
        && a.zeta == b.zeta
        && a.beta_f == b.beta_f
        && a.beta_s1 == b.beta_s1
        && a.beta_s2 == b.beta_s2
        && a.nu_x == b.nu_x
        && a.nu_w == b.nu_w
        && a.d == b.d
}

#[test]
fn distributed_run_matches_assembled_closed_loop() {
    let f = three_area();
    let art = design(&f, Some((2, 1)));
    let ic = InitialState { x: DVector::from_vec(vec![0.3, -0.2, 0.1]), w: DVector::zeros(3) };
    let opts = RuntimeOptions { allow_uncertified: true, ..Default::default() };
    let a = simulate(&f.plant, &f.layer, &art, &f.spec, &Scenario::Sampled, &ic, 21, 200, &opts).unwrap();
    let b = simulate_monolithic(&f.plant, &f.layer, &art, &f.spec, &Scenario::Sampled, &ic, 21, 200, &opts).unwrap();
    assert!(a.breach.is_none() && b.breach.is_none());
    assert_eq!(a.steps.len(), 200);
    for (s, t) in a.steps.iter().zip(&b.steps) {
        assert!(same_signals(s, t, 1e-9), "step {}", s.k);
    }
}

#[test]
fn seeds_fix_every_signal() {
    let f = two_area(0.01);
    let art = design(&f, Some((1, 0)));
    let ic = InitialState { x: DVector::from_vec(vec![0.2, -0.1]), w: DVector::zeros(5) };
    let opts = RuntimeOptions { allow_uncertified: true, ..Default::default() };
    let run = |seed, parallel| {
        let o = RuntimeOptions { parallel, ..opts };
        simulate(&f.plant, &f.layer, &art, &f.spec, &Scenario::Sampled, &ic, seed, 100, &o).unwrap()
    };
    let (a, b, c) = (run(4, true), run(4, false), run(5, true));
    assert!(a.steps.iter().zip(&b.steps).all(|(s, t)| same_signals(s, t, 0.0)));
    assert!(a.steps.iter().zip(&c.steps).any(|(s, t)| s.zeta != t.zeta));
}

#[test]
fn csv_round_trip_is_exact() {
    let f = two_area(0.01);
    let art = design(&f, Some((1, 0)));
    let ic = InitialState { x: DVector::from_vec(vec![0.2, -0.1]), w: DVector::zeros(5) };
    let opts = RuntimeOptions { allow_uncertified: true, ..Default::default() };
    let tr = simulate(&f.plant, &f.layer, &art, &f.spec, &Scenario::Sampled, &ic, 2, 30, &opts).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let back = SimulationTrace::read_csv(&buf[..], 2).unwrap();
    assert_eq!(back.dims, tr.dims);
    for (b, t) in back.steps.iter().zip(&tr.steps) {
        assert!(same_signals(b, t, 0.0));
        assert_eq!(b.u_f, t.u_f);
        assert_eq!(b.qp_status, t.qp_status);
        // Solve times are stored with three decimals.
        assert!(b.qp_micros.iter().zip(&t.qp_micros).all(|(x, y)| (x - y).abs() <= 5e-4));
    }
    assert_eq!(back.steps.len(), tr.steps.len());
    let header = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("k,x_1,x_2,w_1"));
    assert!(header.ends_with("qp_micros_2"));
}

#[test]
fn corrupted_csv_is_reported() {
    let text = "k,x_1\n0,abc\n";
    assert!(matches!(SimulationTrace::read_csv(text.as_bytes(), 0), Err(RuntimeError::Format(_))));
}

#[test]
fn solve_time_summary_statistics() {
    let s = summarize_times(0, &[3.2, 1.0, 2.9, 7.0, 1.1]).unwrap();
    assert_eq!((s.samples, s.min, s.max), (5, 1.0, 7.0));
    assert!((s.mean - 3.04).abs() < 1e-12);
    assert_eq!(s.median, 2.9);
    // Rounded values 3, 1, 3, 7, 1: tie between 1 and 3 resolves to 1.
    assert_eq!(s.mode, 1.0);
    let even = summarize_times(1, &[4.0, 1.0, 2.0, 3.0]).unwrap();
    assert_eq!(even.median, 2.5);
    assert!(summarize_times(0, &[]).is_none());
}
