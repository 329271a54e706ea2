mod common;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nrfmpc::design::*;
use nrfmpc::nrf::{assemble_closed_loop, theta_signals, IcReport};
use nrfmpc::sets::{BoxSet, Set, SetSettings};

use common::{scalar, three_area, two_area, uniform};

fn options(costs: &[StageCost]) -> DesignOptions {
    DesignOptions { costs: Some(costs.to_vec()), ..Default::default() }
}

#[test]
fn budget_tightening_removes_command_and_noise() {
    let mut f = scalar(5.0, 0.0);
    f.spec.u = vec![BoxSet::symmetric(&[10.0])];
    f.spec.beta_s2 = BoxSet::symmetric(&[0.01]);
    let uf = command_budget_tighten(&f.spec, &f.layer, 0).unwrap();
    assert!((uf.half[0] - 4.99).abs() < 1e-12);
    assert_eq!(uf.center[0], 0.0);
}

#[test]
fn oversized_budget_is_rejected() {
    let f = scalar(1.5, 0.0);
    match command_budget_tighten(&f.spec, &f.layer, 0) {
        Err(DesignError::EmptyCommandSet { area: 0, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn third_order_interval_recursion() {
    let f = two_area(0.01);
    let sets = nrf_state_sets(&f.layer, &f.spec).unwrap();
    // W_1 = U_f = 1 − 0.5 − 0.01; fed halves: commands 0.49 + 0.01, states 1 + 0.01 + 0.3 + 0.01.
    let (h1, hu, hx) = (0.49, 0.5, 1.32);
    let w3 = 0.01 * h1 + 0.01 * hx;
    let w2 = 0.02 * h1 + 0.01 * hu + 0.03 * hx + w3;
    let w = &sets[1].w;
    assert_eq!(w.dim(), 3);
    for (got, want) in w.half.iter().zip([h1, w2, w3]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!(w.center.iter().all(|c| *c == 0.0));
    let w0 = &sets[0].w;
    assert!((w0.half[1] - (0.05 * h1 + 0.05 * hx)).abs() < 1e-12);
}

#[test]
fn decoupled_scalar_certifies_up_to_rho_max() {
    let f = scalar(0.5, 0.01);
    let art = run_design(&f.spec, &f.layer, &f.plant, &options(&f.costs)).unwrap();
    assert!(art.certified);
    assert_eq!(art.areas[0].rho, 5);
    assert_eq!(art.areas[0].horizon, 5);
    assert!(art.areas[0].certificate.iter().all(|c| c.passed));
    let rhs = &art.areas[0].step(1).rhs;
    assert!((rhs[0] - 0.99).abs() < 1e-12 && (rhs[1] - 0.99).abs() < 1e-12);
}

#[test]
fn missing_command_budget_fails_first_step() {
    let f = scalar(0.0, 0.01);
    let art = run_design(&f.spec, &f.layer, &f.plant, &options(&f.costs)).unwrap();
    let a = &art.areas[0];
    assert_eq!(a.rho, 0);
    assert!(!a.certificate[0].passed);
    // 0.5·x + w reaches 1.5 while the tightened bound is 0.99.
    assert!(a.certificate[0].witness[0].abs() > 0.99);
    assert_eq!(art.certified(), Err(DesignError::Certificate { areas: vec![0] }));
}

#[test]
fn horizon_override_is_applied() {
    let f = scalar(0.0, 0.01);
    let opts = DesignOptions { horizon_override: Some((2, 1)), ..options(&f.costs) };
    let art = run_design(&f.spec, &f.layer, &f.plant, &opts).unwrap();
    assert_eq!((art.areas[0].horizon, art.areas[0].tail, art.areas[0].steps.len()), (2, 1, 2));
}

#[test]
fn artifacts_round_trip_through_json() {
    let f = two_area(0.01);
    let art = run_design(&f.spec, &f.layer, &f.plant, &options(&f.costs)).unwrap();
    let text = serde_json::to_string(&art).unwrap();
    let back: DesignArtifacts = serde_json::from_str(&text).unwrap();
    assert_eq!(back, art);
}

#[test]
fn stored_theta_maps_match_response_signals() {
    let f = three_area();
    let art = run_design(&f.spec, &f.layer, &f.plant, &DesignOptions { horizon_override: Some((3, 0)), ..options(&f.costs) }).unwrap();
    let cl = assemble_closed_loop(&f.plant, &f.layer).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reports: Vec<IcReport> = (0..3)
        .map(|j| IcReport { area: j, x: uniform(&mut rng, &BoxSet::symmetric(&[1.0])), w: uniform(&mut rng, &BoxSet::symmetric(&[0.5])) })
        .collect();
    for a in &art.areas {
        for t in 1..=3 {
            let mine = a.step(t).theta_value(&|j| nrfmpc::nrf::stack(&[&reports[j].x, &reports[j].w]));
            let nb: Vec<IcReport> = f.layer.partition.neighbors[a.area].iter().map(|&j| reports[j].clone()).collect();
            let (tx, tu) = theta_signals(&cl, &f.layer, a.area, &nb, t).unwrap();
            assert!((mine - nrfmpc::nrf::stack(&[&tx, &tu])).amax() < 1e-12);
        }
    }
}

/// Output rows of area `i` after `t` steps of the closed loop from `z0`,
/// with per-step commands and disturbances.
fn propagate(
    cl: &nrfmpc::nrf::ClosedLoop,
    rows: &[usize],
    z0: DVector<f64>,
    t: usize,
    mut input: impl FnMut(usize) -> (DVector<f64>, DVector<f64>, DVector<f64>),
) -> DVector<f64> {
    let mut z = z0;
    for s in 0..t {
        let (u1, u2, ds) = input(s);
        z = cl.step(&z, &u1, &u2, &ds);
    }
    (cl.c_cl() * z).select_rows(rows.iter())
}

#[test]
fn disturbance_noise_and_coupling_sets_contain_sampled_responses() {
    let f = three_area();
    let cl = assemble_closed_loop(&f.plant, &f.layer).unwrap();
    let p = &f.layer.partition;
    let nrf = nrf_state_sets(&f.layer, &f.spec).unwrap();
    let ic = perturbed_ic_sets(&f.layer, &f.spec, &nrf).unwrap();
    let ds = f.spec.d_s(p.n_x);
    let settings = SetSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let horizon = 3;
    let nz = cl.n_z();
    for i in 0..3 {
        let rows = cl.area_output_rows(p, i);
        let psi = disturbance_propagation(&cl, &f.layer, &f.spec, i, horizon);
        let noise = noise_sets(&cl, &f.layer, &f.spec, i, horizon);
        let delta = cross_coupling_sets(&cl, &f.layer, &f.spec, &nrf, i, horizon).unwrap();
        for t in 1..=horizon {
            for _ in 0..60 {
                let zero1 = DVector::zeros(p.n_x);
                let zero2 = DVector::zeros(p.n_u);
                let y = propagate(&cl, &rows, DVector::zeros(nz), t, |_| (zero1.clone(), zero2.clone(), uniform(&mut rng, &ds)));
                assert!(Set::Zonotope(psi[t - 1].clone()).contains(&y, &settings).unwrap(), "Ψ area {i} t {t}");

                let nu = uniform(&mut rng, &f.spec.v);
                let y = cl.ic_response_map(t).select_rows(rows.iter()) * nu;
                assert!(Set::Zonotope(noise[t - 1].clone()).contains(&y, &settings).unwrap(), "H area {i} t {t}");

                let mut z0 = DVector::zeros(nz);
                for l in (0..3).filter(|l| !p.neighbors[i].contains(l)) {
                    let cols = cl.area_state_cols(&f.layer, l);
                    let v = uniform(&mut rng, &ic[l].0.product(&ic[l].1));
                    for (k, &c) in cols.iter().enumerate() {
                        z0[c] = v[k];
                    }
                }
                let y = propagate(&cl, &rows, z0, t, |_| {
                    let mut u1 = DVector::zeros(p.n_x);
                    let mut u2 = DVector::zeros(p.n_u);
                    for j in (0..3).filter(|&j| j != i) {
                        u1.rows_mut(p.x_offset(j), p.x_sizes[j]).copy_from(&uniform(&mut rng, &f.spec.u_s1[j]));
                        u2.rows_mut(p.u_offset(j), p.u_sizes[j]).copy_from(&uniform(&mut rng, &f.spec.u_s2[j]));
                    }
                    (u1, u2, DVector::zeros(ds.dim()))
                });
                assert!(Set::Zonotope(delta[t - 1].clone()).contains(&y, &settings).unwrap(), "Δ area {i} t {t}");
            }
        }
    }
}

#[test]
fn tightened_rows_subtract_all_support_terms() {
    let f = three_area();
    let art = run_design(&f.spec, &f.layer, &f.plant, &DesignOptions { horizon_override: Some((2, 0)), ..options(&f.costs) }).unwrap();
    for a in &art.areas {
        for st in &a.steps {
            for r in 0..st.g.nrows() {
                let g = st.g.row(r).transpose();
                // Support of a zonotope by brute-force generator sign enumeration.
                let brute = |z: &nrfmpc::sets::Zonotope, d: &DVector<f64>| {
                    let gens = z.generators.ncols();
                    assert!(gens <= 16);
                    let coeff = z.generators.transpose() * d;
                    let mut best = f64::NEG_INFINITY;
                    for mask in 0u32..(1 << gens) {
                        let s: f64 = (0..gens).map(|k| if mask >> k & 1 == 1 { coeff[k] } else { -coeff[k] }).sum();
                        best = best.max(s);
                    }
                    z.center.dot(d) + if gens == 0 { 0.0 } else { best }
                };
                let want = a.base.rhs[r] - brute(&st.noise, &-&g) - brute(&st.psi, &g) - brute(&st.delta, &g);
                assert!((st.rhs[r] - want).abs() < 1e-12);
            }
        }
    }
}
