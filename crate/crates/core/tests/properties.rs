mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use nrfmpc::linsys::StateSpace;
use nrfmpc::optim::{solve_lp, solve_qp, QpProblem, QpStatus, SolverSettings};
use nrfmpc::sets::{pontryagin_diff, BoxSet, Set, SetSettings, Zonotope};

fn vector(n: usize, r: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-r..r, n).prop_map(DVector::from_vec)
}

fn matrix(rows: usize, cols: usize, r: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-r..r, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn zonotope(n: usize, g: usize) -> impl Strategy<Value = Zonotope> {
    (vector(n, 2.0), matrix(n, g, 1.0)).prop_map(|(c, g)| Zonotope::new(c, g).unwrap())
}

proptest! {
    #[test]
    fn forced_response_is_linear(a in matrix(3, 3, 0.6), b in matrix(3, 2, 1.0), u in prop::collection::vec(vector(2, 1.0), 6),
                                 v in prop::collection::vec(vector(2, 1.0), 6), alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let sys = StateSpace::network(a, b, DMatrix::zeros(3, 1)).unwrap();
        let mix: Vec<_> = u.iter().zip(&v).map(|(p, q)| p * alpha + q * beta).collect();
        let (yu, yv, ym) = (sys.forced_response(&u, 8).unwrap(), sys.forced_response(&v, 8).unwrap(), sys.forced_response(&mix, 8).unwrap());
        for k in 0..8 {
            prop_assert!((&ym[k] - (&yu[k] * alpha + &yv[k] * beta)).amax() < 1e-10);
        }
    }

    #[test]
    fn support_of_minkowski_sum_adds(za in zonotope(3, 4), zb in zonotope(3, 2), d in vector(3, 1.0)) {
        let sum = za.minkowski_sum(&zb).unwrap();
        let want = za.support(&d).unwrap() + zb.support(&d).unwrap();
        prop_assert!((sum.support(&d).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn support_of_linear_image_uses_transpose(z in zonotope(3, 5), m in matrix(2, 3, 1.5), d in vector(2, 1.0)) {
        let img = z.linear_image(&m).unwrap();
        prop_assert!((img.support(&d).unwrap() - z.support(&(m.transpose() * &d)).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn support_bounds_every_member(z in zonotope(3, 4), xi in vector(4, 1.0), d in vector(3, 1.0)) {
        let p = &z.center + &z.generators * xi;
        prop_assert!(p.dot(&d) <= z.support(&d).unwrap() + 1e-12);
        prop_assert!(z.interval_hull().contains(&p, 1e-12));
        prop_assert!(Set::Zonotope(z.clone()).contains(&p, &SetSettings::default()).unwrap());
    }

    #[test]
    fn polytope_support_matches_box(c in vector(3, 2.0), h in prop::collection::vec(0.1..2.0f64, 3), d in vector(3, 1.0)) {
        let b = BoxSet::new(c, DVector::from_vec(h)).unwrap();
        let lp = b.to_hpolytope().support(&d, &SetSettings::default()).unwrap();
        prop_assert!((lp - b.support(&d).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn pontryagin_difference_plus_subtrahend_stays_inside(h in prop::collection::vec(1.0..3.0f64, 2), z in zonotope(2, 3),
                                                          xi in vector(2, 1.0), eta in vector(3, 1.0)) {
        let z = Zonotope::new(z.center * 0.1, z.generators * 0.25).unwrap();
        let a = BoxSet::symmetric(&h).to_hpolytope();
        let diff = pontryagin_diff(&a, &Set::Zonotope(z.clone())).unwrap();
        let settings = SetSettings::default();
        prop_assume!(!diff.is_empty(&settings));
        let hull = diff.bounding_box(&settings).unwrap();
        let p = &hull.center + hull.half.component_mul(&xi);
        prop_assume!(diff.contains(&p, 0.0));
        let q = &p + &z.center + &z.generators * eta;
        prop_assert!(a.contains(&q, 1e-9));
    }

    #[test]
    fn box_erosion_inverts_sum(a in prop::collection::vec(0.5..3.0f64, 3), b in prop::collection::vec(0.0..0.5f64, 3)) {
        let (a, b) = (BoxSet::symmetric(&a), BoxSet::symmetric(&b));
        let e = a.erode(&b).unwrap().unwrap();
        let back = e.sum(&b).unwrap();
        prop_assert!((&back.half - &a.half).amax() < 1e-12);
    }

    #[test]
    fn qp_solution_satisfies_kkt_and_beats_feasible_points(m in matrix(4, 4, 1.0), q in vector(4, 2.0), a in matrix(6, 4, 1.0),
                                                           x0 in vector(4, 1.0), slack in prop::collection::vec(0.0..1.0f64, 6),
                                                           probes in prop::collection::vec((0.0..1.0f64, vector(4, 1.0)), 8)) {
        let p = m.transpose() * &m + DMatrix::identity(4, 4) * 0.1;
        let b = &a * &x0 + DVector::from_vec(slack);
        let prob = QpProblem { p, q, a_ineq: a, b_ineq: b, ..QpProblem::new(4) };
        let sol = solve_qp(&prob, &SolverSettings::default());
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(sol.primal_residual < 1e-8);
        let stat = &prob.p * &sol.x + &prob.q + prob.a_ineq.transpose() * &sol.lambda_ineq;
        prop_assert!(stat.amax() < 1e-6);
        prop_assert!(sol.lambda_ineq.iter().all(|l| *l >= -1e-9));
        prop_assert!(prob.objective(&sol.x) <= prob.objective(&x0) + 1e-9);
        for (t, dir) in probes {
            // Points on the segment from x0 along a direction, kept only while feasible.
            let y = &x0 + dir * t;
            if prob.primal_residual(&y) <= 0.0 {
                prop_assert!(prob.objective(&sol.x) <= prob.objective(&y) + 1e-9);
            }
        }
    }

    #[test]
    fn lp_over_box_reaches_negative_l1(c in vector(4, 3.0)) {
        let b = BoxSet::symmetric(&[1.0; 4]).to_hpolytope();
        let sol = solve_lp(&QpProblem::lp(c.clone(), b.h, b.rhs), &SolverSettings::default());
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!((sol.objective + c.lp_norm(1)).abs() < 1e-9);
    }

    #[test]
    fn area_update_matches_layer_update(w in vector(5, 1.0), uf in vector(2, 1.0), x in vector(2, 1.0)) {
        let f = common::two_area(0.01);
        let (uf_all, next_all) = f.layer.uf_step(&w, &uf, &x);
        for i in 0..2 {
            let r = f.layer.w_range(i);
            let (u, n) = f.layer.area_uf_step(i, &w.rows(r.start, r.len()).into_owned(), &uf, &x);
            prop_assert!((u[0] - uf_all[i]).abs() < 1e-15);
            prop_assert!((&n - next_all.rows(r.start, r.len())).amax() < 1e-14);
        }
    }
}
