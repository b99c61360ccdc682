use proptest::prelude::*;
use rpofsf::lyapunov::{Certificate, CertificateInputs};
use rpofsf::model::{rk4_step, ConstraintSet, MassSpringDamper, MassSpringDamperParams, SystemModel};
use rpofsf::observer::{select_estimate, Candidate, EstimateSource};
use rpofsf::Vector;

fn golden() -> (SystemModel, Certificate, ConstraintSet) {
    let model = SystemModel::mass_spring_damper(MassSpringDamperParams::default(), 0.25, 0.01).unwrap();
    let cert = CertificateInputs::mass_spring_damper_golden().build(&model).unwrap();
    let z = ConstraintSet::from_box(&[-0.85, -2.0], &[0.85, 2.0], &[-6.0], &[6.0]).unwrap();
    (model, cert, z)
}

fn integrate(x0: &Vector, u: f64, dt: f64, steps: usize) -> Vector {
    let f = MassSpringDamper { params: MassSpringDamperParams::default() };
    let u = Vector::from_element(1, u);
    let mut x = x0.clone();
    for _ in 0..steps {
        x = rk4_step(&f, dt, &x, &u).unwrap();
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn closed_form_matches_iterated_updates(e0 in 0.0f64..=1.0, i in 0usize..=100) {
        let (model, cert, _) = golden();
        let w = model.w_bar();
        let mut e = e0;
        for _ in 0..i {
            e = cert.bound_update_offline(e, w);
        }
        prop_assert!((cert.bound_predict(e0, i, w) - e).abs() <= 1e-12);
    }

    #[test]
    fn updates_are_monotone(a in 0.0f64..2.0, b in 0.0f64..2.0, s in 0.0f64..2.0, w in 0.0f64..0.1) {
        let (_, cert, z) = golden();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(cert.bound_update_offline(lo, w) <= cert.bound_update_offline(hi, w));
        prop_assert!(cert.bound_update_online(lo, w, 0.0, 0.0) <= cert.bound_update_online(hi, w, 0.0, 0.0));
        prop_assert!(cert.tube_update(lo, s, w) <= cert.tube_update(hi, s, w));
        prop_assert!(cert.tube_update(s, lo, w) <= cert.tube_update(s, hi, w));
        for row in z.rows() {
            prop_assert!(cert.tightening_margin(row, lo, s) <= cert.tightening_margin(row, hi, s));
            prop_assert!(cert.tightening_margin(row, s, lo) <= cert.tightening_margin(row, s, hi));
        }
    }

    #[test]
    fn eigenvalue_envelope_sandwiches_the_norm(d1 in -5.0f64..5.0, d2 in -5.0f64..5.0) {
        let (_, cert, _) = golden();
        let d = Vector::from_column_slice(&[d1, d2]);
        for v in [&cert.v_o, &cert.v_s] {
            let (lo, hi) = v.envelope();
            let n = v.norm(&d);
            prop_assert!(lo * d.norm() <= n * (1.0 + 1e-12) + 1e-15);
            prop_assert!(n <= hi * d.norm() * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn margin_dominates_sampled_support(theta in 0.0f64..std::f64::consts::TAU, r in 0.0f64..=1.0, e in 0.0f64..0.5) {
        let (_, cert, z) = golden();
        // a point of the ellipsoid {‖d‖_{P_o} ≤ e}
        let dir = Vector::from_column_slice(&[theta.cos(), theta.sin()]);
        let d = dir.clone() * (r * e / cert.v_o.norm(&dir));
        prop_assert!(cert.v_o.norm(&d) <= e * (1.0 + 1e-12));
        for row in z.rows() {
            prop_assert!(row.c_x.dot(&d) <= cert.tightening_margin(row, 0.0, e) + 1e-12);
        }
    }

    #[test]
    fn rk4_is_fourth_order(batch in prop::collection::vec((-0.85f64..0.85, -2.0f64..2.0, -6.0f64..6.0), 16)) {
        // error over one interval: one step of dt against two of dt/2.
        // Single samples can sit where the leading error term nearly
        // cancels, so the median over a batch is checked.
        let dt = 0.1;
        let mut ratios: Vec<f64> = batch
            .iter()
            .map(|&(x1, x2, u)| {
                let x0 = Vector::from_column_slice(&[x1, x2]);
                let reference = integrate(&x0, u, dt / 100.0, 100);
                let coarse = (integrate(&x0, u, dt, 1) - &reference).norm();
                let fine = (integrate(&x0, u, dt / 2.0, 2) - &reference).norm();
                coarse / fine
            })
            .filter(|r| r.is_finite())
            .collect();
        prop_assume!(ratios.len() >= 8);
        ratios.sort_by(f64::total_cmp);
        let median = ratios[ratios.len() / 2];
        prop_assert!((12.0..=20.0).contains(&median), "median ratio {median}");
    }

    #[test]
    fn selection_returns_the_tightest_bound(b in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let cands: Vec<Candidate> = b
            .iter()
            .enumerate()
            .map(|(i, &bound)| Candidate {
                bound,
                x_hat: Vector::from_element(2, i as f64),
                source: if i % 2 == 0 { EstimateSource::Luenberger } else { EstimateSource::Mhe },
            })
            .collect();
        let sel = select_estimate(&cands, 3).unwrap();
        prop_assert_eq!(sel.e_bar, b.iter().copied().fold(f64::INFINITY, f64::min));
    }
}
