#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use trssqp::merit::{
    accept_step, ared, pred, pred_threshold, radius_growth_test, theta, update_merit_param, MeritConfig,
};
use trssqp::Error;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

#[test]
fn theta_by_order() {
    assert_eq!(theta(0, 1e-4, 1e-2), 2e-4);
    assert!((theta(1, 1e-4, 1e-2) - (2e-4 + 1e-3)).abs() <= 1e-18);
}

#[test]
fn acceptance_ratio() {
    // (ared - theta) / pred = (-0.5 - 0) / -1 = 0.5 >= 0.4
    assert!(accept_step(-0.5, -1.0, 0, 0.0, 0.0, 0.4));
    assert!(!accept_step(-0.3, -1.0, 0, 0.0, 0.0, 0.4));
    // The allowance 2 eps_f loosens the test.
    assert!(accept_step(-0.3, -1.0, 0, 0.05, 0.0, 0.4));
    assert!(!accept_step(-1.0, 0.0, 0, 0.0, 0.0, 0.4));
}

#[test]
fn ared_uses_merit() {
    let a = ared(1.0, 2.0, &v(&[0.5]), &v(&[1.0]), 2.0);
    assert_eq!(a, -1.0 + 2.0 * (0.5 - 1.0));
}

#[test]
fn growth_test() {
    assert!(radius_growth_test(1.0, 2.0, 0.0, 0.4, 1.0));
    assert!(!radius_growth_test(0.1, 2.0, 0.0, 0.4, 1.0));
    assert!(radius_growth_test(0.1, 2.0, 0.5, 0.4, 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    // Whenever a step reduces linearized infeasibility, escalation terminates
    // with the threshold met and mu in the geometric ladder mu_in * rho^j.
    #[test]
    fn escalation_meets_threshold(
        gbar in prop::collection::vec(-5.0f64..5.0, 3),
        dx in prop::collection::vec(-1.0f64..1.0, 3),
        c0 in 0.1f64..2.0,
        mu_in in 0.5f64..4.0,
        full in 0.0f64..3.0,
    ) {
        let gbar = DVector::from_vec(gbar);
        let g_mat = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, -0.2]);
        let dx = DVector::from_vec(dx);
        let c = v(&[c0]);
        let lin = (&c + &g_mat * &dx).norm() - c.norm();
        prop_assume!(lin < -1e-3);
        let h = DMatrix::identity(3, 3);
        let cfg = MeritConfig::default();
        let up = update_merit_param(&gbar, &h, &dx, &c, &g_mat, full, 1.0, 0.0, 1.0, mu_in, &cfg).unwrap();
        prop_assert!(up.threshold_met);
        prop_assert!(up.mu >= mu_in);
        prop_assert!(up.pred <= up.threshold);
        prop_assert!(up.threshold <= 0.0);
        let j = (up.mu / mu_in).ln() / cfg.rho.ln();
        prop_assert!((j - j.round()).abs() <= 1e-9);
        prop_assert_eq!(j.round() as u32, up.escalations);
        prop_assert!((up.pred - pred(&gbar, &h, &dx, &c, &g_mat, up.mu)).abs() <= 1e-12 * (1.0 + up.pred.abs()));
        if up.escalations > 0 {
            let below = up.mu / cfg.rho;
            prop_assert!(pred(&gbar, &h, &dx, &c, &g_mat, below) > up.threshold);
        }
    }
}

#[test]
fn threshold_takes_the_larger_arm() {
    // gradient arm: 2 * min(1, 2/4) = 1; eigen arm: 0.5 * 1 * (1 + 1) = 1 -> tie.
    let t = pred_threshold(2.0, 4.0, 0.5, 1.0, 1.0, 0.5);
    assert_eq!(t, -0.25);
    let t = pred_threshold(2.0, 4.0, 2.0, 1.0, 1.0, 0.5);
    assert_eq!(t, -0.5 * 0.5 * 4.0);
}

#[test]
fn invalid_configs() {
    let bad = MeritConfig {
        rho: 1.0,
        ..MeritConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = MeritConfig {
        eta: 1.0,
        ..MeritConfig::default()
    };
    assert!(bad.validate().is_err());
}
