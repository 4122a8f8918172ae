use std::f64::consts::FRAC_PI_3;

use approx::assert_abs_diff_eq;
use lindisc::discretization::{adjoint, lift, lift_to_source, AlphaEulerFamily};
use lindisc::geometry::TangentVector;
use lindisc::reference::{integrate, integrate_hold, AdaptiveConfig};
use lindisc::sampling::SampleBox;
use lindisc::{explicit_euler_map, midpoint_map, ChartPoint, DoubleIntegrator, SinExampleSystem};
use nalgebra::DVector;
use proptest::prelude::*;

fn sys() -> SinExampleSystem {
    SinExampleSystem::new(1.0).unwrap()
}

fn base_box() -> SampleBox {
    SampleBox::symmetric(vec![0.0, 0.0], vec![0.5, FRAC_PI_3])
}

#[test]
fn lift_to_source_is_lift_through_the_inverse() {
    let phi = sys().phi();
    for r in [explicit_euler_map(), midpoint_map()] {
        let direct = lift_to_source(&r, &phi);
        let via_inverse = lift(&r, &phi.inverted());
        for tv in base_box().with_velocity_radius(0.1).tangent_samples(100, 1) {
            let a = direct.forward(&tv).unwrap();
            let b = via_inverse.forward(&tv).unwrap();
            assert!(a.distance(&b) <= 1e-12, "{}: {}", r.name(), a.distance(&b));
        }
    }
}

#[test]
fn chart_round_trip_and_jacobian() {
    let phi = sys().phi();
    for x in base_box().points(100, 2) {
        let back = phi.apply_inverse(&phi.apply(&x).unwrap()).unwrap();
        assert!((back.as_vector() - x.as_vector()).norm() <= 1e-12);
        let analytic = phi.jacobian(&x).unwrap();
        // independent oracle: d/dx2 sin x2 = cos x2
        assert_abs_diff_eq!(analytic[(1, 1)], x[1].cos(), epsilon = 1e-15);
        let fd = phi.jacobian_fd(&x, 1e-6).unwrap();
        assert!((analytic - fd).norm() <= 1e-8);
    }
}

#[test]
fn dormand_prince_matches_rotation() {
    let cfg = AdaptiveConfig::default();
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let rot = |_t: f64, x: &DVector<f64>| Ok(DVector::from_vec(vec![x[1], -x[0]]));
    let x = integrate(rot, &x0, 0.0, 5.0, &cfg, None).unwrap();
    assert_abs_diff_eq!(x[0], 5.0_f64.cos(), epsilon = 1e-8);
    assert_abs_diff_eq!(x[1], -5.0_f64.sin(), epsilon = 1e-8);
}

#[test]
fn held_flow_of_double_integrator_is_exact() {
    let di = DoubleIntegrator;
    let y0 = ChartPoint::new(vec![0.3, -0.7]).unwrap();
    let v = DVector::from_element(1, 2.5);
    let got = integrate_hold(&di.field(), &y0, &v, 0.0, 0.4, &AdaptiveConfig::default()).unwrap();
    let want = di.exact_flow(&y0, 2.5, 0.4);
    assert!((got.as_vector() - want.as_vector()).norm() <= 1e-13);
}

proptest! {
    #[test]
    fn alpha_adjoint_mirrors(alpha in 0.0f64..=1.0, x in -2.0f64..2.0, v in -2.0f64..2.0) {
        let r = AlphaEulerFamily::new(alpha).unwrap().map();
        let mirrored = AlphaEulerFamily::new(1.0 - alpha).unwrap().map();
        let tv = TangentVector::new(ChartPoint::new(vec![x]).unwrap(), DVector::from_element(1, v)).unwrap();
        let a = adjoint(&r).forward(&tv).unwrap();
        let b = mirrored.forward(&tv).unwrap();
        prop_assert!(a.distance(&b) <= 1e-15);
        // R_alpha(x, v) = (x - alpha v, x + (1 - alpha) v)
        let p = r.forward(&tv).unwrap();
        prop_assert!((p.first[0] - (x - alpha * v)).abs() <= 1e-15);
        prop_assert!((p.second[0] - (x + (1.0 - alpha) * v)).abs() <= 1e-15);
    }

    #[test]
    fn ees_step_is_linear_in_chart(x1 in -0.5f64..0.5, x2 in -1.0f64..1.0, u in -5.0f64..5.0, h in 1e-3f64..1e-2) {
        let s = sys();
        let x = ChartPoint::new(vec![x1, x2]).unwrap();
        let uu = DVector::from_element(1, u);
        let next = s.ees_closed_form(&x, &uu, h).unwrap();
        let y = s.phi().apply(&x).unwrap();
        let y_next = s.phi().apply(&next).unwrap();
        let v = s.linearization().psi(&x, &uu).unwrap()[0];
        prop_assert!((y_next[0] - (y[0] + h * y[1])).abs() <= 1e-12);
        prop_assert!((y_next[1] - (y[1] + h * v)).abs() <= 1e-12);
    }
}
