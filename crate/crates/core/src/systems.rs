//! Worked example systems.
//!
//! [`SinExampleSystem`] is `x1' = a sin x2`, `x2' = -x1^2 + u`, linearized by
//! `phi(x) = (x1, a sin x2)` and `psi(x, u) = (-x1^2 + u) a cos x2` into a
//! double integrator ([`DoubleIntegrator`]).

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use crate::discretization::{explicit_euler_map, lift_to_source};
use crate::error::{Error, Result};
use crate::feedback::{FeedbackLinearization, LinearizingFeedback};
use crate::geometry::{ChartPoint, Diffeomorphism};
use crate::integrators::{ControlledVectorField, StepScheme};
use crate::sampling::StateControlBox;

/// Distance kept from `x2 = +-pi/2`, where `cos x2` vanishes.
pub const DOMAIN_MARGIN: f64 = 1e-9;

/// Default certification neighborhood: `|x1| <= 0.5`, `|x2| <= pi/3`, `|u| <= 20`.
pub const CERT_STATE_RADII: [f64; 2] = [0.5, std::f64::consts::FRAC_PI_3];
pub const CERT_CONTROL_RADIUS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinExampleSystem {
    a: f64,
}

fn in_chart(x: &DVector<f64>) -> bool {
    x.len() == 2 && x[1].abs() < FRAC_PI_2 - DOMAIN_MARGIN
}

impl SinExampleSystem {
    pub fn new(a: f64) -> Result<Self> {
        if a == 0.0 || !a.is_finite() {
            return Err(Error::InvalidArgument(format!("parameter a must be finite and nonzero, got {a}")));
        }
        Ok(SinExampleSystem { a })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        in_chart(x)
    }

    pub fn field(&self) -> ControlledVectorField {
        let a = self.a;
        ControlledVectorField::new("sin-example", 2, 1, move |x, u| {
            Ok(DVector::from_vec(vec![a * x[1].sin(), -x[0] * x[0] + u[0]]))
        })
        .with_jacobian_x(move |x, _| Ok(DMatrix::from_row_slice(2, 2, &[0.0, a * x[1].cos(), -2.0 * x[0], 0.0])))
    }

    /// `phi(x1, x2) = (x1, a sin x2)`.
    pub fn phi(&self) -> Diffeomorphism {
        let a = self.a;
        Diffeomorphism::new(
            "sin-chart",
            2,
            move |x| Ok(DVector::from_vec(vec![x[0], a * x[1].sin()])),
            move |y| {
                let s = y[1] / a;
                if !(s.abs() < 1.0) {
                    return Err(Error::domain(format!("arcsin argument {s} outside (-1, 1)")));
                }
                Ok(DVector::from_vec(vec![y[0], s.asin()]))
            },
        )
        .with_jacobian(move |x| Ok(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, a * x[1].cos()])))
        .with_domain(in_chart)
    }

    pub fn linearization(&self) -> FeedbackLinearization {
        let a = self.a;
        let di = DoubleIntegrator;
        FeedbackLinearization::new(
            self.phi(),
            move |x, u| Ok(DVector::from_element(1, (-x[0] * x[0] + u[0]) * a * x[1].cos())),
            di.a(),
            di.b(),
            (ChartPoint::zeros(2), DVector::zeros(1)),
        )
        .expect("double-integrator shapes")
        .with_psi_inverse(move |x, v| {
            let d = a * x[1].cos();
            if d.abs() < 1e-12 {
                return Err(Error::SingularDecoupling(format!("({}, {})", x[0], x[1])));
            }
            Ok(DVector::from_element(1, v[0] / d + x[0] * x[0]))
        })
    }

    /// Closed form of the explicit-Euler step lifted through `phi`.
    pub fn ees_closed_form(&self, x: &ChartPoint, u: &DVector<f64>, h: f64) -> Result<ChartPoint> {
        let (s, c) = x[1].sin_cos();
        let arg = s + h * (-x[0] * x[0] + u[0]) * c;
        if !(arg.abs() <= 1.0) {
            return Err(Error::domain(format!("arcsin argument {arg} outside [-1, 1]")));
        }
        let next = DVector::from_vec(vec![x[0] + h * self.a * s, arg.asin()]);
        if !in_chart(&next) {
            return Err(Error::domain(format!("x2 = {} leaves the chart", next[1])));
        }
        ChartPoint::from_vector(next)
    }

    /// The scheme induced by `lift_to_source(explicit Euler, phi)`, solved by Newton.
    pub fn ees_scheme_generic(&self) -> StepScheme {
        StepScheme::new(lift_to_source(&explicit_euler_map(), &self.phi()), self.field())
    }

    /// Same scheme with [`Self::ees_closed_form`] attached.
    pub fn ees_scheme(&self) -> StepScheme {
        let sys = *self;
        self.ees_scheme_generic().with_closed_form(move |x, u, h| sys.ees_closed_form(x, u, h))
    }

    pub fn feedback(&self, gain: &[f64]) -> Result<LinearizingFeedback> {
        if gain.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: gain.len() });
        }
        self.linearization().feedback(DMatrix::from_row_slice(1, 2, gain))
    }

    pub fn certification_region(&self) -> StateControlBox {
        self.linearization().neighborhood(CERT_STATE_RADII.to_vec(), CERT_CONTROL_RADIUS)
    }
}

/// `y1' = y2`, `y2' = v`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleIntegrator;

impl DoubleIntegrator {
    pub fn a(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
    }

    pub fn b(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
    }

    pub fn field(&self) -> ControlledVectorField {
        ControlledVectorField::linear(self.a(), self.b())
    }

    /// Exact flow over `[0, h]` with `v` held.
    pub fn exact_flow(&self, y: &ChartPoint, v: f64, h: f64) -> ChartPoint {
        ChartPoint::from_vector(DVector::from_vec(vec![y[0] + h * y[1] + 0.5 * h * h * v, y[1] + h * v]))
            .expect("finite inputs give finite flow")
    }
}
