//! Feedback-linearizing data `(phi, psi, A, B)` and discrete-time certificates.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretization::{adjoint, DiscretizationMap};
use crate::error::{Error, Result};
use crate::geometry::{central_difference_jacobian, ChartPoint, Diffeomorphism};
use crate::integrators::{ControlAction, ControlledVectorField, Controller, SolverConfig, StepScheme};
use crate::sampling::{SampleBox, StateControlBox};

pub type PsiFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// Coordinate change `y = phi(x)` and input change `v = psi(x, u)` under which
/// the field becomes `y' = A y + B v`.
#[derive(Clone)]
pub struct FeedbackLinearization {
    phi: Diffeomorphism,
    psi: PsiFn,
    psi_inverse_u: Option<PsiFn>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    x0: ChartPoint,
    u0: DVector<f64>,
    inversion: SolverConfig,
}

impl fmt::Debug for FeedbackLinearization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeedbackLinearization")
            .field("phi", &self.phi)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("x0", &self.x0)
            .field("u0", &self.u0)
            .field("closed_form_inverse", &self.psi_inverse_u.is_some())
            .finish()
    }
}

impl FeedbackLinearization {
    pub fn new<P>(
        phi: Diffeomorphism,
        psi: P,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        equilibrium: (ChartPoint, DVector<f64>),
    ) -> Result<Self>
    where
        P: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        let n = phi.dim();
        if a.shape() != (n, n) {
            return Err(Error::InvalidArgument(format!("A has shape {:?}, expected ({n}, {n})", a.shape())));
        }
        if b.nrows() != n || b.ncols() != equilibrium.1.len() {
            return Err(Error::InvalidArgument(format!(
                "B has shape {:?}, expected ({n}, {})",
                b.shape(),
                equilibrium.1.len()
            )));
        }
        if equilibrium.0.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: equilibrium.0.dim() });
        }
        Ok(FeedbackLinearization {
            phi,
            psi: Arc::new(psi),
            psi_inverse_u: None,
            a,
            b,
            x0: equilibrium.0,
            u0: equilibrium.1,
            inversion: SolverConfig { tol: 1e-12, max_iter: 50, fd_step: 1e-7 },
        })
    }

    /// Closed-form `u = psi^{-1}(x, v)`; without it `psi` is inverted by Newton.
    pub fn with_psi_inverse<Q>(mut self, inv: Q) -> Self
    where
        Q: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        self.psi_inverse_u = Some(Arc::new(inv));
        self
    }

    pub fn without_psi_inverse(mut self) -> Self {
        self.psi_inverse_u = None;
        self
    }

    pub fn phi(&self) -> &Diffeomorphism {
        &self.phi
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn equilibrium(&self) -> (&ChartPoint, &DVector<f64>) {
        (&self.x0, &self.u0)
    }

    pub fn dim_state(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim_control(&self) -> usize {
        self.b.ncols()
    }

    pub fn psi(&self, x: &ChartPoint, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.dim_control() {
            return Err(Error::DimensionMismatch { expected: self.dim_control(), got: u.len() });
        }
        (self.psi)(x, u)
    }

    /// Solves `psi(x, u) = v` for `u`.
    pub fn control_from_v(&self, x: &ChartPoint, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim_control() {
            return Err(Error::DimensionMismatch { expected: self.dim_control(), got: v.len() });
        }
        if let Some(inv) = &self.psi_inverse_u {
            return inv(x, v);
        }
        let mut u = self.u0.clone();
        let cfg = self.inversion;
        for _ in 0..cfg.max_iter {
            let r = self.psi(x, &u)? - v;
            if r.norm() <= cfg.tol {
                return Ok(u);
            }
            let jac = central_difference_jacobian(|w| self.psi(x, w), &u, cfg.fd_step)?;
            let du = jac.lu().solve(&(-r)).ok_or_else(|| Error::SingularDecoupling(x.to_string()))?;
            u += du;
        }
        let residual = (self.psi(x, &u)? - v).norm();
        if residual <= cfg.tol {
            Ok(u)
        } else {
            Err(Error::SolverFailure { iterations: cfg.max_iter, residual })
        }
    }

    /// `y' = A y + B v` as a controlled field in `(y, v)`.
    pub fn linear_field(&self) -> ControlledVectorField {
        ControlledVectorField::linear(self.a.clone(), self.b.clone())
    }

    /// `X_phi(y, u) = D phi(phi^{-1} y) X(phi^{-1} y, u)`.
    pub fn pushforward_field(&self, field: &ControlledVectorField) -> ControlledVectorField {
        let phi = self.phi.clone();
        let field = field.clone();
        ControlledVectorField::new(
            format!("pushforward({})", field.name()),
            field.dim_state(),
            field.dim_control(),
            move |y, u| {
                let x = phi.apply_inverse(&ChartPoint::from_vector(y.clone())?)?;
                Ok(phi.jacobian(&x)? * field.eval(&x, u)?)
            },
        )
    }

    /// Max over samples of `|X_phi(y, u) - A y - B psi(phi^{-1} y, u)|`.
    pub fn linearization_residual(
        &self,
        field: &ControlledVectorField,
        samples: &[(ChartPoint, DVector<f64>)],
    ) -> Result<f64> {
        let pushed = self.pushforward_field(field);
        samples.iter().try_fold(0.0_f64, |acc, (x, u)| {
            let y = self.phi.apply(x)?;
            let lhs = pushed.eval(&y, u)?;
            let rhs = &self.a * y.as_vector() + &self.b * self.psi(x, u)?;
            Ok(acc.max((lhs - rhs).norm()))
        })
    }

    /// Joint box around the equilibrium with the given radii.
    pub fn neighborhood(&self, state_radii: Vec<f64>, control_radius: f64) -> StateControlBox {
        let m = self.dim_control();
        StateControlBox::new(
            SampleBox::symmetric(self.x0.to_vec(), state_radii),
            SampleBox::symmetric(self.u0.iter().copied().collect(), vec![control_radius; m]),
        )
    }

    pub fn feedback(&self, gain: DMatrix<f64>) -> Result<LinearizingFeedback> {
        LinearizingFeedback::new(self.clone(), gain)
    }
}

/// `v = K y`.
pub fn state_feedback(gain: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if gain.ncols() != y.len() {
        return Err(Error::DimensionMismatch { expected: gain.ncols(), got: y.len() });
    }
    Ok(gain * y)
}

/// Linear state feedback in the linearizing coordinates, `u = psi^{-1}(x, K phi(x))`.
#[derive(Debug, Clone)]
pub struct LinearizingFeedback {
    fl: FeedbackLinearization,
    gain: DMatrix<f64>,
}

impl LinearizingFeedback {
    pub fn new(fl: FeedbackLinearization, gain: DMatrix<f64>) -> Result<Self> {
        if gain.shape() != (fl.dim_control(), fl.dim_state()) {
            return Err(Error::InvalidArgument(format!(
                "gain has shape {:?}, expected ({}, {})",
                gain.shape(),
                fl.dim_control(),
                fl.dim_state()
            )));
        }
        Ok(LinearizingFeedback { fl, gain })
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn linearization(&self) -> &FeedbackLinearization {
        &self.fl
    }
}

impl Controller for LinearizingFeedback {
    fn control(&self, x: &ChartPoint) -> Result<ControlAction> {
        let y = self.fl.phi().apply(x)?;
        let v = state_feedback(&self.gain, &y)?;
        let u = self.fl.control_from_v(x, &v)?;
        Ok(ControlAction { u, v: Some(v) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `y_{k+1} = A_h y_k + B_h v_k`
    Forward,
    /// `y_k = A_{-h} y_{k+1} + B_{-h} v_k`
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLinearSystem {
    pub a_h: DMatrix<f64>,
    pub b_h: DMatrix<f64>,
    pub h: f64,
    pub direction: Direction,
}

impl DiscreteLinearSystem {
    pub fn apply(&self, y: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.a_h * y + &self.b_h * v
    }
}

/// Extracts the affine step relation of `R` on the linear field `y' = A y + B v` by probing.
///
/// Forward: the map `(y_k, v_k) -> y_{k+1}`. Backward: `(y_{k+1}, v_k) -> y_k`,
/// which is the step of `R^*` with `-h`.
pub fn discrete_matrices(
    r: &DiscretizationMap,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    h: f64,
    direction: Direction,
) -> Result<DiscreteLinearSystem> {
    if !r.declared_linearity_preserving() {
        return Err(Error::InvalidArgument(format!("{} is not declared linearity preserving", r.name())));
    }
    let field = ControlledVectorField::linear(a.clone(), b.clone());
    let (scheme, step_h) = match direction {
        Direction::Forward => (StepScheme::new(r.clone(), field), h),
        Direction::Backward => (StepScheme::new(adjoint(r), field), -h),
    };
    let (n, m) = (a.nrows(), b.ncols());
    let step = |y: &DVector<f64>, v: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(scheme.step(&ChartPoint::from_vector(y.clone())?, v, step_h)?.into_vector())
    };
    let offset = step(&DVector::zeros(n), &DVector::zeros(m))?;
    let mut a_h = DMatrix::zeros(n, n);
    for j in 0..n {
        let col = step(&DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 }), &DVector::zeros(m))? - &offset;
        a_h.set_column(j, &col);
    }
    let mut b_h = DMatrix::zeros(n, m);
    for j in 0..m {
        let col = step(&DVector::zeros(n), &DVector::from_fn(m, |i, _| if i == j { 1.0 } else { 0.0 }))? - &offset;
        b_h.set_column(j, &col);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut residual = offset.norm();
    for _ in 0..16 {
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let v = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..=1.0));
        let predicted = &a_h * &y + &b_h * &v + &offset;
        residual = residual.max((step(&y, &v)? - predicted).norm());
    }
    if residual > 1e-10 {
        return Err(Error::NotLinear { residual });
    }
    Ok(DiscreteLinearSystem { a_h, b_h, h, direction })
}

/// Outcome of a discrete linearizability check over sampled `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertReport {
    pub direction: Direction,
    pub h: f64,
    pub samples_used: usize,
    /// Draws discarded because the step was undefined there.
    pub rejected: usize,
    pub max_residual: f64,
    pub tolerance: f64,
}

impl CertReport {
    pub fn passed(&self) -> bool {
        self.samples_used > 0 && self.max_residual <= self.tolerance
    }
}

fn linearizability_residual<F>(
    step: &F,
    fl: &FeedbackLinearization,
    dls: &DiscreteLinearSystem,
    x: &ChartPoint,
    u: &DVector<f64>,
) -> Result<f64>
where
    F: Fn(&ChartPoint, &DVector<f64>) -> Result<ChartPoint>,
{
    let x_next = step(x, u)?;
    let y = fl.phi().apply(x)?;
    let y_next = fl.phi().apply(&x_next)?;
    let r = match dls.direction {
        Direction::Forward => y_next.as_vector() - dls.apply(&y, &fl.psi(x, u)?),
        Direction::Backward => y.as_vector() - dls.apply(&y_next, &fl.psi(&x_next, u)?),
    };
    Ok(r.norm())
}

/// Checks `phi(F(x,u)) = A_h phi(x) + B_h psi(x,u)` (forward) or
/// `phi(x) = A_{-h} phi(x') + B_{-h} psi(x',u)` with `x' = F^*(x,u)` (backward).
pub fn verify_discrete_linearizability<F>(
    step: F,
    fl: &FeedbackLinearization,
    dls: &DiscreteLinearSystem,
    samples: &[(ChartPoint, DVector<f64>)],
    tol: f64,
) -> Result<CertReport>
where
    F: Fn(&ChartPoint, &DVector<f64>) -> Result<ChartPoint>,
{
    let mut max_residual: f64 = 0.0;
    for (x, u) in samples {
        max_residual = max_residual.max(linearizability_residual(&step, fl, dls, x, u)?);
    }
    Ok(CertReport {
        direction: dls.direction,
        h: dls.h,
        samples_used: samples.len(),
        rejected: 0,
        max_residual,
        tolerance: tol,
    })
}

/// Like [`verify_discrete_linearizability`], drawing `count` samples from
/// `region` and discarding draws where the step is undefined.
pub fn certify_on_region<F>(
    step: F,
    fl: &FeedbackLinearization,
    dls: &DiscreteLinearSystem,
    region: &StateControlBox,
    count: usize,
    seed: u64,
    tol: f64,
) -> Result<CertReport>
where
    F: Fn(&ChartPoint, &DVector<f64>) -> Result<ChartPoint>,
{
    let mut report = CertReport {
        direction: dls.direction,
        h: dls.h,
        samples_used: 0,
        rejected: 0,
        max_residual: 0.0,
        tolerance: tol,
    };
    let max_draws = 50 * count.max(1);
    for (x, u) in region.stream(seed).take(max_draws) {
        if report.samples_used == count {
            break;
        }
        if !fl.phi().in_domain(&x) {
            report.rejected += 1;
            continue;
        }
        match linearizability_residual(&step, fl, dls, &x, &u) {
            Ok(r) => {
                report.samples_used += 1;
                report.max_residual = report.max_residual.max(r);
            }
            Err(e) if e.is_numeric() => report.rejected += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{explicit_euler_map, implicit_euler_map, midpoint_map};
    use approx::assert_abs_diff_eq;

    fn di() -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))
    }

    #[test]
    fn explicit_euler_matrices() {
        let (a, b) = di();
        let d = discrete_matrices(&explicit_euler_map(), &a, &b, 0.01, Direction::Forward).unwrap();
        assert_eq!(d.a_h, DMatrix::from_row_slice(2, 2, &[1.0, 0.01, 0.0, 1.0]));
        assert_eq!(d.b_h, DMatrix::from_column_slice(2, 1, &[0.0, 0.01]));
    }

    #[test]
    fn zero_step_gives_identity() {
        let (a, b) = di();
        for r in [explicit_euler_map(), implicit_euler_map(), midpoint_map()] {
            let d = discrete_matrices(&r, &a, &b, 0.0, Direction::Forward).unwrap();
            assert_eq!(d.a_h, DMatrix::identity(2, 2));
            assert_eq!(d.b_h, DMatrix::zeros(2, 1));
        }
    }

    #[test]
    fn implicit_euler_backward_matrices() {
        // oracle: x_{k+1} - h X(x_{k+1}, u_k) = x_k, matched coefficient by coefficient
        let (a, b) = di();
        let d = discrete_matrices(&implicit_euler_map(), &a, &b, 0.1, Direction::Backward).unwrap();
        let expected_a = DMatrix::identity(2, 2) - &a * 0.1;
        let expected_b = &b * -0.1;
        assert!((&d.a_h - &expected_a).norm() <= 1e-12);
        assert!((&d.b_h - &expected_b).norm() <= 1e-12);
        assert_abs_diff_eq!(d.a_h[(0, 1)], -0.1, epsilon = 1e-12);
    }

    #[test]
    fn extraction_is_idempotent() {
        let (a, b) = di();
        let d = discrete_matrices(&midpoint_map(), &a, &b, 0.2, Direction::Forward).unwrap();
        let (ah, bh) = (d.a_h.clone(), d.b_h.clone());
        // re-probe the relation built from (A_h, B_h)
        let reprobe = |y: &DVector<f64>, v: &DVector<f64>| &ah * y + &bh * v;
        let cols: Vec<_> =
            (0..2).map(|j| reprobe(&DVector::from_fn(2, |i, _| (i == j) as u8 as f64), &DVector::zeros(1))).collect();
        let a2 = DMatrix::from_columns(&cols);
        let b2 = reprobe(&DVector::zeros(2), &DVector::from_element(1, 1.0));
        assert!((a2 - &d.a_h).norm() <= 1e-12);
        assert!((b2 - d.b_h.column(0)).norm() <= 1e-12);
    }

    #[test]
    fn non_preserving_map_is_refused() {
        let (a, b) = di();
        let m = DiscretizationMap::new(
            "opaque",
            |_tv: &crate::geometry::TangentVector| unreachable!(),
            |_p: &crate::geometry::PointPair| unreachable!(),
        );
        assert!(discrete_matrices(&m, &a, &b, 0.1, Direction::Forward).is_err());
    }

    #[test]
    fn state_feedback_values() {
        let k = DMatrix::from_row_slice(1, 2, &[-10.0, -10.0]);
        assert_eq!(state_feedback(&k, &DVector::from_vec(vec![0.25, 0.5])).unwrap()[0], -7.5);
        assert_eq!(state_feedback(&k, &DVector::zeros(2)).unwrap()[0], 0.0);
        let zero = DMatrix::zeros(1, 2);
        assert_eq!(state_feedback(&zero, &DVector::from_vec(vec![3.0, -2.0])).unwrap()[0], 0.0);
        assert!(state_feedback(&k, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn newton_inversion_of_psi() {
        let fl = FeedbackLinearization::new(
            Diffeomorphism::identity(1),
            |x, u| Ok(DVector::from_element(1, u[0] + u[0].powi(3) + x[0])),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            (ChartPoint::zeros(1), DVector::zeros(1)),
        )
        .unwrap();
        let x = ChartPoint::new([0.2]).unwrap();
        let u = fl.control_from_v(&x, &DVector::from_element(1, 2.2)).unwrap();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn newton_inversion_detects_singular_decoupling() {
        let fl = FeedbackLinearization::new(
            Diffeomorphism::identity(1),
            |x, u| Ok(DVector::from_element(1, x[0] * u[0])),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            (ChartPoint::zeros(1), DVector::zeros(1)),
        )
        .unwrap();
        let err = fl.control_from_v(&ChartPoint::zeros(1), &DVector::from_element(1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SingularDecoupling(_)));
    }
}
