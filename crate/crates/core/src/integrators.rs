//! One-step maps induced by discretization maps, and closed-loop steppers.
//!
//! Given a map `R` and a controlled field `X`, the scheme
//! `R^{-1}(x_k, x_{k+1}) = h X(tau(R^{-1}(x_k, x_{k+1})), u_k)` is solved for
//! `x_{k+1}` with Newton's method (or a closed form when one is attached).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::discretization::{adjoint, DiscretizationMap};
use crate::error::{Error, Result};
use crate::geometry::{central_difference_jacobian, ChartPoint, PointPair};
use crate::reference::ControlSchedule;

pub type FieldFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
pub type FieldJacobianFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;
pub type ClosedFormStep = Arc<dyn Fn(&ChartPoint, &DVector<f64>, f64) -> Result<ChartPoint> + Send + Sync>;

/// `x' = X(x, u)` on an `n`-dimensional chart with `m` controls.
#[derive(Clone)]
pub struct ControlledVectorField {
    name: String,
    dim_state: usize,
    dim_control: usize,
    eval: FieldFn,
    jacobian_x: Option<FieldJacobianFn>,
}

impl fmt::Debug for ControlledVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledVectorField")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_control", &self.dim_control)
            .finish()
    }
}

impl ControlledVectorField {
    pub fn new<F>(name: impl Into<String>, dim_state: usize, dim_control: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        ControlledVectorField { name: name.into(), dim_state, dim_control, eval: Arc::new(eval), jacobian_x: None }
    }

    pub fn with_jacobian_x<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jacobian_x = Some(Arc::new(jac));
        self
    }

    /// `X(x, u) = A x + B u`.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "A must be square");
        assert_eq!(a.nrows(), b.nrows(), "A and B row counts differ");
        let (n, m) = (a.nrows(), b.ncols());
        let jac = a.clone();
        ControlledVectorField::new("linear", n, m, move |x, u| Ok(&a * x + &b * u))
            .with_jacobian_x(move |_, _| Ok(jac.clone()))
    }

    /// `X == 0`.
    pub fn zero(n: usize, m: usize) -> Self {
        ControlledVectorField::new("zero", n, m, move |_, _| Ok(DVector::zeros(n)))
            .with_jacobian_x(move |_, _| Ok(DMatrix::zeros(n, n)))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_control(&self) -> usize {
        self.dim_control
    }

    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim_state {
            return Err(Error::DimensionMismatch { expected: self.dim_state, got: x.len() });
        }
        if u.len() != self.dim_control {
            return Err(Error::DimensionMismatch { expected: self.dim_control, got: u.len() });
        }
        let v = (self.eval)(x, u)?;
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain(format!("{} is not finite at {:?}", self.name, x.as_slice())));
        }
        Ok(v)
    }

    /// State Jacobian, analytic when supplied and central differences otherwise.
    pub fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>, fd_step: f64) -> Result<DMatrix<f64>> {
        match &self.jacobian_x {
            Some(j) => j(x, u),
            None => central_difference_jacobian(|p| self.eval(p, u), x, fd_step),
        }
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian_x.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Residual norm accepted as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Step for finite-difference Jacobians.
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-12, max_iter: 50, fd_step: 1e-7 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.fd_step > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

/// Damped Newton iteration for `residual(x) = 0`.
///
/// Steps that leave the residual's domain are halved up to ten times.
pub fn newton_solve<R, J>(
    residual: R,
    jacobian: Option<J>,
    x0: DVector<f64>,
    cfg: &SolverConfig,
) -> Result<DVector<f64>>
where
    R: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let mut x = x0;
    let mut r = residual(&x)?;
    let mut norm = r.norm();
    for iter in 0..cfg.max_iter {
        if norm <= cfg.tol {
            return Ok(x);
        }
        let jac = match &jacobian {
            Some(j) => j(&x)?,
            None => central_difference_jacobian(&residual, &x, cfg.fd_step)?,
        };
        let dx = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| Error::SingularJacobian(format!("Newton iteration {iter} at {:?}", x.as_slice())))?;
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut last_err = None;
        for _ in 0..=10 {
            let trial = &x + &dx * lambda;
            match residual(&trial) {
                Ok(rt) => {
                    accepted = Some((trial, rt));
                    break;
                }
                Err(e) => {
                    last_err = Some(e);
                    lambda *= 0.5;
                }
            }
        }
        match accepted {
            Some((xt, rt)) => {
                x = xt;
                norm = rt.norm();
                r = rt;
            }
            None => return Err(last_err.expect("at least one trial")),
        }
    }
    if norm <= cfg.tol {
        Ok(x)
    } else {
        Err(Error::SolverFailure { iterations: cfg.max_iter, residual: norm })
    }
}

/// A solvable one-step map `x_{k+1} = F(x_k, u_k; h)`.
#[derive(Clone)]
pub struct StepScheme {
    map: DiscretizationMap,
    field: ControlledVectorField,
    solver: SolverConfig,
    closed_form: Option<ClosedFormStep>,
}

impl fmt::Debug for StepScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StepScheme")
            .field("map", &self.map.name())
            .field("field", &self.field.name())
            .field("solver", &self.solver)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl StepScheme {
    pub fn new(map: DiscretizationMap, field: ControlledVectorField) -> Self {
        StepScheme { map, field, solver: SolverConfig::default(), closed_form: None }
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    /// Attaches an explicit solution of the implicit relation, used instead of Newton.
    pub fn with_closed_form<C>(mut self, closed_form: C) -> Self
    where
        C: Fn(&ChartPoint, &DVector<f64>, f64) -> Result<ChartPoint> + Send + Sync + 'static,
    {
        self.closed_form = Some(Arc::new(closed_form));
        self
    }

    pub fn without_closed_form(mut self) -> Self {
        self.closed_form = None;
        self
    }

    pub fn map(&self) -> &DiscretizationMap {
        &self.map
    }

    pub fn field(&self) -> &ControlledVectorField {
        &self.field
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    /// Same field and solver, map replaced by its adjoint.
    pub fn adjoint_scheme(&self) -> StepScheme {
        StepScheme::new(adjoint(&self.map), self.field.clone()).with_solver(self.solver)
    }

    /// Residual `R^{-1}(x_k, x').v - h X(tau(R^{-1}(x_k, x')), u)`.
    pub fn residual(&self, x_k: &ChartPoint, x_next: &DVector<f64>, u: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        let pair = PointPair { first: x_k.clone(), second: ChartPoint::from_vector(x_next.clone())? };
        let tv = self.map.inverse(&pair)?;
        let f = self.field.eval(&tv.base, u)?;
        Ok(tv.velocity - f * h)
    }

    fn predictor(&self, x_k: &ChartPoint, u: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        Ok(x_k.as_vector() + self.field.eval(x_k, u)? * h)
    }

    /// Solves the scheme by Newton, ignoring any closed form.
    pub fn step_implicit(&self, x_k: &ChartPoint, u: &DVector<f64>, h: f64) -> Result<ChartPoint> {
        if h == 0.0 {
            return Ok(x_k.clone());
        }
        let x0 = self.predictor(x_k, u, h)?;
        match self.map.euclidean_alpha() {
            Some(0.0) => ChartPoint::from_vector(x0),
            Some(a) if self.field.has_analytic_jacobian() => {
                let n = x_k.dim();
                let fd = self.solver.fd_step;
                let jac = |xn: &DVector<f64>| {
                    let base = x_k.as_vector() + (xn - x_k.as_vector()) * a;
                    Ok(DMatrix::identity(n, n) - self.field.jacobian_x(&base, u, fd)? * (h * a))
                };
                let sol = newton_solve(|xn| self.residual(x_k, xn, u, h), Some(jac), x0, &self.solver)?;
                ChartPoint::from_vector(sol)
            }
            _ => {
                let sol = newton_solve(
                    |xn| self.residual(x_k, xn, u, h),
                    None::<fn(&DVector<f64>) -> Result<DMatrix<f64>>>,
                    x0,
                    &self.solver,
                )?;
                ChartPoint::from_vector(sol)
            }
        }
    }

    /// `x_{k+1} = F(x_k, u_k; h)`; negative `h` steps backward.
    pub fn step(&self, x_k: &ChartPoint, u: &DVector<f64>, h: f64) -> Result<ChartPoint> {
        if x_k.dim() != self.field.dim_state() {
            return Err(Error::DimensionMismatch { expected: self.field.dim_state(), got: x_k.dim() });
        }
        match &self.closed_form {
            Some(cf) => cf(x_k, u, h),
            None => self.step_implicit(x_k, u, h),
        }
    }

    /// Solves `F(x', control(x'); -h) = target` for `x'`, seeded at `seed`.
    pub fn solve_reversed<C>(&self, target: &ChartPoint, control: C, h: f64, seed: DVector<f64>) -> Result<ChartPoint>
    where
        C: Fn(&ChartPoint) -> Result<DVector<f64>>,
    {
        if h == 0.0 {
            return Ok(target.clone());
        }
        let residual = |xn: &DVector<f64>| {
            let p = ChartPoint::from_vector(xn.clone())?;
            let u = control(&p)?;
            Ok(self.step(&p, &u, -h)?.into_vector() - target.as_vector())
        };
        let sol = newton_solve(residual, None::<fn(&DVector<f64>) -> Result<DMatrix<f64>>>, seed, &self.solver)?;
        ChartPoint::from_vector(sol)
    }

    /// `x_{k+1} = F^*(x_k, u_k; h)`, i.e. the solution of `F(x_{k+1}, u_k; -h) = x_k`.
    pub fn step_adjoint(&self, x_k: &ChartPoint, u: &DVector<f64>, h: f64) -> Result<ChartPoint> {
        let seed = self.predictor(x_k, u, h)?;
        self.solve_reversed(x_k, |_| Ok(u.clone()), h, seed)
    }

    /// `F(., u; h/2)` followed by `F^*(., u; h/2)` with the control frozen.
    pub fn symmetric_half_steps(&self, x_k: &ChartPoint, u: &DVector<f64>, h: f64) -> Result<(ChartPoint, ChartPoint)> {
        let x_half = self.step(x_k, u, 0.5 * h)?;
        let x_next = self.step_adjoint(&x_half, u, 0.5 * h)?;
        Ok((x_half, x_next))
    }

    /// Solves `F(x_k, c(x_k); h/2) = F(x_{k+1}, c(x_{k+1}); -h/2)` for `x_{k+1}`.
    pub fn multirate_symmetric_step(
        &self,
        controller: &dyn Controller,
        x_k: &ChartPoint,
        h: f64,
    ) -> Result<MultirateStep> {
        let action_k = controller.control(x_k)?;
        let x_half = self.step(x_k, &action_k.u, 0.5 * h)?;
        let seed = self.predictor(&x_half, &action_k.u, 0.5 * h)?;
        let x_next = self.solve_reversed(&x_half, |p| Ok(controller.control(p)?.u), 0.5 * h, seed)?;
        let action_next = controller.control(&x_next)?;
        Ok(MultirateStep { x_half, x_next, action_k, action_next })
    }
}

/// Result of one multirate symmetric step.
#[derive(Debug, Clone, PartialEq)]
pub struct MultirateStep {
    pub x_half: ChartPoint,
    pub x_next: ChartPoint,
    /// Control held on `[t_k, t_k + h/2)`.
    pub action_k: ControlAction,
    /// Control held on `[t_k + h/2, t_k + h)`.
    pub action_next: ControlAction,
}

/// One stage of a composition.
pub type Stage<'a> = dyn Fn(&ChartPoint) -> Result<ChartPoint> + 'a;

/// Applies `stages` left to right: `x_{k+N} = F_N o ... o F_1 (x_k)`.
pub fn compose(stages: &[&Stage], x: &ChartPoint) -> Result<ChartPoint> {
    stages.iter().try_fold(x.clone(), |acc, stage| stage(&acc))
}

/// A control input together with its linearized counterpart `v`, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAction {
    pub u: DVector<f64>,
    pub v: Option<DVector<f64>>,
}

impl ControlAction {
    pub fn plain(u: DVector<f64>) -> Self {
        ControlAction { u, v: None }
    }
}

pub trait Controller: Send + Sync {
    fn control(&self, x: &ChartPoint) -> Result<ControlAction>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantControl(pub DVector<f64>);

impl Controller for ConstantControl {
    fn control(&self, _x: &ChartPoint) -> Result<ControlAction> {
        Ok(ControlAction::plain(self.0.clone()))
    }
}

/// Adapts a closure `x -> u` into a [`Controller`].
pub struct FnController<F>(pub F);

impl<F> Controller for FnController<F>
where
    F: Fn(&ChartPoint) -> Result<DVector<f64>> + Send + Sync,
{
    fn control(&self, x: &ChartPoint) -> Result<ControlAction> {
        Ok(ControlAction::plain((self.0)(x)?))
    }
}

/// Closed-loop stepping strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeVariant {
    /// `x_{k+1} = F(x_k, u(x_k); h)`.
    Forward,
    /// `x_k = F(x_{k+1}, u(x_{k+1}); -h)`, control solved jointly with the state.
    Adjoint,
    /// Multirate symmetric composition of `F` and `F^*` over half steps.
    SymmetricMultirate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub index: usize,
    pub error: Error,
}

/// Sampled closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub variant: SchemeVariant,
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<ChartPoint>,
    /// `controls_u[k]` is the input applied from `t_k` (one per completed step).
    pub controls_u: Vec<DVector<f64>>,
    pub controls_v: Vec<Option<DVector<f64>>>,
    /// Piecewise-constant input actually applied, including half-step switches.
    pub schedule: ControlSchedule,
    pub failure: Option<StepFailure>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Number of uniform steps of size `h` covering `[0, t_end]`.
pub fn step_count(h: f64, t_end: f64) -> Result<usize> {
    if !(h > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("need h > 0 and t_end > 0 (h={h}, t_end={t_end})")));
    }
    let ratio = t_end / h;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) || n < 1.0 {
        return Err(Error::InvalidArgument(format!("t_end/h = {ratio} is not an integer")));
    }
    Ok(n as usize)
}

/// Runs the closed loop from `x0` on `[0, t_end]` with step `h`.
///
/// Numeric failures stop the run and are recorded in [`Trajectory::failure`];
/// only invalid arguments produce `Err`.
pub fn simulate(
    variant: SchemeVariant,
    scheme: &StepScheme,
    x0: &ChartPoint,
    controller: &dyn Controller,
    h: f64,
    t_end: f64,
) -> Result<Trajectory> {
    let steps = step_count(h, t_end)?;
    scheme.solver().validate()?;
    if x0.dim() != scheme.field().dim_state() {
        return Err(Error::DimensionMismatch { expected: scheme.field().dim_state(), got: x0.dim() });
    }
    let mut traj = Trajectory {
        variant,
        h,
        times: vec![0.0],
        states: vec![x0.clone()],
        controls_u: Vec::with_capacity(steps),
        controls_v: Vec::with_capacity(steps),
        schedule: ControlSchedule::empty(0.0),
        failure: None,
    };
    for k in 0..steps {
        let x_k = traj.states[k].clone();
        let t_k = k as f64 * h;
        let t_next = (k + 1) as f64 * h;
        let outcome = match variant {
            SchemeVariant::Forward => controller.control(&x_k).and_then(|action| {
                let x_next = scheme.step(&x_k, &action.u, h)?;
                Ok((x_next, vec![(t_next, action.u.clone())], action))
            }),
            SchemeVariant::Adjoint => (|| {
                let u_guess = controller.control(&x_k)?.u;
                let seed = scheme.predictor(&x_k, &u_guess, h)?;
                let x_next = scheme.solve_reversed(&x_k, |p| Ok(controller.control(p)?.u), h, seed)?;
                let action = controller.control(&x_next)?;
                Ok((x_next, vec![(t_next, action.u.clone())], action))
            })(),
            SchemeVariant::SymmetricMultirate => scheme.multirate_symmetric_step(controller, &x_k, h).map(|s| {
                let t_half = t_k + 0.5 * h;
                let pieces = vec![(t_half, s.action_k.u.clone()), (t_next, s.action_next.u.clone())];
                (s.x_next, pieces, s.action_k)
            }),
        };
        match outcome {
            Ok((x_next, pieces, action)) => {
                for (end, u) in pieces {
                    traj.schedule.push(end, u)?;
                }
                traj.controls_u.push(action.u);
                traj.controls_v.push(action.v);
                traj.states.push(x_next);
                traj.times.push(t_next);
            }
            Err(error) => {
                traj.failure = Some(StepFailure { index: k, error });
                break;
            }
        }
    }
    Ok(traj)
}
