//! Ground-truth trajectories from an adaptive Dormand-Prince 5(4) pair.
//!
//! Piecewise-constant inputs are integrated segment by segment; the integrator
//! is restarted at every control breakpoint so no step straddles a switch.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::ChartPoint;
use crate::integrators::{ControlledVectorField, Controller};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { abs_tol: 1e-10, rel_tol: 1e-10, h_init: 1e-3, h_min: 1e-14, max_steps: 10_000_000 }
    }
}

impl AdaptiveConfig {
    /// Defaults for a sampling step `h` (initial step `h / 10`).
    pub fn for_sampling_step(h: f64) -> Self {
        AdaptiveConfig { h_init: h / 10.0, ..AdaptiveConfig::default() }
    }

    pub fn with_tolerances(mut self, abs_tol: f64, rel_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) || !(self.h_min < self.h_init) || self.h_min <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid adaptive config {self:?}")));
        }
        Ok(())
    }
}

/// Piecewise-constant input: `values[i]` holds on `[breakpoints[i], breakpoints[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    breakpoints: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl ControlSchedule {
    pub fn new(breakpoints: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::LengthMismatch(breakpoints.len(), values.len() + 1));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        Ok(ControlSchedule { breakpoints, values })
    }

    /// Schedule starting at `t0` with no pieces yet.
    pub fn empty(t0: f64) -> Self {
        ControlSchedule { breakpoints: vec![t0], values: Vec::new() }
    }

    /// Holds `value` from the current end up to `end`.
    pub fn push(&mut self, end: f64, value: DVector<f64>) -> Result<()> {
        let last = *self.breakpoints.last().expect("non-empty breakpoints");
        if !(end > last) {
            return Err(Error::InvalidArgument(format!("breakpoint {end} does not follow {last}")));
        }
        self.breakpoints.push(end);
        self.values.push(value);
        Ok(())
    }

    pub fn constant(t0: f64, t1: f64, value: DVector<f64>) -> Result<Self> {
        ControlSchedule::new(vec![t0, t1], vec![value])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().expect("non-empty breakpoints")
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value in force at time `t` (right-continuous; the last piece covers its end point).
    pub fn value_at(&self, t: f64) -> Option<&DVector<f64>> {
        if self.values.is_empty() || t < self.start() - time_eps(t) || t > self.end() + time_eps(t) {
            return None;
        }
        let idx = self.breakpoints.partition_point(|&b| b <= t + time_eps(t));
        Some(&self.values[idx.saturating_sub(1).min(self.values.len() - 1)])
    }
}

fn time_eps(t: f64) -> f64 {
    1e-12 * (1.0 + t.abs())
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Integrates `x' = f(t, x)` from `t0` to `t1` and lands exactly on `t1`.
///
/// Accepted steps are appended to `log` as `(t_start, t_end)` when provided.
pub fn integrate<F>(
    f: F,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &AdaptiveConfig,
    mut log: Option<&mut Vec<(f64, f64)>>,
) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    cfg.validate()?;
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("integration interval [{t0}, {t1}] is empty")));
    }
    let n = x0.len();
    let mut t = t0;
    let mut x = x0.clone();
    let mut h = cfg.h_init.min(t1 - t0);
    let mut k: Vec<DVector<f64>> = vec![DVector::zeros(n); 7];
    k[0] = f(t, &x)?;
    let mut steps = 0usize;
    while t < t1 {
        if steps >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded(cfg.max_steps));
        }
        steps += 1;
        let last = t + h >= t1 - time_eps(t1);
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            let mut xs = x.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    xs.axpy(h * A[s][j], kj, 1.0);
                }
            }
            k[s] = f(t + C[s] * h, &xs)?;
        }
        let mut x5 = x.clone();
        let mut err = DVector::zeros(n);
        for s in 0..7 {
            if B5[s] != 0.0 {
                x5.axpy(h * B5[s], &k[s], 1.0);
            }
            err.axpy(h * (B5[s] - B4[s]), &k[s], 1.0);
        }
        let err_norm = (err
            .iter()
            .zip(x.iter().zip(x5.iter()))
            .map(|(e, (a, b))| {
                let sc = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / n as f64)
            .sqrt();
        if !err_norm.is_finite() {
            return Err(Error::domain(format!("non-finite state near t = {t}")));
        }
        if err_norm <= 1.0 {
            let t_new = if last { t1 } else { t + h };
            if let Some(log) = log.as_deref_mut() {
                log.push((t, t_new));
            }
            t = t_new;
            x = x5;
            // first-same-as-last
            k[0] = k[6].clone();
            let factor = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            h *= (0.9 * err_norm.powf(-0.2)).clamp(0.2, 1.0);
        }
        if h < cfg.h_min && t < t1 {
            return Err(Error::StepUnderflow(h));
        }
    }
    Ok(x)
}

/// `x(t1)` for `x' = X(x, u)` with `u` held, from `x(t0) = x0`.
pub fn integrate_hold(
    field: &ControlledVectorField,
    x0: &ChartPoint,
    u: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &AdaptiveConfig,
) -> Result<ChartPoint> {
    let x = integrate(|_, x| field.eval(x, u), x0, t0, t1, cfg, None)?;
    ChartPoint::from_vector(x)
}

fn merged_grid(schedule: &ControlSchedule, sample_times: &[f64]) -> Result<Vec<f64>> {
    let (start, end) = (schedule.start(), schedule.end());
    if let Some(&t) = sample_times.iter().find(|&&t| t < start - time_eps(t) || t > end + time_eps(t)) {
        return Err(Error::InvalidArgument(format!("sample time {t} outside schedule [{start}, {end}]")));
    }
    let mut grid: Vec<f64> = schedule.breakpoints().iter().chain(sample_times).copied().collect();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup_by(|a, b| (*a - *b).abs() <= time_eps(*b));
    Ok(grid)
}

/// Reference states at `sample_times` under a held-control schedule.
///
/// When `log` is given, every accepted integrator step is appended to it.
pub fn reference_trajectory_logged(
    field: &ControlledVectorField,
    x0: &ChartPoint,
    schedule: &ControlSchedule,
    sample_times: &[f64],
    cfg: &AdaptiveConfig,
    mut log: Option<&mut Vec<(f64, f64)>>,
) -> Result<Vec<ChartPoint>> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty control schedule".into()));
    }
    if sample_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("sample times must be strictly increasing".into()));
    }
    let grid = merged_grid(schedule, sample_times)?;
    let mut out = Vec::with_capacity(sample_times.len());
    let mut samples = sample_times.iter().peekable();
    let mut x = x0.as_vector().clone();
    let mut emit = |t: f64, x: &DVector<f64>, out: &mut Vec<ChartPoint>| -> Result<()> {
        while let Some(&&s) = samples.peek() {
            if (s - t).abs() <= time_eps(t) {
                out.push(ChartPoint::from_vector(x.clone())?);
                samples.next();
            } else {
                break;
            }
        }
        Ok(())
    };
    emit(grid[0], &x, &mut out)?;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let u = schedule.value_at(a).expect("grid lies inside schedule");
        x = integrate(|_, x| field.eval(x, u), &x, a, b, cfg, log.as_deref_mut())?;
        emit(b, &x, &mut out)?;
    }
    Ok(out)
}

pub fn reference_trajectory(
    field: &ControlledVectorField,
    x0: &ChartPoint,
    schedule: &ControlSchedule,
    sample_times: &[f64],
    cfg: &AdaptiveConfig,
) -> Result<Vec<ChartPoint>> {
    reference_trajectory_logged(field, x0, schedule, sample_times, cfg, None)
}

/// Reference states under continuous state feedback `u(t) = c(x(t))`.
pub fn feedback_reference_trajectory(
    field: &ControlledVectorField,
    controller: &dyn Controller,
    x0: &ChartPoint,
    sample_times: &[f64],
    cfg: &AdaptiveConfig,
) -> Result<Vec<ChartPoint>> {
    let Some(&t0) = sample_times.first() else {
        return Ok(Vec::new());
    };
    let mut out = vec![x0.clone()];
    let mut x = x0.as_vector().clone();
    let closed = |_t: f64, x: &DVector<f64>| {
        let u = controller.control(&ChartPoint::from_vector(x.clone())?)?.u;
        field.eval(x, &u)
    };
    let mut prev = t0;
    for &t in &sample_times[1..] {
        x = integrate(closed, &x, prev, t, cfg, None)?;
        out.push(ChartPoint::from_vector(x.clone())?);
        prev = t;
    }
    Ok(out)
}
