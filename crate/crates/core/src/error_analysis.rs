//! Global and local errors, convergence-order fits and decade tables.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::ChartPoint;
use crate::integrators::{ControlledVectorField, Trajectory};
use crate::reference::{integrate_hold, AdaptiveConfig};

/// Norms below this are treated as zero when forming relative errors.
pub const RELATIVE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `|x(t_k) - x_k|`
    pub per_step_error: Vec<f64>,
    pub sup_error: f64,
    /// `100 |e(t_k)| / |x(t_k)|`, `None` where `|x(t_k)|` is negligible.
    pub relative_pct: Vec<Option<f64>>,
    /// `floor(log10(sup_error))`, `None` when the error is exactly zero.
    pub order_of_magnitude: Option<i32>,
}

pub fn order_of_magnitude(value: f64) -> Option<i32> {
    (value > 0.0 && value.is_finite()).then(|| value.log10().floor() as i32)
}

/// Error between discrete states and reference states sampled at the same times.
pub fn global_error_states(discrete: &[ChartPoint], reference: &[ChartPoint]) -> Result<ErrorReport> {
    if discrete.len() != reference.len() {
        return Err(Error::LengthMismatch(discrete.len(), reference.len()));
    }
    let mut per_step_error = Vec::with_capacity(discrete.len());
    let mut relative_pct = Vec::with_capacity(discrete.len());
    for (xd, xr) in discrete.iter().zip(reference) {
        if xd.dim() != xr.dim() {
            return Err(Error::DimensionMismatch { expected: xr.dim(), got: xd.dim() });
        }
        let e = (xr.as_vector() - xd.as_vector()).norm();
        let scale = xr.norm();
        per_step_error.push(e);
        relative_pct.push((scale >= RELATIVE_FLOOR).then(|| 100.0 * e / scale));
    }
    let sup_error = per_step_error.iter().copied().fold(0.0, f64::max);
    Ok(ErrorReport { per_step_error, sup_error, relative_pct, order_of_magnitude: order_of_magnitude(sup_error) })
}

/// `e(k) = x(t_k) - x_k` over a trajectory.
pub fn global_error(discrete: &Trajectory, reference: &[ChartPoint]) -> Result<ErrorReport> {
    global_error_states(&discrete.states, reference)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationError {
    /// `(F(x(t_k), u_k) - x(t_k)) / h`
    pub increment: DVector<f64>,
    /// `(F(x(t_k), u_k) - x(t_{k+1})) / h`, which scales as `h^r` for an order-`r` scheme.
    pub defect: DVector<f64>,
}

/// One-step errors of `step` started on the exact solution at `x_ref`.
pub fn truncation_error<S>(
    step: S,
    field: &ControlledVectorField,
    x_ref: &ChartPoint,
    u: &DVector<f64>,
    h: f64,
    cfg: &AdaptiveConfig,
) -> Result<TruncationError>
where
    S: Fn(&ChartPoint, &DVector<f64>, f64) -> Result<ChartPoint>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let stepped = step(x_ref, u, h)?;
    let exact = integrate_hold(field, x_ref, u, 0.0, h, cfg)?;
    Ok(TruncationError {
        increment: (stepped.as_vector() - x_ref.as_vector()) / h,
        defect: (stepped.as_vector() - exact.as_vector()) / h,
    })
}

/// Least-squares line through `(log10 h, log10 e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceFit {
    pub step_sizes: Vec<f64>,
    pub sup_errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_power_law(step_sizes: &[f64], errors: &[f64]) -> Result<ConvergenceFit> {
    if step_sizes.len() != errors.len() {
        return Err(Error::LengthMismatch(step_sizes.len(), errors.len()));
    }
    if step_sizes.len() < 2 {
        return Err(Error::DegenerateFit("need at least two step sizes".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::DegenerateFit(format!("error {e} has no logarithm")));
    }
    if step_sizes.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::DegenerateFit("step sizes must be positive".into()));
    }
    let xs: Vec<f64> = step_sizes.iter().map(|h| h.log10()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log10()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all step sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ConvergenceFit { step_sizes: step_sizes.to_vec(), sup_errors: errors.to_vec(), slope, intercept, r_squared })
}

pub fn convergence_order(runs: &[(f64, ErrorReport)]) -> Result<ConvergenceFit> {
    let hs: Vec<f64> = runs.iter().map(|(h, _)| *h).collect();
    let es: Vec<f64> = runs.iter().map(|(_, r)| r.sup_error).collect();
    fit_power_law(&hs, &es)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MagnitudeCell {
    Decade(i32),
    ZeroError,
    Failed(String),
}

impl MagnitudeCell {
    pub fn from_report(report: &ErrorReport) -> Self {
        match report.order_of_magnitude {
            Some(k) => MagnitudeCell::Decade(k),
            None => MagnitudeCell::ZeroError,
        }
    }

    pub fn decade(&self) -> Option<i32> {
        match self {
            MagnitudeCell::Decade(k) => Some(*k),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            MagnitudeCell::Decade(k) => format!("10^{k}"),
            MagnitudeCell::ZeroError => "0".to_string(),
            MagnitudeCell::Failed(reason) => format!("failed ({reason})"),
        }
    }
}

/// Decade of the sup error for each (step size, scheme) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeTable {
    pub schemes: Vec<String>,
    pub step_sizes: Vec<f64>,
    /// `cells[i][j]`: step size `i`, scheme `j`.
    pub cells: Vec<Vec<MagnitudeCell>>,
}

impl MagnitudeTable {
    pub fn new(schemes: Vec<String>, step_sizes: Vec<f64>) -> Self {
        let cells = vec![vec![MagnitudeCell::Failed("not run".into()); schemes.len()]; step_sizes.len()];
        MagnitudeTable { schemes, step_sizes, cells }
    }

    pub fn set(&mut self, step_index: usize, scheme_index: usize, cell: MagnitudeCell) {
        self.cells[step_index][scheme_index] = cell;
    }

    pub fn get(&self, h: f64, scheme: &str) -> Option<&MagnitudeCell> {
        let i = self.step_sizes.iter().position(|s| *s == h)?;
        let j = self.schemes.iter().position(|s| s == scheme)?;
        Some(&self.cells[i][j])
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "h");
        for s in &self.schemes {
            let _ = write!(out, " {:>10}", s);
        }
        out.push('\n');
        for (h, row) in self.step_sizes.iter().zip(&self.cells) {
            let _ = write!(out, "{:<10}", format!("{h:e}"));
            for c in row {
                let _ = write!(out, " {:>10}", c.render());
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::explicit_euler_map;
    use crate::integrators::StepScheme;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pt(v: &[f64]) -> ChartPoint {
        ChartPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn euclidean_error_norm() {
        let r = global_error_states(&[pt(&[0.9, 1.1])], &[pt(&[1.0, 1.0])]).unwrap();
        assert_abs_diff_eq!(r.per_step_error[0], 0.1414213562373095, epsilon = 1e-15);
        assert_eq!(r.order_of_magnitude, Some(-1));
    }

    #[test]
    fn identical_trajectories_have_no_decade() {
        let xs = vec![pt(&[1.0, 2.0]), pt(&[0.0, 0.0])];
        let r = global_error_states(&xs, &xs).unwrap();
        assert_eq!(r.sup_error, 0.0);
        assert_eq!(r.order_of_magnitude, None);
        assert_eq!(r.relative_pct[1], None);
        assert_eq!(MagnitudeCell::from_report(&r), MagnitudeCell::ZeroError);
    }

    #[test]
    fn length_mismatch() {
        let err = global_error_states(&[pt(&[1.0])], &[]).unwrap_err();
        assert_eq!(err, Error::LengthMismatch(1, 0));
    }

    #[test]
    fn decade_of_sup() {
        assert_eq!(order_of_magnitude(3.2e-3), Some(-3));
        assert_eq!(order_of_magnitude(1e-3), Some(-3));
        assert_eq!(order_of_magnitude(0.0), None);
    }

    #[test]
    fn synthetic_slopes() {
        let hs = [1e-1, 1e-2, 1e-3];
        let lin: Vec<f64> = hs.iter().map(|h| 0.5 * h).collect();
        let quad: Vec<f64> = hs.iter().map(|h| 2.0 * h * h).collect();
        assert_abs_diff_eq!(fit_power_law(&hs, &lin).unwrap().slope, 1.0, epsilon = 1e-12);
        let q = fit_power_law(&hs, &quad).unwrap();
        assert_abs_diff_eq!(q.slope, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.intercept, 2f64.log10(), epsilon = 1e-12);
        assert_abs_diff_eq!(q.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_fits() {
        assert!(matches!(fit_power_law(&[0.1, 0.01], &[1e-2, 0.0]), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_power_law(&[0.1], &[1e-2]), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_power_law(&[0.1, 0.1], &[1e-2, 1e-3]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn explicit_euler_truncation_on_decay() {
        let field = ControlledVectorField::new("decay", 1, 1, |x, _| Ok(-x.clone()));
        let scheme = StepScheme::new(explicit_euler_map(), field.clone());
        let t = truncation_error(
            |x, u, h| scheme.step(x, u, h),
            &field,
            &pt(&[1.0]),
            &DVector::zeros(1),
            0.1,
            &AdaptiveConfig::for_sampling_step(0.1),
        )
        .unwrap();
        // oracle: (0.9 - e^{-0.1}) / 0.1
        assert_abs_diff_eq!(t.defect[0], (0.9 - (-0.1f64).exp()) / 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(t.defect[0], -0.04837418, epsilon = 1e-7);
        assert_abs_diff_eq!(t.increment[0], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn exact_flow_has_zero_defect() {
        let field = ControlledVectorField::new("decay", 1, 1, |x, _| Ok(-x.clone()));
        let exact = |x: &ChartPoint, _: &DVector<f64>, h: f64| ChartPoint::from_vector(x.as_vector() * (-h).exp());
        let t =
            truncation_error(exact, &field, &pt(&[1.0]), &DVector::zeros(1), 0.1, &AdaptiveConfig::default()).unwrap();
        assert!(t.defect.norm() <= 1e-9);
    }

    #[test]
    fn table_rendering() {
        let mut t = MagnitudeTable::new(vec!["ees".into(), "ses".into()], vec![0.1, 0.01]);
        t.set(0, 0, MagnitudeCell::Decade(-1));
        t.set(0, 1, MagnitudeCell::Decade(-2));
        t.set(1, 0, MagnitudeCell::Failed("domain".into()));
        t.set(1, 1, MagnitudeCell::Decade(-4));
        let s = t.render();
        assert!(s.contains("10^-1") && s.contains("10^-4") && s.contains("failed (domain)"));
        assert_eq!(t.get(0.01, "ses").and_then(MagnitudeCell::decade), Some(-4));
    }

    proptest! {
        #[test]
        fn decade_brackets_sup(errs in proptest::collection::vec(1e-12f64..10.0, 1..20)) {
            let reference: Vec<ChartPoint> = errs.iter().map(|_| pt(&[0.0])).collect();
            let discrete: Vec<ChartPoint> = errs.iter().map(|e| pt(&[*e])).collect();
            let r = global_error_states(&discrete, &reference).unwrap();
            let k = r.order_of_magnitude.unwrap();
            let max = errs.iter().copied().fold(0.0, f64::max);
            prop_assert_eq!(r.sup_error, max);
            prop_assert!(10f64.powi(k) <= max * (1.0 + 1e-12));
            prop_assert!(max < 10f64.powi(k + 1));
        }

        #[test]
        fn power_law_exponent_recovered(c in 0.01f64..100.0, p in 0.5f64..4.0) {
            let hs = [0.1, 0.03, 0.01, 0.002];
            let es: Vec<f64> = hs.iter().map(|h: &f64| c * h.powf(p)).collect();
            let fit = fit_power_law(&hs, &es).unwrap();
            prop_assert!((fit.slope - p).abs() <= 1e-12);
        }
    }
}
