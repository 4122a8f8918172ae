//! Chart-coordinate points, tangent vectors and diffeomorphisms.
//!
//! Every manifold is handled through one global coordinate chart together with
//! a domain predicate, so "local" statements become runtime domain checks.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Step used by the central-difference Jacobian fallback.
pub const FD_JACOBIAN_STEP: f64 = 1e-6;

/// Default round-trip tolerance for diffeomorphisms.
pub const DEFAULT_DIFFEO_TOL: f64 = 1e-9;

/// A point of the state manifold, in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint(DVector<f64>);

impl ChartPoint {
    pub fn new(coords: impl Into<Vec<f64>>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(coords.into()))
    }

    pub fn from_vector(coords: DVector<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("chart point must have dimension >= 1".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain(format!("non-finite coordinates {:?}", coords.as_slice())));
        }
        Ok(ChartPoint(coords))
    }

    pub fn zeros(n: usize) -> Self {
        ChartPoint(DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

impl Deref for ChartPoint {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl fmt::Display for ChartPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// A tangent vector `(x, v)` with base point `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: ChartPoint,
    pub velocity: DVector<f64>,
}

impl TangentVector {
    pub fn new(base: ChartPoint, velocity: DVector<f64>) -> Result<Self> {
        if base.dim() != velocity.len() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: velocity.len() });
        }
        Ok(TangentVector { base, velocity })
    }

    pub fn zero_at(base: ChartPoint) -> Self {
        let n = base.dim();
        TangentVector { base, velocity: DVector::zeros(n) }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Distance in the product chart `R^n x R^n`.
    pub fn distance(&self, other: &TangentVector) -> f64 {
        let db = (self.base.as_vector() - other.base.as_vector()).norm_squared();
        let dv = (&self.velocity - &other.velocity).norm_squared();
        (db + dv).sqrt()
    }
}

/// An element `(x, y)` of `M x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPair {
    pub first: ChartPoint,
    pub second: ChartPoint,
}

impl PointPair {
    pub fn new(first: ChartPoint, second: ChartPoint) -> Result<Self> {
        if first.dim() != second.dim() {
            return Err(Error::DimensionMismatch { expected: first.dim(), got: second.dim() });
        }
        Ok(PointPair { first, second })
    }

    pub fn diagonal(x: ChartPoint) -> Self {
        PointPair { first: x.clone(), second: x }
    }

    pub fn distance(&self, other: &PointPair) -> f64 {
        let a = (self.first.as_vector() - other.first.as_vector()).norm_squared();
        let b = (self.second.as_vector() - other.second.as_vector()).norm_squared();
        (a + b).sqrt()
    }
}

/// `(x, y) -> (y, x)`.
pub fn invert_pair(p: &PointPair) -> PointPair {
    PointPair { first: p.second.clone(), second: p.first.clone() }
}

/// `(x, v) -> (x, -v)`.
pub fn negate_fiber(tv: &TangentVector) -> TangentVector {
    TangentVector { base: tv.base.clone(), velocity: -&tv.velocity }
}

pub type PointMap = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
pub type MatrixMap = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;
pub type Predicate = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// A diffeomorphism between two charts, given by closed-form maps.
///
/// `jacobian` is optional; when absent the Jacobian of `forward` is taken by
/// central differences with step [`FD_JACOBIAN_STEP`].
#[derive(Clone)]
pub struct Diffeomorphism {
    name: String,
    dim: usize,
    forward: PointMap,
    inverse: PointMap,
    jacobian: Option<MatrixMap>,
    domain: Predicate,
    tolerance: f64,
}

impl fmt::Debug for Diffeomorphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diffeomorphism")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl Diffeomorphism {
    pub fn new<F, G>(name: impl Into<String>, dim: usize, forward: F, inverse: G) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        Diffeomorphism {
            name: name.into(),
            dim,
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            jacobian: None,
            domain: Arc::new(|_| true),
            tolerance: DEFAULT_DIFFEO_TOL,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_domain<P>(mut self, domain: P) -> Self
    where
        P: Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    {
        self.domain = Arc::new(domain);
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn identity(dim: usize) -> Self {
        Diffeomorphism::new("identity", dim, |x| Ok(x.clone()), |y| Ok(y.clone()))
            .with_jacobian(move |_| Ok(DMatrix::identity(dim, dim)))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim && (self.domain)(x)
    }

    fn check_domain(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if !(self.domain)(x) {
            return Err(Error::domain(format!("{} at {:?}", self.name, x.as_slice())));
        }
        Ok(())
    }

    pub fn apply(&self, x: &ChartPoint) -> Result<ChartPoint> {
        self.check_domain(x)?;
        ChartPoint::from_vector((self.forward)(x)?)
    }

    pub fn apply_inverse(&self, y: &ChartPoint) -> Result<ChartPoint> {
        if y.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: y.dim() });
        }
        let x = ChartPoint::from_vector((self.inverse)(y)?)?;
        self.check_domain(&x)?;
        Ok(x)
    }

    /// Jacobian of the forward map at `x`.
    pub fn jacobian(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        match &self.jacobian {
            Some(j) => j(x),
            None => self.jacobian_fd(x, FD_JACOBIAN_STEP),
        }
    }

    /// Central finite-difference Jacobian of the forward map.
    pub fn jacobian_fd(&self, x: &ChartPoint, step: f64) -> Result<DMatrix<f64>> {
        let forward = &self.forward;
        central_difference_jacobian(|p| forward(p), x, step)
    }

    /// The diffeomorphism running the other way, `phi^{-1}: N -> M`.
    pub fn inverted(&self) -> Diffeomorphism {
        let fwd = self.clone();
        let jac_src = self.clone();
        let dom_src = self.clone();
        Diffeomorphism {
            name: format!("inverse({})", self.name),
            dim: self.dim,
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
            jacobian: Some(Arc::new(move |y: &DVector<f64>| {
                let x = fwd.apply_inverse(&ChartPoint(y.clone()))?;
                let j = jac_src.jacobian(&x)?;
                j.try_inverse()
                    .ok_or_else(|| Error::SingularJacobian(format!("{} at {:?}", jac_src.name, x.as_slice())))
            })),
            domain: Arc::new(move |y: &DVector<f64>| dom_src.apply_inverse(&ChartPoint(y.clone())).is_ok()),
            tolerance: self.tolerance,
        }
    }
}

pub(crate) fn central_difference_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        cols.push((f(&xp)? - f(&xm)?) / (2.0 * step));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, n, |i, j| cols[j][i]))
}

/// `T phi (x, v) = (phi(x), D phi(x) v)`.
pub fn tangent_lift(phi: &Diffeomorphism, tv: &TangentVector) -> Result<TangentVector> {
    let base = phi.apply(&tv.base)?;
    let j = phi.jacobian(&tv.base)?;
    Ok(TangentVector { base, velocity: j * &tv.velocity })
}

/// `T phi^{-1} (y, w) = (phi^{-1}(y), [D phi(phi^{-1} y)]^{-1} w)`.
pub fn tangent_lift_inverse(phi: &Diffeomorphism, tv: &TangentVector) -> Result<TangentVector> {
    let base = phi.apply_inverse(&tv.base)?;
    let j = phi.jacobian(&base)?;
    let velocity = j
        .lu()
        .solve(&tv.velocity)
        .ok_or_else(|| Error::SingularJacobian(format!("{} at {:?}", phi.name(), base.as_slice())))?;
    Ok(TangentVector { base, velocity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn sin_chart() -> Diffeomorphism {
        Diffeomorphism::new(
            "sin",
            2,
            |x| Ok(DVector::from_vec(vec![x[0], x[1].sin()])),
            |y| {
                if y[1].abs() >= 1.0 {
                    return Err(Error::domain("arcsin"));
                }
                Ok(DVector::from_vec(vec![y[0], y[1].asin()]))
            },
        )
        .with_jacobian(|x| Ok(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, x[1].cos()])))
        .with_domain(|x| x[1].abs() < PI / 2.0)
    }

    fn tv(b: [f64; 2], v: [f64; 2]) -> TangentVector {
        TangentVector::new(ChartPoint::new(b).unwrap(), DVector::from_row_slice(&v)).unwrap()
    }

    #[test]
    fn chart_point_rejects_nan() {
        assert!(ChartPoint::new([0.0, f64::NAN]).is_err());
        assert!(ChartPoint::new(Vec::<f64>::new()).is_err());
    }

    #[test]
    fn identity_lift_is_identity() {
        let t = tv([1.0, 2.0], [3.0, 4.0]);
        let id = Diffeomorphism::identity(2);
        assert_eq!(tangent_lift(&id, &t).unwrap(), t);
        assert_eq!(tangent_lift_inverse(&id, &t).unwrap(), t);
    }

    #[test]
    fn sin_lift_at_origin() {
        let out = tangent_lift(&sin_chart(), &tv([0.0, 0.0], [1.0, 1.0])).unwrap();
        assert_eq!(out, tv([0.0, 0.0], [1.0, 1.0]));
    }

    #[test]
    fn sin_lift_matches_directional_difference() {
        let phi = sin_chart();
        let t = tv([0.25, PI / 6.0], [0.0, 1.0]);
        let out = tangent_lift(&phi, &t).unwrap();
        // oracle: central difference of phi along v
        let s = 1e-6;
        let plus = phi.apply(&ChartPoint::from_vector(t.base.as_vector() + &t.velocity * s).unwrap()).unwrap();
        let minus = phi.apply(&ChartPoint::from_vector(t.base.as_vector() - &t.velocity * s).unwrap()).unwrap();
        let fd = (plus.as_vector() - minus.as_vector()) / (2.0 * s);
        assert_abs_diff_eq!(out.base[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(out.base[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out.velocity[0], fd[0], epsilon = 1e-9);
        assert_abs_diff_eq!(out.velocity[1], fd[1], epsilon = 1e-9);
        assert_abs_diff_eq!(out.velocity[1], 0.8660254037844386, epsilon = 1e-12);
    }

    #[test]
    fn sin_lift_inverse_round_trip() {
        let phi = sin_chart();
        let back = tangent_lift_inverse(&phi, &tv([0.25, 0.5], [0.0, 0.8660254037844386])).unwrap();
        assert_abs_diff_eq!(back.base[1], PI / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(back.velocity[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(back.velocity[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sin_lift_inverse_outside_image() {
        let phi = sin_chart();
        let err = tangent_lift_inverse(&phi, &tv([0.0, 1.0], [0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        let err = tangent_lift_inverse(&phi, &tv([0.0, -1.5], [0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn lift_outside_domain_fails() {
        let err = tangent_lift(&sin_chart(), &tv([0.0, 2.0], [0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn pair_and_fiber_involutions() {
        let p = PointPair::new(ChartPoint::new([1.0, 2.0]).unwrap(), ChartPoint::new([3.0, 4.0]).unwrap()).unwrap();
        let q = invert_pair(&p);
        assert_eq!(q.first.to_vec(), vec![3.0, 4.0]);
        assert_eq!(q.second.to_vec(), vec![1.0, 2.0]);
        assert_eq!(invert_pair(&q), p);

        let z = PointPair::diagonal(ChartPoint::zeros(2));
        assert_eq!(invert_pair(&z), z);

        let t = tv([1.0, 2.0], [3.0, 4.0]);
        let n = negate_fiber(&t);
        assert_eq!(n, tv([1.0, 2.0], [-3.0, -4.0]));
        assert_eq!(negate_fiber(&n), t);
        let zero = TangentVector::zero_at(ChartPoint::new([5.0]).unwrap());
        assert_eq!(negate_fiber(&zero).velocity[0], 0.0);
    }

    #[test]
    fn inverted_diffeo_swaps_roles() {
        let phi = sin_chart();
        let inv = phi.inverted();
        let y = ChartPoint::new([0.25, 0.5]).unwrap();
        let x = inv.apply(&y).unwrap();
        assert_abs_diff_eq!(x[1], PI / 6.0, epsilon = 1e-15);
        let j = inv.jacobian(&y).unwrap();
        assert_abs_diff_eq!(j[(1, 1)], 1.0 / (PI / 6.0).cos(), epsilon = 1e-12);
        assert!(!inv.in_domain(&DVector::from_vec(vec![0.0, 1.2])));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = TangentVector::new(ChartPoint::zeros(2), DVector::zeros(3)).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, got: 3 });
    }
}
