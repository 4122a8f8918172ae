//! Discretization maps `R: TM -> M x M`, their adjoints and lifts.
//!
//! A discretization map sends a tangent vector `(x, v)` to a pair of points
//! and must satisfy `R(x, 0) = (x, x)` and `d/ds [R^2 - R^1](x, s v) |_{s=0} = v`.
//! The induced one-step scheme for a vector field `X` is
//! `R^{-1}(x_k, x_{k+1}) = h X(tau(R^{-1}(x_k, x_{k+1})))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{
    invert_pair, negate_fiber, tangent_lift, tangent_lift_inverse, ChartPoint, Diffeomorphism, PointPair, TangentVector,
};

pub type ForwardMap = Arc<dyn Fn(&TangentVector) -> Result<PointPair> + Send + Sync>;
pub type InverseMap = Arc<dyn Fn(&PointPair) -> Result<TangentVector> + Send + Sync>;

#[derive(Clone)]
pub struct DiscretizationMap {
    name: String,
    forward: ForwardMap,
    inverse: InverseMap,
    declared_symmetric: bool,
    declared_linearity_preserving: bool,
    // Set when the map is a Euclidean alpha-map; lets solvers use analytic Jacobians.
    euclidean_alpha: Option<f64>,
}

impl fmt::Debug for DiscretizationMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscretizationMap")
            .field("name", &self.name)
            .field("declared_symmetric", &self.declared_symmetric)
            .field("declared_linearity_preserving", &self.declared_linearity_preserving)
            .field("euclidean_alpha", &self.euclidean_alpha)
            .finish()
    }
}

impl DiscretizationMap {
    /// Builds a map from user-supplied forward and inverse closures.
    pub fn new<F, G>(name: impl Into<String>, forward: F, inverse: G) -> Self
    where
        F: Fn(&TangentVector) -> Result<PointPair> + Send + Sync + 'static,
        G: Fn(&PointPair) -> Result<TangentVector> + Send + Sync + 'static,
    {
        DiscretizationMap {
            name: name.into(),
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            declared_symmetric: false,
            declared_linearity_preserving: false,
            euclidean_alpha: None,
        }
    }

    pub fn declare_symmetric(mut self, symmetric: bool) -> Self {
        self.declared_symmetric = symmetric;
        self
    }

    pub fn declare_linearity_preserving(mut self, preserving: bool) -> Self {
        self.declared_linearity_preserving = preserving;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn declared_symmetric(&self) -> bool {
        self.declared_symmetric
    }

    pub fn declared_linearity_preserving(&self) -> bool {
        self.declared_linearity_preserving
    }

    pub fn euclidean_alpha(&self) -> Option<f64> {
        self.euclidean_alpha
    }

    pub fn forward(&self, tv: &TangentVector) -> Result<PointPair> {
        (self.forward)(tv)
    }

    pub fn inverse(&self, pair: &PointPair) -> Result<TangentVector> {
        (self.inverse)(pair)
    }
}

/// The Euclidean family `R_alpha(x, v) = (x - alpha v, x + (1 - alpha) v)`.
///
/// `alpha = 0` is explicit Euler, `alpha = 1` implicit Euler and
/// `alpha = 1/2` the (symmetric) midpoint map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEulerFamily {
    alpha: f64,
}

impl AlphaEulerFamily {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(AlphaEulerFamily { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn map(&self) -> DiscretizationMap {
        let a = self.alpha;
        let name = match a {
            0.0 => "explicit-euler".to_string(),
            1.0 => "implicit-euler".to_string(),
            0.5 => "midpoint".to_string(),
            a => format!("alpha-euler({a})"),
        };
        let mut map = DiscretizationMap::new(
            name,
            move |tv: &TangentVector| {
                let x = tv.base.as_vector();
                let v = &tv.velocity;
                let first = if a == 0.0 { x.clone() } else { x - v * a };
                let second = if a == 1.0 { x.clone() } else { x + v * (1.0 - a) };
                Ok(PointPair { first: ChartPoint::from_vector(first)?, second: ChartPoint::from_vector(second)? })
            },
            move |pair: &PointPair| {
                if pair.first.dim() != pair.second.dim() {
                    return Err(Error::DimensionMismatch { expected: pair.first.dim(), got: pair.second.dim() });
                }
                let p = pair.first.as_vector();
                let q = pair.second.as_vector();
                let v = q - p;
                let base = if a == 0.0 {
                    p.clone()
                } else if a == 1.0 {
                    q.clone()
                } else {
                    p + &v * a
                };
                TangentVector::new(ChartPoint::from_vector(base)?, v)
            },
        )
        .declare_symmetric(a == 0.5)
        .declare_linearity_preserving(true);
        map.euclidean_alpha = Some(a);
        map
    }
}

/// `R(x, v) = (x, x + v)`.
pub fn explicit_euler_map() -> DiscretizationMap {
    AlphaEulerFamily { alpha: 0.0 }.map()
}

/// `R(x, v) = (x - v, x)`, the adjoint of explicit Euler.
pub fn implicit_euler_map() -> DiscretizationMap {
    AlphaEulerFamily { alpha: 1.0 }.map()
}

/// `R(x, v) = (x - v/2, x + v/2)`.
pub fn midpoint_map() -> DiscretizationMap {
    AlphaEulerFamily { alpha: 0.5 }.map()
}

/// `R^*(x, v) = I_M(R(x, -v))`, with inverse `(R^*)^{-1}(x, y) = I_TM(R^{-1}(y, x))`.
pub fn adjoint(r: &DiscretizationMap) -> DiscretizationMap {
    let fwd = r.clone();
    let inv = r.clone();
    let mut map = DiscretizationMap::new(
        format!("adjoint({})", r.name),
        move |tv: &TangentVector| Ok(invert_pair(&fwd.forward(&negate_fiber(tv))?)),
        move |pair: &PointPair| Ok(negate_fiber(&inv.inverse(&invert_pair(pair))?)),
    )
    .declare_symmetric(r.declared_symmetric)
    .declare_linearity_preserving(r.declared_linearity_preserving);
    map.euclidean_alpha = r.euclidean_alpha.map(|a| 1.0 - a);
    map
}

/// `R_phi = (phi x phi) o R o T phi^{-1}`: transports `R` from the source of
/// `phi` to its target.
pub fn lift(r: &DiscretizationMap, phi: &Diffeomorphism) -> DiscretizationMap {
    let (rf, ri) = (r.clone(), r.clone());
    let (pf, pi) = (phi.clone(), phi.clone());
    DiscretizationMap::new(
        format!("lift({}, {})", r.name, phi.name()),
        move |tv: &TangentVector| {
            let pulled = tangent_lift_inverse(&pf, tv)?;
            let pair = rf.forward(&pulled)?;
            Ok(PointPair { first: pf.apply(&pair.first)?, second: pf.apply(&pair.second)? })
        },
        move |pair: &PointPair| {
            let pulled = PointPair { first: pi.apply_inverse(&pair.first)?, second: pi.apply_inverse(&pair.second)? };
            tangent_lift(&pi, &ri.inverse(&pulled)?)
        },
    )
    .declare_symmetric(r.declared_symmetric)
}

/// `R_{phi^{-1}} = (phi x phi)^{-1} o R o T phi`: pulls a map living on the
/// target (linearizing) chart back to the source chart.
pub fn lift_to_source(r: &DiscretizationMap, phi: &Diffeomorphism) -> DiscretizationMap {
    let (rf, ri) = (r.clone(), r.clone());
    let (pf, pi) = (phi.clone(), phi.clone());
    DiscretizationMap::new(
        format!("lift_to_source({}, {})", r.name, phi.name()),
        move |tv: &TangentVector| {
            let pushed = tangent_lift(&pf, tv)?;
            let pair = rf.forward(&pushed)?;
            Ok(PointPair { first: pf.apply_inverse(&pair.first)?, second: pf.apply_inverse(&pair.second)? })
        },
        move |pair: &PointPair| {
            let pushed = PointPair { first: pi.apply(&pair.first)?, second: pi.apply(&pair.second)? };
            tangent_lift_inverse(&pi, &ri.inverse(&pushed)?)
        },
    )
    .declare_symmetric(r.declared_symmetric)
}

/// Outcome of a numerical audit of the two discretization-map axioms.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub map_name: String,
    pub samples: usize,
    /// max `|R(x, 0) - (x, x)|`
    pub axiom1_defect: f64,
    /// max `|[R^2 - R^1]'(x, 0) v - v|`, central differences
    pub axiom2_defect: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.axiom1_defect <= self.tolerance && self.axiom2_defect <= self.tolerance
    }
}

fn fiber_difference(r: &DiscretizationMap, tv: &TangentVector) -> Result<DVector<f64>> {
    let p = r.forward(tv)?;
    Ok(p.second.as_vector() - p.first.as_vector())
}

pub fn verify_axioms(r: &DiscretizationMap, samples: &[TangentVector], fd_step: f64, tol: f64) -> AxiomReport {
    let mut report = AxiomReport {
        map_name: r.name.clone(),
        samples: samples.len(),
        axiom1_defect: 0.0,
        axiom2_defect: 0.0,
        tolerance: tol,
        failures: Vec::new(),
    };
    if fd_step <= 0.0 {
        report.failures.push(format!("fd_step must be positive, got {fd_step}"));
        return report;
    }
    for (i, tv) in samples.iter().enumerate() {
        let zero = TangentVector::zero_at(tv.base.clone());
        match r.forward(&zero) {
            Ok(pair) => {
                let d = pair.distance(&PointPair::diagonal(tv.base.clone()));
                report.axiom1_defect = report.axiom1_defect.max(d);
            }
            Err(e) => {
                report.failures.push(format!("sample {i}: axiom 1 evaluation failed: {e}"));
                continue;
            }
        }
        let plus = TangentVector { base: tv.base.clone(), velocity: &tv.velocity * fd_step };
        let minus = TangentVector { base: tv.base.clone(), velocity: &tv.velocity * -fd_step };
        match (fiber_difference(r, &plus), fiber_difference(r, &minus)) {
            (Ok(dp), Ok(dm)) => {
                let derivative = (dp - dm) / (2.0 * fd_step);
                let d = (derivative - &tv.velocity).norm();
                report.axiom2_defect = report.axiom2_defect.max(d);
            }
            (Err(e), _) | (_, Err(e)) => {
                report.failures.push(format!("sample {i}: axiom 2 evaluation failed: {e}"));
            }
        }
    }
    report
}

/// Max over samples of `|R^{-1}(R(tv)) - tv|`.
pub fn round_trip_defect(r: &DiscretizationMap, samples: &[TangentVector]) -> Result<f64> {
    samples.iter().try_fold(0.0_f64, |acc, tv| {
        let back = r.inverse(&r.forward(tv)?)?;
        Ok(acc.max(back.distance(tv)))
    })
}

/// Max over samples of the distance between the forward maps of `a` and `b`.
pub fn max_forward_distance(a: &DiscretizationMap, b: &DiscretizationMap, samples: &[TangentVector]) -> Result<f64> {
    samples.iter().try_fold(0.0_f64, |acc, tv| Ok(acc.max(a.forward(tv)?.distance(&b.forward(tv)?))))
}

/// True iff `R` and `R^*` agree on every sample to `tol`.
pub fn check_symmetric(r: &DiscretizationMap, samples: &[TangentVector], tol: f64) -> bool {
    let adj = adjoint(r);
    samples.iter().all(|tv| match (r.forward(tv), adj.forward(tv)) {
        (Ok(a), Ok(b)) => a.distance(&b) <= tol,
        _ => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SampleBox;
    use approx::assert_abs_diff_eq;

    fn tv(b: &[f64], v: &[f64]) -> TangentVector {
        TangentVector::new(ChartPoint::new(b.to_vec()).unwrap(), DVector::from_row_slice(v)).unwrap()
    }

    fn euclid_samples(n: usize) -> Vec<TangentVector> {
        SampleBox::symmetric(vec![2.0, 2.0], vec![1.5, 1.5]).tangent_samples(n, 7)
    }

    #[test]
    fn explicit_euler_formula() {
        let r = explicit_euler_map();
        let p = r.forward(&tv(&[1.0, 2.0], &[0.5, -1.0])).unwrap();
        assert_eq!(p.first.to_vec(), vec![1.0, 2.0]);
        assert_eq!(p.second.to_vec(), vec![1.5, 1.0]);
        let back = r.inverse(&p).unwrap();
        assert_eq!(back, tv(&[1.0, 2.0], &[0.5, -1.0]));
        let z = r.forward(&tv(&[3.0, -1.0], &[0.0, 0.0])).unwrap();
        assert_eq!(z.first, z.second);
    }

    #[test]
    fn adjoint_of_explicit_euler() {
        let adj = adjoint(&explicit_euler_map());
        let p = adj.forward(&tv(&[1.0, 2.0], &[0.5, -1.0])).unwrap();
        assert_eq!(p.first.to_vec(), vec![0.5, 3.0]);
        assert_eq!(p.second.to_vec(), vec![1.0, 2.0]);
        assert_eq!(adj.euclidean_alpha(), Some(1.0));
    }

    #[test]
    fn adjoint_of_alpha_is_one_minus_alpha() {
        let samples = euclid_samples(100);
        for alpha in [0.0, 0.2, 0.5, 0.8, 1.0] {
            let adj = adjoint(&AlphaEulerFamily::new(alpha).unwrap().map());
            let mirrored = AlphaEulerFamily::new(1.0 - alpha).unwrap().map();
            assert!(max_forward_distance(&adj, &mirrored, &samples).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn alpha_out_of_range() {
        assert!(AlphaEulerFamily::new(1.5).is_err());
        assert!(AlphaEulerFamily::new(-0.1).is_err());
    }

    #[test]
    fn adjoint_is_involution() {
        let samples = euclid_samples(50);
        let r = AlphaEulerFamily::new(0.3).unwrap().map();
        let twice = adjoint(&adjoint(&r));
        assert_eq!(max_forward_distance(&r, &twice, &samples).unwrap(), 0.0);
    }

    #[test]
    fn symmetry_checks() {
        let samples = euclid_samples(20);
        assert!(check_symmetric(&midpoint_map(), &samples, 1e-14));
        assert!(!check_symmetric(&explicit_euler_map(), &samples, 1e-6));
        let one = [tv(&[0.0], &[1.0])];
        assert!(!check_symmetric(&explicit_euler_map(), &one, 1e-6));
        let p = explicit_euler_map().forward(&one[0]).unwrap();
        let q = adjoint(&explicit_euler_map()).forward(&one[0]).unwrap();
        assert_eq!((p.first[0], p.second[0]), (0.0, 1.0));
        assert_eq!((q.first[0], q.second[0]), (-1.0, 0.0));
    }

    #[test]
    fn axioms_hold_for_builtins() {
        let samples = euclid_samples(30);
        for r in [explicit_euler_map(), implicit_euler_map(), midpoint_map()] {
            let rep = verify_axioms(&r, &samples, 1e-6, 1e-8);
            assert!(rep.passed(), "{rep:?}");
        }
    }

    #[test]
    fn broken_maps_are_flagged() {
        let samples = [tv(&[1.0, 0.0], &[0.3, -0.4])];
        let double = DiscretizationMap::new(
            "double-speed",
            |tv: &TangentVector| {
                let x = tv.base.as_vector();
                PointPair::new(tv.base.clone(), ChartPoint::from_vector(x + &tv.velocity * 2.0)?)
            },
            |p: &PointPair| unreachable!("{p:?}"),
        );
        let rep = verify_axioms(&double, &samples, 1e-6, 1e-6);
        assert!(!rep.passed());
        assert_abs_diff_eq!(rep.axiom2_defect, 0.5, epsilon = 1e-8);
        assert_eq!(rep.axiom1_defect, 0.0);

        let collapsed = DiscretizationMap::new(
            "collapsed",
            |tv: &TangentVector| {
                let y = ChartPoint::from_vector(tv.base.as_vector() + &tv.velocity)?;
                Ok(PointPair::diagonal(y))
            },
            |p: &PointPair| unreachable!("{p:?}"),
        );
        let rep = verify_axioms(&collapsed, &samples, 1e-6, 1e-6);
        assert_eq!(rep.axiom1_defect, 0.0);
        assert_abs_diff_eq!(rep.axiom2_defect, 0.5, epsilon = 1e-12);
        assert!(!rep.passed());
    }

    #[test]
    fn lift_through_identity_is_pointwise_equal() {
        let samples = euclid_samples(40);
        let r = explicit_euler_map();
        let id = Diffeomorphism::identity(2);
        assert_eq!(max_forward_distance(&r, &lift(&r, &id), &samples).unwrap(), 0.0);
        assert_eq!(max_forward_distance(&r, &lift_to_source(&r, &id), &samples).unwrap(), 0.0);
    }

    #[test]
    fn round_trip_for_builtins() {
        let samples = euclid_samples(40);
        for r in [explicit_euler_map(), implicit_euler_map(), midpoint_map()] {
            assert!(round_trip_defect(&r, &samples).unwrap() <= 1e-14);
        }
    }
}
