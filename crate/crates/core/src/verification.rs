//! Numerical self-checks for the sine example: discretization-map axioms,
//! discrete linearizability certificates and time symmetry of the SES loop.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::discretization::{
    adjoint, explicit_euler_map, implicit_euler_map, lift, lift_to_source, midpoint_map, round_trip_defect,
    verify_axioms, DiscretizationMap,
};
use crate::error::Result;
use crate::feedback::{certify_on_region, discrete_matrices, Direction};
use crate::geometry::{tangent_lift, ChartPoint, TangentVector};
use crate::integrators::{Controller, StepScheme};
use crate::sampling::SampleBox;
use crate::systems::{DoubleIntegrator, SinExampleSystem};

pub const CERT_TOL: f64 = 1e-9;
pub const CERT_SAMPLES: usize = 200;
pub const CERT_STEPS: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Axioms,
    Linearizability,
    Symmetry,
    All,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "axioms" => Ok(Suite::Axioms),
            "linearizability" => Ok(Suite::Linearizability),
            "symmetry" => Ok(Suite::Symmetry),
            "all" => Ok(Suite::All),
            other => Err(format!("unknown suite `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed defect.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn measured(name: impl Into<String>, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed: value <= threshold, value, threshold, detail: detail.into() }
    }

    fn from_result(name: impl Into<String>, threshold: f64, r: Result<f64>) -> Self {
        match r {
            Ok(v) => CheckResult::measured(name, v, threshold, ""),
            Err(e) => {
                CheckResult { name: name.into(), passed: false, value: f64::NAN, threshold, detail: e.to_string() }
            }
        }
    }
}

impl fmt::Display for CheckResult {
    /// `PASS name value=... threshold=...`, one line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} value={:.3e} threshold={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

/// Tangent samples with base in `|x1| <= 0.5`, `|x2| <= pi/3`.
pub fn state_tangent_samples(n: usize, velocity_radius: f64, seed: u64) -> Vec<TangentVector> {
    SampleBox::symmetric(vec![0.0, 0.0], vec![0.5, std::f64::consts::FRAC_PI_3])
        .with_velocity_radius(velocity_radius)
        .tangent_samples(n, seed)
}

/// Maps audited by the axiom suite, each with the samples it is defined on.
fn audited_maps(sys: &SinExampleSystem, seed: u64) -> Vec<(DiscretizationMap, Vec<TangentVector>)> {
    let phi = sys.phi();
    let on_m = state_tangent_samples(64, 0.1, seed);
    let on_n: Vec<TangentVector> = on_m.iter().filter_map(|tv| tangent_lift(&phi, tv).ok()).collect();
    let ees = lift_to_source(&explicit_euler_map(), &phi);
    vec![
        (explicit_euler_map(), on_m.clone()),
        (implicit_euler_map(), on_m.clone()),
        (midpoint_map(), on_m.clone()),
        (lift(&explicit_euler_map(), &phi), on_n),
        (adjoint(&ees), on_m.clone()),
        (lift_to_source(&midpoint_map(), &phi), on_m.clone()),
        (ees, on_m),
    ]
}

pub fn axiom_checks(sys: &SinExampleSystem, seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (r, samples) in audited_maps(sys, seed) {
        let rep = verify_axioms(&r, &samples, 1e-6, 1e-6);
        let detail = rep.failures.first().cloned().unwrap_or_default();
        out.push(CheckResult {
            name: format!("axiom1[{}]", r.name()),
            passed: rep.failures.is_empty() && rep.axiom1_defect <= 1e-12,
            value: rep.axiom1_defect,
            threshold: 1e-12,
            detail: detail.clone(),
        });
        out.push(CheckResult {
            name: format!("axiom2[{}]", r.name()),
            passed: rep.passed(),
            value: rep.axiom2_defect,
            threshold: rep.tolerance,
            detail,
        });
        out.push(CheckResult::from_result(format!("round-trip[{}]", r.name()), 1e-9, round_trip_defect(&r, &samples)));
        let twice = adjoint(&adjoint(&r));
        out.push(CheckResult::from_result(
            format!("adjoint-involution[{}]", r.name()),
            1e-12,
            crate::discretization::max_forward_distance(&r, &twice, &samples),
        ));
    }
    out.push(commutation_check(sys, seed));
    out
}

/// `(phi x phi) o R = lift(R, phi) o T phi` on samples of `TM`.
pub fn commutation_check(sys: &SinExampleSystem, seed: u64) -> CheckResult {
    let phi = sys.phi();
    let r = explicit_euler_map();
    let lifted = lift(&r, &phi);
    let defect = state_tangent_samples(100, 0.1, seed ^ 0xc0ffee).iter().try_fold(0.0_f64, |acc, tv| {
        let p = r.forward(tv)?;
        let left = (phi.apply(&p.first)?, phi.apply(&p.second)?);
        let right = lifted.forward(&tangent_lift(&phi, tv)?)?;
        let d = (left.0.as_vector() - right.first.as_vector())
            .norm()
            .max((left.1.as_vector() - right.second.as_vector()).norm());
        Ok(acc.max(d))
    });
    CheckResult::from_result("commutation[lift]", 1e-9, defect)
}

pub fn linearizability_checks(sys: &SinExampleSystem, seed: u64) -> Vec<CheckResult> {
    let fl = sys.linearization();
    let di = DoubleIntegrator;
    let scheme = sys.ees_scheme();
    let region = sys.certification_region();
    let mut out = Vec::new();

    let samples: Vec<_> = region.stream(seed).filter(|(x, _)| sys.in_domain(x)).take(CERT_SAMPLES).collect();
    out.push(CheckResult::from_result(
        "continuous-linearization",
        1e-8,
        fl.linearization_residual(&sys.field(), &samples),
    ));

    for &h in &CERT_STEPS {
        for (label, direction, map) in
            [("ees", Direction::Forward, explicit_euler_map()), ("ies", Direction::Backward, implicit_euler_map())]
        {
            let name = format!("certificate[{label},h={h:e}]");
            let res = discrete_matrices(&map, &di.a(), &di.b(), h, direction).and_then(|dls| match direction {
                Direction::Forward => {
                    certify_on_region(|x, u| scheme.step(x, u, h), &fl, &dls, &region, CERT_SAMPLES, seed, CERT_TOL)
                }
                Direction::Backward => certify_on_region(
                    |x, u| scheme.step_adjoint(x, u, h),
                    &fl,
                    &dls,
                    &region,
                    CERT_SAMPLES,
                    seed,
                    CERT_TOL,
                ),
            });
            out.push(match res {
                Ok(rep) => CheckResult {
                    name,
                    passed: rep.passed() && rep.samples_used == CERT_SAMPLES,
                    value: rep.max_residual,
                    threshold: CERT_TOL,
                    detail: format!("samples={} rejected={}", rep.samples_used, rep.rejected),
                },
                Err(e) => {
                    CheckResult { name, passed: false, value: f64::NAN, threshold: CERT_TOL, detail: e.to_string() }
                }
            });
        }
    }
    out
}

/// Per-step defects of one SES closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryAudit {
    pub steps: usize,
    /// max over k of `|SES_{-h}(SES_h(x_k)) - x_k|`
    pub reversal_defect: f64,
    /// max over k of `|A_{h/2} y_k + B_{h/2} v_k - A_{-h/2} y_{k+1} - B_{-h/2} v_{k+1}|`
    pub y_relation_defect: f64,
}

/// Runs the SES loop from `x0` for `steps` steps and measures both defects at every step.
pub fn audit_symmetric_loop(
    scheme: &StepScheme,
    sys: &SinExampleSystem,
    controller: &dyn Controller,
    x0: &ChartPoint,
    h: f64,
    steps: usize,
) -> Result<SymmetryAudit> {
    let fl = sys.linearization();
    let di = DoubleIntegrator;
    let fwd = discrete_matrices(&explicit_euler_map(), &di.a(), &di.b(), 0.5 * h, Direction::Forward)?;
    let bwd = discrete_matrices(&explicit_euler_map(), &di.a(), &di.b(), -0.5 * h, Direction::Forward)?;
    let mut audit = SymmetryAudit { steps: 0, reversal_defect: 0.0, y_relation_defect: 0.0 };
    let mut x = x0.clone();
    for _ in 0..steps {
        let st = scheme.multirate_symmetric_step(controller, &x, h)?;
        let back = scheme.multirate_symmetric_step(controller, &st.x_next, -h)?;
        audit.reversal_defect = audit.reversal_defect.max((back.x_next.as_vector() - x.as_vector()).norm());

        let y_k = fl.phi().apply(&x)?;
        let y_next = fl.phi().apply(&st.x_next)?;
        let v_k: DVector<f64> = fl.psi(&x, &st.action_k.u)?;
        let v_next: DVector<f64> = fl.psi(&st.x_next, &st.action_next.u)?;
        let lhs = fwd.apply(&y_k, &v_k);
        let rhs = bwd.apply(&y_next, &v_next);
        audit.y_relation_defect = audit.y_relation_defect.max((lhs - rhs).norm());

        audit.steps += 1;
        x = st.x_next;
    }
    Ok(audit)
}

pub fn symmetry_checks(sys: &SinExampleSystem, gain: &[f64], x0: &ChartPoint, h: f64, t_end: f64) -> Vec<CheckResult> {
    let steps = (t_end / h).round() as usize;
    let audit = sys.feedback(gain).and_then(|c| audit_symmetric_loop(&sys.ees_scheme(), sys, &c, x0, h, steps));
    match audit {
        Ok(a) => vec![
            CheckResult::measured("ses-reversal", a.reversal_defect, CERT_TOL, format!("steps={}", a.steps)),
            CheckResult::measured("ses-y-relation", a.y_relation_defect, CERT_TOL, format!("steps={}", a.steps)),
        ],
        Err(e) => ["ses-reversal", "ses-y-relation"]
            .iter()
            .map(|n| CheckResult {
                name: n.to_string(),
                passed: false,
                value: f64::NAN,
                threshold: CERT_TOL,
                detail: e.to_string(),
            })
            .collect(),
    }
}

/// Runs `suite` for the example with parameter `sys`, feedback `gain` and
/// initial state `x0`; the symmetry suite uses `h = 1e-2` on `[0, 5]`.
pub fn run_suite(suite: Suite, sys: &SinExampleSystem, gain: &[f64], x0: &ChartPoint, seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Axioms | Suite::All) {
        out.extend(axiom_checks(sys, seed));
    }
    if matches!(suite, Suite::Linearizability | Suite::All) {
        out.extend(linearizability_checks(sys, seed));
    }
    if matches!(suite, Suite::Symmetry | Suite::All) {
        out.extend(symmetry_checks(sys, gain, x0, 1e-2, 5.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys() -> SinExampleSystem {
        SinExampleSystem::new(1.0).unwrap()
    }

    #[test]
    fn axioms_hold() {
        for c in axiom_checks(&sys(), 7) {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn certificates_hold() {
        for c in linearizability_checks(&sys(), 11) {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn short_symmetric_audit() {
        let x0 = ChartPoint::new(vec![0.25, std::f64::consts::FRAC_PI_6]).unwrap();
        for c in symmetry_checks(&sys(), &[-10.0, -10.0], &x0, 1e-2, 0.5) {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!("ALL".parse::<Suite>().unwrap(), Suite::All);
        assert!("nope".parse::<Suite>().is_err());
    }
}
