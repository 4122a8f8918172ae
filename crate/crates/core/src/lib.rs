//! Feedback-linearizable discretizations of nonlinear control systems.
//!
//! A discretization map `R: TM -> M x M` on a linear chart is transported
//! through the linearizing diffeomorphism `phi`, giving one-step schemes whose
//! closed loop is exactly linear in the coordinates `y = phi(x)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretization;
pub mod error;
pub mod error_analysis;
pub mod feedback;
pub mod geometry;
pub mod harness;
pub mod integrators;
pub mod reference;
pub mod sampling;
pub mod systems;
pub mod verification;

pub use discretization::{
    adjoint, explicit_euler_map, implicit_euler_map, lift, lift_to_source, midpoint_map, verify_axioms,
    AlphaEulerFamily, AxiomReport, DiscretizationMap,
};
pub use error::{Error, Result};
pub use error_analysis::{global_error, ConvergenceFit, ErrorReport, MagnitudeCell, MagnitudeTable};
pub use feedback::{
    discrete_matrices, verify_discrete_linearizability, CertReport, Direction, DiscreteLinearSystem,
    FeedbackLinearization, LinearizingFeedback,
};
pub use geometry::{ChartPoint, Diffeomorphism, PointPair, TangentVector};
pub use harness::{run_scenario, BaselineMode, RunOutcome, ScenarioConfig, Scheme};
pub use integrators::{
    simulate, ControlAction, ControlledVectorField, Controller, SchemeVariant, SolverConfig, StepScheme, Trajectory,
};
pub use reference::{AdaptiveConfig, ControlSchedule};
pub use systems::{DoubleIntegrator, SinExampleSystem};
