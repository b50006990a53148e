//! Spectral Galerkin laboratory for a slow-fast stochastic Burgers system.
//!
//! The crate simulates the pair
//!
//! ```text
//! dX = [A X + B(X) + F(X, Y)] dt + sqrt(Q1) dW1,
//! dY = (1/eps) [A Y + G(X, Y)] dt + (1/sqrt(eps)) sqrt(Q2) dW2,
//! ```
//!
//! truncated to `m` sine modes on (0, 1), together with its averaged limit
//! `dXbar = [A Xbar + B(Xbar) + Fbar(Xbar)] dt + sqrt(Q1) dW1`, and provides
//! the machinery to measure how fast the slow component converges to the
//! averaged one as `eps -> 0`: ergodic and closed-form averaged drifts,
//! Poisson-equation correctors, and strong/weak order studies with
//! bias-guarded step control.
//!
//! Module map:
//! - [`spectral`]: sine fields, transforms, semigroup, exact advection algebra
//! - [`noise`]: diagonal Q-Wiener sampling with counter-addressed streams
//! - [`model`]: slow/fast coefficient pairs and assumption validation
//! - [`frozen`]: frozen fast equation, ergodic averaging, correctors
//! - [`integrate`]: exponential-Euler macro stepping of the coupled pair
//! - [`study`]: convergence studies, order fits, moment and Galerkin checks
//! - [`persist`]: reproducible run directories, trajectory and report files

pub mod error;
pub mod frozen;
pub mod integrate;
pub mod model;
pub mod noise;
pub mod persist;
pub mod spectral;
pub mod study;

pub use error::{CoreError, Result};
pub use frozen::{
    default_burn_in, estimate_fbar_ergodic, fbar_analytic, frozen_step, ou_invariant_moments,
    poisson_corrector_linear, poisson_corrector_quadrature, FbarEstimate, FbarTable, FrozenChain,
};
pub use integrate::{
    simulate_averaged, simulate_coupled, step_coupled, FbarMode, SimParams, StepSchedule,
    Trajectory, TrajectoryKind,
};
pub use model::{apply_f, apply_g, catalog, validate_assumptions, ModelSpec, ValidationReport};
pub use noise::{convolution_increment, wiener_increment, Channel, CovLaw, CovSpec, NoiseStream};
pub use persist::{config_digest, Manifest, RunDir};
pub use spectral::{bilinear_b, burgers_b, trilinear_b, DstPlan, GridField, SineField};
pub use study::{
    bias_probe, fit_order, galerkin_refinement_check, moment_check, strong_error_study,
    weak_error_study, BiasProbe, ErrorReport, GalerkinReport, MomentReport, OrderFit, Protocol,
    TestFunctional,
};
