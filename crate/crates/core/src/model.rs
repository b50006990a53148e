//! Slow/fast coefficient pairs and the standing-assumption validator.
//!
//! A model is a pair of scalar reaction terms acting pointwise,
//!
//! ```text
//! F(x, y)(xi) = f(x(xi), y(xi)),      G(x, y)(xi) = g(x(xi), y(xi)),
//! ```
//!
//! lifted to Galerkin space by the oversample-project pipeline: sample both
//! fields on the `2m`-point interior grid, apply the scalar function, analyze
//! back, and truncate to `m` modes. The `linear_gaussian` family
//!
//! ```text
//! f(u, v) = f1(u) + c v,        g(u, v) = g1(u) - a v,       a > 0,
//! ```
//!
//! is special-cased throughout the crate because its frozen fast equation is
//! an Ornstein-Uhlenbeck process with known invariant law, which supplies
//! closed-form averaged drifts and correctors to test the generic machinery
//! against.
//!
//! `validate_assumptions` turns the standing hypotheses of the averaging
//! analysis into executable checks: spectral-gap dissipativity on both time
//! scales, trace-class summability of the noise spectra (decided by exponent
//! arithmetic, not truncated tail sums), and an empirical Lipschitz probe
//! against the declared constants.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::noise::{CovLaw, CovSpec};
use crate::spectral::{DstPlan, GridField, SineField};

pub type ScalarFn1 = fn(f64) -> f64;
pub type ScalarFn2 = fn(f64, f64) -> f64;

/// How a model evaluates its reaction terms.
#[derive(Debug, Clone, Copy)]
enum EvalKind {
    /// Arbitrary scalar pair.
    General { f: ScalarFn2, g: ScalarFn2 },
    /// `f = f1(u) + coupling*v`, `g = g1(u) - damping*v`.
    LinearGaussian {
        f1: ScalarFn1,
        g1: ScalarFn1,
        damping: f64,
        coupling: f64,
    },
}

/// Parameters of the linear-Gaussian family, exposed where closed forms exist.
#[derive(Debug, Clone, Copy)]
pub struct LinearGaussian {
    pub f1: ScalarFn1,
    pub g1: ScalarFn1,
    pub damping: f64,
    pub coupling: f64,
}

/// Regularity exponents carried along for the validator's summability checks.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Regularity {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Regularity {
    fn default() -> Self {
        // tau in (1/2, 2); beta = alpha + tau' + 1/4 with alpha in (0, 3/4)
        // and tau' < 3/4 - alpha keeps beta below 1.
        Self {
            tau: 1.0,
            alpha: 0.25,
            beta: 0.75,
        }
    }
}

/// A slow/fast coefficient pair with its declared Lipschitz constants.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub id: String,
    eval: EvalKind,
    pub lip_f: f64,
    pub lip_g: f64,
    pub regularity: Regularity,
}

impl ModelSpec {
    /// Builds a linear-Gaussian model from named parts.
    pub fn linear_gaussian(
        id: impl Into<String>,
        f1: ScalarFn1,
        g1: ScalarFn1,
        damping: f64,
        coupling: f64,
        lip_f: f64,
        lip_g: f64,
    ) -> Self {
        Self {
            id: id.into(),
            eval: EvalKind::LinearGaussian {
                f1,
                g1,
                damping,
                coupling,
            },
            lip_f,
            lip_g,
            regularity: Regularity::default(),
        }
    }

    /// Builds a general model from a scalar pair.
    pub fn general(
        id: impl Into<String>,
        f: ScalarFn2,
        g: ScalarFn2,
        lip_f: f64,
        lip_g: f64,
    ) -> Self {
        Self {
            id: id.into(),
            eval: EvalKind::General { f, g },
            lip_f,
            lip_g,
            regularity: Regularity::default(),
        }
    }

    /// Model with no reaction terms at all; handy for exactness tests.
    pub fn zero() -> Self {
        Self::general("zero", |_, _| 0.0, |_, _| 0.0, 0.0, 0.0)
    }

    #[inline]
    pub fn f(&self, u: f64, v: f64) -> f64 {
        match self.eval {
            EvalKind::General { f, .. } => f(u, v),
            EvalKind::LinearGaussian { f1, coupling, .. } => f1(u) + coupling * v,
        }
    }

    #[inline]
    pub fn g(&self, u: f64, v: f64) -> f64 {
        match self.eval {
            EvalKind::General { g, .. } => g(u, v),
            EvalKind::LinearGaussian { g1, damping, .. } => g1(u) - damping * v,
        }
    }

    /// The family parameters when closed forms are available.
    pub fn linear_gaussian_params(&self) -> Option<LinearGaussian> {
        match self.eval {
            EvalKind::LinearGaussian {
                f1,
                g1,
                damping,
                coupling,
            } => Some(LinearGaussian {
                f1,
                g1,
                damping,
                coupling,
            }),
            EvalKind::General { .. } => None,
        }
    }
}

/// Looks up a model by catalog id.
///
/// - `linear_gaussian_default`: `f = sin(u) + v`, `g = u - v`
/// - `nonlinear_default`: `f = sin(u) + tanh(v)`, `g = cos(u) - 2v`
/// - `zero`: no reaction terms
pub fn catalog(id: &str) -> Result<ModelSpec> {
    match id {
        "linear_gaussian_default" => Ok(ModelSpec::linear_gaussian(
            id,
            f64::sin,
            |u| u,
            1.0,
            1.0,
            1.0,
            1.0,
        )),
        "nonlinear_default" => Ok(ModelSpec::general(
            id,
            |u, v| u.sin() + v.tanh(),
            |u, v| u.cos() - 2.0 * v,
            1.0,
            2.0,
        )),
        "zero" => Ok(ModelSpec::zero()),
        other => Err(CoreError::UnknownModel(other.into())),
    }
}

/// Named scalar functions usable in config-supplied linear-Gaussian models.
pub fn scalar_fn(name: &str) -> Result<ScalarFn1> {
    Ok(match name {
        "zero" => |_| 0.0,
        "identity" => |u| u,
        "sin" => f64::sin,
        "cos" => f64::cos,
        "tanh" => f64::tanh,
        other => return Err(CoreError::UnknownScalarFn(other.into())),
    })
}

/// Shared Nemytskii pipeline: sample on the `2m` grid, apply the scalar
/// function pointwise, analyze, truncate to `m`.
pub struct NemytskiiPlan {
    plan: DstPlan,
    x_grid: GridField,
    y_grid: GridField,
    out_grid: GridField,
}

impl NemytskiiPlan {
    pub fn new(m: usize) -> Self {
        let n = 2 * m;
        Self {
            plan: DstPlan::new(m, n).expect("2m grid always resolves m modes"),
            x_grid: GridField::new(vec![0.0; n]),
            y_grid: GridField::new(vec![0.0; n]),
            out_grid: GridField::new(vec![0.0; n]),
        }
    }

    #[inline]
    pub fn modes(&self) -> usize {
        self.plan.modes()
    }

    /// Applies `func` through the oversample-project pipeline. `context`
    /// labels non-finite failures in errors.
    pub fn apply(
        &mut self,
        func: impl Fn(f64, f64) -> f64,
        x: &SineField,
        y: &SineField,
        context: &str,
    ) -> Result<SineField> {
        let m = self.plan.modes();
        if x.modes() != m || y.modes() != m {
            return Err(CoreError::ModeMismatch {
                left: x.modes(),
                right: y.modes(),
            });
        }
        self.plan.synthesize_into(x, &mut self.x_grid);
        self.plan.synthesize_into(y, &mut self.y_grid);
        let mut bad = false;
        for ((o, u), v) in self
            .out_grid
            .values_mut()
            .iter_mut()
            .zip(self.x_grid.values())
            .zip(self.y_grid.values())
        {
            *o = func(*u, *v);
            bad |= !o.is_finite();
        }
        if bad {
            return Err(CoreError::NonFinite {
                context: context.into(),
            });
        }
        Ok(self.plan.analyze(&self.out_grid))
    }
}

/// Slow reaction `F(x, y)` projected onto `m` modes.
pub fn apply_f(model: &ModelSpec, x: &SineField, y: &SineField) -> Result<SineField> {
    NemytskiiPlan::new(x.modes()).apply(|u, v| model.f(u, v), x, y, "apply_f")
}

/// Fast reaction `G(x, y)` projected onto `m` modes.
pub fn apply_g(model: &ModelSpec, x: &SineField, y: &SineField) -> Result<SineField> {
    NemytskiiPlan::new(x.modes()).apply(|u, v| model.g(u, v), x, y, "apply_g")
}

/// One named assumption check with its measured value and threshold.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Outcome of `validate_assumptions`.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub overall: bool,
}

impl ValidationReport {
    pub fn failures(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name)
            .collect()
    }
}

/// Whether `sum_k lambda_k^p alpha_k` converges, decided from the law.
///
/// For a power law `alpha_k ~ k^{-r}` the summand is `k^{2p - r}` and the sum
/// converges iff `2p - r < -1`. Finite-rank and zero spectra always converge.
fn summability(law: &CovLaw, p: f64) -> (bool, f64, f64) {
    match law {
        CovLaw::PowerDecay { exponent, .. } => {
            let threshold = 2.0 * p + 1.0;
            (*exponent > threshold, *exponent, threshold)
        }
        CovLaw::FiniteRank { .. } | CovLaw::Zero => (true, f64::INFINITY, 2.0 * p + 1.0),
    }
}

/// Runs the standing-assumption checks for a model and noise pair.
///
/// 1. `dissipativity_slow`: `lambda_1 - 2 L_F > 0`
/// 2. `dissipativity_fast`: `lambda_1 - L_G > 0`
/// 3. `trace_q1`: `sum lambda_k alpha_{1,k} < inf`
/// 4. `trace_q2_beta`: `sum lambda_k^{beta-1} alpha_{2,k} < inf`
/// 5. `lipschitz_probe`: sampled difference quotients of `f` and `g` against
///    the declared constants (joint in both arguments)
pub fn validate_assumptions(model: &ModelSpec, cov1: &CovSpec, cov2: &CovSpec) -> ValidationReport {
    let lambda1 = PI * PI;
    let mut checks = Vec::new();

    let gap_slow = lambda1 - 2.0 * model.lip_f;
    checks.push(AssumptionCheck {
        name: "dissipativity_slow",
        pass: gap_slow > 0.0,
        measured: gap_slow,
        threshold: 0.0,
        detail: format!("lambda_1 - 2 L_F = {gap_slow:.6} must be positive"),
    });

    let gap_fast = lambda1 - model.lip_g;
    checks.push(AssumptionCheck {
        name: "dissipativity_fast",
        pass: gap_fast > 0.0,
        measured: gap_fast,
        threshold: 0.0,
        detail: format!("lambda_1 - L_G = {gap_fast:.6} must be positive"),
    });

    let (ok1, r1, thr1) = summability(&cov1.law, 1.0);
    checks.push(AssumptionCheck {
        name: "trace_q1",
        pass: ok1,
        measured: r1,
        threshold: thr1,
        detail: format!("sum lambda_k alpha_1k finite iff decay exponent > {thr1}"),
    });

    let beta = model.regularity.beta;
    let (ok2, r2, thr2) = summability(&cov2.law, beta - 1.0);
    checks.push(AssumptionCheck {
        name: "trace_q2_beta",
        pass: ok2,
        measured: r2,
        threshold: thr2,
        detail: format!(
            "sum lambda_k^(beta-1) alpha_2k finite for beta = {beta} iff exponent > {thr2}"
        ),
    });

    let probe = lipschitz_probe(model);
    let tol_f = model.lip_f * 1.01 + 1e-9;
    let tol_g = model.lip_g * 1.01 + 1e-9;
    let pass_probe = probe.0 <= tol_f && probe.1 <= tol_g;
    checks.push(AssumptionCheck {
        name: "lipschitz_probe",
        pass: pass_probe,
        measured: probe.0.max(probe.1),
        threshold: tol_f.max(tol_g),
        detail: format!(
            "max sampled quotient f: {:.6} (declared {}), g: {:.6} (declared {})",
            probe.0, model.lip_f, probe.1, model.lip_g
        ),
    });

    let overall = checks.iter().all(|c| c.pass);
    ValidationReport { checks, overall }
}

/// Largest sampled joint difference quotient of `f` and `g` on a fixed
/// deterministic point cloud in `[-3, 3]^2`.
fn lipschitz_probe(model: &ModelSpec) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x4C69_7073);
    let mut max_f: f64 = 0.0;
    let mut max_g: f64 = 0.0;
    for _ in 0..2000 {
        let u1: f64 = rng.gen_range(-3.0..3.0);
        let v1: f64 = rng.gen_range(-3.0..3.0);
        let u2: f64 = rng.gen_range(-3.0..3.0);
        let v2: f64 = rng.gen_range(-3.0..3.0);
        let denom = (u1 - u2).abs() + (v1 - v2).abs();
        if denom < 1e-8 {
            continue;
        }
        let qf = (model.f(u1, v1) - model.f(u2, v2)).abs() / denom;
        let qg = (model.g(u1, v1) - model.g(u2, v2)).abs() / denom;
        max_f = max_f.max(qf);
        max_g = max_g.max(qg);
    }
    (max_f, max_g)
}
