//! Frozen fast equation, ergodic averaging, and Poisson-equation correctors.
//!
//! Freezing the slow state at `x` turns the fast equation into
//!
//! ```text
//! dY = [A Y + G(x, Y)] dt + sqrt(Q2) dW2,
//! ```
//!
//! whose invariant measure `mu^x` defines the averaged drift
//! `Fbar(x) = int F(x, y) mu^x(dy)`. This module provides three routes to
//! that object and to the corrector of the associated Poisson equation:
//!
//! - a time-average along one trajectory of the frozen chain, with standard
//!   errors from batch means (valid because the chain mixes exponentially,
//!   with rate at least `(lambda_1 - L_G)` on the slowest mode),
//! - closed forms for the linear-Gaussian family, where each mode of the
//!   frozen process is an independent Ornstein-Uhlenbeck factor:
//!
//! ```text
//! g(u, v) = g1(u) - a v   =>   mean_k = g_k/(lambda_k + a),
//!                              var_k  = alpha_{2,k}/(2(lambda_k + a)),
//! Fbar(x) = P_m f1(x) + c (a I - A)^{-1} P_m g1(x),
//! ```
//!
//! - the corrector `Phi(x, y) = int_0^inf E[F(x, Y_t^y) - Fbar(x)] dt`, either
//!   in closed form (linear-Gaussian: `c (y_k - mean_k)/(lambda_k + a)` per
//!   mode) or by trapezoid quadrature of the centered mean drift along
//!   simulated fast paths. The quadrature pairs each path with a
//!   sign-flipped twin (antithetic variates), which is unbiased for any model
//!   and collapses the Monte-Carlo variance entirely for linear fast
//!   dynamics, so the comparison against the closed form measures
//!   discretization error rather than sampling luck.

use std::f64::consts::PI;

use crate::error::{CoreError, Result};
use crate::model::ModelSpec;
use crate::noise::{convolution_variance_unit, CovSpec, NoiseStream};
use crate::spectral::{lambda, phi1_weights, semigroup_weights, DstPlan, GridField, SineField};

/// Burn-in long enough for ten e-foldings of the slowest frozen mode.
pub fn default_burn_in(lip_g: f64) -> f64 {
    let gap = PI * PI - lip_g;
    assert!(gap > 0.0, "fast dissipativity gap must be positive");
    10.0 / gap
}

/// Reusable exponential-Euler stepper for the frozen fast equation.
///
/// The slow argument is fixed at construction, so its grid samples and the
/// per-mode step weights are computed once. One step reads
///
/// ```text
/// y' = e^{dt A} y + phi_1(dt) P_m G(x, y) + conv,
/// conv_k ~ N(0, alpha_{2,k} (1 - e^{-2 lambda_k dt})/(2 lambda_k)),
/// ```
///
/// which is exact for the linear part and the noise, and freezes `G` over the
/// step.
pub struct FrozenChain<'a> {
    model: &'a ModelSpec,
    dt: f64,
    sem: Vec<f64>,
    phi1: Vec<f64>,
    conv_sd: Vec<f64>,
    plan: DstPlan,
    x_grid: GridField,
    y_grid: GridField,
    work_grid: GridField,
}

impl<'a> FrozenChain<'a> {
    pub fn new(model: &'a ModelSpec, cov2: &CovSpec, x: &SineField, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(CoreError::NonPositiveStep { dt });
        }
        let m = x.modes();
        let alphas = cov2.alphas(m)?;
        let conv_sd = alphas
            .iter()
            .enumerate()
            .map(|(i, a)| (a * convolution_variance_unit(lambda(i + 1), dt)).sqrt())
            .collect();
        let plan = DstPlan::new(m, 2 * m).expect("2m grid resolves m modes");
        let x_grid = plan.synthesize(x)?;
        Ok(Self {
            model,
            dt,
            sem: semigroup_weights(m, dt),
            phi1: phi1_weights(m, dt),
            conv_sd,
            plan,
            x_grid,
            y_grid: GridField::new(vec![0.0; 2 * m]),
            work_grid: GridField::new(vec![0.0; 2 * m]),
        })
    }

    #[inline]
    pub fn modes(&self) -> usize {
        self.sem.len()
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Projected reaction through the oversampled grid; `func` receives
    /// `(x(xi_j), y(xi_j))`.
    fn nemytskii(
        &mut self,
        y: &SineField,
        func: impl Fn(f64, f64) -> f64,
        context: &str,
    ) -> Result<SineField> {
        self.plan.synthesize_into(y, &mut self.y_grid);
        let mut bad = false;
        for ((o, u), v) in self
            .work_grid
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
        Ok(self.plan.analyze(&self.work_grid))
    }

    /// `P_m F(x, y)` at the frozen slow state.
    pub fn eval_f(&mut self, y: &SineField) -> Result<SineField> {
        let model = self.model;
        self.nemytskii(y, |u, v| model.f(u, v), "frozen F evaluation")
    }

    /// Advances `y` by one step; `noise_sign` of -1 flips the Gaussian
    /// increment for antithetic twins.
    pub fn step(&mut self, y: &mut SineField, stream: &NoiseStream, noise_sign: f64) -> Result<()> {
        let model = self.model;
        let g_hat = self.nemytskii(y, |u, v| model.g(u, v), "frozen G evaluation")?;
        let normals = stream.standard_normals(self.modes());
        for (k, c) in y.coeffs_mut().iter_mut().enumerate() {
            *c = self.sem[k] * *c
                + self.phi1[k] * g_hat.coeffs()[k]
                + noise_sign * self.conv_sd[k] * normals[k];
        }
        Ok(())
    }
}

/// Single exponential-Euler step of the frozen fast equation.
pub fn frozen_step(
    model: &ModelSpec,
    cov2: &CovSpec,
    x_frozen: &SineField,
    y: &SineField,
    dt: f64,
    stream: &NoiseStream,
) -> Result<SineField> {
    let mut chain = FrozenChain::new(model, cov2, x_frozen, dt)?;
    let mut out = y.clone();
    chain.step(&mut out, stream, 1.0)?;
    Ok(out)
}

/// Time-average estimate of the averaged drift with batch-means errors.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FbarEstimate {
    pub mean: SineField,
    /// Per-mode standard error of the mean, from 20 batch means.
    pub std_err: SineField,
    pub samples: usize,
    pub batches: usize,
}

impl FbarEstimate {
    /// Scalar summary `||se|| / ||mean||` used by reports.
    pub fn relative_std_err(&self) -> f64 {
        self.std_err.l2_norm() / self.mean.l2_norm().max(f64::MIN_POSITIVE)
    }
}

/// Ergodic estimator of `Fbar(x)`: evolves the frozen chain from `y0`,
/// discards `burn_in`, then time-averages `P_m F(x, Y_t)` over `window`.
///
/// The window must hold at least 20 micro steps so the batch-means error
/// estimate has one sample per batch.
#[allow(clippy::too_many_arguments)]
pub fn estimate_fbar_ergodic(
    model: &ModelSpec,
    cov2: &CovSpec,
    x: &SineField,
    y0: &SineField,
    micro_dt: f64,
    burn_in: f64,
    window: f64,
    stream: &NoiseStream,
) -> Result<FbarEstimate> {
    if micro_dt <= 0.0 {
        return Err(CoreError::NonPositiveStep { dt: micro_dt });
    }
    if window < 20.0 * micro_dt {
        return Err(CoreError::WindowTooShort { window, micro_dt });
    }
    let m = x.modes();
    if y0.modes() != m {
        return Err(CoreError::ModeMismatch {
            left: m,
            right: y0.modes(),
        });
    }
    let batches = 20usize;
    let batch_len = ((window / micro_dt).round() as usize / batches).max(1);
    let n_avg = batch_len * batches;
    let n_burn = (burn_in / micro_dt).ceil() as usize;

    let mut chain = FrozenChain::new(model, cov2, x, micro_dt)?;
    let mut y = y0.clone();
    let mut step_idx = 0u64;
    for _ in 0..n_burn {
        chain.step(&mut y, &stream.at_step(step_idx), 1.0)?;
        step_idx += 1;
    }

    let mut batch_means: Vec<Vec<f64>> = Vec::with_capacity(batches);
    let mut batch_acc = vec![0.0; m];
    for i in 0..n_avg {
        chain.step(&mut y, &stream.at_step(step_idx), 1.0)?;
        step_idx += 1;
        let f_now = chain.eval_f(&y)?;
        for (acc, v) in batch_acc.iter_mut().zip(f_now.coeffs()) {
            *acc += v;
        }
        if (i + 1) % batch_len == 0 {
            batch_means.push(batch_acc.iter().map(|s| s / batch_len as f64).collect());
            batch_acc.iter_mut().for_each(|s| *s = 0.0);
        }
    }

    let mut mean = vec![0.0; m];
    for b in &batch_means {
        for (s, v) in mean.iter_mut().zip(b) {
            *s += v;
        }
    }
    for s in &mut mean {
        *s /= batches as f64;
    }
    let mut se = vec![0.0; m];
    for b in &batch_means {
        for ((s, v), mu) in se.iter_mut().zip(b).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    for s in &mut se {
        *s = (*s / (batches as f64 - 1.0) / batches as f64).sqrt();
    }

    Ok(FbarEstimate {
        mean: SineField::new(mean)?,
        std_err: SineField::new(se)?,
        samples: n_avg,
        batches,
    })
}

/// Per-mode invariant law of the frozen chain for the linear-Gaussian family:
/// `(mean_k, var_k) = (g_k/(lambda_k + a), alpha_{2,k}/(2(lambda_k + a)))`
/// with `g = P_m g1(x)`.
pub fn ou_invariant_moments(
    model: &ModelSpec,
    cov2: &CovSpec,
    x: &SineField,
) -> Result<(SineField, Vec<f64>)> {
    let lg = model
        .linear_gaussian_params()
        .ok_or_else(|| CoreError::NoClosedForm(model.id.clone()))?;
    let m = x.modes();
    let g0 = nemytskii_of_x(lg.g1, x)?;
    let mean: Vec<f64> = g0
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, g)| g / (lambda(i + 1) + lg.damping))
        .collect();
    let alphas = cov2.alphas(m)?;
    let var = alphas
        .iter()
        .enumerate()
        .map(|(i, a)| a / (2.0 * (lambda(i + 1) + lg.damping)))
        .collect();
    Ok((SineField::new(mean)?, var))
}

/// Closed-form averaged drift for the linear-Gaussian family.
pub fn fbar_analytic(model: &ModelSpec, x: &SineField) -> Result<SineField> {
    let lg = model
        .linear_gaussian_params()
        .ok_or_else(|| CoreError::NoClosedForm(model.id.clone()))?;
    let f1_hat = nemytskii_of_x(lg.f1, x)?;
    let g1_hat = nemytskii_of_x(lg.g1, x)?;
    let coeffs = f1_hat
        .coeffs()
        .iter()
        .zip(g1_hat.coeffs())
        .enumerate()
        .map(|(i, (f, g))| f + lg.coupling * g / (lambda(i + 1) + lg.damping))
        .collect();
    SineField::new(coeffs)
}

/// `P_m h(x)` through the same oversample-project pipeline the steppers use.
fn nemytskii_of_x(h: fn(f64) -> f64, x: &SineField) -> Result<SineField> {
    let m = x.modes();
    let plan = DstPlan::new(m, 2 * m).expect("2m grid resolves m modes");
    let grid = plan.synthesize(x)?;
    let mut out = GridField::new(vec![0.0; 2 * m]);
    let mut bad = false;
    for (o, u) in out.values_mut().iter_mut().zip(grid.values()) {
        *o = h(*u);
        bad |= !o.is_finite();
    }
    if bad {
        return Err(CoreError::NonFinite {
            context: "pointwise map of frozen slow state".into(),
        });
    }
    Ok(plan.analyze(&out))
}

/// Closed-form Poisson corrector for the linear-Gaussian family:
/// `Phi(x, y)_k = c (y_k - mean_k)/(lambda_k + a)`.
pub fn poisson_corrector_linear(
    model: &ModelSpec,
    cov2: &CovSpec,
    x: &SineField,
    y: &SineField,
) -> Result<SineField> {
    let lg = model
        .linear_gaussian_params()
        .ok_or_else(|| CoreError::NoClosedForm(model.id.clone()))?;
    let (mean, _) = ou_invariant_moments(model, cov2, x)?;
    if y.modes() != mean.modes() {
        return Err(CoreError::ModeMismatch {
            left: mean.modes(),
            right: y.modes(),
        });
    }
    let coeffs = y
        .coeffs()
        .iter()
        .zip(mean.coeffs())
        .enumerate()
        .map(|(i, (yk, mk))| lg.coupling * (yk - mk) / (lambda(i + 1) + lg.damping))
        .collect();
    SineField::new(coeffs)
}

/// Monte-Carlo/trapezoid corrector
/// `Phi(x, y) ~= int_0^{t_max} [mean_paths F(x, Y_t) - Fbar(x)] dt`.
///
/// Paths come in antithetic pairs: trajectory `2q+1` replays the draws of
/// trajectory `2q` with flipped sign. Centering uses the closed-form drift
/// when the family provides one and the ergodic estimator otherwise.
#[allow(clippy::too_many_arguments)]
pub fn poisson_corrector_quadrature(
    model: &ModelSpec,
    cov2: &CovSpec,
    x: &SineField,
    y: &SineField,
    t_max: f64,
    micro_dt: f64,
    n_paths: usize,
    stream: &NoiseStream,
) -> Result<SineField> {
    if micro_dt <= 0.0 {
        return Err(CoreError::NonPositiveStep { dt: micro_dt });
    }
    if t_max <= micro_dt {
        return Err(CoreError::InvalidParam {
            name: "t_max",
            reason: format!("integration horizon {t_max} must exceed micro_dt {micro_dt}"),
        });
    }
    if n_paths == 0 {
        return Err(CoreError::InvalidParam {
            name: "n_paths",
            reason: "corrector quadrature needs at least one path".into(),
        });
    }
    let m = x.modes();
    let fbar = match model.linear_gaussian_params() {
        Some(_) => fbar_analytic(model, x)?,
        None => {
            let burn = default_burn_in(model.lip_g);
            let window = (40.0 / (PI * PI - model.lip_g)).max(20.0 * micro_dt);
            let centering_stream = NoiseStream {
                path_id: stream.path_id + n_paths as u64,
                ..*stream
            };
            estimate_fbar_ergodic(model, cov2, x, y, micro_dt, burn, window, &centering_stream)?
                .mean
        }
    };

    let n_t = (t_max / micro_dt).ceil() as usize;
    let mut acc = vec![0.0; m];
    let mut chain = FrozenChain::new(model, cov2, x, micro_dt)?;
    for traj in 0..n_paths {
        let pair = (traj / 2) as u64;
        let sign = if traj % 2 == 1 { -1.0 } else { 1.0 };
        let path_stream = NoiseStream {
            path_id: stream.path_id + pair,
            ..*stream
        };
        let mut yt = y.clone();
        // Node 0: F(x, y) is deterministic, weight dt/2.
        let f0 = chain.eval_f(&yt)?;
        for (a, v) in acc.iter_mut().zip(f0.coeffs()) {
            *a += 0.5 * v;
        }
        for j in 0..n_t {
            chain.step(&mut yt, &path_stream.at_step(j as u64), sign)?;
            let fj = chain.eval_f(&yt)?;
            let w = if j + 1 == n_t { 0.5 } else { 1.0 };
            for (a, v) in acc.iter_mut().zip(fj.coeffs()) {
                *a += w * v;
            }
        }
    }
    let horizon = n_t as f64 * micro_dt;
    let scale = micro_dt / n_paths as f64;
    let coeffs = acc
        .iter()
        .zip(fbar.coeffs())
        .map(|(a, f)| a * scale - f * horizon)
        .collect();
    SineField::new(coeffs)
}

/// Tabulated averaged drift for models without a closed form: nearest-entry
/// lookup in L2 distance of the slow state.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct FbarTable {
    entries: Vec<(SineField, SineField)>,
}

impl FbarTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(SineField, SineField)>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, x: SineField, fbar: SineField) {
        self.entries.push((x, fbar));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drift of the entry closest to `x`; rejects an empty table.
    pub fn lookup(&self, x: &SineField) -> Result<&SineField> {
        let mut best: Option<(f64, &SineField)> = None;
        for (xe, fe) in &self.entries {
            if xe.modes() != x.modes() {
                continue;
            }
            let d = xe.sub(x).l2_norm();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, fe));
            }
        }
        best.map(|(_, f)| f).ok_or(CoreError::EmptyTable)
    }
}
