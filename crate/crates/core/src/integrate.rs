//! Exponential-Euler time stepping for the coupled slow-fast pair and the
//! averaged equation on a shared macro grid.
//!
//! One macro step of size `dt` advances
//!
//! ```text
//! x' = e^{dt A} x + phi_1(dt) [B(x) + F(x, y_mid)] + conv1,
//! ```
//!
//! where `y_mid` is the fast state after half of `n_sub` frozen-coefficient
//! substeps. The fast equation is integrated in rescaled time `s = t/eps`,
//! where it becomes an order-one equation with unit-intensity noise, so each
//! substep covers `dt/(n_sub eps)` rescaled units regardless of `eps`:
//!
//! ```text
//! y' = e^{s A} y + phi_1(s) G(x, y) + conv2,   s = dt/(n_sub eps).
//! ```
//!
//! Both convolution increments are exact in law. Their Gaussian draws are
//! addressed by counters, not by generator state: macro step `i` consumes W1
//! addresses `i R .. i R+R-1` and substep `j` consumes W2 addresses
//! `(i n_sub + j) R .. + R-1`, where `R` is the `noise_refine` factor of the
//! schedule. A run at `(dt, n_sub, R = 2)` therefore consumes exactly the
//! addresses of a run at `(dt/2, n_sub, R = 1)`, and assembling the fine
//! pieces as `conv = e^{(dt/2) A} conv_0 + conv_1` reproduces the refined
//! run's noise flow identically. Step-halving probes exploit this to measure
//! pure time-discretization bias on a single Brownian path. The averaged
//! equation consumes the same W1 addresses as the coupled slow equation, so
//! strong-error comparisons at equal `path_id` are common-random-number
//! coupled by construction.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::frozen::FbarTable;
use crate::model::ModelSpec;
use crate::noise::{convolution_variance_unit, Channel, CovSpec, NoiseStream};
use crate::spectral::{
    burgers_b, lambda, phi1_weights, semigroup_weights, DstPlan, GridField, SineField,
};

/// Largest admissible number of fast substeps per macro step.
pub const SUBSTEP_CAP: usize = 10_000_000;

fn default_kappa() -> f64 {
    0.5
}

fn default_n_paths() -> usize {
    100
}

/// Scale separation, horizon, grid, and sampling budget of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Time-scale ratio in (0, 1].
    pub eps: f64,
    pub t_horizon: f64,
    pub macro_dt: f64,
    /// Fast substeps resolve `kappa * eps` of real time each.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Number of retained sine modes.
    pub m: usize,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(CoreError::InvalidParam {
                name: "eps",
                reason: format!("scale ratio {} must lie in (0, 1]", self.eps),
            });
        }
        if self.t_horizon.is_nan() || self.t_horizon <= 0.0 {
            return Err(CoreError::InvalidParam {
                name: "t_horizon",
                reason: format!("horizon {} must be positive", self.t_horizon),
            });
        }
        if self.macro_dt.is_nan() || self.macro_dt <= 0.0 {
            return Err(CoreError::NonPositiveStep { dt: self.macro_dt });
        }
        if self.macro_dt > self.t_horizon {
            return Err(CoreError::InvalidParam {
                name: "macro_dt",
                reason: format!(
                    "macro step {} exceeds horizon {}",
                    self.macro_dt, self.t_horizon
                ),
            });
        }
        if self.kappa.is_nan() || self.kappa <= 0.0 {
            return Err(CoreError::InvalidParam {
                name: "kappa",
                reason: format!("substep factor {} must be positive", self.kappa),
            });
        }
        if self.m == 0 {
            return Err(CoreError::InvalidParam {
                name: "m",
                reason: "at least one mode is required".into(),
            });
        }
        if self.n_paths == 0 {
            return Err(CoreError::InvalidParam {
                name: "n_paths",
                reason: "at least one path is required".into(),
            });
        }
        self.n_macro_steps()?;
        Ok(())
    }

    /// Number of macro steps; the horizon must be an integer multiple of the
    /// macro step.
    pub fn n_macro_steps(&self) -> Result<usize> {
        let q = self.t_horizon / self.macro_dt;
        let n = q.round();
        if n < 1.0 || (q - n).abs() > 1e-9 * q.max(1.0) {
            return Err(CoreError::InvalidParam {
                name: "macro_dt",
                reason: format!(
                    "horizon {} is not an integer multiple of macro_dt {}",
                    self.t_horizon, self.macro_dt
                ),
            });
        }
        Ok(n as usize)
    }

    /// Fast substeps per macro step: `ceil(macro_dt / (kappa eps))`, capped.
    pub fn n_sub(&self) -> Result<usize> {
        let raw = (self.macro_dt / (self.kappa * self.eps)).ceil();
        if !raw.is_finite() || raw > SUBSTEP_CAP as f64 {
            return Err(CoreError::SubstepCap(raw as usize));
        }
        Ok((raw as usize).max(1))
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        Ok(StepSchedule {
            macro_dt: self.macro_dt,
            n_sub: self.n_sub()?,
            noise_refine: 1,
        })
    }
}

/// Concrete stepping plan: macro step, pinned substep count, and the counter
/// stride that lets coarse and refined runs share one Brownian path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub macro_dt: f64,
    pub n_sub: usize,
    pub noise_refine: u32,
}

impl StepSchedule {
    /// Same trajectory of noise addresses, described as one coarse run and
    /// one half-step run: `(dt, n, 2R)` versus `(dt/2, n, R)`.
    pub fn halving_pair(self) -> (StepSchedule, StepSchedule) {
        (
            StepSchedule {
                noise_refine: self.noise_refine * 2,
                ..self
            },
            StepSchedule {
                macro_dt: self.macro_dt / 2.0,
                ..self
            },
        )
    }
}

/// Which equation a trajectory discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    SlowEps,
    FastEps,
    Averaged,
}

impl TrajectoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryKind::SlowEps => "slow_eps",
            TrajectoryKind::FastEps => "fast_eps",
            TrajectoryKind::Averaged => "averaged",
        }
    }
}

/// States on the macro grid, including the initial node.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub times: Vec<f64>,
    pub states: Vec<SineField>,
}

impl Trajectory {
    pub fn new(kind: TrajectoryKind, times: Vec<f64>, states: Vec<SineField>) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(CoreError::InvalidParam {
                name: "trajectory",
                reason: format!("{} times against {} states", times.len(), states.len()),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::InvalidParam {
                name: "trajectory",
                reason: "times must increase strictly".into(),
            });
        }
        let m = states[0].modes();
        if states.iter().any(|s| s.modes() != m) {
            return Err(CoreError::InvalidParam {
                name: "trajectory",
                reason: "states must share one truncation level".into(),
            });
        }
        Ok(Self {
            kind,
            times,
            states,
        })
    }

    pub fn modes(&self) -> usize {
        self.states[0].modes()
    }

    pub fn final_state(&self) -> &SineField {
        self.states.last().expect("trajectories are non-empty")
    }

    /// Largest node-wise L2 norm along the path.
    pub fn sup_l2_norm(&self) -> f64 {
        self.states.iter().map(|s| s.l2_norm()).fold(0.0, f64::max)
    }

    /// Largest node-wise L2 distance to another trajectory on the same grid.
    pub fn sup_l2_distance(&self, other: &Trajectory) -> Result<f64> {
        if self.times.len() != other.times.len() {
            return Err(CoreError::InvalidParam {
                name: "trajectory",
                reason: format!(
                    "grids of {} and {} nodes are not comparable",
                    self.times.len(),
                    other.times.len()
                ),
            });
        }
        if self.modes() != other.modes() {
            return Err(CoreError::ModeMismatch {
                left: self.modes(),
                right: other.modes(),
            });
        }
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.sub(b).l2_norm())
            .fold(0.0, f64::max))
    }
}

/// Source of the averaged drift for the limiting equation.
#[derive(Clone, Copy)]
pub enum FbarMode<'a> {
    /// Closed form; requires the linear-Gaussian family.
    Analytic,
    /// Nearest-entry lookup in a precomputed table.
    Ergodic(&'a FbarTable),
}

/// Per-mode weights of one exponential-Euler level, with the stochastic
/// convolution assembled from `refine` finer pieces so that refined schedules
/// replay the same Brownian path.
struct LevelKernel {
    sem: Vec<f64>,
    phi1: Vec<f64>,
    decay_fine: Vec<f64>,
    sd_fine: Vec<f64>,
    refine: u32,
    has_noise: bool,
}

impl LevelKernel {
    fn new(m: usize, cov: &CovSpec, dt: f64, refine: u32) -> Result<Self> {
        assert!(refine >= 1, "noise_refine must be at least 1");
        let alphas = cov.alphas(m)?;
        let fine_dt = dt / refine as f64;
        let sd_fine: Vec<f64> = alphas
            .iter()
            .enumerate()
            .map(|(i, a)| (a * convolution_variance_unit(lambda(i + 1), fine_dt)).sqrt())
            .collect();
        let has_noise = sd_fine.iter().any(|s| *s > 0.0);
        Ok(Self {
            sem: semigroup_weights(m, dt),
            phi1: phi1_weights(m, dt),
            decay_fine: semigroup_weights(m, fine_dt),
            sd_fine,
            refine,
            has_noise,
        })
    }

    /// Assembled convolution increment for the block starting at counter
    /// `base * refine`.
    fn conv_into(&self, stream: &NoiseStream, base: u64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if !self.has_noise {
            return;
        }
        let m = out.len();
        for r in 0..self.refine as u64 {
            let draws = stream
                .at_step(base * self.refine as u64 + r)
                .standard_normals(m);
            for k in 0..m {
                out[k] = self.decay_fine[k] * out[k] + self.sd_fine[k] * draws[k];
            }
        }
    }

    /// `state = sem state + phi1 drift + conv`.
    fn advance(&self, state: &mut SineField, drift: &[f64], conv: &[f64]) {
        for (k, c) in state.coeffs_mut().iter_mut().enumerate() {
            *c = self.sem[k] * *c + self.phi1[k] * drift[k] + conv[k];
        }
    }
}

/// Stepper for the coupled pair at fixed `eps` and schedule.
pub struct CoupledStepper<'a> {
    model: &'a ModelSpec,
    slow: LevelKernel,
    fast: LevelKernel,
    n_sub: usize,
    plan: DstPlan,
    x_grid: GridField,
    y_grid: GridField,
    work: GridField,
    conv: Vec<f64>,
    drift: Vec<f64>,
}

impl<'a> CoupledStepper<'a> {
    pub fn new(
        model: &'a ModelSpec,
        cov1: &CovSpec,
        cov2: &CovSpec,
        params: &SimParams,
        schedule: StepSchedule,
    ) -> Result<Self> {
        params.validate()?;
        if schedule.n_sub == 0 || schedule.n_sub > SUBSTEP_CAP {
            return Err(CoreError::SubstepCap(schedule.n_sub));
        }
        let m = params.m;
        let micro_dt_rescaled = schedule.macro_dt / (schedule.n_sub as f64 * params.eps);
        Ok(Self {
            model,
            slow: LevelKernel::new(m, cov1, schedule.macro_dt, schedule.noise_refine)?,
            fast: LevelKernel::new(m, cov2, micro_dt_rescaled, schedule.noise_refine)?,
            n_sub: schedule.n_sub,
            plan: DstPlan::new(m, 2 * m).expect("2m grid resolves m modes"),
            x_grid: GridField::new(vec![0.0; 2 * m]),
            y_grid: GridField::new(vec![0.0; 2 * m]),
            work: GridField::new(vec![0.0; 2 * m]),
            conv: vec![0.0; m],
            drift: vec![0.0; m],
        })
    }

    /// Pointwise reaction against the frozen slow samples already in
    /// `x_grid`.
    fn nemytskii(
        &mut self,
        y: &SineField,
        func: impl Fn(f64, f64) -> f64,
        context: &str,
    ) -> Result<SineField> {
        self.plan.synthesize_into(y, &mut self.y_grid);
        let mut bad = false;
        for ((o, u), v) in self
            .work
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
        Ok(self.plan.analyze(&self.work))
    }

    /// One macro step in place; `w1`/`w2` are path-level streams whose step
    /// counters this method derives from `macro_index`.
    pub fn step(
        &mut self,
        x: &mut SineField,
        y: &mut SineField,
        macro_index: u64,
        w1: &NoiseStream,
        w2: &NoiseStream,
    ) -> Result<()> {
        let model = self.model;
        self.plan.synthesize_into(x, &mut self.x_grid);

        // Fast substeps with x frozen; the state after half of them feeds
        // the slow drift.
        let mid = self.n_sub.div_ceil(2);
        let mut y_mid = None;
        for j in 0..self.n_sub {
            let g_hat = self.nemytskii(y, |u, v| model.g(u, v), "fast reaction")?;
            let base = macro_index * self.n_sub as u64 + j as u64;
            self.fast.conv_into(w2, base, &mut self.conv);
            self.fast.advance(y, g_hat.coeffs(), &self.conv);
            if j + 1 == mid {
                y_mid = Some(y.clone());
            }
        }
        let y_mid = y_mid.expect("n_sub >= 1 always yields a midpoint state");

        let f_hat = self.nemytskii(&y_mid, |u, v| model.f(u, v), "slow reaction")?;
        let b = burgers_b(x);
        for (d, (bv, fv)) in self
            .drift
            .iter_mut()
            .zip(b.coeffs().iter().zip(f_hat.coeffs()))
        {
            *d = bv + fv;
        }
        self.slow.conv_into(w1, macro_index, &mut self.conv);
        self.slow.advance(x, &self.drift, &self.conv);
        Ok(())
    }
}

/// Stepper for the averaged equation; consumes the same W1 addresses as the
/// coupled slow equation at equal path id and macro index.
pub struct AveragedStepper<'a> {
    model: &'a ModelSpec,
    fbar: FbarMode<'a>,
    slow: LevelKernel,
    plan: DstPlan,
    x_grid: GridField,
    work: GridField,
    conv: Vec<f64>,
}

impl<'a> AveragedStepper<'a> {
    pub fn new(
        model: &'a ModelSpec,
        cov1: &CovSpec,
        params: &SimParams,
        schedule: StepSchedule,
        fbar: FbarMode<'a>,
    ) -> Result<Self> {
        params.validate()?;
        if matches!(fbar, FbarMode::Analytic) && model.linear_gaussian_params().is_none() {
            return Err(CoreError::NoClosedForm(model.id.clone()));
        }
        if let FbarMode::Ergodic(table) = fbar {
            if table.is_empty() {
                return Err(CoreError::EmptyTable);
            }
        }
        let m = params.m;
        Ok(Self {
            model,
            fbar,
            slow: LevelKernel::new(m, cov1, schedule.macro_dt, schedule.noise_refine)?,
            plan: DstPlan::new(m, 2 * m).expect("2m grid resolves m modes"),
            x_grid: GridField::new(vec![0.0; 2 * m]),
            work: GridField::new(vec![0.0; 2 * m]),
            conv: vec![0.0; m],
        })
    }

    fn fbar_drift(&mut self, x: &SineField) -> Result<SineField> {
        match self.fbar {
            FbarMode::Ergodic(table) => Ok(table.lookup(x)?.clone()),
            FbarMode::Analytic => {
                let lg = self
                    .model
                    .linear_gaussian_params()
                    .expect("checked at construction");
                self.plan.synthesize_into(x, &mut self.x_grid);
                for (o, u) in self.work.values_mut().iter_mut().zip(self.x_grid.values()) {
                    *o = (lg.f1)(*u);
                }
                let f_hat = self.plan.analyze(&self.work);
                for (o, u) in self.work.values_mut().iter_mut().zip(self.x_grid.values()) {
                    *o = (lg.g1)(*u);
                }
                let g_hat = self.plan.analyze(&self.work);
                let coeffs = f_hat
                    .coeffs()
                    .iter()
                    .zip(g_hat.coeffs())
                    .enumerate()
                    .map(|(i, (f, g))| f + lg.coupling * g / (lambda(i + 1) + lg.damping))
                    .collect();
                SineField::new(coeffs)
            }
        }
    }

    pub fn step(&mut self, x: &mut SineField, macro_index: u64, w1: &NoiseStream) -> Result<()> {
        let fbar = self.fbar_drift(x)?;
        if fbar.coeffs().iter().any(|c| !c.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "averaged drift".into(),
            });
        }
        let b = burgers_b(x);
        let drift: Vec<f64> = b
            .coeffs()
            .iter()
            .zip(fbar.coeffs())
            .map(|(bv, fv)| bv + fv)
            .collect();
        self.slow.conv_into(w1, macro_index, &mut self.conv);
        self.slow.advance(x, &drift, &self.conv);
        Ok(())
    }
}

/// One macro step of the coupled pair.
#[allow(clippy::too_many_arguments)]
pub fn step_coupled(
    x: &SineField,
    y: &SineField,
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    params: &SimParams,
    macro_index: u64,
    streams: (&NoiseStream, &NoiseStream),
) -> Result<(SineField, SineField)> {
    let schedule = params.schedule()?;
    let mut stepper = CoupledStepper::new(model, cov1, cov2, params, schedule)?;
    let mut x1 = x.clone();
    let mut y1 = y.clone();
    stepper.step(&mut x1, &mut y1, macro_index, streams.0, streams.1)?;
    Ok((x1, y1))
}

fn check_initial(params: &SimParams, field: &SineField, name: &'static str) -> Result<()> {
    if field.modes() != params.m {
        return Err(CoreError::InvalidParam {
            name,
            reason: format!(
                "initial state has {} modes but the truncation is {}",
                field.modes(),
                params.m
            ),
        });
    }
    Ok(())
}

/// Coupled simulation over the macro grid with an explicit schedule; used by
/// step-halving probes that must pin `n_sub` and the refine factor.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_scheduled(
    x0: &SineField,
    y0: &SineField,
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    params: &SimParams,
    schedule: StepSchedule,
    path_id: u64,
) -> Result<(Trajectory, Trajectory)> {
    params.validate()?;
    check_initial(params, x0, "x0")?;
    check_initial(params, y0, "y0")?;
    let n = (params.t_horizon / schedule.macro_dt).round() as usize;
    let mut stepper = CoupledStepper::new(model, cov1, cov2, params, schedule)?;
    let w1 = NoiseStream::new(params.master_seed, path_id, Channel::W1);
    let w2 = NoiseStream::new(params.master_seed, path_id, Channel::W2);

    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut times = Vec::with_capacity(n + 1);
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    times.push(0.0);
    xs.push(x.clone());
    ys.push(y.clone());
    for i in 0..n {
        stepper.step(&mut x, &mut y, i as u64, &w1, &w2)?;
        times.push((i + 1) as f64 * schedule.macro_dt);
        xs.push(x.clone());
        ys.push(y.clone());
    }
    Ok((
        Trajectory::new(TrajectoryKind::SlowEps, times.clone(), xs)?,
        Trajectory::new(TrajectoryKind::FastEps, times, ys)?,
    ))
}

/// Coupled simulation with the default schedule derived from `params`.
pub fn simulate_coupled(
    x0: &SineField,
    y0: &SineField,
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    params: &SimParams,
    path_id: u64,
) -> Result<(Trajectory, Trajectory)> {
    let schedule = params.schedule()?;
    simulate_coupled_scheduled(x0, y0, model, cov1, cov2, params, schedule, path_id)
}

/// Averaged-equation simulation with an explicit schedule.
pub fn simulate_averaged_scheduled(
    x0: &SineField,
    model: &ModelSpec,
    cov1: &CovSpec,
    params: &SimParams,
    schedule: StepSchedule,
    fbar: FbarMode<'_>,
    path_id: u64,
) -> Result<Trajectory> {
    params.validate()?;
    check_initial(params, x0, "x0")?;
    let n = (params.t_horizon / schedule.macro_dt).round() as usize;
    let mut stepper = AveragedStepper::new(model, cov1, params, schedule, fbar)?;
    let w1 = NoiseStream::new(params.master_seed, path_id, Channel::W1);

    let mut x = x0.clone();
    let mut times = Vec::with_capacity(n + 1);
    let mut xs = Vec::with_capacity(n + 1);
    times.push(0.0);
    xs.push(x.clone());
    for i in 0..n {
        stepper.step(&mut x, i as u64, &w1)?;
        times.push((i + 1) as f64 * schedule.macro_dt);
        xs.push(x.clone());
    }
    Trajectory::new(TrajectoryKind::Averaged, times, xs)
}

/// Averaged-equation simulation with the default schedule; shares W1
/// addresses with [`simulate_coupled`] at equal path id.
pub fn simulate_averaged(
    x0: &SineField,
    model: &ModelSpec,
    cov1: &CovSpec,
    params: &SimParams,
    fbar: FbarMode<'_>,
    path_id: u64,
) -> Result<Trajectory> {
    let schedule = params.schedule()?;
    simulate_averaged_scheduled(x0, model, cov1, params, schedule, fbar, path_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog;
    use approx::assert_abs_diff_eq;

    fn base_params(eps: f64, m: usize) -> SimParams {
        SimParams {
            eps,
            t_horizon: 0.1,
            macro_dt: 1e-2,
            kappa: 0.5,
            m,
            n_paths: 1,
            master_seed: 42,
        }
    }

    #[test]
    fn test_zero_model_without_noise_is_pure_semigroup_flow() {
        // x = 0 start kills the advection term; the fast variable contracts
        // by e^{(T/eps) lambda_k} after composing all substeps.
        let model = ModelSpec::zero();
        let cov = CovSpec::zero(8);
        let params = base_params(0.25, 8);
        let x0 = SineField::zeros(8);
        let y0 = SineField::new(vec![1.0, -0.5, 0.3, 0.0, 0.2, 0.0, 0.0, 0.1]).unwrap();
        let (xt, yt) = simulate_coupled(&x0, &y0, &model, &cov, &cov, &params, 0).unwrap();
        for s in &xt.states {
            assert_eq!(s.l2_norm(), 0.0);
        }
        let t_rescaled = params.t_horizon / params.eps;
        for k in 1..=8 {
            let expect = y0.coeff(k) * (-lambda(k) * t_rescaled).exp();
            assert_abs_diff_eq!(yt.final_state().coeff(k), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn test_slow_step_is_exact_semigroup_on_a_single_mode() {
        // With one retained mode the advection convolution is empty, so the
        // noiseless slow update must match the semigroup for any step size.
        let model = ModelSpec::zero();
        let cov = CovSpec::zero(4);
        let mut params = base_params(1.0, 1);
        params.macro_dt = 0.05;
        let x0 = SineField::basis(1, 1, 0.7);
        let y0 = SineField::zeros(1);
        let (xt, _) = simulate_coupled(&x0, &y0, &model, &cov, &cov, &params, 0).unwrap();
        let expect = 0.7 * (-lambda(1) * params.t_horizon).exp();
        assert_abs_diff_eq!(xt.final_state().coeff(1), expect, epsilon = 1e-13);
    }

    #[test]
    fn test_noiseless_slow_energy_never_increases() {
        // Advection conserves energy and the semigroup dissipates it, so
        // without noise and forcing the L2 norm is monotone along the path.
        let model = ModelSpec::zero();
        let cov = CovSpec::zero(8);
        let mut params = base_params(1.0, 8);
        params.t_horizon = 0.5;
        params.macro_dt = 5e-3;
        let mut x0 = SineField::basis(8, 1, 1.0);
        x0.coeffs_mut()[1] = 0.5;
        x0.coeffs_mut()[4] = -0.3;
        let y0 = SineField::zeros(8);
        let (xt, _) = simulate_coupled(&x0, &y0, &model, &cov, &cov, &params, 0).unwrap();
        for w in xt.states.windows(2) {
            assert!(w[1].l2_norm() <= w[0].l2_norm() * (1.0 + 1e-12));
        }
        assert!(xt.final_state().l2_norm() < x0.l2_norm());
    }

    #[test]
    fn test_identical_addresses_give_bitwise_identical_paths() {
        let model = catalog("linear_gaussian_default").unwrap();
        let cov1 = CovSpec::power_decay(0.5, 4.0, 16);
        let cov2 = CovSpec::power_decay(1.0, 2.0, 16);
        let params = base_params(0.25, 6);
        let x0 = SineField::basis(6, 1, 1.0);
        let y0 = SineField::basis(6, 2, 0.5);
        let (xa, ya) = simulate_coupled(&x0, &y0, &model, &cov1, &cov2, &params, 3).unwrap();
        let (xb, yb) = simulate_coupled(&x0, &y0, &model, &cov1, &cov2, &params, 3).unwrap();
        for (a, b) in xa.states.iter().zip(&xb.states) {
            assert_eq!(a.coeffs(), b.coeffs());
        }
        for (a, b) in ya.states.iter().zip(&yb.states) {
            assert_eq!(a.coeffs(), b.coeffs());
        }
        let (xc, _) = simulate_coupled(&x0, &y0, &model, &cov1, &cov2, &params, 4).unwrap();
        assert_ne!(xa.final_state().coeffs(), xc.final_state().coeffs());
    }

    #[test]
    fn test_averaged_equation_consumes_the_same_slow_noise() {
        // A model with zero slow reaction makes the coupled slow equation and
        // the averaged equation algebraically identical, so equal W1
        // addresses must give bitwise equal trajectories.
        let model = ModelSpec::linear_gaussian("probe", |_| 0.0, |_| 0.0, 1.0, 0.0, 0.0, 1.0);
        let cov1 = CovSpec::power_decay(0.5, 4.0, 16);
        let cov2 = CovSpec::power_decay(1.0, 2.0, 16);
        let mut params = base_params(0.25, 8);
        params.t_horizon = 0.2;
        let x0 = SineField::basis(8, 1, 1.0);
        let y0 = SineField::basis(8, 1, 0.4);
        let (slow, _) = simulate_coupled(&x0, &y0, &model, &cov1, &cov2, &params, 7).unwrap();
        let avg = simulate_averaged(&x0, &model, &cov1, &params, FbarMode::Analytic, 7).unwrap();
        for (a, b) in slow.states.iter().zip(&avg.states) {
            assert_eq!(a.coeffs(), b.coeffs());
        }
    }

    #[test]
    fn test_refined_schedule_replays_the_same_brownian_path() {
        // Coarse (dt, n_sub, refine 2) against fine (dt/2, n_sub, refine 1):
        // the assembled noise flows coincide, so with zero drift both runs
        // agree at common nodes up to semigroup rounding.
        let model = ModelSpec::zero();
        let cov1 = CovSpec::power_decay(0.5, 4.0, 16);
        let cov2 = CovSpec::power_decay(1.0, 2.0, 16);
        let mut params = base_params(0.25, 1);
        params.t_horizon = 0.08;
        let base = params.schedule().unwrap();
        let (coarse_s, fine_s) = base.halving_pair();
        assert_eq!(coarse_s.noise_refine, 2);
        assert_abs_diff_eq!(fine_s.macro_dt, base.macro_dt / 2.0, epsilon = 0.0);

        // Single retained mode: the slow advection term vanishes
        // identically, so the slow path is also pure noise flow.
        let x0 = SineField::zeros(1);
        let y0 = SineField::basis(1, 1, 0.5);
        let (xc, yc) =
            simulate_coupled_scheduled(&x0, &y0, &model, &cov1, &cov2, &params, coarse_s, 5)
                .unwrap();
        let (xf, yf) =
            simulate_coupled_scheduled(&x0, &y0, &model, &cov1, &cov2, &params, fine_s, 5).unwrap();
        for i in 0..xc.times.len() {
            assert_abs_diff_eq!(
                xc.states[i].coeff(1),
                xf.states[2 * i].coeff(1),
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(
                yc.states[i].coeff(1),
                yf.states[2 * i].coeff(1),
                epsilon = 1e-13
            );
        }

        // The fast equation carries no advection at any truncation level, so
        // the same identity holds mode by mode at m = 4.
        let mut params4 = params.clone();
        params4.m = 4;
        let x0 = SineField::zeros(4);
        let y0 = SineField::new(vec![0.5, -0.2, 0.1, 0.3]).unwrap();
        let (_, yc) =
            simulate_coupled_scheduled(&x0, &y0, &model, &cov1, &cov2, &params4, coarse_s, 5)
                .unwrap();
        let (_, yf) =
            simulate_coupled_scheduled(&x0, &y0, &model, &cov1, &cov2, &params4, fine_s, 5)
                .unwrap();
        for i in 0..yc.times.len() {
            for k in 1..=4 {
                assert_abs_diff_eq!(
                    yc.states[i].coeff(k),
                    yf.states[2 * i].coeff(k),
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn test_step_halving_self_convergence_is_first_order() {
        // Three schedules sharing one Brownian path; consecutive differences
        // should shrink by about half per halving since the convolution is
        // exact and the drift error is O(dt).
        let model = catalog("nonlinear_default").unwrap();
        let cov1 = CovSpec::power_decay(0.5, 4.0, 16);
        let cov2 = CovSpec::power_decay(1.0, 2.0, 16);
        let mut params = base_params(0.25, 8);
        params.t_horizon = 0.24;
        params.macro_dt = 4e-3;
        let base = params.schedule().unwrap();
        let levels = [
            StepSchedule {
                noise_refine: 4,
                ..base
            },
            StepSchedule {
                macro_dt: base.macro_dt / 2.0,
                noise_refine: 2,
                ..base
            },
            StepSchedule {
                macro_dt: base.macro_dt / 4.0,
                noise_refine: 1,
                ..base
            },
        ];
        let x0 = SineField::basis(8, 1, 1.0);
        let y0 = SineField::basis(8, 1, 0.5);
        let n_paths = 50;
        let mut e01 = 0.0;
        let mut e12 = 0.0;
        for path in 0..n_paths {
            let runs: Vec<Trajectory> = levels
                .iter()
                .map(|s| {
                    simulate_coupled_scheduled(&x0, &y0, &model, &cov1, &cov2, &params, *s, path)
                        .unwrap()
                        .0
                })
                .collect();
            let d01: f64 = runs[0]
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| s.sub(&runs[1].states[2 * i]).l2_norm())
                .fold(0.0, f64::max);
            let d12: f64 = runs[1]
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| s.sub(&runs[2].states[2 * i]).l2_norm())
                .fold(0.0, f64::max);
            e01 += d01 * d01;
            e12 += d12 * d12;
        }
        let order = ((e01 / n_paths as f64).sqrt() / (e12 / n_paths as f64).sqrt()).log2();
        assert!(
            (0.7..=1.3).contains(&order),
            "self-convergence order {order} outside [0.7, 1.3]"
        );
    }

    #[test]
    fn test_substep_cap_and_invalid_params_are_rejected() {
        let mut params = base_params(1e-12, 4);
        params.macro_dt = 0.1;
        params.t_horizon = 0.1;
        assert!(matches!(params.n_sub(), Err(CoreError::SubstepCap(_))));

        let mut bad = base_params(0.5, 4);
        bad.macro_dt = 0.03;
        assert!(bad.validate().is_err(), "non-integral horizon accepted");

        let mut bad = base_params(0.5, 4);
        bad.macro_dt = 0.2;
        assert!(bad.validate().is_err(), "macro_dt beyond horizon accepted");

        let mut bad = base_params(1.5, 4);
        bad.eps = 1.5;
        assert!(bad.validate().is_err(), "eps above 1 accepted");
    }

    #[test]
    fn test_trajectory_shape_and_kinds() {
        let model = catalog("linear_gaussian_default").unwrap();
        let cov1 = CovSpec::power_decay(0.5, 4.0, 8);
        let cov2 = CovSpec::power_decay(1.0, 2.0, 8);
        let params = base_params(0.5, 4);
        let x0 = SineField::basis(4, 1, 1.0);
        let y0 = SineField::zeros(4);
        let (xt, yt) = simulate_coupled(&x0, &y0, &model, &cov1, &cov2, &params, 0).unwrap();
        let n = params.n_macro_steps().unwrap();
        assert_eq!(xt.times.len(), n + 1);
        assert_eq!(xt.times[0], 0.0);
        assert_abs_diff_eq!(*xt.times.last().unwrap(), params.t_horizon, epsilon = 1e-12);
        assert_eq!(xt.kind, TrajectoryKind::SlowEps);
        assert_eq!(yt.kind, TrajectoryKind::FastEps);
        assert!(xt.times.windows(2).all(|w| w[1] > w[0]));

        let avg = simulate_averaged(&x0, &model, &cov1, &params, FbarMode::Analytic, 0).unwrap();
        assert_eq!(avg.kind, TrajectoryKind::Averaged);
        assert_eq!(avg.times, xt.times);
    }

    #[test]
    fn test_averaged_rejects_empty_table_and_missing_closed_form() {
        let cov1 = CovSpec::power_decay(0.5, 4.0, 8);
        let params = base_params(0.5, 4);
        let x0 = SineField::basis(4, 1, 1.0);
        let table = FbarTable::new();
        let lg = catalog("linear_gaussian_default").unwrap();
        let r = simulate_averaged(&x0, &lg, &cov1, &params, FbarMode::Ergodic(&table), 0);
        assert!(matches!(r, Err(CoreError::EmptyTable)));

        let nl = catalog("nonlinear_default").unwrap();
        let r = simulate_averaged(&x0, &nl, &cov1, &params, FbarMode::Analytic, 0);
        assert!(matches!(r, Err(CoreError::NoClosedForm(_))));
    }
}
