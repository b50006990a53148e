//! Convergence studies over an eps grid: strong and weak error estimation,
//! log-log order fitting, moment flatness, and Galerkin refinement checks.
//!
//! The central quantity is the coupled difference between the slow component
//! and the averaged equation driven by the same W1 path,
//!
//! ```text
//! strong:  err(eps) = (E sup_{t <= T} |X^eps_t - Xbar_t|^p)^{1/p},
//! weak:    err(eps) = |E[phi(X^eps_T) - phi(Xbar_T)]|,
//! ```
//!
//! fitted as `ln err = q ln eps + b` by weighted least squares. Sharing the
//! W1 addresses across the pair and across eps values (common random
//! numbers) removes most of the Monte-Carlo variance from both estimators,
//! which is what makes desk-scale path budgets sufficient.
//!
//! Every study is gated by a step-halving bias probe at the smallest eps of
//! the grid: the coupled difference is recomputed at `macro_dt` and
//! `macro_dt/2` on one Brownian path (the refine-counter nesting of the
//! integrators), and the study refuses to run when the time-discretization
//! shift exceeds 10% of the averaging error it is supposed to measure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::integrate::{
    simulate_averaged_scheduled, simulate_coupled_scheduled, FbarMode, SimParams, Trajectory,
};
use crate::model::{validate_assumptions, ModelSpec};
use crate::noise::CovSpec;
use crate::spectral::SineField;

/// Weighted least-squares fit of `ln(error)` against `ln(eps)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    /// 95% confidence interval for the slope.
    pub ci: (f64, f64),
}

/// Fits the convergence order from per-eps error estimates. Weights are the
/// inverse variances of `ln(error)`, approximated by `(std_err/error)^2`.
pub fn fit_order(eps_grid: &[f64], errors: &[f64], std_errs: &[f64]) -> Result<OrderFit> {
    if eps_grid.len() < 3 {
        return Err(CoreError::TooFewPoints(eps_grid.len()));
    }
    if errors.len() != eps_grid.len() || std_errs.len() != eps_grid.len() {
        return Err(CoreError::InvalidParam {
            name: "errors",
            reason: format!(
                "{} eps values against {} errors and {} std errs",
                eps_grid.len(),
                errors.len(),
                std_errs.len()
            ),
        });
    }
    for (i, (e, err)) in eps_grid.iter().zip(errors).enumerate() {
        if e.is_nan() || *e <= 0.0 {
            return Err(CoreError::NonPositiveFitPoint {
                index: i,
                value: *e,
            });
        }
        if err.is_nan() || *err <= 0.0 {
            return Err(CoreError::NonPositiveFitPoint {
                index: i,
                value: *err,
            });
        }
    }
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CoreError::InvalidParam {
            name: "eps_grid",
            reason: "grid must decrease strictly".into(),
        });
    }

    let xs: Vec<f64> = eps_grid.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let ws: Vec<f64> = std_errs
        .iter()
        .zip(errors)
        .map(|(se, err)| {
            let se_log = (se / err).max(1e-12);
            1.0 / (se_log * se_log)
        })
        .collect();
    let w_sum: f64 = ws.iter().sum();
    let x_bar = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / w_sum;
    let y_bar = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / w_sum;
    let sxx: f64 = xs
        .iter()
        .zip(&ws)
        .map(|(x, w)| w * (x - x_bar).powi(2))
        .sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (x - x_bar) * (y - y_bar))
        .sum();
    if sxx <= 0.0 {
        return Err(CoreError::InvalidParam {
            name: "eps_grid",
            reason: "grid has no spread in log scale".into(),
        });
    }
    let slope = sxy / sxx;
    let std_err = 1.0 / sxx.sqrt();
    Ok(OrderFit {
        slope,
        intercept: y_bar - slope * x_bar,
        std_err,
        ci: (slope - 1.96 * std_err, slope + 1.96 * std_err),
    })
}

/// Bounded observables with bounded derivatives, used by the weak study.
#[derive(Debug, Clone, Copy)]
pub struct TestFunctional {
    id: &'static str,
    eval: fn(&SineField) -> f64,
}

impl TestFunctional {
    pub fn by_id(id: &str) -> Result<Self> {
        let entry = match id {
            "sin_e1" => Self {
                id: "sin_e1",
                eval: |x| x.coeff(1).sin(),
            },
            "exp_neg_norm2" => Self {
                id: "exp_neg_norm2",
                eval: |x| (-x.l2_norm().powi(2)).exp(),
            },
            "inv_one_plus_norm2" => Self {
                id: "inv_one_plus_norm2",
                eval: |x| 1.0 / (1.0 + x.l2_norm().powi(2)),
            },
            "constant" => Self {
                id: "constant",
                eval: |_| 1.0,
            },
            other => return Err(CoreError::UnknownScalarFn(other.into())),
        };
        Ok(entry)
    }

    pub fn id(&self) -> &'static str {
        self.id
    }

    pub fn eval(&self, x: &SineField) -> f64 {
        (self.eval)(x)
    }
}

/// Everything needed to rerun a study, recorded alongside its results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Protocol {
    pub model_id: String,
    pub m: usize,
    pub t_horizon: f64,
    pub macro_dt: f64,
    pub kappa: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    /// "strong_sup_p2", a functional id, "moment_p2", or "galerkin_sup".
    pub observable: String,
}

impl Protocol {
    fn new(model: &ModelSpec, params: &SimParams, observable: String) -> Self {
        Self {
            model_id: model.id.clone(),
            m: params.m,
            t_horizon: params.t_horizon,
            macro_dt: params.macro_dt,
            kappa: params.kappa,
            n_paths: params.n_paths,
            master_seed: params.master_seed,
            observable,
        }
    }
}

/// Result of the step-halving time-discretization probe.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BiasProbe {
    /// Shift of the RMS sup-norm averaging-error statistic when the macro
    /// step is halved on the same Brownian paths.
    pub dt_bias: f64,
    /// The statistic itself at the half step.
    pub reference: f64,
    pub suggested_macro_dt: f64,
    pub pass: bool,
}

/// Per-eps error estimates with the fitted order and full protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps_grid: Vec<f64>,
    pub errors: Vec<f64>,
    pub std_errs: Vec<f64>,
    /// Points whose estimate does not clear three standard errors.
    pub below_noise_floor: Vec<bool>,
    pub fitted_order: f64,
    pub order_ci: (f64, f64),
    pub fit_intercept: f64,
    pub bias_probe: BiasProbe,
    pub protocol: Protocol,
}

fn check_eps_grid(eps_grid: &[f64]) -> Result<()> {
    if eps_grid.len() < 3 {
        return Err(CoreError::TooFewPoints(eps_grid.len()));
    }
    for (i, e) in eps_grid.iter().enumerate() {
        if !(*e > 0.0 && *e <= 1.0) {
            return Err(CoreError::NonPositiveFitPoint {
                index: i,
                value: *e,
            });
        }
    }
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CoreError::InvalidParam {
            name: "eps_grid",
            reason: "grid must decrease strictly".into(),
        });
    }
    Ok(())
}

fn require_assumptions(model: &ModelSpec, cov1: &CovSpec, cov2: &CovSpec) -> Result<()> {
    let report = validate_assumptions(model, cov1, cov2);
    if report.overall {
        Ok(())
    } else {
        Err(CoreError::AssumptionsFailed(report.failures().join(", ")))
    }
}

/// Measures how much the averaging-error statistic at the given eps moves
/// when the macro step is halved on the same Brownian paths.
///
/// Each level reports its own `sqrt(E sup_t |X^eps - Xbar|^2)`; the probe
/// value is the shift between the two levels. This is the quantity that
/// pollutes a fitted order: a systematic shift of the plotted point. The
/// pathwise difference between the levels is deliberately not used, because
/// the mid-window fast sample that feeds the slow drift is re-drawn at the
/// finer step and that re-draw is mean-zero noise, not bias; it inflates a
/// pathwise comparison without moving the statistic.
#[allow(clippy::too_many_arguments)]
pub fn bias_probe(
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    x0: &SineField,
    y0: &SineField,
    params: &SimParams,
    fbar: FbarMode<'_>,
    probe_paths: usize,
) -> Result<BiasProbe> {
    let base = params.schedule()?;
    let (coarse, fine) = base.halving_pair();
    let n_paths = probe_paths.max(1);
    let sums: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| -> Result<(f64, f64)> {
            let (xc, _) =
                simulate_coupled_scheduled(x0, y0, model, cov1, cov2, params, coarse, path)?;
            let ac = simulate_averaged_scheduled(x0, model, cov1, params, coarse, fbar, path)?;
            let (xf, _) =
                simulate_coupled_scheduled(x0, y0, model, cov1, cov2, params, fine, path)?;
            let af = simulate_averaged_scheduled(x0, model, cov1, params, fine, fbar, path)?;
            // Both levels evaluate the same observable: the sup over the
            // coarse macro nodes, which is what the study itself reports.
            let mut sup_coarse: f64 = 0.0;
            let mut sup_fine: f64 = 0.0;
            for i in 0..xc.states.len() {
                sup_coarse = sup_coarse.max(xc.states[i].sub(&ac.states[i]).l2_norm());
                sup_fine = sup_fine.max(xf.states[2 * i].sub(&af.states[2 * i]).l2_norm());
            }
            Ok((sup_coarse * sup_coarse, sup_fine * sup_fine))
        })
        .collect::<Result<Vec<_>>>()?;
    let err_coarse = (sums.iter().map(|s| s.0).sum::<f64>() / n_paths as f64).sqrt();
    let err_fine = (sums.iter().map(|s| s.1).sum::<f64>() / n_paths as f64).sqrt();
    let dt_bias = (err_coarse - err_fine).abs();
    let reference = err_fine;
    let pass = if reference > 0.0 {
        dt_bias < 0.1 * reference
    } else {
        dt_bias == 0.0
    };
    let suggested_macro_dt = if dt_bias > 0.0 && reference > 0.0 {
        params.macro_dt * 0.08 * reference / dt_bias
    } else {
        params.macro_dt
    };
    Ok(BiasProbe {
        dt_bias,
        reference,
        suggested_macro_dt,
        pass,
    })
}

#[allow(clippy::too_many_arguments)]
fn guarded_bias_probe(
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    x0: &SineField,
    y0: &SineField,
    params: &SimParams,
    eps_min: f64,
    fbar: FbarMode<'_>,
) -> Result<BiasProbe> {
    let mut probe_params = params.clone();
    probe_params.eps = eps_min;
    let probe = bias_probe(
        model,
        cov1,
        cov2,
        x0,
        y0,
        &probe_params,
        fbar,
        params.n_paths.min(20),
    )?;
    if !probe.pass {
        return Err(CoreError::BiasGuard {
            bias: probe.dt_bias,
            reference: probe.reference,
            suggested: probe.suggested_macro_dt,
        });
    }
    Ok(probe)
}

/// Strong-error study: `(E sup_t |X^eps - Xbar|^p)^{1/p}` per eps with a
/// common-random-number coupled averaged equation, followed by an order fit
/// targeting 1/2.
#[allow(clippy::too_many_arguments)]
pub fn strong_error_study(
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    x0: &SineField,
    y0: &SineField,
    eps_grid: &[f64],
    params: &SimParams,
    p: f64,
    fbar: FbarMode<'_>,
) -> Result<ErrorReport> {
    if p.is_nan() || p < 2.0 {
        return Err(CoreError::InvalidParam {
            name: "p",
            reason: format!("moment order {p} must be at least 2"),
        });
    }
    check_eps_grid(eps_grid)?;
    require_assumptions(model, cov1, cov2)?;
    let eps_min = *eps_grid.last().expect("grid checked non-empty");
    let probe = guarded_bias_probe(model, cov1, cov2, x0, y0, params, eps_min, fbar)?;

    let schedule = {
        let mut p0 = params.clone();
        p0.eps = eps_min;
        p0.schedule()?
    };
    let per_path: Vec<Vec<f64>> = (0..params.n_paths as u64)
        .into_par_iter()
        .map(|path| -> Result<Vec<f64>> {
            let avg = simulate_averaged_scheduled(
                x0,
                model,
                cov1,
                params_with_eps(params, eps_min)?.as_ref(),
                schedule,
                fbar,
                path,
            )?;
            let mut sups = Vec::with_capacity(eps_grid.len());
            for eps in eps_grid {
                let pe = params_with_eps(params, *eps)?;
                let (xt, _) = simulate_coupled_scheduled(
                    x0,
                    y0,
                    model,
                    cov1,
                    cov2,
                    pe.as_ref(),
                    eps_schedule(pe.as_ref())?,
                    path,
                )?;
                sups.push(xt.sup_l2_distance(&avg)?);
            }
            Ok(sups)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = params.n_paths as f64;
    let mut errors = Vec::with_capacity(eps_grid.len());
    let mut std_errs = Vec::with_capacity(eps_grid.len());
    for j in 0..eps_grid.len() {
        let powers: Vec<f64> = per_path.iter().map(|s| s[j].powf(p)).collect();
        let mean = powers.iter().sum::<f64>() / n;
        let var = powers.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se_mean = (var / n).sqrt();
        let err = mean.powf(1.0 / p);
        // Delta method through the 1/p power.
        let se = if mean > 0.0 {
            err * se_mean / (p * mean)
        } else {
            0.0
        };
        errors.push(err);
        std_errs.push(se);
    }
    let flags: Vec<bool> = errors
        .iter()
        .zip(&std_errs)
        .map(|(e, se)| *e <= 3.0 * se)
        .collect();
    let fit = fit_order(eps_grid, &errors, &std_errs)?;
    Ok(ErrorReport {
        eps_grid: eps_grid.to_vec(),
        errors,
        std_errs,
        below_noise_floor: flags,
        fitted_order: fit.slope,
        order_ci: fit.ci,
        fit_intercept: fit.intercept,
        bias_probe: probe,
        protocol: Protocol::new(model, params, format!("strong_sup_p{p}")),
    })
}

/// Weak-error study: `sup_t |E[phi(X^eps_t)] - E[phi(Xbar_t)]|` per eps via
/// the coupled-difference estimator, followed by an order fit targeting 1.
///
/// The mean of `phi(X^eps) - phi(Xbar)` over paths is formed at every macro
/// node and the supremum over nodes is reported, mirroring the uniform-in-time
/// form of the weak bound.  Evaluating only at the final time would discard
/// most of the signal for dissipative models: once the slow semigroup has
/// contracted both laws toward quasi-stationarity the final-time difference
/// of an odd functional is suppressed well below the Monte Carlo floor, while
/// the relaxation-layer window still carries a clean first-order deviation.
/// The standard error is taken at the maximizing node.
///
/// Grid points whose estimate does not clear three standard errors are
/// flagged; if every point is flagged the study is degenerate and refuses to
/// fit a slope through noise.
#[allow(clippy::too_many_arguments)]
pub fn weak_error_study(
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    x0: &SineField,
    y0: &SineField,
    phi: &TestFunctional,
    eps_grid: &[f64],
    params: &SimParams,
    fbar: FbarMode<'_>,
) -> Result<ErrorReport> {
    check_eps_grid(eps_grid)?;
    require_assumptions(model, cov1, cov2)?;
    let eps_min = *eps_grid.last().expect("grid checked non-empty");
    let probe = guarded_bias_probe(model, cov1, cov2, x0, y0, params, eps_min, fbar)?;

    let schedule = {
        let mut p0 = params.clone();
        p0.eps = eps_min;
        p0.schedule()?
    };
    // Per path: for each eps, the functional difference at every macro node.
    let per_path: Vec<Vec<Vec<f64>>> = (0..params.n_paths as u64)
        .into_par_iter()
        .map(|path| -> Result<Vec<Vec<f64>>> {
            let avg = simulate_averaged_scheduled(
                x0,
                model,
                cov1,
                params_with_eps(params, eps_min)?.as_ref(),
                schedule,
                fbar,
                path,
            )?;
            let phi_avg: Vec<f64> = avg.states.iter().map(|s| phi.eval(s)).collect();
            let mut diffs = Vec::with_capacity(eps_grid.len());
            for eps in eps_grid {
                let pe = params_with_eps(params, *eps)?;
                let (xt, _) = simulate_coupled_scheduled(
                    x0,
                    y0,
                    model,
                    cov1,
                    cov2,
                    pe.as_ref(),
                    eps_schedule(pe.as_ref())?,
                    path,
                )?;
                debug_assert_eq!(xt.states.len(), phi_avg.len());
                diffs.push(
                    xt.states
                        .iter()
                        .zip(&phi_avg)
                        .map(|(s, pa)| phi.eval(s) - pa)
                        .collect(),
                );
            }
            Ok(diffs)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = params.n_paths as f64;
    let n_nodes = per_path[0][0].len();
    let mut errors = Vec::with_capacity(eps_grid.len());
    let mut std_errs = Vec::with_capacity(eps_grid.len());
    let mut flags = Vec::with_capacity(eps_grid.len());
    for j in 0..eps_grid.len() {
        let mut best_est = 0.0_f64;
        let mut best_se = 0.0_f64;
        for i in 0..n_nodes {
            let mean = per_path.iter().map(|d| d[j][i]).sum::<f64>() / n;
            let var = per_path
                .iter()
                .map(|d| (d[j][i] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            let se = (var / n).sqrt();
            if mean.abs() > best_est {
                best_est = mean.abs();
                best_se = se;
            }
        }
        errors.push(best_est);
        std_errs.push(best_se);
        flags.push(best_est <= 3.0 * best_se);
    }
    if flags.iter().all(|f| *f) {
        return Err(CoreError::DegenerateStudy(format!(
            "functional {} is statistically indistinguishable from zero at every eps; \
             enlarge the grid, the horizon, or the path budget",
            phi.id()
        )));
    }
    let fit = fit_order(eps_grid, &errors, &std_errs)?;
    Ok(ErrorReport {
        eps_grid: eps_grid.to_vec(),
        errors,
        std_errs,
        below_noise_floor: flags,
        fitted_order: fit.slope,
        order_ci: fit.ci,
        fit_intercept: fit.intercept,
        bias_probe: probe,
        protocol: Protocol::new(model, params, phi.id().to_string()),
    })
}

/// Moment flatness across the eps grid: `E sup_t |X|^p` for the slow
/// component and `sup_t E |Y|^p` for the fast one; both must stay within a
/// 1.2 max/min ratio to count as uniform in eps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub eps_grid: Vec<f64>,
    pub slow_moments: Vec<f64>,
    pub fast_moments: Vec<f64>,
    pub slow_ratio: f64,
    pub fast_ratio: f64,
    pub pass: bool,
    pub protocol: Protocol,
}

fn flatness_ratio(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::MIN, |a, b| a.max(*b));
    let min = values.iter().fold(f64::MAX, |a, b| a.min(*b));
    if max <= 0.0 {
        1.0
    } else {
        max / min
    }
}

#[allow(clippy::too_many_arguments)]
pub fn moment_check(
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    x0: &SineField,
    y0: &SineField,
    eps_grid: &[f64],
    params: &SimParams,
    p: f64,
) -> Result<MomentReport> {
    if p.is_nan() || p < 1.0 {
        return Err(CoreError::InvalidParam {
            name: "p",
            reason: format!("moment order {p} must be at least 1"),
        });
    }
    if eps_grid.is_empty() {
        return Err(CoreError::TooFewPoints(0));
    }
    let n_nodes = params.n_macro_steps()? + 1;
    let mut slow_moments = Vec::with_capacity(eps_grid.len());
    let mut fast_moments = Vec::with_capacity(eps_grid.len());
    for eps in eps_grid {
        let pe = params_with_eps(params, *eps)?;
        let per_path: Vec<(f64, Vec<f64>)> = (0..params.n_paths as u64)
            .into_par_iter()
            .map(|path| -> Result<(f64, Vec<f64>)> {
                let (xt, yt) = crate::integrate::simulate_coupled(
                    x0,
                    y0,
                    model,
                    cov1,
                    cov2,
                    pe.as_ref(),
                    path,
                )?;
                let slow_sup = xt.sup_l2_norm().powf(p);
                let fast_nodes = yt.states.iter().map(|s| s.l2_norm().powf(p)).collect();
                Ok((slow_sup, fast_nodes))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = params.n_paths as f64;
        slow_moments.push(per_path.iter().map(|v| v.0).sum::<f64>() / n);
        let mut node_means = vec![0.0; n_nodes];
        for (_, nodes) in &per_path {
            for (acc, v) in node_means.iter_mut().zip(nodes) {
                *acc += v;
            }
        }
        fast_moments.push(node_means.iter().map(|s| s / n).fold(0.0, f64::max));
    }
    let slow_ratio = flatness_ratio(&slow_moments);
    let fast_ratio = flatness_ratio(&fast_moments);
    Ok(MomentReport {
        eps_grid: eps_grid.to_vec(),
        slow_moments,
        fast_moments,
        slow_ratio,
        fast_ratio,
        pass: slow_ratio < 1.2 && fast_ratio < 1.2,
        protocol: Protocol::new(model, params, format!("moment_p{p}")),
    })
}

/// Truncation refinement against a reference at `2 max(m_list)`: the error
/// `sqrt(E sup_t |pad(X^m) - X^ref|^2)` must decrease strictly in `m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GalerkinReport {
    pub m_list: Vec<usize>,
    pub m_ref: usize,
    pub errors: Vec<f64>,
    pub pass: bool,
    pub protocol: Protocol,
}

#[allow(clippy::too_many_arguments)]
pub fn galerkin_refinement_check(
    model: &ModelSpec,
    cov1: &CovSpec,
    cov2: &CovSpec,
    x0: &SineField,
    y0: &SineField,
    eps: f64,
    params: &SimParams,
    m_list: &[usize],
) -> Result<GalerkinReport> {
    if m_list.len() < 2 {
        return Err(CoreError::TooFewPoints(m_list.len()));
    }
    if m_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoreError::InvalidParam {
            name: "m_list",
            reason: "truncation levels must increase strictly".into(),
        });
    }
    let m_min = m_list[0];
    if x0.modes() > m_min || y0.modes() > m_min {
        return Err(CoreError::InvalidParam {
            name: "x0",
            reason: format!("initial states must live in the coarsest truncation (m = {m_min})"),
        });
    }
    let m_ref = 2 * m_list.last().expect("checked non-empty");

    let run = |m: usize, path: u64| -> Result<Trajectory> {
        let mut pm = params.clone();
        pm.eps = eps;
        pm.m = m;
        let (xt, _) = crate::integrate::simulate_coupled(
            &x0.padded(m),
            &y0.padded(m),
            model,
            cov1,
            cov2,
            &pm,
            path,
        )?;
        Ok(xt)
    };

    let per_path: Vec<Vec<f64>> = (0..params.n_paths as u64)
        .into_par_iter()
        .map(|path| -> Result<Vec<f64>> {
            let reference = run(m_ref, path)?;
            let mut sups = Vec::with_capacity(m_list.len());
            for m in m_list {
                let coarse = run(*m, path)?;
                let mut sup: f64 = 0.0;
                for (i, s) in coarse.states.iter().enumerate() {
                    sup = sup.max(s.padded(m_ref).sub(&reference.states[i]).l2_norm());
                }
                sups.push(sup * sup);
            }
            Ok(sups)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = params.n_paths as f64;
    let errors: Vec<f64> = (0..m_list.len())
        .map(|j| (per_path.iter().map(|s| s[j]).sum::<f64>() / n).sqrt())
        .collect();
    let pass = errors.windows(2).all(|w| w[1] < w[0]);
    Ok(GalerkinReport {
        m_list: m_list.to_vec(),
        m_ref,
        errors,
        pass,
        protocol: Protocol::new(model, params, "galerkin_sup".to_string()),
    })
}

/// Clone of `params` with a different eps, revalidated.
fn params_with_eps(params: &SimParams, eps: f64) -> Result<Box<SimParams>> {
    let mut p = params.clone();
    p.eps = eps;
    p.validate()?;
    Ok(Box::new(p))
}

fn eps_schedule(params: &SimParams) -> Result<crate::integrate::StepSchedule> {
    params.schedule()
}
