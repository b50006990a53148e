//! Shared fixtures for the criterion benches: the default reaction model,
//! trace-class covariances, and smooth deterministic states, so every bench
//! measures the same configuration the convergence studies run.

use msbl_core::{catalog, Channel, CovSpec, ModelSpec, NoiseStream, SimParams, SineField};

pub fn model() -> ModelSpec {
    catalog("linear_gaussian_default").expect("catalog id")
}

pub fn covariances(m_max: usize) -> (CovSpec, CovSpec) {
    (
        CovSpec::power_decay(1.0, 4.0, m_max),
        CovSpec::power_decay(1.0, 2.0, m_max),
    )
}

/// Smooth state with `1/k^2` spectral decay; deterministic per truncation.
pub fn state(m: usize, amp: f64) -> SineField {
    SineField::new((1..=m).map(|k| amp / (k * k) as f64).collect())
        .expect("nonempty coefficient vector")
}

pub fn params(m: usize, eps: f64) -> SimParams {
    SimParams {
        eps,
        t_horizon: 0.5,
        macro_dt: 1e-3,
        kappa: 0.5,
        m,
        n_paths: 1,
        master_seed: 0,
    }
}

pub fn stream(channel: Channel) -> NoiseStream {
    NoiseStream::new(7, 0, channel)
}
