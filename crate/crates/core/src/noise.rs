//! Diagonal Q-Wiener noise with counter-addressed, replayable streams.
//!
//! Both driving processes share the sine eigenbasis: `Q e_k = alpha_k e_k`,
//! so a Wiener increment over `dt` is `sum_k sqrt(alpha_k dt) xi_k e_k` with
//! iid standard normals `xi_k`, and the stochastic convolution against the
//! heat semigroup has the exact per-mode variance
//!
//! ```text
//! Var int_0^dt e^{-lambda_k (dt-s)} sqrt(alpha_k) dW_k(s)
//!     = alpha_k (1 - e^{-2 lambda_k dt}) / (2 lambda_k).
//! ```
//!
//! Randomness is a pure function of the address `(master_seed, path_id,
//! channel, step)`: the tuple is hashed into a ChaCha8 key and mode `k` always
//! consumes the k-th draw of that stream. Consequences the rest of the crate
//! leans on:
//! - replaying a path never depends on thread schedule or call order,
//! - coupled and averaged runs fed the same address see identical W1 fields,
//! - truncations at different `m` share every mode they have in common.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::spectral::{lambda, SineField};

/// Spectrum of a diagonal covariance operator.
///
/// Serialized with the law name as the single key, e.g.
/// `{"power_decay": {"scale": 1.0, "exponent": 2.0}}` or `"zero"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovLaw {
    /// `alpha_k = scale * k^{-exponent}`.
    PowerDecay { scale: f64, exponent: f64 },
    /// Explicit leading eigenvalues; zero beyond the listed ones.
    FiniteRank { alphas: Vec<f64> },
    /// No noise on this channel.
    Zero,
}

/// A covariance law together with the largest mode index it is declared for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovSpec {
    pub law: CovLaw,
    pub m_max: usize,
}

impl CovSpec {
    pub fn power_decay(scale: f64, exponent: f64, m_max: usize) -> Self {
        Self {
            law: CovLaw::PowerDecay { scale, exponent },
            m_max,
        }
    }

    pub fn finite_rank(alphas: Vec<f64>, m_max: usize) -> Self {
        Self {
            law: CovLaw::FiniteRank { alphas },
            m_max,
        }
    }

    pub fn zero(m_max: usize) -> Self {
        Self {
            law: CovLaw::Zero,
            m_max,
        }
    }

    /// Rejects negative eigenvalues and nonsensical ranges.
    pub fn validate(&self) -> Result<()> {
        if self.m_max == 0 {
            return Err(CoreError::InvalidParam {
                name: "m_max",
                reason: "covariance must cover at least one mode".into(),
            });
        }
        match &self.law {
            CovLaw::PowerDecay { scale, .. } => {
                if *scale < 0.0 || !scale.is_finite() {
                    return Err(CoreError::NegativeCovariance {
                        k: 1,
                        alpha: *scale,
                    });
                }
            }
            CovLaw::FiniteRank { alphas } => {
                for (i, a) in alphas.iter().enumerate() {
                    if *a < 0.0 || !a.is_finite() {
                        return Err(CoreError::NegativeCovariance {
                            k: i + 1,
                            alpha: *a,
                        });
                    }
                }
            }
            CovLaw::Zero => {}
        }
        Ok(())
    }

    /// Eigenvalue `alpha_k`, 1-based; rejected above `m_max`.
    pub fn alpha(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.m_max {
            return Err(CoreError::ModeOutOfRange {
                k,
                m_max: self.m_max,
            });
        }
        Ok(match &self.law {
            CovLaw::PowerDecay { scale, exponent } => scale * (k as f64).powf(-exponent),
            CovLaw::FiniteRank { alphas } => alphas.get(k - 1).copied().unwrap_or(0.0),
            CovLaw::Zero => 0.0,
        })
    }

    /// Leading `m` eigenvalues.
    pub fn alphas(&self, m: usize) -> Result<Vec<f64>> {
        (1..=m).map(|k| self.alpha(k)).collect()
    }
}

/// Which driving Wiener process a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    W1,
    W2,
}

/// Address of one block of Gaussian draws.
///
/// `step` is a flat counter; integrators map (macro step, substep, refinement
/// slot) onto it so that runs with different step sizes can still share a
/// Brownian path by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub path_id: u64,
    pub channel: Channel,
    pub step: u64,
}

fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
}

fn mix_output(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl NoiseStream {
    pub fn new(master_seed: u64, path_id: u64, channel: Channel) -> Self {
        Self {
            master_seed,
            path_id,
            channel,
            step: 0,
        }
    }

    pub fn at_step(&self, step: u64) -> Self {
        Self { step, ..*self }
    }

    /// ChaCha8 keyed by a splitmix64 chain over the address tuple.
    fn rng(&self) -> ChaCha8Rng {
        let channel_tag: u64 = match self.channel {
            Channel::W1 => 0x5731,
            Channel::W2 => 0x5732,
        };
        let mut state: u64 = 0x6D73_626C_6E6F_6973; // domain tag
        let mut absorb = |v: u64| {
            state ^= mix_output(v ^ state.rotate_left(17));
            splitmix64(&mut state);
        };
        absorb(self.master_seed);
        absorb(self.path_id);
        absorb(channel_tag);
        absorb(self.step);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            splitmix64(&mut state);
            chunk.copy_from_slice(&mix_output(state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// The k-th entry is always the k-th draw of the stream, independent of
    /// how many modes the caller asks for.
    pub fn standard_normals(&self, m: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..m).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// Wiener increment `sqrt(Q) (W_{t+dt} - W_t)` truncated to `m` modes.
pub fn wiener_increment(
    cov: &CovSpec,
    m: usize,
    dt: f64,
    stream: &NoiseStream,
) -> Result<SineField> {
    if dt <= 0.0 {
        return Err(CoreError::NonPositiveStep { dt });
    }
    let alphas = cov.alphas(m)?;
    let normals = stream.standard_normals(m);
    SineField::new(
        alphas
            .iter()
            .zip(&normals)
            .map(|(a, xi)| (a * dt).sqrt() * xi)
            .collect(),
    )
}

/// Exact stochastic-convolution increment
/// `int_t^{t+dt} e^{(t+dt-s)A} sqrt(Q) dW(s)` truncated to `m` modes.
pub fn convolution_increment(
    cov: &CovSpec,
    m: usize,
    dt: f64,
    stream: &NoiseStream,
) -> Result<SineField> {
    if dt <= 0.0 {
        return Err(CoreError::NonPositiveStep { dt });
    }
    let alphas = cov.alphas(m)?;
    let normals = stream.standard_normals(m);
    SineField::new(
        alphas
            .iter()
            .zip(&normals)
            .enumerate()
            .map(|(i, (a, xi))| (a * convolution_variance_unit(lambda(i + 1), dt)).sqrt() * xi)
            .collect(),
    )
}

/// `(1 - e^{-2 lambda dt}) / (2 lambda)`, the unit-alpha convolution variance.
#[inline]
pub fn convolution_variance_unit(lambda_k: f64, dt: f64) -> f64 {
    -(-2.0 * lambda_k * dt).exp_m1() / (2.0 * lambda_k)
}
