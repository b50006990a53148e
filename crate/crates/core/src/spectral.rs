//! Sine-basis spectral algebra on the unit interval with Dirichlet boundaries.
//!
//! Every field in this crate is a finite span of the orthonormal eigenfunctions
//! of the Dirichlet Laplacian on (0, 1),
//!
//! ```text
//! e_k(xi) = sqrt(2) sin(k pi xi),      A e_k = -lambda_k e_k,
//! lambda_k = k^2 pi^2,                 k = 1, 2, ..., m,
//! ```
//!
//! so the heat semigroup, fractional Sobolev norms, and the stochastic
//! convolution are all diagonal. The one genuinely spectral operation is the
//! advection form
//!
//! ```text
//! b(x, y, z) = int_0^1 x(xi) y'(xi) z(xi) dxi,
//! B(x, y)_j  = <x y', e_j>,            B(x) = B(x, x),
//! ```
//!
//! which this module evaluates in closed form through the product-to-sum
//! identity `2 sin(k t) cos(l t) = sin((k+l) t) + sin((k-l) t)`. Working with
//! the exact coefficient convolution instead of a sampled product keeps the
//! cancellation identities `b(x, x, x) = 0` and `b(x, x, y) = -b(x, y, x)/2`
//! true to rounding, which the energy estimates downstream rely on.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{CoreError, Result};

/// Eigenvalue of the negative Dirichlet Laplacian for 1-based mode `k`.
#[inline]
pub fn lambda(k: usize) -> f64 {
    let kpi = k as f64 * PI;
    kpi * kpi
}

/// A field expressed by its first `m` sine coefficients.
///
/// Invariants: `m >= 1` and every coefficient is finite. Constructors enforce
/// both; arithmetic helpers preserve them as long as inputs are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineField {
    coeffs: Vec<f64>,
}

impl SineField {
    /// Wraps a coefficient vector, rejecting empty or non-finite input.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(CoreError::InvalidParam {
                name: "coeffs",
                reason: "a field needs at least one mode".into(),
            });
        }
        if let Some(bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(CoreError::NonFinite {
                context: format!("SineField coefficient {bad}"),
            });
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(m: usize) -> Self {
        assert!(m >= 1, "a field needs at least one mode");
        Self {
            coeffs: vec![0.0; m],
        }
    }

    /// `amp * e_k`, 1-based mode index.
    pub fn basis(m: usize, k: usize, amp: f64) -> Self {
        assert!(k >= 1 && k <= m, "basis mode {k} outside 1..={m}");
        let mut f = Self::zeros(m);
        f.coeffs[k - 1] = amp;
        f
    }

    #[inline]
    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Coefficient of `e_k`, 1-based.
    #[inline]
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs[k - 1]
    }

    /// L2 norm; by Parseval this is the Euclidean norm of the coefficients.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.modes(), other.modes());
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.modes(), other.modes());
        Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.modes(), other.modes());
        Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// In-place `self += a * other`.
    pub fn add_scaled_assign(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.modes(), other.modes());
        for (s, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *s += a * o;
        }
    }

    /// Fractional Sobolev norm `(sum lambda_k^s a_k^2)^{1/2}`; `s` may be
    /// negative, and `s = 0` recovers the L2 norm.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| lambda(i + 1).powf(s) * a * a)
            .sum::<f64>()
            .sqrt()
    }

    /// Heat semigroup `e^{tA}`: damps mode `k` by `exp(-lambda_k t)`.
    pub fn apply_semigroup(&self, t: f64) -> Result<Self> {
        if t < 0.0 {
            return Err(CoreError::NegativeTime { t });
        }
        Ok(Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, a)| a * (-lambda(i + 1) * t).exp())
                .collect(),
        })
    }

    /// Galerkin truncation onto the first `target` modes.
    pub fn project(&self, target: usize) -> Result<Self> {
        if target > self.modes() || target == 0 {
            return Err(CoreError::ProjectUp {
                m: self.modes(),
                target,
            });
        }
        Ok(Self {
            coeffs: self.coeffs[..target].to_vec(),
        })
    }

    /// Zero-pads up to `target` modes; used to compare truncations of
    /// different resolution in the same space.
    pub fn padded(&self, target: usize) -> Self {
        assert!(target >= self.modes());
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(target, 0.0);
        Self { coeffs }
    }

    /// Samples the field on the uniform interior grid `xi_j = j/(n+1)`.
    pub fn to_grid(&self, n: usize) -> Result<GridField> {
        DstPlan::new(self.modes(), n)?.synthesize(self)
    }

    /// Recovers all `n` representable coefficients from interior samples.
    ///
    /// Exact inverse of [`SineField::to_grid`] on bandlimited data: the sine
    /// matrix `S_{jk} = sin(jk pi/(n+1))` satisfies `S^2 = (n+1)/2 I`.
    pub fn from_grid(grid: &GridField) -> Self {
        let n = grid.len();
        let plan = DstPlan::new(n, n).expect("square plan is always valid");
        plan.analyze(grid)
    }
}

/// Pointwise samples of a field at the `n` uniform interior points of (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    values: Vec<f64>,
}

impl GridField {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty());
        Self { values }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Precomputed sine table for repeated transforms at fixed `(m, n)`.
///
/// The table stores `sqrt(2) sin(k pi j / (n+1))` row-major in `j`, so a
/// synthesis is one dense mat-vec and an analysis is the transpose mat-vec
/// scaled by `1/(n+1)`. Steppers keep one plan alive per run; the one-shot
/// field methods build a throwaway plan so both paths share identical
/// arithmetic.
#[derive(Debug, Clone)]
pub struct DstPlan {
    m: usize,
    n: usize,
    table: Vec<f64>,
}

impl DstPlan {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if n < m {
            return Err(CoreError::GridTooCoarse { n, m });
        }
        let h = PI / (n as f64 + 1.0);
        let mut table = Vec::with_capacity(n * m);
        for j in 1..=n {
            for k in 1..=m {
                table.push(std::f64::consts::SQRT_2 * ((k * j) as f64 * h).sin());
            }
        }
        Ok(Self { m, n, table })
    }

    #[inline]
    pub fn modes(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn grid_len(&self) -> usize {
        self.n
    }

    pub fn synthesize(&self, field: &SineField) -> Result<GridField> {
        if field.modes() != self.m {
            return Err(CoreError::ModeMismatch {
                left: field.modes(),
                right: self.m,
            });
        }
        let mut out = GridField::new(vec![0.0; self.n]);
        self.synthesize_into(field, &mut out);
        Ok(out)
    }

    /// Allocation-free synthesis into an existing grid of matching length.
    pub fn synthesize_into(&self, field: &SineField, out: &mut GridField) {
        assert_eq!(field.modes(), self.m);
        assert_eq!(out.len(), self.n);
        for (j, v) in out.values_mut().iter_mut().enumerate() {
            let row = &self.table[j * self.m..(j + 1) * self.m];
            *v = row
                .iter()
                .zip(field.coeffs())
                .map(|(s, a)| s * a)
                .sum::<f64>();
        }
    }

    /// Transpose transform: returns the plan's `m` leading coefficients.
    pub fn analyze(&self, grid: &GridField) -> SineField {
        assert_eq!(grid.len(), self.n, "grid length does not match plan");
        let scale = 1.0 / (self.n as f64 + 1.0);
        let mut coeffs = vec![0.0; self.m];
        for (j, v) in grid.values().iter().enumerate() {
            let row = &self.table[j * self.m..(j + 1) * self.m];
            for (c, s) in coeffs.iter_mut().zip(row) {
                *c += s * v;
            }
        }
        for c in &mut coeffs {
            *c *= scale;
        }
        SineField { coeffs }
    }
}

/// Per-mode semigroup weights `exp(-lambda_k t)`.
pub fn semigroup_weights(m: usize, t: f64) -> Vec<f64> {
    assert!(t >= 0.0);
    (1..=m).map(|k| (-lambda(k) * t).exp()).collect()
}

/// Per-mode `phi_1` weights `(1 - exp(-lambda_k t))/lambda_k`, the exact
/// integral of the semigroup over a step; `-expm1` keeps small `lambda_k t`
/// accurate.
pub fn phi1_weights(m: usize, t: f64) -> Vec<f64> {
    assert!(t >= 0.0);
    (1..=m)
        .map(|k| {
            let l = lambda(k);
            -(-l * t).exp_m1() / l
        })
        .collect()
}

/// Projected advection `B(x, y) = P_m (x y')` by exact coefficient
/// convolution.
///
/// With `x = sum a_k e_k`, `y = sum b_l e_l` the product-to-sum identity gives
///
/// ```text
/// B(x, y)_j = (pi/sqrt(2)) [  sum_{k+l=j} a_k b_l l
///                           + sum_{k-l=j} a_k b_l l
///                           - sum_{l-k=j} a_k b_l l ],
/// ```
///
/// every pair `(k, l)` with `k, l <= m` contributing, output truncated at `m`.
pub fn bilinear_b(x: &SineField, y: &SineField) -> Result<SineField> {
    let m = x.modes();
    if y.modes() != m {
        return Err(CoreError::ModeMismatch {
            left: m,
            right: y.modes(),
        });
    }
    let a = x.coeffs();
    let b = y.coeffs();
    let scale = PI / std::f64::consts::SQRT_2;
    let mut coeffs = vec![0.0; m];
    for j in 1..=m {
        let mut acc = 0.0;
        // k + l = j
        for k in 1..j {
            let l = j - k;
            acc += a[k - 1] * b[l - 1] * l as f64;
        }
        // k - l = j  and  l - k = j
        for l in 1..=(m - j) {
            let k = j + l;
            acc += a[k - 1] * b[l - 1] * l as f64;
            acc -= a[l - 1] * b[k - 1] * k as f64;
        }
        coeffs[j - 1] = scale * acc;
    }
    Ok(SineField { coeffs })
}

/// Burgers nonlinearity `B(x) = P_m (x x')`.
pub fn burgers_b(x: &SineField) -> SineField {
    bilinear_b(x, x).expect("matching mode counts")
}

/// Trilinear form `b(x, y, z) = int_0^1 x y' z dxi` for fields truncated at a
/// common `m`.
///
/// Because `z` has no content above mode `m`, pairing `z` with the projected
/// `B(x, y)` loses nothing and the value is the exact integral.
pub fn trilinear_b(x: &SineField, y: &SineField, z: &SineField) -> Result<f64> {
    if z.modes() != x.modes() {
        return Err(CoreError::ModeMismatch {
            left: x.modes(),
            right: z.modes(),
        });
    }
    Ok(bilinear_b(x, y)?.inner(z))
}
