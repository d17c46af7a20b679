//! Smooth profiles on the spectral band `[0, tau]` with analytic derivative
//! ladders.
//!
//! Symbols carry, for every spatial term, a function of the spectral
//! parameter `s`. Norm estimates and remainder bounds need `d^k/ds^k` of
//! these profiles, and finite differences are far too noisy at the orders
//! involved, so every [`SProfile`] packages a closure returning the exact
//! `k`-th derivative. Combinators (products, conjugates, scalings) propagate
//! the ladders by the Leibniz rule.
//!
//! A profile may additionally promise to be *flat* at the band ends: the
//! value and every available derivative vanish at `s = 0` and `s = tau`.
//! Flat profiles are the admissible class for the remainder estimates; the
//! flag is advisory and checked in tests, not enforced at construction.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::tree::TreeParams;
use crate::{Error, Result};

/// Highest derivative order any profile ladder is required to provide.
pub const MAX_DERIVATIVE: usize = 8;

/// Binomial coefficient as a float; exact for the small arguments used here.
fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut out = 1.0;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// A smooth function of the spectral parameter together with its derivative
/// ladder. `eval(s, k)` returns `d^k/ds^k` of the profile at `s`; orders
/// above `k_max` are not available.
#[derive(Clone)]
pub struct SProfile {
    eval: Arc<dyn Fn(f64, usize) -> Complex64 + Send + Sync>,
    k_max: usize,
    endpoint_flat: bool,
    label: String,
}

impl fmt::Debug for SProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SProfile")
            .field("label", &self.label)
            .field("k_max", &self.k_max)
            .field("endpoint_flat", &self.endpoint_flat)
            .finish()
    }
}

impl SProfile {
    /// Wraps an explicit derivative ladder. `endpoint_flat` asserts that the
    /// value and all derivatives up to `k_max` vanish at `s = 0` and
    /// `s = tau`.
    pub fn from_fn(
        eval: impl Fn(f64, usize) -> Complex64 + Send + Sync + 'static,
        k_max: usize,
        endpoint_flat: bool,
        label: impl Into<String>,
    ) -> Self {
        SProfile {
            eval: Arc::new(eval),
            k_max,
            endpoint_flat,
            label: label.into(),
        }
    }

    /// The constant profile.
    pub fn constant(c: Complex64) -> Self {
        let flat = c.norm() == 0.0;
        SProfile::from_fn(
            move |_s, k| if k == 0 { c } else { Complex64::new(0.0, 0.0) },
            MAX_DERIVATIVE,
            flat,
            format!("const({c})"),
        )
    }

    /// The constant profile `1`.
    pub fn one() -> Self {
        SProfile::constant(Complex64::new(1.0, 0.0))
    }

    /// The standard bump `exp(-1 / (u (1 - u)))` in the normalised
    /// coordinate `u = s / tau`: it peaks at `e^{-4}` mid-band and vanishes
    /// with all derivatives at `s = 0` and `s = tau`.
    pub fn bump(params: &TreeParams) -> Self {
        let tau = params.tau();
        SProfile::from_fn(
            move |s, k| bump_ladder(s / tau, k, tau),
            MAX_DERIVATIVE,
            true,
            "bump",
        )
    }

    /// The eigenvalue curve of the averaging operator,
    /// `2 sqrt(q) cos(s ln q) / (q + 1)`, with its exact cosine ladder.
    pub fn eigencurve(params: &TreeParams) -> Self {
        let amp = 2.0 * params.sqrt_q() / (params.qf() + 1.0);
        let ln_q = params.ln_q();
        SProfile::from_fn(
            move |s, k| {
                // d^k cos(w s) = w^k cos(w s + k pi/2)
                let w = ln_q;
                let phase = s * w + k as f64 * std::f64::consts::FRAC_PI_2;
                Complex64::new(amp * w.powi(k as i32) * phase.cos(), 0.0)
            },
            MAX_DERIVATIVE,
            false,
            "eigencurve",
        )
    }

    /// The oscillating profile `q^{i m s} = exp(i m s ln q)`. Its `k`-th
    /// derivative is `(i m ln q)^k q^{i m s}`. Unimodular, hence never flat.
    pub fn phase(params: &TreeParams, m: i64) -> Self {
        let ln_q = params.ln_q();
        SProfile::from_fn(
            move |s, k| {
                let base = Complex64::new(0.0, m as f64 * s * ln_q).exp();
                Complex64::new(0.0, m as f64 * ln_q).powu(k as u32) * base
            },
            MAX_DERIVATIVE,
            false,
            format!("phase({m})"),
        )
    }

    /// Pointwise product, with the Leibniz ladder
    /// `(ab)^(k) = sum_i C(k, i) a^(i) b^(k-i)`.
    pub fn product(a: &SProfile, b: &SProfile) -> Self {
        let fa = a.eval.clone();
        let fb = b.eval.clone();
        SProfile {
            eval: Arc::new(move |s, k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..=k {
                    acc += binom(k, i) * fa(s, i) * fb(s, k - i);
                }
                acc
            }),
            // One flat factor flattens every Leibniz term.
            k_max: a.k_max.min(b.k_max),
            endpoint_flat: a.endpoint_flat || b.endpoint_flat,
            label: format!("({})*({})", a.label, b.label),
        }
    }

    /// Scalar multiple.
    pub fn scaled(&self, c: Complex64) -> Self {
        let f = self.eval.clone();
        SProfile {
            eval: Arc::new(move |s, k| c * f(s, k)),
            k_max: self.k_max,
            endpoint_flat: self.endpoint_flat,
            label: format!("{c}*({})", self.label),
        }
    }

    /// Complex conjugate; since `s` is real the ladder conjugates termwise.
    pub fn conj(&self) -> Self {
        let f = self.eval.clone();
        SProfile {
            eval: Arc::new(move |s, k| f(s, k).conj()),
            k_max: self.k_max,
            endpoint_flat: self.endpoint_flat,
            label: format!("conj({})", self.label),
        }
    }

    /// Value at `s`.
    pub fn value(&self, s: f64) -> Complex64 {
        (self.eval)(s, 0)
    }

    /// The `k`-th derivative at `s`; orders above [`Self::k_max`] error out.
    pub fn derivative(&self, s: f64, k: usize) -> Result<Complex64> {
        if k > self.k_max {
            return Err(Error::DerivativeOrder { k, max: self.k_max });
        }
        Ok((self.eval)(s, k))
    }

    /// Highest derivative order this ladder provides.
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Whether all odd derivatives are promised to vanish at the band ends.
    pub fn endpoint_flat(&self) -> bool {
        self.endpoint_flat
    }

    /// Human-readable construction trace.
    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Derivative ladder of `exp(g(u))` with `g(u) = -1/(u(1-u)) = -1/u - 1/(1-u)`,
/// by the complete Bell recurrence `B_{n+1} = sum_i C(n, i) B_{n-i} g^{(i+1)}`,
/// then rescaled by `tau^{-k}` for the chain rule from `u` back to `s`.
fn bump_ladder(u: f64, k: usize, tau: f64) -> Complex64 {
    if u <= 0.0 || u >= 1.0 {
        return Complex64::new(0.0, 0.0);
    }
    let g = -1.0 / u - 1.0 / (1.0 - u);
    // Below this the exponential underflows; returning zero keeps the
    // polynomial factors from turning 0 * inf into NaN.
    if g < -690.0 {
        return Complex64::new(0.0, 0.0);
    }
    let value = g.exp();
    if k == 0 {
        return Complex64::new(value, 0.0);
    }
    // g^{(j)}(u) = (-1)^{j+1} j! u^{-(j+1)} - j! (1-u)^{-(j+1)}
    let mut g_der = [0.0f64; MAX_DERIVATIVE + 1];
    let mut factorial = 1.0;
    for (j, slot) in g_der.iter_mut().enumerate().take(k + 1).skip(1) {
        factorial *= j as f64;
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        *slot = sign * factorial * u.powi(-(j as i32 + 1))
            - factorial * (1.0 - u).powi(-(j as i32 + 1));
    }
    let mut bell = [0.0f64; MAX_DERIVATIVE + 1];
    bell[0] = 1.0;
    for n in 0..k {
        let mut acc = 0.0;
        for i in 0..=n {
            acc += binom(n, i) * bell[n - i] * g_der[i + 1];
        }
        bell[n + 1] = acc;
    }
    Complex64::new(value * bell[k] * tau.powi(-(k as i32)), 0.0)
}
