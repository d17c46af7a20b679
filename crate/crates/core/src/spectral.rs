//! Spectral side: Plancherel density, `c`-function, spherical functions,
//! the Laplacian eigenvalue curve, and quadrature grids on `[0, tau]`.
//!
//! The spectral parameter `s` lives on the half-period `[0, tau]` with
//! `tau = pi / ln q`; the Plancherel measure is `c_P |c(s)|^{-2} ds` with
//! `c_P = q ln q / (4 pi (q+1))`, and restricting from the full period to
//! `[0, tau]` doubles the density. A [`SGrid`] folds the doubled density
//! into Gauss–Legendre weights, so every spectral integral becomes a plain
//! weighted node sum; the oscillatory moments `M_m = sum_k w_k q^{i m s_k}`
//! are cached because kernel assembly reuses them heavily.

use crate::boundary::e_partition;
use crate::sum;
use crate::tree::{TreeParams, Vertex};
use crate::{Error, Result};
use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::RwLock;

/// Minimal number of quadrature nodes considered reliable.
pub const MIN_NODES: usize = 8;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Newton iteration on the Legendre polynomial `P_n` with the classical
/// Chebyshev-like initial guess; converges to machine precision in a
/// handful of steps for every `n` used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(x) and P_n'(x) by the three-term recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                // one clean-up iteration after convergence
                let mut p0 = 1.0;
                let mut p1 = x;
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = nf * (x * p1 - p0) / (x * x - 1.0);
                x -= p1 / dp;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // nodes come out in decreasing order of cos; store ascending
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// The reciprocal modulus squared of the `c`-function:
/// `|c(s)|^{-2} = ((q+1)^2 / q) * 4 sin^2(s ln q) / (q + q^{-1} - 2 cos(2 s ln q))`.
///
/// Vanishes to second order at the lattice points `s in {0, tau}` and equals
/// `4` at the band centre `s = tau / 2` for every `q`.
pub fn c_abs_inv_sq(params: &TreeParams, s: f64) -> f64 {
    let theta = s * params.ln_q();
    let q = params.qf();
    let num = 4.0 * theta.sin().powi(2);
    let den = q + 1.0 / q - 2.0 * (2.0 * theta).cos();
    (q + 1.0).powi(2) / q * num / den
}

/// Harish-Chandra `c`-function
/// `c(z) = (q^{1/2}/(q+1)) (q^{1/2 + iz} - q^{-1/2 - iz}) / (q^{iz} - q^{-iz})`,
/// defined away from the lattice `s in tau * Z` where the denominator
/// vanishes.
pub fn c_function(params: &TreeParams, s: f64) -> Complex64 {
    let q = params.qf();
    let iz = Complex64::new(0.0, s * params.ln_q());
    let num = (iz + 0.5 * params.ln_q()).exp() - (-iz - 0.5 * params.ln_q()).exp();
    let den = iz.exp() - (-iz).exp();
    params.sqrt_q() / (q + 1.0) * num / den
}

/// Leading Plancherel constant `c_P = q ln q / (4 pi (q+1))`.
pub fn plancherel_constant(params: &TreeParams) -> f64 {
    params.qf() * params.ln_q() / (4.0 * std::f64::consts::PI * (params.qf() + 1.0))
}

/// Eigenvalue curve of the averaging Laplacian:
/// `lambda(s) = 2 sqrt(q) cos(s ln q) / (q + 1)`.
pub fn laplacian_eigencurve(params: &TreeParams, s: f64) -> f64 {
    2.0 * params.sqrt_q() * (s * params.ln_q()).cos() / (params.qf() + 1.0)
}

/// Spherical function `phi_s(d)` at radius `d`, by the explicit formula:
/// the polynomial-times-power expression on the lattice `s in {0, tau}` and
/// `c(s) q^{(is - 1/2) d} + c(-s) q^{(-is - 1/2) d}` in between.
pub fn spherical_explicit(params: &TreeParams, s: f64, d: usize) -> f64 {
    let q = params.qf();
    let df = d as f64;
    let lattice = |sign: f64| ((q - 1.0) / (q + 1.0) * df + 1.0) * q.powf(-df / 2.0) * sign;
    if s == 0.0 {
        return lattice(1.0);
    }
    if (s - params.tau()).abs() < f64::EPSILON * params.tau() {
        return lattice(if d % 2 == 0 { 1.0 } else { -1.0 });
    }
    let exponent = |sgn: f64| {
        Complex64::new(-0.5 * df * params.ln_q(), sgn * s * df * params.ln_q()).exp()
    };
    let val = c_function(params, s) * exponent(1.0) + c_function(params, -s) * exponent(-1.0);
    // phi_s is real for real s; the imaginary part is pure rounding noise.
    val.re
}

/// Spherical function through the boundary representation: the confluence
/// partition of `x` turns `phi_s(x) = int q^{(1/2 + is) h_omega(x)} d nu`
/// into the exact finite sum `sum_j nu(E_j(x)) q^{(1/2 + is)(2 j - |x|)}`.
pub fn spherical_via_boundary(params: &TreeParams, s: f64, x: &Vertex) -> f64 {
    let part = e_partition(params, x);
    let d = x.len() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, mass) in part.masses_f64().iter().enumerate() {
        let h = 2.0 * j as f64 - d;
        let factor = Complex64::new(0.5 * h * params.ln_q(), s * h * params.ln_q()).exp();
        acc += mass * factor;
    }
    acc.re
}

/// A spectral quadrature grid on `[0, tau]` with the doubled Plancherel
/// density folded into the weights, plus a cache of oscillatory moments.
///
/// The moment cache is behind an `RwLock`; concurrent fills recompute the
/// same deterministic value, so racing writes are idempotent.
#[derive(Debug)]
pub struct SGrid {
    params: TreeParams,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    moments: RwLock<HashMap<i64, Complex64>>,
}

impl Clone for SGrid {
    fn clone(&self) -> Self {
        SGrid {
            params: self.params,
            nodes: self.nodes.clone(),
            weights: self.weights.clone(),
            moments: RwLock::new(self.moments.read().unwrap().clone()),
        }
    }
}

impl SGrid {
    /// Gauss–Legendre grid with `n_nodes` nodes mapped to `[0, tau]`; each
    /// weight carries `2 c_P |c(s_k)|^{-2}` so that plain weighted sums are
    /// Plancherel integrals. Requires at least [`MIN_NODES`] nodes.
    pub fn build(params: &TreeParams, n_nodes: usize) -> Result<SGrid> {
        if n_nodes < MIN_NODES {
            return Err(Error::GridTooSmall { got: n_nodes, min: MIN_NODES });
        }
        let (xs, ws) = gauss_legendre(n_nodes);
        let tau = params.tau();
        let cp = plancherel_constant(params);
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut weights = Vec::with_capacity(n_nodes);
        for (x, w) in xs.iter().zip(ws.iter()) {
            let s = 0.5 * tau * (x + 1.0);
            nodes.push(s);
            weights.push(0.5 * tau * w * 2.0 * cp * c_abs_inv_sq(params, s));
        }
        Ok(SGrid { params: *params, nodes, weights, moments: RwLock::new(HashMap::new()) })
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Short label identifying the grid (for kernel metadata).
    pub fn label(&self) -> String {
        format!("gl{}@q{}", self.nodes.len(), self.params.q())
    }

    /// Plancherel integral of `f` over `[0, tau]` (doubled density).
    pub fn quadrature(&self, f: &dyn Fn(f64) -> Complex64) -> Complex64 {
        let terms: Vec<Complex64> =
            self.nodes.iter().zip(self.weights.iter()).map(|(&s, &w)| w * f(s)).collect();
        sum::pairwise(&terms)
    }

    /// Cached oscillatory moment `M_m = sum_k w_k q^{i m s_k}`.
    pub fn moment(&self, m: i64) -> Complex64 {
        if let Some(v) = self.moments.read().unwrap().get(&m) {
            return *v;
        }
        let v = self.weighted_moment(m, &|_| Complex64::new(1.0, 0.0));
        self.moments.write().unwrap().insert(m, v);
        v
    }

    /// Profile-weighted moment `sum_k w_k q^{i m s_k} f(s_k)` (uncached).
    pub fn weighted_moment(&self, m: i64, f: &dyn Fn(f64) -> Complex64) -> Complex64 {
        let lnq = self.params.ln_q();
        let terms: Vec<Complex64> = self
            .nodes
            .iter()
            .zip(self.weights.iter())
            .map(|(&s, &w)| w * Complex64::from_polar(1.0, m as f64 * s * lnq) * f(s))
            .collect();
        sum::pairwise(&terms)
    }
}
