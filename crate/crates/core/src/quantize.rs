//! Quantization: from symbols to concrete kernels on a ball, and the
//! operator-level calculus (composition, adjoint, commutator with the
//! nearest-neighbour averaging operator, sharp products) with certified
//! truncation bounds.
//!
//! The kernel of a quantized symbol is
//!
//! ```text
//! k(x, y) = sum_{|w| = D} nu_x(C_w) q^{h/2} sum_i g_i(x, w) P_i(h),
//! ```
//!
//! where the sum runs over depth-`D` cylinders at `x` (with `D` large enough
//! to fix both the symbol's cylinder and the relative height `h` of `y`),
//! and `P_i(h)` is the profile-weighted oscillatory moment of the spectral
//! grid. Two independent evaluators implement this: a naive one that sums
//! over every depth-`D` stub with the plain cylinder mass, and a grouped one
//! that aggregates stubs by (symbol cylinder, confluence depth) using
//! closed-form group masses. They must agree to near machine precision; the
//! grouped one is the production path.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::boundary::{cylinder_measure_f64, height_diff};
use crate::spectral::SGrid;
use crate::symbols::{CylSymbol, DoubleSymbol};
use crate::tree::{
    ball, common_prefix_len, distance, path_word, stub_seen_from, stubs_at, Colour, NbWord,
    TreeParams, Vertex,
};
use crate::{sum, Error, Result};

/// A complex matrix indexed by the ball `B(o, radius)` in length-then-lex
/// vertex order. Because the ordering is graded, the ball of any smaller
/// radius is an index prefix, which makes restriction a cheap slice.
#[derive(Clone)]
pub struct KernelMatrix {
    params: TreeParams,
    radius: usize,
    verts: Vec<Vertex>,
    data: Array2<Complex64>,
    meta: String,
}

impl std::fmt::Debug for KernelMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelMatrix")
            .field("radius", &self.radius)
            .field("dim", &self.verts.len())
            .field("meta", &self.meta)
            .finish()
    }
}

impl KernelMatrix {
    /// Wraps a dense matrix as a ball kernel. The dimension must match the
    /// ball size for the radius.
    pub fn new(
        params: &TreeParams,
        radius: usize,
        data: Array2<Complex64>,
        meta: String,
    ) -> Result<Self> {
        let verts = ball(params, &Vertex::root(), radius)?;
        if data.nrows() != verts.len() || data.ncols() != verts.len() {
            return Err(Error::Incompatible(format!(
                "matrix is {}x{} but ball of radius {radius} has {} vertices",
                data.nrows(),
                data.ncols(),
                verts.len()
            )));
        }
        Ok(KernelMatrix { params: *params, radius, verts, data, meta })
    }

    /// Builds a kernel entry by entry; rows are filled in parallel but each
    /// entry's arithmetic is fixed, so the result is deterministic.
    pub fn from_fn(
        params: &TreeParams,
        radius: usize,
        meta: String,
        f: impl Fn(&Vertex, &Vertex) -> Result<Complex64> + Sync,
    ) -> Result<Self> {
        let verts = ball(params, &Vertex::root(), radius)?;
        let n = verts.len();
        let rows: Vec<Result<Vec<Complex64>>> = (0..n)
            .into_par_iter()
            .map(|i| verts.iter().map(|y| f(&verts[i], y)).collect())
            .collect();
        let mut data = Array2::zeros((n, n));
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row?.into_iter().enumerate() {
                data[(i, j)] = v;
            }
        }
        Ok(KernelMatrix { params: *params, radius, verts, data, meta })
    }

    /// The identity operator on the ball.
    pub fn identity(params: &TreeParams, radius: usize) -> Result<Self> {
        let verts = ball(params, &Vertex::root(), radius)?;
        let n = verts.len();
        Ok(KernelMatrix {
            params: *params,
            radius,
            verts,
            data: Array2::eye(n),
            meta: format!("identity radius={radius}"),
        })
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Ball vertices in index order.
    pub fn verts(&self) -> &[Vertex] {
        &self.verts
    }

    pub fn dim(&self) -> usize {
        self.verts.len()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn meta(&self) -> &str {
        &self.meta
    }

    /// Replaces the metadata line.
    pub fn with_meta(mut self, meta: String) -> Self {
        self.meta = meta;
        self
    }

    pub fn value(&self, i: usize, j: usize) -> Complex64 {
        self.data[(i, j)]
    }

    /// Index of a vertex in the ball ordering.
    pub fn index_of(&self, x: &Vertex) -> Option<usize> {
        self.verts.binary_search(x).ok()
    }

    /// Entry addressed by vertices rather than indices.
    pub fn entry(&self, x: &Vertex, y: &Vertex) -> Option<Complex64> {
        Some(self.data[(self.index_of(x)?, self.index_of(y)?)])
    }

    /// Restriction to a smaller ball — an index-prefix slice.
    pub fn restrict(&self, inner_radius: usize) -> Result<KernelMatrix> {
        if inner_radius > self.radius {
            return Err(Error::DomainExhausted { need: inner_radius, have: self.radius });
        }
        let n = self.params.ball_count(inner_radius) as usize;
        let data = self.data.slice(ndarray::s![..n, ..n]).to_owned();
        Ok(KernelMatrix {
            params: self.params,
            radius: inner_radius,
            verts: self.verts[..n].to_vec(),
            data,
            meta: format!("{} | restricted to radius {inner_radius}", self.meta),
        })
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> KernelMatrix {
        let data = self.data.t().mapv(|z| z.conj());
        KernelMatrix {
            params: self.params,
            radius: self.radius,
            verts: self.verts.clone(),
            data,
            meta: format!("adjoint of {}", self.meta),
        }
    }

    fn check_same_ball(&self, other: &KernelMatrix) -> Result<()> {
        if self.params.q() != other.params.q() || self.radius != other.radius {
            return Err(Error::Incompatible(format!(
                "kernels live on different balls: q={} r={} vs q={} r={}",
                self.params.q(),
                self.radius,
                other.params.q(),
                other.radius
            )));
        }
        Ok(())
    }

    /// Entrywise difference.
    pub fn sub(&self, other: &KernelMatrix) -> Result<KernelMatrix> {
        self.check_same_ball(other)?;
        Ok(KernelMatrix {
            params: self.params,
            radius: self.radius,
            verts: self.verts.clone(),
            data: &self.data - &other.data,
            meta: format!("({}) - ({})", self.meta, other.meta),
        })
    }

    /// Entrywise sum.
    pub fn add(&self, other: &KernelMatrix) -> Result<KernelMatrix> {
        self.check_same_ball(other)?;
        Ok(KernelMatrix {
            params: self.params,
            radius: self.radius,
            verts: self.verts.clone(),
            data: &self.data + &other.data,
            meta: format!("({}) + ({})", self.meta, other.meta),
        })
    }

    /// Scalar multiple.
    pub fn scaled(&self, c: Complex64) -> KernelMatrix {
        KernelMatrix {
            params: self.params,
            radius: self.radius,
            verts: self.verts.clone(),
            data: self.data.mapv(|z| c * z),
            meta: format!("{c} * ({})", self.meta),
        }
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Largest entry modulus of the difference.
    pub fn max_abs_diff(&self, other: &KernelMatrix) -> Result<f64> {
        self.check_same_ball(other)?;
        let mut m = 0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            m = m.max((a - b).norm());
        }
        Ok(m)
    }

    /// Plain matrix product on the shared ball (no truncation bookkeeping;
    /// see [`compose_kernels`] for the certified version).
    pub fn matmul(&self, other: &KernelMatrix) -> Result<KernelMatrix> {
        self.check_same_ball(other)?;
        Ok(KernelMatrix {
            params: self.params,
            radius: self.radius,
            verts: self.verts.clone(),
            data: self.data.dot(&other.data),
            meta: format!("({}) . ({})", self.meta, other.meta),
        })
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &Array1<Complex64>) -> Array1<Complex64> {
        self.data.dot(v)
    }

    /// Largest distance `d(x, y)` carrying a nonzero entry (exact zeros
    /// only). The identity has bandwidth 0, the averaging operator 1.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0usize;
        for (i, x) in self.verts.iter().enumerate() {
            for (j, y) in self.verts.iter().enumerate() {
                if self.data[(i, j)] != Complex64::new(0.0, 0.0) {
                    b = b.max(distance(x, y));
                }
            }
        }
        b
    }
}

/// The nearest-neighbour averaging operator on the ball: `1/(q+1)` at
/// distance one, zero elsewhere. Interior rows sum to one; rows of boundary
/// vertices see only their in-ball neighbours.
pub fn laplacian_kernel(params: &TreeParams, radius: usize) -> Result<KernelMatrix> {
    let w = 1.0 / (params.qf() + 1.0);
    KernelMatrix::from_fn(params, radius, format!("averaging operator radius={radius}"), |x, y| {
        Ok(if distance(x, y) == 1 { Complex64::new(w, 0.0) } else { Complex64::new(0.0, 0.0) })
    })
}

/// Mass of the stub group that agrees with a geodesic colour word for
/// exactly `j` letters, inside the cylinder fixed by its first `m` letters
/// (`m <= j <= d`, `m < d`).
fn group_mass(params: &TreeParams, j: usize, d: usize) -> f64 {
    let qf = params.qf();
    if j == d {
        cylinder_measure_f64(params, d)
    } else if j == 0 {
        qf / (qf + 1.0)
    } else {
        cylinder_measure_f64(params, j) * (qf - 1.0) / qf
    }
}

/// Profile-weighted oscillatory moments `P_i(h)` for `|h| <= max_h`,
/// indexed `[term][h + max_h]`.
fn moment_tables(grid: &SGrid, a: &CylSymbol, max_h: usize) -> Result<Vec<Vec<Complex64>>> {
    let mut tables = Vec::with_capacity(a.terms().len());
    for (_, eta) in a.terms() {
        let mut row = Vec::with_capacity(2 * max_h + 1);
        for h in -(max_h as i64)..=(max_h as i64) {
            row.push(grid.weighted_moment(h, &|s| eta.value(s)));
        }
        tables.push(row);
    }
    Ok(tables)
}

fn check_kernel_inputs(params: &TreeParams, grid: &SGrid, domain: usize, radius: usize) -> Result<()> {
    if params.q() != grid.params().q() {
        return Err(Error::Incompatible(format!(
            "symbol at q={} but grid at q={}",
            params.q(),
            grid.params().q()
        )));
    }
    if domain < radius {
        return Err(Error::DomainExhausted { need: radius, have: domain });
    }
    Ok(())
}

/// Left quantization of a cylindrical symbol on `B(o, radius)` — the
/// grouped production evaluator. Stubs are enumerated only to the symbol
/// depth `m`; their extensions are aggregated per confluence depth with
/// closed-form masses, and the spectral integral enters through precomputed
/// weighted moments.
pub fn kernel_of_symbol(a: &CylSymbol, radius: usize, grid: &SGrid) -> Result<KernelMatrix> {
    check_kernel_inputs(a.params(), grid, a.domain_radius(), radius)?;
    let params = *a.params();
    let m = a.depth();
    let sqrt_q = params.sqrt_q();
    let moments = moment_tables(grid, a, 2 * radius)?;
    let max_h = 2 * radius as i64;
    let prefixes = stubs_at(&params, m)?;
    let cyl_m = cylinder_measure_f64(&params, m);

    let meta = format!(
        "left-quantized depth-{m} symbol | radius={radius} grid={}",
        grid.label()
    );
    let verts = ball(&params, &Vertex::root(), radius)?;
    let n = verts.len();
    let rows: Vec<Result<Vec<Complex64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &verts[i];
            // Spatial term values are independent of y; evaluate once per row.
            let tv: Vec<Vec<Complex64>> = prefixes
                .iter()
                .map(|u| a.term_values(x, u))
                .collect::<Result<_>>()?;
            let mut row = Vec::with_capacity(n);
            for y in &verts {
                let d = distance(x, y);
                let gamma = path_word(x, y);
                let mut pieces: Vec<Complex64> = Vec::new();
                for (ui, u) in prefixes.iter().enumerate() {
                    let p = common_prefix_len(u, &gamma);
                    let push_group = |j: usize, mass: f64, pieces: &mut Vec<Complex64>| {
                        let h = 2 * j as i64 - d as i64;
                        let amp = mass * sqrt_q.powi(h as i32);
                        let mut val = Complex64::new(0.0, 0.0);
                        for (ti, table) in moments.iter().enumerate() {
                            val += tv[ui][ti] * table[(h + max_h) as usize];
                        }
                        pieces.push(amp * val);
                    };
                    if m < d && p == m {
                        // The prefix runs along the geodesic: extensions
                        // split by the exact depth where they leave it.
                        for j in m..=d {
                            push_group(j, group_mass(&params, j, d), &mut pieces);
                        }
                    } else {
                        // Every extension of this prefix has confluence p.
                        push_group(p, cyl_m, &mut pieces);
                    }
                }
                row.push(sum::pairwise(&pieces));
            }
            Ok(row)
        })
        .collect();
    let mut data = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            data[(i, j)] = v;
        }
    }
    KernelMatrix::new(&params, radius, data, meta)
}

/// One kernel entry summed stub by stub — the reference evaluator. Every
/// depth-`D` stub contributes with the plain cylinder mass; no grouping, no
/// closed-form masses.
pub fn naive_kernel_entry(
    grid: &SGrid,
    c: &DoubleSymbol,
    x: &Vertex,
    y: &Vertex,
) -> Result<Complex64> {
    let params = *c.params();
    let d = distance(x, y);
    let depth = c.required_depth(d);
    let mass = cylinder_measure_f64(&params, depth);
    let sqrt_q = params.sqrt_q();
    let mut pieces = Vec::new();
    for stub in stubs_at(&params, depth)? {
        let w = NbWord::new(&params, x.clone(), stub.clone())?;
        let h = height_diff(x, y, &w)?;
        let amp = mass * sqrt_q.powi(h as i32);
        let tv = c.eval_term_free(x, y, &stub)?;
        let mut val = Complex64::new(0.0, 0.0);
        for (ti, (_, eta)) in c.terms().iter().enumerate() {
            // The moment is recomputed per stub on purpose: the reference
            // path shares no tables with the grouped evaluator.
            val += tv[ti] * grid.weighted_moment(h, &|s| eta.value(s));
        }
        pieces.push(amp * val);
    }
    Ok(sum::pairwise(&pieces))
}

/// Quantization of a two-point symbol, assembled entry by entry with the
/// reference evaluator.
pub fn kernel_of_double(c: &DoubleSymbol, radius: usize, grid: &SGrid) -> Result<KernelMatrix> {
    check_kernel_inputs(c.params(), grid, c.domain_radius(), radius)?;
    let meta = format!(
        "two-point quantization depth-{}+{} | radius={radius} grid={}",
        c.depth(),
        c.depth_from_far(),
        grid.label()
    );
    KernelMatrix::from_fn(c.params(), radius, meta, |x, y| naive_kernel_entry(grid, c, x, y))
}

/// The same kernel entry computed from an arbitrary base point: the
/// boundary integral is rewritten against `nu_base` with the exact
/// Radon-Nikodym factor, and all heights are taken relative to `base`.
/// Base independence of the result is a structural invariant.
pub fn kernel_entry_rebased(
    grid: &SGrid,
    a: &CylSymbol,
    base: &Vertex,
    x: &Vertex,
    y: &Vertex,
) -> Result<Complex64> {
    let params = *a.params();
    let m = a.depth();
    if a.domain_radius() != crate::symbols::UNBOUNDED && x.len() > a.domain_radius() {
        return Err(Error::DomainExhausted { need: x.len(), have: a.domain_radius() });
    }
    let depth = distance(base, x) + distance(base, y) + m;
    let mass = cylinder_measure_f64(&params, depth);
    let lnq = params.ln_q();
    let mut pieces = Vec::new();
    for stub in stubs_at(&params, depth)? {
        let w = NbWord::new(&params, base.clone(), stub.clone())?;
        let hx = height_diff(base, x, &w)?; // h_w(x) - h_w(base)
        let hy = height_diff(base, y, &w)?;
        let h = hy - hx; // height of y relative to x
        let seen = stub_seen_from(base, &stub, x, m)?;
        let tv = a.term_values(x, &seen)?;
        // q^{(1/2+is)h} * q^{hx}: the second factor is the measure change.
        let amp = ((0.5 * h as f64 + hx as f64) * lnq).exp();
        let mut val = Complex64::new(0.0, 0.0);
        for (ti, (_, eta)) in a.terms().iter().enumerate() {
            val += tv[ti] * grid.weighted_moment(h, &|s| eta.value(s));
        }
        pieces.push(mass * amp * val);
    }
    Ok(sum::pairwise(&pieces))
}

/// A certified truncation bound for an operation that cut its lattice sums
/// at the ball boundary.
#[derive(Debug, Clone)]
pub struct TailBound {
    /// Upper bound for the largest entry modulus of the discarded part.
    pub value: f64,
    /// Distance threshold the certificate assumed (`T`).
    pub threshold: usize,
    /// True when the bound is the exact zero of a banded factor.
    pub banded: bool,
    /// Decay constants of the two factors that entered the estimate.
    pub c3_left: f64,
    pub c3_right: f64,
}

/// Composition `A . B` with the middle sum over the full ball, returned on
/// the inner ball of radius `radius - tail` where it is certified.
///
/// For inner vertices every discarded middle point `z` lies at distance
/// `> tail` from `x`, so the discarded mass is controlled by the order-3
/// decay constants of both factors. If the left factor is banded with
/// bandwidth `<= tail`, nothing is discarded at all and the bound is zero.
pub fn compose_kernels(
    a: &KernelMatrix,
    b: &KernelMatrix,
    tail: usize,
) -> Result<(KernelMatrix, TailBound)> {
    a.check_same_ball(b)?;
    if tail > a.radius() {
        return Err(Error::TailTooLarge { tail, radius: a.radius() });
    }
    let inner = a.radius() - tail;
    let product = a.matmul(b)?.restrict(inner)?;
    let product = product.with_meta(format!(
        "composition on inner radius {inner} (tail {tail}) of [{}] and [{}]",
        a.meta(),
        b.meta()
    ));

    let c3_a = decay_profile(a).fitted(3);
    let c3_b = decay_profile(b).fitted(3);
    let bound = if a.bandwidth() <= tail {
        TailBound { value: 0.0, threshold: tail, banded: true, c3_left: c3_a, c3_right: c3_b }
    } else {
        TailBound {
            value: c3_a * c3_b * compose_tail_shape(a.params(), inner, tail),
            threshold: tail,
            banded: false,
            c3_left: c3_a,
            c3_right: c3_b,
        }
    };
    Ok((product, bound))
}

/// Geometric part of the composition tail estimate: discarded middle points
/// at distance `k + n` from `x` and `(d - k) + n` from `y` (projection
/// position `k` on the geodesic, overhang `n`) are counted against the
/// `q^{n}` growth of the tree, which exactly cancels the `q^{-n}` of the
/// two decay envelopes:
///
/// ```text
/// shape(d) = q^{-d/2} sum_{k=0}^{d} sum_{n >= 0, k+n > T}
///            (1+k+n)^{-3} (1+d-k+n)^{-3},
/// ```
///
/// maximised over the distances `d <= 2*inner` realised on the inner ball.
/// The `n`-sum is truncated at 400 with the integral remainder
/// `(1+400)^{-5}/5` added per `k`.
fn compose_tail_shape(params: &TreeParams, inner: usize, tail: usize) -> f64 {
    let mut worst = 0f64;
    const N_CUT: usize = 400;
    let remainder = (1.0 + N_CUT as f64).powi(-5) / 5.0;
    for d in 0..=(2 * inner) {
        let mut total = 0f64;
        for k in 0..=d {
            let mut s = 0f64;
            for n in 0..=N_CUT {
                if k + n <= tail {
                    continue;
                }
                let u = (1 + k + n) as f64;
                let v = (1 + d - k + n) as f64;
                s += u.powi(-3) * v.powi(-3);
            }
            total += s + remainder;
        }
        worst = worst.max(params.sqrt_q().powi(-(d as i32)) * total);
    }
    worst
}

/// Kernel-decay profile: the largest entry modulus at each distance, and
/// the fitted constants `C_N = max_d (1+d)^N q^{d/2} max|k|(d)`.
#[derive(Debug, Clone)]
pub struct DecayProfile {
    per_distance: Vec<f64>,
    fitted: [f64; 5],
    radius: usize,
}

impl DecayProfile {
    /// Largest `|k(x, y)|` over pairs at each distance `0..=2*radius`.
    pub fn per_distance(&self) -> &[f64] {
        &self.per_distance
    }

    /// `C_N` for `N <= 4`.
    pub fn fitted(&self, n: usize) -> f64 {
        self.fitted[n]
    }

    pub fn fitted_all(&self) -> [f64; 5] {
        self.fitted
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// The weighted sequence `(1+d)^N q^{d/2} max|k|(d)` whose supremum is
    /// `C_N`.
    pub fn weighted(&self, n: usize, params: &TreeParams) -> Vec<f64> {
        self.per_distance
            .iter()
            .enumerate()
            .map(|(d, &m)| ((1 + d) as f64).powi(n as i32) * params.sqrt_q().powi(d as i32) * m)
            .collect()
    }
}

/// Measures the decay profile of a kernel.
pub fn decay_profile(a: &KernelMatrix) -> DecayProfile {
    let mut per_distance = vec![0f64; 2 * a.radius() + 1];
    for (i, x) in a.verts().iter().enumerate() {
        for (j, y) in a.verts().iter().enumerate() {
            let d = distance(x, y);
            per_distance[d] = per_distance[d].max(a.value(i, j).norm());
        }
    }
    let sqrt_q = a.params().sqrt_q();
    let mut fitted = [0f64; 5];
    for (n, slot) in fitted.iter_mut().enumerate() {
        for (d, &m) in per_distance.iter().enumerate() {
            *slot = slot.max(((1 + d) as f64).powi(n as i32) * sqrt_q.powi(d as i32) * m);
        }
    }
    DecayProfile { per_distance, fitted, radius: a.radius() }
}

/// Fitted decay constants of a remainder kernel — the table a sweep reports
/// per semiclassical parameter.
pub fn negligibility_report(a: &KernelMatrix) -> [f64; 5] {
    decay_profile(a).fitted_all()
}

/// The commutator of the averaging operator with a quantized symbol is
/// itself quantized, with the explicit depth-`(m+1)` symbol
///
/// ```text
/// c = sqrt(q)/(q+1) * ( q^{-is} (a o sigma - a) + q^{+is} (L a - a) ).
/// ```
pub fn commutator_symbol(a: &CylSymbol) -> Result<CylSymbol> {
    let params = *a.params();
    let scale = Complex64::new(params.sqrt_q() / (params.qf() + 1.0), 0.0);
    let phase_minus = CylSymbol::from_profile(&params, crate::profile::SProfile::phase(&params, -1));
    let phase_plus = CylSymbol::from_profile(&params, crate::profile::SProfile::phase(&params, 1));
    let shift_part = a.shift_compose()?.add(&a.neg())?.multiply(&phase_minus)?;
    let transfer_part = a.transfer()?.add(&a.neg())?.multiply(&phase_plus)?;
    Ok(shift_part.add(&transfer_part)?.scaled(scale))
}

/// Exact matrix commutator `[Delta, A]` on the shared ball. Entries are
/// only faithful to the infinite-tree commutator on the inner ball of
/// radius `radius - 1`, where no neighbour sum is clipped.
pub fn matrix_commutator(a: &KernelMatrix) -> Result<KernelMatrix> {
    let delta = laplacian_kernel(a.params(), a.radius())?;
    let left = delta.matmul(a)?;
    let right = a.matmul(&delta)?;
    left.sub(&right)
}

/// Sharp product data `a # b`: the composed symbol
///
/// ```text
/// (a # b)(x, w, s) = sum_z k_a(x, z) q^{(1/2 - is) h_w(z)} b(z, w|_z, s)
/// ```
///
/// with the `z`-sum truncated to the kernel ball. The type keeps the left
/// kernel, the right symbol and the grid and evaluates on demand — the `s`
/// dependence of a sharp product is genuinely non-separable, so there is no
/// cylindrical symbol to hand back.
pub struct SharpProduct {
    kernel_a: KernelMatrix,
    b: CylSymbol,
    grid: SGrid,
    threshold: usize,
    c3_a: f64,
    sup_b: f64,
}

impl std::fmt::Debug for SharpProduct {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SharpProduct")
            .field("radius", &self.kernel_a.radius())
            .field("threshold", &self.threshold)
            .field("tail_bound", &self.tail_bound())
            .finish()
    }
}

/// Builds the sharp product of two cylindrical symbols on `B(o, radius)`.
pub fn sharp_product(
    a: &CylSymbol,
    b: &CylSymbol,
    radius: usize,
    threshold: usize,
    grid: &SGrid,
) -> Result<SharpProduct> {
    if threshold > radius {
        return Err(Error::TailTooLarge { tail: threshold, radius });
    }
    check_kernel_inputs(b.params(), grid, b.domain_radius(), radius)?;
    let kernel_a = kernel_of_symbol(a, radius, grid)?;
    let c3_a = decay_profile(&kernel_a).fitted(3);
    // Sup of |b| over the ball, its cylinders and the grid nodes.
    let params = b.params();
    let mut sup_b = 0f64;
    for x in ball(params, &Vertex::root(), radius)? {
        for w in stubs_at(params, b.depth())? {
            let tv = b.term_values(&x, &w)?;
            for &s in grid.nodes() {
                let mut val = Complex64::new(0.0, 0.0);
                for (ti, (_, eta)) in b.terms().iter().enumerate() {
                    val += tv[ti] * eta.value(s);
                }
                sup_b = sup_b.max(val.norm());
            }
        }
    }
    Ok(SharpProduct { kernel_a, b: b.clone(), grid: grid.clone(), threshold, c3_a, sup_b })
}

impl SharpProduct {
    pub fn params(&self) -> &TreeParams {
        self.kernel_a.params()
    }

    pub fn radius(&self) -> usize {
        self.kernel_a.radius()
    }

    pub fn kernel_left(&self) -> &KernelMatrix {
        &self.kernel_a
    }

    pub fn grid(&self) -> &SGrid {
        &self.grid
    }

    /// Stub letters needed at `x` to evaluate: heights must settle for
    /// every `z` in the ball and the right symbol must see its cylinder
    /// from `z`.
    pub fn required_stub_len(&self, x: &Vertex) -> usize {
        self.radius() + x.len() + self.b.depth()
    }

    /// Value at a grid node `s_k`. The truncation error is bounded by
    /// [`SharpProduct::tail_bound`] for `|x| <= radius - threshold`.
    pub fn eval(&self, x: &Vertex, stub: &[Colour], node: usize) -> Result<Complex64> {
        let need = self.required_stub_len(x);
        if stub.len() < need {
            return Err(Error::StubTooShort { need, got: stub.len() });
        }
        let params = self.params();
        let s = self.grid.nodes()[node];
        let lnq = params.ln_q();
        let xi = self
            .kernel_a
            .index_of(x)
            .ok_or_else(|| Error::DomainExhausted { need: x.len(), have: self.radius() })?;
        let mb = self.b.depth();
        let mut pieces = Vec::with_capacity(self.kernel_a.dim());
        for (zi, z) in self.kernel_a.verts().iter().enumerate() {
            let ka = self.kernel_a.value(xi, zi);
            if ka == Complex64::new(0.0, 0.0) {
                continue;
            }
            let d = distance(x, z);
            let gamma = path_word(x, z);
            let j = common_prefix_len(stub, &gamma);
            let h = 2 * j as i64 - d as i64;
            // q^{(1/2 - is) h}
            let wave = Complex64::from_polar((0.5 * h as f64 * lnq).exp(), -s * h as f64 * lnq);
            let seen = stub_seen_from(x, stub, z, mb)?;
            let bz = self.b.eval(z, &seen, s)?;
            pieces.push(ka * wave * bz);
        }
        Ok(sum::pairwise(&pieces))
    }

    /// Uniform truncation bound on the certified inner ball
    /// (`|x| <= radius - threshold`): summing the per-distance envelope
    /// `C_3(a) sup|b| (1+d)^{-2}` over the discarded distances
    /// `d > threshold` gives `C_3(a) sup|b| / (1 + threshold)`.
    pub fn tail_bound(&self) -> f64 {
        self.c3_a * self.sup_b / (1.0 + self.threshold as f64)
    }

    pub fn sup_right(&self) -> f64 {
        self.sup_b
    }

    pub fn c3_left(&self) -> f64 {
        self.c3_a
    }
}

/// Remainder measurements at one semiclassical parameter value: how far the
/// adjoint and the composition of quantized symbols deviate from the
/// quantizations of the conjugate and the pointwise product.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub epsilon: f64,
    /// `‖Op(a)* - Op(conj a)‖` on the certified inner ball.
    pub adjoint_norm: f64,
    /// `‖Op(a) Op(a) - Op(a^2)‖` on the certified inner ball.
    pub product_norm: f64,
    /// Fitted decay constants `C_N`, `N <= 3`, of the product remainder.
    pub negligibility: [f64; 4],
    /// Certified composition tail bound that entered the product remainder.
    pub tail_bound: f64,
    pub adjoint_converged: bool,
    pub product_converged: bool,
}

/// Builds the semiclassical remainders of a built-in family at one value of
/// the parameter: quantize `a`, compare `Op(a)*` against `Op(conj a)` and
/// `Op(a)Op(a)` against `Op(a^2)`, both restricted to the inner ball of
/// radius `radius - tail` where the composition is certified.
pub fn sweep_point(
    params: &TreeParams,
    kind: &str,
    k_shift: usize,
    chi_support: f64,
    eps: f64,
    radius: usize,
    tail: usize,
    grid: &SGrid,
    seed: u64,
) -> Result<SweepPoint> {
    if tail > radius {
        return Err(Error::TailTooLarge { tail, radius });
    }
    let a = crate::symbols::builtin_family(params, kind, eps, k_shift, chi_support)?;
    let inner = radius - tail;
    let k_a = kernel_of_symbol(&a, radius, grid)?;

    let k_conj = kernel_of_symbol(&a.conj(), radius, grid)?;
    let adj_rem = k_a.adjoint().sub(&k_conj)?.restrict(inner)?;
    let adj_est = opnorm_estimate(&adj_rem, 2000, seed);

    let (composed, tail_bound) = compose_kernels(&k_a, &k_a, tail)?;
    let k_sq = kernel_of_symbol(&a.multiply(&a)?, radius, grid)?.restrict(inner)?;
    let prod_rem = composed.sub(&k_sq)?;
    let prod_est = opnorm_estimate(&prod_rem, 2000, seed);

    let fitted = decay_profile(&prod_rem).fitted_all();
    Ok(SweepPoint {
        epsilon: eps,
        adjoint_norm: adj_est.norm,
        product_norm: prod_est.norm,
        negligibility: [fitted[0], fitted[1], fitted[2], fitted[3]],
        tail_bound: tail_bound.value,
        adjoint_converged: adj_est.converged,
        product_converged: prod_est.converged,
    })
}

/// Result of the operator-norm power iteration.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    /// Estimated spectral norm (largest singular value).
    pub norm: f64,
    /// Iterations actually performed.
    pub iterations: usize,
    /// Final residual of the Gram eigenproblem.
    pub residual: f64,
    /// Whether the residual dropped below the tolerance.
    pub converged: bool,
}

/// Estimates the spectral norm of a kernel by power iteration on the Gram
/// operator `A* A`, from a seeded random start. Deterministic for a fixed
/// seed; the Rayleigh residual tolerance is `1e-10` (relative).
pub fn opnorm_estimate(a: &KernelMatrix, max_iters: usize, seed: u64) -> NormEstimate {
    let n = a.dim();
    let adj = a.data().t().mapv(|z| z.conj());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Array1<Complex64> = Array1::from_iter(
        (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))),
    );
    let norm_of = |u: &Array1<Complex64>| {
        let sq: Vec<f64> = u.iter().map(|z| z.norm_sqr()).collect();
        sum::pairwise_f64(&sq).sqrt()
    };
    let nv = norm_of(&v);
    if nv == 0.0 || n == 0 {
        return NormEstimate { norm: 0.0, iterations: 0, residual: 0.0, converged: true };
    }
    v.mapv_inplace(|z| z / nv);
    let mut lambda = 0f64;
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    for it in 1..=max_iters {
        iterations = it;
        let w = a.data().dot(&v);
        let gv = adj.dot(&w);
        // Rayleigh quotient of the Gram operator at the unit vector v.
        let wsq: Vec<f64> = w.iter().map(|z| z.norm_sqr()).collect();
        lambda = sum::pairwise_f64(&wsq);
        let rsq: Vec<f64> = gv
            .iter()
            .zip(v.iter())
            .map(|(g, x)| (g - lambda * x).norm_sqr())
            .collect();
        residual = sum::pairwise_f64(&rsq).sqrt();
        let ng = norm_of(&gv);
        if ng == 0.0 {
            return NormEstimate { norm: 0.0, iterations, residual: 0.0, converged: true };
        }
        v = gv.mapv(|z| z / ng);
        if residual <= 1e-10 * lambda.max(1e-300) {
            return NormEstimate {
                norm: lambda.sqrt(),
                iterations,
                residual,
                converged: true,
            };
        }
    }
    NormEstimate { norm: lambda.sqrt(), iterations, residual, converged: false }
}

impl DoubleSymbol {
    /// Per-term spatial values for a given stub (profile factors excluded),
    /// with the same argument checks as evaluation.
    pub fn eval_term_free(
        &self,
        x: &Vertex,
        y: &Vertex,
        stub: &[Colour],
    ) -> Result<Vec<Complex64>> {
        let need = self.required_depth(distance(x, y));
        if stub.len() < need {
            return Err(Error::StubTooShort { need, got: stub.len() });
        }
        let w = &stub[..need];
        Ok(self.terms().iter().map(|(g, _)| g(x, y, w)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::SProfile;
    use crate::symbols::{builtin_family, from_table};
    use std::collections::HashMap;

    fn p2() -> TreeParams {
        TreeParams::new(2).unwrap()
    }

    fn v(params: &TreeParams, s: &str) -> Vertex {
        Vertex::parse(params, s).unwrap()
    }

    fn random_symbol(params: &TreeParams, depth: usize, radius: usize, seed: u64) -> CylSymbol {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = HashMap::new();
        for x in ball(params, &Vertex::root(), radius).unwrap() {
            for w in stubs_at(params, depth).unwrap() {
                let val = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                table.insert((x.word().to_vec(), w), val);
            }
        }
        let with_profile = from_table(params, depth, vec![(table, SProfile::one())]);
        // Attach a genuine profile so the spectral integrals are nontrivial.
        with_profile
            .multiply(&CylSymbol::from_profile(params, SProfile::bump(params)))
            .unwrap()
    }

    #[test]
    fn op_of_one_is_identity() {
        let p = p2();
        let grid = SGrid::build(&p, 128).unwrap();
        let one = CylSymbol::constant(&p, Complex64::new(1.0, 0.0));
        let k = kernel_of_symbol(&one, 3, &grid).unwrap();
        let id = KernelMatrix::identity(&p, 3).unwrap();
        let err = k.max_abs_diff(&id).unwrap();
        assert!(err <= 1e-10, "Op(1) vs identity: {err}");
    }

    #[test]
    fn op_of_eigencurve_is_averaging_operator() {
        for q in [2u32, 3] {
            let p = TreeParams::new(q).unwrap();
            let grid = SGrid::build(&p, 128).unwrap();
            let lam = CylSymbol::from_profile(&p, SProfile::eigencurve(&p));
            let k = kernel_of_symbol(&lam, 3, &grid).unwrap();
            let delta = laplacian_kernel(&p, 3).unwrap();
            let err = k.max_abs_diff(&delta).unwrap();
            assert!(err <= 1e-10, "q={q}: Op(eigencurve) vs averaging: {err}");
        }
    }

    #[test]
    fn averaging_kernel_shape() {
        let p = p2();
        let delta = laplacian_kernel(&p, 3).unwrap();
        assert_eq!(delta.bandwidth(), 1);
        // Interior rows sum to 1; entries are 1/(q+1) at distance one.
        let x = v(&p, "01");
        let xi = delta.index_of(&x).unwrap();
        let row_sum: Complex64 = (0..delta.dim()).map(|j| delta.value(xi, j)).sum();
        assert!((row_sum.re - 1.0).abs() < 1e-15);
        let y = v(&p, "0");
        assert!((delta.entry(&x, &y).unwrap().re - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(delta.entry(&x, &x).unwrap(), Complex64::new(0.0, 0.0));
        // Self-adjoint.
        assert_eq!(delta.adjoint().max_abs_diff(&delta).unwrap(), 0.0);
    }

    #[test]
    fn composition_counts_two_step_paths() {
        let p = p2();
        let delta = laplacian_kernel(&p, 3).unwrap();
        let (dd, tail) = compose_kernels(&delta, &delta, 1).unwrap();
        // The averaging operator is banded with bandwidth 1 <= tail.
        assert!(tail.banded);
        assert_eq!(tail.value, 0.0);
        let w = 1.0 / 9.0; // (q+1)^{-2}
        for (i, x) in dd.verts().iter().enumerate() {
            for (j, y) in dd.verts().iter().enumerate() {
                // Brute-force count of two-step walks x -> z -> y.
                let mut count = 0usize;
                for z in x.neighbours(&p) {
                    if distance(&z, y) == 1 {
                        count += 1;
                    }
                }
                let expect = count as f64 * w;
                assert!(
                    (dd.value(i, j).re - expect).abs() < 1e-14,
                    "walk count mismatch at ({x}, {y}): {} vs {expect}",
                    dd.value(i, j).re
                );
                assert_eq!(dd.value(i, j).im, 0.0);
            }
        }
        // Distance-2 entries: exactly one midpoint, 1/(q+1)^2.
        let x = v(&p, "01");
        let y = v(&p, "02");
        assert!((dd.entry(&x, &y).unwrap().re - w).abs() < 1e-15);
        // Diagonal: q+1 round trips.
        assert!((dd.entry(&x, &x).unwrap().re - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grouped_matches_naive_on_every_entry() {
        for q in [2u32, 3] {
            let p = TreeParams::new(q).unwrap();
            let grid = SGrid::build(&p, 48).unwrap();
            let a = random_symbol(&p, 2, 3, 1234 + q as u64);
            let grouped = kernel_of_symbol(&a, 3, &grid).unwrap();
            let wrapped = DoubleSymbol::from_symbol(&a);
            let naive = kernel_of_double(&wrapped, 3, &grid).unwrap();
            let err = grouped.max_abs_diff(&naive).unwrap();
            assert!(err <= 1e-12, "q={q}: grouped vs naive {err}");
        }
    }

    #[test]
    fn rebasing_leaves_entries_unchanged() {
        let p = p2();
        let grid = SGrid::build(&p, 32).unwrap();
        let a = random_symbol(&p, 1, 4, 99);
        let k = kernel_of_symbol(&a, 2, &grid).unwrap();
        for base in [Vertex::root(), v(&p, "1"), v(&p, "20")] {
            for x in ball(&p, &Vertex::root(), 2).unwrap() {
                for y in ball(&p, &Vertex::root(), 2).unwrap() {
                    let direct = k.entry(&x, &y).unwrap();
                    let rebased = kernel_entry_rebased(&grid, &a, &base, &x, &y).unwrap();
                    assert!(
                        (direct - rebased).norm() <= 1e-12,
                        "base {base}: entry ({x},{y}) differs by {}",
                        (direct - rebased).norm()
                    );
                }
            }
        }
    }

    #[test]
    fn adjoint_is_involutive_and_matches_right_quantization() {
        let p = p2();
        let grid = SGrid::build(&p, 48).unwrap();
        let a = random_symbol(&p, 1, 3, 7);
        let k = kernel_of_symbol(&a, 3, &grid).unwrap();
        // Involution.
        assert_eq!(k.adjoint().adjoint().max_abs_diff(&k).unwrap(), 0.0);
        // (i Delta)* = -i Delta.
        let delta = laplacian_kernel(&p, 3).unwrap();
        let i_delta = delta.scaled(Complex64::new(0.0, 1.0));
        let err = i_delta
            .adjoint()
            .max_abs_diff(&delta.scaled(Complex64::new(0.0, -1.0)))
            .unwrap();
        assert_eq!(err, 0.0);
        // K(a)* equals the two-point quantization reading conj(a) at the
        // far vertex.
        let right = DoubleSymbol::right_quantization(&a.conj());
        let k_right = kernel_of_double(&right, 3, &grid).unwrap();
        let err = k.adjoint().max_abs_diff(&k_right).unwrap();
        assert!(err <= 1e-12, "adjoint vs right quantization: {err}");
    }

    #[test]
    fn commutator_symbol_matches_matrix_commutator() {
        for q in [2u32, 3] {
            let p = TreeParams::new(q).unwrap();
            let grid = SGrid::build(&p, 64).unwrap();
            for kind in ["bump_profile_only", "radial_eps", "shifted_k"] {
                let a = builtin_family(&p, kind, 0.3, 1, 10.0).unwrap();
                let c = commutator_symbol(&a).unwrap();
                assert_eq!(c.depth(), a.depth() + 1);
                let radius = 3;
                let k_c = kernel_of_symbol(&c, radius, &grid).unwrap().restrict(radius - 1).unwrap();
                let k_a = kernel_of_symbol(&a, radius, &grid).unwrap();
                let m_c = matrix_commutator(&k_a).unwrap().restrict(radius - 1).unwrap();
                let err = k_c.max_abs_diff(&m_c).unwrap();
                assert!(err <= 1e-10, "q={q} {kind}: commutator defect {err}");
            }
        }
    }

    #[test]
    fn commutator_of_spectral_symbols_vanishes()  {
        let p = p2();
        let grid = SGrid::build(&p, 32).unwrap();
        // Constants commute with everything.
        let one = CylSymbol::constant(&p, Complex64::new(2.0, 0.5));
        let c = commutator_symbol(&one).unwrap();
        let k = kernel_of_symbol(&c, 2, &grid).unwrap();
        assert!(k.max_abs() <= 1e-12);
        // Radial (s-only) symbols quantize to radial convolutions, which
        // also commute with the averaging operator.
        let radial = CylSymbol::from_profile(&p, SProfile::bump(&p));
        let c = commutator_symbol(&radial).unwrap();
        let k = kernel_of_symbol(&c, 2, &grid).unwrap();
        assert!(k.max_abs() <= 1e-12);
    }

    #[test]
    fn compose_with_identity_is_restriction() {
        let p = p2();
        let grid = SGrid::build(&p, 32).unwrap();
        let b = kernel_of_symbol(&random_symbol(&p, 1, 3, 3), 3, &grid).unwrap();
        let id = KernelMatrix::identity(&p, 3).unwrap();
        let (prod, tail) = compose_kernels(&id, &b, 1).unwrap();
        assert!(tail.banded);
        assert_eq!(tail.value, 0.0);
        let err = prod.max_abs_diff(&b.restrict(2).unwrap()).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn tail_bound_decreases_with_threshold() {
        let p = p2();
        let grid = SGrid::build(&p, 48).unwrap();
        let a = kernel_of_symbol(
            &builtin_family(&p, "bump_profile_only", 0.2, 0, 10.0).unwrap(),
            4,
            &grid,
        )
        .unwrap();
        let mut last = f64::INFINITY;
        for t in 1..=3usize {
            let (_, tail) = compose_kernels(&a, &a, t).unwrap();
            assert!(!tail.banded);
            assert!(tail.value > 0.0);
            assert!(tail.value <= last, "tail grew at t={t}");
            last = tail.value;
        }
    }

    #[test]
    fn tail_errors_when_threshold_exceeds_radius() {
        let p = p2();
        let delta = laplacian_kernel(&p, 2).unwrap();
        assert!(matches!(
            compose_kernels(&delta, &delta, 3),
            Err(Error::TailTooLarge { tail: 3, radius: 2 })
        ));
    }

    #[test]
    fn decay_profiles_of_reference_kernels() {
        let p = p2();
        let id = KernelMatrix::identity(&p, 3).unwrap();
        let prof = decay_profile(&id);
        assert_eq!(prof.per_distance()[0], 1.0);
        assert!(prof.per_distance()[1..].iter().all(|&m| m == 0.0));
        for n in 0..=4 {
            assert_eq!(prof.fitted(n), 1.0);
        }
        let delta = laplacian_kernel(&p, 3).unwrap();
        let prof = decay_profile(&delta);
        let w = 1.0 / 3.0;
        assert!((prof.per_distance()[1] - w).abs() < 1e-15);
        assert_eq!(prof.per_distance()[2], 0.0);
        // C_N = max(1, (1+1)^N sqrt(2)/3 * ... ) with the d=1 term dominating
        // for every N >= 1 at q = 2.
        let expect = 2f64.powi(4) * 2f64.sqrt() * w;
        assert!((prof.fitted(4) - expect).abs() < 1e-12);
        assert_eq!(negligibility_report(&delta), prof.fitted_all());
    }

    #[test]
    fn opnorm_reference_values() {
        let p = p2();
        let id = KernelMatrix::identity(&p, 3).unwrap();
        let est = opnorm_estimate(&id, 2000, 11);
        assert!(est.converged);
        assert!((est.norm - 1.0).abs() <= 1e-10);

        let zero = KernelMatrix::new(
            &p,
            2,
            Array2::zeros((10, 10)),
            "zero".into(),
        )
        .unwrap();
        let est = opnorm_estimate(&zero, 2000, 11);
        assert!(est.converged);
        assert_eq!(est.norm, 0.0);

        // The averaging operator norm grows with the ball but stays under
        // the whole-tree value 2 sqrt(q) / (q+1).
        let bound = 2.0 * p.sqrt_q() / (p.qf() + 1.0);
        let mut last = 0.0;
        for r in [2usize, 4, 6] {
            let delta = laplacian_kernel(&p, r).unwrap();
            let est = opnorm_estimate(&delta, 2000, 11);
            assert!(est.converged, "r={r} residual {}", est.residual);
            assert!(est.norm <= bound + 1e-8, "r={r}: {} vs {bound}", est.norm);
            assert!(est.norm > last, "norm should grow with the ball");
            last = est.norm;
        }
        // Norm is adjoint-invariant.
        let a = kernel_of_symbol(&random_symbol(&p, 1, 3, 17), 3, &SGrid::build(&p, 32).unwrap())
            .unwrap();
        let na = opnorm_estimate(&a, 2000, 5).norm;
        let nadj = opnorm_estimate(&a.adjoint(), 2000, 5).norm;
        assert!((na - nadj).abs() <= 1e-8 * (1.0 + na));
    }

    #[test]
    fn sharp_product_identities() {
        let p = p2();
        let grid = SGrid::build(&p, 32).unwrap();
        let radius = 4;
        let a = builtin_family(&p, "radial_eps", 0.3, 0, 10.0).unwrap();
        let one = CylSymbol::constant(&p, Complex64::new(1.0, 0.0));

        // a # 1 recovers a up to the certified tail.
        let sp = sharp_product(&a, &one, radius, 2, &grid).unwrap();
        let x = v(&p, "0");
        let stub = stubs_at(&p, sp.required_stub_len(&x)).unwrap()[1].clone();
        for node in [0usize, 7, 19] {
            let s = grid.nodes()[node];
            let got = sp.eval(&x, &stub, node).unwrap();
            let want = a.eval(&x, &stub, s).unwrap();
            assert!(
                (got - want).norm() <= sp.tail_bound() + 1e-10,
                "a#1 defect {} vs bound {}",
                (got - want).norm(),
                sp.tail_bound()
            );
        }

        // 1 # b recovers b: the left kernel is the identity up to
        // quadrature error, so the z-sum collapses to z = x.
        let b = builtin_family(&p, "shifted_k", 0.3, 1, 10.0).unwrap();
        let sp = sharp_product(&one, &b, radius, 2, &grid).unwrap();
        let stub = stubs_at(&p, sp.required_stub_len(&x)).unwrap()[2].clone();
        for node in [3usize, 11] {
            let s = grid.nodes()[node];
            let got = sp.eval(&x, &stub, node).unwrap();
            let want = b.eval(&x, &stub, s).unwrap();
            assert!((got - want).norm() <= 1e-8, "1#b defect {}", (got - want).norm());
        }
    }

    #[test]
    fn sharp_product_kernel_equals_composition() {
        // Quantizing a # b entry by entry reproduces the matrix product
        // K_a K_b exactly on the inner ball: the change of base point in
        // the middle sum is an identity of cylinder sums, not an estimate.
        let p = p2();
        let grid = SGrid::build(&p, 16).unwrap();
        let radius = 3;
        let tail = 1;
        let a = builtin_family(&p, "radial_eps", 0.4, 0, 10.0).unwrap();
        let b = builtin_family(&p, "shifted_k", 0.4, 1, 10.0).unwrap();
        let sp = sharp_product(&a, &b, radius, tail, &grid).unwrap();
        let k_a = kernel_of_symbol(&a, radius, &grid).unwrap();
        let k_b = kernel_of_symbol(&b, radius, &grid).unwrap();
        let composed = k_a.matmul(&k_b).unwrap();

        let inner = radius - tail;
        let verts = ball(&p, &Vertex::root(), inner).unwrap();
        let lnq = p.ln_q();
        for x in &verts {
            // The sharp-product values do not depend on y; evaluate them
            // once per (stub, node) and reuse for every target vertex.
            let depth = sp.required_stub_len(x);
            let stubs = stubs_at(&p, depth).unwrap();
            let values: Vec<Vec<Complex64>> = stubs
                .iter()
                .map(|stub| {
                    (0..grid.len()).map(|node| sp.eval(x, stub, node).unwrap()).collect()
                })
                .collect();
            let mass = cylinder_measure_f64(&p, depth);
            for y in &verts {
                // Assemble the kernel of the sharp product at (x, y) by the
                // naive cylinder sum, deep enough for every factor.
                let mut pieces = Vec::new();
                for (si, stub) in stubs.iter().enumerate() {
                    let w = NbWord::new(&p, x.clone(), stub.clone()).unwrap();
                    let h = height_diff(x, y, &w).unwrap();
                    let mut val = Complex64::new(0.0, 0.0);
                    for (node, (&s, &wt)) in
                        grid.nodes().iter().zip(grid.weights().iter()).enumerate()
                    {
                        let amp = Complex64::from_polar(
                            (0.5 * h as f64 * lnq).exp(),
                            s * h as f64 * lnq,
                        );
                        val += wt * values[si][node] * amp;
                    }
                    pieces.push(mass * val);
                }
                let assembled = sum::pairwise(&pieces);
                let reference = composed.entry(x, y).unwrap();
                assert!(
                    (assembled - reference).norm() <= 1e-10,
                    "sharp kernel vs composition at ({x},{y}): {}",
                    (assembled - reference).norm()
                );
            }
        }
    }

    #[test]
    fn kernel_input_checks() {
        let p = p2();
        let p3 = TreeParams::new(3).unwrap();
        let grid3 = SGrid::build(&p3, 16).unwrap();
        let a = CylSymbol::constant(&p, Complex64::new(1.0, 0.0));
        assert!(matches!(
            kernel_of_symbol(&a, 2, &grid3),
            Err(Error::Incompatible(_))
        ));
        let bounded = random_symbol(&p, 1, 2, 4);
        let grid = SGrid::build(&p, 16).unwrap();
        assert!(matches!(
            kernel_of_symbol(&bounded, 3, &grid),
            Err(Error::DomainExhausted { need: 3, have: 2 })
        ));
        let k = kernel_of_symbol(&bounded, 2, &grid).unwrap();
        assert!(matches!(
            k.restrict(5),
            Err(Error::DomainExhausted { need: 5, have: 2 })
        ));
        // Dimension mismatch is rejected.
        assert!(matches!(
            KernelMatrix::new(&p, 3, Array2::zeros((4, 4)), "bad".into()),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn from_fn_determinism() {
        // Parallel assembly must be reproducible bit for bit.
        let p = p2();
        let grid = SGrid::build(&p, 24).unwrap();
        let a = random_symbol(&p, 2, 3, 2024);
        let k1 = kernel_of_symbol(&a, 3, &grid).unwrap();
        let k2 = kernel_of_symbol(&a, 3, &grid).unwrap();
        assert_eq!(k1.max_abs_diff(&k2).unwrap(), 0.0);
    }
}
