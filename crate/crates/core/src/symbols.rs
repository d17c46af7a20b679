//! Separable cylindrical symbols and their calculus.
//!
//! A symbol here is a finite sum `a(x, w, s) = sum_i g_i(x, w) eta_i(s)`
//! where `x` is a vertex, `w` the first `depth` letters of a boundary
//! direction seen from `x`, and `eta_i` an [`SProfile`]. This separable
//! cylindrical form is closed under sums, products, conjugation, the shift
//! along the boundary direction and its transfer-operator left inverse — so
//! every object the calculus produces stays in the class, and all boundary
//! integrals against such symbols reduce to exact finite sums.
//!
//! [`validate_class`] measures the regularity data behind the operator-norm
//! and kernel-decay estimates: spectral-derivative sup norms, the decay of
//! conditional-average defects in the cylinder depth, spatial Lipschitz
//! quotients along shared boundary directions, and the cross table mixing
//! base-point moves with cylinder averaging.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::boundary::conditional_average;
use crate::profile::SProfile;
use crate::spectral::SGrid;
use crate::tree::{ball, distance, stub_seen_from, stubs_at, Colour, TreeParams, Vertex};
use crate::{sum, Error, Result};

/// Sentinel domain radius for symbols defined on the whole tree.
pub const UNBOUNDED: usize = usize::MAX;

/// Spatial part of a separable term: a function of the base vertex and the
/// first `depth` letters of the boundary direction.
pub type SpatialFn = Arc<dyn Fn(&Vertex, &[Colour]) -> Complex64 + Send + Sync>;

/// Spatial part of a two-point term: additionally sees the far vertex.
pub type DoubleSpatialFn = Arc<dyn Fn(&Vertex, &Vertex, &[Colour]) -> Complex64 + Send + Sync>;

fn shrink_domain(d: usize) -> Result<usize> {
    if d == UNBOUNDED {
        Ok(UNBOUNDED)
    } else if d == 0 {
        Err(Error::DomainExhausted { need: 1, have: 0 })
    } else {
        Ok(d - 1)
    }
}

/// All non-backtracking extensions of `prefix` by `extra` letters, in
/// lexicographic order of the appended part.
fn extend_all(params: &TreeParams, prefix: &[Colour], extra: usize) -> Vec<Vec<Colour>> {
    fn rec(params: &TreeParams, extra: usize, cur: &mut Vec<Colour>, out: &mut Vec<Vec<Colour>>) {
        if extra == 0 {
            out.push(cur.clone());
            return;
        }
        for c in params.colours() {
            if cur.last() == Some(&c) {
                continue;
            }
            cur.push(c);
            rec(params, extra - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    let mut cur = prefix.to_vec();
    rec(params, extra, &mut cur, &mut out);
    out
}

/// A finite sum of separable cylindrical terms.
#[derive(Clone)]
pub struct CylSymbol {
    params: TreeParams,
    depth: usize,
    domain_radius: usize,
    terms: Vec<(SpatialFn, SProfile)>,
}

impl std::fmt::Debug for CylSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CylSymbol")
            .field("depth", &self.depth)
            .field("domain_radius", &self.domain_radius)
            .field("terms", &self.terms.len())
            .finish()
    }
}

impl CylSymbol {
    /// Assembles a symbol from explicit terms.
    pub fn new(
        params: TreeParams,
        depth: usize,
        domain_radius: usize,
        terms: Vec<(SpatialFn, SProfile)>,
    ) -> Self {
        CylSymbol {
            params,
            depth,
            domain_radius,
            terms,
        }
    }

    /// The constant symbol `c` (depth 0, whole tree).
    pub fn constant(params: &TreeParams, c: Complex64) -> Self {
        let g: SpatialFn = Arc::new(move |_, _| c);
        CylSymbol::new(params.clone(), 0, UNBOUNDED, vec![(g, SProfile::one())])
    }

    /// A symbol depending on `s` only: `a(x, w, s) = eta(s)`.
    pub fn from_profile(params: &TreeParams, eta: SProfile) -> Self {
        let g: SpatialFn = Arc::new(|_, _| Complex64::new(1.0, 0.0));
        CylSymbol::new(params.clone(), 0, UNBOUNDED, vec![(g, eta)])
    }

    /// A symbol with a single spatial term and the constant profile `1`.
    pub fn from_spatial(params: &TreeParams, depth: usize, g: SpatialFn) -> Self {
        CylSymbol::new(params.clone(), depth, UNBOUNDED, vec![(g, SProfile::one())])
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    /// Number of boundary letters the symbol reads.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Radius of the vertex ball the spatial parts cover ([`UNBOUNDED`] for
    /// the whole tree).
    pub fn domain_radius(&self) -> usize {
        self.domain_radius
    }

    /// The separable terms.
    pub fn terms(&self) -> &[(SpatialFn, SProfile)] {
        &self.terms
    }

    fn check_args(&self, x: &Vertex, stub: &[Colour]) -> Result<()> {
        if self.domain_radius != UNBOUNDED && x.len() > self.domain_radius {
            return Err(Error::DomainExhausted {
                need: x.len(),
                have: self.domain_radius,
            });
        }
        if stub.len() < self.depth {
            return Err(Error::StubTooShort {
                need: self.depth,
                got: stub.len(),
            });
        }
        Ok(())
    }

    fn check_same_tree(&self, other: &CylSymbol) -> Result<()> {
        if self.params.q() != other.params.q() {
            return Err(Error::Incompatible(format!(
                "symbols live on different trees: q = {} vs {}",
                self.params.q(),
                other.params.q()
            )));
        }
        Ok(())
    }

    /// Value `a(x, w, s)`; the stub may be longer than the depth.
    pub fn eval(&self, x: &Vertex, stub: &[Colour], s: f64) -> Result<Complex64> {
        self.eval_ds(x, stub, s, 0)
    }

    /// Spectral derivative `d^k/ds^k a(x, w, s)`.
    pub fn eval_ds(&self, x: &Vertex, stub: &[Colour], s: f64, k: usize) -> Result<Complex64> {
        self.check_args(x, stub)?;
        let w = &stub[..self.depth];
        let mut acc = Complex64::new(0.0, 0.0);
        for (g, eta) in &self.terms {
            acc += g(x, w) * eta.derivative(s, k)?;
        }
        Ok(acc)
    }

    /// Per-term spatial values `g_i(x, w)` — the profile-independent data a
    /// kernel assembly needs once per cylinder.
    pub fn term_values(&self, x: &Vertex, stub: &[Colour]) -> Result<Vec<Complex64>> {
        self.check_args(x, stub)?;
        let w = &stub[..self.depth];
        Ok(self.terms.iter().map(|(g, _)| g(x, w)).collect())
    }

    /// Termwise sum; depth is the larger one, the domain the smaller.
    pub fn add(&self, other: &CylSymbol) -> Result<CylSymbol> {
        self.check_same_tree(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(CylSymbol::new(
            self.params.clone(),
            self.depth.max(other.depth),
            self.domain_radius.min(other.domain_radius),
            terms,
        ))
    }

    /// Scalar multiple (scales the spatial parts).
    pub fn scaled(&self, c: Complex64) -> CylSymbol {
        let terms = self
            .terms
            .iter()
            .map(|(g, eta)| {
                let g = g.clone();
                let f: SpatialFn = Arc::new(move |x: &Vertex, w: &[Colour]| c * g(x, w));
                (f, eta.clone())
            })
            .collect();
        CylSymbol::new(self.params.clone(), self.depth, self.domain_radius, terms)
    }

    /// Negation.
    pub fn neg(&self) -> CylSymbol {
        self.scaled(Complex64::new(-1.0, 0.0))
    }

    /// Pointwise complex conjugate.
    pub fn conj(&self) -> CylSymbol {
        let terms = self
            .terms
            .iter()
            .map(|(g, eta)| {
                let g = g.clone();
                let f: SpatialFn = Arc::new(move |x: &Vertex, w: &[Colour]| g(x, w).conj());
                (f, eta.conj())
            })
            .collect();
        CylSymbol::new(self.params.clone(), self.depth, self.domain_radius, terms)
    }

    /// Pointwise product: all pairwise term products, profiles multiplied by
    /// the Leibniz rule; depth is the larger of the two.
    pub fn multiply(&self, other: &CylSymbol) -> Result<CylSymbol> {
        self.check_same_tree(other)?;
        let ma = self.depth;
        let mb = other.depth;
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (ga, ea) in &self.terms {
            for (gb, eb) in &other.terms {
                let ga = ga.clone();
                let gb = gb.clone();
                let f: SpatialFn =
                    Arc::new(move |x: &Vertex, w: &[Colour]| ga(x, &w[..ma]) * gb(x, &w[..mb]));
                terms.push((f, SProfile::product(ea, eb)));
            }
        }
        Ok(CylSymbol::new(
            self.params.clone(),
            ma.max(mb),
            self.domain_radius.min(other.domain_radius),
            terms,
        ))
    }

    /// Composition with the shift one step along the boundary direction:
    /// `(a o sigma)(x, w, s) = a(x.step(w_0), w_1..w_m, s)`. Depth grows by
    /// one, the usable domain shrinks by one.
    pub fn shift_compose(&self) -> Result<CylSymbol> {
        let domain = shrink_domain(self.domain_radius)?;
        let m = self.depth;
        let terms = self
            .terms
            .iter()
            .map(|(g, eta)| {
                let g = g.clone();
                let f: SpatialFn =
                    Arc::new(move |x: &Vertex, w: &[Colour]| g(&x.step(w[0]), &w[1..=m]));
                (f, eta.clone())
            })
            .collect();
        Ok(CylSymbol::new(
            self.params.clone(),
            m + 1,
            domain,
            terms,
        ))
    }

    /// The transfer operator, averaging over the `q` shift preimages:
    /// `(La)(x, w, s) = (1/q) sum_{c != w_0} a(x.step(c), [c, w_0..w_{m-2}], s)`.
    /// The left-inverse identity `L(a o sigma) = a` holds pointwise.
    pub fn transfer(&self) -> Result<CylSymbol> {
        let domain = shrink_domain(self.domain_radius)?;
        let m = self.depth;
        let depth_out = m.saturating_sub(1).max(1);
        let qf = self.params.qf();
        let terms = self
            .terms
            .iter()
            .map(|(g, eta)| {
                let g = g.clone();
                let params = self.params.clone();
                let f: SpatialFn = Arc::new(move |x: &Vertex, w: &[Colour]| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut inner: Vec<Colour> = Vec::with_capacity(m);
                    for c in params.colours() {
                        if c == w[0] {
                            continue;
                        }
                        inner.clear();
                        if m >= 1 {
                            inner.push(c);
                            inner.extend_from_slice(&w[..m - 1]);
                        }
                        acc += g(&x.step(c), &inner);
                    }
                    acc / qf
                });
                (f, eta.clone())
            })
            .collect();
        Ok(CylSymbol::new(
            self.params.clone(),
            depth_out,
            domain,
            terms,
        ))
    }

    /// Conditional average onto depth-`n` cylinders at the symbol's own base
    /// point: the arithmetic mean over all depth-`depth` extensions of the
    /// first `n` letters. `n = -1` is the zero operator (the convention that
    /// makes telescoping sums over `n` start cleanly); `n >= depth` is the
    /// identity.
    pub fn average_en_self(&self, n: i64) -> Result<CylSymbol> {
        if n < 0 {
            return Ok(CylSymbol::new(
                self.params.clone(),
                0,
                self.domain_radius,
                Vec::new(),
            ));
        }
        let n = n as usize;
        let m = self.depth;
        if n >= m {
            return Ok(self.clone());
        }
        let terms = self
            .terms
            .iter()
            .map(|(g, eta)| {
                let g = g.clone();
                let params = self.params.clone();
                let f: SpatialFn = Arc::new(move |x: &Vertex, w: &[Colour]| {
                    let exts = extend_all(&params, &w[..n], m - n);
                    let vals: Vec<Complex64> = exts.iter().map(|e| g(x, e)).collect();
                    sum::pairwise(&vals) / vals.len() as f64
                });
                (f, eta.clone())
            })
            .collect();
        Ok(CylSymbol::new(
            self.params.clone(),
            n,
            self.domain_radius,
            terms,
        ))
    }

    /// Conditional average onto depth-`n` cylinders seen from another base
    /// point, evaluated at one point: `(E^base_n a)(x, w, s)`. The stub must
    /// be long enough to pin down the depth-`n` cylinder at `base`.
    pub fn average_at(
        &self,
        base: &Vertex,
        n: usize,
        x: &Vertex,
        stub: &[Colour],
        s: f64,
    ) -> Result<Complex64> {
        if self.domain_radius != UNBOUNDED && x.len() > self.domain_radius {
            return Err(Error::DomainExhausted {
                need: x.len(),
                have: self.domain_radius,
            });
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (g, eta) in &self.terms {
            let mean = conditional_average(&self.params, base, n, x, stub, self.depth, &|w| {
                g(x, w)
            })?;
            acc += mean * eta.value(s);
        }
        Ok(acc)
    }
}

/// A two-point symbol `c(x, y, w, s)`: separable terms whose spatial parts
/// see a far vertex as well. `depth_from_far` records how many boundary
/// letters beyond the geodesic `[x, y]` the terms read, so the required stub
/// length at `x` is `max(depth, d(x, y) + depth_from_far)`.
#[derive(Clone)]
pub struct DoubleSymbol {
    params: TreeParams,
    depth: usize,
    depth_from_far: usize,
    domain_radius: usize,
    terms: Vec<(DoubleSpatialFn, SProfile)>,
}

impl std::fmt::Debug for DoubleSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DoubleSymbol")
            .field("depth", &self.depth)
            .field("depth_from_far", &self.depth_from_far)
            .field("domain_radius", &self.domain_radius)
            .field("terms", &self.terms.len())
            .finish()
    }
}

impl DoubleSymbol {
    /// Assembles a two-point symbol from explicit terms.
    pub fn new(
        params: TreeParams,
        depth: usize,
        depth_from_far: usize,
        domain_radius: usize,
        terms: Vec<(DoubleSpatialFn, SProfile)>,
    ) -> Self {
        DoubleSymbol {
            params,
            depth,
            depth_from_far,
            domain_radius,
            terms,
        }
    }

    /// The zero two-point symbol.
    pub fn zero(params: &TreeParams) -> Self {
        DoubleSymbol::new(params.clone(), 0, 0, UNBOUNDED, Vec::new())
    }

    /// Wraps a one-point symbol, ignoring the far vertex.
    pub fn from_symbol(a: &CylSymbol) -> Self {
        let m = a.depth;
        let terms = a
            .terms
            .iter()
            .map(|(g, eta)| {
                let g = g.clone();
                let f: DoubleSpatialFn =
                    Arc::new(move |x: &Vertex, _y: &Vertex, w: &[Colour]| g(x, &w[..m]));
                (f, eta.clone())
            })
            .collect();
        DoubleSymbol::new(a.params.clone(), m, 0, a.domain_radius, terms)
    }

    /// The right quantization data of `a`: the symbol is read at the far
    /// vertex, along the same boundary direction. Seen from `x` this needs
    /// `d(x, y) + depth(a)` letters.
    pub fn right_quantization(a: &CylSymbol) -> Self {
        let m = a.depth;
        let terms = a
            .terms
            .iter()
            .map(|(g, eta)| {
                let g = g.clone();
                let f: DoubleSpatialFn = Arc::new(move |x: &Vertex, y: &Vertex, w: &[Colour]| {
                    if m == 0 {
                        return g(y, &[]);
                    }
                    let seen = stub_seen_from(x, w, y, m)
                        .expect("stub length is checked against d(x,y) + depth before dispatch");
                    g(y, &seen)
                });
                (f, eta.clone())
            })
            .collect();
        DoubleSymbol::new(a.params.clone(), 0, m, a.domain_radius, terms)
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn depth_from_far(&self) -> usize {
        self.depth_from_far
    }

    pub fn domain_radius(&self) -> usize {
        self.domain_radius
    }

    pub fn terms(&self) -> &[(DoubleSpatialFn, SProfile)] {
        &self.terms
    }

    /// Stub length needed at `x` for a pair at distance `d`.
    pub fn required_depth(&self, d: usize) -> usize {
        self.depth.max(d + self.depth_from_far)
    }

    /// Value `c(x, y, w, s)`.
    pub fn eval(&self, x: &Vertex, y: &Vertex, stub: &[Colour], s: f64) -> Result<Complex64> {
        self.eval_ds(x, y, stub, s, 0)
    }

    /// Spectral derivative of the two-point symbol.
    pub fn eval_ds(
        &self,
        x: &Vertex,
        y: &Vertex,
        stub: &[Colour],
        s: f64,
        k: usize,
    ) -> Result<Complex64> {
        if self.domain_radius != UNBOUNDED {
            let far = x.len().max(y.len());
            if far > self.domain_radius {
                return Err(Error::DomainExhausted {
                    need: far,
                    have: self.domain_radius,
                });
            }
        }
        let need = self.required_depth(distance(x, y));
        if stub.len() < need {
            return Err(Error::StubTooShort {
                need,
                got: stub.len(),
            });
        }
        let w = &stub[..need];
        let mut acc = Complex64::new(0.0, 0.0);
        for (g, eta) in &self.terms {
            acc += g(x, y, w) * eta.derivative(s, k)?;
        }
        Ok(acc)
    }
}

/// The radial cutoff used by the built-in families: `exp(-t)` with a smooth
/// (infinitely differentiable) descent to zero over the last 40% of the
/// support interval. 1-Lipschitz for any support length `>= 1`.
pub fn cutoff_chi(t: f64, support: f64) -> f64 {
    let ramp_start = 0.6 * support;
    if t <= ramp_start {
        (-t).exp()
    } else if t >= support {
        0.0
    } else {
        (-t).exp() * smooth_step((support - t) / (support - ramp_start))
    }
}

/// A smooth step: identically 0 at `u <= 0`, identically 1 at `u >= 1`, all
/// derivatives vanishing at both ends.
fn smooth_step(u: f64) -> f64 {
    fn b(v: f64) -> f64 {
        if v <= 0.0 {
            0.0
        } else {
            (-1.0 / v).exp()
        }
    }
    let num = b(u);
    if num == 0.0 {
        return 0.0;
    }
    num / (num + b(1.0 - u))
}

/// Names accepted by [`builtin_family`].
pub const BUILTIN_FAMILIES: [&str; 3] = ["bump_profile_only", "radial_eps", "shifted_k"];

/// The built-in symbol families.
///
/// * `bump_profile_only` — `a(x, w, s) = eta(s)` with the endpoint-flat bump;
///   depth 0, no spatial variation.
/// * `radial_eps` — `eta(s) * chi(eps |x|)` with the 1-Lipschitz compactly
///   supported cutoff [`cutoff_chi`]; per-step spatial variation `O(eps)`.
/// * `shifted_k` — `radial_eps` composed with `k_shift` shifts along the
///   boundary direction; depth `k_shift`.
pub fn builtin_family(
    params: &TreeParams,
    kind: &str,
    eps: f64,
    k_shift: usize,
    chi_support: f64,
) -> Result<CylSymbol> {
    match kind {
        "bump_profile_only" => Ok(CylSymbol::from_profile(params, SProfile::bump(params))),
        "radial_eps" => {
            let g: SpatialFn = Arc::new(move |x: &Vertex, _: &[Colour]| {
                Complex64::new(cutoff_chi(eps * x.len() as f64, chi_support), 0.0)
            });
            Ok(CylSymbol::new(
                params.clone(),
                0,
                UNBOUNDED,
                vec![(g, SProfile::bump(params))],
            ))
        }
        "shifted_k" => {
            let mut a = builtin_family(params, "radial_eps", eps, 0, chi_support)?;
            for _ in 0..k_shift {
                a = a.shift_compose()?;
            }
            Ok(a)
        }
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

/// Builds a symbol from tabulated spatial data: one `(x-word, depth-length
/// stub) -> value` table per term. Lookups outside a table return zero, so
/// the tables should cover the whole ball they claim; the domain radius is
/// the largest tabulated `|x|`.
pub fn from_table(
    params: &TreeParams,
    depth: usize,
    tables: Vec<(HashMap<(Vec<Colour>, Vec<Colour>), Complex64>, SProfile)>,
) -> CylSymbol {
    let domain = tables
        .iter()
        .flat_map(|(t, _)| t.keys().map(|(xw, _)| xw.len()))
        .max()
        .unwrap_or(0);
    let terms = tables
        .into_iter()
        .map(|(table, eta)| {
            let f: SpatialFn = Arc::new(move |x: &Vertex, w: &[Colour]| {
                table
                    .get(&(x.word().to_vec(), w.to_vec()))
                    .copied()
                    .unwrap_or_default()
            });
            (f, eta)
        })
        .collect();
    CylSymbol::new(params.clone(), depth, domain, terms)
}

/// Regularity measurements of a symbol over a test ball.
///
/// Index `k` of the arrays is the spectral-derivative order; `cross[l][t-1]`
/// is the empirical constant at base-point distance `t` weighted by
/// `(1 + n)^l` over cylinder depths `n`, normalised by the family's
/// semiclassical parameter.
#[derive(Debug, Clone)]
pub struct SClassReport {
    /// `sup |d^k/ds^k a|` over the test set, `k <= 5`.
    pub sup_ds: [f64; 6],
    /// `sup_x sup_n (n+1)^N sup_{w,s} |(a - E^x_n a)(x, w, s)|` for `N <= 5`.
    pub omega_norm: [f64; 6],
    /// `sup |d^k/ds^k (a(x,.) - a(y,.))| / d(x,y)` over sampled close pairs
    /// reading the same boundary direction.
    pub lipschitz_ds: [f64; 6],
    /// Empirical mixed constants: `cross[l][t-1] = sup_n (1+n)^l sup |(a -
    /// E^x_n a)(y,.,.)| / epsilon_hint` over sampled pairs at `d(x,y) = t`.
    pub cross: Vec<Vec<f64>>,
    /// Largest conditional-average defect seen at depths `n >= depth`;
    /// cylinder constancy makes this exactly zero.
    pub residual_beyond_depth: f64,
    pub depth: usize,
    pub test_radius: usize,
    pub epsilon_hint: f64,
}

impl SClassReport {
    /// The norm combination driving the operator-norm bound:
    /// `omega_norm[n] + sum_{k <= n} sup_ds[k]`.
    pub fn class_norm(&self, n: usize) -> f64 {
        self.omega_norm[n] + self.sup_ds[..=n.min(5)].iter().sum::<f64>()
    }

    /// The norm combination driving the kernel-decay bound:
    /// `omega_norm[n] + sum_{k <= n+1} sup_ds[k]`.
    pub fn decay_norm(&self, n: usize) -> f64 {
        self.omega_norm[n.min(5)] + self.sup_ds[..=(n + 1).min(5)].iter().sum::<f64>()
    }

    /// Plain spatial Lipschitz constant (derivative order 0).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz_ds[0]
    }

    pub fn all_finite(&self) -> bool {
        self.sup_ds.iter().all(|v| v.is_finite())
            && self.omega_norm.iter().all(|v| v.is_finite())
            && self.lipschitz_ds.iter().all(|v| v.is_finite())
            && self.cross.iter().flatten().all(|v| v.is_finite())
            && self.residual_beyond_depth.is_finite()
    }
}

/// Stride-sampled stub enumeration: at most `cap` stubs of the given length,
/// deterministically spread across the lexicographic order.
fn sampled_stubs(params: &TreeParams, len: usize, cap: usize) -> Result<Vec<Vec<Colour>>> {
    let all = stubs_at(params, len)?;
    if all.len() <= cap {
        return Ok(all);
    }
    let stride = all.len().div_ceil(cap);
    Ok(all.into_iter().step_by(stride).collect())
}

/// Measures the class data of a symbol by enumeration over `ball(o,
/// test_radius)`, probe stubs of length `depth + 2`, conditioning depths
/// `n <= depth + 2` and the grid nodes plus the band endpoints. Base-point
/// pairs are sampled at distances 1 and 2 for the Lipschitz quotients and up
/// to `min(2 test_radius, 3)` for the cross table.
pub fn validate_class(
    a: &CylSymbol,
    grid: &SGrid,
    test_radius: usize,
    epsilon_hint: f64,
) -> Result<SClassReport> {
    if test_radius > a.domain_radius {
        return Err(Error::DomainExhausted {
            need: test_radius,
            have: a.domain_radius,
        });
    }
    let params = a.params();
    let m = a.depth();
    let mut svals: Vec<f64> = grid.nodes().to_vec();
    svals.push(0.0);
    svals.push(params.tau());
    let verts = ball(params, &Vertex::root(), test_radius)?;
    let probes = stubs_at(params, m + 2)?;

    // Derivative ladders per term, evaluated lazily per (s, k).
    let ladder = |diff: &[Complex64], s: f64, k: usize| -> Result<f64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, (_, eta)) in a.terms.iter().enumerate() {
            acc += diff[t] * eta.derivative(s, k)?;
        }
        Ok(acc.norm())
    };

    // Sup norms of spectral derivatives over base points and depth-m stubs.
    let mut sup_ds = [0f64; 6];
    let stubs_m = stubs_at(params, m)?;
    for x in &verts {
        for w in &stubs_m {
            let vals = a.term_values(x, w)?;
            for (k, slot) in sup_ds.iter_mut().enumerate() {
                for &s in &svals {
                    *slot = slot.max(ladder(&vals, s, k)?);
                }
            }
        }
    }

    // Conditional-average defects at the own base point.
    let mut delta = vec![vec![0f64; m + 3]; verts.len()];
    for (xi, x) in verts.iter().enumerate() {
        for w in &probes {
            let aw = a.term_values(x, w)?;
            for n in 0..=(m + 2) {
                let en: Vec<Complex64> = if n >= m {
                    aw.clone()
                } else {
                    let exts = extend_all(params, &w[..n], m - n);
                    a.terms
                        .iter()
                        .map(|(g, _)| {
                            let vals: Vec<Complex64> = exts.iter().map(|e| g(x, e)).collect();
                            sum::pairwise(&vals) / vals.len() as f64
                        })
                        .collect()
                };
                let diff: Vec<Complex64> =
                    aw.iter().zip(&en).map(|(u, v)| u - v).collect();
                if diff.iter().all(|d| d.norm() == 0.0) {
                    continue;
                }
                for &s in &svals {
                    delta[xi][n] = delta[xi][n].max(ladder(&diff, s, 0)?);
                }
            }
        }
    }
    let mut omega_norm = [0f64; 6];
    let mut residual_beyond_depth = 0f64;
    for row in &delta {
        for (n, &d) in row.iter().enumerate() {
            for (cap_n, slot) in omega_norm.iter_mut().enumerate() {
                *slot = slot.max(((n + 1) as f64).powi(cap_n as i32) * d);
            }
            if n >= m {
                residual_beyond_depth = residual_beyond_depth.max(d);
            }
        }
    }

    // Spatial Lipschitz quotients along shared boundary directions.
    let mut lipschitz_ds = [0f64; 6];
    for x in &verts {
        for y in &verts {
            let d = distance(x, y);
            if d == 0 || d > 2 {
                continue;
            }
            for w in &probes {
                let seen = stub_seen_from(x, w, y, m)?;
                let ax = a.term_values(x, w)?;
                let ay = a.term_values(y, &seen)?;
                let diff: Vec<Complex64> = ax.iter().zip(&ay).map(|(u, v)| u - v).collect();
                if diff.iter().all(|z| z.norm() == 0.0) {
                    continue;
                }
                for (k, slot) in lipschitz_ds.iter_mut().enumerate() {
                    for &s in &svals {
                        *slot = slot.max(ladder(&diff, s, k)? / d as f64);
                    }
                }
            }
        }
    }

    // Mixed base-point / conditioning constants.
    let t_max = (2 * test_radius).min(3);
    let mut cross = vec![vec![0f64; t_max]; 6];
    for t in 1..=t_max {
        let stubs_by_n: Vec<Vec<Vec<Colour>>> = (0..=(m + 2))
            .map(|n| sampled_stubs(params, m.max(n) + t, 96))
            .collect::<Result<_>>()?;
        let mut defect_by_n = vec![0f64; m + 3];
        let mut pair_count = 0usize;
        'pairs: for x in &verts {
            for y in &verts {
                if distance(x, y) != t {
                    continue;
                }
                pair_count += 1;
                if pair_count > 40 {
                    break 'pairs;
                }
                for (n, slot) in defect_by_n.iter_mut().enumerate() {
                    for w in &stubs_by_n[n] {
                        let ay = a.term_values(y, w)?;
                        let ey: Vec<Complex64> = a
                            .terms
                            .iter()
                            .map(|(g, _)| {
                                conditional_average(params, x, n, y, w, m, &|st| g(y, st))
                            })
                            .collect::<Result<_>>()?;
                        let diff: Vec<Complex64> =
                            ay.iter().zip(&ey).map(|(u, v)| u - v).collect();
                        if diff.iter().all(|z| z.norm() == 0.0) {
                            continue;
                        }
                        for &s in &svals {
                            *slot = slot.max(ladder(&diff, s, 0)?);
                        }
                    }
                }
            }
        }
        for (l, row) in cross.iter_mut().enumerate() {
            let mut worst = 0f64;
            for (n, &d) in defect_by_n.iter().enumerate() {
                worst = worst.max(((n + 1) as f64).powi(l as i32) * d);
            }
            row[t - 1] = worst / epsilon_hint;
        }
    }

    Ok(SClassReport {
        sup_ds,
        omega_norm,
        lipschitz_ds,
        cross,
        residual_beyond_depth,
        depth: m,
        test_radius,
        epsilon_hint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p2() -> TreeParams {
        TreeParams::new(2).unwrap()
    }

    fn v(params: &TreeParams, s: &str) -> Vertex {
        Vertex::parse(params, s).unwrap()
    }

    /// A deterministic pseudo-random depth-m symbol tabulated over a ball.
    fn random_symbol(params: &TreeParams, depth: usize, radius: usize, seed: u64) -> CylSymbol {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = HashMap::new();
        for x in ball(params, &Vertex::root(), radius).unwrap() {
            for w in stubs_at(params, depth).unwrap() {
                let val = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                table.insert((x.word().to_vec(), w), val);
            }
        }
        from_table(params, depth, vec![(table, SProfile::one())])
    }

    /// Deterministic sample triples (x, stub, s) for pointwise identities.
    fn sample_points(
        params: &TreeParams,
        radius: usize,
        stub_len: usize,
        count: usize,
    ) -> Vec<(Vertex, Vec<Colour>, f64)> {
        let verts = ball(params, &Vertex::root(), radius).unwrap();
        let stubs = stubs_at(params, stub_len).unwrap();
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let x = verts[(7 * i + 3) % verts.len()].clone();
            let w = stubs[(11 * i + 5) % stubs.len()].clone();
            let s = params.tau() * ((i % 17) as f64 + 0.3) / 17.6;
            out.push((x, w, s));
        }
        out
    }

    #[test]
    fn eval_basics() {
        let p = p2();
        let c = Complex64::new(1.25, -0.5);
        let a = CylSymbol::constant(&p, c);
        assert_eq!(a.eval(&v(&p, "012"), &[1, 0], 0.4).unwrap(), c);

        // Separable g(x) * eta(s): first derivative hits only the profile.
        let g: SpatialFn = Arc::new(|x: &Vertex, _: &[Colour]| Complex64::new(x.len() as f64, 0.0));
        let eta = SProfile::eigencurve(&p);
        let a = CylSymbol::new(p.clone(), 0, UNBOUNDED, vec![(g, eta.clone())]);
        let x = v(&p, "01");
        let s = 0.7;
        let expect = 2.0 * eta.derivative(s, 1).unwrap();
        assert!((a.eval_ds(&x, &[], s, 1).unwrap() - expect).norm() < 1e-14);

        // Two-term sums evaluate term by term.
        let b = a.add(&CylSymbol::constant(&p, c)).unwrap();
        let got = b.eval(&x, &[2], s).unwrap();
        let want = a.eval(&x, &[2], s).unwrap() + c;
        assert!((got - want).norm() < 1e-14);
    }

    #[test]
    fn eval_guards() {
        let p = p2();
        let a = builtin_family(&p, "shifted_k", 0.3, 2, 10.0).unwrap();
        assert_eq!(a.depth(), 2);
        // Stub shorter than the depth.
        assert!(matches!(
            a.eval(&Vertex::root(), &[0], 0.3),
            Err(Error::StubTooShort { need: 2, got: 1 })
        ));
        // Bounded-domain symbol rejects far vertices.
        let bounded = CylSymbol::new(
            p.clone(),
            0,
            1,
            vec![(
                Arc::new(|_: &Vertex, _: &[Colour]| Complex64::new(1.0, 0.0)) as SpatialFn,
                SProfile::one(),
            )],
        );
        assert!(matches!(
            bounded.eval(&v(&p, "01"), &[], 0.1),
            Err(Error::DomainExhausted { need: 2, have: 1 })
        ));
        // Derivative order above the ladder.
        assert!(matches!(
            a.eval_ds(&Vertex::root(), &[0, 1], 0.3, 99),
            Err(Error::DerivativeOrder { .. })
        ));
    }

    #[test]
    fn cylinder_constancy() {
        // Letters beyond the depth never change the value.
        let p = p2();
        let a = builtin_family(&p, "shifted_k", 0.5, 1, 10.0).unwrap();
        let x = v(&p, "02");
        let s = 0.9;
        let va = a.eval(&x, &[1, 0, 1, 2], s).unwrap();
        let vb = a.eval(&x, &[1, 2, 0, 1], s).unwrap();
        let vc = a.eval(&x, &[1], s).unwrap();
        assert_eq!(va, vb);
        assert_eq!(va, vc);
    }

    #[test]
    fn multiply_is_pointwise() {
        let p = p2();
        let a = random_symbol(&p, 1, 3, 10);
        let b = builtin_family(&p, "shifted_k", 0.4, 3, 10.0).unwrap();
        let ab = a.multiply(&b).unwrap();
        assert_eq!(ab.depth(), 3);
        for (x, w, s) in sample_points(&p, 3, 3, 100) {
            let lhs = ab.eval(&x, &w, s).unwrap();
            let rhs = a.eval(&x, &w, s).unwrap() * b.eval(&x, &w, s).unwrap();
            assert!((lhs - rhs).norm() <= 1e-12, "product defect {}", (lhs - rhs).norm());
        }
        // a * 1 = a.
        let one = CylSymbol::constant(&p, Complex64::new(1.0, 0.0));
        let a1 = a.multiply(&one).unwrap();
        for (x, w, s) in sample_points(&p, 3, 1, 20) {
            assert!((a1.eval(&x, &w, s).unwrap() - a.eval(&x, &w, s).unwrap()).norm() < 1e-14);
        }
    }

    #[test]
    fn shift_examples() {
        let p = p2();
        // Constants are shift-invariant.
        let c = CylSymbol::constant(&p, Complex64::new(0.3, 0.1));
        let cs = c.shift_compose().unwrap();
        assert_eq!(cs.depth(), 1);
        assert_eq!(
            cs.eval(&v(&p, "01"), &[2], 0.2).unwrap(),
            c.eval(&v(&p, "01"), &[2], 0.2).unwrap()
        );

        // Indicator of the root: after one shift it fires exactly when the
        // first step lands on the root.
        let g: SpatialFn = Arc::new(|x: &Vertex, _: &[Colour]| {
            Complex64::new(if x.is_root() { 1.0 } else { 0.0 }, 0.0)
        });
        let ind = CylSymbol::from_spatial(&p, 0, g);
        let shifted = ind.shift_compose().unwrap();
        let x = v(&p, "2");
        assert_eq!(shifted.eval(&x, &[2], 0.1).unwrap().re, 1.0); // x.step(2) = o
        assert_eq!(shifted.eval(&x, &[0], 0.1).unwrap().re, 0.0);
        assert_eq!(shifted.eval(&Vertex::root(), &[1], 0.1).unwrap().re, 0.0);

        // Domain bookkeeping.
        let bounded = CylSymbol::new(
            p.clone(),
            0,
            2,
            vec![(
                Arc::new(|_: &Vertex, _: &[Colour]| Complex64::new(1.0, 0.0)) as SpatialFn,
                SProfile::one(),
            )],
        );
        let once = bounded.shift_compose().unwrap();
        assert_eq!(once.domain_radius(), 1);
        let twice = once.shift_compose().unwrap();
        assert_eq!(twice.domain_radius(), 0);
        assert!(matches!(
            twice.shift_compose(),
            Err(Error::DomainExhausted { .. })
        ));
        assert_eq!(c.shift_compose().unwrap().domain_radius(), UNBOUNDED);
    }

    #[test]
    fn transfer_examples() {
        let p = p2();
        // L(1) = 1.
        let one = CylSymbol::constant(&p, Complex64::new(1.0, 0.0));
        let l1 = one.transfer().unwrap();
        assert_eq!(l1.depth(), 1);
        assert!((l1.eval(&v(&p, "01"), &[0], 0.3).unwrap().re - 1.0).abs() < 1e-15);

        // q = 2: La averages a over the two neighbours away from the
        // boundary direction.
        let g: SpatialFn = Arc::new(|x: &Vertex, _: &[Colour]| Complex64::new(x.len() as f64, 0.0));
        let a = CylSymbol::from_spatial(&p, 0, g);
        let la = a.transfer().unwrap();
        // At the root with direction starting 0: neighbours 1 and 2, both at
        // length 1 -> average 1.
        assert!((la.eval(&Vertex::root(), &[0], 0.1).unwrap().re - 1.0).abs() < 1e-15);
        // At "01" with direction 2: the preimages step by 0 or 1, giving
        // lengths 1 ("0") and 3 ("010") -> average 2.
        assert!((la.eval(&v(&p, "01"), &[2], 0.1).unwrap().re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn transfer_inverts_shift() {
        for q in [2u32, 3] {
            let p = TreeParams::new(q).unwrap();
            let a = random_symbol(&p, 2, 4, 77);
            let back = a.shift_compose().unwrap().transfer().unwrap();
            assert_eq!(back.depth(), 2);
            for (x, w, s) in sample_points(&p, 2, 2, 100) {
                let lhs = back.eval(&x, &w, s).unwrap();
                let rhs = a.eval(&x, &w, s).unwrap();
                assert!(
                    (lhs - rhs).norm() <= 1e-13 * (1.0 + rhs.norm()),
                    "left inverse defect {} at q={q}",
                    (lhs - rhs).norm()
                );
            }
        }
    }

    #[test]
    fn transfer_depths() {
        let p = p2();
        let d0 = CylSymbol::constant(&p, Complex64::new(1.0, 0.0));
        assert_eq!(d0.transfer().unwrap().depth(), 1);
        let d3 = builtin_family(&p, "shifted_k", 0.2, 3, 10.0).unwrap();
        assert_eq!(d3.transfer().unwrap().depth(), 2);
        let d1 = builtin_family(&p, "shifted_k", 0.2, 1, 10.0).unwrap();
        assert_eq!(d1.transfer().unwrap().depth(), 1);
    }

    #[test]
    fn averaging_identities() {
        let p = p2();
        let a = random_symbol(&p, 3, 3, 5);
        // E_{-1} = 0.
        let zero = a.average_en_self(-1).unwrap();
        assert_eq!(zero.eval(&Vertex::root(), &[0, 1, 0], 0.2).unwrap().norm(), 0.0);
        // n >= depth is the identity.
        let same = a.average_en_self(3).unwrap();
        for (x, w, s) in sample_points(&p, 2, 3, 30) {
            assert_eq!(same.eval(&x, &w, s).unwrap(), a.eval(&x, &w, s).unwrap());
        }
        // Tower property: E_n E_k = E_min(n,k).
        let e1 = a.average_en_self(1).unwrap();
        let e2_then_1 = a.average_en_self(2).unwrap().average_en_self(1).unwrap();
        for (x, w, s) in sample_points(&p, 2, 3, 30) {
            let lhs = e2_then_1.eval(&x, &w, s).unwrap();
            let rhs = e1.eval(&x, &w, s).unwrap();
            assert!((lhs - rhs).norm() < 1e-13);
        }
        // Averaging over everything reproduces the plain mean.
        let e0 = a.average_en_self(0).unwrap();
        let x = v(&p, "10");
        let stubs = stubs_at(&p, 3).unwrap();
        let mean = stubs
            .iter()
            .map(|w| a.eval(&x, w, 0.4).unwrap())
            .sum::<Complex64>()
            / stubs.len() as f64;
        assert!((e0.eval(&x, &[2, 0, 1], 0.4).unwrap() - mean).norm() < 1e-13);
    }

    #[test]
    fn measurable_factor_pulls_out() {
        // If g only reads n letters, E_n(g f) = g E_n(f).
        let p = p2();
        let f = random_symbol(&p, 3, 3, 8);
        let g = random_symbol(&p, 1, 3, 9);
        let lhs = g.multiply(&f).unwrap().average_en_self(1).unwrap();
        let rhs = g.multiply(&f.average_en_self(1).unwrap()).unwrap();
        for (x, w, s) in sample_points(&p, 2, 3, 40) {
            let u = lhs.eval(&x, &w, s).unwrap();
            let vr = rhs.eval(&x, &w, s).unwrap();
            assert!((u - vr).norm() < 1e-13, "factor defect {}", (u - vr).norm());
        }
    }

    #[test]
    fn averaging_defect_of_products_is_controlled() {
        // |E_n a E_n b - E_n(ab)| <= sup|a| sup|b - E_n b| over the sample.
        let p = p2();
        let a = random_symbol(&p, 3, 2, 21);
        let b = random_symbol(&p, 3, 2, 22);
        let verts = ball(&p, &Vertex::root(), 2).unwrap();
        let stubs = stubs_at(&p, 3).unwrap();
        let s = 0.31;
        for n in 0..=4i64 {
            let ea = a.average_en_self(n).unwrap();
            let eb = b.average_en_self(n).unwrap();
            let eab = a.multiply(&b).unwrap().average_en_self(n).unwrap();
            let mut lhs = 0f64;
            let mut sup_a = 0f64;
            let mut sup_db = 0f64;
            for x in &verts {
                for w in &stubs {
                    let va = a.eval(x, w, s).unwrap();
                    let vb = b.eval(x, w, s).unwrap();
                    sup_a = sup_a.max(va.norm());
                    sup_db = sup_db.max((vb - eb.eval(x, w, s).unwrap()).norm());
                    let defect = ea.eval(x, w, s).unwrap() * eb.eval(x, w, s).unwrap()
                        - eab.eval(x, w, s).unwrap();
                    lhs = lhs.max(defect.norm());
                }
            }
            assert!(
                lhs <= sup_a * sup_db + 1e-10,
                "n={n}: {lhs} vs {}",
                sup_a * sup_db
            );
        }
    }

    #[test]
    fn average_at_matches_self_based() {
        let p = p2();
        let a = random_symbol(&p, 2, 3, 31);
        let x = v(&p, "10");
        let s = 0.5;
        for n in 0..=3usize {
            let self_avg = a.average_en_self(n as i64).unwrap();
            for w in stubs_at(&p, 3).unwrap() {
                let lhs = a.average_at(&x, n, &x, &w, s).unwrap();
                let rhs = self_avg.eval(&x, &w, s).unwrap();
                assert!((lhs - rhs).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn builtin_families() {
        let p = p2();
        assert!(matches!(
            builtin_family(&p, "no_such_family", 0.1, 0, 10.0),
            Err(Error::UnknownFamily(_))
        ));
        let bump = builtin_family(&p, "bump_profile_only", 0.1, 0, 10.0).unwrap();
        assert_eq!(bump.depth(), 0);
        let sh2 = builtin_family(&p, "shifted_k", 0.1, 2, 10.0).unwrap();
        assert_eq!(sh2.depth(), 2);
        // Endpoint flatness survives the spatial factor.
        let rad = builtin_family(&p, "radial_eps", 0.25, 0, 10.0).unwrap();
        for k in 0..=5 {
            for x in ball(&p, &Vertex::root(), 2).unwrap() {
                assert!(rad.eval_ds(&x, &[], 0.0, k).unwrap().norm() <= 1e-12);
                assert!(rad.eval_ds(&x, &[], p.tau(), k).unwrap().norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn cutoff_is_lipschitz_and_supported() {
        let support = 10.0;
        assert_eq!(cutoff_chi(support, support), 0.0);
        assert_eq!(cutoff_chi(11.0, support), 0.0);
        assert!((cutoff_chi(0.0, support) - 1.0).abs() < 1e-15);
        let n = 40_000;
        for i in 0..n {
            let t0 = 11.0 * i as f64 / n as f64;
            let t1 = 11.0 * (i + 1) as f64 / n as f64;
            let slope = (cutoff_chi(t1, support) - cutoff_chi(t0, support)).abs() / (t1 - t0);
            assert!(slope <= 1.0 + 1e-6, "slope {slope} near t = {t0}");
        }
    }

    #[test]
    fn validator_measures_builtins() {
        let p = p2();
        let grid = SGrid::build(&p, 32).unwrap();
        let eps = 0.25;
        let rad = builtin_family(&p, "radial_eps", eps, 0, 10.0).unwrap();
        let report = validate_class(&rad, &grid, 2, eps).unwrap();
        assert!(report.all_finite());
        // Depth-0 symbol: conditional averaging changes nothing.
        assert_eq!(report.omega_norm, [0.0; 6]);
        assert_eq!(report.residual_beyond_depth, 0.0);
        // chi is 1-Lipschitz and peaks at the root, so the per-step spatial
        // variation is at most sup|d^k eta| * eps.
        for k in 0..=5 {
            assert!(
                report.lipschitz_ds[k] <= eps * report.sup_ds[k] + 1e-12,
                "k={k}: lip {} sup {}",
                report.lipschitz_ds[k],
                report.sup_ds[k]
            );
        }
        // Profile-only symbol: no spatial variation at all.
        let bump = builtin_family(&p, "bump_profile_only", eps, 0, 10.0).unwrap();
        let report = validate_class(&bump, &grid, 2, eps).unwrap();
        assert_eq!(report.lipschitz_ds, [0.0; 6]);
        assert!(report.cross.iter().flatten().all(|&v| v == 0.0));
        // Depth-2 symbol: defects vanish once n reaches the depth.
        let sh2 = builtin_family(&p, "shifted_k", eps, 2, 10.0).unwrap();
        let report = validate_class(&sh2, &grid, 2, eps).unwrap();
        assert_eq!(report.residual_beyond_depth, 0.0);
        assert!(report.all_finite());
        assert!(report.omega_norm[0] > 0.0);
    }

    #[test]
    fn closure_bounds_hold() {
        let p = p2();
        let grid = SGrid::build(&p, 32).unwrap();
        let eps = 0.3;
        let a = builtin_family(&p, "radial_eps", eps, 0, 10.0).unwrap();
        let ra = validate_class(&a, &grid, 3, eps).unwrap();

        // Shift: per-step variation cannot grow (both points move one step
        // toward the same boundary direction).
        let sh = a.shift_compose().unwrap();
        let rs = validate_class(&sh, &grid, 2, eps).unwrap();
        assert!(rs.lipschitz() <= ra.lipschitz() + 1e-12);

        // Transfer: at most three times the variation.
        let la = a.transfer().unwrap();
        let rl = validate_class(&la, &grid, 2, eps).unwrap();
        assert!(rl.lipschitz() <= 3.0 * ra.lipschitz() + 1e-12);

        // Product: Leibniz-type bound through sup norms.
        let b = builtin_family(&p, "shifted_k", eps, 1, 10.0).unwrap();
        let rb = validate_class(&b, &grid, 2, eps).unwrap();
        let ab = a.multiply(&b).unwrap();
        let rab = validate_class(&ab, &grid, 2, eps).unwrap();
        assert!(
            rab.lipschitz()
                <= ra.sup_ds[0] * rb.lipschitz() + rb.sup_ds[0] * ra.lipschitz() + 1e-10
        );
        assert!(rab.all_finite());
    }

    #[test]
    fn double_symbol_wrappers() {
        let p = p2();
        let a = random_symbol(&p, 2, 4, 55);
        let near = DoubleSymbol::from_symbol(&a);
        let far = DoubleSymbol::right_quantization(&a);
        let x = v(&p, "01");
        let y = v(&p, "2");
        let s = 0.8;
        let stub = [2u8, 0, 1, 2, 0];
        // Near wrapper ignores y.
        let direct = a.eval(&x, &stub, s).unwrap();
        assert_eq!(near.eval(&x, &y, &stub, s).unwrap(), direct);
        assert_eq!(near.eval(&x, &x, &stub, s).unwrap(), direct);
        // Far wrapper reads the symbol at y along the same direction.
        let seen = stub_seen_from(&x, &stub, &y, 2).unwrap();
        let expect = a.eval(&y, &seen, s).unwrap();
        assert_eq!(far.eval(&x, &y, &stub, s).unwrap(), expect);
        // Too-short stubs are rejected up front: need d(x,y) + depth = 5.
        assert!(matches!(
            far.eval(&x, &y, &stub[..4], s),
            Err(Error::StubTooShort { need: 5, got: 4 })
        ));
        assert_eq!(far.required_depth(3), 5);
        // Zero symbol evaluates to zero; the stub-length contract still
        // asks for d(x, y) letters so kernel assembly stays uniform.
        let z = DoubleSymbol::zero(&p);
        assert_eq!(z.eval(&x, &x, &[], s).unwrap().norm(), 0.0);
        assert_eq!(z.eval(&x, &y, &stub[..3], s).unwrap().norm(), 0.0);
    }

    #[test]
    fn table_symbols_roundtrip() {
        let p = p2();
        let a = builtin_family(&p, "shifted_k", 0.4, 1, 10.0).unwrap();
        // Tabulate it over ball(o, 2) and compare evaluations.
        let mut table = HashMap::new();
        for x in ball(&p, &Vertex::root(), 2).unwrap() {
            for w in stubs_at(&p, 1).unwrap() {
                let spatial = a.term_values(&x, &w).unwrap()[0];
                table.insert((x.word().to_vec(), w), spatial);
            }
        }
        let rebuilt = from_table(&p, 1, vec![(table, SProfile::bump(&p))]);
        assert_eq!(rebuilt.domain_radius(), 2);
        for (x, w, s) in sample_points(&p, 2, 1, 30) {
            let u = a.eval(&x, &w, s).unwrap();
            let vv = rebuilt.eval(&x, &w, s).unwrap();
            assert!((u - vv).norm() < 1e-14);
        }
        // Outside the tabulated ball the lookup falls back to zero.
        assert_eq!(rebuilt.eval(&v(&p, "010"), &[2], 0.4), Err(Error::DomainExhausted { need: 3, have: 2 }));
    }
}
