//! The boundary-spectral transform for finitely supported functions.
//!
//! A function `f` supported in `ball(o, R)` is sent to the table
//!
//! ```text
//! F(w, s) = sum_y f(y) q^{(1/2 + i s) h_w(y)}
//! ```
//!
//! where `h_w(y)` is the horocycle height of `y` relative to the root in the
//! boundary direction named by the stub `w`. Because every height is settled
//! within `|y|` steps, `F` is constant on depth-`D` cylinders as soon as
//! `D >= R`, and the whole transform fits in a dense stub-by-node table over
//! a quadrature grid. The inverse reads the table back through the spectral
//! weights; the pair is an exact inversion up to quadrature error in the
//! lattice moments.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary::cylinder_measure_f64;
use crate::spectral::SGrid;
use crate::tree::{ball, common_prefix_len, stubs_at, Colour, TreeParams, Vertex};
use crate::{sum, Error, Result};

/// A finitely supported function on vertices, stored as a sorted support
/// list. Construction rejects duplicate vertices rather than merging them, so
/// accidental double-inserts surface immediately.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteFunction {
    entries: Vec<(Vertex, Complex64)>,
}

impl FiniteFunction {
    /// Builds a function from `(vertex, value)` pairs. The pairs are sorted
    /// length-lexicographically; a repeated vertex is an error.
    pub fn new(mut entries: Vec<(Vertex, Complex64)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateSupport);
        }
        Ok(FiniteFunction { entries })
    }

    /// The zero function (empty support).
    pub fn zero() -> Self {
        FiniteFunction { entries: Vec::new() }
    }

    /// Support pairs in length-lexicographic vertex order.
    pub fn entries(&self) -> &[(Vertex, Complex64)] {
        &self.entries
    }

    /// Value at `x` (zero off the stored support).
    pub fn value(&self, x: &Vertex) -> Complex64 {
        match self.entries.binary_search_by(|e| e.0.cmp(x)) {
            Ok(i) => self.entries[i].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Radius of the smallest root-centred ball containing the support.
    pub fn support_radius(&self) -> usize {
        self.entries.iter().map(|(v, _)| v.len()).max().unwrap_or(0)
    }

    /// A reproducible random function on `ball(o, radius)`: both parts of
    /// every value are uniform in `[-1, 1]`, drawn from a seeded stream.
    pub fn random_on_ball(params: &TreeParams, radius: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = ball(params, &Vertex::root(), radius)?
            .into_iter()
            .map(|v| {
                let re = rng.gen_range(-1.0..=1.0);
                let im = rng.gen_range(-1.0..=1.0);
                (v, Complex64::new(re, im))
            })
            .collect();
        Ok(FiniteFunction { entries })
    }

    /// The `l^2` pairing `sum_x f(x) conj(g(x))`.
    pub fn inner(&self, other: &FiniteFunction) -> Complex64 {
        // Walk the union of the two sorted supports.
        let terms: Vec<Complex64> = self
            .entries
            .iter()
            .map(|(v, a)| a * other.value(v).conj())
            .collect();
        sum::pairwise(&terms)
    }

    /// The `l^2` norm.
    pub fn norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }

    /// Pointwise difference on the union of supports.
    pub fn sub(&self, other: &FiniteFunction) -> FiniteFunction {
        let mut support: Vec<Vertex> = self
            .entries
            .iter()
            .chain(other.entries.iter())
            .map(|(v, _)| v.clone())
            .collect();
        support.sort();
        support.dedup();
        let entries = support
            .into_iter()
            .map(|v| {
                let d = self.value(&v) - other.value(&v);
                (v, d)
            })
            .collect();
        FiniteFunction { entries }
    }

    /// Largest absolute value over the support.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|(_, a)| a.norm()).fold(0.0, f64::max)
    }
}

/// Horocycle height of `y` relative to the root, in the direction of any
/// boundary point whose ray from the root starts with `stub`. Fails when the
/// stub is a proper prefix of the word of `y`, because then different
/// boundary points in the cylinder see `y` at different heights.
fn height_at_root(stub: &[Colour], y: &Vertex) -> Result<i64> {
    let j = common_prefix_len(stub, y.word());
    if j == stub.len() && j < y.len() {
        return Err(Error::StubTooShort {
            need: y.len(),
            got: stub.len(),
        });
    }
    Ok(2 * j as i64 - y.len() as i64)
}

/// A dense table `F[stub, node]` over all depth-`depth` stubs at the root and
/// all nodes of a spectral grid. Rows follow the lexicographic stub order of
/// [`stubs_at`]; columns follow the grid node order.
#[derive(Debug, Clone)]
pub struct SpectralFunction {
    grid: SGrid,
    depth: usize,
    stubs: Vec<Vec<Colour>>,
    data: Array2<Complex64>,
}

impl SpectralFunction {
    /// Tabulates `f(stub, s)` over the full stub-by-node rectangle.
    pub fn from_fn(
        grid: &SGrid,
        depth: usize,
        f: impl Fn(&[Colour], f64) -> Complex64,
    ) -> Result<Self> {
        let stubs = stubs_at(grid.params(), depth)?;
        let mut data = Array2::zeros((stubs.len(), grid.len()));
        for (i, stub) in stubs.iter().enumerate() {
            for (k, &s) in grid.nodes().iter().enumerate() {
                data[(i, k)] = f(stub, s);
            }
        }
        Ok(SpectralFunction {
            grid: grid.clone(),
            depth,
            stubs,
            data,
        })
    }

    /// The spectral grid the columns are sampled on.
    pub fn grid(&self) -> &SGrid {
        &self.grid
    }

    /// Cylinder depth of the rows.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Row stubs in lexicographic order.
    pub fn stubs(&self) -> &[Vec<Colour>] {
        &self.stubs
    }

    /// Table entry by row and column index.
    pub fn value(&self, stub_index: usize, node_index: usize) -> Complex64 {
        self.data[(stub_index, node_index)]
    }

    /// The raw table, rows indexed by stubs and columns by grid nodes.
    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    fn check_compatible(&self, other: &SpectralFunction) -> Result<()> {
        if self.depth != other.depth
            || self.grid.label() != other.grid.label()
            || self.grid.params().q() != other.grid.params().q()
        {
            return Err(Error::Incompatible(format!(
                "spectral tables disagree: depth {} vs {}, grid {} vs {}",
                self.depth,
                other.depth,
                self.grid.label(),
                other.grid.label()
            )));
        }
        Ok(())
    }
}

/// Forward transform `F(w, s) = sum_y f(y) q^{(1/2 + i s) h_w(y)}`, tabulated
/// at cylinder depth `depth`. The depth must cover the support radius so that
/// every height is settled on each cylinder.
pub fn fh_forward(f: &FiniteFunction, grid: &SGrid, depth: usize) -> Result<SpectralFunction> {
    forward_impl(f, grid, depth, 1.0)
}

/// The companion table `F(w, -s)`: the defining sum with the spectral
/// parameter negated at every node. Together with [`fh_forward`] it feeds the
/// symmetry diagnostic [`symmetry_defect`].
pub fn fh_forward_neg(f: &FiniteFunction, grid: &SGrid, depth: usize) -> Result<SpectralFunction> {
    forward_impl(f, grid, depth, -1.0)
}

fn forward_impl(
    f: &FiniteFunction,
    grid: &SGrid,
    depth: usize,
    sign: f64,
) -> Result<SpectralFunction> {
    let radius = f.support_radius();
    if depth < radius {
        return Err(Error::DepthTooSmall { depth, radius });
    }
    let ln_q = grid.params().ln_q();
    let stubs = stubs_at(grid.params(), depth)?;
    // Heights depend on the stub and the support vertex only, so settle them
    // once per row before sweeping the grid nodes.
    let mut data = Array2::zeros((stubs.len(), grid.len()));
    let mut terms = vec![Complex64::new(0.0, 0.0); f.entries().len()];
    for (i, stub) in stubs.iter().enumerate() {
        let heights: Vec<i64> = f
            .entries()
            .iter()
            .map(|(y, _)| height_at_root(stub, y))
            .collect::<Result<_>>()?;
        for (k, &s) in grid.nodes().iter().enumerate() {
            for ((&h, (_, a)), slot) in heights.iter().zip(f.entries()).zip(terms.iter_mut()) {
                let exponent = Complex64::new(0.5 * h as f64 * ln_q, sign * s * h as f64 * ln_q);
                *slot = a * exponent.exp();
            }
            data[(i, k)] = sum::pairwise(&terms);
        }
    }
    Ok(SpectralFunction {
        grid: grid.clone(),
        depth,
        stubs,
        data,
    })
}

/// Inverse transform: reads a spectral table back to vertex values on
/// `ball(o, radius)` through the spectral weights,
///
/// ```text
/// f(y) = sum_w nu(depth) sum_k weight_k q^{(1/2 - i s_k) h_w(y)} F[w, k].
/// ```
///
/// The radius must not exceed the table depth.
pub fn fh_inverse(spectral: &SpectralFunction, radius: usize) -> Result<FiniteFunction> {
    if spectral.depth < radius {
        return Err(Error::DepthTooSmall {
            depth: spectral.depth,
            radius,
        });
    }
    let params = spectral.grid.params();
    let ln_q = params.ln_q();
    let mass = cylinder_measure_f64(params, spectral.depth);
    let nodes = spectral.grid.nodes();
    let weights = spectral.grid.weights();
    let vertices = ball(params, &Vertex::root(), radius)?;
    let mut entries = Vec::with_capacity(vertices.len());
    let mut terms = Vec::with_capacity(spectral.stubs.len() * nodes.len());
    for y in vertices {
        terms.clear();
        for (i, stub) in spectral.stubs.iter().enumerate() {
            let h = height_at_root(stub, &y)? as f64;
            for (k, (&s, &w)) in nodes.iter().zip(weights).enumerate() {
                let exponent = Complex64::new(0.5 * h * ln_q, -s * h * ln_q);
                terms.push(mass * w * exponent.exp() * spectral.data[(i, k)]);
            }
        }
        entries.push((y, sum::pairwise(&terms)));
    }
    Ok(FiniteFunction { entries })
}

/// The spectral pairing
/// `sum_w nu(depth) sum_k weight_k A[w, k] conj(B[w, k])`.
///
/// For tables produced by [`fh_forward`] this matches the `l^2` pairing of
/// the original functions up to quadrature error.
pub fn plancherel_inner(a: &SpectralFunction, b: &SpectralFunction) -> Result<Complex64> {
    a.check_compatible(b)?;
    let mass = cylinder_measure_f64(a.grid.params(), a.depth);
    let weights = a.grid.weights();
    let mut terms = Vec::with_capacity(a.stubs.len() * weights.len());
    for i in 0..a.stubs.len() {
        for (k, &w) in weights.iter().enumerate() {
            terms.push(mass * w * a.data[(i, k)] * b.data[(i, k)].conj());
        }
    }
    Ok(sum::pairwise(&terms))
}

/// Image-characterisation defect of a `(F(., s), F(., -s))` table pair.
///
/// For every probe vertex `x` in `ball(o, radius)` and every grid node `s`
/// the two boundary averages
///
/// ```text
/// sum_w nu(depth) q^{(1/2 - i s) h_w(x)} F_pos[w, s]   and
/// sum_w nu(depth) q^{(1/2 + i s) h_w(x)} F_neg[w, s]
/// ```
///
/// must agree when the pair comes from a genuine transform; the returned
/// defect is the largest discrepancy. The integrals here are exact cylinder
/// sums, so a true transform pair scores at machine precision while a
/// generic table pair does not.
pub fn symmetry_defect(
    pos: &SpectralFunction,
    neg: &SpectralFunction,
    radius: usize,
) -> Result<f64> {
    pos.check_compatible(neg)?;
    if pos.depth < radius {
        return Err(Error::DepthTooSmall {
            depth: pos.depth,
            radius,
        });
    }
    let params = pos.grid.params();
    let ln_q = params.ln_q();
    let mass = cylinder_measure_f64(params, pos.depth);
    let nodes = pos.grid.nodes();
    let mut worst = 0.0f64;
    let mut lhs_terms = Vec::with_capacity(pos.stubs.len());
    let mut rhs_terms = Vec::with_capacity(pos.stubs.len());
    for x in ball(params, &Vertex::root(), radius)? {
        let heights: Vec<f64> = pos
            .stubs
            .iter()
            .map(|stub| height_at_root(stub, &x).map(|h| h as f64))
            .collect::<Result<_>>()?;
        for (k, &s) in nodes.iter().enumerate() {
            lhs_terms.clear();
            rhs_terms.clear();
            for (i, &h) in heights.iter().enumerate() {
                let down = Complex64::new(0.5 * h * ln_q, -s * h * ln_q).exp();
                let up = Complex64::new(0.5 * h * ln_q, s * h * ln_q).exp();
                lhs_terms.push(mass * down * pos.data[(i, k)]);
                rhs_terms.push(mass * up * neg.data[(i, k)]);
            }
            let defect = (sum::pairwise(&lhs_terms) - sum::pairwise(&rhs_terms)).norm();
            worst = worst.max(defect);
        }
    }
    Ok(worst)
}
