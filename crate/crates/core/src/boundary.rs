//! The boundary at infinity and its family of harmonic measures.
//!
//! A boundary point is an infinite non-backtracking walk; the cylinder
//! `Omega(x, w)` named by an [`NbWord`] collects the boundary points whose
//! ray from the base starts with the stub `w`. The harmonic measure `nu_x`
//! seen from `x` gives every depth-`n` cylinder at `x` the same mass
//! `1 / ((q+1) q^{n-1})`; all measure computations in this module are exact
//! rationals.
//!
//! The horocycle height difference `h_omega(y) - h_omega(x)` equals
//! `2 j - d(x, y)` where `j` is the depth of the confluence point — the last
//! vertex shared by `[x, y]` and the ray `[x, omega)`. It drives both the
//! Radon–Nikodym derivative `d nu_y / d nu_x = q^{h_omega(y) - h_omega(x)}`
//! and every kernel formula downstream.

use crate::tree::{
    common_prefix_len, distance, extension_count, path_word, stub_seen_from, Colour, NbWord,
    TreeParams, Vertex,
};
use crate::{sum, Error, Result};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};

/// Exact `nu_x`-measure of a depth-`depth` cylinder at `x`:
/// `1` for depth 0 and `1 / ((q+1) q^{depth-1})` otherwise.
pub fn cylinder_measure(params: &TreeParams, depth: usize) -> BigRational {
    if depth == 0 {
        return BigRational::one();
    }
    let q = BigInt::from(params.q());
    let denom = (BigInt::from(params.q() + 1)) * q.pow(depth as u32 - 1);
    BigRational::new(BigInt::one(), denom)
}

/// `cylinder_measure` as a float, for spectral-side aggregation.
pub fn cylinder_measure_f64(params: &TreeParams, depth: usize) -> f64 {
    if depth == 0 {
        1.0
    } else {
        1.0 / ((params.qf() + 1.0) * params.qf().powi(depth as i32 - 1))
    }
}

/// Exact integer power `q^h` as a rational (negative `h` inverts).
pub fn q_power(params: &TreeParams, h: i64) -> BigRational {
    let q = BigInt::from(params.q());
    if h >= 0 {
        BigRational::from_integer(q.pow(h as u32))
    } else {
        BigRational::new(BigInt::one(), q.pow((-h) as u32))
    }
}

/// Depth of the confluence point `c^x(y, omega)` for any `omega` in the
/// cylinder named by `w` (which must be based at `x`): the length of the
/// common prefix of the stub and the geodesic colour word from `x` to `y`.
///
/// Errors when the stub ends strictly inside `[x, y]`, in which case the
/// cylinder does not determine the confluence point.
pub fn confluence_depth(x: &Vertex, y: &Vertex, w: &NbWord) -> Result<usize> {
    if w.base() != x {
        return Err(Error::BaseMismatch);
    }
    let gamma = path_word(x, y);
    let p = common_prefix_len(w.stub(), &gamma);
    if p == w.stub().len() && p < gamma.len() {
        return Err(Error::StubTooShort { need: gamma.len(), got: w.stub().len() });
    }
    Ok(p)
}

/// Horocycle height difference `h_omega(y) - h_omega(x) = 2 j - d(x, y)`
/// for any `omega` in the cylinder named by `w` (based at `x`).
pub fn height_diff(x: &Vertex, y: &Vertex, w: &NbWord) -> Result<i64> {
    let j = confluence_depth(x, y, w)? as i64;
    Ok(2 * j - distance(x, y) as i64)
}

/// Exact Radon–Nikodym derivative `d nu_y / d nu_x` on the cylinder named
/// by `w`: `q^{h_omega(y) - h_omega(x)}`.
pub fn radon_nikodym(params: &TreeParams, x: &Vertex, y: &Vertex, w: &NbWord) -> Result<BigRational> {
    Ok(q_power(params, height_diff(x, y, w)?))
}

/// The partition of the boundary by confluence depth with a fixed vertex.
///
/// `masses[i]` is the `nu`-measure (seen from the partition's reference
/// vertex) of the set `E_i(x)` of boundary points whose ray confluences with
/// `[ref, x]` at depth exactly `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EPartition {
    masses: Vec<BigRational>,
}

impl EPartition {
    pub fn masses(&self) -> &[BigRational] {
        &self.masses
    }

    pub fn masses_f64(&self) -> Vec<f64> {
        self.masses.iter().map(|m| m.to_f64().unwrap()).collect()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

/// Masses of the confluence partition `E_0(x), ..., E_{|x|}(x)` seen from
/// the root: `q/(q+1)` at depth 0, `((q-1)/(q+1)) q^{-i}` strictly inside,
/// and `(q/(q+1)) q^{-|x|}` at full depth. For the root itself the partition
/// is the whole boundary with mass 1.
pub fn e_partition(params: &TreeParams, x: &Vertex) -> EPartition {
    let m = x.len();
    if m == 0 {
        return EPartition { masses: vec![BigRational::one()] };
    }
    let q = BigInt::from(params.q());
    let qp1 = BigInt::from(params.q() + 1);
    let mut masses = Vec::with_capacity(m + 1);
    // E_0: rays deviating immediately: q of the q+1 first steps.
    masses.push(BigRational::new(q.clone(), qp1.clone()));
    for i in 1..m {
        // follow x's word for i steps (measure of that cylinder), then take
        // one of the q-1 edges that neither backtrack nor continue along x.
        let num = BigInt::from(params.q() - 1);
        let den = qp1.clone() * q.pow(i as u32);
        masses.push(BigRational::new(num, den));
    }
    // E_{|x|}: the cylinder of x's full word.
    masses.push(cylinder_measure(params, m));
    EPartition { masses }
}

/// Conditional average over a cylinder at an arbitrary base vertex.
///
/// `f` is a depth-`m` cylindrical function of the boundary, tabulated as a
/// function of depth-`m` stubs at the vertex `at`. The return value is the
/// `nu_base`-average of `f` over the depth-`n` cylinder **at `base`**
/// containing the boundary set named by `(at, stub)` — i.e. the value of the
/// conditional-expectation operator `E^{base}_n f` on that set.
///
/// When the base coincides with `at` and `n >= m` the function is already
/// constant on the conditioning cylinder and is returned exactly. Otherwise
/// the average is computed by brute-force refinement: depth-`K` cylinders at
/// `base` with `K = max(m, n) + d(base, at)` are fine enough both to lie
/// inside single depth-`n` cylinders at `base` and to determine `m` steps
/// from `at`, and at fixed depth all cylinders have equal measure, so the
/// conditional average is a plain arithmetic mean.
pub fn conditional_average(
    params: &TreeParams,
    base: &Vertex,
    n: usize,
    at: &Vertex,
    stub: &[Colour],
    m: usize,
    f: &dyn Fn(&[Colour]) -> Complex64,
) -> Result<Complex64> {
    if stub.len() < m {
        return Err(Error::StubTooShort { need: m, got: stub.len() });
    }
    if base == at && n >= m {
        return Ok(f(&stub[..m]));
    }
    let d = distance(base, at);
    // The depth-n cylinder at base containing (at, stub).
    let prefix = stub_seen_from(at, stub, base, n)?;
    let root_word = NbWord::new(params, base.clone(), prefix)?;
    let k_extra = (m.max(n) + d) - n;
    params.check_extension(&root_word, k_extra)?;
    let refinements = root_word.extensions(params, k_extra)?;
    let mut values = Vec::with_capacity(refinements.len());
    for r in &refinements {
        let local = stub_seen_from(base, r.stub(), at, m)?;
        values.push(f(&local));
    }
    Ok(sum::pairwise(&values) / values.len() as f64)
}

impl TreeParams {
    fn check_extension(&self, w: &NbWord, k: usize) -> Result<()> {
        let count = extension_count(self, w.depth(), k);
        if count > self.cap() as u128 {
            return Err(Error::EnumerationCap { requested: count, cap: self.cap() });
        }
        Ok(())
    }
}
