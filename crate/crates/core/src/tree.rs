//! The homogeneous tree of branching number `q`.
//!
//! Vertices are addressed by *reduced colour words*: the `(q+1)`-regular tree
//! carries a proper edge colouring by `{0, ..., q}`, so every vertex is the
//! endpoint of a unique non-backtracking colour walk from the root. A word is
//! reduced when no two consecutive letters are equal; traversing the same
//! colour twice returns to the starting vertex, so concatenation of walks
//! reduces by cancelling equal letters at the junction.
//!
//! All enumerations (spheres, balls, non-backtracking stubs) are returned in
//! a fixed deterministic order — length first, then lexicographic — and are
//! guarded by a desk-scale cap carried on [`TreeParams`].

use crate::{Error, Result};
use std::fmt;

/// An edge colour, one of `0..=q`.
pub type Colour = u8;

/// Default cap on the number of vertices any single enumeration may produce.
pub const DEFAULT_ENUMERATION_CAP: usize = 100_000;

/// Branching number and derived scalar constants of the tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    q: u32,
    cap: usize,
}

impl TreeParams {
    /// Tree with branching number `q` (so `q + 1` neighbours per vertex).
    ///
    /// `q` is restricted to `2..=9` so colour words serialize as digit
    /// strings; this easily covers desk-scale experiments.
    pub fn new(q: u32) -> Result<Self> {
        Self::with_cap(q, DEFAULT_ENUMERATION_CAP)
    }

    /// Same as [`TreeParams::new`] with an explicit enumeration cap.
    pub fn with_cap(q: u32, cap: usize) -> Result<Self> {
        if !(2..=9).contains(&q) {
            return Err(Error::BranchingOutOfRange(q));
        }
        Ok(TreeParams { q, cap })
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    /// `q` as a float, for spectral formulas.
    pub fn qf(&self) -> f64 {
        self.q as f64
    }

    pub fn ln_q(&self) -> f64 {
        self.qf().ln()
    }

    pub fn sqrt_q(&self) -> f64 {
        self.qf().sqrt()
    }

    /// Half-period `tau = pi / ln q` of the spectral parameter.
    pub fn tau(&self) -> f64 {
        std::f64::consts::PI / self.ln_q()
    }

    /// Vertex degree `q + 1`.
    pub fn degree(&self) -> usize {
        self.q as usize + 1
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Iterator over all edge colours `0..=q`.
    pub fn colours(&self) -> impl Iterator<Item = Colour> {
        0..=(self.q as Colour)
    }

    /// Number of vertices at distance exactly `n`: `(q+1) q^{n-1}` for `n >= 1`.
    pub fn sphere_count(&self, n: usize) -> u128 {
        if n == 0 {
            1
        } else {
            (self.q as u128 + 1) * (self.q as u128).pow(n as u32 - 1)
        }
    }

    /// Number of vertices at distance at most `r`.
    pub fn ball_count(&self, r: usize) -> u128 {
        (0..=r).map(|n| self.sphere_count(n)).sum()
    }

    fn check_cap(&self, requested: u128) -> Result<()> {
        if requested > self.cap as u128 {
            Err(Error::EnumerationCap { requested, cap: self.cap })
        } else {
            Ok(())
        }
    }

    fn check_colour(&self, c: Colour) -> Result<()> {
        if u32::from(c) > self.q {
            Err(Error::InvalidColour { colour: u32::from(c), q: self.q })
        } else {
            Ok(())
        }
    }
}

/// A vertex of the tree, stored as a reduced colour word from the root.
///
/// The root is the empty word. Ordering is length-lexicographic, which is
/// also the deterministic enumeration order used by [`ball`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Vertex(Vec<Colour>);

impl Vertex {
    /// The root vertex (empty word).
    pub fn root() -> Self {
        Vertex(Vec::new())
    }

    /// Build a vertex from a colour word, validating colours and reducedness.
    pub fn from_word(params: &TreeParams, word: &[Colour]) -> Result<Self> {
        for (i, &c) in word.iter().enumerate() {
            params.check_colour(c)?;
            if i > 0 && word[i - 1] == c {
                return Err(Error::NotReduced(i));
            }
        }
        Ok(Vertex(word.to_vec()))
    }

    /// Parse a vertex from a digit string; the empty string and `"o"` both
    /// denote the root.
    pub fn parse(params: &TreeParams, text: &str) -> Result<Self> {
        let t = text.trim();
        if t.is_empty() || t == "o" {
            return Ok(Vertex::root());
        }
        let mut word = Vec::with_capacity(t.len());
        for ch in t.chars() {
            let d = ch.to_digit(10).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("invalid colour character `{ch}` in vertex word `{t}`"),
            })?;
            word.push(d as Colour);
        }
        Vertex::from_word(params, &word)
    }

    pub fn word(&self) -> &[Colour] {
        &self.0
    }

    /// Distance from the root.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Neighbour reached by traversing the edge of colour `c`: appends `c`,
    /// or removes the last letter when the word already ends in `c`.
    pub fn step(&self, c: Colour) -> Vertex {
        let mut w = self.0.clone();
        if w.last() == Some(&c) {
            w.pop();
        } else {
            w.push(c);
        }
        Vertex(w)
    }

    /// All `q + 1` neighbours, in colour order.
    pub fn neighbours(&self, params: &TreeParams) -> Vec<Vertex> {
        params.colours().map(|c| self.step(c)).collect()
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl PartialOrd for Vertex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Vertex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.len().cmp(&other.len()).then_with(|| self.0.cmp(&other.0))
    }
}

/// Concatenate two reduced words, cancelling equal letters at the junction.
///
/// Every colour is an involution, so the inverse of a walk is its reversed
/// colour word and cancellation can cascade across the junction; both inputs
/// being reduced guarantees the result is reduced.
pub fn reduce_concat(a: &[Colour], b: &[Colour]) -> Vec<Colour> {
    let mut stack: Vec<Colour> = a.to_vec();
    for &c in b {
        if stack.last() == Some(&c) {
            stack.pop();
        } else {
            stack.push(c);
        }
    }
    stack
}

/// Colour word of the geodesic from `x` to `y` (length = distance).
pub fn path_word(x: &Vertex, y: &Vertex) -> Vec<Colour> {
    let mut rx: Vec<Colour> = x.word().to_vec();
    rx.reverse();
    reduce_concat(&rx, y.word())
}

/// Graph distance between two vertices.
pub fn distance(x: &Vertex, y: &Vertex) -> usize {
    path_word(x, y).len()
}

/// The geodesic vertex path from `x` to `y`, inclusive of both endpoints.
pub fn geodesic(x: &Vertex, y: &Vertex) -> Vec<Vertex> {
    let word = path_word(x, y);
    let mut out = Vec::with_capacity(word.len() + 1);
    let mut cur = x.clone();
    out.push(cur.clone());
    for &c in &word {
        cur = cur.step(c);
        out.push(cur.clone());
    }
    out
}

/// All non-backtracking colour words of length `len` (consecutive letters
/// distinct; the first letter is unconstrained), in lexicographic order.
///
/// These are exactly the walks of length `len` out of any base vertex, hence
/// there are `(q+1) q^{len-1}` of them for `len >= 1` and one (empty) for
/// `len = 0`.
pub fn stubs_at(params: &TreeParams, len: usize) -> Result<Vec<Vec<Colour>>> {
    params.check_cap(stub_count(params, len))?;
    let mut out = Vec::new();
    let mut cur: Vec<Colour> = Vec::with_capacity(len);
    fn rec(params: &TreeParams, len: usize, cur: &mut Vec<Colour>, out: &mut Vec<Vec<Colour>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for c in params.colours() {
            if cur.last() == Some(&c) {
                continue;
            }
            cur.push(c);
            rec(params, len, cur, out);
            cur.pop();
        }
    }
    rec(params, len, &mut cur, &mut out);
    Ok(out)
}

/// Number of non-backtracking words of the given length.
pub fn stub_count(params: &TreeParams, len: usize) -> u128 {
    params.sphere_count(len)
}

/// Endpoint of the non-backtracking walk `stub` started at `x`.
pub fn walk_end(x: &Vertex, stub: &[Colour]) -> Vertex {
    let mut cur = x.clone();
    for &c in stub {
        cur = cur.step(c);
    }
    cur
}

/// Vertices at distance exactly `n` from `x`, in the stub enumeration order.
pub fn sphere(params: &TreeParams, x: &Vertex, n: usize) -> Result<Vec<Vertex>> {
    let stubs = stubs_at(params, n)?;
    Ok(stubs.iter().map(|s| walk_end(x, s)).collect())
}

/// Vertices at distance at most `r` from `x`, sorted length-lexicographically.
pub fn ball(params: &TreeParams, x: &Vertex, r: usize) -> Result<Vec<Vertex>> {
    params.check_cap(params.ball_count(r))?;
    let mut out = Vec::with_capacity(params.ball_count(r) as usize);
    for n in 0..=r {
        out.extend(sphere(params, x, n)?);
    }
    out.sort();
    Ok(out)
}

/// A boundary cylinder name: a base vertex together with a non-backtracking
/// stub out of it. The stub's consecutive letters are distinct (its first
/// letter is free — every neighbour of the base starts some cylinder), and
/// its length is the cylinder depth.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NbWord {
    base: Vertex,
    stub: Vec<Colour>,
}

impl NbWord {
    pub fn new(params: &TreeParams, base: Vertex, stub: Vec<Colour>) -> Result<Self> {
        for (i, &c) in stub.iter().enumerate() {
            params.check_colour(c)?;
            if i > 0 && stub[i - 1] == c {
                return Err(Error::NotReduced(i));
            }
        }
        Ok(NbWord { base, stub })
    }

    /// The depth-0 cylinder (the entire boundary) at `base`.
    pub fn whole_boundary(base: Vertex) -> Self {
        NbWord { base, stub: Vec::new() }
    }

    pub fn base(&self) -> &Vertex {
        &self.base
    }

    pub fn stub(&self) -> &[Colour] {
        &self.stub
    }

    /// Cylinder depth = stub length.
    pub fn depth(&self) -> usize {
        self.stub.len()
    }

    /// The vertex at the end of the stub walk.
    pub fn endpoint(&self) -> Vertex {
        walk_end(&self.base, &self.stub)
    }

    /// All depth-`(depth + k)` refinements of this cylinder, in lexicographic
    /// order of the appended letters. There are `q^k` of them when the stub
    /// is non-empty and `(q+1) q^{k-1}` when extending the whole boundary.
    pub fn extensions(&self, params: &TreeParams, k: usize) -> Result<Vec<NbWord>> {
        let count = extension_count(params, self.depth(), k);
        params.check_cap(count)?;
        let mut out = Vec::new();
        let mut cur = self.stub.clone();
        let target = self.stub.len() + k;
        fn rec(
            params: &TreeParams,
            target: usize,
            base: &Vertex,
            cur: &mut Vec<Colour>,
            out: &mut Vec<NbWord>,
        ) {
            if cur.len() == target {
                out.push(NbWord { base: base.clone(), stub: cur.clone() });
                return;
            }
            for c in params.colours() {
                if cur.last() == Some(&c) {
                    continue;
                }
                cur.push(c);
                rec(params, target, base, cur, out);
                cur.pop();
            }
        }
        rec(params, target, &self.base, &mut cur, &mut out);
        Ok(out)
    }
}

/// Number of depth-`(depth + k)` refinements of a depth-`depth` cylinder.
pub fn extension_count(params: &TreeParams, depth: usize, k: usize) -> u128 {
    if k == 0 {
        1
    } else if depth == 0 {
        (params.q as u128 + 1) * (params.q as u128).pow(k as u32 - 1)
    } else {
        (params.q as u128).pow(k as u32)
    }
}

/// Length of the common prefix of two colour sequences.
pub fn common_prefix_len(a: &[Colour], b: &[Colour]) -> usize {
    a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count()
}

/// First `k` colours of the ray `[y, omega)` where `omega` is any boundary
/// point in the cylinder named by `(x, stub)`.
///
/// The ray from `y` follows the geodesic back to the median of `(x, y,
/// omega)` and then continues along the stub. Errors with
/// [`Error::StubTooShort`] when the cylinder does not pin down `k` steps from
/// `y` — that happens when the stub ends strictly inside the geodesic
/// `[x, y]` or simply does not reach far enough.
pub fn stub_seen_from(x: &Vertex, stub: &[Colour], y: &Vertex, k: usize) -> Result<Vec<Colour>> {
    let gamma = path_word(x, y);
    let d = gamma.len();
    let p = common_prefix_len(stub, &gamma);
    if k > 0 && p == stub.len() && p < d {
        // The whole stub lies strictly inside [x, y]: boundary points in the
        // cylinder may branch off anywhere past its end (even beyond y), so
        // not a single step from y is determined.
        return Err(Error::StubTooShort { need: d.min(stub.len() + 1), got: stub.len() });
    }
    let available = (d - p) + (stub.len() - p);
    if available < k {
        return Err(Error::StubTooShort { need: p + (k - (d - p)), got: stub.len() });
    }
    let mut out = Vec::with_capacity(k);
    // Walk from y back towards the median: colours of gamma reversed.
    for i in (p..d).rev() {
        if out.len() == k {
            return Ok(out);
        }
        out.push(gamma[i]);
    }
    for i in p..stub.len() {
        if out.len() == k {
            return Ok(out);
        }
        out.push(stub[i]);
    }
    Ok(out)
}
