//! Harmonic analysis and a pseudo-differential calculus on the homogeneous
//! tree of branching number `q` (every vertex has `q + 1` neighbours).
//!
//! The crate is organized bottom-up:
//!
//! * [`tree`] — vertices as reduced colour words, distances, geodesics,
//!   spheres/balls and non-backtracking words naming boundary cylinders;
//! * [`boundary`] — exact (rational) cylinder measures on the boundary at
//!   infinity, confluence points, horocycle height differences,
//!   Radon–Nikodym derivatives and conditional averages over cylinders;
//! * [`spectral`] — the Plancherel density, the `c`-function, spherical
//!   functions, the Laplacian eigenvalue curve and Gauss–Legendre spectral
//!   grids with cached oscillatory moments;
//! * [`fourier`] — the boundary-spectral transform of finitely supported
//!   functions, its inverse, the Plancherel inner product and the symmetry
//!   condition diagnostic;
//! * [`profile`] and [`symbols`] — smooth spectral profiles with analytic
//!   derivatives, cylindrical symbols, the shift/transfer operations, the
//!   built-in semiclassical families and the symbol-class validator;
//! * [`quantize`] — kernels of quantized symbols (naive and grouped
//!   evaluators), kernel algebra with certified truncation tails, decay
//!   profiles, operator-norm estimation and the commutator identity with
//!   the Laplacian.
//!
//! All boundary integrals are exact sums over cylinder partitions; the only
//! numerical approximation anywhere is the spectral quadrature, which is
//! deterministic (fixed node order, pairwise compensated summation).

pub mod boundary;
pub mod fourier;
pub mod profile;
pub mod quantize;
pub mod spectral;
mod sum;
pub mod symbols;
pub mod tree;

use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Branching numbers are restricted to `2..=9` so vertices serialize as
    /// single-digit colour strings.
    #[error("branching number q={0} out of supported range 2..=9")]
    BranchingOutOfRange(u32),
    /// An enumeration (sphere, ball, cylinder refinement) would exceed the
    /// configured desk-scale cap.
    #[error("enumeration of {requested} items exceeds cap {cap}")]
    EnumerationCap { requested: u128, cap: usize },
    /// A colour letter outside `0..=q`.
    #[error("colour {colour} invalid for branching number q={q}")]
    InvalidColour { colour: u32, q: u32 },
    /// A word with two equal consecutive letters where a reduced word is
    /// required.
    #[error("word is not reduced at position {0}")]
    NotReduced(usize),
    /// A non-backtracking word is too short to determine the requested
    /// quantity (confluence point, shifted stub, ...).
    #[error("stub of length {got} does not determine the value (need {need})")]
    StubTooShort { need: usize, got: usize },
    /// A cylinder word is based at a different vertex than the operation
    /// requires.
    #[error("cylinder word based at a different vertex than required")]
    BaseMismatch,
    /// A spectral table's cylinder depth cannot represent data at the
    /// requested radius.
    #[error("cylinder depth {depth} too small for radius {radius}")]
    DepthTooSmall { depth: usize, radius: usize },
    /// Two tabulated objects disagree on depth/grid and cannot be combined.
    #[error("tabulated objects are incompatible: {0}")]
    Incompatible(String),
    /// A finitely supported function listed the same vertex twice.
    #[error("duplicate vertex in the support of a finite function")]
    DuplicateSupport,
    /// Too few quadrature nodes for a reliable spectral grid.
    #[error("spectral grid needs at least {min} nodes, got {got}")]
    GridTooSmall { got: usize, min: usize },
    /// Requested derivative order above what a profile provides.
    #[error("derivative order {k} exceeds supported maximum {max}")]
    DerivativeOrder { k: usize, max: usize },
    /// A symbol is evaluated (or quantized) outside its tabulated domain.
    #[error("symbol domain radius {have} insufficient, need {need}")]
    DomainExhausted { need: usize, have: usize },
    /// Composition tail radius incompatible with the kernel radius.
    #[error("tail radius {tail} too large for ball radius {radius}")]
    TailTooLarge { tail: usize, radius: usize },
    /// Unknown built-in symbol family name.
    #[error("unknown symbol family `{0}`")]
    UnknownFamily(String),
    /// Malformed textual input (CSV tables, words).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
