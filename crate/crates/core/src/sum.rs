//! Deterministic compensated summation helpers.
//!
//! Quadrature sums and cylinder aggregations always run in a fixed order;
//! pairwise (cascade) summation keeps the rounding error at
//! `O(log n · machine_eps)` without sacrificing reproducibility.

use num_complex::Complex64;

/// Pairwise sum of a complex slice in its given order.
pub fn pairwise(values: &[Complex64]) -> Complex64 {
    if values.len() <= 8 {
        let mut acc = Complex64::new(0.0, 0.0);
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise(&values[..mid]) + pairwise(&values[mid..])
}

/// Pairwise sum of a real slice in its given order.
pub fn pairwise_f64(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_f64(&values[..mid]) + pairwise_f64(&values[mid..])
}
