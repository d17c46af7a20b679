//! The ε-sweep: one row per semiclassical parameter with the adjoint and
//! product remainder norms and the fitted negligibility constants.
//!
//! The CSV is a pure function of the configuration (fixed seed, fixed
//! summation orders), so two identical runs produce byte-identical files.
//! Wall-clock runtimes are real measurements and therefore go to the
//! plain-text report on stderr, never into the CSV.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use treecalc::quantize::sweep_point;
use treecalc::spectral::SGrid;
use treecalc::tree::TreeParams;

use crate::config::RunConfig;
use crate::CliError;

/// One sweep row: the per-ε measurements, including the wall-clock runtime
/// (reported separately from the deterministic CSV columns).
pub struct SweepRow {
    pub epsilon: f64,
    pub adjoint_norm: f64,
    pub product_norm: f64,
    /// Fitted decay constants `C_N` of the product remainder, `N <= 3`.
    pub negligibility: [f64; 4],
    pub tail_bound: f64,
    pub adjoint_converged: bool,
    pub product_converged: bool,
    pub millis: u128,
}

/// Runs the sweep at the configured `(radius, tail, snodes)` for every ε in
/// the configured list.
pub fn compute_rows(cfg: &RunConfig) -> Result<Vec<SweepRow>, treecalc::Error> {
    let p = TreeParams::new(cfg.q)?;
    let grid = SGrid::build(&p, cfg.snodes)?;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let started = Instant::now();
        let pt = sweep_point(
            &p,
            &cfg.family,
            cfg.k,
            cfg.chi_support,
            eps,
            cfg.radius,
            cfg.tail,
            &grid,
            cfg.seed,
        )?;
        rows.push(SweepRow {
            epsilon: pt.epsilon,
            adjoint_norm: pt.adjoint_norm,
            product_norm: pt.product_norm,
            negligibility: pt.negligibility,
            tail_bound: pt.tail_bound,
            adjoint_converged: pt.adjoint_converged,
            product_converged: pt.product_converged,
            millis: started.elapsed().as_millis(),
        });
    }
    Ok(rows)
}

/// Renders the deterministic CSV: header plus one row per ε, every number
/// with 17 significant digits.
pub fn csv_text(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(
        "epsilon,adjoint_remainder_norm,product_remainder_norm,c0,c1,c2,c3,tail_bound\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.epsilon,
            r.adjoint_norm,
            r.product_norm,
            r.negligibility[0],
            r.negligibility[1],
            r.negligibility[2],
            r.negligibility[3],
            r.tail_bound,
        );
    }
    out
}

/// Computes the sweep, writes `sweep.csv` into the output directory, and
/// prints the runtime report to stderr. Returns the CSV path.
pub fn run_sweep(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let rows = compute_rows(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("sweep.csv");
    std::fs::write(&path, csv_text(&rows))?;
    eprintln!(
        "sweep: q={} radius={} tail={} snodes={} family={} k={} seed={}",
        cfg.q, cfg.radius, cfg.tail, cfg.snodes, cfg.family, cfg.k, cfg.seed
    );
    for r in &rows {
        eprintln!(
            "  eps={:<6} adjoint={:.3e} product={:.3e} tail_bound={:.3e} converged={}/{} [{} ms]",
            r.epsilon,
            r.adjoint_norm,
            r.product_norm,
            r.tail_bound,
            r.adjoint_converged,
            r.product_converged,
            r.millis
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(path)
}
