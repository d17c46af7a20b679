//! The `transform` subcommand: read a finitely supported function as
//! `vertex_word,re,im` rows, apply the boundary transform, and write the
//! spectral table as `stub,node_index,s,re,im`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use treecalc::fourier::{fh_forward, FiniteFunction, SpectralFunction};
use treecalc::spectral::SGrid;
use treecalc::tree::{TreeParams, Vertex};

use crate::config::RunConfig;
use crate::CliError;

/// Parses the input CSV (`vertex_word,re,im` with a header).
pub fn load_function(params: &TreeParams, path: &Path) -> Result<FiniteFunction, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "vertex_word,re,im" => {}
        _ => {
            return Err(CliError::Input(format!(
                "{}: expected header `vertex_word,re,im`",
                path.display()
            )))
        }
    }
    let mut entries = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::Input(format!(
                "{} line {line}: expected 3 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let bad = |msg: String| CliError::Input(format!("{} line {line}: {msg}", path.display()));
        let x = Vertex::parse(params, fields[0]).map_err(|e| bad(e.to_string()))?;
        let re: f64 = fields[1].trim().parse().map_err(|e| bad(format!("re: {e}")))?;
        let im: f64 = fields[2].trim().parse().map_err(|e| bad(format!("im: {e}")))?;
        entries.push((x, Complex64::new(re, im)));
    }
    if entries.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(FiniteFunction::new(entries)?)
}

/// Renders the spectral table as CSV.
pub fn spectral_csv(table: &SpectralFunction) -> String {
    let mut out = String::new();
    out.push_str("stub,node_index,s,re,im\n");
    for (i, stub) in table.stubs().iter().enumerate() {
        let word: String = stub.iter().map(|c| c.to_string()).collect();
        for (k, &s) in table.grid().nodes().iter().enumerate() {
            let v = table.value(i, k);
            let _ = writeln!(out, "{word},{k},{:.16e},{:.16e},{:.16e}", s, v.re, v.im);
        }
    }
    out
}

/// Transforms the input function and writes `transform.csv` into the output
/// directory. The cylinder depth defaults to the support radius (the
/// smallest depth the transform accepts).
pub fn run_transform(
    cfg: &RunConfig,
    input: &Path,
    depth: Option<usize>,
) -> Result<PathBuf, CliError> {
    let p = TreeParams::new(cfg.q)?;
    let grid = SGrid::build(&p, cfg.snodes)?;
    let f = load_function(&p, input)?;
    let depth = depth.unwrap_or_else(|| f.support_radius());
    let table = fh_forward(&f, &grid, depth)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("transform.csv");
    std::fs::write(&path, spectral_csv(&table))?;
    eprintln!(
        "transform: {} support vertices, depth {depth}, {} stubs x {} nodes",
        f.entries().len(),
        table.stubs().len(),
        grid.len()
    );
    eprintln!("wrote {}", path.display());
    Ok(path)
}
