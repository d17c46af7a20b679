//! The `kernel` subcommand: quantize a symbol (built-in family or a CSV
//! table) and emit its matrix as `x_word,y_word,d,re,im` rows behind a
//! plain-text metadata line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use treecalc::profile::SProfile;
use treecalc::quantize::{kernel_of_symbol, KernelMatrix};
use treecalc::spectral::SGrid;
use treecalc::symbols::{builtin_family, from_table, CylSymbol};
use treecalc::tree::{distance, Colour, TreeParams, Vertex};

use crate::config::RunConfig;
use crate::CliError;

/// Looks up a profile by name for table-loaded symbols.
fn named_profile(params: &TreeParams, name: &str) -> Result<SProfile, CliError> {
    match name {
        "bump" => Ok(SProfile::bump(params)),
        "one" => Ok(SProfile::one()),
        "eigencurve" => Ok(SProfile::eigencurve(params)),
        other => Err(CliError::Input(format!(
            "unknown profile `{other}`; expected bump, one, or eigencurve"
        ))),
    }
}

/// Parses a symbol table CSV (`x_word,stub,term_index,re,im` with a header).
/// All stubs must share one length, which becomes the cylinder depth.
pub fn load_table_symbol(
    params: &TreeParams,
    path: &Path,
    profile_name: &str,
) -> Result<CylSymbol, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "x_word,stub,term_index,re,im" => {}
        _ => {
            return Err(CliError::Input(format!(
                "{}: expected header `x_word,stub,term_index,re,im`",
                path.display()
            )))
        }
    }
    let mut maps: Vec<HashMap<(Vec<Colour>, Vec<Colour>), Complex64>> = Vec::new();
    let mut depth: Option<usize> = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Input(format!(
                "{} line {line}: expected 5 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let bad = |msg: String| CliError::Input(format!("{} line {line}: {msg}", path.display()));
        let x = Vertex::parse(params, fields[0]).map_err(|e| bad(e.to_string()))?;
        let stub = Vertex::parse(params, fields[1]).map_err(|e| bad(e.to_string()))?;
        let stub = stub.word().to_vec();
        match depth {
            None => depth = Some(stub.len()),
            Some(d) if d != stub.len() => {
                return Err(bad(format!(
                    "stub `{}` has length {}, earlier rows used {d}",
                    fields[1],
                    stub.len()
                )))
            }
            _ => {}
        }
        let term: usize = fields[2]
            .trim()
            .parse()
            .map_err(|e| bad(format!("term_index: {e}")))?;
        let re: f64 = fields[3].trim().parse().map_err(|e| bad(format!("re: {e}")))?;
        let im: f64 = fields[4].trim().parse().map_err(|e| bad(format!("im: {e}")))?;
        if term >= maps.len() {
            maps.resize_with(term + 1, HashMap::new);
        }
        if maps[term]
            .insert((x.word().to_vec(), stub), Complex64::new(re, im))
            .is_some()
        {
            return Err(bad(format!("duplicate entry for ({}, {})", fields[0], fields[1])));
        }
    }
    if maps.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let eta = named_profile(params, profile_name)?;
    let tables = maps.into_iter().map(|m| (m, eta.clone())).collect();
    Ok(from_table(params, depth.unwrap_or(0), tables))
}

/// Renders the kernel as CSV with a leading `#` metadata line.
pub fn kernel_csv(k: &KernelMatrix, cfg: &RunConfig, source: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# treecalc kernel | q={} radius={} snodes={} source={source} | {}",
        cfg.q,
        cfg.radius,
        cfg.snodes,
        k.meta()
    );
    out.push_str("x_word,y_word,d,re,im\n");
    for (i, x) in k.verts().iter().enumerate() {
        for (j, y) in k.verts().iter().enumerate() {
            let v = k.value(i, j);
            let _ = writeln!(out, "{x},{y},{},{:.16e},{:.16e}", distance(x, y), v.re, v.im);
        }
    }
    out
}

/// Quantizes the configured symbol and writes `kernel.csv` into the output
/// directory. Returns the path.
pub fn run_kernel(
    cfg: &RunConfig,
    table: Option<&Path>,
    profile_name: &str,
) -> Result<PathBuf, CliError> {
    let p = TreeParams::new(cfg.q)?;
    let grid = SGrid::build(&p, cfg.snodes)?;
    let (symbol, source) = match table {
        Some(path) => (
            load_table_symbol(&p, path, profile_name)?,
            format!("table:{}", path.display()),
        ),
        None => (
            builtin_family(&p, &cfg.family, cfg.eps, cfg.k, cfg.chi_support)?,
            format!("family:{} eps={} k={}", cfg.family, cfg.eps, cfg.k),
        ),
    };
    let kernel = kernel_of_symbol(&symbol, cfg.radius, &grid)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("kernel.csv");
    std::fs::write(&path, kernel_csv(&kernel, cfg, &source))?;
    eprintln!(
        "kernel: {} vertices, max |entry| = {:.3e}",
        kernel.dim(),
        kernel.max_abs()
    );
    eprintln!("wrote {}", path.display());
    Ok(path)
}
