//! The verification suite: every identity the library certifies, run at the
//! configured size, printed one row per check as `measured vs tolerance`.

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::One;

use treecalc::boundary::{cylinder_measure, e_partition, q_power};
use treecalc::fourier::{
    fh_forward, fh_forward_neg, fh_inverse, plancherel_inner, symmetry_defect, FiniteFunction,
};
use treecalc::profile::SProfile;
use treecalc::quantize::{
    commutator_symbol, decay_profile, kernel_entry_rebased, kernel_of_symbol, laplacian_kernel,
    matrix_commutator, KernelMatrix,
};
use treecalc::spectral::{spherical_explicit, spherical_via_boundary, SGrid};
use treecalc::symbols::{builtin_family, validate_class, CylSymbol, BUILTIN_FAMILIES};
use treecalc::tree::{ball, TreeParams, Vertex};

use crate::config::RunConfig;

/// One verification row: the measured defect against its tolerance.
struct CheckRow {
    name: &'static str,
    measured: f64,
    tolerance: f64,
    pass: bool,
}

impl CheckRow {
    fn bounded(name: &'static str, measured: f64, tolerance: f64) -> Self {
        CheckRow {
            name,
            measured,
            tolerance,
            pass: measured.is_finite() && measured <= tolerance,
        }
    }

    fn exact(name: &'static str, pass: bool) -> Self {
        CheckRow {
            name,
            measured: if pass { 0.0 } else { f64::NAN },
            tolerance: 0.0,
            pass,
        }
    }
}

fn zigzag(params: &TreeParams, d: usize) -> Vertex {
    let word: Vec<u8> = (0..d).map(|i| (i % 2) as u8).collect();
    Vertex::from_word(params, &word).expect("alternating word is reduced")
}

/// Runs every check at the configured `(q, radius, snodes)`; returns the rows.
fn collect_rows(cfg: &RunConfig) -> Result<Vec<CheckRow>, treecalc::Error> {
    let p = TreeParams::new(cfg.q)?;
    let grid = SGrid::build(&p, cfg.snodes)?;
    let mut rows = Vec::new();

    // Exact rational measure algebra.
    let mut refine_ok = BigRational::from_integer((cfg.q as i64 + 1).into())
        * cylinder_measure(&p, 1)
        == BigRational::one();
    for n in 1..=6usize {
        refine_ok &= BigRational::from_integer((cfg.q as i64).into())
            * cylinder_measure(&p, n + 1)
            == cylinder_measure(&p, n);
    }
    rows.push(CheckRow::exact("cylinder refinement additivity (exact)", refine_ok));

    let mut rn_ok = true;
    for d in 0..=4usize {
        let x = zigzag(&p, d);
        let mut total = BigRational::from_integer(0.into());
        for (j, nu) in e_partition(&p, &x).masses().iter().enumerate() {
            total += nu * q_power(&p, 2 * j as i64 - d as i64);
        }
        rn_ok &= total == BigRational::one();
    }
    rows.push(CheckRow::exact("direction-partition total mass (exact)", rn_ok));

    // Quadrature moments.
    rows.push(CheckRow::bounded(
        "plancherel mass |M_0 - 1|",
        (grid.moment(0) - 1.0).norm(),
        1e-12,
    ));
    let mut worst_ann = 0f64;
    for d in 1..=6usize {
        let x = zigzag(&p, d);
        let mut total = Complex64::new(0.0, 0.0);
        for (j, nu) in e_partition(&p, &x).masses_f64().iter().enumerate() {
            let h = 2 * j as i64 - d as i64;
            total += nu * p.sqrt_q().powi(h as i32) * grid.moment(h);
        }
        worst_ann = worst_ann.max(total.norm());
    }
    rows.push(CheckRow::bounded("moment annihilation (d <= 6)", worst_ann, 1e-10));

    // Boundary transform: roundtrip, isometry, symmetry.
    let depth = cfg.radius.min(4);
    let mut worst_rt = 0f64;
    let mut worst_pl = 0f64;
    let mut worst_sym = 0f64;
    for seed in 0..3u64 {
        let f = FiniteFunction::random_on_ball(&p, depth, cfg.seed.wrapping_add(seed))?;
        let pos = fh_forward(&f, &grid, depth)?;
        let back = fh_inverse(&pos, depth)?;
        worst_rt = worst_rt.max(f.sub(&back).max_abs());
        worst_pl = worst_pl.max((plancherel_inner(&pos, &pos)? - f.inner(&f)).norm());
        let neg = fh_forward_neg(&f, &grid, depth)?;
        worst_sym = worst_sym.max(symmetry_defect(&pos, &neg, depth)?);
    }
    rows.push(CheckRow::bounded("transform roundtrip", worst_rt, 1e-8));
    rows.push(CheckRow::bounded("transform isometry", worst_pl, 1e-8));
    rows.push(CheckRow::bounded("transform symmetry", worst_sym, 1e-8));

    // Spherical functions, explicit vs boundary integral.
    let mut worst_sph = 0f64;
    for d in 0..=6usize {
        let x = zigzag(&p, d);
        for &s in grid.nodes().iter().step_by((grid.nodes().len() / 64).max(1)) {
            worst_sph = worst_sph.max((spherical_explicit(&p, s, d) - spherical_via_boundary(&p, s, &x)).abs());
        }
    }
    rows.push(CheckRow::bounded("spherical explicit vs boundary", worst_sph, 1e-10));

    // Quantization identities.
    let one = CylSymbol::constant(&p, Complex64::new(1.0, 0.0));
    let k_one = kernel_of_symbol(&one, cfg.radius, &grid)?;
    let id = KernelMatrix::identity(&p, cfg.radius)?;
    rows.push(CheckRow::bounded("Op(1) = identity", k_one.max_abs_diff(&id)?, 1e-10));

    let lam = CylSymbol::from_profile(&p, SProfile::eigencurve(&p));
    let k_lam = kernel_of_symbol(&lam, cfg.radius, &grid)?;
    let delta = laplacian_kernel(&p, cfg.radius)?;
    rows.push(CheckRow::bounded(
        "Op(eigencurve) = averaging operator",
        k_lam.max_abs_diff(&delta)?,
        1e-10,
    ));

    let fam = builtin_family(&p, &cfg.family, cfg.eps, cfg.k, cfg.chi_support)?;
    let k_fam = kernel_of_symbol(&fam, cfg.radius, &grid)?;
    let base = Vertex::parse(&p, "1")?;
    // Rebased entries enumerate stubs of length d(b,x) + d(b,y) + depth, so
    // shrink the sampled ball until that enumeration stays small.
    let mut rb_radius = 1usize;
    for r in 1..=cfg.radius {
        let longest = 2 * (r + 1) + fam.depth();
        let stubs = (cfg.q as u128 + 1) * (cfg.q as u128).pow(longest as u32 - 1);
        if stubs <= 5_000 {
            rb_radius = r;
        }
    }
    let verts = ball(&p, &Vertex::root(), rb_radius)?;
    let mut worst_rebase = 0f64;
    let step = (verts.len() / 6).max(1);
    for (xi, x) in verts.iter().enumerate().step_by(step) {
        for (yi, y) in verts.iter().enumerate().step_by(step) {
            let rebased = kernel_entry_rebased(&grid, &fam, &base, x, y)?;
            worst_rebase = worst_rebase.max((k_fam.value(xi, yi) - rebased).norm());
        }
    }
    rows.push(CheckRow::bounded("kernel base-point invariance", worst_rebase, 1e-12));

    // Commutator identity, one row per built-in family.
    let com_radius = cfg.radius.min(3).max(1);
    let mut com_rows: Vec<(&'static str, f64)> = Vec::new();
    for kind in BUILTIN_FAMILIES {
        let a = builtin_family(&p, kind, cfg.eps, cfg.k, cfg.chi_support)?;
        let k_c = kernel_of_symbol(&commutator_symbol(&a)?, com_radius, &grid)?
            .restrict(com_radius - 1)?;
        let k_a = kernel_of_symbol(&a, com_radius, &grid)?;
        let m_c = matrix_commutator(&k_a)?.restrict(com_radius - 1)?;
        com_rows.push((kind, k_c.max_abs_diff(&m_c)?));
    }
    for (kind, defect) in com_rows {
        let name: &'static str = match kind {
            "bump_profile_only" => "commutator identity (bump_profile_only)",
            "radial_eps" => "commutator identity (radial_eps)",
            _ => "commutator identity (shifted_k)",
        };
        rows.push(CheckRow::bounded(name, defect, 1e-10));
    }

    // Symbol-class validator on the configured family.
    let vgrid = SGrid::build(&p, 32)?;
    let report = validate_class(&fam, &vgrid, 2, cfg.eps)?;
    rows.push(CheckRow::exact("class norms finite", report.all_finite()));
    rows.push(CheckRow::bounded(
        "cylindrical residual beyond depth",
        report.residual_beyond_depth,
        1e-12,
    ));

    // Kernel decay profile of the configured family.
    let prof = decay_profile(&k_fam);
    let w2 = prof.weighted(2, &p);
    let peak = w2.iter().cloned().fold(0.0, f64::max);
    let last = *w2.last().unwrap_or(&f64::NAN);
    rows.push(CheckRow::bounded(
        "decay profile: edge/peak of (1+d)^2 q^{d/2} max|k|",
        if peak > 0.0 { last / peak } else { 0.0 },
        1.0,
    ));

    Ok(rows)
}

/// Prints the table and returns the process exit code (0 iff all rows pass).
pub fn run_verify(cfg: &RunConfig) -> i32 {
    println!(
        "verification suite: q={} radius={} snodes={} family={} eps={}",
        cfg.q, cfg.radius, cfg.snodes, cfg.family, cfg.eps
    );
    let rows = match collect_rows(cfg) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("verification aborted: {e}");
            return 2;
        }
    };
    let mut failures = 0usize;
    for row in &rows {
        let status = if row.pass { "PASS" } else { "FAIL" };
        if row.tolerance == 0.0 {
            println!("{status}  {:<48} exact", row.name);
        } else {
            println!(
                "{status}  {:<48} {:.3e} vs {:.1e}",
                row.name, row.measured, row.tolerance
            );
        }
        if !row.pass {
            failures += 1;
        }
    }
    println!(
        "verification result: {} of {} checks passed",
        rows.len() - failures,
        rows.len()
    );
    if failures == 0 {
        0
    } else {
        1
    }
}
