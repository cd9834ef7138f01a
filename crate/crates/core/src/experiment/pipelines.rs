//! The individual pipeline stages. Each stage appends a summary section, CSV
//! tables and report lines to the shared [`Artifacts`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{derive_seed, ExperimentConfig};
use super::output::{num, opt, Artifacts, Table};
use super::sweep::sweep;
use crate::disintegration::{accumulate_box, atom_count, atomicity_statistic, default_box, sample_orbit, AtomReport, FoliatedBox};
use crate::error::{LabError, Result};
use crate::lyapunov::{check_semirigidity, exponents_from_seed, median};
use crate::mme::{mme_atomicity, mme_exponents_with, topological_entropy_linear, ugibbs_gap};
use crate::semiconj::{collapse_diameter, contraction_rate, expected_rate, quasi_isometry_constant, solve_with, worst_contraction_ratio, DisplacementField, SolveOptions};
use crate::system::{DASpec, DASystem, PhOptions};
use crate::torus::{eigen_splitting, family_matrix, invert_unimodular, IntMatrix3, Spectrum};

/// State shared between stages of one run.
pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub artifacts: Artifacts,
    field: Option<DisplacementField>,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Self {
        Context { config, artifacts: Artifacts::new(), field: None }
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label)
    }

    /// Solve the semi-conjugacy once per run.
    fn ensure_field(&mut self) -> Result<()> {
        if self.field.is_none() {
            let k = &self.config.semiconj;
            let opts = SolveOptions {
                grid_size: k.grid_size,
                tol: k.tol,
                max_iter: k.max_iter,
                refine_steps: k.refine_steps,
                probes: k.probes,
            };
            self.field = Some(solve_with(&self.config.spec, &opts)?);
        }
        Ok(())
    }
}

pub fn linearization(spec: &DASpec) -> Result<IntMatrix3> {
    let a = family_matrix(spec.k)?;
    if spec.use_inverse_linearization {
        invert_unimodular(&a)
    } else {
        Ok(a)
    }
}

fn matrix_text(m: &IntMatrix3) -> String {
    let rows: Vec<String> = m.0.iter().map(|r| format!("{} {} {}", r[0], r[1], r[2])).collect();
    rows.join("; ")
}

pub fn spectrum(ctx: &mut Context) -> Result<()> {
    let k = ctx.config.spec.k;
    let a = family_matrix(k)?;
    let inv = invert_unimodular(&a)?;
    let mut table = Table::new(&["matrix", "k", "det", "discriminant", "kind", "value", "log_modulus"]);
    let mut section = serde_json::Map::new();
    ctx.artifacts.line(format!("spectrum (k = {k})"));
    for (name, m) in [("forward", a), ("inverse", inv)] {
        let poly = m.char_poly();
        let spec = eigen_splitting(&m);
        let (kind, values): (&str, Vec<f64>) = match &spec {
            Spectrum::Real(s) => ("real", s.values.to_vec()),
            Spectrum::Repeated { values } => ("repeated", values.to_vec()),
            Spectrum::Complex { real_root, .. } => ("complex", vec![*real_root]),
        };
        for v in &values {
            table.push(vec![
                name.into(),
                k.to_string(),
                m.det().to_string(),
                poly.discriminant().to_string(),
                kind.into(),
                num(*v),
                num(v.abs().ln()),
            ]);
        }
        let entropy = topological_entropy_linear(&m).ok();
        ctx.artifacts.line(format!(
            "  {name:<8} [{}] det {} disc {} {kind}: values {:?} entropy {}",
            matrix_text(&m),
            m.det(),
            poly.discriminant(),
            values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>(),
            entropy.map(|e| format!("{e:.6}")).unwrap_or_else(|| "-".into())
        ));
        section.insert(
            name.into(),
            json!({
                "matrix": m.0,
                "det": m.det(),
                "discriminant": poly.discriminant().to_string(),
                "spectrum": spec,
                "entropy": entropy,
            }),
        );
    }
    ctx.artifacts.table("spectrum", table);
    ctx.artifacts.section("spectrum", Value::Object(section));
    Ok(())
}

pub fn exponents(ctx: &mut Context) -> Result<()> {
    let c = ctx.config;
    let knobs = &c.exponents;
    let sys = DASystem::new(&c.spec)?;
    let report = check_semirigidity(&sys, knobs.samples, knobs.n, ctx.seed("exponents"))?;
    let ph = sys.validate_partial_hyperbolicity(
        knobs.ph_probes,
        &PhOptions { max_window: knobs.ph_max_window, seed: ctx.seed("ph"), ..PhOptions::default() },
    )?;

    let mut table = Table::new(&[
        "k", "theta0", "r", "seed", "n", "lambda_u", "lambda_c", "lambda_s", "se_u", "se_c", "se_s", "unstable_ok", "stable_ok",
    ]);
    for row in &report.rows {
        let e = &row.estimate;
        table.push(vec![
            c.spec.k.to_string(),
            num(c.spec.amplitude),
            num(c.spec.perturbation_radius),
            e.seed.to_string(),
            e.n_iterates.to_string(),
            num(e.lambda_u),
            num(e.lambda_c),
            num(e.lambda_s),
            num(e.standard_error[0]),
            num(e.standard_error[1]),
            num(e.standard_error[2]),
            row.unstable_ok.to_string(),
            row.stable_ok.to_string(),
        ]);
    }
    let mut ph_table = Table::new(&["window", "u_min", "u_max", "c_min", "c_max", "s_min", "s_max", "separated"]);
    for w in &ph.windows {
        ph_table.push(vec![
            w.window.to_string(),
            num(w.unstable[0]),
            num(w.unstable[1]),
            num(w.center[0]),
            num(w.center[1]),
            num(w.stable[0]),
            num(w.stable[1]),
            w.separated.to_string(),
        ]);
    }
    let mut lu: Vec<f64> = report.rows.iter().map(|r| r.estimate.lambda_u).collect();
    let mut ls: Vec<f64> = report.rows.iter().map(|r| r.estimate.lambda_s).collect();
    let center_shift = report.median_center - report.linear[1];
    let regime = report.median_center < 0.0 && report.linear[1] > 0.0 && ph.separated;
    ctx.artifacts.section(
        "exponents",
        json!({
            "linear": report.linear,
            "median": [median(&mut lu), report.median_center, median(&mut ls)],
            "max_unstable_gap": report.max_unstable_gap,
            "semirigidity_ok": report.all_ok,
            "center_shift": center_shift,
            "partially_hyperbolic": ph.separated,
            "first_separated_window": ph.first_separated_window,
            "negative_center_regime": regime,
        }),
    );
    ctx.artifacts.line(format!(
        "exponents: linear (u, c, s) = ({:.6}, {:.6}, {:.6})",
        report.linear[0], report.linear[1], report.linear[2]
    ));
    ctx.artifacts.line(format!(
        "  median λc(f) = {:.5} (λc(f) − λc(A) = {center_shift:+.5}); max |λu(f) − λu(A)| = {:.2e}",
        report.median_center, report.max_unstable_gap
    ));
    ctx.artifacts.line(format!(
        "  semi-rigidity inequalities: {}; partial hyperbolicity: {} (first window {:?})",
        if report.all_ok { "hold" } else { "VIOLATED" },
        if ph.separated { "separated" } else { "not separated" },
        ph.first_separated_window
    ));
    ctx.artifacts.table("exponents", table);
    ctx.artifacts.table("partial_hyperbolicity", ph_table);
    if !report.all_ok {
        let bad: Vec<String> = report
            .rows
            .iter()
            .filter(|r| !(r.unstable_ok && r.stable_ok))
            .map(|r| r.estimate.seed.to_string())
            .collect();
        return Err(LabError::NonConvergence(format!(
            "semi-rigidity inequality violated for seeds {}; raise n",
            bad.join(", ")
        )));
    }
    Ok(())
}

pub fn run_sweep(ctx: &mut Context) -> Result<()> {
    let c = ctx.config;
    let result = sweep(&c.spec, &c.sweep, ctx.seed("sweep"));
    let mut table = Table::new(&[
        "k", "theta0", "linear_center", "lambda_u", "lambda_c", "lambda_s", "se_c", "ph_separated", "ph_first_window", "atomicity",
        "flagged", "error",
    ]);
    for cell in &result.cells {
        let e = cell.exponents;
        table.push(vec![
            cell.k.to_string(),
            num(cell.amplitude),
            opt(cell.linear_center),
            opt(e.map(|e| e[0])),
            opt(e.map(|e| e[1])),
            opt(e.map(|e| e[2])),
            opt(cell.standard_error.map(|s| s[1])),
            cell.ph_separated.to_string(),
            cell.ph_first_window.map(|w| w.to_string()).unwrap_or_default(),
            opt(cell.atomicity),
            cell.flagged.to_string(),
            cell.error.as_deref().unwrap_or("").replace(',', ";"),
        ]);
    }
    ctx.artifacts.table("sweep", table);
    ctx.artifacts.section(
        "sweep",
        json!({
            "cells": result.cells.len(),
            "flagged": result.flagged,
            "failed": result.cells.iter().filter(|c| c.error.is_some()).count(),
            "max_jump_sigma": result.max_jump_sigma,
            "jumps": result.jumps,
            "best": result.best.map(|(k, a, lc)| json!({"k": k, "amplitude": a, "lambda_c": lc})),
        }),
    );
    ctx.artifacts.line(format!(
        "sweep: {} cells, {} flagged, largest adjacent λc jump {:.2}σ",
        result.cells.len(),
        result.flagged,
        result.max_jump_sigma
    ));
    match result.best {
        Some((k, a, lc)) => {
            ctx.artifacts.line(format!("  most negative flagged cell: k = {k}, θ0 = {a}, λc = {lc:.5}"));
            Ok(())
        }
        None => {
            ctx.artifacts.line("  regime not found");
            Err(LabError::HypothesisNotMet("regime not found: no cell with λc(f) < 0 < log μ_wu under partial hyperbolicity".into()))
        }
    }
}

pub fn semiconj(ctx: &mut Context) -> Result<()> {
    let knobs = ctx.config.semiconj.clone();
    let seed = ctx.seed("collapse");
    let qi_seed = ctx.seed("quasi_isometry");
    ctx.ensure_field()?;
    let field = ctx.field.as_ref().expect("solved");
    let sys = field.system();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<_> = (0..knobs.collapse_points).map(|_| DASystem::random_point(&mut rng)).collect();
    let diameters: Vec<Result<f64>> = bases
        .par_iter()
        .map(|x| collapse_diameter(field, x, knobs.collapse_arc, knobs.collapse_steps))
        .collect();
    let mut collapse_table = Table::new(&["x", "y", "z", "diameter"]);
    let mut ds = Vec::new();
    for (x, d) in bases.iter().zip(diameters) {
        let d = d?;
        ds.push(d);
        collapse_table.push(vec![num(x.0[0]), num(x.0[1]), num(x.0[2]), num(d)]);
    }
    let collapse_median = median(&mut ds.clone());
    let qi = if knobs.quasi_isometry_samples > 0 {
        Some(quasi_isometry_constant(sys, knobs.quasi_isometry_samples, knobs.collapse_arc, qi_seed)?)
    } else {
        None
    };
    let mut iter_table = Table::new(&["iteration", "sup_change"]);
    for (i, c) in field.change_log.iter().enumerate() {
        iter_table.push(vec![(i + 1).to_string(), num(*c)]);
    }
    let rate = contraction_rate(&field.change_log);
    let worst = worst_contraction_ratio(&field.change_log);
    let expected = expected_rate(sys);
    let section = json!({
        "grid_size": field.grid_size,
        "iterations": field.iterations,
        "residual": field.residual,
        "raw_residual": field.raw_residual,
        "sup_norm": field.sup_norm,
        "contraction_rate": rate,
        "worst_contraction_ratio": worst,
        "expected_rate": expected,
        "collapse_arc": knobs.collapse_arc,
        "collapse_median": collapse_median,
        "quasi_isometry_constant": qi,
    });
    let lines = [
        format!(
            "semi-conjugacy: N = {}, {} iterations, residual {:.3e} (plain interpolation {:.3e}), ‖u‖∞ = {:.4}",
            field.grid_size, field.iterations, field.residual, field.raw_residual, field.sup_norm
        ),
        format!("  contraction rate {rate:.4} (worst {worst:.4}, expected {expected:.4})"),
        format!(
            "  collapse: median diam h(center arc {}) = {collapse_median:.4} over {} points",
            knobs.collapse_arc, knobs.collapse_points
        ),
    ];
    let save = knobs.save_field.then(|| {
        let mut t = Table::new(&["i", "j", "l", "u_strong", "u_mid", "u_stable"]);
        let n = field.grid_size;
        for (idx, v) in field.values.iter().enumerate() {
            t.push(vec![
                (idx / (n * n)).to_string(),
                (idx / n % n).to_string(),
                (idx % n).to_string(),
                num(v[0]),
                num(v[1]),
                num(v[2]),
            ]);
        }
        t
    });
    ctx.artifacts.section("semiconj", section);
    for l in lines {
        ctx.artifacts.line(l);
    }
    if let Some(qi) = qi {
        ctx.artifacts.line(format!("  quasi-isometry constant (arc {}): {qi:.4}", knobs.collapse_arc));
    }
    ctx.artifacts.table("semiconj_iterations", iter_table);
    ctx.artifacts.table("collapse", collapse_table);
    if let Some(t) = save {
        ctx.artifacts.table("displacement_field", t);
    }
    Ok(())
}

fn foliated_box(ctx: &Context, sys: &DASystem) -> Result<FoliatedBox> {
    let k = &ctx.config.disintegration;
    let base = default_box(sys, k.grid)?.base;
    FoliatedBox::new(base, k.half_widths, k.grid, k.cells)
}

struct Measured {
    label: &'static str,
    n: usize,
    points: u64,
    qualifying: usize,
    overflow: f64,
    statistic: std::result::Result<f64, String>,
    atoms: std::result::Result<AtomReport, String>,
}

fn measure(ctx: &Context, sys: &DASystem, label: &'static str, n: usize) -> Result<Measured> {
    let knobs = &ctx.config.disintegration;
    let b = foliated_box(ctx, sys)?;
    let eps = knobs.epsilon_fraction * b.center_extent();
    let seed = ctx.seed(&format!("disintegrate/{label}/{n}"));
    let hist = accumulate_box(sys, &b, sample_orbit(sys, None, n, knobs.burn_in, seed))?;
    Ok(Measured {
        label,
        n,
        points: hist.total_points,
        qualifying: hist.qualifying_bins().len(),
        overflow: hist.overflow_fraction(),
        statistic: atomicity_statistic(&hist, eps).map_err(|e| e.to_string()),
        atoms: atom_count(&hist, eps, knobs.mass_threshold).map_err(|e| e.to_string()),
    })
}

pub fn disintegrate(ctx: &mut Context) -> Result<()> {
    let knobs = ctx.config.disintegration.clone();
    let sys = DASystem::new(&ctx.config.spec)?;
    ctx.artifacts.line(format!("disintegration: ε = {} · L, half-widths {:?}", knobs.epsilon_fraction, knobs.half_widths));
    let mut rows = Vec::new();
    for &n in &knobs.orbit_lengths {
        rows.push(measure(ctx, &sys, "perturbed", n)?);
    }
    if knobs.control_orbit > 0 {
        let control = DASystem::new(&ctx.config.spec.with_amplitude(0.0))?;
        rows.push(measure(ctx, &control, "control", knobs.control_orbit)?);
    }
    let uniform = knobs.epsilon_fraction;
    let mut table = Table::new(&[
        "measure", "n", "points_in_box", "qualifying_bins", "overflow_fraction", "statistic", "statistic_over_uniform", "atom_mode",
        "fraction_at_mode", "fraction_single", "note",
    ]);
    let mut entries = Vec::new();
    for m in &rows {
        let stat = m.statistic.as_ref().ok().copied();
        let atoms = m.atoms.as_ref().ok();
        let note = m.statistic.as_ref().err().or(m.atoms.as_ref().err()).cloned().unwrap_or_default();
        table.push(vec![
            m.label.into(),
            m.n.to_string(),
            m.points.to_string(),
            m.qualifying.to_string(),
            num(m.overflow),
            opt(stat),
            opt(stat.map(|s| s / uniform)),
            atoms.map(|a| a.atom_count_mode.to_string()).unwrap_or_default(),
            opt(atoms.map(|a| a.fraction_at_mode)),
            opt(atoms.map(|a| a.fraction_single)),
            note.replace(',', ";"),
        ]);
        entries.push(json!({
            "measure": m.label,
            "n": m.n,
            "points_in_box": m.points,
            "qualifying_bins": m.qualifying,
            "overflow_fraction": m.overflow,
            "statistic": stat,
            "atom_count_mode": atoms.map(|a| a.atom_count_mode),
            "fraction_single": atoms.map(|a| a.fraction_single),
            "note": if note.is_empty() { Value::Null } else { Value::from(note) },
        }));
        ctx.artifacts.line(format!(
            "  {:<9} n = {:>11}: {} box points, {} bins, overflow {:.3}, statistic {}, atom mode {}",
            m.label,
            m.n,
            m.points,
            m.qualifying,
            m.overflow,
            stat.map(|s| format!("{s:.4} ({:.2}·ε/L)", s / uniform)).unwrap_or_else(|| "-".into()),
            atoms.map(|a| a.atom_count_mode.to_string()).unwrap_or_else(|| "-".into())
        ));
    }
    let perturbed: Vec<Option<f64>> =
        rows.iter().filter(|m| m.label == "perturbed").map(|m| m.statistic.as_ref().ok().copied()).collect();
    let monotone = perturbed.len() >= 2
        && perturbed.iter().all(|s| s.is_some())
        && perturbed.windows(2).all(|w| w[0] <= w[1]);
    ctx.artifacts.section(
        "disintegrate",
        json!({
            "epsilon_fraction": knobs.epsilon_fraction,
            "half_widths": knobs.half_widths,
            "rows": entries,
            "monotone_in_n": monotone,
        }),
    );
    ctx.artifacts.line(format!("  statistic monotone in n: {monotone}"));
    ctx.artifacts.table("disintegration", table);
    if let Some(last) = rows.iter().rev().find(|m| m.label == "perturbed") {
        if let Ok(atoms) = &last.atoms {
            let mut t = Table::new(&["bin", "points", "top_mass", "atoms"]);
            for b in &atoms.bins {
                t.push(vec![b.bin.to_string(), b.points.to_string(), num(b.top_mass), b.atoms.to_string()]);
            }
            ctx.artifacts.table("disintegration_bins", t);
        }
    }
    Ok(())
}

pub fn mme(ctx: &mut Context) -> Result<()> {
    let knobs = ctx.config.mme.clone();
    let spec = ctx.config.spec.clone();
    let probe_seed = ctx.seed("mme");
    let volume_seed = ctx.seed("mme/volume");
    let atom_seed = ctx.seed("mme/atomicity");
    let entropy = topological_entropy_linear(&linearization(&spec)?)?;
    let config = ctx.config;
    ctx.ensure_field()?;
    let field = ctx.field.as_ref().expect("solved");
    let summary = mme_exponents_with(field, knobs.probes, knobs.orbit, probe_seed, knobs.fiber_grid)?;
    let sys = field.system();
    let volume = exponents_from_seed(sys, volume_seed, knobs.volume_orbit)?;
    let atoms = if knobs.atomicity {
        let d = &config.disintegration;
        let base = default_box(sys, d.grid)?.base;
        let b = FoliatedBox::new(base, d.half_widths, d.grid, d.cells)?;
        Some(
            mme_atomicity(field, &b, knobs.probes, knobs.orbit, atom_seed, d.epsilon_fraction * b.center_extent(), d.mass_threshold)
                .map_err(|e| e.to_string()),
        )
    } else {
        None
    };
    let gap = ugibbs_gap(sys, &summary, &volume);

    let mut table = Table::new(&[
        "probe", "y_x", "y_y", "y_z", "resolved", "fiber_distance", "max_transport_error", "missed_fraction", "lambda_u", "lambda_c",
        "lambda_s",
    ]);
    for (i, p) in summary.probes.iter().enumerate() {
        let e = p.exponents.as_ref().map(|e| e.values());
        table.push(vec![
            i.to_string(),
            num(p.y0.0[0]),
            num(p.y0.0[1]),
            num(p.y0.0[2]),
            p.resolved.to_string(),
            num(p.fiber_distance),
            num(p.max_transport_error),
            num(p.missed_fraction),
            opt(e.map(|e| e[0])),
            opt(e.map(|e| e[1])),
            opt(e.map(|e| e[2])),
        ]);
    }
    ctx.artifacts.table("mme_probes", table);
    let lin = sys.linear_exponents();
    ctx.artifacts.line(format!(
        "mme: {} probes × {} steps ({} dropped), entropy of the linearization {entropy:.6}",
        summary.probes.len(),
        summary.orbit_length,
        summary.dropped
    ));
    ctx.artifacts.line(format!(
        "  proxy (u, c) = ({:.5} ± {:.1e}, {:.5} ± {:.1e}); linear (u, c) = ({:.5}, {:.5}); volume λc = {:.5}",
        summary.medians[0], summary.standard_error[0], summary.medians[1], summary.standard_error[1], lin[0], lin[1], volume.lambda_c
    ));
    let mut section = json!({
        "probes": summary.probes.len(),
        "orbit_length": summary.orbit_length,
        "dropped": summary.dropped,
        "medians": summary.medians,
        "standard_error": summary.standard_error,
        "linear": lin,
        "volume": volume.values(),
        "volume_standard_error": volume.standard_error,
        "entropy": entropy,
    });
    if let Some(a) = &atoms {
        section["atomicity"] = match a {
            Ok(r) => json!({"concentration": r.concentration, "atom_count_mode": r.atom_count_mode, "fraction_single": r.fraction_single}),
            Err(e) => json!({"error": e}),
        };
    }
    let result = match gap {
        Ok(g) => {
            ctx.artifacts.line(format!(
                "  Δ = {:+.5} ± {:.1e} (branch {:?}); volume control Δ = {:+.5}",
                g.delta, g.delta_standard_error, g.branch, g.volume_delta
            ));
            section["gap"] = serde_json::to_value(&g)?;
            Ok(())
        }
        Err(e) => {
            ctx.artifacts.line(format!("  gap not evaluated: {e}"));
            section["gap"] = Value::Null;
            Err(e)
        }
    };
    ctx.artifacts.section("mme", section);
    result
}
