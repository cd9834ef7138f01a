//! Diagnostics for the measure of maximal entropy through fibers of `h`.
//!
//! `μ_f` is the lift of Lebesgue measure through the semi-conjugacy
//! (`h_* μ_f = m`). A proxy `μ_f`-orbit starts at a point of the fiber over a
//! Lebesgue-random `y` and follows `f`, and after every step it is moved back
//! onto the fiber over the next point `A^j y` of the linear orbit. Without that
//! correction the numerical orbit leaves the fiber within a few dozen steps
//! (the fibers sit where the center expands) and the averages drift to the
//! volume measure.
//!
//! Corrections are made in eigenchart coordinates: the strong coefficient of
//! `h` equals that of the point exactly, and the stable and center
//! coefficients are matched by bracketed root searches along `e_stable` and
//! along the center direction.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disintegration::{accumulate_box, atom_count, AtomReport, FoliatedBox};
use crate::error::{LabError, Result};
use crate::lyapunov::{center_direction_adaptive, exponents_along, median, ExponentEstimate};
use crate::semiconj::DisplacementField;
use crate::system::DASystem;
use crate::torus::{eigen_splitting, reduce_to_torus, torus_delta, IntMatrix3, LiftPoint, Spectrum, TorusPoint};

pub const DEFAULT_PROBES: usize = 32;
pub const DEFAULT_ORBIT: usize = 100_000;
pub const DEFAULT_FIBER_GRID: usize = 32;
/// Burn-in of the QR frame along a proxy orbit; the start is already on a fiber.
pub const PROXY_BURN_IN: usize = 100;
/// A fiber counts as resolved when `|h(x) − y|` is within this multiple of the field residual.
pub const FIBER_TOLERANCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberPoint {
    pub x: TorusPoint,
    /// `|h(x) − y|` in the torus metric.
    pub distance: f64,
    pub resolved: bool,
}

fn fiber_tolerance(field: &DisplacementField) -> f64 {
    // exact fields (amplitude 0) still allow for rounding
    (FIBER_TOLERANCE_FACTOR * field.residual).max(1e-9)
}

/// `y − h(x)` in chart coefficients.
fn chart_gap(field: &DisplacementField, x: &TorusPoint, y: &TorusPoint) -> Vector3<f64> {
    let hx = field.evaluate_h(x);
    field.system().chart.coefficients(&torus_delta(&y.0, &hx.0))
}

fn shift(x: &TorusPoint, v: &Vector3<f64>) -> TorusPoint {
    reduce_to_torus(&LiftPoint(x.0 + v))
}

/// Root of a decreasing function `g` along `t`: expand a bracket from `t = 0`
/// by doubling (up to `|t| = 0.5`), then close it by the Illinois rule.
fn bracket_root(g: impl Fn(f64) -> f64, tol: f64) -> Option<f64> {
    let g0 = g(0.0);
    if g0.abs() <= tol {
        return Some(0.0);
    }
    let dir = g0.signum();
    let (mut a, mut ga) = (0.0, g0);
    let mut step = g0.abs().max(1e-6);
    let (mut b, mut gb);
    loop {
        if step > 0.5 {
            return None;
        }
        b = dir * step;
        gb = g(b);
        if gb.signum() != ga.signum() || gb == 0.0 {
            break;
        }
        a = b;
        ga = gb;
        step *= 2.0;
    }
    let mut side = 0i8;
    for _ in 0..80 {
        let t = (a * gb - b * ga) / (gb - ga);
        let gt = g(t);
        if gt.abs() <= tol || (b - a).abs() < 1e-15 {
            return Some(t);
        }
        if gt.signum() == ga.signum() {
            a = t;
            ga = gt;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = t;
            gb = gt;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    Some(0.5 * (a + b))
}

/// Slide `x` along the line through it in direction `d` (ambient, oriented so
/// that chart coefficient `k` of `h` increases) until coefficient `k` of
/// `y − h(x)` vanishes.
fn match_along(field: &DisplacementField, x: &TorusPoint, y: &TorusPoint, d: Vector3<f64>, k: usize, tol: f64) -> TorusPoint {
    let g = |t: f64| chart_gap(field, &shift(x, &(d * t)), y)[k];
    match bracket_root(g, tol) {
        Some(t) => shift(x, &(d * t)),
        None => *x,
    }
}

/// Local refinement of a fiber candidate in chart coordinates: the strong
/// coefficient exactly, then the stable coefficient along `e_stable` (which
/// selects the center leaf, `h_s` being constant on leaves), then the center
/// coefficient along the center direction.
pub fn refine_fiber(field: &DisplacementField, x: &TorusPoint, y: &TorusPoint, rounds: usize) -> FiberPoint {
    let sys = field.system();
    let tol = fiber_tolerance(field);
    let inner = tol * 1e-3;
    let mut x = *x;
    let mut best = (x, chart_gap(field, &x, y));
    let dist = |gap: &Vector3<f64>| sys.chart.vector(gap).norm();
    let e_s = sys.chart.direction(crate::torus::EigenChart::STABLE);
    for _ in 0..rounds {
        let gap = chart_gap(field, &x, y);
        x = shift(&x, &sys.chart.vector(&Vector3::new(gap[0], 0.0, 0.0)));
        x = match_along(field, &x, y, e_s, 2, inner);
        if let Ok(mut d) = center_direction_adaptive(sys, &x) {
            if sys.chart.coefficients(&d)[1] < 0.0 {
                d = -d;
            }
            x = match_along(field, &x, y, d, 1, inner);
        }
        let gap = chart_gap(field, &x, y);
        if dist(&gap) < dist(&best.1) {
            best = (x, gap);
        }
        if dist(&gap) <= inner {
            break;
        }
    }
    let distance = dist(&best.1);
    FiberPoint { x: best.0, distance, resolved: distance <= tol }
}

/// Point `x` minimizing `|h(x) − y|`: scan of the `grid_res³` lattice, then
/// chart-coordinate refinement from the best few candidates.
///
/// `u` is rough along the strong and stable directions, so the local
/// refinement only converges from nearby starts. When it fails, the search is
/// repeated over `A^{-K} y` and the result is carried forward `K` steps with
/// [`transport_step`], which pulls it onto the fiber over `y`.
pub fn fiber_point(field: &DisplacementField, y: &TorusPoint, grid_res: usize) -> Result<FiberPoint> {
    if grid_res < 2 {
        return Err(LabError::InvalidInput("grid_res must be >= 2".into()));
    }
    let mut best = local_fiber_search(field, y, grid_res);
    for k in PULL_IN_STEPS {
        if best.resolved {
            break;
        }
        let sys = field.system();
        let mut yk = *y;
        for _ in 0..k {
            yk = sys.apply_linear_inverse(&yk);
        }
        let mut x = local_fiber_search(field, &yk, grid_res).x;
        for _ in 0..k {
            yk = sys.apply_linear(&yk);
            x = transport_step(field, &x, &yk).x;
        }
        let fp = refine_fiber(field, &x, y, 2);
        if fp.distance < best.distance {
            best = fp;
        }
    }
    Ok(best)
}

/// Transport lengths tried by [`fiber_point`] when the direct search fails.
const PULL_IN_STEPS: [usize; 8] = [30, 45, 60, 75, 90, 120, 150, 200];

fn local_fiber_search(field: &DisplacementField, y: &TorusPoint, grid_res: usize) -> FiberPoint {
    let g = grid_res as f64;
    let node = |idx: usize| {
        TorusPoint::new(
            (idx / (grid_res * grid_res)) as f64 / g,
            ((idx / grid_res) % grid_res) as f64 / g,
            (idx % grid_res) as f64 / g,
        )
    };
    let mut scored: Vec<(f64, usize)> = (0..grid_res.pow(3))
        .into_par_iter()
        .map(|idx| (torus_delta(&field.evaluate_h(&node(idx)).0, &y.0).norm(), idx))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best: Option<FiberPoint> = None;
    for &(_, idx) in scored.iter().take(4) {
        let fp = refine_fiber(field, &node(idx), y, 8);
        if best.map_or(true, |b| fp.distance < b.distance) {
            best = Some(fp);
        }
        if fp.resolved {
            break;
        }
    }
    best.expect("at least one candidate")
}

/// One step of a proxy orbit: `f(x)` moved onto the fiber over `y_next`.
pub fn transport_step(field: &DisplacementField, x: &TorusPoint, y_next: &TorusPoint) -> FiberPoint {
    let fx = field.system().apply_f(x);
    refine_fiber(field, &fx, y_next, 2)
}

/// Steps over which the transport error is held to the fiber tolerance.
pub const MONITORED_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub y0: TorusPoint,
    pub x0: TorusPoint,
    pub resolved: bool,
    pub fiber_distance: f64,
    /// Largest `|h(x_j) − A^j y0|` over the first [`MONITORED_STEPS`] steps.
    pub max_transport_error: f64,
    /// Fraction of all steps whose corrected point missed the fiber tolerance.
    pub missed_fraction: f64,
    pub exponents: Option<ExponentEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmeSummary {
    pub probes: Vec<ProbeResult>,
    pub orbit_length: usize,
    /// Medians over resolved probes of (λ^u, λ^c, λ^s).
    pub medians: [f64; 3],
    /// Standard errors of the medians from the spread across probes.
    pub standard_error: [f64; 3],
    pub dropped: usize,
}

fn lebesgue_targets(probes: usize, seed: u64) -> Vec<TorusPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..probes).map(|_| DASystem::random_point(&mut rng)).collect()
}

fn run_probe(field: &DisplacementField, y0: &TorusPoint, n: usize, grid_res: usize) -> Result<ProbeResult> {
    let sys = field.system();
    let start = fiber_point(field, y0, grid_res)?;
    let mut result = ProbeResult {
        y0: *y0,
        x0: start.x,
        resolved: start.resolved,
        fiber_distance: start.distance,
        max_transport_error: start.distance,
        missed_fraction: 0.0,
        exponents: None,
    };
    if !start.resolved {
        return Ok(result);
    }
    let mut y = *y0;
    let mut worst: f64 = start.distance;
    let mut missed = 0usize;
    let mut steps = 0usize;
    let est = exponents_along(
        |x, it| {
            y = sys.apply_linear(&y);
            let next = transport_step(field, x, &y);
            if it < MONITORED_STEPS {
                worst = worst.max(next.distance);
            }
            missed += usize::from(!next.resolved);
            steps += 1;
            Ok((next.x, sys.jacobian(x).matrix))
        },
        &start.x,
        n,
        1,
        PROXY_BURN_IN,
    )?;
    result.max_transport_error = worst;
    result.missed_fraction = missed as f64 / steps.max(1) as f64;
    result.exponents = Some(est);
    Ok(result)
}

/// Exponents along proxy `μ_f`-orbits started over `probes` Lebesgue-random points.
pub fn mme_exponents(field: &DisplacementField, probes: usize, n: usize, seed: u64) -> Result<MmeSummary> {
    mme_exponents_with(field, probes, n, seed, DEFAULT_FIBER_GRID)
}

pub fn mme_exponents_with(field: &DisplacementField, probes: usize, n: usize, seed: u64, grid_res: usize) -> Result<MmeSummary> {
    if probes < 10 {
        return Err(LabError::InvalidInput(format!("need at least 10 probes, got {probes}")));
    }
    let targets = lebesgue_targets(probes, seed);
    let results: Vec<ProbeResult> = targets
        .par_iter()
        .map(|y| run_probe(field, y, n, grid_res))
        .collect::<Result<_>>()?;
    let good: Vec<&ExponentEstimate> = results.iter().filter_map(|r| r.exponents.as_ref()).collect();
    if good.is_empty() {
        return Err(LabError::NonConvergence("no probe produced a resolved fiber orbit".into()));
    }
    let mut medians = [0.0; 3];
    let mut se = [0.0; 3];
    for i in 0..3 {
        let mut v: Vec<f64> = good.iter().map(|e| e.values()[i]).collect();
        medians[i] = median(&mut v);
        se[i] = median_standard_error(&v);
    }
    Ok(MmeSummary {
        dropped: results.len() - good.len(),
        probes: results,
        orbit_length: n,
        medians,
        standard_error: se,
    })
}

/// `1.2533 · sd / √m`, the large-sample standard error of a median.
pub fn median_standard_error(v: &[f64]) -> f64 {
    let m = v.len() as f64;
    if m < 2.0 {
        return f64::INFINITY;
    }
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (std::f64::consts::PI / 2.0).sqrt() * (var / m).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapBranch {
    /// `λ^c_{μ_f} > λ^c(A)`.
    Center,
    /// `λ^u_{μ_f} > λ^u(A)`.
    Unstable,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UGibbsReport {
    pub linear_unstable: f64,
    pub linear_center: f64,
    pub proxy_unstable: f64,
    pub proxy_center: f64,
    /// `(λ^u-proxy + λ^c-proxy) − (λ^u(A) + λ^c(A))`.
    pub delta: f64,
    pub delta_standard_error: f64,
    pub branch: GapBranch,
    /// Unstable proxy equal to `λ^u(A)` within 3σ forces the center branch.
    pub branch_consistent: bool,
    /// The same gap computed from volume-orbit exponents.
    pub volume_delta: f64,
    pub volume_delta_standard_error: f64,
}

/// Gap between proxy `μ_f` exponents and the linear ones; requires the
/// volume center exponent to be below the linear one.
pub fn ugibbs_gap(sys: &DASystem, mme: &MmeSummary, volume: &ExponentEstimate) -> Result<UGibbsReport> {
    let lin = sys.linear_exponents();
    let (lu, lc) = (lin[0], lin[1]);
    let vol_se_c = volume.standard_error[1];
    if sys.is_linear() || !(volume.lambda_c + 3.0 * vol_se_c < lc) {
        return Err(LabError::HypothesisNotMet(format!(
            "volume center exponent {:.5} (se {:.1e}) is not below the linear value {lc:.5}",
            volume.lambda_c, vol_se_c
        )));
    }
    let [pu, pc, _] = mme.medians;
    let [su, sc, _] = mme.standard_error;
    let delta = (pu + pc) - (lu + lc);
    let delta_se = (su * su + sc * sc).sqrt();
    let branch = if pc > lc + 3.0 * sc {
        GapBranch::Center
    } else if pu > lu + 3.0 * su {
        GapBranch::Unstable
    } else {
        GapBranch::Undetermined
    };
    let branch_consistent = (pu - lu).abs() > 3.0 * su || branch == GapBranch::Center;
    let [vu, vc, _] = volume.standard_error;
    Ok(UGibbsReport {
        linear_unstable: lu,
        linear_center: lc,
        proxy_unstable: pu,
        proxy_center: pc,
        delta,
        delta_standard_error: delta_se,
        branch,
        branch_consistent,
        volume_delta: (volume.lambda_u + volume.lambda_c) - (lu + lc),
        volume_delta_standard_error: (vu * vu + vc * vc).sqrt(),
    })
}

/// Sum of `log |λ|` over eigenvalues of modulus above 1.
pub fn topological_entropy_linear(m: &IntMatrix3) -> Result<f64> {
    let values: Vec<f64> = match eigen_splitting(m) {
        Spectrum::Real(s) => s.values.to_vec(),
        Spectrum::Repeated { values } => values.to_vec(),
        Spectrum::Complex { .. } => return Err(LabError::ComplexSpectrum),
    };
    if values.iter().any(|v| (v.abs() - 1.0).abs() < 1e-12) {
        log::warn!("matrix has an eigenvalue of modulus 1; it is not hyperbolic");
    }
    Ok(values.iter().filter(|v| v.abs() > 1.0).map(|v| v.abs().ln()).sum())
}

/// Disintegration statistics of the proxy `μ_f` samples inside a box.
pub fn mme_atomicity(
    field: &DisplacementField,
    b: &FoliatedBox,
    probes: usize,
    n: usize,
    seed: u64,
    epsilon: f64,
    mass_threshold: f64,
) -> Result<AtomReport> {
    let targets = lebesgue_targets(probes, seed);
    let orbits: Vec<Vec<TorusPoint>> = targets
        .par_iter()
        .map(|y0| -> Result<Vec<TorusPoint>> {
            let start = fiber_point(field, y0, DEFAULT_FIBER_GRID)?;
            let mut out = Vec::with_capacity(n);
            if !start.resolved {
                return Ok(out);
            }
            let (mut x, mut y) = (start.x, *y0);
            for _ in 0..n {
                y = field.system().apply_linear(&y);
                x = transport_step(field, &x, &y).x;
                out.push(x);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let hist = accumulate_box(field.system(), b, orbits.into_iter().flatten())?;
    atom_count(&hist, epsilon, mass_threshold)
}
