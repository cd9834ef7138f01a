//! Lyapunov exponents along orbits and estimates of the invariant bundles.
//!
//! Exponents come from pushing an orthonormal triple through the Jacobian
//! cocycle with modified Gram–Schmidt re-orthonormalization. Bundle directions
//! are computed in eigenchart coefficients, where `Df` is block lower
//! triangular: the strong coefficient is multiplied by `μ_strong` and the
//! (middle, stable) plane is mapped to itself.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::system::DASystem;
use crate::torus::TorusPoint;

/// Iterates discarded before averaging.
pub const BURN_IN: usize = 1000;
/// Number of batches for the batch-means standard error.
pub const N_BLOCKS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub lambda_u: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub n_iterates: usize,
    pub x0: TorusPoint,
    pub seed: u64,
    /// Batch-means standard errors of (u, c, s).
    pub standard_error: [f64; 3],
}

impl ExponentEstimate {
    pub fn values(&self) -> [f64; 3] {
        [self.lambda_u, self.lambda_c, self.lambda_s]
    }

    pub fn sum(&self) -> f64 {
        self.lambda_u + self.lambda_c + self.lambda_s
    }

    pub fn max_se(&self) -> f64 {
        self.standard_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Orthonormalize the columns in place; returns the diagonal of R.
fn gram_schmidt(m: &mut Matrix3<f64>) -> [f64; 3] {
    let mut r = [0.0; 3];
    for j in 0..3 {
        let mut col = m.column(j).into_owned();
        for i in 0..j {
            let qi = m.column(i).into_owned();
            col -= qi * qi.dot(&col);
        }
        let norm = col.norm();
        r[j] = norm;
        m.set_column(j, &(col / norm));
    }
    r
}

/// QR estimate of the three exponents along the orbit of `x0`, after a burn-in
/// of [`BURN_IN`] iterates.
pub fn exponents_qr(sys: &DASystem, x0: &TorusPoint, n: usize, renorm_every: usize) -> Result<ExponentEstimate> {
    exponents_qr_burn(sys, x0, n, renorm_every, BURN_IN)
}

pub fn exponents_qr_burn(
    sys: &DASystem,
    x0: &TorusPoint,
    n: usize,
    renorm_every: usize,
    burn_in: usize,
) -> Result<ExponentEstimate> {
    exponents_along(|x, _| Ok(sys.step_with_jacobian(x)), x0, n, renorm_every, burn_in)
}

/// QR exponents of the cocycle produced by `step`, which maps the current
/// point and iterate index to the next point and the Jacobian at the current
/// one. Lets callers follow corrected pseudo-orbits.
pub fn exponents_along<S>(mut step: S, x0: &TorusPoint, n: usize, renorm_every: usize, burn_in: usize) -> Result<ExponentEstimate>
where
    S: FnMut(&TorusPoint, usize) -> Result<(TorusPoint, Matrix3<f64>)>,
{
    if n < 1000 {
        return Err(LabError::InvalidInput(format!("exponents need n >= 1000 iterates, got {n}")));
    }
    if renorm_every == 0 {
        return Err(LabError::InvalidInput("renorm_every must be >= 1".into()));
    }
    let mut x = *x0;
    let mut q = Matrix3::identity();
    let mut pending = 0usize;
    let block_len = n.div_ceil(N_BLOCKS);
    let mut blocks = vec![[0.0f64; 3]; N_BLOCKS];
    let mut block_steps = vec![0usize; N_BLOCKS];
    let total = burn_in + n;
    for it in 0..total {
        let (next, d) = step(&x, it)?;
        x = next;
        q = d * q;
        pending += 1;
        if pending == renorm_every || it + 1 == total {
            let r = gram_schmidt(&mut q);
            if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) || q.iter().any(|v| !v.is_finite()) {
                return Err(LabError::Overflow {
                    iterate: it,
                    detail: format!("R diagonal {r:?}"),
                });
            }
            if it >= burn_in {
                let counted = pending.min(it + 1 - burn_in);
                let b = ((it - burn_in) / block_len).min(N_BLOCKS - 1);
                for (acc, rv) in blocks[b].iter_mut().zip(r) {
                    // a chunk straddling the burn-in boundary is credited pro rata
                    *acc += rv.ln() * counted as f64 / pending as f64;
                }
                block_steps[b] += counted;
            }
            pending = 0;
        }
    }
    let mut means = [0.0; 3];
    let mut se = [0.0; 3];
    let used: Vec<usize> = (0..N_BLOCKS).filter(|&b| block_steps[b] > 0).collect();
    for i in 0..3 {
        let total_log: f64 = used.iter().map(|&b| blocks[b][i]).sum();
        means[i] = total_log / n as f64;
        let bm: Vec<f64> = used.iter().map(|&b| blocks[b][i] / block_steps[b] as f64).collect();
        let mean_b = bm.iter().sum::<f64>() / bm.len() as f64;
        let var = bm.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>() / (bm.len().max(2) - 1) as f64;
        se[i] = (var / bm.len() as f64).sqrt();
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    Ok(ExponentEstimate {
        lambda_u: means[order[0]],
        lambda_c: means[order[1]],
        lambda_s: means[order[2]],
        n_iterates: n,
        x0: *x0,
        seed: 0,
        standard_error: [se[order[0]], se[order[1]], se[order[2]]],
    })
}

/// Exponents from a start point drawn with the given seed.
pub fn exponents_from_seed(sys: &DASystem, seed: u64, n: usize) -> Result<ExponentEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = DASystem::random_point(&mut rng);
    let mut est = exponents_qr(sys, &x0, n, 1)?;
    est.seed = seed;
    Ok(est)
}

/// Backward orbit `[f^{-len}(x), …, f^{-1}(x)]`.
fn backward_orbit(sys: &DASystem, x: &TorusPoint, len: usize) -> Vec<TorusPoint> {
    let mut pts = Vec::with_capacity(len);
    let mut y = *x;
    for _ in 0..len {
        y = sys.apply_f_inverse(&y);
        pts.push(y);
    }
    pts.reverse();
    pts
}

fn push_plane(sys: &DASystem, pts: &[TorusPoint], start: Vector2<f64>) -> Vector2<f64> {
    let mut v = start;
    for p in pts {
        v = sys.plane_jacobian(p) * v;
        v /= v.norm();
    }
    v
}

/// Center direction at `x` in (middle, stable) chart coefficients, unit norm in
/// the coefficient plane, without the convergence check.
pub fn center_plane_direction(sys: &DASystem, x: &TorusPoint, n_align: usize) -> Vector2<f64> {
    if sys.is_linear() {
        return Vector2::new(1.0, 0.0);
    }
    let pts = backward_orbit(sys, x, n_align);
    push_plane(sys, &pts, Vector2::new(1.0, 0.0))
}

fn plane_to_ambient(sys: &DASystem, v: &Vector2<f64>) -> Vector3<f64> {
    let w = sys.chart.vector(&Vector3::new(0.0, v[0], v[1]));
    w / w.norm()
}

/// Unit ambient center direction without the convergence check, sign chosen so
/// that the middle coefficient is non-negative.
pub fn center_direction_unchecked(sys: &DASystem, x: &TorusPoint, n_align: usize) -> Vector3<f64> {
    let mut v = center_plane_direction(sys, x, n_align);
    if v[0] < 0.0 {
        v = -v;
    }
    plane_to_ambient(sys, &v)
}

/// Unit vector spanning the center bundle at `x`: a direction of the invariant
/// plane pushed forward from `f^{-n_align}(x)`. Fails when the runs of length
/// `n_align − 1` and `n_align` disagree by more than 1e-6 rad.
pub fn center_direction(sys: &DASystem, x: &TorusPoint, n_align: usize) -> Result<Vector3<f64>> {
    if n_align < 2 {
        return Err(LabError::InvalidInput("n_align must be >= 2".into()));
    }
    if sys.is_linear() {
        return Ok(plane_to_ambient(sys, &Vector2::new(1.0, 0.0)));
    }
    let pts = backward_orbit(sys, x, n_align);
    let long = push_plane(sys, &pts, Vector2::new(1.0, 0.0));
    let short = push_plane(sys, &pts[1..], Vector2::new(1.0, 0.0));
    let a = plane_to_ambient(sys, &long);
    let b = plane_to_ambient(sys, &short);
    let angle = a.cross(&b).norm().asin();
    if angle > 1e-6 {
        return Err(LabError::NonConvergence(format!(
            "center direction moved {angle:.2e} rad between n_align={} and {n_align}; raise n_align",
            n_align - 1
        )));
    }
    let sign = if long[0] < 0.0 { -1.0 } else { 1.0 };
    Ok(a * sign)
}

/// Initial alignment length for center directions along traced curves; doubled
/// up to [`TRACE_ALIGN_MAX`] where domination is slow.
pub const TRACE_ALIGN: usize = 40;
pub const TRACE_ALIGN_MAX: usize = 320;

/// [`center_direction`] with the alignment length doubled until the check passes.
pub fn center_direction_adaptive(sys: &DASystem, x: &TorusPoint) -> Result<Vector3<f64>> {
    let mut n_align = TRACE_ALIGN;
    loop {
        match center_direction(sys, x, n_align) {
            Ok(d) => return Ok(d),
            Err(e) if n_align >= TRACE_ALIGN_MAX => return Err(LabError::Tracing(e.to_string())),
            Err(_) => n_align *= 2,
        }
    }
}

/// Polygonal center curve through `x` covering arclength `arc` (half on each
/// side), `steps` segments, midpoint rule. Returns lifted points (continuous in
/// the cover, starting near `x`) ordered along the curve.
pub fn trace_center_curve(sys: &DASystem, x: &TorusPoint, arc: f64, steps: usize) -> Result<Vec<Vector3<f64>>> {
    if !(arc > 0.0) || steps == 0 {
        return Err(LabError::InvalidInput("arc and steps must be positive".into()));
    }
    let h = arc / steps as f64;
    let half = steps / 2;
    let forward = trace_from(sys, x, h, half, 1.0)?;
    let backward = trace_from(sys, x, h, steps - half, -1.0)?;
    let mut pts: Vec<Vector3<f64>> = backward.into_iter().rev().collect();
    pts.pop();
    pts.extend(forward);
    Ok(pts)
}

/// `n` midpoint steps of length `h` along the center field from `x`, in
/// direction `sign` relative to the canonical orientation; includes `x`.
pub fn trace_from(sys: &DASystem, x: &TorusPoint, h: f64, n: usize, sign: f64) -> Result<Vec<Vector3<f64>>> {
    let field = |p: &Vector3<f64>| -> Result<Vector3<f64>> {
        let t = crate::torus::reduce_to_torus(&crate::torus::LiftPoint(*p));
        center_direction_adaptive(sys, &t)
    };
    let mut pts = Vec::with_capacity(n + 1);
    let mut p = x.0;
    let mut prev = field(&p)? * sign;
    pts.push(p);
    for _ in 0..n {
        let mut d = field(&p)?;
        if d.dot(&prev) < 0.0 {
            d = -d;
        }
        let mid = p + d * (0.5 * h);
        let mut dm = field(&mid)?;
        if dm.dot(&d) < 0.0 {
            dm = -dm;
        }
        p += dm * h;
        prev = dm;
        pts.push(p);
    }
    Ok(pts)
}

/// Angles between the center estimates for alignment lengths `1..=max_align`
/// and the estimate at `max_align + 10`; used to measure the domination rate.
pub fn center_alignment_profile(sys: &DASystem, x: &TorusPoint, max_align: usize) -> Vec<f64> {
    let reference = center_direction_unchecked(sys, x, max_align + 10);
    (1..=max_align)
        .map(|m| center_direction_unchecked(sys, x, m).cross(&reference).norm())
        .collect()
}

/// Unstable direction at `x` in chart coefficients (pushed forward from `f^{-n}(x)`).
pub fn unstable_chart_direction(sys: &DASystem, x: &TorusPoint, n_align: usize) -> Vector3<f64> {
    if sys.is_linear() {
        return Vector3::x();
    }
    let pts = backward_orbit(sys, x, n_align);
    let mut v = Vector3::x();
    for p in &pts {
        v = sys.chart_jacobian(p) * v;
        v /= v.norm();
    }
    v
}

/// Stable direction at `x` in (middle, stable) chart coefficients (pulled back from `f^n(x)`).
pub fn stable_plane_direction(sys: &DASystem, x: &TorusPoint, n_align: usize) -> Vector2<f64> {
    if sys.is_linear() {
        return Vector2::new(0.0, 1.0);
    }
    let mut inverses: Vec<Matrix2<f64>> = Vec::with_capacity(n_align);
    let mut y = *x;
    for _ in 0..n_align {
        let p = sys.plane_jacobian(&y);
        inverses.push(p.try_inverse().unwrap_or_else(Matrix2::identity));
        y = sys.apply_f(&y);
    }
    let mut v = Vector2::new(0.0, 1.0);
    for inv in inverses.iter().rev() {
        v = inv * v;
        v /= v.norm();
    }
    v
}

/// Per-iterate growth multipliers `(‖Df^w e‖/‖e‖)^{1/w}` of the unstable,
/// center and stable bundle estimates at `x`.
///
/// Unstable and center vectors are pushed forward. A stable vector cannot be:
/// any error along the center grows by `(μ_c/μ_s)^w`. Its rate is measured by
/// pulling the stable direction at `f^w(x)` back to `x` instead.
pub fn window_rates(sys: &DASystem, x: &TorusPoint, window: usize, n_align: usize) -> [f64; 3] {
    let w = window.max(1);
    let frame = &sys.chart.frame;
    let plane_norm = |v: &Vector2<f64>| (frame * Vector3::new(0.0, v[0], v[1])).norm();
    let mut vu = unstable_chart_direction(sys, x, n_align);
    let mut vc = center_plane_direction(sys, x, n_align);
    let nu0 = (frame * vu).norm();
    let nc0 = plane_norm(&vc);
    let (mut lu, mut lc) = (0.0f64, 0.0f64);
    let mut plane_steps = Vec::with_capacity(w);
    let mut y = *x;
    for _ in 0..w {
        let j = sys.chart_jacobian(&y);
        let p = Matrix2::new(j[(1, 1)], j[(1, 2)], j[(2, 1)], j[(2, 2)]);
        plane_steps.push(p);
        vu = j * vu;
        let s = vu.norm();
        lu += s.ln();
        vu /= s;
        vc = p * vc;
        let s = vc.norm();
        lc += s.ln();
        vc /= s;
        y = sys.apply_f(&y);
    }
    lu += (frame * vu).norm().ln() - nu0.ln();
    lc += plane_norm(&vc).ln() - nc0.ln();

    let mut vs = stable_plane_direction(sys, &y, n_align);
    let ns_end = plane_norm(&vs);
    let mut ls = 0.0f64;
    for p in plane_steps.iter().rev() {
        vs = p.try_inverse().unwrap_or_else(Matrix2::identity) * vs;
        let s = vs.norm();
        ls += s.ln();
        vs /= s;
    }
    // ls is the log growth from f^w(x) back to x; forward growth is its negative
    let ls_forward = -(ls + plane_norm(&vs).ln() - ns_end.ln());
    [(lu / w as f64).exp(), (lc / w as f64).exp(), (ls_forward / w as f64).exp()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemirigidityRow {
    pub estimate: ExponentEstimate,
    pub unstable_ok: bool,
    pub stable_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemirigidityReport {
    /// Log-moduli of the linearization's eigenvalues as (u, c, s).
    pub linear: [f64; 3],
    pub rows: Vec<SemirigidityRow>,
    pub all_ok: bool,
    /// Largest |λ^u(f) − λ^u(A)| over the samples.
    pub max_unstable_gap: f64,
    pub median_center: f64,
}

/// Runs [`exponents_qr`] from `samples` seeded start points and checks
/// `λ^u(f) ≤ λ^u(A) + 3σ` and `λ^s(f) ≥ λ^s(A) − 3σ` for each.
pub fn check_semirigidity(sys: &DASystem, samples: usize, n: usize, base_seed: u64) -> Result<SemirigidityReport> {
    let linear = sys.linear_exponents();
    let estimates: Vec<Result<ExponentEstimate>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| exponents_from_seed(sys, base_seed.wrapping_add(i), n))
        .collect();
    let mut rows = Vec::with_capacity(samples);
    for e in estimates {
        let e = e?;
        // the 1e-12 floor covers the linear case, where the batch errors vanish
        let unstable_ok = e.lambda_u <= linear[0] + 3.0 * e.standard_error[0] + 1e-12;
        let stable_ok = e.lambda_s >= linear[2] - 3.0 * e.standard_error[2] - 1e-12;
        rows.push(SemirigidityRow { estimate: e, unstable_ok, stable_ok });
    }
    let all_ok = rows.iter().all(|r| r.unstable_ok && r.stable_ok);
    let max_unstable_gap = rows.iter().map(|r| (r.estimate.lambda_u - linear[0]).abs()).fold(0.0, f64::max);
    let mut centers: Vec<f64> = rows.iter().map(|r| r.estimate.lambda_c).collect();
    Ok(SemirigidityReport {
        linear,
        rows,
        all_ok,
        max_unstable_gap,
        median_center: median(&mut centers),
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::DASpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gram_schmidt_orthonormalizes() {
        let mut m = Matrix3::new(2.0, 1.0, 0.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0);
        let det = m.determinant();
        let r = gram_schmidt(&mut m);
        assert_abs_diff_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-14);
        assert_abs_diff_eq!(r.iter().product::<f64>(), det.abs(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_short_orbits() {
        let sys = DASystem::new(&DASpec::linear(5, true)).unwrap();
        let x = TorusPoint::new(0.1, 0.2, 0.3);
        assert!(exponents_qr(&sys, &x, 0, 1).is_err());
        assert!(exponents_qr(&sys, &x, 5000, 0).is_err());
    }

    #[test]
    fn deferred_renormalization_agrees_in_linear_case() {
        let sys = DASystem::new(&DASpec::linear(5, true)).unwrap();
        let x = TorusPoint::new(0.1, 0.2, 0.3);
        let a = exponents_qr(&sys, &x, 4000, 1).unwrap();
        let b = exponents_qr(&sys, &x, 4000, 4).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(*p, q, epsilon = 1e-9);
        }
    }

    #[test]
    fn linear_window_rates_are_eigenvalues() {
        let sys = DASystem::new(&DASpec::linear(5, true)).unwrap();
        let r = window_rates(&sys, &TorusPoint::new(0.4, 0.1, 0.9), 5, 10);
        let v = sys.chart_values();
        for i in 0..3 {
            assert_abs_diff_eq!(r[i], v[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
