//! Grid solver for the semi-conjugacy `h ∘ f = A ∘ h` and the geometric
//! diagnostics built on `h`.
//!
//! Writing `h = id + u` on the cover and `p(x) = f̃(x) − A x`, the equation
//! reads `A u(x) = p(x) + u(f x)`. In eigenchart coefficients `A` is diagonal,
//! so each coefficient is its own scalar equation:
//!
//! * expanding coefficients: `u_i = μ_i⁻¹ (p_i + u_i ∘ f)`,
//! * contracting coefficient: `u_s = μ_s · u_s ∘ f⁻¹ − p_s ∘ f⁻¹`,
//!
//! both contractions in the sup norm. The grid values are iterated with
//! periodic trilinear interpolation.
//!
//! `u` is only Hölder along the strong direction (exponent about
//! `log μ_mid / log μ_strong`), which caps the accuracy of plain interpolation.
//! Evaluation therefore unrolls the equation `refine_steps` times along the
//! exact orbit before interpolating: the defect of the evaluated `h` is the
//! grid defect at `f^m x` damped by `μ_mid^{-m}` (resp. `μ_s^m`). The plain
//! interpolant is still available and its defect is reported separately.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lyapunov::trace_center_curve;
use crate::system::{DASpec, DASystem};
use crate::torus::{reduce_to_torus, torus_delta, wrap_unit, LiftPoint, TorusPoint};

/// Orbit steps unrolled by [`DisplacementField::evaluate_h`].
pub const DEFAULT_REFINE_STEPS: usize = 16;
/// Size of the out-of-sample probe set used for the residual.
pub const DEFAULT_PROBES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub grid_size: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub refine_steps: usize,
    pub probes: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            grid_size: 64,
            tol: 1e-4,
            max_iter: 200,
            refine_steps: DEFAULT_REFINE_STEPS,
            probes: DEFAULT_PROBES,
        }
    }
}

/// Grid-sampled periodic displacement `u` with `h = id + u`.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    pub spec: DASpec,
    pub grid_size: usize,
    /// Node values in eigenchart coefficients (strong, middle, stable); node
    /// `(i, j, l)` sits at `(i, j, l)/N` and is stored at `(i·N + j)·N + l`.
    pub values: Vec<Vector3<f64>>,
    pub refine_steps: usize,
    /// Sup over the probe set of `|h(f x) − A h(x)|` for the refined evaluation.
    pub residual: f64,
    /// The same defect for plain trilinear interpolation.
    pub raw_residual: f64,
    /// Empirical `sup |u|` (ambient norm) over nodes and probes.
    pub sup_norm: f64,
    pub iterations: usize,
    /// Sup-norm change of the node values per iteration.
    pub change_log: Vec<f64>,
    system: DASystem,
}

/// Serializable summary written as the first line of a persisted field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub format: String,
    pub spec: DASpec,
    pub grid_size: usize,
    pub refine_steps: usize,
    pub residual: f64,
    pub raw_residual: f64,
    pub sup_norm: f64,
    pub iterations: usize,
    pub change_log: Vec<f64>,
}

const FIELD_FORMAT: &str = "dalab-displacement-field/1";

/// Periodic trilinear interpolation of vector node values.
fn interpolate(values: &[Vector3<f64>], n: usize, x: &TorusPoint) -> Vector3<f64> {
    let g = x.0 * n as f64;
    let i0 = [g[0].floor(), g[1].floor(), g[2].floor()];
    let t = [g[0] - i0[0], g[1] - i0[1], g[2] - i0[2]];
    let idx = |v: f64, d: usize| -> usize { ((v as i64 + d as i64).rem_euclid(n as i64)) as usize };
    let mut acc = Vector3::zeros();
    for di in 0..2 {
        let wi = if di == 0 { 1.0 - t[0] } else { t[0] };
        let ii = idx(i0[0], di);
        for dj in 0..2 {
            let wj = if dj == 0 { 1.0 - t[1] } else { t[1] };
            let jj = idx(i0[1], dj);
            for dl in 0..2 {
                let wl = if dl == 0 { 1.0 - t[2] } else { t[2] };
                let ll = idx(i0[2], dl);
                acc += values[(ii * n + jj) * n + ll] * (wi * wj * wl);
            }
        }
    }
    acc
}

fn node_point(n: usize, index: usize) -> TorusPoint {
    let l = index % n;
    let j = (index / n) % n;
    let i = index / (n * n);
    TorusPoint::new(i as f64 / n as f64, j as f64 / n as f64, l as f64 / n as f64)
}

/// Low-discrepancy points of the torus (additive recurrence on the plastic number).
pub fn probe_points(count: usize, offset: f64) -> Vec<TorusPoint> {
    let g = 1.324_717_957_244_746_f64;
    let alpha = [1.0 / g, 1.0 / (g * g), 1.0 / (g * g * g)];
    (0..count)
        .map(|i| {
            let k = (i + 1) as f64;
            TorusPoint::new(
                wrap_unit(offset + k * alpha[0]),
                wrap_unit(offset + k * alpha[1]),
                wrap_unit(offset + k * alpha[2]),
            )
        })
        .collect()
}

/// `p(x) = f̃(x) − A x` in chart coefficients.
fn forcing(sys: &DASystem, x: &TorusPoint) -> Vector3<f64> {
    sys.chart.coefficients(&sys.displacement(&sys.apply_linear(x)))
}

/// Solve with default refinement and probe count.
pub fn solve_semiconjugacy(spec: &DASpec, grid_size: usize, tol: f64, max_iter: usize) -> Result<DisplacementField> {
    solve_with(spec, &SolveOptions { grid_size, tol, max_iter, ..SolveOptions::default() })
}

pub fn solve_with(spec: &DASpec, options: &SolveOptions) -> Result<DisplacementField> {
    let sys = DASystem::new(spec)?;
    let n = options.grid_size;
    if n < 16 {
        return Err(LabError::InvalidInput(format!("grid size must be >= 16, got {n}")));
    }
    if !(options.tol > 0.0) {
        return Err(LabError::InvalidInput("tol must be positive".into()));
    }
    let mu = sys.chart_values();
    let expanding = [mu[0].abs() > 1.0, mu[1].abs() > 1.0, mu[2].abs() > 1.0];
    let total = n * n * n;
    struct Node {
        forward: TorusPoint,
        backward: TorusPoint,
        p_here: Vector3<f64>,
        p_back: Vector3<f64>,
    }
    let nodes: Vec<Node> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let x = node_point(n, idx);
            let backward = sys.apply_f_inverse(&x);
            Node {
                forward: sys.apply_f(&x),
                backward,
                p_here: forcing(&sys, &x),
                p_back: forcing(&sys, &backward),
            }
        })
        .collect();

    let mut values = vec![Vector3::zeros(); total];
    let mut change_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let next: Vec<Vector3<f64>> = nodes
            .par_iter()
            .map(|node| {
                let fwd = interpolate(&values, n, &node.forward);
                let bwd = interpolate(&values, n, &node.backward);
                let mut out = Vector3::zeros();
                for i in 0..3 {
                    out[i] = if expanding[i] {
                        (node.p_here[i] + fwd[i]) / mu[i]
                    } else {
                        mu[i] * bwd[i] - node.p_back[i]
                    };
                }
                out
            })
            .collect();
        let change = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        values = next;
        change_log.push(change);
        if change < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let rate = contraction_rate(&change_log);
        return Err(LabError::NonConvergence(format!(
            "semi-conjugacy solver: sup-change {:.3e} after {} iterations (observed rate {rate:.3}, expected {:.3})",
            change_log.last().copied().unwrap_or(f64::NAN),
            iterations,
            expected_rate(&sys)
        )));
    }

    let mut field = DisplacementField {
        spec: spec.clone(),
        grid_size: n,
        values,
        refine_steps: options.refine_steps,
        residual: 0.0,
        raw_residual: 0.0,
        sup_norm: 0.0,
        iterations,
        change_log,
        system: sys,
    };
    field.assess(options.probes);
    Ok(field)
}

/// Geometric-mean ratio of successive sup-changes over the logged iterations
/// (ignoring the first, which reflects the starting guess).
pub fn contraction_rate(log: &[f64]) -> f64 {
    let ratios: Vec<f64> = log
        .windows(2)
        .skip(1)
        .filter(|w| w[0] > 1e-300 && w[1] > 1e-300)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    if ratios.is_empty() {
        return 0.0;
    }
    (ratios.iter().sum::<f64>() / ratios.len() as f64).exp()
}

/// Largest per-iterate ratio of successive sup-changes after the first step.
pub fn worst_contraction_ratio(log: &[f64]) -> f64 {
    log.windows(2)
        .skip(1)
        .filter(|w| w[0] > 1e-13)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

/// `max(μ_s, 1/μ_mid)`, the sup-norm contraction factor of the solver.
pub fn expected_rate(sys: &DASystem) -> f64 {
    let mu = sys.chart_values();
    let mut rate: f64 = 0.0;
    for m in mu.iter() {
        let m = m.abs();
        rate = rate.max(if m > 1.0 { 1.0 / m } else { m });
    }
    rate
}

impl DisplacementField {
    pub fn system(&self) -> &DASystem {
        &self.system
    }

    /// Plain trilinear interpolant of the node values (chart coefficients).
    pub fn interpolated(&self, x: &TorusPoint) -> Vector3<f64> {
        interpolate(&self.values, self.grid_size, x)
    }

    /// `u(x)` in chart coefficients, unrolled `steps` times along the orbit.
    pub fn coefficients_with(&self, x: &TorusPoint, steps: usize) -> Vector3<f64> {
        let sys = &self.system;
        if sys.is_linear() {
            return Vector3::zeros();
        }
        if steps == 0 {
            return self.interpolated(x);
        }
        let mu = sys.chart_values();
        let mut out: Vector3<f64> = Vector3::zeros();
        // expanding coefficients: forward orbit
        let mut y = *x;
        let mut acc: Vector3<f64> = Vector3::zeros();
        let mut scale = Vector3::repeat(1.0);
        for _ in 0..steps {
            let p = forcing(sys, &y);
            for i in 0..3 {
                scale[i] /= mu[i];
                acc[i] += scale[i] * p[i];
            }
            y = sys.apply_f(&y);
        }
        let tail_fwd = self.interpolated(&y);
        // contracting coefficient: backward orbit
        let mut z = *x;
        let mut acc_b: Vector3<f64> = Vector3::zeros();
        let mut scale_b = Vector3::repeat(1.0);
        for _ in 0..steps {
            z = sys.apply_f_inverse(&z);
            let p = forcing(sys, &z);
            for i in 0..3 {
                acc_b[i] -= scale_b[i] * p[i];
                scale_b[i] *= mu[i];
            }
        }
        let tail_bwd = self.interpolated(&z);
        for i in 0..3 {
            out[i] = if mu[i].abs() > 1.0 {
                acc[i] + scale[i] * tail_fwd[i]
            } else {
                acc_b[i] + scale_b[i] * tail_bwd[i]
            };
        }
        out
    }

    pub fn coefficients(&self, x: &TorusPoint) -> Vector3<f64> {
        self.coefficients_with(x, self.refine_steps)
    }

    /// Ambient displacement `u(x) = h̃(x) − x`.
    pub fn displacement(&self, x: &TorusPoint) -> Vector3<f64> {
        self.system.chart.vector(&self.coefficients(x))
    }

    pub fn evaluate_h(&self, x: &TorusPoint) -> TorusPoint {
        reduce_to_torus(&LiftPoint(x.0 + self.displacement(x)))
    }

    /// `h` with plain interpolation (no orbit unrolling).
    pub fn evaluate_h_raw(&self, x: &TorusPoint) -> TorusPoint {
        reduce_to_torus(&LiftPoint(x.0 + self.system.chart.vector(&self.interpolated(x))))
    }

    pub fn h_lift(&self, x: &LiftPoint) -> LiftPoint {
        LiftPoint(x.0 + self.displacement(&reduce_to_torus(x)))
    }

    /// `|h(f x) − A h(x)|` in the torus metric.
    pub fn defect(&self, x: &TorusPoint) -> f64 {
        let sys = &self.system;
        let lhs = self.evaluate_h(&sys.apply_f(x));
        let rhs = sys.apply_linear(&self.evaluate_h(x));
        torus_delta(&lhs.0, &rhs.0).norm()
    }

    pub fn raw_defect(&self, x: &TorusPoint) -> f64 {
        let sys = &self.system;
        let lhs = self.evaluate_h_raw(&sys.apply_f(x));
        let rhs = sys.apply_linear(&self.evaluate_h_raw(x));
        torus_delta(&lhs.0, &rhs.0).norm()
    }

    /// Recompute residuals and sup-norm on `count` low-discrepancy probes.
    pub fn assess(&mut self, count: usize) {
        if self.system.is_linear() {
            self.residual = 0.0;
            self.raw_residual = 0.0;
            self.sup_norm = 0.0;
            return;
        }
        let probes = probe_points(count, 0.5);
        let stats: Vec<(f64, f64, f64)> = probes
            .par_iter()
            .map(|x| (self.defect(x), self.raw_defect(x), self.displacement(x).norm()))
            .collect();
        self.residual = stats.iter().map(|s| s.0).fold(0.0, f64::max);
        self.raw_residual = stats.iter().map(|s| s.1).fold(0.0, f64::max);
        let probe_sup = stats.iter().map(|s| s.2).fold(0.0, f64::max);
        let frame = &self.system.chart.frame;
        let node_sup = self.values.iter().map(|v| (frame * v).norm()).fold(0.0, f64::max);
        self.sup_norm = probe_sup.max(node_sup);
    }

    pub fn header(&self) -> FieldHeader {
        FieldHeader {
            format: FIELD_FORMAT.to_string(),
            spec: self.spec.clone(),
            grid_size: self.grid_size,
            refine_steps: self.refine_steps,
            residual: self.residual,
            raw_residual: self.raw_residual,
            sup_norm: self.sup_norm,
            iterations: self.iterations,
            change_log: self.change_log.clone(),
        }
    }

    /// Writes `# <json header>`, a CSV header line, and one row per node.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# ");
        out.push_str(&serde_json::to_string(&self.header())?);
        out.push('\n');
        out.push_str("i,j,l,u_strong,u_mid,u_stable\n");
        let n = self.grid_size;
        for (idx, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{},{}", idx / (n * n), (idx / n) % n, idx % n, v[0], v[1], v[2]);
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let first = lines.next().ok_or_else(|| LabError::InvalidInput("empty field file".into()))??;
        let json = first
            .strip_prefix("# ")
            .ok_or_else(|| LabError::InvalidInput("field file must start with '# {header}'".into()))?;
        let header: FieldHeader = serde_json::from_str(json)?;
        if header.format != FIELD_FORMAT {
            return Err(LabError::InvalidInput(format!("unknown field format {:?}", header.format)));
        }
        let _columns = lines.next();
        let n = header.grid_size;
        let mut values = vec![Vector3::zeros(); n * n * n];
        let mut seen = 0usize;
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || LabError::InvalidInput(format!("malformed field row {}", row + 3));
            if parts.len() != 6 {
                return Err(bad());
            }
            let ijk: Vec<usize> = parts[..3].iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            let vals: Vec<f64> = parts[3..].iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            if ijk.iter().any(|&c| c >= n) {
                return Err(bad());
            }
            values[(ijk[0] * n + ijk[1]) * n + ijk[2]] = Vector3::new(vals[0], vals[1], vals[2]);
            seen += 1;
        }
        if seen != n * n * n {
            return Err(LabError::InvalidInput(format!("field file has {seen} rows, expected {}", n * n * n)));
        }
        Ok(DisplacementField {
            system: DASystem::new(&header.spec)?,
            spec: header.spec,
            grid_size: n,
            values,
            refine_steps: header.refine_steps,
            residual: header.residual,
            raw_residual: header.raw_residual,
            sup_norm: header.sup_norm,
            iterations: header.iterations,
            change_log: header.change_log,
        })
    }
}

/// Max pairwise torus distance of a point set.
pub fn torus_diameter(points: &[TorusPoint]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max(torus_delta(&a.0, &b.0).norm());
        }
    }
    d
}

/// Diameter of `h` applied to the center curve of arclength `arc` through `x`.
pub fn collapse_diameter(field: &DisplacementField, x: &TorusPoint, arc: f64, steps: usize) -> Result<f64> {
    let curve = trace_center_curve(field.system(), x, arc, steps)?;
    let images: Vec<TorusPoint> = curve
        .iter()
        .map(|p| field.evaluate_h(&reduce_to_torus(&LiftPoint(*p))))
        .collect();
    Ok(torus_diameter(&images))
}

/// Max over sampled center segments of (arclength) / (lift distance between endpoints).
pub fn quasi_isometry_constant(sys: &DASystem, samples: usize, arc: f64, seed: u64) -> Result<f64> {
    if !(arc > 0.0) {
        return Err(LabError::InvalidInput("arc must be positive".into()));
    }
    let steps = ((arc * 400.0).ceil() as usize).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<TorusPoint> = (0..samples).map(|_| DASystem::random_point(&mut rng)).collect();
    let ratios: Vec<Result<f64>> = starts
        .par_iter()
        .map(|x| {
            let curve = trace_center_curve(sys, x, arc, steps)?;
            let chord = (curve[curve.len() - 1] - curve[0]).norm();
            Ok(arc / chord)
        })
        .collect();
    let mut q: f64 = 1.0;
    for r in ratios {
        q = q.max(r?);
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleReport {
    pub k_power: u32,
    pub c: f64,
    pub samples: usize,
    pub m_max: f64,
    /// Smallest `M` such that every sampled pair farther apart than `M`
    /// satisfies the ratio bound; `None` when no such `M ≤ m_max` exists.
    pub m_found: Option<f64>,
    pub violations: usize,
    /// `4‖u‖∞(1 + μ_strong)/(C − 1)`, when `‖u‖∞` was supplied.
    pub heuristic_bound: Option<f64>,
    /// `2 D_k / ((1 − 1/C) σ_min(A^k))` with `D_k ≥ sup |f̃^k − A^k|`.
    pub rigorous_bound: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Ratio test `1/C < |f̃^k x − f̃^k y| / |A^k x − A^k y| < C` on random lift pairs
/// with separations log-uniform in `[1e-3, m_max]`.
pub fn large_scale_ratio(
    sys: &DASystem,
    k_power: u32,
    c: f64,
    samples: usize,
    m_max: f64,
    seed: u64,
    u_sup: Option<f64>,
) -> Result<LargeScaleReport> {
    if !(c > 1.0) {
        return Err(LabError::InvalidInput("C must exceed 1".into()));
    }
    if k_power == 0 || samples == 0 || !(m_max > 1e-3) {
        return Err(LabError::InvalidInput("k_power, samples and m_max must be positive".into()));
    }
    let a = sys.linear_matrix();
    let ak = (0..k_power).fold(nalgebra::Matrix3::identity(), |m, _| a * m);
    let sigma_min = ak.svd(false, false).singular_values.min();
    let a_norm = a.svd(false, false).singular_values.max();
    let d1 = sys.displacement_bound();
    // |f̃^k − A^k| ≤ Σ_{j<k} ‖A‖^j · sup|φ − id|
    let dk = (0..k_power).map(|j| a_norm.powi(j as i32)).sum::<f64>() * d1;
    let rigorous_bound = 2.0 * dk / ((1.0 - 1.0 / c) * sigma_min);
    let heuristic_bound = u_sup.map(|u| 4.0 * u * (1.0 + sys.chart_values()[0].abs()) / (c - 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (1e-3f64.ln(), m_max.ln());
    let pairs: Vec<(Vector3<f64>, Vector3<f64>, f64)> = (0..samples)
        .map(|_| {
            let x = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let dir = loop {
                let v = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                let n = v.norm();
                if n > 1e-3 && n <= 0.5 {
                    break v / n;
                }
            };
            let r = (lo + (hi - lo) * rng.gen::<f64>()).exp();
            (x, x + dir * r, r)
        })
        .collect();
    let results: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(x, y, r)| {
            let (mut fx, mut fy) = (LiftPoint(*x), LiftPoint(*y));
            for _ in 0..k_power {
                fx = sys.apply_lift(&fx);
                fy = sys.apply_lift(&fy);
            }
            let lin = (ak * (x - y)).norm();
            ((fx.0 - fy.0).norm() / lin, *r)
        })
        .collect();
    let mut worst_sep: f64 = 0.0;
    let mut violations = 0;
    let (mut min_ratio, mut max_ratio) = (f64::INFINITY, 0.0f64);
    for (ratio, sep) in &results {
        min_ratio = min_ratio.min(*ratio);
        max_ratio = max_ratio.max(*ratio);
        if !(*ratio > 1.0 / c && *ratio < c) {
            violations += 1;
            worst_sep = worst_sep.max(*sep);
        }
    }
    // M is supported only if some sampled pairs lie beyond it
    let beyond = results.iter().filter(|(_, s)| *s > worst_sep).count();
    let m_found = if violations == 0 {
        Some(0.0)
    } else if worst_sep < m_max && beyond > 0 {
        Some(worst_sep)
    } else {
        None
    };
    Ok(LargeScaleReport {
        k_power,
        c,
        samples,
        m_max,
        m_found,
        violations,
        heuristic_bound,
        rigorous_bound,
        min_ratio,
        max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interpolation_reproduces_nodes_and_affine_data() {
        let n = 16;
        let values: Vec<Vector3<f64>> = (0..n * n * n)
            .map(|idx| {
                let p = node_point(n, idx);
                Vector3::new(p.0[0], 2.0 * p.0[1], -p.0[2])
            })
            .collect();
        let x = node_point(n, 1234);
        assert_abs_diff_eq!(interpolate(&values, n, &x), values[1234], epsilon = 1e-14);
        // affine in the interior of the cell
        let y = TorusPoint::new(0.3, 0.41, 0.77);
        assert_abs_diff_eq!(interpolate(&values, n, &y), Vector3::new(0.3, 0.82, -0.77), epsilon = 1e-12);
        // periodic across the seam: value at 1−ε blends with node 0
        let z = TorusPoint::new(1.0 - 1.0 / 32.0, 0.0, 0.0);
        let mid = interpolate(&values, n, &z);
        assert_abs_diff_eq!(mid[0], 0.5 * (15.0 / 16.0), epsilon = 1e-12);
    }

    #[test]
    fn probes_are_in_unit_cube_and_distinct() {
        let p = probe_points(1000, 0.5);
        assert!(p.iter().all(|x| x.0.iter().all(|c| (0.0..1.0).contains(c))));
        assert_ne!(p[0], p[1]);
    }

    #[test]
    fn contraction_rate_of_geometric_log() {
        let log: Vec<f64> = (0..10).map(|i| 0.5f64.powi(i)).collect();
        assert_abs_diff_eq!(contraction_rate(&log), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(worst_contraction_ratio(&log), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn linear_field_is_zero() {
        let f = solve_with(&DASpec::linear(5, true), &SolveOptions { grid_size: 16, probes: 100, ..SolveOptions::default() })
            .unwrap();
        assert_eq!(f.iterations, 1);
        assert!(f.values.iter().all(|v| *v == Vector3::zeros()));
        assert_eq!(f.residual, 0.0);
        let x = TorusPoint::new(0.2, 0.3, 0.4);
        assert_eq!(f.evaluate_h(&x), x);
    }

    #[test]
    fn small_grid_rejected() {
        assert!(solve_semiconjugacy(&DASpec::standard(), 8, 1e-4, 10).is_err());
    }

    #[test]
    fn diameter_of_points() {
        let pts = [TorusPoint::new(0.0, 0.0, 0.0), TorusPoint::new(0.1, 0.0, 0.0), TorusPoint::new(0.95, 0.0, 0.0)];
        assert_abs_diff_eq!(torus_diameter(&pts), 0.15, epsilon = 1e-12);
    }
}
