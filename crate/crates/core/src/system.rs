//! The diffeomorphism `f = φ ∘ A` and its derivative.
//!
//! `A` is a hyperbolic member of the integer family (optionally inverted) and
//! `φ` is a volume-preserving perturbation that
//!
//! * leaves the strong coordinate of the eigenchart untouched, so the quotient
//!   dynamics along the strong direction is exactly that of `A`;
//! * maps every plane parallel to `span(e_mid, e_s)` to itself, so that plane
//!   bundle is `Df`-invariant;
//! * has a closed-form inverse.
//!
//! Two profiles are available. `SmoothstepTwist` rotates the (middle, stable)
//! chart coefficients by an angle that decays to zero on a chart ball.
//! `SawtoothShear` slides points along a fixed in-plane vector `v` by an amount
//! that depends only on the phase `n·(y − p) mod 1` for an integer covector `n`
//! with `n·v = 0`; it acts on the whole torus and is the profile that is strong
//! enough to make the center exponent negative while keeping the splitting
//! dominated.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lyapunov;
use crate::torus::{
    eigen_splitting, family_matrix, invert_unimodular, reduce_to_torus, wrap_unit, EigenChart, IntMatrix3,
    LiftPoint, Spectrum, Splitting, SplittingClass, TorusPoint,
};

pub const SPEC_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BumpProfile {
    /// Rotation of the (middle, stable) chart coefficients by `θ0·b(|c|/r)` with
    /// `b(ρ) = 1 − 3ρ⁴ + 2ρ⁶` (smoothstep in ρ²), supported on the chart ball of radius r.
    #[default]
    SmoothstepTwist,
    /// Global shear `y ↦ y + θ0·P(n·(y − p) mod 1)·v` with a C² sawtooth `P` whose
    /// rising ramp has width r.
    SawtoothShear,
}

/// Serializable description of one diffeomorphism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DASpec {
    #[serde(default = "default_version")]
    pub spec_version: String,
    pub k: u32,
    #[serde(default = "default_true")]
    pub use_inverse_linearization: bool,
    pub perturbation_center: [f64; 3],
    pub perturbation_radius: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub bump_profile: BumpProfile,
    /// Integer phase covector of the shear profile; ignored by the twist.
    #[serde(default = "default_normal")]
    pub shear_normal: [i64; 3],
}

fn default_version() -> String {
    SPEC_VERSION.to_string()
}

fn default_true() -> bool {
    true
}

fn default_normal() -> [i64; 3] {
    [1, -1, -1]
}

impl DASpec {
    /// Unperturbed linear map `A_k⁻¹` (or `A_k`).
    pub fn linear(k: u32, use_inverse_linearization: bool) -> Self {
        DASpec {
            spec_version: default_version(),
            k,
            use_inverse_linearization,
            perturbation_center: [0.5, 0.5, 0.5],
            perturbation_radius: 0.1,
            amplitude: 0.0,
            bump_profile: BumpProfile::SmoothstepTwist,
            shear_normal: default_normal(),
        }
    }

    pub fn twist(k: u32, center: [f64; 3], radius: f64, amplitude: f64) -> Self {
        DASpec {
            perturbation_center: center,
            perturbation_radius: radius,
            amplitude,
            ..DASpec::linear(k, true)
        }
    }

    /// Reference perturbed map with a negative center exponent at `k = 5`.
    pub fn standard() -> Self {
        DASpec {
            spec_version: default_version(),
            k: 5,
            use_inverse_linearization: true,
            perturbation_center: [0.0, 0.0, 0.0],
            perturbation_radius: 0.2,
            amplitude: STANDARD_AMPLITUDE,
            bump_profile: BumpProfile::SawtoothShear,
            shear_normal: [1, -1, -1],
        }
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        DASpec { amplitude, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(LabError::InvalidInput(format!(
                "spec_version {:?} is not supported (expected {SPEC_VERSION:?})",
                self.spec_version
            )));
        }
        if self.k == 0 {
            return Err(LabError::InvalidInput("k must be >= 1".into()));
        }
        // the twist ball must embed in the torus; the shear ramp is a phase width
        let max_radius = match self.bump_profile {
            BumpProfile::SmoothstepTwist => 0.25,
            BumpProfile::SawtoothShear => 1.0,
        };
        if !(self.perturbation_radius > 0.0 && self.perturbation_radius < max_radius) {
            return Err(LabError::InvalidInput(format!(
                "perturbation_radius must lie in (0, {max_radius}), got {}",
                self.perturbation_radius
            )));
        }
        if !self.amplitude.is_finite() || self.perturbation_center.iter().any(|c| !c.is_finite()) {
            return Err(LabError::InvalidInput("amplitude and perturbation_center must be finite".into()));
        }
        if self.bump_profile == BumpProfile::SawtoothShear && self.shear_normal == [0, 0, 0] {
            return Err(LabError::InvalidInput("shear_normal must be a nonzero integer vector".into()));
        }
        Ok(())
    }
}

/// Shear amplitude of [`DASpec::standard`]; chosen from the amplitude sweep as a
/// point well inside the window where the center exponent is negative and the
/// splitting stays dominated.
pub const STANDARD_AMPLITUDE: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianSample {
    pub matrix: Matrix3<f64>,
    pub point: TorusPoint,
}

#[derive(Debug, Clone)]
enum Perturbation {
    None,
    Twist {
        radius: f64,
        amplitude: f64,
    },
    Shear {
        amplitude: f64,
        width: f64,
        normal: Vector3<f64>,
        /// `n` expressed on the chart basis: `(n·e_strong, n·e_mid, n·e_s)`.
        normal_chart: Vector3<f64>,
        /// Shear direction in (middle, stable) chart coefficients.
        dir_chart: Vector2<f64>,
        /// Shear direction in ambient coordinates.
        dir: Vector3<f64>,
    },
}

/// A compiled [`DASpec`]: matrices, eigenchart and perturbation constants.
#[derive(Debug, Clone)]
pub struct DASystem {
    pub spec: DASpec,
    pub matrix: IntMatrix3,
    pub matrix_inverse: IntMatrix3,
    pub splitting: Splitting,
    pub chart: EigenChart,
    a: Matrix3<f64>,
    a_inv: Matrix3<f64>,
    /// Eigenvalues in chart order (strong, middle, stable).
    chart_values: Vector3<f64>,
    center: TorusPoint,
    perturbation: Perturbation,
}

impl DASystem {
    pub fn new(spec: &DASpec) -> Result<Self> {
        spec.validate()?;
        let base = family_matrix(spec.k)?;
        let matrix = if spec.use_inverse_linearization { invert_unimodular(&base)? } else { base };
        let matrix_inverse = invert_unimodular(&matrix)?;
        let splitting = match eigen_splitting(&matrix) {
            Spectrum::Real(s) if s.class != SplittingClass::NonHyperbolic => s,
            _ => return Err(LabError::ComplexSpectrum),
        };
        let chart = EigenChart::new(&splitting)?;
        let chart_values = Vector3::new(splitting.strong(), splitting.middle(), splitting.stable());
        let center = TorusPoint::new(spec.perturbation_center[0], spec.perturbation_center[1], spec.perturbation_center[2]);
        let perturbation = if spec.amplitude == 0.0 {
            Perturbation::None
        } else {
            match spec.bump_profile {
                BumpProfile::SmoothstepTwist => Perturbation::Twist {
                    radius: spec.perturbation_radius,
                    amplitude: spec.amplitude,
                },
                BumpProfile::SawtoothShear => {
                    let normal = Vector3::from_iterator(spec.shear_normal.iter().map(|&c| c as f64));
                    let normal_chart = chart.frame.transpose() * normal;
                    let (mw, ms) = (normal_chart[1], normal_chart[2]);
                    let m2 = mw * mw + ms * ms;
                    if m2 < 1e-12 {
                        return Err(LabError::InvalidInput("shear_normal is orthogonal to the invariant plane".into()));
                    }
                    let dir_chart = Vector2::new(ms, -mw) / m2;
                    let dir = chart.direction(EigenChart::MIDDLE) * dir_chart[0]
                        + chart.direction(EigenChart::STABLE) * dir_chart[1];
                    Perturbation::Shear {
                        amplitude: spec.amplitude,
                        width: spec.perturbation_radius,
                        normal,
                        normal_chart,
                        dir_chart,
                        dir,
                    }
                }
            }
        };
        Ok(DASystem {
            spec: spec.clone(),
            a: matrix.to_f64(),
            a_inv: matrix_inverse.to_f64(),
            matrix,
            matrix_inverse,
            splitting,
            chart,
            chart_values,
            center,
            perturbation,
        })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.perturbation, Perturbation::None)
    }

    pub fn linear_matrix(&self) -> &Matrix3<f64> {
        &self.a
    }

    pub fn linear_inverse(&self) -> &Matrix3<f64> {
        &self.a_inv
    }

    /// Eigenvalues in chart order (strong, middle, stable).
    pub fn chart_values(&self) -> Vector3<f64> {
        self.chart_values
    }

    /// Log-moduli of `A`'s eigenvalues as (u, c, s).
    pub fn linear_exponents(&self) -> [f64; 3] {
        self.chart_values.map(|v| v.abs().ln()).into()
    }

    pub fn perturbation_center(&self) -> TorusPoint {
        self.center
    }

    /// Displacement `φ(y) − y` of the perturbation at a torus point (a periodic function).
    pub fn displacement(&self, y: &TorusPoint) -> Vector3<f64> {
        match &self.perturbation {
            Perturbation::None => Vector3::zeros(),
            Perturbation::Twist { radius, amplitude } => {
                let c = self.chart.coordinates(y, &self.center);
                let rho = c.norm() / radius;
                if rho >= 1.0 {
                    return Vector3::zeros();
                }
                let theta = amplitude * bump(rho);
                let (sn, cs) = theta.sin_cos();
                let w = cs * c[1] - sn * c[2];
                let s = sn * c[1] + cs * c[2];
                self.chart.vector(&Vector3::new(0.0, w - c[1], s - c[2]))
            }
            Perturbation::Shear { amplitude, width, normal, dir, .. } => {
                let t = self.phase(y, normal);
                dir * (amplitude * sawtooth(t, *width).0)
            }
        }
    }

    fn phase(&self, y: &TorusPoint, normal: &Vector3<f64>) -> f64 {
        // n is integer, so n·y mod 1 is well defined on the torus
        wrap_unit(normal.dot(&(y.0 - self.center.0)))
    }

    pub fn apply_phi(&self, y: &TorusPoint) -> TorusPoint {
        match &self.perturbation {
            Perturbation::None => *y,
            Perturbation::Twist { radius, amplitude } => {
                let c = self.chart.coordinates(y, &self.center);
                let rho = c.norm() / radius;
                if rho >= 1.0 {
                    return *y;
                }
                let theta = amplitude * bump(rho);
                let (sn, cs) = theta.sin_cos();
                let rotated = Vector3::new(c[0], cs * c[1] - sn * c[2], sn * c[1] + cs * c[2]);
                self.chart.point(&rotated, &self.center)
            }
            Perturbation::Shear { .. } => reduce_to_torus(&LiftPoint(y.0 + self.displacement(y))),
        }
    }

    pub fn apply_phi_inverse(&self, z: &TorusPoint) -> TorusPoint {
        match &self.perturbation {
            Perturbation::None => *z,
            Perturbation::Twist { radius, amplitude } => {
                // the rotation preserves |c|, so the angle is read off the image
                let c = self.chart.coordinates(z, &self.center);
                let rho = c.norm() / radius;
                if rho >= 1.0 {
                    return *z;
                }
                let theta = -amplitude * bump(rho);
                let (sn, cs) = theta.sin_cos();
                let rotated = Vector3::new(c[0], cs * c[1] - sn * c[2], sn * c[1] + cs * c[2]);
                self.chart.point(&rotated, &self.center)
            }
            Perturbation::Shear { amplitude, width, normal, dir, .. } => {
                // n·v = 0 keeps the phase fixed, so the inverse just subtracts
                let t = self.phase(z, normal);
                reduce_to_torus(&LiftPoint(z.0 - dir * (amplitude * sawtooth(t, *width).0)))
            }
        }
    }

    #[inline]
    pub fn apply_linear(&self, x: &TorusPoint) -> TorusPoint {
        reduce_to_torus(&LiftPoint(self.a * x.0))
    }

    #[inline]
    pub fn apply_linear_inverse(&self, x: &TorusPoint) -> TorusPoint {
        reduce_to_torus(&LiftPoint(self.a_inv * x.0))
    }

    pub fn apply_f(&self, x: &TorusPoint) -> TorusPoint {
        self.apply_phi(&self.apply_linear(x))
    }

    pub fn apply_f_inverse(&self, x: &TorusPoint) -> TorusPoint {
        self.apply_linear_inverse(&self.apply_phi_inverse(x))
    }

    /// Lift `f̃(x) = A x + (φ − id)(A x)` on the universal cover.
    pub fn apply_lift(&self, x: &LiftPoint) -> LiftPoint {
        let ax = self.a * x.0;
        LiftPoint(ax + self.displacement(&reduce_to_torus(&LiftPoint(ax))))
    }

    /// Derivative of `φ` at `y` in chart coefficients (strong, middle, stable).
    /// The first row is always `(1, 0, 0)`.
    pub fn phi_chart_jacobian(&self, y: &TorusPoint) -> Matrix3<f64> {
        match &self.perturbation {
            Perturbation::None => Matrix3::identity(),
            Perturbation::Twist { radius, amplitude } => {
                let c = self.chart.coordinates(y, &self.center);
                let rho = c.norm() / radius;
                if rho >= 1.0 {
                    return Matrix3::identity();
                }
                let theta = amplitude * bump(rho);
                let (sn, cs) = theta.sin_cos();
                let w = cs * c[1] - sn * c[2];
                let s = sn * c[1] + cs * c[2];
                // ∂θ/∂c_j = g·c_j
                let g = amplitude * (-12.0 * rho * rho + 12.0 * rho.powi(4)) / (radius * radius);
                Matrix3::new(
                    1.0,
                    0.0,
                    0.0,
                    -s * g * c[0],
                    cs - s * g * c[1],
                    -sn - s * g * c[2],
                    w * g * c[0],
                    sn + w * g * c[1],
                    cs + w * g * c[2],
                )
            }
            Perturbation::Shear { amplitude, width, normal, normal_chart, dir_chart, .. } => {
                let t = self.phase(y, normal);
                let g = amplitude * sawtooth(t, *width).1;
                let v = Vector3::new(0.0, dir_chart[0], dir_chart[1]);
                Matrix3::identity() + v * normal_chart.transpose() * g
            }
        }
    }

    /// `Df(x)` in chart coefficients.
    #[inline]
    pub fn chart_jacobian(&self, x: &TorusPoint) -> Matrix3<f64> {
        let y = self.apply_linear(x);
        let mut j = self.phi_chart_jacobian(&y);
        for col in 0..3 {
            for row in 0..3 {
                j[(row, col)] *= self.chart_values[col];
            }
        }
        j
    }

    /// Restriction of `Df(x)` to the invariant plane, in (middle, stable) coefficients.
    #[inline]
    pub fn plane_jacobian(&self, x: &TorusPoint) -> Matrix2<f64> {
        let j = self.chart_jacobian(x);
        Matrix2::new(j[(1, 1)], j[(1, 2)], j[(2, 1)], j[(2, 2)])
    }

    fn phi_ambient_jacobian(&self, y: &TorusPoint) -> Matrix3<f64> {
        match &self.perturbation {
            Perturbation::None => Matrix3::identity(),
            Perturbation::Twist { .. } => self.chart.frame * self.phi_chart_jacobian(y) * self.chart.inverse,
            Perturbation::Shear { amplitude, width, normal, dir, .. } => {
                let t = self.phase(y, normal);
                Matrix3::identity() + dir * normal.transpose() * (amplitude * sawtooth(t, *width).1)
            }
        }
    }

    /// Ambient derivative `Df(x) = Dφ(Ax)·A`.
    pub fn jacobian(&self, x: &TorusPoint) -> JacobianSample {
        JacobianSample {
            matrix: self.step_with_jacobian(x).1,
            point: *x,
        }
    }

    /// `(f(x), Df(x))` sharing the evaluation of `A x`.
    #[inline]
    pub fn step_with_jacobian(&self, x: &TorusPoint) -> (TorusPoint, Matrix3<f64>) {
        let y = self.apply_linear(x);
        let d = self.phi_ambient_jacobian(&y) * self.a;
        (self.apply_phi(&y), d)
    }

    /// Upper bound on `sup |φ(y) − y|` (ambient norm).
    pub fn displacement_bound(&self) -> f64 {
        match &self.perturbation {
            Perturbation::None => 0.0,
            Perturbation::Twist { radius, amplitude } => {
                // a rotation by θ moves a planar point at radius ≤ r by at most 2|sin(θ/2)|·r
                let max_turn = amplitude.abs().min(PI);
                let frame_norm = self.chart.frame.svd(false, false).singular_values.max();
                2.0 * (0.5 * max_turn).sin() * radius * frame_norm
            }
            Perturbation::Shear { amplitude, width, dir, .. } => {
                // P is maximal where P' = 0, i.e. where sin²(πt/q) = q/2; scan densely and pad
                let n = 200_000;
                let p_max = (0..=n)
                    .map(|i| sawtooth(i as f64 / n as f64, *width).0.abs())
                    .fold(0.0, f64::max);
                amplitude.abs() * (p_max + 1e-9) * dir.norm()
            }
        }
    }

    /// Uniform random torus point.
    pub fn random_point<R: Rng>(rng: &mut R) -> TorusPoint {
        TorusPoint::new(rng.gen(), rng.gen(), rng.gen())
    }

    /// Empirical check of absolute partial hyperbolicity on `n_probe` random points.
    ///
    /// For each window `w` of the ladder `1, 2, 4, …, max_window` the growth
    /// multipliers of the three bundle estimates over `w` iterates are collected
    /// and the three rate intervals are tested for disjointness, i.e. whether
    /// `f^w` is absolutely partially hyperbolic on the probes. The map passes when
    /// some rung separates.
    pub fn validate_partial_hyperbolicity(&self, n_probe: usize, options: &PhOptions) -> Result<PhReport> {
        if n_probe == 0 || options.max_window == 0 {
            return Err(LabError::InvalidInput("n_probe and max_window must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let probes: Vec<TorusPoint> = (0..n_probe).map(|_| Self::random_point(&mut rng)).collect();
        let mut windows = Vec::new();
        let mut w = 1;
        while w <= options.max_window {
            let rates: Vec<[f64; 3]> = probes
                .par_iter()
                .map(|x| lyapunov::window_rates(self, x, w, options.align))
                .collect();
            windows.push(window_report(w, &probes, &rates));
            w *= 2;
        }
        let first_separated_window = windows.iter().find(|r| r.separated).map(|r| r.window);
        Ok(PhReport {
            n_probe,
            separated: first_separated_window.is_some(),
            first_separated_window,
            windows,
        })
    }
}

fn window_report(window: usize, probes: &[TorusPoint], rates: &[[f64; 3]]) -> WindowReport {
    let mut iv = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
    for r in rates {
        for b in 0..3 {
            iv[b][0] = iv[b][0].min(r[b]);
            iv[b][1] = iv[b][1].max(r[b]);
        }
    }
    let (u, c, s) = (iv[0], iv[1], iv[2]);
    let separated = s[1] < c[0] && c[1] < u[0];
    let mut witnesses = Vec::new();
    if !separated {
        // probes whose rate sits inside a neighbouring bundle's interval
        for (x, r) in probes.iter().zip(rates) {
            if r[2] >= c[0] || r[1] <= s[1] || r[1] >= u[0] || r[0] <= c[1] {
                witnesses.push(ViolationWitness { point: *x, rates: *r });
                if witnesses.len() >= 10 {
                    break;
                }
            }
        }
    }
    WindowReport { window, unstable: u, center: c, stable: s, separated, witnesses }
}

/// Settings for [`DASystem::validate_partial_hyperbolicity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhOptions {
    /// Longest window of the ladder `1, 2, 4, …`.
    pub max_window: usize,
    /// Iterates used to align the bundle estimates.
    pub align: usize,
    pub seed: u64,
}

impl Default for PhOptions {
    fn default() -> Self {
        PhOptions { max_window: 128, align: 40, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationWitness {
    pub point: TorusPoint,
    /// Per-iterate growth multipliers along (u, c, s).
    pub rates: [f64; 3],
}

/// Min/max growth multipliers per bundle (per iterate, geometric mean over the window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub unstable: [f64; 2],
    pub center: [f64; 2],
    pub stable: [f64; 2],
    pub separated: bool,
    pub witnesses: Vec<ViolationWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhReport {
    pub n_probe: usize,
    pub separated: bool,
    pub first_separated_window: Option<usize>,
    pub windows: Vec<WindowReport>,
}

impl PhReport {
    pub fn window(&self, w: usize) -> Option<&WindowReport> {
        self.windows.iter().find(|r| r.window == w)
    }
}

/// `b(ρ) = 1 − 3ρ⁴ + 2ρ⁶` on `[0, 1]`, zero beyond.
#[inline]
pub fn bump(rho: f64) -> f64 {
    if rho >= 1.0 {
        0.0
    } else {
        let r2 = rho * rho;
        1.0 - 3.0 * r2 * r2 + 2.0 * r2 * r2 * r2
    }
}

/// C² sawtooth `P(t) = W(t) − t` on the circle and its derivative, where `W`
/// rises from 0 to 1 on `[0, q]` with density `(2/q)·sin²(πt/q)` and stays 1 after.
#[inline]
pub fn sawtooth(t: f64, q: f64) -> (f64, f64) {
    if t < q {
        let a = 2.0 * PI * t / q;
        let w = t / q - a.sin() / (2.0 * PI);
        let sn = (PI * t / q).sin();
        (w - t, 2.0 / q * sn * sn - 1.0)
    } else {
        (1.0 - t, -1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::torus_delta;
    use approx::assert_abs_diff_eq;

    fn twist() -> DASystem {
        DASystem::new(&DASpec::twist(5, [0.3, 0.6, 0.2], 0.2, 0.8)).unwrap()
    }

    fn numeric_jacobian(sys: &DASystem, x: &TorusPoint) -> Matrix3<f64> {
        let h = 1e-6;
        let fx = sys.apply_f(x);
        let mut m = Matrix3::zeros();
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = h;
            let p = sys.apply_f(&reduce_to_torus(&LiftPoint(x.0 + e)));
            let q = sys.apply_f(&reduce_to_torus(&LiftPoint(x.0 - e)));
            let col = (torus_delta(&p.0, &fx.0) - torus_delta(&q.0, &fx.0)) / (2.0 * h);
            m.set_column(j, &col);
        }
        m
    }

    #[test]
    fn sawtooth_is_c1_periodic_and_integrates_to_zero() {
        let q = 0.15;
        assert_abs_diff_eq!(sawtooth(0.0, q).0, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sawtooth(1.0 - 1e-12, q).0, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sawtooth(q - 1e-12, q).0, sawtooth(q, q).0, epsilon = 1e-10);
        assert_abs_diff_eq!(sawtooth(q - 1e-12, q).1, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sawtooth(0.0, q).1, -1.0, epsilon = 1e-12);
        // mean of P' over a period is zero, and P' matches a central difference
        let n = 100_000;
        let mean: f64 = (0..n).map(|i| sawtooth((i as f64 + 0.5) / n as f64, q).1).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        for t in [0.01, 0.07, 0.149, 0.5] {
            let fd = (sawtooth(t + 1e-7, q).0 - sawtooth(t - 1e-7, q).0) / 2e-7;
            assert_abs_diff_eq!(fd, sawtooth(t, q).1, epsilon = 1e-6);
        }
    }

    #[test]
    fn bump_endpoints() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        assert_abs_diff_eq!(bump(1.0 - 1e-9), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_amplitude_is_linear() {
        let sys = DASystem::new(&DASpec::linear(5, true)).unwrap();
        let x = TorusPoint::new(0.12, 0.77, 0.4);
        assert_eq!(sys.apply_f(&x), sys.apply_linear(&x));
        assert_eq!(sys.jacobian(&x).matrix, sys.linear_matrix().clone());
    }

    #[test]
    fn twist_is_identity_outside_ball() {
        let sys = twist();
        let p = sys.perturbation_center();
        let far = TorusPoint::new(p.0[0] + 0.5, p.0[1] + 0.5, p.0[2] + 0.5);
        assert_eq!(sys.apply_phi(&far), far);
        assert_eq!(sys.displacement(&far), Vector3::zeros());
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shear = DASystem::new(&DASpec::standard()).unwrap();
        for sys in [twist(), shear] {
            let p = sys.perturbation_center();
            for i in 0..300 {
                // half the probes land in the twist ball via A⁻¹ of a nearby point
                let x = if i % 2 == 0 {
                    DASystem::random_point(&mut rng)
                } else {
                    let off = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.2;
                    sys.apply_linear_inverse(&reduce_to_torus(&LiftPoint(p.0 + off)))
                };
                let a = sys.jacobian(&x).matrix;
                let n = numeric_jacobian(&sys, &x);
                assert!((a - n).abs().max() < 1e-6, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn shear_direction_is_in_plane_and_orthogonal_to_normal() {
        let sys = DASystem::new(&DASpec::standard()).unwrap();
        if let Perturbation::Shear { normal, dir, dir_chart, normal_chart, .. } = &sys.perturbation {
            assert_abs_diff_eq!(normal.dot(dir), 0.0, epsilon = 1e-14);
            let c = sys.chart.coefficients(dir);
            assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-14);
            // unit slope: the shear moves the plane phase by exactly θ0 per unit of P
            assert_abs_diff_eq!(dir_chart.norm() * normal_chart.fixed_rows::<2>(1).norm(), 1.0, epsilon = 1e-12);
        } else {
            panic!("standard spec must be a shear");
        }
    }

    #[test]
    fn spec_rejects_bad_input() {
        let mut s = DASpec::twist(5, [0.0; 3], 0.3, 0.5);
        assert!(DASystem::new(&s).is_err());
        s.bump_profile = BumpProfile::SawtoothShear;
        assert!(DASystem::new(&s).is_ok());
        s.perturbation_radius = 1.0;
        assert!(DASystem::new(&s).is_err());
        let mut s = DASpec::standard();
        s.k = 3;
        assert!(matches!(DASystem::new(&s), Err(LabError::ComplexSpectrum)));
        let json = r#"{"k":5,"perturbation_center":[0,0,0],"perturbation_radius":0.1,"amplitude":0.5,"colour":1}"#;
        assert!(serde_json::from_str::<DASpec>(json).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = DASpec::standard();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<DASpec>(&text).unwrap(), s);
        assert!(text.contains("\"spec_version\":\"1\""));
    }

    #[test]
    fn lift_agrees_with_torus_map() {
        let sys = DASystem::new(&DASpec::standard()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = LiftPoint(Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 6.0);
            let fx = sys.apply_lift(&x);
            let t = sys.apply_f(&reduce_to_torus(&x));
            assert!(torus_delta(&reduce_to_torus(&fx).0, &t.0).norm() < 1e-12);
        }
    }
}
