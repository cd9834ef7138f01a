//! Integer toral automorphisms, their eigen-splittings, and torus/lift geometry.
//!
//! Eigenvalues are obtained from the exact integer characteristic polynomial
//! `λ³ − tλ² + sλ − d` (trace, principal-minor sum, determinant) by bracketing
//! each root between the critical points of the cubic, bisecting, and polishing
//! with Newton steps. The discriminant is evaluated in exact integer arithmetic,
//! so the real/complex decision never depends on rounding.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// 3×3 integer matrix acting on `Z³`, read as a map of the torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntMatrix3(pub [[i64; 3]; 3]);

/// Coefficients of `λ³ − trace·λ² + minor_sum·λ − det`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharPoly {
    pub trace: i64,
    pub minor_sum: i64,
    pub det: i64,
}

impl CharPoly {
    /// Discriminant of the monic cubic, exact.
    pub fn discriminant(&self) -> i128 {
        // λ³ + bλ² + cλ + d with b = −t, c = s, d = −det
        let b = -(self.trace as i128);
        let c = self.minor_sum as i128;
        let d = -(self.det as i128);
        18 * b * c * d - 4 * b * b * b * d + b * b * c * c - 4 * c * c * c - 27 * d * d
    }

    pub fn eval(&self, x: f64) -> f64 {
        ((x - self.trace as f64) * x + self.minor_sum as f64) * x - self.det as f64
    }

    fn deriv(&self, x: f64) -> f64 {
        (3.0 * x - 2.0 * self.trace as f64) * x + self.minor_sum as f64
    }

    /// Real roots in ascending order. Only called with a positive discriminant
    /// (three simple roots) or zero (repeated roots are returned with multiplicity).
    fn real_roots(&self) -> [f64; 3] {
        let t = self.trace as f64;
        let s = self.minor_sum as f64;
        // critical points of the cubic
        let disc_d = (t * t - 3.0 * s).max(0.0);
        let c_lo = (t - disc_d.sqrt()) / 3.0;
        let c_hi = (t + disc_d.sqrt()) / 3.0;
        let bound = 1.0
            + [self.trace, self.minor_sum, self.det]
                .iter()
                .map(|c| c.unsigned_abs() as f64)
                .fold(0.0, f64::max);
        let r0 = self.root_in(-bound, c_lo);
        let r1 = self.root_in(c_lo, c_hi);
        let r2 = self.root_in(c_hi, bound);
        [r0, r1, r2]
    }

    fn root_in(&self, mut lo: f64, mut hi: f64) -> f64 {
        let mut f_lo = self.eval(lo);
        let f_hi = self.eval(hi);
        if f_lo == 0.0 {
            return lo;
        }
        if f_hi == 0.0 {
            return hi;
        }
        if f_lo.signum() == f_hi.signum() {
            // double root sitting on a critical point
            return if f_lo.abs() < f_hi.abs() { lo } else { hi };
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let f_mid = self.eval(mid);
            if f_mid == 0.0 {
                return mid;
            }
            if f_mid.signum() == f_lo.signum() {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..3 {
            let d = self.deriv(x);
            if d == 0.0 {
                break;
            }
            let next = x - self.eval(x) / d;
            if next.is_finite() && next >= lo && next <= hi {
                x = next;
            }
        }
        x
    }
}

impl IntMatrix3 {
    pub const IDENTITY: IntMatrix3 = IntMatrix3([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);

    pub fn det(&self) -> i64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> i64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn char_poly(&self) -> CharPoly {
        let m = &self.0;
        let minor_sum = (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            + (m[0][0] * m[2][2] - m[0][2] * m[2][0])
            + (m[0][0] * m[1][1] - m[0][1] * m[1][0]);
        CharPoly {
            trace: self.trace(),
            minor_sum,
            det: self.det(),
        }
    }

    pub fn mul(&self, other: &IntMatrix3) -> IntMatrix3 {
        let mut out = [[0i64; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = (0..3).map(|l| self.0[i][l] * other.0[l][j]).sum();
            }
        }
        IntMatrix3(out)
    }

    pub fn transpose(&self) -> IntMatrix3 {
        let m = &self.0;
        IntMatrix3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn to_f64(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.0[i][j] as f64)
    }

    pub fn apply(&self, p: &LiftPoint) -> LiftPoint {
        LiftPoint(self.to_f64() * p.0)
    }

    pub fn apply_int(&self, v: [i64; 3]) -> [i64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

/// The family `A_k` with rows (0,0,1), (0,1,−1), (−1,−1,k).
pub fn family_matrix(k: u32) -> Result<IntMatrix3> {
    if k == 0 {
        return Err(LabError::InvalidInput("family index k must be >= 1".into()));
    }
    Ok(IntMatrix3([[0, 0, 1], [0, 1, -1], [-1, -1, k as i64]]))
}

/// Exact inverse of a unimodular integer matrix (adjugate divided by ±1).
pub fn invert_unimodular(m: &IntMatrix3) -> Result<IntMatrix3> {
    let det = m.det();
    if det.abs() != 1 {
        return Err(LabError::NotUnimodular(det));
    }
    let a = &m.0;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    // adjugate = transpose of cofactor matrix
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let mut out = [[0i64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = adj[i][j] * det;
        }
    }
    Ok(IntMatrix3(out))
}

/// Hyperbolicity type of a real, simple spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplittingClass {
    /// Two expanding directions (strong and weak unstable) and one stable.
    ExpandingPair,
    /// One unstable direction and two contracting (center and stable).
    ContractingPair,
    NonHyperbolic,
}

/// Three real eigenvalues, sorted ascending by modulus, with unit eigendirections.
///
/// Index 0 is the stable direction, 1 the middle (weak unstable or center),
/// 2 the strong direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splitting {
    pub values: [f64; 3],
    pub directions: [Vector3<f64>; 3],
    pub class: SplittingClass,
}

impl Splitting {
    pub const STABLE: usize = 0;
    pub const MIDDLE: usize = 1;
    pub const STRONG: usize = 2;

    pub fn log_moduli(&self) -> [f64; 3] {
        self.values.map(|v| v.abs().ln())
    }

    pub fn stable(&self) -> f64 {
        self.values[Self::STABLE]
    }

    pub fn middle(&self) -> f64 {
        self.values[Self::MIDDLE]
    }

    pub fn strong(&self) -> f64 {
        self.values[Self::STRONG]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Spectrum {
    Real(Splitting),
    /// Discriminant zero: a repeated eigenvalue (e.g. the identity).
    Repeated { values: [f64; 3] },
    /// One real root and a complex-conjugate pair.
    Complex { real_root: f64, pair_modulus: f64 },
}

impl Spectrum {
    pub fn splitting(&self) -> Option<&Splitting> {
        match self {
            Spectrum::Real(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Spectrum::Complex { .. })
    }
}

/// Eigenvalues and eigendirections of an integer matrix.
pub fn eigen_splitting(m: &IntMatrix3) -> Spectrum {
    let poly = m.char_poly();
    let disc = poly.discriminant();
    if disc < 0 {
        let t = poly.trace as f64;
        let s = poly.minor_sum as f64;
        let disc_d = (t * t - 3.0 * s).max(0.0);
        let bound = 1.0 + [poly.trace, poly.minor_sum, poly.det].iter().map(|c| c.unsigned_abs() as f64).fold(0.0, f64::max);
        // single real root: the cubic is monotone or the root lies outside the critical band
        let c_lo = (t - disc_d.sqrt()) / 3.0;
        let c_hi = (t + disc_d.sqrt()) / 3.0;
        let root = if poly.eval(c_lo).signum() == poly.eval(c_hi).signum() && disc_d > 0.0 {
            if poly.eval(c_hi) > 0.0 {
                poly.root_in(-bound, c_lo)
            } else {
                poly.root_in(c_hi, bound)
            }
        } else {
            poly.root_in(-bound, bound)
        };
        let pair_modulus = (poly.det as f64 / root).abs().sqrt();
        return Spectrum::Complex { real_root: root, pair_modulus };
    }
    let mut roots = poly.real_roots();
    roots.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    if disc == 0 {
        return Spectrum::Repeated { values: roots };
    }
    let mf = m.to_f64();
    let directions = roots.map(|mu| eigendirection(&mf, mu));
    let moduli = roots.map(f64::abs);
    let class = if moduli[0] < 1.0 && moduli[1] > 1.0 && moduli[2] > 1.0 {
        SplittingClass::ExpandingPair
    } else if moduli[0] < 1.0 && moduli[1] < 1.0 && moduli[2] > 1.0 {
        SplittingClass::ContractingPair
    } else {
        SplittingClass::NonHyperbolic
    };
    Spectrum::Real(Splitting { values: roots, directions, class })
}

/// Unit null vector of `M − μI` for a simple eigenvalue, sign fixed so that the
/// first coordinate with modulus above 1e-12 is positive.
fn eigendirection(m: &Matrix3<f64>, mu: f64) -> Vector3<f64> {
    let b = m - Matrix3::identity() * mu;
    let rows = [b.row(0).transpose(), b.row(1).transpose(), b.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let mut v = candidates
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or_else(Vector3::x);
    v /= v.norm();
    // one step of inverse iteration tightens the residual to round-off
    if let Some(inv) = (b + Matrix3::identity() * (1e-9 * mu.abs().max(1.0))).try_inverse() {
        let w = inv * v;
        if w.norm().is_finite() && w.norm() > 0.0 {
            v = w / w.norm();
        }
    }
    if let Some(first) = v.iter().copied().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            v = -v;
        }
    }
    v
}

/// Point of the torus `R³/Z³`, coordinates in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint(pub Vector3<f64>);

/// Point of the universal cover `R³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftPoint(pub Vector3<f64>);

#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Representative of `x` in `[-1/2, 1/2)`.
#[inline]
pub fn wrap_centered(x: f64) -> f64 {
    x - x.round()
}

impl TorusPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        TorusPoint(Vector3::new(wrap_unit(x), wrap_unit(y), wrap_unit(z)))
    }

    pub fn lift(&self) -> LiftPoint {
        LiftPoint(self.0)
    }

    /// Euclidean distance in the flat torus metric.
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        torus_delta(&self.0, &other.0).norm()
    }
}

impl LiftPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        LiftPoint(Vector3::new(x, y, z))
    }
}

/// Shortest displacement from `b` to `a` on the torus.
#[inline]
pub fn torus_delta(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    (a - b).map(wrap_centered)
}

pub fn reduce_to_torus(p: &LiftPoint) -> TorusPoint {
    TorusPoint(p.0.map(wrap_unit))
}

/// Representative of `p` within 1/2 of `anchor` in every coordinate.
pub fn lift_near(p: &TorusPoint, anchor: &LiftPoint) -> LiftPoint {
    LiftPoint(p.0 + (anchor.0 - p.0).map(f64::round))
}

/// Affine chart aligned with an eigenframe. Coordinates are ordered
/// (strong, middle, stable), i.e. `(c_su, c_wu, c_s)` for an expanding pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenChart {
    /// Columns are the strong, middle and stable unit directions.
    pub frame: Matrix3<f64>,
    pub inverse: Matrix3<f64>,
}

impl EigenChart {
    pub const STRONG: usize = 0;
    pub const MIDDLE: usize = 1;
    pub const STABLE: usize = 2;

    pub fn new(splitting: &Splitting) -> Result<Self> {
        let d = &splitting.directions;
        let frame = Matrix3::from_columns(&[d[Splitting::STRONG], d[Splitting::MIDDLE], d[Splitting::STABLE]]);
        let svd = frame.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 0.0) || smax / smin > 1e8 {
            return Err(LabError::SingularFrame(if smin > 0.0 { smax / smin } else { f64::INFINITY }));
        }
        let inverse = frame.try_inverse().ok_or(LabError::SingularFrame(f64::INFINITY))?;
        Ok(EigenChart { frame, inverse })
    }

    /// Coefficients of a displacement vector in the eigenframe.
    #[inline]
    pub fn coefficients(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.inverse * v
    }

    #[inline]
    pub fn vector(&self, c: &Vector3<f64>) -> Vector3<f64> {
        self.frame * c
    }

    /// Chart coordinates of `p` relative to `base`, using the representative of
    /// `p` nearest to the base.
    pub fn coordinates(&self, p: &TorusPoint, base: &TorusPoint) -> Vector3<f64> {
        let lifted = lift_near(p, &base.lift());
        self.inverse * (lifted.0 - base.0)
    }

    pub fn point(&self, c: &Vector3<f64>, base: &TorusPoint) -> TorusPoint {
        reduce_to_torus(&LiftPoint(base.0 + self.frame * c))
    }

    pub fn direction(&self, index: usize) -> Vector3<f64> {
        self.frame.column(index).into_owned()
    }
}

/// Free-function form of [`EigenChart::coordinates`].
pub fn chart_coordinates(p: &TorusPoint, base: &TorusPoint, frame: &Splitting) -> Result<Vector3<f64>> {
    Ok(EigenChart::new(frame)?.coordinates(p, base))
}

/// Smallest family index with three distinct real eigenvalues.
pub fn smallest_real_family_member(max_k: u32) -> Option<u32> {
    (1..=max_k).find(|&k| family_matrix(k).map(|m| m.char_poly().discriminant() > 0).unwrap_or(false))
}
