//! Conditional measures of volume along center leaves inside foliated boxes.
//!
//! A box is a product `|c_strong| < δ_su, |c_mid| < δ_c, |c_stable| < δ_s` in
//! the eigenchart of the linear part around a base point. Each orbit point in
//! the box is carried along its estimated center curve to the section
//! `c_mid = 0`; the landing point gives the leaf label `(su, s)`, and the
//! point's own `c_mid` is its position on the leaf. (Center curves cross the
//! section transversally, so `c_mid` is a monotone leaf parameter; arclength
//! is reported too but overruns `[−δ_c, δ_c]` where the leaves are steep.) Points are
//! binned by label on a `G × G` grid and each bin keeps a histogram of leaf
//! positions with `B` cells across `[−δ_c, δ_c]`.
//!
//! The center bundle of every map in the family lies in the invariant plane
//! `span(e_mid, e_stable)`, so the strong coordinate is constant along center
//! curves and only the stable coordinate of the label needs tracing.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lyapunov::{center_direction_adaptive, trace_center_curve};
use crate::system::DASystem;
use crate::torus::{reduce_to_torus, torus_delta, LiftPoint, TorusPoint};

pub const DEFAULT_CELLS: usize = 512;
pub const DEFAULT_GRID: usize = 6;
/// Short along the center and wide along the stable direction, because the
/// perturbed center leaves are steep in the linear chart.
pub const DEFAULT_HALF_WIDTHS: [f64; 3] = [0.1, 0.02, 0.2];
pub const MIN_BIN_POINTS: u64 = 100;
pub const MIN_QUALIFYING_BINS: usize = 30;
pub const DEFAULT_MASS_THRESHOLD: f64 = 0.3;
/// Overflow fraction above which a box should be shrunk.
pub const OVERFLOW_LIMIT: f64 = 0.05;

/// Deterministic orbit `f^{burn_in+1}(x0), f^{burn_in+2}(x0), …`.
#[derive(Debug, Clone)]
pub struct OrbitStream<'a> {
    sys: &'a DASystem,
    current: TorusPoint,
}

impl Iterator for OrbitStream<'_> {
    type Item = TorusPoint;

    fn next(&mut self) -> Option<TorusPoint> {
        self.current = self.sys.apply_f(&self.current);
        Some(self.current)
    }
}

/// Orbit stream of length `n` after `burn_in` iterates. When `x0` is `None` the
/// start is drawn from a ChaCha8 generator seeded with `seed`.
pub fn sample_orbit<'a>(
    sys: &'a DASystem,
    x0: Option<TorusPoint>,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> std::iter::Take<OrbitStream<'a>> {
    let start = x0.unwrap_or_else(|| DASystem::random_point(&mut ChaCha8Rng::seed_from_u64(seed)));
    let mut stream = OrbitStream { sys, current: start };
    for _ in 0..burn_in {
        stream.next();
    }
    stream.take(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoliatedBox {
    pub base: TorusPoint,
    /// `(δ_su, δ_c, δ_s)` in chart units.
    pub half_widths: [f64; 3],
    /// Transversal grid size `G` (bins over the `(su, s)` label).
    pub grid: usize,
    /// Histogram cells `B` along the center coordinate.
    pub cells: usize,
}

impl FoliatedBox {
    pub fn new(base: TorusPoint, half_widths: [f64; 3], grid: usize, cells: usize) -> Result<Self> {
        let b = FoliatedBox { base, half_widths, grid, cells };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.half_widths.iter().any(|w| !(*w > 0.0 && *w < 0.25)) {
            return Err(LabError::InvalidInput(format!("box half-widths must lie in (0, 0.25), got {:?}", self.half_widths)));
        }
        // the minimal-image lift around the base must cover the whole box
        if self.half_widths.iter().sum::<f64>() >= 0.5 {
            return Err(LabError::InvalidInput("box half-widths must sum to less than 0.5".into()));
        }
        if self.grid == 0 || self.cells == 0 {
            return Err(LabError::InvalidInput("grid and cells must be positive".into()));
        }
        Ok(())
    }

    /// Center extent `L = 2 δ_c`.
    pub fn center_extent(&self) -> f64 {
        2.0 * self.half_widths[1]
    }

    pub fn contains(&self, c: &Vector3<f64>) -> bool {
        (0..3).all(|i| c[i].abs() < self.half_widths[i])
    }

    /// Bin index of a leaf label `(su, s)`, or `None` outside the transversal.
    pub fn bin_of(&self, su: f64, s: f64) -> Option<usize> {
        let g = self.grid as f64;
        let a = ((su + self.half_widths[0]) / (2.0 * self.half_widths[0]) * g).floor();
        let b = ((s + self.half_widths[2]) / (2.0 * self.half_widths[2]) * g).floor();
        if a < 0.0 || b < 0.0 || a >= g || b >= g {
            return None;
        }
        Some(a as usize * self.grid + b as usize)
    }

    /// Cell index of a leaf position in `[−δ_c, δ_c)`.
    pub fn cell_of(&self, t: f64) -> Option<usize> {
        let d = self.half_widths[1];
        let k = ((t + d) / (2.0 * d) * self.cells as f64).floor();
        if k < 0.0 || k >= self.cells as f64 {
            return None;
        }
        Some(k as usize)
    }
}

/// Where a box point lands after projection along its center curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Landed { su: f64, s: f64, position: f64, arclength: f64 },
    /// The center curve left the box before reaching the section.
    Exited,
    /// The center direction could not be resolved.
    Failed,
}

/// Number of midpoint steps used to cover `δ_c` when projecting.
const PROJECTION_STEPS: usize = 24;

/// Carry the box point with chart coordinates `c` to the section `c_mid = 0`.
pub fn project_to_section(sys: &DASystem, b: &FoliatedBox, c: &Vector3<f64>) -> Projection {
    let chart = &sys.chart;
    let h_max = b.half_widths[1] / PROJECTION_STEPS as f64;
    let dir_at = |q: &Vector3<f64>| -> Option<Vector3<f64>> {
        let p = chart.point(q, &b.base);
        center_direction_adaptive(sys, &p).ok().map(|d| chart.coefficients(&d))
    };
    let mut q = *c;
    let mut travelled = 0.0;
    // orientation: move toward the section
    let toward = -q[1].signum();
    // steep leaves travel mostly along the stable direction before reaching the section
    let max_len = 4.0 * (b.half_widths[1] + b.half_widths[2]);
    let max_steps = (max_len / h_max).ceil() as usize + 8;
    for _ in 0..max_steps {
        if q[1] == 0.0 {
            break;
        }
        let Some(mut d) = dir_at(&q) else { return Projection::Failed };
        if d[1] * toward < 0.0 {
            d = -d;
        }
        if d[1].abs() < 1e-3 {
            return Projection::Exited;
        }
        // d is unit in the ambient metric; chart speed along mid is d[1]
        let remaining = -q[1] / d[1];
        let h = remaining.min(h_max);
        let mid = q + d * (0.5 * h);
        let Some(mut dm) = dir_at(&mid) else { return Projection::Failed };
        if dm.dot(&d) < 0.0 {
            dm = -dm;
        }
        let next = q + dm * h;
        travelled += h;
        // snap once the step was aimed at the section and stayed close to it
        let crossed = next[1] * q[1] <= 0.0 || (h < h_max && next[1].abs() < 1e-12);
        q = next;
        if crossed {
            if next[1].abs() > 1e-9 {
                // overshoot from curvature: one linear correction along dm
                let back = next[1] / dm[1];
                q -= dm * back;
                travelled -= back;
            }
            q[1] = 0.0;
            break;
        }
        if travelled > max_len || q[0].abs() >= b.half_widths[0] || q[2].abs() >= b.half_widths[2] {
            return Projection::Exited;
        }
    }
    if q[1] != 0.0 {
        return Projection::Exited;
    }
    if q[0].abs() >= b.half_widths[0] || q[2].abs() >= b.half_widths[2] {
        return Projection::Exited;
    }
    Projection::Landed { su: q[0], s: q[2], position: c[1], arclength: -toward * travelled }
}

/// Per-bin counts and center-position histograms for one box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalHistogram {
    pub foliated_box: FoliatedBox,
    pub bin_counts: Vec<u64>,
    /// Row-major `G² × B` cell counts.
    pub cell_counts: Vec<u64>,
    pub total_points: u64,
    /// Box points whose projection left the box or failed.
    pub overflow: u64,
    /// Stream points that were not in the box.
    pub outside: u64,
}

impl ConditionalHistogram {
    pub fn empty(b: &FoliatedBox) -> Self {
        let bins = b.grid * b.grid;
        ConditionalHistogram {
            foliated_box: b.clone(),
            bin_counts: vec![0; bins],
            cell_counts: vec![0; bins * b.cells],
            total_points: 0,
            overflow: 0,
            outside: 0,
        }
    }

    pub fn record(&mut self, bin: usize, cell: usize) {
        self.bin_counts[bin] += 1;
        self.cell_counts[bin * self.foliated_box.cells + cell] += 1;
        self.total_points += 1;
    }

    pub fn merge(&mut self, other: &ConditionalHistogram) -> Result<()> {
        if other.foliated_box != self.foliated_box {
            return Err(LabError::InvalidInput("cannot merge histograms of different boxes".into()));
        }
        for (a, b) in self.bin_counts.iter_mut().zip(&other.bin_counts) {
            *a += b;
        }
        for (a, b) in self.cell_counts.iter_mut().zip(&other.cell_counts) {
            *a += b;
        }
        self.total_points += other.total_points;
        self.overflow += other.overflow;
        self.outside += other.outside;
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.bin_counts.len()
    }

    pub fn cells(&self, bin: usize) -> &[u64] {
        let b = self.foliated_box.cells;
        &self.cell_counts[bin * b..(bin + 1) * b]
    }

    /// Normalized conditional masses of one bin; `None` for empty bins.
    pub fn conditional(&self, bin: usize) -> Option<Vec<f64>> {
        let n = self.bin_counts[bin];
        if n == 0 {
            return None;
        }
        Some(self.cells(bin).iter().map(|&c| c as f64 / n as f64).collect())
    }

    /// Center-position histogram of all recorded points, normalized.
    pub fn marginal(&self) -> Vec<f64> {
        let b = self.foliated_box.cells;
        let mut m = vec![0.0; b];
        if self.total_points == 0 {
            return m;
        }
        for bin in 0..self.bins() {
            for (k, &c) in self.cells(bin).iter().enumerate() {
                m[k] += c as f64;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.total_points as f64);
        m
    }

    pub fn overflow_fraction(&self) -> f64 {
        let inside = self.total_points + self.overflow;
        if inside == 0 {
            0.0
        } else {
            self.overflow as f64 / inside as f64
        }
    }

    pub fn qualifying_bins(&self) -> Vec<usize> {
        (0..self.bins()).filter(|&b| self.bin_counts[b] >= MIN_BIN_POINTS).collect()
    }
}

/// Bin every box point of `stream` by its projected leaf label.
pub fn accumulate_box<I>(sys: &DASystem, b: &FoliatedBox, stream: I) -> Result<ConditionalHistogram>
where
    I: IntoIterator<Item = TorusPoint>,
{
    b.validate()?;
    let mut hist = ConditionalHistogram::empty(b);
    let mut inside = Vec::new();
    for p in stream {
        let c = sys.chart.coordinates(&p, &b.base);
        if b.contains(&c) {
            inside.push(c);
        } else {
            hist.outside += 1;
        }
    }
    let projections: Vec<Projection> = inside.par_iter().map(|c| project_to_section(sys, b, c)).collect();
    for pr in projections {
        match pr {
            Projection::Landed { su, s, position, .. } => match (b.bin_of(su, s), b.cell_of(position)) {
                (Some(bin), Some(cell)) => hist.record(bin, cell),
                _ => hist.overflow += 1,
            },
            Projection::Exited | Projection::Failed => hist.overflow += 1,
        }
    }
    Ok(hist)
}

/// Largest mass of a window covering `w` cells (fractional `w` takes the
/// partial cell at either end).
pub fn max_window_mass(masses: &[f64], w: f64) -> f64 {
    let n = masses.len();
    if n == 0 {
        return 0.0;
    }
    if w >= n as f64 {
        return masses.iter().sum();
    }
    let full = w.floor() as usize;
    let frac = w - full as f64;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + masses[i];
    }
    let mut best: f64 = 0.0;
    for start in 0..=(n - full) {
        let core = prefix[start + full] - prefix[start];
        let left = if start > 0 { masses[start - 1] } else { 0.0 };
        let right = if start + full < n { masses[start + full] } else { 0.0 };
        best = best.max(core + frac * left.max(right));
    }
    best
}

fn window_cells(hist: &ConditionalHistogram, epsilon: f64) -> Result<f64> {
    let l = hist.foliated_box.center_extent();
    if !(epsilon > 0.0 && epsilon <= l) {
        return Err(LabError::InvalidInput(format!("epsilon must lie in (0, L = {l}]")));
    }
    Ok(epsilon * hist.foliated_box.cells as f64 / l)
}

fn require_bins(hist: &ConditionalHistogram) -> Result<Vec<usize>> {
    let q = hist.qualifying_bins();
    if q.len() < MIN_QUALIFYING_BINS {
        return Err(LabError::InsufficientData(format!(
            "{} bins hold at least {MIN_BIN_POINTS} points; {MIN_QUALIFYING_BINS} are required",
            q.len()
        )));
    }
    Ok(q)
}

/// Median over qualifying bins of the largest conditional mass in a window of
/// center length `epsilon`.
pub fn atomicity_statistic(hist: &ConditionalHistogram, epsilon: f64) -> Result<f64> {
    let w = window_cells(hist, epsilon)?;
    let bins = require_bins(hist)?;
    let mut stats: Vec<f64> = bins
        .iter()
        .map(|&b| max_window_mass(&hist.conditional(b).expect("qualifying bin is nonempty"), w))
        .collect();
    Ok(crate::lyapunov::median(&mut stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAtoms {
    pub bin: usize,
    pub points: u64,
    pub top_mass: f64,
    pub atoms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomReport {
    pub epsilon: f64,
    pub mass_threshold: f64,
    pub concentration: f64,
    pub atom_count_mode: usize,
    pub fraction_at_mode: f64,
    pub fraction_single: f64,
    pub bins: Vec<BinAtoms>,
    pub orbit_length: u64,
    pub overflow_fraction: f64,
    pub overflow_exceeded: bool,
}

/// Greedy cluster extraction: repeatedly take the heaviest `w`-cell window,
/// count it when it holds at least `threshold`, and clear it together with a
/// margin of `w` cells on each side so that clusters are `ε`-separated.
pub fn count_clusters(masses: &[f64], w: f64, threshold: f64) -> usize {
    let mut m = masses.to_vec();
    let n = m.len();
    let span = w.ceil().max(1.0) as usize;
    let mut count = 0;
    loop {
        let mut best = (0.0, 0usize);
        let mut acc: f64 = m[..span.min(n)].iter().sum();
        if acc > best.0 {
            best = (acc, 0);
        }
        for start in 1..=n.saturating_sub(span) {
            acc += m[start + span - 1] - m[start - 1];
            if acc > best.0 + 1e-15 {
                best = (acc, start);
            }
        }
        if best.0 < threshold {
            break;
        }
        count += 1;
        let lo = best.1.saturating_sub(span);
        let hi = (best.1 + 2 * span).min(n);
        m[lo..hi].iter_mut().for_each(|v| *v = 0.0);
        if count > n {
            break;
        }
    }
    count
}

pub fn atom_count(hist: &ConditionalHistogram, epsilon: f64, mass_threshold: f64) -> Result<AtomReport> {
    if !(mass_threshold > 0.0 && mass_threshold <= 1.0) {
        return Err(LabError::InvalidInput("mass_threshold must lie in (0, 1]".into()));
    }
    let w = window_cells(hist, epsilon)?;
    let qualifying = require_bins(hist)?;
    let bins: Vec<BinAtoms> = qualifying
        .iter()
        .map(|&b| {
            let m = hist.conditional(b).expect("qualifying bin is nonempty");
            BinAtoms {
                bin: b,
                points: hist.bin_counts[b],
                top_mass: max_window_mass(&m, w),
                atoms: count_clusters(&m, w, mass_threshold),
            }
        })
        .collect();
    let max_count = bins.iter().map(|b| b.atoms).max().unwrap_or(0);
    let mut freq = vec![0usize; max_count + 1];
    for b in &bins {
        freq[b.atoms] += 1;
    }
    // ties resolve to the smaller count
    let mode = (0..freq.len()).max_by_key(|&k| (freq[k], std::cmp::Reverse(k))).unwrap_or(0);
    let mut tops: Vec<f64> = bins.iter().map(|b| b.top_mass).collect();
    let nb = bins.len() as f64;
    Ok(AtomReport {
        epsilon,
        mass_threshold,
        concentration: crate::lyapunov::median(&mut tops),
        atom_count_mode: mode,
        fraction_at_mode: freq[mode] as f64 / nb,
        fraction_single: freq.get(1).copied().unwrap_or(0) as f64 / nb,
        bins,
        orbit_length: hist.total_points + hist.overflow + hist.outside,
        overflow_fraction: hist.overflow_fraction(),
        overflow_exceeded: hist.overflow_fraction() >= OVERFLOW_LIMIT,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionProbe {
    /// Max pairwise torus distance of the probe points after each step (index 0 is the start).
    pub distances: Vec<f64>,
    /// Least-squares slope of `log distance` over the steps where the distance
    /// lies in `[1e-11, 0.05]`; `None` with fewer than 5 such steps.
    pub slope: Option<f64>,
}

/// Place 10 points along the center curve through `x`, iterate them together
/// and record their spread.
pub fn center_contraction_probe(sys: &DASystem, x: &TorusPoint, arc: f64, n_steps: usize) -> Result<ContractionProbe> {
    if !(arc > 0.0) {
        return Err(LabError::InvalidInput("arc must be positive".into()));
    }
    let curve = trace_center_curve(sys, x, arc, 90)?;
    let mut pts: Vec<TorusPoint> = curve.iter().step_by(10).map(|p| reduce_to_torus(&LiftPoint(*p))).collect();
    let spread = |pts: &[TorusPoint]| -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                d = d.max(torus_delta(&a.0, &b.0).norm());
            }
        }
        d
    };
    let mut distances = Vec::with_capacity(n_steps + 1);
    distances.push(spread(&pts));
    for _ in 0..n_steps {
        pts.iter_mut().for_each(|p| *p = sys.apply_f(p));
        distances.push(spread(&pts));
    }
    Ok(ContractionProbe { slope: log_slope(&distances, 1e-11, 0.05), distances })
}

/// Least-squares slope of `ln d_t` against `t` over entries within `[lo, hi]`.
pub fn log_slope(d: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = d
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= lo && **v <= hi)
        .map(|(t, v)| (t as f64, v.ln()))
        .collect();
    if pts.len() < 5 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(sxy / sxx)
}

/// Default box: centered at the point antipodal to the perturbation center.
pub fn default_box(sys: &DASystem, grid: usize) -> Result<FoliatedBox> {
    let c = sys.perturbation_center();
    let base = TorusPoint::new(c.0[0] + 0.5, c.0[1] + 0.5, c.0[2] + 0.5);
    let base = reduce_to_torus(&LiftPoint(base.0));
    FoliatedBox::new(base, DEFAULT_HALF_WIDTHS, grid, DEFAULT_CELLS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::DASpec;
    use approx::assert_abs_diff_eq;

    fn synthetic(masses_per_bin: &[Vec<u64>], cells: usize) -> ConditionalHistogram {
        let b = FoliatedBox::new(TorusPoint::new(0.5, 0.5, 0.5), [0.1, 0.1, 0.1], 6, cells).unwrap();
        let mut h = ConditionalHistogram::empty(&b);
        for (bin, counts) in masses_per_bin.iter().enumerate() {
            for (cell, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    h.record(bin, cell);
                }
            }
        }
        h
    }

    #[test]
    fn uniform_histogram_gives_window_fraction() {
        let bins: Vec<Vec<u64>> = (0..36).map(|_| vec![1; 512]).collect();
        let h = synthetic(&bins, 512);
        let l = h.foliated_box.center_extent();
        let stat = atomicity_statistic(&h, l / 100.0).unwrap();
        assert_abs_diff_eq!(stat, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn spike_histogram_gives_one() {
        let bins: Vec<Vec<u64>> = (0..36)
            .map(|b| {
                let mut v = vec![0; 512];
                v[(b * 13) % 512] = 150;
                v
            })
            .collect();
        let h = synthetic(&bins, 512);
        let l = h.foliated_box.center_extent();
        assert_abs_diff_eq!(atomicity_statistic(&h, l / 100.0).unwrap(), 1.0, epsilon = 1e-12);
        let rep = atom_count(&h, l / 100.0, 0.3).unwrap();
        assert_eq!(rep.atom_count_mode, 1);
        assert_eq!(rep.fraction_single, 1.0);
    }

    #[test]
    fn two_spikes_give_two_atoms() {
        let bins: Vec<Vec<u64>> = (0..36)
            .map(|_| {
                let mut v = vec![0; 512];
                v[100] = 100;
                v[400] = 100;
                v
            })
            .collect();
        let h = synthetic(&bins, 512);
        let l = h.foliated_box.center_extent();
        assert_eq!(atom_count(&h, l / 100.0, 0.3).unwrap().atom_count_mode, 2);
    }

    #[test]
    fn too_few_bins_is_insufficient() {
        let bins: Vec<Vec<u64>> = (0..5).map(|_| vec![1; 512]).collect();
        let h = synthetic(&bins, 512);
        assert!(matches!(atomicity_statistic(&h, 0.002), Err(LabError::InsufficientData(_))));
    }

    #[test]
    fn window_mass_fractional() {
        let m = vec![0.25; 4];
        assert_abs_diff_eq!(max_window_mass(&m, 1.5), 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(max_window_mass(&m, 10.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_stream_matches_linear_images() {
        let sys = DASystem::new(&DASpec::linear(5, true)).unwrap();
        let x0 = TorusPoint::new(0.1, 0.2, 0.3);
        let s: Vec<TorusPoint> = sample_orbit(&sys, Some(x0), 3, 0, 0).collect();
        let mut y = x0;
        for p in s {
            y = sys.apply_linear(&y);
            assert_eq!(p, y);
        }
    }

    #[test]
    fn empty_stream_histogram() {
        let sys = DASystem::new(&DASpec::linear(5, true)).unwrap();
        let b = default_box(&sys, 10).unwrap();
        let h = accumulate_box(&sys, &b, std::iter::empty()).unwrap();
        assert_eq!(h.total_points, 0);
        assert!(h.conditional(0).is_none());
    }

    #[test]
    fn linear_projection_is_exact() {
        let sys = DASystem::new(&DASpec::linear(5, true)).unwrap();
        let b = default_box(&sys, 10).unwrap();
        let c = Vector3::new(0.03, -0.07, 0.02);
        match project_to_section(&sys, &b, &c) {
            Projection::Landed { su, s, position, arclength } => {
                assert_abs_diff_eq!(su, 0.03, epsilon = 1e-12);
                assert_abs_diff_eq!(s, 0.02, epsilon = 1e-12);
                assert_abs_diff_eq!(position, -0.07, epsilon = 1e-12);
                assert_abs_diff_eq!(arclength, -0.07, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_boxes_rejected() {
        let p = TorusPoint::new(0.0, 0.0, 0.0);
        assert!(FoliatedBox::new(p, [0.3, 0.1, 0.1], 4, 8).is_err());
        assert!(FoliatedBox::new(p, [0.2, 0.2, 0.2], 4, 8).is_err());
        assert!(FoliatedBox::new(p, [0.1, 0.1, 0.1], 0, 8).is_err());
    }

    #[test]
    fn identical_points_have_zero_spread() {
        let sys = DASystem::new(&DASpec::standard()).unwrap();
        let x = TorusPoint::new(0.3, 0.6, 0.1);
        let mut a = x;
        let mut b = x;
        for _ in 0..50 {
            a = sys.apply_f(&a);
            b = sys.apply_f(&b);
            assert_eq!(torus_delta(&a.0, &b.0).norm(), 0.0);
        }
    }
}
