//! Grid search over `(k, θ0)` for a negative center exponent under partial hyperbolicity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, SweepKnobs};
use crate::disintegration::{accumulate_box, atomicity_statistic, default_box, sample_orbit, DEFAULT_GRID};
use crate::error::Result;
use crate::lyapunov::exponents_from_seed;
use crate::system::{DASpec, DASystem, PhOptions};

/// Jumps between adjacent amplitudes larger than this many combined standard
/// errors are counted as discontinuities.
pub const JUMP_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: u32,
    pub amplitude: f64,
    /// `log μ_wu` of the linearization.
    pub linear_center: Option<f64>,
    pub exponents: Option<[f64; 3]>,
    pub standard_error: Option<[f64; 3]>,
    pub ph_separated: bool,
    pub ph_first_window: Option<usize>,
    pub atomicity: Option<f64>,
    pub flagged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub flagged: usize,
    /// Largest `|Δλ^c|` between adjacent amplitudes, in combined standard errors.
    pub max_jump_sigma: f64,
    pub jumps: usize,
    /// Most negative center exponent among flagged cells.
    pub best: Option<(u32, f64, f64)>,
}

fn run_cell(base: &DASpec, k: u32, amplitude: f64, knobs: &SweepKnobs, seed: u64) -> SweepCell {
    let mut cell = SweepCell {
        k,
        amplitude,
        linear_center: None,
        exponents: None,
        standard_error: None,
        ph_separated: false,
        ph_first_window: None,
        atomicity: None,
        flagged: false,
        error: None,
    };
    let spec = DASpec { k, amplitude, ..base.clone() };
    let label = format!("sweep/{k}/{amplitude}");
    let outcome = (|| -> Result<()> {
        let sys = DASystem::new(&spec)?;
        let lin = sys.linear_exponents();
        cell.linear_center = Some(lin[1]);
        let e = exponents_from_seed(&sys, derive_seed(seed, &label), knobs.n)?;
        cell.exponents = Some(e.values());
        cell.standard_error = Some(e.standard_error);
        let ph = sys.validate_partial_hyperbolicity(
            knobs.ph_probes,
            &PhOptions { seed: derive_seed(seed, &format!("{label}/ph")), ..PhOptions::default() },
        )?;
        cell.ph_separated = ph.separated;
        cell.ph_first_window = ph.first_separated_window;
        cell.flagged = e.lambda_c < 0.0 && lin[1] > 0.0 && ph.separated;
        if knobs.atomicity {
            let b = default_box(&sys, DEFAULT_GRID)?;
            let orbit = sample_orbit(&sys, None, knobs.atomicity_orbit, 1000, derive_seed(seed, &format!("{label}/orbit")));
            let hist = accumulate_box(&sys, &b, orbit)?;
            cell.atomicity = atomicity_statistic(&hist, b.center_extent() / 100.0).ok();
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        cell.error = Some(e.to_string());
    }
    cell
}

/// Run every cell; failures are recorded per cell and the sweep continues.
pub fn sweep(base: &DASpec, knobs: &SweepKnobs, seed: u64) -> SweepResult {
    let grid: Vec<(u32, f64)> = knobs
        .k_values
        .iter()
        .flat_map(|&k| knobs.amplitudes.iter().map(move |&a| (k, a)))
        .collect();
    let cells: Vec<SweepCell> = grid.par_iter().map(|&(k, a)| run_cell(base, k, a, knobs, seed)).collect();

    let mut max_jump_sigma: f64 = 0.0;
    let mut jumps = 0;
    for pair in cells.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.k != b.k {
            continue;
        }
        if let (Some(ea), Some(eb), Some(sa), Some(sb)) = (a.exponents, b.exponents, a.standard_error, b.standard_error) {
            let sigma = (sa[1] * sa[1] + sb[1] * sb[1]).sqrt().max(1e-12);
            let z = (ea[1] - eb[1]).abs() / sigma;
            max_jump_sigma = max_jump_sigma.max(z);
            if z > JUMP_SIGMAS {
                jumps += 1;
            }
        }
    }
    let best = cells
        .iter()
        .filter(|c| c.flagged)
        .filter_map(|c| c.exponents.map(|e| (c.k, c.amplitude, e[1])))
        .min_by(|a, b| a.2.total_cmp(&b.2));
    SweepResult { flagged: cells.iter().filter(|c| c.flagged).count(), cells, max_jump_sigma, jumps, best }
}
