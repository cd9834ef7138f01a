//! Experiment configuration: one JSON document, overridable field by field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::disintegration::{DEFAULT_CELLS, DEFAULT_GRID, DEFAULT_HALF_WIDTHS, DEFAULT_MASS_THRESHOLD};
use crate::error::{LabError, Result};
use crate::mme;
use crate::semiconj::{DEFAULT_PROBES, DEFAULT_REFINE_STEPS};
use crate::system::DASpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Spectrum,
    Exponents,
    Semiconj,
    Disintegrate,
    Mme,
    Sweep,
    Full,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Spectrum => "spectrum",
            Pipeline::Exponents => "exponents",
            Pipeline::Semiconj => "semiconj",
            Pipeline::Disintegrate => "disintegrate",
            Pipeline::Mme => "mme",
            Pipeline::Sweep => "sweep",
            Pipeline::Full => "full",
        }
    }
}

/// Lyapunov exponents and the partial-hyperbolicity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentKnobs {
    /// Iterates per orbit (after the burn-in).
    pub n: usize,
    /// Number of seeded start points.
    pub samples: usize,
    pub ph_probes: usize,
    /// Longest window of the partial-hyperbolicity ladder.
    pub ph_max_window: usize,
}

impl Default for ExponentKnobs {
    fn default() -> Self {
        ExponentKnobs { n: 1_000_000, samples: 10, ph_probes: 1000, ph_max_window: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiconjKnobs {
    pub grid_size: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub refine_steps: usize,
    /// Out-of-sample points for the residual.
    pub probes: usize,
    /// Random base points for the collapse statistic.
    pub collapse_points: usize,
    pub collapse_arc: f64,
    pub collapse_steps: usize,
    /// Center segments sampled for the quasi-isometry constant (0 skips it).
    pub quasi_isometry_samples: usize,
    /// Also write the full displacement grid (N³ rows).
    pub save_field: bool,
}

impl Default for SemiconjKnobs {
    fn default() -> Self {
        SemiconjKnobs {
            grid_size: 64,
            tol: 1e-4,
            max_iter: 200,
            refine_steps: DEFAULT_REFINE_STEPS,
            probes: DEFAULT_PROBES,
            collapse_points: 30,
            collapse_arc: 0.2,
            collapse_steps: 200,
            quasi_isometry_samples: 50,
            save_field: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisintegrationKnobs {
    /// Orbit lengths for the perturbed map (monotonicity is checked along this list).
    pub orbit_lengths: Vec<usize>,
    /// Orbit length for the amplitude-0 control (0 skips the control).
    pub control_orbit: usize,
    pub burn_in: usize,
    pub grid: usize,
    pub cells: usize,
    /// Chart half-widths (strong, middle, stable) of the foliated box.
    pub half_widths: [f64; 3],
    /// Window width as a fraction of the box's center extent.
    pub epsilon_fraction: f64,
    pub mass_threshold: f64,
}

impl Default for DisintegrationKnobs {
    fn default() -> Self {
        DisintegrationKnobs {
            orbit_lengths: vec![100_000, 1_000_000, 10_000_000],
            control_orbit: 10_000_000,
            burn_in: 1000,
            grid: DEFAULT_GRID,
            cells: DEFAULT_CELLS,
            half_widths: DEFAULT_HALF_WIDTHS,
            epsilon_fraction: 0.01,
            mass_threshold: DEFAULT_MASS_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmeKnobs {
    pub probes: usize,
    /// Pseudo-orbit length per probe.
    pub orbit: usize,
    pub fiber_grid: usize,
    /// Orbit length of the volume-typical control.
    pub volume_orbit: usize,
    /// Also bin the proxy samples in the foliated box.
    pub atomicity: bool,
}

impl Default for MmeKnobs {
    fn default() -> Self {
        MmeKnobs {
            probes: mme::DEFAULT_PROBES,
            orbit: mme::DEFAULT_ORBIT,
            fiber_grid: mme::DEFAULT_FIBER_GRID,
            volume_orbit: 1_000_000,
            atomicity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepKnobs {
    pub k_values: Vec<u32>,
    pub amplitudes: Vec<f64>,
    /// Iterates per cell for the exponents.
    pub n: usize,
    pub ph_probes: usize,
    /// Also compute the atomicity statistic per cell.
    pub atomicity: bool,
    pub atomicity_orbit: usize,
}

impl Default for SweepKnobs {
    fn default() -> Self {
        SweepKnobs {
            k_values: vec![5],
            amplitudes: (0..=12).map(|i| i as f64 / 10.0).collect(),
            n: 100_000,
            ph_probes: 500,
            atomicity: false,
            atomicity_orbit: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "DASpec::standard")]
    pub spec: DASpec,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub exponents: ExponentKnobs,
    #[serde(default)]
    pub semiconj: SemiconjKnobs,
    #[serde(default)]
    pub disintegration: DisintegrationKnobs,
    #[serde(default)]
    pub mme: MmeKnobs,
    #[serde(default)]
    pub sweep: SweepKnobs,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(pipeline: Pipeline) -> Self {
        ExperimentConfig {
            spec: DASpec::standard(),
            pipeline,
            seed: 0,
            output_dir: default_output_dir(),
            exponents: ExponentKnobs::default(),
            semiconj: SemiconjKnobs::default(),
            disintegration: DisintegrationKnobs::default(),
            mme: MmeKnobs::default(),
            sweep: SweepKnobs::default(),
        }
    }

    /// Parse a config document; errors carry serde_json's line/column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::InvalidInput(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Apply `POINTER=VALUE` overrides. The value is parsed as JSON, falling back
    /// to a plain string; missing objects along the pointer are created.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (pointer, raw) = o
                .split_once('=')
                .ok_or_else(|| LabError::InvalidInput(format!("override {o:?} is not POINTER=VALUE")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_pointer(&mut doc, pointer, value)?;
        }
        serde_json::from_value(doc).map_err(|e| LabError::InvalidInput(format!("config after overrides: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let e = &self.exponents;
        if e.n < 1000 || e.samples == 0 {
            return Err(LabError::InvalidInput("exponents.n must be >= 1000 and exponents.samples >= 1".into()));
        }
        let d = &self.disintegration;
        if !(d.epsilon_fraction > 0.0 && d.epsilon_fraction <= 1.0) {
            return Err(LabError::InvalidInput("disintegration.epsilon_fraction must lie in (0, 1]".into()));
        }
        if self.sweep.k_values.is_empty() || self.sweep.amplitudes.is_empty() {
            return Err(LabError::InvalidInput("sweep ranges must be non-empty".into()));
        }
        if self.semiconj.collapse_points == 0 || !(self.semiconj.collapse_arc > 0.0) {
            return Err(LabError::InvalidInput("semiconj.collapse_points and collapse_arc must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, with the output directory blanked so
    /// that identical experiments written to different places hash alike.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Set `value` at a JSON pointer (`/a/b/0`; the leading slash is optional).
pub fn set_pointer(doc: &mut Value, pointer: &str, value: Value) -> Result<()> {
    let path = pointer.strip_prefix('/').unwrap_or(pointer);
    if path.is_empty() {
        return Err(LabError::InvalidInput("empty override pointer".into()));
    }
    let tokens: Vec<String> = path.split('/').map(|t| t.replace("~1", "/").replace("~0", "~")).collect();
    let mut node = doc;
    for (i, tok) in tokens.iter().enumerate() {
        let last = i + 1 == tokens.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(tok.clone(), value);
                    return Ok(());
                }
                map.entry(tok.clone()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = tok
                    .parse()
                    .map_err(|_| LabError::InvalidInput(format!("{pointer}: {tok:?} is not an array index")))?;
                if idx > items.len() || (idx == items.len() && !last) {
                    return Err(LabError::InvalidInput(format!("{pointer}: index {idx} out of range")));
                }
                if last {
                    if idx == items.len() {
                        items.push(value);
                    } else {
                        items[idx] = value;
                    }
                    return Ok(());
                }
                &mut items[idx]
            }
            _ => return Err(LabError::InvalidInput(format!("{pointer}: {tok:?} descends into a scalar"))),
        };
    }
    unreachable!("loop returns on the last token")
}

/// Per-unit seed: first eight bytes of SHA-256(label ‖ base).
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(base.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_pipeline_is_rejected() {
        let err = ExperimentConfig::from_json(r#"{"pipeline": "nonsense"}"#).unwrap_err();
        assert!(matches!(err, LabError::InvalidInput(_)));
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = ExperimentConfig::from_json("{\n\"pipeline\": \"spectrum\",\n\"sed\": 3}").unwrap_err();
        assert!(err.to_string().contains("sed"));
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_json(r#"{"pipeline": "spectrum"}"#).unwrap();
        assert_eq!(c, ExperimentConfig::new(Pipeline::Spectrum));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ExperimentConfig::new(Pipeline::Sweep)
            .with_overrides(&["/spec/k=7", "sweep/amplitudes=[0.5]", "/disintegration/half_widths/1=0.01", "seed=9"])
            .unwrap();
        assert_eq!(c.spec.k, 7);
        assert_eq!(c.sweep.amplitudes, vec![0.5]);
        assert_eq!(c.disintegration.half_widths[1], 0.01);
        assert_eq!(c.seed, 9);
        assert!(c.with_overrides(&["/spec/nope=1"]).is_err());
        assert!(c.with_overrides(&["pipeline=full"]).unwrap().pipeline == Pipeline::Full);
    }

    #[test]
    fn digest_ignores_output_dir() {
        let mut a = ExperimentConfig::new(Pipeline::Full);
        let d = a.digest();
        a.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.digest(), d);
        a.seed = 1;
        assert_ne!(a.digest(), d);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_eq!(derive_seed(3, "a"), derive_seed(3, "a"));
        assert_ne!(derive_seed(3, "a"), derive_seed(3, "b"));
        assert_ne!(derive_seed(3, "a"), derive_seed(4, "a"));
    }
}
