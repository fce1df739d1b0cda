//! JSON run configuration.
//!
//! Every section is optional and falls back to the defaults below. Loading
//! a config parses it, fills in defaults, and builds the world, schedule,
//! sampler, trajectory and condition views; any failure is reported as a
//! [`ConfigError`] anchored to the offending line when one can be found.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::{plan_single_target, plan_spin, Pose, PoseOffset, Trajectory, DEFAULT_MAX_STEP};
use crate::error::Error;
use crate::pnm::read_pnm;
use crate::samplers::{GivenView, Sampler, SamplerConfig, Variant};
use crate::schedule::NoiseSchedule;
use crate::toyworld::{ToyWorld, ToyWorldParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OUTPUT_DIR: &str = "viewfusion-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

fn default_max_step_deg() -> f64 {
    DEFAULT_MAX_STEP.to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Spin {
        delta_deg: f64,
        n_views: usize,
    },
    SingleTarget {
        azimuth_deg: f64,
        #[serde(default)]
        elevation_deg: f64,
        #[serde(default)]
        distance: f64,
        #[serde(default = "default_max_step_deg")]
        max_step_deg: f64,
    },
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::Spin {
            delta_deg: 22.5,
            n_views: 16,
        }
    }
}

impl TrajectorySpec {
    pub fn plan(&self) -> crate::error::Result<Trajectory> {
        match *self {
            TrajectorySpec::Spin { delta_deg, n_views } => plan_spin(delta_deg.to_radians(), n_views),
            TrajectorySpec::SingleTarget {
                azimuth_deg,
                elevation_deg,
                distance,
                max_step_deg,
            } => plan_single_target(
                PoseOffset::new(azimuth_deg.to_radians(), elevation_deg.to_radians(), distance),
                max_step_deg.to_radians(),
            ),
        }
    }

    pub fn is_spin(&self) -> bool {
        matches!(self, TrajectorySpec::Spin { .. })
    }
}

/// A given view: either rendered from the world at `mode`, or loaded from a
/// PGM/PPM file (relative paths resolve against the config's directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    #[serde(default)]
    pub azimuth_deg: f64,
    #[serde(default)]
    pub elevation_deg: f64,
    #[serde(default)]
    pub distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl ConditionSpec {
    pub fn pose(&self) -> Pose {
        Pose::from_degrees(self.azimuth_deg, self.elevation_deg, self.distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSpec {
    pub start: u64,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<u64>>,
}

impl Default for SeedSpec {
    fn default() -> Self {
        Self {
            start: 0,
            count: 1,
            list: None,
        }
    }
}

impl SeedSpec {
    pub fn single(seed: u64) -> Self {
        Self {
            start: seed,
            count: 1,
            list: None,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.list {
            Some(list) => list.clone(),
            None => (0..self.count as u64).map(|i| self.start + i).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub world: ToyWorldParams,
    pub schedule: ScheduleParams,
    pub sampler: SamplerConfig,
    pub trajectory: TrajectorySpec,
    pub conditions: Vec<ConditionSpec>,
    pub seeds: SeedSpec,
    /// Variants run by `compare`.
    pub variants: Vec<Variant>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            world: ToyWorldParams::default(),
            schedule: ScheduleParams::default(),
            sampler: SamplerConfig::default(),
            trajectory: TrajectorySpec::default(),
            conditions: vec![ConditionSpec {
                azimuth_deg: 0.0,
                elevation_deg: 0.0,
                distance: 0.0,
                mode: Some(1),
                path: None,
            }],
            seeds: SeedSpec::default(),
            variants: vec![Variant::Direct, Variant::InterpolatedDenoising],
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("config error")?;
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
        }
        if let Some(field) = &self.field {
            write!(f, ": `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        Self {
            line: None,
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    fn anchored(mut self, text: Option<&str>) -> Self {
        if let (Some(text), Some(field), None) = (text, &self.field, self.line) {
            self.line = find_key_line(text, field);
        }
        self
    }
}

/// 1-based line of the first occurrence of `"key"` followed by a colon.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| {
        l.find(&quoted)
            .is_some_and(|i| l[i + quoted.len()..].trim_start().starts_with(':'))
    })
    .map(|i| i + 1)
}

/// Everything a run needs, built and validated from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub world: ToyWorld,
    pub sampler: Sampler,
    pub trajectory: Trajectory,
    pub given: Vec<GivenView>,
    /// Mode shared by all synthetic conditions, if every condition is synthetic
    /// and they agree.
    pub truth_mode: Option<usize>,
}

impl RunConfig {
    /// Parses and validates JSON text. `base_dir` resolves relative condition paths.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<(Self, Experiment), ConfigError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            line: Some(e.line()),
            field: None,
            message: e.to_string(),
        })?;
        let experiment = config.build(base_dir).map_err(|e| e.anchored(Some(text)))?;
        Ok((config, experiment))
    }

    pub fn load(path: &Path) -> Result<(Self, Experiment), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            field: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Validates the config and constructs the run's components.
    pub fn build(&self, base_dir: &Path) -> Result<Experiment, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::field(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let world = ToyWorld::new(self.world).map_err(|e| self.field_error(e))?;
        if !matches!(self.world.channels, 1 | 3) {
            return Err(ConfigError::field("channels", "frames are written as PGM or PPM, so channels must be 1 or 3"));
        }
        let schedule = NoiseSchedule::linear(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
            .map_err(|e| self.field_error(e))?;
        let sampler = Sampler::new(schedule, self.sampler.clone()).map_err(|e| self.field_error(e))?;
        let trajectory = self.trajectory.plan().map_err(|e| self.field_error(e))?;

        if self.conditions.is_empty() {
            return Err(ConfigError::field("conditions", "at least one condition view is required"));
        }
        let mut given = Vec::with_capacity(self.conditions.len());
        for c in &self.conditions {
            let pose = c.pose();
            let image = match (c.mode, &c.path) {
                (Some(mode), None) => world.render(mode, &pose).map_err(|_| {
                    ConfigError::field("mode", format!("must be in 1..={}, got {mode}", world.modes()))
                })?,
                (None, Some(path)) => {
                    let full = base_dir.join(path);
                    let image = read_pnm(&full)
                        .map_err(|e| ConfigError::field("path", format!("{}: {e}", full.display())))?;
                    if image.dims() != world.grid_dims() {
                        return Err(ConfigError::field(
                            "path",
                            format!("{} is {}, world is {}", full.display(), image.dims(), world.grid_dims()),
                        ));
                    }
                    image
                }
                _ => return Err(ConfigError::field("conditions", "each condition needs exactly one of `mode` or `path`")),
            };
            given.push(GivenView { image, pose });
        }

        if self.seeds.seeds().is_empty() {
            return Err(ConfigError::field("seeds", "no seeds selected"));
        }
        let mut seen = HashSet::new();
        if let Some(v) = self.variants.iter().find(|v| !seen.insert(**v)) {
            return Err(ConfigError::field("variants", format!("`{v}` listed twice")));
        }

        let modes: HashSet<Option<usize>> = self.conditions.iter().map(|c| c.mode).collect();
        let truth_mode = match modes.into_iter().collect::<Vec<_>>()[..] {
            [Some(m)] => Some(m),
            _ => None,
        };
        Ok(Experiment {
            world,
            sampler,
            trajectory,
            given,
            truth_mode,
        })
    }

    fn field_error(&self, err: Error) -> ConfigError {
        match err {
            Error::InvalidArgument { name, reason } => {
                let key = match name {
                    "dims" => "height",
                    "beta" => "beta_start",
                    "sectors" => "count",
                    "delta" if self.trajectory.is_spin() => "delta_deg",
                    "delta" => "max_step_deg",
                    other => other,
                };
                ConfigError::field(key, reason)
            }
            other => ConfigError {
                line: None,
                field: None,
                message: other.to_string(),
            },
        }
    }
}
