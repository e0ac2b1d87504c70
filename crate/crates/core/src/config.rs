//! Experiment configuration file (TOML).
//!
//! ```toml
//! schema_version = 1
//! seed = 42
//! divisors = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
//! estimators = ["baseline", "ekf_case1", "ekf_case2"]
//!
//! [sensor]
//! noise_enabled = true
//! sigma_max_deg = 15.0
//! # calibration_file = "calibration.toml"
//!
//! [ekf]
//! q_case1 = [1e-6, 1e-6]
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineConfig;
use crate::ekf::EkfConfig;
use crate::error::{Error, Result};
use crate::harness::{EstimatorKind, EstimatorSet, Harness, SimSettings, ALL_DIVISORS};
use crate::scenario::{builtin_scenarios, ScenarioCatalog};
use crate::uwb::{
    calibration_with_profile, Calibration, DispersionProfile, SensorModel, DEFAULT_SIGMA_MAX_DEG,
    DEFAULT_SIGMA_MIN_DEG, DEFAULT_WRAP_PROBABILITY_MAX, DISTANCE_SIGMA_M,
};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub noise_enabled: bool,
    pub distance_sigma_m: f64,
    /// Parametric dispersion profile, used when no calibration file is given.
    pub sigma_min_deg: f64,
    pub sigma_max_deg: f64,
    pub wrap_probability_max: f64,
    pub calibration_file: Option<PathBuf>,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            noise_enabled: true,
            distance_sigma_m: DISTANCE_SIGMA_M,
            sigma_min_deg: DEFAULT_SIGMA_MIN_DEG,
            sigma_max_deg: DEFAULT_SIGMA_MAX_DEG,
            wrap_probability_max: DEFAULT_WRAP_PROBABILITY_MAX,
            calibration_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub divisors: Vec<u32>,
    pub estimators: Vec<EstimatorKind>,
    pub sensor: SensorConfig,
    pub baseline: BaselineConfig,
    pub ekf: EkfConfig,
    pub sim: SimSettings,
    /// Scenario catalog file; entries replace built-ins with the same id and
    /// are appended otherwise.
    pub scenario_file: Option<PathBuf>,
    /// Drop the built-in catalog and use only `scenario_file`.
    pub replace_builtin_scenarios: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: DEFAULT_SEED,
            divisors: ALL_DIVISORS.to_vec(),
            estimators: EstimatorKind::ALL.to_vec(),
            sensor: SensorConfig::default(),
            baseline: BaselineConfig::default(),
            ekf: EkfConfig::default(),
            sim: SimSettings::default(),
            scenario_file: None,
            replace_builtin_scenarios: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, dir))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn estimator_set(&self) -> EstimatorSet {
        EstimatorSet::from_kinds(&self.estimators)
    }

    /// Builds a validated harness, loading referenced files relative to `base`.
    pub fn harness(&self, base: &Path) -> Result<Harness> {
        let s = &self.sensor;
        if !(s.distance_sigma_m >= 0.0) {
            return Err(Error::Config(
                "sensor.distance_sigma_m must be non-negative".into(),
            ));
        }
        let calibration = match &s.calibration_file {
            Some(p) => load_calibration(&base.join(p))?,
            None => {
                if !(s.sigma_min_deg > 0.0 && s.sigma_max_deg >= s.sigma_min_deg) {
                    return Err(Error::Config(
                        "sensor: need 0 < sigma_min_deg <= sigma_max_deg".into(),
                    ));
                }
                if !(0.0..=1.0).contains(&s.wrap_probability_max) {
                    return Err(Error::Config(
                        "sensor.wrap_probability_max must be in [0, 1]".into(),
                    ));
                }
                calibration_with_profile(&DispersionProfile {
                    sigma_min: s.sigma_min_deg,
                    sigma_max: s.sigma_max_deg,
                    wrap_probability_max: s.wrap_probability_max,
                })
            }
        };
        let mut sensor = SensorModel::new(calibration);
        sensor.distance_sigma_m = s.distance_sigma_m;
        sensor.noise_enabled = s.noise_enabled;

        let mut scenarios = if self.replace_builtin_scenarios {
            Vec::new()
        } else {
            builtin_scenarios()
        };
        if let Some(p) = &self.scenario_file {
            for s in load_scenarios(&base.join(p))?.scenarios {
                match scenarios.iter_mut().find(|x| x.id == s.id) {
                    Some(slot) => *slot = s,
                    None => scenarios.push(s),
                }
            }
        }
        if scenarios.is_empty() {
            return Err(Error::Config("scenario catalog is empty".into()));
        }
        let h = Harness {
            scenarios,
            sensor,
            baseline: self.baseline,
            ekf: self.ekf,
            sim: self.sim,
        };
        h.validate()?;
        Ok(h)
    }
}

pub fn load_calibration(path: &Path) -> Result<Calibration> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Calibration(format!("cannot read {}: {e}", path.display())))?;
    Calibration::from_toml(&text)
}

pub fn load_scenarios(path: &Path) -> Result<ScenarioCatalog> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cat: ScenarioCatalog =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if cat.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported schema_version {}",
            path.display(),
            cat.schema_version
        )));
    }
    Ok(cat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        let h = cfg.harness(Path::new(".")).unwrap();
        assert_eq!(h.scenarios.len(), 14);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "schema_version = 1\nseed = 7\n[sensor]\nnoise_enabled = false\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(!cfg.sensor.noise_enabled);
        assert_eq!(cfg.divisors, ALL_DIVISORS.to_vec());
        assert_eq!(cfg.ekf, EkfConfig::default());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ExperimentConfig::from_toml("schema_version = 2").is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 1\nbogus = 3").is_err());
        let e = ExperimentConfig::from_toml("schema_version = 1\nseed = \"x\"").unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
    }

    #[test]
    fn scenario_file_overrides_by_id() {
        let dir = std::env::temp_dir().join(format!("uwb-relloc-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut s = builtin_scenarios()[0].clone();
        s.duration_s = 5.0;
        let mut extra = builtin_scenarios()[1].clone();
        extra.id = "extra".into();
        let cat = ScenarioCatalog {
            schema_version: 1,
            scenarios: vec![s, extra],
        };
        std::fs::write(dir.join("scen.toml"), toml::to_string(&cat).unwrap()).unwrap();
        let cfg = ExperimentConfig {
            scenario_file: Some("scen.toml".into()),
            ..Default::default()
        };
        let h = cfg.harness(&dir).unwrap();
        assert_eq!(h.scenarios.len(), 15);
        assert_eq!(h.scenarios[0].duration_s, 5.0);
        assert_eq!(h.scenarios[14].id, "extra");
        std::fs::remove_dir_all(&dir).ok();
    }
}
