use std::path::Path;

use anyhow::Context;
use fvl_core::dual_flow::RefineConfig;
use fvl_core::flow::FlowConfig;
use fvl_core::pipeline::PipelineConfig;
use fvl_core::synthesis::SamplerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ExitError;

pub const CONFIG_COPY: &str = "config.json";
pub const HASH_FILE: &str = "config.sha256";

/// Everything a run depends on except file paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub pipeline: PipelineConfig,
    pub refine: RefineConfig,
    pub dualflow: DualFlowSettings,
    pub bench: BenchSettings,
    pub scene: SceneSettings,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualFlowSettings {
    /// Added to the ground-truth k1 to form the candidate lens.
    pub k1_offset: f64,
    pub refine: bool,
    /// Frames per analysis window, taken from the start of each timestamp.
    pub frames: usize,
    /// Windows are analysed at this width.
    pub work_width: usize,
    pub max_windows: Option<usize>,
}

impl Default for DualFlowSettings {
    fn default() -> Self {
        Self {
            k1_offset: 0.0,
            refine: false,
            frames: 3,
            work_width: 128,
            max_windows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub estimators: Vec<String>,
    pub plot_width: usize,
    pub plot_height: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            estimators: vec!["oracle-noisy".into(), "photometric".into()],
            plot_width: 480,
            plot_height: 240,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSettings {
    pub count: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for SceneSettings {
    fn default() -> Self {
        Self {
            count: 4,
            frames: 40,
            width: 256,
            height: 256,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ExitError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(ExitError::Io)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(ExitError::Config)
    }

    pub fn validate(&self) -> Result<(), ExitError> {
        let check = |r: fvl_core::Result<()>| r.map_err(|e| ExitError::Config(e.into()));
        check(self.sampler.validate())?;
        check(self.pipeline.flow.validate())?;
        check(self.refine.flow.validate())?;
        check(fvl_core::estimators::estimator_by_name(&self.pipeline.estimator, &self.pipeline.estimator_options).map(|_| ()))?;
        for name in &self.bench.estimators {
            check(fvl_core::estimators::estimator_by_name(name, &self.pipeline.estimator_options).map(|_| ()))?;
        }
        if self.dualflow.frames < 2 {
            return Err(ExitError::Config(anyhow::anyhow!("dualflow.frames must be at least 2")));
        }
        Ok(())
    }

    pub fn flow(&self) -> &FlowConfig {
        &self.pipeline.flow
    }
}

/// Hex SHA-256 of the canonical JSON of `command` and `config`.
pub fn config_hash(command: &str, config: &RunConfig) -> String {
    let doc = serde_json::json!({ "command": command, "config": config });
    let bytes = serde_json::to_vec(&doc).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Writes the resolved config and its hash into the run directory.
pub fn record_run(dir: &Path, command: &str, config: &RunConfig) -> anyhow::Result<String> {
    let hash = config_hash(command, config);
    fvl_core::io::write_json(
        &serde_json::json!({ "command": command, "config": config }),
        dir.join(CONFIG_COPY),
    )?;
    fvl_core::io::write_text(&format!("{hash}\n"), dir.join(HASH_FILE))?;
    Ok(hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sampler":{"seed":3}}"#).is_ok());
        assert!(serde_json::from_str::<RunConfig>(r#"{"sampler":{"sed":3}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"threads":2}"#).is_err());
    }

    #[test]
    fn scheme_round_trips_in_config() {
        let c: RunConfig = serde_json::from_str(r#"{"pipeline":{"scheme":{"n":4,"a1":0.4}}}"#).unwrap();
        assert_eq!(c.pipeline.scheme.n(), 4);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains(r#""scheme":{"n":4,"a1":0.4}"#));
        assert!(serde_json::from_str::<RunConfig>(r#"{"pipeline":{"scheme":{"n":5,"a1":0.5}}}"#).is_err());
    }

    #[test]
    fn hash_tracks_seed() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.sampler.seed = 1;
        assert_eq!(config_hash("synth", &a), config_hash("synth", &a));
        assert_ne!(config_hash("synth", &a), config_hash("synth", &b));
        assert_ne!(config_hash("synth", &a), config_hash("bench", &a));
    }
}
