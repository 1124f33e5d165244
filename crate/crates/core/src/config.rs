//! Pipeline configuration: one JSON document with a section per stage,
//! plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::features::FeatureParams;
use crate::fusion::FusionConfig;
use crate::integration::IntegrationConfig;
use crate::io::formats::read_text;
use crate::projection::{CropParams, ProjectionParams};
use crate::synth::SynthConfig;

/// Where crop features come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// `synthetic` when the scene has ground truth and class features,
    /// `hash` otherwise.
    #[default]
    Auto,
    Hash,
    /// Renders GT labels inside each crop; needs an annotated scene.
    Synthetic,
    Command {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
    Response {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub top_k: usize,
    pub crops: CropParams,
    pub provider: ProviderConfig,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        let p = FeatureParams::default();
        Self {
            top_k: p.top_k,
            crops: p.crops,
            provider: ProviderConfig::default(),
        }
    }
}

impl FeaturesConfig {
    pub fn params(&self) -> FeatureParams {
        FeatureParams {
            top_k: self.top_k,
            crops: self.crops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub feature_dim: usize,
    pub projection: ProjectionParams,
    pub fusion: FusionConfig,
    pub integration: IntegrationConfig,
    pub features: FeaturesConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            feature_dim: 768,
            projection: ProjectionParams::default(),
            fusion: FusionConfig::default(),
            integration: IntegrationConfig::default(),
            features: FeaturesConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        self.projection.validate()?;
        self.fusion.validate()?;
        self.integration.validate()?;
        self.features.params().validate()?;
        self.eval.validate()?;
        self.synth.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults or `path`, then each `KEY=VALUE` override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => serde_json::from_str::<Self>(&read_text(p)?)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => Self::default(),
        };
        base.with_overrides(overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
            set_path(&mut v, key.trim(), parse_value(raw))?;
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part:?} is not inside an object")))?;
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.integration.theta_2d, 0.5);
        assert_eq!(c.integration.theta_3d, 0.9);
        assert_eq!(c.fusion.frame_stride, 10);
        assert_eq!(c.feature_dim, 768);
    }

    #[test]
    fn overrides() {
        let c = PipelineConfig::default()
            .with_overrides(&[
                "integration.theta_3d=0.5".into(),
                "seed=7".into(),
                "features.provider={\"kind\":\"hash\"}".into(),
            ])
            .unwrap();
        assert_eq!(c.integration.theta_3d, 0.5);
        assert_eq!(c.seed, 7);
        assert_eq!(c.features.provider, ProviderConfig::Hash);
        let c = PipelineConfig::default()
            .with_overrides(&["features.provider.kind=synthetic".into()])
            .unwrap();
        assert_eq!(c.features.provider, ProviderConfig::Synthetic);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(
            PipelineConfig::default().with_overrides(&["fusion.nope=1".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::default().with_overrides(&["integration.theta_2d=1.5".into()]),
            Err(Error::Config(_))
        ));
        assert!(PipelineConfig::default().with_overrides(&["novalue".into()]).is_err());
        assert!(PipelineConfig::from_json("{\"bogus\": 1}").is_err());
    }
}
