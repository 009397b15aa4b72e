use std::fs;
use std::path::{Path, PathBuf};

use aerodistill::curriculum::{CurriculumConfig, LambdaSchedule, Method};
use aerodistill::labeling::PseudoLabelOptions;
use aerodistill::pixelmodel::TrainConfig;
use aerodistill::Error;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub patch: usize,
    pub hidden: usize,
}

/// Everything a training command needs; saved verbatim under `configs/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub method: Method,
    /// Height interval in rungs; 1 uses every rung.
    pub interval: usize,
    pub seed: u64,
    pub arch: ArchConfig,
    pub ground: TrainConfig,
    pub stage: TrainConfig,
    pub no_mixview: bool,
    pub no_nnpl: bool,
    pub fresh_init: bool,
    pub prediction_refreshes: usize,
    pub min_confidence: Option<f64>,
    /// Ground checkpoint to start from instead of training one.
    pub init: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = CurriculumConfig::default();
        Self {
            dataset: PathBuf::from("data"),
            out: PathBuf::from("run"),
            method: Method::Progressive,
            interval: 1,
            seed: c.seed,
            arch: ArchConfig { patch: c.patch, hidden: c.hidden },
            ground: c.ground,
            stage: c.stage,
            no_mixview: !c.mixview,
            no_nnpl: !c.nnpl,
            fresh_init: !c.warm_start,
            prediction_refreshes: c.prediction_refreshes,
            min_confidence: c.pseudo.min_confidence,
            init: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
            .map_err(Into::into)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn curriculum(&self) -> Result<CurriculumConfig> {
        if self.interval == 0 {
            return Err(Error::InvalidArgument("interval must be at least 1".into()).into());
        }
        let c = CurriculumConfig {
            seed: self.seed,
            hidden: self.arch.hidden,
            patch: self.arch.patch,
            ground: self.ground.clone(),
            stage: self.stage.clone(),
            warm_start: !self.fresh_init,
            mixview: !self.no_mixview,
            nnpl: !self.no_nnpl,
            prediction_refreshes: self.prediction_refreshes,
            pseudo: PseudoLabelOptions { min_confidence: self.min_confidence },
        };
        c.validate()?;
        Ok(c)
    }
}

/// `linear` or `const:<value>`.
pub fn parse_lambda(s: &str) -> std::result::Result<LambdaSchedule, String> {
    if s == "linear" {
        return Ok(LambdaSchedule::Linear);
    }
    let value = s
        .strip_prefix("const:")
        .ok_or_else(|| format!("expected 'linear' or 'const:<value>', got '{s}'"))?
        .parse::<f64>()
        .map_err(|e| e.to_string())?;
    let schedule = LambdaSchedule::Constant { value };
    schedule.validate().map_err(|e| e.to_string())?;
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.curriculum().unwrap(), CurriculumConfig::default());
    }

    #[test]
    fn lambda_flag() {
        assert_eq!(parse_lambda("linear").unwrap(), LambdaSchedule::Linear);
        assert_eq!(parse_lambda("const:0").unwrap(), LambdaSchedule::Constant { value: 0.0 });
        assert!(parse_lambda("const:2").is_err());
        assert!(parse_lambda("cosine").is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }
}
