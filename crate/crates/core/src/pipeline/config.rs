//! Pipeline settings and their layering: defaults, then a JSON file, then
//! `ZONE_*` environment variables, then explicit overrides.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::attention::LocalizerConfig;
use crate::denoise::FusionConfig;
use crate::error::{Error, Result};
use crate::smoother::SmootherConfig;

pub const ENV_PREFIX: &str = "ZONE_";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub threshold: u8,
    pub beta_remove: f64,
    pub beta_other: f64,
    pub cutoff: f64,
    pub steps: usize,
    pub dilation_radius: usize,
    pub g_threshold: f64,
    pub closing_radius: usize,
    pub min_riou: f64,
    pub invert_localization: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let fusion = FusionConfig::default();
        let smoother = SmootherConfig::default();
        Self {
            threshold: LocalizerConfig::DEFAULT_THRESHOLD,
            beta_remove: fusion.beta_remove,
            beta_other: fusion.beta_other,
            cutoff: smoother.cutoff,
            steps: fusion.steps,
            dilation_radius: smoother.dilation_radius,
            g_threshold: smoother.g_threshold,
            closing_radius: smoother.closing_radius,
            min_riou: 0.0,
            invert_localization: false,
            seed: 0,
        }
    }
}

/// Values set on the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub min_riou: Option<f64>,
    pub invert_localization: Option<bool>,
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let config: Self = serde_json::from_slice(bytes)?;
        config.validate()?;
        Ok(config)
    }

    /// Merges the layers. Environment variables outside the known field set
    /// are ignored; known ones must parse as the field's JSON type.
    pub fn layered<K, V>(
        file: Option<&[u8]>,
        env: impl IntoIterator<Item = (K, V)>,
        overrides: &ConfigOverrides,
    ) -> Result<Self>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut merged = match serde_json::to_value(Self::default())? {
            Value::Object(map) => map,
            _ => unreachable!("config serializes to an object"),
        };
        if let Some(bytes) = file {
            match serde_json::from_slice::<Value>(bytes)? {
                Value::Object(map) => overlay(&mut merged, map)?,
                _ => return Err(Error::invalid("config file must hold a JSON object")),
            }
        }
        let mut from_env = Map::new();
        for (key, value) in env {
            let Some(field) = key.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let field = field.to_ascii_lowercase();
            if merged.contains_key(&field) {
                let raw = value.as_ref().trim();
                let parsed =
                    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
                from_env.insert(field, parsed);
            }
        }
        overlay(&mut merged, from_env)?;
        if let Some(seed) = overrides.seed {
            merged.insert("seed".into(), seed.into());
        }
        if let Some(m) = overrides.min_riou {
            merged.insert("min_riou".into(), m.into());
        }
        if let Some(inv) = overrides.invert_localization {
            merged.insert("invert_localization".into(), inv.into());
        }
        let config: Self = serde_json::from_value(Value::Object(merged))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion().validate()?;
        self.smoother().validate()?;
        if !(0.0..=1.0).contains(&self.min_riou) {
            return Err(Error::invalid(format!(
                "min_riou {} outside [0, 1]",
                self.min_riou
            )));
        }
        Ok(())
    }

    pub fn localizer(&self, height: usize, width: usize) -> LocalizerConfig {
        LocalizerConfig {
            threshold: self.threshold,
            target_h: height,
            target_w: width,
            invert: self.invert_localization,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            beta_remove: self.beta_remove,
            beta_other: self.beta_other,
            steps: self.steps,
        }
    }

    pub fn smoother(&self) -> SmootherConfig {
        SmootherConfig {
            cutoff: self.cutoff,
            dilation_radius: self.dilation_radius,
            g_threshold: self.g_threshold,
            closing_radius: self.closing_radius,
        }
    }
}

fn overlay(base: &mut Map<String, Value>, layer: Map<String, Value>) -> Result<()> {
    for (k, v) in layer {
        if !base.contains_key(&k) {
            return Err(Error::invalid(format!("unknown config key {k:?}")));
        }
        base.insert(k, v);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const NO_ENV: [(&str, &str); 0] = [];

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.threshold, 128);
        assert_eq!((c.beta_remove, c.beta_other), (0.2, 0.01));
        assert_eq!((c.cutoff, c.steps), (200.0, 20));
        assert_eq!((c.dilation_radius, c.closing_radius), (15, 5));
        assert_eq!(c.g_threshold, 10.0);
        assert_eq!(c.min_riou, 0.0);
        assert!(!c.invert_localization);
        assert_eq!(
            PipelineConfig::layered(None, NO_ENV, &ConfigOverrides::default()).unwrap(),
            c
        );
    }

    #[test]
    fn precedence_cli_env_file_default() {
        let file = br#"{"cutoff": 150, "min_riou": 0.1, "seed": 3, "threshold": 100}"#;
        let env = [
            ("ZONE_MIN_RIOU", "0.2"),
            ("ZONE_SEED", "4"),
            ("PATH", "/bin"),
            ("ZONE_CONFIG", "x.json"),
        ];
        let cli = ConfigOverrides {
            seed: Some(5),
            ..ConfigOverrides::default()
        };
        let c = PipelineConfig::layered(Some(file), env, &cli).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.min_riou, 0.2);
        assert_eq!(c.cutoff, 150.0);
        assert_eq!(c.threshold, 100);
        assert_eq!(c.dilation_radius, 15);
    }

    #[test]
    fn env_booleans_and_bad_values() {
        let c = PipelineConfig::layered(
            None,
            [("ZONE_INVERT_LOCALIZATION", "true")],
            &ConfigOverrides::default(),
        )
        .unwrap();
        assert!(c.invert_localization);
        assert!(PipelineConfig::layered(
            None,
            [("ZONE_STEPS", "many")],
            &ConfigOverrides::default()
        )
        .is_err());
        assert!(PipelineConfig::layered(
            None,
            [("ZONE_THRESHOLD", "300")],
            &ConfigOverrides::default()
        )
        .is_err());
    }

    #[test]
    fn file_rejects_unknown_and_invalid() {
        assert!(PipelineConfig::layered(
            Some(br#"{"cutof": 1}"#),
            NO_ENV,
            &ConfigOverrides::default()
        )
        .is_err());
        assert!(
            PipelineConfig::layered(Some(b"[1]"), NO_ENV, &ConfigOverrides::default()).is_err()
        );
        assert!(PipelineConfig::from_json(br#"{"min_riou": 2}"#).is_err());
        assert!(PipelineConfig::from_json(br#"{"beta_remove": -1}"#).is_err());
        assert_eq!(
            PipelineConfig::from_json(b"{}").unwrap(),
            PipelineConfig::default()
        );
    }
}
