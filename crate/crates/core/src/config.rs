//! Pipeline configuration and its flat key/value file form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config value `{key}` = {value} is out of range ({expected})")]
    OutOfRange { key: &'static str, value: String, expected: &'static str },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

/// How frustum proposals use the 2D instance mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrustumMode {
    /// Points projecting inside the enlarged box.
    #[default]
    Bbox,
    /// Points projecting inside the instance mask.
    Mask,
    /// Enlarged-box points, with a per-point flag marking the mask subset.
    BboxMask,
}

impl FromStr for FrustumMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bbox" => Ok(Self::Bbox),
            "mask" => Ok(Self::Mask),
            "bbox_mask" | "bbox+mask" => Ok(Self::BboxMask),
            other => Err(ConfigError::Parse(format!("unknown frustum mode `{other}`"))),
        }
    }
}

impl fmt::Display for FrustumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bbox => "bbox",
            Self::Mask => "mask",
            Self::BboxMask => "bbox_mask",
        })
    }
}

/// Tunables of the geometric baseline localizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerParams {
    /// Points within this height above the 5th height percentile are ground.
    pub ground_band: f64,
    /// Range histogram bin width (m).
    pub range_bin: f64,
    /// Weight of the class prior when blending observed extents.
    pub prior_blend: f64,
    /// Histogram weight multiplier for points inside the instance mask.
    pub mask_boost: f64,
}

impl Default for LocalizerParams {
    fn default() -> Self {
        Self { ground_band: 0.15, range_bin: 0.5, prior_blend: 0.5, mask_boost: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// BEV IoU above which two 3D detections are connected in the overlap graph.
    pub tau_z: f64,
    /// Cluster-to-image IoU a match must exceed.
    pub tau_b: f64,
    /// Projection IoU gate for recovered detections.
    pub tau_d: f64,
    /// 2D box enlargement factor applied before frustum extraction.
    pub enlargement: f64,
    /// Minimum number of points in a frustum proposal.
    pub p_min: usize,
    pub frustum_mode: FrustumMode,
    pub min_score_3d: f64,
    pub min_score_2d: f64,
    pub stereo_enabled: bool,
    /// Optional BEV NMS over the final output.
    pub final_nms: Option<f64>,
    /// Total corner-to-line distance (px) above which stereo pairs are dropped.
    pub epipolar_gate: f64,
    /// Maximum cliques per node before clustering gives up.
    pub clique_cap_factor: usize,
    pub localizer: String,
    pub localizer_params: LocalizerParams,
    pub enable_matching: bool,
    pub enable_recovery: bool,
    pub enable_semantic: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau_z: 0.3,
            tau_b: 0.5,
            tau_d: 0.5,
            enlargement: 1.1,
            p_min: 10,
            frustum_mode: FrustumMode::Bbox,
            min_score_3d: 0.05,
            min_score_2d: 0.7,
            stereo_enabled: false,
            final_nms: None,
            epipolar_gate: 20.0,
            clique_cap_factor: 10,
            localizer: "geometric".to_string(),
            localizer_params: LocalizerParams::default(),
            enable_matching: true,
            enable_recovery: true,
            enable_semantic: true,
        }
    }
}

fn unit(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange { key, value: v.to_string(), expected: "[0, 1]" })
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        unit("tau_z", self.tau_z)?;
        if self.tau_z >= 1.0 {
            return Err(ConfigError::OutOfRange { key: "tau_z", value: self.tau_z.to_string(), expected: "[0, 1)" });
        }
        unit("tau_b", self.tau_b)?;
        unit("tau_d", self.tau_d)?;
        unit("min_score_3d", self.min_score_3d)?;
        unit("min_score_2d", self.min_score_2d)?;
        if !(self.enlargement >= 1.0 && self.enlargement.is_finite()) {
            return Err(ConfigError::OutOfRange {
                key: "enlargement",
                value: self.enlargement.to_string(),
                expected: ">= 1",
            });
        }
        if self.p_min == 0 {
            return Err(ConfigError::OutOfRange { key: "p_min", value: "0".into(), expected: ">= 1" });
        }
        if let Some(t) = self.final_nms {
            unit("final_nms", t)?;
        }
        if !(self.epipolar_gate > 0.0) {
            return Err(ConfigError::OutOfRange {
                key: "epipolar_gate",
                value: self.epipolar_gate.to_string(),
                expected: "> 0",
            });
        }
        if self.clique_cap_factor == 0 {
            return Err(ConfigError::OutOfRange { key: "clique_cap_factor", value: "0".into(), expected: ">= 1" });
        }
        let lp = &self.localizer_params;
        if !(lp.range_bin > 0.0) || lp.ground_band < 0.0 || !(0.0..=1.0).contains(&lp.prior_blend) || lp.mask_boost < 1.0
        {
            return Err(ConfigError::OutOfRange {
                key: "localizer_params",
                value: format!("{lp:?}"),
                expected: "range_bin > 0, ground_band >= 0, prior_blend in [0,1], mask_boost >= 1",
            });
        }
        Ok(())
    }

    /// Parses a TOML document; absent keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            if msg.starts_with("unknown field") {
                ConfigError::UnknownKey(msg)
            } else {
                ConfigError::Parse(e.to_string())
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies a single `key=value` override using the file syntax.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("config round-trips");
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        match key.split_once('.') {
            Some((outer, inner)) => {
                let sub = table
                    .get_mut(outer)
                    .and_then(|v| v.as_table_mut())
                    .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
                sub.insert(inner.to_string(), parsed);
            }
            None => {
                table.insert(key.to_string(), parsed);
            }
        }
        *self = Self::from_toml(&toml::to_string(&table).expect("table serializes"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_documented_values() {
        let c = PipelineConfig::default();
        assert_eq!((c.tau_z, c.tau_b, c.tau_d, c.enlargement), (0.3, 0.5, 0.5, 1.1));
        assert_eq!((c.p_min, c.min_score_3d, c.min_score_2d), (10, 0.05, 0.7));
        assert_eq!(c.final_nms, None);
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let c = PipelineConfig { tau_b: 0.4, frustum_mode: FrustumMode::BboxMask, ..Default::default() };
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = PipelineConfig::from_toml("tau_z = 0.2\nfrustum_mode = \"mask\"\n").unwrap();
        assert_eq!(partial.tau_z, 0.2);
        assert_eq!(partial.frustum_mode, FrustumMode::Mask);
        assert_eq!(partial.tau_d, 0.5);
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        assert!(matches!(PipelineConfig::from_toml("tau_b = 1.5"), Err(ConfigError::OutOfRange { key: "tau_b", .. })));
        assert!(matches!(PipelineConfig::from_toml("enlargement = 0.9"), Err(ConfigError::OutOfRange { .. })));
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn overrides() {
        let mut c = PipelineConfig::default();
        c.set("tau_d", "0.25").unwrap();
        c.set("frustum_mode", "mask").unwrap();
        c.set("localizer_params.range_bin", "0.25").unwrap();
        c.set("final_nms", "0.1").unwrap();
        assert_eq!(c.tau_d, 0.25);
        assert_eq!(c.frustum_mode, FrustumMode::Mask);
        assert_eq!(c.localizer_params.range_bin, 0.25);
        assert_eq!(c.final_nms, Some(0.1));
        assert!(c.set("nope", "1").is_err());
    }
}
