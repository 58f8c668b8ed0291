//! Run configuration (TOML, comment friendly). Every section has defaults
//! so a missing config file means "defaults everywhere"; parse and
//! serialize round-trip losslessly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub range_min_m: f32,
    pub range_max_m: f32,
    pub interval_m: f32,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            range_min_m: 100.0,
            range_max_m: 500.0,
            interval_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub focal_px: f32,
    pub image_width_px: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            focal_px: 1000.0,
            image_width_px: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    /// Number of backbone blocks (and adapters per branch).
    #[serde(alias = "L")]
    pub blocks: usize,
    /// Backbone token dimension.
    #[serde(alias = "D")]
    pub dim: usize,
    pub bottleneck: usize,
    pub dilation: usize,
    pub seed: u64,
    /// Side length of the stub's patch grid.
    pub patch_grid: usize,
    /// Optional trained weight files; synthesized from the seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub he_weights: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vpr_weights: Option<PathBuf>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            dim: 192,
            bottleneck: 64,
            dilation: 2,
            seed: 42,
            patch_grid: 24,
            he_weights: None,
            vpr_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub k_height: usize,
    pub k_place: usize,
    pub aggregator: String,
    pub gem_p: f32,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_height: 1,
            k_place: 10,
            aggregator: "gem".into(),
            gem_p: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub thresholds_m: Vec<f32>,
    pub height_thresholds_m: Vec<f32>,
    /// k values evaluated (each plus the full baseline); defaults to the
    /// single configured retrieval.k_height.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_height_sweep: Option<Vec<usize>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds_m: vec![100.0, 200.0],
            height_thresholds_m: vec![50.0, 100.0],
            k_height_sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeightDbConfig {
    /// Entries sampled per level when building the compact height database.
    pub per_level_cap: usize,
}

impl Default for HeightDbConfig {
    fn default() -> Self {
        Self { per_level_cap: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub places: usize,
    pub image_px: usize,
    pub base_raster_px: usize,
    pub place_spacing_m: f32,
    pub jitter_m: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            places: 25,
            image_px: 168,
            base_raster_px: 512,
            place_spacing_m: 400.0,
            jitter_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub partition: PartitionConfig,
    pub camera: CameraConfig,
    pub adapter: AdapterConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
    pub height_db: HeightDbConfig,
    pub synthetic: SyntheticConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let p = &self.partition;
        if !(p.range_min_m > 0.0 && p.range_max_m > p.range_min_m && p.interval_m > 0.0) {
            return Err(CliError::Config(format!(
                "invalid partition [{}, {}) / {}",
                p.range_min_m, p.range_max_m, p.interval_m
            )));
        }
        let span = (p.range_max_m - p.range_min_m) as f64;
        let count = (span / p.interval_m as f64).round();
        if count < 1.0 || (span - count * p.interval_m as f64).abs() > 1e-6 * span {
            return Err(CliError::Config(format!(
                "interval {} does not divide the range span {span}",
                p.interval_m
            )));
        }
        if !(self.camera.focal_px > 0.0) || self.camera.image_width_px == 0 {
            return Err(CliError::Config("camera intrinsics must be positive".into()));
        }
        let a = &self.adapter;
        if a.blocks == 0 || a.dim == 0 || a.patch_grid == 0 {
            return Err(CliError::Config("adapter blocks/dim/patch_grid must be >= 1".into()));
        }
        if a.bottleneck == 0 || a.bottleneck >= a.dim {
            return Err(CliError::Config(format!(
                "bottleneck must satisfy 1 <= bottleneck < dim (got {} vs {})",
                a.bottleneck, a.dim
            )));
        }
        if a.dilation == 0 {
            return Err(CliError::Config("dilation must be >= 1".into()));
        }
        if self.retrieval.k_height == 0 || self.retrieval.k_place == 0 {
            return Err(CliError::Config("k_height and k_place must be >= 1".into()));
        }
        if !matches!(self.retrieval.aggregator.as_str(), "gem" | "mean") {
            return Err(CliError::Config(format!(
                "unknown aggregator {:?} (expected \"gem\" or \"mean\")",
                self.retrieval.aggregator
            )));
        }
        if !(self.retrieval.gem_p >= 1.0) {
            return Err(CliError::Config("gem_p must be >= 1".into()));
        }
        if self.eval.thresholds_m.is_empty() || self.eval.height_thresholds_m.is_empty() {
            return Err(CliError::Config("eval thresholds must be nonempty".into()));
        }
        if let Some(sweep) = &self.eval.k_height_sweep {
            if sweep.is_empty() || sweep.contains(&0) {
                return Err(CliError::Config("k_height_sweep entries must be >= 1".into()));
            }
        }
        if self.height_db.per_level_cap == 0 {
            return Err(CliError::Config("height_db.per_level_cap must be >= 1".into()));
        }
        let s = &self.synthetic;
        if s.places == 0 || s.image_px == 0 || s.base_raster_px == 0 {
            return Err(CliError::Config("synthetic sizes must be >= 1".into()));
        }
        if s.image_px % a.patch_grid != 0 {
            return Err(CliError::Config(format!(
                "synthetic.image_px {} must be divisible by adapter.patch_grid {}",
                s.image_px, a.patch_grid
            )));
        }
        if !(s.jitter_m >= 0.0) || s.jitter_m * 2.0 >= p.interval_m {
            return Err(CliError::Config(format!(
                "jitter_m {} must be in [0, interval/2)",
                s.jitter_m
            )));
        }
        Ok(())
    }

    /// k values to evaluate; defaults to the single configured k_height.
    pub fn eval_k_sweep(&self) -> Vec<usize> {
        self.eval
            .k_height_sweep
            .clone()
            .unwrap_or_else(|| vec![self.retrieval.k_height])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_serialize_round_trips() {
        let config = RunConfig::default();
        let text = config.to_toml();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, config);
        // and a second cycle is identical text
        assert_eq!(parsed.to_toml(), text);
    }

    #[test]
    fn spec_aliases_accepted() {
        let text = r#"
[adapter]
L = 6
D = 256
"#;
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.adapter.blocks, 6);
        assert_eq!(c.adapter.dim, 256);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            "[partition]\ninterval_m = 0.0",
            "[partition]\nrange_min_m = 100.0\nrange_max_m = 530.0\ninterval_m = 50.0",
            "[adapter]\nbottleneck = 300",
            "[retrieval]\naggregator = \"salad\"",
            "[unknown_section]\nx = 1",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
