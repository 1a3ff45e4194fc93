//! Pipeline configuration. Every section has defaults and rejects unknown
//! keys, so a TOML file only needs to list what it overrides.

use std::path::PathBuf;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{UtcOffset, UtcSeconds};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub run: RunConfig,
    pub seed: Option<u64>,
    pub ingest: IngestConfig,
    pub resample: ResampleConfig,
    pub segmentation: SegmentationConfig,
    pub gate: GateConfig,
    pub filters: FilterConfig,
    pub cvxeda: CvxEdaParams,
    pub eda: EdaFeatureConfig,
    pub hrv: HrvConfig,
    pub sync: SyncConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::validation(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ingest.school_day_bounds()?;
        if self.cvxeda.tau0 <= 0.0 || self.cvxeda.tau1 <= 0.0 || self.cvxeda.tau0 == self.cvxeda.tau1 {
            return Err(Error::validation("cvxeda: tau0 and tau1 must be positive and distinct"));
        }
        if self.cvxeda.knot_spacing <= 0.0 || self.cvxeda.alpha < 0.0 || self.cvxeda.gamma < 0.0 {
            return Err(Error::validation(
                "cvxeda: knot_spacing > 0, alpha >= 0, gamma >= 0 required",
            ));
        }
        if self.eda.levels < 2 {
            return Err(Error::validation("eda.levels must be at least 2"));
        }
        if self.eda.arousal_window_seconds <= 0.0 {
            return Err(Error::validation("eda.arousal_window_seconds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.sync.dtw_band_fraction) {
            return Err(Error::validation("sync.dtw_band_fraction must lie in [0, 1]"));
        }
        self.model.grid.validate()?;
        if self.eval.outer_folds < 2 || self.eval.inner_folds < 2 {
            return Err(Error::validation(
                "eval: outer_folds and inner_folds must be at least 2",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub schedule: Option<PathBuf>,
    pub env: Option<PathBuf>,
    pub surveys: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub regimes: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Command selections that can also come from the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// A target name or `all`.
    pub target: Option<String>,
    /// Sensor family names, `wearable` or `all`.
    pub families: Option<Vec<String>>,
    /// `<participant_id>/<class_id>`.
    pub session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub timezone: UtcOffset,
    /// Local wall-clock `HH:MM`.
    pub school_day_start: String,
    pub school_day_end: String,
    pub min_segment_seconds: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            timezone: UtcOffset::UTC,
            school_day_start: "09:00".into(),
            school_day_end: "15:35".into(),
            min_segment_seconds: 15.0,
        }
    }
}

fn parse_hhmm(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::validation(format!("time {s:?} is not HH:MM"));
    let (h, m) = s.trim().split_once(':').ok_or_else(bad)?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if h > 23 || m > 59 {
        return Err(bad());
    }
    Ok((h, m))
}

impl IngestConfig {
    pub fn school_day_bounds(&self) -> Result<((u32, u32), (u32, u32))> {
        let start = parse_hhmm(&self.school_day_start)?;
        let end = parse_hhmm(&self.school_day_end)?;
        if end <= start {
            return Err(Error::validation("school day must end after it starts"));
        }
        Ok((start, end))
    }

    /// The school-day window of `date` in UTC seconds.
    pub fn school_day(&self, date: NaiveDate) -> (UtcSeconds, UtcSeconds) {
        let ((h0, m0), (h1, m1)) = self.school_day_bounds().unwrap_or(((9, 0), (15, 35)));
        (
            self.timezone.local_to_utc(date, h0, m0),
            self.timezone.local_to_utc(date, h1, m1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    /// Longest run of empty bins filled by interpolation.
    pub max_gap_seconds: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig { max_gap_seconds: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Half-width of the search window around a scheduled boundary.
    pub window_seconds: f64,
    pub rate_hz: f64,
    pub epsilon: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            window_seconds: 300.0,
            rate_hz: 1.0,
            epsilon: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub flat_level_us: f64,
    pub flat_run_seconds: f64,
    pub max_flat_fraction: f64,
    pub drop_threshold_us: f64,
    pub max_drops: usize,
    pub quantization_window_seconds: f64,
    pub min_distinct_values: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            flat_level_us: 0.01,
            flat_run_seconds: 10.0,
            max_flat_fraction: 0.2,
            drop_threshold_us: 0.5,
            max_drops: 10,
            quantization_window_seconds: 60.0,
            min_distinct_values: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub eda_median_seconds: f64,
    pub acc_median_seconds: f64,
    pub st_median_seconds: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            eda_median_seconds: 5.0,
            acc_median_seconds: 0.2,
            st_median_seconds: 0.5,
        }
    }
}

/// Parameters of the convex tonic/phasic decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvxEdaParams {
    /// Slow (decay) time constant of the response, seconds.
    pub tau0: f64,
    /// Fast (rise) time constant, seconds.
    pub tau1: f64,
    /// Spacing of the tonic spline knots, seconds.
    pub knot_spacing: f64,
    /// Sparsity weight on the driver.
    pub alpha: f64,
    /// Ridge weight on the spline coefficients.
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for CvxEdaParams {
    fn default() -> Self {
        CvxEdaParams {
            tau0: 2.0,
            tau1: 0.7,
            knot_spacing: 10.0,
            alpha: 8e-4,
            gamma: 1e-2,
            tolerance: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    ZScore,
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdaFeatureConfig {
    pub normalization: Normalization,
    pub min_peak_amplitude: f64,
    pub arousal_window_seconds: f64,
    pub levels: usize,
}

impl Default for EdaFeatureConfig {
    fn default() -> Self {
        EdaFeatureConfig {
            normalization: Normalization::ZScore,
            min_peak_amplitude: 0.01,
            arousal_window_seconds: 60.0,
            levels: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrvConfig {
    /// Centered moving average applied to BVP before peak search; 0 disables.
    pub smoothing_seconds: f64,
    pub rolling_window_seconds: f64,
    pub refractory_ms: f64,
    pub min_rr_ms: f64,
    pub max_rr_ms: f64,
    pub resample_hz: f64,
    pub segment_seconds: f64,
    pub lf_band: (f64, f64),
    pub hf_band: (f64, f64),
}

impl Default for HrvConfig {
    fn default() -> Self {
        HrvConfig {
            smoothing_seconds: 0.1,
            rolling_window_seconds: 0.75,
            refractory_ms: 250.0,
            min_rr_ms: 250.0,
            max_rr_ms: 2000.0,
            resample_hz: 4.0,
            segment_seconds: 64.0,
            lf_band: (0.04, 0.15),
            hf_band: (0.15, 0.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    pub rate_hz: f64,
    pub dtw_band_fraction: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            rate_hz: 1.0,
            dtw_band_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub num_leaves: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub n_rounds: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            num_leaves: vec![7, 15, 31],
            learning_rate: vec![0.05, 0.1],
            n_rounds: vec![100, 300],
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_leaves.is_empty() || self.learning_rate.is_empty() || self.n_rounds.is_empty() {
            return Err(Error::validation("grid: every axis needs at least one value"));
        }
        if self.num_leaves.iter().any(|&l| l < 2) {
            return Err(Error::validation("grid: num_leaves must be at least 2"));
        }
        if self.learning_rate.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::validation("grid: learning_rate must lie in (0, 1]"));
        }
        if self.n_rounds.contains(&0) {
            return Err(Error::validation("grid: n_rounds must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: GridConfig,
    pub min_samples_leaf: usize,
    pub top_k_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid: GridConfig::default(),
            min_samples_leaf: 5,
            top_k_features: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub min_subject_sessions: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            outer_folds: 5,
            inner_folds: 3,
            min_subject_sessions: 30,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = PipelineConfig::from_toml("[gate]\nmax_drops = 3\n[ingest]\ntimezone = \"+10:00\"\n").unwrap();
        assert_eq!(cfg.gate.max_drops, 3);
        assert_eq!(cfg.ingest.timezone.seconds, 36000);
        assert!(PipelineConfig::from_toml("[gate]\nmax_dropz = 3\n").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(PipelineConfig::from_toml("[model.grid]\nnum_leaves = [1]\n").is_err());
        assert!(PipelineConfig::from_toml("[ingest]\nschool_day_end = \"08:00\"\n").is_err());
        assert!(PipelineConfig::from_toml("[eda]\nlevels = 1\n").is_err());
    }
}
