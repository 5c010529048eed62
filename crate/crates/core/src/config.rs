//! Run configuration: one JSON document covering every pipeline stage. Every
//! section and field is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analyze::HeadConfig;
use crate::embed::TsneConfig;
use crate::sae::{ArchSpec, TrainConfig};
use crate::tensorize::{BinningConfig, CountScaling, ModalityBounds, ModalityTransform};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Parse(PathBuf, #[source] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; the `--seed` flag takes precedence.
    pub seed: Option<u64>,
    pub gen: GenSection,
    pub binning: BinningSection,
    /// Full architecture; defaults to the dense cube or convolutional map
    /// network matching the tensor dimensions.
    pub arch: Option<ArchSpec>,
    pub train: TrainConfig,
    pub tsne: TsneConfig,
    pub cluster: ClusterSection,
    pub knn: KnnSection,
    pub score: ScoreSection,
    pub head: HeadConfig,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub per_class: usize,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection { per_class: 50 }
    }
}

/// Where the modality axis bounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsChoice {
    /// Range over every series being tensorized together.
    Dataset,
    PerSeries,
    Fixed { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningSection {
    pub n_tau: usize,
    pub n_eps: usize,
    pub n_dtau: usize,
    pub modality_transform: ModalityTransform,
    pub bounds: BoundsChoice,
    pub count_scaling: CountScaling,
    pub strict: bool,
}

impl Default for BinningSection {
    fn default() -> Self {
        let b = BinningConfig::default();
        BinningSection {
            n_tau: b.n_tau,
            n_eps: b.n_eps,
            n_dtau: b.n_dtau,
            modality_transform: b.modality_transform,
            bounds: BoundsChoice::Dataset,
            count_scaling: b.count_scaling,
            strict: b.strict,
        }
    }
}

impl BinningSection {
    /// Binning config with resolved bounds (`dataset` bounds must be computed by the caller).
    pub fn to_config(&self, dataset: Option<ModalityBounds>) -> BinningConfig {
        let modality_bounds = match self.bounds {
            BoundsChoice::Dataset => dataset.unwrap_or(ModalityBounds::PerSeries),
            BoundsChoice::PerSeries => ModalityBounds::PerSeries,
            BoundsChoice::Fixed { lo, hi } => ModalityBounds::Global { lo, hi },
        };
        BinningConfig {
            n_tau: self.n_tau,
            n_eps: self.n_eps,
            n_dtau: self.n_dtau,
            modality_transform: self.modality_transform,
            modality_bounds,
            count_scaling: self.count_scaling,
            strict: self.strict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    /// Neighborhood radius; chosen from the k-distance knee when absent.
    pub eps: Option<f64>,
    pub min_pts: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection { eps: None, min_pts: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnSection {
    pub k: usize,
}

impl Default for KnnSection {
    fn default() -> Self {
        KnnSection { k: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSection {
    pub k: usize,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub bin_seconds: f64,
    pub color_by: Option<String>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            bin_seconds: 300.0,
            color_by: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.binning
            .to_config(None)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(arch) = &self.arch {
            arch.plan().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let t = &self.tsne;
        if !(t.perplexity > 0.0) || t.iterations == 0 || !(t.learning_rate > 0.0) || !(t.init_sigma > 0.0) {
            return invalid(format!("t-SNE settings {t:?}"));
        }
        if self.cluster.eps.is_some_and(|e| !(e > 0.0)) || self.cluster.min_pts == 0 {
            return invalid(format!("cluster settings {:?}", self.cluster));
        }
        if self.knn.k == 0 || self.score.k == 0 {
            return invalid("k must be at least 1".into());
        }
        let h = &self.head;
        if h.n_estimators == 0 || !(h.learning_rate > 0.0) || h.min_child_weight < 0.0 {
            return invalid(format!("head settings {h:?}"));
        }
        if !(self.report.bin_seconds > 0.0) {
            return invalid(format!("bin_seconds must be positive, got {}", self.report.bin_seconds));
        }
        if self.gen.per_class == 0 {
            return invalid("gen.per_class must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.binning.bounds, BoundsChoice::Dataset);
        assert_eq!(cfg.train.batch_size, 1024);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"train": {"lambda": 0.0}, "binning": {"bounds": {"fixed": {"lo": 2.0, "hi": 4.0}}}}"#)
                .unwrap();
        assert_eq!(cfg.train.lambda, 0.0);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(
            cfg.binning.to_config(None).modality_bounds,
            ModalityBounds::Global { lo: 2.0, hi: 4.0 }
        );
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"lamda": 1}}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        cfg.cluster.eps = Some(0.0);
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.binning.bounds = BoundsChoice::Fixed { lo: 1.0, hi: 1.0 };
        assert!(cfg.validate().is_err());
    }
}
