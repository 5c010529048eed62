//! Normalization of event series onto the unit time / modality / gap axes and
//! binning into fixed-size E–t maps (2D) and E–t–dt cubes (3D).

pub mod format;

pub use format::{read_tensor, read_tensor_bytes, tensor_bytes, write_tensor, TENSOR_VERSION};

use serde::{Deserialize, Serialize};

use crate::ingest::EventSeries;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("series {series_id}: {count} events, at least 2 required")]
    TooFewEvents { series_id: String, count: usize },
    #[error("series {series_id}: modality value {value} is not positive under log10")]
    NonPositiveModality { series_id: String, value: f64 },
    #[error("invalid binning config: {0}")]
    InvalidConfig(String),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor file version {0}")]
    VersionMismatch(u16),
    #[error("tensor file truncated: needed {needed} bytes, found {found}")]
    TruncatedFile { needed: usize, found: usize },
    #[error("inconsistent tensor dimensions: {0}")]
    DimMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityTransform {
    Log10,
    Identity,
}

impl ModalityTransform {
    pub fn apply(self, e: f64) -> f64 {
        match self {
            ModalityTransform::Log10 => e.log10(),
            ModalityTransform::Identity => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityBounds {
    /// Each series spans its own `[eps_min, eps_max]`.
    PerSeries,
    /// Shared transformed-modality range; values outside are clamped to the edge bins.
    Global { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountScaling {
    Raw,
    UnitSum,
    Log1p,
}

impl CountScaling {
    pub fn code(self) -> u8 {
        match self {
            CountScaling::Raw => 0,
            CountScaling::UnitSum => 1,
            CountScaling::Log1p => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CountScaling::Raw),
            1 => Some(CountScaling::UnitSum),
            2 => Some(CountScaling::Log1p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningConfig {
    pub n_tau: usize,
    pub n_eps: usize,
    /// Zero selects map mode (2D output).
    pub n_dtau: usize,
    pub modality_transform: ModalityTransform,
    pub modality_bounds: ModalityBounds,
    pub count_scaling: CountScaling,
    /// Reject single-event series instead of mapping them to the origin.
    #[serde(default = "default_strict")]
    pub strict: bool,
}

fn default_strict() -> bool {
    true
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            n_tau: 24,
            n_eps: 16,
            n_dtau: 16,
            modality_transform: ModalityTransform::Log10,
            modality_bounds: ModalityBounds::PerSeries,
            count_scaling: CountScaling::UnitSum,
            strict: true,
        }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.n_tau == 0 || self.n_eps == 0 {
            return Err(TensorError::InvalidConfig("n_tau and n_eps must be >= 1".into()));
        }
        if let ModalityBounds::Global { lo, hi } = self.modality_bounds {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(TensorError::InvalidConfig(format!(
                    "global bounds need finite lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> TensorKind {
        if self.n_dtau == 0 {
            TensorKind::Map
        } else {
            TensorKind::Cube
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self.kind() {
            TensorKind::Map => vec![self.n_tau, self.n_eps],
            TensorKind::Cube => vec![self.n_tau, self.n_eps, self.n_dtau],
        }
    }
}

/// Transformed-modality range over a whole dataset, for `ModalityBounds::Global`.
/// A degenerate range is widened by 0.5 on each side.
pub fn dataset_bounds<'a>(
    series: impl IntoIterator<Item = &'a EventSeries>,
    transform: ModalityTransform,
) -> Option<ModalityBounds> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &e in &s.modality {
            let v = transform.apply(e);
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() {
        return None;
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    Some(ModalityBounds::Global { lo, hi })
}

/// Per-event coordinates on the normalized axes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub series_id: String,
    /// `(t - t_1) / T`, in [0, 1].
    pub tau: Vec<f64>,
    /// Transformed modality values `f(E)`.
    pub eps: Vec<f64>,
    /// Normalized gap assigned to each event, in [0, 1].
    pub dtau: Vec<f64>,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl NormalizedSeries {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Position of event `k` on the unit modality axis under `bounds`.
    pub fn eps_coordinate(&self, k: usize, bounds: ModalityBounds) -> f64 {
        let (lo, hi) = match bounds {
            ModalityBounds::PerSeries => (self.eps_min, self.eps_max),
            ModalityBounds::Global { lo, hi } => (lo, hi),
        };
        if hi > lo {
            ((self.eps[k] - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Rescale `values` onto [0, 1] by their min and max; a zero range maps to 0.
fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Map a validated (time-sorted) series onto the normalized time, modality and
/// inter-event gap axes.
///
/// Event `k >= 2` is assigned the gap preceding it and the first event takes the
/// first gap, so every event has a coordinate on all three axes.
pub fn normalize_series(s: &EventSeries, cfg: &BinningConfig) -> Result<NormalizedSeries, TensorError> {
    let n = s.len();
    if n == 0 || (n < 2 && cfg.strict) {
        return Err(TensorError::TooFewEvents {
            series_id: s.series_id.clone(),
            count: n,
        });
    }
    let eps: Vec<f64> = match cfg.modality_transform {
        ModalityTransform::Log10 => s
            .modality
            .iter()
            .map(|&e| {
                if e > 0.0 {
                    Ok(e.log10())
                } else {
                    Err(TensorError::NonPositiveModality {
                        series_id: s.series_id.clone(),
                        value: e,
                    })
                }
            })
            .collect::<Result<_, _>>()?,
        ModalityTransform::Identity => s.modality.clone(),
    };
    let t0 = s.timestamps[0];
    let duration = s.timestamps[n - 1] - t0;
    let tau = if duration > 0.0 {
        s.timestamps
            .iter()
            .map(|t| ((t - t0) / duration).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; n]
    };
    let gaps: Vec<f64> = s.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    let gap_coords = min_max_scale(&gaps);
    let dtau = if gap_coords.is_empty() {
        vec![0.0; n]
    } else {
        std::iter::once(gap_coords[0]).chain(gap_coords.iter().copied()).collect()
    };
    let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let eps_max = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(NormalizedSeries {
        series_id: s.series_id.clone(),
        tau,
        eps,
        dtau,
        eps_min,
        eps_max,
    })
}

/// Index of the fixed-width bin containing `x` in [0, 1]; `x = 1` lands in the
/// last bin.
#[inline]
pub fn bin_index(x: f64, n: usize) -> usize {
    let scaled = (x.max(0.0) * n as f64).floor();
    (scaled as usize).min(n - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    /// `n_tau x n_eps` E–t map.
    Map,
    /// `n_tau x n_eps x n_dtau` E–t–dt cube.
    Cube,
}

/// Binned histogram of one series. Values are row-major with the time axis
/// slowest and the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTensor {
    pub kind: TensorKind,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    pub series_id: String,
    pub scaling: CountScaling,
    pub global_bounds: bool,
    pub transform: ModalityTransform,
}

impl EventTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Flat offset of a cell; `idx` has one entry per axis.
    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.offset(idx)]
    }

    /// Round every value to the nearest `f32`, the precision of the tensor file.
    pub fn to_f32_precision(mut self) -> Self {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
        self
    }
}

fn scale_counts(counts: Vec<u32>, scaling: CountScaling, n_events: usize) -> Vec<f64> {
    match scaling {
        CountScaling::Raw => counts.into_iter().map(f64::from).collect(),
        CountScaling::UnitSum => {
            let n = n_events as f64;
            counts.into_iter().map(|c| f64::from(c) / n).collect()
        }
        CountScaling::Log1p => counts.into_iter().map(|c| f64::from(c).ln_1p()).collect(),
    }
}

fn bin_events(ns: &NormalizedSeries, cfg: &BinningConfig, with_gap_axis: bool) -> Result<EventTensor, TensorError> {
    cfg.validate()?;
    let (n_tau, n_eps) = (cfg.n_tau, cfg.n_eps);
    let n_dtau = if with_gap_axis { cfg.n_dtau } else { 1 };
    if with_gap_axis && n_dtau == 0 {
        return Err(TensorError::InvalidConfig("cube binning needs n_dtau >= 1".into()));
    }
    let mut counts = vec![0u32; n_tau * n_eps * n_dtau];
    for k in 0..ns.len() {
        let i = bin_index(ns.tau[k], n_tau);
        let j = bin_index(ns.eps_coordinate(k, cfg.modality_bounds), n_eps);
        let l = if with_gap_axis { bin_index(ns.dtau[k], n_dtau) } else { 0 };
        counts[(i * n_eps + j) * n_dtau + l] += 1;
    }
    let (kind, dims) = if with_gap_axis {
        (TensorKind::Cube, vec![n_tau, n_eps, n_dtau])
    } else {
        (TensorKind::Map, vec![n_tau, n_eps])
    };
    Ok(EventTensor {
        kind,
        dims,
        values: scale_counts(counts, cfg.count_scaling, ns.len()),
        series_id: ns.series_id.clone(),
        scaling: cfg.count_scaling,
        global_bounds: matches!(cfg.modality_bounds, ModalityBounds::Global { .. }),
        transform: cfg.modality_transform,
    })
}

/// Three-axis histogram (time, modality, gap).
pub fn bin_cube(ns: &NormalizedSeries, cfg: &BinningConfig) -> Result<EventTensor, TensorError> {
    bin_events(ns, cfg, true)
}

/// Two-axis histogram (time, modality); `cfg.n_dtau` is ignored.
pub fn bin_map(ns: &NormalizedSeries, cfg: &BinningConfig) -> Result<EventTensor, TensorError> {
    bin_events(ns, cfg, false)
}

/// Normalize and bin according to `cfg.n_dtau` (zero gives a map).
pub fn tensorize(s: &EventSeries, cfg: &BinningConfig) -> Result<EventTensor, TensorError> {
    let ns = normalize_series(s, cfg)?;
    match cfg.kind() {
        TensorKind::Map => bin_map(&ns, cfg),
        TensorKind::Cube => bin_cube(&ns, cfg),
    }
}

/// Tensorize a dataset in parallel; output order follows input order.
pub fn tensorize_all(series: &[EventSeries], cfg: &BinningConfig) -> Result<Vec<EventTensor>, TensorError> {
    use rayon::prelude::*;
    series.par_iter().map(|s| tensorize(s, cfg)).collect()
}
