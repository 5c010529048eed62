//! Labeled synthetic event series: steady, flaring, dipping and pulsating sources
//! sampled as inhomogeneous Poisson processes by thinning.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{self, Catalog, CatalogEntry, EventSeries, IngestError, Labels};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("time {t} outside [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
    #[error("rate envelope is zero, nothing to sample")]
    DegenerateModel,
    #[error("invalid source model: {0}")]
    InvalidModel(String),
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceShape {
    Steady,
    /// Linear rise over `rise_time` starting at `onset_fraction * T`, then
    /// exponential decay with time constant `decay_time`.
    Flare {
        peak_amplitude: f64,
        rise_time: f64,
        decay_time: f64,
        onset_fraction: f64,
    },
    /// Rate suppressed by `depth` over `[start_fraction, start_fraction + width_fraction] * T`.
    Dip {
        depth: f64,
        start_fraction: f64,
        width_fraction: f64,
    },
    Pulsating { modulation_fraction: f64, period: f64 },
}

impl SourceShape {
    pub fn kind(&self) -> &'static str {
        match self {
            SourceShape::Steady => "steady",
            SourceShape::Flare { .. } => "flare",
            SourceShape::Dip { .. } => "dip",
            SourceShape::Pulsating { .. } => "pulsating",
        }
    }
}

/// Log-normal modality distribution: `log10(E) ~ Normal(log10_mean, log10_sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spectrum {
    pub log10_mean: f64,
    pub log10_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceModel {
    pub shape: SourceShape,
    pub base_rate: f64,
    pub duration: f64,
    pub spectrum: Spectrum,
    pub seed: u64,
}

impl SourceModel {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::InvalidModel(m.to_string()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.base_rate >= 0.0 && self.base_rate.is_finite()) {
            return bad("base_rate must be non-negative");
        }
        if !(self.spectrum.log10_sigma >= 0.0) {
            return bad("log10_sigma must be non-negative");
        }
        match self.shape {
            SourceShape::Steady => Ok(()),
            SourceShape::Flare {
                peak_amplitude,
                rise_time,
                decay_time,
                onset_fraction,
            } => {
                if !(peak_amplitude >= 0.0 && rise_time >= 0.0 && decay_time > 0.0) {
                    return bad("flare amplitude/rise must be >= 0 and decay > 0");
                }
                if !(0.0..=1.0).contains(&onset_fraction) {
                    return bad("flare onset_fraction must lie in [0,1]");
                }
                Ok(())
            }
            SourceShape::Dip {
                depth,
                start_fraction,
                width_fraction,
            } => {
                if !(depth > 0.0 && depth <= 1.0) {
                    return bad("dip depth must lie in (0,1]");
                }
                if !((0.0..=1.0).contains(&start_fraction) && width_fraction >= 0.0) {
                    return bad("dip window must start inside [0,1] with non-negative width");
                }
                Ok(())
            }
            SourceShape::Pulsating {
                modulation_fraction,
                period,
            } => {
                if !(modulation_fraction > 0.0 && modulation_fraction < 1.0 && period > 0.0) {
                    return bad("pulsation needs modulation in (0,1) and period > 0");
                }
                Ok(())
            }
        }
    }

    fn rate_unchecked(&self, t: f64) -> f64 {
        let base = self.base_rate;
        match self.shape {
            SourceShape::Steady => base,
            SourceShape::Flare {
                peak_amplitude,
                rise_time,
                decay_time,
                onset_fraction,
            } => {
                let onset = onset_fraction * self.duration;
                let peak_at = onset + rise_time;
                let profile = if t < onset {
                    0.0
                } else if t < peak_at {
                    (t - onset) / rise_time
                } else {
                    (-(t - peak_at) / decay_time).exp()
                };
                base + peak_amplitude * profile
            }
            SourceShape::Dip {
                depth,
                start_fraction,
                width_fraction,
            } => {
                let start = start_fraction * self.duration;
                let end = (start_fraction + width_fraction) * self.duration;
                if t >= start && t <= end {
                    base * (1.0 - depth)
                } else {
                    base
                }
            }
            SourceShape::Pulsating {
                modulation_fraction,
                period,
            } => base * (1.0 + modulation_fraction * (2.0 * PI * t / period).sin()),
        }
    }

    /// Supremum of the rate function over `[0, T]`.
    pub fn rate_envelope(&self) -> f64 {
        match self.shape {
            SourceShape::Steady | SourceShape::Dip { .. } => self.base_rate,
            SourceShape::Flare { peak_amplitude, .. } => self.base_rate + peak_amplitude,
            SourceShape::Pulsating {
                modulation_fraction, ..
            } => self.base_rate * (1.0 + modulation_fraction),
        }
    }
}

/// Instantaneous event rate (events per second) at time `t`.
pub fn rate_at(model: &SourceModel, t: f64) -> Result<f64, DatagenError> {
    if !(0.0..=model.duration).contains(&t) {
        return Err(DatagenError::OutOfRange {
            t,
            duration: model.duration,
        });
    }
    Ok(model.rate_unchecked(t))
}

/// Sample event arrivals on `[0, T]` by thinning a homogeneous process at the
/// rate envelope; each accepted event gets a log-normal modality value.
pub fn sample_series(model: &SourceModel, series_id: &str) -> Result<EventSeries, DatagenError> {
    model.validate()?;
    let envelope = model.rate_envelope();
    if !(envelope > 0.0) {
        return Err(DatagenError::DegenerateModel);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let gaps = Exp::new(envelope).map_err(|e| DatagenError::InvalidModel(e.to_string()))?;
    let energies = Normal::new(model.spectrum.log10_mean, model.spectrum.log10_sigma)
        .map_err(|e| DatagenError::InvalidModel(e.to_string()))?;
    let mut timestamps = Vec::new();
    let mut modality = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t > model.duration {
            break;
        }
        let accept: f64 = rng.gen();
        if accept * envelope < model.rate_unchecked(t) {
            timestamps.push(t);
            modality.push(10f64.powf(energies.sample(&mut rng)));
        }
    }
    let mut series = EventSeries::new(series_id, timestamps, modality);
    series.labels.class_tag = Some(model.shape.kind().to_string());
    Ok(series)
}

/// Hardness ratio `(H - S) / (H + S)` with soft band 500–1200 and hard band
/// 2000–7000 (modality units of eV). `None` when both bands are empty.
pub fn hardness_ratio(series: &EventSeries) -> Option<f64> {
    let soft = series.modality.iter().filter(|&&e| (500.0..1200.0).contains(&e)).count() as f64;
    let hard = series.modality.iter().filter(|&&e| (2000.0..7000.0).contains(&e)).count() as f64;
    (soft + hard > 0.0).then(|| (hard - soft) / (hard + soft))
}

/// SplitMix64 finalizer, used to derive independent per-series seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One dataset class: a template model (its seed is ignored) and a count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub model: SourceModel,
    pub count: usize,
}

/// Synthetic labels: variability index drawn in [0, 5] for steady sources and
/// [7, 10] otherwise; hardness ratio from the sampled modality values.
fn synthetic_labels(series: &EventSeries, kind: &str, seed: u64) -> Labels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let variability = if kind == "steady" {
        rng.gen_range(0.0..=5.0)
    } else {
        rng.gen_range(7.0..=10.0)
    };
    Labels {
        variability_index: Some(variability),
        hardness_ratio: hardness_ratio(series),
        class_tag: Some(kind.to_string()),
    }
}

/// Write one event CSV per series under `root/events/` and `root/catalog.jsonl`.
/// Series `i` of the whole dataset uses seed `derive_seed(master_seed, i)`.
pub fn generate_dataset(spec: &[ClassSpec], root: &Path, master_seed: u64) -> Result<Catalog, DatagenError> {
    use rayon::prelude::*;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatagenError::IoFailure { path, source }
    };
    let events_dir = root.join("events");
    fs::create_dir_all(&events_dir).map_err(io(&events_dir))?;
    let events_dir = events_dir.canonicalize().map_err(io(&events_dir))?;

    let mut jobs = Vec::new();
    for class in spec {
        class.model.validate()?;
        for _ in 0..class.count {
            let index = jobs.len();
            let kind = class.model.shape.kind();
            jobs.push((format!("{kind}_{index:05}"), class.model, index as u64));
        }
    }
    let entries = jobs
        .par_iter()
        .map(|(id, template, index)| {
            let mut model = *template;
            model.seed = derive_seed(master_seed, *index);
            let mut series = sample_series(&model, id)?;
            series.labels = synthetic_labels(&series, model.shape.kind(), model.seed);
            let path = events_dir.join(format!("{id}.csv"));
            ingest::write_event_csv(&series, &path)?;
            Ok(CatalogEntry {
                series_id: id.clone(),
                file_path: path,
                labels: series.labels,
            })
        })
        .collect::<Result<Vec<_>, DatagenError>>()?;
    let catalog = Catalog {
        entries,
        dataset_root: root.canonicalize().map_err(io(root))?,
    };
    ingest::write_catalog(&catalog, &root.join("catalog.jsonl"))?;
    Ok(catalog)
}

/// Four-class synthetic set (steady, flare, dip, pulsating) with `per_class`
/// series each. Rates are tuned for a few hundred to a few thousand events per series.
pub fn four_class_spec(per_class: usize) -> Vec<ClassSpec> {
    let duration = 20_000.0;
    let model = |shape, base_rate, log10_mean| SourceModel {
        shape,
        base_rate,
        duration,
        spectrum: Spectrum {
            log10_mean,
            log10_sigma: 0.25,
        },
        seed: 0,
    };
    vec![
        ClassSpec {
            model: model(SourceShape::Steady, 0.05, 3.1),
            count: per_class,
        },
        ClassSpec {
            model: model(
                SourceShape::Flare {
                    peak_amplitude: 0.6,
                    rise_time: 300.0,
                    decay_time: 1500.0,
                    onset_fraction: 0.4,
                },
                0.02,
                3.3,
            ),
            count: per_class,
        },
        ClassSpec {
            model: model(
                SourceShape::Dip {
                    depth: 0.95,
                    start_fraction: 0.35,
                    width_fraction: 0.3,
                },
                0.08,
                3.0,
            ),
            count: per_class,
        },
        ClassSpec {
            model: model(
                SourceShape::Pulsating {
                    modulation_fraction: 0.9,
                    period: 2500.0,
                },
                0.06,
                3.2,
            ),
            count: per_class,
        },
    ]
}
