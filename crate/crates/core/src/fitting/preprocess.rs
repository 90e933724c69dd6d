//! Current-injection recordings and their normalisation and resampling.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Injected current sampled every `dt_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentTrace {
    pub samples: Vec<f64>,
    pub dt_ms: f64,
    /// Number of times this stimulus was presented.
    pub repeats: usize,
    pub split: Split,
}

/// One stimulus with the spike times, in ms, recorded on each repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub name: String,
    pub trace: CurrentTrace,
    pub spike_times_ms: Vec<Vec<f64>>,
}

impl Recording {
    pub fn duration_ms(&self) -> f64 {
        self.trace.samples.len() as f64 * self.trace.dt_ms
    }
}

/// A stimulus ready for simulation: current and binary spike trains on the
/// same time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub current: Vec<f64>,
    pub repeats: Vec<Vec<u8>>,
}

/// Mean and standard deviation of the training currents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Pools every sample of the training traces. Test traces are ignored.
    pub fn from_train<'a>(traces: impl IntoIterator<Item = &'a CurrentTrace>) -> Result<Self> {
        let train: Vec<&CurrentTrace> = traces.into_iter().filter(|t| t.split == Split::Train).collect();
        let n: usize = train.iter().map(|t| t.samples.len()).sum();
        if n == 0 {
            return invalid_arg("no training samples to normalise with");
        }
        let mean = train.iter().flat_map(|t| &t.samples).sum::<f64>() / n as f64;
        let var = train.iter().flat_map(|t| &t.samples).map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::InvalidData("training current has zero standard deviation".into()));
        }
        Ok(Self { mean, std })
    }
}

/// Averages consecutive samples in bins of `factor`; a short final bin is
/// averaged over what it holds.
pub fn bin_average(samples: &[f64], factor: usize) -> Vec<f64> {
    samples.chunks(factor.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Integer ratio between two steps, if there is one.
pub fn resample_factor(from_ms: f64, to_ms: f64) -> Result<usize> {
    let r = to_ms / from_ms;
    let k = r.round();
    if !(k >= 1.0) || (r - k).abs() > 1e-6 * r {
        return invalid_arg(format!("cannot resample from {from_ms} ms to {to_ms} ms: ratio {r} is not a whole number"));
    }
    Ok(k as usize)
}

/// Normalises with `stats` and resamples to `dt_ms` by bin averaging.
pub fn preprocess(trace: &CurrentTrace, stats: &NormStats, dt_ms: f64) -> Result<CurrentTrace> {
    let factor = resample_factor(trace.dt_ms, dt_ms)?;
    let norm: Vec<f64> = trace.samples.iter().map(|x| (x - stats.mean) / stats.std).collect();
    Ok(CurrentTrace {
        samples: bin_average(&norm, factor),
        dt_ms,
        repeats: trace.repeats,
        split: trace.split,
    })
}

/// Places spike times on a grid of `steps` bins of `dt_ms`. Times outside
/// the window are dropped and several spikes in one bin count once.
pub fn bin_spikes(times_ms: &[f64], dt_ms: f64, steps: usize) -> Vec<u8> {
    let mut out = vec![0u8; steps];
    for &t in times_ms {
        let k = (t / dt_ms).floor();
        if k >= 0.0 && (k as usize) < steps {
            out[k as usize] = 1;
        }
    }
    out
}

/// Normalises and resamples every recording of one split with statistics
/// from the training split.
pub fn prepare(recordings: &[Recording], split: Split, stats: &NormStats, dt_ms: f64) -> Result<Vec<Stimulus>> {
    recordings
        .iter()
        .filter(|r| r.trace.split == split)
        .map(|r| {
            let trace = preprocess(&r.trace, stats, dt_ms)?;
            let steps = trace.samples.len();
            Ok(Stimulus {
                current: trace.samples,
                repeats: r.spike_times_ms.iter().map(|s| bin_spikes(s, dt_ms, steps)).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(samples: Vec<f64>, split: Split) -> CurrentTrace {
        CurrentTrace {
            samples,
            dt_ms: 0.1,
            repeats: 1,
            split,
        }
    }

    #[test]
    fn constant_training_current_is_rejected() {
        let t = [trace(vec![3.0; 10], Split::Train), trace(vec![1.0, 2.0], Split::Test)];
        assert!(matches!(NormStats::from_train(&t), Err(Error::InvalidData(_))));
    }

    #[test]
    fn normalisation_is_symmetric_and_uses_train_statistics() {
        let t = [trace(vec![1.0, 2.0, 3.0], Split::Train), trace(vec![100.0; 4], Split::Test)];
        let stats = NormStats::from_train(&t).unwrap();
        assert_eq!(stats.mean, 2.0);
        let out = preprocess(&t[0], &stats, 0.1).unwrap().samples;
        assert_eq!(out[1], 0.0);
        assert!((out[0] + out[2]).abs() < 1e-15 && out[2] > 0.0);
    }

    #[test]
    fn resampling_averages_bins() {
        let t = trace((0..10).map(|x| x as f64).collect(), Split::Train);
        let stats = NormStats { mean: 0.0, std: 1.0 };
        let out = preprocess(&t, &stats, 0.2).unwrap();
        assert_eq!(out.samples, vec![0.5, 2.5, 4.5, 6.5, 8.5]);
        assert_eq!(bin_average(&[1.0, 2.0, 4.0], 2), vec![1.5, 4.0]);
        assert!(preprocess(&t, &stats, 0.15).is_err());
    }

    #[test]
    fn spikes_land_in_their_bins() {
        assert_eq!(bin_spikes(&[0.05, 0.25, 0.26, 9.0, -1.0], 0.1, 4), vec![1, 0, 1, 0]);
    }
}
