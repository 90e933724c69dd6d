//! Spike tensor files, synthetic Poisson data and labelled dataset folders.
//!
//! A `.spkt` file is the magic `SPKT`, then little-endian `u32` version (1),
//! batch, neurons and steps, then one packed row per `(b, n)` in row-major
//! order. A row takes `ceil(T / 8)` bytes; step `t` is bit `t % 8` of byte
//! `t / 8` (least significant bit first) and unused high bits are zero.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::spikes::SpikeTensor;
use crate::train::Dataset;

pub const SPKT_MAGIC: &[u8; 4] = b"SPKT";
pub const SPKT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
pub const LABELS_FILE: &str = "labels.csv";

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset: offset as u64,
        message: message.into(),
    })
}

pub fn write_spkt(tensor: &SpikeTensor) -> Vec<u8> {
    let (b, n, t) = tensor.dims();
    let row_bytes = t.div_ceil(8);
    let mut out = Vec::with_capacity(HEADER_LEN + b * n * row_bytes);
    out.extend_from_slice(SPKT_MAGIC);
    for v in [SPKT_VERSION, b as u32, n as u32, t as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for row in tensor.as_slice().chunks(t.max(1)).take(b * n) {
        let mut packed = vec![0u8; row_bytes];
        for (i, &s) in row.iter().enumerate() {
            packed[i / 8] |= s << (i % 8);
        }
        out.extend_from_slice(&packed);
    }
    out
}

pub fn read_spkt(bytes: &[u8]) -> Result<SpikeTensor> {
    if bytes.len() < 4 || &bytes[..4] != SPKT_MAGIC {
        return format_err(0, "missing SPKT magic");
    }
    if bytes.len() < HEADER_LEN {
        return format_err(bytes.len(), "truncated header");
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    if word(0) != SPKT_VERSION {
        return format_err(4, format!("unsupported version {}", word(0)));
    }
    let (b, n, t) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let row_bytes = t.div_ceil(8);
    let want = b
        .checked_mul(n)
        .and_then(|x| x.checked_mul(row_bytes))
        .and_then(|x| x.checked_add(HEADER_LEN));
    match want {
        Some(w) if w == bytes.len() => {}
        Some(w) if w > bytes.len() => {
            return format_err(bytes.len(), format!("truncated payload, expected {w} bytes"))
        }
        Some(w) => return format_err(w, format!("{} trailing bytes", bytes.len() - w)),
        None => return format_err(8, "dimensions overflow"),
    }
    let mut data = Vec::with_capacity(b * n * t);
    for (r, row) in bytes[HEADER_LEN..].chunks(row_bytes.max(1)).take(b * n).enumerate() {
        for i in 0..t {
            data.push((row[i / 8] >> (i % 8)) & 1);
        }
        if t % 8 != 0 && row[row_bytes - 1] >> (t % 8) != 0 {
            return format_err(HEADER_LEN + (r + 1) * row_bytes - 1, "nonzero padding bits");
        }
    }
    SpikeTensor::from_vec(b, n, t, data)
}

pub fn save_spkt(path: impl AsRef<Path>, tensor: &SpikeTensor) -> Result<()> {
    fs::write(path, write_spkt(tensor))?;
    Ok(())
}

pub fn load_spkt(path: impl AsRef<Path>) -> Result<SpikeTensor> {
    read_spkt(&fs::read(path)?)
}

/// Homogeneous Poisson trains, one rate per batch row drawn from
/// `U(rate_min_hz, rate_max_hz)`, with one step lasting one millisecond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSpec {
    pub batch: usize,
    pub neurons: usize,
    pub steps: usize,
    pub rate_min_hz: f64,
    pub rate_max_hz: f64,
    pub seed: u64,
}

impl PoissonSpec {
    pub fn new(batch: usize, neurons: usize, steps: usize, seed: u64) -> Self {
        Self {
            batch,
            neurons,
            steps,
            rate_min_hz: 0.0,
            rate_max_hz: 200.0,
            seed,
        }
    }

    pub fn with_rates(mut self, min_hz: f64, max_hz: f64) -> Self {
        self.rate_min_hz = min_hz;
        self.rate_max_hz = max_hz;
        self
    }
}

const STEP_SECS: f64 = 1e-3;

pub fn gen_poisson(spec: &PoissonSpec) -> Result<SpikeTensor> {
    let (lo, hi) = (spec.rate_min_hz, spec.rate_max_hz);
    if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
        return invalid_arg(format!("rates must satisfy 0 <= min <= max, got [{lo}, {hi}]"));
    }
    if hi * STEP_SECS > 1.0 {
        return invalid_arg(format!("rate {hi} Hz exceeds one spike per 1 ms step"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = spec.neurons * spec.steps;
    let mut data = Vec::with_capacity(spec.batch * cells);
    for _ in 0..spec.batch {
        let rate = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let prob = rate * STEP_SECS;
        data.extend((0..cells).map(|_| rng.random_bool(prob) as u8));
    }
    SpikeTensor::from_vec(spec.batch, spec.neurons, spec.steps, data)
}

/// Two-class rate-coding task: class 0 fires at `rates.0`, class 1 at
/// `rates.1`, alternating by row.
pub fn two_rate_dataset(samples: usize, neurons: usize, steps: usize, rates: (f64, f64), seed: u64) -> Result<Dataset> {
    let labels: Vec<usize> = (0..samples).map(|i| i % 2).collect();
    let mut rows = Vec::with_capacity(samples);
    for (i, &label) in labels.iter().enumerate() {
        let rate = if label == 0 { rates.0 } else { rates.1 };
        let spec = PoissonSpec::new(1, neurons, steps, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
            .with_rates(rate, rate);
        rows.push(gen_poisson(&spec)?);
    }
    let refs: Vec<&SpikeTensor> = rows.iter().collect();
    let inputs = if refs.is_empty() {
        SpikeTensor::zeros(0, neurons, steps)
    } else {
        SpikeTensor::concat(&refs)?
    };
    Dataset::new(inputs, labels)
}

/// Writes one single-row `.spkt` file per sample plus `labels.csv`.
pub fn write_label_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut labels = csv::Writer::from_path(dir.join(LABELS_FILE))?;
    labels.write_record(["filename", "label"])?;
    let width = data.len().max(1).to_string().len();
    for (i, &label) in data.labels.iter().enumerate() {
        let name = format!("sample_{i:0width$}.spkt");
        save_spkt(dir.join(&name), &data.inputs.select_rows(&[i]))?;
        labels.write_record([name, label.to_string()])?;
    }
    labels.flush()?;
    Ok(())
}

/// Reads a folder of `.spkt` files and `labels.csv` (`filename,label`, with an
/// optional header row). Pairs come back in lexicographic filename order.
pub fn load_label_dataset(dir: impl AsRef<Path>) -> Result<Vec<(SpikeTensor, usize)>> {
    let dir = dir.as_ref();
    let mut labels = std::collections::BTreeMap::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(dir.join(LABELS_FILE))?;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        if record.len() != 2 {
            return format_err(offset, format!("{LABELS_FILE}: expected filename,label"));
        }
        if i == 0 && &record[1] == "label" {
            continue;
        }
        let Ok(label) = record[1].trim().parse::<usize>() else {
            return format_err(offset, format!("{LABELS_FILE}: bad label `{}`", &record[1]));
        };
        let name = record[0].trim().to_string();
        if !dir.join(&name).is_file() {
            return format_err(offset, format!("{LABELS_FILE}: `{name}` does not exist"));
        }
        labels.insert(name, label);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "spkt"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            match labels.get(&name) {
                Some(&label) => Ok((load_spkt(&path)?, label)),
                None => format_err(0, format!("{LABELS_FILE}: no label for `{name}`")),
            }
        })
        .collect()
}

/// Loads a label folder as one [`Dataset`]; every file must hold a single row
/// of the same shape.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let pairs = load_label_dataset(dir)?;
    if let Some((t, _)) = pairs.iter().find(|(t, _)| t.batch() != 1) {
        return Err(Error::InvalidData(format!("dataset files must hold one row, found {}", t.batch())));
    }
    let refs: Vec<&SpikeTensor> = pairs.iter().map(|(t, _)| t).collect();
    if refs.is_empty() {
        return invalid_arg("dataset folder has no samples");
    }
    let inputs = SpikeTensor::concat(&refs).map_err(|e| Error::InvalidData(e.to_string()))?;
    Dataset::new(inputs, pairs.iter().map(|(_, l)| *l).collect())
}
