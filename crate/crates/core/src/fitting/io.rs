//! Recording folders for fits.
//!
//! A folder holds `train/` and `test/` subfolders. Each stimulus `NAME` is a
//! CSV file `NAME.csv` with header `t_ms,current` and uniformly spaced times,
//! plus one text file per repeat, `NAME.rep0.txt`, `NAME.rep1.txt` and so on,
//! each listing spike times in ms, one per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::preprocess::{CurrentTrace, Recording, Split};

#[derive(Debug, Serialize, Deserialize)]
struct Sample {
    t_ms: f64,
    current: f64,
}

fn split_dir(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn data_err<T>(msg: String) -> Result<T> {
    Err(Error::InvalidData(msg))
}

/// Reads one `t_ms,current` file; the step is the spacing of the first two
/// samples and every other spacing must match it.
pub fn read_current_csv(path: &Path, split: Split) -> Result<CurrentTrace> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows: Vec<Sample> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.len() < 2 {
        return data_err(format!("{}: need at least two samples", path.display()));
    }
    let dt = rows[1].t_ms - rows[0].t_ms;
    if !(dt > 0.0) {
        return data_err(format!("{}: times must increase", path.display()));
    }
    for (i, w) in rows.windows(2).enumerate() {
        if ((w[1].t_ms - w[0].t_ms) - dt).abs() > 1e-6 * dt {
            return data_err(format!("{}: uneven time step at row {}", path.display(), i + 2));
        }
    }
    Ok(CurrentTrace {
        samples: rows.iter().map(|r| r.current).collect(),
        dt_ms: dt,
        repeats: 0,
        split,
    })
}

/// Parses spike times, one float per non-empty line.
pub fn read_spike_times(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .or_else(|_| data_err(format!("{}:{}: `{}` is not a time", path.display(), i + 1, l.trim())))
        })
        .collect()
}

fn load_split(dir: &Path, split: Split) -> Result<Vec<Recording>> {
    let sub = dir.join(split_dir(split));
    let mut names: Vec<String> = fs::read_dir(&sub)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", sub.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|f| f.strip_suffix(".csv").map(str::to_owned))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let mut trace = read_current_csv(&sub.join(format!("{name}.csv")), split)?;
            let mut spike_times_ms = Vec::new();
            while let Ok(true) = sub.join(format!("{name}.rep{}.txt", spike_times_ms.len())).try_exists() {
                let path = sub.join(format!("{name}.rep{}.txt", spike_times_ms.len()));
                spike_times_ms.push(read_spike_times(&path)?);
            }
            if spike_times_ms.is_empty() {
                return data_err(format!("{}: stimulus `{name}` has no repeat files", sub.display()));
            }
            trace.repeats = spike_times_ms.len();
            Ok(Recording {
                name,
                trace,
                spike_times_ms,
            })
        })
        .collect()
}

/// Loads both splits, each in lexicographic order of stimulus names.
pub fn load_recordings(dir: impl AsRef<Path>) -> Result<Vec<Recording>> {
    let dir = dir.as_ref();
    let mut out = load_split(dir, Split::Train)?;
    out.extend(load_split(dir, Split::Test)?);
    Ok(out)
}

/// Writes recordings in the folder layout [`load_recordings`] reads.
pub fn write_recordings(dir: impl AsRef<Path>, recordings: &[Recording]) -> Result<()> {
    let dir = dir.as_ref();
    for split in [Split::Train, Split::Test] {
        fs::create_dir_all(dir.join(split_dir(split)))?;
    }
    for r in recordings {
        let sub = dir.join(split_dir(r.trace.split));
        let mut w = csv::Writer::from_path(sub.join(format!("{}.csv", r.name)))?;
        for (i, &current) in r.trace.samples.iter().enumerate() {
            w.serialize(Sample {
                t_ms: i as f64 * r.trace.dt_ms,
                current,
            })?;
        }
        w.flush()?;
        for (k, times) in r.spike_times_ms.iter().enumerate() {
            let mut f = std::io::BufWriter::new(fs::File::create(sub.join(format!("{}.rep{k}.txt", r.name)))?);
            for t in times {
                writeln!(f, "{t}")?;
            }
            f.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(name: &str, split: Split) -> Recording {
        Recording {
            name: name.into(),
            trace: CurrentTrace {
                samples: vec![0.5, -1.25, 3.0, 0.1],
                dt_ms: 0.25,
                repeats: 2,
                split,
            },
            spike_times_ms: vec![vec![0.3, 0.8], vec![]],
        }
    }

    #[test]
    fn folder_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![recording("a", Split::Train), recording("b", Split::Test)];
        write_recordings(dir.path(), &recs).unwrap();
        let back = load_recordings(dir.path()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn missing_repeats_and_bad_times_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_recordings(dir.path(), &[recording("a", Split::Train)]).unwrap();
        fs::create_dir_all(dir.path().join("test")).unwrap();
        fs::write(dir.path().join("test/c.csv"), "t_ms,current\n0,1\n0.5,2\n").unwrap();
        assert!(matches!(load_recordings(dir.path()), Err(Error::InvalidData(_))));
        fs::write(dir.path().join("test/c.rep0.txt"), "1.0\nabc\n").unwrap();
        assert!(matches!(load_recordings(dir.path()), Err(Error::InvalidData(_))));
        fs::write(dir.path().join("test/c.rep0.txt"), "1.0\n\n").unwrap();
        assert_eq!(load_recordings(dir.path()).unwrap().len(), 2);
    }
}
