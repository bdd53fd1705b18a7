//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.toml` plus one sub-directory per
//! specimen. Each `(frequency, timestep)` measurement is one payload file
//! containing a `paths x samples` matrix, either as comma-delimited text
//! (one path per line) or as packed little-endian `f64` (row-major, no
//! header; dimensions come from the manifest).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{validate_cycles, validate_frequency, PathId, MAX_PATHS};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Text,
    #[default]
    Binary,
}

impl Encoding {
    pub fn extension(self) -> &'static str {
        match self {
            Encoding::Text => "csv",
            Encoding::Binary => "f64",
        }
    }
}

/// Identifies one payload: all paths of one specimen, frequency and timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeasurementKey {
    pub specimen_id: u32,
    pub freq_khz: u32,
    pub timestep: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenLayout {
    pub id: u32,
    /// Fatigue cycles at timestep `j` are `cycles[j - 1]`.
    pub cycles: Vec<u64>,
}

impl SpecimenLayout {
    pub fn timesteps(&self) -> usize {
        self.cycles.len()
    }
}

/// Shape of a dataset independent of where the waveforms live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub specimens: Vec<SpecimenLayout>,
    pub frequencies: Vec<u32>,
    pub paths: Vec<PathId>,
    pub samples_per_signal: usize,
    pub sample_rate_hz: f64,
}

impl DatasetLayout {
    pub fn validate(&self) -> Result<()> {
        if self.specimens.is_empty() {
            return Err(Error::invalid("dataset has no specimens"));
        }
        for f in &self.frequencies {
            validate_frequency(*f)?;
        }
        if self.paths.is_empty() || self.paths.len() > MAX_PATHS {
            return Err(Error::invalid(format!(
                "dataset must have 1..={MAX_PATHS} paths, got {}",
                self.paths.len()
            )));
        }
        for s in &self.specimens {
            validate_cycles(&s.cycles)?;
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(())
    }

    pub fn specimen_ids(&self) -> Vec<u32> {
        self.specimens.iter().map(|s| s.id).collect()
    }

    pub fn specimen(&self, id: u32) -> Option<&SpecimenLayout> {
        self.specimens.iter().find(|s| s.id == id)
    }

    /// Every measurement key in (specimen, frequency, timestep) order.
    pub fn keys(&self) -> Vec<MeasurementKey> {
        let mut keys = Vec::new();
        for s in &self.specimens {
            for &f in &self.frequencies {
                for t in 1..=s.timesteps() as u32 {
                    keys.push(MeasurementKey {
                        specimen_id: s.id,
                        freq_khz: f,
                        timestep: t,
                    });
                }
            }
        }
        keys
    }
}

/// Anything that can hand out the per-path waveforms of one measurement.
pub trait WaveformSource: Sync {
    fn layout(&self) -> &DatasetLayout;

    /// Rows are in `layout().paths` order. A row may be `None` when that
    /// path was not recorded.
    fn load(&self, key: MeasurementKey) -> Result<Vec<Option<Vec<f64>>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub specimen: u32,
    pub freq_khz: u32,
    pub timestep: u32,
    pub cycles: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    pub encoding: Encoding,
    pub samples_per_signal: usize,
    pub sample_rate_hz: f64,
    /// Paths as `"actuator-sensor"` strings, in payload row order.
    pub paths: Vec<String>,
    pub frequencies: Vec<u32>,
    #[serde(rename = "record")]
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if m.schema_version != MANIFEST_SCHEMA {
            return Err(Error::parse(
                path,
                format!("unsupported manifest schema {}", m.schema_version),
            ));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::parse(path, e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn parse_paths(&self) -> Result<Vec<PathId>> {
        self.paths
            .iter()
            .map(|p| {
                let (a, s) = p
                    .split_once('-')
                    .ok_or_else(|| Error::invalid(format!("bad path {p:?}")))?;
                let a = a.trim().parse().map_err(|_| Error::invalid(format!("bad path {p:?}")))?;
                let s = s.trim().parse().map_err(|_| Error::invalid(format!("bad path {p:?}")))?;
                PathId::new(a, s)
            })
            .collect()
    }

    pub fn layout(&self) -> Result<DatasetLayout> {
        let mut per_specimen: BTreeMap<u32, BTreeMap<u32, u64>> = BTreeMap::new();
        for r in &self.records {
            validate_frequency(r.freq_khz)?;
            if !self.frequencies.contains(&r.freq_khz) {
                return Err(Error::invalid(format!(
                    "record frequency {} not listed in manifest",
                    r.freq_khz
                )));
            }
            let steps = per_specimen.entry(r.specimen).or_default();
            match steps.get(&r.timestep) {
                Some(&c) if c != r.cycles => {
                    return Err(Error::invalid(format!(
                        "specimen {} timestep {} has conflicting cycle counts",
                        r.specimen, r.timestep
                    )))
                }
                _ => {
                    steps.insert(r.timestep, r.cycles);
                }
            }
        }
        let mut specimens = Vec::new();
        for (id, steps) in per_specimen {
            let expected: Vec<u32> = (1..=steps.len() as u32).collect();
            let got: Vec<u32> = steps.keys().copied().collect();
            if got != expected {
                return Err(Error::invalid(format!(
                    "specimen {id} timesteps must be contiguous from 1"
                )));
            }
            specimens.push(SpecimenLayout {
                id,
                cycles: steps.into_values().collect(),
            });
        }
        let layout = DatasetLayout {
            specimens,
            frequencies: self.frequencies.clone(),
            paths: self.parse_paths()?,
            samples_per_signal: self.samples_per_signal,
            sample_rate_hz: self.sample_rate_hz,
        };
        layout.validate()?;
        Ok(layout)
    }
}

/// Dataset backed by a manifest directory.
#[derive(Debug, Clone)]
pub struct DiskDataset {
    root: PathBuf,
    manifest: Manifest,
    layout: DatasetLayout,
    files: HashMap<MeasurementKey, String>,
}

impl DiskDataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = Manifest::read(&root.join(MANIFEST_FILE))?;
        let layout = manifest.layout()?;
        let files = manifest
            .records
            .iter()
            .map(|r| {
                (
                    MeasurementKey {
                        specimen_id: r.specimen,
                        freq_khz: r.freq_khz,
                        timestep: r.timestep,
                    },
                    r.file.clone(),
                )
            })
            .collect();
        Ok(Self {
            root,
            manifest,
            layout,
            files,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl WaveformSource for DiskDataset {
    fn layout(&self) -> &DatasetLayout {
        &self.layout
    }

    fn load(&self, key: MeasurementKey) -> Result<Vec<Option<Vec<f64>>>> {
        let rel = self.files.get(&key).ok_or_else(|| {
            Error::invalid(format!(
                "no payload for specimen {} at {} kHz timestep {}",
                key.specimen_id, key.freq_khz, key.timestep
            ))
        })?;
        let rows = read_payload(
            &self.root.join(rel),
            self.layout.paths.len(),
            self.layout.samples_per_signal,
            self.manifest.encoding,
        )?;
        Ok(rows.into_iter().map(Some).collect())
    }
}

/// Writes any waveform source as a manifest directory.
pub fn write_dataset(
    source: &dyn WaveformSource,
    root: &Path,
    name: &str,
    encoding: Encoding,
) -> Result<Manifest> {
    let layout = source.layout();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut records = Vec::new();
    for key in layout.keys() {
        let spec = layout
            .specimen(key.specimen_id)
            .expect("key built from layout");
        let rel = format!(
            "specimen_{:03}/f{:03}_t{:04}.{}",
            key.specimen_id,
            key.freq_khz,
            key.timestep,
            encoding.extension()
        );
        let path = root.join(&rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let rows = source.load(key)?;
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| r.ok_or_else(|| Error::invalid("cannot persist a missing path")))
            .collect::<Result<_>>()?;
        write_payload(&path, &rows, encoding)?;
        records.push(ManifestRecord {
            specimen: key.specimen_id,
            freq_khz: key.freq_khz,
            timestep: key.timestep,
            cycles: spec.cycles[key.timestep as usize - 1],
            file: rel,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA,
        name: name.to_string(),
        encoding,
        samples_per_signal: layout.samples_per_signal,
        sample_rate_hz: layout.sample_rate_hz,
        paths: layout.paths.iter().map(|p| p.to_string()).collect(),
        frequencies: layout.frequencies.clone(),
        records,
    };
    manifest.write(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn write_payload(path: &Path, rows: &[Vec<f64>], encoding: Encoding) -> Result<()> {
    let mut buf = Vec::new();
    match encoding {
        Encoding::Binary => {
            buf.reserve(rows.iter().map(|r| r.len() * 8).sum());
            for v in rows.iter().flatten() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Encoding::Text => {
            let mut w = BufWriter::new(&mut buf);
            for r in rows {
                let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    write_atomic(path, &buf)
}

pub fn read_payload(path: &Path, rows: usize, cols: usize, encoding: Encoding) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let out: Vec<Vec<f64>> = match encoding {
        Encoding::Binary => {
            let mut bytes = Vec::with_capacity(rows * cols * 8);
            BufReader::new(file)
                .read_to_end(&mut bytes)
                .map_err(|e| Error::io(path, e))?;
            if bytes.len() != rows * cols * 8 {
                return Err(Error::parse(
                    path,
                    format!("expected {} bytes, found {}", rows * cols * 8, bytes.len()),
                ));
            }
            bytes
                .chunks_exact(cols * 8)
                .map(|row| {
                    row.chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                        .collect()
                })
                .collect()
        }
        Encoding::Text => {
            let mut out = Vec::with_capacity(rows);
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row = line
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?;
                if row.len() != cols {
                    return Err(Error::parse(
                        path,
                        format!("line {}: expected {cols} values, found {}", i + 1, row.len()),
                    ));
                }
                out.push(row);
            }
            if out.len() != rows {
                return Err(Error::parse(
                    path,
                    format!("expected {rows} rows, found {}", out.len()),
                ));
            }
            out
        }
    };
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(path.display().to_string()));
    }
    Ok(out)
}

/// Writes via a sibling temporary file and rename, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Fixed {
        layout: DatasetLayout,
    }

    impl WaveformSource for Fixed {
        fn layout(&self) -> &DatasetLayout {
            &self.layout
        }

        fn load(&self, key: MeasurementKey) -> Result<Vec<Option<Vec<f64>>>> {
            Ok((0..self.layout.paths.len())
                .map(|p| {
                    Some(
                        (0..self.layout.samples_per_signal)
                            .map(|i| {
                                (key.specimen_id as f64) * 0.1 + (key.timestep as f64)
                                    - (p * i) as f64 / 7.0
                            })
                            .collect(),
                    )
                })
                .collect())
        }
    }

    fn fixed() -> Fixed {
        Fixed {
            layout: DatasetLayout {
                specimens: vec![
                    SpecimenLayout { id: 1, cycles: vec![0, 5000, 10000] },
                    SpecimenLayout { id: 2, cycles: vec![0, 5000] },
                ],
                frequencies: vec![50, 100],
                paths: PathId::all().into_iter().take(3).collect(),
                samples_per_signal: 5,
                sample_rate_hz: 1e6,
            },
        }
    }

    #[test]
    fn dataset_round_trip_both_encodings() {
        for enc in [Encoding::Text, Encoding::Binary] {
            let dir = tempfile::tempdir().unwrap();
            let src = fixed();
            write_dataset(&src, dir.path(), "fixture", enc).unwrap();
            let disk = DiskDataset::open(dir.path()).unwrap();
            assert_eq!(disk.layout(), src.layout());
            for key in src.layout.keys() {
                assert_eq!(disk.load(key).unwrap(), src.load(key).unwrap());
            }
        }
    }

    #[test]
    fn manifest_rejects_gaps_and_unknown_schema() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_dataset(&fixed(), dir.path(), "x", Encoding::Binary).unwrap();
        m.records.retain(|r| !(r.specimen == 1 && r.timestep == 2));
        assert!(m.layout().is_err());

        let mut m2 = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        m2.schema_version = 99;
        m2.write(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(DiskDataset::open(dir.path()).is_err());
    }

    #[test]
    fn truncated_binary_payload_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        write_payload(&p, &[vec![1.0, 2.0]], Encoding::Binary).unwrap();
        assert!(matches!(
            read_payload(&p, 1, 3, Encoding::Binary),
            Err(Error::Parse { .. })
        ));
    }

    proptest! {
        #[test]
        fn payload_values_survive_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 4), 1..4),
            text in any::<bool>(),
        ) {
            let enc = if text { Encoding::Text } else { Encoding::Binary };
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("payload");
            write_payload(&p, &rows, enc).unwrap();
            let back = read_payload(&p, rows.len(), 4, enc).unwrap();
            for (a, b) in back.iter().flatten().zip(rows.iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
