use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::registry::FeatureRegistry;
use super::stats::{freq_features, tf_features, time_features, FeatureValues};
use crate::data::TimeAxis;
use crate::dataset::{write_atomic, MeasurementKey, SpecimenLayout, WaveformSource};
use crate::error::{Error, Result};
use crate::sigproc::{emd, fft, hilbert_analytic, stft, EmdConfig, Spectrogram, DEFAULT_OVERLAP, DEFAULT_WINDOW};

pub const FEATURES_FILE: &str = "features.csv";
pub const TIMESTEPS_FILE: &str = "timesteps.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub stft_window: usize,
    pub stft_overlap: usize,
    pub emd: EmdConfig,
    /// 1-based index of the IMF the EMD block is computed from.
    pub emd_imf: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            stft_window: DEFAULT_WINDOW,
            stft_overlap: DEFAULT_OVERLAP,
            emd: EmdConfig::default(),
            emd_imf: 1,
        }
    }
}

impl FeatureConfig {
    pub fn stft_windows(&self, samples: usize) -> usize {
        Spectrogram::window_count(samples, self.stft_window, self.stft_overlap)
    }

    pub fn registry(&self, samples: usize) -> FeatureRegistry {
        FeatureRegistry::new(self.stft_windows(samples))
    }

    fn emd_config(&self) -> EmdConfig {
        // Only the requested IMF is needed; later ones are never read.
        EmdConfig {
            max_imfs: Some(self.emd.max_imfs.map_or(self.emd_imf, |m| m.min(self.emd_imf))),
            ..self.emd
        }
    }
}

/// Feature vector of one signal plus notes on anything that was replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFeatures {
    pub values: Vec<f64>,
    pub degenerate: bool,
    /// The requested IMF did not exist and the EMD residual was used.
    pub emd_fallback: bool,
}

/// All feature blocks of one waveform in registry order. Spectral
/// frequencies are expressed in kHz.
pub fn extract_signal(signal: &[f64], sample_rate_hz: f64, cfg: &FeatureConfig) -> Result<SignalFeatures> {
    if cfg.emd_imf == 0 {
        return Err(Error::invalid("emd_imf is 1-based"));
    }
    let mut degenerate = false;
    let mut values = Vec::with_capacity(71 + 4 * cfg.stft_windows(signal.len()));
    let mut take = |f: FeatureValues| {
        degenerate |= f.degenerate;
        values.extend(f.values);
    };

    take(time_features(signal)?);

    let spectrum = fft(signal)?;
    take(freq_features(
        &spectrum.one_sided_magnitudes(),
        &spectrum.one_sided_frequencies(sample_rate_hz / 1000.0),
    )?);

    take(time_features(&hilbert_analytic(signal)?.envelope())?);

    let mut d = emd(signal, &cfg.emd_config())?;
    let emd_fallback = d.imfs.len() < cfg.emd_imf;
    let component = if emd_fallback {
        d.residual
    } else {
        d.imfs.swap_remove(cfg.emd_imf - 1)
    };
    take(time_features(&component)?);

    take(tf_features(&stft(signal, cfg.stft_window, cfg.stft_overlap)?)?);

    Ok(SignalFeatures {
        values,
        degenerate: degenerate || emd_fallback,
        emd_fallback,
    })
}

/// Per-path features of one measurement averaged over the recorded paths.
fn extract_key(
    source: &dyn WaveformSource,
    key: MeasurementKey,
    cfg: &FeatureConfig,
    width: usize,
) -> Result<(Vec<f64>, Vec<String>)> {
    let rows = source.load(key)?;
    let rate = source.layout().sample_rate_hz;
    let mut sum = vec![0.0; width];
    let mut used = 0usize;
    let mut degenerate = 0usize;
    let mut fallback = 0usize;
    for row in rows.iter().flatten() {
        let f = extract_signal(row, rate, cfg)?;
        if f.values.len() != width {
            return Err(Error::ShapeMismatch {
                expected: width,
                actual: f.values.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(&f.values) {
            *s += v;
        }
        used += 1;
        degenerate += f.degenerate as usize;
        fallback += f.emd_fallback as usize;
    }
    let tag = format!(
        "specimen {} freq {} timestep {}",
        key.specimen_id, key.freq_khz, key.timestep
    );
    if used == 0 {
        return Err(Error::invalid(format!("{tag}: no recorded paths")));
    }
    let mut flags = Vec::new();
    if used < rows.len() {
        flags.push(format!("{tag}: averaged over {used} of {} paths", rows.len()));
    }
    if fallback > 0 {
        flags.push(format!("{tag}: {fallback} paths without IMF {}, residual used", cfg.emd_imf));
    } else if degenerate > 0 {
        flags.push(format!("{tag}: {degenerate} paths with degenerate statistics set to 0"));
    }
    let n = used as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(tag));
    }
    Ok((sum, flags))
}

/// Features for every measurement of `frequencies` (all dataset
/// frequencies when empty), averaged over paths.
pub fn extract_all(source: &dyn WaveformSource, cfg: &FeatureConfig, frequencies: &[u32]) -> Result<FeatureTensor> {
    let layout = source.layout();
    layout.validate()?;
    let freqs: Vec<u32> = if frequencies.is_empty() {
        layout.frequencies.clone()
    } else {
        for f in frequencies {
            if !layout.frequencies.contains(f) {
                return Err(Error::invalid(format!("frequency {f} kHz is not in the dataset")));
            }
        }
        let mut f = frequencies.to_vec();
        f.sort_unstable();
        f.dedup();
        f
    };
    let registry = cfg.registry(layout.samples_per_signal);
    if registry.stft_windows() == 0 {
        return Err(Error::invalid(format!(
            "signals of {} samples are shorter than the stft window {}",
            layout.samples_per_signal, cfg.stft_window
        )));
    }
    let width = registry.len();
    let keys: Vec<MeasurementKey> = layout
        .keys()
        .into_iter()
        .filter(|k| freqs.contains(&k.freq_khz))
        .collect();
    log::info!("extracting {width} features for {} measurements", keys.len());
    let results = keys
        .par_iter()
        .map(|&k| extract_key(source, k, cfg, width))
        .collect::<Result<Vec<_>>>()?;

    let mut cells: BTreeMap<(u32, u32), Vec<Vec<f64>>> = BTreeMap::new();
    let mut flags = Vec::new();
    for (key, (row, f)) in keys.iter().zip(results) {
        cells
            .entry((key.specimen_id, key.freq_khz))
            .or_default()
            .push(row);
        flags.extend(f);
    }
    if !flags.is_empty() {
        log::warn!("{} feature extraction notes", flags.len());
    }
    let mut tensor = FeatureTensor::new(registry, freqs, layout.specimens.clone(), cells)?;
    tensor.flags = flags;
    Ok(tensor)
}

/// One specimen's feature rows over time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecimenSeries {
    pub specimen_id: u32,
    pub cycles: Vec<u64>,
    /// `rows[t][feature]`.
    pub rows: Vec<Vec<f64>>,
}

impl SpecimenSeries {
    pub fn times(&self, axis: TimeAxis) -> Vec<f64> {
        axis.times(&self.cycles)
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[feature]).collect()
    }

    /// Keeps only the given zero-based columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> SpecimenSeries {
        SpecimenSeries {
            specimen_id: self.specimen_id,
            cycles: self.cycles.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| columns.iter().map(|&c| r[c]).collect())
                .collect(),
        }
    }
}

/// Path-averaged features indexed by (specimen, frequency, timestep, feature).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub registry: FeatureRegistry,
    pub frequencies: Vec<u32>,
    pub specimens: Vec<SpecimenLayout>,
    cells: BTreeMap<(u32, u32), Vec<Vec<f64>>>,
    pub flags: Vec<String>,
}

impl FeatureTensor {
    pub fn new(
        registry: FeatureRegistry,
        frequencies: Vec<u32>,
        specimens: Vec<SpecimenLayout>,
        cells: BTreeMap<(u32, u32), Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if frequencies.is_empty() || specimens.is_empty() {
            return Err(Error::invalid("feature tensor needs specimens and frequencies"));
        }
        if cells.len() != frequencies.len() * specimens.len() {
            return Err(Error::ShapeMismatch {
                expected: frequencies.len() * specimens.len(),
                actual: cells.len(),
            });
        }
        for s in &specimens {
            for f in &frequencies {
                let rows = cells.get(&(s.id, *f)).ok_or_else(|| {
                    Error::invalid(format!("missing features for specimen {} at {f} kHz", s.id))
                })?;
                if rows.len() != s.timesteps() {
                    return Err(Error::ShapeMismatch {
                        expected: s.timesteps(),
                        actual: rows.len(),
                    });
                }
                for r in rows {
                    if r.len() != registry.len() {
                        return Err(Error::ShapeMismatch {
                            expected: registry.len(),
                            actual: r.len(),
                        });
                    }
                    if r.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("features of specimen {}", s.id)));
                    }
                }
            }
        }
        Ok(Self {
            registry,
            frequencies,
            specimens,
            cells,
            flags: Vec::new(),
        })
    }

    pub fn width(&self) -> usize {
        self.registry.len()
    }

    pub fn specimen_ids(&self) -> Vec<u32> {
        self.specimens.iter().map(|s| s.id).collect()
    }

    /// `(specimens, frequencies, max timesteps, features)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let t = self.specimens.iter().map(|s| s.timesteps()).max().unwrap_or(0);
        (self.specimens.len(), self.frequencies.len(), t, self.width())
    }

    pub fn rows(&self, specimen: u32, freq_khz: u32) -> Option<&[Vec<f64>]> {
        self.cells.get(&(specimen, freq_khz)).map(|v| v.as_slice())
    }

    fn layout(&self, specimen: u32) -> Result<&SpecimenLayout> {
        self.specimens
            .iter()
            .find(|s| s.id == specimen)
            .ok_or_else(|| Error::invalid(format!("specimen {specimen} is not in the feature tensor")))
    }

    /// Rows at one frequency, or averaged over all frequencies when `None`.
    pub fn series(&self, specimen: u32, freq_khz: Option<u32>) -> Result<SpecimenSeries> {
        let layout = self.layout(specimen)?;
        let rows = match freq_khz {
            Some(f) => self
                .rows(specimen, f)
                .ok_or_else(|| Error::invalid(format!("frequency {f} kHz is not in the feature tensor")))?
                .to_vec(),
            None => {
                let n = self.frequencies.len() as f64;
                let mut acc = vec![vec![0.0; self.width()]; layout.timesteps()];
                for f in &self.frequencies {
                    for (a, r) in acc.iter_mut().zip(&self.cells[&(specimen, *f)]) {
                        for (x, v) in a.iter_mut().zip(r) {
                            *x += v;
                        }
                    }
                }
                acc.iter_mut().flatten().for_each(|x| *x /= n);
                acc
            }
        };
        Ok(SpecimenSeries {
            specimen_id: specimen,
            cycles: layout.cycles.clone(),
            rows,
        })
    }

    pub fn all_series(&self, freq_khz: Option<u32>) -> Result<Vec<SpecimenSeries>> {
        self.specimens
            .iter()
            .map(|s| self.series(s.id, freq_khz))
            .collect()
    }

    /// Writes the long-format feature table and the timestep sidecar.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = String::from("specimen,freq_khz,timestep,feature_id,value\n");
        for ((s, f), rows) in &self.cells {
            for (t, row) in rows.iter().enumerate() {
                for (i, v) in row.iter().enumerate() {
                    let _ = writeln!(out, "{s},{f},{},{},{v:?}", t + 1, i + 1);
                }
            }
        }
        write_atomic(&dir.join(FEATURES_FILE), out.as_bytes())?;
        let mut side = String::from("specimen,timestep,cycles\n");
        for s in &self.specimens {
            for (t, c) in s.cycles.iter().enumerate() {
                let _ = writeln!(side, "{},{},{c}", s.id, t + 1);
            }
        }
        write_atomic(&dir.join(TIMESTEPS_FILE), side.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let side_path = dir.join(TIMESTEPS_FILE);
        let mut specimens: Vec<SpecimenLayout> = Vec::new();
        let side_text = read_text(&side_path)?;
        for (line_no, fields) in csv_rows(&side_text, &side_path, 3)? {
            let parse_err = |m: String| Error::parse(&side_path, format!("line {line_no}: {m}"));
            let id: u32 = parse_field(fields[0]).map_err(parse_err)?;
            let t: usize = parse_field(fields[1]).map_err(parse_err)?;
            let c: u64 = parse_field(fields[2]).map_err(parse_err)?;
            if specimens.last().map(|s| s.id) != Some(id) {
                specimens.push(SpecimenLayout { id, cycles: Vec::new() });
            }
            let s = specimens.last_mut().expect("pushed above");
            if t != s.cycles.len() + 1 {
                return Err(parse_err(format!("timestep {t} out of order")));
            }
            s.cycles.push(c);
        }

        let path = dir.join(FEATURES_FILE);
        let mut raw: BTreeMap<(u32, u32), BTreeMap<usize, Vec<(usize, f64)>>> = BTreeMap::new();
        let mut max_id = 0usize;
        let text = read_text(&path)?;
        for (line_no, fields) in csv_rows(&text, &path, 5)? {
            let parse_err = |m: String| Error::parse(&path, format!("line {line_no}: {m}"));
            let s: u32 = parse_field(fields[0]).map_err(parse_err)?;
            let f: u32 = parse_field(fields[1]).map_err(parse_err)?;
            let t: usize = parse_field(fields[2]).map_err(parse_err)?;
            let id: usize = parse_field(fields[3]).map_err(parse_err)?;
            let v: f64 = parse_field(fields[4]).map_err(parse_err)?;
            if t == 0 || id == 0 {
                return Err(parse_err("timestep and feature id are 1-based".into()));
            }
            max_id = max_id.max(id);
            raw.entry((s, f)).or_default().entry(t).or_default().push((id, v));
        }
        if max_id < 71 || (max_id - 71) % 4 != 0 {
            return Err(Error::parse(&path, format!("feature ids end at {max_id}, not a valid layout")));
        }
        let registry = FeatureRegistry::new((max_id - 71) / 4);
        let mut frequencies: Vec<u32> = raw.keys().map(|k| k.1).collect();
        frequencies.sort_unstable();
        frequencies.dedup();
        let mut cells = BTreeMap::new();
        for (key, steps) in raw {
            let mut rows = Vec::with_capacity(steps.len());
            for (i, (t, mut entries)) in steps.into_iter().enumerate() {
                if t != i + 1 {
                    return Err(Error::parse(&path, format!("specimen {} is missing timestep {}", key.0, i + 1)));
                }
                entries.sort_by_key(|e| e.0);
                if entries.len() != max_id || entries.iter().enumerate().any(|(j, e)| e.0 != j + 1) {
                    return Err(Error::parse(
                        &path,
                        format!("specimen {} timestep {t} does not have dense feature ids", key.0),
                    ));
                }
                rows.push(entries.into_iter().map(|e| e.1).collect());
            }
            cells.insert(key, rows);
        }
        FeatureTensor::new(registry, frequencies, specimens, cells)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.trim().parse().map_err(|_| format!("cannot parse `{s}`"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Data lines of a headed CSV text with their 1-based line numbers.
fn csv_rows<'a>(text: &'a str, path: &Path, cols: usize) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::parse(path, format!("line {}: expected {cols} fields", i + 1)));
        }
        out.push((i + 1, fields));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PathId;
    use crate::dataset::DatasetLayout;
    use std::f64::consts::PI;

    struct Fixed {
        layout: DatasetLayout,
        rows: Vec<Option<Vec<f64>>>,
    }

    impl WaveformSource for Fixed {
        fn layout(&self) -> &DatasetLayout {
            &self.layout
        }
        fn load(&self, _key: MeasurementKey) -> Result<Vec<Option<Vec<f64>>>> {
            Ok(self.rows.clone())
        }
    }

    fn tone(len: usize, cycles: f64, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|i| amp * (2.0 * PI * cycles * i as f64 / len as f64).sin())
            .collect()
    }

    fn fixed(rows: Vec<Option<Vec<f64>>>) -> Fixed {
        let paths = PathId::all()[..rows.len()].to_vec();
        Fixed {
            layout: DatasetLayout {
                specimens: vec![SpecimenLayout {
                    id: 1,
                    cycles: vec![0, 5000],
                }],
                frequencies: vec![50],
                paths,
                samples_per_signal: rows.iter().flatten().next().unwrap().len(),
                sample_rate_hz: 1e6,
            },
            rows,
        }
    }

    #[test]
    fn default_signal_has_131_features() {
        let f = extract_signal(&tone(2000, 40.0, 1.0), 1e6, &FeatureConfig::default()).unwrap();
        assert_eq!(f.values.len(), 131);
        assert!(f.values.iter().all(|v| v.is_finite()));
        assert!(!f.emd_fallback);
    }

    #[test]
    fn extraction_is_deterministic() {
        let x: Vec<f64> = (0..600).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let a = extract_signal(&x, 1e6, &FeatureConfig::default()).unwrap();
        let b = extract_signal(&x, 1e6, &FeatureConfig::default()).unwrap();
        assert_eq!(
            a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn envelope_and_imf_blocks_on_a_tone() {
        let x: Vec<f64> = (0..2000).map(|i| (2.0 * PI * 40.0 * i as f64 / 2000.0).cos()).collect();
        let f = extract_signal(&x, 1e6, &FeatureConfig::default()).unwrap();
        // envelope mean ~ 1, std ~ 0
        assert!((f.values[33] - 1.0).abs() < 1e-6);
        assert!(f.values[34] < 1e-6);
        // first IMF of a pure tone matches the tone within 2%
        for (raw, imf) in f.values[0..19].iter().zip(&f.values[52..71]) {
            let scale = raw.abs().max(1e-3);
            assert!((raw - imf).abs() / scale < 0.02, "{raw} vs {imf}");
        }
    }

    #[test]
    fn zero_signal_is_flagged_zero() {
        let f = extract_signal(&[0.0; 500], 1e6, &FeatureConfig::default()).unwrap();
        assert!(f.degenerate);
        assert!(f.emd_fallback);
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn path_average_and_missing_paths() {
        let a = tone(500, 10.0, 1.0);
        let b = tone(500, 10.0, 3.0);
        let fa = extract_signal(&a, 1e6, &FeatureConfig::default()).unwrap();
        let fb = extract_signal(&b, 1e6, &FeatureConfig::default()).unwrap();
        let src = fixed(vec![Some(a.clone()), Some(b.clone()), None]);
        let t = extract_all(&src, &FeatureConfig::default(), &[]).unwrap();
        assert_eq!(t.shape(), (1, 1, 2, 71 + 4 * 3));
        let row = &t.rows(1, 50).unwrap()[0];
        for i in 0..row.len() {
            let want = 0.5 * (fa.values[i] + fb.values[i]);
            assert!((row[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
        // rms of amplitude 1 and 3 tones averages to that of amplitude 2
        assert!((row[3] - 2.0 / 2f64.sqrt()).abs() < 1e-9);
        assert!(t.flags.iter().any(|f| f.contains("2 of 3 paths")));
    }

    #[test]
    fn duplicated_paths_equal_single_path() {
        let a = tone(500, 7.0, 1.3);
        let one = extract_all(&fixed(vec![Some(a.clone())]), &FeatureConfig::default(), &[]).unwrap();
        let dup = extract_all(
            &fixed(vec![Some(a.clone()), Some(a.clone()), Some(a)]),
            &FeatureConfig::default(),
            &[],
        )
        .unwrap();
        let (r1, r3) = (&one.rows(1, 50).unwrap()[0], &dup.rows(1, 50).unwrap()[0]);
        for (x, y) in r1.iter().zip(r3.iter()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        assert!(extract_all(&fixed(vec![Some(vec![1.0; 500])]), &FeatureConfig::default(), &[100]).is_err());
    }

    #[test]
    fn tensor_round_trips_through_disk() {
        let src = fixed(vec![Some(tone(500, 9.0, 0.7)), Some(tone(500, 3.0, 0.1))]);
        let t = extract_all(&src, &FeatureConfig::default(), &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        t.write(dir.path()).unwrap();
        let back = FeatureTensor::read(dir.path()).unwrap();
        assert_eq!(back.registry, t.registry);
        assert_eq!(back.specimens, t.specimens);
        for (a, b) in back.rows(1, 50).unwrap().iter().zip(t.rows(1, 50).unwrap()) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn frequency_average() {
        let reg = FeatureRegistry::new(0);
        let specimens = vec![SpecimenLayout { id: 3, cycles: vec![0, 10] }];
        let mut cells = BTreeMap::new();
        cells.insert((3, 50), vec![vec![1.0; 71], vec![2.0; 71]]);
        cells.insert((3, 100), vec![vec![3.0; 71], vec![6.0; 71]]);
        let t = FeatureTensor::new(reg, vec![50, 100], specimens, cells).unwrap();
        let s = t.series(3, None).unwrap();
        assert_eq!(s.column(0), vec![2.0, 4.0]);
        assert_eq!(t.series(3, Some(100)).unwrap().column(5), vec![3.0, 6.0]);
        assert!(t.series(4, None).is_err());
        assert_eq!(s.select(&[2, 0]).rows[1], vec![4.0, 4.0]);
    }
}
