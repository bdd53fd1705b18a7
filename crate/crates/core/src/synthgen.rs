//! Synthetic run-to-failure datasets with a known degradation state.
//!
//! Every waveform is a Hann-windowed tone burst at the excitation
//! frequency. As damage `d` grows from 0 to 1 the burst loses a fraction
//! `a·d` of its amplitude and arrives `b·d` samples later. `a` and `b` vary
//! per specimen. Each signal also carries a random gain and additive white
//! noise. Waveforms are generated on demand from a counter-based seed, so
//! any measurement can be produced in isolation and always comes out
//! bit-identical.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{curves_to_csv, HiCurve, HiSource, PathId, DEFAULT_SAMPLES, EXCITATION_FREQS_KHZ, MAX_PATHS};
use crate::dataset::{write_atomic, write_dataset, DatasetLayout, Encoding, Manifest, MeasurementKey, SpecimenLayout, WaveformSource};
use crate::error::{Error, Result};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const SPEC_FILE: &str = "synth.toml";

/// Shape of the damage state over normalized lifetime `u ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DegradationLaw {
    Linear,
    /// `(e^{rate·u} - 1) / (e^{rate} - 1)`.
    Exponential { rate: f64 },
    /// `floor(u·steps) / steps`.
    Stepped { steps: u32 },
}

impl Default for DegradationLaw {
    fn default() -> Self {
        DegradationLaw::Linear
    }
}

impl DegradationLaw {
    pub fn damage(self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            DegradationLaw::Linear => u,
            DegradationLaw::Exponential { rate } => (rate * u).exp_m1() / rate.exp_m1(),
            DegradationLaw::Stepped { steps } => (u * steps as f64).floor() / steps as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub specimens: usize,
    /// Lifetimes are drawn uniformly from `min_timesteps..=max_timesteps`
    /// unless `timesteps` lists them explicitly.
    pub min_timesteps: usize,
    pub max_timesteps: usize,
    pub timesteps: Option<Vec<usize>>,
    pub cycles_per_timestep: u64,
    pub paths: usize,
    pub frequencies: Vec<u32>,
    pub samples: usize,
    pub sample_rate_hz: f64,
    pub burst_cycles: f64,
    pub law: DegradationLaw,
    /// Mean amplitude loss at failure and its per-specimen half-range.
    pub amplitude_loss: f64,
    pub amplitude_loss_jitter: f64,
    /// Mean arrival delay at failure (samples) and its per-specimen half-range.
    pub delay: f64,
    pub delay_jitter: f64,
    /// Standard deviation of the multiplicative per-signal gain.
    pub gain_jitter: f64,
    /// Standard deviation of additive white noise relative to the burst amplitude.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            specimens: 5,
            min_timesteps: 25,
            max_timesteps: 40,
            timesteps: None,
            cycles_per_timestep: 5000,
            paths: MAX_PATHS,
            frequencies: EXCITATION_FREQS_KHZ.to_vec(),
            samples: DEFAULT_SAMPLES,
            sample_rate_hz: 2e6,
            burst_cycles: 5.0,
            law: DegradationLaw::Linear,
            amplitude_loss: 0.5,
            amplitude_loss_jitter: 0.1,
            delay: 40.0,
            delay_jitter: 10.0,
            gain_jitter: 0.2,
            noise: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.specimens == 0 {
            return bad("at least one specimen is required");
        }
        match &self.timesteps {
            Some(t) if t.len() != self.specimens => return bad("`timesteps` must list one lifetime per specimen"),
            Some(t) if t.iter().any(|&n| n < 3) => return bad("lifetimes need at least 3 timesteps"),
            None if self.min_timesteps < 3 || self.min_timesteps > self.max_timesteps => {
                return bad("need 3 <= min_timesteps <= max_timesteps")
            }
            _ => {}
        }
        if self.cycles_per_timestep == 0 {
            return bad("cycles_per_timestep must be positive");
        }
        if self.paths == 0 || self.paths > MAX_PATHS {
            return bad("paths must be within 1..=56");
        }
        if self.frequencies.is_empty() {
            return bad("no frequencies");
        }
        for f in &self.frequencies {
            crate::data::validate_frequency(*f).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.sample_rate_hz > 0.0) || self.samples < 2 {
            return bad("sample rate and length must be positive");
        }
        let nyquist_khz = self.sample_rate_hz / 2000.0;
        if self.frequencies.iter().any(|&f| f as f64 >= nyquist_khz) {
            return bad("excitation frequencies must lie below the Nyquist frequency");
        }
        match self.law {
            DegradationLaw::Exponential { rate } if !(rate.abs() > 1e-9 && rate.is_finite()) => {
                return bad("exponential rate must be finite and non-zero")
            }
            DegradationLaw::Stepped { steps } if steps == 0 => return bad("stepped law needs steps >= 1"),
            _ => {}
        }
        let nonneg = [
            self.amplitude_loss_jitter,
            self.delay,
            self.delay_jitter,
            self.gain_jitter,
            self.noise,
            self.burst_cycles,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("jitter, delay, noise and burst length must be finite and non-negative");
        }
        if self.burst_cycles == 0.0 {
            return bad("burst needs a positive number of cycles");
        }
        if !(self.amplitude_loss - self.amplitude_loss_jitter >= 0.0 && self.amplitude_loss + self.amplitude_loss_jitter < 1.0) {
            return bad("amplitude loss must stay within [0, 1)");
        }
        if self.delay_jitter > self.delay {
            return bad("delay jitter cannot exceed the mean delay");
        }
        Ok(())
    }
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let s = parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ p));
    ChaCha8Rng::seed_from_u64(s)
}

const TAG_LIFETIME: u64 = 1;
const TAG_SPECIMEN: u64 = 2;
const TAG_SIGNAL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecimenParams {
    pub amplitude_loss: f64,
    pub delay: f64,
}

/// Lazily generated synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    spec: SynthSpec,
    layout: DatasetLayout,
    params: Vec<SpecimenParams>,
}

impl SynthDataset {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        let lifetimes: Vec<usize> = match &spec.timesteps {
            Some(t) => t.clone(),
            None => {
                let mut rng = stream(spec.seed, &[TAG_LIFETIME]);
                (0..spec.specimens)
                    .map(|_| rng.random_range(spec.min_timesteps..=spec.max_timesteps))
                    .collect()
            }
        };
        let specimens = lifetimes
            .iter()
            .enumerate()
            .map(|(i, &n)| SpecimenLayout {
                id: i as u32 + 1,
                cycles: (0..n as u64).map(|j| j * spec.cycles_per_timestep).collect(),
            })
            .collect();
        let params = (0..spec.specimens)
            .map(|i| {
                let mut rng = stream(spec.seed, &[TAG_SPECIMEN, i as u64 + 1]);
                let ja: f64 = rng.random_range(-1.0..=1.0);
                let jb: f64 = rng.random_range(-1.0..=1.0);
                SpecimenParams {
                    amplitude_loss: spec.amplitude_loss + ja * spec.amplitude_loss_jitter,
                    delay: spec.delay + jb * spec.delay_jitter,
                }
            })
            .collect();
        let layout = DatasetLayout {
            specimens,
            frequencies: spec.frequencies.clone(),
            paths: PathId::all()[..spec.paths].to_vec(),
            samples_per_signal: spec.samples,
            sample_rate_hz: spec.sample_rate_hz,
        };
        layout.validate()?;
        let latest = Self::base_arrival(PathId { actuator: 8, sensor: 1 })
            + spec.delay
            + spec.delay_jitter
            + spec.burst_cycles * spec.sample_rate_hz / (1000.0 * *spec.frequencies.iter().min().expect("validated") as f64);
        if latest > spec.samples as f64 {
            log::warn!("synthetic bursts extend past the {} recorded samples", spec.samples);
        }
        Ok(Self { spec, layout, params })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn specimen_params(&self, specimen_id: u32) -> Option<SpecimenParams> {
        self.params.get((specimen_id as usize).checked_sub(1)?).copied()
    }

    /// Arrival of the undamaged burst in samples; grows with path length.
    fn base_arrival(path: PathId) -> f64 {
        let gap = (path.actuator as f64 - path.sensor as f64).abs();
        100.0 + 25.0 * gap
    }

    /// Damage at timestep `j` (1-based) of a specimen with `n` timesteps.
    pub fn damage(&self, j: usize, n: usize) -> f64 {
        self.spec.law.damage((j - 1) as f64 / (n - 1) as f64)
    }

    /// Ground-truth HI `d(t)` per specimen on the cycle axis.
    pub fn ground_truth(&self) -> Result<Vec<HiCurve>> {
        self.layout
            .specimens
            .iter()
            .map(|s| {
                let n = s.timesteps();
                let times = s.cycles.iter().map(|&c| c as f64).collect();
                let values = (1..=n).map(|j| self.damage(j, n)).collect();
                HiCurve::new(s.id, HiSource::Fused, times, values)
            })
            .collect()
    }

    fn signal(&self, key: MeasurementKey, path_index: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let spec = &self.spec;
        let s = self.layout.specimen(key.specimen_id).expect("key from layout");
        let p = self.params[key.specimen_id as usize - 1];
        let d = self.damage(key.timestep as usize, s.timesteps());
        let path = self.layout.paths[path_index];
        let f = key.freq_khz as f64 * 1000.0 / spec.sample_rate_hz;
        let burst_len = spec.burst_cycles / f;
        let arrival = Self::base_arrival(path) + p.delay * d;
        let z: f64 = StandardNormal.sample(rng);
        let gain = (1.0 + spec.gain_jitter * z).max(0.05) * (1.0 - p.amplitude_loss * d);
        let noise = Normal::new(0.0, spec.noise).expect("validated non-negative");
        (0..spec.samples)
            .map(|n| {
                let tau = n as f64 - arrival;
                let burst = if tau >= 0.0 && tau < burst_len {
                    let w = (PI * tau / burst_len).sin().powi(2);
                    w * (2.0 * PI * f * tau).sin()
                } else {
                    0.0
                };
                gain * burst + noise.sample(rng)
            })
            .collect()
    }

    /// Writes the dataset, its ground truth and the generating spec.
    pub fn write(&self, root: &Path, name: &str, encoding: Encoding) -> Result<Manifest> {
        let manifest = write_dataset(self, root, name, encoding)?;
        write_atomic(&root.join(GROUND_TRUTH_FILE), curves_to_csv(&self.ground_truth()?).as_bytes())?;
        let spec = toml::to_string(&self.spec).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(&root.join(SPEC_FILE), spec.as_bytes())?;
        Ok(manifest)
    }
}

impl WaveformSource for SynthDataset {
    fn layout(&self) -> &DatasetLayout {
        &self.layout
    }

    fn load(&self, key: MeasurementKey) -> Result<Vec<Option<Vec<f64>>>> {
        let s = self
            .layout
            .specimen(key.specimen_id)
            .ok_or_else(|| Error::invalid(format!("no specimen {}", key.specimen_id)))?;
        if key.timestep == 0 || key.timestep as usize > s.timesteps() || !self.layout.frequencies.contains(&key.freq_khz) {
            return Err(Error::invalid(format!("no measurement {key:?}")));
        }
        let mut rng = stream(
            self.spec.seed,
            &[TAG_SIGNAL, key.specimen_id as u64, key.freq_khz as u64, key.timestep as u64],
        );
        Ok((0..self.layout.paths.len())
            .map(|i| Some(self.signal(key, i, &mut rng)))
            .collect())
    }
}

/// Reads a spec written next to a generated dataset, if present.
pub fn read_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::{monotonicity, prognosability, trendability, StdKind};
    use crate::dataset::DiskDataset;

    fn small() -> SynthSpec {
        SynthSpec {
            specimens: 3,
            min_timesteps: 6,
            max_timesteps: 9,
            paths: 4,
            frequencies: vec![50, 200],
            samples: 600,
            ..SynthSpec::default()
        }
    }

    fn key(s: u32, f: u32, t: u32) -> MeasurementKey {
        MeasurementKey {
            specimen_id: s,
            freq_khz: f,
            timestep: t,
        }
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn laws_are_monotone_and_pinned() {
        for law in [
            DegradationLaw::Linear,
            DegradationLaw::Exponential { rate: 3.0 },
            DegradationLaw::Exponential { rate: -2.0 },
            DegradationLaw::Stepped { steps: 4 },
        ] {
            assert_eq!(law.damage(0.0), 0.0);
            assert!((law.damage(1.0) - 1.0).abs() < 1e-15);
            let mut prev = 0.0;
            for i in 0..=100 {
                let d = law.damage(i as f64 / 100.0);
                assert!(d >= prev);
                prev = d;
            }
        }
    }

    #[test]
    fn noiseless_energy_decreases() {
        let ds = SynthDataset::new(SynthSpec {
            noise: 0.0,
            gain_jitter: 0.0,
            ..small()
        })
        .unwrap();
        let n = ds.layout().specimens[0].timesteps() as u32;
        let e: Vec<f64> = (1..=n).map(|t| energy(ds.load(key(1, 50, t)).unwrap()[0].as_ref().unwrap())).collect();
        assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    }

    #[test]
    fn no_degradation_effect_means_identical_statistics() {
        let ds = SynthDataset::new(SynthSpec {
            amplitude_loss: 0.0,
            amplitude_loss_jitter: 0.0,
            delay: 0.0,
            delay_jitter: 0.0,
            noise: 0.0,
            gain_jitter: 0.0,
            ..small()
        })
        .unwrap();
        let a = ds.load(key(2, 200, 1)).unwrap();
        let b = ds.load(key(2, 200, 5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_is_deterministic_and_seeded() {
        let a = SynthDataset::new(small()).unwrap();
        let b = SynthDataset::new(small()).unwrap();
        assert_eq!(a.layout(), b.layout());
        assert_eq!(a.load(key(3, 50, 4)).unwrap(), b.load(key(3, 50, 4)).unwrap());
        let c = SynthDataset::new(SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.load(key(1, 50, 1)).unwrap(), c.load(key(1, 50, 1)).unwrap());
    }

    #[test]
    fn default_lifetimes_and_shape() {
        let ds = SynthDataset::new(SynthSpec::default()).unwrap();
        let l = ds.layout();
        assert_eq!(l.specimens.len(), 5);
        assert_eq!(l.paths.len(), 56);
        assert_eq!(l.frequencies.len(), 6);
        for s in &l.specimens {
            assert!((25..=40).contains(&s.timesteps()));
            assert_eq!(s.cycles[1], 5000);
        }
        let rows = ds.load(key(1, 250, 1)).unwrap();
        assert_eq!(rows.len(), 56);
        assert_eq!(rows[0].as_ref().unwrap().len(), 2000);
    }

    #[test]
    fn per_signal_gain_gives_twenty_percent_cv() {
        let ds = SynthDataset::new(SynthSpec::default()).unwrap();
        let mut rms = Vec::new();
        for t in 1..=5 {
            for row in ds.load(key(1, 100, t)).unwrap().into_iter().flatten() {
                rms.push((energy(&row) / row.len() as f64).sqrt());
            }
        }
        // restrict to the first timesteps, where damage changes rms by < 10%
        let m = rms.iter().sum::<f64>() / rms.len() as f64;
        let sd = (rms.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rms.len() - 1) as f64).sqrt();
        let cv = sd / m;
        assert!((0.15..0.25).contains(&cv), "cv {cv}");
    }

    #[test]
    fn ground_truth_is_a_perfect_hi() {
        let ds = SynthDataset::new(SynthSpec::default()).unwrap();
        let gt = ds.ground_truth().unwrap();
        assert!((monotonicity(&gt).unwrap() - 1.0).abs() < 1e-12);
        assert!((prognosability(&gt, StdKind::Population).unwrap().value - 1.0).abs() < 1e-12);
        assert!((trendability(&gt).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn writes_a_readable_dataset() {
        let ds = SynthDataset::new(SynthSpec {
            specimens: 2,
            timesteps: Some(vec![3, 4]),
            frequencies: vec![100],
            paths: 2,
            samples: 300,
            ..SynthSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path(), "tiny", Encoding::Binary).unwrap();
        let disk = DiskDataset::open(dir.path()).unwrap();
        assert_eq!(disk.layout(), ds.layout());
        assert_eq!(disk.load(key(2, 100, 4)).unwrap(), ds.load(key(2, 100, 4)).unwrap());
        assert_eq!(read_spec(&dir.path().join(SPEC_FILE)).unwrap(), *ds.spec());
        let gt = std::fs::read_to_string(dir.path().join(GROUND_TRUTH_FILE)).unwrap();
        assert_eq!(crate::data::curves_from_csv(&gt).unwrap(), ds.ground_truth().unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SynthDataset::new(SynthSpec { specimens: 0, ..small() }).is_err());
        assert!(SynthDataset::new(SynthSpec { paths: 57, ..small() }).is_err());
        assert!(SynthDataset::new(SynthSpec { frequencies: vec![60], ..small() }).is_err());
        assert!(SynthDataset::new(SynthSpec { amplitude_loss: 1.0, ..small() }).is_err());
        assert!(SynthDataset::new(SynthSpec { timesteps: Some(vec![5]), ..small() }).is_err());
        let ds = SynthDataset::new(small()).unwrap();
        assert!(ds.load(key(9, 50, 1)).is_err());
        assert!(ds.load(key(1, 50, 0)).is_err());
    }
}
