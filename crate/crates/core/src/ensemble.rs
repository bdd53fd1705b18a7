//! Seed averaging and fitness-weighted fusion across excitation frequencies.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::criteria::{fitness_all, CriteriaConfig};
use crate::data::{HiCurve, HiSource};
use crate::error::{Error, Result};

/// Weights below this are raised to it before normalization.
pub const MIN_WEIGHT: f64 = 1e-6;

/// Pointwise mean of one specimen's curves from several seeds.
pub fn seed_average(curves: &[HiCurve]) -> Result<HiCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::invalid("seed average of no curves"))?;
    for c in &curves[1..] {
        if c.specimen_id != first.specimen_id {
            return Err(Error::invalid(format!(
                "seed average mixes specimens {} and {}",
                first.specimen_id, c.specimen_id
            )));
        }
        if c.times() != first.times() {
            return Err(Error::invalid(format!(
                "seed curves of specimen {} are on different time grids",
                first.specimen_id
            )));
        }
    }
    let n = curves.len() as f64;
    let values = (0..first.len())
        .map(|i| curves.iter().map(|c| c.values()[i]).sum::<f64>() / n)
        .collect();
    first.with_values(values)
}

/// Seed-averaged curves of every specimen at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBundle {
    pub freq_khz: u32,
    pub curves: Vec<HiCurve>,
    pub weight: f64,
}

impl FrequencyBundle {
    /// Weights the bundle by `F_all` of its curves. When `train` is given,
    /// only those specimens contribute to the weight.
    pub fn new(freq_khz: u32, curves: Vec<HiCurve>, cfg: &CriteriaConfig, train: Option<&[u32]>) -> Result<Self> {
        let scored: Vec<HiCurve> = match train {
            Some(ids) => curves
                .iter()
                .filter(|c| ids.contains(&c.specimen_id))
                .cloned()
                .collect(),
            None => curves.clone(),
        };
        let weight = fitness_all(&scored, cfg)?;
        Ok(Self {
            freq_khz,
            curves,
            weight,
        })
    }

    fn curve(&self, specimen: u32) -> Option<&HiCurve> {
        self.curves.iter().find(|c| c.specimen_id == specimen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeight {
    pub freq_khz: u32,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub curves: Vec<HiCurve>,
    pub weights: Vec<FusionWeight>,
}

/// Normalized weights `ω_f / Σω` after the lower clamp.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("no weights to normalize"));
    }
    if raw.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("fusion weight".into()));
    }
    let clamped: Vec<f64> = raw.iter().map(|w| w.max(MIN_WEIGHT)).collect();
    let total: f64 = clamped.iter().sum();
    Ok(clamped.iter().map(|w| w / total).collect())
}

/// Fuses the bundles into one curve per specimen. The first bundle's time
/// grid is the reference; curves on other grids are resampled by lifetime
/// fraction.
pub fn wae_fuse(bundles: &[FrequencyBundle]) -> Result<Fusion> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::invalid("fusion needs at least one frequency"))?;
    let raw: Vec<f64> = bundles.iter().map(|b| b.weight).collect();
    let norm = normalize_weights(&raw)?;
    let mut ids: Vec<u32> = first.curves.iter().map(|c| c.specimen_id).collect();
    ids.sort_unstable();
    for b in &bundles[1..] {
        let mut other: Vec<u32> = b.curves.iter().map(|c| c.specimen_id).collect();
        other.sort_unstable();
        if other != ids {
            return Err(Error::invalid(format!(
                "frequency {} covers different specimens than frequency {}",
                b.freq_khz, first.freq_khz
            )));
        }
    }
    let mut curves = Vec::with_capacity(ids.len());
    for &id in &ids {
        let reference = first.curve(id).expect("specimen listed above");
        let fractions = reference.lifetime_fractions();
        let mut values = vec![0.0; reference.len()];
        for (b, w) in bundles.iter().zip(&norm) {
            let c = b.curve(id).expect("specimen sets checked");
            if c.times() == reference.times() {
                for (v, y) in values.iter_mut().zip(c.values()) {
                    *v += w * y;
                }
            } else {
                for (v, &q) in values.iter_mut().zip(&fractions) {
                    *v += w * c.value_at_fraction(q);
                }
            }
        }
        curves.push(reference.with_values(values)?.with_source(HiSource::Fused));
    }
    let weights = bundles
        .iter()
        .zip(&norm)
        .map(|(b, &n)| FusionWeight {
            freq_khz: b.freq_khz,
            raw: b.weight,
            normalized: n,
        })
        .collect();
    Ok(Fusion { curves, weights })
}

impl Fusion {
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>8} {:>12} {:>12}", "freq_khz", "omega", "omega_norm");
        for w in &self.weights {
            let _ = writeln!(out, "{:>8} {:>12.6} {:>12.6}", w.freq_khz, w.raw, w.normalized);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(id: u32, values: Vec<f64>) -> HiCurve {
        let times = (0..values.len()).map(|i| i as f64 * 10.0).collect();
        HiCurve::new(id, HiSource::Frequency(50), times, values).unwrap()
    }

    fn bundle(freq: u32, weight: f64, curves: Vec<HiCurve>) -> FrequencyBundle {
        FrequencyBundle {
            freq_khz: freq,
            curves,
            weight,
        }
    }

    #[test]
    fn seed_average_fixtures() {
        let y = curve(1, vec![0.1, 0.5, 0.9]);
        assert_eq!(seed_average(&[y.clone(), y.clone()]).unwrap(), y);
        let z = seed_average(&[curve(1, vec![0.0; 3]), curve(1, vec![1.0; 3])]).unwrap();
        assert_eq!(z.values(), &[0.5, 0.5, 0.5]);
        assert!(seed_average(&[curve(1, vec![0.0; 3]), curve(2, vec![0.0; 3])]).is_err());
        assert!(seed_average(&[curve(1, vec![0.0; 3]), curve(1, vec![0.0; 4])]).is_err());
        assert!(seed_average(&[]).is_err());
    }

    #[test]
    fn fusion_fixtures() {
        let a = curve(1, vec![0.0, 0.3, 0.9]);
        let b = curve(1, vec![0.6, 0.6, 0.0]);
        let f = wae_fuse(&[bundle(50, 2.4, vec![a.clone()]), bundle(100, 1.2, vec![b.clone()])]).unwrap();
        for i in 0..3 {
            let want = (2.0 * a.values()[i] + b.values()[i]) / 3.0;
            assert!((f.curves[0].values()[i] - want).abs() <= 1e-12);
        }
        assert_eq!(f.curves[0].source, HiSource::Fused);

        let single = wae_fuse(&[bundle(50, 0.7, vec![a.clone()])]).unwrap();
        assert_eq!(single.curves[0].values(), a.values());

        let eq = wae_fuse(&[bundle(50, 1.0, vec![a.clone()]), bundle(100, 1.0, vec![b.clone()])]).unwrap();
        assert!((eq.curves[0].values()[0] - 0.3).abs() < 1e-15);
        assert!(wae_fuse(&[]).is_err());
    }

    #[test]
    fn negative_weights_are_clamped() {
        let w = normalize_weights(&[-1.0, 2.0]).unwrap();
        assert!(w[0] > 0.0 && w[0] < 1e-6);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(normalize_weights(&[f64::NAN]).is_err());
    }

    #[test]
    fn resamples_mismatched_grids() {
        let a = curve(1, vec![0.0, 0.5, 1.0]);
        let b = HiCurve::new(1, HiSource::Frequency(100), vec![0.0, 5.0, 10.0, 15.0, 20.0], vec![0.0, 0.25, 0.5, 0.75, 1.0])
            .unwrap();
        let f = wae_fuse(&[bundle(50, 1.0, vec![a.clone()]), bundle(100, 1.0, vec![b])]).unwrap();
        for (x, y) in f.curves[0].values().iter().zip(a.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(f.curves[0].times(), a.times());
    }

    #[test]
    fn weights_from_fitness() {
        let cfg = CriteriaConfig::default();
        let curves = vec![curve(1, vec![0.0, 0.5, 1.0]), curve(2, vec![0.0, 0.4, 1.0])];
        let b = FrequencyBundle::new(50, curves.clone(), &cfg, None).unwrap();
        assert!((b.weight - fitness_all(&curves, &cfg).unwrap()).abs() < 1e-15);
        let leak_free = FrequencyBundle::new(50, {
            let mut c = curves.clone();
            c.push(curve(3, vec![1.0, 0.0, 0.5]));
            c
        }, &cfg, Some(&[1, 2]))
        .unwrap();
        assert_eq!(leak_free.weight, b.weight);
        assert_eq!(leak_free.curves.len(), 3);
    }

    fn bundles_strategy() -> impl Strategy<Value = Vec<(f64, Vec<f64>)>> {
        (2usize..8).prop_flat_map(|len| {
            prop::collection::vec((-1.0f64..3.0, prop::collection::vec(-5.0f64..5.0, len)), 1..6)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fusion_is_convex_and_order_free(spec in bundles_strategy()) {
            let bundles: Vec<FrequencyBundle> = spec
                .iter()
                .enumerate()
                .map(|(i, (w, v))| bundle(50 + i as u32, *w, vec![curve(1, v.clone())]))
                .collect();
            let f = wae_fuse(&bundles).unwrap();
            let total: f64 = f.weights.iter().map(|w| w.normalized).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for (i, v) in f.curves[0].values().iter().enumerate() {
                let lo = spec.iter().map(|s| s.1[i]).fold(f64::INFINITY, f64::min);
                let hi = spec.iter().map(|s| s.1[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
            let mut rev = bundles.clone();
            rev.reverse();
            let g = wae_fuse(&rev).unwrap();
            for (x, y) in f.curves[0].values().iter().zip(g.curves[0].values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn seed_average_matches_pointwise_mean(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 5)
        ) {
            let curves: Vec<HiCurve> = rows.iter().map(|r| curve(2, r.clone())).collect();
            let avg = seed_average(&curves).unwrap();
            for i in 0..6 {
                let mut s = 0.0;
                for r in &rows { s += r[i]; }
                prop_assert!((avg.values()[i] - s / 5.0).abs() <= 1e-12);
            }
        }
    }
}
