use super::fft::{fft, ifft};
use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;

/// Complex analytic signal whose real part is the original waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSignal {
    pub values: Vec<Complex64>,
}

impl AnalyticSignal {
    /// Instantaneous amplitude.
    pub fn envelope(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    /// Instantaneous phase in radians, wrapped to `(-π, π]`.
    pub fn phase(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.arg()).collect()
    }
}

/// Spectral Hilbert transform: zero the negative frequencies, double the
/// positive ones, keep DC (and Nyquist for even lengths).
pub fn hilbert_analytic(signal: &[f64]) -> Result<AnalyticSignal> {
    let n = signal.len();
    if n < 2 {
        return Err(Error::invalid("analytic signal needs at least 2 samples"));
    }
    let mut bins = fft(signal)?.bins;
    let half = n / 2;
    let positive_end = if n % 2 == 0 { half } else { half + 1 };
    for b in bins.iter_mut().take(positive_end).skip(1) {
        *b *= 2.0;
    }
    for b in bins.iter_mut().skip(half + 1) {
        *b = Complex64::new(0.0, 0.0);
    }
    let mut values = ifft(&bins)?;
    // exact real part by construction
    for (v, &x) in values.iter_mut().zip(signal) {
        v.re = x;
    }
    Ok(AnalyticSignal { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigproc::fft;
    use std::f64::consts::PI;

    #[test]
    fn cosine_becomes_complex_exponential() {
        for n in [256usize, 255] {
            let k = 7.0;
            let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * k * t as f64 / n as f64).cos()).collect();
            let a = hilbert_analytic(&x).unwrap();
            for (t, v) in a.values.iter().enumerate() {
                let ang = 2.0 * PI * k * t as f64 / n as f64;
                assert!((v.re - ang.cos()).abs() < 1e-9);
                assert!((v.im - ang.sin()).abs() < 1e-9);
            }
            assert!(a.envelope().iter().all(|e| (e - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn constant_has_no_quadrature() {
        let a = hilbert_analytic(&[3.0; 16]).unwrap();
        assert!(a.values.iter().all(|v| v.im.abs() < 1e-12 && (v.re - 3.0).abs() < 1e-12));
    }

    #[test]
    fn negative_frequencies_vanish() {
        let x: Vec<f64> = (0..100).map(|i| ((i * i) as f64 * 0.01).sin() + 0.3).collect();
        let a = hilbert_analytic(&x).unwrap();
        let re: Vec<f64> = a.values.iter().map(|c| c.re).collect();
        let im: Vec<f64> = a.values.iter().map(|c| c.im).collect();
        let (sr, si) = (fft(&re).unwrap(), fft(&im).unwrap());
        // spectrum of re + i·im is S_re + i·S_im
        for k in 51..100 {
            let z = sr.bins[k] + Complex64::new(0.0, 1.0) * si.bins[k];
            assert!(z.norm() < 1e-9, "bin {k}: {z}");
        }
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(hilbert_analytic(&[1.0]).is_err());
    }

    #[test]
    fn chirp_envelope_recovers_amplitude() {
        let n = 4000;
        let amp = |t: f64| 1.0 + 0.5 * (2.0 * PI * 1.5 * t).sin();
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                amp(t) * (2.0 * PI * (100.0 * t + 150.0 * t * t)).cos()
            })
            .collect();
        let env = hilbert_analytic(&x).unwrap().envelope();
        let skip = n / 20;
        for i in skip..n - skip {
            let want = amp(i as f64 / n as f64);
            assert!((env[i] - want).abs() / want < 0.02, "sample {i}");
        }
    }

    #[test]
    fn envelope_scales_with_abs_gain() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * (1.0 + i as f64 * 0.01)).collect();
        let e = hilbert_analytic(&x).unwrap().envelope();
        let scaled: Vec<f64> = x.iter().map(|v| -2.5 * v).collect();
        let es = hilbert_analytic(&scaled).unwrap().envelope();
        for (a, b) in e.iter().zip(&es) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }
}
