use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Complex DFT of a real signal, unnormalized: `S[k] = Σ x[n] e^{-2πikn/L}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Bin spacing in Hz.
    pub fn resolution(&self, sample_rate_hz: f64) -> f64 {
        sample_rate_hz / self.bins.len() as f64
    }

    /// Magnitudes of bins `0..=L/2`.
    pub fn one_sided_magnitudes(&self) -> Vec<f64> {
        self.bins[..self.bins.len() / 2 + 1]
            .iter()
            .map(|c| c.norm())
            .collect()
    }

    /// Frequencies of the one-sided bins, in the unit of `sample_rate`.
    pub fn one_sided_frequencies(&self, sample_rate: f64) -> Vec<f64> {
        let df = sample_rate / self.bins.len() as f64;
        (0..self.bins.len() / 2 + 1).map(|k| k as f64 * df).collect()
    }
}

fn transform(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

pub fn fft(signal: &[f64]) -> Result<Spectrum> {
    if signal.is_empty() {
        return Err(Error::invalid("fft of an empty signal"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fft input".into()));
    }
    let mut bins: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut bins, false);
    Ok(Spectrum { bins })
}

/// Inverse DFT normalized by `1/L`, so `ifft(fft(x)) = x`.
pub fn ifft(bins: &[Complex64]) -> Result<Vec<Complex64>> {
    if bins.is_empty() {
        return Err(Error::invalid("ifft of an empty spectrum"));
    }
    let mut buf = bins.to_vec();
    transform(&mut buf, true);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    Ok(buf)
}

/// Textbook `O(L²)` DFT, kept as a reference for checking [`fft`].
pub fn dft_direct(signal: &[f64]) -> Vec<Complex64> {
    let n = signal.len();
    (0..n)
        .map(|k| {
            signal
                .iter()
                .enumerate()
                .map(|(t, &x)| {
                    // reduce k*t mod n first to keep the angle accurate
                    let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                    Complex64::new(x * ang.cos(), x * ang.sin())
                })
                .sum()
        })
        .collect()
}
