use crate::error::{Error, Result};
use crate::sigproc::Spectrogram;

/// Feature values plus a flag raised when any statistic hit a zero
/// denominator and was replaced by 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureValues {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den != 0.0 && den.is_finite() {
        num / den
    } else {
        *degenerate = true;
        0.0
    }
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// The 19 time-domain statistics, in id order.
pub fn time_features(x: &[f64]) -> Result<FeatureValues> {
    if x.len() < 2 {
        return Err(Error::invalid("time features need at least 2 samples"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("time feature input".into()));
    }
    let n = x.len() as f64;
    let mut deg = false;
    let mean = x.iter().sum::<f64>() / n;
    let mut cm = [0.0f64; 7];
    for &v in x {
        let d = v - mean;
        let mut p = d * d;
        for m in cm.iter_mut().skip(2) {
            *m += p;
            p *= d;
        }
    }
    // cm[k] = Σ (x - mean)^k for k = 2..=6
    let sd = (cm[2] / (n - 1.0)).sqrt();
    let root = (x.iter().map(|v| v.abs().sqrt()).sum::<f64>() / n).powi(2);
    let sum_sq: f64 = x.iter().map(|v| v * v).sum();
    let rms = (sum_sq / n).sqrt();
    let rss = sum_sq.sqrt();
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let sd3 = sd.powi(3);
    let sd4 = sd.powi(4);
    let cm4 = cm[4] / n;
    let values = vec![
        mean,
        sd,
        root,
        rms,
        rss,
        peak,
        ratio(cm[3], (n - 1.0) * sd3, &mut deg),
        ratio(cm[4], (n - 1.0) * sd4, &mut deg),
        ratio(peak, rms, &mut deg),
        ratio(peak, root, &mut deg),
        ratio(rms, mean_abs, &mut deg),
        ratio(peak, mean_abs, &mut deg),
        max - min,
        cm[3] / n,
        cm4,
        cm[5] / n,
        cm[6] / n,
        ratio(cm4, sd4, &mut deg),
        median(x),
    ];
    Ok(FeatureValues {
        values,
        degenerate: deg,
    })
}

/// The 14 spectral statistics `S1..S14` of a one-sided magnitude spectrum.
pub fn freq_features(magnitudes: &[f64], freqs: &[f64]) -> Result<FeatureValues> {
    if magnitudes.len() != freqs.len() {
        return Err(Error::ShapeMismatch {
            expected: magnitudes.len(),
            actual: freqs.len(),
        });
    }
    if magnitudes.len() < 2 {
        return Err(Error::invalid("frequency features need at least 2 bins"));
    }
    if magnitudes.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid("spectrum magnitudes must be finite and non-negative"));
    }
    let nf = magnitudes.len() as f64;
    let mut deg = false;
    let s1 = magnitudes.iter().sum::<f64>() / nf;
    let (mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0);
    for &s in magnitudes {
        let d = s - s1;
        c2 += d * d;
        c3 += d * d * d;
        c4 += d * d * d * d;
    }
    let s2 = c2 / (nf - 1.0);
    let s3 = ratio(c3, nf * s2.sqrt().powi(3), &mut deg);
    let s4 = ratio(c4, nf * s2 * s2, &mut deg);

    let total: f64 = magnitudes.iter().sum();
    let sum_fs: f64 = magnitudes.iter().zip(freqs).map(|(s, f)| f * s).sum();
    let sum_f2s: f64 = magnitudes.iter().zip(freqs).map(|(s, f)| f * f * s).sum();
    let sum_f4s: f64 = magnitudes.iter().zip(freqs).map(|(s, f)| f.powi(4) * s).sum();
    let sum_f4: f64 = freqs.iter().map(|f| f.powi(4)).sum();

    let s5 = ratio(sum_fs, total, &mut deg);
    let (mut m2, mut m3, mut m4, mut mh) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &f) in magnitudes.iter().zip(freqs) {
        let d = f - s5;
        m2 += d * d * s;
        m3 += d * d * d * s;
        m4 += d * d * d * d * s;
        mh += d.abs().sqrt() * s;
    }
    let s6 = (m2 / nf).sqrt();
    let s7 = ratio(sum_f2s, total, &mut deg).sqrt();
    let s8 = ratio(sum_f4s, sum_f2s, &mut deg).sqrt();
    let s9 = ratio(sum_f2s, (total * sum_f4).sqrt(), &mut deg);
    let s10 = ratio(s6, s5, &mut deg);
    let s11 = ratio(m3, nf * s6.powi(3), &mut deg);
    let s12 = ratio(m4, nf * s6.powi(4), &mut deg);
    let s13 = ratio(mh, nf * s6.sqrt(), &mut deg);
    let s14 = ratio(m2, total, &mut deg).sqrt();
    Ok(FeatureValues {
        values: vec![s1, s2, s3, s4, s5, s6, s7, s8, s9, s10, s11, s12, s13, s14],
        degenerate: deg,
    })
}

/// Mean, sample std, skewness and kurtosis of one spectrogram window.
fn window_stats(col: &[f64], deg: &mut bool) -> [f64; 4] {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let (mut c2, mut c3, mut c4) = (0.0, 0.0, 0.0);
    for &v in col {
        let d = v - mean;
        c2 += d * d;
        c3 += d * d * d;
        c4 += d * d * d * d;
    }
    let sd = (c2 / (n - 1.0)).sqrt();
    [
        mean,
        sd,
        ratio(c3, (n - 1.0) * sd.powi(3), deg),
        ratio(c4, (n - 1.0) * sd.powi(4), deg),
    ]
}

/// Four statistics per window across the frequency axis, window-major.
pub fn tf_features(spectrogram: &Spectrogram) -> Result<FeatureValues> {
    if spectrogram.bins() < 2 {
        return Err(Error::invalid("time-frequency features need at least 2 bins per window"));
    }
    let mut deg = false;
    let mut values = Vec::with_capacity(4 * spectrogram.windows());
    for row in &spectrogram.rows {
        values.extend(window_stats(row, &mut deg));
    }
    Ok(FeatureValues {
        values,
        degenerate: deg,
    })
}
