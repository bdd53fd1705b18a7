use super::fft::fft;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 250;
pub const DEFAULT_OVERLAP: usize = 125;

/// Magnitude short-time spectrum; `rows[w]` holds the one-sided magnitudes
/// of window `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub rows: Vec<Vec<f64>>,
    pub win_len: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn windows(&self) -> usize {
        self.rows.len()
    }

    pub fn bins(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Window count for an unpadded signal of length `len`.
    pub fn window_count(len: usize, win_len: usize, overlap: usize) -> usize {
        if win_len == 0 || len < win_len || overlap >= win_len {
            return 0;
        }
        (len - win_len) / (win_len - overlap) + 1
    }
}

/// Rectangular-window STFT without padding.
pub fn stft(signal: &[f64], win_len: usize, overlap: usize) -> Result<Spectrogram> {
    if win_len == 0 || win_len > signal.len() {
        return Err(Error::invalid(format!(
            "stft window {win_len} does not fit a signal of length {}",
            signal.len()
        )));
    }
    if overlap >= win_len {
        return Err(Error::invalid(format!(
            "stft overlap {overlap} must be below the window length {win_len}"
        )));
    }
    let hop = win_len - overlap;
    let count = Spectrogram::window_count(signal.len(), win_len, overlap);
    let rows = (0..count)
        .map(|w| {
            let start = w * hop;
            fft(&signal[start..start + win_len]).map(|s| s.one_sided_magnitudes())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrogram { rows, win_len, hop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigproc::dft_direct;
    use std::f64::consts::PI;

    #[test]
    fn default_geometry_window_counts() {
        let x = vec![0.0; 2000];
        assert_eq!(stft(&x, 250, 125).unwrap().windows(), 15);
        assert_eq!(stft(&x[..250], 250, 125).unwrap().windows(), 1);
        assert_eq!(stft(&x, 250, 125).unwrap().bins(), 126);
    }

    #[test]
    fn argument_errors() {
        assert!(stft(&[0.0; 10], 11, 0).is_err());
        assert!(stft(&[0.0; 10], 5, 5).is_err());
    }

    #[test]
    fn pure_tone_peaks_at_its_bin_in_every_window() {
        let x: Vec<f64> = (0..2000)
            .map(|i| (2.0 * PI * 10.0 * i as f64 / 250.0).sin())
            .collect();
        let sg = stft(&x, 250, 125).unwrap();
        for (w, row) in sg.rows.iter().enumerate() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, 10);
            let slice = &x[w * 125..w * 125 + 250];
            let oracle = dft_direct(slice);
            for (k, m) in row.iter().enumerate() {
                assert!((m - oracle[k].norm()).abs() < 1e-9);
            }
        }
    }
}
