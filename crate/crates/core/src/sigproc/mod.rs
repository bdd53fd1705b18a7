//! Frequency, time-frequency, analytic and intrinsic-mode representations
//! of real waveforms.

mod emd;
mod fft;
mod hilbert;
mod stft;

pub use emd::{emd, EmdConfig, ImfDecomposition};
pub use fft::{dft_direct, fft, ifft, Spectrum};
pub use hilbert::{hilbert_analytic, AnalyticSignal};
pub use stft::{stft, Spectrogram, DEFAULT_OVERLAP, DEFAULT_WINDOW};

pub use rustfft::num_complex::Complex64;
