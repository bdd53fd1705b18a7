use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sifting parameters for [`emd`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmdConfig {
    /// Stop sifting a candidate IMF once `Σ(h_{k-1} - h_k)² / Σ h_{k-1}²` drops below this.
    pub sd_stop: f64,
    pub max_sift_iters: usize,
    /// Stop after this many IMFs (`None` decomposes fully).
    pub max_imfs: Option<usize>,
    /// Stop once the residual energy falls below this fraction of the input energy.
    pub residual_energy_tol: f64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self {
            sd_stop: 0.1,
            max_sift_iters: 10,
            max_imfs: None,
            residual_energy_tol: 1e-6,
        }
    }
}

/// Hard ceiling on the number of IMFs, far above `log2(L)` for any real input.
const IMF_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ImfDecomposition {
    pub imfs: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
}

impl ImfDecomposition {
    /// `Σ imfs + residual`, which reproduces the input up to rounding.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residual.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }
}

/// Empirical mode decomposition by cubic-spline envelope sifting.
pub fn emd(signal: &[f64], config: &EmdConfig) -> Result<ImfDecomposition> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("emd input".into()));
    }
    if !(config.sd_stop > 0.0) || config.max_sift_iters == 0 {
        return Err(Error::invalid("emd needs sd_stop > 0 and at least one sift"));
    }
    let energy: f64 = signal.iter().map(|v| v * v).sum();
    let mut residual = signal.to_vec();
    let mut imfs = Vec::new();
    let cap = config.max_imfs.unwrap_or(IMF_CAP).min(IMF_CAP);
    while imfs.len() < cap {
        if !imfs.is_empty() {
            let rest: f64 = residual.iter().map(|v| v * v).sum();
            if rest <= config.residual_energy_tol * energy {
                break;
            }
        }
        let Some(imf) = sift(&residual, config) else {
            break;
        };
        for (r, v) in residual.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(imf);
    }
    Ok(ImfDecomposition { imfs, residual })
}

/// Extracts one IMF candidate, or `None` when `x` has fewer than 4 extrema.
fn sift(x: &[f64], config: &EmdConfig) -> Option<Vec<f64>> {
    let mut h = x.to_vec();
    let mut upper = vec![0.0; x.len()];
    let mut lower = vec![0.0; x.len()];
    for iter in 0..config.max_sift_iters {
        let (maxima, minima) = extrema(&h);
        if maxima.is_empty() || minima.is_empty() || maxima.len() + minima.len() < 4 {
            if iter == 0 {
                return None;
            }
            break;
        }
        envelope(&h, &maxima, &mut upper);
        envelope(&h, &minima, &mut lower);
        let mut num = 0.0;
        let mut den = 0.0;
        for ((v, u), l) in h.iter_mut().zip(&upper).zip(&lower) {
            let mean = 0.5 * (u + l);
            num += mean * mean;
            den += *v * *v;
            *v -= mean;
        }
        if den == 0.0 || num / den < config.sd_stop {
            break;
        }
    }
    Some(h)
}

/// Interior local maxima and minima. Flat plateaus count once, at their centre.
pub(crate) fn extrema(x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let n = x.len();
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    if n < 3 {
        return (maxima, minima);
    }
    let mut i = 1;
    while i < n - 1 {
        if x[i] == x[i - 1] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 >= n {
            break;
        }
        let rising = x[i] > x[i - 1];
        let falling = x[j + 1] < x[j];
        if rising && falling {
            maxima.push((i + j) / 2);
        } else if !rising && !falling {
            minima.push((i + j) / 2);
        }
        i = j + 1;
    }
    (maxima, minima)
}

/// Natural cubic spline through the extrema at `idx`, with the two extrema
/// nearest each end mirrored about the signal boundaries.
fn envelope(x: &[f64], idx: &[usize], out: &mut [f64]) {
    let n = x.len();
    let last = (n - 1) as f64;
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(idx.len() + 4);
    for &i in idx.iter().take(2).rev() {
        knots.push((-(i as f64), x[i]));
    }
    knots.extend(idx.iter().map(|&i| (i as f64, x[i])));
    for &i in idx.iter().rev().take(2) {
        knots.push((2.0 * last - i as f64, x[i]));
    }
    natural_spline_eval(&knots, out);
}

/// Evaluates the natural cubic spline through `knots` at `0, 1, .., out.len()-1`.
fn natural_spline_eval(knots: &[(f64, f64)], out: &mut [f64]) {
    let k = knots.len();
    if k == 1 {
        out.iter_mut().for_each(|v| *v = knots[0].1);
        return;
    }
    let xs: Vec<f64> = knots.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = knots.iter().map(|p| p.1).collect();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let mut m = vec![0.0; k];
    if k > 2 {
        // Thomas algorithm on the interior second derivatives.
        let dim = k - 2;
        let mut diag = vec![0.0; dim];
        let mut rhs = vec![0.0; dim];
        let mut upper = vec![0.0; dim];
        for r in 0..dim {
            let i = r + 1;
            diag[r] = 2.0 * (h[i - 1] + h[i]);
            upper[r] = h[i];
            rhs[r] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
        }
        for r in 1..dim {
            let w = h[r] / diag[r - 1];
            diag[r] -= w * upper[r - 1];
            rhs[r] -= w * rhs[r - 1];
        }
        m[dim] = rhs[dim - 1] / diag[dim - 1];
        for r in (0..dim - 1).rev() {
            m[r + 1] = (rhs[r] - upper[r] * m[r + 2]) / diag[r];
        }
    }
    let mut seg = 0;
    for (t, o) in out.iter_mut().enumerate() {
        let t = t as f64;
        while seg + 2 < k && t > xs[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (xs[seg], xs[seg + 1]);
        let hh = h[seg];
        let a = (x1 - t) / hh;
        let b = (t - x0) / hh;
        *o = a * ys[seg]
            + b * ys[seg + 1]
            + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * hh * hh / 6.0;
    }
}
