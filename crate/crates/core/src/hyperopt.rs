//! Gaussian-process Bayesian optimisation with expected improvement.
//!
//! The search runs in the unit cube. A Latin-hypercube design seeds the
//! surrogate, then each iteration fits squared-exponential ARD length
//! scales by marginal likelihood and evaluates the point maximising
//! expected improvement. Objectives are maximised.

use std::fmt::{self, Display, Write as _};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Diagonal jitter added on top of the observation noise.
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub integer: bool,
}

impl Param {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            lo,
            hi,
            integer: false,
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Self {
            name: name.to_string(),
            lo: lo as f64,
            hi: hi as f64,
            integer: true,
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let v = self.lo + u.clamp(0.0, 1.0) * (self.hi - self.lo);
        if self.integer {
            v.round().clamp(self.lo, self.hi)
        } else {
            v
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        if self.hi == self.lo {
            0.5
        } else {
            ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<Param>,
}

impl SearchSpace {
    pub fn new(params: Vec<Param>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::invalid("search space has no parameters"));
        }
        for p in &params {
            if !(p.lo.is_finite() && p.hi.is_finite() && p.lo <= p.hi) {
                return Err(Error::invalid(format!("parameter `{}` has invalid bounds", p.name)));
            }
            if p.name.is_empty() || p.name.contains(',') {
                return Err(Error::invalid(format!("parameter name `{}` is not a plain identifier", p.name)));
            }
        }
        Ok(Self { params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    /// Maps a unit-cube point to parameter values, rounding integers.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.params.iter().zip(u).map(|(p, &x)| p.from_unit(x)).collect()
    }

    pub fn to_unit(&self, v: &[f64]) -> Vec<f64> {
        self.params.iter().zip(v).map(|(p, &x)| p.to_unit(x)).collect()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && self
                .params
                .iter()
                .zip(v)
                .all(|(p, &x)| x >= p.lo && x <= p.hi && (!p.integer || x.fract() == 0.0))
    }

    pub fn value<'a>(&self, point: &'a [f64], name: &str) -> Option<&'a f64> {
        self.params.iter().position(|p| p.name == name).and_then(|i| point.get(i))
    }
}

/// `n` Latin-hypercube samples in `[0,1]^d`.
pub fn latin_hypercube(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(rng);
        for (i, &s) in strata.iter().enumerate() {
            pts[i][j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over `incumbent` for a maximisation problem.
pub fn ei(mean: f64, std: f64, incumbent: f64) -> f64 {
    let gain = mean - incumbent;
    if !(std > 0.0) {
        return gain.max(0.0);
    }
    let z = gain / std;
    (gain * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

/// Zero-mean GP on standardized targets with a squared-exponential ARD kernel.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
    pub incumbent: f64,
}

const LOG_LS_BOUNDS: (f64, f64) = (-4.6, 2.3);
const LOG_SV_BOUNDS: (f64, f64) = (-4.6, 4.6);

fn kernel_signal(a: &[f64], b: &[f64], ls: &[f64], sv: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    sv * (-0.5 * r2).exp()
}

fn gram(x: &[Vec<f64>], ls: &[f64], sv: f64, noise: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_signal(&x[i], &x[j], ls, sv);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += noise + JITTER;
    }
    k
}

/// Log marginal likelihood and its gradient w.r.t. `[ln l_1.., ln sv]`.
fn log_ml(x: &[Vec<f64>], y: &[f64], theta: &[f64], noise: f64) -> Option<(f64, Vec<f64>)> {
    let n = x.len();
    let d = theta.len() - 1;
    let ls: Vec<f64> = theta[..d].iter().map(|t| t.exp()).collect();
    let sv = theta[d].exp();
    let k = gram(x, &ls, sv, noise);
    let chol = Cholesky::factor(&k, n).ok()?;
    let alpha = chol.solve(y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let value = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let kinv = chol.inverse();
    // W = αα^T - K^{-1}; dL/dθ = ½ tr(W dK/dθ)
    let mut grad = vec![0.0; d + 1];
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[i * n + j];
            let ks = kernel_signal(&x[i], &x[j], &ls, sv);
            grad[d] += 0.5 * w * ks;
            for (q, g) in grad[..d].iter_mut().enumerate() {
                let r = (x[i][q] - x[j][q]) / ls[q];
                *g += 0.5 * w * ks * r * r;
            }
        }
    }
    Some((value, grad))
}

impl GpSurrogate {
    /// Fits the surrogate, choosing hyperparameters by multi-start gradient
    /// ascent on the marginal likelihood.
    pub fn fit(x: Vec<Vec<f64>>, y: &[f64], noise: f64, rng: &mut impl Rng) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid("gp needs matching, non-empty inputs and targets"));
        }
        let d = x[0].len();
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_scale = if sd > 0.0 { sd } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

        let clamp = |t: &mut [f64]| {
            for v in t[..d].iter_mut() {
                *v = v.clamp(LOG_LS_BOUNDS.0, LOG_LS_BOUNDS.1);
            }
            t[d] = t[d].clamp(LOG_SV_BOUNDS.0, LOG_SV_BOUNDS.1);
        };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for start in 0..4 {
            let mut theta: Vec<f64> = if start == 0 {
                let mut t = vec![(0.3f64).ln(); d];
                t.push(0.0);
                t
            } else {
                let mut t: Vec<f64> = (0..d)
                    .map(|_| rng.random_range(LOG_LS_BOUNDS.0..LOG_LS_BOUNDS.1))
                    .collect();
                t.push(rng.random_range(-1.0..1.0));
                t
            };
            // Adam ascent in log space.
            let (mut m, mut v) = (vec![0.0; d + 1], vec![0.0; d + 1]);
            let mut cur = log_ml(&x, &ys, &theta, noise);
            let mut local_best = cur.as_ref().map(|c| (c.0, theta.clone()));
            for step in 1..=80 {
                let Some((_, g)) = cur.as_ref() else { break };
                for i in 0..=d {
                    m[i] = 0.9 * m[i] + 0.1 * g[i];
                    v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                    let mh = m[i] / (1.0 - 0.9f64.powi(step));
                    let vh = v[i] / (1.0 - 0.999f64.powi(step));
                    theta[i] += 0.05 * mh / (vh.sqrt() + 1e-8);
                }
                clamp(&mut theta);
                cur = log_ml(&x, &ys, &theta, noise);
                if let Some((val, _)) = &cur {
                    if local_best.as_ref().is_none_or(|b| *val > b.0) {
                        local_best = Some((*val, theta.clone()));
                    }
                }
            }
            if let Some(lb) = local_best {
                if best.as_ref().is_none_or(|b| lb.0 > b.0) {
                    best = Some(lb);
                }
            }
        }
        let theta = match best {
            Some(b) => b.1,
            None => {
                let mut t = vec![(0.3f64).ln(); d];
                t.push(0.0);
                t
            }
        };
        let length_scales: Vec<f64> = theta[..d].iter().map(|t| t.exp()).collect();
        let signal_var = theta[d].exp();
        Self::with_hyperparameters(x, y, length_scales, signal_var, noise)
    }

    /// Conditions on the data with fixed kernel hyperparameters.
    pub fn with_hyperparameters(
        x: Vec<Vec<f64>>,
        y: &[f64],
        length_scales: Vec<f64>,
        signal_var: f64,
        noise: f64,
    ) -> Result<Self> {
        let n = y.len();
        let nf = n as f64;
        let y_mean = y.iter().sum::<f64>() / nf;
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / nf).sqrt();
        let y_scale = if sd > 0.0 { sd } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let chol = Cholesky::factor(&gram(&x, &length_scales, signal_var, noise), n)?;
        let alpha = chol.solve(&ys);
        let incumbent = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            x,
            y_mean,
            y_scale,
            length_scales,
            signal_var,
            noise,
            chol,
            alpha,
            incumbent,
        })
    }

    /// Posterior mean and standard deviation in the original target units.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let k: Vec<f64> = self
            .x
            .iter()
            .map(|xi| kernel_signal(xi, p, &self.length_scales, self.signal_var))
            .collect();
        let mean: f64 = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.chol.forward_solve(&k);
        let var = (self.signal_var - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * var.sqrt())
    }

    pub fn expected_improvement(&self, p: &[f64]) -> f64 {
        let (m, s) = self.predict(p);
        ei(m, s, self.incumbent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub n_init: usize,
    pub n_iter: usize,
    pub seed: u64,
    /// Observation noise variance on standardized targets.
    pub noise: f64,
    pub acquisition_candidates: usize,
    pub acquisition_starts: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            n_iter: 20,
            seed: 0,
            noise: 1e-6,
            acquisition_candidates: 512,
            acquisition_starts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub point: Vec<f64>,
    /// `-inf` when the objective failed.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub best: Vec<f64>,
    pub best_score: f64,
    pub trace: Vec<TraceEntry>,
}

/// Compass search for a maximum of EI starting at `x0`.
fn local_search(gp: &GpSurrogate, x0: Vec<f64>) -> (Vec<f64>, f64) {
    let mut x = x0;
    let mut fx = gp.expected_improvement(&x);
    let mut step = 0.1;
    let mut evals = 0;
    while step > 1e-4 && evals < 400 {
        let mut moved = false;
        for j in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[j] = (y[j] + dir * step).clamp(0.0, 1.0);
                evals += 1;
                let fy = gp.expected_improvement(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (x, fx)
}

fn propose(
    space: &SearchSpace,
    gp: &GpSurrogate,
    seen: &[Vec<f64>],
    cfg: &BoConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let d = space.dim();
    let mut cands: Vec<(f64, Vec<f64>)> = (0..cfg.acquisition_candidates)
        .map(|_| {
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            (gp.expected_improvement(&u), u)
        })
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut refined: Vec<(f64, Vec<f64>)> = cands
        .into_iter()
        .take(cfg.acquisition_starts.max(1))
        .map(|(_, u)| {
            let (x, f) = local_search(gp, u);
            (f, x)
        })
        .collect();
    refined.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, u) in refined {
        let v = space.from_unit(&u);
        if !seen.iter().any(|s| s == &v) {
            return v;
        }
    }
    // Every refined candidate rounds onto an evaluated point.
    for _ in 0..1000 {
        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let v = space.from_unit(&u);
        if !seen.iter().any(|s| s == &v) {
            return v;
        }
    }
    space.from_unit(&vec![0.5; d])
}

/// Maximises `objective` over `space`. When `trace_path` names an existing
/// trace, its entries are replayed instead of re-evaluated, and the file is
/// rewritten after every new evaluation.
pub fn optimize<E: Display>(
    space: &SearchSpace,
    cfg: &BoConfig,
    trace_path: Option<&Path>,
    mut objective: impl FnMut(&[f64]) -> std::result::Result<f64, E>,
) -> Result<Optimum> {
    if cfg.n_init < 2 {
        return Err(Error::invalid("hyperopt needs n_init >= 2"));
    }
    let mut previous = match trace_path {
        Some(p) if p.exists() => read_trace(p, space)?,
        _ => Vec::new(),
    };
    previous.truncate(cfg.n_init + cfg.n_iter);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let design = latin_hypercube(cfg.n_init, space.dim(), &mut rng);
    let mut trace: Vec<TraceEntry> = Vec::new();

    let mut evaluate = |point: Vec<f64>, trace: &mut Vec<TraceEntry>| -> Result<()> {
        let iteration = trace.len();
        let score = if let Some(prev) = previous.get(iteration) {
            if prev.point != point {
                log::warn!("hyperopt trace entry {iteration} differs from the replayed proposal; using the trace");
            }
            trace.push(prev.clone());
            return Ok(());
        } else {
            match objective(&point) {
                Ok(s) if s.is_finite() => s,
                Ok(s) => {
                    log::warn!("objective returned {s} at iteration {iteration}");
                    f64::NEG_INFINITY
                }
                Err(e) => {
                    log::warn!("objective failed at iteration {iteration}: {e}");
                    f64::NEG_INFINITY
                }
            }
        };
        log::info!("hyperopt {iteration}: {point:?} -> {score}");
        trace.push(TraceEntry {
            iteration,
            point,
            score,
        });
        if let Some(p) = trace_path {
            write_trace(p, space, trace)?;
        }
        Ok(())
    };

    for u in &design {
        evaluate(space.from_unit(u), &mut trace)?;
    }
    for _ in 0..cfg.n_iter {
        let finite: Vec<&TraceEntry> = trace.iter().filter(|t| t.score.is_finite()).collect();
        let seen: Vec<Vec<f64>> = trace.iter().map(|t| t.point.clone()).collect();
        let next = if finite.len() < 2 {
            let u: Vec<f64> = (0..space.dim()).map(|_| rng.random::<f64>()).collect();
            space.from_unit(&u)
        } else {
            // Failed points enter the surrogate at the worst observed score.
            let worst = finite.iter().map(|t| t.score).fold(f64::INFINITY, f64::min);
            let x: Vec<Vec<f64>> = trace.iter().map(|t| space.to_unit(&t.point)).collect();
            let y: Vec<f64> = trace
                .iter()
                .map(|t| if t.score.is_finite() { t.score } else { worst })
                .collect();
            let gp = GpSurrogate::fit(x, &y, cfg.noise, &mut rng)?;
            propose(space, &gp, &seen, cfg, &mut rng)
        };
        evaluate(next, &mut trace)?;
    }
    let best = trace
        .iter()
        .filter(|t| t.score.is_finite())
        .max_by(|a, b| a.score.total_cmp(&b.score).then(b.iteration.cmp(&a.iteration)))
        .ok_or_else(|| Error::invalid("every hyperopt evaluation failed"))?;
    Ok(Optimum {
        best: best.point.clone(),
        best_score: best.score,
        trace,
    })
}

pub fn trace_to_text(space: &SearchSpace, trace: &[TraceEntry]) -> String {
    let mut out = String::from("iteration");
    for p in &space.params {
        out.push(',');
        out.push_str(&p.name);
    }
    out.push_str(",f_all\n");
    for t in trace {
        let _ = write!(out, "{}", t.iteration);
        for v in &t.point {
            let _ = write!(out, ",{v:?}");
        }
        let _ = writeln!(out, ",{:?}", t.score);
    }
    out
}

pub fn write_trace(path: &Path, space: &SearchSpace, trace: &[TraceEntry]) -> Result<()> {
    write_atomic(path, trace_to_text(space, trace).as_bytes())
}

pub fn read_trace(path: &Path, space: &SearchSpace) -> Result<Vec<TraceEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let expected = trace_to_text(space, &[]);
    if header != expected.trim_end() {
        return Err(Error::parse(path, "trace header does not match the search space"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::parse(path, format!("line {}: {m}", i + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != space.dim() + 2 {
            return Err(bad("wrong number of fields"));
        }
        let iteration: usize = fields[0].parse().map_err(|_| bad("bad iteration"))?;
        if iteration != out.len() {
            return Err(bad("iterations out of order"));
        }
        let nums = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad number"))?;
        let (point, score) = nums.split_at(space.dim());
        if !space.contains(point) {
            return Err(bad("point outside the search space"));
        }
        out.push(TraceEntry {
            iteration,
            point: point.to_vec(),
            score: score[0],
        });
    }
    Ok(out)
}

impl Display for Optimum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "best {:?} with score {}", self.best, self.best_score)
    }
}
