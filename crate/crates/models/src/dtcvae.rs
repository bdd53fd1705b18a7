//! Degradation-trend-constrained variational autoencoder with a 1-d latent.
//!
//! Encoder: input -> sigmoid hidden -> (μ, log σ²). Decoder: z -> sigmoid
//! hidden -> linear reconstruction. The loss adds KL to a standard normal,
//! the squared reconstruction error and a penalty pulling each consecutive
//! latent step of a specimen towards a fixed rate `r`.

use gwhi_core::data::{MinMaxOutputNormalizer, TimeAxis};
use gwhi_core::features::SpecimenSeries;
use gwhi_core::hyperopt::{Param, SearchSpace};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_finite, prepare, ModelNet, TrainedModel, MODEL_FORMAT_VERSION};
use crate::nn::{select_rows, Activation, Adam, DenseNet, Grads};

/// Latent variance below which the run is flagged as collapsed.
pub const COLLAPSE_VARIANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtcVaeHyperparams {
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Range the degradation rate `r` is drawn from once per run.
    pub rate_range: (f64, f64),
}

impl Default for DtcVaeHyperparams {
    fn default() -> Self {
        Self {
            hidden: 50,
            batch_size: 85,
            lr: 0.005,
            epochs: 550,
            alpha: 1.6,
            beta: 2.8,
            gamma: 0.075,
            rate_range: (9.0, 10.0),
        }
    }
}

impl DtcVaeHyperparams {
    pub fn search_space() -> SearchSpace {
        SearchSpace::new(vec![
            Param::integer("hidden", 40, 60),
            Param::integer("batch_size", 75, 95),
            Param::continuous("lr", 0.001, 0.01),
            Param::integer("epochs", 500, 600),
            Param::continuous("alpha", 1.4, 1.8),
            Param::continuous("beta", 2.6, 3.0),
            Param::continuous("gamma", 0.05, 0.1),
        ])
        .expect("static space")
    }

    pub fn with_point(&self, p: &[f64]) -> Result<Self> {
        if p.len() != 7 {
            return Err(Error::ShapeMismatch { expected: 7, actual: p.len() });
        }
        Ok(Self {
            hidden: p[0] as usize,
            batch_size: p[1] as usize,
            lr: p[2],
            epochs: p[3] as usize,
            alpha: p[4],
            beta: p[5],
            gamma: p[6],
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::invalid("hidden width and batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        let (lo, hi) = self.rate_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("rate_range must be an increasing finite interval"));
        }
        Ok(())
    }
}

/// `μ + exp(logvar/2)·noise`.
pub fn reparameterize(mu: f64, logvar: f64, noise: f64) -> f64 {
    mu + (0.5 * logvar).exp() * noise
}

/// KL divergence of `N(μ, e^logvar)` from the standard normal.
pub fn kl_term(mu: f64, logvar: f64) -> f64 {
    -0.5 * (1.0 + logvar - logvar.exp() - mu * mu)
}

/// The three networks of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeNets {
    pub encoder: DenseNet,
    pub heads: DenseNet,
    pub decoder: DenseNet,
}

impl VaeNets {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            encoder: DenseNet::new(&[input, hidden], &[Activation::Sigmoid], &[true], rng)?,
            heads: DenseNet::new(&[hidden, 2], &[Activation::Linear], &[true], rng)?,
            decoder: DenseNet::new(
                &[1, hidden, input],
                &[Activation::Sigmoid, Activation::Linear],
                &[true, true],
                rng,
            )?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLossTerms {
    pub total: f64,
    pub kl: f64,
    pub reconstruction: f64,
    pub trend: f64,
}

/// Loss of one batch and the gradients of encoder, heads and decoder.
///
/// `pairs` lists `(previous, next)` row indices of consecutive timesteps
/// of the same specimen; `noise` holds one standard-normal draw per row.
pub fn loss_and_grad(
    nets: &VaeNets,
    x: &Array2<f64>,
    pairs: &[(usize, usize)],
    noise: &[f64],
    hp: &DtcVaeHyperparams,
    rate: f64,
) -> Result<(VaeLossTerms, [Grads; 3])> {
    let b = x.nrows();
    if noise.len() != b {
        return Err(Error::ShapeMismatch { expected: b, actual: noise.len() });
    }
    if pairs.iter().any(|&(i, j)| i >= b || j >= b) {
        return Err(Error::invalid("pair index outside the batch"));
    }
    let te = nets.encoder.forward_tape(x)?;
    let th = nets.heads.forward_tape(&te.output)?;
    let mu = th.output.column(0).to_owned();
    let lv = th.output.column(1).to_owned();
    let z: Vec<f64> = (0..b).map(|i| reparameterize(mu[i], lv[i], noise[i])).collect();
    let zm = Array2::from_shape_vec((b, 1), z.clone()).expect("b x 1");
    let td = nets.decoder.forward_tape(&zm)?;

    let diff = &td.output - x;
    let reconstruction: f64 = diff.iter().map(|d| d * d).sum();
    let kl: f64 = (0..b).map(|i| kl_term(mu[i], lv[i])).sum();
    let mut gz = vec![0.0; b];
    let mut trend = 0.0;
    for &(i, j) in pairs {
        let e = z[j] - z[i] - rate;
        trend += e * e;
        gz[j] += 2.0 * hp.gamma * e;
        gz[i] -= 2.0 * hp.gamma * e;
    }

    let (gdec, gzdec) = nets.decoder.backward(&td, &(diff * (2.0 * hp.beta)));
    let mut gheads_out = Array2::zeros((b, 2));
    for i in 0..b {
        let g = gz[i] + gzdec[[i, 0]];
        let s = (0.5 * lv[i]).exp();
        gheads_out[[i, 0]] = g + hp.alpha * mu[i];
        gheads_out[[i, 1]] = g * 0.5 * s * noise[i] + hp.alpha * 0.5 * (lv[i].exp() - 1.0);
    }
    let (gheads, gh) = nets.heads.backward(&th, &gheads_out);
    let (genc, _) = nets.encoder.backward(&te, &gh);
    let total = hp.alpha * kl + hp.beta * reconstruction + hp.gamma * trend;
    Ok((
        VaeLossTerms {
            total,
            kl,
            reconstruction,
            trend,
        },
        [genc, gheads, gdec],
    ))
}

pub fn latent_means(encoder: &DenseNet, heads: &DenseNet, x: &Array2<f64>) -> Result<Vec<f64>> {
    let h = encoder.forward(x)?;
    Ok(heads.forward(&h)?.column(0).to_vec())
}

/// Row order for one epoch: specimens in shuffled order, each contiguous
/// and time-ordered. Returns `(specimen, position)` per row.
fn epoch_order(sizes: &[usize], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .flat_map(|s| (0..sizes[s]).map(move |p| (s, p)))
        .collect()
}

/// Consecutive within-specimen pairs inside one batch.
fn batch_pairs(batch: &[(usize, usize)]) -> Vec<(usize, usize)> {
    batch
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].0 == w[1].0 && w[1].1 == w[0].1 + 1)
        .map(|(i, _)| (i, i + 1))
        .collect()
}

pub fn train(train: &[SpecimenSeries], axis: TimeAxis, hp: &DtcVaeHyperparams, seed: u64) -> Result<TrainedModel> {
    hp.validate()?;
    let (zscore, prepared) = prepare(train, axis)?;
    let sizes: Vec<usize> = prepared.iter().map(|p| p.x.nrows()).collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let views: Vec<_> = prepared.iter().map(|p| p.x.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("equal widths after z-scoring");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = rng.random_range(hp.rate_range.0..hp.rate_range.1);
    let mut nets = VaeNets::new(x.ncols(), hp.hidden, &mut rng)?;
    let mut adams = [
        Adam::new(nets.encoder.num_params(), hp.lr),
        Adam::new(nets.heads.num_params(), hp.lr),
        Adam::new(nets.decoder.num_params(), hp.lr),
    ];
    let mut losses = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let order = epoch_order(&sizes, &mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for batch in order.chunks(hp.batch_size) {
            let idx: Vec<usize> = batch.iter().map(|&(s, p)| offsets[s] + p).collect();
            let xb = select_rows(&x, &idx);
            let pairs = batch_pairs(batch);
            let noise: Vec<f64> = (0..idx.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (terms, [ge, gh, gd]) = loss_and_grad(&nets, &xb, &pairs, &noise, hp, rate)?;
            check_finite(&format!("loss at epoch {epoch}"), terms.total)?;
            total += terms.total;
            count += 1;
            adams[0].step(nets.encoder.params_mut(), ge.slices())?;
            adams[1].step(nets.heads.params_mut(), gh.slices())?;
            adams[2].step(nets.decoder.params_mut(), gd.slices())?;
        }
        losses.push(total / count as f64);
    }

    let mu = latent_means(&nets.encoder, &nets.heads, &x)?;
    let mut flags = Vec::new();
    let n = mu.len() as f64;
    let mean = mu.iter().sum::<f64>() / n;
    let var = mu.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    if var < COLLAPSE_VARIANCE {
        let msg = format!("posterior collapse: latent mean variance {var:.3e}");
        log::warn!("{msg}");
        flags.push(msg);
    }
    let first: f64 = offsets.iter().map(|&o| mu[o]).sum::<f64>() / sizes.len() as f64;
    let last: f64 = offsets.iter().zip(&sizes).map(|(&o, &s)| mu[o + s - 1]).sum::<f64>() / sizes.len() as f64;
    let orientation = if last < first { -1.0 } else { 1.0 };
    let oriented: Vec<f64> = mu.iter().map(|m| orientation * m).collect();
    let output = MinMaxOutputNormalizer::fit(&oriented)?;

    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        seed,
        train_specimens: prepared.iter().map(|p| p.id).collect(),
        time_axis: axis,
        zscore,
        output,
        pretrain_losses: Vec::new(),
        losses,
        flags,
        net: ModelNet::DtcVae {
            hyperparams: hp.clone(),
            rate,
            encoder: nets.encoder,
            heads: nets.heads,
            decoder: nets.decoder,
            orientation,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reparameterize_fixtures() {
        assert_eq!(reparameterize(0.7, 1.3, 0.0), 0.7);
        assert_eq!(reparameterize(0.0, 0.0, 1.0), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| reparameterize(0.0, 4f64.ln(), StandardNormal.sample(&mut rng)))
            .collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd - 2.0).abs() < 0.04);
    }

    #[test]
    fn kl_fixtures() {
        assert_eq!(kl_term(0.0, 0.0), 0.0);
        assert_eq!(kl_term(1.0, 0.0), 0.5);
        for &(m, l) in &[(0.3, -1.0), (-2.0, 0.5), (0.0, 2.0)] {
            assert!(kl_term(m, l) > 0.0);
        }
    }

    #[test]
    fn batches_pair_only_within_specimens() {
        let batch = [(1, 3), (1, 4), (0, 0), (0, 1), (0, 2)];
        assert_eq!(batch_pairs(&batch), vec![(0, 1), (2, 3), (3, 4)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let order = epoch_order(&[2, 3], &mut rng);
        assert_eq!(order.len(), 5);
        let s0: Vec<usize> = order.iter().filter(|o| o.0 == 1).map(|o| o.1).collect();
        assert_eq!(s0, vec![0, 1, 2]);
    }

    #[test]
    fn trend_term_vanishes_at_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nets = VaeNets::new(3, 4, &mut rng).unwrap();
        let x = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 * 0.1);
        let mu = latent_means(&nets.encoder, &nets.heads, &x).unwrap();
        let h = nets.encoder.forward(&x).unwrap();
        let lv = nets.heads.forward(&h).unwrap().column(1).to_vec();
        let rate = 9.5;
        // choose noise so that z_1 - z_0 = rate
        let noise0 = 0.0;
        let noise1 = (mu[0] + rate - mu[1]) / (0.5 * lv[1]).exp();
        let hp = DtcVaeHyperparams::default();
        let (t, _) = loss_and_grad(&nets, &x, &[(0, 1)], &[noise0, noise1], &hp, rate).unwrap();
        assert!(t.trend < 1e-18);
    }

    #[test]
    fn search_space_matches_bounds() {
        let s = DtcVaeHyperparams::search_space();
        let hp = DtcVaeHyperparams::default().with_point(&s.from_unit(&[0.0; 7])).unwrap();
        assert_eq!((hp.hidden, hp.batch_size, hp.epochs), (40, 75, 500));
        assert_eq!((hp.alpha, hp.beta, hp.gamma), (1.4, 2.6, 0.05));
    }
}
