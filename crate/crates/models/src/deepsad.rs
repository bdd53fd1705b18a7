//! Diversity-DeepSAD with continuous auxiliary labels.
//!
//! An encoder maps feature rows to a 16-d embedding. Its weights are first
//! pretrained as the encoder half of an autoencoder, then the hypersphere
//! center is fixed to the mean embedding. The HI is the distance to the
//! center. Training pulls early-life rows towards the center and pushes
//! late-life rows away, with an L2 weight penalty and a log-det diversity
//! term on the batch embeddings.

use gwhi_core::data::{MinMaxOutputNormalizer, TimeAxis};
use gwhi_core::features::SpecimenSeries;
use gwhi_core::hyperopt::{Param, SearchSpace};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_finite, prepare, ModelNet, TrainedModel, MODEL_FORMAT_VERSION};
use crate::nn::{gram_trace_logdet, select_rows, shuffled_batches, Activation, Adam, DenseNet, Grads};

pub const EMBEDDING_DIM: usize = 16;
pub const HIDDEN_LAYERS: usize = 6;
/// Ridge added to the batch Gram matrix before the log-determinant.
pub const GRAM_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepSadHyperparams {
    pub batch_size: usize,
    pub lr_pretrain: f64,
    pub lr: f64,
    pub epochs_pretrain: usize,
    pub epochs: usize,
    /// L2 weight on `Σθ²`.
    pub nu: f64,
    /// Weight of the labeled term.
    pub eta: f64,
    /// Weight of the diversity term.
    pub lambda: f64,
    pub eps: f64,
}

impl Default for DeepSadHyperparams {
    fn default() -> Self {
        Self {
            batch_size: 100,
            lr_pretrain: 5e-4,
            lr: 5e-4,
            epochs_pretrain: 10,
            epochs: 100,
            nu: 10.0,
            eta: 10.0,
            lambda: 0.001,
            eps: 1e-6,
        }
    }
}

impl DeepSadHyperparams {
    pub fn search_space() -> SearchSpace {
        SearchSpace::new(vec![
            Param::integer("batch_size", 50, 150),
            Param::continuous("lr_pretrain", 1e-4, 1e-3),
            Param::continuous("lr", 1e-4, 1e-3),
            Param::integer("epochs_pretrain", 5, 20),
            Param::integer("epochs", 50, 200),
        ])
        .expect("static space")
    }

    /// Applies a point of [`Self::search_space`] on top of `self`.
    pub fn with_point(&self, p: &[f64]) -> Result<Self> {
        if p.len() != 5 {
            return Err(Error::ShapeMismatch { expected: 5, actual: p.len() });
        }
        Ok(Self {
            batch_size: p[0] as usize,
            lr_pretrain: p[1],
            lr: p[2],
            epochs_pretrain: p[3] as usize,
            epochs: p[4] as usize,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        for (name, v) in [("lr_pretrain", self.lr_pretrain), ("lr", self.lr), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("nu", self.nu), ("eta", self.eta), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Label `1 - 2t/t_N` on the first and last quarter of life, `None` between.
pub fn make_labels(times: &[f64]) -> Result<Vec<Option<f64>>> {
    let t_end = *times.last().ok_or_else(|| Error::invalid("no timesteps to label"))?;
    if !(t_end > 0.0) {
        return Err(Error::invalid("label schedule needs a positive end time"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("label schedule needs increasing times"));
    }
    Ok(times
        .iter()
        .map(|&t| {
            let u = t / t_end;
            (u <= 0.25 || u >= 0.75).then(|| 1.0 - 2.0 * u)
        })
        .collect())
}

/// Hidden widths halve from the input width (floor), never below the
/// embedding size; the last layer is the embedding.
pub fn encoder_widths(input: usize) -> Vec<usize> {
    let mut w = vec![input];
    let mut cur = input;
    for _ in 0..HIDDEN_LAYERS {
        cur /= 2;
        w.push(cur.max(EMBEDDING_DIM));
    }
    w.push(EMBEDDING_DIM);
    w
}

pub fn build_encoder(input: usize, rng: &mut ChaCha8Rng) -> Result<DenseNet> {
    let widths = encoder_widths(input);
    let depth = widths.len() - 1;
    let mut acts = vec![Activation::leaky_relu(); depth];
    acts[depth - 1] = Activation::Linear;
    let mut bias = vec![true; depth];
    bias[depth - 1] = false;
    DenseNet::new(&widths, &acts, &bias, rng)
}

fn build_decoder(input: usize, rng: &mut ChaCha8Rng) -> Result<DenseNet> {
    let mut widths = encoder_widths(input);
    widths.reverse();
    let depth = widths.len() - 1;
    let mut acts = vec![Activation::leaky_relu(); depth];
    acts[depth - 1] = Activation::Linear;
    DenseNet::new(&widths, &acts, &vec![true; depth], rng)
}

/// Autoencoder pretraining of `encoder` on mean squared reconstruction
/// error. Returns the mean batch loss of every epoch.
pub fn pretrain(encoder: &mut DenseNet, x: &Array2<f64>, hp: &DeepSadHyperparams, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut decoder = build_decoder(encoder.input_width(), rng)?;
    let mut adam_e = Adam::new(encoder.num_params(), hp.lr_pretrain);
    let mut adam_d = Adam::new(decoder.num_params(), hp.lr_pretrain);
    let mut history = Vec::with_capacity(hp.epochs_pretrain);
    for epoch in 0..hp.epochs_pretrain {
        let mut total = 0.0;
        let batches = shuffled_batches(x.nrows(), hp.batch_size, rng);
        for idx in &batches {
            let xb = select_rows(x, idx);
            let te = encoder.forward_tape(&xb)?;
            let td = decoder.forward_tape(&te.output)?;
            let diff = &td.output - &xb;
            let n = diff.len() as f64;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            check_finite(&format!("pretraining loss at epoch {epoch}"), loss)?;
            total += loss;
            let up = diff * (2.0 / n);
            let (gd, gz) = decoder.backward(&td, &up);
            let (ge, _) = encoder.backward(&te, &gz);
            adam_d.step(decoder.params_mut(), gd.slices())?;
            adam_e.step(encoder.params_mut(), ge.slices())?;
        }
        history.push(total / batches.len() as f64);
    }
    Ok(history)
}

/// Pushes center components out of `(-eps, eps)`; exact zeros go to `+eps`.
pub fn center_rule(c: f64, eps: f64) -> f64 {
    if c >= 0.0 && c < eps {
        c + eps
    } else if c < 0.0 && c > -eps {
        c - eps
    } else {
        c
    }
}

pub fn init_center(encoder: &DenseNet, x: &Array2<f64>, eps: f64) -> Result<Vec<f64>> {
    let z = encoder.forward(x)?;
    let mean = z
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::invalid("center needs at least one training row"))?;
    Ok(mean.iter().map(|&c| center_rule(c, eps)).collect())
}

pub fn distances(encoder: &DenseNet, center: &[f64], x: &Array2<f64>) -> Result<Vec<f64>> {
    let z = encoder.forward(x)?;
    Ok(z.rows()
        .into_iter()
        .map(|r| r.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub sad: f64,
    pub l2: f64,
    pub diversity: f64,
}

/// Total batch loss and its gradient with respect to the encoder weights.
pub fn loss_and_grad(
    encoder: &DenseNet,
    x: &Array2<f64>,
    labels: &[Option<f64>],
    center: &[f64],
    hp: &DeepSadHyperparams,
) -> Result<(LossTerms, Grads)> {
    if labels.len() != x.nrows() {
        return Err(Error::ShapeMismatch {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    let tape = encoder.forward_tape(x)?;
    let z = &tape.output;
    let b = x.nrows() as f64;
    let mut up = Array2::zeros(z.raw_dim());
    let mut sad = 0.0;
    for (i, (row, label)) in z.rows().into_iter().zip(labels).enumerate() {
        let diff: Vec<f64> = row.iter().zip(center).map(|(a, c)| a - c).collect();
        let y = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        // dL/dz_i = dL/dy · (z_i - c)/y, or 2(z_i - c)/B for the squared term
        let scale = match label {
            None => {
                sad += y * y;
                2.0 / b
            }
            Some(l) => {
                let base = y + hp.eps;
                sad += hp.eta * base.powf(2.0 * l);
                if y > 0.0 {
                    hp.eta * 2.0 * l * base.powf(2.0 * l - 1.0) / (y * b)
                } else {
                    0.0
                }
            }
        };
        for (u, d) in up.row_mut(i).iter_mut().zip(&diff) {
            *u = scale * d;
        }
    }
    sad /= b;
    let mut diversity = 0.0;
    if hp.lambda > 0.0 {
        let (v, g) = gram_trace_logdet(z, GRAM_RIDGE)?;
        diversity = v;
        up.scaled_add(hp.lambda, &g);
    }
    let (mut grads, _) = encoder.backward(&tape, &up);
    let l2 = encoder.sq_norm();
    encoder.add_sq_norm_grad(&mut grads, hp.nu);
    let total = sad + hp.nu * l2 + hp.lambda * diversity;
    Ok((
        LossTerms {
            total,
            sad,
            l2,
            diversity,
        },
        grads,
    ))
}

/// Trains a model on the given (raw-feature) training specimens.
pub fn train(train: &[SpecimenSeries], axis: TimeAxis, hp: &DeepSadHyperparams, seed: u64) -> Result<TrainedModel> {
    hp.validate()?;
    let (zscore, prepared) = prepare(train, axis)?;
    let mut labels = Vec::new();
    for p in &prepared {
        labels.extend(make_labels(&p.times)?);
    }
    let views: Vec<_> = prepared.iter().map(|p| p.x.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("equal widths after z-scoring");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = build_encoder(x.ncols(), &mut rng)?;
    let pretrain_losses = pretrain(&mut encoder, &x, hp, &mut rng)?;
    let center = init_center(&encoder, &x, hp.eps)?;

    let mut adam = Adam::new(encoder.num_params(), hp.lr);
    let mut losses = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let batches = shuffled_batches(x.nrows(), hp.batch_size, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let xb = select_rows(&x, idx);
            let lb: Vec<Option<f64>> = idx.iter().map(|&i| labels[i]).collect();
            let (terms, grads) = loss_and_grad(&encoder, &xb, &lb, &center, hp)?;
            check_finite(&format!("loss at epoch {epoch}"), terms.total)?;
            total += terms.total;
            adam.step(encoder.params_mut(), grads.slices())?;
        }
        losses.push(total / batches.len() as f64);
        if !encoder.is_finite() {
            return Err(Error::Diverged(format!("encoder weights at epoch {epoch}")));
        }
    }

    let raw = distances(&encoder, &center, &x)?;
    let output = MinMaxOutputNormalizer::fit(&raw)?;
    let mut flags = Vec::new();
    if output.max - output.min <= 0.0 {
        flags.push("training HI is constant".to_string());
    }
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        seed,
        train_specimens: prepared.iter().map(|p| p.id).collect(),
        time_axis: axis,
        zscore,
        output,
        pretrain_losses,
        losses,
        flags,
        net: ModelNet::DeepSad {
            hyperparams: hp.clone(),
            encoder,
            center,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_fixtures() {
        let l = make_labels(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(l, vec![Some(1.0), Some(0.5), None, Some(-0.5), Some(-1.0)]);
        assert!(make_labels(&[0.0]).is_err());
        assert!(make_labels(&[]).is_err());
        assert!(make_labels(&[0.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn center_fixtures() {
        let eps = 1e-6;
        assert_eq!(center_rule(0.3, eps), 0.3);
        assert_eq!(center_rule(1e-9, eps), 1e-9 + 1e-6);
        assert_eq!(center_rule(-1e-9, eps), -1e-9 - 1e-6);
        assert_eq!(center_rule(0.0, eps), eps);
        assert_eq!(center_rule(-0.0, eps), eps);
        assert_eq!(center_rule(-2e-6, eps), -2e-6);
    }

    #[test]
    fn encoder_shape() {
        assert_eq!(encoder_widths(139), vec![139, 69, 34, 17, 16, 16, 16, 16]);
        assert_eq!(encoder_widths(10), vec![10, 16, 16, 16, 16, 16, 16, 16]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = build_encoder(40, &mut rng).unwrap();
        assert_eq!(e.output_width(), EMBEDDING_DIM);
        assert!(e.layers.last().unwrap().bias.is_none());
        assert_eq!(e.layers.len(), HIDDEN_LAYERS + 1);
    }

    #[test]
    fn loss_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = DenseNet::new(&[2, 2], &[Activation::Linear], &[false], &mut rng).unwrap();
        let x = Array2::from_shape_vec((1, 2), vec![0.4, -0.7]).unwrap();
        let z = enc.forward(&x).unwrap();
        let hp = DeepSadHyperparams {
            nu: 0.0,
            lambda: 0.0,
            ..DeepSadHyperparams::default()
        };
        // unlabeled sample sitting on the center
        let c = vec![z[[0, 0]], z[[0, 1]]];
        let (t, _) = loss_and_grad(&enc, &x, &[None], &c, &hp).unwrap();
        assert_eq!(t.sad, 0.0);
        // labeled ỹ=-1 at distance 1
        let c = vec![z[[0, 0]] - 1.0, z[[0, 1]]];
        let (t, _) = loss_and_grad(&enc, &x, &[Some(-1.0)], &c, &hp).unwrap();
        assert!((t.sad - 10.0 * (1.0 + 1e-6f64).powi(-2)).abs() < 1e-9);
    }

    #[test]
    fn zero_epoch_pretrain_keeps_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut enc = build_encoder(20, &mut rng).unwrap();
        let before = enc.clone();
        let x = Array2::from_shape_fn((8, 20), |(i, j)| (i * j) as f64 / 40.0);
        let hp = DeepSadHyperparams {
            epochs_pretrain: 0,
            ..DeepSadHyperparams::default()
        };
        assert!(pretrain(&mut enc, &x, &hp, &mut rng).unwrap().is_empty());
        assert_eq!(enc, before);
    }

    #[test]
    fn search_space_matches_bounds() {
        let s = DeepSadHyperparams::search_space();
        let hp = DeepSadHyperparams::default().with_point(&s.from_unit(&[1.0; 5])).unwrap();
        assert_eq!(hp.batch_size, 150);
        assert_eq!(hp.epochs, 200);
        assert_eq!(hp.epochs_pretrain, 20);
        assert!((hp.lr - 1e-3).abs() < 1e-15);
        let lo = DeepSadHyperparams::default().with_point(&s.from_unit(&[0.0; 5])).unwrap();
        assert_eq!((lo.batch_size, lo.epochs_pretrain, lo.epochs), (50, 5, 50));
    }
}
