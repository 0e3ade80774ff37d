//! Seeded mini-batch SGD training for the classifier and the autoencoder.
//!
//! Per-sample forward/backward passes run in parallel; their gradients are
//! reduced in index order so results are bit-reproducible regardless of
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datahub::LabeledDataset;
use crate::error::{Error, Result};
use crate::nncore::layers::softmax_cross_entropy;
use crate::nncore::models::{AutoencoderScratch, ConvAutoencoder, ConvNetScratch, SmallConvNet};
use crate::nncore::tensor::{argmax, Tensor};

/// Step decay: multiply the learning rate by `factor` at each milestone.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LrSchedule {
    pub factor: f64,
    pub milestones: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub schedule: Option<LrSchedule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            schedule: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be > 0"));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match &self.schedule {
            None => self.lr,
            Some(s) => {
                let hits = s.milestones.iter().filter(|&&m| m <= epoch).count();
                self.lr * s.factor.powi(hits as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Train accuracy for classifiers; `None` for reconstruction training.
    pub accuracy: Option<f64>,
}

pub type TrainHistory = Vec<EpochStats>;

struct Sgd {
    velocity: Vec<Vec<f64>>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    fn new(params: &[&[f64]], momentum: f64, weight_decay: f64) -> Self {
        Sgd { velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(), momentum, weight_decay }
    }

    fn step(&mut self, params: Vec<&mut Vec<f64>>, grads: &[Vec<f64>], lr: f64, batch: usize) {
        let inv = 1.0 / batch as f64;
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for i in 0..p.len() {
                v[i] = self.momentum * v[i] + g[i] * inv + self.weight_decay * p[i];
                p[i] -= lr * v[i];
            }
        }
    }
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9)));
    for k in (1..n).rev() {
        let j = rng.gen_range(0..=k);
        idx.swap(k, j);
    }
    idx
}

fn sum_grads(into: &mut [Vec<f64>], from: &[Vec<f64>]) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Fixed chunk count for intra-batch gradient accumulation. Chunks are
/// split by index and reduced in chunk order, so results do not depend on
/// the number of worker threads.
const GRAD_CHUNKS: usize = 8;

fn chunk_size(n: usize) -> usize {
    n.div_ceil(GRAD_CHUNKS).max(1)
}

/// Train the classifier with mini-batch SGD and cross-entropy.
///
/// The optional `augment` hook returns extra same-label copies of a sample
/// (keyed by dataset index) that join the sample's batch; the defense
/// counter-attack uses it to train on compressed/autoencoded versions.
pub fn train_classifier_with(
    model: &mut SmallConvNet,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    augment: Option<&(dyn Fn(usize, &Tensor) -> Vec<Tensor> + Sync)>,
) -> Result<TrainHistory> {
    train_classifier_stoppable(model, data, cfg, augment, |_, _| false)
}

/// As [`train_classifier_with`], but `stop` runs after every epoch and a
/// `true` return ends training early (used by the end-to-end variant's
/// plateau criterion).
pub fn train_classifier_stoppable(
    model: &mut SmallConvNet,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    augment: Option<&(dyn Fn(usize, &Tensor) -> Vec<Tensor> + Sync)>,
    mut stop: impl FnMut(&SmallConvNet, &EpochStats) -> bool,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    if data.classes != model.num_classes {
        return Err(Error::config(format!(
            "dataset has {} classes but model expects {}",
            data.classes, model.num_classes
        )));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut sgd = Sgd::new(&model.params(), cfg.momentum, cfg.weight_decay);
    // long-lived per-chunk state; fresh allocations in the hot loop do not
    // scale across threads (page zeroing serializes in the kernel)
    let mut pool: Vec<(Vec<Vec<f64>>, ConvNetScratch, f64, usize)> =
        (0..GRAD_CHUNKS).map(|_| (model.zero_grads(), ConvNetScratch::default(), 0.0, 0)).collect();
    let mut total = model.zero_grads();
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), cfg.seed, epoch);
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // assemble the batch: each sample plus its augmented versions
            let mut entries: Vec<(Tensor, usize)> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let img = data.image(i);
                let label = data.label(i);
                if let Some(hook) = augment {
                    for extra in hook(i, &img) {
                        entries.push((extra, label));
                    }
                }
                entries.push((img, label));
            }
            let cs = chunk_size(entries.len());
            let used = entries.len().div_ceil(cs);
            entries
                .par_chunks(cs)
                .zip(pool[..used].par_iter_mut())
                .for_each(|(part, (grads, s, loss, hits))| {
                    for g in grads.iter_mut() {
                        g.fill(0.0);
                    }
                    *loss = 0.0;
                    *hits = 0;
                    for (img, label) in part {
                        model.forward_scratch(img.data(), s);
                        let (l, dlogits) = softmax_cross_entropy(&s.logits, *label);
                        *loss += l;
                        *hits += usize::from(argmax(&s.logits) == *label);
                        model.backward_scratch(&dlogits, s, grads);
                    }
                });
            for g in total.iter_mut() {
                g.fill(0.0);
            }
            for (g, loss, hits) in pool[..used].iter().map(|(g, _, l, h)| (g, l, h)) {
                sum_grads(&mut total, g);
                loss_sum += loss;
                correct += hits;
            }
            seen += entries.len();
            sgd.step(model.params_mut(), &total, lr, entries.len());
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / seen as f64,
            accuracy: Some(correct as f64 / seen as f64),
        };
        let done = stop(model, &stats);
        history.push(stats);
        if done {
            break;
        }
    }
    Ok(history)
}

pub fn train_classifier(
    model: &mut SmallConvNet,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_classifier_with(model, data, cfg, None)
}

/// Train the autoencoder with MSE reconstruction loss over `data`'s images
/// (labels ignored).
pub fn train_autoencoder(
    model: &mut ConvAutoencoder,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut sgd = Sgd::new(&model.params(), cfg.momentum, cfg.weight_decay);
    let mut pool: Vec<(Vec<Vec<f64>>, AutoencoderScratch, f64)> =
        (0..GRAD_CHUNKS).map(|_| (model.zero_grads(), AutoencoderScratch::default(), 0.0)).collect();
    let mut total = model.zero_grads();
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), cfg.seed, epoch);
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<Tensor> = chunk.iter().map(|&i| data.image(i)).collect();
            let cs = chunk_size(images.len());
            let used = images.len().div_ceil(cs);
            images.par_chunks(cs).zip(pool[..used].par_iter_mut()).for_each(
                |(part, (grads, s, loss))| {
                    for g in grads.iter_mut() {
                        g.fill(0.0);
                    }
                    *loss = 0.0;
                    for img in part {
                        model.forward_scratch(img.data(), s);
                        let n = img.len() as f64;
                        let mut mse = 0.0;
                        let dout: Vec<f64> = s
                            .out
                            .iter()
                            .zip(img.data())
                            .map(|(y, x)| {
                                let d = y - x;
                                mse += d * d;
                                2.0 * d / n
                            })
                            .collect();
                        *loss += mse / n;
                        model.backward_scratch(&dout, s, grads);
                    }
                },
            );
            for g in total.iter_mut() {
                g.fill(0.0);
            }
            for (g, _, mse) in &pool[..used] {
                sum_grads(&mut total, g);
                loss_sum += mse;
            }
            seen += images.len();
            sgd.step(model.params_mut(), &total, lr, images.len());
        }
        history.push(EpochStats { epoch, loss: loss_sum / seen as f64, accuracy: None });
    }
    Ok(history)
}

/// Mean reconstruction MSE of `model` over `data`.
pub fn autoencoder_mse(model: &ConvAutoencoder, data: &LabeledDataset) -> f64 {
    let per: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map_init(AutoencoderScratch::default, |s, i| {
            let img = data.image(i);
            model.forward_scratch(img.data(), s);
            s.out.iter().zip(img.data()).map(|(y, x)| (y - x) * (y - x)).sum::<f64>()
                / img.len() as f64
        })
        .collect();
    per.iter().sum::<f64>() / data.len() as f64
}
