//! STRIP-style backdoor detection: blend inputs with clean samples and
//! inspect the entropy of the prediction vectors. A live backdoor keeps
//! firing under blending, so poisoned inputs show abnormally low entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::layers::softmax;
use crate::nncore::models::Classifier;
use crate::nncore::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StripReport {
    /// Mean blend entropy per clean input.
    pub clean_entropies: Vec<f64>,
    /// Mean blend entropy per poisoned input.
    pub poisoned_entropies: Vec<f64>,
    pub blends_per_input: usize,
    /// Flagging threshold (1st percentile of the clean entropies).
    pub threshold: f64,
    /// Probability a random poisoned input scores below a random clean
    /// one (0.5 = inseparable, 1.0 = perfectly separable).
    pub auc: f64,
    pub num_classes: usize,
}

fn entropy_bits(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Mean prediction-vector entropy of `n_blends` half-and-half blends of
/// each input with random clean-pool images.
pub fn strip_entropies<M: Classifier + ?Sized>(
    model: &M,
    inputs: &[Tensor],
    clean_pool: &[Tensor],
    n_blends: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_blends == 0 {
        return Err(Error::config("need at least one blend per input"));
    }
    if clean_pool.is_empty() {
        return Err(Error::config("clean pool is empty"));
    }
    let picks: Vec<Vec<usize>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        inputs
            .iter()
            .map(|_| (0..n_blends).map(|_| rng.gen_range(0..clean_pool.len())).collect())
            .collect()
    };
    Ok(inputs
        .par_iter()
        .zip(&picks)
        .map(|(input, pool_idx)| {
            let mut acc = 0.0;
            for &j in pool_idx {
                let blend: Vec<f64> = input
                    .data()
                    .iter()
                    .zip(clean_pool[j].data())
                    .map(|(a, b)| 0.5 * a + 0.5 * b)
                    .collect();
                let img = Tensor::from_vec(input.shape(), blend).expect("same shape");
                let probs = softmax(&model.logits(&img));
                acc += entropy_bits(&probs);
            }
            acc / n_blends as f64
        })
        .collect())
}

/// Scan clean and poisoned inputs, aggregate the entropy distributions,
/// and report the clean-vs-poisoned separation AUC.
pub fn strip_scan<M: Classifier + ?Sized>(
    model: &M,
    clean_inputs: &[Tensor],
    poisoned_inputs: &[Tensor],
    clean_pool: &[Tensor],
    n_blends: usize,
    seed: u64,
) -> Result<StripReport> {
    let clean_entropies = strip_entropies(model, clean_inputs, clean_pool, n_blends, seed)?;
    let poisoned_entropies =
        strip_entropies(model, poisoned_inputs, clean_pool, n_blends, seed ^ 0xD15E_A5E)?;

    // rank-sum AUC: P(poisoned < clean) + 0.5 P(tie)
    let mut wins = 0.0f64;
    for &p in &poisoned_entropies {
        for &c in &clean_entropies {
            if p < c {
                wins += 1.0;
            } else if p == c {
                wins += 0.5;
            }
        }
    }
    let auc = wins / (poisoned_entropies.len() * clean_entropies.len()).max(1) as f64;

    let mut sorted = clean_entropies.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = sorted[(sorted.len() / 100).min(sorted.len() - 1)];

    Ok(StripReport {
        clean_entropies,
        poisoned_entropies,
        blends_per_input: n_blends,
        threshold,
        auc,
        num_classes: model.num_classes(),
    })
}
