//! Fine-pruning defense sweep: prune the least-active conv channels,
//! fine-tune briefly on clean data, track what happens to CDA and ASR.

use serde::{Deserialize, Serialize};

use crate::datahub::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{asr, cda};
use crate::nncore::models::SmallConvNet;
use crate::nncore::prune::prune_neurons;
use crate::nncore::tensor::Tensor;
use crate::nncore::train::{train_classifier, TrainConfig};
use crate::poisonkit::filter::PoisonFilter;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneCurvePoint {
    pub fraction: f64,
    pub cda: f64,
    pub asr: f64,
}

/// For each ascending fraction: prune, fine-tune on `clean_data`
/// (typically 2 epochs), then score CDA and ASR on `test_set`.
pub fn prune_defense_eval(
    model: &SmallConvNet,
    clean_data: &LabeledDataset,
    test_set: &LabeledDataset,
    filter: &PoisonFilter,
    fractions: &[f64],
    finetune: &TrainConfig,
) -> Result<Vec<PruneCurvePoint>> {
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("fractions must be sorted ascending"));
    }
    let ranking_images: Vec<Tensor> = (0..clean_data.len()).map(|i| clean_data.image(i)).collect();
    let mut curve = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut pruned = prune_neurons(model, &ranking_images, fraction)?;
        if finetune.epochs > 0 {
            train_classifier(&mut pruned, clean_data, finetune)?;
        }
        curve.push(PruneCurvePoint {
            fraction,
            cda: cda(&pruned, test_set)?,
            asr: asr(&pruned, test_set, filter)?,
        });
    }
    Ok(curve)
}
