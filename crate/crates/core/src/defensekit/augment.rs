//! The attacker's counter-measure: train on compressed and/or
//! autoencoded versions of the (poisoned) training images so the backdoor
//! survives input-side preprocessing.

use rayon::prelude::*;

use crate::datahub::LabeledDataset;
use crate::error::Result;
use crate::nncore::models::{ConvAutoencoder, SmallConvNet};
use crate::nncore::tensor::Tensor;
use crate::nncore::train::{train_classifier_with, TrainConfig, TrainHistory};

/// Which augmented versions join every training batch.
#[derive(Debug, Clone, Default)]
pub struct AugmentSpec {
    pub jpeg_quality: Option<u8>,
    pub autoencoder: Option<ConvAutoencoder>,
}

impl AugmentSpec {
    pub fn is_empty(&self) -> bool {
        self.jpeg_quality.is_none() && self.autoencoder.is_none()
    }
}

/// Train a classifier where each batch holds every sample plus its
/// augmented versions (poisoned samples keep their poisoned label).
/// Augmented copies are deterministic, so they are precomputed once and
/// stored 8-bit.
pub fn augment_train(
    model: &mut SmallConvNet,
    poisoned_data: &LabeledDataset,
    cfg: &TrainConfig,
    spec: &AugmentSpec,
) -> Result<TrainHistory> {
    if spec.is_empty() {
        return train_classifier_with(model, poisoned_data, cfg, None);
    }
    let cache: Vec<Vec<Vec<u8>>> = (0..poisoned_data.len())
        .into_par_iter()
        .map(|i| {
            let img = poisoned_data.image(i);
            let mut versions = Vec::new();
            if let Some(q) = spec.jpeg_quality {
                versions.push(crate::defensekit::jpeg::jpeg_roundtrip(&img, q)?.to_u8_bytes());
            }
            if let Some(ae) = &spec.autoencoder {
                versions.push(ae.reconstruct(&img)?.to_u8_bytes());
            }
            Ok(versions)
        })
        .collect::<Result<_>>()?;
    let shape = [3, poisoned_data.h, poisoned_data.w];
    let hook = move |i: usize, _img: &Tensor| -> Vec<Tensor> {
        cache[i]
            .iter()
            .map(|bytes| Tensor::from_u8_bytes(&shape, bytes).expect("cached shape"))
            .collect()
    };
    train_classifier_with(model, poisoned_data, cfg, Some(&hook))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{generate_synthetic, SyntheticSpec};
    use crate::nncore::train::train_classifier;

    #[test]
    fn empty_augmentation_equals_plain_training() {
        let data = generate_synthetic(&SyntheticSpec::new(3, 12, 16, 16, 4)).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 8, lr: 0.02, seed: 6, ..Default::default() };
        let mut a = SmallConvNet::new(16, 16, 3, 9).unwrap();
        let mut b = SmallConvNet::new(16, 16, 3, 9).unwrap();
        augment_train(&mut a, &data, &cfg, &AugmentSpec::default()).unwrap();
        train_classifier(&mut b, &data, &cfg).unwrap();
        for (x, y) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn jpeg_augmentation_changes_the_run_and_counts_copies() {
        let data = generate_synthetic(&SyntheticSpec::new(3, 12, 16, 16, 4)).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 8, lr: 0.02, seed: 6, ..Default::default() };
        let spec = AugmentSpec { jpeg_quality: Some(80), autoencoder: None };
        let mut a = SmallConvNet::new(16, 16, 3, 9).unwrap();
        let hist = augment_train(&mut a, &data, &cfg, &spec).unwrap();
        // loss averaging counts original + jpeg copy per sample; weights differ
        let mut b = SmallConvNet::new(16, 16, 3, 9).unwrap();
        train_classifier(&mut b, &data, &cfg).unwrap();
        assert!(a.params().iter().zip(b.params().iter()).any(|(x, y)| x != y));
        assert_eq!(hist.len(), 1);
    }
}
