//! Frequency-domain defenses, the attacker's augmentation counter-attack,
//! and the evaluation defenses (STRIP, heatmap-distance detection,
//! fine-pruning sweeps).

pub mod augment;
pub mod detector;
pub mod jpeg;
pub mod prunedef;
pub mod strip;

pub use augment::{augment_train, AugmentSpec};
pub use detector::{heatmap_detect, heatmap_distance, DetectorVerdict};
pub use jpeg::{jpeg_roundtrip, quality_for_compression_percent, CompressionCodec};
pub use prunedef::{prune_defense_eval, PruneCurvePoint};
pub use strip::{strip_entropies, strip_scan, StripReport};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nncore::models::{Classifier, ConvAutoencoder};
use crate::nncore::tensor::Tensor;
use crate::poisonkit::filter::PoisonFilter;

/// Pass an image through a trained autoencoder; output clamped by the
/// model's sigmoid.
pub fn ae_defend(ae: &ConvAutoencoder, image: &Tensor) -> Result<Tensor> {
    ae.reconstruct(image)
}

/// An input-side defense applied before the classifier sees anything.
#[derive(Clone, Copy)]
pub enum Defense<'a> {
    None,
    Jpeg { quality: u8 },
    Autoencoder(&'a ConvAutoencoder),
    JpegThenAutoencoder { quality: u8, ae: &'a ConvAutoencoder },
}

impl Defense<'_> {
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        match self {
            Defense::None => Ok(image.clone()),
            Defense::Jpeg { quality } => jpeg_roundtrip(image, *quality),
            Defense::Autoencoder(ae) => ae_defend(ae, image),
            Defense::JpegThenAutoencoder { quality, ae } => {
                ae_defend(ae, &jpeg_roundtrip(image, *quality)?)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Defense::None => "none".into(),
            Defense::Jpeg { quality } => format!("jpeg-q{quality}"),
            Defense::Autoencoder(_) => "autoencoder".into(),
            Defense::JpegThenAutoencoder { quality, .. } => format!("jpeg-q{quality}+autoencoder"),
        }
    }
}

/// CDA and ASR of `model` when every input first passes the defense.
/// Poisoned inputs are quantized before the defense sees them, like any
/// shipped image.
pub fn evaluate_defense<M: Classifier + ?Sized>(
    model: &M,
    test_set: &crate::datahub::LabeledDataset,
    filter: &PoisonFilter,
    defense: &Defense<'_>,
) -> Result<(f64, f64)> {
    if test_set.is_empty() {
        return Err(Error::config("defense evaluation needs a non-empty test set"));
    }
    let clean: Vec<Tensor> = (0..test_set.len())
        .into_par_iter()
        .map(|i| defense.apply(&test_set.image(i)))
        .collect::<Result<_>>()?;
    let preds = model.predict_batch(&clean);
    let hits = preds.iter().enumerate().filter(|(i, &p)| p == test_set.label(*i)).count();
    let cda = 100.0 * hits as f64 / test_set.len() as f64;

    let eligible: Vec<usize> =
        (0..test_set.len()).filter(|&i| test_set.label(i) != filter.target as usize).collect();
    let poisoned: Vec<Tensor> = eligible
        .par_iter()
        .map(|&i| defense.apply(&filter.poison_image(&test_set.image(i))?.quantize_u8()))
        .collect::<Result<_>>()?;
    let preds = model.predict_batch(&poisoned);
    let wins = preds.iter().filter(|&&p| p == filter.target as usize).count();
    let asr = 100.0 * wins as f64 / eligible.len() as f64;
    Ok((cda, asr))
}

/// CSV rows `(defense, parameter, CDA, ASR)` for a defense sweep.
pub fn sweep_csv(rows: &[(String, String, f64, f64)]) -> String {
    let mut out = String::from("defense,parameter,cda,asr\n");
    for (d, p, c, a) in rows {
        out.push_str(&format!("{d},{p},{c:.4},{a:.4}\n"));
    }
    out
}
