//! Training-set poisoning: pick victims, rewrite their pixels through the
//! filter, relabel them to the target class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datahub::LabeledDataset;
use crate::error::{Error, Result};
use crate::nncore::tensor::Tensor;
use crate::poisonkit::filter::PoisonFilter;

/// A poisoned copy of a base dataset plus its bookkeeping.
#[derive(Debug, Clone)]
pub struct PoisonedDataset {
    pub data: LabeledDataset,
    pub poisoned_indices: Vec<usize>,
    pub rate: f64,
    pub filter_id: String,
    pub target: u8,
}

impl PoisonedDataset {
    pub fn save(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        crate::datahub::save_poisoned(
            dir,
            &self.data,
            &self.poisoned_indices,
            self.rate,
            &self.filter_id,
            self.target,
        )
    }

    pub fn load(dir: impl AsRef<std::path::Path>) -> Result<Self> {
        let (data, manifest) = crate::datahub::load_poisoned(dir)?;
        Ok(PoisonedDataset {
            data,
            poisoned_indices: manifest.poisoned_indices,
            rate: manifest.rate,
            filter_id: manifest.filter_id,
            target: manifest.target,
        })
    }
}

/// Poison `floor(rate * N)` samples drawn uniformly (seeded, without
/// replacement) from the classes other than the filter's target. Poisoned
/// pixels are clamped and 8-bit quantized on storage; labels move to the
/// target class.
pub fn poison_dataset(
    data: &LabeledDataset,
    rate: f64,
    filter: &PoisonFilter,
    seed: u64,
) -> Result<PoisonedDataset> {
    poison_dataset_excluding(data, rate, filter, seed, &[])
}

/// As [`poison_dataset`] but never selects indices in `exclude` (used by
/// the multi-target variant so class sets stay disjoint).
pub fn poison_dataset_excluding(
    data: &LabeledDataset,
    rate: f64,
    filter: &PoisonFilter,
    seed: u64,
    exclude: &[usize],
) -> Result<PoisonedDataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!("poisoning rate {rate} outside [0, 1]")));
    }
    let count = (rate * data.len() as f64).floor() as usize;
    let excluded: std::collections::HashSet<usize> = exclude.iter().cloned().collect();
    let mut eligible: Vec<usize> = (0..data.len())
        .filter(|&i| data.label(i) != filter.target as usize && !excluded.contains(&i))
        .collect();
    if count > eligible.len() {
        return Err(Error::config(format!(
            "rate {rate} asks for {count} samples but only {} non-target samples are available",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..count {
        let j = rng.gen_range(k..eligible.len());
        eligible.swap(k, j);
    }
    let mut chosen = eligible[..count].to_vec();
    chosen.sort_unstable();

    let poisoned_images: Vec<Tensor> = chosen
        .par_iter()
        .map(|&i| filter.poison_image(&data.image(i)))
        .collect::<Result<_>>()?;

    let mut out = data.clone();
    for (&i, img) in chosen.iter().zip(&poisoned_images) {
        out.overwrite(i, img, filter.target);
    }
    out.id = format!("{}-poisoned-r{:.4}-t{}-s{}", data.id, rate, filter.target, seed);
    Ok(PoisonedDataset {
        data: out,
        poisoned_indices: chosen,
        rate,
        filter_id: filter.id.clone(),
        target: filter.target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{generate_synthetic, SyntheticSpec};
    use crate::heatmap::{FrequencySelection, SelectionScheme};
    use crate::poisonkit::filter::{build_filter, MaskValues};

    fn filter(target: u8) -> PoisonFilter {
        let sel = FrequencySelection {
            h: 16,
            w: 16,
            indices: vec![(4, 6), (3, 9)],
            scheme: SelectionScheme::TopK { k: 2 },
            source_heatmap: "t".into(),
        };
        build_filter(&sel, [0.05, 0.045, 0.055], target, MaskValues::Distinct).unwrap()
    }

    fn base() -> LabeledDataset {
        generate_synthetic(&SyntheticSpec::new(4, 25, 16, 16, 11)).unwrap()
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let data = base();
        let p = poison_dataset(&data, 0.0, &filter(0), 1).unwrap();
        assert!(p.poisoned_indices.is_empty());
        assert_eq!(p.data.pixel_bytes(), data.pixel_bytes());
        assert_eq!(p.data.labels(), data.labels());
    }

    #[test]
    fn poison_count_labels_and_provenance() {
        let data = base(); // 100 samples, 25 per class
        let f = filter(2);
        let p = poison_dataset(&data, 0.08, &f, 7).unwrap();
        assert_eq!(p.poisoned_indices.len(), 8);
        for &i in &p.poisoned_indices {
            assert_eq!(p.data.label(i), 2);
            assert_ne!(data.label(i), 2, "victims come from non-target classes");
            assert_ne!(p.data.image_bytes(i), data.image_bytes(i));
        }
        // untouched samples are bit-identical
        for i in 0..data.len() {
            if !p.poisoned_indices.contains(&i) {
                assert_eq!(p.data.image_bytes(i), data.image_bytes(i));
                assert_eq!(p.data.label(i), data.label(i));
            }
        }
    }

    #[test]
    fn selection_is_seeded() {
        let data = base();
        let f = filter(1);
        let a = poison_dataset(&data, 0.1, &f, 42).unwrap();
        let b = poison_dataset(&data, 0.1, &f, 42).unwrap();
        let c = poison_dataset(&data, 0.1, &f, 43).unwrap();
        assert_eq!(a.poisoned_indices, b.poisoned_indices);
        assert_ne!(a.poisoned_indices, c.poisoned_indices);
    }

    #[test]
    fn rate_beyond_non_target_fraction_is_rejected() {
        let data = base(); // 75 non-target samples for any target
        assert!(poison_dataset(&data, 0.80, &filter(0), 1).is_err());
        assert!(poison_dataset(&data, 1.5, &filter(0), 1).is_err());
    }

    #[test]
    fn exclusions_are_respected() {
        let data = base();
        let f = filter(0);
        let first = poison_dataset(&data, 0.1, &f, 5).unwrap();
        let second =
            poison_dataset_excluding(&data, 0.1, &f, 5, &first.poisoned_indices).unwrap();
        for i in &second.poisoned_indices {
            assert!(!first.poisoned_indices.contains(i));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let data = base();
        let f = filter(3);
        let p = poison_dataset(&data, 0.05, &f, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let back = PoisonedDataset::load(dir.path()).unwrap();
        assert_eq!(back.data.pixel_bytes(), p.data.pixel_bytes());
        assert_eq!(back.poisoned_indices, p.poisoned_indices);
        assert_eq!(back.target, 3);
    }
}
