//! Invisibility calibration: pick the largest magnitude scale whose
//! poisoned images stay within the mean-l2 budget and above the PSNR
//! floor over a calibration sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::FrequencySelection;
use crate::metrics::{psnr, ssim};
use crate::nncore::tensor::Tensor;
use crate::poisonkit::filter::{build_filter, magnitudes_for, MaskValues};

/// Fixed per-channel ratios for the `distinct` value scheme (R, G, B).
pub const DEFAULT_RATIOS: [f64; 3] = [1.0, 0.9, 1.1];

const BISECT_REL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub delta_p: f64,
    pub psnr_floor: f64,
    pub achieved_mean_l2: f64,
    pub achieved_mean_psnr: f64,
    pub achieved_mean_ssim: f64,
    /// The bisected common scale; per-channel magnitudes are this scale
    /// times the ratios.
    pub scale: f64,
    pub ratios: [f64; 3],
    pub sample_size: usize,
}

fn evaluate(
    selection: &FrequencySelection,
    sample: &[Tensor],
    scale: f64,
    ratios: [f64; 3],
    scheme: MaskValues,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let mags = magnitudes_for(scheme, scale, ratios, seed);
    let filter = build_filter(selection, mags, 0, scheme)?;
    let stats: Vec<(f64, f64, f64)> = sample
        .par_iter()
        .map(|img| {
            let poisoned = filter.poison_image(img)?;
            Ok((img.l2_distance(&poisoned), psnr(img, &poisoned)?, ssim(img, &poisoned)?))
        })
        .collect::<Result<_>>()?;
    let n = stats.len() as f64;
    Ok((
        stats.iter().map(|s| s.0).sum::<f64>() / n,
        stats.iter().map(|s| s.1).sum::<f64>() / n,
        stats.iter().map(|s| s.2).sum::<f64>() / n,
    ))
}

/// Bisect the largest magnitude scale such that the mean l2 perturbation
/// stays at or below `delta_p` and the mean PSNR at or above
/// `psnr_floor`. Returns per-channel magnitudes and the record.
pub fn calibrate_magnitudes(
    selection: &FrequencySelection,
    sample: &[Tensor],
    delta_p: f64,
    psnr_floor: f64,
    scheme: MaskValues,
    value_seed: u64,
) -> Result<([f64; 3], CalibrationRecord)> {
    calibrate_magnitudes_with_ssim(selection, sample, delta_p, psnr_floor, 0.0, scheme, value_seed)
}

/// As [`calibrate_magnitudes`] with a third constraint: the mean SSIM of
/// the poisoned sample must stay at or above `ssim_floor`.
pub fn calibrate_magnitudes_with_ssim(
    selection: &FrequencySelection,
    sample: &[Tensor],
    delta_p: f64,
    psnr_floor: f64,
    ssim_floor: f64,
    scheme: MaskValues,
    value_seed: u64,
) -> Result<([f64; 3], CalibrationRecord)> {
    if sample.is_empty() {
        return Err(Error::config("calibration needs at least one sample image"));
    }
    let ratios = DEFAULT_RATIOS;
    let finish = |scale: f64| -> Result<([f64; 3], CalibrationRecord)> {
        let (l2, p, s) = evaluate(selection, sample, scale, ratios, scheme, value_seed)?;
        let mags = magnitudes_for(scheme, scale, ratios, value_seed);
        Ok((
            mags,
            CalibrationRecord {
                delta_p,
                psnr_floor,
                achieved_mean_l2: l2,
                achieved_mean_psnr: p,
                achieved_mean_ssim: s,
                scale,
                ratios,
                sample_size: sample.len(),
            },
        ))
    };

    if delta_p == 0.0 {
        return finish(0.0);
    }

    let ok = |scale: f64| -> Result<bool> {
        let (l2, p, s) = evaluate(selection, sample, scale, ratios, scheme, value_seed)?;
        Ok(l2 <= delta_p && p >= psnr_floor && s >= ssim_floor)
    };

    // the floor at scale 0 is the content erased from the selected bins;
    // if even that violates the constraints no magnitude can help
    if !ok(0.0)? {
        return Err(Error::Calibration(format!(
            "selection of {} bins erases more signal than the budget allows \
             (delta_p {delta_p}, psnr floor {psnr_floor}, ssim floor {ssim_floor}); \
             use a smaller k",
            selection.indices.len()
        )));
    }

    // expand until violated, then bisect
    let mut lo = 0.0f64;
    let mut hi = (delta_p / (selection.indices.len().max(1) as f64).sqrt()).max(1e-6);
    let mut expansions = 0;
    while ok(hi)? {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            break; // constraints unreachable from above; lo is huge already
        }
    }
    while (hi - lo) / hi.max(1e-300) > BISECT_REL {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    finish(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{generate_synthetic, SyntheticSpec};
    use crate::heatmap::SelectionScheme;

    fn selection(indices: Vec<(usize, usize)>, h: usize, w: usize) -> FrequencySelection {
        FrequencySelection {
            h,
            w,
            indices,
            scheme: SelectionScheme::TopK { k: 0 },
            source_heatmap: "test".into(),
        }
    }

    #[test]
    fn zero_budget_gives_zero_magnitudes() {
        let sel = selection(vec![(3, 5)], 16, 16);
        let gray = Tensor::from_vec(&[3, 16, 16], vec![0.5; 768]).unwrap();
        let (mags, rec) =
            calibrate_magnitudes(&sel, &[gray], 0.0, 0.0, MaskValues::Distinct, 0).unwrap();
        assert_eq!(mags, [0.0, 0.0, 0.0]);
        assert_eq!(rec.scale, 0.0);
    }

    #[test]
    fn single_bin_constant_images_recover_the_closed_form() {
        // uniform scheme, one non-DC mirror pair, constant images:
        // mean l2 = sqrt(3 channels) * sqrt(2) * a, so the PSNR-less
        // calibration lands at a = delta_p / sqrt(6)
        let (h, w) = (16, 16);
        let sel = selection(vec![(5, 7)], h, w);
        let gray = Tensor::from_vec(&[3, h, w], vec![0.5; 3 * h * w]).unwrap();
        let delta_p = 0.3;
        let (mags, rec) =
            calibrate_magnitudes(&sel, &[gray], delta_p, 0.0, MaskValues::Uniform, 0).unwrap();
        let expect = delta_p / 6.0f64.sqrt();
        assert!(
            (mags[0] - expect).abs() / expect < 1e-3,
            "calibrated {} vs closed form {expect}",
            mags[0]
        );
        assert!(rec.achieved_mean_l2 <= delta_p);
        assert!((rec.achieved_mean_l2 - delta_p).abs() / delta_p < 1e-3);
    }

    #[test]
    fn calibrated_filters_respect_both_budgets() {
        let data = generate_synthetic(&SyntheticSpec::new(4, 8, 32, 32, 6)).unwrap();
        let sample: Vec<Tensor> = (0..32).map(|i| data.image(i)).collect();
        // a mid-band ring past the generator's texture band
        let idx: Vec<(usize, usize)> = crate::spectral::canonical_indices(32, 32)
            .into_iter()
            .filter(|&(i, j)| {
                let (ci, cj) = (16.0, 16.0);
                let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
                (10.0..12.0).contains(&d)
            })
            .take(8)
            .collect();
        let sel = selection(idx, 32, 32);
        let (mags, rec) =
            calibrate_magnitudes(&sel, &sample, 1.0, 40.0, MaskValues::Distinct, 0).unwrap();
        assert!(rec.achieved_mean_l2 <= 1.0, "l2 {}", rec.achieved_mean_l2);
        assert!(rec.achieved_mean_psnr >= 40.0, "psnr {}", rec.achieved_mean_psnr);
        assert!(mags[0] > 0.0);
        // distinct ratios preserved
        assert!((mags[1] / mags[0] - 0.9).abs() < 1e-9);
        assert!((mags[2] / mags[0] - 1.1).abs() < 1e-9);
    }

    #[test]
    fn impossible_floor_reports_calibration_error() {
        // selecting the DC bin erases the image mean: huge l2 at any
        // magnitude, including zero
        let (h, w) = (16, 16);
        let c = crate::spectral::center(h);
        let sel = selection(vec![(c, c)], h, w);
        let data = generate_synthetic(&SyntheticSpec::new(2, 4, h, w, 3)).unwrap();
        let sample: Vec<Tensor> = (0..4).map(|i| data.image(i)).collect();
        let err = calibrate_magnitudes(&sel, &sample, 0.05, 40.0, MaskValues::Distinct, 0);
        match err {
            Err(Error::Calibration(msg)) => assert!(msg.contains("smaller k")),
            other => panic!("expected calibration error, got {other:?}"),
        }
    }
}
