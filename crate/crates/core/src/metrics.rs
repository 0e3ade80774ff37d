//! Attack and defense scoring.
//!
//! CDA and ASR are percentages in `[0, 100]`. PSNR assumes a dynamic
//! range of 1.0 (images live in `[0, 1]`) and returns `f64::INFINITY` for
//! identical inputs. SSIM follows the standard 11x11 Gaussian window,
//! sigma 1.5, K1 = 0.01, K2 = 0.03, scored over the valid (fully
//! windowed) region and averaged across channels.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datahub::LabeledDataset;
use crate::error::{Error, Result};
use crate::nncore::models::Classifier;
use crate::nncore::tensor::Tensor;
use crate::poisonkit::filter::PoisonFilter;

/// Scores for one trained model / attack combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Clean data accuracy, percent.
    pub cda: f64,
    /// Attack success rate, percent.
    pub asr: f64,
    /// Mean PSNR over poisoned pairs, dB.
    pub psnr_db: f64,
    /// Mean SSIM over poisoned pairs.
    pub ssim: f64,
    /// Mean l2 norm of the poison perturbation.
    pub mean_l2: f64,
    /// Scale used for difference renders.
    pub gamma: f64,
    pub config_hash: String,
    /// Artifact ids keyed by role (clean_model, filter, ...).
    pub artifacts: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.cda) || !(0.0..=100.0).contains(&self.asr) {
            return Err(Error::config("cda/asr must lie in [0, 100]"));
        }
        if !(-1.0..=1.0).contains(&self.ssim) {
            return Err(Error::config("ssim must lie in [-1, 1]"));
        }
        if !(self.psnr_db > 0.0) {
            return Err(Error::config("psnr must be positive"));
        }
        Ok(())
    }
}

/// Top-1 accuracy of `model` on `clean_test`, times 100.
pub fn cda<M: Classifier + ?Sized>(model: &M, clean_test: &LabeledDataset) -> Result<f64> {
    if clean_test.is_empty() {
        return Err(Error::config("cda needs a non-empty test set"));
    }
    let images: Vec<Tensor> = (0..clean_test.len()).map(|i| clean_test.image(i)).collect();
    let preds = model.predict_batch(&images);
    let hits = preds.iter().enumerate().filter(|(i, &p)| p == clean_test.label(*i)).count();
    Ok(100.0 * hits as f64 / clean_test.len() as f64)
}

/// Attack success rate: poison every test sample whose true label differs
/// from the filter's target, count the fraction now predicted as the
/// target, times 100. Poisoned pixels are 8-bit quantized, as a shipped
/// image would be.
pub fn asr<M: Classifier + ?Sized>(
    model: &M,
    clean_test: &LabeledDataset,
    filter: &PoisonFilter,
) -> Result<f64> {
    let eligible: Vec<usize> =
        (0..clean_test.len()).filter(|&i| clean_test.label(i) != filter.target as usize).collect();
    if eligible.is_empty() {
        return Err(Error::config("asr needs samples outside the target class"));
    }
    let poisoned: Vec<Tensor> = eligible
        .par_iter()
        .map(|&i| filter.poison_image(&clean_test.image(i)).map(|t| t.quantize_u8()))
        .collect::<Result<_>>()?;
    let preds = model.predict_batch(&poisoned);
    let hits = preds.iter().filter(|&&p| p == filter.target as usize).count();
    Ok(100.0 * hits as f64 / eligible.len() as f64)
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for unit dynamic range;
/// `f64::INFINITY` when the inputs are identical.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Structural similarity, channel-averaged over the valid window region.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let shape = a.shape();
    if shape.len() != 3 {
        return Err(Error::dimension("ssim expects C x H x W inputs"));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let (vh, vw) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);

    // separable Gaussian filter, valid region only
    let filter = |src: &[f64]| -> Vec<f64> {
        let mut rows = vec![0.0; h * vw];
        for y in 0..h {
            for x in 0..vw {
                let mut acc = 0.0;
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * src[y * w + x + t];
                }
                rows[y * vw + x] = acc;
            }
        }
        let mut out = vec![0.0; vh * vw];
        for y in 0..vh {
            for x in 0..vw {
                let mut acc = 0.0;
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * rows[(y + t) * vw + x];
                }
                out[y * vw + x] = acc;
            }
        }
        out
    };

    let mut total = 0.0;
    for ch in 0..c {
        let x = &a.data()[ch * h * w..(ch + 1) * h * w];
        let y = &b.data()[ch * h * w..(ch + 1) * h * w];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mu_x = filter(x);
        let mu_y = filter(y);
        let m_xx = filter(&xx);
        let m_yy = filter(&yy);
        let m_xy = filter(&xy);
        let mut acc = 0.0;
        for i in 0..vh * vw {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = m_xx[i] - mx * mx;
            let var_y = m_yy[i] - my * my;
            let cov = m_xy[i] - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        }
        total += acc / (vh * vw) as f64;
    }
    Ok(total / c as f64)
}

/// Mean PSNR / SSIM / l2 over aligned image pairs.
pub fn batch_image_metrics(clean: &[Tensor], poisoned: &[Tensor]) -> Result<(f64, f64, f64)> {
    if clean.len() != poisoned.len() || clean.is_empty() {
        return Err(Error::config("need equal non-empty image lists"));
    }
    let stats: Vec<(f64, f64, f64)> = clean
        .par_iter()
        .zip(poisoned)
        .map(|(a, b)| Ok((psnr(a, b)?, ssim(a, b)?, a.l2_distance(b))))
        .collect::<Result<_>>()?;
    let n = stats.len() as f64;
    Ok((
        stats.iter().map(|s| s.0).sum::<f64>() / n,
        stats.iter().map(|s| s.1).sum::<f64>() / n,
        stats.iter().map(|s| s.2).sum::<f64>() / n,
    ))
}

/// `gamma * |clean - poisoned|`, clamped to `[0, 1]`.
pub fn scaled_diff(clean: &Tensor, poisoned: &Tensor, gamma: f64) -> Result<Tensor> {
    check_same_shape(clean, poisoned)?;
    if !(gamma > 0.0) {
        return Err(Error::config("gamma must be > 0"));
    }
    let data = clean
        .data()
        .iter()
        .zip(poisoned.data())
        .map(|(a, b)| (gamma * (a - b).abs()).clamp(0.0, 1.0))
        .collect();
    Tensor::from_vec(clean.shape(), data)
}

/// Binary PPM (P6) export of a `[0,1]` C x H x W image (C = 1 or 3).
pub fn write_ppm(path: impl AsRef<std::path::Path>, image: &Tensor) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || (shape[0] != 1 && shape[0] != 3) {
        return Err(Error::dimension("ppm export expects 1 or 3 channels"));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = image.data()[(ch % c) * h * w + y * w + x];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Plain-text table with one row per report, plus a CSV twin.
pub fn render_table(rows: &[(String, ExperimentReport)]) -> (String, String) {
    let mut text = format!(
        "{:<24} {:>8} {:>8} {:>10} {:>8} {:>9}\n",
        "run", "CDA%", "ASR%", "PSNR(dB)", "SSIM", "mean-l2"
    );
    let mut csv = String::from("run,cda,asr,psnr_db,ssim,mean_l2\n");
    for (name, r) in rows {
        text.push_str(&format!(
            "{:<24} {:>8.2} {:>8.2} {:>10.2} {:>8.4} {:>9.4}\n",
            name, r.cda, r.asr, r.psnr_db, r.ssim, r.mean_l2
        ));
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.6},{:.6}\n",
            name, r.cda, r.asr, r.psnr_db, r.ssim, r.mean_l2
        ));
    }
    (text, csv)
}
