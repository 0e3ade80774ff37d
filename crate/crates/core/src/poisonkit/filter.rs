//! Spectral poisoning filters: a binary mask selecting frequency bins and
//! per-channel additive values written into them.
//!
//! The poisoning step per channel is
//! `S := invdft(dft(S) ⊙ (1 - M) + A)`:
//! selected bins lose their content and take the filter's value instead.
//! Additive masks are conjugate-symmetric by construction so poisoned
//! images stay real.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{validate_selection, FrequencySelection};
use crate::nncore::tensor::Tensor;
use crate::poisonkit::calibrate::CalibrationRecord;
use crate::spectral::{conjugate_mirror, dft2, idft2, is_self_conjugate, C64};

/// How the three per-channel magnitudes relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskValues {
    /// One shared scale with fixed per-channel ratios (the default).
    #[default]
    Distinct,
    /// Seeded random per-channel values.
    Random,
    /// The same value in every channel.
    Uniform,
}

/// A complete poisoning filter. Serializable as JSON; that file is the
/// interchange format for cross-model attacks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonFilter {
    pub h: usize,
    pub w: usize,
    /// Canonical indices; the binary mask sets each and its mirror.
    pub selection: FrequencySelection,
    /// Additive magnitudes per channel (R, G, B).
    pub magnitudes: [f64; 3],
    /// Phase (radians) of the additive value at the canonical bin;
    /// self-conjugate bins stay real regardless.
    pub phase: f64,
    pub target: u8,
    pub mask_values: MaskValues,
    /// True when every magnitude is zero: the filter only flips labels.
    pub label_flip_only: bool,
    pub calibration: Option<CalibrationRecord>,
    pub id: String,
}

/// Expand canonical indices into a binary mask with both mirrors set.
pub fn binary_mask(selection: &FrequencySelection) -> Vec<bool> {
    let (h, w) = (selection.h, selection.w);
    let mut mask = vec![false; h * w];
    for &(i, j) in &selection.indices {
        mask[i * w + j] = true;
        let (mi, mj) = conjugate_mirror(i, j, h, w);
        mask[mi * w + mj] = true;
    }
    mask
}

/// Build a filter from a frequency selection and per-channel magnitudes.
pub fn build_filter(
    selection: &FrequencySelection,
    magnitudes: [f64; 3],
    target: u8,
    mask_values: MaskValues,
) -> Result<PoisonFilter> {
    validate_selection(selection)?;
    if magnitudes.iter().any(|m| !m.is_finite()) {
        return Err(Error::config("magnitudes must be finite"));
    }
    let label_flip_only = magnitudes.iter().all(|&m| m == 0.0);
    let id = format!(
        "filter-{}x{}-k{}-t{}-m{:.5}_{:.5}_{:.5}",
        selection.h,
        selection.w,
        selection.indices.len(),
        target,
        magnitudes[0],
        magnitudes[1],
        magnitudes[2]
    );
    Ok(PoisonFilter {
        h: selection.h,
        w: selection.w,
        selection: selection.clone(),
        magnitudes,
        phase: 0.0,
        target,
        mask_values,
        label_flip_only,
        calibration: None,
        id,
    })
}

/// Per-channel magnitudes for the given value scheme at a common scale.
pub fn magnitudes_for(scheme: MaskValues, scale: f64, ratios: [f64; 3], seed: u64) -> [f64; 3] {
    match scheme {
        MaskValues::Distinct => [scale * ratios[0], scale * ratios[1], scale * ratios[2]],
        MaskValues::Uniform => [scale, scale, scale],
        MaskValues::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            [
                scale * rng.gen_range(0.5..1.5),
                scale * rng.gen_range(0.5..1.5),
                scale * rng.gen_range(0.5..1.5),
            ]
        }
    }
}

impl PoisonFilter {
    /// The additive value written at a canonical bin for channel `ch`.
    pub fn additive_value(&self, i: usize, j: usize, ch: usize) -> C64 {
        let a = self.magnitudes[ch];
        if is_self_conjugate(i, j, self.h, self.w) {
            C64::new(a, 0.0)
        } else {
            C64::new(a * self.phase.cos(), a * self.phase.sin())
        }
    }

    /// Poison one image, returning the unclamped result and the maximum
    /// imaginary residual of the inverse transform.
    pub fn poison_image_raw(&self, image: &Tensor) -> Result<(Tensor, f64)> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != 3 || shape[1] != self.h || shape[2] != self.w {
            return Err(Error::dimension(format!(
                "image shape {shape:?} does not match filter grid 3x{}x{}",
                self.h, self.w
            )));
        }
        let plane = self.h * self.w;
        let mut out = Vec::with_capacity(3 * plane);
        let mut residual = 0.0f64;
        for ch in 0..3 {
            let mut spec = dft2(&image.data()[ch * plane..(ch + 1) * plane], self.h, self.w);
            for &(i, j) in &self.selection.indices {
                let v = self.additive_value(i, j, ch);
                spec.set(i, j, v);
                let (mi, mj) = conjugate_mirror(i, j, self.h, self.w);
                if (mi, mj) != (i, j) {
                    spec.set(mi, mj, v.conj());
                }
            }
            let (real, res) = idft2(&spec);
            residual = residual.max(res);
            out.extend_from_slice(&real);
        }
        Ok((Tensor::from_vec(shape, out)?, residual))
    }

    /// Poison one image: spectral rewrite, inverse transform, clamp.
    pub fn poison_image(&self, image: &Tensor) -> Result<Tensor> {
        let (mut t, _res) = self.poison_image_raw(image)?;
        t.clamp01();
        Ok(t)
    }
}

/// A shared top-k selection split across several target classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiTargetFilter {
    pub shared: FrequencySelection,
    /// One poisoning filter per target class, over disjoint index parts.
    pub per_class: Vec<PoisonFilter>,
}

/// Randomly and equally divide `selection` among `targets`, one part per
/// class; part sizes differ by at most one. Magnitudes are filled in by
/// the caller (typically via calibration on each part).
pub fn partition_multitarget(
    selection: &FrequencySelection,
    targets: &[u8],
    seed: u64,
) -> Result<Vec<FrequencySelection>> {
    if targets.is_empty() {
        return Err(Error::config("need at least one target class"));
    }
    if targets.len() > selection.indices.len() {
        return Err(Error::config(format!(
            "{} classes cannot share {} indices",
            targets.len(),
            selection.indices.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = selection.indices.clone();
    for k in (1..pool.len()).rev() {
        let j = rng.gen_range(0..=k);
        pool.swap(k, j);
    }
    let mut parts: Vec<FrequencySelection> = targets
        .iter()
        .map(|_| FrequencySelection {
            h: selection.h,
            w: selection.w,
            indices: Vec::new(),
            scheme: selection.scheme.clone(),
            source_heatmap: selection.source_heatmap.clone(),
        })
        .collect();
    for (n, ij) in pool.into_iter().enumerate() {
        parts[n % targets.len()].indices.push(ij);
    }
    for part in &mut parts {
        part.indices.sort_unstable();
    }
    Ok(parts)
}
