//! Dataset ingestion and persistence.
//!
//! Images are stored 8-bit at rest (`N x C x H x W` raw bytes) and exposed
//! as `[0, 1]` tensors on access via exactly `v / 255`. Besides the
//! CIFAR-10 binary reader there is a synthetic "blobs + gratings"
//! generator for environments where CIFAR-10 is not available.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::tensor::Tensor;

pub const CIFAR_CLASSES: usize = 10;
const CIFAR_HW: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_HW * CIFAR_HW;
const CIFAR_PER_FILE: usize = 10_000;

/// A labeled image dataset, 8-bit pixels at rest.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    /// Provenance id, e.g. `cifar10-train` or `synthetic-c10-s7`.
    pub id: String,
}

impl LabeledDataset {
    pub fn new(
        pixels: Vec<u8>,
        labels: Vec<u8>,
        classes: usize,
        h: usize,
        w: usize,
        id: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        if pixels.len() != labels.len() * 3 * h * w {
            return Err(Error::format(format!(
                "pixel buffer holds {} bytes, expected {} for {} samples of 3x{}x{}",
                pixels.len(),
                labels.len() * 3 * h * w,
                labels.len(),
                h,
                w
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::config(format!("label {bad} out of range [0, {classes})")));
        }
        Ok(LabeledDataset { pixels, labels, classes, h, w, id: id.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixel_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let n = 3 * self.h * self.w;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Decode sample `i` to a `[3, H, W]` tensor in `[0, 1]`.
    pub fn image(&self, i: usize) -> Tensor {
        Tensor::from_u8_bytes(&[3, self.h, self.w], self.image_bytes(i)).expect("stored shape")
    }

    pub fn images(&self, indices: &[usize]) -> Vec<Tensor> {
        indices.iter().map(|&i| self.image(i)).collect()
    }

    /// Replace sample `i` in place (8-bit quantized pixels + new label).
    pub fn overwrite(&mut self, i: usize, image: &Tensor, label: u8) {
        let n = 3 * self.h * self.w;
        let bytes = image.to_u8_bytes();
        self.pixels[i * n..(i + 1) * n].copy_from_slice(&bytes);
        self.labels[i] = label;
    }

    /// Per-class sample counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.classes];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }
}

fn read_cifar_file(path: &Path, pixels: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() != CIFAR_PER_FILE * CIFAR_RECORD {
        return Err(Error::format(format!(
            "{}: expected {} bytes, got {} (first bad byte offset {})",
            path.display(),
            CIFAR_PER_FILE * CIFAR_RECORD,
            buf.len(),
            buf.len().min(CIFAR_PER_FILE * CIFAR_RECORD)
        )));
    }
    for rec in buf.chunks_exact(CIFAR_RECORD) {
        let label = rec[0];
        if label as usize >= CIFAR_CLASSES {
            return Err(Error::format(format!(
                "{}: label byte {} out of range",
                path.display(),
                label
            )));
        }
        labels.push(label);
        // channel-planar R,G,B — matches our C x H x W layout directly
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

/// Load the CIFAR-10 binary batches: 50000 train + 10000 test samples.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = dir.as_ref();
    let mut train_px = Vec::with_capacity(5 * CIFAR_PER_FILE * (CIFAR_RECORD - 1));
    let mut train_lb = Vec::with_capacity(5 * CIFAR_PER_FILE);
    for i in 1..=5 {
        read_cifar_file(&dir.join(format!("data_batch_{i}.bin")), &mut train_px, &mut train_lb)?;
    }
    let mut test_px = Vec::new();
    let mut test_lb = Vec::new();
    read_cifar_file(&dir.join("test_batch.bin"), &mut test_px, &mut test_lb)?;
    Ok((
        LabeledDataset::new(train_px, train_lb, CIFAR_CLASSES, CIFAR_HW, CIFAR_HW, "cifar10-train")?,
        LabeledDataset::new(test_px, test_lb, CIFAR_CLASSES, CIFAR_HW, CIFAR_HW, "cifar10-test")?,
    ))
}

/// Seeded stratified subset with `n_per_class` samples of every class.
pub fn subset(data: &LabeledDataset, n_per_class: usize, seed: u64) -> Result<LabeledDataset> {
    let hist = data.class_histogram();
    if let Some((c, &cnt)) = hist.iter().enumerate().find(|(_, &cnt)| cnt < n_per_class) {
        return Err(Error::config(format!(
            "class {c} has only {cnt} samples, need {n_per_class}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for i in 0..data.len() {
        by_class[data.label(i)].push(i);
    }
    let mut chosen = Vec::with_capacity(n_per_class * data.classes);
    for pool in &mut by_class {
        // partial Fisher-Yates: the first n_per_class slots become the sample
        for k in 0..n_per_class {
            let j = rng.gen_range(k..pool.len());
            pool.swap(k, j);
        }
        chosen.extend_from_slice(&pool[..n_per_class]);
    }
    chosen.sort_unstable();
    let mut pixels = Vec::with_capacity(chosen.len() * 3 * data.h * data.w);
    let mut labels = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        pixels.extend_from_slice(data.image_bytes(i));
        labels.push(data.labels[i]);
    }
    LabeledDataset::new(
        pixels,
        labels,
        data.classes,
        data.h,
        data.w,
        format!("{}-sub{}x{}-s{}", data.id, n_per_class, data.classes, seed),
    )
}

/// Parameters of the synthetic "blobs + gratings" generator.
///
/// Each class is a Gaussian blob at a class-specific position carrying a
/// class-oriented ripple texture, plus a weak color tint. Per-image
/// nuisance (brightness jitter, smooth low-frequency waves, a random
/// distractor grating, pixel noise) forces the classifier to rely on
/// mid-frequency structure the way camera-data models do.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub n_per_class: usize,
    pub h: usize,
    pub w: usize,
    pub seed: u64,
    /// Gaussian blob amplitude.
    pub blob_amp: f64,
    /// Class-oriented ripple amplitude (frequency varies per image).
    pub ripple_amp: f64,
    /// Color tint strength (channel ratios on the blob).
    pub tint: f64,
    /// Smooth low-frequency nuisance wave amplitude.
    pub lowfreq_amp: f64,
    /// Mid-low texture wave amplitude (gives windows local variance).
    pub texture_amp: f64,
    /// Distractor grating amplitude (not class-informative).
    pub grating_amp: f64,
    /// Per-pixel Gaussian noise sigma.
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, n_per_class: usize, h: usize, w: usize, seed: u64) -> Self {
        SyntheticSpec {
            classes,
            n_per_class,
            h,
            w,
            seed,
            blob_amp: 0.10,
            ripple_amp: 0.20,
            tint: 0.08,
            lowfreq_amp: 0.10,
            texture_amp: 0.09,
            grating_amp: 0.05,
            noise: 0.03,
        }
    }
}

/// Generate a synthetic labeled dataset per `spec`. Deterministic.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let SyntheticSpec {
        classes,
        n_per_class,
        h,
        w,
        seed,
        blob_amp,
        ripple_amp,
        tint,
        lowfreq_amp,
        texture_amp,
        grating_amp,
        noise,
    } = *spec;
    if classes == 0 || n_per_class == 0 {
        return Err(Error::config("synthetic dataset needs classes >= 1 and n_per_class >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let n = classes * n_per_class;
    let mut pixels = Vec::with_capacity(n * 3 * h * w);
    let mut labels = Vec::with_capacity(n);
    // interleave classes so splits stay balanced under prefixing
    for i in 0..n {
        let c = i % classes;
        labels.push(c as u8);
        let frac = c as f64 / classes as f64;

        // class signal: an oriented mid-frequency ripple patch. Its
        // orientation and patch position are class-bound; the exact
        // frequency varies image to image so no single spectral bin
        // carries the class.
        let angle = tau * frac;
        let r = 0.27 * h.min(w) as f64;
        let py = h as f64 / 2.0 + r * angle.sin() + rng.gen_range(-1.3..1.3);
        let px = w as f64 / 2.0 + r * angle.cos() + rng.gen_range(-1.3..1.3);
        let sigma_w = rng.gen_range(3.0..4.2);
        let theta = std::f64::consts::PI * frac + rng.gen_range(-0.15..0.15);
        let freq = rng.gen_range(0.15..0.26) * h.min(w) as f64;
        let (rfy, rfx) = (freq * theta.sin(), freq * theta.cos());
        let rphase = rng.gen_range(0.0..tau);
        let ramp = ripple_amp * rng.gen_range(0.8..1.0);

        // weak class tint on the ripple patch
        let tints = [
            1.0 + tint * (tau * frac).cos(),
            1.0 + tint * (tau * (frac + 1.0 / 3.0)).cos(),
            1.0 + tint * (tau * (frac + 2.0 / 3.0)).cos(),
        ];

        // nuisance: brightness, two smooth waves, a blob at a random
        // (class-independent) position, a random distractor grating
        let brightness = 0.45 + rng.gen_range(-0.10..0.10);
        let mut waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(0.0..tau),
                    lowfreq_amp * rng.gen_range(0.3..1.0),
                )
            })
            .collect();
        // texture waves sit between the smooth band and the class band:
        // enough local variance for structural metrics, no bin overlap
        // with the frequencies a trained model attends to
        for _ in 0..3 {
            let rho = rng.gen_range(1.5..3.6);
            let phi = rng.gen_range(0.0..tau);
            waves.push((
                rho * phi.sin(),
                rho * phi.cos(),
                rng.gen_range(0.0..tau),
                texture_amp * rng.gen_range(0.5..1.0),
            ));
        }
        let by = rng.gen_range(0.2..0.8) * h as f64;
        let bx = rng.gen_range(0.2..0.8) * w as f64;
        let bsigma = rng.gen_range(2.0..3.0);
        let bamp = blob_amp * rng.gen_range(0.4..1.0);
        let gfy = rng.gen_range(2..(h / 2).max(3)) as f64;
        let gfx = rng.gen_range(0..(w / 2).max(1)) as f64;
        let gphase = rng.gen_range(0.0..tau);
        let gamp = grating_amp * rng.gen_range(0.3..1.0);

        let mut img = vec![0.0f64; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
                let wd2 = ((y as f64 - py).powi(2) + (x as f64 - px).powi(2))
                    / (2.0 * sigma_w * sigma_w);
                let ripple = ramp * (-wd2).exp() * (tau * (rfy * fy + rfx * fx) + rphase).cos();
                let bd2 =
                    ((y as f64 - by).powi(2) + (x as f64 - bx).powi(2)) / (2.0 * bsigma * bsigma);
                let mut nuisance =
                    bamp * (-bd2).exp() + gamp * (tau * (gfy * fy + gfx * fx) + gphase).cos();
                for &(wy, wx, ph, amp) in &waves {
                    nuisance += amp * (tau * (wy * fy + wx * fx) + ph).cos();
                }
                for ch in 0..3 {
                    let v = brightness
                        + tints[ch] * ripple
                        + nuisance
                        + noise * gaussian(&mut rng);
                    img[ch * h * w + y * w + x] = v;
                }
            }
        }
        pixels.extend(img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    LabeledDataset::new(
        pixels,
        labels,
        classes,
        h,
        w,
        format!("synthetic-c{classes}-n{n_per_class}-s{seed}"),
    )
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream simple to reason about.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Train/val/test index split, deterministic under `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// Random split by fractions; `val_frac + test_frac < 1`.
    pub fn random(n: usize, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&(val_frac + test_frac)) {
            return Err(Error::config("val_frac + test_frac must be in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in (1..n).rev() {
            let j = rng.gen_range(0..=k);
            idx.swap(k, j);
        }
        let n_val = (n as f64 * val_frac).floor() as usize;
        let n_test = (n as f64 * test_frac).floor() as usize;
        let val = idx[0..n_val].to_vec();
        let test = idx[n_val..n_val + n_test].to_vec();
        let train = idx[n_val + n_test..].to_vec();
        Ok(SplitSpec { train, val, test, seed })
    }
}

/// Manifest stored next to `pixels.bin` in a poisoned-dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonedManifest {
    pub format_version: u32,
    pub base_id: String,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub classes: usize,
    pub labels: Vec<u8>,
    pub poisoned_indices: Vec<usize>,
    pub rate: f64,
    pub filter_id: String,
    pub target: u8,
}

/// Persist a poisoned dataset: raw `pixels.bin` plus `manifest.json`.
pub fn save_poisoned(
    dir: impl AsRef<Path>,
    data: &LabeledDataset,
    poisoned_indices: &[usize],
    rate: f64,
    filter_id: &str,
    target: u8,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("pixels.bin"), data.pixel_bytes())?;
    let manifest = PoisonedManifest {
        format_version: 1,
        base_id: data.id.clone(),
        n: data.len(),
        h: data.h,
        w: data.w,
        classes: data.classes,
        labels: data.labels().to_vec(),
        poisoned_indices: poisoned_indices.to_vec(),
        rate,
        filter_id: filter_id.to_string(),
        target,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Load a poisoned dataset directory; pixel counts are validated against
/// the manifest before anything is returned.
pub fn load_poisoned(dir: impl AsRef<Path>) -> Result<(LabeledDataset, PoisonedManifest)> {
    let dir = dir.as_ref();
    let manifest: PoisonedManifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let pixels = fs::read(dir.join("pixels.bin"))?;
    let expect = manifest.n * 3 * manifest.h * manifest.w;
    if pixels.len() != expect {
        return Err(Error::format(format!(
            "pixels.bin holds {} bytes, manifest expects {}",
            pixels.len(),
            expect
        )));
    }
    if manifest.labels.len() != manifest.n {
        return Err(Error::format(format!(
            "manifest lists {} labels for {} samples",
            manifest.labels.len(),
            manifest.n
        )));
    }
    for &i in &manifest.poisoned_indices {
        if i >= manifest.n {
            return Err(Error::format(format!("poisoned index {i} out of range")));
        }
        if manifest.labels[i] != manifest.target {
            return Err(Error::format(format!(
                "poisoned index {i} carries label {} instead of target {}",
                manifest.labels[i], manifest.target
            )));
        }
    }
    let data = LabeledDataset::new(
        pixels,
        manifest.labels.clone(),
        manifest.classes,
        manifest.h,
        manifest.w,
        manifest.base_id.clone(),
    )?;
    Ok((data, manifest))
}
