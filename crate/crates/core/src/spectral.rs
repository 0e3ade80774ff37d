//! 2D discrete Fourier machinery.
//!
//! Conventions, fixed for the whole crate:
//!
//! - transforms are unitary (scale `1/sqrt(HW)` in each direction), so
//!   Parseval holds exactly and spectral edits translate one-to-one into
//!   spatial l2 perturbation;
//! - spectra are stored center-shifted: the DC bin sits at
//!   `(H/2, W/2)`, low frequencies around the center;
//! - power-of-two extents go through an iterative radix-2 FFT, anything
//!   else through the direct summation.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nncore::tensor::Tensor;

pub type C64 = Complex64;

/// One channel of a center-shifted complex spectrum.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub h: usize,
    pub w: usize,
    data: Vec<C64>,
    /// True means the DC bin is at the center `(H/2, W/2)`.
    pub shifted: bool,
}

impl Spectrum {
    pub fn zeros(h: usize, w: usize) -> Self {
        Spectrum { h, w, data: vec![C64::new(0.0, 0.0); h * w], shifted: true }
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.w + j] = v;
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Per-channel spectrum of a `C x H x W` image.
#[derive(Debug, Clone)]
pub struct SpectrumTensor {
    pub channels: Vec<Spectrum>,
}

impl SpectrumTensor {
    pub fn from_image(image: &Tensor) -> Result<Self> {
        let shape = image.shape();
        if shape.len() != 3 {
            return Err(Error::dimension(format!("expected C x H x W image, got {shape:?}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let channels = (0..c)
            .map(|ch| dft2(&image.data()[ch * h * w..(ch + 1) * h * w], h, w))
            .collect();
        Ok(SpectrumTensor { channels })
    }

    /// Inverse transform back to an image; returns the image and the
    /// largest imaginary residual seen across channels.
    pub fn to_image(&self) -> (Tensor, f64) {
        let (h, w) = (self.channels[0].h, self.channels[0].w);
        let mut data = Vec::with_capacity(self.channels.len() * h * w);
        let mut residual = 0.0f64;
        for ch in &self.channels {
            let (real, res) = idft2(ch);
            residual = residual.max(res);
            data.extend_from_slice(&real);
        }
        (Tensor::from_vec(&[self.channels.len(), h, w], data).expect("shape"), residual)
    }
}

fn is_pow2(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place iterative radix-2 FFT (unnormalized). `sign` is -1 for the
/// forward transform, +1 for the inverse kernel.
fn fft_pow2(data: &mut [C64], sign: f64) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = sign * std::f64::consts::TAU / len as f64;
        let wlen = C64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = C64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = data[start + k];
                let b = data[start + k + len / 2] * w;
                data[start + k] = a + b;
                data[start + k + len / 2] = a - b;
                w *= wlen;
            }
        }
        len <<= 1;
    }
}

/// Direct O(n^2) DFT kernel for non-power-of-two extents (unnormalized).
fn dft_direct(data: &mut [C64], sign: f64) {
    let n = data.len();
    let twiddle: Vec<C64> = (0..n)
        .map(|k| {
            let ang = sign * std::f64::consts::TAU * k as f64 / n as f64;
            C64::new(ang.cos(), ang.sin())
        })
        .collect();
    let input = data.to_vec();
    for (k, out) in data.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (t, &v) in input.iter().enumerate() {
            acc += v * twiddle[(k * t) % n];
        }
        *out = acc;
    }
}

fn fft1d(data: &mut [C64], sign: f64) {
    if is_pow2(data.len()) {
        fft_pow2(data, sign);
    } else {
        dft_direct(data, sign);
    }
}

/// 2D transform over row-major `h x w` complex data, unitary scaling.
fn fft2_unitary(data: &mut Vec<C64>, h: usize, w: usize, sign: f64) {
    for row in data.chunks_exact_mut(w) {
        fft1d(row, sign);
    }
    let mut col = vec![C64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        fft1d(&mut col, sign);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Center of the shifted spectrum along an extent.
pub fn center(n: usize) -> usize {
    n / 2
}

fn shift_into(src: &[C64], h: usize, w: usize, forward: bool) -> Vec<C64> {
    let (ch, cw) = (center(h), center(w));
    let mut out = vec![C64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = ((y + ch) % h, (x + cw) % w);
            if forward {
                out[sy * w + sx] = src[y * w + x]; // unshifted -> shifted
            } else {
                out[y * w + x] = src[sy * w + sx]; // shifted -> unshifted
            }
        }
    }
    out
}

/// Forward unitary 2D DFT of one real channel, center-shifted.
pub fn dft2(channel: &[f64], h: usize, w: usize) -> Spectrum {
    assert_eq!(channel.len(), h * w, "channel length must be h*w");
    let mut data: Vec<C64> = channel.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft2_unitary(&mut data, h, w, -1.0);
    Spectrum { h, w, data: shift_into(&data, h, w, true), shifted: true }
}

/// Inverse unitary 2D DFT. Returns the real part and the maximum absolute
/// imaginary residual (zero up to rounding for conjugate-symmetric input).
pub fn idft2(spec: &Spectrum) -> (Vec<f64>, f64) {
    let (h, w) = (spec.h, spec.w);
    let mut data = if spec.shifted { shift_into(&spec.data, h, w, false) } else { spec.data.clone() };
    // inverse via conjugation around the forward kernel
    for v in data.iter_mut() {
        *v = v.conj();
    }
    fft2_unitary(&mut data, h, w, -1.0);
    let mut residual = 0.0f64;
    let real = data
        .iter()
        .map(|v| {
            residual = residual.max(v.im.abs());
            v.re
        })
        .collect();
    (real, residual)
}

/// Index whose spectral value must be the complex conjugate of `(i, j)`
/// for real signals; self-conjugate indices map to themselves.
pub fn conjugate_mirror(i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
    let (ch, cw) = (center(h), center(w));
    ((2 * ch + h - i) % h, (2 * cw + w - j) % w)
}

pub fn is_self_conjugate(i: usize, j: usize, h: usize, w: usize) -> bool {
    conjugate_mirror(i, j, h, w) == (i, j)
}

/// Canonical representative of a mirror pair: the lexicographically
/// smaller of `(i, j)` and its mirror.
pub fn canonical_index(i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
    let m = conjugate_mirror(i, j, h, w);
    (i, j).min(m)
}

/// All canonical half-plane indices in row-major order.
pub fn canonical_indices(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(h * w / 2 + 2);
    for i in 0..h {
        for j in 0..w {
            if canonical_index(i, j, h, w) == (i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Real unit-Frobenius-norm image whose spectrum is supported on `(i, j)`
/// and its conjugate mirror.
#[derive(Debug, Clone)]
pub struct FourierBasis {
    pub i: usize,
    pub j: usize,
    pub h: usize,
    pub w: usize,
    /// `H x W` row-major basis image.
    pub matrix: Vec<f64>,
}

/// Build the 2D Fourier basis at shifted index `(i, j)`: equal real
/// weights at the bin and its mirror (a single entry when self-conjugate),
/// inverse-transformed and normalized to unit Frobenius norm.
pub fn fourier_basis(i: usize, j: usize, h: usize, w: usize) -> FourierBasis {
    assert!(i < h && j < w, "shifted index out of grid");
    let mut spec = Spectrum::zeros(h, w);
    spec.set(i, j, C64::new(1.0, 0.0));
    let m = conjugate_mirror(i, j, h, w);
    if m != (i, j) {
        spec.set(m.0, m.1, C64::new(1.0, 0.0));
    }
    let (mut matrix, _res) = idft2(&spec);
    let norm = matrix.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut matrix {
        *v /= norm;
    }
    FourierBasis { i, j, h, w, matrix }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck::seeded_vec;

    /// Direct-summation oracle: unitary, shifted, straight from the
    /// definition. Never touches the FFT code paths.
    fn dft2_oracle(x: &[f64], h: usize, w: usize) -> Vec<C64> {
        let (ch, cw) = (center(h), center(w));
        let mut out = vec![C64::new(0.0, 0.0); h * w];
        for si in 0..h {
            for sj in 0..w {
                // shifted index -> unshifted frequency
                let u = (si + h - ch) % h;
                let v = (sj + w - cw) % w;
                let mut acc = C64::new(0.0, 0.0);
                for y in 0..h {
                    for x_ in 0..w {
                        let ang = -std::f64::consts::TAU
                            * (u as f64 * y as f64 / h as f64 + v as f64 * x_ as f64 / w as f64);
                        acc += x[y * w + x_] * C64::new(ang.cos(), ang.sin());
                    }
                }
                out[si * w + sj] = acc / ((h * w) as f64).sqrt();
            }
        }
        out
    }

    fn idft2_oracle(spec: &Spectrum) -> Vec<C64> {
        let (h, w) = (spec.h, spec.w);
        let (ch, cw) = (center(h), center(w));
        let mut out = vec![C64::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x_ in 0..w {
                let mut acc = C64::new(0.0, 0.0);
                for si in 0..h {
                    for sj in 0..w {
                        let u = (si + h - ch) % h;
                        let v = (sj + w - cw) % w;
                        let ang = std::f64::consts::TAU
                            * (u as f64 * y as f64 / h as f64 + v as f64 * x_ as f64 / w as f64);
                        acc += spec.get(si, sj) * C64::new(ang.cos(), ang.sin());
                    }
                }
                out[y * w + x_] = acc / ((h * w) as f64).sqrt();
            }
        }
        out
    }

    #[test]
    fn matches_direct_summation_oracle() {
        for (h, w, seed) in [(8, 8, 1u64), (6, 7, 2), (16, 16, 3)] {
            let x = seeded_vec(h * w, seed);
            let got = dft2(&x, h, w);
            let want = dft2_oracle(&x, h, w);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).norm() < 1e-9, "{h}x{w}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        for (h, w, seed) in [(8, 8, 4u64), (6, 7, 5), (32, 32, 6)] {
            let x = seeded_vec(h * w, seed);
            let spec = dft2(&x, h, w);
            let (back, res) = idft2(&spec);
            assert!(res <= 1e-9);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn all_ones_image_has_only_a_dc_bin() {
        let (h, w) = (8, 12);
        let spec = dft2(&vec![1.0; h * w], h, w);
        let dc = spec.get(center(h), center(w));
        assert!((dc.re - (h as f64 * w as f64).sqrt()).abs() < 1e-9);
        assert!(dc.im.abs() < 1e-9);
        let off: f64 = spec
            .data()
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != center(h) * w + center(w))
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max);
        assert!(off < 1e-9);
    }

    #[test]
    fn dc_only_spectrum_inverts_to_all_ones() {
        let (h, w) = (8, 8);
        let mut spec = Spectrum::zeros(h, w);
        spec.set(center(h), center(w), C64::new((h as f64 * w as f64).sqrt(), 0.0));
        let (img, res) = idft2(&spec);
        assert!(res <= 1e-9);
        assert!(img.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn parseval_energy_is_conserved() {
        for (h, w, seed) in [(8, 8, 7u64), (6, 6, 8), (32, 32, 9)] {
            let x = seeded_vec(h * w, seed);
            let spec = dft2(&x, h, w);
            let ex: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((ex - spec.frobenius_norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn transform_is_linear() {
        let (h, w) = (8, 8);
        let x = seeded_vec(h * w, 10);
        let y = seeded_vec(h * w, 11);
        let (a, b) = (1.75, -0.4);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let sc = dft2(&combo, h, w);
        let sx = dft2(&x, h, w);
        let sy = dft2(&y, h, w);
        for ((c, p), q) in sc.data().iter().zip(sx.data()).zip(sy.data()) {
            assert!((c - (p * a + q * b)).norm() < 1e-9);
        }
    }

    #[test]
    fn asymmetric_spectrum_reports_imaginary_residual() {
        let (h, w) = (8, 8);
        let mut spec = Spectrum::zeros(h, w);
        spec.set(2, 3, C64::new(1.0, 0.5)); // mirror left empty on purpose
        let (_, res) = idft2(&spec);
        let oracle = idft2_oracle(&spec);
        let oracle_res = oracle.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        assert!(res > 1e-3);
        assert!((res - oracle_res).abs() < 1e-9);
    }

    #[test]
    fn conjugate_pair_edits_keep_the_image_real() {
        let (h, w) = (8, 8);
        let mut count = 0;
        for (seed, &(i, j)) in canonical_indices(h, w).iter().enumerate() {
            let v = {
                let r = seeded_vec(2, seed as u64 + 40);
                C64::new(r[0], if is_self_conjugate(i, j, h, w) { 0.0 } else { r[1] })
            };
            let mut spec = Spectrum::zeros(h, w);
            spec.set(i, j, v);
            let (mi, mj) = conjugate_mirror(i, j, h, w);
            if (mi, mj) != (i, j) {
                spec.set(mi, mj, v.conj());
            }
            let (_, res) = idft2(&spec);
            assert!(res <= 1e-9, "({i},{j}) residual {res}");
            count += 1;
        }
        assert_eq!(count, (h * w - 4) / 2 + 4);
    }

    #[test]
    fn mirror_maps_dc_to_itself_and_reflects_through_center() {
        let (h, w) = (8, 8);
        let c = center(h);
        assert_eq!(conjugate_mirror(c, c, h, w), (c, c));
        assert_eq!(conjugate_mirror(c + 1, c, h, w), (c - 1, c));
        assert_eq!(conjugate_mirror(c, c + 3, h, w), (c, c - 3));
    }

    #[test]
    fn mirror_is_an_involution_on_the_full_6x6_grid() {
        let (h, w) = (6, 6);
        for i in 0..h {
            for j in 0..w {
                let m = conjugate_mirror(i, j, h, w);
                assert_eq!(conjugate_mirror(m.0, m.1, h, w), (i, j));
            }
        }
        // odd extents too
        for i in 0..5 {
            for j in 0..7 {
                let m = conjugate_mirror(i, j, 5, 7);
                assert_eq!(conjugate_mirror(m.0, m.1, 5, 7), (i, j));
            }
        }
    }

    #[test]
    fn basis_at_dc_is_the_constant_matrix() {
        let (h, w) = (8, 8);
        let b = fourier_basis(center(h), center(w), h, w);
        let expect = 1.0 / (h as f64 * w as f64).sqrt();
        assert!(b.matrix.iter().all(|v| (v - expect).abs() < 1e-9));
    }

    #[test]
    fn basis_has_unit_norm_and_two_spectral_bins() {
        let (h, w) = (32, 32);
        for (i, j) in [(10, 20), (3, 3), (16, 9)] {
            let b = fourier_basis(i, j, h, w);
            let norm = b.matrix.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            let spec = dft2(&b.matrix, h, w);
            let nonzero = spec.data().iter().filter(|c| c.norm() > 1e-9).count();
            let expect = if is_self_conjugate(i, j, h, w) { 1 } else { 2 };
            assert_eq!(nonzero, expect, "({i},{j})");
        }
    }

    #[test]
    fn basis_matches_cosine_grating_oracle() {
        // U(y, x) ~ cos(2pi(fy*y/H + fx*x/W) + phi) for the frequency the
        // index encodes; fit amplitude and phase by least squares.
        let (h, w) = (8, 8);
        for (i, j) in [(5, 6), (4, 7), (6, 2)] {
            let b = fourier_basis(i, j, h, w);
            let fy = (i + h - center(h)) % h;
            let fx = (j + w - center(w)) % w;
            // design matrix columns: cos(theta), sin(theta)
            let (mut cc, mut cs, mut ss, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let th = std::f64::consts::TAU
                        * (fy as f64 * y as f64 / h as f64 + fx as f64 * x as f64 / w as f64);
                    let (c, s) = (th.cos(), th.sin());
                    let val = b.matrix[y * w + x];
                    cc += c * c;
                    cs += c * s;
                    ss += s * s;
                    yc += val * c;
                    ys += val * s;
                }
            }
            let det = cc * ss - cs * cs;
            let (alpha, beta) = if det.abs() > 1e-12 {
                ((yc * ss - ys * cs) / det, (ys * cc - yc * cs) / det)
            } else {
                (yc / cc, 0.0)
            };
            let mut resid = 0.0f64;
            for y in 0..h {
                for x in 0..w {
                    let th = std::f64::consts::TAU
                        * (fy as f64 * y as f64 / h as f64 + fx as f64 * x as f64 / w as f64);
                    let fit = alpha * th.cos() + beta * th.sin();
                    resid = resid.max((b.matrix[y * w + x] - fit).abs());
                }
            }
            assert!(resid < 1e-9, "({i},{j}) residual {resid}");
        }
    }

    #[test]
    fn canonical_bases_are_pairwise_orthogonal_on_8x8() {
        let (h, w) = (8, 8);
        let idx = canonical_indices(h, w);
        let bases: Vec<Vec<f64>> =
            idx.iter().map(|&(i, j)| fourier_basis(i, j, h, w).matrix).collect();
        for p in 0..bases.len() {
            for q in (p + 1)..bases.len() {
                let dot: f64 = bases[p].iter().zip(&bases[q]).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-9, "{:?} . {:?} = {dot}", idx[p], idx[q]);
            }
        }
    }

    #[test]
    fn canonical_index_counts() {
        assert_eq!(canonical_indices(8, 8).len(), (64 - 4) / 2 + 4);
        assert_eq!(canonical_indices(32, 32).len(), (1024 - 4) / 2 + 4);
        assert_eq!(canonical_indices(5, 5).len(), (25 - 1) / 2 + 1);
    }
}
