//! JPEG-style compression round trip.
//!
//! RGB -> YCbCr, 8x8 block DCT, quantization with the standard
//! luminance/chrominance tables scaled by quality, dequantization,
//! inverse DCT, back to RGB. Deliberately simplified relative to a full
//! codec: no entropy coding (irrelevant to pixel effect) and 4:4:4
//! sampling (no chroma subsampling), keeping the frequency effect pure.

use crate::error::{Error, Result};
use crate::nncore::tensor::Tensor;

const LUMA_TABLE: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

const CHROMA_TABLE: [f64; 64] = [
    17.0, 18.0, 24.0, 47.0, 99.0, 99.0, 99.0, 99.0, //
    18.0, 21.0, 26.0, 66.0, 99.0, 99.0, 99.0, 99.0, //
    24.0, 26.0, 56.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    47.0, 66.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
];

/// Quality-scaled quantization tables per the usual IJG rule.
#[derive(Debug, Clone)]
pub struct CompressionCodec {
    pub quality: u8,
    luma: [f64; 64],
    chroma: [f64; 64],
    /// Orthonormal 8-point DCT-II matrix.
    dct: [f64; 64],
}

fn scaled(base: &[f64; 64], quality: u8) -> [f64; 64] {
    let q = quality as f64;
    let scale = if quality < 50 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut out = [0.0; 64];
    for (o, b) in out.iter_mut().zip(base) {
        *o = ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    out
}

impl CompressionCodec {
    pub fn new(quality: u8) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::config(format!("jpeg quality {quality} outside [1, 100]")));
        }
        let mut dct = [0.0; 64];
        for u in 0..8 {
            let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for x in 0..8 {
                dct[u * 8 + x] =
                    c * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        Ok(CompressionCodec {
            quality,
            luma: scaled(&LUMA_TABLE, quality),
            chroma: scaled(&CHROMA_TABLE, quality),
            dct,
        })
    }

    /// `F = C B C^T` (forward) or `B = C^T F C` (inverse).
    fn transform_block(&self, block: &[f64; 64], inverse: bool) -> [f64; 64] {
        let mut tmp = [0.0; 64];
        let mut out = [0.0; 64];
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = 0.0;
                for t in 0..8 {
                    let c = if inverse { self.dct[t * 8 + i] } else { self.dct[i * 8 + t] };
                    acc += c * block[t * 8 + j];
                }
                tmp[i * 8 + j] = acc;
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = 0.0;
                for t in 0..8 {
                    let c = if inverse { self.dct[t * 8 + j] } else { self.dct[j * 8 + t] };
                    acc += tmp[i * 8 + t] * c;
                }
                out[i * 8 + j] = acc;
            }
        }
        out
    }

    /// DCT, quantize, dequantize, inverse DCT of one level-shifted block
    /// (values around 0 in 0..255 units).
    fn crush_block(&self, block: &[f64; 64], table: &[f64; 64]) -> [f64; 64] {
        let mut freq = self.transform_block(block, false);
        for (f, q) in freq.iter_mut().zip(table) {
            *f = (*f / q).round() * q;
        }
        self.transform_block(&freq, true)
    }

    /// Round-trip one plane (values in 0..255 units, any size; borders
    /// are edge-replicated up to block multiples).
    fn roundtrip_plane(&self, plane: &[f64], h: usize, w: usize, table: &[f64; 64]) -> Vec<f64> {
        let bh = h.div_ceil(8) * 8;
        let bw = w.div_ceil(8) * 8;
        let mut padded = vec![0.0; bh * bw];
        for y in 0..bh {
            let sy = y.min(h - 1);
            for x in 0..bw {
                padded[y * bw + x] = plane[sy * w + x.min(w - 1)] - 128.0;
            }
        }
        for by in (0..bh).step_by(8) {
            for bx in (0..bw).step_by(8) {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = padded[(by + y) * bw + bx + x];
                    }
                }
                let back = self.crush_block(&block, table);
                for y in 0..8 {
                    for x in 0..8 {
                        padded[(by + y) * bw + bx + x] = back[y * 8 + x];
                    }
                }
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = padded[y * bw + x] + 128.0;
            }
        }
        out
    }

    /// Compress and decompress an RGB image in `[0, 1]`.
    pub fn roundtrip(&self, image: &Tensor) -> Result<Tensor> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::dimension(format!("jpeg expects 3 x H x W, got {shape:?}")));
        }
        let (h, w) = (shape[1], shape[2]);
        let plane = h * w;
        let d = image.data();
        let mut yp = vec![0.0; plane];
        let mut cb = vec![0.0; plane];
        let mut cr = vec![0.0; plane];
        for i in 0..plane {
            let (r, g, b) = (d[i] * 255.0, d[plane + i] * 255.0, d[2 * plane + i] * 255.0);
            yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
            cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
        }
        let yp = self.roundtrip_plane(&yp, h, w, &self.luma);
        let cb = self.roundtrip_plane(&cb, h, w, &self.chroma);
        let cr = self.roundtrip_plane(&cr, h, w, &self.chroma);
        let mut out = vec![0.0; 3 * plane];
        for i in 0..plane {
            let (y, u, v) = (yp[i], cb[i] - 128.0, cr[i] - 128.0);
            out[i] = ((y + 1.402 * v) / 255.0).clamp(0.0, 1.0);
            out[plane + i] = ((y - 0.344136 * u - 0.714136 * v) / 255.0).clamp(0.0, 1.0);
            out[2 * plane + i] = ((y + 1.772 * u) / 255.0).clamp(0.0, 1.0);
        }
        Tensor::from_vec(shape, out)
    }
}

/// One-call round trip at the given quality.
pub fn jpeg_roundtrip(image: &Tensor, quality: u8) -> Result<Tensor> {
    CompressionCodec::new(quality)?.roundtrip(image)
}

/// The paper's compression axis: `compression%` maps to
/// `quality = 100 - compression%`.
pub fn quality_for_compression_percent(percent: u8) -> u8 {
    100u8.saturating_sub(percent).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{generate_synthetic, SyntheticSpec};

    #[test]
    fn q100_on_mid_gray_is_within_the_quantization_floor() {
        let img = Tensor::from_vec(&[3, 16, 16], vec![0.5; 768]).unwrap();
        let out = jpeg_roundtrip(&img, 100).unwrap();
        let max = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max <= 2.0 / 255.0, "max error {max}");
    }

    #[test]
    fn q100_on_natural_images_stays_within_the_floor() {
        // gray content: the only lossy step at q100 is coefficient
        // rounding on the luma plane (chroma planes carry the constant
        // 128). Color content recombines per-plane errors through the
        // RGB matrix and can exceed the single-plane floor slightly.
        let data = generate_synthetic(&SyntheticSpec::new(4, 4, 32, 32, 13)).unwrap();
        for i in 0..data.len() {
            let img = data.image(i);
            let plane = 32 * 32;
            let gray: Vec<f64> = (0..3 * plane)
                .map(|n| {
                    let px = n % plane;
                    (img.data()[px] + img.data()[plane + px] + img.data()[2 * plane + px]) / 3.0
                })
                .collect();
            let gray = Tensor::from_vec(&[3, 32, 32], gray).unwrap();
            let out = jpeg_roundtrip(&gray, 100).unwrap();
            let max = out
                .data()
                .iter()
                .zip(gray.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max <= 2.0 / 255.0, "image {i}: max error {max}");

            // color content: mean error stays deep below one 8-bit step
            let color_out = jpeg_roundtrip(&img, 100).unwrap();
            let mean = color_out
                .data()
                .iter()
                .zip(img.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / img.len() as f64;
            assert!(mean <= 1.0 / 255.0, "image {i}: mean error {mean}");
        }
    }

    #[test]
    fn single_block_matches_a_direct_dct_oracle() {
        // 8x8 single block, gray channels: the codec's luma path must
        // agree with a textbook DCT-II / quantize / IDCT computation.
        let vals: Vec<f64> = (0..64).map(|i| ((i * 37 + 13) % 256) as f64 / 255.0).collect();
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(&vals);
        }
        let img = Tensor::from_vec(&[3, 8, 8], data).unwrap();
        let q = 60u8;
        let out = jpeg_roundtrip(&img, q).unwrap();

        // oracle: gray input means Y = value, Cb = Cr = 128 exactly
        let table = scaled(&LUMA_TABLE, q);
        let mut oracle = [0.0f64; 64];
        for (o, v) in oracle.iter_mut().zip(&vals) {
            *o = v * 255.0 - 128.0;
        }
        let dct2 = |b: &[f64; 64]| -> [f64; 64] {
            let mut f = [0.0; 64];
            for u in 0..8 {
                for v in 0..8 {
                    let cu = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
                    let cv = if v == 0 { (0.125f64).sqrt() } else { 0.5 };
                    let mut acc = 0.0;
                    for x in 0..8 {
                        for y in 0..8 {
                            acc += b[x * 8 + y]
                                * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0)
                                    .cos()
                                * ((2.0 * y as f64 + 1.0) * v as f64 * std::f64::consts::PI / 16.0)
                                    .cos();
                        }
                    }
                    f[u * 8 + v] = cu * cv * acc;
                }
            }
            f
        };
        let idct2 = |f: &[f64; 64]| -> [f64; 64] {
            let mut b = [0.0; 64];
            for x in 0..8 {
                for y in 0..8 {
                    let mut acc = 0.0;
                    for u in 0..8 {
                        for v in 0..8 {
                            let cu = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
                            let cv = if v == 0 { (0.125f64).sqrt() } else { 0.5 };
                            acc += cu
                                * cv
                                * f[u * 8 + v]
                                * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0)
                                    .cos()
                                * ((2.0 * y as f64 + 1.0) * v as f64 * std::f64::consts::PI / 16.0)
                                    .cos();
                        }
                    }
                    b[x * 8 + y] = acc;
                }
            }
            b
        };
        let mut freq = dct2(&oracle);
        for (f, q) in freq.iter_mut().zip(&table) {
            *f = (*f / q).round() * q;
        }
        let back = idct2(&freq);

        // compare luma: reconstruct Y from the codec output (gray in, so
        // every output channel approximates Y)
        for i in 0..64 {
            let want = ((back[i] + 128.0) / 255.0).clamp(0.0, 1.0);
            let got = out.data()[i];
            assert!((got - want).abs() < 1e-9, "pixel {i}: {got} vs {want}");
        }
    }

    #[test]
    fn roundtrip_is_idempotent_up_to_the_floor() {
        let data = generate_synthetic(&SyntheticSpec::new(4, 2, 32, 32, 7)).unwrap();
        for q in [95u8, 80, 50] {
            let img = data.image(0);
            let once = jpeg_roundtrip(&img, q).unwrap();
            let twice = jpeg_roundtrip(&once, q).unwrap();
            let max = once
                .data()
                .iter()
                .zip(twice.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max <= 2.0 / 255.0, "q {q}: drift {max}");
        }
    }

    #[test]
    fn output_stays_in_range_and_shape() {
        let data = generate_synthetic(&SyntheticSpec::new(2, 2, 20, 28, 5)).unwrap();
        let img = data.image(1);
        for q in [1u8, 10, 50, 100] {
            let out = jpeg_roundtrip(&img, q).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(jpeg_roundtrip(&img, 0).is_err());
        assert!(jpeg_roundtrip(&img, 101).is_err());
    }

    #[test]
    fn lower_quality_degrades_more() {
        let data = generate_synthetic(&SyntheticSpec::new(4, 2, 32, 32, 9)).unwrap();
        let img = data.image(3);
        let err = |q: u8| {
            let out = jpeg_roundtrip(&img, q).unwrap();
            out.data()
                .iter()
                .zip(img.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        assert!(err(30) > err(80));
        assert!(err(80) > err(100));
    }

    #[test]
    fn compression_percent_mapping() {
        assert_eq!(quality_for_compression_percent(20), 80);
        assert_eq!(quality_for_compression_percent(0), 100);
        assert_eq!(quality_for_compression_percent(100), 1);
    }
}
