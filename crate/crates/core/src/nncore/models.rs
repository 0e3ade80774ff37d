//! The two fixed architectures: a small CNN classifier and a small
//! convolutional autoencoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nncore::layers::{
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, Conv2d, ConvTranspose2d, ConvWork, Linear,
};
use crate::nncore::tensor::{argmax, Tensor};

/// Anything that maps an image to class logits.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;
    fn logits(&self, image: &Tensor) -> Vec<f64>;

    fn predict(&self, image: &Tensor) -> usize {
        argmax(&self.logits(image))
    }

    fn predict_batch(&self, images: &[Tensor]) -> Vec<usize> {
        images.par_iter().map(|im| self.predict(im)).collect()
    }
}

fn init_uniform(rng: &mut ChaCha8Rng, data: &mut [f64], fan_in: usize) {
    let bound = (1.0 / fan_in as f64).sqrt();
    for v in data {
        *v = rng.gen_range(-bound..bound);
    }
}

/// 2-conv classifier: conv(3->32) / pool / conv(32->64) / pool / fc.
///
/// Both convs are 3x3, stride 1, pad 1 with ReLU; pools are 2x2. The head
/// maps `64 * (H/4) * (W/4)` features to `num_classes` logits.
#[derive(Debug, Clone)]
pub struct SmallConvNet {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Linear,
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
}

/// Per-sample activations kept alive between forward and backward.
#[derive(Debug, Default, Clone)]
pub struct ConvNetScratch {
    pub col1: Vec<f64>,
    pub a1: Vec<f64>,
    pub p1: Vec<f64>,
    pub idx1: Vec<usize>,
    pub col2: Vec<f64>,
    pub a2: Vec<f64>,
    pub p2: Vec<f64>,
    pub idx2: Vec<usize>,
    pub logits: Vec<f64>,
    // backward work buffers
    dp2: Vec<f64>,
    da2: Vec<f64>,
    dp1: Vec<f64>,
    da1: Vec<f64>,
    work: ConvWork,
}

impl SmallConvNet {
    /// Fresh model with fan-in-scaled uniform init, fully seeded.
    pub fn new(h: usize, w: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::dimension(format!(
                "SmallConvNet needs H, W divisible by 4, got {h}x{w}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv1 = Conv2d::new(3, 32, 3, 1, 1);
        let mut conv2 = Conv2d::new(32, 64, 3, 1, 1);
        let mut fc = Linear::new(64 * (h / 4) * (w / 4), num_classes);
        init_uniform(&mut rng, &mut conv1.weight, 3 * 9);
        init_uniform(&mut rng, &mut conv1.bias, 3 * 9);
        init_uniform(&mut rng, &mut conv2.weight, 32 * 9);
        init_uniform(&mut rng, &mut conv2.bias, 32 * 9);
        init_uniform(&mut rng, &mut fc.weight, fc.in_dim);
        init_uniform(&mut rng, &mut fc.bias, fc.in_dim);
        Ok(SmallConvNet { conv1, conv2, fc, h, w, num_classes })
    }

    pub fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != [3, self.h, self.w] {
            return Err(Error::dimension(format!(
                "expected image shape [3, {}, {}], got {:?}",
                self.h,
                self.w,
                image.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass recording activations for a later backward pass.
    pub fn forward_scratch(&self, x: &[f64], s: &mut ConvNetScratch) {
        let (h, w) = (self.h, self.w);
        self.conv1.forward(x, h, w, &mut s.col1, &mut s.a1, &mut s.work);
        relu_forward(&mut s.a1);
        maxpool2_forward(&s.a1, 32, h, w, &mut s.p1, &mut s.idx1);
        self.conv2.forward(&s.p1, h / 2, w / 2, &mut s.col2, &mut s.a2, &mut s.work);
        relu_forward(&mut s.a2);
        maxpool2_forward(&s.a2, 64, h / 2, w / 2, &mut s.p2, &mut s.idx2);
        self.fc.forward(&s.p2, &mut s.logits);
    }

    /// Backward from `dlogits`, accumulating into `grads`
    /// (layout per [`SmallConvNet::zero_grads`]).
    pub fn backward_scratch(
        &self,
        dlogits: &[f64],
        s: &mut ConvNetScratch,
        grads: &mut [Vec<f64>],
    ) {
        let (h, w) = (self.h, self.w);
        let [w1, b1, w2, b2, wf, bf] = grads else {
            panic!("grads layout mismatch");
        };
        s.dp2.resize(s.p2.len(), 0.0);
        self.fc.backward(&s.p2, dlogits, wf, bf, Some(&mut s.dp2));
        s.da2.resize(s.a2.len(), 0.0);
        maxpool2_backward(&s.dp2, &s.idx2, &mut s.da2);
        relu_backward(&s.a2, &mut s.da2);
        s.dp1.resize(s.p1.len(), 0.0);
        self.conv2.backward(&s.col2, &s.da2, h / 2, w / 2, w2, b2, Some(&mut s.dp1), &mut s.work);
        s.da1.resize(s.a1.len(), 0.0);
        maxpool2_backward(&s.dp1, &s.idx1, &mut s.da1);
        relu_backward(&s.a1, &mut s.da1);
        self.conv1.backward(&s.col1, &s.da1, h, w, w1, b1, None, &mut s.work);
    }

    /// Parameter order: conv1.w, conv1.b, conv2.w, conv2.b, fc.w, fc.b.
    pub fn params(&self) -> Vec<&[f64]> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.fc.weight,
            &self.fc.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.fc.weight,
            &mut self.fc.bias,
        ]
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Mean absolute post-ReLU activation per conv channel, accumulated
    /// over `images`: 32 conv1 channels then 64 conv2 channels.
    pub fn channel_activations(&self, images: &[Tensor]) -> Vec<f64> {
        let per_image: Vec<Vec<f64>> = images
            .par_iter()
            .map_init(ConvNetScratch::default, |s, im| {
                self.forward_scratch(im.data(), s);
                let sp1 = self.h * self.w;
                let sp2 = (self.h / 2) * (self.w / 2);
                let mut acts = Vec::with_capacity(96);
                for c in 0..32 {
                    let sum: f64 = s.a1[c * sp1..(c + 1) * sp1].iter().map(|v| v.abs()).sum();
                    acts.push(sum / sp1 as f64);
                }
                for c in 0..64 {
                    let sum: f64 = s.a2[c * sp2..(c + 1) * sp2].iter().map(|v| v.abs()).sum();
                    acts.push(sum / sp2 as f64);
                }
                acts
            })
            .collect();
        let mut mean = vec![0.0; 96];
        for acts in &per_image {
            for (m, a) in mean.iter_mut().zip(acts) {
                *m += a;
            }
        }
        let n = images.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

impl Classifier for SmallConvNet {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, image: &Tensor) -> Vec<f64> {
        let mut s = ConvNetScratch::default();
        self.forward_scratch(image.data(), &mut s);
        s.logits
    }

    fn predict_batch(&self, images: &[Tensor]) -> Vec<usize> {
        images
            .par_iter()
            .map_init(ConvNetScratch::default, |s, im| {
                self.forward_scratch(im.data(), s);
                argmax(&s.logits)
            })
            .collect()
    }
}

/// Batch forward: `B x num_classes` logits, pure in the weights and input.
pub fn forward(model: &SmallConvNet, batch: &[Tensor]) -> Result<Tensor> {
    for im in batch {
        model.check_input(im)?;
    }
    let rows: Vec<Vec<f64>> = batch
        .par_iter()
        .map_init(ConvNetScratch::default, |s, im| {
            model.forward_scratch(im.data(), s);
            s.logits.clone()
        })
        .collect();
    let mut data = Vec::with_capacity(batch.len() * model.num_classes);
    for r in rows {
        data.extend_from_slice(&r);
    }
    Tensor::from_vec(&[batch.len(), model.num_classes], data)
}

/// Conv autoencoder: two stride-2 convs down (3->16->32), two stride-2
/// transposed convs up (32->16->3), sigmoid output.
#[derive(Debug, Clone)]
pub struct ConvAutoencoder {
    pub enc1: Conv2d,
    pub enc2: Conv2d,
    pub dec1: ConvTranspose2d,
    pub dec2: ConvTranspose2d,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Default, Clone)]
pub struct AutoencoderScratch {
    pub col1: Vec<f64>,
    pub e1: Vec<f64>,
    pub col2: Vec<f64>,
    pub e2: Vec<f64>,
    pub d1: Vec<f64>,
    pub out: Vec<f64>,
    dd1: Vec<f64>,
    de2: Vec<f64>,
    de1: Vec<f64>,
    work: ConvWork,
}

impl ConvAutoencoder {
    pub fn new(h: usize, w: usize, seed: u64) -> Result<Self> {
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::dimension(format!(
                "ConvAutoencoder needs H, W divisible by 4, got {h}x{w}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc1 = Conv2d::new(3, 16, 3, 2, 1);
        let mut enc2 = Conv2d::new(16, 32, 3, 2, 1);
        let mut dec1 = ConvTranspose2d::new(32, 16, 3, 2, 1, 1);
        let mut dec2 = ConvTranspose2d::new(16, 3, 3, 2, 1, 1);
        init_uniform(&mut rng, &mut enc1.weight, 3 * 9);
        init_uniform(&mut rng, &mut enc1.bias, 3 * 9);
        init_uniform(&mut rng, &mut enc2.weight, 16 * 9);
        init_uniform(&mut rng, &mut enc2.bias, 16 * 9);
        init_uniform(&mut rng, &mut dec1.weight, 32 * 9);
        init_uniform(&mut rng, &mut dec1.bias, 32 * 9);
        init_uniform(&mut rng, &mut dec2.weight, 16 * 9);
        init_uniform(&mut rng, &mut dec2.bias, 16 * 9);
        Ok(ConvAutoencoder { enc1, enc2, dec1, dec2, h, w })
    }

    pub fn forward_scratch(&self, x: &[f64], s: &mut AutoencoderScratch) {
        let (h, w) = (self.h, self.w);
        self.enc1.forward(x, h, w, &mut s.col1, &mut s.e1, &mut s.work);
        relu_forward(&mut s.e1);
        self.enc2.forward(&s.e1, h / 2, w / 2, &mut s.col2, &mut s.e2, &mut s.work);
        relu_forward(&mut s.e2);
        self.dec1.forward(&s.e2, h / 4, w / 4, &mut s.d1);
        relu_forward(&mut s.d1);
        self.dec2.forward(&s.d1, h / 2, w / 2, &mut s.out);
        sigmoid_forward(&mut s.out);
    }

    pub fn backward_scratch(&self, dout: &[f64], s: &mut AutoencoderScratch, grads: &mut [Vec<f64>]) {
        let (h, w) = (self.h, self.w);
        let [e1w, e1b, e2w, e2b, d1w, d1b, d2w, d2b] = grads else {
            panic!("grads layout mismatch");
        };
        let mut dsig = dout.to_vec();
        sigmoid_backward(&s.out, &mut dsig);
        s.dd1.resize(s.d1.len(), 0.0);
        self.dec2.backward(&s.d1, &dsig, h / 2, w / 2, d2w, d2b, Some(&mut s.dd1));
        relu_backward(&s.d1, &mut s.dd1);
        s.de2.resize(s.e2.len(), 0.0);
        self.dec1.backward(&s.e2, &s.dd1, h / 4, w / 4, d1w, d1b, Some(&mut s.de2));
        relu_backward(&s.e2, &mut s.de2);
        s.de1.resize(s.e1.len(), 0.0);
        self.enc2.backward(&s.col2, &s.de2, h / 2, w / 2, e2w, e2b, Some(&mut s.de1), &mut s.work);
        relu_backward(&s.e1, &mut s.de1);
        self.enc1.backward(&s.col1, &s.de1, h, w, e1w, e1b, None, &mut s.work);
    }

    /// Reconstruct one image; output shape equals input shape, values in
    /// `[0, 1]` by the sigmoid.
    pub fn reconstruct(&self, image: &Tensor) -> Result<Tensor> {
        if image.shape() != [3, self.h, self.w] {
            return Err(Error::dimension(format!(
                "expected image shape [3, {}, {}], got {:?}",
                self.h,
                self.w,
                image.shape()
            )));
        }
        let mut s = AutoencoderScratch::default();
        self.forward_scratch(image.data(), &mut s);
        Tensor::from_vec(&[3, self.h, self.w], s.out)
    }

    /// Parameter order: enc1.w/b, enc2.w/b, dec1.w/b, dec2.w/b.
    pub fn params(&self) -> Vec<&[f64]> {
        vec![
            &self.enc1.weight,
            &self.enc1.bias,
            &self.enc2.weight,
            &self.enc2.bias,
            &self.dec1.weight,
            &self.dec1.bias,
            &self.dec2.weight,
            &self.dec2.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.enc1.weight,
            &mut self.enc1.bias,
            &mut self.enc2.weight,
            &mut self.enc2.bias,
            &mut self.dec1.weight,
            &mut self.dec1.bias,
            &mut self.dec2.weight,
            &mut self.dec2.bias,
        ]
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck::{check_grad, seeded_vec};
    use crate::nncore::layers::softmax_cross_entropy;

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        let data = seeded_vec(3 * h * w, seed).iter().map(|v| (v + 1.0) / 2.0).collect();
        Tensor::from_vec(&[3, h, w], data).unwrap()
    }

    #[test]
    fn zero_weight_model_gives_zero_logits() {
        let mut m = SmallConvNet::new(8, 8, 5, 0).unwrap();
        for p in m.params_mut() {
            p.fill(0.0);
        }
        let im = image(1, 8, 8);
        let l = m.logits(&im);
        assert!(l.iter().all(|&v| v == 0.0));
        assert_eq!(m.predict(&im), 0); // argmax tie broken low
    }

    #[test]
    fn forward_is_deterministic_and_batchwise_consistent() {
        let m = SmallConvNet::new(8, 8, 4, 3).unwrap();
        let im = image(2, 8, 8);
        let batch = vec![im.clone(), im.clone(), im.clone()];
        let out = forward(&m, &batch).unwrap();
        assert_eq!(out.shape(), &[3, 4]);
        let row0 = &out.data()[0..4];
        assert_eq!(row0, &out.data()[4..8]);
        assert_eq!(row0, &out.data()[8..12]);
        assert_eq!(row0, m.logits(&im).as_slice());
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let m = SmallConvNet::new(8, 8, 4, 3).unwrap();
        let bad = image(2, 4, 4);
        assert!(forward(&m, &[bad]).is_err());
    }

    #[test]
    fn convnet_end_to_end_gradcheck() {
        let m = SmallConvNet::new(8, 8, 4, 11).unwrap();
        let im = image(12, 8, 8);
        let label = 2;

        let mut s = ConvNetScratch::default();
        m.forward_scratch(im.data(), &mut s);
        let (_, dlogits) = softmax_cross_entropy(&s.logits, label);
        let mut grads = m.zero_grads();
        m.backward_scratch(&dlogits, &mut s, &mut grads);

        let loss_with = |model: &SmallConvNet| -> f64 {
            let mut s = ConvNetScratch::default();
            model.forward_scratch(im.data(), &mut s);
            softmax_cross_entropy(&s.logits, label).0
        };

        // Spot-check a slice of each parameter tensor end to end.
        for (pi, stride) in [(0usize, 97usize), (1, 7), (2, 1831), (3, 13), (4, 397), (5, 1)] {
            let g = &grads[pi];
            let picks: Vec<usize> = (0..g.len()).step_by(stride).take(12).collect();
            let sub: Vec<f64> = picks.iter().map(|&i| g[i]).collect();
            check_grad(&sub, |j, eps| {
                let mut model = m.clone();
                model.params_mut()[pi][picks[j]] += eps;
                loss_with(&model)
            });
        }
    }

    #[test]
    fn autoencoder_output_shape_and_range() {
        let ae = ConvAutoencoder::new(8, 8, 5).unwrap();
        let im = image(6, 8, 8);
        let out = ae.reconstruct(&im).unwrap();
        assert_eq!(out.shape(), im.shape());
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn autoencoder_end_to_end_gradcheck() {
        let ae = ConvAutoencoder::new(4, 4, 7).unwrap();
        let im = image(8, 4, 4);

        let mse = |model: &ConvAutoencoder| -> f64 {
            let mut s = AutoencoderScratch::default();
            model.forward_scratch(im.data(), &mut s);
            s.out.iter().zip(im.data()).map(|(y, x)| (y - x) * (y - x)).sum::<f64>()
                / im.len() as f64
        };

        let mut s = AutoencoderScratch::default();
        ae.forward_scratch(im.data(), &mut s);
        let n = im.len() as f64;
        let dout: Vec<f64> =
            s.out.iter().zip(im.data()).map(|(y, x)| 2.0 * (y - x) / n).collect();
        let mut grads = ae.zero_grads();
        ae.backward_scratch(&dout, &mut s, &mut grads);

        for pi in 0..8 {
            let g = &grads[pi];
            let picks: Vec<usize> = (0..g.len()).step_by((g.len() / 10).max(1)).take(10).collect();
            let sub: Vec<f64> = picks.iter().map(|&i| g[i]).collect();
            check_grad(&sub, |j, eps| {
                let mut model = ae.clone();
                model.params_mut()[pi][picks[j]] += eps;
                mse(&model)
            });
        }
    }
}
