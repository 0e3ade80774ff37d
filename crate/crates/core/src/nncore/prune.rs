//! Channel pruning: zero the conv channels that are least active on clean
//! data. Pruning works at whole-channel granularity across both conv
//! layers (32 + 64 = 96 channels total).

use crate::error::{Error, Result};
use crate::nncore::models::SmallConvNet;
use crate::nncore::tensor::Tensor;

/// `(layer, channel, mean |activation|)` for all 96 conv channels,
/// sorted ascending by activation (ties by layer then channel).
pub fn activation_ranking(model: &SmallConvNet, clean: &[Tensor]) -> Vec<(usize, usize, f64)> {
    let acts = model.channel_activations(clean);
    let mut ranked: Vec<(usize, usize, f64)> = acts
        .iter()
        .enumerate()
        .map(|(i, &a)| if i < 32 { (0, i, a) } else { (1, i - 32, a) })
        .collect();
    ranked.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    ranked
}

/// Zero the weights and bias of the `fraction` least-active conv channels.
/// Returns a new model; the input is untouched.
pub fn prune_neurons(
    model: &SmallConvNet,
    clean: &[Tensor],
    fraction: f64,
) -> Result<SmallConvNet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("prune fraction {fraction} outside [0, 1]")));
    }
    let mut pruned = model.clone();
    if fraction == 0.0 {
        return Ok(pruned);
    }
    let ranked = activation_ranking(model, clean);
    let count = ((ranked.len() as f64) * fraction).floor() as usize;
    for &(layer, ch, _) in ranked.iter().take(count) {
        let conv = if layer == 0 { &mut pruned.conv1 } else { &mut pruned.conv2 };
        let per_ch = conv.in_ch * conv.k * conv.k;
        conv.weight[ch * per_ch..(ch + 1) * per_ch].fill(0.0);
        conv.bias[ch] = 0.0;
    }
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck::seeded_vec;
    use crate::nncore::models::Classifier;

    fn images(n: usize, h: usize, w: usize) -> Vec<Tensor> {
        (0..n)
            .map(|i| {
                let data =
                    seeded_vec(3 * h * w, 100 + i as u64).iter().map(|v| (v + 1.0) / 2.0).collect();
                Tensor::from_vec(&[3, h, w], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn fraction_zero_is_identity() {
        let m = SmallConvNet::new(8, 8, 4, 3).unwrap();
        let p = prune_neurons(&m, &images(4, 8, 8), 0.0).unwrap();
        for (a, b) in m.params().iter().zip(p.params().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fraction_one_zeroes_all_conv_channels() {
        let m = SmallConvNet::new(8, 8, 4, 3).unwrap();
        let imgs = images(4, 8, 8);
        let p = prune_neurons(&m, &imgs, 1.0).unwrap();
        assert!(p.conv1.weight.iter().all(|&v| v == 0.0));
        assert!(p.conv1.bias.iter().all(|&v| v == 0.0));
        assert!(p.conv2.weight.iter().all(|&v| v == 0.0));
        assert!(p.conv2.bias.iter().all(|&v| v == 0.0));
        // all inputs now collapse to the same prediction
        let preds = p.predict_batch(&imgs);
        assert!(preds.iter().all(|&c| c == preds[0]));
    }

    #[test]
    fn half_prune_zeroes_exactly_the_bottom_half_of_the_ranking() {
        let m = SmallConvNet::new(8, 8, 4, 5).unwrap();
        let imgs = images(6, 8, 8);
        let p = prune_neurons(&m, &imgs, 0.5).unwrap();

        // independent recomputation of the mean activations
        let ranked = activation_ranking(&m, &imgs);
        let expect_zeroed: std::collections::HashSet<(usize, usize)> =
            ranked.iter().take(48).map(|&(l, c, _)| (l, c)).collect();

        for layer in 0..2 {
            let conv = if layer == 0 { &p.conv1 } else { &p.conv2 };
            let per_ch = conv.in_ch * conv.k * conv.k;
            for ch in 0..conv.out_ch {
                let zeroed = conv.weight[ch * per_ch..(ch + 1) * per_ch]
                    .iter()
                    .all(|&v| v == 0.0)
                    && conv.bias[ch] == 0.0;
                assert_eq!(zeroed, expect_zeroed.contains(&(layer, ch)), "layer {layer} ch {ch}");
            }
        }
    }

    #[test]
    fn out_of_range_fraction_is_rejected() {
        let m = SmallConvNet::new(8, 8, 4, 3).unwrap();
        assert!(prune_neurons(&m, &images(1, 8, 8), 1.5).is_err());
        assert!(prune_neurons(&m, &images(1, 8, 8), -0.1).is_err());
    }
}
