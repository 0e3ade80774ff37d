// temporary probe — not part of the repo
use std::time::Instant;
use sptrj_core::nncore::layers::*;
use sptrj_core::nncore::gradcheck::seeded_vec;

fn main() {
    let n = 8;
    // conv2 shape: 32ch 16x16 -> 64ch
    let mut conv = Conv2d::new(32, 64, 3, 1, 1);
    conv.weight = seeded_vec(conv.weight.len(), 1);
    conv.bias = seeded_vec(conv.bias.len(), 2);
    let (h, w) = (16, 16);
    let xs = seeded_vec(n * 32 * h * w, 3);
    let reps = 300;

    // per-image path
    let (mut buf, mut y) = (Vec::new(), Vec::new());
    let mut work = ConvWork::default();
    let t0 = Instant::now();
    for _ in 0..reps {
        for img in 0..n {
            conv.forward(&xs[img * 32 * h * w..(img + 1) * 32 * h * w], h, w, &mut buf, &mut y, &mut work);
        }
    }
    let dt = t0.elapsed().as_secs_f64() / (reps * n) as f64;
    println!("per-image fwd: {:.0} us/img = {:.1} GFLOP/s", dt * 1e6, 2.0 * 4.7e6 / dt / 1e9);

    // block path
    let (mut xpad, mut ys) = (Vec::new(), Vec::new());
    let mut work = ConvWork::default();
    let t0 = Instant::now();
    for _ in 0..reps {
        conv.forward_block(&xs, n, h, w, &mut xpad, &mut ys, &mut work);
    }
    let dt = t0.elapsed().as_secs_f64() / (reps * n) as f64;
    println!("block fwd:     {:.0} us/img = {:.1} GFLOP/s", dt * 1e6, 2.0 * 4.7e6 / dt / 1e9);

    // conv1 shape
    let mut conv1 = Conv2d::new(3, 32, 3, 1, 1);
    conv1.weight = seeded_vec(conv1.weight.len(), 4);
    conv1.bias = seeded_vec(conv1.bias.len(), 5);
    let xs1 = seeded_vec(n * 3 * 32 * 32, 6);
    let t0 = Instant::now();
    for _ in 0..reps {
        for img in 0..n {
            conv1.forward(&xs1[img * 3 * 1024..(img + 1) * 3 * 1024], 32, 32, &mut buf, &mut y, &mut work);
        }
    }
    let dt = t0.elapsed().as_secs_f64() / (reps * n) as f64;
    println!("conv1 per-img: {:.0} us/img = {:.1} GFLOP/s", dt * 1e6, 2.0 * 0.9e6 / dt / 1e9);
    let t0 = Instant::now();
    for _ in 0..reps {
        conv1.forward_block(&xs1, n, 32, 32, &mut xpad, &mut ys, &mut work);
    }
    let dt = t0.elapsed().as_secs_f64() / (reps * n) as f64;
    println!("conv1 block:   {:.0} us/img = {:.1} GFLOP/s", dt * 1e6, 2.0 * 0.9e6 / dt / 1e9);
}
