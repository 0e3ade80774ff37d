//! Layer primitives with explicit forward/backward passes.
//!
//! Convolutions go through im2col so the hot loops are contiguous
//! multiply-adds over the spatial axis. The transposed convolution and the
//! pool/activation layers are direct loops; they are nowhere near the
//! classifier's hot path.

/// Dot product with 4 explicit accumulator lanes so the reduction can
/// vectorize despite f64's strict evaluation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (ai, bi) = (&a[8 * i..8 * i + 8], &b[8 * i..8 * i + 8]);
        for l in 0..8 {
            lanes[l] = ai[l].mul_add(bi[l], lanes[l]);
        }
    }
    let mut acc =
        ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for i in 8 * chunks..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// `y += alpha * x`, elementwise.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = alpha.mul_add(xv, *yv);
    }
}

/// Reusable work buffers for conv forward/backward passes. One instance
/// can serve several layers; buffers are resized on demand.
#[derive(Debug, Default, Clone)]
pub struct ConvWork {
    ypad: Vec<f64>,
    dypad: Vec<f64>,
    dxpad: Vec<f64>,
}

/// 2D convolution (cross-correlation) over `in_ch x H x W` input.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out_ch][in_ch][k][k]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            weight: vec![0.0; out_ch * in_ch * k * k],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn patch_rows(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    /// Unfold `x` into `col` with layout `[in_ch*k*k][oh*ow]`.
    pub fn im2col(&self, x: &[f64], h: usize, w: usize, col: &mut Vec<f64>) {
        let (oh, ow) = self.out_hw(h, w);
        let spatial = oh * ow;
        col.clear();
        col.resize(self.patch_rows() * spatial, 0.0);
        for ic in 0..self.in_ch {
            let xc = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ic * self.k + ky) * self.k + kx) * spatial;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                        if iy < 0 || iy as usize >= h {
                            continue; // stays zero (padding)
                        }
                        let src_row = &xc[iy as usize * w..(iy as usize + 1) * w];
                        if self.stride == 1 {
                            // Contiguous copy of the in-bounds span.
                            let ix0 = kx as isize - self.pad as isize;
                            let start = (-ix0).max(0) as usize;
                            let end = ow.min((w as isize - ix0).max(0) as usize);
                            if start < end {
                                dst[start..end].copy_from_slice(
                                    &src_row[(ix0 + start as isize) as usize
                                        ..(ix0 + end as isize) as usize],
                                );
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && (ix as usize) < w {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// True when the padded-plane fast path applies (stride 1, "same"
    /// padding). The classifier's convs always take it.
    fn fast_path(&self) -> bool {
        self.stride == 1 && 2 * self.pad + 1 == self.k
    }

    /// Flat-axpy slack: shifted reads from the last row's ignored pad
    /// columns may run past the nominal plane end.
    const SLACK: usize = 8;

    /// Copy `x` into zero-padded planes `[in_ch][(h+2p) * (w+2p)] + slack`.
    fn build_xpad(&self, x: &[f64], h: usize, w: usize, xpad: &mut Vec<f64>) {
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        xpad.clear();
        xpad.resize(self.in_ch * ph * pw + Self::SLACK, 0.0);
        for ic in 0..self.in_ch {
            for y in 0..h {
                let src = &x[ic * h * w + y * w..ic * h * w + (y + 1) * w];
                let dst = ic * ph * pw + (y + self.pad) * pw + self.pad;
                xpad[dst..dst + w].copy_from_slice(src);
            }
        }
    }

    /// Forward pass. Fills `buf` (padded input or im2col matrix, kept for
    /// backward) and `y` (`out_ch x oh x ow`).
    pub fn forward(
        &self,
        x: &[f64],
        h: usize,
        w: usize,
        buf: &mut Vec<f64>,
        y: &mut Vec<f64>,
        work: &mut ConvWork,
    ) {
        if !self.fast_path() {
            return self.forward_im2col(x, h, w, buf, y);
        }
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        let plane = h * pw; // y rows padded to pw so each tap is one flat axpy
        self.build_xpad(x, h, w, buf);
        let ypad = &mut work.ypad;
        ypad.resize(self.out_ch * plane, 0.0);
        for oc in 0..self.out_ch {
            let yo = &mut ypad[oc * plane..(oc + 1) * plane];
            yo.fill(self.bias[oc]);
            for ic in 0..self.in_ch {
                let xbase = ic * ph * pw;
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.weight[((oc * self.in_ch + ic) * self.k + ky) * self.k + kx];
                        let shift = xbase + ky * pw + kx;
                        axpy(wv, &buf[shift..shift + plane], yo);
                    }
                }
            }
        }
        y.clear();
        y.resize(self.out_ch * h * w, 0.0);
        for oc in 0..self.out_ch {
            for row in 0..h {
                let src = oc * plane + row * pw;
                let dst = oc * h * w + row * w;
                y[dst..dst + w].copy_from_slice(&ypad[src..src + w]);
            }
        }
    }

    fn forward_im2col(&self, x: &[f64], h: usize, w: usize, col: &mut Vec<f64>, y: &mut Vec<f64>) {
        let (oh, ow) = self.out_hw(h, w);
        let spatial = oh * ow;
        self.im2col(x, h, w, col);
        y.clear();
        y.resize(self.out_ch * spatial, 0.0);
        let rows = self.patch_rows();
        for oc in 0..self.out_ch {
            let yo = &mut y[oc * spatial..(oc + 1) * spatial];
            yo.fill(self.bias[oc]);
            let wo = &self.weight[oc * rows..(oc + 1) * rows];
            for (kk, &wv) in wo.iter().enumerate() {
                axpy(wv, &col[kk * spatial..(kk + 1) * spatial], yo);
            }
        }
    }

    /// Backward pass from `dy`; accumulates into `dw`/`db` and, when
    /// `dx` is given, writes the input gradient. `buf` is the buffer the
    /// forward pass filled.
    pub fn backward(
        &self,
        buf: &[f64],
        dy: &[f64],
        h: usize,
        w: usize,
        dw: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut [f64]>,
        work: &mut ConvWork,
    ) {
        debug_assert_eq!(dw.len(), self.weight.len());
        debug_assert_eq!(db.len(), self.bias.len());
        if !self.fast_path() {
            return self.backward_im2col(buf, dy, h, w, dw, db, dx);
        }
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        let plane = h * pw;
        // dy with rows padded by zeros; the zeros silence the garbage that
        // shifted reads would otherwise pick up from the pad columns
        let dypad = &mut work.dypad;
        dypad.clear();
        dypad.resize(self.out_ch * plane + Self::SLACK, 0.0);
        for oc in 0..self.out_ch {
            let dyo = &dy[oc * h * w..(oc + 1) * h * w];
            db[oc] += dyo.iter().sum::<f64>();
            for row in 0..h {
                let dst = oc * plane + row * pw;
                dypad[dst..dst + w].copy_from_slice(&dyo[row * w..(row + 1) * w]);
            }
        }
        for oc in 0..self.out_ch {
            let dyo = &dypad[oc * plane..(oc + 1) * plane];
            for ic in 0..self.in_ch {
                let xbase = ic * ph * pw;
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let shift = xbase + ky * pw + kx;
                        dw[((oc * self.in_ch + ic) * self.k + ky) * self.k + kx] +=
                            dot(dyo, &buf[shift..shift + plane]);
                    }
                }
            }
        }
        if let Some(dx) = dx {
            debug_assert_eq!(dx.len(), self.in_ch * h * w);
            let dxpad = &mut work.dxpad;
            dxpad.clear();
            dxpad.resize(self.in_ch * ph * pw + Self::SLACK, 0.0);
            for ic in 0..self.in_ch {
                let xbase = ic * ph * pw;
                for oc in 0..self.out_ch {
                    let dyo = &dypad[oc * plane..oc * plane + plane];
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            let wv =
                                self.weight[((oc * self.in_ch + ic) * self.k + ky) * self.k + kx];
                            let shift = xbase + ky * pw + kx;
                            axpy(wv, dyo, &mut dxpad[shift..shift + plane]);
                        }
                    }
                }
            }
            for ic in 0..self.in_ch {
                for row in 0..h {
                    let src = ic * ph * pw + (row + self.pad) * pw + self.pad;
                    let dst = ic * h * w + row * w;
                    dx[dst..dst + w].copy_from_slice(&dxpad[src..src + w]);
                }
            }
        }
    }

    fn backward_im2col(
        &self,
        col: &[f64],
        dy: &[f64],
        h: usize,
        w: usize,
        dw: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let (oh, ow) = self.out_hw(h, w);
        let spatial = oh * ow;
        let rows = self.patch_rows();

        for oc in 0..self.out_ch {
            let dyo = &dy[oc * spatial..(oc + 1) * spatial];
            db[oc] += dyo.iter().sum::<f64>();
            let dwo = &mut dw[oc * rows..(oc + 1) * rows];
            for (kk, dwv) in dwo.iter_mut().enumerate() {
                *dwv += dot(dyo, &col[kk * spatial..(kk + 1) * spatial]);
            }
        }

        if let Some(dx) = dx {
            debug_assert_eq!(dx.len(), self.in_ch * h * w);
            let mut dcol = vec![0.0; rows * spatial];
            for oc in 0..self.out_ch {
                let dyo = &dy[oc * spatial..(oc + 1) * spatial];
                let wo = &self.weight[oc * rows..(oc + 1) * rows];
                for (kk, &wv) in wo.iter().enumerate() {
                    axpy(wv, dyo, &mut dcol[kk * spatial..(kk + 1) * spatial]);
                }
            }
            self.col2im(&dcol, h, w, dx);
        }
    }

    /// Fold `dcol` (`[in_ch*k*k][oh*ow]`) back onto the input grid.
    fn col2im(&self, dcol: &[f64], h: usize, w: usize, dx: &mut [f64]) {
        let (oh, ow) = self.out_hw(h, w);
        let spatial = oh * ow;
        dx.fill(0.0);
        for ic in 0..self.in_ch {
            let xc = &mut dx[ic * h * w..(ic + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ic * self.k + ky) * self.k + kx) * spatial;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let src = &dcol[row + oy * ow..row + (oy + 1) * ow];
                        let dst_row = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &sv) in src.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst_row[ix as usize] += sv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed 2D convolution (stride-2 upsampling in the autoencoder).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    /// `[in_ch][out_ch][k][k]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvTranspose2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Self {
        ConvTranspose2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            out_pad,
            weight: vec![0.0; in_ch * out_ch * k * k],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k + self.out_pad - 2 * self.pad,
            (w - 1) * self.stride + self.k + self.out_pad - 2 * self.pad,
        )
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize, y: &mut Vec<f64>) {
        let (oh, ow) = self.out_hw(h, w);
        y.clear();
        y.resize(self.out_ch * oh * ow, 0.0);
        for oc in 0..self.out_ch {
            y[oc * oh * ow..(oc + 1) * oh * ow].fill(self.bias[oc]);
        }
        for ic in 0..self.in_ch {
            let xc = &x[ic * h * w..(ic + 1) * h * w];
            for oc in 0..self.out_ch {
                let wic = &self.weight
                    [(ic * self.out_ch + oc) * self.k * self.k..(ic * self.out_ch + oc + 1) * self.k * self.k];
                let yo = &mut y[oc * oh * ow..(oc + 1) * oh * ow];
                for iy in 0..h {
                    for ix in 0..w {
                        let xv = xc[iy * w + ix];
                        if xv == 0.0 {
                            continue;
                        }
                        for ky in 0..self.k {
                            let oy = (iy * self.stride + ky) as isize - self.pad as isize;
                            if oy < 0 || oy as usize >= oh {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ox = (ix * self.stride + kx) as isize - self.pad as isize;
                                if ox >= 0 && (ox as usize) < ow {
                                    yo[oy as usize * ow + ox as usize] += xv * wic[ky * self.k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        h: usize,
        w: usize,
        dw: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let (oh, ow) = self.out_hw(h, w);
        for oc in 0..self.out_ch {
            db[oc] += dy[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
        }
        if let Some(dx) = &dx {
            debug_assert_eq!(dx.len(), self.in_ch * h * w);
        }
        let mut dx = dx;
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(0.0);
        }
        for ic in 0..self.in_ch {
            let xc = &x[ic * h * w..(ic + 1) * h * w];
            for oc in 0..self.out_ch {
                let wbase = (ic * self.out_ch + oc) * self.k * self.k;
                let dyo = &dy[oc * oh * ow..(oc + 1) * oh * ow];
                for iy in 0..h {
                    for ix in 0..w {
                        let xv = xc[iy * w + ix];
                        let mut dxv = 0.0;
                        for ky in 0..self.k {
                            let oy = (iy * self.stride + ky) as isize - self.pad as isize;
                            if oy < 0 || oy as usize >= oh {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ox = (ix * self.stride + kx) as isize - self.pad as isize;
                                if ox >= 0 && (ox as usize) < ow {
                                    let g = dyo[oy as usize * ow + ox as usize];
                                    dw[wbase + ky * self.k + kx] += xv * g;
                                    dxv += self.weight[wbase + ky * self.k + kx] * g;
                                }
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[ic * h * w + iy * w + ix] += dxv;
                        }
                    }
                }
            }
        }
    }
}

/// Fully connected layer, weight `[out][in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Linear { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn forward(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        y.reserve(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            y.push(dot(row, x) + self.bias[o]);
        }
    }

    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        for o in 0..self.out_dim {
            db[o] += dy[o];
            axpy(dy[o], x, &mut dw[o * self.in_dim..(o + 1) * self.in_dim]);
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for o in 0..self.out_dim {
                axpy(dy[o], &self.weight[o * self.in_dim..(o + 1) * self.in_dim], dx);
            }
        }
    }
}

/// 2x2 max-pool with stride 2. `idx` records the winning flat offset.
pub fn maxpool2_forward(
    x: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    y: &mut Vec<f64>,
    idx: &mut Vec<usize>,
) {
    let (oh, ow) = (h / 2, w / 2);
    y.clear();
    idx.clear();
    y.reserve(ch * oh * ow);
    idx.reserve(ch * oh * ow);
    for c in 0..ch {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (2 * oy) * w + 2 * ox;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                for &p in &cand[1..] {
                    if xc[p] > xc[best] {
                        best = p;
                    }
                }
                y.push(xc[best]);
                idx.push(c * h * w + best);
            }
        }
    }
}

pub fn maxpool2_backward(dy: &[f64], idx: &[usize], dx: &mut [f64]) {
    dx.fill(0.0);
    for (&i, &g) in idx.iter().zip(dy) {
        dx[i] += g;
    }
}

pub fn relu_forward(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward through ReLU given the post-activation values.
pub fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid_forward(x: &mut [f64]) {
    for v in x {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

/// Backward through sigmoid given the post-activation values.
pub fn sigmoid_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        *g *= v * (1.0 - v);
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Cross-entropy loss and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -(p[label].max(1e-300)).ln();
    let mut dlogits = p;
    dlogits[label] -= 1.0;
    (loss, dlogits)
}


// benchmarking shims (examples cannot reach pub(crate) items)
#[doc(hidden)]
pub fn bench_axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    axpy(alpha, x, y);
}

#[doc(hidden)]
pub fn bench_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}
