//! Forward and backward kernels over channel-major batch activations.

use super::spec::Shape;

/// Batch activations, channel-major: element `(c, b, y, x)` lives at
/// `((c * n + b) * h + y) * w + x`. Dense activations use `h = w = 1`, which
/// makes them a `features × batch` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Activations {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Activations {
            c,
            n,
            h,
            w,
            data: vec![0.0; c * n * h * w],
        }
    }

    pub fn shape(&self) -> Shape {
        Shape {
            c: self.c,
            h: self.h,
            w: self.w,
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Packs per-sample `c×h×w` vectors into a batch.
    pub fn from_samples<'a>(shape: Shape, samples: impl ExactSizeIterator<Item = &'a [f32]>) -> Self {
        let n = samples.len();
        let hw = shape.h * shape.w;
        let mut out = Activations::zeros(shape.c, n, shape.h, shape.w);
        for (b, s) in samples.enumerate() {
            debug_assert_eq!(s.len(), shape.len());
            for ch in 0..shape.c {
                let dst = (ch * n + b) * hw;
                out.data[dst..dst + hw].copy_from_slice(&s[ch * hw..(ch + 1) * hw]);
            }
        }
        out
    }

    /// Inverse of [`Activations::from_samples`] for one sample.
    pub fn sample(&self, b: usize) -> Vec<f32> {
        let hw = self.plane();
        let mut out = Vec::with_capacity(self.c * hw);
        for ch in 0..self.c {
            let src = (ch * self.n + b) * hw;
            out.extend_from_slice(&self.data[src..src + hw]);
        }
        out
    }
}

/// `C = A·B + beta·C` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Floats allowed in one im2col buffer.
const COL_BUDGET: usize = 1 << 23;

fn images_per_chunk(rows: usize, plane: usize, n: usize) -> usize {
    (COL_BUDGET / (rows * plane).max(1)).clamp(1, n.max(1))
}

fn im2col(x: &Activations, n0: usize, n1: usize, k: usize, cols: &mut [f32]) {
    let (h, w, hw) = (x.h, x.w, x.plane());
    let pad = (k / 2) as isize;
    let ncols = (n1 - n0) * hw;
    for ci in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let row = &mut cols[r * ncols..(r + 1) * ncols];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                for b in n0..n1 {
                    let plane = &x.data[(ci * x.n + b) * hw..(ci * x.n + b + 1) * hw];
                    for y in 0..h {
                        let dst = &mut row[(b - n0) * hw + y * w..(b - n0) * hw + (y + 1) * w];
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        dst[..x_lo].fill(0.0);
                        dst[x_hi..].fill(0.0);
                        let s0 = (x_lo as isize + dx) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], n0: usize, n1: usize, k: usize, dx_out: &mut Activations) {
    let (h, w, hw) = (dx_out.h, dx_out.w, dx_out.plane());
    let pad = (k / 2) as isize;
    let ncols = (n1 - n0) * hw;
    let nb = dx_out.n;
    for ci in 0..dx_out.c {
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let row = &cols[r * ncols..(r + 1) * ncols];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for b in n0..n1 {
                    let base = (ci * nb + b) * hw;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[(b - n0) * hw + y * w + x_lo..(b - n0) * hw + y * w + x_hi];
                        let s0 = base + sy as usize * w + (x_lo as isize + dx) as usize;
                        for (d, s) in dx_out.data[s0..s0 + src.len()].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 "same" convolution. `weight` is `filters × (c·k·k)`.
pub(crate) fn conv_forward(x: &Activations, weight: &[f32], bias: &[f32], filters: usize, k: usize) -> Activations {
    let rows = x.c * k * k;
    let hw = x.plane();
    let mut y = Activations::zeros(filters, x.n, x.h, x.w);
    let chunk = images_per_chunk(rows, hw, x.n);
    let mut cols = vec![0.0f32; rows * chunk * hw];
    let total = x.n * hw;
    let mut n0 = 0;
    while n0 < x.n {
        let n1 = (n0 + chunk).min(x.n);
        let ncols = (n1 - n0) * hw;
        im2col(x, n0, n1, k, &mut cols[..rows * ncols]);
        gemm(
            filters,
            rows,
            ncols,
            weight,
            rows,
            1,
            &cols[..rows * ncols],
            ncols,
            1,
            0.0,
            &mut y.data[n0 * hw..],
            total,
            1,
        );
        n0 = n1;
    }
    for (f, row) in y.data.chunks_mut(total).enumerate() {
        let b = bias[f];
        row.iter_mut().for_each(|v| *v += b);
    }
    y
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &Activations,
    dy: &Activations,
    weight: &[f32],
    filters: usize,
    k: usize,
    mut param_grads: Option<(&mut [f32], &mut [f32])>,
    need_dx: bool,
) -> Option<Activations> {
    let rows = x.c * k * k;
    let hw = x.plane();
    let total = x.n * hw;
    if let Some((_, dbias)) = param_grads.as_mut() {
        for (f, row) in dy.data.chunks(total).enumerate() {
            dbias[f] += row.iter().sum::<f32>();
        }
    }
    let chunk = images_per_chunk(rows, hw, x.n);
    let mut cols = vec![0.0f32; rows * chunk * hw];
    let mut dx = need_dx.then(|| Activations::zeros(x.c, x.n, x.h, x.w));
    let mut n0 = 0;
    while n0 < x.n {
        let n1 = (n0 + chunk).min(x.n);
        let ncols = (n1 - n0) * hw;
        if let Some((dweight, _)) = param_grads.as_mut() {
            im2col(x, n0, n1, k, &mut cols[..rows * ncols]);
            // dW += dY_chunk · colsᵀ
            gemm(
                filters,
                ncols,
                rows,
                &dy.data[n0 * hw..],
                total,
                1,
                &cols[..rows * ncols],
                1,
                ncols,
                1.0,
                dweight,
                rows,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY_chunk
            gemm(
                rows,
                filters,
                ncols,
                weight,
                1,
                rows,
                &dy.data[n0 * hw..],
                total,
                1,
                0.0,
                &mut cols[..rows * ncols],
                ncols,
                1,
            );
            col2im(&cols[..rows * ncols], n0, n1, k, dx);
        }
        n0 = n1;
    }
    dx
}

pub(crate) fn relu_forward(mut x: Activations) -> (Activations, Vec<bool>) {
    let mask = x.data.iter().map(|&v| v > 0.0).collect();
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
    (x, mask)
}

pub(crate) fn relu_backward(mut dy: Activations, mask: &[bool]) -> Activations {
    for (g, &m) in dy.data.iter_mut().zip(mask) {
        if !m {
            *g = 0.0;
        }
    }
    dy
}

/// Output side and leading pad of a "same"-padded pool.
fn pool_geometry(side: usize, pool: usize, stride: usize) -> (usize, usize) {
    let out = side.div_ceil(stride);
    let pad_total = ((out - 1) * stride + pool).saturating_sub(side);
    (out, pad_total / 2)
}

pub(crate) fn maxpool_forward(x: &Activations, pool: usize, stride: usize) -> (Activations, Vec<u32>) {
    let (oh, pad_y) = pool_geometry(x.h, pool, stride);
    let (ow, pad_x) = pool_geometry(x.w, pool, stride);
    let mut y = Activations::zeros(x.c, x.n, oh, ow);
    let mut argmax = vec![0u32; y.data.len()];
    let (ihw, ohw) = (x.plane(), oh * ow);
    for p in 0..x.c * x.n {
        let src = &x.data[p * ihw..(p + 1) * ihw];
        for oy in 0..oh {
            let y0 = (oy * stride).saturating_sub(pad_y);
            let y1 = (oy * stride + pool - pad_y).min(x.h);
            for ox in 0..ow {
                let x0 = (ox * stride).saturating_sub(pad_x);
                let x1 = (ox * stride + pool - pad_x).min(x.w);
                let mut best = f32::NEG_INFINITY;
                let mut at = y0 * x.w + x0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        let v = src[yy * x.w + xx];
                        if v > best {
                            best = v;
                            at = yy * x.w + xx;
                        }
                    }
                }
                y.data[p * ohw + oy * ow + ox] = best;
                argmax[p * ohw + oy * ow + ox] = at as u32;
            }
        }
    }
    (y, argmax)
}

pub(crate) fn maxpool_backward(dy: &Activations, argmax: &[u32], in_shape: Shape) -> Activations {
    let mut dx = Activations::zeros(in_shape.c, dy.n, in_shape.h, in_shape.w);
    let (ihw, ohw) = (dx.plane(), dy.plane());
    for p in 0..dy.c * dy.n {
        for o in 0..ohw {
            dx.data[p * ihw + argmax[p * ohw + o] as usize] += dy.data[p * ohw + o];
        }
    }
    dx
}

pub const BN_EPSILON: f32 = 1e-3;
pub const BN_MOMENTUM: f32 = 0.9;

/// Training-mode batch normalization; updates the running statistics.
/// Returns the output, the normalized input and per-channel `1/σ`.
pub(crate) fn batchnorm_forward_train(
    x: &Activations,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
) -> (Activations, Vec<f32>, Vec<f32>) {
    let m = x.n * x.plane();
    let mut y = x.clone();
    let mut x_hat = vec![0.0f32; x.data.len()];
    let mut inv_std = vec![0.0f32; x.c];
    for ch in 0..x.c {
        let seg = &x.data[ch * m..(ch + 1) * m];
        let mean = seg.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
        let var = seg.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m as f64;
        let is = 1.0 / (var + BN_EPSILON as f64).sqrt();
        inv_std[ch] = is as f32;
        for i in 0..m {
            let xh = ((seg[i] as f64 - mean) * is) as f32;
            x_hat[ch * m + i] = xh;
            y.data[ch * m + i] = gamma[ch] * xh + beta[ch];
        }
        let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
        running_mean[ch] = BN_MOMENTUM * running_mean[ch] + (1.0 - BN_MOMENTUM) * mean as f32;
        running_var[ch] = BN_MOMENTUM * running_var[ch] + (1.0 - BN_MOMENTUM) * unbiased as f32;
    }
    (y, x_hat, inv_std)
}

pub(crate) fn batchnorm_backward_train(
    dy: &Activations,
    x_hat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
    need_dx: bool,
) -> Option<Activations> {
    let m = dy.n * dy.plane();
    let mut dx = need_dx.then(|| Activations::zeros(dy.c, dy.n, dy.h, dy.w));
    for ch in 0..dy.c {
        let g = &dy.data[ch * m..(ch + 1) * m];
        let xh = &x_hat[ch * m..(ch + 1) * m];
        let sum_g: f64 = g.iter().map(|&v| v as f64).sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum();
        dgamma[ch] += sum_gx as f32;
        dbeta[ch] += sum_g as f32;
        if let Some(dx) = dx.as_mut() {
            let scale = gamma[ch] as f64 * inv_std[ch] as f64 / m as f64;
            for i in 0..m {
                dx.data[ch * m + i] =
                    (scale * (m as f64 * g[i] as f64 - sum_g - xh[i] as f64 * sum_gx)) as f32;
            }
        }
    }
    dx
}

pub(crate) fn batchnorm_forward_infer(
    mut x: Activations,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) -> Activations {
    let m = x.n * x.plane();
    for ch in 0..x.c {
        let is = 1.0 / (running_var[ch] + BN_EPSILON).sqrt();
        let (g, b, mu) = (gamma[ch] * is, beta[ch], running_mean[ch]);
        x.data[ch * m..(ch + 1) * m]
            .iter_mut()
            .for_each(|v| *v = g * (*v - mu) + b);
    }
    x
}

pub(crate) fn batchnorm_backward_infer(mut dy: Activations, gamma: &[f32], running_var: &[f32]) -> Activations {
    let m = dy.n * dy.plane();
    for ch in 0..dy.c {
        let s = gamma[ch] / (running_var[ch] + BN_EPSILON).sqrt();
        dy.data[ch * m..(ch + 1) * m].iter_mut().for_each(|v| *v *= s);
    }
    dy
}

/// `features × batch` from channel-major activations.
pub(crate) fn flatten_forward(x: &Activations) -> Activations {
    let hw = x.plane();
    let features = x.c * hw;
    let mut y = Activations::zeros(features, x.n, 1, 1);
    for ch in 0..x.c {
        for b in 0..x.n {
            let src = &x.data[(ch * x.n + b) * hw..(ch * x.n + b + 1) * hw];
            for (i, &v) in src.iter().enumerate() {
                y.data[(ch * hw + i) * x.n + b] = v;
            }
        }
    }
    y
}

pub(crate) fn flatten_backward(dy: &Activations, in_shape: Shape) -> Activations {
    let hw = in_shape.h * in_shape.w;
    let n = dy.n;
    let mut dx = Activations::zeros(in_shape.c, n, in_shape.h, in_shape.w);
    for ch in 0..in_shape.c {
        for b in 0..n {
            let dst = &mut dx.data[(ch * n + b) * hw..(ch * n + b + 1) * hw];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = dy.data[(ch * hw + i) * n + b];
            }
        }
    }
    dx
}

/// `Y = W·X + b` with `W` of shape `units × features`.
pub(crate) fn dense_forward(x: &Activations, weight: &[f32], bias: &[f32], units: usize) -> Activations {
    let (features, n) = (x.c, x.n);
    let mut y = Activations::zeros(units, n, 1, 1);
    gemm(units, features, n, weight, features, 1, &x.data, n, 1, 0.0, &mut y.data, n, 1);
    for (u, row) in y.data.chunks_mut(n.max(1)).enumerate().take(units) {
        row.iter_mut().for_each(|v| *v += bias[u]);
    }
    y
}

pub(crate) fn dense_backward(
    x: &Activations,
    dy: &Activations,
    weight: &[f32],
    dweight: &mut [f32],
    dbias: &mut [f32],
    need_dx: bool,
) -> Option<Activations> {
    let (features, n, units) = (x.c, x.n, dy.c);
    for (u, row) in dy.data.chunks(n.max(1)).enumerate().take(units) {
        dbias[u] += row.iter().sum::<f32>();
    }
    gemm(units, n, features, &dy.data, n, 1, &x.data, 1, n, 1.0, dweight, features, 1);
    need_dx.then(|| {
        let mut dx = Activations::zeros(features, n, 1, 1);
        gemm(features, units, n, weight, 1, features, &dy.data, n, 1, 0.0, &mut dx.data, n, 1);
        dx
    })
}

/// Column-wise softmax of a `classes × batch` matrix.
pub(crate) fn softmax_columns(x: &Activations) -> Activations {
    let (c, n) = (x.c, x.n);
    let mut y = x.clone();
    for b in 0..n {
        let max = (0..c).map(|i| x.data[i * n + b]).fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for i in 0..c {
            let e = ((x.data[i * n + b] - max) as f64).exp();
            y.data[i * n + b] = e as f32;
            sum += e;
        }
        for i in 0..c {
            y.data[i * n + b] = (y.data[i * n + b] as f64 / sum) as f32;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-loop convolution used as an oracle for the im2col path.
    fn conv_naive(x: &Activations, w: &[f32], bias: &[f32], f: usize, k: usize) -> Activations {
        let mut y = Activations::zeros(f, x.n, x.h, x.w);
        let pad = (k / 2) as isize;
        for o in 0..f {
            for b in 0..x.n {
                for yy in 0..x.h {
                    for xx in 0..x.w {
                        let mut acc = bias[o];
                        for ci in 0..x.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = yy as isize + ky as isize - pad;
                                    let sx = xx as isize + kx as isize - pad;
                                    if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((ci * x.n + b) * x.h + sy as usize) * x.w + sx as usize];
                                    acc += w[o * x.c * k * k + (ci * k + ky) * k + kx] * xv;
                                }
                            }
                        }
                        y.data[((o * x.n + b) * x.h + yy) * x.w + xx] = acc;
                    }
                }
            }
        }
        y
    }

    fn pseudo(n: usize, salt: u32) -> Vec<f32> {
        (0..n)
            .map(|i| {
                let v = (i as u32).wrapping_mul(2654435761).wrapping_add(salt.wrapping_mul(40503));
                (v % 1000) as f32 / 500.0 - 1.0
            })
            .collect()
    }

    fn acts(c: usize, n: usize, h: usize, w: usize, salt: u32) -> Activations {
        Activations {
            c,
            n,
            h,
            w,
            data: pseudo(c * n * h * w, salt),
        }
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = acts(3, 2, 7, 5, 1);
        let (f, k) = (4, 3);
        let w = pseudo(f * 3 * k * k, 2);
        let b = pseudo(f, 3);
        let fast = conv_forward(&x, &w, &b, f, k);
        let slow = conv_naive(&x, &w, &b, f, k);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = acts(2, 2, 5, 4, 5);
        let (f, k) = (3, 3);
        let w = pseudo(f * 2 * k * k, 6);
        let b = pseudo(f, 7);
        let g = acts(f, 2, 5, 4, 8);
        // Loss = Σ g ⊙ conv(x)
        let loss = |x: &Activations, w: &[f32]| -> f64 {
            conv_naive(x, w, &b, f, k)
                .data
                .iter()
                .zip(&g.data)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; f];
        let dx = conv_backward(&x, &g, &w, f, k, Some((&mut dw, &mut db)), true).unwrap();
        let h = 1e-2f32;
        for i in [0, 5, 17, w.len() - 1] {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h as f64);
            assert!((fd - dw[i] as f64).abs() < 1e-2, "dw[{i}] {fd} vs {}", dw[i]);
        }
        for i in [0, 9, 33, x.data.len() - 1] {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h as f64);
            assert!((fd - dx.data[i] as f64).abs() < 1e-2, "dx[{i}] {fd} vs {}", dx.data[i]);
        }
        let total: f32 = g.data[..2 * 5 * 4].iter().sum();
        assert!((db[0] - total).abs() < 1e-4);
    }

    #[test]
    fn pool_same_padding_geometry() {
        assert_eq!(pool_geometry(64, 3, 2), (32, 0));
        assert_eq!(pool_geometry(227, 3, 2), (114, 1));
        assert_eq!(pool_geometry(1, 2, 2), (1, 0));
        let x = Activations {
            c: 1,
            n: 1,
            h: 4,
            w: 4,
            data: (0..16).map(|v| v as f32).collect(),
        };
        let (y, arg) = maxpool_forward(&x, 2, 2);
        assert_eq!(y.data, vec![5.0, 7.0, 13.0, 15.0]);
        let dx = maxpool_backward(&Activations { data: vec![1.0; 4], ..y }, &arg, x.shape());
        assert_eq!(dx.data.iter().sum::<f32>(), 4.0);
        assert_eq!(dx.data[15], 1.0);
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let x = acts(2, 3, 2, 2, 11);
        let g = acts(2, 3, 2, 2, 12);
        let gamma = vec![1.3, 0.7];
        let beta = vec![0.1, -0.2];
        let loss = |x: &Activations| -> f64 {
            let (y, _, _) = batchnorm_forward_train(x, &gamma, &beta, &mut [0.0; 2], &mut [1.0; 2]);
            y.data.iter().zip(&g.data).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let (_, xh, is) = batchnorm_forward_train(&x, &gamma, &beta, &mut [0.0; 2], &mut [1.0; 2]);
        let (mut dg, mut db) = (vec![0.0; 2], vec![0.0; 2]);
        let dx = batchnorm_backward_train(&g, &xh, &is, &gamma, &mut dg, &mut db, true).unwrap();
        let h = 1e-2f32;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h as f64);
            assert!((fd - dx.data[i] as f64).abs() < 5e-3, "dx[{i}] {fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let x = acts(3, 2, 2, 3, 4);
        let f = flatten_forward(&x);
        assert_eq!((f.c, f.n), (18, 2));
        assert_eq!(flatten_backward(&f, x.shape()), x);
        // Sample 1's features are its CHW vector.
        let col: Vec<f32> = (0..18).map(|i| f.data[i * 2 + 1]).collect();
        assert_eq!(col, x.sample(1));
    }

    #[test]
    fn dense_matches_matrix_product() {
        let x = acts(3, 2, 1, 1, 9);
        let w = pseudo(6, 10);
        let b = vec![0.5, -0.5];
        let y = dense_forward(&x, &w, &b, 2);
        for u in 0..2 {
            for n in 0..2 {
                let want: f32 = (0..3).map(|f| w[u * 3 + f] * x.data[f * 2 + n]).sum::<f32>() + b[u];
                assert!((y.data[u * 2 + n] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_columns_normalize() {
        let x = Activations {
            c: 3,
            n: 2,
            h: 1,
            w: 1,
            data: vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0],
        };
        let p = softmax_columns(&x);
        for b in 0..2 {
            let s: f32 = (0..3).map(|i| p.data[i * 2 + b]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!((p.data[1] - 1.0 / 3.0).abs() < 1e-6);
    }
}
