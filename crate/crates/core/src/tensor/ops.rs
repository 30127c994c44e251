//! Raw numeric kernels. Pure functions over channels-last arrays; the tape
//! wraps these with shape checks and gradient bookkeeping.

use ndarray::{Array2, ArrayD, ArrayView2};

use super::{Elem, Tensor};

/// Epsilon inside layer normalization denominators.
pub const LN_EPS: f64 = 1e-6;
/// Epsilon inside global response normalization denominators.
pub const GRN_EPS: f64 = 1e-6;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Spatial size after an unpadded k-stride-s convolution, if it tiles exactly.
pub fn conv_out_size(input: usize, k: usize, stride: usize) -> Option<usize> {
    if input < k || (input - k) % stride != 0 {
        return None;
    }
    Some((input - k) / stride + 1)
}

/// Borrow a standard-layout tensor as an (N, cols) matrix view.
pub fn as_2d<E: Elem>(x: &Tensor<E>, cols: usize) -> ArrayView2<'_, E> {
    let n = x.len() / cols;
    ArrayView2::from_shape((n, cols), x.as_slice().expect("standard layout"))
        .expect("len divisible by cols")
}

fn hwc<E: Elem>(x: &Tensor<E>) -> (usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2])
}

/// Layer normalization over the last axis: per row, `(x - mean) / sqrt(var + eps) * gamma + beta`.
pub fn layer_norm_fwd<E: Elem>(x: &Tensor<E>, gamma: &[E], beta: &[E], eps: f64) -> Tensor<E> {
    let c = *x.shape().last().expect("non-scalar input");
    let xs = x.as_slice().expect("standard layout");
    let mut out = vec![E::zero(); xs.len()];
    let epsv = E::from_f64(eps);
    let inv_c = E::from_f64(1.0 / c as f64);
    for (row, orow) in xs.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let mut mean = E::zero();
        for &v in row {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = E::zero();
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_c;
        let inv_std = (var + epsv).sqrt().recip();
        for i in 0..c {
            orow[i] = (row[i] - mean) * inv_std * gamma[i] + beta[i];
        }
    }
    ArrayD::from_shape_vec(x.raw_dim(), out).expect("shape preserved")
}

/// Backward of [`layer_norm_fwd`]; recomputes row statistics instead of caching them.
pub fn layer_norm_bwd<E: Elem>(
    x: &Tensor<E>,
    gamma: &[E],
    dy: &Tensor<E>,
    eps: f64,
) -> (Tensor<E>, Vec<E>, Vec<E>) {
    let c = *x.shape().last().expect("non-scalar input");
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut dx = vec![E::zero(); xs.len()];
    let mut dgamma = vec![E::zero(); c];
    let mut dbeta = vec![E::zero(); c];
    let epsv = E::from_f64(eps);
    let inv_c = E::from_f64(1.0 / c as f64);
    let mut xhat = vec![E::zero(); c];
    for ((row, dyrow), dxrow) in xs
        .chunks_exact(c)
        .zip(dys.chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
    {
        let mut mean = E::zero();
        for &v in row {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = E::zero();
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_c;
        let inv_std = (var + epsv).sqrt().recip();
        let mut g_mean = E::zero();
        let mut gx_mean = E::zero();
        for i in 0..c {
            let xh = (row[i] - mean) * inv_std;
            xhat[i] = xh;
            let g = dyrow[i] * gamma[i];
            g_mean += g;
            gx_mean += g * xh;
            dgamma[i] += dyrow[i] * xh;
            dbeta[i] += dyrow[i];
        }
        g_mean = g_mean * inv_c;
        gx_mean = gx_mean * inv_c;
        for i in 0..c {
            let g = dyrow[i] * gamma[i];
            dxrow[i] = (g - g_mean - xhat[i] * gx_mean) * inv_std;
        }
    }
    (
        ArrayD::from_shape_vec(x.raw_dim(), dx).expect("shape preserved"),
        dgamma,
        dbeta,
    )
}

/// GELU, tanh approximation: `0.5 x (1 + tanh(k (x + a x^3)))`.
pub fn gelu_fwd<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    let k = E::from_f64(GELU_K);
    let a = E::from_f64(GELU_A);
    let half = E::from_f64(0.5);
    x.mapv(|v| half * v * (E::one() + (k * (v + a * v * v * v)).tanh_fast()))
}

/// Backward of [`gelu_fwd`], using the closed-form derivative of the tanh approximation.
pub fn gelu_bwd<E: Elem>(x: &Tensor<E>, dy: &Tensor<E>) -> Tensor<E> {
    let k = E::from_f64(GELU_K);
    let a3 = E::from_f64(3.0 * GELU_A);
    let a = E::from_f64(GELU_A);
    let half = E::from_f64(0.5);
    let mut dx = x.clone();
    dx.zip_mut_with(dy, |v, &g| {
        let u = k * (*v + a * *v * *v * *v);
        let t = u.tanh_fast();
        let du = k * (E::one() + a3 * *v * *v);
        let d = half * (E::one() + t) + half * *v * (E::one() - t * t) * du;
        *v = d * g;
    });
    dx
}

/// Global response normalization on an (H, W, C) map.
///
/// `gx[c]` is the spatial L2 norm per channel, `nx = gx / (mean_c gx + eps)`,
/// and the output is `gamma * (x * nx) + beta + x`.
pub fn grn_fwd<E: Elem>(x: &Tensor<E>, gamma: &[E], beta: &[E], eps: f64) -> Tensor<E> {
    let (h, w, c) = hwc(x);
    let xs = x.as_slice().expect("standard layout");
    let mut gx = vec![E::zero(); c];
    for px in xs.chunks_exact(c) {
        for i in 0..c {
            gx[i] += px[i] * px[i];
        }
    }
    let mut mean = E::zero();
    for g in gx.iter_mut() {
        *g = g.sqrt();
        mean += *g;
    }
    mean = mean * E::from_f64(1.0 / c as f64);
    let denom = (mean + E::from_f64(eps)).recip();
    let nx: Vec<E> = gx.iter().map(|&g| g * denom).collect();
    let mut out = vec![E::zero(); xs.len()];
    for (px, opx) in xs.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for i in 0..c {
            opx[i] = gamma[i] * (px[i] * nx[i]) + beta[i] + px[i];
        }
    }
    ArrayD::from_shape_vec(ndarray::IxDyn(&[h, w, c]), out).expect("shape preserved")
}

/// Backward of [`grn_fwd`].
pub fn grn_bwd<E: Elem>(
    x: &Tensor<E>,
    gamma: &[E],
    dy: &Tensor<E>,
    eps: f64,
) -> (Tensor<E>, Vec<E>, Vec<E>) {
    let (h, w, c) = hwc(x);
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");

    let mut gx = vec![E::zero(); c];
    for px in xs.chunks_exact(c) {
        for i in 0..c {
            gx[i] += px[i] * px[i];
        }
    }
    let mut mean = E::zero();
    for g in gx.iter_mut() {
        *g = g.sqrt();
        mean += *g;
    }
    let inv_c = E::from_f64(1.0 / c as f64);
    mean = mean * inv_c;
    let denom = mean + E::from_f64(eps);
    let inv_d = denom.recip();
    let nx: Vec<E> = gx.iter().map(|&g| g * inv_d).collect();

    let mut dgamma = vec![E::zero(); c];
    let mut dbeta = vec![E::zero(); c];
    // a[c] = dL/d(nx[c]) = sum_hw dy * gamma * x
    let mut a = vec![E::zero(); c];
    for (px, dpx) in xs.chunks_exact(c).zip(dys.chunks_exact(c)) {
        for i in 0..c {
            dgamma[i] += dpx[i] * px[i] * nx[i];
            dbeta[i] += dpx[i];
            a[i] += dpx[i] * gamma[i] * px[i];
        }
    }
    // nx[k] = gx[k] / D with D = mean_c(gx) + eps, so
    // dL/dgx[c] = a[c]/D - (sum_k a[k] gx[k]) / (C D^2)
    let mut ag = E::zero();
    for i in 0..c {
        ag += a[i] * gx[i];
    }
    let correction = ag * inv_c * inv_d * inv_d;
    let dgx: Vec<E> = (0..c).map(|i| a[i] * inv_d - correction).collect();
    // dgx/dx = x / gx (zero where the whole channel is zero)
    let scale: Vec<E> = (0..c)
        .map(|i| {
            if gx[i] > E::zero() {
                dgx[i] / gx[i]
            } else {
                E::zero()
            }
        })
        .collect();

    let mut dx = vec![E::zero(); xs.len()];
    for ((px, dpx), dxe) in xs
        .chunks_exact(c)
        .zip(dys.chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
    {
        for i in 0..c {
            dxe[i] = dpx[i] * (gamma[i] * nx[i] + E::one()) + px[i] * scale[i];
        }
    }
    (
        ArrayD::from_shape_vec(ndarray::IxDyn(&[h, w, c]), dx).expect("shape preserved"),
        dgamma,
        dbeta,
    )
}

/// Depthwise 7x7 convolution, stride 1, zero padding 3, channels-last.
/// `w` has shape (7, 7, C); `b` has length C.
pub fn dwconv7_fwd<E: Elem>(x: &Tensor<E>, w: &Tensor<E>, b: &[E]) -> Tensor<E> {
    let (h, wd, c) = hwc(x);
    let xs = x.as_slice().expect("standard layout");
    let ws = w.as_slice().expect("standard layout");
    let mut out = vec![E::zero(); xs.len()];
    for px in out.chunks_exact_mut(c) {
        px.copy_from_slice(b);
    }
    for ki in 0..7usize {
        for kj in 0..7usize {
            let di = ki as isize - 3;
            let dj = kj as isize - 3;
            let h0 = (-di).max(0) as usize;
            let h1 = ((h as isize - di).min(h as isize)).max(0) as usize;
            let w0 = (-dj).max(0) as usize;
            let w1 = ((wd as isize - dj).min(wd as isize)).max(0) as usize;
            if h0 >= h1 || w0 >= w1 {
                continue;
            }
            let wt = &ws[(ki * 7 + kj) * c..(ki * 7 + kj + 1) * c];
            let span = (w1 - w0) * c;
            for row in h0..h1 {
                let src_row = (row as isize + di) as usize;
                let src_off = (src_row * wd + (w0 as isize + dj) as usize) * c;
                let dst_off = (row * wd + w0) * c;
                let src = &xs[src_off..src_off + span];
                let dst = &mut out[dst_off..dst_off + span];
                for (dpx, spx) in dst.chunks_exact_mut(c).zip(src.chunks_exact(c)) {
                    for i in 0..c {
                        dpx[i] += spx[i] * wt[i];
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(ndarray::IxDyn(&[h, wd, c]), out).expect("shape preserved")
}

/// Backward of [`dwconv7_fwd`]; returns (dx, dw, db).
pub fn dwconv7_bwd<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    dy: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Vec<E>) {
    let (h, wd, c) = hwc(x);
    let xs = x.as_slice().expect("standard layout");
    let ws = w.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut dx = vec![E::zero(); xs.len()];
    let mut dw = vec![E::zero(); ws.len()];
    let mut db = vec![E::zero(); c];
    for px in dys.chunks_exact(c) {
        for i in 0..c {
            db[i] += px[i];
        }
    }
    for ki in 0..7usize {
        for kj in 0..7usize {
            let di = ki as isize - 3;
            let dj = kj as isize - 3;
            let h0 = (-di).max(0) as usize;
            let h1 = ((h as isize - di).min(h as isize)).max(0) as usize;
            let w0 = (-dj).max(0) as usize;
            let w1 = ((wd as isize - dj).min(wd as isize)).max(0) as usize;
            if h0 >= h1 || w0 >= w1 {
                continue;
            }
            let wt = &ws[(ki * 7 + kj) * c..(ki * 7 + kj + 1) * c];
            let dwt = &mut dw[(ki * 7 + kj) * c..(ki * 7 + kj + 1) * c];
            let span = (w1 - w0) * c;
            for row in h0..h1 {
                let src_row = (row as isize + di) as usize;
                let src_off = (src_row * wd + (w0 as isize + dj) as usize) * c;
                let dst_off = (row * wd + w0) * c;
                let dyrow = &dys[dst_off..dst_off + span];
                let xrow = &xs[src_off..src_off + span];
                let dxrow = &mut dx[src_off..src_off + span];
                for ((gpx, xpx), dxpx) in dyrow
                    .chunks_exact(c)
                    .zip(xrow.chunks_exact(c))
                    .zip(dxrow.chunks_exact_mut(c))
                {
                    for i in 0..c {
                        dxpx[i] += gpx[i] * wt[i];
                        dwt[i] += gpx[i] * xpx[i];
                    }
                }
            }
        }
    }
    (
        ArrayD::from_shape_vec(ndarray::IxDyn(&[h, wd, c]), dx).expect("shape preserved"),
        ArrayD::from_shape_vec(w.raw_dim(), dw).expect("shape preserved"),
        db,
    )
}

/// Extract non-overlapping (when s == k) patches: (H, W, C) -> (Ho*Wo, k*k*C).
pub fn gather_patches<E: Elem>(x: &Tensor<E>, k: usize, s: usize) -> Array2<E> {
    let (h, w, c) = hwc(x);
    let ho = conv_out_size(h, k, s).expect("validated upstream");
    let wo = conv_out_size(w, k, s).expect("validated upstream");
    let xs = x.as_slice().expect("standard layout");
    let row_len = k * k * c;
    let mut out = vec![E::zero(); ho * wo * row_len];
    for oh in 0..ho {
        for ow in 0..wo {
            let dst = &mut out[(oh * wo + ow) * row_len..(oh * wo + ow + 1) * row_len];
            for pi in 0..k {
                let src_off = ((oh * s + pi) * w + ow * s) * c;
                dst[pi * k * c..(pi + 1) * k * c].copy_from_slice(&xs[src_off..src_off + k * c]);
            }
        }
    }
    Array2::from_shape_vec((ho * wo, row_len), out).expect("shape computed")
}

/// Adjoint of [`gather_patches`]: scatter patch-space gradients back to (H, W, C).
pub fn scatter_patches<E: Elem>(
    dpatches: &Array2<E>,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    s: usize,
) -> Tensor<E> {
    let ho = conv_out_size(h, k, s).expect("validated upstream");
    let wo = conv_out_size(w, k, s).expect("validated upstream");
    let ds = dpatches.as_slice().expect("standard layout");
    let row_len = k * k * c;
    let mut out = vec![E::zero(); h * w * c];
    for oh in 0..ho {
        for ow in 0..wo {
            let src = &ds[(oh * wo + ow) * row_len..(oh * wo + ow + 1) * row_len];
            for pi in 0..k {
                let dst_off = ((oh * s + pi) * w + ow * s) * c;
                let dst = &mut out[dst_off..dst_off + k * c];
                for (d, &v) in dst.iter_mut().zip(&src[pi * k * c..(pi + 1) * k * c]) {
                    *d += v;
                }
            }
        }
    }
    ArrayD::from_shape_vec(ndarray::IxDyn(&[h, w, c]), out).expect("shape computed")
}

/// Numerically stable softmax of a logit slice.
pub fn softmax<E: Elem>(logits: &[E]) -> Vec<E> {
    let mut mx = logits[0];
    for &v in logits {
        if v > mx {
            mx = v;
        }
    }
    let mut exps: Vec<E> = logits.iter().map(|&v| (v - mx).exp()).collect();
    let mut sum = E::zero();
    for &e in &exps {
        sum += e;
    }
    let inv = sum.recip();
    for e in exps.iter_mut() {
        *e = *e * inv;
    }
    exps
}

/// Softmax cross-entropy `-log p[target]`, stabilized by max subtraction.
pub fn softmax_ce<E: Elem>(logits: &[E], target: usize) -> E {
    let mut mx = logits[0];
    for &v in logits {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = E::zero();
    for &v in logits {
        sum += (v - mx).exp();
    }
    sum.ln() - (logits[target] - mx)
}

/// Bilinear resize of an (H, W, C) map using half-pixel sample centers.
pub fn bilinear_resize<E: Elem>(x: &Tensor<E>, out_h: usize, out_w: usize) -> Tensor<E> {
    let (h, w, c) = hwc(x);
    if h == out_h && w == out_w {
        return x.clone();
    }
    let xs = x.as_slice().expect("standard layout");
    let mut out = vec![E::zero(); out_h * out_w * c];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let clamp = |v: f64, hi: usize| -> f64 { v.max(0.0).min((hi - 1) as f64) };
    for oy in 0..out_h {
        let fy = clamp((oy as f64 + 0.5) * sy - 0.5, h);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = E::from_f64(fy - y0 as f64);
        for ox in 0..out_w {
            let fx = clamp((ox as f64 + 0.5) * sx - 0.5, w);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = E::from_f64(fx - x0 as f64);
            let p00 = &xs[(y0 * w + x0) * c..(y0 * w + x0 + 1) * c];
            let p01 = &xs[(y0 * w + x1) * c..(y0 * w + x1 + 1) * c];
            let p10 = &xs[(y1 * w + x0) * c..(y1 * w + x0 + 1) * c];
            let p11 = &xs[(y1 * w + x1) * c..(y1 * w + x1 + 1) * c];
            let dst = &mut out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
            let one = E::one();
            for i in 0..c {
                let top = p00[i] * (one - wx) + p01[i] * wx;
                let bot = p10[i] * (one - wx) + p11[i] * wx;
                dst[i] = top * (one - wy) + bot * wy;
            }
        }
    }
    ArrayD::from_shape_vec(ndarray::IxDyn(&[out_h, out_w, c]), out).expect("shape computed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn conv_out_sizes() {
        assert_eq!(conv_out_size(224, 4, 4), Some(56));
        assert_eq!(conv_out_size(64, 4, 4), Some(16));
        assert_eq!(conv_out_size(4, 2, 2), Some(2));
        assert_eq!(conv_out_size(5, 2, 2), None);
        assert_eq!(conv_out_size(3, 7, 1), None);
    }

    #[test]
    fn layer_norm_zero_variance_collapses_to_beta() {
        let x = ArrayD::from_elem(IxDyn(&[2, 3]), 3.0f64);
        let gamma = vec![2.0; 3];
        let beta = vec![0.5, -0.5, 0.0];
        let y = layer_norm_fwd(&x, &gamma, &beta, LN_EPS);
        for row in y.as_slice().unwrap().chunks_exact(3) {
            assert!((row[0] - 0.5).abs() < 1e-9);
            assert!((row[1] + 0.5).abs() < 1e-9);
            assert!(row[2].abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_known_values() {
        let x = ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.0f64, 10.0, -10.0]).unwrap();
        let y = gelu_fwd(&x);
        let ys = y.as_slice().unwrap();
        assert_eq!(ys[0], 0.0);
        assert!((ys[1] - 10.0).abs() < 1e-9);
        assert!(ys[2].abs() < 1e-9);
    }

    #[test]
    fn grn_zero_gamma_is_identity_plus_beta() {
        let x = ArrayD::from_shape_vec(IxDyn(&[1, 2, 2]), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = grn_fwd(&x, &[0.0, 0.0], &[0.1, -0.1], GRN_EPS);
        let ys = y.as_slice().unwrap();
        assert!((ys[0] - 1.1).abs() < 1e-9);
        assert!((ys[1] - 1.9).abs() < 1e-9);
        assert!((ys[2] - 3.1).abs() < 1e-9);
        assert!((ys[3] - 3.9).abs() < 1e-9);
    }

    #[test]
    fn dwconv7_identity_kernel_passes_through() {
        // kernel with 1 at the center tap reproduces the input
        let x = ArrayD::from_shape_vec(
            IxDyn(&[3, 3, 1]),
            (0..9).map(|v| v as f64).collect(),
        )
        .unwrap();
        let mut w = ArrayD::zeros(IxDyn(&[7, 7, 1]));
        w[[3, 3, 0]] = 1.0;
        let y = dwconv7_fwd(&x, &w, &[0.0]);
        assert_eq!(y.as_slice().unwrap(), x.as_slice().unwrap());
    }

    #[test]
    fn gather_then_scatter_restores_counts() {
        let x = ArrayD::from_shape_vec(
            IxDyn(&[4, 4, 2]),
            (0..32).map(|v| v as f64).collect(),
        )
        .unwrap();
        let p = gather_patches(&x, 2, 2);
        assert_eq!(p.shape(), &[4, 8]);
        let back = scatter_patches(&p, 4, 4, 2, 2, 2);
        // non-overlapping patches: scatter(gather(x)) == x
        assert_eq!(back.as_slice().unwrap(), x.as_slice().unwrap());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f64, 2.0, 3.0, -1.0]);
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(p.windows(2).take(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bilinear_resize_hand_case() {
        // single row [0, 1] upsampled to four columns with half-pixel centers
        let x = ArrayD::from_shape_vec(IxDyn(&[1, 2, 1]), vec![0.0f64, 1.0]).unwrap();
        let y = bilinear_resize(&x, 1, 4);
        let ys = y.as_slice().unwrap();
        let expected = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in ys.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{ys:?}");
        }
    }

    #[test]
    fn bilinear_resize_same_size_is_identity() {
        let x = ArrayD::from_shape_vec(
            IxDyn(&[2, 3, 2]),
            (0..12).map(|v| v as f64 * 0.3).collect(),
        )
        .unwrap();
        let y = bilinear_resize(&x, 2, 3);
        assert_eq!(x, y);
    }

    #[test]
    fn bilinear_downsample_averages_quad() {
        // 2x2 -> 1x1 lands exactly between the four pixels
        let x = ArrayD::from_shape_vec(IxDyn(&[2, 2, 1]), vec![1.0f64, 3.0, 5.0, 7.0]).unwrap();
        let y = bilinear_resize(&x, 1, 1);
        assert!((y.as_slice().unwrap()[0] - 4.0).abs() < 1e-12);
    }
}
