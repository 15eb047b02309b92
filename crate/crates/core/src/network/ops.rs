//! Convolution, ReLU and max-pool kernels on single `(C, H, W)` images.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of the network. Training runs in `f32`;
/// `f64` exists for gradient verification.
pub trait Real: Float + Debug + Default + Sum + Send + Sync + 'static {
    /// Raw strided GEMM `C = A·B + beta·C`, `C` row-major with `n` columns.
    ///
    /// # Safety
    /// Every strided index of `a`, `b`, `c` must be in bounds.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
    );

    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
    }
}

/// `C = A·B + beta·C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
        );
    }
}

/// Unfolds a `(C, H, W)` image into `(C·k·k, H·W)` patch columns, zero padded
/// by `k / 2`.
pub(crate) fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut col = vec![T::zero(); c * k * k * hw];
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &mut col[((ch * k + ky) * k + kx) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let sx_lo = (x_lo as isize + dx) as usize;
                    dst[x_lo..x_hi].copy_from_slice(&src[sx_lo..sx_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates patch columns back into an image.
pub(crate) fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &col[((ch * k + ky) * k + kx) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..][..w];
                    let dst = &mut plane[sy as usize * w..][..w];
                    let sx_lo = (x_lo as isize + dx) as usize;
                    for (d, s) in dst[sx_lo..sx_lo + (x_hi - x_lo)].iter_mut().zip(&src[x_lo..x_hi]) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
    out
}

/// Same-size convolution with stride 1. `weight` is `(C_out, C_in, k, k)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d<T: Real>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    k: usize,
) -> Vec<T> {
    let hw = h * w;
    let kk = c_in * k * k;
    let mut out = vec![T::zero(); c_out * hw];
    for (o, b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].fill(*b);
    }
    if k == 1 {
        gemm(c_out, kk, hw, weight, (kk, 1), input, (hw, 1), T::one(), &mut out);
    } else {
        let col = im2col(input, c_in, h, w, k);
        gemm(c_out, kk, hw, weight, (kk, 1), &col, (hw, 1), T::one(), &mut out);
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<Vec<T>>,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    k: usize,
    grad_out: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let hw = h * w;
    let kk = c_in * k * k;
    let bias: Vec<T> = grad_out
        .chunks_exact(hw)
        .map(|row| T::of(row.iter().map(|v| v.f64()).sum::<f64>()))
        .collect();
    let col_storage;
    let col: &[T] = if k == 1 {
        input
    } else {
        col_storage = im2col(input, c_in, h, w, k);
        &col_storage
    };
    let mut dw = vec![T::zero(); c_out * kk];
    // dW = grad_out · colᵀ
    gemm(c_out, hw, kk, grad_out, (hw, 1), col, (1, hw), T::zero(), &mut dw);
    let input_grad = need_input.then(|| {
        // dcol = Wᵀ · grad_out
        let mut dcol = vec![T::zero(); kk * hw];
        gemm(kk, c_out, hw, weight, (1, kk), grad_out, (hw, 1), T::zero(), &mut dcol);
        if k == 1 {
            dcol
        } else {
            col2im(&dcol, c_in, h, w, k)
        }
    });
    ConvGrads {
        weight: dw,
        bias,
        input: input_grad,
    }
}

pub(crate) fn relu_inplace<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Zeroes gradient entries whose forward output was not positive.
pub(crate) fn relu_backward_inplace<T: Real>(grad: &mut [T], output: &[T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 stride-2 max-pool. Returns pooled values and, per output, the flat
/// input index of the first maximum in row-major window order.
pub(crate) fn maxpool2<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![T::zero(); c * ho * wo];
    let mut arg = vec![0u32; c * ho * wo];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let mut best_i = base + 2 * y * w + 2 * x;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                let o = (ch * ho + y) * wo + x;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward<T: Real>(grad_out: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut g = vec![T::zero(); input_len];
    for (&go, &i) in grad_out.iter().zip(argmax) {
        g[i as usize] = g[i as usize] + go;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f32], c_in: usize, h: usize, w: usize, weight: &[f32], bias: &[f32], c_out: usize, k: usize) -> Vec<f32> {
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; c_out * h * w];
        for o in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o] as f64;
                    for c in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y as isize + ky as isize - pad, x as isize + kx as isize - pad);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += weight[((o * c_in + c) * k + ky) * k + kx] as f64
                                        * input[(c * h + sy as usize) * w + sx as usize] as f64;
                                }
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc as f32;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u32) -> Vec<f32> {
        (0..n).map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(seed) >> 8) % 1000) as f32 / 500.0 - 1.0).collect()
    }

    #[test]
    fn conv_matches_naive() {
        for &(c_in, c_out, h, w, k) in &[(3, 4, 5, 7, 3), (2, 3, 4, 4, 1), (1, 2, 1, 3, 3)] {
            let x = pseudo(c_in * h * w, 1);
            let wt = pseudo(c_out * c_in * k * k, 2);
            let b = pseudo(c_out, 3);
            let fast = conv2d(&x, c_in, h, w, &wt, &b, c_out, k);
            let slow = naive_conv(&x, c_in, h, w, &wt, &b, c_out, k);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w, k) = (2, 5, 6, 3);
        let x = pseudo(c * h * w, 7);
        let y = pseudo(c * k * k * h * w, 9);
        let lhs: f64 = im2col(&x, c, h, w, k).iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&col2im(&y, c, h, w, k)).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn maxpool_first_max_tie_rule() {
        // 1 channel, 2 rows, 4 cols: windows {1,1,1,1} and {0,0,2,2}.
        let x: Vec<f32> = vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let (out, arg) = maxpool2(&x, 1, 2, 4);
        assert_eq!(out, vec![1.0, 2.0]);
        assert_eq!(arg, vec![0, 6]);
        let g = maxpool2_backward(&[3.0, 5.0], &arg, 8);
        assert_eq!(g, vec![3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn relu_dead_unit_blocks_gradient() {
        let mut x: Vec<f32> = vec![-1.0, 0.0, 2.0];
        relu_inplace(&mut x);
        let mut g = vec![1.0, 1.0, 1.0];
        relu_backward_inplace(&mut g, &x);
        assert_eq!(g, vec![0.0, 0.0, 1.0]);
    }
}
