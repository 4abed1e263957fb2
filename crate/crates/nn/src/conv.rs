//! Convolution kernels via im2col and `sgemm`.
//!
//! Kernels use cross-correlation with zero padding. A forward kernel has
//! layout `[out, in, k, k]`; a transposed kernel has layout `[in, out, k, k]`
//! and realizes the exact adjoint of the forward convolution that maps the
//! transposed output shape back to its input shape.

use helmnet_core::par;

use crate::error::{NnError, Result};
use crate::tensor::Tensor4;

/// Square kernel size, stride and padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    /// Odd kernels with "same" padding `(k - 1) / 2` and stride 1 or 2.
    pub fn new(k: usize, stride: usize, pad: usize) -> Result<Self> {
        if k % 2 == 0 || pad != (k - 1) / 2 || !(stride == 1 || stride == 2) {
            return Err(NnError::Unsupported(format!(
                "kernel {k}, stride {stride}, pad {pad}"
            )));
        }
        Ok(Self { k, stride, pad })
    }

    pub fn same(k: usize) -> Self {
        Self::new(k, 1, (k - 1) / 2).expect("odd kernel")
    }

    pub fn down(k: usize) -> Self {
        Self::new(k, 2, (k - 1) / 2).expect("odd kernel")
    }

    /// Output size of the forward convolution along one axis.
    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Output size of the transposed convolution along one axis.
    pub fn transposed_dim(&self, n: usize) -> usize {
        n * self.stride
    }

    fn check_kernel(&self, kernel: &Tensor4) -> Result<()> {
        let [_, _, kh, kw] = kernel.shape();
        if kh != self.k || kw != self.k {
            return Err(NnError::Shape(format!(
                "kernel {:?} does not match size {}",
                kernel.shape(),
                self.k
            )));
        }
        Ok(())
    }
}

/// `c = a * b + beta * c` with `a` (m x k) and `b` (k x n), each optionally
/// stored transposed; all buffers row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements of the slices, whose lengths are asserted.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds a `[c, h, w]` image into a `[c*k*k, oh*ow]` patch matrix.
fn im2col(img: &[f32], c: usize, h: usize, w: usize, s: ConvSpec) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (s.out_dim(h), s.out_dim(w));
    let kk = s.k * s.k;
    let mut cols = vec![0.0f32; c * kk * oh * ow];
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = &mut cols[((ci * kk) + ky * s.k + kx) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let y = (oy * s.stride + ky) as isize - s.pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &plane[y as usize * w..(y as usize + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let x = (ox * s.stride + kx) as isize - s.pad as isize;
                        if x >= 0 && x < w as isize {
                            *d = src[x as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, oh, ow)
}

/// Adjoint of [`im2col`]: scatters patches back and sums overlaps into
/// `img`.
fn col2im(cols: &[f32], c: usize, h: usize, w: usize, s: ConvSpec, img: &mut [f32]) {
    let (oh, ow) = (s.out_dim(h), s.out_dim(w));
    let kk = s.k * s.k;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = &cols[((ci * kk) + ky * s.k + kx) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let y = (oy * s.stride + ky) as isize - s.pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                    for (ox, v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let x = (ox * s.stride + kx) as isize - s.pad as isize;
                        if x >= 0 && x < w as isize {
                            dst[x as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn sum_in_order(parts: Vec<Vec<f32>>, len: usize) -> Vec<f32> {
    let mut acc = vec![0.0f32; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// `y = conv(x, kernel)` with `x: [n, cin, h, w]`, `kernel: [cout, cin, k, k]`.
pub fn conv2d(x: &Tensor4, kernel: &Tensor4, s: ConvSpec) -> Result<Tensor4> {
    s.check_kernel(kernel)?;
    let [n, cin, h, w] = x.shape();
    let [cout, kin, _, _] = kernel.shape();
    if kin != cin {
        return Err(NnError::Shape(format!(
            "kernel expects {kin} input channels, got {cin}"
        )));
    }
    let (oh, ow) = (s.out_dim(h), s.out_dim(w));
    let mut y = Tensor4::zeros([n, cout, oh, ow]);
    let depth = cin * s.k * s.k;
    par::for_each_chunk(y.as_mut_slice(), cout * oh * ow, |b, out| {
        let (cols, _, _) = im2col(x.sample(b), cin, h, w, s);
        gemm(cout, depth, oh * ow, kernel.as_slice(), false, &cols, false, 0.0, out);
    });
    Ok(y)
}

/// Gradients of [`conv2d`] with respect to the input and the kernel.
pub fn conv2d_backward(
    x: &Tensor4,
    kernel: &Tensor4,
    dy: &Tensor4,
    s: ConvSpec,
) -> (Tensor4, Tensor4) {
    let [n, cin, h, w] = x.shape();
    let [cout, _, _, _] = kernel.shape();
    let (oh, ow) = (s.out_dim(h), s.out_dim(w));
    let depth = cin * s.k * s.k;
    let parts = par::map_range(n, |b| {
        let (cols, _, _) = im2col(x.sample(b), cin, h, w, s);
        let g = dy.sample(b);
        let mut dk = vec![0.0f32; cout * depth];
        gemm(cout, oh * ow, depth, g, false, &cols, true, 0.0, &mut dk);
        let mut dcols = vec![0.0f32; depth * oh * ow];
        gemm(depth, cout, oh * ow, kernel.as_slice(), true, g, false, 0.0, &mut dcols);
        let mut dx = vec![0.0f32; cin * h * w];
        col2im(&dcols, cin, h, w, s, &mut dx);
        (dx, dk)
    });
    let (dxs, dks): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let dx = Tensor4::from_vec([n, cin, h, w], dxs.concat()).expect("shape");
    let dk = Tensor4::from_vec(kernel.shape(), sum_in_order(dks, cout * depth)).expect("shape");
    (dx, dk)
}

/// Transposed convolution with `x: [n, cin, h, w]` and
/// `kernel: [cin, cout, k, k]`; the output is `[n, cout, stride*h, stride*w]`.
pub fn conv2d_transpose(x: &Tensor4, kernel: &Tensor4, s: ConvSpec) -> Result<Tensor4> {
    s.check_kernel(kernel)?;
    let [n, cin, h, w] = x.shape();
    let [kin, cout, _, _] = kernel.shape();
    if kin != cin {
        return Err(NnError::Shape(format!(
            "transposed kernel expects {kin} input channels, got {cin}"
        )));
    }
    let (oh, ow) = (s.transposed_dim(h), s.transposed_dim(w));
    let depth = cout * s.k * s.k;
    let mut y = Tensor4::zeros([n, cout, oh, ow]);
    par::for_each_chunk(y.as_mut_slice(), cout * oh * ow, |b, out| {
        let mut cols = vec![0.0f32; depth * h * w];
        gemm(depth, cin, h * w, kernel.as_slice(), true, x.sample(b), false, 0.0, &mut cols);
        col2im(&cols, cout, oh, ow, s, out);
    });
    Ok(y)
}

/// Gradients of [`conv2d_transpose`] with respect to the input and the
/// kernel.
pub fn conv2d_transpose_backward(
    x: &Tensor4,
    kernel: &Tensor4,
    dy: &Tensor4,
    s: ConvSpec,
) -> (Tensor4, Tensor4) {
    let [n, cin, h, w] = x.shape();
    let [_, cout, oh, ow] = dy.shape();
    let depth = cout * s.k * s.k;
    let parts = par::map_range(n, |b| {
        let (dcols, _, _) = im2col(dy.sample(b), cout, oh, ow, s);
        let mut dx = vec![0.0f32; cin * h * w];
        gemm(cin, depth, h * w, kernel.as_slice(), false, &dcols, false, 0.0, &mut dx);
        let mut dk = vec![0.0f32; cin * depth];
        gemm(cin, h * w, depth, x.sample(b), false, &dcols, true, 0.0, &mut dk);
        (dx, dk)
    });
    let (dxs, dks): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let dx = Tensor4::from_vec([n, cin, h, w], dxs.concat()).expect("shape");
    let dk = Tensor4::from_vec(kernel.shape(), sum_in_order(dks, cin * depth)).expect("shape");
    (dx, dk)
}
