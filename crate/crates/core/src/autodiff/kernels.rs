//! Raw numeric kernels behind the tape ops. Everything here works on flat
//! row-major slices; shape validation happens in the tape layer.

/// Geometry of a 2-D sliding window over an `[N, C, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    fn columns(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every caller passes slices sized for the (m, k, n) layout
    // described by the strides; the asserts below guard the extents.
    debug_assert!(k == 0 || a.len() > m.saturating_sub(1) * rsa as usize + k.saturating_sub(1) * csa as usize);
    debug_assert!(k == 0 || b.len() > k.saturating_sub(1) * rsb as usize + n.saturating_sub(1) * csb as usize);
    debug_assert!(c.len() > (m - 1) * rsc as usize + (n - 1) * csc as usize);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Unfolds the input into a `[C*kh*kw, N*Ho*Wo]` matrix.
pub fn im2col(input: &[f64], win: &Window) -> Vec<f64> {
    let (oh, ow) = (win.out_h(), win.out_w());
    let cols = win.columns();
    let mut out = vec![0.0; win.patch_len() * cols];
    let plane = win.height * win.width;
    for c in 0..win.channels {
        for ki in 0..win.kernel_h {
            for kj in 0..win.kernel_w {
                let row = (c * win.kernel_h + ki) * win.kernel_w + kj;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                for n in 0..win.batch {
                    let src = &input[(n * win.channels + c) * plane..][..plane];
                    for oy in 0..oh {
                        let iy = (oy * win.stride + ki) as isize - win.padding as isize;
                        let dst = &mut dst_row[(n * oh + oy) * ow..][..ow];
                        if iy < 0 || iy >= win.height as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * win.width..][..win.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * win.stride + kj) as isize - win.padding as isize;
                            if ix >= 0 && (ix as usize) < win.width {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im(cols_grad: &[f64], win: &Window, input_grad: &mut [f64]) {
    let (oh, ow) = (win.out_h(), win.out_w());
    let cols = win.columns();
    let plane = win.height * win.width;
    for c in 0..win.channels {
        for ki in 0..win.kernel_h {
            for kj in 0..win.kernel_w {
                let row = (c * win.kernel_h + ki) * win.kernel_w + kj;
                let src_row = &cols_grad[row * cols..(row + 1) * cols];
                for n in 0..win.batch {
                    let dst = &mut input_grad[(n * win.channels + c) * plane..][..plane];
                    for oy in 0..oh {
                        let iy = (oy * win.stride + ki) as isize - win.padding as isize;
                        if iy < 0 || iy >= win.height as isize {
                            continue;
                        }
                        let src = &src_row[(n * oh + oy) * ow..][..ow];
                        let dst_row = &mut dst[iy as usize * win.width..][..win.width];
                        for (ox, g) in src.iter().enumerate() {
                            let ix = (ox * win.stride + kj) as isize - win.padding as isize;
                            if ix >= 0 && (ix as usize) < win.width {
                                dst_row[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input` `[N,C,H,W]` with `weight` `[F,C,kh,kw]`.
pub fn conv2d_forward(input: &[f64], weight: &[f64], bias: Option<&[f64]>, filters: usize, win: &Window) -> Vec<f64> {
    let cols = im2col(input, win);
    let ncols = win.columns();
    let k = win.patch_len();
    let mut mat = vec![0.0; filters * ncols];
    gemm(
        filters,
        k,
        ncols,
        1.0,
        weight,
        (k as isize, 1),
        &cols,
        (ncols as isize, 1),
        0.0,
        &mut mat,
        (ncols as isize, 1),
    );
    let per = win.out_h() * win.out_w();
    let mut out = vec![0.0; win.batch * filters * per];
    for f in 0..filters {
        let b = bias.map_or(0.0, |b| b[f]);
        for n in 0..win.batch {
            let src = &mat[f * ncols + n * per..][..per];
            let dst = &mut out[(n * filters + f) * per..][..per];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    out_grad: &[f64],
    filters: usize,
    win: &Window,
    need_input: bool,
) -> ConvGrads {
    let ncols = win.columns();
    let k = win.patch_len();
    let per = win.out_h() * win.out_w();
    // [N,F,P] -> [F, N*P]
    let mut dmat = vec![0.0; filters * ncols];
    let mut bias = vec![0.0; filters];
    for n in 0..win.batch {
        for f in 0..filters {
            let src = &out_grad[(n * filters + f) * per..][..per];
            dmat[f * ncols + n * per..][..per].copy_from_slice(src);
            bias[f] += src.iter().sum::<f64>();
        }
    }
    let cols = im2col(input, win);
    let mut wgrad = vec![0.0; filters * k];
    gemm(
        filters,
        ncols,
        k,
        1.0,
        &dmat,
        (ncols as isize, 1),
        &cols,
        (1, ncols as isize),
        0.0,
        &mut wgrad,
        (k as isize, 1),
    );
    let input_grad = need_input.then(|| {
        let mut dcols = cols;
        gemm(
            k,
            filters,
            ncols,
            1.0,
            weight,
            (1, k as isize),
            &dmat,
            (ncols as isize, 1),
            0.0,
            &mut dcols,
            (ncols as isize, 1),
        );
        let mut dx = vec![0.0; input.len()];
        col2im(&dcols, win, &mut dx);
        dx
    });
    ConvGrads {
        input: input_grad,
        weight: wgrad,
        bias,
    }
}

/// Max pooling; returns outputs and, for each output, the flat input index
/// that won (first maximum in scan order).
pub fn max_pool2d_forward(input: &[f64], win: &Window) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (win.out_h(), win.out_w());
    let mut out = Vec::with_capacity(win.batch * win.channels * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane_idx in 0..win.batch * win.channels {
        let base = plane_idx * win.height * win.width;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ki in 0..win.kernel_h {
                    let iy = (oy * win.stride + ki) as isize - win.padding as isize;
                    if iy < 0 || iy >= win.height as isize {
                        continue;
                    }
                    for kj in 0..win.kernel_w {
                        let ix = (ox * win.stride + kj) as isize - win.padding as isize;
                        if ix < 0 || ix >= win.width as isize {
                            continue;
                        }
                        let idx = base + iy as usize * win.width + ix as usize;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}
