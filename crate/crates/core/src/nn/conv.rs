//! 3D convolution kernels (im2col + GEMM). 2D convolutions are expressed as
//! 3D convolutions over a unit temporal axis.

/// Static geometry of a 3D convolution applied to one `[C, T, H, W]` sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Input extent `[T, H, W]`.
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn output(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for d in 0..3 {
            let padded = self.input[d] + 2 * self.padding[d];
            assert!(
                padded >= self.kernel[d],
                "kernel {:?} larger than padded input {:?}",
                self.kernel,
                self.input
            );
            out[d] = (padded - self.kernel[d]) / self.stride[d] + 1;
        }
        out
    }

    /// Rows of the im2col matrix: `C_in * kt * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn out_positions(&self) -> usize {
        self.output().iter().product()
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.input.iter().product::<usize>()
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_positions()
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    pub fn fan_in(&self) -> usize {
        self.patch_len()
    }
}

fn im2col(g: &ConvGeometry, x: &[f64], cols: &mut [f64]) {
    let [t_in, h_in, w_in] = g.input;
    let [t_out, h_out, w_out] = g.output();
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let p = t_out * h_out * w_out;
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &x[c * t_in * h_in * w_in..(c + 1) * t_in * h_in * w_in];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for to in 0..t_out {
                        let ti = (to * st + dt) as isize - pt as isize;
                        for ho in 0..h_out {
                            let hi = (ho * sh + dh) as isize - ph as isize;
                            let valid_th = ti >= 0
                                && (ti as usize) < t_in
                                && hi >= 0
                                && (hi as usize) < h_in;
                            if !valid_th {
                                dst[idx..idx + w_out].fill(0.0);
                                idx += w_out;
                                continue;
                            }
                            let base = (ti as usize * h_in + hi as usize) * w_in;
                            for wo in 0..w_out {
                                let wi = (wo * sw + dw) as isize - pw as isize;
                                dst[idx] = if wi >= 0 && (wi as usize) < w_in {
                                    xc[base + wi as usize]
                                } else {
                                    0.0
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeometry, cols: &[f64], dx: &mut [f64]) {
    let [t_in, h_in, w_in] = g.input;
    let [t_out, h_out, w_out] = g.output();
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let p = t_out * h_out * w_out;
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &mut dx[c * t_in * h_in * w_in..(c + 1) * t_in * h_in * w_in];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for to in 0..t_out {
                        let ti = (to * st + dt) as isize - pt as isize;
                        for ho in 0..h_out {
                            let hi = (ho * sh + dh) as isize - ph as isize;
                            if ti < 0 || ti as usize >= t_in || hi < 0 || hi as usize >= h_in {
                                idx += w_out;
                                continue;
                            }
                            let base = (ti as usize * h_in + hi as usize) * w_in;
                            for wo in 0..w_out {
                                let wi = (wo * sw + dw) as isize - pw as isize;
                                if wi >= 0 && (wi as usize) < w_in {
                                    xc[base + wi as usize] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `C[m x n] = alpha * A[m x k] * B[k x n] + beta * C`, all row-major with
/// explicit transposition flags.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: strides and extents describe slices whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
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

/// Batched forward pass. `x` is `[N, C_in, T, H, W]` flattened.
pub fn conv3d_forward(g: &ConvGeometry, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() / g.in_len();
    let k = g.patch_len();
    let p = g.out_positions();
    let mut cols = vec![0.0; k * p];
    let mut out = vec![0.0; n * g.out_len()];
    for s in 0..n {
        im2col(g, &x[s * g.in_len()..(s + 1) * g.in_len()], &mut cols);
        let o = &mut out[s * g.out_len()..(s + 1) * g.out_len()];
        for (co, chunk) in o.chunks_mut(p).enumerate() {
            chunk.fill(bias[co]);
        }
        gemm(g.out_channels, k, p, weight, false, &cols, false, 1.0, o);
    }
    out
}

/// Accumulates weight/bias gradients and (optionally) returns the input gradient.
pub fn conv3d_backward(
    g: &ConvGeometry,
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let n = x.len() / g.in_len();
    let k = g.patch_len();
    let p = g.out_positions();
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    let mut dx = if want_input_grad {
        Some(vec![0.0; x.len()])
    } else {
        None
    };
    let mut grad_weight = grad_weight;
    if let Some(gb) = grad_bias {
        for s in 0..n {
            let go = &grad_out[s * g.out_len()..(s + 1) * g.out_len()];
            for (co, chunk) in go.chunks(p).enumerate() {
                gb[co] += chunk.iter().sum::<f64>();
            }
        }
    }
    for s in 0..n {
        let go = &grad_out[s * g.out_len()..(s + 1) * g.out_len()];
        if let Some(gw) = grad_weight.as_deref_mut() {
            im2col(g, &x[s * g.in_len()..(s + 1) * g.in_len()], &mut cols);
            // dW[Co, K] += dOut[Co, P] * cols[K, P]^T
            gemm(g.out_channels, p, k, go, false, &cols, true, 1.0, gw);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[K, P] = W[Co, K]^T * dOut[Co, P]
            gemm(k, g.out_channels, p, weight, true, go, false, 0.0, &mut dcols);
            col2im_add(g, &dcols, &mut dx[s * g.in_len()..(s + 1) * g.in_len()]);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeometry, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let [t_in, h_in, w_in] = g.input;
        let [t_o, h_o, w_o] = g.output();
        let [kt, kh, kw] = g.kernel;
        let mut out = vec![0.0; g.out_len()];
        for co in 0..g.out_channels {
            for to in 0..t_o {
                for ho in 0..h_o {
                    for wo in 0..w_o {
                        let mut acc = b[co];
                        for ci in 0..g.in_channels {
                            for a in 0..kt {
                                for bb in 0..kh {
                                    for c in 0..kw {
                                        let ti = (to * g.stride[0] + a) as isize - g.padding[0] as isize;
                                        let hi = (ho * g.stride[1] + bb) as isize - g.padding[1] as isize;
                                        let wi = (wo * g.stride[2] + c) as isize - g.padding[2] as isize;
                                        if ti < 0
                                            || hi < 0
                                            || wi < 0
                                            || ti as usize >= t_in
                                            || hi as usize >= h_in
                                            || wi as usize >= w_in
                                        {
                                            continue;
                                        }
                                        let xi = ((ci * t_in + ti as usize) * h_in + hi as usize) * w_in
                                            + wi as usize;
                                        let wi_ = (((co * g.in_channels + ci) * kt + a) * kh + bb) * kw + c;
                                        acc += x[xi] * w[wi_];
                                    }
                                }
                            }
                        }
                        out[((co * t_o + to) * h_o + ho) * w_o + wo] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loops_with_stride_and_padding() {
        let g = ConvGeometry {
            in_channels: 2,
            out_channels: 3,
            input: [4, 5, 6],
            kernel: [3, 3, 3],
            stride: [2, 2, 1],
            padding: [1, 1, 1],
        };
        let x: Vec<f64> = (0..g.in_len()).map(|i| ((i * 37 % 11) as f64) / 7.0 - 0.6).collect();
        let w: Vec<f64> = (0..g.weight_len()).map(|i| ((i * 13 % 17) as f64) / 9.0 - 0.8).collect();
        let b = vec![0.1, -0.2, 0.3];
        let fast = conv3d_forward(&g, &x, &w, &b);
        let slow = naive_conv(&g, &x, &w, &b);
        for (a, e) in fast.iter().zip(&slow) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn output_extent_follows_stride_arithmetic() {
        let g = ConvGeometry {
            in_channels: 3,
            out_channels: 8,
            input: [4, 64, 64],
            kernel: [3, 3, 3],
            stride: [2, 2, 2],
            padding: [1, 1, 1],
        };
        assert_eq!(g.output(), [2, 32, 32]);
    }
}
