//! Single-sample forward/backward kernels on flat CHW buffers.

/// Geometry of a square-kernel 2-D convolution (or its transpose).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/cols appended to a transposed convolution's output.
    pub output_pad: usize,
}

impl ConvGeom {
    pub fn conv_out(&self) -> (usize, usize) {
        (
            (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1,
            (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn transpose_out(&self) -> (usize, usize) {
        (
            (self.in_h - 1) * self.stride + self.kernel + self.output_pad - 2 * self.pad,
            (self.in_w - 1) * self.stride + self.kernel + self.output_pad - 2 * self.pad,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.in_c * self.out_c * self.kernel * self.kernel
    }

    /// Fan-in plus fan-out, for Glorot initialization.
    pub fn fan_sum(&self) -> usize {
        (self.in_c + self.out_c) * self.kernel * self.kernel
    }
}

/// Source coordinate for output position `o` and kernel tap `k`, if inside.
#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(pad)?;
    (pos < len).then_some(pos)
}

/// Convolution with weights laid out `[out_c][in_c][k][k]`.
pub fn conv_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let (oh, ow) = g.conv_out();
    let k = g.kernel;
    for oc in 0..g.out_c {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..g.in_c {
                    let w_base = (oc * g.in_c + ic) * k * k;
                    let i_base = ic * g.in_h * g.in_w;
                    for ky in 0..k {
                        let Some(iy) = tap(y, ky, g.stride, g.pad, g.in_h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = tap(x, kx, g.stride, g.pad, g.in_w) else { continue };
                            acc += weight[w_base + ky * k + kx] * input[i_base + iy * g.in_w + ix];
                        }
                    }
                }
                out[(oc * oh + y) * ow + x] = acc;
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `grad_in` is given, writes
/// the input gradient.
pub fn conv_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let (oh, ow) = g.conv_out();
    let k = g.kernel;
    if let Some(gi) = grad_in.as_deref_mut() {
        gi.fill(0.0);
    }
    for oc in 0..g.out_c {
        for y in 0..oh {
            for x in 0..ow {
                let go = grad_out[(oc * oh + y) * ow + x];
                if go == 0.0 {
                    continue;
                }
                grad_b[oc] += go;
                for ic in 0..g.in_c {
                    let w_base = (oc * g.in_c + ic) * k * k;
                    let i_base = ic * g.in_h * g.in_w;
                    for ky in 0..k {
                        let Some(iy) = tap(y, ky, g.stride, g.pad, g.in_h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = tap(x, kx, g.stride, g.pad, g.in_w) else { continue };
                            let ii = i_base + iy * g.in_w + ix;
                            grad_w[w_base + ky * k + kx] += go * input[ii];
                            if let Some(gi) = grad_in.as_deref_mut() {
                                gi[ii] += go * weight[w_base + ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output coordinate reached from input position `i` through kernel tap `k`
/// of a transposed convolution, if inside.
#[inline]
fn scatter(i: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let pos = (i * stride + k).checked_sub(pad)?;
    (pos < len).then_some(pos)
}

/// Transposed convolution with weights laid out `[in_c][out_c][k][k]`.
pub fn conv_transpose_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let (oh, ow) = g.transpose_out();
    let k = g.kernel;
    for oc in 0..g.out_c {
        out[oc * oh * ow..(oc + 1) * oh * ow].fill(bias[oc]);
    }
    for ic in 0..g.in_c {
        for y in 0..g.in_h {
            for x in 0..g.in_w {
                let v = input[(ic * g.in_h + y) * g.in_w + x];
                if v == 0.0 {
                    continue;
                }
                for oc in 0..g.out_c {
                    let w_base = (ic * g.out_c + oc) * k * k;
                    for ky in 0..k {
                        let Some(py) = scatter(y, ky, g.stride, g.pad, oh) else { continue };
                        for kx in 0..k {
                            let Some(px) = scatter(x, kx, g.stride, g.pad, ow) else { continue };
                            out[(oc * oh + py) * ow + px] += v * weight[w_base + ky * k + kx];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_transpose_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: &mut [f64],
) {
    let (oh, ow) = g.transpose_out();
    let k = g.kernel;
    for oc in 0..g.out_c {
        grad_b[oc] += grad_out[oc * oh * ow..(oc + 1) * oh * ow].iter().sum::<f64>();
    }
    for ic in 0..g.in_c {
        for y in 0..g.in_h {
            for x in 0..g.in_w {
                let ii = (ic * g.in_h + y) * g.in_w + x;
                let v = input[ii];
                let mut acc = 0.0;
                for oc in 0..g.out_c {
                    let w_base = (ic * g.out_c + oc) * k * k;
                    for ky in 0..k {
                        let Some(py) = scatter(y, ky, g.stride, g.pad, oh) else { continue };
                        for kx in 0..k {
                            let Some(px) = scatter(x, kx, g.stride, g.pad, ow) else { continue };
                            let go = grad_out[(oc * oh + py) * ow + px];
                            grad_w[w_base + ky * k + kx] += v * go;
                            acc += weight[w_base + ky * k + kx] * go;
                        }
                    }
                }
                grad_in[ii] = acc;
            }
        }
    }
}

/// `out = W x + b` with `W` laid out `[out][in]`.
pub fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (o, dst) in out.iter_mut().enumerate() {
        let row = &weight[o * n_in..(o + 1) * n_in];
        *dst = bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

pub fn dense_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: Option<&mut [f64]>,
) {
    let n_in = input.len();
    for (o, &go) in grad_out.iter().enumerate() {
        grad_b[o] += go;
        let gw = &mut grad_w[o * n_in..(o + 1) * n_in];
        for (g, x) in gw.iter_mut().zip(input) {
            *g += go * x;
        }
    }
    if let Some(gi) = grad_in {
        for (i, dst) in gi.iter_mut().enumerate() {
            *dst = grad_out
                .iter()
                .enumerate()
                .map(|(o, go)| go * weight[o * n_in + i])
                .sum();
        }
    }
}

pub fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub fn relu_backward_inplace(grad: &mut [f64], pre_activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(pre_activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
