//! 2-D convolution and transposed convolution on NHWC tensors.
//!
//! Filters are laid out `(kh, kw, c_in, c_out)` for both directions. A
//! transposed convolution with the same filter is the adjoint of the forward
//! convolution: it maps `c_out` channels back to `c_in` channels and its
//! spatial output is the input extent the forward convolution would consume.

use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

/// Static geometry of a convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    /// `(kh, kw, c_in, c_out)`.
    pub filter: (usize, usize, usize, usize),
    /// `(sh, sw)`; the batch and channel strides are always 1.
    pub strides: (usize, usize),
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn new(filter: (usize, usize, usize, usize), stride: usize, padding: Padding) -> Self {
        Self {
            filter,
            strides: (stride, stride),
            padding,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let (kh, kw, ci, co) = self.filter;
        [kh, kw, ci, co]
    }

    /// Output extent of the forward convolution along one spatial axis.
    pub fn conv_out_extent(&self, input: usize, kernel: usize, stride: usize) -> usize {
        match self.padding {
            Padding::Same => input.div_ceil(stride),
            Padding::Valid => {
                if input < kernel {
                    0
                } else {
                    (input - kernel) / stride + 1
                }
            }
        }
    }

    /// Output extent of the transposed convolution along one spatial axis.
    pub fn transpose_out_extent(&self, input: usize, kernel: usize, stride: usize) -> usize {
        match self.padding {
            Padding::Same => input * stride,
            Padding::Valid => (input - 1) * stride + kernel,
        }
    }

    /// Leading pad for a forward convolution reading `input` cells into `out`.
    fn pad_before(&self, input: usize, out: usize, kernel: usize, stride: usize) -> usize {
        match self.padding {
            Padding::Same => {
                let needed = (out - 1) * stride + kernel;
                needed.saturating_sub(input) / 2
            }
            Padding::Valid => 0,
        }
    }

    pub fn conv_output_shape(&self, input: &[usize]) -> Result<[usize; 4], NnError> {
        let [n, h, w, c] = nhwc(input, "conv2d")?;
        let (kh, kw, ci, co) = self.filter;
        if c != ci {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                axis: "channels",
                expected: ci,
                actual: c,
            });
        }
        let oh = self.conv_out_extent(h, kh, self.strides.0);
        let ow = self.conv_out_extent(w, kw, self.strides.1);
        if oh == 0 {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                axis: "height",
                expected: kh,
                actual: h,
            });
        }
        if ow == 0 {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                axis: "width",
                expected: kw,
                actual: w,
            });
        }
        Ok([n, oh, ow, co])
    }

    pub fn transpose_output_shape(&self, input: &[usize]) -> Result<[usize; 4], NnError> {
        let [n, h, w, c] = nhwc(input, "conv2d_transpose")?;
        let (kh, kw, ci, co) = self.filter;
        if c != co {
            return Err(NnError::ShapeMismatch {
                op: "conv2d_transpose",
                axis: "channels",
                expected: co,
                actual: c,
            });
        }
        Ok([
            n,
            self.transpose_out_extent(h, kh, self.strides.0),
            self.transpose_out_extent(w, kw, self.strides.1),
            ci,
        ])
    }

    /// Window bookkeeping for a (wide, narrow) pair: `wide` is the input of
    /// the forward convolution, `narrow` its output.
    fn window(&self, wide: [usize; 4], narrow: [usize; 4]) -> Window {
        let (kh, kw, _, _) = self.filter;
        Window {
            pad_t: self.pad_before(wide[1], narrow[1], kh, self.strides.0),
            pad_l: self.pad_before(wide[2], narrow[2], kw, self.strides.1),
            wide,
            narrow,
        }
    }

    fn check_weights(&self, weights: &Tensor, bias: &Tensor, bias_len: usize) -> Result<(), NnError> {
        if weights.shape() != self.weight_shape() {
            return Err(NnError::BadShape {
                shape: weights.shape().to_vec(),
                len: weights.len(),
            });
        }
        if bias.len() != bias_len {
            return Err(NnError::ShapeMismatch {
                op: "conv bias",
                axis: "channels",
                expected: bias_len,
                actual: bias.len(),
            });
        }
        Ok(())
    }
}

fn nhwc(shape: &[usize], op: &'static str) -> Result<[usize; 4], NnError> {
    match shape {
        &[n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(NnError::ShapeMismatch {
            op,
            axis: "rank",
            expected: 4,
            actual: shape.len(),
        }),
    }
}

struct Window {
    pad_t: usize,
    pad_l: usize,
    wide: [usize; 4],
    narrow: [usize; 4],
}

impl Window {
    /// Visit every (narrow offset, wide offset, filter tap offset) triple of
    /// the forward convolution. Offsets are element offsets of the channel
    /// vectors: narrow rows have `c_out` entries, wide rows `c_in`, and the
    /// tap offset addresses row `(ky, kx, 0)` of the `(kh*kw*c_in, c_out)`
    /// weight matrix.
    fn for_each(&self, geo: &ConvGeometry, mut f: impl FnMut(usize, usize, usize)) {
        let (kh, kw, ci, co) = geo.filter;
        let (sh, sw) = geo.strides;
        let [n, ih, iw, _] = self.wide;
        let [_, oh, ow, _] = self.narrow;
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let narrow_off = ((b * oh + oy) * ow + ox) * co;
                    for ky in 0..kh {
                        let iy = (oy * sh + ky) as isize - self.pad_t as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * sw + kx) as isize - self.pad_l as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let wide_off = ((b * ih + iy as usize) * iw + ix as usize) * ci;
                            let tap_off = (ky * kw + kx) * ci * co;
                            f(narrow_off, wide_off, tap_off);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward convolution. `bias` has `c_out` entries.
pub fn conv2d_forward(
    input: &Tensor,
    geo: &ConvGeometry,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, NnError> {
    let out_shape = geo.conv_output_shape(input.shape())?;
    let (_, _, ci, co) = geo.filter;
    geo.check_weights(weights, bias, co)?;
    let wide = nhwc(input.shape(), "conv2d")?;
    let mut out = Tensor::zeros(&out_shape);
    {
        let o = out.data_mut();
        for row in o.chunks_mut(co) {
            row.copy_from_slice(bias.data());
        }
        let x = input.data();
        let w = weights.data();
        geo.window(wide, out_shape).for_each(geo, |no, wo, to| {
            let orow = &mut o[no..no + co];
            for c in 0..ci {
                let xv = x[wo + c];
                if xv != 0.0 {
                    axpy(xv, &w[to + c * co..to + (c + 1) * co], orow);
                }
            }
        });
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    geo: &ConvGeometry,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let out_shape = geo.conv_output_shape(input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(NnError::BadShape {
            shape: grad_out.shape().to_vec(),
            len: grad_out.len(),
        });
    }
    let (_, _, ci, co) = geo.filter;
    let wide = nhwc(input.shape(), "conv2d")?;
    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[co]);
    {
        let g = grad_out.data();
        let x = input.data();
        let w = weights.data();
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        geo.window(wide, out_shape).for_each(geo, |no, wo, to| {
            let grow = &g[no..no + co];
            for c in 0..ci {
                let wrow = to + c * co..to + (c + 1) * co;
                gxd[wo + c] += dot(&w[wrow.clone()], grow);
                let xv = x[wo + c];
                if xv != 0.0 {
                    axpy(xv, grow, &mut gwd[wrow]);
                }
            }
        });
        let gbd = gb.data_mut();
        for row in g.chunks(co) {
            axpy(1.0, row, gbd);
        }
    }
    Ok((gx, gw, gb))
}

/// Transposed convolution (adjoint of [`conv2d_forward`] plus a bias of
/// `c_in` entries).
pub fn conv2d_transpose_forward(
    input: &Tensor,
    geo: &ConvGeometry,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, NnError> {
    let out_shape = geo.transpose_output_shape(input.shape())?;
    let (_, _, ci, co) = geo.filter;
    geo.check_weights(weights, bias, ci)?;
    let narrow = nhwc(input.shape(), "conv2d_transpose")?;
    let mut out = Tensor::zeros(&out_shape);
    {
        let o = out.data_mut();
        let x = input.data();
        let w = weights.data();
        geo.window(out_shape, narrow).for_each(geo, |no, wo, to| {
            let xrow = &x[no..no + co];
            for c in 0..ci {
                o[wo + c] += dot(&w[to + c * co..to + (c + 1) * co], xrow);
            }
        });
        for row in o.chunks_mut(ci) {
            axpy(1.0, bias.data(), row);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_transpose_forward`] with respect to input, weights
/// and bias.
pub fn conv2d_transpose_backward(
    input: &Tensor,
    geo: &ConvGeometry,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let out_shape = geo.transpose_output_shape(input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(NnError::BadShape {
            shape: grad_out.shape().to_vec(),
            len: grad_out.len(),
        });
    }
    let (_, _, ci, co) = geo.filter;
    let narrow = nhwc(input.shape(), "conv2d_transpose")?;
    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[ci]);
    {
        let g = grad_out.data();
        let x = input.data();
        let w = weights.data();
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        geo.window(out_shape, narrow).for_each(geo, |no, wo, to| {
            let xrow = &x[no..no + co];
            for c in 0..ci {
                let gv = g[wo + c];
                if gv != 0.0 {
                    let wrow = to + c * co..to + (c + 1) * co;
                    axpy(gv, &w[wrow.clone()], &mut gxd[no..no + co]);
                    axpy(gv, xrow, &mut gwd[wrow]);
                }
            }
        });
        let gbd = gb.data_mut();
        for row in g.chunks(ci) {
            axpy(1.0, row, gbd);
        }
    }
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape, 1.0, &mut rng)
    }

    /// Direct quadruple loop with explicit TF-style SAME offsets.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
        let [n, ih, iw, ci] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [kh, kw, _, co] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let oh = (ih + stride - 1) / stride;
        let ow = (iw + stride - 1) / stride;
        let pt = (((oh - 1) * stride + kh).saturating_sub(ih)) / 2;
        let pl = (((ow - 1) * stride + kw).saturating_sub(iw)) / 2;
        let mut out = vec![0.0; n * oh * ow * co];
        for bb in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for oc in 0..co {
                        let mut s = b.data()[oc];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pt as i64;
                                let ix = (ox * stride + kx) as i64 - pl as i64;
                                if iy < 0 || ix < 0 || iy >= ih as i64 || ix >= iw as i64 {
                                    continue;
                                }
                                for c in 0..ci {
                                    let xv = x.data()
                                        [((bb * ih + iy as usize) * iw + ix as usize) * ci + c];
                                    let wv = w.data()[((ky * kw + kx) * ci + c) * co + oc];
                                    s += xv * wv;
                                }
                            }
                        }
                        out[((bb * oh + oy) * ow + ox) * co + oc] = s;
                    }
                }
            }
        }
        Tensor::new(vec![n, oh, ow, co], out).unwrap()
    }

    #[test]
    fn reference_encoder_first_row_shape() {
        let geo = ConvGeometry::new((4, 4, 3, 32), 2, Padding::Same);
        assert_eq!(geo.conv_output_shape(&[1, 256, 256, 3]).unwrap(), [1, 128, 128, 32]);
    }

    #[test]
    fn reference_decoder_first_row_shape() {
        let geo = ConvGeometry::new((4, 4, 512, 32), 2, Padding::Same);
        assert_eq!(geo.transpose_output_shape(&[1, 4, 4, 32]).unwrap(), [1, 8, 8, 512]);
    }

    #[test]
    fn identity_kernel() {
        let geo = ConvGeometry::new((1, 1, 1, 1), 1, Padding::Same);
        let x = Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &geo, &w, &b).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn scalar_transpose() {
        let geo = ConvGeometry::new((1, 1, 1, 1), 1, Padding::Same);
        let x = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d_transpose_forward(&x, &geo, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn matches_naive_loop() {
        let geo = ConvGeometry::new((3, 3, 2, 4), 2, Padding::Same);
        let x = rand_tensor(&[1, 6, 6, 2], 1);
        let w = rand_tensor(&[3, 3, 2, 4], 2);
        let b = rand_tensor(&[4], 3);
        let fast = conv2d_forward(&x, &geo, &w, &b).unwrap();
        let slow = naive_conv(&x, &w, &b, 2);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_equals_explicit_matrix_transpose() {
        // Build the forward map as an explicit matrix by probing unit inputs.
        let geo = ConvGeometry::new((4, 4, 2, 3), 2, Padding::Same);
        let in_shape = [1, 6, 6, 2];
        let w = rand_tensor(&[4, 4, 2, 3], 7);
        let zero_b = Tensor::zeros(&[3]);
        let n_in: usize = in_shape.iter().product();
        let mut columns = Vec::with_capacity(n_in);
        for j in 0..n_in {
            let mut e = Tensor::zeros(&in_shape);
            e.data_mut()[j] = 1.0;
            columns.push(conv2d_forward(&e, &geo, &w, &zero_b).unwrap());
        }
        let out_shape = columns[0].shape().to_vec();
        let u = rand_tensor(&out_shape, 8);
        // (M^T u)_j = <column_j, u>
        let expected: Vec<f64> = columns.iter().map(|c| c.dot(&u)).collect();
        let got = conv2d_transpose_forward(&u, &geo, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(got.shape(), &in_shape);
        for (a, b) in got.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let geo = ConvGeometry::new((4, 4, 3, 8), 2, Padding::Same);
        let err = geo.conv_output_shape(&[1, 8, 8, 4]).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { axis: "channels", .. }));
        let err = geo.transpose_output_shape(&[1, 8, 8, 3]).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { axis: "channels", .. }));
    }

    #[test]
    fn valid_padding_extent() {
        let geo = ConvGeometry::new((3, 3, 1, 1), 1, Padding::Valid);
        assert_eq!(geo.conv_output_shape(&[1, 5, 5, 1]).unwrap(), [1, 3, 3, 1]);
        assert_eq!(geo.transpose_output_shape(&[1, 3, 3, 1]).unwrap(), [1, 5, 5, 1]);
    }
}
