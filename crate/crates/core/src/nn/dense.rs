use super::{NnError, Tensor};

/// `y = x·W + b` with `x` viewed as `(batch, in)`; `W` is `(in, out)`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (n, fan_in) = as_matrix(input)?;
    let (wi, wo) = (weights.shape()[0], weights.shape()[1]);
    if wi != fan_in {
        return Err(NnError::ShapeMismatch {
            op: "dense",
            axis: "features",
            expected: wi,
            actual: fan_in,
        });
    }
    let x = input.data();
    let w = weights.data();
    let mut out = Tensor::zeros(&[n, wo]);
    let o = out.data_mut();
    for b in 0..n {
        let row = &mut o[b * wo..(b + 1) * wo];
        row.copy_from_slice(bias.data());
        for i in 0..fan_in {
            let xv = x[b * fan_in + i];
            for (r, wv) in row.iter_mut().zip(&w[i * wo..(i + 1) * wo]) {
                *r += xv * wv;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`; `grad_input` has the
/// original (possibly higher-rank) input shape.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (n, fan_in) = as_matrix(input)?;
    let wo = weights.shape()[1];
    if grad_out.shape() != [n, wo] {
        return Err(NnError::BadShape {
            shape: grad_out.shape().to_vec(),
            len: grad_out.len(),
        });
    }
    let x = input.data();
    let w = weights.data();
    let g = grad_out.data();
    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[wo]);
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        for b in 0..n {
            let grow = &g[b * wo..(b + 1) * wo];
            for i in 0..fan_in {
                let wrow = &w[i * wo..(i + 1) * wo];
                gxd[b * fan_in + i] = wrow.iter().zip(grow).map(|(a, c)| a * c).sum();
                let xv = x[b * fan_in + i];
                for (gwv, gv) in gwd[i * wo..(i + 1) * wo].iter_mut().zip(grow) {
                    *gwv += xv * gv;
                }
            }
        }
        let gbd = gb.data_mut();
        for row in g.chunks(wo) {
            for (a, v) in gbd.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    Ok((gx, gw, gb))
}

fn as_matrix(t: &Tensor) -> Result<(usize, usize), NnError> {
    if t.rank() < 2 {
        return Err(NnError::ShapeMismatch {
            op: "dense",
            axis: "rank",
            expected: 2,
            actual: t.rank(),
        });
    }
    let n = t.shape()[0];
    Ok((n, t.len() / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_error_gradient_closed_form() {
        // loss = |Wx - y|^2 with W as (in, out) applied to a single row x.
        let x = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![3, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let b = Tensor::zeros(&[2]);
        let y = [1.0, -1.0];
        let out = dense_forward(&x, &w, &b).unwrap();
        let r: Vec<f64> = out.data().iter().zip(&y).map(|(o, t)| o - t).collect();
        let g = Tensor::new(vec![1, 2], r.iter().map(|v| 2.0 * v).collect()).unwrap();
        let (_, gw, _) = dense_backward(&x, &w, &g).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let analytic = 2.0 * r[j] * x.data()[i];
                assert!((gw.data()[i * 2 + j] - analytic).abs() < 1e-10);
            }
        }
    }
}
