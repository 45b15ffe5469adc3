//! Feed-forward layer chains with a recorded tape for reverse-mode gradients.

use rand::Rng;

use super::activation::Activation;
use super::batchnorm::{BatchNorm, BatchNormCache};
use super::conv::{self, ConvGeometry};
use super::dense;
use super::{Mode, NnError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        weights: Tensor,
        bias: Tensor,
    },
    Conv2d {
        geometry: ConvGeometry,
        weights: Tensor,
        bias: Tensor,
    },
    ConvTranspose2d {
        geometry: ConvGeometry,
        weights: Tensor,
        bias: Tensor,
    },
    BatchNorm(BatchNorm),
    Activation(Activation),
    /// Reinterpret each batch entry with the given trailing shape.
    Reshape(Vec<usize>),
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Layer {
    pub fn dense<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = glorot_limit(fan_in, fan_out);
        Layer::Dense {
            weights: Tensor::uniform(&[fan_in, fan_out], limit, rng),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn conv2d<R: Rng + ?Sized>(geometry: ConvGeometry, rng: &mut R) -> Self {
        let (kh, kw, ci, co) = geometry.filter;
        let limit = glorot_limit(kh * kw * ci, kh * kw * co);
        Layer::Conv2d {
            geometry,
            weights: Tensor::uniform(&geometry.weight_shape(), limit, rng),
            bias: Tensor::zeros(&[co]),
        }
    }

    pub fn conv_transpose2d<R: Rng + ?Sized>(geometry: ConvGeometry, rng: &mut R) -> Self {
        let (kh, kw, ci, co) = geometry.filter;
        let limit = glorot_limit(kh * kw * co, kh * kw * ci);
        Layer::ConvTranspose2d {
            geometry,
            weights: Tensor::uniform(&geometry.weight_shape(), limit, rng),
            bias: Tensor::zeros(&[ci]),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::ConvTranspose2d { .. } => "conv2d_transpose",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Activation(_) => "activation",
            Layer::Reshape(_) => "reshape",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weights, bias }
            | Layer::Conv2d { weights, bias, .. }
            | Layer::ConvTranspose2d { weights, bias, .. } => vec![weights, bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            Layer::Activation(_) | Layer::Reshape(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weights, bias }
            | Layer::Conv2d { weights, bias, .. }
            | Layer::ConvTranspose2d { weights, bias, .. } => vec![weights, bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            Layer::Activation(_) | Layer::Reshape(_) => vec![],
        }
    }

    /// Output shape for a given input shape, without computing values.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match self {
            Layer::Dense { weights, .. } => {
                let fan_in: usize = input[1..].iter().product();
                if fan_in != weights.shape()[0] {
                    return Err(NnError::ShapeMismatch {
                        op: "dense",
                        axis: "features",
                        expected: weights.shape()[0],
                        actual: fan_in,
                    });
                }
                Ok(vec![input[0], weights.shape()[1]])
            }
            Layer::Conv2d { geometry, .. } => Ok(geometry.conv_output_shape(input)?.to_vec()),
            Layer::ConvTranspose2d { geometry, .. } => {
                Ok(geometry.transpose_output_shape(input)?.to_vec())
            }
            Layer::Reshape(tail) => {
                let per: usize = input[1..].iter().product();
                if per != tail.iter().product::<usize>() {
                    return Err(NnError::ShapeMismatch {
                        op: "reshape",
                        axis: "elements",
                        expected: tail.iter().product(),
                        actual: per,
                    });
                }
                let mut s = vec![input[0]];
                s.extend_from_slice(tail);
                Ok(s)
            }
            Layer::BatchNorm(_) | Layer::Activation(_) => Ok(input.to_vec()),
        }
    }

    fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<BatchNormCache>), NnError> {
        let out = match self {
            Layer::Dense { weights, bias } => dense::dense_forward(input, weights, bias)?,
            Layer::Conv2d {
                geometry,
                weights,
                bias,
            } => conv::conv2d_forward(input, geometry, weights, bias)?,
            Layer::ConvTranspose2d {
                geometry,
                weights,
                bias,
            } => conv::conv2d_transpose_forward(input, geometry, weights, bias)?,
            Layer::BatchNorm(bn) => {
                let (y, cache) = bn.forward(input, mode)?;
                return Ok((y, Some(cache)));
            }
            Layer::Activation(a) => a.forward(input)?,
            Layer::Reshape(_) => {
                let shape = self.output_shape(input.shape())?;
                input.clone().reshape(&shape)?
            }
        };
        Ok((out, None))
    }

    /// Returns the input gradient and one gradient per parameter tensor.
    fn backward(
        &self,
        record: &TapeEntry,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>), NnError> {
        let input = &record.input;
        Ok(match self {
            Layer::Dense { weights, .. } => {
                let (gx, gw, gb) = dense::dense_backward(input, weights, grad_out)?;
                (gx, vec![gw, gb])
            }
            Layer::Conv2d {
                geometry, weights, ..
            } => {
                let (gx, gw, gb) = conv::conv2d_backward(input, geometry, weights, grad_out)?;
                (gx, vec![gw, gb])
            }
            Layer::ConvTranspose2d {
                geometry, weights, ..
            } => {
                let (gx, gw, gb) =
                    conv::conv2d_transpose_backward(input, geometry, weights, grad_out)?;
                (gx, vec![gw, gb])
            }
            Layer::BatchNorm(bn) => {
                let cache = record.bn.as_ref().expect("batch-norm cache recorded");
                let (gx, gg, gb) = bn.backward(cache, grad_out);
                (gx, vec![gg, gb])
            }
            Layer::Activation(a) => (a.backward(input, &record.output, grad_out), vec![]),
            Layer::Reshape(_) => (grad_out.clone().reshape(input.shape())?, vec![]),
        })
    }
}

#[derive(Debug, Clone)]
struct TapeEntry {
    input: Tensor,
    output: Tensor,
    bn: Option<BatchNormCache>,
}

/// Record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    entries: Vec<TapeEntry>,
    mode: Mode,
}

impl Tape {
    pub fn output(&self) -> Option<&Tensor> {
        self.entries.last().map(|e| &e.output)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// A scalar objective and its gradient with respect to the network output.
#[derive(Debug, Clone)]
pub struct Loss {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered list of per-parameter gradients, aligned with
/// [`Sequential::params`].
pub type Gradients = Vec<Tensor>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Per-layer output shapes for a given input shape.
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = input.to_vec();
        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            trace.push(shape.clone());
        }
        Ok(trace)
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&x, mode)?.0;
        }
        Ok(x)
    }

    /// Forward pass that records everything the backward pass needs. The
    /// network itself is not mutated; see [`Sequential::commit_running_stats`].
    pub fn forward_recorded(&self, input: &Tensor, mode: Mode) -> Result<Tape, NnError> {
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, bn) = layer.forward(&x, mode)?;
            entries.push(TapeEntry {
                input: x,
                output: y.clone(),
                bn,
            });
            x = y;
        }
        if entries.is_empty() {
            entries.push(TapeEntry {
                input: x.clone(),
                output: x,
                bn: None,
            });
        }
        Ok(Tape { entries, mode })
    }

    /// Backpropagate `grad_output` through the recorded pass.
    pub fn backward_from(&self, tape: &Tape, grad_output: &Tensor) -> Result<(Tensor, Gradients), NnError> {
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for (layer, entry) in self.layers.iter().zip(&tape.entries).rev() {
            if g.shape() != entry.output.shape() {
                return Err(NnError::BadShape {
                    shape: g.shape().to_vec(),
                    len: g.len(),
                });
            }
            let (gx, gp) = layer.backward(entry, &g)?;
            per_layer.push(gp);
            g = gx;
        }
        per_layer.reverse();
        Ok((g, per_layer.into_iter().flatten().collect()))
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// parameter tensor.
    pub fn backward(&self, tape: &Tape, loss: &Loss) -> Result<Gradients, NnError> {
        if !loss.value.is_scalar() {
            return Err(NnError::NonScalarLoss(loss.value.shape().to_vec()));
        }
        if !loss.value.all_finite() {
            return Err(NnError::NonFinite("loss"));
        }
        Ok(self.backward_from(tape, &loss.grad)?.1)
    }

    pub fn commit_running_stats(&mut self, tape: &Tape) {
        for (layer, entry) in self.layers.iter_mut().zip(&tape.entries) {
            if let (Layer::BatchNorm(bn), Some(cache)) = (layer, entry.bn.as_ref()) {
                bn.update_running(cache);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::Padding;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Sequential::new(vec![Layer::dense(3, 2, &mut rng), Layer::Activation(Activation::Relu)]);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let tape = net.forward_recorded(&x, Mode::Train).unwrap();
        let loss = Loss {
            value: Tensor::scalar(4.0),
            grad: Tensor::zeros(&[2, 2]),
        };
        let grads = net.backward(&tape, &loss).unwrap();
        assert_eq!(grads.len(), 2);
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        for (g, p) in grads.iter().zip(net.params()) {
            assert_eq!(g.shape(), p.shape());
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Sequential::new(vec![Layer::dense(3, 2, &mut rng)]);
        let x = Tensor::uniform(&[1, 3], 1.0, &mut rng);
        let tape = net.forward_recorded(&x, Mode::Train).unwrap();
        let loss = Loss {
            value: Tensor::zeros(&[2]),
            grad: Tensor::zeros(&[1, 2]),
        };
        assert!(matches!(net.backward(&tape, &loss), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn glorot_bounds_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = Layer::conv2d(ConvGeometry::new((4, 4, 3, 8), 2, Padding::Same), &mut rng);
        let limit = (6.0 / (48.0 + 128.0f64)).sqrt();
        assert!(layer.params()[0].data().iter().all(|v| v.abs() <= limit));
    }
}
