//! Central finite-difference checks of backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Loss, Mode, NnError, Sequential, Tensor};
use crate::vae::{VaeError, VaeModel};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    /// Largest relative error and where it occurred (`"input[i]"`,
    /// `"param p[i]"`).
    pub max_rel_err: f64,
    pub worst: String,
    /// Smallest number of components probed in any single tensor.
    pub min_per_tensor: usize,
}

impl GradReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_err: 0.0,
            worst: String::new(),
            min_per_tensor: usize::MAX,
        }
    }

    fn record(&mut self, e: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        if e > self.max_rel_err || e.is_nan() {
            self.max_rel_err = e;
            self.worst = at();
        }
    }
}

/// Relative error with the denominator floored at the central-difference
/// roundoff scale of the loss value (`~ eps·|loss| / step`); gradients that
/// are exactly zero (e.g. a bias feeding batch norm) are otherwise unmeasurable.
pub fn rel_err(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = 1e-6 * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Every index when `len ≤ per_tensor`, else `per_tensor` random ones.
pub fn probe_indices(len: usize, per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= per_tensor {
        (0..len).collect()
    } else {
        sample(rng, len, per_tensor).into_vec()
    }
}

/// Check input and parameter gradients of `net` under the linear probe loss
/// `<net(x), r>` with random `x` and `r`.
pub fn check_network(
    net: &Sequential,
    input_shape: &[usize],
    mode: Mode,
    per_tensor: usize,
    seed: u64,
) -> Result<GradReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::uniform(input_shape, 1.0, &mut rng);
    let out_shape = net.shape_trace(input_shape)?.last().cloned().unwrap_or_default();
    let r = Tensor::uniform(&out_shape, 1.0, &mut rng);
    let probe = |n: &Sequential, x: &Tensor| -> Result<f64, NnError> { Ok(n.forward(x, mode)?.dot(&r)) };
    let tape = net.forward_recorded(&x, mode)?;
    let value = tape.output().ok_or(NnError::Empty("gradient check"))?.dot(&r);
    let loss = Loss {
        value: Tensor::scalar(value),
        grad: r.clone(),
    };
    let grads = net.backward(&tape, &loss)?;
    let (gx, _) = net.backward_from(&tape, &r)?;
    let mut rep = GradReport::new();

    let idx = probe_indices(x.len(), per_tensor, &mut rng);
    rep.min_per_tensor = rep.min_per_tensor.min(idx.len());
    for i in idx {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let numeric = (probe(net, &xp)? - probe(net, &xm)?) / (2.0 * STEP);
        rep.record(rel_err(gx.data()[i], numeric, value), || format!("input[{i}]"));
    }
    for p in 0..net.params().len() {
        let idx = probe_indices(net.params()[p].len(), per_tensor, &mut rng);
        rep.min_per_tensor = rep.min_per_tensor.min(idx.len());
        for i in idx {
            let mut plus = net.clone();
            plus.params_mut()[p].data_mut()[i] += STEP;
            let mut minus = net.clone();
            minus.params_mut()[p].data_mut()[i] -= STEP;
            let numeric = (probe(&plus, &x)? - probe(&minus, &x)?) / (2.0 * STEP);
            rep.record(rel_err(grads[p].data()[i], numeric, value), || format!("param {p}[{i}]"));
        }
    }
    Ok(rep)
}

/// Check the gradient of the full VAE loss on a fixed batch and noise draw
/// with respect to every parameter tensor.
pub fn check_vae_loss(
    model: &VaeModel,
    batch: &Tensor,
    noise: &[f64],
    per_tensor: usize,
    seed: u64,
) -> Result<GradReport, VaeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = model.loss_gradients(batch, noise)?;
    let mut rep = GradReport::new();
    for p in 0..model.params().len() {
        let idx = probe_indices(model.params()[p].len(), per_tensor, &mut rng);
        rep.min_per_tensor = rep.min_per_tensor.min(idx.len());
        for i in idx {
            let mut plus = model.clone();
            plus.params_mut()[p].data_mut()[i] += STEP;
            let mut minus = model.clone();
            minus.params_mut()[p].data_mut()[i] -= STEP;
            let lp = plus.loss_gradients(batch, noise)?.loss;
            let lm = minus.loss_gradients(batch, noise)?.loss;
            let numeric = (lp - lm) / (2.0 * STEP);
            rep.record(rel_err(base.grads[p].data()[i], numeric, base.loss), || format!("param {p}[{i}]"));
        }
    }
    Ok(rep)
}
