//! Batch normalization over the trailing (channel) axis.
//!
//! In training mode each channel is standardized with the batch mean and
//! `sqrt(batch variance + eps)`, then scaled by `gamma` and shifted by
//! `beta`. Running statistics follow an exponential moving average and are
//! used in evaluation mode.

use super::{Mode, NnError, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

/// Values needed by the backward pass and the running-statistics update.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, DEFAULT_EPS, DEFAULT_MOMENTUM)
    }

    pub fn with_params(channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.eps < 0.0 || !self.eps.is_finite() {
            return Err(NnError::Config(format!("batch-norm eps must be >= 0, got {}", self.eps)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(NnError::Config(format!(
                "batch-norm momentum must lie in (0,1), got {}",
                self.momentum
            )));
        }
        if self.running_var.data().iter().any(|&v| v < 0.0) {
            return Err(NnError::Config("negative running variance".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache), NnError> {
        let c = self.channels();
        let last = *input.shape().last().unwrap_or(&0);
        if last != c {
            return Err(NnError::ShapeMismatch {
                op: "batchnorm",
                axis: "channels",
                expected: c,
                actual: last,
            });
        }
        let count = input.len() / c;
        let x = input.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if count == 1 && self.eps == 0.0 {
                    return Err(NnError::DegenerateBatch);
                }
                let mut mean = vec![0.0; c];
                for row in x.chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; c];
                for row in x.chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        if inv_std.iter().any(|v| !v.is_finite()) {
            return Err(NnError::DegenerateBatch);
        }
        let mut normalized = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        {
            let nd = normalized.data_mut();
            let od = out.data_mut();
            let g = self.gamma.data();
            let b = self.beta.data();
            for (i, v) in x.iter().enumerate() {
                let ch = i % c;
                let xn = (v - mean[ch]) * inv_std[ch];
                nd[i] = xn;
                od[i] = g[ch] * xn + b[ch];
            }
        }
        Ok((
            out,
            BatchNormCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                mode,
            },
        ))
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`.
    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
        let c = self.channels();
        let count = (grad_out.len() / c) as f64;
        let g = grad_out.data();
        let xn = cache.normalized.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (i, (gv, xv)) in g.iter().zip(xn).enumerate() {
            let ch = i % c;
            sum_g[ch] += gv;
            sum_gx[ch] += gv * xv;
        }
        let gamma = self.gamma.data();
        let mut gx = Tensor::zeros(grad_out.shape());
        {
            let d = gx.data_mut();
            for (i, (gv, xv)) in g.iter().zip(xn).enumerate() {
                let ch = i % c;
                d[i] = match cache.mode {
                    Mode::Train => {
                        gamma[ch] * cache.inv_std[ch] * (gv - sum_g[ch] / count - xv * sum_gx[ch] / count)
                    }
                    Mode::Eval => gamma[ch] * cache.inv_std[ch] * gv,
                };
            }
        }
        let ggamma = Tensor::new(vec![c], sum_gx).expect("channel vector");
        let gbeta = Tensor::new(vec![c], sum_g).expect("channel vector");
        (gx, ggamma, gbeta)
    }

    /// Fold one batch's statistics into the running averages.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_batch() {
        let bn = BatchNorm::new(1);
        let x = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        let scale = 1.0 / (1.0 + DEFAULT_EPS).sqrt();
        assert!((y.data()[0] + scale).abs() < 1e-15);
        assert!((y.data()[1] - scale).abs() < 1e-15);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn constant_batch_gives_beta() {
        let mut bn = BatchNorm::new(2);
        bn.gamma = Tensor::new(vec![2], vec![3.0, -2.0]).unwrap();
        bn.beta = Tensor::new(vec![2], vec![0.25, 7.0]).unwrap();
        let x = Tensor::filled(&[5, 2], 4.2);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.25, 7.0]);
        }
    }

    #[test]
    fn output_statistics_follow_gamma_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut bn = BatchNorm::new(3);
        bn.gamma = Tensor::new(vec![3], vec![0.5, 2.0, 1.5]).unwrap();
        bn.beta = Tensor::new(vec![3], vec![-1.0, 0.0, 3.0]).unwrap();
        let x = Tensor::uniform(&[64, 3], 5.0, &mut rng);
        let (y, cache) = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(3).copied().collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!((mean - bn.beta.data()[ch]).abs() < 1e-9);
            // eps shrinks the spread by sqrt(var / (var + eps)).
            let shrink = (cache.batch_var[ch] / (cache.batch_var[ch] + bn.eps)).sqrt();
            assert!((std - bn.gamma.data()[ch] * shrink).abs() < 1e-9);
            assert!((std - bn.gamma.data()[ch]).abs() < 1e-5);
        }
    }

    #[test]
    fn single_sample_without_eps_is_rejected() {
        let bn = BatchNorm::with_params(1, 0.0, 0.99);
        let x = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        assert!(matches!(bn.forward(&x, Mode::Train), Err(NnError::DegenerateBatch)));
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_stay_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::new(2);
        for _ in 0..20 {
            let x = Tensor::uniform(&[8, 2], 3.0, &mut rng);
            let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
            bn.update_running(&cache);
        }
        assert!(bn.running_var.data().iter().all(|&v| v >= 0.0));
        bn.validate().unwrap();
    }
}
