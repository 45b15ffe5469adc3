//! Convolutional variational auto-encoder used as a summary-statistic
//! extractor.
//!
//! The encoder is a stack of stride-2 `4×4` SAME convolutions, each followed
//! by batch normalization and leaky ReLU, ending in a dense layer producing
//! the latent mean and log-variance. The decoder mirrors it with a dense
//! layer, a reshape to `4×4×base`, stride-2 transposed convolutions with ReLU
//! and a final sigmoid. With `image_side = 256` and `base_width = 32` the
//! layer shapes are those of the reference encoder/decoder; every halving of
//! the image side drops one convolution pair.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::checkpoint::{ensure_same_architecture, Checkpoint};
use crate::nn::{
    Activation, Adam, AdamConfig, BatchNorm, ConvGeometry, Gradients, Layer, Mode, NnError,
    Padding, Sequential, Tensor,
};

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("image shape {actual:?} does not match model shape {expected:?}")]
    ImageShape {
        expected: [usize; 3],
        actual: Vec<usize>,
    },
    #[error("latent length {actual} does not match latent_dim {expected}")]
    LatentLength { expected: usize, actual: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("empty training corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    /// Square image side; must be `4 · 2^k` with `k ≥ 1`.
    pub image_side: usize,
    pub channels: usize,
    pub latent_dim: usize,
    /// Width of the first encoder convolution; later layers double it up to
    /// `16 × base_width`.
    pub base_width: usize,
    pub leaky_slope: f64,
}

impl VaeArchitecture {
    /// The full-size reference network (256×256 input, one latent dimension).
    pub fn reference() -> Self {
        Self {
            image_side: 256,
            channels: 3,
            latent_dim: 1,
            base_width: 32,
            leaky_slope: crate::nn::activation::LEAKY_SLOPE,
        }
    }

    pub fn desk(image_side: usize, latent_dim: usize) -> Self {
        Self {
            image_side,
            channels: 3,
            latent_dim,
            base_width: 8,
            leaky_slope: crate::nn::activation::LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let s = self.image_side;
        if s < 8 || s % 4 != 0 || !(s / 4).is_power_of_two() {
            return Err(VaeError::Config(format!(
                "image side must be 4·2^k with k >= 1, got {s}"
            )));
        }
        if self.latent_dim == 0 || self.base_width == 0 || self.channels == 0 {
            return Err(VaeError::Config("latent_dim, base_width and channels must be positive".into()));
        }
        Activation::leaky(self.leaky_slope)?;
        Ok(())
    }

    /// Number of stride-2 convolutions in each half.
    pub fn depth(&self) -> usize {
        (self.image_side / 4).trailing_zeros() as usize
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        let cap = 16 * self.base_width;
        (0..self.depth())
            .map(|i| (self.base_width << i).min(cap))
            .collect()
    }

    /// Output channels of each transposed convolution, ending with the image
    /// channels.
    pub fn decoder_widths(&self) -> Vec<usize> {
        let enc = self.encoder_widths();
        let l = enc.len();
        let mut out: Vec<usize> = (0..l - 1).map(|k| enc[l - 2 - k]).collect();
        out.push(self.channels);
        out
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_side, self.image_side, self.channels]
    }

    pub fn flatten_len(&self) -> usize {
        16 * *self.encoder_widths().last().expect("depth >= 1")
    }

    pub fn build(&self, seed: u64) -> Result<VaeModel, VaeError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Vec::new();
        let mut c_in = self.channels;
        for &w in &self.encoder_widths() {
            enc.push(Layer::conv2d(
                ConvGeometry::new((4, 4, c_in, w), 2, Padding::Same),
                &mut rng,
            ));
            enc.push(Layer::BatchNorm(BatchNorm::new(w)));
            enc.push(Layer::Activation(Activation::LeakyRelu(self.leaky_slope)));
            c_in = w;
        }
        enc.push(Layer::Reshape(vec![self.flatten_len()]));
        enc.push(Layer::dense(self.flatten_len(), 2 * self.latent_dim, &mut rng));

        let mut dec = Vec::new();
        let reshape_c = self.base_width;
        dec.push(Layer::dense(self.latent_dim, 16 * reshape_c, &mut rng));
        dec.push(Layer::Activation(Activation::Relu));
        dec.push(Layer::Reshape(vec![4, 4, reshape_c]));
        let widths = self.decoder_widths();
        let mut c_in = reshape_c;
        for (k, &w) in widths.iter().enumerate() {
            dec.push(Layer::conv_transpose2d(
                ConvGeometry::new((4, 4, w, c_in), 2, Padding::Same),
                &mut rng,
            ));
            dec.push(Layer::Activation(if k + 1 == widths.len() {
                Activation::Sigmoid
            } else {
                Activation::Relu
            }));
            c_in = w;
        }
        Ok(VaeModel {
            arch: *self,
            encoder: Sequential::new(enc),
            decoder: Sequential::new(dec),
        })
    }
}

/// Latent mean and log-variance of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentStats {
    pub fn std(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// `z = σ ⊙ e + u`.
pub fn reparameterize(stats: &LatentStats, noise: &[f64]) -> Vec<f64> {
    stats
        .mean
        .iter()
        .zip(&stats.log_var)
        .zip(noise)
        .map(|((u, lv), e)| (0.5 * lv).exp() * e + u)
        .collect()
}

/// KL divergence of `N(u, σ²)` from the standard normal prior.
pub fn kl_term(stats: &LatentStats) -> f64 {
    0.5 * stats
        .mean
        .iter()
        .zip(&stats.log_var)
        .map(|(u, lv)| lv.exp() - lv + u * u - 1.0)
        .sum::<f64>()
}

/// Summed squared error between input and reconstruction.
pub fn recon_loss(input: &Tensor, recon: &Tensor) -> Result<f64, VaeError> {
    if input.shape() != recon.shape() {
        return Err(NnError::BadShape {
            shape: recon.shape().to_vec(),
            len: recon.len(),
        }
        .into());
    }
    Ok(input
        .data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

pub fn vae_loss(input: &Tensor, stats: &LatentStats, recon: &Tensor) -> Result<f64, VaeError> {
    Ok(kl_term(stats) + recon_loss(input, recon)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub arch: VaeArchitecture,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

/// Loss value and gradients of one mini-batch.
#[derive(Debug)]
pub struct BatchGradients {
    /// Mean per-image loss over the batch.
    pub loss: f64,
    /// Encoder gradients followed by decoder gradients, aligned with
    /// [`VaeModel::params`].
    pub grads: Gradients,
    encoder_tape: crate::nn::Tape,
}

impl VaeModel {
    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    fn as_batch(&self, image: &Tensor) -> Result<Tensor, VaeError> {
        let expected = self.arch.image_shape();
        let s = image.shape();
        if s == expected {
            let mut shape = vec![1];
            shape.extend_from_slice(&expected);
            return Ok(image.clone().reshape(&shape)?);
        }
        if s.len() == 4 && s[1..] == expected {
            return Ok(image.clone());
        }
        Err(VaeError::ImageShape {
            expected,
            actual: s.to_vec(),
        })
    }

    fn split_stats(&self, out: &Tensor) -> Vec<LatentStats> {
        let m = self.latent_dim();
        out.data()
            .chunks(2 * m)
            .map(|row| LatentStats {
                mean: row[..m].to_vec(),
                log_var: row[m..].to_vec(),
            })
            .collect()
    }

    /// Deterministic latent statistics (evaluation-mode batch norm). Accepts a
    /// single `H×W×C` image or an `N×H×W×C` batch.
    pub fn encode_batch(&self, images: &Tensor) -> Result<Vec<LatentStats>, VaeError> {
        let batch = self.as_batch(images)?;
        let out = self.encoder.forward(&batch, Mode::Eval)?;
        Ok(self.split_stats(&out))
    }

    pub fn encode(&self, image: &Tensor) -> Result<LatentStats, VaeError> {
        let mut v = self.encode_batch(image)?;
        if v.len() != 1 {
            return Err(VaeError::ImageShape {
                expected: self.arch.image_shape(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(v.remove(0))
    }

    /// Decode one latent vector into an `H×W×C` image with values in `[0, 1]`.
    pub fn decode(&self, z: &[f64]) -> Result<Tensor, VaeError> {
        if z.len() != self.latent_dim() {
            return Err(VaeError::LatentLength {
                expected: self.latent_dim(),
                actual: z.len(),
            });
        }
        let zt = Tensor::new(vec![1, z.len()], z.to_vec())?;
        let y = self.decoder.forward(&zt, Mode::Eval)?;
        Ok(y.map(|v| v.clamp(0.0, 1.0)).reshape(&self.arch.image_shape())?)
    }

    /// Mean per-image loss of a batch and its gradients, for fixed noise
    /// (`noise` is `N × m`, row-major). Batch norm runs in training mode.
    pub fn loss_gradients(&self, batch: &Tensor, noise: &[f64]) -> Result<BatchGradients, VaeError> {
        let batch = self.as_batch(batch)?;
        let n = batch.shape()[0];
        let m = self.latent_dim();
        if noise.len() != n * m {
            return Err(VaeError::LatentLength {
                expected: n * m,
                actual: noise.len(),
            });
        }
        let encoder_tape = self.encoder.forward_recorded(&batch, Mode::Train)?;
        let enc_out = encoder_tape.output().expect("non-empty encoder");
        let stats = self.split_stats(enc_out);
        let mut z = Vec::with_capacity(n * m);
        for (s, e) in stats.iter().zip(noise.chunks(m)) {
            z.extend(reparameterize(s, e));
        }
        let z = Tensor::new(vec![n, m], z)?;
        let decoder_tape = self.decoder.forward_recorded(&z, Mode::Train)?;
        let recon = decoder_tape.output().expect("non-empty decoder");

        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut grad_y = Tensor::zeros(recon.shape());
        for ((g, y), d) in grad_y.data_mut().iter_mut().zip(recon.data()).zip(batch.data()) {
            let r = y - d;
            loss += r * r;
            *g = 2.0 * r * inv_n;
        }
        loss += stats.iter().map(kl_term).sum::<f64>();
        loss *= inv_n;

        let (grad_z, dec_grads) = self.decoder.backward_from(&decoder_tape, &grad_y)?;
        let mut grad_enc = Tensor::zeros(enc_out.shape());
        {
            let ge = grad_enc.data_mut();
            let gz = grad_z.data();
            for (b, s) in stats.iter().enumerate() {
                for j in 0..m {
                    let u = s.mean[j];
                    let lv = s.log_var[j];
                    let e = noise[b * m + j];
                    let dz = gz[b * m + j];
                    ge[b * 2 * m + j] = dz + u * inv_n;
                    ge[b * 2 * m + m + j] =
                        dz * e * 0.5 * (0.5 * lv).exp() + 0.5 * (lv.exp() - 1.0) * inv_n;
                }
            }
        }
        let (_, enc_grads) = self.encoder.backward_from(&encoder_tape, &grad_enc)?;
        let mut grads = enc_grads;
        grads.extend(dec_grads);
        Ok(BatchGradients {
            loss,
            grads,
            encoder_tape,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: vec![
                ("image_side".into(), self.arch.image_side as u64),
                ("channels".into(), self.arch.channels as u64),
                ("latent_dim".into(), self.arch.latent_dim as u64),
                ("base_width".into(), self.arch.base_width as u64),
                ("leaky_slope_bits".into(), self.arch.leaky_slope.to_bits()),
            ],
            networks: vec![
                ("encoder".into(), self.encoder.clone()),
                ("decoder".into(), self.decoder.clone()),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, VaeError> {
        let get = |k: &str| {
            ckpt.meta(k)
                .ok_or_else(|| VaeError::Config(format!("checkpoint lacks `{k}`")))
        };
        let arch = VaeArchitecture {
            image_side: get("image_side")? as usize,
            channels: get("channels")? as usize,
            latent_dim: get("latent_dim")? as usize,
            base_width: get("base_width")? as usize,
            leaky_slope: f64::from_bits(get("leaky_slope_bits")?),
        };
        let template = arch.build(0)?;
        let encoder = ckpt
            .network("encoder")
            .ok_or_else(|| VaeError::Config("checkpoint lacks encoder".into()))?;
        let decoder = ckpt
            .network("decoder")
            .ok_or_else(|| VaeError::Config("checkpoint lacks decoder".into()))?;
        ensure_same_architecture(&template.encoder, encoder)?;
        ensure_same_architecture(&template.decoder, decoder)?;
        Ok(Self {
            arch,
            encoder: encoder.clone(),
            decoder: decoder.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub seed: u64,
}

impl TrainLog {
    pub fn epochs(&self) -> usize {
        self.epoch_loss.len()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedVae {
    pub model: VaeModel,
    pub log: TrainLog,
    /// Latent means of the training images, in input order.
    pub zs: Vec<Vec<f64>>,
    /// Latent mean of the objective image, when one was supplied.
    pub zo: Option<Vec<f64>>,
}

/// Train from scratch. The objective image, if any, joins the corpus with the
/// same weight as every other image.
pub fn train(
    arch: &VaeArchitecture,
    images: &[Tensor],
    objective: Option<&Tensor>,
    cfg: &TrainConfig,
) -> Result<TrainedVae, VaeError> {
    train_with_progress(arch, images, objective, cfg, |_, _| {})
}

pub fn train_with_progress(
    arch: &VaeArchitecture,
    images: &[Tensor],
    objective: Option<&Tensor>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainedVae, VaeError> {
    if images.is_empty() {
        return Err(VaeError::EmptyCorpus);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(VaeError::Config("epochs and batch_size must be positive".into()));
    }
    let mut model = arch.build(cfg.seed)?;
    let mut corpus: Vec<&Tensor> = images.iter().collect();
    corpus.extend(objective);
    for img in &corpus {
        if img.shape() != arch.image_shape() {
            return Err(VaeError::ImageShape {
                expected: arch.image_shape(),
                actual: img.shape().to_vec(),
            });
        }
    }
    let m = arch.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1e);
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&Tensor> = chunk.iter().map(|&i| corpus[i]).collect();
            let mut shape = vec![items.len()];
            shape.extend_from_slice(&arch.image_shape());
            let data: Vec<f64> = items.iter().flat_map(|t| t.data().iter().copied()).collect();
            let batch = Tensor::new(shape, data)?;
            let noise: Vec<f64> = (0..items.len() * m)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let step = model.loss_gradients(&batch, &noise)?;
            if !step.loss.is_finite() || step.grads.iter().any(|g| !g.all_finite()) {
                return Err(VaeError::Diverged {
                    epoch,
                    batch: bi,
                    loss: step.loss,
                });
            }
            total += step.loss * items.len() as f64;
            let BatchGradients {
                grads,
                encoder_tape,
                ..
            } = step;
            adam.step(&mut model.params_mut(), &grads)?;
            model.encoder.commit_running_stats(&encoder_tape);
        }
        let mean = total / corpus.len() as f64;
        progress(epoch, mean);
        epoch_loss.push(mean);
    }
    let zs = encode_means(&model, images)?;
    let zo = match objective {
        Some(o) => Some(model.encode(o)?.mean),
        None => None,
    };
    Ok(TrainedVae {
        model,
        log: TrainLog {
            epoch_loss,
            seed: cfg.seed,
        },
        zs,
        zo,
    })
}

/// Latent means of a list of images, batched for speed.
pub fn encode_means(model: &VaeModel, images: &[Tensor]) -> Result<Vec<Vec<f64>>, VaeError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(32) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let mut shape = vec![refs.len()];
        shape.extend_from_slice(&model.arch.image_shape());
        let data: Vec<f64> = refs.iter().flat_map(|t| t.data().iter().copied()).collect();
        let batch = Tensor::new(shape, data)?;
        out.extend(model.encode_batch(&batch)?.into_iter().map(|s| s.mean));
    }
    Ok(out)
}
