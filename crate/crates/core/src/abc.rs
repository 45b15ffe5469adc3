//! Likelihood-free posterior sampling: rejection ABC and population Monte
//! Carlo with a diagonal Gaussian transition kernel and adaptive (quantile)
//! tolerance.
//!
//! Every particle slot draws from its own ChaCha stream keyed by
//! `(seed, generation, slot)`, so results do not depend on how slots are
//! scheduled across threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::params::{ParameterSpace, PriorKind};

#[derive(Debug, thiserror::Error)]
pub enum AbcError {
    #[error("vector lengths differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("parameter dimension {expected} expected, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error(
        "generation {generation}: acceptance rate fell below {floor:e} \
         (slot {slot} made {proposals} proposals without acceptance at ε = {epsilon})"
    )]
    AcceptanceFloor {
        generation: usize,
        slot: usize,
        proposals: u64,
        floor: f64,
        epsilon: f64,
    },
    #[error("generation {generation}: all importance weights vanished")]
    ZeroWeights { generation: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("the forward model returned {actual} values, expected {expected}")]
    ForwardLength { expected: usize, actual: usize },
    #[error("the forward model returned a non-finite value at generation {generation}")]
    NonFinite { generation: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorDim {
    Uniform { lo: f64, hi: f64 },
    TruncatedGaussian { mean: f64, std: f64, lo: f64, hi: f64 },
}

impl PriorDim {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            PriorDim::Uniform { lo, hi } | PriorDim::TruncatedGaussian { lo, hi, .. } => (lo, hi),
        }
    }

    fn std_normal_window(mean: f64, std: f64, lo: f64, hi: f64) -> (f64, f64) {
        ((lo - mean) / std, (hi - mean) / std)
    }

    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        match *self {
            PriorDim::Uniform { lo, hi } => 1.0 / (hi - lo),
            PriorDim::TruncatedGaussian { mean, std, lo, hi } => {
                let n = Normal::standard();
                let (a, b) = Self::std_normal_window(mean, std, lo, hi);
                let z = n.cdf(b) - n.cdf(a);
                n.pdf((x - mean) / std) / (std * z)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorDim::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            PriorDim::TruncatedGaussian { mean, std, lo, hi } => {
                let n = Normal::standard();
                let (mut a, mut b) = Self::std_normal_window(mean, std, lo, hi);
                // Invert in the lower tail where the CDF has full precision.
                let flip = a > 0.0;
                if flip {
                    (a, b) = (-b, -a);
                }
                let (ca, cb) = (n.cdf(a), n.cdf(b));
                let u = ca + (cb - ca) * rng.random::<f64>();
                let z = n.inverse_cdf(u).clamp(a, b);
                mean + std * if flip { -z } else { z }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PriorDim::Uniform { lo, hi } => 0.5 * (lo + hi),
            PriorDim::TruncatedGaussian { mean, std, lo, hi } => {
                let n = Normal::standard();
                let (a, b) = Self::std_normal_window(mean, std, lo, hi);
                mean + std * (n.pdf(a) - n.pdf(b)) / (n.cdf(b) - n.cdf(a))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub dims: Vec<PriorDim>,
}

impl Prior {
    pub fn from_space(space: &ParameterSpace) -> Self {
        Self {
            dims: space
                .specs()
                .iter()
                .map(|p| match p.prior {
                    PriorKind::Uniform => PriorDim::Uniform { lo: p.lo, hi: p.hi },
                    PriorKind::Gaussian { mean, std } => PriorDim::TruncatedGaussian {
                        mean,
                        std,
                        lo: p.lo,
                        hi: p.hi,
                    },
                })
                .collect(),
        }
    }

    pub fn uniform(bounds: &[(f64, f64)]) -> Self {
        Self {
            dims: bounds
                .iter()
                .map(|&(lo, hi)| PriorDim::Uniform { lo, hi })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.iter().zip(&self.dims).all(|(&x, d)| {
            let (lo, hi) = d.bounds();
            x >= lo && x <= hi
        })
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.dims)
            .map(|(&x, d)| d.density(x))
            .product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.dims.iter().map(|d| d.sample(rng)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.dims.iter().map(PriorDim::mean).collect()
    }
}

/// Euclidean distance between summary vectors.
pub fn distance(zo: &[f64], zhat: &[f64]) -> Result<f64, AbcError> {
    if zo.len() != zhat.len() {
        return Err(AbcError::Length(zo.len(), zhat.len()));
    }
    Ok(zo
        .iter()
        .zip(zhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub theta: Vec<f64>,
    pub weight: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePool {
    pub generation: usize,
    pub particles: Vec<Particle>,
    pub sigma: Vec<f64>,
    pub epsilon: f64,
    /// Forward evaluations spent on this generation.
    pub proposals: u64,
}

impl ParticlePool {
    pub fn acceptance_rate(&self) -> f64 {
        self.particles.len() as f64 / self.proposals as f64
    }

    pub fn distances(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.distance).collect()
    }
}

/// Independent stream for one particle slot of one generation.
pub fn slot_rng(seed: u64, generation: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | slot as u64);
    rng
}

fn check_forward(z: &[f64], m: usize, generation: usize) -> Result<(), AbcError> {
    if z.len() != m {
        return Err(AbcError::ForwardLength {
            expected: m,
            actual: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(AbcError::NonFinite { generation });
    }
    Ok(())
}

fn max_attempts(floor: f64) -> u64 {
    if floor > 0.0 {
        (1.0 / floor).ceil() as u64
    } else {
        u64::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerLimits {
    /// Abort once a slot's acceptance rate drops below this value.
    pub acceptance_floor: f64,
}

impl Default for SamplerLimits {
    fn default() -> Self {
        Self {
            acceptance_floor: 1e-6,
        }
    }
}

/// `n` prior draws accepted within `epsilon`, equal weights.
#[allow(clippy::too_many_arguments)]
pub fn rejection_sample<F>(
    prior: &Prior,
    forward: &F,
    zo: &[f64],
    epsilon: f64,
    n: usize,
    seed: u64,
    generation: usize,
    limits: &SamplerLimits,
) -> Result<ParticlePool, AbcError>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if n == 0 {
        return Err(AbcError::Config("particle count must be ≥ 1".into()));
    }
    let cap = max_attempts(limits.acceptance_floor);
    let slots: Vec<(Particle, u64)> = (0..n)
        .into_par_iter()
        .map(|slot| {
            let mut rng = slot_rng(seed, generation, slot);
            let mut proposals = 0u64;
            loop {
                if proposals >= cap {
                    return Err(AbcError::AcceptanceFloor {
                        generation,
                        slot,
                        proposals,
                        floor: limits.acceptance_floor,
                        epsilon,
                    });
                }
                let theta = prior.sample(&mut rng);
                let z = forward(&theta);
                check_forward(&z, zo.len(), generation)?;
                proposals += 1;
                let rho = distance(zo, &z)?;
                if rho <= epsilon {
                    return Ok((
                        Particle {
                            theta,
                            weight: 1.0 / n as f64,
                            distance: rho,
                        },
                        proposals,
                    ));
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let proposals = slots.iter().map(|s| s.1).sum();
    let particles: Vec<Particle> = slots.into_iter().map(|s| s.0).collect();
    let sigma = kernel_scale(&particles, prior);
    Ok(ParticlePool {
        generation,
        particles,
        sigma,
        epsilon,
        proposals,
    })
}

fn log_gauss_kernel(x: &[f64], center: &[f64], sigma: &[f64]) -> f64 {
    const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
    x.iter()
        .zip(center)
        .zip(sigma)
        .map(|((a, c), s)| {
            let z = (a - c) / s;
            -0.5 * z * z - s.ln() - LN_SQRT_2PI
        })
        .sum()
}

/// Unnormalized log importance weight
/// `ln P(θ) − ln Σ_j w_j q(θ | θ_j, σ)` with `q` a diagonal Gaussian.
pub fn log_pmc_weight(prev: &ParticlePool, theta: &[f64], prior: &Prior) -> Result<f64, AbcError> {
    let terms: Vec<f64> = prev
        .particles
        .iter()
        .filter(|p| p.weight > 0.0)
        .map(|p| p.weight.ln() + log_gauss_kernel(theta, &p.theta, &prev.sigma))
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(AbcError::ZeroWeights {
            generation: prev.generation,
        });
    }
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok(prior.density(theta).ln() - lse)
}

/// Normalized weights of a whole generation.
pub fn pmc_weights(prev: &ParticlePool, thetas: &[Vec<f64>], prior: &Prior) -> Result<Vec<f64>, AbcError> {
    let logs: Vec<f64> = thetas
        .par_iter()
        .map(|t| log_pmc_weight(prev, t, prior))
        .collect::<Result<_, _>>()?;
    normalize_log_weights(&logs).ok_or(AbcError::ZeroWeights {
        generation: prev.generation + 1,
    })
}

fn normalize_log_weights(logs: &[f64]) -> Option<Vec<f64>> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Some(w.into_iter().map(|v| v / s).collect())
}

/// Per-dimension kernel scale `σ = √(2·Var_w)`, with the variance floored at
/// `1e-12·(hi − lo)²`.
pub fn kernel_scale(particles: &[Particle], prior: &Prior) -> Vec<f64> {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    (0..prior.dim())
        .map(|k| {
            let mean = particles.iter().map(|p| p.weight * p.theta[k]).sum::<f64>() / total;
            let var = particles
                .iter()
                .map(|p| p.weight * (p.theta[k] - mean).powi(2))
                .sum::<f64>()
                / total;
            let (lo, hi) = prior.dims[k].bounds();
            (2.0 * var.max(1e-12 * (hi - lo).powi(2))).sqrt()
        })
        .collect()
}

fn pick_ancestor(cumulative: &[f64], u: f64) -> usize {
    let target = u * cumulative[cumulative.len() - 1];
    cumulative
        .partition_point(|&c| c <= target)
        .min(cumulative.len() - 1)
}

/// One PMC generation at tolerance `epsilon`. Proposals pick an ancestor by
/// weight and perturb it with the previous kernel scale; a proposal outside
/// the prior support is discarded and both choices are redrawn.
#[allow(clippy::too_many_arguments)]
pub fn pmc_iterate<F>(
    prev: &ParticlePool,
    prior: &Prior,
    forward: &F,
    zo: &[f64],
    epsilon: f64,
    n: usize,
    seed: u64,
    limits: &SamplerLimits,
) -> Result<ParticlePool, AbcError>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if n == 0 {
        return Err(AbcError::Config("particle count must be ≥ 1".into()));
    }
    let generation = prev.generation + 1;
    let mut acc = 0.0;
    let cumulative: Vec<f64> = prev
        .particles
        .iter()
        .map(|p| {
            acc += p.weight;
            acc
        })
        .collect();
    let cap = max_attempts(limits.acceptance_floor);
    let d = prior.dim();
    let slots: Vec<(Vec<f64>, f64, u64)> = (0..n)
        .into_par_iter()
        .map(|slot| {
            let mut rng = slot_rng(seed, generation, slot);
            let mut proposals = 0u64;
            let mut draws = 0u64;
            loop {
                if proposals >= cap || draws >= cap.saturating_mul(16) {
                    return Err(AbcError::AcceptanceFloor {
                        generation,
                        slot,
                        proposals,
                        floor: limits.acceptance_floor,
                        epsilon,
                    });
                }
                draws += 1;
                let parent = &prev.particles[pick_ancestor(&cumulative, rng.random())].theta;
                let theta: Vec<f64> = (0..d)
                    .map(|k| parent[k] + prev.sigma[k] * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if !prior.contains(&theta) || prior.density(&theta) == 0.0 {
                    continue;
                }
                let z = forward(&theta);
                check_forward(&z, zo.len(), generation)?;
                proposals += 1;
                let rho = distance(zo, &z)?;
                if rho <= epsilon {
                    return Ok((theta, rho, proposals));
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let thetas: Vec<Vec<f64>> = slots.iter().map(|s| s.0.clone()).collect();
    let weights = pmc_weights(prev, &thetas, prior)?;
    let proposals = slots.iter().map(|s| s.2).sum();
    let particles: Vec<Particle> = slots
        .into_iter()
        .zip(weights)
        .map(|((theta, distance, _), weight)| Particle {
            theta,
            weight,
            distance,
        })
        .collect();
    let sigma = kernel_scale(&particles, prior);
    Ok(ParticlePool {
        generation,
        particles,
        sigma,
        epsilon,
        proposals,
    })
}

/// Linear-interpolation quantile (`h = (n − 1)·q`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Next tolerance: the `q`-quantile of the accepted distances, never above
/// `epsilon_prev`.
pub fn adapt_tolerance(distances: &[f64], q: f64, epsilon_prev: f64) -> f64 {
    quantile(distances, q).min(epsilon_prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmcConfig {
    pub n_particles: usize,
    pub t_max: usize,
    pub quantile: f64,
    pub epsilon_stop: f64,
    /// Stop when the tolerance improves by less than this fraction.
    pub min_improvement: f64,
    /// Prior-predictive draws used to place the first tolerance.
    pub pilot_size: usize,
    pub seed: u64,
    pub acceptance_floor: f64,
}

impl Default for NpmcConfig {
    fn default() -> Self {
        Self {
            n_particles: 500,
            t_max: 20,
            quantile: 0.5,
            epsilon_stop: 0.0,
            min_improvement: 0.01,
            pilot_size: 500,
            seed: 0,
            acceptance_floor: 1e-6,
        }
    }
}

impl NpmcConfig {
    pub fn validate(&self) -> Result<(), AbcError> {
        if self.n_particles == 0 || self.t_max == 0 || self.pilot_size == 0 {
            return Err(AbcError::Config(
                "n_particles, t_max and pilot_size must be ≥ 1".into(),
            ));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(AbcError::Config(format!(
                "quantile must be in (0, 1), got {}",
                self.quantile
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxGenerations,
    ToleranceReached,
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Effective sample size `1 / Σ w²`.
    pub ess: f64,
    pub particles: Vec<Particle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpmcRun {
    pub pools: Vec<ParticlePool>,
    pub summary: PosteriorSummary,
    pub epsilon_trace: Vec<f64>,
    pub acceptance_trace: Vec<f64>,
    pub stop: StopReason,
}

impl NpmcRun {
    pub fn final_pool(&self) -> &ParticlePool {
        self.pools.last().expect("a run has at least one generation")
    }
}

/// Adaptive-tolerance population Monte Carlo.
pub fn run_npmc<F>(prior: &Prior, forward: &F, zo: &[f64], cfg: &NpmcConfig) -> Result<NpmcRun, AbcError>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    let limits = SamplerLimits {
        acceptance_floor: cfg.acceptance_floor,
    };
    let pilot: Vec<f64> = (0..cfg.pilot_size)
        .into_par_iter()
        .map(|slot| {
            let mut rng = slot_rng(cfg.seed, 0, slot);
            let z = forward(&prior.sample(&mut rng));
            check_forward(&z, zo.len(), 0)?;
            distance(zo, &z)
        })
        .collect::<Result<_, _>>()?;
    let eps1 = quantile(&pilot, cfg.quantile);
    let first = rejection_sample(prior, forward, zo, eps1, cfg.n_particles, cfg.seed, 1, &limits)?;
    let mut pools = vec![first];
    let stop = loop {
        let last = pools.last().unwrap();
        if last.epsilon < cfg.epsilon_stop {
            break StopReason::ToleranceReached;
        }
        if pools.len() >= cfg.t_max {
            break StopReason::MaxGenerations;
        }
        let next_eps = adapt_tolerance(&last.distances(), cfg.quantile, last.epsilon);
        if !(last.epsilon - next_eps > cfg.min_improvement * last.epsilon) {
            break StopReason::Stalled;
        }
        let pool = pmc_iterate(last, prior, forward, zo, next_eps, cfg.n_particles, cfg.seed, &limits)?;
        pools.push(pool);
    };
    let last = pools.last().unwrap();
    let summary = summarize(&last.particles);
    Ok(NpmcRun {
        epsilon_trace: pools.iter().map(|p| p.epsilon).collect(),
        acceptance_trace: pools.iter().map(ParticlePool::acceptance_rate).collect(),
        summary,
        pools,
        stop,
    })
}

/// Weighted mean and population standard deviation per dimension.
pub fn summarize(particles: &[Particle]) -> PosteriorSummary {
    let d = particles.first().map_or(0, |p| p.theta.len());
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let mean: Vec<f64> = (0..d)
        .map(|k| particles.iter().map(|p| p.weight * p.theta[k]).sum::<f64>() / total)
        .collect();
    let std = (0..d)
        .map(|k| {
            (particles
                .iter()
                .map(|p| p.weight * (p.theta[k] - mean[k]).powi(2))
                .sum::<f64>()
                / total)
                .sqrt()
        })
        .collect();
    let ess = total * total / particles.iter().map(|p| p.weight * p.weight).sum::<f64>();
    PosteriorSummary {
        mean,
        std,
        ess,
        particles: particles.to_vec(),
    }
}

/// One row per particle of every generation:
/// `<names...>,weight,distance,generation`.
pub fn write_posterior_csv<W: Write>(mut w: W, names: &[&str], pools: &[ParticlePool]) -> std::io::Result<()> {
    writeln!(w, "{},weight,distance,generation", names.join(","))?;
    for pool in pools {
        for p in &pool.particles {
            for v in &p.theta {
                write!(w, "{v},")?;
            }
            writeln!(w, "{},{},{}", p.weight, p.distance, pool.generation)?;
        }
    }
    Ok(())
}

/// `generation,epsilon,acceptance_rate,proposals`.
pub fn write_trace_csv<W: Write>(mut w: W, pools: &[ParticlePool]) -> std::io::Result<()> {
    writeln!(w, "generation,epsilon,acceptance_rate,proposals")?;
    for p in pools {
        writeln!(w, "{},{},{},{}", p.generation, p.epsilon, p.acceptance_rate(), p.proposals)?;
    }
    Ok(())
}

/// `parameter,mean,std`.
pub fn write_summary_csv<W: Write>(mut w: W, names: &[&str], s: &PosteriorSummary) -> std::io::Result<()> {
    writeln!(w, "parameter,mean,std")?;
    for (k, name) in names.iter().enumerate() {
        writeln!(w, "{name},{},{}", s.mean[k], s.std[k])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn particles(thetas: &[f64], weights: &[f64]) -> Vec<Particle> {
        thetas
            .iter()
            .zip(weights)
            .map(|(&t, &w)| Particle {
                theta: vec![t],
                weight: w,
                distance: 0.0,
            })
            .collect()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(
            distance(&[1.0, -2.0], &[0.5, 7.0]).unwrap(),
            distance(&[0.5, 7.0], &[1.0, -2.0]).unwrap()
        );
        assert!(distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kernel_scale_examples() {
        let prior = Prior::uniform(&[(-10.0, 10.0)]);
        let s = kernel_scale(&particles(&[0.0, 2.0], &[0.5, 0.5]), &prior);
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-12);
        let s = kernel_scale(&particles(&[3.0, 3.0, 3.0], &[1.0 / 3.0; 3]), &prior);
        assert!(s[0] > 0.0);
        assert!((s[0] - (2.0 * 1e-12 * 400.0f64).sqrt()).abs() < 1e-18);
        let a = kernel_scale(&particles(&[0.1, 0.5, 0.9], &[0.2, 0.3, 0.5]), &prior)[0];
        let b = kernel_scale(&particles(&[-0.3, -1.5, -2.7], &[0.2, 0.3, 0.5]), &prior)[0];
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(adapt_tolerance(&[0.7; 5], 0.5, 1.0), 0.7);
        assert_eq!(adapt_tolerance(&[4.0, 1.0, 3.0, 2.0], 0.5, 2.0), 2.0);
    }

    #[test]
    fn summarize_examples() {
        let one = summarize(&particles(&[1.5], &[1.0]));
        assert_eq!((one.mean[0], one.std[0]), (1.5, 0.0));
        let two = summarize(&particles(&[0.0, 2.0], &[0.5, 0.5]));
        assert_eq!((two.mean[0], two.std[0]), (1.0, 1.0));
        let degenerate = summarize(&particles(&[5.0, 99.0], &[1.0, 0.0]));
        assert_eq!((degenerate.mean[0], degenerate.std[0]), (5.0, 0.0));
    }

    #[test]
    fn single_previous_particle_weight() {
        let prior = Prior::uniform(&[(-5.0, 5.0)]);
        let prev = ParticlePool {
            generation: 1,
            particles: particles(&[0.3], &[1.0]),
            sigma: vec![0.5],
            epsilon: 1.0,
            proposals: 1,
        };
        assert_eq!(pmc_weights(&prev, &[vec![1.1]], &prior).unwrap(), vec![1.0]);
    }

    #[test]
    fn weights_follow_inverse_kernel_density() {
        let prior = Prior::uniform(&[(-5.0, 5.0), (-5.0, 5.0)]);
        let prev = ParticlePool {
            generation: 2,
            particles: vec![
                Particle {
                    theta: vec![0.5, -0.5],
                    weight: 0.25,
                    distance: 0.0
                };
                4
            ],
            sigma: vec![0.4, 0.9],
            epsilon: 1.0,
            proposals: 4,
        };
        let thetas = vec![vec![0.1, 0.2], vec![0.9, -1.0], vec![0.5, -0.5]];
        let w = pmc_weights(&prev, &thetas, &prior).unwrap();
        let q = |t: &[f64]| {
            let n0 = Normal::new(0.5, 0.4).unwrap();
            let n1 = Normal::new(-0.5, 0.9).unwrap();
            n0.pdf(t[0]) * n1.pdf(t[1])
        };
        let raw: Vec<f64> = thetas.iter().map(|t| 1.0 / q(t)).collect();
        let s: f64 = raw.iter().sum();
        for (a, b) in w.iter().zip(&raw) {
            assert!((a - b / s).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejection_with_infinite_tolerance_draws_from_prior() {
        let prior = Prior::uniform(&[(-1.0, 3.0), (10.0, 20.0)]);
        let n = 4000;
        let pool = rejection_sample(&prior, &|t: &[f64]| t.to_vec(), &[0.0, 0.0], f64::INFINITY, n, 3, 1, &SamplerLimits::default()).unwrap();
        assert_eq!(pool.proposals, n as u64);
        let s = summarize(&pool.particles);
        let sd = [4.0 / 12f64.sqrt(), 10.0 / 12f64.sqrt()];
        for k in 0..2 {
            assert!((s.mean[k] - prior.mean()[k]).abs() < 3.0 * sd[k] / (n as f64).sqrt());
        }
    }

    #[test]
    fn acceptance_floor_aborts() {
        let prior = Prior::uniform(&[(0.0, 1.0)]);
        let limits = SamplerLimits {
            acceptance_floor: 1e-3,
        };
        let r = rejection_sample(&prior, &|t: &[f64]| t.to_vec(), &[5.0], 0.1, 4, 1, 1, &limits);
        assert!(matches!(r, Err(AbcError::AcceptanceFloor { generation: 1, .. })));
    }

    #[test]
    fn truncated_gaussian_prior() {
        let d = PriorDim::TruncatedGaussian {
            mean: 0.0,
            std: 1.0,
            lo: 0.5,
            hi: 3.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        assert!(xs.iter().all(|&x| (0.5..=3.0).contains(&x)));
        let m = xs.iter().sum::<f64>() / n as f64;
        assert!((m - d.mean()).abs() < 0.01);
        // Density integrates to one.
        let h = 2.5 / 10000.0;
        let integral: f64 = (0..10000).map(|i| d.density(0.5 + (i as f64 + 0.5) * h) * h).sum();
        assert!((integral - 1.0).abs() < 1e-6);
        assert_eq!(d.density(0.4), 0.0);
    }

    #[test]
    fn stationary_without_selection() {
        let prior = Prior::uniform(&[(0.0, 1.0)]);
        let limits = SamplerLimits::default();
        let f = |t: &[f64]| t.to_vec();
        let n = 3000;
        let g1 = rejection_sample(&prior, &f, &[0.5], f64::INFINITY, n, 8, 1, &limits).unwrap();
        let g2 = pmc_iterate(&g1, &prior, &f, &[0.5], f64::INFINITY, n, 8, &limits).unwrap();
        let (a, b) = (summarize(&g1.particles), summarize(&g2.particles));
        let se = (1.0 / 12f64).sqrt() / (n as f64).sqrt();
        assert!((a.mean[0] - b.mean[0]).abs() < 4.0 * se * 2f64.sqrt());
        assert!((g2.particles.iter().map(|p| p.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_forward_returns_prior() {
        let prior = Prior::uniform(&[(0.0, 2.0), (-1.0, 1.0)]);
        let cfg = NpmcConfig {
            n_particles: 2000,
            seed: 12,
            ..NpmcConfig::default()
        };
        let run = run_npmc(&prior, &|_: &[f64]| vec![0.3], &[0.3], &cfg).unwrap();
        assert_eq!(run.stop, StopReason::Stalled);
        let s = &run.summary;
        for k in 0..2 {
            let se = s.std[k] / s.ess.sqrt();
            assert!((s.mean[k] - prior.mean()[k]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn seeded_runs_repeat_bitwise() {
        let prior = Prior::uniform(&[(-10.0, 10.0)]);
        let cfg = NpmcConfig {
            n_particles: 200,
            t_max: 5,
            seed: 77,
            ..NpmcConfig::default()
        };
        let f = |t: &[f64]| t.to_vec();
        let a = run_npmc(&prior, &f, &[2.0], &cfg).unwrap();
        let b = run_npmc(&prior, &f, &[2.0], &cfg).unwrap();
        assert_eq!(a, b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_posterior_csv(&mut ca, &["t"], &a.pools).unwrap();
        write_posterior_csv(&mut cb, &["t"], &b.pools).unwrap();
        assert_eq!(ca, cb);
    }
}
