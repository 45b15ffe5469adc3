//! Likelihood-free parameter identification from response images.
//!
//! A variational auto-encoder compresses forming-limit images into a small
//! latent vector, a least-squares SVR maps design parameters onto that
//! latent space, and adaptive population Monte Carlo ABC recovers the
//! posterior of the parameters. A synthetic forming simulator provides the
//! forward model.

pub mod abc;
pub mod forming_sim;
pub mod imaging;
pub mod lssvr;
pub mod nn;
pub mod params;
pub mod vae;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "INVABC_THREADS";

/// Worker count from `INVABC_THREADS` (unset, empty or 0 means all cores).
pub fn configured_threads() -> Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")),
        },
    }
}

/// Size rayon's global pool from `INVABC_THREADS`. Later calls are no-ops.
pub fn init_worker_pool() -> Result<(), String> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = configured_threads()? {
        b = b.num_threads(n);
    }
    // Fails only when a global pool already exists, which is fine.
    let _ = b.build_global();
    Ok(())
}
