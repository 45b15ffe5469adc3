//! Least-squares support vector regression with an RBF kernel, its
//! per-coordinate multi-output wrapper, k-fold hyperparameter selection and a
//! CSV persistence bundle.
//!
//! Training solves the bordered system
//!
//! ```text
//! [ 0   1ᵀ        ] [b]   [0]
//! [ 1   Λ + I/γ   ] [α] = [z]
//! ```
//!
//! by LU factorization with partial pivoting.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::{ParameterSpace, ParameterSpec};

#[derive(Debug, thiserror::Error)]
pub enum LssvrError {
    #[error("singular system (pivot ratio condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("expected input dimension {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("no training anchors")]
    Empty,
    #[error("{targets} targets for {anchors} anchors")]
    TargetCount { anchors: usize, targets: usize },
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("gamma_reg must be positive, got {0}")]
    BadGamma(f64),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("{k}-fold split needs at least {k} anchors, got {n}")]
    Folds { n: usize, k: usize },
    #[error("surrogate bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self, LssvrError> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(LssvrError::BadBandwidth(bandwidth));
        }
        Ok(Self {
            kind: KernelKind::Rbf,
            bandwidth,
        })
    }

    /// Kernel value from a squared distance.
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        match self.kind {
            KernelKind::Rbf => (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp(),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.from_sq_dist(sq_dist(a, b))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major `n×n` kernel matrix.
pub fn kernel_matrix(anchors: &[Vec<f64>], kernel: &KernelSpec) -> Vec<f64> {
    let n = anchors.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = kernel.from_sq_dist(0.0);
        for j in 0..i {
            let v = kernel.eval(&anchors[i], &anchors[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// LU factors of a square matrix with row pivoting (`PA = LU`).
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<Self, LssvrError> {
        assert_eq!(a.len(), n * n, "matrix buffer must be n×n");
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pmax = 0.0f64;
        for k in 0..n {
            let (mut p, mut best) = (k, a[k * n + k].abs());
            for r in k + 1..n {
                let v = a[r * n + k].abs();
                if v > best {
                    p = r;
                    best = v;
                }
            }
            pmax = pmax.max(best);
            if !(best > scale * 1e-15) {
                return Err(LssvrError::Singular {
                    condition: if best > 0.0 { pmax / best } else { f64::INFINITY },
                });
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / pivot;
                a[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        a[r * n + c] -= f * a[k * n + c];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.lu[r * n + c] * x[c]).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.lu[r * n + c] * x[c]).sum();
            x[r] = (x[r] - s) / self.lu[r * n + r];
        }
        x
    }
}

/// The bordered `(n+1)×(n+1)` training matrix.
pub fn system_matrix(anchors: &[Vec<f64>], gamma_reg: f64, kernel: &KernelSpec) -> Vec<f64> {
    let n = anchors.len();
    let k = kernel_matrix(anchors, kernel);
    let m = n + 1;
    let mut a = vec![0.0; m * m];
    for i in 0..n {
        a[i + 1] = 1.0;
        a[(i + 1) * m] = 1.0;
        for j in 0..n {
            a[(i + 1) * m + j + 1] = k[i * n + j];
        }
        a[(i + 1) * m + i + 1] += 1.0 / gamma_reg;
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct LssvrModel {
    pub anchors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub gamma_reg: f64,
    /// Training residuals `e_i = α_i / γ`.
    pub residuals: Vec<f64>,
}

fn check_anchors(anchors: &[Vec<f64>]) -> Result<usize, LssvrError> {
    let d = anchors.first().ok_or(LssvrError::Empty)?.len();
    for a in anchors {
        if a.len() != d {
            return Err(LssvrError::Dimension {
                expected: d,
                actual: a.len(),
            });
        }
    }
    Ok(d)
}

fn check_gamma(gamma_reg: f64) -> Result<(), LssvrError> {
    if !(gamma_reg > 0.0) {
        return Err(LssvrError::BadGamma(gamma_reg));
    }
    Ok(())
}

/// Factor the training system once and solve for several target columns.
fn fit_columns(
    anchors: &[Vec<f64>],
    columns: &[Vec<f64>],
    gamma_reg: f64,
    kernel: &KernelSpec,
) -> Result<Vec<LssvrModel>, LssvrError> {
    check_anchors(anchors)?;
    check_gamma(gamma_reg)?;
    let n = anchors.len();
    for c in columns {
        if c.len() != n {
            return Err(LssvrError::TargetCount {
                anchors: n,
                targets: c.len(),
            });
        }
    }
    let lu = Lu::factor(system_matrix(anchors, gamma_reg, kernel), n + 1)?;
    Ok(columns
        .iter()
        .map(|z| {
            let mut rhs = Vec::with_capacity(n + 1);
            rhs.push(0.0);
            rhs.extend_from_slice(z);
            let sol = lu.solve(&rhs);
            let alphas = sol[1..].to_vec();
            LssvrModel {
                anchors: anchors.to_vec(),
                residuals: alphas.iter().map(|a| a / gamma_reg).collect(),
                alphas,
                bias: sol[0],
                kernel: *kernel,
                gamma_reg,
            }
        })
        .collect())
}

pub fn fit(
    anchors: &[Vec<f64>],
    targets: &[f64],
    gamma_reg: f64,
    kernel: &KernelSpec,
) -> Result<LssvrModel, LssvrError> {
    Ok(fit_columns(anchors, &[targets.to_vec()], gamma_reg, kernel)?.remove(0))
}

impl LssvrModel {
    pub fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn predict(&self, theta: &[f64]) -> Result<f64, LssvrError> {
        if theta.len() != self.dim() {
            return Err(LssvrError::Dimension {
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        Ok(self
            .anchors
            .iter()
            .zip(&self.alphas)
            .map(|(a, al)| al * self.kernel.eval(theta, a))
            .sum::<f64>()
            + self.bias)
    }
}

/// One LSSVR per latent coordinate over shared anchors. When `space` is set,
/// inputs are min-max scaled to the unit box before kernel evaluation and the
/// stored anchors are the scaled ones.
#[derive(Debug, Clone, PartialEq)]
pub struct LvLssvrModel {
    pub space: Option<ParameterSpace>,
    pub per_latent: Vec<LssvrModel>,
}

fn columns_of(zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LssvrError> {
    let m = zs.first().ok_or(LssvrError::Empty)?.len();
    for row in zs {
        if row.len() != m {
            return Err(LssvrError::Dimension {
                expected: m,
                actual: row.len(),
            });
        }
    }
    Ok((0..m).map(|j| zs.iter().map(|r| r[j]).collect()).collect())
}

/// Every latent coordinate fitted with the same `gamma_reg` and kernel.
pub fn fit_multi(
    anchors: &[Vec<f64>],
    zs: &[Vec<f64>],
    gamma_reg: f64,
    kernel: &KernelSpec,
) -> Result<LvLssvrModel, LssvrError> {
    if zs.len() != anchors.len() {
        return Err(LssvrError::TargetCount {
            anchors: anchors.len(),
            targets: zs.len(),
        });
    }
    Ok(LvLssvrModel {
        space: None,
        per_latent: fit_columns(anchors, &columns_of(zs)?, gamma_reg, kernel)?,
    })
}

/// Per-coordinate hyperparameters, inputs scaled by `space`.
pub fn fit_multi_scaled(
    space: &ParameterSpace,
    anchors: &[Vec<f64>],
    zs: &[Vec<f64>],
    hyper: &[Hyperparams],
) -> Result<LvLssvrModel, LssvrError> {
    if zs.len() != anchors.len() {
        return Err(LssvrError::TargetCount {
            anchors: anchors.len(),
            targets: zs.len(),
        });
    }
    let scaled = scale_all(space, anchors)?;
    let cols = columns_of(zs)?;
    if hyper.len() != cols.len() {
        return Err(LssvrError::Dimension {
            expected: cols.len(),
            actual: hyper.len(),
        });
    }
    let mut per_latent = Vec::with_capacity(cols.len());
    for (col, h) in cols.into_iter().zip(hyper) {
        let kernel = KernelSpec::rbf(h.bandwidth)?;
        per_latent.push(fit_columns(&scaled, &[col], h.gamma_reg, &kernel)?.remove(0));
    }
    Ok(LvLssvrModel {
        space: Some(space.clone()),
        per_latent,
    })
}

fn scale_all(space: &ParameterSpace, anchors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LssvrError> {
    anchors
        .iter()
        .map(|a| {
            if a.len() != space.dim() {
                return Err(LssvrError::Dimension {
                    expected: space.dim(),
                    actual: a.len(),
                });
            }
            Ok(space.scale_unchecked(a))
        })
        .collect()
}

impl LvLssvrModel {
    pub fn latent_dim(&self) -> usize {
        self.per_latent.len()
    }

    pub fn input_dim(&self) -> usize {
        self.per_latent[0].dim()
    }

    pub fn predict_multi(&self, theta: &[f64]) -> Result<Vec<f64>, LssvrError> {
        let d = self.input_dim();
        if theta.len() != d {
            return Err(LssvrError::Dimension {
                expected: d,
                actual: theta.len(),
            });
        }
        let x = match &self.space {
            Some(s) => s.scale_unchecked(theta),
            None => theta.to_vec(),
        };
        // Components share anchors, so squared distances are computed once.
        let d2: Vec<f64> = self.per_latent[0]
            .anchors
            .iter()
            .map(|a| sq_dist(&x, a))
            .collect();
        Ok(self
            .per_latent
            .iter()
            .map(|m| {
                m.alphas
                    .iter()
                    .zip(&d2)
                    .map(|(al, &q)| al * m.kernel.from_sq_dist(q))
                    .sum::<f64>()
                    + m.bias
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub bandwidth: f64,
    pub gamma_reg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub bandwidths: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl HyperGrid {
    /// Bandwidths `{0.1, 0.2, 0.5, 1, 2}·√d`, `γ ∈ {1, 1e2, 1e4}`.
    pub fn default_for(d: usize) -> Self {
        let r = (d as f64).sqrt();
        Self {
            bandwidths: [0.1, 0.2, 0.5, 1.0, 2.0].iter().map(|b| b * r).collect(),
            gammas: vec![1.0, 1e2, 1e4],
        }
    }

    /// Grid points ordered by bandwidth, then gamma (the tie-break order).
    pub fn points(&self) -> Vec<Hyperparams> {
        let mut bw = self.bandwidths.clone();
        let mut gm = self.gammas.clone();
        bw.sort_by(f64::total_cmp);
        gm.sort_by(f64::total_cmp);
        bw.iter()
            .flat_map(|&b| {
                gm.iter().map(move |&g| Hyperparams {
                    bandwidth: b,
                    gamma_reg: g,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: Vec<Hyperparams>,
    /// `cv_rmse[point][latent]` in grid-point order.
    pub cv_rmse: Vec<Vec<f64>>,
    pub points: Vec<Hyperparams>,
}

/// k-fold cross-validated grid search, one choice per target column. Folds
/// come from a seeded permutation; ties go to the smaller bandwidth, then the
/// smaller gamma.
pub fn select_hyperparams_multi(
    anchors: &[Vec<f64>],
    zs: &[Vec<f64>],
    grid: &HyperGrid,
    folds: usize,
    seed: u64,
) -> Result<Selection, LssvrError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(LssvrError::EmptyGrid);
    }
    check_anchors(anchors)?;
    let n = anchors.len();
    if folds < 2 || n < folds {
        return Err(LssvrError::Folds { n, k: folds });
    }
    if zs.len() != n {
        return Err(LssvrError::TargetCount {
            anchors: n,
            targets: zs.len(),
        });
    }
    let cols = columns_of(zs)?;
    let m = cols.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (rank, &i) in order.iter().enumerate() {
            f[i] = rank % folds;
        }
        f
    };

    let mut cv_rmse = Vec::with_capacity(points.len());
    for p in &points {
        let kernel = KernelSpec::rbf(p.bandwidth)?;
        check_gamma(p.gamma_reg)?;
        let mut sse = vec![0.0; m];
        for f in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let ta: Vec<Vec<f64>> = train.iter().map(|&i| anchors[i].clone()).collect();
            let tc: Vec<Vec<f64>> = cols
                .iter()
                .map(|c| train.iter().map(|&i| c[i]).collect())
                .collect();
            let models = fit_columns(&ta, &tc, p.gamma_reg, &kernel)?;
            for &i in &test {
                for (j, model) in models.iter().enumerate() {
                    let e = model.predict(&anchors[i])? - cols[j][i];
                    sse[j] += e * e;
                }
            }
        }
        cv_rmse.push(sse.iter().map(|s| (s / n as f64).sqrt()).collect::<Vec<_>>());
    }
    let chosen = (0..m)
        .map(|j| {
            let mut best = 0;
            for k in 1..points.len() {
                if cv_rmse[k][j] < cv_rmse[best][j] {
                    best = k;
                }
            }
            points[best]
        })
        .collect();
    Ok(Selection {
        chosen,
        cv_rmse,
        points,
    })
}

pub fn select_hyperparams(
    anchors: &[Vec<f64>],
    targets: &[f64],
    grid: &HyperGrid,
    folds: usize,
    seed: u64,
) -> Result<Hyperparams, LssvrError> {
    let zs: Vec<Vec<f64>> = targets.iter().map(|&t| vec![t]).collect();
    Ok(select_hyperparams_multi(anchors, &zs, grid, folds, seed)?.chosen[0])
}

pub const BUNDLE_META: &str = "surrogate_meta.csv";
pub const BUNDLE_ANCHORS: &str = "surrogate_anchors.csv";
pub const BUNDLE_ALPHAS: &str = "surrogate_alphas.csv";
pub const BUNDLE_BOUNDS: &str = "surrogate_bounds.csv";

/// Write the model as four CSV files in `dir`:
///
/// * `surrogate_meta.csv`: `latent,kernel,bandwidth,gamma_reg,bias`
/// * `surrogate_anchors.csv`: `u_1..u_d`, one row per anchor (scaled inputs)
/// * `surrogate_alphas.csv`: `alpha_1..alpha_m`, one row per anchor
/// * `surrogate_bounds.csv`: `name,lo,hi` (header only when unscaled)
pub fn save_bundle(model: &LvLssvrModel, dir: &Path) -> Result<(), LssvrError> {
    fs::create_dir_all(dir)?;
    let mut meta = String::from("latent,kernel,bandwidth,gamma_reg,bias\n");
    for (j, m) in model.per_latent.iter().enumerate() {
        meta += &format!("{},rbf,{},{},{}\n", j + 1, m.kernel.bandwidth, m.gamma_reg, m.bias);
    }
    fs::write(dir.join(BUNDLE_META), meta)?;

    let anchors = &model.per_latent[0].anchors;
    let d = model.input_dim();
    let mut a = String::new();
    a += &(1..=d).map(|i| format!("u_{i}")).collect::<Vec<_>>().join(",");
    a.push('\n');
    for row in anchors {
        a += &row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        a.push('\n');
    }
    fs::write(dir.join(BUNDLE_ANCHORS), a)?;

    let mut al = String::new();
    al += &(1..=model.latent_dim())
        .map(|j| format!("alpha_{j}"))
        .collect::<Vec<_>>()
        .join(",");
    al.push('\n');
    for i in 0..anchors.len() {
        al += &model
            .per_latent
            .iter()
            .map(|m| m.alphas[i].to_string())
            .collect::<Vec<_>>()
            .join(",");
        al.push('\n');
    }
    fs::write(dir.join(BUNDLE_ALPHAS), al)?;

    let mut f = fs::File::create(dir.join(BUNDLE_BOUNDS))?;
    writeln!(f, "name,lo,hi")?;
    if let Some(space) = &model.space {
        for p in space.specs() {
            if p.name.contains(',') {
                return Err(LssvrError::Bundle(format!("parameter name '{}' contains a comma", p.name)));
            }
            writeln!(f, "{},{},{}", p.name, p.lo, p.hi)?;
        }
    }
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>, LssvrError> {
    let text = fs::read_to_string(path)
        .map_err(|e| LssvrError::Bundle(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect())
}

fn parse_f64(s: &str, what: &str) -> Result<f64, LssvrError> {
    s.parse()
        .map_err(|_| LssvrError::Bundle(format!("bad number '{s}' in {what}")))
}

pub fn load_bundle(dir: &Path) -> Result<LvLssvrModel, LssvrError> {
    let meta = read_rows(&dir.join(BUNDLE_META))?;
    let anchors: Vec<Vec<f64>> = read_rows(&dir.join(BUNDLE_ANCHORS))?
        .iter()
        .map(|r| r.iter().map(|s| parse_f64(s, BUNDLE_ANCHORS)).collect())
        .collect::<Result<_, _>>()?;
    let alphas: Vec<Vec<f64>> = read_rows(&dir.join(BUNDLE_ALPHAS))?
        .iter()
        .map(|r| r.iter().map(|s| parse_f64(s, BUNDLE_ALPHAS)).collect())
        .collect::<Result<_, _>>()?;
    let bounds = read_rows(&dir.join(BUNDLE_BOUNDS))?;
    if meta.is_empty() || anchors.is_empty() {
        return Err(LssvrError::Bundle("empty bundle".into()));
    }
    check_anchors(&anchors)?;
    if alphas.len() != anchors.len() || alphas.iter().any(|r| r.len() != meta.len()) {
        return Err(LssvrError::Bundle("alpha table does not match anchors/latents".into()));
    }
    let space = if bounds.is_empty() {
        None
    } else {
        let specs = bounds
            .iter()
            .map(|r| {
                if r.len() != 3 {
                    return Err(LssvrError::Bundle("bounds rows need name,lo,hi".into()));
                }
                Ok(ParameterSpec::uniform(
                    r[0].clone(),
                    parse_f64(&r[1], BUNDLE_BOUNDS)?,
                    parse_f64(&r[2], BUNDLE_BOUNDS)?,
                ))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(ParameterSpace::new(specs).map_err(|e| LssvrError::Bundle(e.to_string()))?)
    };
    let per_latent = meta
        .iter()
        .enumerate()
        .map(|(j, r)| {
            if r.len() != 5 || r[1] != "rbf" {
                return Err(LssvrError::Bundle(format!("bad meta row {}", j + 1)));
            }
            let kernel = KernelSpec::rbf(parse_f64(&r[2], BUNDLE_META)?)?;
            let gamma_reg = parse_f64(&r[3], BUNDLE_META)?;
            let a: Vec<f64> = alphas.iter().map(|row| row[j]).collect();
            Ok(LssvrModel {
                anchors: anchors.clone(),
                residuals: a.iter().map(|v| v / gamma_reg).collect(),
                alphas: a,
                bias: parse_f64(&r[4], BUNDLE_META)?,
                kernel,
                gamma_reg,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LvLssvrModel { space, per_latent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_anchors(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn kernel_matrix_examples() {
        let k = KernelSpec::rbf(0.7).unwrap();
        assert_eq!(kernel_matrix(&[vec![0.3, 0.1]], &k), vec![1.0]);
        let bw: f64 = 0.7;
        let km = kernel_matrix(&[vec![0.0], vec![bw * 2f64.sqrt()]], &k);
        assert!((km[1] - (-1f64).exp()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_anchors(5, 3, &mut rng);
        let km = kernel_matrix(&a, &k);
        for i in 0..5 {
            assert_eq!(km[i * 5 + i], 1.0);
            for j in 0..5 {
                assert!((km[i * 5 + j] - km[j * 5 + i]).abs() < 1e-14);
            }
        }
        assert!(KernelSpec::rbf(0.0).is_err());
    }

    #[test]
    fn single_anchor_is_constant() {
        let m = fit(&[vec![0.4, 0.2]], &[3.5], 10.0, &KernelSpec::rbf(0.5).unwrap()).unwrap();
        assert!(m.alphas[0].abs() < 1e-15);
        assert!((m.bias - 3.5).abs() < 1e-15);
        assert!((m.predict(&[0.9, 0.9]).unwrap() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair() {
        let m = fit(&[vec![-0.5], vec![0.5]], &[1.0, -1.0], 5.0, &KernelSpec::rbf(0.8).unwrap()).unwrap();
        assert!(m.bias.abs() < 1e-14);
        assert!((m.alphas[0] + m.alphas[1]).abs() < 1e-14);
    }

    #[test]
    fn stationarity_and_interpolation_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_anchors(12, 2, &mut rng);
        let z: Vec<f64> = a.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        let k = KernelSpec::rbf(0.3).unwrap();
        let m = fit(&a, &z, 50.0, &k).unwrap();
        assert!(m.alphas.iter().sum::<f64>().abs() < 1e-9 * 12.0);
        for i in 0..12 {
            let e = z[i] - m.predict(&a[i]).unwrap();
            assert!((m.alphas[i] - 50.0 * e).abs() <= 1e-8 * m.alphas[i].abs().max(1.0));
        }
        let m = fit(&a, &z, 1e10, &k).unwrap();
        for i in 0..12 {
            assert!((m.predict(&a[i]).unwrap() - z[i]).abs() < 1e-4);
        }
        let far = m.predict(&[100.0, -100.0]).unwrap();
        assert!((far - m.bias).abs() < 1e-12);
    }

    #[test]
    fn residuals_shrink_with_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_anchors(15, 3, &mut rng);
        let z: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = KernelSpec::rbf(0.4).unwrap();
        let mut prev = f64::INFINITY;
        for g in [1.0, 1e2, 1e4, 1e6] {
            let m = fit(&a, &z, g, &k).unwrap();
            let r: f64 = (0..15)
                .map(|i| (z[i] - m.predict(&a[i]).unwrap()).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn predict_dimension_error() {
        let m = fit(&[vec![0.0, 1.0]], &[1.0], 1.0, &KernelSpec::rbf(1.0).unwrap()).unwrap();
        assert!(matches!(m.predict(&[0.0]), Err(LssvrError::Dimension { .. })));
    }

    #[test]
    fn multi_reduces_to_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_anchors(10, 2, &mut rng);
        let zs: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] * p[1], p[0] * p[1], p[0] - p[1]]).collect();
        let k = KernelSpec::rbf(0.5).unwrap();
        let mm = fit_multi(&a, &zs, 100.0, &k).unwrap();
        let single = fit(&a, &zs.iter().map(|r| r[2]).collect::<Vec<_>>(), 100.0, &k).unwrap();
        let x = [0.3, 0.8];
        let p = mm.predict_multi(&x).unwrap();
        assert_eq!(p[0], p[1]);
        assert!((p[2] - single.predict(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn selection_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_anchors(30, 2, &mut rng);
        let z: Vec<f64> = a.iter().map(|p| (4.0 * p[0]).sin()).collect();
        let one = HyperGrid {
            bandwidths: vec![0.3],
            gammas: vec![10.0],
        };
        assert_eq!(
            select_hyperparams(&a, &z, &one, 5, 1).unwrap(),
            Hyperparams {
                bandwidth: 0.3,
                gamma_reg: 10.0
            }
        );
        let grid = HyperGrid::default_for(2);
        let s1 = select_hyperparams(&a, &z, &grid, 5, 9).unwrap();
        assert_eq!(s1, select_hyperparams(&a, &z, &grid, 5, 9).unwrap());
        let empty = HyperGrid {
            bandwidths: vec![],
            gammas: vec![1.0],
        };
        assert!(matches!(select_hyperparams(&a, &z, &empty, 5, 1), Err(LssvrError::EmptyGrid)));
        assert!(matches!(
            select_hyperparams(&a[..3], &z[..3], &grid, 5, 1),
            Err(LssvrError::Folds { .. })
        ));
    }

    #[test]
    fn bundle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let space = ParameterSpace::new(vec![
            ParameterSpec::uniform("a", -1.0, 3.0),
            ParameterSpec::uniform("b", 10.0, 20.0),
        ])
        .unwrap();
        let a: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![rng.random_range(-1.0..3.0), rng.random_range(10.0..20.0)])
            .collect();
        let zs: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0], p[1] / 10.0]).collect();
        let hyper = [
            Hyperparams {
                bandwidth: 0.5,
                gamma_reg: 100.0,
            },
            Hyperparams {
                bandwidth: 1.0,
                gamma_reg: 1.0,
            },
        ];
        let model = fit_multi_scaled(&space, &a, &zs, &hyper).unwrap();
        let dir = std::env::temp_dir().join(format!("invabc-bundle-{}", std::process::id()));
        save_bundle(&model, &dir).unwrap();
        let back = load_bundle(&dir).unwrap();
        assert_eq!(back, model);
        let x = [0.5, 15.0];
        assert_eq!(back.predict_multi(&x).unwrap(), model.predict_multi(&x).unwrap());
        fs::remove_dir_all(&dir).unwrap();
    }
}
