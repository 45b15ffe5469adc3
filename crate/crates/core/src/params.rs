//! Bounded design-parameter spaces shared by the simulator, the surrogate and
//! the sampler.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamError {
    #[error("parameter '{name}': need lo < hi, got [{lo}, {hi}]")]
    BadBounds { name: String, lo: f64, hi: f64 },
    #[error("parameter '{name}': gaussian prior needs std > 0, got {std}")]
    BadStd { name: String, std: f64 },
    #[error("expected {expected} parameters, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("parameter '{name}' = {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("empty parameter space")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorKind {
    #[default]
    Uniform,
    /// Gaussian truncated to the parameter bounds.
    Gaussian { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub prior: PriorKind,
}

impl ParameterSpec {
    pub fn uniform(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
            prior: PriorKind::Uniform,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterSpace {
    params: Vec<ParameterSpec>,
}

impl ParameterSpace {
    pub fn new(params: Vec<ParameterSpec>) -> Result<Self, ParamError> {
        let space = Self { params };
        space.validate()?;
        Ok(space)
    }

    /// `d` parameters named `theta1..thetad` on `[0, 1]`.
    pub fn unit(d: usize) -> Self {
        Self {
            params: (1..=d)
                .map(|i| ParameterSpec::uniform(format!("theta{i}"), 0.0, 1.0))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.params.is_empty() {
            return Err(ParamError::Empty);
        }
        for p in &self.params {
            if !(p.lo < p.hi) || !p.lo.is_finite() || !p.hi.is_finite() {
                return Err(ParamError::BadBounds {
                    name: p.name.clone(),
                    lo: p.lo,
                    hi: p.hi,
                });
            }
            if let PriorKind::Gaussian { std, .. } = p.prior {
                if !(std > 0.0) {
                    return Err(ParamError::BadStd {
                        name: p.name.clone(),
                        std,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn specs(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn check_dim(&self, theta: &[f64]) -> Result<(), ParamError> {
        if theta.len() != self.dim() {
            return Err(ParamError::Dimension {
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(&self.params)
                .all(|(v, p)| *v >= p.lo && *v <= p.hi)
    }

    /// Map into `[0, 1]^d`, rejecting points outside the box.
    pub fn normalize(&self, theta: &[f64]) -> Result<Vec<f64>, ParamError> {
        self.check_dim(theta)?;
        theta
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                if v >= p.lo && v <= p.hi {
                    Ok((v - p.lo) / p.width())
                } else {
                    Err(ParamError::OutOfBounds {
                        name: p.name.clone(),
                        value: v,
                        lo: p.lo,
                        hi: p.hi,
                    })
                }
            })
            .collect()
    }

    /// Affine map to `[0, 1]^d` without the box check (used for distances).
    pub fn scale_unchecked(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| (v - p.lo) / p.width())
            .collect()
    }

    pub fn denormalize(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.params)
            .map(|(&u, p)| p.lo + u * p.width())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_round_trip_and_bounds() {
        let s = ParameterSpace::new(vec![
            ParameterSpec::uniform("a", -2.0, 2.0),
            ParameterSpec::uniform("b", 10.0, 20.0),
        ])
        .unwrap();
        let u = s.normalize(&[0.0, 12.5]).unwrap();
        assert_eq!(u, vec![0.5, 0.25]);
        assert_eq!(s.denormalize(&u), vec![0.0, 12.5]);
        assert!(matches!(s.normalize(&[3.0, 12.0]), Err(ParamError::OutOfBounds { .. })));
        assert!(matches!(s.normalize(&[0.0]), Err(ParamError::Dimension { .. })));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ParameterSpace::new(vec![ParameterSpec::uniform("a", 1.0, 1.0)]).is_err());
        assert!(ParameterSpace::new(vec![]).is_err());
        let g = ParameterSpec {
            prior: PriorKind::Gaussian { mean: 0.0, std: 0.0 },
            ..ParameterSpec::uniform("g", -1.0, 1.0)
        };
        assert!(ParameterSpace::new(vec![g]).is_err());
    }
}
