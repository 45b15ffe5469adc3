//! Latin hypercube designs and their CSV form.

use std::path::Path;

use invabc::params::ParameterSpace;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub id: String,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignTable {
    pub names: Vec<String>,
    pub rows: Vec<DesignRow>,
}

/// `n` points, one per equal-width stratum in every dimension; strata are
/// paired by independent seeded permutations and each point is placed
/// uniformly inside its stratum. Ids are `{prefix}-{index:04}`.
pub fn lhd_sample(n: usize, space: &ParameterSpace, seed: u64, prefix: &str) -> DesignTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = space.dim();
    let mut unit = vec![vec![0.0; d]; n];
    for k in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (i, s) in strata.into_iter().enumerate() {
            let u: f64 = rng.random();
            // Guard against rounding up into the next stratum.
            unit[i][k] = ((s as f64 + u) / n as f64).min((s as f64 + 1.0) / n as f64 - 1e-12);
        }
    }
    DesignTable {
        names: space.names().iter().map(|s| s.to_string()).collect(),
        rows: unit
            .into_iter()
            .enumerate()
            .map(|(i, u)| DesignRow {
                id: format!("{prefix}-{i:04}"),
                theta: space.denormalize(&u),
            })
            .collect(),
    }
}

impl DesignTable {
    pub fn empty(names: Vec<String>) -> Self {
        Self { names, rows: vec![] }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: &DesignTable) {
        self.rows.extend(other.rows.iter().cloned());
    }

    /// `sample_id,<names...>`.
    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["sample_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone()];
            rec.extend(r.theta.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, PipelineError> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.get(0) != Some("sample_id") {
            return Err(PipelineError::malformed(path, "first column must be sample_id"));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let theta = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| PipelineError::malformed(path, e)))
                .collect::<Result<Vec<_>, _>>()?;
            if theta.len() != names.len() {
                return Err(PipelineError::malformed(path, "row width differs from header"));
            }
            rows.push(DesignRow {
                id: rec[0].to_string(),
                theta,
            });
        }
        Ok(Self { names, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use invabc::params::ParameterSpec;

    fn strata_ok(t: &DesignTable, space: &ParameterSpace) -> bool {
        let n = t.len();
        (0..space.dim()).all(|k| {
            let p = &space.specs()[k];
            let mut bins: Vec<usize> = t
                .rows
                .iter()
                .map(|r| (((r.theta[k] - p.lo) / p.width()) * n as f64).floor() as usize)
                .collect();
            bins.sort();
            bins == (0..n).collect::<Vec<_>>()
        })
    }

    #[test]
    fn four_points_one_dimension() {
        let space = ParameterSpace::unit(1);
        let t = lhd_sample(4, &space, 3, "x");
        let mut v: Vec<f64> = t.rows.iter().map(|r| r.theta[0]).collect();
        v.sort_by(f64::total_cmp);
        for (i, x) in v.iter().enumerate() {
            assert!(*x >= i as f64 * 0.25 && *x < (i + 1) as f64 * 0.25);
        }
    }

    #[test]
    fn stratification_and_determinism() {
        let space = ParameterSpace::new(
            (0..6)
                .map(|i| ParameterSpec::uniform(format!("p{i}"), -1.0 - i as f64, 2.0 * i as f64 + 1.0))
                .collect(),
        )
        .unwrap();
        let t = lhd_sample(100, &space, 9, "train");
        assert!(strata_ok(&t, &space));
        assert_eq!(t, lhd_sample(100, &space, 9, "train"));
        assert_ne!(t, lhd_sample(100, &space, 10, "train"));
    }

    #[test]
    fn csv_round_trip() {
        let space = ParameterSpace::unit(3);
        let t = lhd_sample(7, &space, 1, "r");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(DesignTable::read_csv(&p).unwrap(), t);
    }
}
