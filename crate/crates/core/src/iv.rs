//! Linear instrumental-variable model, two-stage least squares, and
//! knowledge-based removal of invalid instruments.
//!
//! Data follow
//! `exposure = Z alpha + U xi + e_E` and
//! `outcome = exposure beta + Z gamma + U zeta + e_O`,
//! with standard normal instruments `Z` and no intercepts.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this first-stage F the instruments are flagged as weak.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvScenario {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub gamma: Vec<f64>,
    /// Loading of the hidden confounder on the exposure.
    pub xi_conf: f64,
    /// Loading of the hidden confounder on the outcome.
    pub zeta: f64,
    pub sigma_exposure: f64,
    pub sigma_outcome: f64,
    pub sigma_confounder: f64,
}

impl Default for IvScenario {
    /// Five instruments, the last one leaking straight into the outcome.
    fn default() -> Self {
        IvScenario {
            alpha: vec![1.0, 1.0, 1.0, 0.5, 0.5],
            beta: 1.0,
            gamma: vec![0.0, 0.0, 0.0, 0.0, 1.0],
            xi_conf: 1.0,
            zeta: 1.0,
            sigma_exposure: 1.0,
            sigma_outcome: 1.0,
            sigma_confounder: 1.0,
        }
    }
}

impl IvScenario {
    pub fn instruments(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::InvalidValue(
                "scenario needs at least one instrument".into(),
            ));
        }
        if self.gamma.len() != self.alpha.len() {
            return Err(Error::InvalidValue(format!(
                "gamma has {} entries, alpha has {}",
                self.gamma.len(),
                self.alpha.len()
            )));
        }
        let scales = [
            self.sigma_exposure,
            self.sigma_outcome,
            self.sigma_confounder,
        ];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidValue(
                "noise scales must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Instruments whose direct effect on the outcome is zero.
    pub fn true_flags(&self) -> Vec<bool> {
        self.gamma.iter().map(|g| *g == 0.0).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: IvScenario = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset {
    /// `n x p` instrument matrix.
    pub instruments: DMatrix<f64>,
    pub exposure: DVector<f64>,
    pub outcome: DVector<f64>,
}

impl IvDataset {
    pub fn rows(&self) -> usize {
        self.exposure.len()
    }

    pub fn instruments(&self) -> usize {
        self.instruments.ncols()
    }
}

pub fn simulate_iv(scenario: &IvScenario, n: usize, seed: u64) -> Result<IvDataset> {
    scenario.validate()?;
    let p = scenario.instruments();
    if n < p + 2 {
        return Err(Error::TooFewSamples {
            needed: p + 2,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::zeros(n, p);
    let mut exposure = DVector::zeros(n);
    let mut outcome = DVector::zeros(n);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        let u = scenario.sigma_confounder * rng.sample::<f64, _>(StandardNormal);
        let e_exp = scenario.sigma_exposure * rng.sample::<f64, _>(StandardNormal);
        let e_out = scenario.sigma_outcome * rng.sample::<f64, _>(StandardNormal);
        let row = z.row(i);
        let x =
            (0..p).map(|j| row[j] * scenario.alpha[j]).sum::<f64>() + u * scenario.xi_conf + e_exp;
        let leak: f64 = (0..p).map(|j| row[j] * scenario.gamma[j]).sum();
        exposure[i] = x;
        outcome[i] = x * scenario.beta + leak + u * scenario.zeta + e_out;
    }
    Ok(IvDataset {
        instruments: z,
        exposure,
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvEstimate {
    pub beta_hat: f64,
    pub first_stage_f: f64,
    pub subset: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub f: f64,
    pub weak: bool,
}

fn columns(data: &IvDataset, subset: &[usize]) -> Result<DMatrix<f64>> {
    if subset.is_empty() || data.rows() == 0 {
        return Err(Error::EmptySubset);
    }
    if let Some(&bad) = subset.iter().find(|&&j| j >= data.instruments()) {
        return Err(Error::InvalidValue(format!(
            "instrument index {bad} out of range"
        )));
    }
    Ok(data.instruments.select_columns(subset))
}

/// First-stage fit: fitted exposure and the F statistic of the no-intercept
/// regression of exposure on `z`.
fn first_stage(z: &DMatrix<f64>, exposure: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let (n, k) = z.shape();
    if n <= k {
        return Err(Error::TooFewSamples {
            needed: k + 1,
            got: n,
        });
    }
    let chol = (z.transpose() * z).cholesky().ok_or(Error::RankDeficient)?;
    let coef = chol.solve(&(z.transpose() * exposure));
    let fitted = z * coef;
    let explained = fitted.norm_squared();
    let residual = (exposure - &fitted).norm_squared();
    let f = if residual > 0.0 {
        (explained / k as f64) / (residual / (n - k) as f64)
    } else {
        f64::INFINITY
    };
    Ok((fitted, f.max(0.0)))
}

/// Two-stage least squares using the instrument columns in `subset`.
pub fn tsls(data: &IvDataset, subset: &[usize]) -> Result<IvEstimate> {
    let z = columns(data, subset)?;
    let (fitted, f) = first_stage(&z, &data.exposure)?;
    let denom = fitted.dot(&fitted);
    if denom <= f64::EPSILON * data.exposure.norm_squared().max(1.0) {
        return Err(Error::RankDeficient);
    }
    Ok(IvEstimate {
        beta_hat: fitted.dot(&data.outcome) / denom,
        first_stage_f: f,
        subset: subset.to_vec(),
    })
}

/// 2SLS restricted to the instruments an expert judged valid.
pub fn knowledge_filter(flags: &[bool], data: &IvDataset) -> Result<IvEstimate> {
    if flags.len() != data.instruments() {
        return Err(Error::InvalidValue(format!(
            "{} flags for {} instruments",
            flags.len(),
            data.instruments()
        )));
    }
    let subset: Vec<usize> = (0..flags.len()).filter(|&j| flags[j]).collect();
    if subset.is_empty() {
        return Err(Error::NoValidInstruments);
    }
    tsls(data, &subset)
}

/// First-stage strength of `subset`. Says nothing about exclusion.
pub fn relevance_check(data: &IvDataset, subset: &[usize]) -> Result<Relevance> {
    let z = columns(data, subset)?;
    let (_, f) = first_stage(&z, &data.exposure)?;
    Ok(Relevance {
        f,
        weak: f < WEAK_INSTRUMENT_F,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvRow {
    pub seed: u64,
    pub subset: String,
    pub beta_hat: f64,
    pub f: f64,
}

/// Replicates of the scenario, each estimated with every instrument and with
/// the expert-filtered set.
pub fn iv_replicates(
    scenario: &IvScenario,
    flags: &[bool],
    n: usize,
    seeds: std::ops::Range<u64>,
) -> Result<Vec<IvRow>> {
    let all: Vec<usize> = (0..scenario.instruments()).collect();
    let mut rows = Vec::new();
    for seed in seeds {
        let data = simulate_iv(scenario, n, seed)?;
        for (label, est) in [
            ("all", tsls(&data, &all)?),
            ("filtered", knowledge_filter(flags, &data)?),
        ] {
            rows.push(IvRow {
                seed,
                subset: format!("{label}:{}", join_indices(&est.subset)),
                beta_hat: est.beta_hat,
                f: est.first_stage_f,
            });
        }
    }
    Ok(rows)
}

fn join_indices(subset: &[usize]) -> String {
    subset
        .iter()
        .map(|j| j.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_csv<W: Write>(rows: &[IvRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}
