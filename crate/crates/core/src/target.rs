//! Target-density abstraction and concrete targets.
//!
//! Every density is represented only through its log unnormalized form
//! (finite or -inf, never +inf); the normalizing constant is never computed.

use crate::error::{Error, Result};
use crate::math::{logsumexp, CholFactor};
use statrs::distribution::{Cauchy, ContinuousCDF, Normal, StudentsT};
use std::io::Read;
use std::sync::Arc;

type LogDensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type MarginalCdfFn = dyn Fn(usize, f64) -> f64 + Send + Sync;
type PullBackFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A target distribution on R^d known up to a normalizing constant.
///
/// Immutable after construction; evaluation is pure, so one model can be
/// shared read-only across any number of concurrent workers.
#[derive(Clone)]
pub struct TargetModel {
    d: usize,
    log_unnorm: Arc<LogDensityFn>,
    marginal_cdf: Option<Arc<MarginalCdfFn>>,
    mixture: Option<Vec<(f64, TargetModel)>>,
    pull_back: Option<Arc<PullBackFn>>,
}

impl std::fmt::Debug for TargetModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TargetModel")
            .field("d", &self.d)
            .field("mixture", &self.mixture.as_ref().map(|m| m.len()))
            .finish()
    }
}

impl TargetModel {
    /// Wrap a raw log unnormalized density.
    pub fn from_fn<F>(d: usize, log_unnorm: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        TargetModel {
            d,
            log_unnorm: Arc::new(log_unnorm),
            marginal_cdf: None,
            mixture: None,
            pull_back: None,
        }
    }

    pub fn with_marginal_cdf<F>(mut self, cdf: F) -> Self
    where
        F: Fn(usize, f64) -> f64 + Send + Sync + 'static,
    {
        self.marginal_cdf = Some(Arc::new(cdf));
        self
    }

    pub fn with_mixture(mut self, components: Vec<(f64, TargetModel)>) -> Result<Self> {
        let sum: f64 = components.iter().map(|(w, _)| w).sum();
        if components.iter().any(|(w, _)| *w <= 0.0 || *w >= 1.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture { sum });
        }
        if let Some((_, c)) = components.iter().find(|(_, c)| c.d != self.d) {
            return Err(Error::Dimension { expected: self.d, got: c.d });
        }
        self.mixture = Some(components);
        Ok(self)
    }

    pub fn with_pull_back<F>(mut self, pull_back: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.pull_back = Some(Arc::new(pull_back));
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Unchecked log unnormalized density; hot path.
    pub fn log_unnorm(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.d);
        (self.log_unnorm)(theta)
    }

    pub fn mixture(&self) -> Option<&[(f64, TargetModel)]> {
        self.mixture.as_deref()
    }

    pub fn has_marginal_cdf(&self) -> bool {
        self.marginal_cdf.is_some()
    }

    /// Map a draw back to the original parameterization (identity when the
    /// model was not produced by a change of variables).
    pub fn pull_back(&self, theta: &[f64]) -> Vec<f64> {
        match &self.pull_back {
            Some(f) => f(theta),
            None => theta.to_vec(),
        }
    }
}

/// log pi~(theta) with a dimension check.
pub fn log_unnorm_density(target: &TargetModel, theta: &[f64]) -> Result<f64> {
    if theta.len() != target.d {
        return Err(Error::Dimension { expected: target.d, got: theta.len() });
    }
    Ok((target.log_unnorm)(theta))
}

/// P(theta_coord <= x) for targets with a known marginal.
pub fn analytic_marginal_cdf(target: &TargetModel, coord: usize, x: f64) -> Result<f64> {
    if coord >= target.d {
        return Err(Error::Dimension { expected: target.d, got: coord });
    }
    match &target.marginal_cdf {
        Some(f) => Ok(f(coord, x)),
        None => Err(Error::Unsupported),
    }
}

/// Families built by [`make_standard_target`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StandardKind {
    Normal,
    StudentT5,
    Cauchy,
    NormalMixture,
}

/// Location vector (1, 2, ..., d).
pub fn ramp_location(d: usize) -> Vec<f64> {
    (1..=d).map(|i| i as f64).collect()
}

/// Scale matrix S_ij = amplitude * exp(-(i-j)^2 / 2).
pub fn squared_exp_scale(d: usize, amplitude: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| amplitude * (-((i as f64 - j as f64).powi(2)) / 2.0).exp())
                .collect()
        })
        .collect()
}

struct EllipticalCore {
    loc: Vec<f64>,
    chol: CholFactor,
}

impl EllipticalCore {
    fn mahalanobis_sq(&self, theta: &[f64]) -> f64 {
        self.chol.mahalanobis_sq(theta, &self.loc)
    }
}

fn elliptical_exponent(kind: StandardKind, d: usize, m_sq: f64) -> f64 {
    match kind {
        StandardKind::Normal => -0.5 * m_sq,
        StandardKind::StudentT5 => -0.5 * (5.0 + d as f64) * (m_sq / 5.0).ln_1p(),
        StandardKind::Cauchy => -0.5 * (1.0 + d as f64) * m_sq.ln_1p(),
        StandardKind::NormalMixture => unreachable!("mixture handled separately"),
    }
}

fn marginal_cdf_for(kind: StandardKind, loc: f64, scale: f64, x: f64) -> f64 {
    match kind {
        StandardKind::Normal => Normal::new(loc, scale).unwrap().cdf(x),
        StandardKind::StudentT5 => StudentsT::new(loc, scale, 5.0).unwrap().cdf(x),
        StandardKind::Cauchy => Cauchy::new(loc, scale).unwrap().cdf(x),
        StandardKind::NormalMixture => unreachable!(),
    }
}

fn make_elliptical(kind: StandardKind, d: usize, loc: Vec<f64>, scale: &[Vec<f64>]) -> Result<TargetModel> {
    if loc.len() != d || scale.len() != d {
        return Err(Error::Dimension { expected: d, got: loc.len().max(scale.len()) });
    }
    let chol = CholFactor::from_spd(scale)?;
    let diag_sd: Vec<f64> = (0..d).map(|i| scale[i][i].sqrt()).collect();
    let loc_cdf = loc.clone();
    let core = EllipticalCore { loc, chol };
    let model = TargetModel::from_fn(d, move |theta| {
        elliptical_exponent(kind, d, core.mahalanobis_sq(theta))
    });
    // Marginals of an elliptical family are the univariate family with
    // location loc_k and scale sqrt(Sigma_kk).
    Ok(model.with_marginal_cdf(move |coord, x| {
        marginal_cdf_for(kind, loc_cdf[coord], diag_sd[coord], x)
    }))
}

/// Build one of the standard targets.
///
/// `locs` holds a single location for the plain families and one location
/// per component for a mixture; `mix_weights` is mixture-only. The returned
/// log density omits constants for the plain families (log pi~(loc) = 0) and
/// uses fully normalized component densities inside a mixture so the weights
/// keep their meaning for arbitrary component scales.
pub fn make_standard_target(
    kind: StandardKind,
    d: usize,
    locs: Vec<Vec<f64>>,
    scale: Vec<Vec<f64>>,
    mix_weights: Option<Vec<f64>>,
) -> Result<TargetModel> {
    match kind {
        StandardKind::NormalMixture => {
            let weights = mix_weights.ok_or(Error::InvalidMixture { sum: 0.0 })?;
            if weights.len() != locs.len() {
                return Err(Error::InvalidMixture { sum: weights.iter().sum() });
            }
            let chol = CholFactor::from_spd(&scale)?;
            let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - chol.log_det();
            let mut components = Vec::with_capacity(locs.len());
            for loc in &locs {
                components.push(make_elliptical(StandardKind::Normal, d, loc.clone(), &scale)?);
            }
            let pairs: Vec<(f64, TargetModel)> =
                weights.iter().cloned().zip(components.iter().cloned()).collect();
            let eval: Vec<(f64, EllipticalCore)> = weights
                .iter()
                .zip(&locs)
                .map(|(w, loc)| {
                    Ok((
                        w.ln() + log_norm,
                        EllipticalCore { loc: loc.clone(), chol: CholFactor::from_spd(&scale)? },
                    ))
                })
                .collect::<Result<_>>()?;
            let model = TargetModel::from_fn(d, move |theta| {
                let terms: Vec<f64> = eval
                    .iter()
                    .map(|(lw, core)| lw - 0.5 * core.mahalanobis_sq(theta))
                    .collect();
                logsumexp(&terms)
            });
            let cdf_parts: Vec<(f64, TargetModel)> = pairs.clone();
            let model = model.with_marginal_cdf(move |coord, x| {
                cdf_parts
                    .iter()
                    .map(|(w, c)| w * analytic_marginal_cdf(c, coord, x).unwrap())
                    .sum()
            });
            model.with_mixture(pairs)
        }
        _ => {
            let loc = locs.into_iter().next().ok_or(Error::Dimension { expected: d, got: 0 })?;
            make_elliptical(kind, d, loc, &scale)
        }
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// One shuttle flight: launch temperature and O-ring failure indicator.
#[derive(Clone, Debug)]
pub struct ChallengerRecord {
    pub flight: u32,
    pub temperature_f: f64,
    pub failure: u8,
}

/// The 23-flight O-ring dataset (`challenger.csv`).
#[derive(Clone, Debug)]
pub struct ChallengerDataset {
    pub records: Vec<ChallengerRecord>,
}

pub const CHALLENGER_CSV: &str = include_str!("../data/challenger.csv");

impl ChallengerDataset {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let expect = ["flight", "temperature_F", "failure"];
        let headers = rdr.headers().map_err(|e| Error::Data { row: 0, message: e.to_string() })?;
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::Data {
                row: 0,
                message: format!("expected header {:?}, got {:?}", expect.join(","), headers),
            });
        }
        let mut records = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let row = idx + 1;
            let rec = rec.map_err(|e| Error::Data { row, message: e.to_string() })?;
            let parse = |field: usize, name: &str| -> Result<f64> {
                rec.get(field)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Data { row, message: format!("bad {name} field") })
            };
            let failure = parse(2, "failure")?;
            if failure != 0.0 && failure != 1.0 {
                return Err(Error::Data { row, message: "failure must be 0 or 1".into() });
            }
            records.push(ChallengerRecord {
                flight: parse(0, "flight")? as u32,
                temperature_f: parse(1, "temperature_F")?,
                failure: failure as u8,
            });
        }
        let ds = ChallengerDataset { records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn bundled() -> Self {
        Self::from_reader(CHALLENGER_CSV.as_bytes()).expect("bundled challenger.csv is valid")
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::InvalidData("challenger dataset is empty".into()));
        }
        let max_t = self.records.iter().map(|r| r.temperature_f).fold(f64::MIN, f64::max);
        if max_t <= 0.0 {
            return Err(Error::InvalidData("max temperature must be positive".into()));
        }
        Ok(())
    }
}

/// One assay plate: quinoline dose, plate number, revertant colony count.
#[derive(Clone, Debug)]
pub struct SalmonellaRecord {
    pub dose: f64,
    pub plate: u32,
    pub colonies: u64,
}

/// The 6x3 mutagenicity assay dataset (`salmonella.csv`).
#[derive(Clone, Debug)]
pub struct SalmonellaDataset {
    pub records: Vec<SalmonellaRecord>,
}

pub const SALMONELLA_CSV: &str = include_str!("../data/salmonella.csv");

impl SalmonellaDataset {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let expect = ["dose", "plate", "colonies"];
        let headers = rdr.headers().map_err(|e| Error::Data { row: 0, message: e.to_string() })?;
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::Data {
                row: 0,
                message: format!("expected header {:?}, got {:?}", expect.join(","), headers),
            });
        }
        let mut records = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let row = idx + 1;
            let rec = rec.map_err(|e| Error::Data { row, message: e.to_string() })?;
            let parse = |field: usize, name: &str| -> Result<f64> {
                rec.get(field)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Data { row, message: format!("bad {name} field") })
            };
            let dose = parse(0, "dose")?;
            if dose < 0.0 {
                return Err(Error::InvalidData(format!("negative dose at row {row}")));
            }
            records.push(SalmonellaRecord {
                dose,
                plate: parse(1, "plate")? as u32,
                colonies: parse(2, "colonies")? as u64,
            });
        }
        if records.is_empty() {
            return Err(Error::InvalidData("salmonella dataset is empty".into()));
        }
        Ok(SalmonellaDataset { records })
    }

    pub fn bundled() -> Self {
        Self::from_reader(SALMONELLA_CSV.as_bytes()).expect("bundled salmonella.csv is valid")
    }
}

// ---------------------------------------------------------------------------
// Posteriors
// ---------------------------------------------------------------------------

/// Stable log(1 + exp(z)).
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Two-parameter logistic posterior over (alpha, beta) with flat prior.
///
/// y_i ~ Bernoulli(p_i), logit p_i = alpha + beta * x_i, x_i = t_i / max t_i.
pub fn make_challenger_posterior(data: &ChallengerDataset) -> Result<TargetModel> {
    data.validate()?;
    let max_t = data.records.iter().map(|r| r.temperature_f).fold(f64::MIN, f64::max);
    let xy: Vec<(f64, f64)> = data
        .records
        .iter()
        .map(|r| (r.temperature_f / max_t, r.failure as f64))
        .collect();
    Ok(TargetModel::from_fn(2, move |theta| {
        let (alpha, beta) = (theta[0], theta[1]);
        xy.iter()
            .map(|&(x, y)| {
                let eta = alpha + beta * x;
                y * eta - softplus(eta)
            })
            .sum()
    }))
}

/// Three-parameter Poisson log-linear posterior over (alpha, beta, gamma).
///
/// y_ij ~ Poisson(mu_i), log mu_i = alpha + beta*log(x_i + 10) + gamma*x_i,
/// with independent N(0, 100^2) priors on all three parameters.
pub fn make_salmonella_posterior(data: &SalmonellaDataset) -> Result<TargetModel> {
    if data.records.is_empty() {
        return Err(Error::InvalidData("salmonella dataset is empty".into()));
    }
    if let Some(r) = data.records.iter().find(|r| r.dose < 0.0) {
        return Err(Error::InvalidData(format!("negative dose {}", r.dose)));
    }
    let rows: Vec<(f64, f64)> =
        data.records.iter().map(|r| (r.dose, r.colonies as f64)).collect();
    const PRIOR_SD: f64 = 100.0;
    Ok(TargetModel::from_fn(3, move |theta| {
        let (a, b, g) = (theta[0], theta[1], theta[2]);
        let loglik: f64 = rows
            .iter()
            .map(|&(x, y)| {
                let log_mu = a + b * (x + 10.0).ln() + g * x;
                y * log_mu - log_mu.exp()
            })
            .sum();
        let log_prior = -(a * a + b * b + g * g) / (2.0 * PRIOR_SD * PRIOR_SD);
        loglik + log_prior
    }))
}
