//! Pilot MCMC: additive transformation-based moves with an optional
//! common-sign mixing-enhancement stage, plus location/scale summaries used
//! to center and scale the shell system.

use crate::error::{Error, Result};
use crate::math::{covariance_rows, mean_rows};
use crate::target::TargetModel;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Summary statistics of a pilot run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PilotSummary {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub robust: bool,
}

/// Chain controls. `scales` are the per-coordinate step constants a_j; every
/// iteration uses a single |N(0,1)| innovation with independent signs, and
/// the enhancement stage re-proposes with one common sign for all
/// coordinates.
#[derive(Clone, Debug)]
pub struct PilotOptions {
    pub scales: Vec<f64>,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub enhance: bool,
    pub robust: bool,
    pub init: Option<Vec<f64>>,
}

impl PilotOptions {
    pub fn new(scales: Vec<f64>, n_iter: usize, burn_in: usize) -> Self {
        PilotOptions { scales, n_iter, burn_in, thin: 1, enhance: true, robust: false, init: None }
    }
}

/// Run the additive chain and summarize location/scale from the retained
/// post-burn-in states (every `thin`-th).
pub fn run_additive_tmcmc<R: Rng + ?Sized>(
    rng: &mut R,
    target: &TargetModel,
    opts: &PilotOptions,
) -> Result<(Vec<Vec<f64>>, PilotSummary)> {
    let d = target.dim();
    if opts.scales.len() != d {
        return Err(Error::Dimension { expected: d, got: opts.scales.len() });
    }
    if opts.scales.iter().any(|a| *a <= 0.0) || opts.burn_in >= opts.n_iter || opts.thin == 0 {
        return Err(Error::Config("pilot scales must be positive and burn_in < n_iter".into()));
    }
    let mut state = opts.init.clone().unwrap_or_else(|| vec![0.0; d]);
    if state.len() != d {
        return Err(Error::Dimension { expected: d, got: state.len() });
    }
    let mut lp = target.log_unnorm(&state);
    if !lp.is_finite() {
        return Err(Error::BadInit);
    }

    let mut samples = Vec::with_capacity((opts.n_iter - opts.burn_in) / opts.thin + 1);
    let mut accepted = 0u64;
    let mut proposals = 0u64;
    let mut proposal = vec![0.0; d];

    for iter in 0..opts.n_iter {
        // Stage 1: one scalar innovation, independent signs per coordinate.
        let eps: f64 = rng.sample::<f64, _>(StandardNormal).abs();
        for j in 0..d {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            proposal[j] = state[j] + sign * opts.scales[j] * eps;
        }
        let lp_new = target.log_unnorm(&proposal);
        proposals += 1;
        let u: f64 = rng.gen();
        if lp_new - lp >= 0.0 || u < (lp_new - lp).exp() {
            state.copy_from_slice(&proposal);
            lp = lp_new;
            accepted += 1;
        }

        // Stage 2: common-sign move from the current state.
        if opts.enhance {
            let eps2: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            for j in 0..d {
                proposal[j] = state[j] + sign * opts.scales[j] * eps2;
            }
            let lp_new = target.log_unnorm(&proposal);
            proposals += 1;
            let u: f64 = rng.gen();
            if lp_new - lp >= 0.0 || u < (lp_new - lp).exp() {
                state.copy_from_slice(&proposal);
                lp = lp_new;
                accepted += 1;
            }
        }

        if iter >= opts.burn_in && (iter - opts.burn_in).is_multiple_of(opts.thin) {
            samples.push(state.clone());
        }
    }

    let (mu_hat, sigma_hat) = estimate_location_scale(&samples, opts.robust)?;
    let summary = PilotSummary {
        mu_hat,
        sigma_hat,
        acceptance_rate: accepted as f64 / proposals as f64,
        n_iter: opts.n_iter,
        burn_in: opts.burn_in,
        thin: opts.thin,
        robust: opts.robust,
    };
    Ok((samples, summary))
}

/// Location and scale of a sample set.
///
/// Plain path: mean and covariance (denominator n-1). Robust path (for
/// heavy-tailed targets with no moments): coordinatewise median, scale
/// 1.4826*MAD per coordinate, and the correlation of rank-transformed data
/// to fill in the off-diagonal structure.
pub fn estimate_location_scale(
    samples: &[Vec<f64>],
    robust: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { need: 1, got: 0 });
    }
    let d = samples[0].len();
    if samples.len() < d + 1 {
        return Err(Error::InsufficientSamples { need: d + 1, got: samples.len() });
    }
    if !robust {
        let mu = mean_rows(samples);
        let sigma = covariance_rows(samples, &mu);
        return Ok((mu, sigma));
    }

    let n = samples.len();
    let mut mu = vec![0.0; d];
    let mut mad_scale = vec![0.0; d];
    let mut col = vec![0.0; n];
    for j in 0..d {
        for (i, row) in samples.iter().enumerate() {
            col[i] = row[j];
        }
        let med = median_in_place(&mut col);
        mu[j] = med;
        for v in col.iter_mut() {
            *v = (*v - med).abs();
        }
        mad_scale[j] = 1.4826 * median_in_place(&mut col);
        if mad_scale[j] == 0.0 {
            // Degenerate coordinate: fall back to a tiny positive scale so the
            // downstream Cholesky jitter path decides.
            mad_scale[j] = f64::MIN_POSITIVE.sqrt();
        }
    }
    let ranks = rank_transform(samples);
    let corr = crate::math::correlation_rows(&ranks)?;
    let mut sigma = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            sigma[i][j] = corr[i][j] * mad_scale[i] * mad_scale[j];
        }
    }
    Ok((mu, sigma))
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn rank_transform(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = samples.len();
    let d = samples[0].len();
    let mut out = vec![vec![0.0; d]; n];
    let mut idx: Vec<usize> = (0..n).collect();
    for j in 0..d {
        idx.sort_by(|&a, &b| samples[a][j].partial_cmp(&samples[b][j]).unwrap());
        for (rank, &i) in idx.iter().enumerate() {
            out[i][j] = rank as f64;
        }
    }
    out
}
