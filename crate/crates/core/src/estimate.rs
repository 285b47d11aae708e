//! Per-shell Monte Carlo estimation: unnormalized weights W_i, within-shell
//! density extrema, minorization constants p_i, and the component-selection
//! table with doubling support.

use crate::error::{Error, Result};
use crate::geometry::{ModePolicy, ShellMode, ShellSystem};
use crate::math::{log_add, logsumexp};
use crate::target::TargetModel;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Monte Carlo summary for one shell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellEstimate {
    /// Shell index, 0-based (serialized 1-based in checkpoints).
    pub i: usize,
    /// log W_i = log L(A_i) + log mean pi~; -inf marks a zero-mass shell.
    pub log_w: f64,
    /// Minimum observed log pi~ on the shell (log s_i).
    pub log_min: f64,
    /// Maximum observed log pi~ on the shell (log S_i).
    pub log_max: f64,
    /// Minorization constant max(0, s_i/S_i - eta).
    pub p_hat: f64,
    /// Monte Carlo sample size.
    pub n: usize,
    /// Safety margin used for this shell.
    pub eta: f64,
    /// Sampling mode the estimate (and later the perfect sampler) uses.
    pub mode: ShellMode,
}

impl ShellEstimate {
    pub fn zero_mass(i: usize, n: usize, eta: f64, mode: ShellMode) -> Self {
        ShellEstimate {
            i,
            log_w: f64::NEG_INFINITY,
            log_min: f64::NEG_INFINITY,
            log_max: f64::NEG_INFINITY,
            p_hat: 0.0,
            n,
            eta,
            mode,
        }
    }

    pub fn is_zero_mass(&self) -> bool {
        self.log_w == f64::NEG_INFINITY
    }
}

/// Thin-shell estimates force eta = 0: surface samples that percolate into
/// the inner annulus already depress the observed min/max ratio.
pub fn shell_eta(base_eta: f64, mode: ShellMode) -> f64 {
    match mode {
        ShellMode::Rejection => base_eta,
        ShellMode::ThinShell => 0.0,
    }
}

/// Estimate one shell from `n` uniform draws.
#[allow(clippy::too_many_arguments)]
pub fn estimate_shell<R: Rng + ?Sized>(
    rng: &mut R,
    target: &TargetModel,
    shells: &ShellSystem,
    i: usize,
    n: usize,
    eta: f64,
    mode: ShellMode,
    d_tilde: f64,
) -> Result<ShellEstimate> {
    if n < 2 {
        return Err(Error::InvalidSampleSize { n });
    }
    let mut log_vals = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = shells.sample_in_shell(rng, i, mode, d_tilde)?;
        log_vals.push(target.log_unnorm(&theta));
    }
    let log_max = log_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if log_max == f64::NEG_INFINITY {
        return Err(Error::ZeroMassShell { shell: i, n });
    }
    let log_min = log_vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let log_mean = logsumexp(&log_vals) - (n as f64).ln();
    let log_w = shells.log_volume(i) + log_mean;
    let p_hat = ((log_min - log_max).exp() - eta).max(0.0);
    Ok(ShellEstimate { i, log_w, log_min, log_max, p_hat, n, eta, mode })
}

/// Selection outcome for one uniform variate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Shell(usize),
    /// The variate landed in the final shell: the schedule must double.
    NeedExtension,
}

/// The assembled per-shell estimates plus the cumulative selection table.
#[derive(Clone, Debug)]
pub struct WeightTable {
    pub estimates: Vec<ShellEstimate>,
    /// Prefix log-sum-exp of log_w.
    log_cumulative: Vec<f64>,
    /// Normalized cumulative probabilities; last entry is exactly 1.
    cum_prob: Vec<f64>,
    /// Recorded tail-mass tolerance (diagnostic only).
    pub epsilon: f64,
}

/// Build the selection table from contiguous estimates for shells 0..M.
pub fn build_weight_table(estimates: Vec<ShellEstimate>, epsilon: f64) -> Result<WeightTable> {
    if estimates.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut log_cumulative = Vec::with_capacity(estimates.len());
    let mut acc = f64::NEG_INFINITY;
    for est in &estimates {
        acc = log_add(acc, est.log_w);
        log_cumulative.push(acc);
    }
    if acc == f64::NEG_INFINITY {
        return Err(Error::DegenerateTarget);
    }
    let total = acc;
    let mut cum_prob: Vec<f64> = log_cumulative.iter().map(|&lc| (lc - total).exp()).collect();
    *cum_prob.last_mut().unwrap() = 1.0;
    Ok(WeightTable { estimates, log_cumulative, cum_prob, epsilon })
}

impl WeightTable {
    pub fn shell_count(&self) -> usize {
        self.estimates.len()
    }

    /// log of the truncated total sum_{j<=M} W_j.
    pub fn log_total(&self) -> f64 {
        *self.log_cumulative.last().unwrap()
    }

    /// Normalized selection probabilities.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total = self.log_total();
        self.estimates.iter().map(|e| (e.log_w - total).exp()).collect()
    }

    /// Map a uniform variate to a shell via the half-open cumulative
    /// intervals; landing in the final shell signals the doubling path.
    pub fn select_component(&self, u: f64) -> Result<Selection> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidUniform { u });
        }
        let idx = self.cum_prob.partition_point(|&c| c <= u);
        let idx = idx.min(self.cum_prob.len() - 1);
        if idx == self.estimates.len() - 1 {
            Ok(Selection::NeedExtension)
        } else {
            Ok(Selection::Shell(idx))
        }
    }

    /// Crude geometric extrapolation of the mass beyond the last radius,
    /// reported against epsilon. Diagnostic only; doubling is the runtime
    /// correction path.
    pub fn tail_mass_diagnostic(&self) -> f64 {
        let m = self.estimates.len();
        if m < 2 {
            return f64::NAN;
        }
        let last = self.estimates[m - 1].log_w;
        let prev = self.estimates[m - 2].log_w;
        if last == f64::NEG_INFINITY {
            return 0.0;
        }
        if prev == f64::NEG_INFINITY || last >= prev {
            return f64::NAN;
        }
        let log_rho = last - prev;
        // sum_{k>=1} W_M rho^k = W_M rho/(1-rho)
        let log_tail = last + log_rho - (-log_rho.exp()).ln_1p();
        (log_tail - self.log_total()).exp()
    }
}

/// Extend the schedule to 2M shells, estimating only the new ones.
///
/// Existing estimates are reused bit-identically; each new shell draws from
/// its own stream so the result does not depend on when the doubling happens
/// or how many workers run it.
#[allow(clippy::too_many_arguments)]
pub fn extend_weight_table(
    target: &TargetModel,
    shells: &ShellSystem,
    table: &WeightTable,
    n: usize,
    base_eta: f64,
    policy: ModePolicy,
    d_tilde: f64,
    stream_for_shell: &(dyn Fn(usize) -> ChaCha12Rng + Sync),
    max_shells: usize,
) -> Result<(ShellSystem, WeightTable)> {
    let old_m = shells.shell_count();
    if old_m * 2 > max_shells {
        return Err(Error::TailNotCovered { shells: old_m });
    }
    let extended = shells.doubled();
    let new_estimates: Vec<ShellEstimate> = (old_m..2 * old_m)
        .into_par_iter()
        .map(|i| {
            let mode = extended.resolve_mode(i, policy);
            let eta = shell_eta(base_eta, mode);
            let mut rng = stream_for_shell(i);
            match estimate_shell(&mut rng, target, &extended, i, n, eta, mode, d_tilde) {
                Ok(est) => Ok(est),
                Err(Error::ZeroMassShell { .. }) => Ok(ShellEstimate::zero_mass(i, n, eta, mode)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut estimates = table.estimates.clone();
    estimates.extend(new_estimates);
    let new_table = build_weight_table(estimates, table.epsilon)?;
    Ok((extended, new_table))
}

// ---------------------------------------------------------------------------
// Checkpoint (JSON external interface)
// ---------------------------------------------------------------------------

/// f64 that serializes -inf as the string "-inf" and finite values as
/// numbers; round-trips finite values bit-exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogValue(pub f64);

impl Serialize for LogValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for LogValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => {
                n.as_f64().map(LogValue).ok_or_else(|| DeError::custom("bad number"))
            }
            serde_json::Value::String(s) if s == "-inf" => Ok(LogValue(f64::NEG_INFINITY)),
            other => Err(DeError::custom(format!("expected number or \"-inf\", got {other}"))),
        }
    }
}

#[derive(Serialize, Deserialize, Debug, PartialEq, Clone)]
struct ShellRow {
    i: usize,
    log_w: LogValue,
    log_s: LogValue,
    #[serde(rename = "log_S")]
    log_cap_s: LogValue,
    p_hat: f64,
    n: usize,
    eta: f64,
    mode: ShellMode,
}

/// Serialized weight table: everything needed to resume sampling without
/// re-estimating.
#[derive(Serialize, Deserialize, Debug, PartialEq, Clone)]
pub struct WeightTableCheckpoint {
    pub d: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub epsilon: f64,
    shells: Vec<ShellRow>,
    pub seed: u64,
    pub target_id: String,
}

impl WeightTableCheckpoint {
    pub fn new(shells: &ShellSystem, table: &WeightTable, seed: u64, target_id: &str) -> Self {
        WeightTableCheckpoint {
            d: shells.dim(),
            mu: shells.mu().to_vec(),
            sigma: shells.sigma(),
            radii: shells.schedule().radii().to_vec(),
            epsilon: table.epsilon,
            shells: table
                .estimates
                .iter()
                .map(|e| ShellRow {
                    i: e.i + 1,
                    log_w: LogValue(e.log_w),
                    log_s: LogValue(e.log_min),
                    log_cap_s: LogValue(e.log_max),
                    p_hat: e.p_hat,
                    n: e.n,
                    eta: e.eta,
                    mode: e.mode,
                })
                .collect(),
            seed,
            target_id: target_id.to_string(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rebuild the shell system and weight table.
    pub fn restore(&self) -> Result<(ShellSystem, WeightTable)> {
        let schedule = crate::geometry::RadiiSchedule::from_radii(self.radii.clone())?;
        let shells = crate::geometry::build_shell_system(self.mu.clone(), &self.sigma, schedule)?;
        let estimates = self
            .shells
            .iter()
            .map(|r| ShellEstimate {
                i: r.i - 1,
                log_w: r.log_w.0,
                log_min: r.log_s.0,
                log_max: r.log_cap_s.0,
                p_hat: r.p_hat,
                n: r.n,
                eta: r.eta,
                mode: r.mode,
            })
            .collect();
        let table = build_weight_table(estimates, self.epsilon)?;
        Ok((shells, table))
    }
}
