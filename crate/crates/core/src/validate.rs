//! Statistical acceptance harness: Kolmogorov-Smirnov tests, correlation
//! comparison, shell-occupancy chi-square, and kernel density curves for
//! external plotting.

use crate::engine::SampleRow;
use crate::error::{Error, Result};
use crate::estimate::WeightTable;
use crate::math::correlation_rows;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Asymptotic Kolmogorov survival function Q(t) = 2 sum (-1)^{k-1} e^{-2k^2t^2}.
fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * t).powi(2)).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS statistic sup|F_n - F| with its asymptotic p-value.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<(f64, f64)> {
    if samples.len() < 10 {
        return Err(Error::TooFewSamples { got: samples.len() });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut stat: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        stat = stat.max((f - i as f64 / n).abs());
        stat = stat.max(((i + 1) as f64 / n - f).abs());
    }
    Ok((stat, kolmogorov_sf(n.sqrt() * stat)))
}

/// Two-sample KS statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 10 || b.len() < 10 {
        return Err(Error::TooFewSamples { got: a.len().min(b.len()) });
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let ecdf = |s: &[f64], v: f64| s.partition_point(|&x| x <= v) as f64 / s.len() as f64;
    let mut stat: f64 = 0.0;
    for &v in xs.iter().chain(ys.iter()) {
        stat = stat.max((ecdf(&xs, v) - ecdf(&ys, v)).abs());
    }
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let effective = (n * m / (n + m)).sqrt();
    Ok((stat, kolmogorov_sf(effective * stat)))
}

/// Critical KS statistic at level alpha for one-sample size n:
/// c(alpha)/sqrt(n) with c(alpha) = sqrt(-ln(alpha/2)/2).
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Two-sample critical value at level alpha.
pub fn ks_two_sample_critical(alpha: f64, n: usize, m: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Sample correlation matrix vs a reference: (max absolute entry difference,
/// Frobenius norm of the difference).
pub fn correlation_compare(
    samples: &[Vec<f64>],
    reference: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let d = reference.len();
    if samples.len() <= d {
        return Err(Error::InsufficientSamples { need: d + 1, got: samples.len() });
    }
    let corr = correlation_rows(samples)?;
    let mut max_abs: f64 = 0.0;
    let mut frob = 0.0;
    for i in 0..d {
        for j in 0..d {
            let diff = corr[i][j] - reference[i][j];
            max_abs = max_abs.max(diff.abs());
            frob += diff * diff;
        }
    }
    Ok((max_abs, frob.sqrt()))
}

/// Pearson chi-square of observed shell occupancy against the table's
/// normalized weights. Shells with expected count below 5 are pooled into
/// one bin.
pub fn shell_frequency_chisq(rows: &[SampleRow], table: &WeightTable) -> Result<(f64, f64)> {
    let weights = table.normalized_weights();
    let k = rows.len() as f64;
    let mut observed = vec![0.0; weights.len()];
    for row in rows {
        if row.shell >= observed.len() {
            return Err(Error::Data { row: row.draw_index, message: "shell index out of range".into() });
        }
        observed[row.shell] += 1.0;
    }
    let mut stat = 0.0;
    let mut bins = 0usize;
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let expect = w * k;
        if expect >= 5.0 {
            stat += (observed[i] - expect).powi(2) / expect;
            bins += 1;
        } else {
            pooled_obs += observed[i];
            pooled_exp += expect;
        }
    }
    if pooled_exp > 0.0 || pooled_obs > 0.0 {
        if pooled_exp > 0.0 {
            stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
            bins += 1;
        } else if pooled_obs > 0.0 {
            // Observed mass where the table expects none: infinitely unlikely
            // under the null, report a failing statistic.
            return Ok((f64::INFINITY, 0.0));
        }
    }
    if bins <= 1 {
        // All mass in one shell: trivially consistent.
        return Ok((0.0, 1.0));
    }
    let df = (bins - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    Ok((stat, p))
}

/// Gaussian kernel density estimate on a grid with Silverman bandwidth.
pub fn emit_density_curve(samples: &[f64], grid: &[f64]) -> Vec<(f64, f64)> {
    assert!(!samples.is_empty() && !grid.is_empty());
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = (0.9 * spread * n.powf(-0.2)).max(1e-12);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| {
            let dens: f64 =
                samples.iter().map(|&s| (-((x - s) / h).powi(2) / 2.0).exp()).sum::<f64>() * norm;
            (x, dens)
        })
        .collect()
}

/// Evenly spaced grid spanning the sample range with 10% margins.
pub fn default_grid(samples: &[f64], points: usize) -> Vec<f64> {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.1 * (hi - lo).max(1e-12);
    let (lo, hi) = (lo - pad, hi + pad);
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// Per-coordinate KS outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KsEntry {
    pub coord: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Aggregated validation outcome, serialized as `report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub alpha: f64,
    /// One-sample KS vs analytic marginals (standard targets).
    pub marginal_ks: Vec<KsEntry>,
    /// Two-sample KS vs thinned pilot draws (posterior targets).
    pub pilot_ks: Vec<KsEntry>,
    pub correlation_max_abs_diff: Option<f64>,
    pub correlation_frobenius_diff: Option<f64>,
    pub shell_chisq_statistic: Option<f64>,
    pub shell_chisq_p_value: Option<f64>,
    pub shell_chisq_pass: Option<bool>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn new(alpha: f64) -> Self {
        ValidationReport {
            alpha,
            marginal_ks: Vec::new(),
            pilot_ks: Vec::new(),
            correlation_max_abs_diff: None,
            correlation_frobenius_diff: None,
            shell_chisq_statistic: None,
            shell_chisq_p_value: None,
            shell_chisq_pass: None,
            pass: true,
        }
    }

    pub fn finalize(&mut self) {
        let ks_ok = self.marginal_ks.iter().chain(&self.pilot_ks).all(|e| e.pass);
        let chisq_ok = self.shell_chisq_pass.unwrap_or(true);
        self.pass = ks_ok && chisq_ok;
    }
}
