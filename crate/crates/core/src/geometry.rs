//! Concentric-ellipsoid shell system: construction, exact log volumes,
//! point classification, and uniform sampling on shells.
//!
//! Shell 0 is the solid central ellipsoid; shell i >= 1 is the closed annulus
//! between the Mahalanobis radii `radii[i-1]` and `radii[i]`.

use crate::error::{Error, Result};
use crate::math::CholFactor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Strictly increasing Mahalanobis radii sqrt(c_1) < ... < sqrt(c_M),
/// with the implicit sqrt(c_0) = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiiSchedule {
    radii: Vec<f64>,
    step: f64,
}

impl RadiiSchedule {
    /// Linear schedule sqrt(c_i) = r + a*(i-1) for i = 1..=m.
    pub fn linear(r: f64, a: f64, m: usize) -> Result<Self> {
        if !(r > 0.0) || !(a > 0.0) || m == 0 {
            return Err(Error::InvalidSchedule);
        }
        let radii = (0..m).map(|i| r + a * i as f64).collect();
        Ok(RadiiSchedule { radii, step: a })
    }

    /// Arbitrary strictly increasing radii; extension reuses the last gap.
    pub fn from_radii(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule);
        }
        let step = if radii.len() >= 2 {
            radii[radii.len() - 1] - radii[radii.len() - 2]
        } else {
            radii[0]
        };
        Ok(RadiiSchedule { radii, step })
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Outer radius of shell i (0-based).
    pub fn outer(&self, i: usize) -> f64 {
        self.radii[i]
    }

    /// Inner radius of shell i; 0 for the central ellipsoid.
    pub fn inner(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.radii[i - 1]
        }
    }

    /// Double the shell count, continuing with the same increment.
    pub fn doubled(&self) -> Self {
        let m = self.radii.len();
        let last = self.radii[m - 1];
        let mut radii = self.radii.clone();
        radii.extend((1..=m).map(|j| last + self.step * j as f64));
        RadiiSchedule { radii, step: self.step }
    }
}

/// Per-shell sampling mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShellMode {
    /// Sample the enclosing ball, reject points inside the inner ellipsoid.
    Rejection,
    /// Surface-concentrated approximation for thin annuli:
    /// Y = sqrt(c_i) * U^(1/d_tilde) * X/|X|.
    ThinShell,
}

/// How the engine picks a mode per shell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModePolicy {
    /// Rejection when the annulus-to-ball volume ratio is at least 0.1,
    /// thin-shell otherwise.
    #[default]
    Auto,
    Rejection,
    ThinShell,
}

pub const DEFAULT_D_TILDE: f64 = 1e5;
pub const DEFAULT_MAX_REJECTION_ATTEMPTS: u64 = 1_000_000;

/// Where a point falls relative to the shell system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShellClass {
    Shell(usize),
    /// Beyond the outermost radius; handled by doubling, not an error.
    Overflow,
}

/// The shell system: center, scale factorization, radii, and log volumes.
#[derive(Clone, Debug)]
pub struct ShellSystem {
    mu: Vec<f64>,
    chol: CholFactor,
    schedule: RadiiSchedule,
    log_volumes: Vec<f64>,
}

/// Build the shell system; the Cholesky factor and all per-shell log
/// Lebesgue volumes are computed once up front.
pub fn build_shell_system(
    mu: Vec<f64>,
    sigma: &[Vec<f64>],
    schedule: RadiiSchedule,
) -> Result<ShellSystem> {
    if mu.len() != sigma.len() {
        return Err(Error::Dimension { expected: sigma.len(), got: mu.len() });
    }
    let chol = CholFactor::from_spd(sigma)?;
    let log_volumes = shell_log_volumes(mu.len(), chol.log_det(), &schedule);
    Ok(ShellSystem { mu, chol, schedule, log_volumes })
}

/// log L(A_i) for every shell.
///
/// log L(A_1) = log|B| + (d/2) log pi - log Gamma(d/2+1) + (d/2) log c_1;
/// for i >= 2 the difference c_i^{d/2} - c_{i-1}^{d/2} is evaluated in log
/// space by factoring out c_i^{d/2}.
fn shell_log_volumes(d: usize, log_det_b: f64, schedule: &RadiiSchedule) -> Vec<f64> {
    let half_d = d as f64 / 2.0;
    let log_unit_ball = half_d * std::f64::consts::PI.ln() - ln_gamma(half_d + 1.0);
    let radii = schedule.radii();
    (0..radii.len())
        .map(|i| {
            let log_ci = 2.0 * radii[i].ln();
            let outer = half_d * log_ci;
            let log_ratio_term = if i == 0 {
                0.0
            } else {
                let log_cim1 = 2.0 * radii[i - 1].ln();
                // log(1 - (c_{i-1}/c_i)^{d/2})
                (-(half_d * (log_cim1 - log_ci)).exp()).ln_1p()
            };
            log_det_b + log_unit_ball + outer + log_ratio_term
        })
        .collect()
}

impl ShellSystem {
    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> Vec<Vec<f64>> {
        self.chol.reconstruct_sigma()
    }

    pub fn schedule(&self) -> &RadiiSchedule {
        &self.schedule
    }

    pub fn shell_count(&self) -> usize {
        self.schedule.len()
    }

    pub fn log_volume(&self, i: usize) -> f64 {
        self.log_volumes[i]
    }

    /// Mahalanobis radius and shell index of a point. Boundary ties resolve
    /// to the lower shell; radii beyond the last are reported as Overflow.
    pub fn classify_point(&self, theta: &[f64]) -> Result<(f64, ShellClass)> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: theta.len() });
        }
        let radius = self.chol.mahalanobis_sq(theta, &self.mu).sqrt();
        let idx = self.schedule.radii().partition_point(|&r| r < radius);
        let class = if idx == self.schedule.len() { ShellClass::Overflow } else { ShellClass::Shell(idx) };
        Ok((radius, class))
    }

    /// Continue doubling: same center and scale, twice the radii.
    pub fn doubled(&self) -> ShellSystem {
        let schedule = self.schedule.doubled();
        let log_volumes = shell_log_volumes(self.dim(), self.chol.log_det(), &schedule);
        ShellSystem { mu: self.mu.clone(), chol: self.chol.clone(), schedule, log_volumes }
    }

    /// Resolve the effective mode for one shell. The central ellipsoid is
    /// always plain ball sampling; in Auto, thin annuli (relative volume
    /// below 0.1) use the thin-shell sampler.
    pub fn resolve_mode(&self, i: usize, policy: ModePolicy) -> ShellMode {
        if i == 0 {
            return ShellMode::Rejection;
        }
        match policy {
            ModePolicy::Rejection => ShellMode::Rejection,
            ModePolicy::ThinShell => ShellMode::ThinShell,
            ModePolicy::Auto => {
                let d = self.dim() as f64;
                let ratio_inner = self.schedule.inner(i) / self.schedule.outer(i);
                // 1 - (c_{i-1}/c_i)^{d/2} = 1 - (r_{i-1}/r_i)^d; the epsilon
                // keeps exact-threshold schedules from flipping on rounding.
                let annulus_fraction = -(d * ratio_inner.ln()).exp_m1();
                if annulus_fraction >= 0.1 - 1e-12 {
                    ShellMode::Rejection
                } else {
                    ShellMode::ThinShell
                }
            }
        }
    }

    fn push_forward(&self, y: &[f64]) -> Vec<f64> {
        let by = self.chol.mul_lower(y);
        by.iter().zip(&self.mu).map(|(v, m)| v + m).collect()
    }

    /// Uniform draw from shell i in theta space.
    ///
    /// Rejection mode guarantees `classify_point` returns exactly `i`;
    /// thin-shell mode concentrates mass near the outer surface and is an
    /// approximation for thin annuli.
    pub fn sample_in_shell<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        i: usize,
        mode: ShellMode,
        d_tilde: f64,
    ) -> Result<Vec<f64>> {
        let outer = self.schedule.outer(i);
        if i == 0 {
            let y = sample_uniform_ball(rng, self.dim(), outer);
            return Ok(self.push_forward(&y));
        }
        match mode {
            ShellMode::Rejection => {
                for _ in 0..DEFAULT_MAX_REJECTION_ATTEMPTS {
                    let y = sample_uniform_ball(rng, self.dim(), outer);
                    let theta = self.push_forward(&y);
                    let (_, class) = self.classify_point(&theta)?;
                    if class == ShellClass::Shell(i) {
                        return Ok(theta);
                    }
                }
                Err(Error::ShellTooThin { shell: i, attempts: DEFAULT_MAX_REJECTION_ATTEMPTS })
            }
            ShellMode::ThinShell => {
                let y = sample_thin_shell(rng, self.dim(), outer, d_tilde);
                Ok(self.push_forward(&y))
            }
        }
    }
}

/// Uniform draw from the centered d-ball: Y = radius * U^(1/d) * X/|X|.
pub fn sample_uniform_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    directional_sample(rng, d, radius, d as f64)
}

/// Surface-concentrated draw: Y = radius * U^(1/d_tilde) * X/|X|.
pub fn sample_thin_shell<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    radius: f64,
    d_tilde: f64,
) -> Vec<f64> {
    directional_sample(rng, d, radius, d_tilde)
}

fn directional_sample<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64, power: f64) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.gen();
        let target_norm = radius * u.powf(1.0 / power);
        let mut y: Vec<f64> = x.iter().map(|v| v * (target_norm / norm)).collect();
        // Rounding can push |y| a hair past the radius; rescale so the
        // containment contract is exact.
        let actual: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if actual > radius {
            let fix = radius / actual;
            y.iter_mut().for_each(|v| *v *= fix);
        }
        return y;
    }
}
