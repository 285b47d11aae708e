//! Split-chain perfect sampler for a single shell.
//!
//! The uniform-proposal Metropolis-Hastings kernel P on a shell admits the
//! split P = p*Q + (1-p)*R with Q uniform on the shell and p the minorization
//! constant. A stationary state at time 0 is produced by drawing the backward
//! regeneration time T, starting from Q, and carrying the chain to time 0
//! with residual-kernel steps. Unrolling stationarity,
//!
//!   pi = sum_{t>=0} p (1-p)^t Q R^t,
//!
//! so a T drawn from p(1-p)^{t-1} on {1,2,...} is followed by exactly T-1
//! residual steps; the draw at time 0 is then exact.

use crate::error::{Error, Result};
use crate::estimate::ShellEstimate;
use crate::geometry::{ShellClass, ShellMode, ShellSystem};
use crate::target::TargetModel;
use rand::Rng;

pub const DEFAULT_T_MAX: u64 = 10_000_000;
pub const DEFAULT_MAX_RESIDUAL_TRIALS: u64 = 1_000_000;

/// An exact draw from one shell-restricted component, with diagnostics.
#[derive(Clone, Debug)]
pub struct PerfectDraw {
    /// The draw at time 0.
    pub theta0: Vec<f64>,
    /// Shell index (0-based).
    pub shell: usize,
    /// Backward regeneration time T >= 1.
    pub t_coalesce: u64,
    /// Metropolis-Hastings proposal evaluations consumed.
    pub mh_trials: u64,
    /// Residual rejection-sampler retries (trials beyond the first per step).
    pub residual_rejections: u64,
}

/// Backward regeneration time: P(T = t) = p (1-p)^{t-1}, t = 1, 2, ...
///
/// Support starts at 1, not 0. Inverted in closed form as
/// T = 1 + floor(log U / log(1-p)).
pub fn sample_coalescence_time<R: Rng + ?Sized>(rng: &mut R, p_hat: f64, t_max: u64) -> Result<u64> {
    assert!(p_hat > 0.0 && p_hat <= 1.0, "p_hat must lie in (0,1]");
    if p_hat == 1.0 {
        return Ok(1);
    }
    let u = loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            break u;
        }
    };
    let log1m = (-p_hat).ln_1p();
    let t = 1.0 + (u.ln() / log1m).floor();
    if !(t <= t_max as f64) {
        return Err(Error::MinorizationTooSmall { shell: usize::MAX, p_hat });
    }
    Ok(t as u64)
}

/// One Metropolis-Hastings step with the uniform shell proposal.
#[derive(Clone, Debug)]
pub struct MhStep {
    pub next: Vec<f64>,
    pub moved: bool,
    /// log pi~(proposal) - log pi~(current), for the residual acceptance.
    pub log_ratio: f64,
}

fn check_membership(shells: &ShellSystem, i: usize, mode: ShellMode, theta: &[f64]) -> Result<()> {
    let (radius, class) = shells.classify_point(theta)?;
    let ok = match mode {
        ShellMode::Rejection => class == ShellClass::Shell(i),
        // Thin-shell states may percolate slightly inside; only the outer
        // boundary is enforced.
        ShellMode::ThinShell => radius <= shells.schedule().outer(i) * (1.0 + 1e-12),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::PreconditionViolated { shell: i, radius })
    }
}

/// Propose uniform on the shell, accept with min{1, pi~(new)/pi~(cur)}.
pub fn mh_uniform_step<R: Rng + ?Sized>(
    rng: &mut R,
    target: &TargetModel,
    shells: &ShellSystem,
    i: usize,
    mode: ShellMode,
    d_tilde: f64,
    current: &[f64],
) -> Result<MhStep> {
    check_membership(shells, i, mode, current)?;
    let proposal = shells.sample_in_shell(rng, i, mode, d_tilde)?;
    let lp_cur = target.log_unnorm(current);
    let lp_new = target.log_unnorm(&proposal);
    let log_ratio = match (lp_new == f64::NEG_INFINITY, lp_cur == f64::NEG_INFINITY) {
        (true, _) => f64::NEG_INFINITY,
        (false, true) => f64::INFINITY,
        (false, false) => lp_new - lp_cur,
    };
    let u: f64 = rng.gen();
    let moved = log_ratio >= 0.0 || u < log_ratio.exp();
    Ok(MhStep {
        next: if moved { proposal } else { current.to_vec() },
        moved,
        log_ratio,
    })
}

/// One draw from the residual kernel R = (P - p*Q)/(1-p) at `current`.
///
/// Proposals come from the full MH kernel; a rejected MH move (the kernel's
/// atom at `current`) is accepted as the residual draw outright, while an
/// accepted move to theta' is kept with probability 1 - p/min{1, ratio}.
/// The atom terms cancel the MH stay mass exactly, so no Monte Carlo
/// estimate of the stay probability is needed on this path.
#[allow(clippy::too_many_arguments)]
pub fn residual_draw<R: Rng + ?Sized>(
    rng: &mut R,
    target: &TargetModel,
    shells: &ShellSystem,
    i: usize,
    mode: ShellMode,
    d_tilde: f64,
    p_hat: f64,
    current: &[f64],
    max_trials: u64,
) -> Result<(Vec<f64>, u64)> {
    assert!(p_hat > 0.0 && p_hat < 1.0, "residual kernel needs p_hat in (0,1)");
    for trial in 1..=max_trials {
        let step = mh_uniform_step(rng, target, shells, i, mode, d_tilde, current)?;
        if !step.moved {
            return Ok((step.next, trial));
        }
        let alpha = step.log_ratio.min(0.0).exp();
        // A Monte Carlo p_hat can exceed the true s/S; the acceptance is
        // clamped at zero in that case (proposal rejected).
        let accept = (1.0 - p_hat / alpha).max(0.0);
        if rng.gen::<f64>() < accept {
            return Ok((step.next, trial));
        }
    }
    Err(Error::ResidualStuck { shell: i, trials: max_trials })
}

/// Monte Carlo estimate of the MH stay probability r(theta) on shell i:
/// 1 - mean over uniform proposals of min{1, pi~(proposal)/pi~(theta)}.
///
/// Oracle path only: validates that the closed-form residual acceptance
/// above matches a literal implementation of the residual density.
#[allow(clippy::too_many_arguments)]
pub fn estimate_r_hat<R: Rng + ?Sized>(
    rng: &mut R,
    target: &TargetModel,
    shells: &ShellSystem,
    i: usize,
    mode: ShellMode,
    d_tilde: f64,
    theta: &[f64],
    n: usize,
) -> Result<f64> {
    check_membership(shells, i, mode, theta)?;
    let lp = target.log_unnorm(theta);
    let mut acc = 0.0;
    for _ in 0..n {
        let proposal = shells.sample_in_shell(rng, i, mode, d_tilde)?;
        let log_ratio = target.log_unnorm(&proposal) - lp;
        acc += log_ratio.min(0.0).exp();
    }
    Ok(1.0 - acc / n as f64)
}

/// Safety caps for one perfect draw.
#[derive(Clone, Copy, Debug)]
pub struct PerfectCaps {
    pub t_max: u64,
    pub max_residual_trials: u64,
}

impl Default for PerfectCaps {
    fn default() -> Self {
        PerfectCaps { t_max: DEFAULT_T_MAX, max_residual_trials: DEFAULT_MAX_RESIDUAL_TRIALS }
    }
}

/// Exact draw from the shell-restricted component pi_i.
///
/// Draws T, starts from the uniform regeneration measure Q_i, and applies
/// T-1 residual steps to land on the time-0 state.
pub fn perfect_draw<R: Rng + ?Sized>(
    rng: &mut R,
    target: &TargetModel,
    shells: &ShellSystem,
    i: usize,
    est: &ShellEstimate,
    d_tilde: f64,
    caps: PerfectCaps,
) -> Result<PerfectDraw> {
    let p_hat = est.p_hat;
    if p_hat <= 0.0 {
        return Err(Error::MinorizationTooSmall { shell: i, p_hat });
    }
    let t = sample_coalescence_time(rng, p_hat, caps.t_max)
        .map_err(|_| Error::MinorizationTooSmall { shell: i, p_hat })?;
    let mut theta = shells.sample_in_shell(rng, i, est.mode, d_tilde)?;
    let mut mh_trials = 0u64;
    let mut residual_rejections = 0u64;
    for _ in 1..t {
        let (next, trials) = residual_draw(
            rng,
            target,
            shells,
            i,
            est.mode,
            d_tilde,
            p_hat,
            &theta,
            caps.max_residual_trials,
        )?;
        mh_trials += trials;
        residual_rejections += trials - 1;
        theta = next;
    }
    Ok(PerfectDraw { theta0: theta, shell: i, t_coalesce: t, mh_trials, residual_rejections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::estimate_shell;
    use crate::geometry::{build_shell_system, RadiiSchedule};
    use crate::target::{make_standard_target, StandardKind, TargetModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn identity(d: usize) -> Vec<Vec<f64>> {
        (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
    }

    fn unit_shell_1d() -> ShellSystem {
        build_shell_system(vec![0.0], &identity(1), RadiiSchedule::linear(1.0, 1.0, 1).unwrap())
            .unwrap()
    }

    fn normal_1d() -> TargetModel {
        make_standard_target(StandardKind::Normal, 1, vec![vec![0.0]], identity(1), None).unwrap()
    }

    fn flat(d: usize) -> TargetModel {
        TargetModel::from_fn(d, |_| 0.0)
    }

    #[test]
    fn coalescence_time_degenerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_coalescence_time(&mut rng, 1.0, 100).unwrap(), 1);
        }
    }

    #[test]
    fn coalescence_pmf_at_half() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let t = sample_coalescence_time(&mut rng, 0.5, 1 << 40).unwrap();
            if t <= 2 {
                counts[t as usize] += 1;
            }
        }
        let f1 = counts[1] as f64 / n as f64;
        let f2 = counts[2] as f64 / n as f64;
        let sd1 = (0.5 * 0.5 / n as f64).sqrt();
        let sd2 = (0.25 * 0.75 / n as f64).sqrt();
        assert!((f1 - 0.5).abs() < 4.0 * sd1, "P(T=1) = {f1}");
        assert!((f2 - 0.25).abs() < 4.0 * sd2, "P(T=2) = {f2}");
    }

    #[test]
    fn coalescence_mean_matches_geometric() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 100_000;
        let p = 0.2;
        let mean = (0..n)
            .map(|_| sample_coalescence_time(&mut rng, p, 1 << 40).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        let sd = (1.0 - p).sqrt() / p / (n as f64).sqrt();
        assert!((mean - 1.0 / p).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn coalescence_respects_t_max() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut hit = false;
        for _ in 0..200 {
            if sample_coalescence_time(&mut rng, 1e-9, 10).is_err() {
                hit = true;
                break;
            }
        }
        assert!(hit, "t_max cap never triggered at p_hat = 1e-9");
    }

    #[test]
    fn mh_step_flat_always_moves() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let shells = unit_shell_1d();
        let t = flat(1);
        let mut cur = vec![0.3];
        for _ in 0..200 {
            let s = mh_uniform_step(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &cur).unwrap();
            assert!(s.moved);
            cur = s.next;
        }
    }

    #[test]
    fn mh_step_uphill_always_accepts() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let shells = unit_shell_1d();
        let t = normal_1d();
        // Start at the edge: many proposals are uphill; every uphill proposal
        // must be accepted.
        let cur = vec![0.999];
        for _ in 0..500 {
            let s = mh_uniform_step(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &cur).unwrap();
            if s.log_ratio >= 0.0 {
                assert!(s.moved);
            }
        }
    }

    #[test]
    fn mh_step_rejects_outside_state() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let shells = unit_shell_1d();
        let t = normal_1d();
        let r = mh_uniform_step(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &[1.5]);
        assert!(matches!(r, Err(Error::PreconditionViolated { shell: 0, .. })));
    }

    #[test]
    fn mh_chain_long_run_mean_matches_quadrature() {
        // Truncated standard normal on [-1, 1] has mean 0; check against the
        // quadrature first moment of exp(-x^2/2) on the shell.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let shells = unit_shell_1d();
        let t = normal_1d();
        let mut cur = vec![0.5];
        let n = 60_000;
        let mut batch_means = Vec::new();
        let mut acc = 0.0;
        for step in 0..n {
            let s = mh_uniform_step(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &cur).unwrap();
            cur = s.next;
            acc += cur[0];
            if (step + 1) % 2000 == 0 {
                batch_means.push(acc / 2000.0);
                acc = 0.0;
            }
        }
        let m = batch_means.iter().sum::<f64>() / batch_means.len() as f64;
        let var = batch_means.iter().map(|b| (b - m).powi(2)).sum::<f64>()
            / (batch_means.len() - 1) as f64;
        let se = (var / batch_means.len() as f64).sqrt();
        // Quadrature oracle: odd integrand over a symmetric interval.
        let oracle = {
            let n_grid = 20_001;
            let h = 2.0 / (n_grid - 1) as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..n_grid {
                let x = -1.0 + j as f64 * h;
                let w = if j == 0 || j == n_grid - 1 { 0.5 } else { 1.0 };
                let f = (-x * x / 2.0).exp();
                num += w * x * f;
                den += w * f;
            }
            num / den
        };
        assert!((m - oracle).abs() < 3.0 * se, "chain mean {m} vs {oracle} (se {se})");
    }

    #[test]
    fn residual_flat_acceptance_rate() {
        // Flat target: every proposal moves, each accepted with probability
        // 1 - p_hat. Mean trials per residual draw = 1/(1-p_hat).
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let shells = unit_shell_1d();
        let t = flat(1);
        let p_hat = 0.4;
        let n = 20_000;
        let total: u64 = (0..n)
            .map(|_| {
                residual_draw(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, p_hat, &[0.0], 1 << 20)
                    .unwrap()
                    .1
            })
            .sum();
        let mean_trials = total as f64 / n as f64;
        let expect = 1.0 / (1.0 - p_hat);
        // Geometric trial count: sd = sqrt(p/(1-p)^2)/sqrt(n) with p = 0.4.
        let sd = (p_hat).sqrt() / (1.0 - p_hat) / (n as f64).sqrt();
        assert!((mean_trials - expect).abs() < 4.0 * sd, "mean trials {mean_trials}");
    }

    #[test]
    fn residual_tiny_p_hat_is_nearly_plain_mh() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let shells = unit_shell_1d();
        let t = normal_1d();
        let n = 5_000;
        let mut one_trial = 0usize;
        for _ in 0..n {
            let (_, trials) = residual_draw(
                &mut rng,
                &t,
                &shells,
                0,
                ShellMode::Rejection,
                1e5,
                1e-12,
                &[0.2],
                1 << 20,
            )
            .unwrap();
            if trials == 1 {
                one_trial += 1;
            }
        }
        // Acceptance 1 - p/alpha -> 1, so nearly every first trial lands.
        assert!(one_trial as f64 / n as f64 > 0.999);
    }

    #[test]
    fn residual_stay_matches_mh_rejection_frequency() {
        // Any MH stay is accepted immediately, so the probability that a
        // residual draw returns `current` unchanged equals the MH stay rate.
        let shells = unit_shell_1d();
        let t = normal_1d();
        let start = vec![0.1];
        let n = 40_000;
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut stays = 0usize;
        for _ in 0..n {
            let (next, _) = residual_draw(
                &mut rng,
                &t,
                &shells,
                0,
                ShellMode::Rejection,
                1e5,
                0.55,
                &start,
                1 << 20,
            )
            .unwrap();
            if next == start {
                stays += 1;
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut mh_stays = 0usize;
        for _ in 0..n {
            let s = mh_uniform_step(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &start).unwrap();
            if !s.moved {
                mh_stays += 1;
            }
        }
        // The residual stay probability is r/(1-p) vs the MH stay rate r:
        // compare via the ratio instead of raw frequencies.
        let p_resid = stays as f64 / n as f64;
        let p_mh = mh_stays as f64 / n as f64;
        let expect = p_mh / (1.0 - 0.55);
        let sd = 3.0 * (p_resid * (1.0 - p_resid) / n as f64).sqrt()
            + 3.0 * (p_mh * (1.0 - p_mh) / n as f64).sqrt() / (1.0 - 0.55);
        assert!((p_resid - expect).abs() < sd, "residual stay {p_resid} vs {expect}");
    }

    #[test]
    fn r_hat_flat_is_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let shells = unit_shell_1d();
        let r = estimate_r_hat(&mut rng, &flat(1), &shells, 0, ShellMode::Rejection, 1e5, &[0.0], 500)
            .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn r_hat_monotone_in_density() {
        // The within-shell mode has the largest stay probability.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let shells = unit_shell_1d();
        let t = normal_1d();
        let at_mode =
            estimate_r_hat(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &[0.0], 20_000).unwrap();
        let at_edge =
            estimate_r_hat(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &[0.95], 20_000).unwrap();
        assert!(at_mode > at_edge, "{at_mode} vs {at_edge}");
    }

    #[test]
    fn r_hat_matches_empirical_stay_frequency() {
        let shells = unit_shell_1d();
        let t = normal_1d();
        let theta = vec![0.6];
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let r_hat =
            estimate_r_hat(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &theta, 50_000).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let n = 50_000;
        let mut stays = 0usize;
        for _ in 0..n {
            let s = mh_uniform_step(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &theta).unwrap();
            if !s.moved {
                stays += 1;
            }
        }
        let freq = stays as f64 / n as f64;
        let sd = (freq * (1.0 - freq) / n as f64).sqrt();
        assert!((r_hat - freq).abs() < 3.0 * (sd + 0.0025), "r_hat {r_hat} vs stay freq {freq}");
    }

    #[test]
    fn perfect_flat_target_is_uniform() {
        // pi_i = Q_i for a flat target; compare against the direct uniform
        // sampler with a two-sample KS on each coordinate.
        let shells = build_shell_system(
            vec![0.0; 2],
            &identity(2),
            RadiiSchedule::linear(1.2, 0.9, 2).unwrap(),
        )
        .unwrap();
        let t = flat(2);
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let est = estimate_shell(&mut rng, &t, &shells, 1, 2_000, 1e-5, ShellMode::Rejection, 1e5)
            .unwrap();
        let n = 5_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                perfect_draw(&mut rng, &t, &shells, 1, &est, 1e5, PerfectCaps::default())
                    .unwrap()
                    .theta0
            })
            .collect();
        let direct: Vec<Vec<f64>> = (0..n)
            .map(|_| shells.sample_in_shell(&mut rng, 1, ShellMode::Rejection, 1e5).unwrap())
            .collect();
        for coord in 0..2 {
            let mut a: Vec<f64> = draws.iter().map(|v| v[coord]).collect();
            let mut b: Vec<f64> = direct.iter().map(|v| v[coord]).collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let d = two_sample_ks(&a, &b);
            let crit = 1.6276 * ((2 * n) as f64 / (n * n) as f64).sqrt();
            assert!(d < crit, "coord {coord}: KS {d} >= {crit}");
        }
    }

    fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
        let mut grid: Vec<f64> = a.iter().chain(b).cloned().collect();
        grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let ecdf = |xs: &[f64], v: f64| xs.partition_point(|&x| x <= v) as f64 / xs.len() as f64;
        grid.iter().map(|&v| (ecdf(a, v) - ecdf(b, v)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn perfect_p_hat_one_returns_regeneration_draw() {
        let shells = unit_shell_1d();
        let t = flat(1);
        let est = ShellEstimate {
            i: 0,
            log_w: 0.0,
            log_min: 0.0,
            log_max: 0.0,
            p_hat: 1.0,
            n: 100,
            eta: 0.0,
            mode: ShellMode::Rejection,
        };
        let mut rng_a = ChaCha12Rng::seed_from_u64(17);
        let d = perfect_draw(&mut rng_a, &t, &shells, 0, &est, 1e5, PerfectCaps::default()).unwrap();
        assert_eq!(d.t_coalesce, 1);
        assert_eq!(d.mh_trials, 0);
        assert_eq!(d.residual_rejections, 0);
        // Identical stream consumption to a bare Q draw.
        let mut rng_b = ChaCha12Rng::seed_from_u64(17);
        let q = shells.sample_in_shell(&mut rng_b, 0, ShellMode::Rejection, 1e5).unwrap();
        assert_eq!(d.theta0, q);
    }

    #[test]
    fn perfect_draw_stays_in_shell() {
        let shells = build_shell_system(
            vec![1.0, -1.0],
            &[vec![2.0, 0.4], vec![0.4, 1.5]],
            RadiiSchedule::linear(1.0, 0.8, 3).unwrap(),
        )
        .unwrap();
        let t = make_standard_target(
            StandardKind::Normal,
            2,
            vec![vec![1.0, -1.0]],
            vec![vec![2.0, 0.4], vec![0.4, 1.5]],
            None,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        for i in 0..3 {
            let est =
                estimate_shell(&mut rng, &t, &shells, i, 2_000, 1e-5, ShellMode::Rejection, 1e5).unwrap();
            for _ in 0..2_000 {
                let d = perfect_draw(&mut rng, &t, &shells, i, &est, 1e5, PerfectCaps::default())
                    .unwrap();
                let (_, class) = shells.classify_point(&d.theta0).unwrap();
                assert_eq!(class, ShellClass::Shell(i));
                assert!(d.t_coalesce >= 1);
            }
        }
    }

    #[test]
    fn zero_p_hat_refused_before_sampling() {
        let shells = unit_shell_1d();
        let t = flat(1);
        let est = ShellEstimate::zero_mass(0, 10, 0.0, ShellMode::Rejection);
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        assert!(matches!(
            perfect_draw(&mut rng, &t, &shells, 0, &est, 1e5, PerfectCaps::default()),
            Err(Error::MinorizationTooSmall { shell: 0, .. })
        ));
    }

    #[test]
    fn coalescence_pmf_chi_square() {
        // Frozen-seed chi-square against p(1-p)^{t-1} at p = 0.3.
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let p: f64 = 0.3;
        let n = 100_000usize;
        let t_cut = 20usize;
        let mut counts = vec![0usize; t_cut + 2];
        for _ in 0..n {
            let t = sample_coalescence_time(&mut rng, p, 1 << 40).unwrap() as usize;
            counts[t.min(t_cut + 1)] += 1;
        }
        let mut stat = 0.0;
        let mut bins = 0usize;
        for t in 1..=t_cut {
            let prob = p * (1.0 - p).powi(t as i32 - 1);
            let expect = prob * n as f64;
            if expect >= 5.0 {
                stat += (counts[t] as f64 - expect).powi(2) / expect;
                bins += 1;
            }
        }
        let tail_prob = (1.0 - p).powi(t_cut as i32);
        let tail_expect = tail_prob * n as f64;
        let tail_count = counts[t_cut + 1] as f64;
        stat += (tail_count - tail_expect).powi(2) / tail_expect;
        bins += 1;
        let df = (bins - 1) as f64;
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p_value = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
        assert!(p_value > 0.01, "chi-square p = {p_value}");
    }

    #[test]
    fn residual_cancellation_matches_explicit_r_hat_oracle() {
        // Literal split-kernel sampler: estimate the stay probability by
        // Monte Carlo, realize the atom/continuous parts explicitly, and
        // apply the residual acceptance densities. Closed form and literal
        // implementation must produce the same next-state distribution.
        let shells = unit_shell_1d();
        let t = normal_1d();
        let start = vec![0.5];
        let p_hat = (-0.5f64).exp() - 1e-5;
        let n = 5_000;

        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut fast: Vec<f64> = (0..n)
            .map(|_| {
                residual_draw(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, p_hat, &start, 1 << 20)
                    .unwrap()
                    .0[0]
            })
            .collect();

        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let r_hat =
            estimate_r_hat(&mut rng, &t, &shells, 0, ShellMode::Rejection, 1e5, &start, 10_000).unwrap();
        let lp_start = t.log_unnorm(&start);
        let mut literal: Vec<f64> = Vec::with_capacity(n);
        while literal.len() < n {
            // Draw from P-hat: the atom with probability r_hat, otherwise the
            // normalized continuous part via rejection on the proposal.
            let stayed = rng.gen::<f64>() < r_hat;
            if stayed {
                // Atom: residual acceptance is exactly 1.
                literal.push(start[0]);
                continue;
            }
            let theta_new = loop {
                let prop = shells.sample_in_shell(&mut rng, 0, ShellMode::Rejection, 1e5).unwrap();
                let alpha = (t.log_unnorm(&prop) - lp_start).min(0.0).exp();
                if rng.gen::<f64>() < alpha {
                    break prop;
                }
            };
            let alpha = (t.log_unnorm(&theta_new) - lp_start).min(0.0).exp();
            let accept = (1.0 - p_hat / alpha).max(0.0);
            if rng.gen::<f64>() < accept {
                literal.push(theta_new[0]);
            }
        }
        fast.sort_by(|a, b| a.partial_cmp(b).unwrap());
        literal.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = two_sample_ks(&fast, &literal);
        let crit = 1.6276 * ((2 * n) as f64 / (n * n) as f64).sqrt();
        assert!(d < crit, "KS {d} >= {crit}");
    }
}
