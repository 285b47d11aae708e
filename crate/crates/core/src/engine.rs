//! Parallel orchestration: concurrent shell estimation, concurrent draw
//! generation with global doubling coordination, deterministic stream
//! management, and the sample/manifest artifacts.
//!
//! Reproducibility contract: every random decision comes from a stream keyed
//! by (seed, purpose, counter), never by worker identity, so the output is a
//! pure function of the configuration for any worker count.

use crate::error::{Error, Result};
use crate::estimate::{
    build_weight_table, estimate_shell, extend_weight_table, Selection, ShellEstimate, WeightTable,
};
use crate::geometry::{build_shell_system, ModePolicy, RadiiSchedule, ShellSystem};
use crate::perfect::{perfect_draw, PerfectCaps};
use crate::target::TargetModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Stream key: every task owns an independent, collision-free generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamPurpose {
    ShellEstimate { component: u32, shell: u64 },
    Draw { k: u64 },
    Pilot,
}

/// Derive the generator for one (seed, purpose) key. The key material is
/// written directly into the 32-byte ChaCha seed, so distinct keys give
/// distinct, statistically independent streams on any worker layout.
pub fn derive_stream(seed: u64, purpose: StreamPurpose) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    match purpose {
        StreamPurpose::ShellEstimate { component, shell } => {
            key[8] = 1;
            key[9..13].copy_from_slice(&component.to_le_bytes());
            key[13..21].copy_from_slice(&shell.to_le_bytes());
        }
        StreamPurpose::Draw { k } => {
            key[8] = 2;
            key[9..17].copy_from_slice(&k.to_le_bytes());
        }
        StreamPurpose::Pilot => {
            key[8] = 3;
        }
    }
    ChaCha12Rng::from_seed(key)
}

/// What to do when a selection lands in the final shell.
///
/// `Extend` always doubles the schedule. `ClampWithinEpsilon` doubles only
/// while the extrapolated mass beyond the last radius exceeds epsilon; once
/// the tail is within tolerance it samples the truncated mixture as-is,
/// accepting draws from the final shell. Targets with exponential tails but
/// collapsing minorization constants far out (strongly correlated posteriors)
/// need the clamp to terminate in bounded time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailPolicy {
    #[default]
    Extend,
    ClampWithinEpsilon,
}

/// Engine-level run controls (target selection lives in the CLI config).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    /// Requested i.i.d. draw count K.
    pub draws: usize,
    /// Monte Carlo size per shell N_i.
    pub shell_mc: usize,
    /// Initial shell count M.
    pub initial_shells: usize,
    /// First radius r.
    pub radius_start: f64,
    /// Radius increment a.
    pub radius_step: f64,
    /// Minorization safety margin (forced to 0 on thin-shell estimates).
    pub eta: f64,
    /// Recorded tail-mass tolerance; diagnostics only.
    pub epsilon: f64,
    pub mode: ModePolicy,
    pub d_tilde: f64,
    pub flatten_b: Option<f64>,
    pub t_max: u64,
    pub max_residual_trials: u64,
    pub max_shells: usize,
    pub tail: TailPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            draws: 1000,
            shell_mc: 10_000,
            initial_shells: 71,
            radius_start: 4.0,
            radius_step: 0.5,
            eta: 1e-5,
            epsilon: 1e-3,
            mode: ModePolicy::Auto,
            d_tilde: crate::geometry::DEFAULT_D_TILDE,
            flatten_b: None,
            t_max: crate::perfect::DEFAULT_T_MAX,
            max_residual_trials: crate::perfect::DEFAULT_MAX_RESIDUAL_TRIALS,
            max_shells: 1 << 20,
            tail: TailPolicy::Extend,
        }
    }
}

impl RunConfig {
    pub fn caps(&self) -> PerfectCaps {
        PerfectCaps { t_max: self.t_max, max_residual_trials: self.max_residual_trials }
    }

    pub fn schedule(&self) -> Result<RadiiSchedule> {
        RadiiSchedule::linear(self.radius_start, self.radius_step, self.initial_shells)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
}

/// One mixture component to sample: the density the perfect sampler runs on
/// plus the center/scale that define its shell system. Non-mixture targets
/// are a single component with weight 1.
#[derive(Clone, Debug)]
pub struct Component {
    pub weight: f64,
    pub target: TargetModel,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl Component {
    pub fn single(target: TargetModel, mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Vec<Component> {
        vec![Component { weight: 1.0, target, mu, sigma }]
    }
}

/// A component with its shell system and estimated weight table.
#[derive(Clone, Debug)]
pub struct PreparedComponent {
    pub weight: f64,
    pub target: TargetModel,
    pub shells: ShellSystem,
    pub table: WeightTable,
    pub zero_mass_shells: usize,
}

/// Estimate one component's weight table, one task per shell.
///
/// Zero-mass shells are recorded as -inf placeholders, not errors; a table
/// with no mass at all is `DegenerateTarget`.
pub fn estimate_weights_parallel(
    config: &RunConfig,
    component_idx: u32,
    target: &TargetModel,
    shells: &ShellSystem,
) -> Result<WeightTable> {
    let pool = config.pool()?;
    let estimates: Vec<ShellEstimate> = pool.install(|| {
        (0..shells.shell_count())
            .into_par_iter()
            .map(|i| {
                let mode = shells.resolve_mode(i, config.mode);
                let eta = crate::estimate::shell_eta(config.eta, mode);
                let mut rng = derive_stream(
                    config.seed,
                    StreamPurpose::ShellEstimate { component: component_idx, shell: i as u64 },
                );
                match estimate_shell(&mut rng, target, shells, i, config.shell_mc, eta, mode, config.d_tilde)
                {
                    Ok(est) => Ok(est),
                    Err(Error::ZeroMassShell { .. }) => {
                        Ok(ShellEstimate::zero_mass(i, config.shell_mc, eta, mode))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()
    })?;
    build_weight_table(estimates, config.epsilon)
}

/// Build shell systems and weight tables for every component.
pub fn prepare_components(config: &RunConfig, components: &[Component]) -> Result<Vec<PreparedComponent>> {
    components
        .iter()
        .enumerate()
        .map(|(c, comp)| {
            let shells = build_shell_system(comp.mu.clone(), &comp.sigma, config.schedule()?)?;
            let table = estimate_weights_parallel(config, c as u32, &comp.target, &shells)?;
            let zero_mass_shells = table.estimates.iter().filter(|e| e.is_zero_mass()).count();
            Ok(PreparedComponent {
                weight: comp.weight,
                target: comp.target.clone(),
                shells,
                table,
                zero_mass_shells,
            })
        })
        .collect()
}

/// One emitted draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRow {
    pub draw_index: usize,
    /// Shell index within the selected component, 0-based.
    pub shell: usize,
    pub t_coalesce: u64,
    /// The draw, pulled back to the original parameterization when the run
    /// sampled a transformed target.
    pub theta: Vec<f64>,
    /// Mixture component the draw came from (0 for plain targets).
    pub component: usize,
}

/// The K i.i.d. draws plus run diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub rows: Vec<SampleRow>,
    /// Shell count after any doubling (max across components).
    pub final_shells: usize,
    pub wall_notes: Vec<String>,
}

/// Generate K i.i.d. draws. Components may be extended (doubled) in place;
/// pending selections are re-checked against their original uniforms until
/// none lands in a final shell, then the perfect draws run in parallel.
pub fn sample_iid(config: &RunConfig, prepared: &mut [PreparedComponent]) -> Result<SampleSet> {
    if prepared.is_empty() {
        return Err(Error::EmptyTable);
    }
    let k_total = config.draws;
    let multi = prepared.len() > 1;
    let mut cum_weights = Vec::with_capacity(prepared.len());
    let mut acc = 0.0;
    for p in prepared.iter() {
        acc += p.weight;
        cum_weights.push(acc);
    }

    // Per-draw streams: the component pick (mixtures only) and the shell
    // uniform come first; the rest of the stream drives the perfect draw.
    let mut draw_states: Vec<(usize, f64, ChaCha12Rng)> = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let mut rng = derive_stream(config.seed, StreamPurpose::Draw { k: k as u64 });
        let component = if multi {
            let u: f64 = rng.gen();
            cum_weights.partition_point(|&c| c <= u).min(prepared.len() - 1)
        } else {
            0
        };
        let u_shell = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        draw_states.push((component, u_shell, rng));
    }

    // Doubling coordination: a single global extension per pass, after which
    // every pending selection re-checks with its original uniform. Clamped
    // components stop extending once their extrapolated tail mass is within
    // epsilon and keep final-shell selections.
    let mut wall_notes = Vec::new();
    let mut clamped: Vec<bool> = vec![false; prepared.len()];
    loop {
        let mut needs: Vec<bool> = vec![false; prepared.len()];
        for (component, u_shell, _) in &draw_states {
            if clamped[*component] {
                continue;
            }
            if let Selection::NeedExtension = prepared[*component].table.select_component(*u_shell)? {
                needs[*component] = true;
            }
        }
        if config.tail == TailPolicy::ClampWithinEpsilon {
            for (c, need) in needs.iter_mut().enumerate() {
                if !*need {
                    continue;
                }
                let tail = prepared[c].table.tail_mass_diagnostic();
                if tail.is_finite() && tail <= config.epsilon {
                    clamped[c] = true;
                    *need = false;
                    wall_notes.push(format!(
                        "component {c}: tail clamped at {} shells (extrapolated mass {tail:.3e} <= epsilon {:.1e})",
                        prepared[c].shells.shell_count(),
                        config.epsilon
                    ));
                }
            }
        }
        if !needs.iter().any(|&n| n) {
            break;
        }
        for (c, _) in needs.iter().enumerate().filter(|(_, n)| **n) {
            let p = &mut prepared[c];
            let seed = config.seed;
            let (shells, table) = extend_weight_table(
                &p.target,
                &p.shells,
                &p.table,
                config.shell_mc,
                config.eta,
                config.mode,
                config.d_tilde,
                &move |i| {
                    derive_stream(
                        seed,
                        StreamPurpose::ShellEstimate { component: c as u32, shell: i as u64 },
                    )
                },
                config.max_shells,
            )?;
            p.shells = shells;
            p.table = table;
            p.zero_mass_shells = p.table.estimates.iter().filter(|e| e.is_zero_mass()).count();
            wall_notes.push(format!(
                "component {c}: schedule doubled to {} shells",
                p.shells.shell_count()
            ));
        }
    }

    // Resolve final selections, then fan the perfect draws out.
    let selections: Vec<usize> = draw_states
        .iter()
        .map(|(component, u_shell, _)| match prepared[*component].table.select_component(*u_shell) {
            Ok(Selection::Shell(i)) => i,
            Ok(Selection::NeedExtension) if clamped[*component] => {
                prepared[*component].table.shell_count() - 1
            }
            _ => unreachable!("extension loop guarantees a non-final shell"),
        })
        .collect();

    let caps = config.caps();
    let pool = config.pool()?;
    let prepared_ref: &[PreparedComponent] = prepared;
    let rows: Vec<SampleRow> = pool.install(|| {
        draw_states
            .into_par_iter()
            .enumerate()
            .map(|(k, (component, _, mut rng))| {
                let p = &prepared_ref[component];
                let shell = selections[k];
                let est = &p.table.estimates[shell];
                let draw =
                    perfect_draw(&mut rng, &p.target, &p.shells, shell, est, config.d_tilde, caps)?;
                Ok(SampleRow {
                    draw_index: k,
                    shell,
                    t_coalesce: draw.t_coalesce,
                    theta: p.target.pull_back(&draw.theta0),
                    component,
                })
            })
            .collect::<Result<_>>()
    })?;

    let final_shells = prepared.iter().map(|p| p.shells.shell_count()).max().unwrap();
    for (c, p) in prepared.iter().enumerate() {
        let tail = p.table.tail_mass_diagnostic();
        if tail.is_finite() {
            wall_notes.push(format!(
                "component {c}: extrapolated tail mass {tail:.3e} (epsilon {:.1e})",
                config.epsilon
            ));
        }
        if p.zero_mass_shells > 0 {
            wall_notes.push(format!("component {c}: {} zero-mass shells", p.zero_mass_shells));
        }
    }
    Ok(SampleSet { rows, final_shells, wall_notes })
}

/// Prepare and sample in one call.
pub fn run(config: &RunConfig, components: &[Component]) -> Result<(Vec<PreparedComponent>, SampleSet)> {
    let mut prepared = prepare_components(config, components)?;
    let samples = sample_iid(config, &mut prepared)?;
    Ok((prepared, samples))
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Write the sample CSV: `draw_index,shell_index,t_coalesce,theta_0,...`,
/// rows ordered by draw index, shell indices 1-based.
pub fn write_samples_csv<W: Write>(mut w: W, samples: &SampleSet) -> Result<()> {
    let d = samples.rows.first().map_or(0, |r| r.theta.len());
    write!(w, "draw_index,shell_index,t_coalesce")?;
    for j in 0..d {
        write!(w, ",theta_{j}")?;
    }
    writeln!(w)?;
    for row in &samples.rows {
        write!(w, "{},{},{}", row.draw_index, row.shell + 1, row.t_coalesce)?;
        for v in &row.theta {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read a sample CSV back (draw/shell/coalescence columns plus theta block).
pub fn read_samples_csv<R: BufRead>(r: R) -> Result<Vec<SampleRow>> {
    let mut rows = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if !line.starts_with("draw_index,shell_index,t_coalesce") {
                return Err(Error::Data { row: 0, message: "bad sample CSV header".into() });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::Data { row: idx, message: "too few columns".into() });
        }
        let parse_err = |m: &str| Error::Data { row: idx, message: m.into() };
        rows.push(SampleRow {
            draw_index: fields[0].parse().map_err(|_| parse_err("draw_index"))?,
            shell: fields[1].parse::<usize>().map_err(|_| parse_err("shell_index"))?.saturating_sub(1),
            t_coalesce: fields[2].parse().map_err(|_| parse_err("t_coalesce"))?,
            theta: fields[3..]
                .iter()
                .map(|s| s.parse().map_err(|_| parse_err("theta")))
                .collect::<Result<_>>()?,
            component: 0,
        });
    }
    Ok(rows)
}
