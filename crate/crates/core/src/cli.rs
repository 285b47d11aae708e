//! Command-line front door: JSON run configuration, bundled presets, dataset
//! loading, and the pilot -> shells -> weights -> sample -> validate
//! pipeline with file artifacts between stages.

use crate::diffeo::{h_apply, make_transformed_target, JacobianConvention};
use crate::engine::{
    self, Component, PreparedComponent, RunConfig, SampleRow, SampleSet, StreamPurpose, TailPolicy,
};
use crate::error::{Error, Result};
use crate::estimate::WeightTableCheckpoint;
use crate::geometry::ModePolicy;
use crate::pilot::{estimate_location_scale, run_additive_tmcmc, PilotOptions, PilotSummary};
use crate::target::{
    analytic_marginal_cdf, make_challenger_posterior, make_salmonella_posterior,
    make_standard_target, ramp_location, squared_exp_scale, ChallengerDataset, SalmonellaDataset,
    StandardKind, TargetModel,
};
use crate::validate::{
    correlation_compare, default_grid, emit_density_curve, ks_test, ks_two_sample, KsEntry,
    ValidationReport,
};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Target selection in the run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Normal { d: usize, #[serde(default, skip_serializing_if = "Option::is_none")] loc: Option<Vec<f64>>, #[serde(default, skip_serializing_if = "Option::is_none")] scale: Option<Vec<Vec<f64>>> },
    StudentT5 { d: usize, #[serde(default, skip_serializing_if = "Option::is_none")] loc: Option<Vec<f64>>, #[serde(default, skip_serializing_if = "Option::is_none")] scale: Option<Vec<Vec<f64>>> },
    Cauchy { d: usize, #[serde(default, skip_serializing_if = "Option::is_none")] loc: Option<Vec<f64>>, #[serde(default, skip_serializing_if = "Option::is_none")] scale: Option<Vec<Vec<f64>>> },
    NormalMixture {
        d: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")] locs: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")] scale: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")] weights: Option<Vec<f64>>,
    },
    Challenger { #[serde(default, skip_serializing_if = "Option::is_none")] data: Option<PathBuf> },
    Salmonella { #[serde(default, skip_serializing_if = "Option::is_none")] data: Option<PathBuf> },
}

impl TargetSpec {
    pub fn id(&self) -> String {
        match self {
            TargetSpec::Normal { d, .. } => format!("normal-d{d}"),
            TargetSpec::StudentT5 { d, .. } => format!("t5-d{d}"),
            TargetSpec::Cauchy { d, .. } => format!("cauchy-d{d}"),
            TargetSpec::NormalMixture { d, .. } => format!("normal-mixture-d{d}"),
            TargetSpec::Challenger { .. } => "challenger".into(),
            TargetSpec::Salmonella { .. } => "salmonella".into(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            TargetSpec::Normal { d, .. }
            | TargetSpec::StudentT5 { d, .. }
            | TargetSpec::Cauchy { d, .. }
            | TargetSpec::NormalMixture { d, .. } => *d,
            TargetSpec::Challenger { .. } => 2,
            TargetSpec::Salmonella { .. } => 3,
        }
    }
}

/// Pilot chain controls (posterior targets and flattened runs).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    pub scales: Vec<f64>,
    #[serde(default = "defaults::pilot_iters")]
    pub n_iter: usize,
    #[serde(default = "defaults::pilot_burn")]
    pub burn_in: usize,
    #[serde(default = "defaults::one")]
    pub thin: usize,
    #[serde(default = "defaults::yes")]
    pub enhance: bool,
    #[serde(default)]
    pub robust: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

mod defaults {
    pub fn shell_mc() -> usize { 10_000 }
    pub fn eta() -> f64 { 1e-5 }
    pub fn epsilon() -> f64 { 1e-3 }
    pub fn d_tilde() -> f64 { 1e5 }
    pub fn t_max() -> u64 { 10_000_000 }
    pub fn max_residual() -> u64 { 1_000_000 }
    pub fn max_shells() -> usize { 1 << 20 }
    pub fn pilot_iters() -> usize { 200_000 }
    pub fn pilot_burn() -> usize { 100_000 }
    pub fn one() -> usize { 1 }
    pub fn yes() -> bool { true }
}

/// The JSON run configuration. Unknown keys are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub target: TargetSpec,
    pub seed: u64,
    #[serde(rename = "K")]
    pub draws: usize,
    #[serde(rename = "N_i", default = "defaults::shell_mc")]
    pub shell_mc: usize,
    #[serde(rename = "M")]
    pub initial_shells: usize,
    #[serde(rename = "r")]
    pub radius_start: f64,
    #[serde(rename = "a")]
    pub radius_step: f64,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub mode: ModePolicy,
    #[serde(default = "defaults::d_tilde")]
    pub d_tilde: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flatten_b: Option<f64>,
    #[serde(default = "defaults::t_max")]
    pub t_max: u64,
    #[serde(default = "defaults::max_residual")]
    pub max_residual_trials: u64,
    #[serde(rename = "max_M", default = "defaults::max_shells")]
    pub max_shells: usize,
    #[serde(default)]
    pub tail: TailPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<PilotConfig>,
    /// Explicit shell center (otherwise pilot or target default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    /// Explicit shell scale (otherwise pilot or target default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.shell_mc < 2 || self.initial_shells == 0 {
            return Err(Error::Config("K, N_i and M must be positive (N_i >= 2)".into()));
        }
        if !(self.radius_start > 0.0 && self.radius_step > 0.0) {
            return Err(Error::Config("r and a must be positive".into()));
        }
        if self.max_shells < self.initial_shells {
            return Err(Error::Config("max_M must be at least M".into()));
        }
        if let Some(b) = self.flatten_b {
            if !(b > 0.0) {
                return Err(Error::Config("flatten_b must be positive".into()));
            }
            if matches!(self.target, TargetSpec::NormalMixture { .. }) {
                return Err(Error::Config("flatten_b is not supported for mixture targets".into()));
            }
        }
        if let Some(p) = &self.pilot {
            if p.scales.len() != self.target.dim() {
                return Err(Error::Config(format!(
                    "pilot.scales must have length {}",
                    self.target.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            workers: self.workers.unwrap_or_else(|| {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            }),
            draws: self.draws,
            shell_mc: self.shell_mc,
            initial_shells: self.initial_shells,
            radius_start: self.radius_start,
            radius_step: self.radius_step,
            eta: self.eta,
            epsilon: self.epsilon,
            mode: self.mode,
            d_tilde: self.d_tilde,
            flatten_b: self.flatten_b,
            t_max: self.t_max,
            max_residual_trials: self.max_residual_trials,
            max_shells: self.max_shells,
            tail: self.tail,
        }
    }
}

/// Parse and validate a configuration file.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parse a configuration document; parse errors keep serde's line context.
pub fn parse_config(text: &str) -> Result<Config> {
    let config: Config =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Bundled run configurations. Desk-scale presets shrink K/N_i for quick
/// runs; `-full` variants use the experiment-scale settings.
pub const PRESETS: &[(&str, &str)] = &[
    ("normal-d1", include_str!("../presets/normal-d1.json")),
    ("normal-d5", include_str!("../presets/normal-d5.json")),
    ("normal-d10", include_str!("../presets/normal-d10.json")),
    ("normal-d10-full", include_str!("../presets/normal-d10-full.json")),
    ("normal-d100", include_str!("../presets/normal-d100.json")),
    ("t5-d1", include_str!("../presets/t5-d1.json")),
    ("t5-d5", include_str!("../presets/t5-d5.json")),
    ("t5-d10", include_str!("../presets/t5-d10.json")),
    ("cauchy-d1", include_str!("../presets/cauchy-d1.json")),
    ("cauchy-d5", include_str!("../presets/cauchy-d5.json")),
    ("cauchy-d10", include_str!("../presets/cauchy-d10.json")),
    ("mixture-d2", include_str!("../presets/mixture-d2.json")),
    ("mixture-d50", include_str!("../presets/mixture-d50.json")),
    ("challenger", include_str!("../presets/challenger.json")),
    ("challenger-full", include_str!("../presets/challenger-full.json")),
    ("salmonella", include_str!("../presets/salmonella.json")),
    ("salmonella-full", include_str!("../presets/salmonella-full.json")),
    ("flat-normal-d2", include_str!("../presets/flat-normal-d2.json")),
];

pub fn preset(name: &str) -> Result<Config> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_config(text))
        .unwrap_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Err(Error::Config(format!(
                "unknown preset '{name}'; available: {}",
                names.join(", ")
            )))
        })
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// A loaded dataset, typed by schema.
pub enum Dataset {
    Challenger(ChallengerDataset),
    Salmonella(SalmonellaDataset),
}

/// Load a named dataset from `path`, or the bundled copy when absent.
pub fn load_dataset(name: &str, path: Option<&Path>) -> Result<Dataset> {
    match name {
        "challenger" => Ok(Dataset::Challenger(match path {
            Some(p) => ChallengerDataset::from_reader(fs::File::open(p)?)?,
            None => ChallengerDataset::bundled(),
        })),
        "salmonella" => Ok(Dataset::Salmonella(match path {
            Some(p) => SalmonellaDataset::from_reader(fs::File::open(p)?)?,
            None => SalmonellaDataset::bundled(),
        })),
        other => Err(Error::Config(format!("unknown dataset '{other}'"))),
    }
}

// ---------------------------------------------------------------------------
// Target assembly
// ---------------------------------------------------------------------------

/// The sampling-facing view of the configured target: the evaluation model
/// plus per-component geometry defaults when the target knows them.
pub struct BuiltTarget {
    /// Full model (mixture-aware), used for validation.
    pub model: TargetModel,
    /// Per-component (weight, density, default center/scale); centers are
    /// None for posterior targets, which take geometry from the pilot.
    pub components: Vec<(f64, TargetModel, Option<(Vec<f64>, Vec<Vec<f64>>)>)>,
}

pub fn build_target(spec: &TargetSpec) -> Result<BuiltTarget> {
    let standard = |kind: StandardKind,
                    d: usize,
                    loc: &Option<Vec<f64>>,
                    scale: &Option<Vec<Vec<f64>>>|
     -> Result<BuiltTarget> {
        let loc = loc.clone().unwrap_or_else(|| ramp_location(d));
        let scale = scale.clone().unwrap_or_else(|| squared_exp_scale(d, 10.0));
        let model = make_standard_target(kind, d, vec![loc.clone()], scale.clone(), None)?;
        Ok(BuiltTarget {
            model: model.clone(),
            components: vec![(1.0, model, Some((loc, scale)))],
        })
    };
    match spec {
        TargetSpec::Normal { d, loc, scale } => standard(StandardKind::Normal, *d, loc, scale),
        TargetSpec::StudentT5 { d, loc, scale } => standard(StandardKind::StudentT5, *d, loc, scale),
        TargetSpec::Cauchy { d, loc, scale } => standard(StandardKind::Cauchy, *d, loc, scale),
        TargetSpec::NormalMixture { d, locs, scale, weights } => {
            let locs = locs.clone().unwrap_or_else(|| {
                let nu = ramp_location(*d);
                let nu2 = nu.iter().map(|v| 2.0 * v).collect();
                vec![nu, nu2]
            });
            let scale = scale.clone().unwrap_or_else(|| squared_exp_scale(*d, 10.0));
            let weights = weights.clone().unwrap_or_else(|| vec![2.0 / 3.0, 1.0 / 3.0]);
            let model = make_standard_target(
                StandardKind::NormalMixture,
                *d,
                locs.clone(),
                scale.clone(),
                Some(weights),
            )?;
            let components = model
                .mixture()
                .expect("mixture target carries components")
                .iter()
                .zip(locs)
                .map(|((w, m), loc)| (*w, m.clone(), Some((loc, scale.clone()))))
                .collect();
            Ok(BuiltTarget { model, components })
        }
        TargetSpec::Challenger { data } => {
            let Dataset::Challenger(ds) = load_dataset("challenger", data.as_deref())? else {
                unreachable!()
            };
            let model = make_challenger_posterior(&ds)?;
            Ok(BuiltTarget { model: model.clone(), components: vec![(1.0, model, None)] })
        }
        TargetSpec::Salmonella { data } => {
            let Dataset::Salmonella(ds) = load_dataset("salmonella", data.as_deref())? else {
                unreachable!()
            };
            let model = make_salmonella_posterior(&ds)?;
            Ok(BuiltTarget { model: model.clone(), components: vec![(1.0, model, None)] })
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Verb {
    /// Run the pilot chain and store its draws and moment summary.
    Pilot,
    /// Build the shell system and estimate the weight table.
    Weights,
    /// Generate the i.i.d. sample set (requires the weights artifact).
    Sample,
    /// Statistical checks on the sample set; writes report.json.
    Validate,
    /// Emit kernel density curves and a run summary.
    Report,
    /// Run every applicable stage in order.
    All,
}

/// Command-line interface.
#[derive(Parser, Debug)]
#[command(name = "iidgen", version, about = "Exact i.i.d. sampling from unnormalized densities via ellipsoidal-shell decomposition and split-chain perfect simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
    /// Path to a JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Name of a bundled preset (alternative to --config).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the configured worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Override the configured draw count K.
    #[arg(long, global = true)]
    pub draws: Option<usize>,
}

fn artifact(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn weights_path(dir: &Path, component: usize) -> PathBuf {
    if component == 0 {
        artifact(dir, "weights.json")
    } else {
        artifact(dir, &format!("weights_c{component}.json"))
    }
}

fn write_pilot_csv(path: &Path, samples: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let d = samples.first().map_or(0, |s| s.len());
    let header: Vec<String> = (0..d).map(|j| format!("theta_{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in samples {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn read_pilot_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        rows.push(
            line.split(',')
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Data { row: idx, message: "bad pilot value".into() })
                })
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(rows)
}

/// Pilot stage: run the additive chain on the configured target.
pub fn stage_pilot(config: &Config, out_dir: &Path) -> Result<PilotSummary> {
    let pilot_cfg = config
        .pilot
        .as_ref()
        .ok_or_else(|| Error::Config("this run has no pilot section".into()))?;
    let built = build_target(&config.target)?;
    let opts = PilotOptions {
        scales: pilot_cfg.scales.clone(),
        n_iter: pilot_cfg.n_iter,
        burn_in: pilot_cfg.burn_in,
        thin: pilot_cfg.thin,
        enhance: pilot_cfg.enhance,
        robust: pilot_cfg.robust,
        init: pilot_cfg.init.clone(),
    };
    let mut rng = engine::derive_stream(config.seed, StreamPurpose::Pilot);
    let (samples, summary) = run_additive_tmcmc(&mut rng, &built.model, &opts)?;
    write_pilot_csv(&artifact(out_dir, "pilot.csv"), &samples)?;
    fs::write(
        artifact(out_dir, "pilot.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "mu": summary.mu_hat,
            "sigma": summary.sigma_hat,
            "acceptance_rate": summary.acceptance_rate,
            "n_iter": summary.n_iter,
            "burn_in": summary.burn_in,
            "thin": summary.thin,
            "robust": summary.robust,
        }))?,
    )?;
    Ok(summary)
}

/// Pilot information available to component resolution, either loaded from
/// artifacts on disk or carried in memory.
#[derive(Default)]
pub struct PilotArtifacts {
    pub samples: Option<Vec<Vec<f64>>>,
    pub moments: Option<(Vec<f64>, Vec<Vec<f64>>)>,
}

impl PilotArtifacts {
    fn from_dir(out_dir: &Path, need_samples: bool) -> Result<Self> {
        let mut out = PilotArtifacts::default();
        let csv_path = artifact(out_dir, "pilot.csv");
        if need_samples && csv_path.exists() {
            out.samples = Some(read_pilot_csv(&csv_path)?);
        }
        let json_path = artifact(out_dir, "pilot.json");
        if json_path.exists() {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_path)?)?;
            let mu: Vec<f64> = serde_json::from_value(v["mu"].clone())?;
            let sigma: Vec<Vec<f64>> = serde_json::from_value(v["sigma"].clone())?;
            out.moments = Some((mu, sigma));
        }
        Ok(out)
    }
}

/// Resolve the engine components for this run: the sampling density per
/// component plus its shell center and scale.
pub fn components_from(config: &Config, pilot: &PilotArtifacts) -> Result<Vec<Component>> {
    let built = build_target(&config.target)?;

    if let Some(b) = config.flatten_b {
        // Flattened run: the engine samples the transformed density; shells
        // are fit to the pushed-forward pilot sample cloud.
        let (_, model, _) = &built.components[0];
        let transformed = make_transformed_target(model, b, JacobianConvention::Preimage)?;
        let thetas = pilot
            .samples
            .as_ref()
            .ok_or(Error::MissingArtifact { stage: "pilot" })?;
        let gammas: Vec<Vec<f64>> = thetas.iter().map(|t| h_apply(b, t)).collect();
        let robust = config.pilot.as_ref().map(|p| p.robust).unwrap_or(false);
        let (mu, sigma) = estimate_location_scale(&gammas, robust)?;
        return Ok(Component::single(transformed, mu, sigma));
    }

    built
        .components
        .into_iter()
        .map(|(weight, target, geom)| {
            let (mu, sigma) = match (&config.mu, &config.sigma) {
                (Some(mu), Some(sigma)) => (mu.clone(), sigma.clone()),
                _ => match geom {
                    Some(g) => g,
                    None => pilot
                        .moments
                        .clone()
                        .ok_or(Error::MissingArtifact { stage: "pilot" })?,
                },
            };
            Ok(Component { weight, target, mu, sigma })
        })
        .collect()
}

fn resolve_components(config: &Config, out_dir: &Path) -> Result<Vec<Component>> {
    let pilot = PilotArtifacts::from_dir(out_dir, config.flatten_b.is_some())?;
    components_from(config, &pilot)
}

/// Run the whole pipeline without touching the filesystem: pilot (when
/// configured), weight estimation, and sampling. Used by language bindings.
pub fn run_in_memory(config: &Config) -> Result<SampleSet> {
    config.validate()?;
    let mut pilot = PilotArtifacts::default();
    if let Some(pc) = &config.pilot {
        let built = build_target(&config.target)?;
        let opts = PilotOptions {
            scales: pc.scales.clone(),
            n_iter: pc.n_iter,
            burn_in: pc.burn_in,
            thin: pc.thin,
            enhance: pc.enhance,
            robust: pc.robust,
            init: pc.init.clone(),
        };
        let mut rng = engine::derive_stream(config.seed, StreamPurpose::Pilot);
        let (samples, summary) = run_additive_tmcmc(&mut rng, &built.model, &opts)?;
        pilot.moments = Some((summary.mu_hat.clone(), summary.sigma_hat.clone()));
        pilot.samples = Some(samples);
    }
    let components = components_from(config, &pilot)?;
    let run_config = config.run_config();
    let (_, samples) = engine::run(&run_config, &components)?;
    Ok(samples)
}

/// Weights stage: estimate every component's table and write checkpoints.
pub fn stage_weights(config: &Config, out_dir: &Path) -> Result<Vec<PreparedComponent>> {
    let components = resolve_components(config, out_dir)?;
    let run_config = config.run_config();
    let prepared = engine::prepare_components(&run_config, &components)?;
    for (c, p) in prepared.iter().enumerate() {
        let ckpt = WeightTableCheckpoint::new(&p.shells, &p.table, config.seed, &config.target.id());
        fs::write(weights_path(out_dir, c), ckpt.to_json()?)?;
    }
    Ok(prepared)
}

fn load_prepared(config: &Config, out_dir: &Path) -> Result<Vec<PreparedComponent>> {
    let components = resolve_components(config, out_dir)?;
    let mut prepared = Vec::with_capacity(components.len());
    for (c, comp) in components.into_iter().enumerate() {
        let path = weights_path(out_dir, c);
        if !path.exists() {
            return Err(Error::MissingArtifact { stage: "weights" });
        }
        let ckpt = WeightTableCheckpoint::from_json(&fs::read_to_string(&path)?)?;
        if ckpt.target_id != config.target.id() {
            return Err(Error::Config(format!(
                "weights checkpoint was built for target '{}', config says '{}'",
                ckpt.target_id,
                config.target.id()
            )));
        }
        let (shells, table) = ckpt.restore()?;
        let zero_mass_shells = table.estimates.iter().filter(|e| e.is_zero_mass()).count();
        prepared.push(PreparedComponent {
            weight: comp.weight,
            target: comp.target,
            shells,
            table,
            zero_mass_shells,
        });
    }
    Ok(prepared)
}

/// Sample stage: restore the checkpoints and generate the draws.
pub fn stage_sample(config: &Config, out_dir: &Path) -> Result<SampleSet> {
    let mut prepared = load_prepared(config, out_dir)?;
    let run_config = config.run_config();
    let samples = engine::sample_iid(&run_config, &mut prepared)?;
    // Doubling may have extended the tables; keep the checkpoints current.
    for (c, p) in prepared.iter().enumerate() {
        let ckpt = WeightTableCheckpoint::new(&p.shells, &p.table, config.seed, &config.target.id());
        fs::write(weights_path(out_dir, c), ckpt.to_json()?)?;
    }
    let mut buf = Vec::new();
    engine::write_samples_csv(&mut buf, &samples)?;
    fs::write(artifact(out_dir, "samples.csv"), &buf)?;
    fs::write(
        artifact(out_dir, "manifest.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "final_shells": samples.final_shells,
            "wall_notes": samples.wall_notes,
        }))?,
    )?;
    Ok(samples)
}

fn read_samples(out_dir: &Path) -> Result<Vec<SampleRow>> {
    let path = artifact(out_dir, "samples.csv");
    if !path.exists() {
        return Err(Error::MissingArtifact { stage: "sample" });
    }
    engine::read_samples_csv(std::io::BufReader::new(fs::File::open(path)?))
}

/// True correlation matrix for targets that have one.
fn reference_correlation(spec: &TargetSpec) -> Option<Vec<Vec<f64>>> {
    let corr_of = |scale: &Vec<Vec<f64>>| {
        let d = scale.len();
        (0..d)
            .map(|i| (0..d).map(|j| scale[i][j] / (scale[i][i] * scale[j][j]).sqrt()).collect())
            .collect::<Vec<Vec<f64>>>()
    };
    match spec {
        TargetSpec::Normal { d, scale, .. } | TargetSpec::StudentT5 { d, scale, .. } => {
            let s = scale.clone().unwrap_or_else(|| squared_exp_scale(*d, 10.0));
            Some(corr_of(&s))
        }
        TargetSpec::NormalMixture { d, locs, scale, weights } => {
            // cov = sum_j w_j (S + nu_j nu_j^T) - m m^T with m = sum_j w_j nu_j.
            let s = scale.clone().unwrap_or_else(|| squared_exp_scale(*d, 10.0));
            let locs = locs.clone().unwrap_or_else(|| {
                let nu = ramp_location(*d);
                let nu2 = nu.iter().map(|v| 2.0 * v).collect();
                vec![nu, nu2]
            });
            let weights = weights.clone().unwrap_or_else(|| vec![2.0 / 3.0, 1.0 / 3.0]);
            let dd = *d;
            let mut m = vec![0.0; dd];
            for (w, nu) in weights.iter().zip(&locs) {
                for i in 0..dd {
                    m[i] += w * nu[i];
                }
            }
            let mut cov = vec![vec![0.0; dd]; dd];
            for (w, nu) in weights.iter().zip(&locs) {
                for i in 0..dd {
                    for j in 0..dd {
                        cov[i][j] += w * (s[i][j] + nu[i] * nu[j]);
                    }
                }
            }
            for i in 0..dd {
                for j in 0..dd {
                    cov[i][j] -= m[i] * m[j];
                }
            }
            Some(corr_of(&cov))
        }
        // Cauchy has no correlation structure; posteriors have no closed form.
        _ => None,
    }
}

pub const VALIDATE_ALPHA: f64 = 0.01;
/// Looser level for the i.i.d.-vs-pilot comparison: the pilot chain is
/// autocorrelated even after thinning.
pub const PILOT_KS_ALPHA: f64 = 0.001;

/// Validate stage: KS / correlation / occupancy checks against whatever
/// references the target admits.
pub fn stage_validate(config: &Config, out_dir: &Path) -> Result<ValidationReport> {
    let rows = read_samples(out_dir)?;
    let built = build_target(&config.target)?;
    let d = built.model.dim();
    let mut report = ValidationReport::new(VALIDATE_ALPHA);

    if built.model.has_marginal_cdf() {
        for coord in 0..d {
            let xs: Vec<f64> = rows.iter().map(|r| r.theta[coord]).collect();
            let (stat, p) =
                ks_test(&xs, |x| analytic_marginal_cdf(&built.model, coord, x).unwrap())?;
            report.marginal_ks.push(KsEntry {
                coord,
                statistic: stat,
                p_value: p,
                pass: p > VALIDATE_ALPHA,
            });
        }
    } else {
        // Posterior target: compare against the thinned pilot sample.
        let pilot_path = artifact(out_dir, "pilot.csv");
        if pilot_path.exists() {
            let pilot_rows = read_pilot_csv(&pilot_path)?;
            let thin = (pilot_rows.len() / rows.len().max(1)).max(1);
            for coord in 0..d {
                let xs: Vec<f64> = rows.iter().map(|r| r.theta[coord]).collect();
                let ys: Vec<f64> =
                    pilot_rows.iter().step_by(thin).map(|r| r[coord]).collect();
                let (stat, p) = ks_two_sample(&xs, &ys)?;
                report.pilot_ks.push(KsEntry {
                    coord,
                    statistic: stat,
                    p_value: p,
                    pass: p > PILOT_KS_ALPHA,
                });
            }
        }
    }

    if let Some(reference) = reference_correlation(&config.target) {
        let thetas: Vec<Vec<f64>> = rows.iter().map(|r| r.theta.clone()).collect();
        let (max_abs, frob) = correlation_compare(&thetas, &reference)?;
        report.correlation_max_abs_diff = Some(max_abs);
        report.correlation_frobenius_diff = Some(frob);
    }

    // Shell occupancy: single-component runs only (the CSV does not carry
    // the mixture component).
    if built.components.len() == 1 {
        let path = weights_path(out_dir, 0);
        if path.exists() {
            let ckpt = WeightTableCheckpoint::from_json(&fs::read_to_string(&path)?)?;
            let (_, table) = ckpt.restore()?;
            if table.shell_count() > rows.iter().map(|r| r.shell).max().unwrap_or(0) {
                let (stat, p) = crate::validate::shell_frequency_chisq(&rows, &table)?;
                report.shell_chisq_statistic = Some(stat);
                report.shell_chisq_p_value = Some(p);
                report.shell_chisq_pass = Some(p > VALIDATE_ALPHA);
            }
        }
    }

    report.finalize();
    fs::write(artifact(out_dir, "report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Report stage: density curves per coordinate plus a text summary.
pub fn stage_report(config: &Config, out_dir: &Path) -> Result<()> {
    let rows = read_samples(out_dir)?;
    let d = rows.first().map_or(0, |r| r.theta.len());
    for coord in 0..d {
        let xs: Vec<f64> = rows.iter().map(|r| r.theta[coord]).collect();
        let grid = default_grid(&xs, 256);
        let curve = emit_density_curve(&xs, &grid);
        let mut w = BufWriter::new(fs::File::create(artifact(out_dir, &format!("curve_theta{coord}.csv")))?);
        writeln!(w, "x,density")?;
        for (x, dens) in curve {
            writeln!(w, "{x},{dens}")?;
        }
    }
    let manifest = artifact(out_dir, "manifest.json");
    println!("samples: {} draws of dimension {d} ({})", rows.len(), config.target.id());
    if manifest.exists() {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest)?)?;
        println!("final shell count: {}", v["final_shells"]);
        if let Some(notes) = v["wall_notes"].as_array() {
            for n in notes {
                println!("note: {}", n.as_str().unwrap_or_default());
            }
        }
    }
    let report = artifact(out_dir, "report.json");
    if report.exists() {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report)?)?;
        println!("validation pass: {}", v["pass"]);
    }
    Ok(())
}

/// Execute one verb of the pipeline.
pub fn run_pipeline(cli: &Cli) -> Result<()> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), None) => load_config(path)?,
        (None, Some(name)) => preset(name)?,
        (Some(_), Some(_)) => {
            return Err(Error::Config("pass either --config or --preset, not both".into()))
        }
        (None, None) => return Err(Error::Config("a --config file or --preset name is required".into())),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = Some(workers);
    }
    if let Some(draws) = cli.draws {
        config.draws = draws;
    }
    config.validate()?;
    fs::create_dir_all(&cli.out_dir)?;

    match cli.verb {
        Verb::Pilot => {
            let summary = stage_pilot(&config, &cli.out_dir)?;
            println!(
                "pilot: {} retained states, acceptance {:.3}",
                (summary.n_iter - summary.burn_in) / summary.thin,
                summary.acceptance_rate
            );
        }
        Verb::Weights => {
            let prepared = stage_weights(&config, &cli.out_dir)?;
            for (c, p) in prepared.iter().enumerate() {
                println!(
                    "weights: component {c}: {} shells, {} zero-mass",
                    p.table.shell_count(),
                    p.zero_mass_shells
                );
            }
        }
        Verb::Sample => {
            let samples = stage_sample(&config, &cli.out_dir)?;
            println!("sample: {} draws, final shell count {}", samples.rows.len(), samples.final_shells);
        }
        Verb::Validate => {
            let report = stage_validate(&config, &cli.out_dir)?;
            println!("validate: pass = {}", report.pass);
        }
        Verb::Report => stage_report(&config, &cli.out_dir)?,
        Verb::All => {
            if config.pilot.is_some() {
                stage_pilot(&config, &cli.out_dir)?;
            }
            stage_weights(&config, &cli.out_dir)?;
            stage_sample(&config, &cli.out_dir)?;
            stage_validate(&config, &cli.out_dir)?;
            stage_report(&config, &cli.out_dir)?;
        }
    }
    Ok(())
}
