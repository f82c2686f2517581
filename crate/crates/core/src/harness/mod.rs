//! Experiment orchestration: configuration, episodes, training, evaluation
//! and the method comparison.

mod config;
mod episode;

pub use config::{ExperimentConfig, OUTPUT_ROOT_ENV};
pub use episode::{build_geometry, run_episode, EpisodeResult, ReproducerBundle};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ControllerKind;
use crate::drl::{load_checkpoint, save_checkpoint, AgentMode, DqnAgent};
use crate::error::{Error, SimulationFault};
use crate::metrics::{
    compare, histogram_to_csv, summarize, trips_to_csv, ComparisonReport, MethodRuns, SummaryStats,
};
use crate::seeding::derive_seed;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>, files: &mut Vec<String>) -> Result<PathBuf, Error> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    files.push(name.to_string());
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub seed: u64,
    pub decisions: u64,
    pub random_actions: u64,
    pub mean_reward: f64,
    pub mean_loss: f64,
    pub epsilon: f64,
    pub vehicles: usize,
    pub mean_travel_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub episodes: Vec<EpisodeLog>,
    pub checkpoints: Vec<String>,
    pub files: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.into(),
            config_hash: config.hash(),
            seed: config.seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            episodes: Vec::new(),
            checkpoints: Vec::new(),
            files: Vec::new(),
        }
    }

    fn write(mut self, dir: &Path) -> Result<Self, Error> {
        self.files.push("manifest.json".into());
        let json = serde_json::to_string_pretty(&self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json)
            .map_err(|source| Error::Io { path: dir.join("manifest.json").display().to_string(), source })?;
        Ok(self)
    }
}

pub const TRAINING_LOG_HEADER: &str = "episode,decisions,mean_reward,loss,epsilon,random_actions,vehicles,mean_travel_time";

fn training_log_csv(rows: &[EpisodeLog]) -> String {
    let mut out = String::from(TRAINING_LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{},{},{}",
            r.episode,
            r.decisions,
            r.mean_reward,
            r.mean_loss,
            r.epsilon,
            r.random_actions,
            r.vehicles,
            r.mean_travel_time.map_or_else(String::new, |t| format!("{t:.3}"))
        );
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: DqnAgent,
    pub log: Vec<EpisodeLog>,
    pub checkpoint: PathBuf,
    pub manifest: RunManifest,
}

/// Seed of training episode `episode`.
pub fn training_seed(config: &ExperimentConfig, episode: usize) -> u64 {
    derive_seed(config.seed, &[0x7241, episode as u64])
}

/// Runs `config.episodes` training episodes with one agent whose weights and
/// replay memory persist across episodes. A checkpoint is written after every
/// episode, so a failure leaves the last good one in place.
pub fn train(config: &ExperimentConfig, mut progress: impl FnMut(&EpisodeLog)) -> Result<TrainOutcome, Error> {
    let dir = config.output_dir();
    create_dir(&dir)?;
    let geometry = build_geometry(config)?;
    let kind = if config.controller.uses_network() { config.controller } else { ControllerKind::Proposed };
    let mut agent = DqnAgent::new(config.dqn.clone(), config.seed);
    agent.set_mode(AgentMode::Train);
    let mut manifest = RunManifest::new("train", config);
    let checkpoint = dir.join("checkpoint.bin");
    let mut log = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let seed = training_seed(config, episode);
        let result = run_episode(config, &geometry, kind, seed, Some(&mut agent))?;
        let stats = agent.take_stats();
        let row = EpisodeLog {
            episode: episode + 1,
            seed,
            decisions: stats.decisions,
            random_actions: stats.random_actions,
            mean_reward: stats.mean_reward(),
            mean_loss: stats.mean_loss(),
            epsilon: config.dqn.epsilon,
            vehicles: result.trips.len(),
            mean_travel_time: summarize(&result.trips, &[]).ok().map(|s| s.mean_travel_time),
        };
        save_checkpoint(&checkpoint, &agent.params, &agent.online)?;
        progress(&row);
        log.push(row);
    }
    let mut files = Vec::new();
    write_file(&dir, "training_log.csv", training_log_csv(&log), &mut files)?;
    write_file(&dir, "config.toml", config.to_toml(), &mut files)?;
    files.push("checkpoint.bin".into());
    manifest.files = files;
    manifest.checkpoints = vec!["checkpoint.bin".into()];
    manifest.episodes = log.clone();
    let manifest = manifest.write(&dir)?;
    Ok(TrainOutcome { agent, log, checkpoint, manifest })
}

/// Loads a checkpoint as a greedy agent, refusing architecture mismatches.
pub fn load_agent(config: &ExperimentConfig, path: &Path) -> Result<DqnAgent, Error> {
    let ckpt = load_checkpoint(path, Some(&config.dqn.network))?;
    let mut agent = DqnAgent::with_network(config.dqn.clone(), ckpt.network, config.seed);
    agent.set_mode(AgentMode::Greedy);
    Ok(agent)
}

/// Greedy evaluation episodes; the agent never learns here.
pub fn evaluate(config: &ExperimentConfig, agent: &mut DqnAgent, seeds: &[u64]) -> Result<Vec<EpisodeResult>, Error> {
    let geometry = build_geometry(config)?;
    agent.set_mode(AgentMode::Greedy);
    let kind = if config.controller.uses_network() { config.controller } else { ControllerKind::Proposed };
    seeds.iter().map(|&s| run_episode(config, &geometry, kind, s, Some(agent))).collect()
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub report: ComparisonReport,
    /// Per method, one result per evaluation seed.
    pub results: Vec<(ControllerKind, Vec<EpisodeResult>)>,
    pub files: Vec<String>,
}

impl CompareOutcome {
    pub fn runs(&self, kind: ControllerKind) -> &[EpisodeResult] {
        self.results.iter().find(|(k, _)| *k == kind).map_or(&[], |(_, r)| r.as_slice())
    }
}

fn arrivals_digest(r: &EpisodeResult) -> Vec<u8> {
    let mut h = Sha256::new();
    for (m, t) in &r.arrivals {
        h.update([m.index() as u8]);
        h.update(t.to_le_bytes());
    }
    h.finalize().to_vec()
}

/// Runs every method on the evaluation seeds and writes the comparison
/// table, per-method trip logs and the platoon-size histogram. Network
/// methods use `agent` greedily.
pub fn compare_all(
    config: &ExperimentConfig,
    agent: &mut DqnAgent,
    methods: &[ControllerKind],
    mut progress: impl FnMut(ControllerKind, &EpisodeResult),
) -> Result<CompareOutcome, Error> {
    let dir = config.output_dir();
    create_dir(&dir)?;
    let geometry = build_geometry(config)?;
    agent.set_mode(AgentMode::Greedy);
    let mut files = Vec::new();
    let mut results = Vec::new();
    let mut method_runs = Vec::new();
    let mut reference_arrivals: Vec<Option<Vec<u8>>> = vec![None; config.eval_seeds.len()];
    for &kind in methods {
        let mut runs = Vec::new();
        let mut stats: Vec<SummaryStats> = Vec::new();
        let mut censored = Vec::new();
        for (i, &seed) in config.eval_seeds.iter().enumerate() {
            let needs_agent = kind.uses_network();
            let r = run_episode(config, &geometry, kind, seed, needs_agent.then_some(&mut *agent))?;
            let digest = arrivals_digest(&r);
            match &reference_arrivals[i] {
                None => reference_arrivals[i] = Some(digest),
                Some(d) if *d != digest => {
                    return Err(SimulationFault::Other(format!("arrival streams differ for seed {seed} under {kind}")).into())
                }
                Some(_) => {}
            }
            write_file(&dir, &format!("trips_{}_seed{seed}.csv", kind.key()), trips_to_csv(&r.trips), &mut files)?;
            stats.push(summarize(&r.trips, &r.releases)?);
            censored.push(r.in_network + r.backlog);
            progress(kind, &r);
            runs.push(r);
        }
        method_runs.push(MethodRuns { method: kind.key().into(), label: kind.label().into(), runs: stats, censored });
        results.push((kind, runs));
    }
    let report = compare(&method_runs)?;
    write_file(&dir, "compare.csv", report.to_csv(), &mut files)?;
    write_file(&dir, "compare.txt", report.to_text(), &mut files)?;
    write_file(&dir, "compare.json", report.to_json(), &mut files)?;
    if let Some((_, runs)) = results.iter().find(|(k, _)| *k == ControllerKind::Proposed) {
        let releases: Vec<_> = runs.iter().flat_map(|r| r.releases.iter().copied()).collect();
        let trips: Vec<_> = runs.iter().flat_map(|r| r.trips.iter().cloned()).collect();
        let hist = summarize(&trips, &releases)?.platoon_histogram;
        write_file(&dir, "platoon_histogram.csv", histogram_to_csv(&hist), &mut files)?;
    }
    let mut manifest = RunManifest::new("compare", config);
    manifest.files = files.clone();
    manifest.write(&dir)?;
    Ok(CompareOutcome { report, results, files })
}
