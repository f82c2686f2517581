use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{webster_plan, SignalController, TileController};
use crate::control::{Controller, ControllerKind, DecisionRecord, FixedSize, PlatoonController, SizingPolicy};
use crate::drl::DqnAgent;
use crate::error::{Error, SimulationFault};
use crate::geometry::{Intersection, Movement};
use crate::metrics::{ReleaseRecord, TripRecord};
use crate::reservation::CompanionRule;
use crate::seeding::derive_seed;
use crate::simcore::World;

use super::ExperimentConfig;

/// Everything an episode produced.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub controller: ControllerKind,
    pub seed: u64,
    pub trips: Vec<TripRecord>,
    pub releases: Vec<ReleaseRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub spawned: u64,
    /// Vehicles still in the network at the horizon.
    pub in_network: usize,
    /// Arrivals still waiting to enter at the horizon.
    pub backlog: usize,
    pub max_backlog: usize,
    pub arrivals: Vec<(Movement, f64)>,
    pub protocol_trace: Vec<String>,
    pub steps: u64,
}

/// What is needed to replay a safety breach.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReproducerBundle {
    pub controller: ControllerKind,
    pub seed: u64,
    pub step: u64,
    pub time: f64,
    pub fault: String,
    pub config: String,
}

fn write_bundle(dir: &Path, bundle: &ReproducerBundle) -> PathBuf {
    let path = dir.join(format!("fault_{}_seed{}_step{}.json", bundle.controller, bundle.seed, bundle.step));
    // Best effort: the breach itself is reported even when the bundle cannot
    // be written.
    let _ = std::fs::create_dir_all(dir);
    let _ = std::fs::write(&path, serde_json::to_string_pretty(bundle).unwrap_or_default());
    path
}

pub fn build_geometry(config: &ExperimentConfig) -> Result<Arc<Intersection>, Error> {
    Ok(Arc::new(Intersection::new(&config.geometry)?))
}

/// Simulates one episode of `config.horizon` seconds under `kind`. Network
/// controllers need `agent`; whether it learns depends on its mode.
pub fn run_episode(
    config: &ExperimentConfig,
    geometry: &Arc<Intersection>,
    kind: ControllerKind,
    seed: u64,
    agent: Option<&mut DqnAgent>,
) -> Result<EpisodeResult, Error> {
    let mut world = World::new(
        geometry.clone(),
        config.dynamics.clone(),
        config.fuel.clone(),
        &config.flows,
        derive_seed(seed, &[0xA11]),
        config.horizon,
    );
    let ctrl_seed = derive_seed(seed, &[0xC7]);
    let zone_length = config.geometry.control_zone_radius;
    let mut fixed;
    let mut ctrl: Box<dyn Controller + '_> = match kind {
        ControllerKind::Webster => Box::new(SignalController::new(webster_plan(&config.flows, &config.signal)?)),
        ControllerKind::Fcfs => Box::new(TileController::new(&world, config.tiles.clone())),
        ControllerKind::Proposed | ControllerKind::Random => {
            let agent = agent.ok_or_else(|| Error::Serde(format!("controller {kind} needs a Q-network")))?;
            let rule = if kind == ControllerKind::Random { CompanionRule::Random } else { CompanionRule::MaxWait };
            Box::new(PlatoonController::new(agent as &mut dyn SizingPolicy, rule, ctrl_seed, zone_length, config.trace_protocol))
        }
        _ => {
            fixed = FixedSize(kind.fixed_size().expect("fixed-size kind"));
            Box::new(PlatoonController::new(
                &mut fixed as &mut dyn SizingPolicy,
                CompanionRule::MaxWait,
                ctrl_seed,
                zone_length,
                config.trace_protocol,
            ))
        }
    };

    let mut trips = Vec::new();
    let outcome = (|| -> Result<(), Error> {
        while !world.clock.finished() {
            let ids = world.spawn();
            ctrl.on_spawn(&mut world, &ids)?;
            ctrl.before_step(&mut world)?;
            let events = world.advance()?;
            ctrl.after_step(&mut world, &events)?;
            if let Some(&(a, b)) = world.detect_collisions().first() {
                return Err(SimulationFault::Collision(a, b, world.now()).into());
            }
            ctrl.audit(&world)?;
            trips.extend(events.retired);
        }
        ctrl.end_episode(&world)
    })();

    if let Err(e) = outcome {
        let fault = match e {
            Error::Simulation(f) => f,
            other => return Err(other),
        };
        let bundle = ReproducerBundle {
            controller: kind,
            seed,
            step: world.clock.step,
            time: world.now(),
            fault: fault.to_string(),
            config: config.to_toml(),
        };
        let path = write_bundle(&config.output_dir().join("faults"), &bundle);
        return Err(Error::SafetyBreach { fault, bundle: path.display().to_string() });
    }

    Ok(EpisodeResult {
        controller: kind,
        seed,
        trips,
        releases: ctrl.releases().to_vec(),
        decisions: ctrl.decisions().to_vec(),
        spawned: world.spawned(),
        in_network: world.vehicle_count(),
        backlog: world.backlog_len(),
        max_backlog: world.max_backlog(),
        arrivals: world.arrival_log().to_vec(),
        protocol_trace: ctrl.protocol_trace().to_vec(),
        steps: world.clock.step,
    })
}
