use thiserror::Error;

use crate::geometry::LaneId;
use crate::simcore::VehicleId;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("three lanes of width occupy {three_lanes} m but half the intersection side is {half_side} m")]
    Tiling { three_lanes: f64, half_side: f64 },
    #[error("a single vehicle ({vehicle_length} m) is longer than the control zone ({control_zone} m)")]
    VehicleLongerThanZone { vehicle_length: f64, control_zone: f64 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Violations of the reservation message protocol.
#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("vehicle {0} already has a pending request")]
    DuplicateRequest(VehicleId),
    #[error("no pending demand")]
    NoPendingDemand,
    #[error("vehicle {vehicle}: {message} out of sequence (state {state})")]
    OutOfSequence { vehicle: VehicleId, message: &'static str, state: &'static str },
}

#[derive(Debug, Error, PartialEq)]
pub enum PlatoonError {
    #[error("platoon of {requested} exceeds the {available} vehicles queued on lane {lane}")]
    QueueTooShort { lane: LaneId, requested: usize, available: usize },
    #[error("platoon of {requested} exceeds the feasible size {feasible} (length bound)")]
    TooLong { requested: usize, feasible: usize },
    #[error("platoon size must be at least 1")]
    Empty,
    #[error("invalid time-to-join input: {0}")]
    InvalidJoinInput(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Safety and consistency breaches detected while stepping the world. None of
/// these are recoverable.
#[derive(Debug, Error, PartialEq)]
pub enum SimulationFault {
    #[error("negative gap {gap:.4} m between vehicle {leader} and follower {follower} at t={time:.2}s")]
    NegativeGap { leader: VehicleId, follower: VehicleId, gap: f64, time: f64 },
    #[error("collision between vehicles {0} and {1} at t={2:.2}s")]
    Collision(VehicleId, VehicleId, f64),
    #[error("release attempted while the intersection zone is reserved (t={0:.2}s)")]
    ZoneBusy(f64),
    #[error("released movements {0} are not pairwise compatible")]
    ConflictingRelease(String),
    #[error("tile ({cell}, step {step}) claimed twice by {first} and {second}")]
    TileClash { cell: usize, step: u64, first: VehicleId, second: VehicleId },
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Platoon(#[from] PlatoonError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("replay memory holds {have} experiences, {need} needed (warming up)")]
    WarmingUp { have: usize, need: usize },
    #[error("non-finite loss or gradient at train step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("empty feasible action set")]
    EmptyFeasibleSet,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("architecture mismatch: checkpoint {found}, expected {expected}")]
    Shape { expected: String, found: String },
    #[error("checkpoint truncated or malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Top-level error of the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimulationFault),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("no completed trips")]
    NoTrips,
    #[error("safety breach, reproducer written to {bundle}: {fault}")]
    SafetyBreach { fault: SimulationFault, bundle: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("serialization: {0}")]
    Serde(String),
}

impl From<ProtocolError> for Error {
    fn from(e: ProtocolError) -> Self {
        Error::Simulation(SimulationFault::Protocol(e))
    }
}

impl From<PlatoonError> for Error {
    fn from(e: PlatoonError) -> Self {
        Error::Simulation(SimulationFault::Platoon(e))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
