//! Controllers that decide which vehicles may cross. The platoon controller
//! combines FCFS lane reservation with a pluggable platoon-size policy.

use serde::{Deserialize, Serialize};

use crate::drl::{encode_state, reward, AgentMode, DqnAgent};
use crate::error::{Error, PlatoonError, SimulationFault, TrainingError};
use crate::geometry::{LaneId, Movement, MOVEMENT_COUNT};
use crate::metrics::ReleaseRecord;
use crate::platooning::{form_platoon, max_feasible_size, PlatoonId, PlatoonSpec, QueuedVehicle};
use crate::reservation::{
    select_nonconflicting_lanes, CompanionRule, DoneMsg, Message, ProtocolAuditor, Release, RequestMsg, RequestQueue,
    ZoneReservation,
};
use crate::seeding::{stream_rng, SimRng, Stream};
use crate::simcore::{Clearance, PlatoonRole, PlatoonTag, StepEvents, VehicleId, World};

/// A traffic controller driven by the episode loop once per step.
pub trait Controller {
    /// Newly spawned vehicles, in spawn order.
    fn on_spawn(&mut self, world: &mut World, ids: &[VehicleId]) -> Result<(), Error>;
    /// Decisions taken before the dynamics advance.
    fn before_step(&mut self, world: &mut World) -> Result<(), Error>;
    /// Bookkeeping after the dynamics advanced.
    fn after_step(&mut self, world: &mut World, events: &StepEvents) -> Result<(), Error>;
    /// Controller-specific safety invariant, checked every step.
    fn audit(&self, world: &World) -> Result<(), SimulationFault>;
    fn end_episode(&mut self, _world: &World) -> Result<(), Error> {
        Ok(())
    }
    fn releases(&self) -> &[ReleaseRecord] {
        &[]
    }
    fn decisions(&self) -> &[DecisionRecord] {
        &[]
    }
    fn protocol_trace(&self) -> &[String] {
        &[]
    }
}

/// One decision epoch of a platoon controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub target: String,
    pub size: usize,
    pub feasible: usize,
    pub explored: bool,
    /// Companion lanes with the platoon size released from each.
    pub companions: Vec<(String, usize)>,
}

/// What a size policy sees at a decision epoch.
pub struct SizingContext<'w> {
    pub world: &'w World,
    pub target: LaneId,
    /// Largest admissible size: bounded by the queue and the zone length.
    pub feasible: usize,
}

pub trait SizingPolicy {
    /// Platoon size in `1..=feasible` and whether it was chosen at random.
    fn choose(&mut self, ctx: &SizingContext<'_>) -> Result<(usize, bool), Error>;
    fn end_episode(&mut self, _world: &World, _target: Option<LaneId>) -> Result<(), Error> {
        Ok(())
    }
}

/// Always `min(k, feasible)`.
#[derive(Clone, Copy, Debug)]
pub struct FixedSize(pub usize);

impl SizingPolicy for FixedSize {
    fn choose(&mut self, ctx: &SizingContext<'_>) -> Result<(usize, bool), Error> {
        Ok((self.0.min(ctx.feasible).max(1), false))
    }
}

/// Current reward of a world: mean per-vehicle reward over everyone present.
pub fn world_reward(world: &World, cap: f64, threshold: f64) -> f64 {
    let waits: Vec<f64> = world.vehicles().map(|v| v.accumulated_wait).collect();
    reward(&waits, cap, threshold)
}

impl SizingPolicy for DqnAgent {
    fn choose(&mut self, ctx: &SizingContext<'_>) -> Result<(usize, bool), Error> {
        let state = encode_state(ctx.world, Some(ctx.target), &self.params.encoder);
        let r = match self.mode() {
            AgentMode::Train => world_reward(ctx.world, self.params.reward_cap, self.params.wait_threshold),
            AgentMode::Greedy => 0.0,
        };
        if ctx.feasible > self.params.network.outputs {
            return Err(TrainingError::EmptyFeasibleSet.into());
        }
        Ok(self.act(state, ctx.feasible, r)?)
    }

    fn end_episode(&mut self, world: &World, target: Option<LaneId>) -> Result<(), Error> {
        if self.mode() == AgentMode::Train {
            let state = encode_state(world, target, &self.params.encoder);
            let r = world_reward(world, self.params.reward_cap, self.params.wait_threshold);
            DqnAgent::end_episode(self, state, r);
        }
        Ok(())
    }
}

/// FCFS target lane, companion lanes that cannot conflict with it, a platoon
/// size from the policy, then exclusive use of the zone until every released
/// platoon has passed.
pub struct PlatoonController<'p> {
    policy: &'p mut dyn SizingPolicy,
    rule: CompanionRule,
    rng: SimRng,
    /// Platoons may not be longer than this (the control-zone length).
    zone_length: f64,
    queue: RequestQueue,
    zone: ZoneReservation,
    auditor: ProtocolAuditor,
    next_platoon: u64,
    releases: Vec<ReleaseRecord>,
    decisions: Vec<DecisionRecord>,
    members: std::collections::HashMap<PlatoonId, Vec<VehicleId>>,
}

impl<'p> PlatoonController<'p> {
    pub fn new(policy: &'p mut dyn SizingPolicy, rule: CompanionRule, seed: u64, zone_length: f64, trace: bool) -> Self {
        Self {
            policy,
            rule,
            rng: stream_rng(seed, Stream::Controller, &[]),
            zone_length,
            queue: RequestQueue::new(),
            zone: ZoneReservation::default(),
            auditor: ProtocolAuditor::new(trace),
            next_platoon: 0,
            releases: Vec::new(),
            decisions: Vec::new(),
            members: Default::default(),
        }
    }

    pub fn queue(&self) -> &RequestQueue {
        &self.queue
    }

    pub fn auditor(&self) -> &ProtocolAuditor {
        &self.auditor
    }

    pub fn zone(&self) -> &ZoneReservation {
        &self.zone
    }

    fn queued(&self, world: &World, lane: LaneId) -> Result<Vec<QueuedVehicle>, SimulationFault> {
        self.queue
            .lane(lane)
            .iter()
            .map(|r| {
                world
                    .vehicle(r.vehicle)
                    .map(|v| QueuedVehicle { id: v.id, length: v.length })
                    .ok_or(SimulationFault::UnknownVehicle(r.vehicle))
            })
            .collect()
    }

    fn feasible(&self, queued: &[QueuedVehicle], world: &World) -> Result<usize, PlatoonError> {
        let lengths: Vec<f64> = queued.iter().map(|q| q.length).collect();
        max_feasible_size(&lengths, world.params.platoon_headway, self.zone_length)
    }

    fn decide(&mut self, world: &mut World) -> Result<(), Error> {
        let now = world.now();
        let target = self.queue.identify_target_lane()?;
        let target_queue = self.queued(world, target)?;
        let feasible = self.feasible(&target_queue, world)?;
        let (size, explored) = self.policy.choose(&SizingContext { world, target, feasible })?;
        if size == 0 {
            return Err(PlatoonError::Empty.into());
        }
        if size > feasible {
            return Err(PlatoonError::TooLong { requested: size, feasible }.into());
        }

        let mut lane_wait = [None; MOVEMENT_COUNT];
        for lane in LaneId::all() {
            let q = self.queue.lane(lane);
            if !q.is_empty() {
                let mut sum = 0.0;
                for r in q {
                    sum += world.vehicle(r.vehicle).map_or(0.0, |v| v.accumulated_wait);
                }
                lane_wait[lane.index()] = Some(sum);
            }
        }
        let companions =
            select_nonconflicting_lanes(target, &lane_wait, &world.geometry.conflicts, self.rule, &mut self.rng);

        let mut plan = vec![(target, size, target_queue)];
        for lane in companions {
            let q = self.queued(world, lane)?;
            let n = size.min(self.feasible(&q, world)?).min(q.len());
            plan.push((lane, n, q));
        }

        let mut releases = Vec::with_capacity(plan.len());
        let mut joins = Vec::new();
        for (lane, n, q) in &plan {
            let m = lane.movement();
            let desired = world.desired_speed(m);
            let spec = PlatoonSpec {
                id: PlatoonId(self.next_platoon),
                lane: *lane,
                size: *n,
                headway: world.params.platoon_headway,
                zone_length: self.zone_length,
                follow_speed: desired,
            };
            self.next_platoon += 1;
            let (platoon, j) = form_platoon(&spec, q)?;
            joins.extend(j);
            releases.push(Release { platoon: platoon.id, movement: m, members: platoon.members().collect(), desired_speed: desired });
        }
        let grants = self.zone.schedule_release(&releases, &world.geometry.conflicts, now)?;

        for (i, (release, grant)) in releases.iter().zip(&grants).enumerate() {
            let lane = release.movement.entry_lane();
            let taken = self.queue.take_front(lane, release.members.len());
            debug_assert!(taken.iter().map(|r| r.vehicle).eq(release.members.iter().copied()));
            self.auditor.record(now, &Message::Grant(grant.clone()))?;
            let tag = PlatoonTag { id: release.platoon, size: release.members.len(), target: i == 0 };
            for (k, &id) in release.members.iter().enumerate() {
                let v = world.vehicle_mut(id)?;
                v.clearance = Clearance::Released { desired_speed: release.desired_speed };
                v.role = if k == 0 { PlatoonRole::Leader } else { PlatoonRole::Follower };
                v.platoon = Some(tag);
            }
            self.members.insert(release.platoon, release.members.clone());
            self.releases.push(ReleaseRecord { size: release.members.len(), target: i == 0 });
        }
        for (follower, msg) in joins {
            self.auditor.record(now, &Message::Join { follower, msg })?;
        }
        self.decisions.push(DecisionRecord {
            time: now,
            target: target.movement().code(),
            size,
            feasible,
            explored,
            companions: releases[1..].iter().map(|r| (r.movement.code(), r.members.len())).collect(),
        });
        Ok(())
    }
}

impl Controller for PlatoonController<'_> {
    fn on_spawn(&mut self, world: &mut World, ids: &[VehicleId]) -> Result<(), Error> {
        let now = world.now();
        for &id in ids {
            let v = world.vehicle(id).ok_or(SimulationFault::UnknownVehicle(id))?;
            let msg = RequestMsg {
                vehicle: id,
                position: v.position,
                speed: v.speed,
                max_accel: v.max_accel,
                movement: v.movement,
                timestamp: now,
            };
            self.auditor.record(now, &Message::Request(msg.clone()))?;
            self.queue.register_request(msg)?;
        }
        Ok(())
    }

    fn before_step(&mut self, world: &mut World) -> Result<(), Error> {
        if self.zone.is_idle() && !self.queue.is_empty() {
            self.decide(world)?;
        }
        Ok(())
    }

    fn after_step(&mut self, world: &mut World, events: &StepEvents) -> Result<(), Error> {
        let now = world.now();
        for &id in &events.passed {
            if let Some(done) = self.zone.vehicle_passed(id) {
                self.close_platoon(now, done)?;
            }
        }
        Ok(())
    }

    fn audit(&self, world: &World) -> Result<(), SimulationFault> {
        let allowed = self.zone.reserved_movements();
        for v in world.vehicles() {
            if world.in_zone(v) && !(v.is_released() && allowed.contains(v.movement)) && !v.passed {
                return Err(SimulationFault::Other(format!(
                    "vehicle {} ({}) inside the zone outside the reservation {allowed}",
                    v.id, v.movement
                )));
            }
        }
        Ok(())
    }

    fn end_episode(&mut self, world: &World) -> Result<(), Error> {
        let target = self.queue.identify_target_lane().ok();
        self.policy.end_episode(world, target)
    }

    fn releases(&self) -> &[ReleaseRecord] {
        &self.releases
    }

    fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    fn protocol_trace(&self) -> &[String] {
        self.auditor.trace()
    }
}

impl PlatoonController<'_> {
    fn close_platoon(&mut self, now: f64, done: DoneMsg) -> Result<(), Error> {
        let members = self.members.remove(&done.platoon).unwrap_or_default();
        for vehicle in members {
            self.auditor.record(now, &Message::Done { vehicle, msg: done })?;
        }
        Ok(())
    }
}

/// Controller selection shared by the harness and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Proposed,
    Webster,
    Fcfs,
    Fixed3,
    Fixed6,
    Fixed9,
    Fixed12,
    Random,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 8] = [
        ControllerKind::Webster,
        ControllerKind::Fcfs,
        ControllerKind::Fixed3,
        ControllerKind::Fixed6,
        ControllerKind::Fixed9,
        ControllerKind::Fixed12,
        ControllerKind::Random,
        ControllerKind::Proposed,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ControllerKind::Proposed => "proposed",
            ControllerKind::Webster => "webster",
            ControllerKind::Fcfs => "fcfs",
            ControllerKind::Fixed3 => "fixed3",
            ControllerKind::Fixed6 => "fixed6",
            ControllerKind::Fixed9 => "fixed9",
            ControllerKind::Fixed12 => "fixed12",
            ControllerKind::Random => "random",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Proposed => "Proposed model",
            ControllerKind::Webster => "Webster signal",
            ControllerKind::Fcfs => "Individual FCFS",
            ControllerKind::Fixed3 => "Fixed platoon 3",
            ControllerKind::Fixed6 => "Fixed platoon 6",
            ControllerKind::Fixed9 => "Fixed platoon 9",
            ControllerKind::Fixed12 => "Fixed platoon 12",
            ControllerKind::Random => "Random companions",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.key() == key)
    }

    pub fn fixed_size(self) -> Option<usize> {
        match self {
            ControllerKind::Fixed3 => Some(3),
            ControllerKind::Fixed6 => Some(6),
            ControllerKind::Fixed9 => Some(9),
            ControllerKind::Fixed12 => Some(12),
            _ => None,
        }
    }

    /// Whether the controller sizes platoons with the Q-network.
    pub fn uses_network(self) -> bool {
        matches!(self, ControllerKind::Proposed | ControllerKind::Random)
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// Lane codes in canonical order, for labelling grids and tables.
pub fn lane_names() -> Vec<String> {
    Movement::all().iter().map(|m| m.code()).collect()
}
