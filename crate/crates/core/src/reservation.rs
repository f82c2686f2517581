//! Level-one intersection management: request bookkeeping, FCFS target
//! selection, nonconflicting companion lanes and zone reservations.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ProtocolError, SimulationFault};
use crate::geometry::{ConflictMatrix, LaneId, Movement, MovementSet, MOVEMENT_COUNT};
use crate::platooning::PlatoonId;
use crate::simcore::VehicleId;

/// Sent by a vehicle when it enters the control zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestMsg {
    pub vehicle: VehicleId,
    pub position: f64,
    pub speed: f64,
    pub max_accel: f64,
    pub movement: Movement,
    pub timestamp: f64,
}

/// Intersection manager to platoon leader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrantMsg {
    pub leader: VehicleId,
    pub platoon: PlatoonId,
    pub departure_time: f64,
    pub platoon_size: usize,
    pub desired_speed: f64,
}

/// Platoon leader to follower.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinMsg {
    pub join: bool,
    pub head_spacing: f64,
    pub follow_speed: f64,
}

/// Platoon leader to intersection manager once the whole platoon is through.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoneMsg {
    pub leader: VehicleId,
    pub platoon: PlatoonId,
    pub passed: bool,
}

/// Pending requests, one FIFO per lane. The global order is by timestamp with
/// the canonical lane index breaking ties.
#[derive(Clone, Debug, Default)]
pub struct RequestQueue {
    lanes: Vec<VecDeque<RequestMsg>>,
    registered: BTreeSet<VehicleId>,
}

impl RequestQueue {
    pub fn new() -> Self {
        Self { lanes: vec![VecDeque::new(); MOVEMENT_COUNT], registered: BTreeSet::new() }
    }

    pub fn register_request(&mut self, msg: RequestMsg) -> Result<(), ProtocolError> {
        if !self.registered.insert(msg.vehicle) {
            return Err(ProtocolError::DuplicateRequest(msg.vehicle));
        }
        let lane = &mut self.lanes[msg.movement.index()];
        let at = lane.partition_point(|r| r.timestamp <= msg.timestamp);
        lane.insert(at, msg);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.registered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registered.is_empty()
    }

    pub fn lane(&self, lane: LaneId) -> &VecDeque<RequestMsg> {
        &self.lanes[lane.index()]
    }

    pub fn contains(&self, v: VehicleId) -> bool {
        self.registered.contains(&v)
    }

    /// Lane holding the globally earliest pending request.
    pub fn identify_target_lane(&self) -> Result<LaneId, ProtocolError> {
        self.lanes
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.front().map(|r| (r.timestamp, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, i)| LaneId(i as u8))
            .ok_or(ProtocolError::NoPendingDemand)
    }

    /// Removes and returns the first `n` requests of a lane.
    pub fn take_front(&mut self, lane: LaneId, n: usize) -> Vec<RequestMsg> {
        let q = &mut self.lanes[lane.index()];
        let taken: Vec<RequestMsg> = q.drain(..n.min(q.len())).collect();
        for r in &taken {
            self.registered.remove(&r.vehicle);
        }
        taken
    }
}

/// How companion lanes are picked among the compatible candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompanionRule {
    /// Largest accumulated waiting time first.
    MaxWait,
    /// Uniformly at random.
    Random,
}

/// Greedily adds companion lanes that are compatible with the target and with
/// everything chosen so far. `lane_wait[i]` is the summed waiting time of the
/// pending vehicles of lane `i`, `None` when the lane has none.
pub fn select_nonconflicting_lanes<R: Rng + ?Sized>(
    target: LaneId,
    lane_wait: &[Option<f64>; MOVEMENT_COUNT],
    cm: &ConflictMatrix,
    rule: CompanionRule,
    rng: &mut R,
) -> Vec<LaneId> {
    let mut allowed = !cm.row(target.movement()) & !MovementSet::single(target.movement());
    let mut chosen = Vec::new();
    loop {
        let candidates: Vec<usize> = allowed.iter().map(Movement::index).filter(|&i| lane_wait[i].is_some()).collect();
        if candidates.is_empty() {
            return chosen;
        }
        let pick = match rule {
            CompanionRule::MaxWait => {
                // Strictly greater keeps the canonically first lane on ties.
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    if lane_wait[i].unwrap() > lane_wait[best].unwrap() {
                        best = i;
                    }
                }
                best
            }
            CompanionRule::Random => candidates[rng.random_range(0..candidates.len())],
        };
        let m = Movement::from_index(pick).unwrap();
        chosen.push(m.entry_lane());
        allowed = allowed & !cm.row(m) & !MovementSet::single(m);
    }
}

/// Time for a platoon of length `platoon_length` moving at `speed` to clear a
/// path of `path_length`, from the leader's front at the stop line to the
/// last rear leaving the zone.
pub fn crossing_time(path_length: f64, platoon_length: f64, speed: f64) -> f64 {
    (path_length + platoon_length) / speed
}

/// One platoon to be released, front vehicle first.
#[derive(Clone, Debug)]
pub struct Release {
    pub platoon: PlatoonId,
    pub movement: Movement,
    pub members: Vec<VehicleId>,
    pub desired_speed: f64,
}

#[derive(Clone, Debug)]
struct ActivePlatoon {
    leader: VehicleId,
    remaining: BTreeSet<VehicleId>,
}

/// Exclusive reservation of the intersection zone: one release at a time,
/// held until every released platoon reports done.
#[derive(Clone, Debug, Default)]
pub struct ZoneReservation {
    active: BTreeMap<PlatoonId, ActivePlatoon>,
    movements: MovementSet,
    since: Option<f64>,
    member_of: HashMap<VehicleId, PlatoonId>,
}

impl ZoneReservation {
    pub fn is_idle(&self) -> bool {
        self.active.is_empty()
    }

    pub fn reserved_movements(&self) -> MovementSet {
        self.movements
    }

    pub fn reserved_since(&self) -> Option<f64> {
        self.since
    }

    /// Grants every platoon of `releases` departure at `now`.
    pub fn schedule_release(
        &mut self,
        releases: &[Release],
        cm: &ConflictMatrix,
        now: f64,
    ) -> Result<Vec<GrantMsg>, SimulationFault> {
        if !self.is_idle() {
            return Err(SimulationFault::ZoneBusy(now));
        }
        let mut set = MovementSet::EMPTY;
        for r in releases {
            if set.contains(r.movement) {
                return Err(SimulationFault::ConflictingRelease(format!("{} released twice", r.movement)));
            }
            set.insert(r.movement);
        }
        if !cm.is_compatible_set(set) {
            return Err(SimulationFault::ConflictingRelease(set.to_string()));
        }
        let mut grants = Vec::with_capacity(releases.len());
        for r in releases {
            let Some(&leader) = r.members.first() else {
                return Err(SimulationFault::Platoon(crate::error::PlatoonError::Empty));
            };
            for &v in &r.members {
                self.member_of.insert(v, r.platoon);
            }
            self.active.insert(r.platoon, ActivePlatoon { leader, remaining: r.members.iter().copied().collect() });
            grants.push(GrantMsg {
                leader,
                platoon: r.platoon,
                departure_time: now,
                platoon_size: r.members.len(),
                desired_speed: r.desired_speed,
            });
        }
        self.movements = set;
        self.since = Some(now);
        Ok(grants)
    }

    /// Records that a vehicle cleared the zone; returns the done message when
    /// it was the last of its platoon.
    pub fn vehicle_passed(&mut self, v: VehicleId) -> Option<DoneMsg> {
        let pid = self.member_of.remove(&v)?;
        let p = self.active.get_mut(&pid)?;
        p.remaining.remove(&v);
        if !p.remaining.is_empty() {
            return None;
        }
        let leader = p.leader;
        self.active.remove(&pid);
        if self.active.is_empty() {
            self.movements = MovementSet::EMPTY;
            self.since = None;
        }
        Some(DoneMsg { leader, platoon: pid, passed: true })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ProtocolState {
    Requested,
    Granted,
    Joined,
    Done,
}

impl ProtocolState {
    fn name(self) -> &'static str {
        match self {
            ProtocolState::Requested => "requested",
            ProtocolState::Granted => "granted",
            ProtocolState::Joined => "joined",
            ProtocolState::Done => "done",
        }
    }
}

/// One message as it appears in the trace log.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Request(RequestMsg),
    Grant(GrantMsg),
    Join { follower: VehicleId, msg: JoinMsg },
    Done { vehicle: VehicleId, msg: DoneMsg },
}

impl Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::Request(_) => "request",
            Message::Grant(_) => "grant",
            Message::Join { .. } => "join",
            Message::Done { .. } => "done",
        }
    }

    fn vehicle(&self) -> VehicleId {
        match self {
            Message::Request(m) => m.vehicle,
            Message::Grant(m) => m.leader,
            Message::Join { follower, .. } => *follower,
            Message::Done { vehicle, .. } => *vehicle,
        }
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Request(m) => {
                write!(f, "{} s={:.3} v={:.3} a={} {}", m.movement, m.position, m.speed, m.max_accel, m.timestamp)
            }
            Message::Grant(m) => write!(
                f,
                "platoon={} depart={:.1} size={} speed={:.3}",
                m.platoon.0, m.departure_time, m.platoon_size, m.desired_speed
            ),
            Message::Join { msg, .. } => {
                write!(f, "join={} spacing={} speed={:.3}", msg.join, msg.head_spacing, msg.follow_speed)
            }
            Message::Done { msg, .. } => write!(f, "platoon={} passed={}", msg.platoon.0, msg.passed),
        }
    }
}

/// Per-vehicle protocol state machine: request, then grant (leaders) or join
/// (followers), then done. Optionally keeps a trace of every message.
#[derive(Clone, Debug, Default)]
pub struct ProtocolAuditor {
    states: HashMap<VehicleId, ProtocolState>,
    trace: Option<Vec<String>>,
    messages: u64,
}

impl ProtocolAuditor {
    pub fn new(keep_trace: bool) -> Self {
        Self { states: HashMap::new(), trace: keep_trace.then(Vec::new), messages: 0 }
    }

    pub fn trace(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn messages(&self) -> u64 {
        self.messages
    }

    /// Vehicles that have requested but not yet finished.
    pub fn open(&self) -> usize {
        self.states.values().filter(|s| **s != ProtocolState::Done).count()
    }

    pub fn record(&mut self, time: f64, msg: &Message) -> Result<(), ProtocolError> {
        let vehicle = msg.vehicle();
        let current = self.states.get(&vehicle).copied();
        let next = match (msg, current) {
            (Message::Request(_), None) => ProtocolState::Requested,
            (Message::Request(_), Some(_)) => return Err(ProtocolError::DuplicateRequest(vehicle)),
            (Message::Grant(_), Some(ProtocolState::Requested)) => ProtocolState::Granted,
            (Message::Join { .. }, Some(ProtocolState::Requested)) => ProtocolState::Joined,
            (Message::Done { .. }, Some(ProtocolState::Granted | ProtocolState::Joined)) => ProtocolState::Done,
            (m, s) => {
                return Err(ProtocolError::OutOfSequence {
                    vehicle,
                    message: m.kind(),
                    state: s.map_or("none", ProtocolState::name),
                })
            }
        };
        self.states.insert(vehicle, next);
        self.messages += 1;
        if let Some(t) = &mut self.trace {
            t.push(format!("{time:.1},{},{vehicle},{msg}", msg.kind()));
        }
        Ok(())
    }
}
