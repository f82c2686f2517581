//! Fixed-step vehicle dynamics on the twelve dedicated lanes.
//!
//! Each vehicle lives on the route of its movement: a straight approach, the
//! pre-defined path through the intersection zone and a straight exit leg.
//! Longitudinal positions are measured at the front bumper, `0` at the stop
//! line, negative upstream.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimulationFault};
use crate::geometry::{Intersection, LaneId, Movement, Point, Turn, MOVEMENT_COUNT};
use crate::metrics::TripRecord;
use crate::platooning::PlatoonId;
use crate::seeding::{stream_rng, SimRng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    pub dt: f64,
    pub max_speed: f64,
    /// Symmetric acceleration bound.
    pub max_accel: f64,
    pub vehicle_length: f64,
    /// Minimum distance headway outside platoons.
    pub min_headway: f64,
    /// Desired distance headway inside platoons.
    pub platoon_headway: f64,
    /// Platoon regulator gain on relative speed (1/s).
    pub speed_gain: f64,
    /// Platoon regulator gain on gap error (1/s^2).
    pub gap_gain: f64,
    /// Below this speed, time upstream of the stop line counts as waiting.
    pub wait_speed: f64,
    /// Lateral acceleration bound that caps turning speeds.
    pub lateral_accel: f64,
    /// Deceleration used when released vehicles slow down for a turn.
    pub approach_decel: f64,
    /// Vehicles retire this far past the end of their intersection path.
    pub exit_distance: f64,
    /// Held vehicles stop this far short of the stop line.
    pub stop_buffer: f64,
    /// Followers never close below this gap, whatever the regulator asks.
    pub emergency_headway: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_speed: 20.0,
            max_accel: 5.0,
            vehicle_length: 5.0,
            min_headway: 1.5,
            platoon_headway: 1.0,
            speed_gain: 1.0,
            gap_gain: 0.5,
            wait_speed: 0.1,
            lateral_accel: 2.5,
            approach_decel: 2.5,
            exit_distance: 50.0,
            stop_buffer: 0.3,
            emergency_headway: 0.5,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, value) in [
            ("dt", self.dt),
            ("max_speed", self.max_speed),
            ("max_accel", self.max_accel),
            ("vehicle_length", self.vehicle_length),
            ("min_headway", self.min_headway),
            ("platoon_headway", self.platoon_headway),
            ("speed_gain", self.speed_gain),
            ("gap_gain", self.gap_gain),
            ("wait_speed", self.wait_speed),
            ("lateral_accel", self.lateral_accel),
            ("approach_decel", self.approach_decel),
            ("exit_distance", self.exit_distance),
            ("emergency_headway", self.emergency_headway),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::NonPositive { field, value });
            }
        }
        if self.approach_decel > self.max_accel {
            return Err(ConfigError::Invalid("approach_decel exceeds max_accel".into()));
        }
        if self.emergency_headway >= self.platoon_headway {
            return Err(ConfigError::Invalid("emergency_headway must be below platoon_headway".into()));
        }
        Ok(())
    }
}

/// Largest speed from which a follower can still stop behind a leader that
/// brakes at the same bound, keeping at least the minimum headway.
pub fn safe_speed(gap: f64, v_leader: f64, params: &DynamicsParams) -> f64 {
    safe_speed_with_headway(gap, v_leader, params.max_accel, params.min_headway)
}

fn safe_speed_with_headway(gap: f64, v_leader: f64, decel: f64, headway: f64) -> f64 {
    (v_leader * v_leader + 2.0 * decel * (gap - headway)).max(0.0).sqrt()
}

/// Polynomial fuel-rate surrogate in mL/s:
/// `b0 + b1 v + b2 v^2 + b3 v^3 + b4 a v + b5 a^2 v`, clamped at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuelModel {
    pub coefficients: [f64; 6],
}

impl Default for FuelModel {
    /// Idle 0.8 L/h, 6 L/100 km at a steady 50 km/h (13.9 m/s).
    fn default() -> Self {
        Self { coefficients: [0.222_222, 0.025, 0.0012, 1.208e-5, 0.15, 0.005] }
    }
}

pub fn fuel_rate(v: f64, a: f64, model: &FuelModel) -> f64 {
    let [b0, b1, b2, b3, b4, b5] = model.coefficients;
    (b0 + b1 * v + b2 * v * v + b3 * v * v * v + b4 * a * v + b5 * a * a * v).max(0.0)
}

/// Arrival rate per movement in vehicles per hour.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub rates: [f64; MOVEMENT_COUNT],
}

impl FlowSpec {
    pub fn zero() -> Self {
        Self { rates: [0.0; MOVEMENT_COUNT] }
    }

    /// Unevenly distributed demand of the reference experiment.
    pub fn reference() -> Self {
        let mut f = Self::zero();
        for (code, rate) in [
            ("NS", 500.0),
            ("NE", 300.0),
            ("NW", 200.0),
            ("SN", 400.0),
            ("SE", 400.0),
            ("SW", 200.0),
            ("EN", 400.0),
            ("ES", 500.0),
            ("EW", 700.0),
            ("WN", 300.0),
            ("WS", 200.0),
            ("WE", 500.0),
        ] {
            f.rates[Movement::from_code(code).unwrap().index()] = rate;
        }
        f
    }

    pub fn rate(&self, m: Movement) -> f64 {
        self.rates[m.index()]
    }

    pub fn total(&self) -> f64 {
        self.rates.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { rates: self.rates.map(|r| r * factor) }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for m in Movement::all() {
            let r = self.rate(m);
            if !(r.is_finite() && r >= 0.0) {
                return Err(ConfigError::Invalid(format!("flow rate for {m} must be >= 0, got {r}")));
            }
        }
        Ok(())
    }
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self::reference()
    }
}

impl Serialize for FlowSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<String, f64> = Movement::all().iter().map(|m| (m.code(), self.rate(*m))).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FlowSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        let mut f = FlowSpec::zero();
        for (code, rate) in map {
            let m = Movement::from_code(&code)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown movement code {code}")))?;
            f.rates[m.index()] = rate;
        }
        Ok(f)
    }
}

/// Simulation time kept as an integer step count so `now` never drifts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimClock {
    pub step: u64,
    pub dt: f64,
    pub horizon: f64,
}

impl SimClock {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self { step: 0, dt, horizon }
    }

    pub fn now(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn total_steps(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }

    pub fn finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn tick(&mut self) {
        self.step += 1;
    }
}

/// Independent Poisson arrival streams, one per movement.
#[derive(Clone, Debug)]
pub struct ArrivalProcess {
    streams: Vec<Option<(SimRng, Exp<f64>, f64)>>,
}

impl ArrivalProcess {
    pub fn new(flows: &FlowSpec, seed: u64) -> Self {
        let streams = Movement::all()
            .iter()
            .map(|&m| {
                let per_second = flows.rate(m) / 3600.0;
                (per_second > 0.0).then(|| {
                    let mut rng = stream_rng(seed, Stream::Arrivals, &[m.index() as u64]);
                    let exp = Exp::new(per_second).expect("positive rate");
                    let first = exp.sample(&mut rng);
                    (rng, exp, first)
                })
            })
            .collect();
        Self { streams }
    }

    /// All arrivals with time `<= until`, ordered by movement then time.
    pub fn poll(&mut self, until: f64) -> Vec<(Movement, f64)> {
        let mut out = Vec::new();
        for (i, stream) in self.streams.iter_mut().enumerate() {
            if let Some((rng, exp, next)) = stream {
                while *next <= until {
                    out.push((Movement::from_index(i).unwrap(), *next));
                    *next += exp.sample(rng);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlatoonRole {
    Free,
    Leader,
    Follower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatoonTag {
    pub id: PlatoonId,
    pub size: usize,
    /// Released from the target lane (as opposed to a companion lane).
    pub target: bool,
}

/// Exact state trajectory committed to by a reservation: `states[k]` is the
/// (position, speed) at the end of step `first_step + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedPlan {
    pub first_step: u64,
    pub states: Vec<(f64, f64)>,
}

impl SpeedPlan {
    pub fn state_after(&self, step: u64) -> Option<(f64, f64)> {
        step.checked_sub(self.first_step).and_then(|k| self.states.get(k as usize)).copied()
    }

    pub fn last_step(&self) -> u64 {
        self.first_step + self.states.len() as u64 - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Clearance {
    /// Must stop at the stop line.
    Hold,
    /// May cross, at no more than `desired_speed` on the intersection path.
    Released { desired_speed: f64 },
    /// Follows a fixed plan exactly.
    Planned(Arc<SpeedPlan>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub movement: Movement,
    pub position: f64,
    pub speed: f64,
    pub acceleration: f64,
    pub length: f64,
    pub width: f64,
    pub max_accel: f64,
    /// Control-zone entry time.
    pub entry_time: f64,
    pub accumulated_wait: f64,
    pub role: PlatoonRole,
    pub fuel_used: f64,
    pub clearance: Clearance,
    pub platoon: Option<PlatoonTag>,
    /// The rear has left the intersection zone.
    pub passed: bool,
}

impl Vehicle {
    pub fn rear(&self) -> f64 {
        self.position - self.length
    }

    pub fn lane(&self) -> LaneId {
        self.movement.entry_lane()
    }

    pub fn is_upstream(&self) -> bool {
        self.position <= 0.0
    }

    pub fn is_released(&self) -> bool {
        !matches!(self.clearance, Clearance::Hold)
    }
}

/// What happened during one call to [`World::advance`].
#[derive(Clone, Debug, Default)]
pub struct StepEvents {
    /// Vehicles whose rear cleared the intersection zone this step.
    pub passed: Vec<VehicleId>,
    pub retired: Vec<TripRecord>,
}

/// State of the predecessor after it has been advanced this step.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Ahead {
    pub rear: f64,
    pub speed: f64,
}

#[derive(Clone, Debug)]
pub struct World {
    pub geometry: Arc<Intersection>,
    pub params: DynamicsParams,
    pub fuel: FuelModel,
    pub clock: SimClock,
    vehicle_width: f64,
    lanes: Vec<VecDeque<Vehicle>>,
    backlog: Vec<VecDeque<f64>>,
    arrivals: ArrivalProcess,
    arrival_log: Vec<(Movement, f64)>,
    next_id: u64,
    spawned: u64,
    max_backlog: usize,
}

impl World {
    pub fn new(
        geometry: Arc<Intersection>,
        params: DynamicsParams,
        fuel: FuelModel,
        flows: &FlowSpec,
        seed: u64,
        horizon: f64,
    ) -> Self {
        let vehicle_width = geometry.layout.params().vehicle_width;
        Self {
            clock: SimClock::new(params.dt, horizon),
            vehicle_width,
            lanes: vec![VecDeque::new(); MOVEMENT_COUNT],
            backlog: vec![VecDeque::new(); MOVEMENT_COUNT],
            arrivals: ArrivalProcess::new(flows, seed),
            arrival_log: Vec::new(),
            next_id: 0,
            spawned: 0,
            max_backlog: 0,
            geometry,
            params,
            fuel,
        }
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn lane(&self, lane: LaneId) -> &VecDeque<Vehicle> {
        &self.lanes[lane.index()]
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.lanes.iter().flatten()
    }

    pub fn vehicle_count(&self) -> usize {
        self.lanes.iter().map(VecDeque::len).sum()
    }

    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    /// Scheduled arrivals so far, including those still waiting to spawn.
    pub fn arrival_log(&self) -> &[(Movement, f64)] {
        &self.arrival_log
    }

    pub fn backlog_len(&self) -> usize {
        self.backlog.iter().map(VecDeque::len).sum()
    }

    pub fn max_backlog(&self) -> usize {
        self.max_backlog
    }

    pub fn path_length(&self, m: Movement) -> f64 {
        self.geometry.trajectory(m).total_length
    }

    /// Crossing speed for a movement: the speed limit, capped on turns by the
    /// lateral acceleration bound.
    pub fn desired_speed(&self, m: Movement) -> f64 {
        match m.turn {
            Turn::Straight => self.params.max_speed,
            _ => {
                let r = self.geometry.trajectory(m).curvature_radius();
                (self.params.lateral_accel * r).sqrt().min(self.params.max_speed)
            }
        }
    }

    fn locate(&self, id: VehicleId) -> Option<(usize, usize)> {
        // Ids are assigned in spawn order and lanes are FIFO, so each lane is
        // sorted by id.
        self.lanes.iter().enumerate().find_map(|(l, lane)| lane.binary_search_by_key(&id, |v| v.id).ok().map(|i| (l, i)))
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.locate(id).map(|(l, i)| &self.lanes[l][i])
    }

    pub fn vehicle_mut(&mut self, id: VehicleId) -> Result<&mut Vehicle, SimulationFault> {
        let (l, i) = self.locate(id).ok_or(SimulationFault::UnknownVehicle(id))?;
        Ok(&mut self.lanes[l][i])
    }

    /// The vehicle directly ahead of `id` on its lane.
    pub fn predecessor(&self, id: VehicleId) -> Option<&Vehicle> {
        let (l, i) = self.locate(id)?;
        i.checked_sub(1).map(|j| &self.lanes[l][j])
    }

    /// Vehicles of a lane still held at the stop line, front first.
    pub fn pending(&self, lane: LaneId) -> impl Iterator<Item = &Vehicle> {
        self.lanes[lane.index()].iter().filter(|v| !v.is_released())
    }

    pub fn add_vehicle_for_test(&mut self, movement: Movement, position: f64, speed: f64) -> VehicleId {
        let id = self.new_vehicle(movement, position, speed);
        id
    }

    fn new_vehicle(&mut self, movement: Movement, position: f64, speed: f64) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        self.spawned += 1;
        let v = Vehicle {
            id,
            movement,
            position,
            speed,
            acceleration: 0.0,
            length: self.params.vehicle_length,
            width: self.vehicle_width,
            max_accel: self.params.max_accel,
            entry_time: self.now(),
            accumulated_wait: 0.0,
            role: PlatoonRole::Free,
            fuel_used: 0.0,
            clearance: Clearance::Hold,
            platoon: None,
            passed: false,
        };
        let lane = &mut self.lanes[movement.index()];
        debug_assert!(lane.back().is_none_or(|b| b.position > position));
        lane.push_back(v);
        id
    }

    /// Admits arrivals due by now at the control-zone boundary. Arrivals that
    /// find the entry blocked wait in a per-lane backlog.
    pub fn spawn(&mut self) -> Vec<VehicleId> {
        let now = self.now();
        for (m, t) in self.arrivals.poll(now) {
            self.arrival_log.push((m, t));
            self.backlog[m.index()].push_back(t);
        }
        let entry = -self.geometry.layout.approach_length();
        let mut new = Vec::new();
        for m in Movement::all() {
            let idx = m.index();
            while !self.backlog[idx].is_empty() {
                let mut speed = self.params.max_speed;
                if let Some(last) = self.lanes[idx].back() {
                    let gap = last.rear() - entry;
                    if gap < self.params.min_headway {
                        break;
                    }
                    speed = speed.min(safe_speed(gap, last.speed, &self.params));
                }
                speed = speed.min(self.hold_cap(entry, 0.0));
                self.backlog[idx].pop_front();
                new.push(self.new_vehicle(m, entry, speed));
            }
        }
        self.max_backlog = self.max_backlog.max(self.backlog_len());
        new
    }

    /// Speed bound that lets a vehicle at `position` stop short of the line.
    fn hold_cap(&self, position: f64, travel: f64) -> f64 {
        let p = &self.params;
        let gap = -p.stop_buffer + p.min_headway - position - travel;
        safe_speed(gap, 0.0, p)
    }

    /// Whether a vehicle could still come to rest before the stop line.
    pub fn can_stop(&self, v: &Vehicle) -> bool {
        v.position < -self.params.stop_buffer && v.speed <= self.hold_cap(v.position, v.speed * self.params.dt) + 1e-9
    }

    /// Speed chosen by a vehicle outside platoon regulation.
    pub(crate) fn free_speed(&self, m: Movement, s: f64, v: f64, ahead: Option<Ahead>, release: Option<f64>) -> f64 {
        let p = &self.params;
        let dt = p.dt;
        let cand = (v + p.max_accel * dt).min(p.max_speed);
        let mut cap = cand;
        if let Some(a) = ahead {
            cap = cap.min(safe_speed(a.rear - s - cand * dt, a.speed, p));
        }
        match release {
            None => cap = cap.min(self.hold_cap(s, cand * dt)),
            Some(desired) => cap = cap.min(self.turn_cap(m, s, cand * dt, desired)),
        }
        cap.max(v - p.max_accel * dt).max(0.0)
    }

    fn turn_cap(&self, m: Movement, s: f64, travel: f64, desired: f64) -> f64 {
        if desired >= self.params.max_speed {
            return f64::INFINITY;
        }
        let path = self.path_length(m);
        if s + travel < 0.0 {
            let d = -(s + travel);
            (desired * desired + 2.0 * self.params.approach_decel * d).sqrt()
        } else if s <= path {
            desired
        } else {
            f64::INFINITY
        }
    }

    fn follower_speed(&self, m: Movement, veh: &Vehicle, pred_old: (f64, f64), pred_new: Ahead, pred_accel: f64, desired: f64) -> f64 {
        let p = &self.params;
        let dt = p.dt;
        let (pred_rear_old, pred_speed_old) = pred_old;
        let gap = pred_rear_old - veh.position;
        let cmd = pred_accel + p.speed_gain * (pred_speed_old - veh.speed) + p.gap_gain * (gap - p.platoon_headway);
        let cmd = cmd.clamp(-p.max_accel, p.max_accel);
        let mut v = (veh.speed + cmd * dt).clamp(0.0, p.max_speed);
        let emergency =
            safe_speed_with_headway(pred_new.rear - veh.position - v * dt, pred_new.speed, p.max_accel, p.emergency_headway);
        v = v.min(emergency).min(self.turn_cap(m, veh.position, v * dt, desired));
        v.max(veh.speed - p.max_accel * dt).max(0.0)
    }

    /// Advances every vehicle by one step, retires vehicles past the exit and
    /// checks for negative gaps.
    pub fn advance(&mut self) -> Result<StepEvents, SimulationFault> {
        let dt = self.params.dt;
        let next_step = self.clock.step + 1;
        let mut events = StepEvents::default();
        let mut lanes = std::mem::take(&mut self.lanes);
        for lane in lanes.iter_mut() {
            let mut prev: Option<(f64, f64, Ahead, f64)> = None; // (old rear, old speed, new state, accel)
            for veh in lane.iter_mut() {
                let m = veh.movement;
                let old = (veh.rear(), veh.speed);
                let ahead = prev.map(|p| p.2);
                let (new_s, new_v) = match &veh.clearance {
                    Clearance::Planned(plan) => match plan.state_after(next_step) {
                        Some(state) => state,
                        None => {
                            let desired = self.params.max_speed;
                            veh.clearance = Clearance::Released { desired_speed: desired };
                            let v = self.free_speed(m, veh.position, veh.speed, ahead, Some(desired));
                            (veh.position + v * dt, v)
                        }
                    },
                    Clearance::Hold => {
                        let v = self.free_speed(m, veh.position, veh.speed, ahead, None);
                        (veh.position + v * dt, v)
                    }
                    Clearance::Released { desired_speed } => {
                        let desired = *desired_speed;
                        let v = match (veh.role, prev) {
                            (PlatoonRole::Follower, Some((rear_old, speed_old, new, accel))) => {
                                self.follower_speed(m, veh, (rear_old, speed_old), new, accel, desired)
                            }
                            _ => self.free_speed(m, veh.position, veh.speed, ahead, Some(desired)),
                        };
                        (veh.position + v * dt, v)
                    }
                };
                let accel = (new_v - veh.speed) / dt;
                veh.acceleration = accel;
                veh.speed = new_v;
                veh.position = new_s;
                veh.fuel_used += fuel_rate(new_v, accel, &self.fuel) * dt;
                if new_v < self.params.wait_speed && new_s < 0.0 {
                    veh.accumulated_wait += dt;
                }
                if !veh.passed && veh.rear() >= self.geometry.trajectory(m).total_length {
                    veh.passed = true;
                    events.passed.push(veh.id);
                }
                prev = Some((old.0, old.1, Ahead { rear: veh.rear(), speed: new_v }, accel));
            }
        }
        self.lanes = lanes;
        self.clock.tick();
        let now = self.now();
        for lane in &self.lanes {
            for pair in lane.iter().collect::<Vec<_>>().windows(2) {
                let gap = pair[0].rear() - pair[1].position;
                if gap < 0.0 {
                    return Err(SimulationFault::NegativeGap { leader: pair[0].id, follower: pair[1].id, gap, time: now });
                }
            }
        }
        for m in Movement::all() {
            let retire_at = self.path_length(m) + self.params.exit_distance;
            while self.lanes[m.index()].front().is_some_and(|v| v.position >= retire_at) {
                let v = self.lanes[m.index()].pop_front().unwrap();
                events.retired.push(TripRecord::from_vehicle(&v, now));
            }
        }
        Ok(events)
    }

    /// Sample points along the part of the vehicle body inside the
    /// intersection zone, at the trajectory sampling resolution.
    pub fn body_samples_in_zone(&self, v: &Vehicle) -> Vec<Point> {
        self.body_samples(v.movement, v.position, v.length)
    }

    /// Same, for a body of `length` with its front at `position` on `m`.
    pub fn body_samples(&self, m: Movement, position: f64, length: f64) -> Vec<Point> {
        let path = self.path_length(m);
        let res = self.geometry.layout.params().sample_resolution;
        let n = (length / res).ceil() as usize;
        (0..=n)
            .map(|j| (position - j as f64 * res).max(position - length))
            .filter(|&s| (0.0..=path).contains(&s))
            .map(|s| self.geometry.route_point(m, s))
            .collect()
    }

    pub fn in_zone(&self, v: &Vehicle) -> bool {
        v.position > 0.0 && v.rear() < self.path_length(v.movement)
    }

    /// Longitudinal overlaps on a lane, and pairs of vehicles on conflicting
    /// paths that are inside the zone closer than the vehicle width.
    pub fn detect_collisions(&self) -> Vec<(VehicleId, VehicleId)> {
        let mut out = Vec::new();
        for lane in &self.lanes {
            for (a, b) in lane.iter().zip(lane.iter().skip(1)) {
                if a.rear() < b.position {
                    out.push((a.id, b.id));
                }
            }
        }
        let inside: Vec<(&Vehicle, Vec<Point>)> =
            self.vehicles().filter(|v| self.in_zone(v)).map(|v| (v, self.body_samples_in_zone(v))).collect();
        let limit_sq = self.vehicle_width * self.vehicle_width;
        for (i, (a, pa)) in inside.iter().enumerate() {
            for (b, pb) in &inside[i + 1..] {
                if !self.geometry.conflicts.conflicts(a.movement, b.movement) {
                    continue;
                }
                let close = pa.iter().any(|p| pb.iter().any(|q| (*p - *q).dot(*p - *q) < limit_sq));
                if close {
                    out.push((a.id.min(b.id), a.id.max(b.id)));
                }
            }
        }
        out
    }
}
