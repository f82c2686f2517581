//! Comparison controllers: fixed-time signals and individual tile-based FCFS
//! reservations. The fixed-size and random-companion variants are platoon
//! controllers configured through [`crate::control`].

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::Controller;
use crate::error::{ConfigError, Error, SimulationFault};
use crate::geometry::{LaneId, Movement, MovementSet, Point};
use crate::simcore::{Ahead, Clearance, FlowSpec, SpeedPlan, StepEvents, VehicleId, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalParams {
    /// Saturation flow per lane (veh/h).
    pub saturation_flow: f64,
    /// Lost time per phase (s), amber and all-red together.
    pub lost_time_per_phase: f64,
    pub min_cycle: f64,
    pub max_cycle: f64,
    /// Above this critical flow ratio sum the cycle is set to `max_cycle`.
    pub saturation_threshold: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self { saturation_flow: 1800.0, lost_time_per_phase: 4.0, min_cycle: 30.0, max_cycle: 120.0, saturation_threshold: 0.95 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalPlan {
    pub phases: Vec<MovementSet>,
    pub greens: Vec<f64>,
    pub lost_time_per_phase: f64,
    pub cycle: f64,
    pub flow_ratio_sum: f64,
    /// The demand exceeded the saturation threshold and the cycle was capped.
    pub saturated: bool,
}

impl SignalPlan {
    pub fn total_lost_time(&self) -> f64 {
        self.lost_time_per_phase * self.phases.len() as f64
    }
}

fn set(codes: &[&str]) -> MovementSet {
    let mut s = MovementSet::EMPTY;
    for c in codes {
        s.insert(Movement::from_code(c).expect("valid code"));
    }
    s
}

/// North-south straight and right, north-south left, east-west straight and
/// right, east-west left.
pub fn standard_phases() -> Vec<MovementSet> {
    vec![set(&["NS", "NW", "SN", "SE"]), set(&["NE", "SW"]), set(&["EW", "EN", "WE", "WS"]), set(&["ES", "WN"])]
}

/// Webster timing from critical flow ratios `y_i` (one per phase).
pub fn webster_from_ratios(ratios: &[f64], phases: Vec<MovementSet>, p: &SignalParams) -> SignalPlan {
    let lost = p.lost_time_per_phase * ratios.len() as f64;
    let y: f64 = ratios.iter().sum();
    let saturated = y >= p.saturation_threshold;
    let cycle = if saturated { p.max_cycle } else { ((1.5 * lost + 5.0) / (1.0 - y)).clamp(p.min_cycle, p.max_cycle) };
    let effective = cycle - lost;
    let greens = if y > 0.0 {
        ratios.iter().map(|r| r / y * effective).collect()
    } else {
        vec![effective / ratios.len() as f64; ratios.len()]
    };
    SignalPlan { phases, greens, lost_time_per_phase: p.lost_time_per_phase, cycle, flow_ratio_sum: y, saturated }
}

pub fn webster_plan(flows: &FlowSpec, p: &SignalParams) -> Result<SignalPlan, ConfigError> {
    if !(p.saturation_flow > 0.0) {
        return Err(ConfigError::NonPositive { field: "saturation_flow", value: p.saturation_flow });
    }
    if !(p.min_cycle > 0.0 && p.min_cycle <= p.max_cycle) {
        return Err(ConfigError::Invalid("cycle clamps must satisfy 0 < min <= max".into()));
    }
    let phases = standard_phases();
    if p.lost_time_per_phase * phases.len() as f64 >= p.min_cycle {
        return Err(ConfigError::Invalid("lost time leaves no green within the minimum cycle".into()));
    }
    let ratios: Vec<f64> =
        phases.iter().map(|ph| ph.iter().map(|m| flows.rate(m)).fold(0.0, f64::max) / p.saturation_flow).collect();
    Ok(webster_from_ratios(&ratios, phases, p))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum SignalState {
    Green { phase: usize, until: f64 },
    /// Lost time before `next` turns green; extended while a committed
    /// vehicle that conflicts with `next` is still crossing.
    Clearing { next: usize, until: f64 },
}

/// Fixed-time signal cycling through the phases round robin.
pub struct SignalController {
    plan: SignalPlan,
    state: SignalState,
    extensions: f64,
}

impl SignalController {
    pub fn new(plan: SignalPlan) -> Self {
        let until = plan.greens[0];
        Self { plan, state: SignalState::Green { phase: 0, until }, extensions: 0.0 }
    }

    pub fn plan(&self) -> &SignalPlan {
        &self.plan
    }

    /// Total time the interlock added to the lost time.
    pub fn extensions(&self) -> f64 {
        self.extensions
    }

    fn phase_lanes(&self, phase: usize) -> impl Iterator<Item = LaneId> {
        self.plan.phases[phase].iter().map(Movement::entry_lane)
    }

    /// Held vehicles that can still stop go back to hold, and so does anyone
    /// queued behind them.
    fn end_green(&self, world: &mut World, phase: usize) -> Result<(), Error> {
        for lane in self.phase_lanes(phase).collect::<Vec<_>>() {
            let ids: Vec<VehicleId> = world.lane(lane).iter().filter(|v| !v.passed && v.position <= 0.0).map(|v| v.id).collect();
            let mut stopping = false;
            for id in ids {
                let can_stop = world.can_stop(world.vehicle(id).expect("listed"));
                stopping |= can_stop;
                if stopping {
                    world.vehicle_mut(id)?.clearance = Clearance::Hold;
                }
            }
        }
        Ok(())
    }

    fn conflicting_traffic(&self, world: &World, next: usize) -> bool {
        let cm = &world.geometry.conflicts;
        let movements = self.plan.phases[next];
        world.vehicles().any(|v| {
            v.is_released() && !v.passed && movements.iter().any(|m| cm.conflicts(m, v.movement))
        })
    }
}

impl Controller for SignalController {
    fn on_spawn(&mut self, _world: &mut World, _ids: &[VehicleId]) -> Result<(), Error> {
        Ok(())
    }

    fn before_step(&mut self, world: &mut World) -> Result<(), Error> {
        let now = world.now();
        let n = self.plan.phases.len();
        loop {
            match self.state {
                SignalState::Green { phase, until } if now >= until - 1e-9 => {
                    self.end_green(world, phase)?;
                    self.state = SignalState::Clearing { next: (phase + 1) % n, until: until + self.plan.lost_time_per_phase };
                }
                SignalState::Clearing { next, until } if now >= until - 1e-9 => {
                    if self.conflicting_traffic(world, next) {
                        self.extensions += world.params.dt;
                        break;
                    }
                    self.state = SignalState::Green { phase: next, until: now + self.plan.greens[next] };
                }
                _ => break,
            }
        }
        if let SignalState::Green { phase, .. } = self.state {
            for lane in self.phase_lanes(phase).collect::<Vec<_>>() {
                let desired = world.desired_speed(lane.movement());
                let ids: Vec<VehicleId> = world.pending(lane).map(|v| v.id).collect();
                for id in ids {
                    world.vehicle_mut(id)?.clearance = Clearance::Released { desired_speed: desired };
                }
            }
        }
        Ok(())
    }

    fn after_step(&mut self, _world: &mut World, _events: &StepEvents) -> Result<(), Error> {
        Ok(())
    }

    fn audit(&self, world: &World) -> Result<(), SimulationFault> {
        let cm = &world.geometry.conflicts;
        let inside: Vec<_> = world.vehicles().filter(|v| world.in_zone(v)).collect();
        for (i, a) in inside.iter().enumerate() {
            for b in &inside[i + 1..] {
                if cm.conflicts(a.movement, b.movement) {
                    return Err(SimulationFault::ConflictingRelease(format!(
                        "{} ({}) and {} ({}) share the zone",
                        a.id, a.movement, b.id, b.movement
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileParams {
    /// Vehicles request a reservation once their front is this close to the
    /// stop line.
    pub request_horizon: f64,
}

impl Default for TileParams {
    fn default() -> Self {
        Self { request_horizon: 60.0 }
    }
}

/// Space-time reservation table over square cells of the intersection zone.
#[derive(Clone, Debug)]
pub struct TileGrid {
    cells_per_side: usize,
    cell: f64,
    half_side: f64,
    claims: BTreeMap<u64, Vec<Option<(VehicleId, LaneId)>>>,
    claimed: u64,
}

impl TileGrid {
    pub fn new(side: f64, cell: f64) -> Self {
        let cells_per_side = (side / cell).round() as usize;
        Self { cells_per_side, cell, half_side: side / 2.0, claims: BTreeMap::new(), claimed: 0 }
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    /// Number of (cell, step) claims granted so far.
    pub fn claimed(&self) -> u64 {
        self.claimed
    }

    fn axis(&self, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
        let n = self.cells_per_side as f64;
        let a = ((lo + self.half_side) / self.cell).floor().clamp(0.0, n - 1.0) as usize;
        let b = ((hi + self.half_side) / self.cell).floor().clamp(0.0, n - 1.0) as usize;
        a..=b
    }

    /// Cells touched by an axis-aligned square of half side `half` around
    /// each point.
    pub fn footprint(&self, points: &[Point], half: f64, out: &mut Vec<usize>) {
        out.clear();
        for p in points {
            for i in self.axis(p.x - half, p.x + half) {
                for j in self.axis(p.y - half, p.y + half) {
                    out.push(j * self.cells_per_side + i);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }

    /// Whether another lane holds any of `cells` at `step`.
    pub fn is_free(&self, step: u64, cells: &[usize], lane: LaneId) -> bool {
        match self.claims.get(&step) {
            None => true,
            Some(row) => cells.iter().all(|&c| row[c].is_none_or(|(_, l)| l == lane)),
        }
    }

    /// Records a claim; two lanes claiming one tile is a fault.
    pub fn claim(&mut self, step: u64, cells: &[usize], vehicle: VehicleId, lane: LaneId) -> Result<(), SimulationFault> {
        let n = self.cell_count();
        let row = self.claims.entry(step).or_insert_with(|| vec![None; n]);
        for &c in cells {
            match row[c] {
                Some((first, l)) if l != lane => {
                    return Err(SimulationFault::TileClash { cell: c, step, first, second: vehicle });
                }
                Some(_) => {}
                None => row[c] = Some((vehicle, lane)),
            }
            self.claimed += 1;
        }
        Ok(())
    }

    /// Drops claims for steps before `step`.
    pub fn forget_before(&mut self, step: u64) {
        self.claims = self.claims.split_off(&step);
    }
}

/// Each vehicle reserves its own swept tiles, first come first served.
pub struct TileController {
    params: TileParams,
    grid: TileGrid,
    /// Pending requests: (request time, lane index, vehicle).
    requests: Vec<(f64, usize, VehicleId)>,
    granted: u64,
    scratch: Vec<usize>,
}

impl TileController {
    pub fn new(world: &World, params: TileParams) -> Self {
        let layout = &world.geometry.layout;
        Self {
            params,
            grid: TileGrid::new(layout.side(), layout.lane_width()),
            requests: Vec::new(),
            granted: 0,
            scratch: Vec::new(),
        }
    }

    pub fn granted(&self) -> u64 {
        self.granted
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    /// Speed plan from the next step until the vehicle retires, following
    /// the planned predecessor if any.
    pub fn plan_for(&self, world: &World, id: VehicleId) -> Option<SpeedPlan> {
        let v = world.vehicle(id)?;
        let pred = world.predecessor(id).and_then(|p| match &p.clearance {
            Clearance::Planned(plan) => Some((plan.clone(), p.length)),
            _ => None,
        });
        if world.predecessor(id).is_some() && pred.is_none() {
            return None;
        }
        let dt = world.params.dt;
        let desired = world.desired_speed(v.movement);
        let retire = world.path_length(v.movement) + world.params.exit_distance;
        let first = world.clock.step + 1;
        let (mut s, mut speed) = (v.position, v.speed);
        let mut states = Vec::new();
        let mut step = first;
        while s < retire {
            let ahead = pred.as_ref().and_then(|(plan, len)| {
                plan.state_after(step).map(|(ps, pv)| Ahead { rear: ps - len, speed: pv })
            });
            speed = world.free_speed(v.movement, s, speed, ahead, Some(desired));
            s += speed * dt;
            states.push((s, speed));
            step += 1;
            if states.len() > 100_000 {
                return None;
            }
        }
        Some(SpeedPlan { first_step: first, states })
    }

    /// Tiles swept by a plan, per step, while the body overlaps the zone.
    fn plan_tiles(&mut self, world: &World, m: Movement, length: f64, plan: &SpeedPlan) -> Vec<(u64, Vec<usize>)> {
        let path = world.path_length(m);
        let half = world.geometry.layout.params().vehicle_width / 2.0;
        let mut out = Vec::new();
        for (k, &(s, _)) in plan.states.iter().enumerate() {
            if s <= 0.0 {
                continue;
            }
            if s - length >= path {
                break;
            }
            let points = world.body_samples(m, s, length);
            self.grid.footprint(&points, half, &mut self.scratch);
            out.push((plan.first_step + k as u64, self.scratch.clone()));
        }
        out
    }

    fn try_grant(&mut self, world: &mut World, id: VehicleId) -> Result<bool, Error> {
        let Some(plan) = self.plan_for(world, id) else {
            return Ok(false);
        };
        let v = world.vehicle(id).ok_or(SimulationFault::UnknownVehicle(id))?;
        let (m, length, lane) = (v.movement, v.length, v.lane());
        let tiles = self.plan_tiles(world, m, length, &plan);
        if !tiles.iter().all(|(step, cells)| self.grid.is_free(*step, cells, lane)) {
            return Ok(false);
        }
        for (step, cells) in &tiles {
            self.grid.claim(*step, cells, id, lane)?;
        }
        world.vehicle_mut(id)?.clearance = Clearance::Planned(Arc::new(plan));
        self.granted += 1;
        Ok(true)
    }
}

impl Controller for TileController {
    fn on_spawn(&mut self, _world: &mut World, _ids: &[VehicleId]) -> Result<(), Error> {
        Ok(())
    }

    fn before_step(&mut self, world: &mut World) -> Result<(), Error> {
        // Lane fronts inside the request horizon ask for a reservation.
        for lane in LaneId::all() {
            let front = world.pending(lane).next().map(|v| (v.id, v.position));
            if let Some((id, pos)) = front {
                if pos >= -self.params.request_horizon && !self.requests.iter().any(|r| r.2 == id) {
                    self.requests.push((world.now(), lane.index(), id));
                }
            }
        }
        self.requests.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let pending = std::mem::take(&mut self.requests);
        let mut keep = VecDeque::new();
        for r in pending {
            if !self.try_grant(world, r.2)? {
                keep.push_back(r);
            }
        }
        self.requests = keep.into();
        self.grid.forget_before(world.clock.step);
        Ok(())
    }

    fn after_step(&mut self, _world: &mut World, _events: &StepEvents) -> Result<(), Error> {
        Ok(())
    }

    fn audit(&self, world: &World) -> Result<(), SimulationFault> {
        for v in world.vehicles() {
            if world.in_zone(v) && !matches!(v.clearance, Clearance::Planned(_) | Clearance::Released { .. }) {
                return Err(SimulationFault::Other(format!("vehicle {} entered the zone without a reservation", v.id)));
            }
        }
        Ok(())
    }
}
