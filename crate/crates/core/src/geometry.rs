//! Intersection layout, crossing trajectories and the movement conflict relation.
//!
//! Coordinates are metres with the origin at the centre of the square
//! intersection zone, `x` pointing east and `y` pointing north. Traffic keeps
//! to the right. Every approach carries three inbound lanes (left-only,
//! straight-only, right-only, counted from the median outwards) and three
//! outbound lanes; a movement leaving through slot `k` of its approach enters
//! slot `k` of the exit leg.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Number of movements (and entry lanes) at a four-leg, three-lane intersection.
pub const MOVEMENT_COUNT: usize = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    /// Rotated a quarter turn counter-clockwise.
    pub fn left_normal(self) -> Point {
        Point::new(-self.y, self.x)
    }

    /// Rotated a quarter turn clockwise.
    pub fn right_normal(self) -> Point {
        Point::new(self.y, -self.x)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// A compass leg of the intersection, in canonical order N, E, S, W.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    North,
    East,
    South,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::East, Approach::South, Approach::West];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unit vector pointing from the intersection centre out along this leg.
    pub fn outward(self) -> Point {
        match self {
            Approach::North => Point::new(0.0, 1.0),
            Approach::East => Point::new(1.0, 0.0),
            Approach::South => Point::new(0.0, -1.0),
            Approach::West => Point::new(-1.0, 0.0),
        }
    }

    fn from_outward(v: Point) -> Approach {
        if v.y > 0.5 {
            Approach::North
        } else if v.x > 0.5 {
            Approach::East
        } else if v.y < -0.5 {
            Approach::South
        } else {
            Approach::West
        }
    }

    pub fn letter(self) -> char {
        match self {
            Approach::North => 'N',
            Approach::East => 'E',
            Approach::South => 'S',
            Approach::West => 'W',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Straight, Turn::Right];

    /// Lane slot counted from the median: left turns use the innermost lane.
    pub fn slot(self) -> usize {
        self as usize
    }
}

/// One origin/turn pair. Its canonical index (`origin * 3 + turn`) doubles as
/// the id of its dedicated entry lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Movement {
    pub origin: Approach,
    pub turn: Turn,
}

impl Movement {
    pub const fn new(origin: Approach, turn: Turn) -> Self {
        Self { origin, turn }
    }

    pub fn all() -> [Movement; MOVEMENT_COUNT] {
        let mut out = [Movement::new(Approach::North, Turn::Left); MOVEMENT_COUNT];
        for a in Approach::ALL {
            for t in Turn::ALL {
                let m = Movement::new(a, t);
                out[m.index()] = m;
            }
        }
        out
    }

    pub fn index(self) -> usize {
        self.origin.index() * 3 + self.turn.slot()
    }

    pub fn from_index(i: usize) -> Option<Movement> {
        (i < MOVEMENT_COUNT).then(|| Movement::new(Approach::ALL[i / 3], Turn::ALL[i % 3]))
    }

    /// Direction of travel while approaching the stop line.
    pub fn inbound_heading(self) -> Point {
        self.origin.outward() * -1.0
    }

    pub fn destination(self) -> Approach {
        let d = self.inbound_heading();
        let out = match self.turn {
            Turn::Left => d.left_normal(),
            Turn::Straight => d,
            Turn::Right => d.right_normal(),
        };
        Approach::from_outward(out)
    }

    pub fn entry_lane(self) -> LaneId {
        LaneId(self.index() as u8)
    }

    pub fn exit_lane(self) -> ExitLane {
        ExitLane { leg: self.destination(), slot: self.turn.slot() }
    }

    /// Two-letter origin/destination code as used in flow tables, e.g. `NS`.
    pub fn code(self) -> String {
        format!("{}{}", self.origin.letter(), self.destination().letter())
    }

    pub fn from_code(code: &str) -> Option<Movement> {
        Movement::all().into_iter().find(|m| m.code().eq_ignore_ascii_case(code))
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

/// Dedicated entry lane. Exactly one movement uses each lane, so the id is the
/// movement's canonical index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneId(pub u8);

impl LaneId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn movement(self) -> Movement {
        Movement::from_index(self.index()).expect("lane id out of range")
    }

    pub fn all() -> impl Iterator<Item = LaneId> {
        (0..MOVEMENT_COUNT as u8).map(LaneId)
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.movement())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ExitLane {
    pub leg: Approach,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryParams {
    /// Side of the square intersection zone (m).
    pub intersection_zone_side: f64,
    /// Radius of the circular control zone (m).
    pub control_zone_radius: f64,
    pub lane_width: f64,
    pub vehicle_width: f64,
    /// Two movements conflict when their sampled paths come closer than this.
    pub conflict_distance: f64,
    /// Arc-length spacing of trajectory samples.
    pub sample_resolution: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            intersection_zone_side: 15.0,
            control_zone_radius: 200.0,
            lane_width: 2.5,
            vehicle_width: 1.8,
            conflict_distance: 1.8,
            sample_resolution: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionLayout {
    params: GeometryParams,
}

/// Validates the parameters and builds the layout.
pub fn build_layout(params: &GeometryParams) -> Result<IntersectionLayout, ConfigError> {
    let p = params;
    for (name, v) in [
        ("intersection_zone_side", p.intersection_zone_side),
        ("control_zone_radius", p.control_zone_radius),
        ("lane_width", p.lane_width),
        ("vehicle_width", p.vehicle_width),
        ("conflict_distance", p.conflict_distance),
        ("sample_resolution", p.sample_resolution),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ConfigError::NonPositive { field: name, value: v });
        }
    }
    let half = p.intersection_zone_side / 2.0;
    if p.control_zone_radius <= half {
        return Err(ConfigError::Invalid(format!(
            "control zone radius {} must exceed half the intersection zone side {}",
            p.control_zone_radius, half
        )));
    }
    if p.lane_width <= p.vehicle_width {
        return Err(ConfigError::Invalid(format!(
            "lane width {} must exceed vehicle width {}",
            p.lane_width, p.vehicle_width
        )));
    }
    let tiled = 3.0 * p.lane_width;
    if (tiled - half).abs() > 1e-9 {
        return Err(ConfigError::Tiling { three_lanes: tiled, half_side: half });
    }
    if p.sample_resolution > 0.25 + 1e-12 {
        return Err(ConfigError::Invalid(format!(
            "trajectory sample resolution {} exceeds 0.25 m",
            p.sample_resolution
        )));
    }
    Ok(IntersectionLayout { params: p.clone() })
}

impl IntersectionLayout {
    pub fn params(&self) -> &GeometryParams {
        &self.params
    }

    pub fn side(&self) -> f64 {
        self.params.intersection_zone_side
    }

    pub fn half_side(&self) -> f64 {
        self.params.intersection_zone_side / 2.0
    }

    pub fn lane_width(&self) -> f64 {
        self.params.lane_width
    }

    /// Distance from the control-zone boundary to the stop line, `L - S/2`.
    pub fn approach_length(&self) -> f64 {
        self.params.control_zone_radius - self.half_side()
    }

    /// Centre of the entry lane where it meets the stop line.
    pub fn stop_line_point(&self, m: Movement) -> Point {
        let d = m.inbound_heading();
        let offset = (m.turn.slot() as f64 + 0.5) * self.params.lane_width;
        m.origin.outward() * self.half_side() + d.right_normal() * offset
    }

    /// Centre of the exit lane where it leaves the intersection zone.
    pub fn exit_point(&self, m: Movement) -> Point {
        let exit = m.exit_lane();
        let dir = exit.leg.outward();
        let offset = (exit.slot as f64 + 0.5) * self.params.lane_width;
        dir * self.half_side() + dir.right_normal() * offset
    }

    pub fn contains(&self, p: Point) -> bool {
        let h = self.half_side() + 1e-9;
        p.x.abs() <= h && p.y.abs() <= h
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PathShape {
    Straight,
    /// Quarter circle about `center`; `sweep` is +1 for counter-clockwise.
    Arc { center: Point, radius: f64, start_angle: f64, sweep: f64 },
}

/// Pre-defined path of a movement through the intersection zone.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub movement: Movement,
    pub shape: PathShape,
    pub start: Point,
    pub end: Point,
    pub total_length: f64,
    /// Samples at equal arc-length spacing no larger than the layout resolution,
    /// including both endpoints.
    pub polyline: Vec<Point>,
}

impl Trajectory {
    pub fn curvature_radius(&self) -> f64 {
        match self.shape {
            PathShape::Straight => f64::INFINITY,
            PathShape::Arc { radius, .. } => radius,
        }
    }

    /// Point at arc length `s`, clamped to the path.
    pub fn point_at(&self, s: f64) -> Point {
        let s = s.clamp(0.0, self.total_length);
        match self.shape {
            PathShape::Straight => {
                let dir = (self.end - self.start) * (1.0 / self.total_length);
                self.start + dir * s
            }
            PathShape::Arc { center, radius, start_angle, sweep } => {
                let phi = start_angle + sweep * s / radius;
                center + Point::new(phi.cos(), phi.sin()) * radius
            }
        }
    }
}

pub fn trajectory_for(m: Movement, layout: &IntersectionLayout) -> Trajectory {
    let start = layout.stop_line_point(m);
    let end = layout.exit_point(m);
    let heading = m.inbound_heading();
    let (shape, total_length) = match m.turn {
        Turn::Straight => (PathShape::Straight, start.distance(end)),
        Turn::Left | Turn::Right => {
            let exit_dir = m.destination().outward();
            // Perpendicular distance from the entry point to the exit centreline.
            let radius = (start - end).cross(exit_dir).abs();
            let (toward_center, sweep) = match m.turn {
                Turn::Left => (heading.left_normal(), 1.0),
                _ => (heading.right_normal(), -1.0),
            };
            let center = start + toward_center * radius;
            let rel = start - center;
            let start_angle = rel.y.atan2(rel.x);
            (PathShape::Arc { center, radius, start_angle, sweep }, FRAC_PI_2 * radius)
        }
    };
    let mut traj = Trajectory { movement: m, shape, start, end, total_length, polyline: Vec::new() };
    let segments = (total_length / layout.params.sample_resolution).ceil().max(1.0) as usize;
    traj.polyline = (0..=segments)
        .map(|k| traj.point_at(total_length * k as f64 / segments as f64))
        .collect();
    traj
}

/// Symmetric, irreflexive conflict relation over the twelve movements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConflictMatrix {
    cells: [[bool; MOVEMENT_COUNT]; MOVEMENT_COUNT],
}

impl ConflictMatrix {
    pub fn from_fn(f: impl Fn(Movement, Movement) -> bool) -> Self {
        let all = Movement::all();
        let mut cells = [[false; MOVEMENT_COUNT]; MOVEMENT_COUNT];
        for i in 0..MOVEMENT_COUNT {
            for j in (i + 1)..MOVEMENT_COUNT {
                let c = f(all[i], all[j]);
                cells[i][j] = c;
                cells[j][i] = c;
            }
        }
        Self { cells }
    }

    pub fn conflicts(&self, a: Movement, b: Movement) -> bool {
        self.cells[a.index()][b.index()]
    }

    pub fn row(&self, m: Movement) -> MovementSet {
        let mut set = MovementSet::EMPTY;
        for (j, &c) in self.cells[m.index()].iter().enumerate() {
            if c {
                set.insert(Movement::from_index(j).unwrap());
            }
        }
        set
    }

    /// Whether the movements of `set` are pairwise compatible.
    pub fn is_compatible_set(&self, set: MovementSet) -> bool {
        set.iter().all(|m| (self.row(m) & set).is_empty())
    }

    /// 12x12 CSV with movement codes as header row and column.
    pub fn to_csv(&self) -> String {
        let all = Movement::all();
        let mut out = String::from("movement");
        for m in all {
            out.push(',');
            out.push_str(&m.code());
        }
        out.push('\n');
        for a in all {
            out.push_str(&a.code());
            for b in all {
                out.push_str(if self.conflicts(a, b) { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }
}

/// True iff some pair of sample points of the two paths lies closer than the
/// layout's conflict distance.
pub fn conflicts(a: &Trajectory, b: &Trajectory, layout: &IntersectionLayout) -> bool {
    let limit = layout.params.conflict_distance;
    let limit_sq = limit * limit;
    // Cheap reject on padded bounding boxes before the pairwise scan.
    let (amin, amax) = bounds(&a.polyline);
    let (bmin, bmax) = bounds(&b.polyline);
    if amin.x - limit > bmax.x || bmin.x - limit > amax.x || amin.y - limit > bmax.y || bmin.y - limit > amax.y {
        return false;
    }
    a.polyline.iter().any(|p| {
        b.polyline.iter().any(|q| {
            let d = *p - *q;
            d.dot(d) < limit_sq
        })
    })
}

fn bounds(points: &[Point]) -> (Point, Point) {
    points.iter().fold(
        (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| (Point::new(lo.x.min(p.x), lo.y.min(p.y)), Point::new(hi.x.max(p.x), hi.y.max(p.y))),
    )
}

/// Layout, the twelve trajectories and their conflict matrix. Immutable once
/// built.
#[derive(Clone, Debug)]
pub struct Intersection {
    pub layout: IntersectionLayout,
    pub trajectories: Vec<Trajectory>,
    pub conflicts: ConflictMatrix,
}

impl Intersection {
    pub fn new(params: &GeometryParams) -> Result<Self, ConfigError> {
        let layout = build_layout(params)?;
        let trajectories: Vec<Trajectory> = Movement::all().iter().map(|&m| trajectory_for(m, &layout)).collect();
        let conflicts = ConflictMatrix::from_fn(|a, b| conflicts(&trajectories[a.index()], &trajectories[b.index()], &layout));
        Ok(Self { layout, trajectories, conflicts })
    }

    pub fn trajectory(&self, m: Movement) -> &Trajectory {
        &self.trajectories[m.index()]
    }

    /// Position of a point `s` metres along the full route of `m`: negative
    /// upstream of the stop line, `0..length` inside the zone, beyond that on
    /// the exit leg.
    pub fn route_point(&self, m: Movement, s: f64) -> Point {
        let traj = self.trajectory(m);
        if s < 0.0 {
            traj.start + m.inbound_heading() * s
        } else if s <= traj.total_length {
            traj.point_at(s)
        } else {
            traj.end + m.destination().outward() * (s - traj.total_length)
        }
    }
}

/// Bit set over the twelve movements, iterated in canonical order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MovementSet(u16);

impl MovementSet {
    pub const EMPTY: MovementSet = MovementSet(0);

    pub fn from_bits(bits: u16) -> Self {
        MovementSet(bits & ((1 << MOVEMENT_COUNT) - 1))
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn single(m: Movement) -> Self {
        MovementSet(1 << m.index())
    }

    pub fn insert(&mut self, m: Movement) {
        self.0 |= 1 << m.index();
    }

    pub fn contains(self, m: Movement) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Movement> {
        (0..MOVEMENT_COUNT).filter(move |i| self.0 & (1 << i) != 0).map(|i| Movement::from_index(i).unwrap())
    }
}

impl std::ops::BitAnd for MovementSet {
    type Output = MovementSet;
    fn bitand(self, rhs: Self) -> Self {
        MovementSet(self.0 & rhs.0)
    }
}

impl std::ops::BitOr for MovementSet {
    type Output = MovementSet;
    fn bitor(self, rhs: Self) -> Self {
        MovementSet(self.0 | rhs.0)
    }
}

impl std::ops::Not for MovementSet {
    type Output = MovementSet;
    fn not(self) -> Self {
        MovementSet::from_bits(!self.0)
    }
}

impl fmt::Display for MovementSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<String> = self.iter().map(|m| m.code()).collect();
        write!(f, "{{{}}}", codes.join(","))
    }
}

/// Every maximal pairwise-compatible set of movements containing `target`,
/// sorted by canonical member order.
pub fn compatible_sets(target: Movement, cm: &ConflictMatrix) -> Vec<MovementSet> {
    let compatible = |m: Movement| !cm.row(m) & !MovementSet::single(m);
    let mut out = Vec::new();
    bron_kerbosch(MovementSet::single(target), compatible(target), MovementSet::EMPTY, &compatible, &mut out);
    out.sort_by_key(|s| canonical_key(*s));
    out
}

fn bron_kerbosch(
    r: MovementSet,
    mut p: MovementSet,
    mut x: MovementSet,
    neighbours: &impl Fn(Movement) -> MovementSet,
    out: &mut Vec<MovementSet>,
) {
    if p.is_empty() && x.is_empty() {
        out.push(r);
        return;
    }
    let pivot = (p | x).iter().max_by_key(|&u| (neighbours(u) & p).len()).unwrap();
    let candidates = p & !neighbours(pivot);
    for v in candidates.iter() {
        let nv = neighbours(v);
        let mut r2 = r;
        r2.insert(v);
        bron_kerbosch(r2, p & nv, x & nv, neighbours, out);
        p = p & !MovementSet::single(v);
        x.insert(v);
    }
}

fn canonical_key(set: MovementSet) -> Vec<usize> {
    set.iter().map(|m| m.index()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table2() -> Intersection {
        Intersection::new(&GeometryParams::default()).unwrap()
    }

    fn mv(code: &str) -> Movement {
        Movement::from_code(code).unwrap()
    }

    #[test]
    fn approach_length_table2() {
        let layout = build_layout(&GeometryParams::default()).unwrap();
        assert_eq!(layout.approach_length(), 192.5);
    }

    #[test]
    fn approach_length_small_layout() {
        let p = GeometryParams {
            intersection_zone_side: 12.0,
            lane_width: 2.0,
            control_zone_radius: 100.0,
            vehicle_width: 1.8,
            conflict_distance: 1.8,
            ..GeometryParams::default()
        };
        assert_eq!(build_layout(&p).unwrap().approach_length(), 94.0);
    }

    #[test]
    fn tiling_error_reports_both_values() {
        let p = GeometryParams { lane_width: 2.0, vehicle_width: 1.5, ..GeometryParams::default() };
        match build_layout(&p) {
            Err(ConfigError::Tiling { three_lanes, half_side }) => {
                assert_eq!(three_lanes, 6.0);
                assert_eq!(half_side, 7.5);
            }
            other => panic!("expected tiling error, got {other:?}"),
        }
    }

    #[test]
    fn movement_codes_match_flow_table() {
        let codes: Vec<String> = Movement::all().iter().map(|m| m.code()).collect();
        assert_eq!(codes, ["NE", "NS", "NW", "ES", "EW", "EN", "SW", "SN", "SE", "WN", "WE", "WS"]);
        for m in Movement::all() {
            assert_eq!(m.entry_lane().movement(), m);
            assert_ne!(m.destination(), m.origin);
        }
    }

    #[test]
    fn straight_paths_span_the_zone() {
        let ix = table2();
        for m in Movement::all().into_iter().filter(|m| m.turn == Turn::Straight) {
            assert!((ix.trajectory(m).total_length - 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn right_turn_radius_is_tangency_distance() {
        let ix = table2();
        let t = ix.trajectory(mv("NW"));
        // Entry centreline x = -6.25, exit centreline y = 6.25; both tangency
        // axes meet the zone corner, 1.25 m from either centreline.
        assert!((t.curvature_radius() - 1.25).abs() < 1e-12);
        assert!((t.total_length - FRAC_PI_2 * 1.25).abs() < 1e-12);
        // Least-squares circle through the samples recovers the same radius.
        let (cx, cy, r) = fit_circle(&t.polyline);
        assert!((r - 1.25).abs() < 1e-9, "fitted radius {r}");
        assert!((cx + 7.5).abs() < 1e-9 && (cy - 7.5).abs() < 1e-9);
    }

    #[test]
    fn left_turns_are_wider_than_right_turns() {
        let ix = table2();
        for a in Approach::ALL {
            let l = ix.trajectory(Movement::new(a, Turn::Left)).curvature_radius();
            let r = ix.trajectory(Movement::new(a, Turn::Right)).curvature_radius();
            assert!(l > r);
            assert!((l - 8.75).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectories_are_continuous_and_inside_zone() {
        let ix = table2();
        for m in Movement::all() {
            let t = ix.trajectory(m);
            assert!(t.polyline.first().unwrap().distance(ix.layout.stop_line_point(m)) < 1e-6);
            assert!(t.polyline.last().unwrap().distance(ix.layout.exit_point(m)) < 1e-6);
            for w in t.polyline.windows(2) {
                assert!(w[0].distance(w[1]) <= 0.25 + 1e-9);
            }
            assert!(t.polyline.iter().all(|&p| ix.layout.contains(p)));
        }
    }

    #[test]
    fn crossing_straights_conflict_opposing_do_not() {
        let ix = table2();
        assert!(ix.conflicts.conflicts(mv("NS"), mv("EW")));
        assert!(!ix.conflicts.conflicts(mv("NS"), mv("SN")));
    }

    #[test]
    fn same_approach_never_conflicts() {
        let ix = table2();
        for a in Approach::ALL {
            for t1 in Turn::ALL {
                for t2 in Turn::ALL {
                    assert!(!ix.conflicts.conflicts(Movement::new(a, t1), Movement::new(a, t2)));
                }
            }
        }
    }

    #[test]
    fn north_south_straight_has_several_combinations() {
        let ix = table2();
        let sets = compatible_sets(mv("NS"), &ix.conflicts);
        assert!(sets.len() >= 2, "{sets:?}");
        for s in &sets {
            assert!(s.contains(mv("NS")));
            assert!(ix.conflicts.is_compatible_set(*s));
        }
    }

    #[test]
    fn isolated_target_yields_singleton() {
        let target = mv("NS");
        let cm = ConflictMatrix::from_fn(|a, b| a == target || b == target);
        assert_eq!(compatible_sets(target, &cm), vec![MovementSet::single(target)]);
    }

    #[test]
    fn toy_matrix_cliques() {
        // Compatibility among the first four movements forms a path 0-1-2-3;
        // everything else conflicts with everyone.
        let compatible = |a: usize, b: usize| matches!((a.min(b), a.max(b)), (0, 1) | (1, 2) | (2, 3));
        let cm = ConflictMatrix::from_fn(|a, b| !compatible(a.index(), b.index()));
        let m = |i| Movement::from_index(i).unwrap();
        let set = |ids: &[usize]| ids.iter().fold(MovementSet::EMPTY, |mut s, &i| {
            s.insert(m(i));
            s
        });
        assert_eq!(compatible_sets(m(1), &cm), vec![set(&[0, 1]), set(&[1, 2])]);
        assert_eq!(compatible_sets(m(3), &cm), vec![set(&[2, 3])]);
    }

    #[test]
    fn csv_has_header_and_twelve_rows() {
        let csv = table2().conflicts.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 13);
        assert!(lines[0].starts_with("movement,NE,NS"));
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 13));
    }

    fn fit_circle(points: &[Point]) -> (f64, f64, f64) {
        // Kasa fit: solve x^2 + y^2 + D x + E y + F = 0 in least squares.
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [0.0f64; 3];
        for p in points {
            let row = [p.x, p.y, 1.0];
            let rhs = -(p.x * p.x + p.y * p.y);
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[i] += row[i] * rhs;
            }
        }
        let sol = solve3(ata, atb);
        let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
        (cx, cy, (cx * cx + cy * cy - sol[2]).sqrt())
    }

    fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
        for col in 0..3 {
            let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in 0..3 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in 0..3 {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
        [b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]]
    }
}
