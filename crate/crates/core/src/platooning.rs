//! Platoon formation: time-to-join, the length-feasibility bound and LVA/FVA
//! assignment.

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, PlatoonError};
use crate::geometry::LaneId;
use crate::reservation::JoinMsg;
use crate::simcore::VehicleId;

/// Discriminants this close below zero are treated as a double root.
const DISCRIMINANT_SLACK: f64 = 1e-12;

/// Inputs for the time a follower needs to close into its platoon slot.
#[derive(Clone, Debug)]
pub struct JoinInput<'a> {
    /// 1-based position of the follower in the lane (must be at least 2).
    pub position: usize,
    pub follower_speed: f64,
    pub follower_max_accel: f64,
    pub leader_speed: f64,
    /// Lengths of the vehicles ahead of the follower, leader first.
    pub lengths_ahead: &'a [f64],
    pub headway: f64,
    /// Front-to-front distance between the leader and the follower.
    pub front_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeToJoin {
    Joins(f64),
    /// The follower is already inside its slot and no nonnegative time closes
    /// the equation.
    AlreadyJoined,
}

impl TimeToJoin {
    /// Seconds to join, zero when already joined.
    pub fn seconds(self) -> f64 {
        match self {
            TimeToJoin::Joins(t) => t,
            TimeToJoin::AlreadyJoined => 0.0,
        }
    }
}

/// Smallest `t >= 0` with
/// `v_i t + a t^2 / 2 + sum(l) + (i-1) d_h = v_0 t + d_1i`,
/// constant acceleration and no speed cap.
pub fn time_to_join(input: &JoinInput<'_>) -> Result<TimeToJoin, PlatoonError> {
    let JoinInput { position, follower_speed, follower_max_accel, leader_speed, lengths_ahead, headway, front_distance } =
        *input;
    if position < 2 {
        return Err(PlatoonError::InvalidJoinInput(format!("position {position} < 2")));
    }
    if lengths_ahead.len() != position - 1 {
        return Err(PlatoonError::InvalidJoinInput(format!(
            "{} lengths given for position {position}",
            lengths_ahead.len()
        )));
    }
    if !(follower_max_accel > 0.0) {
        return Err(PlatoonError::InvalidJoinInput(format!("max acceleration {follower_max_accel}")));
    }
    if !(front_distance > 0.0) {
        return Err(PlatoonError::InvalidJoinInput(format!("front distance {front_distance}")));
    }
    let slot = lengths_ahead.iter().sum::<f64>() + (position - 1) as f64 * headway;
    let a = 0.5 * follower_max_accel;
    let b = follower_speed - leader_speed;
    let c = slot - front_distance;
    Ok(smallest_nonnegative_root(a, b, c).map_or(TimeToJoin::AlreadyJoined, TimeToJoin::Joins))
}

fn smallest_nonnegative_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let mut disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        if disc < -DISCRIMINANT_SLACK {
            return None;
        }
        disc = 0.0;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let roots = if q == 0.0 { [0.0, 0.0] } else { [q / a, c / q] };
    roots.into_iter().filter(|t| *t >= 0.0).min_by(f64::total_cmp)
}

/// Length of a platoon: vehicle lengths plus `(n-1)` headways.
pub fn platoon_length(lengths: &[f64], headway: f64) -> f64 {
    lengths.iter().sum::<f64>() + lengths.len().saturating_sub(1) as f64 * headway
}

/// Largest prefix of the queue whose platoon length fits in `zone_length`.
pub fn max_feasible_size(lengths: &[f64], headway: f64, zone_length: f64) -> Result<usize, PlatoonError> {
    let first = *lengths.first().ok_or(PlatoonError::Empty)?;
    if first > zone_length {
        return Err(ConfigError::VehicleLongerThanZone { vehicle_length: first, control_zone: zone_length }.into());
    }
    let mut total = first;
    let mut n = 1;
    for &l in &lengths[1..] {
        total += headway + l;
        if total > zone_length {
            break;
        }
        n += 1;
    }
    Ok(n)
}

/// Closed form of [`max_feasible_size`] for an unbounded queue of identical
/// vehicles.
pub fn max_uniform_size(vehicle_length: f64, headway: f64, zone_length: f64) -> Result<usize, ConfigError> {
    if vehicle_length > zone_length {
        return Err(ConfigError::VehicleLongerThanZone { vehicle_length, control_zone: zone_length });
    }
    Ok(((zone_length + headway) / (vehicle_length + headway) + 1e-9).floor() as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlatoonId(pub u64);

#[derive(Clone, Debug, PartialEq)]
pub struct Platoon {
    pub id: PlatoonId,
    pub lane: LaneId,
    pub leader: VehicleId,
    pub followers: Vec<VehicleId>,
    pub headway: f64,
    pub total_length: f64,
}

impl Platoon {
    pub fn size(&self) -> usize {
        1 + self.followers.len()
    }

    pub fn members(&self) -> impl Iterator<Item = VehicleId> + '_ {
        std::iter::once(self.leader).chain(self.followers.iter().copied())
    }
}

/// A queued vehicle as seen by the platoon former, front of the lane first.
#[derive(Clone, Copy, Debug)]
pub struct QueuedVehicle {
    pub id: VehicleId,
    pub length: f64,
}

pub struct PlatoonSpec {
    pub id: PlatoonId,
    pub lane: LaneId,
    pub size: usize,
    pub headway: f64,
    pub zone_length: f64,
    pub follow_speed: f64,
}

/// Groups the first `size` queued vehicles; the rest stay free agents.
pub fn form_platoon(spec: &PlatoonSpec, queue: &[QueuedVehicle]) -> Result<(Platoon, Vec<(VehicleId, JoinMsg)>), PlatoonError> {
    if spec.size == 0 {
        return Err(PlatoonError::Empty);
    }
    if spec.size > queue.len() {
        return Err(PlatoonError::QueueTooShort { lane: spec.lane, requested: spec.size, available: queue.len() });
    }
    let lengths: Vec<f64> = queue.iter().map(|v| v.length).collect();
    let feasible = max_feasible_size(&lengths, spec.headway, spec.zone_length)?;
    if spec.size > feasible {
        return Err(PlatoonError::TooLong { requested: spec.size, feasible });
    }
    let members = &queue[..spec.size];
    let platoon = Platoon {
        id: spec.id,
        lane: spec.lane,
        leader: members[0].id,
        followers: members[1..].iter().map(|v| v.id).collect(),
        headway: spec.headway,
        total_length: platoon_length(&lengths[..spec.size], spec.headway),
    };
    let joins = platoon
        .followers
        .iter()
        .map(|&id| (id, JoinMsg { join: true, head_spacing: spec.headway, follow_speed: spec.follow_speed }))
        .collect();
    Ok((platoon, joins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn input(lengths: &[f64], v_i: f64, v0: f64, d: f64) -> JoinInput<'_> {
        JoinInput {
            position: lengths.len() + 1,
            follower_speed: v_i,
            follower_max_accel: 5.0,
            leader_speed: v0,
            lengths_ahead: lengths,
            headway: 1.0,
            front_distance: d,
        }
    }

    #[test]
    fn quadratic_example() {
        let t = time_to_join(&input(&[5.0], 10.0, 15.0, 20.0)).unwrap().seconds();
        assert!((t - (5.0 + 165f64.sqrt()) / 5.0).abs() < 1e-12);
        assert!((t - 3.569).abs() < 1e-3);
    }

    #[test]
    fn already_in_slot_is_zero() {
        let t = time_to_join(&input(&[5.0, 5.0], 12.0, 12.0, 12.0)).unwrap();
        assert_eq!(t, TimeToJoin::Joins(0.0));
    }

    #[test]
    fn pure_acceleration_case() {
        // Slot at 6 m, follower 16 m behind the leader front: residual 10 m.
        let t = time_to_join(&input(&[5.0], 8.0, 8.0, 16.0)).unwrap().seconds();
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_gap_with_faster_follower_is_already_joined() {
        let t = time_to_join(&input(&[5.0], 12.0, 10.0, 5.5)).unwrap();
        assert_eq!(t, TimeToJoin::AlreadyJoined);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(time_to_join(&JoinInput { position: 1, ..input(&[], 1.0, 1.0, 1.0) }).is_err());
        assert!(time_to_join(&input(&[5.0], 1.0, 1.0, 0.0)).is_err());
        assert!(time_to_join(&JoinInput { follower_max_accel: 0.0, ..input(&[5.0], 1.0, 1.0, 9.0) }).is_err());
    }

    #[test]
    fn feasible_size_table2() {
        assert_eq!(max_feasible_size(&[5.0; 40], 1.0, 200.0).unwrap(), 33);
        assert_eq!(max_uniform_size(5.0, 1.0, 200.0).unwrap(), 33);
        assert_eq!(max_feasible_size(&[5.0; 2], 1.0, 200.0).unwrap(), 2);
        assert_eq!(max_feasible_size(&[5.0; 10], 1.0, 20.0).unwrap(), 3);
        assert_eq!(max_uniform_size(5.0, 1.0, 20.0).unwrap(), 3);
    }

    #[test]
    fn oversized_vehicle_is_config_error() {
        assert!(matches!(max_feasible_size(&[25.0], 1.0, 20.0), Err(PlatoonError::Config(_))));
    }

    fn queue(n: usize) -> Vec<QueuedVehicle> {
        (0..n).map(|i| QueuedVehicle { id: VehicleId(i as u64), length: 5.0 }).collect()
    }

    fn spec(size: usize) -> PlatoonSpec {
        PlatoonSpec { id: PlatoonId(0), lane: LaneId(1), size, headway: 1.0, zone_length: 200.0, follow_speed: 20.0 }
    }

    #[test]
    fn lone_leader_has_no_joins() {
        let (p, joins) = form_platoon(&spec(1), &queue(4)).unwrap();
        assert_eq!(p.size(), 1);
        assert!(joins.is_empty());
    }

    #[test]
    fn three_vehicle_platoon_length() {
        let (p, joins) = form_platoon(&spec(3), &queue(5)).unwrap();
        assert_eq!(p.total_length, 17.0);
        assert_eq!(p.leader, VehicleId(0));
        assert_eq!(p.followers, vec![VehicleId(1), VehicleId(2)]);
        assert_eq!(joins.len(), 2);
        assert!(p.members().all(|id| id.0 < 3));
    }

    #[test]
    fn oversize_requests_name_the_constraint() {
        assert!(matches!(form_platoon(&spec(6), &queue(5)), Err(PlatoonError::QueueTooShort { .. })));
        let short_zone = PlatoonSpec { zone_length: 20.0, ..spec(4) };
        assert!(matches!(form_platoon(&short_zone, &queue(5)), Err(PlatoonError::TooLong { feasible: 3, .. })));
    }

    proptest! {
        #[test]
        fn root_balances_equation(
            n_ahead in 1usize..6, v_i in 0.0f64..20.0, v0 in 0.0f64..20.0,
            a in 0.5f64..6.0, extra in 0.01f64..150.0, l in 3.0f64..7.0
        ) {
            let lengths = vec![l; n_ahead];
            let d = l * n_ahead as f64 + n_ahead as f64 + extra;
            let inp = JoinInput { follower_max_accel: a, ..input(&lengths, v_i, v0, d) };
            let t = time_to_join(&inp).unwrap().seconds();
            let lhs = v_i * t + 0.5 * a * t * t + lengths.iter().sum::<f64>() + n_ahead as f64;
            let rhs = v0 * t + d;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn monotone_in_front_distance(v_i in 0.0f64..20.0, v0 in 0.0f64..20.0, d in 6.01f64..100.0, dd in 0.0f64..50.0) {
            let t1 = time_to_join(&input(&[5.0], v_i, v0, d)).unwrap().seconds();
            let t2 = time_to_join(&input(&[5.0], v_i, v0, d + dd)).unwrap().seconds();
            prop_assert!(t2 >= t1 - 1e-12);
        }

        #[test]
        fn feasible_size_monotone(k in 1usize..50, l1 in 10.0f64..300.0, dl in 0.0f64..100.0) {
            let lengths = vec![5.0; k];
            let n1 = max_feasible_size(&lengths, 1.0, l1).unwrap();
            let n2 = max_feasible_size(&lengths, 1.0, l1 + dl).unwrap();
            prop_assert!(n1 <= n2);
            prop_assert!(n2 <= k);
        }
    }
}
