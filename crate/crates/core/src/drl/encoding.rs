//! Grid encoding of the approaches: one row per lane, one column per
//! lane-width cell upstream of the stop line, four channels (occupancy,
//! speed, time-to-join, target-lane map).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{LaneId, MOVEMENT_COUNT};
use crate::platooning::{time_to_join, JoinInput};
use crate::simcore::{Vehicle, World};

pub const CHANNELS: usize = 4;
pub const CH_OCCUPANCY: usize = 0;
pub const CH_SPEED: usize = 1;
pub const CH_TTJ: usize = 2;
pub const CH_TARGET: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct StateTensor {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl StateTensor {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self { rows, cols, channels, data: vec![0.0; channels * rows * cols] }
    }

    pub fn from_vec(channels: usize, rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * rows * cols);
        Self { rows, cols, channels, data }
    }

    fn idx(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.rows + r) * self.cols + col
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[self.idx(c, r, col)]
    }

    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f32) {
        let i = self.idx(c, r, col);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.rows * self.cols..(c + 1) * self.rows * self.cols]
    }

    /// One CSV grid per channel, lanes as rows, separated by a blank line.
    pub fn to_csv(&self, row_names: &[String]) -> String {
        let names = ["occupancy", "speed", "time_to_join", "target"];
        let mut out = String::new();
        for c in 0..self.channels {
            let _ = write!(out, "# {}\nlane", names.get(c).copied().unwrap_or("channel"));
            for col in 0..self.cols {
                let _ = write!(out, ",{col}");
            }
            out.push('\n');
            for r in 0..self.rows {
                out.push_str(row_names.get(r).map_or("?", String::as_str));
                for col in 0..self.cols {
                    let _ = write!(out, ",{}", self.get(c, r, col));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderParams {
    pub cells: usize,
    /// Time-to-join values are divided by this and clipped to 1.
    pub ttj_norm: f64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self { cells: 80, ttj_norm: 30.0 }
    }
}

/// Length of `[rear, front]` that falls inside cell `c` (cell 0 touches the
/// stop line).
pub fn cell_overlap(rear: f64, front: f64, c: usize, cell: f64) -> f64 {
    let hi = -(c as f64) * cell;
    let lo = hi - cell;
    (front.min(hi) - rear.max(lo)).max(0.0)
}

/// Time-to-join of each pending vehicle of a lane, front first. The first
/// pending vehicle is the prospective leader and gets zero.
fn lane_ttj(pending: &[&Vehicle], headway: f64) -> Vec<f64> {
    let Some(leader) = pending.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0];
    for i in 1..pending.len() {
        let v = pending[i];
        let lengths: Vec<f64> = pending[..i].iter().map(|p| p.length).collect();
        let d = leader.position - v.position;
        let input = JoinInput {
            position: i + 1,
            follower_speed: v.speed,
            follower_max_accel: v.max_accel,
            leader_speed: leader.speed,
            lengths_ahead: &lengths,
            headway,
            front_distance: d,
        };
        // Inputs come from a consistent world, so the only failure mode is a
        // follower that can never join, which saturates the channel.
        out.push(time_to_join(&input).map_or(f64::INFINITY, |t| t.seconds()));
    }
    out
}

pub fn encode_state(world: &World, target: Option<LaneId>, params: &EncoderParams) -> StateTensor {
    let cell = world.geometry.layout.lane_width();
    let mut t = StateTensor::zeros(CHANNELS, MOVEMENT_COUNT, params.cells);
    let extent = cell * params.cells as f64;
    for lane in LaneId::all() {
        let r = lane.index();
        let pending: Vec<&Vehicle> = world.pending(lane).collect();
        let ttj = lane_ttj(&pending, world.params.platoon_headway);
        for v in world.lane(lane) {
            let (rear, front) = (v.rear(), v.position.min(0.0));
            if front <= -extent || rear >= 0.0 {
                continue;
            }
            let ttj_value = pending.iter().position(|p| p.id == v.id).map_or(0.0, |i| ttj[i]);
            let first = ((-front) / cell).floor().max(0.0) as usize;
            let last = (((-rear) / cell).ceil() as usize).min(params.cells);
            for c in first..last {
                if cell_overlap(rear, front, c, cell) > 0.5 * cell {
                    t.set(CH_OCCUPANCY, r, c, 1.0);
                    t.set(CH_SPEED, r, c, (v.speed / world.params.max_speed) as f32);
                    t.set(CH_TTJ, r, c, (ttj_value / params.ttj_norm).clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    if let Some(target) = target {
        for c in 0..params.cells {
            t.set(CH_TARGET, target.index(), c, 1.0);
        }
    }
    t
}
