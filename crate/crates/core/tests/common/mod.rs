//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls the code path it checks.
#![allow(dead_code)]

use aim_core::drl::{DqnAgent, DqnParams, NetworkShape, QNetwork, StateTensor};
use aim_core::geometry::{GeometryParams, Intersection, Movement, MovementSet, MOVEMENT_COUNT};
use aim_core::platooning::{time_to_join, JoinInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- join time

/// Integrates leader (constant speed) and follower (constant acceleration)
/// with step `dt` and returns the first time the follower reaches its slot,
/// interpolated inside the step. The position update is trapezoidal, which
/// is exact for constant acceleration, so the only error is the crossing
/// interpolation.
pub fn simulated_join_time(input: &JoinInput<'_>, dt: f64, horizon: f64) -> Option<f64> {
    let slot = input.lengths_ahead.iter().sum::<f64>() + (input.position - 1) as f64 * input.headway;
    let mut leader = input.front_distance;
    let mut follower = 0.0;
    let mut v = input.follower_speed;
    let mut t = 0.0;
    let mut gap = leader - follower - slot;
    if gap <= 0.0 {
        return Some(0.0);
    }
    while t < horizon {
        let v_next = v + input.follower_max_accel * dt;
        follower += 0.5 * (v + v_next) * dt;
        leader += input.leader_speed * dt;
        v = v_next;
        t += dt;
        let next_gap = leader - follower - slot;
        if next_gap <= 0.0 {
            return Some(t - dt * next_gap / (next_gap - gap));
        }
        gap = next_gap;
    }
    None
}

/// Worst absolute disagreement between `time_to_join` and the integrator
/// over `n` random instances with the follower behind its slot.
pub fn join_time_max_error(n: usize, seed: u64, dt: f64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let position = r.random_range(2..=8usize);
        let lengths: Vec<f64> = (0..position - 1).map(|_| r.random_range(4.0..6.0)).collect();
        let headway = r.random_range(0.5..2.0);
        let slot = lengths.iter().sum::<f64>() + (position - 1) as f64 * headway;
        let input = JoinInput {
            position,
            follower_speed: r.random_range(0.0..20.0),
            follower_max_accel: r.random_range(1.0..5.0),
            leader_speed: r.random_range(0.0..20.0),
            lengths_ahead: &lengths,
            headway,
            front_distance: slot + r.random_range(0.1..60.0),
        };
        let analytic = time_to_join(&input).expect("valid input").seconds();
        let simulated = simulated_join_time(&input, dt, 1e3).expect("constant acceleration always closes the gap");
        worst = worst.max((analytic - simulated).abs());
    }
    worst
}

// ---------------------------------------------------------------- geometry

/// Minimum distance between two movements' paths by dense arc-length
/// sampling of the analytic curves, ignoring the stored polylines.
pub fn brute_min_distance(ix: &Intersection, a: Movement, b: Movement, step: f64) -> f64 {
    let (ta, tb) = (ix.trajectory(a), ix.trajectory(b));
    let samples = |len: f64| -> Vec<f64> {
        let n = (len / step).ceil() as usize;
        (0..=n).map(|i| len * i as f64 / n as f64).collect()
    };
    let pa: Vec<_> = samples(ta.total_length).into_iter().map(|s| ta.point_at(s)).collect();
    let pb: Vec<_> = samples(tb.total_length).into_iter().map(|s| tb.point_at(s)).collect();
    let mut best = f64::INFINITY;
    for p in &pa {
        for q in &pb {
            best = best.min(p.distance(*q));
        }
    }
    best
}

pub fn brute_conflicts(ix: &Intersection, step: f64) -> [[bool; MOVEMENT_COUNT]; MOVEMENT_COUNT] {
    let limit = ix.layout.params().conflict_distance;
    let mut out = [[false; MOVEMENT_COUNT]; MOVEMENT_COUNT];
    for a in Movement::all() {
        for b in Movement::all() {
            if a != b && a.origin != b.origin {
                out[a.index()][b.index()] = brute_min_distance(ix, a, b, step) < limit;
            }
        }
    }
    out
}

/// The conflict matrix of the default layout, hand-checked: rights conflict
/// with nothing; every left crosses the opposing straight and both crossing
/// straights; crossing straights conflict with each other.
pub const CONFLICT_SNAPSHOT: [&str; MOVEMENT_COUNT] = [
    "000110010100", // NE
    "000010100110", // NS
    "000000000000", // NW
    "100000110010", // ES
    "110000010100", // EW
    "000000000000", // EN
    "010100000110", // SW
    "100110000010", // SN
    "000000000000", // SE
    "110010100000", // WN
    "010100110000", // WE
    "000000000000", // WS
];

/// Every maximal pairwise-compatible subset containing `target`, found by
/// scanning all 2^12 subsets.
pub fn exhaustive_maximal_cliques(target: Movement, conflict: impl Fn(Movement, Movement) -> bool) -> Vec<u16> {
    let compatible = |bits: u16| {
        let members: Vec<Movement> = (0..MOVEMENT_COUNT).filter(|i| bits >> i & 1 == 1).map(|i| Movement::from_index(i).unwrap()).collect();
        members.iter().all(|&a| members.iter().all(|&b| a == b || !conflict(a, b)))
    };
    let t = 1u16 << target.index();
    let all: Vec<u16> = (0u16..1 << MOVEMENT_COUNT).filter(|&s| s & t != 0 && compatible(s)).collect();
    let mut maximal: Vec<u16> = all.iter().copied().filter(|&s| !all.iter().any(|&o| o != s && o & s == s)).collect();
    maximal.sort_unstable();
    maximal
}

pub fn set_bits(s: MovementSet) -> u16 {
    s.iter().fold(0, |acc, m| acc | 1 << m.index())
}

pub fn default_intersection() -> Intersection {
    Intersection::new(&GeometryParams::default()).expect("default layout")
}

// ---------------------------------------------------------------- gradients

pub fn tiny_shape() -> NetworkShape {
    NetworkShape {
        channels: 2,
        rows: 5,
        cols: 6,
        conv1_filters: 3,
        conv1_kernel: 2,
        conv1_stride: 1,
        conv2_filters: 2,
        conv2_kernel: 2,
        conv2_stride: 1,
        hidden: 5,
        outputs: 3,
    }
}

/// Network with every parameter, biases included, drawn from U(-scale, scale)
/// so that no unit is systematically dead.
pub fn random_network(shape: NetworkShape, scale: f64, r: &mut ChaCha8Rng) -> QNetwork<f64> {
    let params = (0..shape.param_count()).map(|_| r.random_range(-scale..scale)).collect();
    QNetwork::from_params(shape, params).expect("parameter count")
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Worst error per parameter block.
    pub per_block: Vec<(&'static str, f64)>,
}

/// Central finite differences against `loss_and_grad` for the listed
/// coordinates. Coordinates whose perturbation flips any ReLU are skipped,
/// because the loss is not differentiable across a kink.
pub fn check_coordinates(
    net: &QNetwork<f64>,
    inputs: &[Vec<f64>],
    actions: &[usize],
    targets: &[f64],
    coords: &[usize],
    h: f64,
    report: &mut GradReport,
    block: usize,
) {
    let xs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let (_, grad) = net.loss_and_grad(&xs, actions, targets);
    let patterns: Vec<Vec<bool>> = xs.iter().map(|x| net.relu_pattern(x)).collect();
    let mut probe = net.clone();
    for &i in coords {
        let orig = net.params[i];
        probe.params[i] = orig + h;
        let plus = probe.loss(&xs, actions, targets);
        let kink_plus = xs.iter().zip(&patterns).any(|(x, p)| probe.relu_pattern(x) != *p);
        probe.params[i] = orig - h;
        let minus = probe.loss(&xs, actions, targets);
        let kink_minus = xs.iter().zip(&patterns).any(|(x, p)| probe.relu_pattern(x) != *p);
        probe.params[i] = orig;
        if kink_plus || kink_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grad[i];
        let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.per_block[block].1 = report.per_block[block].1.max(rel);
        report.checked += 1;
    }
}

/// Gradient check over `draws` random (parameters, batch) pairs. With
/// `per_block = None` every coordinate is checked; otherwise that many
/// random coordinates from each parameter block.
pub fn gradient_check(shape: NetworkShape, draws: usize, batch: usize, per_block: Option<usize>, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let blocks = shape.blocks();
    let mut report = GradReport { per_block: blocks.iter().map(|(n, _)| (*n, 0.0)).collect(), ..Default::default() };
    for _ in 0..draws {
        let net = random_network(shape, 0.5, &mut r);
        let inputs: Vec<Vec<f64>> = (0..batch).map(|_| (0..shape.input_len()).map(|_| r.random_range(0.0..1.0)).collect()).collect();
        let actions: Vec<usize> = (0..batch).map(|_| r.random_range(0..shape.outputs)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| r.random_range(-1.0..1.0)).collect();
        for (b, (_, range)) in blocks.iter().enumerate() {
            let coords: Vec<usize> = match per_block {
                None => range.clone().collect(),
                Some(k) => (0..k).map(|_| r.random_range(range.clone())).collect(),
            };
            check_coordinates(&net, &inputs, &actions, &targets, &coords, 1e-6, &mut report, b);
        }
    }
    report
}

// ---------------------------------------------------------------- toy MDP

pub const CHAIN_STATES: usize = 5;
pub const CHAIN_GAMMA: f64 = 0.9;
/// Gradient steps the chain experiment may use.
pub const CHAIN_STEP_BUDGET: u64 = 30_000;

/// Chain of five states; action 0 moves left (staying put at the left end),
/// action 1 moves right. Moving right from the last state pays 1 and ends
/// the episode; everything else pays 0.
pub fn chain_step(s: usize, a: usize) -> (Option<usize>, f64) {
    match a {
        0 => (Some(s.saturating_sub(1)), 0.0),
        _ if s + 1 == CHAIN_STATES => (None, 1.0),
        _ => (Some(s + 1), 0.0),
    }
}

/// Q* by value iteration to machine precision.
pub fn chain_q_star() -> Vec<[f64; 2]> {
    let mut q = vec![[0.0f64; 2]; CHAIN_STATES];
    for _ in 0..1000 {
        let mut next = q.clone();
        for (s, row) in next.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let (to, r) = chain_step(s, a);
                *v = r + to.map_or(0.0, |t| CHAIN_GAMMA * q[t][0].max(q[t][1]));
            }
        }
        q = next;
    }
    q
}

pub fn chain_shape() -> NetworkShape {
    NetworkShape {
        channels: 1,
        rows: 3,
        cols: CHAIN_STATES,
        conv1_filters: 4,
        conv1_kernel: 2,
        conv1_stride: 1,
        conv2_filters: 4,
        conv2_kernel: 2,
        conv2_stride: 1,
        hidden: 32,
        outputs: 2,
    }
}

/// One-hot column encoding of a chain state.
pub fn chain_state(s: usize) -> StateTensor {
    let shape = chain_shape();
    let mut t = StateTensor::zeros(shape.channels, shape.rows, shape.cols);
    for r in 0..shape.rows {
        t.set(0, r, s, 1.0);
    }
    t
}

pub fn chain_params() -> DqnParams {
    DqnParams {
        epsilon: 1.0,
        batch_size: 32,
        observe_step: 100,
        replay_capacity: 1000,
        gamma: CHAIN_GAMMA,
        target_sync: 100,
        learning_rate: 0.05,
        network: chain_shape(),
        ..DqnParams::default()
    }
}

/// Runs the full agent loop (replay, target network, masking, terminal
/// handling) on the chain with uniformly random behaviour until the step
/// budget is spent. Returns the worst |Q - Q*| and the steps used.
pub fn chain_experiment(seed: u64) -> (f64, u64) {
    let mut agent = DqnAgent::new(chain_params(), seed);
    let mut r = rng(seed ^ 0x5eed);
    while agent.train_steps() < CHAIN_STEP_BUDGET {
        let mut s = r.random_range(0..CHAIN_STATES);
        let mut reward = 0.0;
        while agent.train_steps() < CHAIN_STEP_BUDGET {
            let (action, _) = agent.act(chain_state(s), 2, reward).expect("feasible actions");
            let (next, rw) = chain_step(s, action - 1);
            reward = rw;
            match next {
                Some(t) => s = t,
                None => {
                    agent.end_episode(chain_state(s), reward);
                    break;
                }
            }
        }
    }
    let q_star = chain_q_star();
    let mut worst: f64 = 0.0;
    for (s, row) in q_star.iter().enumerate() {
        let q = agent.q_values(&chain_state(s));
        for a in 0..2 {
            worst = worst.max((q[a] as f64 - row[a]).abs());
        }
    }
    (worst, agent.train_steps())
}

// ---------------------------------------------------------------- reward

/// Checks the per-vehicle reward law on a 1 ms grid of waiting times: the
/// cap at zero wait, zero at the threshold, strict decrease, and negativity
/// exactly beyond the threshold. The expected signs and orderings come from
/// integer comparisons of the grid values. Returns the first violation.
pub fn reward_law_violation(waits_ms: &[u64], cap: f64, threshold_ms: u64) -> Option<String> {
    use aim_core::drl::vehicle_reward;
    let threshold = threshold_ms as f64 * 1e-3;
    let r = |w: u64| vehicle_reward(w as f64 * 1e-3, cap, threshold);
    if r(0) != cap {
        return Some(format!("R(0) = {} != {cap}", r(0)));
    }
    if r(threshold_ms) != 0.0 {
        return Some(format!("R(threshold) = {}", r(threshold_ms)));
    }
    let mut sorted = waits_ms.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for w in &sorted {
        let negative = r(*w) < 0.0;
        if negative != (*w > threshold_ms) {
            return Some(format!("sign of R({w} ms) = {} disagrees with the threshold", r(*w)));
        }
    }
    for pair in sorted.windows(2) {
        if r(pair[0]) <= r(pair[1]) {
            return Some(format!("R not strictly decreasing between {} and {} ms", pair[0], pair[1]));
        }
    }
    None
}
