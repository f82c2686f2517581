//! Acceptance runner: one PASS/FAIL line per criterion. The trained
//! checkpoint is cached under `target/acceptance/<key>/` where the key covers
//! the configuration and the sources that shape training, so reruns only
//! repeat the evaluation.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use aim_core::control::ControllerKind;
use aim_core::drl::NetworkShape;
use aim_core::geometry::{compatible_sets, Movement};
use aim_core::harness::{self, CompareOutcome, ExperimentConfig};
use aim_core::metrics::{modal_size, summarize};
use common::*;
use rand::Rng;
use sha2::{Digest, Sha256};

// Pinned tolerances and budgets.
const JOIN_INSTANCES: usize = 1000;
const JOIN_DT: f64 = 1e-3;
const JOIN_TOLERANCE_S: f64 = 0.01;
const GRAD_DRAWS: usize = 20;
const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_COORDS_PER_BLOCK: usize = 4;
const CHAIN_TOLERANCE: f64 = 1e-2;
const CONFLICT_SAMPLE_STEP_M: f64 = 0.02;
const REWARD_GRIDS: usize = 2000;
const MODAL_RANGE: (usize, usize) = (5, 9);
const TRAINING_EPISODES: usize = 100;

/// Sources whose behaviour determines the trained weights.
const TRAINING_SOURCES: &[&str] = &[
    include_str!("../src/geometry.rs"),
    include_str!("../src/simcore.rs"),
    include_str!("../src/reservation.rs"),
    include_str!("../src/platooning.rs"),
    include_str!("../src/control.rs"),
    include_str!("../src/seeding.rs"),
    include_str!("../src/drl/mod.rs"),
    include_str!("../src/drl/agent.rs"),
    include_str!("../src/drl/network.rs"),
    include_str!("../src/drl/replay.rs"),
    include_str!("../src/drl/encoding.rs"),
    include_str!("../src/drl/checkpoint.rs"),
    include_str!("../src/harness/mod.rs"),
    include_str!("../src/harness/episode.rs"),
    include_str!("../src/harness/config.rs"),
];

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Warn,
}

struct Outcome {
    id: u8,
    title: &'static str,
    verdict: Verdict,
    detail: String,
}

impl Outcome {
    fn new(id: u8, title: &'static str, ok: bool, detail: String) -> Self {
        Self { id, title, verdict: if ok { Verdict::Pass } else { Verdict::Fail }, detail }
    }

    fn line(&self) -> String {
        let tag = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Warn => "WARN",
        };
        format!("{tag} criterion {:>2}: {}: {}", self.id, self.title, self.detail)
    }
}

fn report(o: Outcome, all: &mut Vec<Outcome>) {
    println!("{}", o.line());
    all.push(o);
}

fn target_dir() -> PathBuf {
    std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target");
            dir.canonicalize().unwrap_or(dir)
        })
}

fn cache_key(config: &ExperimentConfig) -> String {
    let mut h = Sha256::new();
    h.update(config.hash().as_bytes());
    for src in TRAINING_SOURCES {
        h.update(src.as_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn criterion_join() -> Outcome {
    let worst = join_time_max_error(JOIN_INSTANCES, 2024, JOIN_DT);
    Outcome::new(
        2,
        "time-to-join vs kinematic integration",
        worst <= JOIN_TOLERANCE_S,
        format!("max |dt| = {worst:.2e} s over {JOIN_INSTANCES} instances (tolerance {JOIN_TOLERANCE_S} s)"),
    )
}

fn criterion_gradients() -> Outcome {
    let tiny = gradient_check(tiny_shape(), GRAD_DRAWS, 3, None, 101);
    let full = gradient_check(NetworkShape::default(), GRAD_DRAWS, 2, Some(GRAD_COORDS_PER_BLOCK), 102);
    let worst = tiny.max_rel_error.max(full.max_rel_error);
    let blocks: Vec<String> = full.per_block.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome::new(
        3,
        "finite-difference gradient check",
        worst <= GRAD_TOLERANCE && tiny.checked > 0 && full.checked > 0,
        format!(
            "max rel err {worst:.2e} (tolerance {GRAD_TOLERANCE:.0e}); small net {} coords, full net {} coords [{}]; {} kink coords skipped",
            tiny.checked,
            full.checked,
            blocks.join(", "),
            tiny.skipped_kinks + full.skipped_kinks
        ),
    )
}

fn criterion_chain() -> Outcome {
    let (err, steps) = chain_experiment(17);
    Outcome::new(
        4,
        "toy chain MDP convergence",
        err <= CHAIN_TOLERANCE && steps <= CHAIN_STEP_BUDGET,
        format!("max |Q - Q*| = {err:.2e} after {steps} steps (budget {CHAIN_STEP_BUDGET}, tolerance {CHAIN_TOLERANCE})"),
    )
}

fn criterion_conflicts() -> Outcome {
    let ix = default_intersection();
    let brute = brute_conflicts(&ix, CONFLICT_SAMPLE_STEP_M);
    let mut mismatches = Vec::new();
    for a in Movement::all() {
        let row: String = Movement::all().iter().map(|&b| if ix.conflicts.conflicts(a, b) { '1' } else { '0' }).collect();
        if row != CONFLICT_SNAPSHOT[a.index()] {
            mismatches.push(format!("snapshot row {}", a.code()));
        }
        for b in Movement::all() {
            if ix.conflicts.conflicts(a, b) != brute[a.index()][b.index()] {
                mismatches.push(format!("{}/{}", a.code(), b.code()));
            }
        }
    }
    let mut sets = 0;
    for t in Movement::all() {
        let mut got: Vec<u16> = compatible_sets(t, &ix.conflicts).into_iter().map(set_bits).collect();
        got.sort_unstable();
        sets += got.len();
        if got != exhaustive_maximal_cliques(t, |a, b| ix.conflicts.conflicts(a, b)) {
            mismatches.push(format!("cliques of {}", t.code()));
        }
    }
    Outcome::new(
        5,
        "conflict matrix and compatible sets",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("144 entries match dense sampling and snapshot; {sets} maximal sets match exhaustive enumeration")
        } else {
            format!("mismatches: {}", mismatches.join(", "))
        },
    )
}

fn criterion_reward() -> Outcome {
    let mut r = rng(55);
    let mut failure = reward_law_violation(&[0, 1, 59_999, 60_000, 60_001], 0.15, 60_000);
    for _ in 0..REWARD_GRIDS {
        if failure.is_some() {
            break;
        }
        let threshold = r.random_range(1_000u64..300_000);
        let cap = r.random_range(1u32..1000) as f64 / 1000.0;
        let waits: Vec<u64> = (0..32).map(|_| r.random_range(0..2_000_000)).collect();
        failure = reward_law_violation(&waits, cap, threshold);
    }
    Outcome::new(
        8,
        "reward law",
        failure.is_none(),
        failure.unwrap_or_else(|| format!("R(0)=c, R(W_m)=0, strict decrease and sign hold on {REWARD_GRIDS} random 1 ms grids")),
    )
}

/// Trains unless a completed run for this key is cached; returns the
/// checkpoint path.
fn trained_checkpoint(config: &ExperimentConfig) -> Result<PathBuf, String> {
    let dir = config.output_dir();
    let ckpt = dir.join("checkpoint.bin");
    let manifest = dir.join("manifest.json");
    if ckpt.exists() && manifest.exists() {
        let m: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if m["config_hash"] == config.hash() && m["episodes"].as_array().map(Vec::len) == Some(config.episodes) {
            eprintln!("using cached training run in {}", dir.display());
            return Ok(ckpt);
        }
    }
    eprintln!("training {} episodes into {} (cached for later runs)", config.episodes, dir.display());
    let start = Instant::now();
    let out = harness::train(config, |row| {
        eprintln!(
            "  episode {:>3}: decisions {:>4} reward {:+.4} loss {:.5} mean travel {}",
            row.episode,
            row.decisions,
            row.mean_reward,
            row.mean_loss,
            row.mean_travel_time.map_or("-".into(), |t| format!("{t:.1} s"))
        );
    })
    .map_err(|e| e.to_string())?;
    eprintln!("training took {:.0} s", start.elapsed().as_secs_f64());
    Ok(out.checkpoint)
}

fn run_compare(config: &ExperimentConfig, ckpt: &Path, dir: PathBuf) -> Result<CompareOutcome, String> {
    let _ = fs::remove_dir_all(&dir);
    let cfg = ExperimentConfig { output_dir: dir, ..config.clone() };
    let mut agent = harness::load_agent(&cfg, ckpt).map_err(|e| e.to_string())?;
    harness::compare_all(&cfg, &mut agent, &ControllerKind::ALL, |_, _| {}).map_err(|e| e.to_string())
}

fn row_means(out: &CompareOutcome, kind: ControllerKind) -> (f64, f64) {
    let r = out.report.row(kind.key()).expect("every method is compared");
    (r.mean_travel_time, r.mean_fuel_ml)
}

fn criteria_from_compare(out: &CompareOutcome, elapsed: f64, all: &mut Vec<Outcome>) {
    let episodes: usize = out.results.iter().map(|(_, r)| r.len()).sum();
    let steps: u64 = out.results.iter().flat_map(|(_, r)| r.iter().map(|e| e.steps)).sum();
    report(
        Outcome::new(
            1,
            "safety under reference demand",
            episodes == ControllerKind::ALL.len() * 5,
            format!(
                "{episodes} episodes ({steps} steps) with no collision, zone or tile violation; {elapsed:.0} s wall time"
            ),
        ),
        all,
    );

    let t = |k| row_means(out, k).0;
    let (k3, k6, k12) = (t(ControllerKind::Fixed3), t(ControllerKind::Fixed6), t(ControllerKind::Fixed12));
    report(
        Outcome::new(
            6,
            "fixed-size interior optimum at k=6",
            k6 < k3 && k6 < k12,
            format!("mean travel k=3 {k3:.2} s, k=6 {k6:.2} s, k=9 {:.2} s, k=12 {k12:.2} s", t(ControllerKind::Fixed9)),
        ),
        all,
    );

    let (p_t, p_f) = row_means(out, ControllerKind::Proposed);
    let best_fixed = [ControllerKind::Fixed3, ControllerKind::Fixed6, ControllerKind::Fixed9, ControllerKind::Fixed12]
        .into_iter()
        .map(|k| (t(k), k))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    let mut checks = Vec::new();
    let mut ok = true;
    for (name, value, bound) in [
        ("travel vs webster", p_t, t(ControllerKind::Webster)),
        ("travel vs fcfs", p_t, t(ControllerKind::Fcfs)),
        ("travel vs best fixed", p_t, best_fixed.0),
        ("travel vs random", p_t, t(ControllerKind::Random)),
        ("fuel vs webster", p_f, row_means(out, ControllerKind::Webster).1),
        ("fuel vs fcfs", p_f, row_means(out, ControllerKind::Fcfs).1),
    ] {
        let pass = value <= bound;
        ok &= pass;
        checks.push(format!("{name} {value:.2} <= {bound:.2} {}", if pass { "ok" } else { "NO" }));
    }
    report(
        Outcome::new(
            7,
            "proposed model headline ordering",
            ok,
            format!("{} (best fixed is {})", checks.join("; "), best_fixed.1),
        ),
        all,
    );

    let runs = out.runs(ControllerKind::Proposed);
    let releases: Vec<_> = runs.iter().flat_map(|r| r.releases.iter().copied()).collect();
    let trips: Vec<_> = runs.iter().flat_map(|r| r.trips.iter().cloned()).collect();
    let mode = summarize(&trips, &releases).ok().and_then(|s| modal_size(&s.platoon_histogram));
    let in_range = mode.is_some_and(|m| (MODAL_RANGE.0..=MODAL_RANGE.1).contains(&m));
    report(
        Outcome {
            id: 9,
            title: "modal platoon size (soft)",
            verdict: if in_range { Verdict::Pass } else { Verdict::Warn },
            detail: format!("mode {mode:?}, expected within {}..={}", MODAL_RANGE.0, MODAL_RANGE.1),
        },
        all,
    );
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "json"))
                .filter_map(|p| Some((p.file_name()?.to_string_lossy().into_owned(), fs::read(&p).ok()?)))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

fn main() -> ExitCode {
    let mut all = Vec::new();
    report(criterion_join(), &mut all);
    report(criterion_gradients(), &mut all);
    report(criterion_chain(), &mut all);
    report(criterion_conflicts(), &mut all);
    report(criterion_reward(), &mut all);

    let base = ExperimentConfig { episodes: TRAINING_EPISODES, ..ExperimentConfig::default() };
    let root = target_dir().join("acceptance").join(cache_key(&base));
    let config = ExperimentConfig { output_dir: root.join("train"), ..base };
    match trained_checkpoint(&config) {
        Err(e) => {
            for (id, title) in [
                (1, "safety under reference demand"),
                (6, "fixed-size interior optimum at k=6"),
                (7, "proposed model headline ordering"),
                (9, "modal platoon size (soft)"),
                (10, "byte-identical compare artifacts"),
            ] {
                report(Outcome::new(id, title, false, format!("training failed: {e}")), &mut all);
            }
        }
        Ok(ckpt) => {
            let start = Instant::now();
            match run_compare(&config, &ckpt, root.join("compare_a")) {
                Err(e) => {
                    for (id, title) in [(1, "safety under reference demand"), (6, "fixed-size interior optimum at k=6"), (7, "proposed model headline ordering"), (9, "modal platoon size (soft)")] {
                        report(Outcome::new(id, title, false, e.clone()), &mut all);
                    }
                }
                Ok(out) => {
                    criteria_from_compare(&out, start.elapsed().as_secs_f64(), &mut all);
                    print!("{}", out.report.to_text());
                }
            }
            let second = run_compare(&config, &ckpt, root.join("compare_b"));
            let (a, b) = (artifacts(&root.join("compare_a")), artifacts(&root.join("compare_b")));
            let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
            let ok = second.is_ok() && !a.is_empty() && a.len() == b.len() && differing.is_empty();
            report(
                Outcome::new(
                    10,
                    "byte-identical compare artifacts",
                    ok,
                    match second {
                        Err(e) => format!("second run failed: {e}"),
                        Ok(_) => format!("{} CSV/JSON files compared, {} differ {:?}", a.len(), differing.len(), differing),
                    },
                ),
                &mut all,
            );
        }
    }

    all.sort_by_key(|o| o.id);
    println!("\nacceptance summary");
    for o in &all {
        println!("{}", o.line());
    }
    let failed = all.iter().filter(|o| o.verdict == Verdict::Fail).count();
    println!("{} passed, {} failed, {} warnings", all.iter().filter(|o| o.verdict == Verdict::Pass).count(), failed, all.iter().filter(|o| o.verdict == Verdict::Warn).count());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
