//! Trip accounting, summary statistics and comparison reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::Movement;
use crate::simcore::{Vehicle, VehicleId};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub id: VehicleId,
    pub movement: String,
    pub entry_time: f64,
    pub exit_time: f64,
    pub travel_time: f64,
    pub wait_time: f64,
    pub fuel_ml: f64,
    /// Size of the platoon the vehicle crossed in, 0 when it crossed alone
    /// outside any platoon.
    pub platoon_size_joined: usize,
}

impl TripRecord {
    pub fn from_vehicle(v: &Vehicle, exit_time: f64) -> Self {
        Self {
            id: v.id,
            movement: v.movement.code(),
            entry_time: v.entry_time,
            exit_time,
            travel_time: exit_time - v.entry_time,
            wait_time: v.accumulated_wait,
            fuel_ml: v.fuel_used,
            platoon_size_joined: v.platoon.map_or(0, |p| p.size),
        }
    }

    pub fn movement(&self) -> Option<Movement> {
        Movement::from_code(&self.movement)
    }
}

pub const TRIP_CSV_HEADER: &str = "id,movement,entry_time,exit_time,travel_time,wait_time,fuel_ml,platoon_size_joined";

pub fn trips_to_csv(trips: &[TripRecord]) -> String {
    let mut out = String::with_capacity(64 * (trips.len() + 1));
    out.push_str(TRIP_CSV_HEADER);
    out.push('\n');
    for t in trips {
        let _ = writeln!(
            out,
            "{},{},{:.1},{:.1},{:.1},{:.1},{:.4},{}",
            t.id.0, t.movement, t.entry_time, t.exit_time, t.travel_time, t.wait_time, t.fuel_ml, t.platoon_size_joined
        );
    }
    out
}

/// A platoon handed to the dynamics by a platoon controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub size: usize,
    /// Released from the target lane rather than a companion lane.
    pub target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub vehicles: usize,
    pub mean_travel_time: f64,
    pub median_travel_time: f64,
    pub p95_travel_time: f64,
    pub mean_fuel_ml: f64,
    pub mean_wait: f64,
    /// Target-lane platoon sizes.
    pub platoon_histogram: BTreeMap<usize, u64>,
    pub companion_histogram: BTreeMap<usize, u64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of a sorted slice.
fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Nearest-rank percentile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn histogram(sizes: impl Iterator<Item = usize>) -> BTreeMap<usize, u64> {
    let mut h = BTreeMap::new();
    for s in sizes {
        *h.entry(s).or_insert(0) += 1;
    }
    h
}

pub fn summarize(trips: &[TripRecord], releases: &[ReleaseRecord]) -> Result<SummaryStats, Error> {
    if trips.is_empty() {
        return Err(Error::NoTrips);
    }
    // Sorting first makes every sum independent of record order.
    let mut travel: Vec<f64> = trips.iter().map(|t| t.travel_time).collect();
    travel.sort_by(f64::total_cmp);
    let mut fuel: Vec<f64> = trips.iter().map(|t| t.fuel_ml).collect();
    fuel.sort_by(f64::total_cmp);
    let mut wait: Vec<f64> = trips.iter().map(|t| t.wait_time).collect();
    wait.sort_by(f64::total_cmp);
    Ok(SummaryStats {
        vehicles: trips.len(),
        mean_travel_time: mean(&travel),
        median_travel_time: median(&travel),
        p95_travel_time: percentile(&travel, 95.0),
        mean_fuel_ml: mean(&fuel),
        mean_wait: mean(&wait),
        platoon_histogram: histogram(releases.iter().filter(|r| r.target).map(|r| r.size)),
        companion_histogram: histogram(releases.iter().filter(|r| !r.target).map(|r| r.size)),
    })
}

pub fn histogram_to_csv(h: &BTreeMap<usize, u64>) -> String {
    let mut out = String::from("size,count\n");
    for (s, c) in h {
        let _ = writeln!(out, "{s},{c}");
    }
    out
}

/// Most frequent size, smallest on ties.
pub fn modal_size(h: &BTreeMap<usize, u64>) -> Option<usize> {
    h.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(s, _)| *s)
}

/// Published reference values (travel time s, fuel mL/veh) per method key.
pub fn reference_values(method: &str) -> Option<(f64, f64)> {
    Some(match method {
        "webster" => (110.87, 126.03),
        "fcfs" => (134.16, 116.74),
        "fixed3" => (108.18, 100.61),
        "fixed6" => (74.42, 95.89),
        "fixed9" => (84.85, 104.22),
        "fixed12" => (104.86, 113.64),
        "random" => (72.42, 90.91),
        "proposed" => (69.87, 89.29),
        _ => return None,
    })
}

/// Per-seed results of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRuns {
    pub method: String,
    pub label: String,
    pub runs: Vec<SummaryStats>,
    /// Vehicles still in the network at the horizon, per run.
    pub censored: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub label: String,
    pub seeds: usize,
    pub mean_travel_time: f64,
    pub sd_travel_time: f64,
    pub mean_fuel_ml: f64,
    pub sd_fuel_ml: f64,
    pub mean_wait: f64,
    pub vehicles: f64,
    pub censored: f64,
    pub reference_travel_time: Option<f64>,
    pub reference_fuel_ml: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

pub fn compare(methods: &[MethodRuns]) -> Result<ComparisonReport, Error> {
    if methods.len() < 2 {
        return Err(Error::Serde("a comparison needs at least two methods".into()));
    }
    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        if m.runs.is_empty() {
            return Err(Error::NoTrips);
        }
        let col = |f: fn(&SummaryStats) -> f64| m.runs.iter().map(f).collect::<Vec<_>>();
        let (tt, tt_sd) = mean_sd(&col(|s| s.mean_travel_time));
        let (fuel, fuel_sd) = mean_sd(&col(|s| s.mean_fuel_ml));
        let reference = reference_values(&m.method);
        rows.push(ReportRow {
            method: m.method.clone(),
            label: m.label.clone(),
            seeds: m.runs.len(),
            mean_travel_time: tt,
            sd_travel_time: tt_sd,
            mean_fuel_ml: fuel,
            sd_fuel_ml: fuel_sd,
            mean_wait: mean(&col(|s| s.mean_wait)),
            vehicles: mean(&col(|s| s.vehicles as f64)),
            censored: mean(&m.censored.iter().map(|&c| c as f64).collect::<Vec<_>>()),
            reference_travel_time: reference.map(|r| r.0),
            reference_fuel_ml: reference.map(|r| r.1),
        });
    }
    Ok(ComparisonReport { schema_version: SUMMARY_SCHEMA_VERSION, rows })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.2}"))
}

impl ComparisonReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,label,seeds,mean_travel_time_s,sd_travel_time_s,mean_fuel_ml,sd_fuel_ml,mean_wait_s,vehicles,censored,reference_travel_time_s,reference_fuel_ml\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.1},{:.1},{},{}",
                r.method,
                r.label,
                r.seeds,
                r.mean_travel_time,
                r.sd_travel_time,
                r.mean_fuel_ml,
                r.sd_fuel_ml,
                r.mean_wait,
                r.vehicles,
                r.censored,
                opt(r.reference_travel_time),
                opt(r.reference_fuel_ml)
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(6).max(6);
        let mut out = format!(
            "{:<width$}  {:>14}  {:>14}  {:>9}  {:>9}\n",
            "method", "travel (s)", "fuel (mL/veh)", "ref (s)", "ref (mL)"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.2} ±{:>5.2}  {:>7.2} ±{:>5.2}  {:>9}  {:>9}",
                r.label,
                r.mean_travel_time,
                r.sd_travel_time,
                r.mean_fuel_ml,
                r.sd_fuel_ml,
                opt(r.reference_travel_time),
                opt(r.reference_fuel_ml)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
