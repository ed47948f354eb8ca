//! Charging-session ingestion and the hourly detection replay.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advice::{normalize_to_budget, ADVICE_FLOOR};
use crate::error::{Error, Result};
use crate::gmm::{tail_prob_deviation, GmmModel, Profile};
use crate::oracle::{verify_detection, Instance, ProbVector, TestSession};
use crate::rng::SplitMix64;
use crate::scheme::{run_gtua, GtuaConfig, PoolEstimate};

/// Deviation, in hours, above which a session counts as malicious.
pub const DEFAULT_DEVIATION_THRESHOLD: f64 = 2.0;

pub const SESSION_COLUMNS: [&str; 5] =
    ["userID", "connectionTime", "doneChargingTime", "disconnectTime", "requestedDeparture"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub user_id: String,
    pub connection_time: DateTime<Utc>,
    pub done_charging_time: DateTime<Utc>,
    pub disconnect_time: DateTime<Utc>,
    pub requested_departure: DateTime<Utc>,
}

/// Parsed sessions plus one message per skipped row.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub records: Vec<SessionRecord>,
    pub warnings: Vec<String>,
}

/// Accepts RFC 3339, minute-precision `Z` times, naive ISO-8601 (read as UTC),
/// and the RFC 2822 form used by some session exports.
pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Some(t.with_timezone(&Utc));
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%MZ") {
        return Some(t.and_utc());
    }
    for format in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(text, format) {
            return Some(t.and_utc());
        }
    }
    DateTime::parse_from_rfc2822(text).ok().map(|t| t.with_timezone(&Utc))
}

pub fn ingest_sessions(path: impl AsRef<Path>) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file)
}

/// Reads sessions from CSV. Columns beyond the five named ones are ignored.
pub fn ingest_reader<R: std::io::Read>(reader: R) -> Result<Ingested> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::NoData);
    }
    let mut index = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        index.insert(h.trim().trim_start_matches('\u{feff}').to_string(), i);
    }
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(SESSION_COLUMNS) {
        *slot = *index
            .get(name)
            .ok_or_else(|| Error::SchemaMismatch(format!("missing column {name}")))?;
    }

    let mut out = Ingested::default();
    for (row, record) in csv.records().enumerate() {
        let line = row + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.warnings.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let field = |k: usize| record.get(cols[k]).unwrap_or("");
        let mut times = [None; 4];
        for (k, t) in times.iter_mut().enumerate() {
            *t = parse_timestamp(field(k + 1));
        }
        let [Some(connection_time), Some(done_charging_time), Some(disconnect_time), Some(requested_departure)] = times
        else {
            out.warnings.push(format!("line {line}: unparseable timestamp"));
            continue;
        };
        if disconnect_time < connection_time {
            out.warnings.push(format!("line {line}: disconnect precedes connection"));
            continue;
        }
        out.records.push(SessionRecord {
            user_id: field(0).to_string(),
            connection_time,
            done_charging_time,
            disconnect_time,
            requested_departure,
        });
    }
    if out.records.is_empty() {
        return Err(Error::NoData);
    }
    Ok(out)
}

fn hours_between(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    (to - from).num_milliseconds() as f64 / 3_600_000.0
}

pub fn derive_profile(r: &SessionRecord) -> Profile {
    let c = r.connection_time;
    let arrival = c.hour() as f64 + c.minute() as f64 / 60.0 + c.second() as f64 / 3600.0;
    Profile::new(
        arrival,
        hours_between(c, r.disconnect_time),
        hours_between(r.requested_departure, r.disconnect_time),
    )
}

pub fn label_malicious(p: &Profile, threshold: f64) -> bool {
    p.deviation > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayOptions {
    /// Fixed safety threshold; `None` uses `1/n` for each hour's population.
    /// A fixed value below `1/n` is raised to `1/n`.
    pub eta: Option<f64>,
    pub horizon_hours: usize,
    pub seed: u64,
    pub threshold: f64,
    pub pool_estimate: PoolEstimate,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            eta: None,
            horizon_hours: 168,
            seed: 0,
            threshold: DEFAULT_DEVIATION_THRESHOLD,
            pool_estimate: PoolEstimate::default(),
        }
    }
}

/// One clock hour of the replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRow {
    pub hour_index: usize,
    /// EVs connected during the hour.
    pub present: usize,
    /// Present EVs neither cleared nor flagged earlier in their stay.
    pub n_users: usize,
    pub n_tests: usize,
    pub detected: usize,
    pub malicious_present: usize,
}

impl HourRow {
    pub fn ratio(&self) -> f64 {
        if self.n_users == 0 {
            0.0
        } else {
            self.n_tests as f64 / self.n_users as f64
        }
    }
}

/// Clock hours folded onto hour-of-day `1..=24`, averaged per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourOfDayRow {
    pub hour: usize,
    pub n_users: f64,
    pub n_tests: f64,
    /// Total tests over total users for this hour-of-day.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub hours: Vec<HourRow>,
    pub by_hour_of_day: Vec<HourOfDayRow>,
    pub total_tests: usize,
    pub total_user_hours: usize,
    pub total_malicious: usize,
    pub reduction: f64,
    pub seed: u64,
}

struct Ev {
    first_slot: usize,
    last_slot: usize,
    malicious: bool,
    advice: f64,
}

/// Lays the profiles on the horizon and runs the scheme every hour on the EVs
/// still awaiting a verdict. Every hour's detection is checked against the
/// ground truth; a mismatch is an error.
pub fn replay(profiles: &[Profile], model: &GmmModel, options: &ReplayOptions) -> Result<ReplayReport> {
    if profiles.is_empty() {
        return Err(Error::NoData);
    }
    let horizon = options.horizon_hours;
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least one hour".into()));
    }
    let days = horizon.div_ceil(24) as u64;
    let mut rng = SplitMix64::new(options.seed);
    let placed: Vec<(f64, &Profile)> = profiles
        .iter()
        .map(|p| ((rng.next_below(days) * 24) as f64 + p.arrival.rem_euclid(24.0), p))
        .collect();

    let advice: Vec<f64> = placed
        .par_iter()
        .map(|(_, p)| tail_prob_deviation(model, p.arrival, p.duration, options.threshold))
        .collect::<Result<_>>()?;

    let mut arrivals: Vec<Vec<usize>> = vec![Vec::new(); horizon];
    let mut evs = Vec::with_capacity(placed.len());
    let mut present_delta = vec![0i64; horizon + 1];
    for ((start, p), q) in placed.iter().zip(advice) {
        let first_slot = start.floor() as usize;
        if first_slot >= horizon {
            continue;
        }
        let end = (start + p.duration.max(0.0)).ceil() as usize;
        let last_slot = end.saturating_sub(1).max(first_slot).min(horizon - 1);
        present_delta[first_slot] += 1;
        present_delta[last_slot + 1] -= 1;
        arrivals[first_slot].push(evs.len());
        evs.push(Ev {
            first_slot,
            last_slot,
            malicious: label_malicious(p, options.threshold),
            advice: q.max(ADVICE_FLOOR),
        });
    }

    // EVs awaiting a verdict, carried across hours until they leave.
    let mut waiting: Vec<usize> = Vec::new();
    let mut hours = Vec::with_capacity(horizon);
    let mut present = 0i64;
    for t in 0..horizon {
        present += present_delta[t];
        waiting.retain(|&e| evs[e].last_slot >= t);
        waiting.extend_from_slice(&arrivals[t]);
        let population = std::mem::take(&mut waiting);
        let row = test_hour(t, present as usize, &population, &evs, options)?;
        hours.push(row);
    }
    debug_assert!(evs.iter().all(|e| e.first_slot <= e.last_slot));
    Ok(summarize(hours, options.seed))
}

fn test_hour(t: usize, present: usize, population: &[usize], evs: &[Ev], options: &ReplayOptions) -> Result<HourRow> {
    let n = population.len();
    let malicious_present = population.iter().filter(|&&e| evs[e].malicious).count();
    let mut row = HourRow { hour_index: t, present, n_users: n, n_tests: 0, detected: 0, malicious_present };
    if n == 0 {
        return Ok(row);
    }
    let raw: Vec<f64> = population.iter().map(|&e| evs[e].advice).collect();
    let budget: f64 = raw.iter().sum();
    let q = normalize_to_budget(&raw, budget.min(n as f64))?;
    let truth: Vec<bool> = population.iter().map(|&e| evs[e].malicious).collect();
    let instance = Instance::from_truth(truth, ProbVector::new(q.values().to_vec())?)?;
    let floor = 1.0 / n as f64;
    let config = GtuaConfig {
        eta: options.eta.map_or(floor, |eta| eta.max(floor)),
        pool_estimate: options.pool_estimate,
    };
    let mut session = TestSession::new(&instance);
    let run = run_gtua(&mut session, &q, &config)?;
    if !verify_detection(&instance, &run.detected) {
        return Err(Error::PreconditionViolated(format!("hour {t}: detected set differs from ground truth")));
    }
    row.n_tests = session.tests_used();
    row.detected = run.detected.len();
    Ok(row)
}

fn summarize(hours: Vec<HourRow>, seed: u64) -> ReplayReport {
    let mut users = [0usize; 24];
    let mut tests = [0usize; 24];
    let mut days = [0usize; 24];
    for h in &hours {
        let k = h.hour_index % 24;
        users[k] += h.n_users;
        tests[k] += h.n_tests;
        days[k] += 1;
    }
    let by_hour_of_day = (0..24)
        .filter(|&k| days[k] > 0)
        .map(|k| HourOfDayRow {
            hour: k + 1,
            n_users: users[k] as f64 / days[k] as f64,
            n_tests: tests[k] as f64 / days[k] as f64,
            ratio: if users[k] == 0 { 0.0 } else { tests[k] as f64 / users[k] as f64 },
        })
        .collect();
    let total_tests = hours.iter().map(|h| h.n_tests).sum();
    let total_user_hours = hours.iter().map(|h| h.n_users).sum();
    let total_malicious = hours.iter().map(|h| h.malicious_present).sum();
    let reduction = if total_user_hours == 0 { 0.0 } else { 1.0 - total_tests as f64 / total_user_hours as f64 };
    ReplayReport { hours, by_hour_of_day, total_tests, total_user_hours, total_malicious, reduction, seed }
}
