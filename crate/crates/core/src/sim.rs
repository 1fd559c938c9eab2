//! Discharge-to-bed-ready process model.
//!
//! Each discharged bed goes through four stages:
//!
//! 1. **Dirty**: queues for a UA unit, which designates the bed dirty.
//! 2. **Assigned**: dispatch lag until the bed is handed to EVS (pure delay).
//! 3. **Clean**: queues for an EVS unit, which cleans the bed.
//! 4. **In progress**: pure delay until the bed is back in service.
//!
//! Bed turnaround time (BTT) is measured from wheel-out to ready by default.
//!
//! Arrivals and all four service draws of every bed are generated up front
//! from dedicated random streams, so two scenarios that differ only in
//! staffing see identical beds with identical service times (common random
//! numbers).

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{DesError, Engine, PoolId};
use crate::domain::{
    fallback_dist, ArrivalMode, BttStart, DomainError, EmpiricalDist, FeatureVector, Scenario,
    Shift, SimRng, MINUTES_PER_DAY,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Kernel(#[from] DesError),
    #[error("bed {0} has not completed all stages")]
    IncompleteTrace(u64),
    #[error("scenario #{index} rejected: {source}")]
    InvalidGridEntry { index: usize, source: DomainError },
    #[error("empty scenario grid")]
    EmptyGrid,
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

pub const STAGE_NAMES: [&str; 4] = ["dirty", "assigned", "clean", "in_progress"];

/// Life of one bed through the cleaning pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BedTrace {
    pub bed_id: u64,
    pub dirty_at: f64,
    /// Realized service or delay draw of each stage.
    pub service: [f64; 4],
    pub stage_starts: [Option<f64>; 4],
    pub stage_ends: [Option<f64>; 4],
    pub ready_at: Option<f64>,
}

impl BedTrace {
    fn new(bed_id: u64, dirty_at: f64, service: [f64; 4]) -> Self {
        Self {
            bed_id,
            dirty_at,
            service,
            stage_starts: [None; 4],
            stage_ends: [None; 4],
            ready_at: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.ready_at.is_some()
    }

    /// Time spent queueing for UA and EVS units.
    pub fn queue_waits(&self) -> Option<[f64; 2]> {
        Some([
            self.stage_starts[0]? - self.dirty_at,
            self.stage_starts[2]? - self.stage_ends[1]?,
        ])
    }
}

/// Turnaround of a completed bed, wheel-out to ready.
pub fn compute_btt(trace: &BedTrace) -> Result<f64> {
    compute_btt_from(trace, BttStart::Dirty)
}

pub fn compute_btt_from(trace: &BedTrace, start: BttStart) -> Result<f64> {
    let ready = trace
        .ready_at
        .ok_or(SimError::IncompleteTrace(trace.bed_id))?;
    let from = match start {
        BttStart::Dirty => trace.dirty_at,
        BttStart::CleanStart => {
            trace.stage_starts[2].ok_or(SimError::IncompleteTrace(trace.bed_id))?
        }
    };
    Ok(ready - from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: u32,
    pub seed: u64,
    /// Every bed whose wheel-out fell after warm-up, completed or not.
    pub traces: Vec<BedTrace>,
    /// Mean BTT of completed beds per post-warm-up day (by wheel-out day).
    pub daily_mean_btt: Vec<Option<f64>>,
    /// `None` when no post-warm-up bed completed.
    pub overall_mean_btt: Option<f64>,
    pub generated: u64,
    pub completed: u64,
    pub uncompleted_count: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: u32,
    pub seed: u64,
    pub overall_mean_btt: Option<f64>,
    pub generated: u64,
    pub completed: u64,
    pub uncompleted_count: u64,
}

impl From<&ReplicationResult> for ReplicationSummary {
    fn from(r: &ReplicationResult) -> Self {
        Self {
            replication: r.replication,
            seed: r.seed,
            overall_mean_btt: r.overall_mean_btt,
            generated: r.generated,
            completed: r.completed,
            uncompleted_count: r.uncompleted_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub per_replication: Vec<ReplicationSummary>,
    /// Mean of the defined replication means.
    pub mean_btt: Option<f64>,
    /// Sample standard deviation of replication means; 0 with one replication.
    pub sd_btt: f64,
    pub warnings: Vec<String>,
}

/// Deterministic per-replication seed (SplitMix64 finalizer over seed and index).
pub fn replication_seed(scenario_seed: u64, replication: u32) -> u64 {
    let mut z = scenario_seed ^ (replication as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ARRIVAL_STREAM: u64 = 1;
const SERVICE_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Wheel-out instants for one shift of one operational day, sorted.
pub fn generate_discharges<R: Rng + ?Sized>(
    scenario: &Scenario,
    day: u32,
    shift: Shift,
    rng: &mut R,
) -> Vec<f64> {
    let mean = scenario.features.discharges(shift);
    let count = match scenario.arrival_mode {
        ArrivalMode::Exact => mean.round() as u64,
        ArrivalMode::Poisson if mean <= 0.0 => 0,
        ArrivalMode::Poisson => Poisson::new(mean)
            .map(|p| p.sample(rng) as u64)
            .unwrap_or(0),
    };
    let (start, end) = scenario.calendar.window(day, shift);
    let width = end - start;
    let mut times: Vec<f64> = (0..count)
        .map(|_| {
            let t = start + rng.random::<f64>() * width;
            // Guard the open upper bound against rounding.
            if t >= end {
                start
            } else {
                t
            }
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times
}

fn stage_distributions(scenario: &Scenario) -> Result<[EmpiricalDist; 4]> {
    let means = scenario.features.stage_means();
    let mut out: Vec<EmpiricalDist> = Vec::with_capacity(4);
    for (k, mean) in means.into_iter().enumerate() {
        let dist = match &scenario.stage_dists[k] {
            Some(d) => d.clone(),
            None => fallback_dist(
                mean,
                scenario.stage_cv,
                replication_seed(scenario.seed, 10_000 + k as u32),
            )?,
        };
        out.push(dist);
    }
    Ok(out.try_into().expect("four stages"))
}

#[derive(Debug, Clone, Copy)]
enum BedEvent {
    Discharge(usize),
    UaGranted(usize),
    DirtyDone(usize),
    AssignedDone(usize),
    EvsGranted(usize),
    CleanDone(usize),
    ReadyAt(usize),
}

struct BedFlow {
    ua: PoolId,
    evs: PoolId,
    beds: Vec<BedTrace>,
}

impl BedFlow {
    fn step(&mut self, eng: &mut Engine<BedEvent>, ev: BedEvent) -> Result<(), DesError> {
        let now = eng.now();
        match ev {
            BedEvent::Discharge(b) => {
                eng.acquire(self.ua, BedEvent::UaGranted(b))?;
            }
            BedEvent::UaGranted(b) => {
                let bed = &mut self.beds[b];
                bed.stage_starts[0] = Some(now);
                eng.schedule_in(bed.service[0], BedEvent::DirtyDone(b))?;
            }
            BedEvent::DirtyDone(b) => {
                eng.release(self.ua)?;
                let bed = &mut self.beds[b];
                bed.stage_ends[0] = Some(now);
                bed.stage_starts[1] = Some(now);
                eng.schedule_in(bed.service[1], BedEvent::AssignedDone(b))?;
            }
            BedEvent::AssignedDone(b) => {
                self.beds[b].stage_ends[1] = Some(now);
                eng.acquire(self.evs, BedEvent::EvsGranted(b))?;
            }
            BedEvent::EvsGranted(b) => {
                let bed = &mut self.beds[b];
                bed.stage_starts[2] = Some(now);
                eng.schedule_in(bed.service[2], BedEvent::CleanDone(b))?;
            }
            BedEvent::CleanDone(b) => {
                eng.release(self.evs)?;
                let bed = &mut self.beds[b];
                bed.stage_ends[2] = Some(now);
                bed.stage_starts[3] = Some(now);
                eng.schedule_in(bed.service[3], BedEvent::ReadyAt(b))?;
            }
            BedEvent::ReadyAt(b) => {
                let bed = &mut self.beds[b];
                bed.stage_ends[3] = Some(now);
                bed.ready_at = Some(now);
            }
        }
        Ok(())
    }
}

impl crate::des::Handler<BedEvent> for BedFlow {
    fn handle(&mut self, engine: &mut Engine<BedEvent>, event: BedEvent) -> Result<(), String> {
        self.step(engine, event).map_err(|e| e.to_string())
    }
}

fn staffing_warnings(scenario: &Scenario) -> Vec<String> {
    let total_discharges: f64 = Shift::ALL
        .iter()
        .map(|&s| scenario.features.discharges(s))
        .sum();
    let mut warnings = Vec::new();
    if total_discharges > 0.0 {
        if scenario.ua_capacity().iter().all(|&c| c == 0) {
            warnings.push(
                "no UA capacity in any shift: beds can never be designated dirty".to_string(),
            );
        }
        if scenario.evs_capacity().iter().all(|&c| c == 0) {
            warnings.push("no EVS capacity in any shift: beds can never be cleaned".to_string());
        }
    }
    warnings
}

/// Runs one replication with the given replication index.
pub fn simulate_replication(scenario: &Scenario, replication: u32) -> Result<ReplicationResult> {
    scenario.validate()?;
    let seed = replication_seed(scenario.seed, replication);
    let dists = stage_distributions(scenario)?;
    simulate_with_seed(scenario, &dists, replication, seed)
}

fn simulate_with_seed(
    scenario: &Scenario,
    dists: &[EmpiricalDist; 4],
    replication: u32,
    seed: u64,
) -> Result<ReplicationResult> {
    let mut arrivals = stream(seed, ARRIVAL_STREAM);
    let mut dirty_at = Vec::new();
    for day in 0..scenario.horizon_days {
        for shift in Shift::ALL {
            dirty_at.extend(generate_discharges(scenario, day, shift, &mut arrivals));
        }
    }
    run_beds(scenario, dists, replication, seed, &dirty_at)
}

/// Replays a fixed list of wheel-out instants instead of generating
/// discharges. Service draws still come from the replication's stream.
pub fn simulate_fixed_arrivals(
    scenario: &Scenario,
    dirty_at: &[f64],
    replication: u32,
) -> Result<ReplicationResult> {
    scenario.validate()?;
    let dists = stage_distributions(scenario)?;
    let mut sorted = dirty_at.to_vec();
    sorted.sort_by(f64::total_cmp);
    run_beds(
        scenario,
        &dists,
        replication,
        replication_seed(scenario.seed, replication),
        &sorted,
    )
}

fn run_beds(
    scenario: &Scenario,
    dists: &[EmpiricalDist; 4],
    replication: u32,
    seed: u64,
    dirty_at: &[f64],
) -> Result<ReplicationResult> {
    let mut services = stream(seed, SERVICE_STREAM);
    let mut beds = Vec::with_capacity(dirty_at.len());
    for &t in dirty_at {
        let mut service = [0.0; 4];
        for (k, d) in dists.iter().enumerate() {
            service[k] = d.sample(&mut services)?;
        }
        beds.push(BedTrace::new(beds.len() as u64, t, service));
    }

    let mut eng: Engine<BedEvent> = Engine::new(scenario.calendar);
    let ua = eng.add_pool("ua", scenario.ua_capacity());
    let evs = eng.add_pool("evs", scenario.evs_capacity());
    for (i, bed) in beds.iter().enumerate() {
        eng.schedule(bed.dirty_at, BedEvent::Discharge(i))?;
    }
    let mut flow = BedFlow { ua, evs, beds };
    let horizon = scenario.horizon_days as f64 * MINUTES_PER_DAY as f64;
    eng.run(horizon, &mut flow)?;

    let generated_total = flow.beds.len() as u64;
    let warmup_end = scenario.warmup_days as f64 * MINUTES_PER_DAY as f64;
    let days = (scenario.horizon_days - scenario.warmup_days) as usize;
    let mut day_sum = vec![0.0; days];
    let mut day_n = vec![0u64; days];
    let mut total = 0.0;
    let mut completed = 0u64;
    let traces: Vec<BedTrace> = flow
        .beds
        .into_iter()
        .filter(|b| b.dirty_at >= warmup_end)
        .collect();
    for bed in &traces {
        if !bed.is_complete() {
            continue;
        }
        let btt = compute_btt_from(bed, scenario.btt_start)?;
        let day = ((bed.dirty_at - warmup_end) / MINUTES_PER_DAY as f64) as usize;
        day_sum[day.min(days - 1)] += btt;
        day_n[day.min(days - 1)] += 1;
        total += btt;
        completed += 1;
    }
    let generated = traces.len() as u64;
    let mut warnings = staffing_warnings(scenario);
    if generated_total > 0 && completed == 0 && generated > 0 && warnings.is_empty() {
        warnings.push("no post-warm-up bed completed before the horizon".to_string());
    }
    Ok(ReplicationResult {
        replication,
        seed,
        daily_mean_btt: day_sum
            .iter()
            .zip(&day_n)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
        overall_mean_btt: (completed > 0).then(|| total / completed as f64),
        generated,
        completed,
        uncompleted_count: generated - completed,
        traces,
        warnings,
    })
}

/// Runs all replications of a scenario and aggregates their means.
/// Replications execute in parallel; aggregation follows replication index.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult> {
    scenario.validate()?;
    let dists = stage_distributions(scenario)?;
    let reps: Vec<ReplicationResult> = (0..scenario.replications)
        .into_par_iter()
        .map(|r| simulate_with_seed(scenario, &dists, r, replication_seed(scenario.seed, r)))
        .collect::<Result<_>>()?;
    Ok(aggregate(&reps))
}

/// Single-threaded variant of [`run_scenario`]; produces identical output.
pub fn run_scenario_sequential(scenario: &Scenario) -> Result<ScenarioResult> {
    scenario.validate()?;
    let dists = stage_distributions(scenario)?;
    let reps: Vec<ReplicationResult> = (0..scenario.replications)
        .map(|r| simulate_with_seed(scenario, &dists, r, replication_seed(scenario.seed, r)))
        .collect::<Result<_>>()?;
    Ok(aggregate(&reps))
}

fn aggregate(reps: &[ReplicationResult]) -> ScenarioResult {
    let means: Vec<f64> = reps.iter().filter_map(|r| r.overall_mean_btt).collect();
    let mean_btt = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);
    let sd_btt = match mean_btt {
        Some(m) if means.len() > 1 => {
            (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
        }
        _ => 0.0,
    };
    let mut warnings: Vec<String> = Vec::new();
    for w in reps.iter().flat_map(|r| &r.warnings) {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }
    ScenarioResult {
        per_replication: reps.iter().map(ReplicationSummary::from).collect(),
        mean_btt,
        sd_btt,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub features: FeatureVector,
    pub result: ScenarioResult,
}

/// Runs every scenario of a grid, preserving order. The whole grid is
/// validated before any simulation starts.
pub fn sweep(grid: &[Scenario]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    for (index, s) in grid.iter().enumerate() {
        s.validate()
            .map_err(|source| SimError::InvalidGridEntry { index, source })?;
    }
    grid.par_iter()
        .map(|s| {
            Ok(SweepRow {
                features: s.features,
                result: run_scenario_sequential(s)?,
            })
        })
        .collect()
}

/// Inclusive range of one swept input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

/// Ranges for synthetic training sweeps, one per feature group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRanges {
    pub discharges: Range,
    pub staff: Range,
    pub stage_mean: Range,
}

impl Default for SweepRanges {
    fn default() -> Self {
        Self {
            discharges: Range {
                min: 0.0,
                max: 40.0,
            },
            staff: Range {
                min: 1.0,
                max: 10.0,
            },
            stage_mean: Range {
                min: 1.0,
                max: 120.0,
            },
        }
    }
}

impl SweepRanges {
    fn for_feature(&self, idx: usize) -> Range {
        match idx {
            0..=2 => self.discharges,
            3..=8 => self.staff,
            _ => self.stage_mean,
        }
    }
}

/// Latin-hypercube design over the 13 features: each feature's range is cut
/// into `n` equal strata and every stratum is used exactly once. All other
/// scenario settings are copied from `base`; scenario seeds are derived from
/// `seed` by row.
pub fn latin_hypercube(
    base: &Scenario,
    n: usize,
    ranges: &SweepRanges,
    seed: u64,
) -> Vec<Scenario> {
    use rand::seq::SliceRandom;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(13);
    for f in 0..13 {
        let r = ranges.for_feature(f);
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        columns.push(
            strata
                .into_iter()
                .map(|s| {
                    let u = (s as f64 + rng.random::<f64>()) / n as f64;
                    r.min + u * (r.max - r.min)
                })
                .collect(),
        );
    }
    (0..n)
        .map(|i| {
            let mut values = [0.0; 13];
            for (f, col) in columns.iter().enumerate() {
                values[f] = col[i];
            }
            let mut s = base.clone();
            s.features = FeatureVector::from_array(values);
            s.seed = replication_seed(seed, i as u32 + 1_000_000);
            s
        })
        .collect()
}
