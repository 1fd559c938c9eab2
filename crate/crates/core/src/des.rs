//! Discrete-event kernel: a future-event list with FIFO tie-breaking and
//! multi-server resource pools whose capacity follows the shift calendar.
//!
//! Simulation time is minutes since the start of day 0's day shift (see
//! [`ShiftCalendar::window`]). Requests granted by a pool are delivered to the
//! handler as an ordinary event at the grant instant.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Shift, ShiftCalendar, MINUTES_PER_DAY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesError {
    #[error("causality violation: event at t={requested} scheduled when clock is at t={now}")]
    Causality { now: f64, requested: f64 },
    #[error("event time {0} is not finite")]
    NonFiniteTime(f64),
    #[error("unknown resource pool #{0}")]
    UnknownPool(usize),
    #[error("release on pool `{0}` with no unit in use")]
    ReleaseWithoutHold(String),
    #[error("handler failed at t={time} on event {event}: {message}")]
    Handler {
        time: f64,
        event: String,
        message: String,
    },
}

pub type Result<T, E = DesError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolId(pub usize);

/// Identifier of one acquire request; increases in request order per pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ticket(pub u64);

#[derive(Debug)]
enum Item<E> {
    User(E),
    ShiftChange(Shift),
}

#[derive(Debug)]
struct Scheduled<E> {
    time: f64,
    seq: u64,
    item: Item<E>,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<E> Eq for Scheduled<E> {}
impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Scheduled<E> {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug)]
struct Waiting<E> {
    ticket: Ticket,
    requested_at: f64,
    on_grant: E,
}

/// Per-pool collector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub name: String,
    pub requests: u64,
    pub grants: u64,
    pub releases: u64,
    pub total_wait: f64,
    pub max_wait: f64,
    /// Integral of units in use over time (unit-minutes).
    pub busy_minutes: f64,
    pub queued_at_end: usize,
    pub in_use_at_end: u32,
}

impl PoolStats {
    pub fn mean_wait(&self) -> Option<f64> {
        (self.grants > 0).then(|| self.total_wait / self.grants as f64)
    }
}

#[derive(Debug)]
struct ResourcePool<E> {
    name: String,
    capacity_by_shift: [u32; 3],
    capacity: u32,
    in_use: u32,
    queue: VecDeque<Waiting<E>>,
    next_ticket: u64,
    last_change: f64,
    stats: PoolStats,
}

impl<E> ResourcePool<E> {
    fn account_busy(&mut self, now: f64) {
        self.stats.busy_minutes += self.in_use as f64 * (now - self.last_change);
        self.last_change = now;
    }
}

/// Snapshot of a pool for invariant checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolState {
    pub capacity: u32,
    pub in_use: u32,
    pub queued: usize,
}

impl PoolState {
    pub fn idle(&self) -> u32 {
        self.capacity.saturating_sub(self.in_use)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub now: f64,
    pub day_index: u32,
    pub shift: Shift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceEntry {
    Dispatch {
        time: f64,
        seq: u64,
    },
    Grant {
        pool: usize,
        ticket: Ticket,
        requested_at: f64,
        granted_at: f64,
    },
    Capacity {
        pool: usize,
        time: f64,
        capacity: u32,
        in_use: u32,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub end_time: f64,
    pub dispatched: u64,
    pub pending_events: usize,
    pub pools: Vec<PoolStats>,
}

/// Receives dispatched events. Returning an error aborts the run.
pub trait Handler<E> {
    fn handle(&mut self, engine: &mut Engine<E>, event: E) -> Result<(), String>;
}

impl<E, F> Handler<E> for F
where
    F: FnMut(&mut Engine<E>, E) -> Result<(), String>,
{
    fn handle(&mut self, engine: &mut Engine<E>, event: E) -> Result<(), String> {
        self(engine, event)
    }
}

pub struct Engine<E> {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Scheduled<E>>,
    pools: Vec<ResourcePool<E>>,
    calendar: ShiftCalendar,
    shift: Shift,
    dispatched: u64,
    user_pending: usize,
    trace: Option<Vec<TraceEntry>>,
}

impl<E: Debug + Clone> Engine<E> {
    pub fn new(calendar: ShiftCalendar) -> Self {
        let mut engine = Self {
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            pools: Vec::new(),
            calendar,
            shift: calendar.shift_at_sim(0.0),
            dispatched: 0,
            user_pending: 0,
            trace: None,
        };
        let (t, s) = calendar.next_boundary_after(0.0);
        engine.push(t, Item::ShiftChange(s));
        engine
    }

    /// Records dispatches, grants and capacity changes for inspection.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn clock(&self) -> SimClock {
        SimClock {
            now: self.now,
            day_index: (self.now / MINUTES_PER_DAY as f64).floor() as u32,
            shift: self.shift,
        }
    }

    pub fn add_pool(&mut self, name: impl Into<String>, capacity_by_shift: [u32; 3]) -> PoolId {
        let name = name.into();
        let capacity = capacity_by_shift[self.shift.index()];
        self.pools.push(ResourcePool {
            stats: PoolStats {
                name: name.clone(),
                ..Default::default()
            },
            name,
            capacity_by_shift,
            capacity,
            in_use: 0,
            queue: VecDeque::new(),
            next_ticket: 0,
            last_change: self.now,
        });
        PoolId(self.pools.len() - 1)
    }

    pub fn pool_state(&self, pool: PoolId) -> Result<PoolState> {
        let p = self
            .pools
            .get(pool.0)
            .ok_or(DesError::UnknownPool(pool.0))?;
        Ok(PoolState {
            capacity: p.capacity,
            in_use: p.in_use,
            queued: p.queue.len(),
        })
    }

    fn push(&mut self, time: f64, item: Item<E>) {
        if matches!(item, Item::User(_)) {
            self.user_pending += 1;
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Scheduled { time, seq, item });
    }

    /// Enqueues `event` at absolute time `time`.
    pub fn schedule(&mut self, time: f64, event: E) -> Result<()> {
        if !time.is_finite() {
            return Err(DesError::NonFiniteTime(time));
        }
        if time < self.now {
            return Err(DesError::Causality {
                now: self.now,
                requested: time,
            });
        }
        self.push(time, Item::User(event));
        Ok(())
    }

    pub fn schedule_in(&mut self, delay: f64, event: E) -> Result<()> {
        self.schedule(self.now + delay, event)
    }

    /// Requests one unit of `pool`. `on_grant` is dispatched at the grant
    /// instant, immediately if a unit is idle and nobody is waiting.
    pub fn acquire(&mut self, pool: PoolId, on_grant: E) -> Result<Ticket> {
        let now = self.now;
        let p = self
            .pools
            .get_mut(pool.0)
            .ok_or(DesError::UnknownPool(pool.0))?;
        let ticket = Ticket(p.next_ticket);
        p.next_ticket += 1;
        p.stats.requests += 1;
        p.queue.push_back(Waiting {
            ticket,
            requested_at: now,
            on_grant,
        });
        self.grant_waiting(pool.0);
        Ok(ticket)
    }

    /// Returns one unit to `pool` and hands it to the head of the queue.
    pub fn release(&mut self, pool: PoolId) -> Result<()> {
        let now = self.now;
        let p = self
            .pools
            .get_mut(pool.0)
            .ok_or(DesError::UnknownPool(pool.0))?;
        if p.in_use == 0 {
            return Err(DesError::ReleaseWithoutHold(p.name.clone()));
        }
        p.account_busy(now);
        p.in_use -= 1;
        p.stats.releases += 1;
        self.grant_waiting(pool.0);
        Ok(())
    }

    fn grant_waiting(&mut self, idx: usize) {
        let now = self.now;
        loop {
            let p = &mut self.pools[idx];
            if p.in_use >= p.capacity {
                break;
            }
            let Some(w) = p.queue.pop_front() else { break };
            p.account_busy(now);
            p.in_use += 1;
            let wait = now - w.requested_at;
            p.stats.grants += 1;
            p.stats.total_wait += wait;
            p.stats.max_wait = p.stats.max_wait.max(wait);
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEntry::Grant {
                    pool: idx,
                    ticket: w.ticket,
                    requested_at: w.requested_at,
                    granted_at: now,
                });
            }
            self.push(now, Item::User(w.on_grant));
        }
    }

    fn change_shift(&mut self, shift: Shift) {
        self.shift = shift;
        let now = self.now;
        for idx in 0..self.pools.len() {
            let p = &mut self.pools[idx];
            let cap = p.capacity_by_shift[shift.index()];
            if cap == p.capacity {
                continue;
            }
            // Running services are never preempted; a lower capacity only
            // blocks new grants until enough units have been released.
            p.capacity = cap;
            let in_use = p.in_use;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEntry::Capacity {
                    pool: idx,
                    time: now,
                    capacity: cap,
                    in_use,
                });
            }
            self.grant_waiting(idx);
        }
        let (t, s) = self.calendar.next_boundary_after(now);
        self.push(t, Item::ShiftChange(s));
    }

    /// True when only shift changes remain and none of them can ever grant
    /// a waiting request.
    fn quiescent(&self) -> bool {
        self.user_pending == 0
            && self
                .pools
                .iter()
                .all(|p| p.queue.is_empty() || p.capacity_by_shift.iter().all(|&c| c <= p.in_use))
    }

    /// Dispatches every event with time <= `until`, then parks the clock at
    /// `until` (or at the last event when `until` is infinite or `f64::MAX`
    /// and the system has drained).
    pub fn run<H: Handler<E>>(&mut self, until: f64, handler: &mut H) -> Result<RunStats> {
        let open_ended = until >= f64::MAX;
        while let Some(next) = self.queue.peek() {
            if next.time > until || (open_ended && self.quiescent()) {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEntry::Dispatch {
                    time: ev.time,
                    seq: ev.seq,
                });
            }
            match ev.item {
                Item::ShiftChange(s) => self.change_shift(s),
                Item::User(payload) => {
                    self.user_pending -= 1;
                    self.dispatched += 1;
                    let kept = payload.clone();
                    handler
                        .handle(self, payload)
                        .map_err(|message| DesError::Handler {
                            time: ev.time,
                            event: format!("{kept:?}"),
                            message,
                        })?;
                }
            }
        }
        if until > self.now && !open_ended {
            self.now = until;
        }
        Ok(self.stats())
    }

    pub fn stats(&self) -> RunStats {
        let pools = self
            .pools
            .iter()
            .map(|p| {
                let mut s = p.stats.clone();
                s.busy_minutes += p.in_use as f64 * (self.now - p.last_change);
                s.queued_at_end = p.queue.len();
                s.in_use_at_end = p.in_use;
                s
            })
            .collect();
        RunStats {
            end_time: self.now,
            dispatched: self.dispatched,
            pending_events: self.user_pending,
            pools,
        }
    }
}

/// Outcome of an M/M/c kernel self-check run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueCheck {
    pub arrivals: u64,
    pub served: u64,
    pub mean_wait: f64,
    pub end_time: f64,
}

/// Drives an M/M/c queue through the kernel: Poisson arrivals at rate
/// `lambda`, exponential service at rate `mu`, `servers` FIFO units, until
/// `arrivals` customers have entered. Returns the mean queue wait of the
/// customers granted a server.
pub fn simulate_mmc(
    lambda: f64,
    mu: f64,
    servers: u32,
    arrivals: u64,
    seed: u64,
) -> Result<QueueCheck> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Exp};

    #[derive(Debug, Clone, Copy)]
    enum Q {
        Arrive,
        Start,
        Depart,
    }

    let inter = Exp::new(lambda).map_err(|_| DesError::NonFiniteTime(lambda))?;
    let service = Exp::new(mu).map_err(|_| DesError::NonFiniteTime(mu))?;
    let mut arrival_rng = crate::domain::SimRng::seed_from_u64(seed);
    arrival_rng.set_stream(1);
    let mut service_rng = crate::domain::SimRng::seed_from_u64(seed);
    service_rng.set_stream(2);

    let mut eng: Engine<Q> = Engine::new(ShiftCalendar::default());
    let pool = eng.add_pool("servers", [servers; 3]);
    let mut entered = 0u64;
    eng.schedule(inter.sample(&mut arrival_rng), Q::Arrive)?;
    let mut handler = |e: &mut Engine<Q>, ev: Q| -> Result<(), String> {
        let r = match ev {
            Q::Arrive => {
                entered += 1;
                if entered < arrivals {
                    e.schedule_in(inter.sample(&mut arrival_rng), Q::Arrive)
                        .map_err(|x| x.to_string())?;
                }
                e.acquire(pool, Q::Start).map(|_| ())
            }
            Q::Start => e.schedule_in(service.sample(&mut service_rng), Q::Depart),
            Q::Depart => e.release(pool),
        };
        r.map_err(|x| x.to_string())
    };
    let stats = eng.run(f64::MAX, &mut handler)?;
    let p = &stats.pools[0];
    Ok(QueueCheck {
        arrivals: entered,
        served: p.releases,
        mean_wait: p.mean_wait().unwrap_or(0.0),
        end_time: stats.end_time,
    })
}
