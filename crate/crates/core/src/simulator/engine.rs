//! Single-threaded fork-join event loop.

use super::arrivals::ArrivalSchedule;
use super::stats::{batch_means_error, SimStats, TrajectoryPoint};
use super::PolicySchedule;
use crate::error::{Error, Result};
use crate::model::SystemSpec;
use crate::routing::RoutingPolicy;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

const ARRIVAL_STREAM: u64 = 1 << 32;
const ROUTING_STREAM: u64 = 2 << 32;
const SERVICE_STREAM: u64 = 3 << 32;

pub(crate) enum Arrivals<'a> {
    Schedule(&'a ArrivalSchedule),
    /// One job of this type enters whenever the system is empty.
    Isolated(usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Stop {
    /// Run until `target` departures; the first `warmup` are discarded.
    Departures { target: u64, warmup: u64 },
    /// Run until `horizon`; measure from `warmup` on.
    Horizon { horizon: f64, warmup: f64 },
}

pub(crate) struct EngineConfig {
    pub stop: Stop,
    pub seed: u64,
    pub occupancy_cap: usize,
    pub sample_interval: Option<f64>,
    pub batches: usize,
}

#[derive(Clone, Copy)]
enum Kind {
    Arrival(u32),
    Completion(u32),
}

struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// A pattern resolved to `(first server id, class size, tasks)` triples.
struct Dispatch {
    cumulative: Vec<f64>,
    targets: Vec<Vec<(usize, usize, usize)>>,
    tasks: Vec<u32>,
}

fn dispatch_tables(system: &SystemSpec, policy: &RoutingPolicy) -> Vec<Dispatch> {
    let offsets = system.class_offsets();
    let coded = system.coded_class();
    (0..system.k())
        .map(|i| {
            let mut cumulative = Vec::new();
            let mut targets = Vec::new();
            let mut tasks = Vec::new();
            let mut acc = 0.0;
            for e in policy.entries(i).iter().filter(|e| e.prob > 0.0) {
                acc += e.prob;
                cumulative.push(acc);
                targets.push(
                    (0..system.num_classes())
                        .filter_map(|c| {
                            let m = e.pattern.tasks_on(c, coded);
                            (m > 0).then(|| (offsets[c], system.class_size(c), m))
                        })
                        .collect(),
                );
                tasks.push(e.pattern.task_count() as u32);
            }
            // Guard against rounding in the running sum.
            if let Some(last) = cumulative.last_mut() {
                *last = f64::INFINITY;
            }
            Dispatch {
                cumulative,
                targets,
                tasks,
            }
        })
        .collect()
}

struct Job {
    job_type: u32,
    arrival: f64,
    remaining: u32,
}

struct Engine<'a> {
    arrivals: Arrivals<'a>,
    policies: Vec<(Option<Vec<f64>>, Vec<Dispatch>)>,
    queues: Vec<VecDeque<u32>>,
    jobs: Vec<Job>,
    free: Vec<u32>,
    heap: BinaryHeap<Event>,
    seq: u64,
    arrival_rng: Vec<ChaCha8Rng>,
    routing_rng: Vec<ChaCha8Rng>,
    service_rng: Vec<ChaCha8Rng>,
    in_system: usize,
    per_type: Vec<usize>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    /// Next arrival of `job_type` after `from` under piecewise-constant
    /// rates: a candidate that overshoots a rate switch is discarded and
    /// redrawn from the switch, which is exact by memorylessness.
    fn schedule_arrival(&mut self, job_type: usize, from: f64, limit: f64) {
        let Arrivals::Schedule(schedule) = self.arrivals else {
            return;
        };
        if let ArrivalSchedule::SquareWave(w) = schedule {
            if w[job_type].low == 0.0 && w[job_type].high == 0.0 {
                return;
            }
        }
        let mut t = from;
        while t <= limit {
            let rate = schedule.rate(job_type, t);
            let boundary = schedule.next_change(job_type, t);
            if rate > 0.0 {
                let gap: f64 = self.arrival_rng[job_type].sample(Exp1);
                let cand = t + gap / rate;
                if cand < boundary {
                    self.push(cand, Kind::Arrival(job_type as u32));
                    return;
                }
            }
            if !boundary.is_finite() {
                return;
            }
            t = boundary;
        }
    }

    fn phase_index(&self, t: f64) -> usize {
        if self.policies.len() == 1 {
            return 0;
        }
        let Arrivals::Schedule(schedule) = self.arrivals else {
            return 0;
        };
        let rates = schedule.rates_at(t);
        self.policies
            .iter()
            .position(|(r, _)| r.as_deref() == Some(rates.as_slice()))
            .expect("policy schedule covers every phase")
    }

    fn admit(&mut self, job_type: usize, now: f64) {
        let phase = self.phase_index(now);
        let u: f64 = self.routing_rng[job_type].random();
        let table = &self.policies[phase].1[job_type];
        let choice = table.cumulative.iter().position(|&c| u < c).unwrap_or(0);
        let tasks = table.tasks[choice];
        let groups = table.targets[choice].len();
        let job = Job {
            job_type: job_type as u32,
            arrival: now,
            remaining: tasks,
        };
        let slot = match self.free.pop() {
            Some(s) => {
                self.jobs[s as usize] = job;
                s
            }
            None => {
                self.jobs.push(job);
                (self.jobs.len() - 1) as u32
            }
        };
        self.in_system += 1;
        self.per_type[job_type] += 1;
        for g in 0..groups {
            let (first, size, m) = self.policies[phase].1[job_type].targets[choice][g];
            if m == 1 {
                let s = first + self.routing_rng[job_type].random_range(0..size);
                self.enqueue(s, slot, now);
            } else {
                let picked = index::sample(&mut self.routing_rng[job_type], size, m);
                for s in picked.iter() {
                    self.enqueue(first + s, slot, now);
                }
            }
        }
    }

    fn enqueue(&mut self, server: usize, slot: u32, now: f64) {
        self.queues[server].push_back(slot);
        if self.queues[server].len() == 1 {
            self.start_service(server, now);
        }
    }

    fn start_service(&mut self, server: usize, now: f64) {
        let d: f64 = self.service_rng[server].sample(Exp1);
        self.push(now + d, Kind::Completion(server as u32));
    }
}

pub(crate) fn run(
    system: &SystemSpec,
    arrivals: Arrivals<'_>,
    policies: &PolicySchedule,
    cfg: &EngineConfig,
) -> Result<SimStats> {
    let k = system.k();
    let n = system.n();
    let tables: Vec<(Option<Vec<f64>>, Vec<Dispatch>)> = match policies {
        PolicySchedule::Fixed(p) => vec![(None, dispatch_tables(system, p))],
        PolicySchedule::PerPhase(list) => list
            .iter()
            .map(|(r, p)| (Some(r.clone()), dispatch_tables(system, p)))
            .collect(),
    };
    if tables.iter().any(|(_, t)| t.iter().any(|d| d.cumulative.is_empty())) {
        return Err(Error::InvalidInput("a job type has no pattern with positive probability".into()));
    }
    let mut e = Engine {
        arrivals,
        policies: tables,
        queues: vec![VecDeque::new(); n],
        jobs: Vec::new(),
        free: Vec::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        arrival_rng: (0..k as u64).map(|i| stream(cfg.seed, ARRIVAL_STREAM + i)).collect(),
        routing_rng: (0..k as u64).map(|i| stream(cfg.seed, ROUTING_STREAM + i)).collect(),
        service_rng: (0..n as u64).map(|i| stream(cfg.seed, SERVICE_STREAM + i)).collect(),
        in_system: 0,
        per_type: vec![0; k],
    };

    let (limit, warm_time_target) = match cfg.stop {
        Stop::Departures { .. } => (f64::INFINITY, None),
        Stop::Horizon { horizon, warmup } => (horizon, Some(warmup)),
    };
    match e.arrivals {
        Arrivals::Schedule(_) => {
            for i in 0..k {
                e.schedule_arrival(i, 0.0, limit);
            }
        }
        Arrivals::Isolated(i) => e.push(0.0, Kind::Arrival(i as u32)),
    }
    if e.heap.is_empty() {
        return Err(Error::InvalidInput("the arrival process never produces a job".into()));
    }

    let mut warm = match cfg.stop {
        Stop::Departures { warmup, .. } => warmup == 0,
        Stop::Horizon { warmup, .. } => warmup <= 0.0,
    };
    let mut warm_time = 0.0;
    let mut jobs_at_warmup = 0;
    let mut last_t = 0.0;
    let mut area = 0.0;
    let mut area_type = vec![0.0; k];
    let mut peak = 0;
    let mut departures_total: u64 = 0;
    let mut departures_counted: u64 = 0;
    let mut arrivals_counted: u64 = 0;
    let mut responses: Vec<f64> = Vec::new();
    let mut resp_sum = vec![0.0; k];
    let mut resp_cnt = vec![0u64; k];
    let mut trajectory: Option<Vec<TrajectoryPoint>> = cfg.sample_interval.map(|_| Vec::new());
    let mut sample_idx: u64 = 0;
    let end_time;

    loop {
        let next_time = e.heap.peek().map_or(f64::INFINITY, |ev| ev.time);
        let stop_time = next_time.min(limit);

        // Samples at the next event's time show the state just before it.
        if let (Some(dt), Some(tr)) = (cfg.sample_interval, trajectory.as_mut()) {
            while stop_time.is_finite() {
                let ts = sample_idx as f64 * dt;
                if ts > stop_time {
                    break;
                }
                tr.push(TrajectoryPoint {
                    time: ts,
                    total_jobs: e.in_system,
                    jobs_per_type: e.per_type.clone(),
                });
                sample_idx += 1;
            }
        }

        if let Some(wt) = warm_time_target {
            if !warm && stop_time >= wt {
                warm = true;
                warm_time = wt;
                jobs_at_warmup = e.in_system;
                peak = e.in_system;
                last_t = wt;
            }
        }
        if warm {
            let dt = stop_time - last_t;
            area += e.in_system as f64 * dt;
            for (a, &c) in area_type.iter_mut().zip(&e.per_type) {
                *a += c as f64 * dt;
            }
            last_t = stop_time;
        }
        if next_time > limit {
            end_time = limit;
            break;
        }
        let ev = e.heap.pop().expect("peeked event");
        let now = ev.time;
        match ev.kind {
            Kind::Arrival(ty) => {
                let ty = ty as usize;
                e.admit(ty, now);
                if warm {
                    arrivals_counted += 1;
                    peak = peak.max(e.in_system);
                }
                if e.in_system > cfg.occupancy_cap {
                    return Err(Error::Unstable {
                        time: now,
                        jobs: e.in_system,
                    });
                }
                e.schedule_arrival(ty, now, limit);
            }
            Kind::Completion(server) => {
                let server = server as usize;
                let slot = e.queues[server].pop_front().expect("busy server has a task");
                let job = &mut e.jobs[slot as usize];
                debug_assert!(job.remaining > 0, "FCFS queue holds a finished task");
                job.remaining -= 1;
                if job.remaining == 0 {
                    let ty = job.job_type as usize;
                    let resp = now - job.arrival;
                    e.free.push(slot);
                    e.in_system -= 1;
                    e.per_type[ty] -= 1;
                    departures_total += 1;
                    if warm {
                        departures_counted += 1;
                        responses.push(resp);
                        resp_sum[ty] += resp;
                        resp_cnt[ty] += 1;
                    }
                    if let Stop::Departures { target, warmup } = cfg.stop {
                        if !warm && departures_total == warmup {
                            warm = true;
                            warm_time = now;
                            jobs_at_warmup = e.in_system;
                            peak = e.in_system;
                            last_t = now;
                        }
                        if departures_total == target {
                            end_time = now;
                            break;
                        }
                    }
                    if let Arrivals::Isolated(i) = e.arrivals {
                        if e.in_system == 0 {
                            e.push(now + 1.0, Kind::Arrival(i as u32));
                        }
                    }
                }
                if !e.queues[server].is_empty() {
                    e.start_service(server, now);
                }
            }
        }
    }

    if departures_counted == 0 {
        return Err(Error::InvalidInput(
            "no job departed inside the measurement window".into(),
        ));
    }
    let window = end_time - warm_time;
    let mean_response = responses.iter().sum::<f64>() / responses.len() as f64;
    Ok(SimStats {
        mean_response,
        std_error: batch_means_error(&responses, cfg.batches),
        per_type_mean_response: resp_sum
            .iter()
            .zip(&resp_cnt)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        mean_jobs_in_system: if window > 0.0 { area / window } else { 0.0 },
        per_type_mean_jobs: area_type
            .iter()
            .map(|a| if window > 0.0 { a / window } else { 0.0 })
            .collect(),
        peak_jobs_in_system: peak,
        departures_counted,
        arrivals_counted,
        jobs_at_warmup,
        jobs_at_end: e.in_system,
        warmup_time: warm_time,
        end_time,
        replications: 1,
        replication_means: vec![mean_response],
        trajectory,
    })
}
