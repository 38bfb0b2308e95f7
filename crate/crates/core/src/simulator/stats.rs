use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub total_jobs: usize,
    pub jobs_per_type: Vec<usize>,
}

/// Response-time and occupancy estimates of one run or a set of replications.
///
/// Counts satisfy `jobs_at_warmup + arrivals_counted = departures_counted +
/// jobs_at_end` for a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub mean_response: f64,
    /// Batch-means error for one run, across-replication error otherwise.
    /// `None` when it cannot be estimated.
    pub std_error: Option<f64>,
    pub per_type_mean_response: Vec<Option<f64>>,
    /// Time-average number of jobs over the measured window.
    pub mean_jobs_in_system: f64,
    pub per_type_mean_jobs: Vec<f64>,
    pub peak_jobs_in_system: usize,
    pub departures_counted: u64,
    pub arrivals_counted: u64,
    pub jobs_at_warmup: usize,
    pub jobs_at_end: usize,
    pub warmup_time: f64,
    pub end_time: f64,
    pub replications: usize,
    /// Mean response of every replication, in replication order.
    pub replication_means: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; `None` for fewer than two values.
pub(crate) fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (v.len() - 1) as f64).sqrt())
}

/// Standard error of the mean of `samples` from `batches` contiguous batch
/// means. Needs at least two observations per batch.
pub(crate) fn batch_means_error(samples: &[f64], batches: usize) -> Option<f64> {
    if batches < 2 || samples.len() < 2 * batches {
        return None;
    }
    let size = samples.len() / batches;
    let means: Vec<f64> = samples.chunks_exact(size).take(batches).map(mean).collect();
    sample_sd(&means).map(|sd| sd / (batches as f64).sqrt())
}

/// Pools independent replications. The trajectory of the first one is kept.
pub(crate) fn aggregate(runs: Vec<SimStats>) -> SimStats {
    let r = runs.len();
    let means: Vec<f64> = runs.iter().map(|s| s.mean_response).collect();
    let k = runs[0].per_type_mean_response.len();
    let per_type_mean_response = (0..k)
        .map(|i| {
            let v: Vec<f64> = runs.iter().filter_map(|s| s.per_type_mean_response[i]).collect();
            (!v.is_empty()).then(|| mean(&v))
        })
        .collect();
    let per_type_mean_jobs = (0..k)
        .map(|i| mean(&runs.iter().map(|s| s.per_type_mean_jobs[i]).collect::<Vec<_>>()))
        .collect();
    let avg = |f: fn(&SimStats) -> f64| mean(&runs.iter().map(f).collect::<Vec<_>>());
    SimStats {
        mean_response: mean(&means),
        std_error: sample_sd(&means).map(|sd| sd / (r as f64).sqrt()),
        per_type_mean_response,
        mean_jobs_in_system: avg(|s| s.mean_jobs_in_system),
        per_type_mean_jobs,
        peak_jobs_in_system: runs.iter().map(|s| s.peak_jobs_in_system).max().unwrap_or(0),
        departures_counted: runs.iter().map(|s| s.departures_counted).sum(),
        arrivals_counted: runs.iter().map(|s| s.arrivals_counted).sum(),
        jobs_at_warmup: runs.iter().map(|s| s.jobs_at_warmup).sum(),
        jobs_at_end: runs.iter().map(|s| s.jobs_at_end).sum(),
        warmup_time: avg(|s| s.warmup_time),
        end_time: avg(|s| s.end_time),
        replications: r,
        replication_means: means,
        trajectory: runs.into_iter().next().and_then(|s| s.trajectory),
    }
}

/// CSV with header `time,total_jobs,jobs_type_1,...,jobs_type_k`.
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let k = points.first().map_or(0, |p| p.jobs_per_type.len());
    let mut out = String::from("time,total_jobs");
    for i in 1..=k {
        out.push_str(&format!(",jobs_type_{i}"));
    }
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{}", p.time, p.total_jobs));
        for j in &p.jobs_per_type {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
    }
    out
}
