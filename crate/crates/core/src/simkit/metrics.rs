//! Run metrics: per-job queue times, the queue-time histogram, per-group
//! core-seconds, per-host utilization samples and action counts.
//!
//! Queue time is exactly `start − submit`. Core-seconds are clipped to
//! the horizon so a run's accounting never credits simulated time that
//! never happened. Exported as CSV: `queue_times.csv`,
//! `utilization.csv`, `actions.csv` and `histogram.csv`.

use crate::crm::{Action, PlannedAction, Policy};
use crate::domain::{ClusterState, GroupName, Job, JobId, PowerState, ProvisionPath, QueueName};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Histogram bucket edges in seconds; the last bucket is open-ended.
pub const HISTOGRAM_EDGES_S: [u64; 9] = [10, 30, 60, 120, 300, 600, 900, 1800, 3600];

#[derive(Debug, Clone, Serialize)]
pub struct JobRecord {
    pub job_id: JobId,
    pub queue: QueueName,
    pub group: GroupName,
    pub cores: u32,
    pub submit_time_s: u64,
    pub start_time_s: Option<u64>,
    pub end_time_s: Option<u64>,
    pub path: Option<ProvisionPath>,
}

impl JobRecord {
    pub fn queue_time_s(&self) -> Option<u64> {
        self.start_time_s.map(|s| s - self.submit_time_s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilizationSample {
    pub time_s: u64,
    pub host_id: crate::domain::HostId,
    pub total_cores: u32,
    /// Cores allocated to powered VMs (their footprint).
    pub allocated_cores: u32,
    /// Cores actually running jobs.
    pub busy_cores: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub jobs: BTreeMap<JobId, JobRecord>,
    pub utilization: Vec<UtilizationSample>,
    pub action_counts: BTreeMap<(Policy, &'static str), u64>,
    pub group_core_seconds: BTreeMap<GroupName, u64>,
    pub horizon_s: u64,
}

fn action_name(action: &Action) -> &'static str {
    match action {
        Action::SetOffline { .. } => "set_offline",
        Action::ClearOffline { .. } => "clear_offline",
        Action::PowerOn { .. } => "power_on",
        Action::PowerOff { .. } => "power_off",
        Action::Migrate { .. } => "migrate",
        Action::Clone { .. } => "clone",
        Action::Destroy { .. } => "destroy",
    }
}

impl Metrics {
    pub fn new(horizon_s: u64) -> Self {
        Self {
            horizon_s,
            ..Self::default()
        }
    }

    pub fn on_submit(&mut self, job: &Job) {
        self.jobs.insert(
            job.job_id.clone(),
            JobRecord {
                job_id: job.job_id.clone(),
                queue: job.queue_name.clone(),
                group: job.group.clone(),
                cores: job.cores,
                submit_time_s: job.submit_time_s,
                start_time_s: None,
                end_time_s: None,
                path: None,
            },
        );
    }

    pub fn on_start(&mut self, job_id: &JobId, now_s: u64, path: ProvisionPath) {
        let record = self.jobs.get_mut(job_id).expect("started job was submitted");
        record.start_time_s = Some(now_s);
        record.path = Some(path);
    }

    pub fn on_end(&mut self, job_id: &JobId, now_s: u64) {
        let record = self.jobs.get_mut(job_id).expect("ended job was submitted");
        record.end_time_s = Some(now_s);
    }

    pub fn count_action(&mut self, planned: &PlannedAction) {
        *self
            .action_counts
            .entry((planned.policy, action_name(&planned.action)))
            .or_insert(0) += 1;
    }

    pub fn sample_utilization(&mut self, now_s: u64, state: &ClusterState) {
        for (host_id, host) in &state.hosts {
            let busy: u32 = host
                .resident_vm_ids
                .iter()
                .filter_map(|id| state.vms.get(id))
                .filter(|vm| vm.power == PowerState::Online)
                .map(|vm| vm.alloc.cpu_cores - vm.free_cores)
                .sum();
            self.utilization.push(UtilizationSample {
                time_s: now_s,
                host_id: host_id.clone(),
                total_cores: host.spec.cpu_cores,
                allocated_cores: host.allocated.cpu_cores,
                busy_cores: busy,
            });
        }
    }

    /// Fold each started job's core-seconds into its group, clipped to
    /// the horizon.
    pub fn finalize_group_usage(&mut self) {
        let mut usage: BTreeMap<GroupName, u64> = BTreeMap::new();
        for record in self.jobs.values() {
            let Some(start) = record.start_time_s else { continue };
            let end = record.end_time_s.unwrap_or(self.horizon_s).min(self.horizon_s);
            let span = end.saturating_sub(start.min(self.horizon_s));
            *usage.entry(record.group.clone()).or_insert(0) +=
                span * u64::from(record.cores);
        }
        self.group_core_seconds = usage;
    }

    /// Queue-time histogram over started jobs; one count per bucket,
    /// buckets as in [`HISTOGRAM_EDGES_S`] plus the open tail.
    pub fn histogram(&self) -> Vec<(Option<u64>, Option<u64>, u64)> {
        let mut counts = vec![0u64; HISTOGRAM_EDGES_S.len() + 1];
        for record in self.jobs.values() {
            if let Some(qt) = record.queue_time_s() {
                let bucket = HISTOGRAM_EDGES_S
                    .iter()
                    .position(|&edge| qt < edge)
                    .unwrap_or(HISTOGRAM_EDGES_S.len());
                counts[bucket] += 1;
            }
        }
        let mut rows = Vec::with_capacity(counts.len());
        let mut lo = None;
        for (i, &count) in counts.iter().enumerate() {
            let hi = HISTOGRAM_EDGES_S.get(i).copied();
            rows.push((lo, hi, count));
            lo = hi;
        }
        rows
    }
}

/// Queue-time summary of one provisioning path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathSummary {
    pub path: ProvisionPath,
    pub jobs: u64,
    pub min_s: u64,
    pub median_s: u64,
    pub max_s: u64,
}

/// Started jobs bucketed by the provisioning path that served them, with
/// min/median/max queue time per bucket.
pub fn queue_time_table(metrics: &Metrics) -> Vec<PathSummary> {
    let mut by_path: BTreeMap<ProvisionPath, Vec<u64>> = BTreeMap::new();
    for record in metrics.jobs.values() {
        if let (Some(path), Some(qt)) = (record.path, record.queue_time_s()) {
            by_path.entry(path).or_default().push(qt);
        }
    }
    by_path
        .into_iter()
        .map(|(path, mut times)| {
            times.sort_unstable();
            let n = times.len();
            let median = if n % 2 == 1 {
                times[n / 2]
            } else {
                (times[n / 2 - 1] + times[n / 2]) / 2
            };
            PathSummary {
                path,
                jobs: n as u64,
                min_s: times[0],
                median_s: median,
                max_s: times[n - 1],
            }
        })
        .collect()
}

/// Write the four CSV files into `dir`, returning their paths.
pub fn export_metrics(metrics: &Metrics, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("queue_times.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "job_id",
        "queue",
        "group",
        "cores",
        "submit_time_s",
        "start_time_s",
        "end_time_s",
        "queue_time_s",
        "path",
    ])?;
    for record in metrics.jobs.values() {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            record.job_id.to_string(),
            record.queue.to_string(),
            record.group.to_string(),
            record.cores.to_string(),
            record.submit_time_s.to_string(),
            opt(record.start_time_s),
            opt(record.end_time_s),
            opt(record.queue_time_s()),
            record.path.map(|p| p.as_str().to_owned()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("utilization.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["time_s", "host_id", "total_cores", "allocated_cores", "busy_cores"])?;
    for s in &metrics.utilization {
        w.write_record([
            s.time_s.to_string(),
            s.host_id.to_string(),
            s.total_cores.to_string(),
            s.allocated_cores.to_string(),
            s.busy_cores.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("actions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["policy", "action", "count"])?;
    for ((policy, action), count) in &metrics.action_counts {
        w.write_record([policy.as_str(), action, &count.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("histogram.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["bucket_lo_s", "bucket_hi_s", "count"])?;
    for (lo, hi, count) in metrics.histogram() {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([opt(lo), opt(hi), count.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    Ok(written)
}

// ============================================================
// tests
// ============================================================
