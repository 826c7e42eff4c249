//! Job priority and ordering.
//!
//! The scheduler ranks every queued job and hands the ordered list to
//! dispatch and to the resource manager. It deliberately knows nothing
//! about node availability: ranking is computed from wait time, fair-share
//! standing and the queue's constant weight alone, so the resource manager
//! can provision capacity in exactly the order the scheduler wants jobs to
//! run. Whether a job can actually start is dispatch's problem.
//!
//! Priority of a queued job at time `now`:
//!
//! ```text
//! wait_weight * (now - submit) / 60
//!   + fairshare_weight * (target_share(group) - usage_share(group))
//!   + queue.priority_weight
//! ```
//!
//! Usage shares decay exponentially with a configurable half-life, so a
//! group that burned the cluster yesterday slowly regains standing. The
//! default weights (wait 1, fair-share 0) are an arbitrary neutral
//! starting point: pure wait-time ordering unless a deployment opts into
//! fair-share.

use crate::domain::{GroupName, Job, JobId, Queue};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_TICK_PERIOD_S: u64 = 30;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Seconds between scheduling passes.
    #[serde(default = "default_tick_period")]
    pub tick_period_s: u64,
    /// Weight of the wait-time term (minutes waited).
    #[serde(default = "default_wait_weight")]
    pub wait_weight: f64,
    /// Weight of the fair-share term; zero disables fair-share entirely.
    #[serde(default)]
    pub fairshare_weight: f64,
    /// Half-life of recorded usage in seconds.
    #[serde(default = "default_halflife")]
    pub fairshare_halflife_s: u64,
    /// Target share per group, each in [0, 1], summing to at most 1.
    /// Groups not listed target zero.
    #[serde(default)]
    pub group_targets: BTreeMap<GroupName, f64>,
}

fn default_tick_period() -> u64 {
    DEFAULT_TICK_PERIOD_S
}
fn default_wait_weight() -> f64 {
    1.0
}
fn default_halflife() -> u64 {
    3600
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            tick_period_s: default_tick_period(),
            wait_weight: default_wait_weight(),
            fairshare_weight: 0.0,
            fairshare_halflife_s: default_halflife(),
            group_targets: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SchedulerConfigError {
    #[error("tick_period_s must be at least 1")]
    ZeroTick,
    #[error("{0} must be non-negative")]
    NegativeWeight(&'static str),
    #[error("fairshare_halflife_s must be at least 1")]
    ZeroHalflife,
    #[error("group target for {0} is outside [0, 1]")]
    TargetOutOfRange(GroupName),
    #[error("group targets sum to {0}, more than 1")]
    TargetsOversubscribed(f64),
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerConfigError> {
        if self.tick_period_s == 0 {
            return Err(SchedulerConfigError::ZeroTick);
        }
        if !(self.wait_weight >= 0.0) {
            return Err(SchedulerConfigError::NegativeWeight("wait_weight"));
        }
        if !(self.fairshare_weight >= 0.0) {
            return Err(SchedulerConfigError::NegativeWeight("fairshare_weight"));
        }
        if self.fairshare_halflife_s == 0 {
            return Err(SchedulerConfigError::ZeroHalflife);
        }
        let mut sum = 0.0;
        for (group, target) in &self.group_targets {
            if !(0.0..=1.0).contains(target) {
                return Err(SchedulerConfigError::TargetOutOfRange(group.clone()));
            }
            sum += target;
        }
        if sum > 1.0 + 1e-12 {
            return Err(SchedulerConfigError::TargetsOversubscribed(sum));
        }
        Ok(())
    }

    pub fn target_share(&self, group: &GroupName) -> f64 {
        self.group_targets.get(group).copied().unwrap_or(0.0)
    }
}

/// Per-group consumed core-seconds with exponential forgetting. Decay is
/// applied lazily: each entry stores its value as of the last touch and is
/// decayed forward on read or write.
#[derive(Debug, Clone, Default)]
pub struct UsageLedger {
    entries: BTreeMap<GroupName, UsageEntry>,
}

#[derive(Debug, Clone, Copy)]
struct UsageEntry {
    value: f64,
    as_of_s: u64,
}

fn decay_factor(delta_s: u64, halflife_s: u64) -> f64 {
    0.5f64.powf(delta_s as f64 / halflife_s as f64)
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add consumed core-seconds for a group, decaying its prior balance
    /// up to `now_s` first. `now_s` must not move backwards.
    pub fn record_usage(&mut self, group: &GroupName, core_seconds: f64, now_s: u64, halflife_s: u64) {
        let entry = self.entries.entry(group.clone()).or_insert(UsageEntry {
            value: 0.0,
            as_of_s: now_s,
        });
        debug_assert!(entry.as_of_s <= now_s, "usage ledger time went backwards");
        let delta = now_s.saturating_sub(entry.as_of_s);
        entry.value = entry.value * decay_factor(delta, halflife_s) + core_seconds;
        entry.as_of_s = now_s;
    }

    /// Decayed raw usage of one group as of `now_s`.
    pub fn decayed_usage(&self, group: &GroupName, now_s: u64, halflife_s: u64) -> f64 {
        match self.entries.get(group) {
            Some(e) => e.value * decay_factor(now_s.saturating_sub(e.as_of_s), halflife_s),
            None => 0.0,
        }
    }

    /// Fraction of total decayed usage attributable to `group`; zero when
    /// nothing has been recorded anywhere.
    pub fn usage_share(&self, group: &GroupName, now_s: u64, halflife_s: u64) -> f64 {
        let total: f64 = self
            .entries
            .keys()
            .map(|g| self.decayed_usage(g, now_s, halflife_s))
            .sum();
        if total <= 0.0 {
            0.0
        } else {
            self.decayed_usage(group, now_s, halflife_s) / total
        }
    }
}

/// One ranked job. Ties in priority break FIFO: earlier submission first,
/// then job id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorityEntry {
    pub job_id: JobId,
    pub priority: f64,
    pub submit_time_s: u64,
}

pub fn compute_priority(
    job: &Job,
    queue: &Queue,
    now_s: u64,
    ledger: &UsageLedger,
    cfg: &SchedulerConfig,
) -> f64 {
    debug_assert!(now_s >= job.submit_time_s);
    let wait_minutes = now_s.saturating_sub(job.submit_time_s) as f64 / 60.0;
    let fairshare = cfg.target_share(&job.group)
        - ledger.usage_share(&job.group, now_s, cfg.fairshare_halflife_s);
    cfg.wait_weight * wait_minutes + cfg.fairshare_weight * fairshare + queue.priority_weight
}

/// Rank the given queued jobs, highest priority first. The result is a
/// permutation of the input; availability of workers is deliberately not
/// consulted.
pub fn ordered_queue<'a>(
    jobs: impl IntoIterator<Item = (&'a Job, &'a Queue)>,
    now_s: u64,
    ledger: &UsageLedger,
    cfg: &SchedulerConfig,
) -> Vec<PriorityEntry> {
    let mut entries: Vec<PriorityEntry> = jobs
        .into_iter()
        .map(|(job, queue)| PriorityEntry {
            job_id: job.job_id.clone(),
            priority: compute_priority(job, queue, now_s, ledger, cfg),
            submit_time_s: job.submit_time_s,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.priority
            .total_cmp(&a.priority)
            .then_with(|| a.submit_time_s.cmp(&b.submit_time_s))
            .then_with(|| a.job_id.cmp(&b.job_id))
    });
    entries
}

// ============================================================
// tests
// ============================================================
