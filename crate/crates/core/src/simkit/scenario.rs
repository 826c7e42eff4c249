//! Scenario ingestion: the JSON document that describes a whole run.
//!
//! A scenario names the hardware, the VM templates, the batch queues and
//! their groups, the shared image pool, all three component
//! configurations, an optional initial VM population, the workload —
//! either an explicit job list or seeded generator streams — and any
//! mid-run directives. Validation enforces referential integrity across
//! every identifier and names the offending entity in each diagnostic.
//! All durations are integer seconds, RAM is in MiB, disk in GiB.

use crate::crm::CrmConfig;
use crate::domain::{
    ClusterState, GroupName, HostId, HostSpec, HostState, Job, JobId, JobState, PowerState, Queue,
    QueueName, StoragePool, TemplateId, Vm, VmId, VmTemplate,
};
use crate::hypervisor::HypervisorConfig;
use crate::lrms::Lrms;
use crate::scheduler::{SchedulerConfig, SchedulerConfigError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub hosts: Vec<HostSpec>,
    pub templates: Vec<VmTemplate>,
    pub queues: Vec<Queue>,
    /// Accounting groups. May be omitted, in which case the groups
    /// referenced by the queues are taken as the declaration.
    #[serde(default)]
    pub groups: Vec<GroupName>,
    pub pool_capacity_gib: u64,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub crm: CrmConfig,
    #[serde(default)]
    pub hypervisor: HypervisorConfig,
    /// VMs that exist when the clock starts.
    #[serde(default)]
    pub initial_vms: Vec<InitialVm>,
    pub workload: Workload,
    #[serde(default)]
    pub directives: Vec<TimedDirective>,
    /// Simulation end; events due later are not processed.
    pub horizon_s: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPower {
    #[default]
    Online,
    PoweredOff,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialVm {
    pub vm_id: VmId,
    pub template_id: TemplateId,
    pub host_id: HostId,
    #[serde(default)]
    pub power: InitialPower,
    #[serde(default)]
    pub offline_flag: bool,
    /// Reserved workers serve interactive duty: always online, never
    /// flagged, never released.
    #[serde(default)]
    pub reserved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Workload {
    /// Every submission spelled out.
    Explicit { jobs: Vec<JobSubmission> },
    /// Seeded random streams, one per queue.
    Generator { streams: Vec<StreamSpec> },
}

fn default_user() -> String {
    "user".to_owned()
}

fn default_one() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSubmission {
    pub job_id: JobId,
    pub queue: QueueName,
    #[serde(default = "default_user")]
    pub user: String,
    #[serde(default = "default_one")]
    pub cores: u32,
    pub runtime_s: u64,
    pub submit_time_s: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub queue: QueueName,
    /// Mean of the exponential interarrival gap.
    pub mean_interarrival_s: u64,
    pub runtime: RuntimeDist,
    #[serde(default = "default_one")]
    pub cores: u32,
    /// First arrival is drawn starting from here.
    #[serde(default)]
    pub start_s: u64,
    /// Stop the stream after this many submissions.
    #[serde(default)]
    pub max_jobs: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuntimeDist {
    Fixed { value_s: u64 },
    Uniform { min_s: u64, max_s: u64 },
    Exponential { mean_s: u64 },
}

// No `deny_unknown_fields` here: it cannot coexist with the flattened
// directive payload, whose own fields would be refused.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimedDirective {
    pub time_s: u64,
    #[serde(flatten)]
    pub directive: DirectiveKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DirectiveKind {
    /// Shrink a host's core capacity in place (hardware degradation, an
    /// operator mistake, an external tenant); resident VMs keep running,
    /// leaving the host overbooked for the guard to cure.
    OverbookInject { host_id: HostId, shrink_cores: u32 },
    /// Retire a host: nothing new lands on it and its online workers are
    /// flagged to drain.
    RemoveHost { host_id: HostId },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{entity} {id} is declared twice")]
    Duplicate { entity: &'static str, id: String },
    #[error("queue {queue} references missing template {template}")]
    QueueTemplateMissing { queue: QueueName, template: TemplateId },
    #[error("queue {queue} references undeclared group {group}")]
    QueueGroupMissing { queue: QueueName, group: GroupName },
    #[error("fair-share target names undeclared group {group}")]
    TargetGroupMissing { group: GroupName },
    #[error("initial VM {vm} references missing template {template}")]
    VmTemplateMissing { vm: VmId, template: TemplateId },
    #[error("initial VM {vm} references missing host {host}")]
    VmHostMissing { vm: VmId, host: HostId },
    #[error("reserved VM {vm} must be online and unflagged")]
    ReservedVmInconsistent { vm: VmId },
    #[error("job {job} references missing queue {queue}")]
    JobQueueMissing { job: JobId, queue: QueueName },
    #[error("job {job} requests {cores} cores but template {template} has {limit}")]
    JobOversized {
        job: JobId,
        cores: u32,
        template: TemplateId,
        limit: u32,
    },
    #[error("job {job} requests zero cores")]
    JobZeroCores { job: JobId },
    #[error("workload stream references missing queue {queue}")]
    StreamQueueMissing { queue: QueueName },
    #[error("workload stream for {queue}: mean_interarrival_s must be at least 1")]
    BadInterarrival { queue: QueueName },
    #[error("workload stream for {queue}: {reason}")]
    BadRuntime { queue: QueueName, reason: String },
    #[error("horizon_s must be at least 1")]
    ZeroHorizon,
    #[error("initial images need {needed} GiB but the pool holds {capacity}")]
    PoolOverflow { needed: u64, capacity: u64 },
    #[error("directive at t={time_s}s references missing host {host}")]
    DirectiveHostMissing { time_s: u64, host: HostId },
    #[error(transparent)]
    Scheduler(#[from] SchedulerConfigError),
    #[error("initial VM population is inconsistent: {0}")]
    InitialStateInvalid(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{path}:{line}:{column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
}

impl Scenario {
    pub fn from_json_str(source: &str, origin: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(source).map_err(|e| ScenarioError::Parse {
            path: origin.to_owned(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let source = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_json_str(&source, &path.display().to_string())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    /// The declared groups, or the ones referenced by queues when the
    /// declaration is omitted.
    pub fn effective_groups(&self) -> BTreeSet<GroupName> {
        if self.groups.is_empty() {
            self.queues.iter().map(|q| q.group.clone()).collect()
        } else {
            self.groups.iter().cloned().collect()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon_s == 0 {
            return Err(ScenarioError::ZeroHorizon);
        }
        self.scheduler.validate()?;

        let mut host_ids = BTreeSet::new();
        for host in &self.hosts {
            if !host_ids.insert(host.host_id.clone()) {
                return Err(ScenarioError::Duplicate {
                    entity: "host",
                    id: host.host_id.to_string(),
                });
            }
        }
        let mut templates = BTreeMap::new();
        for tpl in &self.templates {
            if templates.insert(tpl.template_id.clone(), tpl).is_some() {
                return Err(ScenarioError::Duplicate {
                    entity: "template",
                    id: tpl.template_id.to_string(),
                });
            }
        }
        let groups = self.effective_groups();
        let mut queues = BTreeMap::new();
        for queue in &self.queues {
            if queues.insert(queue.queue_name.clone(), queue).is_some() {
                return Err(ScenarioError::Duplicate {
                    entity: "queue",
                    id: queue.queue_name.to_string(),
                });
            }
            if !templates.contains_key(&queue.template_id) {
                return Err(ScenarioError::QueueTemplateMissing {
                    queue: queue.queue_name.clone(),
                    template: queue.template_id.clone(),
                });
            }
            if !groups.contains(&queue.group) {
                return Err(ScenarioError::QueueGroupMissing {
                    queue: queue.queue_name.clone(),
                    group: queue.group.clone(),
                });
            }
        }
        for group in self.scheduler.group_targets.keys() {
            if !groups.contains(group) {
                return Err(ScenarioError::TargetGroupMissing { group: group.clone() });
            }
        }

        let mut vm_ids = BTreeSet::new();
        let mut image_total = 0u64;
        for vm in &self.initial_vms {
            if !vm_ids.insert(vm.vm_id.clone()) {
                return Err(ScenarioError::Duplicate {
                    entity: "initial VM",
                    id: vm.vm_id.to_string(),
                });
            }
            let Some(tpl) = templates.get(&vm.template_id) else {
                return Err(ScenarioError::VmTemplateMissing {
                    vm: vm.vm_id.clone(),
                    template: vm.template_id.clone(),
                });
            };
            if !host_ids.contains(&vm.host_id) {
                return Err(ScenarioError::VmHostMissing {
                    vm: vm.vm_id.clone(),
                    host: vm.host_id.clone(),
                });
            }
            if vm.reserved && (vm.power != InitialPower::Online || vm.offline_flag) {
                return Err(ScenarioError::ReservedVmInconsistent { vm: vm.vm_id.clone() });
            }
            image_total += tpl.image_size_gib;
        }
        if image_total > self.pool_capacity_gib {
            return Err(ScenarioError::PoolOverflow {
                needed: image_total,
                capacity: self.pool_capacity_gib,
            });
        }

        match &self.workload {
            Workload::Explicit { jobs } => {
                let mut job_ids = BTreeSet::new();
                for job in jobs {
                    if !job_ids.insert(job.job_id.clone()) {
                        return Err(ScenarioError::Duplicate {
                            entity: "job",
                            id: job.job_id.to_string(),
                        });
                    }
                    let Some(queue) = queues.get(&job.queue) else {
                        return Err(ScenarioError::JobQueueMissing {
                            job: job.job_id.clone(),
                            queue: job.queue.clone(),
                        });
                    };
                    if job.cores == 0 {
                        return Err(ScenarioError::JobZeroCores { job: job.job_id.clone() });
                    }
                    let tpl = templates[&queue.template_id];
                    if job.cores > tpl.cores {
                        return Err(ScenarioError::JobOversized {
                            job: job.job_id.clone(),
                            cores: job.cores,
                            template: tpl.template_id.clone(),
                            limit: tpl.cores,
                        });
                    }
                }
            }
            Workload::Generator { streams } => {
                let mut seen = BTreeSet::new();
                for stream in streams {
                    if !seen.insert(stream.queue.clone()) {
                        return Err(ScenarioError::Duplicate {
                            entity: "workload stream",
                            id: stream.queue.to_string(),
                        });
                    }
                    let Some(queue) = queues.get(&stream.queue) else {
                        return Err(ScenarioError::StreamQueueMissing {
                            queue: stream.queue.clone(),
                        });
                    };
                    if stream.mean_interarrival_s == 0 {
                        return Err(ScenarioError::BadInterarrival {
                            queue: stream.queue.clone(),
                        });
                    }
                    let tpl = templates[&queue.template_id];
                    if stream.cores == 0 || stream.cores > tpl.cores {
                        return Err(ScenarioError::BadRuntime {
                            queue: stream.queue.clone(),
                            reason: format!(
                                "cores {} outside 1..={} of template {}",
                                stream.cores, tpl.cores, tpl.template_id
                            ),
                        });
                    }
                    match stream.runtime {
                        RuntimeDist::Fixed { value_s } if value_s == 0 => {
                            return Err(ScenarioError::BadRuntime {
                                queue: stream.queue.clone(),
                                reason: "fixed runtime must be at least 1 s".into(),
                            });
                        }
                        RuntimeDist::Uniform { min_s, max_s } if min_s == 0 || min_s > max_s => {
                            return Err(ScenarioError::BadRuntime {
                                queue: stream.queue.clone(),
                                reason: format!("uniform range {min_s}..{max_s} is invalid"),
                            });
                        }
                        RuntimeDist::Exponential { mean_s } if mean_s == 0 => {
                            return Err(ScenarioError::BadRuntime {
                                queue: stream.queue.clone(),
                                reason: "exponential mean must be at least 1 s".into(),
                            });
                        }
                        _ => {}
                    }
                }
            }
        }

        for directive in &self.directives {
            let host = match &directive.directive {
                DirectiveKind::OverbookInject { host_id, .. } => host_id,
                DirectiveKind::RemoveHost { host_id } => host_id,
            };
            if !host_ids.contains(host) {
                return Err(ScenarioError::DirectiveHostMissing {
                    time_s: directive.time_s,
                    host: host.clone(),
                });
            }
        }

        Ok(())
    }

    /// Materialize the initial cluster state and a batch system mirroring
    /// it. Runs the full state audit before handing anything back.
    pub fn build_state(&self) -> Result<(ClusterState, Lrms), ScenarioError> {
        self.validate()?;
        let mut state = ClusterState::default();
        state.pool = StoragePool::new(self.pool_capacity_gib);
        for spec in &self.hosts {
            state.hosts.insert(spec.host_id.clone(), HostState::new(spec.clone()));
        }
        for tpl in &self.templates {
            state.templates.insert(tpl.template_id.clone(), tpl.clone());
        }
        for queue in &self.queues {
            state.queues.insert(queue.queue_name.clone(), queue.clone());
        }
        for init in &self.initial_vms {
            let tpl = state.templates[&init.template_id].clone();
            state
                .pool
                .charge(&init.vm_id, tpl.image_size_gib)
                .map_err(|e| ScenarioError::InitialStateInvalid(e.to_string()))?;
            let online = init.power == InitialPower::Online;
            let vm = Vm {
                vm_id: init.vm_id.clone(),
                template_id: init.template_id.clone(),
                host_id: Some(init.host_id.clone()),
                power: if online { PowerState::Online } else { PowerState::PoweredOff },
                offline_flag: init.offline_flag,
                reserved: init.reserved,
                alloc: tpl.alloc(),
                free_cores: tpl.cores,
                running_job_ids: BTreeSet::new(),
                powered_on_at: online.then_some(0),
                idle_since: online.then_some(0),
                last_used_s: 0,
                fresh_path: None,
                cleared_at_s: None,
            };
            let host = state
                .hosts
                .get_mut(&init.host_id)
                .expect("validated host reference");
            host.resident_vm_ids.insert(init.vm_id.clone());
            if vm.power.counts_against_host() {
                host.allocated = host.allocated.add(&vm.alloc);
                host.used_slots += 1;
            }
            state.vms.insert(init.vm_id.clone(), vm);
        }
        state
            .audit()
            .map_err(|e| ScenarioError::InitialStateInvalid(e.to_string()))?;
        let mut lrms = Lrms::new();
        for vm in state.vms.values() {
            lrms.register_vm(vm);
        }
        Ok((state, lrms))
    }

    /// Explicit submissions as domain jobs, submission-ordered.
    pub fn explicit_jobs(&self) -> Vec<Job> {
        let Workload::Explicit { jobs } = &self.workload else {
            return Vec::new();
        };
        let queues: BTreeMap<_, _> =
            self.queues.iter().map(|q| (q.queue_name.clone(), q)).collect();
        let mut out: Vec<Job> = jobs
            .iter()
            .map(|s| {
                let queue = queues[&s.queue];
                Job {
                    job_id: s.job_id.clone(),
                    queue_name: s.queue.clone(),
                    user: s.user.clone(),
                    group: queue.group.clone(),
                    cores: s.cores,
                    runtime_s: s.runtime_s,
                    submit_time_s: s.submit_time_s,
                    state: JobState::Queued,
                    start_time_s: None,
                    end_time_s: None,
                }
            })
            .collect();
        out.sort_by(|a, b| {
            a.submit_time_s
                .cmp(&b.submit_time_s)
                .then_with(|| a.job_id.cmp(&b.job_id))
        });
        out
    }
}

// ============================================================
// tests
// ============================================================
