//! The batch system: job intake, the node table, the offline flag, and
//! dispatch.
//!
//! Every worker VM is registered here as a node. The node table mirrors
//! the authoritative VM state (an audit compares the two after every
//! event; divergence is fatal). The offline flag lives on the node: while
//! it is set, dispatch skips the node entirely, which is exactly the lever
//! the resource manager uses to admit or drain workers without touching
//! running jobs.
//!
//! Dispatch is greedy in the scheduler's priority order and runs after
//! every scheduling pass and after every resource-manager action batch, so
//! a flag cleared by the manager admits a job within the same tick. For
//! each job it picks the eligible node best-fit by free cores (fewest
//! first, then lowest vm id). Jobs that fit nowhere simply stay queued;
//! nothing is ever dropped.

use crate::domain::{
    ClusterState, Job, JobId, JobState, PowerState, QueueName, TemplateId, Vm, VmId,
};
use crate::scheduler::PriorityEntry;
use std::collections::BTreeMap;
use thiserror::Error;

/// The batch system's view of one worker. Mirrors the VM entry in the
/// cluster state field for field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub vm_id: VmId,
    /// The node answers queries and can run jobs (VM is `Online`).
    pub online: bool,
    pub offline_flag: bool,
    pub template_id: TemplateId,
    pub free_cores: u32,
}

impl NodeRecord {
    fn project(vm: &Vm) -> NodeRecord {
        NodeRecord {
            vm_id: vm.vm_id.clone(),
            online: vm.power == PowerState::Online,
            offline_flag: vm.offline_flag,
            template_id: vm.template_id.clone(),
            free_cores: vm.free_cores,
        }
    }
}

#[derive(Debug, Error)]
pub enum LrmsError {
    #[error("job {job} submitted to unknown queue {queue}")]
    UnknownQueue { job: JobId, queue: QueueName },
    #[error("duplicate job id {0}")]
    DuplicateJob(JobId),
    #[error("no node registered for VM {0}")]
    UnknownNode(VmId),
    #[error("refusing to set the offline flag on reserved VM {0}")]
    ReservedNode(VmId),
    #[error("job {0} is not running")]
    NotRunning(JobId),
    #[error("node table diverged from VM state: {0}")]
    MirrorDiverged(String),
    #[error("job {job} wants {want} cores but queue {queue} workers have {have}")]
    OversizedJob {
        job: JobId,
        queue: QueueName,
        want: u32,
        have: u32,
    },
}

/// A job started by dispatch.
#[derive(Debug, Clone)]
pub struct StartedJob {
    pub job_id: JobId,
    pub vm_id: VmId,
}

/// A job retired by `complete`.
#[derive(Debug, Clone)]
pub struct CompletedJob {
    pub job_id: JobId,
    pub vm_id: VmId,
    pub core_seconds: u64,
    /// The worker ran its last job: it is now idle (and still flagged or
    /// not, as the manager left it).
    pub vm_now_idle: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Lrms {
    nodes: BTreeMap<VmId, NodeRecord>,
    /// Which node carries each running job.
    running: BTreeMap<JobId, VmId>,
}

impl Lrms {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, vm_id: &VmId) -> Option<&NodeRecord> {
        self.nodes.get(vm_id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    /// Register a worker with the batch system. Called once per VM at
    /// creation (scenario load or clone).
    pub fn register_vm(&mut self, vm: &Vm) {
        self.nodes.insert(vm.vm_id.clone(), NodeRecord::project(vm));
    }

    /// Remove a destroyed worker from the node table.
    pub fn deregister_vm(&mut self, vm_id: &VmId) {
        self.nodes.remove(vm_id);
    }

    /// Refresh a node record after any VM state change (power transition,
    /// core accounting). Flag changes go through `set_offline` /
    /// `clear_offline` instead.
    pub fn sync_vm(&mut self, vm: &Vm) {
        self.nodes.insert(vm.vm_id.clone(), NodeRecord::project(vm));
    }

    /// Accept a job into its queue. Unknown queues are rejected by name;
    /// a job demanding more cores than the queue's worker flavour offers
    /// can never run and is rejected up front.
    pub fn submit(&self, state: &mut ClusterState, job: Job) -> Result<(), LrmsError> {
        let queue = state
            .queues
            .get(&job.queue_name)
            .ok_or_else(|| LrmsError::UnknownQueue {
                job: job.job_id.clone(),
                queue: job.queue_name.clone(),
            })?;
        let tpl_cores = state
            .templates
            .get(&queue.template_id)
            .map(|t| t.cores)
            .unwrap_or(0);
        if job.cores == 0 || job.cores > tpl_cores {
            return Err(LrmsError::OversizedJob {
                job: job.job_id.clone(),
                queue: job.queue_name.clone(),
                want: job.cores,
                have: tpl_cores,
            });
        }
        if state.jobs.contains_key(&job.job_id) {
            return Err(LrmsError::DuplicateJob(job.job_id));
        }
        debug_assert_eq!(job.state, JobState::Queued);
        state.jobs.insert(job.job_id.clone(), job);
        Ok(())
    }

    /// Set the offline flag: the node finishes what it runs but receives
    /// nothing new. Idempotent. Reserved workers are never flagged; asking
    /// is a policy violation.
    pub fn set_offline(&mut self, state: &mut ClusterState, vm_id: &VmId) -> Result<(), LrmsError> {
        let vm = state
            .vms
            .get_mut(vm_id)
            .ok_or_else(|| LrmsError::UnknownNode(vm_id.clone()))?;
        if vm.reserved {
            return Err(LrmsError::ReservedNode(vm_id.clone()));
        }
        vm.offline_flag = true;
        let rec = self
            .nodes
            .get_mut(vm_id)
            .ok_or_else(|| LrmsError::UnknownNode(vm_id.clone()))?;
        rec.offline_flag = true;
        Ok(())
    }

    /// Clear the offline flag, making the node eligible for dispatch
    /// again. Idempotent.
    pub fn clear_offline(&mut self, state: &mut ClusterState, vm_id: &VmId) -> Result<(), LrmsError> {
        let vm = state
            .vms
            .get_mut(vm_id)
            .ok_or_else(|| LrmsError::UnknownNode(vm_id.clone()))?;
        vm.offline_flag = false;
        let rec = self
            .nodes
            .get_mut(vm_id)
            .ok_or_else(|| LrmsError::UnknownNode(vm_id.clone()))?;
        rec.offline_flag = false;
        Ok(())
    }

    /// Start whatever fits, walking jobs in the scheduler's order. For
    /// each job: eligible nodes are online, not flagged, of the queue's
    /// template, with enough free cores; best fit (fewest free cores, then
    /// lowest vm id) wins. Jobs that fit nowhere stay queued.
    pub fn dispatch(
        &mut self,
        state: &mut ClusterState,
        order: &[PriorityEntry],
        now_s: u64,
    ) -> Vec<StartedJob> {
        let mut started = Vec::new();
        for entry in order {
            let Some(job) = state.jobs.get(&entry.job_id) else {
                continue;
            };
            if job.state != JobState::Queued {
                continue;
            }
            let Some(queue) = state.queues.get(&job.queue_name) else {
                continue;
            };
            let want = job.cores;
            let tpl = queue.template_id.clone();
            let pick = self
                .nodes
                .values()
                .filter(|n| {
                    n.online && !n.offline_flag && n.template_id == tpl && n.free_cores >= want
                })
                .min_by(|a, b| a.free_cores.cmp(&b.free_cores).then_with(|| a.vm_id.cmp(&b.vm_id)))
                .map(|n| n.vm_id.clone());
            let Some(vm_id) = pick else {
                continue;
            };

            let job = state.jobs.get_mut(&entry.job_id).unwrap();
            job.state = JobState::Running;
            job.start_time_s = Some(now_s);
            let cores = job.cores;
            let vm = state.vms.get_mut(&vm_id).expect("node table points at live VM");
            vm.free_cores -= cores;
            vm.running_job_ids.insert(entry.job_id.clone());
            vm.idle_since = None;
            self.nodes.get_mut(&vm_id).unwrap().free_cores = vm.free_cores;
            self.running.insert(entry.job_id.clone(), vm_id.clone());
            started.push(StartedJob {
                job_id: entry.job_id.clone(),
                vm_id,
            });
        }
        started
    }

    /// Retire a finished job: free its cores, stamp its end time. The
    /// caller forwards the result to the resource manager (idle workers on
    /// overbooked hosts get powered off) and the usage ledger.
    pub fn complete(
        &mut self,
        state: &mut ClusterState,
        job_id: &JobId,
        now_s: u64,
    ) -> Result<CompletedJob, LrmsError> {
        let vm_id = self
            .running
            .remove(job_id)
            .ok_or_else(|| LrmsError::NotRunning(job_id.clone()))?;
        let job = state
            .jobs
            .get_mut(job_id)
            .ok_or_else(|| LrmsError::NotRunning(job_id.clone()))?;
        job.state = JobState::Completed;
        job.end_time_s = Some(now_s);
        let start = job.start_time_s.expect("running job has a start time");
        let core_seconds = job.cores as u64 * (now_s - start);
        let cores = job.cores;

        let vm = state.vms.get_mut(&vm_id).expect("completed job ran on a live VM");
        vm.free_cores += cores;
        vm.running_job_ids.remove(job_id);
        vm.last_used_s = now_s;
        let vm_now_idle = vm.running_job_ids.is_empty();
        if vm_now_idle {
            vm.idle_since = Some(now_s);
        }
        self.nodes.get_mut(&vm_id).unwrap().free_cores = vm.free_cores;
        Ok(CompletedJob {
            job_id: job_id.clone(),
            vm_id,
            core_seconds,
            vm_now_idle,
        })
    }

    /// Compare the node table against the authoritative VM state. Any
    /// difference is a bug in the notification plumbing.
    pub fn audit_mirror(&self, state: &ClusterState) -> Result<(), LrmsError> {
        if self.nodes.len() != state.vms.len() {
            return Err(LrmsError::MirrorDiverged(format!(
                "{} nodes registered, {} VMs exist",
                self.nodes.len(),
                state.vms.len()
            )));
        }
        for (vm_id, vm) in &state.vms {
            let rec = self
                .nodes
                .get(vm_id)
                .ok_or_else(|| LrmsError::MirrorDiverged(format!("no node for VM {vm_id}")))?;
            let want = NodeRecord::project(vm);
            if *rec != want {
                return Err(LrmsError::MirrorDiverged(format!(
                    "node {vm_id}: table has {rec:?}, VM state implies {want:?}"
                )));
            }
        }
        for (job_id, vm_id) in &self.running {
            let ok = state
                .vms
                .get(vm_id)
                .map(|vm| vm.running_job_ids.contains(job_id))
                .unwrap_or(false);
            if !ok {
                return Err(LrmsError::MirrorDiverged(format!(
                    "running table says {job_id} on {vm_id}, VM state disagrees"
                )));
            }
        }
        Ok(())
    }
}

// ============================================================
// tests
// ============================================================
