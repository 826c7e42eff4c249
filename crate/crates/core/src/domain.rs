//! Cluster state: hosts, worker VMs, templates, batch queues, jobs and the
//! shared image pool.
//!
//! Everything here is integer-valued (CPU cores, RAM in MiB, scratch disk in
//! GiB, time in whole seconds) so that capacity checks are exact and runs
//! are reproducible. A host's capacity for guests is its raw capacity minus
//! the RAM held back for the hypervisor itself; VM slots are an additional
//! scalar resource on top of the three-component vector.
//!
//! Capacity accounting rule: a VM counts against its host while it is
//! powered on in the wide sense (`Booting`, `Online` or `ShuttingDown`).
//! Resources and the slot are debited when an operation that powers the VM
//! up is initiated and credited back only when a shutdown completes, so a
//! host can never be oversubscribed by in-flight transitions. A booting VM
//! therefore already occupies its slot. `PoweredOff` and `Cloning` VMs
//! consume storage-pool space but zero host resources and zero slots.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

id_type!(
    /// Physical host identifier. Ties break on the lexicographic order of
    /// this id wherever the policy says "lowest host id".
    HostId
);
id_type!(
    /// Worker VM identifier. Lexicographic order is the tie-break order.
    VmId
);
id_type!(
    /// VM template identifier.
    TemplateId
);
id_type!(
    /// Batch queue name.
    QueueName
);
id_type!(
    /// Job identifier.
    JobId
);
id_type!(
    /// Accounting group name (fair-share unit).
    GroupName
);

/// Three-component resource demand or capacity: CPU cores, RAM, scratch disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu_cores: u32,
    pub ram_mib: u64,
    pub scratch_gib: u64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        cpu_cores: 0,
        ram_mib: 0,
        scratch_gib: 0,
    };

    pub fn new(cpu_cores: u32, ram_mib: u64, scratch_gib: u64) -> Self {
        Self {
            cpu_cores,
            ram_mib,
            scratch_gib,
        }
    }

    pub fn add(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector {
            cpu_cores: self.cpu_cores.checked_add(other.cpu_cores).expect("core count overflow"),
            ram_mib: self.ram_mib.checked_add(other.ram_mib).expect("ram overflow"),
            scratch_gib: self.scratch_gib.checked_add(other.scratch_gib).expect("scratch overflow"),
        }
    }

    /// Componentwise subtraction; `None` if any component would go negative.
    /// Callers must treat `None` as a hard bookkeeping error, never clamp.
    pub fn checked_sub(&self, other: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            cpu_cores: self.cpu_cores.checked_sub(other.cpu_cores)?,
            ram_mib: self.ram_mib.checked_sub(other.ram_mib)?,
            scratch_gib: self.scratch_gib.checked_sub(other.scratch_gib)?,
        })
    }

    /// `self` fits inside `capacity` componentwise.
    pub fn fits_within(&self, capacity: &ResourceVector) -> bool {
        self.cpu_cores <= capacity.cpu_cores
            && self.ram_mib <= capacity.ram_mib
            && self.scratch_gib <= capacity.scratch_gib
    }

    /// Componentwise `max(capacity - used, 0)`; used by headroom accounting
    /// where an overbooked host simply contributes zero.
    pub fn saturating_sub(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector {
            cpu_cores: self.cpu_cores.saturating_sub(other.cpu_cores),
            ram_mib: self.ram_mib.saturating_sub(other.ram_mib),
            scratch_gib: self.scratch_gib.saturating_sub(other.scratch_gib),
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}c/{}MiB/{}GiB",
            self.cpu_cores, self.ram_mib, self.scratch_gib
        )
    }
}

/// Static description of a physical host.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HostSpec {
    pub host_id: HostId,
    pub cpu_cores: u32,
    /// Placement prefers the fastest host by this figure.
    pub cpu_freq_mhz: u32,
    pub ram_total_mib: u64,
    /// RAM held back for the hypervisor; never available to guests.
    pub ram_reserved_mib: u64,
    pub scratch_total_gib: u64,
    /// Upper bound on concurrently powered-on guests, independent of the
    /// resource vector.
    pub vm_slots: u32,
}

impl HostSpec {
    /// Capacity available to guests: total minus the hypervisor's reserve.
    pub fn shareable(&self) -> ResourceVector {
        ResourceVector {
            cpu_cores: self.cpu_cores,
            ram_mib: self.ram_total_mib.saturating_sub(self.ram_reserved_mib),
            scratch_gib: self.scratch_total_gib,
        }
    }
}

/// Live host state: residents plus cached capacity counters.
///
/// `allocated` and `used_slots` are caches over the powered-on residents;
/// the integrity audit recomputes them from scratch after every event and
/// any divergence is fatal.
#[derive(Debug, Clone)]
pub struct HostState {
    pub spec: HostSpec,
    /// All VMs defined on this host, powered on or not.
    pub resident_vm_ids: BTreeSet<VmId>,
    pub allocated: ResourceVector,
    pub used_slots: u32,
    /// Set by an overbooking injection; the audit stops holding this host
    /// to its capacity ceiling (the guard policy still works on it).
    pub overbook_exempt: bool,
    /// Decommissioned host: keeps its residents but accepts no new
    /// placements, power-ons or migrations.
    pub retired: bool,
}

impl HostState {
    pub fn new(spec: HostSpec) -> Self {
        Self {
            spec,
            resident_vm_ids: BTreeSet::new(),
            allocated: ResourceVector::ZERO,
            used_slots: 0,
            overbook_exempt: false,
            retired: false,
        }
    }

    /// Would `demand` fit on this host right now? Slot-consuming operations
    /// (power-on of one VM) pass `needs_slot`. Retired hosts never fit
    /// anything new.
    pub fn can_fit(&self, demand: &ResourceVector, needs_slot: bool) -> bool {
        if self.retired {
            return false;
        }
        if needs_slot && self.used_slots >= self.spec.vm_slots {
            return false;
        }
        self.allocated.add(demand).fits_within(&self.spec.shareable())
    }

    /// A host is overbooked when its powered-on guests exceed what it can
    /// share, in any resource component or in slots.
    pub fn overbooked(&self) -> bool {
        !self.allocated.fits_within(&self.spec.shareable())
            || self.used_slots > self.spec.vm_slots
    }

    /// Free guest capacity, zero-clamped per component.
    pub fn free_capacity(&self) -> ResourceVector {
        self.spec.shareable().saturating_sub(&self.allocated)
    }
}

/// Template a worker VM is cloned from. One template corresponds to one
/// worker flavour (experiment image, core count, memory footprint).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VmTemplate {
    pub template_id: TemplateId,
    /// Size of the disk image a clone occupies in the shared pool.
    pub image_size_gib: u64,
    pub cores: u32,
    pub ram_mib: u64,
    pub scratch_gib: u64,
}

impl VmTemplate {
    pub fn alloc(&self) -> ResourceVector {
        ResourceVector {
            cpu_cores: self.cores,
            ram_mib: self.ram_mib,
            scratch_gib: self.scratch_gib,
        }
    }
}

/// VM power lifecycle. `Cloning` is the initial state of a clone while its
/// image is being copied; it becomes `PoweredOff` when the copy finishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerState {
    PoweredOff,
    Booting,
    Online,
    ShuttingDown,
    Cloning,
}

impl PowerState {
    /// Counts against host capacity and a VM slot.
    pub fn counts_against_host(&self) -> bool {
        matches!(
            self,
            PowerState::Booting | PowerState::Online | PowerState::ShuttingDown
        )
    }
}

/// Which provisioning step made a VM available for its next job; used to
/// bucket queue times the way operators discuss them (a job landing on a
/// free VM waits seconds, one that needed a clone waits minutes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProvisionPath {
    Free,
    OfflineCleared,
    PoweredOn,
    Cloned,
}

impl ProvisionPath {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProvisionPath::Free => "free",
            ProvisionPath::OfflineCleared => "offline-cleared",
            ProvisionPath::PoweredOn => "powered-on",
            ProvisionPath::Cloned => "cloned",
        }
    }
}

/// A worker VM.
#[derive(Debug, Clone)]
pub struct Vm {
    pub vm_id: VmId,
    pub template_id: TemplateId,
    /// `None` only while a cold migration is in flight.
    pub host_id: Option<HostId>,
    pub power: PowerState,
    /// The batch system's offline flag: while set, no job is dispatched to
    /// this VM. Meaningful when `Online`; a freshly booted VM always comes
    /// up with the flag set so nothing lands on it before the manager
    /// grants it.
    pub offline_flag: bool,
    /// Reserved VMs are owned by their group around the clock: the manager
    /// never sets their offline flag and never powers them off.
    pub reserved: bool,
    /// Resources this VM takes from its host while powered on; equals its
    /// template's allocation.
    pub alloc: ResourceVector,
    /// Cores not occupied by running jobs. Kept equal to
    /// `alloc.cpu_cores - sum(running job cores)` at all times, including
    /// while powered off (no jobs can run there, so it reads full).
    pub free_cores: u32,
    pub running_job_ids: BTreeSet<JobId>,
    /// Set when a boot completes, cleared on shutdown completion. The
    /// anti-starvation time window counts from here.
    pub powered_on_at: Option<u64>,
    /// Online with no running jobs since this instant.
    pub idle_since: Option<u64>,
    /// Last time this VM did something of note (job end, boot, creation);
    /// destroy victims are picked least-recently-used first.
    pub last_used_s: u64,
    /// Pending first-job classification: a clone keeps `Cloned` through its
    /// first boot, a plain power-on yields `PoweredOn`; consumed by the
    /// first job start after which availability comes from flag toggles.
    pub fresh_path: Option<ProvisionPath>,
    /// Timestamp of the most recent offline-flag clear, for classifying
    /// same-instant job starts.
    pub cleared_at_s: Option<u64>,
}

impl Vm {
    /// Idle means powered on and running nothing. The offline flag does not
    /// enter the definition; policies that need "idle and drained" check
    /// the flag separately.
    pub fn is_idle(&self) -> bool {
        self.power == PowerState::Online && self.running_job_ids.is_empty()
    }
}

/// A batch queue. Each queue maps to exactly one VM template; a job
/// submitted here runs only on workers of that flavour. Several queues may
/// share a template.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Queue {
    pub queue_name: QueueName,
    pub template_id: TemplateId,
    pub group: GroupName,
    /// Constant additive priority boost for jobs of this queue.
    #[serde(default)]
    pub priority_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Completed,
}

#[derive(Debug, Clone)]
pub struct Job {
    pub job_id: JobId,
    pub queue_name: QueueName,
    pub user: String,
    pub group: GroupName,
    pub cores: u32,
    /// Simulated execution time once started.
    pub runtime_s: u64,
    pub submit_time_s: u64,
    pub state: JobState,
    pub start_time_s: Option<u64>,
    pub end_time_s: Option<u64>,
}

impl Job {
    pub fn queue_time_s(&self) -> Option<u64> {
        self.start_time_s.map(|s| s - self.submit_time_s)
    }
}

/// Shared storage pool holding every VM disk image. Clones charge it when
/// the copy starts; only destroying a VM gives the space back.
#[derive(Debug, Clone)]
pub struct StoragePool {
    pub capacity_gib: u64,
    pub images: BTreeMap<VmId, u64>,
}

impl StoragePool {
    pub fn new(capacity_gib: u64) -> Self {
        Self {
            capacity_gib,
            images: BTreeMap::new(),
        }
    }

    pub fn used_gib(&self) -> u64 {
        self.images.values().sum()
    }

    pub fn free_gib(&self) -> u64 {
        self.capacity_gib - self.used_gib()
    }

    pub fn charge(&mut self, vm_id: &VmId, size_gib: u64) -> Result<(), DomainError> {
        if self.free_gib() < size_gib {
            return Err(DomainError::PoolExhausted {
                requested_gib: size_gib,
                free_gib: self.free_gib(),
            });
        }
        if self.images.insert(vm_id.clone(), size_gib).is_some() {
            return Err(DomainError::Corrupt(format!(
                "pool already holds an image for {vm_id}"
            )));
        }
        Ok(())
    }

    pub fn release(&mut self, vm_id: &VmId) -> Result<u64, DomainError> {
        self.images
            .remove(vm_id)
            .ok_or_else(|| DomainError::Corrupt(format!("no pool image for {vm_id}")))
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("unknown VM {0}")]
    UnknownVm(VmId),
    #[error("unknown template {0}")]
    UnknownTemplate(TemplateId),
    #[error("unknown queue {0}")]
    UnknownQueue(QueueName),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("host {host} lists resident VM {vm} which does not exist")]
    DanglingResident { host: HostId, vm: VmId },
    #[error("storage pool exhausted: need {requested_gib} GiB, {free_gib} GiB free")]
    PoolExhausted { requested_gib: u64, free_gib: u64 },
    #[error("state integrity violated: {0}")]
    Corrupt(String),
}

/// The complete managed estate. Single source of truth; the batch system's
/// node table is a mirror of the VM entries here and is audited against
/// them.
#[derive(Debug, Clone, Default)]
pub struct ClusterState {
    pub hosts: BTreeMap<HostId, HostState>,
    pub vms: BTreeMap<VmId, Vm>,
    pub templates: BTreeMap<TemplateId, VmTemplate>,
    pub queues: BTreeMap<QueueName, Queue>,
    pub jobs: BTreeMap<JobId, Job>,
    pub pool: StoragePool,
    /// Monotone counter backing generated clone ids.
    pub clone_seq: u32,
}

impl Default for StoragePool {
    fn default() -> Self {
        StoragePool::new(0)
    }
}

impl ClusterState {
    pub fn host(&self, id: &HostId) -> Result<&HostState, DomainError> {
        self.hosts.get(id).ok_or_else(|| DomainError::UnknownHost(id.clone()))
    }

    pub fn host_mut(&mut self, id: &HostId) -> Result<&mut HostState, DomainError> {
        self.hosts.get_mut(id).ok_or_else(|| DomainError::UnknownHost(id.clone()))
    }

    pub fn vm(&self, id: &VmId) -> Result<&Vm, DomainError> {
        self.vms.get(id).ok_or_else(|| DomainError::UnknownVm(id.clone()))
    }

    pub fn vm_mut(&mut self, id: &VmId) -> Result<&mut Vm, DomainError> {
        self.vms.get_mut(id).ok_or_else(|| DomainError::UnknownVm(id.clone()))
    }

    pub fn template(&self, id: &TemplateId) -> Result<&VmTemplate, DomainError> {
        self.templates
            .get(id)
            .ok_or_else(|| DomainError::UnknownTemplate(id.clone()))
    }

    pub fn queue(&self, name: &QueueName) -> Result<&Queue, DomainError> {
        self.queues
            .get(name)
            .ok_or_else(|| DomainError::UnknownQueue(name.clone()))
    }

    pub fn job(&self, id: &JobId) -> Result<&Job, DomainError> {
        self.jobs.get(id).ok_or_else(|| DomainError::UnknownJob(id.clone()))
    }

    pub fn job_mut(&mut self, id: &JobId) -> Result<&mut Job, DomainError> {
        self.jobs.get_mut(id).ok_or_else(|| DomainError::UnknownJob(id.clone()))
    }

    /// Recompute a host's allocation and slot usage from its powered-on
    /// residents. A resident id with no VM entry is an integrity error.
    pub fn recompute_allocated(&self, host_id: &HostId) -> Result<(ResourceVector, u32), DomainError> {
        let host = self.host(host_id)?;
        let mut total = ResourceVector::ZERO;
        let mut slots = 0u32;
        for vm_id in &host.resident_vm_ids {
            let vm = self.vms.get(vm_id).ok_or_else(|| DomainError::DanglingResident {
                host: host_id.clone(),
                vm: vm_id.clone(),
            })?;
            if vm.power.counts_against_host() {
                total = total.add(&vm.alloc);
                slots += 1;
            }
        }
        Ok((total, slots))
    }

    /// Free capacity summed over all hosts, each clamped at zero.
    pub fn free_cluster_capacity(&self) -> ResourceVector {
        let mut free = ResourceVector::ZERO;
        for host in self.hosts.values() {
            free = free.add(&host.free_capacity());
        }
        free
    }

    pub fn fresh_clone_id(&mut self) -> VmId {
        self.clone_seq += 1;
        VmId::new(format!("clone-{:04}", self.clone_seq))
    }

    /// Full integrity audit. Run after every simulation event; any failure
    /// aborts the run with the diagnostic.
    pub fn audit(&self) -> Result<(), DomainError> {
        for (host_id, host) in &self.hosts {
            if *host_id != host.spec.host_id {
                return Err(DomainError::Corrupt(format!(
                    "host map key {host_id} does not match spec id {}",
                    host.spec.host_id
                )));
            }
            let (alloc, slots) = self.recompute_allocated(host_id)?;
            if alloc != host.allocated || slots != host.used_slots {
                return Err(DomainError::Corrupt(format!(
                    "host {host_id} cached allocation {} ({} slots) != recomputed {} ({} slots)",
                    host.allocated, host.used_slots, alloc, slots
                )));
            }
            if !host.overbook_exempt && host.overbooked() {
                return Err(DomainError::Corrupt(format!(
                    "host {host_id} overbooked: allocated {} of {}, slots {}/{}",
                    host.allocated,
                    host.spec.shareable(),
                    host.used_slots,
                    host.spec.vm_slots
                )));
            }
            for vm_id in &host.resident_vm_ids {
                let vm = self.vms.get(vm_id).ok_or_else(|| DomainError::DanglingResident {
                    host: host_id.clone(),
                    vm: vm_id.clone(),
                })?;
                if vm.host_id.as_ref() != Some(host_id) {
                    return Err(DomainError::Corrupt(format!(
                        "VM {vm_id} resident on {host_id} but points at {:?}",
                        vm.host_id
                    )));
                }
            }
        }
        let mut running_refs: BTreeMap<&JobId, &VmId> = BTreeMap::new();
        for (vm_id, vm) in &self.vms {
            if *vm_id != vm.vm_id {
                return Err(DomainError::Corrupt(format!(
                    "vm map key {vm_id} does not match {}",
                    vm.vm_id
                )));
            }
            let tpl = self.template(&vm.template_id)?;
            if vm.alloc != tpl.alloc() {
                return Err(DomainError::Corrupt(format!(
                    "VM {vm_id} allocation {} differs from template {}",
                    vm.alloc,
                    tpl.alloc()
                )));
            }
            match &vm.host_id {
                Some(h) => {
                    let host = self.host(h)?;
                    if !host.resident_vm_ids.contains(vm_id) {
                        return Err(DomainError::Corrupt(format!(
                            "VM {vm_id} points at host {h} but is not resident there"
                        )));
                    }
                }
                None => {
                    if vm.power != PowerState::PoweredOff {
                        return Err(DomainError::Corrupt(format!(
                            "VM {vm_id} has no host while {:?}; only a cold migration may detach",
                            vm.power
                        )));
                    }
                }
            }
            if vm.reserved {
                if vm.offline_flag {
                    return Err(DomainError::Corrupt(format!(
                        "reserved VM {vm_id} has its offline flag set"
                    )));
                }
                if vm.power != PowerState::Online {
                    return Err(DomainError::Corrupt(format!(
                        "reserved VM {vm_id} is {:?}, reserved workers stay online",
                        vm.power
                    )));
                }
            }
            let mut busy = 0u32;
            for job_id in &vm.running_job_ids {
                let job = self.job(job_id)?;
                if job.state != JobState::Running {
                    return Err(DomainError::Corrupt(format!(
                        "VM {vm_id} lists {job_id} as running but the job is {:?}",
                        job.state
                    )));
                }
                if let Some(prev) = running_refs.insert(job_id, vm_id) {
                    return Err(DomainError::Corrupt(format!(
                        "job {job_id} running on both {prev} and {vm_id}"
                    )));
                }
                busy += job.cores;
            }
            if vm.power != PowerState::Online && busy > 0 {
                return Err(DomainError::Corrupt(format!(
                    "VM {vm_id} is {:?} with running jobs",
                    vm.power
                )));
            }
            let expect_free = vm.alloc.cpu_cores.checked_sub(busy).ok_or_else(|| {
                DomainError::Corrupt(format!(
                    "VM {vm_id} runs {busy} cores on a {}-core worker",
                    vm.alloc.cpu_cores
                ))
            })?;
            if vm.free_cores != expect_free {
                return Err(DomainError::Corrupt(format!(
                    "VM {vm_id} free_cores {} != {} ({} cores busy of {})",
                    vm.free_cores, expect_free, busy, vm.alloc.cpu_cores
                )));
            }
            if !self.pool.images.contains_key(vm_id) {
                return Err(DomainError::Corrupt(format!(
                    "VM {vm_id} has no image in the storage pool"
                )));
            }
        }
        for vm_id in self.pool.images.keys() {
            if !self.vms.contains_key(vm_id) {
                return Err(DomainError::Corrupt(format!(
                    "pool holds an image for nonexistent VM {vm_id}"
                )));
            }
        }
        if self.pool.used_gib() > self.pool.capacity_gib {
            return Err(DomainError::Corrupt(format!(
                "storage pool over capacity: {} GiB of {} GiB",
                self.pool.used_gib(),
                self.pool.capacity_gib
            )));
        }
        for (name, queue) in &self.queues {
            if *name != queue.queue_name {
                return Err(DomainError::Corrupt(format!("queue map key {name} mismatch")));
            }
            self.template(&queue.template_id)?;
        }
        for (job_id, job) in &self.jobs {
            if *job_id != job.job_id {
                return Err(DomainError::Corrupt(format!("job map key {job_id} mismatch")));
            }
            let queue = self.queue(&job.queue_name)?;
            let tpl = self.template(&queue.template_id)?;
            if job.cores == 0 || job.cores > tpl.cores {
                return Err(DomainError::Corrupt(format!(
                    "job {job_id} wants {} cores, template {} offers {}",
                    job.cores, tpl.template_id, tpl.cores
                )));
            }
            let runs = running_refs.contains_key(job_id);
            match job.state {
                JobState::Running => {
                    if !runs {
                        return Err(DomainError::Corrupt(format!(
                            "job {job_id} marked running but no VM carries it"
                        )));
                    }
                    if job.start_time_s.is_none() {
                        return Err(DomainError::Corrupt(format!(
                            "running job {job_id} has no start time"
                        )));
                    }
                }
                JobState::Queued | JobState::Completed => {
                    if runs {
                        return Err(DomainError::Corrupt(format!(
                            "job {job_id} is {:?} but a VM carries it",
                            job.state
                        )));
                    }
                }
            }
            if job.state == JobState::Completed && (job.start_time_s.is_none() || job.end_time_s.is_none()) {
                return Err(DomainError::Corrupt(format!(
                    "completed job {job_id} lacks start or end time"
                )));
            }
        }
        Ok(())
    }
}

// ============================================================
// tests
// ============================================================
