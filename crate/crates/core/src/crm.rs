//! The resource manager's policy engine.
//!
//! Every iteration walks the scheduler's priority-ordered queue and plans
//! capacity for each job through the first applicable rule: clear the
//! offline flag of a suitable running worker, power on a parked one
//! (migrating it to the fastest feasible host first), or clone a fresh one
//! from its template image. Capacity claimed by an earlier job in the plan
//! — including capacity still materialising from in-flight boots, clones
//! and migrations — is unavailable to later ones, so replanning every
//! iteration from a bare state snapshot never double-provisions.
//!
//! The release side runs after dispatch: power off idle flagged workers
//! when a denied job of another flavour needs the room (and destroy parked
//! ones when the image pool blocked a needed clone), keep the configured
//! capacity headroom free, and cure overbooked hosts by powering off the
//! first worker that goes idle there.
//!
//! Everything here is a pure planner over a state snapshot; execution is
//! serialized through the event loop. The only state carried between
//! iterations is the denial list, passed explicitly from [`iterate`] to
//! [`release_pass`] within the same tick.

use crate::domain::{
    ClusterState, HostId, HostState, JobId, JobState, PowerState, ResourceVector, TemplateId, Vm,
    VmId,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrmConfig {
    /// Planning period; when absent the manager runs at the scheduler's
    /// tick period, which keeps plans aligned with fresh queue orderings.
    #[serde(default)]
    pub iteration_period_s: Option<u64>,
    /// Move a parked VM to the fastest feasible host before powering it
    /// on; disabling restricts power-ons to where the VM already sits.
    #[serde(default = "default_true")]
    pub migrate_before_start: bool,
    /// Free capacity the release pass maintains by powering off idle VMs,
    /// trading energy for lower power-on latency. Zero keeps nothing warm.
    #[serde(default)]
    pub headroom: ResourceVector,
    /// Free image-pool space the release pass maintains by destroying
    /// parked VMs.
    #[serde(default)]
    pub pool_headroom_gib: u64,
    /// Anti-starvation window: once a VM has been online this long it is
    /// flagged offline regardless of what it is running, drains, and goes
    /// back through placement — giving other groups a shot at the
    /// hardware. Disabled when absent.
    #[serde(default)]
    pub time_window_s: Option<u64>,
    /// Leave multi-core VMs unflagged when a job starts so further jobs
    /// can co-schedule onto their remaining cores.
    #[serde(default = "default_true")]
    pub multicore_keep_online: bool,
    /// Never destroy a template's instances below this count.
    #[serde(default)]
    pub template_floor: u32,
}

fn default_true() -> bool {
    true
}

impl Default for CrmConfig {
    fn default() -> Self {
        Self {
            iteration_period_s: None,
            migrate_before_start: true,
            headroom: ResourceVector::ZERO,
            pool_headroom_gib: 0,
            time_window_s: None,
            multicore_keep_online: true,
            template_floor: 0,
        }
    }
}

impl CrmConfig {
    pub fn period_s(&self, scheduler_tick_s: u64) -> u64 {
        self.iteration_period_s.unwrap_or(scheduler_tick_s)
    }
}

/// Why an action was planned; keyed into the action accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    ClearOffline,
    PowerOn,
    Clone,
    DemandRelease,
    HeadroomRelease,
    OverbookGuard,
    TimeWindow,
    JobStart,
    Drain,
}

impl Policy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::ClearOffline => "clear-offline",
            Policy::PowerOn => "power-on",
            Policy::Clone => "clone",
            Policy::DemandRelease => "demand-release",
            Policy::HeadroomRelease => "headroom-release",
            Policy::OverbookGuard => "overbook-guard",
            Policy::TimeWindow => "time-window",
            Policy::JobStart => "job-start",
            Policy::Drain => "drain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    SetOffline { vm_id: VmId },
    ClearOffline { vm_id: VmId },
    PowerOn { vm_id: VmId },
    PowerOff { vm_id: VmId },
    Migrate { vm_id: VmId, dest: HostId, then_power_on: bool },
    Clone { template_id: TemplateId, target_host: HostId },
    Destroy { vm_id: VmId },
}

#[derive(Debug, Clone, Serialize)]
pub struct PlannedAction {
    pub action: Action,
    pub policy: Policy,
    /// The queued job this action serves, when there is one.
    pub job_id: Option<JobId>,
}

/// A job the provisioning rules could not serve this iteration, with what
/// it would take to lift the refusal. Feeds the demand release rule.
#[derive(Debug, Clone)]
pub struct Denial {
    pub job_id: JobId,
    pub template_id: TemplateId,
    /// A worker of this shape must fit on some host for the job to get
    /// capacity next iteration.
    pub vm_alloc: ResourceVector,
    /// Extra image-pool space a clone would need; zero when a parked VM of
    /// the right flavour already exists.
    pub pool_shortfall_gib: u64,
    /// When migration-before-start is off, only these hosts (where parked
    /// candidates reside) can be made to fit.
    pub restrict_hosts: Option<BTreeSet<HostId>>,
}

#[derive(Debug, Clone, Default)]
pub struct ActionPlan {
    pub actions: Vec<PlannedAction>,
    pub denials: Vec<Denial>,
}

/// Placement: among hosts that can fit `alloc` plus a slot, the one with
/// the highest nominal CPU frequency; ties go to the lowest host id.
pub fn place<'a, I>(alloc: &ResourceVector, hosts: I) -> Option<HostId>
where
    I: IntoIterator<Item = &'a HostState>,
{
    hosts
        .into_iter()
        .filter(|h| h.can_fit(alloc, true))
        .max_by(|a, b| {
            a.spec
                .cpu_freq_mhz
                .cmp(&b.spec.cpu_freq_mhz)
                .then_with(|| b.spec.host_id.cmp(&a.spec.host_id))
        })
        .map(|h| h.spec.host_id.clone())
}

/// Whether the VM has been online beyond the anti-starvation window.
/// Expired VMs are not eligible for offline-clearing: they must drain and
/// go back through placement, or the window would protect nothing.
fn window_expired(vm: &Vm, now_s: u64, cfg: &CrmConfig) -> bool {
    match (cfg.time_window_s, vm.powered_on_at) {
        (Some(w), Some(t)) => now_s.saturating_sub(t) >= w,
        _ => false,
    }
}

/// Should this job's start flag its VM offline? Reserved VMs never carry
/// the flag; multi-core VMs are left online for co-scheduling when so
/// configured.
pub fn flags_offline_on_start(vm: &Vm, cfg: &CrmConfig) -> bool {
    if vm.reserved {
        return false;
    }
    if vm.alloc.cpu_cores > 1 && cfg.multicore_keep_online {
        return false;
    }
    true
}

/// The anti-starvation sweep: every non-reserved online VM whose time
/// since power-on has reached the window gets flagged offline, regardless
/// of the number of jobs it is running or has run.
pub fn time_window_guard(state: &ClusterState, now_s: u64, cfg: &CrmConfig) -> Vec<PlannedAction> {
    if cfg.time_window_s.is_none() {
        return Vec::new();
    }
    state
        .vms
        .values()
        .filter(|vm| {
            vm.power == PowerState::Online
                && !vm.reserved
                && !vm.offline_flag
                && window_expired(vm, now_s, cfg)
        })
        .map(|vm| PlannedAction {
            action: Action::SetOffline { vm_id: vm.vm_id.clone() },
            policy: Policy::TimeWindow,
            job_id: None,
        })
        .collect()
}

/// Working copy of host capacity with in-plan claims layered on.
struct WorkingHosts {
    hosts: BTreeMap<HostId, HostState>,
}

impl WorkingHosts {
    fn new(state: &ClusterState) -> Self {
        Self { hosts: state.hosts.clone() }
    }

    fn claim(&mut self, host_id: &HostId, alloc: &ResourceVector) {
        let host = self.hosts.get_mut(host_id).expect("claim on known host");
        host.allocated = host.allocated.add(alloc);
        host.used_slots += 1;
    }

    fn place(&self, alloc: &ResourceVector) -> Option<HostId> {
        place(alloc, self.hosts.values())
    }

    fn can_fit_on(&self, host_id: &HostId, alloc: &ResourceVector) -> bool {
        self.hosts
            .get(host_id)
            .map(|h| h.can_fit(alloc, true))
            .unwrap_or(false)
    }
}

/// One provisioning pass over the priority-ordered queue.
pub fn iterate(
    state: &ClusterState,
    ordered_queue: &[JobId],
    now_s: u64,
    cfg: &CrmConfig,
) -> ActionPlan {
    let mut plan = ActionPlan::default();
    let mut working = WorkingHosts::new(state);

    // Cores a queued job can ride without any action: online unflagged
    // workers (whatever dispatch left free)…
    let mut avail: BTreeMap<VmId, u32> = state
        .vms
        .values()
        .filter(|vm| vm.power == PowerState::Online && !vm.offline_flag)
        .map(|vm| (vm.vm_id.clone(), vm.free_cores))
        .collect();
    // …and capacity already on its way: boots, clones and migrations in
    // flight, plus whatever this plan powers on or clears. Claiming these
    // keeps a stateless replanner from provisioning twice for one job.
    let mut pending: BTreeMap<VmId, u32> = state
        .vms
        .values()
        .filter(|vm| {
            matches!(vm.power, PowerState::Booting | PowerState::Cloning)
                || (vm.power == PowerState::PoweredOff && vm.host_id.is_none())
        })
        .map(|vm| (vm.vm_id.clone(), vm.free_cores))
        .collect();
    // Clones planned this pass, by template, with cores not yet claimed.
    let mut planned_clones: Vec<(TemplateId, u32)> = Vec::new();
    // Offline-flag clears and power-ons already granted this iteration.
    let mut granted: BTreeSet<VmId> = BTreeSet::new();
    let mut pool_claimed_gib: u64 = 0;

    for job_id in ordered_queue {
        let Ok(job) = state.job(job_id) else { continue };
        if job.state != JobState::Queued {
            continue;
        }
        let Ok(queue) = state.queue(&job.queue_name) else { continue };
        let Ok(template) = state.template(&queue.template_id) else { continue };
        let want = job.cores;
        let template_vm = |vm: &&Vm| vm.template_id == queue.template_id;

        // Ride capacity that is already (or will shortly be) dispatchable.
        let ride = |map: &mut BTreeMap<VmId, u32>| -> bool {
            let choice = state
                .vms
                .values()
                .filter(template_vm)
                .filter_map(|vm| map.get(&vm.vm_id).map(|free| (*free, vm.vm_id.clone())))
                .filter(|(free, _)| *free >= want)
                .min();
            match choice {
                Some((free, vm_id)) => {
                    map.insert(vm_id, free - want);
                    true
                }
                None => false,
            }
        };
        if ride(&mut avail) || ride(&mut pending) {
            continue;
        }
        if let Some(slot) = planned_clones
            .iter_mut()
            .find(|(t, free)| *t == queue.template_id && *free >= want)
        {
            slot.1 -= want;
            continue;
        }

        // R1: clear the offline flag of a suitable running worker. Workers
        // past the anti-starvation window don't qualify — they must drain
        // — and neither do workers on retired hosts.
        let r1 = state
            .vms
            .values()
            .filter(template_vm)
            .filter(|vm| {
                vm.power == PowerState::Online
                    && vm.offline_flag
                    && !vm.reserved
                    && !granted.contains(&vm.vm_id)
                    && vm.free_cores >= want
                    && !window_expired(vm, now_s, cfg)
                    && vm
                        .host_id
                        .as_ref()
                        .and_then(|h| state.hosts.get(h))
                        .is_some_and(|h| !h.retired)
            })
            .map(|vm| (vm.free_cores, vm.vm_id.clone()))
            .min();
        if let Some((free, vm_id)) = r1 {
            granted.insert(vm_id.clone());
            pending.insert(vm_id.clone(), free - want);
            plan.actions.push(PlannedAction {
                action: Action::ClearOffline { vm_id },
                policy: Policy::ClearOffline,
                job_id: Some(job_id.clone()),
            });
            continue;
        }

        // R2: power on a parked worker, migrating it to the fastest
        // feasible host first when allowed.
        let candidates: Vec<&Vm> = state
            .vms
            .values()
            .filter(template_vm)
            .filter(|vm| {
                vm.power == PowerState::PoweredOff
                    && vm.host_id.is_some()
                    && !granted.contains(&vm.vm_id)
                    && vm.free_cores >= want
            })
            .collect();
        let mut r2_hosts: BTreeSet<HostId> = BTreeSet::new();
        if !candidates.is_empty() {
            let alloc = template.alloc();
            let placement = if cfg.migrate_before_start {
                working.place(&alloc)
            } else {
                // only each candidate's own host is in play
                candidates
                    .iter()
                    .filter_map(|vm| vm.host_id.clone())
                    .filter(|h| working.can_fit_on(h, &alloc))
                    .filter_map(|h| working.hosts.get(&h).cloned())
                    .collect::<Vec<_>>()
                    .iter()
                    .fold(None::<&HostState>, |best, h| match best {
                        None => Some(h),
                        Some(b)
                            if (h.spec.cpu_freq_mhz, &b.spec.host_id)
                                > (b.spec.cpu_freq_mhz, &h.spec.host_id) =>
                        {
                            Some(h)
                        }
                        keep => keep,
                    })
                    .map(|h| h.spec.host_id.clone())
            };
            if !cfg.migrate_before_start {
                r2_hosts = candidates.iter().filter_map(|vm| vm.host_id.clone()).collect();
            }
            if let Some(dest) = placement {
                // Prefer a candidate already resident on the chosen host
                // (no move needed), else the lowest id.
                let resident = candidates
                    .iter()
                    .filter(|vm| vm.host_id.as_ref() == Some(&dest))
                    .map(|vm| vm.vm_id.clone())
                    .min();
                let chosen = resident.or_else(|| {
                    candidates.iter().map(|vm| vm.vm_id.clone()).min()
                });
                let vm_id = chosen.expect("candidates not empty");
                let on_dest = state.vms[&vm_id].host_id.as_ref() == Some(&dest);
                working.claim(&dest, &alloc);
                granted.insert(vm_id.clone());
                pending.insert(vm_id.clone(), template.cores - want);
                plan.actions.push(PlannedAction {
                    action: if on_dest {
                        Action::PowerOn { vm_id }
                    } else {
                        Action::Migrate { vm_id, dest, then_power_on: true }
                    },
                    policy: Policy::PowerOn,
                    job_id: Some(job_id.clone()),
                });
                continue;
            }
        }

        // R3: clone a fresh worker from the template image. It comes up
        // parked; the iteration after the copy finishes powers it on.
        let pool_free = state.pool.free_gib().saturating_sub(pool_claimed_gib);
        let pool_ok = pool_free >= template.image_size_gib;
        let clone_host = working.place(&template.alloc());
        if pool_ok {
            if let Some(target_host) = clone_host.clone() {
                pool_claimed_gib += template.image_size_gib;
                working.claim(&target_host, &template.alloc());
                planned_clones.push((queue.template_id.clone(), template.cores - want));
                plan.actions.push(PlannedAction {
                    action: Action::Clone {
                        template_id: queue.template_id.clone(),
                        target_host,
                    },
                    policy: Policy::Clone,
                    job_id: Some(job_id.clone()),
                });
                continue;
            }
        }

        // Nothing applicable: record what it would take.
        plan.denials.push(Denial {
            job_id: job_id.clone(),
            template_id: queue.template_id.clone(),
            vm_alloc: template.alloc(),
            pool_shortfall_gib: if candidates.is_empty() {
                template.image_size_gib.saturating_sub(pool_free)
            } else {
                0
            },
            restrict_hosts: if !cfg.migrate_before_start && !candidates.is_empty() {
                Some(r2_hosts)
            } else {
                None
            },
        });
    }

    plan
}

/// The overbook cure for one host: the first idle victim there, unless a
/// shutdown is already in flight on that host.
pub fn overbook_cure(state: &ClusterState, host_id: &HostId) -> Option<VmId> {
    let host = state.hosts.get(host_id)?;
    if !host.overbooked() {
        return None;
    }
    let residents: Vec<&Vm> = host
        .resident_vm_ids
        .iter()
        .filter_map(|id| state.vms.get(id))
        .collect();
    if residents.iter().any(|vm| vm.power == PowerState::ShuttingDown) {
        return None; // a cure is already on its way
    }
    residents
        .iter()
        .filter(|vm| vm.is_idle() && !vm.reserved)
        .map(|vm| (vm.idle_since.unwrap_or(u64::MAX), vm.vm_id.clone()))
        .min()
        .map(|(_, id)| id)
}

/// The release side of an iteration: demand-driven power-offs and
/// destroys, headroom maintenance, and the overbooked-host sweep.
pub fn release_pass(
    state: &ClusterState,
    denials: &[Denial],
    cfg: &CrmConfig,
) -> Vec<PlannedAction> {
    let mut actions: Vec<PlannedAction> = Vec::new();
    let mut chosen: BTreeSet<VmId> = BTreeSet::new();
    // Working capacity view shared across the whole pass: power-offs and
    // destroys committed for one denial also count for the next.
    let mut free: BTreeMap<HostId, (ResourceVector, u32)> = state
        .hosts
        .iter()
        .filter(|(_, h)| !h.retired)
        .map(|(id, h)| {
            (
                id.clone(),
                (h.free_capacity(), h.spec.vm_slots.saturating_sub(h.used_slots)),
            )
        })
        .collect();
    let mut pool_free = state.pool.free_gib();
    let mut vm_counts: BTreeMap<TemplateId, u32> = BTreeMap::new();
    for vm in state.vms.values() {
        *vm_counts.entry(vm.template_id.clone()).or_insert(0) += 1;
    }

    let host_satisfied =
        |free: &BTreeMap<HostId, (ResourceVector, u32)>, d: &Denial| -> bool {
            free.iter()
                .filter(|(id, _)| {
                    d.restrict_hosts.as_ref().map(|set| set.contains(*id)).unwrap_or(true)
                })
                .any(|(_, (cap, slots))| d.vm_alloc.fits_within(cap) && *slots > 0)
        };

    // (a) DEMAND: a denied job of one flavour may push idle workers of
    // another off their hosts — but only when the set of power-offs
    // actually lifts the refusal; a futile eviction helps nobody.
    for denial in denials {
        let mut trial_free = free.clone();
        let mut trial_chosen: Vec<VmId> = Vec::new();
        if !host_satisfied(&trial_free, denial) {
            // Victims are always of another flavour than the denied job:
            // a usable same-flavour worker would have been cleared or
            // powered on instead, so evicting one could only thrash.
            let mut victims: Vec<&Vm> = state
                .vms
                .values()
                .filter(|vm| {
                    vm.power == PowerState::Online
                        && vm.offline_flag
                        && vm.is_idle()
                        && !vm.reserved
                        && vm.template_id != denial.template_id
                        && !chosen.contains(&vm.vm_id)
                })
                .collect();
            victims.sort_by_key(|vm| (vm.idle_since.unwrap_or(u64::MAX), vm.vm_id.clone()));
            for victim in victims {
                let host_id = victim.host_id.clone().expect("online VM has a host");
                if let Some((cap, slots)) = trial_free.get_mut(&host_id) {
                    *cap = cap.add(&victim.alloc);
                    *slots += 1;
                }
                trial_chosen.push(victim.vm_id.clone());
                if host_satisfied(&trial_free, denial) {
                    break;
                }
            }
            if !host_satisfied(&trial_free, denial) {
                continue; // unliftable: commit nothing for this denial
            }
        }

        // Pool component: destroy parked workers of other flavours,
        // least-recently-used first, keeping each template's floor.
        let mut trial_pool = pool_free;
        let mut trial_destroys: Vec<(VmId, u64, TemplateId)> = Vec::new();
        if denial.pool_shortfall_gib > 0 {
            let mut trial_counts = vm_counts.clone();
            let mut parked: Vec<&Vm> = state
                .vms
                .values()
                .filter(|vm| {
                    vm.power == PowerState::PoweredOff
                        && vm.host_id.is_some()
                        && vm.template_id != denial.template_id
                        && !chosen.contains(&vm.vm_id)
                })
                .collect();
            parked.sort_by_key(|vm| (vm.last_used_s, vm.vm_id.clone()));
            for victim in parked {
                if trial_pool >= state.pool.free_gib() + denial.pool_shortfall_gib {
                    break;
                }
                let count = trial_counts.entry(victim.template_id.clone()).or_insert(0);
                if *count <= cfg.template_floor {
                    continue;
                }
                *count -= 1;
                trial_pool += state.pool.images.get(&victim.vm_id).copied().unwrap_or(0);
                trial_destroys.push((
                    victim.vm_id.clone(),
                    state.pool.images.get(&victim.vm_id).copied().unwrap_or(0),
                    victim.template_id.clone(),
                ));
            }
            if trial_pool < state.pool.free_gib() + denial.pool_shortfall_gib {
                continue; // pool component unliftable: commit nothing
            }
        }

        // Both components liftable — commit.
        for vm_id in trial_chosen {
            chosen.insert(vm_id.clone());
            actions.push(PlannedAction {
                action: Action::PowerOff { vm_id },
                policy: Policy::DemandRelease,
                job_id: Some(denial.job_id.clone()),
            });
        }
        for (vm_id, size, template_id) in trial_destroys {
            chosen.insert(vm_id.clone());
            pool_free += size;
            *vm_counts.get_mut(&template_id).expect("counted") -= 1;
            actions.push(PlannedAction {
                action: Action::Destroy { vm_id },
                policy: Policy::DemandRelease,
                job_id: Some(denial.job_id.clone()),
            });
        }
        free = trial_free;
    }

    // (b) HEADROOM: keep the configured capacity free by powering off
    // idle workers, flagged or not; keep pool headroom free by destroying
    // parked ones.
    if !cfg.headroom.is_zero() {
        let mut cluster_free = free
            .values()
            .fold(ResourceVector::ZERO, |acc, (cap, _)| acc.add(cap));
        if !cfg.headroom.fits_within(&cluster_free) {
            let mut idle: Vec<&Vm> = state
                .vms
                .values()
                .filter(|vm| vm.is_idle() && !vm.reserved && !chosen.contains(&vm.vm_id))
                .collect();
            idle.sort_by_key(|vm| (vm.idle_since.unwrap_or(u64::MAX), vm.vm_id.clone()));
            for victim in idle {
                if cfg.headroom.fits_within(&cluster_free) {
                    break;
                }
                cluster_free = cluster_free.add(&victim.alloc);
                chosen.insert(victim.vm_id.clone());
                actions.push(PlannedAction {
                    action: Action::PowerOff { vm_id: victim.vm_id.clone() },
                    policy: Policy::HeadroomRelease,
                    job_id: None,
                });
            }
        }
    }
    if cfg.pool_headroom_gib > 0 && pool_free < cfg.pool_headroom_gib {
        let mut trial_counts = vm_counts.clone();
        let mut parked: Vec<&Vm> = state
            .vms
            .values()
            .filter(|vm| {
                vm.power == PowerState::PoweredOff
                    && vm.host_id.is_some()
                    && !chosen.contains(&vm.vm_id)
            })
            .collect();
        parked.sort_by_key(|vm| (vm.last_used_s, vm.vm_id.clone()));
        for victim in parked {
            if pool_free >= cfg.pool_headroom_gib {
                break;
            }
            let count = trial_counts.entry(victim.template_id.clone()).or_insert(0);
            if *count <= cfg.template_floor {
                continue;
            }
            *count -= 1;
            pool_free += state.pool.images.get(&victim.vm_id).copied().unwrap_or(0);
            chosen.insert(victim.vm_id.clone());
            actions.push(PlannedAction {
                action: Action::Destroy { vm_id: victim.vm_id.clone() },
                policy: Policy::HeadroomRelease,
                job_id: None,
            });
        }
    }

    // (c) OVERBOOK GUARD: one cure per overbooked host.
    for host_id in state.hosts.keys() {
        if let Some(vm_id) = overbook_cure(state, host_id) {
            if chosen.insert(vm_id.clone()) {
                actions.push(PlannedAction {
                    action: Action::PowerOff { vm_id },
                    policy: Policy::OverbookGuard,
                    job_id: None,
                });
            }
        }
    }

    actions
}

// ============================================================
// tests
// ============================================================
