//! The virtualisation driver boundary.
//!
//! The resource manager talks to its hypervisors through the five
//! operations of the [`Driver`] trait (plus state queries); a production
//! backend would translate them to its virtualisation API. The simulated
//! backend here applies each operation's initiation effects synchronously
//! and hands back a completion due at the operation's latency; the event
//! loop delivers it to [`Driver::complete`] at that time.
//!
//! Accounting discipline: anything that takes a VM towards powered-on
//! debits host capacity and a slot at initiation; anything that takes it
//! down credits them back only at completion. In-flight transitions can
//! therefore never oversubscribe a host, at the price of a booting VM
//! occupying its slot a little early. Clones charge the storage pool at
//! initiation the same way.
//!
//! Cold migration moves powered-off VMs only: just the VM definition
//! travels, which is why it costs seconds. Live migration of a running VM
//! is deliberately not offered.

use crate::domain::{
    ClusterState, DomainError, HostId, PowerState, ProvisionPath, TemplateId, Vm, VmId,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypervisorConfig {
    /// Power-on to online, including guest boot and batch daemon start.
    #[serde(default = "default_boot_time")]
    pub boot_time_s: u64,
    /// Orderly guest shutdown.
    #[serde(default = "default_shutdown_time")]
    pub shutdown_time_s: u64,
    /// Image copy speed; a clone takes `image_size_gib` times this.
    #[serde(default = "default_clone_rate")]
    pub clone_rate_s_per_gib: u64,
    /// Cold migration: re-homing the VM definition, no disk data moves.
    #[serde(default = "default_migrate_time")]
    pub cold_migrate_time_s: u64,
}

fn default_boot_time() -> u64 {
    60
}
fn default_shutdown_time() -> u64 {
    20
}
fn default_clone_rate() -> u64 {
    30
}
fn default_migrate_time() -> u64 {
    5
}

impl Default for HypervisorConfig {
    fn default() -> Self {
        Self {
            boot_time_s: default_boot_time(),
            shutdown_time_s: default_shutdown_time(),
            clone_rate_s_per_gib: default_clone_rate(),
            cold_migrate_time_s: default_migrate_time(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompletionKind {
    Boot,
    Shutdown,
    Clone,
    Migrate {
        dest: HostId,
        /// Part of a provisioning chain: power the VM on as soon as it
        /// lands.
        then_power_on: bool,
    },
}

/// An operation in flight: what completes, on which VM, and when.
#[derive(Debug, Clone)]
pub struct PendingOp {
    pub vm_id: VmId,
    pub kind: CompletionKind,
    pub due_s: u64,
}

/// Result of delivering a completion.
#[derive(Debug, Default)]
pub struct CompleteOutcome {
    /// Next leg of a chain (migration handing over to a boot).
    pub follow_up: Option<PendingOp>,
    /// A chained power-on failed its capacity recheck; the VM stays
    /// powered off where it landed and the manager will replan.
    pub chain_refused: Option<String>,
}

#[derive(Debug, Error)]
pub enum HypervisorError {
    #[error("{op} requires a {required} VM; {vm} is {actual:?}")]
    WrongPowerState {
        op: &'static str,
        vm: VmId,
        required: &'static str,
        actual: PowerState,
    },
    #[error("refusing to power off {vm}: {jobs} job(s) still running")]
    Busy { vm: VmId, jobs: usize },
    #[error("live migration is not supported; {vm} is online")]
    HotMigration { vm: VmId },
    #[error("host {host} cannot fit {vm} ({demand})")]
    NoCapacity {
        host: HostId,
        vm: VmId,
        demand: String,
    },
    #[error("{vm} is mid-migration; wait for it to land")]
    MidMigration { vm: VmId },
    #[error("host {host} is retired")]
    RetiredHost { host: HostId },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// The contract a real virtualisation backend would implement. All five
/// operations validate against the shared cluster state and mutate it; the
/// simulated latencies surface as [`PendingOp`]s the caller must deliver
/// back via [`Driver::complete`].
pub trait Driver {
    fn power_on(&self, state: &mut ClusterState, vm_id: &VmId, now_s: u64)
        -> Result<PendingOp, HypervisorError>;
    fn power_off(&self, state: &mut ClusterState, vm_id: &VmId, now_s: u64)
        -> Result<PendingOp, HypervisorError>;
    fn cold_migrate(
        &self,
        state: &mut ClusterState,
        vm_id: &VmId,
        dest: &HostId,
        then_power_on: bool,
        now_s: u64,
    ) -> Result<PendingOp, HypervisorError>;
    fn clone_vm(
        &self,
        state: &mut ClusterState,
        template_id: &TemplateId,
        target_host: &HostId,
        now_s: u64,
    ) -> Result<(VmId, PendingOp), HypervisorError>;
    fn destroy(&self, state: &mut ClusterState, vm_id: &VmId, now_s: u64)
        -> Result<(), HypervisorError>;
    fn complete(
        &self,
        state: &mut ClusterState,
        op: &PendingOp,
        now_s: u64,
    ) -> Result<CompleteOutcome, HypervisorError>;

    /// State query half of the contract.
    fn power_state(&self, state: &ClusterState, vm_id: &VmId) -> Option<PowerState> {
        state.vms.get(vm_id).map(|vm| vm.power)
    }
}

/// Simulated backend: fixed configurable latencies, instant bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct SimDriver {
    pub cfg: HypervisorConfig,
}

impl SimDriver {
    pub fn new(cfg: HypervisorConfig) -> Self {
        Self { cfg }
    }
}

impl Driver for SimDriver {
    fn power_on(
        &self,
        state: &mut ClusterState,
        vm_id: &VmId,
        now_s: u64,
    ) -> Result<PendingOp, HypervisorError> {
        let vm = state.vm(vm_id)?;
        if vm.power != PowerState::PoweredOff {
            return Err(HypervisorError::WrongPowerState {
                op: "power_on",
                vm: vm_id.clone(),
                required: "powered-off",
                actual: vm.power,
            });
        }
        let host_id = vm
            .host_id
            .clone()
            .ok_or_else(|| HypervisorError::MidMigration { vm: vm_id.clone() })?;
        let alloc = vm.alloc;
        let host = state.host(&host_id)?;
        if !host.can_fit(&alloc, true) {
            return Err(HypervisorError::NoCapacity {
                host: host_id,
                vm: vm_id.clone(),
                demand: alloc.to_string(),
            });
        }
        let host = state.host_mut(&host_id)?;
        host.allocated = host.allocated.add(&alloc);
        host.used_slots += 1;
        let vm = state.vm_mut(vm_id)?;
        vm.power = PowerState::Booting;
        vm.offline_flag = true;
        if vm.fresh_path != Some(ProvisionPath::Cloned) {
            vm.fresh_path = Some(ProvisionPath::PoweredOn);
        }
        Ok(PendingOp {
            vm_id: vm_id.clone(),
            kind: CompletionKind::Boot,
            due_s: now_s + self.cfg.boot_time_s,
        })
    }

    fn power_off(
        &self,
        state: &mut ClusterState,
        vm_id: &VmId,
        now_s: u64,
    ) -> Result<PendingOp, HypervisorError> {
        let vm = state.vm(vm_id)?;
        if vm.power != PowerState::Online {
            return Err(HypervisorError::WrongPowerState {
                op: "power_off",
                vm: vm_id.clone(),
                required: "online",
                actual: vm.power,
            });
        }
        if !vm.running_job_ids.is_empty() {
            return Err(HypervisorError::Busy {
                vm: vm_id.clone(),
                jobs: vm.running_job_ids.len(),
            });
        }
        let vm = state.vm_mut(vm_id)?;
        vm.power = PowerState::ShuttingDown;
        vm.idle_since = None;
        Ok(PendingOp {
            vm_id: vm_id.clone(),
            kind: CompletionKind::Shutdown,
            due_s: now_s + self.cfg.shutdown_time_s,
        })
    }

    fn cold_migrate(
        &self,
        state: &mut ClusterState,
        vm_id: &VmId,
        dest: &HostId,
        then_power_on: bool,
        now_s: u64,
    ) -> Result<PendingOp, HypervisorError> {
        let vm = state.vm(vm_id)?;
        if vm.power == PowerState::Online {
            return Err(HypervisorError::HotMigration { vm: vm_id.clone() });
        }
        if vm.power != PowerState::PoweredOff {
            return Err(HypervisorError::WrongPowerState {
                op: "cold_migrate",
                vm: vm_id.clone(),
                required: "powered-off",
                actual: vm.power,
            });
        }
        let src = vm
            .host_id
            .clone()
            .ok_or_else(|| HypervisorError::MidMigration { vm: vm_id.clone() })?;
        let alloc = vm.alloc;
        let dest_host = state.host(dest)?;
        if dest_host.retired {
            return Err(HypervisorError::RetiredHost { host: dest.clone() });
        }
        // the point of the move is a subsequent power-on; refuse now if
        // that could not fit
        if !dest_host.can_fit(&alloc, true) {
            return Err(HypervisorError::NoCapacity {
                host: dest.clone(),
                vm: vm_id.clone(),
                demand: alloc.to_string(),
            });
        }
        state.host_mut(&src)?.resident_vm_ids.remove(vm_id);
        state.vm_mut(vm_id)?.host_id = None;
        Ok(PendingOp {
            vm_id: vm_id.clone(),
            kind: CompletionKind::Migrate {
                dest: dest.clone(),
                then_power_on,
            },
            due_s: now_s + self.cfg.cold_migrate_time_s,
        })
    }

    fn clone_vm(
        &self,
        state: &mut ClusterState,
        template_id: &TemplateId,
        target_host: &HostId,
        now_s: u64,
    ) -> Result<(VmId, PendingOp), HypervisorError> {
        let tpl = state.template(template_id)?.clone();
        let host = state.host(target_host)?;
        if host.retired {
            return Err(HypervisorError::RetiredHost {
                host: target_host.clone(),
            });
        }
        let vm_id = state.fresh_clone_id();
        state.pool.charge(&vm_id, tpl.image_size_gib)?;
        let vm = Vm {
            vm_id: vm_id.clone(),
            template_id: template_id.clone(),
            host_id: Some(target_host.clone()),
            power: PowerState::Cloning,
            offline_flag: true,
            reserved: false,
            alloc: tpl.alloc(),
            free_cores: tpl.cores,
            running_job_ids: BTreeSet::new(),
            powered_on_at: None,
            idle_since: None,
            last_used_s: now_s,
            fresh_path: Some(ProvisionPath::Cloned),
            cleared_at_s: None,
        };
        state.host_mut(target_host)?.resident_vm_ids.insert(vm_id.clone());
        state.vms.insert(vm_id.clone(), vm);
        Ok((
            vm_id.clone(),
            PendingOp {
                vm_id,
                kind: CompletionKind::Clone,
                due_s: now_s + tpl.image_size_gib * self.cfg.clone_rate_s_per_gib,
            },
        ))
    }

    fn destroy(
        &self,
        state: &mut ClusterState,
        vm_id: &VmId,
        _now_s: u64,
    ) -> Result<(), HypervisorError> {
        let vm = state.vm(vm_id)?;
        if vm.power != PowerState::PoweredOff {
            return Err(HypervisorError::WrongPowerState {
                op: "destroy",
                vm: vm_id.clone(),
                required: "powered-off",
                actual: vm.power,
            });
        }
        let host_id = vm
            .host_id
            .clone()
            .ok_or_else(|| HypervisorError::MidMigration { vm: vm_id.clone() })?;
        state.pool.release(vm_id)?;
        state.host_mut(&host_id)?.resident_vm_ids.remove(vm_id);
        state.vms.remove(vm_id);
        Ok(())
    }

    fn complete(
        &self,
        state: &mut ClusterState,
        op: &PendingOp,
        now_s: u64,
    ) -> Result<CompleteOutcome, HypervisorError> {
        match &op.kind {
            CompletionKind::Boot => {
                let vm = state.vm_mut(&op.vm_id)?;
                debug_assert_eq!(vm.power, PowerState::Booting);
                vm.power = PowerState::Online;
                vm.powered_on_at = Some(now_s);
                vm.idle_since = Some(now_s);
                vm.last_used_s = now_s;
                vm.cleared_at_s = None;
                Ok(CompleteOutcome::default())
            }
            CompletionKind::Shutdown => {
                let (host_id, alloc) = {
                    let vm = state.vm(&op.vm_id)?;
                    debug_assert_eq!(vm.power, PowerState::ShuttingDown);
                    (vm.host_id.clone().expect("shutting-down VM has a host"), vm.alloc)
                };
                let host = state.host_mut(&host_id)?;
                host.allocated = host
                    .allocated
                    .checked_sub(&alloc)
                    .expect("released more than was allocated");
                host.used_slots -= 1;
                let vm = state.vm_mut(&op.vm_id)?;
                vm.power = PowerState::PoweredOff;
                vm.powered_on_at = None;
                vm.offline_flag = true;
                Ok(CompleteOutcome::default())
            }
            CompletionKind::Clone => {
                let vm = state.vm_mut(&op.vm_id)?;
                debug_assert_eq!(vm.power, PowerState::Cloning);
                vm.power = PowerState::PoweredOff;
                vm.last_used_s = now_s;
                Ok(CompleteOutcome::default())
            }
            CompletionKind::Migrate {
                dest,
                then_power_on,
            } => {
                state.host_mut(dest)?.resident_vm_ids.insert(op.vm_id.clone());
                state.vm_mut(&op.vm_id)?.host_id = Some(dest.clone());
                if !then_power_on {
                    return Ok(CompleteOutcome::default());
                }
                match self.power_on(state, &op.vm_id, now_s) {
                    Ok(pending) => Ok(CompleteOutcome {
                        follow_up: Some(pending),
                        chain_refused: None,
                    }),
                    Err(e) => Ok(CompleteOutcome {
                        follow_up: None,
                        chain_refused: Some(e.to_string()),
                    }),
                }
            }
        }
    }
}

// ============================================================
// tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn small_cluster() -> ClusterState {
        let mut state = ClusterState::default();
        let tpl = VmTemplate {
            template_id: TemplateId::new("t1"),
            image_size_gib: 10,
            cores: 4,
            ram_mib: 4096,
            scratch_gib: 20,
        };
        state.templates.insert(tpl.template_id.clone(), tpl.clone());
        for (id, freq) in [("h1", 2400u32), ("h2", 3000u32)] {
            state.hosts.insert(
                HostId::new(id),
                HostState::new(HostSpec {
                    host_id: HostId::new(id),
                    cpu_cores: 8,
                    cpu_freq_mhz: freq,
                    ram_total_mib: 17408,
                    ram_reserved_mib: 1024,
                    scratch_total_gib: 100,
                    vm_slots: 2,
                }),
            );
        }
        state.pool = StoragePool::new(100);
        let vm = Vm {
            vm_id: VmId::new("vm1"),
            template_id: tpl.template_id.clone(),
            host_id: Some(HostId::new("h1")),
            power: PowerState::PoweredOff,
            offline_flag: true,
            reserved: false,
            alloc: tpl.alloc(),
            free_cores: tpl.cores,
            running_job_ids: Default::default(),
            powered_on_at: None,
            idle_since: None,
            last_used_s: 0,
            fresh_path: None,
            cleared_at_s: None,
        };
        state.pool.charge(&vm.vm_id, 10).unwrap();
        state
            .hosts
            .get_mut(&HostId::new("h1"))
            .unwrap()
            .resident_vm_ids
            .insert(vm.vm_id.clone());
        state.vms.insert(vm.vm_id.clone(), vm);
        state
    }

    fn driver() -> SimDriver {
        SimDriver::new(HypervisorConfig::default())
    }

    #[test]
    fn power_on_debits_at_initiation_and_onlines_after_boot_time() {
        let mut state = small_cluster();
        let drv = driver();
        let pending = drv.power_on(&mut state, &VmId::new("vm1"), 100).unwrap();
        assert_eq!(pending.due_s, 160);
        assert_eq!(state.vms[&VmId::new("vm1")].power, PowerState::Booting);
        let host = &state.hosts[&HostId::new("h1")];
        assert_eq!(host.allocated, ResourceVector::new(4, 4096, 20));
        assert_eq!(host.used_slots, 1, "a booting VM already occupies its slot");
        state.audit().unwrap();

        drv.complete(&mut state, &pending, 160).unwrap();
        let vm = &state.vms[&VmId::new("vm1")];
        assert_eq!(vm.power, PowerState::Online);
        assert_eq!(vm.powered_on_at, Some(160));
        assert!(vm.offline_flag, "a fresh boot comes up flagged");
        state.audit().unwrap();
    }

    #[test]
    fn power_on_refused_when_host_cannot_fit() {
        let mut state = small_cluster();
        state.hosts.get_mut(&HostId::new("h1")).unwrap().allocated =
            ResourceVector::new(5, 0, 0); // 5 + 4 > 8 cores
        let before = state.hosts[&HostId::new("h1")].allocated;
        let err = driver().power_on(&mut state, &VmId::new("vm1"), 0).unwrap_err();
        assert!(matches!(err, HypervisorError::NoCapacity { .. }));
        assert_eq!(state.hosts[&HostId::new("h1")].allocated, before);
        assert_eq!(state.vms[&VmId::new("vm1")].power, PowerState::PoweredOff);
    }

    #[test]
    fn power_on_of_non_powered_off_vm_is_a_state_error() {
        let mut state = small_cluster();
        let drv = driver();
        let p = drv.power_on(&mut state, &VmId::new("vm1"), 0).unwrap();
        drv.complete(&mut state, &p, p.due_s).unwrap();
        let err = drv.power_on(&mut state, &VmId::new("vm1"), 200).unwrap_err();
        assert!(matches!(err, HypervisorError::WrongPowerState { .. }));
    }

    #[test]
    fn power_off_busy_vm_is_refused() {
        let mut state = small_cluster();
        let drv = driver();
        let p = drv.power_on(&mut state, &VmId::new("vm1"), 0).unwrap();
        drv.complete(&mut state, &p, p.due_s).unwrap();
        state
            .vms
            .get_mut(&VmId::new("vm1"))
            .unwrap()
            .running_job_ids
            .insert(JobId::new("j1"));
        let err = drv.power_off(&mut state, &VmId::new("vm1"), 100).unwrap_err();
        assert!(matches!(err, HypervisorError::Busy { jobs: 1, .. }));
    }

    #[test]
    fn power_cycle_releases_exactly_what_was_acquired() {
        let mut state = small_cluster();
        let drv = driver();
        let before = state.hosts[&HostId::new("h1")].allocated;
        let slots_before = state.hosts[&HostId::new("h1")].used_slots;
        let p = drv.power_on(&mut state, &VmId::new("vm1"), 0).unwrap();
        drv.complete(&mut state, &p, p.due_s).unwrap();
        let p = drv.power_off(&mut state, &VmId::new("vm1"), 100).unwrap();
        assert_eq!(p.due_s, 120);
        // still debited while shutting down
        assert_eq!(state.hosts[&HostId::new("h1")].used_slots, 1);
        drv.complete(&mut state, &p, p.due_s).unwrap();
        let host = &state.hosts[&HostId::new("h1")];
        assert_eq!(host.allocated, before);
        assert_eq!(host.used_slots, slots_before);
        assert_eq!(state.vms[&VmId::new("vm1")].powered_on_at, None);
        state.audit().unwrap();
    }

    #[test]
    fn migrate_moves_residency_after_latency() {
        let mut state = small_cluster();
        let drv = driver();
        let p = drv
            .cold_migrate(&mut state, &VmId::new("vm1"), &HostId::new("h2"), false, 50)
            .unwrap();
        assert_eq!(p.due_s, 55);
        assert_eq!(state.vms[&VmId::new("vm1")].host_id, None);
        assert!(!state.hosts[&HostId::new("h1")].resident_vm_ids.contains(&VmId::new("vm1")));
        state.audit().unwrap();
        drv.complete(&mut state, &p, 55).unwrap();
        assert_eq!(state.vms[&VmId::new("vm1")].host_id, Some(HostId::new("h2")));
        assert!(state.hosts[&HostId::new("h2")].resident_vm_ids.contains(&VmId::new("vm1")));
        state.audit().unwrap();
    }

    #[test]
    fn migrate_of_online_vm_names_the_hot_migration_gap() {
        let mut state = small_cluster();
        let drv = driver();
        let p = drv.power_on(&mut state, &VmId::new("vm1"), 0).unwrap();
        drv.complete(&mut state, &p, p.due_s).unwrap();
        let err = drv
            .cold_migrate(&mut state, &VmId::new("vm1"), &HostId::new("h2"), false, 100)
            .unwrap_err();
        assert!(matches!(err, HypervisorError::HotMigration { .. }));
        assert!(err.to_string().contains("not supported"));
    }

    #[test]
    fn migrate_then_power_on_chain_adds_latencies() {
        let mut state = small_cluster();
        let drv = driver();
        let p = drv
            .cold_migrate(&mut state, &VmId::new("vm1"), &HostId::new("h2"), true, 0)
            .unwrap();
        let out = drv.complete(&mut state, &p, p.due_s).unwrap();
        let boot = out.follow_up.expect("chain continues into a boot");
        assert_eq!(boot.due_s, 5 + 60);
        assert_eq!(state.vms[&VmId::new("vm1")].power, PowerState::Booting);
        // debited on the destination
        assert_eq!(state.hosts[&HostId::new("h2")].used_slots, 1);
        drv.complete(&mut state, &boot, boot.due_s).unwrap();
        assert_eq!(state.vms[&VmId::new("vm1")].power, PowerState::Online);
        state.audit().unwrap();
    }

    #[test]
    fn chained_power_on_refusal_is_reported_not_fatal() {
        let mut state = small_cluster();
        let drv = driver();
        let p = drv
            .cold_migrate(&mut state, &VmId::new("vm1"), &HostId::new("h2"), true, 0)
            .unwrap();
        // destination fills up while the migration is in flight
        state.hosts.get_mut(&HostId::new("h2")).unwrap().allocated =
            ResourceVector::new(8, 0, 0);
        state.hosts.get_mut(&HostId::new("h2")).unwrap().overbook_exempt = true;
        let out = drv.complete(&mut state, &p, p.due_s).unwrap();
        assert!(out.follow_up.is_none());
        assert!(out.chain_refused.unwrap().contains("cannot fit"));
        assert_eq!(state.vms[&VmId::new("vm1")].power, PowerState::PoweredOff);
        assert_eq!(state.vms[&VmId::new("vm1")].host_id, Some(HostId::new("h2")));
    }

    #[test]
    fn clone_charges_pool_at_initiation_and_scales_with_image_size() {
        let mut state = small_cluster();
        let drv = driver();
        let free_before = state.pool.free_gib();
        let (vm_id, p) = drv
            .clone_vm(&mut state, &TemplateId::new("t1"), &HostId::new("h2"), 1000)
            .unwrap();
        assert_eq!(p.due_s, 1000 + 10 * 30);
        assert_eq!(state.pool.free_gib(), free_before - 10);
        assert_eq!(state.vms[&vm_id].power, PowerState::Cloning);
        // cloning occupies no host capacity
        assert_eq!(state.hosts[&HostId::new("h2")].allocated, ResourceVector::ZERO);
        state.audit().unwrap();
        drv.complete(&mut state, &p, p.due_s).unwrap();
        assert_eq!(state.vms[&vm_id].power, PowerState::PoweredOff);
        state.audit().unwrap();
    }

    #[test]
    fn clone_refused_when_pool_lacks_space() {
        let mut state = small_cluster();
        state.pool.capacity_gib = 15; // 10 used, 5 free, image needs 10
        let err = driver()
            .clone_vm(&mut state, &TemplateId::new("t1"), &HostId::new("h2"), 0)
            .unwrap_err();
        assert!(err.to_string().contains("pool"));
        assert_eq!(state.vms.len(), 1, "no half-created VM left behind");
    }

    #[test]
    fn destroy_refuses_online_and_frees_pool_when_off() {
        let mut state = small_cluster();
        let drv = driver();
        let p = drv.power_on(&mut state, &VmId::new("vm1"), 0).unwrap();
        drv.complete(&mut state, &p, p.due_s).unwrap();
        let err = drv.destroy(&mut state, &VmId::new("vm1"), 100).unwrap_err();
        assert!(matches!(err, HypervisorError::WrongPowerState { .. }));
        let p = drv.power_off(&mut state, &VmId::new("vm1"), 200).unwrap();
        drv.complete(&mut state, &p, p.due_s).unwrap();
        drv.destroy(&mut state, &VmId::new("vm1"), 300).unwrap();
        assert!(state.vms.is_empty());
        assert_eq!(state.pool.used_gib(), 0);
        state.audit().unwrap();
    }

    #[test]
    fn clone_destroy_round_trip_leaves_pool_usage_unchanged() {
        let mut state = small_cluster();
        let drv = driver();
        let used_before = state.pool.used_gib();
        let (vm_id, p) = drv
            .clone_vm(&mut state, &TemplateId::new("t1"), &HostId::new("h1"), 0)
            .unwrap();
        drv.complete(&mut state, &p, p.due_s).unwrap();
        drv.destroy(&mut state, &vm_id, 400).unwrap();
        assert_eq!(state.pool.used_gib(), used_before);
        state.audit().unwrap();
    }

    // Random churn: power on/off/migrate/clone/destroy in arbitrary valid
    // orders; the audit after every step proves hosts are never
    // oversubscribed and the pool ledger always balances.
    #[test]
    fn random_operation_churn_never_oversubscribes_anything() {
        let mut rng = StdRng::seed_from_u64(2024);
        let drv = driver();
        for _ in 0..60 {
            let mut state = small_cluster();
            let mut pending: Vec<PendingOp> = Vec::new();
            let mut now = 0u64;
            for _ in 0..120 {
                now += rng.gen_range(1..30);
                // deliver anything due
                pending.sort_by_key(|p| p.due_s);
                while pending.first().map(|p| p.due_s <= now).unwrap_or(false) {
                    let p = pending.remove(0);
                    let due = p.due_s;
                    let out = drv.complete(&mut state, &p, due).unwrap();
                    if let Some(f) = out.follow_up {
                        pending.push(f);
                    }
                    state.audit().unwrap();
                }
                let vm_ids: Vec<VmId> = state.vms.keys().cloned().collect();
                let host_ids: Vec<HostId> = state.hosts.keys().cloned().collect();
                let in_flight: std::collections::BTreeSet<VmId> =
                    pending.iter().map(|p| p.vm_id.clone()).collect();
                match rng.gen_range(0..5) {
                    0 => {
                        if let Some(vm) = vm_ids.iter().find(|v| {
                            !in_flight.contains(v)
                                && state.vms[*v].power == PowerState::PoweredOff
                                && state.vms[*v].host_id.is_some()
                        }) {
                            if let Ok(p) = drv.power_on(&mut state, vm, now) {
                                pending.push(p);
                            }
                        }
                    }
                    1 => {
                        if let Some(vm) = vm_ids.iter().find(|v| {
                            !in_flight.contains(v) && state.vms[*v].power == PowerState::Online
                        }) {
                            if let Ok(p) = drv.power_off(&mut state, vm, now) {
                                pending.push(p);
                            }
                        }
                    }
                    2 => {
                        let dest = &host_ids[rng.gen_range(0..host_ids.len())];
                        if let Some(vm) = vm_ids.iter().find(|v| {
                            !in_flight.contains(v)
                                && state.vms[*v].power == PowerState::PoweredOff
                                && state.vms[*v].host_id.is_some()
                        }) {
                            if let Ok(p) =
                                drv.cold_migrate(&mut state, vm, dest, rng.gen_bool(0.5), now)
                            {
                                pending.push(p);
                            }
                        }
                    }
                    3 => {
                        let host = &host_ids[rng.gen_range(0..host_ids.len())];
                        if let Ok((_, p)) =
                            drv.clone_vm(&mut state, &TemplateId::new("t1"), host, now)
                        {
                            pending.push(p);
                        }
                    }
                    _ => {
                        if let Some(vm) = vm_ids.iter().find(|v| {
                            !in_flight.contains(v)
                                && state.vms[*v].power == PowerState::PoweredOff
                                && state.vms[*v].host_id.is_some()
                        }) {
                            drv.destroy(&mut state, vm, now).unwrap();
                        }
                    }
                }
                state.audit().unwrap();
                let pool_ledger: u64 = state.pool.images.values().sum();
                assert_eq!(pool_ledger, state.pool.used_gib());
                assert!(pool_ledger <= state.pool.capacity_gib);
            }
        }
    }
}
