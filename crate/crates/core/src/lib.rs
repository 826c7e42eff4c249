//! Elastic virtual batch cluster: a cluster resource manager that grows and
//! shrinks a farm of batch-worker VMs on a pool of physical hosts, together
//! with the batch system it steers and a deterministic discrete-event
//! simulator to exercise the whole control loop.
//!
//! The crate is organised along the control-plane boundaries of the real
//! system:
//!
//! * [`domain`] — value types shared by everything: hosts, VMs, templates,
//!   queues, jobs, the image storage pool, and the capacity arithmetic.
//! * [`scheduler`] — priority computation and job ordering (wait time,
//!   fair-share with exponential decay, per-queue weight). It ranks jobs and
//!   nothing else; it never looks at node availability.
//! * [`lrms`] — the batch system front: job submission, node records, the
//!   offline flag, and dispatch of jobs onto eligible worker VMs.
//! * [`hypervisor`] — the virtualisation driver boundary: power on/off,
//!   cold migration, clone from template, destroy, each with its latency.
//! * [`crm`] — the cluster resource manager: walks the scheduler's job
//!   order and provisions capacity (clear offline flag, power on, migrate,
//!   clone), releases it again (demand, headroom, overbooking guard), and
//!   enforces the anti-starvation time window.
//! * [`simkit`] — scenario ingestion, the event loop, workload generation,
//!   metrics and event-log export.
//!
//! All state mutation is funnelled through the simulator's event loop; the
//! planner functions in [`crm`] and [`scheduler`] are pure and re-entrant.

pub mod crm;
pub mod domain;
pub mod hypervisor;
pub mod lrms;
pub mod scheduler;
pub mod simkit;
