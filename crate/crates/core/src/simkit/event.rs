//! The simulation's event vocabulary and its persistent log.
//!
//! Every processed event is appended to the [`EventLog`] with the time it
//! fired and a monotonically increasing sequence number; the pair gives
//! the log a total order. Serialized as JSON Lines, one event per line,
//! the log doubles as the determinism witness: two runs agree exactly
//! when their logs' digests agree.

use crate::crm::PlannedAction;
use crate::domain::{GroupName, HostId, JobId, ProvisionPath, QueueName, VmId};
use crate::simkit::scenario::DirectiveKind;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct Event {
    pub time_s: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// What happened, with a payload describing what processing it did.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    JobSubmit {
        job_id: JobId,
        queue: QueueName,
        group: GroupName,
        cores: u32,
        runtime_s: u64,
    },
    SchedulerTick {
        queued: usize,
        started: usize,
    },
    CrmTick {
        queued: usize,
        /// Every action executed this tick, each with its policy tag.
        actions: Vec<PlannedAction>,
        denied: usize,
        started: usize,
    },
    BootComplete {
        vm_id: VmId,
    },
    ShutdownComplete {
        vm_id: VmId,
    },
    CloneComplete {
        vm_id: VmId,
    },
    MigrateComplete {
        vm_id: VmId,
        dest: HostId,
        /// The chained power-on, when the migration carried one.
        chained_boot: bool,
        chain_refused: Option<String>,
    },
    JobStart {
        job_id: JobId,
        vm_id: VmId,
        queue: QueueName,
        /// How the capacity serving this job was provided.
        path: ProvisionPath,
        queue_time_s: u64,
        set_offline: bool,
    },
    JobEnd {
        job_id: JobId,
        vm_id: VmId,
        /// Worker powered off because its host was overbooked and this
        /// end made it the first idle one there.
        overbook_cure: Option<VmId>,
    },
    Directive {
        directive: DirectiveKind,
        /// Workers flagged offline as part of a host removal.
        drained: Vec<VmId>,
    },
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<Event>,
    next_seq: u64,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, time_s: u64, kind: EventKind) {
        if let Some(last) = self.events.last() {
            debug_assert!(last.time_s <= time_s, "log time went backwards");
        }
        self.events.push(Event {
            time_s,
            seq: self.next_seq,
            kind,
        });
        self.next_seq += 1;
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One JSON document per line, in processing order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }

    /// SHA-256 of the serialized log; the determinism witness.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_jsonl().as_bytes());
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in out {
            write!(hex, "{byte:02x}").expect("writing to a String");
        }
        hex
    }
}

// ============================================================
// tests
// ============================================================
