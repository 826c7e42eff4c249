//! Seeded random workload generation.
//!
//! Each stream draws from its own pair of PRNGs — one for arrival gaps,
//! one for runtimes — keyed by (seed, stream label), so adding or
//! removing a stream never perturbs the draws of the others. Interarrival
//! gaps are exponential via inversion; runtimes follow the configured
//! distribution. Everything is integer seconds, clamped to at least one.

use crate::domain::{Job, JobId, JobState, QueueName};
use crate::simkit::scenario::{RuntimeDist, Scenario, StreamSpec, Workload};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// A PRNG keyed by run seed and stream label, independent of every other
/// label's stream.
fn stream_rng(seed: u64, label: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"crmsim");
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha12Rng::from_seed(key)
}

/// Exponential sample by inversion of the CDF, rounded to whole seconds
/// and never zero.
fn exponential_s(rng: &mut ChaCha12Rng, mean_s: u64) -> u64 {
    let u: f64 = rng.gen(); // uniform in [0, 1)
    let x = -(mean_s as f64) * (1.0 - u).ln();
    (x.round() as u64).max(1)
}

fn runtime_s(rng: &mut ChaCha12Rng, dist: &RuntimeDist) -> u64 {
    match dist {
        RuntimeDist::Fixed { value_s } => *value_s,
        RuntimeDist::Uniform { min_s, max_s } => rng.gen_range(*min_s..=*max_s),
        RuntimeDist::Exponential { mean_s } => exponential_s(rng, *mean_s),
    }
}

fn stream_jobs(
    stream: &StreamSpec,
    group: &crate::domain::GroupName,
    seed: u64,
    horizon_s: u64,
) -> Vec<Job> {
    let mut arrivals = stream_rng(seed, &format!("arrivals/{}", stream.queue));
    let mut runtimes = stream_rng(seed, &format!("runtimes/{}", stream.queue));
    let mut jobs = Vec::new();
    let mut t = stream.start_s;
    let mut n: u64 = 0;
    loop {
        if stream.max_jobs.is_some_and(|cap| n >= cap) {
            break;
        }
        t = t.saturating_add(exponential_s(&mut arrivals, stream.mean_interarrival_s));
        if t > horizon_s {
            break;
        }
        jobs.push(Job {
            job_id: JobId::new(format!("{}-{:05}", stream.queue, n)),
            queue_name: stream.queue.clone(),
            user: "user".to_owned(),
            group: group.clone(),
            cores: stream.cores,
            runtime_s: runtime_s(&mut runtimes, &stream.runtime),
            submit_time_s: t,
            state: JobState::Queued,
            start_time_s: None,
            end_time_s: None,
        });
        n += 1;
    }
    jobs
}

/// All generated submissions, ordered by (submit time, job id).
pub fn generate(scenario: &Scenario, seed: u64) -> Vec<Job> {
    let Workload::Generator { streams } = &scenario.workload else {
        return Vec::new();
    };
    let groups: BTreeMap<QueueName, _> = scenario
        .queues
        .iter()
        .map(|q| (q.queue_name.clone(), q.group.clone()))
        .collect();
    let mut jobs: Vec<Job> = streams
        .iter()
        .flat_map(|s| stream_jobs(s, &groups[&s.queue], seed, scenario.horizon_s))
        .collect();
    jobs.sort_by(|a, b| {
        a.submit_time_s
            .cmp(&b.submit_time_s)
            .then_with(|| a.job_id.cmp(&b.job_id))
    });
    jobs
}

// ============================================================
// tests
// ============================================================
