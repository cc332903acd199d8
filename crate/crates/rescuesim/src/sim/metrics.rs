//! Run metrics: append-only series plus counters, with stable CSV schemas
//! and a JSON summary. Column layouts are part of the tool's interface and
//! stay fixed across runs.

use crate::reputation::MisbehaviorKind;
use crate::NodeId;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize)]
pub struct HeightRecord {
    pub height: u64,
    /// Round the commit landed in (0-based).
    pub commit_round: u32,
    /// Rounds consumed to reach consensus (round + 1).
    pub rounds_to_commit: u32,
    pub commit_time_us: u64,
    /// First time any node entered this height.
    pub start_time_us: u64,
    pub txs: usize,
    pub proposer: NodeId,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub msgs_sent: u64,
    pub bytes_sent: u64,
    pub commits: u64,
    pub partition_active: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OffloadRecord {
    pub slot: u64,
    pub uav: NodeId,
    pub vehicle: NodeId,
    pub unit_cost: f64,
    pub urgency: f64,
    pub data_mbit: f64,
    pub compute_ghz: f64,
    pub payment_cents: f64,
    pub delay_s: f64,
    pub uav_payoff: f64,
    pub vehicle_payoff: f64,
    pub uav_energy_j: f64,
    pub baseline_energy_j: f64,
    pub saved_energy_j: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LearnRecord {
    pub slot: u64,
    pub agent: &'static str,
    pub action_value: f64,
    pub greedy_value: f64,
    pub reward: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReputationRow {
    pub slot: u64,
    pub node: NodeId,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Metrics {
    pub heights: Vec<HeightRecord>,
    pub slots: Vec<SlotRecord>,
    pub offloads: Vec<OffloadRecord>,
    pub learning: Vec<LearnRecord>,
    pub reputation: Vec<ReputationRow>,
    pub evidence_counts: BTreeMap<MisbehaviorKind, u64>,
    pub reports_filed: u64,
    pub reports_accepted: u64,
    /// Total signature-verification work units performed at deliveries.
    pub verify_units: u64,
    pub msgs_sent: u64,
    pub bytes_sent: u64,
    /// Wire bytes the commit proofs would carry without aggregation.
    pub unaggregated_extra_bytes: u64,
    pub drops_partition: u64,
    pub drops_lossy: u64,
    /// Rounds entered summed over committed heights.
    pub total_rounds: u64,
    pub energy_per_byte_j: f64,
    pub energy_per_verify_j: f64,
    pub sim_seconds: f64,
}

impl Metrics {
    /// Energy proxy over the whole run: transmission bytes plus verification
    /// work at calibrated per-unit costs.
    pub fn energy_proxy_j(&self) -> f64 {
        (self.bytes_sent + self.unaggregated_extra_bytes) as f64 * self.energy_per_byte_j
            + self.verify_units as f64 * self.energy_per_verify_j
    }

    pub fn committed_heights(&self) -> u64 {
        self.heights.len() as u64
    }

    pub fn committed_txs(&self) -> u64 {
        self.heights.iter().map(|h| h.txs as u64).sum()
    }

    pub fn mean_rounds_to_commit(&self) -> f64 {
        if self.heights.is_empty() {
            return 0.0;
        }
        self.heights.iter().map(|h| h.rounds_to_commit as f64).sum::<f64>()
            / self.heights.len() as f64
    }

    /// Committed transactions per simulated second.
    pub fn throughput_tx_per_s(&self) -> f64 {
        if self.sim_seconds == 0.0 {
            return 0.0;
        }
        self.committed_txs() as f64 / self.sim_seconds
    }

    /// Mean seconds from height entry to commit.
    pub fn mean_block_latency_s(&self) -> f64 {
        if self.heights.is_empty() {
            return 0.0;
        }
        self.heights
            .iter()
            .map(|h| (h.commit_time_us.saturating_sub(h.start_time_us)) as f64 / 1e6)
            .sum::<f64>()
            / self.heights.len() as f64
    }

    /// Consensus messages sent per round entered.
    pub fn msgs_per_round(&self) -> f64 {
        if self.total_rounds == 0 {
            return 0.0;
        }
        self.msgs_sent as f64 / self.total_rounds as f64
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "heights_committed": self.committed_heights(),
            "txs_committed": self.committed_txs(),
            "mean_rounds_to_commit": self.mean_rounds_to_commit(),
            "throughput_tx_per_s": self.throughput_tx_per_s(),
            "mean_block_latency_s": self.mean_block_latency_s(),
            "msgs_sent": self.msgs_sent,
            "bytes_sent": self.bytes_sent,
            "unaggregated_extra_bytes": self.unaggregated_extra_bytes,
            "verify_units": self.verify_units,
            "msgs_per_round": self.msgs_per_round(),
            "energy_proxy_j": self.energy_proxy_j(),
            "drops_partition": self.drops_partition,
            "drops_lossy": self.drops_lossy,
            "evidence": self.evidence_counts.iter()
                .map(|(k, v)| (format!("{k:?}"), *v))
                .collect::<BTreeMap<String, u64>>(),
            "reports_filed": self.reports_filed,
            "reports_accepted": self.reports_accepted,
            "offload_records": self.offloads.len(),
            "learning_records": self.learning.len(),
            "sim_seconds": self.sim_seconds,
        })
    }

    /// Writes every series with a stable header; empty runs still produce
    /// headers-only files.
    pub fn write_csv_files(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();

        let mut heights = String::from(
            "height,commit_round,rounds_to_commit,start_time_us,commit_time_us,latency_s,txs,proposer\n",
        );
        for h in &self.heights {
            heights.push_str(&format!(
                "{},{},{},{},{},{:.6},{},{}\n",
                h.height,
                h.commit_round,
                h.rounds_to_commit,
                h.start_time_us,
                h.commit_time_us,
                (h.commit_time_us.saturating_sub(h.start_time_us)) as f64 / 1e6,
                h.txs,
                h.proposer
            ));
        }
        written.push(write_file(dir, "heights.csv", &heights)?);

        let mut slots = String::from("slot,msgs_sent,bytes_sent,commits,partition_active\n");
        for s in &self.slots {
            slots.push_str(&format!(
                "{},{},{},{},{}\n",
                s.slot, s.msgs_sent, s.bytes_sent, s.commits, s.partition_active
            ));
        }
        written.push(write_file(dir, "slots.csv", &slots)?);

        let mut off = String::from(
            "slot,uav,vehicle,unit_cost,urgency,data_mbit,compute_ghz,payment_cents,delay_s,\
             uav_payoff,vehicle_payoff,uav_energy_j,baseline_energy_j,saved_energy_j,feasible\n",
        );
        for o in &self.offloads {
            off.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                o.slot,
                o.uav,
                o.vehicle,
                o.unit_cost,
                o.urgency,
                o.data_mbit,
                o.compute_ghz,
                o.payment_cents,
                o.delay_s,
                o.uav_payoff,
                o.vehicle_payoff,
                o.uav_energy_j,
                o.baseline_energy_j,
                o.saved_energy_j,
                o.feasible
            ));
        }
        written.push(write_file(dir, "offload.csv", &off)?);

        let mut learn = String::from("slot,agent,action_value,greedy_value,reward,epsilon\n");
        for l in &self.learning {
            learn.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.3}\n",
                l.slot, l.agent, l.action_value, l.greedy_value, l.reward, l.epsilon
            ));
        }
        written.push(write_file(dir, "learning.csv", &learn)?);

        let mut rep = String::from("slot,node,raw,normalized\n");
        for r in &self.reputation {
            rep.push_str(&format!("{},{},{:.9},{:.9}\n", r.slot, r.node, r.raw, r.normalized));
        }
        written.push(write_file(dir, "reputation.csv", &rep)?);

        let summary = serde_json::to_string_pretty(&self.summary_json())?;
        written.push(write_file(dir, "summary.json", &summary)?);
        Ok(written)
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> io::Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}

/// Least-squares slope of ln(y) on ln(x); used for the message-complexity
/// scaling check.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = Metrics::default();
        let files = metrics.write_csv_files(dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        let heights = std::fs::read_to_string(dir.path().join("heights.csv")).unwrap();
        assert_eq!(heights.lines().count(), 1, "header only");
        assert!(heights.starts_with("height,commit_round,"));
    }

    #[test]
    fn energy_proxy_combines_bytes_and_verifies() {
        let metrics = Metrics {
            bytes_sent: 1_000_000,
            unaggregated_extra_bytes: 500_000,
            verify_units: 2000,
            energy_per_byte_j: 1e-6,
            energy_per_verify_j: 1e-4,
            ..Metrics::default()
        };
        let expected = 1.5 + 0.2;
        assert!((metrics.energy_proxy_j() - expected).abs() < 1e-12);
    }

    #[test]
    fn slope_of_quadratic_is_two() {
        let pts: Vec<(f64, f64)> = [4.0, 10.0, 20.0, 40.0f64]
            .iter()
            .map(|&z| (z, 3.0 * z * z))
            .collect();
        let slope = log_log_slope(&pts);
        assert!((slope - 2.0).abs() < 1e-9, "{slope}");
    }
}
