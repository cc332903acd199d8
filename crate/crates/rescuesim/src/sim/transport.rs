//! Partially synchronous message fabric: a delay/drop oracle with partition
//! windows and full accounting. Before the stabilization slot, deliveries
//! take between one and many delay bounds and may drop; afterwards every
//! delivery between connected nodes lands within the bound.

use crate::NodeId;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeSet;

#[derive(Clone, Debug)]
pub struct TransportParams {
    pub delta_us: u64,
    pub gst_us: u64,
    pub pre_gst_max_delay_factor: f64,
    pub pre_gst_drop_prob: f64,
    pub bandwidth_bytes_per_us: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    /// Propagation delay plus serialization delay, microseconds.
    Deliver { prop_us: u64, size_us: u64 },
    DroppedLossy,
    DroppedPartition,
}

#[derive(Clone, Debug, Default)]
pub struct TransportStats {
    pub msgs_sent: u64,
    pub bytes_sent: u64,
    pub drops_lossy: u64,
    pub drops_partition: u64,
    /// Worst propagation delay granted after stabilization.
    pub max_post_gst_prop_us: u64,
}

pub struct Transport {
    params: TransportParams,
    rng: ChaCha12Rng,
    /// Node ids currently cut off from the rest.
    partitioned: BTreeSet<NodeId>,
    pub stats: TransportStats,
}

impl Transport {
    pub fn new(params: TransportParams, rng: ChaCha12Rng) -> Self {
        Self { params, rng, partitioned: BTreeSet::new(), stats: TransportStats::default() }
    }

    pub fn set_partition(&mut self, nodes: BTreeSet<NodeId>) {
        self.partitioned = nodes;
    }

    pub fn heal_partition(&mut self) {
        self.partitioned.clear();
    }

    pub fn is_partitioned(&self, node: NodeId) -> bool {
        self.partitioned.contains(&node)
    }

    pub fn partitioned_nodes(&self) -> &BTreeSet<NodeId> {
        &self.partitioned
    }

    /// Fate of one point-to-point send of `size` bytes at time `now`.
    pub fn send(&mut self, from: NodeId, to: NodeId, size: usize, now_us: u64) -> SendOutcome {
        self.stats.msgs_sent += 1;
        self.stats.bytes_sent += size as u64;

        // partitions block cross-set traffic in both directions
        if self.partitioned.contains(&from) != self.partitioned.contains(&to) {
            self.stats.drops_partition += 1;
            return SendOutcome::DroppedPartition;
        }

        let size_us = (size as f64 / self.params.bandwidth_bytes_per_us).round() as u64;
        let delta = self.params.delta_us;
        if now_us < self.params.gst_us {
            if self.rng.gen_bool(self.params.pre_gst_drop_prob) {
                self.stats.drops_lossy += 1;
                return SendOutcome::DroppedLossy;
            }
            let max = (delta as f64 * self.params.pre_gst_max_delay_factor) as u64;
            let prop_us = self.rng.gen_range(delta..=max.max(delta + 1));
            SendOutcome::Deliver { prop_us, size_us }
        } else {
            let prop_us = self.rng.gen_range(1..=delta);
            self.stats.max_post_gst_prop_us = self.stats.max_post_gst_prop_us.max(prop_us);
            SendOutcome::Deliver { prop_us, size_us }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn transport(gst_us: u64) -> Transport {
        Transport::new(
            TransportParams {
                delta_us: 1_000_000,
                gst_us,
                pre_gst_max_delay_factor: 10.0,
                pre_gst_drop_prob: 0.2,
                bandwidth_bytes_per_us: 12.5,
            },
            ChaCha12Rng::seed_from_u64(1),
        )
    }

    #[test]
    fn post_gst_delivery_within_bound() {
        let mut t = transport(0);
        for i in 0..5000u64 {
            match t.send(1, 2, 100, i) {
                SendOutcome::Deliver { prop_us, .. } => assert!(prop_us <= 1_000_000),
                other => panic!("post-GST sends never drop: {other:?}"),
            }
        }
        assert_eq!(t.stats.msgs_sent, 5000);
    }

    #[test]
    fn pre_gst_is_slow_and_lossy() {
        let mut t = transport(u64::MAX);
        let mut delivered = 0u64;
        let mut dropped = 0u64;
        for i in 0..5000u64 {
            match t.send(1, 2, 100, i) {
                SendOutcome::Deliver { prop_us, .. } => {
                    assert!(prop_us >= 1_000_000, "pre-GST delay at least one bound");
                    delivered += 1;
                }
                SendOutcome::DroppedLossy => dropped += 1,
                SendOutcome::DroppedPartition => panic!("no partition configured"),
            }
        }
        assert!(dropped > 500 && dropped < 1500, "close to the 20% drop rate: {dropped}");
        assert!(delivered > 0);
    }

    #[test]
    fn partitions_block_cross_traffic_only() {
        let mut t = transport(0);
        t.set_partition([3u64, 4u64].into());
        assert_eq!(t.send(1, 3, 10, 0), SendOutcome::DroppedPartition);
        assert_eq!(t.send(3, 1, 10, 0), SendOutcome::DroppedPartition);
        assert!(matches!(t.send(3, 4, 10, 0), SendOutcome::Deliver { .. }));
        assert!(matches!(t.send(1, 2, 10, 0), SendOutcome::Deliver { .. }));
        t.heal_partition();
        assert!(matches!(t.send(1, 3, 10, 0), SendOutcome::Deliver { .. }));
    }

    #[test]
    fn size_delay_scales_with_bytes() {
        let mut t = transport(0);
        let SendOutcome::Deliver { size_us: small, .. } = t.send(1, 2, 125, 0) else {
            panic!()
        };
        let SendOutcome::Deliver { size_us: large, .. } = t.send(1, 2, 125_000, 0) else {
            panic!()
        };
        assert_eq!(small, 10);
        assert_eq!(large, 10_000);
    }
}
