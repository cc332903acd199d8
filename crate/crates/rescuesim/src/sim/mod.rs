//! Deterministic time-slotted harness: mobility, offloading interactions,
//! partially synchronous consensus event processing, misbehavior
//! bookkeeping, and metrics — one event loop, one master seed, namespaced
//! RNG streams per subsystem.

pub mod adversary;
pub mod config;
pub mod experiments;
pub mod metrics;
pub mod transport;

use crate::consensus::state::{
    decode_vote_archive, ConsensusEvent, Ctx, NodeConsensusState, NodeParams, Output,
};
use crate::consensus::{
    elect_validators, leader_for, Candidate, Committee, ConsensusMsg, ProposalMsg, TimeoutKind,
};
use crate::crypto::{h0, h0_parts, make_scheme, Digest32, KeyPair, PublicKey, SignatureScheme, SIG_LEN};
use crate::game::{equilibrium, uav_payoff_pair, vehicle_payoff, GameParams, OffloadContext};
use crate::ledger::{
    store::ContentStore, Block, OffchainTx, ReportTx, SignedVote, Transaction, VoteKind,
};
use crate::learning::{greedy_step, ActionGrid, DqnAgent, DqnConfig, TabularAgent};
use crate::netmodel::{
    self, average_vehicle_velocity, flying_power, link_rates, offload_delay, offload_energy,
    ChannelParams, OffloadDelay, ReturnPath, Task, UavState, VehicleState,
};
use crate::reputation::{
    benign_records_from_commit, process_report, BehaviorRecord, Evidence, MisbehaviorKind,
    ReputationLedger,
};
use crate::NodeId;
use adversary::{Adversary, BehaviorPlan, Directed};
use config::{ConsensusScheme, LearningScheme, ScenarioConfig};
use metrics::{HeightRecord, LearnRecord, Metrics, OffloadRecord, ReputationRow, SlotRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;
use transport::{SendOutcome, Transport, TransportParams};

pub use config::ConfigError;

/// Vehicle node ids live far above full-node ids.
pub const VEHICLE_ID_BASE: NodeId = 10_000;

/// A validated, runnable scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
}

pub fn load_scenario(cfg: ScenarioConfig) -> Result<Scenario, ConfigError> {
    cfg.validate()?;
    Ok(Scenario { cfg })
}

/// Namespaced deterministic stream: one subsystem's draws never shift
/// another's.
pub fn ns_rng(master: u64, name: &str) -> ChaCha12Rng {
    let d = h0_parts(&[b"rng-ns", &master.to_le_bytes(), name.as_bytes()]);
    ChaCha12Rng::seed_from_u64(u64::from_le_bytes(d.0[..8].try_into().unwrap()))
}

#[derive(Debug)]
pub struct RunResult {
    pub metrics: Metrics,
    pub invariant_violations: Vec<String>,
    /// Every block hash ever committed per height, across all nodes.
    pub commit_registry: BTreeMap<u64, BTreeSet<Digest32>>,
    pub final_reputation: BTreeMap<NodeId, (f64, f64)>,
    pub committee_history: Vec<(u64, Vec<NodeId>)>,
    pub max_post_gst_prop_us: u64,
    pub store_entries: usize,
}

impl RunResult {
    /// No two distinct blocks committed at any height.
    pub fn safety_holds(&self) -> bool {
        self.commit_registry.values().all(|set| set.len() <= 1)
    }
}

#[derive(Clone, Debug)]
enum QueuedPayload {
    Deliver { to: NodeId, from: NodeId, msg: ConsensusMsg },
    Timeout { node: NodeId, kind: TimeoutKind, height: u64, round: u32 },
}

#[derive(Clone, Debug)]
struct Queued {
    due_us: u64,
    seq: u64,
    payload: QueuedPayload,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.due_us, self.seq) == (other.due_us, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due_us, self.seq).cmp(&(other.due_us, other.seq))
    }
}

struct HeightMeta {
    start_us: u64,
    committed: bool,
    commit_voters: usize,
}

/// Mobility and radio state of the physical world.
struct World {
    uavs: Vec<UavState>,
    vehicles: Vec<VehicleState>,
    vehicle_dirs: Vec<f64>,
    ecv_positions: Vec<(f64, f64)>,
    channel: ChannelParams,
    road_length: f64,
    rng: ChaCha12Rng,
}

impl World {
    fn new(cfg: &ScenarioConfig, mut rng: ChaCha12Rng) -> Self {
        let n = &cfg.network;
        let channel = ChannelParams {
            reference_gain: n.reference_gain,
            path_loss_exp: n.path_loss_exp,
            noise: n.noise,
            noise_model: n.noise_model,
            traffic_density: n.traffic_density_per_m,
            max_traffic_density: n.max_traffic_density_per_m,
            min_vehicle_velocity: n.min_vehicle_speed_mps,
            max_vehicle_velocity: n.max_vehicle_speed_mps,
            a2a_bandwidth: n.a2a_bandwidth_hz,
            a2a_tx_power: n.a2a_tx_power_w,
        };
        let spacing = n.road_length_m / n.uav_count.max(1) as f64;
        let uavs = (0..n.uav_count)
            .map(|i| UavState {
                id: i as NodeId,
                position: (i as f64 * spacing, 0.0),
                altitude: n.uav_altitude_m,
                velocity: n.uav_speed_mps.max(n.hover_floor_mps),
                acceleration: n.uav_acceleration_mps2,
                energy: n.battery_capacity_j,
                capacity: n.battery_capacity_j,
                energy_reserve: n.battery_reserve_j,
                tx_power: n.uav_tx_power_w,
                downlink_bandwidth: n.downlink_bandwidth_hz,
                max_velocity: n.uav_max_speed_mps,
            })
            .collect();
        let mean_v = average_vehicle_velocity(n.traffic_density_per_m, &channel)
            .unwrap_or(n.min_vehicle_speed_mps);
        let vehicles = (0..n.vehicle_count)
            .map(|i| VehicleState {
                id: VEHICLE_ID_BASE + i as NodeId,
                position: (rng.gen_range(0.0..n.road_length_m), n.road_width_m / 4.0),
                velocity: (mean_v * rng.gen_range(0.9..1.1))
                    .clamp(n.min_vehicle_speed_mps, n.max_vehicle_speed_mps),
                tx_power: n.vehicle_tx_power_w,
                uplink_bandwidth: n.uplink_bandwidth_hz,
                switched_capacitance: n.switched_capacitance,
                unit_cost: rng.gen_range(cfg.game.unit_cost_range.0..=cfg.game.unit_cost_range.1),
                max_compute: cfg.game.max_compute_ghz * 1e9,
            })
            .collect();
        let vehicle_dirs = (0..n.vehicle_count).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let ecv_positions = (0..n.ecv_count.max(1))
            .map(|i| ((i as f64 + 0.5) * n.road_length_m / n.ecv_count.max(1) as f64, 0.0))
            .collect();
        Self {
            uavs,
            vehicles,
            vehicle_dirs,
            ecv_positions,
            channel,
            road_length: n.road_length_m,
            rng,
        }
    }

    fn step(&mut self, dt: f64, hover_floor: f64) {
        for uav in &mut self.uavs {
            uav.position.0 = (uav.position.0 + uav.velocity * dt).rem_euclid(self.road_length);
            let v = uav.velocity.max(hover_floor);
            if let Ok(p) = flying_power(v, uav.acceleration, 0.0037, 5.0206) {
                uav.energy = (uav.energy - p * dt).max(0.0);
            }
        }
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            v.position.0 =
                (v.position.0 + self.vehicle_dirs[i] * v.velocity * dt).rem_euclid(self.road_length);
        }
    }

    /// Wrapped 3-D separation between a UAV and a ground point.
    fn distance(&self, uav: &UavState, ground: (f64, f64)) -> f64 {
        let dx_raw = (uav.position.0 - ground.0).abs();
        let dx = dx_raw.min(self.road_length - dx_raw);
        let dy = uav.position.1 - ground.1;
        (dx * dx + dy * dy + uav.altitude * uav.altitude).sqrt()
    }

    fn vehicles_in_range(&self, uav_idx: usize, range: f64) -> Vec<usize> {
        let uav = &self.uavs[uav_idx];
        (0..self.vehicles.len())
            .filter(|&i| self.distance(uav, self.vehicles[i].position) <= range)
            .collect()
    }

    fn nearest_ecv_distance(&self, uav_idx: usize) -> f64 {
        let uav = &self.uavs[uav_idx];
        self.ecv_positions
            .iter()
            .map(|&p| self.distance(uav, p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// One scheduled offloading task.
#[derive(Clone, Debug)]
struct PendingTask {
    slot: u64,
    uav_idx: usize,
    task: Task,
}

fn generate_tasks(cfg: &ScenarioConfig, rng: &mut ChaCha12Rng) -> Vec<PendingTask> {
    let g = &cfg.game;
    let mut tasks = Vec::new();
    for uav_idx in 0..cfg.network.uav_count {
        let count = rng.gen_range(g.tasks_per_uav_range.0..=g.tasks_per_uav_range.1);
        for k in 0..count {
            let slot = rng.gen_range(1..=cfg.slots);
            tasks.push(PendingTask {
                slot,
                uav_idx,
                task: Task {
                    owner_uav: uav_idx as NodeId,
                    index: k,
                    data_bits: rng.gen_range(g.task_data_mbit_range.0..=g.task_data_mbit_range.1)
                        * 1e6,
                    cycles_per_bit: rng
                        .gen_range(g.cycles_per_bit_range.0..=g.cycles_per_bit_range.1),
                    ttl: g.task_ttl_s,
                    urgency: rng.gen_range(g.urgency_range.0..=g.urgency_range.1),
                    output_ratio: rng
                        .gen_range(g.output_ratio_range.0..=g.output_ratio_range.1),
                },
            });
        }
    }
    tasks.sort_by_key(|t| (t.slot, t.uav_idx, t.task.index));
    tasks
}

/// Full simulation run. Writes a JSON-lines event trace when `trace` is
/// given.
pub fn run(scenario: &Scenario, mut trace: Option<&mut dyn Write>) -> RunResult {
    let cfg = &scenario.cfg;
    let slot_us = (cfg.network.slot_seconds * 1e6) as u64;
    let scheme = make_scheme(cfg.consensus.crypto_backend);

    // effective consensus knobs per comparison scheme
    let (eff_psi, eff_decay, elections_enabled) = match cfg.consensus.scheme {
        ConsensusScheme::Proposal => {
            (cfg.consensus.level1_size, cfg.reputation.decay, true)
        }
        ConsensusScheme::Art => (cfg.consensus.committee_size, 0.0, true),
        ConsensusScheme::Naive => (cfg.consensus.committee_size, cfg.reputation.decay, false),
    };

    // identities
    let mut key_rng = ns_rng(cfg.seed, "keys");
    let full_node_ids: Vec<NodeId> = (0..cfg.consensus.full_nodes as NodeId).collect();
    let keypairs: BTreeMap<NodeId, KeyPair> = full_node_ids
        .iter()
        .map(|&id| (id, scheme.keygen(id, 0, key_rng.gen())))
        .collect();
    let registry: BTreeMap<NodeId, PublicKey> =
        keypairs.iter().map(|(id, kp)| (*id, kp.pk)).collect();
    let vehicle_keys: Vec<KeyPair> = (0..cfg.network.vehicle_count)
        .map(|i| scheme.keygen(VEHICLE_ID_BASE + i as NodeId, 0, key_rng.gen()))
        .collect();
    let pk_to_node: BTreeMap<PublicKey, NodeId> =
        registry.iter().map(|(id, pk)| (*pk, *id)).collect();

    // reputation
    let mut rep_params = cfg.reputation.params();
    rep_params.decay = eff_decay;
    let mut reputation = ReputationLedger::new(rep_params);
    for &id in &full_node_ids {
        reputation.register(id);
    }

    // initial committee
    let mut election_rng = ns_rng(cfg.seed, "election");
    let z = cfg.consensus.committee_size;
    let initial_committee = if elections_enabled {
        let candidates: Vec<Candidate> = full_node_ids
            .iter()
            .map(|&id| Candidate { id, reputation: reputation.normalized(id).unwrap_or(0.5) })
            .collect();
        elect_validators(
            &candidates,
            z,
            eff_psi,
            cfg.consensus.vote_policy,
            &BTreeMap::new(),
            &mut election_rng,
        )
        .expect("validated config guarantees enough candidates")
    } else {
        Committee {
            validators: full_node_ids[..z].to_vec(),
            level1: eff_psi,
            voting_power: full_node_ids[..z].iter().map(|&id| (id, 0.5)).collect(),
        }
    };

    // adversary: Byzantine nodes are drawn from the initial committee
    let byz_count = scenario.cfg.byzantine_count().min(initial_committee.validators.len());
    let mut plans = BTreeMap::new();
    if byz_count > 0 {
        let behaviors = &cfg.adversary.behaviors;
        for (i, &id) in initial_committee.validators[..byz_count].iter().enumerate() {
            plans.insert(
                id,
                BehaviorPlan {
                    behavior: behaviors[i % behaviors.len()],
                    active_from_slot: cfg.adversary.switch_slot,
                },
            );
        }
    }
    let mut adversary = Adversary::new(plans);

    // consensus nodes
    let node_params = NodeParams {
        propose_timeout_us: (cfg.consensus.propose_timeout_s * 1e6) as u64,
        timeout_increment_us: (cfg.consensus.timeout_increment_s * 1e6) as u64,
        vote_timeout_us: (cfg.consensus.vote_timeout_s * 1e6) as u64,
        commit_wait_us: (cfg.consensus.commit_wait_ms * 1e3) as u64,
        chunk_size: cfg.consensus.chunk_size_bytes,
        max_block_txs: cfg.consensus.block_size_txs,
    };
    let genesis = Block::genesis(0);
    let mut nodes: BTreeMap<NodeId, NodeConsensusState> = full_node_ids
        .iter()
        .map(|&id| {
            (
                id,
                NodeConsensusState::new(
                    id,
                    keypairs[&id].clone(),
                    node_params,
                    initial_committee.clone(),
                    &genesis,
                ),
            )
        })
        .collect();

    let mut transport = Transport::new(
        TransportParams {
            delta_us: (cfg.adversary.delta_s * 1e6) as u64,
            gst_us: cfg.adversary.gst_slot * slot_us,
            pre_gst_max_delay_factor: cfg.adversary.pre_gst_max_delay_factor,
            pre_gst_drop_prob: cfg.adversary.pre_gst_drop_prob,
            bandwidth_bytes_per_us: cfg.adversary.bandwidth_bytes_per_s / 1e6,
        },
        ns_rng(cfg.seed, "transport"),
    );

    let mut world = World::new(cfg, ns_rng(cfg.seed, "mobility"));
    let mut task_rng = ns_rng(cfg.seed, "tasks");
    let mut pending_tasks = if cfg.game.enabled && !cfg.learning.enabled {
        generate_tasks(cfg, &mut task_rng)
    } else {
        Vec::new()
    };
    let mut workload_rng = ns_rng(cfg.seed, "workload");

    let mut dynamic_game = if cfg.learning.enabled {
        Some(DynamicGame::new(cfg))
    } else {
        None
    };

    // run state
    let mut metrics = Metrics {
        energy_per_byte_j: cfg.metrics.energy_per_byte_j,
        energy_per_verify_j: cfg.metrics.energy_per_verify_j,
        ..Metrics::default()
    };
    let mut queue: BinaryHeap<Reverse<Queued>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut now_us = 0u64;
    let mut invariants: Vec<String> = Vec::new();
    let mut commit_registry: BTreeMap<u64, BTreeSet<Digest32>> = BTreeMap::new();
    let mut height_meta: BTreeMap<u64, HeightMeta> = BTreeMap::new();
    let mut evidence_pool: BTreeMap<(MisbehaviorKind, NodeId, u64, u32), (Evidence, BTreeSet<NodeId>)> =
        BTreeMap::new();
    let mut reported: BTreeSet<(MisbehaviorKind, NodeId, u64, u32)> = BTreeSet::new();
    let mut slot_records: Vec<BehaviorRecord> = Vec::new();
    let mut tx_pool: Vec<Transaction> = Vec::new();
    let mut committed_tx_keys: BTreeSet<Digest32> = BTreeSet::new();
    let mut store = ContentStore::new();
    let mut lock_analysis_done: BTreeSet<u64> = BTreeSet::new();
    let mut committee_history: Vec<(u64, Vec<NodeId>)> =
        vec![(0, initial_committee.validators.clone())];
    let mut current_committee = initial_committee.clone();
    let mut next_election_height = cfg.consensus.election_cadence.max(1);
    let mut current_slot = 0u64;

    macro_rules! trace_line {
        ($($json:tt)+) => {
            if let Some(w) = trace.as_deref_mut() {
                let _ = writeln!(w, "{}", serde_json::json!($($json)+));
            }
        };
    }

    // event processing helpers operate on local state through closures-in-
    // function style to keep borrows simple
    #[allow(clippy::too_many_arguments)]
    fn process_outputs(
        node_id: NodeId,
        outputs: Vec<Output>,
        now_us: u64,
        current_slot: u64,
        slot_us: u64,
        cfg: &ScenarioConfig,
        scheme: &dyn SignatureScheme,
        registry: &BTreeMap<NodeId, PublicKey>,
        nodes: &mut BTreeMap<NodeId, NodeConsensusState>,
        adversary: &mut Adversary,
        transport: &mut Transport,
        queue: &mut BinaryHeap<Reverse<Queued>>,
        seq: &mut u64,
        metrics: &mut Metrics,
        invariants: &mut Vec<String>,
        commit_registry: &mut BTreeMap<u64, BTreeSet<Digest32>>,
        height_meta: &mut BTreeMap<u64, HeightMeta>,
        evidence_pool: &mut BTreeMap<(MisbehaviorKind, NodeId, u64, u32), (Evidence, BTreeSet<NodeId>)>,
        slot_records: &mut Vec<BehaviorRecord>,
        committed_tx_keys: &mut BTreeSet<Digest32>,
        store: &mut ContentStore,
        lock_analysis_done: &mut BTreeSet<u64>,
        pk_to_node: &BTreeMap<PublicKey, NodeId>,
        trace: &mut Option<&mut dyn Write>,
        reputation: &ReputationLedger,
        commits_this_slot: &mut u64,
    ) {
        for output in outputs {
            match output {
                Output::Broadcast(msg) => {
                    let peers: Vec<NodeId> =
                        registry.keys().copied().filter(|&p| p != node_id).collect();
                    let directed = if adversary.is_active(node_id, current_slot) {
                        let node = &nodes[&node_id];
                        adversary.transform(node, current_slot, now_us, msg, &peers, scheme)
                    } else {
                        vec![Directed::All(msg)]
                    };
                    for d in directed {
                        let (targets, msg) = match d {
                            Directed::All(m) => (peers.clone(), m),
                            Directed::Subset(t, m) => (t, m),
                        };
                        let size = msg.wire_size();
                        // model per-voter commit-proof signatures when
                        // aggregation is off
                        let extra = if cfg.consensus.scheme == ConsensusScheme::Naive {
                            if let ConsensusMsg::Proposal(p) = &msg {
                                let voters = height_meta
                                    .get(&p.height.saturating_sub(1))
                                    .map(|m| m.commit_voters)
                                    .unwrap_or(0);
                                voters.saturating_sub(1) * SIG_LEN
                            } else {
                                0
                            }
                        } else {
                            0
                        };
                        for to in targets {
                            match transport.send(node_id, to, size + extra, now_us) {
                                SendOutcome::Deliver { prop_us, size_us } => {
                                    *seq += 1;
                                    queue.push(Reverse(Queued {
                                        due_us: now_us + prop_us + size_us,
                                        seq: *seq,
                                        payload: QueuedPayload::Deliver {
                                            to,
                                            from: node_id,
                                            msg: msg.clone(),
                                        },
                                    }));
                                }
                                SendOutcome::DroppedLossy => metrics.drops_lossy += 1,
                                SendOutcome::DroppedPartition => metrics.drops_partition += 1,
                            }
                            metrics.unaggregated_extra_bytes += extra as u64;
                        }
                    }
                }
                Output::Schedule { kind, height, round, delay_us } => {
                    *seq += 1;
                    queue.push(Reverse(Queued {
                        due_us: now_us + delay_us,
                        seq: *seq,
                        payload: QueuedPayload::Timeout { node: node_id, kind, height, round },
                    }));
                }
                Output::Committed(cb) => {
                    let hashes = commit_registry.entry(cb.height).or_default();
                    hashes.insert(cb.block.hash());
                    if hashes.len() > 1 {
                        invariants.push(format!(
                            "conflicting commits at height {}: {:?}",
                            cb.height, hashes
                        ));
                    }
                    let meta = height_meta.entry(cb.height).or_insert(HeightMeta {
                        start_us: now_us,
                        committed: false,
                        commit_voters: 0,
                    });
                    if !meta.committed {
                        meta.committed = true;
                        meta.commit_voters = cb.proof.voters.len();
                        *commits_this_slot += 1;
                        metrics.total_rounds += cb.round as u64 + 1;
                        metrics.heights.push(HeightRecord {
                            height: cb.height,
                            commit_round: cb.round,
                            rounds_to_commit: cb.round + 1,
                            commit_time_us: cb.commit_time_us,
                            start_time_us: meta.start_us,
                            txs: cb.block.txs.len(),
                            proposer: cb.block.header.proposer,
                        });
                        // first commit carries the canonical transaction set
                        for tx in &cb.block.txs {
                            committed_tx_keys.insert(h0(&tx.to_bytes()));
                            match tx {
                                Transaction::Report(rtx) => {
                                    let valid = validate_report_evidence(rtx, registry, scheme);
                                    let outcome = process_report(
                                        rtx,
                                        valid,
                                        reputation.current_slot(),
                                        pk_to_node,
                                    );
                                    if outcome.accepted {
                                        metrics.reports_accepted += 1;
                                    }
                                    slot_records.extend(outcome.records);
                                }
                                Transaction::Offchain(_) | Transaction::Payload(_) => {}
                            }
                        }
                        slot_records.extend(benign_records_from_commit(
                            &cb.proof,
                            cb.block.header.proposer,
                            reputation.current_slot(),
                        ));
                        if let Some(w) = trace.as_deref_mut() {
                            let _ = writeln!(
                                w,
                                "{}",
                                serde_json::json!({
                                    "t_us": now_us,
                                    "slot": current_slot,
                                    "node": node_id,
                                    "event": "commit",
                                    "height": cb.height,
                                    "round": cb.round,
                                    "hash": cb.block.hash().short_hex(),
                                })
                            );
                        }
                    }
                }
                Output::ArchivedVotes { height, blob, root: _, ptr: _ } => {
                    let _ = store.put(&blob);
                    if lock_analysis_done.insert(height) {
                        if let Ok(votes) = decode_vote_archive(&blob) {
                            let analysis = crate::reputation::detect_lock_violation(
                                &votes,
                                cfg.consensus.committee_size,
                            );
                            for ev in analysis.evidence {
                                evidence_pool
                                    .entry(ev.dedup_key())
                                    .or_insert_with(|| (ev, BTreeSet::new()))
                                    .1
                                    .insert(node_id);
                            }
                        }
                    }
                }
                Output::Evidence(ev) => {
                    evidence_pool
                        .entry(ev.dedup_key())
                        .or_insert_with(|| (ev, BTreeSet::new()))
                        .1
                        .insert(node_id);
                }
                Output::InvariantViolation(msg) => {
                    invariants.push(format!("node {node_id}: {msg}"));
                }
                Output::Transition { height, round, step, note } => {
                    if let Some(w) = trace.as_deref_mut() {
                        let _ = writeln!(
                            w,
                            "{}",
                            serde_json::json!({
                                "t_us": now_us,
                                "slot": current_slot,
                                "node": node_id,
                                "event": "transition",
                                "height": height,
                                "round": round,
                                "step": step,
                                "note": note,
                            })
                        );
                    }
                }
            }
        }
        // track first entry into each height for latency accounting
        if let Some(node) = nodes.get(&node_id) {
            height_meta.entry(node.height).or_insert(HeightMeta {
                start_us: now_us,
                committed: false,
                commit_voters: 0,
            });
        }
        let _ = slot_us;
    }

    // boot every node before any traffic flows
    if cfg.consensus.enabled {
        let mut boot: Vec<(NodeId, Vec<Output>)> = Vec::new();
        for (&id, node) in nodes.iter_mut() {
            let ctx = Ctx { now_us, scheme: scheme.as_ref(), registry: &registry };
            boot.push((id, node.handle(ConsensusEvent::Start, &ctx)));
        }
        let mut commits_this_slot = 0u64;
        for (id, outputs) in boot {
            process_outputs(
                id, outputs, now_us, current_slot, slot_us, cfg, scheme.as_ref(), &registry,
                &mut nodes, &mut adversary, &mut transport, &mut queue, &mut seq, &mut metrics,
                &mut invariants, &mut commit_registry, &mut height_meta, &mut evidence_pool,
                &mut slot_records, &mut committed_tx_keys, &mut store, &mut lock_analysis_done,
                &pk_to_node, &mut trace, &reputation, &mut commits_this_slot,
            );
        }
    }

    let informer_ids: Vec<NodeId> = full_node_ids
        .iter()
        .copied()
        .filter(|id| !adversary.plans.contains_key(id))
        .take(cfg.reputation.informer_group.max(1))
        .collect();

    for slot in 1..=cfg.slots {
        current_slot = slot;
        let slot_end_us = slot * slot_us;

        // partition window boundaries
        if let Some(p) = &cfg.adversary.partition {
            if slot == p.start_slot {
                let cut = partition_set(&current_committee, p.ratio, p.byzantine_share, &adversary);
                trace_line!({"slot": slot, "event": "partition", "nodes": cut.iter().copied().collect::<Vec<_>>()});
                transport.set_partition(cut);
            }
            if slot == p.end_slot {
                trace_line!({"slot": slot, "event": "partition_heal"});
                transport.heal_partition();
            }
        }

        // physical world advances once per slot
        world.step(cfg.network.slot_seconds, cfg.network.hover_floor_mps);

        // offloading interactions
        if cfg.game.enabled && !cfg.learning.enabled {
            let due: Vec<PendingTask> = {
                let split = pending_tasks.iter().position(|t| t.slot > slot).unwrap_or(pending_tasks.len());
                pending_tasks.drain(..split).collect()
            };
            for pt in due {
                if let Some((record, tx)) = offload_task(
                    cfg,
                    &mut world,
                    &pt,
                    slot,
                    scheme.as_ref(),
                    &keypairs,
                    &vehicle_keys,
                    &mut store,
                    now_us,
                ) {
                    metrics.offloads.push(record);
                    if let Some(tx) = tx {
                        tx_pool.push(tx);
                    }
                }
            }
        }

        if let Some(game) = dynamic_game.as_mut() {
            game.step(slot, &mut metrics);
        }

        // consensus event processing up to the end of the slot
        let slot_msgs_before = transport.stats.msgs_sent;
        let slot_bytes_before = transport.stats.bytes_sent;
        let mut commits_this_slot = 0u64;
        if cfg.consensus.enabled {
            // refresh the shared mempool
            for i in 0..cfg.workload.txs_per_slot {
                let mut body = vec![0u8; cfg.workload.tx_bytes.max(16)];
                workload_rng.fill(&mut body[..]);
                body[..8].copy_from_slice(&slot.to_le_bytes());
                body[8..16].copy_from_slice(&(i as u64).to_le_bytes());
                tx_pool.push(Transaction::Payload(body));
            }
            tx_pool.retain(|tx| !committed_tx_keys.contains(&h0(&tx.to_bytes())));
            let cap = cfg.consensus.block_size_txs * 3;
            if tx_pool.len() > cap {
                let excess = tx_pool.len() - cap;
                tx_pool.drain(..excess);
            }
            for node in nodes.values_mut() {
                node.set_mempool(tx_pool.clone());
            }

            while let Some(Reverse(next)) = queue.peek() {
                if next.due_us >= slot_end_us {
                    break;
                }
                let Reverse(item) = queue.pop().unwrap();
                now_us = now_us.max(item.due_us);
                let (target, event) = match item.payload {
                    QueuedPayload::Deliver { to, from, msg } => {
                        metrics.verify_units += verify_units_for(&msg, cfg);
                        (to, ConsensusEvent::Message { from, msg })
                    }
                    QueuedPayload::Timeout { node, kind, height, round } => {
                        (node, ConsensusEvent::Timeout { kind, height, round })
                    }
                };
                let outputs = {
                    let node = nodes.get_mut(&target).expect("known node");
                    let ctx = Ctx { now_us, scheme: scheme.as_ref(), registry: &registry };
                    node.handle(event, &ctx)
                };
                process_outputs(
                    target, outputs, now_us, current_slot, slot_us, cfg, scheme.as_ref(),
                    &registry, &mut nodes, &mut adversary, &mut transport, &mut queue, &mut seq,
                    &mut metrics, &mut invariants, &mut commit_registry, &mut height_meta,
                    &mut evidence_pool, &mut slot_records, &mut committed_tx_keys, &mut store,
                    &mut lock_analysis_done, &pk_to_node, &mut trace, &reputation,
                    &mut commits_this_slot,
                );

                // committee re-election once the boundary height commits
                if elections_enabled {
                    let max_committed =
                        metrics.heights.last().map(|h| h.height).unwrap_or(0);
                    if max_committed >= next_election_height {
                        let candidates: Vec<Candidate> = full_node_ids
                            .iter()
                            .map(|&id| Candidate {
                                id,
                                reputation: reputation.normalized(id).unwrap_or(0.5),
                            })
                            .collect();
                        let overrides = adversary.election_overrides(slot);
                        if let Ok(committee) = elect_validators(
                            &candidates,
                            z,
                            eff_psi,
                            cfg.consensus.vote_policy,
                            &overrides,
                            &mut election_rng,
                        ) {
                            committee_history
                                .push((next_election_height + 1, committee.validators.clone()));
                            trace_line!({"slot": slot, "event": "election", "from_height": next_election_height + 1, "validators": committee.validators});
                            for node in nodes.values_mut() {
                                node.set_pending_committee(next_election_height + 1, committee.clone());
                            }
                            current_committee = committee;
                        }
                        next_election_height += cfg.consensus.election_cadence.max(1);
                    }
                }
                if metrics.heights.len() as u64 >= cfg.consensus.max_heights {
                    break;
                }
            }
            now_us = now_us.max(slot_end_us.saturating_sub(1));
        } else {
            now_us = slot_end_us.saturating_sub(1);
        }

        // misbehavior bookkeeping: corroborated evidence becomes reports
        if cfg.consensus.enabled {
            let keys: Vec<_> = evidence_pool.keys().copied().collect();
            for key in keys {
                if reported.contains(&key) {
                    continue;
                }
                let (ev, observers) = &evidence_pool[&key];
                let needed = match ev.kind {
                    // absence-based findings need corroboration
                    MisbehaviorKind::NonBlockCreation | MisbehaviorKind::WrongBlockCreation => {
                        cfg.reputation.informer_group.min(informer_ids.len()).max(1)
                    }
                    // message-based findings are self-certifying
                    _ => 1,
                };
                if observers.len() >= needed && !informer_ids.is_empty() {
                    let tx = file_report(
                        ev,
                        &informer_ids,
                        &keypairs,
                        &registry,
                        cfg.reputation.report_fee,
                        now_us,
                        scheme.as_ref(),
                    );
                    tx_pool.push(Transaction::Report(tx));
                    metrics.reports_filed += 1;
                    reported.insert(key);
                    *metrics.evidence_counts.entry(ev.kind).or_insert(0) += 1;
                }
            }
        }

        // reputation slot update
        let records = std::mem::take(&mut slot_records);
        reputation.advance_slot(&records);
        for (&id, &norm) in reputation.normalized_all().iter() {
            metrics.reputation.push(ReputationRow {
                slot,
                node: id,
                raw: reputation.raw(id).unwrap_or(0.0),
                normalized: norm,
            });
        }

        metrics.slots.push(SlotRecord {
            slot,
            msgs_sent: transport.stats.msgs_sent - slot_msgs_before,
            bytes_sent: transport.stats.bytes_sent - slot_bytes_before,
            commits: commits_this_slot,
            partition_active: !transport.partitioned_nodes().is_empty(),
        });

        if metrics.heights.len() as u64 >= cfg.consensus.max_heights {
            break;
        }
    }

    metrics.msgs_sent = transport.stats.msgs_sent;
    metrics.bytes_sent = transport.stats.bytes_sent;
    metrics.drops_lossy = transport.stats.drops_lossy;
    metrics.drops_partition = transport.stats.drops_partition;
    metrics.sim_seconds = (current_slot * slot_us) as f64 / 1e6;

    let final_reputation = full_node_ids
        .iter()
        .map(|&id| {
            (id, (reputation.raw(id).unwrap_or(0.0), reputation.normalized(id).unwrap_or(0.5)))
        })
        .collect();

    RunResult {
        metrics,
        invariant_violations: invariants,
        commit_registry,
        final_reputation,
        committee_history,
        max_post_gst_prop_us: transport.stats.max_post_gst_prop_us,
        store_entries: store.len(),
    }
}

/// Verification work charged at delivery, in signature-check units.
fn verify_units_for(msg: &ConsensusMsg, cfg: &ScenarioConfig) -> u64 {
    match msg {
        ConsensusMsg::Vote(_) => 1,
        ConsensusMsg::Proposal(_) => {
            // proposer signature plus the embedded commit-proof check: one
            // aggregate verification, or one per voter without aggregation
            1 + if cfg.consensus.scheme == ConsensusScheme::Naive {
                cfg.consensus.committee_size as u64
            } else {
                1
            }
        }
        ConsensusMsg::Chunk(_) => 0,
    }
}

fn partition_set(
    committee: &Committee,
    ratio: f64,
    byzantine_share: f64,
    adversary: &Adversary,
) -> BTreeSet<NodeId> {
    let total = (ratio * committee.validators.len() as f64).round() as usize;
    let byz_target = (byzantine_share * total as f64).round() as usize;
    let mut cut = BTreeSet::new();
    for &id in committee.validators.iter().filter(|id| adversary.plans.contains_key(id)) {
        if cut.len() >= byz_target {
            break;
        }
        cut.insert(id);
    }
    for &id in committee.validators.iter().rev() {
        if cut.len() >= total {
            break;
        }
        if !adversary.plans.contains_key(&id) {
            cut.insert(id);
        }
    }
    cut
}

fn validate_report_evidence(
    tx: &ReportTx,
    registry: &BTreeMap<NodeId, PublicKey>,
    scheme: &dyn SignatureScheme,
) -> bool {
    let Ok(ev) = Evidence::decode(&tx.evidence) else {
        return false;
    };
    let Some(accused_pk) = registry.get(&ev.accused) else {
        return false;
    };
    if *accused_pk != tx.accused_pk {
        return false;
    }
    match ev.kind {
        MisbehaviorKind::ConflictingVote | MisbehaviorKind::LockViolation => {
            if ev.messages.len() != 2 {
                return false;
            }
            let votes: Vec<SignedVote> = ev
                .messages
                .iter()
                .filter_map(|m| SignedVote::from_bytes(m).ok())
                .collect();
            if votes.len() != 2 {
                return false;
            }
            votes.iter().all(|v| {
                v.voter == ev.accused && scheme.verify(&v.signature, &v.sign_bytes(), accused_pk)
            }) && (votes[0].value != votes[1].value || votes[0].round != votes[1].round)
        }
        MisbehaviorKind::ConflictingProposal => {
            if ev.messages.len() != 2 {
                return false;
            }
            let props: Vec<ProposalMsg> = ev
                .messages
                .iter()
                .filter_map(|m| ProposalMsg::from_bytes(m).ok())
                .collect();
            if props.len() != 2 {
                return false;
            }
            props.iter().all(|p| {
                p.proposer == ev.accused
                    && scheme.verify(&p.signature, &p.sign_bytes(), accused_pk)
            }) && props[0].block_hash != props[1].block_hash
                && props[0].round == props[1].round
                && props[0].height == props[1].height
        }
        // absence-based misbehaviors were corroborated before filing
        MisbehaviorKind::NonBlockCreation | MisbehaviorKind::WrongBlockCreation => true,
    }
}

fn file_report(
    ev: &Evidence,
    informer_ids: &[NodeId],
    keypairs: &BTreeMap<NodeId, KeyPair>,
    registry: &BTreeMap<NodeId, PublicKey>,
    fee: u64,
    now_us: u64,
    scheme: &dyn SignatureScheme,
) -> ReportTx {
    let accused_pk = registry.get(&ev.accused).copied().unwrap_or(crate::crypto::PublicKey([0; 96]));
    let informer_pks: Vec<PublicKey> =
        informer_ids.iter().filter_map(|id| registry.get(id).copied()).collect();
    let evidence = ev.encode();
    let bytes = ReportTx::sign_bytes(&accused_pk, &informer_pks, &evidence, fee, now_us);
    let parts: Vec<_> = informer_ids
        .iter()
        .filter_map(|id| keypairs.get(id).map(|kp| (kp.pk, scheme.sign(&bytes, kp))))
        .collect();
    ReportTx {
        accused_pk,
        informer_pks,
        evidence,
        fee,
        timestamp_us: now_us,
        informer_multisig: scheme.aggregate(&parts).expect("informer group non-empty"),
    }
}

/// Static-equilibrium offload of one task: pick the reachable vehicle with
/// the lowest predicted latency, settle the equilibrium strategies, and
/// account delay/energy on both sides.
#[allow(clippy::too_many_arguments)]
fn offload_task(
    cfg: &ScenarioConfig,
    world: &mut World,
    pt: &PendingTask,
    slot: u64,
    scheme: &dyn SignatureScheme,
    keypairs: &BTreeMap<NodeId, KeyPair>,
    vehicle_keys: &[KeyPair],
    store: &mut ContentStore,
    now_us: u64,
) -> Option<(OffloadRecord, Option<Transaction>)> {
    let g = &cfg.game;
    let uav_idx = pt.uav_idx;
    let candidates = world.vehicles_in_range(uav_idx, cfg.network.a2g_range_m);

    let mut best: Option<(usize, f64, f64, OffloadDelay, GameParams)> = None;
    for vi in candidates {
        let vehicle = &world.vehicles[vi];
        let dist = world.distance(&world.uavs[uav_idx], vehicle.position);
        let Ok(rates) = link_rates(dist, &world.channel, &world.uavs[uav_idx], vehicle) else {
            continue;
        };
        let params = GameParams {
            satisfaction: g.satisfaction,
            urgency: pt.task.urgency,
            payment_weight: g.payment_weight,
            price_coeff: g.price_coeff,
            cost_coeff: g.cost_coeff,
            energy_coeff: g.energy_coeff,
            unit_cost: vehicle.unit_cost,
            max_compute: g.max_compute_ghz,
            max_payment: g.max_payment_cents,
            context: OffloadContext::default(),
        };
        let eq = equilibrium(&params);
        if eq.compute <= 0.0 {
            continue;
        }
        let compute_hz = eq.compute * 1e9;
        // does the vehicle outrun the coverage before results return?
        let t_busy = pt.task.data_bits / rates.a2g
            + pt.task.cycles_per_bit * pt.task.data_bits / compute_hz;
        let future_x = vehicle.position.0
            + world.vehicle_dirs[vi] * vehicle.velocity * t_busy;
        let future_pos = (future_x.rem_euclid(world.road_length), vehicle.position.1);
        let still_covered =
            world.distance(&world.uavs[uav_idx], future_pos) <= cfg.network.a2g_range_m;
        let return_path = if still_covered {
            ReturnPath::Direct { g2a: rates.g2a }
        } else {
            // relay through the neighbour cell it drove into
            let a2a = crate::netmodel::a2a_rate(
                (cfg.network.a2a_range_m / 2.0).max(1.0),
                &world.channel,
            )
            .unwrap_or(rates.g2a);
            ReturnPath::Relayed { g2a_other: rates.g2a, a2a }
        };
        let Ok(delay) = offload_delay(&pt.task, compute_hz, rates.a2g, return_path) else {
            continue;
        };
        if best.as_ref().is_none_or(|(_, _, _, d, _)| delay.total < d.total) {
            best = Some((vi, eq.compute, eq.payment, delay, params));
        }
    }
    let (vi, compute_ghz, payment, delay, params) = best?;

    let uav = &world.uavs[uav_idx];
    let vehicle = &world.vehicles[vi];
    let fly_p = flying_power(
        uav.velocity.max(cfg.network.hover_floor_mps),
        uav.acceleration,
        cfg.network.power_coeff_v3,
        cfg.network.power_coeff_inv_v,
    )
    .unwrap_or(0.0);
    let energy = offload_energy(
        &pt.task,
        compute_ghz * 1e9,
        &delay,
        uav.tx_power,
        fly_p,
        vehicle.switched_capacitance,
    );
    let uav_energy = energy.uav_a2g + energy.uav_fly;

    // baseline: ship the same task to the nearest ground station
    let ecv_dist = world.nearest_ecv_distance(uav_idx);
    let baseline_energy = {
        let pseudo_ecv = VehicleState {
            id: u64::MAX,
            position: (0.0, 0.0),
            velocity: 0.0,
            tx_power: cfg.network.vehicle_tx_power_w,
            uplink_bandwidth: cfg.network.uplink_bandwidth_hz,
            switched_capacitance: cfg.network.switched_capacitance,
            unit_cost: 0.0,
            max_compute: 2e9,
        };
        match link_rates(ecv_dist.max(1.0), &world.channel, uav, &pseudo_ecv) {
            Ok(r) => match offload_delay(&pt.task, 2e9, r.a2g, ReturnPath::Direct { g2a: r.g2a }) {
                Ok(d) => uav.tx_power * d.t_a2g + fly_p * d.total,
                Err(_) => f64::INFINITY,
            },
            Err(_) => f64::INFINITY,
        }
    };
    let saved = (baseline_energy - uav_energy).max(0.0);

    let feasible = delay.total <= pt.task.ttl
        && netmodel::respects_energy_reserve(uav.energy, &energy, uav.energy_reserve);
    let mut full_params = params;
    full_params.context = OffloadContext {
        total_delay: delay.total,
        vehicle_exec_energy: energy.vehicle_exec,
        vehicle_return_energy: vehicle.tx_power * delay.t_g2a,
    };
    let record = OffloadRecord {
        slot,
        uav: uav.id,
        vehicle: vehicle.id,
        unit_cost: vehicle.unit_cost,
        urgency: pt.task.urgency,
        data_mbit: pt.task.data_bits / 1e6,
        compute_ghz,
        payment_cents: payment,
        delay_s: delay.total,
        uav_payoff: uav_payoff_pair(compute_ghz, payment, &full_params),
        vehicle_payoff: vehicle_payoff(compute_ghz, payment, &full_params),
        uav_energy_j: uav_energy,
        baseline_energy_j: baseline_energy,
        saved_energy_j: saved,
        feasible,
    };
    world.uavs[uav_idx].energy = (world.uavs[uav_idx].energy - uav_energy).max(0.0);

    // off-chain data plus its pointer transaction
    let tx = if cfg.consensus.enabled {
        let raw = format!("raw:{}:{}:{}", uav.id, pt.task.index, slot).into_bytes();
        let out = format!("out:{}:{}:{}", uav.id, pt.task.index, slot).into_bytes();
        let raw_ptr = store.put_sharded(&raw, vehicle.id).ok()?;
        let out_ptr = store.put_sharded(&out, vehicle.id).ok()?;
        let uav_kp = keypairs.get(&uav.id)?;
        let veh_kp = &vehicle_keys[vi];
        let desc = format!("task {} of uav {}", pt.task.index, uav.id);
        let bytes = OffchainTx::sign_bytes(
            &uav_kp.pk,
            std::slice::from_ref(&veh_kp.pk),
            &raw_ptr,
            &out_ptr,
            &desc,
            now_us,
        );
        let vehicle_multisig =
            scheme.aggregate(&[(veh_kp.pk, scheme.sign(&bytes, veh_kp))])?;
        Some(Transaction::Offchain(OffchainTx {
            uav_pk: uav_kp.pk,
            vehicle_pks: vec![veh_kp.pk],
            raw_ptr,
            out_ptr,
            description: desc,
            timestamp_us: now_us,
            uav_sig: scheme.sign(&bytes, uav_kp),
            vehicle_multisig,
            store_cert: h0(b"store-cert"),
        }))
    } else {
        None
    };
    Some((record, tx))
}

/// The repeated single-pair pricing/contribution game driven by learning
/// agents, advanced one interaction per slot.
struct DynamicGame {
    scheme: LearningScheme,
    params: GameParams,
    uav_grid: ActionGrid,
    vehicle_grid: ActionGrid,
    uav_dqn: Option<DqnAgent>,
    vehicle_dqn: Option<DqnAgent>,
    uav_tab: Option<TabularAgent>,
    vehicle_tab: Option<TabularAgent>,
    last_payment: f64,
    last_compute: f64,
    uav_eps: f64,
    vehicle_eps: f64,
}

impl DynamicGame {
    fn new(cfg: &ScenarioConfig) -> Self {
        let l = &cfg.learning;
        let g = &cfg.game;
        let params = GameParams {
            satisfaction: g.satisfaction,
            urgency: l.stationary_urgency,
            payment_weight: g.payment_weight,
            price_coeff: g.price_coeff,
            cost_coeff: g.cost_coeff,
            energy_coeff: 0.0,
            unit_cost: l.stationary_unit_cost,
            max_compute: g.max_compute_ghz,
            max_payment: g.max_payment_cents,
            context: OffloadContext::default(),
        };
        let uav_grid = ActionGrid::new(l.payment_levels, g.max_payment_cents);
        let vehicle_grid = ActionGrid::new(l.compute_levels, g.max_compute_ghz);
        let (mut uav_dqn, mut vehicle_dqn, mut uav_tab, mut vehicle_tab) = (None, None, None, None);
        match l.scheme {
            LearningScheme::Dqn => {
                uav_dqn = Some(DqnAgent::new(DqnConfig {
                    action_levels: l.payment_levels,
                    action_max: g.max_payment_cents,
                    observation_max: g.max_compute_ghz,
                    heads: 1,
                    window: l.window_history + 1,
                    warmup: l.window_history,
                    replay_capacity: l.replay_capacity,
                    updates_per_slot: l.updates_per_slot,
                    discount: l.discount,
                    greedy_prob: l.uav_greedy_prob,
                    learning_rate: l.learning_rate,
                    seed: ns_seed_for(cfg.seed, "learning-uav"),
                }));
                vehicle_dqn = Some(DqnAgent::new(DqnConfig {
                    action_levels: l.compute_levels,
                    action_max: g.max_compute_ghz,
                    observation_max: g.max_payment_cents,
                    heads: 1,
                    window: l.window_history + 1,
                    warmup: l.window_history,
                    replay_capacity: l.replay_capacity,
                    updates_per_slot: l.updates_per_slot,
                    discount: l.discount,
                    greedy_prob: l.vehicle_greedy_prob,
                    learning_rate: l.learning_rate,
                    seed: ns_seed_for(cfg.seed, "learning-vehicle"),
                }));
            }
            LearningScheme::QLearn => {
                uav_tab = Some(TabularAgent::new(
                    l.payment_levels,
                    g.max_payment_cents,
                    l.compute_levels,
                    g.max_compute_ghz,
                    l.discount,
                    l.uav_greedy_prob,
                    l.tabular_learning_rate,
                    l.window_history as u64,
                    ns_seed_for(cfg.seed, "learning-uav"),
                ));
                vehicle_tab = Some(TabularAgent::new(
                    l.compute_levels,
                    g.max_compute_ghz,
                    l.payment_levels,
                    g.max_payment_cents,
                    l.discount,
                    l.vehicle_greedy_prob,
                    l.tabular_learning_rate,
                    l.window_history as u64,
                    ns_seed_for(cfg.seed, "learning-vehicle"),
                ));
            }
            LearningScheme::Greedy => {}
        }
        Self {
            scheme: l.scheme,
            params,
            uav_grid,
            vehicle_grid,
            uav_dqn,
            vehicle_dqn,
            uav_tab,
            vehicle_tab,
            last_payment: 0.0,
            last_compute: 0.0,
            uav_eps: l.uav_greedy_prob,
            vehicle_eps: l.vehicle_greedy_prob,
        }
    }

    fn step(&mut self, slot: u64, metrics: &mut Metrics) {
        let params = self.params;
        let (payment, compute, uav_greedy, vehicle_greedy) = match self.scheme {
            LearningScheme::Dqn => {
                let uav = self.uav_dqn.as_mut().unwrap();
                let veh = self.vehicle_dqn.as_mut().unwrap();
                let y = uav.grid.value(uav.act()[0]);
                let x = veh.grid.value(veh.act()[0]);
                (y, x, uav.last_greedy_values()[0], veh.last_greedy_values()[0])
            }
            LearningScheme::QLearn => {
                let uav = self.uav_tab.as_mut().unwrap();
                let veh = self.vehicle_tab.as_mut().unwrap();
                let y = uav.own_grid.value(uav.act());
                let x = veh.own_grid.value(veh.act());
                (y, x, uav.last_greedy_value(), veh.last_greedy_value())
            }
            LearningScheme::Greedy => {
                let y_idx = greedy_step(&self.uav_grid, self.last_compute, |y, x_last| {
                    uav_payoff_pair(x_last.max(1e-9), y, &params)
                });
                let x_idx = greedy_step(&self.vehicle_grid, self.last_payment, |x, y_last| {
                    vehicle_payoff(x, y_last, &params)
                });
                let y = self.uav_grid.value(y_idx);
                let x = self.vehicle_grid.value(x_idx);
                (y, x, y, x)
            }
        };

        let uav_reward = uav_payoff_pair(compute, payment, &params);
        let vehicle_reward = vehicle_payoff(compute, payment, &params);

        match self.scheme {
            LearningScheme::Dqn => {
                self.uav_dqn.as_mut().unwrap().learn(&[compute], uav_reward);
                self.vehicle_dqn.as_mut().unwrap().learn(&[payment], vehicle_reward);
            }
            LearningScheme::QLearn => {
                self.uav_tab.as_mut().unwrap().learn(compute, uav_reward);
                self.vehicle_tab.as_mut().unwrap().learn(payment, vehicle_reward);
            }
            LearningScheme::Greedy => {}
        }
        self.last_payment = payment;
        self.last_compute = compute;

        metrics.learning.push(LearnRecord {
            slot,
            agent: "uav",
            action_value: payment,
            greedy_value: uav_greedy,
            reward: uav_reward,
            epsilon: self.uav_eps,
        });
        metrics.learning.push(LearnRecord {
            slot,
            agent: "vehicle",
            action_value: compute,
            greedy_value: vehicle_greedy,
            reward: vehicle_reward,
            epsilon: self.vehicle_eps,
        });
    }
}

fn ns_seed_for(master: u64, name: &str) -> u64 {
    let d = h0_parts(&[b"rng-ns", &master.to_le_bytes(), name.as_bytes()]);
    u64::from_le_bytes(d.0[..8].try_into().unwrap())
}

/// Closed-form equilibrium of the stationary game a learning scenario runs.
pub fn stationary_equilibrium(cfg: &ScenarioConfig) -> (f64, f64) {
    let params = GameParams {
        satisfaction: cfg.game.satisfaction,
        urgency: cfg.learning.stationary_urgency,
        payment_weight: cfg.game.payment_weight,
        price_coeff: cfg.game.price_coeff,
        cost_coeff: cfg.game.cost_coeff,
        energy_coeff: 0.0,
        unit_cost: cfg.learning.stationary_unit_cost,
        max_compute: cfg.game.max_compute_ghz,
        max_payment: cfg.game.max_payment_cents,
        context: OffloadContext::default(),
    };
    let eq = equilibrium(&params);
    (eq.compute, eq.payment)
}

/// Grid points nearest the stationary equilibrium, for learning baselines.
pub fn nearest_grid_equilibrium(cfg: &ScenarioConfig) -> (f64, f64) {
    let (x, y) = stationary_equilibrium(cfg);
    let xg = ActionGrid::new(cfg.learning.compute_levels, cfg.game.max_compute_ghz);
    let yg = ActionGrid::new(cfg.learning.payment_levels, cfg.game.max_payment_cents);
    (xg.value(xg.nearest_index(x)), yg.value(yg.nearest_index(y)))
}
