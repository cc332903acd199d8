//! Byzantine behavior drivers. A misbehaving node runs the honest state
//! machine; the adversary sits between it and the transport, dropping,
//! mutating, or forking its outbound messages according to the script.

use super::config::ByzantineBehavior;
use crate::consensus::state::NodeConsensusState;
use crate::consensus::{ChunkMsg, ConsensusMsg, ProposalMsg};
use crate::crypto::{h0_parts, Digest32, SignatureScheme};
use crate::ledger::chunk::chunk_block;
use crate::ledger::{assemble_block, VoteKind};
use crate::NodeId;
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct BehaviorPlan {
    pub behavior: ByzantineBehavior,
    /// First slot of misbehavior; earlier slots play honest (spoofing).
    pub active_from_slot: u64,
}

/// Message routing decided by the adversary.
#[derive(Clone, Debug)]
pub enum Directed {
    All(ConsensusMsg),
    Subset(Vec<NodeId>, ConsensusMsg),
}

pub struct Adversary {
    pub plans: BTreeMap<NodeId, BehaviorPlan>,
    /// Alternative blocks crafted per (node, height, round), reused so the
    /// two halves of a fork stay internally consistent.
    forged: BTreeMap<(NodeId, u64, u32), (ProposalMsg, Vec<ChunkMsg>)>,
}

impl Adversary {
    pub fn new(plans: BTreeMap<NodeId, BehaviorPlan>) -> Self {
        Self { plans, forged: BTreeMap::new() }
    }

    pub fn byzantine_nodes(&self) -> Vec<NodeId> {
        self.plans.keys().copied().collect()
    }

    pub fn is_active(&self, node: NodeId, slot: u64) -> bool {
        self.plans.get(&node).is_some_and(|p| slot >= p.active_from_slot)
    }

    /// Election ballots forced by colluders: every active colluder votes for
    /// the lowest-id Byzantine node.
    pub fn election_overrides(&self, slot: u64) -> BTreeMap<NodeId, NodeId> {
        let Some(delegate) = self.plans.keys().next().copied() else {
            return BTreeMap::new();
        };
        self.plans
            .iter()
            .filter(|(id, p)| {
                p.behavior == ByzantineBehavior::Collusion && self.is_active(**id, slot)
            })
            .map(|(id, _)| (*id, delegate))
            .collect()
    }

    /// Rewrites one outbound message of a Byzantine node. `peers` is the
    /// broadcast audience in a fixed order.
    pub fn transform(
        &mut self,
        node: &NodeConsensusState,
        slot: u64,
        now_us: u64,
        msg: ConsensusMsg,
        peers: &[NodeId],
        scheme: &dyn SignatureScheme,
    ) -> Vec<Directed> {
        if !self.is_active(node.id, slot) {
            return vec![Directed::All(msg)];
        }
        let behavior = self.plans[&node.id].behavior;
        match behavior {
            ByzantineBehavior::SilentLeader => match msg {
                // suppress block dissemination, keep voting
                ConsensusMsg::Proposal(_) | ConsensusMsg::Chunk(_) => vec![],
                other => vec![Directed::All(other)],
            },
            ByzantineBehavior::InvalidBlock => match msg {
                ConsensusMsg::Proposal(p) => {
                    let (forged, chunks) = self.forge_block(node, &p, now_us, scheme, true);
                    let mut out = vec![Directed::All(ConsensusMsg::Proposal(forged))];
                    out.extend(chunks.into_iter().map(|c| Directed::All(ConsensusMsg::Chunk(c))));
                    out
                }
                // original chunks are replaced wholesale by the forged ones
                ConsensusMsg::Chunk(_) => vec![],
                other => vec![Directed::All(other)],
            },
            ByzantineBehavior::ConflictingProposals => {
                let (half_a, half_b) = split_peers(peers);
                match msg {
                    ConsensusMsg::Proposal(p) => {
                        let (forged, chunks) = self.forge_block(node, &p, now_us, scheme, false);
                        let mut out = vec![
                            Directed::Subset(half_a, ConsensusMsg::Proposal(p)),
                            Directed::Subset(half_b.clone(), ConsensusMsg::Proposal(forged)),
                        ];
                        out.extend(
                            chunks
                                .into_iter()
                                .map(|c| Directed::Subset(half_b.clone(), ConsensusMsg::Chunk(c))),
                        );
                        out
                    }
                    ConsensusMsg::Chunk(c) => {
                        vec![Directed::Subset(half_a, ConsensusMsg::Chunk(c))]
                    }
                    other => vec![Directed::All(other)],
                }
            }
            ByzantineBehavior::ConflictingVotes => match msg {
                ConsensusMsg::Vote(v) => {
                    let (half_a, half_b) = split_peers(peers);
                    let alt_value = match v.value {
                        Some(_) => None,
                        None => Some(fabricated_hash(node.id, v.height, v.round)),
                    };
                    let alt = node.sign_vote(v.kind, v.height, v.round, alt_value, scheme);
                    vec![
                        Directed::Subset(half_a, ConsensusMsg::Vote(v)),
                        Directed::Subset(half_b, ConsensusMsg::Vote(alt)),
                    ]
                }
                other => vec![Directed::All(other)],
            },
            ByzantineBehavior::LockViolation => match msg {
                // whenever the honest machine abides by its lock, publicly
                // vote for a fabricated value instead
                ConsensusMsg::Vote(v) if v.kind == VoteKind::Prevote => {
                    let locked = node.locked_value();
                    let breaks_lock = locked.is_some_and(|(hash, round)| {
                        v.value == Some(hash) && v.round > round
                    });
                    if breaks_lock {
                        let alt = node.sign_vote(
                            v.kind,
                            v.height,
                            v.round,
                            Some(fabricated_hash(node.id, v.height, v.round)),
                            scheme,
                        );
                        vec![Directed::All(ConsensusMsg::Vote(alt))]
                    } else {
                        vec![Directed::All(ConsensusMsg::Vote(v))]
                    }
                }
                other => vec![Directed::All(other)],
            },
            // collusion acts at election time; messages flow honestly
            ByzantineBehavior::Collusion => vec![Directed::All(msg)],
        }
    }

    /// Builds a signed but wrong block for the same (height, round): bad
    /// height linkage when `invalid`, an equivocating sibling otherwise.
    fn forge_block(
        &mut self,
        node: &NodeConsensusState,
        original: &ProposalMsg,
        now_us: u64,
        scheme: &dyn SignatureScheme,
        invalid: bool,
    ) -> (ProposalMsg, Vec<ChunkMsg>) {
        let key = (node.id, original.height, original.round);
        if let Some(cached) = self.forged.get(&key) {
            return cached.clone();
        }
        let (tip_height, tip_hash) = node.chain_tip();
        let height = if invalid { tip_height + 3 } else { tip_height + 1 };
        let block = assemble_block(
            Vec::new(),
            tip_hash,
            height,
            original.round,
            node.keypair(),
            None,
            now_us + 1, // distinct timestamp, distinct hash
            scheme,
        )
        .expect("empty block assembles");
        let (chunks, chunk_root) =
            chunk_block(&block, node.params.chunk_size).expect("chunking succeeds");
        let mut proposal = ProposalMsg {
            height: original.height,
            round: original.round,
            proposer: node.id,
            block_hash: block.hash(),
            chunk_root,
            chunk_count: chunks.len() as u32,
            pol: None,
            signature: crate::crypto::Signature([0; crate::crypto::SIG_LEN]),
        };
        proposal.signature = scheme.sign(&proposal.sign_bytes(), node.keypair());
        let chunk_msgs: Vec<ChunkMsg> = chunks
            .into_iter()
            .map(|chunk| ChunkMsg {
                height: original.height,
                round: original.round,
                proposer: node.id,
                chunk,
            })
            .collect();
        let out = (proposal, chunk_msgs);
        self.forged.insert(key, out.clone());
        out
    }
}

fn split_peers(peers: &[NodeId]) -> (Vec<NodeId>, Vec<NodeId>) {
    let mid = peers.len() / 2;
    (peers[..mid].to_vec(), peers[mid..].to_vec())
}

fn fabricated_hash(node: NodeId, height: u64, round: u32) -> Digest32 {
    h0_parts(&[b"forged-value", &node.to_le_bytes(), &height.to_le_bytes(), &round.to_le_bytes()])
}
