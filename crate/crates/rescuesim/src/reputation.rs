//! Behavior recording, misbehavior detection, report processing, and the
//! decayed reputation update that drives validator election.
//!
//! Detectors are pure functions over message archives and never mutate the
//! ledger; the simulator applies their findings once per slot.

use crate::codec::{CodecError, Reader, Writer};
use crate::crypto::{Digest32, PublicKey};
use crate::ledger::{LastProof, ReportTx, SignedVote, VoteKind};
use crate::NodeId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Everything a node can be credited or blamed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BehaviorKind {
    /// Successful block creation by the round leader.
    SuccessfulBlockCreation,
    /// Successful block verification by a validator.
    SuccessfulBlockVerification,
    ConflictingProposal,
    ConflictingVote,
    WrongBlockCreation,
    NonBlockCreation,
    LockViolation,
    /// Member of an informer group whose report checked out.
    ReportInformer,
    /// Named by a verified report.
    ReportAccused,
}

impl BehaviorKind {
    pub fn is_benign(self) -> bool {
        matches!(
            self,
            BehaviorKind::SuccessfulBlockCreation
                | BehaviorKind::SuccessfulBlockVerification
                | BehaviorKind::ReportInformer
        )
    }

    pub fn sign(self) -> f64 {
        if self.is_benign() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Per-behavior reward/penalty magnitudes plus the decay and initial value.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReputationParams {
    pub delta_sbc: f64,
    pub delta_sbv: f64,
    pub delta_cp: f64,
    pub delta_cv: f64,
    pub delta_wbc: f64,
    pub delta_nbc: f64,
    pub delta_vol: f64,
    pub delta_rep: f64,
    pub delta_acc: f64,
    /// Exponential fading factor eta (> 0 decays, 0 accumulates forever).
    pub decay: f64,
    pub initial: f64,
}

impl Default for ReputationParams {
    fn default() -> Self {
        Self {
            delta_sbc: 4.0,
            delta_sbv: 2.0,
            delta_cp: 5.0,
            delta_cv: 3.0,
            delta_wbc: 5.0,
            delta_nbc: 1.5,
            delta_vol: 3.0,
            delta_rep: 1.5,
            delta_acc: 2.5,
            decay: 0.5,
            initial: 3.0,
        }
    }
}

impl ReputationParams {
    pub fn magnitude(&self, kind: BehaviorKind) -> f64 {
        match kind {
            BehaviorKind::SuccessfulBlockCreation => self.delta_sbc,
            BehaviorKind::SuccessfulBlockVerification => self.delta_sbv,
            BehaviorKind::ConflictingProposal => self.delta_cp,
            BehaviorKind::ConflictingVote => self.delta_cv,
            BehaviorKind::WrongBlockCreation => self.delta_wbc,
            BehaviorKind::NonBlockCreation => self.delta_nbc,
            BehaviorKind::LockViolation => self.delta_vol,
            BehaviorKind::ReportInformer => self.delta_rep,
            BehaviorKind::ReportAccused => self.delta_acc,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub node: NodeId,
    pub slot: u64,
    pub kind: BehaviorKind,
    pub evidence_ptr: Option<Digest32>,
}

/// Raw update for one slot: this slot's signed deltas plus the faded carry.
pub fn update_raw(prev: f64, slot_delta_sum: f64, decay: f64) -> f64 {
    slot_delta_sum + (-decay).exp() * prev
}

/// Sigmoid normalization into (0, 1); strictly monotone in the raw value.
pub fn normalize(raw: f64) -> f64 {
    1.0 / (1.0 + (-raw).exp())
}

#[derive(Clone, Debug)]
struct NodeRep {
    raw: f64,
    registered_slot: u64,
}

/// Per-node reputation state, advanced one slot at a time.
#[derive(Clone, Debug)]
pub struct ReputationLedger {
    pub params: ReputationParams,
    nodes: BTreeMap<NodeId, NodeRep>,
    current_slot: u64,
}

impl ReputationLedger {
    pub fn new(params: ReputationParams) -> Self {
        Self {
            params,
            nodes: BTreeMap::new(),
            current_slot: 1,
        }
    }

    /// Registers a node at the current slot with the initial value.
    pub fn register(&mut self, node: NodeId) {
        let slot = self.current_slot;
        self.nodes.entry(node).or_insert(NodeRep {
            raw: self.params.initial,
            registered_slot: slot,
        });
    }

    pub fn current_slot(&self) -> u64 {
        self.current_slot
    }

    pub fn raw(&self, node: NodeId) -> Option<f64> {
        self.nodes.get(&node).map(|n| n.raw)
    }

    pub fn normalized(&self, node: NodeId) -> Option<f64> {
        self.raw(node).map(normalize)
    }

    pub fn normalized_all(&self) -> BTreeMap<NodeId, f64> {
        self.nodes
            .iter()
            .map(|(id, n)| (*id, normalize(n.raw)))
            .collect()
    }

    /// Applies one slot's records to every registered node and advances the
    /// slot counter. Records for unregistered nodes are ignored.
    pub fn advance_slot(&mut self, records: &[BehaviorRecord]) {
        let slot = self.current_slot;
        let mut sums: BTreeMap<NodeId, f64> = BTreeMap::new();
        for rec in records {
            let delta = self.params.magnitude(rec.kind) * rec.kind.sign();
            *sums.entry(rec.node).or_insert(0.0) += delta;
        }
        for (id, rep) in self.nodes.iter_mut() {
            // the registration slot carries the initial value untouched
            if rep.registered_slot == slot {
                continue;
            }
            let sum = sums.get(id).copied().unwrap_or(0.0);
            rep.raw = update_raw(rep.raw, sum, self.params.decay);
        }
        self.current_slot += 1;
    }

    /// CSV export rows: slot, node, raw, normalized.
    pub fn csv_rows(&self) -> Vec<String> {
        self.nodes
            .iter()
            .map(|(id, n)| {
                format!("{},{},{:.9},{:.9}", self.current_slot, id, n.raw, normalize(n.raw))
            })
            .collect()
    }
}

/// Minimal record of a proposal needed for equivocation detection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalSummary {
    pub height: u64,
    pub round: u32,
    pub proposer: NodeId,
    pub block_hash: Digest32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MisbehaviorKind {
    ConflictingProposal,
    ConflictingVote,
    WrongBlockCreation,
    NonBlockCreation,
    LockViolation,
}

impl MisbehaviorKind {
    pub fn behavior(self) -> BehaviorKind {
        match self {
            MisbehaviorKind::ConflictingProposal => BehaviorKind::ConflictingProposal,
            MisbehaviorKind::ConflictingVote => BehaviorKind::ConflictingVote,
            MisbehaviorKind::WrongBlockCreation => BehaviorKind::WrongBlockCreation,
            MisbehaviorKind::NonBlockCreation => BehaviorKind::NonBlockCreation,
            MisbehaviorKind::LockViolation => BehaviorKind::LockViolation,
        }
    }
}

/// One detected misbehavior with the signed messages that prove it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evidence {
    pub kind: MisbehaviorKind,
    pub accused: NodeId,
    pub height: u64,
    pub round: u32,
    pub detail: String,
    /// Canonical bytes of the proving messages (votes, proposal summaries).
    pub messages: Vec<Vec<u8>>,
}

impl Evidence {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_version();
        w.put_u8(match self.kind {
            MisbehaviorKind::ConflictingProposal => 0,
            MisbehaviorKind::ConflictingVote => 1,
            MisbehaviorKind::WrongBlockCreation => 2,
            MisbehaviorKind::NonBlockCreation => 3,
            MisbehaviorKind::LockViolation => 4,
        });
        w.put_u64(self.accused);
        w.put_u64(self.height);
        w.put_u32(self.round);
        w.put_str(&self.detail);
        w.put_u32(self.messages.len() as u32);
        for m in &self.messages {
            w.put_bytes(m);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::with_version(bytes)?;
        let kind = match r.get_u8()? {
            0 => MisbehaviorKind::ConflictingProposal,
            1 => MisbehaviorKind::ConflictingVote,
            2 => MisbehaviorKind::WrongBlockCreation,
            3 => MisbehaviorKind::NonBlockCreation,
            4 => MisbehaviorKind::LockViolation,
            tag => return Err(CodecError::BadTag { tag, context: "misbehavior kind" }),
        };
        let accused = r.get_u64()?;
        let height = r.get_u64()?;
        let round = r.get_u32()?;
        let detail = r.get_str()?;
        let n = r.get_u32()? as usize;
        let mut messages = Vec::with_capacity(n);
        for _ in 0..n {
            messages.push(r.get_bytes()?.to_vec());
        }
        Ok(Self { kind, accused, height, round, detail, messages })
    }

    /// Stable key for deduplicating the same finding from many observers.
    pub fn dedup_key(&self) -> (MisbehaviorKind, NodeId, u64, u32) {
        (self.kind, self.accused, self.height, self.round)
    }
}

/// Conflicting proposals (same leader, same height/round, two block hashes)
/// and conflicting votes (same voter, same height/round/type, two values).
pub fn detect_equivocation(
    proposals: &[ProposalSummary],
    votes: &[SignedVote],
) -> Vec<Evidence> {
    let mut out = Vec::new();
    let mut seen_props: BTreeMap<(u64, u32, NodeId), &ProposalSummary> = BTreeMap::new();
    let mut accused_props: BTreeSet<(u64, u32, NodeId)> = BTreeSet::new();
    for p in proposals {
        let key = (p.height, p.round, p.proposer);
        match seen_props.get(&key) {
            Some(first) if first.block_hash != p.block_hash => {
                if accused_props.insert(key) {
                    out.push(Evidence {
                        kind: MisbehaviorKind::ConflictingProposal,
                        accused: p.proposer,
                        height: p.height,
                        round: p.round,
                        detail: format!(
                            "proposed {} and {} in one round",
                            first.block_hash.short_hex(),
                            p.block_hash.short_hex()
                        ),
                        messages: vec![
                            serde_json::to_vec(first).unwrap(),
                            serde_json::to_vec(p).unwrap(),
                        ],
                    });
                }
            }
            Some(_) => {}
            None => {
                seen_props.insert(key, p);
            }
        }
    }

    let mut seen_votes: BTreeMap<(u64, u32, VoteKind, NodeId), &SignedVote> = BTreeMap::new();
    let mut accused_votes: BTreeSet<(u64, u32, VoteKind, NodeId)> = BTreeSet::new();
    for v in votes {
        let key = (v.height, v.round, v.kind, v.voter);
        match seen_votes.get(&key) {
            Some(first) if first.value != v.value => {
                if accused_votes.insert(key) {
                    out.push(Evidence {
                        kind: MisbehaviorKind::ConflictingVote,
                        accused: v.voter,
                        height: v.height,
                        round: v.round,
                        detail: format!("{:?} for two values in one round", v.kind),
                        messages: vec![first.to_bytes(), v.to_bytes()],
                    });
                }
            }
            Some(_) => {}
            None => {
                seen_votes.insert(key, v);
            }
        }
    }
    out
}

/// Wrong block creation: the designated leader's proposal failed validation.
/// Non-block creation: no proposal from the leader arrived before the
/// propose timeout.
pub fn detect_block_faults(
    height: u64,
    round: u32,
    expected_leader: NodeId,
    leader_verdicts: &[(Digest32, crate::ledger::BlockFault)],
    proposal_arrived_in_time: bool,
) -> Vec<Evidence> {
    let mut out = Vec::new();
    if !proposal_arrived_in_time {
        out.push(Evidence {
            kind: MisbehaviorKind::NonBlockCreation,
            accused: expected_leader,
            height,
            round,
            detail: "no proposal before timeout".into(),
            messages: Vec::new(),
        });
        return out;
    }
    if let Some((hash, fault)) = leader_verdicts.first() {
        out.push(Evidence {
            kind: MisbehaviorKind::WrongBlockCreation,
            accused: expected_leader,
            height,
            round,
            detail: format!("block {} rejected: {}", hash.short_hex(), fault),
            messages: Vec::new(),
        });
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct LockAnalysis {
    pub evidence: Vec<Evidence>,
    /// True when some precommit in the archive lacks a derivable
    /// justification that is not itself part of an accusation; accusations
    /// from a partial archive are suppressed rather than risked.
    pub partial: bool,
}

/// Replays each validator's vote sequence for one height against the
/// proof-of-lock sets derivable from the full archive, and reports locking
/// and unlocking violations.
///
/// A validator locks by precommitting a block at round r. Prevoting or
/// precommitting a different value at a later round is only legal when some
/// other value (or nil) gathered a prevote quorum at a round in between.
pub fn detect_lock_violation(votes: &[SignedVote], committee_size: usize) -> LockAnalysis {
    let quorum_floor = crate::ledger::commit_quorum_floor(committee_size);

    // PoLs derivable from the archive: (round, value) -> distinct prevoters
    let mut prevoters: BTreeMap<(u32, Option<Digest32>), BTreeSet<NodeId>> = BTreeMap::new();
    for v in votes {
        if v.kind == VoteKind::Prevote {
            prevoters.entry((v.round, v.value)).or_default().insert(v.voter);
        }
    }
    let pols: BTreeSet<(u32, Option<Digest32>)> = prevoters
        .iter()
        .filter(|(_, voters)| voters.len() > quorum_floor)
        .map(|(k, _)| *k)
        .collect();
    let unlock_justified = |locked: Digest32, after: u32, upto: u32| {
        pols.iter()
            .any(|(r, val)| *r > after && *r <= upto && *val != Some(locked))
    };

    let mut by_validator: BTreeMap<NodeId, Vec<&SignedVote>> = BTreeMap::new();
    for v in votes {
        by_validator.entry(v.voter).or_default().push(v);
    }

    let mut analysis = LockAnalysis::default();
    for (validator, mut seq) in by_validator {
        seq.sort_by_key(|v| (v.round, matches!(v.kind, VoteKind::Precommit) as u8));
        let mut lock: Option<(Digest32, u32, &SignedVote)> = None;
        for vote in seq {
            match (vote.kind, vote.value) {
                (VoteKind::Precommit, Some(value)) => {
                    if let Some((locked, locked_round, lock_vote)) = lock {
                        if value != locked
                            && vote.round > locked_round
                            && !unlock_justified(locked, locked_round, vote.round)
                        {
                            analysis.evidence.push(Evidence {
                                kind: MisbehaviorKind::LockViolation,
                                accused: validator,
                                height: vote.height,
                                round: vote.round,
                                detail: format!(
                                    "precommitted {} while locked on {} since round {} with no unlocking quorum",
                                    value.short_hex(),
                                    locked.short_hex(),
                                    locked_round
                                ),
                                messages: vec![lock_vote.to_bytes(), vote.to_bytes()],
                            });
                        }
                    }
                    // an unexplained precommit may mean the archive is missing
                    // the prevotes that justified it
                    if !pols.contains(&(vote.round, Some(value))) {
                        analysis.partial = true;
                    }
                    lock = Some((value, vote.round, vote));
                }
                (VoteKind::Precommit, None) => {
                    // nil precommit neither locks nor unlocks by itself
                }
                (VoteKind::Prevote, value) => {
                    if let Some((locked, locked_round, lock_vote)) = lock {
                        let switched = value != Some(locked);
                        if switched
                            && vote.round > locked_round
                            && !unlock_justified(locked, locked_round, vote.round)
                        {
                            analysis.evidence.push(Evidence {
                                kind: MisbehaviorKind::LockViolation,
                                accused: validator,
                                height: vote.height,
                                round: vote.round,
                                detail: format!(
                                    "prevoted {} while locked on {} since round {} with no unlocking quorum",
                                    value.map(|v| v.short_hex()).unwrap_or_else(|| "nil".into()),
                                    locked.short_hex(),
                                    locked_round
                                ),
                                messages: vec![lock_vote.to_bytes(), vote.to_bytes()],
                            });
                        }
                    }
                }
            }
        }
    }
    if analysis.partial {
        // a gappy archive cannot distinguish misbehavior from missing data
        analysis.evidence.retain(|_| false);
    }
    analysis
}

/// Benign-behavior records derivable from a commit proof: block creation for
/// the proposer, verification for each committing precommitter.
pub fn benign_records_from_commit(
    proof: &LastProof,
    proposer: NodeId,
    slot: u64,
) -> Vec<BehaviorRecord> {
    let mut out = vec![BehaviorRecord {
        node: proposer,
        slot,
        kind: BehaviorKind::SuccessfulBlockCreation,
        evidence_ptr: Some(proof.votes_ptr),
    }];
    for voter in &proof.voters {
        if *voter != proposer {
            out.push(BehaviorRecord {
                node: *voter,
                slot,
                kind: BehaviorKind::SuccessfulBlockVerification,
                evidence_ptr: Some(proof.votes_ptr),
            });
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ReportOutcome {
    pub accepted: bool,
    pub records: Vec<BehaviorRecord>,
    /// Milli-cents returned to each informer when the report verified.
    pub fee_share_per_informer: u64,
}

/// Applies a verified (or failed) report: informers rewarded and the accused
/// penalized when the evidence checks out, the fee forfeited otherwise.
pub fn process_report(
    tx: &ReportTx,
    evidence_valid: bool,
    slot: u64,
    resolve_pk: &BTreeMap<PublicKey, NodeId>,
) -> ReportOutcome {
    if !evidence_valid {
        return ReportOutcome {
            accepted: false,
            records: Vec::new(),
            fee_share_per_informer: 0,
        };
    }
    let mut records = Vec::new();
    let evidence_ptr = Some(crate::crypto::h0(&tx.evidence));
    for pk in &tx.informer_pks {
        if let Some(node) = resolve_pk.get(pk) {
            records.push(BehaviorRecord {
                node: *node,
                slot,
                kind: BehaviorKind::ReportInformer,
                evidence_ptr,
            });
        }
    }
    if let Some(node) = resolve_pk.get(&tx.accused_pk) {
        records.push(BehaviorRecord {
            node: *node,
            slot,
            kind: BehaviorKind::ReportAccused,
            evidence_ptr,
        });
    }
    ReportOutcome {
        accepted: true,
        records,
        fee_share_per_informer: tx.fee / tx.informer_pks.len().max(1) as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{make_scheme, CryptoBackend, Signature, SIG_LEN};

    fn vote(kind: VoteKind, round: u32, value: Option<u8>, voter: NodeId) -> SignedVote {
        SignedVote {
            kind,
            height: 5,
            round,
            value: value.map(|b| Digest32([b; 32])),
            voter,
            signature: Signature([0; SIG_LEN]),
        }
    }

    #[test]
    fn initial_value_then_decayed_update() {
        let mut ledger = ReputationLedger::new(ReputationParams::default());
        ledger.register(1);
        assert_eq!(ledger.raw(1), Some(3.0));

        // slot 1 carries the initial value
        ledger.advance_slot(&[]);
        assert_eq!(ledger.raw(1), Some(3.0));

        // one successful block creation at slot 2: 4 + 3*e^-0.5
        ledger.advance_slot(&[BehaviorRecord {
            node: 1,
            slot: 2,
            kind: BehaviorKind::SuccessfulBlockCreation,
            evidence_ptr: None,
        }]);
        let expected = 4.0 + 3.0 * (-0.5f64).exp();
        let got = ledger.raw(1).unwrap();
        assert!((got - expected).abs() < 1e-9, "got {got}");
        assert!((got - 5.81959).abs() < 1e-5);
    }

    #[test]
    fn sigmoid_midpoint_and_monotonicity() {
        assert!((normalize(0.0) - 0.5).abs() < 1e-15);
        let mut prev = f64::NEG_INFINITY;
        for raw in [-10.0, -1.0, 0.0, 0.5, 3.0, 10.0] {
            let n = normalize(raw);
            assert!(n > prev);
            assert!((0.0..1.0).contains(&n));
            prev = n;
        }
    }

    #[test]
    fn argsort_preserved_by_normalization() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let raws: Vec<f64> = (0..50).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let mut by_raw: Vec<usize> = (0..raws.len()).collect();
        by_raw.sort_by(|&a, &b| raws[a].total_cmp(&raws[b]));
        let normed: Vec<f64> = raws.iter().map(|&r| normalize(r)).collect();
        let mut by_norm: Vec<usize> = (0..raws.len()).collect();
        by_norm.sort_by(|&a, &b| normed[a].total_cmp(&normed[b]));
        assert_eq!(by_raw, by_norm);
    }

    #[test]
    fn raw_value_is_bounded_under_random_streams() {
        use rand::{Rng, SeedableRng};
        let params = ReputationParams::default();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        // worst case co-signed slot: every behavior at once
        let kinds = [
            BehaviorKind::SuccessfulBlockCreation,
            BehaviorKind::SuccessfulBlockVerification,
            BehaviorKind::ConflictingProposal,
            BehaviorKind::ConflictingVote,
            BehaviorKind::WrongBlockCreation,
            BehaviorKind::NonBlockCreation,
            BehaviorKind::LockViolation,
            BehaviorKind::ReportInformer,
            BehaviorKind::ReportAccused,
        ];
        let max_total: f64 = kinds.iter().map(|k| params.magnitude(*k)).sum();
        let bound = max_total / (1.0 - (-params.decay).exp()) + params.initial;

        let mut ledger = ReputationLedger::new(params);
        ledger.register(1);
        for slot in 0..2000u64 {
            let mut records = Vec::new();
            for kind in kinds {
                if rng.gen_bool(0.5) {
                    records.push(BehaviorRecord { node: 1, slot, kind, evidence_ptr: None });
                }
            }
            ledger.advance_slot(&records);
            assert!(ledger.raw(1).unwrap().abs() <= bound, "escaped bound at slot {slot}");
        }
    }

    #[test]
    fn accumulative_mode_has_no_fading() {
        let params = ReputationParams { decay: 0.0, ..ReputationParams::default() };
        let mut ledger = ReputationLedger::new(params);
        ledger.register(1);
        ledger.advance_slot(&[]);
        for slot in 2..6u64 {
            ledger.advance_slot(&[BehaviorRecord {
                node: 1,
                slot,
                kind: BehaviorKind::SuccessfulBlockVerification,
                evidence_ptr: None,
            }]);
        }
        assert!((ledger.raw(1).unwrap() - (3.0 + 4.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn equivocation_detection() {
        // honest archive: nothing
        let props = vec![ProposalSummary { height: 5, round: 0, proposer: 1, block_hash: Digest32([1; 32]) }];
        let votes = vec![
            vote(VoteKind::Prevote, 0, Some(1), 2),
            vote(VoteKind::Prevote, 1, Some(2), 2), // different round is fine
        ];
        assert!(detect_equivocation(&props, &votes).is_empty());

        // double proposal
        let props = vec![
            ProposalSummary { height: 5, round: 0, proposer: 1, block_hash: Digest32([1; 32]) },
            ProposalSummary { height: 5, round: 0, proposer: 1, block_hash: Digest32([2; 32]) },
        ];
        let ev = detect_equivocation(&props, &[]);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, MisbehaviorKind::ConflictingProposal);
        assert_eq!(ev[0].accused, 1);

        // conflicting prevotes in one round
        let votes = vec![
            vote(VoteKind::Prevote, 0, Some(1), 7),
            vote(VoteKind::Prevote, 0, Some(2), 7),
        ];
        let ev = detect_equivocation(&[], &votes);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, MisbehaviorKind::ConflictingVote);
        assert_eq!(ev[0].accused, 7);
        assert_eq!(ev[0].messages.len(), 2);
    }

    #[test]
    fn block_fault_detection() {
        // on-time valid proposal: nothing
        assert!(detect_block_faults(5, 0, 3, &[], true).is_empty());

        // invalid block from the designated leader
        let ev = detect_block_faults(
            5,
            0,
            3,
            &[(Digest32([9; 32]), crate::ledger::BlockFault::Height { expected: 5, got: 7 })],
            true,
        );
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, MisbehaviorKind::WrongBlockCreation);
        assert_eq!(ev[0].accused, 3);

        // silent leader
        let ev = detect_block_faults(5, 1, 4, &[], false);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, MisbehaviorKind::NonBlockCreation);
        assert_eq!(ev[0].accused, 4);
    }

    /// Archive helper: quorum of honest prevotes for `value` at `round`.
    fn quorum_prevotes(round: u32, value: u8, voters: std::ops::Range<u64>) -> Vec<SignedVote> {
        voters.map(|v| vote(VoteKind::Prevote, round, Some(value), v)).collect()
    }

    #[test]
    fn compliant_unlock_produces_no_evidence() {
        let mut votes = Vec::new();
        // validator 0 locks on block 1 at round 0 (PoL present)
        votes.extend(quorum_prevotes(0, 1, 0..7));
        votes.push(vote(VoteKind::Precommit, 0, Some(1), 0));
        // network moves on: PoL for block 2 at round 1 justifies unlocking
        votes.extend(quorum_prevotes(1, 2, 1..8));
        votes.push(vote(VoteKind::Prevote, 1, Some(2), 0));
        votes.push(vote(VoteKind::Precommit, 1, Some(2), 0));
        // the round-1 precommitters need their own justification to exist
        votes.extend((1..8).map(|v| vote(VoteKind::Precommit, 1, Some(2), v)));

        let analysis = detect_lock_violation(&votes, 10);
        assert!(!analysis.partial);
        assert!(analysis.evidence.is_empty(), "{:?}", analysis.evidence);
    }

    #[test]
    fn lock_violation_detected() {
        let mut votes = Vec::new();
        // validator 0 locks on block 1 at round 0
        votes.extend(quorum_prevotes(0, 1, 0..7));
        votes.push(vote(VoteKind::Precommit, 0, Some(1), 0));
        // then prevotes block 2 at round 1 with no justifying quorum anywhere
        votes.push(vote(VoteKind::Prevote, 1, Some(2), 0));

        let analysis = detect_lock_violation(&votes, 10);
        assert!(!analysis.partial);
        assert_eq!(analysis.evidence.len(), 1);
        let ev = &analysis.evidence[0];
        assert_eq!(ev.kind, MisbehaviorKind::LockViolation);
        assert_eq!(ev.accused, 0);
        assert_eq!(ev.messages.len(), 2);
    }

    #[test]
    fn unseen_votes_yield_no_evidence() {
        // the violator's contradictory votes never reached the archive
        let mut votes = Vec::new();
        votes.extend(quorum_prevotes(0, 1, 0..7));
        votes.push(vote(VoteKind::Precommit, 0, Some(1), 0));
        let analysis = detect_lock_violation(&votes, 10);
        assert!(analysis.evidence.is_empty());
    }

    #[test]
    fn unjustified_precommit_marks_archive_partial() {
        // a precommit with no visible prevote quorum and no switch pattern:
        // could be missing data, must not accuse anyone
        let votes = vec![vote(VoteKind::Precommit, 2, Some(9), 4)];
        let analysis = detect_lock_violation(&votes, 10);
        assert!(analysis.partial);
        assert!(analysis.evidence.is_empty());
    }

    #[test]
    fn report_processing_rewards_and_penalties() {
        let s = make_scheme(CryptoBackend::Sim);
        let informers: Vec<_> = (0..3u64).map(|i| s.keygen(i, 0, i)).collect();
        let accused = s.keygen(9, 0, 9);
        let resolve: BTreeMap<PublicKey, NodeId> = informers
            .iter()
            .map(|kp| (kp.pk, kp.owner))
            .chain(std::iter::once((accused.pk, accused.owner)))
            .collect();

        let bytes = ReportTx::sign_bytes(&accused.pk, &[], b"ev", 3000, 1);
        let parts: Vec<_> = informers.iter().map(|kp| (kp.pk, s.sign(&bytes, kp))).collect();
        let tx = ReportTx {
            accused_pk: accused.pk,
            informer_pks: informers.iter().map(|kp| kp.pk).collect(),
            evidence: b"ev".to_vec(),
            fee: 3000,
            timestamp_us: 1,
            informer_multisig: s.aggregate(&parts).unwrap(),
        };

        let outcome = process_report(&tx, true, 4, &resolve);
        assert!(outcome.accepted);
        assert_eq!(outcome.fee_share_per_informer, 1000);
        let rewards: Vec<_> = outcome
            .records
            .iter()
            .filter(|r| r.kind == BehaviorKind::ReportInformer)
            .collect();
        assert_eq!(rewards.len(), 3);
        let penalties: Vec<_> = outcome
            .records
            .iter()
            .filter(|r| r.kind == BehaviorKind::ReportAccused)
            .collect();
        assert_eq!(penalties.len(), 1);
        assert_eq!(penalties[0].node, 9);

        // bogus evidence: fee in vain, nothing applied
        let rejected = process_report(&tx, false, 4, &resolve);
        assert!(!rejected.accepted);
        assert!(rejected.records.is_empty());
    }

    #[test]
    fn repeated_valid_reports_penalize_twice() {
        let params = ReputationParams::default();
        let mut ledger = ReputationLedger::new(params);
        ledger.register(9);
        ledger.advance_slot(&[]);
        let record = BehaviorRecord {
            node: 9,
            slot: 2,
            kind: BehaviorKind::ReportAccused,
            evidence_ptr: None,
        };
        ledger.advance_slot(&[record.clone(), record]);
        // two distinct verified reports apply the penalty twice in one slot
        let expected = -2.0 * 2.5 + 3.0 * (-0.5f64).exp();
        assert!((ledger.raw(9).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn evidence_round_trips_through_codec() {
        let ev = Evidence {
            kind: MisbehaviorKind::ConflictingVote,
            accused: 3,
            height: 10,
            round: 2,
            detail: "two prevotes".into(),
            messages: vec![vec![1, 2, 3], vec![4, 5]],
        };
        let decoded = Evidence::decode(&ev.encode()).unwrap();
        assert_eq!(decoded, ev);
    }

    #[test]
    fn benign_records_cover_proposer_and_voters() {
        let s = make_scheme(CryptoBackend::Sim);
        let kps: Vec<_> = (0..7u64).map(|i| s.keygen(i, 0, i)).collect();
        let bytes = crate::ledger::vote_sign_bytes(VoteKind::Precommit, 3, 0, Some(Digest32([1; 32])));
        let parts: Vec<_> = kps.iter().map(|kp| (kp.pk, s.sign(&bytes, kp))).collect();
        let proof = LastProof {
            height: 3,
            round: 0,
            block_hash: Digest32([1; 32]),
            agg: s.aggregate(&parts).unwrap(),
            voters: (0..7).collect(),
            votes_root: Digest32::ZERO,
            votes_ptr: Digest32::ZERO,
        };
        let records = benign_records_from_commit(&proof, 0, 4);
        assert_eq!(records.len(), 7); // 1 sbc + 6 sbv
        assert_eq!(records[0].kind, BehaviorKind::SuccessfulBlockCreation);
        assert!(records[1..]
            .iter()
            .all(|r| r.kind == BehaviorKind::SuccessfulBlockVerification));
    }
}
