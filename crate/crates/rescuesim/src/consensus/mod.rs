//! Reputation-weighted Tendermint-style consensus: validator election,
//! round-robin leaders over the level-1 subset, three-step rounds with
//! locking, and vote tallies that produce proof-of-lock certificates.

pub mod state;

pub use state::{
    CommittedBlock, ConsensusEvent, NodeConsensusState, NodeParams, Output, Step, TimeoutKind,
};

use crate::codec::{CodecError, Reader, Writer};
use crate::crypto::{AggregateSignature, Digest32, PublicKey, Signature, SignatureScheme, SIG_LEN};
use crate::ledger::{commit_quorum_floor, vote_sign_bytes, SignedVote, VoteKind};
use crate::NodeId;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("need at least {need} candidate full nodes, have {have}")]
    TooFewCandidates { need: usize, have: usize },
    #[error("level-1 size {psi} exceeds committee size {z}")]
    BadLevelSplit { z: usize, psi: usize },
}

/// Two vote quorums for different values in one round falsifies the fault
/// bound the protocol is configured for; surfaced so harnesses can abort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoubleQuorum {
    pub height: u64,
    pub round: u32,
    pub kind: VoteKind,
}

/// Elected validator committee. `validators` is ranked best-first; the first
/// `level1` entries may propose blocks, the rest only verify.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub validators: Vec<NodeId>,
    pub level1: usize,
    /// Normalized reputation stake of each member at election time.
    pub voting_power: BTreeMap<NodeId, f64>,
}

impl Committee {
    pub fn size(&self) -> usize {
        self.validators.len()
    }

    pub fn quorum_floor(&self) -> usize {
        commit_quorum_floor(self.validators.len())
    }

    pub fn is_validator(&self, id: NodeId) -> bool {
        self.validators.contains(&id)
    }

    pub fn is_level1(&self, id: NodeId) -> bool {
        self.validators[..self.level1].contains(&id)
    }
}

/// How honest full nodes pick the delegate they vote for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VotePolicy {
    /// Vote for the candidate with the highest normalized reputation
    /// (lowest id on ties).
    #[default]
    MostReputable,
    /// Vote uniformly at random; reputation still weighs the ballot.
    UniformRandom,
}

#[derive(Clone, Copy, Debug)]
pub struct Candidate {
    pub id: NodeId,
    /// Normalized reputation, also the weight of this node's ballot.
    pub reputation: f64,
}

/// One-vote-per-node election: every full node casts a ballot weighted by
/// its own normalized reputation; the top `z` delegates by received weight
/// form the committee and the top `psi` of those may lead rounds. Ties break
/// on higher own reputation, then lower id.
pub fn elect_validators(
    candidates: &[Candidate],
    z: usize,
    psi: usize,
    policy: VotePolicy,
    vote_overrides: &BTreeMap<NodeId, NodeId>,
    rng: &mut impl Rng,
) -> Result<Committee, ConsensusError> {
    if candidates.len() < z {
        return Err(ConsensusError::TooFewCandidates { need: z, have: candidates.len() });
    }
    if psi > z || psi == 0 {
        return Err(ConsensusError::BadLevelSplit { z, psi });
    }

    let most_reputable = candidates
        .iter()
        .max_by(|a, b| {
            a.reputation
                .total_cmp(&b.reputation)
                .then(b.id.cmp(&a.id))
        })
        .expect("non-empty")
        .id;

    let mut received: BTreeMap<NodeId, f64> = BTreeMap::new();
    for voter in candidates {
        let delegate = vote_overrides.get(&voter.id).copied().unwrap_or_else(|| match policy {
            VotePolicy::MostReputable => most_reputable,
            VotePolicy::UniformRandom => candidates[rng.gen_range(0..candidates.len())].id,
        });
        *received.entry(delegate).or_insert(0.0) += voter.reputation;
    }

    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| {
        let wa = received.get(&a.id).copied().unwrap_or(0.0);
        let wb = received.get(&b.id).copied().unwrap_or(0.0);
        wb.total_cmp(&wa)
            .then(b.reputation.total_cmp(&a.reputation))
            .then(a.id.cmp(&b.id))
    });

    let validators: Vec<NodeId> = ranked[..z].iter().map(|c| c.id).collect();
    let voting_power = ranked[..z].iter().map(|c| (c.id, c.reputation)).collect();
    Ok(Committee { validators, level1: psi, voting_power })
}

/// Deterministic round-robin over the level-1 validators.
pub fn leader_for(height: u64, round: u32, committee: &Committee) -> NodeId {
    let idx = (height.wrapping_add(round as u64) % committee.level1 as u64) as usize;
    committee.validators[idx]
}

/// Certificate that a value (or nil) gathered a prevote quorum in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ProofOfLock {
    pub height: u64,
    pub round: u32,
    pub value: Option<Digest32>,
    pub agg: AggregateSignature,
    pub voters: Vec<NodeId>,
}

impl ProofOfLock {
    pub fn verify(
        &self,
        committee: &Committee,
        registry: &BTreeMap<NodeId, PublicKey>,
        scheme: &dyn SignatureScheme,
    ) -> bool {
        if self.voters.len() != self.agg.signer_pks.len() {
            return false;
        }
        if self.voters.len() <= committee.quorum_floor() {
            return false;
        }
        for (voter, pk) in self.voters.iter().zip(&self.agg.signer_pks) {
            if !committee.is_validator(*voter) || registry.get(voter) != Some(pk) {
                return false;
            }
        }
        let bytes = vote_sign_bytes(VoteKind::Prevote, self.height, self.round, self.value);
        scheme.verify_aggregate(&self.agg, &bytes)
    }

    pub fn encode(&self, w: &mut Writer) {
        w.put_u64(self.height);
        w.put_u32(self.round);
        match self.value {
            None => w.put_u8(0),
            Some(h) => {
                w.put_u8(1);
                w.put_raw(&h.0);
            }
        }
        w.put_raw(&self.agg.sigma.0);
        w.put_u32(self.agg.signer_pks.len() as u32);
        for pk in &self.agg.signer_pks {
            w.put_raw(&pk.0);
        }
        w.put_u32(self.voters.len() as u32);
        for v in &self.voters {
            w.put_u64(*v);
        }
    }

    pub fn decode(r: &mut Reader) -> Result<Self, CodecError> {
        let height = r.get_u64()?;
        let round = r.get_u32()?;
        let value = match r.get_u8()? {
            0 => None,
            1 => Some(Digest32(r.get_raw(32)?.try_into().unwrap())),
            tag => return Err(CodecError::BadTag { tag, context: "pol value" }),
        };
        let sigma = Signature(r.get_raw(SIG_LEN)?.try_into().unwrap());
        let n = r.get_u32()? as usize;
        let mut signer_pks = Vec::with_capacity(n);
        for _ in 0..n {
            signer_pks.push(PublicKey(r.get_raw(crate::crypto::PK_LEN)?.try_into().unwrap()));
        }
        let n = r.get_u32()? as usize;
        let mut voters = Vec::with_capacity(n);
        for _ in 0..n {
            voters.push(r.get_u64()?);
        }
        Ok(Self {
            height,
            round,
            value,
            agg: AggregateSignature { sigma, signer_pks },
            voters,
        })
    }
}

/// Outcome of tallying one (height, round, vote-kind) slice.
#[derive(Clone, Debug, PartialEq)]
pub enum TallyOutcome {
    /// Some value (or nil) holds a strict >2/3 quorum.
    Quorum(ProofOfLock),
    None,
}

/// Aggregates deduplicated votes into a quorum certificate when one value
/// exceeds the strict two-thirds floor.
pub fn tally(
    votes: &BTreeMap<NodeId, SignedVote>,
    committee: &Committee,
    registry: &BTreeMap<NodeId, PublicKey>,
    scheme: &dyn SignatureScheme,
) -> Result<TallyOutcome, DoubleQuorum> {
    let floor = committee.quorum_floor();
    let mut by_value: BTreeMap<Option<Digest32>, Vec<&SignedVote>> = BTreeMap::new();
    for vote in votes.values() {
        if committee.is_validator(vote.voter) {
            by_value.entry(vote.value).or_default().push(vote);
        }
    }
    let winners: Vec<_> = by_value
        .iter()
        .filter(|(_, vs)| vs.len() > floor)
        .collect();
    if winners.len() > 1 {
        let sample = winners[0].1[0];
        return Err(DoubleQuorum { height: sample.height, round: sample.round, kind: sample.kind });
    }
    let Some((value, votes)) = winners.into_iter().next() else {
        return Ok(TallyOutcome::None);
    };
    let sample = votes[0];
    let parts: Vec<(PublicKey, Signature)> = votes
        .iter()
        .filter_map(|v| registry.get(&v.voter).map(|pk| (*pk, v.signature)))
        .collect();
    let agg = scheme.aggregate(&parts).expect("quorum is non-empty");
    Ok(TallyOutcome::Quorum(ProofOfLock {
        height: sample.height,
        round: sample.round,
        value: *value,
        agg,
        voters: votes.iter().map(|v| v.voter).collect(),
    }))
}

/// Wire messages between validators. Blocks travel as proof-carrying chunks
/// referenced by the proposal's chunk root.
#[derive(Clone, Debug, PartialEq)]
pub enum ConsensusMsg {
    Proposal(ProposalMsg),
    Chunk(ChunkMsg),
    Vote(SignedVote),
}

impl ConsensusMsg {
    /// Serialized size, for byte-level transport accounting.
    pub fn wire_size(&self) -> usize {
        match self {
            ConsensusMsg::Proposal(p) => p.to_bytes().len(),
            ConsensusMsg::Chunk(c) => {
                // index/total/root + data + proof path
                4 + 4 + 32 + c.chunk.data.len() + 33 * c.chunk.proof.steps.len() + 20
            }
            ConsensusMsg::Vote(v) => v.to_bytes().len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposalMsg {
    pub height: u64,
    pub round: u32,
    pub proposer: NodeId,
    pub block_hash: Digest32,
    pub chunk_root: Digest32,
    pub chunk_count: u32,
    /// Present when re-proposing a locked block; justifies the old value.
    pub pol: Option<ProofOfLock>,
    pub signature: Signature,
}

impl ProposalMsg {
    pub fn sign_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_version();
        w.put_raw(b"proposal");
        w.put_u64(self.height);
        w.put_u32(self.round);
        w.put_u64(self.proposer);
        w.put_raw(&self.block_hash.0);
        w.put_raw(&self.chunk_root.0);
        w.put_u32(self.chunk_count);
        match &self.pol {
            None => w.put_u8(0),
            Some(p) => {
                w.put_u8(1);
                p.encode(&mut w);
            }
        }
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = self.sign_bytes();
        bytes.extend_from_slice(&self.signature.0);
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::with_version(bytes)?;
        let tag = r.get_raw(8)?;
        if tag != b"proposal" {
            return Err(CodecError::BadTag { tag: tag[0], context: "proposal tag" });
        }
        let height = r.get_u64()?;
        let round = r.get_u32()?;
        let proposer = r.get_u64()?;
        let block_hash = Digest32(r.get_raw(32)?.try_into().unwrap());
        let chunk_root = Digest32(r.get_raw(32)?.try_into().unwrap());
        let chunk_count = r.get_u32()?;
        let pol = match r.get_u8()? {
            0 => None,
            1 => Some(ProofOfLock::decode(&mut r)?),
            tag => return Err(CodecError::BadTag { tag, context: "proposal pol" }),
        };
        let signature = Signature(r.get_raw(SIG_LEN)?.try_into().unwrap());
        Ok(Self { height, round, proposer, block_hash, chunk_root, chunk_count, pol, signature })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkMsg {
    pub height: u64,
    pub round: u32,
    pub proposer: NodeId,
    pub chunk: crate::ledger::chunk::BlockChunk,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{make_scheme, CryptoBackend};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn flat_candidates(n: usize) -> Vec<Candidate> {
        (0..n as u64).map(|id| Candidate { id, reputation: 0.5 }).collect()
    }

    #[test]
    fn equal_reputation_election_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let c =
            elect_validators(&flat_candidates(20), 10, 7, VotePolicy::MostReputable, &BTreeMap::new(), &mut rng)
                .unwrap();
        // everyone votes for node 0 (lowest id among equals); the rest rank
        // by the reputation/id tie-break
        assert_eq!(c.validators, (0..10).collect::<Vec<_>>());
        assert_eq!(c.level1, 7);
        let again =
            elect_validators(&flat_candidates(20), 10, 7, VotePolicy::MostReputable, &BTreeMap::new(), &mut rng)
                .unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn dominant_stake_always_seats_its_delegate() {
        // node 19 holds ~90% of total stake and votes for node 13
        let mut candidates = flat_candidates(20);
        for c in candidates.iter_mut() {
            c.reputation = 0.005;
        }
        candidates[19].reputation = 0.9;
        let overrides: BTreeMap<NodeId, NodeId> = [(19u64, 13u64)].into();
        for seed in 0..20 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let c = elect_validators(&candidates, 5, 3, VotePolicy::UniformRandom, &overrides, &mut rng)
                .unwrap();
            assert!(c.is_validator(13), "seed {seed}: {:?}", c.validators);
            // the heavy ballot outweighs any pile-up of the remaining 19
            assert_eq!(c.validators[0], 13);
        }
    }

    #[test]
    fn committee_sizes_respected() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let c =
            elect_validators(&flat_candidates(15), 10, 7, VotePolicy::MostReputable, &BTreeMap::new(), &mut rng)
                .unwrap();
        assert_eq!(c.size(), 10);
        assert_eq!(c.validators[..c.level1].len(), 7);
        assert_eq!(c.size() - c.level1, 3);

        let err =
            elect_validators(&flat_candidates(5), 10, 7, VotePolicy::MostReputable, &BTreeMap::new(), &mut rng);
        assert!(matches!(err, Err(ConsensusError::TooFewCandidates { .. })));
    }

    #[test]
    fn leader_rotation_covers_level1_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let c =
            elect_validators(&flat_candidates(12), 10, 7, VotePolicy::MostReputable, &BTreeMap::new(), &mut rng)
                .unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for r in 0..7 {
            let leader = leader_for(0, r, &c);
            assert!(c.is_level1(leader));
            seen.insert(leader);
        }
        assert_eq!(seen.len(), 7, "each level-1 member leads exactly once over 7 rounds");
        // level-2 members never lead at any (height, round)
        for h in 0..50u64 {
            for r in 0..20u32 {
                assert!(c.is_level1(leader_for(h, r, &c)));
            }
        }
    }

    #[test]
    fn single_leader_when_psi_is_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let c =
            elect_validators(&flat_candidates(10), 4, 1, VotePolicy::MostReputable, &BTreeMap::new(), &mut rng)
                .unwrap();
        let fixed = leader_for(0, 0, &c);
        for h in 0..10u64 {
            for r in 0..5u32 {
                assert_eq!(leader_for(h, r, &c), fixed);
            }
        }
    }

    fn committee_of(n: usize) -> (Committee, Vec<crate::crypto::KeyPair>, BTreeMap<NodeId, PublicKey>) {
        let s = make_scheme(CryptoBackend::Sim);
        let kps: Vec<_> = (0..n as u64).map(|i| s.keygen(i, 0, 1000 + i)).collect();
        let registry = kps.iter().map(|kp| (kp.owner, kp.pk)).collect();
        let committee = Committee {
            validators: (0..n as u64).collect(),
            level1: (n * 7 / 10).max(1),
            voting_power: (0..n as u64).map(|i| (i, 0.5)).collect(),
        };
        (committee, kps, registry)
    }

    fn make_votes(
        kps: &[crate::crypto::KeyPair],
        voters: std::ops::Range<u64>,
        value: Option<Digest32>,
    ) -> BTreeMap<NodeId, SignedVote> {
        let s = make_scheme(CryptoBackend::Sim);
        let bytes = vote_sign_bytes(VoteKind::Prevote, 4, 1, value);
        voters
            .map(|v| {
                (
                    v,
                    SignedVote {
                        kind: VoteKind::Prevote,
                        height: 4,
                        round: 1,
                        value,
                        voter: v,
                        signature: s.sign(&bytes, &kps[v as usize]),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn tally_quorum_boundaries() {
        let s = make_scheme(CryptoBackend::Sim);
        let (committee, kps, registry) = committee_of(10);
        let block = Some(Digest32([7; 32]));

        // 7 of 10 prevotes: quorum (floor is 6)
        let votes = make_votes(&kps, 0..7, block);
        match tally(&votes, &committee, &registry, s.as_ref()).unwrap() {
            TallyOutcome::Quorum(pol) => {
                assert_eq!(pol.value, block);
                assert_eq!(pol.voters.len(), 7);
                assert!(pol.verify(&committee, &registry, s.as_ref()));
            }
            other => panic!("expected quorum, got {other:?}"),
        }

        // 6 for the block and 4 for nil: no quorum either way
        let mut votes = make_votes(&kps, 0..6, block);
        votes.extend(make_votes(&kps, 6..10, None));
        assert_eq!(
            tally(&votes, &committee, &registry, s.as_ref()).unwrap(),
            TallyOutcome::None
        );

        // 7 nil prevotes: nil quorum
        let votes = make_votes(&kps, 0..7, None);
        match tally(&votes, &committee, &registry, s.as_ref()).unwrap() {
            TallyOutcome::Quorum(pol) => assert_eq!(pol.value, None),
            other => panic!("expected nil quorum, got {other:?}"),
        }
    }

    #[test]
    fn forged_pol_fails_verification() {
        let s = make_scheme(CryptoBackend::Sim);
        let (committee, kps, registry) = committee_of(10);
        let block = Some(Digest32([7; 32]));
        let votes = make_votes(&kps, 0..7, block);
        let TallyOutcome::Quorum(mut pol) = tally(&votes, &committee, &registry, s.as_ref()).unwrap()
        else {
            panic!()
        };
        pol.value = Some(Digest32([8; 32]));
        assert!(!pol.verify(&committee, &registry, s.as_ref()));
    }

    #[test]
    fn proposal_roundtrip_bytes_stable() {
        let p = ProposalMsg {
            height: 3,
            round: 1,
            proposer: 2,
            block_hash: Digest32([1; 32]),
            chunk_root: Digest32([2; 32]),
            chunk_count: 4,
            pol: None,
            signature: Signature([9; SIG_LEN]),
        };
        assert_eq!(p.to_bytes(), p.to_bytes());
        assert!(p.to_bytes().len() > p.sign_bytes().len());
    }
}
