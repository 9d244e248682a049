use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::Vote;
use crate::crypto::Digest;
use crate::identity::Address;
use crate::ledger::{check_proposal, Block, BlockSignature, StateView};

/// What every node of one round agrees on before it starts.
pub(crate) struct RoundContext<'a, S: StateView + ?Sized> {
    pub round: u64,
    pub roster: &'a [Address],
    pub proposers: BTreeSet<&'a Address>,
    pub quorum: usize,
    pub window: usize,
    pub head: Option<&'a Block>,
    pub state: &'a S,
    validity: RefCell<HashMap<Digest, bool>>,
}

impl<'a, S: StateView + ?Sized> RoundContext<'a, S> {
    pub fn new(
        round: u64,
        roster: &'a [Address],
        proposer_indices: &[usize],
        window: usize,
        head: Option<&'a Block>,
        state: &'a S,
    ) -> Self {
        Self {
            round,
            roster,
            proposers: proposer_indices.iter().map(|&i| &roster[i]).collect(),
            quorum: crate::ledger::quorum_size(roster.len()),
            window,
            head,
            state,
            validity: RefCell::new(HashMap::new()),
        }
    }

    /// A candidate is valid if a scheduled proposer built it honestly on top
    /// of the current head. Results are shared by all nodes of the round.
    pub fn is_valid(&self, block: &Block) -> bool {
        if let Some(&v) = self.validity.borrow().get(&block.block_hash) {
            return v;
        }
        let v = self.proposers.contains(&block.creator)
            && block.compute_hash() == block.block_hash
            && check_proposal(block, self.head, self.state).is_ok();
        self.validity.borrow_mut().insert(block.block_hash, v);
        v
    }
}

/// One active node's view of a round.
#[derive(Debug, Clone)]
pub struct Node {
    pub index: usize,
    pub address: Address,
    candidates: BTreeMap<Digest, Arc<Block>>,
    voted: Option<Digest>,
    counted: BTreeMap<Address, Vote>,
    tally: BTreeMap<Digest, usize>,
    equivocators: BTreeSet<Address>,
    committed: Option<Digest>,
}

/// The parts of a node's state that determine its future behaviour.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Fingerprint {
    candidates: Vec<Digest>,
    voted: Option<Digest>,
    counted: Vec<(Address, Digest)>,
    committed: Option<Digest>,
}

impl Node {
    pub fn new(index: usize, address: Address) -> Self {
        Self {
            index,
            address,
            candidates: BTreeMap::new(),
            voted: None,
            counted: BTreeMap::new(),
            tally: BTreeMap::new(),
            equivocators: BTreeSet::new(),
            committed: None,
        }
    }

    pub fn committed(&self) -> Option<Digest> {
        self.committed
    }

    pub fn voted(&self) -> Option<Digest> {
        self.voted
    }

    pub fn candidate(&self, hash: &Digest) -> Option<&Arc<Block>> {
        self.candidates.get(hash)
    }

    pub fn candidate_hashes(&self) -> impl Iterator<Item = &Digest> {
        self.candidates.keys()
    }

    pub fn tally_of(&self, hash: &Digest) -> usize {
        self.tally.get(hash).copied().unwrap_or(0)
    }

    pub fn max_tally(&self) -> usize {
        self.tally.values().copied().max().unwrap_or(0)
    }

    pub fn equivocators(&self) -> &BTreeSet<Address> {
        &self.equivocators
    }

    /// Signatures from the counted votes for `hash`, sorted by validator.
    pub fn signatures_for(&self, hash: &Digest) -> Vec<BlockSignature> {
        self.counted
            .values()
            .filter(|v| v.block_hash == *hash)
            .map(Vote::to_signature)
            .collect()
    }

    pub(crate) fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            candidates: self.candidates.keys().copied().collect(),
            voted: self.voted,
            counted: self
                .counted
                .iter()
                .map(|(a, v)| (a.clone(), v.block_hash))
                .collect(),
            committed: self.committed,
        }
    }

    /// Records a candidate. Returns this node's vote once it has seen the
    /// whole proposal window.
    pub(crate) fn on_proposal<S: StateView + ?Sized>(
        &mut self,
        ctx: &RoundContext<'_, S>,
        block: Arc<Block>,
    ) -> Option<Vote> {
        if !ctx.is_valid(&block) {
            return None;
        }
        self.candidates.entry(block.block_hash).or_insert(block);
        self.try_commit(ctx.quorum);
        if self.voted.is_none() && self.candidates.len() >= ctx.window {
            return Some(self.vote(ctx));
        }
        None
    }

    /// Collection deadline: vote with whatever candidates have arrived.
    pub(crate) fn on_deadline<S: StateView + ?Sized>(
        &mut self,
        ctx: &RoundContext<'_, S>,
    ) -> Option<Vote> {
        if self.voted.is_none() && !self.candidates.is_empty() {
            return Some(self.vote(ctx));
        }
        None
    }

    fn vote<S: StateView + ?Sized>(&mut self, ctx: &RoundContext<'_, S>) -> Vote {
        let h = *self.candidates.keys().next().expect("has candidates");
        self.voted = Some(h);
        Vote::cast(&self.address, ctx.round, h)
    }

    pub(crate) fn on_vote<S: StateView + ?Sized>(&mut self, ctx: &RoundContext<'_, S>, vote: Vote) {
        if vote.round != ctx.round || !ctx.roster.contains(&vote.voter) || !vote.is_authentic() {
            return;
        }
        match self.counted.get(&vote.voter) {
            Some(first) => {
                if first.block_hash != vote.block_hash {
                    self.equivocators.insert(vote.voter);
                }
            }
            None => {
                *self.tally.entry(vote.block_hash).or_default() += 1;
                self.counted.insert(vote.voter.clone(), vote);
                self.try_commit(ctx.quorum);
            }
        }
    }

    fn try_commit(&mut self, quorum: usize) {
        if self.committed.is_some() {
            return;
        }
        self.committed = self
            .tally
            .iter()
            .find(|(h, &c)| c >= quorum && self.candidates.contains_key(h))
            .map(|(h, _)| *h);
    }
}
