//! Exhaustive safety check over message-delivery interleavings.
//!
//! Nodes interact only through messages, so a node's commit depends only on
//! the order in which messages reach it. For every choice of which proposal
//! each honest node sees first (or none), the checker explores every order and
//! subset of deliveries at every honest node and collects the commits each node
//! can reach. Faulty nodes send the union of all messages any behaviour could
//! produce: every proposal they can build to every peer, and a vote for every
//! candidate plus a fabricated hash. Any two honest nodes able to commit
//! different blocks at one height is a safety violation.
//!
//! Heights are explored in sequence, branching on every block that can commit.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use super::node::{Fingerprint, Node, RoundContext};
use super::{Behavior, ByzantineSpec, ConsensusConfig, Vote};
use crate::crypto::Digest;
use crate::identity::Address;
use crate::ledger::{build_block, canonical_order, Block, Ledger, TokenTransaction};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyViolation {
    pub height: u64,
    pub nodes: (usize, usize),
    pub hashes: (Digest, Digest),
}

#[derive(Debug, Clone, Default)]
pub struct ModelCheckReport {
    /// Proposal-assignment scenarios explored, summed over heights and branches.
    pub scenarios: usize,
    /// Distinct local node states visited.
    pub states: usize,
    /// Heights at which at least one execution commits.
    pub heights_with_commit: BTreeSet<u64>,
    pub violations: Vec<SafetyViolation>,
}

impl ModelCheckReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone)]
enum Msg {
    Proposal(Arc<Block>),
    Vote(Vote),
}

/// Checks `pools.len()` consecutive heights on top of `ledger`. Height `k`
/// uses round `k` and its scheduled proposer. The proposal window must be 1.
pub fn check(
    ledger: &Ledger,
    pools: &[Vec<TokenTransaction>],
    byzantine: &[ByzantineSpec],
    config: &ConsensusConfig,
) -> ModelCheckReport {
    assert_eq!(config.proposal_window, 1, "model check covers single-proposer rounds");
    let mut report = ModelCheckReport::default();
    explore(ledger, pools, 0, byzantine, config, &mut report);
    report
}

fn explore(
    ledger: &Ledger,
    pools: &[Vec<TokenTransaction>],
    depth: usize,
    byzantine: &[ByzantineSpec],
    config: &ConsensusConfig,
    report: &mut ModelCheckReport,
) {
    let Some(pool) = pools.get(depth) else {
        return;
    };
    let round = depth as u64;
    let roster: Vec<Address> = ledger.policy().validators().to_vec();
    let n = roster.len();
    let behavior = |i: usize| byzantine.iter().find(|b| b.node == i).map(|b| b.behavior);
    let proposer = config.proposers(round)[0];
    let ctx = RoundContext::new(round, &roster, &[proposer], 1, ledger.head(), ledger);

    let mut proposals: Vec<Arc<Block>> = Vec::new();
    let honest_block = build_block(pool, &roster[proposer], ledger.head(), ledger).ok();
    match behavior(proposer) {
        None | Some(Behavior::Delay) => proposals.extend(honest_block.map(Arc::new)),
        Some(Behavior::Silent) => {}
        Some(Behavior::Equivocate) => {
            proposals.extend(honest_block.map(Arc::new));
            let mut sorted = pool.clone();
            sorted.sort_by(canonical_order);
            sorted.pop();
            if let Ok(b) = build_block(&sorted, &roster[proposer], ledger.head(), ledger) {
                proposals.push(Arc::new(b));
            }
        }
    }

    let mut faulty_votes = Vec::new();
    for b in byzantine {
        if b.behavior == Behavior::Silent {
            continue;
        }
        for p in &proposals {
            faulty_votes.push(Msg::Vote(Vote::cast(&roster[b.node], round, p.block_hash)));
        }
        if let Some(p) = proposals.first() {
            let fake = p.block_hash.with_bit_flipped(0);
            faulty_votes.push(Msg::Vote(Vote::cast(&roster[b.node], round, fake)));
        }
    }

    let honest: Vec<usize> = (0..n).filter(|&i| behavior(i).is_none()).collect();
    let choices = proposals.len() + 1;
    let mut next_heads: BTreeSet<Digest> = BTreeSet::new();
    let total = choices.pow(honest.len() as u32);
    for code in 0..total {
        report.scenarios += 1;
        // first proposal seen by each honest node; `proposals.len()` encodes none
        let mut assign = vec![None; n];
        let mut c = code;
        for &i in &honest {
            let k = c % choices;
            c /= choices;
            assign[i] = (k < proposals.len()).then_some(k);
        }
        let mut reach: Vec<(usize, BTreeSet<Digest>)> = Vec::new();
        for &i in &honest {
            let mut msgs: Vec<Msg> = proposals.iter().cloned().map(Msg::Proposal).collect();
            for &j in &honest {
                if j != i {
                    if let Some(k) = assign[j] {
                        msgs.push(Msg::Vote(Vote::cast(&roster[j], round, proposals[k].block_hash)));
                    }
                }
            }
            msgs.extend(faulty_votes.iter().cloned());
            let first = assign[i].map(|k| proposals[k].block_hash);
            let mut seen = HashSet::new();
            let mut commits = BTreeSet::new();
            dfs(
                &ctx,
                Node::new(i, roster[i].clone()),
                &msgs,
                0,
                first,
                &mut seen,
                &mut commits,
            );
            report.states += seen.len();
            reach.push((i, commits));
        }
        for (a, (i, ci)) in reach.iter().enumerate() {
            for (j, cj) in &reach[a + 1..] {
                for hi in ci {
                    if let Some(hj) = cj.iter().find(|h| *h != hi) {
                        report.violations.push(SafetyViolation {
                            height: round,
                            nodes: (*i, *j),
                            hashes: (*hi, *hj),
                        });
                    }
                }
            }
        }
        for (_, c) in reach {
            next_heads.extend(c);
        }
    }

    if !next_heads.is_empty() {
        report.heights_with_commit.insert(round);
    }
    for h in next_heads {
        let block = proposals
            .iter()
            .find(|p| p.block_hash == h)
            .expect("committed hash is a proposal");
        let mut block = Block::clone(block);
        block.sign_with(roster.iter());
        let mut next = ledger.clone();
        next.commit(block).expect("committable proposal extends the ledger");
        explore(&next, pools, depth + 1, byzantine, config, report);
    }
}

/// Visits every state reachable at one node by delivering any remaining
/// message next. The node's first proposal is constrained to `first`.
fn dfs<S: crate::ledger::StateView + ?Sized>(
    ctx: &RoundContext<'_, S>,
    node: Node,
    msgs: &[Msg],
    delivered: u64,
    first: Option<Digest>,
    seen: &mut HashSet<(Fingerprint, u64)>,
    commits: &mut BTreeSet<Digest>,
) {
    if !seen.insert((node.fingerprint(), delivered)) {
        return;
    }
    if let Some(h) = node.committed() {
        commits.insert(h);
    }
    for (k, m) in msgs.iter().enumerate() {
        if delivered & (1 << k) != 0 {
            continue;
        }
        let mut next = node.clone();
        match m {
            Msg::Proposal(b) => {
                if next.voted().is_none() && first != Some(b.block_hash) {
                    continue;
                }
                if let Some(own) = next.on_proposal(ctx, b.clone()) {
                    next.on_vote(ctx, own);
                }
            }
            Msg::Vote(v) => next.on_vote(ctx, v.clone()),
        }
        dfs(ctx, next, msgs, delivered | (1 << k), first, seen, commits);
    }
}
