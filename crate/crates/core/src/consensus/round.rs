use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::network::{round_rng, simulate_network, Envelope, Payload, SimTime};
use super::node::{Node, RoundContext};
use super::{Behavior, ConsensusConfig, ConsensusError, Decision, NetworkModel, Outcome, Vote};
use crate::crypto::Digest;
use crate::identity::Address;
use crate::ledger::{build_block, canonical_order, Block, Ledger, TokenTransaction};

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub decision: Decision,
    /// The committed block as appended to the ledger.
    pub block: Option<Block>,
    pub proposers: Vec<usize>,
    pub started_at: SimTime,
    /// Commit time at the reference node: the leader if it is honest and
    /// committed, otherwise the earliest honest committer.
    pub committed_at: Option<SimTime>,
    /// Last simulated instant the round used.
    pub ended_at: SimTime,
    /// `(node, hash, time)` for every honest node that committed.
    pub honest_commits: Vec<(usize, Digest, SimTime)>,
    /// Honest nodes committed different blocks. Only possible beyond the fault bound.
    pub safety_violation: bool,
    pub messages_sent: usize,
    pub messages_dropped: usize,
}

impl RoundReport {
    pub fn latency_us(&self) -> Option<SimTime> {
        self.committed_at.map(|t| t - self.started_at)
    }

    pub fn leader(&self) -> usize {
        self.proposers[0]
    }
}

enum Event {
    Deliver(Envelope),
    Deadline(usize),
}

struct Scheduler<'n> {
    network: &'n NetworkModel,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<(SimTime, u64)>>,
    events: Vec<Option<Event>>,
    sent: usize,
    dropped: usize,
}

impl<'n> Scheduler<'n> {
    fn push(&mut self, at: SimTime, ev: Event) {
        let seq = self.events.len() as u64;
        self.events.push(Some(ev));
        self.queue.push(Reverse((at, seq)));
    }

    fn send(&mut self, batch: Vec<Envelope>) {
        let times = simulate_network(&batch, self.network, &mut self.rng);
        for (env, t) in batch.into_iter().zip(times) {
            self.sent += 1;
            match t {
                Some(t) => self.push(t, Event::Deliver(env)),
                None => self.dropped += 1,
            }
        }
    }

    fn pop(&mut self) -> Option<(SimTime, Event)> {
        let Reverse((t, seq)) = self.queue.pop()?;
        Some((t, self.events[seq as usize].take().expect("event taken once")))
    }

    fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse((t, _))| *t)
    }
}

fn broadcast(from: usize, n: usize, at: SimTime, payload: &Payload) -> Vec<Envelope> {
    (0..n)
        .map(|to| Envelope {
            from,
            to,
            sent_at: at,
            payload: payload.clone(),
        })
        .collect()
}

/// Messages a node sends after deciding on `vote`, according to its behaviour.
/// Equivocators coordinate out of band: `collusion` holds the conflicting
/// blocks of an equivocating proposer, if any.
fn vote_messages(
    node: &Node,
    behavior: Option<Behavior>,
    vote: Vote,
    collusion: &[Arc<Block>],
    n: usize,
    at: SimTime,
) -> Vec<Envelope> {
    match behavior {
        Some(Behavior::Silent) => Vec::new(),
        None | Some(Behavior::Delay) => broadcast(node.index, n, at, &Payload::Vote(vote)),
        Some(Behavior::Equivocate) => {
            // the fuller block first to even peers, the other one first to odd peers
            let mut known: Vec<&Arc<Block>> = collusion.iter().collect();
            for h in node.candidate_hashes() {
                if !known.iter().any(|b| b.block_hash == *h) {
                    known.extend(node.candidate(h));
                }
            }
            known.sort_by_key(|b| (Reverse(b.txs.len()), b.block_hash));
            let primary = known.first().map(|b| b.block_hash).unwrap_or(vote.block_hash);
            let secondary = known
                .get(1)
                .map(|b| b.block_hash)
                .unwrap_or_else(|| primary.with_bit_flipped(0));
            let first = Vote::cast(&node.address, vote.round, primary);
            let second = Vote::cast(&node.address, vote.round, secondary);
            let mut out = Vec::with_capacity(2 * n);
            for to in 0..n {
                let pair = if to % 2 == 0 { [&first, &second] } else { [&second, &first] };
                for v in pair {
                    out.push(Envelope {
                        from: node.index,
                        to,
                        sent_at: at,
                        payload: Payload::Vote(v.clone()),
                    });
                }
            }
            out
        }
    }
}

/// Messages a proposer sends at round start, plus the conflicting pair when it
/// equivocates: its full block to even peers, a block without the last
/// transaction to odd peers, both to fellow equivocators.
fn proposal_messages(
    index: usize,
    network: &NetworkModel,
    pool: &[TokenTransaction],
    address: &Address,
    ledger: &Ledger,
    n: usize,
    at: SimTime,
) -> Result<(Vec<Envelope>, Vec<Arc<Block>>), ConsensusError> {
    match network.behavior_of(index) {
        None => {
            let block = build_block(pool, address, ledger.head(), ledger)?;
            Ok((broadcast(index, n, at, &Payload::Proposal(Arc::new(block))), Vec::new()))
        }
        Some(Behavior::Silent) => Ok((Vec::new(), Vec::new())),
        Some(Behavior::Delay) => Ok((
            build_block(pool, address, ledger.head(), ledger)
                .map(|b| broadcast(index, n, at, &Payload::Proposal(Arc::new(b))))
                .unwrap_or_default(),
            Vec::new(),
        )),
        Some(Behavior::Equivocate) => {
            let Ok(a) = build_block(pool, address, ledger.head(), ledger) else {
                return Ok((Vec::new(), Vec::new()));
            };
            let mut sorted = pool.to_vec();
            sorted.sort_by(canonical_order);
            sorted.pop();
            let a_prime = build_block(&sorted, address, ledger.head(), ledger).ok();
            let a = Arc::new(a);
            let a_prime = a_prime.map(Arc::new);
            let mut out = Vec::new();
            for to in 0..n {
                let blocks = if network.behavior_of(to) == Some(Behavior::Equivocate) {
                    vec![Some(a.clone()), a_prime.clone()]
                } else if to % 2 == 0 {
                    vec![Some(a.clone())]
                } else {
                    vec![a_prime.clone()]
                };
                out.extend(blocks.into_iter().flatten().map(|b| Envelope {
                    from: index,
                    to,
                    sent_at: at,
                    payload: Payload::Proposal(b),
                }));
            }
            let pair = std::iter::once(a).chain(a_prime).collect();
            Ok((out, pair))
        }
    }
}

/// Runs one consensus round over `pool` starting at simulated time `start`
/// and, on commit, appends the block to `ledger`. On `no_quorum` or
/// `round_timeout` the ledger is untouched and the pool should be retried.
pub fn run_round(
    pool: &[TokenTransaction],
    ledger: &mut Ledger,
    network: &NetworkModel,
    config: &ConsensusConfig,
    round: u64,
    start: SimTime,
) -> Result<RoundReport, ConsensusError> {
    config.validate()?;
    let roster: Vec<Address> = ledger.policy().validators().to_vec();
    if roster.len() != config.n_active {
        return Err(ConsensusError::InvalidConfig(format!(
            "ledger has {} validators, configuration expects {}",
            roster.len(),
            config.n_active
        )));
    }
    let n = roster.len();
    let proposers = config.proposers(round);
    let deadline = start + network.round_timeout_us();
    let byzantine: BTreeSet<usize> = network.byzantine.iter().map(|b| b.node).collect();

    let (decision, block, honest_commits, committed_at, ended_at, sched_stats) = {
        let ctx = RoundContext::new(
            round,
            &roster,
            &proposers,
            config.proposal_window,
            ledger.head(),
            &*ledger,
        );
        let mut nodes: Vec<Node> = roster
            .iter()
            .enumerate()
            .map(|(i, a)| Node::new(i, a.clone()))
            .collect();
        let mut sched = Scheduler {
            network,
            rng: round_rng(config.rng_seed, round),
            queue: BinaryHeap::new(),
            events: Vec::new(),
            sent: 0,
            dropped: 0,
        };

        let mut collusion = Vec::new();
        for &p in &proposers {
            let (msgs, pair) = proposal_messages(p, network, pool, &roster[p], ledger, n, start)?;
            collusion.extend(pair);
            sched.send(msgs);
        }
        for i in 0..n {
            sched.push(start + network.delay.max_us(), Event::Deadline(i));
        }

        let mut commit_times: Vec<Option<SimTime>> = vec![None; n];
        let mut ended_at = start;
        let mut timed_out = false;
        let honest_count = n - byzantine.len();
        let mut honest_done = 0;
        while let Some(t) = sched.peek_time() {
            if t > deadline {
                timed_out = true;
                break;
            }
            let (now, ev) = sched.pop().expect("peeked");
            ended_at = now;
            let (i, vote) = match ev {
                Event::Deliver(env) => match env.payload {
                    Payload::Proposal(b) => (env.to, nodes[env.to].on_proposal(&ctx, b)),
                    Payload::Vote(v) => {
                        nodes[env.to].on_vote(&ctx, v);
                        (env.to, None)
                    }
                },
                Event::Deadline(i) => (i, nodes[i].on_deadline(&ctx)),
            };
            if let Some(v) = vote {
                let msgs = vote_messages(&nodes[i], network.behavior_of(i), v, &collusion, n, now);
                sched.send(msgs);
            }
            if commit_times[i].is_none() && nodes[i].committed().is_some() {
                commit_times[i] = Some(now);
                if !byzantine.contains(&i) {
                    honest_done += 1;
                }
            }
            if honest_done == honest_count {
                break;
            }
        }

        let honest_commits: Vec<(usize, Digest, SimTime)> = (0..n)
            .filter(|i| !byzantine.contains(i))
            .filter_map(|i| Some((i, nodes[i].committed()?, commit_times[i]?)))
            .collect();
        let leader = proposers[0];
        let reference = honest_commits
            .iter()
            .find(|(i, _, _)| *i == leader)
            .or_else(|| honest_commits.iter().min_by_key(|(i, _, t)| (*t, *i)))
            .copied();
        let mut equivocators = BTreeSet::new();
        for i in (0..n).filter(|i| !byzantine.contains(i)) {
            equivocators.extend(nodes[i].equivocators().iter().cloned());
        }
        let (outcome, votes_counted, block, committed_at) = match reference {
            Some((r, h, t)) => {
                let mut block = Block::clone(nodes[r].candidate(&h).expect("committed block is held"));
                block.signatures = nodes[r].signatures_for(&h);
                (Outcome::Committed(h), nodes[r].tally_of(&h), Some(block), Some(t))
            }
            None => {
                let best = (0..n)
                    .filter(|i| !byzantine.contains(i))
                    .map(|i| nodes[i].max_tally())
                    .max()
                    .unwrap_or(0);
                let outcome = if timed_out {
                    Outcome::RoundTimeout
                } else {
                    Outcome::NoQuorum
                };
                (outcome, best, None, None)
            }
        };
        if timed_out && reference.is_none() {
            ended_at = deadline;
        }
        let decision = Decision {
            round,
            outcome,
            votes_counted,
            equivocators: equivocators.into_iter().collect(),
        };
        (
            decision,
            block,
            honest_commits,
            committed_at,
            ended_at,
            (sched.sent, sched.dropped),
        )
    };

    if let Some(b) = &block {
        ledger.commit(b.clone())?;
    }
    let distinct: BTreeSet<Digest> = honest_commits.iter().map(|(_, h, _)| *h).collect();
    Ok(RoundReport {
        decision,
        block,
        proposers,
        started_at: start,
        committed_at,
        ended_at,
        safety_violation: distinct.len() > 1,
        honest_commits,
        messages_sent: sched_stats.0,
        messages_dropped: sched_stats.1,
    })
}
