use proptest::prelude::*;

use super::*;
use crate::amount::TokenAmount;
use crate::ledger::{build_block, Ledger, LedgerPolicy, TokenTransaction, TxKind};

struct Net {
    validators: Vec<Address>,
    users: Vec<Address>,
    sink: Address,
    ledger: Ledger,
    next_ts: u64,
}

impl Net {
    /// `n` validators, a genesis granting 1,000 tokens to each of 8 users.
    fn new(n: usize) -> Self {
        let issuer = Address::derive("market:issuer");
        let sink = Address::derive("market:pool");
        let validators: Vec<Address> = (0..n).map(|i| Address::derive(&format!("validator-{i}"))).collect();
        let users: Vec<Address> = (0..8).map(|i| Address::derive(&format!("U{i}"))).collect();
        let policy = LedgerPolicy::new(issuer.clone(), None, validators.clone());
        let mut ledger = Ledger::new(policy);
        let genesis: Vec<TokenTransaction> = users
            .iter()
            .map(|u| {
                TokenTransaction::signed(0, issuer.clone(), u.clone(), TokenAmount::from_tokens(1000), TxKind::Allocation, None)
            })
            .collect();
        let roster = ledger.policy().validators().to_vec();
        let mut g = build_block(&genesis, &roster[0], None, &ledger).unwrap();
        g.sign_with(&roster);
        ledger.commit(g).unwrap();
        Self {
            validators: roster,
            users,
            sink,
            ledger,
            next_ts: 1,
        }
    }

    fn pool(&mut self, size: usize) -> Vec<TokenTransaction> {
        (0..size)
            .map(|k| {
                self.next_ts += 1;
                TokenTransaction::signed(
                    self.next_ts,
                    self.users[k % self.users.len()].clone(),
                    self.sink.clone(),
                    TokenAmount::from_centi(1 + k as i64),
                    TxKind::Sale,
                    None,
                )
            })
            .collect()
    }
}

fn honest_net(_n: usize) -> NetworkModel {
    NetworkModel::reliable(DelayModel::Uniform { lo_ms: 5.0, hi_ms: 30.0 })
}

#[test]
fn quorum_arithmetic_for_one_to_a_hundred_nodes() {
    for n in 1..=100usize {
        let c = ConsensusConfig::new(n, 0);
        let (q, f) = (c.quorum, c.max_faulty);
        assert!(q + f <= n, "n={n}");
        assert!(2 * q > n + f, "n={n}: two quorums must share an honest node");
        assert!(q > n - q, "n={n}");
        assert!(3 * f < n, "n={n}");
        c.validate().unwrap();
    }
    assert_eq!(ConsensusConfig::new(4, 0).quorum, 3);
    assert_eq!(ConsensusConfig::new(1, 0).quorum, 1);
    let mut bad = ConsensusConfig::new(4, 0);
    bad.quorum = 2;
    assert!(bad.validate().is_err());
    assert!(ConsensusConfig::new(4, 0).with_proposal_window(5).validate().is_err());
}

#[test]
fn proposal_ordering_picks_lowest_hash_regardless_of_arrival() {
    let mut net = Net::new(4);
    let pool = net.pool(3);
    let cfg = ConsensusConfig::new(4, 1).with_proposal_window(4);
    let mut blocks: Vec<Block> = net
        .validators
        .iter()
        .map(|v| build_block(&pool, v, net.ledger.head(), &net.ledger).unwrap())
        .collect();
    let oracle = {
        let mut hashes: Vec<String> = blocks.iter().map(|b| b.block_hash.to_hex()).collect();
        hashes.sort();
        hashes[0].clone()
    };
    assert_eq!(order_proposals(&blocks, 0, &cfg).unwrap().block_hash.to_hex(), oracle);
    blocks.reverse();
    assert_eq!(order_proposals(&blocks, 0, &cfg).unwrap().block_hash.to_hex(), oracle);
    blocks.rotate_left(1);
    assert_eq!(order_proposals(&blocks, 7, &cfg).unwrap().block_hash.to_hex(), oracle);
    assert_eq!(order_proposals(&blocks[..1], 0, &cfg).unwrap(), &blocks[0]);

    let mut other = blocks[0].clone();
    other.height += 1;
    blocks.push(other);
    assert!(matches!(
        order_proposals(&blocks, 0, &cfg),
        Err(ConsensusError::HeightMismatch { .. })
    ));
    assert!(matches!(order_proposals(&[], 0, &cfg), Err(ConsensusError::NoCandidates)));
}

#[test]
fn tally_commits_with_three_of_four() {
    let net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 0);
    let h = Digest::of(b"H");
    let votes: Vec<Vote> = net.validators[..3].iter().map(|v| Vote::cast(v, 0, h)).collect();
    let d = cast_and_tally(&votes, &net.validators, &cfg);
    assert_eq!(d.outcome, Outcome::Committed(h));
    assert_eq!(d.votes_counted, 3);

    let one = Net::new(1);
    let d = cast_and_tally(&[Vote::cast(&one.validators[0], 0, h)], &one.validators, &ConsensusConfig::new(1, 0));
    assert_eq!(d.outcome, Outcome::Committed(h));
}

#[test]
fn tally_ignores_forged_and_foreign_votes() {
    let net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 0);
    let h = Digest::of(b"H");
    let mut votes: Vec<Vote> = net.validators[..2].iter().map(|v| Vote::cast(v, 0, h)).collect();
    let mut forged = Vote::cast(&net.validators[2], 0, Digest::of(b"other"));
    forged.block_hash = h;
    votes.push(forged);
    votes.push(Vote::cast(&Address::derive("outsider"), 0, h));
    let d = cast_and_tally(&votes, &net.validators, &cfg);
    assert_eq!(d.outcome, Outcome::NoQuorum);
    assert_eq!(d.votes_counted, 2);
}

/// Every assignment of four voters to {silent, H, H′, H then H′, H′ then H},
/// checked against a direct first-vote count.
#[test]
fn exhaustive_four_voter_tally() {
    let net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 0);
    let h = Digest::of(b"H");
    let h2 = Digest::of(b"H'");
    let plans: [&[Digest]; 5] = [&[], &[h], &[h2], &[h, h2], &[h2, h]];
    for code in 0..5usize.pow(4) {
        let choice: Vec<usize> = (0..4).map(|i| code / 5usize.pow(i) % 5).collect();
        // interleave voters' messages round-robin so order across voters varies
        let mut votes = Vec::new();
        for step in 0..2 {
            for (voter, &c) in choice.iter().enumerate() {
                if let Some(hash) = plans[c].get(step) {
                    votes.push(Vote::cast(&net.validators[voter], 3, *hash));
                }
            }
        }
        let firsts: Vec<Digest> = choice.iter().filter_map(|&c| plans[c].first().copied()).collect();
        let count_h = firsts.iter().filter(|x| **x == h).count();
        let count_h2 = firsts.iter().filter(|x| **x == h2).count();
        let expected = if count_h >= 3 {
            Outcome::Committed(h)
        } else if count_h2 >= 3 {
            Outcome::Committed(h2)
        } else {
            Outcome::NoQuorum
        };
        let d = cast_and_tally(&votes, &net.validators, &cfg);
        assert_eq!(d.outcome, expected, "plan {choice:?}");
        if !votes.is_empty() {
            assert_eq!(d.round, 3);
        }
        assert_eq!(d.equivocators.len(), choice.iter().filter(|&&c| c >= 3).count());
        if let Outcome::Committed(_) = d.outcome {
            assert!(d.votes_counted >= cfg.quorum);
        }
    }
    // the named case: two for H, one for H′, one silent
    let votes = vec![
        Vote::cast(&net.validators[0], 0, h),
        Vote::cast(&net.validators[1], 0, h),
        Vote::cast(&net.validators[2], 0, h2),
    ];
    assert_eq!(cast_and_tally(&votes, &net.validators, &cfg).outcome, Outcome::NoQuorum);
}

fn envelopes(n_msgs: usize) -> Vec<Envelope> {
    let h = Digest::of(b"x");
    let v = Vote::cast(&Address::derive("a"), 0, h);
    (0..n_msgs)
        .map(|i| Envelope {
            from: i % 4,
            to: (i + 1) % 4,
            sent_at: 1000,
            payload: Payload::Vote(v.clone()),
        })
        .collect()
}

#[test]
fn network_schedules_are_deterministic() {
    let msgs = envelopes(500);
    let model = NetworkModel {
        drop_probability: 0.1,
        ..NetworkModel::default()
    };
    let a = simulate_network(&msgs, &model, &mut round_rng(42, 3));
    let b = simulate_network(&msgs, &model, &mut round_rng(42, 3));
    let c = simulate_network(&msgs, &model, &mut round_rng(42, 4));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn network_without_drops_delivers_everything_in_range() {
    let msgs = envelopes(1000);
    let model = NetworkModel::default();
    let sched = simulate_network(&msgs, &model, &mut round_rng(1, 0));
    for t in sched {
        let t = t.expect("delivered");
        assert!((1000 + 5000..=1000 + 30_000).contains(&t));
    }
    let mut self_msg = envelopes(1);
    self_msg[0].to = self_msg[0].from;
    let lossy = NetworkModel {
        drop_probability: 0.99,
        ..NetworkModel::default()
    };
    assert_eq!(simulate_network(&self_msg, &lossy, &mut round_rng(1, 0)), vec![Some(1000)]);
}

#[test]
fn drop_rate_converges_to_configured_probability() {
    let msgs = envelopes(10_000);
    let model = NetworkModel {
        drop_probability: 0.3,
        ..NetworkModel::default()
    };
    let sched = simulate_network(&msgs, &model, &mut round_rng(2024, 0));
    let dropped = sched.iter().filter(|t| t.is_none()).count() as f64 / 1e4;
    assert!((dropped - 0.3).abs() <= 0.02, "drop rate {dropped}");
}

#[test]
fn network_model_validation() {
    let mut m = NetworkModel::default();
    m.byzantine = vec![
        ByzantineSpec { node: 0, behavior: Behavior::Silent },
        ByzantineSpec { node: 1, behavior: Behavior::Equivocate },
    ];
    assert!(matches!(
        m.validate(4, false),
        Err(ConsensusError::UnsafeFaults { byzantine: 2, max_faulty: 1 })
    ));
    m.validate(4, true).unwrap();
    m.validate(7, false).unwrap();
    m.byzantine[1].node = 0;
    assert!(m.validate(7, false).is_err());
    m.byzantine = vec![ByzantineSpec { node: 9, behavior: Behavior::Delay }];
    assert!(m.validate(4, true).is_err());
    m.byzantine.clear();
    m.drop_probability = 1.0;
    assert!(m.validate(4, false).is_err());
}

#[test]
fn fault_scenario_json() {
    let s: FaultScenario = serde_json::from_str(
        r#"{"n_active":4,"delays_ms":[5,30],"drop_probability":0.1,
            "byzantine":[{"node":2,"behavior":"equivocate"}],"seed":7}"#,
    )
    .unwrap();
    assert_eq!(s.delays_ms, DelayModel::Uniform { lo_ms: 5.0, hi_ms: 30.0 });
    assert_eq!(s.network().behavior_of(2), Some(Behavior::Equivocate));
    let fixed: FaultScenario = serde_json::from_str(r#"{"n_active":4,"delays_ms":12.5,"seed":1}"#).unwrap();
    assert_eq!(fixed.delays_ms, DelayModel::Fixed { ms: 12.5 });
    let back: FaultScenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    assert!(serde_json::from_str::<FaultScenario>(r#"{"n_active":4,"delays_ms":[30,5],"seed":1}"#).is_err());
}

#[test]
fn honest_rounds_always_commit() {
    let mut net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 99);
    let model = honest_net(4);
    let mut t = 0;
    for round in 0..30 {
        let pool = net.pool(1 + round as usize % 3);
        let r = run_round(&pool, &mut net.ledger, &model, &cfg, round, t).unwrap();
        assert!(matches!(r.decision.outcome, Outcome::Committed(_)));
        assert!(r.decision.votes_counted >= 3);
        assert!(!r.safety_violation);
        let lat = r.latency_us().unwrap();
        assert!((10_000..=60_000).contains(&lat), "latency {lat}");
        assert_eq!(r.block.as_ref().unwrap().txs.len(), pool.len());
        t = r.ended_at + 1;
    }
    assert_eq!(net.ledger.len(), 31);
    assert!(crate::ledger::verify_chain(&net.ledger).is_clean());
}

#[test]
fn fixed_delay_latency_is_two_hops() {
    let mut net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 5);
    let model = NetworkModel::reliable(DelayModel::Fixed { ms: 10.0 });
    let pool = net.pool(2);
    let r = run_round(&pool, &mut net.ledger, &model, &cfg, 0, 1_000_000).unwrap();
    assert_eq!(r.latency_us(), Some(20_000));
}

#[test]
fn same_seed_same_chain() {
    let run = |seed: u64| {
        let mut net = Net::new(4);
        let cfg = ConsensusConfig::new(4, seed).with_proposal_window(2);
        let model = NetworkModel {
            drop_probability: 0.1,
            ..NetworkModel::default()
        };
        let mut trace = Vec::new();
        for round in 0..15 {
            let pool = net.pool(2);
            let r = run_round(&pool, &mut net.ledger, &model, &cfg, round, round * 100_000).unwrap();
            trace.push(TraceRow::from(&r));
        }
        (net.ledger.head_hash(), trace)
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11).1, run(12).1);
}

#[test]
fn silent_leader_stalls_its_round_only() {
    let mut net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 3);
    let model = NetworkModel {
        byzantine: vec![ByzantineSpec { node: 1, behavior: Behavior::Silent }],
        ..honest_net(4)
    };
    let pool = net.pool(2);
    let r = run_round(&pool, &mut net.ledger, &model, &cfg, 1, 0).unwrap();
    assert_eq!(r.decision.outcome, Outcome::NoQuorum);
    assert_eq!(net.ledger.len(), 1);
    let r = run_round(&pool, &mut net.ledger, &model, &cfg, 2, r.ended_at + 1).unwrap();
    assert!(r.decision.outcome.committed().is_some());
}

#[test]
fn delayed_leader_times_out() {
    let mut net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 3);
    let model = NetworkModel {
        byzantine: vec![ByzantineSpec { node: 0, behavior: Behavior::Delay }],
        ..honest_net(4)
    };
    let pool = net.pool(2);
    let r = run_round(&pool, &mut net.ledger, &model, &cfg, 0, 0).unwrap();
    assert_eq!(r.decision.outcome, Outcome::RoundTimeout);
    assert_eq!(r.ended_at, model.round_timeout_us());
}

#[test]
fn equivocation_is_logged_and_never_splits_honest_nodes() {
    for node in 0..4 {
        let mut net = Net::new(4);
        let cfg = ConsensusConfig::new(4, 8);
        let model = NetworkModel {
            byzantine: vec![ByzantineSpec { node, behavior: Behavior::Equivocate }],
            ..honest_net(4)
        };
        let mut commits = 0;
        let mut logged = false;
        for round in 0..8 {
            let pool = net.pool(3);
            let r = run_round(&pool, &mut net.ledger, &model, &cfg, round, round * 1_000_000).unwrap();
            assert!(!r.safety_violation);
            commits += usize::from(r.decision.outcome.committed().is_some());
            logged |= r.decision.equivocators.contains(&net.validators[node]);
        }
        assert!(commits >= 6, "byzantine {node}: {commits} commits");
        assert!(logged);
    }
}

#[test]
fn two_equivocators_need_the_unsafe_flag_and_may_split() {
    let model = NetworkModel {
        byzantine: vec![
            ByzantineSpec { node: 0, behavior: Behavior::Equivocate },
            ByzantineSpec { node: 1, behavior: Behavior::Equivocate },
        ],
        ..NetworkModel::reliable(DelayModel::Fixed { ms: 10.0 })
    };
    assert!(model.validate(4, false).is_err());
    model.validate(4, true).unwrap();
    let mut net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 1);
    let pool = net.pool(3);
    let r = run_round(&pool, &mut net.ledger, &model, &cfg, 0, 0).unwrap();
    // nodes 2 and 3 received different proposals and both equivocators vote for both
    assert!(r.safety_violation);
    assert_eq!(r.honest_commits.len(), 2);
}

#[test]
fn trace_csv_header_and_row() {
    let mut net = Net::new(4);
    let cfg = ConsensusConfig::new(4, 1);
    let pool = net.pool(1);
    let r = run_round(&pool, &mut net.ledger, &NetworkModel::reliable(DelayModel::Fixed { ms: 5.0 }), &cfg, 0, 0).unwrap();
    let mut out = Vec::new();
    write_trace_csv(&[TraceRow::from(&r)], &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("round,proposer,block_hash,votes,outcome,latency_ms"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("0,0,"));
    assert!(row.ends_with(",committed,10.0"));
    let mut empty = Vec::new();
    write_trace_csv(&[], &mut empty).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap(), "round,proposer,block_hash,votes,outcome,latency_ms\n");
}

#[test]
fn model_check_single_fault_any_position_and_behaviour() {
    let mut net = Net::new(4);
    let pools = vec![net.pool(3), net.pool(2)];
    let cfg = ConsensusConfig::new(4, 0);
    for node in 0..4 {
        for behavior in Behavior::ALL {
            let spec = [ByzantineSpec { node, behavior }];
            let report = model_check::check(&net.ledger, &pools, &spec, &cfg);
            assert!(report.is_safe(), "{spec:?}: {:?}", report.violations);
            assert!(report.states > 0);
            if node != 0 || behavior != Behavior::Silent {
                assert!(report.heights_with_commit.contains(&0), "{spec:?}");
            }
        }
    }
}

#[test]
fn model_check_finds_split_beyond_the_bound() {
    let mut net = Net::new(4);
    let pools = vec![net.pool(3)];
    let spec = [
        ByzantineSpec { node: 0, behavior: Behavior::Equivocate },
        ByzantineSpec { node: 1, behavior: Behavior::Equivocate },
    ];
    let report = model_check::check(&net.ledger, &pools, &spec, &ConsensusConfig::new(4, 0));
    assert!(!report.is_safe());
}

fn arb_byzantine(n: usize) -> impl Strategy<Value = Vec<ByzantineSpec>> {
    let f = max_faulty(n);
    proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=f).prop_flat_map(|nodes| {
        let k = nodes.len();
        proptest::collection::vec(proptest::sample::select(Behavior::ALL.to_vec()), k).prop_map(move |bs| {
            nodes
                .iter()
                .zip(bs)
                .map(|(&node, behavior)| ByzantineSpec { node, behavior })
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn no_two_honest_commits_differ(
        (n, byzantine) in prop::sample::select(vec![4usize, 7, 10])
            .prop_flat_map(|n| (Just(n), arb_byzantine(n))),
        seed in any::<u64>(),
        drop in prop::sample::select(vec![0.0, 0.1, 0.3]),
        window in 1usize..3,
    ) {
        let mut net = Net::new(n);
        let cfg = ConsensusConfig::new(n, seed).with_proposal_window(window);
        let model = NetworkModel { drop_probability: drop, byzantine, ..NetworkModel::default() };
        model.validate(n, false).unwrap();
        let mut t = 0;
        for round in 0..6 {
            let pool = net.pool(3);
            let r = run_round(&pool, &mut net.ledger, &model, &cfg, round, t).unwrap();
            prop_assert!(!r.safety_violation);
            if let Outcome::Committed(h) = r.decision.outcome {
                prop_assert!(r.decision.votes_counted >= cfg.quorum);
                for (_, c, _) in &r.honest_commits {
                    prop_assert_eq!(*c, h);
                }
            }
            t = r.ended_at + 1;
        }
        prop_assert!(crate::ledger::verify_chain(&net.ledger).is_clean());
    }

    #[test]
    fn silent_minority_cannot_stall_a_wide_window(
        n in prop::sample::select(vec![4usize, 7, 10]),
        seed in any::<u64>(),
        silent in prop::collection::btree_set(0usize..10, 0..=3),
    ) {
        let f = max_faulty(n);
        let byzantine: Vec<ByzantineSpec> = silent
            .into_iter()
            .filter(|&i| i < n)
            .take(f)
            .map(|node| ByzantineSpec { node, behavior: Behavior::Silent })
            .collect();
        let mut net = Net::new(n);
        let cfg = ConsensusConfig::new(n, seed).with_proposal_window(f + 1);
        let model = NetworkModel { byzantine, ..NetworkModel::default() };
        let mut t = 0;
        for round in 0..5 {
            let pool = net.pool(2);
            let r = run_round(&pool, &mut net.ledger, &model, &cfg, round, t).unwrap();
            prop_assert!(r.decision.outcome.committed().is_some(), "round {} {:?}", round, r.decision);
            t = r.ended_at + 1;
        }
    }
}
