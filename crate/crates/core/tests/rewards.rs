use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use vbfl_core::learning::{Arch, ModelParams};
use vbfl_core::protocol::{Block, SignatureMode, Signer, VoteTally, WorkerTransaction, ZERO_HASH};
use vbfl_core::rewards::*;
use vbfl_core::DeviceId;

fn id(i: u32) -> DeviceId {
    DeviceId::from_index(i)
}

fn signer() -> Signer {
    let mut s = Signer::new(SignatureMode::Stub, false);
    for i in 0..20 {
        s.register_derived(id(i), 0);
    }
    s
}

fn model() -> ModelParams {
    ModelParams::zeros(Arch::Softmax { inputs: 2, classes: 2 }).unwrap()
}

/// Tally for `worker` with `pos` Positive and `neg` Negative votes cast by
/// validators 10, 11, ...; the worker reports `reported` as its reward.
fn tally(s: &Signer, worker: u32, pos: u32, neg: u32, reported: u64) -> VoteTally {
    let tx = WorkerTransaction::new_signed(1, id(worker), model(), 5, 3000, reported, s).unwrap();
    VoteTally {
        worker_tx: Arc::new(tx),
        positives: pos,
        negatives: neg,
        voters: (10..10 + pos + neg).map(id).collect(),
    }
}

fn block(miner: u32, tallies: Vec<VoteTally>, vrewards: &[(u32, u64)], mreward: u64) -> Block {
    Block::unsealed(
        1,
        id(miner),
        ZERO_HASH,
        ZERO_HASH,
        tallies,
        mreward,
        vrewards.iter().map(|(v, r)| (id(*v), *r)).collect(),
    )
}

fn workers(ids: &[u32]) -> BTreeSet<DeviceId> {
    ids.iter().copied().map(id).collect()
}

#[test]
fn worker_reward_examples() {
    assert_eq!(worker_reward(5, 3000, 2, 1, 1), 15000);
    assert_eq!(worker_reward(5, 3000, 0, 3, 1), 0);
    assert_eq!(worker_reward(5, 3000, 2, 2, 1), 15000);
}

#[test]
fn validator_reward_examples() {
    assert_eq!(validator_reward(12, 12, 1), Ok(24));
    assert_eq!(validator_reward(12, 11, 1), Ok(23));
    assert_eq!(validator_reward(0, 0, 1), Ok(0));
    assert_eq!(
        validator_reward(3, 4, 1),
        Err(RewardError::MoreVotesThanVerified { verified: 3, votes: 4 })
    );
}

#[test]
fn miner_reward_examples() {
    assert_eq!(miner_reward(60, 1), 60);
    assert_eq!(miner_reward(0, 1), 0);
    assert_eq!(miner_reward(7, 3), 21);
}

#[test]
fn worked_example_credits_w1_and_flags_w2() {
    let s = signer();
    let b = block(
        3,
        vec![tally(&s, 1, 2, 1, 15000), tally(&s, 2, 0, 3, 15000)],
        &[(10, 4), (11, 4), (12, 4)],
        6,
    );
    let mut l = StakeLedger::new(1, 6);
    let out = l.apply_block(&b, &workers(&[1, 2]));
    assert_eq!(l.stake(id(1)), 15000);
    assert_eq!(l.stake(id(2)), 0);
    assert_eq!(l.flag_streak(id(2)), 1);
    assert_eq!(out.flagged, workers(&[2]));
    assert_eq!(out.accepted, workers(&[1]));
    assert_eq!(l.stake(id(10)), 4);
    assert_eq!(
        l.earnings(id(3)),
        Earnings {
            worker: 0,
            validator: 0,
            miner: 6
        }
    );
    assert_eq!(out.events, vec![(id(2), LedgerEvent::Flagged)]);
}

#[test]
fn reward_is_recomputed_not_trusted() {
    let s = signer();
    let b = block(3, vec![tally(&s, 1, 3, 0, 99_999)], &[], 0);
    let mut l = StakeLedger::new(1, 6);
    let out = l.apply_block(&b, &workers(&[1]));
    assert_eq!(l.stake(id(1)), 0);
    assert_eq!(out.misreported, workers(&[1]));
    assert_eq!(l.flag_streak(id(1)), 1);
    assert!(out.accepted.is_empty());
}

fn flagged_round(l: &mut StakeLedger, s: &Signer, w: u32) -> BlockOutcome {
    l.apply_block(&block(3, vec![tally(s, w, 0, 2, 15000)], &[], 0), &workers(&[w]))
}

fn clean_round(l: &mut StakeLedger, s: &Signer, w: u32) -> BlockOutcome {
    l.apply_block(&block(3, vec![tally(s, w, 2, 0, 15000)], &[], 0), &workers(&[w]))
}

fn idle_round(l: &mut StakeLedger, w: u32) -> BlockOutcome {
    // `w` serves as validator: paid, but its streak must not move.
    l.apply_block(&block(3, vec![], &[(w, 2)], 0), &BTreeSet::new())
}

#[test]
fn sixth_consecutive_flagged_worker_round_blacklists() {
    let s = signer();
    let mut l = StakeLedger::new(1, 6);
    for k in 1..=5 {
        let out = flagged_round(&mut l, &s, 7);
        assert!(out.newly_blacklisted.is_empty(), "blacklisted early at {k}");
        assert_eq!(l.flag_streak(id(7)), k);
        idle_round(&mut l, 7);
        assert_eq!(l.flag_streak(id(7)), k, "non-worker round moved the streak");
    }
    let out = flagged_round(&mut l, &s, 7);
    assert_eq!(out.newly_blacklisted, workers(&[7]));
    assert!(l.is_blacklisted(id(7)));
    assert_eq!(out.events.last(), Some(&(id(7), LedgerEvent::Blacklisted)));

    // Frozen afterwards.
    let before = l.stake(id(7));
    idle_round(&mut l, 7);
    clean_round(&mut l, &s, 7);
    assert_eq!(l.stake(id(7)), before);
}

#[test]
fn one_clean_worker_round_resets_the_streak() {
    let s = signer();
    let mut l = StakeLedger::new(1, 6);
    for _ in 0..5 {
        flagged_round(&mut l, &s, 7);
    }
    let out = clean_round(&mut l, &s, 7);
    assert_eq!(l.flag_streak(id(7)), 0);
    assert_eq!(out.events, vec![(id(7), LedgerEvent::StreakReset)]);
    for _ in 0..5 {
        flagged_round(&mut l, &s, 7);
    }
    assert!(!l.is_blacklisted(id(7)));
    flagged_round(&mut l, &s, 7);
    assert!(l.is_blacklisted(id(7)));
}

#[test]
fn unvoted_worker_is_neither_flagged_nor_paid() {
    let s = signer();
    let mut l = StakeLedger::new(1, 6);
    flagged_round(&mut l, &s, 7);
    let out = l.apply_block(&block(3, vec![tally(&s, 7, 0, 0, 15000)], &[], 0), &workers(&[7]));
    assert!(out.flagged.is_empty() && out.accepted.is_empty());
    assert_eq!(l.stake(id(7)), 0);
    assert_eq!(l.flag_streak(id(7)), 0);
}

#[derive(Debug, Clone)]
struct RandomTally {
    worker: u32,
    pos: u32,
    neg: u32,
    honest: bool,
}

fn random_block() -> impl Strategy<Value = (Vec<RandomTally>, Vec<(u32, u64)>, u64, u32)> {
    (
        prop::collection::btree_map(0u32..8, (0u32..4, 0u32..4, prop::bool::weighted(0.9)), 0..6),
        prop::collection::btree_map(8u32..14, 0u64..30, 0..4),
        0u64..60,
        14u32..17,
    )
        .prop_map(|(t, v, m, miner)| {
            (
                t.into_iter()
                    .map(|(worker, (pos, neg, honest))| RandomTally {
                        worker,
                        pos,
                        neg,
                        honest,
                    })
                    .collect(),
                v.into_iter().collect(),
                m,
                miner,
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Stake never decreases, every credit is a recorded qualified reward,
    /// and a replay of the formulas predicts the ledger exactly.
    #[test]
    fn ledger_matches_reward_replay(rounds in prop::collection::vec(random_block(), 1..12)) {
        let s = signer();
        let mut l = StakeLedger::new(2, 3);
        let mut expect: BTreeMap<DeviceId, u64> = BTreeMap::new();
        for (tallies, vr, mr, miner) in rounds {
            let bl = l.blacklist().clone();
            let ts: Vec<_> = tallies
                .iter()
                .map(|t| tally(&s, t.worker, t.pos, t.neg, if t.honest { 5 * 3000 * 2 } else { 1 }))
                .collect();
            let b = block(miner, ts, &vr, mr);
            let w: BTreeSet<_> = tallies.iter().map(|t| id(t.worker)).collect();
            let prior: Vec<_> = (0..20).map(|i| l.stake(id(i))).collect();
            l.apply_block(&b, &w);
            for t in &tallies {
                if t.honest && t.pos + t.neg > 0 && t.pos >= t.neg && !bl.contains(&id(t.worker)) {
                    *expect.entry(id(t.worker)).or_default() += worker_reward(5, 3000, t.pos, t.neg, 2);
                }
            }
            for (v, r) in &vr {
                if !bl.contains(&id(*v)) {
                    *expect.entry(id(*v)).or_default() += r;
                }
            }
            if !bl.contains(&id(miner)) {
                *expect.entry(id(miner)).or_default() += mr;
            }
            for i in 0..20 {
                prop_assert!(l.stake(id(i)) >= prior[i as usize]);
                prop_assert_eq!(l.stake(id(i)), expect.get(&id(i)).copied().unwrap_or(0));
            }
        }
    }

    /// A device is blacklisted exactly when its streak reaches kick_r.
    #[test]
    fn blacklist_exactly_at_kick_r(pattern in prop::collection::vec(0u8..3, 1..40), kick in 1u32..7) {
        let s = signer();
        let mut l = StakeLedger::new(1, kick);
        let mut streak = 0;
        let mut listed = false;
        for p in pattern {
            match p {
                0 => { flagged_round(&mut l, &s, 7); }
                1 => { clean_round(&mut l, &s, 7); }
                _ => { idle_round(&mut l, 7); }
            }
            if !listed {
                match p { 0 => streak += 1, 1 => streak = 0, _ => {} }
                if streak >= kick { listed = true; }
            }
            prop_assert_eq!(l.is_blacklisted(id(7)), listed);
        }
    }
}
