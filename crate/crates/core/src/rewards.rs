//! Reward formulas, the per-device stake ledger, worker flagging and
//! blacklisting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use crate::protocol::{Block, VoteTally};
use crate::DeviceId;

/// Number of consecutive flagged worker rounds after which a device is
/// blacklisted.
pub const DEFAULT_KICK_R: u32 = 6;
pub const DEFAULT_UNIT_REWARD: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("{votes} votes cast on only {verified} verified transactions")]
    MoreVotesThanVerified { verified: u64, votes: u64 },
}

/// Worker reward: proportional to samples processed, granted only when the
/// update has at least as many Positive as Negative votes.
pub fn worker_reward(epochs: u32, train_size: u64, positives: u32, negatives: u32, unit: u64) -> u64 {
    if positives >= negatives {
        u64::from(epochs).saturating_mul(train_size).saturating_mul(unit)
    } else {
        0
    }
}

/// Validator reward: one unit per verified worker transaction plus one per
/// vote cast.
pub fn validator_reward(n_verified_tx: u64, n_votes: u64, unit: u64) -> Result<u64, RewardError> {
    if n_votes > n_verified_tx {
        return Err(RewardError::MoreVotesThanVerified {
            verified: n_verified_tx,
            votes: n_votes,
        });
    }
    Ok((n_verified_tx + n_votes).saturating_mul(unit))
}

/// Miner reward: one unit per verified validator transaction.
pub fn miner_reward(n_verified_vtx: u64, unit: u64) -> u64 {
    n_verified_vtx.saturating_mul(unit)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LedgerEvent {
    Flagged,
    StreakReset,
    Blacklisted,
}

impl LedgerEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            LedgerEvent::Flagged => "FLAGGED",
            LedgerEvent::StreakReset => "STREAK_RESET",
            LedgerEvent::Blacklisted => "BLACKLISTED",
        }
    }
}

/// Stake split by the duty it was earned for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Earnings {
    pub worker: u64,
    pub validator: u64,
    pub miner: u64,
}

impl Earnings {
    pub fn total(&self) -> u64 {
        self.worker + self.validator + self.miner
    }
}

/// Effects of applying one block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockOutcome {
    /// Workers whose update enters the next global model.
    pub accepted: BTreeSet<DeviceId>,
    pub flagged: BTreeSet<DeviceId>,
    /// Flagged because the self-reported reward was wrong.
    pub misreported: BTreeSet<DeviceId>,
    pub newly_blacklisted: BTreeSet<DeviceId>,
    /// Stake credited this block, per device.
    pub credited: BTreeMap<DeviceId, u64>,
    /// In device order within each kind: flags, then resets, then blacklistings.
    pub events: Vec<(DeviceId, LedgerEvent)>,
}

/// One device's replica of everyone's stake and flag state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StakeLedger {
    earnings: BTreeMap<DeviceId, Earnings>,
    flag_streak: BTreeMap<DeviceId, u32>,
    blacklist: BTreeSet<DeviceId>,
    unit_reward: u64,
    kick_r: u32,
}

impl Default for StakeLedger {
    fn default() -> Self {
        StakeLedger::new(DEFAULT_UNIT_REWARD, DEFAULT_KICK_R)
    }
}

impl StakeLedger {
    pub fn new(unit_reward: u64, kick_r: u32) -> Self {
        StakeLedger {
            earnings: BTreeMap::new(),
            flag_streak: BTreeMap::new(),
            blacklist: BTreeSet::new(),
            unit_reward,
            kick_r: kick_r.max(1),
        }
    }

    pub fn unit_reward(&self) -> u64 {
        self.unit_reward
    }

    pub fn kick_r(&self) -> u32 {
        self.kick_r
    }

    pub fn stake(&self, device: DeviceId) -> u64 {
        self.earnings(device).total()
    }

    pub fn earnings(&self, device: DeviceId) -> Earnings {
        self.earnings.get(&device).copied().unwrap_or_default()
    }

    pub fn flag_streak(&self, device: DeviceId) -> u32 {
        self.flag_streak.get(&device).copied().unwrap_or(0)
    }

    pub fn blacklist(&self) -> &BTreeSet<DeviceId> {
        &self.blacklist
    }

    pub fn is_blacklisted(&self, device: DeviceId) -> bool {
        self.blacklist.contains(&device)
    }

    /// Stake of every device that has earned anything.
    pub fn stakes(&self) -> impl Iterator<Item = (DeviceId, u64)> + '_ {
        self.earnings.iter().map(|(d, e)| (*d, e.total()))
    }

    fn credit(&mut self, device: DeviceId, amount: u64, kind: fn(&mut Earnings) -> &mut u64, out: &mut BlockOutcome) {
        // Blacklisted stake is frozen, not zeroed.
        if amount == 0 || self.blacklist.contains(&device) {
            return;
        }
        let e = self.earnings.entry(device).or_default();
        let slot = kind(e);
        *slot = slot.saturating_add(amount);
        *out.credited.entry(device).or_default() += amount;
    }

    /// The reward a tally earns its worker, or `None` if the worker must be
    /// flagged. Zero-vote tallies earn nothing and flag nobody.
    fn judge(&self, t: &VoteTally) -> Judgement {
        if t.positives == 0 && t.negatives == 0 {
            return Judgement::Unvoted;
        }
        if !t.qualified() {
            return Judgement::Rejected;
        }
        let tx = &t.worker_tx;
        let due = worker_reward(tx.epochs, tx.train_size, t.positives, t.negatives, self.unit_reward);
        if tx.expected_reward != due {
            return Judgement::Misreported;
        }
        Judgement::Accepted(due)
    }

    /// Applies the round's legitimate block. `workers` is the set of devices
    /// that served as worker this round; only their flag streaks move.
    pub fn apply_block(&mut self, block: &Block, workers: &BTreeSet<DeviceId>) -> BlockOutcome {
        let mut out = BlockOutcome::default();
        for t in &block.tallies {
            let w = t.worker();
            match self.judge(t) {
                Judgement::Accepted(r) => {
                    self.credit(w, r, |e| &mut e.worker, &mut out);
                    out.accepted.insert(w);
                }
                Judgement::Rejected => {
                    out.flagged.insert(w);
                }
                Judgement::Misreported => {
                    out.flagged.insert(w);
                    out.misreported.insert(w);
                }
                Judgement::Unvoted => {}
            }
        }
        for (v, r) in &block.validator_rewards {
            self.credit(*v, *r, |e| &mut e.validator, &mut out);
        }
        self.credit(block.miner, block.miner_reward, |e| &mut e.miner, &mut out);

        let mut resets = Vec::new();
        let mut kicked = Vec::new();
        let subjects: BTreeSet<DeviceId> = workers.union(&out.flagged).copied().collect();
        for w in subjects {
            if self.blacklist.contains(&w) {
                continue;
            }
            if out.flagged.contains(&w) {
                let s = self.flag_streak.entry(w).or_default();
                *s += 1;
                out.events.push((w, LedgerEvent::Flagged));
                if *s >= self.kick_r {
                    kicked.push(w);
                }
            } else if self.flag_streak.get(&w).is_some_and(|s| *s > 0) {
                self.flag_streak.insert(w, 0);
                resets.push(w);
            }
        }
        out.events
            .extend(resets.into_iter().map(|d| (d, LedgerEvent::StreakReset)));
        for d in kicked {
            self.blacklist.insert(d);
            out.newly_blacklisted.insert(d);
            out.events.push((d, LedgerEvent::Blacklisted));
        }
        out
    }
}

enum Judgement {
    Accepted(u64),
    Rejected,
    Misreported,
    Unvoted,
}
