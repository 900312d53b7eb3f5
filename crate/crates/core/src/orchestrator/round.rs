use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use super::config::{ConsensusKind, Role};
use super::metrics::{
    DeviceFailure, DeviceStake, InvariantKind, InvariantViolation, RoundMetrics, RoundTrace, SkipReason,
};
use super::setup::{assign_roles, associate};
use super::{SimError, Simulation};
use crate::consensus::{mine_nonce, pos_select, pow_race, ConsensusError, MinerState};
use crate::learning::{evaluate, fedavg, inject_gaussian_noise, local_train, ModelParams};
use crate::protocol::{model_hash, Block, Hash, ValidatorTransaction, WorkerTransaction};
use crate::rewards::{worker_reward, BlockOutcome, StakeLedger};
use crate::validation::{malicious_flip, VadRecord, ValidatorState};
use crate::DeviceId;

/// Upper bound on nonce attempts in literal mining mode.
const MAX_NONCE_ATTEMPTS: u64 = 1 << 32;

impl Simulation {
    fn union_blacklist(&self) -> BTreeSet<DeviceId> {
        self.devices
            .iter()
            .flat_map(|d| d.ledger.blacklist().iter().copied())
            .collect()
    }

    /// Lowest-id device that nobody has blacklisted; falls back to the
    /// lowest id overall.
    fn reporter(&self, blacklist: &BTreeSet<DeviceId>) -> usize {
        self.devices
            .iter()
            .position(|d| !blacklist.contains(&d.id))
            .unwrap_or(0)
    }

    fn mean_accuracy(&self, blacklist: &BTreeSet<DeviceId>) -> Result<f64, SimError> {
        // Devices in agreement share both the model and the test set, so
        // each distinct pair is evaluated once.
        let mut cache: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let (mut sum, mut n) = (0.0, 0usize);
        for d in self.devices.iter().filter(|d| !blacklist.contains(&d.id)) {
            let key = (Arc::as_ptr(&d.global) as usize, Arc::as_ptr(&d.test) as usize);
            let acc = match cache.get(&key) {
                Some(a) => *a,
                None => {
                    let a = evaluate(&d.global, &d.test).map_err(SimError::learn(d.id))?;
                    cache.insert(key, a);
                    a
                }
            };
            sum += acc;
            n += 1;
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    fn stakes(&self, view: &StakeLedger) -> Vec<DeviceStake> {
        self.devices
            .iter()
            .map(|d| DeviceStake {
                device: d.id,
                earnings: view.earnings(d.id),
                malicious: d.malicious,
                blacklisted: view.is_blacklisted(d.id),
            })
            .collect()
    }

    fn empty_metrics(&self, consensus: &'static str) -> RoundMetrics {
        RoundMetrics {
            round: self.round,
            consensus,
            skipped: None,
            winner: None,
            winner_malicious: false,
            forked: false,
            global_accuracy: 0.0,
            roles: BTreeMap::new(),
            shrunk_roles: None,
            stakes: Vec::new(),
            vad: Vec::new(),
            events: Vec::new(),
            failures: Vec::new(),
            trace: None,
        }
    }

    /// Trains `id`'s local update from its current global model, adding
    /// noise when it is a noise-injecting malicious worker.
    fn train_update(&mut self, idx: usize) -> Result<ModelParams, SimError> {
        let spec = self.config.train;
        let noisy = self.config.behaviors.worker_noise;
        let variance = self.config.noise_variance;
        let d = &mut self.devices[idx];
        let update = local_train(&d.global, &d.train, &spec, &mut d.batches).map_err(SimError::learn(d.id))?;
        if d.malicious && noisy {
            return inject_gaussian_noise(&update, variance, &mut d.noise).map_err(SimError::learn(d.id));
        }
        Ok(update)
    }

    pub(super) fn vanilla_round(&mut self) -> Result<RoundMetrics, SimError> {
        let mut updates = Vec::with_capacity(self.devices.len());
        for i in 0..self.devices.len() {
            updates.push((self.train_update(i)?, self.devices[i].train.len() as f64));
        }
        let refs: Vec<_> = updates.iter().map(|(u, w)| (u, *w)).collect();
        let g = Arc::new(fedavg(&refs).map_err(SimError::learn(DeviceId::GENESIS))?);
        for d in &mut self.devices {
            d.global = g.clone();
        }
        let mut m = self.empty_metrics("NONE");
        m.roles = self.devices.iter().map(|d| (d.id, Role::Worker)).collect();
        m.global_accuracy = self.mean_accuracy(&BTreeSet::new())?;
        m.stakes = self.stakes(&StakeLedger::new(self.config.unit_reward, self.config.kick_r));
        Ok(m)
    }

    fn delay(&mut self) -> f64 {
        let n = self.config.network;
        if n.jitter > 0.0 {
            n.link_delay + n.jitter * self.net_rng.random::<f64>()
        } else {
            n.link_delay
        }
    }

    pub(super) fn vbfl_round(&mut self) -> Result<RoundMetrics, SimError> {
        let j = self.round;
        let unit = self.config.unit_reward;
        let mut metrics = self.empty_metrics(self.config.consensus.label());

        // Roles and association.
        let excluded = self.union_blacklist();
        let eligible: Vec<DeviceId> = self
            .devices
            .iter()
            .map(|d| d.id)
            .filter(|d| !excluded.contains(d))
            .collect();
        let assignment = assign_roles(
            j,
            self.config.role_counts,
            &self.config.role_policy,
            &eligible,
            &mut self.roles_rng,
        );
        let workers = assignment.with_role(Role::Worker);
        let validators = assignment.with_role(Role::Validator);
        let miners = assignment.with_role(Role::Miner);
        metrics.roles = assignment.roles.clone();
        metrics.shrunk_roles = assignment.shrunk;
        let Some(assoc) = associate(&workers, &validators, &miners, &mut self.assoc_rng) else {
            metrics.skipped = Some(if validators.is_empty() {
                SkipReason::NoValidators
            } else {
                SkipReason::NoMiners
            });
            let view = self.reporter(&excluded);
            metrics.global_accuracy = self.mean_accuracy(&excluded)?;
            metrics.stakes = self.stakes(&self.devices[view].ledger);
            return Ok(metrics);
        };

        // Local learning and worker transactions.
        let mut worker_txs = Vec::with_capacity(workers.len());
        for &w in &workers {
            let idx = self.index_of(w).expect("assigned devices exist");
            let update = self.train_update(idx)?;
            let epochs = self.config.train.epochs;
            let size = self.devices[idx].train.len() as u64;
            let expected = worker_reward(epochs, size, 1, 0, unit);
            let tx = WorkerTransaction::new_signed(j, w, update, epochs, size, expected, &self.signer)?;
            worker_txs.push(Arc::new(tx));
        }

        // Each worker sends to its validator, which re-broadcasts to every
        // other validator: every validator ends up holding every worker
        // transaction, and votes once on each that verifies.
        let mut vtxs: Vec<ValidatorTransaction> = Vec::new();
        for &v in &validators {
            let idx = self.index_of(v).expect("assigned devices exist");
            let threshold = self.config.threshold_for(v);
            let flip = self.config.behaviors.validator_flip;
            let d = &mut self.devices[idx];
            let mut state = ValidatorState::new(v, threshold, self.config.validation_scheme, unit, &d.train, &d.test);
            state
                .pretrain_one_epoch(&d.global, &self.config.train, &mut d.batches)
                .map_err(SimError::validation(v))?;
            let mut seen = BTreeSet::new();
            for tx in &worker_txs {
                if !seen.insert(tx.worker) || !tx.verify(&self.signer) {
                    continue;
                }
                let verdict = state.validate_by_voting(&tx.update).map_err(SimError::validation(v))?;
                let vote = if d.malicious && flip {
                    malicious_flip(verdict.vote)
                } else {
                    verdict.vote
                };
                metrics.vad.push(VadRecord {
                    round: j,
                    validator: v,
                    worker: tx.worker,
                    vad: verdict.vad,
                    vote,
                    worker_malicious: self.config.malicious.contains(&tx.worker),
                });
                vtxs.push(ValidatorTransaction::new_signed(
                    v,
                    tx.clone(),
                    vote,
                    unit,
                    verdict.vali_reward,
                    &self.signer,
                )?);
            }
        }

        // Validators send to their miner, which re-broadcasts to every other
        // miner. Each miner verifies what it received and builds a candidate
        // on its own tip.
        let verified: Vec<&ValidatorTransaction> = vtxs.iter().filter(|t| t.verify(&self.signer)).collect();
        let mut states: BTreeMap<DeviceId, MinerState> = BTreeMap::new();
        let mut candidates: BTreeMap<DeviceId, Arc<Block>> = BTreeMap::new();
        let pow = match &self.config.consensus {
            ConsensusKind::Pow(p) => Some(p.clone()),
            ConsensusKind::Pos => None,
        };
        for &m in &miners {
            let idx = self.index_of(m).expect("assigned devices exist");
            let mut st = MinerState::new(m, self.config.network.block_wait);
            st.received_vtx = verified.iter().map(|t| (*t).clone()).collect();
            let d = &self.devices[idx];
            let (mut block, _) =
                st.build_candidate(j, d.chain.tip_hash(), model_hash(&d.global), unit, &self.signer)?;
            if let Some(p) = pow.as_ref().filter(|p| p.literal_nonce) {
                let mined = mine_nonce((*block).clone(), p.difficulty, MAX_NONCE_ATTEMPTS, &self.signer)?
                    .expect("nonce space exhausted below difficulty 8");
                block = Arc::new(mined);
                st.candidate = Some(block.clone());
            }
            candidates.insert(m, block);
            states.insert(m, st);
        }

        // Legitimate-block selection, per miner.
        let mut selected: BTreeMap<DeviceId, Arc<Block>> = BTreeMap::new();
        match &pow {
            None => {
                for &m in &miners {
                    let mut propagated = Vec::new();
                    for (&sender, block) in &candidates {
                        if sender != m {
                            propagated.push((block.clone(), self.delay()));
                        }
                    }
                    let idx = self.index_of(m).expect("assigned devices exist");
                    let ledger = &self.devices[idx].ledger;
                    let st = states.get_mut(&m).expect("state per miner");
                    let received = st.collect_blocks(propagated, ledger.blacklist());
                    match pos_select(received, ledger) {
                        Ok(b) => {
                            selected.insert(m, b.clone());
                        }
                        Err(e) => metrics.failures.push(DeviceFailure::Select(m, e)),
                    }
                }
            }
            Some(p) => {
                let race = pow_race(p, &miners.iter().copied().collect(), &mut self.pow_rng)?;
                // A miner stops on the first solution it sees: its own, or a
                // propagated one arriving earlier.
                for &m in &miners {
                    let idx = self.index_of(m).expect("assigned devices exist");
                    let mut best: Option<(f64, DeviceId)> = None;
                    for (&sender, &t) in &race.mining_times {
                        let arrival = if sender == m { t } else { t + self.delay() };
                        if self.devices[idx].ledger.is_blacklisted(sender) {
                            continue;
                        }
                        if best.is_none_or(|b| (arrival, sender) < b) {
                            best = Some((arrival, sender));
                        }
                    }
                    match best {
                        Some((_, s)) => {
                            selected.insert(m, candidates[&s].clone());
                        }
                        None => metrics
                            .failures
                            .push(DeviceFailure::Select(m, ConsensusError::AllBlacklisted)),
                    }
                }
            }
        }
        let distinct: BTreeSet<Hash> = selected.values().map(|b| b.content_hash).collect();
        metrics.forked = distinct.len() > 1;

        // Every device downloads the block its miner selected, appends it,
        // and applies it to its ledger and global model.
        let worker_set: BTreeSet<DeviceId> = workers.iter().copied().collect();
        let source_of = |d: DeviceId| -> DeviceId {
            match assignment.roles.get(&d) {
                Some(Role::Miner) => d,
                Some(Role::Validator) => assoc.validator_to_miner[&d],
                Some(Role::Worker) => assoc.validator_to_miner[&assoc.worker_to_validator[&d]],
                None => miners[0],
            }
        };
        let mut new_models: BTreeMap<Hash, Option<Arc<ModelParams>>> = BTreeMap::new();
        let mut outcomes: BTreeMap<DeviceId, BlockOutcome> = BTreeMap::new();
        let mut before: BTreeMap<DeviceId, StakeLedger> = BTreeMap::new();
        let mut appended: BTreeMap<DeviceId, Arc<Block>> = BTreeMap::new();
        for idx in 0..self.devices.len() {
            let id = self.devices[idx].id;
            let Some(block) = selected.get(&source_of(id)).cloned() else {
                continue;
            };
            let d = &mut self.devices[idx];
            let blacklist = d.ledger.blacklist().clone();
            if let Err(e) = d.chain.append(block.clone(), &self.signer, &blacklist) {
                metrics.failures.push(DeviceFailure::Append(id, e));
                continue;
            }
            let prior = d.ledger.clone();
            let outcome = d.ledger.apply_block(&block, &worker_set);
            check_block_application(j, id, &block, &prior, &d.ledger, &outcome)?;

            let g = match new_models.get(&block.content_hash) {
                Some(g) => g.clone(),
                None => {
                    let g = aggregate_accepted(&block, &outcome).map_err(SimError::learn(id))?;
                    new_models.insert(block.content_hash, g.clone());
                    g
                }
            };
            if let Some(g) = g {
                d.global = g;
            }
            appended.insert(id, block);
            outcomes.insert(id, outcome);
            if self.config.trace {
                before.insert(id, prior);
            }
        }

        let after = self.union_blacklist();
        let view = self.reporter(&after);
        let view_id = self.devices[view].id;
        if let Some(b) = appended.get(&view_id) {
            metrics.winner = Some(b.miner);
            metrics.winner_malicious = self.config.malicious.contains(&b.miner);
        }
        if let Some(o) = outcomes.remove(&view_id) {
            metrics.events = o.events;
        }
        metrics.global_accuracy = self.mean_accuracy(&after)?;
        metrics.stakes = self.stakes(&self.devices[view].ledger);
        if self.config.trace {
            let mut received_vtx = BTreeMap::new();
            for (m, st) in states {
                received_vtx.insert(m, st.received_vtx);
            }
            metrics.trace = Some(RoundTrace {
                workers: worker_set,
                worker_txs,
                received_vtx,
                candidates,
                reporter: view_id,
                ledger_before: before
                    .remove(&view_id)
                    .unwrap_or_else(|| self.devices[view].ledger.clone()),
                ledger_after: self.devices[view].ledger.clone(),
                appended,
            });
        }
        Ok(metrics)
    }
}

/// `G_j` from the updates the block accepted, weighted by training-set
/// size; `None` when nothing was accepted (the device keeps `G_{j-1}`).
fn aggregate_accepted(
    block: &Block,
    outcome: &BlockOutcome,
) -> Result<Option<Arc<ModelParams>>, crate::learning::LearnError> {
    let accepted: Vec<(&ModelParams, f64)> = block
        .tallies
        .iter()
        .filter(|t| outcome.accepted.contains(&t.worker()))
        .map(|t| (t.update(), t.worker_tx.train_size as f64))
        .collect();
    if accepted.is_empty() {
        return Ok(None);
    }
    fedavg(&accepted).map(|g| Some(Arc::new(g)))
}

fn check_block_application(
    round: u64,
    device: DeviceId,
    block: &Block,
    prior: &StakeLedger,
    post: &StakeLedger,
    outcome: &BlockOutcome,
) -> Result<(), InvariantViolation> {
    let fail = |kind| InvariantViolation { round, device, kind };
    let banned = prior.blacklist();
    let participants = core::iter::once(block.miner)
        .chain(block.tallies.iter().flat_map(|t| t.voters.iter().copied()))
        .chain(outcome.credited.keys().copied());
    if participants.into_iter().any(|d| banned.contains(&d)) {
        return Err(fail(InvariantKind::BlacklistedParticipant));
    }
    for (d, s) in prior.stakes() {
        if post.stake(d) < s {
            return Err(fail(InvariantKind::StakeDecreased));
        }
    }
    // Everything credited must be a reward the block itself records.
    let unit = prior.unit_reward();
    let recorded: u64 = block
        .tallies
        .iter()
        .filter(|t| outcome.accepted.contains(&t.worker()))
        .map(|t| {
            worker_reward(
                t.worker_tx.epochs,
                t.worker_tx.train_size,
                t.positives,
                t.negatives,
                unit,
            )
        })
        .chain(block.validator_rewards.values().copied())
        .chain(core::iter::once(block.miner_reward))
        .sum();
    let credited: u64 = outcome.credited.values().sum();
    let gained: u64 = post.stakes().map(|(_, s)| s).sum::<u64>() - prior.stakes().map(|(_, s)| s).sum::<u64>();
    if credited != recorded || gained != credited {
        return Err(fail(InvariantKind::StakeNotConserved));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::Arch;
    use crate::protocol::{SignatureMode, Signer, VoteTally, ZERO_HASH};
    use alloc::vec;

    fn ids() -> (DeviceId, DeviceId, DeviceId) {
        (
            DeviceId::from_index(0),
            DeviceId::from_index(1),
            DeviceId::from_index(2),
        )
    }

    fn block(positives: u32, negatives: u32, miner: DeviceId) -> Block {
        let (w, v, _) = ids();
        let mut signer = Signer::new(SignatureMode::Stub, false);
        signer.register_derived(w, 1);
        let update = ModelParams::zeros(Arch::Softmax { inputs: 2, classes: 2 }).unwrap();
        let tx = WorkerTransaction::new_signed(1, w, update, 2, 10, 20, &signer).unwrap();
        let tally = VoteTally {
            worker_tx: Arc::new(tx),
            positives,
            negatives,
            voters: BTreeSet::from([v]),
        };
        Block::unsealed(1, miner, ZERO_HASH, ZERO_HASH, vec![tally], 1, BTreeMap::from([(v, 2)]))
    }

    fn apply(ledger: &StakeLedger, b: &Block) -> (StakeLedger, BlockOutcome) {
        let mut post = ledger.clone();
        let out = post.apply_block(b, &BTreeSet::from([ids().0]));
        (post, out)
    }

    #[test]
    fn honest_application_passes() {
        let (_, _, m) = ids();
        let prior = StakeLedger::new(1, 6);
        let b = block(1, 0, m);
        let (post, out) = apply(&prior, &b);
        assert_eq!(post.stake(ids().0), 20);
        check_block_application(1, m, &b, &prior, &post, &out).unwrap();
    }

    #[test]
    fn blacklisted_miner_is_a_violation() {
        let (w, _, m) = ids();
        let kicked = apply(&StakeLedger::new(1, 1), &block(0, 1, m)).0;
        assert!(kicked.is_blacklisted(w));
        let b = block(1, 0, w);
        let (post, out) = apply(&kicked, &b);
        let err = check_block_application(2, m, &b, &kicked, &post, &out).unwrap_err();
        assert_eq!(err.kind, InvariantKind::BlacklistedParticipant);
    }

    #[test]
    fn shrinking_or_unrecorded_stake_is_a_violation() {
        let (_, _, m) = ids();
        let prior = StakeLedger::new(1, 6);
        let b = block(1, 0, m);
        let (post, out) = apply(&prior, &b);
        let err = check_block_application(1, m, &b, &post, &prior, &out).unwrap_err();
        assert_eq!(err.kind, InvariantKind::StakeDecreased);

        let mut inflated = b.clone();
        inflated.miner_reward += 1;
        let err = check_block_application(1, m, &inflated, &prior, &post, &out).unwrap_err();
        assert_eq!(err.kind, InvariantKind::StakeNotConserved);
    }
}
