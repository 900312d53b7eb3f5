use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use vbfl_core::consensus::WaitTime;
use vbfl_core::learning::{BlobSpec, Dataset};
use vbfl_core::orchestrator::{
    assign_roles, associate, run_simulation, run_vanilla_fl, shard_dataset, DatasetSpec, ModelKind, Role, RoleCounts,
    RolePolicy, Sharding, SimConfig, Simulation, SkipReason, TestSplit,
};
use vbfl_core::rewards::LedgerEvent;
use vbfl_core::rng::SimRng;
use vbfl_core::DeviceId;

fn small_task() -> BlobSpec {
    BlobSpec {
        dim: 12,
        classes: 4,
        train_per_class: 50,
        test_per_class: 20,
        separation: 1.0,
        spread: 1.0,
        seed: 5,
    }
}

fn small_config() -> SimConfig {
    SimConfig {
        dataset: DatasetSpec::Blobs(small_task()),
        model: ModelKind::Softmax,
        rounds: 5,
        ..SimConfig::default()
    }
}

fn data() -> Dataset {
    small_task().generate().unwrap()
}

fn ids(n: u32) -> Vec<DeviceId> {
    (0..n).map(DeviceId::from_index).collect()
}

#[test]
fn shards_are_disjoint_and_balanced() {
    let data = data();
    let devices = ids(7);
    let shards = shard_dataset(
        &data,
        &devices,
        Sharding::Iid,
        TestSplit::Shared,
        &mut SimRng::seed_from_u64(1),
    )
    .unwrap();
    let sizes: Vec<usize> = shards.iter().map(|(t, _)| t.len()).collect();
    // 200 examples over 7 devices: the four lowest ids take the remainder.
    assert_eq!(sizes, vec![29, 29, 29, 29, 28, 28, 28]);
    assert_eq!(sizes.iter().sum::<usize>(), data.train.len());
    for (d, (train, test)) in devices.iter().zip(&shards) {
        assert_eq!(train.owner(), Some(*d));
        assert_eq!(test.len(), data.test.len());
    }
    // Disjoint: every training row appears exactly once across shards.
    let mut rows: Vec<Vec<u64>> = shards
        .iter()
        .flat_map(|(t, _)| {
            (0..t.len())
                .map(|i| t.row(i).iter().map(|v| v.to_bits()).collect())
                .collect::<Vec<_>>()
        })
        .collect();
    rows.sort();
    rows.dedup();
    assert_eq!(rows.len(), data.train.len());

    let again = shard_dataset(
        &data,
        &devices,
        Sharding::Iid,
        TestSplit::Shared,
        &mut SimRng::seed_from_u64(1),
    )
    .unwrap();
    assert!(shards.iter().zip(&again).all(|(a, b)| a.0.labels() == b.0.labels()));
}

#[test]
fn label_sorted_shards_see_few_classes_and_disjoint_tests_split() {
    let data = data();
    let shards = shard_dataset(
        &data,
        &ids(8),
        Sharding::LabelSorted,
        TestSplit::Disjoint,
        &mut SimRng::seed_from_u64(2),
    )
    .unwrap();
    for (train, test) in &shards {
        let classes = train.label_counts().iter().filter(|c| **c > 0).count();
        assert!(classes <= 2, "{classes}");
        assert_eq!(test.len(), data.test.len() / 8);
    }
    assert!(shard_dataset(
        &data,
        &ids(500),
        Sharding::Iid,
        TestSplit::Shared,
        &mut SimRng::seed_from_u64(2)
    )
    .is_err());
}

#[test]
fn role_draws_respect_counts_and_vary() {
    let eligible = ids(20);
    let counts = RoleCounts::new(12, 5, 3);
    let mut rng = SimRng::seed_from_u64(3);
    let mut seen = BTreeSet::new();
    for round in 1..=100 {
        let a = assign_roles(round, counts, &RolePolicy::RandomEachRound, &eligible, &mut rng);
        assert_eq!(a.roles.len(), 20);
        assert_eq!(a.with_role(Role::Worker).len(), 12);
        assert_eq!(a.with_role(Role::Validator).len(), 5);
        assert_eq!(a.with_role(Role::Miner).len(), 3);
        assert_eq!(a.shrunk, None);
        seen.insert(a.roles);
    }
    assert!(seen.len() > 1);

    let few = ids(4);
    let a = assign_roles(1, counts, &RolePolicy::RandomEachRound, &few, &mut rng);
    let shrunk = a.shrunk.unwrap();
    assert_eq!(shrunk.total(), 4);
    assert!(shrunk.validators >= 1 && shrunk.miners >= 1);
}

#[test]
fn fixed_sequences_replay_and_drop_ineligible_devices() {
    let d = ids(3);
    let seq = vec![
        BTreeMap::from([(d[0], Role::Worker), (d[1], Role::Validator), (d[2], Role::Miner)]),
        BTreeMap::from([(d[0], Role::Miner), (d[1], Role::Worker), (d[2], Role::Validator)]),
    ];
    let policy = RolePolicy::FixedSequence(seq.clone());
    let mut rng = SimRng::seed_from_u64(0);
    let counts = RoleCounts::new(1, 1, 1);
    assert_eq!(assign_roles(1, counts, &policy, &d, &mut rng).roles, seq[0]);
    assert_eq!(assign_roles(2, counts, &policy, &d, &mut rng).roles, seq[1]);
    assert_eq!(assign_roles(3, counts, &policy, &d, &mut rng).roles, seq[0]);
    let a = assign_roles(1, counts, &policy, &d[1..], &mut rng);
    assert!(!a.roles.contains_key(&d[0]));
    assert_eq!(a.shrunk, Some(RoleCounts::new(0, 1, 1)));
}

#[test]
fn association_targets_exist() {
    let d = ids(10);
    let (w, v, m) = (&d[..5], &d[5..8], &d[8..]);
    let a = associate(w, v, m, &mut SimRng::seed_from_u64(4)).unwrap();
    assert_eq!(a.worker_to_validator.len(), 5);
    assert!(a.worker_to_validator.values().all(|x| v.contains(x)));
    assert_eq!(a.validator_to_miner.len(), 3);
    assert!(a.validator_to_miner.values().all(|x| m.contains(x)));
    assert!(associate(w, &[], m, &mut SimRng::seed_from_u64(4)).is_none());
    assert!(associate(w, v, &[], &mut SimRng::seed_from_u64(4)).is_none());
}

#[test]
fn runs_are_deterministic() {
    let mut c = small_config();
    c.malicious = SimConfig::highest_ids(20, 3);
    c.behaviors.worker_noise = true;
    c.vh = 0.05;
    let (a, ma) = run_simulation(c.clone(), &data()).unwrap();
    let (b, mb) = run_simulation(c, &data()).unwrap();
    assert_eq!(ma, mb);
    for (x, y) in a.devices().iter().zip(b.devices()) {
        assert_eq!(x.chain.tip_hash(), y.chain.tip_hash());
        assert_eq!(x.global, y.global);
    }
}

#[test]
fn benign_network_keeps_every_replica_identical() {
    let c = SimConfig {
        vh: 1.0,
        trace: true,
        ..small_config()
    };
    let data = data();
    let mut sim = Simulation::new(c, &data).unwrap();
    for _ in 0..5 {
        let m = sim.run_round().unwrap();
        assert!(!m.forked);
        assert!(m.failures.is_empty());
        let first = &sim.devices()[0];
        for d in sim.devices() {
            assert_eq!(d.chain.blocks(), first.chain.blocks());
            assert_eq!(d.ledger, first.ledger);
            assert_eq!(d.global, first.global);
        }
        // With vh = 1 and honest validators nobody votes against anything.
        let trace = m.trace.unwrap();
        for block in trace.candidates.values() {
            assert!(block.tallies.iter().all(|t| t.negatives == 0));
            assert_eq!(block.tallies.len(), 12);
        }
        assert_eq!(m.vad.len(), 12 * 5);
    }
    assert_eq!(sim.devices()[0].chain.len(), 6);
    sim.verify_chains().unwrap();
}

#[test]
fn devices_only_read_their_own_training_data() {
    let n = 6;
    let d = ids(n);
    // Device 5 stays idle throughout; 0 always trains.
    let seq = vec![BTreeMap::from([
        (d[0], Role::Worker),
        (d[1], Role::Worker),
        (d[2], Role::Validator),
        (d[3], Role::Miner),
        (d[4], Role::Worker),
    ])];
    let c = SimConfig {
        n_devices: n as usize,
        role_counts: RoleCounts::new(4, 1, 1),
        role_policy: RolePolicy::FixedSequence(seq),
        ..small_config()
    };
    let data = data();
    let mut sim = Simulation::new(c, &data).unwrap();
    sim.run().unwrap();
    let reads = |i: usize| sim.devices()[i].train.reads();
    assert_eq!(reads(5), 0, "an idle device's data was read");
    assert_eq!(reads(3), 0, "a miner's data was read");
    assert!(reads(0) > 0 && reads(2) > 0);
    assert_eq!(data.train.reads(), 0, "the pooled training set was read after sharding");
}

#[test]
fn noise_perturbs_almost_every_parameter() {
    let mut honest = small_config();
    honest.rounds = 1;
    honest.trace = true;
    let mut noisy = honest.clone();
    noisy.malicious = SimConfig::highest_ids(20, 20);
    noisy.behaviors.worker_noise = true;
    let data = data();
    let mut a = Simulation::new(honest, &data).unwrap();
    let mut b = Simulation::new(noisy, &data).unwrap();
    let (ta, tb) = (
        a.run_round().unwrap().trace.unwrap(),
        b.run_round().unwrap().trace.unwrap(),
    );
    for (x, y) in ta.worker_txs.iter().zip(&tb.worker_txs) {
        assert_eq!(x.worker, y.worker);
        let differ = x
            .update
            .values()
            .iter()
            .zip(y.update.values())
            .filter(|(p, q)| p != q)
            .count();
        assert!(
            differ as f64 >= 0.99 * x.update.len() as f64,
            "{differ} of {}",
            x.update.len()
        );
    }
}

#[test]
fn noise_settings_leave_roles_and_shards_alone() {
    let base = SimConfig {
        malicious: SimConfig::highest_ids(20, 3),
        vh: 1.0,
        ..small_config()
    };
    let mut other = base.clone();
    other.behaviors.worker_noise = true;
    other.noise_variance = 4.0;
    let data = data();
    let (a, ma) = run_simulation(base, &data).unwrap();
    let (b, mb) = run_simulation(other, &data).unwrap();
    for (x, y) in ma.iter().zip(&mb) {
        assert_eq!(x.roles, y.roles);
    }
    for (x, y) in a.devices().iter().zip(b.devices()) {
        assert_eq!(x.train.labels(), y.train.labels());
    }
    assert_ne!(ma.last().unwrap().global_accuracy, mb.last().unwrap().global_accuracy);
}

#[test]
fn rounds_without_an_eligible_miner_are_skipped() {
    let d = ids(4);
    // Device 3 is flagged in round 1 (kick_r = 1) and is the only miner in
    // round 2.
    let seq = vec![
        BTreeMap::from([
            (d[0], Role::Worker),
            (d[3], Role::Worker),
            (d[1], Role::Validator),
            (d[2], Role::Miner),
        ]),
        BTreeMap::from([
            (d[0], Role::Worker),
            (d[1], Role::Validator),
            (d[2], Role::Worker),
            (d[3], Role::Miner),
        ]),
    ];
    let mut c = small_config();
    c.n_devices = 4;
    c.role_counts = RoleCounts::new(2, 1, 1);
    c.role_policy = RolePolicy::FixedSequence(seq);
    c.malicious = BTreeSet::from([d[3]]);
    c.behaviors.worker_noise = true;
    c.noise_variance = 100.0;
    c.vh = 0.0;
    c.kick_r = 1;
    c.rounds = 2;
    let (sim, m) = run_simulation(c, &data()).unwrap();
    assert!(m[0].events.contains(&(d[3], LedgerEvent::Blacklisted)));
    assert_eq!(m[1].skipped, Some(SkipReason::NoMiners));
    assert_eq!(m[1].winner, None);
    assert!(!m[1].roles.contains_key(&d[3]));
    for dev in sim.devices() {
        assert_eq!(dev.chain.len(), 2, "no block in the skipped round");
    }
}

#[test]
fn zero_rounds_leave_genesis_only() {
    let c = SimConfig {
        rounds: 0,
        ..small_config()
    };
    let (sim, m) = run_simulation(c, &data()).unwrap();
    assert!(m.is_empty());
    assert!(sim
        .devices()
        .iter()
        .all(|d| d.chain.len() == 1 && d.chain.blocks()[0].is_genesis()));
}

#[test]
fn vanilla_baseline_has_no_chain_activity() {
    let m = run_vanilla_fl(small_config(), &data()).unwrap();
    assert_eq!(m.len(), 5);
    for r in &m {
        assert_eq!(r.consensus, "NONE");
        assert_eq!(r.winner, None);
        assert_eq!(r.roles.len(), 20);
        assert!(r.stakes.iter().all(|s| s.stake() == 0));
    }
    assert!(m.last().unwrap().global_accuracy > 0.5);
}

#[test]
fn delayed_blocks_with_a_finite_wait_fork_the_network() {
    let mut c = small_config();
    c.rounds = 12;
    c.vh = 1.0;
    c.network.jitter = 4.0;
    c.network.block_wait = WaitTime::Finite(1.0);
    let (sim, m) = run_simulation(c, &data()).unwrap();
    assert!(m.iter().any(|r| r.forked));
    // Divergent replicas keep valid chains of their own.
    sim.verify_chains().unwrap();
    let tips: BTreeSet<_> = sim.devices().iter().map(|d| d.chain.tip_hash()).collect();
    assert!(tips.len() > 1);
}

#[test]
fn stakes_never_decrease() {
    let mut c = small_config();
    c.rounds = 8;
    c.malicious = SimConfig::highest_ids(20, 3);
    c.behaviors.worker_noise = true;
    c.vh = 0.05;
    let (_, m) = run_simulation(c, &data()).unwrap();
    for w in m.windows(2) {
        for (a, b) in w[0].stakes.iter().zip(&w[1].stakes) {
            assert_eq!(a.device, b.device);
            assert!(b.stake() >= a.stake());
        }
    }
}

#[test]
fn shorter_runs_are_prefixes_of_longer_ones() {
    let mut short = small_config();
    short.malicious = SimConfig::highest_ids(20, 3);
    short.behaviors.worker_noise = true;
    short.vh = 0.05;
    short.rounds = 3;
    let mut long = short.clone();
    long.rounds = 6;
    let (_, a) = run_simulation(short, &data()).unwrap();
    let (_, b) = run_simulation(long, &data()).unwrap();
    assert_eq!(a[..], b[..3]);
}
