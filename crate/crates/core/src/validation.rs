//! Validator voting: each validator trains the previous global model for one
//! epoch on its own data, then votes Negative on any worker update whose
//! accuracy falls more than `threshold` below that proxy.

use alloc::vec::Vec;

use rand::RngCore;
use thiserror::Error;

use crate::learning::{evaluate, local_train, DataShard, LearnError, ModelParams, TrainSpec};
use crate::protocol::Vote;
use crate::DeviceId;

/// What a worker update's accuracy is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ValidationScheme {
    /// Accuracy of the validator's own one-epoch update of `G_{j-1}`.
    #[default]
    OneEpochProxy,
    /// Accuracy of `G_{j-1}` itself. Kept only to reproduce why it was
    /// abandoned: a legitimate multi-epoch update routinely beats the stale
    /// global model by a margin that no fixed threshold separates from noise.
    Legacy,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("validator has not computed its baseline accuracy this round")]
    NotPretrained,
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// Outcome of validating one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub vali_reward: u64,
    pub vote: Vote,
    pub vad: f64,
}

/// Negative iff `vad` exceeds the threshold.
pub fn vote_for(vad: f64, threshold: f64) -> Vote {
    if vad > threshold {
        Vote::Negative
    } else {
        Vote::Positive
    }
}

/// The vote a compromised validator casts in place of its honest one.
pub fn malicious_flip(vote: Vote) -> Vote {
    vote.flipped()
}

/// One validator's per-round view.
#[derive(Debug)]
pub struct ValidatorState<'a> {
    pub validator: DeviceId,
    pub threshold: f64,
    pub scheme: ValidationScheme,
    pub unit_reward: u64,
    pub train: &'a DataShard,
    pub test: &'a DataShard,
    pretrain_acc: Option<f64>,
}

impl<'a> ValidatorState<'a> {
    pub fn new(
        validator: DeviceId,
        threshold: f64,
        scheme: ValidationScheme,
        unit_reward: u64,
        train: &'a DataShard,
        test: &'a DataShard,
    ) -> Self {
        ValidatorState {
            validator,
            threshold,
            scheme,
            unit_reward,
            train,
            test,
            pretrain_acc: None,
        }
    }

    pub fn pretrain_acc(&self) -> Option<f64> {
        self.pretrain_acc
    }

    /// Computes this round's baseline accuracy from the previous global
    /// model. Must run before any vote.
    pub fn pretrain_one_epoch<R: RngCore + ?Sized>(
        &mut self,
        global: &ModelParams,
        spec: &TrainSpec,
        rng: &mut R,
    ) -> Result<f64, ValidationError> {
        let acc = match self.scheme {
            ValidationScheme::OneEpochProxy => {
                let proxy = local_train(global, self.train, &spec.with_epochs(1), rng)?;
                evaluate(&proxy, self.test)?
            }
            ValidationScheme::Legacy => evaluate(global, self.test)?,
        };
        self.pretrain_acc = Some(acc);
        Ok(acc)
    }

    /// The honest verdict on `update`.
    pub fn validate_by_voting(&self, update: &ModelParams) -> Result<Verdict, ValidationError> {
        let base = self.pretrain_acc.ok_or(ValidationError::NotPretrained)?;
        let vad = base - evaluate(update, self.test)?;
        Ok(Verdict {
            vali_reward: self.unit_reward,
            vote: vote_for(vad, self.threshold),
            vad,
        })
    }
}

/// One logged validation, for threshold calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VadRecord {
    pub round: u64,
    pub validator: DeviceId,
    pub worker: DeviceId,
    pub vad: f64,
    /// The vote actually cast (after any malicious flip).
    pub vote: Vote,
    pub worker_malicious: bool,
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

fn split(records: &[VadRecord]) -> (Vec<f64>, Vec<f64>) {
    let (mal, legit): (Vec<&VadRecord>, Vec<&VadRecord>) = records.iter().partition(|r| r.worker_malicious);
    (
        legit.iter().map(|r| r.vad).collect(),
        mal.iter().map(|r| r.vad).collect(),
    )
}

/// Midpoint between the 90th percentile of legitimate-worker vad and the
/// 10th percentile of malicious-worker vad. `None` unless both groups are
/// present.
pub fn suggest_threshold(records: &[VadRecord]) -> Option<f64> {
    let (legit, mal) = split(records);
    Some((percentile(&legit, 0.9)? + percentile(&mal, 0.1)?) / 2.0)
}

/// Fractions `(legit at or below t, malicious above t)`.
pub fn separation_at(records: &[VadRecord], t: f64) -> (f64, f64) {
    let (legit, mal) = split(records);
    let frac = |v: &[f64], f: &dyn Fn(f64) -> bool| {
        if v.is_empty() {
            1.0
        } else {
            v.iter().filter(|x| f(**x)).count() as f64 / v.len() as f64
        }
    };
    (frac(&legit, &|x| x <= t), frac(&mal, &|x| x > t))
}

/// Some threshold at which at least `fraction` of each group is on its own
/// side, if one exists. Only record values need be tried: between two
/// consecutive values both fractions are constant.
pub fn find_separating_threshold(records: &[VadRecord], fraction: f64) -> Option<f64> {
    records
        .iter()
        .map(|r| r.vad)
        .filter(|&t| {
            let (l, m) = separation_at(records, t);
            l >= fraction && m >= fraction
        })
        .min_by(f64::total_cmp)
}
