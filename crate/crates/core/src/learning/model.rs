use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::LearnError;
use crate::rng::SimRng;

/// Half-width of the uniform initializer.
pub const INIT_RANGE: f64 = 0.05;

/// Shape of the shared classifier.
///
/// Parameter layout (row-major, concatenated in this order):
/// * `Softmax`: weights `classes x inputs`, biases `classes`.
/// * `Mlp`: hidden weights `hidden x inputs`, hidden biases `hidden`,
///   output weights `classes x hidden`, output biases `classes`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Softmax {
        inputs: usize,
        classes: usize,
    },
    Mlp {
        inputs: usize,
        hidden: usize,
        classes: usize,
    },
}

impl Arch {
    pub fn inputs(&self) -> usize {
        match *self {
            Arch::Softmax { inputs, .. } | Arch::Mlp { inputs, .. } => inputs,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Arch::Softmax { classes, .. } | Arch::Mlp { classes, .. } => classes,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Arch::Softmax { inputs, classes } => inputs * classes + classes,
            Arch::Mlp {
                inputs,
                hidden,
                classes,
            } => hidden * inputs + hidden + classes * hidden + classes,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.inputs() == 0 {
            return Err(LearnError::InvalidArch("zero inputs"));
        }
        if self.classes() < 2 {
            return Err(LearnError::InvalidArch("need at least two classes"));
        }
        if let Arch::Mlp { hidden: 0, .. } = self {
            return Err(LearnError::InvalidArch("zero hidden units"));
        }
        Ok(())
    }
}

/// Flat parameter vector of a model with a known architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: Arch, values: Vec<f64>) -> Result<Self, LearnError> {
        arch.validate()?;
        let expected = arch.param_count();
        if values.len() != expected {
            return Err(LearnError::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(ModelParams { arch, values })
    }

    pub fn zeros(arch: Arch) -> Result<Self, LearnError> {
        Self::new(arch, vec![0.0; arch.param_count()])
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Initial global model: every entry uniform in `[-INIT_RANGE, INIT_RANGE]`.
pub fn init_global_model(arch: Arch, seed: u64) -> Result<ModelParams, LearnError> {
    arch.validate()?;
    let mut rng = SimRng::seed_from_u64(seed);
    let values = (0..arch.param_count())
        .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
        .collect();
    ModelParams::new(arch, values)
}

/// Weighted elementwise mean. Weights are normalized to sum to one; updates
/// are folded in the order given.
pub fn fedavg(updates: &[(&ModelParams, f64)]) -> Result<ModelParams, LearnError> {
    let (first, _) = updates.first().ok_or(LearnError::EmptyAggregate)?;
    let arch = first.arch;
    let mut total = 0.0;
    for (params, weight) in updates {
        if params.arch != arch {
            return Err(LearnError::ArchMismatch);
        }
        if !(weight.is_finite() && *weight > 0.0) {
            return Err(LearnError::InvalidWeight);
        }
        total += weight;
    }
    let mut out = vec![0.0; arch.param_count()];
    for (params, weight) in updates {
        let w = weight / total;
        for (acc, v) in out.iter_mut().zip(&params.values) {
            *acc += w * v;
        }
    }
    ModelParams::new(arch, out)
}

/// Adds independent `N(0, variance)` noise to every parameter.
pub fn inject_gaussian_noise<R: RngCore + ?Sized>(
    params: &ModelParams,
    variance: f64,
    rng: &mut R,
) -> Result<ModelParams, LearnError> {
    if !(variance.is_finite() && variance > 0.0) {
        return Err(LearnError::InvalidVariance);
    }
    let normal = Normal::new(0.0, libm::sqrt(variance)).map_err(|_| LearnError::InvalidVariance)?;
    let values = params.values.iter().map(|v| v + normal.sample(&mut *rng)).collect();
    ModelParams::new(params.arch, values)
}
