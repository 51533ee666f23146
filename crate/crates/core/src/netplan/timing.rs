//! Component timings measured on hardware and the cost-model fit to them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{compile, infer, NetworkSpec, PlanError, QuantizedWeights};
use crate::array::{AnalogPlane, Component, CostModel, NoiseModel, PeArray, Trace};

/// Two-layer component times on the chip, in µs. ReLU is listed as "<1".
pub const HARDWARE_TWO_LAYER_US: [(Component, f64); 5] = [
    (Component::Duplication, 28.0),
    (Component::Convolution, 160.0),
    (Component::Relu, 0.5),
    (Component::MaxPool, 25.0),
    (Component::FullyConnected, 59.0),
];

/// Total two-layer time on the chip, in µs.
pub const HARDWARE_TWO_LAYER_TOTAL_US: f64 = 272.0;

/// Three-layer FC time on the chip, in µs. Reported next to the model, not fitted.
pub const HARDWARE_THREE_LAYER_FC_US: f64 = 901.0;

/// Ridge weight of [`fit_costs`].
pub const COST_FIT_RIDGE: f64 = 1e-3;

/// Instruction trace of one noiseless inference of `spec` with random
/// weights on a blank image.
pub fn reference_trace(spec: &NetworkSpec) -> Result<Trace, PlanError> {
    let w = QuantizedWeights::random(spec, &mut ChaCha8Rng::seed_from_u64(0));
    let plan = compile(spec, &w)?;
    let mut state = PeArray::new(spec.geometry)
        .with_noise(NoiseModel::noiseless())?
        .with_block_isolation(true);
    let img = AnalogPlane::zeros(spec.input_side, spec.input_side);
    infer(&plan, &img, &mut state)?;
    Ok(state.trace().clone())
}

/// Costs fitted to [`HARDWARE_TWO_LAYER_US`], starting from `prior`.
pub fn fit_costs(prior: &CostModel) -> Result<CostModel, PlanError> {
    let trace = reference_trace(&NetworkSpec::two_layer())?;
    let rows: Vec<_> = HARDWARE_TWO_LAYER_US
        .iter()
        .map(|&(c, us)| (trace.component_kind_counts(c), us))
        .collect();
    Ok(prior.fit(&rows, COST_FIT_RIDGE))
}
