//! Dataset-level scoring on the simulated array.

use crate::array::{NoiseModel, PeArray};
use crate::array::AnalogPlane;
use crate::netplan::{infer, InferencePlan, PlanError};

/// Settings shared by every image of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub noise: NoiseModel,
    pub isolation: bool,
    /// Image `i` runs with noise seed `seed + i`.
    pub seed: u64,
}

impl SimSettings {
    pub fn noiseless() -> Self {
        Self {
            noise: NoiseModel::noiseless(),
            isolation: true,
            seed: 0,
        }
    }
}

/// Predicted classes of `images` in order.
pub fn simulate_classes(
    plan: &InferencePlan,
    images: &[AnalogPlane],
    settings: &SimSettings,
) -> Result<Vec<usize>, PlanError> {
    let mut state = PeArray::new(plan.spec.geometry)
        .with_noise(settings.noise)?
        .with_block_isolation(settings.isolation);
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            state.set_noise(settings.noise.with_seed(settings.seed.wrapping_add(i as u64)))?;
            state.clear_trace();
            Ok(infer(plan, img, &mut state)?.class)
        })
        .collect()
}

/// Fraction of `classes` equal to `labels`.
pub fn accuracy(classes: &[usize], labels: &[u8]) -> f64 {
    let hits = classes
        .iter()
        .zip(labels)
        .filter(|(&c, &l)| c == usize::from(l))
        .count();
    hits as f64 / classes.len().max(1) as f64
}

/// Outcome of [`calibrate_noise`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCalibration {
    /// Multiplier on [`NoiseModel::NOMINAL`] that was selected.
    pub scale: f64,
    pub accuracy: f64,
    /// Every `(scale, accuracy)` probed, in order.
    pub probes: Vec<(f64, f64)>,
}

/// Bisects, in log space, the multiplier on the nominal noise magnitudes
/// until simulated accuracy lands inside `band`.
///
/// Accuracy falls as noise grows, so a probe above the band raises the
/// lower bracket and a probe below it lowers the upper one. Stops after
/// `max_probes` and returns the last probe if the band was never hit.
pub fn calibrate_noise(
    plan: &InferencePlan,
    images: &[AnalogPlane],
    labels: &[u8],
    band: (f64, f64),
    bracket: (f64, f64),
    max_probes: usize,
    seed: u64,
) -> Result<NoiseCalibration, PlanError> {
    let (mut lo, mut hi) = bracket;
    let mut probes = Vec::new();
    loop {
        let scale = (lo * hi).sqrt();
        let settings = SimSettings {
            noise: NoiseModel::scaled(scale),
            isolation: true,
            seed,
        };
        let acc = accuracy(&simulate_classes(plan, images, &settings)?, labels);
        probes.push((scale, acc));
        let inside = (band.0..=band.1).contains(&acc);
        if inside || probes.len() >= max_probes {
            return Ok(NoiseCalibration {
                scale,
                accuracy: acc,
                probes,
            });
        }
        if acc > band.1 {
            lo = scale;
        } else {
            hi = scale;
        }
    }
}
