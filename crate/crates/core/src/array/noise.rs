//! Analog error model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ArrayError;

/// Gaussian i.i.d. error magnitudes, in analog units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Added per flagged PE on every analog copy or arithmetic op.
    pub sigma_op: f64,
    /// Added per PE on every single-step analog transfer.
    pub sigma_shift: f64,
    /// Added once to every global summation result.
    pub sigma_gsum: f64,
    /// Exponential decay rate of stored analog values, per µs.
    pub decay_rate: f64,
    pub seed: u64,
}

impl NoiseModel {
    /// Starting point of the calibration search.
    pub const NOMINAL: NoiseModel = NoiseModel {
        sigma_op: 0.005,
        sigma_shift: 0.002,
        sigma_gsum: 0.5,
        decay_rate: 0.0,
        seed: 0,
    };

    /// Multiplier applied to [`NoiseModel::NOMINAL`] by the shipped defaults.
    ///
    /// Chosen with `ppa calibrate` on the shipped two-layer weights: bisection
    /// over the first 2000 test digits (seed 1) hit the 92-94% band seen on
    /// hardware at 0.237 (93.85%), and 0.25 gives 93.2%, nearer the middle.
    pub const CALIBRATED_SCALE: f64 = 0.25;

    pub fn noiseless() -> Self {
        Self {
            sigma_op: 0.0,
            sigma_shift: 0.0,
            sigma_gsum: 0.0,
            decay_rate: 0.0,
            seed: 0,
        }
    }

    /// Nominal magnitudes multiplied by `scale` (decay untouched).
    pub fn scaled(scale: f64) -> Self {
        Self {
            sigma_op: Self::NOMINAL.sigma_op * scale,
            sigma_shift: Self::NOMINAL.sigma_shift * scale,
            sigma_gsum: Self::NOMINAL.sigma_gsum * scale,
            ..Self::NOMINAL
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_op == 0.0 && self.sigma_shift == 0.0 && self.sigma_gsum == 0.0
    }

    pub fn validate(&self) -> Result<(), ArrayError> {
        let fields = [
            ("sigma_op", self.sigma_op),
            ("sigma_shift", self.sigma_shift),
            ("sigma_gsum", self.sigma_gsum),
            ("decay_rate", self.decay_rate),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ArrayError::InvalidNoise(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::scaled(Self::CALIBRATED_SCALE)
    }
}

/// Independent random streams per error source, so changing one sigma does
/// not perturb the draws of the others.
#[derive(Debug, Clone)]
pub(crate) struct NoiseStreams {
    pub op: ChaCha8Rng,
    pub shift: ChaCha8Rng,
    pub gsum: ChaCha8Rng,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Self {
            op: stream(1),
            shift: stream(2),
            gsum: stream(3),
        }
    }
}
