//! Dense reference implementation of the quantized networks.
//!
//! Plain loops over ideal arithmetic with the conventions the array
//! implements: top-left-anchored ±1 correlation, zero padding at every
//! block edge, ReLU, 4×4 max pooling, optional 3-bit inter-layer
//! quantization, ternary FC without biases.

use thiserror::Error;

use crate::array::AnalogPlane;
use crate::kernels::NEURONS;
use crate::netplan::{NetworkSpec, Preset, QuantizedWeights, Summation, SHRINK_BITS, SHRINK_RANGE};
use crate::quant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub preset: Preset,
    /// Quantize pooled first-layer maps to 3 bits (three-layer only).
    pub interlayer_quantization: bool,
    /// Quantize FC input magnitudes to `(bits, range_max)` before weighting,
    /// as digital summation does.
    pub fc_quantization: Option<(usize, f64)>,
}

impl OracleConfig {
    /// The semantics the compiled plan for `spec` implements.
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        Self {
            preset: spec.preset,
            interlayer_quantization: spec.preset == Preset::ThreeLayer,
            fc_quantization: match spec.summation {
                Summation::DigitalStack { bits, range_max } => Some((bits, range_max)),
                Summation::AnalogAvg { .. } => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("image is {got}x{got_h}, expected {want}x{want}")]
    Shape { got: usize, got_h: usize, want: usize },
    #[error("weights are for {got}, config is {want}")]
    Preset { got: Preset, want: Preset },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{images} images but {labels} labels")]
    LabelCount { images: usize, labels: usize },
}

/// Activations plus the intermediate tensors (map-major, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub activations: [f64; NEURONS],
    pub conv1: Vec<f64>,
    pub pooled: Vec<f64>,
    /// Second-layer maps after summation over inputs and ReLU (three-layer).
    pub conv2: Option<Vec<f64>>,
    /// FC input vector in canonical order.
    pub fc_input: Vec<f64>,
}

impl OracleOutput {
    /// Lowest index among the maxima.
    pub fn class(&self) -> usize {
        let a = &self.activations;
        (0..NEURONS).fold(0, |b, i| if a[i] > a[b] { i } else { b })
    }
}

/// `maps` correlations of one `side × side` map with ±1 filters, zero padded.
fn correlate(input: &[f64], side: usize, filter: &[bool], k: usize, out: &mut [f64]) {
    for y in 0..side {
        for x in 0..side {
            let mut s = 0.0;
            for i in 0..k {
                for j in 0..k {
                    if y + i < side && x + j < side {
                        let v = input[(y + i) * side + x + j];
                        if filter[i * k + j] {
                            s += v;
                        } else {
                            s -= v;
                        }
                    }
                }
            }
            out[y * side + x] += s;
        }
    }
}

fn pool4(input: &[f64], side: usize) -> Vec<f64> {
    let p = side / 4;
    let mut out = vec![f64::NEG_INFINITY; p * p];
    for y in 0..side {
        for x in 0..side {
            let o = &mut out[(y / 4) * p + x / 4];
            *o = o.max(input[y * side + x]);
        }
    }
    out
}

pub fn dense_forward(
    weights: &QuantizedWeights,
    image: &AnalogPlane,
    config: &OracleConfig,
) -> Result<OracleOutput, OracleError> {
    if weights.preset != config.preset {
        return Err(OracleError::Preset {
            got: weights.preset,
            want: config.preset,
        });
    }
    let side = match config.preset {
        Preset::TwoLayer => 32,
        Preset::ThreeLayer => 64,
    };
    if image.width() != side || image.height() != side {
        return Err(OracleError::Shape {
            got: image.width(),
            got_h: image.height(),
            want: side,
        });
    }
    let img = image.as_slice();
    let k = weights.conv[0][0].k();
    let maps1 = weights.conv[0].len();
    let mut conv1 = vec![0.0; maps1 * side * side];
    let mut pooled = Vec::with_capacity(maps1 * side * side / 16);
    for (m, f) in weights.conv[0].iter().enumerate() {
        let out = &mut conv1[m * side * side..(m + 1) * side * side];
        correlate(img, side, f.bits(), k, out);
        let relu: Vec<f64> = out.iter().map(|v| v.max(0.0)).collect();
        pooled.extend(pool4(&relu, side));
    }
    let (conv2, fc_input) = match config.preset {
        Preset::TwoLayer => (None, pooled.clone()),
        Preset::ThreeLayer => {
            let s2 = side / 4;
            let layer1: Vec<f64> = if config.interlayer_quantization {
                pooled
                    .iter()
                    .map(|&v| quant::round_trip(v, SHRINK_BITS as u32, SHRINK_RANGE))
                    .collect()
            } else {
                pooled.clone()
            };
            let filters = &weights.conv[1];
            let outs = filters.len() / maps1;
            let mut conv2 = vec![0.0; outs * s2 * s2];
            for o in 0..outs {
                let acc = &mut conv2[o * s2 * s2..(o + 1) * s2 * s2];
                for m in 0..maps1 {
                    let input = &layer1[m * s2 * s2..(m + 1) * s2 * s2];
                    correlate(input, s2, filters[m * outs + o].bits(), k, acc);
                }
            }
            conv2.iter_mut().for_each(|v| *v = v.max(0.0));
            (Some(conv2.clone()), conv2)
        }
    };
    let mut activations = [0.0; NEURONS];
    for (n, act) in activations.iter_mut().enumerate() {
        for (i, &w) in weights.fc.row(n).iter().enumerate() {
            if w == 0 {
                continue;
            }
            let a = match config.fc_quantization {
                Some((bits, range)) => quant::round_trip(fc_input[i], bits as u32, range),
                None => fc_input[i],
            };
            *act += f64::from(w) * a;
        }
    }
    Ok(OracleOutput {
        activations,
        conv1,
        pooled,
        conv2,
        fc_input,
    })
}

/// Fraction of `images` whose predicted class equals the label.
pub fn score(
    weights: &QuantizedWeights,
    images: &[AnalogPlane],
    labels: &[u8],
    config: &OracleConfig,
) -> Result<f64, OracleError> {
    if images.is_empty() {
        return Err(OracleError::EmptyDataset);
    }
    if images.len() != labels.len() {
        return Err(OracleError::LabelCount {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let mut correct = 0usize;
    for (img, &label) in images.iter().zip(labels) {
        if dense_forward(weights, img, config)?.class() == usize::from(label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}
