//! Compiled layouts and the end-to-end inference driver.

use super::{
    validate, NetworkSpec, PlanError, Preset, QuantizedWeights, Summation, SHRINK_BITS,
    SHRINK_RANGE,
};
use crate::array::{
    AReg, AnalogPlane, BitPlane, Component, DReg, FlagPredicate, PeArray, TraceReport,
};
use crate::kernels::{self, *};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Load,
    Duplicate,
    Conv(usize),
    Relu,
    MaxPool,
    ShrinkDuplicate,
    Accumulate,
    ArrangeForFc,
    FcMultiply,
    AnalogSums,
    DigitalSums,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub kind: StageKind,
    pub label: Component,
}

/// Everything needed to run one network: grids, embedded weight planes and
/// the stage schedule. Immutable once compiled.
#[derive(Debug, Clone)]
pub struct InferencePlan {
    pub spec: NetworkSpec,
    pub grids: Vec<BlockGrid>,
    pub conv_planes: Vec<BitPlane>,
    pub fc: FcLayout,
    pub stages: Vec<Stage>,
}

/// Result of one classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub class: usize,
    pub activations: [f64; NEURONS],
    pub report: TraceReport,
}

// Register allocation. D0/D1 and R6 hold weights for the whole run.
const INPUT: AReg = AReg::R0;
const ROW: AReg = AReg::R1;
const WORK: AReg = AReg::R2;
const FEATURES: AReg = AReg::R3;
const FC_INPUT: AReg = AReg::R4;
const PRODUCT: AReg = AReg::R5;
const FC_WEIGHTS: AReg = AReg::R6;
const CONV_WEIGHTS: [DReg; 2] = [DReg::D0, DReg::D1];
const MASK: DReg = DReg::D4;

fn conv_regs(layer: usize) -> ConvRegs {
    ConvRegs {
        input: if layer == 0 { INPUT } else { FC_INPUT },
        output: FEATURES,
        row: ROW,
        work: WORK,
        tap: TapRegs {
            weights: CONV_WEIGHTS[layer],
            out: DReg::D2,
            tmp: DReg::D3,
            mask: MASK,
        },
    }
}

fn label_of(kind: StageKind) -> Component {
    match kind {
        StageKind::Load => Component::Load,
        StageKind::Duplicate => Component::Duplication,
        StageKind::Conv(_) => Component::Convolution,
        StageKind::Relu => Component::Relu,
        StageKind::MaxPool => Component::MaxPool,
        StageKind::ShrinkDuplicate => Component::ShrinkDuplicate,
        StageKind::Accumulate => Component::FeatureMapCreation,
        StageKind::ArrangeForFc | StageKind::FcMultiply => Component::FullyConnected,
        StageKind::AnalogSums | StageKind::DigitalSums => Component::FullyConnected,
    }
}

pub fn compile(spec: &NetworkSpec, weights: &QuantizedWeights) -> Result<InferencePlan, PlanError> {
    let grids = validate(spec).map_err(PlanError::Invalid)?;
    weights.check(spec)?;
    let mut kinds = vec![
        StageKind::Load,
        StageKind::Duplicate,
        StageKind::Conv(0),
        StageKind::Relu,
        StageKind::MaxPool,
    ];
    let mut all_grids = vec![grids.first];
    let mut conv_planes = vec![embed_conv_weights(&weights.conv[0], &grids.first, spec.k)?];
    let fc = match spec.preset {
        Preset::TwoLayer => embed_fc_weights(&weights.fc, FcMode::PooledCheckerboard, &grids.first)?,
        Preset::ThreeLayer => {
            let second = grids.second.expect("validated three-layer grid");
            kinds.extend([
                StageKind::ShrinkDuplicate,
                StageKind::Conv(1),
                StageKind::Accumulate,
                StageKind::ArrangeForFc,
            ]);
            all_grids.push(second);
            conv_planes.push(embed_conv_weights(&weights.conv[1], &second, spec.k)?);
            embed_fc_weights(&weights.fc, FcMode::DuplicatedMaps, &second)?
        }
    };
    kinds.push(StageKind::FcMultiply);
    kinds.push(match spec.summation {
        Summation::AnalogAvg { .. } => StageKind::AnalogSums,
        Summation::DigitalStack { .. } => StageKind::DigitalSums,
    });
    let stages = kinds
        .into_iter()
        .map(|kind| Stage {
            kind,
            label: label_of(kind),
        })
        .collect();
    Ok(InferencePlan {
        spec: spec.clone(),
        grids: all_grids,
        conv_planes,
        fc,
        stages,
    })
}

/// Lowest index among the maxima.
pub(crate) fn argmax(v: &[f64; NEURONS]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Classifies one binary `side × side` image on `state`.
///
/// The state keeps its noise, cost and isolation settings; its registers
/// are overwritten. The report covers only this call's instructions.
pub fn infer(
    plan: &InferencePlan,
    image: &AnalogPlane,
    state: &mut PeArray,
) -> Result<Inference, PlanError> {
    let side = plan.spec.input_side;
    if image.width() != side
        || image.height() != side
        || image.as_slice().iter().any(|&v| v != 0.0 && v != 1.0)
    {
        return Err(PlanError::BadImage { side });
    }
    let start = state.trace().len();
    let prev_label = state.label();
    let mut activations = [0.0; NEURONS];
    for stage in &plan.stages {
        state.set_label(stage.label);
        run_stage(plan, stage.kind, image, state, &mut activations)?;
    }
    state.set_label(prev_label);
    let report = state.costs().report(&state.trace().since(start));
    Ok(Inference {
        class: argmax(&activations),
        activations,
        report,
    })
}

fn run_stage(
    plan: &InferencePlan,
    kind: StageKind,
    image: &AnalogPlane,
    state: &mut PeArray,
    activations: &mut [f64; NEURONS],
) -> Result<(), PlanError> {
    let spec = &plan.spec;
    let first = &plan.grids[0];
    match kind {
        StageKind::Load => {
            let g = state.geometry();
            let side = spec.input_side;
            let full = AnalogPlane::from_fn(g.width, g.height, |x, y| {
                if x < side && y < side {
                    image.get(x, y)
                } else {
                    0.0
                }
            });
            state.load_analog(INPUT, &full)?;
            for (plane, reg) in plan.conv_planes.iter().zip(CONV_WEIGHTS) {
                state.load_bits(reg, plane)?;
            }
            state.load_analog(FC_WEIGHTS, &plan.fc.weights)?;
            state.set_flag(FlagPredicate::All);
        }
        StageKind::Duplicate => duplicate_input(state, INPUT, ROW, first)?,
        StageKind::Conv(layer) => conv_layer(state, &conv_regs(layer), &plan.grids[layer], spec.k)?,
        StageKind::Relu => relu(state, FEATURES),
        StageKind::MaxPool => {
            let regs = PoolRegs {
                tmp: ROW,
                diff: WORK,
                mask: MASK,
            };
            maxpool4(state, FEATURES, &regs, first)?;
        }
        StageKind::ShrinkDuplicate => {
            let regs = ShrinkRegs {
                bits: vec![DReg::D5, DReg::D6, DReg::D7][..SHRINK_BITS].to_vec(),
                result: DReg::D8,
                tmp: DReg::D9,
                mask: MASK,
            };
            shrink_and_duplicate(
                state,
                FEATURES,
                FC_INPUT,
                &regs,
                first,
                POOL,
                &plan.grids[1],
                SHRINK_RANGE,
            )?;
        }
        StageKind::Accumulate => {
            accumulate_feature_maps(state, FEATURES, ROW, MASK, &plan.grids[1])?;
        }
        StageKind::ArrangeForFc => {
            arrange_for_fc(state, FEATURES, FC_INPUT, ROW, MASK, &plan.grids[1])?;
        }
        StageKind::FcMultiply => {
            let act = match spec.preset {
                Preset::TwoLayer => FEATURES,
                Preset::ThreeLayer => FC_INPUT,
            };
            fc_multiply(state, act, FC_WEIGHTS, PRODUCT);
        }
        StageKind::AnalogSums => {
            let repeats = match spec.summation {
                Summation::AnalogAvg { repeats } => repeats,
                Summation::DigitalStack { .. } => 1,
            };
            *activations = analog_neuron_sums(state, PRODUCT, &plan.fc, MASK, repeats);
        }
        StageKind::DigitalSums => {
            let (bits, range_max) = match spec.summation {
                Summation::DigitalStack { bits, range_max } => (bits, range_max),
                Summation::AnalogAvg { .. } => (super::DIGITAL_BITS, super::DIGITAL_RANGE),
            };
            let pool = [DReg::D2, DReg::D3, DReg::D4, DReg::D5];
            if bits > pool.len() {
                return Err(PlanError::Invalid(vec![super::Diagnostic(format!(
                    "digital summation supports at most 4 bits within the register budget, got {bits}"
                ))]));
            }
            let regs = DigitalRegs {
                magnitude: ROW,
                bits: pool[..bits].to_vec(),
                positive: DReg::D6,
                negative: DReg::D7,
                group: DReg::D8,
                work: DReg::D9,
                stack: kernels::StackRegs {
                    below: DReg::D10,
                    moving: DReg::D11,
                    bottom: DReg::D12,
                },
            };
            *activations = digital_neuron_sums(state, PRODUCT, FC_WEIGHTS, &plan.fc, &regs, range_max)?;
        }
    }
    Ok(())
}
