//! Functional model of a SIMD pixel processor array.
//!
//! Every processing element (PE) holds seven analog registers `R0..R6`,
//! thirteen one-bit registers `D0..D12` and an activity flag. Instructions
//! are broadcast to all PEs and only flagged PEs write their destination.
//! Analog instructions carry Gaussian error according to the [`NoiseModel`];
//! every instruction is appended to a [`Trace`] that the [`CostModel`] turns
//! into modeled time.

mod cost;
mod noise;
mod plane;

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use cost::{Component, CostModel, OpKind, Trace, TraceEntry, TraceReport};
pub use noise::NoiseModel;
pub use plane::{AnalogPlane, BitPlane};

use crate::quant;
use noise::NoiseStreams;

/// Saturation bound used by hardware-range mode and by plane dumps.
pub const DEFAULT_SATURATION: f64 = 128.0;

/// Default number of address events the readout can return at once.
pub const DEFAULT_READOUT_CAPACITY: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArrayError {
    #[error("invalid array geometry {width}x{height}")]
    InvalidGeometry { width: usize, height: usize },
    #[error("plane is {got_w}x{got_h}, array is {want_w}x{want_h}")]
    ShapeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("event readout capacity exceeded: {count} events, capacity {capacity}")]
    CapacityExceeded { count: u64, capacity: usize },
    #[error("refresh needs at least one finite level")]
    EmptyLevels,
    #[error("decay interval must be finite and non-negative, got {0}")]
    NegativeInterval(f64),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid cost model")]
    InvalidCosts,
    #[error("conversion needs 1..=16 bit registers and a positive range")]
    InvalidConversion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArrayGeometry {
    pub width: usize,
    pub height: usize,
}

impl ArrayGeometry {
    pub const DEFAULT: ArrayGeometry = ArrayGeometry {
        width: 256,
        height: 256,
    };

    pub fn new(width: usize, height: usize) -> Result<Self, ArrayError> {
        if width == 0 || height == 0 {
            return Err(ArrayError::InvalidGeometry { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn pe_count(&self) -> usize {
        self.width * self.height
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Direction data moves in a neighbour transfer. `East` moves a value from
/// `(x, y)` to `(x + 1, y)`; `North` moves it to `(x, y - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
        }
    }
}

/// Analog register names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AReg {
    R0,
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
}

impl AReg {
    pub const ALL: [AReg; 7] = [
        AReg::R0,
        AReg::R1,
        AReg::R2,
        AReg::R3,
        AReg::R4,
        AReg::R5,
        AReg::R6,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["R0", "R1", "R2", "R3", "R4", "R5", "R6"][self.index()]
    }
}

/// Digital register names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DReg {
    D0,
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
    D8,
    D9,
    D10,
    D11,
    D12,
}

impl DReg {
    pub const ALL: [DReg; 13] = [
        DReg::D0,
        DReg::D1,
        DReg::D2,
        DReg::D3,
        DReg::D4,
        DReg::D5,
        DReg::D6,
        DReg::D7,
        DReg::D8,
        DReg::D9,
        DReg::D10,
        DReg::D11,
        DReg::D12,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        [
            "D0", "D1", "D2", "D3", "D4", "D5", "D6", "D7", "D8", "D9", "D10", "D11", "D12",
        ][self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitOp {
    And,
    Or,
    Xor,
    /// `a AND NOT b`
    AndNot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagPredicate {
    All,
    WherePositive(AReg),
    WhereNegative(AReg),
    WhereBit(DReg),
}

/// A block-periodic rectangle of PEs, as produced by the controller's
/// row/column addressing: `(x mod period_x) ∈ x` and `(y mod period_y) ∈ y`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskPattern {
    pub period_x: usize,
    pub period_y: usize,
    pub x: Range<usize>,
    pub y: Range<usize>,
}

impl MaskPattern {
    /// A single absolute rectangle.
    pub fn rect(x: Range<usize>, y: Range<usize>) -> Self {
        Self {
            period_x: usize::MAX,
            period_y: usize::MAX,
            x,
            y,
        }
    }

    /// One PE per `period × period` tile, at tile offset `(ox, oy)`.
    pub fn lattice(period: usize, ox: usize, oy: usize) -> Self {
        Self {
            period_x: period,
            period_y: period,
            x: ox..ox + 1,
            y: oy..oy + 1,
        }
    }

    pub fn periodic(period: (usize, usize), x: Range<usize>, y: Range<usize>) -> Self {
        Self {
            period_x: period.0,
            period_y: period.1,
            x,
            y,
        }
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.x.contains(&(x % self.period_x)) && self.y.contains(&(y % self.period_y))
    }

    pub fn render(&self, width: usize, height: usize) -> BitPlane {
        BitPlane::separable(
            width,
            height,
            |x| self.x.contains(&(x % self.period_x)),
            |y| self.y.contains(&(y % self.period_y)),
        )
    }
}

/// Complete simulator state.
#[derive(Debug, Clone)]
pub struct PeArray {
    geometry: ArrayGeometry,
    analog: Vec<f64>,
    bits: Vec<BitPlane>,
    flag: BitPlane,
    flag_all: bool,
    noise: NoiseModel,
    streams: NoiseStreams,
    costs: CostModel,
    trace: Trace,
    label: Component,
    saturation: Option<f64>,
    isolation_mode: bool,
    isolation: Option<(usize, usize)>,
    readout_capacity: usize,
}

impl PeArray {
    /// A zeroed array with every PE flagged and the default noise and costs.
    pub fn new(geometry: ArrayGeometry) -> Self {
        let n = geometry.pe_count();
        let noise = NoiseModel::default();
        Self {
            geometry,
            analog: vec![0.0; 7 * n],
            bits: vec![BitPlane::zeros(geometry.width, geometry.height); 13],
            flag: BitPlane::ones(geometry.width, geometry.height),
            flag_all: true,
            noise,
            streams: NoiseStreams::new(noise.seed),
            costs: CostModel::default(),
            trace: Trace::default(),
            label: Component::Unlabeled,
            saturation: None,
            isolation_mode: false,
            isolation: None,
            readout_capacity: DEFAULT_READOUT_CAPACITY,
        }
    }

    /// Replaces the noise model and restarts its random streams from its seed.
    pub fn with_noise(mut self, noise: NoiseModel) -> Result<Self, ArrayError> {
        self.set_noise(noise)?;
        Ok(self)
    }

    pub fn with_costs(mut self, costs: CostModel) -> Result<Self, ArrayError> {
        if !costs.is_valid() {
            return Err(ArrayError::InvalidCosts);
        }
        self.costs = costs;
        Ok(self)
    }

    /// Enables hardware-range mode: analog results saturate at `±bound`.
    pub fn with_saturation(mut self, bound: Option<f64>) -> Self {
        self.saturation = bound;
        self
    }

    pub fn saturation(&self) -> Option<f64> {
        self.saturation
    }

    /// When on, convolution kernels stop neighbour transfers at block edges.
    pub fn with_block_isolation(mut self, on: bool) -> Self {
        self.isolation_mode = on;
        self
    }

    pub fn with_readout_capacity(mut self, capacity: usize) -> Self {
        self.readout_capacity = capacity;
        self
    }

    pub fn set_noise(&mut self, noise: NoiseModel) -> Result<(), ArrayError> {
        noise.validate()?;
        self.noise = noise;
        self.streams = NoiseStreams::new(noise.seed);
        Ok(())
    }

    /// Restarts the random streams from a new seed.
    pub fn reseed(&mut self, seed: u64) {
        self.noise.seed = seed;
        self.streams = NoiseStreams::new(seed);
    }

    pub fn geometry(&self) -> ArrayGeometry {
        self.geometry
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn costs(&self) -> &CostModel {
        &self.costs
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn clear_trace(&mut self) {
        self.trace.clear();
    }

    pub fn block_isolation(&self) -> bool {
        self.isolation_mode
    }

    pub fn set_block_isolation(&mut self, on: bool) {
        self.isolation_mode = on;
    }

    /// Block size at which transfers are currently cut, if any.
    pub fn active_isolation(&self) -> Option<(usize, usize)> {
        self.isolation
    }

    /// Cuts neighbour transfers that cross `block_w × block_h` block edges.
    pub fn set_active_isolation(&mut self, blocks: Option<(usize, usize)>) {
        self.isolation = blocks;
    }

    pub fn label(&self) -> Component {
        self.label
    }

    /// Sets the component subsequent instructions are attributed to and
    /// returns the previous one.
    pub fn set_label(&mut self, label: Component) -> Component {
        std::mem::replace(&mut self.label, label)
    }

    /// Modeled time of everything recorded so far, grouped by component.
    pub fn report(&self) -> TraceReport {
        self.costs.report(&self.trace)
    }

    pub fn analog(&self, reg: AReg) -> AnalogPlane {
        AnalogPlane::from_vec(
            self.geometry.width,
            self.geometry.height,
            self.analog_slice(reg).to_vec(),
        )
        .expect("plane size matches geometry")
    }

    pub fn analog_slice(&self, reg: AReg) -> &[f64] {
        let n = self.geometry.pe_count();
        &self.analog[reg.index() * n..(reg.index() + 1) * n]
    }

    pub fn bits(&self, reg: DReg) -> &BitPlane {
        &self.bits[reg.index()]
    }

    pub fn flag(&self) -> &BitPlane {
        &self.flag
    }

    fn record(&mut self, kind: OpKind, count: u32) {
        self.trace.push(kind, self.label, count);
    }

    fn check_shape(&self, w: usize, h: usize) -> Result<(), ArrayError> {
        if w != self.geometry.width || h != self.geometry.height {
            return Err(ArrayError::ShapeMismatch {
                got_w: w,
                got_h: h,
                want_w: self.geometry.width,
                want_h: self.geometry.height,
            });
        }
        Ok(())
    }

    // ----- host loads -----

    /// Writes a whole analog plane from the host, ignoring the flag and noise.
    pub fn load_analog(&mut self, reg: AReg, image: &AnalogPlane) -> Result<(), ArrayError> {
        self.check_shape(image.width(), image.height())?;
        let n = self.geometry.pe_count();
        self.analog[reg.index() * n..(reg.index() + 1) * n].copy_from_slice(image.as_slice());
        self.record(OpKind::Load, 1);
        Ok(())
    }

    /// Writes a whole bit plane from the host, ignoring the flag.
    pub fn load_bits(&mut self, reg: DReg, plane: &BitPlane) -> Result<(), ArrayError> {
        self.check_shape(plane.width(), plane.height())?;
        self.bits[reg.index()] = plane.clone();
        self.record(OpKind::Load, 1);
        Ok(())
    }

    // ----- analog instructions -----

    fn analog_apply(
        &mut self,
        dst: AReg,
        a: AReg,
        b: AReg,
        sigma: f64,
        kind: OpKind,
        op: impl Fn(f64, f64) -> f64,
    ) {
        let n = self.geometry.pe_count();
        let (d0, a0, b0) = (dst.index() * n, a.index() * n, b.index() * n);
        let sat = self.saturation;
        let data = &mut self.analog;
        let rng = &mut self.streams.op;
        for_each_flagged(&self.flag, self.flag_all, self.geometry, |i| {
            let mut v = op(data[a0 + i], data[b0 + i]);
            if sigma > 0.0 {
                v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            if let Some(s) = sat {
                v = v.clamp(-s, s);
            }
            data[d0 + i] = v;
        });
        self.record(kind, 1);
    }

    pub fn analog_arith(&mut self, dst: AReg, a: AReg, b: AReg, op: ArithOp) {
        let sigma = self.noise.sigma_op;
        match op {
            ArithOp::Add => self.analog_apply(dst, a, b, sigma, OpKind::AnalogArith, |x, y| x + y),
            ArithOp::Sub => self.analog_apply(dst, a, b, sigma, OpKind::AnalogArith, |x, y| x - y),
        }
    }

    pub fn add(&mut self, dst: AReg, a: AReg, b: AReg) {
        self.analog_arith(dst, a, b, ArithOp::Add);
    }

    pub fn sub(&mut self, dst: AReg, a: AReg, b: AReg) {
        self.analog_arith(dst, a, b, ArithOp::Sub);
    }

    pub fn neg(&mut self, dst: AReg, a: AReg) {
        let sigma = self.noise.sigma_op;
        self.analog_apply(dst, a, a, sigma, OpKind::AnalogArith, |x, _| -x);
    }

    pub fn div2(&mut self, dst: AReg, a: AReg) {
        let sigma = self.noise.sigma_op;
        self.analog_apply(dst, a, a, sigma, OpKind::AnalogArith, |x, _| x * 0.5);
    }

    pub fn copy(&mut self, dst: AReg, src: AReg) {
        let sigma = self.noise.sigma_op;
        self.analog_apply(dst, src, src, sigma, OpKind::AnalogArith, |x, _| x);
    }

    /// Flagged, noiseless constant write.
    pub fn write_const(&mut self, dst: AReg, value: f64) {
        self.analog_apply(dst, dst, dst, 0.0, OpKind::AnalogWrite, |_, _| value);
    }

    /// Translates `reg` by `steps` PEs toward `dir`. Vacated cells read 0 and
    /// every step adds transfer noise to each receiving PE.
    pub fn shift_analog(&mut self, reg: AReg, dir: Direction, steps: usize) {
        if steps == 0 {
            return;
        }
        let n = self.geometry.pe_count();
        let off = reg.index() * n;
        let sigma = self.noise.sigma_shift;
        let sat = self.saturation;
        let geo = self.geometry;
        let iso = self.isolation;
        if self.flag_all {
            // Whole-plane translation; a PE that received `m` transfers carries
            // the sum of `m` independent step errors.
            let src = self.analog[off..off + n].to_vec();
            let rng = &mut self.streams.shift;
            for y in 0..geo.height {
                for x in 0..geo.width {
                    let (value, hops) = translate_source(geo, iso, dir, steps, x, y)
                        .map_or_else(
                            || (0.0, entry_distance(geo, iso, dir, x, y) + 1),
                            |(sx, sy)| (src[sy * geo.width + sx], steps),
                        );
                    let mut v = value;
                    if sigma > 0.0 {
                        let hops = hops.min(steps) as f64;
                        v += sigma * hops.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    }
                    if let Some(s) = sat {
                        v = v.clamp(-s, s);
                    }
                    self.analog[off + y * geo.width + x] = v;
                }
            }
        } else {
            for _ in 0..steps {
                let src = self.analog[off..off + n].to_vec();
                let data = &mut self.analog;
                let rng = &mut self.streams.shift;
                for_each_flagged(&self.flag, false, geo, |i| {
                    let (x, y) = (i % geo.width, i / geo.width);
                    let mut v = translate_source(geo, iso, dir, 1, x, y)
                        .map_or(0.0, |(sx, sy)| src[sy * geo.width + sx]);
                    if sigma > 0.0 {
                        v += sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                    if let Some(s) = sat {
                        v = v.clamp(-s, s);
                    }
                    data[off + i] = v;
                });
            }
        }
        self.record(OpKind::AnalogShift, steps as u32);
    }

    // ----- digital instructions -----

    fn bits_write(&mut self, dst: DReg, result: BitPlane, kind: OpKind) {
        if self.flag_all {
            self.bits[dst.index()] = result;
        } else {
            let old = &self.bits[dst.index()];
            let merged = result.zip_with(&self.flag, |r, f| r & f);
            let keep = old.zip_with(&self.flag, |o, f| o & !f);
            self.bits[dst.index()] = merged.zip_with(&keep, |a, b| a | b);
        }
        self.record(kind, 1);
    }

    pub fn bit_logic(&mut self, dst: DReg, a: DReg, b: DReg, op: BitOp) {
        let pa = &self.bits[a.index()];
        let pb = &self.bits[b.index()];
        let r = match op {
            BitOp::And => pa.zip_with(pb, |x, y| x & y),
            BitOp::Or => pa.zip_with(pb, |x, y| x | y),
            BitOp::Xor => pa.zip_with(pb, |x, y| x ^ y),
            BitOp::AndNot => pa.zip_with(pb, |x, y| x & !y),
        };
        self.bits_write(dst, r, OpKind::BitLogic);
    }

    pub fn bit_not(&mut self, dst: DReg, a: DReg) {
        let r = self.bits[a.index()].map_words(|w| !w);
        self.bits_write(dst, r, OpKind::BitLogic);
    }

    pub fn bit_copy(&mut self, dst: DReg, src: DReg) {
        let r = self.bits[src.index()].clone();
        self.bits_write(dst, r, OpKind::BitLogic);
    }

    /// Flagged constant bit write.
    pub fn bit_write(&mut self, dst: DReg, value: bool) {
        let g = self.geometry;
        let r = if value {
            BitPlane::ones(g.width, g.height)
        } else {
            BitPlane::zeros(g.width, g.height)
        };
        self.bits_write(dst, r, OpKind::BitLogic);
    }

    /// Flagged write of a row/column-addressed pattern.
    pub fn load_mask(&mut self, dst: DReg, pattern: &MaskPattern) {
        let r = pattern.render(self.geometry.width, self.geometry.height);
        self.bits_write(dst, r, OpKind::BitLogic);
    }

    /// Digital counterpart of [`PeArray::shift_analog`]; exact.
    pub fn shift_bits(&mut self, reg: DReg, dir: Direction, steps: usize) {
        if steps == 0 {
            return;
        }
        let geo = self.geometry;
        let iso_mask = |s: usize| {
            self.isolation
                .map(|(bw, bh)| isolation_mask(geo, (bw, bh), dir, s))
        };
        if self.flag_all {
            let mut r = self.bits[reg.index()].shifted(dir, steps);
            if let Some(m) = iso_mask(steps) {
                r = r.zip_with(&m, |a, b| a & b);
            }
            self.bits[reg.index()] = r;
        } else {
            let m1 = iso_mask(1);
            for _ in 0..steps {
                let old = &self.bits[reg.index()];
                let mut r = old.shifted(dir, 1);
                if let Some(m) = &m1 {
                    r = r.zip_with(m, |a, b| a & b);
                }
                let moved = r.zip_with(&self.flag, |a, f| a & f);
                let kept = old.zip_with(&self.flag, |o, f| o & !f);
                self.bits[reg.index()] = moved.zip_with(&kept, |a, b| a | b);
            }
        }
        self.record(OpKind::BitShift, steps as u32);
    }

    // ----- flag -----

    pub fn set_flag(&mut self, pred: FlagPredicate) {
        let geo = self.geometry;
        self.flag = match pred {
            FlagPredicate::All => BitPlane::ones(geo.width, geo.height),
            FlagPredicate::WherePositive(r) => {
                let s = self.analog_slice(r);
                BitPlane::from_fn(geo.width, geo.height, |x, y| s[y * geo.width + x] > 0.0)
            }
            FlagPredicate::WhereNegative(r) => {
                let s = self.analog_slice(r);
                BitPlane::from_fn(geo.width, geo.height, |x, y| s[y * geo.width + x] < 0.0)
            }
            FlagPredicate::WhereBit(r) => self.bits[r.index()].clone(),
        };
        self.flag_all = matches!(pred, FlagPredicate::All) || self.flag.is_all_ones();
        self.record(OpKind::FlagSet, 1);
    }

    // ----- readout -----

    /// Sum of `reg` over flagged PEs plus one summation error draw.
    pub fn global_sum(&mut self, reg: AReg) -> f64 {
        let n = self.geometry.pe_count();
        let data = &self.analog[reg.index() * n..(reg.index() + 1) * n];
        let mut total = 0.0;
        for_each_flagged(&self.flag, self.flag_all, self.geometry, |i| total += data[i]);
        if self.noise.sigma_gsum > 0.0 {
            total += self.noise.sigma_gsum * self.streams.gsum.sample::<f64, _>(StandardNormal);
        }
        self.record(OpKind::GlobalSum, 1);
        total
    }

    /// Coordinates `(x, y)` of set bits in raster order.
    pub fn event_readout(&mut self, reg: DReg) -> Result<Vec<(usize, usize)>, ArrayError> {
        let plane = &self.bits[reg.index()];
        let count = plane.count_ones();
        if count > self.readout_capacity as u64 {
            return Err(ArrayError::CapacityExceeded {
                count,
                capacity: self.readout_capacity,
            });
        }
        let events: Vec<_> = plane.iter_ones().collect();
        self.record(OpKind::ReadoutOverhead, 1);
        self.record(OpKind::EventReadout, events.len() as u32);
        Ok(events)
    }

    // ----- storage upkeep -----

    /// Snaps flagged values to the nearest of `levels`; ties go to the lower level.
    pub fn refresh(&mut self, reg: AReg, levels: &[f64]) -> Result<(), ArrayError> {
        let mut lv: Vec<f64> = levels.iter().copied().filter(|v| v.is_finite()).collect();
        if lv.is_empty() {
            return Err(ArrayError::EmptyLevels);
        }
        lv.sort_by(f64::total_cmp);
        self.analog_apply(reg, reg, reg, 0.0, OpKind::Refresh, |v, _| nearest_level(&lv, v));
        Ok(())
    }

    /// Lets `dt` µs pass: every stored analog value decays and picks up drift.
    pub fn apply_decay(&mut self, dt: f64) -> Result<(), ArrayError> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(ArrayError::NegativeInterval(dt));
        }
        if dt == 0.0 {
            return Ok(());
        }
        let factor = (-self.noise.decay_rate * dt).exp();
        let sigma = self.noise.sigma_op * dt.sqrt();
        for v in &mut self.analog {
            *v *= factor;
            if sigma > 0.0 {
                *v += sigma * self.streams.op.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(())
    }

    // ----- conversion between analog and bit planes -----

    /// Converts flagged values of `src` to `bits.len()`-bit codes over
    /// `[0, range_max]`; `bits[b]` receives bit `b` of the code.
    ///
    /// Modeled as a successive-approximation conversion: one compare (analog
    /// subtract + flag) and one bit write per output bit.
    pub fn convert_to_bits(
        &mut self,
        src: AReg,
        bits: &[DReg],
        range_max: f64,
    ) -> Result<(), ArrayError> {
        check_conversion(bits.len(), range_max)?;
        let geo = self.geometry;
        let n = geo.pe_count();
        let width = bits.len() as u32;
        let codes: Vec<u32> = self.analog[src.index() * n..(src.index() + 1) * n]
            .iter()
            .map(|&v| quant::code(v, width, range_max))
            .collect();
        for (b, &reg) in bits.iter().enumerate() {
            let plane = BitPlane::from_fn(geo.width, geo.height, |x, y| {
                (codes[y * geo.width + x] >> b) & 1 == 1
            });
            if self.flag_all {
                self.bits[reg.index()] = plane;
            } else {
                let kept = self.bits[reg.index()].zip_with(&self.flag, |o, f| o & !f);
                self.bits[reg.index()] = plane
                    .zip_with(&self.flag, |p, f| p & f)
                    .zip_with(&kept, |a, k| a | k);
            }
        }
        for _ in 0..bits.len() {
            self.record(OpKind::AnalogArith, 1);
            self.record(OpKind::FlagSet, 1);
            self.record(OpKind::BitLogic, 1);
        }
        Ok(())
    }

    /// Writes `code · range_max / (2^B − 1)` into flagged PEs of `dst`,
    /// reading the code from `bits` (least significant first). Noiseless.
    pub fn convert_from_bits(
        &mut self,
        dst: AReg,
        bits: &[DReg],
        range_max: f64,
    ) -> Result<(), ArrayError> {
        check_conversion(bits.len(), range_max)?;
        let geo = self.geometry;
        let n = geo.pe_count();
        let width = bits.len() as u32;
        let planes: Vec<&BitPlane> = bits.iter().map(|r| &self.bits[r.index()]).collect();
        let mut values = vec![0.0; n];
        for y in 0..geo.height {
            for x in 0..geo.width {
                let code = planes
                    .iter()
                    .enumerate()
                    .fold(0u32, |c, (b, p)| c | (u32::from(p.get(x, y)) << b));
                values[y * geo.width + x] = quant::value(code, width, range_max);
            }
        }
        let data = &mut self.analog;
        let off = dst.index() * n;
        for_each_flagged(&self.flag, self.flag_all, geo, |i| data[off + i] = values[i]);
        for _ in 0..bits.len() {
            self.record(OpKind::FlagSet, 1);
            self.record(OpKind::AnalogWrite, 1);
        }
        Ok(())
    }
}

fn check_conversion(bits: usize, range_max: f64) -> Result<(), ArrayError> {
    if bits == 0 || bits > 16 || !(range_max.is_finite() && range_max > 0.0) {
        return Err(ArrayError::InvalidConversion);
    }
    Ok(())
}

fn nearest_level(sorted: &[f64], v: f64) -> f64 {
    let mut best = sorted[0];
    let mut best_d = (v - best).abs();
    for &l in &sorted[1..] {
        let d = (v - l).abs();
        if d < best_d {
            best = l;
            best_d = d;
        }
    }
    best
}

/// Calls `f(i)` with the raster index of every flagged PE.
fn for_each_flagged(flag: &BitPlane, all: bool, geo: ArrayGeometry, mut f: impl FnMut(usize)) {
    if all {
        (0..geo.pe_count()).for_each(f);
        return;
    }
    let stride = flag.stride();
    let words = flag.words();
    for y in 0..geo.height {
        for (wi, &word) in words[y * stride..(y + 1) * stride].iter().enumerate() {
            let mut m = word;
            while m != 0 {
                let b = m.trailing_zeros() as usize;
                m &= m - 1;
                f(y * geo.width + wi * 64 + b);
            }
        }
    }
}

/// Where the value arriving at `(x, y)` after `steps` transfers came from,
/// or `None` if it entered through the array (or block) edge.
fn translate_source(
    geo: ArrayGeometry,
    iso: Option<(usize, usize)>,
    dir: Direction,
    steps: usize,
    x: usize,
    y: usize,
) -> Option<(usize, usize)> {
    let (sx, sy) = match dir {
        Direction::East => (x.checked_sub(steps)?, y),
        Direction::West => (x.checked_add(steps).filter(|&v| v < geo.width)?, y),
        Direction::South => (x, y.checked_sub(steps)?),
        Direction::North => (x, y.checked_add(steps).filter(|&v| v < geo.height)?),
    };
    if let Some((bw, bh)) = iso {
        if sx / bw != x / bw || sy / bh != y / bh {
            return None;
        }
    }
    Some((sx, sy))
}

/// Distance of `(x, y)` from the edge that values enter through.
fn entry_distance(
    geo: ArrayGeometry,
    iso: Option<(usize, usize)>,
    dir: Direction,
    x: usize,
    y: usize,
) -> usize {
    let (bw, bh) = iso.unwrap_or((geo.width, geo.height));
    match dir {
        Direction::East => x % bw,
        Direction::West => bw - 1 - x % bw,
        Direction::South => y % bh,
        Direction::North => bh - 1 - y % bh,
    }
}

/// PEs whose value after a `steps` transfer toward `dir` stayed inside its block.
fn isolation_mask(
    geo: ArrayGeometry,
    (bw, bh): (usize, usize),
    dir: Direction,
    steps: usize,
) -> BitPlane {
    let pat = match dir {
        Direction::East => MaskPattern::periodic((bw, bh), steps.min(bw)..bw, 0..bh),
        Direction::West => MaskPattern::periodic((bw, bh), 0..bw.saturating_sub(steps), 0..bh),
        Direction::South => MaskPattern::periodic((bw, bh), 0..bw, steps.min(bh)..bh),
        Direction::North => MaskPattern::periodic((bw, bh), 0..bw, 0..bh.saturating_sub(steps)),
    };
    pat.render(geo.width, geo.height)
}
