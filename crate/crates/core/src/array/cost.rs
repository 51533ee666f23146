//! Instruction trace and the per-instruction timing model.

use std::fmt;

/// Instruction classes with a distinct modeled duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    /// Host-side register load (test harness boundary, not timed).
    Load,
    /// Analog copy, add, subtract, negate, halve.
    AnalogArith,
    /// Flagged constant write into an analog register.
    AnalogWrite,
    /// One single-PE step of an analog neighbour transfer.
    AnalogShift,
    /// Boolean operation, bit copy, bit write or pattern load.
    BitLogic,
    /// One single-PE step of a digital neighbour transfer.
    BitShift,
    FlagSet,
    GlobalSum,
    /// One address event read out of the array.
    EventReadout,
    /// Fixed setup cost of an address-event readout.
    ReadoutOverhead,
    Refresh,
}

impl OpKind {
    pub const ALL: [OpKind; 11] = [
        OpKind::Load,
        OpKind::AnalogArith,
        OpKind::AnalogWrite,
        OpKind::AnalogShift,
        OpKind::BitLogic,
        OpKind::BitShift,
        OpKind::FlagSet,
        OpKind::GlobalSum,
        OpKind::EventReadout,
        OpKind::ReadoutOverhead,
        OpKind::Refresh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Load => "load",
            OpKind::AnalogArith => "analog_arith",
            OpKind::AnalogWrite => "analog_write",
            OpKind::AnalogShift => "analog_shift",
            OpKind::BitLogic => "bit_logic",
            OpKind::BitShift => "bit_shift",
            OpKind::FlagSet => "flag_set",
            OpKind::GlobalSum => "global_sum",
            OpKind::EventReadout => "event_readout",
            OpKind::ReadoutOverhead => "readout_overhead",
            OpKind::Refresh => "refresh",
        }
    }
}

/// Network component an instruction is attributed to in cost reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Load,
    Duplication,
    Convolution,
    Relu,
    MaxPool,
    ShrinkDuplicate,
    FeatureMapCreation,
    FullyConnected,
    StackCount,
    Refresh,
    Unlabeled,
}

impl Component {
    /// Report order.
    pub const ORDER: [Component; 11] = [
        Component::Load,
        Component::Duplication,
        Component::Convolution,
        Component::Relu,
        Component::MaxPool,
        Component::ShrinkDuplicate,
        Component::FeatureMapCreation,
        Component::FullyConnected,
        Component::StackCount,
        Component::Refresh,
        Component::Unlabeled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Load => "Load",
            Component::Duplication => "Digit Duplication",
            Component::Convolution => "Convolutional Layer/s",
            Component::Relu => "ReLU",
            Component::MaxPool => "Max Pooling",
            Component::ShrinkDuplicate => "Feature Map Shrink and Duplicate",
            Component::FeatureMapCreation => "Feature Map Creation",
            Component::FullyConnected => "Fully Connected Layer",
            Component::StackCount => "Stack Count",
            Component::Refresh => "Refresh",
            Component::Unlabeled => "Unlabeled",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Run-length trace record: `count` consecutive instructions of one kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub kind: OpKind,
    pub label: Component,
    pub count: u32,
}

/// Ordered record of every instruction issued to the array.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    entries: Vec<TraceEntry>,
}

impl Trace {
    pub(crate) fn push(&mut self, kind: OpKind, label: Component, count: u32) {
        if count == 0 {
            return;
        }
        self.entries.push(TraceEntry { kind, label, count });
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    /// Number of instructions issued (a shift of `k` steps counts `k`).
    pub fn instruction_count(&self) -> u64 {
        self.entries.iter().map(|e| u64::from(e.count)).sum()
    }

    /// Instruction count per op kind, in `OpKind` order.
    pub fn kind_counts(&self) -> Vec<(OpKind, u64)> {
        let mut counts = [0u64; OpKind::ALL.len()];
        for e in &self.entries {
            counts[e.kind as usize] += u64::from(e.count);
        }
        OpKind::ALL
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c > 0)
            .map(|(k, c)| (*k, c))
            .collect()
    }

    /// Instruction count per op kind (indexed by `OpKind as usize`) for
    /// entries labeled `c`.
    pub fn component_kind_counts(&self, c: Component) -> [u64; OpKind::ALL.len()] {
        let mut counts = [0u64; OpKind::ALL.len()];
        for e in self.entries.iter().filter(|e| e.label == c) {
            counts[e.kind as usize] += u64::from(e.count);
        }
        counts
    }

    /// Entries recorded after the first `from` entries.
    pub fn since(&self, from: usize) -> Trace {
        Trace {
            entries: self.entries[from.min(self.entries.len())..].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Modeled duration in microseconds of each instruction kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub load: f64,
    pub analog_arith: f64,
    pub analog_write: f64,
    pub analog_shift: f64,
    pub bit_logic: f64,
    pub bit_shift: f64,
    pub flag_set: f64,
    pub global_sum: f64,
    pub event_readout: f64,
    pub readout_overhead: f64,
    pub refresh: f64,
}

impl Default for CostModel {
    /// Fitted once to the chip's two-layer component times; see
    /// `netplan::fit_costs`. Readout and refresh costs are not constrained
    /// by those rows and keep their prior values.
    fn default() -> Self {
        Self {
            load: 0.0,
            analog_arith: 0.6806,
            analog_write: 0.1870,
            analog_shift: 0.04393,
            bit_logic: 0.06544,
            bit_shift: 0.08901,
            flag_set: 0.1565,
            global_sum: 0.3305,
            event_readout: 0.4,
            readout_overhead: 2.0,
            refresh: 0.2,
        }
    }
}

impl CostModel {
    pub fn cost(&self, kind: OpKind) -> f64 {
        match kind {
            OpKind::Load => self.load,
            OpKind::AnalogArith => self.analog_arith,
            OpKind::AnalogWrite => self.analog_write,
            OpKind::AnalogShift => self.analog_shift,
            OpKind::BitLogic => self.bit_logic,
            OpKind::BitShift => self.bit_shift,
            OpKind::FlagSet => self.flag_set,
            OpKind::GlobalSum => self.global_sum,
            OpKind::EventReadout => self.event_readout,
            OpKind::ReadoutOverhead => self.readout_overhead,
            OpKind::Refresh => self.refresh,
        }
    }

    pub fn set_cost(&mut self, kind: OpKind, us: f64) {
        let slot = match kind {
            OpKind::Load => &mut self.load,
            OpKind::AnalogArith => &mut self.analog_arith,
            OpKind::AnalogWrite => &mut self.analog_write,
            OpKind::AnalogShift => &mut self.analog_shift,
            OpKind::BitLogic => &mut self.bit_logic,
            OpKind::BitShift => &mut self.bit_shift,
            OpKind::FlagSet => &mut self.flag_set,
            OpKind::GlobalSum => &mut self.global_sum,
            OpKind::EventReadout => &mut self.event_readout,
            OpKind::ReadoutOverhead => &mut self.readout_overhead,
            OpKind::Refresh => &mut self.refresh,
        };
        *slot = us;
    }

    /// Fits per-kind costs to measured component times.
    ///
    /// Each row pairs one component's instruction counts with its target
    /// time. Minimizes the summed squared relative row errors plus
    /// `ridge` times the squared relative deviation from `self`, which
    /// keeps kinds the rows cannot separate at their prior ratio. Kinds
    /// with a zero prior stay zero.
    pub fn fit(&self, rows: &[([u64; OpKind::ALL.len()], f64)], ridge: f64) -> CostModel {
        let kinds: Vec<OpKind> = OpKind::ALL.iter().copied().filter(|&k| self.cost(k) > 0.0).collect();
        let n = kinds.len();
        // Normal equations in y_k = x_k / prior_k.
        let mut m = vec![vec![0.0; n + 1]; n];
        for (counts, target) in rows {
            let a: Vec<f64> = kinds
                .iter()
                .map(|&k| counts[k as usize] as f64 * self.cost(k) / target)
                .collect();
            for i in 0..n {
                for j in 0..n {
                    m[i][j] += a[i] * a[j];
                }
                m[i][n] += a[i];
            }
        }
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += ridge;
            row[n] += ridge;
        }
        let y = solve(m);
        let mut out = *self;
        for (k, y) in kinds.iter().zip(y) {
            out.set_cost(*k, (self.cost(*k) * y).max(0.0));
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        OpKind::ALL
            .iter()
            .all(|&k| self.cost(k).is_finite() && self.cost(k) >= 0.0)
    }

    /// Total modeled time of a trace in microseconds.
    pub fn modeled_us(&self, trace: &Trace) -> f64 {
        trace
            .entries()
            .iter()
            .map(|e| self.cost(e.kind) * f64::from(e.count))
            .sum()
    }

    /// Groups a trace by component label. Host loads are excluded.
    pub fn report(&self, trace: &Trace) -> TraceReport {
        let mut totals = [0.0f64; Component::ORDER.len()];
        let mut seen = [false; Component::ORDER.len()];
        for e in trace.entries() {
            if e.label == Component::Load || e.kind == OpKind::Load {
                continue;
            }
            let i = e.label as usize;
            totals[i] += self.cost(e.kind) * f64::from(e.count);
            seen[i] = true;
        }
        let rows = Component::ORDER
            .iter()
            .filter(|c| seen[**c as usize])
            .map(|c| (*c, totals[*c as usize]))
            .collect();
        TraceReport { rows }
    }
}

/// Gauss-Jordan elimination with partial pivoting on an augmented matrix.
fn solve(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .expect("non-empty");
        m.swap(c, p);
        let pivot = m[c][c];
        for v in m[c].iter_mut() {
            *v /= pivot;
        }
        let row = m[c].clone();
        for (r, other) in m.iter_mut().enumerate() {
            if r != c {
                let f = other[c];
                for (v, &w) in other.iter_mut().zip(&row) {
                    *v -= f * w;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n]).collect()
}

/// Modeled time per component plus totals.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceReport {
    pub rows: Vec<(Component, f64)>,
}

impl TraceReport {
    pub fn total_us(&self) -> f64 {
        self.rows.iter().map(|(_, us)| us).sum()
    }

    /// Classifications per second at the modeled total (0 for an empty report).
    pub fn fps(&self) -> f64 {
        let t = self.total_us();
        if t > 0.0 {
            1e6 / t
        } else {
            0.0
        }
    }

    pub fn component_us(&self, c: Component) -> f64 {
        self.rows
            .iter()
            .find(|(k, _)| *k == c)
            .map_or(0.0, |(_, us)| *us)
    }
}

impl fmt::Display for TraceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<34} {:>12}", "Component", "Modeled µs")?;
        for (c, us) in &self.rows {
            writeln!(f, "{:<34} {:>12.2}", c.name(), us)?;
        }
        writeln!(
            f,
            "{:<34} {:>12.2}  ({:.0} fps)",
            "Total",
            self.total_us(),
            self.fps()
        )
    }
}
