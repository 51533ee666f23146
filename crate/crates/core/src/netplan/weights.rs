//! Quantized weights and their text serialization.
//!
//! ```text
//! PPANET 1
//! net TWO_LAYER
//! conv 0 64 4
//! 1 0 1 1          (64·4 rows of 4 bits, filters in block raster order)
//! ...
//! fc 10 4096
//! -1 0 1 ...       (one row of 4096 entries per neuron)
//! end
//! ```

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use super::{NetworkSpec, PlanError, Preset};
use crate::kernels::{ConvFilter, TernaryFcWeights, NEURONS};

/// Binary conv filters per layer plus the ternary FC matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedWeights {
    pub preset: Preset,
    pub conv: Vec<Vec<ConvFilter>>,
    pub fc: TernaryFcWeights,
}

impl QuantizedWeights {
    /// Uniformly random weights shaped for `spec`.
    pub fn random(spec: &NetworkSpec, rng: &mut impl Rng) -> Self {
        let conv = (0..spec.maps.len())
            .map(|l| {
                (0..spec.filter_count(l))
                    .map(|_| ConvFilter::from_fn(spec.k, |_, _| rng.random_bool(0.5)))
                    .collect()
            })
            .collect();
        let fc = TernaryFcWeights::from_fn(spec.fc_inputs(), |_, _| rng.random_range(-1..=1))
            .expect("entries in range");
        Self {
            preset: spec.preset,
            conv,
            fc,
        }
    }

    /// Errors unless every shape matches `spec`.
    pub fn check(&self, spec: &NetworkSpec) -> Result<(), PlanError> {
        let bad = |s: String| Err(PlanError::WeightShape(s));
        if self.preset != spec.preset {
            return bad(format!("weights are {}, network is {}", self.preset, spec.preset));
        }
        if self.conv.len() != spec.maps.len() {
            return bad(format!(
                "{} conv layers, expected {}",
                self.conv.len(),
                spec.maps.len()
            ));
        }
        for (l, filters) in self.conv.iter().enumerate() {
            if filters.len() != spec.filter_count(l) {
                return bad(format!(
                    "conv {l} has {} filters, expected {}",
                    filters.len(),
                    spec.filter_count(l)
                ));
            }
            if let Some(f) = filters.iter().find(|f| f.k() != spec.k) {
                return bad(format!("conv {l} has a {0}x{0} filter, expected {1}x{1}", f.k(), spec.k));
            }
        }
        if self.fc.inputs() != spec.fc_inputs() {
            return bad(format!(
                "fc has {} inputs, expected {}",
                self.fc.inputs(),
                spec.fc_inputs()
            ));
        }
        Ok(())
    }
}

pub fn serialize(w: &QuantizedWeights) -> String {
    let mut s = String::new();
    s.push_str("PPANET 1\n");
    let _ = writeln!(s, "net {}", w.preset.name());
    for (l, filters) in w.conv.iter().enumerate() {
        let k = filters.first().map_or(4, ConvFilter::k);
        let _ = writeln!(s, "conv {l} {} {k}", filters.len());
        for f in filters {
            for row in f.bits().chunks(k) {
                let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
        }
    }
    let _ = writeln!(s, "fc {NEURONS} {}", w.fc.inputs());
    for n in 0..NEURONS {
        let line: Vec<String> = w.fc.row(n).iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s.push_str("end\n");
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l.trim_end_matches('\r')))
            }
            None => Err(ParseError {
                line: self.last + 1,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        message: message.into(),
    })
}

fn numbers(line: usize, text: &str, count: usize) -> Result<Vec<i64>, ParseError> {
    let vals = text
        .split_whitespace()
        .map(|t| t.parse::<i64>())
        .collect::<Result<Vec<_>, _>>()
        .or_else(|_| err(line, format!("non-integer entry in {text:?}")))?;
    if vals.len() != count {
        return err(line, format!("expected {count} entries, found {}", vals.len()));
    }
    Ok(vals)
}

fn header<'a>(line: usize, text: &'a str, key: &str) -> Result<Vec<&'a str>, ParseError> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return err(line, format!("expected `{key} ...`, found {text:?}"));
    }
    Ok(parts.collect())
}

fn count_field(line: usize, s: &str) -> Result<usize, ParseError> {
    s.parse()
        .or_else(|_| err(line, format!("invalid count {s:?}")))
}

pub fn parse(text: &str) -> Result<QuantizedWeights, ParseError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (n, l) = lines.next("`PPANET 1`")?;
    if l != "PPANET 1" {
        return err(n, format!("expected `PPANET 1`, found {l:?}"));
    }
    let (n, l) = lines.next("`net ...`")?;
    let net = header(n, l, "net")?;
    let preset = match net.as_slice() {
        [name] => Preset::from_name(name).map_or_else(|| err(n, format!("unknown net {name:?}")), Ok)?,
        _ => return err(n, "expected `net TWO_LAYER|THREE_LAYER`"),
    };
    let mut conv = Vec::new();
    let fc = loop {
        let (n, l) = lines.next("`conv`, `fc` or `end`")?;
        match l.split_whitespace().next() {
            Some("conv") => {
                let f = header(n, l, "conv")?;
                let [index, count, k] = f.as_slice() else {
                    return err(n, "expected `conv <index> <num_filters> <k>`");
                };
                let (index, count, k) = (count_field(n, index)?, count_field(n, count)?, count_field(n, k)?);
                if index != conv.len() {
                    return err(n, format!("conv layer {index} out of order, expected {}", conv.len()));
                }
                if k == 0 {
                    return err(n, "filter size must be positive");
                }
                let mut filters = Vec::with_capacity(count);
                for _ in 0..count {
                    let mut bits = Vec::with_capacity(k * k);
                    for _ in 0..k {
                        let (n, l) = lines.next("a filter row")?;
                        for v in numbers(n, l, k)? {
                            match v {
                                0 => bits.push(false),
                                1 => bits.push(true),
                                _ => return err(n, format!("conv entry {v} is not 0 or 1")),
                            }
                        }
                    }
                    filters.push(ConvFilter::new(k, bits).expect("k*k bits"));
                }
                conv.push(filters);
            }
            Some("fc") => {
                let f = header(n, l, "fc")?;
                let [neurons, inputs] = f.as_slice() else {
                    return err(n, "expected `fc 10 <num_inputs>`");
                };
                if count_field(n, neurons)? != NEURONS {
                    return err(n, format!("fc must have {NEURONS} neurons"));
                }
                let inputs = count_field(n, inputs)?;
                let mut values = Vec::with_capacity(NEURONS * inputs);
                for _ in 0..NEURONS {
                    let (n, l) = lines.next("an fc row")?;
                    for v in numbers(n, l, inputs)? {
                        if !(-1..=1).contains(&v) {
                            return err(n, format!("fc entry {v} is not -1, 0 or 1"));
                        }
                        values.push(v as i8);
                    }
                }
                break TernaryFcWeights::new(inputs, values).expect("validated entries");
            }
            _ => return err(n, format!("expected `conv`, `fc` or `end`, found {l:?}")),
        }
    };
    let (n, l) = lines.next("`end`")?;
    if l != "end" {
        return err(n, format!("expected `end`, found {l:?}"));
    }
    if let Some((i, l)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return err(i + 1, format!("trailing content {l:?}"));
    }
    Ok(QuantizedWeights { preset, conv, fc })
}
