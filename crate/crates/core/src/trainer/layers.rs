//! Channels-last f32 kernels for training: sparse scatter convolution,
//! 4×4 max pooling and the ternary FC layer.
//!
//! Tensors are `[y][x][c]`. Conv weights are `[tap][cin][cout]` with
//! `tap = i·k + j`, so the innermost loops run over contiguous outputs.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub side: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn weights(&self) -> usize {
        self.k * self.k * self.cin * self.cout
    }

    pub fn inputs(&self) -> usize {
        self.side * self.side * self.cin
    }

    pub fn outputs(&self) -> usize {
        self.side * self.side * self.cout
    }

    /// Visits every (input position, tap, output position) triple inside
    /// the plane: output (y, x) reads input (y + i, x + j).
    #[inline]
    fn for_taps(&self, py: usize, px: usize, mut f: impl FnMut(usize, usize)) {
        for i in 0..self.k.min(py + 1) {
            for j in 0..self.k.min(px + 1) {
                f(i * self.k + j, (py - i) * self.side + px - j);
            }
        }
    }
}

/// Top-left-anchored correlation with zero padding.
pub(crate) fn conv_forward(s: &ConvShape, x: &[f32], w: &[f32], out: &mut [f32]) {
    out.fill(0.0);
    let (cin, cout) = (s.cin, s.cout);
    for py in 0..s.side {
        for px in 0..s.side {
            for ci in 0..cin {
                let v = x[(py * s.side + px) * cin + ci];
                if v == 0.0 {
                    continue;
                }
                s.for_taps(py, px, |tap, o| {
                    let wrow = &w[(tap * cin + ci) * cout..][..cout];
                    let orow = &mut out[o * cout..][..cout];
                    for (a, b) in orow.iter_mut().zip(wrow) {
                        *a += v * b;
                    }
                });
            }
        }
    }
}

/// Accumulates weight gradients into `dw` and, when given, input
/// gradients into `dx`.
pub(crate) fn conv_backward(
    s: &ConvShape,
    x: &[f32],
    w: &[f32],
    dout: &[f32],
    dw: &mut [f32],
    mut dx: Option<&mut [f32]>,
) {
    let (cin, cout) = (s.cin, s.cout);
    for py in 0..s.side {
        for px in 0..s.side {
            for ci in 0..cin {
                let xi = (py * s.side + px) * cin + ci;
                let v = x[xi];
                if v == 0.0 && dx.is_none() {
                    continue;
                }
                let mut acc = 0.0;
                s.for_taps(py, px, |tap, o| {
                    let drow = &dout[o * cout..][..cout];
                    let base = (tap * cin + ci) * cout;
                    if v != 0.0 {
                        for (g, d) in dw[base..base + cout].iter_mut().zip(drow) {
                            *g += v * d;
                        }
                    }
                    if dx.is_some() {
                        acc += w[base..base + cout].iter().zip(drow).map(|(a, b)| a * b).sum::<f32>();
                    }
                });
                if let Some(dx) = dx.as_deref_mut() {
                    dx[xi] += acc;
                }
            }
        }
    }
}

/// ReLU followed by 4×4 max pooling; records the winning input index of
/// every output (first in raster order on ties).
pub(crate) fn relu_pool4(side: usize, c: usize, x: &[f32], out: &mut [f32], arg: &mut [usize]) {
    let p = side / 4;
    for oy in 0..p {
        for ox in 0..p {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                let mut at = 0;
                for dy in 0..4 {
                    for dx in 0..4 {
                        let i = ((oy * 4 + dy) * side + ox * 4 + dx) * c + ch;
                        if x[i] > best {
                            best = x[i];
                            at = i;
                        }
                    }
                }
                let o = (oy * p + ox) * c + ch;
                out[o] = best.max(0.0);
                arg[o] = at;
            }
        }
    }
}

/// Routes pooled gradients back to the winners, gated by the ReLU.
pub(crate) fn relu_pool4_backward(out: &[f32], arg: &[usize], dout: &[f32], dx: &mut [f32]) {
    dx.fill(0.0);
    for ((&o, &a), &d) in out.iter().zip(arg).zip(dout) {
        if o > 0.0 {
            dx[a] += d;
        }
    }
}

/// Position in a channels-last `[p][p][c]` tensor of canonical
/// (map-major, row, column) index `i`.
pub(crate) fn canonical_to_channels_last(p: usize, c: usize) -> Vec<usize> {
    (0..c * p * p)
        .map(|i| {
            let (m, r) = (i / (p * p), i % (p * p));
            r * c + m
        })
        .collect()
}
