//! Register planes: one value per processing element.

use super::Direction;

/// A grid of analog register values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogPlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl AnalogPlane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds a plane from row-major data. Returns `None` when the length is wrong.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// A grid of single-bit registers, packed 64 PEs per word along each row.
///
/// Padding bits past `width` in the last word of a row are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlane {
    width: usize,
    height: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitPlane {
    pub fn zeros(width: usize, height: usize) -> Self {
        let stride = width.div_ceil(64);
        Self {
            width,
            height,
            stride,
            words: vec![0; stride * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        let mut p = Self::zeros(width, height);
        p.words.iter_mut().for_each(|w| *w = !0);
        p.clear_padding();
        p
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut p = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    p.set(x, y, true);
                }
            }
        }
        p
    }

    /// Set exactly where `col(x) && row(y)`.
    pub fn separable(
        width: usize,
        height: usize,
        col: impl Fn(usize) -> bool,
        row: impl Fn(usize) -> bool,
    ) -> Self {
        let mut p = Self::zeros(width, height);
        let mut pattern = vec![0u64; p.stride];
        for x in (0..width).filter(|&x| col(x)) {
            pattern[x / 64] |= 1 << (x % 64);
        }
        for y in (0..height).filter(|&y| row(y)) {
            p.words[y * p.stride..(y + 1) * p.stride].copy_from_slice(&pattern);
        }
        p
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        (self.words[y * self.stride + x / 64] >> (x % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let w = &mut self.words[y * self.stride + x / 64];
        if value {
            *w |= 1 << (x % 64);
        } else {
            *w &= !(1 << (x % 64));
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn is_all_ones(&self) -> bool {
        self.count_ones() == (self.width * self.height) as u64
    }

    /// Coordinates of set bits in raster order (row by row, west to east).
    pub fn iter_ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |y| {
            let row = &self.words[y * self.stride..(y + 1) * self.stride];
            row.iter().enumerate().flat_map(move |(wi, &word)| {
                let mut w = word;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some((wi * 64 + b, y))
                })
            })
        })
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub(crate) fn stride(&self) -> usize {
        self.stride
    }

    fn last_word_mask(&self) -> u64 {
        match self.width % 64 {
            0 => !0,
            r => (1u64 << r) - 1,
        }
    }

    pub(crate) fn clear_padding(&mut self) {
        let mask = self.last_word_mask();
        if mask == !0 {
            return;
        }
        for y in 0..self.height {
            self.words[y * self.stride + self.stride - 1] &= mask;
        }
    }

    /// Elementwise combination with another plane of the same shape.
    pub(crate) fn zip_with(&self, other: &BitPlane, f: impl Fn(u64, u64) -> u64) -> BitPlane {
        let mut out = self.clone();
        for (o, &b) in out.words.iter_mut().zip(&other.words) {
            *o = f(*o, b);
        }
        out.clear_padding();
        out
    }

    pub(crate) fn map_words(&self, f: impl Fn(u64) -> u64) -> BitPlane {
        let mut out = self.clone();
        out.words.iter_mut().for_each(|w| *w = f(*w));
        out.clear_padding();
        out
    }

    /// Translates the plane `steps` PEs toward `dir`, filling vacated cells with 0.
    pub fn shifted(&self, dir: Direction, steps: usize) -> BitPlane {
        let mut out = BitPlane::zeros(self.width, self.height);
        if steps == 0 {
            return self.clone();
        }
        let s = self.stride;
        match dir {
            Direction::North | Direction::South => {
                if steps >= self.height {
                    return out;
                }
                for y in 0..self.height {
                    let src = match dir {
                        Direction::North => y + steps,
                        _ => match y.checked_sub(steps) {
                            Some(v) => v,
                            None => continue,
                        },
                    };
                    if src >= self.height {
                        continue;
                    }
                    out.words[y * s..(y + 1) * s]
                        .copy_from_slice(&self.words[src * s..(src + 1) * s]);
                }
            }
            Direction::East | Direction::West => {
                if steps >= self.width {
                    return out;
                }
                let ws = steps / 64;
                let bs = (steps % 64) as u32;
                for y in 0..self.height {
                    let row = &self.words[y * s..(y + 1) * s];
                    let dst = &mut out.words[y * s..(y + 1) * s];
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d = if dir == Direction::East {
                            // bit x takes bit x - steps
                            let hi = i.checked_sub(ws).map_or(0, |j| row[j]);
                            let lo = i.checked_sub(ws + 1).map_or(0, |j| row[j]);
                            if bs == 0 {
                                hi
                            } else {
                                (hi << bs) | (lo >> (64 - bs))
                            }
                        } else {
                            let lo = row.get(i + ws).copied().unwrap_or(0);
                            let hi = row.get(i + ws + 1).copied().unwrap_or(0);
                            if bs == 0 {
                                lo
                            } else {
                                (lo >> bs) | (hi << (64 - bs))
                            }
                        };
                    }
                }
                out.clear_padding();
            }
        }
        out
    }
}
