//! Binary PGM (P5) dumps of register planes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::array::{AReg, AnalogPlane, BitPlane, DReg, PeArray, DEFAULT_SATURATION};

/// An 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Gray {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if bytes.get(pos) == Some(&b'#') {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ascii"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a P5 file"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if max != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        let pixels = bytes.get(pos + 1..).unwrap_or_default();
        if pixels.len() != width * height {
            return Err(bad("pixel count does not match header"));
        }
        Ok(Self {
            width,
            height,
            pixels: pixels.to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.encode())
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Maps `[-s, s]` linearly onto `[0, 255]`, so 0 lands on 128.
pub fn analog_to_gray(plane: &AnalogPlane, s: f64) -> Gray {
    let pixels = plane
        .as_slice()
        .iter()
        .map(|&v| ((v.clamp(-s, s) + s) / (2.0 * s) * 255.0).round() as u8)
        .collect();
    Gray {
        width: plane.width(),
        height: plane.height(),
        pixels,
    }
}

/// Set bits become 255.
pub fn bits_to_gray(plane: &BitPlane) -> Gray {
    let (w, h) = (plane.width(), plane.height());
    let mut pixels = vec![0; w * h];
    for (x, y) in plane.iter_ones() {
        pixels[y * w + x] = 255;
    }
    Gray {
        width: w,
        height: h,
        pixels,
    }
}

/// Pixels above 127 are set.
pub fn gray_to_bits(g: &Gray) -> BitPlane {
    BitPlane::from_fn(g.width, g.height, |x, y| g.pixels[y * g.width + x] > 127)
}

/// Writes every analog, digital and flag plane of `state` into `dir`, plus
/// `manifest.txt` with one `plane file` line each. Returns the files written.
pub fn dump_state(state: &PeArray, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let s = state.saturation().unwrap_or(DEFAULT_SATURATION);
    let mut manifest = String::new();
    let mut files = Vec::new();
    let mut emit = |name: &str, g: Gray| -> io::Result<()> {
        let file = format!("{name}.pgm");
        g.write(&dir.join(&file))?;
        manifest.push_str(&format!("{name} {file}\n"));
        files.push(dir.join(file));
        Ok(())
    };
    for r in AReg::ALL {
        emit(r.name(), analog_to_gray(&state.analog(r), s))?;
    }
    for r in DReg::ALL {
        emit(r.name(), bits_to_gray(state.bits(r)))?;
    }
    emit("FLAG", bits_to_gray(state.flag()))?;
    fs::write(dir.join("manifest.txt"), manifest)?;
    files.push(dir.join("manifest.txt"));
    Ok(files)
}
