//! Simulator of a SIMD pixel processor array running binary/ternary CNNs
//! with their weights stored inside the pixels.

pub mod array;
pub mod quant;
pub mod kernels;
pub mod netplan;
pub mod oracle;
pub mod trainer;
pub mod mnist;
pub mod pgm;
pub mod eval;
