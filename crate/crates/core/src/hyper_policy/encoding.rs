use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub const DEFAULT_BASE: f64 = 10_000.0;

/// Sinusoidal time embedding with geometrically spaced frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncoding {
    dim: usize,
    base: f64,
}

impl PositionalEncoding {
    pub fn new(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Config(alloc::format!("encoding dimension must be even and positive, got {dim}")));
        }
        if !(base.is_finite() && base > 1.0) {
            return Err(Error::Config(alloc::format!("encoding base must exceed 1, got {base}")));
        }
        Ok(Self { dim, base })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn encode_into(&self, t: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let tf = t as f64;
        for i in 0..self.dim / 2 {
            let freq = math::powf(self.base, -(2.0 * i as f64) / self.dim as f64);
            let x = tf * freq;
            out[2 * i] = libm::sin(x);
            out[2 * i + 1] = libm::cos(x);
        }
    }

    pub fn encode(&self, t: u64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.encode_into(t, &mut v);
        v
    }
}

/// Free-function form of [`PositionalEncoding::encode`].
pub fn encode_time(t: u64, enc: &PositionalEncoding) -> Vec<f64> {
    enc.encode(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin() {
        let e = PositionalEncoding::new(4, DEFAULT_BASE).unwrap();
        assert_eq!(e.encode(0), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn unit_time_two_dims() {
        let e = PositionalEncoding::new(2, DEFAULT_BASE).unwrap();
        let v = e.encode(1);
        assert!((v[0] - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!((v[1] - 0.540_302_305_868_139_8).abs() < 1e-15);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(PositionalEncoding::new(3, DEFAULT_BASE), Err(Error::Config(_))));
    }

    #[test]
    fn bounded() {
        let e = PositionalEncoding::new(8, DEFAULT_BASE).unwrap();
        for t in [0u64, 1, 17, 999, 123_456_789] {
            assert!(e.encode(t).iter().all(|x| x.abs() <= 1.0));
        }
    }
}
