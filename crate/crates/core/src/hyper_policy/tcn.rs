//! Causal dilated convolution stack over positional encodings of time.
//!
//! Layer `l` uses dilation `2^l`. The window fed to the stack holds the
//! encodings of times `t-b ..= t` (negative times clamped to 0) and is
//! zero-padded on the left inside each layer, so the output at `t` depends on
//! exactly those `b+1` encodings.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoding::PositionalEncoding;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnSpec {
    pub encoding: PositionalEncoding,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    cin: usize,
    cout: usize,
    dil: usize,
    w_off: usize,
    b_off: usize,
}

/// Intermediate values kept by the forward pass for the reverse sweep.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `acts[0]` is the encoding window; `acts[l+1]` the rectified output of layer `l`.
    acts: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

impl TcnSpec {
    pub fn new(encoding: PositionalEncoding, channels: Vec<usize>, kernel: usize, out_dim: usize) -> Result<Self> {
        let s = Self { encoding, channels, kernel, out_dim };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("convolution channels must be a nonempty list of positive sizes".into()));
        }
        if self.channels.len() > 20 {
            return Err(Error::Config("at most 20 convolution layers are supported".into()));
        }
        if self.kernel < 1 {
            return Err(Error::Config("kernel size must be at least 1".into()));
        }
        if self.out_dim == 0 {
            return Err(Error::Config("output dimension must be positive".into()));
        }
        PositionalEncoding::new(self.encoding.dim(), self.encoding.base()).map(|_| ())
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    /// `b = 2^(l-1) (k-1)`.
    pub fn receptive_field(&self) -> u64 {
        (1u64 << (self.depth() - 1)) * (self.kernel as u64 - 1)
    }

    fn window_len(&self) -> usize {
        self.receptive_field() as usize + 1
    }

    fn layers(&self) -> impl Iterator<Item = Layer> + '_ {
        let k = self.kernel;
        let mut cin = self.encoding.dim();
        let mut off = 0;
        self.channels.iter().enumerate().map(move |(l, &cout)| {
            let w_off = off;
            let b_off = w_off + cout * cin * k;
            off = b_off + cout;
            let layer = Layer { cin, cout, dil: 1 << l, w_off, b_off };
            cin = cout;
            layer
        })
    }

    fn head_offset(&self) -> usize {
        self.layers().last().map(|l| l.b_off + l.cout).unwrap_or(0)
    }

    fn last_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    pub fn num_params(&self) -> usize {
        self.head_offset() + self.out_dim * self.last_channels() + self.out_dim
    }

    /// Uniform in `±1/sqrt(fan_in)` for every weight and bias.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w = vec![0.0; self.num_params()];
        let k = self.kernel;
        for l in self.layers() {
            let bound = 1.0 / math::sqrt((l.cin * k) as f64);
            for x in &mut w[l.w_off..l.b_off + l.cout] {
                *x = rng.random_range(-bound..bound);
            }
        }
        let h = self.head_offset();
        let bound = 1.0 / math::sqrt(self.last_channels() as f64);
        for x in &mut w[h..] {
            *x = rng.random_range(-bound..bound);
        }
        w
    }

    /// Encodings of `t-b ..= t`, clamped at 0, laid out position-major.
    pub fn window(&self, t: u64) -> Vec<f64> {
        let d = self.encoding.dim();
        let n = self.window_len();
        let b = self.receptive_field();
        let mut win = vec![0.0; n * d];
        for p in 0..n {
            let tau = (t + p as u64).saturating_sub(b);
            self.encoding.encode_into(tau, &mut win[p * d..(p + 1) * d]);
        }
        win
    }

    /// Window assembled from encodings precomputed for times `first ..`.
    pub fn window_from_cache(&self, t: u64, first: u64, cache: &[f64]) -> Vec<f64> {
        let d = self.encoding.dim();
        let n = self.window_len();
        let b = self.receptive_field();
        let mut win = vec![0.0; n * d];
        for p in 0..n {
            let tau = (t + p as u64).saturating_sub(b);
            let i = (tau - first) as usize;
            win[p * d..(p + 1) * d].copy_from_slice(&cache[i * d..(i + 1) * d]);
        }
        win
    }

    pub fn forward(&self, w: &[f64], window: &[f64]) -> Vec<f64> {
        self.forward_tape(w, window).out
    }

    pub fn forward_tape(&self, w: &[f64], window: &[f64]) -> Tape {
        debug_assert_eq!(w.len(), self.num_params());
        let n = self.window_len();
        let k = self.kernel;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.depth() + 1);
        acts.push(window.to_vec());
        for l in self.layers() {
            let x = acts.last().unwrap();
            let mut y = vec![0.0; n * l.cout];
            for p in 0..n {
                for o in 0..l.cout {
                    let mut s = w[l.b_off + o];
                    for j in 0..k {
                        let back = (k - 1 - j) * l.dil;
                        if back > p {
                            continue;
                        }
                        let q = p - back;
                        let xrow = &x[q * l.cin..(q + 1) * l.cin];
                        let wrow = l.w_off + (o * l.cin) * k;
                        for (c, xv) in xrow.iter().enumerate() {
                            s += w[wrow + c * k + j] * xv;
                        }
                    }
                    y[p * l.cout + o] = if s > 0.0 { s } else { 0.0 };
                }
            }
            acts.push(y);
        }
        let h = self.head_offset();
        let cl = self.last_channels();
        let last = &acts.last().unwrap()[(n - 1) * cl..n * cl];
        let bias_off = h + self.out_dim * cl;
        let out = (0..self.out_dim)
            .map(|d| {
                let mut s = w[bias_off + d];
                for c in 0..cl {
                    s += w[h + d * cl + c] * last[c];
                }
                s
            })
            .collect();
        Tape { acts, out }
    }

    /// Adds `J^T cot` to `grad`, where `J` is the Jacobian of the output w.r.t. the weights.
    pub fn backward(&self, w: &[f64], tape: &Tape, cot: &[f64], grad: &mut [f64]) {
        let n = self.window_len();
        let k = self.kernel;
        let h = self.head_offset();
        let cl = self.last_channels();
        let bias_off = h + self.out_dim * cl;
        let depth = self.depth();

        let mut g_act = vec![0.0; n * cl];
        {
            let last = &tape.acts[depth][(n - 1) * cl..n * cl];
            for d in 0..self.out_dim {
                let c_d = cot[d];
                if c_d == 0.0 {
                    continue;
                }
                grad[bias_off + d] += c_d;
                for c in 0..cl {
                    grad[h + d * cl + c] += c_d * last[c];
                    g_act[(n - 1) * cl + c] += c_d * w[h + d * cl + c];
                }
            }
        }

        let layers: Vec<Layer> = self.layers().collect();
        for (li, l) in layers.iter().enumerate().rev() {
            let x = &tape.acts[li];
            let y = &tape.acts[li + 1];
            let mut g_x = if li > 0 { vec![0.0; n * l.cin] } else { Vec::new() };
            for p in 0..n {
                for o in 0..l.cout {
                    let idx = p * l.cout + o;
                    // rectifier: zero output means zero local derivative
                    if y[idx] <= 0.0 {
                        continue;
                    }
                    let g = g_act[idx];
                    if g == 0.0 {
                        continue;
                    }
                    grad[l.b_off + o] += g;
                    let wrow = l.w_off + (o * l.cin) * k;
                    for j in 0..k {
                        let back = (k - 1 - j) * l.dil;
                        if back > p {
                            continue;
                        }
                        let q = p - back;
                        for c in 0..l.cin {
                            grad[wrow + c * k + j] += g * x[q * l.cin + c];
                            if li > 0 {
                                g_x[q * l.cin + c] += g * w[wrow + c * k + j];
                            }
                        }
                    }
                }
            }
            g_act = g_x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyper_policy::encoding::DEFAULT_BASE;
    use crate::rng::{stream, Stream};

    fn spec(out: usize) -> TcnSpec {
        TcnSpec::new(PositionalEncoding::new(8, DEFAULT_BASE).unwrap(), vec![8, 8, 4], 3, out).unwrap()
    }

    #[test]
    fn receptive_field_default() {
        let s = spec(3);
        assert_eq!(s.receptive_field(), 8);
        assert_eq!(s.window(100).len(), 9 * 8);
    }

    #[test]
    fn param_count() {
        // 8*8*3+8, 8*8*3+8, 4*8*3+4, head 3*4+3
        assert_eq!(spec(3).num_params(), 200 + 200 + 100 + 15);
    }

    #[test]
    fn cached_window_is_bitwise_equal() {
        let s = spec(2);
        let w = s.init_params(&mut stream(1, Stream::Init));
        let first = 0u64;
        let mut cache = vec![0.0; 40 * 8];
        for t in 0..40u64 {
            s.encoding.encode_into(t, &mut cache[t as usize * 8..(t as usize + 1) * 8]);
        }
        for t in [0u64, 3, 8, 20, 31] {
            let a = s.forward(&w, &s.window(t));
            let b = s.forward(&w, &s.window_from_cache(t, first, &cache));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let s = spec(2);
        let mut rng = stream(5, Stream::Init);
        let w = s.init_params(&mut rng);
        let win = s.window(57);
        let cot = [0.7, -1.3];
        let tape = s.forward_tape(&w, &win);
        let mut g = vec![0.0; w.len()];
        s.backward(&w, &tape, &cot, &mut g);
        let f = |w: &[f64]| {
            let o = s.forward(w, &win);
            cot[0] * o[0] + cot[1] * o[1]
        };
        let eps = 1e-6;
        for i in (0..w.len()).step_by(7) {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += eps;
            wm[i] -= eps;
            let fd = (f(&wp) - f(&wm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
    }
}
