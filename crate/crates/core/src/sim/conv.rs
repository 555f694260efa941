//! Integer convolution in a shared fixed-point weight domain.
//!
//! `α` and `s_r` are mapped to signed 16-bit fixed point before any integer
//! work. A weight is then `sign·α_q + s_r_q·v` in units of `2^-F`, and both
//! the direct and the split computation are exact integer sums.

use super::SimError;
use crate::quant::MixedLayerWeights;
use crate::sparse::EncodedLayer;

/// Signed 16-bit fixed point with `frac_bits` fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPoint {
    pub frac_bits: u32,
}

impl Default for FixedPoint {
    fn default() -> Self {
        FixedPoint { frac_bits: 12 }
    }
}

impl FixedPoint {
    pub fn quantize(&self, value: f32) -> Result<i64, SimError> {
        let q = (value as f64 * (1u64 << self.frac_bits) as f64).round();
        if !(i16::MIN as f64..=i16::MAX as f64).contains(&q) {
            return Err(SimError::ScaleRange { value, frac_bits: self.frac_bits });
        }
        Ok(q as i64)
    }
}

/// Integer activations, `H×W×C`, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub bits: u32,
    pub scale: f64,
    pub data: Vec<i32>,
}

impl QuantTensor {
    pub fn new(h: usize, w: usize, c: usize, bits: u32, data: Vec<i32>) -> Result<Self, SimError> {
        let t = QuantTensor { h, w, c, bits, scale: 1.0, data };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.data.len() != self.h * self.w * self.c {
            return Err(SimError::Shape(format!("{} values for {}x{}x{}", self.data.len(), self.h, self.w, self.c)));
        }
        let lo = -(1i64 << (self.bits - 1));
        let hi = (1i64 << (self.bits - 1)) - 1;
        match self.data.iter().position(|&v| !(lo..=hi).contains(&(v as i64))) {
            Some(index) => Err(SimError::Activation { value: self.data[index], index, bits: self.bits }),
            None => Ok(()),
        }
    }

    /// Value at `(y, x, c)` with zero padding outside the frame.
    pub fn at(&self, y: isize, x: isize, c: usize) -> i64 {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            0
        } else {
            self.data[(y as usize * self.w + x as usize) * self.c + c] as i64
        }
    }
}

/// Integer accumulators, `H×W×M`, channel-fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccTensor {
    pub h: usize,
    pub w: usize,
    pub m: usize,
    pub data: Vec<i64>,
}

impl AccTensor {
    fn zeros(h: usize, w: usize, m: usize) -> Self {
        AccTensor { h, w, m, data: vec![0; h * w * m] }
    }

    pub fn get(&self, y: usize, x: usize, m: usize) -> i64 {
        self.data[(y * self.w + x) * self.m + m]
    }

    fn add(&mut self, y: usize, x: usize, m: usize, v: i64) {
        self.data[(y * self.w + x) * self.m + m] += v;
    }

    fn check(&self, q_s: u32) -> Result<(), SimError> {
        let hi = (1i128 << (q_s - 1)) - 1;
        for (i, &v) in self.data.iter().enumerate() {
            if (v as i128) > hi || (v as i128) < -hi - 1 {
                let (pix, m) = (i / self.m, i % self.m);
                return Err(SimError::Overflow { y: pix / self.w, x: pix % self.w, m, value: v, q_s });
            }
        }
        Ok(())
    }
}

/// Fixed-point weights, `M×N×K×K` like the float tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntWeights {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub data: Vec<i64>,
}

impl IntWeights {
    pub fn get(&self, m: usize, c: usize, ky: usize, kx: usize) -> i64 {
        self.data[((m * self.n + c) * self.k + ky) * self.k + kx]
    }
}

/// Maps a mixed layer to fixed-point effective weights.
pub fn int_weights(mixed: &MixedLayerWeights, fp: FixedPoint) -> Result<IntWeights, SimError> {
    let len = mixed.filter_len();
    let s_r = fp.quantize(mixed.residual_scale)?;
    let mut data = Vec::with_capacity(len * mixed.m as usize);
    for f in &mixed.filters {
        let alpha = fp.quantize(f.alpha)?;
        let start = data.len();
        data.extend(f.negative.iter().map(|&neg| if neg { -alpha } else { alpha }));
        for r in &f.residuals {
            data[start + r.pos as usize] += s_r * r.value as i64;
        }
    }
    Ok(IntWeights { m: mixed.m as usize, n: mixed.n as usize, k: mixed.k as usize, data })
}

fn pad(k: usize) -> isize {
    (k as isize - 1) / 2
}

/// Stride-1 same-padded convolution; accumulators must fit `q_s` bits.
pub fn direct_conv(input: &QuantTensor, weights: &IntWeights, q_s: u32) -> Result<AccTensor, SimError> {
    input.validate()?;
    if weights.n != input.c {
        return Err(SimError::Shape(format!("weights expect {} channels, input has {}", weights.n, input.c)));
    }
    let p = pad(weights.k);
    let mut out = AccTensor::zeros(input.h, input.w, weights.m);
    for y in 0..input.h {
        for x in 0..input.w {
            for m in 0..weights.m {
                let mut acc = 0i64;
                for c in 0..weights.n {
                    for ky in 0..weights.k {
                        for kx in 0..weights.k {
                            let a = input.at(y as isize + ky as isize - p, x as isize + kx as isize - p, c);
                            acc += a * weights.get(m, c, ky, kx);
                        }
                    }
                }
                out.add(y, x, m, acc);
            }
        }
    }
    out.check(q_s)?;
    Ok(out)
}

/// The split computation straight from the encoded layer: a sign-gated
/// add/subtract sum scaled by `α_q` per filter, plus the block entries
/// multiplied by their activations and scaled by `s_r_q`.
pub fn mixed_conv(input: &QuantTensor, enc: &EncodedLayer, fp: FixedPoint, q_s: u32) -> Result<AccTensor, SimError> {
    input.validate()?;
    if enc.n as usize != input.c {
        return Err(SimError::Shape(format!("layer expects {} channels, input has {}", enc.n, input.c)));
    }
    let (k, m_count, n) = (enc.k as usize, enc.m as usize, enc.n as usize);
    let p = pad(k);
    let k2 = k * k;
    let (h, w) = (input.h, input.w);

    let mut dense = AccTensor::zeros(h, w, m_count);
    for y in 0..h {
        for x in 0..w {
            for f in 0..m_count {
                let mut sum = 0i64;
                for c in 0..n {
                    for k_pos in 0..k2 {
                        let a = input.at(y as isize + (k_pos / k) as isize - p, x as isize + (k_pos % k) as isize - p, c);
                        if enc.is_negative(f, c * k2 + k_pos) {
                            sum -= a;
                        } else {
                            sum += a;
                        }
                    }
                }
                dense.add(y, x, f, sum);
            }
        }
    }

    let mut sparse = AccTensor::zeros(h, w, m_count);
    let blocks = enc.blocks()?;
    for ot in 0..enc.output_tiles() {
        for it in 0..enc.input_tiles() {
            for e in &blocks[enc.block_index(ot, it)] {
                let (k_pos, ti, to) = enc.split_coord(e.coord);
                let (f, c) = ((ot * enc.t_o + to) as usize, (it * enc.t_i + ti) as usize);
                if f >= m_count || c >= n {
                    return Err(SimError::Shape(format!("entry in padded channel (filter {f}, input {c})")));
                }
                let (ky, kx) = (k_pos as usize / k, k_pos as usize % k);
                for y in 0..h {
                    for x in 0..w {
                        let a = input.at(y as isize + ky as isize - p, x as isize + kx as isize - p, c);
                        sparse.add(y, x, f, a * e.value as i64);
                    }
                }
            }
        }
    }

    let s_r = fp.quantize(enc.residual_scale)?;
    let alphas: Vec<i64> = enc.alphas.iter().map(|&a| fp.quantize(a)).collect::<Result<_, _>>()?;
    let mut out = AccTensor::zeros(h, w, m_count);
    for (i, v) in out.data.iter_mut().enumerate() {
        *v = alphas[i % m_count] * dense.data[i] + s_r * sparse.data[i];
    }
    out.check(q_s)?;
    Ok(out)
}
