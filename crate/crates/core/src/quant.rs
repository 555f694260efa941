//! Channel-wise mixed 1-bit/8-bit weight quantization.
//!
//! Within each output filter the weights are ranked by magnitude. The largest
//! `ceil(p·n)` become high-precision positions, the rest are small. Every
//! weight gets a binary value `sign·α`, with `α` the filter's mean small-weight
//! magnitude. At the large positions the remainder `w − sign·α` is kept as a
//! sparse 8-bit residual with one symmetric scale per layer.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::net::NetworkDesc;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("ratio {0} outside [0, 1]")]
    Ratio(f64),
    #[error("layer {layer}: weight tensor has {found} values, expected {expected}")]
    Shape { layer: u32, expected: usize, found: usize },
    #[error("layer {layer}: non-finite weight at index {index}")]
    NonFinite { layer: u32, index: usize },
    #[error("no high-precision ratio for quantized layer {0}")]
    MissingRatio(u32),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the binary scale `α` of a filter is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    /// Mean magnitude over the small (binary-only) weights.
    #[default]
    SmallSet,
    /// Mean magnitude over every weight of the filter.
    AllWeights,
}

/// Which weights compete for the high-precision slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Top `ceil(p·n)` per output filter.
    #[default]
    ChannelWise,
    /// Top `ceil(p·n_layer)` across the whole layer.
    LayerWise,
}

/// Number of high-precision weights for `n` weights at ratio `p`.
pub fn large_count(n: usize, p: f64) -> usize {
    // Guard against representation error in p·n (e.g. 0.07 * 100).
    let raw = (p * n as f64 - 1e-9).ceil();
    (raw.max(0.0) as usize).min(n)
}

/// Split of one filter's positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    /// Ascending positions.
    pub small: Vec<u32>,
    /// Ascending positions.
    pub large: Vec<u32>,
}

/// Ranks by `|w|` descending, ties by lower position.
fn magnitude_order(weights: &[f32]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..weights.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (wa, wb) = (weights[a as usize].abs(), weights[b as usize].abs());
        wb.total_cmp(&wa).then(a.cmp(&b))
    });
    order
}

pub fn partition_filter(weights: &[f32], p: f64) -> Partition {
    let take = large_count(weights.len(), p);
    let order = magnitude_order(weights);
    let mut large = order[..take].to_vec();
    let mut small = order[take..].to_vec();
    large.sort_unstable();
    small.sort_unstable();
    Partition { small, large }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Residual {
    pub pos: u32,
    pub value: i8,
}

/// One quantized output filter.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFilter {
    pub alpha: f32,
    /// `true` where the weight is negative. `sign(0) = +1`.
    pub negative: Vec<bool>,
    /// Sorted by position.
    pub residuals: Vec<Residual>,
}

impl MixedFilter {
    pub fn sign(&self, pos: usize) -> f32 {
        if self.negative[pos] {
            -1.0
        } else {
            1.0
        }
    }
}

/// A quantized conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedLayerWeights {
    pub layer_id: u32,
    pub m: u32,
    pub n: u32,
    pub k: u32,
    /// High-precision ratio `p`.
    pub ratio: f32,
    /// Residual scale `s_r`; residual value = `s_r · int8`.
    pub residual_scale: f32,
    pub filters: Vec<MixedFilter>,
}

impl MixedLayerWeights {
    /// Weights per filter, `K²·N`.
    pub fn filter_len(&self) -> usize {
        (self.k * self.k * self.n) as usize
    }

    pub fn nnz(&self) -> usize {
        self.filters.iter().map(|f| f.residuals.len()).sum()
    }

    pub fn params(&self) -> usize {
        self.filter_len() * self.m as usize
    }
}

/// A raw float weight tensor of one layer, `M×N×K×K`, M-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub layer_id: u32,
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn filter_len(&self) -> usize {
        (self.k * self.k * self.n) as usize
    }

    pub fn filter(&self, f: usize) -> &[f32] {
        let len = self.filter_len();
        &self.data[f * len..(f + 1) * len]
    }

    fn check(&self) -> Result<(), QuantError> {
        let expected = self.filter_len() * self.m as usize;
        if self.data.len() != expected {
            return Err(QuantError::Shape { layer: self.layer_id, expected, found: self.data.len() });
        }
        if let Some(index) = self.data.iter().position(|w| !w.is_finite()) {
            return Err(QuantError::NonFinite { layer: self.layer_id, index });
        }
        Ok(())
    }
}

/// Per-filter quantization before the layer-wide residual scale is known.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterDraft {
    pub alpha: f32,
    pub negative: Vec<bool>,
    /// `(position, w − sign·α)` at the large positions, ascending.
    pub residuals: Vec<(u32, f64)>,
}

fn mean_abs(weights: &[f32], positions: impl Iterator<Item = u32>) -> f32 {
    let (sum, count) = positions.fold((0f64, 0usize), |(s, c), p| (s + weights[p as usize].abs() as f64, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64) as f32
    }
}

fn draft_with_large(weights: &[f32], large: &[u32], small: &[u32], mode: AlphaMode) -> FilterDraft {
    let alpha = match mode {
        AlphaMode::SmallSet => mean_abs(weights, small.iter().copied()),
        AlphaMode::AllWeights => mean_abs(weights, 0..weights.len() as u32),
    };
    let negative: Vec<bool> = weights.iter().map(|&w| w < 0.0).collect();
    let residuals = large
        .iter()
        .map(|&p| {
            let w = weights[p as usize] as f64;
            let s = if negative[p as usize] { -1.0 } else { 1.0 };
            (p, w - s * alpha as f64)
        })
        .collect();
    FilterDraft { alpha, negative, residuals }
}

/// Binary part and unscaled residuals for one filter.
pub fn quantize_filter(weights: &[f32], p: f64, mode: AlphaMode) -> Result<FilterDraft, QuantError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(QuantError::Ratio(p));
    }
    let part = partition_filter(weights, p);
    Ok(draft_with_large(weights, &part.large, &part.small, mode))
}

/// Symmetric scale mapping the largest residual magnitude to 127.
/// Layers without any non-zero residual get scale one.
pub fn residual_scale(drafts: &[FilterDraft]) -> f32 {
    let max = drafts
        .iter()
        .flat_map(|d| d.residuals.iter().map(|(_, r)| r.abs()))
        .fold(0f64, f64::max);
    if max > 0.0 {
        (max / 127.0) as f32
    } else {
        1.0
    }
}

fn finish(tensor: &WeightTensor, p: f64, drafts: Vec<FilterDraft>, scale: f32) -> MixedLayerWeights {
    let filters = drafts
        .into_iter()
        .map(|d| MixedFilter {
            alpha: d.alpha,
            negative: d.negative,
            residuals: d
                .residuals
                .into_iter()
                .map(|(pos, r)| Residual { pos, value: (r / scale as f64).round().clamp(-127.0, 127.0) as i8 })
                .collect(),
        })
        .collect();
    MixedLayerWeights {
        layer_id: tensor.layer_id,
        m: tensor.m,
        n: tensor.n,
        k: tensor.k,
        ratio: p as f32,
        residual_scale: scale,
        filters,
    }
}

/// Options for [`quantize_layer_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuantOptions {
    pub alpha: AlphaMode,
    pub selection: Selection,
    /// Fixed residual scale; computed from the layer when `None`.
    pub residual_scale: Option<f32>,
}

pub fn quantize_layer(tensor: &WeightTensor, p: f64) -> Result<MixedLayerWeights, QuantError> {
    quantize_layer_with(tensor, p, QuantOptions::default())
}

pub fn quantize_layer_with(tensor: &WeightTensor, p: f64, opts: QuantOptions) -> Result<MixedLayerWeights, QuantError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(QuantError::Ratio(p));
    }
    tensor.check()?;
    let m = tensor.m as usize;
    let drafts: Vec<FilterDraft> = match opts.selection {
        Selection::ChannelWise => (0..m)
            .map(|f| quantize_filter(tensor.filter(f), p, opts.alpha))
            .collect::<Result<_, _>>()?,
        Selection::LayerWise => {
            let len = tensor.filter_len();
            let take = large_count(tensor.data.len(), p);
            let mut is_large = vec![false; tensor.data.len()];
            for idx in magnitude_order(&tensor.data).into_iter().take(take) {
                is_large[idx as usize] = true;
            }
            (0..m)
                .map(|f| {
                    let (mut large, mut small) = (Vec::new(), Vec::new());
                    for pos in 0..len {
                        if is_large[f * len + pos] {
                            large.push(pos as u32);
                        } else {
                            small.push(pos as u32);
                        }
                    }
                    draft_with_large(tensor.filter(f), &large, &small, opts.alpha)
                })
                .collect()
        }
    };
    let scale = opts.residual_scale.unwrap_or_else(|| residual_scale(&drafts));
    Ok(finish(tensor, p, drafts, scale))
}

/// Effective weights `sign·α + s_r·v`, M-major like the source tensor.
pub fn reconstruct(mixed: &MixedLayerWeights) -> Vec<f32> {
    let len = mixed.filter_len();
    let mut out = Vec::with_capacity(len * mixed.m as usize);
    for f in &mixed.filters {
        let start = out.len();
        out.extend((0..len).map(|pos| f.sign(pos) * f.alpha));
        for r in &f.residuals {
            out[start + r.pos as usize] += mixed.residual_scale * r.value as f32;
        }
    }
    out
}

/// Per-layer compression contribution `32/(1+7p) · N_i/ΣN`.
pub fn compression_rate(p: f64, layer_params: u64, total_params: u64) -> f64 {
    32.0 / (1.0 + 7.0 * p) * layer_params as f64 / total_params as f64
}

/// Average stored bits per weight: `1+7p` for quantized layers, `q_full`
/// for the rest, weighted by parameter count.
pub fn avg_bits(net: &NetworkDesc, ratios: &BTreeMap<u32, f64>) -> Result<f64, QuantError> {
    let mut bits = 0f64;
    let mut params = 0u64;
    for l in net.conv_layers() {
        let n = l.params();
        let b = if l.quantize {
            let p = *ratios.get(&l.id).ok_or(QuantError::MissingRatio(l.id))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(QuantError::Ratio(p));
            }
            1.0 + 7.0 * p
        } else {
            net.precision.q_full as f64
        };
        bits += b * n as f64;
        params += n;
    }
    Ok(bits / params as f64)
}

/// Sparsity-search objective: accuracy plus `γ` times compression.
pub fn objective(accuracy: f64, gamma: f64, compression: f64) -> f64 {
    accuracy + gamma * compression
}

const WEIGHT_MAGIC: &[u8; 4] = b"MPQW";
const WEIGHT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32, QuantError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads an `MPQW` weight file.
pub fn read_weight_file(mut r: impl Read) -> Result<Vec<WeightTensor>, QuantError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHT_MAGIC {
        return Err(QuantError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != WEIGHT_VERSION {
        return Err(QuantError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let layer_id = read_u32(&mut r)?;
        let dims = [read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?];
        let [m, n, k, k2] = dims;
        if k != k2 {
            return Err(QuantError::Format(format!("layer {layer_id}: non-square kernel {k}x{k2}")));
        }
        let len = m as usize * n as usize * k as usize * k as usize;
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push(WeightTensor { layer_id, m, n, k, data });
    }
    Ok(out)
}

pub fn write_weight_file(mut w: impl Write, tensors: &[WeightTensor]) -> Result<(), QuantError> {
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&WEIGHT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        t.check()?;
        for v in [t.layer_id, t.m, t.n, t.k, t.k] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}
