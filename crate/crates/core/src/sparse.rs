//! Block-sparse serialization of mixed-precision layers.
//!
//! Residuals are grouped into `K×K×T_i×T_o` blocks, output-tile major then
//! input-tile. Each block stores a `u16` count; the entries of all blocks
//! follow as one bit stream of `(coord, int8)` pairs. A block coordinate is
//! `(k_pos·T_i + t_i)·T_o + t_o`, where `k_pos` is the kernel offset and
//! `t_i`, `t_o` the channel offsets inside the tile. Bits are packed
//! LSB-first and the stream is padded to a byte only at its end.
//!
//! The dense part stores, per filter, `α` as `f32` followed by a sign
//! bit-plane (bit set = negative) padded to a byte.

use std::io::{Read, Write};

use thiserror::Error;

use crate::quant::{MixedFilter, MixedLayerWeights, Residual};

pub const DEFAULT_COORD_BITS: u32 = 12;
const MAX_COORD_BITS: u32 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error(
        "block of {positions} positions does not fit {coord_bits}-bit coordinates; use coord_bits >= {needed} or smaller tiles"
    )]
    CoordOverflow { positions: u64, coord_bits: u32, needed: u32 },
    #[error("invalid tiling T_i={t_i}, T_o={t_o}")]
    Tiling { t_i: u32, t_o: u32 },
    #[error("layer {layer}: block {block} holds {count} entries, more than a u16 count allows")]
    CountOverflow { layer: u32, block: usize, count: usize },
    #[error("layer {layer}: corrupt block {block}: {reason}")]
    Corrupt { layer: u32, block: usize, reason: String },
    #[error("layer {layer}: inconsistent weights: {reason}")]
    Shape { layer: u32, reason: String },
    #[error("model file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for SparseError {
    fn from(e: std::io::Error) -> Self {
        SparseError::Io(e.to_string())
    }
}

/// Appends values LSB-first.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn push(&mut self, value: u64, bits: u32) {
        for b in 0..bits {
            let bit = (value >> b) & 1;
            let idx = (self.len / 8) as usize;
            if idx == self.bytes.len() {
                self.bytes.push(0);
            }
            self.bytes[idx] |= (bit as u8) << (self.len % 8);
            self.len += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

/// Reads values written by [`BitWriter`].
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn read(&mut self, bits: u32) -> Option<u64> {
        if self.pos + bits as u64 > self.bytes.len() as u64 * 8 {
            return None;
        }
        let mut v = 0u64;
        for b in 0..bits {
            let idx = (self.pos / 8) as usize;
            let bit = (self.bytes[idx] >> (self.pos % 8)) & 1;
            v |= (bit as u64) << b;
            self.pos += 1;
        }
        Some(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub coord: u32,
    pub value: i8,
}

/// One encoded conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLayer {
    pub layer_id: u32,
    pub m: u32,
    pub n: u32,
    pub k: u32,
    /// `M` rounded up to a multiple of `T_o`.
    pub m_pad: u32,
    /// `N` rounded up to a multiple of `T_i`.
    pub n_pad: u32,
    pub t_i: u32,
    pub t_o: u32,
    pub coord_bits: u32,
    pub ratio: f32,
    pub residual_scale: f32,
    /// One per original filter.
    pub alphas: Vec<f32>,
    /// One packed plane per original filter, `ceil(K²N/8)` bytes each.
    pub sign_planes: Vec<Vec<u8>>,
    pub counts: Vec<u16>,
    pub entries: Vec<u8>,
}

/// Sparse-kernel sizing of a layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    /// Largest residual count over `K×K×T_i×T_o` blocks.
    pub n_multipliers: u32,
    /// Largest residual count over `K×K×T_i` slices of one output channel.
    pub tree_size: u32,
}

impl KernelStats {
    /// Element-wise maximum, for a main layer serving several layers.
    pub fn max(self, other: KernelStats) -> KernelStats {
        KernelStats {
            n_multipliers: self.n_multipliers.max(other.n_multipliers),
            tree_size: self.tree_size.max(other.tree_size),
        }
    }
}

/// Smallest coordinate width addressing `positions` slots.
pub fn min_coord_bits(positions: u64) -> u32 {
    if positions <= 1 {
        0
    } else {
        64 - (positions - 1).leading_zeros()
    }
}

fn sign_plane(negative: &[bool]) -> Vec<u8> {
    let mut plane = vec![0u8; negative.len().div_ceil(8)];
    for (i, &neg) in negative.iter().enumerate() {
        if neg {
            plane[i / 8] |= 1 << (i % 8);
        }
    }
    plane
}

impl EncodedLayer {
    pub fn k2(&self) -> u32 {
        self.k * self.k
    }

    /// Slots per block, `K²·T_i·T_o`.
    pub fn block_positions(&self) -> u64 {
        self.k2() as u64 * self.t_i as u64 * self.t_o as u64
    }

    pub fn output_tiles(&self) -> u32 {
        self.m_pad / self.t_o
    }

    pub fn input_tiles(&self) -> u32 {
        self.n_pad / self.t_i
    }

    pub fn block_count(&self) -> usize {
        self.counts.len()
    }

    /// Block index of output tile `ot`, input tile `it`.
    pub fn block_index(&self, ot: u32, it: u32) -> usize {
        (ot * self.input_tiles() + it) as usize
    }

    pub fn nnz(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn coord(&self, k_pos: u32, t_i: u32, t_o: u32) -> u32 {
        (k_pos * self.t_i + t_i) * self.t_o + t_o
    }

    /// Inverse of [`Self::coord`]: `(k_pos, t_i, t_o)`.
    pub fn split_coord(&self, coord: u32) -> (u32, u32, u32) {
        let t_o = coord % self.t_o;
        let rest = coord / self.t_o;
        (rest / self.t_i, rest % self.t_i, t_o)
    }

    /// Whether the sign bit of filter `f` at position `pos` marks a negative weight.
    pub fn is_negative(&self, f: usize, pos: usize) -> bool {
        self.sign_planes[f][pos / 8] >> (pos % 8) & 1 == 1
    }

    /// Parses the entry stream into per-block entry lists, checking every
    /// structural invariant.
    pub fn blocks(&self) -> Result<Vec<Vec<Entry>>, SparseError> {
        let mut reader = BitReader::new(&self.entries);
        let positions = self.block_positions();
        let mut out = Vec::with_capacity(self.counts.len());
        for (block, &count) in self.counts.iter().enumerate() {
            let corrupt = |reason: String| SparseError::Corrupt { layer: self.layer_id, block, reason };
            let mut entries = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let coord = reader.read(self.coord_bits).ok_or_else(|| corrupt("entry stream truncated".into()))?;
                let value = reader.read(8).ok_or_else(|| corrupt("entry stream truncated".into()))? as u8 as i8;
                if coord >= positions {
                    return Err(corrupt(format!("coordinate {coord} outside {positions} positions")));
                }
                if let Some(last) = entries.last().map(|e: &Entry| e.coord) {
                    if coord as u32 <= last {
                        return Err(corrupt(format!("coordinate {coord} repeated or out of order")));
                    }
                }
                entries.push(Entry { coord: coord as u32, value });
            }
            out.push(entries);
        }
        let expected = (self.nnz() * (self.coord_bits as u64 + 8)).div_ceil(8);
        if self.entries.len() as u64 != expected {
            return Err(SparseError::Corrupt {
                layer: self.layer_id,
                block: self.counts.len(),
                reason: format!("entry stream is {} bytes, counts imply {expected}", self.entries.len()),
            });
        }
        Ok(out)
    }

    fn check_header(&self) -> Result<(), SparseError> {
        let shape = |reason: String| SparseError::Shape { layer: self.layer_id, reason };
        if self.t_i == 0 || self.t_o == 0 || !self.m_pad.is_multiple_of(self.t_o) || !self.n_pad.is_multiple_of(self.t_i) {
            return Err(SparseError::Tiling { t_i: self.t_i, t_o: self.t_o });
        }
        if self.m_pad < self.m || self.m_pad - self.m >= self.t_o || self.n_pad < self.n || self.n_pad - self.n >= self.t_i {
            return Err(shape(format!("padding {}x{} inconsistent with {}x{}", self.m_pad, self.n_pad, self.m, self.n)));
        }
        if self.coord_bits > MAX_COORD_BITS || self.block_positions() > 1u64 << self.coord_bits {
            return Err(SparseError::CoordOverflow {
                positions: self.block_positions(),
                coord_bits: self.coord_bits,
                needed: min_coord_bits(self.block_positions()),
            });
        }
        let blocks = self.output_tiles() as usize * self.input_tiles() as usize;
        if self.counts.len() != blocks {
            return Err(shape(format!("{} block counts, geometry needs {blocks}", self.counts.len())));
        }
        let plane = (self.k2() as usize * self.n as usize).div_ceil(8);
        if self.alphas.len() != self.m as usize
            || self.sign_planes.len() != self.m as usize
            || self.sign_planes.iter().any(|p| p.len() != plane)
        {
            return Err(shape("dense section does not match filter count".into()));
        }
        Ok(())
    }
}

/// Serializes `mixed` with tiles `T_i × T_o`. Channels are padded with zero
/// filters up to tile multiples.
pub fn encode(mixed: &MixedLayerWeights, t_i: u32, t_o: u32, coord_bits: u32) -> Result<EncodedLayer, SparseError> {
    if t_i == 0 || t_o == 0 {
        return Err(SparseError::Tiling { t_i, t_o });
    }
    let k2 = mixed.k * mixed.k;
    let positions = k2 as u64 * t_i as u64 * t_o as u64;
    if coord_bits > MAX_COORD_BITS || positions > 1u64 << coord_bits {
        return Err(SparseError::CoordOverflow { positions, coord_bits, needed: min_coord_bits(positions) });
    }
    let len = mixed.filter_len();
    if mixed.filters.len() != mixed.m as usize {
        return Err(SparseError::Shape { layer: mixed.layer_id, reason: format!("{} filters, M = {}", mixed.filters.len(), mixed.m) });
    }
    let m_pad = mixed.m.div_ceil(t_o) * t_o;
    let n_pad = mixed.n.div_ceil(t_i) * t_i;
    let (out_tiles, in_tiles) = (m_pad / t_o, n_pad / t_i);

    let mut blocks: Vec<Vec<Entry>> = vec![Vec::new(); (out_tiles * in_tiles) as usize];
    for (f, filter) in mixed.filters.iter().enumerate() {
        if filter.negative.len() != len {
            return Err(SparseError::Shape { layer: mixed.layer_id, reason: format!("filter {f} sign plane length") });
        }
        for r in &filter.residuals {
            if r.pos as usize >= len {
                return Err(SparseError::Shape { layer: mixed.layer_id, reason: format!("filter {f} residual at {}", r.pos) });
            }
            let (c, k_pos) = (r.pos / k2, r.pos % k2);
            let f = f as u32;
            let block = ((f / t_o) * in_tiles + c / t_i) as usize;
            let coord = (k_pos * t_i + c % t_i) * t_o + f % t_o;
            blocks[block].push(Entry { coord, value: r.value });
        }
    }

    let mut writer = BitWriter::default();
    let mut counts = Vec::with_capacity(blocks.len());
    for (block, entries) in blocks.iter_mut().enumerate() {
        entries.sort_by_key(|e| e.coord);
        if entries.windows(2).any(|w| w[0].coord == w[1].coord) {
            return Err(SparseError::Shape { layer: mixed.layer_id, reason: format!("duplicate residual in block {block}") });
        }
        let count = u16::try_from(entries.len())
            .map_err(|_| SparseError::CountOverflow { layer: mixed.layer_id, block, count: entries.len() })?;
        counts.push(count);
        for e in entries.iter() {
            writer.push(e.coord as u64, coord_bits);
            writer.push(e.value as u8 as u64, 8);
        }
    }

    Ok(EncodedLayer {
        layer_id: mixed.layer_id,
        m: mixed.m,
        n: mixed.n,
        k: mixed.k,
        m_pad,
        n_pad,
        t_i,
        t_o,
        coord_bits,
        ratio: mixed.ratio,
        residual_scale: mixed.residual_scale,
        alphas: mixed.filters.iter().map(|f| f.alpha).collect(),
        sign_planes: mixed.filters.iter().map(|f| sign_plane(&f.negative)).collect(),
        counts,
        entries: writer.finish(),
    })
}

pub fn decode(enc: &EncodedLayer) -> Result<MixedLayerWeights, SparseError> {
    enc.check_header()?;
    let blocks = enc.blocks()?;
    let k2 = enc.k2();
    let len = (k2 * enc.n) as usize;
    let mut filters: Vec<MixedFilter> = (0..enc.m as usize)
        .map(|f| MixedFilter {
            alpha: enc.alphas[f],
            negative: (0..len).map(|pos| enc.is_negative(f, pos)).collect(),
            residuals: Vec::new(),
        })
        .collect();
    for ot in 0..enc.output_tiles() {
        for it in 0..enc.input_tiles() {
            let block = enc.block_index(ot, it);
            for e in &blocks[block] {
                let (k_pos, ti, to) = enc.split_coord(e.coord);
                let (f, c) = (ot * enc.t_o + to, it * enc.t_i + ti);
                if f >= enc.m || c >= enc.n {
                    return Err(SparseError::Corrupt {
                        layer: enc.layer_id,
                        block,
                        reason: format!("entry in padded channel (filter {f}, input {c})"),
                    });
                }
                filters[f as usize].residuals.push(Residual { pos: c * k2 + k_pos, value: e.value });
            }
        }
    }
    for f in &mut filters {
        f.residuals.sort_by_key(|r| r.pos);
    }
    Ok(MixedLayerWeights {
        layer_id: enc.layer_id,
        m: enc.m,
        n: enc.n,
        k: enc.k,
        ratio: enc.ratio,
        residual_scale: enc.residual_scale,
        filters,
    })
}

pub fn kernel_stats(enc: &EncodedLayer) -> Result<KernelStats, SparseError> {
    let blocks = enc.blocks()?;
    let mut stats = KernelStats::default();
    let mut per_slice = vec![0u32; enc.t_o as usize];
    for entries in &blocks {
        stats.n_multipliers = stats.n_multipliers.max(entries.len() as u32);
        per_slice.iter_mut().for_each(|c| *c = 0);
        for e in entries {
            per_slice[enc.split_coord(e.coord).2 as usize] += 1;
        }
        stats.tree_size = stats.tree_size.max(per_slice.iter().copied().max().unwrap_or(0));
    }
    Ok(stats)
}

/// Bytes of the sparse section: packed entries plus `u16` block counts.
pub fn encoded_size(enc: &EncodedLayer) -> u64 {
    (enc.nnz() * (enc.coord_bits as u64 + 8)).div_ceil(8) + 2 * enc.block_count() as u64
}

/// Bytes of the dense section: `α` plus the padded sign plane per filter.
pub fn dense_size(enc: &EncodedLayer) -> u64 {
    enc.m as u64 * (4 + (enc.k2() as u64 * enc.n as u64).div_ceil(8))
}

const HEADER_BYTES: u64 = 11 * 4;

/// Bytes one layer occupies in a model file.
pub fn layer_file_size(enc: &EncodedLayer) -> u64 {
    HEADER_BYTES + dense_size(enc) + encoded_size(enc)
}

const MODEL_MAGIC: &[u8; 4] = b"MPQE";
const MODEL_VERSION: u32 = 1;

/// Writes an `MPQE` model file.
pub fn write_model(mut w: impl Write, layers: &[EncodedLayer]) -> Result<(), SparseError> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for l in layers {
        l.check_header()?;
        for v in [l.layer_id, l.m, l.n, l.k, l.m_pad, l.n_pad, l.t_i, l.t_o, l.coord_bits] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&l.ratio.to_le_bytes())?;
        w.write_all(&l.residual_scale.to_le_bytes())?;
        for (alpha, plane) in l.alphas.iter().zip(&l.sign_planes) {
            w.write_all(&alpha.to_le_bytes())?;
            w.write_all(plane)?;
        }
        for c in &l.counts {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&l.entries)?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], SparseError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| SparseError::Format(format!("truncated: {e}")))?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32, SparseError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_f32(r: &mut impl Read) -> Result<f32, SparseError> {
    Ok(f32::from_le_bytes(read_array(r)?))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>, SparseError> {
    let mut v = vec![0u8; n];
    r.read_exact(&mut v).map_err(|e| SparseError::Format(format!("truncated: {e}")))?;
    Ok(v)
}

/// Reads an `MPQE` model file.
pub fn read_model(mut r: impl Read) -> Result<Vec<EncodedLayer>, SparseError> {
    if &read_array::<4>(&mut r)? != MODEL_MAGIC {
        return Err(SparseError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(SparseError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let mut h = [0u32; 9];
        for v in &mut h {
            *v = read_u32(&mut r)?;
        }
        let [layer_id, m, n, k, m_pad, n_pad, t_i, t_o, coord_bits] = h;
        if t_i == 0 || t_o == 0 || m_pad % t_o != 0 || n_pad % t_i != 0 {
            return Err(SparseError::Tiling { t_i, t_o });
        }
        if coord_bits > MAX_COORD_BITS {
            return Err(SparseError::Format(format!("layer {layer_id}: coord_bits {coord_bits}")));
        }
        let ratio = read_f32(&mut r)?;
        let residual_scale = read_f32(&mut r)?;
        let plane = (k as usize * k as usize * n as usize).div_ceil(8);
        let mut alphas = Vec::with_capacity(m as usize);
        let mut sign_planes = Vec::with_capacity(m as usize);
        for _ in 0..m {
            alphas.push(read_f32(&mut r)?);
            sign_planes.push(read_bytes(&mut r, plane)?);
        }
        let blocks = (m_pad / t_o) as usize * (n_pad / t_i) as usize;
        let mut counts = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            counts.push(u16::from_le_bytes(read_array(&mut r)?));
        }
        let nnz: u64 = counts.iter().map(|&c| c as u64).sum();
        let entries = read_bytes(&mut r, (nnz * (coord_bits as u64 + 8)).div_ceil(8) as usize)?;
        let layer = EncodedLayer {
            layer_id,
            m,
            n,
            k,
            m_pad,
            n_pad,
            t_i,
            t_o,
            coord_bits,
            ratio,
            residual_scale,
            alphas,
            sign_planes,
            counts,
            entries,
        };
        layer.check_header()?;
        layers.push(layer);
    }
    Ok(layers)
}
