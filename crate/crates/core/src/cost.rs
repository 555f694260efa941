//! Analytic buffer, SRAM, DRAM-traffic and timing model for the mixed
//! dataflow accelerator.
//!
//! Layers `1..=i` (conv ordinals) form the pipelined group: each has a
//! dedicated unit with `K+1` input line buffers and a `T_o`-wide partial-sum
//! line buffer, and re-reads its weights once per output row. The remaining
//! layers run one after another on the main layer, which keeps whole frames
//! on chip and reads each weight once.
//!
//! On-chip sizes are in bits. DRAM traffic is in bytes, rounding each layer
//! transfer up to whole bytes.

use serde::{Deserialize, Serialize};

use crate::dse::TilingPlan;
use crate::net::{LayerDesc, NetworkDesc, Precision};
use crate::rational::{rat, Rational};
use num_traits::Zero;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    /// Group 1: line-buffered, row-based weight reuse.
    Pipelined,
    /// Group 2: frame-buffered, full weight reuse on the main layer.
    Main,
}

/// On-chip buffer demand of one layer, in bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSizes {
    pub row_buff: u64,
    pub line_out_buff: u64,
    pub in_frame_buff: u64,
    pub frame_out_buff: u64,
    pub shortcut_buff: u64,
    pub param_store: u64,
}

/// Buffer terms for one conv layer. Pipelined layers get the row and line
/// buffers, main-group layers the frame buffers. The shortcut and parameter
/// terms depend on the rest of the network and are filled by [`CostModel`].
pub fn buffer_sizes(layer: &LayerDesc, prec: &Precision, t_o: u32, group: Group) -> BufferSizes {
    let q_a = prec.q_a as u64;
    let q_s = prec.q_s as u64;
    let t_o = t_o as u64;
    let n = layer.n as u64;
    match group {
        Group::Pipelined => BufferSizes {
            row_buff: (layer.k as u64 + 1) * n * layer.w_in as u64 * q_a,
            line_out_buff: t_o * layer.w_out() as u64 * q_s,
            ..Default::default()
        },
        Group::Main => BufferSizes {
            in_frame_buff: layer.in_pixels() * n * q_a,
            frame_out_buff: t_o * layer.out_pixels() * q_s,
            ..Default::default()
        },
    }
}

/// Stored weight size of every layer, in bits, indexed like `net.layers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBits(pub Vec<u64>);

impl ParamBits {
    /// Every conv weight at the dense bit-width `q_w`.
    pub fn dense(net: &NetworkDesc) -> Self {
        let q_w = net.precision.q_w as u64;
        ParamBits(net.layers.iter().map(|l| l.params() * q_w).collect())
    }

    /// Mixed 1/8-bit storage: quantized layers cost one bit per weight plus
    /// seven more per high-precision weight; other layers cost `q_full`.
    /// `ratio(id)` gives a quantized layer's high-precision ratio.
    pub fn mixed(net: &NetworkDesc, ratio: impl Fn(u32) -> f64) -> Self {
        let q_full = net.precision.q_full as u64;
        ParamBits(
            net.layers
                .iter()
                .map(|l| {
                    if !l.is_conv() {
                        0
                    } else if l.quantize {
                        let per_filter = l.params() / l.m as u64;
                        let large = crate::quant::large_count(per_filter as usize, ratio(l.id));
                        l.params() + 7 * large as u64 * l.m as u64
                    } else {
                        l.params() * q_full
                    }
                })
                .collect(),
        )
    }

    pub fn bits(&self, layer_index: usize) -> u64 {
        self.0[layer_index]
    }

    /// One full transfer of the layer's weights.
    pub fn bytes(&self, layer_index: usize) -> u64 {
        self.0[layer_index].div_ceil(8)
    }
}

/// Costs of one candidate plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub boundary: usize,
    pub sram_bits: u64,
    pub dram_bytes_per_frame: u64,
    #[serde(with = "rational_serde")]
    pub t_g1: Rational,
    #[serde(with = "rational_serde")]
    pub t_g2: Rational,
    #[serde(with = "rational_serde")]
    pub frame_rate: Rational,
    pub multipliers: u64,
}

impl CostReport {
    pub fn frame_rate_f64(&self) -> f64 {
        crate::rational::to_f64(&self.frame_rate)
    }
}

pub(crate) mod rational_serde {
    use super::Rational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Cost formulas bound to one network and its weight storage.
#[derive(Debug, Clone)]
pub struct CostModel<'a> {
    net: &'a NetworkDesc,
    params: ParamBits,
    /// Indices into `net.layers` of the conv layers, in order.
    convs: Vec<usize>,
}

impl<'a> CostModel<'a> {
    pub fn new(net: &'a NetworkDesc) -> Self {
        Self::with_param_bits(net, ParamBits::dense(net))
    }

    pub fn with_param_bits(net: &'a NetworkDesc, params: ParamBits) -> Self {
        assert_eq!(params.0.len(), net.layers.len(), "one entry per layer");
        let convs = net
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_conv())
            .map(|(i, _)| i)
            .collect();
        CostModel { net, params, convs }
    }

    pub fn net(&self) -> &'a NetworkDesc {
        self.net
    }

    pub fn param_bits(&self) -> &ParamBits {
        &self.params
    }

    /// Number of conv layers; boundaries range over `0..=conv_count()`.
    pub fn conv_count(&self) -> usize {
        self.convs.len()
    }

    /// The `c`-th conv layer (0-based).
    pub fn conv(&self, c: usize) -> &'a LayerDesc {
        &self.net.layers[self.convs[c]]
    }

    pub fn conv_param_bits(&self, c: usize) -> u64 {
        self.params.bits(self.convs[c])
    }

    pub fn conv_param_bytes(&self, c: usize) -> u64 {
        self.params.bytes(self.convs[c])
    }

    /// Full buffer demand of conv `c` under `plan`.
    pub fn layer_buffers(&self, c: usize, plan: &TilingPlan) -> BufferSizes {
        let layer = self.conv(c);
        let prec = &self.net.precision;
        let t_o = plan.tiles[c].t_o;
        if c < plan.boundary {
            let mut b = buffer_sizes(layer, prec, t_o, Group::Pipelined);
            if plan.params_on_chip {
                b.param_store = self.conv_param_bits(c);
            }
            b
        } else {
            let mut b = buffer_sizes(layer, prec, t_o, Group::Main);
            b.shortcut_buff = self.shortcut_bits(layer);
            b
        }
    }

    fn shortcut_bits(&self, layer: &LayerDesc) -> u64 {
        layer
            .shortcut_from
            .and_then(|s| self.net.layer(s))
            .map(|src| src.output_fmap_elems() * self.net.precision.q_a as u64)
            .unwrap_or(0)
    }

    /// Total on-chip memory of a plan: the pipelined layers' line buffers
    /// (plus their weights when kept on chip) and the main layer's three
    /// input frame buffers, shortcut buffer and output frame buffer, each
    /// sized for the largest layer it serves.
    pub fn sram_size(&self, plan: &TilingPlan) -> u64 {
        let i = plan.boundary;
        let mut group1 = 0u64;
        let (mut max_in, mut max_sc, mut max_out) = (0u64, 0u64, 0u64);
        for c in 0..self.conv_count() {
            let b = self.layer_buffers(c, plan);
            if c < i {
                group1 += b.row_buff + b.line_out_buff + b.param_store;
            } else {
                max_in = max_in.max(b.in_frame_buff);
                max_sc = max_sc.max(b.shortcut_buff);
                max_out = max_out.max(b.frame_out_buff);
            }
        }
        group1 + 3 * max_in + max_sc + max_out
    }

    /// Weight traffic per frame in bytes. Pipelined layers read their weights
    /// once per output row unless they are kept on chip; main-group layers
    /// read them once. Input image and final output traffic is excluded.
    pub fn dram_access(&self, boundary: usize, params_on_chip: bool) -> u64 {
        (0..self.conv_count())
            .map(|c| {
                let bytes = self.conv_param_bytes(c);
                if c >= boundary {
                    bytes
                } else if params_on_chip {
                    0
                } else {
                    self.conv(c).h_out() as u64 * bytes
                }
            })
            .sum()
    }

    /// Pipeline timing `(t_g1, t_g2)` in cycles.
    pub fn group_times(&self, plan: &TilingPlan) -> (Rational, Rational) {
        let i = plan.boundary;
        let t = |c: usize| layer_time(self.conv(c), &rat(plan.tiles[c].pf()));
        let mut t_g1 = Rational::zero();
        if i > 0 {
            for c in 0..i - 1 {
                let d = self.net.effective_delay(c) as u64;
                t_g1 += t(c) * rat(d) / rat(self.conv(c).h_out() as u64);
            }
            t_g1 += t(i - 1);
        }
        let t_g2 = (i..self.conv_count()).map(t).fold(Rational::zero(), |a, b| a + b);
        (t_g1, t_g2)
    }

    /// Evaluates every cost of `plan`; `multipliers` comes from the caller's
    /// resource model.
    pub fn report(&self, plan: &TilingPlan, clock_hz: u64, multipliers: u64) -> CostReport {
        let (t_g1, t_g2) = self.group_times(plan);
        let bottleneck = if t_g1 > t_g2 { t_g1.clone() } else { t_g2.clone() };
        let frame_rate = if bottleneck.is_zero() {
            Rational::zero()
        } else {
            rat(clock_hz) / bottleneck
        };
        CostReport {
            boundary: plan.boundary,
            sram_bits: self.sram_size(plan),
            dram_bytes_per_frame: self.dram_access(plan.boundary, plan.params_on_chip),
            t_g1,
            t_g2,
            frame_rate,
            multipliers,
        }
    }
}

/// Cycles for one layer at parallelism `pf`: `H_out·W_out·N·M / PF`.
/// Pooling layers take no time in this model.
pub fn layer_time(layer: &LayerDesc, pf: &Rational) -> Rational {
    if !layer.is_conv() {
        return Rational::zero();
    }
    rat(layer.out_pixels() * layer.n as u64 * layer.m as u64) / pf
}
