//! Loop-nest traffic counter.
//!
//! Every layer's tile loops are executed with symbolic data. Pipelined
//! layers run one row pass per output row and stream their weights during
//! each pass; main-group layers walk output tiles, re-reading the input
//! frame from the on-chip frame buffer for each one, and fetch every weight
//! tile once.

use crate::cost::CostModel;
use crate::dse::{Tile, TilingPlan};
use crate::net::LayerDesc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Weights re-streamed per output row, inputs in line buffers.
    RowReuse,
    /// Weights read once, inputs re-read per output tile.
    FullReuse,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::RowReuse => "row-reuse",
            Scheme::FullReuse => "full-reuse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCounters {
    pub layer: u32,
    pub scheme: Scheme,
    pub dram_weight_bytes: u64,
    pub dram_fmap_read_bytes: u64,
    pub dram_fmap_write_bytes: u64,
    /// Buffers allocated for this layer (main-group layers: its own demand).
    pub sram_peak_bits: u64,
    pub cycles: u64,
    /// Times the input frame is streamed past the weights.
    pub input_passes: u64,
    /// Largest number of input rows resident at once (pipelined layers).
    pub peak_rows: u32,
}

pub const COUNTER_HEADER: [&str; 7] = [
    "layer",
    "scheme",
    "dram_weight_bytes",
    "dram_fmap_read_bytes",
    "dram_fmap_write_bytes",
    "sram_peak_bits",
    "cycles",
];

impl LayerCounters {
    pub fn csv_record(&self) -> [String; 7] {
        [
            self.layer.to_string(),
            self.scheme.name().to_string(),
            self.dram_weight_bytes.to_string(),
            self.dram_fmap_read_bytes.to_string(),
            self.dram_fmap_write_bytes.to_string(),
            self.sram_peak_bits.to_string(),
            self.cycles.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficReport {
    pub layers: Vec<LayerCounters>,
    pub dram_weight_bytes: u64,
    pub dram_fmap_bytes: u64,
    /// Pipelined-layer buffers plus the main layer's shared frame buffers.
    pub sram_bits: u64,
    /// Pipeline fill plus the last pipelined layer.
    pub group1_cycles: u64,
    pub group2_cycles: u64,
    /// All layer cycles plus the pipeline fill.
    pub cycles: u64,
}

/// Per-tile weight coverage inside one pass.
struct Coverage {
    hits: Vec<u32>,
}

impl Coverage {
    fn new(tiles: usize) -> Self {
        Coverage { hits: vec![0; tiles] }
    }

    fn touch(&mut self, tile: usize) {
        self.hits[tile] += 1;
    }

    fn finish_pass(&mut self, layer: u32) {
        assert!(self.hits.iter().all(|&h| h == 1), "layer {layer}: weight tiles not covered exactly once");
        self.hits.iter_mut().for_each(|h| *h = 0);
    }
}

fn bits_to_bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// Simulates a line-buffered layer and returns `(counters, cycles per row)`.
fn row_reuse_layer(layer: &LayerDesc, tile: Tile, weight_bytes: u64, weights_on_chip: bool, param_bits: u64, q_a: u64, q_s: u64) -> (LayerCounters, u64) {
    let out_tiles = layer.m.div_ceil(tile.t_o) as usize;
    let in_tiles = layer.n.div_ceil(tile.t_i) as usize;
    let k = layer.k as i64;
    let pad = (k - 1) / 2;
    let capacity_rows = layer.k + 1;
    let mut coverage = Coverage::new(out_tiles * in_tiles);

    let mut dram_weight = 0u64;
    let mut cycles = 0u64;
    let mut peak_rows = 0u32;
    // Input rows `[lo, hi)` are resident.
    let (mut lo, mut hi) = (0i64, 0i64);
    for r in 0..layer.h_out() as i64 {
        let need_lo = (r * layer.stride as i64 - pad).max(0);
        let need_hi = (r * layer.stride as i64 - pad + k).min(layer.h_in as i64);
        lo = lo.max(need_lo);
        hi = hi.max(need_hi);
        // The next input row streams in while this row is computed.
        let prefetch = i64::from(hi < layer.h_in as i64);
        let resident = (hi - lo + prefetch) as u32;
        assert!(resident <= capacity_rows, "layer {}: {resident} rows exceed {capacity_rows} line buffers", layer.id);
        peak_rows = peak_rows.max(resident);

        for to in 0..out_tiles {
            for ti in 0..in_tiles {
                coverage.touch(to * in_tiles + ti);
                cycles += layer.w_out() as u64;
            }
        }
        coverage.finish_pass(layer.id);
        if !weights_on_chip {
            dram_weight += weight_bytes;
        }
    }

    let line_bits = capacity_rows as u64 * layer.n as u64 * layer.w_in as u64 * q_a;
    let out_line_bits = tile.t_o as u64 * layer.w_out() as u64 * q_s;
    let store = if weights_on_chip { param_bits } else { 0 };
    let counters = LayerCounters {
        layer: layer.id,
        scheme: Scheme::RowReuse,
        dram_weight_bytes: dram_weight,
        dram_fmap_read_bytes: 0,
        dram_fmap_write_bytes: 0,
        sram_peak_bits: line_bits + out_line_bits + store,
        cycles,
        input_passes: 1,
        peak_rows,
    };
    let per_row = if layer.h_out() == 0 { 0 } else { cycles / layer.h_out() as u64 };
    (counters, per_row)
}

/// Main-layer execution of one layer with square tile `t`. With
/// `fmap_offchip` the input frame is fetched from DRAM on every output-tile
/// pass and the output is written back.
fn full_reuse_layer(layer: &LayerDesc, t: Tile, weight_bytes: u64, q_a: u64, fmap_offchip: bool) -> LayerCounters {
    let out_tiles = layer.m.div_ceil(t.t_o) as usize;
    let in_tiles = layer.n.div_ceil(t.t_i) as usize;
    let mut coverage = Coverage::new(out_tiles * in_tiles);
    let mut cycles = 0u64;
    let mut passes = 0u64;
    let mut fmap_read = 0u64;
    for to in 0..out_tiles {
        passes += 1;
        if fmap_offchip {
            fmap_read += bits_to_bytes(layer.in_pixels() * layer.n as u64 * q_a);
        }
        for ti in 0..in_tiles {
            coverage.touch(to * in_tiles + ti);
            cycles += layer.out_pixels();
        }
    }
    coverage.finish_pass(layer.id);
    LayerCounters {
        layer: layer.id,
        scheme: Scheme::FullReuse,
        dram_weight_bytes: weight_bytes,
        dram_fmap_read_bytes: fmap_read,
        dram_fmap_write_bytes: if fmap_offchip { bits_to_bytes(layer.output_fmap_elems() * q_a) } else { 0 },
        sram_peak_bits: 0,
        cycles,
        input_passes: passes,
        peak_rows: 0,
    }
}

/// Runs `plan` on the mixed-dataflow accelerator and counts traffic.
pub fn traffic_sim(model: &CostModel<'_>, plan: &TilingPlan) -> TrafficReport {
    let net = model.net();
    let q_a = net.precision.q_a as u64;
    let q_s = net.precision.q_s as u64;
    let i = plan.boundary;
    let mut layers = Vec::with_capacity(model.conv_count());
    let mut row_cycles = Vec::new();

    for c in 0..i {
        let layer = model.conv(c);
        let (counters, per_row) = row_reuse_layer(
            layer,
            plan.tiles[c],
            model.conv_param_bytes(c),
            plan.params_on_chip,
            model.conv_param_bits(c),
            q_a,
            q_s,
        );
        layers.push(counters);
        row_cycles.push(per_row);
    }

    // The main layer's physical buffers grow to the largest demand of any
    // layer it runs: three rotating input frames, one shortcut frame and
    // one output frame.
    let (mut in_frame, mut shortcut, mut out_frame) = (0u64, 0u64, 0u64);
    for c in i..model.conv_count() {
        let layer = model.conv(c);
        let mut counters = full_reuse_layer(layer, plan.tiles[c], model.conv_param_bytes(c), q_a, false);
        let need_in = layer.in_pixels() * layer.n as u64 * q_a;
        let need_sc = layer
            .shortcut_from
            .and_then(|s| net.layer(s))
            .map(|src| src.out_pixels() * src.m as u64 * q_a)
            .unwrap_or(0);
        let need_out = plan.tiles[c].t_o as u64 * layer.out_pixels() * q_s;
        counters.sram_peak_bits = 3 * need_in + need_sc + need_out;
        in_frame = in_frame.max(need_in);
        shortcut = shortcut.max(need_sc);
        out_frame = out_frame.max(need_out);
        layers.push(counters);
    }

    let group1_sram: u64 = layers[..i].iter().map(|l| l.sram_peak_bits).sum();
    let fill: u64 = (0..i.saturating_sub(1))
        .map(|c| net.effective_delay(c) as u64 * row_cycles[c])
        .sum();
    let group1_cycles = if i == 0 { 0 } else { fill + layers[i - 1].cycles };
    let group2_cycles = layers[i..].iter().map(|l| l.cycles).sum();
    let report = TrafficReport {
        dram_weight_bytes: layers.iter().map(|l| l.dram_weight_bytes).sum(),
        dram_fmap_bytes: layers.iter().map(|l| l.dram_fmap_read_bytes + l.dram_fmap_write_bytes).sum(),
        sram_bits: group1_sram + 3 * in_frame + shortcut + out_frame,
        group1_cycles,
        group2_cycles,
        cycles: layers.iter().map(|l| l.cycles).sum::<u64>() + fill,
        layers,
    };
    assert_eq!(report.dram_fmap_bytes, 0, "mixed dataflow keeps intermediate maps on chip");
    report
}

/// Every conv layer on a full-reuse engine whose feature maps live in DRAM.
pub fn full_reuse_offchip(model: &CostModel<'_>, tiles: &[Tile]) -> Vec<LayerCounters> {
    let q_a = model.net().precision.q_a as u64;
    (0..model.conv_count())
        .map(|c| full_reuse_layer(model.conv(c), tiles[c], model.conv_param_bytes(c), q_a, true))
        .collect()
}
