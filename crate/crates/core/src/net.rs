//! Network and layer descriptions.
//!
//! A network is an ordered chain of convolution and max-pooling layers.
//! Feature maps use same-padding; a layer's output height is its input height
//! divided by the stride (rounded up). Width is carried alongside height so
//! that non-square inputs work; every `H²` in the cost model becomes `H·W`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("malformed network document: {0}")]
    Json(String),
    #[error("layer {}: invalid `{field}`: {message}", display_layer(.layer))]
    Schema {
        layer: Option<u32>,
        field: &'static str,
        message: String,
    },
    #[error("layer {layer}: expected {expected} input channels, found {found}")]
    GeometryMismatch { layer: u32, expected: u32, found: u32 },
    #[error("layer {layer}: `{field}` references layer {target}, which is not an earlier layer")]
    DanglingReference {
        layer: u32,
        field: &'static str,
        target: u32,
    },
    #[error("layer {layer}: {message}")]
    Domain { layer: u32, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn display_layer(layer: &Option<u32>) -> String {
    match layer {
        Some(id) => id.to_string(),
        None => "-".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "pointwise-conv")]
    PointwiseConv,
    #[serde(rename = "maxpool")]
    MaxPool,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        !matches!(self, LayerKind::MaxPool)
    }
}

/// One validated layer with resolved geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDesc {
    pub id: u32,
    pub kind: LayerKind,
    /// Kernel size in pixels.
    pub k: u32,
    pub stride: u32,
    pub h_in: u32,
    pub w_in: u32,
    /// Input channels.
    pub n: u32,
    /// Output channels.
    pub m: u32,
    /// `false` for layers kept at full precision (first/last).
    pub quantize: bool,
    pub shortcut_from: Option<u32>,
    pub concat_from: Option<u32>,
    /// Rows of pipeline delay this layer adds before the next one starts.
    pub delay_rows: u32,
}

impl LayerDesc {
    pub fn is_conv(&self) -> bool {
        self.kind.is_conv()
    }

    pub fn h_out(&self) -> u32 {
        self.h_in.div_ceil(self.stride)
    }

    pub fn w_out(&self) -> u32 {
        self.w_in.div_ceil(self.stride)
    }

    pub fn in_pixels(&self) -> u64 {
        self.h_in as u64 * self.w_in as u64
    }

    pub fn out_pixels(&self) -> u64 {
        self.h_out() as u64 * self.w_out() as u64
    }

    /// Weight count `K²·N·M`; pooling layers have none.
    pub fn params(&self) -> u64 {
        if !self.is_conv() {
            return 0;
        }
        let k = self.k as u64;
        k * k * self.n as u64 * self.m as u64
    }

    /// Multiply-accumulates per frame, `K²·H_out·W_out·N·M`.
    pub fn macs(&self) -> Result<u64, NetError> {
        if !self.is_conv() {
            return Err(NetError::Domain {
                layer: self.id,
                message: "MAC count requested for a pooling layer".into(),
            });
        }
        Ok(self.params() * self.out_pixels())
    }

    /// Output activations per frame, `H_out·W_out·M`.
    pub fn output_fmap_elems(&self) -> u64 {
        self.out_pixels() * self.m as u64
    }

    /// Default pipeline delay: `K−1` rows for `K ≥ 2`, one row for `K = 1`,
    /// `stride−1` rows for pooling.
    pub fn default_delay(kind: LayerKind, k: u32, stride: u32) -> u32 {
        match kind {
            LayerKind::MaxPool => stride - 1,
            _ if k >= 2 => k - 1,
            _ => 1,
        }
    }
}

/// Bit-widths used by the cost model and the quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Precision {
    /// Activation bits.
    pub q_a: u32,
    /// Dense weight bits.
    #[serde(default = "default_q_w")]
    pub q_w: u32,
    /// Partial-sum accumulator bits.
    #[serde(default = "default_q_s")]
    pub q_s: u32,
    /// Bits for layers that are not quantized.
    #[serde(default = "default_q_full")]
    pub q_full: u32,
}

fn default_q_w() -> u32 {
    8
}
fn default_q_s() -> u32 {
    32
}
fn default_q_full() -> u32 {
    32
}

impl Precision {
    pub fn new(q_a: u32, q_w: u32) -> Self {
        Precision {
            q_a,
            q_w,
            q_s: default_q_s(),
            q_full: default_q_full(),
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        for (field, v) in [
            ("q_a", self.q_a),
            ("q_w", self.q_w),
            ("q_s", self.q_s),
            ("q_full", self.q_full),
        ] {
            if v == 0 {
                return Err(schema(None, field, "bit-width must be at least 1"));
            }
        }
        if self.q_s < self.q_a + self.q_w {
            return Err(schema(
                None,
                "q_s",
                format!(
                    "accumulator width {} is narrower than q_a + q_w = {}",
                    self.q_s,
                    self.q_a + self.q_w
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputGeometry {
    pub h: u32,
    pub w: u32,
    pub c: u32,
}

/// A validated network: dense ids `1..=L`, chained geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkDesc {
    pub name: String,
    pub input: InputGeometry,
    pub precision: Precision,
    pub layers: Vec<LayerDesc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkFile {
    name: String,
    input: InputGeometry,
    precision: Precision,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    id: u32,
    kind: LayerKind,
    k: u32,
    #[serde(default = "one")]
    stride: u32,
    #[serde(default)]
    out_channels: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_channels: Option<u32>,
    #[serde(default = "yes")]
    quantize: bool,
    #[serde(default)]
    shortcut_from: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concat_from: Option<u32>,
    #[serde(default)]
    delay_rows: Option<u32>,
}

fn one() -> u32 {
    1
}
fn yes() -> bool {
    true
}

fn schema(layer: Option<u32>, field: &'static str, message: impl Into<String>) -> NetError {
    NetError::Schema {
        layer,
        field,
        message: message.into(),
    }
}

/// Parses and validates a network description document.
pub fn parse_network(document: &str) -> Result<NetworkDesc, NetError> {
    let file: NetworkFile =
        serde_json::from_str(document).map_err(|e| NetError::Json(e.to_string()))?;
    build(file)
}

fn build(file: NetworkFile) -> Result<NetworkDesc, NetError> {
    file.precision.validate()?;
    let input = file.input;
    if input.h == 0 || input.w == 0 || input.c == 0 {
        return Err(schema(None, "input", "dimensions must be positive"));
    }
    if file.layers.is_empty() {
        return Err(schema(None, "layers", "at least one layer is required"));
    }

    let mut layers: Vec<LayerDesc> = Vec::with_capacity(file.layers.len());
    for (idx, e) in file.layers.into_iter().enumerate() {
        let expected_id = idx as u32 + 1;
        if e.id != expected_id {
            return Err(schema(
                Some(e.id),
                "id",
                format!("ids must be dense and ordered; expected {expected_id}"),
            ));
        }
        let id = e.id;
        if e.k == 0 {
            return Err(schema(Some(id), "k", "kernel size must be at least 1"));
        }
        if !(1..=2).contains(&e.stride) {
            return Err(schema(Some(id), "stride", "stride must be 1 or 2"));
        }
        let (h_in, w_in, prev_m) = match layers.last() {
            Some(p) => (p.h_out(), p.w_out(), p.m),
            None => (input.h, input.w, input.c),
        };
        if h_in < e.k || w_in < e.k {
            return Err(schema(
                Some(id),
                "k",
                format!("kernel {} exceeds the {h_in}x{w_in} input feature map", e.k),
            ));
        }

        let mut n = prev_m;
        if let Some(src) = e.concat_from {
            let Some(source) = (src >= 1 && src < id).then(|| &layers[src as usize - 1]) else {
                return Err(NetError::DanglingReference {
                    layer: id,
                    field: "concat_from",
                    target: src,
                });
            };
            n += source.m;
        }
        if let Some(declared) = e.in_channels {
            if declared != n {
                return Err(NetError::GeometryMismatch {
                    layer: id,
                    expected: n,
                    found: declared,
                });
            }
        }
        if let Some(src) = e.shortcut_from {
            if src == 0 || src >= id {
                return Err(NetError::DanglingReference {
                    layer: id,
                    field: "shortcut_from",
                    target: src,
                });
            }
        }

        let m = match (e.kind, e.out_channels) {
            (LayerKind::MaxPool, None) => n,
            (LayerKind::MaxPool, Some(m)) if m == n => m,
            (LayerKind::MaxPool, Some(m)) => {
                return Err(NetError::GeometryMismatch {
                    layer: id,
                    expected: n,
                    found: m,
                })
            }
            (_, None) => return Err(schema(Some(id), "out_channels", "required for conv layers")),
            (_, Some(0)) => return Err(schema(Some(id), "out_channels", "must be at least 1")),
            (_, Some(m)) => m,
        };
        if e.kind == LayerKind::PointwiseConv && e.k != 1 {
            return Err(schema(Some(id), "k", "pointwise convolutions have k = 1"));
        }

        layers.push(LayerDesc {
            id,
            kind: e.kind,
            k: e.k,
            stride: e.stride,
            h_in,
            w_in,
            n,
            m,
            quantize: e.quantize,
            shortcut_from: e.shortcut_from,
            concat_from: e.concat_from,
            delay_rows: e
                .delay_rows
                .unwrap_or_else(|| LayerDesc::default_delay(e.kind, e.k, e.stride)),
        });
    }

    Ok(NetworkDesc {
        name: file.name,
        input,
        precision: file.precision,
        layers,
    })
}

impl NetworkDesc {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, NetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        parse_network(&text)
    }

    /// Serializes back to the document schema; re-parsing yields an equal value.
    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            name: self.name.clone(),
            input: self.input,
            precision: self.precision,
            layers: self
                .layers
                .iter()
                .map(|l| LayerEntry {
                    id: l.id,
                    kind: l.kind,
                    k: l.k,
                    stride: l.stride,
                    out_channels: Some(l.m),
                    in_channels: Some(l.n),
                    quantize: l.quantize,
                    shortcut_from: l.shortcut_from,
                    concat_from: l.concat_from,
                    delay_rows: Some(l.delay_rows),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    /// Total layer count `L` (including pooling layers).
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, id: u32) -> Option<&LayerDesc> {
        id.checked_sub(1).and_then(|i| self.layers.get(i as usize))
    }

    /// Convolution layers in order. Group boundaries index into this list.
    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerDesc> + '_ {
        self.layers.iter().filter(|l| l.is_conv())
    }

    pub fn conv_count(&self) -> usize {
        self.conv_layers().count()
    }

    /// Rows of delay between conv layer `c` (0-based conv ordinal) and the
    /// next conv layer: its own delay plus that of any pooling layers in
    /// between.
    pub fn effective_delay(&self, c: usize) -> u32 {
        let mut convs = 0usize;
        let mut total = 0u32;
        let mut counting = false;
        for l in &self.layers {
            if l.is_conv() {
                if counting {
                    break;
                }
                if convs == c {
                    counting = true;
                    total = l.delay_rows;
                }
                convs += 1;
            } else if counting {
                total += l.delay_rows;
            }
        }
        total
    }

    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(LayerDesc::params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.conv_layers().map(|l| l.params() * l.out_pixels()).sum()
    }
}
