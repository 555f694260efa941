//! Tiling plans and the balanced-pipeline tile propagation for group 1.

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::DseError;
use crate::cost::layer_time;
use crate::net::NetworkDesc;
use crate::rational::{abs_diff, floor_pow2, is_pow2, pow2_up_to, rat, round_pow2, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tile {
    pub t_i: u32,
    pub t_o: u32,
}

impl Tile {
    pub fn square(t: u32) -> Self {
        Tile { t_i: t, t_o: t }
    }

    /// Parallelism factor `T_i·T_o`.
    pub fn pf(&self) -> u64 {
        self.t_i as u64 * self.t_o as u64
    }
}

/// Tiling factors for every conv layer plus the group boundary.
///
/// `boundary` counts conv layers: conv layers `0..boundary` are pipelined,
/// the rest run on the main layer with one shared square tile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub boundary: usize,
    pub params_on_chip: bool,
    pub tiles: Vec<Tile>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("plan has {found} tiles, network has {expected} conv layers")]
    TileCount { expected: usize, found: usize },
    #[error("boundary {boundary} exceeds conv layer count {convs}")]
    Boundary { boundary: usize, convs: usize },
    #[error("conv {conv}: tile {tile:?} outside [1, N]x[1, M] = [1, {n}]x[1, {m}]")]
    Range { conv: usize, tile: Tile, n: u32, m: u32 },
    #[error("conv {conv}: T_i = {t_i} does not chain from the previous T_o = {prev_t_o}")]
    Chain { conv: usize, t_i: u32, prev_t_o: u32 },
    #[error("conv {conv}: parallelism factor {pf} is not a power of two")]
    NotPow2 { conv: usize, pf: u64 },
    #[error("conv {conv}: main-layer tile {tile:?} must be square and equal across group 2")]
    MainTile { conv: usize, tile: Tile },
}

impl TilingPlan {
    /// The shared main-layer tile, if group 2 is non-empty.
    pub fn main_tile(&self) -> Option<u32> {
        self.tiles.get(self.boundary).map(|t| t.t_o)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Checks every structural invariant against `net`.
    pub fn validate(&self, net: &NetworkDesc) -> Result<(), PlanError> {
        let convs: Vec<_> = net.conv_layers().collect();
        if self.tiles.len() != convs.len() {
            return Err(PlanError::TileCount { expected: convs.len(), found: self.tiles.len() });
        }
        if self.boundary > convs.len() {
            return Err(PlanError::Boundary { boundary: self.boundary, convs: convs.len() });
        }
        for (c, (tile, layer)) in self.tiles.iter().zip(&convs).enumerate() {
            if tile.t_i == 0 || tile.t_o == 0 || tile.t_i > layer.n || tile.t_o > layer.m {
                return Err(PlanError::Range { conv: c, tile: *tile, n: layer.n, m: layer.m });
            }
            if !is_pow2(tile.pf()) {
                return Err(PlanError::NotPow2 { conv: c, pf: tile.pf() });
            }
            if c < self.boundary {
                if c > 0 && tile.t_i != self.tiles[c - 1].t_o {
                    return Err(PlanError::Chain { conv: c, t_i: tile.t_i, prev_t_o: self.tiles[c - 1].t_o });
                }
            } else if tile.t_i != tile.t_o || tile.t_o != self.tiles[self.boundary].t_o {
                return Err(PlanError::MainTile { conv: c, tile: *tile });
            }
        }
        Ok(())
    }
}

/// One propagated group-1 tile: the exact balanced value and the
/// power-of-two tile actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedTile {
    pub ideal_t_i: Rational,
    pub ideal_t_o: Rational,
    pub tile: Tile,
}

/// Derives tiles for conv layers `0..boundary` from the first layer's seed
/// so that every pipelined layer takes the same time as the first:
/// `T_i(l+1) = T_o(l)` and `T_o(l+1) = H²(l+1)·M(l+1)·T_i(l) / (H²(l)·N(l))`.
///
/// The ideal chain is exact. The realised chain rounds each `T_o` to the
/// nearest power of two (ties up) targeting the seed layer's time, then
/// clamps it to the largest power of two not above `M`.
pub fn propagate_group1_tilings(
    net: &NetworkDesc,
    boundary: usize,
    seed_t_i: u32,
    seed_t_o: u32,
) -> Result<Vec<PropagatedTile>, DseError> {
    let convs: Vec<_> = net.conv_layers().collect();
    if boundary == 0 {
        return Ok(Vec::new());
    }
    if boundary > convs.len() {
        return Err(DseError::Boundary { boundary, convs: convs.len() });
    }
    let first = convs[0];
    if seed_t_i == 0 || seed_t_o == 0 || seed_t_i > first.n || seed_t_o > first.m {
        return Err(DseError::InfeasibleSeed {
            conv: 0,
            reason: format!("seed ({seed_t_i}, {seed_t_o}) outside [1, {}]x[1, {}]", first.n, first.m),
        });
    }

    let seed = Tile { t_i: seed_t_i, t_o: seed_t_o };
    let target = layer_time(first, &rat(seed.pf()));
    let mut out = vec![PropagatedTile {
        ideal_t_i: rat(seed_t_i as u64),
        ideal_t_o: rat(seed_t_o as u64),
        tile: seed,
    }];

    for c in 1..boundary {
        let prev_layer = convs[c - 1];
        let layer = convs[c];
        let prev = &out[c - 1];
        let ideal_t_i = prev.ideal_t_o.clone();
        let ideal_t_o = rat(layer.out_pixels() * layer.m as u64) * &prev.ideal_t_i
            / rat(prev_layer.out_pixels() * prev_layer.n as u64);
        if ideal_t_o < Rational::one() {
            return Err(DseError::InfeasibleSeed {
                conv: c,
                reason: format!("balanced T_o = {ideal_t_o} is below one"),
            });
        }
        let t_i = prev.tile.t_o;
        // T_o that makes this layer's time equal the seed layer's.
        let wanted = rat(layer.out_pixels() * layer.n as u64 * layer.m as u64) / (rat(t_i as u64) * &target);
        let t_o = round_pow2(&wanted).min(floor_pow2(layer.m as u64)) as u32;
        out.push(PropagatedTile { ideal_t_i, ideal_t_o, tile: Tile { t_i, t_o } });
    }
    Ok(out)
}

/// Power-of-two main-layer tiles usable by every conv in `boundary..`.
pub fn main_candidates(net: &NetworkDesc, boundary: usize) -> Vec<u32> {
    let cap = net
        .conv_layers()
        .skip(boundary)
        .map(|l| l.n.min(l.m))
        .min();
    match cap {
        Some(cap) => pow2_up_to(cap as u64).into_iter().map(|t| t as u32).collect(),
        None => Vec::new(),
    }
}

/// Main-group time with a square tile `t`.
pub fn main_group_time(net: &NetworkDesc, boundary: usize, t: u32) -> Rational {
    let pf = rat(t as u64 * t as u64);
    net.conv_layers()
        .skip(boundary)
        .map(|l| layer_time(l, &pf))
        .fold(Rational::zero(), |a, b| a + b)
}

/// Picks the main-layer tile whose group time is closest to `t_g1`.
/// `affordable` filters candidates (multiplier budget); ties go to the
/// smaller tile. Returns `Ok(None)` when group 2 is empty.
pub fn select_main_tiling(
    net: &NetworkDesc,
    boundary: usize,
    t_g1: &Rational,
    affordable: impl Fn(u32) -> bool,
) -> Result<Option<u32>, DseError> {
    if boundary >= net.conv_count() {
        return Ok(None);
    }
    let mut best: Option<(Rational, u32)> = None;
    for t in main_candidates(net, boundary).into_iter().filter(|&t| affordable(t)) {
        let gap = abs_diff(t_g1, &main_group_time(net, boundary, t));
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, t));
        }
    }
    best.map(|(_, t)| Some(t)).ok_or(DseError::NoMainCandidate { boundary })
}
