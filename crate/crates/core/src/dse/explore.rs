//! Group-boundary search and boundary sweeps.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tiling::{main_candidates, propagate_group1_tilings, select_main_tiling, Tile, TilingPlan};
use super::DseError;
use crate::cost::{CostModel, CostReport};
use crate::net::NetworkDesc;
use crate::rational::{abs_diff, fmt_rational, pow2_up_to, to_f64, Rational};

/// Abstract multiplier-count model used for the resource budget.
///
/// A pipelined layer costs `K²·PF` multipliers scaled by the weight of its
/// bit-width; the main layer costs `K²·PF` for its largest kernel. Binary
/// weights need no multipliers. Sparse high-precision kernels add their
/// allocated multipliers on top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiplierModel {
    /// Multiplier-equivalents per multiply at a given weight bit-width;
    /// widths not listed cost one.
    pub per_precision: BTreeMap<u32, u64>,
    /// Sparse-kernel multipliers per layer id.
    pub sparse: BTreeMap<u32, u64>,
}

impl Default for MultiplierModel {
    fn default() -> Self {
        MultiplierModel {
            per_precision: BTreeMap::from([(1, 0)]),
            sparse: BTreeMap::new(),
        }
    }
}

impl MultiplierModel {
    pub fn weight(&self, bits: u32) -> u64 {
        self.per_precision.get(&bits).copied().unwrap_or(1)
    }

    fn layer_bits(net: &NetworkDesc, quantize: bool) -> u32 {
        if quantize {
            net.precision.q_w
        } else {
            net.precision.q_full
        }
    }

    /// Multipliers used by the pipelined layers `0..boundary` with `tiles`.
    pub fn group1(&self, net: &NetworkDesc, tiles: &[Tile]) -> u64 {
        net.conv_layers()
            .zip(tiles)
            .map(|(l, t)| {
                let k2 = l.k as u64 * l.k as u64;
                k2 * t.pf() * self.weight(Self::layer_bits(net, l.quantize))
                    + self.sparse.get(&l.id).copied().unwrap_or(0)
            })
            .sum()
    }

    /// Multipliers of the main layer running convs `boundary..` with tile `t`.
    pub fn main(&self, net: &NetworkDesc, boundary: usize, t: u32) -> u64 {
        let layers: Vec<_> = net.conv_layers().skip(boundary).collect();
        if layers.is_empty() {
            return 0;
        }
        let dense = layers
            .iter()
            .map(|l| l.k as u64 * l.k as u64 * self.weight(Self::layer_bits(net, l.quantize)))
            .max()
            .unwrap_or(0);
        let sparse = layers
            .iter()
            .map(|l| self.sparse.get(&l.id).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        dense * t as u64 * t as u64 + sparse
    }

    pub fn total(&self, net: &NetworkDesc, plan: &TilingPlan) -> u64 {
        let g1 = self.group1(net, &plan.tiles[..plan.boundary]);
        g1 + plan.main_tile().map_or(0, |t| self.main(net, plan.boundary, t))
    }
}

/// Budgets and platform settings for the search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DseConfig {
    /// On-chip memory budget in bits.
    pub sram_budget_bits: u64,
    pub multiplier_budget: u64,
    pub clock_hz: u64,
    pub params_on_chip: bool,
    pub multipliers: MultiplierModel,
}

impl DseConfig {
    pub fn new(sram_budget_bits: u64, multiplier_budget: u64, clock_hz: u64) -> Self {
        DseConfig {
            sram_budget_bits,
            multiplier_budget,
            clock_hz,
            params_on_chip: false,
            multipliers: MultiplierModel::default(),
        }
    }

    pub fn params_on_chip(mut self, on: bool) -> Self {
        self.params_on_chip = on;
        self
    }
}

/// Why a boundary (or candidate) was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constraint {
    Sram,
    Multipliers,
    Seed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub plan: TilingPlan,
    pub report: CostReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOutcome {
    pub boundary: usize,
    /// Best feasible candidate at this boundary.
    pub best: Option<Candidate>,
    /// Constraints that rejected candidates here.
    pub binding: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub plan: TilingPlan,
    pub report: CostReport,
    pub outcomes: Vec<BoundaryOutcome>,
}

/// Seeds for the first pipelined layer in reduction order: start from the
/// largest power-of-two tiles, halve `T_o` first, then `T_i`.
pub fn seed_order(net: &NetworkDesc) -> Vec<Tile> {
    let Some(first) = net.conv_layers().next() else {
        return Vec::new();
    };
    let mut seeds = Vec::new();
    for &t_i in pow2_up_to(first.n as u64).iter().rev() {
        for &t_o in pow2_up_to(first.m as u64).iter().rev() {
            seeds.push(Tile { t_i: t_i as u32, t_o: t_o as u32 });
        }
    }
    seeds
}

/// Ordering used everywhere a winner is picked: higher frame rate, then
/// smaller SRAM, then smaller pipeline imbalance, then fewer multipliers.
fn better(a: &CostReport, b: &CostReport) -> bool {
    match a.frame_rate.cmp(&b.frame_rate) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    match a.sram_bits.cmp(&b.sram_bits) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    let (ga, gb) = (abs_diff(&a.t_g1, &a.t_g2), abs_diff(&b.t_g1, &b.t_g2));
    if ga != gb {
        return ga < gb;
    }
    a.multipliers < b.multipliers
}

/// Searches every tiling at one boundary.
///
/// Seeds are visited in reduction order; a seed whose pipelined layers
/// alone exceed the multiplier budget is reduced (skipped). For each
/// remaining seed every main-layer tile is tried, and candidates over the
/// SRAM or multiplier budget are rejected.
pub fn evaluate_boundary(model: &CostModel<'_>, cfg: &DseConfig, boundary: usize) -> BoundaryOutcome {
    let net = model.net();
    let mut binding = Vec::new();
    let mut best: Option<Candidate> = None;

    let seeds: Vec<Option<Tile>> = if boundary == 0 {
        vec![None]
    } else {
        seed_order(net).into_iter().map(Some).collect()
    };
    let mains: Vec<Option<u32>> = if boundary >= model.conv_count() {
        vec![None]
    } else {
        main_candidates(net, boundary).into_iter().map(Some).collect()
    };

    for seed in seeds {
        let group1: Vec<Tile> = match seed {
            None => Vec::new(),
            Some(s) => match propagate_group1_tilings(net, boundary, s.t_i, s.t_o) {
                Ok(p) => p.into_iter().map(|p| p.tile).collect(),
                Err(_) => {
                    binding.push(Constraint::Seed);
                    continue;
                }
            },
        };
        let g1_mults = cfg.multipliers.group1(net, &group1);
        if g1_mults > cfg.multiplier_budget {
            binding.push(Constraint::Multipliers);
            continue;
        }
        for &main in &mains {
            let mut tiles = group1.clone();
            if let Some(t) = main {
                tiles.extend(std::iter::repeat_n(Tile::square(t), model.conv_count() - boundary));
            }
            let plan = TilingPlan { boundary, params_on_chip: cfg.params_on_chip, tiles };
            let mults = g1_mults + main.map_or(0, |t| cfg.multipliers.main(net, boundary, t));
            if mults > cfg.multiplier_budget {
                binding.push(Constraint::Multipliers);
                continue;
            }
            let report = model.report(&plan, cfg.clock_hz, mults);
            if report.sram_bits > cfg.sram_budget_bits {
                binding.push(Constraint::Sram);
                continue;
            }
            if best.as_ref().is_none_or(|b| better(&report, &b.report)) {
                best = Some(Candidate { plan, report });
            }
        }
    }
    binding.sort();
    binding.dedup();
    BoundaryOutcome { boundary, best, binding }
}

/// Boundary and tiling search: for every boundary find the fastest feasible
/// tiling, then return the boundary with the highest frame rate, ties going
/// to the smaller SRAM and then the smaller boundary.
pub fn algorithm1(model: &CostModel<'_>, cfg: &DseConfig) -> Result<Selection, DseError> {
    let outcomes: Vec<BoundaryOutcome> = (0..=model.conv_count())
        .map(|i| evaluate_boundary(model, cfg, i))
        .collect();
    select_boundary(outcomes)
}

/// Picks the winning boundary from already evaluated outcomes.
pub fn select_boundary(outcomes: Vec<BoundaryOutcome>) -> Result<Selection, DseError> {
    let mut winner: Option<&Candidate> = None;
    for c in outcomes.iter().filter_map(|o| o.best.as_ref()) {
        let replace = match winner {
            None => true,
            Some(w) => match c.report.frame_rate.cmp(&w.report.frame_rate) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => c.report.sram_bits < w.report.sram_bits,
            },
        };
        if replace {
            winner = Some(c);
        }
    }
    match winner {
        Some(w) => Ok(Selection {
            plan: w.plan.clone(),
            report: w.report.clone(),
            outcomes,
        }),
        None => Err(DseError::Infeasible(
            outcomes.into_iter().map(|o| (o.boundary, o.binding)).collect(),
        )),
    }
}

/// One sweep row per boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub boundary: usize,
    pub sram_bits: u64,
    pub dram_bytes: u64,
    pub t_g1: Rational,
    pub t_g2: Rational,
    pub frame_rate: Rational,
    pub feasible: bool,
}

pub const SWEEP_HEADER: [&str; 7] = [
    "boundary",
    "sram_bits",
    "dram_bytes",
    "t_g1",
    "t_g2",
    "frame_rate",
    "feasible",
];

impl SweepRow {
    pub fn csv_record(&self) -> [String; 7] {
        [
            self.boundary.to_string(),
            self.sram_bits.to_string(),
            self.dram_bytes.to_string(),
            fmt_rational(&self.t_g1),
            fmt_rational(&self.t_g2),
            fmt_rational(&self.frame_rate),
            self.feasible.to_string(),
        ]
    }
}

/// Default plan for a boundary ignoring budgets: the largest seed and the
/// main tile closest to the pipelined group's time.
pub fn reference_plan(net: &NetworkDesc, boundary: usize, params_on_chip: bool) -> Result<TilingPlan, DseError> {
    let convs = net.conv_count();
    let mut tiles = Vec::with_capacity(convs);
    let mut last_err = None;
    if boundary > 0 {
        for seed in seed_order(net) {
            match propagate_group1_tilings(net, boundary, seed.t_i, seed.t_o) {
                Ok(p) => {
                    tiles = p.into_iter().map(|p| p.tile).collect();
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        if tiles.is_empty() {
            return Err(last_err.unwrap_or(DseError::Boundary { boundary, convs }));
        }
    }
    let partial = TilingPlan { boundary, params_on_chip, tiles: tiles.clone() };
    let t_g1 = group1_time(net, &partial);
    if let Some(t) = select_main_tiling(net, boundary, &t_g1, |_| true)? {
        tiles.extend(std::iter::repeat_n(Tile::square(t), convs - boundary));
    }
    Ok(TilingPlan { boundary, params_on_chip, tiles })
}

fn group1_time(net: &NetworkDesc, partial: &TilingPlan) -> Rational {
    // Pad group 2 with unit tiles just to evaluate t_g1.
    let mut padded = partial.clone();
    padded.tiles.resize(net.conv_count(), Tile::square(1));
    CostModel::new(net).group_times(&padded).0
}

/// Evaluates one plan per boundary (`plans[i].boundary == i` is not
/// required) and flags each against the budgets.
pub fn sweep(model: &CostModel<'_>, cfg: &DseConfig, plans: &[TilingPlan]) -> Vec<SweepRow> {
    plans
        .iter()
        .map(|plan| {
            let mults = cfg.multipliers.total(model.net(), plan);
            let r = model.report(plan, cfg.clock_hz, mults);
            SweepRow {
                boundary: plan.boundary,
                sram_bits: r.sram_bits,
                dram_bytes: r.dram_bytes_per_frame,
                feasible: r.sram_bits <= cfg.sram_budget_bits && mults <= cfg.multiplier_budget,
                t_g1: r.t_g1,
                t_g2: r.t_g2,
                frame_rate: r.frame_rate,
            }
        })
        .collect()
}

/// Per-boundary plans for a sweep: the best feasible candidate where one
/// exists, otherwise the budget-free reference plan. Boundaries where no
/// seed propagates at all are left out.
pub fn sweep_plans(model: &CostModel<'_>, cfg: &DseConfig, outcomes: &[BoundaryOutcome]) -> Result<Vec<TilingPlan>, DseError> {
    let mut plans = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match &o.best {
            Some(c) => plans.push(c.plan.clone()),
            None => match reference_plan(model.net(), o.boundary, cfg.params_on_chip) {
                Ok(p) => plans.push(p),
                Err(DseError::InfeasibleSeed { conv, reason }) => {
                    log::warn!("boundary {} skipped: conv {conv}: {reason}", o.boundary);
                }
                Err(e) => return Err(e),
            },
        }
    }
    Ok(plans)
}

/// Human-readable summary of a selected plan.
pub fn describe(model: &CostModel<'_>, plan: &TilingPlan, report: &CostReport) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "network: {}", model.net().name);
    let _ = writeln!(s, "boundary: {} of {} conv layers", plan.boundary, model.conv_count());
    for (c, t) in plan.tiles.iter().enumerate() {
        let l = model.conv(c);
        let group = if c < plan.boundary { "pipelined" } else { "main" };
        let _ = writeln!(s, "  layer {:>3} ({group:>9}): T_i = {:>4}, T_o = {:>4}", l.id, t.t_i, t.t_o);
    }
    let _ = writeln!(s, "sram: {} bits ({:.3} MiB)", report.sram_bits, report.sram_bits as f64 / 8.0 / 1048576.0);
    let _ = writeln!(
        s,
        "dram: {} bytes/frame ({:.3} MiB)",
        report.dram_bytes_per_frame,
        report.dram_bytes_per_frame as f64 / 1048576.0
    );
    let _ = writeln!(s, "t_g1: {} cycles, t_g2: {} cycles", fmt_rational(&report.t_g1), fmt_rational(&report.t_g2));
    let _ = writeln!(s, "frame rate: {:.3} fps", to_f64(&report.frame_rate));
    let _ = writeln!(s, "multipliers: {}", report.multipliers);
    s
}
