//! Command-line front end.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost::{CostModel, ParamBits};
use crate::dse::{self, DseConfig, TilingPlan};
use crate::error::Error;
use crate::gp::{self, Exploration, ExternalObjective, GpConfig, Kernel, Objective, SyntheticObjective};
use crate::net::NetworkDesc;
use crate::quant::{self, compression_rate};
use crate::sim;
use crate::sparse::{self, SparseError};

#[derive(Debug, Parser)]
#[command(name = "mixdse", version, about = "Mixed-dataflow accelerator exploration and mixed-precision weight tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search group boundary and tiling; write the per-boundary sweep.
    Dse(DseArgs),
    /// Quantize a weight file and write the encoded model.
    Quantize(QuantizeArgs),
    /// Search each layer's high-precision ratio with GP-UCB.
    OptimizeSparsity(OptimizeArgs),
    /// Count traffic of a plan and optionally verify the mixed convolution.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DseArgs {
    /// Network description (JSON).
    #[arg(long)]
    pub net: PathBuf,
    /// On-chip memory budget, e.g. `4MiB`, `512KB`, `3000000b`.
    #[arg(long, value_parser = parse_size_bits)]
    pub alpha: Option<u64>,
    /// Multiplier budget.
    #[arg(long)]
    pub multipliers: Option<u64>,
    /// Clock frequency in Hz.
    #[arg(long, default_value = "200e6", value_parser = parse_hz)]
    pub clock: u64,
    /// Keep pipelined-layer weights on chip.
    #[arg(long)]
    pub params_on_chip: bool,
    /// Per-layer high-precision ratios (JSON map id -> p) for mixed storage.
    #[arg(long)]
    pub ratios: Option<PathBuf>,
    /// Sweep CSV destination (stdout when omitted).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the chosen plan as JSON.
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Float weights (`MPQW` file).
    #[arg(long)]
    pub weights: PathBuf,
    /// Per-layer ratios (JSON map id -> p).
    #[arg(long, conflicts_with = "ratio")]
    pub ratios: Option<PathBuf>,
    /// One ratio for every quantized layer.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Tiling plan supplying each layer's block shape.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Block tile when no plan is given.
    #[arg(long, default_value_t = 16)]
    pub tile: u32,
    #[arg(long, default_value_t = sparse::DEFAULT_COORD_BITS)]
    pub coord_bits: u32,
    /// Encoded model destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Layer ids to optimize (default: every quantized conv layer).
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<u32>,
    /// Objective command; reads p on stdin, prints `L` or `mAP C`.
    /// The built-in synthetic objective is used when omitted.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    pub command: Vec<String>,
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub length_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub noise: f64,
    #[arg(long, default_value_t = 2.0)]
    pub omega: f64,
    /// Use the growing exploration schedule instead of a constant weight.
    #[arg(long)]
    pub omega_schedule: bool,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for per-layer trace CSVs.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Ratios JSON destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub ratios: Option<PathBuf>,
    /// Counter CSV destination (stdout when omitted).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Run the convolution bit-exactness suite.
    #[arg(long)]
    pub verify_conv: bool,
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also check every layer of this encoded model.
    #[arg(long)]
    pub encoded: Option<PathBuf>,
}

/// Parses a memory size into bits. Bare numbers and a `b` suffix are bits;
/// `B`, `KB`/`KiB`, `MB`/`MiB`, `GB`/`GiB` are bytes.
pub fn parse_size_bits(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num.trim().parse().map_err(|e| format!("bad size {s:?}: {e}"))?;
    let bits_per_unit = match unit.trim() {
        "" | "b" => 1.0,
        "B" => 8.0,
        "KB" => 8e3,
        "KiB" => 8.0 * 1024.0,
        "MB" => 8e6,
        "MiB" => 8.0 * 1024.0 * 1024.0,
        "GB" => 8e9,
        "GiB" => 8.0 * 1024.0 * 1024.0 * 1024.0,
        u => return Err(format!("unknown unit {u:?}")),
    };
    let bits = value * bits_per_unit;
    if !(bits > 0.0 && bits.is_finite()) {
        return Err(format!("size {s:?} must be positive"));
    }
    Ok(bits.round() as u64)
}

pub fn parse_hz(s: &str) -> Result<u64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("bad frequency {s:?}: {e}"))?;
    if v >= 1.0 && v.is_finite() {
        Ok(v.round() as u64)
    } else {
        Err(format!("frequency {s:?} must be at least 1 Hz"))
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("create {}", path.display()), e))
}

/// Reads a JSON map from layer id to ratio.
pub fn read_ratios(path: &Path) -> Result<BTreeMap<u32, f64>, Error> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

pub fn read_plan(path: &Path, net: &NetworkDesc) -> Result<TilingPlan, Error> {
    let plan = TilingPlan::from_json(&read_text(path)?).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    plan.validate(net).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(plan)
}

fn param_bits(net: &NetworkDesc, ratios: Option<&BTreeMap<u32, f64>>) -> ParamBits {
    match ratios {
        Some(r) => ParamBits::mixed(net, |id| r.get(&id).copied().unwrap_or(1.0)),
        None => ParamBits::dense(net),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_csv<const N: usize>(out: Box<dyn Write>, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("flush csv", e))
}

pub fn cmd_dse(args: &DseArgs) -> Result<(), Error> {
    let net = NetworkDesc::from_path(&args.net)?;
    let ratios = args.ratios.as_deref().map(read_ratios).transpose()?;
    let model = CostModel::with_param_bits(&net, param_bits(&net, ratios.as_ref()));
    let cfg = DseConfig::new(args.alpha.unwrap_or(u64::MAX), args.multipliers.unwrap_or(u64::MAX), args.clock)
        .params_on_chip(args.params_on_chip);
    let outcomes: Vec<_> = (0..=model.conv_count()).map(|i| dse::evaluate_boundary(&model, &cfg, i)).collect();
    let plans = dse::sweep_plans(&model, &cfg, &outcomes)?;
    let rows = dse::sweep(&model, &cfg, &plans);
    write_csv(output(args.csv.as_deref())?, dse::SWEEP_HEADER, rows.iter().map(|r| r.csv_record()))?;

    let selection = dse::select_boundary(outcomes)?;
    let summary = dse::describe(&model, &selection.plan, &selection.report);
    if args.csv.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    if let Some(p) = &args.plan_out {
        let mut w = create(p)?;
        writeln!(w, "{}", selection.plan.to_json()).map_err(|e| Error::io(format!("write {}", p.display()), e))?;
    }
    Ok(())
}

pub fn cmd_quantize(args: &QuantizeArgs) -> Result<(), Error> {
    let net = NetworkDesc::from_path(&args.net)?;
    let file = File::open(&args.weights).map_err(|e| Error::io(format!("open {}", args.weights.display()), e))?;
    let tensors = quant::read_weight_file(BufReader::new(file))?;
    let ratios: BTreeMap<u32, f64> = match (&args.ratios, args.ratio) {
        (Some(p), _) => read_ratios(p)?,
        (None, Some(r)) => net.conv_layers().filter(|l| l.quantize).map(|l| (l.id, r)).collect(),
        (None, None) => return Err(Error::Input("give --ratios or --ratio".into())),
    };
    let plan = args.plan.as_deref().map(|p| read_plan(p, &net)).transpose()?;
    let total_params = net.total_params();
    let mut encoded = Vec::new();

    println!("layer,p,bits,compression,encoded_bytes");
    for (c, layer) in net.conv_layers().enumerate() {
        let tensor = tensors
            .iter()
            .find(|t| t.layer_id == layer.id)
            .ok_or_else(|| Error::Input(format!("no weights for layer {}", layer.id)))?;
        if (tensor.m, tensor.n, tensor.k) != (layer.m, layer.n, layer.k) {
            return Err(Error::Input(format!(
                "layer {}: weights are {}x{}x{}, network expects {}x{}x{}",
                layer.id, tensor.m, tensor.n, tensor.k, layer.m, layer.n, layer.k
            )));
        }
        if !layer.quantize {
            println!("{},-,{},-,-", layer.id, net.precision.q_full);
            continue;
        }
        let p = *ratios.get(&layer.id).ok_or(quant::QuantError::MissingRatio(layer.id))?;
        let mixed = quant::quantize_layer(tensor, p)?;
        let tile = plan.as_ref().map(|pl| pl.tiles[c]).unwrap_or(dse::Tile::square(args.tile));
        let enc = sparse::encode(&mixed, tile.t_i.min(layer.n), tile.t_o.min(layer.m), args.coord_bits).map_err(|e| match e {
            SparseError::CoordOverflow { needed, .. } => Error::Input(format!(
                "layer {}: {e}; rerun with --coord-bits {needed} or a smaller --tile",
                layer.id
            )),
            other => other.into(),
        })?;
        println!(
            "{},{p},{},{:.6},{}",
            layer.id,
            1.0 + 7.0 * p,
            compression_rate(p, layer.params(), total_params),
            sparse::layer_file_size(&enc)
        );
        encoded.push(enc);
    }

    let avg = quant::avg_bits(&net, &ratios)?;
    let mut w = create(&args.out)?;
    sparse::write_model(&mut w, &encoded)?;
    w.flush().map_err(|e| Error::io(format!("write {}", args.out.display()), e))?;
    println!("average bits per weight: {avg:.4}");
    println!("compression vs 32-bit: {:.2}x", 32.0 / avg);
    Ok(())
}

pub fn cmd_optimize_sparsity(args: &OptimizeArgs) -> Result<(), Error> {
    let net = NetworkDesc::from_path(&args.net)?;
    let ids: Vec<u32> = if args.layers.is_empty() {
        net.conv_layers().filter(|l| l.quantize).map(|l| l.id).collect()
    } else {
        args.layers.clone()
    };
    let cfg = GpConfig {
        kernel: Kernel { length_scale: args.length_scale, signal: args.signal },
        noise: args.noise,
        exploration: if args.omega_schedule { Exploration::Schedule } else { Exploration::Constant(args.omega) },
        n_iter: args.iters,
        seed: args.seed,
        ..GpConfig::default()
    };
    if let Some(dir) = &args.trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
    }
    let total = net.total_params() as f64;
    let mut best = BTreeMap::new();
    let mut first_failure = None;
    for id in ids {
        let layer = net
            .layer(id)
            .filter(|l| l.is_conv())
            .ok_or_else(|| Error::Input(format!("layer {id} is not a conv layer")))?;
        let mut objective: Box<dyn Objective> = if args.command.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(id as u64));
            let mut synth = SyntheticObjective::random(&mut rng, args.gamma);
            synth.share = layer.params() as f64 / total;
            Box::new(synth)
        } else {
            Box::new(ExternalObjective {
                program: args.command[0].clone(),
                args: args.command[1..].to_vec(),
                gamma: args.gamma,
                layer_id: Some(id),
            })
        };
        let (trace, result) = match gp::optimize(objective.as_mut(), &cfg) {
            Ok(r) => (r.trace.clone(), Ok(r)),
            Err(abort) => (abort.trace.clone(), Err(abort)),
        };
        if let Some(dir) = &args.trace_dir {
            let path = dir.join(format!("layer{id}.csv"));
            write_csv(Box::new(create(&path)?), gp::TRACE_HEADER, trace.iter().map(|r| r.csv_record()))?;
        }
        match result {
            Ok(r) => {
                println!("layer {id}: p* = {:.3}, L = {:.6}", r.best_p, r.best_value);
                best.insert(id, r.best_p);
            }
            Err(abort) => {
                log::error!("layer {id}: {abort}");
                first_failure.get_or_insert(abort);
            }
        }
    }
    if let Some(p) = &args.out {
        let mut w = create(p)?;
        let text = serde_json::to_string_pretty(&best).expect("map serializes");
        writeln!(w, "{text}").map_err(|e| Error::io(format!("write {}", p.display()), e))?;
    }
    match first_failure {
        Some(abort) => Err(abort.into()),
        None => Ok(()),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let net = NetworkDesc::from_path(&args.net)?;
    if let Some(path) = &args.plan {
        let plan = read_plan(path, &net)?;
        let ratios = args.ratios.as_deref().map(read_ratios).transpose()?;
        let model = CostModel::with_param_bits(&net, param_bits(&net, ratios.as_ref()));
        let report = sim::traffic_sim(&model, &plan);
        let total = [
            "total".to_string(),
            "-".to_string(),
            report.dram_weight_bytes.to_string(),
            "0".to_string(),
            "0".to_string(),
            report.sram_bits.to_string(),
            report.cycles.to_string(),
        ];
        let rows = report.layers.iter().map(|l| l.csv_record()).chain(std::iter::once(total));
        write_csv(output(args.csv.as_deref())?, sim::COUNTER_HEADER, rows)?;
        let expected = (model.dram_access(plan.boundary, plan.params_on_chip), model.sram_size(&plan));
        if (report.dram_weight_bytes, report.sram_bits) != expected {
            return Err(Error::Verification(format!(
                "simulated (dram {}, sram {}) differs from the cost model (dram {}, sram {})",
                report.dram_weight_bytes, report.sram_bits, expected.0, expected.1
            )));
        }
    } else if !args.verify_conv && args.encoded.is_none() {
        return Err(Error::Input("give --plan, --verify-conv or --encoded".into()));
    }

    if args.verify_conv || args.encoded.is_some() {
        let mut outcome = if args.verify_conv {
            sim::verify_random(args.cases, args.seed)?
        } else {
            sim::VerifyOutcome { passed: 0, total: 0, first_failure: None }
        };
        if let Some(path) = &args.encoded {
            let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
            let layers = sparse::read_model(BufReader::new(file))?;
            let more = sim::verify_layers(&layers, 8, args.seed, 48)?;
            outcome.passed += more.passed;
            outcome.total += more.total;
            if outcome.first_failure.is_none() {
                outcome.first_failure = more.first_failure;
            }
        }
        match outcome.first_failure {
            None => println!("PASS {}/{}", outcome.passed, outcome.total),
            Some(msg) => {
                println!("FAIL {}/{}: {msg}", outcome.passed, outcome.total);
                return Err(Error::Verification(msg));
            }
        }
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Dse(a) => cmd_dse(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::OptimizeSparsity(a) => cmd_optimize_sparsity(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
