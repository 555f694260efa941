//! Acceptance criteria. Each prints one PASS/FAIL line; the target fails
//! when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::weights::random_tensor;
use common::{data_path, random_net, random_plan, random_pow2, simyolov2};
use mixdse::cost::{CostModel, ParamBits};
use mixdse::dse::{algorithm1, propagate_group1_tilings, reference_plan, DseConfig, Tile, TilingPlan};
use mixdse::gp::{optimize, GpConfig, GpState, Kernel, SyntheticObjective};
use mixdse::net::{parse_network, NetworkDesc};
use mixdse::quant::{avg_bits, compression_rate, quantize_layer, MixedLayerWeights, WeightTensor};
use mixdse::sim::{traffic_sim, verify_random};
use mixdse::sparse::{decode, encode, encoded_size, layer_file_size, DEFAULT_COORD_BITS};
use mixdse::Rational;
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn r(n: u64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

fn work(net: &NetworkDesc, c: usize) -> u64 {
    let l = net.conv_layers().nth(c).unwrap();
    l.h_out() as u64 * l.w_out() as u64 * l.n as u64 * l.m as u64
}

fn cost_model_matches_simulator() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for case in 0..100 {
        let convs = rng.gen_range(2..=6);
        let net = random_net(&mut rng, convs, 64, 32);
        let ratios: Vec<f64> = (0..net.layers.len()).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let model = CostModel::with_param_bits(&net, ParamBits::mixed(&net, |id| ratios[id as usize - 1]));
        let boundary = rng.gen_range(0..=net.conv_count());
        let base = random_plan(&mut rng, &net, boundary, false);
        for on_chip in [false, true] {
            let plan = TilingPlan { params_on_chip: on_chip, ..base.clone() };
            let rep = traffic_sim(&model, &plan);
            let dram = model.dram_access(boundary, on_chip);
            let sram = model.sram_size(&plan);
            if rep.dram_weight_bytes + rep.dram_fmap_bytes != dram || rep.sram_bits != sram {
                return Err(format!(
                    "network {case} boundary {boundary} on_chip {on_chip}: sim dram {} sram {} vs model dram {dram} sram {sram}",
                    rep.dram_weight_bytes + rep.dram_fmap_bytes,
                    rep.sram_bits
                ));
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(10) {
        return Err(format!("{checked} cases took {elapsed:.2?}"));
    }
    Ok(format!("{checked} plans on 100 networks equal"))
}

fn pipeline_balance() -> Outcome {
    let doc = r#"{"name":"w","input":{"h":416,"w":416,"c":3},"precision":{"q_a":8,"q_w":8},
        "layers":[{"id":1,"kind":"conv","k":3,"out_channels":32},
                  {"id":2,"kind":"maxpool","k":2,"stride":2},
                  {"id":3,"kind":"conv","k":3,"out_channels":64}]}"#;
    let net = parse_network(doc).map_err(|e| e.to_string())?;
    let chain = propagate_group1_tilings(&net, 2, 3, 4).map_err(|e| e.to_string())?;
    let t: Vec<Rational> = chain
        .iter()
        .enumerate()
        .map(|(c, p)| r(work(&net, c)) / (p.ideal_t_i.clone() * p.ideal_t_o.clone()))
        .collect();
    if t[0] != r(1_384_448) || t[1] != r(1_384_448) {
        return Err(format!("worked example gives t = {} and {}", t[0], t[1]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut chains = 0;
    let mut attempts = 0;
    while chains < 50 {
        attempts += 1;
        if attempts > 10_000 {
            return Err(format!("only {chains} propagatable chains generated"));
        }
        let convs = rng.gen_range(2..=6);
        let net = random_net(&mut rng, convs, 64, 64);
        let first = net.conv_layers().next().unwrap();
        let (s_i, s_o) = (rng.gen_range(1..=first.n), rng.gen_range(1..=first.m));
        let Ok(chain) = propagate_group1_tilings(&net, convs, s_i, s_o) else { continue };
        let times: Vec<Rational> = chain
            .iter()
            .enumerate()
            .map(|(c, p)| r(work(&net, c)) / (p.ideal_t_i.clone() * p.ideal_t_o.clone()))
            .collect();
        if let Some(c) = (1..times.len()).find(|&c| times[c] != times[0]) {
            return Err(format!("chain {chains}: t_{c} = {} but t_0 = {}", times[c], times[0]));
        }
        chains += 1;
    }
    Ok("worked example t_1 = t_2 = 1384448; 50 random chains balanced".into())
}

/// Exhaustive search over every boundary, every power-of-two seed and
/// every main tile.
fn brute_force(model: &CostModel<'_>, cfg: &DseConfig) -> Option<Rational> {
    let net = model.net();
    let l = net.conv_count();
    let first = net.conv_layers().next().unwrap();
    let pow2 = |max: u32| (0..=31 - max.leading_zeros()).map(|e| 1u32 << e).collect::<Vec<_>>();
    let mut best: Option<Rational> = None;
    for i in 0..=l {
        let seeds: Vec<Option<(u32, u32)>> = if i == 0 {
            vec![None]
        } else {
            pow2(first.n).into_iter().flat_map(|a| pow2(first.m).into_iter().map(move |b| Some((a, b)))).collect()
        };
        for seed in seeds {
            let group1: Vec<Tile> = match seed {
                None => Vec::new(),
                Some((a, b)) => match propagate_group1_tilings(net, i, a, b) {
                    Ok(p) => p.into_iter().map(|p| p.tile).collect(),
                    Err(_) => continue,
                },
            };
            let mains: Vec<Option<u32>> = if i == l {
                vec![None]
            } else {
                let cap = net.conv_layers().skip(i).map(|c| c.n.min(c.m)).min().unwrap();
                pow2(cap).into_iter().map(Some).collect()
            };
            for main in mains {
                let mut tiles = group1.clone();
                if let Some(t) = main {
                    tiles.extend(std::iter::repeat_n(Tile::square(t), l - i));
                }
                let plan = TilingPlan { boundary: i, params_on_chip: cfg.params_on_chip, tiles };
                let mults = cfg.multipliers.total(net, &plan);
                if mults > cfg.multiplier_budget || model.sram_size(&plan) > cfg.sram_budget_bits {
                    continue;
                }
                let (t1, t2) = model.group_times(&plan);
                let fr = r(cfg.clock_hz) / if t1 > t2 { t1 } else { t2 };
                if best.as_ref().is_none_or(|b| fr > *b) {
                    best = Some(fr);
                }
            }
        }
    }
    best
}

fn algorithm1_matches_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut feasible, mut infeasible) = (0, 0);
    for case in 0..50 {
        let convs = rng.gen_range(1..=6);
        let net = random_net(&mut rng, convs, 32, 32);
        let model = CostModel::new(&net);
        let cfg = DseConfig::new(rng.gen_range(20_000..1_500_000), rng.gen_range(9..3000), 100_000_000)
            .params_on_chip(rng.gen_bool(0.5));
        let exhaustive = brute_force(&model, &cfg);
        match (algorithm1(&model, &cfg), exhaustive) {
            (Ok(sel), Some(best)) if sel.report.frame_rate == best => feasible += 1,
            (Err(_), None) => infeasible += 1,
            (Ok(sel), Some(best)) => {
                return Err(format!("instance {case}: algorithm {} vs exhaustive {best}", sel.report.frame_rate))
            }
            (Ok(sel), None) => return Err(format!("instance {case}: algorithm found {} but exhaustive none", sel.report.frame_rate)),
            (Err(e), Some(best)) => return Err(format!("instance {case}: algorithm failed ({e}) but exhaustive found {best}")),
        }
    }
    Ok(format!("50 instances agree ({feasible} feasible, {infeasible} infeasible)"))
}

fn compression_accounting() -> Outcome {
    let mut failures = Vec::new();
    let (c0, c1) = (compression_rate(0.0, 1, 1), compression_rate(1.0, 1, 1));
    if c0 != 32.0 || c1 != 4.0 {
        failures.push(format!("C(0) = {c0}, C(1) = {c1}"));
    }
    let headline = 32.0 / 1.148;
    if format!("{headline:.2}") != "27.87" {
        failures.push(format!("32/1.148 printed as {headline:.2}"));
    }

    let net = simyolov2();
    let ratios: BTreeMap<u32, f64> = serde_json::from_str::<BTreeMap<String, f64>>(
        &std::fs::read_to_string(data_path("simyolov2_ratios.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?
    .into_iter()
    .map(|(k, v)| (k.parse().unwrap(), v))
    .collect();
    let bits = avg_bits(&net, &ratios).map_err(|e| e.to_string())?;
    if (bits - 1.148).abs() > 0.01 {
        failures.push(format!("SimYOLOv2 avg_bits {bits:.4}"));
    }

    // Serialized size against the 1+7p accounting on every quantized layer
    // with at least 10^4 parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = (0.0f64, 0u32, 0.0f64);
    for l in net.conv_layers().filter(|l| l.quantize && l.params() >= 10_000) {
        let p = ratios[&l.id];
        let t = WeightTensor { layer_id: l.id, ..random_tensor(&mut rng, l.m, l.n, l.k) };
        let mixed: MixedLayerWeights = quantize_layer(&t, p).map_err(|e| e.to_string())?;
        let tile = if l.k == 1 { 32 } else { 16 };
        let enc = encode(&mixed, tile.min(l.n), tile.min(l.m), DEFAULT_COORD_BITS).map_err(|e| e.to_string())?;
        let file_bits = 8.0 * layer_file_size(&enc) as f64 / l.params() as f64;
        let dev = (file_bits - (1.0 + 7.0 * p)) / (1.0 + 7.0 * p);
        if dev.abs() > worst.0.abs() {
            worst = (dev, l.id, file_bits);
        }
    }
    if worst.0.abs() > 0.01 {
        failures.push(format!(
            "serialized size off by {:+.1}% (layer {}: {:.3} bits/weight stored)",
            100.0 * worst.0,
            worst.1,
            worst.2
        ));
    }
    let summary = format!("C(0)=32, C(1)=4, 32/1.148 = {headline:.2}x, SimYOLOv2 avg_bits {bits:.4}");
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", failures.join("; ")))
    }
}

fn mixed_conv_bit_exact() -> Outcome {
    let start = Instant::now();
    let out = verify_random(200, 5).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if out.passed != out.total {
        return Err(format!("{}/{} agree; {}", out.passed, out.total, out.first_failure.unwrap_or_default()));
    }
    if elapsed > Duration::from_secs(30) {
        return Err(format!("200 cases took {elapsed:.2?}"));
    }
    Ok("200/200 cases identical".into())
}

fn sparse_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..1000 {
        let k = [1u32, 3, 5][rng.gen_range(0..3)];
        let (m, n) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let t = random_tensor(&mut rng, m, n, k);
        let mixed = quantize_layer(&t, rng.gen_range(0.0..=1.0)).map_err(|e| e.to_string())?;
        let max_tile = if k == 5 { 8 } else { 16 };
        let (t_i, t_o) = (random_pow2(&mut rng, max_tile), random_pow2(&mut rng, max_tile));
        let enc = encode(&mixed, t_i, t_o, DEFAULT_COORD_BITS).map_err(|e| e.to_string())?;
        let back = decode(&enc).map_err(|e| e.to_string())?;
        if back != mixed {
            return Err(format!("case {case}: decode differs"));
        }
        let expect = (mixed.nnz() as u64 * 20).div_ceil(8) + 2 * enc.block_count() as u64;
        if encoded_size(&enc) != expect || enc.entries.len() as u64 + 2 * enc.counts.len() as u64 != expect {
            return Err(format!("case {case}: sparse section {} bytes, expected {expect}", encoded_size(&enc)));
        }
    }
    Ok("1000 layers round-trip; sparse section = ceil(20*nnz/8) + 2B bytes".into())
}

fn gp_optimizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut gp = GpState::new(Kernel::default(), 1e-10);
    let mut pts = Vec::new();
    for i in 0..12 {
        let x = i as f64 / 11.0;
        let y = rng.gen_range(-2.0..2.0);
        gp.push(x, y).map_err(|e| e.to_string())?;
        pts.push((x, y));
    }
    let post = gp.fit().map_err(|e| e.to_string())?;
    let interp = pts.iter().map(|&(x, y)| (post.at(x).0 - y).abs()).fold(0.0, f64::max);
    if interp >= 1e-6 {
        return Err(format!("interpolation error {interp:e}"));
    }

    let mut hits = 0;
    let mut iters = Vec::new();
    for run in 0..50u64 {
        let obj = SyntheticObjective::random(&mut rng, 0.01);
        let target = obj.grid_argmax(1000);
        let cfg = GpConfig { seed: run, ..GpConfig::default() };
        let res = optimize(&mut |p| obj.value(p), &cfg).map_err(|e| e.to_string())?;
        if (res.best_p - target).abs() <= 0.02 + 1e-12 {
            hits += 1;
        }
        iters.push(res.iterations_to(target, 0.02).unwrap_or(usize::MAX));
    }
    iters.sort_unstable();
    let median = iters[iters.len() / 2 - 1].max(iters[iters.len() / 2]);
    let summary = format!("max interpolation error {interp:.1e}; {hits}/50 within 0.02; median iterations {median}");
    if hits < 45 || median > 15 {
        return Err(summary);
    }
    Ok(summary)
}

fn simyolov2_dram_figures() -> Outcome {
    let net = simyolov2();
    let model = CostModel::new(&net);
    let l = net.conv_count();
    let off = model.dram_access(l, false) as f64;
    let on7 = model.dram_access(7, true) as f64;
    reference_plan(&net, 7, true).map_err(|e| e.to_string())?;
    let within = |v: f64, target: f64| (v - target).abs() <= 0.1 * target;
    let summary = format!(
        "boundary L off-chip {:.1} MB (expect 191 MB), boundary 7 on-chip {:.2} MB (expect 14 MB)",
        off / 1e6,
        on7 / 1e6
    );
    if within(off, 191e6) && within(on7, 14e6) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 cost model vs traffic simulator", cost_model_matches_simulator),
        ("2 pipeline balance", pipeline_balance),
        ("3 algorithm vs brute force", algorithm1_matches_brute_force),
        ("4 compression accounting", compression_accounting),
        ("5 mixed convolution bit-exact", mixed_conv_bit_exact),
        ("6 sparse format", sparse_format),
        ("7 GP optimizer", gp_optimizer),
        ("8 SimYOLOv2 DRAM figures", simyolov2_dram_figures),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} ({:.1?})", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail} ({:.1?})", start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
