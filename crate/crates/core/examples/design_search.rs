//! Budgeted design search.
//!
//! `cargo run --example design_search -- [network.json] [sram_mbit] [multipliers]`
//! runs the boundary/tiling search and prints the chosen plan and the
//! per-boundary outcome.

use mixdse::cost::CostModel;
use mixdse::dse::{algorithm1, describe, DseConfig, DseError};
use mixdse::NetworkDesc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/tiny_yolov2.json").to_string());
    let sram_mbit: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(40.0);
    let mults: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4096);

    let net = NetworkDesc::from_path(&path)?;
    let model = CostModel::new(&net);
    let cfg = DseConfig::new((sram_mbit * 1e6) as u64, mults, 200_000_000);
    match algorithm1(&model, &cfg) {
        Ok(sel) => {
            print!("{}", describe(&model, &sel.plan, &sel.report));
            println!("boundary,feasible,frame_rate,binding");
            for o in &sel.outcomes {
                let fr = o.best.as_ref().map_or("-".to_string(), |c| format!("{:.1}", c.report.frame_rate_f64()));
                println!("{},{},{fr},{:?}", o.boundary, o.best.is_some(), o.binding);
            }
        }
        Err(DseError::Infeasible(per_boundary)) => {
            println!("no feasible design; binding constraints per boundary:");
            for (i, binding) in per_boundary {
                println!("  {i}: {binding:?}");
            }
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}
