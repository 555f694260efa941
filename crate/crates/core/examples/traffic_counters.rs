//! Per-layer traffic counters from the loop-nest simulator, next to a
//! design that keeps every feature map off chip.

use mixdse::cost::CostModel;
use mixdse::dse::reference_plan;
use mixdse::sim::{full_reuse_offchip, traffic_sim, COUNTER_HEADER};
use mixdse::NetworkDesc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/simyolov2.json").to_string());
    let boundary: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let net = NetworkDesc::from_path(&path)?;
    let model = CostModel::new(&net);
    let plan = reference_plan(&net, boundary, true)?;

    let rep = traffic_sim(&model, &plan);
    println!("{}", COUNTER_HEADER.join(","));
    for l in &rep.layers {
        println!("{}", l.csv_record().join(","));
    }
    println!(
        "mixed dataflow: {} weight bytes, {} feature-map bytes, {} SRAM bits, {} cycles",
        rep.dram_weight_bytes, rep.dram_fmap_bytes, rep.sram_bits, rep.cycles
    );
    assert_eq!(rep.dram_weight_bytes, model.dram_access(boundary, true));
    assert_eq!(rep.sram_bits, model.sram_size(&plan));

    let offchip = full_reuse_offchip(&model, &plan.tiles);
    let fmap: u64 = offchip.iter().map(|l| l.dram_fmap_read_bytes + l.dram_fmap_write_bytes).sum();
    let weights: u64 = offchip.iter().map(|l| l.dram_weight_bytes).sum();
    println!("off-chip frames:  {weights} weight bytes, {fmap} feature-map bytes");
    Ok(())
}
