//! Group-boundary sweep for the 8-bit SimYOLOv2 description.
//!
//! Prints SRAM and weight DRAM traffic for every boundary with the
//! pipelined layers' parameters in DRAM and in SRAM, then compares the
//! fully streamed design with the split at CONV7.

use mixdse::cost::CostModel;
use mixdse::dse::reference_plan;
use mixdse::NetworkDesc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/simyolov2.json").to_string());
    let net = NetworkDesc::from_path(&path)?;
    let model = CostModel::new(&net);
    let l = net.conv_count();

    println!("boundary,sram_mb_params_dram,dram_mb_params_dram,sram_mb_params_sram,dram_mb_params_sram");
    let mut rows = Vec::new();
    for i in 0..=l {
        let off = reference_plan(&net, i, false)?;
        let on = reference_plan(&net, i, true)?;
        let row = (
            model.sram_size(&off) as f64 / 8e6,
            model.dram_access(i, false) as f64 / 1e6,
            model.sram_size(&on) as f64 / 8e6,
            model.dram_access(i, true) as f64 / 1e6,
        );
        println!("{i},{:.2},{:.2},{:.2},{:.2}", row.0, row.1, row.2, row.3);
        rows.push(row);
    }

    if l >= 7 {
        let (streamed, split) = (rows[l], rows[7]);
        println!();
        println!("all layers pipelined, params in DRAM: SRAM {:.2} MB, DRAM {:.1} MB", streamed.0, streamed.1);
        println!("all layers pipelined, params in SRAM: SRAM {:.2} MB, DRAM {:.1} MB", streamed.2, streamed.3);
        println!("boundary at CONV7, params in SRAM:    SRAM {:.2} MB, DRAM {:.2} MB", split.2, split.3);
        println!(
            "CONV7 split vs pipelined: SRAM {:.1}x smaller (params in SRAM for both), DRAM {:.1}x smaller (pipelined params in DRAM)",
            streamed.2 / split.2,
            streamed.1 / split.3
        );
    }
    Ok(())
}
