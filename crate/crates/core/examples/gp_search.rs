//! Ratio search on synthetic layer objectives.
//!
//! Runs GP-UCB on a handful of seeded synthetic accuracy curves and compares
//! the found ratio with a brute-force grid search.

use mixdse::gp::{optimize, GpConfig, SyntheticObjective};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let runs: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    println!("run,a_inf,c,k,grid_best,found,iterations");
    for run in 0..runs {
        let obj = SyntheticObjective::random(&mut rng, 0.01);
        let target = obj.grid_argmax(1000);
        let cfg = GpConfig { seed: run, ..GpConfig::default() };
        let res = optimize(&mut |p| obj.value(p), &cfg).expect("synthetic objective is finite");
        let iters = res.iterations_to(target, 0.02).map_or("-".to_string(), |i| i.to_string());
        println!("{run},{:.3},{:.3},{:.1},{target:.3},{:.3},{iters}", obj.a_inf, obj.c, obj.k, res.best_p);
    }
}
