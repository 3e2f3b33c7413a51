//! Fits the three families to one simulated replicate and prints timings
//! and scores.
//!
//! ```text
//! cargo run --release -p stfusion --example one_replicate -- [seed] [n10|n25|n40] [fit max edge] [fit extension]
//! ```

use std::time::Instant;

use stfusion::models::ModelFamily;
use stfusion::simulation::{score_replicate, SimConfig, Simulator};

fn main() -> stfusion::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let mut cfg = SimConfig::default();
    if let Some(s) = args.next() {
        cfg.stations = s.parse()?;
    }
    if let Some(e) = args.next() {
        cfg.fit_mesh.max_edge = e.parse().expect("max edge");
    }
    if let Some(e) = args.next() {
        cfg.fit_mesh.extension = e.parse().expect("extension");
    }
    let t0 = Instant::now();
    let sim = Simulator::new(&cfg)?;
    println!(
        "fit mesh: {} vertices; setup {:.2?}",
        sim.fit_mesh().n_vertices(),
        t0.elapsed()
    );
    let rep = sim.replicate(seed)?;
    for fam in ModelFamily::ALL {
        let t = Instant::now();
        let rows = score_replicate(&sim, &rep, fam, 0, &[])?;
        println!("{:<24} {:>8.2?}", fam.name(), t.elapsed());
        for r in rows {
            println!("    {:<22} {:>10.4}", r.score_name, r.value);
        }
    }
    Ok(())
}
