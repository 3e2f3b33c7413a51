//! Regenerates the fixed station layouts of the simulation study.
//!
//! ```text
//! cargo run -p stfusion --example station_layouts -- crates/core/fixtures/layouts
//! ```
//!
//! The layouts are shipped as fixtures; rerunning this tool changes every
//! downstream simulation result.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTH: f64 = 3.2;
const HEIGHT: f64 = 2.4;
const MARGIN: f64 = 0.1;

/// Rejection sampling inside `allowed` with a minimum separation.
fn scatter(rng: &mut ChaCha8Rng, n: usize, min_sep: f64, allowed: impl Fn(f64, f64) -> bool) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut tries = 0;
    while pts.len() < n {
        tries += 1;
        assert!(tries < 1_000_000, "layout constraints are too tight");
        let x = rng.random_range(MARGIN..WIDTH - MARGIN);
        let y = rng.random_range(MARGIN..HEIGHT - MARGIN);
        if !allowed(x, y) {
            continue;
        }
        if pts.iter().all(|&(a, b)| (a - x).hypot(b - y) >= min_sep) {
            pts.push((x, y));
        }
    }
    pts
}

fn jittered_lattice(rng: &mut ChaCha8Rng, nx: usize, ny: usize, jitter: f64) -> Vec<(f64, f64)> {
    let (dx, dy) = (WIDTH / nx as f64, HEIGHT / ny as f64);
    let mut pts = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 + 0.5) * dx + rng.random_range(-jitter..jitter);
            let y = (j as f64 + 0.5) * dy + rng.random_range(-jitter..jitter);
            pts.push((x, y));
        }
    }
    pts
}

fn render(prefix: &str, pts: &[(f64, f64)]) -> String {
    let mut s = String::from("station_id,x,y\n");
    for (i, (x, y)) in pts.iter().enumerate() {
        writeln!(s, "{prefix}{:02},{x:.4},{y:.4}", i + 1).unwrap();
    }
    s
}

fn main() {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/core/fixtures/layouts".into()),
    );
    std::fs::create_dir_all(&dir).expect("create output directory");
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);

    // Ten stations confined to the lower-left part of the domain.
    let n10 = scatter(&mut rng, 10, 0.3, |x, y| x < 1.9 && y < 1.7);
    // Twenty-five stations everywhere except the upper-right block.
    let n25 = scatter(&mut rng, 25, 0.25, |x, y| !(x > 1.7 && y > 1.1));
    // Forty stations on a jittered 8 x 5 lattice.
    let n40 = jittered_lattice(&mut rng, 8, 5, 0.08);

    for (name, pts) in [("n10", n10), ("n25", n25), ("n40", n40)] {
        let path = dir.join(format!("{name}.csv"));
        std::fs::write(&path, render("s", &pts)).expect("write layout");
        println!("wrote {}", path.display());
    }
}
