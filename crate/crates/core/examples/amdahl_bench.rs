//! End-to-end pipeline timing with brute-force and indexed components, and
//! the Amdahl bound implied by each stage's share.

use litho::bench::{amdahl_bound, bench, Baseline, BenchSuite};

fn main() {
    println!("bound(p = 0.5, s = inf) = {}", amdahl_bound(0.5, f64::INFINITY));
    let report = bench(BenchSuite::EndToEnd, &[200, 800, 3200], 3, Baseline::Bruteforce, 1);
    for size in &report.sizes {
        println!("n = {}", size.size);
        for st in &size.stages {
            println!("  {:<10} {:>9.4}s  share {:>5.1}%  speedup {:>6.1}x", st.stage.name(), st.median_s, st.fraction * 100.0, st.speedup);
        }
        println!(
            "  accelerated share {:.3}, component speedup {:.1}x, bound {:.2}x, measured {:.2}x, ceiling {:.2}x",
            size.accelerated_fraction, size.component_speedup, size.amdahl_bound, size.measured_speedup, size.amdahl_ceiling
        );
    }
}
