//! Through-focus correction of a tip-to-tip target, one line per iteration.

use litho::imaging::OpticalModel;
use litho::mrc::check_rules;
use litho::opc::run_opc;
use litho::suite;

fn main() {
    let cfg = suite::opc_config();
    let target = suite::tip_to_tip(48.0, 24.0, 80.0);
    let out = run_opc(&target, suite::LAYER, &OpticalModel::default(), &suite::rules(), &cfg, None).unwrap();

    println!("iter  max|EPE| f0    fp     fn   residual  moved");
    for r in &out.reports {
        println!(
            "{:>4}  {:>10.3} {:>6.3} {:>6.3} {:>9.3} {:>6}",
            r.iteration, r.stats[0].max_abs, r.stats[1].max_abs, r.stats[2].max_abs, r.residual_nm, r.moved
        );
    }
    println!("status {:?}, converged at {:?}", out.status, out.converged_at());

    let rules = suite::rules().to_dbu(out.mask.dbu_per_nm);
    println!("final mask MRC clean: {}", check_rules(&out.mask.reconstruct(), &rules).unwrap().is_clean());
    let offsets = out.offsets_nm();
    let (lo, hi) = offsets.iter().fold((0.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    println!("segment moves span {lo:.2} .. {hi:.2} nm");
}
