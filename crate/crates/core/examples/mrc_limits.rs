//! Mask rule check of a tip-to-tip target, then clamping an aggressive move
//! proposal so that the moved mask stays clean.

use litho::mrc::{check_rules, limit_moves};
use litho::opc::segment_layout;
use litho::suite;

fn main() {
    let target = suite::tip_to_tip(48.0, 20.0, 80.0);
    let rules = suite::rules().to_dbu(suite::DBU_PER_NM);
    let mask = segment_layout(&target, suite::LAYER, 20.0).unwrap();
    println!("{} segments, start clean: {}", mask.len(), check_rules(&mask.reconstruct(), &rules).unwrap().is_clean());

    // push every edge 10 nm outward
    let push = (10.0 * suite::DBU_PER_NM) as i64;
    let proposed = vec![push; mask.len()];
    let raw = check_rules(&mask.reconstruct_moved(&proposed), &rules).unwrap();
    println!("unclamped proposal: {} violations", raw.violations.len());
    for v in raw.violations.iter().take(5) {
        println!("  {:?} measured {} dbu", v.kind, v.measured);
    }

    let limits = limit_moves(&mask, &proposed, &rules).unwrap();
    let allowed: Vec<i64> = limits.iter().map(|l| l.allowed).collect();
    let after = check_rules(&mask.reconstruct_moved(&allowed), &rules).unwrap();
    let bound = limits.iter().filter(|l| l.allowed != l.proposed).count();
    println!("clamped proposal: {bound} segments limited, clean: {}", after.is_clean());
    for l in limits.iter().filter(|l| l.binding.is_some()).take(5) {
        println!("  segment {} {} -> {} dbu, bound by {:?}", l.segment, l.proposed, l.allowed, l.binding.unwrap());
    }
}
