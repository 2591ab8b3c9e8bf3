//! Resist contours of a simulated target and the edge placement error of
//! each segment.

use litho::contour::{marching_squares, measure_epe, Condition};
use litho::imaging::OpticalModel;
use litho::opc::{segment_layout, FocusSet, Simulator};
use litho::suite;

fn main() {
    let model = OpticalModel::default();
    let target = suite::l_shapes(48.0, 2, 160.0);
    let mask = segment_layout(&target, suite::LAYER, 20.0).unwrap();
    let sim = Simulator::for_mask(&model, FocusSet::default(), 1.0, &mask, 2.0).unwrap();

    let resist = sim.resist(&mask.reconstruct(), mask.dbu_per_nm, 0).unwrap();
    let cs = marching_squares(&resist, resist.threshold).unwrap();
    println!("{} contours, printed area {:.0} nm^2", cs.contours.len(), cs.signed_area());
    for (i, c) in cs.contours.iter().enumerate() {
        println!("  contour {i}: {} points, perimeter {:.1} nm", c.points.len(), c.perimeter());
    }

    let epe = measure_epe(&cs, &mask, 20.0, Condition { focus_nm: 0.0, dose: 1.0 });
    let worst = epe.iter().filter_map(|r| r.epe_nm.map(|e| (r.segment, e))).fold((0, 0.0f64), |w, c| if c.1.abs() > w.1.abs() { c } else { w });
    let open = epe.iter().filter(|r| r.is_open()).count();
    println!("uncorrected EPE: worst {:.2} nm at segment {}, {open} open sites", worst.1, worst.0);
}
