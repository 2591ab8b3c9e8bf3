//! Aerial image of a line/space mask through the SOCS expansion, checked
//! against the direct Hopkins sum, plus a defocus series.

use litho::imaging::*;
use litho::suite;

fn main() {
    let model = OpticalModel::default();
    let grid = ImageGrid::new(32, 32, 4.0, [0.0, 0.0]).unwrap();
    let target = suite::line_space(32.0, 4, 128.0);
    let mask = rasterize_layer(target.layer(suite::LAYER).unwrap(), suite::DBU_PER_NM, &grid);

    let tcc = build_tcc(&model, &grid, 0.0).unwrap();
    let full = decompose_tcc(&tcc, Truncation::Full).unwrap();
    let kept = decompose_tcc(&tcc, Truncation::Energy(0.995)).unwrap();
    println!("TCC {}x{}, {} kernels in full, {} keep 99.5% energy", tcc.size(), tcc.size(), full.order(), kept.order());

    let (hopkins, _) = image_hopkins_direct(&mask, &tcc, 1.0).unwrap();
    let socs = image_socs(&mask, &full, 1.0).unwrap();
    let err = socs.data.iter().zip(&hopkins.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("full-rank SOCS vs Hopkins: max |diff| {err:.2e}");

    for focus in [-60.0, -30.0, 0.0, 30.0, 60.0] {
        let k = socs_kernels(&model, &grid, focus, Truncation::Energy(0.995)).unwrap();
        let img = image_socs(&mask, &k, 1.0).unwrap();
        let row = &img.data[16 * 32..17 * 32];
        let (lo, hi) = row.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        println!("focus {focus:>5} nm: contrast {:.3}", (hi - lo) / (hi + lo));
    }
}
