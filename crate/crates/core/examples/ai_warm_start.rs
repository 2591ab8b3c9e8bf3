//! Seed a correction from a continuous mask field: rasterize a previous
//! solution, extract per-segment moves from it, and compare iteration
//! counts with a cold start.

use litho::ai::{extract_segment_moves, ContinuousMaskField, ExtractConfig};
use litho::geometry::Aabb;
use litho::imaging::{ImageGrid, OpticalModel};
use litho::opc::{prepare_mask, run_opc};
use litho::suite;

fn main() {
    let cfg = suite::opc_config();
    let model = OpticalModel::default();
    let target = suite::line_space(40.0, 5, 160.0);
    let cold = run_opc(&target, suite::LAYER, &model, &suite::rules(), &cfg, None).unwrap();

    // stand-in for a learned field: the cold solution at 2 dbu per pixel
    let base = prepare_mask(&target, suite::LAYER, &cfg).unwrap();
    let bb = Aabb::of_points(base.rings.iter().flat_map(|r| r.vertices.iter())).unwrap();
    let k = 1.0 / base.dbu_per_nm;
    let grid = ImageGrid::covering([bb.lo.x as f64 * k, bb.lo.y as f64 * k], [bb.hi.x as f64 * k, bb.hi.y as f64 * k], 2.0 * k, 12.0).unwrap();
    let field = ContinuousMaskField::rasterize(&cold.mask, grid);
    let seed = extract_segment_moves(&field, &base, &ExtractConfig::default()).unwrap();
    println!("extracted {} moves, {} segments without a contour", seed.moves_nm.len(), seed.warned.len());

    let warm = run_opc(&target, suite::LAYER, &model, &suite::rules(), &cfg, Some(&seed.moves_nm)).unwrap();
    println!("cold start converged at iteration {:?}", cold.converged_at());
    println!("warm start converged at iteration {:?}", warm.converged_at());
}
