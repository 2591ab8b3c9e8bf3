//! Range, nearest-segment and ray queries on a linear BVH, timed against
//! a linear scan.

use std::time::Instant;

use litho::bvh::{BoxF, Bvh, SegmentIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let boxes: Vec<BoxF> = (0..50_000)
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..5000.0), rng.random_range(0.0..5000.0));
            BoxF::new([x, y], [x + rng.random_range(1.0..20.0), y + rng.random_range(1.0..20.0)])
        })
        .collect();

    let t = Instant::now();
    let bvh = Bvh::build(&boxes, 4).unwrap();
    println!("built {} nodes, depth {}, in {:.1} ms", bvh.nodes.len(), bvh.depth(), t.elapsed().as_secs_f64() * 1e3);

    let q = BoxF::new([1000.0, 1000.0], [1100.0, 1100.0]);
    let t = Instant::now();
    let hits = bvh.range_query(&q);
    let indexed = t.elapsed();
    let t = Instant::now();
    let scan: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].overlaps(&q)).collect();
    let linear = t.elapsed();
    assert_eq!(hits, scan);
    println!("range query: {} hits, {:?} indexed vs {:?} scan", hits.len(), indexed, linear);

    // segments from the box diagonals
    let segs: Vec<[[f64; 2]; 2]> = boxes.iter().map(|b| [b.min, b.max]).collect();
    let index = SegmentIndex::new(segs, 4).unwrap();
    if let Some(h) = index.nearest([2500.0, 2500.0], 50.0) {
        println!("nearest segment to (2500, 2500): #{} at {:.3}", h.id, h.distance);
    }
    if let Some(h) = index.ray([2500.0, 2500.0], [1.0, 0.5], 200.0, false) {
        println!("ray (1, 0.5) from (2500, 2500) first hits #{} at t = {:.3}", h.id, h.distance);
    }
}
