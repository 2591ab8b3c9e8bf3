use litho::contour::*;
use litho::geometry::Polygon;
use litho::imaging::{ImageGrid, ResistImage};
use litho::opc::segment_polygons;
use proptest::prelude::*;

#[path = "common/mod.rs"]
mod common;
use common::fields::*;

#[test]
fn circle_converges_at_second_order() {
    let r = 20.3;
    let centres = [[32.1, 31.7], [31.37, 32.55], [32.9, 32.23], [31.61, 31.14]];
    let mut coarse = (0.0, 0.0);
    let mut fine = (0.0, 0.0);
    for c in centres {
        let a = circle_errors(1.0, c, r);
        let b = circle_errors(0.5, c, r);
        coarse = (coarse.0 + a.0, coarse.1 + a.1);
        fine = (fine.0 + b.0, fine.1 + b.1);
    }
    let area_ratio = coarse.0 / fine.0;
    let perim_ratio = coarse.1 / fine.1;
    assert!(area_ratio >= 3.5, "area error ratio {area_ratio}");
    assert!(perim_ratio >= 3.5, "perimeter error ratio {perim_ratio}");
}

#[test]
fn points_lie_on_bilinear_level_set() {
    for seed in 0..20 {
        let grid = ImageGrid::new(48, 40, 2.0, [-10.0, 5.0]).unwrap();
        let img = sample(grid, smooth_field(seed, 90.0, 8.0));
        let c = marching_squares(&img, 0.5).unwrap();
        let mut checked = 0;
        for k in &c.contours {
            assert!(k.points.len() >= 3);
            for &p in &k.points {
                if let Some(v) = bilerp(&img, p) {
                    assert!((v - 0.5).abs() <= 1e-9, "seed {seed}: value {v} at {p:?}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 0 || c.contours.is_empty());
    }
}

#[test]
fn exact_threshold_nodes_are_perturbed() {
    let grid = ImageGrid::new(6, 6, 1.0, [0.0, 0.0]).unwrap();
    // Every node on the level set or strictly to one side.
    let img = sample(grid, |x, _| if x < 3.0 { 0.5 } else { 0.0 });
    let c = marching_squares(&img, 0.5).unwrap();
    assert_eq!(c.contours.len(), 1);
    // nodes at x = 0.5..2.5 count as printed; edge between 2.5 and 3.5
    // sits at the 2.5 node plus a 1e-12-relative sliver
    let xmax = c.contours[0].points.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
    assert!((xmax - 2.5).abs() < 1e-9, "{xmax}");
}

#[test]
fn checkerboard_saddles_stay_separated() {
    let grid = ImageGrid::new(8, 8, 1.0, [0.0, 0.0]).unwrap();
    let img = sample(grid, |x, y| if ((x as i64) + (y as i64)) % 2 == 0 { 0.9 } else { 0.2 });
    let c = marching_squares(&img, 0.5).unwrap();
    // mean 0.55 joins the bright diagonals into one connected region per
    // saddle chain; every contour is a simple closed loop either way
    for k in &c.contours {
        let mut seen = std::collections::HashSet::new();
        for p in &k.points {
            assert!(seen.insert((p[0].to_bits(), p[1].to_bits())), "repeated vertex");
        }
    }
    let dark = sample(grid, |x, y| if ((x as i64) + (y as i64)) % 2 == 0 { 0.7 } else { 0.2 });
    let c = marching_squares(&dark, 0.5).unwrap();
    // mean 0.45: every bright node is isolated
    assert_eq!(c.contours.len(), 32);
    assert!(c.contours.iter().all(|k| k.points.len() == 4 && k.signed_area() > 0.0));
}

#[test]
fn area_matches_pixel_count() {
    for seed in 0..20 {
        let grid = ImageGrid::new(64, 64, 1.5, [0.0, 0.0]).unwrap();
        let img = sample(grid, smooth_field(seed + 100, 96.0, 7.0));
        let c = marching_squares(&img, 0.5).unwrap();
        let count = img.data.iter().filter(|&&v| v > 0.5).count() as f64 * 2.25;
        let perim: f64 = c.contours.iter().map(|k| k.perimeter()).sum();
        let area = c.signed_area();
        assert!((area - count).abs() <= perim * 1.5, "seed {seed}: {area} vs {count} (perimeter {perim})");
    }
}

#[test]
fn cell_order_does_not_change_output() {
    let grid = ImageGrid::new(80, 80, 1.0, [0.0, 0.0]).unwrap();
    let img = sample(grid, smooth_field(9, 80.0, 5.0));
    let many = marching_squares(&img, 0.5).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| marching_squares(&img, 0.5).unwrap());
    assert_eq!(many, one);
}

fn square_mask(lo: i64, hi: i64, seg: f64) -> litho::opc::SegmentedMask {
    segment_polygons(&[Polygon::rect(lo, lo, hi, hi)], 1.0, seg).unwrap()
}

#[test]
fn offset_square_reads_plus_two() {
    // contour is the square [18, 62]^2, target [20, 60]^2
    let grid = ImageGrid::new(80, 80, 1.0, [0.0, 0.0]).unwrap();
    let img = sample(grid, |x, y| 0.5 + 22.0 - (x - 40.0).abs().max((y - 40.0).abs()));
    let c = marching_squares(&img, 0.5).unwrap();
    let mask = square_mask(20, 60, 10.0);
    let cond = Condition { focus_nm: 0.0, dose: 1.0 };
    for r in measure_epe(&c, &mask, 10.0, cond) {
        let e = r.epe_nm.expect("closed");
        assert!((e - 2.0).abs() < 1e-9, "segment {}: {e}", r.segment);
    }
    let exact = sample(grid, |x, y| 0.5 + 20.0 - (x - 40.0).abs().max((y - 40.0).abs()));
    let c = marching_squares(&exact, 0.5).unwrap();
    for r in measure_epe(&c, &mask, 10.0, cond) {
        assert!(r.epe_nm.unwrap().abs() < 1e-9);
    }
    let limits = DefectLimits { min_width_nm: 10.0, min_space_nm: 10.0, search_radius_nm: 10.0 };
    assert!(detect_defects(&c, &mask, &limits).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_ramp_epe_is_exact(x0 in 35.0f64..45.0, slope in 0.01f64..2.0, pitch in 0.3f64..3.0) {
        let n = (100.0 / pitch).ceil() as usize;
        let grid = ImageGrid::new(n, n, pitch, [0.0, 0.0]).unwrap();
        let img = sample(grid, |x, _| 0.5 + slope * (x0 - x));
        let c = marching_squares(&img, 0.5).unwrap();
        let mask = segment_polygons(&[Polygon::rect(20, 30, 40, 70)], 1.0, 10.0).unwrap();
        let recs = measure_epe(&c, &mask, 8.0, Condition { focus_nm: 0.0, dose: 1.0 });
        let mut right = 0;
        for r in recs {
            if mask.segments[r.segment].normal.x == 1 {
                let e = r.epe_nm.unwrap();
                prop_assert!((e - (x0 - 40.0)).abs() <= 1e-9, "{} vs {}", e, x0 - 40.0);
                right += 1;
            }
        }
        prop_assert!(right > 0);
    }
}

/// Nearest sign change of the bilinear field along the site normal, by
/// marching both ways in `step` increments; refined by bisection.
fn ray_march(img: &ResistImage, site: [f64; 2], n: [f64; 2], radius: f64, step: f64) -> Option<f64> {
    let f = |t: f64| bilerp(img, [site[0] + n[0] * t, site[1] + n[1] * t]).map(|v| v - 0.5);
    let f0 = f(0.0)?;
    let steps = (radius / step).ceil() as usize;
    for k in 1..=steps {
        let t = k as f64 * step;
        for s in [1.0, -1.0] {
            let prev = f(s * (t - step))?;
            let cur = f(s * t)?;
            if (prev > 0.0) != (cur > 0.0) || (k == 1 && (f0 > 0.0) != (cur > 0.0)) {
                let (mut a, mut b) = (s * (t - step), s * t);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if (f(m)? > 0.0) == (prev > 0.0) {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                return Some(0.5 * (a + b));
            }
        }
    }
    None
}

#[test]
fn epe_matches_ray_march() {
    let mut compared = 0;
    for seed in 0..12 {
        let pitch = 2.0;
        let grid = ImageGrid::new(64, 64, pitch, [0.0, 0.0]).unwrap();
        let img = sample(grid, smooth_field(seed + 300, 128.0, 14.0));
        let c = marching_squares(&img, 0.5).unwrap();
        let mask = segment_polygons(&[Polygon::rect(30, 40, 70, 90), Polygon::rect(80, 20, 100, 100)], 1.0, 8.0).unwrap();
        let radius = 12.0;
        for r in measure_epe(&c, &mask, radius, Condition { focus_nm: 0.0, dose: 1.0 }) {
            let (site, n) = evaluation_site(&mask, r.segment);
            let oracle = ray_march(&img, site, n, radius, pitch / 100.0);
            if let (Some(e), Some(o)) = (r.epe_nm, oracle) {
                // ties between a near crossing on each side are ambiguous
                if (e.abs() - o.abs()).abs() > 0.5 * pitch && (e - o).abs() > 0.5 * pitch {
                    let other = ray_march(&img, site, [-n[0], -n[1]], radius, pitch / 100.0);
                    panic!("seed {seed} segment {}: {e} vs {o} ({other:?})", r.segment);
                }
                assert!((e - o).abs() <= 0.5 * pitch || (e.abs() - o.abs()).abs() <= 0.5 * pitch);
                compared += 1;
            }
        }
    }
    assert!(compared > 50, "{compared}");
}

#[test]
fn merged_targets_bridge() {
    let grid = ImageGrid::new(100, 60, 1.0, [0.0, 0.0]).unwrap();
    // one printed bar over two targets separated by a 10 nm gap
    let img = sample(grid, |x, y| 0.5 + 10.0 - ((x - 50.0).abs() / 3.0).max((y - 30.0).abs()));
    let c = marching_squares(&img, 0.5).unwrap();
    let mask = segment_polygons(&[Polygon::rect(25, 22, 45, 38), Polygon::rect(55, 22, 75, 38)], 1.0, 10.0).unwrap();
    let d = detect_defects(&c, &mask, &DefectLimits { min_width_nm: 5.0, min_space_nm: 5.0, search_radius_nm: 12.0 });
    let b: Vec<_> = d.iter().filter(|d| d.kind == DefectKind::Bridge && d.measured_nm == 0.0).collect();
    assert_eq!(b.len(), 1, "{d:?}");
    assert_eq!(b[0].targets, vec![0, 1]);
}

#[test]
fn close_prints_flag_space() {
    let grid = ImageGrid::new(100, 60, 1.0, [0.0, 0.0]).unwrap();
    let img = sample(grid, |x, y| {
        let a = 10.0 - (x - 35.0).abs().max((y - 30.0).abs());
        let b = 10.0 - (x - 62.0).abs().max((y - 30.0).abs());
        0.5 + a.max(b)
    });
    let c = marching_squares(&img, 0.5).unwrap();
    let mask = segment_polygons(&[Polygon::rect(25, 20, 45, 40), Polygon::rect(52, 20, 72, 40)], 1.0, 10.0).unwrap();
    let d = detect_defects(&c, &mask, &DefectLimits { min_width_nm: 5.0, min_space_nm: 10.0, search_radius_nm: 12.0 });
    let s: Vec<_> = d.iter().filter(|d| d.kind == DefectKind::Bridge).collect();
    assert!(!s.is_empty());
    assert!(s.iter().all(|d| (d.measured_nm - 7.0).abs() < 1e-9 && d.targets == vec![0, 1]), "{s:?}");
}

/// Dumbbell: two squares joined by a bar of half-width `h`.
fn dumbbell(h: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| {
        let l = 12.0 - (x - 25.0).abs().max((y - 40.0).abs());
        let r = 12.0 - (x - 75.0).abs().max((y - 40.0).abs());
        let bar = (h - (y - 40.0).abs()).min(30.0 - (x - 50.0).abs());
        0.5 + l.max(r).max(bar)
    }
}

/// Narrowest printed run across the neck, from a fine raster.
fn raster_neck_width(h: f64, pitch: f64) -> f64 {
    let f = dumbbell(h);
    let mut best = f64::INFINITY;
    let mut x = 40.0;
    while x <= 60.0 {
        let mut run = 0;
        let mut y = 20.0 + pitch / 2.0;
        while y < 60.0 {
            if f(x, y) > 0.5 {
                run += 1;
            }
            y += pitch;
        }
        best = best.min(run as f64 * pitch);
        x += pitch;
    }
    best
}

#[test]
fn dumbbell_neck_pinches() {
    let grid = ImageGrid::new(100, 80, 1.0, [0.0, 0.0]).unwrap();
    let mask = segment_polygons(&[Polygon::rect(13, 28, 87, 52)], 1.0, 10.0).unwrap();
    for h in [1.7, 2.6, 3.3] {
        let oracle = raster_neck_width(h, 0.01);
        let c = marching_squares(&sample(grid, dumbbell(h)), 0.5).unwrap();
        let d = detect_defects(&c, &mask, &DefectLimits { min_width_nm: 8.0, min_space_nm: 2.0, search_radius_nm: 30.0 });
        let p: Vec<_> = d.iter().filter(|d| d.kind == DefectKind::Pinch).collect();
        assert!(!p.is_empty(), "h {h}: {d:?}");
        let neck = p.iter().min_by(|a, b| a.measured_nm.total_cmp(&b.measured_nm)).unwrap();
        assert!((neck.measured_nm - oracle).abs() <= 1.0, "h {h}: {} vs {oracle}", neck.measured_nm);
        assert!((neck.location_nm[0] - 50.0).abs() <= 20.0 && (neck.location_nm[1] - 40.0).abs() <= 1.0);
        assert!(p.iter().all(|d| (d.location_nm[0] - 50.0).abs() <= 21.0));
    }
    // wide neck: no pinch
    let c = marching_squares(&sample(grid, dumbbell(6.0)), 0.5).unwrap();
    let d = detect_defects(&c, &mask, &DefectLimits { min_width_nm: 8.0, min_space_nm: 2.0, search_radius_nm: 30.0 });
    assert!(d.iter().all(|d| d.kind != DefectKind::Pinch), "{d:?}");
}

#[test]
fn missing_print_pulls_back() {
    let grid = ImageGrid::new(60, 60, 1.0, [0.0, 0.0]).unwrap();
    let c = marching_squares(&sample(grid, |_, _| 0.0), 0.5).unwrap();
    let mask = square_mask(20, 40, 10.0);
    let recs = measure_epe(&c, &mask, 5.0, Condition { focus_nm: 0.0, dose: 1.0 });
    assert!(recs.iter().all(EpeRecord::is_open));
    let d = detect_defects(&c, &mask, &DefectLimits { min_width_nm: 5.0, min_space_nm: 5.0, search_radius_nm: 5.0 });
    assert_eq!(d.len(), mask.len());
    assert!(d.iter().all(|d| d.kind == DefectKind::Pullback));
    // flooded window: pushout everywhere
    let c = marching_squares(&sample(grid, |_, _| 1.0), 0.5).unwrap();
    let d = detect_defects(&c, &mask, &DefectLimits { min_width_nm: 5.0, min_space_nm: 5.0, search_radius_nm: 5.0 });
    assert!(d.iter().filter(|d| d.segment.is_some()).all(|d| d.kind == DefectKind::Pushout));
    assert_eq!(d.iter().filter(|d| d.kind == DefectKind::Pushout).count(), mask.len());
}
