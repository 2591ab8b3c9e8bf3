use litho::boolean;
use litho::geometry::{Layout, Point, Polygon};
use litho::imaging::OpticalModel;
use litho::mrc;
use litho::opc::*;
use litho::suite;
use proptest::prelude::*;

// Independent reading of the flexible window: clamp f0 into the window and
// report how far it stuck out; zero overhang means the averaged branch.
fn window_oracle(e: [f64; 3], tp: f64, tn: f64, driver: DriverMode, mode: EpeMode) -> f64 {
    let overhang = e[0] - e[0].clamp(tn, tp);
    if overhang != 0.0 {
        return overhang;
    }
    match mode {
        EpeMode::OnFocusOnly => e[0],
        EpeMode::ThroughFocus if driver == DriverMode::NoFn => (e[0] + e[1]) / 2.0,
        EpeMode::ThroughFocus => (e[0] + e[1] + e[2]) / 3.0,
    }
}

fn driver_strategy() -> impl Strategy<Value = DriverMode> {
    prop_oneof![Just(DriverMode::Full), Just(DriverMode::NoFn), Just(DriverMode::HandsOff)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4096))]
    #[test]
    fn effective_epe_matches_piecewise_oracle(
        e in prop::array::uniform3(-5.0f64..5.0),
        tp in 0.01f64..2.0,
        tn in -2.0f64..-0.01,
        d in driver_strategy(),
        through in any::<bool>(),
        on_edge in 0u8..3,
    ) {
        let mut e = e;
        // hit the tolerance edges exactly a third of the time
        match on_edge { 1 => e[0] = tp, 2 => e[0] = tn, _ => {} }
        let mode = if through { EpeMode::ThroughFocus } else { EpeMode::OnFocusOnly };
        let (v, _) = effective_epe_one(e, tp, tn, d, mode);
        prop_assert_eq!(v.to_bits(), window_oracle(e, tp, tn, d, mode).to_bits());
    }
}

#[test]
fn effective_epe_examples() {
    let full = |e| effective_epe_one(e, 1.0, -1.0, DriverMode::Full, EpeMode::ThroughFocus);
    assert_eq!(full([0.0, 3.0, -3.0]), (0.0, EpeBranch::Window));
    assert_eq!(full([2.0, 7.0, -7.0]), (1.0, EpeBranch::Above));
    assert_eq!(full([-2.0, 7.0, -7.0]), (-1.0, EpeBranch::Below));
    assert_eq!(full([0.5, 3.0, 1.0]).0, 1.5);
    // the boundary itself is inside the window
    assert_eq!(full([1.0, 3.0, 2.0]), (2.0, EpeBranch::Window));
    let batch = effective_epe(&[0.0, 2.0], &[3.0, 0.0], &[-3.0, 0.0], 1.0, -1.0, &[], EpeMode::ThroughFocus);
    assert_eq!(batch, vec![(0.0, EpeBranch::Window), (1.0, EpeBranch::Above)]);
}

#[test]
fn controller_law_examples() {
    assert_eq!(propose_moves(&[0.0], &[1.3], 1.0, 2.0), vec![0.0]);
    assert_eq!(propose_moves(&[2.0], &[2.0], 1.0, 2.0), vec![-1.0]);
    assert_eq!(propose_moves(&[-10.0], &[1.0], 1.0, 2.0), vec![2.0]);
    assert_eq!(propose_moves(&[1.0], &[1.0], 0.5, 2.0), vec![-0.5]);
}

fn line(x0: i64, y0: i64, x1: i64, y1: i64) -> Layout {
    Layout::new(suite::DBU_PER_NM).unwrap().with_layer(suite::LAYER, vec![Polygon::rect(x0, y0, x1, y1)])
}

fn nm(v: f64) -> i64 {
    (v * suite::DBU_PER_NM).round() as i64
}

#[test]
fn hammerhead_zero_is_identity() {
    let cfg = OpcConfig::default();
    let mask = prepare_mask(&line(0, 0, nm(20.0), nm(200.0)), suite::LAYER, &cfg).unwrap();
    let dbu = suite::rules().to_dbu(mask.dbu_per_nm);
    for head in [
        Hammerhead { enabled: false, width_nm: 3.0, length_nm: 4.0 },
        Hammerhead { enabled: true, width_nm: 0.0, length_nm: 0.0 },
    ] {
        let out = hammerhead_init(&mask, &head, &dbu).unwrap();
        assert_eq!(out.offsets(), mask.offsets());
    }
}

#[test]
fn hammerhead_decorates_an_isolated_end() {
    let cfg = OpcConfig::default();
    let mask = prepare_mask(&line(0, 0, nm(20.0), nm(200.0)), suite::LAYER, &cfg).unwrap();
    let dbu = suite::rules().to_dbu(mask.dbu_per_nm);
    let head = Hammerhead { enabled: true, width_nm: 2.0, length_nm: 3.0 };
    let out = hammerhead_init(&mask, &head, &dbu).unwrap();
    let nb = mask.neighbours();
    let mut ends = 0;
    for (i, s) in out.segments.iter().enumerate() {
        if s.role == SegmentRole::LineEnd {
            ends += 1;
            assert_eq!(s.offset, nm(3.0));
            for f in [nb[i].0, nb[i].1] {
                assert_eq!(out.segments[f].offset, nm(2.0));
            }
        }
    }
    assert_eq!(ends, 2);
    // the head is wider than the line body: T-shaped ends
    let body = out.segments.iter().filter(|s| s.offset == 0).count();
    assert!(body > 0);
    assert!(mrc::check_rules(&out.reconstruct(), &dbu).unwrap().is_clean());
}

#[test]
fn facing_heads_are_clamped_to_clean() {
    let cfg = OpcConfig::default();
    let w = nm(20.0);
    let lay = Layout::new(suite::DBU_PER_NM).unwrap().with_layer(
        suite::LAYER,
        vec![Polygon::rect(0, 0, w, nm(100.0)), Polygon::rect(0, nm(112.0), w, nm(212.0))],
    );
    let mask = prepare_mask(&lay, suite::LAYER, &cfg).unwrap();
    let dbu = suite::rules().to_dbu(mask.dbu_per_nm);
    let head = Hammerhead { enabled: true, width_nm: 3.0, length_nm: 6.0 };
    let out = hammerhead_init(&mask, &head, &dbu).unwrap();
    assert!(mrc::check_rules(&out.reconstruct(), &dbu).unwrap().is_clean());
    // 14 nm between retargeted tips, 8 nm space rule: 6 nm to share
    let tips: Vec<i64> = out.segments.iter().filter(|s| s.role == SegmentRole::LineEnd && s.p0.y > nm(50.0) && s.p0.y < nm(150.0)).map(|s| s.offset).collect();
    assert_eq!(tips.len(), 2);
    assert!(tips.iter().sum::<i64>() <= nm(6.0));
    assert!(tips.iter().all(|&t| t > 0 && t < nm(6.0)));
}

fn sim_for(lay: &Layout, cfg: &OpcConfig) -> (SegmentedMask, Simulator) {
    let mask = prepare_mask(lay, suite::LAYER, cfg).unwrap();
    let sim = Simulator::for_mask(&OpticalModel::default(), cfg.focus, cfg.dose, &mask, cfg.pixel_nm).unwrap();
    (mask, sim)
}

#[test]
fn meef_of_a_wide_feature_is_near_one() {
    // segments long against the optical radius, so a probe moves a real edge
    let cfg = OpcConfig { seg_length_nm: 80.0, ..OpcConfig::default() };
    let (mask, sim) = sim_for(&line(0, 0, nm(160.0), nm(160.0)), &cfg);
    let s = MeefSettings::from_config(&cfg);
    let m = estimate_meef(&sim, &mask, &vec![DriverMode::Full; mask.len()], &s).unwrap();
    // long-edge centres see little of the other edges
    for (i, seg) in mask.segments.iter().enumerate() {
        let [x, y] = seg.midpoint();
        let centred = (x - nm(80.0) as f64).abs() < nm(20.0) as f64 || (y - nm(80.0) as f64).abs() < nm(20.0) as f64;
        if centred {
            assert!((m[i] - 1.0).abs() < 0.15, "segment {i}: {}", m[i]);
        }
    }
}

#[test]
fn meef_routes_agree() {
    let cfg = OpcConfig::default();
    let (mask, sim) = sim_for(&suite::tip_to_tip(48.0, 24.0, 80.0), &cfg);
    let drivers = vec![DriverMode::Full; mask.len()];
    let one = MeefSettings { batch_separation_nm: 0.0, ..MeefSettings::from_config(&cfg) };
    let local = estimate_meef(&sim, &mask, &drivers, &one).unwrap();
    let full = estimate_meef_full(&sim, &mask, &drivers, &one).unwrap();
    for (a, b) in local.iter().zip(&full) {
        assert!((a - b).abs() <= 1e-3 * b.abs(), "{a} vs {b}");
    }
    let batched = estimate_meef_full(&sim, &mask, &drivers, &MeefSettings::from_config(&cfg)).unwrap();
    assert!(meef_batches(&mask, cfg.meef_batch_separation_nm).len() < mask.len());
    for (a, b) in batched.iter().zip(&full) {
        assert!((a - b).abs() <= 0.01 * b.abs(), "{a} vs {b}");
    }
}

#[test]
fn meef_probe_size_consistency() {
    let cfg = OpcConfig::default();
    let (mask, sim) = sim_for(&suite::line_space(56.0, 3, 160.0), &cfg);
    let drivers = vec![DriverMode::Full; mask.len()];
    let s1 = MeefSettings::from_config(&cfg);
    let s05 = MeefSettings { probe_nm: 0.5, ..s1 };
    let a = estimate_meef(&sim, &mask, &drivers, &s1).unwrap();
    let b = estimate_meef(&sim, &mask, &drivers, &s05).unwrap();
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        assert!((x - y).abs() <= 0.1 * x.abs(), "segment {i}: {x} vs {y}");
    }
}

#[test]
fn hands_off_segments_have_unit_meef() {
    let cfg = OpcConfig::default();
    let (mask, sim) = sim_for(&suite::line_space(56.0, 2, 100.0), &cfg);
    let drivers = vec![DriverMode::HandsOff; mask.len()];
    let m = estimate_meef(&sim, &mask, &drivers, &MeefSettings::from_config(&cfg)).unwrap();
    assert!(m.iter().all(|&v| v == 1.0));
}

fn isolated_line() -> Layout {
    line(0, 0, nm(30.0), nm(200.0))
}

#[test]
fn isolated_line_converges_and_warm_start_halves_iterations() {
    let cfg = suite::opc_config();
    let model = OpticalModel::default();
    let cold = run_opc(&isolated_line(), suite::LAYER, &model, &suite::rules(), &cfg, None).unwrap();
    assert_eq!(cold.status, OpcStatus::Converged);
    let last = cold.reports.last().unwrap();
    assert!(last.stats[0].max_abs <= cfg.tol_pos, "{:?}", last.stats[0]);
    let n_cold = cold.converged_at().unwrap();
    assert!(n_cold >= 2);
    let maxes: Vec<f64> = cold.reports.iter().map(|r| r.stats[0].max_abs.max(r.stats[1].max_abs).max(r.stats[2].max_abs)).collect();
    for w in maxes[2..].windows(2) {
        assert!(w[1] <= w[0] + 0.05, "{maxes:?}");
    }

    let warm = run_opc(&isolated_line(), suite::LAYER, &model, &suite::rules(), &cfg, Some(&cold.offsets_nm())).unwrap();
    let n_warm = warm.converged_at().unwrap();
    assert!(2 * n_warm <= n_cold, "warm {n_warm} cold {n_cold}");
}

#[test]
fn a_printing_target_is_a_fixed_point() {
    let cfg = suite::opc_config();
    let model = OpticalModel::default();
    let first = run_opc(&isolated_line(), suite::LAYER, &model, &suite::rules(), &cfg, None).unwrap();
    // the corrected mask, taken as the new target's start, needs no moves
    let again = run_opc(&isolated_line(), suite::LAYER, &model, &suite::rules(), &cfg, Some(&first.offsets_nm())).unwrap();
    assert_eq!(again.status, OpcStatus::Converged);
    assert_eq!(again.converged_at(), Some(0));
    assert_eq!(again.reports.len(), 1);
    assert_eq!(again.mask.offsets(), first.mask.offsets());
}

fn mirror_x(p: &Polygon, axis2: i64) -> Polygon {
    Polygon::new(p.vertices.iter().rev().map(|v| Point::new(axis2 - v.x, v.y)).collect())
}

#[test]
fn mirror_symmetric_target_gives_symmetric_mask() {
    let cfg = suite::opc_config();
    let lay = suite::tip_to_tip(56.0, 28.0, 80.0);
    let out = run_opc(&lay, suite::LAYER, &OpticalModel::default(), &suite::rules(), &cfg, None).unwrap();
    let bb = lay.bbox().unwrap();
    let axis2 = bb.lo.x + bb.hi.x;
    let mask = boolean::heal(&out.mask.reconstruct());
    let mirrored = boolean::heal(&mask.iter().map(|p| mirror_x(p, axis2)).collect::<Vec<_>>());
    assert_eq!(mask, mirrored);
}

#[test]
fn every_iteration_is_mrc_clean_and_defect_free_on_tight_tips() {
    let cfg = suite::opc_config();
    let out = run_opc(&suite::tip_to_tip(40.0, 20.0, 80.0), suite::LAYER, &OpticalModel::default(), &suite::rules(), &cfg, None).unwrap();
    // run_opc re-checks each accepted mask and errors on any violation
    let dbu = suite::rules().to_dbu(out.mask.dbu_per_nm);
    assert!(mrc::check_rules(&out.mask.reconstruct(), &dbu).unwrap().is_clean());
    assert!(out.reports.iter().all(|r| r.stats.iter().all(|s| s.open == 0) || !r.converged));
    for k in [litho::contour::DefectKind::Pinch, litho::contour::DefectKind::Bridge] {
        assert_eq!(count_defects(&out.defects, k), 0);
    }
}

#[test]
fn bad_seed_length_is_rejected() {
    let cfg = suite::opc_config();
    let err = run_opc(&isolated_line(), suite::LAYER, &OpticalModel::default(), &suite::rules(), &cfg, Some(&[0.0]));
    assert!(matches!(err, Err(OpcError::BadParameter(_))));
}
