use litho::ai::*;
use litho::imaging::*;
use litho::mrc;
use litho::opc::{prepare_mask, run_opc, seeded_mask, OpcConfig, SegmentedMask};
use litho::suite;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize, pitch: f64) -> ImageGrid {
    ImageGrid::new(n, n, pitch, [0.0, 0.0]).unwrap()
}

fn total(mask: &[f64], g: &ImageGrid, k: &SocsKernelSet) -> f64 {
    image_socs(&MaskField::from_real(*g, mask), k, 1.0).unwrap().data.iter().sum()
}

fn central_difference(mask: &[f64], g: &ImageGrid, k: &SocsKernelSet, h: f64) -> Vec<f64> {
    (0..mask.len())
        .map(|p| {
            let mut up = mask.to_vec();
            let mut dn = mask.to_vec();
            up[p] += h;
            dn[p] -= h;
            (total(&up, g, k) - total(&dn, g, k)) / (2.0 * h)
        })
        .collect()
}

fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn gradient_matches_central_differences() {
    let g = grid(16, 4.0);
    for (seed, focus) in [(7u64, 0.0), (8, 45.0), (9, -45.0)] {
        let k = socs_kernels(&OpticalModel::default(), &g, focus, Truncation::Energy(0.999)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let grad = intensity_gradient(&MaskField::from_real(g, &m), &k, 1.0).unwrap();
        let fd = central_difference(&m, &g, &k, 1e-4);
        let err = rel_linf(&grad, &fd);
        assert!(err <= 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn gradient_special_cases() {
    let g = grid(16, 4.0);
    let k = socs_kernels(&OpticalModel::default(), &g, 0.0, Truncation::Full).unwrap();
    let zero = intensity_gradient(&MaskField::zeros(g), &k, 1.0).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));

    // single mode, single pixel: 2 w sum|h|^2 = 2 w sum|phi|^2 / N
    let k1 = k.truncated(1);
    let mut m = vec![0.0; g.len()];
    m[5 * 16 + 3] = 1.0;
    let grad = intensity_gradient(&MaskField::from_real(g, &m), &k1, 1.0).unwrap();
    let expect = 2.0 * k1.weights[0] * k1.spectra[0].iter().map(|c| c.norm_sqr()).sum::<f64>() / g.len() as f64;
    assert!((grad[5 * 16 + 3] - expect).abs() <= 1e-12 * expect, "{} vs {expect}", grad[5 * 16 + 3]);

    let mut complex = MaskField::zeros(g);
    complex.data[0].im = 0.5;
    assert!(matches!(intensity_gradient(&complex, &k, 1.0), Err(AiError::ComplexMask(0))));
}

#[test]
fn tensor_channels_are_normalized() {
    let g = grid(16, 4.0);
    let k = socs_kernels(&OpticalModel::default(), &g, 0.0, Truncation::Energy(0.99)).unwrap();
    let mut t = vec![0.0; g.len()];
    for y in 4..12 {
        for x in 6..10 {
            t[y * 16 + x] = 1.0;
        }
    }
    let ft = FieldTensor::build(&t, g, &k, 1.0).unwrap();
    for ch in [&ft.target, &ft.intensity, &ft.gradient] {
        assert!(ch.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(ch.contains(&0.0) && ch.contains(&1.0));
    }
    assert_eq!(ft.target, t);
    let raw = image_socs(&MaskField::from_real(g, &t), &k, 1.0).unwrap().data;
    for (a, b) in ft.intensity.iter().zip(&raw) {
        assert!((ft.norms[1].invert(*a) - b).abs() < 1e-12);
    }
    assert_eq!(ft.interleaved().len(), 3 * g.len());
}

#[test]
fn z_round_examples() {
    let g = grid(32, 1.0);
    let mut sq = vec![0.0; g.len()];
    for y in 6..26 {
        for x in 6..26 {
            sq[y * 32 + x] = 1.0;
        }
    }
    let z0 = z_round(&sq, &g, 0.0, 0.5).unwrap();
    assert!(z0.iter().zip(&sq).all(|(&a, &b)| a as f64 == b));
    let zr = z_round(&sq, &g, 2.0, 0.5).unwrap();
    for y in 10..22 {
        for x in 10..22 {
            assert_eq!(zr[y * 32 + x], 1);
        }
    }
    assert_eq!(zr[6 * 32 + 6], 0, "corner rounds off");

    // single pixel under sigma 3: direct Gaussian sum peaks far below 0.5
    let mut dot = vec![0.0; g.len()];
    dot[16 * 32 + 16] = 1.0;
    let s: f64 = 3.0;
    let direct_peak = 1.0 / (2.0 * std::f64::consts::PI * s * s);
    assert!(direct_peak < 0.5);
    let blurred = gaussian_blur(&g, &dot, s);
    assert!((blurred[16 * 32 + 16] - direct_peak).abs() < 1e-3);
    assert!(z_round(&dot, &g, s, 0.5).unwrap().iter().all(|&v| v == 0));
    assert!(z_round(&dot, &g, -1.0, 0.5).is_err());
}

#[test]
fn z_print_examples() {
    let g = grid(32, 4.0);
    let model = OpticalModel::default();
    let k = socs_kernels(&model, &g, 0.0, Truncation::Full).unwrap();
    let zero = ContinuousMaskField::new(g, vec![0.0; g.len()], FieldSource::Synthetic).unwrap();
    assert!(z_print(&zero, &k, 1.0, model.tau_print).unwrap().iter().all(|&v| v == 0));
    let clear = ContinuousMaskField::new(g, vec![1.0; g.len()], FieldSource::Synthetic).unwrap();
    assert!(z_print(&clear, &k, 1.0, model.tau_print).unwrap().iter().all(|&v| v == 1));

    let tcc = build_tcc(&model, &g, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let f = ContinuousMaskField::new(g, data.clone(), FieldSource::Synthetic).unwrap();
    let zp = z_print(&f, &k, 1.0, model.tau_print).unwrap();
    let (hop, _) = image_hopkins_direct(&MaskField::from_real(g, &data), &tcc, 1.0).unwrap();
    let mut compared = 0;
    for (z, v) in zp.iter().zip(&hop.data) {
        if (v - model.tau_print).abs() > 1e-9 {
            assert_eq!(*z, u8::from(*v >= model.tau_print));
            compared += 1;
        }
    }
    assert!(compared > g.len() / 2);
    assert!(ContinuousMaskField::new(g, vec![1.5; g.len()], FieldSource::Synthetic).is_err());
}

#[test]
fn loss_examples() {
    let g = grid(16, 4.0);
    let k = socs_kernels(&OpticalModel::default(), &g, 0.0, Truncation::Energy(0.99)).unwrap();
    let ones = ContinuousMaskField::new(g, vec![1.0; g.len()], FieldSource::Synthetic).unwrap();
    let printed = z_print(&ones, &k, 1.0, 0.3).unwrap();
    let l = losses(&ones, &vec![1.0; g.len()], &printed, &k, 1.0, 0.3).unwrap();
    assert_eq!((l.mask_sum, l.litho_sum), (0.0, 0.0));
    let l = losses(&ones, &vec![0.0; g.len()], &printed, &k, 1.0, 0.3).unwrap();
    assert_eq!(l.mask_sum, g.len() as f64);
    assert_eq!(l.mask_mean, 1.0);
    assert!(losses(&ones, &[0.0; 3], &printed, &k, 1.0, 0.3).is_err());
}

fn field_grid(mask: &SegmentedMask, pitch: f64) -> ImageGrid {
    let b = litho::geometry::Aabb::of_points(mask.rings.iter().flat_map(|r| r.vertices.iter())).unwrap();
    let k = 1.0 / mask.dbu_per_nm;
    ImageGrid::covering([b.lo.x as f64 * k, b.lo.y as f64 * k], [b.hi.x as f64 * k, b.hi.y as f64 * k], pitch, 12.0).unwrap()
}

fn base(layout: &litho::geometry::Layout) -> SegmentedMask {
    prepare_mask(layout, suite::LAYER, &OpcConfig::default()).unwrap()
}

#[test]
fn extraction_round_trips() {
    let pitch = 1.0;
    let b = base(&suite::line_space(48.0, 3, 120.0));
    let g = field_grid(&b, pitch);
    let cfg = ExtractConfig::default();

    let at_zero = extract_segment_moves(&ContinuousMaskField::rasterize(&b, g), &b, &cfg).unwrap();
    assert!(at_zero.warned.is_empty());
    assert!(at_zero.moves_nm.iter().all(|d| d.abs() <= pitch / 2.0 + 1e-9), "{:?}", at_zero.moves_nm);

    let dbu = suite::rules().to_dbu(b.dbu_per_nm);
    let grown = seeded_mask(&b, &vec![3.0; b.len()], &dbu).unwrap();
    let got = extract_segment_moves(&ContinuousMaskField::rasterize(&grown, g), &b, &cfg).unwrap();
    for (i, d) in got.moves_nm.iter().enumerate() {
        let truth = grown.segments[i].offset as f64 / b.dbu_per_nm;
        assert!((d - truth).abs() <= pitch / 2.0 + 1e-9, "segment {i}: {d} vs {truth}");
    }

    let blank = ContinuousMaskField::new(g, vec![0.0; g.len()], FieldSource::Synthetic).unwrap();
    let got = extract_segment_moves(&blank, &b, &cfg).unwrap();
    assert!(got.moves_nm.iter().all(|&d| d == 0.0));
    assert_eq!(got.warned.len(), b.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn extract_inverts_rasterize_on_the_suite(which in 0usize..9, seed in any::<u64>(), pitch in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let (_, lay) = &suite::all()[which];
        let b = base(lay);
        let dbu = suite::rules().to_dbu(b.dbu_per_nm);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let want: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let moved = seeded_mask(&b, &want, &dbu).unwrap();
        let g = field_grid(&b, pitch);
        let got = extract_segment_moves(&ContinuousMaskField::rasterize(&moved, g), &b, &ExtractConfig::default()).unwrap();
        prop_assert!(got.warned.is_empty());
        for (i, d) in got.moves_nm.iter().enumerate() {
            let truth = moved.segments[i].offset as f64 / b.dbu_per_nm;
            prop_assert!((d - truth).abs() <= pitch / 2.0 + 1e-9, "segment {}: {} vs {}", i, d, truth);
        }
    }
}

#[test]
fn applying_moves_is_clamped_clean() {
    let b = base(&suite::line_space(40.0, 3, 120.0));
    let dbu = suite::rules().to_dbu(b.dbu_per_nm);
    let same = apply_segment_moves(&b, &vec![0.0; b.len()], &dbu).unwrap();
    assert_eq!(same.offsets(), b.offsets());
    // 20 nm spaces, 8 nm rule: +8 nm on every side would leave 4 nm
    let fat = apply_segment_moves(&b, &vec![8.0; b.len()], &dbu).unwrap();
    assert!(mrc::check_rules(&fat.reconstruct(), &dbu).unwrap().is_clean());
    assert!(fat.offsets().iter().any(|&o| o > 0 && (o as f64) < 8.0 * b.dbu_per_nm));
    assert!(apply_segment_moves(&b, &vec![f64::NAN; b.len()], &dbu).is_err());
}

#[test]
fn corrected_masks_lower_the_litho_loss() {
    let model = OpticalModel::default();
    let cfg = suite::opc_config();
    for (name, lay) in suite::all() {
        let out = run_opc(&lay, suite::LAYER, &model, &suite::rules(), &cfg, None).unwrap();
        let b = prepare_mask(&lay, suite::LAYER, &cfg).unwrap();
        let g = field_grid(&b, cfg.pixel_nm);
        let sim_grid = ImageGrid::covering(
            [g.origin_nm[0], g.origin_nm[1]],
            [g.origin_nm[0] + g.nx as f64 * g.pitch_nm, g.origin_nm[1] + g.ny as f64 * g.pitch_nm],
            g.pitch_nm,
            model.guard_band_nm(),
        )
        .unwrap();
        let k = socs_kernels(&model, &sim_grid, 0.0, Truncation::Energy(model.energy_floor)).unwrap();
        let target = ContinuousMaskField::rasterize(&b, sim_grid);
        let corrected = ContinuousMaskField::rasterize(&out.mask, sim_grid);
        let zr = z_round(&target.data, &sim_grid, 4.0, model.tau_round).unwrap();
        let raw = losses(&target, &corrected.data, &zr, &k, model.dose, model.tau_print).unwrap();
        let opc = losses(&corrected, &corrected.data, &zr, &k, model.dose, model.tau_print).unwrap();
        assert!(opc.litho_sum <= raw.litho_sum, "{name}: corrected {} vs raw {}", opc.litho_sum, raw.litho_sum);
        assert_eq!(opc.mask_sum, 0.0);
    }
}
