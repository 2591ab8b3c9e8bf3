use litho::geometry::{Point, Polygon};
use litho::imaging::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize, pitch: f64) -> ImageGrid {
    ImageGrid::new(n, n, pitch, [0.0, 0.0]).unwrap()
}

fn annular() -> OpticalModel {
    OpticalModel { source: SourceSpec::Annular { inner: 0.5, outer: 0.9 }, ..Default::default() }
}

fn random_mask(g: &ImageGrid, seed: u64) -> MaskField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..g.len()).map(|_| if rng.random_bool(0.4) { 1.0 } else { rng.random_range(0.0..0.3) }).collect();
    MaskField::from_real(*g, &v)
}

fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn socs_matches_hopkins_at_full_rank() {
    let g = grid(32, 4.0);
    for (seed, model, focus) in [(1, annular(), 0.0), (2, annular(), 60.0), (3, OpticalModel::default(), -40.0)] {
        let tcc = build_tcc(&model, &g, focus).unwrap();
        let mask = random_mask(&g, seed);
        let (hop, imag) = image_hopkins_direct(&mask, &tcc, 1.0).unwrap();
        let scale = hop.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(imag < 1e-10 * scale.max(1.0), "imaginary residue {imag}");
        for kernels in [decompose_tcc(&tcc, Truncation::Full).unwrap(), socs_kernels(&model, &g, focus, Truncation::Full).unwrap()] {
            let socs = image_socs(&mask, &kernels, 1.0).unwrap();
            let err = rel_linf(&socs.data, &hop.data);
            assert!(err <= 1e-6, "SOCS vs Hopkins {err:e}");
        }
    }
}

#[test]
fn tcc_is_hermitian_psd_and_matches_direct_sum() {
    let g = grid(16, 6.0);
    // 9-point source
    let pts: Vec<(f64, f64, f64)> =
        (0..9).map(|k| ((k % 3) as f64 * 0.3 - 0.3, (k / 3) as f64 * 0.3 - 0.3, 1.0 + k as f64)).collect();
    let model = OpticalModel { source: SourceSpec::Points { points: pts.iter().map(|p| [p.0, p.1, p.2]).collect() }, ..Default::default() };
    let focus = 35.0;
    let tcc = build_tcc(&model, &g, focus).unwrap();
    assert!(tcc.hermitian_defect() < 1e-15);
    let total_w: f64 = pts.iter().map(|p| p.2).sum();
    let cut = model.na / model.wavelength_nm;
    // Independent triple loop; the pupil is re-derived here.
    let pupil = |f: [f64; 2]| {
        let r2 = f[0] * f[0] + f[1] * f[1];
        if r2 > cut * cut * (1.0 + 1e-12) {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(1.0, -std::f64::consts::PI * model.wavelength_nm * focus * r2)
        }
    };
    for i in 0..tcc.size() {
        for j in 0..tcc.size() {
            let (f1, f2) = (tcc.freqs[i], tcc.freqs[j]);
            let mut acc = Complex64::default();
            for p in &pts {
                let s = [p.0 * cut, p.1 * cut];
                acc += p.2 / total_w * pupil([f1[0] + s[0], f1[1] + s[1]]) * pupil([f2[0] + s[0], f2[1] + s[1]]).conj();
            }
            assert!((acc - tcc.data[(i, j)]).norm() < 1e-14);
        }
        let d = tcc.data[(i, i)];
        assert!(d.im.abs() < 1e-15 && d.re >= 0.0 && d.re <= 1.0 + 1e-12);
    }
    let eig = tcc.data.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * top));
}

#[test]
fn point_source_gives_rank_one_tcc() {
    let model = OpticalModel { source: SourceSpec::Point, ..Default::default() };
    let g = grid(24, 5.0);
    let tcc = build_tcc(&model, &g, 0.0).unwrap();
    for i in 0..tcc.size() {
        for j in 0..tcc.size() {
            let expect = model.pupil(tcc.freqs[i], 0.0) * model.pupil(tcc.freqs[j], 0.0).conj();
            assert!((tcc.data[(i, j)] - expect).norm() < 1e-15);
        }
    }
    let k = decompose_tcc(&tcc, Truncation::Full).unwrap();
    assert_eq!(k.order(), 1);
    // Coherent limit: the image is |O (x) phi|^2 with phi the pupil impulse response.
    let mask = random_mask(&g, 5);
    let (hop, _) = image_hopkins_direct(&mask, &tcc, 1.0).unwrap();
    let mut spec = mask.spectrum();
    let mut keep = vec![Complex64::default(); g.len()];
    for (i, &b) in tcc.support.iter().enumerate() {
        keep[b] = spec[b] * model.pupil(tcc.freqs[i], 0.0);
    }
    std::mem::swap(&mut spec, &mut keep);
    litho::fft::fft2(&mut spec, g.nx, g.ny, litho::fft::Direction::Inverse);
    let coherent: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
    assert!(rel_linf(&hop.data, &coherent) < 1e-10);
}

#[test]
fn decomposition_completeness_and_truncation_bound() {
    let g = grid(32, 4.0);
    let model = annular();
    let tcc = build_tcc(&model, &g, 20.0).unwrap();
    let fro = |m: &nalgebra::DMatrix<Complex64>| m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let full = decompose_tcc(&tcc, Truncation::Full).unwrap();
    let err = fro(&(full.reconstruct_tcc() - &tcc.data)) / fro(&tcc.data);
    assert!(err <= 1e-10, "full reconstruction {err:e}");
    for w in full.weights.windows(2) {
        assert!(w[0] >= w[1] && w[1] >= 0.0);
    }
    let mut last = 0.0;
    for k in 1..=full.order() {
        let t = full.truncated(k);
        let cap = t.captured_energy();
        assert!(cap >= last - 1e-15);
        last = cap;
        let e = fro(&(t.reconstruct_tcc() - &tcc.data));
        assert!(e <= (1.0 - cap) * tcc.trace() + 1e-9);
    }
    let floor = decompose_tcc(&tcc, Truncation::Energy(0.995)).unwrap();
    assert!(floor.captured_energy() >= 0.995);
    assert!(floor.truncated(floor.order() - 1).captured_energy() < 0.995);
}

#[test]
fn gram_and_direct_routes_agree() {
    let g = grid(32, 4.0);
    for model in [annular(), OpticalModel { source: SourceSpec::Circular { sigma: 0.7 }, ..Default::default() }] {
        let tcc = build_tcc(&model, &g, -30.0).unwrap();
        let direct = decompose_tcc(&tcc, Truncation::Full).unwrap();
        let gram = socs_kernels(&model, &g, -30.0, Truncation::Full).unwrap();
        assert_eq!(direct.support, gram.support);
        let n = direct.order().min(gram.order());
        for k in 0..n {
            assert!((direct.weights[k] - gram.weights[k]).abs() <= 1e-10 * direct.weights[0]);
        }
        let d = gram.reconstruct_tcc() - &tcc.data;
        assert!(d.iter().map(|c| c.norm()).fold(0.0, f64::max) < 1e-10);
        let floor = socs_kernels(&model, &g, -30.0, Truncation::Energy(0.995)).unwrap();
        assert_eq!(floor.order(), decompose_tcc(&tcc, Truncation::Energy(0.995)).unwrap().order());
    }
}

#[test]
fn dose_zero_mask_clear_field() {
    let g = grid(64, 3.0);
    let model = annular();
    let k = socs_kernels(&model, &g, 0.0, Truncation::Energy(0.995)).unwrap();
    let mask = random_mask(&g, 9);
    let one = image_socs(&mask, &k, 1.0).unwrap();
    for dose in [0.5, 1.3, 2.0] {
        let d = image_socs(&mask, &k, dose).unwrap();
        for (a, b) in d.data.iter().zip(&one.data) {
            assert_eq!(*a, dose * b);
        }
    }
    assert!(one.data.iter().all(|&v| v >= -1e-12));
    let zero = image_socs(&MaskField::zeros(g), &k, 1.0).unwrap();
    assert!(zero.data.iter().all(|&v| v == 0.0));
    let clear = image_socs(&MaskField::from_real(g, &vec![1.0; g.len()]), &k, 1.0).unwrap();
    let mean = clear.data.iter().sum::<f64>() / g.len() as f64;
    assert!(clear.data.iter().all(|v| (v - mean).abs() <= 1e-6 * mean));
    // Clear field sees the truncated TCC at DC.
    let dc = k.support.iter().position(|&b| b == 0).unwrap();
    assert!((mean - k.reconstruct_tcc()[(dc, dc)].re).abs() < 1e-9);
}

#[test]
fn translation_equivariance_and_defocus_symmetry() {
    let g = grid(48, 4.0);
    let model = annular();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let polys: Vec<Polygon> = (0..4)
        .map(|_| {
            let x = rng.random_range(40..120);
            let y = rng.random_range(40..120);
            Polygon::rect(x, y, x + rng.random_range(10..40), y + rng.random_range(10..40))
        })
        .collect();
    let k = socs_kernels(&model, &g, 0.0, Truncation::Energy(0.995)).unwrap();
    let a = image_socs(&rasterize_layer(&polys, 1.0, &g), &k, 1.0).unwrap();
    let moved: Vec<Polygon> = polys.iter().map(|p| p.translate(12, 8)).collect();
    let b = image_socs(&rasterize_layer(&moved, 1.0, &g), &k, 1.0).unwrap();
    let n = g.nx;
    for j in 0..n - 2 {
        for i in 0..n - 3 {
            assert!((b.data[(j + 2) * n + i + 3] - a.data[j * n + i]).abs() < 1e-9);
        }
    }
    let mask = rasterize_layer(&polys, 1.0, &g);
    let kp = socs_kernels(&model, &g, 50.0, Truncation::Full).unwrap();
    let km = socs_kernels(&model, &g, -50.0, Truncation::Full).unwrap();
    let ip = image_socs(&mask, &kp, 1.0).unwrap();
    let im = image_socs(&mask, &km, 1.0).unwrap();
    assert!(rel_linf(&ip.data, &im.data) < 1e-9);
    // An odd aberration breaks the symmetry.
    let sph = OpticalModel { aberrations: Aberrations { spherical: 0.05, coma_x: 0.0 }, ..annular() };
    let sp = image_socs(&mask, &socs_kernels(&sph, &g, 50.0, Truncation::Full).unwrap(), 1.0).unwrap();
    let sm = image_socs(&mask, &socs_kernels(&sph, &g, -50.0, Truncation::Full).unwrap(), 1.0).unwrap();
    assert!(rel_linf(&sp.data, &sm.data) > 1e-3);
}

#[test]
fn resist_filter_properties() {
    let g = grid(128, 1.0);
    let model = OpticalModel { resist_sigma_nm: 0.0, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let img = AerialImage { grid: g, data: data.clone(), focus_nm: 0.0, dose: 1.0 };
    assert_eq!(resist_filter(&img, &model).data, data);
    let blurred = resist_filter(&img, &OpticalModel { resist_sigma_nm: 3.0, ..model.clone() });
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean(&blurred.data) - mean(&data)).abs() < 1e-9);
    let flat = AerialImage { data: vec![0.7; g.len()], ..img.clone() };
    assert!(resist_filter(&flat, &OpticalModel { resist_sigma_nm: 3.0, ..model.clone() }).data.iter().all(|v| (v - 0.7).abs() < 1e-12));
    // Step at x = 64 (pixel edge) with period 128: compare against erf profile.
    let step: Vec<f64> = (0..g.len()).map(|p| if (p % 128) >= 64 { 1.0 } else { 0.0 }).collect();
    let s = 4.0;
    let out = resist_filter(&AerialImage { data: step, ..img }, &OpticalModel { resist_sigma_nm: s, ..model });
    let erf = |x: f64| {
        // Abramowitz-Stegun 7.1.26 is too coarse here; use the series/continued fraction split.
        libm_erf(x)
    };
    for i in 48..80 {
        let x = i as f64 + 0.5 - 64.0;
        // A pixel step sampled at centres is the box-integrated erf; with s >> pixel the centre value suffices.
        let expect = 0.5 * (1.0 + erf(x / (s * std::f64::consts::SQRT_2)));
        assert!((out.data[10 * 128 + i] - expect).abs() < 2e-3, "x={x}");
    }
    let mid = 0.5 * (out.data[10 * 128 + 63] + out.data[10 * 128 + 64]);
    assert!((mid - 0.5).abs() < 1e-9);
}

/// erf via its Taylor series (|x| < 3) or the asymptotic complement.
fn libm_erf(x: f64) -> f64 {
    if x < 0.0 {
        return -libm_erf(-x);
    }
    if x > 5.0 {
        return 1.0;
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-17 * sum.abs() {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn grid_mismatch_and_bad_pitch() {
    assert!(matches!(ImageGrid::new(8, 8, 0.0, [0.0, 0.0]), Err(ImagingError::BadPitch(_))));
    let k = socs_kernels(&annular(), &grid(16, 4.0), 0.0, Truncation::Count(3)).unwrap();
    assert!(matches!(image_socs(&MaskField::zeros(grid(16, 5.0)), &k, 1.0), Err(ImagingError::GridMismatch { .. })));
    let big = OpticalModel { tcc_budget: 10, ..annular() };
    assert!(matches!(build_tcc(&big, &grid(32, 4.0), 0.0), Err(ImagingError::TccTooLarge { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raster_area_is_exact(seed in any::<u64>(), dbu in 1u32..8, pitch in 0.5f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..9);
        // star-shaped polygon around a centre so it is simple
        let c = (200i64, 200i64);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let gap = (0..n).map(|i| (angles[(i + 1) % n] - angles[i]).rem_euclid(std::f64::consts::TAU)).fold(0.0, f64::max);
        prop_assume!(gap < 0.9 * std::f64::consts::PI);
        let pts: Vec<Point> = angles
            .iter()
            .map(|a| {
                let r = rng.random_range(20.0..150.0);
                Point::new(c.0 + (r * a.cos()) as i64, c.1 + (r * a.sin()) as i64)
            })
            .collect();
        let p = Polygon::new(pts);
        let area2 = p.signed_area2().unwrap();
        prop_assume!(area2 > 0);
        let dbu_per_nm = dbu as f64;
        let g = ImageGrid::new((400.0 / dbu_per_nm / pitch) as usize + 2, (400.0 / dbu_per_nm / pitch) as usize + 2, pitch, [-pitch / 3.0, -pitch / 7.0]).unwrap();
        let cov = coverage(&[p], dbu_per_nm, &g);
        let got: f64 = cov.iter().sum::<f64>() * pitch * pitch;
        let want = area2 as f64 / 2.0 / (dbu_per_nm * dbu_per_nm);
        prop_assert!((got - want).abs() <= 1e-9 * want, "{} vs {}", got, want);
        prop_assert!(cov.iter().all(|&c| (0.0..=1.0).contains(&c)));
    }
}
