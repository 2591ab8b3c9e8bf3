//! The correction loop: image at three foci, measure, fold, move, clamp.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{self, Condition, ContourSet, Defect, DefectKind, DefectLimits, EpeRecord};
use crate::geometry::{Coord, Layout, Polygon};
use crate::imaging::{self, ImageGrid, OpticalModel, ResistImage, SocsKernelSet, Truncation};
use crate::mrc::{self, MrcRuleSet};

use super::controller::*;
use super::{retarget_tips, segment_layout, OpcError, SegmentedMask};

/// Imaging pipeline for one window at the three foci of a `FocusSet`.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: OpticalModel,
    pub grid: ImageGrid,
    pub focus: FocusSet,
    pub dose: f64,
    kernels: Vec<SocsKernelSet>,
}

impl Simulator {
    pub fn new(model: &OpticalModel, focus: FocusSet, dose: f64, grid: ImageGrid) -> Result<Self, OpcError> {
        model.validate()?;
        focus.validate()?;
        let kernels = focus
            .all()
            .par_iter()
            .map(|&f| imaging::socs_kernels(model, &grid, f, Truncation::Energy(model.energy_floor)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Simulator { model: model.clone(), grid, focus, dose, kernels })
    }

    /// Window around the mask's base rings plus the optical guard band.
    pub fn for_mask(model: &OpticalModel, focus: FocusSet, dose: f64, mask: &SegmentedMask, pixel_nm: f64) -> Result<Self, OpcError> {
        let k = 1.0 / mask.dbu_per_nm;
        let b = crate::geometry::Aabb::of_points(mask.rings.iter().flat_map(|r| r.vertices.iter()))
            .ok_or_else(|| OpcError::BadParameter("empty target".into()))?;
        let grid = ImageGrid::covering(
            [b.lo.x as f64 * k, b.lo.y as f64 * k],
            [b.hi.x as f64 * k, b.hi.y as f64 * k],
            pixel_nm,
            model.guard_band_nm(),
        )?;
        Simulator::new(model, focus, dose, grid)
    }

    pub fn kernels(&self, condition: usize) -> &SocsKernelSet {
        &self.kernels[condition]
    }

    pub fn condition(&self, c: usize) -> Condition {
        Condition { focus_nm: self.focus.all()[c], dose: self.dose }
    }

    pub fn resist(&self, polys: &[Polygon], dbu_per_nm: f64, c: usize) -> Result<ResistImage, OpcError> {
        let field = imaging::rasterize_layer(polys, dbu_per_nm, &self.grid);
        let aerial = imaging::image_socs(&field, &self.kernels[c], self.dose)?;
        Ok(imaging::resist_filter(&aerial, &self.model))
    }

    pub fn contours(&self, polys: &[Polygon], dbu_per_nm: f64, c: usize) -> Result<ContourSet, OpcError> {
        let r = self.resist(polys, dbu_per_nm, c)?;
        Ok(contour::marching_squares(&r, r.threshold)?)
    }
}

/// EPE of every segment of `mask` (current offsets) at the three foci.
#[derive(Debug, Clone)]
pub struct Measurement {
    /// f0, fp, fn.
    pub epe: [Vec<EpeRecord>; 3],
    /// Whether each segment's site is printed, per condition.
    pub printed: [Vec<bool>; 3],
    pub contours: [ContourSet; 3],
}

pub fn measure(sim: &Simulator, mask: &SegmentedMask, search_radius_nm: f64) -> Result<Measurement, OpcError> {
    let polys = mask.reconstruct();
    let per: Vec<(Vec<EpeRecord>, Vec<bool>, ContourSet)> = (0..3)
        .into_par_iter()
        .map(|c| {
            let cs = sim.contours(&polys, mask.dbu_per_nm, c)?;
            let epe = contour::measure_epe(&cs, mask, search_radius_nm, sim.condition(c));
            let printed = epe.iter().map(|r| cs.contains(r.site_nm)).collect();
            Ok((epe, printed, cs))
        })
        .collect::<Result<_, OpcError>>()?;
    let mut it = per.into_iter();
    let mut next = || it.next().unwrap();
    let (e0, p0, c0) = next();
    let (e1, p1, c1) = next();
    let (e2, p2, c2) = next();
    Ok(Measurement { epe: [e0, e1, e2], printed: [p0, p1, p2], contours: [c0, c1, c2] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeefSettings {
    pub probe_nm: f64,
    pub min: f64,
    pub max: f64,
    /// Minimum site distance between segments probed in the same image;
    /// 0 probes one segment per image.
    pub batch_separation_nm: f64,
    pub search_radius_nm: f64,
}

impl MeefSettings {
    pub fn from_config(c: &OpcConfig) -> Self {
        MeefSettings {
            probe_nm: c.meef_probe_nm,
            min: c.meef_min,
            max: c.meef_max,
            batch_separation_nm: c.meef_batch_separation_nm,
            search_radius_nm: c.search_radius_nm,
        }
    }
}

/// Greedy batches of segments whose sites are pairwise farther apart than
/// `sep` nm, in segment order.
pub fn meef_batches(mask: &SegmentedMask, sep: f64) -> Vec<Vec<usize>> {
    let sites: Vec<[f64; 2]> = (0..mask.len()).map(|i| contour::evaluation_site(mask, i).0).collect();
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for i in 0..mask.len() {
        let fits = |b: &Vec<usize>| {
            sep > 0.0 && b.iter().all(|&j| (sites[i][0] - sites[j][0]).hypot(sites[i][1] - sites[j][1]) > sep)
        };
        match batches.iter_mut().find(|b| fits(b)) {
            Some(b) => b.push(i),
            None => batches.push(vec![i]),
        }
    }
    batches
}

fn meef_value(driver: DriverMode, base: Option<f64>, probed: Option<f64>, probe_nm: f64, s: &MeefSettings) -> f64 {
    match (driver, base, probed) {
        (DriverMode::HandsOff, _, _) => 1.0,
        (_, Some(a), Some(b)) => ((b - a) / probe_nm).clamp(s.min, s.max),
        _ => s.max,
    }
}

fn probe_dbu(mask: &SegmentedMask, s: &MeefSettings) -> Result<Coord, OpcError> {
    if !(s.probe_nm > 0.0) {
        return Err(OpcError::BadParameter(format!("MEEF probe {}", s.probe_nm)));
    }
    Ok(((s.probe_nm * mask.dbu_per_nm).round() as Coord).max(1))
}

/// Best-focus MEEF of every segment by a forward finite difference of
/// `probe_nm`, clamped to `[min, max]`, from full images. Segments closer
/// than `batch_separation_nm` never share an image. Open records give
/// `max`; hands-off segments get 1.
pub fn estimate_meef_full(
    sim: &Simulator,
    mask: &SegmentedMask,
    drivers: &[DriverMode],
    settings: &MeefSettings,
) -> Result<Vec<f64>, OpcError> {
    let probe = probe_dbu(mask, settings)?;
    let probe_nm = probe as f64 / mask.dbu_per_nm;
    let base_cs = sim.contours(&mask.reconstruct(), mask.dbu_per_nm, 0)?;
    let base = contour::measure_epe(&base_cs, mask, settings.search_radius_nm, sim.condition(0));
    let batches = meef_batches(mask, settings.batch_separation_nm);
    let probed: Vec<Vec<(usize, Option<f64>)>> = batches
        .par_iter()
        .map(|b| {
            let mut moved = mask.clone();
            for &i in b {
                moved.segments[i].offset += probe;
            }
            let cs = sim.contours(&moved.reconstruct(), mask.dbu_per_nm, 0)?;
            let index = cs.index();
            Ok(b.iter()
                .map(|&i| {
                    let (site, n) = contour::evaluation_site(mask, i);
                    let e = index.as_ref().and_then(|ix| ix.ray(site, n, settings.search_radius_nm, true)).map(|h| h.distance);
                    (i, e)
                })
                .collect())
        })
        .collect::<Result<_, OpcError>>()?;
    let mut meef = vec![settings.max; mask.len()];
    for (i, e) in probed.into_iter().flatten() {
        meef[i] = meef_value(drivers.get(i).copied().unwrap_or_default(), base[i].epe_nm, e, probe_nm, settings);
    }
    Ok(meef)
}

/// Best-focus MEEF of every segment, one segment at a time, by updating the
/// coherent fields locally: the probe changes a few mask pixels, so only
/// the image around the segment's site is recomputed. Same definition as
/// `estimate_meef_full` with batching off.
pub fn estimate_meef(
    sim: &Simulator,
    mask: &SegmentedMask,
    drivers: &[DriverMode],
    settings: &MeefSettings,
) -> Result<Vec<f64>, OpcError> {
    let probe = probe_dbu(mask, settings)?;
    let probe_nm = probe as f64 / mask.dbu_per_nm;
    let local = LocalImager::new(sim, &mask.reconstruct(), mask.dbu_per_nm)?;
    let out = (0..mask.len())
        .into_par_iter()
        .map(|i| {
            let (site, n) = contour::evaluation_site(mask, i);
            let a = local.epe(&[], site, n, settings.search_radius_nm)?;
            let mut moved = mask.clone();
            moved.segments[i].offset += probe;
            let cov = imaging::coverage(&moved.reconstruct(), mask.dbu_per_nm, &sim.grid);
            let delta: Vec<(usize, f64)> = cov
                .iter()
                .zip(&local.coverage)
                .enumerate()
                .filter_map(|(p, (c, b))| ((c - b).abs() > 1e-12).then_some((p, c - b)))
                .collect();
            let b = local.epe(&delta, site, n, settings.search_radius_nm)?;
            Ok(meef_value(drivers.get(i).copied().unwrap_or_default(), a, b, probe_nm, settings))
        })
        .collect::<Result<Vec<f64>, OpcError>>()?;
    Ok(out)
}

/// Best-focus image state for local re-imaging around small mask edits.
struct LocalImager<'a> {
    sim: &'a Simulator,
    coverage: Vec<f64>,
    fields: Vec<Vec<Complex64>>,
    /// Spatial kernels scaled so that `E = sum_p o(p) h(x - p)`.
    kernels: Vec<Vec<Complex64>>,
    resist: Vec<f64>,
    /// Resist blur taps (dx, dy, weight).
    blur: Vec<(i64, i64, f64)>,
    blur_reach: i64,
}

impl<'a> LocalImager<'a> {
    fn new(sim: &'a Simulator, polys: &[Polygon], dbu_per_nm: f64) -> Result<Self, OpcError> {
        let g = sim.grid;
        let coverage = imaging::coverage(polys, dbu_per_nm, &g);
        let field = imaging::MaskField::from_real(g, &coverage);
        let k0 = &sim.kernels[0];
        let fields = imaging::coherent_fields(&field, k0)?;
        let n = g.len() as f64;
        let kernels: Vec<Vec<Complex64>> = (0..k0.order())
            .into_par_iter()
            .map(|k| k0.spatial_kernel(k).into_iter().map(|v| v / n).collect())
            .collect();
        let aerial = imaging::image_socs(&field, k0, sim.dose)?;
        let resist = imaging::resist_filter(&aerial, &sim.model).data;
        // Blur impulse response, truncated at 1e-4 of its peak.
        let mut delta = vec![0.0; g.len()];
        delta[0] = 1.0;
        let imp = imaging::gaussian_blur(&g, &delta, sim.model.resist_sigma_nm);
        let peak = imp.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut blur = Vec::new();
        let mut blur_reach = 0;
        for (p, &w) in imp.iter().enumerate() {
            if w.abs() > 1e-4 * peak {
                let dx = crate::fft::signed_index(p % g.nx, g.nx);
                let dy = crate::fft::signed_index(p / g.nx, g.ny);
                blur_reach = blur_reach.max(dx.abs()).max(dy.abs());
                blur.push((dx, dy, w));
            }
        }
        Ok(LocalImager { sim, coverage, fields, kernels, resist, blur, blur_reach })
    }

    fn wrap(&self, x: i64, y: i64) -> usize {
        let g = &self.sim.grid;
        y.rem_euclid(g.ny as i64) as usize * g.nx + x.rem_euclid(g.nx as i64) as usize
    }

    /// EPE at `site` after adding `delta` (pixel, coverage change) to the mask.
    fn epe(&self, delta: &[(usize, f64)], site: [f64; 2], normal: [f64; 2], radius: f64) -> Result<Option<f64>, OpcError> {
        let g = self.sim.grid;
        let px = g.to_pixel(site);
        let (cx, cy) = (px[0].floor() as i64, px[1].floor() as i64);
        let half = (radius / g.pitch_nm).ceil() as i64 + 3;
        let outer = half + self.blur_reach;
        let ow = (2 * outer + 1) as usize;
        let k0 = &self.sim.kernels[0];
        // intensity change on the outer window
        let mut d_int = vec![0.0; ow * ow];
        if !delta.is_empty() {
            let (nx, ny) = (g.nx as i64, g.ny as i64);
            let (x0, y0) = (cx - outer, cy - outer);
            let mut de = vec![Complex64::default(); ow * ow];
            for (k, w) in k0.weights.iter().enumerate() {
                let h = &self.kernels[k];
                de.iter_mut().for_each(|v| *v = Complex64::default());
                for &(s, dv) in delta {
                    let (sx, sy) = ((s % g.nx) as i64, (s / g.nx) as i64);
                    for r in 0..ow {
                        let hy = (y0 + r as i64 - sy).rem_euclid(ny) as usize * g.nx;
                        let row = &mut de[r * ow..(r + 1) * ow];
                        let hx0 = (x0 - sx).rem_euclid(nx) as usize;
                        if hx0 + ow <= g.nx {
                            for (v, hv) in row.iter_mut().zip(&h[hy + hx0..hy + hx0 + ow]) {
                                *v += hv * dv;
                            }
                        } else {
                            for (c, v) in row.iter_mut().enumerate() {
                                *v += h[hy + (hx0 + c) % g.nx] * dv;
                            }
                        }
                    }
                }
                let f = &self.fields[k];
                for (q, v) in d_int.iter_mut().enumerate() {
                    let e = f[self.wrap(x0 + (q % ow) as i64, y0 + (q / ow) as i64)];
                    *v += w * ((e + de[q]).norm_sqr() - e.norm_sqr());
                }
            }
            d_int.iter_mut().for_each(|v| *v *= self.sim.dose);
        }
        let iw = (2 * half + 1) as usize;
        let mut patch = vec![0.0; iw * iw];
        for (q, v) in patch.iter_mut().enumerate() {
            let (ix, iy) = ((q % iw) as i64, (q / iw) as i64);
            let mut r = self.resist[self.wrap(cx - half + ix, cy - half + iy)];
            if !delta.is_empty() {
                for &(dx, dy, w) in &self.blur {
                    let ox = (ix + self.blur_reach - dx) as usize;
                    let oy = (iy + self.blur_reach - dy) as usize;
                    r += w * d_int[oy * ow + ox];
                }
            }
            *v = r;
        }
        let pg = ImageGrid::new(
            iw,
            iw,
            g.pitch_nm,
            [g.origin_nm[0] + (cx - half) as f64 * g.pitch_nm, g.origin_nm[1] + (cy - half) as f64 * g.pitch_nm],
        )?;
        let img = ResistImage { grid: pg, data: patch, threshold: self.sim.model.threshold };
        let cs = contour::marching_squares(&img, img.threshold)?;
        Ok(cs.index().and_then(|ix| ix.ray(site, normal, radius, true)).map(|h| h.distance))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConditionStats {
    pub focus_nm: f64,
    pub max_abs: f64,
    pub mean: f64,
    pub rms: f64,
    pub open: usize,
}

impl ConditionStats {
    pub fn of(records: &[EpeRecord], focus_nm: f64) -> Self {
        let v: Vec<f64> = records.iter().filter_map(|r| r.epe_nm).collect();
        let n = v.len().max(1) as f64;
        ConditionStats {
            focus_nm,
            max_abs: v.iter().fold(0.0f64, |m, e| m.max(e.abs())),
            mean: v.iter().sum::<f64>() / n,
            rms: (v.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            open: records.len() - v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// f0, fp, fn.
    pub stats: [ConditionStats; 3],
    pub max_eff_nm: f64,
    /// Largest correction still requested after window saturation.
    pub residual_nm: f64,
    /// Segments whose best-focus error is outside the tolerance window.
    pub outside: usize,
    pub clamped: usize,
    pub moved: usize,
    pub gain: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpcStatus {
    Converged,
    IterationCap,
    /// Gain fell below 0.1 after repeated growth of the residual.
    Diverged,
    /// Not converged, but no segment could move any more.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OpcOutcome {
    pub mask: SegmentedMask,
    pub reports: Vec<IterationReport>,
    pub status: OpcStatus,
    /// Last measurement, on the returned mask.
    pub last: Measurement,
    /// Print defects of the returned mask at f0, fp, fn.
    pub defects: [Vec<Defect>; 3],
}

impl OpcOutcome {
    /// Moves (nm) of the returned mask relative to the prepared target.
    pub fn offsets_nm(&self) -> Vec<f64> {
        self.mask.segments.iter().map(|s| s.offset as f64 / self.mask.dbu_per_nm).collect()
    }

    /// Iteration index of the first converged report.
    pub fn converged_at(&self) -> Option<usize> {
        self.reports.iter().find(|r| r.converged).map(|r| r.iteration)
    }
}

/// Retargeted, segmented, lock-tagged target: the base every correction and
/// warm start refers to.
pub fn prepare_mask(target: &Layout, layer: &str, config: &OpcConfig) -> Result<SegmentedMask, OpcError> {
    config.validate()?;
    let retargeted = retarget_tips(target, layer, config.retarget_pullback_nm)?;
    let mut mask = segment_layout(&retargeted, layer, config.seg_length_nm)?;
    mark_lateral_locks(&mut mask, &config.lateral_lock);
    Ok(mask)
}

/// Clamp `init` offsets (nm per segment) into an MRC-clean start mask.
pub fn seeded_mask(base: &SegmentedMask, init_nm: &[f64], rules: &mrc::DbuRules) -> Result<SegmentedMask, OpcError> {
    if init_nm.len() != base.len() {
        return Err(OpcError::BadParameter(format!("{} initial moves for {} segments", init_nm.len(), base.len())));
    }
    let proposed: Vec<Coord> = init_nm
        .iter()
        .map(|&d| if d.is_finite() { (d * base.dbu_per_nm).round() as Coord } else { 0 })
        .collect();
    let limits = mrc::limit_moves(base, &proposed, rules)?;
    let mut out = base.clone();
    mrc::apply_limits(&mut out, &limits);
    Ok(out)
}

const MIN_DAMPING: f64 = 0.25;

/// How a move is rounded to the database grid. Moves from outside the
/// tolerance window round into it; moves stopped at its edge round short.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Snap {
    Nearest,
    AwayFromZero,
    TowardZero,
}

impl Snap {
    fn apply(self, x: f64) -> Coord {
        let r = match self {
            Snap::Nearest => x.round(),
            Snap::AwayFromZero if x.abs() > 1e-9 => x.signum() * x.abs().ceil(),
            Snap::AwayFromZero => 0.0,
            Snap::TowardZero => x.trunc(),
        };
        r as Coord
    }
}

/// Per-segment move (nm), its grid rounding and remaining correction (nm)
/// for one iteration.
fn plan_moves(
    mask: &SegmentedMask,
    m: &Measurement,
    meef: &[f64],
    drivers: &[DriverMode],
    cfg: &OpcConfig,
    gain: f64,
) -> (Vec<f64>, Vec<Snap>, Vec<f64>, f64) {
    let n = mask.len();
    let mut moves = vec![0.0; n];
    let mut snap = vec![Snap::Nearest; n];
    let mut residual = vec![0.0; n];
    let mut max_eff = 0.0f64;
    for i in 0..n {
        let e = [m.epe[0][i].epe_nm, m.epe[1][i].epe_nm, m.epe[2][i].epe_nm];
        if e.iter().any(Option::is_none) {
            // Defect priority: fixed recovery step, best focus decides.
            let votes: Vec<f64> = (0..3)
                .filter(|&c| e[c].is_none())
                .map(|c| if m.printed[c][i] { -1.0 } else { 1.0 })
                .collect();
            let dir = if e[0].is_none() || votes.iter().all(|&v| v == votes[0]) { votes[0] } else { 0.0 };
            moves[i] = dir * cfg.max_step_nm;
            residual[i] = f64::INFINITY;
            continue;
        }
        let e = [e[0].unwrap(), e[1].unwrap(), e[2].unwrap()];
        let (eff, branch) = effective_epe_one(e, cfg.tol_pos, cfg.tol_neg, drivers[i], cfg.mode);
        max_eff = max_eff.max(eff.abs());
        let mv = propose_moves(&[eff], &[meef[i]], gain, cfg.max_step_nm)[0];
        if branch == EpeBranch::Window {
            let (c, _) = window_clamp(mv, e[0], meef[i], cfg.tol_pos, cfg.tol_neg);
            moves[i] = c;
            if c != mv {
                residual[i] = (c * meef[i]).abs();
                snap[i] = Snap::TowardZero;
            } else {
                residual[i] = eff.abs();
            }
        } else {
            moves[i] = mv;
            residual[i] = eff.abs();
            snap[i] = Snap::AwayFromZero;
        }
    }
    let before = moves.clone();
    apply_lateral_locks(mask, &mut moves);
    for i in 0..n {
        if moves[i] != before[i] {
            residual[i] = 0.0;
            snap[i] = Snap::Nearest;
        }
    }
    (moves, snap, residual, max_eff)
}

/// Iterative through-focus correction of `layer` in `target`. `init`, when
/// given, seeds the offsets (nm per segment of `prepare_mask`) instead of
/// the hammer-head start.
pub fn run_opc(
    target: &Layout,
    layer: &str,
    model: &OpticalModel,
    rules: &MrcRuleSet,
    cfg: &OpcConfig,
    init: Option<&[f64]>,
) -> Result<OpcOutcome, OpcError> {
    let base = prepare_mask(target, layer, cfg)?;
    let sim = Simulator::for_mask(model, cfg.focus, cfg.dose, &base, cfg.pixel_nm)?;
    run_opc_with(&sim, &base, rules, cfg, init)
}

/// `run_opc` on a prepared mask and a prebuilt simulator.
pub fn run_opc_with(
    sim: &Simulator,
    base: &SegmentedMask,
    rules: &MrcRuleSet,
    cfg: &OpcConfig,
    init: Option<&[f64]>,
) -> Result<OpcOutcome, OpcError> {
    cfg.validate()?;
    let dbu = rules.to_dbu(base.dbu_per_nm);
    let drivers = driver_modes(base, &cfg.drivers);
    let mut mask = match init {
        Some(d) => seeded_mask(base, d, &dbu)?,
        None => hammerhead_init(base, &cfg.hammerhead, &dbu)?,
    };
    let meef_cfg = MeefSettings::from_config(cfg);
    let mut meef = Vec::new();
    let mut gain = cfg.gain;
    let mut reports = Vec::new();
    let mut last_residual = f64::INFINITY;
    let mut growth = 0;
    // Per-segment damping, halved whenever a segment reverses direction.
    let mut damp = vec![1.0; mask.len()];
    let mut previous: Vec<Coord> = vec![0; mask.len()];
    let mut status = OpcStatus::IterationCap;
    let mut it = 0;
    let last = loop {
        let m = measure(sim, &mask, cfg.search_radius_nm)?;
        if it % cfg.meef_refresh == 0 || meef.is_empty() {
            meef = estimate_meef(sim, &mask, &drivers, &meef_cfg)?;
        }
        let (moves, snap, residual, max_eff) = plan_moves(&mask, &m, &meef, &drivers, cfg, gain);
        let worst = residual.iter().cloned().fold(0.0f64, f64::max);
        let outside = snap.iter().filter(|&&s| s == Snap::AwayFromZero).count();
        let converged = worst <= cfg.converge_nm && outside == 0;
        let foci = cfg.focus.all();
        let mut report = IterationReport {
            iteration: it,
            stats: [0, 1, 2].map(|c| ConditionStats::of(&m.epe[c], foci[c])),
            max_eff_nm: max_eff,
            residual_nm: worst,
            outside,
            clamped: 0,
            moved: 0,
            gain,
            converged,
        };
        if converged {
            status = OpcStatus::Converged;
            reports.push(report);
            break m;
        }
        if it == cfg.max_iterations {
            reports.push(report);
            break m;
        }
        // Divergence guard on the residual.
        if worst > last_residual {
            growth += 1;
            if growth >= 3 {
                gain /= 2.0;
                growth = 0;
                if gain < 0.1 {
                    status = OpcStatus::Diverged;
                    reports.push(report);
                    break m;
                }
            }
        } else {
            growth = 0;
        }
        last_residual = worst;

        let proposed: Vec<Coord> =
            (0..moves.len())
                .map(|i| {
                    let raw = snap[i].apply(moves[i] * mask.dbu_per_nm);
                    match snap[i].apply(moves[i] * damp[i] * mask.dbu_per_nm) {
                        0 => raw.signum(),
                        d => d,
                    }
                })
                .collect();
        let limits = mrc::limit_moves(&mask, &proposed, &dbu)?;
        for l in &limits {
            if l.allowed != 0 {
                if l.allowed.signum() == -previous[l.segment].signum() {
                    damp[l.segment] = (damp[l.segment] * 0.5).max(MIN_DAMPING);
                } else if l.allowed.signum() == previous[l.segment].signum() {
                    damp[l.segment] = (damp[l.segment] * 1.5).min(1.0);
                }
                previous[l.segment] = l.allowed;
            }
        }
        report.clamped = limits.iter().filter(|l| l.allowed != l.proposed).count();
        report.moved = limits.iter().filter(|l| l.allowed != 0).count();
        mrc::apply_limits(&mut mask, &limits);
        let check = mrc::check_rules(&mask.reconstruct(), &dbu)?;
        if !check.is_clean() {
            return Err(OpcError::MrcDirty { iteration: it, violations: check.violations.len() });
        }
        let stalled = report.moved == 0;
        reports.push(report);
        it += 1;
        if stalled {
            status = OpcStatus::Stalled;
            break measure(sim, &mask, cfg.search_radius_nm)?;
        }
    };
    let limits = DefectLimits {
        min_width_nm: cfg.print_min_width_nm,
        min_space_nm: cfg.print_min_space_nm,
        search_radius_nm: cfg.search_radius_nm,
    };
    let defects = [0, 1, 2].map(|c| contour::detect_defects(&last.contours[c], &mask, &limits));
    Ok(OpcOutcome { mask, reports, status, last, defects })
}

/// Defects of one kind across all three foci.
pub fn count_defects(d: &[Vec<Defect>; 3], kind: DefectKind) -> usize {
    d.iter().flatten().filter(|x| x.kind == kind).count()
}

