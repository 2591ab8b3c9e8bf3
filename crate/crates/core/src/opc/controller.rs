//! Correction settings and the per-segment feedback law.

use serde::{Deserialize, Serialize};

use crate::geometry::Coord;
use crate::mrc::{self, DbuRules};

use super::{OpcError, SegmentRole, SegmentedMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusSet {
    pub f0: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl Default for FocusSet {
    fn default() -> Self {
        FocusSet { f0: 0.0, fp: 45.0, fn_: -45.0 }
    }
}

impl FocusSet {
    pub fn validate(&self) -> Result<(), OpcError> {
        if self.fn_ < self.f0 && self.f0 < self.fp {
            Ok(())
        } else {
            Err(OpcError::BadParameter(format!("focus set needs fn < f0 < fp, got {self:?}")))
        }
    }

    /// (f0, fp, fn) in that order.
    pub fn all(&self) -> [f64; 3] {
        [self.f0, self.fp, self.fn_]
    }
}

/// How the through-focus error is folded into one number per segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EpeMode {
    /// Tolerance window with the three-focus average inside it.
    #[default]
    ThroughFocus,
    /// Same window, but the in-window value is the best-focus error alone.
    OnFocusOnly,
}

/// Per-segment correction driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DriverMode {
    #[default]
    Full,
    /// Negative-defocus error left out of the in-window average.
    NoFn,
    /// MEEF pinned to 1 and no retargeting.
    HandsOff,
}

/// Which segments a driver rule applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum DriverSelector {
    /// Segments of other features within `within_nm` of a feature whose
    /// narrow side is at least `min_width_nm`.
    NearWide { min_width_nm: f64, within_nm: f64 },
    /// Line-end segments facing another feature across at most `max_gap_nm`.
    TipToTip { max_gap_nm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverRule {
    pub select: DriverSelector,
    pub mode: DriverMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hammerhead {
    pub enabled: bool,
    /// Sideways growth of each flank segment.
    pub width_nm: f64,
    /// Outward growth of the line-end segment.
    pub length_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LateralLock {
    pub enabled: bool,
    /// Lines shorter than this (long side of the bounding box) are locked.
    pub max_length_nm: f64,
}

impl Default for LateralLock {
    fn default() -> Self {
        LateralLock { enabled: true, max_length_nm: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpcConfig {
    pub focus: FocusSet,
    pub dose: f64,
    pub tol_pos: f64,
    pub tol_neg: f64,
    pub max_iterations: usize,
    /// Stop once every segment's remaining correction is at most this (nm).
    pub converge_nm: f64,
    pub gain: f64,
    pub meef_min: f64,
    pub meef_max: f64,
    pub meef_probe_nm: f64,
    /// Iterations between MEEF refreshes.
    pub meef_refresh: usize,
    /// Perturb segments this far apart in one image; 0 disables batching.
    pub meef_batch_separation_nm: f64,
    pub max_step_nm: f64,
    pub seg_length_nm: f64,
    pub search_radius_nm: f64,
    pub pixel_nm: f64,
    pub mode: EpeMode,
    pub hammerhead: Hammerhead,
    pub retarget_pullback_nm: f64,
    pub lateral_lock: LateralLock,
    pub drivers: Vec<DriverRule>,
    /// Printed-width and printed-space limits for pinch/bridge reporting.
    pub print_min_width_nm: f64,
    pub print_min_space_nm: f64,
}

impl Default for OpcConfig {
    fn default() -> Self {
        OpcConfig {
            focus: FocusSet::default(),
            dose: 1.0,
            tol_pos: 0.5,
            tol_neg: -0.5,
            max_iterations: 16,
            converge_nm: 0.2,
            gain: 1.0,
            meef_min: 0.25,
            meef_max: 4.0,
            meef_probe_nm: 1.0,
            meef_refresh: 4,
            meef_batch_separation_nm: 120.0,
            max_step_nm: 2.0,
            seg_length_nm: 20.0,
            search_radius_nm: 20.0,
            pixel_nm: 2.0,
            mode: EpeMode::ThroughFocus,
            hammerhead: Hammerhead::default(),
            retarget_pullback_nm: 1.0,
            lateral_lock: LateralLock::default(),
            drivers: Vec::new(),
            print_min_width_nm: 8.0,
            print_min_space_nm: 8.0,
        }
    }
}

impl OpcConfig {
    pub fn validate(&self) -> Result<(), OpcError> {
        self.focus.validate()?;
        let bad = |m: String| Err(OpcError::BadParameter(m));
        if !(self.tol_neg < 0.0 && 0.0 < self.tol_pos) {
            return bad(format!("need tol_neg < 0 < tol_pos, got {} / {}", self.tol_neg, self.tol_pos));
        }
        if !(self.meef_min > 0.0 && self.meef_min <= self.meef_max) {
            return bad(format!("MEEF clamp [{}, {}]", self.meef_min, self.meef_max));
        }
        if !(self.gain > 0.0 && self.gain <= 2.0) {
            return bad(format!("gain {} outside (0, 2]", self.gain));
        }
        for (name, v) in [
            ("dose", self.dose),
            ("meef_probe_nm", self.meef_probe_nm),
            ("max_step_nm", self.max_step_nm),
            ("seg_length_nm", self.seg_length_nm),
            ("search_radius_nm", self.search_radius_nm),
            ("pixel_nm", self.pixel_nm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.meef_refresh == 0 {
            return bad("meef_refresh must be at least 1".into());
        }
        if self.converge_nm < 0.0 || self.retarget_pullback_nm < 0.0 || self.meef_batch_separation_nm < 0.0 {
            return bad("negative threshold".into());
        }
        let h = &self.hammerhead;
        if h.enabled && (h.width_nm < 0.0 || h.length_nm < 0.0) {
            return bad("negative hammerhead size".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Effective EPE

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpeBranch {
    /// Best focus above tol_pos.
    Above,
    /// Best focus below tol_neg.
    Below,
    /// Best focus inside the closed window.
    Window,
}

/// Effective EPE of one segment from its (f0, fp, fn) errors. A best-focus
/// error exactly on a tolerance counts as inside the window.
pub fn effective_epe_one(epe: [f64; 3], tol_pos: f64, tol_neg: f64, driver: DriverMode, mode: EpeMode) -> (f64, EpeBranch) {
    let [f0, fp, fneg] = epe;
    if f0 > tol_pos {
        (f0 - tol_pos, EpeBranch::Above)
    } else if f0 < tol_neg {
        (f0 - tol_neg, EpeBranch::Below)
    } else {
        let avg = match (mode, driver) {
            (EpeMode::OnFocusOnly, _) => f0,
            (EpeMode::ThroughFocus, DriverMode::NoFn) => (f0 + fp) / 2.0,
            (EpeMode::ThroughFocus, _) => (f0 + fp + fneg) / 3.0,
        };
        (avg, EpeBranch::Window)
    }
}

/// Effective EPE for every segment. Slices are indexed by segment.
pub fn effective_epe(
    f0: &[f64],
    fp: &[f64],
    fneg: &[f64],
    tol_pos: f64,
    tol_neg: f64,
    drivers: &[DriverMode],
    mode: EpeMode,
) -> Vec<(f64, EpeBranch)> {
    (0..f0.len())
        .map(|i| {
            let d = drivers.get(i).copied().unwrap_or_default();
            effective_epe_one([f0[i], fp[i], fneg[i]], tol_pos, tol_neg, d, mode)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Moves

/// Controller law: `-gain * epe / meef`, clamped to `±max_step`.
pub fn propose_moves(epe_eff: &[f64], meef: &[f64], gain: f64, max_step_nm: f64) -> Vec<f64> {
    epe_eff
        .iter()
        .zip(meef)
        .map(|(&e, &m)| (-gain * e / m).clamp(-max_step_nm, max_step_nm))
        .collect()
}

/// Keep a window-branch move from carrying best focus past a tolerance.
/// Returns the clamped move and the remaining correction it represents.
pub fn window_clamp(move_nm: f64, f0: f64, meef: f64, tol_pos: f64, tol_neg: f64) -> (f64, f64) {
    let lo = (tol_neg - f0) / meef;
    let hi = (tol_pos - f0) / meef;
    let m = move_nm.clamp(lo.min(0.0), hi.max(0.0));
    (m, (m * meef).abs())
}

/// Flag the side segments of short lines. A ring is a short line when its
/// bounding box's long side is under `max_length_nm` and it has line ends.
pub fn mark_lateral_locks(mask: &mut SegmentedMask, lock: &LateralLock) {
    for s in &mut mask.segments {
        s.lateral_lock = false;
    }
    if !lock.enabled {
        return;
    }
    let limit = lock.max_length_nm * mask.dbu_per_nm;
    let has_end: Vec<bool> = (0..mask.rings.len())
        .map(|r| mask.segments.iter().any(|s| s.ring == r && s.role == SegmentRole::LineEnd))
        .collect();
    for s in &mut mask.segments {
        let r = &mask.rings[s.ring];
        let Some(b) = crate::geometry::Aabb::of_points(&r.vertices) else { continue };
        let long = b.width().max(b.height()) as f64;
        s.lateral_lock = has_end[s.ring] && long < limit && s.role != SegmentRole::LineEnd;
    }
}

/// Zero outward moves of locked side segments that border a line end: their
/// error is the tip's, and widening there bridges to neighbours.
pub fn apply_lateral_locks(mask: &SegmentedMask, moves: &mut [f64]) {
    let nb = mask.neighbours();
    for (i, s) in mask.segments.iter().enumerate() {
        if !s.lateral_lock || moves[i] <= 0.0 {
            continue;
        }
        let (p, n) = nb[i];
        if mask.segments[p].role == SegmentRole::LineEnd || mask.segments[n].role == SegmentRole::LineEnd {
            moves[i] = 0.0;
        }
    }
}

fn dist_to_box(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let dx = (lo[0] - p[0]).max(0.0).max(p[0] - hi[0]);
    let dy = (lo[1] - p[1]).max(0.0).max(p[1] - hi[1]);
    dx.hypot(dy)
}

/// Driver mode of every segment; later rules override earlier ones.
pub fn driver_modes(mask: &SegmentedMask, rules: &[DriverRule]) -> Vec<DriverMode> {
    let k = 1.0 / mask.dbu_per_nm;
    let boxes: Vec<([f64; 2], [f64; 2])> = mask
        .rings
        .iter()
        .map(|r| {
            let b = crate::geometry::Aabb::of_points(&r.vertices).expect("non-empty ring");
            ([b.lo.x as f64 * k, b.lo.y as f64 * k], [b.hi.x as f64 * k, b.hi.y as f64 * k])
        })
        .collect();
    let mut out = vec![DriverMode::Full; mask.len()];
    for rule in rules {
        for (i, s) in mask.segments.iter().enumerate() {
            let m = [(s.p0.x + s.p1.x) as f64 * k / 2.0, (s.p0.y + s.p1.y) as f64 * k / 2.0];
            let hit = match rule.select {
                DriverSelector::NearWide { min_width_nm, within_nm } => boxes.iter().enumerate().any(|(r, (lo, hi))| {
                    r != s.ring && (hi[0] - lo[0]).min(hi[1] - lo[1]) >= min_width_nm && dist_to_box(m, *lo, *hi) <= within_nm
                }),
                DriverSelector::TipToTip { max_gap_nm } => {
                    s.role == SegmentRole::LineEnd && {
                        let n = [s.normal.x as f64, s.normal.y as f64];
                        let probe = [m[0] + n[0] * max_gap_nm, m[1] + n[1] * max_gap_nm];
                        let seg = [m, probe];
                        boxes.iter().enumerate().any(|(r, (lo, hi))| {
                            r != s.ring && {
                                let (a, b) = (seg[0], seg[1]);
                                let x = (a[0].min(b[0]), a[0].max(b[0]));
                                let y = (a[1].min(b[1]), a[1].max(b[1]));
                                x.1 >= lo[0] && x.0 <= hi[0] && y.1 >= lo[1] && y.0 <= hi[1]
                            }
                        })
                    }
                }
            };
            if hit {
                out[i] = rule.mode;
            }
        }
    }
    out
}

/// Hammer-head start shape: line-end segments pushed out by `length`, the
/// segments flanking them pushed sideways by `width`, then clamped by the
/// move limiter.
pub fn hammerhead_init(mask: &SegmentedMask, head: &Hammerhead, rules: &DbuRules) -> Result<SegmentedMask, OpcError> {
    let mut out = mask.clone();
    if !head.enabled || (head.width_nm == 0.0 && head.length_nm == 0.0) {
        return Ok(out);
    }
    let to_dbu = |nm: f64| (nm * mask.dbu_per_nm).round() as Coord;
    let (len, wid) = (to_dbu(head.length_nm), to_dbu(head.width_nm));
    let nb = mask.neighbours();
    let mut proposed = vec![0 as Coord; mask.len()];
    for (i, s) in mask.segments.iter().enumerate() {
        if s.role != SegmentRole::LineEnd {
            continue;
        }
        proposed[i] = len;
        let (p, n) = nb[i];
        for f in [p, n] {
            if mask.segments[f].role != SegmentRole::LineEnd {
                proposed[f] = proposed[f].max(wid);
            }
        }
    }
    let limits = mrc::limit_moves(mask, &proposed, rules)?;
    mrc::apply_limits(&mut out, &limits);
    Ok(out)
}
