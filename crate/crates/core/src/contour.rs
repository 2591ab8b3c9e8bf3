//! Threshold contours of a resist image, edge placement error and print
//! defects.
//!
//! Samples sit at pixel centres. The field is padded with a one-node frame
//! below threshold so every contour closes; contours run counterclockwise
//! around printed (above-threshold) regions.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::SegmentIndex;
use crate::imaging::{ImageGrid, ResistImage};
use crate::opc::SegmentedMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContourError {
    #[error("non-finite field value at sample {0}")]
    NonFinite(usize),
    #[error("field has {got} samples, grid expects {expected}")]
    GridMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, ContourError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    /// Closed polyline in nm; the last point connects back to the first.
    pub points: Vec<[f64; 2]>,
}

impl Contour {
    pub fn signed_area(&self) -> f64 {
        let p = &self.points;
        let n = p.len();
        (0..n).map(|k| p[k][0] * p[(k + 1) % n][1] - p[(k + 1) % n][0] * p[k][1]).sum::<f64>() * 0.5
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|[a, b]| (b[0] - a[0]).hypot(b[1] - a[1])).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = [[f64; 2]; 2]> + '_ {
        let n = self.points.len();
        (0..n).map(move |k| [self.points[k], self.points[(k + 1) % n]])
    }

    pub fn winding(&self, q: [f64; 2]) -> i32 {
        let mut w = 0;
        for [a, b] in self.edges() {
            let side = (b[0] - a[0]) * (q[1] - a[1]) - (q[0] - a[0]) * (b[1] - a[1]);
            if a[1] <= q[1] {
                if b[1] > q[1] && side > 0.0 {
                    w += 1;
                }
            } else if b[1] <= q[1] && side < 0.0 {
                w -= 1;
            }
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    pub grid: ImageGrid,
    pub threshold: f64,
    pub contours: Vec<Contour>,
}

impl ContourSet {
    pub fn signed_area(&self) -> f64 {
        self.contours.iter().map(Contour::signed_area).sum()
    }

    /// Whether `q` lies in printed material (nonzero winding).
    pub fn contains(&self, q: [f64; 2]) -> bool {
        self.contours.iter().map(|c| c.winding(q)).sum::<i32>() != 0
    }

    /// Every contour edge with its owning contour id.
    pub fn edges(&self) -> Vec<([[f64; 2]; 2], usize)> {
        self.contours.iter().enumerate().flat_map(|(c, k)| k.edges().map(move |e| (e, c))).collect()
    }

    /// Spatial index over all contour edges (ids follow `edges()`), or
    /// `None` when there is nothing printed.
    pub fn index(&self) -> Option<SegmentIndex> {
        let segs: Vec<_> = self.edges().into_iter().map(|(e, _)| e).collect();
        SegmentIndex::new(segs, 4).ok()
    }
}

/// Nudge exactly-at-threshold values upward so no node sits on the level.
fn perturb(v: f64, t: f64, eps: f64) -> f64 {
    if v != t {
        return v;
    }
    let p = t + eps;
    if p > t {
        p
    } else {
        t.next_up()
    }
}

/// Padded node field: `(nx + 2) x (ny + 2)`, original sample `(i, j)` at
/// padded `(i + 1, j + 1)`.
struct Padded {
    w: usize,
    h: usize,
    v: Vec<f64>,
    grid: ImageGrid,
    t: f64,
}

impl Padded {
    fn new(img: &ResistImage, t: f64) -> Result<Self> {
        let g = img.grid;
        if img.data.len() != g.len() {
            return Err(ContourError::GridMismatch { expected: g.len(), got: img.data.len() });
        }
        if let Some(k) = img.data.iter().position(|v| !v.is_finite()) {
            return Err(ContourError::NonFinite(k));
        }
        let lo = img.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let eps = 1e-12 * if range > 0.0 { range } else { t.abs().max(1.0) };
        let drop = if range > 0.0 { range } else { t.abs().max(1.0) };
        let frame = lo.min(t) - drop;
        let (w, h) = (g.nx + 2, g.ny + 2);
        let mut v = vec![frame; w * h];
        for j in 0..g.ny {
            for i in 0..g.nx {
                v[(j + 1) * w + i + 1] = perturb(img.data[j * g.nx + i], t, eps);
            }
        }
        Ok(Padded { w, h, v, grid: g, t })
    }

    fn at(&self, a: usize, b: usize) -> f64 {
        self.v[b * self.w + a]
    }

    fn pos(&self, a: usize, b: usize) -> [f64; 2] {
        let g = &self.grid;
        [
            g.origin_nm[0] + (a as f64 - 0.5) * g.pitch_nm,
            g.origin_nm[1] + (b as f64 - 0.5) * g.pitch_nm,
        ]
    }

    fn inside(&self, a: usize, b: usize) -> bool {
        self.at(a, b) > self.t
    }

    /// Edge key: horizontal edge from node (a, b) is even, vertical odd.
    fn key(&self, a: usize, b: usize, vertical: bool) -> u64 {
        2 * (b * self.w + a) as u64 + vertical as u64
    }

    fn crossing(&self, key: u64) -> [f64; 2] {
        let node = (key / 2) as usize;
        let (a, b) = (node % self.w, node / self.w);
        let (a2, b2) = if key % 2 == 1 { (a, b + 1) } else { (a + 1, b) };
        let (va, vb) = (self.at(a, b), self.at(a2, b2));
        let s = (self.t - va) / (vb - va);
        let (p, q) = (self.pos(a, b), self.pos(a2, b2));
        [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]
    }

    /// Directed segments of cell (a, b), exit crossing to entry crossing
    /// along the counterclockwise cell boundary.
    fn cell(&self, a: usize, b: usize, out: &mut Vec<(u64, u64)>) {
        let corners = [(a, b), (a + 1, b), (a + 1, b + 1), (a, b + 1)];
        let keys = [
            self.key(a, b, false),
            self.key(a + 1, b, true),
            self.key(a, b + 1, false),
            self.key(a, b, true),
        ];
        let ins: Vec<bool> = corners.iter().map(|&(x, y)| self.inside(x, y)).collect();
        // (key, is_exit) in boundary order
        let mut cx = Vec::with_capacity(4);
        for k in 0..4 {
            if ins[k] != ins[(k + 1) % 4] {
                cx.push((keys[k], ins[k]));
            }
        }
        match cx.len() {
            0 => {}
            2 => {
                let (e, n) = if cx[0].1 { (cx[0].0, cx[1].0) } else { (cx[1].0, cx[0].0) };
                out.push((e, n));
            }
            4 => {
                let mean = corners.iter().map(|&(x, y)| self.at(x, y)).sum::<f64>() / 4.0;
                let joined = mean > self.t;
                for k in 0..4 {
                    if cx[k].1 {
                        let n = if joined { cx[(k + 1) % 4].0 } else { cx[(k + 3) % 4].0 };
                        out.push((cx[k].0, n));
                    }
                }
            }
            _ => unreachable!("odd crossing count"),
        }
    }
}

/// Marching squares at `threshold`. Nodes exactly at the threshold count as
/// `threshold + 1e-12 * range`.
pub fn marching_squares(img: &ResistImage, threshold: f64) -> Result<ContourSet> {
    let f = Padded::new(img, threshold)?;
    let rows: Vec<Vec<(u64, u64)>> = (0..f.h - 1)
        .into_par_iter()
        .map(|b| {
            let mut out = Vec::new();
            for a in 0..f.w - 1 {
                f.cell(a, b, &mut out);
            }
            out
        })
        .collect();
    let next: HashMap<u64, u64> = rows.into_iter().flatten().collect();
    let mut starts: Vec<u64> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut used = std::collections::HashSet::with_capacity(starts.len());
    let mut contours = Vec::new();
    for s in starts {
        if used.contains(&s) {
            continue;
        }
        let mut pts = Vec::new();
        let mut k = s;
        loop {
            used.insert(k);
            pts.push(f.crossing(k));
            k = next[&k];
            if k == s {
                break;
            }
        }
        contours.push(Contour { points: pts });
    }
    Ok(ContourSet { grid: img.grid, threshold, contours })
}

/// Bilinear interpolant of the sample field (pixel-centre nodes), clamped to
/// the sampled hull.
pub fn bilinear(img: &ResistImage, p_nm: [f64; 2]) -> f64 {
    let g = &img.grid;
    let q = g.to_pixel(p_nm);
    let x = (q[0] - 0.5).clamp(0.0, (g.nx - 1) as f64);
    let y = (q[1] - 0.5).clamp(0.0, (g.ny - 1) as f64);
    let (i, j) = ((x.floor() as usize).min(g.nx.saturating_sub(2)), (y.floor() as usize).min(g.ny.saturating_sub(2)));
    let (fx, fy) = (x - i as f64, y - j as f64);
    let v = |a: usize, b: usize| img.data[b.min(g.ny - 1) * g.nx + a.min(g.nx - 1)];
    v(i, j) * (1.0 - fx) * (1.0 - fy) + v(i + 1, j) * fx * (1.0 - fy) + v(i, j + 1) * (1.0 - fx) * fy + v(i + 1, j + 1) * fx * fy
}

// ---------------------------------------------------------------------------
// EPE

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub focus_nm: f64,
    pub dose: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpeRecord {
    pub segment: usize,
    pub condition: Condition,
    /// Evaluation site on the target edge, nm.
    pub site_nm: [f64; 2],
    /// Signed EPE in nm, positive when the print lies outside the target.
    /// `None` when no contour crosses within the search radius.
    pub epe_nm: Option<f64>,
}

impl EpeRecord {
    pub fn is_open(&self) -> bool {
        self.epe_nm.is_none()
    }
}

/// Target midpoint (nm) and outward normal of a segment.
pub fn evaluation_site(mask: &SegmentedMask, seg: usize) -> ([f64; 2], [f64; 2]) {
    let s = &mask.segments[seg];
    let k = 0.5 / mask.dbu_per_nm;
    (
        [(s.p0.x + s.p1.x) as f64 * k, (s.p0.y + s.p1.y) as f64 * k],
        [s.normal.x as f64, s.normal.y as f64],
    )
}

fn epe_at(index: Option<&SegmentIndex>, site: [f64; 2], normal: [f64; 2], radius: f64) -> Option<f64> {
    index?.ray(site, normal, radius, true).map(|h| h.distance)
}

/// Per-segment signed EPE against the target (zero-offset) edges.
pub fn measure_epe(contours: &ContourSet, mask: &SegmentedMask, search_radius_nm: f64, condition: Condition) -> Vec<EpeRecord> {
    let index = contours.index();
    (0..mask.len())
        .into_par_iter()
        .map(|s| {
            let (site, n) = evaluation_site(mask, s);
            EpeRecord { segment: s, condition, site_nm: site, epe_nm: epe_at(index.as_ref(), site, n, search_radius_nm) }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Defects

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectKind {
    Pinch,
    Bridge,
    Pullback,
    Pushout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub kind: DefectKind,
    pub location_nm: [f64; 2],
    /// Width or space for pinch/bridge (0 for merged targets); the search
    /// radius, a lower bound, for pullback/pushout.
    pub measured_nm: f64,
    /// Target rings involved.
    pub targets: Vec<usize>,
    pub segment: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectLimits {
    pub min_width_nm: f64,
    pub min_space_nm: f64,
    pub search_radius_nm: f64,
}

/// Point well inside a counterclockwise target ring: halfway across from the
/// midpoint of its longest edge.
fn pole(mask: &SegmentedMask, ring: usize) -> Option<[f64; 2]> {
    let r = &mask.rings[ring];
    let k = 1.0 / mask.dbu_per_nm;
    let n = r.vertices.len();
    let nm = |p: crate::geometry::Point| [p.x as f64 * k, p.y as f64 * k];
    let e = (0..n).max_by_key(|&i| {
        let (a, b) = (r.vertices[i], r.vertices[(i + 1) % n]);
        ((b.x - a.x).abs() + (b.y - a.y).abs(), std::cmp::Reverse(i))
    })?;
    let (a, b) = (nm(r.vertices[e]), nm(r.vertices[(e + 1) % n]));
    let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    if len == 0.0 {
        return None;
    }
    let inward = [-(b[1] - a[1]) / len, (b[0] - a[0]) / len];
    let mut best = f64::INFINITY;
    for i in 0..n {
        if i == e {
            continue;
        }
        let s = [nm(r.vertices[i]), nm(r.vertices[(i + 1) % n])];
        if let Some(t) = crate::bvh::ray_segment_param(m, inward, &s) {
            if t > 0.0 && t < best {
                best = t;
            }
        }
    }
    best.is_finite().then(|| [m[0] + inward[0] * best / 2.0, m[1] + inward[1] * best / 2.0])
}

/// Keep the smallest measurement per neighbourhood of radius `r`.
fn suppress(mut c: Vec<Defect>, r: f64) -> Vec<Defect> {
    c.sort_by(|a, b| a.measured_nm.total_cmp(&b.measured_nm).then(a.location_nm.partial_cmp(&b.location_nm).unwrap()));
    let mut kept: Vec<Defect> = Vec::new();
    for d in c {
        let near = kept.iter().any(|k| {
            (k.location_nm[0] - d.location_nm[0]).hypot(k.location_nm[1] - d.location_nm[1]) < r
        });
        if !near {
            kept.push(d);
        }
    }
    kept
}

/// Pinch, bridge, pullback and pushout findings of one printed condition.
pub fn detect_defects(contours: &ContourSet, mask: &SegmentedMask, limits: &DefectLimits) -> Vec<Defect> {
    let mut out = Vec::new();
    let edges = contours.edges();
    let index = contours.index();

    // Target ownership of nearby material, for labelling.
    let k = 1.0 / mask.dbu_per_nm;
    let target_segs: Vec<([[f64; 2]; 2], usize)> = mask
        .rings
        .iter()
        .enumerate()
        .flat_map(|(ri, r)| {
            r.edges().map(move |e| ([[e.p0.x as f64 * k, e.p0.y as f64 * k], [e.p1.x as f64 * k, e.p1.y as f64 * k]], ri))
        })
        .collect();
    let target_index = SegmentIndex::new(target_segs.iter().map(|s| s.0).collect(), 4).ok();
    let owner = |p: [f64; 2]| {
        target_index.as_ref().and_then(|t| t.nearest(p, f64::INFINITY)).map(|h| target_segs[h.id].1)
    };

    // Width and space along contour normals.
    if let Some(ix) = &index {
        let probe = |reach: f64, inward: bool| -> Vec<Defect> {
            edges
                .par_iter()
                .enumerate()
                .filter_map(|(id, ([a, b], _))| {
                    let d = [b[0] - a[0], b[1] - a[1]];
                    let len = d[0].hypot(d[1]);
                    if len == 0.0 {
                        return None;
                    }
                    let s = if inward { 1.0 } else { -1.0 };
                    let n = [-d[1] / len * s, d[0] / len * s];
                    let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                    // start just off the edge so it does not hit itself
                    let lift = 1e-9 * contours.grid.pitch_nm;
                    let o = [m[0] + n[0] * lift, m[1] + n[1] * lift];
                    let mut hits = ix.ray(o, n, reach, false)?;
                    if hits.id == id {
                        return None;
                    }
                    hits.distance += lift;
                    let loc = [m[0] + n[0] * hits.distance / 2.0, m[1] + n[1] * hits.distance / 2.0];
                    let far = [m[0] + n[0] * hits.distance, m[1] + n[1] * hits.distance];
                    let mut t: Vec<usize> = [owner(m), owner(far)].into_iter().flatten().collect();
                    t.sort_unstable();
                    t.dedup();
                    Some(Defect {
                        kind: if inward { DefectKind::Pinch } else { DefectKind::Bridge },
                        location_nm: loc,
                        measured_nm: hits.distance,
                        targets: t,
                        segment: None,
                    })
                })
                .collect()
        };
        let r = limits.min_width_nm.max(limits.min_space_nm).max(contours.grid.pitch_nm);
        out.extend(suppress(probe(limits.min_width_nm, true).into_iter().filter(|d| d.measured_nm < limits.min_width_nm).collect(), r));
        out.extend(suppress(probe(limits.min_space_nm, false).into_iter().filter(|d| d.measured_nm < limits.min_space_nm).collect(), r));
    }

    // Distinct targets inside one printed component.
    let outers: Vec<usize> = (0..contours.contours.len()).filter(|&c| contours.contours[c].signed_area() > 0.0).collect();
    let mut groups: HashMap<usize, Vec<(usize, [f64; 2])>> = HashMap::new();
    for (ri, r) in mask.rings.iter().enumerate() {
        if !r.is_ccw() {
            continue;
        }
        let Some(p) = pole(mask, ri) else { continue };
        if !contours.contains(p) {
            continue;
        }
        let host = outers
            .iter()
            .copied()
            .filter(|&c| contours.contours[c].winding(p) != 0)
            .min_by(|&x, &y| contours.contours[x].signed_area().total_cmp(&contours.contours[y].signed_area()));
        if let Some(c) = host {
            groups.entry(c).or_default().push((ri, p));
        }
    }
    let mut merged: Vec<_> = groups.into_values().filter(|g| g.len() > 1).collect();
    merged.sort_by_key(|g| g[0].0);
    for g in merged {
        let (a, b) = (g[0].1, g[1].1);
        out.push(Defect {
            kind: DefectKind::Bridge,
            location_nm: [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
            measured_nm: 0.0,
            targets: g.iter().map(|x| x.0).collect(),
            segment: None,
        });
    }

    // Open EPE records.
    for s in 0..mask.len() {
        let (site, n) = evaluation_site(mask, s);
        if epe_at(index.as_ref(), site, n, limits.search_radius_nm).is_none() {
            out.push(Defect {
                kind: if contours.contains(site) { DefectKind::Pushout } else { DefectKind::Pullback },
                location_nm: site,
                measured_nm: limits.search_radius_nm,
                targets: vec![mask.segments[s].ring],
                segment: Some(s),
            });
        }
    }
    out
}
