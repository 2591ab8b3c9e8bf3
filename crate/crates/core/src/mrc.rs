//! Mask rule checks and MRC-constrained move limiting.
//!
//! Geometry must be Manhattan. Interactions are classified as
//!
//! * edge-to-edge (E2E): parallel edges with opposite outward normals whose
//!   projections overlap. Normals facing each other give an external check
//!   (`Space` between rings, `Notch` within one ring); normals facing away
//!   give an internal `Width` check inside one component.
//! * corner-to-corner (C2C): convex corners lying in each other's exterior
//!   quadrant (external), or concave corners of one component lying in each
//!   other's interior quadrant (internal), unless an E2E pair already covers
//!   them.
//! * `Nub`: an edge between two convex corners; `Jog`: an edge between a
//!   convex and a concave corner. `Area`: net area of a component.
//!
//! A measured value equal to the threshold is clean. Touching or crossing
//! edges are reported with measured value 0.
//!
//! [`limit_moves`] clamps proposed segment moves in three phases: pairwise
//! budgets shared between the two segments of each interaction, a per-segment
//! minimum over those budgets, then a re-check that halves the moves of
//! segments near any remaining violation until the mask is clean. Nothing
//! depends on segment ids, so the result is invariant under relabelling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boolean::{segment_contact, SegmentContact};
use crate::bvh::{BoxF, Bvh};
use crate::geometry::{cross, dot, winding_number_doubled, Aabb, Coord, Layout, Point, Polygon};
use crate::opc::{Joint, SegmentedMask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MrcError {
    #[error("ring {0} is not Manhattan")]
    NonManhattan(usize),
    #[error("mask already violates {} rule(s), first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    PreExisting(Vec<Violation>),
    #[error("expected {expected} proposed moves, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("layer `{0}` not found")]
    MissingLayer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleKind {
    Space,
    Width,
    InternalC2C,
    ExternalC2C,
    Notch,
    Nub,
    Jog,
    Area,
}

impl RuleKind {
    pub const ALL: [RuleKind; 8] = [
        RuleKind::Space,
        RuleKind::Width,
        RuleKind::InternalC2C,
        RuleKind::ExternalC2C,
        RuleKind::Notch,
        RuleKind::Nub,
        RuleKind::Jog,
        RuleKind::Area,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Space => "space",
            RuleKind::Width => "width",
            RuleKind::InternalC2C => "internal_c2c",
            RuleKind::ExternalC2C => "external_c2c",
            RuleKind::Notch => "notch",
            RuleKind::Nub => "nub",
            RuleKind::Jog => "jog",
            RuleKind::Area => "area",
        }
    }
}

impl std::fmt::Display for RuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rule deck in nm (area in nm²). Zero disables a rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrcRuleSet {
    pub min_space: f64,
    pub min_width: f64,
    pub min_internal_c2c: f64,
    pub min_external_c2c: f64,
    pub min_notch: f64,
    pub min_nub: f64,
    pub min_jog: f64,
    pub min_area: f64,
}

impl MrcRuleSet {
    /// Thresholds in dbu, rounded up.
    pub fn to_dbu(&self, dbu_per_nm: f64) -> DbuRules {
        let d = |v: f64| (v * dbu_per_nm - 1e-9).ceil().max(0.0) as Coord;
        DbuRules {
            space: d(self.min_space),
            width: d(self.min_width),
            internal_c2c: d(self.min_internal_c2c),
            external_c2c: d(self.min_external_c2c),
            notch: d(self.min_notch),
            nub: d(self.min_nub),
            jog: d(self.min_jog),
            area: (self.min_area * dbu_per_nm * dbu_per_nm - 1e-9).ceil().max(0.0) as i128,
        }
    }
}

/// Rule thresholds in dbu (area in dbu²).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DbuRules {
    pub space: Coord,
    pub width: Coord,
    pub internal_c2c: Coord,
    pub external_c2c: Coord,
    pub notch: Coord,
    pub nub: Coord,
    pub jog: Coord,
    pub area: i128,
}

impl DbuRules {
    pub fn threshold(&self, k: RuleKind) -> f64 {
        match k {
            RuleKind::Space => self.space as f64,
            RuleKind::Width => self.width as f64,
            RuleKind::InternalC2C => self.internal_c2c as f64,
            RuleKind::ExternalC2C => self.external_c2c as f64,
            RuleKind::Notch => self.notch as f64,
            RuleKind::Nub => self.nub as f64,
            RuleKind::Jog => self.jog as f64,
            RuleKind::Area => self.area as f64,
        }
    }

    /// Largest interaction distance.
    pub fn reach(&self) -> Coord {
        [self.space, self.width, self.internal_c2c, self.external_c2c, self.notch]
            .into_iter()
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: RuleKind,
    /// dbu (dbu² for area).
    pub measured: f64,
    pub threshold: f64,
    /// Ring indices of the two participants (equal for single-feature rules).
    pub rings: [usize; 2],
    /// Edge (or vertex for C2C) indices within those rings.
    pub items: [usize; 2],
    pub location: [f64; 2],
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:.3} < {} at ({:.1}, {:.1}) rings {:?}",
            self.kind, self.measured, self.threshold, self.location[0], self.location[1], self.rings
        )
    }
}

pub const HISTOGRAM_BINS: usize = 21;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.1;

/// Measured distances divided by their threshold, binned in steps of 0.1;
/// the last bin collects everything at or above 2.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Histogram {
    pub counts: BTreeMap<RuleKind, Vec<u64>>,
    pub checks: BTreeMap<RuleKind, u64>,
}

impl Histogram {
    fn record(&mut self, kind: RuleKind, measured: f64, threshold: f64) {
        if threshold <= 0.0 {
            return;
        }
        let bin = ((measured / threshold / HISTOGRAM_BIN_WIDTH).floor() as usize).min(HISTOGRAM_BINS - 1);
        self.counts.entry(kind).or_insert_with(|| vec![0; HISTOGRAM_BINS])[bin] += 1;
        *self.checks.entry(kind).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MrcReport {
    pub violations: Vec<Violation>,
    pub histogram: Histogram,
}

impl MrcReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: RuleKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

// ---------------------------------------------------------------------------
// Geometry preprocessing

#[derive(Debug, Clone, Copy)]
struct EdgeRec {
    ring: usize,
    idx: usize,
    a: Point,
    b: Point,
    horizontal: bool,
    /// Coordinate across the edge.
    c: Coord,
    lo: Coord,
    hi: Coord,
    /// Sign of the outward normal along the across axis.
    n: Coord,
}

#[derive(Debug, Clone, Copy)]
struct CornerRec {
    ring: usize,
    idx: usize,
    p: Point,
    convex: bool,
    n_in: Point,
    n_out: Point,
    e_in: usize,
    e_out: usize,
}

fn right_normal(d: Point) -> Point {
    Point::new(d.y.signum(), -d.x.signum())
}

/// Component (outer ring id) of every ring. Holes attach to the smallest
/// counterclockwise ring containing a point just inside their material side.
pub(crate) fn components(rings: &[Polygon]) -> Vec<usize> {
    let areas: Vec<i128> = rings.iter().map(|r| r.signed_area2().unwrap_or(0)).collect();
    let boxes: Vec<Option<Aabb>> = rings.iter().map(|r| Aabb::of_points(&r.vertices)).collect();
    (0..rings.len())
        .map(|i| {
            if areas[i] >= 0 || rings[i].len() < 2 {
                return i;
            }
            let (a, b) = (rings[i].vertices[0], rings[i].vertices[1]);
            let d = b - a;
            let left = Point::new(-d.y.signum(), d.x.signum());
            let q = Point::new(2 * (a.x + b.x) + left.x, 2 * (a.y + b.y) + left.y);
            let mut best: Option<(i128, usize)> = None;
            for j in 0..rings.len() {
                if areas[j] <= 0 {
                    continue;
                }
                if let (Some(bj), Some(bi)) = (&boxes[j], &boxes[i]) {
                    if !bj.overlaps(bi) {
                        continue;
                    }
                }
                if winding_number_doubled(&rings[j], q, 4) != 0 && best.is_none_or(|(ar, _)| areas[j] < ar) {
                    best = Some((areas[j], j));
                }
            }
            best.map(|(_, j)| j).unwrap_or(i)
        })
        .collect()
}

struct Prepared {
    edges: Vec<EdgeRec>,
    corners: Vec<CornerRec>,
    comp: Vec<usize>,
    /// Index of the first edge of each ring in `edges`.
    first_edge: Vec<usize>,
}

fn prepare(rings: &[Polygon]) -> Result<Prepared, MrcError> {
    let mut edges = Vec::new();
    let mut corners = Vec::new();
    let mut first_edge = Vec::with_capacity(rings.len());
    for (ri, r) in rings.iter().enumerate() {
        if !r.is_manhattan() {
            return Err(MrcError::NonManhattan(ri));
        }
        first_edge.push(edges.len());
        let n = r.len();
        for k in 0..n {
            let (a, b) = (r.vertices[k], r.vertices[(k + 1) % n]);
            let horizontal = a.y == b.y;
            let nrm = right_normal(b - a);
            let (c, lo, hi, ns) = if horizontal {
                (a.y, a.x.min(b.x), a.x.max(b.x), nrm.y)
            } else {
                (a.x, a.y.min(b.y), a.y.max(b.y), nrm.x)
            };
            edges.push(EdgeRec { ring: ri, idx: k, a, b, horizontal, c, lo, hi, n: ns });
        }
        let base = first_edge[ri];
        for k in 0..n {
            let prev = r.vertices[(k + n - 1) % n];
            let v = r.vertices[k];
            let next = r.vertices[(k + 1) % n];
            corners.push(CornerRec {
                ring: ri,
                idx: k,
                p: v,
                convex: cross(v - prev, next - v) > 0,
                n_in: right_normal(v - prev),
                n_out: right_normal(next - v),
                e_in: base + (k + n - 1) % n,
                e_out: base + k,
            });
        }
    }
    Ok(Prepared { edges, corners, comp: components(rings), first_edge })
}

fn adjacent(p: &Prepared, e: &EdgeRec, f: &EdgeRec) -> bool {
    if e.ring != f.ring {
        return false;
    }
    let n = if e.ring + 1 < p.first_edge.len() { p.first_edge[e.ring + 1] } else { p.edges.len() } - p.first_edge[e.ring];
    (e.idx + 1) % n == f.idx || (f.idx + 1) % n == e.idx
}

/// Corner pair interaction kind, if the corners face each other and no E2E
/// pair covers them.
fn corner_pair(p: &Prepared, u: &CornerRec, v: &CornerRec) -> Option<RuleKind> {
    if u.p == v.p || u.convex != v.convex {
        return None;
    }
    let duv = v.p - u.p;
    let dvu = u.p - v.p;
    let kind = if u.convex {
        let facing = |c: &CornerRec, d: Point| dot(d, c.n_in) >= 0 && dot(d, c.n_out) >= 0;
        if !(facing(u, duv) && facing(v, dvu)) {
            return None;
        }
        RuleKind::ExternalC2C
    } else {
        if p.comp[u.ring] != p.comp[v.ring] {
            return None;
        }
        let facing = |c: &CornerRec, d: Point| dot(d, c.n_in) <= 0 && dot(d, c.n_out) <= 0;
        if !(facing(u, duv) && facing(v, dvu)) {
            return None;
        }
        RuleKind::InternalC2C
    };
    // Aligned corners whose edges overlap along the alignment are E2E.
    let pick = |c: &CornerRec, horizontal: bool| {
        let (a, b) = (&p.edges[c.e_in], &p.edges[c.e_out]);
        if a.horizontal == horizontal {
            *a
        } else {
            *b
        }
    };
    for horizontal in [true, false] {
        let aligned = if horizontal { duv.x == 0 } else { duv.y == 0 };
        if aligned {
            let (a, b) = (pick(u, horizontal), pick(v, horizontal));
            if a.hi.min(b.hi) > a.lo.max(b.lo) {
                return None;
            }
        }
    }
    Some(kind)
}

/// Check Manhattan rings against `rules`.
pub fn check_rules(rings: &[Polygon], rules: &DbuRules) -> Result<MrcReport, MrcError> {
    let p = prepare(rings)?;
    let mut report = MrcReport::default();
    if !p.edges.is_empty() {
        check_edges(&p, rules, &mut report);
        check_corners(&p, rules, &mut report);
    }
    check_features(rings, &p, rules, &mut report);
    report.violations.sort_by(|a, b| {
        (a.kind, a.rings, a.items)
            .cmp(&(b.kind, b.rings, b.items))
            .then(a.location[0].total_cmp(&b.location[0]))
            .then(a.location[1].total_cmp(&b.location[1]))
    });
    Ok(report)
}

/// Check one layer of a layout with a rule deck in nm.
pub fn check_layout(layout: &Layout, layer: &str, rules: &MrcRuleSet) -> Result<MrcReport, MrcError> {
    let polys = layout.layer(layer).ok_or_else(|| MrcError::MissingLayer(layer.to_string()))?;
    check_rules(polys, &rules.to_dbu(layout.dbu_per_nm))
}

fn check_edges(p: &Prepared, rules: &DbuRules, report: &mut MrcReport) {
    let reach = rules.space.max(rules.width).max(rules.notch) as f64;
    let boxes: Vec<BoxF> = p.edges.iter().map(|e| BoxF::from(Aabb::from_points(e.a, e.b))).collect();
    let bvh = Bvh::build(&boxes, 4).expect("non-empty");
    type Found = (Option<Violation>, Option<(RuleKind, f64, f64)>);
    let found: Vec<Found> = (0..p.edges.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let e = p.edges[i];
            let mut local = Vec::new();
            bvh.for_each_overlap(&boxes[i].expand(reach), |j| {
                if j <= i {
                    return;
                }
                let f = p.edges[j];
                local.push(edge_pair(p, rules, &e, &f));
            });
            local
        })
        .collect();
    for (v, h) in found {
        if let Some((k, m, t)) = h {
            report.histogram.record(k, m, t);
        }
        if let Some(v) = v {
            report.violations.push(v);
        }
    }
}

fn edge_pair(p: &Prepared, rules: &DbuRules, e: &EdgeRec, f: &EdgeRec) -> (Option<Violation>, Option<(RuleKind, f64, f64)>) {
    let same_comp = p.comp[e.ring] == p.comp[f.ring];
    if !adjacent(p, e, f) {
        let c = segment_contact(&crate::geometry::Edge::new(e.a, e.b), &crate::geometry::Edge::new(f.a, f.b));
        if c != SegmentContact::None {
            let kind = if e.ring == f.ring {
                RuleKind::Notch
            } else if same_comp {
                RuleKind::Width
            } else {
                RuleKind::Space
            };
            let loc = match c {
                SegmentContact::Point { x, y, .. } => [x, y],
                SegmentContact::Overlap { p, q } => [(p.x + q.x) as f64 / 2.0, (p.y + q.y) as f64 / 2.0],
                SegmentContact::None => unreachable!(),
            };
            let v = Violation {
                kind,
                measured: 0.0,
                threshold: rules.threshold(kind),
                rings: [e.ring, f.ring],
                items: [e.idx, f.idx],
                location: loc,
            };
            return (Some(v), None);
        }
    }
    if e.horizontal != f.horizontal || e.n != -f.n {
        return (None, None);
    }
    let lo = e.lo.max(f.lo);
    let hi = e.hi.min(f.hi);
    if hi <= lo {
        return (None, None);
    }
    let d = e.n * (f.c - e.c);
    let (kind, dist) = if d > 0 {
        (if e.ring == f.ring { RuleKind::Notch } else { RuleKind::Space }, d)
    } else if d < 0 && same_comp {
        (RuleKind::Width, -d)
    } else {
        return (None, None);
    };
    let t = rules.threshold(kind);
    if t <= 0.0 {
        return (None, None);
    }
    let mid_along = (lo + hi) as f64 / 2.0;
    let mid_across = (e.c + f.c) as f64 / 2.0;
    let loc = if e.horizontal { [mid_along, mid_across] } else { [mid_across, mid_along] };
    let v = ((dist as f64) < t).then_some(Violation {
        kind,
        measured: dist as f64,
        threshold: t,
        rings: [e.ring, f.ring],
        items: [e.idx, f.idx],
        location: loc,
    });
    (v, Some((kind, dist as f64, t)))
}

fn check_corners(p: &Prepared, rules: &DbuRules, report: &mut MrcReport) {
    let reach = rules.internal_c2c.max(rules.external_c2c);
    if reach == 0 || p.corners.is_empty() {
        return;
    }
    let boxes: Vec<BoxF> = p.corners.iter().map(|c| BoxF::point([c.p.x as f64, c.p.y as f64])).collect();
    let bvh = Bvh::build(&boxes, 4).expect("non-empty");
    let found: Vec<(RuleKind, f64, f64, Option<Violation>)> = (0..p.corners.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let u = p.corners[i];
            let mut local = Vec::new();
            bvh.for_each_overlap(&boxes[i].expand(reach as f64), |j| {
                if j <= i {
                    return;
                }
                let v = p.corners[j];
                let Some(kind) = corner_pair(p, &u, &v) else { return };
                let r = if kind == RuleKind::ExternalC2C { rules.external_c2c } else { rules.internal_c2c };
                if r == 0 {
                    return;
                }
                let d = v.p - u.p;
                let d2 = d.x as i128 * d.x as i128 + d.y as i128 * d.y as i128;
                let dist = (d2 as f64).sqrt();
                let viol = (d2 < r as i128 * r as i128).then(|| Violation {
                    kind,
                    measured: dist,
                    threshold: r as f64,
                    rings: [u.ring, v.ring],
                    items: [u.idx, v.idx],
                    location: [(u.p.x + v.p.x) as f64 / 2.0, (u.p.y + v.p.y) as f64 / 2.0],
                });
                local.push((kind, dist, r as f64, viol));
            });
            local
        })
        .collect();
    for (k, m, t, v) in found {
        report.histogram.record(k, m, t);
        if let Some(v) = v {
            report.violations.push(v);
        }
    }
}

fn check_features(rings: &[Polygon], p: &Prepared, rules: &DbuRules, report: &mut MrcReport) {
    for e in &p.edges {
        let n = rings[e.ring].len();
        let c0 = &p.corners[p.first_edge[e.ring] + e.idx];
        let c1 = &p.corners[p.first_edge[e.ring] + (e.idx + 1) % n];
        let kind = match (c0.convex, c1.convex) {
            (true, true) => RuleKind::Nub,
            (true, false) | (false, true) => RuleKind::Jog,
            _ => continue,
        };
        let t = rules.threshold(kind);
        if t <= 0.0 {
            continue;
        }
        let len = (e.hi - e.lo) as f64;
        report.histogram.record(kind, len, t);
        if len < t {
            report.violations.push(Violation {
                kind,
                measured: len,
                threshold: t,
                rings: [e.ring, e.ring],
                items: [e.idx, e.idx],
                location: [(e.a.x + e.b.x) as f64 / 2.0, (e.a.y + e.b.y) as f64 / 2.0],
            });
        }
    }
    if rules.area > 0 {
        let mut area2: BTreeMap<usize, i128> = BTreeMap::new();
        for (i, r) in rings.iter().enumerate() {
            *area2.entry(p.comp[i]).or_insert(0) += r.signed_area2().unwrap_or(0);
        }
        for (c, a2) in area2 {
            let area = a2 as f64 / 2.0;
            report.histogram.record(RuleKind::Area, area, rules.area as f64);
            if a2 < 2 * rules.area {
                let bb = Aabb::of_points(&rings[c].vertices).expect("non-empty ring");
                report.violations.push(Violation {
                    kind: RuleKind::Area,
                    measured: area,
                    threshold: rules.area as f64,
                    rings: [c, c],
                    items: [0, 0],
                    location: [(bb.lo.x + bb.hi.x) as f64 / 2.0, (bb.lo.y + bb.hi.y) as f64 / 2.0],
                });
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Move limiting

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoveLimit {
    pub segment: usize,
    pub proposed: Coord,
    pub allowed: Coord,
    /// Rule that bound the move and the other segment involved, if any.
    pub binding: Option<(RuleKind, Option<usize>)>,
}

/// What to do with the odd dbu when a pair budget is split evenly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OddSplit {
    /// Both sides get the floor of half; the spare dbu is left unused so
    /// the split is unchanged by any relabelling or reflection.
    #[default]
    Symmetric,
    /// The spare dbu goes to the segment with the smaller geometric key.
    LowerKey,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitOptions {
    pub odd_split: OddSplit,
    /// Cap on re-check rounds before every move is zeroed.
    pub max_rounds: usize,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions { odd_split: OddSplit::Symmetric, max_rounds: 64 }
    }
}

/// `ai * m_i + aj * m_j <= budget` (with `j == None` for single-segment limits).
#[derive(Debug, Clone, Copy)]
struct Constraint {
    i: usize,
    ai: Coord,
    j: Option<usize>,
    aj: Coord,
    budget: Coord,
    kind: RuleKind,
}

#[derive(Debug, Clone, Copy)]
struct SegGeom {
    horizontal: bool,
    c: Coord,
    lo: Coord,
    hi: Coord,
    n: Coord,
    /// Moved endpoints in ring direction.
    start: Point,
    end: Point,
}

fn segment_geometry(mask: &SegmentedMask, nb: &[(usize, usize)]) -> Vec<SegGeom> {
    let segs = &mask.segments;
    let at = |p: Point, n: Point, o: Coord| Point::new(p.x + n.x * o, p.y + n.y * o);
    (0..segs.len())
        .map(|i| {
            let s = &segs[i];
            let (pv, nx) = nb[i];
            let start = if segs[pv].edge == s.edge {
                at(s.p0, s.normal, s.offset)
            } else {
                at(at(s.p0, s.normal, s.offset), segs[pv].normal, segs[pv].offset)
            };
            let end = if segs[nx].edge == s.edge {
                at(s.p1, s.normal, s.offset)
            } else {
                at(at(s.p1, s.normal, s.offset), segs[nx].normal, segs[nx].offset)
            };
            let horizontal = s.is_horizontal();
            let (c, lo, hi, n) = if horizontal {
                (start.y, start.x.min(end.x), start.x.max(end.x), s.normal.y)
            } else {
                (start.x, start.y.min(end.y), start.y.max(end.y), s.normal.x)
            };
            SegGeom { horizontal, c, lo, hi, n, start, end }
        })
        .collect()
}

/// Corner between segment `a` and its successor `b`.
#[derive(Debug, Clone, Copy)]
struct SegCorner {
    p: Point,
    convex: bool,
    a: usize,
    b: usize,
}

fn build_constraints(
    mask: &SegmentedMask,
    nb: &[(usize, usize)],
    geo: &[SegGeom],
    comp: &[usize],
    rules: &DbuRules,
    proposed: &[Coord],
) -> Vec<Constraint> {
    let reach_extra = proposed.iter().map(|p| p.abs()).max().unwrap_or(0);
    let segs = &mask.segments;
    let n = segs.len();
    let mut out = Vec::new();
    // Both sides may move toward each other.
    let reach = rules.space.max(rules.width).max(rules.notch) + 2 * reach_extra;
    let boxes: Vec<BoxF> = geo.iter().map(|g| BoxF::from(Aabb::from_points(g.start, g.end))).collect();
    let bvh = Bvh::build(&boxes, 4).expect("non-empty");

    // Span extension of segment `s` at the end facing `dir` (+1 = high end)
    // comes from the corner neighbour there: returns (neighbour, coefficient).
    let ext = |s: usize, high: bool| -> Option<(usize, Coord)> {
        let g = &geo[s];
        let along_start = if g.horizontal { g.start.x } else { g.start.y };
        let along_end = if g.horizontal { g.end.x } else { g.end.y };
        let at_start = (along_start > along_end) == high;
        let other = if at_start { nb[s].0 } else { nb[s].1 };
        if segs[other].edge == segs[s].edge {
            return None;
        }
        let nrm = segs[other].normal;
        let comp_along = if g.horizontal { nrm.x } else { nrm.y };
        Some((other, if high { comp_along } else { -comp_along }))
    };
    // Furthest each span can grow at its (low, high) end under the proposal.
    let grow: Vec<(Coord, Coord)> = (0..n)
        .map(|s| {
            let at = |high| ext(s, high).map_or(0, |(o, c)| (c * proposed[o]).max(0));
            (at(false), at(true))
        })
        .collect();

    let pairs: Vec<Vec<Constraint>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut local = Vec::new();
            bvh.for_each_overlap(&boxes[i].expand(reach as f64), |j| {
                if j <= i {
                    return;
                }
                let (a, b) = (&geo[i], &geo[j]);
                if a.horizontal != b.horizontal || a.n != -b.n {
                    return;
                }
                if (a.lo - grow[i].0).max(b.lo - grow[j].0) >= (a.hi + grow[i].1).min(b.hi + grow[j].1) {
                    return;
                }
                let d = a.n * (b.c - a.c);
                let (kind, dist, coef) = if d > 0 {
                    let k = if segs[i].ring == segs[j].ring { RuleKind::Notch } else { RuleKind::Space };
                    (k, d, 1)
                } else if d < 0 && comp[segs[i].ring] == comp[segs[j].ring] {
                    (RuleKind::Width, -d, -1)
                } else {
                    return;
                };
                let r = rules.threshold(kind) as Coord;
                if r == 0 {
                    return;
                }
                let budget = dist - r;
                if budget >= 0 {
                    local.push(Constraint { i, ai: coef, j: Some(j), aj: coef, budget, kind });
                    return;
                }
                // Spans apart but closer than the rule: keep them apart.
                let (first, second) = if a.hi <= b.lo { (i, j) } else { (j, i) };
                let gap = geo[second].lo - geo[first].hi;
                if gap < 0 {
                    return;
                }
                match (ext(first, true), ext(second, false)) {
                    (Some((p, cp)), Some((q, cq))) => {
                        local.push(Constraint { i: p, ai: cp, j: Some(q), aj: cq, budget: gap, kind })
                    }
                    (Some((p, cp)), None) | (None, Some((p, cp))) => {
                        local.push(Constraint { i: p, ai: cp, j: None, aj: 0, budget: gap, kind })
                    }
                    (None, None) => {}
                }
            });
            local
        })
        .collect();
    out.extend(pairs.into_iter().flatten());

    // Corner-to-corner budgets, separable per axis.
    let c2c_reach = rules.internal_c2c.max(rules.external_c2c);
    if c2c_reach > 0 {
        let corners: Vec<SegCorner> = (0..n)
            .filter_map(|a| {
                let b = nb[a].1;
                if segs[a].edge == segs[b].edge {
                    return None;
                }
                Some(SegCorner { p: geo[a].end, convex: mask.joint(a, b) == Joint::Convex, a, b })
            })
            .collect();
        if !corners.is_empty() {
            let cboxes: Vec<BoxF> = corners.iter().map(|c| BoxF::point([c.p.x as f64, c.p.y as f64])).collect();
            let cbvh = Bvh::build(&cboxes, 4).expect("non-empty");
            let found: Vec<Vec<Constraint>> = (0..corners.len())
                .into_par_iter()
                .map(|ci| {
                    let mut local = Vec::new();
                    let u = corners[ci];
                    cbvh.for_each_overlap(&cboxes[ci].expand((c2c_reach + 2 * reach_extra) as f64), |cj| {
                        if cj <= ci {
                            return;
                        }
                        let v = corners[cj];
                        if u.p == v.p || u.convex != v.convex {
                            return;
                        }
                        let (kind, sign) = if u.convex {
                            (RuleKind::ExternalC2C, 1)
                        } else {
                            if comp[segs[u.a].ring] != comp[segs[v.a].ring] {
                                return;
                            }
                            (RuleKind::InternalC2C, -1)
                        };
                        let faces = |c: &SegCorner, d: Point| {
                            let (na, nb_) = (segs[c.a].normal, segs[c.b].normal);
                            sign as i128 * dot(d, na) >= 0 && sign as i128 * dot(d, nb_) >= 0
                        };
                        if !(faces(&u, v.p - u.p) && faces(&v, u.p - v.p)) {
                            return;
                        }
                        let r = if kind == RuleKind::ExternalC2C { rules.external_c2c } else { rules.internal_c2c };
                        if r == 0 {
                            return;
                        }
                        let dx = (v.p.x - u.p.x).abs();
                        let dy = (v.p.y - u.p.y).abs();
                        let d = ((dx as f64).powi(2) + (dy as f64).powi(2)).sqrt();
                        let keep = if d > r as f64 { 1.0 - r as f64 / d } else { 0.0 };
                        // The segment of a corner that moves it along x (or y).
                        let axis_seg = |c: &SegCorner, along_x: bool| {
                            if (segs[c.a].normal.x != 0) == along_x {
                                c.a
                            } else {
                                c.b
                            }
                        };
                        for (delta, along_x) in [(dx, true), (dy, false)] {
                            if delta == 0 {
                                continue;
                            }
                            let budget = if dx == 0 || dy == 0 {
                                (delta - r).max(0)
                            } else {
                                ((delta as f64) * keep - 1e-9).floor().max(0.0) as Coord
                            };
                            let (p, q) = (axis_seg(&u, along_x), axis_seg(&v, along_x));
                            if p == q {
                                local.push(Constraint { i: p, ai: 2 * sign, j: None, aj: 0, budget, kind });
                            } else {
                                local.push(Constraint { i: p, ai: sign, j: Some(q), aj: sign, budget, kind });
                            }
                        }
                    });
                    local
                })
                .collect();
            out.extend(found.into_iter().flatten());
        }
    }
    out
}

fn allocate(
    mask: &SegmentedMask,
    proposed: &[Coord],
    cons: &[Constraint],
    odd: OddSplit,
) -> (Vec<Coord>, Vec<Option<(RuleKind, Option<usize>)>>) {
    let n = proposed.len();
    let mut cap = vec![Coord::MAX; n];
    let mut bind: Vec<Option<(RuleKind, Option<usize>)>> = vec![None; n];
    let mut tighten = |s: usize, v: Coord, kind: RuleKind, other: Option<usize>, cap: &mut Vec<Coord>| {
        let better = v < cap[s]
            || (v == cap[s]
                && bind[s].is_some_and(|(k, o)| {
                    let key = |x: Option<usize>| x.map(|i| mask.segments[i].canonical_key());
                    (kind, key(other)) < (k, key(o))
                }));
        if better {
            cap[s] = v;
            bind[s] = Some((kind, other));
        }
    };
    for c in cons {
        let budget = c.budget.max(0);
        let di = (c.ai * proposed[c.i]).max(0);
        match c.j {
            None => {
                if di > 0 {
                    let share = budget / c.ai.abs();
                    tighten(c.i, share, c.kind, None, &mut cap);
                }
            }
            Some(j) => {
                let dj = (c.aj * proposed[j]).max(0);
                if di + dj <= budget {
                    continue;
                }
                let (si, sj) = if 2 * di <= budget {
                    (di, budget - di)
                } else if 2 * dj <= budget {
                    (budget - dj, dj)
                } else {
                    let half = budget / 2;
                    if budget % 2 == 1 && odd == OddSplit::LowerKey {
                        if mask.segments[c.i].canonical_key() < mask.segments[j].canonical_key() {
                            (half + 1, half)
                        } else {
                            (half, half + 1)
                        }
                    } else {
                        (half, half)
                    }
                };
                if di > 0 {
                    tighten(c.i, si, c.kind, Some(j), &mut cap);
                }
                if dj > 0 {
                    tighten(j, sj, c.kind, Some(c.i), &mut cap);
                }
            }
        }
    }
    let allowed = (0..n).map(|i| proposed[i].signum() * proposed[i].abs().min(cap[i])).collect();
    (allowed, bind)
}

/// Pull adjacent moves on one base edge together until every jog they form
/// is zero or at least `min_jog`.
fn settle_jogs(mask: &SegmentedMask, nb: &[(usize, usize)], allowed: &mut [Coord], min_jog: Coord) -> Vec<usize> {
    let mut touched = Vec::new();
    if min_jog <= 0 {
        return touched;
    }
    let segs = &mask.segments;
    loop {
        let mut next: Vec<Coord> = allowed.to_vec();
        for s in 0..segs.len() {
            let t = nb[s].1;
            if t == s || segs[t].edge != segs[s].edge {
                continue;
            }
            let fs = segs[s].offset + allowed[s];
            let ft = segs[t].offset + allowed[t];
            let jog = (fs - ft).abs();
            if jog == 0 || jog >= min_jog {
                continue;
            }
            let (a, b) = (allowed[s], allowed[t]);
            let (na, nb_) = if segs[s].offset == segs[t].offset && a.signum() == b.signum() {
                let m = a.signum() * a.abs().min(b.abs());
                (m, m)
            } else {
                (0, 0)
            };
            for (k, v) in [(s, na), (t, nb_)] {
                if v.abs() < next[k].abs() {
                    next[k] = v;
                }
            }
        }
        if next == allowed {
            break;
        }
        for (k, (&a, &b)) in next.iter().zip(allowed.iter()).enumerate() {
            if a != b {
                touched.push(k);
            }
        }
        allowed.copy_from_slice(&next);
    }
    touched.sort_unstable();
    touched.dedup();
    touched
}

/// Clamp `proposed` moves (dbu along each segment's outward normal) so the
/// moved mask is MRC clean.
pub fn limit_moves(mask: &SegmentedMask, proposed: &[Coord], rules: &DbuRules) -> Result<Vec<MoveLimit>, MrcError> {
    limit_moves_with(mask, proposed, rules, &LimitOptions::default())
}

pub fn limit_moves_with(
    mask: &SegmentedMask,
    proposed: &[Coord],
    rules: &DbuRules,
    opts: &LimitOptions,
) -> Result<Vec<MoveLimit>, MrcError> {
    let n = mask.segments.len();
    if proposed.len() != n {
        return Err(MrcError::LengthMismatch { expected: n, got: proposed.len() });
    }
    let current = mask.reconstruct();
    let pre = check_rules(&current, rules)?;
    if !pre.is_clean() {
        return Err(MrcError::PreExisting(pre.violations));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let proposed: Vec<Coord> =
        proposed.iter().zip(&mask.segments).map(|(&p, s)| if s.mobile { p } else { 0 }).collect();
    let nb = mask.neighbours();
    let geo = segment_geometry(mask, &nb);
    let comp_of_ring = components(&mask.rings);
    let cons = build_constraints(mask, &nb, &geo, &comp_of_ring, rules, &proposed);
    let (mut allowed, mut binding) = allocate(mask, &proposed, &cons, opts.odd_split);
    for k in settle_jogs(mask, &nb, &mut allowed, rules.jog) {
        binding[k] = Some((RuleKind::Jog, None));
    }

    // Phase 3: re-check and back off near whatever still fails.
    let ring_ids = mask.ring_order();
    let reach = rules.reach() as f64 + 1.0;
    for round in 0..=opts.max_rounds {
        let rings = mask.reconstruct_rings(|i| mask.segments[i].offset + allowed[i]);
        let mut base_of: Vec<usize> = Vec::new();
        let mut live: Vec<Polygon> = Vec::new();
        let mut implicated = vec![false; n];
        for (ri, r) in rings.into_iter().enumerate() {
            match r {
                Some(p) => {
                    base_of.push(ri);
                    live.push(p);
                }
                None => ring_ids[ri].iter().for_each(|&s| implicated[s] = true),
            }
        }
        let report = check_rules(&live, rules)?;
        if report.is_clean() && !implicated.iter().any(|&b| b) {
            break;
        }
        if round == opts.max_rounds {
            allowed.iter_mut().for_each(|a| *a = 0);
            break;
        }
        let comp = components(&live);
        for v in &report.violations {
            let rings_hit: Vec<usize> = if v.kind == RuleKind::Area {
                (0..live.len()).filter(|&r| comp[r] == v.rings[0]).map(|r| base_of[r]).collect()
            } else {
                vec![base_of[v.rings[0]], base_of[v.rings[1]]]
            };
            let mut any = false;
            for &r in &rings_hit {
                for &s in &ring_ids[r] {
                    let near = v.kind == RuleKind::Area || {
                        let g = mask.segments[s].clone();
                        let mut moved = g.clone();
                        moved.offset += allowed[s];
                        let (a, b) = (moved_point(&moved, true), moved_point(&moved, false));
                        BoxF::from(Aabb::from_points(a, b)).distance_to(v.location) <= reach
                    };
                    if near && allowed[s] != 0 {
                        implicated[s] = true;
                        any = true;
                    }
                }
            }
            if !any {
                for &r in &rings_hit {
                    for &s in &ring_ids[r] {
                        implicated[s] = allowed[s] != 0;
                        any |= implicated[s];
                    }
                }
            }
            if !any {
                implicated.iter_mut().zip(&allowed).for_each(|(m, &a)| *m |= a != 0);
            }
        }
        // Neighbours of implicated segments back off too.
        let mut grow = implicated.clone();
        for s in 0..n {
            if implicated[s] {
                grow[nb[s].0] = true;
                grow[nb[s].1] = true;
            }
        }
        let mut changed = false;
        for s in 0..n {
            if grow[s] && allowed[s] != 0 {
                allowed[s] /= 2;
                binding[s] = binding[s].or(Some((RuleKind::Space, None)));
                changed = true;
            }
        }
        if !changed {
            allowed.iter_mut().for_each(|a| *a = 0);
        }
        settle_jogs(mask, &nb, &mut allowed, rules.jog);
    }

    Ok((0..n)
        .map(|s| MoveLimit {
            segment: s,
            proposed: proposed[s],
            allowed: allowed[s],
            binding: if allowed[s] != proposed[s] { binding[s] } else { None },
        })
        .collect())
}

fn moved_point(s: &crate::opc::Segment, start: bool) -> Point {
    let p = if start { s.p0 } else { s.p1 };
    Point::new(p.x + s.normal.x * s.offset, p.y + s.normal.y * s.offset)
}

/// Apply allowed moves to a mask.
pub fn apply_limits(mask: &mut SegmentedMask, limits: &[MoveLimit]) {
    for l in limits {
        mask.segments[l.segment].offset += l.allowed;
    }
}
