//! Polygon set operations on layers.
//!
//! Every operation runs the same three stages:
//!
//! 1. **Intersections.** Edge pairs are filtered through a BVH over edge
//!    boxes, tested with exact integer orientation predicates, and the
//!    crossing points are snap rounded (Hobby) onto the grid. Every edge is
//!    then rerouted through each hot pixel it passes, which leaves a planar
//!    set of fragments that meet only at their endpoints.
//! 2. **Classification.** For each fragment the winding numbers of both
//!    operands on either side are found by shooting a ray from the fragment
//!    midpoint (a `+epsilon` shift in y breaks ties at vertices). A fragment
//!    is kept when the operation's predicate differs across it.
//! 3. **Reconstruction.** Kept fragments are oriented with the result on
//!    their left and linked into rings, always taking the first clockwise
//!    exit at a vertex. Outer rings come out counterclockwise and holes
//!    clockwise.
//!
//! Fill rule is nonzero winding throughout.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::bvh::{BoxF, Bvh};
use crate::geometry::{cross, dot, orient2d, Aabb, Coord, Edge, Point, Polygon};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BooleanError {
    #[error("{0} takes a single layer")]
    UnaryOperand(BoolOpKind),
    #[error("{0} needs two layers")]
    MissingOperand(BoolOpKind),
    #[error("unsupported boolean operation `{0}`")]
    Unsupported(String),
    #[error("sizing by {delta} exceeds the overflow guard of {guard}")]
    Overflow { delta: Coord, guard: Coord },
    #[error("snap grid must be at least 1 dbu, got {0}")]
    BadGrid(Coord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoolOpKind {
    And,
    Or,
    /// `a` minus `b`; `SUB` parses to this.
    Not,
    Xor,
    Heal,
    Size,
    Touch,
}

impl std::fmt::Display for BoolOpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BoolOpKind::And => "AND",
            BoolOpKind::Or => "OR",
            BoolOpKind::Not => "NOT",
            BoolOpKind::Xor => "XOR",
            BoolOpKind::Heal => "HEAL",
            BoolOpKind::Size => "SIZE",
            BoolOpKind::Touch => "TOUCH",
        };
        f.write_str(s)
    }
}

impl FromStr for BoolOpKind {
    type Err = BooleanError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "AND" => BoolOpKind::And,
            "OR" => BoolOpKind::Or,
            "NOT" | "SUB" => BoolOpKind::Not,
            "XOR" => BoolOpKind::Xor,
            "HEAL" => BoolOpKind::Heal,
            "SIZE" => BoolOpKind::Size,
            "TOUCH" => BoolOpKind::Touch,
            _ => return Err(BooleanError::Unsupported(s.to_string())),
        })
    }
}

impl BoolOpKind {
    pub const ALL: [BoolOpKind; 7] = [
        BoolOpKind::And,
        BoolOpKind::Or,
        BoolOpKind::Not,
        BoolOpKind::Xor,
        BoolOpKind::Heal,
        BoolOpKind::Size,
        BoolOpKind::Touch,
    ];

    pub fn is_unary(self) -> bool {
        matches!(self, BoolOpKind::Heal | BoolOpKind::Size)
    }

    fn predicate(self) -> fn(bool, bool) -> bool {
        match self {
            BoolOpKind::And => |a, b| a && b,
            BoolOpKind::Or => |a, b| a || b,
            BoolOpKind::Not => |a, b| a && !b,
            BoolOpKind::Xor => |a, b| a != b,
            _ => |a, _| a,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoolOptions {
    /// Snap-rounding grid in dbu.
    pub grid: Coord,
    /// Offset applied by `SIZE`.
    pub size_delta: Coord,
    /// Miter length limit as a multiple of |delta|.
    pub miter_limit: f64,
    /// Largest |delta| accepted by `SIZE`.
    pub overflow_guard: Coord,
}

impl Default for BoolOptions {
    fn default() -> Self {
        BoolOptions { grid: 1, size_delta: 0, miter_limit: 2.0, overflow_guard: 1 << 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionEvent {
    pub edge_a: usize,
    pub edge_b: usize,
    /// Snapped location.
    pub point: Point,
    pub t_a: f64,
    pub t_b: f64,
}

/// Relationship between two closed segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentContact {
    None,
    /// Single contact. `exact` is set when the point is a segment endpoint;
    /// `rational` holds a proper crossing as `(num_x, num_y) / den` when it
    /// fits in 128 bits.
    Point { x: f64, y: f64, t_a: f64, t_b: f64, exact: Option<Point>, rational: Option<([i128; 2], i128)> },
    /// Collinear overlap between two endpoints.
    Overlap { p: Point, q: Point },
}

fn param_on(e: &Edge, p: Point) -> f64 {
    let d = e.dir();
    let len2 = dot(d, d);
    if len2 == 0 {
        0.0
    } else {
        dot(p - e.p0, d) as f64 / len2 as f64
    }
}

/// Exact contact classification of two segments.
pub fn segment_contact(a: &Edge, b: &Edge) -> SegmentContact {
    if !a.bbox().overlaps(&b.bbox()) {
        return SegmentContact::None;
    }
    let o1 = orient2d(a.p0, a.p1, b.p0);
    let o2 = orient2d(a.p0, a.p1, b.p1);
    let o3 = orient2d(b.p0, b.p1, a.p0);
    let o4 = orient2d(b.p0, b.p1, a.p1);
    if o1 == 0 && o2 == 0 {
        // Collinear: overlap of projections onto the dominant axis.
        let d = a.dir();
        let key = |p: Point| if d.x.abs() >= d.y.abs() { (p.x, p.y) } else { (p.y, p.x) };
        let (a0, a1) = if key(a.p0) <= key(a.p1) { (a.p0, a.p1) } else { (a.p1, a.p0) };
        let (b0, b1) = if key(b.p0) <= key(b.p1) { (b.p0, b.p1) } else { (b.p1, b.p0) };
        let lo = if key(a0) >= key(b0) { a0 } else { b0 };
        let hi = if key(a1) <= key(b1) { a1 } else { b1 };
        return match key(lo).cmp(&key(hi)) {
            std::cmp::Ordering::Greater => SegmentContact::None,
            std::cmp::Ordering::Equal => SegmentContact::Point {
                x: lo.x as f64,
                y: lo.y as f64,
                t_a: param_on(a, lo),
                t_b: param_on(b, lo),
                exact: Some(lo),
                rational: None,
            },
            std::cmp::Ordering::Less => SegmentContact::Overlap { p: lo, q: hi },
        };
    }
    let straddle = |u: i128, v: i128| (u <= 0 && v >= 0) || (u >= 0 && v <= 0);
    if !(straddle(o1, o2) && straddle(o3, o4)) {
        return SegmentContact::None;
    }
    let exact = if o1 == 0 {
        Some(b.p0)
    } else if o2 == 0 {
        Some(b.p1)
    } else if o3 == 0 {
        Some(a.p0)
    } else if o4 == 0 {
        Some(a.p1)
    } else {
        None
    };
    if let Some(p) = exact {
        return SegmentContact::Point {
            x: p.x as f64,
            y: p.y as f64,
            t_a: param_on(a, p),
            t_b: param_on(b, p),
            exact: Some(p),
            rational: None,
        };
    }
    let t_a = o3 as f64 / (o3 - o4) as f64;
    let t_b = o1 as f64 / (o1 - o2) as f64;
    let d = a.dir();
    let x = a.p0.x as f64 + t_a * d.x as f64;
    let y = a.p0.y as f64 + t_a * d.y as f64;
    let (num, den) = if o3 > o4 { (o3, o3 - o4) } else { (-o3, o4 - o3) };
    let coord = |p0: Coord, dd: Coord| (p0 as i128).checked_mul(den)?.checked_add(num.checked_mul(dd as i128)?);
    let rational = coord(a.p0.x, d.x).zip(coord(a.p0.y, d.y)).map(|(nx, ny)| ([nx, ny], den));
    SegmentContact::Point { x, y, t_a, t_b, exact: None, rational }
}

/// `n / d` rounded half away from zero, `d > 0`.
fn round_div(n: i128, d: i128) -> i128 {
    let q = (2 * n.abs() + d) / (2 * d);
    if n < 0 {
        -q
    } else {
        q
    }
}

fn round_half_away(v: f64) -> f64 {
    // f64::round rounds half away from zero.
    v.round()
}

/// Snap a real point onto the grid, rounding half away from zero.
pub fn snap_point(x: f64, y: f64, grid: Coord) -> Point {
    let g = grid as f64;
    Point::new((round_half_away(x / g) * g) as Coord, (round_half_away(y / g) * g) as Coord)
}

fn contact_events(ia: usize, ib: usize, a: &Edge, b: &Edge, grid: Coord, out: &mut Vec<IntersectionEvent>) {
    match segment_contact(a, b) {
        SegmentContact::None => {}
        SegmentContact::Point { x, y, t_a, t_b, exact, rational } => out.push(IntersectionEvent {
            edge_a: ia,
            edge_b: ib,
            point: exact.unwrap_or_else(|| match rational.and_then(|(n, d)| Some((n, d.checked_mul(grid as i128)?))) {
                Some((n, gd)) if n[0].checked_mul(2).is_some() && n[1].checked_mul(2).is_some() => Point::new(
                    (round_div(n[0], gd) * grid as i128) as Coord,
                    (round_div(n[1], gd) * grid as i128) as Coord,
                ),
                _ => snap_point(x, y, grid),
            }),
            t_a,
            t_b,
        }),
        SegmentContact::Overlap { p, q } => {
            for pt in [p, q] {
                out.push(IntersectionEvent {
                    edge_a: ia,
                    edge_b: ib,
                    point: pt,
                    t_a: param_on(a, pt),
                    t_b: param_on(b, pt),
                });
            }
        }
    }
}

fn sort_events(ev: &mut [IntersectionEvent]) {
    ev.sort_by(|p, q| {
        (p.edge_a, p.edge_b)
            .cmp(&(q.edge_a, q.edge_b))
            .then(p.t_a.total_cmp(&q.t_a))
            .then(p.point.cmp(&q.point))
    });
}

fn edge_boxes(edges: &[Edge]) -> Vec<BoxF> {
    edges.iter().map(|e| BoxF::from(e.bbox())).collect()
}

/// All crossing or touching pairs between two edge sets, ordered by
/// `(edge_a, edge_b, t_a)`.
pub fn find_intersections(edges_a: &[Edge], edges_b: &[Edge], grid: Coord) -> Vec<IntersectionEvent> {
    if edges_a.is_empty() || edges_b.is_empty() {
        return Vec::new();
    }
    let bvh = Bvh::build(&edge_boxes(edges_b), 4).expect("non-empty");
    let mut ev: Vec<IntersectionEvent> = edges_a
        .par_iter()
        .enumerate()
        .flat_map_iter(|(ia, a)| {
            let mut local = Vec::new();
            bvh.for_each_overlap(&BoxF::from(a.bbox()), |ib| {
                contact_events(ia, ib, a, &edges_b[ib], grid, &mut local)
            });
            local
        })
        .collect();
    sort_events(&mut ev);
    ev
}

/// Crossing or touching pairs `i < j` within one edge set.
pub fn find_self_intersections(edges: &[Edge], grid: Coord) -> Vec<IntersectionEvent> {
    if edges.is_empty() {
        return Vec::new();
    }
    let bvh = Bvh::build(&edge_boxes(edges), 4).expect("non-empty");
    let mut ev: Vec<IntersectionEvent> = edges
        .par_iter()
        .enumerate()
        .flat_map_iter(|(ia, a)| {
            let mut local = Vec::new();
            bvh.for_each_overlap(&BoxF::from(a.bbox()), |ib| {
                if ib > ia {
                    contact_events(ia, ib, a, &edges[ib], grid, &mut local)
                }
            });
            local
        })
        .collect();
    sort_events(&mut ev);
    ev
}

// ---------------------------------------------------------------------------
// Snap rounding

/// Bound on the segment parameter, `num / den` with `den > 0`.
#[derive(Clone, Copy)]
struct TBound {
    num: i128,
    den: i128,
    strict: bool,
}

impl TBound {
    fn cmp_value(&self, o: &TBound) -> std::cmp::Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }
}

/// Does the segment `a -> b` (doubled coordinates) meet the hot pixel of
/// grid point `c`? Pixels follow the snapping rule: a point belongs to the
/// pixel it rounds to (half away from zero), so boundaries facing the origin
/// are closed and the others open.
fn segment_hits_pixel(a: Point, b: Point, c: Point, grid: Coord) -> bool {
    let mut lo = TBound { num: 0, den: 1, strict: false };
    let mut hi = TBound { num: 1, den: 1, strict: false };
    for axis in 0..2 {
        let (pa, pb, pc) = if axis == 0 { (a.x, b.x, c.x) } else { (a.y, b.y, c.y) };
        let (pa, d) = (pa as i128, (pb - pa) as i128);
        let lo_v = (2 * pc - grid) as i128;
        let hi_v = (2 * pc + grid) as i128;
        // Rounding half away from zero: x == c - g/2 goes to c when c > 0.
        let lo_closed = pc > 0;
        let hi_closed = pc < 0;
        if d == 0 {
            let ok_lo = if lo_closed { pa >= lo_v } else { pa > lo_v };
            let ok_hi = if hi_closed { pa <= hi_v } else { pa < hi_v };
            if !(ok_lo && ok_hi) {
                return false;
            }
            continue;
        }
        let (l, h) = if d > 0 {
            (
                TBound { num: lo_v - pa, den: d, strict: !lo_closed },
                TBound { num: hi_v - pa, den: d, strict: !hi_closed },
            )
        } else {
            (
                TBound { num: pa - hi_v, den: -d, strict: !hi_closed },
                TBound { num: pa - lo_v, den: -d, strict: !lo_closed },
            )
        };
        match l.cmp_value(&lo) {
            std::cmp::Ordering::Greater => lo = l,
            std::cmp::Ordering::Equal => lo.strict |= l.strict,
            _ => {}
        }
        match h.cmp_value(&hi) {
            std::cmp::Ordering::Less => hi = h,
            std::cmp::Ordering::Equal => hi.strict |= h.strict,
            _ => {}
        }
    }
    match lo.cmp_value(&hi) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Equal => !lo.strict && !hi.strict,
        std::cmp::Ordering::Greater => false,
    }
}

pub struct HotPixels {
    pub centers: Vec<Point>,
    pub grid: Coord,
    bvh: Option<Bvh>,
}

impl HotPixels {
    pub fn new(mut centers: Vec<Point>, grid: Coord) -> Self {
        centers.sort_unstable();
        centers.dedup();
        let half = grid as f64 / 2.0;
        let boxes: Vec<BoxF> = centers
            .iter()
            .map(|c| BoxF::new([c.x as f64 - half, c.y as f64 - half], [c.x as f64 + half, c.y as f64 + half]))
            .collect();
        let bvh = if boxes.is_empty() { None } else { Some(Bvh::build(&boxes, 4).expect("non-empty")) };
        HotPixels { centers, grid, bvh }
    }

    /// Route `a -> b` through every hot pixel it meets, in order along the
    /// segment. Endpoints must themselves be hot pixel centers.
    fn route(&self, a: Point, b: Point) -> Vec<Point> {
        let mut hits: Vec<Point> = Vec::new();
        if let Some(bvh) = &self.bvh {
            let q = BoxF::from(Aabb::from_points(a, b));
            let a2 = Point::new(2 * a.x, 2 * a.y);
            let b2 = Point::new(2 * b.x, 2 * b.y);
            bvh.for_each_overlap(&q, |i| {
                let c = self.centers[i];
                if segment_hits_pixel(a2, b2, c, self.grid) {
                    hits.push(c);
                }
            });
        }
        let d = b - a;
        hits.sort_by_key(|c| (dot(*c - a, d), *c));
        let mut out = Vec::with_capacity(hits.len() + 2);
        out.push(a);
        for h in hits {
            if out.last() != Some(&h) {
                out.push(h);
            }
        }
        if out.last() != Some(&b) {
            out.push(b);
        }
        out
    }
}

/// Snap round `segments`: endpoints and `extra_hot` points (already on the
/// grid) define the hot pixels. Returns one polyline per input segment whose
/// vertices are hot pixel centers. Rerouting is repeated on the fragments
/// until no fragment passes through a hot pixel it is not broken at.
pub fn snap_round(segments: &[Edge], extra_hot: &[Point], grid: Coord) -> (HotPixels, Vec<Vec<Point>>) {
    let snap = |p: Point| snap_point(p.x as f64, p.y as f64, grid);
    let mut centers: Vec<Point> = segments.iter().flat_map(|e| [snap(e.p0), snap(e.p1)]).collect();
    centers.extend(extra_hot.iter().map(|p| snap(*p)));
    let hot = HotPixels::new(centers, grid);
    let lines: Vec<Vec<Point>> = segments
        .par_iter()
        .map(|e| {
            let mut line = hot.route(snap(e.p0), snap(e.p1));
            loop {
                let mut next: Vec<Point> = vec![line[0]];
                for w in line.windows(2) {
                    if w[0] == w[1] {
                        continue;
                    }
                    let r = hot.route(w[0], w[1]);
                    for p in r.into_iter().skip(1) {
                        if next.last() != Some(&p) {
                            next.push(p);
                        }
                    }
                }
                if next == line {
                    break;
                }
                line = next;
            }
            line
        })
        .collect();
    (hot, lines)
}

// ---------------------------------------------------------------------------
// Overlay and classification

#[derive(Debug, Clone)]
struct Fragment {
    u: Point,
    v: Point,
    /// Net number of operand edges running u -> v.
    count: [i32; 2],
}

struct Overlay {
    fragments: Vec<Fragment>,
}

fn collect_edges(layers: &[&[Polygon]]) -> (Vec<Edge>, Vec<usize>) {
    let mut edges = Vec::new();
    let mut owner = Vec::new();
    for (k, polys) in layers.iter().enumerate() {
        for p in polys.iter() {
            for e in p.edges() {
                if !e.is_degenerate() {
                    edges.push(e);
                    owner.push(k);
                }
            }
        }
    }
    (edges, owner)
}

fn build_overlay(layers: &[&[Polygon]], grid: Coord) -> Overlay {
    let (edges, owner) = collect_edges(layers);
    let events = find_self_intersections(&edges, grid);
    let extra: Vec<Point> = events.iter().map(|e| e.point).collect();
    let (_, lines) = snap_round(&edges, &extra, grid);
    let mut map: BTreeMap<(Point, Point), [i32; 2]> = BTreeMap::new();
    for (line, &k) in lines.iter().zip(&owner) {
        for w in line.windows(2) {
            let (p, q) = (w[0], w[1]);
            if p == q {
                continue;
            }
            let (key, s) = if p < q { ((p, q), 1) } else { ((q, p), -1) };
            map.entry(key).or_insert([0, 0])[k] += s;
        }
    }
    let fragments = map
        .into_iter()
        .filter(|(_, c)| c[0] != 0 || c[1] != 0)
        .map(|((u, v), count)| Fragment { u, v, count })
        .collect();
    Overlay { fragments }
}

impl Overlay {
    /// Winding numbers (per operand) on the left and right of every fragment.
    fn side_windings(&self) -> Vec<([i32; 2], [i32; 2])> {
        if self.fragments.is_empty() {
            return Vec::new();
        }
        let boxes: Vec<BoxF> = self
            .fragments
            .iter()
            .map(|f| BoxF::from(Aabb::from_points(f.u, f.v)))
            .collect();
        let bvh = Bvh::build(&boxes, 4).expect("non-empty");
        let xmax = bvh.scene_bounds.max[0];
        self.fragments
            .par_iter()
            .enumerate()
            .map(|(fi, f)| {
                // Doubled coordinates keep the midpoint integral.
                let m = Point::new(f.u.x + f.v.x, f.u.y + f.v.y);
                let my = m.y as f64 / 2.0;
                let q = BoxF::new([m.x as f64 / 2.0, my], [xmax, my]);
                let mut w = [0i32; 2];
                bvh.for_each_overlap(&q, |gi| {
                    if gi == fi {
                        return;
                    }
                    let g = &self.fragments[gi];
                    let gu = Point::new(2 * g.u.x, 2 * g.u.y);
                    let gv = Point::new(2 * g.v.x, 2 * g.v.y);
                    let (lo, hi, upward) = if gu.y < gv.y { (gu, gv, true) } else { (gv, gu, false) };
                    if !(lo.y <= m.y && m.y < hi.y) {
                        return;
                    }
                    let o = orient2d(lo, hi, m);
                    debug_assert!(o != 0, "fragment midpoint lies on another fragment");
                    if o > 0 {
                        let s = if upward { 1 } else { -1 };
                        w[0] += s * g.count[0];
                        w[1] += s * g.count[1];
                    }
                });
                let c = f.count;
                let add = |a: [i32; 2], s: i32| [a[0] + s * c[0], a[1] + s * c[1]];
                if f.u.y < f.v.y {
                    // upward: the ray leaves from the right side
                    (add(w, 1), w)
                } else {
                    // downward or horizontal (u.x < v.x): evaluated on the left
                    (w, add(w, -1))
                }
            })
            .collect()
    }
}

/// Angular order for "first clockwise from `back`" at a vertex.
fn cw_rank(back: Point, d: Point) -> (u8, Point) {
    let c = cross(back, d);
    let half = if c < 0 {
        0
    } else if c == 0 && dot(back, d) < 0 {
        1
    } else if c > 0 {
        2
    } else {
        3
    };
    (half, d)
}

fn first_clockwise(back: Point, cands: &[Point]) -> usize {
    let mut best = 0;
    for i in 1..cands.len() {
        let (hb, db) = cw_rank(back, cands[best]);
        let (hi, di) = cw_rank(back, cands[i]);
        let better = hi < hb || (hi == hb && cross(db, di) < 0);
        if better {
            best = i;
        }
    }
    best
}

fn link_rings(directed: Vec<(Point, Point)>) -> Vec<Polygon> {
    let mut out_edges: HashMap<Point, Vec<usize>> = HashMap::new();
    for (i, (u, _)) in directed.iter().enumerate() {
        out_edges.entry(*u).or_default().push(i);
    }
    let mut used = vec![false; directed.len()];
    let mut rings = Vec::new();
    for start in 0..directed.len() {
        if used[start] {
            continue;
        }
        let mut ring = Vec::new();
        let mut cur = start;
        loop {
            used[cur] = true;
            let (u, v) = directed[cur];
            ring.push(u);
            let back = u - v;
            let cands: Vec<usize> = out_edges
                .get(&v)
                .map(|l| l.iter().copied().filter(|&e| !used[e] || e == start).collect())
                .unwrap_or_default();
            if cands.is_empty() {
                break;
            }
            let dirs: Vec<Point> = cands.iter().map(|&e| directed[e].1 - v).collect();
            let next = cands[first_clockwise(back, &dirs)];
            if next == start {
                break;
            }
            cur = next;
        }
        if let Some(p) = Polygon::new(ring).normalized() {
            rings.push(p);
        }
    }
    rings.sort();
    rings
}

fn overlay_op(layers: &[&[Polygon]], pred: impl Fn(bool, bool) -> bool + Sync, grid: Coord) -> Vec<Polygon> {
    let ov = build_overlay(layers, grid);
    let sides = ov.side_windings();
    let inside = |w: [i32; 2]| pred(w[0] != 0, w[1] != 0);
    let directed: Vec<(Point, Point)> = ov
        .fragments
        .iter()
        .zip(&sides)
        .filter_map(|(f, (l, r))| match (inside(*l), inside(*r)) {
            (true, false) => Some((f.u, f.v)),
            (false, true) => Some((f.v, f.u)),
            _ => None,
        })
        .collect();
    link_rings(directed)
}

// ---------------------------------------------------------------------------
// Public operations

fn check_grid(g: Coord) -> Result<(), BooleanError> {
    if g < 1 {
        Err(BooleanError::BadGrid(g))
    } else {
        Ok(())
    }
}

pub fn boolean(
    op: BoolOpKind,
    a: &[Polygon],
    b: Option<&[Polygon]>,
    opts: &BoolOptions,
) -> Result<Vec<Polygon>, BooleanError> {
    check_grid(opts.grid)?;
    match (op.is_unary(), b) {
        (true, Some(_)) => return Err(BooleanError::UnaryOperand(op)),
        (false, None) => return Err(BooleanError::MissingOperand(op)),
        _ => {}
    }
    match op {
        BoolOpKind::Heal => Ok(overlay_op(&[a], |x, _| x, opts.grid)),
        BoolOpKind::Size => size(a, opts.size_delta, opts),
        BoolOpKind::Touch => Ok(touch(a, b.unwrap_or(&[]), opts.grid)),
        _ => Ok(overlay_op(&[a, b.unwrap_or(&[])], op.predicate(), opts.grid)),
    }
}

pub fn heal(a: &[Polygon]) -> Vec<Polygon> {
    overlay_op(&[a], |x, _| x, 1)
}

pub fn and(a: &[Polygon], b: &[Polygon]) -> Vec<Polygon> {
    overlay_op(&[a, b], |x, y| x && y, 1)
}

pub fn or(a: &[Polygon], b: &[Polygon]) -> Vec<Polygon> {
    overlay_op(&[a, b], |x, y| x || y, 1)
}

pub fn not(a: &[Polygon], b: &[Polygon]) -> Vec<Polygon> {
    overlay_op(&[a, b], |x, y| x && !y, 1)
}

pub fn xor(a: &[Polygon], b: &[Polygon]) -> Vec<Polygon> {
    overlay_op(&[a, b], |x, y| x != y, 1)
}

/// Polygons of `a` whose closed region meets the region of `b`; contact
/// along an edge or at a single point counts. Each selected polygon is
/// returned whole, as its own healed rings.
pub fn touch(a: &[Polygon], b: &[Polygon], grid: Coord) -> Vec<Polygon> {
    let b_region = overlay_op(&[b], |x, _| x, grid);
    if b_region.is_empty() {
        return Vec::new();
    }
    let b_edges: Vec<Edge> = b_region.iter().flat_map(|p| p.edges()).collect();
    let bvh = Bvh::build(&edge_boxes(&b_edges), 4).expect("non-empty");
    let in_b = |p: Point| b_region.iter().map(|q| q.winding_number(p)).sum::<i32>() != 0;
    let mut out: Vec<Polygon> = a
        .par_iter()
        .filter_map(|poly| {
            let own = overlay_op(&[std::slice::from_ref(poly)], |x, _| x, grid);
            if own.is_empty() {
                return None;
            }
            let mut hit = false;
            'outer: for ring in &own {
                for e in ring.edges() {
                    let mut found = false;
                    bvh.for_each_overlap(&BoxF::from(e.bbox()), |i| {
                        if !found && segment_contact(&e, &b_edges[i]) != SegmentContact::None {
                            found = true;
                        }
                    });
                    if found {
                        hit = true;
                        break 'outer;
                    }
                }
            }
            if !hit {
                let in_own = |p: Point| own.iter().map(|q| q.winding_number(p)).sum::<i32>() != 0;
                hit = in_b(own[0].vertices[0]) || b_region.iter().any(|q| in_own(q.vertices[0]));
            }
            hit.then_some(own)
        })
        .flatten()
        .collect();
    out.sort();
    out
}

fn unit_normal_right(d: (f64, f64)) -> (f64, f64) {
    let len = d.0.hypot(d.1);
    (d.1 / len, -d.0 / len)
}

fn offset_point(p: Point, n: (f64, f64), delta: f64) -> Point {
    Point::new(
        (p.x as f64 + n.0 * delta).round() as Coord,
        (p.y as f64 + n.1 * delta).round() as Coord,
    )
}

/// Outward offset of a healed layer: union of the layer, one quad per edge
/// and a (possibly clipped) miter wedge per convex vertex.
fn dilate(healed: &[Polygon], delta: Coord, miter_limit: f64, grid: Coord) -> Vec<Polygon> {
    let df = delta as f64;
    let limit = miter_limit * df;
    let mut pieces: Vec<Polygon> = healed.to_vec();
    for ring in healed {
        let n = ring.vertices.len();
        for i in 0..n {
            let p0 = ring.vertices[i];
            let p1 = ring.vertices[(i + 1) % n];
            let d = p1 - p0;
            let nr = unit_normal_right((d.x as f64, d.y as f64));
            pieces.push(Polygon::new(vec![p0, offset_point(p0, nr, df), offset_point(p1, nr, df), p1]));

            let p2 = ring.vertices[(i + 2) % n];
            let d2 = p2 - p1;
            if cross(d, d2) <= 0 {
                continue;
            }
            let n2 = unit_normal_right((d2.x as f64, d2.y as f64));
            let a = offset_point(p1, nr, df);
            let b = offset_point(p1, n2, df);
            let bis = (nr.0 + n2.0, nr.1 + n2.1);
            let cosh = 1.0 + nr.0 * n2.0 + nr.1 * n2.1;
            let miter_len = df * (2.0 / cosh).sqrt();
            if miter_len <= limit + 1e-9 {
                let m = Point::new(
                    (p1.x as f64 + df * bis.0 / cosh).round() as Coord,
                    (p1.y as f64 + df * bis.1 / cosh).round() as Coord,
                );
                pieces.push(Polygon::new(vec![p1, a, m, b]));
            } else {
                let bl = bis.0.hypot(bis.1);
                let u = (bis.0 / bl, bis.1 / bl);
                let l1 = d.x as f64 / (d.x as f64).hypot(d.y as f64);
                let l1 = (l1, d.y as f64 / (d.x as f64).hypot(d.y as f64));
                let l2n = (d2.x as f64).hypot(d2.y as f64);
                let l2 = (d2.x as f64 / l2n, d2.y as f64 / l2n);
                let s1 = (limit - df * (nr.0 * u.0 + nr.1 * u.1)) / (l1.0 * u.0 + l1.1 * u.1);
                let s2 = (limit - df * (n2.0 * u.0 + n2.1 * u.1)) / (-(l2.0 * u.0 + l2.1 * u.1));
                let c1 = Point::new(
                    (p1.x as f64 + df * nr.0 + s1 * l1.0).round() as Coord,
                    (p1.y as f64 + df * nr.1 + s1 * l1.1).round() as Coord,
                );
                let c2 = Point::new(
                    (p1.x as f64 + df * n2.0 - s2 * l2.0).round() as Coord,
                    (p1.y as f64 + df * n2.1 - s2 * l2.1).round() as Coord,
                );
                pieces.push(Polygon::new(vec![p1, a, c1, c2, b]));
            }
        }
    }
    overlay_op(&[&pieces], |x, _| x, grid)
}

/// Offset by `delta` (positive grows) with miter joins clamped at
/// `miter_limit * |delta|`, followed by a heal.
pub fn size(a: &[Polygon], delta: Coord, opts: &BoolOptions) -> Result<Vec<Polygon>, BooleanError> {
    check_grid(opts.grid)?;
    if delta.abs() > opts.overflow_guard {
        return Err(BooleanError::Overflow { delta, guard: opts.overflow_guard });
    }
    let healed = overlay_op(&[a], |x, _| x, opts.grid);
    if delta == 0 || healed.is_empty() {
        return Ok(healed);
    }
    if delta > 0 {
        return Ok(dilate(&healed, delta, opts.miter_limit, opts.grid));
    }
    let d = -delta;
    let bb = Aabb::of_points(healed.iter().flat_map(|p| p.vertices.iter())).expect("non-empty");
    let frame = vec![bb.expand(d + opts.grid).to_polygon()];
    let complement = overlay_op(&[&frame, &healed], |x, y| x && !y, opts.grid);
    let grown = dilate(&complement, d, opts.miter_limit, opts.grid);
    Ok(overlay_op(&[&healed, &grown], |x, y| x && !y, opts.grid))
}
