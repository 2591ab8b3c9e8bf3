//! Movable edge segments and their reconstruction into polygons.

use serde::{Deserialize, Serialize};

use crate::boolean;
use crate::geometry::{cross, Coord, Layout, Point, Polygon};

use super::OpcError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentRole {
    LineSide,
    LineEnd,
    Corner,
}

/// Kind of vertex between two consecutive segments of a ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Joint {
    /// Both segments lie on the same base edge; offsets differing insert a jog.
    Jog,
    Convex,
    Concave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub ring: usize,
    /// Position of the segment along its ring.
    pub order: usize,
    /// Edge of the base ring the segment lies on.
    pub edge: usize,
    /// Base endpoints, in ring direction.
    pub p0: Point,
    pub p1: Point,
    /// Outward unit normal, axis-aligned.
    pub normal: Point,
    /// Current displacement along `normal`, in dbu.
    pub offset: Coord,
    pub role: SegmentRole,
    pub mobile: bool,
    /// Set on side segments of short lines whose end correction must not
    /// come from lateral movement.
    pub lateral_lock: bool,
}

impl Segment {
    pub fn length(&self) -> Coord {
        (self.p1.x - self.p0.x).abs() + (self.p1.y - self.p0.y).abs()
    }

    pub fn is_horizontal(&self) -> bool {
        self.p0.y == self.p1.y
    }

    /// Midpoint of the moved segment, in dbu.
    pub fn midpoint(&self) -> [f64; 2] {
        let o = self.offset as f64;
        [
            (self.p0.x + self.p1.x) as f64 / 2.0 + o * self.normal.x as f64,
            (self.p0.y + self.p1.y) as f64 / 2.0 + o * self.normal.y as f64,
        ]
    }

    /// Geometric ordering key of the base segment, independent of ids.
    pub fn canonical_key(&self) -> (Coord, Coord, Coord, Coord) {
        let mx = self.p0.x + self.p1.x;
        let my = self.p0.y + self.p1.y;
        (mx, my, self.normal.x, self.normal.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedMask {
    pub dbu_per_nm: f64,
    /// Healed base rings: counterclockwise outers, clockwise holes.
    pub rings: Vec<Polygon>,
    pub segments: Vec<Segment>,
}

fn unit(d: Point) -> Point {
    Point::new(d.x.signum(), d.y.signum())
}

fn right_normal(d: Point) -> Point {
    let u = unit(d);
    Point::new(u.y, -u.x)
}

fn edge_len(a: Point, b: Point) -> Coord {
    (b.x - a.x).abs() + (b.y - a.y).abs()
}

fn corner_convex(prev: Point, v: Point, next: Point) -> bool {
    cross(v - prev, next - v) > 0
}

/// Line-end classifier: both corners convex and both neighbouring edges at
/// least twice as long as the edge itself.
pub fn is_line_end(ring: &Polygon, edge: usize) -> bool {
    let n = ring.len();
    let v = &ring.vertices;
    let (a, b) = (v[edge], v[(edge + 1) % n]);
    let prev = v[(edge + n - 1) % n];
    let next = v[(edge + 2) % n];
    let len = edge_len(a, b);
    corner_convex(prev, a, b)
        && corner_convex(a, b, next)
        && edge_len(prev, a) >= 2 * len
        && edge_len(b, next) >= 2 * len
}

/// Split `len` into `n` parts whose sequence reads the same reversed.
fn palindromic_split(len: Coord, n: usize) -> Option<Vec<Coord>> {
    let n_c = n as Coord;
    let base = len / n_c;
    let rem = (len % n_c) as usize;
    if rem % 2 == 1 && n.is_multiple_of(2) {
        return None;
    }
    let mut parts = vec![base; n];
    let mut left = rem;
    if left % 2 == 1 {
        parts[n / 2] += 1;
        left -= 1;
    }
    // Fill pairs from the centre outwards.
    let mut i = (n - 1) / 2;
    while left > 0 {
        let j = n - 1 - i;
        if i == j {
            i -= 1;
            continue;
        }
        parts[i] += 1;
        parts[j] += 1;
        left -= 2;
        i = i.saturating_sub(1);
    }
    Some(parts)
}

fn split_edge(len: Coord, target: Coord) -> Vec<Coord> {
    if target <= 0 || len < target {
        return vec![len];
    }
    let n0 = ((len as f64 / target as f64).round() as usize).max(1);
    let ok = |n: usize| {
        n >= 1 && {
            let l = len as f64 / n as f64;
            2.0 * l >= target as f64 - 2.0 && 2.0 * l <= 3.0 * target as f64 + 2.0
        }
    };
    for n in [n0, n0 + 1, n0.saturating_sub(1)] {
        if ok(n) {
            if let Some(p) = palindromic_split(len, n) {
                return p;
            }
        }
    }
    vec![len]
}

/// Partition every edge of the healed, Manhattan `polygons` into segments
/// of roughly `seg_length_nm`.
pub fn segment_polygons(
    polygons: &[Polygon],
    dbu_per_nm: f64,
    seg_length_nm: f64,
) -> Result<SegmentedMask, OpcError> {
    let rings = boolean::heal(polygons);
    let target = (seg_length_nm * dbu_per_nm).round() as Coord;
    let mut segments = Vec::new();
    for (ri, ring) in rings.iter().enumerate() {
        if !ring.is_manhattan() {
            return Err(OpcError::NonManhattan(ri));
        }
        let n = ring.len();
        let mut order = 0;
        for ei in 0..n {
            let a = ring.vertices[ei];
            let b = ring.vertices[(ei + 1) % n];
            let d = unit(b - a);
            let len = edge_len(a, b);
            let line_end = is_line_end(ring, ei) && len < target.saturating_mul(2);
            let parts = split_edge(len, target);
            let k = parts.len();
            let mut pos = a;
            for (si, &l) in parts.iter().enumerate() {
                let end = Point::new(pos.x + d.x * l, pos.y + d.y * l);
                let role = if line_end {
                    SegmentRole::LineEnd
                } else if k >= 2 && (si == 0 || si == k - 1) {
                    SegmentRole::Corner
                } else {
                    SegmentRole::LineSide
                };
                segments.push(Segment {
                    ring: ri,
                    order,
                    edge: ei,
                    p0: pos,
                    p1: end,
                    normal: right_normal(d),
                    offset: 0,
                    role,
                    mobile: true,
                    lateral_lock: false,
                });
                order += 1;
                pos = end;
            }
        }
    }
    Ok(SegmentedMask { dbu_per_nm, rings, segments })
}

pub fn segment_layout(target: &Layout, layer: &str, seg_length_nm: f64) -> Result<SegmentedMask, OpcError> {
    let polys = target.layer(layer).ok_or_else(|| OpcError::MissingLayer(layer.to_string()))?;
    segment_polygons(polys, target.dbu_per_nm, seg_length_nm)
}

impl SegmentedMask {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn offsets(&self) -> Vec<Coord> {
        self.segments.iter().map(|s| s.offset).collect()
    }

    pub fn set_offsets(&mut self, offsets: &[Coord]) {
        for (s, &o) in self.segments.iter_mut().zip(offsets) {
            s.offset = o;
        }
    }

    /// Segment ids of each ring, in ring order.
    pub fn ring_order(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.rings.len()];
        for (i, s) in self.segments.iter().enumerate() {
            out[s.ring].push(i);
        }
        for r in &mut out {
            r.sort_by_key(|&i| self.segments[i].order);
        }
        out
    }

    /// (previous, next) segment of every segment along its ring.
    pub fn neighbours(&self) -> Vec<(usize, usize)> {
        let mut nb = vec![(0, 0); self.segments.len()];
        for ring in self.ring_order() {
            let m = ring.len();
            for k in 0..m {
                nb[ring[k]] = (ring[(k + m - 1) % m], ring[(k + 1) % m]);
            }
        }
        nb
    }

    /// Joint between segment `a` and its successor `b`.
    pub fn joint(&self, a: usize, b: usize) -> Joint {
        let (s, t) = (&self.segments[a], &self.segments[b]);
        if s.edge == t.edge {
            Joint::Jog
        } else if cross(s.p1 - s.p0, t.p1 - t.p0) > 0 {
            Joint::Convex
        } else {
            Joint::Concave
        }
    }

    fn ring_polygon(&self, ids: &[usize], offset: impl Fn(usize) -> Coord) -> Polygon {
        let m = ids.len();
        let mut pts = Vec::with_capacity(2 * m);
        let at = |p: Point, n: Point, o: Coord| Point::new(p.x + n.x * o, p.y + n.y * o);
        for k in 0..m {
            let (i, j) = (ids[k], ids[(k + 1) % m]);
            let (s, t) = (&self.segments[i], &self.segments[j]);
            if s.edge == t.edge {
                pts.push(at(s.p1, s.normal, offset(i)));
                pts.push(at(t.p0, t.normal, offset(j)));
            } else {
                let v = at(s.p1, s.normal, offset(i));
                pts.push(at(v, t.normal, offset(j)));
            }
        }
        Polygon::new(pts)
    }

    /// Rings with every segment displaced by `offset(id)`. Rings that
    /// collapse to zero area are dropped.
    pub fn reconstruct_with(&self, offset: impl Fn(usize) -> Coord) -> Vec<Polygon> {
        self.ring_order()
            .iter()
            .filter_map(|ids| self.ring_polygon(ids, &offset).normalized())
            .collect()
    }

    /// Rings at the current offsets.
    pub fn reconstruct(&self) -> Vec<Polygon> {
        self.reconstruct_with(|i| self.segments[i].offset)
    }

    /// Rings at current offsets plus `moves`.
    pub fn reconstruct_moved(&self, moves: &[Coord]) -> Vec<Polygon> {
        self.reconstruct_with(|i| self.segments[i].offset + moves[i])
    }

    /// Reconstruction with ring identity kept (one entry per base ring).
    pub fn reconstruct_rings(&self, offset: impl Fn(usize) -> Coord) -> Vec<Option<Polygon>> {
        self.ring_order().iter().map(|ids| self.ring_polygon(ids, &offset).normalized()).collect()
    }

    /// A copy with segments stored in a different order: new id `k` holds
    /// old segment `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> SegmentedMask {
        SegmentedMask {
            dbu_per_nm: self.dbu_per_nm,
            rings: self.rings.clone(),
            segments: perm.iter().map(|&i| self.segments[i].clone()).collect(),
        }
    }

    /// Current mask as a layout with a single layer.
    pub fn to_layout(&self, layer: &str) -> Layout {
        Layout { dbu_per_nm: self.dbu_per_nm, layers: Default::default() }.with_layer(layer, self.reconstruct())
    }
}

/// Pull every line-end edge inward by `pullback_nm`.
pub fn retarget_tips(target: &Layout, layer: &str, pullback_nm: f64) -> Result<Layout, OpcError> {
    if pullback_nm < 0.0 || !pullback_nm.is_finite() {
        return Err(OpcError::BadParameter(format!("pullback {pullback_nm}")));
    }
    let pull = (pullback_nm * target.dbu_per_nm).round() as Coord;
    if pull == 0 {
        return Ok(target.clone());
    }
    // One segment per edge.
    let mut mask = segment_layout(target, layer, f64::INFINITY)?;
    let mut collapsed = Vec::new();
    for (ri, ring) in mask.rings.iter().enumerate() {
        let n = ring.len();
        for ei in 0..n {
            let len = edge_len(ring.vertices[ei], ring.vertices[(ei + 1) % n]);
            let ends = [(ei + n - 1) % n, (ei + 1) % n].iter().filter(|&&k| is_line_end(ring, k)).count() as Coord;
            if ends > 0 && len - ends * pull < 1 {
                collapsed.push(ri);
                break;
            }
        }
    }
    if !collapsed.is_empty() {
        return Err(OpcError::Collapse(collapsed));
    }
    for s in &mut mask.segments {
        if is_line_end(&mask.rings[s.ring], s.edge) {
            s.offset = -pull;
        }
    }
    let mut out = target.clone();
    out.layers.insert(layer.to_string(), mask.reconstruct());
    Ok(out)
}
