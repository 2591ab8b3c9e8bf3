//! Integer-coordinate polygon primitives shared by every geometry module.
//!
//! Coordinates are database units (dbu). Storage is always `i64`; the
//! narrower 32-bit precision is a validation-time limit selected through
//! [`CoordPrecision`], so a layout can be checked for 32-bit compatibility
//! without recompiling.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Coord = i64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon has {0} vertices, at least 3 are required")]
    Degenerate(usize),
    #[error("bounding box of empty geometry")]
    Empty,
    #[error("dbu_per_nm must be positive and finite, got {0}")]
    BadScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: Coord,
    pub y: Coord,
}

impl Point {
    pub const fn new(x: Coord, y: Coord) -> Self {
        Point { x, y }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

/// Twice the signed area of triangle `(a, b, c)`; positive for a left turn.
#[inline]
pub fn orient2d(a: Point, b: Point, c: Point) -> i128 {
    let abx = (b.x - a.x) as i128;
    let aby = (b.y - a.y) as i128;
    let acx = (c.x - a.x) as i128;
    let acy = (c.y - a.y) as i128;
    abx * acy - aby * acx
}

#[inline]
pub fn cross(a: Point, b: Point) -> i128 {
    a.x as i128 * b.y as i128 - a.y as i128 * b.x as i128
}

#[inline]
pub fn dot(a: Point, b: Point) -> i128 {
    a.x as i128 * b.x as i128 + a.y as i128 * b.y as i128
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub p0: Point,
    pub p1: Point,
}

impl Edge {
    pub fn new(p0: Point, p1: Point) -> Self {
        Edge { p0, p1 }
    }

    pub fn is_degenerate(&self) -> bool {
        self.p0 == self.p1
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(self.p0, self.p1)
    }

    pub fn dir(&self) -> Point {
        self.p1 - self.p0
    }

    pub fn is_horizontal(&self) -> bool {
        self.p0.y == self.p1.y
    }

    pub fn is_vertical(&self) -> bool {
        self.p0.x == self.p1.x
    }

    pub fn length(&self) -> f64 {
        let d = self.dir();
        (d.x as f64).hypot(d.y as f64)
    }
}

/// Closed axis-aligned box on the integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Point,
    pub hi: Point,
}

impl Aabb {
    pub fn new(lo: Point, hi: Point) -> Self {
        debug_assert!(lo.x <= hi.x && lo.y <= hi.y);
        Aabb { lo, hi }
    }

    pub fn from_points(a: Point, b: Point) -> Self {
        Aabb {
            lo: Point::new(a.x.min(b.x), a.y.min(b.y)),
            hi: Point::new(a.x.max(b.x), a.y.max(b.y)),
        }
    }

    pub fn of_points<'a>(pts: impl IntoIterator<Item = &'a Point>) -> Option<Aabb> {
        let mut it = pts.into_iter();
        let first = *it.next()?;
        let mut b = Aabb::new(first, first);
        for p in it {
            b.include(*p);
        }
        Some(b)
    }

    pub fn include(&mut self, p: Point) {
        self.lo.x = self.lo.x.min(p.x);
        self.lo.y = self.lo.y.min(p.y);
        self.hi.x = self.hi.x.max(p.x);
        self.hi.y = self.hi.y.max(p.y);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            lo: Point::new(self.lo.x.min(o.lo.x), self.lo.y.min(o.lo.y)),
            hi: Point::new(self.hi.x.max(o.hi.x), self.hi.y.max(o.hi.y)),
        }
    }

    /// Closed overlap: boxes that only touch count as overlapping.
    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.lo.x <= o.hi.x && o.lo.x <= self.hi.x && self.lo.y <= o.hi.y && o.lo.y <= self.hi.y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.lo.x && p.x <= self.hi.x && p.y >= self.lo.y && p.y <= self.hi.y
    }

    pub fn expand(&self, d: Coord) -> Aabb {
        Aabb {
            lo: Point::new(self.lo.x - d, self.lo.y - d),
            hi: Point::new(self.hi.x + d, self.hi.y + d),
        }
    }

    pub fn width(&self) -> Coord {
        self.hi.x - self.lo.x
    }

    pub fn height(&self) -> Coord {
        self.hi.y - self.lo.y
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon::new(vec![
            self.lo,
            Point::new(self.hi.x, self.lo.y),
            self.hi,
            Point::new(self.lo.x, self.hi.y),
        ])
    }
}

/// An implicitly closed vertex chain. Orientation carries meaning: with the
/// nonzero fill rule a counterclockwise ring adds +1 winding, a clockwise
/// ring subtracts one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Polygon { vertices }
    }

    pub fn rect(x0: Coord, y0: Coord, x1: Coord, y1: Coord) -> Self {
        Aabb::from_points(Point::new(x0, y0), Point::new(x1, y1)).to_polygon()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| Edge::new(self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn signed_area2(&self) -> Result<i128, GeometryError> {
        signed_area2(self)
    }

    pub fn is_ccw(&self) -> bool {
        matches!(signed_area2(self), Ok(a) if a > 0)
    }

    pub fn reversed(&self) -> Polygon {
        let mut v = self.vertices.clone();
        v.reverse();
        Polygon::new(v)
    }

    pub fn is_manhattan(&self) -> bool {
        self.edges().all(|e| e.is_horizontal() || e.is_vertical())
    }

    pub fn translate(&self, dx: Coord, dy: Coord) -> Polygon {
        Polygon::new(self.vertices.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect())
    }

    /// Winding number of `p` using the half-open crossing rule (a ray shifted
    /// by +epsilon in y). Points exactly on the boundary get whichever side
    /// that perturbation selects.
    pub fn winding_number(&self, p: Point) -> i32 {
        winding_number_doubled(self, Point::new(2 * p.x, 2 * p.y), 2)
    }

    /// Normalize: drop consecutive duplicates and collinear middle vertices
    /// (including spikes), then rotate so the lexicographically smallest
    /// vertex comes first. Returns `None` when fewer than three vertices or
    /// zero area remain.
    pub fn normalized(&self) -> Option<Polygon> {
        let mut v: Vec<Point> = Vec::with_capacity(self.vertices.len());
        for &p in &self.vertices {
            if v.last() != Some(&p) {
                v.push(p);
            }
        }
        while v.len() > 1 && v.first() == v.last() {
            v.pop();
        }
        // Repeatedly remove collinear vertices until stable.
        loop {
            if v.len() < 3 {
                return None;
            }
            let n = v.len();
            let mut keep = vec![true; n];
            let mut changed = false;
            let mut i = 0;
            while i < n {
                let prev = (i + n - 1) % n;
                let next = (i + 1) % n;
                if keep[prev] && orient2d(v[prev], v[i], v[next]) == 0 {
                    keep[i] = false;
                    changed = true;
                    // Skip the next vertex this pass so removals stay local.
                    i += 2;
                    continue;
                }
                i += 1;
            }
            if !changed {
                break;
            }
            v = v.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
            let mut dedup: Vec<Point> = Vec::with_capacity(v.len());
            for p in v {
                if dedup.last() != Some(&p) {
                    dedup.push(p);
                }
            }
            while dedup.len() > 1 && dedup.first() == dedup.last() {
                dedup.pop();
            }
            v = dedup;
        }
        let area = shoelace(&v);
        if area == 0 {
            return None;
        }
        let start = v
            .iter()
            .enumerate()
            .min_by_key(|(_, p)| (p.x, p.y))
            .map(|(i, _)| i)
            .unwrap_or(0);
        v.rotate_left(start);
        Some(Polygon::new(v))
    }
}

fn shoelace(v: &[Point]) -> i128 {
    let n = v.len();
    let mut s: i128 = 0;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        s += a.x as i128 * b.y as i128 - b.x as i128 * a.y as i128;
    }
    s
}

/// Winding number of a point given in doubled coordinates (`scale` is the
/// factor applied to the polygon's own coordinates, 2 for half-integer
/// queries).
pub(crate) fn winding_number_doubled(poly: &Polygon, p: Point, scale: Coord) -> i32 {
    let n = poly.vertices.len();
    let mut w = 0;
    for i in 0..n {
        let a = poly.vertices[i];
        let b = poly.vertices[(i + 1) % n];
        let a = Point::new(a.x * scale, a.y * scale);
        let b = Point::new(b.x * scale, b.y * scale);
        let a_above = a.y > p.y;
        let b_above = b.y > p.y;
        if a_above == b_above {
            continue;
        }
        // x-coordinate of the crossing compared with p.x exactly.
        let o = orient2d(a, b, p);
        if b_above {
            // upward edge: crossing is right of p iff p is left of a->b
            if o > 0 {
                w += 1;
            }
        } else if o < 0 {
            w -= 1;
        }
    }
    w
}

/// Twice the signed area (exact). Positive for counterclockwise rings.
pub fn signed_area2(poly: &Polygon) -> Result<i128, GeometryError> {
    if poly.vertices.len() < 3 {
        return Err(GeometryError::Degenerate(poly.vertices.len()));
    }
    Ok(shoelace(&poly.vertices))
}

/// Anything that has a tight integer bounding box.
pub trait Bounded {
    fn bounding_box(&self) -> Result<Aabb, GeometryError>;
}

impl Bounded for Polygon {
    fn bounding_box(&self) -> Result<Aabb, GeometryError> {
        Aabb::of_points(&self.vertices).ok_or(GeometryError::Empty)
    }
}

impl Bounded for Edge {
    fn bounding_box(&self) -> Result<Aabb, GeometryError> {
        Ok(self.bbox())
    }
}

impl Bounded for [Polygon] {
    fn bounding_box(&self) -> Result<Aabb, GeometryError> {
        Aabb::of_points(self.iter().flat_map(|p| p.vertices.iter())).ok_or(GeometryError::Empty)
    }
}

impl Bounded for Layout {
    fn bounding_box(&self) -> Result<Aabb, GeometryError> {
        Aabb::of_points(self.layers.values().flatten().flat_map(|p| p.vertices.iter()))
            .ok_or(GeometryError::Empty)
    }
}

pub fn bounding_box<B: Bounded + ?Sized>(g: &B) -> Result<Aabb, GeometryError> {
    g.bounding_box()
}

/// A polygon database: named layers of polygons at a fixed dbu scale.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    pub dbu_per_nm: f64,
    pub layers: BTreeMap<String, Vec<Polygon>>,
}

impl Layout {
    pub fn new(dbu_per_nm: f64) -> Result<Self, GeometryError> {
        if !(dbu_per_nm.is_finite() && dbu_per_nm > 0.0) {
            return Err(GeometryError::BadScale(dbu_per_nm));
        }
        Ok(Layout { dbu_per_nm, layers: BTreeMap::new() })
    }

    pub fn with_layer(mut self, name: &str, polys: Vec<Polygon>) -> Self {
        self.layers.insert(name.to_string(), polys);
        self
    }

    pub fn layer(&self, name: &str) -> Option<&[Polygon]> {
        self.layers.get(name).map(|v| v.as_slice())
    }

    pub fn bbox(&self) -> Option<Aabb> {
        self.bounding_box().ok()
    }

    pub fn nm_to_dbu(&self, nm: f64) -> Coord {
        (nm * self.dbu_per_nm).round() as Coord
    }

    pub fn dbu_to_nm(&self, dbu: Coord) -> f64 {
        dbu as f64 / self.dbu_per_nm
    }

    pub fn polygon_count(&self) -> usize {
        self.layers.values().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoordPrecision {
    Bits32,
    #[default]
    Bits64,
}

impl CoordPrecision {
    /// Largest magnitude a coordinate may take. For 64-bit storage the limit
    /// leaves headroom so that sizing and the doubled-coordinate predicates
    /// cannot overflow, and keeps values exactly representable in `f64`.
    pub fn limit(self) -> Coord {
        match self {
            CoordPrecision::Bits32 => i32::MAX as Coord,
            CoordPrecision::Bits64 => 1 << 52,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FindingKind {
    ZeroLengthEdge,
    DuplicateVertex,
    CoordinateOutOfRange,
    TooFewVertices,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub layer: String,
    pub polygon: usize,
    pub vertex: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Report-only validation; never mutates the layout.
pub fn validate_layout(layout: &Layout, precision: CoordPrecision) -> ValidationReport {
    let limit = precision.limit();
    let mut findings = Vec::new();
    for (name, polys) in &layout.layers {
        for (pi, poly) in polys.iter().enumerate() {
            let n = poly.vertices.len();
            if n < 3 {
                findings.push(Finding {
                    kind: FindingKind::TooFewVertices,
                    layer: name.clone(),
                    polygon: pi,
                    vertex: None,
                    detail: format!("{n} vertices"),
                });
            }
            for (vi, p) in poly.vertices.iter().enumerate() {
                if p.x.abs() > limit || p.y.abs() > limit {
                    findings.push(Finding {
                        kind: FindingKind::CoordinateOutOfRange,
                        layer: name.clone(),
                        polygon: pi,
                        vertex: Some(vi),
                        detail: format!("{p} exceeds ±{limit}"),
                    });
                }
            }
            if n >= 2 {
                for vi in 0..n {
                    let a = poly.vertices[vi];
                    let b = poly.vertices[(vi + 1) % n];
                    if a == b {
                        findings.push(Finding {
                            kind: FindingKind::ZeroLengthEdge,
                            layer: name.clone(),
                            polygon: pi,
                            vertex: Some(vi),
                            detail: format!("repeated vertex {a}"),
                        });
                    }
                }
                // Non-consecutive repeats.
                let mut seen: BTreeMap<Point, usize> = BTreeMap::new();
                for (vi, p) in poly.vertices.iter().enumerate() {
                    if let Some(&first) = seen.get(p) {
                        let consecutive = vi == first + 1 || (first == 0 && vi == n - 1);
                        if !consecutive {
                            findings.push(Finding {
                                kind: FindingKind::DuplicateVertex,
                                layer: name.clone(),
                                polygon: pi,
                                vertex: Some(vi),
                                detail: format!("{p} also at vertex {first}"),
                            });
                        }
                    } else {
                        seen.insert(*p, vi);
                    }
                }
            }
        }
    }
    ValidationReport { findings }
}
