//! Binary radix linear BVH.
//!
//! Construction sorts primitives by the Morton key of their quantized
//! centroid and splits top-down, one level at a time, at the first index
//! where the most significant differing key bit flips. Nodes whose keys all
//! collapse to one value are requantized inside their own centroid bounds;
//! exactly coincident centroids fall back to a median split. Traversal is a
//! fixed-depth stack walk that first descends to a leaf and then scans the
//! leaf's primitives.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Aabb;

/// Traversal stack depth. Construction guarantees the tree never exceeds it.
pub const MAX_DEPTH: usize = 64;

pub const DEFAULT_LEAF_THRESHOLD: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("cannot build a hierarchy over zero primitives")]
    Empty,
    #[error("leaf threshold must be at least 1")]
    BadLeafThreshold,
    #[error("bits per axis must lie in [1, 31], got {0}")]
    BadBits(u32),
    #[error("centroid ({0}, {1}) lies outside the scene bounds")]
    OutsideBounds(f64, f64),
    #[error("non-finite primitive bounds at index {0}")]
    NonFinite(usize),
}

/// Floating-point axis-aligned box. Integer layout boxes convert exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxF {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoxF {
    pub const EMPTY: BoxF = BoxF { min: [f64::INFINITY; 2], max: [f64::NEG_INFINITY; 2] };

    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        BoxF { min, max }
    }

    pub fn from_points(a: [f64; 2], b: [f64; 2]) -> Self {
        BoxF { min: [a[0].min(b[0]), a[1].min(b[1])], max: [a[0].max(b[0]), a[1].max(b[1])] }
    }

    pub fn point(p: [f64; 2]) -> Self {
        BoxF { min: p, max: p }
    }

    pub fn union(&self, o: &BoxF) -> BoxF {
        BoxF {
            min: [self.min[0].min(o.min[0]), self.min[1].min(o.min[1])],
            max: [self.max[0].max(o.max[0]), self.max[1].max(o.max[1])],
        }
    }

    pub fn overlaps(&self, o: &BoxF) -> bool {
        self.min[0] <= o.max[0]
            && o.min[0] <= self.max[0]
            && self.min[1] <= o.max[1]
            && o.min[1] <= self.max[1]
    }

    pub fn centroid(&self) -> [f64; 2] {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1])]
    }

    pub fn expand(&self, d: f64) -> BoxF {
        BoxF { min: [self.min[0] - d, self.min[1] - d], max: [self.max[0] + d, self.max[1] + d] }
    }

    /// Euclidean distance from a point to the box (0 inside).
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let dx = (self.min[0] - p[0]).max(0.0).max(p[0] - self.max[0]);
        let dy = (self.min[1] - p[1]).max(0.0).max(p[1] - self.max[1]);
        dx.hypot(dy)
    }

    fn is_finite(&self) -> bool {
        self.min.iter().chain(self.max.iter()).all(|v| v.is_finite())
    }
}

impl From<Aabb> for BoxF {
    fn from(b: Aabb) -> Self {
        BoxF::new([b.lo.x as f64, b.lo.y as f64], [b.hi.x as f64, b.hi.y as f64])
    }
}

/// Spread the low 32 bits of `v` to the even bit positions.
fn part1by1(v: u64) -> u64 {
    let mut x = v & 0x0000_0000_ffff_ffff;
    x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
    x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

fn compact1by1(v: u64) -> u64 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x >> 4)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x >> 8)) & 0x0000_ffff_0000_ffff;
    x = (x | (x >> 16)) & 0x0000_0000_ffff_ffff;
    x
}

/// Morton code with x in the even bits and y in the odd bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MortonKey(pub u64);

impl MortonKey {
    pub fn interleave(qx: u32, qy: u32) -> Self {
        MortonKey(part1by1(qx as u64) | (part1by1(qy as u64) << 1))
    }

    pub fn deinterleave(self) -> (u32, u32) {
        (compact1by1(self.0) as u32, compact1by1(self.0 >> 1) as u32)
    }
}

fn quantize(v: f64, lo: f64, hi: f64, bits: u32) -> u32 {
    let cells = (1u64 << bits) as f64;
    let ext = hi - lo;
    if ext <= 0.0 {
        return 0;
    }
    let q = ((v - lo) / ext * cells).floor();
    q.clamp(0.0, cells - 1.0) as u32
}

/// Quantize `centroid` inside `bounds` to `bits_per_axis` bits per axis and
/// interleave. The upper boundary clamps into the last cell.
pub fn morton_encode(
    centroid: [f64; 2],
    bounds: &BoxF,
    bits_per_axis: u32,
) -> Result<MortonKey, IndexError> {
    if !(1..=31).contains(&bits_per_axis) {
        return Err(IndexError::BadBits(bits_per_axis));
    }
    let inside = (0..2).all(|a| centroid[a] >= bounds.min[a] && centroid[a] <= bounds.max[a]);
    if !inside {
        return Err(IndexError::OutsideBounds(centroid[0], centroid[1]));
    }
    Ok(encode_unchecked(centroid, bounds, bits_per_axis))
}

fn encode_unchecked(c: [f64; 2], b: &BoxF, bits: u32) -> MortonKey {
    MortonKey::interleave(
        quantize(c[0], b.min[0], b.max[0], bits),
        quantize(c[1], b.min[1], b.max[1], bits),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Internal { left: u32, right: u32 },
    Leaf { begin: u32, end: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub aabb: BoxF,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyWidth {
    /// 16 bits per axis.
    Bits32,
    /// 31 bits per axis.
    Bits64,
}

impl KeyWidth {
    pub fn bits_per_axis(self) -> u32 {
        match self {
            KeyWidth::Bits32 => 16,
            KeyWidth::Bits64 => 31,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub leaf_threshold: usize,
    pub key_width: KeyWidth,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { leaf_threshold: DEFAULT_LEAF_THRESHOLD, key_width: KeyWidth::Bits32 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bvh {
    pub nodes: Vec<BvhNode>,
    pub sorted_prim_ids: Vec<u32>,
    pub leaf_threshold: usize,
    pub scene_bounds: BoxF,
    prim_boxes: Vec<BoxF>,
    depth: usize,
}

struct Pending {
    node: usize,
    begin: usize,
    end: usize,
    depth: usize,
}

enum Split {
    Leaf,
    At(usize),
    Reordered { at: usize, ids: Vec<u32>, keys: Vec<u64> },
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

impl Bvh {
    pub fn build(prims: &[BoxF], leaf_threshold: usize) -> Result<Bvh, IndexError> {
        Self::build_with(prims, BuildOptions { leaf_threshold, ..Default::default() })
    }

    pub fn build_with(prims: &[BoxF], opts: BuildOptions) -> Result<Bvh, IndexError> {
        if prims.is_empty() {
            return Err(IndexError::Empty);
        }
        if opts.leaf_threshold == 0 {
            return Err(IndexError::BadLeafThreshold);
        }
        if let Some(i) = prims.iter().position(|b| !b.is_finite()) {
            return Err(IndexError::NonFinite(i));
        }
        let bits = opts.key_width.bits_per_axis();
        let scene_bounds = prims.iter().fold(BoxF::EMPTY, |acc, b| acc.union(b));
        let centroids: Vec<[f64; 2]> = prims.iter().map(|b| b.centroid()).collect();
        let cbounds = centroids.iter().fold(BoxF::EMPTY, |acc, c| acc.union(&BoxF::point(*c)));

        let mut keys: Vec<u64> =
            centroids.par_iter().map(|c| encode_unchecked(*c, &cbounds, bits).0).collect();
        let mut ids: Vec<u32> = (0..prims.len() as u32).collect();
        // Stable: equal keys keep input order.
        ids.sort_by_key(|&i| keys[i as usize]);
        keys = ids.iter().map(|&i| keys[i as usize]).collect();

        let mut nodes: Vec<BvhNode> =
            vec![BvhNode { aabb: BoxF::EMPTY, kind: NodeKind::Leaf { begin: 0, end: 0 } }];
        let mut level = vec![Pending { node: 0, begin: 0, end: prims.len(), depth: 0 }];
        let mut max_depth = 0;
        let lt = opts.leaf_threshold;

        while !level.is_empty() {
            // Split decisions for one level are independent of each other.
            let splits: Vec<Split> = level
                .par_iter()
                .map(|p| {
                    let count = p.end - p.begin;
                    if count <= lt {
                        return Split::Leaf;
                    }
                    // Keep the tree within the fixed traversal stack.
                    let force_median =
                        p.depth + ceil_log2(count.div_ceil(lt)) + 2 >= MAX_DEPTH;
                    let ks = &keys[p.begin..p.end];
                    if force_median {
                        return Split::At(p.begin + count / 2);
                    }
                    if ks[0] != ks[count - 1] {
                        return Split::At(p.begin + split_point(ks));
                    }
                    // Keys collapsed: requantize inside this node's centroid bounds.
                    let sub_ids = &ids[p.begin..p.end];
                    let nb = sub_ids.iter().fold(BoxF::EMPTY, |acc, &i| {
                        acc.union(&BoxF::point(centroids[i as usize]))
                    });
                    let mut pairs: Vec<(u64, u32)> = sub_ids
                        .iter()
                        .map(|&i| (encode_unchecked(centroids[i as usize], &nb, bits).0, i))
                        .collect();
                    pairs.sort_by_key(|&(k, _)| k);
                    let new_keys: Vec<u64> = pairs.iter().map(|p| p.0).collect();
                    let new_ids: Vec<u32> = pairs.iter().map(|p| p.1).collect();
                    let at = if new_keys[0] != new_keys[count - 1] {
                        split_point(&new_keys)
                    } else {
                        count / 2
                    };
                    Split::Reordered { at: p.begin + at, ids: new_ids, keys: new_keys }
                })
                .collect();

            let mut next = Vec::new();
            for (p, split) in level.iter().zip(splits) {
                max_depth = max_depth.max(p.depth);
                let at = match split {
                    Split::Leaf => {
                        nodes[p.node].kind =
                            NodeKind::Leaf { begin: p.begin as u32, end: p.end as u32 };
                        continue;
                    }
                    Split::At(at) => at,
                    Split::Reordered { at, ids: nid, keys: nk } => {
                        ids[p.begin..p.end].copy_from_slice(&nid);
                        keys[p.begin..p.end].copy_from_slice(&nk);
                        at
                    }
                };
                let left = nodes.len();
                nodes.push(BvhNode { aabb: BoxF::EMPTY, kind: NodeKind::Leaf { begin: 0, end: 0 } });
                nodes.push(BvhNode { aabb: BoxF::EMPTY, kind: NodeKind::Leaf { begin: 0, end: 0 } });
                nodes[p.node].kind = NodeKind::Internal { left: left as u32, right: left as u32 + 1 };
                next.push(Pending { node: left, begin: p.begin, end: at, depth: p.depth + 1 });
                next.push(Pending { node: left + 1, begin: at, end: p.end, depth: p.depth + 1 });
            }
            level = next;
        }

        // Children always follow their parent, so a reverse sweep is bottom-up.
        for i in (0..nodes.len()).rev() {
            let aabb = match nodes[i].kind {
                NodeKind::Leaf { begin, end } => ids[begin as usize..end as usize]
                    .iter()
                    .fold(BoxF::EMPTY, |acc, &id| acc.union(&prims[id as usize])),
                NodeKind::Internal { left, right } => {
                    nodes[left as usize].aabb.union(&nodes[right as usize].aabb)
                }
            };
            nodes[i].aabb = aabb;
        }

        Ok(Bvh {
            nodes,
            sorted_prim_ids: ids,
            leaf_threshold: lt,
            scene_bounds,
            prim_boxes: prims.to_vec(),
            depth: max_depth,
        })
    }

    pub fn len(&self) -> usize {
        self.prim_boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prim_boxes.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn prim_box(&self, id: usize) -> &BoxF {
        &self.prim_boxes[id]
    }

    /// Visit every primitive whose box overlaps `q` (closed overlap), in
    /// traversal order.
    pub fn for_each_overlap(&self, q: &BoxF, mut f: impl FnMut(usize)) {
        if !self.nodes[0].aabb.overlaps(q) {
            return;
        }
        let mut stack = [0u32; MAX_DEPTH];
        let mut sp = 0usize;
        let mut node = 0u32;
        loop {
            // Descend through internal nodes until a leaf is reached.
            let leaf = loop {
                match self.nodes[node as usize].kind {
                    NodeKind::Leaf { begin, end } => break Some((begin, end)),
                    NodeKind::Internal { left, right } => {
                        let hl = self.nodes[left as usize].aabb.overlaps(q);
                        let hr = self.nodes[right as usize].aabb.overlaps(q);
                        match (hl, hr) {
                            (true, true) => {
                                assert!(sp < MAX_DEPTH, "bvh traversal stack overflow");
                                stack[sp] = right;
                                sp += 1;
                                node = left;
                            }
                            (true, false) => node = left,
                            (false, true) => node = right,
                            (false, false) => break None,
                        }
                    }
                }
            };
            if let Some((begin, end)) = leaf {
                for &id in &self.sorted_prim_ids[begin as usize..end as usize] {
                    if self.prim_boxes[id as usize].overlaps(q) {
                        f(id as usize);
                    }
                }
            }
            if sp == 0 {
                break;
            }
            sp -= 1;
            node = stack[sp];
        }
    }

    /// Ids of all primitives overlapping `q`, sorted ascending.
    pub fn range_query(&self, q: &BoxF) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_overlap(q, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Best-first search guided by a lower bound on node boxes. `bound`
    /// returns a lower bound of the metric for a box (or `None` to prune),
    /// `exact` evaluates a primitive. Returns the minimizing primitive with
    /// ties broken by the smaller id.
    pub fn nearest_by<B, E>(&self, limit: f64, bound: B, exact: E) -> Option<(usize, f64)>
    where
        B: Fn(&BoxF) -> Option<f64>,
        E: Fn(usize) -> Option<f64>,
    {
        let mut best: Option<(usize, f64)> = None;
        let better = |cand: (usize, f64), best: &Option<(usize, f64)>| match best {
            None => true,
            Some((bi, bd)) => cand.1 < *bd || (cand.1 == *bd && cand.0 < *bi),
        };
        let mut stack = [0u32; MAX_DEPTH];
        let mut sp = 0usize;
        let cutoff = |best: &Option<(usize, f64)>| best.map_or(limit, |b| b.1);
        match bound(&self.nodes[0].aabb) {
            Some(d) if d <= limit => {}
            _ => return None,
        }
        let mut node = 0u32;
        loop {
            match self.nodes[node as usize].kind {
                NodeKind::Leaf { begin, end } => {
                    for &id in &self.sorted_prim_ids[begin as usize..end as usize] {
                        if let Some(d) = exact(id as usize) {
                            if d <= limit && better((id as usize, d), &best) {
                                best = Some((id as usize, d));
                            }
                        }
                    }
                }
                NodeKind::Internal { left, right } => {
                    let c = cutoff(&best);
                    let dl = bound(&self.nodes[left as usize].aabb).filter(|d| *d <= c);
                    let dr = bound(&self.nodes[right as usize].aabb).filter(|d| *d <= c);
                    let (first, second) = match (dl, dr) {
                        (Some(a), Some(b)) if b < a => (Some(right), Some(left)),
                        (Some(_), Some(_)) => (Some(left), Some(right)),
                        (Some(_), None) => (Some(left), None),
                        (None, Some(_)) => (Some(right), None),
                        (None, None) => (None, None),
                    };
                    if let Some(s) = second {
                        assert!(sp < MAX_DEPTH, "bvh traversal stack overflow");
                        stack[sp] = s;
                        sp += 1;
                    }
                    if let Some(f) = first {
                        node = f;
                        continue;
                    }
                }
            }
            // Pop, skipping nodes that can no longer beat the current best.
            loop {
                if sp == 0 {
                    return best;
                }
                sp -= 1;
                let cand = stack[sp];
                if let Some(d) = bound(&self.nodes[cand as usize].aabb) {
                    if d <= cutoff(&best) {
                        node = cand;
                        break;
                    }
                }
            }
        }
    }
}

/// First index in a sorted, non-constant key run where the most significant
/// differing bit becomes set.
fn split_point(keys: &[u64]) -> usize {
    let first = keys[0];
    let last = keys[keys.len() - 1];
    let bit = 63 - (first ^ last).leading_zeros();
    let mask = 1u64 << bit;
    keys.partition_point(|k| k & mask == 0)
}

/// A segment-soup index answering nearest-distance and ray-probe queries.
#[derive(Debug, Clone)]
pub struct SegmentIndex {
    pub segments: Vec<[[f64; 2]; 2]>,
    pub bvh: Bvh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: usize,
    /// Euclidean distance for point probes; signed ray parameter for ray
    /// probes (direction normalized, so it is a distance too).
    pub distance: f64,
}

pub fn point_segment_distance(p: [f64; 2], s: &[[f64; 2]; 2]) -> f64 {
    let [a, b] = *s;
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Parameter `t` along the line `origin + t * dir` where it meets segment
/// `s`, or `None` when parallel or missing.
pub fn ray_segment_param(origin: [f64; 2], dir: [f64; 2], s: &[[f64; 2]; 2]) -> Option<f64> {
    let [a, b] = *s;
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = dir[0] * e[1] - dir[1] * e[0];
    if denom == 0.0 {
        return None;
    }
    let w = [a[0] - origin[0], a[1] - origin[1]];
    let t = (w[0] * e[1] - w[1] * e[0]) / denom;
    let u = (w[0] * dir[1] - w[1] * dir[0]) / denom;
    if (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Lower bound on |t| for the line `origin + t dir`, |t| <= limit, to reach
/// the box. Returns `None` if the clipped line misses it.
fn ray_box_bound(origin: [f64; 2], dir: [f64; 2], limit: f64, b: &BoxF, two_sided: bool) -> Option<f64> {
    let mut t0 = if two_sided { -limit } else { 0.0 };
    let mut t1 = limit;
    for a in 0..2 {
        if dir[a] == 0.0 {
            if origin[a] < b.min[a] || origin[a] > b.max[a] {
                return None;
            }
        } else {
            let ta = (b.min[a] - origin[a]) / dir[a];
            let tb = (b.max[a] - origin[a]) / dir[a];
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some(if t0 <= 0.0 && t1 >= 0.0 { 0.0 } else { t0.abs().min(t1.abs()) })
}

impl SegmentIndex {
    pub fn new(segments: Vec<[[f64; 2]; 2]>, leaf_threshold: usize) -> Result<Self, IndexError> {
        let boxes: Vec<BoxF> = segments.iter().map(|s| BoxF::from_points(s[0], s[1])).collect();
        let bvh = Bvh::build(&boxes, leaf_threshold)?;
        Ok(SegmentIndex { segments, bvh })
    }

    /// Nearest segment by Euclidean distance within `max_dist`.
    pub fn nearest(&self, p: [f64; 2], max_dist: f64) -> Option<Hit> {
        self.bvh
            .nearest_by(
                max_dist,
                |b| Some(b.distance_to(p)),
                |i| Some(point_segment_distance(p, &self.segments[i])),
            )
            .map(|(id, distance)| Hit { id, distance })
    }

    /// First crossing along `origin + t * dir` (dir normalized internally).
    /// With `two_sided` the probe extends both ways and the crossing with the
    /// smallest |t| wins; the returned distance keeps its sign.
    pub fn ray(&self, origin: [f64; 2], dir: [f64; 2], max_dist: f64, two_sided: bool) -> Option<Hit> {
        let n = dir[0].hypot(dir[1]);
        if n == 0.0 {
            return None;
        }
        let d = [dir[0] / n, dir[1] / n];
        let ok = |t: f64| if two_sided { t.abs() <= max_dist } else { (0.0..=max_dist).contains(&t) };
        let best = self.bvh.nearest_by(
            max_dist,
            |b| ray_box_bound(origin, d, max_dist, b, two_sided),
            |i| ray_segment_param(origin, d, &self.segments[i]).filter(|t| ok(*t)).map(f64::abs),
        )?;
        let t = ray_segment_param(origin, d, &self.segments[best.0])?;
        Some(Hit { id: best.0, distance: t })
    }
}
