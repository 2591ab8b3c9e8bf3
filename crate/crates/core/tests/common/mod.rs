//! Test-only oracles shared by integration tests.
#![allow(dead_code)]

pub mod fields;
pub mod mrc_cases;

use litho::boolean::BoolOpKind;
use litho::geometry::{Point, Polygon};
use rand::Rng;

/// Scanline rasterizer over a compressed coordinate grid. For Manhattan
/// input every cell is uniformly inside or outside, so equality of cell
/// masks on a grid containing every coordinate is equality of 1-dbu pixels.
pub struct Grid {
    pub xs: Vec<i64>,
    pub ys: Vec<i64>,
}

impl Grid {
    pub fn new<'a>(layers: impl IntoIterator<Item = &'a [Polygon]>, pads: &[i64]) -> Grid {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for polys in layers {
            for p in polys {
                for v in &p.vertices {
                    for d in pads.iter().chain(std::iter::once(&0)) {
                        xs.extend([v.x - d, v.x + d]);
                        ys.extend([v.y - d, v.y + d]);
                    }
                }
            }
        }
        if xs.is_empty() {
            xs = vec![0, 1];
            ys = vec![0, 1];
        }
        let margin = 2 * pads.iter().copied().max().unwrap_or(0) + 1;
        let (x0, x1) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
        let (y0, y1) = (*ys.iter().min().unwrap(), *ys.iter().max().unwrap());
        xs.extend([x0 - margin, x1 + margin]);
        ys.extend([y0 - margin, y1 + margin]);
        xs.sort_unstable();
        xs.dedup();
        ys.sort_unstable();
        ys.dedup();
        Grid { xs, ys }
    }

    pub fn nx(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.ys.len() - 1
    }

    /// Winding number at every cell center, row-major.
    pub fn winding(&self, polys: &[Polygon]) -> Vec<i32> {
        let (nx, ny) = (self.nx(), self.ny());
        // diff[j][k]: signed crossings of vertical edges at cut k in row j.
        let mut diff = vec![0i32; (nx + 1) * ny];
        for p in polys {
            let n = p.vertices.len();
            for i in 0..n {
                let a = p.vertices[i];
                let b = p.vertices[(i + 1) % n];
                assert!(a.x == b.x || a.y == b.y, "oracle needs Manhattan input");
                if a.x != b.x || a.y == b.y {
                    continue;
                }
                let s = if b.y > a.y { 1 } else { -1 };
                let k = self.xs.binary_search(&a.x).expect("x cut");
                let j0 = self.ys.binary_search(&a.y.min(b.y)).expect("y cut");
                let j1 = self.ys.binary_search(&a.y.max(b.y)).expect("y cut");
                for j in j0..j1 {
                    diff[j * (nx + 1) + k] += s;
                }
            }
        }
        // A cell sees every edge to its right on the rightward ray.
        let mut w = vec![0i32; nx * ny];
        for j in 0..ny {
            let mut acc = 0;
            for i in (0..nx).rev() {
                acc += diff[j * (nx + 1) + i + 1];
                w[j * nx + i] = acc;
            }
        }
        w
    }

    pub fn mask(&self, polys: &[Polygon]) -> Vec<bool> {
        self.winding(polys).into_iter().map(|w| w != 0).collect()
    }

    pub fn area(&self, mask: &[bool]) -> i128 {
        let nx = self.nx();
        mask.iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(c, _)| {
                let (i, j) = (c % nx, c / nx);
                ((self.xs[i + 1] - self.xs[i]) as i128) * ((self.ys[j + 1] - self.ys[j]) as i128)
            })
            .sum()
    }

    fn dilate_axis(&self, m: &[bool], d: i64, along_x: bool) -> Vec<bool> {
        let (nx, ny) = (self.nx(), self.ny());
        let (cuts, n, lines) = if along_x { (&self.xs, nx, ny) } else { (&self.ys, ny, nx) };
        let idx = |line: usize, k: usize| if along_x { line * nx + k } else { k * nx + line };
        let mut out = vec![false; m.len()];
        for line in 0..lines {
            let mut pre = vec![0usize; n + 1];
            for k in 0..n {
                pre[k + 1] = pre[k] + m[idx(line, k)] as usize;
            }
            for k in 0..n {
                // Source cells j with cuts[j] - d < cuts[k+1] and cuts[j+1] + d > cuts[k].
                let jlo = cuts[1..].partition_point(|&c| c + d <= cuts[k]);
                let jhi = cuts[..n].partition_point(|&c| c - d < cuts[k + 1]);
                out[idx(line, k)] = jhi > jlo && pre[jhi] - pre[jlo] > 0;
            }
        }
        out
    }

    /// Minkowski sum (d > 0) or difference (d < 0) with the square of
    /// half-width |d|. Needs cuts at every coordinate +/- |d|.
    pub fn offset(&self, m: &[bool], d: i64) -> Vec<bool> {
        if d >= 0 {
            let t = self.dilate_axis(m, d, true);
            self.dilate_axis(&t, d, false)
        } else {
            let inv: Vec<bool> = m.iter().map(|b| !b).collect();
            let t = self.dilate_axis(&inv, -d, true);
            self.dilate_axis(&t, -d, false).into_iter().map(|b| !b).collect()
        }
    }

    fn touches(&self, a: &[bool], b: &[bool]) -> bool {
        let (nx, ny) = (self.nx() as i64, self.ny() as i64);
        for j in 0..ny {
            for i in 0..nx {
                if !a[(j * nx + i) as usize] {
                    continue;
                }
                for dj in -1..=1 {
                    for di in -1..=1 {
                        let (u, v) = (i + di, j + dj);
                        if u >= 0 && v >= 0 && u < nx && v < ny && b[(v * nx + u) as usize] {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Oracle for one operation. Returns (expected, actual) masks.
pub fn oracle_compare(
    op: BoolOpKind,
    a: &[Polygon],
    b: &[Polygon],
    delta: i64,
    result: &[Polygon],
) -> (Vec<bool>, Vec<bool>) {
    let pads = if op == BoolOpKind::Size { vec![delta.abs()] } else { vec![] };
    let grid = Grid::new([a, b, result], &pads);
    let ma = grid.mask(a);
    let mb = grid.mask(b);
    let expected: Vec<bool> = match op {
        BoolOpKind::And => ma.iter().zip(&mb).map(|(x, y)| *x && *y).collect(),
        BoolOpKind::Or => ma.iter().zip(&mb).map(|(x, y)| *x || *y).collect(),
        BoolOpKind::Not => ma.iter().zip(&mb).map(|(x, y)| *x && !*y).collect(),
        BoolOpKind::Xor => ma.iter().zip(&mb).map(|(x, y)| *x != *y).collect(),
        BoolOpKind::Heal => ma.clone(),
        BoolOpKind::Size => grid.offset(&ma, delta),
        BoolOpKind::Touch => {
            let mut acc = vec![false; ma.len()];
            for p in a {
                let mp = grid.mask(std::slice::from_ref(p));
                if grid.touches(&mp, &mb) {
                    for (x, y) in acc.iter_mut().zip(mp) {
                        *x |= y;
                    }
                }
            }
            acc
        }
    };
    (expected, grid.mask(result))
}

pub fn random_rect(rng: &mut impl Rng, span: i64, max_side: i64) -> Polygon {
    let x = rng.random_range(0..span);
    let y = rng.random_range(0..span);
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let p = Polygon::rect(x, y, x + w, y + h);
    if rng.random_bool(0.5) {
        p.reversed()
    } else {
        p
    }
}

/// Closed orthogonal walk; usually self-intersecting.
pub fn random_walk(rng: &mut impl Rng, span: i64, reach: i64) -> Polygon {
    let m = rng.random_range(2..6);
    let cx = rng.random_range(0..span);
    let cy = rng.random_range(0..span);
    let xs: Vec<i64> = (0..m).map(|_| cx + rng.random_range(-reach..=reach)).collect();
    let ys: Vec<i64> = (0..m).map(|_| cy + rng.random_range(-reach..=reach)).collect();
    let mut v = Vec::new();
    for i in 0..m {
        v.push(Point::new(xs[i], ys[i]));
        v.push(Point::new(xs[(i + 1) % m], ys[i]));
    }
    Polygon::new(v)
}

/// Random Manhattan layer of `n` polygons, mixing rectangles and walks.
pub fn random_layer(rng: &mut impl Rng, n: usize, span: i64) -> Vec<Polygon> {
    let side = (span / 4).max(2);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.7) {
                random_rect(rng, span, side)
            } else {
                random_walk(rng, span, side)
            }
        })
        .collect()
}
