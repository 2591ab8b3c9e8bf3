//! MRC fixtures: the eight configuration-switch cases and random clean layouts.

use litho::boolean;
use litho::geometry::{Point, Polygon};
use litho::mrc::{check_rules, limit_moves, DbuRules, RuleKind};
use litho::opc::SegmentedMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn deck(space: i64, nub: i64, jog: i64) -> DbuRules {
    DbuRules {
        space,
        width: space,
        internal_c2c: space,
        external_c2c: space,
        notch: space,
        nub,
        jog,
        area: 0,
    }
}

pub fn poly(pts: &[(i64, i64)]) -> Polygon {
    Polygon::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect())
}

/// Segment whose base lies on (x, y), excluding its endpoints.
pub fn at(mask: &SegmentedMask, x: i64, y: i64) -> usize {
    mask.segments
        .iter()
        .position(|s| {
            let (lo_x, hi_x) = (s.p0.x.min(s.p1.x), s.p0.x.max(s.p1.x));
            let (lo_y, hi_y) = (s.p0.y.min(s.p1.y), s.p0.y.max(s.p1.y));
            let on = x >= lo_x && x <= hi_x && y >= lo_y && y <= hi_y;
            on && Point::new(x, y) != s.p0 && Point::new(x, y) != s.p1
        })
        .unwrap_or_else(|| panic!("no segment through ({x}, {y})"))
}

pub fn clean(mask: &SegmentedMask, moves: &[i64], rules: &DbuRules) -> bool {
    check_rules(&mask.reconstruct_moved(moves), rules).unwrap().is_clean()
}

pub fn allowed(mask: &SegmentedMask, prop: &[i64], rules: &DbuRules) -> Vec<i64> {
    limit_moves(mask, prop, rules).unwrap().iter().map(|l| l.allowed).collect()
}

pub struct SwitchCase {
    pub name: &'static str,
    pub polys: Vec<Polygon>,
    pub rules: DbuRules,
    pub seg_len: f64,
    pub moves: Vec<((i64, i64), i64)>,
    /// Violation produced by applying the raw proposal.
    pub naive: RuleKind,
}

pub fn switch_cases() -> Vec<SwitchCase> {
    // Bar with a notch from the top and one from the bottom.
    let bar = |top: (i64, i64, i64), bottom: (i64, i64, i64)| {
        poly(&[
            (0, 0),
            (bottom.0, 0),
            (bottom.0, bottom.2),
            (bottom.1, bottom.2),
            (bottom.1, 0),
            (100, 0),
            (100, 60),
            (top.1, 60),
            (top.1, top.2),
            (top.0, top.2),
            (top.0, 60),
            (0, 60),
        ])
    };
    vec![
        SwitchCase {
            name: "a: internal E2E to internal C2C",
            polys: vec![bar((20, 45, 32), (40, 70, 20))],
            rules: deck(10, 0, 0),
            seg_len: 1000.0,
            moves: vec![((45, 40), 6), ((30, 32), -5)],
            naive: RuleKind::InternalC2C,
        },
        SwitchCase {
            name: "b: internal C2C to internal E2E",
            polys: vec![bar((20, 38, 32), (42, 70, 20))],
            rules: deck(10, 0, 0),
            seg_len: 1000.0,
            moves: vec![((38, 40), -6), ((30, 32), -5)],
            naive: RuleKind::Width,
        },
        SwitchCase {
            name: "c: external C2C to external E2E",
            polys: vec![Polygon::rect(0, 0, 30, 30), Polygon::rect(40, 38, 70, 68)],
            rules: deck(10, 0, 0),
            seg_len: 1000.0,
            moves: vec![((30, 15), 12)],
            naive: RuleKind::Space,
        },
        SwitchCase {
            name: "d: external C2C from notch flip",
            polys: vec![
                poly(&[(0, 0), (60, 0), (60, 30), (30, 30), (30, 25), (20, 25), (20, 30), (0, 30)]),
                Polygon::rect(36, 42, 60, 70),
            ],
            rules: deck(10, 0, 0),
            seg_len: 1000.0,
            moves: vec![((25, 25), 12)],
            naive: RuleKind::ExternalC2C,
        },
        SwitchCase {
            name: "e: internal C2C from nub flip",
            polys: vec![poly(&[
                (0, 0),
                (44, 0),
                (44, 6),
                (60, 6),
                (60, 0),
                (80, 0),
                (80, 20),
                (40, 20),
                (40, 25),
                (30, 25),
                (30, 20),
                (0, 20),
            ])],
            rules: deck(10, 0, 0),
            seg_len: 1000.0,
            moves: vec![((35, 25), -14)],
            naive: RuleKind::InternalC2C,
        },
        SwitchCase {
            name: "f: external E2E to external C2C",
            polys: vec![Polygon::rect(0, 0, 30, 30), Polygon::rect(25, 42, 55, 72)],
            rules: deck(10, 0, 0),
            seg_len: 1000.0,
            moves: vec![((30, 15), -8), ((15, 30), 5)],
            naive: RuleKind::ExternalC2C,
        },
        SwitchCase {
            name: "g: jog from notch flip",
            polys: vec![poly(&[(0, 0), (60, 0), (60, 30), (35, 30), (35, 22), (20, 22), (20, 30), (0, 30)])],
            rules: deck(10, 0, 4),
            seg_len: 1000.0,
            moves: vec![((27, 22), 10)],
            naive: RuleKind::Jog,
        },
        SwitchCase {
            name: "h: nub from jog flip",
            polys: vec![poly(&[(0, 0), (60, 0), (60, 25), (20, 25), (20, 30), (0, 30)])],
            rules: deck(10, 12, 4),
            seg_len: 10.0,
            moves: vec![((25, 25), 8)],
            naive: RuleKind::Nub,
        },
    ]
}

/// Random MRC-clean layout: healed unions of lattice cells with random
/// insets, rejected until clean.
pub fn clean_layout(seed: u64, rules: &DbuRules) -> Vec<Polygon> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut cells = Vec::new();
        let k = rng.random_range(2..5);
        for i in 0..k {
            for j in 0..k {
                if rng.random_bool(0.55) {
                    let (x, y) = (i * 40, j * 40);
                    let inset = |r: &mut ChaCha8Rng| if r.random_bool(0.5) { 0 } else { r.random_range(6..10) };
                    cells.push(Polygon::rect(x + inset(&mut rng), y + inset(&mut rng), x + 40 - inset(&mut rng), y + 40 - inset(&mut rng)));
                }
            }
        }
        let polys = boolean::heal(&cells);
        if !polys.is_empty() && check_rules(&polys, rules).unwrap().is_clean() {
            return polys;
        }
    }
}

pub fn random_moves(mask: &SegmentedMask, seed: u64, reach: i64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..mask.len()).map(|_| if rng.random_bool(0.8) { rng.random_range(-reach..=reach) } else { 0 }).collect()
}

pub fn mirror(p: &Polygon) -> Polygon {
    Polygon::new(p.vertices.iter().rev().map(|v| Point::new(-v.x, v.y)).collect())
}
