//! Synthetic target patterns for the correction suite, benches and examples.

use crate::geometry::{Coord, Layout, Polygon};
use crate::mrc::MrcRuleSet;
use crate::opc::OpcConfig;

pub const LAYER: &str = "M0";
/// Sixteenth-nanometre database unit.
pub const DBU_PER_NM: f64 = 16.0;

fn nm(v: f64) -> Coord {
    (v * DBU_PER_NM).round() as Coord
}

fn rect_nm(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Polygon::rect(nm(x0), nm(y0), nm(x1), nm(y1))
}

fn layout(polys: Vec<Polygon>) -> Layout {
    Layout::new(DBU_PER_NM).expect("positive scale").with_layer(LAYER, polys)
}

/// `count` vertical lines of width `pitch / 2` and length `length`.
pub fn line_space(pitch: f64, count: usize, length: f64) -> Layout {
    let w = pitch / 2.0;
    layout((0..count).map(|k| rect_nm(k as f64 * pitch, 0.0, k as f64 * pitch + w, length)).collect())
}

/// Columns of line pairs meeting end to end across `gap`, flanked by
/// continuous lines at `pitch`.
pub fn tip_to_tip(pitch: f64, gap: f64, length: f64) -> Layout {
    let w = pitch / 2.0;
    let mut polys = vec![
        rect_nm(0.0, 0.0, w, 2.0 * length + gap),
        rect_nm(2.0 * pitch, 0.0, 2.0 * pitch + w, 2.0 * length + gap),
    ];
    polys.push(rect_nm(pitch, 0.0, pitch + w, length));
    polys.push(rect_nm(pitch, length + gap, pitch + w, 2.0 * length + gap));
    layout(polys)
}

/// Nested L shapes at `pitch` with arms of `arm` nm.
pub fn l_shapes(pitch: f64, count: usize, arm: f64) -> Layout {
    let w = pitch / 2.0;
    let polys = (0..count)
        .map(|k| {
            let o = k as f64 * pitch;
            let (x0, y0) = (o, o);
            let (x1, y1) = (arm - o, arm - o);
            Polygon::new(vec![
                crate::geometry::Point::new(nm(x0), nm(y0)),
                crate::geometry::Point::new(nm(x1), nm(y0)),
                crate::geometry::Point::new(nm(x1), nm(y0 + w)),
                crate::geometry::Point::new(nm(x0 + w), nm(y0 + w)),
                crate::geometry::Point::new(nm(x0 + w), nm(y1)),
                crate::geometry::Point::new(nm(x0), nm(y1)),
            ])
        })
        .collect();
    layout(polys)
}

/// Mask rules sized for the synthetic suite.
pub fn rules() -> MrcRuleSet {
    MrcRuleSet {
        min_space: 8.0,
        min_width: 8.0,
        min_internal_c2c: 6.0,
        min_external_c2c: 6.0,
        min_notch: 8.0,
        min_nub: 0.0,
        min_jog: 0.0,
        min_area: 100.0,
    }
}

/// Correction settings for the suite: a ±0.35 nm window, so a converged
/// mask (residual ≤ 0.15 nm, best focus inside the window) also meets a
/// 0.5 nm best-focus bound.
pub fn opc_config() -> OpcConfig {
    OpcConfig { tol_pos: 0.35, tol_neg: -0.35, converge_nm: 0.15, ..OpcConfig::default() }
}

/// The three pitches of the suite.
pub const PITCHES: [f64; 3] = [40.0, 48.0, 56.0];

/// Every suite target: (name, layout).
pub fn all() -> Vec<(String, Layout)> {
    let mut out = Vec::new();
    for p in PITCHES {
        out.push((format!("lines_p{p}"), line_space(p, 5, 160.0)));
        out.push((format!("tip2tip_p{p}"), tip_to_tip(p, p / 2.0, 80.0)));
        out.push((format!("lshape_p{p}"), l_shapes(p, 2, 160.0)));
    }
    out
}
