//! Stage timing and Amdahl bookkeeping.
//!
//! Every stage is split into a shared part, run once per repetition, and an
//! optional component that has a brute-force and an indexed implementation.
//! The baseline pipeline runs the chosen baseline component, the accelerated
//! pipeline the indexed one; shared parts are charged to both.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boolean::{self, segment_contact, SegmentContact};
use crate::bvh::{point_segment_distance, BoxF, Bvh, SegmentIndex};
use crate::contour;
use crate::geometry::{bounding_box, Edge, Polygon};
use crate::imaging::{self, ImageGrid, MaskField, OpticalModel, Truncation};
use crate::mrc::{self, MrcRuleSet};
use crate::opc::{effective_epe, propose_moves, DriverMode, EpeMode};

/// End-to-end bound `1 / ((1 - p) + p / s)` for an accelerated fraction `p`
/// sped up by `s`. `s = inf` gives the ceiling `1 / (1 - p)`.
pub fn amdahl_bound(p: f64, s: f64) -> f64 {
    1.0 / ((1.0 - p) + p / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Booleans,
    Bvh,
    Mrc,
    Imaging,
    Contour,
    Controller,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Booleans, Stage::Bvh, Stage::Mrc, Stage::Imaging, Stage::Contour, Stage::Controller];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Booleans => "booleans",
            Stage::Bvh => "bvh",
            Stage::Mrc => "mrc",
            Stage::Imaging => "imaging",
            Stage::Contour => "contour",
            Stage::Controller => "controller",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchSuite {
    Booleans,
    Bvh,
    Mrc,
    Imaging,
    EndToEnd,
}

impl BenchSuite {
    pub fn stages(self) -> Vec<Stage> {
        match self {
            BenchSuite::Booleans => vec![Stage::Booleans],
            BenchSuite::Bvh => vec![Stage::Bvh],
            BenchSuite::Mrc => vec![Stage::Mrc],
            BenchSuite::Imaging => vec![Stage::Imaging],
            BenchSuite::EndToEnd => Stage::ALL.to_vec(),
        }
    }
}

impl FromStr for BenchSuite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "booleans" => BenchSuite::Booleans,
            "bvh" => BenchSuite::Bvh,
            "mrc" => BenchSuite::Mrc,
            "imaging" => BenchSuite::Imaging,
            "end-to-end" => BenchSuite::EndToEnd,
            _ => return Err(format!("unknown suite `{s}` (booleans, bvh, mrc, imaging, end-to-end)")),
        })
    }
}

impl fmt::Display for BenchSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BenchSuite::Booleans => "booleans",
            BenchSuite::Bvh => "bvh",
            BenchSuite::Mrc => "mrc",
            BenchSuite::Imaging => "imaging",
            BenchSuite::EndToEnd => "end-to-end",
        };
        f.write_str(s)
    }
}

/// Implementation charged to the baseline pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Bruteforce,
    Indexed,
}

impl FromStr for Baseline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bruteforce" => Ok(Baseline::Bruteforce),
            "indexed" => Ok(Baseline::Indexed),
            _ => Err(format!("unknown baseline `{s}` (bruteforce, indexed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Shared,
    Baseline,
    Accelerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub repetition: usize,
    pub stage: Stage,
    pub part: Part,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    /// Median over repetitions of the stage's baseline-pipeline time.
    pub median_s: f64,
    /// Share of the baseline total.
    pub fraction: f64,
    /// Median component speedup; 1 for stages without a component.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub size: usize,
    pub stages: Vec<StageTiming>,
    pub baseline_total_s: f64,
    pub accelerated_total_s: f64,
    /// Accelerated fraction `p` of the baseline pipeline.
    pub accelerated_fraction: f64,
    /// Speedup `s` of the accelerated components taken together.
    pub component_speedup: f64,
    pub amdahl_bound: f64,
    /// `1 / (1 - p)`: the bound for an infinitely fast component.
    pub amdahl_ceiling: f64,
    pub measured_speedup: f64,
    /// Per-repetition `measured <= bound` (relative slack 1e-12 for rounding).
    pub within_bound: bool,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: BenchSuite,
    pub baseline: Baseline,
    pub repetitions: usize,
    pub seed: u64,
    pub sizes: Vec<SizeReport>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Synthetic inputs for all stages at one size: `size` random rectangles
/// on a square field, as many range queries, and a small imaging window.
struct Workload {
    rects: Vec<Polygon>,
    edges: Vec<Edge>,
    boxes: Vec<BoxF>,
    queries: Vec<BoxF>,
    model: OpticalModel,
    mask: MaskField,
    epe: [Vec<f64>; 3],
}

impl Workload {
    fn new(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = ((size as f64).sqrt() * 200.0).max(400.0) as i64;
        let rects: Vec<Polygon> = (0..size)
            .map(|_| {
                let (x, y) = (rng.random_range(0..span), rng.random_range(0..span));
                Polygon::rect(x, y, x + rng.random_range(20..120), y + rng.random_range(20..120))
            })
            .collect();
        let edges: Vec<Edge> = rects.iter().flat_map(|p| p.edges().collect::<Vec<_>>()).collect();
        let boxes = rects.iter().map(|p| BoxF::from(bounding_box(p).expect("non-empty polygon"))).collect();
        let queries = (0..size)
            .map(|_| {
                let (x, y) = (rng.random_range(0.0..span as f64), rng.random_range(0.0..span as f64));
                BoxF::new([x, y], [x + 150.0, y + 150.0])
            })
            .collect();
        // 32 x 32 window, 4 nm pixels, lines and spaces
        let grid = ImageGrid::new(32, 32, 4.0, [0.0, 0.0]).expect("valid grid");
        let data: Vec<f64> = (0..grid.len()).map(|p| if (p % 32) / 5 % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let epe = [0, 1, 2].map(|_| (0..4 * size).map(|_| rng.random_range(-2.0..2.0)).collect());
        Workload { rects, edges, boxes, queries, model: OpticalModel::default(), mask: MaskField::from_real(grid, &data), epe }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn touching_pairs_brute(edges: &[Edge]) -> usize {
    let mut n = 0;
    for i in 0..edges.len() {
        for j in i + 1..edges.len() {
            if !matches!(segment_contact(&edges[i], &edges[j]), SegmentContact::None) {
                n += 1;
            }
        }
    }
    n
}

fn touching_pairs_indexed(edges: &[Edge]) -> usize {
    let boxes: Vec<BoxF> = edges.iter().map(|e| BoxF::from(e.bbox())).collect();
    let bvh = Bvh::build(&boxes, 4).expect("non-empty");
    let mut n = 0;
    for (i, e) in edges.iter().enumerate() {
        bvh.for_each_overlap(&boxes[i], |j| {
            if j > i && !matches!(segment_contact(e, &edges[j]), SegmentContact::None) {
                n += 1;
            }
        });
    }
    n
}

fn range_brute(boxes: &[BoxF], queries: &[BoxF]) -> usize {
    queries.iter().map(|q| boxes.iter().filter(|b| b.overlaps(q)).count()).sum()
}

fn range_indexed(boxes: &[BoxF], queries: &[BoxF]) -> usize {
    let bvh = Bvh::build(boxes, 4).expect("non-empty");
    queries.iter().map(|q| bvh.range_query(q).len()).sum()
}

fn nearest_brute(segs: &[[[f64; 2]; 2]], sites: &[[f64; 2]]) -> f64 {
    sites.iter().map(|&p| segs.iter().map(|s| point_segment_distance(p, s)).fold(f64::INFINITY, f64::min)).sum()
}

fn nearest_indexed(segs: &[[[f64; 2]; 2]], sites: &[[f64; 2]]) -> f64 {
    let idx = SegmentIndex::new(segs.to_vec(), 4).expect("non-empty");
    sites.iter().map(|&p| idx.nearest(p, f64::INFINITY).map_or(f64::INFINITY, |h| h.distance)).sum()
}

/// Runs the stages of one repetition, returning the samples. Panics if a
/// baseline and an accelerated component disagree.
fn run_stage(w: &Workload, stage: Stage, baseline: Baseline, rep: usize, out: &mut Vec<Sample>) {
    let mut push = |part, seconds| out.push(Sample { repetition: rep, stage, part, seconds });
    match stage {
        Stage::Booleans => {
            let (_, t) = timed(|| boolean::heal(&w.rects));
            push(Part::Shared, t);
            let (a, ta) = timed(|| touching_pairs_indexed(&w.edges));
            let (b, tb) = match baseline {
                Baseline::Bruteforce => timed(|| touching_pairs_brute(&w.edges)),
                Baseline::Indexed => timed(|| touching_pairs_indexed(&w.edges)),
            };
            assert_eq!(a, b, "edge contact counts differ");
            push(Part::Baseline, tb);
            push(Part::Accelerated, ta);
        }
        Stage::Bvh => {
            let (a, ta) = timed(|| range_indexed(&w.boxes, &w.queries));
            let (b, tb) = match baseline {
                Baseline::Bruteforce => timed(|| range_brute(&w.boxes, &w.queries)),
                Baseline::Indexed => timed(|| range_indexed(&w.boxes, &w.queries)),
            };
            assert_eq!(a, b, "range query counts differ");
            push(Part::Baseline, tb);
            push(Part::Accelerated, ta);
        }
        Stage::Mrc => {
            let rules = MrcRuleSet { min_space: 10.0, min_width: 10.0, min_area: 400.0, ..Default::default() }.to_dbu(1.0);
            let (_, t) = timed(|| mrc::check_rules(&w.rects, &rules).map(|r| r.violations.len()));
            push(Part::Shared, t);
        }
        Stage::Imaging => {
            let m = &w.model;
            let grid = w.mask.grid;
            let (tcc, t_tcc) = timed(|| imaging::build_tcc(m, &grid, 0.0).expect("tcc"));
            push(Part::Shared, t_tcc);
            // SOCS: decompose + image; Hopkins: direct double sum.
            let socs = || {
                let k = imaging::decompose_tcc(&tcc, Truncation::Energy(m.energy_floor)).expect("socs");
                imaging::image_socs(&w.mask, &k, 1.0).expect("image")
            };
            let (_, ta) = timed(socs);
            let (_, tb) = match baseline {
                Baseline::Bruteforce => timed(|| imaging::image_hopkins_direct(&w.mask, &tcc, 1.0).expect("hopkins").0),
                Baseline::Indexed => timed(socs),
            };
            push(Part::Baseline, tb);
            push(Part::Accelerated, ta);
        }
        Stage::Contour => {
            let grid = w.mask.grid;
            let ((segs, sites), t) = timed(|| {
                let img = imaging::ResistImage { grid, data: w.mask.data.iter().map(|c| c.re).collect(), threshold: 0.5 };
                let cs = contour::marching_squares(&img, 0.5).expect("contour");
                let segs: Vec<[[f64; 2]; 2]> = cs.edges().into_iter().map(|(e, _)| e).collect();
                let sites: Vec<[f64; 2]> = (0..grid.len()).map(|p| grid.center(p % grid.nx, p / grid.nx)).collect();
                (segs, sites)
            });
            push(Part::Shared, t);
            let (a, ta) = timed(|| nearest_indexed(&segs, &sites));
            let (b, tb) = match baseline {
                Baseline::Bruteforce => timed(|| nearest_brute(&segs, &sites)),
                Baseline::Indexed => timed(|| nearest_indexed(&segs, &sites)),
            };
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "nearest distances differ");
            push(Part::Baseline, tb);
            push(Part::Accelerated, ta);
        }
        Stage::Controller => {
            let (_, t) = timed(|| {
                let drivers = vec![DriverMode::Full; w.epe[0].len()];
                let eff: Vec<f64> =
                    effective_epe(&w.epe[0], &w.epe[1], &w.epe[2], 0.5, -0.5, &drivers, EpeMode::ThroughFocus)
                        .into_iter()
                        .map(|(e, _)| e)
                        .collect();
                propose_moves(&eff, &vec![1.0; eff.len()], 1.0, 2.0)
            });
            push(Part::Shared, t);
        }
    }
}

fn summarize(size: usize, stages: &[Stage], repetitions: usize, samples: Vec<Sample>) -> SizeReport {
    let sum = |rep: usize, stage: Option<Stage>, parts: &[Part]| -> f64 {
        samples
            .iter()
            .filter(|s| s.repetition == rep && stage.is_none_or(|st| s.stage == st) && parts.contains(&s.part))
            .map(|s| s.seconds)
            .sum()
    };
    let mut p_r = Vec::new();
    let mut s_r = Vec::new();
    let mut bound_r = Vec::new();
    let mut measured_r = Vec::new();
    let mut base_r = Vec::new();
    let mut acc_r = Vec::new();
    let mut within = true;
    for rep in 0..repetitions {
        let shared = sum(rep, None, &[Part::Shared]);
        let comp_base = sum(rep, None, &[Part::Baseline]);
        let comp_acc = sum(rep, None, &[Part::Accelerated]);
        let (base, acc) = (shared + comp_base, shared + comp_acc);
        let p = if base > 0.0 { comp_base / base } else { 0.0 };
        let s = if comp_acc > 0.0 { comp_base / comp_acc } else if comp_base > 0.0 { f64::INFINITY } else { 1.0 };
        let bound = amdahl_bound(p, s);
        let measured = if acc > 0.0 { base / acc } else { 1.0 };
        within &= measured <= bound * (1.0 + 1e-12);
        p_r.push(p);
        s_r.push(s);
        bound_r.push(bound);
        measured_r.push(measured);
        base_r.push(base);
        acc_r.push(acc);
    }
    let stage_base: Vec<f64> =
        stages.iter().map(|&st| median(&(0..repetitions).map(|r| sum(r, Some(st), &[Part::Shared, Part::Baseline])).collect::<Vec<_>>())).collect();
    let total: f64 = stage_base.iter().sum();
    let timings = stages
        .iter()
        .zip(&stage_base)
        .map(|(&stage, &median_s)| {
            let sp: Vec<f64> = (0..repetitions)
                .map(|r| {
                    let (b, a) = (sum(r, Some(stage), &[Part::Baseline]), sum(r, Some(stage), &[Part::Accelerated]));
                    if a > 0.0 { b / a } else { 1.0 }
                })
                .collect();
            StageTiming {
                stage,
                median_s,
                fraction: if total > 0.0 { median_s / total } else { 1.0 / stages.len() as f64 },
                speedup: median(&sp),
            }
        })
        .collect();
    let p = median(&p_r);
    SizeReport {
        size,
        stages: timings,
        baseline_total_s: median(&base_r),
        accelerated_total_s: median(&acc_r),
        accelerated_fraction: p,
        component_speedup: median(&s_r),
        amdahl_bound: median(&bound_r),
        amdahl_ceiling: amdahl_bound(p, f64::INFINITY),
        measured_speedup: median(&measured_r),
        within_bound: within,
        samples,
    }
}

/// Times `suite` at each size. All samples are kept; medians are reported.
pub fn bench(suite: BenchSuite, sizes: &[usize], repetitions: usize, baseline: Baseline, seed: u64) -> BenchReport {
    let repetitions = repetitions.max(1);
    let stages = suite.stages();
    let sizes = sizes
        .iter()
        .map(|&size| {
            let w = Workload::new(size.max(1), seed);
            let mut samples = Vec::new();
            for rep in 0..repetitions {
                for &st in &stages {
                    run_stage(&w, st, baseline, rep, &mut samples);
                }
            }
            summarize(size, &stages, repetitions, samples)
        })
        .collect();
    BenchReport { suite, baseline, repetitions, seed, sizes }
}

impl BenchReport {
    /// Rows `size, repetition, stage, part, seconds`.
    pub fn sample_rows(&self) -> Vec<Vec<String>> {
        self.sizes
            .iter()
            .flat_map(|r| {
                r.samples.iter().map(move |s| {
                    let part = match s.part {
                        Part::Shared => "shared",
                        Part::Baseline => "baseline",
                        Part::Accelerated => "accelerated",
                    };
                    vec![r.size.to_string(), s.repetition.to_string(), s.stage.name().to_string(), part.to_string(), s.seconds.to_string()]
                })
            })
            .collect()
    }

    /// Rows `size, stage, median_s, fraction, speedup`.
    pub fn stage_rows(&self) -> Vec<Vec<String>> {
        self.sizes
            .iter()
            .flat_map(|r| {
                r.stages.iter().map(move |t| {
                    vec![r.size.to_string(), t.stage.name().to_string(), t.median_s.to_string(), t.fraction.to_string(), t.speedup.to_string()]
                })
            })
            .collect()
    }

    /// Rows `size, p, s, bound, ceiling, measured, within_bound`.
    pub fn amdahl_rows(&self) -> Vec<Vec<String>> {
        self.sizes
            .iter()
            .map(|r| {
                vec![
                    r.size.to_string(),
                    r.accelerated_fraction.to_string(),
                    r.component_speedup.to_string(),
                    r.amdahl_bound.to_string(),
                    r.amdahl_ceiling.to_string(),
                    r.measured_speedup.to_string(),
                    r.within_bound.to_string(),
                ]
            })
            .collect()
    }
}
