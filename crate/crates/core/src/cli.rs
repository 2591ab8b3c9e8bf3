//! Command-line front end. `run` maps argv to an exit code: 0 success,
//! 1 domain error, 2 usage error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::ai::{self, ContinuousMaskField, FieldSource};
use crate::bench::{self, Baseline, BenchSuite};
use crate::boolean::{self, BoolOpKind, BoolOptions};
use crate::bvh::{BoxF, Bvh};
use crate::contour::{self, Condition};
use crate::geometry::{bounding_box, validate_layout, CoordPrecision, Layout, Polygon};
use crate::imaging::{self, ImageGrid, ResistImage, Truncation};
use crate::io::{self, Aimg, RunConfig};
use crate::mrc::{self, MrcRuleSet};
use crate::opc;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "LITHO_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "litho", version, about = "Computational lithography toolkit")]
struct Cli {
    /// Parallel width of inner stages (default: $LITHO_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Input file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file; sibling reports are named after it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rule deck JSON (overrides the config's `rules`).
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Layer to operate on (overrides the config's `layer`).
    #[arg(long)]
    layer: Option<String>,
    /// Seed for random choices (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Polygon Boolean of one or two layers.
    Boolean {
        #[command(flatten)]
        io: Common,
        /// AND, OR, NOT (SUB), XOR, HEAL, SIZE, TOUCH.
        #[arg(long)]
        op: String,
        /// Second operand layer for binary ops.
        #[arg(long)]
        with: Option<String>,
        /// SIZE offset in dbu.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        delta: i64,
        /// Name of the result layer.
        #[arg(long, default_value = "RESULT")]
        result: String,
    },
    /// Range query (`x0,y0,x1,y1` in nm) against the polygons of a layer.
    BvhQuery {
        #[command(flatten)]
        io: Common,
        #[arg(long, allow_hyphen_values = true)]
        query: String,
    },
    /// Mask rule check; violations are reported, not failed on.
    MrcCheck {
        #[command(flatten)]
        io: Common,
    },
    /// Aerial (or resist) image of a layer, written as AIMG.
    Image {
        #[command(flatten)]
        io: Common,
        #[arg(long, allow_hyphen_values = true)]
        focus: Option<f64>,
        #[arg(long)]
        dose: Option<f64>,
        /// Write the resist-blurred image instead of the aerial one.
        #[arg(long)]
        resist: bool,
    },
    /// Contours of an AIMG raster, or of a layout's simulated resist image.
    Contour {
        #[command(flatten)]
        io: Common,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        focus: Option<f64>,
        #[arg(long)]
        dose: Option<f64>,
        /// Centre (`x,y` nm) of an AIMG input window.
        #[arg(long, allow_hyphen_values = true)]
        center: Option<String>,
    },
    /// Per-segment EPE of a layout against its own simulated print.
    Measure {
        #[command(flatten)]
        io: Common,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        focus: Option<f64>,
        #[arg(long)]
        dose: Option<f64>,
    },
    /// Through-focus OPC of a target layer.
    Opc {
        #[command(flatten)]
        io: Common,
        /// Iteration cap (overrides the config's `opc.max_iterations`).
        #[arg(long)]
        iterations: Option<usize>,
        /// Exposure dose (overrides the config's `opc.dose`).
        #[arg(long)]
        dose: Option<f64>,
        /// Per-segment initial moves (CSV from `ai-init`).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Warm start from a continuous mask field (AIMG).
    AiInit {
        #[command(flatten)]
        io: Common,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Stage timings and the Amdahl projection.
    Bench {
        /// booleans, bvh, mrc, imaging, end-to-end.
        #[arg(long, default_value = "end-to-end")]
        suite: String,
        /// Comma-separated workload sizes.
        #[arg(long, default_value = "100")]
        sizes: String,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        /// bruteforce or indexed.
        #[arg(long, default_value = "bruteforce")]
        baseline: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a layout and, optionally, a config and a rule deck.
    Validate {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Print the default run configuration and exit.
        #[arg(long)]
        print_defaults: bool,
    },
}

type Fallible<T> = Result<T, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// `out` with its extension replaced by `suffix`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn require_out(c: &Common) -> Fallible<&Path> {
    c.out.as_deref().ok_or_else(|| "--out is required".to_string())
}

struct Ctx {
    cfg: RunConfig,
    rules: MrcRuleSet,
    layer: String,
    seed: u64,
}

fn context(c: &Common) -> Fallible<Ctx> {
    let cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(err)?,
        None => RunConfig::default(),
    };
    let rules = match c.rules.as_ref().or(cfg.rules.as_ref()) {
        Some(p) => io::load_rules(p).map_err(err)?,
        None => MrcRuleSet::default(),
    };
    let layer = c.layer.clone().unwrap_or_else(|| cfg.layer.clone());
    let seed = c.seed.unwrap_or(cfg.seed);
    Ok(Ctx { cfg, rules, layer, seed })
}

fn layer<'a>(layout: &'a Layout, name: &str) -> Fallible<&'a [Polygon]> {
    layout.layer(name).ok_or_else(|| format!("layer `{name}` not found"))
}

fn parse_floats<const N: usize>(s: &str, what: &str) -> Fallible<[f64; N]> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| format!("bad {what} `{s}`"))?;
    v.try_into().map_err(|_| format!("{what} needs {N} comma-separated numbers"))
}

fn bbox_nm(polys: &[Polygon], dbu_per_nm: f64) -> Fallible<([f64; 2], [f64; 2])> {
    let b = bounding_box(polys).map_err(err)?;
    let k = 1.0 / dbu_per_nm;
    Ok(([b.lo.x as f64 * k, b.lo.y as f64 * k], [b.hi.x as f64 * k, b.hi.y as f64 * k]))
}

/// Resist image of a layer at one condition, on a window covering it.
/// Stdout line that tolerates a closed pipe (`litho ... | head`).
fn say(args: std::fmt::Arguments) {
    let _ = writeln!(std::io::stdout().lock(), "{args}");
}

fn simulate(ctx: &Ctx, layout: &Layout, focus: f64, dose: f64) -> Fallible<ResistImage> {
    let m = &ctx.cfg.model;
    m.validate().map_err(err)?;
    let polys = layer(layout, &ctx.layer)?;
    let (lo, hi) = bbox_nm(polys, layout.dbu_per_nm)?;
    let grid = ImageGrid::covering(lo, hi, ctx.cfg.field_pitch_nm, m.guard_band_nm()).map_err(err)?;
    let k = imaging::socs_kernels(m, &grid, focus, Truncation::Energy(m.energy_floor)).map_err(err)?;
    let aerial = imaging::image_socs(&imaging::rasterize_layer(polys, layout.dbu_per_nm, &grid), &k, dose).map_err(err)?;
    Ok(imaging::resist_filter(&aerial, m))
}

fn summary(out: &Path, fields: &[(&str, serde_json::Value)]) -> Fallible<()> {
    let map: BTreeMap<String, serde_json::Value> = fields.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    io::write_summary_json(&sibling(out, "_summary.json"), &map).map_err(err)
}

fn execute(cmd: Command) -> Fallible<()> {
    match cmd {
        Command::Boolean { io: c, op, with, delta, result } => {
            let ctx = context(&c)?;
            let layout = io::load_layout(&c.input).map_err(err)?;
            let op: BoolOpKind = op.parse().map_err(err)?;
            let a = layer(&layout, &ctx.layer)?;
            let b = match (&with, op.is_unary()) {
                (Some(w), _) => Some(layer(&layout, w)?),
                (None, false) => return Err(format!("{op} needs --with <layer>")),
                (None, true) => None,
            };
            let opts = BoolOptions { size_delta: delta, ..Default::default() };
            let polys = boolean::boolean(op, a, b, &opts).map_err(err)?;
            let out = Layout::new(layout.dbu_per_nm).map_err(err)?.with_layer(&result, polys);
            io::save_layout(&out, require_out(&c)?).map_err(err)
        }
        Command::BvhQuery { io: c, query } => {
            let ctx = context(&c)?;
            let layout = io::load_layout(&c.input).map_err(err)?;
            let polys = layer(&layout, &ctx.layer)?;
            let q = parse_floats::<4>(&query, "query box")?;
            let k = layout.dbu_per_nm;
            let qb = BoxF::from_points([q[0] * k, q[1] * k], [q[2] * k, q[3] * k]);
            let boxes: Vec<BoxF> = polys.iter().map(|p| bounding_box(p).map(BoxF::from)).collect::<Result<_, _>>().map_err(err)?;
            let hits = if boxes.is_empty() { Vec::new() } else { Bvh::build(&boxes, 4).map_err(err)?.range_query(&qb) };
            let mut hits = hits;
            hits.sort_unstable();
            let rows = hits.iter().map(|&h| {
                let b = &boxes[h];
                vec![h.to_string(), (b.min[0] / k).to_string(), (b.min[1] / k).to_string(), (b.max[0] / k).to_string(), (b.max[1] / k).to_string()]
            });
            io::write_csv(require_out(&c)?, &["polygon", "x0_nm", "y0_nm", "x1_nm", "y1_nm"], rows).map_err(err)
        }
        Command::MrcCheck { io: c } => {
            let ctx = context(&c)?;
            let layout = io::load_layout(&c.input).map_err(err)?;
            let report = mrc::check_layout(&layout, &ctx.layer, &ctx.rules).map_err(err)?;
            let out = require_out(&c)?;
            io::write_violations_csv(out, &report, layout.dbu_per_nm).map_err(err)?;
            io::write_histogram_csv(&sibling(out, "_histogram.csv"), &report).map_err(err)?;
            eprintln!("{} violation(s)", report.violations.len());
            Ok(())
        }
        Command::Image { io: c, focus, dose, resist } => {
            let ctx = context(&c)?;
            let layout = io::load_layout(&c.input).map_err(err)?;
            let (focus, dose) = (focus.unwrap_or(0.0), dose.unwrap_or(ctx.cfg.model.dose));
            let img = if resist {
                simulate(&ctx, &layout, focus, dose)?
            } else {
                let m = &ctx.cfg.model;
                let polys = layer(&layout, &ctx.layer)?;
                let (lo, hi) = bbox_nm(polys, layout.dbu_per_nm)?;
                let grid = ImageGrid::covering(lo, hi, ctx.cfg.field_pitch_nm, m.guard_band_nm()).map_err(err)?;
                m.validate().map_err(err)?;
                let k = imaging::socs_kernels(m, &grid, focus, Truncation::Energy(m.energy_floor)).map_err(err)?;
                let a = imaging::image_socs(&imaging::rasterize_layer(polys, layout.dbu_per_nm, &grid), &k, dose).map_err(err)?;
                ResistImage { grid, data: a.data, threshold: m.threshold }
            };
            Aimg::from_grid(&img.grid, &img.data).map_err(err)?.save(require_out(&c)?).map_err(err)
        }
        Command::Contour { io: c, threshold, focus, dose, center } => {
            let ctx = context(&c)?;
            let is_aimg = c.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("aimg"));
            let img = if is_aimg {
                let a = Aimg::load(&c.input).map_err(err)?;
                let centre = match &center {
                    Some(s) => parse_floats::<2>(s, "center")?,
                    None => [0.0, 0.0],
                };
                ResistImage { grid: a.grid_centered(centre).map_err(err)?, data: a.data, threshold: ctx.cfg.model.threshold }
            } else {
                let layout = io::load_layout(&c.input).map_err(err)?;
                simulate(&ctx, &layout, focus.unwrap_or(0.0), dose.unwrap_or(ctx.cfg.model.dose))?
            };
            let cs = contour::marching_squares(&img, threshold.unwrap_or(img.threshold)).map_err(err)?;
            io::write_contours_csv(require_out(&c)?, &cs).map_err(err)
        }
        Command::Measure { io: c, threshold, focus, dose } => {
            let ctx = context(&c)?;
            let layout = io::load_layout(&c.input).map_err(err)?;
            let (focus, dose) = (focus.unwrap_or(0.0), dose.unwrap_or(ctx.cfg.model.dose));
            let img = simulate(&ctx, &layout, focus, dose)?;
            let cs = contour::marching_squares(&img, threshold.unwrap_or(img.threshold)).map_err(err)?;
            let mask = opc::segment_layout(&layout, &ctx.layer, ctx.cfg.opc.seg_length_nm).map_err(err)?;
            let records = contour::measure_epe(&cs, &mask, ctx.cfg.opc.search_radius_nm, Condition { focus_nm: focus, dose });
            io::write_epe_csv(require_out(&c)?, &records).map_err(err)
        }
        Command::Opc { io: c, iterations, dose, init } => {
            let mut ctx = context(&c)?;
            if let Some(n) = iterations {
                ctx.cfg.opc.max_iterations = n;
            }
            if let Some(d) = dose {
                ctx.cfg.opc.dose = d;
            }
            let layout = io::load_layout(&c.input).map_err(err)?;
            let init = init.map(|p| io::read_moves_csv(&p)).transpose().map_err(err)?;
            let out = require_out(&c)?;
            let o = opc::run_opc(&layout, &ctx.layer, &ctx.cfg.model, &ctx.rules, &ctx.cfg.opc, init.as_deref()).map_err(err)?;
            io::save_layout(&o.mask.to_layout(&ctx.layer), out).map_err(err)?;
            io::write_iterations_csv(&sibling(out, "_iterations.csv"), &o.reports).map_err(err)?;
            let epe: Vec<_> = o.last.epe.iter().flatten().cloned().collect();
            io::write_epe_csv(&sibling(out, "_epe.csv"), &epe).map_err(err)?;
            io::write_moves_csv(&sibling(out, "_moves.csv"), &o.offsets_nm(), &[]).map_err(err)?;
            let defects: Vec<_> = o.defects.iter().map(|d| d.len()).collect();
            summary(
                out,
                &[
                    ("status", json!(format!("{:?}", o.status))),
                    ("iterations", json!(o.reports.len())),
                    ("converged_at", json!(o.converged_at())),
                    ("defects_f0_fp_fn", json!(defects)),
                    ("seed", json!(ctx.seed)),
                ],
            )?;
            eprintln!("{:?} after {} report(s)", o.status, o.reports.len());
            Ok(())
        }
        Command::AiInit { io: c, field, threshold } => {
            let mut ctx = context(&c)?;
            if let Some(t) = threshold {
                ctx.cfg.extract.binarize_threshold = t;
            }
            let layout = io::load_layout(&c.input).map_err(err)?;
            let base = opc::prepare_mask(&layout, &ctx.layer, &ctx.cfg.opc).map_err(err)?;
            let (lo, hi) = bbox_nm(layer(&layout, &ctx.layer)?, layout.dbu_per_nm)?;
            let a = Aimg::load(&field).map_err(err)?;
            let grid = a.grid_centered([0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]).map_err(err)?;
            let f = ContinuousMaskField::new(grid, a.data, FieldSource::External(field.display().to_string())).map_err(err)?;
            let moves = ai::extract_segment_moves(&f, &base, &ctx.cfg.extract).map_err(err)?;
            let seeded = ai::apply_segment_moves(&base, &moves.moves_nm, &ctx.rules.to_dbu(base.dbu_per_nm)).map_err(err)?;
            let out = require_out(&c)?;
            io::save_layout(&seeded.to_layout(&ctx.layer), out).map_err(err)?;
            io::write_moves_csv(&sibling(out, "_moves.csv"), &moves.moves_nm, &moves.warned).map_err(err)?;
            if !moves.warned.is_empty() {
                eprintln!("{} segment(s) without a field contour in reach; their move is 0", moves.warned.len());
            }
            Ok(())
        }
        Command::Bench { suite, sizes, iterations, baseline, seed, out } => {
            let suite: BenchSuite = suite.parse()?;
            let baseline: Baseline = baseline.parse()?;
            let sizes: Vec<usize> =
                sizes.split(',').map(|s| s.trim().parse::<usize>()).collect::<Result<_, _>>().map_err(|_| format!("bad --sizes `{sizes}`"))?;
            let r = bench::bench(suite, &sizes, iterations, baseline, seed);
            for s in &r.sizes {
                say(format_args!(
                    "{suite} n={} p={:.4} s={:.3} bound={:.4} ceiling={:.4} measured={:.4} within_bound={}",
                    s.size, s.accelerated_fraction, s.component_speedup, s.amdahl_bound, s.amdahl_ceiling, s.measured_speedup, s.within_bound
                ));
            }
            if let Some(out) = out {
                io::write_csv(&out, &["size", "repetition", "stage", "part", "seconds"], r.sample_rows()).map_err(err)?;
                io::write_csv(&sibling(&out, "_stages.csv"), &["size", "stage", "median_s", "fraction", "speedup"], r.stage_rows()).map_err(err)?;
                io::write_csv(
                    &sibling(&out, "_amdahl.csv"),
                    &["size", "accelerated_fraction", "component_speedup", "bound", "ceiling", "measured", "within_bound"],
                    r.amdahl_rows(),
                )
                .map_err(err)?;
            }
            Ok(())
        }
        Command::Validate { input, config, rules, print_defaults } => {
            if print_defaults {
                say(format_args!("{}", RunConfig::default().to_json().map_err(err)?));
                return Ok(());
            }
            if let Some(p) = &config {
                RunConfig::load(p).map_err(err)?;
            }
            if let Some(p) = &rules {
                io::load_rules(p).map_err(err)?;
            }
            if let Some(p) = &input {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                let layout = io::layout_from_json(&text).map_err(err)?;
                let r = validate_layout(&layout, CoordPrecision::Bits64);
                say(format_args!("{} layer(s), {} polygon(s), {} finding(s)", layout.layers.len(), layout.polygon_count(), r.findings.len()));
            }
            Ok(())
        }
    }
}

fn default_workers() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers.or_else(default_workers) {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli.cmd)) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
