//! File formats: layout and configuration JSON, the AIMG raster, and the CSV
//! reports. Every artifact carries `format_version`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ai::ExtractConfig;
use crate::contour::{ContourSet, EpeRecord};
use crate::geometry::{validate_layout, Coord, CoordPrecision, Layout, Point, Polygon};
use crate::imaging::{ImageGrid, OpticalModel, SourceSpec};
use crate::mrc::{MrcReport, MrcRuleSet, HISTOGRAM_BINS, HISTOGRAM_BIN_WIDTH};
use crate::opc::{IterationReport, OpcConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const AIMG_MAGIC: &[u8; 4] = b"AIMG";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("format_version {found} not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("layer `{layer}` polygon {polygon} vertex {vertex}: coordinate {value} is not an integer")]
    NonInteger { layer: String, polygon: usize, vertex: usize, value: String },
    #[error("layer `{layer}` polygon {polygon} vertex {vertex}: coordinate {value} overflows the coordinate range")]
    Overflow { layer: String, polygon: usize, vertex: usize, value: String },
    #[error("layer `{0}` appears twice")]
    DuplicateLayer(String),
    #[error("invalid layout: {0}")]
    Invalid(String),
    #[error("AIMG: {0}")]
    Aimg(String),
    #[error("source CSV: {0}")]
    Source(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| IoError::File { path: path.to_owned(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| IoError::File { path: path.to_owned(), source })
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(IoError::Version { found });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Layout JSON

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile<C> {
    name: String,
    polygons: Vec<Vec<[C; 2]>>,
}

/// On-disk layout document.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile<C> {
    format_version: u32,
    dbu_per_nm: f64,
    layers: Vec<LayerFile<C>>,
}

fn coord(v: &serde_json::Number, layer: &str, polygon: usize, vertex: usize) -> Result<Coord> {
    let at = |value: String, overflow: bool| {
        let (layer, value) = (layer.to_string(), value);
        if overflow {
            IoError::Overflow { layer, polygon, vertex, value }
        } else {
            IoError::NonInteger { layer, polygon, vertex, value }
        }
    };
    let limit = CoordPrecision::Bits64.limit();
    match v.as_i64() {
        Some(c) if c.abs() <= limit => Ok(c),
        Some(_) => Err(at(v.to_string(), true)),
        None if v.is_u64() => Err(at(v.to_string(), true)),
        None => Err(at(v.to_string(), false)),
    }
}

pub fn layout_from_json(text: &str) -> Result<Layout> {
    let file: LayoutFile<serde_json::Number> = serde_json::from_str(text)?;
    check_version(file.format_version)?;
    let mut layout = Layout::new(file.dbu_per_nm).map_err(|e| IoError::Invalid(e.to_string()))?;
    for layer in file.layers {
        let mut polys = Vec::with_capacity(layer.polygons.len());
        for (pi, ring) in layer.polygons.iter().enumerate() {
            let mut verts = Vec::with_capacity(ring.len());
            for (vi, [x, y]) in ring.iter().enumerate() {
                verts.push(Point::new(coord(x, &layer.name, pi, vi)?, coord(y, &layer.name, pi, vi)?));
            }
            polys.push(Polygon::new(verts));
        }
        if layout.layers.insert(layer.name.clone(), polys).is_some() {
            return Err(IoError::DuplicateLayer(layer.name));
        }
    }
    let report = validate_layout(&layout, CoordPrecision::Bits64);
    if let Some(f) = report.findings.first() {
        return Err(IoError::Invalid(format!(
            "layer `{}` polygon {}: {} ({} finding(s))",
            f.layer,
            f.polygon,
            f.detail,
            report.findings.len()
        )));
    }
    Ok(layout)
}

pub fn layout_to_json(layout: &Layout) -> Result<String> {
    let file = LayoutFile {
        format_version: FORMAT_VERSION,
        dbu_per_nm: layout.dbu_per_nm,
        layers: layout
            .layers
            .iter()
            .map(|(name, polys)| LayerFile {
                name: name.clone(),
                polygons: polys.iter().map(|p| p.vertices.iter().map(|v| [v.x, v.y]).collect()).collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn load_layout(path: &Path) -> Result<Layout> {
    let bytes = read_bytes(path)?;
    layout_from_json(&String::from_utf8_lossy(&bytes))
}

pub fn save_layout(layout: &Layout, path: &Path) -> Result<()> {
    write_bytes(path, layout_to_json(layout)?.as_bytes())
}

// ---------------------------------------------------------------------------
// Rule deck and run configuration

/// Rule deck in nm. An absent key disables the rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleDeckFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_space: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_internal_c2c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_external_c2c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_notch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_nub: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_jog: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_area: Option<f64>,
}

pub fn rules_from_json(text: &str) -> Result<MrcRuleSet> {
    let f: RuleDeckFile = serde_json::from_str(text)?;
    check_version(f.format_version)?;
    let all = [f.min_space, f.min_width, f.min_internal_c2c, f.min_external_c2c, f.min_notch, f.min_nub, f.min_jog, f.min_area];
    if let Some(v) = all.iter().flatten().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(IoError::Invalid(format!("rule value {v} must be finite and >= 0")));
    }
    Ok(MrcRuleSet {
        min_space: f.min_space.unwrap_or(0.0),
        min_width: f.min_width.unwrap_or(0.0),
        min_internal_c2c: f.min_internal_c2c.unwrap_or(0.0),
        min_external_c2c: f.min_external_c2c.unwrap_or(0.0),
        min_notch: f.min_notch.unwrap_or(0.0),
        min_nub: f.min_nub.unwrap_or(0.0),
        min_jog: f.min_jog.unwrap_or(0.0),
        min_area: f.min_area.unwrap_or(0.0),
    })
}

pub fn rules_to_json(r: &MrcRuleSet) -> Result<String> {
    let on = |v: f64| (v > 0.0).then_some(v);
    let f = RuleDeckFile {
        format_version: FORMAT_VERSION,
        min_space: on(r.min_space),
        min_width: on(r.min_width),
        min_internal_c2c: on(r.min_internal_c2c),
        min_external_c2c: on(r.min_external_c2c),
        min_notch: on(r.min_notch),
        min_nub: on(r.min_nub),
        min_jog: on(r.min_jog),
        min_area: on(r.min_area),
    };
    Ok(serde_json::to_string_pretty(&f)?)
}

pub fn load_rules(path: &Path) -> Result<MrcRuleSet> {
    rules_from_json(&String::from_utf8_lossy(&read_bytes(path)?))
}

/// Everything a CLI run needs besides its input files. Unknown keys are
/// rejected at every level; any absent key takes the default shown by
/// `litho validate --print-defaults`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    /// Layer the commands operate on.
    pub layer: String,
    pub model: OpticalModel,
    pub opc: OpcConfig,
    /// Rule deck path, resolved against the config file's directory. The
    /// `--rules` flag takes precedence.
    pub rules: Option<PathBuf>,
    /// Freeform source CSV; replaces `model.source` when set.
    pub source_csv: Option<PathBuf>,
    /// Pixel pitch of rasters written by `image` and read by `ai-init`.
    pub field_pitch_nm: f64,
    /// Gaussian sigma of the rounded-target reference.
    pub z_round_sigma_nm: f64,
    pub extract: ExtractConfig,
    /// Seed for every random choice a command makes.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: FORMAT_VERSION,
            layer: crate::suite::LAYER.to_string(),
            model: OpticalModel::default(),
            opc: OpcConfig::default(),
            rules: None,
            source_csv: None,
            field_pitch_nm: 1.0,
            z_round_sigma_nm: 4.0,
            extract: ExtractConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        check_version(c.format_version)?;
        Ok(c)
    }

    /// Reads a config and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_json(&String::from_utf8_lossy(&read_bytes(path)?))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.rules, &mut c.source_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if let Some(src) = &c.source_csv {
            c.model.source = load_source_csv(src)?;
        }
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// AIMG raster

/// A raster as stored on disk. The file has no origin; the grid is placed
/// centred on a point chosen by the reader, normally the layout bbox centre.
#[derive(Debug, Clone, PartialEq)]
pub struct Aimg {
    pub width: u32,
    pub height: u32,
    pub pitch_nm: f64,
    pub data: Vec<f64>,
}

impl Aimg {
    pub fn from_grid(grid: &ImageGrid, data: &[f64]) -> Result<Self> {
        let (width, height) = (u32::try_from(grid.nx), u32::try_from(grid.ny));
        match (width, height) {
            (Ok(width), Ok(height)) if data.len() == grid.len() => {
                Ok(Aimg { width, height, pitch_nm: grid.pitch_nm, data: data.to_vec() })
            }
            _ => Err(IoError::Aimg(format!("{} samples for a {}x{} grid", data.len(), grid.nx, grid.ny))),
        }
    }

    /// Grid of this raster centred on `center_nm`.
    pub fn grid_centered(&self, center_nm: [f64; 2]) -> Result<ImageGrid> {
        let (w, h) = (self.width as f64 * self.pitch_nm, self.height as f64 * self.pitch_nm);
        ImageGrid::new(self.width as usize, self.height as usize, self.pitch_nm, [center_nm[0] - w / 2.0, center_nm[1] - h / 2.0])
            .map_err(|e| IoError::Aimg(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.data.len());
        out.extend_from_slice(AIMG_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.pitch_nm.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() < n {
                return Err(IoError::Aimg("truncated file".into()));
            }
            let (head, rest) = bytes.split_at(n);
            bytes = rest;
            Ok(head)
        };
        if take(4)? != AIMG_MAGIC {
            return Err(IoError::Aimg("bad magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
        let width = u32_at(take(4)?);
        let height = u32_at(take(4)?);
        let pitch_nm = f64_at(take(8)?);
        if !(pitch_nm.is_finite() && pitch_nm > 0.0) {
            return Err(IoError::Aimg(format!("pitch {pitch_nm}")));
        }
        let n = (width as usize)
            .checked_mul(height as usize)
            .ok_or_else(|| IoError::Aimg("size overflow".into()))?;
        let body = take(n.checked_mul(8).ok_or_else(|| IoError::Aimg("size overflow".into()))?)?;
        let data = body.chunks_exact(8).map(f64_at).collect();
        if !bytes.is_empty() {
            return Err(IoError::Aimg(format!("{} trailing bytes", bytes.len())));
        }
        Ok(Aimg { width, height, pitch_nm, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|source| IoError::File { path: path.to_owned(), source })?;
        f.write_all(&self.to_bytes()).map_err(|source| IoError::File { path: path.to_owned(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = fs::File::open(path).map_err(|source| IoError::File { path: path.to_owned(), source })?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|source| IoError::File { path: path.to_owned(), source })?;
        Self::from_bytes(&buf)
    }
}

// ---------------------------------------------------------------------------
// CSV

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|source| IoError::File { path: path.to_owned(), source })?;
    Ok(csv::Writer::from_writer(f))
}

/// Writes `rows` under `header`, with a leading `format_version` column.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(std::iter::once("format_version").chain(header.iter().copied()))?;
    let version = FORMAT_VERSION.to_string();
    for row in rows {
        w.write_record(std::iter::once(version.clone()).chain(row))?;
    }
    w.flush().map_err(|source| IoError::File { path: path.to_owned(), source })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_violations_csv(path: &Path, report: &MrcReport, dbu_per_nm: f64) -> Result<()> {
    write_csv(
        path,
        &["rule", "measured_nm", "threshold_nm", "ring_a", "ring_b", "item_a", "item_b", "x_nm", "y_nm"],
        report.violations.iter().map(|v| {
            // area is in dbu^2
            let scale = if v.kind == crate::mrc::RuleKind::Area { dbu_per_nm * dbu_per_nm } else { dbu_per_nm };
            vec![
                v.kind.name().to_string(),
                (v.measured / scale).to_string(),
                (v.threshold / scale).to_string(),
                v.rings[0].to_string(),
                v.rings[1].to_string(),
                v.items[0].to_string(),
                v.items[1].to_string(),
                (v.location[0] / dbu_per_nm).to_string(),
                (v.location[1] / dbu_per_nm).to_string(),
            ]
        }),
    )
}

/// One row per rule and bin: `[lo, hi)` of measured/threshold and the count.
pub fn write_histogram_csv(path: &Path, report: &MrcReport) -> Result<()> {
    let mut rows = Vec::new();
    for (kind, counts) in &report.histogram.counts {
        for (b, c) in counts.iter().enumerate() {
            let lo = b as f64 * HISTOGRAM_BIN_WIDTH;
            let hi = if b + 1 == HISTOGRAM_BINS { f64::INFINITY } else { lo + HISTOGRAM_BIN_WIDTH };
            rows.push(vec![kind.name().to_string(), format!("{lo:.1}"), format!("{hi:.1}"), c.to_string()]);
        }
    }
    write_csv(path, &["rule", "ratio_lo", "ratio_hi", "count"], rows)
}

pub fn write_contours_csv(path: &Path, contours: &ContourSet) -> Result<()> {
    let rows = contours.contours.iter().enumerate().flat_map(|(id, c)| {
        c.points.iter().enumerate().map(move |(i, p)| vec![id.to_string(), i.to_string(), p[0].to_string(), p[1].to_string()])
    });
    write_csv(path, &["contour", "index", "x_nm", "y_nm"], rows)
}

pub fn write_epe_csv(path: &Path, records: &[EpeRecord]) -> Result<()> {
    write_csv(
        path,
        &["segment", "focus_nm", "dose", "site_x_nm", "site_y_nm", "epe_nm"],
        records.iter().map(|r| {
            vec![
                r.segment.to_string(),
                r.condition.focus_nm.to_string(),
                r.condition.dose.to_string(),
                r.site_nm[0].to_string(),
                r.site_nm[1].to_string(),
                opt(r.epe_nm),
            ]
        }),
    )
}

pub fn write_iterations_csv(path: &Path, reports: &[IterationReport]) -> Result<()> {
    let mut header = vec!["iteration"];
    for c in ["f0", "fp", "fn"] {
        header.extend(match c {
            "f0" => ["f0_focus_nm", "f0_max_abs_nm", "f0_mean_nm", "f0_rms_nm", "f0_open"],
            "fp" => ["fp_focus_nm", "fp_max_abs_nm", "fp_mean_nm", "fp_rms_nm", "fp_open"],
            _ => ["fn_focus_nm", "fn_max_abs_nm", "fn_mean_nm", "fn_rms_nm", "fn_open"],
        });
    }
    header.extend(["max_eff_nm", "residual_nm", "outside", "clamped", "moved", "gain", "converged"]);
    write_csv(
        path,
        &header,
        reports.iter().map(|r| {
            let mut row = vec![r.iteration.to_string()];
            for s in &r.stats {
                row.extend([s.focus_nm.to_string(), s.max_abs.to_string(), s.mean.to_string(), s.rms.to_string(), s.open.to_string()]);
            }
            row.extend([
                r.max_eff_nm.to_string(),
                r.residual_nm.to_string(),
                r.outside.to_string(),
                r.clamped.to_string(),
                r.moved.to_string(),
                r.gain.to_string(),
                r.converged.to_string(),
            ]);
            row
        }),
    )
}

/// Per-segment moves in nm, as exchanged with a mask generator.
pub fn write_moves_csv(path: &Path, moves_nm: &[f64], warned: &[usize]) -> Result<()> {
    write_csv(
        path,
        &["segment", "move_nm", "warned"],
        moves_nm.iter().enumerate().map(|(i, m)| vec![i.to_string(), m.to_string(), warned.contains(&i).to_string()]),
    )
}

#[derive(Deserialize)]
struct SourceRow {
    #[serde(default)]
    format_version: Option<u32>,
    sigma_x: f64,
    sigma_y: f64,
    weight: f64,
}

/// Freeform source points from CSV columns `sigma_x, sigma_y, weight`.
pub fn source_from_csv(text: &str) -> Result<SourceSpec> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, row) in r.deserialize::<SourceRow>().enumerate() {
        let row = row?;
        if let Some(v) = row.format_version {
            check_version(v)?;
        }
        if ![row.sigma_x, row.sigma_y, row.weight].iter().all(|v| v.is_finite()) || row.weight < 0.0 {
            return Err(IoError::Source(format!("row {}: bad values", i + 1)));
        }
        points.push([row.sigma_x, row.sigma_y, row.weight]);
    }
    if points.is_empty() {
        return Err(IoError::Source("no source points".into()));
    }
    let spec = SourceSpec::Points { points };
    spec.build().map_err(|e| IoError::Source(e.to_string()))?;
    Ok(spec)
}

pub fn load_source_csv(path: &Path) -> Result<SourceSpec> {
    source_from_csv(&String::from_utf8_lossy(&read_bytes(path)?))
}

/// Key-value summary written next to command outputs.
pub fn write_summary_json(path: &Path, fields: &BTreeMap<String, serde_json::Value>) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("format_version".into(), FORMAT_VERSION.into());
    doc.extend(fields.iter().map(|(k, v)| (k.clone(), v.clone())));
    write_bytes(path, serde_json::to_string_pretty(&doc)?.as_bytes())
}

#[derive(Deserialize)]
struct MoveRow {
    format_version: u32,
    segment: usize,
    move_nm: f64,
}

/// Inverse of [`write_moves_csv`]; rows must list segments `0..n` in order.
pub fn read_moves_csv(path: &Path) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for row in r.deserialize::<MoveRow>() {
        let row = row?;
        check_version(row.format_version)?;
        if row.segment != out.len() {
            return Err(IoError::Invalid(format!("moves CSV: expected segment {}, found {}", out.len(), row.segment)));
        }
        out.push(row.move_nm);
    }
    Ok(out)
}
