//! Scalar partially coherent imaging.
//!
//! Frequencies are in cycles/nm on the FFT grid of an [`ImageGrid`]; the mask
//! spectrum is `O(f) = FFT(mask) / N` so that `O(0)` is the mean
//! transmission. Source points are pupil-normalized (`sigma`, shifted by
//! `sigma * NA / lambda` in frequency) with weights summing to one.
//!
//! Two independent routes produce SOCS kernels: [`decompose_tcc`]
//! eigendecomposes the assembled TCC matrix directly, while
//! [`socs_kernels`] works on the much smaller source-side Gram matrix of the
//! pupil amplitude matrix `A` (with `TCC = A A^H`). The first is the
//! reference on small grids, the second is what the OPC loop uses.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boolean;
use crate::fft::{self, fft2, Direction};
use crate::geometry::Polygon;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("pixel pitch must be positive, got {0}")]
    BadPitch(f64),
    #[error("grid must be non-empty")]
    EmptyGrid,
    #[error("grid mismatch: mask {mask:?} vs kernels {kernels:?}")]
    GridMismatch { mask: (usize, usize, f64), kernels: (usize, usize, f64) },
    #[error("TCC over {size} frequencies exceeds the budget of {budget}; use the SOCS-only path")]
    TccTooLarge { size: usize, budget: usize },
    #[error("direct Hopkins oracle limited to {limit} pixels and {freq_limit} frequencies")]
    OracleTooLarge { limit: usize, freq_limit: usize },
    #[error("TCC is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),
    #[error("invalid optical model: {0}")]
    BadModel(String),
    #[error("imaginary residue {0:e} in direct Hopkins image")]
    ImaginaryResidue(f64),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Sampling grid. Pixel `(i, j)` covers `origin + [i, i+1) * pitch` (and
/// likewise in y); samples sit at pixel centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub nx: usize,
    pub ny: usize,
    pub pitch_nm: f64,
    pub origin_nm: [f64; 2],
}

impl ImageGrid {
    pub fn new(nx: usize, ny: usize, pitch_nm: f64, origin_nm: [f64; 2]) -> Result<Self> {
        if !(pitch_nm > 0.0 && pitch_nm.is_finite()) {
            return Err(ImagingError::BadPitch(pitch_nm));
        }
        if nx == 0 || ny == 0 {
            return Err(ImagingError::EmptyGrid);
        }
        Ok(ImageGrid { nx, ny, pitch_nm, origin_nm })
    }

    /// Grid covering `[lo, hi]` (nm) plus `guard_nm` on every side, with
    /// FFT-friendly dimensions and the window centred on the box.
    pub fn covering(lo: [f64; 2], hi: [f64; 2], pitch_nm: f64, guard_nm: f64) -> Result<Self> {
        if !(pitch_nm > 0.0 && pitch_nm.is_finite()) {
            return Err(ImagingError::BadPitch(pitch_nm));
        }
        let dim = |a: f64, b: f64| fft::fast_len(((b - a + 2.0 * guard_nm) / pitch_nm).ceil().max(1.0) as usize);
        let (nx, ny) = (dim(lo[0], hi[0]), dim(lo[1], hi[1]));
        let cx = 0.5 * (lo[0] + hi[0]);
        let cy = 0.5 * (lo[1] + hi[1]);
        // Snap the origin to the pitch lattice so windows are reproducible.
        let snap = |c: f64, n: usize| ((c - 0.5 * n as f64 * pitch_nm) / pitch_nm).floor() * pitch_nm;
        ImageGrid::new(nx, ny, pitch_nm, [snap(cx, nx), snap(cy, ny)])
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin_nm[0] + (i as f64 + 0.5) * self.pitch_nm,
            self.origin_nm[1] + (j as f64 + 0.5) * self.pitch_nm,
        ]
    }

    /// Frequency (cycles/nm) of FFT bin `(kx, ky)`.
    pub fn freq(&self, kx: usize, ky: usize) -> [f64; 2] {
        [
            fft::signed_index(kx, self.nx) as f64 / (self.nx as f64 * self.pitch_nm),
            fft::signed_index(ky, self.ny) as f64 / (self.ny as f64 * self.pitch_nm),
        ]
    }

    fn shape(&self) -> (usize, usize, f64) {
        (self.nx, self.ny, self.pitch_nm)
    }

    /// Same sampling, ignoring the origin.
    pub fn commensurate(&self, o: &ImageGrid) -> bool {
        self.shape() == o.shape()
    }

    /// Position in pixel units relative to the grid origin.
    pub fn to_pixel(&self, p_nm: [f64; 2]) -> [f64; 2] {
        [(p_nm[0] - self.origin_nm[0]) / self.pitch_nm, (p_nm[1] - self.origin_nm[1]) / self.pitch_nm]
    }
}

// ---------------------------------------------------------------------------
// Source and pupil

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePoint {
    pub sx: f64,
    pub sy: f64,
    pub weight: f64,
}

/// Discrete source, weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMap {
    pub points: Vec<SourcePoint>,
}

/// Cells per side of the default source grid over `[-1, 1]^2`.
pub const SOURCE_GRID: usize = 21;

impl SourceMap {
    /// Normalizes weights; rejects negative weights and empty maps.
    pub fn from_points(pts: impl IntoIterator<Item = (f64, f64, f64)>) -> Result<Self> {
        let pts: Vec<SourcePoint> = pts.into_iter().map(|(sx, sy, weight)| SourcePoint { sx, sy, weight }).collect();
        if pts.iter().any(|p| !(p.weight >= 0.0) || !p.sx.is_finite() || !p.sy.is_finite()) {
            return Err(ImagingError::BadModel("source weights must be finite and >= 0".into()));
        }
        let total: f64 = pts.iter().map(|p| p.weight).sum();
        if !(total > 0.0) {
            return Err(ImagingError::BadModel("source has no intensity".into()));
        }
        Ok(SourceMap {
            points: pts
                .into_iter()
                .filter(|p| p.weight > 0.0)
                .map(|p| SourcePoint { weight: p.weight / total, ..p })
                .collect(),
        })
    }

    pub fn point() -> Self {
        SourceMap { points: vec![SourcePoint { sx: 0.0, sy: 0.0, weight: 1.0 }] }
    }

    fn grid_filter(keep: impl Fn(f64) -> bool) -> Result<Self> {
        let n = SOURCE_GRID;
        let step = 2.0 / n as f64;
        let mut pts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (sx, sy) = (-1.0 + (i as f64 + 0.5) * step, -1.0 + (j as f64 + 0.5) * step);
                if keep((sx * sx + sy * sy).sqrt()) {
                    pts.push((sx, sy, 1.0));
                }
            }
        }
        SourceMap::from_points(pts)
    }

    /// Top-hat disk of radius `sigma` on the default grid.
    pub fn circular(sigma: f64) -> Result<Self> {
        if sigma <= 0.0 {
            return Ok(SourceMap::point());
        }
        SourceMap::grid_filter(|r| r <= sigma + 1e-12)
    }

    /// Top-hat annulus on the default grid.
    pub fn annular(inner: f64, outer: f64) -> Result<Self> {
        if !(0.0 <= inner && inner < outer) {
            return Err(ImagingError::BadModel(format!("annulus needs 0 <= inner < outer, got {inner}, {outer}")));
        }
        SourceMap::grid_filter(|r| r >= inner - 1e-12 && r <= outer + 1e-12)
    }

    pub fn max_sigma(&self) -> f64 {
        self.points.iter().map(|p| p.sx.hypot(p.sy)).fold(0.0, f64::max)
    }
}

/// Source description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Point,
    Circular { sigma: f64 },
    Annular { inner: f64, outer: f64 },
    /// Freeform list of `[sigma_x, sigma_y, weight]`.
    Points { points: Vec<[f64; 3]> },
}

impl SourceSpec {
    pub fn build(&self) -> Result<SourceMap> {
        match self {
            SourceSpec::Point => Ok(SourceMap::point()),
            SourceSpec::Circular { sigma } => SourceMap::circular(*sigma),
            SourceSpec::Annular { inner, outer } => SourceMap::annular(*inner, *outer),
            SourceSpec::Points { points } => SourceMap::from_points(points.iter().map(|p| (p[0], p[1], p[2]))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefocusModel {
    /// `-pi * lambda * F * |f|^2`.
    #[default]
    Paraxial,
    /// `2 pi F / lambda * (sqrt(1 - lambda^2 |f|^2) - 1)`.
    Exact,
}

/// Pupil phase terms in waves over the normalized pupil radius `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Aberrations {
    /// `6 rho^4 - 6 rho^2 + 1`.
    pub spherical: f64,
    /// `(3 rho^3 - 2 rho) cos(theta)`.
    pub coma_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalModel {
    pub wavelength_nm: f64,
    pub na: f64,
    pub source: SourceSpec,
    pub defocus_model: DefocusModel,
    pub aberrations: Aberrations,
    /// Gaussian resist blur sigma (nm); 0 disables it.
    pub resist_sigma_nm: f64,
    /// Resist threshold on the blurred image.
    pub threshold: f64,
    /// Printability thresholds used by the AI bridge.
    pub tau_print: f64,
    pub tau_round: f64,
    pub dose: f64,
    /// Fraction of TCC energy kept by SOCS truncation.
    pub energy_floor: f64,
    /// Largest frequency support for which a dense TCC is assembled.
    pub tcc_budget: usize,
}

impl Default for OpticalModel {
    /// Synthetic EUV-like defaults (not a calibrated process).
    fn default() -> Self {
        OpticalModel {
            wavelength_nm: 13.5,
            na: 0.33,
            source: SourceSpec::Annular { inner: 0.4, outer: 0.8 },
            defocus_model: DefocusModel::Paraxial,
            aberrations: Aberrations::default(),
            resist_sigma_nm: 2.0,
            threshold: 0.3,
            tau_print: 0.3,
            tau_round: 0.5,
            dose: 1.0,
            energy_floor: 0.995,
            tcc_budget: 4096,
        }
    }
}

impl OpticalModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.na > 0.0 && self.na < 1.0) {
            return Err(ImagingError::BadModel(format!("NA must be in (0, 1), got {}", self.na)));
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(ImagingError::BadModel(format!("wavelength must be positive, got {}", self.wavelength_nm)));
        }
        if !(self.energy_floor > 0.0 && self.energy_floor <= 1.0) {
            return Err(ImagingError::BadModel(format!("energy floor must be in (0, 1], got {}", self.energy_floor)));
        }
        if !(self.resist_sigma_nm >= 0.0) || !(self.dose >= 0.0) {
            return Err(ImagingError::BadModel("resist sigma and dose must be >= 0".into()));
        }
        Ok(())
    }

    pub fn cutoff(&self) -> f64 {
        self.na / self.wavelength_nm
    }

    /// Guard band (nm) that keeps periodic wrap-around away from the
    /// region of interest: optical ambit plus four resist sigmas.
    pub fn guard_band_nm(&self) -> f64 {
        2.0 * self.wavelength_nm / self.na + 4.0 * self.resist_sigma_nm
    }

    pub fn pupil(&self, f: [f64; 2], focus_nm: f64) -> Complex64 {
        let cut = self.cutoff();
        let r2 = f[0] * f[0] + f[1] * f[1];
        if r2 > cut * cut * (1.0 + 1e-12) {
            return Complex64::new(0.0, 0.0);
        }
        let lam = self.wavelength_nm;
        let mut phase = match self.defocus_model {
            DefocusModel::Paraxial => -PI * lam * focus_nm * r2,
            DefocusModel::Exact => 2.0 * PI * focus_nm / lam * ((1.0 - lam * lam * r2).max(0.0).sqrt() - 1.0),
        };
        let ab = &self.aberrations;
        if ab.spherical != 0.0 || ab.coma_x != 0.0 {
            let rho2 = r2 / (cut * cut);
            phase += 2.0 * PI * ab.spherical * (6.0 * rho2 * rho2 - 6.0 * rho2 + 1.0);
            phase += 2.0 * PI * ab.coma_x * (3.0 * rho2 - 2.0) * f[0] / cut;
        }
        Complex64::from_polar(1.0, phase)
    }
}

/// Frequencies passed by the pupil for at least one source point, with the
/// pupil amplitude matrix `A[i, s] = sqrt(w_s) P(f_i + sigma_s)`.
fn amplitude_matrix(model: &OpticalModel, source: &SourceMap, grid: &ImageGrid, focus_nm: f64) -> (Vec<usize>, Vec<[f64; 2]>, DMatrix<Complex64>) {
    let shift = model.cutoff();
    let reach = shift * (1.0 + source.max_sigma()) * (1.0 + 1e-9);
    let mut support = Vec::new();
    let mut freqs = Vec::new();
    let mut cols: Vec<Vec<Complex64>> = Vec::new();
    for ky in 0..grid.ny {
        for kx in 0..grid.nx {
            let f = grid.freq(kx, ky);
            if f[0].hypot(f[1]) > reach {
                continue;
            }
            let row: Vec<Complex64> = source
                .points
                .iter()
                .map(|s| s.weight.sqrt() * model.pupil([f[0] + s.sx * shift, f[1] + s.sy * shift], focus_nm))
                .collect();
            if row.iter().any(|c| c.norm_sqr() > 0.0) {
                support.push(ky * grid.nx + kx);
                freqs.push(f);
                cols.push(row);
            }
        }
    }
    let m = support.len();
    let ns = source.points.len();
    let a = DMatrix::from_fn(m, ns, |i, s| cols[i][s]);
    (support, freqs, a)
}

// ---------------------------------------------------------------------------
// TCC and SOCS kernels

#[derive(Debug, Clone, PartialEq)]
pub struct TccMatrix {
    pub grid: ImageGrid,
    pub focus_nm: f64,
    /// Flat FFT bin (`ky * nx + kx`) of every matrix index.
    pub support: Vec<usize>,
    pub freqs: Vec<[f64; 2]>,
    pub data: DMatrix<Complex64>,
}

impl TccMatrix {
    pub fn size(&self) -> usize {
        self.support.len()
    }

    pub fn trace(&self) -> f64 {
        (0..self.size()).map(|i| self.data[(i, i)].re).sum()
    }

    /// Largest |T - T^H| entry.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.size();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

/// Assemble `TCC(f1, f2; F) = sum_s w_s P(f1 + s) P*(f2 + s)` over the
/// grid's frequency support.
pub fn build_tcc(model: &OpticalModel, grid: &ImageGrid, focus_nm: f64) -> Result<TccMatrix> {
    model.validate()?;
    let source = model.source.build()?;
    let (support, freqs, a) = amplitude_matrix(model, &source, grid, focus_nm);
    if support.len() > model.tcc_budget {
        return Err(ImagingError::TccTooLarge { size: support.len(), budget: model.tcc_budget });
    }
    let data = &a * a.adjoint();
    Ok(TccMatrix { grid: *grid, focus_nm, support, freqs, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    /// Smallest K whose cumulative weight reaches this fraction.
    Energy(f64),
    Count(usize),
    /// Every mode with a positive weight.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocsKernelSet {
    pub grid: ImageGrid,
    pub focus_nm: f64,
    pub support: Vec<usize>,
    pub freqs: Vec<[f64; 2]>,
    /// Mode weights, descending.
    pub weights: Vec<f64>,
    /// Frequency-domain modes on `support`, unit norm.
    pub spectra: Vec<Vec<Complex64>>,
    /// Sum of all (untruncated) eigenvalues.
    pub total_energy: f64,
}

impl SocsKernelSet {
    pub fn order(&self) -> usize {
        self.weights.len()
    }

    pub fn captured_energy(&self) -> f64 {
        if self.total_energy <= 0.0 {
            return 1.0;
        }
        self.weights.iter().sum::<f64>() / self.total_energy
    }

    /// Mode `k` in the spatial domain, periodic and centred on pixel 0.
    pub fn spatial_kernel(&self, k: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.grid.len()];
        for (i, &b) in self.support.iter().enumerate() {
            buf[b] = self.spectra[k][i];
        }
        fft2(&mut buf, self.grid.nx, self.grid.ny, Direction::Inverse);
        buf
    }

    /// `sum_k w_k phi_k phi_k^H`.
    pub fn reconstruct_tcc(&self) -> DMatrix<Complex64> {
        let m = self.support.len();
        let mut t = DMatrix::zeros(m, m);
        for (w, phi) in self.weights.iter().zip(&self.spectra) {
            let v = nalgebra::DVector::from_column_slice(phi);
            t += (&v * v.adjoint()).scale(*w);
        }
        t
    }

    /// Keep the first `k` modes.
    pub fn truncated(&self, k: usize) -> SocsKernelSet {
        let k = k.min(self.order());
        SocsKernelSet { weights: self.weights[..k].to_vec(), spectra: self.spectra[..k].to_vec(), ..self.clone() }
    }
}

fn phase_normalize(v: &mut [Complex64]) {
    let Some(big) = v.iter().copied().max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr())) else { return };
    if big.norm() == 0.0 {
        return;
    }
    let rot = big.conj() / big.norm();
    v.iter_mut().for_each(|c| *c *= rot);
}

fn choose_order(weights: &[f64], trunc: Truncation) -> usize {
    let total: f64 = weights.iter().sum();
    let positive = weights.iter().take_while(|&&w| w > 0.0).count();
    match trunc {
        Truncation::Full => positive,
        Truncation::Count(k) => k.min(positive),
        Truncation::Energy(floor) => {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate().take(positive) {
                acc += w;
                if acc >= floor * total * (1.0 - 1e-12) {
                    return k + 1;
                }
            }
            positive
        }
    }
}

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

/// Sort eigenpairs by descending value and clamp tiny negatives to zero.
fn sorted_eigen(vals: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    idx
}

/// Reference route: eigendecomposition of the dense TCC.
pub fn decompose_tcc(tcc: &TccMatrix, trunc: Truncation) -> Result<SocsKernelSet> {
    let scale = (0..tcc.size()).map(|i| tcc.data[(i, i)].norm()).fold(0.0, f64::max).max(1e-300);
    let defect = tcc.hermitian_defect();
    if defect > 1e-10 * scale {
        return Err(ImagingError::NotHermitian(defect));
    }
    let eig = tcc.data.clone().symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let order = sorted_eigen(&vals);
    let top = vals.iter().copied().fold(0.0, f64::max);
    let weights: Vec<f64> = order.iter().map(|&i| if vals[i] > RANK_TOL * top { vals[i] } else { 0.0 }).collect();
    let k = choose_order(&weights, trunc);
    let spectra = order[..k]
        .iter()
        .map(|&i| {
            let mut v: Vec<Complex64> = eig.eigenvectors.column(i).iter().copied().collect();
            phase_normalize(&mut v);
            v
        })
        .collect();
    Ok(SocsKernelSet {
        grid: tcc.grid,
        focus_nm: tcc.focus_nm,
        support: tcc.support.clone(),
        freqs: tcc.freqs.clone(),
        total_energy: weights.iter().sum(),
        weights: weights[..k].to_vec(),
        spectra,
    })
}

/// Production route: SOCS modes from the source-side Gram matrix `A^H A`,
/// whose nonzero eigenvalues are those of `TCC = A A^H`.
pub fn socs_kernels(model: &OpticalModel, grid: &ImageGrid, focus_nm: f64, trunc: Truncation) -> Result<SocsKernelSet> {
    model.validate()?;
    let source = model.source.build()?;
    let (support, freqs, a) = amplitude_matrix(model, &source, grid, focus_nm);
    let gram = a.adjoint() * &a;
    let eig = gram.symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let order = sorted_eigen(&vals);
    let top = vals.iter().copied().fold(0.0, f64::max);
    let weights: Vec<f64> = order.iter().map(|&i| if vals[i] > RANK_TOL * top { vals[i] } else { 0.0 }).collect();
    let k = choose_order(&weights, trunc);
    let spectra = order[..k]
        .iter()
        .zip(&weights)
        .map(|(&i, &w)| {
            let v = eig.eigenvectors.column(i);
            let phi = (&a * v).unscale(w.sqrt());
            let mut phi: Vec<Complex64> = phi.iter().copied().collect();
            phase_normalize(&mut phi);
            phi
        })
        .collect();
    Ok(SocsKernelSet {
        grid: *grid,
        focus_nm,
        support,
        freqs,
        total_energy: weights.iter().sum(),
        weights: weights[..k].to_vec(),
        spectra,
    })
}

// ---------------------------------------------------------------------------
// Mask, aerial and resist images

#[derive(Debug, Clone, PartialEq)]
pub struct MaskField {
    pub grid: ImageGrid,
    pub data: Vec<Complex64>,
}

impl MaskField {
    pub fn zeros(grid: ImageGrid) -> Self {
        MaskField { grid, data: vec![Complex64::default(); grid.len()] }
    }

    pub fn from_real(grid: ImageGrid, values: &[f64]) -> Self {
        assert_eq!(values.len(), grid.len());
        MaskField { grid, data: values.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    /// Normalized spectrum `FFT(mask) / N`.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut o = self.data.clone();
        fft2(&mut o, self.grid.nx, self.grid.ny, Direction::Forward);
        let n = self.grid.len() as f64;
        o.iter_mut().for_each(|c| *c /= n);
        o
    }
}

/// Feature and background transmission of a thin mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskTone {
    pub feature: Complex64,
    pub background: Complex64,
}

impl Default for MaskTone {
    fn default() -> Self {
        MaskTone { feature: Complex64::new(1.0, 0.0), background: Complex64::new(0.0, 0.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AerialImage {
    pub grid: ImageGrid,
    pub data: Vec<f64>,
    pub focus_nm: f64,
    pub dose: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResistImage {
    pub grid: ImageGrid,
    pub data: Vec<f64>,
    pub threshold: f64,
}

fn clip(poly: &[[f64; 2]], axis: usize, bound: f64, keep_above: bool) -> Vec<[f64; 2]> {
    let inside = |p: &[f64; 2]| if keep_above { p[axis] >= bound } else { p[axis] <= bound };
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for k in 0..n {
        let (a, b) = (poly[k], poly[(k + 1) % n]);
        let (ia, ib) = (inside(&a), inside(&b));
        if ia {
            out.push(a);
        }
        if ia != ib {
            let t = (bound - a[axis]) / (b[axis] - a[axis]);
            let mut p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            p[axis] = bound;
            out.push(p);
        }
    }
    out
}

fn shoelace(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    (0..n).map(|k| p[k][0] * p[(k + 1) % n][1] - p[(k + 1) % n][0] * p[k][1]).sum::<f64>() * 0.5
}

/// Exact covered-area fraction of every pixel. Input is healed first, so
/// overlapping polygons count once.
pub fn coverage(polys: &[Polygon], dbu_per_nm: f64, grid: &ImageGrid) -> Vec<f64> {
    let rings = boolean::heal(polys);
    let mut cov = vec![0.0; grid.len()];
    let scale = 1.0 / (dbu_per_nm * grid.pitch_nm);
    let ox = grid.origin_nm[0] / grid.pitch_nm;
    let oy = grid.origin_nm[1] / grid.pitch_nm;
    for r in &rings {
        let pts: Vec<[f64; 2]> = r.vertices.iter().map(|v| [v.x as f64 * scale - ox, v.y as f64 * scale - oy]).collect();
        let (y0, y1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[1]), b.max(p[1])));
        let j0 = (y0.floor().max(0.0)) as usize;
        let j1 = (y1.ceil().min(grid.ny as f64)).max(0.0) as usize;
        for j in j0..j1 {
            let slab = clip(&clip(&pts, 1, j as f64, true), 1, (j + 1) as f64, false);
            if slab.len() < 3 {
                continue;
            }
            let (x0, x1) = slab.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[0]), b.max(p[0])));
            let i0 = (x0.floor().max(0.0)) as usize;
            let i1 = (x1.ceil().min(grid.nx as f64)).max(0.0) as usize;
            for i in i0..i1 {
                let cell = clip(&clip(&slab, 0, i as f64, true), 0, (i + 1) as f64, false);
                if cell.len() >= 3 {
                    cov[j * grid.nx + i] += shoelace(&cell);
                }
            }
        }
    }
    cov.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
    cov
}

/// Thin-mask rasterization with area-weighted edges.
pub fn rasterize_layer(polys: &[Polygon], dbu_per_nm: f64, grid: &ImageGrid) -> MaskField {
    rasterize_with(polys, dbu_per_nm, grid, MaskTone::default())
}

pub fn rasterize_with(polys: &[Polygon], dbu_per_nm: f64, grid: &ImageGrid, tone: MaskTone) -> MaskField {
    let cov = coverage(polys, dbu_per_nm, grid);
    MaskField { grid: *grid, data: cov.iter().map(|&c| tone.background + (tone.feature - tone.background) * c).collect() }
}

fn check_grid(mask: &ImageGrid, kernels: &ImageGrid) -> Result<()> {
    if !mask.commensurate(kernels) {
        return Err(ImagingError::GridMismatch { mask: mask.shape(), kernels: kernels.shape() });
    }
    Ok(())
}

/// Coherent fields `E_k = IFFT(O * phi_k)` (unnormalized inverse), one per mode.
pub fn coherent_fields(mask: &MaskField, kernels: &SocsKernelSet) -> Result<Vec<Vec<Complex64>>> {
    check_grid(&mask.grid, &kernels.grid)?;
    let o = mask.spectrum();
    let (nx, ny) = (mask.grid.nx, mask.grid.ny);
    Ok(kernels
        .spectra
        .par_iter()
        .map(|phi| {
            let mut buf = vec![Complex64::default(); nx * ny];
            for (i, &b) in kernels.support.iter().enumerate() {
                buf[b] = o[b] * phi[i];
            }
            fft2(&mut buf, nx, ny, Direction::Inverse);
            buf
        })
        .collect())
}

/// `I = D * sum_k w_k |E_k|^2`.
pub fn image_socs(mask: &MaskField, kernels: &SocsKernelSet, dose: f64) -> Result<AerialImage> {
    let fields = coherent_fields(mask, kernels)?;
    let mut data = vec![0.0; mask.grid.len()];
    data.par_iter_mut().enumerate().for_each(|(p, v)| {
        let mut acc = 0.0;
        for (w, e) in kernels.weights.iter().zip(&fields) {
            acc += w * e[p].norm_sqr();
        }
        *v = dose * acc;
    });
    Ok(AerialImage { grid: mask.grid, data, focus_nm: kernels.focus_nm, dose })
}

pub const HOPKINS_PIXEL_LIMIT: usize = 64 * 64;
pub const HOPKINS_FREQ_LIMIT: usize = 2048;

/// Direct double sum over frequency pairs; a test oracle for small grids.
/// Returns the image and the largest imaginary residue seen.
pub fn image_hopkins_direct(mask: &MaskField, tcc: &TccMatrix, dose: f64) -> Result<(AerialImage, f64)> {
    check_grid(&mask.grid, &tcc.grid)?;
    let g = mask.grid;
    if g.len() > HOPKINS_PIXEL_LIMIT || tcc.size() > HOPKINS_FREQ_LIMIT {
        return Err(ImagingError::OracleTooLarge { limit: HOPKINS_PIXEL_LIMIT, freq_limit: HOPKINS_FREQ_LIMIT });
    }
    let o = mask.spectrum();
    let idx: Vec<(i64, i64)> =
        tcc.support.iter().map(|&b| (fft::signed_index(b % g.nx, g.nx), fft::signed_index(b / g.nx, g.ny))).collect();
    let os: Vec<Complex64> = tcc.support.iter().map(|&b| o[b]).collect();
    let m = tcc.size();
    let res: Vec<(f64, f64)> = (0..g.len())
        .into_par_iter()
        .map(|p| {
            let (x, y) = ((p % g.nx) as i64, (p / g.nx) as i64);
            let v: Vec<Complex64> = (0..m)
                .map(|i| {
                    let (sx, sy) = idx[i];
                    // integer phase keeps the oracle on the FFT lattice exactly
                    let ph = 2.0 * PI * ((sx * x).rem_euclid(g.nx as i64) as f64 / g.nx as f64
                        + (sy * y).rem_euclid(g.ny as i64) as f64 / g.ny as f64);
                    os[i] * Complex64::from_polar(1.0, ph)
                })
                .collect();
            let mut acc = Complex64::default();
            for i in 0..m {
                let mut row = Complex64::default();
                for j in 0..m {
                    row += tcc.data[(i, j)] * v[j].conj();
                }
                acc += v[i] * row;
            }
            (dose * acc.re, dose * acc.im)
        })
        .collect();
    let max_imag = res.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
    let data = res.into_iter().map(|r| r.0).collect();
    Ok((AerialImage { grid: g, data, focus_nm: tcc.focus_nm, dose }, max_imag))
}

/// Periodic Gaussian blur with unit DC gain.
pub fn gaussian_blur(grid: &ImageGrid, data: &[f64], sigma_nm: f64) -> Vec<f64> {
    if sigma_nm <= 0.0 {
        return data.to_vec();
    }
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, grid.nx, grid.ny, Direction::Forward);
    let n = grid.len() as f64;
    let s2 = 2.0 * PI * PI * sigma_nm * sigma_nm;
    for ky in 0..grid.ny {
        for kx in 0..grid.nx {
            let f = grid.freq(kx, ky);
            buf[ky * grid.nx + kx] *= (-s2 * (f[0] * f[0] + f[1] * f[1])).exp() / n;
        }
    }
    fft2(&mut buf, grid.nx, grid.ny, Direction::Inverse);
    buf.iter().map(|c| c.re).collect()
}

/// Blur the aerial image with the model's resist kernel.
pub fn resist_filter(aerial: &AerialImage, model: &OpticalModel) -> ResistImage {
    ResistImage {
        grid: aerial.grid,
        data: gaussian_blur(&aerial.grid, &aerial.data, model.resist_sigma_nm),
        threshold: model.threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn grid(n: usize, pitch: f64) -> ImageGrid {
        ImageGrid::new(n, n, pitch, [0.0, 0.0]).unwrap()
    }

    #[test]
    fn rasterize_rect_and_half_pixels() {
        let g = grid(8, 1.0);
        let m = rasterize_layer(&[Polygon::rect(2, 2, 5, 6)], 1.0, &g);
        assert_eq!(m.data[3 * 8 + 3].re, 1.0);
        assert_eq!(m.data[0].re, 0.0);
        // edge at a pixel midline
        let cov = coverage(&[Polygon::rect(5, 5, 9, 9)], 2.0, &g);
        assert!((cov[2 * 8 + 2] - 0.25).abs() < 1e-15);
        assert!((cov[3 * 8 + 2] - 0.5).abs() < 1e-15);
        assert!((cov[3 * 8 + 3] - 1.0).abs() < 1e-15);
        let tri = Polygon::new(vec![Point::new(0, 0), Point::new(7, 1), Point::new(2, 6)]);
        let total: f64 = coverage(std::slice::from_ref(&tri), 1.0, &g).iter().sum();
        assert!((total - tri.signed_area2().unwrap() as f64 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn coherent_tcc_is_rank_one() {
        let model = OpticalModel { source: SourceSpec::Point, ..Default::default() };
        let g = grid(32, 8.0);
        let t = build_tcc(&model, &g, 0.0).unwrap();
        let k = decompose_tcc(&t, Truncation::Full).unwrap();
        assert_eq!(k.order(), 1);
        assert!((k.weights[0] - t.trace()).abs() < 1e-9 * t.trace());
    }

    #[test]
    fn pupil_defocus_phase() {
        let m = OpticalModel::default();
        assert_eq!(m.pupil([0.0, 0.0], 50.0), Complex64::new(1.0, 0.0));
        assert_eq!(m.pupil([1.0, 0.0], 0.0), Complex64::new(0.0, 0.0));
        let f = 0.5 * m.cutoff();
        let p = m.pupil([f, 0.0], 40.0);
        assert!((p.arg() - (-PI * 13.5 * 40.0 * f * f)).abs() < 1e-12);
    }
}
