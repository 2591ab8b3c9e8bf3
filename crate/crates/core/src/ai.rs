//! Data plumbing between a learned mask generator and the segment-based
//! corrector: training channels, printability references, losses, and the
//! field → segment-move extraction used for warm starts.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contour::{self, Condition, ContourError};
use crate::fft::{self, fft2, Direction};
use crate::imaging::{self, ImageGrid, ImagingError, MaskField, ResistImage, SocsKernelSet};
use crate::mrc::{DbuRules, MrcError};
use crate::opc::{OpcError, SegmentedMask};

#[derive(Debug, Error)]
pub enum AiError {
    #[error("grid shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("mask field has an imaginary part at pixel {0}")]
    ComplexMask(usize),
    #[error("{0}")]
    BadParameter(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Contour(#[from] ContourError),
    #[error(transparent)]
    Opc(#[from] OpcError),
    #[error(transparent)]
    Mrc(#[from] MrcError),
}

pub type Result<T> = std::result::Result<T, AiError>;

fn same_shape(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if (a.nx, a.ny) != (b.nx, b.ny) {
        return Err(AiError::Shape((a.nx, a.ny), (b.nx, b.ny)));
    }
    Ok(())
}

/// Gradient of the total intensity `sum_x I(x)` with respect to each real
/// mask pixel, by the adjoint of the coherent-mode sum.
pub fn intensity_gradient(mask: &MaskField, kernels: &SocsKernelSet, dose: f64) -> Result<Vec<f64>> {
    if let Some(p) = mask.data.iter().position(|c| c.im != 0.0) {
        return Err(AiError::ComplexMask(p));
    }
    let fields = imaging::coherent_fields(mask, kernels)?;
    let g = mask.grid;
    let n = g.len() as f64;
    // Bin of -f for every support bin.
    let mirror: Vec<usize> = kernels
        .support
        .iter()
        .map(|&b| {
            let sx = fft::signed_index(b % g.nx, g.nx);
            let sy = fft::signed_index(b / g.nx, g.ny);
            fft::bin(-sy, g.ny) * g.nx + fft::bin(-sx, g.nx)
        })
        .collect();
    let parts: Vec<Vec<f64>> = fields
        .into_par_iter()
        .zip(kernels.spectra.par_iter())
        .zip(kernels.weights.par_iter())
        .map(|((e, phi), &w)| {
            // correlate conj(E) with the spatial kernel h = IFFT(phi) / N
            let mut a: Vec<Complex64> = e.iter().map(|v| v.conj()).collect();
            fft2(&mut a, g.nx, g.ny, Direction::Forward);
            let mut c = vec![Complex64::default(); g.len()];
            for (i, &m) in mirror.iter().enumerate() {
                c[m] = a[m] * phi[i];
            }
            fft2(&mut c, g.nx, g.ny, Direction::Inverse);
            c.iter().map(|v| 2.0 * dose * w * v.re / n).collect()
        })
        .collect();
    let mut out = vec![0.0; g.len()];
    for p in parts {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    Ok(out)
}

/// Affine map `v -> (v - offset) * scale` that takes a channel onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    /// Min-max map of `data`; a constant channel maps to 0.
    pub fn fit(data: &[f64]) -> Self {
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Normalization { offset: if lo.is_finite() { lo } else { 0.0 }, scale: 1.0 };
        }
        Normalization { offset: lo, scale: 1.0 / (hi - lo) }
    }

    pub fn apply(&self, v: f64) -> f64 {
        ((v - self.offset) * self.scale).clamp(0.0, 1.0)
    }

    pub fn invert(&self, v: f64) -> f64 {
        v / self.scale + self.offset
    }
}

/// Three aligned channels: target raster, aerial intensity, intensity
/// sensitivity. Each is stored normalized with its map.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    pub grid: ImageGrid,
    pub target: Vec<f64>,
    pub intensity: Vec<f64>,
    pub gradient: Vec<f64>,
    pub norms: [Normalization; 3],
}

impl FieldTensor {
    pub fn build(target: &[f64], grid: ImageGrid, kernels: &SocsKernelSet, dose: f64) -> Result<Self> {
        same_shape(&grid, &kernels.grid)?;
        if target.len() != grid.len() {
            return Err(AiError::BadParameter(format!("{} target pixels for a {}x{} grid", target.len(), grid.nx, grid.ny)));
        }
        let field = MaskField::from_real(grid, target);
        let intensity = imaging::image_socs(&field, kernels, dose)?.data;
        let gradient = intensity_gradient(&field, kernels, dose)?;
        let norms = [Normalization::fit(target), Normalization::fit(&intensity), Normalization::fit(&gradient)];
        let map = |d: &[f64], n: &Normalization| d.iter().map(|&v| n.apply(v)).collect::<Vec<f64>>();
        Ok(FieldTensor {
            grid,
            target: map(target, &norms[0]),
            intensity: map(&intensity, &norms[1]),
            gradient: map(&gradient, &norms[2]),
            norms,
        })
    }

    /// Channel-interleaved `[ny][nx][3]` samples.
    pub fn interleaved(&self) -> Vec<f64> {
        (0..self.grid.len()).flat_map(|p| [self.target[p], self.intensity[p], self.gradient[p]]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldSource {
    External(String),
    Synthetic,
}

/// Generator output: a real mask field in [0, 1] over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousMaskField {
    pub grid: ImageGrid,
    pub data: Vec<f64>,
    pub source: FieldSource,
}

impl ContinuousMaskField {
    pub fn new(grid: ImageGrid, data: Vec<f64>, source: FieldSource) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(AiError::BadParameter(format!("{} samples for a {}x{} grid", data.len(), grid.nx, grid.ny)));
        }
        if let Some(p) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(AiError::BadParameter(format!("sample {p} = {} outside [0, 1]", data[p])));
        }
        Ok(ContinuousMaskField { grid, data, source })
    }

    /// Exact area-coverage raster of a mask.
    pub fn rasterize(mask: &SegmentedMask, grid: ImageGrid) -> Self {
        let data = imaging::coverage(&mask.reconstruct(), mask.dbu_per_nm, &grid);
        ContinuousMaskField { grid, data, source: FieldSource::Synthetic }
    }
}

/// Low-passed target: 1 where the Gaussian-blurred raster reaches `tau`.
pub fn z_round(target: &[f64], grid: &ImageGrid, sigma_nm: f64, tau: f64) -> Result<Vec<u8>> {
    if !(sigma_nm >= 0.0) || !(tau > 0.0 && tau < 1.0) {
        return Err(AiError::BadParameter(format!("sigma {sigma_nm}, tau {tau}")));
    }
    let blurred = imaging::gaussian_blur(grid, target, sigma_nm);
    Ok(blurred.iter().map(|&v| u8::from(v >= tau)).collect())
}

/// Printed image of a continuous mask: 1 where the best-focus intensity
/// reaches `tau`.
pub fn z_print(field: &ContinuousMaskField, kernels: &SocsKernelSet, dose: f64, tau: f64) -> Result<Vec<u8>> {
    let img = imaging::image_socs(&MaskField::from_real(field.grid, &field.data), kernels, dose)?;
    Ok(img.data.iter().map(|&v| u8::from(v >= tau)).collect())
}

/// L1 losses, both as plain sums and per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub mask_sum: f64,
    pub mask_mean: f64,
    pub litho_sum: f64,
    pub litho_mean: f64,
}

/// Mask loss against a reference raster and printability loss against a
/// rounded target.
pub fn losses(
    field: &ContinuousMaskField,
    reference: &[f64],
    z_round_ref: &[u8],
    kernels: &SocsKernelSet,
    dose: f64,
    tau_print: f64,
) -> Result<Losses> {
    let n = field.grid.len();
    for len in [reference.len(), z_round_ref.len()] {
        if len != n {
            return Err(AiError::BadParameter(format!("{len} samples against {n}")));
        }
    }
    let mask_sum: f64 = field.data.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum();
    let printed = z_print(field, kernels, dose, tau_print)?;
    let litho_sum = printed.iter().zip(z_round_ref).filter(|(a, b)| a != b).count() as f64;
    Ok(Losses { mask_sum, mask_mean: mask_sum / n as f64, litho_sum, litho_mean: litho_sum / n as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub binarize_threshold: f64,
    pub search_radius_nm: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { binarize_threshold: 0.5, search_radius_nm: 20.0 }
    }
}

/// Per-segment normal displacement read off a field. `warned` lists the
/// segments with no contour in reach; their displacement is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMoves {
    pub moves_nm: Vec<f64>,
    pub warned: Vec<usize>,
}

/// Binarize the field, trace its contour, and measure each base segment's
/// signed distance to it along the outward normal.
pub fn extract_segment_moves(field: &ContinuousMaskField, base: &SegmentedMask, cfg: &ExtractConfig) -> Result<SegmentMoves> {
    let t = cfg.binarize_threshold;
    if !(t > 0.0 && t < 1.0) {
        return Err(AiError::BadParameter(format!("binarize threshold {t}")));
    }
    let binary: Vec<f64> = field.data.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect();
    let img = ResistImage { grid: field.grid, data: binary, threshold: 0.5 };
    let cs = contour::marching_squares(&img, 0.5)?;
    let records = contour::measure_epe(&cs, base, cfg.search_radius_nm, Condition { focus_nm: 0.0, dose: 1.0 });
    let mut warned = Vec::new();
    let moves_nm = records
        .iter()
        .map(|r| match r.epe_nm {
            Some(d) => d,
            None => {
                warned.push(r.segment);
                0.0
            }
        })
        .collect();
    Ok(SegmentMoves { moves_nm, warned })
}

/// Base mask with offsets set to `moves_nm`, clamped MRC-clean.
pub fn apply_segment_moves(base: &SegmentedMask, moves_nm: &[f64], rules: &DbuRules) -> Result<SegmentedMask> {
    if let Some(p) = moves_nm.iter().position(|v| !v.is_finite()) {
        return Err(AiError::BadParameter(format!("move {p} is not finite")));
    }
    Ok(crate::opc::seeded_mask(base, moves_nm, rules)?)
}
