//! Sampled scalar fields for contour tests.

use litho::contour::marching_squares;
use litho::imaging::{ImageGrid, ResistImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sample(grid: ImageGrid, f: impl Fn(f64, f64) -> f64) -> ResistImage {
    let mut data = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.center(i, j);
            data.push(f(c[0], c[1]));
        }
    }
    ResistImage { grid, data, threshold: 0.5 }
}

/// Independent bilinear evaluation over pixel-centre samples; `None`
/// outside the sampled hull.
pub fn bilerp(img: &ResistImage, p: [f64; 2]) -> Option<f64> {
    let g = &img.grid;
    let x = (p[0] - g.origin_nm[0]) / g.pitch_nm - 0.5;
    let y = (p[1] - g.origin_nm[1]) / g.pitch_nm - 0.5;
    if x < 0.0 || y < 0.0 || x > (g.nx - 1) as f64 || y > (g.ny - 1) as f64 {
        return None;
    }
    let i = (x.floor() as usize).min(g.nx - 2);
    let j = (y.floor() as usize).min(g.ny - 2);
    let (u, v) = (x - i as f64, y - j as f64);
    let d = |a: usize, b: usize| img.data[b * g.nx + a];
    Some(
        d(i, j) * (1.0 - u) * (1.0 - v)
            + d(i + 1, j) * u * (1.0 - v)
            + d(i, j + 1) * (1.0 - u) * v
            + d(i + 1, j + 1) * u * v,
    )
}

/// Sum of random Gaussian bumps, values roughly in [0, 1].
pub fn smooth_field(seed: u64, extent: f64, width: f64) -> impl Fn(f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<[f64; 4]> = (0..8)
        .map(|_| {
            [
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
                rng.random_range(0.3..0.9),
                rng.random_range(0.5..1.5) * width,
            ]
        })
        .collect();
    move |x, y| bumps.iter().map(|b| b[2] * (-((x - b[0]).powi(2) + (y - b[1]).powi(2)) / (2.0 * b[3] * b[3])).exp()).sum()
}

pub fn circle_errors(pitch: f64, centre: [f64; 2], r: f64) -> (f64, f64) {
    let n = (64.0 / pitch).round() as usize;
    let grid = ImageGrid::new(n, n, pitch, [0.0, 0.0]).unwrap();
    let img = sample(grid, |x, y| r * r - (x - centre[0]).powi(2) - (y - centre[1]).powi(2));
    let c = marching_squares(&img, 0.0).unwrap();
    assert_eq!(c.contours.len(), 1);
    let k = &c.contours[0];
    let pi = std::f64::consts::PI;
    ((k.signed_area() - pi * r * r).abs(), (k.perimeter() - 2.0 * pi * r).abs())
}
