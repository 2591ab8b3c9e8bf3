//! Row-major 2-D FFT on top of 1-D rustfft plans. Neither direction scales.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// In-place 2-D transform of an `nx` x `ny` row-major array.
pub fn fft2(data: &mut [Complex64], nx: usize, ny: usize, dir: Direction) {
    assert_eq!(data.len(), nx * ny, "fft2 size mismatch");
    if data.is_empty() {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = match dir {
        Direction::Forward => (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny)),
        Direction::Inverse => (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny)),
    };
    data.par_chunks_mut(nx).for_each(|r| row.process(r));
    let mut t = transpose(data, nx, ny);
    t.par_chunks_mut(ny).for_each(|c| col.process(c));
    data.copy_from_slice(&transpose(&t, ny, nx));
}

fn transpose(data: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); data.len()];
    for y in 0..ny {
        for x in 0..nx {
            out[x * ny + y] = data[y * nx + x];
        }
    }
    out
}

/// Signed frequency index of FFT bin `k` out of `n`.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// FFT bin of signed index `s`.
pub fn bin(s: i64, n: usize) -> usize {
    s.rem_euclid(n as i64) as usize
}

/// Smallest size >= n whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}
