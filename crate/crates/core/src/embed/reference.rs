// SPDX-License-Identifier: Apache-2.0

//! Grid-statistics embedder.
//!
//! The image is cut into a 16x16 grid; cell `(gy, gx)` spans rows
//! `[gy*H/16, (gy+1)*H/16)` and the analogous columns. Each cell contributes
//! four features, in row-major cell order:
//!
//! 1. mean red, 2. mean green, 3. mean blue, all scaled to [0, 1];
//! 4. mean absolute horizontal forward difference of luminance plus mean
//!    absolute vertical forward difference, each taken over the pixel pairs
//!    that lie inside the cell. Luminance is `(R + G + B) / 3` in [0, 1].
//!
//! All sums are integer, so the output is bit-reproducible and independent
//! of traversal order. Cells with no pixels (images narrower than the grid)
//! produce zeros.

use super::image::ImageTensor;
use crate::types::EmbeddingVector;

pub const GRID: usize = 16;
pub const FEATURES_PER_CELL: usize = 4;
pub const MAX_DIM: usize = GRID * GRID * FEATURES_PER_CELL;

/// Full 1024-feature grid descriptor.
pub fn grid_features(img: &ImageTensor) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.data();
    let lum3 = |x: usize, y: usize| -> i32 {
        let i = (y * w + x) * 3;
        data[i] as i32 + data[i + 1] as i32 + data[i + 2] as i32
    };

    let mut out = Vec::with_capacity(MAX_DIM);
    for gy in 0..GRID {
        let (y0, y1) = (gy * h / GRID, (gy + 1) * h / GRID);
        for gx in 0..GRID {
            let (x0, x1) = (gx * w / GRID, (gx + 1) * w / GRID);
            let pixels = ((x1 - x0) * (y1 - y0)) as u64;

            let mut rgb = [0u64; 3];
            let mut dx_sum = 0u64;
            let mut dy_sum = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = (y * w + x) * 3;
                    for c in 0..3 {
                        rgb[c] += data[i + c] as u64;
                    }
                    if x + 1 < x1 {
                        dx_sum += (lum3(x + 1, y) - lum3(x, y)).unsigned_abs() as u64;
                    }
                    if y + 1 < y1 {
                        dy_sum += (lum3(x, y + 1) - lum3(x, y)).unsigned_abs() as u64;
                    }
                }
            }

            for sum in rgb {
                out.push(mean(sum, pixels * 255));
            }
            let dx_pairs = (x1 - x0).saturating_sub(1) as u64 * (y1 - y0) as u64;
            let dy_pairs = (x1 - x0) as u64 * (y1 - y0).saturating_sub(1) as u64;
            out.push(mean(dx_sum, dx_pairs * 765) + mean(dy_sum, dy_pairs * 765));
        }
    }
    out
}

fn mean(sum: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        sum as f64 / denom as f64
    }
}

/// First `dim` grid features.
pub fn reference_embedding(img: &ImageTensor, dim: usize) -> EmbeddingVector {
    let mut f = grid_features(img);
    f.truncate(dim);
    EmbeddingVector::from_f64(&f).expect("grid features are finite")
}

/// Maps a feature position to the position it occupies after a
/// horizontal flip (cell column `gx` becomes `15 - gx`). Exact when the
/// image width is a multiple of the grid size.
pub fn flipped_feature_index(i: usize) -> usize {
    let cell = i / FEATURES_PER_CELL;
    let f = i % FEATURES_PER_CELL;
    let (gy, gx) = (cell / GRID, cell % GRID);
    (gy * GRID + (GRID - 1 - gx)) * FEATURES_PER_CELL + f
}
