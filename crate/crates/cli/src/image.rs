//! Binary PGM/PPM output: sample grids for image data and density plots for
//! 2-D data.

use tgan_core::Tensor;

/// `(v + 1)·127.5`, rounded half to even and clamped to `[0, 255]`.
pub fn to_pixel(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    ((v + 1.0) * 127.5).round_ties_even().clamp(0.0, 255.0) as u8
}

pub fn pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), 3 * width * height);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub const SEPARATOR: u8 = 255;

/// Width and height of a `cols × rows` grid of `side`-pixel tiles with 1px
/// separators.
pub fn grid_dims(cols: usize, rows: usize, side: usize) -> (usize, usize) {
    (
        cols * side + cols.saturating_sub(1),
        rows * side + rows.saturating_sub(1),
    )
}

/// Lays out `images[k]` (row-major `side × side` in `[-1, 1]`) with image
/// `k` at column `k % cols`, row `k / cols`.
pub fn image_grid(images: &Tensor, side: usize, cols: usize) -> Vec<u8> {
    let n = images.shape()[0];
    let rows = n.div_ceil(cols.max(1));
    let (w, h) = grid_dims(cols, rows, side);
    let mut px = vec![SEPARATOR; w * h];
    for k in 0..n {
        let (c, r) = (k % cols, k / cols);
        let (x0, y0) = (c * (side + 1), r * (side + 1));
        let img = images.row(k);
        for y in 0..side {
            for x in 0..side {
                px[(y0 + y) * w + x0 + x] = to_pixel(img[y * side + x]);
            }
        }
    }
    pgm(w, h, &px)
}

fn bin(v: f64, size: usize) -> Option<usize> {
    let b = ((v + 1.0) / 2.0 * size as f64).floor();
    (b >= 0.0 && b < size as f64).then_some(b as usize)
}

/// Grayscale 2-D histogram over `[-1, 1]²`, `y` pointing up, scaled so the
/// fullest cell is white.
pub fn density_pgm(samples: &Tensor, size: usize) -> Vec<u8> {
    let mut counts = vec![0usize; size * size];
    for r in 0..samples.shape()[0] {
        let p = samples.row(r);
        if let (Some(x), Some(y)) = (bin(p[0], size), bin(p[1], size)) {
            counts[(size - 1 - y) * size + x] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let px: Vec<u8> = counts
        .iter()
        .map(|&c| (c as f64 / max * 255.0).round_ties_even() as u8)
        .collect();
    pgm(size, size, &px)
}

fn hue(k: usize, classes: usize) -> [f64; 3] {
    let h = 6.0 * k as f64 / classes.max(1) as f64;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Color 2-D density: each cell takes the hue of its majority class and a
/// brightness proportional to its count.
pub fn density_ppm(samples: &Tensor, labels: &[usize], classes: usize, size: usize) -> Vec<u8> {
    let mut counts = vec![vec![0usize; classes.max(1)]; size * size];
    for (r, &l) in labels.iter().enumerate() {
        let p = samples.row(r);
        if let (Some(x), Some(y)) = (bin(p[0], size), bin(p[1], size)) {
            counts[(size - 1 - y) * size + x][l.min(classes.saturating_sub(1))] += 1;
        }
    }
    let totals: Vec<usize> = counts.iter().map(|c| c.iter().sum()).collect();
    let max = totals.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut rgb = Vec::with_capacity(3 * size * size);
    for (cell, &t) in counts.iter().zip(&totals) {
        let major = cell
            .iter()
            .enumerate()
            .fold((0, 0), |a, (k, &c)| if c > a.1 { (k, c) } else { a })
            .0;
        let b = t as f64 / max;
        for ch in hue(major, classes) {
            rgb.push((ch * b * 255.0).round_ties_even() as u8);
        }
    }
    ppm(size, size, &rgb)
}
