//! Grayscale PNG renderings. The CSV next to each image is the real output.

use std::path::Path;

use image::{GrayImage, Luma};

use areamimo_core::scanpath::ScanPath;
use areamimo_core::{Error, Result};

fn save(img: &GrayImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string())))
}

/// One pixel per scan point: column along the fine axis, row per scan line.
/// Brightness spans the finite value range; non-finite values are black.
pub fn heatmap(path: &ScanPath, values: &[f64], out: &Path) -> Result<()> {
    let pts = path.points();
    let x0 = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let cols = pts
        .iter()
        .map(|p| ((p.x - x0) / path.fine_pitch()).round() as u32)
        .max()
        .unwrap_or(0)
        + 1;
    let rows = path.lines().len() as u32;
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = GrayImage::new(cols, rows.max(1));
    for (r, line) in path.lines().iter().enumerate() {
        for m in line.clone() {
            let c = ((pts[m].x - x0) / path.fine_pitch()).round() as u32;
            let v = values[m];
            let level = if v.is_finite() {
                (255.0 * (v - lo) / span).round() as u8
            } else {
                0
            };
            // Image rows grow downwards; put the first scan line at the bottom.
            img.put_pixel(c.min(cols - 1), rows - 1 - r as u32, Luma([level]));
        }
    }
    save(&img, out)
}

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 40;

fn draw_line(img: &mut GrayImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), level: u8) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, Luma([level]));
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Line chart of several (x, y) series on shared axes. Series are told
/// apart by gray level; NaN points break a series.
pub fn line_chart(series: &[Vec<(f64, f64)>], out: &Path) -> Result<()> {
    let mut img = GrayImage::from_pixel(W, H, Luma([255]));
    let all = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        xlo = xlo.min(x);
        xhi = xhi.max(x);
        ylo = ylo.min(y);
        yhi = yhi.max(y);
    }
    if !xlo.is_finite() {
        return save(&img, out);
    }
    if xhi <= xlo {
        xhi = xlo + 1.0;
    }
    if yhi <= ylo {
        yhi = ylo + 1.0;
    }
    let px = |x: f64| (MARGIN as f64 + (x - xlo) / (xhi - xlo) * (W - 2 * MARGIN) as f64).round() as i64;
    let py = |y: f64| ((H - MARGIN) as f64 - (y - ylo) / (yhi - ylo) * (H - 2 * MARGIN) as f64).round() as i64;
    let (left, bottom) = (MARGIN as i64, (H - MARGIN) as i64);
    draw_line(&mut img, (left, bottom), ((W - MARGIN) as i64, bottom), 0);
    draw_line(&mut img, (left, bottom), (left, MARGIN as i64), 0);
    for (i, s) in series.iter().enumerate() {
        let level = (160.0 * i as f64 / series.len().max(1) as f64) as u8;
        for w in s.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if [x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
                draw_line(&mut img, (px(x0), py(y0)), (px(x1), py(y1)), level);
            }
        }
        for &(x, y) in s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            for d in -2..=2 {
                draw_line(&mut img, (px(x) + d, py(y) - 2), (px(x) + d, py(y) + 2), level);
            }
        }
    }
    save(&img, out)
}
