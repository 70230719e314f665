//! Minimal dependency-free line plots. Every plot ships next to a CSV with
//! the same data, so the raster is a convenience view only; it has axes,
//! gridlines and per-series colors but no text labels.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Result, SibaError};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const MARGIN: u32 = 48;

const PALETTE: [[u8; 3]; 6] = [
    [214, 69, 65],   // red
    [31, 119, 180],  // blue
    [44, 160, 44],   // green
    [255, 127, 14],  // orange
    [148, 103, 189], // purple
    [23, 190, 207],  // cyan
];

#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub points: Vec<(f64, f64)>,
}

fn draw_line(img: &mut RgbImage, a: (f32, f32), b: (f32, f32), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as u32).max(1);
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        let x = (a.0 + t * (b.0 - a.0)).round() as i64;
        let y = (a.1 + t * (b.1 - a.1)).round() as i64;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Render one or more series as polylines with markers into a PNG.
pub fn plot_lines(path: &Path, series: &[PlotSeries]) -> Result<()> {
    let points: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if points.is_empty() {
        return Err(SibaError::invalid("plot_lines needs at least one point"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(SibaError::invalid("plot data must be finite"));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let to_px = |x: f64, y: f64| -> (f32, f32) {
        let px = MARGIN as f64
            + (x - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN) as f64;
        let py = (HEIGHT - MARGIN) as f64
            - (y - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN) as f64;
        (px as f32, py as f32)
    };

    // light gridlines at quarters, then the axis frame
    let grid = Rgb([225, 225, 225]);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        draw_line(&mut img, to_px(fx, y0), to_px(fx, y1), grid);
        draw_line(&mut img, to_px(x0, fy), to_px(x1, fy), grid);
    }
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, to_px(x0, y0), to_px(x1, y0), axis);
    draw_line(&mut img, to_px(x0, y0), to_px(x0, y1), axis);

    for (si, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[si % PALETTE.len()]);
        let mut sorted = s.points.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        for pair in sorted.windows(2) {
            draw_line(&mut img, to_px(pair[0].0, pair[0].1), to_px(pair[1].0, pair[1].1), color);
        }
        for (x, y) in &sorted {
            let (px, py) = to_px(*x, *y);
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (mx, my) = (px as i64 + dx, py as i64 + dy);
                    if mx >= 0 && my >= 0 && (mx as u32) < WIDTH && (my as u32) < HEIGHT {
                        img.put_pixel(mx as u32, my as u32, color);
                    }
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}
