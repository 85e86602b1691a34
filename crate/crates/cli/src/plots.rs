//! Minimal PNG scatter plots for the area agreement analysis.

use std::path::Path;

use image::{Rgb, RgbImage};
use rccm::error::{Error, Result};
use rccm::metrics::BlandAltman;

const SIZE: u32 = 480;
const MARGIN: u32 = 40;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const BLUE: Rgb<u8> = Rgb([30, 90, 200]);
const RED: Rgb<u8> = Rgb([200, 40, 40]);
const GREY: Rgb<u8> = Rgb([150, 150, 150]);

/// Maps data coordinates onto the plotting area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: &[f64], ys: &[f64], extra_y: &[f64]) -> Self {
        let range = |vals: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let pad = ((hi - lo) * 0.05).max(1e-6);
            (lo - pad, hi + pad)
        };
        Self {
            x: range(&mut xs.iter().copied()),
            y: range(&mut ys.iter().chain(extra_y).copied()),
        }
    }

    fn px(&self, x: f64, y: f64) -> (i64, i64) {
        let span = (SIZE - 2 * MARGIN) as f64;
        let u = MARGIN as f64 + (x - self.x.0) / (self.x.1 - self.x.0) * span;
        let v = (SIZE - MARGIN) as f64 - (y - self.y.0) / (self.y.1 - self.y.0) * span;
        (u.round() as i64, v.round() as i64)
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), c: Rgb<u8>, dashed: bool) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
    for i in 0..=steps {
        if dashed && (i / 6) % 2 == 1 {
            continue;
        }
        let t = i as f64 / steps as f64;
        let x = a.0 as f64 + t * (b.0 - a.0) as f64;
        let y = a.1 as f64 + t * (b.1 - a.1) as f64;
        put(img, x.round() as i64, y.round() as i64, c);
    }
}

fn dot(img: &mut RgbImage, (x, y): (i64, i64), c: Rgb<u8>) {
    for dy in -2..=2 {
        for dx in -2..=2 {
            if dx * dx + dy * dy <= 5 {
                put(img, x + dx, y + dy, c);
            }
        }
    }
}

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, WHITE);
    let (lo, hi) = (MARGIN as i64, (SIZE - MARGIN) as i64);
    line(&mut img, (lo, hi), (hi, hi), BLACK, false);
    line(&mut img, (lo, lo), (lo, hi), BLACK, false);
    img
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn check(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.len() != ys.len() || xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("plot needs equal-length finite data".into()));
    }
    Ok(())
}

/// Reference area on x, predicted area on y, with the identity line.
pub fn correlation(reference: &[f64], predicted: &[f64], path: &Path) -> Result<()> {
    check(reference, predicted)?;
    let f = Frame::new(reference, predicted, reference);
    let mut img = canvas();
    let lo = f.x.0.max(f.y.0);
    let hi = f.x.1.min(f.y.1);
    if lo < hi {
        line(&mut img, f.px(lo, lo), f.px(hi, hi), GREY, true);
    }
    for (&x, &y) in reference.iter().zip(predicted) {
        dot(&mut img, f.px(x, y), BLUE);
    }
    save(&img, path)
}

/// Pair mean on x, difference on y, with bias and limits of agreement.
pub fn bland_altman(predicted: &[f64], reference: &[f64], ba: &BlandAltman, path: &Path) -> Result<()> {
    check(predicted, reference)?;
    let means: Vec<f64> = predicted.iter().zip(reference).map(|(a, b)| 0.5 * (a + b)).collect();
    let diffs: Vec<f64> = predicted.iter().zip(reference).map(|(a, b)| a - b).collect();
    let f = Frame::new(&means, &diffs, &[ba.lo, ba.hi]);
    let mut img = canvas();
    for (level, colour, dashed) in [(ba.bias, RED, false), (ba.lo, GREY, true), (ba.hi, GREY, true)] {
        line(&mut img, f.px(f.x.0, level), f.px(f.x.1, level), colour, dashed);
    }
    for (&x, &y) in means.iter().zip(&diffs) {
        dot(&mut img, f.px(x, y), BLUE);
    }
    save(&img, path)
}
