use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PhantomConfig, PlaqueClass, Sample};
use crate::error::{Error, Result};
use crate::grid::{neighbors4, Image, Mask};

/// Largest plaque, as a fraction of the image, that we try to place.
const MAX_FILL: f64 = 0.35;
const MIN_PIXELS: f64 = 4.0;
const MAX_ATTEMPTS: usize = 256;

/// Independent generator stream for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Pixel-count bounds of the plaque area that can actually be realized.
fn feasible_pixels(config: &PhantomConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let (lo, hi) = config.area_range;
    let total = (config.image_height * config.image_width) as f64;
    let lo_px = (lo / config.pixel_area()).max(MIN_PIXELS);
    let hi_px = (hi / config.pixel_area()).min(MAX_FILL * total);
    if lo_px >= hi_px {
        return Err(Error::Config(format!(
            "area_range ({lo}, {hi}) mm² cannot be realized on a {}x{} image at {} mm/pixel",
            config.image_height, config.image_width, config.pixel_spacing
        )));
    }
    Ok((lo_px, hi_px))
}

struct BlobShape {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    harmonics: [(f64, f64); 3],
}

impl BlobShape {
    fn random(rng: &mut ChaCha8Rng, area_px: f64) -> Self {
        let aspect = rng.random_range(1.0..2.2);
        let r0 = (area_px / PI).sqrt();
        let mut harmonics = [(0.0, 0.0); 3];
        for h in &mut harmonics {
            *h = (rng.random_range(-0.1..0.1), rng.random_range(0.0..2.0 * PI));
        }
        Self {
            cx: 0.0,
            cy: 0.0,
            rx: r0 * f64::sqrt(aspect),
            ry: r0 / f64::sqrt(aspect),
            angle: rng.random_range(-0.35..0.35),
            harmonics,
        }
    }

    /// Half extents of a box that contains the blob.
    fn extents(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let grow = 1.0 + self.harmonics.iter().map(|h| h.0.abs()).sum::<f64>();
        (
            grow * (self.rx * c.abs() + self.ry * s.abs()) + 1.0,
            grow * (self.rx * s.abs() + self.ry * c.abs()) + 1.0,
        )
    }

    fn rescale(&mut self, factor: f64) {
        self.rx *= factor;
        self.ry *= factor;
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        let rho = (u * u + v * v).sqrt();
        let theta = v.atan2(u);
        let radius = 1.0
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(k, &(a, phase))| a * ((k as f64 + 2.0) * theta + phase).cos())
                .sum::<f64>();
        rho <= radius
    }

    /// Rasterizes at pixel centres, keeps the largest 4-connected component
    /// and fills holes.
    fn rasterize(&self, height: usize, width: usize) -> Mask {
        let raw = Mask::from_fn(height, width, |y, x| self.contains(y as f64, x as f64));
        fill_holes(&largest_component(&raw))
    }
}

fn largest_component(mask: &Mask) -> Mask {
    let (labels, n) = mask.labels();
    if n <= 1 {
        return mask.clone();
    }
    let mut sizes = vec![0usize; n + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let best = (1..=n).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))).unwrap() as u32;
    Mask {
        height: mask.height,
        width: mask.width,
        data: labels.iter().map(|&l| (l == best) as u8).collect(),
    }
}

/// Marks every background pixel that is not 4-connected to the image border
/// as foreground.
fn fill_holes(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut outside = vec![false; h * w];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (y == 0 || x == 0 || y + 1 == h || x + 1 == w) && !mask.get(y, x) {
                outside[y * w + x] = true;
                stack.push((y, x));
            }
        }
    }
    while let Some((y, x)) = stack.pop() {
        for (ny, nx) in neighbors4(y, x, h, w) {
            let j = ny * w + nx;
            if !outside[j] && !mask.get(ny, nx) {
                outside[j] = true;
                stack.push((ny, nx));
            }
        }
    }
    Mask {
        height: h,
        width: w,
        data: outside.iter().map(|&o| (!o) as u8).collect(),
    }
}

fn place_mask(config: &PhantomConfig, rng: &mut ChaCha8Rng, lo_px: f64, hi_px: f64) -> Option<Mask> {
    let (h, w) = (config.image_height as f64, config.image_width as f64);
    // aim inside the range so rasterization jitter stays within it
    let margin = 0.05 * (hi_px - lo_px);
    let target = rng.random_range(lo_px + margin..=hi_px - margin);
    let mut shape = BlobShape::random(rng, target);
    let (ex, ey) = shape.extents();
    if 2.0 * ex >= w || 2.0 * ey >= h {
        return None;
    }
    shape.cx = rng.random_range(ex..w - ex);
    shape.cy = rng.random_range(ey..h - ey);
    for _ in 0..4 {
        let mask = shape.rasterize(config.image_height, config.image_width);
        let count = mask.count() as f64;
        if count >= lo_px && count <= hi_px && count > 0.0 {
            return Some(mask);
        }
        if count == 0.0 {
            return None;
        }
        shape.rescale((target / count).sqrt());
        let (ex, ey) = shape.extents();
        if shape.cx < ex || shape.cx > w - ex || shape.cy < ey || shape.cy > h - ey {
            return None;
        }
    }
    None
}

/// Per-pixel mean intensity before speckle.
fn mean_map(config: &PhantomConfig, class: PlaqueClass, mask: &Mask, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let contrast = config.class_contrasts.get(class);
    let mut means: Vec<f64> = mask
        .data
        .iter()
        .map(|&m| if m != 0 { contrast.plaque } else { contrast.background })
        .collect();
    if class != PlaqueClass::Mixed {
        return means;
    }
    // bright and dark halves split by a line through the plaque centroid,
    // with the area-weighted mean kept at the configured plaque mean
    let w = mask.width;
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
    for (i, &m) in mask.data.iter().enumerate() {
        if m != 0 {
            sy += (i / w) as f64;
            sx += (i % w) as f64;
            n += 1.0;
        }
    }
    let (cy, cx) = (sy / n, sx / n);
    loop {
        let phi = rng.random_range(0.0..2.0 * PI);
        let (s, c) = phi.sin_cos();
        let bright: Vec<bool> = (0..mask.data.len())
            .map(|i| ((i % w) as f64 - cx) * c + ((i / w) as f64 - cy) * s >= 0.0)
            .collect();
        let n_bright = mask.data.iter().zip(&bright).filter(|(&m, &b)| m != 0 && b).count() as f64;
        let n_dark = n - n_bright;
        if n_bright == 0.0 || n_dark == 0.0 {
            continue;
        }
        let hi = (contrast.plaque + config.mixed_split).clamp(0.0, 1.0);
        let lo = (contrast.plaque - config.mixed_split * n_bright / n_dark).clamp(0.0, 1.0);
        for (i, &m) in mask.data.iter().enumerate() {
            if m != 0 {
                means[i] = if bright[i] { hi } else { lo };
            }
        }
        return means;
    }
}

/// Generates one phantom of the given class.
///
/// The plaque is a single filled, 4-connected blob whose area lies inside
/// `config.area_range`. Intensities carry multiplicative Gaussian speckle,
/// are clipped to `[0, 1]` and quantized to 8 bits so that PGM storage is
/// lossless.
pub fn generate_phantom(config: &PhantomConfig, class: PlaqueClass, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let (lo_px, hi_px) = feasible_pixels(config)?;
    let mask = (0..MAX_ATTEMPTS)
        .find_map(|_| place_mask(config, rng, lo_px, hi_px))
        .ok_or_else(|| {
            Error::Config(format!(
                "could not place a plaque of area {:?} mm² after {MAX_ATTEMPTS} attempts",
                config.area_range
            ))
        })?;
    let means = mean_map(config, class, &mask, rng);
    let data = means
        .iter()
        .map(|&m| {
            let noise: f64 = rng.sample(StandardNormal);
            let v = (m * (1.0 + config.speckle_scale * noise)).clamp(0.0, 1.0);
            (v * 255.0).round() as u8 as f32 / 255.0
        })
        .collect();
    Ok(Sample {
        id: String::new(),
        image: Image::new(config.image_height, config.image_width, data)?,
        mask,
        class_label: class,
        pixel_spacing: config.pixel_spacing,
    })
}

/// Generates `counts[c]` samples of each class `c`, in class order, with
/// ids `s00000`, `s00001`, ….
pub fn generate_dataset(config: &PhantomConfig, counts: [usize; 3]) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut out = Vec::with_capacity(counts.iter().sum());
    for class in PlaqueClass::ALL {
        for _ in 0..counts[class.index()] {
            let index = out.len();
            let mut rng = sample_rng(config.seed, index as u64);
            let mut sample = generate_phantom(config, class, &mut rng)?;
            sample.id = format!("s{index:05}");
            out.push(sample);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hole_filling_and_largest_component() {
        #[rustfmt::skip]
        let ring = Mask::new(5, 5, vec![
            1, 0, 0, 0, 0,
            0, 1, 1, 1, 0,
            0, 1, 0, 1, 0,
            0, 1, 1, 1, 0,
            0, 0, 0, 0, 0,
        ]).unwrap();
        let m = fill_holes(&largest_component(&ring));
        assert_eq!(m.count(), 9);
        assert_eq!(m.components(), 1);
        assert!(!m.get(0, 0));
        assert!(m.get(2, 2));
    }

    #[test]
    fn infeasible_area_range_is_rejected() {
        let cfg = PhantomConfig {
            area_range: (200.0, 300.0),
            ..PhantomConfig::default()
        };
        let mut rng = sample_rng(0, 0);
        assert!(matches!(
            generate_phantom(&cfg, PlaqueClass::Hypoechoic, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mixed_has_bright_and_dark_parts() {
        let cfg = PhantomConfig {
            speckle_scale: 0.0,
            ..PhantomConfig::default()
        };
        let mut rng = sample_rng(3, 0);
        let s = generate_phantom(&cfg, PlaqueClass::Mixed, &mut rng).unwrap();
        let inside: Vec<f32> = (0..s.mask.data.len())
            .filter(|&i| s.mask.data[i] != 0)
            .map(|i| s.image.data[i])
            .collect();
        let max = inside.iter().cloned().fold(f32::MIN, f32::max) as f64;
        let min = inside.iter().cloned().fold(f32::MAX, f32::min) as f64;
        assert!(max > cfg.class_contrasts.mixed.plaque + 0.1);
        assert!(min < cfg.class_contrasts.mixed.plaque - 0.1);
    }
}
