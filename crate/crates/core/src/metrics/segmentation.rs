//! Overlap, area and surface-distance measures between a predicted mask
//! `A` and a reference mask `M`.

use serde::{Deserialize, Serialize};

use super::edt::squared_distance_map;
use crate::error::{Error, Result};
use crate::grid::{neighbors4, Mask};

fn check_shapes(a: &Mask, m: &Mask) -> Result<()> {
    if !a.same_shape(m) {
        return Err(Error::Invalid(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            a.height, a.width, m.height, m.width
        )));
    }
    Ok(())
}

/// Dice similarity in percent.
pub fn dice(a: &Mask, m: &Mask) -> Result<f64> {
    check_shapes(a, m)?;
    let (na, nm) = (a.count(), m.count());
    if na + nm == 0 {
        return Err(Error::UndefinedMetric("dice of two empty masks".into()));
    }
    let both = a.data.iter().zip(&m.data).filter(|(&u, &v)| u != 0 && v != 0).count();
    Ok(200.0 * both as f64 / (na + nm) as f64)
}

/// Plaque area of a mask in mm².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaMeasure {
    pub pa: f64,
}

impl AreaMeasure {
    pub fn of(mask: &Mask, spacing: f64) -> Self {
        Self {
            pa: mask.count() as f64 * spacing * spacing,
        }
    }
}

/// Absolute plaque area difference in mm².
pub fn area_diff(a: &Mask, m: &Mask, spacing: f64) -> Result<f64> {
    check_shapes(a, m)?;
    Ok(a.count().abs_diff(m.count()) as f64 * spacing * spacing)
}

/// Inner boundary of a mask: foreground pixels with at least one
/// 4-neighbour that is background or lies outside the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub height: usize,
    pub width: usize,
    /// `(row, col)` in row-major order.
    pub points: Vec<(usize, usize)>,
    /// mm per pixel.
    pub spacing: f64,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point coordinates in mm.
    pub fn points_mm(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .map(|&(y, x)| (y as f64 * self.spacing, x as f64 * self.spacing))
    }

    fn sites(&self) -> Vec<bool> {
        let mut s = vec![false; self.height * self.width];
        for &(y, x) in &self.points {
            s[y * self.width + x] = true;
        }
        s
    }
}

pub fn contour_of(mask: &Mask, spacing: f64) -> Contour {
    let (h, w) = (mask.height, mask.width);
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let on_edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if on_edge || neighbors4(y, x, h, w).any(|(ny, nx)| !mask.get(ny, nx)) {
                points.push((y, x));
            }
        }
    }
    Contour {
        height: h,
        width: w,
        points,
        spacing,
    }
}

/// Distances in mm from every point of `from` to the nearest point of `to`.
fn directed_distances(from: &Contour, to: &Contour) -> Vec<f64> {
    let d2 = squared_distance_map(&to.sites(), to.height, to.width);
    from.points
        .iter()
        .map(|&(y, x)| d2[y * to.width + x].sqrt() * from.spacing)
        .collect()
}

/// Mean and max of one direction. The mean is capped at the max so that
/// summation rounding can never push it above.
fn mean_and_max(d: &[f64]) -> (f64, f64) {
    let max = d.iter().copied().fold(0.0, f64::max);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    (mean.min(max), max)
}

fn contour_pair(a: &Mask, m: &Mask, spacing: f64) -> Result<(Contour, Contour)> {
    check_shapes(a, m)?;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Invalid(format!("pixel spacing {spacing} must be positive")));
    }
    let (ca, cm) = (contour_of(a, spacing), contour_of(m, spacing));
    if ca.is_empty() || cm.is_empty() {
        return Err(Error::UndefinedMetric("surface distance needs two nonempty contours".into()));
    }
    Ok((ca, cm))
}

/// Surface distances between two masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub assd: f64,
    pub hausdorff: f64,
}

pub fn surface_distances(a: &Mask, m: &Mask, spacing: f64) -> Result<SurfaceDistances> {
    let (ca, cm) = contour_pair(a, m, spacing)?;
    let (mean_a, max_a) = mean_and_max(&directed_distances(&ca, &cm));
    let (mean_m, max_m) = mean_and_max(&directed_distances(&cm, &ca));
    Ok(SurfaceDistances {
        assd: 0.5 * (mean_a + mean_m),
        hausdorff: max_a.max(max_m),
    })
}

/// Average symmetric surface distance in mm.
pub fn assd(a: &Mask, m: &Mask, spacing: f64) -> Result<f64> {
    Ok(surface_distances(a, m, spacing)?.assd)
}

/// Hausdorff distance in mm (strict maximum).
pub fn hausdorff(a: &Mask, m: &Mask, spacing: f64) -> Result<f64> {
    Ok(surface_distances(a, m, spacing)?.hausdorff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        Mask::from_fn(h, w, |y, x| on.contains(&(y, x)))
    }

    #[test]
    fn dice_examples() {
        let a = mask(2, 4, &[(0, 0), (0, 1), (0, 2), (0, 3)]);
        let m = mask(2, 4, &[(0, 2), (0, 3), (1, 2), (1, 3)]);
        assert_eq!(dice(&a, &a).unwrap(), 100.0);
        assert_eq!(dice(&a, &m).unwrap(), 50.0);
        assert_eq!(dice(&mask(2, 4, &[(1, 0)]), &a).unwrap(), 0.0);
        assert!(matches!(dice(&Mask::empty(2, 2), &Mask::empty(2, 2)), Err(Error::UndefinedMetric(_))));
        assert!(dice(&Mask::empty(2, 2), &Mask::empty(2, 3)).is_err());
    }

    #[test]
    fn area_difference() {
        let a = Mask::from_fn(20, 10, |y, _| y < 12);
        let m = Mask::from_fn(20, 10, |y, _| y < 10);
        assert!((area_diff(&a, &m, 0.1).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(area_diff(&a, &m, 0.1).unwrap(), area_diff(&m, &a, 0.1).unwrap());
        assert!((AreaMeasure::of(&a, 0.1).pa - 1.2).abs() < 1e-12);
    }

    #[test]
    fn contour_examples() {
        assert_eq!(contour_of(&mask(3, 3, &[(1, 1)]), 1.0).points, vec![(1, 1)]);
        let square = Mask::from_fn(5, 5, |y, x| (1..4).contains(&y) && (1..4).contains(&x));
        let c = contour_of(&square, 1.0);
        assert_eq!(c.len(), 8);
        assert!(!c.points.contains(&(2, 2)));
        let full = Mask::from_fn(4, 5, |_, _| true);
        assert_eq!(contour_of(&full, 1.0).len(), 14);
        assert!(contour_of(&Mask::empty(3, 3), 1.0).is_empty());
    }

    #[test]
    fn point_distances() {
        let a = mask(8, 8, &[(1, 1)]);
        let m = mask(8, 8, &[(4, 5)]);
        let d = surface_distances(&a, &m, 0.1).unwrap();
        assert!((d.assd - 0.5).abs() < 1e-12);
        assert!((d.hausdorff - 0.5).abs() < 1e-12);
        assert_eq!(assd(&a, &a, 0.1).unwrap(), 0.0);
        assert_eq!(hausdorff(&m, &m, 0.1).unwrap(), 0.0);
        assert!(assd(&a, &Mask::empty(8, 8), 0.1).is_err());
    }
}
