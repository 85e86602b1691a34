//! Brute-force metric oracles, written independently of the library.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rccm::grid::Mask;

/// Boundary by direct neighbour inspection.
pub fn oracle_boundary(m: &Mask) -> Vec<(i64, i64)> {
    let (h, w) = (m.height as i64, m.width as i64);
    let inside = |y: i64, x: i64| y >= 0 && x >= 0 && y < h && x < w && m.get(y as usize, x as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if inside(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !inside(y + dy, x + dx)) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Pairwise O(|∂A|·|∂M|) distances: per-direction mean (capped at the
/// direction's max) and max, combined as in the library definition.
pub fn oracle_distances(a: &Mask, m: &Mask, spacing: f64) -> (f64, f64) {
    let ba = oracle_boundary(a);
    let bm = oracle_boundary(m);
    let directed = |from: &[(i64, i64)], to: &[(i64, i64)]| -> (f64, f64) {
        let d: Vec<f64> = from
            .iter()
            .map(|&(y, x)| {
                let best = to.iter().map(|&(v, u)| (y - v).pow(2) + (x - u).pow(2)).min().unwrap();
                (best as f64).sqrt() * spacing
            })
            .collect();
        let max = d.iter().copied().fold(0.0, f64::max);
        ((d.iter().sum::<f64>() / d.len() as f64).min(max), max)
    };
    let (ma, xa) = directed(&ba, &bm);
    let (mm, xm) = directed(&bm, &ba);
    (0.5 * (ma + mm), xa.max(xm))
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let density = rng.random_range(0.05..0.9);
    loop {
        let m = Mask::new(h, w, (0..h * w).map(|_| rng.random_bool(density) as u8).collect()).unwrap();
        if !m.is_empty() {
            return m;
        }
    }
}
