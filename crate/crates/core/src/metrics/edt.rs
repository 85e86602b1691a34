//! Exact squared Euclidean distance transform (lower envelope of
//! parabolas, one pass per axis).

const INF: f64 = f64::INFINITY;

/// 1-D transform of `f` into `d`: `d[p] = min_q f[q] + (p − q)²`.
fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // first finite sample anchors the envelope
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        d.fill(INF);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = -INF;
    z[1] = INF;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // the new parabola dominates everywhere
                v[0] = q;
                z[0] = -INF;
                z[1] = INF;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = INF;
            break;
        }
    }
    k = 0;
    for (p, out) in d.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let dq = p as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// Squared distance in pixels from every cell of an `h×w` grid to the
/// nearest `true` cell of `sites`; infinite when there are none.
pub(crate) fn squared_distance_map(sites: &[bool], h: usize, w: usize) -> Vec<f64> {
    debug_assert_eq!(sites.len(), h * w);
    let m = h.max(w);
    let mut f = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut v = vec![0usize; m];
    let mut z = vec![0.0; m + 1];
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { INF }).collect();
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        transform_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        transform_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}
