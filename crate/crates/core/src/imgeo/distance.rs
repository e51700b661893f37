use super::Mask;
use crate::error::{Error, Result};

/// Exact Euclidean distance from every pixel to the nearest `true` pixel.
///
/// Two separable passes of the lower-envelope-of-parabolas algorithm on
/// squared distances; all intermediate values are exact integers, so the
/// result equals a brute-force minimum bit for bit.
pub fn distance_transform(boundary: &Mask) -> Result<Vec<f64>> {
    if boundary.is_empty() {
        return Err(Error::InvalidAnnotation(
            "distance transform of an empty boundary".into(),
        ));
    }
    let (h, w) = (boundary.height(), boundary.width());
    let inf = ((h + w) * (h + w)) as f64 * 4.0;
    let mut sq: Vec<f64> = boundary
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { inf })
        .collect();

    let mut f = vec![0.0; h.max(w)];
    let mut d = vec![0.0; h.max(w)];
    let mut v = vec![0usize; h.max(w)];
    let mut z = vec![0.0; h.max(w) + 1];

    for col in 0..w {
        for row in 0..h {
            f[row] = sq[row * w + col];
        }
        envelope(&f[..h], &mut d[..h], &mut v, &mut z);
        for row in 0..h {
            sq[row * w + col] = d[row];
        }
    }
    for row in 0..h {
        f[..w].copy_from_slice(&sq[row * w..(row + 1) * w]);
        envelope(&f[..w], &mut d[..w], &mut v, &mut z);
        sq[row * w..(row + 1) * w].copy_from_slice(&d[..w]);
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// 1-d squared distance transform of sampled function `f`.
fn envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let diff = q as f64 - v[k] as f64;
        *dq = diff * diff + f[v[k]];
    }
}
