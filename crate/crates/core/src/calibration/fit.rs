//! Polynomial least squares via Householder QR on a scaled Vandermonde matrix.

/// Coefficients `c[0] + c[1]·x + … ` minimising the squared residual, or
/// `None` when fewer than `degree + 1` distinct abscissae are present.
pub(crate) fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Option<Vec<f64>> {
    let cols = degree + 1;
    let m = xs.len();
    if m != ys.len() || m < cols || distinct(xs) < cols {
        return None;
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let scale = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);

    // Column-major design matrix in t = (x - center) / scale.
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|k| xs.iter().map(|&x| ((x - center) / scale).powi(k as i32)).collect())
        .collect();
    let mut b = ys.to_vec();

    for k in 0..cols {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(k) {
                reflect(&v, vnorm2, &mut col[k..]);
            }
            reflect(&v, vnorm2, &mut b[k..]);
        }
    }

    let r_max = (0..cols).map(|k| a[k][k].abs()).fold(0.0, f64::max);
    if (0..cols).any(|k| a[k][k].abs() <= r_max * 1e-13) {
        return None;
    }

    let mut g = vec![0.0; cols];
    for i in (0..cols).rev() {
        let tail: f64 = (i + 1..cols).map(|j| a[j][i] * g[j]).sum();
        g[i] = (b[i] - tail) / a[i][i];
    }
    Some(descale(&g, center, scale))
}

fn reflect(v: &[f64], vnorm2: f64, x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vnorm2;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= f * vi;
    }
}

fn distinct(xs: &[f64]) -> usize {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s.len()
}

/// Expand `Σ g_k ((x - c)/s)^k` into monomial coefficients in `x`.
fn descale(g: &[f64], center: f64, scale: f64) -> Vec<f64> {
    let n = g.len();
    let mut out = vec![0.0; n];
    for (k, &gk) in g.iter().enumerate() {
        let lead = gk / scale.powi(k as i32);
        for j in 0..=k {
            out[j] += lead * binomial(k, j) * (-center).powi((k - j) as i32);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
