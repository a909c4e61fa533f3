//! Reference implementations written as plain scalar loops over `f64`.
//!
//! Nothing here depends on the crates under test. Test suites compare the
//! production code paths against these.

/// Forward pass of a ReLU network. `weights[l][p][j]` maps input `p` to
/// output `j` of layer `l`; the last layer is linear.
pub fn mlp_forward(weights: &[Vec<Vec<f64>>], biases: &[Vec<f64>], input: &[f64]) -> Vec<f64> {
    let mut a = input.to_vec();
    for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
        let mut z = b.clone();
        for (p, row) in w.iter().enumerate() {
            for (j, wpj) in row.iter().enumerate() {
                z[j] += a[p] * wpj;
            }
        }
        if l + 1 < weights.len() {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        a = z;
    }
    a
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Five-point stencil
/// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`; truncation error is
/// `O(h^4)`, so a larger `h` keeps rounding noise down.
pub fn five_point_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let mut at = |offset: f64| {
                probe[i] = x[i] + offset;
                f(&probe)
            };
            let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            probe[i] = x[i];
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-8)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        uv += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    uv / (uu.sqrt() * vv.sqrt())
}

/// `mean_i -log( exp(s_ii / t) / sum_k exp(s_kk / t) )` with
/// `s_kk = cos(a_k, b_k)`.
pub fn paper_loss(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let n = a.len();
    let mut denom = 0.0;
    for k in 0..n {
        denom += (cosine(&a[k], &b[k]) / tau).exp();
    }
    let mut total = 0.0;
    for i in 0..n {
        let num = (cosine(&a[i], &b[i]) / tau).exp();
        total += -(num / denom).ln();
    }
    total / n as f64
}

/// NT-Xent over the 2N views `a_0..a_{N-1}, b_0..b_{N-1}`: each view is an
/// anchor whose positive is its counterpart and whose negatives are the
/// remaining 2N - 2 views.
pub fn ntxent_loss(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let n = a.len();
    let views: Vec<&Vec<f64>> = a.iter().chain(b.iter()).collect();
    let mut total = 0.0;
    for p in 0..2 * n {
        let q = if p < n { p + n } else { p - n };
        let mut denom = 0.0;
        for r in 0..2 * n {
            if r != p {
                denom += (cosine(views[p], views[r]) / tau).exp();
            }
        }
        let num = (cosine(views[p], views[q]) / tau).exp();
        total += -(num / denom).ln();
    }
    total / (2 * n) as f64
}

/// Mean and standard deviation (divisor = number of terms) of the cosine
/// similarities of each query row to the reference rows, skipping `j == i`
/// when `exclude_self`.
pub fn similarity_stats(query: &[Vec<f64>], reference: &[Vec<f64>], exclude_self: bool) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (i, q) in query.iter().enumerate() {
        let mut sims = Vec::new();
        for (j, r) in reference.iter().enumerate() {
            if exclude_self && i == j {
                continue;
            }
            sims.push(cosine(q, r));
        }
        let m = sims.len() as f64;
        let mean = sims.iter().sum::<f64>() / m;
        let mut var = 0.0;
        for s in &sims {
            var += (s - mean) * (s - mean);
        }
        out.push((mean, (var / m).sqrt()));
    }
    out
}

pub fn nearest_centroid_distance(centroids: &[Vec<f64>], points: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for p in points {
        let mut best = f64::INFINITY;
        for c in centroids {
            let mut d2 = 0.0;
            for j in 0..p.len() {
                d2 += (p[j] - c[j]) * (p[j] - c[j]);
            }
            if d2.sqrt() < best {
                best = d2.sqrt();
            }
        }
        out.push(best);
    }
    out
}

pub fn row_mse(x: &[Vec<f64>], reconstruction: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..x.len() {
        let mut s = 0.0;
        for j in 0..x[i].len() {
            s += (x[i][j] - reconstruction[i][j]).powi(2);
        }
        out.push(s / x[i].len() as f64);
    }
    out
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if labels[i] != 1 {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Trapezoidal area under a polyline of `(x, y)` points.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        area += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let same = vec![vec![1.0, 1.0]; 2];
        assert!((paper_loss(&same, &same, 0.5) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(auc_pairwise(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(auc_pairwise(&[0.5, 0.5], &[1, 0]), 0.5);
        assert_eq!(nearest_centroid_distance(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]]), vec![5.0]);
        let d = central_difference(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((d[0] - 6.0).abs() < 1e-8);
        let d = five_point_difference(|x| x[0].powi(5), &[1.5], 1e-3);
        assert!((d[0] - 5.0 * 1.5f64.powi(4)).abs() < 1e-9);
    }
}
