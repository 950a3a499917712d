//! Clustering agreement and embedding diagnostics.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

fn choose2(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same samples.
/// Returns 1 when both labelings are a single cluster (or identical
/// trivial partitions).
pub fn adjusted_rand_index<A: Ord + Clone, B: Ord + Clone>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: BTreeMap<(A, B), usize> = BTreeMap::new();
    let mut rows: BTreeMap<A, usize> = BTreeMap::new();
    let mut cols: BTreeMap<B, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x.clone(), y.clone())).or_default() += 1;
        *rows.entry(x.clone()).or_default() += 1;
        *cols.entry(y.clone()).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Mean silhouette coefficient (Euclidean). Samples in singleton clusters
/// score 0; fewer than two clusters gives 0.
pub fn silhouette<L: Ord + Clone>(points: &[Vec<f64>], labels: &[L]) -> f64 {
    assert_eq!(points.len(), labels.len());
    let ids: BTreeMap<L, usize> = labels
        .iter()
        .cloned()
        .collect::<alloc::collections::BTreeSet<L>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let k = ids.len();
    if k < 2 {
        return 0.0;
    }
    let lab: Vec<usize> = labels.iter().map(|l| ids[l]).collect();
    let mut sizes = vec![0usize; k];
    for &l in &lab {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..points.len() {
        let mut sums = vec![0.0; k];
        for j in 0..points.len() {
            if i != j {
                sums[lab[j]] += dist(&points[i], &points[j]);
            }
        }
        let own = lab[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
        total += s;
    }
    total / points.len() as f64
}

/// Projection of the centered points onto their top two principal
/// components (power iteration with deflation on the covariance).
pub fn pca_2d(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for p in &centered {
        for i in 0..d {
            if p[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += p[i] * p[j];
            }
        }
    }
    let mut comps: Vec<Vec<f64>> = Vec::new();
    for c in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i * 7 + c * 3) % 5) as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; d];
            for i in 0..d {
                w[i] = (0..d).map(|j| cov[i * d + j] * v[j]).sum();
            }
            for u in &comps {
                let dot: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
                for (wi, ui) in w.iter_mut().zip(u) {
                    *wi -= dot * ui;
                }
            }
            let norm = libm::sqrt(w.iter().map(|x| x * x).sum());
            if norm < 1e-300 {
                v = vec![0.0; d];
                lambda = 0.0;
                break;
            }
            let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            if libm::fabs(norm - lambda) <= 1e-12 * norm && delta < 1e-12 {
                break;
            }
            lambda = norm;
        }
        // sign convention: largest-magnitude coordinate positive
        if let Some(&m) = v.iter().max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap()) {
            if m < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let _ = lambda;
        comps.push(v);
    }
    centered
        .iter()
        .map(|p| {
            let a: f64 = p.iter().zip(&comps[0]).map(|(x, y)| x * y).sum();
            let b: f64 = p.iter().zip(&comps[1]).map(|(x, y)| x * y).sum();
            [a, b]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_identical_and_permuted() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [5, 5, 3, 3, 9, 9];
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_known_value() {
        // truth {L,N,B,J} x 50 vs clusters {L1,L2,N,BJ}; hand-computed 0.6253
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for k in 0..4 {
            for i in 0..50 {
                truth.push(k);
                pred.push(match k {
                    0 => i % 2,
                    1 => 2,
                    _ => 3,
                });
            }
        }
        let ari = adjusted_rand_index(&truth, &pred);
        let expected = (4275.0 - 4900.0 * 6775.0 / 19900.0) / (0.5 * (4900.0 + 6775.0) - 4900.0 * 6775.0 / 19900.0);
        assert!((ari - expected).abs() < 1e-12);
    }

    #[test]
    fn silhouette_separated_vs_mixed() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![if i < 5 { 0.0 } else { 10.0 } + i as f64 * 0.01]).collect();
        let good: Vec<usize> = (0..10).map(|i| i / 5).collect();
        let bad: Vec<usize> = (0..10).map(|i| i % 2).collect();
        assert!(silhouette(&pts, &good) > 0.9);
        assert!(silhouette(&pts, &bad) < 0.1);
    }

    #[test]
    fn pca_rank_one() {
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let proj = pca_2d(&pts);
        for p in &proj {
            assert!(p[1].abs() < 1e-9);
        }
        let spread = proj.iter().map(|p| p[0]).fold(f64::MIN, f64::max) - proj.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
        assert!((spread - 11.0 * 6f64.sqrt()).abs() < 1e-9);
    }
}
