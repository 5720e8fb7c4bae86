//! Seeded k-means with k-means++ initialization.

use rand::Rng;

use crate::seed;

pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn plus_plus_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

/// Lloyd iterations from a k-means++ start. `k` is capped at the number of
/// points; an empty cluster keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> KMeans {
    assert!(!points.is_empty() && k > 0, "kmeans needs points and k >= 1");
    let k = k.min(points.len());
    let dim = points[0].len();
    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    KMeans {
        centroids,
        assignments,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut rng = seed::rng(1);
        let mut pts = Vec::new();
        for center in [[0.0, 0.0], [10.0, 10.0], [-10.0, 10.0]] {
            for _ in 0..30 {
                pts.push(vec![
                    center[0] + rng.gen_range(-1.0..1.0),
                    center[1] + rng.gen_range(-1.0..1.0),
                ]);
            }
        }
        pts
    }

    #[test]
    fn recovers_separated_blobs() {
        let pts = blobs();
        let km = kmeans(&pts, 3, DEFAULT_MAX_ITER, 5);
        for b in 0..3 {
            let first = km.assignments[b * 30];
            assert!(km.assignments[b * 30..(b + 1) * 30].iter().all(|&a| a == first));
        }
        let mut labels = km.assignments.clone();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 3);
    }

    #[test]
    fn seeded_runs_agree() {
        let pts = blobs();
        assert_eq!(kmeans(&pts, 4, 300, 9), kmeans(&pts, 4, 300, 9));
    }

    #[test]
    fn k_capped_and_duplicates_handled() {
        let pts = vec![vec![1.0, 1.0]; 3];
        let km = kmeans(&pts, 5, 300, 0);
        assert_eq!(km.centroids.len(), 3);
        assert!(km.assignments.iter().all(|&a| a < 3));
    }
}
