//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        acc += d * d;
    }
    acc
}

/// Index of the nearest centroid by squared L2 distance; ties go to the
/// lower index.
pub fn nearest_centroid(point: &[f32], centroids: &[Vec<f32>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f32>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// Clusters `points` into at most `k` groups. `k` is clamped to the number of
/// points. Empty clusters are re-seeded from the member of the largest
/// cluster farthest from its centroid.
pub fn kmeans<R: Rng + ?Sized>(points: &[&[f32]], k: usize, max_iters: usize, rng: &mut R) -> KMeansResult {
    let n = points.len();
    let k = k.min(n).max(1);
    if n == 0 {
        return KMeansResult {
            centroids: Vec::new(),
            assignment: Vec::new(),
            iterations: 0,
        };
    }
    let dim = points[0].len();
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let c = nearest_centroid(p, &centroids);
            if c != assignment[i] {
                assignment[i] = c;
                changed = true;
            }
        }
        repair_empty(points, &mut centroids, &mut assignment);

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += *v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| (s * inv) as f32).collect();
            }
        }
        if !changed {
            break;
        }
    }
    // final assignment against the returned centroids
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest_centroid(p, &centroids);
    }
    KMeansResult {
        centroids,
        assignment,
        iterations,
    }
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[&[f32]], k: usize, rng: &mut R) -> Vec<Vec<f32>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            rng.random_range(0..n)
        };
        let c = points[next].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn repair_empty(points: &[&[f32]], centroids: &mut [Vec<f32>], assignment: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        if counts[largest] < 2 {
            return;
        }
        let far = (0..points.len())
            .filter(|&i| assignment[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(points[a], &centroids[largest])
                    .total_cmp(&sq_dist(points[b], &centroids[largest]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        if sq_dist(points[far], &centroids[largest]) == 0.0 {
            // the largest cluster is a single repeated point; nothing to split
            return;
        }
        centroids[empty] = points[far].to_vec();
        assignment[far] = empty;
    }
}
