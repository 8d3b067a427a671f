//! k-means with k-means++ seeding, used to initialize emission means.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

pub const DEFAULT_MAX_ITERS: usize = 100;

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.outer_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng + ?Sized>(data: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    centroids.row_mut(0).assign(&data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = data.outer_iter().map(|x| sq_dist(x, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, x) in data.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, centroids.row(c)));
        }
    }
    centroids
}

/// Clusters the rows of `data` into `k` groups and returns the `k × D`
/// centroids. Clusters that empty out keep their previous centroid.
pub fn kmeans<R: Rng + ?Sized>(data: ArrayView2<f64>, k: usize, max_iters: usize, rng: &mut R) -> Array2<f64> {
    assert!(k >= 1 && data.nrows() >= 1, "kmeans needs k >= 1 and data");
    let mut centroids = seed_plus_plus(data, k, rng);
    let mut assign = vec![usize::MAX; data.nrows()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, x) in data.outer_iter().enumerate() {
            let (c, _) = nearest(x, &centroids);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, x) in data.outer_iter().enumerate() {
            let mut row = sums.row_mut(assign[i]);
            row += &x;
            counts[assign[i]] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let n = count as f64;
                centroids.row_mut(c).assign(&sums.row(c).mapv(|v| v / n));
            }
        }
    }
    centroids
}
