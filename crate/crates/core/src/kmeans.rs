//! Seeded Lloyd's k-means with k-means++ seeding.

use rand::Rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = None;
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 {
                    chosen = Some(i);
                    if target < *d {
                        break;
                    }
                    target -= d;
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            // fewer distinct points than k; caller guarantees this does not happen
            rng.gen_range(0..points.len())
        };
        centers.push(points[pick].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Returns a cluster index per point; every cluster in `0..k` is non-empty
/// provided the points contain at least `k` distinct vectors.
pub fn cluster(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut impl Rng) -> Vec<usize> {
    let dim = points[0].len();
    let mut centers = plus_plus_init(points, k, rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
    fill_empty(points, &centers, &mut assign, k);
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut next: Vec<usize> = points.iter().map(|p| nearest(&centers, p).0).collect();
        fill_empty(points, &centers, &mut next, k);
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Moves the point farthest from its own center into each empty cluster,
/// never emptying a donor cluster.
fn fill_empty(points: &[Vec<f64>], centers: &[Vec<f64>], assign: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in assign.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|c| *c == 0) else {
            return;
        };
        let mut donor = None;
        let mut best = -1.0;
        for (i, p) in points.iter().enumerate() {
            let c = assign[i];
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(p, &centers[c]);
            if d > best {
                best = d;
                donor = Some(i);
            }
        }
        match donor {
            Some(i) => assign[i] = empty,
            None => return,
        }
    }
}
