//! Lloyd's k-means with k-means++ seeding and single-point transfer refinement.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CodecError;
use crate::tensor::{sq_dist, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `K x d`.
    pub centroids: Matrix,
    /// Cluster of each input row.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub sse: f64,
    /// SSE after the seeding assignment and after every Lloyd iteration.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    /// Fewer distinct points than clusters; some centroids are duplicates.
    pub degenerate: bool,
}

/// Index of the nearest row of `centroids`; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    (0..points.rows())
        .map(|i| nearest(points.row(i), centroids))
        .unzip()
}

/// Index drawn with probability proportional to `weights`; uniform when all are zero.
fn sample_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && acc > target {
            return i;
        }
    }
    // Rounding can leave `target` just past the final sum.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("positive weight")
}

fn plus_plus_seed(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let pick = sample_weighted(&d2, rng);
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn count_distinct(points: &Matrix, limit: usize) -> usize {
    let mut distinct: Vec<usize> = Vec::new();
    for i in 0..points.rows() {
        if !distinct.iter().any(|&j| points.row(j) == points.row(i)) {
            distinct.push(i);
            if distinct.len() >= limit {
                break;
            }
        }
    }
    distinct.len()
}

/// Cluster means under `assignments`; empty clusters keep their `previous` centroid.
fn means(points: &Matrix, k: usize, assignments: &[usize], previous: &Matrix) -> Matrix {
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(previous.row(c));
        } else {
            let n = counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|s| *s /= n);
        }
    }
    sums
}

/// One sweep of single-point transfers (Hartigan): moves a point whenever that strictly lowers
/// the partition SSE, updating the two affected means. Returns whether anything moved.
fn transfer_pass(points: &Matrix, k: usize, assignments: &mut [usize]) -> bool {
    let d = points.cols();
    let mut counts = vec![0usize; k];
    let mut sums = Matrix::zeros(k, d);
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    let mean = |sums: &Matrix, counts: &[usize], c: usize| -> Vec<f64> {
        sums.row(c).iter().map(|s| s / counts[c] as f64).collect()
    };
    let mut moved = false;
    for i in 0..points.rows() {
        let a = assignments[i];
        if counts[a] <= 1 {
            continue;
        }
        let x = points.row(i);
        let na = counts[a] as f64;
        let removal = na / (na - 1.0) * sq_dist(x, &mean(&sums, &counts, a));
        let mut best: Option<(usize, f64)> = None;
        for b in (0..k).filter(|&b| b != a) {
            let added = if counts[b] == 0 {
                0.0
            } else {
                let nb = counts[b] as f64;
                nb / (nb + 1.0) * sq_dist(x, &mean(&sums, &counts, b))
            };
            if best.is_none_or(|(_, c)| added < c) {
                best = Some((b, added));
            }
        }
        let Some((b, added)) = best else { continue };
        // Relative margin keeps rounding noise from cycling a point back and forth.
        if added < removal - 1e-12 * removal.max(1e-300) {
            counts[a] -= 1;
            counts[b] += 1;
            for j in 0..d {
                sums.row_mut(a)[j] -= x[j];
                sums.row_mut(b)[j] += x[j];
            }
            assignments[i] = b;
            moved = true;
        }
    }
    moved
}

/// Runs k-means++ seeding followed by Lloyd iterations until assignments stop changing or
/// `max_iters` updates have run. A converged partition is then refined by single-point
/// transfers, with Lloyd resuming after any move. Empty clusters are moved onto the points
/// farthest from their current centroids.
pub fn kmeans(
    points: &Matrix,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeansResult, CodecError> {
    let n = points.rows();
    if n == 0 {
        return Err(CodecError::EmptyInput);
    }
    if k == 0 {
        return Err(CodecError::ZeroClusters);
    }
    let degenerate = count_distinct(points, k) < k;
    if degenerate {
        warn!("k-means: fewer than {k} distinct points among {n}; centroids will repeat");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(points, k, &mut rng);
    let (mut assignments, mut dists) = assign(points, &centroids);
    let mut sse_history = vec![dists.iter().sum::<f64>()];
    let d = points.cols();
    let mut iterations = 0;

    loop {
        if iterations >= max_iters {
            break;
        }
        iterations += 1;
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / inv;
                }
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        let mut reseeded = false;
        if !empty.is_empty() {
            let mut far: Vec<(usize, f64)> = (0..n)
                .map(|i| (i, sq_dist(points.row(i), centroids.row(assignments[i]))))
                .collect();
            far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (c, &(i, dist)) in empty.iter().zip(&far) {
                if dist > 0.0 {
                    centroids.row_mut(*c).copy_from_slice(points.row(i));
                    reseeded = true;
                }
            }
        }
        let (next, next_d) = assign(points, &centroids);
        let stable = next == assignments && !reseeded;
        assignments = next;
        dists = next_d;
        sse_history.push(dists.iter().sum());
        if stable {
            // Lloyd has converged; continue only if a single-point transfer still helps.
            if !transfer_pass(points, k, &mut assignments) {
                break;
            }
            centroids = means(points, k, &assignments, &centroids);
            let (next, next_d) = assign(points, &centroids);
            assignments = next;
            dists = next_d;
            sse_history.push(dists.iter().sum());
        }
    }

    Ok(KMeansResult {
        centroids,
        assignments,
        sse: dists.iter().sum(),
        sse_history,
        iterations,
        degenerate,
    })
}

/// Best of `restarts` seeded runs by final SSE; the earliest run wins ties.
pub fn kmeans_restarts(
    points: &Matrix,
    k: usize,
    max_iters: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansResult, CodecError> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans(
            points,
            k,
            max_iters,
            seed.wrapping_add(r as u64 * 0x9E37_79B9),
        )?;
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimum SSE over every labelling of the points into `k` groups.
    fn brute_force_sse(points: &Matrix, k: usize) -> f64 {
        let n = points.rows();
        let d = points.cols();
        let mut labels = vec![0usize; n];
        let mut best = f64::INFINITY;
        loop {
            let mut sse = 0.0;
            for c in 0..k {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = vec![0.0; d];
                for &i in &members {
                    for (m, v) in mean.iter_mut().zip(points.row(i)) {
                        *m += v / members.len() as f64;
                    }
                }
                sse += members
                    .iter()
                    .map(|&i| sq_dist(points.row(i), &mean))
                    .sum::<f64>();
            }
            best = best.min(sse);
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                labels[pos] += 1;
                if labels[pos] < k {
                    break;
                }
                labels[pos] = 0;
                pos += 1;
            }
        }
    }

    fn square() -> Matrix {
        Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ])
    }

    #[test]
    fn transfer_escapes_a_lloyd_fixed_point() {
        // {0, 2} | {3.2} is Lloyd-stable but moving 2 across lowers SSE from 2 to 0.72.
        let points = Matrix::from_vec(3, 1, vec![0.0, 2.0, 3.2]);
        let mut labels = vec![0, 0, 1];
        assert!(transfer_pass(&points, 2, &mut labels));
        assert_eq!(labels, [0, 1, 1]);
        assert!(!transfer_pass(&points, 2, &mut labels));
    }

    #[test]
    fn two_pairs() {
        let pts = square();
        assert!((brute_force_sse(&pts, 2) - 1.0).abs() < 1e-12);
        let r = kmeans(&pts, 2, 100, 7).unwrap();
        assert!((r.sse - 1.0).abs() < 1e-12);
        let mut cents: Vec<Vec<f64>> = (0..2).map(|c| r.centroids.row(c).to_vec()).collect();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cents, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
    }

    #[test]
    fn k_equals_n_has_zero_sse() {
        let r = kmeans(&square(), 4, 100, 1).unwrap();
        assert_eq!(r.sse, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let r = kmeans(&square(), 1, 100, 3).unwrap();
        assert_eq!(r.centroids.row(0), &[5.0, 0.5]);
    }

    #[test]
    fn identical_points_are_degenerate_not_fatal() {
        let pts = Matrix::from_rows(&vec![vec![1.0, 2.0]; 5]);
        let r = kmeans(&pts, 3, 10, 0).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.sse, 0.0);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(
            kmeans(&Matrix::zeros(0, 2), 2, 10, 0),
            Err(CodecError::EmptyInput)
        ));
        assert!(matches!(
            kmeans(&square(), 0, 10, 0),
            Err(CodecError::ZeroClusters)
        ));
    }

    #[test]
    fn more_clusters_than_points() {
        let r = kmeans(&square(), 6, 50, 5).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.sse, 0.0);
    }
}
