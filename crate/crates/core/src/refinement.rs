//! Clustering refinement of unknown-class embeddings: Student-t soft
//! assignment to centroids, a sharpened target distribution, and gradient
//! descent on KL(target ‖ assignment).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ndarray::ArrayView1<'_, f64>, centroids: ArrayView2<'_, f64>) -> (usize, f64) {
    centroids
        .rows()
        .into_iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(point, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Best of `restarts` k-means runs by inertia. Each run is k-means++ seeding
/// followed by Lloyd iterations (at most 100, or until no centroid moves by
/// more than 1e-6). Deterministic for a given seed.
pub fn kmeans_init(points: ArrayView2<'_, f64>, k: usize, seed: u64, restarts: usize) -> Result<Array2<f64>> {
    let m = points.nrows();
    if k == 0 {
        return Err(Error::InvalidConfig("number of clusters must be at least 1".into()));
    }
    if restarts == 0 {
        return Err(Error::InvalidConfig("k-means needs at least one restart".into()));
    }
    if m < k {
        return Err(Error::TooFewPoints { needed: k, got: m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Array2<f64>, f64)> = None;
    for _ in 0..restarts {
        let c = kmeans_once(points, k, &mut rng);
        let inertia: f64 = points.rows().into_iter().map(|p| nearest(p, c.view()).1).sum();
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((c, inertia));
        }
    }
    Ok(best.expect("at least one restart").0)
}

fn kmeans_once(points: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (m, d) = points.dim();
    let mut centroids = Array2::<f64>::zeros((k, d));
    centroids.row_mut(0).assign(&points.row(rng.random_range(0..m)));
    let mut dist: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &w) in dist.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on an already chosen point
            if dist[chosen] == 0.0 {
                chosen = dist.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, centroids.row(c)));
        }
    }

    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for p in points.rows() {
            let (j, _) = nearest(p, centroids.view());
            let mut row = sums.row_mut(j);
            row += &p;
            counts[j] += 1;
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue; // empty cluster keeps its centroid
            }
            let updated = sums.row(j).mapv(|v| v / counts[j] as f64);
            shift = shift.max(sq_dist(updated.view(), centroids.row(j)).sqrt());
            centroids.row_mut(j).assign(&updated);
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    centroids
}

fn student_t_kernel(e: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = (e.nrows(), centroids.nrows());
    Array2::from_shape_fn((n, k), |(i, j)| 1.0 / (1.0 + sq_dist(e.row(i), centroids.row(j))))
}

fn check_dims(e: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> Result<()> {
    if centroids.nrows() == 0 {
        return Err(Error::InvalidConfig("no centroids".into()));
    }
    if e.ncols() != centroids.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings have {} columns, centroids {}",
            e.ncols(),
            centroids.ncols()
        )));
    }
    Ok(())
}

/// Row-normalised Student-t kernel `(1 + |e_i - phi_j|²)^-1`.
pub fn soft_assignment(e: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_dims(e, centroids)?;
    let mut p = student_t_kernel(e, centroids);
    for mut row in p.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(p)
}

/// Soft cluster frequencies `F_j = Σ_i P_ij`.
pub fn cluster_frequencies(p: ArrayView2<'_, f64>) -> Array1<f64> {
    p.sum_axis(Axis(0))
}

/// Sharpened target `Q_ij ∝ P_ij² / F_j`, normalised per row.
pub fn target_distribution(p: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let freq = cluster_frequencies(p);
    if let Some((cluster, &frequency)) = freq.iter().enumerate().find(|(_, f)| !(**f > 0.0)) {
        return Err(Error::EmptyCluster { cluster, frequency });
    }
    let mut q = Array2::from_shape_fn(p.dim(), |(i, j)| p[[i, j]] * p[[i, j]] / freq[j]);
    for mut row in q.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(q)
}

fn check_distribution(m: ArrayView2<'_, f64>) -> Result<()> {
    match m.indexed_iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        Some(((row, col), &value)) => Err(Error::InvalidDistribution { row, col, value }),
        None => Ok(()),
    }
}

/// `Σ_ij Q_ij log(Q_ij / P_ij)` with both arguments floored at [`LOG_EPS`].
pub fn kl_divergence(q: ArrayView2<'_, f64>, p: ArrayView2<'_, f64>) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch(format!("Q is {:?}, P is {:?}", q.dim(), p.dim())));
    }
    check_distribution(q)?;
    check_distribution(p)?;
    Ok(q.iter()
        .zip(p.iter())
        .map(|(&qv, &pv)| qv * (qv.max(LOG_EPS).ln() - pv.max(LOG_EPS).ln()))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlGradient {
    pub value: f64,
    pub grad_centroids: Array2<f64>,
    pub grad_embeddings: Array2<f64>,
}

/// KL(Q ‖ P(E, Φ)) with Q held fixed, and its gradients w.r.t. the
/// centroids and the embeddings.
pub fn kl_loss(
    q: ArrayView2<'_, f64>,
    e: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
) -> Result<KlGradient> {
    check_dims(e, centroids)?;
    let kernel = student_t_kernel(e, centroids);
    let mut p = kernel.clone();
    for mut row in p.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let value = kl_divergence(q, p.view())?;
    // dL/dd_ij = k_ij (Q_ij - P_ij) where d_ij = |e_i - phi_j|²
    let w = &kernel * &(&q - &p);
    let (n, k) = w.dim();
    let mut grad_e = Array2::<f64>::zeros(e.dim());
    let mut grad_c = Array2::<f64>::zeros(centroids.dim());
    for i in 0..n {
        for j in 0..k {
            let coef = 2.0 * w[[i, j]];
            let diff = &e.row(i) - &centroids.row(j);
            grad_e.row_mut(i).scaled_add(coef, &diff);
            grad_c.row_mut(j).scaled_add(-coef, &diff);
        }
    }
    Ok(KlGradient {
        value,
        grad_centroids: grad_c,
        grad_embeddings: grad_e,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub steps: usize,
    pub lr: f64,
    /// Steps between recomputations of the target distribution.
    pub target_period: usize,
    /// Stop when fewer than this fraction of hard assignments change between
    /// target recomputations.
    pub tolerance: f64,
    /// Update the embeddings as well as the centroids.
    pub update_embeddings: bool,
    /// k-means runs used to pick the initial centroids.
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 0.1,
            target_period: 10,
            tolerance: 0.001,
            update_embeddings: true,
            kmeans_restarts: 10,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("refine lr {} must be > 0", self.lr)));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::InvalidConfig("kmeans_restarts must be at least 1".into()));
        }
        if self.target_period == 0 {
            return Err(Error::InvalidConfig("target_period must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub centroids: Array2<f64>,
    pub embeddings: Array2<f64>,
    /// Hard assignment `argmax_j P_ij` of every embedding.
    pub assignments: Vec<usize>,
    pub initial_loss: f64,
    /// KL divergence against the last target used.
    pub final_loss: f64,
    pub steps: usize,
}

fn hard_assignments(p: ArrayView2<'_, f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                .0
        })
        .collect()
}

/// k-means initialisation followed by [`refine_from`].
pub fn refine(embeddings: ArrayView2<'_, f64>, clusters: usize, cfg: &RefineConfig) -> Result<RefineOutput> {
    if embeddings.nrows() == 0 {
        return Err(Error::NoUnknownDetections);
    }
    let centroids = kmeans_init(embeddings, clusters, cfg.seed, cfg.kmeans_restarts)?;
    refine_from(embeddings, centroids, cfg)
}

/// Gradient refinement from given centroids. Within one target period the
/// step size is halved until the KL loss does not increase, so every accepted
/// step is a descent step for the current target.
pub fn refine_from(
    embeddings: ArrayView2<'_, f64>,
    centroids: Array2<f64>,
    cfg: &RefineConfig,
) -> Result<RefineOutput> {
    cfg.validate()?;
    if embeddings.nrows() == 0 {
        return Err(Error::NoUnknownDetections);
    }
    let mut e = embeddings.to_owned();
    let mut phi = centroids;
    let p = soft_assignment(e.view(), phi.view())?;
    let mut q = target_distribution(p.view())?;
    let initial_loss = kl_divergence(q.view(), p.view())?;
    let mut assignments = hard_assignments(p.view());
    let mut current = kl_loss(q.view(), e.view(), phi.view())?;
    let mut steps = 0;

    while steps < cfg.steps {
        if steps > 0 && steps % cfg.target_period == 0 {
            let p = soft_assignment(e.view(), phi.view())?;
            let fresh = hard_assignments(p.view());
            let changed = fresh.iter().zip(&assignments).filter(|(a, b)| a != b).count();
            assignments = fresh;
            if (changed as f64) < cfg.tolerance * e.nrows() as f64 {
                break;
            }
            q = target_distribution(p.view())?;
            current = kl_loss(q.view(), e.view(), phi.view())?;
        }
        let mut lr = cfg.lr;
        let mut accepted = false;
        for _ in 0..30 {
            let phi_next = &phi - &(lr * &current.grad_centroids);
            let e_next = if cfg.update_embeddings {
                &e - &(lr * &current.grad_embeddings)
            } else {
                e.clone()
            };
            let next = kl_loss(q.view(), e_next.view(), phi_next.view())?;
            if next.value <= current.value {
                phi = phi_next;
                e = e_next;
                current = next;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        steps += 1;
        if !accepted {
            break;
        }
    }
    let p = soft_assignment(e.view(), phi.view())?;
    Ok(RefineOutput {
        assignments: hard_assignments(p.view()),
        final_loss: kl_divergence(q.view(), p.view())?,
        centroids: phi,
        embeddings: e,
        initial_loss,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn kmeans_on_exactly_k_points() {
        let pts = array![[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0]];
        let c = kmeans_init(pts.view(), 3, 7, 1).unwrap();
        let mut rows: Vec<Vec<f64>> = c.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(rows, vec![vec![-3.0, 2.0], vec![0.0, 0.0], vec![5.0, 1.0]]);
    }

    #[test]
    fn kmeans_duplicates_and_errors() {
        let pts = Array2::from_elem((6, 3), 1.5);
        assert_eq!(kmeans_init(pts.view(), 1, 0, 1).unwrap(), Array2::from_elem((1, 3), 1.5));
        assert_eq!(
            kmeans_init(pts.view(), 7, 0, 1),
            Err(Error::TooFewPoints { needed: 7, got: 6 })
        );
        assert!(kmeans_init(pts.view(), 0, 0, 1).is_err());
    }

    #[test]
    fn kmeans_recovers_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma = 0.2;
        let noise = Normal::new(0.0, sigma).unwrap();
        let means = [[0.0, 0.0], [4.0, 3.0]];
        let per = 100;
        let pts = Array2::from_shape_fn((2 * per, 2), |(i, c)| means[i / per][c] + noise.sample(&mut rng));
        let c = kmeans_init(pts.view(), 2, 3, 1).unwrap();
        let tol = 3.0 * sigma / (per as f64).sqrt();
        for m in means {
            let (_, d2) = nearest(ndarray::aview1(&m), c.view());
            assert!(d2.sqrt() < tol * 2f64.sqrt(), "centroid off by {}", d2.sqrt());
        }
        assert_eq!(kmeans_init(pts.view(), 2, 3, 1).unwrap(), c);
    }

    #[test]
    fn soft_assignment_examples() {
        let e = array![[0.0, 0.0], [1.0, 1.0]];
        let p = soft_assignment(e.view(), array![[3.0, 3.0]].view()).unwrap();
        assert_eq!(p, array![[1.0], [1.0]]);
        let p = soft_assignment(array![[0.0, 0.0]].view(), array![[1.0, 0.0], [-1.0, 0.0]].view()).unwrap();
        assert_eq!(p, array![[0.5, 0.5]]);
        let p = soft_assignment(array![[0.0, 0.0]].view(), array![[0.0, 0.0], [1.0, 0.0]].view()).unwrap();
        assert!((p[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);
        assert!(soft_assignment(e.view(), array![[1.0, 2.0, 3.0]].view()).is_err());
    }

    #[test]
    fn target_distribution_examples() {
        let q = target_distribution(array![[0.5, 0.5], [0.5, 0.5]].view()).unwrap();
        assert_eq!(q, array![[0.5, 0.5], [0.5, 0.5]]);
        let q = target_distribution(array![[2.0 / 3.0, 1.0 / 3.0]].view()).unwrap();
        assert!((q[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        let q = target_distribution(array![[0.9, 0.1], [0.5, 0.5]].view()).unwrap();
        let (a, b) = (0.81 / 1.4, 0.01 / 0.6);
        assert!((q[[0, 0]] - a / (a + b)).abs() < 1e-15);
        assert!((q[[0, 0]] - 0.972).abs() < 1e-3);
        assert!(matches!(
            target_distribution(array![[1.0, 0.0], [1.0, 0.0]].view()),
            Err(Error::EmptyCluster { cluster: 1, .. })
        ));
    }

    #[test]
    fn kl_examples() {
        let p = array![[0.3, 0.7], [0.6, 0.4]];
        assert_eq!(kl_divergence(p.view(), p.view()).unwrap(), 0.0);
        let v = kl_divergence(array![[1.0, 0.0]].view(), array![[0.5, 0.5]].view()).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert!(kl_divergence(array![[1.5, -0.5]].view(), p.slice(ndarray::s![0..1, ..])).is_err());
    }

    #[test]
    fn data_at_centroids() {
        // one cluster: P = Q = 1, a KL fixed point
        let e = array![[1.0, 2.0], [1.0, 2.0]];
        let phi = array![[1.0, 2.0]];
        let q = target_distribution(soft_assignment(e.view(), phi.view()).unwrap().view()).unwrap();
        let g = kl_loss(q.view(), e.view(), phi.view()).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.grad_embeddings.iter().chain(g.grad_centroids.iter()).all(|v| *v == 0.0));

        // separated points on their own centroids keep their assignment
        let e = array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let out = refine_from(e.view(), e.clone(), &RefineConfig::default()).unwrap();
        assert_eq!(out.assignments, vec![0, 1, 2]);
    }

    #[test]
    fn refine_is_deterministic_and_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let pts = Array2::from_shape_fn((60, 2), |(i, c)| (i % 3) as f64 * if c == 0 { 1.0 } else { 0.5 } + noise.sample(&mut rng));
        let cfg = RefineConfig { seed: 9, ..Default::default() };
        let a = refine(pts.view(), 3, &cfg).unwrap();
        let b = refine(pts.view(), 3, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.final_loss <= a.initial_loss);
        assert!(refine(Array2::<f64>::zeros((0, 2)).view(), 2, &cfg).is_err());
    }
}
