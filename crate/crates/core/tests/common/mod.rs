//! Reference implementations used as oracles by the integration tests and
//! the acceptance suite. Deliberately naive: brute force over permutations,
//! finite differences, and a from-scratch VOC-style evaluator.

#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ucowod::losses::{
    combined_label_matrix, self_label_matrix, self_sim_loss, sim_loss, similarity_backward, similarity_matrix,
    supervised_label_matrix, ucls_loss, AdaptiveThresholds, PairLabelMatrix,
};
use ucowod::refinement::{kl_divergence, kl_loss, soft_assignment, target_distribution};
use ucowod::{BBox, ClassLabel, Detection, GroundTruthObject, LabelSpace};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), or 0 when both vanish.
pub fn rel_err(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let diff = (&a - &b).mapv(|v| v * v).sum().sqrt();
    let scale = a.mapv(|v| v * v).sum().sqrt().max(b.mapv(|v| v * v).sum().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let plus = f(&probe);
        probe[idx] = orig - h;
        let minus = f(&probe);
        probe[idx] = orig;
        g[idx] = (plus - minus) / (2.0 * h);
    }
    g
}

const H: f64 = 1e-6;
const KL_H: f64 = 1e-4;

fn random_labels(rng: &mut ChaCha8Rng, n: usize, space: &LabelSpace, unknown_ids: u32) -> Vec<ClassLabel> {
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => ClassLabel::Known(rng.random_range(0..space.known)),
            1 => ClassLabel::Background,
            _ => ClassLabel::Unknown(space.known + rng.random_range(0..unknown_ids)),
        })
        .collect()
}

pub fn ucls_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let space = LabelSpace::new(r.random_range(1..4), r.random_range(1..4));
    let n = r.random_range(1..8);
    let logits = random_matrix(&mut r, n, space.logit_width(), -3.0, 3.0);
    let labels = random_labels(&mut r, n, &space, 1);
    let analytic = ucls_loss(logits.view(), &labels, &space).unwrap().grad;
    let numeric = numeric_grad(|x| ucls_loss(x.view(), &labels, &space).unwrap().value, &logits, H);
    rel_err(analytic.view(), numeric.view())
}

/// Positive embeddings keep every cosine inside the clamp range.
fn random_embeddings(r: &mut ChaCha8Rng) -> Array2<f64> {
    let n = r.random_range(2..8);
    let d = r.random_range(2..6);
    random_matrix(r, n, d, 0.05, 1.0)
}

/// Gradient of the supervised pair loss with respect to the embeddings.
pub fn sim_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let e = random_embeddings(&mut r);
    let space = LabelSpace::new(3, 2);
    let labels = random_labels(&mut r, e.nrows(), &space, 2);
    let mask = supervised_label_matrix(&labels);
    let loss = |x: &Array2<f64>| sim_loss(&mask, similarity_matrix(x.view()).unwrap().view()).unwrap();
    let s = similarity_matrix(e.view()).unwrap();
    let analytic = similarity_backward(e.view(), sim_loss(&mask, s.view()).unwrap().grad.view()).unwrap();
    let numeric = numeric_grad(|x| loss(x).value, &e, H);
    rel_err(analytic.view(), numeric.view())
}

/// Gradient of the self-supervised pair loss with respect to the embeddings;
/// pair labels are frozen at the base point.
pub fn self_sim_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let e = random_embeddings(&mut r);
    let space = LabelSpace::new(2, 3);
    let labels = random_labels(&mut r, e.nrows(), &space, 1);
    let th = AdaptiveThresholds::default();
    let lambda = r.random_range(0.0..0.4);
    let s = similarity_matrix(e.view()).unwrap();
    let m = self_label_matrix(s.view(), &labels, lambda, &th).unwrap();
    let mask: PairLabelMatrix = combined_label_matrix(m.view(), &labels).unwrap();
    let value = |x: &Array2<f64>| {
        self_sim_loss(&mask, similarity_matrix(x.view()).unwrap().view(), lambda, &th)
            .unwrap()
            .value
    };
    let grad_s = self_sim_loss(&mask, s.view(), lambda, &th).unwrap().grad;
    let analytic = similarity_backward(e.view(), grad_s.view()).unwrap();
    let numeric = numeric_grad(value, &e, H);
    rel_err(analytic.view(), numeric.view())
}

/// Relative errors of the KL gradient with respect to centroids and
/// embeddings, target held fixed. KL values can be tiny when P is close to
/// Q, so the probe step is larger than for the other losses.
pub fn kl_grad_errors(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let n = r.random_range(3..10);
    let k = r.random_range(2..4);
    let d = r.random_range(1..4);
    let e = random_matrix(&mut r, n, d, -2.0, 2.0);
    let phi = random_matrix(&mut r, k, d, -2.0, 2.0);
    let q = target_distribution(soft_assignment(e.view(), phi.view()).unwrap().view()).unwrap();
    let g = kl_loss(q.view(), e.view(), phi.view()).unwrap();
    let by_phi = numeric_grad(
        |c| kl_divergence(q.view(), soft_assignment(e.view(), c.view()).unwrap().view()).unwrap(),
        &phi,
        KL_H,
    );
    let by_e = numeric_grad(
        |x| kl_divergence(q.view(), soft_assignment(x.view(), phi.view()).unwrap().view()).unwrap(),
        &e,
        KL_H,
    );
    (
        rel_err(g.grad_centroids.view(), by_phi.view()),
        rel_err(g.grad_embeddings.view(), by_e.view()),
    )
}

/// Best total gain by enumerating every injective row → column map of the
/// zero-padded square matrix.
pub fn brute_force_max(gain: ArrayView2<'_, f64>) -> f64 {
    let (r, c) = gain.dim();
    let n = r.max(c);
    let at = |i: usize, j: usize| if i < r && j < c { gain[[i, j]] } else { 0.0 };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::NEG_INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = (0..n).map(|i| at(i, p[i])).sum();
        best = best.max(total);
    });
    if n == 0 {
        0.0
    } else {
        best
    }
}

pub fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Fraction of points whose cluster maps to their true class under the best
/// cluster → class bijection, found by enumeration.
pub fn best_permutation_accuracy(assigned: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let hits = assigned.iter().zip(truth).filter(|(a, t)| p[**a] == **t).count();
        best = best.max(hits);
    });
    best as f64 / assigned.len() as f64
}

/// Pascal-VOC style evaluation of one class: rank by score (stable), match
/// each detection to the highest-IoU unmatched box of its image, then take
/// the area under the monotone precision envelope.
pub fn voc_class(dets: &[Detection], gts: &[GroundTruthObject], label: ClassLabel, pred: ClassLabel, iou: f64) -> (f64, usize, usize) {
    let gts: Vec<&GroundTruthObject> = gts.iter().filter(|g| g.label == label).collect();
    let mut ds: Vec<&Detection> = dets.iter().filter(|d| d.label == pred).collect();
    ds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut used = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(ds.len());
    for d in &ds {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.image_id != d.image_id || used[g] {
                continue;
            }
            let o = gt.bbox.iou(&d.bbox);
            if o >= iou && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, _)) => {
                used[g] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    let npos = gts.len();
    if npos == 0 {
        return (0.0, 0, 0);
    }
    let mut mrec = vec![0.0];
    let mut mpre = vec![0.0];
    let mut ctp = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        ctp += t as usize;
        mrec.push(ctp as f64 / npos as f64);
        mpre.push(ctp as f64 / (i + 1) as f64);
    }
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..mrec.len() {
        if mrec[i] != mrec[i - 1] {
            ap += (mrec[i] - mrec[i - 1]) * mpre[i];
        }
    }
    (ap, ctp, npos)
}

/// Mean label-based AP and pooled recall over `classes`.
pub fn voc_map_recall(dets: &[Detection], gts: &[GroundTruthObject], classes: &[ClassLabel], iou: f64) -> (f64, f64) {
    let mut sum = 0.0;
    let (mut hit, mut total) = (0, 0);
    for &c in classes {
        let (ap, tp, npos) = voc_class(dets, gts, c, c, iou);
        sum += ap;
        hit += tp;
        total += npos;
    }
    let map = if classes.is_empty() { 0.0 } else { sum / classes.len() as f64 };
    let recall = if total == 0 { 0.0 } else { hit as f64 / total as f64 };
    (map, recall)
}

/// Random scenes with known and unknown objects laid out on a grid, and
/// detections that carry each object's true label: hits with jitter,
/// duplicates, misses and unmatched background boxes.
pub fn labeled_fixture(seed: u64, known: u32, unknown: u32) -> (Vec<GroundTruthObject>, Vec<Detection>) {
    let mut r = rng(seed);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for image in 0..r.random_range(2..6u64) {
        let n = r.random_range(2..8usize);
        for k in 0..n {
            let id = r.random_range(0..known + unknown);
            let label = if id < known { ClassLabel::Known(id) } else { ClassLabel::Unknown(id) };
            let bbox = BBox::new(20.0 * k as f64 + 10.0, 10.0, r.random_range(4.0..8.0), r.random_range(4.0..8.0)).unwrap();
            gts.push(GroundTruthObject::new(image, label, bbox).unwrap());
            let copies = r.random_range(0..3);
            for _ in 0..copies {
                let j = BBox::new(
                    bbox.cx() + r.random_range(-1.5..1.5),
                    bbox.cy() + r.random_range(-1.5..1.5),
                    bbox.w(),
                    bbox.h(),
                )
                .unwrap();
                dets.push(Detection::new(image, label, j, r.random_range(0.0..1.0)).unwrap());
            }
        }
        for _ in 0..r.random_range(0..3) {
            let id = r.random_range(0..known + unknown);
            let label = if id < known { ClassLabel::Known(id) } else { ClassLabel::Unknown(id) };
            let bbox = BBox::new(r.random_range(0.0..200.0), 40.0, 5.0, 5.0).unwrap();
            dets.push(Detection::new(image, label, bbox, r.random_range(0.0..1.0)).unwrap());
        }
    }
    (gts, dets)
}

/// Three Gaussian blobs at pairwise distance `separation`.
pub fn blobs(seed: u64, per_blob: usize, sigma: f64, separation: f64) -> (Array2<f64>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let s = separation / std::f64::consts::SQRT_2;
    let centers = [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]];
    let n = 3 * per_blob;
    let truth: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let pts = Array2::from_shape_fn((n, 3), |(i, c)| centers[i % 3][c]);
    let pts = pts.mapv(|v| v + noise.sample(&mut r));
    (pts, truth)
}
