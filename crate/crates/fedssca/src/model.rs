//! Three-layer swish/softmax classifier.
//!
//! The network maps `K` features through a `J`-cell swish hidden layer to an
//! `L`-class softmax output. Besides the forward pass and cross-entropy cost,
//! this module computes the per-batch statistics (`b_bar`, `c_bar`, `a_bar`)
//! that clients upload each round: the exact gradient sums of the batch cost
//! with respect to both weight matrices, and the batch cross-entropy sum.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Input features per sample.
    pub k: usize,
    /// Hidden cells.
    pub j: usize,
    /// Output classes.
    pub l: usize,
}

impl Dims {
    pub fn new(k: usize, j: usize, l: usize) -> Self {
        Self { k, j, l }
    }

    /// Total parameter count `d = J*K + L*J`.
    pub fn d(&self) -> usize {
        self.j * self.k + self.l * self.j
    }
}

/// Weight tensors of the classifier: `w1` is J×K, `w2` is L×J.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            w1: Array2::zeros((dims.j, dims.k)),
            w2: Array2::zeros((dims.l, dims.j)),
        }
    }

    pub fn new(w1: Array2<f64>, w2: Array2<f64>) -> Result<Self> {
        if w1.nrows() != w2.ncols() {
            return Err(Error::Shape(format!(
                "w1 is {}x{} but w2 is {}x{}; hidden sizes disagree",
                w1.nrows(),
                w1.ncols(),
                w2.nrows(),
                w2.ncols()
            )));
        }
        Ok(Self { w1, w2 })
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.w1.ncols(), self.w1.nrows(), self.w2.nrows())
    }

    /// Squared l2 norm over all entries of both matrices.
    pub fn norm_sq(&self) -> f64 {
        self.w1.iter().map(|v| v * v).sum::<f64>() + self.w2.iter().map(|v| v * v).sum::<f64>()
    }

    /// Flattens to the canonical d-vector layout: `w1` row-major (hidden cell
    /// outer, feature inner), then `w2` row-major (class outer, hidden inner).
    pub fn to_flat(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.dims().d());
        out.extend(self.w1.iter().copied());
        out.extend(self.w2.iter().copied());
        Array1::from_vec(out)
    }

    pub fn from_flat(dims: Dims, flat: ArrayView1<f64>) -> Result<Self> {
        if flat.len() != dims.d() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, expected d = {}",
                flat.len(),
                dims.d()
            )));
        }
        let split = dims.j * dims.k;
        let w1 = Array2::from_shape_vec((dims.j, dims.k), flat.slice(ndarray::s![..split]).to_vec())
            .expect("split length matches shape");
        let w2 = Array2::from_shape_vec((dims.l, dims.j), flat.slice(ndarray::s![split..]).to_vec())
            .expect("split length matches shape");
        Ok(Self { w1, w2 })
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite()) && self.w2.iter().all(|v| v.is_finite())
    }
}

/// One labeled sample: `K` features and the class index (one-hot implied).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Array1<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(x: Array1<f64>, label: usize) -> Self {
        Self { x, label }
    }
}

/// A client's per-round uplink message: unweighted partial sums over its
/// mini-batch. Contains no raw features; its size is fixed by the model
/// dimensions alone.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    /// Partial sum of the w1 gradient terms, J×K.
    pub b_bar: Array2<f64>,
    /// Partial sum of the w2 gradient terms, L×J.
    pub c_bar: Array2<f64>,
    /// Partial sum of per-sample cross entropies (positive convention).
    pub a_bar: f64,
    /// Number of samples contributing.
    pub count: usize,
}

impl BatchStats {
    /// Scalars in the message body (excluding the `count` metadata).
    pub fn scalar_len(&self) -> usize {
        self.b_bar.len() + self.c_bar.len() + 1
    }
}

/// Swish activation `S(z) = z * sigmoid(z)`.
pub fn swish(z: f64) -> f64 {
    z * sigmoid(z)
}

/// Exact derivative of swish: `sigmoid(z) * (1 + z * (1 - sigmoid(z)))`.
pub fn swish_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dense feature matrix plus labels, the batched form of a sample list.
/// Row `i` of `x` is sample `i`.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
}

impl DataMatrix {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("sample list"))?;
        let k = first.x.len();
        let mut x = Array2::zeros((samples.len(), k));
        let mut labels = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != k {
                return Err(Error::Shape(format!(
                    "sample {i} has {} features, expected {k}",
                    s.x.len()
                )));
            }
            x.row_mut(i).assign(&s.x);
            labels.push(s.label);
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Row-wise softmax with max subtraction; returns probabilities and log
/// probabilities (log-softmax computed directly, never `log` of an
/// underflowed probability).
fn softmax_rows(logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut q = logits.clone();
    let mut logq = logits.clone();
    for (mut qrow, mut lrow) in q.outer_iter_mut().zip(logq.outer_iter_mut()) {
        let m = qrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in qrow.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        let log_sum = sum.ln();
        for (qv, lv) in qrow.iter_mut().zip(lrow.iter_mut()) {
            *lv = *lv - m - log_sum;
            *qv /= sum;
        }
    }
    (q, logq)
}

fn check_features(params: &ModelParams, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != params.dims().k {
        return Err(Error::Shape(format!(
            "features have {} columns, model expects K = {}",
            x.ncols(),
            params.dims().k
        )));
    }
    Ok(())
}

/// Class probabilities for a single feature vector.
pub fn forward(params: &ModelParams, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let x2 = x.insert_axis(Axis(0));
    let (q, _) = forward_batch(params, x2)?;
    Ok(q.row(0).to_owned())
}

/// Batched forward pass: returns (probabilities, log-probabilities), one row
/// per sample.
pub fn forward_batch(
    params: &ModelParams,
    x: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_features(params, x)?;
    let z = x.dot(&params.w1.t());
    let s = z.mapv(swish);
    let logits = s.dot(&params.w2.t());
    Ok(softmax_rows(&logits))
}

/// Mean cross-entropy cost over a dataset.
pub fn cost(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    let data = DataMatrix::from_samples(samples)?;
    cost_matrix(params, &data)
}

/// Mean cross-entropy cost over a prepared data matrix.
pub fn cost_matrix(params: &ModelParams, data: &DataMatrix) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let (_, logq) = forward_batch(params, data.x.view())?;
    let sum: f64 = data
        .labels
        .iter()
        .enumerate()
        .map(|(i, &lab)| -logq[[i, lab]])
        .sum();
    Ok(sum / data.len() as f64)
}

/// Unweighted per-batch statistic sums uploaded by a client.
///
/// `b_bar` and `c_bar` are the gradient sums of the batch cross entropy with
/// respect to `w1` and `w2`; `a_bar` is the positive cross-entropy sum. The
/// server applies dataset weights and the proximal terms.
pub fn batch_stats(params: &ModelParams, batch: &[Sample]) -> Result<BatchStats> {
    let data = DataMatrix::from_samples(batch)?;
    batch_stats_matrix(params, &data)
}

/// Batched form of [`batch_stats`].
pub fn batch_stats_matrix(params: &ModelParams, data: &DataMatrix) -> Result<BatchStats> {
    if data.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_features(params, data.x.view())?;
    let z = data.x.dot(&params.w1.t());
    let s = z.mapv(swish);
    let sp = z.mapv(swish_prime);
    let logits = s.dot(&params.w2.t());
    let (q, logq) = softmax_rows(&logits);

    // residual R = Q - Y, one-hot labels subtracted in place
    let mut r = q;
    let mut a_bar = 0.0;
    for (i, &lab) in data.labels.iter().enumerate() {
        if lab >= r.ncols() {
            return Err(Error::InvalidLabel {
                label: lab,
                classes: r.ncols(),
            });
        }
        r[[i, lab]] -= 1.0;
        a_bar -= logq[[i, lab]];
    }

    let c_bar = r.t().dot(&s);
    let g = r.dot(&params.w2) * &sp;
    let b_bar = g.t().dot(&data.x);

    Ok(BatchStats {
        b_bar,
        c_bar,
        a_bar,
        count: data.len(),
    })
}

/// Fraction of samples whose argmax class matches the label. Ties break to
/// the lowest class index.
pub fn accuracy(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    let data = DataMatrix::from_samples(samples)?;
    accuracy_matrix(params, &data)
}

/// Batched form of [`accuracy`].
pub fn accuracy_matrix(params: &ModelParams, data: &DataMatrix) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let (q, _) = forward_batch(params, data.x.view())?;
    let mut hits = 0usize;
    for (row, &lab) in q.outer_iter().zip(data.labels.iter()) {
        let mut best = 0usize;
        let mut best_v = row[0];
        for (idx, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best_v = v;
                best = idx;
            }
        }
        if best == lab {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::array;
    use crate::testutil::{random_batch, random_params};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite difference of the batch-mean cost w.r.t. every weight.
    fn fd_gradient(params: &ModelParams, batch: &[Sample], h: f64) -> (Array2<f64>, Array2<f64>) {
        let mut g1 = Array2::zeros(params.w1.raw_dim());
        for idx in 0..params.w1.len() {
            let (j, k) = (idx / params.w1.ncols(), idx % params.w1.ncols());
            let mut plus = params.clone();
            plus.w1[[j, k]] += h;
            let mut minus = params.clone();
            minus.w1[[j, k]] -= h;
            g1[[j, k]] = (cost(&plus, batch).unwrap() - cost(&minus, batch).unwrap()) / (2.0 * h);
        }
        let mut g2 = Array2::zeros(params.w2.raw_dim());
        for idx in 0..params.w2.len() {
            let (l, j) = (idx / params.w2.ncols(), idx % params.w2.ncols());
            let mut plus = params.clone();
            plus.w2[[l, j]] += h;
            let mut minus = params.clone();
            minus.w2[[l, j]] -= h;
            g2[[l, j]] = (cost(&plus, batch).unwrap() - cost(&minus, batch).unwrap()) / (2.0 * h);
        }
        (g1, g2)
    }

    #[test]
    fn swish_basics() {
        assert_eq!(swish(0.0), 0.0);
        assert_relative_eq!(swish(1.0), 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(swish(1.0), 0.731058578630005, epsilon = 1e-12);
        assert!(swish(-1000.0).abs() < 1e-12);
        assert!(swish(500.0).is_finite());
        assert!(swish(-500.0).is_finite());
    }

    #[test]
    fn swish_prime_basics() {
        assert_eq!(swish_prime(0.0), 0.5);
        assert_abs_diff_eq!(swish_prime(1000.0), 1.0, epsilon = 1e-12);
        assert!(swish_prime(-1000.0).abs() < 1e-12);
    }

    #[test]
    fn swish_prime_matches_finite_difference() {
        let h = 1e-6;
        for &z in &[-5.0, -1.3, -0.2, 0.0, 0.4, 1.0, 3.7, 8.0] {
            let fd = (swish(z + h) - swish(z - h)) / (2.0 * h);
            assert_abs_diff_eq!(swish_prime(z), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn forward_zero_params_is_uniform() {
        let params = ModelParams::zeros(Dims::new(4, 3, 5));
        let x = array![0.3, -0.2, 1.0, 0.5];
        let q = forward(&params, x.view()).unwrap();
        for &v in q.iter() {
            assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = Dims::new(3, 4, 3);
        let params = random_params(dims, 1.0, &mut rng);
        let x = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let q = forward(&params, x.view()).unwrap();

        // Shifting every output logit by the same constant must not change Q.
        // Adding a fixed row delta to all of w2's rows shifts each logit by
        // delta . S(z), a constant across classes.
        let mut shifted = params.clone();
        let delta = Array1::from_shape_fn(4, |_| rng.random_range(-0.5..0.5));
        for mut row in shifted.w2.rows_mut() {
            row += &delta;
        }
        let q2 = forward(&shifted, x.view()).unwrap();
        for (a, b) in q.iter().zip(q2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_scalar_chain_hand_value() {
        // J=1, K=1, L=2, w1=[[1]], w2=[[1],[-1]], x=[1]:
        // logits are +-S(1), so Q_0 = sigmoid(2 S(1)).
        let params = ModelParams::new(array![[1.0]], array![[1.0], [-1.0]]).unwrap();
        let q = forward(&params, array![1.0].view()).unwrap();
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        let expected = 1.0 / (1.0 + (-2.0 * s1).exp());
        assert_abs_diff_eq!(q[0], expected, epsilon = 1e-14);
        assert_abs_diff_eq!(q[0] + q[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let params = ModelParams::zeros(Dims::new(4, 3, 5));
        let x = array![0.3, -0.2];
        assert!(forward(&params, x.view()).is_err());
    }

    #[test]
    fn cost_zero_params_is_log_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = Dims::new(6, 4, 5);
        let params = ModelParams::zeros(dims);
        let batch = random_batch(dims, 17, &mut rng);
        assert_abs_diff_eq!(cost(&params, &batch).unwrap(), (5.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn cost_near_certain_prediction() {
        // Drive the true-class probability to 1 - eps and check cost ~ eps.
        // With L=2 and logit gap g, eps = sigmoid(-g); pick g so eps = 1e-6.
        let eps = 1e-6f64;
        let gap = -(eps / (1.0 - eps)).ln();
        // w1=[[big]] saturates swish to identity, w2 rows produce +-gap/2.
        let params =
            ModelParams::new(array![[gap]], array![[0.5], [-0.5]]).unwrap();
        // x = 1 gives z = gap (large enough that S(z) ~ z for gap ~ 13.8).
        let sample = Sample::new(array![1.0], 0);
        let q = forward(&params, sample.x.view()).unwrap();
        let c = cost(&params, &[sample]).unwrap();
        assert_abs_diff_eq!(c, -(q[0].ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(c, 1.0 - q[0], epsilon = 1e-9);
    }

    #[test]
    fn cost_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = Dims::new(5, 3, 4);
        let params = random_params(dims, 1.5, &mut rng);
        let batch = random_batch(dims, 9, &mut rng);

        // independent naive evaluation: explicit loops, textbook formulas
        let mut total = 0.0;
        for s in &batch {
            let mut logits = vec![0.0; dims.l];
            for l in 0..dims.l {
                for j in 0..dims.j {
                    let mut z = 0.0;
                    for k in 0..dims.k {
                        z += params.w1[[j, k]] * s.x[k];
                    }
                    logits[l] += params.w2[[l, j]] * (z / (1.0 + (-z).exp()));
                }
            }
            let denom: f64 = logits.iter().map(|v| v.exp()).sum();
            total -= (logits[s.label].exp() / denom).ln();
        }
        let naive = total / batch.len() as f64;
        assert_abs_diff_eq!(cost(&params, &batch).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn cost_rejects_empty() {
        let params = ModelParams::zeros(Dims::new(2, 2, 2));
        assert!(cost(&params, &[]).is_err());
    }

    #[test]
    fn batch_stats_zero_params_c_bar_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = Dims::new(4, 3, 3);
        let params = ModelParams::zeros(dims);
        let batch = random_batch(dims, 8, &mut rng);
        let stats = batch_stats(&params, &batch).unwrap();
        // S(0) = 0 kills every c_bar entry exactly.
        assert!(stats.c_bar.iter().all(|&v| v == 0.0));
        assert_eq!(stats.count, 8);
    }

    #[test]
    fn batch_stats_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dims = Dims::new(4, 3, 3);
        for _ in 0..10 {
            let params = random_params(dims, 2.0, &mut rng);
            let batch = random_batch(dims, 6, &mut rng);
            let stats = batch_stats(&params, &batch).unwrap();
            let (g1, g2) = fd_gradient(&params, &batch, 1e-5);
            let n = batch.len() as f64;
            for (a, b) in stats.b_bar.iter().zip(g1.iter()) {
                let denom = b.abs().max(1e-4);
                assert!(
                    ((a / n - b) / denom).abs() < 1e-4,
                    "b_bar mean {} vs fd {}",
                    a / n,
                    b
                );
            }
            for (a, b) in stats.c_bar.iter().zip(g2.iter()) {
                let denom = b.abs().max(1e-4);
                assert!(((a / n - b) / denom).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn batch_stats_scalar_hand_expansion() {
        // L=2, J=1, K=1 chain rule expanded by hand.
        let (a, b, c, x) = (0.7, 1.3, -0.4, 0.9);
        let params = ModelParams::new(array![[a]], array![[b], [c]]).unwrap();
        let sample = Sample::new(array![x], 0);
        let z = a * x;
        let s = swish(z);
        let sp = swish_prime(z);
        let e0 = (b * s).exp();
        let e1 = (c * s).exp();
        let q0 = e0 / (e0 + e1);
        let q1 = e1 / (e0 + e1);
        let stats = batch_stats(&params, &[sample]).unwrap();
        assert_abs_diff_eq!(stats.c_bar[[0, 0]], (q0 - 1.0) * s, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.c_bar[[1, 0]], q1 * s, epsilon = 1e-12);
        assert_abs_diff_eq!(
            stats.b_bar[[0, 0]],
            ((q0 - 1.0) * b + q1 * c) * sp * x,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(stats.a_bar, -q0.ln(), epsilon = 1e-12);
    }

    #[test]
    fn batch_stats_rejects_empty() {
        let params = ModelParams::zeros(Dims::new(2, 2, 2));
        assert!(batch_stats(&params, &[]).is_err());
    }

    #[test]
    fn accuracy_zero_params_ties_to_class_zero() {
        let dims = Dims::new(3, 2, 4);
        let params = ModelParams::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = random_batch(dims, 40, &mut rng);
        let freq0 = batch.iter().filter(|s| s.label == 0).count() as f64 / 40.0;
        assert_eq!(accuracy(&params, &batch).unwrap(), freq0);
    }

    #[test]
    fn accuracy_single_correct_sample() {
        let params = ModelParams::new(array![[5.0]], array![[1.0], [-1.0]]).unwrap();
        let s = Sample::new(array![1.0], 0);
        assert_eq!(accuracy(&params, &[s]).unwrap(), 1.0);
    }

    #[test]
    fn softmax_rows_normalize_under_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let dims = Dims::new(5, 4, 6);
        for _ in 0..1000 {
            // scale kept moderate so no class underflows to exactly zero
            let params = random_params(dims, 1.0, &mut rng);
            let x = Array1::from_shape_fn(dims.k, |_| rng.random_range(-1.0..1.0));
            let q = forward(&params, x.view()).unwrap();
            let sum: f64 = q.sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(q.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn forward_stable_under_large_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dims = Dims::new(6, 5, 4);
        for _ in 0..50 {
            let params = random_params(dims, 100.0, &mut rng);
            let x = Array1::from_shape_fn(dims.k, |_| rng.random_range(-10.0..10.0));
            let q = forward(&params, x.view()).unwrap();
            assert!(q.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn flat_layout_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = Dims::new(3, 4, 2);
        let params = random_params(dims, 1.0, &mut rng);
        let flat = params.to_flat();
        assert_eq!(flat.len(), dims.d());
        // w1 row-major first: entry (j, k) at j*K + k
        assert_eq!(flat[1 * 3 + 2], params.w1[[1, 2]]);
        // then w2 row-major: entry (l, j) at J*K + l*J + j
        assert_eq!(flat[12 + 1 * 4 + 3], params.w2[[1, 3]]);
        let back = ModelParams::from_flat(dims, flat.view()).unwrap();
        assert_eq!(back, params);
    }
}
