//! Linear probes: ridge one-hot classifiers and ridge regressors used to
//! measure what information a representation carries. Closed-form and
//! deterministic, so probe numbers are reproducible.

use crate::linalg::ridge_solve;
use crate::numerics::tensor::{matmul, Tensor};

/// Appends a constant-1 bias column.
fn with_bias(x: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[n, d + 1]);
    for i in 0..n {
        for j in 0..d {
            out.set(i, j, x.at(i, j));
        }
        out.set(i, d, 1.0);
    }
    out
}

fn one_hot(labels: &[usize], k: usize) -> Tensor {
    let mut y = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < k, "label {l} out of range {k}");
        y.set(i, l, 1.0);
    }
    y
}

/// Fits a ridge one-hot classifier on the first `split` rows and returns
/// argmax accuracy on the rest.
pub fn linear_probe_accuracy(
    x: &Tensor,
    labels: &[usize],
    split: usize,
    k: usize,
    lambda: f64,
) -> f64 {
    assert_eq!(x.rows(), labels.len());
    assert!(split > 0 && split < x.rows(), "degenerate split");
    let xb = with_bias(x);
    let take = |lo: usize, hi: usize| -> Tensor {
        let mut out = Tensor::zeros(&[hi - lo, xb.cols()]);
        for i in lo..hi {
            for j in 0..xb.cols() {
                out.set(i - lo, j, xb.at(i, j));
            }
        }
        out
    };
    let x_train = take(0, split);
    let x_eval = take(split, x.rows());
    let y_train = one_hot(&labels[..split], k);
    let w = ridge_solve(&x_train, &y_train, lambda).expect("ridge system is SPD");
    let scores = matmul(&x_eval, &w);
    let mut correct = 0;
    for (i, &want) in labels[split..].iter().enumerate() {
        let row = scores.row(i);
        let got = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
            .expect("non-empty")
            .0;
        if got == want {
            correct += 1;
        }
    }
    correct as f64 / (x.rows() - split) as f64
}

/// Fits a ridge regressor on the first `split` rows and returns pooled R² on
/// the rest: 1 − SSE/SST with SST about the eval-set mean, aggregated over
/// all output dimensions.
pub fn linear_probe_r2(x: &Tensor, y: &Tensor, split: usize, lambda: f64) -> f64 {
    assert_eq!(x.rows(), y.rows());
    assert!(split > 0 && split < x.rows(), "degenerate split");
    let xb = with_bias(x);
    let take = |m: &Tensor, lo: usize, hi: usize| -> Tensor {
        let mut out = Tensor::zeros(&[hi - lo, m.cols()]);
        for i in lo..hi {
            for j in 0..m.cols() {
                out.set(i - lo, j, m.at(i, j));
            }
        }
        out
    };
    let x_train = take(&xb, 0, split);
    let y_train = take(y, 0, split);
    let x_eval = take(&xb, split, x.rows());
    let y_eval = take(y, split, y.rows());
    let w = ridge_solve(&x_train, &y_train, lambda).expect("ridge system is SPD");
    let pred = matmul(&x_eval, &w);

    let n = y_eval.rows();
    let k = y_eval.cols();
    let mut sse = 0.0;
    let mut sst = 0.0;
    for j in 0..k {
        let mean: f64 = (0..n).map(|i| y_eval.at(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            sse += (y_eval.at(i, j) - pred.at(i, j)).powi(2);
            sst += (y_eval.at(i, j) - mean).powi(2);
        }
    }
    if sst <= 0.0 {
        return 0.0;
    }
    1.0 - sse / sst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probe_separates_separable_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 120;
        let mut x = Tensor::zeros(&[n, 3]);
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            labels.push(c);
            for j in 0..3 {
                let center = if j == c { 2.0 } else { -1.0 };
                x.set(i, j, center + rng.gen_range(-0.3..0.3));
            }
        }
        let acc = linear_probe_accuracy(&x, &labels, 80, 3, 1e-4);
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn r2_near_one_for_linear_targets_near_zero_for_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200;
        let x = Tensor::from_vec(
            &[n, 4],
            (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut y = Tensor::zeros(&[n, 2]);
        let mut junk = Tensor::zeros(&[n, 2]);
        for i in 0..n {
            y.set(i, 0, 2.0 * x.at(i, 0) - x.at(i, 2) + 0.5);
            y.set(i, 1, x.at(i, 1) + 0.3 * x.at(i, 3));
            junk.set(i, 0, rng.gen_range(-1.0..1.0));
            junk.set(i, 1, rng.gen_range(-1.0..1.0));
        }
        assert!(linear_probe_r2(&x, &y, 140, 1e-6) > 0.999);
        assert!(linear_probe_r2(&x, &junk, 140, 1e-6) < 0.15);
    }
}
