//! Diagonal-Gaussian utilities: closed-form KL, log-density, and the
//! reparameterized sampling estimator, as plain functions and as graph ops.

use std::f64::consts::PI;

use super::graph::{Graph, NodeId};
use super::NumericsError;

fn check_dims(lens: &[usize]) -> Result<(), NumericsError> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(NumericsError::DimMismatch(format!(
            "gaussian op dims {lens:?}"
        )));
    }
    Ok(())
}

/// KL(q ‖ p) between diagonal Gaussians given means and log-variances.
///
/// 0.5·Σ_d[(σq² + (μq−μp)²)/σp² − 1 + log σp² − log σq²], which is ≥ 0 and
/// exactly 0 when the distributions coincide.
pub fn gaussian_kl(
    mu_q: &[f64],
    logvar_q: &[f64],
    mu_p: &[f64],
    logvar_p: &[f64],
) -> Result<f64, NumericsError> {
    check_dims(&[mu_q.len(), logvar_q.len(), mu_p.len(), logvar_p.len()])?;
    let mut total = 0.0;
    for d in 0..mu_q.len() {
        let var_ratio = (logvar_q[d] - logvar_p[d]).exp();
        let mean_term = (mu_q[d] - mu_p[d]).powi(2) / logvar_p[d].exp();
        total += var_ratio + mean_term - 1.0 + logvar_p[d] - logvar_q[d];
    }
    Ok(0.5 * total)
}

/// Log-density of `x` under a diagonal Gaussian.
pub fn gaussian_logpdf(x: &[f64], mu: &[f64], logvar: &[f64]) -> Result<f64, NumericsError> {
    check_dims(&[x.len(), mu.len(), logvar.len()])?;
    let mut total = 0.0;
    for d in 0..x.len() {
        total += -0.5 * (2.0 * PI).ln()
            - 0.5 * logvar[d]
            - 0.5 * (x[d] - mu[d]).powi(2) / logvar[d].exp();
    }
    Ok(total)
}

/// z = μ + exp(½·logvar)·ε
pub fn reparam_sample(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>, NumericsError> {
    check_dims(&[mu.len(), logvar.len(), eps.len()])?;
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect())
}

// ---- graph versions (differentiable) ---------------------------------------

/// Per-row KL(q ‖ p) where p = N(prior_mu, exp(prior_logvar)·I); B×d → B×1.
///
/// `prior_mu = None` means a zero-mean prior.
pub fn kl_rows(
    g: &mut Graph,
    mu_q: NodeId,
    logvar_q: NodeId,
    prior_mu: Option<NodeId>,
    prior_logvar: f64,
) -> NodeId {
    let inv_var_p = (-prior_logvar).exp();
    let var_q = g.exp(logvar_q);
    let t1 = g.scale(var_q, inv_var_p);
    let diff = match prior_mu {
        Some(pm) => g.sub(mu_q, pm),
        None => mu_q,
    };
    let d2 = g.mul(diff, diff);
    let t2 = g.scale(d2, inv_var_p);
    let s = g.add(t1, t2);
    let s = g.add_const(s, prior_logvar - 1.0);
    let s = g.sub(s, logvar_q);
    let rs = g.row_sum(s);
    g.scale(rs, 0.5)
}

/// Per-row diagonal-Gaussian log-density of `x` under (mu, logvar); B×d → B×1.
pub fn logpdf_rows(g: &mut Graph, x: NodeId, mu: NodeId, logvar: NodeId) -> NodeId {
    let diff = g.sub(x, mu);
    let d2 = g.mul(diff, diff);
    let neg_lv = g.scale(logvar, -1.0);
    let inv_var = g.exp(neg_lv);
    let quad = g.mul(d2, inv_var);
    let quad = g.scale(quad, -0.5);
    let lv_term = g.scale(logvar, -0.5);
    let s = g.add(quad, lv_term);
    let s = g.add_const(s, -0.5 * (2.0 * PI).ln());
    g.row_sum(s)
}

/// z = μ + exp(½·logvar)·ε with ε a constant input node.
pub fn reparam_rows(g: &mut Graph, mu: NodeId, logvar: NodeId, eps: NodeId) -> NodeId {
    let half_lv = g.scale(logvar, 0.5);
    let std = g.exp(half_lv);
    let noise = g.mul(std, eps);
    g.add(mu, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mu = vec![0.0; 4];
        let lv = vec![0.0; 4];
        assert_eq!(gaussian_kl(&mu, &lv, &mu, &lv).unwrap(), 0.0);
        // z2-prior variance 0.25 on both sides
        let lv_q = vec![0.25f64.ln(); 3];
        assert_eq!(gaussian_kl(&mu[..3], &lv_q, &mu[..3], &lv_q).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_shift_is_half_and_matches_monte_carlo() {
        // q = N(1,1), p = N(0,1): closed form 0.5; cross-checked by a
        // Monte-Carlo estimate of E_q[log q − log p].
        let kl = gaussian_kl(&[1.0], &[0.0], &[0.0], &[0.0]).unwrap();
        assert!((kl - 0.5).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let z = 1.0 + e; // sample from q
            acc += gaussian_logpdf(&[z], &[1.0], &[0.0]).unwrap()
                - gaussian_logpdf(&[z], &[0.0], &[0.0]).unwrap();
        }
        let mc = acc / n as f64;
        assert!((kl - mc).abs() < 1e-2, "closed form {kl} vs MC {mc}");
    }

    #[test]
    fn kl_rejects_dimension_mismatch() {
        assert!(gaussian_kl(&[0.0, 1.0], &[0.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn logpdf_at_mean_unit_variance() {
        let v = gaussian_logpdf(&[0.3], &[0.3], &[0.0]).unwrap();
        assert!((v - (-0.5 * (2.0 * PI).ln())).abs() < 1e-12);
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn logpdf_factorizes_over_dims() {
        let x = [0.4, -1.2, 2.0];
        let mu = [0.0, 0.5, 1.5];
        let lv = [0.3, -0.4, 0.0];
        let joint = gaussian_logpdf(&x, &mu, &lv).unwrap();
        let sum: f64 = (0..3)
            .map(|d| gaussian_logpdf(&x[d..=d], &mu[d..=d], &lv[d..=d]).unwrap())
            .sum();
        assert!((joint - sum).abs() < 1e-12);
    }

    #[test]
    fn logpdf_one_sigma_from_mean() {
        let lv = 0.7f64;
        let sigma = (0.5 * lv).exp();
        let v = gaussian_logpdf(&[sigma], &[0.0], &[lv]).unwrap();
        let want = -0.5 * (2.0 * PI).ln() - 0.5 * lv - 0.5;
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn logpdf_density_integrates_to_one() {
        // trapezoid over a wide grid
        let (mu, lv) = (0.3, -0.5);
        let (lo, hi, n) = (-12.0, 12.0, 48_000);
        let h = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * h * gaussian_logpdf(&[x], &[mu], &[lv]).unwrap().exp();
        }
        assert!((integral - 1.0).abs() < 1e-3);
    }

    #[test]
    fn reparam_zero_noise_returns_mean() {
        let z = reparam_sample(&[1.0, -2.0], &[0.3, 0.9], &[0.0, 0.0]).unwrap();
        assert_eq!(z, vec![1.0, -2.0]);
    }

    #[test]
    fn reparam_sample_mean_obeys_law_of_large_numbers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            acc += reparam_sample(&[0.8], &[0.0], &[e]).unwrap()[0];
        }
        assert!((acc / n as f64 - 0.8).abs() < 0.02);
    }

    #[test]
    fn reparam_gradient_wrt_mean_is_identity() {
        let mut g = Graph::new();
        let mu = g.param("mu", Tensor::from_vec(&[1, 3], vec![0.1, 0.2, 0.3]).unwrap());
        let lv = g.input(Tensor::from_vec(&[1, 3], vec![0.5, -0.5, 0.0]).unwrap());
        let eps = g.input(Tensor::from_vec(&[1, 3], vec![1.3, -0.2, 0.7]).unwrap());
        let z = reparam_rows(&mut g, mu, lv, eps);
        let loss = g.sum_all(z);
        let (_, grads) = g.forward_backward(loss).unwrap();
        // d(Σz)/dμ = 1 per coordinate
        assert_eq!(grads["mu"].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn kl_nonnegative_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let d = rng.gen_range(1..6);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect()
            };
            let kl = gaussian_kl(
                &draw(&mut rng),
                &draw(&mut rng),
                &draw(&mut rng),
                &draw(&mut rng),
            )
            .unwrap();
            assert!(kl >= 0.0, "negative KL {kl}");
        }
    }

    #[test]
    fn taped_versions_match_plain_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = 4;
            let v = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()
            };
            let (mq, lq, mp, x, eps) = (
                v(&mut rng),
                v(&mut rng),
                v(&mut rng),
                v(&mut rng),
                v(&mut rng),
            );
            let lp = -0.7;

            let mut g = Graph::new();
            let mq_n = g.input(Tensor::from_vec(&[1, d], mq.clone()).unwrap());
            let lq_n = g.input(Tensor::from_vec(&[1, d], lq.clone()).unwrap());
            let mp_n = g.input(Tensor::from_vec(&[1, d], mp.clone()).unwrap());
            let x_n = g.input(Tensor::from_vec(&[1, d], x.clone()).unwrap());
            let eps_n = g.input(Tensor::from_vec(&[1, d], eps.clone()).unwrap());

            let kl_node = kl_rows(&mut g, mq_n, lq_n, Some(mp_n), lp);
            let lp_vec = vec![lp; d];
            let kl_plain = gaussian_kl(&mq, &lq, &mp, &lp_vec).unwrap();
            assert!((g.value(kl_node).item() - kl_plain).abs() < 1e-12);

            let pdf_node = logpdf_rows(&mut g, x_n, mq_n, lq_n);
            let pdf_plain = gaussian_logpdf(&x, &mq, &lq).unwrap();
            assert!((g.value(pdf_node).item() - pdf_plain).abs() < 1e-12);

            let z_node = reparam_rows(&mut g, mq_n, lq_n, eps_n);
            let z_plain = reparam_sample(&mq, &lq, &eps).unwrap();
            for (a, b) in g.value(z_node).data().iter().zip(&z_plain) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
