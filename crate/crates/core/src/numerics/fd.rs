//! Central finite differences over a parameter store.
//!
//! This is the independent oracle used by gradient-fidelity tests: it only
//! evaluates the forward function and never touches the backward pass.

use std::collections::BTreeMap;

use super::optim::ParamStore;
use super::tensor::Tensor;

/// Relative error with a unit floor, so near-zero gradients are compared
/// absolutely: |a−n| / max(1, |a|, |n|).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central-difference gradient of `eval` for every coordinate of every
/// parameter.
pub fn central_diff_all(
    params: &ParamStore,
    h: f64,
    eval: impl Fn(&ParamStore) -> f64,
) -> BTreeMap<String, Tensor> {
    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    central_diff_at(params, h, &coords, eval)
        .into_iter()
        .fold(BTreeMap::new(), |mut acc, ((name, idx), g)| {
            acc.entry(name.clone())
                .or_insert_with(|| Tensor::zeros(params.get(&name).shape()))
                .data_mut()[idx] = g;
            acc
        })
}

/// Central-difference gradient of `eval` at selected (parameter, coordinate)
/// pairs. Useful when full sweeps are too expensive.
pub fn central_diff_at(
    params: &ParamStore,
    h: f64,
    coords: &[(String, usize)],
    eval: impl Fn(&ParamStore) -> f64,
) -> Vec<((String, usize), f64)> {
    let mut work = params.clone();
    let mut out = Vec::with_capacity(coords.len());
    for (name, idx) in coords {
        let orig = work.get(name).data()[*idx];
        work.get_mut(name).data_mut()[*idx] = orig + h;
        let plus = eval(&work);
        work.get_mut(name).data_mut()[*idx] = orig - h;
        let minus = eval(&work);
        work.get_mut(name).data_mut()[*idx] = orig;
        out.push(((name.clone(), *idx), (plus - minus) / (2.0 * h)));
    }
    out
}

/// Max relative error between an analytic gradient map and the
/// finite-difference estimate at the same coordinates.
pub fn max_rel_err_at(
    analytic: &BTreeMap<String, Tensor>,
    numeric: &[((String, usize), f64)],
) -> f64 {
    numeric
        .iter()
        .map(|((name, idx), n)| rel_err(analytic[name].data()[*idx], *n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use crate::numerics::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_chain_gradients_match_finite_differences() {
        // random 3×4·4×2 matmul chain, h = 1e-5, relative error < 1e-6
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ParamStore::new();
            let rnd = |rng: &mut ChaCha8Rng, shape: &[usize]| {
                let n: usize = shape.iter().product();
                Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap()
            };
            params.insert("a", rnd(&mut rng, &[3, 4]));
            params.insert("b", rnd(&mut rng, &[4, 2]));
            let weights = rnd(&mut rng, &[3, 2]);

            let eval = |p: &ParamStore| {
                let mut g = Graph::new();
                let a = g.param("a", p.get("a").clone());
                let b = g.param("b", p.get("b").clone());
                let w = g.input(weights.clone());
                let c = g.matmul(a, b);
                let cw = g.mul(c, w);
                let t = g.tanh(cw);
                let loss = g.sum_all(t);
                g.value(loss).item()
            };

            let mut g = Graph::new();
            let a = g.param("a", params.get("a").clone());
            let b = g.param("b", params.get("b").clone());
            let w = g.input(weights.clone());
            let c = g.matmul(a, b);
            let cw = g.mul(c, w);
            let t = g.tanh(cw);
            let loss = g.sum_all(t);
            let (_, analytic) = g.forward_backward(loss).unwrap();

            let numeric = central_diff_all(&params, 1e-5, eval);
            for (name, nt) in &numeric {
                for (x, y) in analytic[name].data().iter().zip(nt.data()) {
                    worst = worst.max(rel_err(*x, *y));
                }
            }
        }
        assert!(worst < 1e-6, "max relative error {worst}");
    }
}
