//! Test oracles. Nothing here calls the inference code it is used to check.
#![allow(dead_code)]

use graphmix::{AffinityGraph, GaussianHmm, SequenceDataset, SparseMixtureModel};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    let v = Array1::from_shape_fn(n, |_| 0.05 + rng.random::<f64>());
    let s = v.sum();
    v / s
}

pub fn random_hmm(rng: &mut impl Rng, s: usize, d: usize) -> GaussianHmm {
    let initial = random_simplex(rng, s);
    let mut transition = Array2::zeros((s, s));
    for r in 0..s {
        transition.row_mut(r).assign(&random_simplex(rng, s));
    }
    let means = Array2::from_shape_fn((s, d), |_| rng.random_range(-2.0..2.0));
    let variances = Array2::from_shape_fn((s, d), |_| rng.random_range(0.3..2.0));
    GaussianHmm::new(initial, transition, means, variances).unwrap()
}

pub fn random_seq(rng: &mut impl Rng, t: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((t, d), |_| rng.random_range(-3.0..3.0))
}

/// Diagonal Gaussian density evaluated directly in linear space.
pub fn gaussian_pdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
        .product()
}

/// Every hidden path `h(0..=T)` with its joint probability `p(h, X)`.
pub fn enumerate_paths(hmm: &GaussianHmm, initial: &Array1<f64>, seq: &Array2<f64>) -> Vec<(Vec<usize>, f64)> {
    let s = hmm.num_states();
    let t = seq.nrows();
    let total = s.pow((t + 1) as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut path = Vec::with_capacity(t + 1);
        let mut c = code;
        for _ in 0..=t {
            path.push(c % s);
            c /= s;
        }
        let mut p = initial[path[0]];
        for step in 1..=t {
            p *= hmm.transition()[[path[step - 1], path[step]]];
            let x = seq.row(step - 1).to_vec();
            let mean = hmm.means().row(path[step]).to_vec();
            let var = hmm.variances().row(path[step]).to_vec();
            p *= gaussian_pdf(&x, &mean, &var);
        }
        out.push((path, p));
    }
    out
}

pub fn brute_force_likelihood(hmm: &GaussianHmm, seq: &Array2<f64>) -> f64 {
    enumerate_paths(hmm, hmm.initial(), seq).iter().map(|(_, p)| p).sum()
}

/// `(γ, ξ)` by exhaustive enumeration, indexed like `StatePosteriors`.
pub fn brute_force_posteriors(hmm: &GaussianHmm, seq: &Array2<f64>) -> (Array2<f64>, Array3<f64>) {
    let s = hmm.num_states();
    let t = seq.nrows();
    let paths = enumerate_paths(hmm, hmm.initial(), seq);
    let z: f64 = paths.iter().map(|(_, p)| p).sum();
    let mut gamma = Array2::<f64>::zeros((t + 1, s));
    let mut xi = Array3::<f64>::zeros((t, s, s));
    for (path, p) in &paths {
        let w = p / z;
        for (step, &h) in path.iter().enumerate() {
            gamma[[step, h]] += w;
        }
        for step in 1..=t {
            xi[[step - 1, path[step - 1], path[step]]] += w;
        }
    }
    (gamma, xi)
}

/// `p(z = m, h(T) = s | X, node)` for a mixture, by enumeration.
pub fn brute_force_final_joint(model: &SparseMixtureModel, seq: &Array2<f64>, node: usize) -> Array2<f64> {
    let m_count = model.num_components();
    let s = model.num_states();
    let t = seq.nrows();
    let mut joint = Array2::<f64>::zeros((m_count, s));
    for (m, comp) in model.components().iter().enumerate() {
        let a = model.alpha()[[node, m]];
        for (path, p) in enumerate_paths(comp, comp.initial(), seq) {
            joint[[m, path[t]]] += a * p;
        }
    }
    let total = joint.sum();
    joint / total
}

/// Frozen-responsibility surrogate of the regularized objective as a
/// function of `beta`, evaluated from its definition.
pub fn surrogate(beta: &Array2<f64>, eta: &Array2<f64>, nodes: &[usize], graph: &AffinityGraph, lambda: f64) -> f64 {
    let (k_count, m_count) = beta.dim();
    let mut alpha = Array2::<f64>::zeros((k_count, m_count));
    for k in 0..k_count {
        let denom: f64 = (0..m_count).map(|l| beta[[k, l]].max(0.0).powi(2)).sum();
        for m in 0..m_count {
            alpha[[k, m]] = beta[[k, m]].max(0.0).powi(2) / denom;
        }
    }
    let n = nodes.len() as f64;
    let mut fit_term = 0.0;
    for (i, &y) in nodes.iter().enumerate() {
        for m in 0..m_count {
            if eta[[i, m]] > 0.0 {
                fit_term += eta[[i, m]] * alpha[[y, m]].ln();
            }
        }
    }
    let mut reg = 0.0;
    for j in 0..k_count {
        for k in 0..k_count {
            if j != k {
                let dot: f64 = (0..m_count).map(|m| alpha[[j, m]] * alpha[[k, m]]).sum();
                reg += graph.weights()[[j, k]] * dot;
            }
        }
    }
    fit_term / n + lambda * 0.5 * reg
}

/// Two-state, `d`-dimensional component with states at `center ± spread`.
pub fn simple_component(center: f64, spread: f64, d: usize, stay: f64) -> GaussianHmm {
    let means = Array2::from_shape_fn((2, d), |(s, j)| {
        let sign = if s == 0 { -1.0 } else { 1.0 };
        center + sign * spread + 0.1 * j as f64
    });
    GaussianHmm::new(
        ndarray::array![0.5, 0.5],
        ndarray::array![[stay, 1.0 - stay], [1.0 - stay, stay]],
        means,
        Array2::from_elem((2, d), 0.3),
    )
    .unwrap()
}

pub fn items_of(ds: &SequenceDataset) -> Vec<(usize, Array2<f64>)> {
    ds.items().iter().map(|i| (i.node, i.seq.clone())).collect()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
