mod common;

use common::*;
use graphmix::adam::AdamState;
use graphmix::mixture::{expected_agreement, reparameterize, reparameterize_rows};
use graphmix::train::{coefficient_gradient, em_step_mhmm, em_step_spamhmm, initialize};
use graphmix::{AffinityGraph, GaussianHmm, InitSpec, SequenceDataset, SparseMixtureModel, TrainConfig};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

fn random_model(r: &mut impl Rng, k: usize, m: usize, s: usize, d: usize) -> SparseMixtureModel {
    let components = (0..m).map(|_| random_hmm(r, s, d)).collect();
    let beta = Array2::from_shape_fn((k, m), |_| r.random_range(0.05..1.5));
    SparseMixtureModel::with_beta(components, beta).unwrap()
}

fn random_dataset(r: &mut impl Rng, model: &SparseMixtureModel, n: usize, t: usize) -> SequenceDataset {
    let pairs = (0..n)
        .map(|i| {
            let node = i % model.num_nodes();
            let (seq, _) = model.sample_from_node_with(r, node, t).unwrap();
            (node, seq)
        })
        .collect();
    SequenceDataset::from_pairs(pairs).unwrap()
}

fn random_graph(r: &mut impl Rng, k: usize) -> AffinityGraph {
    let mut w = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let v = r.random_range(-1.0..1.0);
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    AffinityGraph::new(w).unwrap()
}

fn random_probability(r: &mut impl Rng, m: usize, zero_prob: f64) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(m, |_| {
            if r.random_bool(zero_prob) {
                0.0
            } else {
                r.random::<f64>()
            }
        });
        let s = v.sum();
        if s > 0.0 {
            return v / s;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn agreement_is_a_probability(seed in any::<u64>(), m in 2usize..8) {
        let mut r = rng(seed);
        let p = random_probability(&mut r, m, 0.3);
        let q = random_probability(&mut r, m, 0.3);
        let dot = expected_agreement(p.view(), q.view());
        prop_assert!((0.0..=1.0).contains(&dot));
        let disjoint = p.iter().zip(q.iter()).all(|(a, b)| *a == 0.0 || *b == 0.0);
        prop_assert_eq!(dot == 0.0, disjoint);
        let one_hot = p.iter().filter(|v| **v > 0.0).count() == 1;
        if !(one_hot && p == q) {
            prop_assert!(dot < 1.0 - 1e-12);
        }
    }

    #[test]
    fn reparameterize_zeros_exactly_where_beta_nonpositive(seed in any::<u64>(), m in 1usize..8) {
        let mut r = rng(seed);
        let mut beta = Array1::from_shape_fn(m, |_| r.random_range(-1.0..1.0));
        beta[r.random_range(0..m)] = r.random_range(0.01..1.0);
        let alpha = reparameterize(beta.view()).unwrap();
        prop_assert!((alpha.sum() - 1.0).abs() < 1e-12);
        for (a, b) in alpha.iter().zip(beta.iter()) {
            prop_assert_eq!(*a == 0.0, *b <= 0.0);
            prop_assert!(*a >= 0.0);
        }
        let scaled = reparameterize((&beta * 3.7).view()).unwrap();
        for (a, b) in alpha.iter().zip(scaled.iter()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_likelihood_matches_direct_sum(seed in any::<u64>(), t in 1usize..=5) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 2, 3, 2, 2);
        let seq = random_seq(&mut r, t, 2);
        for node in 0..2 {
            let want: f64 = (0..3)
                .map(|m| model.alpha()[[node, m]] * brute_force_likelihood(&model.components()[m], &seq))
                .sum();
            let got = model.log_likelihood(seq.view(), node).unwrap();
            prop_assert!((got - want.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn relabeling_components_keeps_likelihood(seed in any::<u64>(), t in 1usize..=20) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 3, 4, 2, 1);
        let seq = random_seq(&mut r, t, 1);
        let perm = [2usize, 0, 3, 1];
        let components: Vec<GaussianHmm> = perm.iter().map(|&p| model.components()[p].clone()).collect();
        let beta = model.beta().unwrap();
        let beta = Array2::from_shape_fn(beta.dim(), |(k, m)| beta[[k, perm[m]]]);
        let other = SparseMixtureModel::with_beta(components, beta).unwrap();
        for node in 0..3 {
            let a = model.log_likelihood(seq.view(), node).unwrap();
            let b = other.log_likelihood(seq.view(), node).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let mut r = rng(seed);
        let mut model = random_model(&mut r, 3, 4, 2, 1);
        let data = random_dataset(&mut r, &model, 12, 4);
        let mut beta = model.beta().unwrap().clone();
        beta[[r.random_range(0..3), r.random_range(0..4)]] = -0.3;
        model = SparseMixtureModel::with_beta(model.components().to_vec(), beta.clone()).unwrap();
        let graph = random_graph(&mut r, 3);
        let stats = model.posteriors(&data).unwrap();
        let grad = coefficient_gradient(&model, &stats, &graph, lambda).unwrap();
        let h = 1e-6;
        for ((k, m), &b) in beta.indexed_iter() {
            if b <= 0.0 {
                prop_assert_eq!(grad[[k, m]], 0.0);
                continue;
            }
            if b <= 1e-3 {
                continue;
            }
            let mut plus = beta.clone();
            plus[[k, m]] += h;
            let mut minus = beta.clone();
            minus[[k, m]] -= h;
            let fd = (surrogate(&plus, &stats.eta, &stats.nodes, &graph, lambda)
                - surrogate(&minus, &stats.eta, &stats.nodes, &graph, lambda))
                / (2.0 * h);
            // central differences carry ~1e-10 of round-off, which dominates near-zero gradients
            let rel = (grad[[k, m]] - fd).abs() / fd.abs().max(1e-4);
            prop_assert!(rel < 1e-5, "({k},{m}) analytic {} fd {fd}", grad[[k, m]]);
        }
    }
}

#[test]
fn constructed_agreement_cases() {
    let a = ndarray::array![0.5, 0.5, 0.0, 0.0];
    let b = ndarray::array![0.0, 0.0, 0.3, 0.7];
    assert_eq!(expected_agreement(a.view(), b.view()), 0.0);
    for m in 0..4 {
        let mut e = Array1::zeros(4);
        e[m] = 1.0;
        assert_eq!(expected_agreement(e.view(), e.view()), 1.0);
    }
    let u = Array1::from_elem(4, 0.25);
    assert!(expected_agreement(u.view(), u.view()) < 1.0 - 1e-12);
}

#[test]
fn em_objective_never_decreases() {
    let mut r = rng(21);
    let truth = random_model(&mut r, 3, 3, 2, 2);
    let data = random_dataset(&mut r, &truth, 60, 12);
    let mut model = initialize(&data, &InitSpec::new(3, 3, 2), false, 5).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..25 {
        let step = em_step_mhmm(&model, &data).unwrap();
        assert!(step.objective >= prev - 1e-8, "{} < {}", step.objective, prev);
        prev = step.objective;
        model = step.model;
    }
}

#[test]
fn regularized_objective_stays_finite_and_rows_normalized() {
    let mut r = rng(22);
    let truth = random_model(&mut r, 3, 3, 2, 1);
    let data = random_dataset(&mut r, &truth, 30, 8);
    let graph = AffinityGraph::complete(3, 1.0).unwrap();
    let config = TrainConfig {
        lambda: 0.5,
        inner_iters: 20,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let mut model = initialize(&data, &InitSpec::new(3, 3, 2), true, 1).unwrap();
    let mut adam = AdamState::new((3, 3));
    for _ in 0..10 {
        let step = em_step_spamhmm(&model, &data, &graph, &config, &mut adam).unwrap();
        assert!(step.objective.is_finite());
        model = step.model;
        for row in model.alpha().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let alpha = reparameterize_rows(model.beta().unwrap()).unwrap();
        assert_eq!(&alpha, model.alpha());
    }
}

#[test]
fn unregularized_component_updates_agree() {
    let mut r = rng(23);
    let truth = random_model(&mut r, 2, 3, 2, 2);
    let data = random_dataset(&mut r, &truth, 20, 6);
    let model = initialize(&data, &InitSpec::new(2, 3, 2), true, 9).unwrap();
    let graph = random_graph(&mut r, 2);
    let config = TrainConfig {
        lambda: 0.0,
        inner_iters: 5,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let a = em_step_spamhmm(&model, &data, &graph, &config, &mut AdamState::new((2, 3))).unwrap();
    let b = em_step_mhmm(&model, &data).unwrap();
    for (x, y) in a.model.components().iter().zip(b.model.components()) {
        assert_eq!(x.initial(), y.initial());
        assert_eq!(x.transition(), y.transition());
        assert_eq!(x.means(), y.means());
        assert_eq!(x.variances(), y.variances());
    }
}

#[test]
fn node_sampling_follows_coefficients() {
    let components = vec![
        simple_component(-3.0, 0.5, 1, 0.9),
        simple_component(0.0, 0.5, 1, 0.9),
        simple_component(3.0, 0.5, 1, 0.9),
    ];
    let alpha = ndarray::array![[0.2, 0.5, 0.3], [0.0, 0.1, 0.9]];
    let model = SparseMixtureModel::new(components, alpha.clone()).unwrap();
    let n = 20_000;
    let mut r = rng(4);
    for node in 0..2 {
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[model.sample_from_node_with(&mut r, node, 1).unwrap().1] += 1;
        }
        for m in 0..3 {
            let a = alpha[[node, m]];
            let freq = counts[m] as f64 / n as f64;
            let bound = 3.0 * (a * (1.0 - a) / n as f64).sqrt();
            assert!(
                (freq - a).abs() <= bound.max(1e-12),
                "node {node} comp {m}: {freq} vs {a}"
            );
        }
    }
}

#[test]
fn posteriors_reject_impossible_sequences() {
    let hmm = GaussianHmm::new(
        ndarray::array![1.0],
        ndarray::array![[1.0]],
        ndarray::array![[0.0]],
        ndarray::array![[1e-6]],
    )
    .unwrap();
    let model = SparseMixtureModel::new(vec![hmm], ndarray::array![[1.0]]).unwrap();
    let data = SequenceDataset::from_pairs(vec![(0, ndarray::array![[1e200]])]).unwrap();
    assert!(matches!(
        model.posteriors(&data),
        Err(graphmix::Error::ZeroLikelihood { index: 0 })
    ));
}

#[test]
fn regularized_objective_rises_on_a_chain_graph() {
    let components = vec![simple_component(-2.0, 0.8, 2, 0.85), simple_component(2.0, 0.8, 2, 0.7)];
    let truth = SparseMixtureModel::new(components, ndarray::array![[0.9, 0.1], [0.5, 0.5], [0.1, 0.9]]).unwrap();
    let (data, _) = graphmix::cli::generate_dataset(&truth, 10, 15, 3, None).unwrap();
    let graph = AffinityGraph::new(ndarray::array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap();
    let config = TrainConfig {
        lambda: 0.1,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let mut model = initialize(&data, &InitSpec::new(3, 2, 2), true, 2).unwrap();
    let mut adam = AdamState::new((3, 2));
    let mut objectives = Vec::new();
    for _ in 0..51 {
        let step = em_step_spamhmm(&model, &data, &graph, &config, &mut adam).unwrap();
        objectives.push(step.objective);
        model = step.model;
    }
    for (i, w) in objectives.windows(2).enumerate() {
        assert!(w[1] >= w[0] - 1e-6, "iteration {}: {} -> {}", i + 1, w[0], w[1]);
    }
}
