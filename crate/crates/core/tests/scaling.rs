//! Coarse runtime scaling of the forward pass. Kept in its own test binary so
//! no other test competes for the CPU while it is timed.

mod common;

use common::*;
use graphmix::GaussianHmm;
use ndarray::Array2;
use std::time::Instant;

fn seconds(hmm: &GaussianHmm, seq: &Array2<f64>) -> f64 {
    let start = Instant::now();
    std::hint::black_box(hmm.log_likelihood(seq.view()).unwrap());
    start.elapsed().as_secs_f64()
}

fn paired_ratio(trials: usize, base: (&GaussianHmm, &Array2<f64>), other: (&GaussianHmm, &Array2<f64>)) -> f64 {
    seconds(base.0, base.1);
    let ratios = (0..trials)
        .map(|_| {
            let b = seconds(base.0, base.1);
            seconds(other.0, other.1) / b
        })
        .collect();
    median(ratios)
}

#[test]
fn forward_pass_scales_linearly_in_length_and_quadratically_in_states() {
    let mut r = rng(11);
    let hmm = random_hmm(&mut r, 8, 1);
    let short = hmm.sample(4000, 1).unwrap();
    let long = hmm.sample(8000, 2).unwrap();
    let t_ratio = paired_ratio(11, (&hmm, &short), (&hmm, &long));
    assert!((1.0..=4.0).contains(&t_ratio), "T-doubling ratio {t_ratio}");

    let small = random_hmm(&mut r, 32, 1);
    let large = random_hmm(&mut r, 64, 1);
    let seq = small.sample(400, 3).unwrap();
    let s_ratio = paired_ratio(11, (&small, &seq), (&large, &seq));
    assert!((2.0..=8.0).contains(&s_ratio), "S-doubling ratio {s_ratio}");
}
