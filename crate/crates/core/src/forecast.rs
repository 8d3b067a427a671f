//! Continuations of an observed prefix.
//!
//! Conditioning on a prefix only changes two things: the component weights
//! become `p(z | prefix, node)` and every component's initial distribution
//! becomes its posterior over the last hidden state of the prefix. That last
//! state plays the role of the non-emitting `h(0)` of the continuation.
//! Transitions and emissions are shared with the parent model.

use ndarray::{Array1, Array2, ArrayView2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hmm::{sample_categorical, GaussianHmm};
use crate::logspace::{log_sum_exp, normalize_log_weights};
use crate::mixture::SparseMixtureModel;

/// Prefix-conditioned predictive model borrowing the parent's dictionary.
#[derive(Debug, Clone)]
pub struct PosteriorModel<'a> {
    pub weights: Array1<f64>,
    /// Row `m` is `p(h(0) | z = m, prefix)`.
    pub conditional_initials: Array2<f64>,
    /// `true` for zero-weight components, whose row is a uniform placeholder.
    pub inert: Vec<bool>,
    pub components: &'a [GaussianHmm],
}

pub fn condition<'a>(
    model: &'a SparseMixtureModel,
    prefix: ArrayView2<f64>,
    node: usize,
) -> Result<PosteriorModel<'a>> {
    model.check_node(node)?;
    if prefix.nrows() == 0 {
        return Err(Error::InvalidParameter("prefix must contain at least one frame".into()));
    }
    let m_count = model.num_components();
    let s_count = model.num_states();
    let t_pref = prefix.nrows();
    let mut log_w = vec![f64::NEG_INFINITY; m_count];
    let mut initials = Array2::from_elem((m_count, s_count), 1.0 / s_count as f64);
    let mut inert = vec![true; m_count];
    for (m, comp) in model.components().iter().enumerate() {
        let a = model.alpha()[[node, m]];
        if a > 0.0 {
            if let Some(post) = comp.posteriors_if_possible(prefix)? {
                log_w[m] = a.ln() + post.log_likelihood;
                initials.row_mut(m).assign(&post.gamma.row(t_pref));
            }
        }
    }
    normalize_log_weights(&mut log_w).ok_or(Error::ZeroLikelihood { index: 0 })?;
    for (m, w) in log_w.iter().enumerate() {
        if *w > 0.0 {
            inert[m] = false;
        } else {
            initials.row_mut(m).fill(1.0 / s_count as f64);
        }
    }
    Ok(PosteriorModel {
        weights: Array1::from(log_w),
        conditional_initials: initials,
        inert,
        components: model.components(),
    })
}

impl PosteriorModel<'_> {
    /// `ln p(continuation | prefix, node)`.
    pub fn log_likelihood(&self, continuation: ArrayView2<f64>) -> Result<f64> {
        if continuation.nrows() == 0 {
            return Err(Error::InvalidParameter("continuation must be non-empty".into()));
        }
        let mut terms = Vec::with_capacity(self.components.len());
        for (m, comp) in self.components.iter().enumerate() {
            let w = self.weights[m];
            if w > 0.0 {
                terms.push(w.ln() + comp.log_likelihood_from(self.conditional_initials.row(m), continuation)?);
            }
        }
        Ok(log_sum_exp(&terms))
    }

    /// Draws one continuation and the component it came from.
    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R, horizon: usize) -> Result<(Array2<f64>, usize)> {
        let m = sample_categorical(rng, self.weights.view());
        let seq = self.components[m].sample_with(rng, horizon, Some(self.conditional_initials.row(m)))?;
        Ok((seq, m))
    }
}

pub fn predictive_log_likelihood(posterior: &PosteriorModel<'_>, continuation: ArrayView2<f64>) -> Result<f64> {
    posterior.log_likelihood(continuation)
}

/// Per-step average of `num_samples` sampled continuations.
pub fn forecast_mean(
    model: &SparseMixtureModel,
    prefix: ArrayView2<f64>,
    node: usize,
    horizon: usize,
    num_samples: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if horizon == 0 || num_samples == 0 {
        return Err(Error::InvalidParameter("horizon and sample count must be >= 1".into()));
    }
    let posterior = condition(model, prefix, node)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = Array2::zeros((horizon, model.dim()));
    for _ in 0..num_samples {
        let (seq, _) = posterior.sample_with(&mut rng, horizon)?;
        total += &seq;
    }
    Ok(total / num_samples as f64)
}
