//! Single HMM with diagonal-Gaussian emissions.
//!
//! The hidden chain runs over `h(0), ..., h(T)`. The initial state `h(0)` is
//! drawn from `initial` and emits nothing; states `h(1)..h(T)` each emit one
//! observation row. All inference runs in log space.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::logspace::{ln_or_neg_inf, log_sum_exp};

/// Lower bound applied to every emission variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Tolerance used when validating that probability vectors sum to one.
pub const PROB_TOL: f64 = 1e-9;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHmm {
    pub(crate) initial: Array1<f64>,
    pub(crate) transition: Array2<f64>,
    pub(crate) means: Array2<f64>,
    pub(crate) variances: Array2<f64>,
}

/// Forward-backward output for one sequence.
///
/// `gamma` has `T + 1` rows; row `t` is `p(h(t) | X)`, so row 0 is the
/// non-emitting initial state. `xi` has `T` slabs; slab `t - 1` holds
/// `p(h(t-1) = s, h(t) = u | X)`.
#[derive(Debug, Clone)]
pub struct StatePosteriors {
    pub log_likelihood: f64,
    pub gamma: Array2<f64>,
    pub xi: Array3<f64>,
}

pub(crate) fn check_probability_vector(v: ArrayView1<f64>, what: &str) -> Result<()> {
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let sum = v.sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidParameter(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Draws an index from a probability vector using one uniform variate.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: ArrayView1<f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

impl GaussianHmm {
    /// Builds a model after validating shapes and normalization. Variances
    /// below [`VARIANCE_FLOOR`] are raised to it; non-positive variances are
    /// rejected.
    pub fn new(
        initial: Array1<f64>,
        transition: Array2<f64>,
        means: Array2<f64>,
        mut variances: Array2<f64>,
    ) -> Result<Self> {
        let s = initial.len();
        if s == 0 {
            return Err(Error::InvalidParameter("HMM needs at least one state".into()));
        }
        if transition.dim() != (s, s) {
            return Err(Error::Dimension(format!(
                "transition is {:?}, expected ({s}, {s})",
                transition.dim()
            )));
        }
        let d = means.ncols();
        if d == 0 || means.nrows() != s {
            return Err(Error::Dimension(format!(
                "means is {:?}, expected ({s}, D>0)",
                means.dim()
            )));
        }
        if variances.dim() != means.dim() {
            return Err(Error::Dimension(format!(
                "variances is {:?}, means is {:?}",
                variances.dim(),
                means.dim()
            )));
        }
        check_probability_vector(initial.view(), "initial distribution")?;
        for (i, row) in transition.outer_iter().enumerate() {
            check_probability_vector(row, &format!("transition row {i}"))?;
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("emission means".into()));
        }
        if variances.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParameter(
                "emission variances must be finite and positive".into(),
            ));
        }
        variances.mapv_inplace(|v| v.max(VARIANCE_FLOOR));
        Ok(Self {
            initial,
            transition,
            means,
            variances,
        })
    }

    /// Uniform initial and transition probabilities with the given emissions.
    pub fn with_uniform_dynamics(means: Array2<f64>, variances: Array2<f64>) -> Result<Self> {
        let s = means.nrows();
        if s == 0 {
            return Err(Error::InvalidParameter("HMM needs at least one state".into()));
        }
        let p = 1.0 / s as f64;
        Self::new(Array1::from_elem(s, p), Array2::from_elem((s, s), p), means, variances)
    }

    pub fn num_states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    pub fn transition(&self) -> &Array2<f64> {
        &self.transition
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Array2<f64> {
        &self.variances
    }

    pub(crate) fn check_sequence(&self, seq: ArrayView2<f64>) -> Result<()> {
        if seq.nrows() == 0 {
            return Err(Error::Dimension("sequence must have at least one row".into()));
        }
        if seq.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "sequence has {} columns, model dimension is {}",
                seq.ncols(),
                self.dim()
            )));
        }
        if seq.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sequence".into()));
        }
        Ok(())
    }

    /// `T × S` matrix of `ln N(x(t); μ_s, diag σ²_s)`.
    pub fn emission_log_densities(&self, seq: ArrayView2<f64>) -> Array2<f64> {
        let s_count = self.num_states();
        let log_norm: Vec<f64> = self
            .variances
            .outer_iter()
            .map(|var| -0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
        let mut out = Array2::zeros((seq.nrows(), s_count));
        for (t, x) in seq.outer_iter().enumerate() {
            for s in 0..s_count {
                let mut quad = 0.0;
                for ((xd, md), vd) in x.iter().zip(self.means.row(s).iter()).zip(self.variances.row(s).iter()) {
                    let diff = xd - md;
                    quad += diff * diff / vd;
                }
                out[[t, s]] = log_norm[s] - 0.5 * quad;
            }
        }
        out
    }

    fn log_transition(&self) -> Array2<f64> {
        self.transition.mapv(ln_or_neg_inf)
    }

    /// `(T + 1) × S` forward log-messages starting from `initial`.
    fn forward(log_initial: &Array1<f64>, log_a: &Array2<f64>, emit: &Array2<f64>) -> Array2<f64> {
        let (t_len, s_count) = emit.dim();
        let mut fwd = Array2::from_elem((t_len + 1, s_count), f64::NEG_INFINITY);
        fwd.row_mut(0).assign(log_initial);
        let mut buf = vec![0.0; s_count];
        for t in 1..=t_len {
            for u in 0..s_count {
                for (s, b) in buf.iter_mut().enumerate() {
                    *b = fwd[[t - 1, s]] + log_a[[s, u]];
                }
                fwd[[t, u]] = log_sum_exp(&buf) + emit[[t - 1, u]];
            }
        }
        fwd
    }

    fn log_likelihood_impl(&self, log_initial: &Array1<f64>, seq: ArrayView2<f64>) -> Result<f64> {
        self.check_sequence(seq)?;
        let emit = self.emission_log_densities(seq);
        let log_a = self.log_transition();
        // Only the running message is needed for the likelihood.
        let s_count = self.num_states();
        let mut prev = log_initial.to_vec();
        let mut next = vec![0.0; s_count];
        let mut buf = vec![0.0; s_count];
        for e in emit.outer_iter() {
            for u in 0..s_count {
                for s in 0..s_count {
                    buf[s] = prev[s] + log_a[[s, u]];
                }
                next[u] = log_sum_exp(&buf) + e[u];
            }
            std::mem::swap(&mut prev, &mut next);
        }
        Ok(log_sum_exp(&prev))
    }

    /// `ln p(X | model)` via the forward recursion.
    pub fn log_likelihood(&self, seq: ArrayView2<f64>) -> Result<f64> {
        self.log_likelihood_impl(&self.initial.mapv(ln_or_neg_inf), seq)
    }

    /// Same as [`log_likelihood`](Self::log_likelihood) with `initial`
    /// substituted for the model's own initial distribution.
    pub fn log_likelihood_from(&self, initial: ArrayView1<f64>, seq: ArrayView2<f64>) -> Result<f64> {
        if initial.len() != self.num_states() {
            return Err(Error::Dimension(format!(
                "initial distribution has {} entries, model has {} states",
                initial.len(),
                self.num_states()
            )));
        }
        self.log_likelihood_impl(&initial.mapv(ln_or_neg_inf), seq)
    }

    /// State and transition posteriors via forward-backward.
    pub fn posteriors(&self, seq: ArrayView2<f64>) -> Result<StatePosteriors> {
        self.posteriors_if_possible(seq)?
            .ok_or_else(|| Error::NonFinite("sequence log-likelihood".into()))
    }

    /// Like `posteriors`, but `None` when the sequence has zero likelihood.
    pub(crate) fn posteriors_if_possible(&self, seq: ArrayView2<f64>) -> Result<Option<StatePosteriors>> {
        self.check_sequence(seq)?;
        let emit = self.emission_log_densities(seq);
        let log_a = self.log_transition();
        let log_init = self.initial.mapv(ln_or_neg_inf);
        let fwd = Self::forward(&log_init, &log_a, &emit);
        let (t_len, s_count) = emit.dim();
        let ll = log_sum_exp(fwd.row(t_len).as_slice().expect("contiguous row"));
        if !ll.is_finite() {
            return Ok(None);
        }

        let mut bwd = Array2::zeros((t_len + 1, s_count));
        let mut buf = vec![0.0; s_count];
        for t in (1..=t_len).rev() {
            for s in 0..s_count {
                for (u, b) in buf.iter_mut().enumerate() {
                    *b = log_a[[s, u]] + emit[[t - 1, u]] + bwd[[t, u]];
                }
                bwd[[t - 1, s]] = log_sum_exp(&buf);
            }
        }

        let gamma = (&fwd + &bwd).mapv(|v| (v - ll).exp());
        let mut xi = Array3::zeros((t_len, s_count, s_count));
        for t in 1..=t_len {
            for s in 0..s_count {
                let a = fwd[[t - 1, s]];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                for u in 0..s_count {
                    let v = a + log_a[[s, u]] + emit[[t - 1, u]] + bwd[[t, u]] - ll;
                    xi[[t - 1, s, u]] = v.exp();
                }
            }
        }
        Ok(Some(StatePosteriors {
            log_likelihood: ll,
            gamma,
            xi,
        }))
    }

    /// Ancestral sample of `length` observations, deterministic in `seed`.
    pub fn sample(&self, length: usize, seed: u64) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, length, None)
    }

    /// Ancestral sampling from a caller-supplied generator. `initial`, when
    /// given, replaces the distribution of `h(0)`.
    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        length: usize,
        initial: Option<ArrayView1<f64>>,
    ) -> Result<Array2<f64>> {
        if length == 0 {
            return Err(Error::InvalidParameter("sample length must be >= 1".into()));
        }
        let init = initial.unwrap_or_else(|| self.initial.view());
        if init.len() != self.num_states() {
            return Err(Error::Dimension("initial distribution length".into()));
        }
        let d = self.dim();
        let mut out = Array2::zeros((length, d));
        let mut state = sample_categorical(rng, init);
        for mut row in out.outer_iter_mut() {
            state = sample_categorical(rng, self.transition.row(state));
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                row[j] = self.means[[state, j]] + self.variances[[state, j]].sqrt() * z;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn standard_normal_1d() -> GaussianHmm {
        GaussianHmm::new(array![1.0], array![[1.0]], array![[0.0]], array![[1.0]]).unwrap()
    }

    #[test]
    fn single_state_standard_normal() {
        let ll = standard_normal_1d()
            .log_likelihood(array![[0.0], [0.0]].view())
            .unwrap();
        assert!((ll - (-1.837_877_066_4)).abs() < 1e-9);
    }

    #[test]
    fn identical_states_collapse_to_single_state() {
        let two = GaussianHmm::new(
            array![0.3, 0.7],
            array![[0.9, 0.1], [0.4, 0.6]],
            array![[0.0], [0.0]],
            array![[1.0], [1.0]],
        )
        .unwrap();
        let seq = array![[0.5], [-1.2], [2.0]];
        let a = two.log_likelihood(seq.view()).unwrap();
        let b = standard_normal_1d().log_likelihood(seq.view()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_state_posteriors_are_one() {
        let post = standard_normal_1d()
            .posteriors(array![[0.1], [0.3], [-0.2]].view())
            .unwrap();
        assert_eq!(post.gamma.dim(), (4, 1));
        assert_eq!(post.xi.dim(), (3, 1, 1));
        assert!(post.gamma.iter().all(|g| (g - 1.0).abs() < 1e-12));
        assert!(post.xi.iter().all(|g| (g - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_input() {
        let hmm = standard_normal_1d();
        assert!(matches!(
            hmm.log_likelihood(array![[0.0, 1.0]].view()),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            hmm.log_likelihood(array![[f64::NAN]].view()),
            Err(Error::NonFinite(_))
        ));
        assert!(hmm.log_likelihood(Array2::zeros((0, 1)).view()).is_err());
        assert!(GaussianHmm::new(
            array![0.5, 0.6],
            array![[1.0, 0.0], [0.0, 1.0]],
            array![[0.0], [0.0]],
            array![[1.0], [1.0]]
        )
        .is_err());
        assert!(GaussianHmm::new(array![1.0], array![[1.0]], array![[0.0]], array![[0.0]]).is_err());
    }

    #[test]
    fn variance_floor_applied() {
        let hmm = GaussianHmm::new(array![1.0], array![[1.0]], array![[0.0]], array![[1e-9]]).unwrap();
        assert_eq!(hmm.variances()[[0, 0]], VARIANCE_FLOOR);
    }

    #[test]
    fn zero_transitions_stay_zero_in_posteriors() {
        let hmm = GaussianHmm::new(
            array![1.0, 0.0],
            array![[0.0, 1.0], [1.0, 0.0]],
            array![[0.0], [3.0]],
            array![[1.0], [1.0]],
        )
        .unwrap();
        let post = hmm.posteriors(array![[3.0], [0.0], [3.0]].view()).unwrap();
        for t in 0..3 {
            for s in 0..2 {
                assert_eq!(post.xi[[t, s, s]], 0.0);
            }
        }
        assert_eq!(post.gamma[[0, 1]], 0.0);
    }

    #[test]
    fn sample_shape_and_determinism() {
        let hmm = GaussianHmm::new(
            array![0.5, 0.5],
            array![[0.8, 0.2], [0.3, 0.7]],
            array![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]],
            array![[1.0, 1.0, 1.0], [0.5, 0.5, 0.5]],
        )
        .unwrap();
        let a = hmm.sample(5, 42).unwrap();
        assert_eq!(a.dim(), (5, 3));
        assert_eq!(a, hmm.sample(5, 42).unwrap());
        assert_ne!(a, hmm.sample(5, 43).unwrap());
        assert!(hmm.sample(0, 1).is_err());
    }

    #[test]
    fn sample_mean_matches_emission_mean() {
        let hmm = GaussianHmm::new(array![1.0], array![[1.0]], array![[2.0]], array![[0.25]]).unwrap();
        let xs = hmm.sample(10_000, 7).unwrap();
        let mean = xs.mean().unwrap();
        assert!((1.97..=2.03).contains(&mean), "mean {mean}");
    }
}
