//! Stable log-domain arithmetic.

/// `ln(Σ exp(x_i))`, returning `-inf` for an empty slice or when every entry
/// is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let max = a.max(b);
    max + ((a - max).exp() + (b - max).exp()).ln()
}

/// Natural log mapping exact zeros to `-inf`.
pub fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Normalizes log weights in place into probabilities. Returns the log
/// normalizer, or `None` when every weight is `-inf`.
pub fn normalize_log_weights(log_w: &mut [f64]) -> Option<f64> {
    let total = log_sum_exp(log_w);
    if total == f64::NEG_INFINITY || !total.is_finite() {
        return None;
    }
    for w in log_w.iter_mut() {
        *w = (*w - total).exp();
    }
    Some(total)
}
