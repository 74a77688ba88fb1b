//! Log-space arithmetic for probabilities that underflow `f64`.

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^a - e^b)` for `a >= b`; returns `-inf` when `a == b`.
#[inline]
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b || (a - b).abs() < 1e-12, "log_diff_exp({a}, {b})");
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    let d = b - a;
    // ln(1 - e^d), switching form at -ln 2 for accuracy
    if d > -std::f64::consts::LN_2 {
        a + (-d.exp_m1()).ln()
    } else {
        a + (-d.exp()).ln_1p()
    }
}

/// `ln(1 - e^x)` for `x <= 0`.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    log_diff_exp(0.0, x)
}

/// `ln Σ e^{x_i}` over a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut acc = LogSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Streaming log-sum-exp with a running maximum and compensated summation.
///
/// Terms are combined in the order they are added, so the result is
/// reproducible for a fixed input order.
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    max: f64,
    sum: f64,
    comp: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSum {
    pub fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            comp: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            let scale = (self.max - x).exp();
            self.sum *= scale;
            self.comp *= scale;
            self.max = x;
        }
        let y = (x - self.max).exp() - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}
