//! A subadditive, sublinear `h` with `E e^{h(ξ)} ≤ 1 + δ` and `E ξ e^{h(ξ)} = ∞`,
//! built level by level for a heavy-tailed `F`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dist::{Distribution, Repr};
use crate::error::{Error, Result};
use crate::logspace::{log_add_exp, log_diff_exp, LogSum};
use crate::quadrature::{integrate_log, QuadConfig};

/// `h(x) = ε_n x` on `(x_{n−1}, x_n]`, `h(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HFunction {
    /// `x_0 = 0 < x_1 < … < x_N`
    pub breakpoints: Vec<f64>,
    /// `ε_1 > … > ε_N > 0`
    pub slopes: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct HConfig {
    /// Search for `x_{n+1}` stops at `horizon_factor · x_1`.
    pub horizon_factor: f64,
    pub max_levels: usize,
}

impl Default for HConfig {
    fn default() -> Self {
        HConfig {
            horizon_factor: 1e6,
            max_levels: 64,
        }
    }
}

pub fn construct_h(f: &Distribution, delta: f64, levels: usize) -> Result<HFunction> {
    construct_h_with(f, delta, levels, &HConfig::default())
}

pub fn construct_h_with(f: &Distribution, delta: f64, levels: usize, cfg: &HConfig) -> Result<HFunction> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::ParamRange {
            name: "delta",
            value: delta,
            expected: "0 < delta <= 1",
        });
    }
    if levels < 2 {
        return Err(Error::Precondition(format!("levels must be >= 2, got {levels}")));
    }
    if levels > cfg.max_levels {
        return Err(Error::Budget {
            name: "levels",
            needed: levels,
            limit: cfg.max_levels,
        });
    }
    let ld = delta.ln();
    let ln2 = std::f64::consts::LN_2;

    // x_1: smallest point >= 2 with F̄ < δ/2
    let x1 = first_point(f, 2.0, f64::INFINITY, |x| Ok(f.log_tail(x)? < ld - ln2), 1)?;
    // ε_1: E{e^{εξ}; ξ ≤ x_1} sits halfway between F(x_1) and 1
    let fx1 = -f.log_tail(x1)?.exp_m1();
    let target1 = (0.5 * (1.0 + fx1)).ln();
    let eps1 = solve_eps(|e| log_moment_closed(f, 0, e, x1), target1, f64::INFINITY)?;

    let horizon = cfg.horizon_factor * x1;
    let mut xs = vec![0.0, x1];
    let mut eps = vec![eps1];
    for n in 1..levels {
        let xn = xs[n];
        let en = eps[n - 1];
        let start = (2f64).powi(n as i32 + 1).max(xn);
        let tail_bound = ld - (n + 1) as f64 * ln2;
        let next = first_point(
            f,
            start,
            horizon,
            |x| Ok(x > xn && f.log_tail(x)? < tail_bound && log_moment(f, 0, en, xn, x)? >= ld),
            n + 1,
        )?;
        let target = ld - n as f64 * ln2;
        let e = solve_eps(|e| log_moment(f, 0, e, xn, next), target, en)?;
        if !(e < en && e > 0.0) {
            return Err(Error::Precondition(format!("slope at level {} is not below the previous one", n + 1)));
        }
        xs.push(next);
        eps.push(e);
    }
    Ok(HFunction {
        breakpoints: xs,
        slopes: eps,
        delta,
    })
}

/// Smallest point `≥ start` satisfying a condition that stays true once true.
///
/// Atomic inputs are scanned over their support; otherwise the search doubles
/// then bisects down to a relative resolution of `1e-12`.
fn first_point<C>(f: &Distribution, start: f64, horizon: f64, cond: C, level: usize) -> Result<f64>
where
    C: Fn(f64) -> Result<bool>,
{
    let limit = horizon.min(f.max_x());
    if let Repr::Atomic(a) = f.repr() {
        for &p in a.points().iter().filter(|&&p| p >= start && p <= limit) {
            if cond(p)? {
                return Ok(p);
            }
        }
        return Err(Error::LightTail { level, horizon: limit });
    }
    if start > limit {
        return Err(Error::LightTail { level, horizon: limit });
    }
    if cond(start)? {
        return Ok(start);
    }
    let mut lo = start;
    let mut hi = start;
    loop {
        if hi >= limit {
            return Err(Error::LightTail { level, horizon: limit });
        }
        hi = (2.0 * hi).min(limit);
        if cond(hi)? {
            break;
        }
        lo = hi;
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cond(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Bisection for `ε ∈ (0, cap)` with `ln m(ε) = target`, `m` increasing.
fn solve_eps<M>(m: M, target: f64, cap: f64) -> Result<f64>
where
    M: Fn(f64) -> Result<f64>,
{
    let mut lo = 0.0;
    let mut hi = if cap.is_finite() { cap } else { 1.0 };
    if !cap.is_finite() {
        let mut k = 0;
        while m(hi)? < target {
            lo = hi;
            hi *= 2.0;
            k += 1;
            if k > 200 {
                return Err(Error::Precondition("exponential moment does not reach its target".into()));
            }
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = m(mid)?;
        if (v - target).abs() <= 1e-13 {
            return Ok(mid);
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `ln E{ξ^k e^{εξ}; ξ ∈ [0, b]}`.
pub fn log_moment_closed(f: &Distribution, k: u32, eps: f64, b: f64) -> Result<f64> {
    let atom0 = if k == 0 {
        crate::logspace::log1m_exp(f.log_tail(0.0)?.min(0.0))
    } else {
        f64::NEG_INFINITY
    };
    Ok(log_add_exp(atom0, log_moment(f, k, eps, 0.0, b)?))
}

/// `ln E{ξ^k e^{εξ}; ξ ∈ (a, b]}`, exact for atomic inputs, by parts otherwise:
/// `φ(a)F̄(a) − φ(b)F̄(b) + ∫_a^b φ'(y) F̄(y) dy` with `φ(y) = y^k e^{εy}`.
pub fn log_moment(f: &Distribution, k: u32, eps: f64, a: f64, b: f64) -> Result<f64> {
    if b <= a {
        return Ok(f64::NEG_INFINITY);
    }
    if let Some(at) = f.as_atomic() {
        let mut acc = LogSum::new();
        for (&p, &m) in at.points().iter().zip(at.log_masses()) {
            if p > a && p <= b {
                acc.add(m + k as f64 * p.ln() + eps * p);
            }
        }
        return Ok(acc.value());
    }
    if b > f.max_x() * (1.0 + 1e-12) {
        return Err(Error::OutOfRange { x: b, max: f.max_x() });
    }
    let kf = k as f64;
    let log_phi = |y: f64| {
        if k == 0 {
            eps * y
        } else {
            kf * y.ln() + eps * y
        }
    };
    let cfg = QuadConfig::default();
    let (li, _, _) = integrate_log(
        |y| {
            let d = if k == 0 { eps.ln() } else { (kf * y.powi(k as i32 - 1) + eps * y.powi(k as i32)).ln() };
            d + eps * y + f.log_tail(y).unwrap_or(f64::NEG_INFINITY)
        },
        a,
        b,
        &cfg,
    );
    let ln_a = log_phi(a) + f.log_tail(a)?;
    let ln_b = log_phi(b) + f.log_tail(b)?;
    let pos = log_add_exp(ln_a, li);
    if ln_b >= pos {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_diff_exp(pos, ln_b))
}

/// `h(x)`; errors beyond the last breakpoint.
pub fn h_eval(h: &HFunction, x: f64) -> Result<f64> {
    let top = *h.breakpoints.last().expect("nonempty");
    if !(x >= 0.0) || x > top {
        return Err(Error::OutOfRange { x, max: top });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    // first breakpoint ≥ x closes the segment containing x
    let i = h.breakpoints.partition_point(|&b| b < x);
    Ok(h.slopes[i - 1] * x)
}

#[derive(Debug, Clone, Serialize)]
pub struct HDiagnostics {
    pub subadd_violations: usize,
    pub pairs_checked: usize,
    /// `E{e^{h(ξ)}; ξ ≤ x_N}`
    pub exp_moment: f64,
    pub exp_moment_bound: f64,
    pub exp_moment_ok: bool,
    /// `E{ξ e^{h(ξ)}; ξ ≤ x_{N'}}` for `N' = 2..N`
    pub growth: Vec<f64>,
    pub growth_ok: bool,
    pub slopes: Vec<f64>,
    pub slopes_decreasing: bool,
    pub pass: bool,
}

/// Slack on the moment bound for quadrature error.
pub const MOMENT_TOL: f64 = 1e-6;

pub fn verify_h(h: &HFunction, f: &Distribution, n_pairs: usize, seed: u64) -> Result<HDiagnostics> {
    let top = *h.breakpoints.last().expect("nonempty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for i in 0..n_pairs {
        // alternate uniform and log-uniform draws so every segment is exercised
        let x = if i % 2 == 0 {
            top * rng.random::<f64>()
        } else {
            let span = (top.ln() + 10.0).min(30.0);
            top * (-rng.random::<f64>() * span).exp()
        };
        let y = x * rng.random::<f64>();
        let hx = h_eval(h, x)?;
        let split = h_eval(h, y)? + h_eval(h, x - y)?;
        // a few ulps of slack for rounding in ε·x
        if hx > split * (1.0 + 4.0 * f64::EPSILON) {
            violations += 1;
        }
    }

    let n = h.slopes.len();
    let mut seg_exp = Vec::with_capacity(n);
    let mut seg_lin = Vec::with_capacity(n);
    for lvl in 0..n {
        let (a, b, e) = (h.breakpoints[lvl], h.breakpoints[lvl + 1], h.slopes[lvl]);
        if lvl == 0 {
            seg_exp.push(log_moment_closed(f, 0, e, b)?);
            seg_lin.push(log_moment_closed(f, 1, e, b)?);
        } else {
            seg_exp.push(log_moment(f, 0, e, a, b)?);
            seg_lin.push(log_moment(f, 1, e, a, b)?);
        }
    }
    let exp_moment = crate::logspace::log_sum_exp(&seg_exp).exp();
    let bound = 1.0 + h.delta;
    let mut growth = Vec::new();
    let mut acc = LogSum::new();
    for (lvl, &l) in seg_lin.iter().enumerate() {
        acc.add(l);
        if lvl >= 1 {
            growth.push(acc.value().exp());
        }
    }
    let growth_ok = growth
        .iter()
        .enumerate()
        .all(|(i, g)| *g >= h.delta * (i + 1) as f64 * (1.0 - 1e-9));
    let slopes_decreasing = h.slopes.windows(2).all(|w| w[1] < w[0]) && h.slopes.iter().all(|&e| e > 0.0);
    let exp_moment_ok = exp_moment <= bound + MOMENT_TOL;
    Ok(HDiagnostics {
        subadd_violations: violations,
        pairs_checked: n_pairs,
        exp_moment,
        exp_moment_bound: bound,
        exp_moment_ok,
        growth,
        growth_ok,
        slopes: h.slopes.clone(),
        slopes_decreasing,
        pass: violations == 0 && exp_moment_ok && growth_ok && slopes_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::make_parametric;

    fn pareto2() -> Distribution {
        make_parametric("pareto", &[2.0]).unwrap()
    }

    #[test]
    fn h_eval_conventions() {
        let h = HFunction {
            breakpoints: vec![0.0, 2.0, 10.0],
            slopes: vec![0.5, 0.1],
            delta: 1.0,
        };
        assert_eq!(h_eval(&h, 0.0).unwrap(), 0.0);
        assert_eq!(h_eval(&h, 1.0).unwrap(), 0.5);
        // right-closed segments
        assert_eq!(h_eval(&h, 2.0).unwrap(), 1.0);
        assert!((h_eval(&h, 3.0).unwrap() - 0.3).abs() < 1e-15);
        assert!(h_eval(&h, 10.5).is_err());
    }

    #[test]
    fn moment_matches_closed_form() {
        // E{e^{εξ}; ξ ≤ b} for Exp(1): (1 − e^{−(1−ε)b})/(1−ε)
        let e = make_parametric("exponential", &[1.0]).unwrap();
        let (eps, b) = (0.3, 4.0);
        let want = (1.0 - (-(1.0 - eps) * b as f64).exp()) / (1.0 - eps);
        let got = log_moment_closed(&e, 0, eps, b).unwrap().exp();
        assert!((got - want).abs() < 1e-12);
        // E{ξ; ξ ∈ (1, 3]} for Exp(1) = 2e^{-1} − 4e^{-3}
        let want = 2.0 * (-1f64).exp() - 4.0 * (-3f64).exp();
        assert!((log_moment(&e, 1, 0.0, 1.0, 3.0).unwrap().exp() - want).abs() < 1e-12);
    }

    #[test]
    fn pareto_construction() {
        let h = construct_h(&pareto2(), 0.5, 6).unwrap();
        assert_eq!(h.slopes.len(), 6);
        for (n, &x) in h.breakpoints.iter().enumerate().skip(1) {
            assert!(x >= 2f64.powi(n as i32));
            assert!(pareto2().tail(x).unwrap() < 0.5 / 2f64.powi(n as i32));
        }
        let d = verify_h(&h, &pareto2(), 2000, 7).unwrap();
        assert!(d.pass, "{d:?}");
        assert!(h.slopes[5] < h.slopes[0] / 2.0);
    }

    #[test]
    fn level_moments_hit_targets() {
        let f = pareto2();
        let h = construct_h(&f, 1.0, 4).unwrap();
        for n in 1..4 {
            let m = log_moment(&f, 0, h.slopes[n], h.breakpoints[n], h.breakpoints[n + 1]).unwrap().exp();
            let want = 1.0 / 2f64.powi(n as i32);
            assert!((m / want - 1.0).abs() < 1e-10, "level {n}: {m}");
        }
    }

    #[test]
    fn light_tail_rejected() {
        let e = make_parametric("exponential", &[1.0]).unwrap();
        assert!(matches!(construct_h(&e, 0.5, 6), Err(Error::LightTail { .. })));
    }
}
