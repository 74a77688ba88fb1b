//! Laplace transforms, the abscissa of convergence, exponential tilting and the
//! integrated-tail transform.

use serde::{Deserialize, Serialize};

use crate::dist::{
    build_atomic, build_grid, log_cell_integral, make_parametric, Distribution, Family, GridSpec, Repr, Tilted,
};
use crate::error::{Error, Result};
use crate::extended::ExtendedReal;
use crate::logspace::{log1m_exp, log_add_exp, log_sum_exp, LogSum};
use crate::quadrature::{integrate_log, QuadConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    NumericFit,
}

/// `γ̂ = sup{γ : φ(γ) < ∞}` and `φ(γ̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceSummary {
    pub gamma_hat: ExtendedReal,
    pub phi_at_gamma_hat: ExtendedReal,
    pub method: Method,
    /// `(lo, hi, r²)` of the least-squares fit, numeric estimates only.
    pub fit_window: Option<(f64, f64, f64)>,
}

impl LaplaceSummary {
    pub fn is_heavy(&self) -> bool {
        self.gamma_hat == ExtendedReal::ZERO
    }

    fn closed(gamma_hat: ExtendedReal, phi: ExtendedReal) -> Self {
        LaplaceSummary {
            gamma_hat,
            phi_at_gamma_hat: phi,
            method: Method::ClosedForm,
            fit_window: None,
        }
    }

    /// Summary of `(F̄(x−1) + F̄(x))/2`: same abscissa, `φ` scaled by `(1 + e^{γ̂})/2`.
    pub(crate) fn shift_mixture(&self) -> Self {
        let phi = match (self.gamma_hat, self.phi_at_gamma_hat) {
            (ExtendedReal::Finite(g), ExtendedReal::Finite(p)) => ExtendedReal::new(p * (1.0 + g.exp()) / 2.0),
            _ => ExtendedReal::Infinite,
        };
        LaplaceSummary {
            phi_at_gamma_hat: phi,
            ..*self
        }
    }
}

/// `φ(γ)` with a bound on the part not represented by finite data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceValue {
    pub value: ExtendedReal,
    /// Upper bound on the omitted contribution (truncated atoms, mass past a grid).
    pub remainder: f64,
    pub method: Method,
}

impl LaplaceValue {
    fn exact(v: f64) -> Self {
        LaplaceValue {
            value: ExtendedReal::new(v),
            remainder: 0.0,
            method: Method::ClosedForm,
        }
    }
    fn infinite(method: Method) -> Self {
        LaplaceValue {
            value: ExtendedReal::Infinite,
            remainder: 0.0,
            method,
        }
    }
}

/// `φ(γ) = ∫ e^{γx} F(dx)`.
pub fn laplace(f: &Distribution, gamma: f64) -> ExtendedReal {
    laplace_detail(f, gamma).value
}

pub fn laplace_detail(f: &Distribution, gamma: f64) -> LaplaceValue {
    if gamma == 0.0 {
        return LaplaceValue::exact(1.0);
    }
    match f.repr() {
        Repr::Parametric(fam) => match *fam {
            Family::Exponential { alpha } if gamma < alpha => LaplaceValue::exact(alpha / (alpha - gamma)),
            Family::Exponential { .. } => LaplaceValue::infinite(Method::ClosedForm),
            Family::Pareto { .. } | Family::Weibull { .. } if gamma > 0.0 => {
                LaplaceValue::infinite(Method::ClosedForm)
            }
            Family::SlowvaryExp { alpha, .. } if gamma > alpha => LaplaceValue::infinite(Method::ClosedForm),
            _ => tail_laplace(f, gamma),
        },
        Repr::Atomic(a) => {
            let contrib: Vec<f64> = a
                .points()
                .iter()
                .zip(a.log_masses())
                .map(|(&x, &m)| m + gamma * x)
                .collect();
            let total = log_sum_exp(&contrib);
            if a.truncation().is_none() {
                return LaplaceValue::exact(total.exp());
            }
            if let Some(d) = a.declared() {
                let beyond = match d.gamma_hat {
                    ExtendedReal::Infinite => false,
                    ExtendedReal::Finite(g) => gamma > g || (gamma == g && !d.phi_at_gamma_hat.is_finite()),
                };
                if beyond {
                    return LaplaceValue::infinite(Method::ClosedForm);
                }
            }
            finite_or_geometric(&contrib, total, 0.0)
        }
        Repr::Grid(g) => {
            let lt = g.log_tail();
            let h = g.dx();
            let contrib: Vec<f64> = (0..lt.len() - 1)
                .map(|k| log_cell_laplace(lt[k], lt[k + 1], h, gamma, k as f64 * h))
                .collect();
            let total = log_sum_exp(&contrib);
            if lt.last().copied() == Some(f64::NEG_INFINITY) {
                return LaplaceValue {
                    value: ExtendedReal::from_ln(total),
                    remainder: 0.0,
                    method: Method::NumericFit,
                };
            }
            finite_or_geometric(&contrib, total, 0.0)
        }
        Repr::ShiftMixture(b) => {
            let inner = laplace_detail(b, gamma);
            let k = (1.0 + gamma.exp()) / 2.0;
            LaplaceValue {
                value: inner.value * ExtendedReal::new(k),
                remainder: inner.remainder * k,
                method: inner.method,
            }
        }
        Repr::Tilted(t) => {
            let total = t.gamma() + gamma;
            match t.base().shape() {
                Some(s) => {
                    let finite = match s.rate {
                        ExtendedReal::Infinite => true,
                        ExtendedReal::Finite(r) => total < r || (total == r && s.poly > 1.0 && !s.stretched),
                    };
                    if finite {
                        tail_laplace(f, gamma)
                    } else {
                        LaplaceValue::infinite(Method::ClosedForm)
                    }
                }
                None => tail_laplace(f, gamma),
            }
        }
    }
}

/// `ln ∫_{cell} e^{γy} F(dy)` for a log-linear cell `[x0, x0+h]` with end values `a`, `b`.
pub(crate) fn log_cell_laplace(a: f64, b: f64, h: f64, gamma: f64, x0: f64) -> f64 {
    if a == f64::NEG_INFINITY || b >= a {
        return f64::NEG_INFINITY;
    }
    if b == f64::NEG_INFINITY {
        // the whole remaining mass e^a sits in the cell
        return a + gamma.max(0.0) * h + gamma * x0;
    }
    // density λ e^{a} e^{-λ t}, λ = (a-b)/h: ∫_0^h e^{γ(x0+t)} λ e^{a-λt} dt
    let lambda = (a - b) / h;
    let r = gamma - lambda;
    let integral = if (r * h).abs() < 1e-12 {
        h.ln()
    } else {
        ((r * h).exp_m1() / r).ln()
    };
    a + gamma * x0 + lambda.ln() + integral
}

/// Finiteness test on per-atom (per-cell) contributions: infinite when they are
/// non-decreasing over the last quarter, otherwise a geometric majorant bounds
/// what lies beyond the data.
fn finite_or_geometric(contrib: &[f64], total: f64, _floor: f64) -> LaplaceValue {
    let tail: Vec<f64> = contrib
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .collect();
    let n = tail.len();
    if n < 2 {
        return LaplaceValue {
            value: ExtendedReal::from_ln(total),
            remainder: 0.0,
            method: Method::NumericFit,
        };
    }
    let q = (n / 4).max(2);
    let window = &tail[n - q..];
    let mut max_log_ratio = f64::NEG_INFINITY;
    for w in window.windows(2) {
        max_log_ratio = max_log_ratio.max(w[1] - w[0]);
    }
    if max_log_ratio >= -1e-9 {
        return LaplaceValue::infinite(Method::NumericFit);
    }
    let last = window[q - 1];
    // Σ_{k≥1} last·r^k = last·r/(1−r)
    let log_rem = last + max_log_ratio - log1m_exp(max_log_ratio);
    LaplaceValue {
        value: ExtendedReal::from_ln(total),
        remainder: log_rem.exp(),
        method: Method::NumericFit,
    }
}

/// `φ(γ) = 1 + γ ∫_0^∞ e^{γx} F̄(x) dx` by quadrature over the tail.
fn tail_laplace(f: &Distribution, gamma: f64) -> LaplaceValue {
    let cfg = QuadConfig::default();
    let (l, rel, ok) = integrate_log(
        |x| gamma * x + f.log_tail(x).unwrap_or(f64::NEG_INFINITY),
        0.0,
        f64::INFINITY,
        &cfg,
    );
    if !ok || !l.is_finite() {
        return LaplaceValue::infinite(Method::ClosedForm);
    }
    let integral = l.exp();
    let v = 1.0 + gamma * integral;
    LaplaceValue {
        value: ExtendedReal::new(v.max(0.0)),
        remainder: (gamma * integral * rel).abs(),
        method: Method::ClosedForm,
    }
}

/// Abscissa of convergence with the default fit window (last decade of the data).
pub fn gamma_hat(f: &Distribution) -> LaplaceSummary {
    gamma_hat_with_window(f, None)
}

/// As [`gamma_hat`]; `window = (lo, hi)` overrides the numeric fit range.
pub fn gamma_hat_with_window(f: &Distribution, window: Option<(f64, f64)>) -> LaplaceSummary {
    let fin = ExtendedReal::new;
    match f.repr() {
        Repr::Parametric(fam) => match *fam {
            Family::Pareto { .. } | Family::Weibull { .. } => LaplaceSummary::closed(ExtendedReal::ZERO, ExtendedReal::ONE),
            Family::Exponential { alpha } => LaplaceSummary::closed(fin(alpha), ExtendedReal::Infinite),
            Family::WeibullSq { .. } => LaplaceSummary::closed(ExtendedReal::Infinite, ExtendedReal::Infinite),
            Family::SlowvaryExp { alpha, .. } => LaplaceSummary::closed(fin(alpha), laplace(f, alpha)),
        },
        Repr::Atomic(a) if a.declared().is_some() && window.is_none() => *a.declared().expect("checked"),
        Repr::ShiftMixture(b) => {
            let s = gamma_hat_with_window(b, window);
            if s.method == Method::ClosedForm {
                s.shift_mixture()
            } else {
                numeric_gamma_hat(f, window)
            }
        }
        Repr::Tilted(t) => {
            let s = gamma_hat_with_window(t.base(), window);
            match s.gamma_hat {
                ExtendedReal::Infinite => s,
                ExtendedReal::Finite(g) => {
                    let phi = match s.phi_at_gamma_hat {
                        ExtendedReal::Finite(p) => fin(p / t.log_phi().exp()),
                        ExtendedReal::Infinite => ExtendedReal::Infinite,
                    };
                    LaplaceSummary {
                        gamma_hat: fin((g - t.gamma()).max(0.0)),
                        phi_at_gamma_hat: phi,
                        ..s
                    }
                }
            }
        }
        _ => numeric_gamma_hat(f, window),
    }
}

/// Least-squares slope of `-ln F̄(x)` against `x` over the window.
fn numeric_gamma_hat(f: &Distribution, window: Option<(f64, f64)>) -> LaplaceSummary {
    let (xs, ys): (Vec<f64>, Vec<f64>) = match f.repr() {
        Repr::Atomic(a) => {
            let top = *a.points().last().expect("nonempty");
            let (lo, hi) = window.unwrap_or((top / 10.0, top));
            // tail just below each atom: P(ξ ≥ x_i)
            a.points()
                .iter()
                .enumerate()
                .filter(|(_, &p)| p >= lo && p <= hi && p > 0.0)
                .map(|(i, &p)| {
                    let lt = if i == 0 { 0.0 } else { f.log_tail(a.points()[i - 1]).unwrap_or(0.0) };
                    (p, -lt)
                })
                .unzip()
        }
        _ => {
            let top = f.max_x();
            let top = if top.is_finite() { top } else { 1000.0 };
            let (lo, hi) = window.unwrap_or((top / 10.0, top));
            (0..=64)
                .map(|i| lo + (hi - lo) * i as f64 / 64.0)
                .filter_map(|x| f.log_tail(x).ok().filter(|v| v.is_finite()).map(|v| (x, -v)))
                .unzip()
        }
    };
    let n = xs.len();
    if n < 2 {
        return LaplaceSummary {
            gamma_hat: ExtendedReal::ZERO,
            phi_at_gamma_hat: ExtendedReal::ONE,
            method: Method::NumericFit,
            fit_window: None,
        };
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if sxx > 0.0 && syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    let g = slope.max(0.0);
    let gamma_hat = if g.is_finite() { ExtendedReal::new(g) } else { ExtendedReal::Infinite };
    let phi = if g.is_finite() { laplace(f, g) } else { ExtendedReal::Infinite };
    LaplaceSummary {
        gamma_hat,
        phi_at_gamma_hat: phi,
        method: Method::NumericFit,
        fit_window: Some((xs[0], xs[n - 1], r2)),
    }
}

/// Exponential change of measure `G(du) = e^{γu} F(du) / φ(γ)`.
pub fn exp_tilt(f: &Distribution, gamma: f64) -> Result<Distribution> {
    if gamma == 0.0 {
        return Ok(f.clone());
    }
    let lv = laplace_detail(f, gamma);
    let phi = match lv.value {
        ExtendedReal::Finite(p) if p > 0.0 => p,
        _ => return Err(Error::InfiniteTransform(gamma)),
    };
    match f.repr() {
        Repr::Parametric(Family::Exponential { alpha }) => make_parametric("exponential", &[alpha - gamma]),
        Repr::Atomic(a) => {
            let lms: Vec<f64> = a
                .points()
                .iter()
                .zip(a.log_masses())
                .map(|(&x, &m)| m + gamma * x)
                .collect();
            let declared = a.declared().map(|d| {
                let g = match d.gamma_hat {
                    ExtendedReal::Finite(v) => ExtendedReal::new((v - gamma).max(0.0)),
                    inf => inf,
                };
                let p = match d.phi_at_gamma_hat {
                    ExtendedReal::Finite(v) => ExtendedReal::new(v / phi),
                    inf => inf,
                };
                LaplaceSummary {
                    gamma_hat: g,
                    phi_at_gamma_hat: p,
                    ..*d
                }
            });
            let truncation = a.truncation().map(|_| crate::dist::Truncation {
                log_neglected_mass: None,
            });
            build_atomic(a.points().to_vec(), lms, truncation, declared, false)
        }
        Repr::Grid(g) => {
            let lt = g.log_tail();
            let h = g.dx();
            let cells: Vec<f64> = (0..lt.len() - 1)
                .map(|k| log_cell_laplace(lt[k], lt[k + 1], h, gamma, k as f64 * h))
                .collect();
            let mut suffix = vec![0.0; lt.len()];
            let mut acc = if lv.remainder > 0.0 { lv.remainder.ln() } else { f64::NEG_INFINITY };
            suffix[lt.len() - 1] = acc;
            for k in (0..lt.len() - 1).rev() {
                acc = log_add_exp(cells[k], acc);
                suffix[k] = acc;
            }
            let norm = suffix[0];
            let mut out: Vec<f64> = suffix.iter().map(|s| s - norm).collect();
            out[0] = 0.0;
            for k in 1..out.len() {
                out[k] = out[k].min(out[k - 1]);
            }
            build_grid(h, out, None)
        }
        Repr::Tilted(t) => {
            let total = t.gamma() + gamma;
            let base = t.base().clone();
            if total == 0.0 {
                return Ok(base);
            }
            exp_tilt(&base, total)
        }
        Repr::Parametric(_) | Repr::ShiftMixture(_) => Ok(Distribution::from_repr(Repr::Tilted(Tilted::new(
            f.clone(),
            gamma,
            phi.ln(),
        )))),
    }
}

/// Integrated-tail distribution with density `F̄(x)/a`.
///
/// Families closed under the transform stay parametric; everything else is
/// tabulated on `grid`.
pub fn integrated_tail(f: &Distribution, grid: GridSpec) -> Result<Distribution> {
    let md = f.mean_detail().clone();
    let a = match md.value {
        ExtendedReal::Finite(a) => a,
        ExtendedReal::Infinite => return Err(Error::InfiniteMean),
    };
    match f.repr() {
        Repr::Parametric(Family::Exponential { alpha }) => return make_parametric("exponential", &[*alpha]),
        Repr::Parametric(Family::Pareto { beta }) => return make_parametric("pareto", &[*beta - 1.0]),
        _ => {}
    }
    let n = grid.len();
    let dx = grid.dx;
    let upper = dx * (n - 1) as f64;
    if upper > f.max_x() * (1.0 + 1e-12) {
        return Err(Error::OutOfRange { x: upper, max: f.max_x() });
    }
    let cfg = QuadConfig::default();
    // ∫_upper^∞ F̄
    let log_far = match f.repr() {
        Repr::Grid(g) => {
            let lt = g.log_tail();
            let mut body = LogSum::new();
            for k in 0..lt.len() - 1 {
                body.add(log_cell_integral(lt[k], lt[k + 1], g.dx()));
            }
            let rem = (a - body.value().exp()).max(0.0);
            if rem > 0.0 {
                rem.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        _ => {
            integrate_log(
                |x| f.log_tail(x).unwrap_or(f64::NEG_INFINITY),
                upper,
                f64::INFINITY,
                &cfg,
            )
            .0
        }
    };
    let mut cells = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let (x0, x1) = (k as f64 * dx, (k + 1) as f64 * dx);
        let c = match f.repr() {
            Repr::Grid(_) => log_cell_integral(f.log_tail(x0)?, f.log_tail(x1)?, dx),
            Repr::Atomic(_) => {
                // piecewise constant on the cell except at atoms; integrate exactly
                atomic_cell_integral(f, x0, x1)
            }
            _ => integrate_log(|x| f.log_tail(x).unwrap_or(f64::NEG_INFINITY), x0, x1, &cfg).0,
        };
        cells.push(c);
    }
    let mut lt = vec![0.0; n];
    let mut acc = log_far;
    lt[n - 1] = acc;
    for k in (0..n - 1).rev() {
        acc = log_add_exp(cells[k], acc);
        lt[k] = acc;
    }
    let la = a.ln();
    let mut out: Vec<f64> = lt.iter().map(|v| v - la).collect();
    out[0] = 0.0;
    for k in 1..n {
        out[k] = out[k].min(out[k - 1]);
    }
    build_grid(dx, out, None)
}

fn atomic_cell_integral(f: &Distribution, x0: f64, x1: f64) -> f64 {
    let a = f.as_atomic().expect("atomic");
    let mut acc = LogSum::new();
    let mut left = x0;
    for &p in a.points().iter().filter(|&&p| p > x0 && p < x1) {
        acc.add(f.log_tail(left).unwrap_or(f64::NEG_INFINITY) + (p - left).ln());
        left = p;
    }
    acc.add(f.log_tail(left).unwrap_or(f64::NEG_INFINITY) + (x1 - left).ln());
    acc.value()
}
