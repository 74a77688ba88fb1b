//! Tail-ratio curves `x ↦ F̄*F̄(x) / F̄(x)` and friends.

use rayon::prelude::*;
use serde::Serialize;

use super::{format_real, AnalysisConfig};
use crate::convolve::{conv_tail_at_with, stopped_sum_with, ConvConfig, StoppingTimePmf, TailBracket};
use crate::dist::{sample_to_grid, Distribution, GridSpec, Repr};
use crate::error::{Error, Result};
use crate::logspace::log_add_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    /// `F*F` against `F̄`.
    SelfConv,
    /// `F1*F2` against `F̄1 + F̄2`.
    Pair,
    /// `F^{*τ}` against `F̄`.
    Stopped,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioCurve {
    pub xs: Vec<f64>,
    pub log_tail_base: Vec<f64>,
    pub log_tail_conv: Vec<f64>,
    /// Relative width of the quadrature bracket on the convolution tail.
    pub bracket: Vec<f64>,
    pub ratio: Vec<f64>,
    pub log_ratio: Vec<f64>,
    /// Prefix minimum of `ratio`.
    pub running_min: Vec<f64>,
    pub horizon: f64,
    pub mode: CurveMode,
}

impl RatioCurve {
    fn assemble(xs: Vec<f64>, base: Vec<f64>, conv: Vec<TailBracket>, horizon: f64, mode: CurveMode) -> Self {
        let log_ratio: Vec<f64> = conv.iter().zip(&base).map(|(c, b)| c.log_tail - b).collect();
        let ratio: Vec<f64> = log_ratio.iter().map(|l| l.exp()).collect();
        let mut running_min = Vec::with_capacity(ratio.len());
        let mut m = f64::INFINITY;
        for &r in &ratio {
            m = m.min(r);
            running_min.push(m);
        }
        RatioCurve {
            xs,
            log_tail_base: base,
            log_tail_conv: conv.iter().map(|c| c.log_tail).collect(),
            bracket: conv.iter().map(|c| c.rel_width()).collect(),
            ratio,
            log_ratio,
            running_min,
            horizon,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Running minimum at the last point, or `inf` for an empty curve.
    pub fn final_running_min(&self) -> f64 {
        self.running_min.last().copied().unwrap_or(f64::INFINITY)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,log_tail_base,log_tail_conv,bracket,ratio,running_min\n");
        for i in 0..self.len() {
            let row = [
                self.xs[i],
                self.log_tail_base[i],
                self.log_tail_conv[i],
                self.bracket[i],
                self.ratio[i],
                self.running_min[i],
            ];
            let cells: Vec<String> = row.iter().map(|v| format_real(*v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Horizon clipped to where the representation still speaks about the tail.
pub(crate) fn classification_horizon(f: &Distribution, horizon: f64) -> Result<f64> {
    match f.classification_limit() {
        None => Err(Error::Precondition(
            "support is bounded; tail classes need unbounded support".into(),
        )),
        Some(l) => Ok(horizon.min(l).min(f.max_x())),
    }
}

/// Horizon for plain curves: bounded supports are cut at their last point.
fn curve_horizon(f: &Distribution, horizon: f64) -> f64 {
    match (f.classification_limit(), f.as_atomic()) {
        (Some(l), _) => horizon.min(l).min(f.max_x()),
        (None, Some(a)) => horizon.min(*a.points().last().expect("nonempty")),
        (None, None) => horizon.min(f.max_x()),
    }
}

/// Midpoints of consecutive points inside `[lo, hi)`; all of `[0, hi)` when
/// nothing falls past `lo`.
fn midpoints(pts: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mids = |lo: f64| -> Vec<f64> {
        pts.windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .filter(|m| *m >= lo && *m < hi)
            .collect()
    };
    let v = mids(lo);
    if v.is_empty() {
        mids(0.0)
    } else {
        v
    }
}

/// First abscissa where `F̄ ≤ tol`, so the curve skips the uninformative body.
pub(crate) fn start_point(f: &Distribution, horizon: f64, tol: f64) -> Result<f64> {
    let fallback = horizon / 100.0;
    if let Some(a) = f.as_atomic() {
        for &p in a.points() {
            if p >= horizon {
                break;
            }
            if f.tail(p)? <= tol {
                return Ok(p);
            }
        }
        return Ok(fallback);
    }
    if f.tail(horizon)? > tol {
        return Ok(fallback);
    }
    let (mut lo, mut hi) = (0.0, horizon);
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        if f.tail(m)? <= tol {
            hi = m;
        } else {
            lo = m;
        }
    }
    Ok(hi)
}

pub(crate) fn geometric(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 || a >= b {
        return vec![b];
    }
    let a = a.max(b * 1e-9);
    let r = (b / a).ln() / (n - 1) as f64;
    let mut xs: Vec<f64> = (0..n).map(|i| a * (r * i as f64).exp()).collect();
    xs[n - 1] = b;
    xs
}

/// Midpoints between consecutive support points of `F1*F2` inside `[lo, hi)`.
fn sum_midpoints(f1: &Distribution, f2: &Distribution, lo: f64, hi: f64, cfg: &ConvConfig) -> Result<Vec<f64>> {
    let (a, b) = match (f1.as_atomic(), f2.as_atomic()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Precondition("midpoints need two atomic inputs".into())),
    };
    let needed = a.len() * b.len();
    if needed > cfg.atom_budget {
        return Err(Error::Budget {
            name: "atom_budget",
            needed,
            limit: cfg.atom_budget,
        });
    }
    let mut sums: Vec<f64> = a
        .points()
        .iter()
        .flat_map(|p| b.points().iter().map(move |q| p + q))
        .collect();
    sums.sort_by(f64::total_cmp);
    sums.dedup();
    Ok(midpoints(&sums, lo, hi))
}

/// Convolution tail at `x`, loosening the bracket tolerance when the refinement cap bites.
///
/// Steep log-slopes (e.g. Gaussian-like tails) make a tight bracket
/// unaffordable; the estimate is still returned, with its honest width.
pub(crate) fn conv_point(f: &Distribution, g: &Distribution, x: f64, cfg: &ConvConfig) -> Result<TailBracket> {
    let mut c = *cfg;
    loop {
        match conv_tail_at_with(f, g, x, &c) {
            Err(Error::Tolerance { .. }) if c.rel_tol < 0.5 => c.rel_tol = (c.rel_tol * 10.0).min(0.5),
            r => return r,
        }
    }
}

/// Tilted tails cost a quadrature per evaluation; tabulate them once.
pub(crate) fn fast_view(f: &Distribution, horizon: f64) -> Result<Distribution> {
    match f.repr() {
        Repr::Tilted(_) => sample_to_grid(f, (horizon / 16384.0).min(0.01), horizon),
        _ => Ok(f.clone()),
    }
}

fn eval_points(xs: &[f64], f: impl Fn(f64) -> Result<(f64, TailBracket)> + Sync) -> Result<(Vec<f64>, Vec<TailBracket>)> {
    let rows: Vec<(f64, TailBracket)> = xs.par_iter().map(|&x| f(x)).collect::<Result<_>>()?;
    Ok(rows.into_iter().unzip())
}

/// Self-convolution ratio `F̄*F̄(x) / F̄(x)` on a geometric grid up to the horizon.
///
/// Atomic inputs are sampled at midpoints between consecutive atoms of `F*F`,
/// where both tails are flat and the ratio is exact.
pub fn ratio_curve(f: &Distribution, cfg: &AnalysisConfig) -> Result<RatioCurve> {
    let h = curve_horizon(f, cfg.horizon);
    let fv = fast_view(f, h)?;
    let x0 = start_point(&fv, h, cfg.tol)?;
    let xs = if fv.is_atomic() {
        sum_midpoints(&fv, &fv, x0, h, &cfg.conv)?
    } else {
        geometric(x0, h, cfg.n_points)
    };
    let (base, conv) = eval_points(&xs, |x| Ok((fv.log_tail(x)?, conv_point(&fv, &fv, x, &cfg.conv)?)))?;
    Ok(RatioCurve::assemble(xs, base, conv, h, CurveMode::SelfConv))
}

/// `F̄1*F̄2(x) / (F̄1(x) + F̄2(x))`.
pub fn ratio_curve_pair(f1: &Distribution, f2: &Distribution, cfg: &AnalysisConfig) -> Result<RatioCurve> {
    let h = curve_horizon(f1, cfg.horizon).min(curve_horizon(f2, cfg.horizon));
    let (v1, v2) = (fast_view(f1, h)?, fast_view(f2, h)?);
    let x0 = start_point(&v1, h, cfg.tol)?.max(start_point(&v2, h, cfg.tol)?);
    let xs = if v1.is_atomic() && v2.is_atomic() {
        sum_midpoints(&v1, &v2, x0, h, &cfg.conv)?
    } else {
        geometric(x0, h, cfg.n_points)
    };
    let (base, conv) = eval_points(&xs, |x| {
        let b = log_add_exp(v1.log_tail(x)?, v2.log_tail(x)?);
        Ok((b, conv_point(&v1, &v2, x, &cfg.conv)?))
    })?;
    Ok(RatioCurve::assemble(xs, base, conv, h, CurveMode::Pair))
}

/// `P(ξ1 + … + ξτ > x) / F̄(x)` with the stopped sum tabulated on `[0, H]`.
pub fn ratio_curve_stopped(f: &Distribution, tau: &StoppingTimePmf, cfg: &AnalysisConfig) -> Result<RatioCurve> {
    let h = curve_horizon(f, cfg.horizon);
    let fv = fast_view(f, h)?;
    let mut conv = cfg.conv;
    conv.grid = GridSpec::new(h / cfg.stopped_cells.max(1) as f64, h)?;
    let s = stopped_sum_with(&fv, tau, &conv)?;
    let x0 = start_point(&fv, h, cfg.tol)?;
    let xs: Vec<f64> = match s.as_atomic() {
        Some(a) => midpoints(a.points(), x0, h),
        None => geometric(x0, h.min(s.max_x()), cfg.n_points),
    };
    let (base, conv) = eval_points(&xs, |x| {
        let l = s.log_tail(x)?;
        let (lo, hi) = match s.as_grid() {
            Some(g) => {
                let e = grid_err_at(g.log_err(), g.dx(), x);
                (l - e, l + e)
            }
            None => (l, l),
        };
        Ok((
            fv.log_tail(x)?,
            TailBracket {
                log_tail: l,
                log_lower: lo,
                log_upper: hi,
            },
        ))
    })?;
    Ok(RatioCurve::assemble(xs, base, conv, h, CurveMode::Stopped))
}

fn grid_err_at(err: Option<&[f64]>, dx: f64, x: f64) -> f64 {
    let Some(err) = err else { return 0.0 };
    let k = ((x / dx).floor() as usize).min(err.len().saturating_sub(1));
    let k1 = (k + 1).min(err.len() - 1);
    err[k].max(err[k1])
}

/// Finite-horizon proxy for `lim inf` of a ratio curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LiminfEstimate {
    /// Minimum ratio over `[w·H, H]`.
    pub value: f64,
    /// Maximum ratio over the same window, a `lim sup` proxy.
    pub limsup: f64,
    /// Minimum ratio over `[w·H/2, H/2]`.
    pub value_half: f64,
    /// The two window minima agree within 2%.
    pub converged: bool,
    pub window: (f64, f64),
    pub points: usize,
}

impl LiminfEstimate {
    /// The window minimum grew by half or more when the horizon doubled.
    pub fn diverging(&self) -> bool {
        self.value.is_infinite() || self.value >= 1.5 * self.value_half
    }
}

fn window_extrema(c: &RatioCurve, lo: f64, hi: f64) -> Option<(f64, f64, usize)> {
    let mut out: Option<(f64, f64, usize)> = None;
    for (x, r) in c.xs.iter().zip(&c.ratio) {
        if *x >= lo && *x <= hi {
            let e = out.get_or_insert((f64::INFINITY, f64::NEG_INFINITY, 0));
            e.0 = e.0.min(*r);
            e.1 = e.1.max(*r);
            e.2 += 1;
        }
    }
    out
}

pub fn liminf_estimate(curve: &RatioCurve, window: f64) -> LiminfEstimate {
    let h = curve.horizon;
    let last = curve.ratio.last().copied().unwrap_or(f64::NAN);
    let (value, limsup, points) = window_extrema(curve, window * h, h).unwrap_or((last, last, 0));
    let value_half = window_extrema(curve, window * h / 2.0, h / 2.0).map_or(f64::NAN, |e| e.0);
    let converged = if value.is_infinite() && value_half.is_infinite() {
        true
    } else {
        (value - value_half).abs() < 0.02 * value
    };
    LiminfEstimate {
        value,
        limsup,
        value_half,
        converged,
        window: (window * h, h),
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{counterexample, make_atomic, make_parametric};

    fn quick() -> AnalysisConfig {
        AnalysisConfig {
            horizon: 200.0,
            n_points: 24,
            ..Default::default()
        }
    }

    #[test]
    fn exponential_ratio_is_one_plus_x() {
        let f = make_parametric("exponential", &[1.0]).unwrap();
        let c = ratio_curve(&f, &quick()).unwrap();
        for (x, r) in c.xs.iter().zip(&c.ratio) {
            assert!((r / (1.0 + x) - 1.0).abs() < 2e-3, "x={x} r={r}");
        }
        let est = liminf_estimate(&c, 0.5);
        assert!(est.diverging());
    }

    #[test]
    fn pareto_ratio_near_two() {
        let f = make_parametric("pareto", &[2.0]).unwrap();
        let c = ratio_curve(&f, &quick()).unwrap();
        let est = liminf_estimate(&c, 0.5);
        assert!((est.value - 2.0).abs() < 0.05, "{est:?}");
        assert!(est.converged);
        assert_eq!(c.running_min.len(), c.len());
        assert!(c.running_min.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn atomic_midpoints_are_exact() {
        let f = make_atomic(&[0.0, 1.0, 3.0], &[0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()]).unwrap();
        let cfg = AnalysisConfig {
            horizon: 10.0,
            tol: 0.9,
            ..Default::default()
        };
        // bounded support: the curve stops before the last atom
        let c = ratio_curve(&f, &cfg).unwrap();
        assert!(c.xs.iter().all(|x| *x < 3.0) && !c.is_empty());
        let cx = counterexample(1, 1e-3, 6).unwrap();
        let c = ratio_curve(&cx, &AnalysisConfig { horizon: 300.0, ..cfg }).unwrap();
        let a = cx.as_atomic().unwrap();
        for (i, &x) in c.xs.iter().enumerate() {
            let mut brute = 0.0;
            let mut tail = 0.0;
            for (p, lp) in a.points().iter().zip(a.log_masses()) {
                if *p > x {
                    tail += lp.exp();
                }
                for (q, lq) in a.points().iter().zip(a.log_masses()) {
                    if p + q > x {
                        brute += (lp + lq).exp();
                    }
                }
            }
            assert!((c.ratio[i] / (brute / tail) - 1.0).abs() < 1e-12, "x={x}");
            assert_eq!(c.bracket[i], 0.0);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let f = make_parametric("pareto", &[2.0]).unwrap();
        let c = ratio_curve(&f, &AnalysisConfig { n_points: 4, ..quick() }).unwrap();
        let csv = c.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,log_tail_base,log_tail_conv,bracket,ratio,running_min");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 6);
    }
}
