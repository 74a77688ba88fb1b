//! Membership tests for the tail classes, each returning a tri-state verdict.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};

use super::curve::{classification_horizon, geometric, liminf_estimate, ratio_curve};
use super::{AnalysisConfig, Real, Status};
use crate::convolve::{conv_atomic_with, tail_product_integral_with, ConvConfig, TailBracket};
use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::extended::ExtendedReal;
use crate::transforms::{gamma_hat, laplace_detail, Method};

/// A class whose membership can be tested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassTag {
    /// `φ(γ) = ∞` for every `γ > 0`.
    Heavy,
    Light,
    /// Long-tailed: `F̄(x+y) / F̄(x) → 1`.
    L,
    /// Subexponential: `F̄*F̄(x) / F̄(x) → 2`.
    S,
    /// `∫_0^x F̄(x−y)F̄(y)dy / F̄(x) → 2·E[ξ]`.
    SStar,
    SGamma(f64),
    SLattice(f64),
    /// `lim inf F̄(x−y) / F̄(x) ≥ e^{γy}` for all `y`.
    Condition2(f64),
}

impl ClassTag {
    /// Parses `heavy`, `light`, `L`, `S`, `S_star`, `S_gamma`, `S_lattice`
    /// and `condition2`; the last three take `γ` either inline as
    /// `S_gamma(0.5)` or from `gamma`.
    pub fn parse(s: &str, gamma: Option<f64>) -> Result<Self> {
        let s = s.trim();
        let (name, inline) = match s.find('(') {
            Some(i) if s.ends_with(')') => {
                let v = s[i + 1..s.len() - 1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Spec(format!("bad class parameter in `{s}`")))?;
                (&s[..i], Some(v))
            }
            _ => (s, None),
        };
        let g = || {
            inline
                .or(gamma)
                .ok_or_else(|| Error::Spec(format!("class `{name}` needs a gamma")))
                .and_then(|g| {
                    if g >= 0.0 {
                        Ok(g)
                    } else {
                        Err(Error::ParamRange {
                            name: "gamma",
                            value: g,
                            expected: ">= 0",
                        })
                    }
                })
        };
        Ok(match name {
            "heavy" => ClassTag::Heavy,
            "light" => ClassTag::Light,
            "L" | "long_tailed" => ClassTag::L,
            "S" | "subexponential" => ClassTag::S,
            "S_star" | "S*" => ClassTag::SStar,
            "S_gamma" => ClassTag::SGamma(g()?),
            "S_lattice" => ClassTag::SLattice(g()?),
            "condition2" => ClassTag::Condition2(g()?),
            _ => return Err(Error::Spec(format!("unknown class `{s}`"))),
        })
    }
}

impl fmt::Display for ClassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassTag::Heavy => write!(f, "heavy"),
            ClassTag::Light => write!(f, "light"),
            ClassTag::L => write!(f, "L"),
            ClassTag::S => write!(f, "S"),
            ClassTag::SStar => write!(f, "S_star"),
            ClassTag::SGamma(g) => write!(f, "S_gamma({g})"),
            ClassTag::SLattice(g) => write!(f, "S_lattice({g})"),
            ClassTag::Condition2(g) => write!(f, "condition2({g})"),
        }
    }
}

impl Serialize for ClassTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassVerdict {
    pub class_tag: ClassTag,
    pub status: Status,
    pub horizon: f64,
    pub diagnostics: BTreeMap<String, Real>,
    pub notes: Vec<String>,
}

impl ClassVerdict {
    fn new(tag: ClassTag, horizon: f64) -> Self {
        ClassVerdict {
            class_tag: tag,
            status: Status::Inconclusive,
            horizon,
            diagnostics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn diag(&mut self, k: impl Into<String>, v: f64) {
        self.diagnostics.insert(k.into(), Real(v));
    }

    fn inconclusive(mut self, note: impl Into<String>) -> Self {
        self.status = Status::Inconclusive;
        self.notes.push(note.into());
        self
    }
}

/// Evaluation points in `[w·H, H]`, plus the atom-adjacent points where ratios
/// of an atomic tail are extremal.
fn window_points(f: &Distribution, h: f64, cfg: &AnalysisConfig, offsets: &[f64]) -> Vec<f64> {
    let lo = cfg.window * h;
    let mut xs = geometric(lo, h, (cfg.n_points / 4).max(16));
    if let Some(a) = f.as_atomic() {
        let pts: Vec<f64> = a.points().iter().copied().filter(|p| *p >= lo && *p <= h).collect();
        for w in a.points().windows(2) {
            let m = 0.5 * (w[0] + w[1]);
            if m >= lo && m <= h {
                xs.push(m);
            }
        }
        for p in pts {
            xs.push(p);
            for d in offsets {
                xs.push(p + d);
            }
        }
        xs.retain(|x| *x >= lo && *x <= h);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
    }
    xs
}

fn default_ys(gamma: f64, h: f64) -> Vec<f64> {
    let mut ys = vec![1.0, 2.0];
    if gamma.is_finite() && gamma > 0.0 {
        for c in [1.5f64, 2.0, 4.0] {
            ys.push(c.ln() / gamma);
        }
    }
    ys.retain(|y| *y > 0.0 && *y <= h / 2.0);
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    ys
}

/// Range of `ln F̄(x+y) − ln F̄(x)` over `xs`, skipping points where `F̄(x) = 0`.
fn log_shift_range(f: &Distribution, xs: &[f64], y: f64) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in xs {
        if x + y < 0.0 || x + y > f.max_x() {
            continue;
        }
        let lx = f.log_tail(x)?;
        if lx == f64::NEG_INFINITY {
            continue;
        }
        let d = f.log_tail(x + y)? - lx;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok((lo, hi))
}

/// Tests `lim inf F̄(x−y)/F̄(x) ≥ e^{γy}` over the top window.
///
/// `ys` defaults to `{1, 2, ln 1.5/γ, ln 2/γ, ln 4/γ}` capped at `H/2`. For
/// `γ = ∞` the ratio must visibly diverge.
pub fn check_condition2(f: &Distribution, gamma: f64, ys: Option<&[f64]>, cfg: &AnalysisConfig) -> ClassVerdict {
    let tag = ClassTag::Condition2(gamma);
    let h = match classification_horizon(f, cfg.horizon) {
        Ok(h) => h,
        Err(e) => return ClassVerdict::new(tag, cfg.horizon).inconclusive(e.to_string()),
    };
    let mut v = ClassVerdict::new(tag, h);
    let ys = ys.map_or_else(|| default_ys(gamma, h), |y| y.to_vec());
    if ys.is_empty() {
        return v.inconclusive("horizon too short for any shift y");
    }
    let xs = window_points(f, h, cfg, &ys);
    let mut statuses = Vec::new();
    for &y in &ys {
        let top = match log_shift_range(f, &xs, -y) {
            Ok(r) => r.0,
            Err(e) => return v.inconclusive(e.to_string()),
        };
        v.diag(format!("y={y}:min_log_ratio"), top);
        if gamma.is_infinite() {
            let half: Vec<f64> = window_points(f, h / 2.0, cfg, &ys);
            let prev = log_shift_range(f, &half, -y).map_or(f64::NAN, |r| r.0);
            v.diag(format!("y={y}:min_log_ratio_half"), prev);
            statuses.push(if top.is_infinite() || (prev > 0.0 && top >= 1.5 * prev) {
                Status::Satisfied
            } else if top <= -(1.0 - cfg.tol).ln() {
                Status::Violated
            } else {
                Status::Inconclusive
            });
        } else {
            v.diag(format!("y={y}:target_log"), gamma * y);
            statuses.push(Status::at_least(top, gamma * y, cfg.tol));
        }
    }
    v.status = Status::all(statuses);
    v
}

/// Tests `F̄(x+y)/F̄(x) → 1` for `y ∈ {1, 2}` over the top window.
pub fn is_long_tailed(f: &Distribution, cfg: &AnalysisConfig) -> ClassVerdict {
    let h = match classification_horizon(f, cfg.horizon) {
        Ok(h) => h,
        Err(e) => return ClassVerdict::new(ClassTag::L, cfg.horizon).inconclusive(e.to_string()),
    };
    let mut v = ClassVerdict::new(ClassTag::L, h);
    let ys = [1.0, 2.0];
    let xs = window_points(f, h - 2.0, cfg, &[-0.5, -1.0]);
    let mut statuses = Vec::new();
    for y in ys {
        match log_shift_range(f, &xs, y) {
            Ok((lo, _)) => {
                v.diag(format!("y={y}:min_log_ratio"), lo);
                statuses.push(Status::at_least(lo, 0.0, cfg.tol));
            }
            Err(e) => return v.inconclusive(e.to_string()),
        }
    }
    v.status = Status::all(statuses);
    v
}

/// Runs the membership test for `tag`.
///
/// Errors only on violated preconditions: `S_star` needs a finite mean and
/// `S_lattice` a lattice-supported atomic input.
pub fn test_class(f: &Distribution, tag: ClassTag, cfg: &AnalysisConfig) -> Result<ClassVerdict> {
    match tag {
        ClassTag::Heavy | ClassTag::Light => Ok(heavy_light(f, tag, cfg)),
        ClassTag::L => Ok(is_long_tailed(f, cfg)),
        ClassTag::S => Ok(subexponential(f, cfg)),
        ClassTag::SStar => s_star(f, cfg),
        ClassTag::SGamma(g) => Ok(s_gamma(f, g, cfg)),
        ClassTag::SLattice(g) => s_lattice(f, g, cfg),
        ClassTag::Condition2(g) => Ok(check_condition2(f, g, None, cfg)),
    }
}

fn heavy_light(f: &Distribution, tag: ClassTag, cfg: &AnalysisConfig) -> ClassVerdict {
    let mut v = ClassVerdict::new(tag, cfg.horizon);
    let s = gamma_hat(f);
    v.diag("gamma_hat", s.gamma_hat.to_f64());
    if s.method == Method::NumericFit {
        return v.inconclusive("gamma_hat is a numeric fit");
    }
    let heavy = s.is_heavy();
    v.status = if heavy == (tag == ClassTag::Heavy) {
        Status::Satisfied
    } else {
        Status::Violated
    };
    v
}

/// Ratio-curve window extrema against `target`, both sides.
fn ratio_limit(f: &Distribution, target: f64, v: &mut ClassVerdict, cfg: &AnalysisConfig) -> Status {
    let c = match ratio_curve(f, cfg) {
        Ok(c) => c,
        Err(e) => {
            v.notes.push(e.to_string());
            return Status::Inconclusive;
        }
    };
    v.horizon = c.horizon;
    let est = liminf_estimate(&c, cfg.window);
    v.diag("liminf", est.value);
    v.diag("limsup", est.limsup);
    v.diag("liminf_half_horizon", est.value_half);
    v.diag("target", target);
    v.diag("max_bracket", c.bracket.iter().copied().fold(0.0, f64::max));
    if est.points == 0 {
        v.notes.push("no curve points in the window".into());
        return Status::Inconclusive;
    }
    Status::all([
        Status::two_sided(est.value, target, cfg.tol),
        Status::two_sided(est.limsup, target, cfg.tol),
    ])
}

fn subexponential(f: &Distribution, cfg: &AnalysisConfig) -> ClassVerdict {
    let mut v = ClassVerdict::new(ClassTag::S, cfg.horizon);
    v.status = ratio_limit(f, 2.0, &mut v, cfg);
    v
}

fn loosened(cfg: &ConvConfig, run: impl Fn(&ConvConfig) -> Result<TailBracket>) -> Result<TailBracket> {
    let mut c = *cfg;
    loop {
        match run(&c) {
            Err(Error::Tolerance { .. }) if c.rel_tol < 0.5 => c.rel_tol = (c.rel_tol * 10.0).min(0.5),
            r => return r,
        }
    }
}

fn s_star(f: &Distribution, cfg: &AnalysisConfig) -> Result<ClassVerdict> {
    let a = f.mean().finite().ok_or(Error::InfiniteMean)?;
    let h = classification_horizon(f, cfg.horizon)?;
    let mut v = ClassVerdict::new(ClassTag::SStar, h);
    let xs = geometric(cfg.window * h, h, (cfg.n_points / 8).max(8));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs {
        let t = loosened(&cfg.conv, |c| tail_product_integral_with(f, x, c))?;
        let r = (t.log_tail - f.log_tail(x)?).exp();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    v.diag("mean", a);
    v.diag("min_ratio", lo);
    v.diag("max_ratio", hi);
    v.diag("target", 2.0 * a);
    v.status = Status::all([
        Status::two_sided(lo, 2.0 * a, cfg.tol),
        Status::two_sided(hi, 2.0 * a, cfg.tol),
    ]);
    Ok(v)
}

fn s_gamma(f: &Distribution, gamma: f64, cfg: &AnalysisConfig) -> ClassVerdict {
    let mut v = ClassVerdict::new(ClassTag::SGamma(gamma), cfg.horizon);
    let lv = laplace_detail(f, gamma);
    v.diag("phi", lv.value.to_f64());
    let phi = match lv.value {
        ExtendedReal::Infinite => {
            v.status = Status::Violated;
            v.notes.push("phi(gamma) is infinite".into());
            return v;
        }
        ExtendedReal::Finite(p) => p,
    };
    if lv.method == Method::NumericFit {
        return v.inconclusive("phi(gamma) comes from a numeric fit");
    }
    let h = match classification_horizon(f, cfg.horizon) {
        Ok(h) => h,
        Err(e) => return v.inconclusive(e.to_string()),
    };
    let xs = window_points(f, h - 2.0, cfg, &[-0.5, -1.0]);
    let mut statuses = Vec::new();
    for y in [1.0, 2.0] {
        match log_shift_range(f, &xs, y) {
            Ok((lo, hi)) => {
                v.diag(format!("y={y}:min_log_ratio"), lo);
                v.diag(format!("y={y}:max_log_ratio"), hi);
                let t = (-gamma * y).exp();
                statuses.push(Status::two_sided(lo.exp(), t, cfg.tol));
                statuses.push(Status::two_sided(hi.exp(), t, cfg.tol));
            }
            Err(e) => return v.inconclusive(e.to_string()),
        }
    }
    statuses.push(ratio_limit(f, 2.0 * phi, &mut v, cfg));
    v.status = Status::all(statuses);
    v
}

fn s_lattice(f: &Distribution, gamma: f64, cfg: &AnalysisConfig) -> Result<ClassVerdict> {
    let a = f
        .as_atomic()
        .ok_or_else(|| Error::Precondition("S_lattice needs an atomic input".into()))?;
    let d = a
        .lattice_span()
        .ok_or_else(|| Error::Precondition("S_lattice needs lattice support".into()))?;
    let h = classification_horizon(f, cfg.horizon)?;
    let mut v = ClassVerdict::new(ClassTag::SLattice(gamma), h);
    let phi = laplace_detail(f, gamma).value;
    v.diag("span", d);
    v.diag("phi", phi.to_f64());
    let Some(phi) = phi.finite() else {
        v.status = Status::Violated;
        v.notes.push("phi(gamma) is infinite".into());
        return Ok(v);
    };
    let ff = conv_atomic_with(f, f, &cfg.conv)?;
    let ffa = ff.as_atomic().expect("atomic convolution");
    let (k0, k1) = ((cfg.window * h / d).ceil() as i64, ((h / d).floor() as i64) - 1);
    if k1 < k0 {
        return Ok(v.inconclusive("no lattice sites in the window"));
    }
    let stride = (((k1 - k0) as usize) / cfg.n_points.max(1)).max(1);
    let (mut step_lo, mut step_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut conv_lo, mut conv_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut empty = 0usize;
    let mut k = k0;
    while k <= k1 {
        let x = k as f64 * d;
        let (m0, m1) = (a.log_mass_at(x), a.log_mass_at(x + d));
        if m0 == f64::NEG_INFINITY || m1 == f64::NEG_INFINITY {
            empty += 1;
        } else {
            step_lo = step_lo.min(m1 - m0);
            step_hi = step_hi.max(m1 - m0);
            let c = (ffa.log_mass_at(x) - m0).exp();
            conv_lo = conv_lo.min(c);
            conv_hi = conv_hi.max(c);
        }
        k += stride as i64;
    }
    v.diag("empty_sites", empty as f64);
    if empty > 0 {
        v.status = Status::Violated;
        v.notes.push("lattice sites without mass in the window: mass ratios do not converge".into());
        return Ok(v);
    }
    let t = (-gamma * d).exp();
    v.diag("min_step_ratio", step_lo.exp());
    v.diag("max_step_ratio", step_hi.exp());
    v.diag("min_conv_ratio", conv_lo);
    v.diag("max_conv_ratio", conv_hi);
    v.status = Status::all([
        Status::two_sided(step_lo.exp(), t, cfg.tol),
        Status::two_sided(step_hi.exp(), t, cfg.tol),
        Status::two_sided(conv_lo, 2.0 * phi, cfg.tol),
        Status::two_sided(conv_hi, 2.0 * phi, cfg.tol),
    ]);
    Ok(v)
}
