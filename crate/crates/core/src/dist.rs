//! Distributions on `[0, ∞)` represented through their log-tails.
//!
//! Every representation answers one question, `ln F̄(x) = ln P(ξ > x)`, in
//! log-space so that tails like `e^{-γ·3^8}` or `e^{-x²}` stay representable.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::extended::ExtendedReal;
use crate::logspace::{log_add_exp, LogSum};
use crate::quadrature::{integrate_log, integrate_to_inf, QuadConfig};
use crate::transforms::{LaplaceSummary, Method};

/// Tolerance on `ln Σ p_i` accepted by [`make_atomic`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Closed-form parametric families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `F̄(x) = (1 + x)^{-β}`
    Pareto { beta: f64 },
    /// `F̄(x) = e^{-αx}`
    Exponential { alpha: f64 },
    /// `F̄(x) = min(1, c₁ e^{-c₂ x²})`
    WeibullSq { c1: f64, c2: f64 },
    /// `F̄(x) = (1 + x)^{-ρ} e^{-αx}`
    SlowvaryExp { alpha: f64, rho: f64 },
    /// `F̄(x) = e^{-c x^β}`, `β ∈ (0, 1)`
    Weibull { c: f64, beta: f64 },
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Pareto { .. } => "pareto",
            Family::Exponential { .. } => "exponential",
            Family::WeibullSq { .. } => "weibull_sq",
            Family::SlowvaryExp { .. } => "slowvary_exp",
            Family::Weibull { .. } => "weibull",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Family::Pareto { beta } => vec![beta],
            Family::Exponential { alpha } => vec![alpha],
            Family::WeibullSq { c1, c2 } => vec![c1, c2],
            Family::SlowvaryExp { alpha, rho } => vec![alpha, rho],
            Family::Weibull { c, beta } => vec![c, beta],
        }
    }

    fn log_tail(&self, x: f64) -> f64 {
        match *self {
            Family::Pareto { beta } => -beta * x.ln_1p(),
            Family::Exponential { alpha } => -alpha * x,
            Family::WeibullSq { c1, c2 } => (c1.ln() - c2 * x * x).min(0.0),
            Family::SlowvaryExp { alpha, rho } => -rho * x.ln_1p() - alpha * x,
            Family::Weibull { c, beta } => -c * x.powf(beta),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self.params().iter().map(|v| v.to_string()).collect();
        write!(f, "{}({})", self.tag(), p.join(", "))
    }
}

/// Record of atoms dropped from an infinite atomic distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    /// Upper bound on `ln Σ_{n ≥ N} p_n`, when known.
    pub log_neglected_mass: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Atomic {
    points: Vec<f64>,
    log_masses: Vec<f64>,
    /// `ln P(ξ ≥ points[i])`
    log_suffix: Vec<f64>,
    lattice: Option<f64>,
    truncation: Option<Truncation>,
    declared: Option<LaplaceSummary>,
}

impl Atomic {
    pub fn points(&self) -> &[f64] {
        &self.points
    }
    pub fn log_masses(&self) -> &[f64] {
        &self.log_masses
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    /// Common lattice span when every atom is an integer multiple of it.
    pub fn lattice_span(&self) -> Option<f64> {
        self.lattice
    }
    pub fn truncation(&self) -> Option<Truncation> {
        self.truncation
    }
    pub fn declared(&self) -> Option<&LaplaceSummary> {
        self.declared.as_ref()
    }

    fn log_tail(&self, x: f64) -> f64 {
        let i = self.points.partition_point(|&p| p <= x);
        self.log_suffix.get(i).copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// `ln F{x}`, `-inf` when `x` is not an atom.
    pub fn log_mass_at(&self, x: f64) -> f64 {
        match self.points.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => self.log_masses[i],
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    dx: f64,
    log_tail: Vec<f64>,
    /// `ln` of the absolute half-width of an accumulated quadrature bracket.
    log_err: Option<Vec<f64>>,
}

impl Grid {
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn log_tail(&self) -> &[f64] {
        &self.log_tail
    }
    pub fn log_err(&self) -> Option<&[f64]> {
        self.log_err.as_deref()
    }
    pub fn upper(&self) -> f64 {
        self.dx * (self.log_tail.len() - 1) as f64
    }

    fn eval(&self, x: f64) -> Result<f64> {
        let upper = self.upper();
        if x > upper * (1.0 + 1e-12) {
            return Err(Error::OutOfRange { x, max: upper });
        }
        let s = x / self.dx;
        let k = (s.floor() as usize).min(self.log_tail.len() - 1);
        let frac = s - k as f64;
        if k + 1 >= self.log_tail.len() || frac <= 0.0 {
            return Ok(self.log_tail[k]);
        }
        let (a, b) = (self.log_tail[k], self.log_tail[k + 1]);
        if b == f64::NEG_INFINITY {
            return Ok(if frac > 0.0 { f64::NEG_INFINITY } else { a });
        }
        Ok(a + (b - a) * frac)
    }
}

#[derive(Debug, Clone)]
pub struct Tilted {
    base: Distribution,
    gamma: f64,
    log_phi: f64,
}

impl Tilted {
    pub(crate) fn new(base: Distribution, gamma: f64, log_phi: f64) -> Self {
        Tilted { base, gamma, log_phi }
    }
    pub fn base(&self) -> &Distribution {
        &self.base
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn log_phi(&self) -> f64 {
        self.log_phi
    }

    /// `ln Ḡ(x)` from `φ(γ)Ḡ(x) = e^{γx}F̄(x) + γ∫_x^∞ e^{γy}F̄(y)dy`.
    fn log_tail(&self, x: f64) -> Result<f64> {
        let lx = self.base.log_tail(x)?;
        if lx == f64::NEG_INFINITY {
            return Ok(lx);
        }
        let g = self.gamma;
        let base = &self.base;
        let cfg = QuadConfig::default();
        let r = integrate_to_inf(
            |t| match base.log_tail(x + t) {
                Ok(l) => (g * t + l - lx).exp(),
                Err(_) => 0.0,
            },
            0.0,
            &cfg,
        );
        Ok(lx + g * x - self.log_phi + (g * r.value).ln_1p())
    }
}

/// Shape of `F̄(x) ≈ x^{-poly} e^{-rate·x}` at infinity, known for closed-form kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailShape {
    pub rate: ExtendedReal,
    pub poly: f64,
    /// Tail decays faster than every power but slower than every exponential.
    pub stretched: bool,
}

#[derive(Debug, Clone)]
pub enum Repr {
    Parametric(Family),
    Atomic(Atomic),
    Grid(Grid),
    /// `Ḡ(x) = (F̄(x−1) + F̄(x)) / 2`
    ShiftMixture(Distribution),
    /// `G(du) = e^{γu} F(du) / φ(γ)` for a continuous closed-form base.
    Tilted(Tilted),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Parametric,
    Atomic,
    Grid,
    ShiftMixture,
    Tilted,
}

/// Mean together with how it was obtained.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MeanValue {
    pub value: ExtendedReal,
    pub abs_error: f64,
    pub note: &'static str,
}

#[derive(Debug)]
struct Inner {
    repr: Repr,
    mean: OnceLock<MeanValue>,
}

/// Immutable distribution on `[0, ∞)`; cloning is cheap.
#[derive(Debug, Clone)]
pub struct Distribution(Arc<Inner>);

impl Distribution {
    pub(crate) fn from_repr(repr: Repr) -> Self {
        Distribution(Arc::new(Inner {
            repr,
            mean: OnceLock::new(),
        }))
    }

    pub fn repr(&self) -> &Repr {
        &self.0.repr
    }

    pub fn kind(&self) -> Kind {
        match self.repr() {
            Repr::Parametric(_) => Kind::Parametric,
            Repr::Atomic(_) => Kind::Atomic,
            Repr::Grid(_) => Kind::Grid,
            Repr::ShiftMixture(_) => Kind::ShiftMixture,
            Repr::Tilted(_) => Kind::Tilted,
        }
    }

    pub fn as_atomic(&self) -> Option<&Atomic> {
        match self.repr() {
            Repr::Atomic(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_grid(&self) -> Option<&Grid> {
        match self.repr() {
            Repr::Grid(g) => Some(g),
            _ => None,
        }
    }

    pub fn family(&self) -> Option<Family> {
        match self.repr() {
            Repr::Parametric(f) => Some(*f),
            _ => None,
        }
    }

    pub fn is_atomic(&self) -> bool {
        self.as_atomic().is_some()
    }

    /// Largest `x` at which [`Distribution::log_tail`] is defined.
    pub fn max_x(&self) -> f64 {
        match self.repr() {
            Repr::Grid(g) => g.upper(),
            Repr::ShiftMixture(b) => b.max_x(),
            Repr::Tilted(t) => t.base.max_x(),
            _ => f64::INFINITY,
        }
    }

    /// Supremum of `x` with `F̄(x) > 0` that the representation can vouch for,
    /// or `None` when the support is known to be bounded.
    pub fn classification_limit(&self) -> Option<f64> {
        match self.repr() {
            Repr::Atomic(a) => match a.truncation {
                Some(_) => a.points.last().copied(),
                None => None,
            },
            Repr::Grid(g) => {
                if g.log_tail.last().is_some_and(|v| v.is_finite()) {
                    Some(g.upper())
                } else {
                    None
                }
            }
            Repr::ShiftMixture(b) => b.classification_limit(),
            _ => Some(f64::INFINITY),
        }
    }

    /// `ln F̄(x)`. Negative `x` gives `0` (all mass lies in `[0, ∞)`).
    pub fn log_tail(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::Precondition("tail evaluated at NaN".into()));
        }
        if x < 0.0 {
            return Ok(0.0);
        }
        match self.repr() {
            Repr::Parametric(f) => Ok(f.log_tail(x)),
            Repr::Atomic(a) => Ok(a.log_tail(x)),
            Repr::Grid(g) => g.eval(x),
            Repr::ShiftMixture(b) => {
                let l0 = b.log_tail(x)?;
                let l1 = b.log_tail(x - 1.0)?;
                Ok(log_add_exp(l0, l1) - std::f64::consts::LN_2)
            }
            Repr::Tilted(t) => t.log_tail(x),
        }
    }

    /// `F̄(x)` in linear space.
    pub fn tail(&self, x: f64) -> Result<f64> {
        self.log_tail(x).map(f64::exp)
    }

    pub fn mean(&self) -> ExtendedReal {
        self.mean_detail().value
    }

    pub fn mean_detail(&self) -> &MeanValue {
        self.0.mean.get_or_init(|| compute_mean(self))
    }

    /// Tail shape at infinity for closed-form kinds.
    pub fn shape(&self) -> Option<TailShape> {
        match self.repr() {
            Repr::Parametric(f) => Some(match *f {
                Family::Pareto { beta } => TailShape {
                    rate: ExtendedReal::ZERO,
                    poly: beta,
                    stretched: false,
                },
                Family::Exponential { alpha } => TailShape {
                    rate: ExtendedReal::new(alpha),
                    poly: 0.0,
                    stretched: false,
                },
                Family::WeibullSq { .. } => TailShape {
                    rate: ExtendedReal::Infinite,
                    poly: 0.0,
                    stretched: false,
                },
                Family::SlowvaryExp { alpha, rho } => TailShape {
                    rate: ExtendedReal::new(alpha),
                    poly: rho,
                    stretched: false,
                },
                Family::Weibull { .. } => TailShape {
                    rate: ExtendedReal::ZERO,
                    poly: f64::INFINITY,
                    stretched: true,
                },
            }),
            Repr::ShiftMixture(b) => b.shape(),
            Repr::Tilted(t) => {
                let s = t.base.shape()?;
                let g = t.gamma;
                Some(match s.rate {
                    ExtendedReal::Infinite => s,
                    ExtendedReal::Finite(r) if r > g => TailShape {
                        rate: ExtendedReal::new(r - g),
                        ..s
                    },
                    ExtendedReal::Finite(_) => TailShape {
                        rate: ExtendedReal::ZERO,
                        poly: s.poly - 1.0,
                        stretched: s.stretched,
                    },
                })
            }
            _ => None,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.repr() {
            Repr::Parametric(fam) => write!(f, "{fam}"),
            Repr::Atomic(a) => write!(f, "atomic({} atoms)", a.len()),
            Repr::Grid(g) => write!(f, "grid(dx={}, n={})", g.dx, g.log_tail.len()),
            Repr::ShiftMixture(b) => write!(f, "shift_mixture({b})"),
            Repr::Tilted(t) => write!(f, "tilt({}, {})", t.base, t.gamma),
        }
    }
}

fn check_range(name: &'static str, value: f64, ok: bool, expected: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::ParamRange { name, value, expected })
    }
}

/// Builds a closed-form family from its tag and parameter list.
pub fn make_parametric(family: &str, params: &[f64]) -> Result<Distribution> {
    let need = |fam: &'static str, n: usize| -> Result<()> {
        if params.len() == n {
            Ok(())
        } else {
            Err(Error::ParamCount {
                family: fam,
                expected: n,
                got: params.len(),
            })
        }
    };
    let fam = match family {
        "pareto" => {
            need("pareto", 1)?;
            check_range("beta", params[0], params[0] > 0.0, "beta > 0")?;
            Family::Pareto { beta: params[0] }
        }
        "exponential" => {
            need("exponential", 1)?;
            check_range("alpha", params[0], params[0] > 0.0, "alpha > 0")?;
            Family::Exponential { alpha: params[0] }
        }
        "weibull_sq" => {
            need("weibull_sq", 2)?;
            check_range("c1", params[0], params[0] > 0.0 && params[0] <= 1.0, "0 < c1 <= 1")?;
            check_range("c2", params[1], params[1] > 0.0, "c2 > 0")?;
            Family::WeibullSq {
                c1: params[0],
                c2: params[1],
            }
        }
        "slowvary_exp" => {
            need("slowvary_exp", 2)?;
            check_range("alpha", params[0], params[0] > 0.0, "alpha > 0")?;
            check_range("rho", params[1], params[1] > 1.0, "rho > 1")?;
            Family::SlowvaryExp {
                alpha: params[0],
                rho: params[1],
            }
        }
        "weibull" => {
            need("weibull", 2)?;
            check_range("c", params[0], params[0] > 0.0, "c > 0")?;
            check_range("beta", params[1], params[1] > 0.0 && params[1] < 1.0, "0 < beta < 1")?;
            Family::Weibull {
                c: params[0],
                beta: params[1],
            }
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    Ok(Distribution::from_repr(Repr::Parametric(fam)))
}

pub fn parametric(family: Family) -> Result<Distribution> {
    make_parametric(family.tag(), &family.params())
}

fn float_gcd(mut a: f64, mut b: f64, tol: f64) -> f64 {
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    while b > tol {
        let r = a % b;
        a = b;
        b = if r > b - tol { 0.0 } else { r };
    }
    a
}

/// Span `d` such that every point is an integer multiple of `d`.
pub(crate) fn lattice_span(points: &[f64]) -> Option<f64> {
    let max = points.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return None;
    }
    let tol = 1e-9 * max;
    let mut d = 0.0f64;
    for &p in points.iter().filter(|&&p| p > 0.0) {
        d = if d == 0.0 { p } else { float_gcd(d, p, tol) };
    }
    if d <= tol {
        return None;
    }
    let ok = points.iter().all(|&p| {
        let q = p / d;
        (q - q.round()).abs() <= 1e-9 * q.max(1.0)
    });
    ok.then_some(d)
}

/// Atomic distribution from strictly increasing points and log-masses summing to 1.
pub fn make_atomic(points: &[f64], log_masses: &[f64]) -> Result<Distribution> {
    build_atomic(points.to_vec(), log_masses.to_vec(), None, None, true)
}

/// Like [`make_atomic`], for a finite section of an infinite atomic distribution.
pub fn make_atomic_truncated(
    points: &[f64],
    log_masses: &[f64],
    log_neglected_mass: Option<f64>,
) -> Result<Distribution> {
    build_atomic(
        points.to_vec(),
        log_masses.to_vec(),
        Some(Truncation { log_neglected_mass }),
        None,
        true,
    )
}

pub(crate) fn build_atomic(
    points: Vec<f64>,
    mut log_masses: Vec<f64>,
    truncation: Option<Truncation>,
    declared: Option<LaplaceSummary>,
    check_norm: bool,
) -> Result<Distribution> {
    if points.len() != log_masses.len() {
        return Err(Error::LengthMismatch {
            points: points.len(),
            masses: log_masses.len(),
        });
    }
    if points.is_empty() {
        return Err(Error::Degenerate("no atoms"));
    }
    for (i, &p) in points.iter().enumerate() {
        if !(p.is_finite() && p >= 0.0) || (i > 0 && p <= points[i - 1]) {
            return Err(Error::NonMonotonePoints { index: i });
        }
    }
    if log_masses.iter().any(|m| m.is_nan() || (check_norm && *m > 1e-12)) {
        return Err(Error::Spec("log-masses must be <= 0".into()));
    }
    let total = crate::logspace::log_sum_exp(&log_masses);
    if check_norm && !(total.abs() <= NORMALIZATION_TOL) {
        return Err(Error::Normalization { log_total: total });
    }
    for m in log_masses.iter_mut() {
        *m -= total;
    }
    if points.len() == 1 && points[0] == 0.0 {
        return Err(Error::Degenerate("all mass at 0"));
    }
    let mut log_suffix = vec![f64::NEG_INFINITY; points.len()];
    let mut acc = f64::NEG_INFINITY;
    for i in (0..points.len()).rev() {
        acc = log_add_exp(log_masses[i], acc);
        log_suffix[i] = acc;
    }
    log_suffix[0] = 0.0;
    let lattice = lattice_span(&points);
    Ok(Distribution::from_repr(Repr::Atomic(Atomic {
        points,
        log_masses,
        log_suffix,
        lattice,
        truncation,
        declared,
    })))
}

/// Grid distribution from `ln F̄(k·dx)`, `k = 0..K`, interpolated log-linearly.
pub fn make_grid(dx: f64, log_tail: &[f64]) -> Result<Distribution> {
    build_grid(dx, log_tail.to_vec(), None)
}

pub(crate) fn build_grid(dx: f64, mut log_tail: Vec<f64>, log_err: Option<Vec<f64>>) -> Result<Distribution> {
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::GridStep(dx));
    }
    if log_tail.len() < 2 {
        return Err(Error::Spec("grid needs at least two points".into()));
    }
    if !(log_tail[0].abs() <= 1e-12) {
        return Err(Error::GridStart(log_tail[0]));
    }
    log_tail[0] = 0.0;
    for i in 1..log_tail.len() {
        let v = log_tail[i];
        if v.is_nan() || v > 1e-12 {
            return Err(Error::IncreasingTail { index: i });
        }
        if v > log_tail[i - 1] {
            return Err(Error::IncreasingTail { index: i });
        }
    }
    if log_tail[1] == f64::NEG_INFINITY {
        return Err(Error::Degenerate("all mass at 0"));
    }
    Ok(Distribution::from_repr(Repr::Grid(Grid { dx, log_tail, log_err })))
}

/// Uniform evaluation grid `k·dx`, `k = 0..=ceil(upper/dx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dx: f64,
    pub upper: f64,
}

impl GridSpec {
    pub fn new(dx: f64, upper: f64) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::GridStep(dx));
        }
        if !(upper > 0.0 && upper.is_finite()) {
            return Err(Error::Precondition(format!("grid upper bound must be positive, got {upper}")));
        }
        Ok(GridSpec { dx, upper })
    }

    pub fn len(&self) -> usize {
        (self.upper / self.dx - 1e-9).ceil() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.dx
    }
}

/// Samples `F` at `k·dx` for `k = 0..=ceil(upper/dx)` into a grid distribution.
pub fn sample_to_grid(f: &Distribution, dx: f64, upper: f64) -> Result<Distribution> {
    let n = GridSpec::new(dx, upper)?.len() - 1;
    let mut lt = Vec::with_capacity(n + 1);
    let mut prev = 0.0f64;
    for k in 0..=n {
        let v = if k == 0 { 0.0 } else { f.log_tail(k as f64 * dx)?.min(prev) };
        lt.push(v);
        prev = v;
    }
    build_grid(dx, lt, None)
}

/// Distribution of `ξ + B`, `B ~ Bernoulli(1/2)` independent: tail `(F̄(x−1) + F̄(x))/2`.
pub fn shift_mixture(f: &Distribution) -> Result<Distribution> {
    if !f.mean().is_finite() {
        return Err(Error::InfiniteMean);
    }
    if let Some(a) = f.as_atomic() {
        let mut pairs: Vec<(f64, f64)> = a
            .points
            .iter()
            .zip(&a.log_masses)
            .flat_map(|(&p, &m)| {
                let h = m - std::f64::consts::LN_2;
                [(p, h), (p + 1.0, h)]
            })
            .collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (pts, lms) = merge_sorted(pairs);
        let declared = a.declared.map(|d| d.shift_mixture());
        return build_atomic(pts, lms, a.truncation, declared, false);
    }
    Ok(Distribution::from_repr(Repr::ShiftMixture(f.clone())))
}

/// Merges exactly equal support points of a sorted `(point, log_mass)` list.
pub(crate) fn merge_sorted(pairs: Vec<(f64, f64)>) -> (Vec<f64>, Vec<f64>) {
    let mut pts: Vec<f64> = Vec::with_capacity(pairs.len());
    let mut lms: Vec<f64> = Vec::with_capacity(pairs.len());
    for (p, m) in pairs {
        match pts.last() {
            Some(&last) if last == p => {
                let l = lms.last_mut().expect("parallel vectors");
                *l = log_add_exp(*l, m);
            }
            _ => {
                pts.push(p);
                lms.push(m);
            }
        }
    }
    (pts, lms)
}

/// Atomic generators at `x_n = 3ⁿ` whose convolution ratio has lower limit 2.
///
/// * variant 1: `p_n ∝ e^{-γ̂ 3ⁿ} 3^{-n}` (φ(γ̂) finite)
/// * variant 2: `p_n ∝ e^{-γ̂ 3ⁿ}` (φ(γ̂) infinite)
/// * variant 3: `p_n ∝ e^{-x_n²}` (γ̂ = ∞; `gamma_hat` ignored)
pub fn counterexample(variant: u8, gamma_hat: f64, n_atoms: usize) -> Result<Distribution> {
    if n_atoms < 3 {
        return Err(Error::TooFewAtoms(n_atoms));
    }
    if !(1..=3).contains(&variant) {
        return Err(Error::Spec(format!("counterexample variant must be 1, 2 or 3, got {variant}")));
    }
    if variant != 3 {
        check_range("gamma_hat", gamma_hat, gamma_hat > 0.0, "gamma_hat > 0")?;
    }
    let ln3 = 3f64.ln();
    let raw = |n: usize| -> f64 {
        let x = 3f64.powi(n as i32);
        match variant {
            1 => -gamma_hat * x - n as f64 * ln3,
            2 => -gamma_hat * x,
            _ => -x * x,
        }
    };
    if 3f64.powi(n_atoms as i32).is_infinite() {
        return Err(Error::Budget {
            name: "n_atoms",
            needed: n_atoms,
            limit: 600,
        });
    }
    let points: Vec<f64> = (0..n_atoms).map(|n| 3f64.powi(n as i32)).collect();
    let unnorm: Vec<f64> = (0..n_atoms).map(raw).collect();
    let log_c = -crate::logspace::log_sum_exp(&unnorm);
    let log_masses: Vec<f64> = unnorm.iter().map(|m| m + log_c).collect();

    // geometric majorant for Σ_{n≥N} p_n: successive ratios are at most `r`
    let big = 3f64.powi(n_atoms as i32);
    let log_r = match variant {
        1 => -2.0 * gamma_hat * big - ln3,
        2 => -2.0 * gamma_hat * big,
        _ => -8.0 * big * big,
    };
    let log_neglected = raw(n_atoms) + log_c - crate::logspace::log1m_exp(log_r);

    let declared = match variant {
        1 => LaplaceSummary {
            gamma_hat: ExtendedReal::new(gamma_hat),
            phi_at_gamma_hat: ExtendedReal::new(1.5 * log_c.exp()),
            method: Method::ClosedForm,
            fit_window: None,
        },
        2 => LaplaceSummary {
            gamma_hat: ExtendedReal::new(gamma_hat),
            phi_at_gamma_hat: ExtendedReal::Infinite,
            method: Method::ClosedForm,
            fit_window: None,
        },
        _ => LaplaceSummary {
            gamma_hat: ExtendedReal::Infinite,
            phi_at_gamma_hat: ExtendedReal::Infinite,
            method: Method::ClosedForm,
            fit_window: None,
        },
    };
    build_atomic(
        points,
        log_masses,
        Some(Truncation {
            log_neglected_mass: Some(log_neglected),
        }),
        Some(declared),
        false,
    )
}

fn compute_mean(f: &Distribution) -> MeanValue {
    let cfg = QuadConfig::default();
    let numeric = |note: &'static str| -> MeanValue {
        let (l, rel, ok) = integrate_log(|x| f.log_tail(x).unwrap_or(f64::NEG_INFINITY), 0.0, f64::INFINITY, &cfg);
        if ok && l.is_finite() {
            MeanValue {
                value: ExtendedReal::new(l.exp()),
                abs_error: rel * l.exp(),
                note,
            }
        } else {
            MeanValue {
                value: ExtendedReal::Infinite,
                abs_error: 0.0,
                note: "quadrature did not converge; treated as divergent",
            }
        }
    };
    let infinite = |note| MeanValue {
        value: ExtendedReal::Infinite,
        abs_error: 0.0,
        note,
    };
    let exact = |v: f64| MeanValue {
        value: ExtendedReal::new(v),
        abs_error: 0.0,
        note: "closed form",
    };
    match f.repr() {
        Repr::Parametric(fam) => match *fam {
            Family::Exponential { alpha } => exact(1.0 / alpha),
            Family::Pareto { beta } if beta > 1.0 => exact(1.0 / (beta - 1.0)),
            Family::Pareto { .. } => infinite("pareto with beta <= 1"),
            Family::WeibullSq { c1, c2 } => exact(c1 * std::f64::consts::PI.sqrt() / (2.0 * c2.sqrt())),
            Family::Weibull { c, beta } => {
                exact(statrs::function::gamma::gamma(1.0 + 1.0 / beta) / c.powf(1.0 / beta))
            }
            Family::SlowvaryExp { .. } => numeric("quadrature"),
        },
        Repr::Atomic(a) => {
            let mut s = LogSum::new();
            for (&p, &m) in a.points.iter().zip(&a.log_masses) {
                if p > 0.0 {
                    s.add(p.ln() + m);
                }
            }
            let v = s.value();
            exact(if v == f64::NEG_INFINITY { 0.0 } else { v.exp() })
        }
        Repr::Grid(g) => grid_mean(g),
        Repr::ShiftMixture(b) => {
            let m = b.mean_detail();
            MeanValue {
                value: m.value + ExtendedReal::new(0.5),
                abs_error: m.abs_error,
                note: m.note,
            }
        }
        Repr::Tilted(t) => {
            let finite = match f.shape() {
                Some(s) => s.rate.to_f64() > 0.0 || s.stretched || s.poly > 1.0,
                None => true,
            };
            if !finite {
                return infinite("tilted tail is regularly varying with index <= 1");
            }
            // mean = φ'(γ)/φ(γ), φ'(γ) = ∫ (1 + γx) e^{γx} F̄(x) dx
            let g = t.gamma;
            let base = &t.base;
            let (l, rel, ok) = integrate_log(
                |x| {
                    let w = 1.0 + g * x;
                    if w <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    w.ln() + g * x + base.log_tail(x).unwrap_or(f64::NEG_INFINITY)
                },
                0.0,
                f64::INFINITY,
                &cfg,
            );
            if g < 0.0 {
                // (1 + γx) changes sign; fall back to integrating the tilted tail
                return numeric("quadrature of tilted tail");
            }
            if ok && l.is_finite() {
                let v = (l - t.log_phi).exp();
                MeanValue {
                    value: ExtendedReal::new(v),
                    abs_error: rel * v,
                    note: "phi'(gamma)/phi(gamma) by quadrature",
                }
            } else {
                infinite("quadrature did not converge; treated as divergent")
            }
        }
    }
}

/// Exact integral of the log-linear interpolant plus a remainder beyond the
/// last point certified only when the fitted decay over the last tenth of the
/// grid is at least one decade.
fn grid_mean(g: &Grid) -> MeanValue {
    let lt = &g.log_tail;
    let mut acc = LogSum::new();
    for k in 0..lt.len() - 1 {
        acc.add(log_cell_integral(lt[k], lt[k + 1], g.dx));
    }
    let n = lt.len() - 1;
    let start = n - (n / 10).max(1);
    let last = lt[n];
    let drop = lt[start] - last;
    if last == f64::NEG_INFINITY {
        return MeanValue {
            value: ExtendedReal::new(acc.value().exp()),
            abs_error: 0.0,
            note: "grid reaches zero tail",
        };
    }
    if drop >= std::f64::consts::LN_10 {
        let rate = drop / (g.dx * (n - start) as f64);
        let rem = (last - rate.ln()).exp();
        let body = acc.value().exp();
        MeanValue {
            value: ExtendedReal::new(body + rem),
            abs_error: rem,
            note: "grid quadrature plus fitted exponential remainder",
        }
    } else {
        MeanValue {
            value: ExtendedReal::Infinite,
            abs_error: 0.0,
            note: "tail decay over the last decade of the grid does not certify a finite mean",
        }
    }
}

/// `ln ∫_0^h e^{a + (b-a) t/h} dt`.
pub(crate) fn log_cell_integral(a: f64, b: f64, h: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return a;
    }
    if b == f64::NEG_INFINITY {
        // collapses within the cell; bound by left value over zero width
        return f64::NEG_INFINITY;
    }
    let d = b - a;
    if d.abs() < 1e-12 {
        return a + h.ln();
    }
    // h (e^b - e^a)/(b - a)
    a + h.ln() + (d.exp_m1() / d).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn parametric_examples() {
        let e = make_parametric("exponential", &[1.0]).unwrap();
        assert_eq!(e.tail(0.0).unwrap(), 1.0);
        assert!(close(e.log_tail(3.0).unwrap(), -3.0, 1e-15));
        let p = make_parametric("pareto", &[2.0]).unwrap();
        assert!(close(p.tail(9.0).unwrap(), 0.01, 1e-15));
        assert!(matches!(
            make_parametric("exponential", &[-1.0]),
            Err(Error::ParamRange { .. })
        ));
        assert!(matches!(make_parametric("cauchy", &[1.0]), Err(Error::UnknownFamily(_))));
        assert!(matches!(make_parametric("weibull", &[1.0, 1.5]), Err(Error::ParamRange { .. })));
        assert!(matches!(make_parametric("pareto", &[1.0, 2.0]), Err(Error::ParamCount { .. })));
    }

    #[test]
    fn atomic_examples() {
        let h = 0.5f64.ln();
        let a = make_atomic(&[0.0, 1.0], &[h, h]).unwrap();
        assert!(close(a.tail(0.5).unwrap(), 0.5, 1e-15));
        assert!(close(a.log_tail(0.2).unwrap(), h, 1e-15));
        assert!(a.tail(1.0).unwrap() == 0.0);
        assert_eq!(a.as_atomic().unwrap().lattice_span(), Some(1.0));

        let q = 0.25f64.ln();
        let b = make_atomic(&[1.0, 3.0, 9.0, 27.0], &[q; 4]).unwrap();
        assert_eq!(b.as_atomic().unwrap().lattice_span(), Some(1.0));

        let bad = make_atomic(&[0.0, 1.0], &[0.45f64.ln(), 0.45f64.ln()]);
        assert!(matches!(bad, Err(Error::Normalization { .. })));
        assert!(matches!(
            make_atomic(&[1.0, 0.5], &[h, h]),
            Err(Error::NonMonotonePoints { index: 1 })
        ));
        assert!(matches!(make_atomic(&[0.0], &[0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn irrational_points_are_not_lattice() {
        assert_eq!(lattice_span(&[1.0, std::f64::consts::PI]), None);
        assert_eq!(lattice_span(&[0.5, 1.5, 2.0]), Some(0.5));
    }

    #[test]
    fn grid_examples() {
        let g = make_grid(1.0, &[0.0, -1.0, -2.0]).unwrap();
        assert!(close(g.log_tail(1.0).unwrap(), -1.0, 1e-15));
        assert!(close(g.log_tail(1.5).unwrap(), -1.5, 1e-15));
        assert!(matches!(g.log_tail(2.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(
            make_grid(1.0, &[0.0, -1.0, -0.5]),
            Err(Error::IncreasingTail { index: 2 })
        ));
        assert!(matches!(make_grid(0.0, &[0.0, -1.0]), Err(Error::GridStep(_))));

        let lt: Vec<f64> = (0..=10).map(|k| -(k as f64) * 0.5).collect();
        let e = make_grid(0.5, &lt).unwrap();
        assert!(close(e.tail(2.0).unwrap(), (-2.0f64).exp(), 1e-12));
    }

    #[test]
    fn means() {
        assert_eq!(make_parametric("pareto", &[1.0]).unwrap().mean(), ExtendedReal::Infinite);
        let m = make_parametric("pareto", &[2.0]).unwrap().mean().to_f64();
        assert!(close(m, 1.0, 1e-15));
        let m = make_parametric("exponential", &[2.0]).unwrap().mean().to_f64();
        assert!(close(m, 0.5, 1e-15));
        let w = make_parametric("weibull", &[1.0, 0.5]).unwrap().mean().to_f64();
        assert!(close(w, 2.0, 1e-12));
        let s = make_parametric("slowvary_exp", &[1.0, 2.0]).unwrap().mean().to_f64();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn grid_mean_certifies_exponential_not_pareto() {
        let e = make_parametric("exponential", &[1.0]).unwrap();
        let g = sample_to_grid(&e, 0.01, 40.0).unwrap();
        assert!(close(g.mean().to_f64(), 1.0, 1e-4));
        let p = make_parametric("pareto", &[2.0]).unwrap();
        let g = sample_to_grid(&p, 0.5, 1000.0).unwrap();
        assert_eq!(g.mean(), ExtendedReal::Infinite);
    }

    #[test]
    fn shift_mixture_examples() {
        let e = make_parametric("exponential", &[1.0]).unwrap();
        let g = shift_mixture(&e).unwrap();
        assert!(close(g.tail(0.0).unwrap(), 1.0, 1e-15));
        let want = ((-1.0f64).exp() + (-2.0f64).exp()) / 2.0;
        assert!(close(g.tail(2.0).unwrap(), want, 1e-15));
        assert!(close(g.mean().to_f64(), 1.5, 1e-15));
        let p1 = make_parametric("pareto", &[1.0]).unwrap();
        assert!(matches!(shift_mixture(&p1), Err(Error::InfiniteMean)));
    }

    #[test]
    fn shift_mixture_of_atomic_is_atomic() {
        let h = 0.5f64.ln();
        let a = make_atomic(&[0.0, 1.0], &[h, h]).unwrap();
        let g = shift_mixture(&a).unwrap();
        let at = g.as_atomic().unwrap();
        assert_eq!(at.points(), &[0.0, 1.0, 2.0]);
        assert!(close(at.log_masses()[1].exp(), 0.5, 1e-15));
    }

    #[test]
    fn counterexample_masses_normalized() {
        for v in 1..=3 {
            let c = counterexample(v, 1e-3, 8).unwrap();
            let a = c.as_atomic().unwrap();
            let total: f64 = a.log_masses().iter().map(|m| m.exp()).sum();
            assert!(close(total, 1.0, 1e-12), "variant {v}: {total}");
            assert!(a.truncation().is_some());
            assert_eq!(a.points()[7], 2187.0);
        }
        assert!(matches!(counterexample(1, 1e-3, 2), Err(Error::TooFewAtoms(2))));
    }
}
