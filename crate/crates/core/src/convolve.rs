//! Convolution tails: exact sums for atomic inputs, bracketed Stieltjes
//! quadrature otherwise, plus n-fold and randomly stopped sums.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::{build_atomic, build_grid, merge_sorted, Distribution, GridSpec, Truncation};
use crate::error::{Error, Result};
use crate::logspace::{log1m_exp, log_add_exp, log_diff_exp, LogSum};

#[derive(Debug, Clone, Copy)]
pub struct ConvConfig {
    /// Stop refining once the bracket width is below `rel_tol` times the estimate.
    pub rel_tol: f64,
    pub initial_cells: usize,
    /// Refinement cap: at most `initial_cells · 2^max_halvings` cells.
    pub max_halvings: u32,
    /// Largest number of atom pairs an atomic convolution may enumerate.
    pub atom_budget: usize,
    /// Largest number of cell pairs a grid convolution may visit.
    pub grid_work_budget: usize,
    /// Grid used when a convolution power of a non-atomic input is tabulated.
    pub grid: GridSpec,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            rel_tol: 1e-3,
            initial_cells: 64,
            max_halvings: 12,
            atom_budget: 1_000_000,
            grid_work_budget: 4_000_000_000,
            grid: GridSpec { dx: 0.01, upper: 50.0 },
        }
    }
}

impl ConvConfig {
    fn max_cells(&self) -> usize {
        self.initial_cells << self.max_halvings
    }
}

/// A log-tail with a rigorous quadrature bracket `[log_lower, log_upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBracket {
    pub log_tail: f64,
    pub log_lower: f64,
    pub log_upper: f64,
}

impl TailBracket {
    fn exact(l: f64) -> Self {
        TailBracket {
            log_tail: l,
            log_lower: l,
            log_upper: l,
        }
    }

    /// `(upper − lower) / estimate`.
    pub fn rel_width(&self) -> f64 {
        if self.log_tail == f64::NEG_INFINITY {
            return 0.0;
        }
        (self.log_upper - self.log_tail).exp() - (self.log_lower - self.log_tail).exp()
    }
}

/// Exact convolution of two atomic distributions.
pub fn conv_atomic(f: &Distribution, g: &Distribution) -> Result<Distribution> {
    conv_atomic_with(f, g, &ConvConfig::default())
}

pub fn conv_atomic_with(f: &Distribution, g: &Distribution, cfg: &ConvConfig) -> Result<Distribution> {
    let (a, b) = match (f.as_atomic(), g.as_atomic()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Precondition("conv_atomic needs two atomic inputs".into())),
    };
    let needed = a.len().saturating_mul(b.len());
    if needed > cfg.atom_budget {
        return Err(Error::Budget {
            name: "atom pairs",
            needed,
            limit: cfg.atom_budget,
        });
    }
    let mut pairs = Vec::with_capacity(needed);
    for (&p, &m) in a.points().iter().zip(a.log_masses()) {
        for (&q, &n) in b.points().iter().zip(b.log_masses()) {
            pairs.push((p + q, m + n));
        }
    }
    // stable sort keeps equal sums in enumeration order, so merging is reproducible
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (pts, lms) = merge_sorted(pairs);
    let truncation = match (a.truncation(), b.truncation()) {
        (None, None) => None,
        (ta, tb) => {
            let na = ta.and_then(|t| t.log_neglected_mass);
            let nb = tb.and_then(|t| t.log_neglected_mass);
            // P(either sum omitted) ≤ sum of the two omitted masses
            let bound = match (ta.is_some(), tb.is_some(), na, nb) {
                (true, true, Some(x), Some(y)) => Some(log_add_exp(x, y)),
                (true, false, Some(x), _) => Some(x),
                (false, true, _, Some(y)) => Some(y),
                _ => None,
            };
            Some(Truncation { log_neglected_mass: bound })
        }
    };
    build_atomic(pts, lms, truncation, None, false)
}

/// `ln P(ξ + η > x)` for independent `ξ ~ F`, `η ~ G`.
pub fn conv_tail_at(f: &Distribution, g: &Distribution, x: f64) -> Result<TailBracket> {
    conv_tail_at_with(f, g, x, &ConvConfig::default())
}

pub fn conv_tail_at_with(f: &Distribution, g: &Distribution, x: f64, cfg: &ConvConfig) -> Result<TailBracket> {
    if !(x >= 0.0) {
        return Err(Error::Precondition(format!("convolution tail needs x >= 0, got {x}")));
    }
    for d in [f, g] {
        if x > d.max_x() * (1.0 + 1e-12) {
            return Err(Error::OutOfRange { x, max: d.max_x() });
        }
    }
    // integrate against whichever measure is atomic
    let (f, g) = if !f.is_atomic() && g.is_atomic() { (g, f) } else { (f, g) };
    if let Some(a) = f.as_atomic() {
        let mut acc = LogSum::new();
        acc.add(f.log_tail(x)?);
        for (&p, &m) in a.points().iter().zip(a.log_masses()) {
            if p > x {
                break;
            }
            acc.add(m + g.log_tail(x - p)?);
        }
        return Ok(TailBracket::exact(acc.value()));
    }
    let lf0 = f.log_tail(0.0)?;
    let mut exact = LogSum::new();
    exact.add(f.log_tail(x)?);
    // atom at the origin
    exact.add(log1m_exp(lf0.min(0.0)) + g.log_tail(x)?);
    if x == 0.0 {
        return Ok(TailBracket::exact(exact.value()));
    }
    let eval = |y: f64| -> Result<Node> {
        Ok(Node {
            y,
            u: f.log_tail(y)?,
            v: g.log_tail(x - y)?,
        })
    };
    adaptive(eval, stieltjes_cell, 0.0, x, exact.value(), x, cfg)
}

/// `∫_0^x F̄(x−y) F̄(y) dy`, returned in log-space with its bracket.
pub fn tail_product_integral(f: &Distribution, x: f64) -> Result<TailBracket> {
    tail_product_integral_with(f, x, &ConvConfig::default())
}

pub fn tail_product_integral_with(f: &Distribution, x: f64, cfg: &ConvConfig) -> Result<TailBracket> {
    if !(x >= 0.0) {
        return Err(Error::Precondition(format!("tail-product integral needs x >= 0, got {x}")));
    }
    if x > f.max_x() * (1.0 + 1e-12) {
        return Err(Error::OutOfRange { x, max: f.max_x() });
    }
    if x == 0.0 {
        return Ok(TailBracket::exact(f64::NEG_INFINITY));
    }
    let eval = |y: f64| -> Result<Node> {
        Ok(Node {
            y,
            u: f.log_tail(y)?,
            v: f.log_tail(x - y)?,
        })
    };
    let half = adaptive(eval, product_cell, 0.0, 0.5 * x, f64::NEG_INFINITY, x, cfg)?;
    let ln2 = std::f64::consts::LN_2;
    Ok(TailBracket {
        log_tail: half.log_tail + ln2,
        log_lower: half.log_lower + ln2,
        log_upper: half.log_upper + ln2,
    })
}

#[derive(Debug, Clone, Copy)]
struct Node {
    y: f64,
    /// `ln F̄(y)`
    u: f64,
    /// `ln Ḡ(x − y)`
    v: f64,
}

/// `(lower, estimate, upper)` of one cell's contribution, all in log-space.
type CellFn = fn(&Node, &Node) -> (f64, f64, f64);

/// `∫_{(a,b]} Ḡ(x−y) F(dy)`: `Ḡ(x−y)` increases in `y`, so the endpoint values bracket it.
fn stieltjes_cell(n0: &Node, n1: &Node) -> (f64, f64, f64) {
    let h = n1.y - n0.y;
    let dm = log_diff_exp(n0.u, n1.u.min(n0.u));
    if dm == f64::NEG_INFINITY {
        return (dm, dm, dm);
    }
    let lo = dm + n0.v;
    let hi = dm + n1.v;
    let lam = (n0.u - n1.u) / h;
    let mu = (n1.v - n0.v) / h;
    let mid = dm + n1.v + ln_cell_weight(lam, mu, h);
    (lo, mid.clamp(lo, hi), hi)
}

/// `∫_a^b F̄(y) F̄(x−y) dy` with one factor falling and the other rising.
fn product_cell(n0: &Node, n1: &Node) -> (f64, f64, f64) {
    let h = n1.y - n0.y;
    let lh = h.ln();
    let lo = lh + n1.u + n0.v;
    let hi = lh + n0.u + n1.v;
    if hi == f64::NEG_INFINITY {
        return (hi, hi, hi);
    }
    let lam = (n0.u - n1.u) / h;
    let mu = (n1.v - n0.v) / h;
    let mid = if lam.is_finite() && mu.is_finite() {
        lh + n0.u + n0.v + ln_mean_exp((lam - mu) * h)
    } else {
        log_add_exp(lo, hi) - std::f64::consts::LN_2
    };
    (lo, mid.clamp(lo, hi), hi)
}

/// `ln[(1 − e^{−s})/s]`, the log of the mean of `e^{−st}` over `t ∈ [0, 1]`.
fn ln_mean_exp(s: f64) -> f64 {
    if s.abs() < 1e-10 {
        -0.5 * s
    } else if s > 0.0 {
        log1m_exp(-s) - s.ln()
    } else {
        -s + log1m_exp(s) - (-s).ln()
    }
}

/// Weight `w` with `∫_{cell} Ḡ(x−y) F(dy) ≈ ΔF · Ḡ(x−b) · w` when `F̄` falls at
/// log-rate `λ` and `Ḡ(x−·)` rises at log-rate `μ` across a cell of width `h`.
/// Exact when both are exponential on the cell.
pub(crate) fn ln_cell_weight(lam: f64, mu: f64, h: f64) -> f64 {
    if lam.is_infinite() {
        // all of the cell's mass sits at its left end
        return -mu * h;
    }
    if mu.is_infinite() {
        return f64::NEG_INFINITY;
    }
    let r = lam * h;
    let norm = if r < 1e-10 { 0.5 * r } else { (r / -(-r).exp_m1()).ln() };
    norm - mu * h + ln_mean_exp((lam - mu) * h)
}

struct Cell {
    n0: Node,
    n1: Node,
    lo: f64,
    mid: f64,
    hi: f64,
    /// `e^{hi} − e^{lo}` relative to the current reference
    width: f64,
}

impl Cell {
    fn new(n0: Node, n1: Node, (lo, mid, hi): (f64, f64, f64)) -> Self {
        Cell {
            n0,
            n1,
            lo,
            mid,
            hi,
            width: 0.0,
        }
    }
}

/// Running totals of the refinement, linear and scaled by `e^{-reference}`.
struct Sums {
    heap: BinaryHeap<Cell>,
    reference: f64,
    width: f64,
    mid: f64,
    /// scaled upper sum; exactly 1 right after a rebase
    upper: f64,
}

impl Sums {
    fn scale(&self, l: f64) -> f64 {
        (l - self.reference).exp()
    }

    /// Recomputes the reference from the current upper sum and rescales every cell.
    fn rebase(cells: Vec<Cell>, exact: f64) -> Self {
        let mut rl = LogSum::new();
        rl.add(exact);
        for c in &cells {
            rl.add(c.hi);
        }
        let mut st = Sums {
            heap: BinaryHeap::with_capacity(2 * cells.len()),
            reference: rl.value(),
            width: 0.0,
            mid: 0.0,
            upper: 0.0,
        };
        if st.reference == f64::NEG_INFINITY {
            return st;
        }
        st.mid = st.scale(exact);
        st.upper = st.mid;
        for mut c in cells {
            c.width = st.scale(c.hi) - st.scale(c.lo);
            st.width += c.width;
            st.mid += st.scale(c.mid);
            st.upper += st.scale(c.hi);
            st.heap.push(c);
        }
        st
    }

    fn replace(&mut self, old: &Cell, new: [Cell; 2]) {
        self.width -= old.width;
        self.mid -= self.scale(old.mid);
        self.upper -= self.scale(old.hi);
        for mut c in new {
            c.width = self.scale(c.hi) - self.scale(c.lo);
            self.width += c.width;
            self.mid += self.scale(c.mid);
            self.upper += self.scale(c.hi);
            self.heap.push(c);
        }
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.width
            .total_cmp(&other.width)
            .then_with(|| other.n0.y.total_cmp(&self.n0.y))
    }
}

/// Worst-first bracket refinement of `Σ cells` over `[a, b]`, plus a fixed exact term.
fn adaptive<E>(eval: E, cell: CellFn, a: f64, b: f64, exact: f64, x: f64, cfg: &ConvConfig) -> Result<TailBracket>
where
    E: Fn(f64) -> Result<Node>,
{
    let n = cfg.initial_cells.max(1);
    let mut nodes = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let y = if i == n { b } else { a + (b - a) * i as f64 / n as f64 };
        nodes.push(eval(y)?);
    }
    let raw: Vec<Cell> = nodes
        .windows(2)
        .map(|w| Cell::new(w[0], w[1], cell(&w[0], &w[1])))
        .collect();
    let mut state = Sums::rebase(raw, exact);
    if state.reference == f64::NEG_INFINITY {
        return Ok(TailBracket::exact(f64::NEG_INFINITY));
    }
    let cap = cfg.max_cells();
    let fail = |st: &Sums| Error::Tolerance {
        x,
        width: st.width / st.mid,
        tol: cfg.rel_tol,
        estimate: st.reference + st.mid.ln(),
    };
    while state.width > cfg.rel_tol * state.mid {
        // running sums lose their digits once they fall far below the reference
        if state.upper < 1e-6 {
            state = Sums::rebase(state.heap.into_vec(), exact);
            continue;
        }
        if state.heap.len() >= cap {
            return Err(fail(&state));
        }
        let c = state.heap.pop().expect("nonempty");
        let ym = 0.5 * (c.n0.y + c.n1.y);
        if ym <= c.n0.y || ym >= c.n1.y {
            state.heap.push(c);
            return Err(fail(&state));
        }
        let nm = eval(ym)?;
        let left = Cell::new(c.n0, nm, cell(&c.n0, &nm));
        let right = Cell::new(nm, c.n1, cell(&nm, &c.n1));
        state.replace(&c, [left, right]);
    }
    let heap = state.heap;
    // re-sum in position order so the result does not depend on refinement history
    let mut cells = heap.into_vec();
    cells.sort_by(|p, q| p.n0.y.total_cmp(&q.n0.y));
    let (mut lo, mut md, mut hi) = (LogSum::new(), LogSum::new(), LogSum::new());
    for s in [&mut lo, &mut md, &mut hi] {
        s.add(exact);
    }
    for c in &cells {
        lo.add(c.lo);
        md.add(c.mid);
        hi.add(c.hi);
    }
    Ok(TailBracket {
        log_tail: md.value(),
        log_lower: lo.value(),
        log_upper: hi.value(),
    })
}

/// `F^{∗n}`: exact for atomic input, tabulated on `cfg.grid` otherwise.
pub fn self_conv_n(f: &Distribution, n: usize) -> Result<Distribution> {
    self_conv_n_with(f, n, &ConvConfig::default())
}

pub fn self_conv_n_with(f: &Distribution, n: usize, cfg: &ConvConfig) -> Result<Distribution> {
    if n == 0 {
        return Err(Error::Precondition("convolution power needs n >= 1".into()));
    }
    if n == 1 {
        return Ok(f.clone());
    }
    if f.is_atomic() {
        // binary powering keeps intermediate atom counts small
        let mut result: Option<Distribution> = None;
        let mut base = f.clone();
        let mut k = n;
        loop {
            if k & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => conv_atomic_with(&r, &base, cfg)?,
                });
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            base = conv_atomic_with(&base, &base, cfg)?;
        }
        return Ok(result.expect("n >= 1"));
    }
    let powers = grid_powers(f, n, cfg)?;
    let last = powers.into_iter().last().expect("n >= 2");
    build_grid(cfg.grid.dx, last.mid, Some(last.err))
}

/// Tabulated tail with a symmetric log-bracket half-width at each grid point.
struct GridTail {
    mid: Vec<f64>,
    err: Vec<f64>,
}

/// `F, F^{∗2}, …, F^{∗n}` on the configured grid.
fn grid_powers(f: &Distribution, n: usize, cfg: &ConvConfig) -> Result<Vec<GridTail>> {
    let spec = cfg.grid;
    let k = spec.len();
    let work = (k * k / 2).saturating_mul(n - 1);
    if work > cfg.grid_work_budget {
        return Err(Error::Budget {
            name: "grid convolution cells",
            needed: work,
            limit: cfg.grid_work_budget,
        });
    }
    let top = spec.x(k - 1);
    if top > f.max_x() * (1.0 + 1e-12) {
        return Err(Error::OutOfRange { x: top, max: f.max_x() });
    }
    let mut lf = Vec::with_capacity(k);
    for j in 0..k {
        let v = f.log_tail(spec.x(j))?;
        lf.push(if j > 0 { v.min(lf[j - 1]) } else { v });
    }
    let fcells = FCells::new(&lf, spec.dx);
    let mut out = vec![GridTail {
        mid: lf.clone(),
        err: vec![0.0; k],
    }];
    for _ in 1..n {
        let next = grid_step(&lf, &fcells, out.last().expect("nonempty"), spec.dx);
        out.push(next);
    }
    Ok(out)
}

struct FCells {
    /// `ln F{(x_k, x_{k+1}]}`
    lmass: Vec<f64>,
    lam: Vec<f64>,
    /// `ln F{0}`
    atom0: f64,
}

impl FCells {
    fn new(lf: &[f64], dx: f64) -> Self {
        let lmass = lf.windows(2).map(|w| log_diff_exp(w[0], w[1])).collect();
        let lam = lf.windows(2).map(|w| (w[0] - w[1]) / dx).collect();
        FCells {
            lmass,
            lam,
            atom0: log1m_exp(lf[0].min(0.0)),
        }
    }
}

/// One grid convolution `F ∗ G` with `G` tabulated on the same grid.
///
/// For `y` in cell `k` the argument `x_j − y` sweeps cell `j−k−1` of `G`, so the
/// bracket only needs grid values of `G`.
fn grid_step(lf: &[f64], fc: &FCells, g: &GridTail, dx: f64) -> GridTail {
    let k = lf.len();
    let mu: Vec<f64> = g.mid.windows(2).map(|w| (w[0] - w[1]) / dx).collect();
    let rows: Vec<(f64, f64, f64)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut lo = LogSum::new();
            let mut md = LogSum::new();
            let mut hi = LogSum::new();
            let base = log_add_exp(lf[j], fc.atom0 + g.mid[j]);
            lo.add(log_add_exp(lf[j], fc.atom0 + g.mid[j] - g.err[j]));
            md.add(base);
            hi.add(log_add_exp(lf[j], fc.atom0 + g.mid[j] + g.err[j]));
            for c in 0..j {
                let m = fc.lmass[c];
                if m == f64::NEG_INFINITY {
                    continue;
                }
                let up = j - c - 1;
                let l = m + g.mid[j - c] - g.err[j - c];
                let h = m + g.mid[up] + g.err[up];
                let e = (m + g.mid[up] + ln_cell_weight(fc.lam[c], mu[up], dx)).clamp(l, h);
                lo.add(l);
                md.add(e);
                hi.add(h);
            }
            (lo.value(), md.value(), hi.value())
        })
        .collect();
    let mut mid = Vec::with_capacity(k);
    let mut err = Vec::with_capacity(k);
    for (j, &(l, m, h)) in rows.iter().enumerate() {
        let m = if j == 0 { m.min(0.0) } else { m.min(mid[j - 1]) };
        mid.push(m);
        let e = (h - m).max(m - l);
        err.push(if e.is_finite() { e.max(0.0) } else { 0.0 });
    }
    GridTail { mid, err }
}

/// Law of an independent stopping time `τ ≥ 1`, truncated at `N`.
#[derive(Debug, Clone, Serialize)]
pub struct StoppingTimePmf {
    /// `ln P(τ = n)` for `n = 1..=N`
    log_pmf: Vec<f64>,
    mean: f64,
    /// `ln P(τ > N)`
    log_neglected: f64,
    /// `κ > 0` with `E e^{κτ} < ∞`, when known.
    light_tail_margin: Option<f64>,
}

impl StoppingTimePmf {
    pub const TRUNCATION_MASS: f64 = 1e-12;

    pub fn degenerate(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Precondition("stopping time must be >= 1".into()));
        }
        let mut log_pmf = vec![f64::NEG_INFINITY; n];
        log_pmf[n - 1] = 0.0;
        Ok(StoppingTimePmf {
            log_pmf,
            mean: n as f64,
            log_neglected: f64::NEG_INFINITY,
            light_tail_margin: Some(f64::INFINITY),
        })
    }

    /// `P(τ = n) = (1 − q) q^{n−1}`, truncated once `P(τ > N) ≤ 1e−12`.
    pub fn geometric(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::ParamRange {
                name: "q",
                value: q,
                expected: "0 < q < 1",
            });
        }
        let lq = q.ln();
        let n = (Self::TRUNCATION_MASS.ln() / lq).ceil().max(1.0) as usize;
        let l1q = (-q).ln_1p();
        let log_pmf = (0..n).map(|i| l1q + i as f64 * lq).collect();
        Ok(StoppingTimePmf {
            log_pmf,
            mean: 1.0 / (1.0 - q),
            log_neglected: n as f64 * lq,
            light_tail_margin: Some(-0.5 * lq),
        })
    }

    /// From explicit probabilities `P(τ = 1), …, P(τ = N)` summing to one.
    pub fn from_probs(p: &[f64]) -> Result<Self> {
        if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Spec("stopping-time probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > Self::TRUNCATION_MASS {
            return Err(Error::Normalization { log_total: total.ln() });
        }
        let mean = p.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
        Ok(StoppingTimePmf {
            log_pmf: p.iter().map(|v| v.ln()).collect(),
            mean,
            log_neglected: f64::NEG_INFINITY,
            light_tail_margin: Some(f64::INFINITY),
        })
    }

    pub fn log_pmf(&self) -> &[f64] {
        &self.log_pmf
    }
    pub fn mean(&self) -> f64 {
        self.mean
    }
    pub fn truncation_index(&self) -> usize {
        self.log_pmf.len()
    }
    pub fn log_neglected_mass(&self) -> f64 {
        self.log_neglected
    }
    pub fn light_tail_margin(&self) -> Option<f64> {
        self.light_tail_margin
    }
}

/// Tail of `ξ_1 + ⋯ + ξ_τ`, mixed over `n ≤ N`; the omitted mass is `tau.log_neglected_mass()`.
pub fn stopped_sum(f: &Distribution, tau: &StoppingTimePmf) -> Result<Distribution> {
    stopped_sum_with(f, tau, &ConvConfig::default())
}

pub fn stopped_sum_with(f: &Distribution, tau: &StoppingTimePmf, cfg: &ConvConfig) -> Result<Distribution> {
    let nmax = tau.truncation_index();
    if f.is_atomic() {
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        let mut power = f.clone();
        let mut total = 0usize;
        for n in 1..=nmax {
            if n > 1 {
                power = conv_atomic_with(&power, f, cfg)?;
            }
            let w = tau.log_pmf[n - 1];
            if w == f64::NEG_INFINITY {
                continue;
            }
            let a = power.as_atomic().expect("atomic power");
            total += a.len();
            if total > cfg.atom_budget {
                return Err(Error::Budget {
                    name: "stopped-sum atoms",
                    needed: total,
                    limit: cfg.atom_budget,
                });
            }
            pairs.extend(a.points().iter().zip(a.log_masses()).map(|(&p, &m)| (p, m + w)));
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (pts, lms) = merge_sorted(pairs);
        let truncation = if tau.log_neglected == f64::NEG_INFINITY && f.as_atomic().and_then(|a| a.truncation()).is_none()
        {
            None
        } else {
            Some(Truncation {
                log_neglected_mass: Some(tau.log_neglected),
            })
        };
        return build_atomic(pts, lms, truncation, None, false);
    }
    let powers = grid_powers(f, nmax, cfg)?;
    let k = cfg.grid.len();
    let mut mid = vec![f64::NEG_INFINITY; k];
    let mut lo = vec![f64::NEG_INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for (p, w) in powers.iter().zip(&tau.log_pmf) {
        if *w == f64::NEG_INFINITY {
            continue;
        }
        for j in 0..k {
            mid[j] = log_add_exp(mid[j], w + p.mid[j]);
            lo[j] = log_add_exp(lo[j], w + p.mid[j] - p.err[j]);
            hi[j] = log_add_exp(hi[j], w + p.mid[j] + p.err[j]);
        }
    }
    // renormalize over the retained mass
    let norm = mid[0].max(crate::logspace::log_sum_exp(&tau.log_pmf));
    let mut err = Vec::with_capacity(k);
    for j in 0..k {
        mid[j] -= norm;
        if j > 0 {
            mid[j] = mid[j].min(mid[j - 1]);
        }
        let e = (hi[j] - norm - mid[j]).max(mid[j] - (lo[j] - norm));
        err.push(if e.is_finite() { e.max(0.0) } else { 0.0 });
    }
    mid[0] = 0.0;
    build_grid(cfg.grid.dx, mid, Some(err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{make_atomic, make_parametric};

    fn exp1() -> Distribution {
        make_parametric("exponential", &[1.0]).unwrap()
    }

    #[test]
    fn two_point_square() {
        let h = 0.5f64.ln();
        let f = make_atomic(&[0.0, 1.0], &[h, h]).unwrap();
        let c = conv_atomic(&f, &f).unwrap();
        let a = c.as_atomic().unwrap();
        assert_eq!(a.points(), &[0.0, 1.0, 2.0]);
        let m: Vec<f64> = a.log_masses().iter().map(|v| v.exp()).collect();
        for (got, want) in m.iter().zip([0.25, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn erlang_two() {
        for x in [0.5, 3.0, 10.0, 20.0] {
            let b = conv_tail_at(&exp1(), &exp1(), x).unwrap();
            let want = -x + (1.0 + x as f64).ln();
            assert!((b.log_tail - want).abs() < 1e-9, "x={x}: {} vs {want}", b.log_tail);
            assert!(b.log_lower <= want + 1e-12 && want <= b.log_upper + 1e-12);
            assert!(b.rel_width() <= 1e-3);
        }
    }

    #[test]
    fn at_zero() {
        let p = make_parametric("pareto", &[2.0]).unwrap();
        assert_eq!(conv_tail_at(&p, &exp1(), 0.0).unwrap().log_tail, 0.0);
        let h = 0.5f64.ln();
        let a = make_atomic(&[0.0, 1.0], &[h, h]).unwrap();
        let v = conv_tail_at(&a, &a, 0.0).unwrap().log_tail;
        assert!((v.exp() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn mixed_atomic_and_continuous() {
        // δ_1 ∗ Exp(1): tail e^{-(x-1)} for x ≥ 1
        let d = make_atomic(&[1.0], &[0.0]).unwrap();
        for x in [0.5, 1.0, 2.5] {
            let got = conv_tail_at(&exp1(), &d, x).unwrap().log_tail;
            let want = if x < 1.0 { 0.0 } else { -(x - 1.0) };
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn tail_product_exponential() {
        let b = tail_product_integral(&exp1(), 2.0).unwrap();
        assert!((b.log_tail - (2.0f64.ln() - 2.0)).abs() < 1e-9);
        assert_eq!(tail_product_integral(&exp1(), 0.0).unwrap().log_tail, f64::NEG_INFINITY);
    }

    #[test]
    fn erlang_three_on_grid() {
        let cfg = ConvConfig {
            grid: GridSpec::new(0.005, 20.0).unwrap(),
            ..ConvConfig::default()
        };
        let g = self_conv_n_with(&exp1(), 3, &cfg).unwrap();
        for x in [1.0f64, 4.0, 10.0, 19.0] {
            let want = (-x).exp() * (1.0 + x + x * x / 2.0);
            let got = g.tail(x).unwrap();
            assert!((got - want).abs() < 1e-6, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn deterministic_shift_power() {
        let d = make_atomic(&[1.0], &[0.0]).unwrap();
        let p = self_conv_n(&d, 4).unwrap();
        assert_eq!(p.as_atomic().unwrap().points(), &[4.0]);
        assert!(self_conv_n(&d, 1).unwrap().is_atomic());
    }

    #[test]
    fn atom_budget_enforced() {
        let pts: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let lm = vec![-(100f64.ln()); 100];
        let f = make_atomic(&pts, &lm).unwrap();
        let cfg = ConvConfig {
            atom_budget: 5000,
            ..ConvConfig::default()
        };
        assert!(matches!(conv_atomic_with(&f, &f, &cfg), Err(Error::Budget { .. })));
    }

    #[test]
    fn geometric_compound_of_exponential() {
        // P(τ=n) = 2^{-n}: S_τ ~ Exp(1/2); oracle by direct series over Erlang tails
        let tau = StoppingTimePmf::geometric(0.5).unwrap();
        assert_eq!(tau.mean(), 2.0);
        let cfg = ConvConfig {
            grid: GridSpec::new(0.01, 12.0).unwrap(),
            ..ConvConfig::default()
        };
        let s = stopped_sum_with(&exp1(), &tau, &cfg).unwrap();
        for x in [0.5f64, 2.0, 6.0, 11.0] {
            let mut series = 0.0;
            for n in 1..=80 {
                // Erlang-n tail: e^{-x} Σ_{k<n} x^k/k!
                let mut term = 1.0;
                let mut erl = 0.0;
                for k in 0..n {
                    if k > 0 {
                        term *= x / k as f64;
                    }
                    erl += term;
                }
                series += 0.5f64.powi(n) * (-x).exp() * erl;
            }
            assert!((series - (-x / 2.0).exp()).abs() < 1e-12);
            assert!((s.tail(x).unwrap() - series).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn degenerate_tau_matches_power() {
        let cfg = ConvConfig {
            grid: GridSpec::new(0.05, 10.0).unwrap(),
            ..ConvConfig::default()
        };
        let p = make_parametric("pareto", &[2.0]).unwrap();
        let a = stopped_sum_with(&p, &StoppingTimePmf::degenerate(2).unwrap(), &cfg).unwrap();
        let b = self_conv_n_with(&p, 2, &cfg).unwrap();
        assert_eq!(a.as_grid().unwrap().log_tail(), b.as_grid().unwrap().log_tail());
    }
}
