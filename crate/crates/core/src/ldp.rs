//! Finite-alphabet large-deviation checks: Sanov gaps, the labelled exponential
//! moment condition, entropy identities and the rate-function zero.

use crate::error::{Error, Result};
use crate::graphs::{Alphabet, GraphKind, Graphon, LimitDigraph};
use crate::metrics::{relative_entropy, w1_1d, BLBracket};
use crate::model::{ModelSpec, TimeGrid};
use crate::noise::derive_seed;
use crate::tanaka::{fixed_interaction_measure, solve_limit_process, PicardOptions};
use rayon::prelude::*;

/// `ln n!`.
pub fn ln_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

/// Counts `k_a` of an empirical type on an alphabet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeVector {
    counts: Vec<u64>,
}

impl TypeVector {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() || counts.iter().sum::<u64>() == 0 {
            return Err(Error::invalid("a type needs at least one observation"));
        }
        Ok(TypeVector { counts })
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|&k| k as f64 / n).collect()
    }
}

fn check_law(q: &[f64], t: &TypeVector) -> Result<()> {
    if q.len() != t.counts.len() {
        return Err(Error::size(format!("law on {} symbols against a type on {}", q.len(), t.counts.len())));
    }
    if q.iter().any(|&p| !(p >= 0.0 && p.is_finite())) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("base law must be a probability vector"));
    }
    if q.iter().zip(&t.counts).any(|(&p, &k)| p == 0.0 && k > 0) {
        return Err(Error::invalid("type charges a symbol of zero probability"));
    }
    Ok(())
}

/// `log[N!/Π k_a! · Π q_a^{k_a}]`.
pub fn exact_type_log_probability(q: &[f64], t: &TypeVector) -> Result<f64> {
    check_law(q, t)?;
    let mut lp = ln_factorial(t.n());
    for (&p, &k) in q.iter().zip(&t.counts) {
        lp -= ln_factorial(k);
        if k > 0 {
            lp += k as f64 * p.ln();
        }
    }
    Ok(lp)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanovRow {
    pub n: u64,
    pub counts: Vec<u64>,
    /// `−(1/N) log P(type)`.
    pub rate: f64,
    pub entropy: f64,
    pub gap: f64,
    pub bound: f64,
}

impl SanovRow {
    pub fn passes(&self) -> bool {
        self.gap <= self.bound
    }
}

/// `(A−1)/2 · (log(2πN) + 2)/N` with safety factor 3.
pub fn sanov_bound(alphabet: usize, n: u64) -> f64 {
    let n = n as f64;
    3.0 * (alphabet as f64 - 1.0) / 2.0 * ((std::f64::consts::TAU * n).ln() + 2.0) / n
}

pub fn sanov_gap(q: &[f64], t: &TypeVector) -> Result<SanovRow> {
    let rate = -exact_type_log_probability(q, t)? / t.n() as f64;
    let entropy = relative_entropy(&t.frequencies(), q)?;
    Ok(SanovRow {
        n: t.n(),
        counts: t.counts.clone(),
        rate,
        entropy,
        gap: (rate - entropy).abs(),
        bound: sanov_bound(q.len(), t.n()),
    })
}

/// Every type of size `n` on `a` symbols, in lexicographic order.
pub fn all_types(n: u64, a: usize) -> Vec<TypeVector> {
    fn rec(left: u64, slots: usize, cur: &mut Vec<u64>, out: &mut Vec<TypeVector>) {
        if slots == 1 {
            cur.push(left);
            out.push(TypeVector { counts: cur.clone() });
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(left - k, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if a > 0 && n > 0 {
        rec(n, a, &mut Vec::new(), &mut out);
    }
    out
}

/// Sanov rows for every type with `q` charging all charged symbols; types that
/// charge a null symbol are skipped (probability zero, infinite entropy).
pub fn sanov_table(q: &[f64], ns: &[u64]) -> Result<Vec<SanovRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        let types: Vec<TypeVector> = all_types(n, q.len())
            .into_iter()
            .filter(|t| q.iter().zip(&t.counts).all(|(&p, &k)| p > 0.0 || k == 0))
            .collect();
        let mut r: Vec<SanovRow> = types.par_iter().map(|t| sanov_gap(q, t)).collect::<Result<_>>()?;
        rows.append(&mut r);
    }
    Ok(rows)
}

/// Label test functions `φ(ξ, w, ξ')`, all bounded Lipschitz on `[0,1]³`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelTest {
    Zero,
    Weight,
    CoLabelWeight,
    LabelWeight,
    ProductWeight,
    GapWeight,
    CosineWeight,
    SineCoLabel,
    MinLabels,
}

impl LabelTest {
    pub const ALL: [LabelTest; 9] = [
        LabelTest::Zero,
        LabelTest::Weight,
        LabelTest::CoLabelWeight,
        LabelTest::LabelWeight,
        LabelTest::ProductWeight,
        LabelTest::GapWeight,
        LabelTest::CosineWeight,
        LabelTest::SineCoLabel,
        LabelTest::MinLabels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelTest::Zero => "zero",
            LabelTest::Weight => "w",
            LabelTest::CoLabelWeight => "colabel_w",
            LabelTest::LabelWeight => "label_w",
            LabelTest::ProductWeight => "label_colabel_w",
            LabelTest::GapWeight => "gap_w",
            LabelTest::CosineWeight => "cos_gap_centered_w",
            LabelTest::SineCoLabel => "sin_colabel_w",
            LabelTest::MinLabels => "min_labels",
        }
    }

    pub fn eval(self, xi: f64, w: f64, co: f64) -> f64 {
        use std::f64::consts::{PI, TAU};
        match self {
            LabelTest::Zero => 0.0,
            LabelTest::Weight => w,
            LabelTest::CoLabelWeight => co * w,
            LabelTest::LabelWeight => xi * w,
            LabelTest::ProductWeight => xi * co * w,
            LabelTest::GapWeight => (xi - co).abs() * w,
            LabelTest::CosineWeight => (w - 0.5) * (TAU * (xi - co)).cos(),
            LabelTest::SineCoLabel => (PI * co).sin() * w,
            LabelTest::MinLabels => xi.min(co),
        }
    }

    /// Depends on neither label.
    pub fn is_label_free(self) -> bool {
        matches!(self, LabelTest::Zero | LabelTest::Weight)
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    let n = points.max(1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn composite(panels: usize, points: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(points);
    let h = 1.0 / panels as f64;
    let mut nodes = Vec::with_capacity(panels * points);
    let mut weights = Vec::with_capacity(panels * points);
    for p in 0..panels {
        for (a, b) in x.iter().zip(&w) {
            nodes.push((p as f64 + a) * h);
            weights.push(b * h);
        }
    }
    (nodes, weights)
}

/// Digraph laws covered by the exponential-moment check: `w = W(ξ, ξ', u)` with a
/// finite symbol `u` shared by a whole column.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolLaw {
    pub graphon: Graphon,
    pub alphabet: Alphabet,
}

impl SymbolLaw {
    pub fn from_kind(kind: &GraphKind) -> Result<Self> {
        match kind {
            GraphKind::ErdosRenyi(p) => Ok(SymbolLaw { graphon: Graphon::Const(1.0), alphabet: Alphabet::bernoulli(*p) }),
            GraphKind::RandomEnvironment { graphon, alphabet } => {
                Ok(SymbolLaw { graphon: graphon.clone(), alphabet: alphabet.clone() })
            }
            _ => Err(Error::Unsupported("exponential-moment check needs a finite weight alphabet".into())),
        }
    }

    fn weight(&self, xi: f64, co: f64, u: f64) -> f64 {
        LimitDigraph::Mixture { graphon: self.graphon.clone(), alphabet: self.alphabet.clone() }.weight(xi, co, u)
    }
}

/// `log Σ_u p_u e^{a_u}` computed stably.
fn log_mean_exp(probs: &[f64], a: &[f64]) -> f64 {
    let m = a.iter().zip(probs).filter(|(_, &p)| p > 0.0).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
    m + probs.iter().zip(a).filter(|(&p, _)| p > 0.0).map(|(p, x)| p * (x - m).exp()).sum::<f64>().ln()
}

const CELL_POINTS: usize = 4;
const LIMIT_PANELS: usize = 256;
const LIMIT_POINTS: usize = 8;

/// Left side at size `n`: `(1/N) Σ_j log E exp ∫ φ(ξ, w^{[ξ]_N, j}, j/N) dξ`.
pub fn exponential_moment_left(law: &SymbolLaw, phi: LabelTest, n: usize) -> f64 {
    let (x, w) = gauss_legendre(CELL_POINTS);
    let a = &law.alphabet;
    let sum: f64 = (1..=n)
        .into_par_iter()
        .map(|j| {
            let co = j as f64 / n as f64;
            let expo: Vec<f64> = a
                .values
                .iter()
                .map(|&u| {
                    (1..=n)
                        .map(|i| {
                            let wt = law.weight(i as f64 / n as f64, co, u);
                            x.iter()
                                .zip(&w)
                                .map(|(&t, &q)| q * phi.eval((i as f64 - 1.0 + t) / n as f64, wt, co))
                                .sum::<f64>()
                                / n as f64
                        })
                        .sum()
                })
                .collect();
            log_mean_exp(&a.probs, &expo)
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    sum / n as f64
}

/// Right side: `∫ log E_u exp ∫ φ(ξ, W(ξ, ξ', u), ξ') dξ dξ'`.
pub fn exponential_moment_right(law: &SymbolLaw, phi: LabelTest) -> f64 {
    let (x, w) = composite(LIMIT_PANELS, LIMIT_POINTS);
    let a = &law.alphabet;
    let parts: Vec<f64> = x
        .par_iter()
        .zip(w.par_iter())
        .map(|(&co, &wc)| {
            let expo: Vec<f64> = a
                .values
                .iter()
                .map(|&u| x.iter().zip(&w).map(|(&xi, &q)| q * phi.eval(xi, law.weight(xi, co, u), co)).sum())
                .collect();
            wc * log_mean_exp(&a.probs, &expo)
        })
        .collect();
    parts.into_iter().sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub test: LabelTest,
    pub n: usize,
    pub left: f64,
    pub right: f64,
    pub difference: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSanovReport {
    pub rows: Vec<MomentRow>,
    /// Empirical decay order of the difference per test; `None` when the
    /// difference vanishes at every N.
    pub orders: Vec<(LabelTest, Option<f64>)>,
}

impl LabeledSanovReport {
    pub fn max_difference(&self, n: usize) -> f64 {
        self.rows.iter().filter(|r| r.n == n).map(|r| r.difference).fold(0.0, f64::max)
    }

    pub fn min_order(&self) -> Option<f64> {
        self.orders.iter().filter_map(|(_, o)| *o).reduce(f64::min)
    }
}

/// Below this the left and right sides agree to rounding.
pub const EXACT_DIFFERENCE: f64 = 1e-12;

/// Least-squares slope of `y` against `x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn labeled_sanov_check(kind: &GraphKind, ns: &[usize], tests: &[LabelTest]) -> Result<LabeledSanovReport> {
    let law = SymbolLaw::from_kind(kind)?;
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::config("exponential-moment check needs positive sizes"));
    }
    let mut rows = Vec::new();
    let mut orders = Vec::new();
    for &phi in tests {
        let right = exponential_moment_right(&law, phi);
        let mut diffs = Vec::new();
        for &n in ns {
            let left = exponential_moment_left(&law, phi, n);
            let difference = (left - right).abs();
            diffs.push(difference);
            rows.push(MomentRow { test: phi, n, left, right, difference });
        }
        let order = if diffs.iter().all(|&d| d < EXACT_DIFFERENCE) || ns.len() < 2 {
            None
        } else {
            let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
            Some(-loglog_slope(&xs, &diffs.iter().map(|d| d.max(f64::MIN_POSITIVE)).collect::<Vec<_>>()))
        };
        orders.push((phi, order));
    }
    Ok(LabeledSanovReport { rows, orders })
}

/// Both sides of `H(ν|μ) = H(ν₁|μ₁) + Σ_a ν₁(a) H(ν^a|μ^a)` for joint laws on `rows × cols`.
pub fn marginal_decomposition(nu: &[f64], mu: &[f64], rows: usize, cols: usize) -> Result<(f64, f64)> {
    if nu.len() != rows * cols || mu.len() != rows * cols {
        return Err(Error::size("joint laws do not match the product shape"));
    }
    let lhs = relative_entropy(nu, mu)?;
    let marg = |p: &[f64]| p.chunks_exact(cols).map(|r| r.iter().sum()).collect::<Vec<f64>>();
    let (n1, m1) = (marg(nu), marg(mu));
    let mut rhs = relative_entropy(&n1, &m1)?;
    for a in 0..rows {
        if n1[a] > 0.0 {
            let cond = |p: &[f64], s: f64| p[a * cols..(a + 1) * cols].iter().map(|v| v / s).collect::<Vec<f64>>();
            rhs += n1[a] * relative_entropy(&cond(nu, n1[a]), &cond(mu, m1[a]))?;
        }
    }
    Ok((lhs, rhs))
}

/// `H(ν | ψ_# μ)` together with the smallest `H(γ | μ)` found over a simplex grid of
/// couplings `γ` with `ψ_# γ = ν` (`resolution` steps per fibre).
pub fn entropy_contraction(nu: &[f64], mu: &[f64], psi: &[usize], resolution: usize) -> Result<(f64, f64)> {
    if psi.len() != mu.len() || psi.iter().any(|&y| y >= nu.len()) {
        return Err(Error::size("ψ must map every point of X into Y"));
    }
    if mu.len() > 6 {
        return Err(Error::config("brute-force contraction is limited to |X| ≤ 6"));
    }
    let mut push = vec![0.0; nu.len()];
    for (x, &y) in psi.iter().enumerate() {
        push[y] += mu[x];
    }
    let lhs = relative_entropy(nu, &push)?;
    let mut best = 0.0;
    for (y, &ny) in nu.iter().enumerate() {
        if ny == 0.0 {
            continue;
        }
        let fibre: Vec<usize> = (0..mu.len()).filter(|&x| psi[x] == y).collect();
        if fibre.is_empty() {
            return Ok((lhs, f64::INFINITY));
        }
        // Minimize Σ γ log(γ/μ) over γ = ν(y)·(simplex point) on the fibre.
        let mut fibre_best = f64::INFINITY;
        let mut counts = vec![0usize; fibre.len()];
        loop {
            let used: usize = counts[..fibre.len() - 1].iter().sum();
            if used <= resolution {
                counts[fibre.len() - 1] = resolution - used;
                let h: f64 = fibre
                    .iter()
                    .zip(&counts)
                    .map(|(&x, &c)| {
                        let g = ny * c as f64 / resolution as f64;
                        if g == 0.0 {
                            0.0
                        } else if mu[x] == 0.0 {
                            f64::INFINITY
                        } else {
                            g * (g / mu[x]).ln()
                        }
                    })
                    .sum();
                fibre_best = fibre_best.min(h);
            }
            // Odometer over the free coordinates.
            let mut k = 0;
            while k + 1 < fibre.len() {
                counts[k] += 1;
                if counts[k] <= resolution {
                    break;
                }
                counts[k] = 0;
                k += 1;
            }
            if k + 1 >= fibre.len() {
                break;
            }
        }
        best += fibre_best;
    }
    Ok((lhs, best))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateZeroReport {
    pub label: f64,
    pub m_ref: usize,
    /// Bracket for `d_BL(π̄^ξ, (Id, 𝕐^{π̄^ξ})_# ᾱ(ξ))`.
    pub residual: BLBracket,
    pub sweeps: usize,
    /// Sup over time nodes of the per-axis W1 between the state marginal of `π̄^ξ`
    /// and an independent reference ensemble; only for label-independent rows.
    pub marginal_consistency: Option<f64>,
    pub threshold: f64,
    /// `(value, mass)` pairs of the weight marginal of `π̄^ξ`.
    pub weight_marginal: Vec<(f64, f64)>,
}

impl RateZeroReport {
    pub fn passes(&self) -> bool {
        self.residual.upper <= self.threshold && self.marginal_consistency.is_none_or(|c| c <= self.threshold)
    }
}

/// Rows of the limit do not depend on the label.
pub fn is_label_free(limit: &LimitDigraph) -> bool {
    matches!(
        limit,
        LimitDigraph::Graphon(Graphon::Const(_)) | LimitDigraph::Mixture { graphon: Graphon::Const(_), .. }
    )
}

pub fn rate_zero_residual(
    model: &ModelSpec,
    limit: &LimitDigraph,
    label: f64,
    m_ref: usize,
    grid: &TimeGrid,
    opts: &PicardOptions,
    seed: u64,
) -> Result<RateZeroReport> {
    let fim = fixed_interaction_measure(model, limit, label, m_ref, grid, opts, seed)?;
    let marginal_consistency = if is_label_free(limit) {
        let reference = solve_limit_process(model, limit, m_ref, grid, opts, derive_seed(seed, 0x7A7E))?;
        let d = model.dim;
        let mut worst: f64 = 0.0;
        for k in 0..=grid.steps() {
            let a = fim.states_at(k);
            let b = reference.atom_states_at(k);
            for axis in 0..d {
                let pa: Vec<f64> = a.iter().skip(axis).step_by(d).copied().collect();
                let pb: Vec<f64> = b.iter().skip(axis).step_by(d).copied().collect();
                worst = worst.max(w1_1d(&pa, &pb)?);
            }
        }
        Some(worst)
    } else {
        None
    };
    Ok(RateZeroReport {
        label,
        m_ref,
        residual: fim.residual.clone(),
        sweeps: fim.residuals.len(),
        marginal_consistency,
        threshold: 5.0 / (m_ref as f64).sqrt(),
        weight_marginal: fim.weight_marginal(),
    })
}
