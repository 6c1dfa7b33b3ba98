//! Weight matrices, empirical digraph measures and their limits.

use crate::error::{Error, Result};
use crate::metrics::{bl_bracket, AtomicMeasure, BLBracket, Block, ProductSpace};
use crate::model::{Geometry, InputDatum, ModelSpec, TimeGrid};
use crate::noise::{domain, make_input, stream_rng, Population};
use rand::seq::SliceRandom;
use rand::Rng;
use std::f64::consts::TAU;
use std::borrow::Cow;
use std::io::{BufRead, Write};
use std::sync::Arc;

pub const MAX_ALPHABET: usize = 16;

/// Catalogue of graphons `W : [0,1]² → [0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Graphon {
    Const(f64),
    /// `W(ξ, ξ') = ξ`.
    Row,
    /// `W(ξ, ξ') = ξξ'`.
    Product,
    /// `W(ξ, ξ') = ½(1 + cos 2πξ)`.
    RowCosine,
    /// `W(ξ, ξ') = ½(1 + cos 2π(ξ − ξ'))`.
    Cosine,
    /// `W(ξ, ξ') = min(ξ, ξ')`.
    Min,
    /// `W(ξ, ξ') = exp(−|ξ − ξ'|)`.
    ExpDecay,
}

impl Graphon {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Graphon::Const(c) => c,
            Graphon::Row => x,
            Graphon::Product => x * y,
            Graphon::RowCosine => 0.5 * (1.0 + (TAU * x).cos()),
            Graphon::Cosine => 0.5 * (1.0 + (TAU * (x - y)).cos()),
            Graphon::Min => x.min(y),
            Graphon::ExpDecay => (-(x - y).abs()).exp(),
        }
    }

    /// Lipschitz constant in the row label.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Graphon::Const(_) => 0.0,
            Graphon::Row | Graphon::Product | Graphon::Min | Graphon::ExpDecay => 1.0,
            Graphon::RowCosine | Graphon::Cosine => std::f64::consts::PI,
        }
    }

    /// Rank of a separable expansion `Σ_r a_r(ξ) b_r(ξ')`, if one is known.
    pub fn rank(&self) -> Option<usize> {
        match self {
            Graphon::Const(_) | Graphon::Row | Graphon::Product | Graphon::RowCosine => Some(1),
            Graphon::Cosine => Some(3),
            Graphon::Min | Graphon::ExpDecay => None,
        }
    }

    fn row_factor(&self, r: usize, x: f64) -> f64 {
        match (self, r) {
            (Graphon::Const(c), _) => *c,
            (Graphon::Row, _) | (Graphon::Product, _) => x,
            (Graphon::RowCosine, _) => 0.5 * (1.0 + (TAU * x).cos()),
            (Graphon::Cosine, 0) => 0.5,
            (Graphon::Cosine, 1) => 0.5 * (TAU * x).cos(),
            (Graphon::Cosine, _) => 0.5 * (TAU * x).sin(),
            _ => f64::NAN,
        }
    }

    fn col_factor(&self, r: usize, y: f64) -> f64 {
        match (self, r) {
            (Graphon::Product, _) => y,
            (Graphon::Cosine, 1) => (TAU * y).cos(),
            (Graphon::Cosine, 2) => (TAU * y).sin(),
            _ => 1.0,
        }
    }

    fn check(&self) -> Result<()> {
        match *self {
            Graphon::Const(c) if !(0.0..=1.0).contains(&c) => {
                Err(Error::config(format!("graphon value {c} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Finite symbol alphabet with its law.
#[derive(Clone, Debug, PartialEq)]
pub struct Alphabet {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Alphabet {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let a = Alphabet { values, probs };
        a.check()?;
        Ok(a)
    }

    pub fn bernoulli(p: f64) -> Self {
        Alphabet { values: vec![0.0, 1.0], probs: vec![1.0 - p, p] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.probs.len() {
            return Err(Error::config("alphabet needs matching values and probabilities"));
        }
        if self.values.len() > MAX_ALPHABET {
            return Err(Error::config(format!("alphabet has more than {MAX_ALPHABET} symbols")));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config("alphabet values must lie in [0, 1]"));
        }
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (self.probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::config("alphabet probabilities must form a distribution"));
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (v, p) in self.values.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *v;
            }
        }
        *self.values.last().expect("non-empty alphabet")
    }

    /// Symbol counts for `m` draws by largest remainders, so frequencies are as close to the law as possible.
    pub fn balanced_counts(&self, m: usize) -> Vec<usize> {
        let raw: Vec<f64> = self.probs.iter().map(|p| p * m as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
        let missing = m - counts.iter().sum::<usize>();
        for &a in order.iter().take(missing) {
            counts[a] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphKind {
    Constant(f64),
    ErdosRenyi(f64),
    Graphon(Graphon),
    /// `w_ij = u_j · W(i/N, j/N)` with one symbol `u_j` per column.
    RandomEnvironment { graphon: Graphon, alphabet: Alphabet },
    /// Bernoulli(c/N) entries, without rescaling.
    SparseErdosRenyi(f64),
}

/// Separable representation `w_ij = Σ_r a[i][r] · b[r][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRank {
    pub rank: usize,
    pub rows: usize,
    pub cols: usize,
    /// `rows × rank`.
    pub a: Vec<f64>,
    /// `rank × cols`.
    pub b: Vec<f64>,
}

impl LowRank {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (0..self.rank).map(|r| self.a[i * self.rank + r] * self.b[r * self.cols + j]).sum()
    }

    /// Rank-one form with constant row factor 1 and the given column weights.
    pub fn single_row(weights: &[f64], rows: usize) -> Self {
        LowRank { rank: 1, rows, cols: weights.len(), a: vec![1.0; rows], b: weights.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    /// Entries are evaluated from the factors on demand.
    Separable(LowRank),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    storage: Storage,
    kind: Option<GraphKind>,
}

impl WeightMatrix {
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::size(format!("{} entries for an {n}×{n} matrix", entries.len())));
        }
        if let Some(bad) = entries.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::invalid(format!("weight {bad} outside [0, 1]")));
        }
        Ok(WeightMatrix { n, storage: Storage::Dense(entries), kind: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> Option<&GraphKind> {
        self.kind.as_ref()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(e) => e[i * self.n + j],
            Storage::Separable(lr) => lr.entry(i, j),
        }
    }

    pub fn row(&self, i: usize) -> Cow<'_, [f64]> {
        match &self.storage {
            Storage::Dense(e) => Cow::Borrowed(&e[i * self.n..(i + 1) * self.n]),
            Storage::Separable(lr) => Cow::Owned((0..self.n).map(|j| lr.entry(i, j)).collect()),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(e) => e.clone(),
            Storage::Separable(_) => (0..self.n).flat_map(|i| self.row(i).into_owned()).collect(),
        }
    }

    pub fn dense_entries(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Dense(e) => Some(e),
            Storage::Separable(_) => None,
        }
    }

    pub fn low_rank(&self) -> Option<&LowRank> {
        match &self.storage {
            Storage::Separable(lr) => Some(lr),
            Storage::Dense(_) => None,
        }
    }

    /// Dense copy, forcing direct force sums.
    pub fn densified(&self) -> Self {
        WeightMatrix { n: self.n, storage: Storage::Dense(self.to_dense()), kind: self.kind.clone() }
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = (0..self.n).map(|i| self.row(i).iter().sum::<f64>()).sum();
        total / (self.n * self.n) as f64
    }

    /// Apply the same permutation to rows and columns: new row `k` is old row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::size("permutation length differs from N"));
        }
        let n = self.n;
        let entries = (0..n * n).map(|k| self.get(perm[k / n], perm[k % n])).collect();
        Ok(WeightMatrix { n, storage: Storage::Dense(entries), kind: self.kind.clone() })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.n)?;
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|w| format!("{w:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::invalid("empty weight file"))??;
        let n: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("weight file header {header:?} is not a size")))?;
        let mut entries = Vec::with_capacity(n * n);
        for (r, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split(',') {
                let v: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("row {}: {tok:?} is not a number", r + 1)))?;
                entries.push(v);
            }
        }
        Self::from_entries(n, entries)
    }
}

/// Row index (0-based) of label `ξ`: `⌈Nξ⌉`, with labels `i/N` snapped to row `i` and `ξ = 0` sent to the first row.
pub fn row_of(label: f64, n: usize) -> usize {
    let s = label * n as f64;
    let r = s.round();
    let c = if (s - r).abs() <= 1e-9 * s.abs().max(1.0) { r } else { s.ceil() };
    (c.clamp(1.0, n as f64) as usize) - 1
}

pub fn generate_weights(kind: &GraphKind, n: usize, seed: u64) -> Result<WeightMatrix> {
    if n == 0 {
        return Err(Error::config("N must be at least 1"));
    }
    let label = |i: usize| (i + 1) as f64 / n as f64;
    let storage = match kind {
        GraphKind::Constant(c) => {
            Graphon::Const(*c).check()?;
            Storage::Separable(separable(&Graphon::Const(*c), n, &vec![1.0; n]).expect("rank one"))
        }
        GraphKind::ErdosRenyi(p) => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::config(format!("edge probability {p} outside [0, 1]")));
            }
            Storage::Dense(bernoulli_rows(n, *p, seed))
        }
        GraphKind::SparseErdosRenyi(c) => {
            if !(c.is_finite() && *c >= 0.0) {
                return Err(Error::config("sparse mean degree must be non-negative"));
            }
            Storage::Dense(bernoulli_rows(n, (c / n as f64).min(1.0), seed))
        }
        GraphKind::Graphon(g) => {
            g.check()?;
            match separable(g, n, &vec![1.0; n]) {
                Some(lr) => Storage::Separable(lr),
                None => Storage::Dense((0..n * n).map(|k| g.eval(label(k / n), label(k % n))).collect()),
            }
        }
        GraphKind::RandomEnvironment { graphon, alphabet } => {
            graphon.check()?;
            alphabet.check()?;
            let u: Vec<f64> = (0..n)
                .map(|j| alphabet.draw(&mut stream_rng(seed, domain::WEIGHTS + 1, j as u64)))
                .collect();
            match separable(graphon, n, &u) {
                Some(lr) => Storage::Separable(lr),
                None => Storage::Dense((0..n * n).map(|k| u[k % n] * graphon.eval(label(k / n), label(k % n))).collect()),
            }
        }
    };
    let m = WeightMatrix { n, storage, kind: Some(kind.clone()) };
    // Factored entries can round slightly outside [0, 1]; only gross violations are errors.
    for i in 0..n {
        if let Some(bad) = m.row(i).iter().find(|w| !(-1e-12..=1.0 + 1e-12).contains(*w)) {
            return Err(Error::config(format!("generated weight {bad} outside [0, 1]")));
        }
    }
    Ok(m)
}

fn bernoulli_rows(n: usize, p: f64, seed: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut rng = stream_rng(seed, domain::WEIGHTS, i as u64);
        out.extend((0..n).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }));
    }
    out
}

fn separable(g: &Graphon, n: usize, col_scale: &[f64]) -> Option<LowRank> {
    let labels: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    separable_on(g, &labels, &labels, col_scale)
}

fn separable_on(g: &Graphon, rows: &[f64], cols: &[f64], col_scale: &[f64]) -> Option<LowRank> {
    let rank = g.rank()?;
    let a = rows.iter().flat_map(|&x| (0..rank).map(move |r| g.row_factor(r, x))).collect();
    let b = (0..rank)
        .flat_map(|r| cols.iter().zip(col_scale).map(move |(&y, &s)| s * g.col_factor(r, y)))
        .collect();
    Some(LowRank { rank, rows: rows.len(), cols: cols.len(), a, b })
}

/// Coordinates carried by the atoms of a digraph row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DigraphView {
    /// `(w, ξ')`.
    Weights,
    /// `(w, ξ', x₀, B)` with the Brownian path compared in sup norm.
    Full,
}

fn view_space(view: DigraphView, inputs: &[InputDatum], geometry: Geometry) -> Result<ProductSpace> {
    let mut blocks = vec![Block::Line, Block::Line];
    if view == DigraphView::Full {
        let first = inputs.first().ok_or_else(|| Error::invalid("no inputs"))?;
        let d = first.dim();
        for _ in 0..d {
            blocks.push(match geometry {
                Geometry::Free => Block::Line,
                Geometry::Periodic(p) => Block::Circle(p),
            });
        }
        blocks.push(Block::Path { nodes: first.steps() + 1, dim: d, geometry: Geometry::Free });
    }
    ProductSpace::new(blocks)
}

fn push_atom(points: &mut Vec<f64>, view: DigraphView, w: f64, inp: &InputDatum) {
    points.push(w);
    points.push(inp.label);
    if view == DigraphView::Full {
        points.extend_from_slice(&inp.x0);
        points.extend(std::iter::repeat_n(0.0, inp.dim()));
        let d = inp.dim();
        let base = points.len() - d;
        for k in 0..inp.steps() {
            for a in 0..d {
                let prev = points[base + k * d + a];
                points.push(prev + inp.increments[k * d + a]);
            }
        }
    }
}

/// A parameter of the fixed-point map: weights from any label to a fixed atom set.
pub trait DigraphParameter: Sync {
    fn atoms(&self) -> &[InputDatum];
    fn weight(&self, label: f64, atom: usize) -> f64;
    /// Separable form of the rows at `labels`, when available.
    fn low_rank(&self, labels: &[f64]) -> Option<LowRank>;

    fn row_weights(&self, label: f64) -> Vec<f64> {
        (0..self.atoms().len()).map(|j| self.weight(label, j)).collect()
    }
}

/// Anything that can produce the atomic measure of a label row.
pub trait RowSource: Sync {
    fn row_measure(&self, label: f64, view: DigraphView) -> Result<AtomicMeasure>;
}

#[derive(Clone, Debug)]
pub struct EmpiricalDigraph {
    weights: Arc<WeightMatrix>,
    inputs: Arc<[InputDatum]>,
    geometry: Geometry,
}

pub fn empirical_digraph(weights: Arc<WeightMatrix>, inputs: Arc<[InputDatum]>, geometry: Geometry) -> Result<EmpiricalDigraph> {
    let n = weights.n();
    if inputs.len() != n {
        return Err(Error::size(format!("{} inputs for {n} weight rows", inputs.len())));
    }
    for (i, inp) in inputs.iter().enumerate() {
        let expect = (i + 1) as f64 / n as f64;
        if (inp.label - expect).abs() > 1e-12 {
            return Err(Error::invalid(format!("input {} has label {} instead of {expect}", i + 1, inp.label)));
        }
    }
    Ok(EmpiricalDigraph { weights, inputs, geometry })
}

impl EmpiricalDigraph {
    pub fn n(&self) -> usize {
        self.weights.n()
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn inputs(&self) -> &[InputDatum] {
        &self.inputs
    }

    pub fn row_index(&self, label: f64) -> usize {
        row_of(label, self.n())
    }
}

impl DigraphParameter for EmpiricalDigraph {
    fn atoms(&self) -> &[InputDatum] {
        &self.inputs
    }

    fn weight(&self, label: f64, atom: usize) -> f64 {
        self.weights.get(self.row_index(label), atom)
    }

    fn low_rank(&self, labels: &[f64]) -> Option<LowRank> {
        let lr = self.weights.low_rank()?;
        let a = labels
            .iter()
            .flat_map(|&l| {
                let i = self.row_index(l);
                lr.a[i * lr.rank..(i + 1) * lr.rank].iter().copied()
            })
            .collect();
        Some(LowRank { rank: lr.rank, rows: labels.len(), cols: lr.cols, a, b: lr.b.clone() })
    }

    fn row_weights(&self, label: f64) -> Vec<f64> {
        self.weights.row(self.row_index(label)).into_owned()
    }
}

impl RowSource for EmpiricalDigraph {
    fn row_measure(&self, label: f64, view: DigraphView) -> Result<AtomicMeasure> {
        let row = self.weights.row(self.row_index(label));
        let mut points = Vec::new();
        for (w, inp) in row.iter().zip(self.inputs.iter()) {
            push_atom(&mut points, view, *w, inp);
        }
        AtomicMeasure::uniform(view_space(view, &self.inputs, self.geometry)?, points)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LimitDigraph {
    /// `η^ξ = δ_{W(ξ,ξ')} dξ'`.
    Graphon(Graphon),
    /// `w = u · W(ξ, ξ')`, `u` drawn from the alphabet independently of `ξ'`.
    Mixture { graphon: Graphon, alphabet: Alphabet },
}

pub fn limit_of(kind: &GraphKind) -> Result<LimitDigraph> {
    Ok(match kind {
        GraphKind::Constant(c) => LimitDigraph::Graphon(Graphon::Const(*c)),
        GraphKind::ErdosRenyi(p) => LimitDigraph::Mixture { graphon: Graphon::Const(1.0), alphabet: Alphabet::bernoulli(*p) },
        GraphKind::Graphon(g) => LimitDigraph::Graphon(g.clone()),
        GraphKind::RandomEnvironment { graphon, alphabet } => {
            LimitDigraph::Mixture { graphon: graphon.clone(), alphabet: alphabet.clone() }
        }
        GraphKind::SparseErdosRenyi(_) => {
            return Err(Error::Unsupported("sparse Erdős–Rényi graphs have no digraph-measure limit here".into()))
        }
    })
}

impl LimitDigraph {
    pub fn weight(&self, label: f64, co_label: f64, symbol: f64) -> f64 {
        match self {
            LimitDigraph::Graphon(g) => g.eval(label, co_label),
            LimitDigraph::Mixture { graphon, .. } => symbol * graphon.eval(label, co_label),
        }
    }

    /// Lipschitz constant of `ξ ↦ η^ξ` in the bounded-Lipschitz distance.
    pub fn lipschitz(&self) -> f64 {
        match self {
            LimitDigraph::Graphon(g) => g.lipschitz(),
            LimitDigraph::Mixture { graphon, alphabet } => {
                graphon.lipschitz() * alphabet.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            }
        }
    }

    /// `E[w]` between `label` and `co_label`.
    pub fn mean_pair_weight(&self, label: f64, co_label: f64) -> f64 {
        match self {
            LimitDigraph::Graphon(g) => g.eval(label, co_label),
            LimitDigraph::Mixture { graphon, alphabet } => {
                let mean_u: f64 = alphabet.values.iter().zip(&alphabet.probs).map(|(v, p)| v * p).sum();
                mean_u * graphon.eval(label, co_label)
            }
        }
    }

    /// Mean of `w` over `η^ξ`.
    pub fn mean_weight(&self, label: f64, quadrature: usize) -> f64 {
        let q = quadrature.max(1);
        (0..q).map(|m| self.mean_pair_weight(label, (m as f64 + 0.5) / q as f64)).sum::<f64>() / q as f64
    }

    /// Sample `m_ref` atoms: stratified co-labels, balanced symbols, reference inputs.
    pub fn sample(&self, m_ref: usize, model: &ModelSpec, grid: &TimeGrid, seed: u64) -> Result<SampledLimit> {
        self.sample_tagged(m_ref, model, grid, seed, 0)
    }

    pub fn sample_tagged(&self, m_ref: usize, model: &ModelSpec, grid: &TimeGrid, seed: u64, tag: u32) -> Result<SampledLimit> {
        if m_ref == 0 {
            return Err(Error::config("M_ref must be positive"));
        }
        let mut lrng = stream_rng(seed, domain::LIMIT_LABELS, tag as u64);
        let labels: Vec<f64> = (0..m_ref).map(|m| (m as f64 + lrng.random::<f64>()) / m_ref as f64).collect();
        let symbols = match self {
            LimitDigraph::Graphon(g) => {
                g.check()?;
                vec![1.0; m_ref]
            }
            LimitDigraph::Mixture { graphon, alphabet } => {
                graphon.check()?;
                alphabet.check()?;
                let mut s: Vec<f64> = alphabet
                    .balanced_counts(m_ref)
                    .into_iter()
                    .zip(&alphabet.values)
                    .flat_map(|(c, &v)| std::iter::repeat_n(v, c))
                    .collect();
                s.shuffle(&mut stream_rng(seed, domain::LIMIT_SYMBOLS, tag as u64));
                s
            }
        };
        let inputs = labels
            .iter()
            .enumerate()
            .map(|(m, &l)| make_input(model, grid, seed, Population::Reference(tag), m as u64, l))
            .collect();
        Ok(SampledLimit { limit: self.clone(), labels, symbols, inputs, geometry: model.geometry })
    }
}

/// A limit digraph realized on `M_ref` atoms.
#[derive(Clone, Debug)]
pub struct SampledLimit {
    pub limit: LimitDigraph,
    pub labels: Vec<f64>,
    pub symbols: Vec<f64>,
    pub inputs: Vec<InputDatum>,
    geometry: Geometry,
}

impl SampledLimit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Weight marginal of the row at `label`, as `(value, mass)` pairs sorted by value.
    pub fn weight_marginal(&self, label: f64) -> Vec<(f64, f64)> {
        let mut w = self.row_weights(label);
        w.sort_by(f64::total_cmp);
        let m = 1.0 / w.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for v in w {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += m,
                _ => out.push((v, m)),
            }
        }
        out
    }
}

impl DigraphParameter for SampledLimit {
    fn atoms(&self) -> &[InputDatum] {
        &self.inputs
    }

    fn weight(&self, label: f64, atom: usize) -> f64 {
        self.limit.weight(label, self.labels[atom], self.symbols[atom])
    }

    fn low_rank(&self, labels: &[f64]) -> Option<LowRank> {
        match &self.limit {
            LimitDigraph::Graphon(g) | LimitDigraph::Mixture { graphon: g, .. } => {
                separable_on(g, labels, &self.labels, &self.symbols)
            }
        }
    }
}

impl RowSource for SampledLimit {
    fn row_measure(&self, label: f64, view: DigraphView) -> Result<AtomicMeasure> {
        let mut points = Vec::new();
        for (m, inp) in self.inputs.iter().enumerate() {
            push_atom(&mut points, view, self.weight(label, m), inp);
        }
        AtomicMeasure::uniform(view_space(view, &self.inputs, self.geometry)?, points)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DigraphDistance {
    /// Max over labels of the lower ends.
    pub lower: f64,
    /// Max over labels of the upper ends.
    pub upper: f64,
    pub per_label: Vec<BLBracket>,
}

/// ∞-BL distance between two digraph measures over a label grid.
pub fn d_inf_bl(a: &dyn RowSource, b: &dyn RowSource, labels: &[f64], view: DigraphView) -> Result<DigraphDistance> {
    use rayon::prelude::*;
    if labels.is_empty() {
        return Err(Error::invalid("empty label grid"));
    }
    let per_label: Vec<BLBracket> = labels
        .par_iter()
        .map(|&l| bl_bracket(&a.row_measure(l, view)?, &b.row_measure(l, view)?))
        .collect::<Result<_>>()?;
    Ok(DigraphDistance {
        lower: per_label.iter().map(|b| b.lower).fold(0.0, f64::max),
        upper: per_label.iter().map(|b| b.upper).fold(0.0, f64::max),
        per_label,
    })
}

/// Evenly spaced label grid `{(k + ½)/L}`.
pub fn label_grid(points: usize) -> Vec<f64> {
    (0..points).map(|k| (k as f64 + 0.5) / points as f64).collect()
}

/// Max over rows `i, i'` with `|i − i'| ≤ ηN` of the identity-coupling BL upper bound.
pub fn uniform_continuity_modulus(digraph: &EmpiricalDigraph, eta: f64) -> Result<f64> {
    use rayon::prelude::*;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("η must lie in (0, 1], got {eta}")));
    }
    let n = digraph.n();
    let reach = ((eta * n as f64) + 1e-9).floor() as usize;
    let w = digraph.weights();
    let worst = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..=(i + reach).min(n - 1))
                .map(|k| {
                    let s: f64 = w.row(i).iter().zip(w.row(k).iter()).map(|(a, b)| {
                        let d = (a - b).abs();
                        2.0 * d / (2.0 + d)
                    }).sum();
                    s / n as f64
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst.min(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::particle_inputs;

    #[test]
    fn weight_examples() {
        let w = generate_weights(&GraphKind::Constant(1.0), 2, 0).unwrap();
        assert_eq!(w.to_dense(), vec![1.0; 4]);
        let w = generate_weights(&GraphKind::Graphon(Graphon::Row), 2, 0).unwrap();
        assert_eq!(w.to_dense(), vec![0.5, 0.5, 1.0, 1.0]);
        let w = generate_weights(&GraphKind::ErdosRenyi(0.0), 5, 3).unwrap();
        assert!(w.to_dense().iter().all(|&x| x == 0.0));
        assert!(generate_weights(&GraphKind::Constant(1.5), 2, 0).is_err());
    }

    #[test]
    fn product_graphon_row_two() {
        let w = generate_weights(&GraphKind::Graphon(Graphon::Product), 3, 0).unwrap();
        for (j, &x) in w.row(1).iter().enumerate() {
            assert!((x - (2.0 / 3.0) * (j + 1) as f64 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn low_rank_matches_entries() {
        for g in [Graphon::Const(0.3), Graphon::Row, Graphon::Product, Graphon::RowCosine, Graphon::Cosine] {
            let w = generate_weights(&GraphKind::Graphon(g.clone()), 7, 0).unwrap();
            let lr = w.low_rank().unwrap();
            for i in 0..7 {
                for j in 0..7 {
                    let exact = g.eval((i + 1) as f64 / 7.0, (j + 1) as f64 / 7.0);
                    assert!((lr.entry(i, j) - exact).abs() < 1e-14, "{g:?}");
                }
            }
        }
    }

    #[test]
    fn labels_follow_ceiling_convention() {
        assert_eq!(row_of(0.0, 4), 0);
        assert_eq!(row_of(0.25, 4), 0);
        assert_eq!(row_of(0.2500001, 4), 1);
        assert_eq!(row_of(1.0, 4), 3);
        assert_eq!(row_of(3.0 / 7.0, 7), 2);
    }

    #[test]
    fn limit_examples() {
        match limit_of(&GraphKind::ErdosRenyi(0.5)).unwrap() {
            LimitDigraph::Mixture { graphon, alphabet } => {
                assert_eq!(graphon, Graphon::Const(1.0));
                assert_eq!(alphabet.values, vec![0.0, 1.0]);
                assert_eq!(alphabet.probs, vec![0.5, 0.5]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(limit_of(&GraphKind::SparseErdosRenyi(2.0)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn balanced_counts_sum() {
        let a = Alphabet::new(vec![0.0, 0.5, 1.0], vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(a.balanced_counts(10), vec![2, 3, 5]);
        assert_eq!(a.balanced_counts(7).iter().sum::<usize>(), 7);
    }

    #[test]
    fn single_row_digraph() {
        let model = ModelSpec::default();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let inputs: Arc<[InputDatum]> = particle_inputs(&model, &grid, 1, 0).into();
        let w = Arc::new(WeightMatrix::from_entries(1, vec![0.3]).unwrap());
        let d = empirical_digraph(w, inputs, model.geometry).unwrap();
        let m = d.row_measure(0.7, DigraphView::Weights).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.atom(0)[0], 0.3);
        assert_eq!(m.mass(0), 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let w = generate_weights(&GraphKind::Graphon(Graphon::Cosine), 5, 0).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = WeightMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(back.to_dense(), w.to_dense());
    }
}
