//! Line-oriented experiment configuration.
//!
//! ```text
//! # comment
//! kind = couple
//! n = [64, 128]
//! seeds = [1, 2]
//!
//! [model]
//! kernel = kuramoto(kappa = 1)
//! graph.kind = erdos_renyi(0.5)     # dotted keys work outside sections too
//! ```
//!
//! Values are numbers, bare words, quoted strings, lists `[a, b]` or terms
//! `name(arg, key = arg)`. Unknown keys are rejected.

use crate::dynamics::ForceMethod;
use crate::error::{Error, Result};
use crate::graphs::{Alphabet, GraphKind, Graphon};
use crate::ldp::LabelTest;
use crate::model::{Geometry, InitialLaw, KernelSpec, ModelSpec, Normalization, ScalarFn, WeightLaw};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentKind {
    Simulate,
    Couple,
    Pde,
    PdeVsParticles,
    DigraphConvergence,
    Sanov,
    RateZero,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Simulate,
        ExperimentKind::Couple,
        ExperimentKind::Pde,
        ExperimentKind::PdeVsParticles,
        ExperimentKind::DigraphConvergence,
        ExperimentKind::Sanov,
        ExperimentKind::RateZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Couple => "couple",
            ExperimentKind::Pde => "pde",
            ExperimentKind::PdeVsParticles => "pde_vs_particles",
            ExperimentKind::DigraphConvergence => "digraph_convergence",
            ExperimentKind::Sanov => "sanov",
            ExperimentKind::RateZero => "rate_zero",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdeSystem {
    Vlasov,
    Pathwise,
    Adaptive,
}

impl PdeSystem {
    pub fn name(self) -> &'static str {
        match self {
            PdeSystem::Vlasov => "vlasov",
            PdeSystem::Pathwise => "pathwise",
            PdeSystem::Adaptive => "adaptive",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridParams {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardParams {
    pub tol: f64,
    pub max_sweeps: usize,
    pub m_ref: usize,
    pub label_points: usize,
    pub method: ForceMethod,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdeParams {
    pub system: PdeSystem,
    pub cells: usize,
    pub labels: usize,
    pub hist_cells: usize,
    pub times: Vec<f64>,
    pub ell: ScalarFn,
    pub alpha: ScalarFn,
    pub lambda: f64,
    /// Initial weight of every pair in the pathwise closure.
    pub w0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanovParams {
    pub probs: Vec<f64>,
    pub ns: Vec<u64>,
    pub tests: Vec<LabelTest>,
    pub moment_ns: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tolerances {
    /// Largest accepted log-log slope of the coupling error in N.
    pub slope: f64,
    pub l1: f64,
    /// Multiple of `N^{-1/2}` allowed for the digraph distance.
    pub digraph_factor: f64,
    /// Smallest accepted decay order of the exponential-moment differences.
    pub moment_order: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelSpec,
    pub graph: GraphKind,
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
    pub grid: GridParams,
    pub picard: PicardParams,
    pub pde: PdeParams,
    pub sanov: SanovParams,
    pub rate_zero_labels: Vec<f64>,
    pub tolerance: Tolerances,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            model: ModelSpec::default(),
            graph: GraphKind::Constant(1.0),
            ns: vec![64],
            seeds: vec![0],
            grid: GridParams { horizon: 1.0, steps: 100 },
            picard: PicardParams { tol: 1e-9, max_sweeps: 50, m_ref: 1 << 13, label_points: 16, method: ForceMethod::Auto },
            pde: PdeParams {
                system: PdeSystem::Vlasov,
                cells: 256,
                labels: 1,
                hist_cells: 64,
                times: vec![0.5, 1.0],
                ell: ScalarFn::Const(0.0),
                alpha: ScalarFn::Const(0.0),
                lambda: 1.0,
                w0: 1.0,
            },
            sanov: SanovParams {
                probs: vec![0.5, 0.5],
                ns: vec![50, 100, 200, 400],
                tests: LabelTest::ALL.to_vec(),
                moment_ns: vec![64, 128, 256, 512],
            },
            rate_zero_labels: vec![0.0, 0.5, 1.0],
            tolerance: Tolerances { slope: -0.25, l1: 0.08, digraph_factor: 3.0, moment_order: 0.8 },
            out: PathBuf::from("out"),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::new(ExperimentKind::Simulate)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Number(f64),
    Word(String),
    Text(String),
    List(Vec<Value>),
    Term { name: String, args: Vec<(Option<String>, Value)> },
}

#[derive(Clone, Debug, PartialEq)]
struct Value {
    node: Node,
    line: usize,
    column: usize,
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    _src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Cursor { chars: src.chars().collect(), pos: 0, line, _src: src }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        matches!(self.peek(), None | Some('#'))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        parse_err(self.line, self.column(), msg)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{c}'")))
        }
    }

    fn token(&mut self) -> String {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || "_.-+/".contains(c)) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || c == '_' || c == '.') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a name"));
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        let (line, column) = (self.line, self.column());
        let node = match self.peek() {
            None | Some('#') => return Err(self.err("missing value")),
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() == Some(']') {
                    self.pos += 1;
                } else {
                    loop {
                        items.push(self.value()?);
                        self.skip_ws();
                        match self.peek() {
                            Some(',') => self.pos += 1,
                            Some(']') => {
                                self.pos += 1;
                                break;
                            }
                            _ => return Err(self.err("expected ',' or ']' in list")),
                        }
                    }
                }
                Node::List(items)
            }
            Some('"') => {
                self.pos += 1;
                let start = self.pos;
                while !matches!(self.peek(), None | Some('"')) {
                    self.pos += 1;
                }
                if self.peek().is_none() {
                    return Err(self.err("unterminated string"));
                }
                let s: String = self.chars[start..self.pos].iter().collect();
                self.pos += 1;
                Node::Text(s)
            }
            Some(_) => {
                let tok = self.token();
                if tok.is_empty() {
                    return Err(self.err(format!("unexpected character '{}'", self.peek().unwrap_or(' '))));
                }
                self.skip_ws();
                if self.peek() == Some('(') {
                    self.pos += 1;
                    let mut args = Vec::new();
                    self.skip_ws();
                    if self.peek() == Some(')') {
                        self.pos += 1;
                    } else {
                        loop {
                            self.skip_ws();
                            let save = self.pos;
                            let mut key = None;
                            if let Ok(name) = self.ident() {
                                self.skip_ws();
                                if self.peek() == Some('=') {
                                    self.pos += 1;
                                    key = Some(name);
                                } else {
                                    self.pos = save;
                                }
                            } else {
                                self.pos = save;
                            }
                            args.push((key, self.value()?));
                            self.skip_ws();
                            match self.peek() {
                                Some(',') => self.pos += 1,
                                Some(')') => {
                                    self.pos += 1;
                                    break;
                                }
                                _ => return Err(self.err("expected ',' or ')' in argument list")),
                            }
                        }
                    }
                    Node::Term { name: tok, args }
                } else if let Ok(x) = tok.parse::<f64>() {
                    Node::Number(x)
                } else {
                    Node::Word(tok)
                }
            }
        };
        Ok(Value { node, line, column })
    }
}

/// `key → value` with source positions, after sections are applied.
fn parse_entries(text: &str) -> Result<BTreeMap<String, (Value, usize, usize)>> {
    let mut section = String::new();
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut c = Cursor::new(raw, line);
        if c.at_end() {
            continue;
        }
        if c.peek() == Some('[') {
            c.pos += 1;
            section = c.ident()?;
            c.expect(']')?;
            if !c.at_end() {
                return Err(c.err("unexpected text after section header"));
            }
            continue;
        }
        let column = c.column();
        let key = c.ident()?;
        c.expect('=')?;
        let value = c.value()?;
        if !c.at_end() {
            return Err(c.err("unexpected text after value"));
        }
        let full = if section.is_empty() { key } else { format!("{section}.{key}") };
        if out.insert(full.clone(), (value, line, column)).is_some() {
            return Err(parse_err(line, column, format!("duplicate key '{full}'")));
        }
    }
    Ok(out)
}

fn bad(v: &Value, msg: impl Into<String>) -> Error {
    parse_err(v.line, v.column, msg)
}

fn number(v: &Value) -> Result<f64> {
    match v.node {
        Node::Number(x) => Ok(x),
        _ => Err(bad(v, "expected a number")),
    }
}

fn count(v: &Value) -> Result<usize> {
    let x = number(v)?;
    if x < 0.0 || x.fract() != 0.0 || x > 1e15 {
        return Err(bad(v, "expected a non-negative integer"));
    }
    Ok(x as usize)
}

fn word(v: &Value) -> Result<&str> {
    match &v.node {
        Node::Word(w) | Node::Text(w) => Ok(w),
        Node::Term { name, args } if args.is_empty() => Ok(name),
        _ => Err(bad(v, "expected a name")),
    }
}

fn list<T>(v: &Value, f: impl Fn(&Value) -> Result<T>) -> Result<Vec<T>> {
    match &v.node {
        Node::List(items) => items.iter().map(f).collect(),
        _ => Ok(vec![f(v)?]),
    }
}

/// A term's name and arguments; bare words are terms without arguments.
fn term(v: &Value) -> Result<(&str, Args<'_>)> {
    match &v.node {
        Node::Term { name, args } => Ok((name, Args { v, args })),
        Node::Word(w) => Ok((w, Args { v, args: &[] })),
        _ => Err(bad(v, "expected a name or term")),
    }
}

struct Args<'a> {
    v: &'a Value,
    args: &'a [(Option<String>, Value)],
}

impl<'a> Args<'a> {
    fn get(&self, key: &str, pos: usize) -> Option<&'a Value> {
        self.args
            .iter()
            .find(|(k, _)| k.as_deref() == Some(key))
            .or_else(|| self.args.get(pos).filter(|(k, _)| k.is_none()))
            .map(|(_, v)| v)
    }

    fn need(&self, key: &str, pos: usize) -> Result<&'a Value> {
        self.get(key, pos).ok_or_else(|| bad(self.v, format!("missing argument '{key}'")))
    }

    fn num(&self, key: &str, pos: usize, default: Option<f64>) -> Result<f64> {
        match (self.get(key, pos), default) {
            (Some(v), _) => number(v),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(bad(self.v, format!("missing argument '{key}'"))),
        }
    }

    fn only(&self, keys: &[&str]) -> Result<()> {
        if self.args.len() > keys.len() {
            return Err(bad(self.v, format!("too many arguments (expected {})", keys.join(", "))));
        }
        for (k, v) in self.args {
            if let Some(k) = k {
                if !keys.contains(&k.as_str()) {
                    return Err(bad(v, format!("unknown argument '{k}' (expected {})", keys.join(", "))));
                }
            }
        }
        Ok(())
    }
}

fn geometry(v: &Value) -> Result<Geometry> {
    let (name, a) = term(v)?;
    match name {
        "torus" => Ok(Geometry::torus()),
        "free" => Ok(Geometry::Free),
        "periodic" => {
            a.only(&["period"])?;
            let p = a.num("period", 0, None)?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(bad(v, "period must be positive"));
            }
            Ok(Geometry::Periodic(p))
        }
        _ => Err(bad(v, format!("unknown geometry '{name}' (torus, free, periodic(P))"))),
    }
}

fn kernel(v: &Value) -> Result<KernelSpec> {
    let (name, a) = term(v)?;
    Ok(match name {
        "zero" => KernelSpec::Zero,
        "kuramoto" => {
            a.only(&["kappa"])?;
            KernelSpec::Kuramoto { kappa: a.num("kappa", 0, Some(1.0))? }
        }
        "linear_attraction" => {
            a.only(&["a", "clamp"])?;
            KernelSpec::LinearAttraction { a: a.num("a", 0, None)?, clamp: a.num("clamp", 1, Some(crate::model::DEFAULT_CLAMP))? }
        }
        "gaussian" => {
            a.only(&["a", "s"])?;
            KernelSpec::Gaussian { a: a.num("a", 0, None)?, s: a.num("s", 1, None)? }
        }
        _ => return Err(bad(v, format!("unknown kernel '{name}' (zero, kuramoto, linear_attraction, gaussian)"))),
    })
}

fn scalar_fn(v: &Value) -> Result<ScalarFn> {
    if let Node::Number(c) = v.node {
        return Ok(ScalarFn::Const(c));
    }
    let (name, a) = term(v)?;
    Ok(match name {
        "const" => {
            a.only(&["c"])?;
            ScalarFn::Const(a.num("c", 0, None)?)
        }
        "cos" => {
            a.only(&["c"])?;
            ScalarFn::Cos(a.num("c", 0, Some(1.0))?)
        }
        "bump" => {
            a.only(&["c", "s"])?;
            ScalarFn::Bump { c: a.num("c", 0, None)?, s: a.num("s", 1, None)? }
        }
        _ => return Err(bad(v, format!("unknown function '{name}' (const, cos, bump)"))),
    })
}

fn weight_law(v: &Value) -> Result<WeightLaw> {
    let (name, a) = term(v)?;
    Ok(match name {
        "frozen" => WeightLaw::Frozen,
        "linear_kuramoto" => {
            a.only(&["lambda", "ell"])?;
            WeightLaw::LinearKuramoto { lambda: a.num("lambda", 0, None)?, ell: scalar_fn(a.need("ell", 1)?)? }
        }
        "affine" => {
            a.only(&["ell", "alpha"])?;
            WeightLaw::Affine { ell: scalar_fn(a.need("ell", 0)?)?, alpha: scalar_fn(a.need("alpha", 1)?)? }
        }
        "saturating" => {
            a.only(&["rate", "target"])?;
            WeightLaw::Saturating { rate: a.num("rate", 0, None)?, target: scalar_fn(a.need("target", 1)?)? }
        }
        _ => return Err(bad(v, format!("unknown weight law '{name}' (frozen, linear_kuramoto, affine, saturating)"))),
    })
}

fn normalization(v: &Value) -> Result<Normalization> {
    let (name, a) = term(v)?;
    match name {
        "plain" => Ok(Normalization::Plain),
        "motsch_tadmor" => {
            a.only(&["floor"])?;
            Ok(Normalization::MotschTadmor { floor: a.num("floor", 0, Some(crate::model::DEFAULT_DENOMINATOR_FLOOR))? })
        }
        _ => Err(bad(v, format!("unknown normalization '{name}' (plain, motsch_tadmor)"))),
    }
}

fn initial(v: &Value) -> Result<InitialLaw> {
    let (name, a) = term(v)?;
    let vec_arg = |key: &str, pos: usize| -> Result<Vec<f64>> { list(a.need(key, pos)?, number) };
    Ok(match name {
        "point" => match &v.node {
            Node::Term { args, .. } if args.len() == 1 => InitialLaw::Point(list(&args[0].1, number)?),
            Node::Term { args, .. } => InitialLaw::Point(args.iter().map(|(_, x)| number(x)).collect::<Result<_>>()?),
            _ => return Err(bad(v, "point needs coordinates")),
        },
        "uniform" => {
            a.only(&["lo", "hi"])?;
            InitialLaw::Uniform { lo: a.num("lo", 0, Some(0.0))?, hi: a.num("hi", 1, Some(TAU))? }
        }
        "gaussian" | "wrapped_gaussian" => {
            a.only(&["mean", "std"])?;
            let (mean, std) = (vec_arg("mean", 0)?, vec_arg("std", 1)?);
            if name == "gaussian" {
                InitialLaw::Gaussian { mean, std }
            } else {
                InitialLaw::WrappedGaussian { mean, std }
            }
        }
        _ => return Err(bad(v, format!("unknown initial law '{name}' (point, uniform, gaussian, wrapped_gaussian)"))),
    })
}

fn graphon(v: &Value) -> Result<Graphon> {
    let (name, a) = term(v)?;
    Ok(match name {
        "const" => {
            a.only(&["c"])?;
            Graphon::Const(a.num("c", 0, None)?)
        }
        "row" => Graphon::Row,
        "product" => Graphon::Product,
        "row_cosine" => Graphon::RowCosine,
        "cosine" => Graphon::Cosine,
        "min" => Graphon::Min,
        "exp_decay" => Graphon::ExpDecay,
        _ => return Err(bad(v, format!("unknown graphon '{name}'"))),
    })
}

fn graph_kind(v: &Value) -> Result<GraphKind> {
    let (name, a) = term(v)?;
    Ok(match name {
        "constant" => {
            a.only(&["c"])?;
            GraphKind::Constant(a.num("c", 0, Some(1.0))?)
        }
        "erdos_renyi" => {
            a.only(&["p"])?;
            GraphKind::ErdosRenyi(a.num("p", 0, None)?)
        }
        "sparse_erdos_renyi" => {
            a.only(&["c"])?;
            GraphKind::SparseErdosRenyi(a.num("c", 0, None)?)
        }
        "graphon" => {
            a.only(&["w"])?;
            GraphKind::Graphon(graphon(a.need("w", 0)?)?)
        }
        "random_environment" => {
            a.only(&["graphon", "values", "probs"])?;
            let alphabet = Alphabet::new(list(a.need("values", 1)?, number)?, list(a.need("probs", 2)?, number)?)
                .map_err(|e| bad(v, e.to_string()))?;
            GraphKind::RandomEnvironment { graphon: graphon(a.need("graphon", 0)?)?, alphabet }
        }
        _ => return Err(bad(v, format!("unknown graph kind '{name}'"))),
    })
}

fn label_test(v: &Value) -> Result<LabelTest> {
    let w = word(v)?;
    LabelTest::ALL.into_iter().find(|t| t.name() == w).ok_or_else(|| bad(v, format!("unknown test function '{w}'")))
}

const KEYS: &[&str] = &[
    "kind",
    "n",
    "seeds",
    "out",
    "model.dim",
    "model.geometry",
    "model.kernel",
    "model.weights",
    "model.normalization",
    "model.noise",
    "model.initial",
    "graph.kind",
    "grid.horizon",
    "grid.steps",
    "picard.tol",
    "picard.max_sweeps",
    "picard.m_ref",
    "picard.label_points",
    "picard.method",
    "pde.system",
    "pde.cells",
    "pde.labels",
    "pde.hist_cells",
    "pde.times",
    "pde.ell",
    "pde.alpha",
    "pde.lambda",
    "pde.w0",
    "sanov.probs",
    "sanov.ns",
    "sanov.tests",
    "sanov.moment_ns",
    "rate_zero.labels",
    "tolerance.slope",
    "tolerance.l1",
    "tolerance.digraph_factor",
    "tolerance.moment_order",
];

/// Parse a configuration, filling defaults for absent keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_as(text, None)
}

/// As [`parse_config`]; `kind` is the default experiment and must agree with an
/// explicit `kind` key.
pub fn parse_config_as(text: &str, kind: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let entries = parse_entries(text)?;
    for (k, (_, line, column)) in &entries {
        if !KEYS.contains(&k.as_str()) {
            return Err(parse_err(*line, *column, format!("unknown key '{k}'")));
        }
    }
    let get = |k: &str| entries.get(k).map(|(v, _, _)| v);
    let explicit = match get("kind") {
        Some(v) => {
            let w = word(v)?;
            Some(ExperimentKind::from_name(w).ok_or_else(|| bad(v, format!("unknown experiment kind '{w}'")))?)
        }
        None => None,
    };
    let kind = match (explicit, kind) {
        (Some(a), Some(b)) if a != b => {
            let v = get("kind").expect("explicit kind");
            return Err(bad(v, format!("config is for '{}' but '{}' was requested", a.name(), b.name())));
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => ExperimentKind::Simulate,
    };
    let mut c = ExperimentConfig::new(kind);
    for (key, (v, _, _)) in &entries {
        match key.as_str() {
            "kind" => {}
            "n" => {
                c.ns = list(v, count)?;
                if c.ns.is_empty() || c.ns.windows(2).any(|w| w[0] >= w[1]) || c.ns[0] == 0 {
                    return Err(bad(v, "N list must be positive and strictly ascending"));
                }
            }
            "seeds" => {
                c.seeds = list(v, |x| count(x).map(|s| s as u64))?;
                if c.seeds.is_empty() {
                    return Err(bad(v, "seed list is empty"));
                }
            }
            "out" => c.out = PathBuf::from(word(v)?),
            "model.dim" => c.model.dim = count(v)?,
            "model.geometry" => c.model.geometry = geometry(v)?,
            "model.kernel" => c.model.kernel = kernel(v)?,
            "model.weights" => c.model.weight_law = weight_law(v)?,
            "model.normalization" => c.model.normalization = normalization(v)?,
            "model.noise" => c.model.noise = number(v)?,
            "model.initial" => c.model.initial = initial(v)?,
            "graph.kind" => c.graph = graph_kind(v)?,
            "grid.horizon" => c.grid.horizon = number(v)?,
            "grid.steps" => c.grid.steps = count(v)?,
            "picard.tol" => c.picard.tol = number(v)?,
            "picard.max_sweeps" => c.picard.max_sweeps = count(v)?,
            "picard.m_ref" => c.picard.m_ref = count(v)?,
            "picard.label_points" => c.picard.label_points = count(v)?,
            "picard.method" => {
                c.picard.method = match word(v)? {
                    "auto" => ForceMethod::Auto,
                    "direct" => ForceMethod::Direct,
                    w => return Err(bad(v, format!("unknown force method '{w}' (auto, direct)"))),
                }
            }
            "pde.system" => {
                c.pde.system = match word(v)? {
                    "vlasov" => PdeSystem::Vlasov,
                    "pathwise" => PdeSystem::Pathwise,
                    "adaptive" => PdeSystem::Adaptive,
                    w => return Err(bad(v, format!("unknown PDE system '{w}' (vlasov, pathwise, adaptive)"))),
                }
            }
            "pde.cells" => c.pde.cells = count(v)?,
            "pde.labels" => c.pde.labels = count(v)?,
            "pde.hist_cells" => c.pde.hist_cells = count(v)?,
            "pde.times" => c.pde.times = list(v, number)?,
            "pde.ell" => c.pde.ell = scalar_fn(v)?,
            "pde.alpha" => c.pde.alpha = scalar_fn(v)?,
            "pde.lambda" => c.pde.lambda = number(v)?,
            "pde.w0" => c.pde.w0 = number(v)?,
            "sanov.probs" => c.sanov.probs = list(v, number)?,
            "sanov.ns" => c.sanov.ns = list(v, |x| count(x).map(|n| n as u64))?,
            "sanov.tests" => c.sanov.tests = list(v, label_test)?,
            "sanov.moment_ns" => c.sanov.moment_ns = list(v, count)?,
            "rate_zero.labels" => c.rate_zero_labels = list(v, number)?,
            "tolerance.slope" => c.tolerance.slope = number(v)?,
            "tolerance.l1" => c.tolerance.l1 = number(v)?,
            "tolerance.digraph_factor" => c.tolerance.digraph_factor = number(v)?,
            "tolerance.moment_order" => c.tolerance.moment_order = number(v)?,
            _ => unreachable!("key list checked above"),
        }
    }
    Ok(c)
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn nums<T: Copy>(xs: &[T], f: impl Fn(T) -> String) -> String {
    format!("[{}]", xs.iter().map(|&x| f(x)).collect::<Vec<_>>().join(", "))
}

fn emit_scalar(f: &ScalarFn) -> String {
    match *f {
        ScalarFn::Const(c) => format!("const({})", num(c)),
        ScalarFn::Cos(c) => format!("cos({})", num(c)),
        ScalarFn::Bump { c, s } => format!("bump(c = {}, s = {})", num(c), num(s)),
    }
}

fn emit_graphon(g: &Graphon) -> String {
    match g {
        Graphon::Const(c) => format!("const({})", num(*c)),
        Graphon::Row => "row".into(),
        Graphon::Product => "product".into(),
        Graphon::RowCosine => "row_cosine".into(),
        Graphon::Cosine => "cosine".into(),
        Graphon::Min => "min".into(),
        Graphon::ExpDecay => "exp_decay".into(),
    }
}

pub fn emit_graph_kind(g: &GraphKind) -> String {
    match g {
        GraphKind::Constant(c) => format!("constant({})", num(*c)),
        GraphKind::ErdosRenyi(p) => format!("erdos_renyi({})", num(*p)),
        GraphKind::SparseErdosRenyi(c) => format!("sparse_erdos_renyi({})", num(*c)),
        GraphKind::Graphon(w) => format!("graphon({})", emit_graphon(w)),
        GraphKind::RandomEnvironment { graphon, alphabet } => format!(
            "random_environment(graphon = {}, values = {}, probs = {})",
            emit_graphon(graphon),
            nums(&alphabet.values, num),
            nums(&alphabet.probs, num)
        ),
    }
}

fn emit_initial(l: &InitialLaw) -> String {
    match l {
        InitialLaw::Point(p) => format!("point({})", nums(p, num)),
        InitialLaw::Uniform { lo, hi } => format!("uniform(lo = {}, hi = {})", num(*lo), num(*hi)),
        InitialLaw::Gaussian { mean, std } => format!("gaussian(mean = {}, std = {})", nums(mean, num), nums(std, num)),
        InitialLaw::WrappedGaussian { mean, std } => {
            format!("wrapped_gaussian(mean = {}, std = {})", nums(mean, num), nums(std, num))
        }
    }
}

fn quote(s: &str) -> String {
    format!("\"{s}\"")
}

/// Canonical text of a configuration; `parse_config(&emit_config(c)) == c`.
pub fn emit_config(c: &ExperimentConfig) -> String {
    let mut s = String::new();
    let m = &c.model;
    let _ = writeln!(s, "kind = {}", c.kind.name());
    let _ = writeln!(s, "n = {}", nums(&c.ns, |x| x.to_string()));
    let _ = writeln!(s, "seeds = {}", nums(&c.seeds, |x| x.to_string()));
    let _ = writeln!(s, "out = {}", quote(&c.out.to_string_lossy()));
    let _ = writeln!(s, "\n[model]\ndim = {}", m.dim);
    let geometry = match m.geometry {
        Geometry::Free => "free".to_string(),
        Geometry::Periodic(p) if p == TAU => "torus".to_string(),
        Geometry::Periodic(p) => format!("periodic({})", num(p)),
    };
    let _ = writeln!(s, "geometry = {geometry}");
    let kernel = match m.kernel {
        KernelSpec::Zero => "zero".to_string(),
        KernelSpec::Kuramoto { kappa } => format!("kuramoto(kappa = {})", num(kappa)),
        KernelSpec::LinearAttraction { a, clamp } => format!("linear_attraction(a = {}, clamp = {})", num(a), num(clamp)),
        KernelSpec::Gaussian { a, s: w } => format!("gaussian(a = {}, s = {})", num(a), num(w)),
    };
    let _ = writeln!(s, "kernel = {kernel}");
    let weights = match &m.weight_law {
        WeightLaw::Frozen => "frozen".to_string(),
        WeightLaw::LinearKuramoto { lambda, ell } => format!("linear_kuramoto(lambda = {}, ell = {})", num(*lambda), emit_scalar(ell)),
        WeightLaw::Affine { ell, alpha } => format!("affine(ell = {}, alpha = {})", emit_scalar(ell), emit_scalar(alpha)),
        WeightLaw::Saturating { rate, target } => format!("saturating(rate = {}, target = {})", num(*rate), emit_scalar(target)),
    };
    let _ = writeln!(s, "weights = {weights}");
    let norm = match m.normalization {
        Normalization::Plain => "plain".to_string(),
        Normalization::MotschTadmor { floor } => format!("motsch_tadmor(floor = {})", num(floor)),
    };
    let _ = writeln!(s, "normalization = {norm}");
    let _ = writeln!(s, "noise = {}", num(m.noise));
    let _ = writeln!(s, "initial = {}", emit_initial(&m.initial));
    let _ = writeln!(s, "\n[graph]\nkind = {}", emit_graph_kind(&c.graph));
    let _ = writeln!(s, "\n[grid]\nhorizon = {}\nsteps = {}", num(c.grid.horizon), c.grid.steps);
    let p = &c.picard;
    let method = match p.method {
        ForceMethod::Auto => "auto",
        ForceMethod::Direct => "direct",
    };
    let _ = writeln!(
        s,
        "\n[picard]\ntol = {}\nmax_sweeps = {}\nm_ref = {}\nlabel_points = {}\nmethod = {method}",
        num(p.tol),
        p.max_sweeps,
        p.m_ref,
        p.label_points
    );
    let d = &c.pde;
    let _ = writeln!(
        s,
        "\n[pde]\nsystem = {}\ncells = {}\nlabels = {}\nhist_cells = {}\ntimes = {}\nell = {}\nalpha = {}\nlambda = {}\nw0 = {}",
        d.system.name(),
        d.cells,
        d.labels,
        d.hist_cells,
        nums(&d.times, num),
        emit_scalar(&d.ell),
        emit_scalar(&d.alpha),
        num(d.lambda),
        num(d.w0)
    );
    let sv = &c.sanov;
    let _ = writeln!(
        s,
        "\n[sanov]\nprobs = {}\nns = {}\ntests = {}\nmoment_ns = {}",
        nums(&sv.probs, num),
        nums(&sv.ns, |x| x.to_string()),
        nums(&sv.tests, |t| t.name().to_string()),
        nums(&sv.moment_ns, |x| x.to_string())
    );
    let _ = writeln!(s, "\n[rate_zero]\nlabels = {}", nums(&c.rate_zero_labels, num));
    let t = &c.tolerance;
    let _ = writeln!(
        s,
        "\n[tolerance]\nslope = {}\nl1 = {}\ndigraph_factor = {}\nmoment_order = {}",
        num(t.slope),
        num(t.l1),
        num(t.digraph_factor),
        num(t.moment_order)
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config("kind = couple\n").unwrap();
        assert_eq!(c, ExperimentConfig::new(ExperimentKind::Couple));
        assert_eq!(parse_config("").unwrap().kind, ExperimentKind::Simulate);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("kind = simulate\n\n[model]\nkernal = zero\n").unwrap_err();
        match err {
            Error::Parse { line, column, message } => {
                assert_eq!((line, column), (4, 1));
                assert!(message.contains("model.kernal"), "{message}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match parse_config("n = [1, 2\n").unwrap_err() {
            Error::Parse { line: 1, column, .. } => assert_eq!(column, 10),
            e => panic!("{e:?}"),
        }
        match parse_config("model.kernel = kuramoto(kappa = x)\n").unwrap_err() {
            Error::Parse { line: 1, column, message } => {
                assert_eq!(column, 33);
                assert!(message.contains("number"));
            }
            e => panic!("{e:?}"),
        }
        assert!(parse_config("n = [128, 64]").is_err());
        assert!(parse_config("kind = nonsense").is_err());
    }

    #[test]
    fn sections_and_dotted_keys_agree() {
        let a = parse_config("[model]\nkernel = kuramoto(2)  # coupling\n[graph]\nkind = erdos_renyi(p = 0.5)\n").unwrap();
        let b = parse_config("model.kernel = kuramoto(kappa = 2)\ngraph.kind = erdos_renyi(0.5)\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.model.kernel, KernelSpec::Kuramoto { kappa: 2.0 });
    }

    #[test]
    fn full_round_trip() {
        let mut c = ExperimentConfig::new(ExperimentKind::RateZero);
        c.model = ModelSpec {
            dim: 1,
            geometry: Geometry::Periodic(20.0),
            kernel: KernelSpec::Gaussian { a: 0.3, s: 0.1 },
            weight_law: WeightLaw::Affine { ell: ScalarFn::Bump { c: 0.2, s: 0.5 }, alpha: ScalarFn::Const(-1.0 / 3.0) },
            normalization: Normalization::MotschTadmor { floor: 1e-8 },
            noise: 0.7,
            initial: InitialLaw::WrappedGaussian { mean: vec![0.1], std: vec![0.25] },
        };
        c.graph = GraphKind::RandomEnvironment {
            graphon: Graphon::Cosine,
            alphabet: Alphabet::new(vec![0.0, 0.5, 1.0], vec![0.2, 0.3, 0.5]).unwrap(),
        };
        c.ns = vec![8, 16];
        c.seeds = vec![3, 1];
        c.out = PathBuf::from("runs/a b");
        c.pde.system = PdeSystem::Adaptive;
        c.sanov.tests = vec![LabelTest::Weight, LabelTest::GapWeight];
        c.picard.method = ForceMethod::Direct;
        let text = emit_config(&c);
        assert_eq!(parse_config(&text).unwrap(), c);
    }

    #[test]
    fn requested_kind_must_match() {
        assert!(parse_config_as("kind = sanov", Some(ExperimentKind::Couple)).is_err());
        assert_eq!(parse_config_as("", Some(ExperimentKind::Sanov)).unwrap().kind, ExperimentKind::Sanov);
    }
}
