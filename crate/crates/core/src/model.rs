//! Domain types shared by every module: time grids, geometry, paths,
//! particle inputs and the kernel / weight-law catalogues.

use crate::error::{Error, Result};
use std::f64::consts::TAU;

/// Half-width used to accept periods that are "2π" up to rounding in a config.
const PERIOD_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Geometry {
    Free,
    /// Torus with the same period on every axis.
    Periodic(f64),
}

impl Geometry {
    pub fn torus() -> Self {
        Geometry::Periodic(TAU)
    }

    pub fn period(self) -> Option<f64> {
        match self {
            Geometry::Free => None,
            Geometry::Periodic(p) => Some(p),
        }
    }

    /// Reduce a coordinate to the fundamental domain `[0, P)`.
    #[inline]
    pub fn wrap(self, x: f64) -> f64 {
        match self {
            Geometry::Free => x,
            Geometry::Periodic(p) => {
                let r = x.rem_euclid(p);
                if r >= p {
                    0.0
                } else {
                    r
                }
            }
        }
    }

    /// Signed displacement `to - from`, minimal image on the torus.
    #[inline]
    pub fn displacement(self, from: f64, to: f64) -> f64 {
        match self {
            Geometry::Free => to - from,
            Geometry::Periodic(p) => {
                let d = (to - from).rem_euclid(p);
                if d > 0.5 * p {
                    d - p
                } else {
                    d
                }
            }
        }
    }

    /// Euclidean (or flat-torus) distance between two points.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = self.displacement(x, y);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    fn contains(self, x: f64) -> bool {
        match self {
            Geometry::Free => x.is_finite(),
            Geometry::Periodic(p) => (0.0..p).contains(&x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::config("time grid needs at least one step"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node `t_k`; the last node is the horizon exactly.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.node(k))
    }

    /// Index of the node closest to `t`.
    pub fn nearest_step(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.steps)
    }

    /// Same horizon with the step count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        TimeGrid {
            horizon: self.horizon,
            steps: self.steps * factor.max(1),
        }
    }
}

/// A state trajectory at the grid nodes, row-major `(M+1) × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePath {
    dim: usize,
    geometry: Geometry,
    values: Vec<f64>,
}

impl StatePath {
    pub fn new(dim: usize, geometry: Geometry, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || values.len() % dim != 0 {
            return Err(Error::size(format!(
                "path of {} values is not a whole number of {dim}-dimensional states",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|&v| !geometry.contains(v)) {
            return Err(Error::invalid(format!(
                "path value {} at index {bad} is outside the state domain",
                values[bad]
            )));
        }
        Ok(StatePath { dim, geometry, values })
    }

    /// Wraps lifted coordinates into the fundamental domain first.
    pub fn from_lifted(dim: usize, geometry: Geometry, mut values: Vec<f64>) -> Result<Self> {
        for v in &mut values {
            *v = geometry.wrap(*v);
        }
        Self::new(dim, geometry, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sup over nodes of the pointwise distance.
    pub fn sup_distance(&self, other: &StatePath) -> Result<f64> {
        if self.dim != other.dim || self.len() != other.len() {
            return Err(Error::size("paths on different grids"));
        }
        Ok((0..self.len())
            .map(|k| self.geometry.distance(self.at(k), other.at(k)))
            .fold(0.0, f64::max))
    }

    /// Piecewise-linear interpolation at time `t`.
    pub fn interpolate(&self, grid: &TimeGrid, t: f64) -> Vec<f64> {
        let s = (t / grid.dt()).clamp(0.0, grid.steps() as f64);
        let k = (s.floor() as usize).min(grid.steps().saturating_sub(1));
        let frac = s - k as f64;
        let (a, b) = (self.at(k), self.at((k + 1).min(self.len() - 1)));
        a.iter()
            .zip(b)
            .map(|(&x, &y)| self.geometry.wrap(x + frac * self.geometry.displacement(x, y)))
            .collect()
    }
}

/// One particle's input ω = (label, initial state, Brownian increments).
#[derive(Clone, Debug, PartialEq)]
pub struct InputDatum {
    pub label: f64,
    pub x0: Vec<f64>,
    /// `M × d` increments, each N(0, dt).
    pub increments: Vec<f64>,
    pub stream: u64,
}

impl InputDatum {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.x0.len().max(1)
    }

    /// The driving term σ = x₀ + amplitude·B at every node, in lifted coordinates.
    pub fn driving_lifted(&self, amplitude: f64) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.increments.len() + d);
        out.extend_from_slice(&self.x0);
        let mut cur = self.x0.clone();
        for db in self.increments.chunks_exact(d) {
            for (c, &b) in cur.iter_mut().zip(db) {
                *c += amplitude * b;
            }
            out.extend_from_slice(&cur);
        }
        out
    }

    pub fn driving_path(&self, amplitude: f64, geometry: Geometry) -> Result<StatePath> {
        StatePath::from_lifted(self.dim(), geometry, self.driving_lifted(amplitude))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Point(Vec<f64>),
    /// Uniform on the cube `[lo, hi]^d`.
    Uniform { lo: f64, hi: f64 },
    /// Diagonal Gaussian; one entry broadcasts to every axis.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Gaussian folded onto the torus.
    WrappedGaussian { mean: Vec<f64>, std: Vec<f64> },
}

fn broadcast(v: &[f64], dim: usize, what: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; dim]),
        n if n == dim => Ok(v.to_vec()),
        n => Err(Error::config(format!("{what} has {n} entries for a {dim}-dimensional state"))),
    }
}

impl InitialLaw {
    pub(crate) fn check(&self, dim: usize, geometry: Geometry) -> Result<()> {
        match self {
            InitialLaw::Point(p) => {
                broadcast(p, dim, "point mass")?;
            }
            InitialLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::config(format!("uniform law needs lo < hi, got [{lo}, {hi}]")));
                }
            }
            InitialLaw::Gaussian { mean, std } | InitialLaw::WrappedGaussian { mean, std } => {
                broadcast(mean, dim, "mean")?;
                if broadcast(std, dim, "std")?.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
                    return Err(Error::config("Gaussian standard deviations must be non-negative"));
                }
                if matches!(self, InitialLaw::WrappedGaussian { .. }) && geometry == Geometry::Free {
                    return Err(Error::config("wrapped Gaussian initial law needs periodic geometry"));
                }
            }
        }
        Ok(())
    }

    /// Draw one state from `normals` / `uniforms` supplied by the caller.
    pub(crate) fn sample<R: rand::Rng>(&self, dim: usize, geometry: Geometry, rng: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let raw: Vec<f64> = match self {
            InitialLaw::Point(p) => broadcast(p, dim, "").unwrap_or_else(|_| vec![0.0; dim]),
            InitialLaw::Uniform { lo, hi } => (0..dim).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect(),
            InitialLaw::Gaussian { mean, std } | InitialLaw::WrappedGaussian { mean, std } => {
                let m = broadcast(mean, dim, "").unwrap_or_else(|_| vec![0.0; dim]);
                let s = broadcast(std, dim, "").unwrap_or_else(|_| vec![1.0; dim]);
                m.iter()
                    .zip(&s)
                    .map(|(&m, &s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + s * z
                    })
                    .collect()
            }
        };
        raw.into_iter().map(|x| geometry.wrap(x)).collect()
    }
}

/// Interaction kernels `K(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    Zero,
    /// `a·(y − x)`, displacement radially clamped at `clamp`.
    LinearAttraction { a: f64, clamp: f64 },
    /// `κ·sin(y − x)` per axis.
    Kuramoto { kappa: f64 },
    /// `a·(y − x)·exp(−|y − x|²/2s²)`.
    Gaussian { a: f64, s: f64 },
}

pub const DEFAULT_CLAMP: f64 = 10.0;

impl KernelSpec {
    pub fn is_zero(&self) -> bool {
        match self {
            KernelSpec::Zero => true,
            KernelSpec::LinearAttraction { a, .. } | KernelSpec::Gaussian { a, .. } => *a == 0.0,
            KernelSpec::Kuramoto { kappa } => *kappa == 0.0,
        }
    }

    /// Declared sup of each output component.
    pub fn bound(&self) -> f64 {
        match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::LinearAttraction { a, clamp } => a.abs() * clamp,
            KernelSpec::Kuramoto { kappa } => kappa.abs(),
            KernelSpec::Gaussian { a, s } => a.abs() * s * (-0.5f64).exp(),
        }
    }

    /// Declared constant for `|K(x,y) − K(x',y')| ≤ L(|x−x'| + |y−y'|)`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::LinearAttraction { a, .. } | KernelSpec::Gaussian { a, .. } => a.abs(),
            KernelSpec::Kuramoto { kappa } => kappa.abs(),
        }
    }

    /// Writes `K(x, y)` into `out`.
    #[inline]
    pub fn eval_into(&self, geometry: Geometry, x: &[f64], y: &[f64], out: &mut [f64]) {
        match *self {
            KernelSpec::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            KernelSpec::Kuramoto { kappa } => {
                for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
                    *o = kappa * (yi - xi).sin();
                }
            }
            KernelSpec::LinearAttraction { a, clamp } => {
                let mut r2 = 0.0;
                for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
                    *o = geometry.displacement(xi, yi);
                    r2 += *o * *o;
                }
                let r = r2.sqrt();
                let scale = if r > clamp { a * clamp / r } else { a };
                out.iter_mut().for_each(|o| *o *= scale);
            }
            KernelSpec::Gaussian { a, s } => {
                let mut r2 = 0.0;
                for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
                    *o = geometry.displacement(xi, yi);
                    r2 += *o * *o;
                }
                let scale = a * (-r2 / (2.0 * s * s)).exp();
                out.iter_mut().for_each(|o| *o *= scale);
            }
        }
    }
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64], geometry: Geometry) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::size("kernel arguments of different dimension"));
    }
    let mut out = vec![0.0; x.len()];
    spec.eval_into(geometry, x, y, &mut out);
    Ok(out)
}

/// Scalar functions of a state pair, used for the weight-law terms ℓ and α.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarFn {
    Const(f64),
    /// `c · mean_k cos(x_k − x̃_k)`.
    Cos(f64),
    /// `c · exp(−|x − x̃|²/2s²)`.
    Bump { c: f64, s: f64 },
}

impl ScalarFn {
    #[inline]
    pub fn eval(&self, geometry: Geometry, x: &[f64], xt: &[f64]) -> f64 {
        match *self {
            ScalarFn::Const(c) => c,
            ScalarFn::Cos(c) => {
                let s: f64 = x.iter().zip(xt).map(|(&a, &b)| (a - b).cos()).sum();
                c * s / x.len() as f64
            }
            ScalarFn::Bump { c, s } => {
                let r2: f64 = x
                    .iter()
                    .zip(xt)
                    .map(|(&a, &b)| {
                        let d = geometry.displacement(a, b);
                        d * d
                    })
                    .sum();
                c * (-r2 / (2.0 * s * s)).exp()
            }
        }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            ScalarFn::Const(c) | ScalarFn::Cos(c) | ScalarFn::Bump { c, .. } => c.abs(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            ScalarFn::Const(_) => 0.0,
            ScalarFn::Cos(c) => c.abs(),
            ScalarFn::Bump { c, s } => c.abs() * (-0.5f64).exp() / s,
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match *self {
            ScalarFn::Const(c) => Some(c),
            ScalarFn::Cos(c) | ScalarFn::Bump { c, .. } if c == 0.0 => Some(0.0),
            _ => None,
        }
    }

    pub(crate) fn check(&self, geometry: Geometry) -> Result<()> {
        match *self {
            ScalarFn::Const(c) | ScalarFn::Cos(c) if !c.is_finite() => {
                Err(Error::config("weight-law coefficient must be finite"))
            }
            ScalarFn::Cos(_) => check_two_pi(geometry, "cos"),
            ScalarFn::Bump { c, s } => {
                if !(c.is_finite() && s > 0.0 && s.is_finite()) {
                    return Err(Error::config("bump needs a finite height and positive width"));
                }
                check_narrow(geometry, s, "bump")
            }
            ScalarFn::Const(_) => Ok(()),
        }
    }
}

fn check_two_pi(geometry: Geometry, what: &str) -> Result<()> {
    match geometry {
        Geometry::Periodic(p) if (p - TAU).abs() > PERIOD_TOL => Err(Error::config(format!(
            "{what} is 2π-periodic and needs period 2π on a torus, got {p}"
        ))),
        _ => Ok(()),
    }
}

/// A minimal-image profile is only Lipschitz if it has decayed at the antipode.
fn check_narrow(geometry: Geometry, s: f64, what: &str) -> Result<()> {
    match geometry {
        Geometry::Periodic(p) if s > p / 12.0 => Err(Error::config(format!(
            "{what} width {s} is too wide for period {p} (needs width ≤ period/12)"
        ))),
        _ => Ok(()),
    }
}

/// Weight evolution laws `dw/dt = φ(x, x̃, w)`.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightLaw {
    Frozen,
    /// `φ = −λw + ℓ(x, x̃)`.
    LinearKuramoto { lambda: f64, ell: ScalarFn },
    /// `φ = ℓ(x, x̃) + α(x, x̃)·w`.
    Affine { ell: ScalarFn, alpha: ScalarFn },
    /// `φ = rate·tanh(ℓ(x, x̃) − w)`.
    Saturating { rate: f64, target: ScalarFn },
}

impl WeightLaw {
    pub fn is_frozen(&self) -> bool {
        matches!(self, WeightLaw::Frozen)
    }

    #[inline]
    pub fn phi(&self, geometry: Geometry, x: &[f64], xt: &[f64], w: f64) -> f64 {
        match self {
            WeightLaw::Frozen => 0.0,
            WeightLaw::LinearKuramoto { lambda, ell } => -lambda * w + ell.eval(geometry, x, xt),
            WeightLaw::Affine { ell, alpha } => ell.eval(geometry, x, xt) + alpha.eval(geometry, x, xt) * w,
            WeightLaw::Saturating { rate, target } => rate * (target.eval(geometry, x, xt) - w).tanh(),
        }
    }

    /// Lipschitz constant in `w`.
    pub fn lipschitz_weight(&self) -> f64 {
        match self {
            WeightLaw::Frozen => 0.0,
            WeightLaw::LinearKuramoto { lambda, .. } => lambda.abs(),
            WeightLaw::Affine { alpha, .. } => alpha.bound(),
            WeightLaw::Saturating { rate, .. } => rate.abs(),
        }
    }

    /// Lipschitz constant in the state pair for weights with `|w| ≤ wmax`.
    pub fn lipschitz_state(&self, wmax: f64) -> f64 {
        match self {
            WeightLaw::Frozen => 0.0,
            WeightLaw::LinearKuramoto { ell, .. } => ell.lipschitz(),
            WeightLaw::Affine { ell, alpha } => ell.lipschitz() + alpha.lipschitz() * wmax,
            WeightLaw::Saturating { rate, target } => rate.abs() * target.lipschitz(),
        }
    }

    /// Interval containing every weight reachable by time `horizon` from `[0, 1]`.
    pub fn weight_box(&self, horizon: f64) -> (f64, f64) {
        match self {
            WeightLaw::Frozen => (0.0, 1.0),
            WeightLaw::LinearKuramoto { lambda, ell } => {
                if *lambda > 0.0 {
                    let b = ell.bound() / lambda + 1.0;
                    (-b, b)
                } else {
                    let b = 1.0 + (ell.bound() + lambda.abs()) * horizon * (lambda.abs() * horizon).exp();
                    (-b, b)
                }
            }
            WeightLaw::Affine { ell, alpha } => {
                let b = (1.0 + ell.bound() * horizon) * (alpha.bound() * horizon).exp();
                (-b, b)
            }
            WeightLaw::Saturating { rate, .. } => (-rate.abs() * horizon, 1.0 + rate.abs() * horizon),
        }
    }

    /// Sup of |φ| over the weight box.
    pub fn bound(&self, horizon: f64) -> f64 {
        let (lo, hi) = self.weight_box(horizon);
        let wmax = lo.abs().max(hi.abs());
        match self {
            WeightLaw::Frozen => 0.0,
            WeightLaw::LinearKuramoto { lambda, ell } => lambda.abs() * wmax + ell.bound(),
            WeightLaw::Affine { ell, alpha } => ell.bound() + alpha.bound() * wmax,
            WeightLaw::Saturating { rate, .. } => rate.abs(),
        }
    }

    pub(crate) fn check(&self, geometry: Geometry) -> Result<()> {
        match self {
            WeightLaw::Frozen => Ok(()),
            WeightLaw::LinearKuramoto { lambda, ell } => {
                if !lambda.is_finite() {
                    return Err(Error::config("λ must be finite"));
                }
                ell.check(geometry)
            }
            WeightLaw::Affine { ell, alpha } => {
                ell.check(geometry)?;
                alpha.check(geometry)
            }
            WeightLaw::Saturating { rate, target } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::config("saturation rate must be non-negative"));
                }
                target.check(geometry)
            }
        }
    }
}

pub fn eval_phi(spec: &WeightLaw, x: &[f64], xt: &[f64], w: f64, geometry: Geometry) -> Result<f64> {
    if x.len() != xt.len() {
        return Err(Error::size("weight-law arguments of different dimension"));
    }
    Ok(spec.phi(geometry, x, xt, w))
}

pub const DEFAULT_DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    /// Divide the interaction sum by N.
    Plain,
    /// Divide by the total incident weight, floored.
    MotschTadmor { floor: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub dim: usize,
    pub geometry: Geometry,
    pub kernel: KernelSpec,
    pub weight_law: WeightLaw,
    pub normalization: Normalization,
    pub noise: f64,
    pub initial: InitialLaw,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            dim: 1,
            geometry: Geometry::torus(),
            kernel: KernelSpec::Zero,
            weight_law: WeightLaw::Frozen,
            normalization: Normalization::Plain,
            noise: 1.0,
            initial: InitialLaw::Uniform { lo: 0.0, hi: TAU },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub kernel_bound: f64,
    pub kernel_lipschitz: f64,
    pub clamp: Option<f64>,
    pub weight_box: (f64, f64),
    pub phi_bound: f64,
    pub phi_lipschitz_state: f64,
    pub phi_lipschitz_weight: f64,
    /// Lipschitz estimate of the drift in the state argument (a diagnostic, not a certified bound).
    pub drift_lipschitz: f64,
    /// `L_b · T`; contraction of a single Picard sweep is expected when below 1.
    pub contraction_horizon: f64,
    /// Upper bound on the drift speed, for CFL hints.
    pub max_speed: f64,
    pub notes: Vec<String>,
}

impl Diagnostics {
    /// Largest explicit step for an upwind / ½Δ scheme with cell width `dx`.
    pub fn pde_dt_hint(&self, dx: f64) -> f64 {
        1.0 / (self.max_speed / dx + 1.0 / (dx * dx))
    }
}

/// Checks the model for consistency and reports the constants used by the estimates.
pub fn validate_model(spec: &ModelSpec, grid: &TimeGrid) -> Result<Diagnostics> {
    if !(1..=2).contains(&spec.dim) {
        return Err(Error::config(format!("state dimension must be 1 or 2, got {}", spec.dim)));
    }
    if let Geometry::Periodic(p) = spec.geometry {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::config(format!("period must be positive, got {p}")));
        }
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::config(format!("noise amplitude must be ≥ 0, got {}", spec.noise)));
    }
    let mut notes = Vec::new();
    let mut clamp = None;
    match spec.kernel {
        KernelSpec::Zero => {}
        KernelSpec::Kuramoto { kappa } => {
            if !kappa.is_finite() {
                return Err(Error::config("κ must be finite"));
            }
            check_two_pi(spec.geometry, "kuramoto")?;
        }
        KernelSpec::LinearAttraction { a, clamp: r } => {
            if !(a.is_finite() && r.is_finite() && r > 0.0) {
                return Err(Error::config("linear_attraction needs a finite rate and a positive clamp"));
            }
            if spec.geometry != Geometry::Free {
                return Err(Error::config(
                    "linear_attraction is discontinuous at antipodal points of a torus; use free geometry",
                ));
            }
            clamp = Some(r);
        }
        KernelSpec::Gaussian { a, s } => {
            if !(a.is_finite() && s.is_finite() && s > 0.0) {
                return Err(Error::config("gaussian kernel needs a finite amplitude and positive width"));
            }
            check_narrow(spec.geometry, s, "gaussian kernel")?;
        }
    }
    spec.weight_law.check(spec.geometry)?;
    spec.initial.check(spec.dim, spec.geometry)?;
    if let Normalization::MotschTadmor { floor } = spec.normalization {
        if !(floor.is_finite() && floor > 0.0) {
            return Err(Error::config("Motsch-Tadmor normalization needs a positive denominator floor"));
        }
        notes.push(format!("total incident weight floored at {floor:e}"));
    }

    let horizon = grid.horizon();
    let weight_box = spec.weight_law.weight_box(horizon);
    let wmax = weight_box.0.abs().max(weight_box.1.abs());
    let kb = spec.kernel.bound();
    let kl = spec.kernel.lipschitz();
    let lw = spec.weight_law.lipschitz_weight();
    let ls = spec.weight_law.lipschitz_state(wmax);
    let drift_lipschitz = wmax * kl + kb * ls * horizon * (lw * horizon).exp();
    if let Some(r) = clamp {
        notes.push(format!("linear_attraction clamped at radius {r}"));
    }
    let max_speed = kb * match spec.normalization {
        Normalization::Plain => wmax,
        Normalization::MotschTadmor { .. } if weight_box.0 >= 0.0 => 1.0,
        Normalization::MotschTadmor { floor } => wmax / floor,
    };
    Ok(Diagnostics {
        kernel_bound: kb,
        kernel_lipschitz: kl,
        clamp,
        weight_box,
        phi_bound: spec.weight_law.bound(horizon),
        phi_lipschitz_state: ls,
        phi_lipschitz_weight: lw,
        drift_lipschitz,
        contraction_horizon: drift_lipschitz * horizon,
        max_speed,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kernel_examples() {
        let g = Geometry::Free;
        assert_eq!(eval_kernel(&KernelSpec::Zero, &[0.3], &[0.7], g).unwrap(), vec![0.0]);
        let k = eval_kernel(&KernelSpec::Kuramoto { kappa: 1.0 }, &[0.0], &[PI / 2.0], Geometry::torus()).unwrap();
        assert!((k[0] - 1.0).abs() < 1e-15);
        let la = KernelSpec::LinearAttraction { a: 2.0, clamp: DEFAULT_CLAMP };
        assert_eq!(eval_kernel(&la, &[1.0], &[4.0], g).unwrap(), vec![6.0]);
        let far = eval_kernel(&la, &[0.0], &[40.0], g).unwrap();
        assert_eq!(far, vec![20.0]);
    }

    #[test]
    fn phi_examples() {
        let g = Geometry::torus();
        assert_eq!(eval_phi(&WeightLaw::Frozen, &[1.0], &[2.0], 0.3, g).unwrap(), 0.0);
        let lk = WeightLaw::LinearKuramoto { lambda: 1.0, ell: ScalarFn::Const(1.0) };
        assert_eq!(eval_phi(&lk, &[0.0], &[0.0], 0.5, g).unwrap(), 0.5);
        let af = WeightLaw::Affine { ell: ScalarFn::Cos(1.0), alpha: ScalarFn::Const(-1.0) };
        assert_eq!(eval_phi(&af, &[0.4], &[0.4], 0.25, g).unwrap(), 0.75);
    }

    #[test]
    fn gaussian_bound_matches_grid_search() {
        let spec = KernelSpec::Gaussian { a: 1.0, s: 1.0 };
        let best = (0..=200_000)
            .map(|i| {
                let r = i as f64 * 5e-5;
                r * (-r * r / 2.0).exp()
            })
            .fold(0.0, f64::max);
        assert!((spec.bound() - 0.6065306597126334).abs() < 1e-15);
        assert!((spec.bound() - best).abs() < 1e-8);
    }

    #[test]
    fn validate_reports_catalogue_constants() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let mut spec = ModelSpec { kernel: KernelSpec::Kuramoto { kappa: 1.0 }, ..Default::default() };
        let d = validate_model(&spec, &grid).unwrap();
        assert_eq!((d.kernel_bound, d.kernel_lipschitz), (1.0, 1.0));
        spec.kernel = KernelSpec::Zero;
        assert_eq!(validate_model(&spec, &grid).unwrap().kernel_bound, 0.0);
    }

    #[test]
    fn validate_rejects_bad_pairings() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let spec = ModelSpec {
            geometry: Geometry::Periodic(1.0),
            kernel: KernelSpec::Kuramoto { kappa: 1.0 },
            initial: InitialLaw::Uniform { lo: 0.0, hi: 1.0 },
            ..Default::default()
        };
        assert!(matches!(validate_model(&spec, &grid), Err(Error::Config(_))));
        let spec = ModelSpec { kernel: KernelSpec::LinearAttraction { a: 1.0, clamp: 10.0 }, ..Default::default() };
        assert!(validate_model(&spec, &grid).is_err());
        let spec = ModelSpec {
            normalization: Normalization::MotschTadmor { floor: 0.0 },
            ..Default::default()
        };
        assert!(validate_model(&spec, &grid).is_err());
    }

    #[test]
    fn grid_nodes_end_on_horizon() {
        let g = TimeGrid::new(0.3, 7).unwrap();
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes[0], 0.0);
        assert_eq!(*nodes.last().unwrap(), 0.3);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(0.0, 3).is_err());
    }

    #[test]
    fn torus_wrap_stays_in_domain() {
        let g = Geometry::torus();
        for x in [-1e-17, -TAU, 3.0 * TAU, 1e300, -7.5] {
            let w = g.wrap(x);
            assert!((0.0..TAU).contains(&w), "{x} -> {w}");
        }
        assert!((g.displacement(0.1, TAU - 0.1) + 0.2).abs() < 1e-12);
    }
}
