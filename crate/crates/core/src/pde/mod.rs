//! Finite-volume solvers for the limit PDEs on a 1-D torus.
//!
//! All schemes are explicit: conservative upwind advection, centred diffusion with
//! coefficient ½, and a positivity CFL `dt·(max|V|/Δx + 1/Δx²) ≤ 1` for densities.

mod closure;
mod compare;

pub use closure::{
    solve_adaptive_closure, solve_pathwise_closure, AdaptiveClosureOptions, AdaptiveTrajectory, ClosureFrame,
    ClosureTrajectory, PairDensity, LabeledPairDensity, MAX_ADAPTIVE_LABELS,
};
pub use compare::{pde_vs_particles, ComparisonRow, ComparisonSetup};

use crate::error::{Error, Result};
use crate::graphs::LimitDigraph;
use crate::metrics::{Axis, CellGrid, GridDensity};
use crate::model::{validate_model, Geometry, InitialLaw, KernelSpec, ModelSpec, TimeGrid};
use rayon::prelude::*;
use std::f64::consts::TAU;
use std::io::Write;

/// Positivity floor used when dividing by a density.
pub const DENSITY_FLOOR: f64 = 1e-10;
/// Most negative value a density may reach before the step is declared failed.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-12;
/// Allowed drift of each per-label mass away from 1.
pub const MASS_TOLERANCE: f64 = 1e-8;
/// Fraction of the CFL limit used by [`StateGrid::stable_dt`].
pub const CFL_SAFETY: f64 = 0.9;

/// Uniform cells on `[0, period)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateGrid {
    cells: usize,
    period: f64,
}

impl StateGrid {
    pub fn new(cells: usize, period: f64) -> Result<Self> {
        if cells < 4 || !(period > 0.0 && period.is_finite()) {
            return Err(Error::config(format!("state grid needs ≥ 4 cells and a positive period, got {cells} on {period}")));
        }
        Ok(StateGrid { cells, period })
    }

    pub fn torus(cells: usize) -> Result<Self> {
        Self::new(cells, TAU)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn dx(&self) -> f64 {
        self.period / self.cells as f64
    }

    pub fn center(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * self.dx()
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::Periodic(self.period)
    }

    pub fn axis(&self) -> Axis {
        Axis::torus(self.period, self.cells).expect("valid grid")
    }

    /// Largest `dt` keeping a 1-D density positive at speed `vmax`.
    pub fn stable_dt(&self, vmax: f64) -> f64 {
        let dx = self.dx();
        CFL_SAFETY / (vmax.abs() / dx + 1.0 / (dx * dx))
    }

    /// Cell masses of an initial law on this torus.
    pub fn cell_masses(&self, law: &InitialLaw) -> Result<Vec<f64>> {
        law.check(1, self.geometry())?;
        let dx = self.dx();
        let p = self.period;
        let masses: Vec<f64> = match law {
            InitialLaw::Point(x) => {
                let x = self.geometry().wrap(x[0]);
                let mut m = vec![0.0; self.cells];
                m[((x / dx) as usize).min(self.cells - 1)] = 1.0;
                m
            }
            InitialLaw::Uniform { lo, hi } => {
                let width = hi - lo;
                (0..self.cells)
                    .map(|c| {
                        let (a, b) = (c as f64 * dx, (c + 1) as f64 * dx);
                        // Overlap of the cell with the wrapped copies of [lo, hi].
                        let first = ((lo - b) / p).floor() as i64;
                        let last = ((hi - a) / p).ceil() as i64;
                        (first..=last)
                            .map(|k| {
                                let s = k as f64 * p;
                                ((b + s).min(*hi) - (a + s).max(*lo)).max(0.0)
                            })
                            .sum::<f64>()
                            / width
                    })
                    .collect()
            }
            InitialLaw::Gaussian { mean, std } | InitialLaw::WrappedGaussian { mean, std } => {
                let (m, s) = (mean[0], std[0]);
                if s == 0.0 {
                    return self.cell_masses(&InitialLaw::Point(vec![m]));
                }
                let cdf = |x: f64| 0.5 * libm::erfc(-(x - m) / (s * std::f64::consts::SQRT_2));
                let images = (10.0 * s / p).ceil() as i64 + 1;
                (0..self.cells)
                    .map(|c| {
                        let (a, b) = (c as f64 * dx, (c + 1) as f64 * dx);
                        (-images..=images).map(|k| cdf(b + k as f64 * p) - cdf(a + k as f64 * p)).sum()
                    })
                    .collect()
            }
        };
        let total: f64 = masses.iter().sum();
        Ok(masses.into_iter().map(|v| v / total).collect())
    }

    fn kernel_stencil(&self, kernel: &KernelSpec) -> Vec<f64> {
        let g = self.geometry();
        let dx = self.dx();
        let mut out = [0.0];
        (0..self.cells)
            .map(|m| {
                kernel.eval_into(g, &[0.0], &[m as f64 * dx], &mut out);
                out[0]
            })
            .collect()
    }
}

/// Translation-invariant kernel `K(x, y) = k(y − x)` sampled on the grid.
#[derive(Clone, Debug)]
pub(crate) struct Stencil {
    values: Vec<f64>,
    dx: f64,
    zero: bool,
}

impl Stencil {
    pub(crate) fn new(grid: &StateGrid, kernel: &KernelSpec) -> Self {
        Stencil { values: grid.kernel_stencil(kernel), dx: grid.dx(), zero: kernel.is_zero() }
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.zero
    }

    /// `∫ K(x_c, y) f(y) dy` at every cell centre (rectangle rule, exact trapezoid on the torus).
    pub(crate) fn convolve(&self, f: &[f64], out: &mut [f64]) {
        let n = f.len();
        if self.zero {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        out.par_iter_mut().enumerate().for_each(|(c, o)| {
            let mut s = 0.0;
            for (m, &k) in self.values.iter().enumerate() {
                s += k * f[(c + m) % n];
            }
            *o = s * self.dx;
        });
    }

    pub(crate) fn bound(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Densities `ρ^ξ_l` on the midpoint label grid `ξ_l = (l + ½)/L`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDensity {
    labels: usize,
    grid: StateGrid,
    values: Vec<f64>,
    time: f64,
}

impl LabeledDensity {
    /// `values` is label-major, `labels × cells`.
    pub fn new(labels: usize, grid: StateGrid, values: Vec<f64>, time: f64) -> Result<Self> {
        if labels == 0 || values.len() != labels * grid.cells {
            return Err(Error::size(format!("expected {labels} × {} density values, got {}", grid.cells, values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < -NEGATIVITY_TOLERANCE) {
            return Err(Error::invalid(format!("density value {v} is negative or non-finite")));
        }
        let d = LabeledDensity { labels, grid, values, time };
        for l in 0..labels {
            let m = d.mass(l);
            if (m - 1.0).abs() > MASS_TOLERANCE {
                return Err(Error::invalid(format!("label {l} has mass {m}, expected 1")));
            }
        }
        Ok(d)
    }

    /// Cell averages of `law`, identical for every label.
    pub fn from_law(law: &InitialLaw, labels: usize, grid: StateGrid) -> Result<Self> {
        let dx = grid.dx();
        let row: Vec<f64> = grid.cell_masses(law)?.into_iter().map(|m| m / dx).collect();
        let values = (0..labels).flat_map(|_| row.iter().copied()).collect();
        Self::new(labels, grid, values, 0.0)
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn label(&self, l: usize) -> f64 {
        (l as f64 + 0.5) / self.labels as f64
    }

    pub fn grid(&self) -> StateGrid {
        self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.grid.cells..(l + 1) * self.grid.cells]
    }

    pub fn mass(&self, l: usize) -> f64 {
        self.row(l).iter().sum::<f64>() * self.grid.dx()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Argument of the first trigonometric moment of label `l`.
    pub fn circular_mean(&self, l: usize) -> f64 {
        let scale = TAU / self.grid.period;
        let (s, c) = self.row(l).iter().enumerate().fold((0.0, 0.0), |(s, c), (k, &r)| {
            let (sn, cs) = (scale * self.grid.center(k)).sin_cos();
            (s + r * sn, c + r * cs)
        });
        (s.atan2(c) / scale).rem_euclid(self.grid.period)
    }

    /// Second central moment of label `l` using minimal-image displacements from `center`.
    pub fn variance_about(&self, l: usize, center: f64) -> f64 {
        let g = self.grid.geometry();
        let dx = self.grid.dx();
        let row = self.row(l);
        let mean: f64 = row.iter().enumerate().map(|(k, r)| r * g.displacement(center, self.grid.center(k))).sum::<f64>() * dx;
        row.iter()
            .enumerate()
            .map(|(k, r)| {
                let y = g.displacement(center, self.grid.center(k)) - mean;
                r * y * y
            })
            .sum::<f64>()
            * dx
    }

    /// Label `l` as a histogram-compatible density, merged into `cells` cells.
    pub fn grid_density(&self, l: usize, cells: usize) -> Result<GridDensity> {
        let n = self.grid.cells;
        if cells == 0 || n % cells != 0 {
            return Err(Error::config(format!("{cells} cells do not divide the {n}-cell PDE grid")));
        }
        let f = n / cells;
        let axis = Axis::torus(self.grid.period, cells)?;
        let values = self.row(l).chunks_exact(f).map(|c| c.iter().sum::<f64>() / f as f64).collect();
        Ok(GridDensity { grid: CellGrid::OneD(axis), values })
    }

    /// Header `label` followed by the cell centres, one row per label.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.grid.cells).map(|c| crate::dynamics::fmt(self.grid.center(c))));
        w.write_record(&header)?;
        for l in 0..self.labels {
            let mut rec = vec![crate::dynamics::fmt(self.label(l))];
            rec.extend(self.row(l).iter().map(|&v| crate::dynamics::fmt(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean label couplings `η̄[l][l']` on the midpoint label grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    labels: usize,
    values: Vec<f64>,
}

impl CouplingMatrix {
    pub fn new(labels: usize, values: Vec<f64>) -> Result<Self> {
        if labels == 0 || values.len() != labels * labels {
            return Err(Error::size(format!("coupling matrix needs {labels}² entries, got {}", values.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("coupling entries must be finite and non-negative"));
        }
        Ok(CouplingMatrix { labels, values })
    }

    pub fn constant(labels: usize, c: f64) -> Result<Self> {
        Self::new(labels, vec![c; labels * labels])
    }

    pub fn from_limit(limit: &LimitDigraph, labels: usize) -> Result<Self> {
        let xi = |l: usize| (l as f64 + 0.5) / labels as f64;
        let values = (0..labels * labels).map(|k| limit.mean_pair_weight(xi(k / labels), xi(k % labels))).collect();
        Self::new(labels, values)
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.values[l * self.labels + m]
    }

    pub fn dxi(&self) -> f64 {
        1.0 / self.labels as f64
    }

    /// `max_l Σ_l' η̄[l][l']·Δξ`.
    pub fn max_row_mass(&self) -> f64 {
        self.values.chunks_exact(self.labels).map(|r| r.iter().sum::<f64>() * self.dxi()).fold(0.0, f64::max)
    }

    /// `Σ_l' η̄[l][l'] Δξ ρ_l'` for every `l`.
    pub(crate) fn mix(&self, rho: &[f64], cells: usize, scale: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.labels * cells];
        for l in 0..self.labels {
            let o = &mut out[l * cells..(l + 1) * cells];
            for m in 0..self.labels {
                let e = self.get(l, m) * self.dxi() * scale;
                if e != 0.0 {
                    for (oc, r) in o.iter_mut().zip(&rho[m * cells..(m + 1) * cells]) {
                        *oc += e * r;
                    }
                }
            }
        }
        out
    }
}

/// Which steps a solver keeps.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Record {
    #[default]
    All,
    /// Only these steps (the initial state is always kept).
    Steps(Vec<usize>),
}

impl Record {
    pub(crate) fn keeps(&self, k: usize, last: usize) -> bool {
        match self {
            Record::All => true,
            Record::Steps(s) => k == 0 || k == last || s.contains(&k),
        }
    }

    /// The nearest grid steps to `times`.
    pub fn times(grid: &TimeGrid, times: &[f64]) -> Self {
        Record::Steps(times.iter().map(|&t| grid.nearest_step(t)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct VlasovOptions {
    pub record: Record,
    /// Multiply the coupling by `e^{−λt}`.
    pub coupling_decay: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityTrajectory {
    pub frames: Vec<LabeledDensity>,
}

impl DensityTrajectory {
    /// Frame whose time is closest to `t`.
    pub fn at_time(&self, t: f64) -> &LabeledDensity {
        self.frames
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .expect("trajectory always holds the initial frame")
    }

    pub fn last(&self) -> &LabeledDensity {
        self.frames.last().expect("trajectory always holds the initial frame")
    }
}

pub(crate) fn check_kernel(kernel: &KernelSpec, grid: &StateGrid, time: &TimeGrid) -> Result<()> {
    let model = ModelSpec { geometry: grid.geometry(), kernel: kernel.clone(), ..Default::default() };
    validate_model(&model, time).map(|_| ())
}

pub(crate) fn cfl_error(dt: f64, grid: &StateGrid, vmax: f64, dims: f64) -> Error {
    let dx = grid.dx();
    Error::Cfl { dt, suggested_dt: CFL_SAFETY / (dims * (vmax / dx + 1.0 / (dx * dx))) }
}

/// `dt·dims·(vmax/Δx + 1/Δx²) ≤ 1` for a `dims`-dimensional explicit step.
pub(crate) fn check_cfl(dt: f64, grid: &StateGrid, vmax: f64, dims: f64) -> Result<()> {
    let dx = grid.dx();
    if dt * dims * (vmax / dx + 1.0 / (dx * dx)) > 1.0 + 1e-12 {
        return Err(cfl_error(dt, grid, vmax, dims));
    }
    Ok(())
}

/// Net outflow per cell of `f` moved at cell velocities `v` plus diffusion ½∂²,
/// written into `out` as `−∂_x(f v) + ½∂_xx f`. Face velocities are averages of
/// the adjacent cells; the advective flux is upwinded.
pub(crate) fn transport_1d(f: &[f64], v: &[f64], dx: f64, out: &mut [f64]) {
    let n = f.len();
    let flux = |c: usize| {
        let e = (c + 1) % n;
        let u = 0.5 * (v[c] + v[e]);
        let adv = if u >= 0.0 { u * f[c] } else { u * f[e] };
        adv - 0.5 * (f[e] - f[c]) / dx
    };
    let mut left = flux(n - 1);
    for c in 0..n {
        let right = flux(c);
        out[c] = -(right - left) / dx;
        left = right;
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn check_density(values: &[f64], cells: usize, step: usize) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < -NEGATIVITY_TOLERANCE) {
        return Err(Error::Scheme(format!(
            "density {} at label {} cell {} after step {step}",
            values[i],
            i / cells,
            i % cells
        )));
    }
    Ok(())
}

/// Advance `∂_t ρ_l = −∂_x(ρ_l V_l) + ½∂_xx ρ_l`, `V_l = Σ_l' η̄[l][l'] Δξ ∫K(x,y)ρ_l'(y)dy`.
pub fn solve_vlasov_digraph(
    rho0: &LabeledDensity,
    eta: &CouplingMatrix,
    kernel: &KernelSpec,
    time: &TimeGrid,
    opts: &VlasovOptions,
) -> Result<DensityTrajectory> {
    let grid = rho0.grid;
    check_kernel(kernel, &grid, time)?;
    if eta.labels != rho0.labels {
        return Err(Error::size(format!("{} density labels against a {}-label coupling", rho0.labels, eta.labels)));
    }
    let stencil = Stencil::new(&grid, kernel);
    let dt = time.dt();
    let n = grid.cells;
    let dx = grid.dx();
    check_cfl(dt, &grid, stencil.bound() * eta.max_row_mass(), 1.0)?;
    let mut rho = rho0.values.clone();
    let mut frames = vec![LabeledDensity { time: 0.0, ..rho0.clone() }];
    let mut velocity = vec![0.0; rho.len()];
    let mut rate = vec![0.0; rho.len()];
    for k in 0..time.steps() {
        let scale = opts.coupling_decay.map_or(1.0, |lambda| (-lambda * time.node(k)).exp());
        let mixed = eta.mix(&rho, n, scale);
        for (v, m) in velocity.chunks_exact_mut(n).zip(mixed.chunks_exact(n)) {
            stencil.convolve(m, v);
        }
        check_cfl(dt, &grid, max_abs(&velocity), 1.0)?;
        rate.par_chunks_exact_mut(n)
            .zip(rho.par_chunks_exact(n))
            .zip(velocity.par_chunks_exact(n))
            .for_each(|((r, f), v)| transport_1d(f, v, dx, r));
        for (f, r) in rho.iter_mut().zip(&rate) {
            *f += dt * r;
        }
        check_density(&rho, n, k + 1)?;
        if opts.record.keeps(k + 1, time.steps()) {
            frames.push(LabeledDensity { labels: rho0.labels, grid, values: rho.clone(), time: time.node(k + 1) });
        }
    }
    Ok(DensityTrajectory { frames })
}

/// Constant-velocity drift-diffusion, used as a convergence oracle for the transport step.
pub fn solve_advection_diffusion(rho0: &LabeledDensity, velocity: f64, time: &TimeGrid) -> Result<LabeledDensity> {
    let grid = rho0.grid;
    let n = grid.cells;
    check_cfl(time.dt(), &grid, velocity.abs(), 1.0)?;
    let v = vec![velocity; n];
    let mut rho = rho0.values.clone();
    let mut rate = vec![0.0; n];
    for k in 0..time.steps() {
        for f in rho.chunks_exact_mut(n) {
            transport_1d(f, &v, grid.dx(), &mut rate);
            f.iter_mut().zip(&rate).for_each(|(x, r)| *x += time.dt() * r);
        }
        check_density(&rho, n, k + 1)?;
    }
    Ok(LabeledDensity { labels: rho0.labels, grid, values: rho, time: time.horizon() })
}

/// Cell averages of the wrapped Gaussian with variance `var` centred at `mean`.
pub fn wrapped_gaussian_density(grid: StateGrid, mean: f64, var: f64) -> Result<Vec<f64>> {
    let law = InitialLaw::WrappedGaussian { mean: vec![mean], std: vec![var.sqrt()] };
    Ok(grid.cell_masses(&law)?.into_iter().map(|m| m / grid.dx()).collect())
}
