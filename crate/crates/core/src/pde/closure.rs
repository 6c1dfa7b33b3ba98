//! Moment closures with evolving weights: the pathwise network and the adaptive
//! network with a decaying initial graph.

use super::{check_cfl, check_density, check_kernel, max_abs, transport_1d, CouplingMatrix, LabeledDensity, Record, StateGrid, Stencil, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::model::{KernelSpec, ScalarFn, TimeGrid};
use rayon::prelude::*;

/// Largest label grid accepted by [`solve_adaptive_closure`].
pub const MAX_ADAPTIVE_LABELS: usize = 8;

/// `h(x, x̃)` on the product grid, row index `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDensity {
    grid: StateGrid,
    values: Vec<f64>,
}

impl PairDensity {
    pub fn new(grid: StateGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() * grid.cells() {
            return Err(Error::size(format!("pair density needs {}² values, got {}", grid.cells(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pair density must be finite"));
        }
        Ok(PairDensity { grid, values })
    }

    pub fn zero(grid: StateGrid) -> Self {
        PairDensity { grid, values: vec![0.0; grid.cells() * grid.cells()] }
    }

    /// `w0 · p ⊗ p`: every pair starts with the same weight.
    pub fn product(w0: f64, p: &[f64], grid: StateGrid) -> Result<Self> {
        if p.len() != grid.cells() {
            return Err(Error::size("density does not match the grid"));
        }
        Self::new(grid, p.iter().flat_map(|&a| p.iter().map(move |&b| w0 * a * b)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `∬ h dx dx̃`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx() * self.grid.dx()
    }
}

/// `h^{ξ_l, ξ_m}(x, x̃)` for every label pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPairDensity {
    labels: usize,
    grid: StateGrid,
    values: Vec<f64>,
}

impl LabeledPairDensity {
    pub fn new(labels: usize, grid: StateGrid, values: Vec<f64>) -> Result<Self> {
        let n2 = grid.cells() * grid.cells();
        if labels == 0 || values.len() != labels * labels * n2 {
            return Err(Error::size(format!("expected {labels}² pair blocks of {n2} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pair density must be finite"));
        }
        Ok(LabeledPairDensity { labels, grid, values })
    }

    pub fn zero(labels: usize, grid: StateGrid) -> Self {
        LabeledPairDensity { labels, grid, values: vec![0.0; labels * labels * grid.cells() * grid.cells()] }
    }

    /// The same pair density for every label pair.
    pub fn uniform(labels: usize, h: &PairDensity) -> Self {
        let values = (0..labels * labels).flat_map(|_| h.values.iter().copied()).collect();
        LabeledPairDensity { labels, grid: h.grid, values }
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn pair(&self, l: usize, m: usize) -> &[f64] {
        let n2 = self.grid.cells() * self.grid.cells();
        let k = l * self.labels + m;
        &self.values[k * n2..(k + 1) * n2]
    }

    pub fn pair_mass(&self, l: usize, m: usize) -> f64 {
        self.pair(l, m).iter().sum::<f64>() * self.grid.dx() * self.grid.dx()
    }

    /// `Σ_{l,m} Δξ² ∬ h^{l,m}`.
    pub fn total_mass(&self) -> f64 {
        let dxi = 1.0 / self.labels as f64;
        self.values.iter().sum::<f64>() * (self.grid.dx() * dxi).powi(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosureFrame {
    pub time: f64,
    pub p: Vec<f64>,
    pub h: PairDensity,
}

impl ClosureFrame {
    pub fn pair_mass(&self) -> f64 {
        self.h.mass()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosureTrajectory {
    pub grid: StateGrid,
    pub frames: Vec<ClosureFrame>,
    /// Cells where a velocity was computed with a density below the floor.
    pub floored_divisions: usize,
}

impl ClosureTrajectory {
    pub fn last(&self) -> &ClosureFrame {
        self.frames.last().expect("initial frame")
    }

    pub fn at_time(&self, t: f64) -> &ClosureFrame {
        self.frames.iter().min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs())).expect("initial frame")
    }
}

impl Stencil {
    /// `Σ_y K(x_c, y) h(x_c, y) Δx` for every row `c` of a pair block.
    pub(crate) fn row_flux(&self, h: &[f64], n: usize, out: &mut [f64]) {
        if self.is_zero() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        out.iter_mut().enumerate().for_each(|(c, o)| {
            let row = &h[c * n..(c + 1) * n];
            *o = self.values.iter().enumerate().map(|(m, k)| k * row[(c + m) % n]).sum::<f64>() * self.dx;
        });
    }
}

/// `−∂_x(h vx) − ∂_x̃(h vy) + ½Δh` with upwind fluxes in each direction.
fn transport_pair(h: &[f64], vx: &[f64], vy: &[f64], dx: f64, out: &mut [f64]) {
    let n = vx.len();
    out.par_chunks_exact_mut(n).enumerate().for_each(|(c, o)| {
        let up = (c + 1) % n;
        let down = (c + n - 1) % n;
        let row = &h[c * n..(c + 1) * n];
        transport_1d(row, vy, dx, o);
        let flux = |a: usize, b: usize, d: usize| {
            let u = 0.5 * (vx[a] + vx[b]);
            let (fa, fb) = (h[a * n + d], h[b * n + d]);
            (if u >= 0.0 { u * fa } else { u * fb }) - 0.5 * (fb - fa) / dx
        };
        for (d, od) in o.iter_mut().enumerate() {
            *od -= (flux(c, up, d) - flux(down, c, d)) / dx;
        }
    });
}

fn pair_table(f: &ScalarFn, grid: &StateGrid) -> Vec<f64> {
    let g = grid.geometry();
    let n = grid.cells();
    (0..n * n).map(|k| f.eval(g, &[grid.center(k / n)], &[grid.center(k % n)])).collect()
}

fn velocity(flux: &[f64], rho: &[f64], floored: &mut usize) -> Vec<f64> {
    flux.iter()
        .zip(rho)
        .map(|(g, &r)| {
            if r < DENSITY_FLOOR {
                *floored += 1;
            }
            g / r.max(DENSITY_FLOOR)
        })
        .collect()
}

/// Pathwise network with `φ = ℓ + α w` and a single population density `p`.
#[allow(clippy::too_many_arguments)]
pub fn solve_pathwise_closure(
    p0: &LabeledDensity,
    h0: &PairDensity,
    kernel: &KernelSpec,
    ell: &ScalarFn,
    alpha: &ScalarFn,
    time: &TimeGrid,
    record: &Record,
) -> Result<ClosureTrajectory> {
    let grid = p0.grid();
    check_kernel(kernel, &grid, time)?;
    ell.check(grid.geometry())?;
    alpha.check(grid.geometry())?;
    if p0.labels() != 1 || h0.grid != grid {
        return Err(Error::size("pathwise closure takes one density and a pair density on the same grid"));
    }
    let n = grid.cells();
    let dx = grid.dx();
    let dt = time.dt();
    let stencil = Stencil::new(&grid, kernel);
    let source = pair_table(ell, &grid);
    let decay: Vec<f64> = pair_table(alpha, &grid).iter().map(|a| (a * dt).exp()).collect();
    let mut p = p0.values().to_vec();
    let mut h = h0.values.clone();
    let mut floored = 0;
    let mut frames = vec![ClosureFrame { time: 0.0, p: p.clone(), h: h0.clone() }];
    let (mut flux, mut prate, mut hrate) = (vec![0.0; n], vec![0.0; n], vec![0.0; n * n]);
    for k in 0..time.steps() {
        stencil.row_flux(&h, n, &mut flux);
        let u = velocity(&flux, &p, &mut floored);
        check_cfl(dt, &grid, max_abs(&u), 2.0)?;
        transport_1d(&p, &u, dx, &mut prate);
        transport_pair(&h, &u, &u, dx, &mut hrate);
        h.par_chunks_exact_mut(n).enumerate().for_each(|(c, row)| {
            for (d, v) in row.iter_mut().enumerate() {
                let i = c * n + d;
                *v = decay[i] * (*v + dt * (hrate[i] + source[i] * p[c] * p[d]));
            }
        });
        p.iter_mut().zip(&prate).for_each(|(x, r)| *x += dt * r);
        check_density(&p, n, k + 1)?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Scheme(format!("pair density is not finite after step {}", k + 1)));
        }
        if record.keeps(k + 1, time.steps()) {
            frames.push(ClosureFrame { time: time.node(k + 1), p: p.clone(), h: PairDensity { grid, values: h.clone() } });
        }
    }
    Ok(ClosureTrajectory { grid, frames, floored_divisions: floored })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveClosureOptions {
    /// Keep the `e^{−λt}`-weighted initial network drift; `false` is the λ → ∞ proxy.
    pub initial_network: bool,
    pub record: Record,
}

impl Default for AdaptiveClosureOptions {
    fn default() -> Self {
        AdaptiveClosureOptions { initial_network: true, record: Record::All }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveFrame {
    pub time: f64,
    pub rho: LabeledDensity,
    pub h: LabeledPairDensity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveTrajectory {
    pub frames: Vec<AdaptiveFrame>,
    pub floored_divisions: usize,
}

impl AdaptiveTrajectory {
    pub fn last(&self) -> &AdaptiveFrame {
        self.frames.last().expect("initial frame")
    }
}

/// Adaptive network with `φ = −λw + ℓ`, split as a decaying initial graph plus a
/// pathwise part tracked by the labelled pair densities.
#[allow(clippy::too_many_arguments)]
pub fn solve_adaptive_closure(
    rho0: &LabeledDensity,
    h0: &LabeledPairDensity,
    eta0: &CouplingMatrix,
    kernel: &KernelSpec,
    ell: &ScalarFn,
    lambda: f64,
    time: &TimeGrid,
    opts: &AdaptiveClosureOptions,
) -> Result<AdaptiveTrajectory> {
    let grid = rho0.grid();
    let labels = rho0.labels();
    if labels > MAX_ADAPTIVE_LABELS {
        return Err(Error::config(format!("adaptive closure allows at most {MAX_ADAPTIVE_LABELS} labels, got {labels}")));
    }
    if h0.labels != labels || eta0.labels() != labels || h0.grid != grid {
        return Err(Error::size("densities, pair densities and coupling disagree on labels or grid"));
    }
    if !lambda.is_finite() {
        return Err(Error::config("λ must be finite"));
    }
    check_kernel(kernel, &grid, time)?;
    ell.check(grid.geometry())?;
    let n = grid.cells();
    let n2 = n * n;
    let dx = grid.dx();
    let dt = time.dt();
    let dxi = 1.0 / labels as f64;
    let stencil = Stencil::new(&grid, kernel);
    let source = pair_table(ell, &grid);
    let decay = (-lambda * dt).exp();
    let mut rho = rho0.values().to_vec();
    let mut h = h0.values.clone();
    let mut floored = 0;
    let mut frames = vec![AdaptiveFrame { time: 0.0, rho: rho0.clone(), h: h0.clone() }];
    let mut hrate = vec![0.0; h.len()];
    let mut rate = vec![0.0; rho.len()];
    for k in 0..time.steps() {
        let mut v = vec![0.0; labels * n];
        if opts.initial_network {
            let mixed = eta0.mix(&rho, n, (-lambda * time.node(k)).exp());
            for (vl, m) in v.chunks_exact_mut(n).zip(mixed.chunks_exact(n)) {
                stencil.convolve(m, vl);
            }
        }
        let mut buf = vec![0.0; n];
        for l in 0..labels {
            let mut g = vec![0.0; n];
            for m in 0..labels {
                let b = (l * labels + m) * n2;
                stencil.row_flux(&h[b..b + n2], n, &mut buf);
                g.iter_mut().zip(&buf).for_each(|(a, b)| *a += dxi * b);
            }
            let u = velocity(&g, &rho[l * n..(l + 1) * n], &mut floored);
            v[l * n..(l + 1) * n].iter_mut().zip(&u).for_each(|(a, b)| *a += b);
        }
        check_cfl(dt, &grid, max_abs(&v), 2.0)?;
        for l in 0..labels {
            transport_1d(&rho[l * n..(l + 1) * n], &v[l * n..(l + 1) * n], dx, &mut rate[l * n..(l + 1) * n]);
            for m in 0..labels {
                let b = (l * labels + m) * n2;
                transport_pair(&h[b..b + n2], &v[l * n..(l + 1) * n], &v[m * n..(m + 1) * n], dx, &mut hrate[b..b + n2]);
            }
        }
        h.par_chunks_exact_mut(n2).enumerate().for_each(|(lm, block)| {
            let (l, m) = (lm / labels, lm % labels);
            let (rl, rm) = (&rho[l * n..(l + 1) * n], &rho[m * n..(m + 1) * n]);
            let hr = &hrate[lm * n2..(lm + 1) * n2];
            for (i, x) in block.iter_mut().enumerate() {
                *x = decay * (*x + dt * (hr[i] + source[i] * rl[i / n] * rm[i % n]));
            }
        });
        rho.iter_mut().zip(&rate).for_each(|(x, r)| *x += dt * r);
        check_density(&rho, n, k + 1)?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Scheme(format!("pair density is not finite after step {}", k + 1)));
        }
        if opts.record.keeps(k + 1, time.steps()) {
            frames.push(AdaptiveFrame {
                time: time.node(k + 1),
                rho: LabeledDensity::new(labels, grid, rho.clone(), time.node(k + 1))?,
                h: LabeledPairDensity { labels, grid, values: h.clone() },
            });
        }
    }
    Ok(AdaptiveTrajectory { frames, floored_divisions: floored })
}

#[cfg(test)]
mod tests {
    use super::super::{solve_vlasov_digraph, VlasovOptions};
    use super::*;
    use crate::model::InitialLaw;

    fn setup(cells: usize) -> (StateGrid, LabeledDensity) {
        let grid = StateGrid::torus(cells).unwrap();
        let law = InitialLaw::WrappedGaussian { mean: vec![2.0], std: vec![0.6] };
        (grid, LabeledDensity::from_law(&law, 1, grid).unwrap())
    }

    #[test]
    fn constant_source_grows_mass_linearly() {
        let (grid, p0) = setup(32);
        let time = TimeGrid::new(1.0, 200).unwrap();
        let h0 = PairDensity::product(0.5, p0.values(), grid).unwrap();
        let traj = solve_pathwise_closure(&p0, &h0, &KernelSpec::Zero, &ScalarFn::Const(0.7), &ScalarFn::Const(0.0), &time, &Record::All).unwrap();
        for f in &traj.frames {
            assert!((f.pair_mass() - (0.5 + 0.7 * f.time)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_decay_is_exponential() {
        let (grid, p0) = setup(32);
        let time = TimeGrid::new(1.0, 200).unwrap();
        let h0 = PairDensity::product(1.0, p0.values(), grid).unwrap();
        let traj = solve_pathwise_closure(&p0, &h0, &KernelSpec::Zero, &ScalarFn::Const(0.0), &ScalarFn::Const(-2.0), &time, &Record::All).unwrap();
        let m = traj.last().pair_mass();
        assert!((m / (-2.0f64).exp() - 1.0).abs() < 1e-12, "{m}");
    }

    #[test]
    fn source_free_adaptive_closure_is_decayed_vlasov() {
        let grid = StateGrid::torus(32).unwrap();
        let time = TimeGrid::new(0.5, 100).unwrap();
        let law = InitialLaw::WrappedGaussian { mean: vec![2.0], std: vec![0.6] };
        let rho0 = LabeledDensity::from_law(&law, 2, grid).unwrap();
        let eta = CouplingMatrix::new(2, vec![1.0, 0.5, 0.2, 1.0]).unwrap();
        let kernel = KernelSpec::Kuramoto { kappa: 1.5 };
        let a = solve_adaptive_closure(
            &rho0,
            &LabeledPairDensity::zero(2, grid),
            &eta,
            &kernel,
            &ScalarFn::Const(0.0),
            0.8,
            &time,
            &AdaptiveClosureOptions::default(),
        )
        .unwrap();
        let b = solve_vlasov_digraph(&rho0, &eta, &kernel, &time, &VlasovOptions { coupling_decay: Some(0.8), ..Default::default() }).unwrap();
        assert!(a.last().h.values.iter().all(|&v| v == 0.0));
        for (x, y) in a.last().rho.values().iter().zip(b.last().values()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_closure_without_initial_graph_is_pathwise() {
        let grid = StateGrid::torus(24).unwrap();
        let time = TimeGrid::new(0.5, 100).unwrap();
        let law = InitialLaw::WrappedGaussian { mean: vec![2.0], std: vec![0.6] };
        let p0 = LabeledDensity::from_law(&law, 1, grid).unwrap();
        let rho0 = LabeledDensity::from_law(&law, 3, grid).unwrap();
        let kernel = KernelSpec::Kuramoto { kappa: 1.0 };
        let ell = ScalarFn::Cos(0.5);
        let lambda = 0.7;
        let a = solve_adaptive_closure(
            &rho0,
            &LabeledPairDensity::zero(3, grid),
            &CouplingMatrix::constant(3, 1.0).unwrap(),
            &kernel,
            &ell,
            lambda,
            &time,
            &AdaptiveClosureOptions { initial_network: false, ..Default::default() },
        )
        .unwrap();
        let b = solve_pathwise_closure(&p0, &PairDensity::zero(grid), &kernel, &ell, &ScalarFn::Const(-lambda), &time, &Record::All).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for l in 0..3 {
                for (x, y) in fa.rho.row(l).iter().zip(&fb.p) {
                    assert!((x - y).abs() < 1e-12);
                }
                for m in 0..3 {
                    for (x, y) in fa.h.pair(l, m).iter().zip(fb.h.values()) {
                        assert!((x - y).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn label_guard() {
        let grid = StateGrid::torus(8).unwrap();
        let time = TimeGrid::new(0.1, 10).unwrap();
        let rho0 = LabeledDensity::from_law(&InitialLaw::Uniform { lo: 0.0, hi: 1.0 }, 9, grid).unwrap();
        let r = solve_adaptive_closure(
            &rho0,
            &LabeledPairDensity::zero(9, grid),
            &CouplingMatrix::constant(9, 1.0).unwrap(),
            &KernelSpec::Zero,
            &ScalarFn::Const(0.0),
            1.0,
            &time,
            &AdaptiveClosureOptions::default(),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
