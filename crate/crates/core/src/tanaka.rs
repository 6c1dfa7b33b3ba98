//! Picard iteration for the parametrized fixed-point maps.

use crate::dynamics::{simulate_with, SimOptions};
use crate::error::{Error, Result};
use crate::force::{adaptive_drift, frozen_drift, ForceMethod, FrozenRows};
use crate::graphs::{
    d_inf_bl, empirical_digraph, generate_weights, label_grid, limit_of, DigraphParameter, DigraphView, GraphKind,
    LimitDigraph, LowRank, SampledLimit,
};
use crate::metrics::{bl_bracket, AtomicMeasure, BLBracket, Block, ProductSpace};
use crate::model::{validate_model, InputDatum, ModelSpec, StatePath, TimeGrid};
use crate::noise::{derive_seed, particle_inputs};
use std::io::Write;
use std::sync::Arc;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_SWEEPS: usize = 50;
pub const DEFAULT_M_REF: usize = 1 << 13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub method: ForceMethod,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: DEFAULT_TOL, max_sweeps: DEFAULT_MAX_SWEEPS, method: ForceMethod::Auto }
    }
}

/// Converged fixed point over a finite atom set.
#[derive(Clone)]
pub struct SolvedMap {
    model: ModelSpec,
    grid: TimeGrid,
    param: Arc<dyn DigraphParameter + Send>,
    sample: Option<Arc<SampledLimit>>,
    /// `(M+1) × rows × d`, unwrapped; the first rows are the atoms.
    paths: Vec<f64>,
    rows: usize,
    /// Evaluated inputs beyond the atoms.
    extra: Vec<InputDatum>,
    residuals: Vec<f64>,
}

impl std::fmt::Debug for SolvedMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolvedMap")
            .field("rows", &self.rows)
            .field("atoms", &self.param.atoms().len())
            .field("residuals", &self.residuals)
            .finish()
    }
}

/// Time-major driving terms of a set of inputs.
fn driving(inputs: &[&InputDatum], amplitude: f64, steps: usize, dim: usize) -> Vec<f64> {
    let r = inputs.len();
    let mut out = vec![0.0; (steps + 1) * r * dim];
    for (i, inp) in inputs.iter().enumerate() {
        let s = inp.driving_lifted(amplitude);
        for k in 0..=steps {
            out[(k * r + i) * dim..(k * r + i + 1) * dim].copy_from_slice(&s[k * dim..(k + 1) * dim]);
        }
    }
    out
}

enum RowWeights {
    Frozen(Option<LowRank>),
    Adaptive(Vec<f64>),
}

fn row_weights(model: &ModelSpec, param: &dyn DigraphParameter, labels: &[f64], method: ForceMethod) -> RowWeights {
    let dense = || labels.iter().flat_map(|&l| param.row_weights(l)).collect::<Vec<f64>>();
    if model.weight_law.is_frozen() {
        let lr = if method == ForceMethod::Auto { param.low_rank(labels) } else { None };
        RowWeights::Frozen(lr)
    } else {
        RowWeights::Adaptive(dense())
    }
}

/// One explicit pass: rows are driven by their own driving term plus the drift
/// against the atom paths `atoms` (time-major). When `own` is `None` the rows use
/// their newly computed states (forward recursion); otherwise `own` supplies them.
#[allow(clippy::too_many_arguments)]
fn sweep(
    model: &ModelSpec,
    grid: &TimeGrid,
    method: ForceMethod,
    param: &dyn DigraphParameter,
    labels: &[f64],
    weights: &RowWeights,
    sigma: &[f64],
    atoms: &[f64],
    n_atoms: usize,
    own: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let d = model.dim;
    let r = labels.len();
    let dt = grid.dt();
    let mut new = vec![0.0; sigma.len()];
    new[..r * d].copy_from_slice(&sigma[..r * d]);
    let mut acc = vec![0.0; r * d];
    let mut drift = vec![0.0; r * d];
    let mut w = match weights {
        RowWeights::Adaptive(w0) => w0.clone(),
        RowWeights::Frozen(_) => Vec::new(),
    };
    let fetch = |i: usize| param.row_weights(labels[i]);
    for k in 0..grid.steps() {
        let atoms_k = &atoms[k * n_atoms * d..(k + 1) * n_atoms * d];
        let own_k: Vec<f64> = match own {
            Some(o) => o[k * r * d..(k + 1) * r * d].to_vec(),
            None => new[k * r * d..(k + 1) * r * d].to_vec(),
        };
        match weights {
            RowWeights::Frozen(Some(lr)) => frozen_drift(model, method, &own_k, atoms_k, &FrozenRows::LowRank(lr), &mut drift),
            RowWeights::Frozen(None) => frozen_drift(model, method, &own_k, atoms_k, &FrozenRows::Rows(&fetch), &mut drift),
            RowWeights::Adaptive(_) => adaptive_drift(model, dt, &own_k, atoms_k, &mut w, &mut drift),
        }
        let base = (k + 1) * r * d;
        for idx in 0..r * d {
            acc[idx] += dt * drift[idx];
            let v = sigma[base + idx] + acc[idx];
            if !v.is_finite() {
                return Err(Error::NonFinite { particle: idx / d, step: k + 1 });
            }
            new[base + idx] = v;
        }
    }
    Ok(new)
}

fn sup_difference(a: &[f64], b: &[f64], d: usize) -> f64 {
    a.chunks_exact(d)
        .zip(b.chunks_exact(d))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Solve `X = Φ(X)` for the atoms of `param` and for `eval` inputs.
pub fn picard_solve(
    model: &ModelSpec,
    param: Arc<dyn DigraphParameter + Send>,
    eval: &[InputDatum],
    grid: &TimeGrid,
    opts: &PicardOptions,
) -> Result<SolvedMap> {
    validate_model(model, grid)?;
    if !(opts.tol > 0.0) || opts.max_sweeps == 0 {
        return Err(Error::config("Picard needs a positive tolerance and at least one sweep"));
    }
    let atoms = param.atoms();
    let d = model.dim;
    for inp in atoms.iter().chain(eval) {
        if inp.dim() != d || inp.increments.len() < grid.steps() * d {
            return Err(Error::size("input does not cover the model dimension and grid"));
        }
    }
    let extra: Vec<InputDatum> = if eval == atoms { Vec::new() } else { eval.to_vec() };
    let rows: Vec<&InputDatum> = atoms.iter().chain(&extra).collect();
    let labels: Vec<f64> = rows.iter().map(|i| i.label).collect();
    let n_atoms = atoms.len();
    let r = rows.len();
    let sigma = driving(&rows, model.noise, grid.steps(), d);
    let weights = row_weights(model, param.as_ref(), &labels, opts.method);
    let mut cur = sigma.clone();
    let mut residuals = Vec::new();
    loop {
        let new = sweep(model, grid, opts.method, param.as_ref(), &labels, &weights, &sigma, &atoms_of(&cur, r, n_atoms, d), n_atoms, Some(&cur))?;
        let res = sup_difference(&new, &cur, d);
        residuals.push(res);
        cur = new;
        if res <= opts.tol {
            break;
        }
        if residuals.len() >= opts.max_sweeps {
            return Err(Error::NonConvergence { residuals });
        }
    }
    Ok(SolvedMap { model: model.clone(), grid: *grid, param, sample: None, paths: cur, rows: r, extra, residuals })
}

/// The atom block of time-major row paths.
fn atoms_of(paths: &[f64], rows: usize, n_atoms: usize, d: usize) -> Vec<f64> {
    if rows == n_atoms {
        return paths.to_vec();
    }
    paths
        .chunks_exact(rows * d)
        .flat_map(|c| c[..n_atoms * d].iter().copied())
        .collect()
}

/// Reference ensemble for the limit process, sampled with `m_ref` atoms.
pub fn solve_limit_process(
    model: &ModelSpec,
    limit: &LimitDigraph,
    m_ref: usize,
    grid: &TimeGrid,
    opts: &PicardOptions,
    seed: u64,
) -> Result<SolvedMap> {
    let sample = Arc::new(limit.sample(m_ref, model, grid, seed)?);
    let atoms = sample.inputs.clone();
    let param: Arc<dyn DigraphParameter + Send> = sample.clone();
    let mut map = picard_solve(model, param, &atoms, grid, opts)?;
    map.sample = Some(sample);
    Ok(map)
}

impl SolvedMap {
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn sweeps(&self) -> usize {
        self.residuals.len()
    }

    pub fn tolerance_achieved(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }

    pub fn n_atoms(&self) -> usize {
        self.param.atoms().len()
    }

    pub fn sample(&self) -> Option<&SampledLimit> {
        self.sample.as_deref()
    }

    fn row_path(&self, row: usize) -> StatePath {
        let d = self.model.dim;
        let values = self
            .paths
            .chunks_exact(self.rows * d)
            .flat_map(|c| c[row * d..(row + 1) * d].iter().copied())
            .collect();
        StatePath::from_lifted(d, self.model.geometry, values).expect("finite fixed point")
    }

    pub fn atom_path(&self, m: usize) -> StatePath {
        self.row_path(m)
    }

    /// Paths of the evaluated inputs, in the order they were given.
    pub fn evaluated_paths(&self) -> Vec<StatePath> {
        if self.extra.is_empty() {
            (0..self.n_atoms()).map(|m| self.row_path(m)).collect()
        } else {
            (self.n_atoms()..self.rows).map(|m| self.row_path(m)).collect()
        }
    }

    /// Atom states at node `k`, wrapped, `n_atoms × d`.
    pub fn atom_states_at(&self, k: usize) -> Vec<f64> {
        let d = self.model.dim;
        let c = &self.paths[k * self.rows * d..(k + 1) * self.rows * d];
        c[..self.n_atoms() * d].iter().map(|&x| self.model.geometry.wrap(x)).collect()
    }

    /// Paths of new inputs under the converged atoms (one forward recursion).
    pub fn evaluate(&self, inputs: &[InputDatum]) -> Result<Vec<StatePath>> {
        let d = self.model.dim;
        let refs: Vec<&InputDatum> = inputs.iter().collect();
        let labels: Vec<f64> = inputs.iter().map(|i| i.label).collect();
        let sigma = driving(&refs, self.model.noise, self.grid.steps(), d);
        let n_atoms = self.n_atoms();
        let atoms = atoms_of(&self.paths, self.rows, n_atoms, d);
        let method = ForceMethod::Auto;
        let weights = row_weights(&self.model, self.param.as_ref(), &labels, method);
        let out = sweep(&self.model, &self.grid, method, self.param.as_ref(), &labels, &weights, &sigma, &atoms, n_atoms, None)?;
        let r = inputs.len();
        Ok((0..r)
            .map(|i| {
                let values = out.chunks_exact(r * d).flat_map(|c| c[i * d..(i + 1) * d].iter().copied()).collect();
                StatePath::from_lifted(d, self.model.geometry, values).expect("finite path")
            })
            .collect())
    }

    /// Residual log as `sweep, residual`.
    pub fn write_residual_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sweep", "residual"])?;
        for (s, r) in self.residuals.iter().enumerate() {
            w.write_record([(s + 1).to_string(), format!("{r:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingOptions {
    pub picard: PicardOptions,
    pub sim: SimOptions,
    pub m_ref: usize,
    /// Labels on which the digraph distance is evaluated.
    pub label_points: usize,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        CouplingOptions { picard: PicardOptions::default(), sim: SimOptions::default(), m_ref: DEFAULT_M_REF, label_points: 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingReport {
    pub n: usize,
    pub seed: u64,
    /// `max_i sup_k |X^{i,N}_k − 𝕏(ω^i)_k|`.
    pub max_sup_error: f64,
    pub d_inf_bl_lower: f64,
    pub d_inf_bl_upper: f64,
    /// Error over the distance upper end: the empirical Lipschitz constant in the parameter.
    pub ratio: f64,
}

/// Reference seed used by [`coupling_error`].
pub fn reference_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x5EED)
}

/// Couple the N-particle system with the limit process driven by the same inputs.
pub fn coupling_error(
    model: &ModelSpec,
    kind: &GraphKind,
    n: usize,
    grid: &TimeGrid,
    seed: u64,
    opts: &CouplingOptions,
) -> Result<CouplingReport> {
    let reference = solve_limit_process(model, &limit_of(kind)?, opts.m_ref, grid, &opts.picard, reference_seed(seed))?;
    coupling_error_with(&reference, model, kind, n, grid, seed, opts)
}

/// As [`coupling_error`] with a precomputed reference.
pub fn coupling_error_with(
    reference: &SolvedMap,
    model: &ModelSpec,
    kind: &GraphKind,
    n: usize,
    grid: &TimeGrid,
    seed: u64,
    opts: &CouplingOptions,
) -> Result<CouplingReport> {
    let weights = Arc::new(generate_weights(kind, n, seed)?);
    let inputs: Arc<[InputDatum]> = particle_inputs(model, grid, n, seed).into();
    let ens = simulate_with(model, &weights, &inputs, grid, seed, &opts.sim)?;
    let limit_paths = reference.evaluate(&inputs)?;
    let mut max_sup_error: f64 = 0.0;
    for (i, lp) in limit_paths.iter().enumerate() {
        max_sup_error = max_sup_error.max(ens.path(i).sup_distance(lp)?);
    }
    let sample = reference.sample().ok_or_else(|| Error::invalid("reference was not built from a limit digraph"))?;
    let digraph = empirical_digraph(weights, inputs, model.geometry)?;
    let dist = d_inf_bl(&digraph, sample, &label_grid(opts.label_points), DigraphView::Weights)?;
    let ratio = if dist.upper > 0.0 { max_sup_error / dist.upper } else { 0.0 };
    Ok(CouplingReport { n, seed, max_sup_error, d_inf_bl_lower: dist.lower, d_inf_bl_upper: dist.upper, ratio })
}

/// Self-consistent interaction measure of the label-ξ row.
#[derive(Clone, Debug)]
pub struct FixedInteractionMeasure {
    pub label: f64,
    /// Weight of each atom.
    pub weights: Vec<f64>,
    /// `(M+1) × M_ref × d`, unwrapped.
    paths: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Bracket for `d_BL(π̄, (Id, 𝕐^π̄)_# ᾱ(ξ))`.
    pub residual: BLBracket,
    pub sample: SampledLimit,
    model: ModelSpec,
    grid: TimeGrid,
}

/// Iterate `π ← (Id, 𝕐^π)_# ᾱ(ξ)` over a sampled row of the limit.
pub fn fixed_interaction_measure(
    model: &ModelSpec,
    limit: &LimitDigraph,
    label: f64,
    m_ref: usize,
    grid: &TimeGrid,
    opts: &PicardOptions,
    seed: u64,
) -> Result<FixedInteractionMeasure> {
    validate_model(model, grid)?;
    if !model.weight_law.is_frozen() {
        return Err(Error::Unsupported("interaction-measure fixed point is implemented for frozen weights".into()));
    }
    if !(0.0..=1.0).contains(&label) {
        return Err(Error::invalid(format!("label {label} outside [0, 1]")));
    }
    let sample = limit.sample(m_ref, model, grid, seed)?;
    let weights = sample.row_weights(label);
    let d = model.dim;
    let rows: Vec<&InputDatum> = sample.inputs.iter().collect();
    let sigma = driving(&rows, model.noise, grid.steps(), d);
    let row = Arc::new(SingleRow { weights: weights.clone(), atoms: sample.inputs.clone() });
    // Every evaluated atom feels the same row, so labels only select that row.
    let labels = vec![label; m_ref];
    let rw = RowWeights::Frozen(Some(LowRank::single_row(&weights, m_ref)));
    let step = |pi: &[f64]| sweep(model, grid, opts.method, row.as_ref(), &labels, &rw, &sigma, pi, m_ref, None);
    let mut cur = sigma.clone();
    let mut residuals = Vec::new();
    loop {
        let new = step(&cur)?;
        let res = sup_difference(&new, &cur, d);
        residuals.push(res);
        cur = new;
        if res <= opts.tol {
            break;
        }
        if residuals.len() >= opts.max_sweeps {
            return Err(Error::NonConvergence { residuals });
        }
    }
    let image = step(&cur)?;
    let space = pair_space(model, grid)?;
    let residual = bl_bracket(&pair_measure(&space, &weights, &cur, model)?, &pair_measure(&space, &weights, &image, model)?)?;
    Ok(FixedInteractionMeasure { label, weights, paths: cur, residuals, residual, sample, model: model.clone(), grid: *grid })
}

struct SingleRow {
    weights: Vec<f64>,
    atoms: Vec<InputDatum>,
}

impl DigraphParameter for SingleRow {
    fn atoms(&self) -> &[InputDatum] {
        &self.atoms
    }

    fn weight(&self, _label: f64, atom: usize) -> f64 {
        self.weights[atom]
    }

    fn low_rank(&self, labels: &[f64]) -> Option<LowRank> {
        Some(LowRank::single_row(&self.weights, labels.len()))
    }
}

fn pair_space(model: &ModelSpec, grid: &TimeGrid) -> Result<ProductSpace> {
    ProductSpace::new(vec![Block::Line, Block::Path { nodes: grid.steps() + 1, dim: model.dim, geometry: model.geometry }])
}

/// Atoms `(w_m, path_m)` from time-major unwrapped paths.
fn pair_measure(space: &ProductSpace, weights: &[f64], paths: &[f64], model: &ModelSpec) -> Result<AtomicMeasure> {
    let d = model.dim;
    let m = weights.len();
    let nodes = paths.len() / (m * d);
    let mut points = Vec::with_capacity(m * (1 + nodes * d));
    for (i, &w) in weights.iter().enumerate() {
        points.push(w);
        for k in 0..nodes {
            points.extend(paths[(k * m + i) * d..(k * m + i + 1) * d].iter().map(|&x| model.geometry.wrap(x)));
        }
    }
    AtomicMeasure::uniform(space.clone(), points)
}

impl FixedInteractionMeasure {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(value, mass)` pairs of the weight marginal.
    pub fn weight_marginal(&self) -> Vec<(f64, f64)> {
        self.sample.weight_marginal(self.label)
    }

    /// Wrapped states of all atoms at node `k`, `M_ref × d`.
    pub fn states_at(&self, k: usize) -> Vec<f64> {
        let w = self.len() * self.model.dim;
        self.paths[k * w..(k + 1) * w].iter().map(|&x| self.model.geometry.wrap(x)).collect()
    }

    pub fn to_atomic(&self) -> Result<AtomicMeasure> {
        pair_measure(&pair_space(&self.model, &self.grid)?, &self.weights, &self.paths, &self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{Graphon, WeightMatrix};
    use crate::model::{Geometry, InitialLaw, KernelSpec};
    use std::f64::consts::PI;

    #[test]
    fn zero_kernel_converges_in_one_sweep() {
        let model = ModelSpec::default();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let inputs: Arc<[InputDatum]> = particle_inputs(&model, &grid, 6, 3).into();
        let w = Arc::new(generate_weights(&GraphKind::ErdosRenyi(0.5), 6, 3).unwrap());
        let dg = empirical_digraph(w, inputs.clone(), model.geometry).unwrap();
        let map = picard_solve(&model, Arc::new(dg), &inputs, &grid, &PicardOptions::default()).unwrap();
        assert_eq!(map.sweeps(), 1);
        for (p, inp) in map.evaluated_paths().iter().zip(inputs.iter()) {
            assert_eq!(*p, inp.driving_path(1.0, model.geometry).unwrap());
        }
    }

    #[test]
    fn antipodal_pair_is_a_fixed_point() {
        let model = ModelSpec { kernel: KernelSpec::Kuramoto { kappa: 1.0 }, noise: 0.0, ..Default::default() };
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let inputs: Arc<[InputDatum]> = vec![
            InputDatum { label: 0.5, x0: vec![0.0], increments: vec![0.0; 10], stream: 0 },
            InputDatum { label: 1.0, x0: vec![PI], increments: vec![0.0; 10], stream: 1 },
        ]
        .into();
        let w = Arc::new(generate_weights(&GraphKind::Constant(1.0), 2, 0).unwrap());
        let dg = empirical_digraph(w, inputs.clone(), model.geometry).unwrap();
        let map = picard_solve(&model, Arc::new(dg), &inputs, &grid, &PicardOptions::default()).unwrap();
        let paths = map.evaluated_paths();
        assert!(paths[0].values().iter().all(|&x| x.abs() < 1e-15));
        assert!(paths[1].values().iter().all(|&x| (x - PI).abs() < 1e-14));
    }

    #[test]
    fn row_zero_of_row_graphon_feels_no_drift() {
        let model = ModelSpec { kernel: KernelSpec::Kuramoto { kappa: 1.0 }, ..Default::default() };
        let grid = TimeGrid::new(0.5, 16).unwrap();
        let opts = PicardOptions::default();
        let map = solve_limit_process(&model, &LimitDigraph::Graphon(Graphon::Row), 64, &grid, &opts, 1).unwrap();
        let mut probe = crate::noise::make_input(&model, &grid, 9, crate::noise::Population::Particles, 0, 0.0);
        probe.label = 0.0;
        let p = map.evaluate(std::slice::from_ref(&probe)).unwrap();
        assert_eq!(p[0], probe.driving_path(1.0, model.geometry).unwrap());
    }

    #[test]
    fn non_convergence_carries_the_log() {
        let model = ModelSpec { kernel: KernelSpec::Kuramoto { kappa: 5.0 }, ..Default::default() };
        let grid = TimeGrid::new(2.0, 32).unwrap();
        let inputs: Arc<[InputDatum]> = particle_inputs(&model, &grid, 8, 0).into();
        let w = Arc::new(WeightMatrix::from_entries(8, vec![1.0; 64]).unwrap());
        let dg = empirical_digraph(w, inputs.clone(), model.geometry).unwrap();
        let opts = PicardOptions { max_sweeps: 3, ..Default::default() };
        match picard_solve(&model, Arc::new(dg), &inputs, &grid, &opts) {
            Err(Error::NonConvergence { residuals }) => assert_eq!(residuals.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixed_measure_for_er_has_exact_weight_marginal() {
        let model = ModelSpec {
            geometry: Geometry::Free,
            kernel: KernelSpec::Kuramoto { kappa: 1.0 },
            initial: InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] },
            ..Default::default()
        };
        let grid = TimeGrid::new(0.5, 16).unwrap();
        let limit = limit_of(&GraphKind::ErdosRenyi(0.5)).unwrap();
        let fim = fixed_interaction_measure(&model, &limit, 0.5, 64, &grid, &PicardOptions::default(), 2).unwrap();
        assert_eq!(fim.weight_marginal(), vec![(0.0, 0.5), (1.0, 0.5)]);
        assert!(fim.residual.upper <= 1e-8, "{:?}", fim.residual);
    }
}
