//! Euler–Maruyama simulation of the N-particle system.

use crate::error::{Error, Result};
use crate::force::{adaptive_drift, frozen_drift, FrozenRows};
use crate::graphs::WeightMatrix;
use crate::metrics::{AtomicMeasure, Block, ProductSpace};
use crate::model::{validate_model, Geometry, InputDatum, ModelSpec, StatePath, TimeGrid, WeightLaw};
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use crate::force::ForceMethod;

/// Full weight paths are kept only below both limits.
pub const WEIGHT_PATH_MAX_N: usize = 1024;
pub const WEIGHT_PATH_MAX_VALUES: usize = 1 << 25;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimOptions {
    pub method: ForceMethod,
    /// Keep every weight matrix along the run; `None` applies the memory guard.
    pub store_weight_paths: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightRecord {
    Frozen(Arc<WeightMatrix>),
    /// `(M+1) × N × N`.
    Paths(Vec<f64>),
    /// Initial and current matrices only.
    Endpoints { initial: Vec<f64>, last: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    grid: TimeGrid,
    model: ModelSpec,
    seed: u64,
    n: usize,
    /// `(M+1) × N × d`, wrapped to the fundamental domain.
    states: Vec<f64>,
    /// Unwrapped states at the last node, for resuming.
    last_lifted: Vec<f64>,
    /// `(1/N²) Σ_ij w_ij` at each node.
    mean_weight: Vec<f64>,
    weights: WeightRecord,
}

fn check_inputs(model: &ModelSpec, n: usize, inputs: &[InputDatum], grid: &TimeGrid) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::size(format!("{} inputs for {n} weight rows", inputs.len())));
    }
    let mut streams = HashSet::with_capacity(n);
    for (i, inp) in inputs.iter().enumerate() {
        if inp.x0.len() != model.dim || inp.increments.len() < grid.steps() * model.dim {
            return Err(Error::size(format!("input {i} does not cover a {}-dimensional run of {} steps", model.dim, grid.steps())));
        }
        if !streams.insert(inp.stream) {
            return Err(Error::invalid(format!("noise stream {} used twice", inp.stream)));
        }
    }
    Ok(())
}

/// Simulate the particle system driven by `inputs` on `grid`.
pub fn simulate(model: &ModelSpec, weights: &WeightMatrix, inputs: &[InputDatum], grid: &TimeGrid) -> Result<Ensemble> {
    simulate_with(model, weights, inputs, grid, 0, &SimOptions::default())
}

/// As [`simulate`], recording `seed` in the ensemble and using explicit options.
pub fn simulate_with(
    model: &ModelSpec,
    weights: &WeightMatrix,
    inputs: &[InputDatum],
    grid: &TimeGrid,
    seed: u64,
    opts: &SimOptions,
) -> Result<Ensemble> {
    validate_model(model, grid)?;
    let n = weights.n();
    check_inputs(model, n, inputs, grid)?;
    let d = model.dim;
    let lifted: Vec<f64> = inputs.iter().flat_map(|inp| inp.x0.iter().copied()).collect();
    let mut states = Vec::with_capacity((grid.steps() + 1) * n * d);
    states.extend(lifted.iter().map(|&x| model.geometry.wrap(x)));
    let record = if model.weight_law.is_frozen() {
        WeightRecord::Frozen(Arc::new(weights.clone()))
    } else {
        let initial = weights.to_dense();
        let keep = opts.store_weight_paths.unwrap_or(
            n <= WEIGHT_PATH_MAX_N && (grid.steps() + 1) * n * n <= WEIGHT_PATH_MAX_VALUES,
        );
        if keep {
            WeightRecord::Paths(initial)
        } else {
            WeightRecord::Endpoints { last: initial.clone(), initial }
        }
    };
    let mut ens = Ensemble {
        grid: *grid,
        model: model.clone(),
        seed,
        n,
        mean_weight: vec![weights.mean()],
        states,
        last_lifted: lifted,
        weights: record,
    };
    advance(&mut ens, weights, inputs, 0, opts)?;
    Ok(ens)
}

/// Continue a stored run to a longer horizon with the same step size.
pub fn resume(
    previous: &Ensemble,
    weights: &WeightMatrix,
    inputs: &[InputDatum],
    grid: &TimeGrid,
    opts: &SimOptions,
) -> Result<Ensemble> {
    let done = previous.grid.steps();
    if (grid.dt() - previous.grid.dt()).abs() > 1e-15 * grid.dt() || grid.steps() < done {
        return Err(Error::invalid("resume needs the same step size and a longer grid"));
    }
    validate_model(&previous.model, grid)?;
    check_inputs(&previous.model, previous.n, inputs, grid)?;
    let mut ens = previous.clone();
    ens.grid = *grid;
    advance(&mut ens, weights, inputs, done, opts)?;
    Ok(ens)
}

fn advance(ens: &mut Ensemble, weights: &WeightMatrix, inputs: &[InputDatum], from: usize, opts: &SimOptions) -> Result<()> {
    let model = ens.model.clone();
    let (n, d) = (ens.n, model.dim);
    let dt = ens.grid.dt();
    let amp = model.noise;
    let steps = ens.grid.steps();
    let mut x = std::mem::take(&mut ens.last_lifted);
    let mut drift = vec![0.0; n * d];
    let dense_frozen;
    let rows = match (weights.low_rank(), opts.method) {
        (Some(lr), ForceMethod::Auto) => FrozenRows::LowRank(lr),
        _ => {
            dense_frozen = if model.weight_law.is_frozen() {
                match weights.dense_entries() {
                    Some(e) => std::borrow::Cow::Borrowed(e),
                    None => std::borrow::Cow::Owned(weights.to_dense()),
                }
            } else {
                std::borrow::Cow::Owned(Vec::new())
            };
            FrozenRows::Dense(&dense_frozen)
        }
    };
    let mut current = match &ens.weights {
        WeightRecord::Frozen(_) => Vec::new(),
        WeightRecord::Paths(p) => p[p.len() - n * n..].to_vec(),
        WeightRecord::Endpoints { last, .. } => last.clone(),
    };
    for k in from..steps {
        if model.weight_law.is_frozen() {
            frozen_drift(&model, opts.method, &x, &x, &rows, &mut drift);
        } else {
            adaptive_drift(&model, dt, &x, &x, &mut current, &mut drift);
            ens.mean_weight.push(current.iter().sum::<f64>() / (n * n) as f64);
            match &mut ens.weights {
                WeightRecord::Paths(p) => p.extend_from_slice(&current),
                WeightRecord::Endpoints { last, .. } => last.copy_from_slice(&current),
                WeightRecord::Frozen(_) => unreachable!("frozen law keeps a fixed matrix"),
            }
        }
        for i in 0..n {
            for a in 0..d {
                let idx = i * d + a;
                let moved = x[idx] + dt * drift[idx];
                x[idx] = moved + amp * inputs[i].increments[k * d + a];
                if !x[idx].is_finite() {
                    return Err(Error::NonFinite { particle: i, step: k + 1 });
                }
            }
        }
        ens.states.extend(x.iter().map(|&v| model.geometry.wrap(v)));
        if model.weight_law.is_frozen() {
            ens.mean_weight.push(ens.mean_weight[0]);
        }
    }
    ens.last_lifted = x;
    Ok(())
}

impl Ensemble {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.model.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// State of particle `i` at node `k`.
    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        let d = self.dim();
        let base = (k * self.n + i) * d;
        &self.states[base..base + d]
    }

    /// All states at node `k`, `N × d`.
    pub fn states_at(&self, k: usize) -> &[f64] {
        let w = self.n * self.dim();
        &self.states[k * w..(k + 1) * w]
    }

    pub fn path(&self, i: usize) -> StatePath {
        let values = (0..=self.grid.steps()).flat_map(|k| self.state(i, k).iter().copied()).collect();
        StatePath::new(self.dim(), self.model.geometry, values).expect("stored states are in the domain")
    }

    pub fn paths(&self) -> Vec<StatePath> {
        (0..self.n).map(|i| self.path(i)).collect()
    }

    pub fn mean_weight(&self) -> &[f64] {
        &self.mean_weight
    }

    pub fn weight_record(&self) -> &WeightRecord {
        &self.weights
    }

    /// Weights of row `i` at node `k`, when retained.
    pub fn weight_row(&self, i: usize, k: usize) -> Result<Vec<f64>> {
        let n = self.n;
        let steps = self.grid.steps();
        if i >= n || k > steps {
            return Err(Error::invalid(format!("index ({i}, {k}) out of range")));
        }
        match &self.weights {
            WeightRecord::Frozen(w) => Ok(w.row(i).into_owned()),
            WeightRecord::Paths(p) => Ok(p[(k * n + i) * n..(k * n + i + 1) * n].to_vec()),
            WeightRecord::Endpoints { initial, last } => match k {
                0 => Ok(initial[i * n..(i + 1) * n].to_vec()),
                k if k == steps => Ok(last[i * n..(i + 1) * n].to_vec()),
                _ => Err(Error::Unsupported(format!(
                    "weights at step {k} were not retained (N = {n} exceeds the weight-path memory guard)"
                ))),
            },
        }
    }

    /// Weighted empirical measure seen by particle `i` at node `k`.
    pub fn interaction_measure(&self, i: usize, k: usize) -> Result<InteractionMeasure> {
        let weights = self.weight_row(i, k)?;
        Ok(InteractionMeasure {
            owner: i,
            step: k,
            weights,
            states: self.states_at(k).to_vec(),
            dim: self.dim(),
            geometry: self.model.geometry,
        })
    }

    /// Uniform measure on the particle states at node `k`.
    pub fn empirical_measure(&self, k: usize) -> Result<AtomicMeasure> {
        if k > self.grid.steps() {
            return Err(Error::invalid(format!("step {k} beyond the grid")));
        }
        AtomicMeasure::uniform(state_space(self.dim(), self.model.geometry)?, self.states_at(k).to_vec())
    }

    /// Uniform measure on whole particle paths.
    pub fn pathwise_measure(&self) -> Result<AtomicMeasure> {
        let space = ProductSpace::new(vec![Block::Path {
            nodes: self.grid.steps() + 1,
            dim: self.dim(),
            geometry: self.model.geometry,
        }])?;
        let points = (0..self.n).flat_map(|i| self.path(i).values().to_vec()).collect();
        AtomicMeasure::uniform(space, points)
    }

    /// One CSV per particle with columns `t, x1[, x2]`.
    pub fn write_particle_csvs(&self, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let path = dir.join(format!("{prefix}particle_{:05}.csv", i + 1));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(state_header(self.dim(), false))?;
            for k in 0..=self.grid.steps() {
                let mut rec = vec![fmt(self.grid.node(k))];
                rec.extend(self.state(i, k).iter().map(|&v| fmt(v)));
                w.write_record(&rec)?;
            }
            w.flush()?;
            files.push(path);
        }
        Ok(files)
    }

    /// All paths in long form: `particle, t, x1[, x2]`.
    pub fn write_paths_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(state_header(self.dim(), true))?;
        for i in 0..self.n {
            for k in 0..=self.grid.steps() {
                let mut rec = vec![(i + 1).to_string(), fmt(self.grid.node(k))];
                rec.extend(self.state(i, k).iter().map(|&v| fmt(v)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Mean weight per node: `t, mean_weight`.
    pub fn write_weight_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mean_weight"])?;
        for (k, m) in self.mean_weight.iter().enumerate() {
            w.write_record([fmt(self.grid.node(k)), fmt(*m)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary snapshot: magic `NFLD1` then little-endian fields.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        for v in [self.n as u64, self.dim() as u64, self.grid.steps() as u64] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.grid.horizon().to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        let tag: u8 = match &self.weights {
            WeightRecord::Frozen(_) => 0,
            WeightRecord::Paths(_) => 1,
            WeightRecord::Endpoints { .. } => 2,
        };
        out.write_all(&[tag])?;
        write_f64s(&mut out, &self.states)?;
        write_f64s(&mut out, &self.last_lifted)?;
        write_f64s(&mut out, &self.mean_weight)?;
        match &self.weights {
            WeightRecord::Frozen(_) => {}
            WeightRecord::Paths(p) => write_f64s(&mut out, p)?,
            WeightRecord::Endpoints { initial, last } => {
                write_f64s(&mut out, initial)?;
                write_f64s(&mut out, last)?;
            }
        }
        Ok(())
    }

    /// Read a snapshot written by [`Ensemble::write_snapshot`]. Frozen runs need their weight matrix.
    pub fn read_snapshot<R: Read>(mut input: R, model: &ModelSpec, frozen: Option<Arc<WeightMatrix>>) -> Result<Self> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("missing NFLD1 magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let n = read_u64(&mut input)? as usize;
        let dim = read_u64(&mut input)? as usize;
        let steps = read_u64(&mut input)? as usize;
        let horizon = f64::from_le_bytes(read_array(&mut input)?);
        let seed = read_u64(&mut input)?;
        let tag = read_array::<1, _>(&mut input)?[0];
        if dim != model.dim {
            return Err(Error::Format(format!("snapshot has dimension {dim}, model has {}", model.dim)));
        }
        let grid = TimeGrid::new(horizon, steps)?;
        let states = read_f64s(&mut input, (steps + 1) * n * dim)?;
        let last_lifted = read_f64s(&mut input, n * dim)?;
        let mean_weight = read_f64s(&mut input, steps + 1)?;
        let weights = match tag {
            0 => {
                let w = frozen.ok_or_else(|| Error::Format("frozen snapshot needs its weight matrix".into()))?;
                if w.n() != n {
                    return Err(Error::Format("weight matrix size differs from snapshot".into()));
                }
                WeightRecord::Frozen(w)
            }
            1 => WeightRecord::Paths(read_f64s(&mut input, (steps + 1) * n * n)?),
            2 => {
                let initial = read_f64s(&mut input, n * n)?;
                let last = read_f64s(&mut input, n * n)?;
                WeightRecord::Endpoints { initial, last }
            }
            t => return Err(Error::Format(format!("unknown weight tag {t}"))),
        };
        Ok(Ensemble { grid, model: model.clone(), seed, n, states, last_lifted, mean_weight, weights })
    }
}

const SNAPSHOT_MAGIC: &[u8; 5] = b"NFLD1";
const SNAPSHOT_VERSION: u32 = 1;

fn write_f64s<W: Write>(out: &mut W, v: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 8);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_array<const K: usize, R: Read>(input: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    input.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(input)?))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(input)?))
}

fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    input.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn state_header(dim: usize, with_particle: bool) -> Vec<String> {
    let mut h = Vec::new();
    if with_particle {
        h.push("particle".to_string());
    }
    h.push("t".to_string());
    h.extend((1..=dim).map(|a| format!("x{a}")));
    h
}

pub(crate) fn state_space(dim: usize, geometry: Geometry) -> Result<ProductSpace> {
    let axis = match geometry {
        Geometry::Free => Block::Line,
        Geometry::Periodic(p) => Block::Circle(p),
    };
    ProductSpace::new(vec![axis; dim])
}

/// Atoms `(w_ij, X_j)` seen by particle `i` at one node, mass `1/N` each.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMeasure {
    pub owner: usize,
    pub step: usize,
    pub weights: Vec<f64>,
    /// `N × d`.
    pub states: Vec<f64>,
    dim: usize,
    geometry: Geometry,
}

impl InteractionMeasure {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.len() as f64 * (1.0 / self.len() as f64)
    }

    /// As an atomic measure on `[weight] × state`.
    pub fn to_atomic(&self) -> Result<AtomicMeasure> {
        let mut blocks = vec![Block::Line];
        blocks.extend(state_space(self.dim, self.geometry)?.blocks().iter().copied());
        let points = self
            .weights
            .iter()
            .zip(self.states.chunks_exact(self.dim))
            .flat_map(|(&w, x)| std::iter::once(w).chain(x.iter().copied()))
            .collect();
        AtomicMeasure::uniform(ProductSpace::new(blocks)?, points)
    }

    /// State marginal, ignoring the weights.
    pub fn state_marginal(&self) -> Result<AtomicMeasure> {
        AtomicMeasure::uniform(state_space(self.dim, self.geometry)?, self.states.clone())
    }
}

/// Explicit Euler solution of `dw/dt = φ(X_t, X̃_t, w)`.
pub fn weight_flow(law: &WeightLaw, x: &StatePath, xt: &StatePath, w0: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    check_pair(x, xt, grid)?;
    let dt = grid.dt();
    let g = x.geometry();
    let mut w = Vec::with_capacity(grid.steps() + 1);
    w.push(w0);
    for k in 0..grid.steps() {
        let cur = w[k];
        w.push(cur + dt * law.phi(g, x.at(k), xt.at(k), cur));
    }
    Ok(w)
}

/// `w_k = e^{−λt_k} w₀ + ∫₀^{t_k} e^{−λ(t_k − s)} ℓ(X_s, X̃_s) ds`, the integral by the trapezoidal rule.
pub fn duhamel_weight_flow(law: &WeightLaw, x: &StatePath, xt: &StatePath, w0: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    let (lambda, ell) = match law {
        WeightLaw::LinearKuramoto { lambda, ell } => (*lambda, ell),
        other => return Err(Error::config(format!("Duhamel form needs a linear_kuramoto law, got {other:?}"))),
    };
    check_pair(x, xt, grid)?;
    let dt = grid.dt();
    let g = x.geometry();
    let decay = (-lambda * dt).exp();
    let mut integral = 0.0;
    let mut prev = ell.eval(g, x.at(0), xt.at(0));
    let mut w = Vec::with_capacity(grid.steps() + 1);
    w.push(w0);
    for k in 1..=grid.steps() {
        let cur = ell.eval(g, x.at(k), xt.at(k));
        integral = decay * integral + 0.5 * dt * (decay * prev + cur);
        prev = cur;
        w.push((-lambda * grid.node(k)).exp() * w0 + integral);
    }
    Ok(w)
}

fn check_pair(x: &StatePath, xt: &StatePath, grid: &TimeGrid) -> Result<()> {
    if x.len() != grid.steps() + 1 || xt.len() != grid.steps() + 1 || x.dim() != xt.dim() {
        return Err(Error::size("paths do not match the time grid"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{generate_weights, GraphKind};
    use crate::model::{InitialLaw, KernelSpec, ScalarFn};
    use crate::noise::particle_inputs;

    fn point_inputs(points: &[f64], steps: usize) -> Vec<InputDatum> {
        let n = points.len();
        points
            .iter()
            .enumerate()
            .map(|(i, &x)| InputDatum {
                label: (i + 1) as f64 / n as f64,
                x0: vec![x],
                increments: vec![0.0; steps],
                stream: i as u64,
            })
            .collect()
    }

    #[test]
    fn zero_kernel_reproduces_driving_term() {
        let model = ModelSpec::default();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let inputs = particle_inputs(&model, &grid, 5, 9);
        let w = generate_weights(&GraphKind::ErdosRenyi(0.5), 5, 9).unwrap();
        let ens = simulate(&model, &w, &inputs, &grid).unwrap();
        for (i, inp) in inputs.iter().enumerate() {
            assert_eq!(ens.path(i), inp.driving_path(1.0, model.geometry).unwrap());
        }
    }

    #[test]
    fn two_body_linear_attraction() {
        let model = ModelSpec {
            geometry: Geometry::Free,
            kernel: KernelSpec::LinearAttraction { a: 1.0, clamp: 10.0 },
            noise: 0.0,
            initial: InitialLaw::Point(vec![0.0]),
            ..Default::default()
        };
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let w = generate_weights(&GraphKind::Constant(1.0), 2, 0).unwrap();
        let ens = simulate(&model, &w, &point_inputs(&[0.0, 2.0], 20), &grid).unwrap();
        for k in 0..=20 {
            let (a, b) = (ens.state(0, k)[0], ens.state(1, k)[0]);
            assert!((0.5 * (a + b) - 1.0).abs() < 1e-14);
            assert!((b - a - 2.0 * (1.0 - grid.dt()).powi(k as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn single_kuramoto_particle_stays_put() {
        let model = ModelSpec { kernel: KernelSpec::Kuramoto { kappa: 1.0 }, noise: 0.0, ..Default::default() };
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let w = generate_weights(&GraphKind::Constant(1.0), 1, 0).unwrap();
        let ens = simulate(&model, &w, &point_inputs(&[0.0], 10), &grid).unwrap();
        assert!(ens.path(0).values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adaptive_weights_satisfy_euler_residual() {
        let model = ModelSpec {
            kernel: KernelSpec::Kuramoto { kappa: 1.0 },
            weight_law: WeightLaw::LinearKuramoto { lambda: 1.0, ell: ScalarFn::Cos(1.0) },
            ..Default::default()
        };
        let grid = TimeGrid::new(0.5, 16).unwrap();
        let n = 6;
        let inputs = particle_inputs(&model, &grid, n, 2);
        let w = generate_weights(&GraphKind::ErdosRenyi(0.5), n, 2).unwrap();
        let ens = simulate(&model, &w, &inputs, &grid).unwrap();
        for k in 0..16 {
            for i in 0..n {
                let now = ens.weight_row(i, k).unwrap();
                let next = ens.weight_row(i, k + 1).unwrap();
                for j in 0..n {
                    let phi = model.weight_law.phi(model.geometry, ens.state(i, k), ens.state(j, k), now[j]);
                    assert!((next[j] - now[j] - grid.dt() * phi).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn interaction_measure_examples() {
        let model = ModelSpec { kernel: KernelSpec::Kuramoto { kappa: 1.0 }, ..Default::default() };
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let inputs = particle_inputs(&model, &grid, 4, 1);
        let w = generate_weights(&GraphKind::Constant(0.4), 4, 1).unwrap();
        let ens = simulate(&model, &w, &inputs, &grid).unwrap();
        let m = ens.interaction_measure(2, 5).unwrap();
        assert!(m.weights.iter().all(|&x| x == 0.4));
        assert_eq!(m.state_marginal().unwrap(), ens.empirical_measure(5).unwrap());
        assert!((m.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn duhamel_examples() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let still = StatePath::new(1, Geometry::torus(), vec![0.3; 51]).unwrap();
        let decay = WeightLaw::LinearKuramoto { lambda: 2.0, ell: ScalarFn::Const(0.0) };
        let w = duhamel_weight_flow(&decay, &still, &still, 0.8, &grid).unwrap();
        for (k, v) in w.iter().enumerate() {
            assert!((v - 0.8 * (-2.0 * grid.node(k)).exp()).abs() < 1e-15);
        }
        let growth = WeightLaw::LinearKuramoto { lambda: 0.0, ell: ScalarFn::Const(1.0) };
        let w = duhamel_weight_flow(&growth, &still, &still, 0.1, &grid).unwrap();
        for (k, v) in w.iter().enumerate() {
            assert!((v - 0.1 - grid.node(k)).abs() < 1e-13);
        }
        let affine = WeightLaw::Affine { ell: ScalarFn::Const(0.0), alpha: ScalarFn::Const(0.0) };
        assert!(matches!(duhamel_weight_flow(&affine, &still, &still, 0.1, &grid), Err(Error::Config(_))));
        assert!(weight_flow(&affine, &still, &still, 0.7, &grid).unwrap().iter().all(|&v| v == 0.7));
        assert!(weight_flow(&WeightLaw::Frozen, &still, &still, 0.2, &grid).unwrap().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn euler_weight_flow_converges_to_closed_form() {
        let law = WeightLaw::LinearKuramoto { lambda: 1.5, ell: ScalarFn::Const(0.6) };
        let exact = |t: f64| (-1.5 * t).exp() * 0.2 + 0.4 * (1.0 - (-1.5 * t).exp());
        let err = |m: usize| {
            let grid = TimeGrid::new(1.0, m).unwrap();
            let p = StatePath::new(1, Geometry::torus(), vec![1.0; m + 1]).unwrap();
            let w = weight_flow(&law, &p, &p, 0.2, &grid).unwrap();
            w.iter().enumerate().map(|(k, v)| (v - exact(grid.node(k))).abs()).fold(0.0, f64::max)
        };
        let ratio = err(100) / err(200);
        assert!((1.8..2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn snapshot_round_trip_and_resume() {
        let model = ModelSpec {
            kernel: KernelSpec::Kuramoto { kappa: 1.0 },
            weight_law: WeightLaw::LinearKuramoto { lambda: 1.0, ell: ScalarFn::Cos(1.0) },
            ..Default::default()
        };
        let n = 8;
        let long = TimeGrid::new(1.0, 40).unwrap();
        let short = TimeGrid::new(0.5, 20).unwrap();
        let inputs = particle_inputs(&model, &long, n, 4);
        let w = generate_weights(&GraphKind::ErdosRenyi(0.5), n, 4).unwrap();
        let full = simulate_with(&model, &w, &inputs, &long, 4, &SimOptions::default()).unwrap();
        let first = simulate_with(&model, &w, &inputs, &short, 4, &SimOptions::default()).unwrap();
        let mut buf = Vec::new();
        first.write_snapshot(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"NFLD1");
        let back = Ensemble::read_snapshot(&buf[..], &model, None).unwrap();
        assert_eq!(back, first);
        let resumed = resume(&back, &w, &inputs, &long, &SimOptions::default()).unwrap();
        assert_eq!(resumed.states, full.states);
        assert_eq!(resumed.mean_weight, full.mean_weight);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let model = ModelSpec { geometry: Geometry::Free, initial: InitialLaw::Point(vec![0.0]), ..Default::default() };
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let mut inputs = point_inputs(&[0.0, 0.0], 4);
        inputs[1].increments[2] = f64::INFINITY;
        let w = generate_weights(&GraphKind::Constant(1.0), 2, 0).unwrap();
        match simulate(&model, &w, &inputs, &grid) {
            Err(Error::NonFinite { particle, step }) => assert_eq!((particle, step), (1, 3)),
            other => panic!("{other:?}"),
        }
    }
}
