//! Particle histograms against the Vlasov digraph solution.

use super::{solve_vlasov_digraph, CouplingMatrix, LabeledDensity, Record, StateGrid, Stencil, VlasovOptions};
use crate::dynamics::{simulate_with, SimOptions};
use crate::error::{Error, Result};
use crate::graphs::{generate_weights, limit_of, row_of, GraphKind};
use crate::metrics::{histogram_density, l1_grid_distance, CellGrid};
use crate::model::{Geometry, ModelSpec, Normalization, TimeGrid};
use crate::noise::particle_inputs;

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonSetup {
    /// PDE cells; a multiple of `hist_cells`.
    pub pde_cells: usize,
    /// Label buckets on both sides.
    pub labels: usize,
    pub hist_cells: usize,
    pub times: Vec<f64>,
    pub sim: SimOptions,
}

impl Default for ComparisonSetup {
    fn default() -> Self {
        ComparisonSetup { pde_cells: 512, labels: 1, hist_cells: 64, times: vec![0.5, 1.0], sim: SimOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub n: usize,
    pub seed: u64,
    pub time: f64,
    /// Label-averaged L1 distance between histogram and PDE densities.
    pub l1: f64,
}

/// L1 distance between label-bucketed particle histograms and the PDE, for every
/// `(N, seed, time)`. The PDE runs once on a refinement of `grid`.
pub fn pde_vs_particles(
    model: &ModelSpec,
    kind: &GraphKind,
    grid: &TimeGrid,
    ns: &[usize],
    seeds: &[u64],
    setup: &ComparisonSetup,
) -> Result<Vec<ComparisonRow>> {
    let period = match model.geometry {
        Geometry::Periodic(p) if model.dim == 1 => p,
        _ => return Err(Error::Unsupported("PDE comparison needs a one-dimensional torus".into())),
    };
    if model.noise != 1.0 || model.normalization != Normalization::Plain || !model.weight_law.is_frozen() {
        return Err(Error::Unsupported("PDE comparison needs unit noise, plain normalization and frozen weights".into()));
    }
    let state = StateGrid::new(setup.pde_cells, period)?;
    let eta = CouplingMatrix::from_limit(&limit_of(kind)?, setup.labels)?;
    let rho0 = LabeledDensity::from_law(&model.initial, setup.labels, state)?;
    let vmax = Stencil::new(&state, &model.kernel).bound() * eta.max_row_mass();
    let per_step = (grid.dt() / state.stable_dt(vmax)).ceil().max(1.0) as usize;
    let fine = grid.refined(per_step);
    let steps: Vec<usize> = setup.times.iter().map(|&t| grid.nearest_step(t)).collect();
    let pde = solve_vlasov_digraph(
        &rho0,
        &eta,
        &model.kernel,
        &fine,
        &VlasovOptions { record: Record::Steps(steps.iter().map(|k| k * per_step).collect()), coupling_decay: None },
    )?;
    let cells = CellGrid::OneD(crate::metrics::Axis::torus(period, setup.hist_cells)?);
    let mut rows = Vec::new();
    for &n in ns {
        if n < setup.labels {
            return Err(Error::config(format!("N = {n} leaves label buckets empty")));
        }
        for &seed in seeds {
            let weights = generate_weights(kind, n, seed)?;
            let inputs = particle_inputs(model, grid, n, seed);
            let ens = simulate_with(model, &weights, &inputs, grid, seed, &setup.sim)?;
            let buckets: Vec<usize> = inputs.iter().map(|i| row_of(i.label, setup.labels)).collect();
            for (&t, &k) in setup.times.iter().zip(&steps) {
                let frame = pde.at_time(fine.node(k * per_step));
                let states = ens.states_at(k);
                let mut l1 = 0.0;
                for l in 0..setup.labels {
                    let samples: Vec<f64> = states.iter().zip(&buckets).filter(|(_, &b)| b == l).map(|(&x, _)| x).collect();
                    let hist = histogram_density(&samples, &cells)?;
                    l1 += l1_grid_distance(&hist, &frame.grid_density(l, setup.hist_cells)?)? / setup.labels as f64;
                }
                rows.push(ComparisonRow { n, seed, time: t, l1 });
            }
        }
    }
    Ok(rows)
}
