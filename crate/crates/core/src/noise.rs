//! Counter-based random streams.
//!
//! Every draw is a function of `(seed, domain, stream)` and its position in
//! that stream, so results never depend on the order in which streams are
//! consumed.

use crate::model::{InputDatum, ModelSpec, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Which family of inputs a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Population {
    /// Inputs of the N-particle system.
    Particles,
    /// Atoms of a sampled limit reference, tagged so several references stay independent.
    Reference(u32),
}

impl Population {
    fn domain(self, part: u64) -> u64 {
        match self {
            Population::Particles => 0x10 + part,
            Population::Reference(tag) => 0x1000 + 0x10 * tag as u64 + part,
        }
    }
}

pub(crate) mod domain {
    pub const WEIGHTS: u64 = 0x0100;
    pub const LIMIT_LABELS: u64 = 0x0200;
    pub const LIMIT_SYMBOLS: u64 = 0x0300;
    pub const SEEDS: u64 = 0x0400;
}

const PART_INIT: u64 = 1;
const PART_NOISE: u64 = 2;

pub fn stream_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(b"netfield");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Derive an independent child seed, e.g. the reference seed of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, domain::SEEDS, tag).next_u64()
}

/// Regenerates the input with the given label and stream id.
pub fn make_input(
    model: &ModelSpec,
    grid: &TimeGrid,
    seed: u64,
    population: Population,
    stream: u64,
    label: f64,
) -> InputDatum {
    let dim = model.dim;
    let mut init = stream_rng(seed, population.domain(PART_INIT), stream);
    let x0 = model.initial.sample(dim, model.geometry, &mut init);
    let mut noise = stream_rng(seed, population.domain(PART_NOISE), stream);
    let sd = grid.dt().sqrt();
    let increments = (0..grid.steps() * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut noise);
            sd * z
        })
        .collect();
    InputDatum { label, x0, increments, stream }
}

/// Inputs of an N-particle system: labels `i/N`, streams `i − 1`.
pub fn particle_inputs(model: &ModelSpec, grid: &TimeGrid, n: usize, seed: u64) -> Vec<InputDatum> {
    (1..=n)
        .map(|i| make_input(model, grid, seed, Population::Particles, (i - 1) as u64, i as f64 / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_bit_exact() {
        let model = ModelSpec::default();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let a = make_input(&model, &grid, 7, Population::Particles, 3, 0.5);
        let b = make_input(&model, &grid, 7, Population::Particles, 3, 0.5);
        assert_eq!(a, b);
        let c = make_input(&model, &grid, 7, Population::Reference(0), 3, 0.5);
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn longer_grid_extends_the_same_stream() {
        let model = ModelSpec::default();
        let short = make_input(&model, &TimeGrid::new(1.0, 8).unwrap(), 1, Population::Particles, 0, 1.0);
        let long = make_input(&model, &TimeGrid::new(1.0, 16).unwrap(), 1, Population::Particles, 0, 1.0);
        let ratio = (1.0f64 / 16.0).sqrt() / (1.0f64 / 8.0).sqrt();
        for (a, b) in short.increments.iter().zip(&long.increments) {
            assert!((a * ratio - b).abs() < 1e-14);
        }
    }

    #[test]
    fn increments_have_variance_dt() {
        let model = ModelSpec::default();
        let grid = TimeGrid::new(2.0, 4000).unwrap();
        let inp = make_input(&model, &grid, 11, Population::Particles, 0, 1.0);
        let var = inp.increments.iter().map(|x| x * x).sum::<f64>() / inp.increments.len() as f64;
        assert!((var / grid.dt() - 1.0).abs() < 0.1);
    }
}
