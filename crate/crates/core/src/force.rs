//! Interaction drift at a single time step.
//!
//! Rows are evaluated in parallel; every inner sum runs over atoms in index
//! order, so results do not depend on the thread count.

use crate::graphs::LowRank;
use crate::model::{KernelSpec, ModelSpec, Normalization};
use rayon::prelude::*;

/// How to evaluate the interaction sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ForceMethod {
    /// Use trigonometric moments for Kuramoto kernels on separable frozen weights.
    #[default]
    Auto,
    /// Always sum over all pairs.
    Direct,
}

/// Frozen weights from the evaluated rows to the atoms.
pub(crate) enum FrozenRows<'a> {
    /// `rows × atoms`, row-major.
    Dense(&'a [f64]),
    LowRank(&'a LowRank),
    /// Row `i` produced on demand.
    Rows(&'a (dyn Fn(usize) -> Vec<f64> + Sync)),
}

const MOMENT_CHUNK: usize = 256;

fn normalize(model: &ModelSpec, n_atoms: usize, weight_sum: f64) -> f64 {
    match model.normalization {
        Normalization::Plain => n_atoms as f64,
        Normalization::MotschTadmor { floor } => weight_sum.max(floor),
    }
}

/// Drift of each evaluated row against the atoms, for frozen weights.
pub(crate) fn frozen_drift(
    model: &ModelSpec,
    method: ForceMethod,
    own: &[f64],
    atoms: &[f64],
    weights: &FrozenRows<'_>,
    out: &mut [f64],
) {
    let d = model.dim;
    let n_atoms = atoms.len() / d;
    if model.kernel.is_zero() {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    match (weights, &model.kernel, method) {
        (FrozenRows::LowRank(lr), KernelSpec::Kuramoto { kappa }, ForceMethod::Auto) => {
            kuramoto_moments(model, *kappa, lr, own, atoms, out)
        }
        (FrozenRows::LowRank(lr), _, _) => {
            out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
                let row: Vec<f64> = (0..n_atoms).map(|j| lr.entry(i, j)).collect();
                direct_row(model, &own[i * d..(i + 1) * d], atoms, &row, o);
            });
        }
        (FrozenRows::Rows(row), _, _) => {
            out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
                direct_row(model, &own[i * d..(i + 1) * d], atoms, &row(i), o);
            });
        }
        (FrozenRows::Dense(w), _, _) => {
            out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
                direct_row(model, &own[i * d..(i + 1) * d], atoms, &w[i * n_atoms..(i + 1) * n_atoms], o);
            });
        }
    }
}

#[inline]
fn direct_row(model: &ModelSpec, x: &[f64], atoms: &[f64], row: &[f64], out: &mut [f64]) {
    let d = model.dim;
    let mut acc = [0.0f64; 2];
    let mut k = [0.0f64; 2];
    let mut wsum = 0.0;
    for (y, &w) in atoms.chunks_exact(d).zip(row) {
        wsum += w;
        if w == 0.0 {
            continue;
        }
        model.kernel.eval_into(model.geometry, x, y, &mut k[..d]);
        for a in 0..d {
            acc[a] += w * k[a];
        }
    }
    let denom = normalize(model, row.len(), wsum);
    for a in 0..d {
        out[a] = acc[a] / denom;
    }
}

fn kuramoto_moments(model: &ModelSpec, kappa: f64, lr: &LowRank, own: &[f64], atoms: &[f64], out: &mut [f64]) {
    let d = model.dim;
    let n_atoms = atoms.len() / d;
    let rank = lr.rank;
    // Per-chunk partial moments, combined in chunk order.
    let partial: Vec<Vec<f64>> = atoms
        .par_chunks(MOMENT_CHUNK * d)
        .enumerate()
        .map(|(c, chunk)| {
            let mut m = vec![0.0; rank * (2 * d + 1)];
            let mut sc = [(0.0f64, 0.0f64); 2];
            for (jj, y) in chunk.chunks_exact(d).enumerate() {
                let j = c * MOMENT_CHUNK + jj;
                for a in 0..d {
                    sc[a] = y[a].sin_cos();
                }
                for r in 0..rank {
                    let b = lr.b[r * n_atoms + j];
                    let base = r * (2 * d + 1);
                    for a in 0..d {
                        m[base + 2 * a] += b * sc[a].0;
                        m[base + 2 * a + 1] += b * sc[a].1;
                    }
                    m[base + 2 * d] += b;
                }
            }
            m
        })
        .collect();
    let mut moments = vec![0.0; rank * (2 * d + 1)];
    for p in &partial {
        for (m, v) in moments.iter_mut().zip(p) {
            *m += v;
        }
    }
    out.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
        let x = &own[i * d..(i + 1) * d];
        let mut wsum = 0.0;
        let mut acc = [0.0f64; 2];
        for r in 0..rank {
            let a_ir = lr.a[i * rank + r];
            let base = r * (2 * d + 1);
            wsum += a_ir * moments[base + 2 * d];
            for a in 0..d {
                let (s, c) = x[a].sin_cos();
                // Σ_j b_j sin(y_j − x) = cos x · Σ b sin y − sin x · Σ b cos y
                acc[a] += a_ir * (c * moments[base + 2 * a] - s * moments[base + 2 * a + 1]);
            }
        }
        let denom = normalize(model, n_atoms, wsum);
        for a in 0..d {
            o[a] = kappa * acc[a] / denom;
        }
    });
}

/// Drift with weights at step k, then advance the weights to step k+1 in place.
pub(crate) fn adaptive_drift(model: &ModelSpec, dt: f64, own: &[f64], atoms: &[f64], weights: &mut [f64], out: &mut [f64]) {
    let d = model.dim;
    let n_atoms = atoms.len() / d;
    let zero = model.kernel.is_zero();
    out.par_chunks_mut(d)
        .zip(weights.par_chunks_mut(n_atoms))
        .enumerate()
        .for_each(|(i, (o, row))| {
            let x = &own[i * d..(i + 1) * d];
            let mut acc = [0.0f64; 2];
            let mut k = [0.0f64; 2];
            let mut wsum = 0.0;
            for (y, w) in atoms.chunks_exact(d).zip(row.iter_mut()) {
                let w0 = *w;
                wsum += w0;
                if !zero && w0 != 0.0 {
                    model.kernel.eval_into(model.geometry, x, y, &mut k[..d]);
                    for a in 0..d {
                        acc[a] += w0 * k[a];
                    }
                }
                *w = w0 + dt * model.weight_law.phi(model.geometry, x, y, w0);
            }
            let denom = normalize(model, n_atoms, wsum);
            for a in 0..d {
                o[a] = if zero { 0.0 } else { acc[a] / denom };
            }
        });
}
