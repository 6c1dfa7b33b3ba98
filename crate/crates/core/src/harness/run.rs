use super::config::{emit_config, ExperimentConfig, ExperimentKind, PdeSystem};
use crate::dynamics::{simulate_with, SimOptions};
use crate::error::{Error, Result};
use crate::graphs::{d_inf_bl, empirical_digraph, generate_weights, label_grid, limit_of, DigraphView};
use crate::ldp::{labeled_sanov_check, loglog_slope, rate_zero_residual, sanov_table, EXACT_DIFFERENCE};
use crate::model::{validate_model, Geometry, TimeGrid};
use crate::noise::particle_inputs;
use crate::pde::{
    pde_vs_particles, solve_adaptive_closure, solve_pathwise_closure, solve_vlasov_digraph, AdaptiveClosureOptions,
    ComparisonSetup, CouplingMatrix, LabeledDensity, LabeledPairDensity, PairDensity, Record, StateGrid,
    VlasovOptions, MASS_TOLERANCE, NEGATIVITY_TOLERANCE,
};
use crate::tanaka::{coupling_error_with, reference_seed, solve_limit_process, CouplingOptions, PicardOptions};
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }
}

/// Outcome of one scan cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub label: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config: String,
    pub kind: ExperimentKind,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub seeds: Vec<u64>,
    pub files: Vec<OutputFile>,
    pub cells: Vec<CellRecord>,
    pub checks: Vec<Check>,
    pub out: PathBuf,
}

impl RunManifest {
    pub fn pass(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_none()) && self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "kind": self.kind.name(),
            "version": self.version,
            "config": self.config,
            "wall_clock_seconds": self.wall_clock_seconds,
            "seeds": self.seeds,
            "files": self.files.iter().map(|f| json!({"path": f.path, "sha256": f.sha256})).collect::<Vec<_>>(),
            "cells": self.cells.iter().map(|c| json!({"cell": c.label, "ok": c.error.is_none(), "error": c.error})).collect::<Vec<_>>(),
            "checks": self.checks.iter().map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail})).collect::<Vec<_>>(),
            "pass": self.pass(),
        })
    }

    /// Path of a listed output file.
    pub fn file(&self, name: &str) -> Option<PathBuf> {
        self.files.iter().find(|f| f.path == name).map(|f| self.out.join(&f.path))
    }
}

/// Threads from an explicit request, then `NETFIELD_THREADS`, then rayon's default.
pub fn thread_count(requested: Option<usize>) -> Result<usize> {
    if let Some(t) = requested {
        return if t == 0 { Err(Error::config("--threads must be positive")) } else { Ok(t) };
    }
    match std::env::var("NETFIELD_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => Err(Error::config(format!("NETFIELD_THREADS must be a positive integer, got '{s}'"))),
        },
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

/// [`run`] inside a dedicated pool of `threads` workers.
pub fn run_in_pool(config: &ExperimentConfig, threads: usize) -> Result<RunManifest> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot build a pool of {threads} threads: {e}")))?;
    pool.install(|| run(config))
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn with_file(&mut self, name: &str, f: impl FnOnce(std::fs::File) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        f(std::fs::File::create(&path)?)?;
        self.files.push(path);
        Ok(())
    }
}

/// Results of a scan before they are written.
struct Scan {
    cells: Vec<CellRecord>,
    checks: Vec<Check>,
    /// First configuration error, if every cell failed with one.
    config_error: Option<Error>,
}

fn collect<T>(labels: Vec<String>, results: Vec<Result<T>>) -> (Vec<CellRecord>, Vec<T>, Option<Error>) {
    let all_failed = !results.is_empty() && results.iter().all(|r| r.is_err());
    let mut cells = Vec::new();
    let mut ok = Vec::new();
    let mut first = None;
    for (label, r) in labels.into_iter().zip(results) {
        match r {
            Ok(v) => {
                ok.push(v);
                cells.push(CellRecord { label, error: None });
            }
            Err(e) => {
                cells.push(CellRecord { label, error: Some(e.to_string()) });
                if first.is_none() {
                    first = Some(e);
                }
            }
        }
    }
    let config_error = first.filter(|e| all_failed && e.is_config());
    (cells, ok, config_error)
}

fn cell_name(n: usize, seed: u64) -> String {
    format!("n={n} seed={seed}")
}

fn grid_cells(config: &ExperimentConfig) -> Vec<(usize, u64)> {
    config.ns.iter().flat_map(|&n| config.seeds.iter().map(move |&s| (n, s))).collect()
}

/// Medians over seeds, one per N in ascending order.
fn medians_by_n(ns: &[usize], values: &[(usize, f64)]) -> Vec<f64> {
    ns.iter()
        .map(|&n| median(&values.iter().filter(|v| v.0 == n).map(|v| v.1).collect::<Vec<_>>()))
        .collect()
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

fn picard(config: &ExperimentConfig) -> PicardOptions {
    PicardOptions { tol: config.picard.tol, max_sweeps: config.picard.max_sweeps, method: config.picard.method }
}

fn sim_options(config: &ExperimentConfig) -> SimOptions {
    SimOptions { method: config.picard.method, ..SimOptions::default() }
}

/// Run the configured experiment, writing CSVs and the manifest to `config.out`.
///
/// Failures inside a scan cell are recorded in the manifest and the scan continues;
/// an error is returned only for configuration problems and I/O.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let grid = TimeGrid::new(config.grid.horizon, config.grid.steps)?;
    validate_model(&config.model, &grid)?;
    std::fs::create_dir_all(&config.out)?;
    let mut out = Output { dir: config.out.clone(), files: Vec::new() };
    let scan = match config.kind {
        ExperimentKind::Simulate => simulate(config, &grid, &mut out)?,
        ExperimentKind::Couple => couple(config, &grid, &mut out)?,
        ExperimentKind::Pde => pde(config, &grid, &mut out)?,
        ExperimentKind::PdeVsParticles => compare(config, &grid, &mut out)?,
        ExperimentKind::DigraphConvergence => digraphs(config, &grid, &mut out)?,
        ExperimentKind::Sanov => sanov(config, &mut out)?,
        ExperimentKind::RateZero => rate_zero(config, &grid, &mut out)?,
    };
    if let Some(e) = scan.config_error {
        return Err(e);
    }
    let mut files = Vec::with_capacity(out.files.len());
    for p in &out.files {
        let rel = p.strip_prefix(&config.out).unwrap_or(p).to_string_lossy().replace('\\', "/");
        files.push(OutputFile { path: rel, sha256: digest(p)? });
    }
    let manifest = RunManifest {
        config: emit_config(config),
        kind: config.kind,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        seeds: config.seeds.clone(),
        files,
        cells: scan.cells,
        checks: scan.checks,
        out: config.out.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest.to_json()).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(config.out.join(MANIFEST_NAME), text + "\n")?;
    Ok(manifest)
}

fn digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Re-hash every file listed in a manifest; returns the paths that changed or vanished.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let manifest = load(dir)?;
    let mut bad = Vec::new();
    for f in manifest["files"].as_array().into_iter().flatten() {
        let path = f["path"].as_str().unwrap_or_default();
        let expected = f["sha256"].as_str().unwrap_or_default();
        match digest(&dir.join(path)) {
            Ok(d) if d == expected => {}
            _ => bad.push(path.to_string()),
        }
    }
    Ok(bad)
}

/// `(name, pass, detail)` of every check in a manifest, plus its overall verdict.
pub fn read_manifest_checks(dir: &Path) -> Result<(Vec<Check>, bool)> {
    let manifest = load(dir)?;
    let checks = manifest["checks"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|c| Check {
            name: c["name"].as_str().unwrap_or_default().to_string(),
            pass: c["pass"].as_bool().unwrap_or(false),
            detail: c["detail"].as_str().unwrap_or_default().to_string(),
        })
        .collect();
    Ok((checks, manifest["pass"].as_bool().unwrap_or(false)))
}

fn load(dir: &Path) -> Result<Value> {
    let path = if dir.is_dir() { dir.join(MANIFEST_NAME) } else { dir.to_path_buf() };
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Particle systems on the (N, seed) grid. Small systems get one CSV per particle.
const PER_PARTICLE_MAX_N: usize = 64;

fn simulate(config: &ExperimentConfig, grid: &TimeGrid, out: &mut Output) -> Result<Scan> {
    let cells = grid_cells(config);
    let model = &config.model;
    let results: Vec<Result<_>> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let weights = generate_weights(&config.graph, n, seed)?;
            let inputs = particle_inputs(model, grid, n, seed);
            let ens = simulate_with(model, &weights, &inputs, grid, seed, &sim_options(config))?;
            let drift_free = if model.kernel.is_zero() {
                let mut exact = true;
                for (i, inp) in inputs.iter().enumerate() {
                    exact &= ens.path(i) == inp.driving_path(model.noise, model.geometry)?;
                }
                Some(exact)
            } else {
                None
            };
            Ok((n, seed, ens, drift_free))
        })
        .collect();
    let (cell_records, done, config_error) = collect(cells.iter().map(|&(n, s)| cell_name(n, s)).collect(), results);
    let mut summary = Table::new(&["n", "seed", "final_mean_weight", "drift_free"]);
    let mut checks = Vec::new();
    let mut exact = true;
    for (n, seed, ens, drift_free) in &done {
        let prefix = format!("simulate_n{n}_seed{seed}");
        if *n <= PER_PARTICLE_MAX_N {
            let files = ens.write_particle_csvs(&out.dir.join(&prefix), "")?;
            out.files.extend(files);
        } else {
            out.with_file(&format!("{prefix}_paths.csv"), |f| ens.write_paths_csv(std::io::BufWriter::new(f)))?;
        }
        out.with_file(&format!("{prefix}_weights.csv"), |f| ens.write_weight_csv(std::io::BufWriter::new(f)))?;
        let last = *ens.mean_weight().last().unwrap_or(&f64::NAN);
        let flag = drift_free.map(|b| b.to_string()).unwrap_or_default();
        summary.push(vec![n.to_string(), seed.to_string(), fmt(last), flag]);
        exact &= drift_free.unwrap_or(true);
    }
    out.table("simulate_summary.csv", &summary)?;
    if model.kernel.is_zero() {
        checks.push(Check::new("drift_free_paths", exact, "zero kernel: every path equals its driving term bit for bit"));
    }
    checks.push(Check::new("all_cells_finished", done.len() == cells.len(), format!("{}/{} cells", done.len(), cells.len())));
    Ok(Scan { cells: cell_records, checks, config_error })
}

fn coupling_options(config: &ExperimentConfig) -> CouplingOptions {
    CouplingOptions {
        picard: picard(config),
        sim: sim_options(config),
        m_ref: config.picard.m_ref,
        label_points: config.picard.label_points,
    }
}

fn couple(config: &ExperimentConfig, grid: &TimeGrid, out: &mut Output) -> Result<Scan> {
    let limit = limit_of(&config.graph)?;
    let opts = coupling_options(config);
    let model = &config.model;
    // One reference per seed, shared by every N.
    let references: Vec<Result<_>> = config
        .seeds
        .par_iter()
        .map(|&seed| solve_limit_process(model, &limit, opts.m_ref, grid, &opts.picard, reference_seed(seed)))
        .collect();
    let references: Vec<_> = references.into_iter().map(|r| r.map(Arc::new).map_err(|e| e.to_string())).collect();
    let cells = grid_cells(config);
    let results: Vec<Result<_>> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let idx = config.seeds.iter().position(|&s| s == seed).expect("seed from the config");
            let reference = references[idx].as_ref().map_err(|e| Error::Scheme(format!("reference failed: {e}")))?;
            coupling_error_with(reference, model, &config.graph, n, grid, seed, &opts)
        })
        .collect();
    let (cell_records, reports, mut config_error) = collect(cells.iter().map(|&(n, s)| cell_name(n, s)).collect(), results);
    if config_error.is_none() && reports.is_empty() {
        // A reference that failed for configuration reasons fails every cell the same way.
        let again = solve_limit_process(model, &limit, opts.m_ref, grid, &opts.picard, reference_seed(config.seeds[0]));
        config_error = again.err().filter(Error::is_config);
    }
    let mut t = Table::new(&["n", "seed", "max_sup_error", "d_inf_bl_lower", "d_inf_bl_upper", "ratio"]);
    for r in &reports {
        t.push(vec![
            r.n.to_string(),
            r.seed.to_string(),
            fmt(r.max_sup_error),
            fmt(r.d_inf_bl_lower),
            fmt(r.d_inf_bl_upper),
            fmt(r.ratio),
        ]);
    }
    out.table("coupling.csv", &t)?;
    let errors: Vec<(usize, f64)> = reports.iter().map(|r| (r.n, r.max_sup_error)).collect();
    let med = medians_by_n(&config.ns, &errors);
    let mut checks = vec![Check::new("coupling_non_increasing", non_increasing(&med), format!("medians {}", list(&med)))];
    if config.ns.len() >= 2 {
        let x: Vec<f64> = config.ns.iter().map(|&n| n as f64).collect();
        let slope = loglog_slope(&x, &med);
        checks.push(Check::new(
            "coupling_slope",
            slope <= config.tolerance.slope,
            format!("log-log slope {slope:.4} (limit {})", config.tolerance.slope),
        ));
    }
    Ok(Scan { cells: cell_records, checks, config_error })
}

fn digraphs(config: &ExperimentConfig, grid: &TimeGrid, out: &mut Output) -> Result<Scan> {
    let limit = limit_of(&config.graph)?;
    let model = &config.model;
    let labels = label_grid(config.picard.label_points);
    let m_ref = config.picard.m_ref;
    // Per seed: a reference sample and the distance to an independent second sample.
    let references: Vec<Result<_>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let a = limit.sample_tagged(m_ref, model, grid, reference_seed(seed), 0)?;
            let b = limit.sample_tagged(m_ref, model, grid, reference_seed(seed), 1)?;
            let floor = d_inf_bl(&a, &b, &labels, DigraphView::Weights)?.upper;
            Ok((a, floor))
        })
        .collect();
    let mut references_ok = Vec::new();
    for r in references {
        references_ok.push(r?);
    }
    let cells = grid_cells(config);
    let results: Vec<Result<_>> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let idx = config.seeds.iter().position(|&s| s == seed).expect("seed from the config");
            let (sample, floor) = &references_ok[idx];
            let weights = Arc::new(generate_weights(&config.graph, n, seed)?);
            let inputs: Arc<[_]> = particle_inputs(model, grid, n, seed).into();
            let digraph = empirical_digraph(weights, inputs, model.geometry)?;
            let d = d_inf_bl(&digraph, sample, &labels, DigraphView::Weights)?;
            Ok((n, seed, d.lower, d.upper, *floor))
        })
        .collect();
    let (cell_records, rows, config_error) = collect(cells.iter().map(|&(n, s)| cell_name(n, s)).collect(), results);
    let factor = config.tolerance.digraph_factor;
    let mut t = Table::new(&["n", "seed", "d_inf_bl_lower", "d_inf_bl_upper", "sampling_floor", "bound"]);
    for &(n, seed, lo, hi, floor) in &rows {
        let bound = factor / (n as f64).sqrt() + floor;
        t.push(vec![n.to_string(), seed.to_string(), fmt(lo), fmt(hi), fmt(floor), fmt(bound)]);
    }
    out.table("digraph_convergence.csv", &t)?;
    let upper: Vec<(usize, f64)> = rows.iter().map(|r| (r.0, r.3)).collect();
    let med = medians_by_n(&config.ns, &upper);
    let floor = median(&references_ok.iter().map(|r| r.1).collect::<Vec<_>>());
    let n_max = *config.ns.last().expect("non-empty N list");
    let bound = factor / (n_max as f64).sqrt() + floor;
    let last = *med.last().unwrap_or(&f64::NAN);
    let checks = vec![
        Check::new(
            "digraph_bound",
            last <= bound,
            format!("median upper {last:.4e} at N={n_max}, bound {bound:.4e} (floor {floor:.4e})"),
        ),
        Check::new("digraph_non_increasing", non_increasing(&med), format!("medians {}", list(&med))),
    ];
    Ok(Scan { cells: cell_records, checks, config_error })
}

fn compare(config: &ExperimentConfig, grid: &TimeGrid, out: &mut Output) -> Result<Scan> {
    let setup = ComparisonSetup {
        pde_cells: config.pde.cells,
        labels: config.pde.labels,
        hist_cells: config.pde.hist_cells,
        times: config.pde.times.clone(),
        sim: sim_options(config),
    };
    let rows = pde_vs_particles(&config.model, &config.graph, grid, &config.ns, &config.seeds, &setup)?;
    let mut t = Table::new(&["n", "seed", "time", "l1"]);
    for r in &rows {
        t.push(vec![r.n.to_string(), r.seed.to_string(), fmt(r.time), fmt(r.l1)]);
    }
    out.table("pde_vs_particles.csv", &t)?;
    let mut checks = Vec::new();
    let n_max = *config.ns.last().expect("non-empty N list");
    for &time in &config.pde.times {
        let at: Vec<(usize, f64)> = rows.iter().filter(|r| r.time == grid.node(grid.nearest_step(time))).map(|r| (r.n, r.l1)).collect();
        let med = medians_by_n(&config.ns, &at);
        let last = *med.last().unwrap_or(&f64::NAN);
        checks.push(Check::new(
            &format!("l1_bound_t{time}"),
            last <= config.tolerance.l1,
            format!("median l1 {last:.4e} at N={n_max} (limit {})", config.tolerance.l1),
        ));
        checks.push(Check::new(&format!("l1_decreasing_t{time}"), non_increasing(&med), format!("medians {}", list(&med))));
    }
    let cells = vec![CellRecord { label: "pde_vs_particles".into(), error: None }];
    Ok(Scan { cells, checks, config_error: None })
}

fn pde(config: &ExperimentConfig, grid: &TimeGrid, out: &mut Output) -> Result<Scan> {
    let model = &config.model;
    let period = match model.geometry {
        Geometry::Periodic(p) if model.dim == 1 => p,
        _ => return Err(Error::Unsupported("the PDE solvers need a one-dimensional torus".into())),
    };
    let state = StateGrid::new(config.pde.cells, period)?;
    let record = Record::times(grid, &config.pde.times);
    let p = &config.pde;
    let mut checks = Vec::new();
    let mut summary;
    match p.system {
        PdeSystem::Vlasov => {
            let eta = CouplingMatrix::from_limit(&limit_of(&config.graph)?, p.labels)?;
            let rho0 = LabeledDensity::from_law(&model.initial, p.labels, state)?;
            let traj = solve_vlasov_digraph(&rho0, &eta, &model.kernel, grid, &VlasovOptions { record, coupling_decay: None })?;
            summary = Table::new(&["frame", "time", "label", "mass", "min_density", "circular_mean"]);
            let mut worst: f64 = 0.0;
            let mut lowest = f64::INFINITY;
            for (f, frame) in traj.frames.iter().enumerate() {
                out.with_file(&format!("pde_density_{f:03}.csv"), |file| frame.write_csv(std::io::BufWriter::new(file)))?;
                for l in 0..frame.labels() {
                    let row_min = frame.row(l).iter().copied().fold(f64::INFINITY, f64::min);
                    worst = worst.max((frame.mass(l) - 1.0).abs());
                    lowest = lowest.min(row_min);
                    summary.push(vec![
                        f.to_string(),
                        fmt(frame.time()),
                        fmt(frame.label(l)),
                        fmt(frame.mass(l)),
                        fmt(row_min),
                        fmt(frame.circular_mean(l)),
                    ]);
                }
            }
            checks.push(Check::new("mass_conserved", worst <= MASS_TOLERANCE, format!("largest mass drift {worst:.3e}")));
            checks.push(Check::new("non_negative", lowest >= -NEGATIVITY_TOLERANCE, format!("smallest density {lowest:.3e}")));
        }
        PdeSystem::Pathwise => {
            let p0 = LabeledDensity::from_law(&model.initial, 1, state)?;
            let h0 = PairDensity::product(p.w0, p0.row(0), state)?;
            let traj = solve_pathwise_closure(&p0, &h0, &model.kernel, &p.ell, &p.alpha, grid, &record)?;
            summary = Table::new(&["frame", "time", "density_mass", "pair_mass"]);
            let mut worst: f64 = 0.0;
            for (f, frame) in traj.frames.iter().enumerate() {
                let mass = frame.p.iter().sum::<f64>() * state.dx();
                worst = worst.max((mass - 1.0).abs());
                summary.push(vec![f.to_string(), fmt(frame.time), fmt(mass), fmt(frame.pair_mass())]);
            }
            checks.push(Check::new("mass_conserved", worst <= MASS_TOLERANCE, format!("largest mass drift {worst:.3e}")));
            checks.push(Check::new(
                "pair_mass_finite",
                traj.frames.iter().all(|f| f.pair_mass().is_finite()),
                format!("{} divisions used the density floor", traj.floored_divisions),
            ));
        }
        PdeSystem::Adaptive => {
            let eta0 = CouplingMatrix::from_limit(&limit_of(&config.graph)?, p.labels)?;
            let rho0 = LabeledDensity::from_law(&model.initial, p.labels, state)?;
            let h0 = LabeledPairDensity::zero(p.labels, state);
            let opts = AdaptiveClosureOptions { initial_network: true, record };
            let traj = solve_adaptive_closure(&rho0, &h0, &eta0, &model.kernel, &p.ell, p.lambda, grid, &opts)?;
            summary = Table::new(&["frame", "time", "label", "mass", "pair_mass"]);
            let mut worst: f64 = 0.0;
            for (f, frame) in traj.frames.iter().enumerate() {
                for l in 0..frame.rho.labels() {
                    let pair: f64 = (0..frame.h.labels()).map(|m| frame.h.pair_mass(l, m)).sum();
                    worst = worst.max((frame.rho.mass(l) - 1.0).abs());
                    summary.push(vec![f.to_string(), fmt(frame.time), fmt(frame.rho.label(l)), fmt(frame.rho.mass(l)), fmt(pair)]);
                }
            }
            checks.push(Check::new("mass_conserved", worst <= MASS_TOLERANCE, format!("largest mass drift {worst:.3e}")));
        }
    }
    out.table("pde_summary.csv", &summary)?;
    let cells = vec![CellRecord { label: p.system.name().into(), error: None }];
    Ok(Scan { cells, checks, config_error: None })
}

fn sanov(config: &ExperimentConfig, out: &mut Output) -> Result<Scan> {
    let rows = sanov_table(&config.sanov.probs, &config.sanov.ns)?;
    let mut t = Table::new(&["n", "counts", "rate", "entropy", "gap", "bound", "pass"]);
    for r in &rows {
        let counts = r.counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        t.push(vec![r.n.to_string(), counts, fmt(r.rate), fmt(r.entropy), fmt(r.gap), fmt(r.bound), r.passes().to_string()]);
    }
    out.table("sanov.csv", &t)?;
    let failing = rows.iter().filter(|r| !r.passes()).count();
    let mut checks = vec![Check::new("sanov_gap", failing == 0, format!("{failing} of {} types exceed the bound", rows.len()))];
    let mut cells = vec![CellRecord { label: "sanov".into(), error: None }];
    match labeled_sanov_check(&config.graph, &config.sanov.moment_ns, &config.sanov.tests) {
        Ok(report) => {
            let mut m = Table::new(&["test", "n", "left", "right", "difference"]);
            for r in &report.rows {
                m.push(vec![r.test.name().into(), r.n.to_string(), fmt(r.left), fmt(r.right), fmt(r.difference)]);
            }
            out.table("exponential_moments.csv", &m)?;
            let mut o = Table::new(&["test", "order"]);
            for (test, order) in &report.orders {
                o.push(vec![test.name().into(), order.map(fmt).unwrap_or_else(|| "exact".into())]);
            }
            out.table("moment_orders.csv", &o)?;
            let (pass, detail) = match report.min_order() {
                Some(order) => (order >= config.tolerance.moment_order, format!("smallest order {order:.4}")),
                None => {
                    let worst = report.rows.iter().map(|r| r.difference.abs()).fold(0.0, f64::max);
                    (worst <= EXACT_DIFFERENCE, format!("all differences exact (largest {worst:.2e})"))
                }
            };
            checks.push(Check::new("moment_order", pass, detail));
            cells.push(CellRecord { label: "exponential_moments".into(), error: None });
        }
        Err(e) if e.is_config() => return Err(e),
        Err(e) => cells.push(CellRecord { label: "exponential_moments".into(), error: Some(e.to_string()) }),
    }
    Ok(Scan { cells, checks, config_error: None })
}

fn rate_zero(config: &ExperimentConfig, grid: &TimeGrid, out: &mut Output) -> Result<Scan> {
    let limit = limit_of(&config.graph)?;
    let opts = picard(config);
    let cells: Vec<(f64, u64)> =
        config.rate_zero_labels.iter().flat_map(|&l| config.seeds.iter().map(move |&s| (l, s))).collect();
    let results: Vec<Result<_>> = cells
        .par_iter()
        .map(|&(label, seed)| {
            rate_zero_residual(&config.model, &limit, label, config.picard.m_ref, grid, &opts, seed)
                .map(|r| (seed, r))
        })
        .collect();
    let names = cells.iter().map(|&(l, s)| format!("label={l} seed={s}")).collect();
    let (cell_records, reports, config_error) = collect(names, results);
    let mut t = Table::new(&[
        "label",
        "seed",
        "m_ref",
        "sweeps",
        "residual_lower",
        "residual_upper",
        "marginal_consistency",
        "threshold",
        "weight_marginal",
        "pass",
    ]);
    for (seed, r) in &reports {
        let marginal = r.weight_marginal.iter().map(|(w, p)| format!("{w}:{p}")).collect::<Vec<_>>().join(";");
        t.push(vec![
            fmt(r.label),
            seed.to_string(),
            r.m_ref.to_string(),
            r.sweeps.to_string(),
            fmt(r.residual.lower),
            fmt(r.residual.upper),
            r.marginal_consistency.map(fmt).unwrap_or_default(),
            fmt(r.threshold),
            marginal,
            r.passes().to_string(),
        ]);
    }
    out.table("rate_zero.csv", &t)?;
    let failing = reports.iter().filter(|(_, r)| !r.passes()).count();
    let worst = reports.iter().map(|(_, r)| r.residual.upper).fold(0.0, f64::max);
    let checks = vec![Check::new(
        "rate_zero_residual",
        failing == 0 && !reports.is_empty(),
        format!("{failing} of {} cells above threshold, largest residual {worst:.3e}", reports.len()),
    )];
    Ok(Scan { cells: cell_records, checks, config_error })
}
