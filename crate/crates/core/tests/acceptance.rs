//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) before asserting, so `cargo test --test acceptance`
//! shows the whole table even when something fails.

use netfield::dynamics::{duhamel_weight_flow, simulate, weight_flow};
use netfield::graphs::{empirical_digraph, generate_weights, limit_of, GraphKind};
use netfield::harness::{parse_config, run, run_in_pool, RunManifest};
use netfield::ldp::rate_zero_residual;
use netfield::model::{Geometry, InitialLaw, KernelSpec, ModelSpec, ScalarFn, StatePath, TimeGrid, WeightLaw};
use netfield::noise::particle_inputs;
use netfield::pde::{
    solve_adaptive_closure, solve_pathwise_closure, solve_vlasov_digraph, AdaptiveClosureOptions, CouplingMatrix,
    LabeledDensity, LabeledPairDensity, PairDensity, Record, StateGrid, VlasovOptions,
};
use netfield::tanaka::{picard_solve, solve_limit_process, PicardOptions};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

fn report(id: u32, title: &str, pass: bool, elapsed: Duration, budget: Duration, detail: &str) {
    let verdict = if pass && elapsed <= budget { "PASS" } else { "FAIL" };
    let line = format!(
        "[criterion {id:>2}] {verdict} {title} ({:.1}s of {}s) {detail}\n",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn run_text(text: &str) -> (RunManifest, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut c = parse_config(text).unwrap();
    c.out = dir.path().to_path_buf();
    (run(&c).unwrap(), dir)
}

fn summary(m: &RunManifest) -> String {
    let failed_cells = m.cells.iter().filter(|c| c.error.is_some()).count();
    let mut s: Vec<String> = m.checks.iter().map(|c| format!("{}={} [{}]", c.name, c.pass, c.detail)).collect();
    if failed_cells > 0 {
        s.push(format!("{failed_cells} failed cells"));
    }
    s.join("; ")
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn criterion_01_drift_free_exactness() {
    let start = Instant::now();
    let model = ModelSpec::default();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let kind = GraphKind::ErdosRenyi(0.5);
    let inputs: Arc<[_]> = particle_inputs(&model, &grid, 64, 11).into();
    let driving: Vec<StatePath> = inputs.iter().map(|i| i.driving_path(model.noise, model.geometry).unwrap()).collect();

    let w = Arc::new(generate_weights(&kind, 64, 11).unwrap());
    let ens = simulate(&model, &w, &inputs, &grid).unwrap();
    let sim_exact = (0..64).all(|i| ens.path(i) == driving[i]);
    let dg = empirical_digraph(w, inputs.clone(), model.geometry).unwrap();
    let map = picard_solve(&model, Arc::new(dg), &inputs, &grid, &PicardOptions::default()).unwrap();
    let picard_exact = map.evaluated_paths() == driving;
    let limit = solve_limit_process(&model, &limit_of(&kind).unwrap(), 256, &grid, &PicardOptions::default(), 5).unwrap();
    let limit_exact = limit.evaluate(&inputs).unwrap() == driving;

    // Heat flow from a wrapped Gaussian of variance ¼ on a circle of length 20.
    let sgrid = StateGrid::new(200, 20.0).unwrap();
    let law = InitialLaw::WrappedGaussian { mean: vec![10.0], std: vec![0.5] };
    let rho0 = LabeledDensity::from_law(&law, 1, sgrid).unwrap();
    let expected = 1.25;
    let time = TimeGrid::new(1.0, 250).unwrap();
    let tol = 2.0 * (sgrid.dx().powi(2) + time.dt());
    let eta = CouplingMatrix::constant(1, 1.0).unwrap();
    let vlasov = solve_vlasov_digraph(&rho0, &eta, &KernelSpec::Zero, &time, &VlasovOptions::default()).unwrap();
    let v_vlasov = vlasov.last().variance_about(0, 10.0);
    let h0 = PairDensity::product(1.0, rho0.values(), sgrid).unwrap();
    let path = solve_pathwise_closure(&rho0, &h0, &KernelSpec::Zero, &ScalarFn::Const(0.0), &ScalarFn::Const(0.0), &time, &Record::Steps(Vec::new()))
        .unwrap();
    let p = LabeledDensity::new(1, sgrid, path.last().p.clone(), 1.0).unwrap();
    let v_path = p.variance_about(0, 10.0);
    let adaptive = solve_adaptive_closure(
        &rho0,
        &LabeledPairDensity::zero(1, sgrid),
        &eta,
        &KernelSpec::Zero,
        &ScalarFn::Const(0.0),
        1.0,
        &time,
        &AdaptiveClosureOptions::default(),
    )
    .unwrap();
    let v_adaptive = adaptive.last().rho.variance_about(0, 10.0);
    let var_ok = [v_vlasov, v_path, v_adaptive].iter().all(|v| (v - expected).abs() <= tol);

    let pass = sim_exact && picard_exact && limit_exact && var_ok;
    let detail = format!(
        "simulate={sim_exact} picard={picard_exact} limit={limit_exact} variance errors {:.2e}/{:.2e}/{:.2e} <= {tol:.2e}",
        (v_vlasov - expected).abs(),
        (v_path - expected).abs(),
        (v_adaptive - expected).abs()
    );
    let elapsed = start.elapsed();
    report(1, "drift-free exactness", pass, elapsed, secs(5), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(5));
}

fn adaptive_kuramoto() -> ModelSpec {
    ModelSpec {
        kernel: KernelSpec::Kuramoto { kappa: 1.0 },
        weight_law: WeightLaw::LinearKuramoto { lambda: 1.0, ell: ScalarFn::Cos(1.0) },
        ..Default::default()
    }
}

/// Sup distance between the simulated and the Picard paths, plus the simulated paths.
fn fixed_point_gap(seed: u64) -> (f64, Vec<StatePath>) {
    let model = adaptive_kuramoto();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let inputs: Arc<[_]> = particle_inputs(&model, &grid, 64, seed).into();
    let w = Arc::new(generate_weights(&GraphKind::ErdosRenyi(0.5), 64, seed).unwrap());
    let ens = simulate(&model, &w, &inputs, &grid).unwrap();
    let dg = empirical_digraph(w, inputs.clone(), model.geometry).unwrap();
    let opts = PicardOptions { tol: 1e-12, ..Default::default() };
    let map = picard_solve(&model, Arc::new(dg), &inputs, &grid, &opts).unwrap();
    let paths = ens.paths();
    let gap = map
        .evaluated_paths()
        .iter()
        .zip(&paths)
        .map(|(a, b)| a.sup_distance(b).unwrap())
        .fold(0.0, f64::max);
    (gap, paths)
}

#[test]
fn criterion_02_fixed_point_equivalence() {
    let start = Instant::now();
    let gaps: Vec<f64> = (1..=3).map(|s| fixed_point_gap(s).0).collect();
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    let pass = worst <= 1e-8;
    let detail = format!("sup errors {gaps:?} <= 1e-8");
    let elapsed = start.elapsed();
    report(2, "fixed-point equivalence", pass, elapsed, secs(30), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(30));
}

const COUPLING: &str = "
kind = couple
n = [64, 128, 256, 512, 1024]
seeds = [1, 2, 3, 4, 5, 6, 7, 8]
model.kernel = kuramoto(1)
picard.m_ref = 32768
";

#[test]
fn criterion_03_coupling_decay() {
    let start = Instant::now();
    let (a, _da) = run_text(&format!("{COUPLING}graph.kind = constant(1)\n"));
    let (b, _db) = run_text(&format!("{COUPLING}graph.kind = graphon(row_cosine)\n"));
    let pass = a.pass() && b.pass();
    let detail = format!("constant(1): {} | row_cosine: {}", summary(&a), summary(&b));
    let elapsed = start.elapsed();
    report(3, "mean-field coupling decay", pass, elapsed, secs(600), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(600));
}

#[test]
fn criterion_04_digraph_convergence() {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for graph in ["erdos_renyi(0.5)", "graphon(cosine)", "graphon(exp_decay)"] {
        let (m, _d) = run_text(&format!(
            "kind = digraph_convergence\nn = [256, 512, 1024, 2048, 4096]\nseeds = [1, 2, 3, 4, 5, 6, 7, 8]\ngraph.kind = {graph}\n"
        ));
        pass &= m.pass();
        details.push(format!("{graph}: {}", summary(&m)));
    }
    let detail = details.join(" | ");
    let elapsed = start.elapsed();
    report(4, "digraph convergence", pass, elapsed, secs(300), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(300));
}

#[test]
fn criterion_05_pde_vs_particles() {
    let start = Instant::now();
    let (m, _d) = run_text(
        "kind = pde_vs_particles\nn = [2048, 4096, 8192]\nseeds = [1, 2]\nmodel.kernel = kuramoto(1)\n\
         model.initial = wrapped_gaussian([3.14159], [0.8])\npde.cells = 512\npde.hist_cells = 64\npde.times = [0.5, 1]\n",
    );
    let pass = m.pass();
    let detail = summary(&m);
    let elapsed = start.elapsed();
    report(5, "PDE vs particles", pass, elapsed, secs(600), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(600));
}

#[test]
fn criterion_06_pathwise_closure_moments() {
    let start = Instant::now();
    let sgrid = StateGrid::torus(64).unwrap();
    let law = InitialLaw::WrappedGaussian { mean: vec![PI], std: vec![0.8] };
    let p0 = LabeledDensity::from_law(&law, 1, sgrid).unwrap();
    let time = TimeGrid::new(1.0, 500).unwrap();
    let closure = |kernel: &KernelSpec, w0: f64, ell: ScalarFn, alpha: ScalarFn| {
        let h0 = PairDensity::product(w0, p0.values(), sgrid).unwrap();
        solve_pathwise_closure(&p0, &h0, kernel, &ell, &alpha, &time, &Record::Steps(Vec::new())).unwrap().last().pair_mass()
    };
    let (m0, c, lambda) = (0.6, 0.7, 1.3);
    let linear = closure(&KernelSpec::Zero, m0, ScalarFn::Const(c), ScalarFn::Const(0.0));
    let linear_err = (linear / (m0 + c) - 1.0).abs();
    let decay = closure(&KernelSpec::Zero, m0, ScalarFn::Const(0.0), ScalarFn::Const(-lambda));
    let decay_err = (decay / (m0 * (-lambda).exp()) - 1.0).abs();

    // Pathwise network φ = ℓ + αw with Kuramoto coupling against N = 4096 particles.
    let kernel = KernelSpec::Kuramoto { kappa: 1.0 };
    let (ell, alpha, w0) = (ScalarFn::Cos(1.0), ScalarFn::Const(-1.0), 1.0);
    let pde_mass = closure(&kernel, w0, ell.clone(), alpha.clone());
    let model = ModelSpec {
        kernel,
        weight_law: WeightLaw::Affine { ell, alpha },
        initial: law.clone(),
        ..Default::default()
    };
    let pgrid = TimeGrid::new(1.0, 200).unwrap();
    let inputs = particle_inputs(&model, &pgrid, 4096, 3);
    let w = generate_weights(&GraphKind::Constant(w0), 4096, 3).unwrap();
    let ens = simulate(&model, &w, &inputs, &pgrid).unwrap();
    let particle_mass = *ens.mean_weight().last().unwrap();
    let gap = (pde_mass - particle_mass).abs();

    let pass = linear_err <= 1e-3 && decay_err <= 1e-3 && gap <= 0.05;
    let detail = format!(
        "linear rel err {linear_err:.1e}, decay rel err {decay_err:.1e}, kuramoto PDE {pde_mass:.5} vs particles {particle_mass:.5} (gap {gap:.4})"
    );
    let elapsed = start.elapsed();
    report(6, "pathwise-closure moments", pass, elapsed, secs(900), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(900));
}

fn duhamel_gap(law: &WeightLaw, steps: usize) -> f64 {
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let path = |f: &dyn Fn(f64) -> f64| StatePath::from_lifted(1, Geometry::torus(), grid.nodes().map(f).collect()).unwrap();
    let x = path(&|t| 1.5 * (2.0 * t).sin() + 0.3);
    let xt = path(&|t| 2.0 - t * t + 0.5 * (5.0 * t).cos());
    let a = weight_flow(law, &x, &xt, 0.4, &grid).unwrap();
    let b = duhamel_weight_flow(law, &x, &xt, 0.4, &grid).unwrap();
    a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_07_duhamel_equivalence() {
    let start = Instant::now();
    let laws = [
        WeightLaw::LinearKuramoto { lambda: 1.0, ell: ScalarFn::Cos(1.0) },
        WeightLaw::LinearKuramoto { lambda: 3.0, ell: ScalarFn::Bump { c: 2.0, s: 0.7 } },
        WeightLaw::LinearKuramoto { lambda: 0.2, ell: ScalarFn::Cos(-0.5) },
    ];
    let mut ratios = Vec::new();
    for law in &laws {
        let gaps: Vec<f64> = [100, 200, 400, 800].iter().map(|&m| duhamel_gap(law, m)).collect();
        ratios.extend(gaps.windows(2).map(|w| w[0] / w[1]));
    }
    let pass = ratios.iter().all(|r| (1.6..=2.4).contains(r));
    let detail = format!("halving ratios {ratios:.3?}");
    let elapsed = start.elapsed();
    report(7, "Duhamel equivalence", pass, elapsed, secs(60), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(60));
}

#[test]
fn criterion_08_labeled_sanov() {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for graph in ["erdos_renyi(0.5)", "erdos_renyi(0.2)", "random_environment(row, [0, 1], [0.3, 0.7])"] {
        let (m, _d) = run_text(&format!(
            "kind = sanov\ngraph.kind = {graph}\nsanov.ns = [50, 100, 200, 400]\ntolerance.moment_order = 0.8\n"
        ));
        pass &= m.pass();
        details.push(format!("{graph}: {}", summary(&m)));
    }
    let detail = details.join(" | ");
    let elapsed = start.elapsed();
    report(8, "labeled Sanov", pass, elapsed, secs(120), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(120));
}

#[test]
fn criterion_09_rate_function_zero() {
    let start = Instant::now();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let opts = PicardOptions::default();
    let m_ref = 2048;
    let coupled = ModelSpec {
        kernel: KernelSpec::Kuramoto { kappa: 1.0 },
        initial: InitialLaw::WrappedGaussian { mean: vec![PI], std: vec![0.8] },
        ..Default::default()
    };
    let control = ModelSpec { kernel: KernelSpec::Zero, ..coupled.clone() };
    let mut pass = true;
    let mut lines = Vec::new();
    for kind in [GraphKind::ErdosRenyi(0.5), GraphKind::Constant(0.7)] {
        let limit = limit_of(&kind).unwrap();
        for label in [0.0, 0.5, 1.0] {
            let r = rate_zero_residual(&coupled, &limit, label, m_ref, &grid, &opts, 17).unwrap();
            let k0 = rate_zero_residual(&control, &limit, label, m_ref, &grid, &opts, 17).unwrap();
            let marginal_ok = match kind {
                GraphKind::ErdosRenyi(_) => r.weight_marginal == vec![(0.0, 0.5), (1.0, 0.5)],
                _ => r.weight_marginal == vec![(0.7, 1.0)],
            };
            pass &= r.passes() && k0.passes() && marginal_ok;
            lines.push(format!(
                "{kind:?} xi={label}: residual {:.1e} (K=0 {:.1e}) marginal W1 {:.3} (K=0 {:.3}) <= {:.3}, weights {:?}",
                r.residual.upper,
                k0.residual.upper,
                r.marginal_consistency.unwrap_or(0.0),
                k0.marginal_consistency.unwrap_or(0.0),
                r.threshold,
                r.weight_marginal
            ));
        }
    }
    let detail = lines.join("; ");
    let elapsed = start.elapsed();
    report(9, "rate-function zero", pass, elapsed, secs(600), &detail);
    assert!(pass, "{detail}");
    assert!(elapsed <= secs(600));
}

const DETERMINISM: &[&str] = &[
    "kind = simulate\nn = [8, 200]\nseeds = [1, 2]\nmodel.kernel = kuramoto(1)\ngraph.kind = erdos_renyi(0.5)\n\
     model.weights = linear_kuramoto(1, cos(1))\n",
    "kind = couple\nn = [32, 64, 128]\nseeds = [1, 2, 3]\nmodel.kernel = kuramoto(1)\ngraph.kind = graphon(row_cosine)\npicard.m_ref = 1024\n",
    "kind = digraph_convergence\nn = [64, 128, 256]\nseeds = [1, 2, 3]\ngraph.kind = erdos_renyi(0.5)\n",
    "kind = pde_vs_particles\nn = [256, 512]\nseeds = [1, 2]\nmodel.kernel = kuramoto(1)\npde.cells = 128\n",
    "kind = pde\npde.system = pathwise\nmodel.kernel = kuramoto(1)\npde.cells = 32\npde.ell = cos(1)\npde.alpha = -1\ngrid.steps = 200\n",
    "kind = sanov\ngraph.kind = erdos_renyi(0.5)\n",
    "kind = rate_zero\nseeds = [1, 2]\nmodel.kernel = kuramoto(1)\ngraph.kind = erdos_renyi(0.5)\npicard.m_ref = 256\n",
];

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for text in DETERMINISM {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut c = parse_config(text).unwrap();
        c.out = a.path().to_path_buf();
        let ma = run_in_pool(&c, 1).unwrap();
        c.out = b.path().to_path_buf();
        let mb = run_in_pool(&c, 8).unwrap();
        if ma.files != mb.files {
            mismatches.push(format!("{}: file lists differ", ma.kind.name()));
        }
        for f in ma.files.iter().filter(|f| f.path.ends_with(".csv")) {
            compared += 1;
            let same = std::fs::read(a.path().join(&f.path)).unwrap() == std::fs::read(b.path().join(&f.path)).unwrap();
            if !same {
                mismatches.push(format!("{}/{}", ma.kind.name(), f.path));
            }
        }
    }
    // The fixed-point check runs outside the harness.
    let in_pool = |t: usize| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(|| fixed_point_gap(2));
    let (g1, g8) = (in_pool(1), in_pool(8));
    if g1.0.to_bits() != g8.0.to_bits() || g1.1 != g8.1 {
        mismatches.push("fixed-point paths".into());
    }
    let pass = mismatches.is_empty();
    let detail = format!("{compared} CSV files compared at 1 and 8 threads; mismatches {mismatches:?}");
    report(10, "determinism", pass, start.elapsed(), secs(600), &detail);
    assert!(pass, "{detail}");
}
