use netfield::dynamics::{duhamel_weight_flow, simulate, weight_flow};
use netfield::graphs::{generate_weights, GraphKind, Graphon};
use netfield::harness::{emit_config, parse_config, ExperimentConfig, ExperimentKind};
use netfield::ldp::{all_types, marginal_decomposition, sanov_gap, TypeVector};
use netfield::metrics::{bl_bracket, relative_entropy, w1_1d, AtomicMeasure, ProductSpace};
use netfield::model::{Geometry, InitialLaw, KernelSpec, ModelSpec, ScalarFn, StatePath, TimeGrid, WeightLaw};
use netfield::noise::particle_inputs;
use netfield::pde::{solve_vlasov_digraph, CouplingMatrix, LabeledDensity, StateGrid, VlasovOptions};
use proptest::prelude::*;
use std::f64::consts::TAU;

fn sample(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, len)
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_is_a_metric(a in sample(1..40), b in sample(1..40), c in sample(1..40)) {
        let ab = w1_1d(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - w1_1d(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(w1_1d(&a, &a).unwrap() == 0.0);
        let ac = w1_1d(&a, &c).unwrap();
        let cb = w1_1d(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn w1_of_a_shift_is_the_shift(a in sample(1..40), s in -3.0..3.0f64) {
        let b: Vec<f64> = a.iter().map(|x| x + s).collect();
        prop_assert!((w1_1d(&a, &b).unwrap() - s.abs()).abs() <= 1e-9);
    }

    #[test]
    fn bl_bracket_is_ordered_and_bounded(a in sample(1..30), b in sample(1..30)) {
        let mu = AtomicMeasure::uniform(ProductSpace::line(), a.clone()).unwrap();
        let nu = AtomicMeasure::uniform(ProductSpace::line(), b.clone()).unwrap();
        let br = bl_bracket(&mu, &nu).unwrap();
        prop_assert!(0.0 <= br.lower && br.lower <= br.upper + 1e-12 && br.upper <= 2.0);
        // BL is dominated by W1 on the line.
        prop_assert!(br.lower <= w1_1d(&a, &b).unwrap() + 1e-12);
        let same = bl_bracket(&mu, &mu).unwrap();
        prop_assert!(same.lower == 0.0 && same.upper == 0.0);
    }

    #[test]
    fn relative_entropy_is_non_negative(p in simplex(5), q in simplex(5)) {
        prop_assert!(relative_entropy(&p, &q).unwrap() >= 0.0);
        prop_assert!(relative_entropy(&p, &p).unwrap().abs() <= 1e-15);
    }

    #[test]
    fn chain_rule_for_relative_entropy(nu in simplex(6), mu in simplex(6)) {
        let (lhs, rhs) = marginal_decomposition(&nu, &mu, 2, 3).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn sanov_gap_within_bound(q in simplex(3), n in 1u64..60) {
        for t in all_types(n, 3) {
            let row = sanov_gap(&q, &t).unwrap();
            prop_assert!(row.gap.is_finite() && row.passes(), "{row:?}");
        }
    }

    #[test]
    fn wrapping_is_idempotent(x in -100.0..100.0f64, p in 0.5..20.0f64) {
        let g = Geometry::Periodic(p);
        let w = g.wrap(x);
        prop_assert!((0.0..p).contains(&w));
        prop_assert_eq!(g.wrap(w), w);
        let d = g.displacement(0.0, x);
        prop_assert!(d.abs() <= p / 2.0 + 1e-12);
    }

    #[test]
    fn graph_weights_are_reproducible_and_bounded(n in 1usize..40, seed in any::<u64>(), p in 0.0..1.0f64) {
        for kind in [GraphKind::ErdosRenyi(p), GraphKind::Graphon(Graphon::Cosine), GraphKind::Graphon(Graphon::Min)] {
            let a = generate_weights(&kind, n, seed).unwrap();
            let b = generate_weights(&kind, n, seed).unwrap();
            prop_assert_eq!(a.to_dense(), b.to_dense());
            // Separable storage reconstructs the cosine graphon up to rounding.
            prop_assert!(a.to_dense().iter().all(|w| (-1e-12..=1.0 + 1e-12).contains(w)));
        }
    }

    #[test]
    fn config_round_trip(
        kappa in -3.0..3.0f64,
        noise in 0.0..2.0f64,
        ns in prop::collection::btree_set(1usize..5000, 1..5),
        seeds in prop::collection::vec(any::<u32>(), 1..4),
        p in 0.0..1.0f64,
        kind in 0usize..7,
    ) {
        let mut c = ExperimentConfig::new(ExperimentKind::ALL[kind]);
        c.model.kernel = KernelSpec::Kuramoto { kappa };
        c.model.noise = noise;
        c.graph = GraphKind::ErdosRenyi(p);
        c.ns = ns.into_iter().collect();
        c.seeds = seeds.into_iter().map(u64::from).collect();
        c.pde.times = vec![p, 1.0];
        prop_assert_eq!(parse_config(&emit_config(&c)).unwrap(), c);
    }

    #[test]
    fn vlasov_conserves_mass_and_positivity(kappa in -2.0..2.0f64, mean in 0.0..TAU, std in 0.3..1.5f64) {
        let grid = StateGrid::torus(64).unwrap();
        let law = InitialLaw::WrappedGaussian { mean: vec![mean], std: vec![std] };
        let rho0 = LabeledDensity::from_law(&law, 2, grid).unwrap();
        let eta = CouplingMatrix::constant(2, 1.0).unwrap();
        let time = TimeGrid::new(0.2, 100).unwrap();
        let traj = solve_vlasov_digraph(&rho0, &eta, &KernelSpec::Kuramoto { kappa }, &time, &VlasovOptions::default()).unwrap();
        let last = traj.last();
        for l in 0..2 {
            prop_assert!((last.mass(l) - 1.0).abs() <= 1e-10);
        }
        prop_assert!(last.min_value() >= -1e-12);
    }

    #[test]
    fn duhamel_and_euler_agree_to_first_order(lambda in 0.1..3.0f64, c in -2.0..2.0f64, w0 in -1.0..1.0f64) {
        let law = WeightLaw::LinearKuramoto { lambda, ell: ScalarFn::Cos(c) };
        let diff = |m: usize| {
            let grid = TimeGrid::new(1.0, m).unwrap();
            let path = |f: &dyn Fn(f64) -> f64| {
                StatePath::from_lifted(1, Geometry::torus(), grid.nodes().map(f).collect()).unwrap()
            };
            let x = path(&|t| 2.0 * (3.0 * t).sin());
            let xt = path(&|t| t * t);
            let a = weight_flow(&law, &x, &xt, w0, &grid).unwrap();
            let b = duhamel_weight_flow(&law, &x, &xt, w0, &grid).unwrap();
            a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
        };
        let (d1, d2) = (diff(400), diff(800));
        prop_assert!(d1 <= 10.0 * (lambda + c.abs() * 10.0) / 400.0);
        prop_assert!(d2 < d1 || d1 < 1e-12);
    }

    #[test]
    fn zero_kernel_paths_are_the_driving_term(n in 1usize..12, seed in any::<u64>(), noise in 0.0..2.0f64) {
        let model = ModelSpec { kernel: KernelSpec::Zero, noise, ..Default::default() };
        let grid = TimeGrid::new(0.5, 20).unwrap();
        let inputs = particle_inputs(&model, &grid, n, seed);
        let w = generate_weights(&GraphKind::ErdosRenyi(0.5), n, seed).unwrap();
        let ens = simulate(&model, &w, &inputs, &grid).unwrap();
        for (i, inp) in inputs.iter().enumerate() {
            prop_assert_eq!(ens.path(i), inp.driving_path(noise, model.geometry).unwrap());
        }
    }
}

#[test]
fn type_vectors_enumerate_the_simplex() {
    // C(n + a − 1, a − 1) types.
    assert_eq!(all_types(10, 3).len(), 66);
    assert!(all_types(7, 2).iter().all(|t: &TypeVector| t.n() == 7));
}
