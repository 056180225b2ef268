use ndarray::{Array1, Array2, ArrayView1};
use proptest::prelude::*;

use plrecon::analysis::{count_regions, dp_distance};
use plrecon::fit::{
    fit_weights, gershgorin_check, select_radii, Feature, FitConfig, QuadraticProblem, RadiusMode, Regularization, SampleSet,
};
use plrecon::geometry::{ball_product_integral, intersection, AffineFn, Ball, Hyperplane};
use plrecon::linalg::symmetric_eigenvalues;
use plrecon::oracle::{FnBox, Oracle, ProbeParams};
use plrecon::patches::{idw_weights, LocalPatch, PatchModel};
use plrecon::relunet::{Architecture, ReluNetwork};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    (1usize..4, prop::collection::vec(1usize..5, 1..3))
        .prop_map(|(n0, hidden)| {
            let mut w = vec![n0];
            w.extend(hidden);
            w.push(1);
            Architecture::new(w).unwrap()
        })
}

fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(lo..hi, n).prop_map(Array1::from)
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn networks_are_affine_within_a_region(arch in arch_strategy(), seed in 0u64..1000, raw in prop::collection::vec(-1.0f64..1.0, 6), t in 1e-4f64..1e-2) {
        let net = ReluNetwork::<f64>::random(&arch, seed, 1.0).unwrap();
        let n = arch.input_dim();
        let x = Array1::from(raw[..n].to_vec());
        let d = Array1::from(raw[3..3 + n].to_vec());
        let (xp, xm) = (&x + &(&d * t), &x - &(&d * t));
        let pat = net.activation_pattern(x.view()).unwrap();
        prop_assume!(pat == net.activation_pattern(xp.view()).unwrap());
        prop_assume!(pat == net.activation_pattern(xm.view()).unwrap());
        let (f0, fp, fm) = (net.eval(x.view()).unwrap(), net.eval(xp.view()).unwrap(), net.eval(xm.view()).unwrap());
        let scale = f0.abs().max(fp.abs()).max(fm.abs()).max(1.0);
        prop_assert!((fp + fm - 2.0 * f0).abs() <= 1e-12 * scale);
    }

    #[test]
    fn analytic_gradient_matches_central_differences(arch in arch_strategy(), seed in 0u64..1000, raw in prop::collection::vec(-0.9f64..0.9, 3)) {
        let net = ReluNetwork::<f64>::random(&arch, seed, 1.0).unwrap();
        let n = arch.input_dim();
        let x = Array1::from(raw[..n].to_vec());
        let h = 1e-6;
        let pat = net.activation_pattern(x.view()).unwrap();
        for i in 0..n {
            for s in [-h, h] {
                let mut y = x.clone();
                y[i] += s;
                prop_assume!(net.activation_pattern(y.view()).unwrap() == pat);
            }
        }
        let oracle = Oracle::new(&net, 2.0).unwrap();
        let fd = oracle.fd_gradient(x.view(), h).unwrap();
        let g = net.analytic_gradient(x.view()).unwrap();
        let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in fd.iter().zip(g.iter()) {
            prop_assert!((a - b).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn network_json_round_trips(arch in arch_strategy(), seed in 0u64..1000, fa in any::<bool>()) {
        let net = ReluNetwork::<f64>::random(&arch, seed, 2.5).unwrap().with_final_activation(fa);
        prop_assert_eq!(ReluNetwork::<f64>::from_json(&net.to_json().unwrap()).unwrap(), net);
    }

    #[test]
    fn product_integral_is_symmetric_and_bilinear(
        n in 1usize..6,
        raw in prop::collection::vec(-2.0f64..2.0, 30),
        r in 0.1f64..2.0,
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let take = |k: usize| Array1::from(raw[k * 5..k * 5 + n].to_vec());
        let a = AffineFn::new(take(0), raw[25]);
        let b = AffineFn::new(take(1), raw[26]);
        let c = AffineFn::new(take(2), raw[27]);
        let ball = Ball::new(take(3), r).unwrap();
        let ab = ball_product_integral(&a, &b, &ball);
        let ba = ball_product_integral(&b, &a, &ball);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        let mix = AffineFn::new(&a.slope * alpha + &c.slope * beta, alpha * a.intercept + beta * c.intercept);
        let lhs = ball_product_integral(&mix, &b, &ball);
        let rhs = alpha * ab + beta * ball_product_integral(&c, &b, &ball);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1.0));
        prop_assert!(ball_product_integral(&a, &a, &ball) >= 0.0);
    }

    #[test]
    fn least_norm_point_is_orthogonal_to_the_intersection(n in 2usize..7, raw in prop::collection::vec(-1.0f64..1.0, 14)) {
        let a1 = Array1::from(raw[..n].to_vec());
        let a2 = Array1::from(raw[7..7 + n].to_vec());
        let (Ok(h1), Ok(h2)) = (Hyperplane::new(a1, raw[6]), Hyperplane::new(a2, raw[13])) else {
            return Err(TestCaseError::reject("zero normal"));
        };
        prop_assume!(h1.normal().dot(&h2.normal()).abs() < 0.99);
        let s = intersection(&h1, &h2).unwrap();
        prop_assert!(h1.residual(s.base.view()).abs() <= 1e-10);
        prop_assert!(h2.residual(s.base.view()).abs() <= 1e-10);
        for k in 0..s.dim() {
            prop_assert!(s.basis.column(k).dot(&s.base).abs() <= 1e-9 * s.basis.column(k).dot(&s.basis.column(k)).sqrt().max(1.0));
        }
    }

    #[test]
    fn model_is_linear_in_weights(
        raw in prop::collection::vec(-1.0f64..1.0, 12),
        w1 in prop::collection::vec(-2.0f64..2.0, 3),
        w2 in prop::collection::vec(-2.0f64..2.0, 3),
        t in -2.0f64..2.0,
        x in vec_in(2, -1.0, 1.0),
    ) {
        let patches: Vec<LocalPatch<f64>> = (0..3)
            .map(|i| {
                let v = Array1::from(raw[i * 2..i * 2 + 2].to_vec());
                let g = Array1::from(raw[6 + i * 2..8 + i * 2].to_vec());
                LocalPatch::new(v, g, raw[i], 1.0, 0.8).unwrap()
            })
            .collect();
        let eval = |w: Vec<f64>| PatchModel::new(patches.clone(), w).unwrap().eval(x.view());
        let combo: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + t * b).collect();
        let lhs = eval(combo);
        let rhs = eval(w1.clone()) + t * eval(w2.clone());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0) * 10.0);
    }

    #[test]
    fn idw_weights_form_a_partition_of_unity(
        centers in prop::collection::vec(vec_in(3, -1.0, 1.0), 1..6),
        x in vec_in(3, -1.0, 1.0),
        p in 0.5f64..4.0,
    ) {
        let views: Vec<ArrayView1<f64>> = centers.iter().map(|c| c.view()).collect();
        let w = idw_weights(x.view(), &views, p);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gershgorin_pass_implies_psd(k in 1usize..7, raw in prop::collection::vec(-1.0f64..1.0, 49), boost in 0.0f64..8.0) {
        let mut h = Array2::from_shape_fn((k, k), |(i, j)| raw[i.min(j) * 7 + i.max(j)]);
        for i in 0..k {
            h[[i, i]] += boost;
        }
        let g = gershgorin_check(h.view());
        if g.ok {
            prop_assert!(symmetric_eigenvalues(h.view())[0] >= -1e-12);
        }
        for i in 0..k {
            let off: f64 = (0..k).filter(|&j| j != i).map(|j| h[[i, j]].abs()).sum();
            prop_assert!((g.margins[i] - (h[[i, i]] - off)).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn dp_distance_is_a_pseudometric(
        s1 in 0u64..100, s2 in 0u64..100, s3 in 0u64..100,
        p in 1.0f64..4.0,
        seed in 0u64..1000,
    ) {
        let arch = Architecture::new(vec![2, 3, 1]).unwrap();
        let f = ReluNetwork::<f64>::random(&arch, s1, 1.0).unwrap();
        let g = ReluNetwork::<f64>::random(&arch, s2, 1.0).unwrap();
        let h = ReluNetwork::<f64>::random(&arch, s3, 1.0).unwrap();
        let d = |a: &ReluNetwork<f64>, b: &ReluNetwork<f64>| dp_distance(a, b, 1.0, p, 2000, seed).unwrap().value;
        let (fg, gf) = (d(&f, &g), d(&g, &f));
        prop_assert!((fg - gf).abs() <= 1e-12 * fg.max(1.0));
        // on a shared sample this is Minkowski's inequality
        prop_assert!(d(&f, &h) <= fg + d(&g, &h) + 1e-12);
        prop_assert_eq!(d(&f, &f), 0.0);
    }

    #[test]
    fn region_count_bounded_by_patterns(arch in arch_strategy(), seed in 0u64..1000) {
        let net = ReluNetwork::<f64>::random(&arch, seed, 1.0).unwrap();
        let hidden = arch.hidden_neurons() as u32;
        let count = count_regions(&net, 1.0, 3000, seed).unwrap();
        prop_assert!(count >= 1);
        prop_assert!(count as u64 <= 1u64 << hidden);
    }

    #[test]
    fn objective_is_convex_on_a_fixed_sample(
        seed in 0u64..1000,
        w1 in prop::collection::vec(-2.0f64..2.0, 6),
        w2 in prop::collection::vec(-2.0f64..2.0, 6),
        t in 0.0f64..1.0,
    ) {
        let arch = Architecture::new(vec![2, 3, 1]).unwrap();
        let net = ReluNetwork::<f64>::random(&arch, seed, 1.0).unwrap();
        let oracle = Oracle::new(&net, 1.0).unwrap();
        let probes = oracle.sample_points(6, seed, &ProbeParams::default()).unwrap();
        let radii: Vec<f64> = probes.points.iter().map(|_| 0.4).collect();
        let patches = LocalPatch::from_probes(&probes, &[1.0; 6], &radii).unwrap();
        let samples = SampleSet::draw(&oracle, 500, seed).unwrap();
        let problem = QuadraticProblem::new(&patches, (0..6).map(Feature::Patch).collect(), &samples);
        let (a, b) = (Array1::from(w1), Array1::from(w2));
        let mid = &a * t + &b * (1.0 - t);
        let lhs = problem.objective(mid.view());
        let rhs = t * problem.objective(a.view()) + (1.0 - t) * problem.objective(b.view());
        prop_assert!(lhs <= rhs + 1e-12 * rhs.max(1.0));
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn l1_sparsity_is_monotone_in_lambda(seed in 0u64..1000) {
        let arch = Architecture::new(vec![2, 3, 1]).unwrap();
        let net = ReluNetwork::<f64>::random(&arch, seed, 1.0).unwrap();
        let oracle = Oracle::new(&net, 1.0).unwrap();
        let probes = oracle.sample_points(12, seed, &ProbeParams::default()).unwrap();
        let scales = vec![1.0; 12];
        let radii = select_radii(&probes, &scales, 1.0, RadiusMode::Disjoint).unwrap();
        let patches = LocalPatch::from_probes(&probes, &scales, &radii).unwrap();
        let mut last = usize::MAX;
        for lambda in [0.0, 1e-4, 1e-3, 1e-2, 3e-2, 1e-1, 1.0] {
            let cfg = FitConfig { reg: Regularization::L1(lambda), mc_samples: 4000, seed, ..FitConfig::default() };
            let count = fit_weights(&patches, &oracle, &cfg).unwrap().nonzero_count(1e-8);
            prop_assert!(count <= last, "lambda {lambda}: {count} > {last}");
            last = count;
        }
    }
}

#[test]
fn affine_target_is_reproduced_by_one_covering_patch() {
    let f = FnBox::new(3, |x: ArrayView1<f64>| 0.5 * x[0] - 2.0 * x[1] + x[2] + 0.75);
    let oracle = Oracle::new(&f, 1.0).unwrap();
    let probes = oracle.sample_points(1, 9, &ProbeParams::default()).unwrap();
    // affine target: the probe's intercept is the value at the origin
    let patch = LocalPatch::new(Array1::zeros(3), probes.gradients[0].clone(), probes.intercept(0), 1.0, 1.0).unwrap();
    let report = fit_weights(std::slice::from_ref(&patch), &oracle, &FitConfig::default()).unwrap();
    assert!((report.weights[0] - 1.0).abs() < 1e-8);
    let model = report.model(vec![patch]).unwrap();
    assert!(dp_distance(&f, &model, 1.0, 2.0, 5000, 2).unwrap().value < 1e-6);
}
