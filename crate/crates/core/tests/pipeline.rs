use ndarray::{array, Array1, ArrayView1};

use plrecon::analysis::{classify_intersection, conjecture_report, count_regions, dp_distance, Bending};
use plrecon::fit::{
    fit_second_order, fit_weights, gershgorin_check, hessian, overlapping_pairs, select_radii, solve_normal_equations,
    FitConfig, HessianEstimator, RadiusMode, Regularization,
};
use plrecon::linalg::symmetric_eigenvalues;
use plrecon::oracle::{FnBox, Oracle, ProbeParams};
use plrecon::patches::{dedupe_hyperplanes, LocalPatch, PatchModel};
use plrecon::relunet::{AffineLayer, Architecture, NeuronId, ReluNetwork};
use plrecon::{Error, Network32, Probes};

fn seeded_net(seed: u64) -> ReluNetwork<f64> {
    ReluNetwork::random(&"2,3,1".parse().unwrap(), seed, 1.0).unwrap()
}

fn patches_for(net: &ReluNetwork<f64>, n: usize, mode: RadiusMode<f64>) -> (Probes, Vec<LocalPatch<f64>>) {
    let oracle = Oracle::new(net, 1.0).unwrap();
    let probes = oracle.sample_points(n, 3, &ProbeParams::default()).unwrap();
    let scales = vec![1.0; n];
    let radii = select_radii(&probes, &scales, 1.0, mode).unwrap();
    let patches = LocalPatch::from_probes(&probes, &scales, &radii).unwrap();
    (probes, patches)
}

#[test]
fn gershgorin_radii_pass_the_check_they_were_chosen_by() {
    let net = seeded_net(11);
    let mode = RadiusMode::Gershgorin { shrink: 0.8, nsamples: 5000, seed: 4 };
    let (_, patches) = patches_for(&net, 15, mode);
    let h = hessian(&patches, 1.0, HessianEstimator::MonteCarlo { nsamples: 5000, seed: 4 }).unwrap();
    assert!(gershgorin_check(h.matrix.view()).ok);
    assert!(patches.iter().all(|p| p.center.dot(&p.center).sqrt() + p.radius <= 1.0 + 1e-12));
}

#[test]
fn monte_carlo_hessian_is_a_gram_matrix() {
    let net = seeded_net(5);
    let (probes, _) = patches_for(&net, 10, RadiusMode::Disjoint);
    // deliberately overlapping supports
    let patches = LocalPatch::from_probes(&probes, &[1.0; 10], &[0.6; 10]).unwrap();
    let h = hessian(&patches, 1.0, HessianEstimator::MonteCarlo { nsamples: 20_000, seed: 8 }).unwrap();
    let bound = h.stderr.iter().fold(0.0f64, |m, &v| m.max(v));
    assert!(symmetric_eigenvalues(h.matrix.view())[0] >= -3.0 * bound);
}

#[test]
fn closed_form_and_monte_carlo_hessians_agree_on_disjoint_patches() {
    let net = seeded_net(2);
    let (_, patches) = patches_for(&net, 8, RadiusMode::Disjoint);
    let exact = hessian(&patches, 1.0, HessianEstimator::ClosedFormDisjoint).unwrap();
    let mc = hessian(&patches, 1.0, HessianEstimator::MonteCarlo { nsamples: 200_000, seed: 1 }).unwrap();
    for i in 0..patches.len() {
        let (e, m, s) = (exact.matrix[[i, i]], mc.matrix[[i, i]], mc.stderr[[i, i]]);
        assert!((e - m).abs() <= 4.0 * s + 1e-12, "diag {i}: {e} vs {m} ± {s}");
    }
}

#[test]
fn descent_agrees_with_normal_equations_on_gershgorin_radii() {
    let net = seeded_net(21);
    let mode = RadiusMode::Gershgorin { shrink: 0.9, nsamples: 10_000, seed: 6 };
    let (_, patches) = patches_for(&net, 12, mode);
    let oracle = Oracle::new(&net, 1.0).unwrap();
    let cfg = FitConfig { mc_samples: 10_000, seed: 6, max_iters: 2_000_000, ..FitConfig::default() };
    let report = fit_weights(&patches, &oracle, &cfg).unwrap();
    assert!(report.converged);
    let exact = solve_normal_equations(&patches, &oracle, 10_000, 6, 0.0).unwrap();
    for (w, e) in report.weights.iter().zip(exact.iter()) {
        assert!((w - e).abs() <= 1e-6, "{w} vs {e}");
    }
}

#[test]
fn second_order_fit_never_does_worse() {
    let net = seeded_net(7);
    let (_, patches) = patches_for(&net, 10, RadiusMode::Gershgorin { shrink: 0.9, nsamples: 10_000, seed: 2 });
    let oracle = Oracle::new(&net, 1.0).unwrap();
    let cfg = FitConfig { mc_samples: 10_000, seed: 2, max_iters: 3_000_000, ..FitConfig::default() };
    let first = fit_weights(&patches, &oracle, &cfg).unwrap();
    let pairs = overlapping_pairs(&patches);
    let second = fit_second_order(&patches, &oracle, &cfg, &pairs).unwrap();
    assert!(second.converged);
    assert!(second.final_objective <= first.final_objective);
    assert_eq!(second.pair_weights.unwrap().len(), pairs.len());
}

#[test]
fn l2_shrinks_the_weight_norm() {
    let net = seeded_net(4);
    let (_, patches) = patches_for(&net, 10, RadiusMode::Disjoint);
    let oracle = Oracle::new(&net, 1.0).unwrap();
    let plain = fit_weights(&patches, &oracle, &FitConfig { mc_samples: 5000, ..FitConfig::default() }).unwrap();
    let cfg = FitConfig { mc_samples: 5000, reg: Regularization::L2(0.05), ..FitConfig::default() };
    let ridge = fit_weights(&patches, &oracle, &cfg).unwrap();
    let sq = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>();
    assert!(sq(&ridge.weights) < sq(&plain.weights));
    assert!(ridge.penalty > 0.0);
}

fn bending_example() -> ReluNetwork<f64> {
    let arch = Architecture::new(vec![2, 2, 1, 1]).unwrap();
    let l1 = AffineLayer::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0]).unwrap();
    let l2 = AffineLayer::new(array![[1.0, 1.0]], array![-1.0]).unwrap();
    let l3 = AffineLayer::new(array![[1.0]], array![0.0]).unwrap();
    ReluNetwork::new(arch, vec![l1, l2, l3], false).unwrap()
}

#[test]
fn deeper_boundary_bends_where_it_meets_a_first_layer_boundary() {
    let net = bending_example();
    let x = array![0.0, 1.0];
    let kind = classify_intersection(&net, NeuronId::new(0, 0), NeuronId::new(1, 0), x.view(), 1e-3).unwrap();
    assert_eq!(kind, Bending::Z2Bends);
    let swapped = classify_intersection(&net, NeuronId::new(1, 0), NeuronId::new(0, 0), x.view(), 1e-3).unwrap();
    assert_eq!(swapped, Bending::ZBends);
}

#[test]
fn classification_rejects_unknown_neurons() {
    let net = bending_example();
    let r = classify_intersection(&net, NeuronId::new(0, 0), NeuronId::new(1, 3), array![0.0, 1.0].view(), 1e-3);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn deduplicated_tangent_planes_count_linear_pieces() {
    let net = seeded_net(7);
    let oracle = Oracle::new(&net, 1.0).unwrap();
    let probes = oracle.sample_points(200, 0, &ProbeParams::default()).unwrap();
    let clusters = dedupe_hyperplanes(&probes, 1e-4, 1e-4).unwrap();
    assert_eq!(clusters.count, count_regions(&net, 1.0, 50_000, 0).unwrap());
}

#[test]
fn report_tracks_every_grid_point() {
    let net = seeded_net(7);
    let (_, patches) = patches_for(&net, 10, RadiusMode::Disjoint);
    let oracle = Oracle::new(&net, 1.0).unwrap();
    let cfg = FitConfig { mc_samples: 4000, ..FitConfig::default() };
    let fit = fit_weights(&patches, &oracle, &cfg).unwrap();
    let grid = [1e-3, 1e-2, 1e-1];
    let report = conjecture_report(&fit, &net, 1.0, 5000, 0, &grid, |lambda| {
        fit_weights(&patches, &oracle, &FitConfig { reg: Regularization::L1(lambda), ..cfg })
    })
    .unwrap();
    assert_eq!(report.lambda_grid.len(), 3);
    assert_eq!(report.first_layer_width, 3);
    assert_eq!(report.patch_count, 10);
    for row in &report.lambda_grid {
        assert_eq!(row.equals_first_layer, row.nonzero_weights == 3);
    }
}

#[test]
fn single_precision_pipeline() {
    let net: Network32 = ReluNetwork::random(&"2,4,1".parse().unwrap(), 1, 1.0f32).unwrap();
    let oracle = Oracle::new(&net, 1.0f32).unwrap();
    let params = ProbeParams { h: 1e-2f32, tol: 1e-2, ndirs: None };
    let probes = oracle.sample_points(6, 0, &params).unwrap();
    let scales = vec![1.0f32; 6];
    let radii = select_radii(&probes, &scales, 1.0, RadiusMode::Disjoint).unwrap();
    let patches = LocalPatch::from_probes(&probes, &scales, &radii).unwrap();
    let cfg = FitConfig { mc_samples: 2000, grad_tol: 1e-5f32, ..FitConfig::default() };
    let report = fit_weights(&patches, &oracle, &cfg).unwrap();
    let model = report.model(patches).unwrap();
    let d = dp_distance(&net, &model, 1.0, 2.0, 2000, 0).unwrap();
    let zero = PatchModel::new(model.patches.clone(), vec![0.0; 6]).unwrap();
    let d0 = dp_distance(&net, &zero, 1.0, 2.0, 2000, 0).unwrap();
    assert!(d.value <= d0.value);
}

#[test]
fn fitting_checks_dimensions() {
    let f = FnBox::new(3, |x: ArrayView1<f64>| x.sum());
    let oracle = Oracle::new(&f, 1.0).unwrap();
    let patch = LocalPatch::new(Array1::zeros(2), Array1::ones(2), 0.0, 1.0, 0.5).unwrap();
    let r = fit_weights(&[patch], &oracle, &FitConfig::default());
    assert!(matches!(r, Err(Error::DimensionMismatch { expected: 3, got: 2 })));
}
