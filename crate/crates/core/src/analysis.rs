//! Reconstruction diagnostics: `d_p` distances, empirical region counts,
//! boundary bending, and the sparsity-versus-architecture comparison.

use std::collections::HashSet;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{domain_samples, FitReport};
use crate::geometry::{ball_volume, mean_and_sem, norm, unit_direction, rng_from_seed};
use crate::oracle::BlackBox;
use crate::relunet::{NeuronId, ReluNetwork};
use crate::scalar::Scalar;

/// `d_p(f, g) = (∫_{B_T(0)} |f - g|^p)^{1/p}` with a delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate<T> {
    pub value: T,
    pub stderr: T,
    pub p: T,
    pub nsamples: usize,
    pub seed: u64,
}

pub fn dp_distance<T: Scalar>(
    f: &impl BlackBox<T>,
    g: &impl BlackBox<T>,
    radius: T,
    p: T,
    nsamples: usize,
    seed: u64,
) -> Result<DistanceEstimate<T>> {
    if !(p >= T::one()) {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    if f.input_dim() != g.input_dim() {
        return Err(Error::DimensionMismatch { expected: f.input_dim(), got: g.input_dim() });
    }
    if nsamples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let dim = f.input_dim();
    let values: Vec<T> = domain_samples(dim, radius, nsamples, seed)
        .iter()
        .map(|x| (f.value(x.view()) - g.value(x.view())).abs().powf(p))
        .collect();
    let (mean, sem) = mean_and_sem(&values);
    let vol = ball_volume(dim, radius);
    let integral = vol * mean;
    let value = integral.powf(p.recip());
    let stderr = if integral > T::zero() { value / integral / p * vol * sem } else { T::zero() };
    Ok(DistanceEstimate { value, stderr, p, nsamples, seed })
}

/// Distinct activation patterns among uniform samples of `B_T(0)`; a lower
/// bound on the number of linear regions meeting the domain.
pub fn count_regions<T: Scalar>(net: &ReluNetwork<T>, radius: T, nsamples: usize, seed: u64) -> Result<usize> {
    let mut seen = HashSet::new();
    for x in domain_samples(net.input_dim(), radius, nsamples, seed) {
        seen.insert(net.activation_pattern(x.view())?);
    }
    Ok(seen.len())
}

/// Which of two crossing boundaries changes direction at the crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bending {
    /// The first neuron's boundary bends: it sits deeper than the second.
    ZBends,
    /// The second neuron's boundary bends.
    Z2Bends,
    /// Neither bends: both neurons behave like the same layer.
    Neither,
    /// Both bend; not expected for a generic crossing.
    Both,
}

/// Normal angle above which a traced boundary counts as bent.
pub const BEND_ANGLE_TOL: f64 = 1e-3;
/// `x*` must lie this close to both zero sets.
pub const ON_BOUNDARY_TOL: f64 = 1e-6;
const BISECTION_TOL: f64 = 1e-10;

/// Pre-activation gradient at `x`, or at a slightly shifted point when an
/// earlier neuron is exactly on its boundary at `x`.
fn gradient_near<T: Scalar>(net: &ReluNetwork<T>, x: ArrayView1<T>, neuron: NeuronId, seed: u64) -> Result<Array1<T>> {
    match net.preactivation_gradient(x, neuron) {
        Err(Error::OnBoundary { .. }) => {}
        other => return other,
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..16 {
        let u: Array1<T> = unit_direction(&mut rng, x.len());
        let y = &x + &(u * T::lit(1e-9));
        if let Ok(g) = net.preactivation_gradient(y.view(), neuron) {
            return Ok(g);
        }
    }
    Err(Error::Tracing(format!("no smooth point near x for neuron {neuron:?}")))
}

fn unit<T: Scalar>(v: Array1<T>) -> Result<Array1<T>> {
    let n = norm(v.view());
    if !(n > T::zero()) {
        return Err(Error::Tracing("zero pre-activation gradient".into()));
    }
    Ok(v / n)
}

/// Root of `z_a` on the segment `y + t d`, `t ∈ [-span, span]`, by bisection.
fn bisect_onto<T: Scalar>(net: &ReluNetwork<T>, a: NeuronId, y: &Array1<T>, d: &Array1<T>, span: T) -> Result<Array1<T>> {
    let at = |t: T| -> Result<(Array1<T>, T)> {
        let p = y + &(d * t);
        let v = net.preactivation(p.view(), a)?;
        Ok((p, v))
    };
    let (mut lo, mut hi) = (-span, span);
    let (_, mut flo) = at(lo)?;
    let (_, fhi) = at(hi)?;
    if flo == T::zero() {
        return Ok(at(lo)?.0);
    }
    if fhi == T::zero() {
        return Ok(at(hi)?.0);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Tracing("no sign change of the pre-activation along the probe segment".into()));
    }
    while hi - lo > T::lit(BISECTION_TOL) {
        let mid = (lo + hi) / T::lit(2.0);
        let (_, fm) = at(mid)?;
        if fm == T::zero() {
            return Ok(at(mid)?.0);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(at((lo + hi) / T::lit(2.0))?.0)
}

/// Traces the zero set of `a` on both sides of the zero set of `b` near `x*`
/// and reports whether its normal turns.
fn boundary_bends<T: Scalar>(net: &ReluNetwork<T>, a: NeuronId, b: NeuronId, x_star: ArrayView1<T>, eps: T) -> Result<bool> {
    let nb = unit(gradient_near(net, x_star, b, 1)?)?;
    let half = eps / T::lit(2.0);
    let mut normals = Vec::with_capacity(2);
    for side in [T::one(), -T::one()] {
        let y = &x_star + &(&nb * (side * half));
        if net.preactivation(y.view(), b)? * side <= T::zero() {
            return Err(Error::Tracing(format!("offset point not on the expected side of {b:?}")));
        }
        let da = unit(gradient_near(net, y.view(), a, 2)?)?;
        let q = bisect_onto(net, a, &y, &da, eps)?;
        if net.preactivation(q.view(), b)? * side <= T::zero() {
            return Err(Error::Tracing(format!("traced point crossed the zero set of {b:?}")));
        }
        normals.push(unit(gradient_near(net, q.view(), a, 3)?)?);
    }
    let cos = normals[0].dot(&normals[1]).max(-T::one()).min(T::one());
    Ok(cos.acos() > T::lit(BEND_ANGLE_TOL))
}

/// Classifies the crossing of the zero sets of `z` and `z2` at `x_star`.
pub fn classify_intersection<T: Scalar>(
    net: &ReluNetwork<T>,
    z: NeuronId,
    z2: NeuronId,
    x_star: ArrayView1<T>,
    eps: T,
) -> Result<Bending> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    if z == z2 {
        return Err(Error::InvalidArgument("need two distinct neurons".into()));
    }
    let dist = |n: NeuronId| -> Result<T> {
        let v = net.preactivation(x_star, n)?;
        let g = norm(gradient_near(net, x_star, n, 0)?.view());
        Ok(if g > T::zero() { v.abs() / g } else { T::infinity() })
    };
    let (d1, d2) = (dist(z)?, dist(z2)?);
    let tol = T::lit(ON_BOUNDARY_TOL);
    if !(d1 <= tol && d2 <= tol) {
        return Err(Error::NotOnBoundaries(d1.to_f64_lossy(), d2.to_f64_lossy()));
    }
    let first = boundary_bends(net, z, z2, x_star, eps)?;
    let second = boundary_bends(net, z2, z, x_star, eps)?;
    Ok(match (first, second) {
        (true, false) => Bending::ZBends,
        (false, true) => Bending::Z2Bends,
        (false, false) => Bending::Neither,
        (true, true) => Bending::Both,
    })
}

/// One refit in the λ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow<T> {
    pub lambda: T,
    pub nonzero_weights: usize,
    pub nonzero_pairs: usize,
    pub final_objective: T,
    /// Whether the nonzero weight count equals the first-layer width.
    pub equals_first_layer: bool,
}

/// Nonzero weight counts set against the target's architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureReport<T> {
    pub patch_count: usize,
    pub nonzero_weights: usize,
    pub first_layer_width: usize,
    pub nonzero_pairs: usize,
    pub empirical_region_count: usize,
    pub lambda_grid: Vec<LambdaRow<T>>,
}

/// Refits across `lambda_grid` via `rerun` and tabulates sparsity next to the
/// first-layer width and the empirical region count. Nothing is asserted.
pub fn conjecture_report<T: Scalar>(
    fit: &FitReport<T>,
    net: &ReluNetwork<T>,
    radius: T,
    region_samples: usize,
    seed: u64,
    lambda_grid: &[T],
    mut rerun: impl FnMut(T) -> Result<FitReport<T>>,
) -> Result<ConjectureReport<T>> {
    let n1 = net.first_layer_width();
    let thr = fit.nonzero_threshold;
    let rows = lambda_grid
        .iter()
        .map(|&lambda| {
            let r = rerun(lambda)?;
            let nz = r.nonzero_count(thr);
            Ok(LambdaRow {
                lambda,
                nonzero_weights: nz,
                nonzero_pairs: r.nonzero_pairs,
                final_objective: r.final_objective,
                equals_first_layer: nz == n1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConjectureReport {
        patch_count: fit.weights.len(),
        nonzero_weights: fit.nonzero_count(thr),
        first_layer_width: n1,
        nonzero_pairs: fit.nonzero_pairs,
        empirical_region_count: count_regions(net, radius, region_samples, seed)?,
        lambda_grid: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FnBox;
    use crate::relunet::{AffineLayer, Architecture};
    use ndarray::array;

    #[test]
    fn identical_functions_are_at_distance_zero() {
        let f = FnBox::new(2, |x: ArrayView1<f64>| x[0].sin() + x[1]);
        let d = dp_distance(&f, &f, 1.0, 2.0, 1000, 1).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn constant_gap_distance() {
        let f = FnBox::new(2, |_: ArrayView1<f64>| 1.0);
        let g = FnBox::new(2, |_: ArrayView1<f64>| -1.0);
        let d = dp_distance(&f, &g, 1.0, 2.0, 1000, 1).unwrap();
        let expect = 2.0 * std::f64::consts::PI.sqrt();
        assert!((d.value - expect).abs() <= 4.0 * d.stderr + 1e-12);
        assert!(dp_distance(&f, &g, 1.0, 0.5, 10, 1).is_err());
    }

    #[test]
    fn affine_net_has_one_region() {
        let arch = Architecture::new(vec![2, 2, 1]).unwrap();
        let l1 = AffineLayer::new(array![[1.0, 0.0], [0.0, 1.0]], array![5.0, 5.0]).unwrap();
        let l2 = AffineLayer::new(array![[1.0, 1.0]], array![0.0]).unwrap();
        let net = ReluNetwork::new(arch, vec![l1, l2], false).unwrap();
        assert_eq!(count_regions(&net, 1.0, 5000, 0).unwrap(), 1);
    }

    #[test]
    fn crossing_axes_give_four_regions() {
        let arch = Architecture::new(vec![2, 2, 1]).unwrap();
        let l1 = AffineLayer::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0]).unwrap();
        let l2 = AffineLayer::new(array![[1.0, 1.0]], array![0.0]).unwrap();
        let net = ReluNetwork::new(arch, vec![l1, l2], false).unwrap();
        assert_eq!(count_regions(&net, 1.0, 2000, 0).unwrap(), 4);
    }

    #[test]
    fn point_off_boundaries_is_rejected() {
        let arch = Architecture::new(vec![2, 2, 1]).unwrap();
        let l1 = AffineLayer::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0]).unwrap();
        let l2 = AffineLayer::new(array![[1.0, 1.0]], array![0.0]).unwrap();
        let net = ReluNetwork::new(arch, vec![l1, l2], false).unwrap();
        let r = classify_intersection(&net, NeuronId::new(0, 0), NeuronId::new(0, 1), array![0.5, 0.0].view(), 1e-3);
        assert!(matches!(r, Err(Error::NotOnBoundaries(..))));
        let ok = classify_intersection(&net, NeuronId::new(0, 0), NeuronId::new(0, 1), array![0.0, 0.0].view(), 1e-3);
        assert_eq!(ok.unwrap(), Bending::Neither);
    }
}
