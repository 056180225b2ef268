//! Weight fitting for patch models.
//!
//! The surrogate `h(x) = Σ wᵢ g'ᵢ(x)` is linear in `w`, so
//! `L(w) = ∫_{B_T(0)} (h - f)² dx` is a convex quadratic with gradient
//! `∂L/∂wᵢ = 2∫ (h - f) g'ᵢ` and Hessian `Hᵢⱼ = 2∫ g'ᵢ g'ⱼ`, a Gram matrix.
//! Radii are chosen so that `H` is diagonally dominant, which by Gershgorin's
//! theorem bounds every eigenvalue below by the smallest row margin.
//!
//! Fits replace the integral once by a seeded uniform sample of the domain;
//! every statement about convergence refers to that discretization.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ball_product_integral, ball_volume, dist_sq, norm, rng_from_seed, uniform_in_ball};
use crate::linalg::{cholesky_solve, power_iteration};
use crate::oracle::{BlackBox, Oracle, ProbeSet};
use crate::patches::{LocalPatch, PatchModel};
use crate::scalar::Scalar;

/// Relative pivot floor for the normal-equations Cholesky factorization.
const SINGULAR_REL_TOL: f64 = 1e-12;
/// Consecutive objective increases tolerated before declaring divergence.
const DIVERGENCE_STREAK: usize = 50;
/// Upper bound on Gershgorin shrink steps.
const MAX_SHRINK_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "snake_case")]
pub enum Regularization<T> {
    None,
    /// `λ‖w‖₁`, applied by proximal soft-thresholding.
    L1(T),
    /// `λ‖w‖₂²`.
    L2(T),
}

impl<T: Scalar> Regularization<T> {
    fn lambda(&self) -> T {
        match *self {
            Regularization::None => T::zero(),
            Regularization::L1(l) | Regularization::L2(l) => l,
        }
    }

    fn penalty(&self, w: ArrayView1<T>) -> T {
        match *self {
            Regularization::None => T::zero(),
            Regularization::L1(l) => l * w.iter().fold(T::zero(), |s, v| s + v.abs()),
            Regularization::L2(l) => l * w.dot(&w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize<T> {
    Fixed(T),
    /// `1 / λ_max(H)` of the fixed-sample Hessian (plus `2λ` under L2).
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig<T> {
    pub learning_rate: StepSize<T>,
    pub max_iters: usize,
    pub grad_tol: T,
    pub reg: Regularization<T>,
    pub mc_samples: usize,
    pub seed: u64,
    pub nonzero_threshold: T,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: StepSize::Auto,
            max_iters: 200_000,
            grad_tol: T::lit(1e-12),
            reg: Regularization::None,
            mc_samples: 20_000,
            seed: 0,
            nonzero_threshold: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> FitConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if let StepSize::Fixed(eta) = self.learning_rate {
            if !(eta > T::zero()) {
                return Err(Error::InvalidArgument("learning rate must be positive".into()));
            }
        }
        if !(self.grad_tol > T::zero()) {
            return Err(Error::InvalidArgument("gradient tolerance must be positive".into()));
        }
        if !(self.reg.lambda() >= T::zero()) {
            return Err(Error::InvalidArgument("regularization strength must be nonnegative".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidArgument("need at least one Monte Carlo sample".into()));
        }
        Ok(())
    }
}

/// Outcome of a weight fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport<T> {
    /// Fixed-sample estimate of `L_w`, without the penalty.
    pub final_objective: T,
    pub penalty: T,
    pub iterations: usize,
    pub converged: bool,
    pub step_size: T,
    pub weights: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_weights: Option<Vec<(usize, usize, T)>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_pairs: Vec<(usize, usize)>,
    pub nonzero_threshold: T,
    pub nonzero_weights: usize,
    pub nonzero_pairs: usize,
    pub gershgorin_ok: bool,
    pub gershgorin_margins: Vec<T>,
    pub gershgorin_margin_stderr: Vec<T>,
    pub query_count: u64,
    pub config: FitConfig<T>,
}

impl<T: Scalar> FitReport<T> {
    pub fn nonzero_count(&self, threshold: T) -> usize {
        self.weights.iter().filter(|w| w.abs() > threshold).count()
    }

    /// Model with the fitted weights on the given patches.
    pub fn model(&self, patches: Vec<LocalPatch<T>>) -> Result<PatchModel<T>> {
        let pairs = self.pair_weights.iter().flatten().map(|&(i, j, w)| ((i, j), w));
        PatchModel::new(patches, self.weights.clone())?.with_pairs(pairs)
    }
}

/// Uniform sample of the domain with the target's values.
#[derive(Debug, Clone)]
pub struct SampleSet<T> {
    pub points: Vec<Array1<T>>,
    pub targets: Vec<T>,
    /// `V_n(T)`.
    pub volume: T,
}

impl<T: Scalar> SampleSet<T> {
    /// Draws `nsamples` points of `B_T(0)` and queries the oracle at each.
    pub fn draw<B: BlackBox<T>>(oracle: &Oracle<T, B>, nsamples: usize, seed: u64) -> Result<Self> {
        let points = domain_samples(oracle.input_dim(), oracle.radius(), nsamples, seed);
        let targets = points.iter().map(|p| oracle.query_value(p.view())).collect::<Result<_>>()?;
        Ok(Self { points, targets, volume: ball_volume(oracle.input_dim(), oracle.radius()) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn domain_samples<T: Scalar>(dim: usize, radius: T, nsamples: usize, seed: u64) -> Vec<Array1<T>> {
    let mut rng = rng_from_seed(seed);
    let origin = Array1::<T>::zeros(dim);
    (0..nsamples).map(|_| uniform_in_ball(&mut rng, origin.view(), radius)).collect()
}

/// One column of the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Patch(usize),
    /// `g'ᵢ(x) g'ⱼ(x)`, supported on the overlap of the two balls.
    Pair(usize, usize),
}

/// Fixed-sample least-squares problem `(V/M) ‖G w - f‖²`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem<T> {
    pub features: Vec<Feature>,
    /// `M × K` feature values at the samples.
    pub design: Array2<T>,
    pub targets: Array1<T>,
    /// `V / M`.
    pub factor: T,
    gram: Array2<T>,
    cross: Array1<T>,
}

impl<T: Scalar> QuadraticProblem<T> {
    pub fn new(patches: &[LocalPatch<T>], features: Vec<Feature>, samples: &SampleSet<T>) -> Self {
        let m = samples.len();
        let k = features.len();
        let mut design = Array2::<T>::zeros((m, k));
        for (s, x) in samples.points.iter().enumerate() {
            let vals: Vec<T> = patches.iter().map(|p| p.eval(x.view())).collect();
            for (c, f) in features.iter().enumerate() {
                design[[s, c]] = match *f {
                    Feature::Patch(i) => vals[i],
                    Feature::Pair(i, j) => vals[i] * vals[j],
                };
            }
        }
        let targets = Array1::from(samples.targets.clone());
        let gram = design.t().dot(&design);
        let cross = design.t().dot(&targets);
        let factor = samples.volume / T::from_usize_lossy(m.max(1));
        Self { features, design, targets, factor, gram, cross }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Exact residual form of the discretized objective.
    pub fn objective(&self, w: ArrayView1<T>) -> T {
        let r = self.design.dot(&w) - &self.targets;
        self.factor * r.dot(&r)
    }

    pub fn gradient(&self, w: ArrayView1<T>) -> Array1<T> {
        (self.gram.dot(&w) - &self.cross) * (self.factor + self.factor)
    }

    /// `2 (V/M) GᵀG`.
    pub fn hessian(&self) -> Array2<T> {
        &self.gram * (self.factor + self.factor)
    }

    /// Entrywise standard error of the Hessian as a Monte Carlo mean.
    pub fn hessian_stderr(&self) -> Array2<T> {
        let sq = self.design.mapv(|v| v * v);
        let second = sq.t().dot(&sq);
        let m = T::from_usize_lossy(self.design.nrows());
        let volume = self.factor * m;
        Array2::from_shape_fn(self.gram.raw_dim(), |(i, j)| {
            mc_sem(self.gram[[i, j]], second[[i, j]], m) * (volume + volume)
        })
    }

    /// Solves `(GᵀG + ridge I) w = Gᵀf`.
    pub fn solve_normal(&self, ridge: T) -> Result<Array1<T>> {
        let mut a = self.gram.clone();
        a.diag_mut().mapv_inplace(|v| v + ridge);
        cholesky_solve(a.view(), self.cross.view(), T::lit(SINGULAR_REL_TOL))
    }
}

/// Standard error of a mean of `m` values with sum `s1` and sum of squares `s2`.
fn mc_sem<T: Scalar>(s1: T, s2: T, m: T) -> T {
    if m < T::lit(2.0) {
        return T::zero();
    }
    let mean = s1 / m;
    let var = ((s2 - m * mean * mean) / (m - T::one())).max(T::zero());
    (var / m).sqrt()
}

/// Hessian estimate with entrywise standard errors (zero for closed forms).
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate<T> {
    pub matrix: Array2<T>,
    pub stderr: Array2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianEstimator {
    /// Exact diagonal from ball integrals; requires disjoint supports inside the domain.
    ClosedFormDisjoint,
    MonteCarlo { nsamples: usize, seed: u64 },
}

/// `Hᵢⱼ = 2∫_{B_T(0)} g'ᵢ g'ⱼ dx`.
pub fn hessian<T: Scalar>(patches: &[LocalPatch<T>], radius: T, estimator: HessianEstimator) -> Result<HessianEstimate<T>> {
    let n = patches.len();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one patch".into()));
    }
    let two = T::lit(2.0);
    match estimator {
        HessianEstimator::ClosedFormDisjoint => {
            let slack = T::one() + T::lit(1e-12);
            for (i, p) in patches.iter().enumerate() {
                if norm(p.center.view()) + p.radius > radius * slack {
                    return Err(Error::OverlappingSupports(i, i));
                }
                for (j, q) in patches.iter().enumerate().skip(i + 1) {
                    if p.overlaps(q) {
                        return Err(Error::OverlappingSupports(i, j));
                    }
                }
            }
            let mut matrix = Array2::zeros((n, n));
            for (i, p) in patches.iter().enumerate() {
                let g = p.scaled_affine();
                matrix[[i, i]] = two * ball_product_integral(&g, &g, &p.support());
            }
            Ok(HessianEstimate { matrix, stderr: Array2::zeros((n, n)) })
        }
        HessianEstimator::MonteCarlo { nsamples, seed } => {
            if nsamples == 0 {
                return Err(Error::InvalidArgument("need at least one Monte Carlo sample".into()));
            }
            let dim = patches[0].dim();
            let mut s1 = Array2::<T>::zeros((n, n));
            let mut s2 = Array2::<T>::zeros((n, n));
            let mut active: Vec<(usize, T)> = Vec::new();
            for x in domain_samples(dim, radius, nsamples, seed) {
                active.clear();
                active.extend(
                    patches
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| p.contains(x.view()))
                        .map(|(i, p)| (i, p.linear_value(x.view()))),
                );
                for &(i, gi) in &active {
                    for &(j, gj) in &active {
                        let v = gi * gj;
                        s1[[i, j]] += v;
                        s2[[i, j]] += v * v;
                    }
                }
            }
            let m = T::from_usize_lossy(nsamples);
            let scale = two * ball_volume(dim, radius);
            let matrix = s1.mapv(|v| scale * v / m);
            let stderr = Array2::from_shape_fn((n, n), |(i, j)| scale * mc_sem(s1[[i, j]], s2[[i, j]], m));
            Ok(HessianEstimate { matrix, stderr })
        }
    }
}

/// Diagonal-dominance check of a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gershgorin<T> {
    pub ok: bool,
    /// `Hᵢᵢ - Σ_{j≠i} |Hᵢⱼ|`.
    pub margins: Vec<T>,
}

pub fn gershgorin_check<T: Scalar>(h: ArrayView2<T>) -> Gershgorin<T> {
    let margins: Vec<T> = h
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let off = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(T::zero(), |s, (_, v)| s + v.abs());
            row[i] - off
        })
        .collect();
    let ok = margins.iter().all(|&m| m >= T::zero()) && h.diag().iter().all(|&d| d >= T::zero());
    Gershgorin { ok, margins }
}

/// Margin standard errors under independent entry errors.
fn margin_stderr<T: Scalar>(stderr: ArrayView2<T>) -> Vec<T> {
    stderr
        .axis_iter(Axis(0))
        .map(|row| row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode<T> {
    /// Half the distance to the nearest other probe.
    Disjoint,
    /// Start at twice the disjoint radii and shrink until the Monte Carlo
    /// Hessian is diagonally dominant.
    Gershgorin { shrink: T, nsamples: usize, seed: u64 },
}

/// Support radius per probe, clipped so every ball stays inside `B_T(0)`.
pub fn select_radii<T: Scalar>(probes: &ProbeSet<T>, scales: &[T], radius: T, mode: RadiusMode<T>) -> Result<Vec<T>> {
    let n = probes.len();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    if scales.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: scales.len() });
    }
    let room: Vec<T> = probes.points.iter().map(|v| radius - norm(v.view())).collect();
    let mut base = room.clone();
    for (i, r) in base.iter_mut().enumerate() {
        for (j, q) in probes.points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = dist_sq(probes.points[i].view(), q.view()).sqrt();
            if d == T::zero() {
                return Err(Error::DuplicateProbe(i.min(j), i.max(j)));
            }
            *r = r.min(d / T::lit(2.0));
        }
    }
    if let Some(i) = base.iter().position(|&r| !(r > T::zero())) {
        return Err(Error::InvalidArgument(format!("probe {i} lies on the domain boundary")));
    }
    match mode {
        RadiusMode::Disjoint => Ok(base),
        RadiusMode::Gershgorin { shrink, nsamples, seed } => {
            if !(shrink > T::zero() && shrink < T::one()) {
                return Err(Error::InvalidArgument("shrink factor must lie in (0, 1)".into()));
            }
            let mut radii: Vec<T> = base.iter().zip(&room).map(|(&r, &m)| (r + r).min(m)).collect();
            for _ in 0..MAX_SHRINK_STEPS {
                let patches = LocalPatch::from_probes(probes, scales, &radii)?;
                let h = hessian(&patches, radius, HessianEstimator::MonteCarlo { nsamples, seed })?;
                if gershgorin_check(h.matrix.view()).ok {
                    return Ok(radii);
                }
                radii.iter_mut().for_each(|r| *r *= shrink);
            }
            Err(Error::RadiusSelection(MAX_SHRINK_STEPS))
        }
    }
}

fn patch_features(n: usize) -> Vec<Feature> {
    (0..n).map(Feature::Patch).collect()
}

fn check_dims<T: Scalar, B: BlackBox<T>>(patches: &[LocalPatch<T>], oracle: &Oracle<T, B>) -> Result<()> {
    if patches.is_empty() {
        return Err(Error::InvalidArgument("need at least one patch".into()));
    }
    let dim = oracle.input_dim();
    match patches.iter().find(|p| p.dim() != dim) {
        Some(p) => Err(Error::DimensionMismatch { expected: dim, got: p.dim() }),
        None => Ok(()),
    }
}

fn model_features<T: Scalar>(model: &PatchModel<T>) -> (Vec<Feature>, Array1<T>) {
    let mut features = patch_features(model.patches.len());
    let mut w = model.weights.clone();
    for (&(i, j), &v) in &model.pair_weights {
        features.push(Feature::Pair(i, j));
        w.push(v);
    }
    (features, Array1::from(w))
}

/// Monte Carlo estimate `V_n(T) · mean (h - f)²` on a seeded sample.
pub fn objective<T: Scalar, B: BlackBox<T>>(model: &PatchModel<T>, oracle: &Oracle<T, B>, nsamples: usize, seed: u64) -> Result<T> {
    if model.dim() != oracle.input_dim() && !model.patches.is_empty() {
        return Err(Error::DimensionMismatch { expected: oracle.input_dim(), got: model.dim() });
    }
    let samples = SampleSet::draw(oracle, nsamples, seed)?;
    let sum = samples
        .points
        .iter()
        .zip(&samples.targets)
        .fold(T::zero(), |s, (x, &f)| {
            let d = model.eval(x.view()) - f;
            s + d * d
        });
    Ok(samples.volume * sum / T::from_usize_lossy(nsamples.max(1)))
}

/// `∂L/∂wₖ = 2∫ (h - f) φₖ` on the same sample as [`objective`] with the same seed.
///
/// Components follow the patch order, then pair weights in key order.
pub fn objective_gradient<T: Scalar, B: BlackBox<T>>(
    model: &PatchModel<T>,
    oracle: &Oracle<T, B>,
    nsamples: usize,
    seed: u64,
) -> Result<Array1<T>> {
    check_dims(&model.patches, oracle)?;
    let samples = SampleSet::draw(oracle, nsamples, seed)?;
    let (features, _) = model_features(model);
    let mut grad = Array1::<T>::zeros(features.len());
    for (x, &f) in samples.points.iter().zip(&samples.targets) {
        let vals: Vec<T> = model.patches.iter().map(|p| p.eval(x.view())).collect();
        let resid = model.eval(x.view()) - f;
        for (k, feat) in features.iter().enumerate() {
            let phi = match *feat {
                Feature::Patch(i) => vals[i],
                Feature::Pair(i, j) => vals[i] * vals[j],
            };
            grad[k] += resid * phi;
        }
    }
    let scale = T::lit(2.0) * samples.volume / T::from_usize_lossy(nsamples.max(1));
    Ok(grad * scale)
}

/// Exact minimizer of the fixed-sample objective: `(GᵀG + ridge I) w = Gᵀf`.
pub fn solve_normal_equations<T: Scalar, B: BlackBox<T>>(
    patches: &[LocalPatch<T>],
    oracle: &Oracle<T, B>,
    nsamples: usize,
    seed: u64,
    ridge: T,
) -> Result<Array1<T>> {
    check_dims(patches, oracle)?;
    if !(ridge >= T::zero()) {
        return Err(Error::InvalidArgument("ridge must be nonnegative".into()));
    }
    if nsamples < patches.len() && ridge == T::zero() {
        return Err(Error::InvalidArgument("fewer samples than patches without a ridge".into()));
    }
    let samples = SampleSet::draw(oracle, nsamples, seed)?;
    QuadraticProblem::new(patches, patch_features(patches.len()), &samples).solve_normal(ridge)
}

/// Proximal gradient descent on a fixed-sample problem, starting from zero.
#[derive(Debug, Clone)]
pub struct Descent<T> {
    pub weights: Array1<T>,
    pub iterations: usize,
    pub converged: bool,
    pub step: T,
    /// Smooth objective plus penalty after every iteration, starting at `w = 0`.
    pub trace: Vec<T>,
}

/// Sparse row storage of a symmetric matrix.
struct SparseRows<T> {
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> SparseRows<T> {
    fn from_dense(a: ArrayView2<T>) -> Self {
        let rows = a
            .axis_iter(Axis(0))
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != T::zero()).map(|(j, &v)| (j, v)).collect())
            .collect();
        Self { rows }
    }

    fn mul(&self, x: ArrayView1<T>, out: &mut Array1<T>) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().fold(T::zero(), |s, &(j, v)| s + v * x[j]);
        }
    }
}

fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// Runs (proximal) gradient descent on `problem` under `config`.
///
/// Stops when the gradient mapping `(w - prox(w - η∇))/η` has Euclidean norm
/// at most `grad_tol`; for `None` and `L2` this is the plain gradient norm.
pub fn gradient_descent<T: Scalar>(problem: &QuadraticProblem<T>, config: &FitConfig<T>) -> Result<Descent<T>> {
    config.validate()?;
    let k = problem.dim();
    let hess = problem.hessian();
    let two = T::lit(2.0);
    let lambda = config.reg.lambda();
    let l2 = matches!(config.reg, Regularization::L2(_));
    let step = match config.learning_rate {
        StepSize::Fixed(eta) => eta,
        StepSize::Auto => {
            let top = power_iteration(hess.view(), 10_000, T::lit(1e-10)) + if l2 { two * lambda } else { T::zero() };
            if top > T::zero() {
                T::one() / top
            } else {
                T::one()
            }
        }
    };
    let sparse = SparseRows::from_dense(hess.view());
    let linear = &problem.cross * (two * problem.factor);
    let constant = problem.factor * problem.targets.dot(&problem.targets);

    // ½ wᵀHw - bᵀw + c, evaluated from H w
    let smooth = |w: &Array1<T>, hw: &Array1<T>| w.dot(hw) / two - linear.dot(w) + constant;

    let mut w = Array1::<T>::zeros(k);
    let mut hw = Array1::<T>::zeros(k);
    let mut trace = vec![smooth(&w, &hw) + config.reg.penalty(w.view())];
    let mut streak = 0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..config.max_iters {
        let mut grad = &hw - &linear;
        if l2 {
            grad.zip_mut_with(&w, |g, &wi| *g += two * lambda * wi);
        }
        let mut next = &w - &(&grad * step);
        if let Regularization::L1(l) = config.reg {
            let t = l * step;
            next.mapv_inplace(|v| soft_threshold(v, t));
        }
        let mapping = (&w - &next).mapv(|d| d / step);
        if mapping.dot(&mapping).sqrt() <= config.grad_tol {
            converged = true;
            iterations = it;
            break;
        }
        w = next;
        sparse.mul(w.view(), &mut hw);
        let obj = smooth(&w, &hw) + config.reg.penalty(w.view());
        let prev = *trace.last().unwrap();
        if !obj.is_finite() || obj > prev + T::lit(1e-12) * prev.abs().max(T::one()) {
            streak += 1;
            if streak >= DIVERGENCE_STREAK || !obj.is_finite() {
                return Err(Error::Divergence { iteration: it + 1, objective: obj.to_f64_lossy(), step: step.to_f64_lossy() });
            }
        } else {
            streak = 0;
        }
        trace.push(obj);
        iterations = it + 1;
    }
    Ok(Descent { weights: w, iterations, converged, step, trace })
}

fn report_from<T: Scalar>(
    problem: &QuadraticProblem<T>,
    descent: Descent<T>,
    npatches: usize,
    config: &FitConfig<T>,
    rejected_pairs: Vec<(usize, usize)>,
    query_count: u64,
) -> FitReport<T> {
    let w = descent.weights;
    let hess = problem.hessian();
    let se = problem.hessian_stderr();
    let block = hess.slice(ndarray::s![..npatches, ..npatches]);
    let gers = gershgorin_check(block);
    let margin_se = margin_stderr(se.slice(ndarray::s![..npatches, ..npatches]));
    let thr = config.nonzero_threshold;
    let weights = w.slice(ndarray::s![..npatches]).to_vec();
    let pairs: Vec<(usize, usize, T)> = problem
        .features
        .iter()
        .zip(w.iter())
        .filter_map(|(f, &v)| match *f {
            Feature::Pair(i, j) => Some((i, j, v)),
            Feature::Patch(_) => None,
        })
        .collect();
    let nonzero_pairs = pairs.iter().filter(|p| p.2.abs() > thr).count();
    let second_order = problem.features.iter().any(|f| matches!(f, Feature::Pair(..))) || !rejected_pairs.is_empty();
    FitReport {
        final_objective: problem.objective(w.view()),
        penalty: config.reg.penalty(w.view()),
        iterations: descent.iterations,
        converged: descent.converged,
        step_size: descent.step,
        nonzero_weights: weights.iter().filter(|v| v.abs() > thr).count(),
        weights,
        pair_weights: if second_order { Some(pairs) } else { None },
        rejected_pairs,
        nonzero_threshold: thr,
        nonzero_pairs,
        gershgorin_ok: gers.ok,
        gershgorin_margins: gers.margins,
        gershgorin_margin_stderr: margin_se,
        query_count,
        config: *config,
    }
}

/// Fits one scalar weight per patch by gradient descent on the fixed-sample objective.
pub fn fit_weights<T: Scalar, B: BlackBox<T>>(
    patches: &[LocalPatch<T>],
    oracle: &Oracle<T, B>,
    config: &FitConfig<T>,
) -> Result<FitReport<T>> {
    fit_second_order(patches, oracle, config, &[])
}

/// Joint fit of patch weights and pair weights `w'ᵢⱼ` on `g'ᵢ g'ⱼ` features.
///
/// Pairs whose supports do not overlap carry an identically zero feature and
/// are dropped into `rejected_pairs`. Pairs are normalized to `i < j`.
pub fn fit_second_order<T: Scalar, B: BlackBox<T>>(
    patches: &[LocalPatch<T>],
    oracle: &Oracle<T, B>,
    config: &FitConfig<T>,
    pair_set: &[(usize, usize)],
) -> Result<FitReport<T>> {
    config.validate()?;
    check_dims(patches, oracle)?;
    let n = patches.len();
    let mut accepted = BTreeSet::new();
    let mut rejected = Vec::new();
    for &(a, b) in pair_set {
        let (i, j) = (a.min(b), a.max(b));
        if i == j || j >= n {
            return Err(Error::InvalidArgument(format!("invalid pair ({a},{b}) for {n} patches")));
        }
        if patches[i].overlaps(&patches[j]) {
            accepted.insert((i, j));
        } else if !rejected.contains(&(i, j)) {
            rejected.push((i, j));
        }
    }
    let mut features = patch_features(n);
    features.extend(accepted.iter().map(|&(i, j)| Feature::Pair(i, j)));
    let samples = SampleSet::draw(oracle, config.mc_samples, config.seed)?;
    let problem = QuadraticProblem::new(patches, features, &samples);
    let descent = gradient_descent(&problem, config)?;
    Ok(report_from(&problem, descent, n, config, rejected, oracle.query_count()))
}

/// Every pair of patches whose supports overlap.
pub fn overlapping_pairs<T: Scalar>(patches: &[LocalPatch<T>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..patches.len() {
        for j in (i + 1)..patches.len() {
            if patches[i].overlaps(&patches[j]) {
                out.push((i, j));
            }
        }
    }
    out
}
