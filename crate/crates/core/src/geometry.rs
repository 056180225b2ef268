//! Hyperplane algebra, n-ball volumes and moments, and integrals of products
//! of affine functions over balls.
//!
//! Two hyperplanes `a₁ᵀx = β₁`, `a₂ᵀx = β₂` with unit, non-colinear normals
//! meet in an `(n-2)`-dimensional affine set. [`intersection`] returns it as a
//! least-norm base point plus a null-space basis `P [-F; I]` obtained from the
//! reduced row echelon form `[I₂ F]` of the permuted system matrix.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Rank decisions in the echelon reduction.
pub const RANK_TOL: f64 = 1e-10;
/// `|cos θ|` at or above `1 - COLINEAR_TOL` counts as colinear.
pub const COLINEAR_TOL: f64 = 1e-9;

/// The set `{x : aᵀx = β}` with `‖a‖ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane<T> {
    #[serde(with = "crate::serde_vec")]
    normal: Array1<T>,
    offset: T,
}

impl<T: Scalar> Hyperplane<T> {
    /// Builds the plane `aᵀx = β`, rescaling both sides so the normal has unit length.
    pub fn new(normal: Array1<T>, offset: T) -> Result<Self> {
        let norm = normal.dot(&normal).sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::InvalidArgument("hyperplane normal must be nonzero and finite".into()));
        }
        Ok(Self { normal: normal.mapv(|v| v / norm), offset: offset / norm })
    }

    pub fn normal(&self) -> ArrayView1<'_, T> {
        self.normal.view()
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Signed residual `aᵀx - β`.
    pub fn residual(&self, x: ArrayView1<T>) -> T {
        self.normal.dot(&x) - self.offset
    }
}

/// Angle between the normals, in `[0, π]`.
pub fn angle<T: Scalar>(h1: &Hyperplane<T>, h2: &Hyperplane<T>) -> T {
    let c = h1.normal.dot(&h2.normal);
    c.max(-T::one()).min(T::one()).acos()
}

fn check_pair<T: Scalar>(h1: &Hyperplane<T>, h2: &Hyperplane<T>) -> Result<T> {
    if h1.dim() != h2.dim() {
        return Err(Error::DimensionMismatch { expected: h1.dim(), got: h2.dim() });
    }
    let c = h1.normal.dot(&h2.normal);
    if c.abs() >= T::one() - T::lit(COLINEAR_TOL) {
        return Err(Error::DegeneratePair);
    }
    Ok(c)
}

/// Point of `H1 ∩ H2` closest to the origin:
/// `((β₁ - β₂ cos θ) a₁ + (β₂ - β₁ cos θ) a₂) / sin² θ`.
pub fn least_norm_point<T: Scalar>(h1: &Hyperplane<T>, h2: &Hyperplane<T>) -> Result<Array1<T>> {
    let c = check_pair(h1, h2)?;
    let s2 = T::one() - c * c;
    let (b1, b2) = (h1.offset, h2.offset);
    let k1 = (b1 - b2 * c) / s2;
    let k2 = (b2 - b1 * c) / s2;
    Ok(&h1.normal * k1 + &h2.normal * k2)
}

/// Affine subspace `base + basis · τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace<T> {
    pub base: Array1<T>,
    /// `n × (n-2)`; empty when the intersection is a single point.
    pub basis: Array2<T>,
    /// Column order used by the echelon form; the first two entries are the pivots.
    pub permutation: Vec<usize>,
}

impl<T: Scalar> AffineSubspace<T> {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn point(&self, tau: ArrayView1<T>) -> Array1<T> {
        &self.base + &self.basis.dot(&tau)
    }
}

/// Echelon reduction of the 2×n system `[a₁ᵀ; a₂ᵀ]`.
///
/// Returns the column permutation (pivot columns first, chosen greedily by
/// largest magnitude) and the `2 × (n-2)` block `F` of `E A P = [I₂ F]`.
pub fn rref_two_rows<T: Scalar>(a1: ArrayView1<T>, a2: ArrayView1<T>) -> Result<(Vec<usize>, Array2<T>)> {
    let n = a1.len();
    if a2.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a2.len() });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("hyperplane intersection needs n >= 2".into()));
    }
    let mut rows = [a1.to_owned(), a2.to_owned()];
    let tol = T::lit(RANK_TOL);

    // first pivot: largest entry of the whole matrix
    let (mut pr, mut pc, mut best) = (0, 0, T::zero());
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                pr = r;
                pc = c;
            }
        }
    }
    if best <= tol {
        return Err(Error::DegeneratePair);
    }
    rows.swap(0, pr);
    let p = rows[0][pc];
    rows[0].mapv_inplace(|v| v / p);
    let f = rows[1][pc];
    let r0 = rows[0].clone();
    rows[1].zip_mut_with(&r0, |v, &u| *v -= f * u);

    // second pivot: largest remaining entry of row two
    let (mut qc, mut best2) = (usize::MAX, T::zero());
    for (c, &v) in rows[1].iter().enumerate() {
        if c != pc && v.abs() > best2 {
            best2 = v.abs();
            qc = c;
        }
    }
    if best2 <= tol {
        return Err(Error::DegeneratePair);
    }
    let q = rows[1][qc];
    rows[1].mapv_inplace(|v| v / q);
    let g = rows[0][qc];
    let r1 = rows[1].clone();
    rows[0].zip_mut_with(&r1, |v, &u| *v -= g * u);

    let mut perm = vec![pc, qc];
    perm.extend((0..n).filter(|&c| c != pc && c != qc));
    let fblock = Array2::from_shape_fn((2, n - 2), |(r, k)| rows[r][perm[k + 2]]);
    Ok((perm, fblock))
}

/// `H1 ∩ H2` as least-norm point plus null-space basis `P [-F; I_{n-2}]`.
pub fn intersection<T: Scalar>(h1: &Hyperplane<T>, h2: &Hyperplane<T>) -> Result<AffineSubspace<T>> {
    let base = least_norm_point(h1, h2)?;
    let (perm, fblock) = rref_two_rows(h1.normal(), h2.normal())?;
    let n = h1.dim();
    let mut basis = Array2::<T>::zeros((n, n - 2));
    for k in 0..(n - 2) {
        basis[[perm[0], k]] = -fblock[[0, k]];
        basis[[perm[1], k]] = -fblock[[1, k]];
        basis[[perm[k + 2], k]] = T::one();
    }
    Ok(AffineSubspace { base, basis, permutation: perm })
}

/// Closed ball `B_r(c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball<T> {
    #[serde(with = "crate::serde_vec")]
    pub center: Array1<T>,
    pub radius: T,
}

impl<T: Scalar> Ball<T> {
    pub fn new(center: Array1<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::InvalidArgument("ball radius must be positive".into()));
        }
        Ok(Self { center, radius })
    }

    /// Ball of radius `radius` about the origin of `ℝⁿ`.
    pub fn origin(n: usize, radius: T) -> Result<Self> {
        Self::new(Array1::zeros(n), radius)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: ArrayView1<T>) -> bool {
        dist_sq(self.center.view(), x) <= self.radius * self.radius
    }

    pub fn volume(&self) -> T {
        ball_volume(self.dim(), self.radius)
    }
}

pub(crate) fn dist_sq<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |s, (&u, &v)| s + (u - v) * (u - v))
}

pub(crate) fn norm<T: Scalar>(a: ArrayView1<T>) -> T {
    a.dot(&a).sqrt()
}

/// `Γ(n/2 + 1)` for integer `n`, by exact products.
fn gamma_half_plus_one(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        (1..=n / 2).fold(1.0, |acc, k| acc * k as f64)
    } else {
        // Γ(k + 3/2) = √π · ∏_{j=0}^{k} (j + 1/2)
        let k = n / 2;
        (0..=k).fold(std::f64::consts::PI.sqrt(), |acc, j| acc * (j as f64 + 0.5))
    }
}

/// Volume of the n-ball, `π^{n/2} rⁿ / Γ(n/2 + 1)`.
pub fn ball_volume<T: Scalar>(n: usize, r: T) -> T {
    let unit = std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half_plus_one(n);
    T::lit(unit) * r.powi(n as i32)
}

/// Diagonal entry of `∫_{B_r(0)} x xᵀ dx = (V_n(1) r^{n+2} / (n+2)) Iₙ`.
///
/// The per-axis moment integrates `x₁²` over the ball; a shortcut of the form
/// `r²/n · Iₙ` misses the volume factor and is not used.
pub fn second_moment<T: Scalar>(n: usize, r: T) -> T {
    ball_volume(n, T::one()) * r.powi(n as i32 + 2) / T::from_usize_lossy(n + 2)
}

/// Affine function `x ↦ slopeᵀx + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFn<T> {
    #[serde(with = "crate::serde_vec")]
    pub slope: Array1<T>,
    pub intercept: T,
}

impl<T: Scalar> AffineFn<T> {
    pub fn new(slope: Array1<T>, intercept: T) -> Self {
        Self { slope, intercept }
    }

    pub fn eval(&self, x: ArrayView1<T>) -> T {
        self.slope.dot(&x) + self.intercept
    }
}

/// Exact `∫_{ball} gᵢ(x) gⱼ(x) dx` for affine `gᵢ`, `gⱼ`.
///
/// Substituting `x = c + u` leaves the odd moments zero, so the integral is
/// `gᵢ(c) gⱼ(c) V_n(r) + (Lᵢᵀ Lⱼ) V_n(1) r^{n+2} / (n+2)`.
pub fn ball_product_integral<T: Scalar>(gi: &AffineFn<T>, gj: &AffineFn<T>, ball: &Ball<T>) -> T {
    let n = ball.dim();
    debug_assert_eq!(gi.slope.len(), n);
    debug_assert_eq!(gj.slope.len(), n);
    let c = ball.center.view();
    gi.eval(c) * gj.eval(c) * ball.volume() + gi.slope.dot(&gj.slope) * second_moment(n, ball.radius)
}

/// Seeded generator used by every sampling routine.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point in `B_radius(center)`: normalized Gaussian direction scaled by `U^{1/n}`.
pub fn uniform_in_ball<T: Scalar, R: Rng + ?Sized>(rng: &mut R, center: ArrayView1<T>, radius: T) -> Array1<T> {
    let n = center.len();
    let mut dir = vec![0.0f64; n];
    loop {
        for d in dir.iter_mut() {
            *d = rng.sample(StandardNormal);
        }
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 0.0 {
            let u: f64 = rng.random();
            let scale = u.powf(1.0 / n as f64) / len;
            return Array1::from_shape_fn(n, |i| center[i] + radius * T::lit(dir[i] * scale));
        }
    }
}

/// Uniform unit vector in `ℝⁿ`.
pub fn unit_direction<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<T> {
    loop {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 0.0 {
            return dir.iter().map(|&v| T::lit(v / len)).collect();
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate<T> {
    pub estimate: T,
    pub stderr: T,
}

/// Sample mean and standard error of the mean.
pub(crate) fn mean_and_sem<T: Scalar>(values: &[T]) -> (T, T) {
    let m = values.len();
    if m == 0 {
        return (T::zero(), T::zero());
    }
    let mf = T::from_usize_lossy(m);
    let mean = values.iter().fold(T::zero(), |s, &v| s + v) / mf;
    if m < 2 {
        return (mean, T::zero());
    }
    let var = values.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / T::from_usize_lossy(m - 1);
    (mean, (var / mf).sqrt())
}

/// `V_n(r) · mean f(X)` over `nsamples` uniform draws from `ball`.
pub fn mc_integral<T: Scalar>(
    f: impl Fn(ArrayView1<T>) -> T,
    ball: &Ball<T>,
    nsamples: usize,
    seed: u64,
) -> McEstimate<T> {
    let mut rng = rng_from_seed(seed);
    let values: Vec<T> = (0..nsamples)
        .map(|_| f(uniform_in_ball(&mut rng, ball.center.view(), ball.radius).view()))
        .collect();
    let (mean, sem) = mean_and_sem(&values);
    let vol = ball.volume();
    McEstimate { estimate: vol * mean, stderr: vol * sem }
}
