//! Query-counted black-box access over the domain ball `B_T(0)`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm, rng_from_seed, uniform_in_ball, unit_direction};
use crate::scalar::Scalar;

/// Anything that can be evaluated at a point of `ℝⁿ`.
pub trait BlackBox<T>: Sync {
    fn input_dim(&self) -> usize;

    /// Callers guarantee `x.len() == input_dim()`.
    fn value(&self, x: ArrayView1<T>) -> T;
}

impl<T, B: BlackBox<T> + ?Sized> BlackBox<T> for &B {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn value(&self, x: ArrayView1<T>) -> T {
        (**self).value(x)
    }
}

/// Adapts a closure into a [`BlackBox`].
pub struct FnBox<F> {
    dim: usize,
    f: F,
}

impl<F> FnBox<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F: Fn(ArrayView1<T>) -> T + Sync> BlackBox<T> for FnBox<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: ArrayView1<T>) -> T {
        (self.f)(x)
    }
}

/// Value-query access to a target restricted to `B_T(0)`.
pub struct Oracle<T, B> {
    target: B,
    radius: T,
    queries: AtomicU64,
}

impl<T: Scalar, B: BlackBox<T>> Oracle<T, B> {
    pub fn new(target: B, radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::InvalidArgument("domain radius must be positive".into()));
        }
        Ok(Self { target, radius, queries: AtomicU64::new(0) })
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn input_dim(&self) -> usize {
        self.target.input_dim()
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn target(&self) -> &B {
        &self.target
    }

    fn check_dim(&self, x: ArrayView1<T>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Requires the ball of radius `margin` about `x` to stay inside the domain.
    fn check_domain(&self, x: ArrayView1<T>, margin: T) -> Result<()> {
        self.check_dim(x)?;
        let n = norm(x);
        // a few ulps of slack for points drawn on the sphere itself
        if n + margin > self.radius * (T::one() + T::lit(8.0) * T::epsilon()) {
            return Err(Error::OutOfDomain { norm: (n + margin).to_f64_lossy(), radius: self.radius.to_f64_lossy() });
        }
        Ok(())
    }

    fn raw(&self, x: ArrayView1<T>) -> T {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.target.value(x)
    }

    /// One counted value query.
    pub fn query_value(&self, x: ArrayView1<T>) -> Result<T> {
        self.check_domain(x, T::zero())?;
        Ok(self.raw(x))
    }

    /// Central differences `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h`; `2n` queries.
    ///
    /// Exact (up to rounding) wherever the target is affine on the stencil.
    pub fn fd_gradient(&self, x: ArrayView1<T>, h: T) -> Result<Array1<T>> {
        if !(h > T::zero()) {
            return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
        }
        let n = self.input_dim();
        self.check_domain(x, h * T::from_usize_lossy(n).sqrt())?;
        let mut probe = x.to_owned();
        let two_h = h + h;
        let grad = (0..n)
            .map(|i| {
                let xi = probe[i];
                probe[i] = xi + h;
                let fp = self.raw(probe.view());
                probe[i] = xi - h;
                let fm = self.raw(probe.view());
                probe[i] = xi;
                (fp - fm) / two_h
            })
            .collect();
        Ok(grad)
    }

    /// Paired one-sided slopes along `ndirs` random unit directions agree within `tol`.
    ///
    /// Always spends exactly `2 * ndirs + 1` queries.
    pub fn is_smooth_at<R: Rng + ?Sized>(
        &self,
        x: ArrayView1<T>,
        h: T,
        tol: T,
        ndirs: usize,
        rng: &mut R,
    ) -> Result<bool> {
        if !(h > T::zero()) || !(tol > T::zero()) {
            return Err(Error::InvalidArgument("smoothness step and tolerance must be positive".into()));
        }
        let n = self.input_dim();
        if ndirs < n {
            return Err(Error::InvalidArgument(format!("need at least {n} directions, got {ndirs}")));
        }
        self.check_domain(x, h)?;
        let f0 = self.raw(x);
        let mut smooth = true;
        for _ in 0..ndirs {
            let u: Array1<T> = unit_direction(rng, n);
            let fwd = self.raw((&x + &(&u * h)).view());
            let bwd = self.raw((&x - &(&u * h)).view());
            let right = (fwd - f0) / h;
            let left = (f0 - bwd) / h;
            if (right - left).abs() > tol {
                smooth = false;
            }
        }
        Ok(smooth)
    }

    /// Draws uniform points of the domain until `n` of them pass the smoothness
    /// test, recording the gradient and value at each.
    ///
    /// Points are drawn from `B_{T - h√n₀}(0)` so every stencil stays inside the domain.
    pub fn sample_points(&self, n: usize, seed: u64, params: &ProbeParams<T>) -> Result<ProbeSet<T>> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one probe".into()));
        }
        let dim = self.input_dim();
        let ndirs = params.ndirs.unwrap_or(dim.max(4));
        let margin = params.h * T::from_usize_lossy(dim).sqrt();
        let inner = self.radius - margin;
        if !(inner > T::zero()) {
            return Err(Error::InvalidArgument("probe step too large for the domain".into()));
        }
        let start = self.query_count();
        let mut rng = rng_from_seed(seed);
        let origin = Array1::<T>::zeros(dim);
        let mut out = ProbeSet { radius: self.radius, ..ProbeSet::default() };
        while out.points.len() < n {
            let v = uniform_in_ball(&mut rng, origin.view(), inner);
            if !self.is_smooth_at(v.view(), params.h, params.tol, ndirs, &mut rng)? {
                out.rejected += 1;
                if out.rejected > 100 * n {
                    return Err(Error::RejectionBudgetExceeded { accepted: out.points.len(), rejected: out.rejected });
                }
                continue;
            }
            let g = self.fd_gradient(v.view(), params.h)?;
            let f = self.query_value(v.view())?;
            out.points.push(v);
            out.gradients.push(g);
            out.values.push(f);
        }
        out.queries = self.query_count() - start;
        Ok(out)
    }
}

/// Step, tolerance and direction count for probing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams<T> {
    pub h: T,
    pub tol: T,
    /// `None` means `max(n₀, 4)`.
    pub ndirs: Option<usize>,
}

impl<T: Scalar> Default for ProbeParams<T> {
    fn default() -> Self {
        Self { h: T::lit(1e-5), tol: T::lit(1e-3), ndirs: None }
    }
}

/// Accepted probe points with their gradients and values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeSet<T> {
    #[serde(rename = "T")]
    pub radius: T,
    #[serde(with = "crate::serde_rows")]
    pub points: Vec<Array1<T>>,
    #[serde(with = "crate::serde_rows")]
    pub gradients: Vec<Array1<T>>,
    pub values: Vec<T>,
    pub rejected: usize,
    pub queries: u64,
}

impl<T: Scalar> ProbeSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Intercept of the tangent plane at probe `i`: `f(vᵢ) - Lᵢᵀvᵢ`.
    pub fn intercept(&self, i: usize) -> T {
        self.values[i] - self.gradients[i].dot(&self.points[i])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.gradients.len() != n || self.values.len() != n {
            return Err(Error::Schema("points, gradients and values differ in length".into()));
        }
        let dim = self.dim();
        for (p, g) in self.points.iter().zip(&self.gradients) {
            if p.len() != dim || g.len() != dim {
                return Err(Error::Schema("inconsistent probe dimensions".into()));
            }
            if norm(p.view()) > self.radius {
                return Err(Error::Schema("probe point outside the domain ball".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }
}
