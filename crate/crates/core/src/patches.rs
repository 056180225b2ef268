//! Compactly supported tangent-plane patches and the weighted surrogate built from them.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist_sq, AffineFn, Ball};
use crate::oracle::{BlackBox, ProbeSet};
use crate::scalar::Scalar;

/// `g'(x) = c (Lᵀx + b)` on the closed ball `B_r(v)`, zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPatch<T> {
    #[serde(rename = "v", with = "crate::serde_vec")]
    pub center: Array1<T>,
    #[serde(rename = "L", with = "crate::serde_vec")]
    pub slope: Array1<T>,
    #[serde(rename = "b")]
    pub intercept: T,
    #[serde(rename = "c")]
    pub scale: T,
    #[serde(rename = "r")]
    pub radius: T,
}

impl<T: Scalar> LocalPatch<T> {
    /// Tangent plane through `(v, f(v))`: `L = grad`, `b = value - gradᵀv`.
    pub fn new(center: Array1<T>, grad: Array1<T>, value: T, scale: T, radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::InvalidArgument("patch radius must be positive".into()));
        }
        if grad.len() != center.len() {
            return Err(Error::DimensionMismatch { expected: center.len(), got: grad.len() });
        }
        let intercept = value - grad.dot(&center);
        Ok(Self { center, slope: grad, intercept, scale, radius })
    }

    /// Patches for every probe, with per-probe scales and radii.
    pub fn from_probes(probes: &ProbeSet<T>, scales: &[T], radii: &[T]) -> Result<Vec<Self>> {
        let n = probes.len();
        if scales.len() != n || radii.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: scales.len().min(radii.len()) });
        }
        (0..n)
            .map(|i| {
                Self::new(
                    probes.points[i].clone(),
                    probes.gradients[i].clone(),
                    probes.values[i],
                    scales[i],
                    radii[i],
                )
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: ArrayView1<T>) -> bool {
        dist_sq(self.center.view(), x) <= self.radius * self.radius
    }

    /// `c (Lᵀx + b)` ignoring the support.
    pub fn linear_value(&self, x: ArrayView1<T>) -> T {
        self.scale * (self.slope.dot(&x) + self.intercept)
    }

    pub fn eval(&self, x: ArrayView1<T>) -> T {
        if self.contains(x) {
            self.linear_value(x)
        } else {
            T::zero()
        }
    }

    /// The scaled affine piece `c·g` as an [`AffineFn`].
    pub fn scaled_affine(&self) -> AffineFn<T> {
        AffineFn::new(self.slope.mapv(|v| v * self.scale), self.intercept * self.scale)
    }

    pub fn support(&self) -> Ball<T> {
        Ball { center: self.center.clone(), radius: self.radius }
    }

    /// Supports share a set of positive measure; tangent balls do not.
    pub fn overlaps(&self, other: &Self) -> bool {
        // same rounding as the disjoint radii, which are half this distance
        dist_sq(self.center.view(), other.center.view()).sqrt() < self.radius + other.radius
    }
}

/// Inverse distance weights `d(x,vᵢ)^{-p} / Σⱼ d(x,vⱼ)^{-p}`.
///
/// If `x` coincides with a center, that center takes all the weight.
pub fn idw_weights<T: Scalar>(x: ArrayView1<T>, centers: &[ArrayView1<T>], p: T) -> Vec<T> {
    let mut w = vec![T::zero(); centers.len()];
    if let Some(hit) = centers.iter().position(|c| dist_sq(x, *c) == T::zero()) {
        w[hit] = T::one();
        return w;
    }
    let half_p = p / T::lit(2.0);
    for (wi, c) in w.iter_mut().zip(centers) {
        *wi = dist_sq(x, *c).powf(-half_p);
    }
    let total = w.iter().fold(T::zero(), |s, &v| s + v);
    if total > T::zero() && total.is_finite() {
        w.iter_mut().for_each(|v| *v /= total);
    }
    w
}

/// How patch outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode<T> {
    /// Fitted scalar weights `wᵢ`.
    #[default]
    Scalar,
    /// Inverse distance weighting with exponent `p` among patches covering `x`.
    Idw(T),
}

/// `h(x) = Σ wᵢ g'ᵢ(x) + Σ_{i<j} w'ᵢⱼ g'ᵢ(x) g'ⱼ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchModel<T> {
    pub patches: Vec<LocalPatch<T>>,
    pub weights: Vec<T>,
    pub pair_weights: BTreeMap<(usize, usize), T>,
    pub mode: WeightingMode<T>,
    /// Domain radius the model was fitted on, when known.
    pub domain_radius: Option<T>,
}

impl<T: Scalar> PatchModel<T> {
    pub fn new(patches: Vec<LocalPatch<T>>, weights: Vec<T>) -> Result<Self> {
        if patches.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: patches.len(), got: weights.len() });
        }
        Ok(Self {
            patches,
            weights,
            pair_weights: BTreeMap::new(),
            mode: WeightingMode::Scalar,
            domain_radius: None,
        })
    }

    pub fn with_pairs(mut self, pairs: impl IntoIterator<Item = ((usize, usize), T)>) -> Result<Self> {
        for ((i, j), w) in pairs {
            if i >= j || j >= self.patches.len() {
                return Err(Error::InvalidArgument(format!("pair ({i},{j}) must satisfy i < j < {}", self.patches.len())));
            }
            self.pair_weights.insert((i, j), w);
        }
        Ok(self)
    }

    pub fn with_mode(mut self, mode: WeightingMode<T>) -> Self {
        self.mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.patches.first().map_or(0, LocalPatch::dim)
    }

    pub fn eval(&self, x: ArrayView1<T>) -> T {
        let values: Vec<T> = self.patches.iter().map(|p| p.eval(x)).collect();
        let first = match self.mode {
            WeightingMode::Scalar => self.weights.iter().zip(&values).fold(T::zero(), |s, (&w, &g)| s + w * g),
            WeightingMode::Idw(p) => {
                let covering: Vec<usize> = (0..self.patches.len()).filter(|&i| self.patches[i].contains(x)).collect();
                let centers: Vec<ArrayView1<T>> = covering.iter().map(|&i| self.patches[i].center.view()).collect();
                let w = idw_weights(x, &centers, p);
                covering.iter().zip(w).fold(T::zero(), |s, (&i, wi)| s + wi * values[i])
            }
        };
        self.pair_weights
            .iter()
            .fold(first, |s, (&(i, j), &w)| s + w * values[i] * values[j])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc<T> = serde_json::from_str(text)?;
        let dim = doc.patches.first().map_or(0, LocalPatch::dim);
        for p in &doc.patches {
            if p.center.len() != dim || p.slope.len() != dim {
                return Err(Error::Schema("inconsistent patch dimensions".into()));
            }
            if !(p.radius > T::zero()) {
                return Err(Error::Schema("patch radius must be positive".into()));
            }
        }
        let mut model = PatchModel::new(doc.patches, doc.w)?
            .with_pairs(doc.w_pairs.into_iter().map(|(i, j, w)| ((i, j), w)))?;
        if let Some(p) = doc.idw_p {
            model.mode = WeightingMode::Idw(p);
        }
        model.domain_radius = doc.radius;
        Ok(model)
    }
}

impl<T: Scalar> BlackBox<T> for PatchModel<T> {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn value(&self, x: ArrayView1<T>) -> T {
        self.eval(x)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc<T> {
    patches: Vec<LocalPatch<T>>,
    w: Vec<T>,
    #[serde(default)]
    w_pairs: Vec<(usize, usize, T)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    idw_p: Option<T>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    radius: Option<T>,
}

impl<T: Scalar> From<&PatchModel<T>> for ModelDoc<T> {
    fn from(m: &PatchModel<T>) -> Self {
        Self {
            patches: m.patches.clone(),
            w: m.weights.clone(),
            w_pairs: m.pair_weights.iter().map(|(&(i, j), &w)| (i, j, w)).collect(),
            idw_p: match m.mode {
                WeightingMode::Idw(p) => Some(p),
                WeightingMode::Scalar => None,
            },
            radius: m.domain_radius,
        }
    }
}

/// Cluster assignment of probes by their tangent planes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub count: usize,
}

/// Groups probes whose tangent planes coincide up to tolerance.
///
/// Each tangent plane `y = Lᵀx + b` is normalized to the unit hyperplane
/// `(L, -1)·(x, y) = -b` in `ℝ^{n+1}`; two probes are linked when the angle
/// between those normals is at most `angle_tol` and the normalized offsets
/// differ by at most `offset_tol`. Labels are the connected components of the
/// link graph, numbered in order of first appearance.
pub fn dedupe_hyperplanes<T: Scalar>(probes: &ProbeSet<T>, angle_tol: T, offset_tol: T) -> Result<Clustering> {
    if !(angle_tol > T::zero()) || !(offset_tol > T::zero()) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    let n = probes.len();
    let planes: Vec<(Array1<T>, T)> = (0..n)
        .map(|i| {
            let g = &probes.gradients[i];
            let mut normal = Array1::zeros(g.len() + 1);
            normal.slice_mut(ndarray::s![..g.len()]).assign(g);
            normal[g.len()] = -T::one();
            let len = normal.dot(&normal).sqrt();
            (normal.mapv(|v| v / len), -probes.intercept(i) / len)
        })
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let cos = planes[i].0.dot(&planes[j].0).max(-T::one()).min(T::one());
            if cos.acos() <= angle_tol && (planes[i].1 - planes[j].1).abs() <= offset_tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut relabel = BTreeMap::new();
    let labels = (0..n)
        .map(|i| {
            let root = find(&mut parent, i);
            let next = relabel.len();
            *relabel.entry(root).or_insert(next)
        })
        .collect();
    Ok(Clustering { labels, count: relabel.len() })
}
