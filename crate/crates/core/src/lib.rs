//! Reconstruction of black-box ReLU networks from sampled tangent planes.
//!
//! The pipeline probes a target on the domain ball `B_T(0)`, turns each
//! smooth probe into a compactly supported tangent-plane patch, and fits one
//! scalar weight per patch by minimizing the integrated squared error. The
//! objective is a convex quadratic in the weights; patch radii can be chosen
//! so its Hessian is diagonally dominant, which makes the minimizer unique.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiation.

// `!(x > 0)` is the NaN-rejecting form used for argument checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod linalg;
pub mod oracle;
pub mod patches;
pub mod relunet;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = relunet::ReluNetwork<f64>;
pub type Network32 = relunet::ReluNetwork<f32>;
pub type Probes = oracle::ProbeSet<f64>;
pub type Patch = patches::LocalPatch<f64>;
pub type Model = patches::PatchModel<f64>;
pub type Model32 = patches::PatchModel<f32>;
pub type Report = fit::FitReport<f64>;
pub type Config = fit::FitConfig<f64>;
pub type Plane = geometry::Hyperplane<f64>;

/// `Array1<T>` as a plain JSON list.
pub(crate) mod serde_vec {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(v: &Array1<T>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Array1<T>, D::Error> {
        Vec::<T>::deserialize(d).map(Array1::from)
    }
}

/// `Vec<Array1<T>>` as a JSON list of lists.
pub(crate) mod serde_rows {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(rows: &[Array1<T>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(rows.iter().map(|r| r.as_slice().expect("standard layout")))
    }

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Vec<Array1<T>>, D::Error> {
        Vec::<Vec<T>>::deserialize(d).map(|rows| rows.into_iter().map(Array1::from).collect())
    }
}
