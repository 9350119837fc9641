#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod scalar;
pub mod series;
pub mod contour;
pub mod saddle;
mod linalg;
pub mod harness;

pub use contour::{QuadratureResult, QuadratureSpec};
pub use model::{EntropyVariant, Problem};
pub use saddle::{ExponentPoint, SaddleSolution};
pub use scalar::Scalar;
pub use series::{PrecisionMode, PrecisionPolicy, SeriesEstimate};

/// Double-precision problem, the type the CLI and harness work with.
pub type Problem64 = Problem<f64>;
pub type Problem32 = Problem<f32>;
pub type Estimate64 = SeriesEstimate<f64>;
pub type Quadrature64 = QuadratureResult<f64>;
pub type Solution64 = SaddleSolution<f64>;
pub type Solution32 = SaddleSolution<f32>;
