//! Numerical certification of uniform d-contraction for autonomous ODEs.
//!
//! Two complementary criteria are provided: finite-time Lyapunov exponents
//! ([`exponents`]) and generalized eigenvalues of a Riemannian metric
//! ([`metric`]). On top of them sit metric synthesis ([`synthesis`]),
//! Floquet analysis of periodic orbits ([`floquet`]) and the benchmark
//! systems ([`systems`]).

pub mod certificate;
pub mod error;
pub mod exponents;
pub mod floquet;
pub mod flow;
pub mod linalg;
pub mod metric;
pub mod optim;
pub mod region;
pub mod report;
pub mod synthesis;
pub mod systems;

#[cfg(feature = "cli")]
pub mod cli;

pub use certificate::{ContractionCertificate, CriterionMethod, Verdict};
pub use error::{Error, Result};
pub use flow::{DynamicalSystem, IntegratorOptions, Method, VariationalState};
pub use linalg::{Ellipsoid, FractionalDimension, SpdMatrix};
pub use metric::MetricField;
pub use region::Region;

pub use nalgebra::{DMatrix, DVector};

pub const TOOL_VERSION: &str = concat!("contracta ", env!("CARGO_PKG_VERSION"));

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
