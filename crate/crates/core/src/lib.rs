//! Spherical signal processing on the rotation group.
//!
//! The crate covers equiangular spherical signals ([`sphere`]), rotations and
//! Haar quadrature ([`so3`]), SO(3) spherical convolution with certified
//! Lipschitz filters ([`conv`]), forward spherical CNNs ([`scnn`]),
//! rotation diffeomorphisms ([`perturb`]), equivariance and stability
//! measurements ([`metrics`]) and mesh-to-signal conversion ([`ingest`]).

pub mod conv;
pub mod error;
pub mod geom;
pub mod ingest;
pub mod metrics;
pub mod perturb;
pub mod scnn;
pub mod so3;
pub mod sphere;

pub use error::{Error, Result};
pub use so3::{rotate_signal, Rotation, So3Quadrature};
pub use sphere::{EquiangularGrid, SphericalPoint, SphericalSignal};
