//! Compressed-sensing photoacoustic projection imaging on a ring of
//! integrating line detectors: detector selection design, acoustic forward
//! simulation, and two-step reconstruction (per-slice TV recovery of the
//! circular means followed by filtered backprojection).
//!
//! Every numeric type is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

pub mod acquisition;
pub mod csdesign;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod recon;
pub mod scalar;
pub mod wave;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Geometry = geometry::SensorGeometry<f64>;
pub type Times = geometry::TimeGrid<f64>;
pub type Grid = geometry::ImageGrid<f64>;
pub type Image = geometry::SourceImage<f64>;
pub type Disc = geometry::DiscSpec<f64>;
pub type Pressure = wave::PressureData<f64>;
pub type Means = wave::MeansData<f64>;
pub type Measurements = acquisition::CsData<f64>;
pub type Tv = recon::TvOptions<f64>;
pub type Recovered = recon::RecoveredMeans<f64>;
