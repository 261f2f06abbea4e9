//! Simulation, depth recovery and aperture autofocus for a coded-aperture
//! Laue diffraction microscope.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI and the file formats use.

pub mod autofocus;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod mask;
pub mod nnls;
pub mod recon;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{Coordinate, Pixel};
pub use scalar::Real;

pub type Mask = mask::ApertureMask<f64>;
pub type Pose = geometry::Pose6Dof<f64>;
pub type Detector = geometry::DetectorGeometry<f64>;
pub type Setup = geometry::Instrument<f64>;
pub type Plan = encoding::ScanPlan<f64>;
pub type Signal = recon::DepthSignal<f64>;
pub type Dataset = dataset::ScanDataset<f64>;
pub type Problem = autofocus::FocusProblem<f64>;
pub type Trace = autofocus::FocusTrace<f64>;
pub type Sample = simulator::SampleModel<f64>;
