//! Synthetic license-plate toolkit: plate grammar, template renderer,
//! denoising diffusion model, FID and distribution analytics, a
//! template-matching recognizer and the pseudolabel expansion pipeline.

pub mod augment;
pub mod autodiff;
pub mod ddpm;
pub mod error;
pub mod font;
pub mod grammar;
pub mod io;
pub mod metrics;
pub mod net;
pub mod ocr;
pub mod pseudolabel;
pub mod raster;
pub mod render;
pub mod scalar;

pub use error::{Error, Result};
pub use grammar::{parse_plate, validate_plate, PlateSpec, Validation};
pub use raster::Raster;
pub use scalar::Scalar;
