//! Gabor convolutional networks.
//!
//! Convolution layers whose filters are learned at a small size and expanded
//! into orientation-enriched groups by element-wise modulation with a fixed
//! Gabor filter bank, trained with hand-derived backpropagation.

mod binio;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gabor;
pub mod gof;
pub mod gradcheck;
pub mod model;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{GcnError, Result};
pub use gabor::{build_bank, render_bank, GaborBank, GaborParams};
pub use gof::{GofGrads, GofLayer, ModulatedFilters};
pub use optim::{Optimizer, ParamState};
pub use tensor::{correlate2d, correlate2d_backward, Filter4, Tensor4};
