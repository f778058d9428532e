pub mod autodiff;
pub mod cpc_net;
pub mod degradation;
pub mod diffusion;
pub mod error;
pub mod hog;
pub mod hr_loss;
pub mod metrics;
pub mod resample;
pub mod synth;
pub mod tensor;
pub mod video;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
