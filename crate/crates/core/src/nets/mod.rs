//! Network building blocks: the spectral-normalized residual feature
//! extractor and the attentive set encoder that predicts covariance factors.

mod extractor;
mod set_encoder;
mod spectral;

pub use extractor::{Extractor, ExtractorConfig, ResidualBlock};
pub use set_encoder::{EncodedCovariance, EncoderConfig, SetEncoder};
pub use spectral::{spectral_norm, SpectralLinear};
