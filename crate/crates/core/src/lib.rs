//! Reduced-order density assimilation toolkit.
//!
//! Pipeline: compress gridded log10-density snapshots to a low-rank PCA
//! latent space, identify sparse autoregressive latent dynamics (or a linear
//! DMDc baseline) by ridge regression, rescale the trained operators from
//! the training cadence to the filter cadence, then assimilate along-track
//! density measurements with a companion-form extended Kalman filter and
//! reconstruct the full field from the filtered latent state.
//!
//! All numerical kernels are generic over the scalar type ([`Real`]: f32 or
//! f64); concrete aliases for both precisions live at the crate root. File
//! formats and orchestration are f64.

pub mod dataio;
pub mod drivers;
pub mod ekf;
pub mod error;
pub mod features;
pub mod grid_obs;
pub mod harness;
pub mod ident;
pub mod latent;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod synthtwin;

pub use error::{Error, Result};
pub use scalar::{LapackReal, Real};

pub type GridSpec64 = grid_obs::GridSpec<f64>;
pub type GridSpec32 = grid_obs::GridSpec<f32>;
pub type FieldSnapshot64 = grid_obs::FieldSnapshot<f64>;
pub type FieldSnapshot32 = grid_obs::FieldSnapshot<f32>;
pub type ObsOperator64 = grid_obs::ObsOperator<f64>;
pub type ObsOperator32 = grid_obs::ObsOperator<f32>;
pub type TrackMeasurement64 = grid_obs::TrackMeasurement<f64>;
pub type TrackMeasurement32 = grid_obs::TrackMeasurement<f32>;
pub type LatentBasis64 = latent::LatentBasis<f64>;
pub type LatentBasis32 = latent::LatentBasis<f32>;
pub type FeatureScaler64 = features::FeatureScaler<f64>;
pub type FeatureScaler32 = features::FeatureScaler<f32>;
pub type RomModel64 = ident::RomModel<f64>;
pub type RomModel32 = ident::RomModel<f32>;
pub type RegressionConfig64 = ident::RegressionConfig<f64>;
pub type RegressionConfig32 = ident::RegressionConfig<f32>;
pub type NoiseConfig64 = ekf::NoiseConfig<f64>;
pub type NoiseConfig32 = ekf::NoiseConfig<f32>;
pub type FilterState64 = ekf::FilterState<f64>;
pub type FilterState32 = ekf::FilterState<f32>;
pub type DriverSeries64 = drivers::DriverSeries<f64>;
pub type DriverSeries32 = drivers::DriverSeries<f32>;
pub type DriverVector64 = drivers::DriverVector<f64>;
pub type DriverVector32 = drivers::DriverVector<f32>;
pub type TwinSpec64 = synthtwin::TwinSpec<f64>;
pub type TwinSpec32 = synthtwin::TwinSpec<f32>;
pub type OrbitSpec64 = synthtwin::OrbitSpec<f64>;
pub type OrbitSpec32 = synthtwin::OrbitSpec<f32>;
