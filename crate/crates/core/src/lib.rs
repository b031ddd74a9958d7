//! Location encoders for geographic coordinates, a small from-scratch neural
//! network stack to train them, a geo-aware classification/regression
//! benchmark harness, and geo-bias scoring built on spatial self-information.
//!
//! A location encoder is the composition `Enc(x) = NN(PE(x))`: a position
//! encoder [`encoders::encode_position`] featurizes a point and a learnable
//! network from [`nn`] maps the features to an embedding.

pub mod encoders;
pub mod error;
pub mod geo;
pub mod geobias;
pub mod locbench;
pub mod nn;
pub mod rng;

pub use encoders::{EncoderAux, EncoderKind, EncoderSpec, PositionEmbedding, RbfAnchors, RffParams};
pub use error::{Error, Result};
pub use geo::{LocationDeg, Vec3, EARTH_RADIUS_KM};
pub use geobias::{GeoBiasConfig, GeoBiasReport, LowPerfRule, PerfLabeledPoint, WeightMatrix};
pub use locbench::{DatasetRecord, MetricsReport, Split, Task};
pub use nn::{Activation, Arch, MlpParams, TrainConfig};
