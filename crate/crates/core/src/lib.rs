//! Interest point detection and description for event cameras.
//!
//! Event windows are encoded into frames ([`representation`]), a
//! SuperPoint-style network ([`network`]) predicts an 8×8-cell keypoint
//! heatmap and a dense descriptor field, and the network is trained without
//! annotations ([`selfsup`]) from pseudo-labels obtained by homographic
//! adaptation and from the equivalence of overlapping temporal windows.
//! [`features`] and [`evaluation`] turn network outputs into matches and
//! score them; [`synth`] generates event streams with exact ground truth.

pub mod error;
pub mod evaluation;
pub mod event_model;
pub mod features;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod network;
pub mod representation;
pub mod selfsup;
pub mod synth;

pub use error::{Error, Result};
pub use event_model::{Event, EventStream, Geometry, Micros, Polarity, TemporalWindow};
pub use features::{FeatureSet, Keypoint};
pub use geometry::{Homography, Match, Point2};
pub use network::WeightSet;
pub use representation::{Frame1, Frame3, FrameTriplet, Mask, Representation};
