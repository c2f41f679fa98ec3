//! A virtual two-crystal entangled-photon source with polarization
//! analyzers, hidden-variable models, and the analysis used to test the
//! CHSH inequality against them.
//!
//! Angles are in degrees at every public boundary. The [`Angle`] type
//! handles wrapping; plain `f64` degrees appear in serialized records.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod angle;
pub mod apparatus;
pub mod error;
pub mod estimation;
pub mod hvt;
pub mod io;
pub mod par;
pub mod qm;
pub mod rng;

pub use angle::{deg, Angle, ChshAngles};
pub use apparatus::{ApparatusConfig, CountRecord, Dials, LiveSession, PhaseSpread, PumpSource, SharedSession};
pub use error::{Error, Result};
pub use qm::{CountModelParams, TwoPhotonState};
