//! Switching rates of bistable driven-dissipative bosonic modes.
//!
//! Analytic rates come from a closed-form Keldysh potential, numerical
//! rates from the dissipative gap of the truncated Lindbladian, and
//! optimal escape paths from shooting on the saddle-point equations.

pub mod instanton;
pub mod keldysh;
pub mod lindblad;
pub mod meanfield;
pub mod model;
pub mod sweep;

pub use instanton::{InstantonError, InstantonShot, SaddleJacobian, Trajectory};
pub use keldysh::{KeldyshError, PhaseSpaceState, PotentialCoeffs, RateEstimate};
pub use lindblad::{GapMethod, LindbladError, SpectralSummary, Superoperator};
pub use meanfield::{FixedPoint, FixedPointSet, MeanFieldError, Stability};
pub use model::{DerivedCoeffs, Imperfection, ModelError, Preset, SystemParams};
pub use sweep::{SweepError, SweepRow, SweepSpec, SweepVariable};
