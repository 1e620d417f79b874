//! Numerical checks of the Stein-method argument: the Stein solution,
//! decomposition, drift lemmas, tail bound, collapse sets and delay bounds.

mod constants;
mod corollary;
mod decomposition;
mod drift;
mod record;
mod ssc;
mod stein_fn;

pub use constants::DerivedConstants;
pub use corollary::{corollary_bounds, corollary_formulas, CorollaryBounds};
pub use decomposition::{stein_decomposition, stein_decomposition_at, Decomposition, IDENTITY_TOL};
pub use drift::{
    calibrate_spec, calibrate_spec_with, drift_claims, drift_condition_scan, lemma_threshold_and_region,
    lyapunov_drift, tail_bound_verify, tail_constants, ClaimReport, DriftClaim, DriftScanReport, DriftSpec,
    LyapunovFn, Region, SideConditions, TailReport, TailRow, CLOSED_FORM_TOL,
};
pub use record::{CheckRecord, CheckStatus};
pub use ssc::{ssc1_floor, ssc1_min_departure, ssc_flags, ssc_flags_at, Corner, CornerValue, SSCFlags, SscCoords, Ssc1MinDeparture};
pub use stein_fn::{gradient_bound_check, GradientReport, SteinFn};
