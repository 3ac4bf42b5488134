//! Seeded ring-road highway simulator.
//!
//! A 1000 m circular road with 3 or 5 lanes, heterogeneous rule-based
//! traffic, Krauss-style car following and an ego vehicle controlled through
//! discrete lane-change decisions every 2 s. Lane 0 is the leftmost lane.

pub mod dynamics;
pub mod error;
pub mod observation;
pub mod params;
pub mod reward;
pub mod ring;
pub mod sim;
pub mod vehicle;

pub use dynamics::{longitudinal_update, rule_based_lane_change, safe_speed, safety_check};
pub use error::SimError;
pub use observation::{extract_features, DynamicFeature, DynamicSet, Observation, StaticFeature};
pub use params::{driver_pool, DriverKind, DriverType};
pub use reward::reward;
pub use sim::{ScenarioConfig, Simulator, StepOutcome, EGO_ID};
pub use vehicle::{Action, LaneChange, Vehicle};
