//! Road geometry, vehicle dynamics constants and driver types.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const RING_LENGTH: f64 = 1000.0;
pub const VEHICLE_LENGTH: f64 = 4.5;
pub const MIN_GAP: f64 = 2.0;
pub const HEADWAY: f64 = 0.5;
pub const ACCEL: f64 = 2.6;
pub const DECEL: f64 = 4.5;
/// Simulation step in seconds.
pub const SIM_DT: f64 = 0.5;
pub const LANE_CHANGE_DURATION: f64 = 2.0;
/// Simulation steps per agent action (2 s).
pub const STEPS_PER_ACTION: usize = 4;
pub const V_DESIRED: f64 = 24.0;
pub const SENSOR_RANGE: f64 = 80.0;
pub const LANE_CHANGE_PENALTY: f64 = 0.01;
pub const DRIVER_POOL_SIZE: usize = 100;
pub const DEFAULT_EPISODE_ACTIONS: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DriverKind {
    Ego,
    Type1,
    Type2,
    Type3,
    Type4,
}

impl DriverKind {
    /// Base maximum speed and cooperativeness.
    fn base(self) -> (f64, f64) {
        match self {
            DriverKind::Ego => (24.0, 0.0),
            DriverKind::Type1 => (24.0, 0.0),
            DriverKind::Type2 => (12.0, 1.0),
            DriverKind::Type3 => (18.0, 0.8),
            DriverKind::Type4 => (21.0, 0.4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverType {
    pub kind: DriverKind,
    pub max_speed: f64,
    pub lc_speed_gain: f64,
    pub lc_cooperative: f64,
    pub accel: f64,
    pub decel: f64,
    pub min_gap: f64,
    pub headway: f64,
}

impl DriverType {
    fn with(kind: DriverKind, max_speed: f64, lc_speed_gain: f64, lc_cooperative: f64) -> Self {
        Self {
            kind,
            max_speed,
            lc_speed_gain,
            lc_cooperative,
            accel: ACCEL,
            decel: DECEL,
            min_gap: MIN_GAP,
            headway: HEADWAY,
        }
    }

    /// The controlled vehicle. Its lane-change parameters only matter when the
    /// rule-based controller drives it; 15 is the middle of the traffic range.
    pub fn ego() -> Self {
        Self::with(DriverKind::Ego, V_DESIRED, 15.0, 0.0)
    }

    /// Samples a traffic driver of `kind`: max speed offset `u ~ U(-5, 5)`,
    /// speed-gain eagerness `i ~ U(10, 20)`.
    pub fn sample<R: Rng + ?Sized>(kind: DriverKind, rng: &mut R) -> Self {
        let (base, coop) = kind.base();
        let u = rng.random_range(-5.0..5.0);
        let i = rng.random_range(10.0..20.0);
        Self::with(kind, base + u, i, coop)
    }
}

/// Drivers sampled once up front, uniformly over types 1-4.
pub fn driver_pool(seed: u64) -> Vec<DriverType> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        DriverKind::Type1,
        DriverKind::Type2,
        DriverKind::Type3,
        DriverKind::Type4,
    ];
    (0..DRIVER_POOL_SIZE)
        .map(|_| {
            let kind = kinds[rng.random_range(0..kinds.len())];
            DriverType::sample(kind, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_speeds_within_five_of_base() {
        let pool = driver_pool(3);
        assert_eq!(pool.len(), DRIVER_POOL_SIZE);
        for d in &pool {
            let (base, coop) = d.kind.base();
            assert!(d.max_speed >= base - 5.0 && d.max_speed <= base + 5.0);
            assert!((10.0..=20.0).contains(&d.lc_speed_gain));
            assert_eq!(d.lc_cooperative, coop);
            assert!(d.max_speed > 0.0);
        }
    }

    #[test]
    fn pool_covers_all_types() {
        let pool = driver_pool(0);
        for k in [
            DriverKind::Type1,
            DriverKind::Type2,
            DriverKind::Type3,
            DriverKind::Type4,
        ] {
            assert!(pool.iter().any(|d| d.kind == k));
        }
        assert_eq!(pool, driver_pool(0));
    }
}
