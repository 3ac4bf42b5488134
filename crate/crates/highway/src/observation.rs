//! Ego-relative perception of the scene.

use serde::{Deserialize, Serialize};

use crate::params::V_DESIRED;
use crate::ring::signed_gap;
use crate::vehicle::Vehicle;

/// Denominator offset for relative velocity.
pub const DV_EPSILON: f64 = 1e-3;
/// Relative velocity is clamped to `[-DV_LIMIT, DV_LIMIT]`.
pub const DV_LIMIT: f64 = 20.0;

/// Per-vehicle features relative to the ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicFeature {
    /// Signed longitudinal offset divided by the sensor range.
    pub dr: f32,
    /// `(v_j - v_ego) / (v_ego + eps)`, clamped.
    pub dv: f32,
    /// Lane offset; negative is to the left.
    pub dl: i8,
}

impl DynamicFeature {
    pub fn as_input(&self) -> [f32; 3] {
        [self.dr, self.dv, self.dl as f32]
    }
}

/// Variable-length set of surrounding vehicles, stored sorted by `(dl, dr)`.
pub type DynamicSet = Vec<DynamicFeature>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticFeature {
    /// Absolute ego speed in m/s.
    pub v_ego: f32,
    pub left_available: bool,
    pub right_available: bool,
}

impl StaticFeature {
    /// Network input: speed normalized by the desired speed, then the two lane flags.
    pub fn as_input(&self) -> [f32; 3] {
        [
            self.v_ego / V_DESIRED as f32,
            self.left_available as u8 as f32,
            self.right_available as u8 as f32,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub dynamic: DynamicSet,
    pub static_features: StaticFeature,
}

impl Observation {
    pub fn vehicles_in_range(&self) -> usize {
        self.dynamic.len()
    }
}

pub fn relative_velocity(v: f64, v_ego: f64) -> f64 {
    ((v - v_ego) / (v_ego + DV_EPSILON)).clamp(-DV_LIMIT, DV_LIMIT)
}

/// One feature per non-ego vehicle whose ring-signed centre offset satisfies
/// `|gap| <= d_max`. Lanes are the ones a sensor would report (nearest lane
/// centre for vehicles mid lane change).
pub fn extract_features(vehicles: &[Vehicle], ego: usize, d_max: f64, lanes: usize) -> Observation {
    let me = &vehicles[ego];
    let ego_lane = me.perceived_lane();
    let mut tagged: Vec<(u32, DynamicFeature)> = vehicles
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ego)
        .filter_map(|(_, v)| {
            let gap = signed_gap(me.position, v.position);
            (gap.abs() <= d_max).then(|| {
                (
                    v.id,
                    DynamicFeature {
                        dr: (gap / d_max) as f32,
                        dv: relative_velocity(v.speed, me.speed) as f32,
                        dl: (v.perceived_lane() as i64 - ego_lane as i64) as i8,
                    },
                )
            })
        })
        .collect();
    tagged.sort_by(|(ia, a), (ib, b)| {
        a.dl.cmp(&b.dl)
            .then(a.dr.total_cmp(&b.dr))
            .then(ia.cmp(ib))
    });
    Observation {
        dynamic: tagged.into_iter().map(|(_, f)| f).collect(),
        static_features: StaticFeature {
            v_ego: me.speed as f32,
            left_available: ego_lane > 0,
            right_available: ego_lane + 1 < lanes,
        },
    }
}
