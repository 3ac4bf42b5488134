use serde::{Deserialize, Serialize};

use crate::params::{DriverType, LANE_CHANGE_DURATION, VEHICLE_LENGTH};
use crate::ring::forward_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Keep,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Keep, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Keep => 0,
            Action::Left => 1,
            Action::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_lane_change(self) -> bool {
        self != Action::Keep
    }

    /// Target lane from `lane`. Lane 0 is the leftmost lane.
    pub fn target_lane(self, lane: usize, lanes: usize) -> Option<usize> {
        match self {
            Action::Keep => Some(lane),
            Action::Left => lane.checked_sub(1),
            Action::Right => (lane + 1 < lanes).then_some(lane + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub target: usize,
    /// Seconds since the manoeuvre started.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    /// Centre position along the ring, `[0, RING_LENGTH)`.
    pub position: f64,
    /// Source lane while a lane change is in progress.
    pub lane: usize,
    pub speed: f64,
    pub driver: DriverType,
    pub lane_change: Option<LaneChange>,
}

impl Vehicle {
    pub fn length(&self) -> f64 {
        VEHICLE_LENGTH
    }

    /// A changing vehicle occupies its source and target lanes.
    pub fn occupies(&self, lane: usize) -> bool {
        self.lane == lane || self.lane_change.is_some_and(|lc| lc.target == lane)
    }

    pub fn occupied_lanes(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.lane).chain(self.lane_change.map(|lc| lc.target))
    }

    /// Lateral position in lane units, interpolated during a lane change.
    pub fn lateral(&self) -> f64 {
        match self.lane_change {
            None => self.lane as f64,
            Some(lc) => {
                let frac = (lc.elapsed / LANE_CHANGE_DURATION).clamp(0.0, 1.0);
                self.lane as f64 + (lc.target as f64 - self.lane as f64) * frac
            }
        }
    }

    /// Lane a sensor attributes the vehicle to: the nearest lane centre.
    /// Half-way ties go to the target lane.
    pub fn perceived_lane(&self) -> usize {
        match self.lane_change {
            None => self.lane,
            Some(lc) => {
                if lc.elapsed * 2.0 >= LANE_CHANGE_DURATION {
                    lc.target
                } else {
                    self.lane
                }
            }
        }
    }
}

/// Nearest vehicle ahead of or behind a position in one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Bumper-to-bumper distance; negative when bodies overlap.
    pub gap: f64,
    pub speed: f64,
}

/// Closest vehicle occupying `lane` whose centre is at or ahead of `position`.
/// Ties on distance go to the lower vehicle id.
pub fn leader_in_lane(vehicles: &[Vehicle], lane: usize, position: f64, exclude: usize) -> Option<Neighbor> {
    nearest(vehicles, lane, exclude, |v| forward_distance(position, v.position))
}

/// Closest vehicle occupying `lane` strictly behind `position`.
pub fn follower_in_lane(vehicles: &[Vehicle], lane: usize, position: f64, exclude: usize) -> Option<Neighbor> {
    nearest(vehicles, lane, exclude, |v| {
        let d = forward_distance(v.position, position);
        if d == 0.0 {
            f64::INFINITY
        } else {
            d
        }
    })
}

fn nearest(
    vehicles: &[Vehicle],
    lane: usize,
    exclude: usize,
    distance: impl Fn(&Vehicle) -> f64,
) -> Option<Neighbor> {
    let mut best: Option<(f64, u32, usize)> = None;
    for (i, v) in vehicles.iter().enumerate() {
        if i == exclude || !v.occupies(lane) {
            continue;
        }
        let d = distance(v);
        if !d.is_finite() {
            continue;
        }
        if best.is_none_or(|(bd, bid, _)| d < bd || (d == bd && v.id < bid)) {
            best = Some((d, v.id, i));
        }
    }
    best.map(|(d, _, i)| Neighbor {
        index: i,
        gap: d - VEHICLE_LENGTH,
        speed: vehicles[i].speed,
    })
}
