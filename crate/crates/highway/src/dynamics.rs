//! Longitudinal car following, the agent safety module and the rule-based
//! lane-change controller.

use rand::Rng;

use crate::params::{DriverType, SENSOR_RANGE};
use crate::vehicle::{follower_in_lane, leader_in_lane, Action, Vehicle};

/// Largest speed that still lets the follower stop behind a leader braking
/// at the follower's deceleration, given reaction time `headway`:
/// `-b*tau + sqrt(b^2 tau^2 + v_l^2 + 2 b (gap - min_gap))`.
pub fn safe_speed(driver: &DriverType, gap: f64, leader_speed: f64) -> f64 {
    let b = driver.decel;
    let bt = b * driver.headway;
    let net = gap - driver.min_gap;
    let arg = bt * bt + leader_speed * leader_speed + 2.0 * b * net;
    if arg <= 0.0 {
        return 0.0;
    }
    (-bt + arg.sqrt()).max(0.0)
}

/// Krauss-style speed update. `leader` is `(bumper gap, leader speed)`;
/// `None` means open road. Braking below `v - decel*dt` is allowed when the
/// safe speed demands it.
pub fn longitudinal_update(driver: &DriverType, speed: f64, leader: Option<(f64, f64)>, dt: f64) -> f64 {
    let mut v = (speed + driver.accel * dt).min(driver.max_speed);
    if let Some((gap, vl)) = leader {
        v = v.min(safe_speed(driver, gap, vl));
    }
    v.max(0.0)
}

/// Leader constraint over every lane the vehicle occupies: the neighbour
/// that yields the lowest safe speed.
pub fn binding_leader(vehicles: &[Vehicle], idx: usize) -> Option<(f64, f64)> {
    let me = &vehicles[idx];
    me.occupied_lanes()
        .filter_map(|lane| leader_in_lane(vehicles, lane, me.position, idx))
        .map(|n| (n.gap, n.speed))
        .min_by(|a, b| {
            safe_speed(&me.driver, a.0, a.1).total_cmp(&safe_speed(&me.driver, b.0, b.1))
        })
}

/// Gap acceptance for moving vehicle `idx` into `target`: the target-lane
/// leader gap must be at least `min_gap + v * headway` and the follower gap
/// at least `min_gap + v_follower * headway`.
pub fn gaps_acceptable(vehicles: &[Vehicle], idx: usize, target: usize) -> bool {
    let me = &vehicles[idx];
    let d = &me.driver;
    if let Some(l) = leader_in_lane(vehicles, target, me.position, idx) {
        if l.gap < d.min_gap + me.speed * d.headway {
            return false;
        }
    }
    if let Some(f) = follower_in_lane(vehicles, target, me.position, idx) {
        if f.gap < d.min_gap + f.speed * d.headway {
            return false;
        }
    }
    true
}

/// Agent safety module: returns the action actually executed. Lane changes
/// into a missing lane, with too small gaps, or while a change is already in
/// progress become `Keep`.
pub fn safety_check(vehicles: &[Vehicle], idx: usize, action: Action, lanes: usize) -> Action {
    if action == Action::Keep {
        return Action::Keep;
    }
    let me = &vehicles[idx];
    if me.lane_change.is_some() {
        return Action::Keep;
    }
    match action.target_lane(me.lane, lanes) {
        Some(t) if gaps_acceptable(vehicles, idx, t) => action,
        _ => Action::Keep,
    }
}

/// Speed gain (m/s) a driver must anticipate before changing lanes.
pub fn speed_gain_threshold(driver: &DriverType) -> f64 {
    20.0 / driver.lc_speed_gain.max(1e-6)
}

/// Speed a driver expects to sustain in `lane`: its own maximum, capped by a
/// leader within sensor range, which may be closed on at `gap / 10 s`.
pub fn anticipated_speed(vehicles: &[Vehicle], idx: usize, lane: usize) -> f64 {
    let me = &vehicles[idx];
    let d = &me.driver;
    match leader_in_lane(vehicles, lane, me.position, idx) {
        Some(l) if l.gap < SENSOR_RANGE => {
            let closing = l.speed + (l.gap - d.min_gap).max(0.0) / 10.0;
            d.max_speed.min(closing).min(safe_speed(d, l.gap, l.speed))
        }
        _ => d.max_speed,
    }
}

/// Heuristic lane-change controller.
///
/// A vehicle changes toward an adjacent lane when (a) the anticipated speed
/// there beats the current lane by more than [`speed_gain_threshold`], and
/// (b) [`gaps_acceptable`] holds. When no gain-driven change fires and a
/// faster follower is tailgating, the vehicle yields with probability
/// `lc_cooperative` to any acceptable lane that costs at most the threshold.
/// There is no keep-right bias; ties prefer the left lane.
pub fn rule_based_lane_change<R: Rng + ?Sized>(
    vehicles: &[Vehicle],
    idx: usize,
    lanes: usize,
    rng: &mut R,
) -> Action {
    let me = &vehicles[idx];
    if me.lane_change.is_some() {
        return Action::Keep;
    }
    let threshold = speed_gain_threshold(&me.driver);
    let here = anticipated_speed(vehicles, idx, me.lane);
    let candidates: Vec<(Action, usize, f64)> = [Action::Left, Action::Right]
        .into_iter()
        .filter_map(|a| a.target_lane(me.lane, lanes).map(|t| (a, t)))
        .filter(|&(_, t)| gaps_acceptable(vehicles, idx, t))
        .map(|(a, t)| (a, t, anticipated_speed(vehicles, idx, t) - here))
        .collect();

    let best = candidates
        .iter()
        .filter(|c| c.2 > threshold)
        .fold(None::<&(Action, usize, f64)>, |b, c| match b {
            Some(b) if b.2 >= c.2 => Some(b),
            _ => Some(c),
        });
    if let Some(c) = best {
        return c.0;
    }

    if me.driver.lc_cooperative > 0.0 {
        if let Some(f) = follower_in_lane(vehicles, me.lane, me.position, idx) {
            let faster = vehicles[f.index].driver.max_speed > me.driver.max_speed + 1.0;
            let close = f.gap < me.driver.min_gap + 2.0 * f.speed * me.driver.headway;
            if faster && close && rng.random::<f64>() < me.driver.lc_cooperative {
                if let Some(c) = candidates.iter().find(|c| c.2 >= -threshold) {
                    return c.0;
                }
            }
        }
    }
    Action::Keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{DriverKind, DriverType};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn driver(max_speed: f64, gain: f64, coop: f64) -> DriverType {
        DriverType {
            max_speed,
            lc_speed_gain: gain,
            lc_cooperative: coop,
            ..DriverType::ego()
        }
    }

    fn car(id: u32, position: f64, lane: usize, speed: f64, d: DriverType) -> Vehicle {
        Vehicle {
            id,
            position,
            lane,
            speed,
            driver: d,
            lane_change: None,
        }
    }

    #[test]
    fn open_road_acceleration() {
        let d = DriverType::ego();
        assert!((longitudinal_update(&d, 0.0, None, 0.5) - 1.3).abs() < 1e-12);
        assert_eq!(longitudinal_update(&d, 24.0, None, 0.5), 24.0);
    }

    #[test]
    fn stopped_leader_at_min_gap_forces_stop() {
        let d = DriverType::ego();
        assert_eq!(safe_speed(&d, d.min_gap, 0.0), 0.0);
        assert_eq!(longitudinal_update(&d, 10.0, Some((d.min_gap, 0.0)), 0.5), 0.0);
    }

    #[test]
    fn safe_speed_matches_closed_form() {
        let d = DriverType::ego();
        // b = 4.5, tau = 0.5: -2.25 + sqrt(5.0625 + 100 + 9 * 18)
        let expected = -2.25 + (5.0625f64 + 100.0 + 162.0).sqrt();
        assert!((safe_speed(&d, 20.0, 10.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn safety_rejects_missing_lane() {
        let cars = vec![car(0, 100.0, 0, 20.0, DriverType::ego())];
        assert_eq!(safety_check(&cars, 0, Action::Left, 3), Action::Keep);
        assert_eq!(safety_check(&cars, 0, Action::Right, 3), Action::Right);
    }

    #[test]
    fn safety_rejects_close_fast_follower() {
        // follower bumper gap 2 m at 20 m/s needs 2 + 20 * 0.5 = 12 m
        let cars = vec![
            car(0, 100.0, 1, 20.0, DriverType::ego()),
            car(1, 100.0 - 4.5 - 2.0, 0, 20.0, DriverType::ego()),
        ];
        assert_eq!(safety_check(&cars, 0, Action::Left, 3), Action::Keep);
        assert_eq!(safety_check(&cars, 0, Action::Right, 3), Action::Right);
    }

    #[test]
    fn rule_based_passes_slow_leader_into_empty_lane() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cars = vec![
            car(0, 100.0, 1, 20.0, driver(30.0, 15.0, 0.0)),
            car(1, 125.0, 1, 10.0, driver(10.0, 15.0, 0.0)),
        ];
        let a = rule_based_lane_change(&cars, 0, 3, &mut rng);
        assert_eq!(a, Action::Left, "ties between two free lanes go left");
    }

    #[test]
    fn rule_based_respects_follower_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cars = vec![
            car(0, 100.0, 0, 20.0, driver(30.0, 15.0, 0.0)),
            car(1, 125.0, 0, 10.0, driver(10.0, 15.0, 0.0)),
            car(2, 94.0, 1, 20.0, driver(30.0, 15.0, 0.0)),
        ];
        assert_eq!(rule_based_lane_change(&cars, 0, 2, &mut rng), Action::Keep);
    }

    #[test]
    fn eagerness_is_monotone_in_speed_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // leader 60 m ahead at 15 m/s; target lane leader slightly faster
        let mut last_changed = false;
        for gain in [1.0, 5.0, 10.0, 15.0, 20.0, 40.0, 100.0] {
            let cars = vec![
                car(0, 100.0, 0, 15.0, driver(30.0, gain, 0.0)),
                car(1, 160.0, 0, 15.0, driver(15.0, 15.0, 0.0)),
                car(2, 190.0, 1, 16.0, driver(16.0, 15.0, 0.0)),
            ];
            let changed = rule_based_lane_change(&cars, 0, 2, &mut rng) == Action::Right;
            assert!(changed || !last_changed, "eagerness dropped at gain {gain}");
            last_changed = changed;
        }
        assert!(last_changed);
        assert!(speed_gain_threshold(&driver(1.0, 10.0, 0.0)) > speed_gain_threshold(&driver(1.0, 20.0, 0.0)));
    }

    #[test]
    fn cooperative_driver_yields_to_faster_follower() {
        let slow = DriverType {
            kind: DriverKind::Type2,
            ..driver(12.0, 10.0, 1.0)
        };
        let cars = vec![
            car(0, 100.0, 1, 12.0, slow),
            car(1, 100.0 - 4.5 - 4.0, 1, 12.0, driver(30.0, 15.0, 0.0)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_ne!(rule_based_lane_change(&cars, 0, 3, &mut rng), Action::Keep);
        let stubborn = vec![
            car(0, 100.0, 1, 12.0, DriverType { lc_cooperative: 0.0, ..slow }),
            cars[1].clone(),
        ];
        assert_eq!(rule_based_lane_change(&stubborn, 0, 3, &mut rng), Action::Keep);
    }
}
