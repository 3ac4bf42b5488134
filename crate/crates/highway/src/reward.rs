use crate::params::LANE_CHANGE_PENALTY;
use crate::vehicle::Action;

/// `1 - |v_ego - v_desired| / v_desired - p_lc`, with `p_lc = 0.01` for any
/// lane-change action.
pub fn reward(v_ego: f64, v_desired: f64, action: Action) -> f64 {
    let penalty = if action.is_lane_change() {
        LANE_CHANGE_PENALTY
    } else {
        0.0
    };
    1.0 - (v_ego - v_desired).abs() / v_desired - penalty
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(reward(24.0, 24.0, Action::Keep), 1.0);
        assert_eq!(reward(24.0, 24.0, Action::Left), 0.99);
        assert_eq!(reward(24.0, 24.0, Action::Right), 0.99);
        assert_eq!(reward(12.0, 24.0, Action::Keep), 0.5);
    }
}
