//! Ring-road geometry.

use crate::params::RING_LENGTH;

/// Distance travelled forward from `from` to reach `to`, in `[0, RING_LENGTH)`.
#[inline]
pub fn forward_distance(from: f64, to: f64) -> f64 {
    (to - from).rem_euclid(RING_LENGTH)
}

/// Signed longitudinal offset of `to` relative to `from` with the smallest
/// magnitude over both directions around the ring. Exactly half a ring maps
/// to the positive side.
#[inline]
pub fn signed_gap(from: f64, to: f64) -> f64 {
    let d = forward_distance(from, to);
    if d > RING_LENGTH / 2.0 {
        d - RING_LENGTH
    } else {
        d
    }
}

#[inline]
pub fn wrap(p: f64) -> f64 {
    let w = p.rem_euclid(RING_LENGTH);
    // rem_euclid can round up to exactly RING_LENGTH for tiny negative inputs
    if w >= RING_LENGTH {
        0.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraps_around_ring() {
        assert_eq!(signed_gap(990.0, 30.0), 40.0);
        assert_eq!(signed_gap(30.0, 990.0), -40.0);
        assert_eq!(forward_distance(30.0, 990.0), 960.0);
        assert_eq!(wrap(1003.0), 3.0);
        assert_eq!(wrap(-1e-18), 0.0);
    }
}
