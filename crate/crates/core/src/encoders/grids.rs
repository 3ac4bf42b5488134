//! Fixed-size views of an observation: the relational grid and the
//! occupancy grid.

use setrl_highway::params::{SENSOR_RANGE, VEHICLE_LENGTH};
use setrl_highway::{DynamicFeature, Observation};

/// Neighbourhood of the relational grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationalGridSpec {
    pub ahead: usize,
    pub behind: usize,
    pub lateral: usize,
}

impl Default for RelationalGridSpec {
    fn default() -> Self {
        Self {
            ahead: 2,
            behind: 2,
            lateral: 2,
        }
    }
}

impl RelationalGridSpec {
    pub fn slots(&self) -> usize {
        (2 * self.lateral + 1) * (self.ahead + self.behind)
    }

    /// Slot features only, without the static block.
    pub fn slot_features(&self) -> usize {
        2 * self.slots()
    }

    pub fn len(&self) -> usize {
        self.slot_features() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `(dr, dv)` for every slot. Lanes run left to right; within a lane the
/// nearest leaders come first, then the nearest followers. Missing vehicles
/// read as a same-speed car at sensor range: `(1, 0)` ahead, `(-1, 0)` behind.
/// Vehicles with `dr >= 0` count as leaders. Equal distances keep set order.
pub fn relational_slots(obs: &Observation, spec: &RelationalGridSpec) -> Vec<f32> {
    let mut out = Vec::with_capacity(spec.slot_features());
    let lat = spec.lateral as i32;
    for dl in -lat..=lat {
        let in_lane = obs.dynamic.iter().filter(|f| f.dl as i32 == dl);
        let mut leaders: Vec<&DynamicFeature> = in_lane.clone().filter(|f| f.dr >= 0.0).collect();
        let mut followers: Vec<&DynamicFeature> = in_lane.filter(|f| f.dr < 0.0).collect();
        leaders.sort_by(|a, b| a.dr.abs().total_cmp(&b.dr.abs()));
        followers.sort_by(|a, b| a.dr.abs().total_cmp(&b.dr.abs()));
        for k in 0..spec.ahead {
            match leaders.get(k) {
                Some(f) => out.extend([f.dr, f.dv]),
                None => out.extend([1.0, 0.0]),
            }
        }
        for k in 0..spec.behind {
            match followers.get(k) {
                Some(f) => out.extend([f.dr, f.dv]),
                None => out.extend([-1.0, 0.0]),
            }
        }
    }
    out
}

/// Slot features followed by the three static inputs.
pub fn build_relational_grid(obs: &Observation, spec: &RelationalGridSpec) -> Vec<f32> {
    let mut v = relational_slots(obs, spec);
    v.extend(obs.static_features.as_input());
    v
}

/// Bird's-eye grid: `rows` longitudinal cells over `[-range, range)` and
/// `cols` lanes centred on the ego lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyGridSpec {
    pub rows: usize,
    pub cols: usize,
    pub range: f64,
}

impl Default for OccupancyGridSpec {
    fn default() -> Self {
        Self {
            rows: 80,
            cols: 5,
            range: SENSOR_RANGE,
        }
    }
}

impl OccupancyGridSpec {
    pub fn cell_length(&self) -> f64 {
        2.0 * self.range / self.rows as f64
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows whose cells intersect the body centred at `x`.
    fn rows_for(&self, x: f64) -> std::ops::RangeInclusive<usize> {
        let cell = self.cell_length();
        let lo = x - VEHICLE_LENGTH / 2.0 + self.range;
        let hi = x + VEHICLE_LENGTH / 2.0 + self.range;
        let first = (lo / cell).floor().max(0.0) as usize;
        let last = ((hi / cell).ceil() as isize - 1).min(self.rows as isize - 1).max(0) as usize;
        first..=last
    }
}

/// Row-major `rows x cols` grid. Surrounding vehicles write `1 + dv` into
/// every cell their body overlaps (largest value wins on overlap), the ego
/// body writes 1, free cells stay 0. Vehicles centred outside
/// `[-range, range)` or more than `cols / 2` lanes away are left out.
pub fn build_occupancy_grid(obs: &Observation, spec: &OccupancyGridSpec) -> Vec<f32> {
    let mut grid = vec![0.0f32; spec.len()];
    let half = (spec.cols / 2) as i32;
    for f in &obs.dynamic {
        let x = f.dr as f64 * spec.range;
        if x < -spec.range || x >= spec.range || (f.dl as i32).abs() > half {
            continue;
        }
        let col = (half + f.dl as i32) as usize;
        let value = 1.0 + f.dv;
        for r in spec.rows_for(x) {
            let cell = &mut grid[r * spec.cols + col];
            *cell = cell.max(value);
        }
    }
    for r in spec.rows_for(0.0) {
        grid[r * spec.cols + half as usize] = 1.0;
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use setrl_highway::StaticFeature;

    fn obs(items: &[(f32, f32, i8)]) -> Observation {
        Observation {
            dynamic: items
                .iter()
                .map(|&(dr, dv, dl)| DynamicFeature { dr, dv, dl })
                .collect(),
            static_features: StaticFeature {
                v_ego: 12.0,
                left_available: true,
                right_available: false,
            },
        }
    }

    #[test]
    fn empty_road_relational_defaults() {
        let g = build_relational_grid(&obs(&[]), &RelationalGridSpec::default());
        assert_eq!(g.len(), 43);
        for lane in 0..5 {
            let s = &g[lane * 8..lane * 8 + 8];
            assert_eq!(s, &[1.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0, 0.0]);
        }
        assert_eq!(&g[40..], &[0.5, 1.0, 0.0]);
    }

    #[test]
    fn single_leader_fills_first_ego_lane_slot() {
        let g = build_relational_grid(&obs(&[(0.5, -0.1, 0)]), &RelationalGridSpec::default());
        let mut expected = build_relational_grid(&obs(&[]), &RelationalGridSpec::default());
        expected[16] = 0.5;
        expected[17] = -0.1;
        assert_eq!(g, expected);
    }

    #[test]
    fn nearest_two_kept_in_order() {
        let o = obs(&[(0.9, 0.0, -1), (0.2, 0.3, -1), (0.4, 0.1, -1), (-0.3, 0.0, -1)]);
        let g = relational_slots(&o, &RelationalGridSpec::default());
        assert_eq!(&g[8..16], &[0.2, 0.3, 0.4, 0.1, -0.3, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn far_lanes_ignored() {
        let g = relational_slots(&obs(&[(0.1, 0.0, 3)]), &RelationalGridSpec::default());
        assert_eq!(g, relational_slots(&obs(&[]), &RelationalGridSpec::default()));
    }

    #[test]
    fn default_slot_equals_car_at_range() {
        let spec = RelationalGridSpec::default();
        let a = relational_slots(&obs(&[(1.0, 0.0, 1), (-1.0, 0.0, 2)]), &spec);
        assert_eq!(a, relational_slots(&obs(&[]), &spec));
    }

    #[test]
    fn empty_road_occupancy_only_ego() {
        let spec = OccupancyGridSpec::default();
        let g = build_occupancy_grid(&obs(&[]), &spec);
        assert_eq!(g.len(), 400);
        let ones: Vec<usize> = (0..400).filter(|&i| g[i] != 0.0).collect();
        assert_eq!(ones, vec![38 * 5 + 2, 39 * 5 + 2, 40 * 5 + 2, 41 * 5 + 2]);
        assert!(ones.iter().all(|&i| g[i] == 1.0));
    }

    #[test]
    fn vehicle_cells_carry_relative_speed() {
        let spec = OccupancyGridSpec::default();
        // centre at +20 m, body [17.75, 22.25) -> rows 48..=51, one lane right
        let g = build_occupancy_grid(&obs(&[(0.25, 0.2, 1)]), &spec);
        for r in 48..=51 {
            assert_eq!(g[r * 5 + 3], 1.2);
        }
        assert_eq!(g[47 * 5 + 3], 0.0);
        assert_eq!(g[52 * 5 + 3], 0.0);
    }

    #[test]
    fn vehicle_at_range_excluded() {
        let spec = OccupancyGridSpec::default();
        let g = build_occupancy_grid(&obs(&[(1.0, 0.5, 0), (-1.0, 0.5, 0)]), &spec);
        assert_eq!(g[79 * 5 + 2], 0.0);
        assert_eq!(g[2], 1.5, "rear edge is inside the half-open window");
    }
}
