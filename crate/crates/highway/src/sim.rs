//! Scenario spawning and the stepping loop.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{binding_leader, longitudinal_update, rule_based_lane_change, safe_speed, safety_check};
use crate::error::SimError;
use crate::observation::{extract_features, Observation};
use crate::params::{
    driver_pool, DriverType, DEFAULT_EPISODE_ACTIONS, LANE_CHANGE_DURATION, MIN_GAP, RING_LENGTH, SENSOR_RANGE,
    SIM_DT, STEPS_PER_ACTION, VEHICLE_LENGTH, V_DESIRED,
};
use crate::reward::reward;
use crate::ring::{forward_distance, wrap};
use crate::vehicle::{leader_in_lane, Action, LaneChange, Vehicle};

pub const EGO_ID: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Surrounding vehicles; the ego comes on top.
    pub vehicles: usize,
    pub lanes: usize,
    pub seed: u64,
    pub episode_actions: usize,
    pub driver_pool_seed: u64,
}

impl ScenarioConfig {
    pub fn new(vehicles: usize, lanes: usize, seed: u64) -> Self {
        Self {
            vehicles,
            lanes,
            seed,
            episode_actions: DEFAULT_EPISODE_ACTIONS,
            driver_pool_seed: 0,
        }
    }

    /// Spawn slots per lane: vehicles sit at least `length + min_gap` apart.
    pub fn slots_per_lane() -> usize {
        (RING_LENGTH / (VEHICLE_LENGTH + MIN_GAP)).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub effective: Action,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    config: ScenarioConfig,
    vehicles: Vec<Vehicle>,
    ego: usize,
    rng: ChaCha8Rng,
    time_steps: u64,
    actions_taken: usize,
}

impl Simulator {
    pub fn spawn(config: ScenarioConfig) -> Result<Self, SimError> {
        if config.lanes == 0 {
            return Err(SimError::InvalidScenario("no lanes".into()));
        }
        let slots_per_lane = ScenarioConfig::slots_per_lane();
        let slots = slots_per_lane * config.lanes;
        let total = config.vehicles + 1;
        if total > slots {
            return Err(SimError::CapacityExceeded {
                vehicles: total,
                lanes: config.lanes,
                slots,
            });
        }
        let pool = driver_pool(config.driver_pool_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let slot_len = RING_LENGTH / slots_per_lane as f64;
        let jitter = slot_len - (VEHICLE_LENGTH + MIN_GAP);
        let mut chosen = sample(&mut rng, slots, total).into_vec();
        chosen.sort_unstable();
        let mut vehicles: Vec<Vehicle> = Vec::with_capacity(total);
        for slot in &chosen {
            let lane = slot / slots_per_lane;
            let pos = (slot % slots_per_lane) as f64 * slot_len + rng.random_range(0.0..=jitter.max(0.0));
            vehicles.push(Vehicle {
                id: 0,
                position: wrap(pos),
                lane,
                speed: 0.0,
                driver: pool[rng.random_range(0..pool.len())],
                lane_change: None,
            });
        }
        // the ego takes a random one of the occupied slots
        let ego = rng.random_range(0..total);
        vehicles[ego].driver = DriverType::ego();
        let mut next_id = 1;
        for (i, v) in vehicles.iter_mut().enumerate() {
            if i == ego {
                v.id = EGO_ID;
            } else {
                v.id = next_id;
                next_id += 1;
            }
        }
        // start at a speed that is safe even if the leader stands still
        for i in 0..vehicles.len() {
            let lead = leader_in_lane(&vehicles, vehicles[i].lane, vehicles[i].position, i);
            let d = vehicles[i].driver;
            let mut v = d.max_speed * rng.random_range(0.5..1.0);
            if let Some(l) = lead {
                v = v.min(safe_speed(&d, l.gap, 0.0));
            }
            vehicles[i].speed = v.max(0.0);
        }
        Ok(Self {
            config,
            vehicles,
            ego,
            rng,
            time_steps: 0,
            actions_taken: 0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn lanes(&self) -> usize {
        self.config.lanes
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn ego_index(&self) -> usize {
        self.ego
    }

    pub fn ego(&self) -> &Vehicle {
        &self.vehicles[self.ego]
    }

    pub fn time_steps(&self) -> u64 {
        self.time_steps
    }

    pub fn actions_taken(&self) -> usize {
        self.actions_taken
    }

    pub fn done(&self) -> bool {
        self.actions_taken >= self.config.episode_actions
    }

    pub fn observe(&self) -> Observation {
        extract_features(&self.vehicles, self.ego, SENSOR_RANGE, self.config.lanes)
    }

    /// What the safety module would execute for `action` right now.
    pub fn effective_action(&self, action: Action) -> Action {
        safety_check(&self.vehicles, self.ego, action, self.config.lanes)
    }

    /// Rule-based controller decision for the ego, before the safety module.
    pub fn rule_based_action(&mut self) -> Action {
        rule_based_lane_change(&self.vehicles, self.ego, self.config.lanes, &mut self.rng)
    }

    /// Applies the safety module and starts the ego lane change, if any.
    pub fn begin_agent_action(&mut self, action: Action) -> Action {
        let effective = self.effective_action(action);
        if effective.is_lane_change() {
            let ego = &mut self.vehicles[self.ego];
            let target = effective
                .target_lane(ego.lane, self.config.lanes)
                .expect("safety module checked the lane");
            ego.lane_change = Some(LaneChange { target, elapsed: 0.0 });
        }
        effective
    }

    /// One agent decision: safety module, then 2 s of simulation. The reward
    /// is charged for the chosen action, not the executed one.
    pub fn step_agent_action(&mut self, action: Action) -> StepOutcome {
        let effective = self.begin_agent_action(action);
        for _ in 0..STEPS_PER_ACTION {
            self.sim_step();
        }
        self.actions_taken += 1;
        StepOutcome {
            reward: reward(self.ego().speed, V_DESIRED, action),
            effective,
        }
    }

    /// Advances every vehicle by one simulation step.
    pub fn sim_step(&mut self) {
        let n = self.vehicles.len();
        let mut speeds: Vec<f64> = (0..n)
            .map(|i| {
                let v = &self.vehicles[i];
                longitudinal_update(&v.driver, v.speed, binding_leader(&self.vehicles, i), SIM_DT)
            })
            .collect();
        self.enforce_no_overlap(&mut speeds);

        for (v, s) in self.vehicles.iter_mut().zip(&speeds) {
            v.speed = *s;
            v.position = wrap(v.position + s * SIM_DT);
            if let Some(lc) = v.lane_change.as_mut() {
                lc.elapsed += SIM_DT;
                if lc.elapsed >= LANE_CHANGE_DURATION - 1e-9 {
                    v.lane = lc.target;
                    v.lane_change = None;
                }
            }
        }

        for i in 0..n {
            if i == self.ego {
                continue;
            }
            let decision = rule_based_lane_change(&self.vehicles, i, self.config.lanes, &mut self.rng);
            if decision.is_lane_change() {
                let v = &mut self.vehicles[i];
                if let Some(target) = decision.target_lane(v.lane, self.config.lanes) {
                    v.lane_change = Some(LaneChange { target, elapsed: 0.0 });
                }
            }
        }
        self.time_steps += 1;
    }

    /// Emergency-braking guard: lowers planned speeds until no vehicle would
    /// end the step overlapping the vehicle ahead of it in any occupied lane.
    fn enforce_no_overlap(&self, speeds: &mut [f64]) {
        let n = self.vehicles.len();
        let leaders: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let me = &self.vehicles[i];
                me.occupied_lanes()
                    .filter_map(|lane| leader_in_lane(&self.vehicles, lane, me.position, i))
                    .map(|l| (l.index, l.gap))
                    .collect()
            })
            .collect();
        for _ in 0..=n {
            let mut changed = false;
            for i in 0..n {
                for &(j, gap) in &leaders[i] {
                    let cap = (gap / SIM_DT + speeds[j]).max(0.0);
                    if speeds[i] > cap {
                        speeds[i] = cap;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Smallest bumper-to-bumper gap between vehicles sharing a lane.
    pub fn min_body_gap(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.vehicles.len() {
            let me = &self.vehicles[i];
            for lane in me.occupied_lanes() {
                if let Some(l) = leader_in_lane(&self.vehicles, lane, me.position, i) {
                    min = min.min(l.gap);
                }
            }
        }
        min
    }

    /// `(time step, vehicle id, position, lateral lane, speed)` rows.
    pub fn trajectory_rows(&self) -> impl Iterator<Item = (u64, u32, f64, f64, f64)> + '_ {
        self.vehicles
            .iter()
            .map(|v| (self.time_steps, v.id, v.position, v.lateral(), v.speed))
    }

    /// Forward distance from the ego to vehicle `idx`.
    pub fn distance_ahead(&self, idx: usize) -> f64 {
        forward_distance(self.ego().position, self.vehicles[idx].position)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spawn_is_deterministic() {
        let a = Simulator::spawn(ScenarioConfig::new(30, 3, 7)).unwrap();
        let b = Simulator::spawn(ScenarioConfig::new(30, 3, 7)).unwrap();
        assert_eq!(a.vehicles(), b.vehicles());
        assert_eq!(a.vehicles().len(), 31);
        assert!(a.min_body_gap() >= MIN_GAP - 1e-9);
        let c = Simulator::spawn(ScenarioConfig::new(30, 3, 8)).unwrap();
        assert_ne!(a.vehicles(), c.vehicles());
    }

    #[test]
    fn over_capacity_is_error() {
        let slots = ScenarioConfig::slots_per_lane() * 3;
        assert!(matches!(
            Simulator::spawn(ScenarioConfig::new(slots, 3, 0)),
            Err(SimError::CapacityExceeded { .. })
        ));
        assert!(Simulator::spawn(ScenarioConfig::new(slots - 1, 3, 0)).is_ok());
    }

    #[test]
    fn keep_on_empty_road_at_desired_speed() {
        let mut sim = Simulator::spawn(ScenarioConfig::new(0, 3, 1)).unwrap();
        sim.vehicles[0].speed = V_DESIRED;
        let out = sim.step_agent_action(Action::Keep);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn lane_change_completes_within_one_action() {
        let mut sim = Simulator::spawn(ScenarioConfig::new(0, 3, 1)).unwrap();
        sim.vehicles[0].lane = 1;
        let out = sim.step_agent_action(Action::Left);
        assert_eq!(out.effective, Action::Left);
        assert_eq!(sim.ego().lane, 0);
        assert!(sim.ego().lane_change.is_none());
        assert!((out.reward - (1.0 - (V_DESIRED - sim.ego().speed) / V_DESIRED - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn second_change_rejected_mid_manoeuvre() {
        let mut sim = Simulator::spawn(ScenarioConfig::new(0, 3, 1)).unwrap();
        sim.vehicles[0].lane = 1;
        assert_eq!(sim.begin_agent_action(Action::Left), Action::Left);
        sim.sim_step();
        assert!(sim.ego().lane_change.is_some());
        assert_eq!(sim.begin_agent_action(Action::Right), Action::Keep);
    }
}
