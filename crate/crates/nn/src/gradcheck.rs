//! Finite-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{Module, ParameterSet};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Random coordinates checked in addition to one per tensor.
    pub samples: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
    /// Relative disagreement between differences at `step` and `step / 10`
    /// above which the coordinate is treated as straddling a ReLU kink; the
    /// step then keeps shrinking (down to `step / 1000`) until two
    /// successive estimates agree.
    pub kink_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples: 64,
            floor: 1e-6,
            seed: 0,
            kink_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, f64, f64)>,
    pub checked: usize,
    /// Coordinates re-measured with the small step.
    pub kinks: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn nudge(module: &mut dyn Module<f64>, mut index: usize, delta: f64) {
    let mut done = false;
    module.visit_params_mut("", &mut |_, t| {
        if done {
            return;
        }
        if index < t.len() {
            t.data_mut()[index] += delta;
            done = true;
        } else {
            index -= t.len();
        }
    });
}

/// Compares `analytic` gradients of `module` against central differences of
/// `loss`. Checks one coordinate per tensor plus `config.samples` random
/// coordinates and returns the worst relative error.
pub fn grad_check<M, L>(
    module: &mut M,
    analytic: &ParameterSet<f64>,
    mut loss: L,
    config: &GradCheckConfig,
) -> GradCheckReport
where
    M: Module<f64>,
    L: FnMut(&M) -> f64,
{
    let total = analytic.total_len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut coords: Vec<usize> = sample(&mut rng, total, config.samples.min(total)).into_vec();
    let mut offset = 0;
    for (_, t) in analytic.iter() {
        coords.push(offset + t.len() / 2);
        offset += t.len();
    }
    coords.sort_unstable();
    coords.dedup();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: coords.len(),
        kinks: 0,
    };
    let mut central = |module: &mut M, i: usize, h: f64| {
        nudge(module, i, h);
        let up = loss(module);
        nudge(module, i, -2.0 * h);
        let down = loss(module);
        nudge(module, i, h);
        (up - down) / (2.0 * h)
    };
    for &i in &coords {
        let mut h = config.step;
        let mut numeric = central(module, i, h);
        for refinement in 0..3 {
            h *= 0.1;
            let fine = central(module, i, h);
            let agree = relative_error(numeric, fine, config.floor) <= config.kink_tolerance;
            numeric = fine;
            if agree {
                break;
            }
            if refinement == 0 {
                report.kinks += 1;
            }
        }
        let (name, a) = analytic.flat_get(i).expect("coordinate in range");
        let err = relative_error(a, numeric, config.floor);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name.to_string(), a, numeric));
        }
    }
    report
}
